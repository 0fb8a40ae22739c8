//! Attributed graphs, node homophily, disadvantaged-group construction, and
//! the on-disk / synthetic graph sources.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which evaluation split a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Incoming-edge adjacency in compressed sparse row form.
///
/// Edge `e` in `offsets[v]..offsets[v + 1]` is the directed edge
/// `sources[e] -> v`. Sources within one row are sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Csr {
    /// Builds the in-edge CSR from a deduplicated directed edge list.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; num_nodes + 1];
        for &(_, v) in edges {
            counts[v + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut sources = vec![0usize; edges.len()];
        for &(u, v) in edges {
            sources[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..num_nodes {
            sources[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Csr { offsets, sources }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    /// Range of edge indices whose target is `v`.
    pub fn edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.sources[self.edge_range(v)]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn source(&self, e: usize) -> usize {
        self.sources[e]
    }

    /// Iterates `(edge index, source, target)` in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |v| self.edge_range(v).map(move |e| (e, self.sources[e], v)))
    }
}

/// The global attributed graph `G = (V, E, X, Y)` with its splits.
#[derive(Clone, Debug)]
pub struct AttributedGraph {
    num_classes: usize,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    splits: Vec<Split>,
    edges: Vec<(usize, usize)>,
    adjacency: Csr,
}

impl AttributedGraph {
    /// Validates and assembles a graph. Duplicate edges are collapsed and
    /// self-loops dropped; message passing adds the self term itself.
    pub fn new(
        num_classes: usize,
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        splits: Vec<Split>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || splits.len() != n {
            return Err(Error::Contract(format!(
                "features have {n} rows but {} labels and {} splits were given",
                labels.len(),
                splits.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        for (v, (label, split)) in labels.iter().zip(&splits).enumerate() {
            match label {
                Some(c) if *c >= num_classes => {
                    return Err(Error::Contract(format!(
                        "node {v} has label {c} but there are {num_classes} classes"
                    )))
                }
                None if *split != Split::Train => {
                    return Err(Error::Contract(format!(
                        "{} node {v} must carry a label",
                        split.as_str()
                    )))
                }
                _ => {}
            }
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u != v {
                set.insert((u, v));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let adjacency = Csr::from_edges(n, &edges);
        Ok(AttributedGraph {
            num_classes,
            features,
            labels,
            splits,
            edges,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split(&self, v: usize) -> Split {
        self.splits[v]
    }

    /// Directed edges `(u, v)`, sorted and deduplicated.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    /// Training nodes with a known label (`V^L`).
    pub fn is_train_labeled(&self, v: usize) -> bool {
        self.splits[v] == Split::Train && self.labels[v].is_some()
    }

    pub fn nodes_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(move |&v| self.splits[v] == split)
    }

    /// Labeled-training-node count per class.
    pub fn train_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for v in 0..self.num_nodes() {
            if self.is_train_labeled(v) {
                counts[self.labels[v].unwrap()] += 1;
            }
        }
        counts
    }

    /// Neighbors of every node in the symmetrized graph, sorted.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Node-level homophily `phi(v)` over incoming neighbors.
    ///
    /// Neighbors without a label are ignored. Returns `None` when `v` is
    /// unlabeled or has no labeled neighbor.
    pub fn node_homophily(&self, v: usize) -> Option<f64> {
        let own = self.labels[v]?;
        let mut labeled = 0usize;
        let mut same = 0usize;
        for &u in self.adjacency.in_neighbors(v) {
            if let Some(c) = self.labels[u] {
                labeled += 1;
                if c == own {
                    same += 1;
                }
            }
        }
        (labeled > 0).then(|| same as f64 / labeled as f64)
    }

    /// Writes `nodes.tsv` and `edges.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut nodes = String::new();
        for v in 0..self.num_nodes() {
            let label = self.labels[v].map_or(-1, |c| c as i64);
            let _ = write!(nodes, "{v}\t{label}\t{}\t", self.splits[v].as_str());
            for (j, x) in self.features.row(v).iter().enumerate() {
                if j > 0 {
                    nodes.push(',');
                }
                let _ = write!(nodes, "{x}");
            }
            nodes.push('\n');
        }
        let mut edges = String::new();
        for &(u, v) in &self.edges {
            let _ = writeln!(edges, "{u}\t{v}");
        }
        let np = dir.join("nodes.tsv");
        fs::write(&np, nodes).map_err(|e| Error::io(&np, e))?;
        let ep = dir.join("edges.tsv");
        fs::write(&ep, edges).map_err(|e| Error::io(&ep, e))?;
        Ok(())
    }
}

/// Reads `nodes.tsv` and `edges.tsv` from `dir`.
///
/// The number of classes is one more than the largest label seen.
pub fn load_graph(dir: &Path) -> Result<AttributedGraph> {
    let nodes_path = dir.join("nodes.tsv");
    let edges_path = dir.join("edges.tsv");
    let nodes_text = fs::read_to_string(&nodes_path).map_err(|e| Error::io(&nodes_path, e))?;
    let edges_text = fs::read_to_string(&edges_path).map_err(|e| Error::io(&edges_path, e))?;

    let parse_err = |path: &PathBuf, line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };

    let mut rows: Vec<(usize, Option<usize>, Split, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, raw) in nodes_text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                &nodes_path,
                line_no,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(&nodes_path, line_no, format!("bad node id {:?}", fields[0])))?;
        let label: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(&nodes_path, line_no, format!("bad label {:?}", fields[1])))?;
        let label = match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_err(&nodes_path, line_no, format!("bad label {l}"))),
        };
        let split = Split::parse(fields[2])
            .ok_or_else(|| parse_err(&nodes_path, line_no, format!("bad split {:?}", fields[2])))?;
        let feats = fields[3]
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(&nodes_path, line_no, format!("bad feature value: {e}")))?;
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(parse_err(
                    &nodes_path,
                    line_no,
                    format!("expected {d} features, found {}", feats.len()),
                ))
            }
            _ => {}
        }
        rows.push((id, label, split, feats));
    }

    let n = rows.len();
    let d = dim.unwrap_or(0);
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = vec![None; n];
    let mut splits = vec![Split::Train; n];
    let mut seen = vec![false; n];
    for (row_index, (id, label, split, feats)) in rows.into_iter().enumerate() {
        if id >= n || seen[id] {
            return Err(Error::Contract(format!(
                "{}: node ids must be unique and cover 0..{n} (node {id}, row {})",
                nodes_path.display(),
                row_index + 1
            )));
        }
        seen[id] = true;
        labels[id] = label;
        splits[id] = split;
        for (j, x) in feats.into_iter().enumerate() {
            features[[id, j]] = x;
        }
    }
    let num_classes = labels.iter().flatten().max().map_or(1, |&c| c + 1);

    let mut edges = Vec::new();
    for (i, raw) in edges_text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(
                &edges_path,
                line_no,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let mut ends = [0usize; 2];
        for (slot, f) in ends.iter_mut().zip(&fields) {
            *slot = f
                .trim()
                .parse()
                .map_err(|_| parse_err(&edges_path, line_no, format!("bad node id {f:?}")))?;
            if *slot >= n {
                return Err(Error::DanglingEndpoint {
                    path: edges_path.clone(),
                    line: line_no,
                    endpoint: *slot,
                });
            }
        }
        edges.push((ends[0], ends[1]));
    }
    AttributedGraph::new(num_classes, features, labels, splits, edges)
}

/// Extra connection probability between one pair of class blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOverride {
    pub a: usize,
    pub b: usize,
    pub prob: f64,
}

/// Parameters of the stochastic-block-model generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_nodes: usize,
    /// Relative class sizes; normalized internally.
    pub class_priors: Vec<f64>,
    pub intra_prob: f64,
    pub inter_prob: f64,
    /// Replaces the block probability for specific class pairs (symmetric).
    pub block_overrides: Vec<BlockOverride>,
    pub feature_dim: usize,
    /// Scale of the per-class feature means.
    pub mean_scale: f64,
    /// Standard deviation of the isotropic feature noise.
    pub feature_noise: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Seed of the generator; independent of the training seeds.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 1000,
            class_priors: vec![0.4, 0.3, 0.25, 0.05],
            intra_prob: 0.02,
            inter_prob: 0.003,
            block_overrides: Vec::new(),
            feature_dim: 16,
            mean_scale: 1.0,
            feature_noise: 1.0,
            train_ratio: 0.2,
            val_ratio: 0.4,
            test_ratio: 0.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.class_priors.len()
    }

    fn block_prob(&self, a: usize, b: usize) -> f64 {
        self.block_overrides
            .iter()
            .rev()
            .find(|o| (o.a == a && o.b == b) || (o.a == b && o.b == a))
            .map(|o| o.prob)
            .unwrap_or(if a == b {
                self.intra_prob
            } else {
                self.inter_prob
            })
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is outside [0, 1]")))
            }
        };
        unit("intra_prob", self.intra_prob)?;
        unit("inter_prob", self.inter_prob)?;
        for o in &self.block_overrides {
            unit("block override prob", o.prob)?;
            if o.a >= self.num_classes() || o.b >= self.num_classes() {
                return Err(Error::Config(format!(
                    "block override ({}, {}) names a class outside 0..{}",
                    o.a,
                    o.b,
                    self.num_classes()
                )));
            }
        }
        if self.class_priors.is_empty()
            || self.class_priors.iter().any(|&p| !p.is_finite() || p < 0.0)
            || self.class_priors.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "class_priors must be non-negative with a positive sum".into(),
            ));
        }
        for (name, r) in [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ] {
            unit(name, r)?;
        }
        if (self.train_ratio + self.val_ratio + self.test_ratio - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        if self.num_nodes == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "num_nodes and feature_dim must be positive".into(),
            ));
        }
        if self.feature_noise.is_nan() || self.feature_noise < 0.0 {
            return Err(Error::Config("feature_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Splits `total` into integer parts proportional to `weights`
/// (largest-remainder rounding, ties to the lower index).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        parts[i] += 1;
    }
    parts
}

/// Samples a stochastic-block-model graph with class-conditional Gaussian
/// features. Class sizes and per-class split sizes follow the configured
/// proportions exactly (up to rounding); membership is shuffled by `seed`.
pub fn synth_graph(config: &SynthConfig) -> Result<AttributedGraph> {
    config.validate()?;
    let n = config.num_nodes;
    let c = config.num_classes();
    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut labels: Vec<usize> = apportion(n, &config.class_priors)
        .into_iter()
        .enumerate()
        .flat_map(|(class, count)| std::iter::repeat_n(class, count))
        .collect();
    labels.shuffle(&mut rng);

    // splits are stratified by class so every split keeps the class priors
    let ratios = [config.train_ratio, config.val_ratio, config.test_ratio];
    let mut splits = vec![Split::Train; n];
    for class in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&v| labels[v] == class).collect();
        members.shuffle(&mut rng);
        let mut rest = members.as_slice();
        for (split, count) in [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .zip(apportion(members.len(), &ratios))
        {
            let (head, tail) = rest.split_at(count);
            for &v in head {
                splits[v] = split;
            }
            rest = tail;
        }
    }

    let means = Array2::from_shape_fn((c, d), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * config.mean_scale
    });
    let features = Array2::from_shape_fn((n, d), |(v, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        means[[labels[v], j]] + config.feature_noise * z
    });

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = config.block_prob(labels[u], labels[v]);
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    AttributedGraph::new(
        c,
        features,
        labels.into_iter().map(Some).collect(),
        splits,
        edges,
    )
}

/// Disadvantaged node groups over the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub q: f64,
    pub tau_h: f64,
    /// Minority classes, ascending by class index.
    pub minority_classes: Vec<usize>,
    pub minority_nodes: Vec<usize>,
    pub hete_nodes: Vec<usize>,
    pub hete_min_nodes: Vec<usize>,
    is_minority_class: Vec<bool>,
}

impl GroupAssignment {
    pub fn is_minority_class(&self, class: usize) -> bool {
        self.is_minority_class.get(class).copied().unwrap_or(false)
    }
}

/// Minority classes: the shortest prefix of classes sorted ascending by
/// labeled count (ties by class index) whose summed count reaches
/// `q` times the total.
pub fn minority_classes(counts: &[usize], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("q = {q} must lie in (0, 1)")));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("no labeled training nodes".into()));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&c| (counts[c], c));
    let target = q * total as f64;
    let mut mass = 0usize;
    let mut chosen = Vec::new();
    for c in order {
        chosen.push(c);
        mass += counts[c];
        if mass as f64 >= target {
            break;
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Builds the minority, heterophilous and intersection test-node groups.
pub fn build_groups(graph: &AttributedGraph, q: f64, tau_h: f64) -> Result<GroupAssignment> {
    if !(0.0..=1.0).contains(&tau_h) {
        return Err(Error::Config(format!("tau_h = {tau_h} must lie in [0, 1]")));
    }
    let minority = minority_classes(&graph.train_label_counts(), q)?;
    let mut is_minority_class = vec![false; graph.num_classes()];
    for &c in &minority {
        is_minority_class[c] = true;
    }
    let mut minority_nodes = Vec::new();
    let mut hete_nodes = Vec::new();
    let mut hete_min_nodes = Vec::new();
    for v in graph.nodes_in(Split::Test) {
        let is_min = graph.label(v).is_some_and(|c| is_minority_class[c]);
        let is_hete = graph.node_homophily(v).is_some_and(|phi| phi <= tau_h);
        if is_min {
            minority_nodes.push(v);
        }
        if is_hete {
            hete_nodes.push(v);
        }
        if is_min && is_hete {
            hete_min_nodes.push(v);
        }
    }
    Ok(GroupAssignment {
        q,
        tau_h,
        minority_classes: minority,
        minority_nodes,
        hete_nodes,
        hete_min_nodes,
        is_minority_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn star(center_label: usize, leaf_labels: &[Option<usize>]) -> AttributedGraph {
        let n = leaf_labels.len() + 1;
        let mut labels = vec![Some(center_label)];
        labels.extend_from_slice(leaf_labels);
        let edges = (1..n).flat_map(|u| [(u, 0), (0, u)]);
        AttributedGraph::new(
            4,
            Array2::zeros((n, 1)),
            labels,
            vec![Split::Train; n],
            edges,
        )
        .unwrap()
    }

    #[test]
    fn homophily_identity_cases() {
        let g = star(0, &[Some(0); 4]);
        assert_eq!(g.node_homophily(0), Some(1.0));
        let g = star(0, &[Some(1), Some(2), Some(3), Some(1)]);
        assert_eq!(g.node_homophily(0), Some(0.0));
        let g = star(0, &[Some(0), Some(0), Some(1), Some(2)]);
        assert_eq!(g.node_homophily(0), Some(0.5));
    }

    #[test]
    fn homophily_ignores_unlabeled_neighbors() {
        let g = star(0, &[Some(0), None, Some(1), None]);
        assert_eq!(g.node_homophily(0), Some(0.5));
        let g = star(0, &[None, None]);
        assert_eq!(g.node_homophily(0), None);
        let g = star(0, &[Some(0)]);
        let g2 = AttributedGraph::new(
            4,
            Array2::zeros((2, 1)),
            vec![None, Some(0)],
            vec![Split::Train; 2],
            g.edges().to_vec(),
        )
        .unwrap();
        assert_eq!(g2.node_homophily(0), None);
    }

    /// Independent oracle: among all class subsets that reach the mass and
    /// are closed under "smaller class" (ascending count, ties by index),
    /// pick the one of minimum cardinality.
    fn minority_oracle(counts: &[usize], q: f64) -> Vec<usize> {
        let c = counts.len();
        let total: usize = counts.iter().sum();
        let smaller = |a: usize, b: usize| (counts[a], a) < (counts[b], b);
        let mut best: Option<Vec<usize>> = None;
        for mask in 1u32..(1 << c) {
            let set: Vec<usize> = (0..c).filter(|&i| mask & (1 << i) != 0).collect();
            let mass: usize = set.iter().map(|&i| counts[i]).sum();
            if (mass as f64) < q * total as f64 {
                continue;
            }
            let closed = set
                .iter()
                .all(|&a| (0..c).all(|b| !smaller(b, a) || set.contains(&b)));
            if closed && best.as_ref().is_none_or(|s| set.len() < s.len()) {
                best = Some(set);
            }
        }
        best.unwrap()
    }

    #[test]
    fn minority_examples() {
        assert_eq!(minority_classes(&[50, 30, 15, 5], 0.2).unwrap(), vec![2, 3]);
        assert_eq!(minority_oracle(&[50, 30, 15, 5], 0.2), vec![2, 3]);
        assert_eq!(minority_classes(&[10, 10], 0.5).unwrap(), vec![0]);
        assert_eq!(minority_oracle(&[10, 10], 0.5), vec![0]);
    }

    #[test]
    fn minority_rejects_bad_q() {
        assert!(matches!(
            minority_classes(&[1, 2], 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            minority_classes(&[1, 2], 1.0),
            Err(Error::Config(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn minority_matches_oracle(counts in proptest::collection::vec(0usize..60, 1..7), q in 0.01f64..0.99) {
            proptest::prop_assume!(counts.iter().sum::<usize>() > 0);
            let chosen = minority_classes(&counts, q).unwrap();
            proptest::prop_assert_eq!(&chosen, &minority_oracle(&counts, q));
            let total: usize = counts.iter().sum();
            let mass: usize = chosen.iter().map(|&c| counts[c]).sum();
            proptest::prop_assert!(mass as f64 >= q * total as f64);
            // Dropping the largest chosen class falls below the target.
            let largest = *chosen.iter().max_by_key(|&&c| (counts[c], c)).unwrap();
            proptest::prop_assert!(((mass - counts[largest]) as f64) < q * total as f64);
        }
    }

    #[test]
    fn hete_threshold_is_inclusive() {
        // Test node 0 with neighbors (0, 0, 1, 2): phi = 0.5.
        let labels = vec![Some(0), Some(0), Some(0), Some(1), Some(2), Some(3)];
        let splits = vec![
            Split::Test,
            Split::Train,
            Split::Train,
            Split::Train,
            Split::Train,
            Split::Train,
        ];
        let edges = (1..5).flat_map(|u| [(u, 0), (0, u)]);
        let g = AttributedGraph::new(4, Array2::zeros((6, 1)), labels, splits, edges).unwrap();
        let groups = build_groups(&g, 0.2, 0.5).unwrap();
        assert_eq!(groups.hete_nodes, vec![0]);
        let groups = build_groups(&g, 0.2, 0.49).unwrap();
        assert!(groups.hete_nodes.is_empty());
    }

    #[test]
    fn graph_dedups_and_drops_self_loops() {
        let g = AttributedGraph::new(
            1,
            Array2::zeros((2, 1)),
            vec![Some(0), Some(0)],
            vec![Split::Train; 2],
            [(0, 1), (0, 1), (1, 1)],
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn graph_requires_labels_on_eval_nodes() {
        let err = AttributedGraph::new(1, Array2::zeros((1, 1)), vec![None], vec![Split::Test], []);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn synth_pure_homophily() {
        let cfg = SynthConfig {
            num_nodes: 200,
            class_priors: vec![0.5, 0.3, 0.2],
            intra_prob: 0.2,
            inter_prob: 0.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let g = synth_graph(&cfg).unwrap();
        assert!(!g.edges().is_empty());
        for &(u, v) in g.edges() {
            assert_eq!(g.label(u), g.label(v));
        }
        for v in 0..g.num_nodes() {
            if let Some(phi) = g.node_homophily(v) {
                assert_eq!(phi, 1.0);
            }
        }
    }

    #[test]
    fn synth_priors_and_splits() {
        let cfg = SynthConfig {
            num_nodes: 1000,
            class_priors: vec![0.95, 0.05],
            train_ratio: 0.2,
            val_ratio: 0.4,
            test_ratio: 0.4,
            ..SynthConfig::default()
        };
        let g = synth_graph(&cfg).unwrap();
        let minority = g.labels().iter().filter(|l| **l == Some(1)).count();
        assert!((minority as i64 - 50).abs() <= 1, "{minority}");
        let train = g.nodes_in(Split::Train).count() as i64;
        let val = g.nodes_in(Split::Val).count() as i64;
        let test = g.nodes_in(Split::Test).count() as i64;
        assert!((train - 200).abs() <= 1 && (val - 400).abs() <= 1 && (test - 400).abs() <= 1);
        let minority_train = g
            .nodes_in(Split::Train)
            .filter(|&v| g.label(v) == Some(1))
            .count();
        assert_eq!(minority_train, 10);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            num_nodes: 150,
            ..SynthConfig::default()
        };
        let a = synth_graph(&cfg).unwrap();
        let b = synth_graph(&cfg).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.splits(), b.splits());
        assert!(a
            .features()
            .iter()
            .zip(b.features().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn synth_rejects_bad_probability() {
        let cfg = SynthConfig {
            intra_prob: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_graph(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("nodes.tsv"),
            "0\t0\ttrain\t1.5,2\n1\t-1\ttrain\t0,0\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t1\n0\t1\n").unwrap();
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.label(1), None);
        assert_eq!(g.features()[[0, 0]], 1.5);

        fs::write(
            dir.path().join("nodes.tsv"),
            "0\t0\ttrain\t1,2\n1\t0\ttrain\t0\n",
        )
        .unwrap();
        match load_graph(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(
            dir.path().join("nodes.tsv"),
            "0\t0\ttrain\t1\n1\t0\ttrain\t0\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t7\n").unwrap();
        match load_graph(dir.path()) {
            Err(Error::DanglingEndpoint { line, endpoint, .. }) => {
                assert_eq!((line, endpoint), (2, 7))
            }
            other => panic!("expected dangling endpoint, got {other:?}"),
        }
    }

    #[test]
    fn save_then_load_preserves_graph() {
        let cfg = SynthConfig {
            num_nodes: 60,
            ..SynthConfig::default()
        };
        let g = synth_graph(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path()).unwrap();
        let h = load_graph(dir.path()).unwrap();
        assert_eq!(g.edges(), h.edges());
        assert_eq!(g.labels(), h.labels());
        assert_eq!(g.features(), h.features());
    }
}
