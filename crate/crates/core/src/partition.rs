//! Subgraph-FL data distribution: Louvain communities, merged or split to the
//! client count, then cut into client-local induced subgraphs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Csr, Split};

/// Community assignment of every node; ids are contiguous from zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    community_of: Vec<usize>,
    num_communities: usize,
}

impl Partition {
    /// Relabels arbitrary ids to `0..k` in order of first appearance.
    pub fn from_assignment(raw: &[usize]) -> Self {
        let mut remap = HashMap::new();
        let community_of = raw
            .iter()
            .map(|c| {
                let next = remap.len();
                *remap.entry(*c).or_insert(next)
            })
            .collect();
        Partition {
            community_of,
            num_communities: remap.len(),
        }
    }

    pub fn community_of(&self) -> &[usize] {
        &self.community_of
    }

    pub fn num_communities(&self) -> usize {
        self.num_communities
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_communities];
        for (v, &c) in self.community_of.iter().enumerate() {
            groups[c].push(v);
        }
        groups
    }

    /// `node_id<TAB>client_id` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (v, c) in self.community_of.iter().enumerate() {
            let _ = writeln!(out, "{v}\t{c}");
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Undirected weighted graph used by the Louvain levels. Self-loop weight
/// counts internal edges once; a node's degree counts it twice.
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    degree: Vec<f64>,
    total: f64,
}

impl LevelGraph {
    fn from_graph(graph: &AttributedGraph) -> Self {
        let n = graph.num_nodes();
        let neighbors = graph.undirected_neighbors();
        let adj: Vec<Vec<(usize, f64)>> = neighbors
            .into_iter()
            .map(|list| list.into_iter().map(|u| (u, 1.0)).collect())
            .collect();
        Self::assemble(adj, vec![0.0; n])
    }

    fn assemble(adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&loops)
            .map(|(list, l)| list.iter().map(|(_, w)| w).sum::<f64>() + 2.0 * l)
            .collect();
        let total = degree.iter().sum::<f64>() / 2.0;
        LevelGraph {
            adj,
            loops,
            degree,
            total,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// One local-moving phase. Returns whether any node moved.
    fn move_nodes(&self, community: &mut [usize], rng: &mut ChaCha8Rng) -> bool {
        let n = self.len();
        let two_m = 2.0 * self.total;
        let mut tot = vec![0.0; n];
        for v in 0..n {
            tot[community[v]] += self.degree[v];
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut moved_any = false;
        let mut link: HashMap<usize, f64> = HashMap::new();
        loop {
            let mut moved = false;
            for &v in &order {
                let own = community[v];
                let k = self.degree[v];
                link.clear();
                for &(u, w) in &self.adj[v] {
                    *link.entry(community[u]).or_insert(0.0) += w;
                }
                tot[own] -= k;
                let gain = |c: usize, tot: &[f64], link: &HashMap<usize, f64>| {
                    link.get(&c).copied().unwrap_or(0.0) - tot[c] * k / two_m
                };
                let stay = gain(own, &tot, &link);
                let mut best = own;
                let mut best_gain = stay;
                let mut candidates: Vec<usize> = link.keys().copied().collect();
                candidates.sort_unstable();
                for c in candidates {
                    let g = gain(c, &tot, &link);
                    if g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += k;
                if best != own {
                    community[v] = best;
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        moved_any
    }

    /// Collapses each community into one node.
    fn coarsen(&self, community: &[usize], count: usize) -> LevelGraph {
        let mut loops = vec![0.0; count];
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
        for v in 0..self.len() {
            let cv = community[v];
            loops[cv] += self.loops[v];
            for &(u, w) in &self.adj[v] {
                let cu = community[u];
                if cu == cv {
                    // Each internal edge is seen from both endpoints.
                    loops[cv] += w / 2.0;
                } else {
                    *maps[cv].entry(cu).or_insert(0.0) += w;
                }
            }
        }
        let adj = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        LevelGraph::assemble(adj, loops)
    }
}

/// Two-phase Louvain modularity maximization on the symmetrized graph with
/// unit weights and resolution 1. Node visit order is shuffled by `seed`.
pub fn louvain(graph: &AttributedGraph, seed: u64) -> Partition {
    let n = graph.num_nodes();
    let mut level = LevelGraph::from_graph(graph);
    let mut assignment: Vec<usize> = (0..n).collect();
    if level.total == 0.0 {
        return Partition::from_assignment(&assignment);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4c6f_7576_6169_6e00);
    loop {
        let mut community: Vec<usize> = (0..level.len()).collect();
        if !level.move_nodes(&mut community, &mut rng) {
            break;
        }
        let compact = Partition::from_assignment(&community);
        for a in assignment.iter_mut() {
            *a = compact.community_of[*a];
        }
        if compact.num_communities == level.len() {
            break;
        }
        level = level.coarsen(&compact.community_of, compact.num_communities);
    }
    Partition::from_assignment(&assignment)
}

/// Newman modularity of `partition` on the symmetrized, unit-weight graph.
/// `None` when the graph has no edges.
pub fn modularity(graph: &AttributedGraph, partition: &Partition) -> Option<f64> {
    let neighbors = graph.undirected_neighbors();
    let m = neighbors.iter().map(Vec::len).sum::<usize>() as f64 / 2.0;
    if m == 0.0 {
        return None;
    }
    let k = partition.num_communities();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for (v, list) in neighbors.iter().enumerate() {
        let cv = partition.community_of[v];
        degree[cv] += list.len() as f64;
        for &u in list {
            if u > v && partition.community_of[u] == cv {
                internal[cv] += 1.0;
            }
        }
    }
    Some(
        internal
            .iter()
            .zip(&degree)
            .map(|(e, d)| e / m - (d / (2.0 * m)).powi(2))
            .sum(),
    )
}

/// One client's induced subgraph. Cross-client edges are dropped.
#[derive(Clone, Debug)]
pub struct ClientSubgraph {
    pub id: usize,
    /// Global node ids, ascending; local index `i` is `nodes[i]`.
    pub nodes: Vec<usize>,
    pub features: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    pub splits: Vec<Split>,
    pub adjacency: Csr,
}

impl ClientSubgraph {
    pub fn extract(graph: &AttributedGraph, id: usize, mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        let mut local = vec![usize::MAX; graph.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let features = graph.features().select(ndarray::Axis(0), &nodes);
        let labels = nodes.iter().map(|&v| graph.label(v)).collect();
        let splits = nodes.iter().map(|&v| graph.split(v)).collect();
        let edges: Vec<(usize, usize)> = graph
            .edges()
            .iter()
            .filter(|(u, v)| local[*u] != usize::MAX && local[*v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        let adjacency = Csr::from_edges(nodes.len(), &edges);
        ClientSubgraph {
            id,
            nodes,
            features,
            labels,
            splits,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_train_labeled(&self, i: usize) -> bool {
        self.splits[i] == Split::Train && self.labels[i].is_some()
    }

    /// Labels visible to local training: known labels of training nodes.
    pub fn train_targets(&self) -> Vec<Option<usize>> {
        (0..self.num_nodes())
            .map(|i| self.labels[i].filter(|_| self.splits[i] == Split::Train))
            .collect()
    }

    /// `N_m`, the number of labeled training nodes.
    pub fn num_train_labeled(&self) -> usize {
        (0..self.num_nodes())
            .filter(|&i| self.is_train_labeled(i))
            .count()
    }
}

/// Splits `members` in two halves along a BFS order from a seeded start node.
fn balanced_cut(
    members: &[usize],
    neighbors: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let inside: std::collections::HashSet<usize> = members.iter().copied().collect();
    let mut visited = std::collections::HashSet::new();
    let mut order = Vec::with_capacity(members.len());
    let start = members[rng.random_range(0..members.len())];
    let mut roots = std::iter::once(start).chain(members.iter().copied());
    while order.len() < members.len() {
        let root = roots
            .find(|r| !visited.contains(r))
            .expect("unvisited member");
        visited.insert(root);
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in &neighbors[v] {
                if inside.contains(&u) && visited.insert(u) {
                    queue.push_back(u);
                }
            }
        }
    }
    let half = order.len() / 2;
    let second = order.split_off(half);
    (order, second)
}

/// Client node sets: communities are merged (two smallest first) or split
/// (largest first, by a seeded balanced cut) until exactly `k` remain.
/// Client ids follow the lowest community id each client absorbed.
pub fn client_node_sets(
    graph: &AttributedGraph,
    partition: &Partition,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Config("client count K must be at least 1".into()));
    }
    if k > graph.num_nodes() {
        return Err(Error::Config(format!(
            "client count K = {k} exceeds the {} nodes",
            graph.num_nodes()
        )));
    }
    // (ordering key, members); the key keeps the original community order.
    let mut sets: Vec<(usize, Vec<usize>)> = partition.members().into_iter().enumerate().collect();
    while sets.len() > k {
        sets.sort_by_key(|(key, m)| (m.len(), *key));
        let (ka, mut a) = sets.remove(0);
        let (kb, b) = sets.remove(0);
        a.extend(b);
        a.sort_unstable();
        sets.push((ka.min(kb), a));
    }
    if sets.len() < k {
        let neighbors = graph.undirected_neighbors();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5370_6c69_7400);
        let mut next_key = partition.num_communities();
        while sets.len() < k {
            let (idx, _) = sets
                .iter()
                .enumerate()
                .max_by_key(|(_, (key, m))| (m.len(), std::cmp::Reverse(*key)))
                .unwrap();
            let (key, members) = sets.remove(idx);
            let (mut a, mut b) = balanced_cut(&members, &neighbors, &mut rng);
            a.sort_unstable();
            b.sort_unstable();
            sets.push((key, a));
            sets.push((next_key, b));
            next_key += 1;
        }
    }
    sets.sort_by_key(|(key, _)| *key);
    Ok(sets.into_iter().map(|(_, m)| m).collect())
}

/// Builds the `k` client subgraphs from a community partition.
pub fn assemble_clients(
    graph: &AttributedGraph,
    partition: &Partition,
    k: usize,
    seed: u64,
) -> Result<Vec<ClientSubgraph>> {
    Ok(client_node_sets(graph, partition, k, seed)?
        .into_iter()
        .enumerate()
        .map(|(id, nodes)| ClientSubgraph::extract(graph, id, nodes))
        .collect())
}

/// The partition induced by a list of client subgraphs.
pub fn client_partition(num_nodes: usize, clients: &[ClientSubgraph]) -> Partition {
    let mut raw = vec![0; num_nodes];
    for c in clients {
        for &v in &c.nodes {
            raw[v] = c.id;
        }
    }
    Partition {
        community_of: raw,
        num_communities: clients.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_from_undirected(n: usize, pairs: &[(usize, usize)]) -> AttributedGraph {
        AttributedGraph::new(
            1,
            Array2::zeros((n, 1)),
            vec![Some(0); n],
            vec![Split::Train; n],
            pairs.iter().flat_map(|&(u, v)| [(u, v), (v, u)]),
        )
        .unwrap()
    }

    fn clique_pairs(nodes: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                out.push((a, b));
            }
        }
        out
    }

    #[test]
    fn modularity_closed_forms() {
        let tri = graph_from_undirected(3, &[(0, 1), (1, 2), (0, 2)]);
        let whole = Partition::from_assignment(&[0, 0, 0]);
        assert!(modularity(&tri, &whole).unwrap().abs() < 1e-15);
        let singles = Partition::from_assignment(&[0, 1, 2]);
        assert!((modularity(&tri, &singles).unwrap() + 1.0 / 3.0).abs() < 1e-15);

        let mut pairs = clique_pairs(&[0, 1, 2, 3]);
        pairs.extend(clique_pairs(&[4, 5, 6, 7]));
        let two_k4 = graph_from_undirected(8, &pairs);
        let p = Partition::from_assignment(&[0, 0, 0, 0, 1, 1, 1, 1]);
        assert!((modularity(&two_k4, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn modularity_undefined_without_edges() {
        let g = graph_from_undirected(3, &[]);
        assert_eq!(
            modularity(&g, &Partition::from_assignment(&[0, 1, 2])),
            None
        );
    }

    #[test]
    fn louvain_edgeless_gives_singletons() {
        let g = graph_from_undirected(4, &[]);
        let p = louvain(&g, 1);
        assert_eq!(p.num_communities(), 4);
    }

    #[test]
    fn louvain_triangle_is_one_community() {
        let g = graph_from_undirected(3, &[(0, 1), (1, 2), (0, 2)]);
        for seed in 0..5 {
            assert_eq!(louvain(&g, seed).num_communities(), 1);
        }
    }

    #[test]
    fn merge_two_smallest() {
        // sizes (10, 10, 10, 10, 3, 2) -> K = 5
        let mut raw = Vec::new();
        for (c, size) in [10, 10, 10, 10, 3, 2].into_iter().enumerate() {
            raw.extend(std::iter::repeat_n(c, size));
        }
        let n = raw.len();
        let g = graph_from_undirected(n, &[]);
        let p = Partition::from_assignment(&raw);
        let sets = client_node_sets(&g, &p, 5, 0).unwrap();
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![10, 10, 10, 10, 5]);
        assert_eq!(sets[4], (40..45).collect::<Vec<_>>());
    }

    #[test]
    fn exact_k_is_verbatim_and_split_fills_up() {
        let raw = vec![0, 0, 1, 1, 1, 2];
        let g = graph_from_undirected(6, &[(0, 1), (2, 3), (3, 4)]);
        let p = Partition::from_assignment(&raw);
        let sets = client_node_sets(&g, &p, 3, 0).unwrap();
        assert_eq!(sets, p.members());

        let sets = client_node_sets(&g, &p, 4, 7).unwrap();
        assert_eq!(sets.len(), 4);
        let mut all: Vec<usize> = sets.concat();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(sets.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn k_larger_than_nodes_is_rejected() {
        let g = graph_from_undirected(2, &[(0, 1)]);
        let p = louvain(&g, 0);
        assert!(matches!(
            client_node_sets(&g, &p, 3, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn client_subgraph_keeps_only_internal_edges() {
        let g = graph_from_undirected(4, &[(0, 1), (1, 2), (2, 3)]);
        let c = ClientSubgraph::extract(&g, 0, vec![2, 1]);
        assert_eq!(c.nodes, vec![1, 2]);
        assert_eq!(c.adjacency.num_edges(), 2);
        assert_eq!(c.adjacency.in_neighbors(0), &[1]);
    }
}
