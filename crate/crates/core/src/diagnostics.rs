//! Process-level fairness diagnostics computed on frozen snapshots.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{cross_entropy, ForwardCache, ModelParams};
use crate::graph::{GroupAssignment, Split};
use crate::partition::ClientSubgraph;

pub const GSD_EPSILON: f64 = 1e-12;
pub const DR_EPSILON: f64 = 1e-8;

/// Per-capita gradient mass of minority nodes over that of majority nodes.
/// `None` when either group is empty.
pub fn gsd(norms: &[f64], is_minority: &[bool]) -> Option<f64> {
    let mass = GradientMass::from_norms(norms, is_minority);
    mass.gsd()
}

/// Summed per-node gradient norms and counts by group. Clients report these
/// and the server pools them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientMass {
    pub minority: f64,
    pub minority_count: usize,
    pub majority: f64,
    pub majority_count: usize,
}

impl GradientMass {
    pub fn from_norms(norms: &[f64], is_minority: &[bool]) -> Self {
        let mut mass = GradientMass::default();
        for (n, m) in norms.iter().zip(is_minority) {
            mass.add(*n, *m);
        }
        mass
    }

    pub fn add(&mut self, norm: f64, minority: bool) {
        if minority {
            self.minority += norm;
            self.minority_count += 1;
        } else {
            self.majority += norm;
            self.majority_count += 1;
        }
    }

    pub fn merge(&mut self, other: &GradientMass) {
        self.minority += other.minority;
        self.minority_count += other.minority_count;
        self.majority += other.majority;
        self.majority_count += other.majority_count;
    }

    pub fn gsd(&self) -> Option<f64> {
        if self.minority_count == 0 || self.majority_count == 0 {
            return None;
        }
        let min = self.minority / self.minority_count as f64;
        let maj = self.majority / self.majority_count as f64;
        Some(min / (maj + GSD_EPSILON))
    }
}

/// Precomputed products for leave-one-message-out loss evaluation at a node.
///
/// Removing `u -> v` drops the message at both layers of `v`'s own
/// aggregation and renormalizes the remaining weights; the hidden states of
/// other nodes are left as they were.
pub struct EprContext<'a> {
    cache: &'a ForwardCache,
    params: &'a ModelParams,
    /// `X W0`
    xw0: Array2<f64>,
    /// `H W1`
    hw1: Array2<f64>,
}

impl<'a> EprContext<'a> {
    pub fn new(params: &'a ModelParams, cache: &'a ForwardCache, features: &Array2<f64>) -> Self {
        let hidden = match &cache.dropout_mask {
            Some(mask) => &cache.hidden * mask,
            None => cache.hidden.clone(),
        };
        EprContext {
            cache,
            params,
            xw0: features.dot(&params.w0),
            hw1: hidden.dot(&params.w1),
        }
    }

    /// Logits of `v`, optionally with the message of in-edge `removed` dropped.
    fn logits_at(&self, v: usize, removed: Option<usize>) -> Array1<f64> {
        let prop = &self.cache.propagation;
        let adj = prop.adjacency();
        let dropped_weight = removed.map_or(0.0, |e| prop.edge_weight(e));
        let renorm = 1.0 / (1.0 - dropped_weight);
        let weights: Vec<(usize, f64)> = adj
            .edge_range(v)
            .filter(|e| Some(*e) != removed)
            .map(|e| (adj.source(e), prop.edge_weight(e) * renorm))
            .chain(std::iter::once((v, prop.self_weight(v) * renorm)))
            .collect();

        let mut pre = self.params.b0.clone();
        for &(u, w) in &weights {
            pre.scaled_add(w, &self.xw0.row(u));
        }
        pre.mapv_inplace(|z| z.max(0.0));
        if let Some(mask) = &self.cache.dropout_mask {
            pre *= &mask.row(v);
        }
        let own = pre.dot(&self.params.w1);

        let mut logits = self.params.b1.clone();
        for &(u, w) in &weights {
            if u == v {
                logits.scaled_add(w, &own);
            } else {
                logits.scaled_add(w, &self.hw1.row(u));
            }
        }
        logits
    }

    /// `loss_v(without u) - loss_v(full)` for in-edge `e = (u -> v)`.
    /// Positive means the message helped.
    pub fn epr(&self, targets: &[Option<usize>], e: usize) -> Result<f64> {
        let adj = self.cache.propagation.adjacency();
        let v = target_of(adj, e);
        let y =
            targets[v].ok_or_else(|| Error::Contract(format!("EPR target {v} has no label")))?;
        let full = cross_entropy(self.logits_at(v, None).view(), y);
        let ablated = cross_entropy(self.logits_at(v, Some(e)).view(), y);
        Ok(ablated - full)
    }

    /// Negative-EPR counts over all in-edges of labeled nodes, by the
    /// target's group.
    pub fn neg_epr_counts(
        &self,
        targets: &[Option<usize>],
        is_minority_class: impl Fn(usize) -> bool,
    ) -> NegEprCounts {
        let adj = self.cache.propagation.adjacency();
        let mut counts = NegEprCounts::default();
        for v in 0..adj.num_nodes() {
            let Some(y) = targets[v] else { continue };
            let range = adj.edge_range(v);
            if range.is_empty() {
                continue;
            }
            let full = cross_entropy(self.logits_at(v, None).view(), y);
            for e in range {
                let epr = cross_entropy(self.logits_at(v, Some(e)).view(), y) - full;
                counts.add(is_minority_class(y), epr < 0.0);
            }
        }
        counts
    }
}

fn target_of(adj: &crate::graph::Csr, e: usize) -> usize {
    // CSR offsets are sorted, so the owner of `e` is found by bisection.
    let (mut lo, mut hi) = (0, adj.num_nodes());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if adj.edge_range(mid).start <= e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    while adj.edge_range(lo).end <= e {
        lo += 1;
    }
    lo
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegEprCounts {
    pub minority_negative: usize,
    pub minority_total: usize,
    pub majority_negative: usize,
    pub majority_total: usize,
}

impl NegEprCounts {
    fn add(&mut self, minority: bool, negative: bool) {
        let (neg, total) = if minority {
            (&mut self.minority_negative, &mut self.minority_total)
        } else {
            (&mut self.majority_negative, &mut self.majority_total)
        };
        *neg += usize::from(negative);
        *total += 1;
    }

    pub fn merge(&mut self, other: &NegEprCounts) {
        self.minority_negative += other.minority_negative;
        self.minority_total += other.minority_total;
        self.majority_negative += other.majority_negative;
        self.majority_total += other.majority_total;
    }

    /// `(minority, majority)` fractions of harmful messages.
    pub fn ratios(&self) -> (Option<f64>, Option<f64>) {
        let r = |n: usize, t: usize| (t > 0).then(|| n as f64 / t as f64);
        (
            r(self.minority_negative, self.minority_total),
            r(self.majority_negative, self.majority_total),
        )
    }
}

/// Misclassification rate of evaluated nodes at exactly BFS distance `h`
/// from the seed set, for `h = 0..=max_hop`.
pub fn khop_error_profile(
    neighbors: &[Vec<usize>],
    seeds: &[usize],
    evaluated: &[usize],
    preds: &[usize],
    labels: &[Option<usize>],
    max_hop: usize,
) -> Vec<Option<f64>> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist[s] == usize::MAX {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        if dist[v] >= max_hop {
            continue;
        }
        for &u in &neighbors[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let mut wrong = vec![0usize; max_hop + 1];
    let mut total = vec![0usize; max_hop + 1];
    for &v in evaluated {
        let (d, Some(y)) = (dist[v], labels[v]) else {
            continue;
        };
        if d <= max_hop {
            total[d] += 1;
            wrong[d] += usize::from(preds[v] != y);
        }
    }
    wrong
        .iter()
        .zip(&total)
        .map(|(w, t)| (*t > 0).then(|| *w as f64 / *t as f64))
        .collect()
}

/// Inner product of a client update with the minority descent direction and
/// the matching cosine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub inner: f64,
    pub cosine: Option<f64>,
}

pub fn alignment(delta: &ModelParams, g_min: &ModelParams) -> Alignment {
    let inner = delta.dot(g_min);
    let denom = delta.norm() * g_min.norm();
    Alignment {
        inner,
        cosine: (denom > 0.0).then(|| (inner / denom).clamp(-1.0, 1.0)),
    }
}

/// Sum of per-node raw gradients over minority training nodes, reported by a
/// client so the server can average them.
#[derive(Clone, Debug, PartialEq)]
pub struct MinorityGradient {
    pub sum: ModelParams,
    pub count: usize,
}

/// `-(sum of minority gradients) / (number of minority nodes)`, or `None`
/// when no client has minority training nodes or the direction is zero.
pub fn minority_direction<'a>(
    parts: impl IntoIterator<Item = &'a MinorityGradient>,
) -> Option<ModelParams> {
    let mut total: Option<ModelParams> = None;
    let mut count = 0usize;
    for part in parts {
        count += part.count;
        match &mut total {
            Some(t) => t.axpy(1.0, &part.sum),
            None => total = Some(part.sum.clone()),
        }
    }
    let mut g = total?;
    if count == 0 {
        return None;
    }
    g.scale(-1.0 / count as f64);
    (g.norm() > 0.0).then_some(g)
}

/// `<sum_m w_m delta_m, g_min> / (mean_m max(a_m, 0) + epsilon)`.
pub fn dilution_ratio(
    deltas: &[&ModelParams],
    weights: &[f64],
    g_min: &ModelParams,
    epsilon: f64,
) -> f64 {
    let aligned: Vec<f64> = deltas.iter().map(|d| d.dot(g_min)).collect();
    let numerator: f64 = aligned.iter().zip(weights).map(|(a, w)| w * a).sum();
    let positive = aligned.iter().map(|a| a.max(0.0)).sum::<f64>() / aligned.len().max(1) as f64;
    numerator / (positive + epsilon)
}

/// Equal-weight mix of the minority share among the client's labeled nodes
/// and the heterophilous share among its test nodes.
pub fn client_hardness(client: &ClientSubgraph, groups: &GroupAssignment) -> f64 {
    let labeled: Vec<usize> = client.labels.iter().flatten().copied().collect();
    let minority = if labeled.is_empty() {
        0.0
    } else {
        labeled
            .iter()
            .filter(|&&c| groups.is_minority_class(c))
            .count() as f64
            / labeled.len() as f64
    };
    let test: Vec<usize> = (0..client.num_nodes())
        .filter(|&i| client.splits[i] == Split::Test)
        .map(|i| client.nodes[i])
        .collect();
    let hete = if test.is_empty() {
        0.0
    } else {
        test.iter()
            .filter(|v| groups.hete_nodes.binary_search(v).is_ok())
            .count() as f64
            / test.len() as f64
    };
    0.5 * minority + 0.5 * hete
}

/// Clients in the top `fraction` by hardness (at least one), hardest first,
/// ties by id.
pub fn hard_clients(hardness: &[f64], fraction: f64) -> Vec<usize> {
    let k = ((fraction * hardness.len() as f64).ceil() as usize).clamp(1, hardness.len().max(1));
    let mut ids: Vec<usize> = (0..hardness.len()).collect();
    ids.sort_by(|&a, &b| hardness[b].total_cmp(&hardness[a]).then(a.cmp(&b)));
    ids.truncate(k.min(hardness.len()));
    ids
}

/// Everything recorded about one round. Undefined values are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    /// Loss-weighted gradient share disparity (equal to `gsd_raw` without
    /// node boosting).
    pub gsd: Option<f64>,
    pub gsd_raw: Option<f64>,
    pub gsd_per_client: Vec<Option<f64>>,
    pub neg_epr_ratio_minority: Option<f64>,
    pub neg_epr_ratio_majority: Option<f64>,
    pub dr: Option<f64>,
    pub alignments: Vec<Option<f64>>,
    pub alignment_cosines: Vec<Option<f64>>,
    pub trust: Vec<Option<f64>>,
    pub weights: Vec<f64>,
    pub update_norms: Vec<Option<f64>>,
    pub influence_bound_ok: Option<bool>,
    pub hardness_per_client: Vec<f64>,
    pub hard_clients: Vec<usize>,
    pub khop_error: Vec<Option<f64>>,
}
