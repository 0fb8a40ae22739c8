//! Node difficulty and loss weights, edge criticality and propagation
//! weights, and client trust scores.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Csr;

/// Per-node exponential moving average of prediction difficulty.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyState {
    d_bar: Vec<f64>,
    mu: f64,
    round: usize,
}

impl DifficultyState {
    pub fn new(num_nodes: usize, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::Config(format!(
                "difficulty rate must be in (0, 1], got {mu}"
            )));
        }
        Ok(DifficultyState {
            d_bar: vec![0.0; num_nodes],
            mu,
            round: 0,
        })
    }

    pub fn d_bar(&self) -> &[f64] {
        &self.d_bar
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn round(&self) -> usize {
        self.round
    }
}

/// Folds one round of predictions into the difficulty average.
///
/// Nodes with a target use `1 - p(y)`; the rest use `1 - max_c p(c)`.
pub fn update_difficulty(
    state: &mut DifficultyState,
    probs: &Array2<f64>,
    targets: &[Option<usize>],
) -> Result<()> {
    let n = state.d_bar.len();
    if probs.nrows() != n || targets.len() != n {
        return Err(Error::Contract(
            "difficulty inputs disagree on node count".into(),
        ));
    }
    for (v, row) in probs.rows().into_iter().enumerate() {
        let total: f64 = row.sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
            return Err(Error::Contract(format!(
                "prediction row {v} is not a distribution (sum {total})"
            )));
        }
        let d = match targets[v] {
            Some(y) => 1.0 - row[y],
            None => 1.0 - row.iter().copied().fold(0.0, f64::max),
        };
        let mu = state.mu;
        state.d_bar[v] = ((1.0 - mu) * state.d_bar[v] + mu * d).clamp(0.0, 1.0);
    }
    state.round += 1;
    Ok(())
}

/// `alpha_v = clip(1 + lambda_n * d_v, 1, 1 + lambda_n)`.
pub fn node_weights(d_bar: &[f64], lambda_n: f64) -> Vec<f64> {
    d_bar
        .iter()
        .map(|d| (1.0 + lambda_n * d).clamp(1.0, 1.0 + lambda_n))
        .collect()
}

/// Criticality of every directed edge: mean endpoint difficulty plus a
/// heterophily term (label disagreement when both ends have a target,
/// otherwise one minus the prediction inner product).
pub fn edge_scores(
    adjacency: &Csr,
    d_bar: &[f64],
    probs: &Array2<f64>,
    targets: &[Option<usize>],
) -> Vec<f64> {
    adjacency
        .edges()
        .map(|(_, u, v)| {
            let het = match (targets[u], targets[v]) {
                (Some(a), Some(b)) => f64::from(u8::from(a != b)),
                _ => (1.0 - probs.row(u).dot(&probs.row(v))).clamp(0.0, 1.0),
            };
            0.5 * (d_bar[u] + d_bar[v]) + het
        })
        .collect()
}

/// Optional sparsification applied before the softmax: among the in-edges of
/// a node, up to `floor((1 - budget) * degree)` of the lowest-scoring edges
/// with score below `threshold` are removed. At least one edge is kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgePruning {
    pub threshold: f64,
    pub budget: f64,
}

impl Default for EdgePruning {
    fn default() -> Self {
        EdgePruning {
            threshold: 0.4,
            budget: 0.75,
        }
    }
}

impl EdgePruning {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.budget) && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pruning settings {self:?}")))
        }
    }

    /// Keep mask for the in-edges of one node, given their scores.
    fn keep(&self, scores: &[f64]) -> Vec<bool> {
        let deg = scores.len();
        let max_drop =
            (((1.0 - self.budget) * deg as f64).floor() as usize).min(deg.saturating_sub(1));
        let mut candidates: Vec<usize> = (0..deg).filter(|&i| scores[i] < self.threshold).collect();
        candidates.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut keep = vec![true; deg];
        for &i in candidates.iter().take(max_drop) {
            keep[i] = false;
        }
        keep
    }
}

/// Temperature softmax of the scores over each node's in-edges. Pruned edges
/// get weight 0.
pub fn edge_softmax(
    adjacency: &Csr,
    scores: &[f64],
    lambda_e: f64,
    pruning: Option<&EdgePruning>,
) -> Vec<f64> {
    let mut beta = vec![0.0; scores.len()];
    for v in 0..adjacency.num_nodes() {
        let range = adjacency.edge_range(v);
        if range.is_empty() {
            continue;
        }
        let local = &scores[range.clone()];
        let keep = match pruning {
            Some(p) => p.keep(local),
            None => vec![true; local.len()],
        };
        let max = local
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(s, _)| lambda_e * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (i, e) in range.clone().enumerate() {
            if keep[i] {
                beta[e] = (lambda_e * scores[e] - max).exp();
                total += beta[e];
            }
        }
        for e in range {
            beta[e] /= total;
        }
    }
    beta
}

/// Scores and propagation weights of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    pub scores: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-client fairness report sent to the server alongside each update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub minority_difficulty: Option<f64>,
    pub majority_difficulty: Option<f64>,
    pub minority_acc: Option<f64>,
    pub majority_acc: Option<f64>,
    pub num_labeled: usize,
}

impl FairnessSummary {
    /// Clipped majority-minus-minority accuracy; 0 when either side has no
    /// local labeled nodes.
    pub fn gap(&self) -> f64 {
        match (self.majority_acc, self.minority_acc) {
            (Some(maj), Some(min)) => (maj - min).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }
}

/// Summarizes local labeled nodes by the shared minority class set.
pub fn fairness_summary(
    d_bar: &[f64],
    probs: &Array2<f64>,
    targets: &[Option<usize>],
    is_minority_class: impl Fn(usize) -> bool,
) -> FairnessSummary {
    #[derive(Default)]
    struct Side {
        count: usize,
        correct: usize,
        difficulty: f64,
    }
    let (mut min, mut maj) = (Side::default(), Side::default());
    for (v, y) in targets.iter().enumerate() {
        let Some(y) = *y else { continue };
        let row = probs.row(v);
        let pred = argmax(row.iter().copied());
        let side = if is_minority_class(y) {
            &mut min
        } else {
            &mut maj
        };
        side.count += 1;
        side.correct += usize::from(pred == y);
        side.difficulty += d_bar[v];
    }
    let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
    FairnessSummary {
        minority_difficulty: ratio(min.difficulty, min.count),
        majority_difficulty: ratio(maj.difficulty, maj.count),
        minority_acc: ratio(min.correct as f64, min.count),
        majority_acc: ratio(maj.correct as f64, maj.count),
        num_labeled: min.count + maj.count,
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in values.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustForm {
    /// `1 / ((1 + lambda_s r)(1 + gamma gap))`, aggregation weight `N tau`
    #[default]
    Rational,
    /// `exp(-lambda_s r - gamma gap)`, aggregation weight `tau`
    Exponential,
}

/// Trust of each participating client and the normalized aggregation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Trust {
    pub tau: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn trust_score(update_norm: f64, gap: f64, lambda_s: f64, gamma: f64, form: TrustForm) -> f64 {
    match form {
        TrustForm::Rational => 1.0 / ((1.0 + lambda_s * update_norm) * (1.0 + gamma * gap)),
        TrustForm::Exponential => (-lambda_s * update_norm - gamma * gap).exp(),
    }
}

pub fn trust_scores(
    update_norms: &[f64],
    summaries: &[FairnessSummary],
    lambda_s: f64,
    gamma: f64,
    form: TrustForm,
) -> Result<Trust> {
    if update_norms.len() != summaries.len() || update_norms.is_empty() {
        return Err(Error::Contract("trust needs one summary per update".into()));
    }
    if !(lambda_s >= 0.0 && gamma >= 0.0) {
        return Err(Error::Config("trust strengths must be non-negative".into()));
    }
    let tau: Vec<f64> = update_norms
        .iter()
        .zip(summaries)
        .map(|(r, s)| trust_score(*r, s.gap(), lambda_s, gamma, form))
        .collect();
    if tau.iter().all(|t| *t < 1e-300) {
        return Err(Error::TrustUnderflow);
    }
    let raw: Vec<f64> = match form {
        TrustForm::Rational => tau
            .iter()
            .zip(summaries)
            .map(|(t, s)| t * s.num_labeled as f64)
            .collect(),
        TrustForm::Exponential => tau.clone(),
    };
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Contract(
            "no participating client has labeled nodes".into(),
        ));
    }
    let weights = raw.iter().map(|w| w / total).collect();
    Ok(Trust { tau, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn summary(gap: f64, n: usize) -> FairnessSummary {
        FairnessSummary {
            minority_difficulty: None,
            majority_difficulty: None,
            minority_acc: Some(0.0),
            majority_acc: Some(gap),
            num_labeled: n,
        }
    }

    #[test]
    fn difficulty_examples() {
        let mut s = DifficultyState::new(1, 0.3).unwrap();
        update_difficulty(&mut s, &array![[0.0, 1.0]], &[Some(1)]).unwrap();
        assert_eq!(s.d_bar(), &[0.0]);

        let mut s = DifficultyState::new(1, 1.0).unwrap();
        update_difficulty(&mut s, &array![[0.8, 0.2]], &[Some(1)]).unwrap();
        assert!((s.d_bar()[0] - 0.8).abs() < 1e-15);

        // constant difficulty d from zero: d_bar_t = d (1 - (1 - mu)^t)
        let mut s = DifficultyState::new(1, 0.1).unwrap();
        for t in 1..=2 {
            update_difficulty(&mut s, &array![[0.5, 0.5]], &[Some(0)]).unwrap();
            let closed = 0.5 * (1.0 - 0.9f64.powi(t));
            assert!((s.d_bar()[0] - closed).abs() < 1e-15);
        }
        assert!((s.d_bar()[0] - 0.095).abs() < 1e-15);
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn unlabeled_difficulty_uses_confidence() {
        let mut s = DifficultyState::new(1, 1.0).unwrap();
        update_difficulty(&mut s, &array![[0.1, 0.7, 0.2]], &[None]).unwrap();
        assert!((s.d_bar()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_predictions() {
        let mut s = DifficultyState::new(1, 0.1).unwrap();
        let err = update_difficulty(&mut s, &array![[0.5, 0.6]], &[None]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn node_weight_examples() {
        assert_eq!(node_weights(&[0.0, 1.0], 0.5), vec![1.0, 1.5]);
        assert_eq!(node_weights(&[0.3, 1.0], 0.0), vec![1.0, 1.0]);
    }

    #[test]
    fn edge_score_examples() {
        // edges 0->1 and 2->3
        let adj = Csr::from_edges(4, &[(0, 1), (2, 3)]);
        let probs = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]];
        let s = edge_scores(
            &adj,
            &[0.0, 0.0, 0.5, 0.5],
            &probs,
            &[Some(0), Some(0), None, None],
        );
        assert_eq!(s, vec![0.0, 0.5]);
        let s = edge_scores(
            &adj,
            &[0.2, 0.4, 0.0, 0.0],
            &probs,
            &[Some(0), Some(1), None, None],
        );
        assert!((s[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn edge_softmax_examples() {
        let adj = Csr::from_edges(3, &[(0, 2), (1, 2)]);
        let beta = edge_softmax(&adj, &[0.0, 3f64.ln()], 1.0, None);
        assert!((beta[0] - 0.25).abs() < 1e-15 && (beta[1] - 0.75).abs() < 1e-15);
        assert_eq!(edge_softmax(&adj, &[0.3, 1.9], 0.0, None), vec![0.5, 0.5]);
        assert_eq!(edge_softmax(&adj, &[1.2, 1.2], 7.0, None), vec![0.5, 0.5]);
    }

    #[test]
    fn pruning_drops_low_scores_within_budget() {
        let edges: Vec<_> = (0..4).map(|u| (u, 4)).collect();
        let adj = Csr::from_edges(5, &edges);
        let p = EdgePruning::default();
        // one quarter of four edges may go; the lowest below threshold is dropped
        let beta = edge_softmax(&adj, &[0.3, 0.1, 0.9, 0.2], 0.5, Some(&p));
        assert_eq!(beta[1], 0.0);
        assert!(beta.iter().enumerate().all(|(i, b)| i == 1 || *b > 0.0));
        // nothing below threshold: nothing dropped
        let beta = edge_softmax(&adj, &[0.5, 0.6, 0.9, 0.7], 0.5, Some(&p));
        assert!(beta.iter().all(|b| *b > 0.0));
    }

    #[test]
    fn trust_examples() {
        for form in [TrustForm::Rational, TrustForm::Exponential] {
            assert_eq!(trust_score(0.0, 0.0, 0.5, 0.5, form), 1.0);
        }
        assert_eq!(trust_score(2.0, 0.0, 0.5, 0.5, TrustForm::Rational), 0.5);
        let t = trust_scores(
            &[0.0, 2.0],
            &[summary(0.0, 10), summary(0.0, 10)],
            0.5,
            0.5,
            TrustForm::Rational,
        )
        .unwrap();
        assert!((t.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trust_underflow_is_reported() {
        let err = trust_scores(&[1e4], &[summary(0.0, 3)], 1.0, 0.0, TrustForm::Exponential);
        assert!(matches!(err, Err(Error::TrustUnderflow)));
    }

    #[test]
    fn gap_is_clipped_and_needs_both_groups() {
        assert_eq!(summary(0.4, 1).gap(), 0.4);
        let mut s = summary(0.4, 1);
        s.minority_acc = Some(0.9);
        assert_eq!(s.gap(), 0.0);
        s.minority_acc = None;
        assert_eq!(s.gap(), 0.0);
    }

    #[test]
    fn fairness_summary_counts_groups() {
        let probs = array![[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]];
        let s = fairness_summary(
            &[0.1, 0.3, 0.5],
            &probs,
            &[Some(0), Some(1), Some(1)],
            |c| c == 1,
        );
        assert_eq!(s.num_labeled, 3);
        assert_eq!(s.majority_acc, Some(1.0));
        assert_eq!(s.minority_acc, Some(0.5));
        assert!((s.minority_difficulty.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(s.gap(), 0.5);
    }

    fn distribution(classes: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, classes).prop_map(|mut p| {
            p[0] += 1e-3;
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            p
        })
    }

    proptest! {
        #[test]
        fn difficulty_stays_in_unit_interval(
            mu in 0.01f64..=1.0,
            rows in prop::collection::vec((distribution(3), prop::option::of(0usize..3)), 1..20),
        ) {
            let mut s = DifficultyState::new(1, mu).unwrap();
            for (p, y) in rows {
                let probs = Array2::from_shape_vec((1, 3), p).unwrap();
                update_difficulty(&mut s, &probs, &[y]).unwrap();
                prop_assert!((0.0..=1.0).contains(&s.d_bar()[0]));
            }
        }

        #[test]
        fn node_weights_are_bounded(d in prop::collection::vec(-1.0f64..2.0, 1..30), lambda in 0.0f64..3.0) {
            for a in node_weights(&d, lambda) {
                prop_assert!((1.0..=1.0 + lambda).contains(&a));
            }
        }

        #[test]
        fn edge_softmax_normalizes_and_is_shift_invariant(
            scores in prop::collection::vec(0.0f64..2.0, 1..12),
            lambda in 0.0f64..5.0,
            shift in -3.0f64..3.0,
        ) {
            let edges: Vec<_> = (0..scores.len()).map(|u| (u, scores.len())).collect();
            let adj = Csr::from_edges(scores.len() + 1, &edges);
            let beta = edge_softmax(&adj, &scores, lambda, None);
            prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(beta.iter().all(|b| *b > 0.0));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let beta2 = edge_softmax(&adj, &shifted, lambda, None);
            for (a, b) in beta.iter().zip(&beta2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn raising_a_score_raises_its_weight(
            scores in prop::collection::vec(0.0f64..2.0, 2..8),
            bump in 0.01f64..1.0,
            lambda in 0.1f64..3.0,
        ) {
            let edges: Vec<_> = (0..scores.len()).map(|u| (u, scores.len())).collect();
            let adj = Csr::from_edges(scores.len() + 1, &edges);
            let before = edge_softmax(&adj, &scores, lambda, None);
            let mut raised = scores.clone();
            raised[0] += bump;
            let after = edge_softmax(&adj, &raised, lambda, None);
            prop_assert!(after[0] > before[0]);
        }

        #[test]
        fn trust_is_monotone(
            r in 0.0f64..10.0, dr in 0.0f64..5.0,
            gap in 0.0f64..1.0, dg in 0.0f64..1.0,
            ls in 0.0f64..3.0, g in 0.0f64..3.0,
        ) {
            for form in [TrustForm::Rational, TrustForm::Exponential] {
                let t = trust_score(r, gap, ls, g, form);
                prop_assert!(trust_score(r + dr, gap, ls, g, form) <= t);
                prop_assert!(trust_score(r, (gap + dg).min(1.0), ls, g, form) <= t);
                prop_assert!(t <= 1.0 / (1.0 + ls * r) + 1e-15);
            }
        }

        #[test]
        fn trust_weights_sum_to_one(
            clients in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0, 1usize..100), 1..10),
        ) {
            let norms: Vec<f64> = clients.iter().map(|c| c.0).collect();
            let sums: Vec<_> = clients.iter().map(|c| summary(c.1, c.2)).collect();
            for form in [TrustForm::Rational, TrustForm::Exponential] {
                let t = trust_scores(&norms, &sums, 0.5, 0.5, form).unwrap();
                prop_assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
