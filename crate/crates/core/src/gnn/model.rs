use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::rng::StreamRng;

/// Row-normalized propagation operator built from edge weights `beta`.
///
/// Each node also sends itself a message whose raw weight is the mean of
/// its incoming weights (1 for nodes without incoming edges); weights are then
/// renormalized over `N(v) ∪ {v}`.
#[derive(Clone, Debug)]
pub struct Propagation {
    adjacency: Csr,
    edge_weight: Vec<f64>,
    self_weight: Vec<f64>,
}

impl Propagation {
    pub fn new(adjacency: &Csr, beta: &[f64]) -> Result<Self> {
        if beta.len() != adjacency.num_edges() {
            return Err(Error::Contract(format!(
                "{} edge weights for {} edges",
                beta.len(),
                adjacency.num_edges()
            )));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Contract(
                "edge weights must be finite and non-negative".into(),
            ));
        }
        let n = adjacency.num_nodes();
        let mut edge_weight = vec![0.0; beta.len()];
        let mut self_weight = vec![1.0; n];
        for v in 0..n {
            let range = adjacency.edge_range(v);
            let sum: f64 = beta[range.clone()].iter().sum();
            if range.is_empty() || sum == 0.0 {
                continue;
            }
            let mean = sum / range.len() as f64;
            let total = sum + mean;
            for e in range {
                edge_weight[e] = beta[e] / total;
            }
            self_weight[v] = mean / total;
        }
        Ok(Propagation {
            adjacency: adjacency.clone(),
            edge_weight,
            self_weight,
        })
    }

    /// Uniform incoming weights: a mean aggregator over `N(v) ∪ {v}`.
    pub fn uniform(adjacency: &Csr) -> Self {
        let beta = uniform_beta(adjacency);
        Self::new(adjacency, &beta).expect("uniform weights are valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.self_weight.len()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    /// Effective weight of edge `e` after self-loop renormalization.
    pub fn edge_weight(&self, e: usize) -> f64 {
        self.edge_weight[e]
    }

    pub fn self_weight(&self, v: usize) -> f64 {
        self.self_weight[v]
    }

    /// `(source, weight)` pairs aggregated into `v`, self message last.
    pub fn row(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency
            .edge_range(v)
            .map(move |e| (self.adjacency.source(e), self.edge_weight[e]))
            .chain(std::iter::once((v, self.self_weight[v])))
    }

    /// `P x`
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for v in 0..self.num_nodes() {
            let mut row = out.row_mut(v);
            for (u, w) in self.row(v) {
                row.scaled_add(w, &x.row(u));
            }
        }
        out
    }

    /// `P^T g`
    pub fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(g.raw_dim());
        for v in 0..self.num_nodes() {
            for (u, w) in self.row(v) {
                out.row_mut(u).scaled_add(w, &g.row(v));
            }
        }
        out
    }
}

/// `1 / |N(v)|` on every incoming edge.
pub fn uniform_beta(adjacency: &Csr) -> Vec<f64> {
    let mut beta = vec![0.0; adjacency.num_edges()];
    for v in 0..adjacency.num_nodes() {
        let range = adjacency.edge_range(v);
        let w = 1.0 / range.len().max(1) as f64;
        for e in range {
            beta[e] = w;
        }
    }
    beta
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub propagation: Propagation,
    /// `P X`
    pub agg0: Array2<f64>,
    /// `P X W0 + b0`
    pub pre0: Array2<f64>,
    /// `relu(pre0)`, before dropout
    pub hidden: Array2<f64>,
    /// Inverted-dropout multipliers on the hidden layer, if training.
    pub dropout_mask: Option<Array2<f64>>,
    /// `P H`
    pub agg1: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Dropout configuration for a training-mode forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut StreamRng,
}

/// Two-layer boosted message passing: ReLU hidden layer, linear logits.
pub fn forward(
    params: &ModelParams,
    adjacency: &Csr,
    features: &Array2<f64>,
    beta: &[f64],
    dropout: Option<Dropout<'_>>,
) -> Result<ForwardCache> {
    let propagation = Propagation::new(adjacency, beta)?;
    forward_with(params, propagation, features, dropout)
}

pub fn forward_with(
    params: &ModelParams,
    propagation: Propagation,
    features: &Array2<f64>,
    dropout: Option<Dropout<'_>>,
) -> Result<ForwardCache> {
    if features.nrows() != propagation.num_nodes() || features.ncols() != params.input_dim() {
        return Err(Error::Contract(format!(
            "features are {:?} but the graph has {} nodes and the model expects {} inputs",
            features.dim(),
            propagation.num_nodes(),
            params.input_dim()
        )));
    }
    let agg0 = propagation.apply(features);
    let pre0 = agg0.dot(&params.w0) + &params.b0;
    let hidden = pre0.mapv(|x| x.max(0.0));
    let dropout_mask = match dropout {
        Some(Dropout { rate, rng }) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            Some(Array2::from_shape_fn(hidden.raw_dim(), |_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    };
    let agg1 = match &dropout_mask {
        Some(mask) => propagation.apply(&(&hidden * mask)),
        None => propagation.apply(&hidden),
    };
    let logits = agg1.dot(&params.w1) + &params.b1;
    Ok(ForwardCache {
        propagation,
        agg0,
        pre0,
        hidden,
        dropout_mask,
        agg1,
        logits,
    })
}

fn log_sum_exp(z: ArrayView1<f64>) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Cross-entropy of one logit row against class `y`.
pub fn cross_entropy(z: ArrayView1<f64>, y: usize) -> f64 {
    log_sum_exp(z) - z[y]
}

/// `sum_v alpha_v * CE(logits_v, y_v)` over nodes with a target.
pub fn weighted_loss(
    logits: &Array2<f64>,
    targets: &[Option<usize>],
    alpha: &[f64],
) -> Result<f64> {
    if targets.len() != logits.nrows() || alpha.len() != logits.nrows() {
        return Err(Error::Contract("loss inputs disagree on node count".into()));
    }
    let mut any = false;
    let mut loss = 0.0;
    for (v, y) in targets.iter().enumerate() {
        if let Some(y) = *y {
            any = true;
            loss += alpha[v] * cross_entropy(logits.row(v), y);
        }
    }
    if any {
        Ok(loss)
    } else {
        Err(Error::EmptyObjective)
    }
}

/// Gradient of [`weighted_loss`] with respect to all parameters. Edge weights
/// are treated as constants.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &[Option<usize>],
    alpha: &[f64],
) -> Result<ModelParams> {
    let n = cache.logits.nrows();
    if targets.len() != n || alpha.len() != n {
        return Err(Error::Contract(
            "backward inputs disagree on node count".into(),
        ));
    }
    let mut delta = softmax(&cache.logits);
    for (v, (mut row, y)) in delta.rows_mut().into_iter().zip(targets).enumerate() {
        match *y {
            Some(y) => {
                row[y] -= 1.0;
                row *= alpha[v];
            }
            None => row.fill(0.0),
        }
    }
    let hidden_in = match &cache.dropout_mask {
        Some(mask) => &cache.hidden * mask,
        None => cache.hidden.clone(),
    };
    debug_assert_eq!(cache.propagation.apply(&hidden_in), cache.agg1);

    let w1 = cache.agg1.t().dot(&delta);
    let b1 = delta.sum_axis(Axis(0));
    let d_agg1 = delta.dot(&params.w1.t());
    let mut d_pre0 = cache.propagation.apply_transpose(&d_agg1);
    if let Some(mask) = &cache.dropout_mask {
        d_pre0 *= mask;
    }
    Zip::from(&mut d_pre0).and(&cache.pre0).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    let w0 = cache.agg0.t().dot(&d_pre0);
    let b0 = d_pre0.sum_axis(Axis(0));
    Ok(ModelParams { w0, b0, w1, b1 })
}

/// Gradient of node `v`'s unweighted loss term alone.
///
/// Only the receptive field of `v` is touched, so this is cheap enough to
/// call for every labeled node.
pub fn node_gradient(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &[Option<usize>],
    v: usize,
) -> Result<ModelParams> {
    let y = targets
        .get(v)
        .copied()
        .flatten()
        .ok_or_else(|| Error::Contract(format!("node {v} has no label")))?;
    let z = cache.logits.row(v);
    let lse = log_sum_exp(z);
    let mut delta: Array1<f64> = z.mapv(|x| (x - lse).exp());
    delta[y] -= 1.0;

    let mut grad = params.zeros_like();
    let a1 = cache.agg1.row(v);
    for (i, &a) in a1.iter().enumerate() {
        grad.w1.row_mut(i).scaled_add(a, &delta);
    }
    grad.b1.assign(&delta);

    let back = params.w1.dot(&delta);
    for (u, w) in cache.propagation.row(v) {
        let mut dz = &back * w;
        if let Some(mask) = &cache.dropout_mask {
            dz *= &mask.row(u);
        }
        Zip::from(&mut dz).and(cache.pre0.row(u)).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        for (i, &a) in cache.agg0.row(u).iter().enumerate() {
            if a != 0.0 {
                grad.w0.row_mut(i).scaled_add(a, &dz);
            }
        }
        grad.b0 += &dz;
    }
    Ok(grad)
}

/// L2 norm of [`node_gradient`].
pub fn per_node_grad_norm(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &[Option<usize>],
    v: usize,
) -> Result<f64> {
    Ok(node_gradient(params, cache, targets, v)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_node() -> (Csr, Array2<f64>) {
        (Csr::from_edges(1, &[]), array![[1.0, -2.0]])
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let (adj, x) = single_node();
        let p = ModelParams::zeros(2, 3, 4);
        let cache = forward(&p, &adj, &x, &[], None).unwrap();
        assert!(cache.logits.iter().all(|&z| z == 0.0));
        let probs = softmax(&cache.logits);
        assert!(probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }

    #[test]
    fn isolated_node_collapses_to_mlp() {
        let (adj, x) = single_node();
        let p = ModelParams {
            w0: array![[1.0, 0.5], [0.0, 1.0]],
            b0: array![0.1, 0.2],
            w1: array![[2.0, 0.0], [1.0, -1.0]],
            b1: array![0.0, 0.3],
        };
        let cache = forward(&p, &adj, &x, &[], None).unwrap();
        let h = (x.dot(&p.w0) + &p.b0).mapv(|v: f64| v.max(0.0));
        let expected = h.dot(&p.w1) + &p.b1;
        assert_eq!(cache.logits, expected);
    }

    #[test]
    fn loss_examples() {
        let logits = Array2::zeros((2, 4));
        let loss = weighted_loss(&logits, &[Some(1), None], &[2.0, 1.0]).unwrap();
        assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-15);

        let logits = array![[1.0, 0.0], [0.2, 0.7]];
        let l1 = cross_entropy(logits.row(0), 1);
        let l2 = cross_entropy(logits.row(1), 0);
        let loss = weighted_loss(&logits, &[Some(1), Some(0)], &[1.0, 1.5]).unwrap();
        assert!((loss - (l1 + 1.5 * l2)).abs() < 1e-15);

        assert!(matches!(
            weighted_loss(&logits, &[None, None], &[1.0, 1.0]),
            Err(Error::EmptyObjective)
        ));
    }

    #[test]
    fn propagation_rows_sum_to_one() {
        let adj = Csr::from_edges(3, &[(0, 1), (2, 1), (1, 0)]);
        let prop = Propagation::new(&adj, &[0.3, 0.7, 1.0]).unwrap();
        for v in 0..3 {
            let s: f64 = prop.row(v).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(prop.self_weight(2), 1.0);
        // uniform beta over two neighbors: all three messages weigh 1/3
        let uni = Propagation::uniform(&adj);
        assert!(uni.row(1).all(|(_, w)| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn node_gradient_requires_label() {
        let (adj, x) = single_node();
        let p = ModelParams::zeros(2, 2, 2);
        let cache = forward(&p, &adj, &x, &[], None).unwrap();
        assert!(matches!(
            node_gradient(&p, &cache, &[None], 0),
            Err(Error::Contract(_))
        ));
    }
}
