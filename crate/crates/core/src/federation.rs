//! Synchronous client/server training: local boosted rounds, trust-gated or
//! size-weighted aggregation, optional clip-and-noise privacy, evaluation and
//! per-round diagnostics.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boosting::{
    argmax, edge_scores, edge_softmax, fairness_summary, node_weights, trust_scores,
    update_difficulty, DifficultyState, EdgePruning, FairnessSummary, TrustForm,
};
use crate::diagnostics::{
    alignment, client_hardness, dilution_ratio, hard_clients, khop_error_profile,
    minority_direction, EprContext, GradientMass, MinorityGradient, NegEprCounts, RoundDiagnostics,
    DR_EPSILON,
};
use crate::error::{Error, Result};
use crate::exec::{map_mut, map_range, Scheduling};
use crate::gnn::{
    backward, forward, node_gradient, optimizer_step, softmax, uniform_beta, weighted_loss,
    AdamConfig, AdamState, Dropout, ForwardCache, ModelParams, TensorShape,
};
use crate::graph::{AttributedGraph, GroupAssignment, Split};
use crate::metrics::{group_report, EvalGroups, EvalReport};
use crate::partition::ClientSubgraph;
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[default]
    #[serde(rename = "boostfgl")]
    BoostFgl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::BoostFgl => "boostfgl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Method::FedAvg),
            "boostfgl" => Ok(Method::BoostFgl),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (expected fedavg or boostfgl)"
            ))),
        }
    }
}

/// Which boosting components are active under [`Method::BoostFgl`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub node: bool,
    pub topo: bool,
    pub model: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            node: true,
            topo: true,
            model: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub participation: f64,
    pub method: Method,
    pub ablation: Ablation,
    pub dp: Option<DpConfig>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            rounds: 50,
            local_epochs: 1,
            participation: 1.0,
            method: Method::BoostFgl,
            ablation: Ablation::default(),
            dp: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub optimizer: AdamConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 256,
            dropout: 0.5,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub mu: f64,
    pub lambda_n: f64,
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub gamma: f64,
    pub trust_form: TrustForm,
    pub pruning: Option<EdgePruning>,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            mu: 0.1,
            lambda_n: 0.5,
            lambda_e: 0.5,
            lambda_s: 0.5,
            gamma: 0.5,
            trust_form: TrustForm::Rational,
            pruning: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub max_hop: usize,
    pub hard_fraction: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: true,
            max_hop: 3,
            hard_fraction: 0.2,
        }
    }
}

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainConfig {
    pub round: RoundConfig,
    pub model: ModelConfig,
    pub boost: BoostConfig,
    pub diagnostics: DiagnosticsConfig,
    pub scheduling: Scheduling,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.round;
        if r.rounds == 0 || r.local_epochs == 0 {
            return Err(Error::Config(
                "rounds and local_epochs must be at least 1".into(),
            ));
        }
        if !(r.participation > 0.0 && r.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation {} must lie in (0, 1]",
                r.participation
            )));
        }
        if let Some(dp) = r.dp {
            if !(dp.clip_norm > 0.0 && dp.noise_std >= 0.0) {
                return Err(Error::Config(format!("invalid privacy settings {dp:?}")));
            }
        }
        if self.model.hidden_dim == 0 || !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(
                "hidden_dim must be positive and dropout in [0, 1)".into(),
            ));
        }
        self.model.optimizer.validate()?;
        let b = &self.boost;
        if !(b.mu > 0.0 && b.mu <= 1.0) {
            return Err(Error::Config(format!("mu = {} must lie in (0, 1]", b.mu)));
        }
        if [b.lambda_n, b.lambda_e, b.lambda_s, b.gamma]
            .iter()
            .any(|x| x.is_nan() || *x < 0.0)
        {
            return Err(Error::Config(
                "boosting strengths must be non-negative".into(),
            ));
        }
        if let Some(p) = &b.pruning {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.diagnostics.hard_fraction) {
            return Err(Error::Config("hard_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Active components after applying the method.
    pub fn active(&self) -> Ablation {
        match self.round.method {
            Method::FedAvg => Ablation {
                node: false,
                topo: false,
                model: false,
            },
            Method::BoostFgl => self.round.ablation,
        }
    }
}

/// A client's data and the state it keeps between rounds.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub subgraph: ClientSubgraph,
    targets: Vec<Option<usize>>,
    difficulty: DifficultyState,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    optimizer: Option<AdamState>,
}

impl ClientState {
    pub fn new(subgraph: ClientSubgraph, mu: f64) -> Result<Self> {
        let n = subgraph.num_nodes();
        Ok(ClientState {
            targets: subgraph.train_targets(),
            difficulty: DifficultyState::new(n, mu)?,
            beta: uniform_beta(&subgraph.adjacency),
            alpha: vec![1.0; n],
            optimizer: None,
            subgraph,
        })
    }

    pub fn id(&self) -> usize {
        self.subgraph.id
    }

    pub fn num_labeled(&self) -> usize {
        self.targets.iter().flatten().count()
    }

    pub fn difficulty(&self) -> &DifficultyState {
        &self.difficulty
    }

    /// Propagation weights of the latest round.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn forward_eval(&self, params: &ModelParams) -> Result<ForwardCache> {
        forward(
            params,
            &self.subgraph.adjacency,
            &self.subgraph.features,
            &self.beta,
            None,
        )
    }
}

/// Client-to-server message.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub round: usize,
    pub delta: ModelParams,
    pub summary: FairnessSummary,
    /// The client had no labeled nodes and sent a zero delta.
    pub skipped: bool,
}

const UPDATE_FORMAT: &str = "boostfgl-update/1";

#[derive(Serialize, Deserialize)]
struct UpdateHeader {
    format: String,
    client: usize,
    round: usize,
    skipped: bool,
    summary: FairnessSummary,
    tensors: Vec<TensorShape>,
}

impl ClientUpdate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = UpdateHeader {
            format: UPDATE_FORMAT.to_string(),
            client: self.client,
            round: self.round,
            skipped: self.skipped,
            summary: self.summary,
            tensors: self.delta.shapes(),
        };
        crate::gnn::encode_framed(&header, &self.delta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (UpdateHeader, _) = crate::gnn::split_framed(bytes)?;
        if header.format != UPDATE_FORMAT {
            return Err(Error::Message(format!(
                "unexpected update format {:?}",
                header.format
            )));
        }
        let delta = crate::gnn::decode_payload(&header.tensors, payload)?;
        if !delta.is_finite() {
            return Err(Error::Message("update contains non-finite values".into()));
        }
        Ok(ClientUpdate {
            client: header.client,
            round: header.round,
            delta,
            summary: header.summary,
            skipped: header.skipped,
        })
    }
}

/// Diagnostic quantities a client computes on its own snapshot.
#[derive(Clone, Debug)]
pub struct LocalDiagnostics {
    pub mass: GradientMass,
    pub mass_raw: GradientMass,
    pub neg_epr: NegEprCounts,
    pub minority_gradient: MinorityGradient,
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub update: ClientUpdate,
    pub diagnostics: Option<LocalDiagnostics>,
}

/// Shared, read-only context for one round.
pub struct RoundContext<'a> {
    pub config: &'a TrainConfig,
    pub global: &'a ModelParams,
    pub round: usize,
    pub is_minority_class: &'a [bool],
}

fn is_min(flags: &[bool], c: usize) -> bool {
    flags.get(c).copied().unwrap_or(false)
}

/// One client's work in a round: refresh difficulty and boosting weights
/// from the broadcast model, train locally, and report the delta.
pub fn local_round(state: &mut ClientState, ctx: &RoundContext<'_>) -> Result<LocalOutcome> {
    let cfg = ctx.config;
    let active = cfg.active();
    let id = state.id();
    let skip = |state: &ClientState| LocalOutcome {
        update: ClientUpdate {
            client: state.id(),
            round: ctx.round,
            delta: ctx.global.zeros_like(),
            summary: FairnessSummary {
                minority_difficulty: None,
                majority_difficulty: None,
                minority_acc: None,
                majority_acc: None,
                num_labeled: 0,
            },
            skipped: true,
        },
        diagnostics: None,
    };
    if state.num_labeled() == 0 {
        return Ok(skip(state));
    }

    let mut params = ctx.global.clone();
    let scoring = state.forward_eval(&params)?;
    let probs = softmax(&scoring.logits);
    update_difficulty(&mut state.difficulty, &probs, &state.targets)?;
    let d_bar = state.difficulty.d_bar();
    state.alpha = if active.node {
        node_weights(d_bar, cfg.boost.lambda_n)
    } else {
        vec![1.0; state.subgraph.num_nodes()]
    };
    state.beta = if active.topo {
        let scores = edge_scores(&state.subgraph.adjacency, d_bar, &probs, &state.targets);
        edge_softmax(
            &state.subgraph.adjacency,
            &scores,
            cfg.boost.lambda_e,
            cfg.boost.pruning.as_ref(),
        )
    } else {
        uniform_beta(&state.subgraph.adjacency)
    };

    let minority_gradient = if cfg.diagnostics.enabled {
        let cache = state.forward_eval(&params)?;
        let mut sum = params.zeros_like();
        let mut count = 0;
        for (v, y) in state.targets.iter().enumerate() {
            if y.is_some_and(|c| is_min(ctx.is_minority_class, c)) {
                sum.axpy(1.0, &node_gradient(&params, &cache, &state.targets, v)?);
                count += 1;
            }
        }
        Some(MinorityGradient { sum, count })
    } else {
        None
    };

    let adam = state
        .optimizer
        .get_or_insert_with(|| AdamState::new(&params));
    let mut rng = stream(cfg.seed, Purpose::Dropout, id as u64, ctx.round as u64);
    let diverged = |_| Error::Diverged {
        round: Some(ctx.round),
    };
    for _ in 0..cfg.round.local_epochs {
        let cache = forward(
            &params,
            &state.subgraph.adjacency,
            &state.subgraph.features,
            &state.beta,
            Some(Dropout {
                rate: cfg.model.dropout,
                rng: &mut rng,
            }),
        )?;
        let loss = weighted_loss(&cache.logits, &state.targets, &state.alpha)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                round: Some(ctx.round),
            });
        }
        let grad = backward(&params, &cache, &state.targets, &state.alpha)?;
        optimizer_step(&mut params, &grad, adam, &cfg.model.optimizer).map_err(diverged)?;
    }

    let snapshot = state.forward_eval(&params)?;
    let post = softmax(&snapshot.logits);
    let summary = fairness_summary(state.difficulty.d_bar(), &post, &state.targets, |c| {
        is_min(ctx.is_minority_class, c)
    });

    let diagnostics = match minority_gradient {
        Some(minority_gradient) => {
            let mut mass = GradientMass::default();
            let mut mass_raw = GradientMass::default();
            for (v, y) in state.targets.iter().enumerate() {
                let Some(c) = *y else { continue };
                let norm = node_gradient(&params, &snapshot, &state.targets, v)?.norm();
                let minority = is_min(ctx.is_minority_class, c);
                mass.add(state.alpha[v] * norm, minority);
                mass_raw.add(norm, minority);
            }
            let epr = EprContext::new(&params, &snapshot, &state.subgraph.features);
            let neg_epr = epr.neg_epr_counts(&state.targets, |c| is_min(ctx.is_minority_class, c));
            Some(LocalDiagnostics {
                mass,
                mass_raw,
                neg_epr,
                minority_gradient,
            })
        }
        None => None,
    };

    let mut delta = params.sub(ctx.global);
    if let Some(dp) = cfg.round.dp {
        let mut rng = stream(cfg.seed, Purpose::Privacy, id as u64, ctx.round as u64);
        delta = dp_transform(&delta, dp.clip_norm, dp.noise_std, &mut rng);
    }
    Ok(LocalOutcome {
        update: ClientUpdate {
            client: id,
            round: ctx.round,
            delta,
            summary,
            skipped: false,
        },
        diagnostics,
    })
}

/// Scales the update to at most `clip_norm`, then adds i.i.d. Gaussian noise.
pub fn dp_transform<R: rand::Rng + ?Sized>(
    delta: &ModelParams,
    clip_norm: f64,
    noise_std: f64,
    rng: &mut R,
) -> ModelParams {
    let mut out = delta.clone();
    let norm = out.norm();
    if norm > clip_norm {
        out.scale(clip_norm / norm);
    }
    if noise_std > 0.0 {
        for x in out.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += noise_std * z;
        }
    }
    out
}

/// Aggregation weights and the trust scores behind them (when trust is on).
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    pub params: ModelParams,
    /// One weight per update; skipped updates get 0.
    pub weights: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    /// Bound on each client's weighted update norm, when trust is on.
    pub influence_bounds: Option<Vec<f64>>,
}

/// `theta_prev + sum_m w_m delta_m` with trust-based or size-based weights.
/// If every update was skipped the model is returned unchanged.
pub fn aggregate(
    theta_prev: &ModelParams,
    updates: &[ClientUpdate],
    config: &TrainConfig,
) -> Result<Aggregation> {
    let live: Vec<usize> = (0..updates.len())
        .filter(|&i| !updates[i].skipped)
        .collect();
    let mut weights = vec![0.0; updates.len()];
    let mut tau = vec![None; updates.len()];
    if live.is_empty() {
        log::warn!("every client skipped the round; the global model is unchanged");
        return Ok(Aggregation {
            params: theta_prev.clone(),
            weights,
            tau,
            influence_bounds: None,
        });
    }
    let mut influence_bounds = None;
    if config.active().model {
        let b = &config.boost;
        let norms: Vec<f64> = live.iter().map(|&i| updates[i].delta.norm()).collect();
        let summaries: Vec<FairnessSummary> = live.iter().map(|&i| updates[i].summary).collect();
        let trust = trust_scores(&norms, &summaries, b.lambda_s, b.gamma, b.trust_form)?;
        for (k, &i) in live.iter().enumerate() {
            weights[i] = trust.weights[k];
            tau[i] = Some(trust.tau[k]);
        }
        if b.lambda_s > 0.0 {
            let bounds = match b.trust_form {
                TrustForm::Rational => {
                    let mass: f64 = live
                        .iter()
                        .zip(&trust.tau)
                        .map(|(&i, t)| updates[i].summary.num_labeled as f64 * t)
                        .sum();
                    updates
                        .iter()
                        .map(|u| u.summary.num_labeled as f64 / (b.lambda_s * mass))
                        .collect()
                }
                TrustForm::Exponential => {
                    let mass: f64 = trust.tau.iter().sum();
                    vec![1.0 / (b.lambda_s * mass); updates.len()]
                }
            };
            influence_bounds = Some(bounds);
        }
    } else {
        let total: f64 = live
            .iter()
            .map(|&i| updates[i].summary.num_labeled as f64)
            .sum();
        for &i in &live {
            weights[i] = updates[i].summary.num_labeled as f64 / total;
        }
    }
    let mut params = theta_prev.clone();
    for &i in &live {
        params.axpy(weights[i], &updates[i].delta);
    }
    if !params.is_finite() {
        return Err(Error::Diverged {
            round: updates.first().map(|u| u.round),
        });
    }
    Ok(Aggregation {
        params,
        weights,
        tau,
        influence_bounds,
    })
}

/// Metrics of one round on the global test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct TrainingResult {
    pub params: ModelParams,
    pub history: Vec<RoundRecord>,
    pub diagnostics: Vec<RoundDiagnostics>,
    /// Aggregation weights per round, one entry per client.
    pub weights: Vec<Vec<f64>>,
    /// Node weights per client after the last round.
    pub final_alpha: Vec<Vec<f64>>,
    /// Largest `|alpha_v - 1|` over all clients, per round.
    pub alpha_deviation: Vec<f64>,
}

/// Test-split node groups used for evaluation.
pub fn eval_groups(graph: &AttributedGraph, groups: &GroupAssignment) -> EvalGroups {
    EvalGroups {
        all: graph.nodes_in(Split::Test).collect(),
        hete: groups.hete_nodes.clone(),
        hete_min: groups.hete_min_nodes.clone(),
    }
}

/// Global predictions: every client runs the model over its own subgraph.
pub fn predict(
    params: &ModelParams,
    clients: &[ClientState],
    num_nodes: usize,
    scheduling: Scheduling,
) -> Result<Vec<usize>> {
    let local = map_range(scheduling, clients.len(), |k| -> Result<Array2<f64>> {
        Ok(clients[k].forward_eval(params)?.logits)
    });
    let mut preds = vec![0; num_nodes];
    for (client, logits) in clients.iter().zip(local) {
        let logits = logits?;
        for (i, &v) in client.subgraph.nodes.iter().enumerate() {
            preds[v] = argmax(logits.row(i).iter().copied());
        }
    }
    Ok(preds)
}

fn participants(config: &TrainConfig, num_clients: usize, round: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..num_clients).collect();
    if config.round.participation >= 1.0 {
        return ids;
    }
    let m =
        ((config.round.participation * num_clients as f64).ceil() as usize).clamp(1, num_clients);
    let mut rng = stream(config.seed, Purpose::Participation, 0, round as u64);
    ids.shuffle(&mut rng);
    ids.truncate(m);
    ids.sort_unstable();
    ids
}

/// Runs all rounds and records metrics (and diagnostics if enabled).
pub fn run_training(
    graph: &AttributedGraph,
    groups: &GroupAssignment,
    clients: Vec<ClientSubgraph>,
    config: &TrainConfig,
) -> Result<TrainingResult> {
    config.validate()?;
    let mut states = clients
        .into_iter()
        .map(|c| ClientState::new(c, config.boost.mu))
        .collect::<Result<Vec<_>>>()?;
    let num_clients = states.len();
    let minority_flags: Vec<bool> = (0..graph.num_classes())
        .map(|c| groups.is_minority_class(c))
        .collect();
    let eval = eval_groups(graph, groups);
    let hardness: Vec<f64> = states
        .iter()
        .map(|s| client_hardness(&s.subgraph, groups))
        .collect();
    let hard = hard_clients(&hardness, config.diagnostics.hard_fraction);
    let seeds: Vec<usize> = {
        let mut s: Vec<usize> = groups
            .hete_nodes
            .iter()
            .chain(&groups.minority_nodes)
            .copied()
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let neighbors = graph.undirected_neighbors();

    let mut init_rng = stream(config.seed, Purpose::Init, 0, 0);
    let mut global = ModelParams::glorot(
        graph.feature_dim(),
        config.model.hidden_dim,
        graph.num_classes(),
        &mut init_rng,
    );
    let mut history = Vec::with_capacity(config.round.rounds);
    let mut diagnostics = Vec::new();
    let mut weight_history = Vec::with_capacity(config.round.rounds);
    let mut alpha_deviation = Vec::with_capacity(config.round.rounds);

    for round in 1..=config.round.rounds {
        let active = participants(config, num_clients, round);
        // the broadcast goes through the checkpoint encoding, like a real transport
        let broadcast = ModelParams::from_checkpoint_bytes(&global.to_checkpoint_bytes())?;
        let ctx = RoundContext {
            config,
            global: &broadcast,
            round,
            is_minority_class: &minority_flags,
        };
        let outcomes = map_mut(config.scheduling, &mut states, |state| {
            if active.binary_search(&state.id()).is_ok() {
                local_round(state, &ctx).map(Some)
            } else {
                Ok(None)
            }
        });
        let mut updates = Vec::new();
        let mut locals = Vec::new();
        for outcome in outcomes {
            if let Some(o) = outcome? {
                updates.push(ClientUpdate::from_bytes(&o.update.to_bytes())?);
                locals.push(o.diagnostics);
            }
        }
        let agg = aggregate(&global, &updates, config)?;

        let mut round_weights = vec![0.0; num_clients];
        for (u, w) in updates.iter().zip(&agg.weights) {
            round_weights[u.client] = *w;
        }
        weight_history.push(round_weights.clone());
        alpha_deviation.push(
            states
                .iter()
                .flat_map(|s| s.alpha.iter())
                .fold(0.0f64, |m, a| m.max((a - 1.0).abs())),
        );

        let new_global = agg.params.clone();
        let preds = predict(&new_global, &states, graph.num_nodes(), config.scheduling)?;
        let report = group_report(&preds, graph.labels(), &eval, graph.num_classes())?;
        log::debug!(
            "round {round}: acc {:?} overall-f1 {:?} hete-min-f1 {:?}",
            report.accuracy,
            report.overall_f1,
            report.hete_min_f1
        );
        history.push(RoundRecord { round, report });

        if config.diagnostics.enabled {
            diagnostics.push(round_diagnostics(
                round,
                &updates,
                &locals,
                &agg,
                &round_weights,
                num_clients,
                &hardness,
                &hard,
                khop_error_profile(
                    &neighbors,
                    &seeds,
                    &eval.all,
                    &preds,
                    graph.labels(),
                    config.diagnostics.max_hop,
                ),
            ));
        }
        global = new_global;
    }
    Ok(TrainingResult {
        params: global,
        history,
        diagnostics,
        weights: weight_history,
        final_alpha: states.iter().map(|s| s.alpha.clone()).collect(),
        alpha_deviation,
    })
}

#[allow(clippy::too_many_arguments)]
fn round_diagnostics(
    round: usize,
    updates: &[ClientUpdate],
    locals: &[Option<LocalDiagnostics>],
    agg: &Aggregation,
    round_weights: &[f64],
    num_clients: usize,
    hardness: &[f64],
    hard: &[usize],
    khop_error: Vec<Option<f64>>,
) -> RoundDiagnostics {
    let mut mass = GradientMass::default();
    let mut mass_raw = GradientMass::default();
    let mut neg = NegEprCounts::default();
    let mut gsd_per_client = vec![None; num_clients];
    let mut minority_parts = Vec::new();
    for (u, local) in updates.iter().zip(locals) {
        if let Some(l) = local {
            mass.merge(&l.mass);
            mass_raw.merge(&l.mass_raw);
            neg.merge(&l.neg_epr);
            gsd_per_client[u.client] = l.mass.gsd();
            minority_parts.push(&l.minority_gradient);
        }
    }
    let g_min = minority_direction(minority_parts);
    let live: Vec<usize> = (0..updates.len())
        .filter(|&i| !updates[i].skipped)
        .collect();
    let mut alignments = vec![None; num_clients];
    let mut cosines = vec![None; num_clients];
    let mut dr = None;
    if let Some(g) = &g_min {
        for &i in &live {
            let a = alignment(&updates[i].delta, g);
            alignments[updates[i].client] = Some(a.inner);
            cosines[updates[i].client] = a.cosine;
        }
        if !live.is_empty() {
            let deltas: Vec<&ModelParams> = live.iter().map(|&i| &updates[i].delta).collect();
            let weights: Vec<f64> = live.iter().map(|&i| agg.weights[i]).collect();
            dr = Some(dilution_ratio(&deltas, &weights, g, DR_EPSILON));
        }
    }
    let mut trust = vec![None; num_clients];
    let mut update_norms = vec![None; num_clients];
    for (i, u) in updates.iter().enumerate() {
        trust[u.client] = agg.tau[i];
        if !u.skipped {
            update_norms[u.client] = Some(u.delta.norm());
        }
    }
    let influence_bound_ok = agg.influence_bounds.as_ref().map(|bounds| {
        live.iter().all(|&i| {
            let influence = agg.weights[i] * updates[i].delta.norm();
            influence <= bounds[i] * (1.0 + 1e-12)
        })
    });
    let (neg_min, neg_maj) = neg.ratios();
    RoundDiagnostics {
        round,
        gsd: mass.gsd(),
        gsd_raw: mass_raw.gsd(),
        gsd_per_client,
        neg_epr_ratio_minority: neg_min,
        neg_epr_ratio_majority: neg_maj,
        dr,
        alignments,
        alignment_cosines: cosines,
        trust,
        weights: round_weights.to_vec(),
        update_norms,
        influence_bound_ok,
        hardness_per_client: hardness.to_vec(),
        hard_clients: hard.to_vec(),
        khop_error,
    }
}
