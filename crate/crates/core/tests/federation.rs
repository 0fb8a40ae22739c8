use boostfgl::boosting::FairnessSummary;
use boostfgl::config::ExperimentConfig;
use boostfgl::exec::Scheduling;
use boostfgl::experiment::{prepare, Prepared};
use boostfgl::federation::{
    aggregate, run_training, ClientUpdate, Method, TrainConfig, TrainingResult,
};
use boostfgl::gnn::ModelParams;
use boostfgl::graph::Split;
use boostfgl::partition::{assemble_clients, louvain, ClientSubgraph};
use proptest::prelude::*;

fn small() -> (ExperimentConfig, Prepared) {
    let config = ExperimentConfig::default()
        .with_overrides(&[
            "graph.synth.num_nodes=200",
            "federation.rounds=4",
            "model.hidden_dim=8",
            "clients=3",
        ])
        .unwrap();
    let prepared = prepare(&config).unwrap();
    (config, prepared)
}

fn clients(config: &ExperimentConfig, p: &Prepared, seed: u64) -> Vec<ClientSubgraph> {
    assemble_clients(&p.graph, &louvain(&p.graph, seed), config.clients, seed).unwrap()
}

fn train(p: &Prepared, clients: Vec<ClientSubgraph>, tc: &TrainConfig) -> TrainingResult {
    run_training(&p.graph, &p.groups, clients, tc).unwrap()
}

#[test]
fn fedavg_is_boostfgl_with_every_component_off() {
    let (config, p) = small();
    let mut fedavg = config.train_config(0);
    fedavg.round.method = Method::FedAvg;
    let mut off = config.train_config(0);
    off.round.ablation.node = false;
    off.round.ablation.topo = false;
    off.round.ablation.model = false;
    let a = train(&p, clients(&config, &p, 0), &fedavg);
    let b = train(&p, clients(&config, &p, 0), &off);
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    assert_eq!(a.weights, b.weights);
}

#[test]
fn sequential_and_parallel_runs_are_bit_identical() {
    let (config, p) = small();
    let mut seq = config.train_config(3);
    seq.scheduling = Scheduling::Sequential;
    let mut par = seq.clone();
    par.scheduling = Scheduling::Parallel;
    let a = train(&p, clients(&config, &p, 3), &seq);
    let b = train(&p, clients(&config, &p, 3), &par);
    assert_eq!(
        a.params.to_checkpoint_bytes(),
        b.params.to_checkpoint_bytes()
    );
    assert_eq!(a.history, b.history);
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.final_alpha, b.final_alpha);
    for (x, y) in a.diagnostics.iter().zip(&b.diagnostics) {
        assert_eq!(format!("{x:?}"), format!("{y:?}"));
    }
}

#[test]
fn fedavg_weights_follow_labeled_counts() {
    let (config, p) = small();
    let mut tc = config.train_config(1);
    tc.round.method = Method::FedAvg;
    let cs = clients(&config, &p, 1);
    let counts: Vec<f64> = cs.iter().map(|c| c.num_train_labeled() as f64).collect();
    let total: f64 = counts.iter().sum();
    let r = train(&p, cs, &tc);
    for w in &r.weights {
        for (wk, nk) in w.iter().zip(&counts) {
            assert!((wk - nk / total).abs() < 1e-15);
        }
    }
    assert!(r.alpha_deviation.iter().all(|&d| d == 0.0));
}

#[test]
fn trust_weights_are_proportional_to_size_times_trust() {
    let (config, p) = small();
    let tc = config.train_config(2);
    let cs = clients(&config, &p, 2);
    let counts: Vec<f64> = cs.iter().map(|c| c.num_train_labeled() as f64).collect();
    let r = train(&p, cs, &tc);
    for d in &r.diagnostics {
        let raw: Vec<f64> = d
            .trust
            .iter()
            .zip(&counts)
            .map(|(t, n)| t.unwrap() * n)
            .collect();
        let total: f64 = raw.iter().sum();
        for (w, x) in d.weights.iter().zip(&raw) {
            assert!((w - x / total).abs() < 1e-12);
        }
        assert!(d
            .trust
            .iter()
            .all(|t| t.unwrap() > 0.0 && t.unwrap() <= 1.0));
        assert_eq!(d.influence_bound_ok, Some(true));
    }
}

#[test]
fn zero_node_strength_keeps_unit_node_weights() {
    let (config, p) = small();
    let mut tc = config.train_config(0);
    tc.boost.lambda_n = 0.0;
    let r = train(&p, clients(&config, &p, 0), &tc);
    assert!(r.alpha_deviation.iter().all(|&d| d == 0.0));
    assert!(r.final_alpha.iter().flatten().all(|&a| a == 1.0));

    let r = train(&p, clients(&config, &p, 0), &config.train_config(0));
    assert!(r
        .final_alpha
        .iter()
        .flatten()
        .all(|&a| (1.0..=1.5).contains(&a)));
    assert!(r.alpha_deviation.iter().any(|&d| d > 0.0));
}

#[test]
fn client_without_labels_is_skipped() {
    let (config, p) = small();
    let n = p.graph.num_nodes();
    let unlabeled: Vec<usize> = (0..n)
        .filter(|&v| p.graph.split(v) == Split::Test)
        .take(20)
        .collect();
    let rest: Vec<usize> = (0..n).filter(|v| !unlabeled.contains(v)).collect();
    let (a, b) = rest.split_at(rest.len() / 2);
    let cs = vec![
        ClientSubgraph::extract(&p.graph, 0, a.to_vec()),
        ClientSubgraph::extract(&p.graph, 1, unlabeled.clone()),
        ClientSubgraph::extract(&p.graph, 2, b.to_vec()),
    ];
    assert_eq!(cs[1].num_train_labeled(), 0);
    let r = train(&p, cs, &config.train_config(0));
    for w in &r.weights {
        assert_eq!(w[1], 0.0);
        assert!((w[0] + w[2] - 1.0).abs() < 1e-12);
    }
    assert!(r.params.is_finite());
}

#[test]
fn partial_participation_zeroes_absent_clients() {
    let (config, p) = small();
    let mut tc = config.train_config(4);
    tc.round.participation = 0.5;
    let r = train(&p, clients(&config, &p, 4), &tc);
    for w in &r.weights {
        // ceil(0.5 * 3) = 2 participants
        assert_eq!(w.iter().filter(|&&x| x > 0.0).count(), 2);
    }
    let again = train(&p, clients(&config, &p, 4), &tc);
    assert_eq!(r.weights, again.weights);
}

#[test]
fn dp_with_zero_noise_and_loose_clip_changes_nothing() {
    let (config, p) = small();
    let plain = config.train_config(0);
    let mut dp = plain.clone();
    dp.round.dp = Some(boostfgl::federation::DpConfig {
        clip_norm: 1e6,
        noise_std: 0.0,
    });
    let a = train(&p, clients(&config, &p, 0), &plain);
    let b = train(&p, clients(&config, &p, 0), &dp);
    assert_eq!(a.params, b.params);
}

fn summary(n: usize, gap: f64) -> FairnessSummary {
    FairnessSummary {
        minority_difficulty: None,
        majority_difficulty: None,
        minority_acc: Some(1.0 - gap),
        majority_acc: Some(1.0),
        num_labeled: n,
    }
}

fn update(client: usize, value: f64, n: usize, gap: f64) -> ClientUpdate {
    let mut delta = ModelParams::zeros(2, 2, 2);
    for x in delta.values_mut() {
        *x = value;
    }
    ClientUpdate {
        client,
        round: 1,
        delta,
        summary: summary(n, gap),
        skipped: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aggregation_weights_form_a_distribution(
        raw in prop::collection::vec((-2.0f64..2.0, 1usize..500, 0.0f64..1.0, any::<bool>()), 1..8),
        exponential in any::<bool>(),
    ) {
        let mut config = TrainConfig::default();
        if exponential {
            config.boost.trust_form = boostfgl::boosting::TrustForm::Exponential;
        }
        let updates: Vec<ClientUpdate> = raw
            .iter()
            .enumerate()
            .map(|(k, &(x, n, g, skip))| ClientUpdate { skipped: skip, ..update(k, x, n, g) })
            .collect();
        let prev = ModelParams::zeros(2, 2, 2);
        let agg = aggregate(&prev, &updates, &config).unwrap();
        let live = updates.iter().filter(|u| !u.skipped).count();
        let total: f64 = agg.weights.iter().sum();
        if live == 0 {
            prop_assert_eq!(total, 0.0);
            prop_assert_eq!(agg.params, prev);
        } else {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        for (u, w) in updates.iter().zip(&agg.weights) {
            prop_assert!(*w >= 0.0);
            if u.skipped {
                prop_assert_eq!(*w, 0.0);
            }
        }
        // the update norm times weight respects the influence bound
        if let Some(bounds) = &agg.influence_bounds {
            for ((u, w), b) in updates.iter().zip(&agg.weights).zip(bounds) {
                if !u.skipped {
                    prop_assert!(w * u.delta.norm() <= b * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn update_messages_round_trip_bit_exactly(x in -1e300f64..1e300, n in 0usize..10_000, gap in 0.0f64..1.0) {
        let u = update(7, x, n, gap);
        let back = ClientUpdate::from_bytes(&u.to_bytes()).unwrap();
        prop_assert_eq!(back.delta.to_checkpoint_bytes(), u.delta.to_checkpoint_bytes());
        prop_assert_eq!(back, u);
    }
}
