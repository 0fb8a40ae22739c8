use boostfgl::graph::{AttributedGraph, Split};
use boostfgl::partition::{client_node_sets, louvain, modularity, Partition};
use ndarray::Array2;
use proptest::prelude::*;

fn graph(n: usize, undirected: &[(usize, usize)]) -> AttributedGraph {
    let edges = undirected.iter().flat_map(|&(u, v)| [(u, v), (v, u)]);
    AttributedGraph::new(
        1,
        Array2::zeros((n, 1)),
        vec![Some(0); n],
        vec![Split::Train; n],
        edges,
    )
    .unwrap()
}

/// Every set partition of `0..n` as a restricted growth string.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for c in 0..=next {
            prefix.push(c);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

/// `Q = 1/(2m) sum_ij [A_ij - k_i k_j / 2m] [c_i = c_j]` on a dense matrix.
fn dense_modularity(n: usize, undirected: &[(usize, usize)], community: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in undirected {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if community[i] == community[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

fn bridged_cliques() -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for block in [0usize, 4] {
        for i in 0..4 {
            for j in i + 1..4 {
                e.push((block + i, block + j));
            }
        }
    }
    e.push((3, 4));
    e
}

#[test]
fn bell_numbers() {
    assert_eq!(set_partitions(3).len(), 5);
    assert_eq!(set_partitions(8).len(), 4140);
}

#[test]
fn modularity_matches_dense_oracle_on_all_partitions_of_eight_nodes() {
    let edges = bridged_cliques();
    let g = graph(8, &edges);
    for p in set_partitions(8) {
        let got = modularity(&g, &Partition::from_assignment(&p)).unwrap();
        let want = dense_modularity(8, &edges, &p);
        assert!((got - want).abs() < 1e-12, "{p:?}: {got} vs {want}");
    }
}

#[test]
fn louvain_recovers_the_two_cliques() {
    let edges = bridged_cliques();
    let g = graph(8, &edges);
    let best = set_partitions(8)
        .into_iter()
        .max_by(|a, b| dense_modularity(8, &edges, a).total_cmp(&dense_modularity(8, &edges, b)))
        .unwrap();
    assert_eq!(best, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    for seed in 0..10 {
        let p = louvain(&g, seed);
        assert_eq!(p.num_communities(), 2, "seed {seed}");
        let c = p.community_of();
        assert!(c[..4].iter().all(|&x| x == c[0]));
        assert!(c[4..].iter().all(|&x| x == c[4]));
        let q = modularity(&g, &p).unwrap();
        assert!((q - dense_modularity(8, &edges, &best)).abs() < 1e-12);
    }
}

#[test]
fn triangle_optimum_is_one_community() {
    let edges = [(0, 1), (1, 2), (0, 2)];
    let best = set_partitions(3)
        .into_iter()
        .max_by(|a, b| dense_modularity(3, &edges, a).total_cmp(&dense_modularity(3, &edges, b)))
        .unwrap();
    assert_eq!(best, vec![0, 0, 0]);
    assert_eq!(louvain(&graph(3, &edges), 0).num_communities(), 1);
}

fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..30).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..80)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn louvain_is_valid_deterministic_and_beats_singletons((n, edges) in random_graph(), seed in 0u64..1000) {
        let g = graph(n, &edges);
        let p = louvain(&g, seed);
        prop_assert_eq!(p.community_of().len(), n);
        let k = p.num_communities();
        for c in 0..k {
            prop_assert!(p.community_of().contains(&c));
        }
        let again = louvain(&g, seed);
        prop_assert_eq!(p.community_of(), again.community_of());
        let singletons = Partition::from_assignment(&(0..n).collect::<Vec<_>>());
        if let (Some(q), Some(q0)) = (modularity(&g, &p), modularity(&g, &singletons)) {
            prop_assert!(q >= q0 - 1e-12);
        }
    }

    #[test]
    fn client_sets_partition_the_nodes((n, edges) in random_graph(), k in 1usize..6, seed in 0u64..100) {
        prop_assume!(k <= n);
        let g = graph(n, &edges);
        let sets = client_node_sets(&g, &louvain(&g, seed), k, seed).unwrap();
        prop_assert_eq!(sets.len(), k);
        let mut all: Vec<usize> = sets.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
