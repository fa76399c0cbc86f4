mod common;

use boundnet::eval::{generate_synthetic_net, random_evidence, sample_from_network, testset_ll};
use boundnet::inference::build_junction_tree;
use boundnet::scoring::log_likelihood;
use boundnet::{estimate_parameters, BayesNet, Dag, Evidence, KTree, State, Variable, MISSING};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{enum_marginal, enum_max, enum_prob_evidence, joint_table};

fn random_net(seed: u64) -> (BayesNet, KTree) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let k = rng.random_range(1..=3usize).min(n - 1);
    generate_synthetic_net(n, k, 3, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn queries_match_enumeration(seed in any::<u64>()) {
        let (net, kt) = random_net(seed);
        let jt = build_junction_tree(&net, &kt).unwrap();
        let table = joint_table(&net);
        let arities = net.arities();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..4 {
            let size = rng.random_range(0..net.n_vars());
            let e = random_evidence(&arities, size, &mut rng);
            let p = enum_prob_evidence(&table, e.as_slice());
            let got = jt.prob_evidence(&e).unwrap();
            prop_assert!((got.prob - p).abs() < 1e-10);
            if p == 0.0 {
                continue;
            }
            for (t, &arity) in arities.iter().enumerate() {
                let m = jt.marginal(&e, t).unwrap();
                let expected = enum_marginal(&table, e.as_slice(), t, arity);
                for (a, b) in m.iter().zip(&expected) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
                prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let all = jt.marginals(&e).unwrap();
            for (t, m) in all.iter().enumerate() {
                let expected = enum_marginal(&table, e.as_slice(), t, arities[t]);
                for (a, b) in m.iter().zip(&expected) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
            let mpe = jt.mpe(&e).unwrap();
            let best = enum_max(&table, e.as_slice());
            let value = net.joint_log_prob(&mpe.assignment).exp();
            prop_assert!((value - best).abs() <= 1e-12 * best.max(1e-300));
            prop_assert!((mpe.log_prob.exp() - best).abs() <= 1e-9 * best);
            for (v, s) in e.observed() {
                prop_assert_eq!(mpe.assignment[v], s);
            }
        }
    }

    #[test]
    fn evidence_probability_laws(seed in any::<u64>()) {
        let (net, kt) = random_net(seed);
        let jt = build_junction_tree(&net, &kt).unwrap();
        let n = net.n_vars();
        prop_assert!((jt.prob_evidence(&Evidence::empty(n)).unwrap().prob - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let e = random_evidence(&net.arities(), rng.random_range(0..n), &mut rng);
        let base = jt.prob_evidence(&e).unwrap().prob;
        let free: Vec<usize> = (0..n).filter(|&v| e.get(v).is_none()).collect();
        if let Some(&x) = free.first() {
            let mut total = 0.0;
            for s in 0..net.arity(x) {
                let mut more = e.clone();
                more.set(x, s as State);
                let p = jt.prob_evidence(&more).unwrap().prob;
                prop_assert!(p <= base + 1e-12);
                total += p;
            }
            prop_assert!((total - base).abs() < 1e-9);
        }
    }

    #[test]
    fn testset_ll_is_sum_of_row_evidence(seed in any::<u64>()) {
        let (net, kt) = random_net(seed);
        let jt = build_junction_tree(&net, &kt).unwrap();
        let ds = sample_from_network(&net, 30, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let ll = testset_ll(&net, &ds).unwrap();
        let sum: f64 = (0..ds.n_rows())
            .map(|r| jt.prob_evidence(&Evidence::from_row(ds.row(r))).unwrap().log)
            .sum();
        prop_assert!((ll - sum).abs() < 1e-9 * ll.abs().max(1.0));
    }
}

#[test]
fn ml_empty_dag_testset_ll_is_empty_family_ll() {
    let (net, _) = random_net(4);
    let ds = sample_from_network(&net, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let empty = Dag::from_parents(vec![Vec::new(); ds.n_vars()]).unwrap();
    let fitted = estimate_parameters(&ds, &empty, 0.0).unwrap();
    let expected: f64 = (0..ds.n_vars()).map(|v| log_likelihood(&ds, v, &[]).unwrap().ll).sum();
    assert!((testset_ll(&fitted, &ds).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn long_chain_does_not_underflow() {
    let n = 5000;
    let vars: Vec<Variable> = (0..n).map(|v| Variable::with_arity(format!("V{v}"), 2)).collect();
    let parents: Vec<Vec<usize>> = (0..n).map(|v| if v == 0 { vec![] } else { vec![v - 1] }).collect();
    let cpts = (0..n)
        .map(|v| {
            if v == 0 {
                vec![0.5, 0.5]
            } else {
                vec![0.9, 0.1, 0.2, 0.8]
            }
        })
        .collect();
    let net = BayesNet::new(vars, Dag::from_parents(parents).unwrap(), cpts).unwrap();
    let mut kt = KTree::new(1, &[0, 1]).unwrap();
    for v in 2..n {
        kt.add_node(v, &[v - 1]).unwrap();
    }
    let jt = build_junction_tree(&net, &kt).unwrap();
    let full = Evidence::from_row(vec![1; n]);
    let expected = 0.5f64.ln() + (n - 1) as f64 * 0.8f64.ln();
    let got = jt.prob_evidence(&full).unwrap();
    assert!((got.log - expected).abs() < 1e-8);
    assert_eq!(got.prob, 0.0);
    let m = jt.marginal(&Evidence::from_pairs(n, &[(0, 1)]), n - 1).unwrap();
    assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn query_cost_grows_linearly() {
    // same k and arity, n doubles: cell touches stay within c·n·2^(k+1)
    let k = 3;
    let bound = |n: usize| 8 * n * (1 << (k + 1));
    for n in [50usize, 100, 200, 400] {
        let (net, kt) = generate_synthetic_net(n, k, 2, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
        let jt = build_junction_tree(&net, &kt).unwrap();
        let e = Evidence::from_pairs(n, &[(0, 1), (n / 2, 0)]);
        let (_, marginal) = jt.marginal_with_stats(&e, n - 1).unwrap();
        let (_, prob) = jt.prob_evidence_with_stats(&e).unwrap();
        assert!(
            (marginal.cell_touches as usize) <= bound(n),
            "n={n}: {}",
            marginal.cell_touches
        );
        assert!((prob.cell_touches as usize) <= bound(n));
    }
}

#[test]
fn sampling_matches_chain_marginal() {
    let vars = vec![Variable::with_arity("A", 2), Variable::with_arity("B", 2)];
    let dag = Dag::from_parents(vec![vec![], vec![0]]).unwrap();
    let net = BayesNet::new(vars, dag, vec![vec![0.7, 0.3], vec![0.9, 0.1, 0.2, 0.8]]).unwrap();
    let ds = sample_from_network(&net, 100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ones = ds.column(1).iter().filter(|&&s| s == 1).count() as f64 / 100_000.0;
    assert!((ones - 0.31).abs() < 0.01, "{ones}");
}

#[test]
fn evidence_variable_marginal_is_point_mass() {
    let (net, kt) = random_net(12);
    let jt = build_junction_tree(&net, &kt).unwrap();
    let mut e = Evidence::empty(net.n_vars());
    e.set(0, (net.arity(0) - 1) as State);
    let m = jt.marginal(&e, 0).unwrap();
    for (s, &p) in m.iter().enumerate() {
        assert_eq!(p, if s == net.arity(0) - 1 { 1.0 } else { 0.0 });
    }
    // full evidence: mpe returns the evidence itself
    let row: Vec<State> = (0..net.n_vars()).map(|_| 0).collect();
    let full = Evidence::from_row(row.clone());
    assert_eq!(jt.mpe(&full).unwrap().assignment, row);
    assert!(!row.contains(&MISSING));
}
