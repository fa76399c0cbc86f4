//! Independent reference implementations used as test oracles. They favour
//! obviousness over speed and share no code with the library beyond its
//! data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use boundnet::scoring::{prune_dominated, VarCache};
use boundnet::{
    BayesNet, CategoricalDataset, Dag, FamilyScore, ParentSetCache, State, UndirectedGraph, Variable, MISSING,
};
use rand::Rng;

/// Random dataset with arities in `2..=max_arity` and each cell missing
/// with probability `missing`.
pub fn random_dataset<R: Rng>(n: usize, d: usize, max_arity: usize, missing: f64, rng: &mut R) -> CategoricalDataset {
    let vars: Vec<Variable> = (0..n)
        .map(|v| Variable::with_arity(format!("V{v}"), rng.random_range(2..=max_arity)))
        .collect();
    let rows: Vec<Vec<State>> = (0..d)
        .map(|_| {
            vars.iter()
                .map(|v| {
                    if rng.random_bool(missing) {
                        MISSING
                    } else {
                        rng.random_range(0..v.arity()) as State
                    }
                })
                .collect()
        })
        .collect();
    CategoricalDataset::from_rows(vars, &rows).unwrap()
}

/// Random dataset with planted dependencies: each variable copies an
/// earlier one with some probability, otherwise is uniform noise.
pub fn correlated_dataset<R: Rng>(n: usize, d: usize, rng: &mut R) -> CategoricalDataset {
    let vars: Vec<Variable> = (0..n).map(|v| Variable::with_arity(format!("V{v}"), 2)).collect();
    let sources: Vec<Option<(usize, usize)>> = (0..n)
        .map(|v| (v >= 2).then(|| (rng.random_range(0..v), rng.random_range(0..v))))
        .collect();
    let rows: Vec<Vec<State>> = (0..d)
        .map(|_| {
            let mut row = vec![0 as State; n];
            for v in 0..n {
                row[v] = match sources[v] {
                    Some((a, b)) if rng.random_bool(0.8) => row[a] ^ row[b],
                    _ => rng.random_range(0..2),
                };
            }
            row
        })
        .collect();
    CategoricalDataset::from_rows(vars, &rows).unwrap()
}

/// Textbook BIC: count the rows where the whole family is observed, then
/// `Σ N_xπ ln(N_xπ/N_π) − (ln N / 2)(|X|−1)·Π|Pa|`.
pub fn naive_bic(ds: &CategoricalDataset, child: usize, parents: &[usize]) -> f64 {
    let mut joint: HashMap<(Vec<State>, State), f64> = HashMap::new();
    let mut marginal: HashMap<Vec<State>, f64> = HashMap::new();
    let mut n = 0.0;
    for r in 0..ds.n_rows() {
        let x = ds.cell(r, child);
        let config: Vec<State> = parents.iter().map(|&p| ds.cell(r, p)).collect();
        if x == MISSING || config.contains(&MISSING) {
            continue;
        }
        n += 1.0;
        *joint.entry((config.clone(), x)).or_default() += 1.0;
        *marginal.entry(config).or_default() += 1.0;
    }
    let ll: f64 = joint
        .iter()
        .map(|((config, _), &c)| c * (c / marginal[config]).ln())
        .sum();
    let q: f64 = parents.iter().map(|&p| ds.arity(p) as f64).product();
    ll - (f64::ln(n) / 2.0) * (ds.arity(child) as f64 - 1.0) * q
}

/// Every subset of `items` with at most `max` elements, sorted.
pub fn subsets(items: &[usize], max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << items.len()) {
        if mask.count_ones() as usize <= max {
            out.push(
                items
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &v)| v)
                    .collect(),
            );
        }
    }
    out
}

/// Cache holding every parent set up to size `k`, scored by the naive BIC
/// and pruned.
pub fn complete_cache(ds: &CategoricalDataset, k: usize) -> ParentSetCache {
    let n = ds.n_vars();
    let vars = (0..n)
        .map(|child| {
            let others: Vec<usize> = (0..n).filter(|&v| v != child).collect();
            let entries = subsets(&others, k)
                .into_iter()
                .map(|parents| FamilyScore {
                    child,
                    score: naive_bic(ds, child, &parents),
                    parents,
                })
                .collect();
            VarCache::new(prune_dominated(entries))
        })
        .collect();
    ParentSetCache::new(k, vars)
}

pub fn acyclic(parents: &[Vec<usize>]) -> bool {
    let n = parents.len();
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(v: usize, parents: &[Vec<usize>], state: &mut [u8]) -> bool {
        match state[v] {
            1 => return false,
            2 => return true,
            _ => {}
        }
        state[v] = 1;
        for &p in &parents[v] {
            if !visit(p, parents, state) {
                return false;
            }
        }
        state[v] = 2;
        true
    }
    let mut state = vec![0u8; n];
    (0..n).all(|v| visit(v, parents, &mut state))
}

/// Best total naive BIC over every DAG on the dataset's variables.
pub fn best_dag_by_enumeration(ds: &CategoricalDataset) -> f64 {
    let n = ds.n_vars();
    let options: Vec<Vec<(Vec<usize>, f64)>> = (0..n)
        .map(|child| {
            let others: Vec<usize> = (0..n).filter(|&v| v != child).collect();
            subsets(&others, n)
                .into_iter()
                .map(|p| {
                    let s = naive_bic(ds, child, &p);
                    (p, s)
                })
                .collect()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; n];
    loop {
        let parents: Vec<Vec<usize>> = (0..n).map(|v| options[v][choice[v]].0.clone()).collect();
        if acyclic(&parents) {
            let score: f64 = (0..n).map(|v| options[v][choice[v]].1).sum();
            best = best.max(score);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            choice[i] += 1;
            if choice[i] < options[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Moral graph as adjacency sets, built from parent lists.
pub fn moralize(parents: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let n = parents.len();
    let mut adj = vec![BTreeSet::new(); n];
    for (v, ps) in parents.iter().enumerate() {
        for (i, &a) in ps.iter().enumerate() {
            adj[a].insert(v);
            adj[v].insert(a);
            for &b in &ps[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    adj
}

/// Treewidth as the minimum over all elimination orders of the largest
/// neighbourhood at elimination time.
pub fn treewidth_by_permutations(adj: &[BTreeSet<usize>]) -> usize {
    let n = adj.len();
    if n == 0 {
        return 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = usize::MAX;
    loop {
        let mut g = adj.to_vec();
        let mut width = 0;
        for &v in &order {
            let nb: Vec<usize> = g[v].iter().copied().collect();
            width = width.max(nb.len());
            for &a in &nb {
                g[a].remove(&v);
                for &b in &nb {
                    if a != b {
                        g[a].insert(b);
                    }
                }
            }
            g[v].clear();
        }
        best = best.min(width);
        // next lexicographic permutation
        let Some(i) = (0..n - 1).rev().find(|&i| order[i] < order[i + 1]) else {
            return best;
        };
        let j = (i + 1..n).rev().find(|&j| order[j] > order[i]).unwrap();
        order.swap(i, j);
        order[i + 1..].reverse();
    }
}

pub fn graph_from(adj: &[BTreeSet<usize>]) -> UndirectedGraph {
    let mut g = UndirectedGraph::new(adj.len());
    for (a, nb) in adj.iter().enumerate() {
        for &b in nb {
            if a < b {
                g.add_edge(a, b);
            }
        }
    }
    g
}

/// Full joint table of a network: every assignment with its probability,
/// computed by direct CPT lookups.
pub fn joint_table(net: &BayesNet) -> Vec<(Vec<State>, f64)> {
    let n = net.n_vars();
    let arities = net.arities();
    let mut out = Vec::new();
    let mut a = vec![0 as State; n];
    loop {
        let mut p = 1.0;
        for v in 0..n {
            let mut row = 0usize;
            for &q in net.dag().parents(v) {
                row = row * arities[q] + a[q] as usize;
            }
            p *= net.cpt(v)[row * arities[v] + a[v] as usize];
        }
        out.push((a.clone(), p));
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            a[i] += 1;
            if (a[i] as usize) < arities[i] {
                break;
            }
            a[i] = 0;
        }
    }
}

pub fn consistent(assignment: &[State], evidence: &[State]) -> bool {
    assignment.iter().zip(evidence).all(|(&a, &e)| e == MISSING || a == e)
}

pub fn enum_prob_evidence(table: &[(Vec<State>, f64)], evidence: &[State]) -> f64 {
    table
        .iter()
        .filter(|(a, _)| consistent(a, evidence))
        .map(|(_, p)| p)
        .sum()
}

pub fn enum_marginal(table: &[(Vec<State>, f64)], evidence: &[State], target: usize, arity: usize) -> Vec<f64> {
    let mut dist = vec![0.0; arity];
    for (a, p) in table {
        if consistent(a, evidence) {
            dist[a[target] as usize] += p;
        }
    }
    let z: f64 = dist.iter().sum();
    dist.iter().map(|d| d / z).collect()
}

pub fn enum_max(table: &[(Vec<State>, f64)], evidence: &[State]) -> f64 {
    table
        .iter()
        .filter(|(a, _)| consistent(a, evidence))
        .map(|(_, p)| *p)
        .fold(0.0, f64::max)
}

/// Parent lists of a fully assigned DAG.
pub fn parent_lists(dag: &Dag) -> Vec<Vec<usize>> {
    (0..dag.n()).map(|v| dag.parents(v).to_vec()).collect()
}
