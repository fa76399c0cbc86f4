//! Exact structure learning over small variable sets.
//!
//! [`exact_learn`] is the order-based dynamic programme over subsets used to
//! seed the learners' initial clique. [`brute_force_btw_opt`] is a
//! branch-and-bound search over every DAG the cache can build, filtered by
//! exact treewidth; it exists as a test oracle for tiny problems.

use crate::error::{Error, Result};
use crate::ktree::{exact_treewidth, moral_graph, Dag};
use crate::scoring::ParentSetCache;

/// Largest subset [`exact_learn`] accepts.
pub const EXACT_LEARN_LIMIT: usize = 16;

/// Largest network [`brute_force_btw_opt`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Best cached parent set of one variable inside every subset of the
/// other variables (subset-maximization over the cache).
struct BestParents {
    score: Vec<f64>,
    entry: Vec<u32>,
}

fn best_parents(cache: &ParentSetCache, var: usize, local: &[Option<usize>], m: usize) -> BestParents {
    let size = 1usize << m;
    let mut score = vec![f64::NEG_INFINITY; size];
    let mut entry = vec![u32::MAX; size];
    'entries: for (e, fs) in cache.entries(var).iter().enumerate() {
        let mut mask = 0usize;
        for &p in &fs.parents {
            match local.get(p).copied().flatten() {
                Some(bit) => mask |= 1 << bit,
                None => continue 'entries,
            }
        }
        // entries are score-sorted, so the first hit per mask is its best
        if entry[mask] == u32::MAX {
            score[mask] = fs.score;
            entry[mask] = e as u32;
        }
    }
    for bit in 0..m {
        for mask in 0..size {
            if mask & (1 << bit) != 0 {
                let sub = mask ^ (1 << bit);
                if score[sub] > score[mask] {
                    score[mask] = score[sub];
                    entry[mask] = entry[sub];
                }
            }
        }
    }
    BestParents { score, entry }
}

/// Globally optimal DAG over `vars` with respect to the cache restricted to
/// parents inside `vars`. The returned DAG spans all cache variables but
/// assigns only those in `vars`; its score is the sum of their families.
pub fn exact_learn(cache: &ParentSetCache, vars: &[usize]) -> Result<Dag> {
    let m = vars.len();
    if m > EXACT_LEARN_LIMIT {
        return Err(Error::ExactLimit {
            size: m,
            limit: EXACT_LEARN_LIMIT,
        });
    }
    let n = cache.n_vars();
    let mut local = vec![None; n];
    for (i, &v) in vars.iter().enumerate() {
        if v >= n || local[v].is_some() {
            return Err(Error::InvalidArgument(format!("bad or repeated variable {v}")));
        }
        local[v] = Some(i);
    }
    let best: Vec<BestParents> = vars.iter().map(|&v| best_parents(cache, v, &local, m)).collect();
    for (i, b) in best.iter().enumerate() {
        if b.score[0] == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!(
                "cache of variable {} lacks the empty parent set",
                vars[i]
            )));
        }
    }

    let size = 1usize << m;
    let mut opt = vec![f64::NEG_INFINITY; size];
    let mut sink = vec![0u8; size];
    opt[0] = 0.0;
    for w in 1..size {
        let mut bits = w;
        while bits != 0 {
            let s = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let rest = w ^ (1 << s);
            let candidate = opt[rest] + best[s].score[rest];
            if candidate > opt[w] {
                opt[w] = candidate;
                sink[w] = s as u8;
            }
        }
    }

    let mut dag = Dag::new(n);
    let mut w = size - 1;
    while w != 0 {
        let s = sink[w] as usize;
        let rest = w ^ (1 << s);
        let e = &cache.entries(vars[s])[best[s].entry[rest] as usize];
        dag.assign(vars[s], e.parents.clone(), e.score)?;
        w = rest;
    }
    Ok(dag)
}

/// Highest-scoring DAG buildable from the cache whose moral graph has
/// treewidth at most `k`, by exhaustive branch and bound.
pub fn brute_force_btw_opt(cache: &ParentSetCache, k: usize) -> Result<Dag> {
    let n = cache.n_vars();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to {BRUTE_FORCE_LIMIT} variables, got {n}"
        )));
    }
    // optimistic completion bound from variable i onwards
    let mut tail = vec![0.0; n + 1];
    for v in (0..n).rev() {
        tail[v] = tail[v + 1] + cache.vars[v].best;
    }
    struct Search<'a> {
        cache: &'a ParentSetCache,
        k: usize,
        tail: Vec<f64>,
        choice: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn partial(&self, upto: usize) -> Dag {
            let mut dag = Dag::new(self.cache.n_vars());
            for v in 0..upto {
                let e = &self.cache.entries(v)[self.choice[v]];
                dag.assign(v, e.parents.clone(), e.score)
                    .expect("cache entries are valid");
            }
            dag
        }

        fn width_ok(&self, upto: usize) -> bool {
            let mut dag = self.partial(upto);
            for v in upto..dag.n() {
                dag.assign(v, Vec::new(), 0.0).expect("empty parents");
            }
            if !dag.is_acyclic() {
                return false;
            }
            let g = moral_graph(&dag).expect("fully assigned");
            exact_treewidth(&g).expect("below limit") <= self.k
        }

        fn go(&mut self, v: usize, score: f64) {
            let n = self.cache.n_vars();
            if v == n {
                if self.best.as_ref().is_none_or(|(b, _)| score > *b) {
                    self.best = Some((score, self.choice.clone()));
                }
                return;
            }
            for (e, fs) in self.cache.entries(v).iter().enumerate() {
                let bound = score + fs.score + self.tail[v + 1];
                if self.best.as_ref().is_some_and(|(b, _)| bound <= *b) {
                    // entries are sorted, later ones cannot do better
                    break;
                }
                self.choice[v] = e;
                if self.width_ok(v + 1) {
                    self.go(v + 1, score + fs.score);
                }
            }
        }
    }
    let mut search = Search {
        cache,
        k,
        tail,
        choice: vec![0; n],
        best: None,
    };
    search.go(0, 0.0);
    let (_, choice) = search
        .best
        .take()
        .ok_or_else(|| Error::InvalidArgument("no DAG satisfies the treewidth bound".into()))?;
    search.choice = choice;
    Ok(search.partial(n))
}
