//! Anytime bounded-treewidth structure learners.
//!
//! Both learners grow a DAG one variable at a time while maintaining a k-tree
//! whose cliques contain every moral edge. k-greedy follows a random variable
//! order; k-MAX instead inserts, at each step, the variable whose best
//! feasible parent set is closest to its best cached one (the `m` score).
//!
//! Iterations are independent restarts. Iteration `i` draws all of its
//! randomness from `derive_seed(seed, i)`, so the best result over a fixed
//! number of iterations does not depend on how many workers ran them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::exactlearn::exact_learn;
use crate::ktree::{Dag, KTree};
use crate::scoring::{FamilyScore, ParentSetCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMax,
    KGreedy,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::KMax => "kmax",
            Algorithm::KGreedy => "kgreedy",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmax" | "k-max" => Ok(Algorithm::KMax),
            "kgreedy" | "k-greedy" => Ok(Algorithm::KGreedy),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub k: usize,
    pub time_budget: Option<Duration>,
    pub max_iterations: Option<u64>,
    pub seed: u64,
    pub workers: usize,
}

impl LearnerConfig {
    pub fn iterations(k: usize, max_iterations: u64, seed: u64) -> Self {
        LearnerConfig {
            k,
            time_budget: None,
            max_iterations: Some(max_iterations),
            seed,
            workers: 1,
        }
    }

    pub fn timed(k: usize, budget: Duration, seed: u64) -> Self {
        LearnerConfig {
            k,
            time_budget: Some(budget),
            max_iterations: None,
            seed,
            workers: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("treewidth bound k must be at least 1".into()));
        }
        if self.time_budget.is_none() && self.max_iterations.is_none() {
            return Err(Error::InvalidArgument("set a time budget or an iteration limit".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub dag: Dag,
    pub ktree: KTree,
    pub score: f64,
    /// Completed iterations.
    pub iterations: u64,
    /// Index of the iteration that produced `dag`.
    pub best_iteration: u64,
    /// Score of every completed iteration, ordered by iteration index.
    pub per_iteration_scores: Vec<f64>,
    pub elapsed: Duration,
}

/// `(scC - scW) / (scB - scW)`; 1 when the cache has a single score level.
pub fn m_score(current: f64, best: f64, worst: f64) -> Result<f64> {
    if !(worst <= current && current <= best) {
        return Err(Error::InvalidArgument(format!(
            "m score needs worst <= current <= best, got {worst} / {current} / {best}"
        )));
    }
    if best == worst {
        return Ok(1.0);
    }
    Ok((current - worst) / (best - worst))
}

fn sorted_subset(small: &[usize], big: &[usize]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

fn pick<R: Rng + ?Sized, T: Clone>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())].clone()
}

/// Chooses `k + 1` variables (seeded by a uniform pick, then grown from
/// candidate parents of the chosen ones), learns their optimal DAG exactly
/// and wraps them in the initial clique.
pub fn kmax_init<R: Rng + ?Sized>(cache: &ParentSetCache, k: usize, rng: &mut R) -> Result<(Dag, KTree)> {
    let n = cache.n_vars();
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} variables cannot host a clique of {} nodes",
            k + 1
        )));
    }
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut in_chosen = vec![false; n];
    in_chosen[first] = true;
    let mut pool: BTreeSet<usize> = BTreeSet::new();
    let add_candidates = |v: usize, pool: &mut BTreeSet<usize>| {
        for e in cache.entries(v) {
            pool.extend(e.parents.iter().copied());
        }
    };
    add_candidates(first, &mut pool);
    while chosen.len() < k + 1 {
        let open: Vec<usize> = pool.iter().copied().filter(|&v| !in_chosen[v]).collect();
        let next = if open.is_empty() {
            let rest: Vec<usize> = (0..n).filter(|&v| !in_chosen[v]).collect();
            pick(rng, &rest)
        } else {
            pick(rng, &open)
        };
        in_chosen[next] = true;
        chosen.push(next);
        add_candidates(next, &mut pool);
    }
    let dag = exact_learn(cache, &chosen)?;
    let kt = KTree::new(k, &chosen)?;
    Ok((dag, kt))
}

/// Variables whose parent set may still change, with the position of their
/// best feasible cache entry.
struct Frontier<'a> {
    cache: &'a ParentSetCache,
    k: usize,
    placed: Vec<bool>,
    /// Index into the variable's cache of its best feasible entry.
    current: Vec<usize>,
}

impl<'a> Frontier<'a> {
    fn new(cache: &'a ParentSetCache, k: usize, kt: &KTree) -> Self {
        let n = cache.n_vars();
        let mut placed = vec![false; n];
        for &v in kt.nodes() {
            placed[v] = true;
        }
        let mut f = Frontier {
            cache,
            k,
            placed,
            current: vec![usize::MAX; n],
        };
        f.refresh(&kt.cliques()[0]);
        f
    }

    /// Re-scans unplaced caches against a newly created (k+1)-clique. Only
    /// entries above the current best can improve it.
    fn refresh(&mut self, clique: &[usize]) {
        for v in 0..self.placed.len() {
            if self.placed[v] {
                continue;
            }
            let entries = self.cache.entries(v);
            let limit = self.current[v].min(entries.len());
            if let Some(j) = entries[..limit]
                .iter()
                .position(|e| e.parents.len() <= self.k && sorted_subset(&e.parents, clique))
            {
                self.current[v] = j;
            }
        }
    }

    fn entry(&self, v: usize) -> &'a FamilyScore {
        &self.cache.entries(v)[self.current[v]]
    }
}

fn attach<R: Rng + ?Sized>(kt: &mut KTree, node: usize, parents: &[usize], rng: &mut R) -> Result<usize> {
    let hosts = kt.hosting_kcliques(parents);
    if hosts.is_empty() {
        return Err(Error::KTree(format!("no k-clique hosts {parents:?}")));
    }
    let host = pick(rng, &hosts);
    kt.add_node(node, &host)
}

fn expired(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

fn kmax_run<R: Rng + ?Sized>(
    cache: &ParentSetCache,
    k: usize,
    rng: &mut R,
    deadline: Option<Instant>,
) -> Result<Option<(Dag, KTree)>> {
    let (mut dag, mut kt) = kmax_init(cache, k, rng)?;
    let n = cache.n_vars();
    let mut frontier = Frontier::new(cache, k, &kt);
    let mut ties = Vec::new();
    for _ in k + 1..n {
        if expired(deadline) {
            return Ok(None);
        }
        let mut best_m = f64::NEG_INFINITY;
        ties.clear();
        for v in (0..n).filter(|&v| !frontier.placed[v]) {
            let vc = &cache.vars[v];
            let m = m_score(frontier.entry(v).score, vc.best, vc.worst)?;
            if m > best_m {
                best_m = m;
                ties.clear();
                ties.push(v);
            } else if m == best_m {
                ties.push(v);
            }
        }
        let x = pick(rng, &ties);
        let entry = frontier.entry(x);
        dag.assign(x, entry.parents.clone(), entry.score)?;
        let c = attach(&mut kt, x, &entry.parents, rng)?;
        frontier.placed[x] = true;
        frontier.refresh(&kt.cliques()[c]);
    }
    Ok(Some((dag, kt)))
}

fn kgreedy_run<R: Rng + ?Sized>(
    cache: &ParentSetCache,
    k: usize,
    rng: &mut R,
    deadline: Option<Instant>,
) -> Result<Option<(Dag, KTree)>> {
    let n = cache.n_vars();
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} variables cannot host a clique of {} nodes",
            k + 1
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut dag = exact_learn(cache, &order[..=k])?;
    let mut kt = KTree::new(k, &order[..=k])?;
    for &x in &order[k + 1..] {
        if expired(deadline) {
            return Ok(None);
        }
        let entry = cache
            .entries(x)
            .iter()
            .find(|e| kt.is_feasible(&e.parents))
            .ok_or_else(|| Error::InvalidArgument(format!("variable {x} has no feasible parent set")))?;
        dag.assign(x, entry.parents.clone(), entry.score)?;
        attach(&mut kt, x, &entry.parents, rng)?;
    }
    Ok(Some((dag, kt)))
}

fn single(dag: Dag, ktree: KTree, started: Instant) -> LearnResult {
    let score = dag.score();
    LearnResult {
        dag,
        ktree,
        score,
        iterations: 1,
        best_iteration: 0,
        per_iteration_scores: vec![score],
        elapsed: started.elapsed(),
    }
}

/// One complete k-MAX restart.
pub fn kmax_iteration<R: Rng + ?Sized>(cache: &ParentSetCache, k: usize, rng: &mut R) -> Result<LearnResult> {
    let started = Instant::now();
    let (dag, kt) = kmax_run(cache, k, rng, None)?.expect("no deadline");
    Ok(single(dag, kt, started))
}

/// One complete k-greedy restart.
pub fn kgreedy_iteration<R: Rng + ?Sized>(cache: &ParentSetCache, k: usize, rng: &mut R) -> Result<LearnResult> {
    let started = Instant::now();
    let (dag, kt) = kgreedy_run(cache, k, rng, None)?.expect("no deadline");
    Ok(single(dag, kt, started))
}

/// Runs one iteration with the RNG stream of iteration `index`.
pub fn run_iteration(
    cache: &ParentSetCache,
    k: usize,
    algorithm: Algorithm,
    seed: u64,
    index: u64,
    deadline: Option<Instant>,
) -> Result<Option<(Dag, KTree)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    match algorithm {
        Algorithm::KMax => kmax_run(cache, k, &mut rng, deadline),
        Algorithm::KGreedy => kgreedy_run(cache, k, &mut rng, deadline),
    }
}

#[derive(Default)]
struct Tally {
    best: Option<(f64, u64, Dag, KTree)>,
    scores: Vec<(u64, f64)>,
}

impl Tally {
    fn offer(&mut self, index: u64, dag: Dag, kt: KTree) {
        let score = dag.score();
        self.scores.push((index, score));
        let better = match &self.best {
            None => true,
            Some((s, i, _, _)) => score > *s || (score == *s && index < *i),
        };
        if better {
            self.best = Some((score, index, dag, kt));
        }
    }

    fn merge(&mut self, other: Tally) {
        self.scores.extend(other.scores);
        if let Some((s, i, dag, kt)) = other.best {
            let better = match &self.best {
                None => true,
                Some((bs, bi, _, _)) => s > *bs || (s == *bs && i < *bi),
            };
            if better {
                self.best = Some((s, i, dag, kt));
            }
        }
    }
}

/// Anytime search: restarts until the time budget or iteration limit is hit,
/// spread over `config.workers` threads, returning the best DAG found.
///
/// `k` is clamped to `n - 1` when the cache has too few variables.
pub fn learn(cache: &ParentSetCache, config: &LearnerConfig, algorithm: Algorithm) -> Result<LearnResult> {
    config.validate()?;
    let n = cache.n_vars();
    if n == 0 {
        return Err(Error::Empty("cache has no variables".into()));
    }
    let k = config.k.min(n - 1);
    if k < config.k {
        log::warn!("treewidth bound lowered from {} to {k} for {n} variables", config.k);
    }
    let started = Instant::now();
    let deadline = config.time_budget.map(|t| started + t);
    let limit = config.max_iterations.unwrap_or(u64::MAX);
    let next = AtomicU64::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    let work = || -> Tally {
        let mut tally = Tally::default();
        loop {
            if expired(deadline) || failure.lock().unwrap().is_some() {
                break;
            }
            let index = next.fetch_add(1, Ordering::Relaxed);
            if index >= limit {
                break;
            }
            match run_iteration(cache, k, algorithm, config.seed, index, deadline) {
                Ok(Some((dag, kt))) => tally.offer(index, dag, kt),
                Ok(None) => break,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    break;
                }
            }
        }
        tally
    };

    let workers = config.workers.max(1);
    let tally = if workers == 1 {
        work()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
            let mut total = Tally::default();
            for h in handles {
                total.merge(h.join().expect("learner worker panicked"));
            }
            total
        })
    };
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let Tally { best, mut scores } = tally;
    let (score, best_iteration, dag, ktree) = best.ok_or(Error::NoIterations)?;
    scores.sort_by_key(|&(i, _)| i);
    Ok(LearnResult {
        dag,
        ktree,
        score,
        iterations: scores.len() as u64,
        best_iteration,
        per_iteration_scores: scores.into_iter().map(|(_, s)| s).collect(),
        elapsed: started.elapsed(),
    })
}
