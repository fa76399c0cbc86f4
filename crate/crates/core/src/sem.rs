//! Structural EM with hard completion.
//!
//! Each iteration fills every missing cell with its most probable value
//! under the current network (E step), then rebuilds the parent-set cache,
//! relearns the structure with k-MAX and re-estimates parameters on the
//! completed data (M step). Only one completed copy of the data is alive at
//! a time.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{CategoricalDataset, State, MISSING};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::inference::{build_junction_tree, estimate_parameters, BayesNet, Evidence, JunctionTree};
use crate::ktree::{Dag, KTree};
use crate::learners::{learn, Algorithm, LearnerConfig};
use crate::scoring::{build_cache, CacheConfig};

/// How the E step fills a row with several missing cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImputationMode {
    /// One MPE query per incomplete row.
    #[default]
    Joint,
    /// Each missing cell gets the argmax of its own posterior marginal.
    Independent,
}

impl fmt::Display for ImputationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImputationMode::Joint => "joint",
            ImputationMode::Independent => "independent",
        })
    }
}

impl FromStr for ImputationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(ImputationMode::Joint),
            "independent" => Ok(ImputationMode::Independent),
            other => Err(Error::InvalidArgument(format!("unknown imputation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemConfig {
    pub k: usize,
    /// Time multiplier: `n·t` seconds for the cache, `n·t/10` for the search.
    pub t: f64,
    pub max_sem_iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
    pub mode: ImputationMode,
    /// Work cap on cache exploration per variable, applied on top of the
    /// time budget.
    pub max_explored: usize,
    /// Work cap on learner restarts per M step.
    pub max_learn_iterations: Option<u64>,
    /// When false, all `max_sem_iterations` run even after the structure
    /// repeats, giving a fixed amount of work per run.
    pub stop_when_converged: bool,
}

impl Default for SemConfig {
    fn default() -> Self {
        SemConfig {
            k: 6,
            t: 1.0,
            max_sem_iterations: 20,
            alpha: 1.0,
            seed: 0,
            workers: 1,
            mode: ImputationMode::Joint,
            max_explored: usize::MAX,
            max_learn_iterations: None,
            stop_when_converged: true,
        }
    }
}

impl SemConfig {
    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("treewidth bound k must be at least 1".into()));
        }
        if !self.t.is_finite() || self.t <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "time multiplier {} must be positive",
                self.t
            )));
        }
        if self.max_sem_iterations < 1 {
            return Err(Error::InvalidArgument("need at least one SEM iteration".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument(format!("smoothing {} must be >= 0", self.alpha)));
        }
        Ok(())
    }

    pub fn cache_budget(&self, n: usize) -> Duration {
        Duration::from_secs_f64(n as f64 * self.t)
    }

    pub fn search_budget(&self, n: usize) -> Duration {
        Duration::from_secs_f64(n as f64 * self.t / 10.0)
    }
}

#[derive(Debug, Clone)]
pub struct SemResult {
    pub net: BayesNet,
    /// Companion k-tree of the final structure.
    pub ktree: KTree,
    pub imputed: CategoricalDataset,
    /// Final structure's BIC on the last completed dataset.
    pub score: f64,
    pub iterations: usize,
    pub per_iteration_scores: Vec<f64>,
    pub converged: bool,
    pub elapsed: Duration,
}

/// Random chain over all variables, parameterized on a mode-imputed copy.
pub fn initial_chain<R: Rng + ?Sized>(
    ds: &CategoricalDataset,
    alpha: f64,
    rng: &mut R,
) -> Result<(Dag, KTree, BayesNet)> {
    let n = ds.n_vars();
    if n == 0 {
        return Err(Error::Empty("dataset has no variables".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parents = vec![Vec::new(); n];
    for w in order.windows(2) {
        parents[w[1]].push(w[0]);
    }
    let dag = Dag::from_parents(parents)?;
    let kt = if n == 1 {
        KTree::new(0, &order)?
    } else {
        let mut kt = KTree::new(1, &order[..2])?;
        for w in order[1..].windows(2) {
            kt.add_node(w[1], &[w[0]])?;
        }
        kt
    };
    let net = estimate_parameters(&ds.mode_imputed(), &dag, alpha)?;
    Ok((dag, kt, net))
}

const E_STEP_BLOCK: usize = 4096;

fn complete_row(jt: &JunctionTree, row: Vec<State>, mode: ImputationMode) -> Result<Vec<State>> {
    let evidence = Evidence::from_row(row);
    let filled = match mode {
        ImputationMode::Joint => jt.mpe(&evidence)?.assignment,
        ImputationMode::Independent => {
            let marginals = jt.marginals(&evidence)?;
            let mut row = evidence.as_slice().to_vec();
            for (v, s) in row.iter_mut().enumerate() {
                if *s == MISSING {
                    let dist = &marginals[v];
                    let mut best = 0;
                    for x in 1..dist.len() {
                        if dist[x] > dist[best] {
                            best = x;
                        }
                    }
                    *s = best as State;
                }
            }
            row
        }
    };
    Ok(filled)
}

/// E step: fills every missing cell with its most probable value under
/// `net`. Rows are processed concurrently on `workers` threads; the result
/// does not depend on the thread count.
pub fn hard_em_complete(
    ds: &CategoricalDataset,
    net: &BayesNet,
    kt: &KTree,
    mode: ImputationMode,
    workers: usize,
) -> Result<CategoricalDataset> {
    if net.n_vars() != ds.n_vars() {
        return Err(Error::InvalidArgument(
            "network and dataset disagree on variables".into(),
        ));
    }
    let rows = ds.incomplete_rows();
    let mut out = ds.clone();
    if rows.is_empty() {
        return Ok(out);
    }
    let jt = build_junction_tree(net, kt)?;
    let fill = |&r: &usize| -> Result<Vec<State>> {
        complete_row(&jt, ds.row(r), mode).map_err(|e| match e {
            Error::ImpossibleEvidence { .. } => Error::ImpossibleEvidence {
                hint: "; re-run with smoothing alpha > 0",
            },
            other => other,
        })
    };
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        )
    } else {
        None
    };
    // completions are written back in blocks so the only full-size copy
    // is `out` itself
    for block in rows.chunks(E_STEP_BLOCK) {
        let filled: Vec<Vec<State>> = match &pool {
            None => block.iter().map(fill).collect::<Result<_>>()?,
            Some(pool) => pool.install(|| block.par_iter().map(fill).collect::<Result<_>>())?,
        };
        for (&r, values) in block.iter().zip(filled) {
            for (v, s) in values.into_iter().enumerate() {
                if ds.cell(r, v) == MISSING {
                    out.set_cell(r, v, s);
                }
            }
        }
    }
    Ok(out)
}

/// Structural EM from a random chain until the learned structure repeats
/// or `max_sem_iterations` M steps have run.
///
/// Every M step uses the same learner seed, so once the completed data
/// stops changing the learned structure is reproduced exactly.
pub fn sem_run(ds: &CategoricalDataset, config: &SemConfig) -> Result<SemResult> {
    config.validate()?;
    let started = Instant::now();
    let n = ds.n_vars();
    if n == 0 {
        return Err(Error::Empty("dataset has no variables".into()));
    }
    for v in 0..n {
        if ds.observed_count(v) == 0 {
            return Err(Error::NoObservedStates(ds.variable(v).name.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
    let (_, mut kt, mut net) = initial_chain(ds, config.alpha, &mut rng)?;

    let cache_config = CacheConfig {
        k: config.k,
        time_budget: config.cache_budget(n),
        max_explored: config.max_explored,
        workers: config.workers,
    };
    let learner_config = LearnerConfig {
        k: config.k,
        time_budget: Some(config.search_budget(n)),
        max_iterations: config.max_learn_iterations,
        seed: config.seed,
        workers: config.workers,
    };

    let mut previous: Option<Dag> = None;
    let mut scores = Vec::new();
    let mut converged = false;
    let mut imputed = ds.clone();
    let mut score = f64::NEG_INFINITY;
    for iteration in 1..=config.max_sem_iterations {
        imputed = hard_em_complete(ds, &net, &kt, config.mode, config.workers)?;
        let cache = build_cache(&imputed, &cache_config)?;
        let learned = learn(&cache, &learner_config, Algorithm::KMax)?;
        net = estimate_parameters(&imputed, &learned.dag, config.alpha)?;
        kt = learned.ktree;
        score = learned.score;
        scores.push(score);
        log::info!("SEM iteration {iteration}: score {score:.4}");
        converged = previous.as_ref().is_some_and(|p| p.same_structure(&learned.dag));
        previous = Some(learned.dag);
        if converged && config.stop_when_converged {
            break;
        }
    }
    Ok(SemResult {
        net,
        ktree: kt,
        imputed,
        score,
        iterations: scores.len(),
        per_iteration_scores: scores,
        converged,
        elapsed: started.elapsed(),
    })
}
