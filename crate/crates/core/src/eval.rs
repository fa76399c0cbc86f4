//! Evaluation metrics, synthetic networks, the network file format and the
//! algorithm comparison harness.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dataset::{CategoricalDataset, MissingMask, State, Variable};
use crate::error::{Error, Result};
use crate::inference::{BayesNet, Evidence, JunctionTree};
use crate::ktree::{is_moral_subgraph, Dag, KTree};
use crate::learners::{learn, Algorithm, LearnerConfig};
use crate::scoring::{build_cache, CacheConfig};

/// Strength of evidence carried by a BIC difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceClass {
    ExtremelyNegative,
    StronglyNegative,
    Negative,
    Neutral,
    Positive,
    StronglyPositive,
    ExtremelyPositive,
}

impl EvidenceClass {
    pub fn flipped(self) -> Self {
        use EvidenceClass::*;
        match self {
            ExtremelyNegative => ExtremelyPositive,
            StronglyNegative => StronglyPositive,
            Negative => Positive,
            Neutral => Neutral,
            Positive => Negative,
            StronglyPositive => StronglyNegative,
            ExtremelyPositive => ExtremelyNegative,
        }
    }

    pub fn label(self) -> &'static str {
        use EvidenceClass::*;
        match self {
            ExtremelyNegative => "extremely negative",
            StronglyNegative => "strongly negative",
            Negative => "negative",
            Neutral => "neutral",
            Positive => "positive",
            StronglyPositive => "strongly positive",
            ExtremelyPositive => "extremely positive",
        }
    }
}

impl fmt::Display for EvidenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Classifies a BIC difference; values on a boundary (2, 6, 10) fall to
/// the weaker class.
pub fn delta_bic_classify(delta: f64) -> EvidenceClass {
    let positive = match delta.abs() {
        d if d > 10.0 => EvidenceClass::ExtremelyPositive,
        d if d > 6.0 => EvidenceClass::StronglyPositive,
        d if d > 2.0 => EvidenceClass::Positive,
        _ => EvidenceClass::Neutral,
    };
    if delta < 0.0 {
        positive.flipped()
    } else {
        positive
    }
}

/// Sum over rows of the log joint probability. Test rows are matched to the
/// network's variables and states by label.
pub fn testset_ll(net: &BayesNet, ds: &CategoricalDataset) -> Result<f64> {
    let ds = ds.recode_to(net.variables())?;
    if !ds.is_complete() {
        return Err(Error::InvalidArgument("test set must be complete".into()));
    }
    Ok((0..ds.n_rows()).map(|r| net.joint_log_prob(&ds.row(r))).sum())
}

/// Draws evidence over `size` distinct variables set to uniform random
/// states.
pub fn random_evidence<R: Rng + ?Sized>(arities: &[usize], size: usize, rng: &mut R) -> Evidence {
    let n = arities.len();
    let mut e = Evidence::empty(n);
    for v in index::sample(rng, n, size.min(n)) {
        e.set(v, rng.random_range(0..arities[v]) as State);
    }
    e
}

/// Mean absolute difference of `P(e)` between two networks over `q` random
/// evidence sets of `evidence_size` variables.
pub fn mae_eval<R: Rng + ?Sized>(
    truth: &JunctionTree,
    learned: &JunctionTree,
    arities: &[usize],
    q: usize,
    evidence_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if truth.n_vars() != learned.n_vars() || truth.n_vars() != arities.len() {
        return Err(Error::InvalidArgument("networks disagree on variables".into()));
    }
    if q == 0 {
        return Err(Error::InvalidArgument("need at least one query".into()));
    }
    let mut total = 0.0;
    for _ in 0..q {
        let e = random_evidence(arities, evidence_size, rng);
        total += (truth.prob_evidence(&e)?.prob - learned.prob_evidence(&e)?.prob).abs();
    }
    Ok(total / q as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImputationAccuracy {
    /// Per incomplete row, the fraction of its missing cells restored
    /// correctly, averaged over incomplete rows.
    pub per_instance: f64,
    /// Correct cells over all missing cells.
    pub per_cell: f64,
    pub missing_cells: usize,
    pub incomplete_rows: usize,
}

pub fn imputation_accuracy(
    original: &CategoricalDataset,
    imputed: &CategoricalDataset,
    mask: &MissingMask,
) -> Result<ImputationAccuracy> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("missing mask is empty".into()));
    }
    if original.n_rows() != imputed.n_rows() || original.n_vars() != imputed.n_vars() {
        return Err(Error::InvalidArgument("datasets have different shapes".into()));
    }
    let mut cells = mask.cells.clone();
    cells.sort_by_key(|c| (c.row, c.var));
    let mut correct_total = 0usize;
    let mut instance_sum = 0.0;
    let mut instances = 0usize;
    for group in cells.chunk_by(|a, b| a.row == b.row) {
        let correct = group
            .iter()
            .filter(|c| imputed.cell(c.row, c.var) == original.cell(c.row, c.var))
            .count();
        correct_total += correct;
        instance_sum += correct as f64 / group.len() as f64;
        instances += 1;
    }
    Ok(ImputationAccuracy {
        per_instance: instance_sum / instances as f64,
        per_cell: correct_total as f64 / cells.len() as f64,
        missing_cells: cells.len(),
        incomplete_rows: instances,
    })
}

fn dirichlet_row<R: Rng + ?Sized>(arity: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..arity).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        return vec![1.0 / arity as f64; arity];
    }
    for p in &mut row {
        *p /= sum;
    }
    row
}

/// Random network of treewidth at most `k_true`: a random k-tree oriented
/// by insertion order, each node taking a random subset of its hosting
/// clique as parents, CPT rows drawn from a flat Dirichlet. Variables are
/// named `X0..`, with arities uniform in `2..=max_arity`.
pub fn generate_synthetic_net<R: Rng + ?Sized>(
    n: usize,
    k_true: usize,
    max_arity: usize,
    rng: &mut R,
) -> Result<(BayesNet, KTree)> {
    if n <= k_true {
        return Err(Error::InvalidArgument(format!("need n > k, got n={n}, k={k_true}")));
    }
    if max_arity < 2 {
        return Err(Error::InvalidArgument("max arity must be at least 2".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut parents = vec![Vec::new(); n];
    let mut kt = KTree::new(k_true, &order[..=k_true])?;
    for i in 1..=k_true {
        for &p in &order[..i] {
            if rng.random_bool(0.5) {
                parents[order[i]].push(p);
            }
        }
    }
    for &node in &order[k_true + 1..] {
        let clique = kt.cliques().choose(rng).expect("k-tree has a clique").clone();
        let drop = rng.random_range(0..clique.len());
        let host: Vec<usize> = clique
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != drop)
            .map(|(_, &v)| v)
            .collect();
        for &p in &host {
            if rng.random_bool(0.5) {
                parents[node].push(p);
            }
        }
        kt.add_node(node, &host)?;
    }
    let variables: Vec<Variable> = (0..n)
        .map(|v| Variable::with_arity(format!("X{v}"), rng.random_range(2..=max_arity)))
        .collect();
    let dag = Dag::from_parents(parents)?;
    let cpts = (0..n)
        .map(|v| {
            let configs: usize = dag.parents(v).iter().map(|&p| variables[p].arity()).product();
            (0..configs)
                .flat_map(|_| dirichlet_row(variables[v].arity(), rng))
                .collect()
        })
        .collect();
    Ok((BayesNet::new(variables, dag, cpts)?, kt))
}

/// Ancestral sampling of `d` complete rows.
pub fn sample_from_network<R: Rng + ?Sized>(net: &BayesNet, d: usize, rng: &mut R) -> Result<CategoricalDataset> {
    if d == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let order = net.dag().topological_order().expect("network DAG is acyclic");
    let n = net.n_vars();
    let mut columns = vec![Vec::with_capacity(d); n];
    let mut row = vec![0 as State; n];
    for _ in 0..d {
        for &v in &order {
            let arity = net.arity(v);
            let start = net.config_index(v, &row) * arity;
            let probs = &net.cpt(v)[start..start + arity];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut state = arity - 1;
            for (s, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    state = s;
                    break;
                }
            }
            // guard against rounding sending mass to a zero-probability tail
            while probs[state] == 0.0 && state > 0 {
                state -= 1;
            }
            row[v] = state as State;
        }
        for (col, &s) in columns.iter_mut().zip(&row) {
            col.push(s);
        }
    }
    CategoricalDataset::new(net.variables().to_vec(), columns)
}

pub const NETWORK_FORMAT: &str = "boundnet-network";
pub const CPT_ORDER: &str = "last_parent_fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkVariable {
    pub name: String,
    pub states: Vec<String>,
    /// Parent names in CPT order.
    pub parents: Vec<String>,
    /// Rows are parent configurations, last parent fastest; one column per
    /// state.
    pub cpt: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTreeSection {
    pub k: usize,
    /// Cliques as variable names, root first.
    pub cliques: Vec<Vec<String>>,
    pub parents: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
}

/// On-disk network: JSON with named variables, parents and flat CPTs, plus
/// an optional companion k-tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub cpt_order: String,
    pub variables: Vec<NetworkVariable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ktree: Option<KTreeSection>,
    pub metadata: NetworkMetadata,
}

impl NetworkFile {
    pub fn from_net(net: &BayesNet, kt: Option<&KTree>, metadata: NetworkMetadata) -> Self {
        let name = |v: usize| net.variables()[v].name.clone();
        let variables = net
            .variables()
            .iter()
            .enumerate()
            .map(|(v, var)| NetworkVariable {
                name: var.name.clone(),
                states: var.states.clone(),
                parents: net.dag().parents(v).iter().map(|&p| name(p)).collect(),
                cpt: net.cpt(v).to_vec(),
            })
            .collect();
        let ktree = kt.map(|kt| KTreeSection {
            k: kt.k(),
            cliques: kt
                .cliques()
                .iter()
                .map(|c| c.iter().map(|&v| name(v)).collect())
                .collect(),
            parents: (0..kt.cliques().len()).map(|i| kt.parent_clique(i)).collect(),
        });
        NetworkFile {
            format: NETWORK_FORMAT.into(),
            cpt_order: CPT_ORDER.into(),
            variables,
            ktree,
            metadata,
        }
    }

    /// Rebuilds the network, and the k-tree when present, validating both.
    pub fn to_net(&self) -> Result<(BayesNet, Option<KTree>)> {
        if self.format != NETWORK_FORMAT {
            return Err(Error::Format(format!("unknown format `{}`", self.format)));
        }
        if self.cpt_order != CPT_ORDER {
            return Err(Error::Format(format!("unsupported cpt_order `{}`", self.cpt_order)));
        }
        let index = |name: &str| -> Result<usize> {
            self.variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };
        let variables: Vec<Variable> = self
            .variables
            .iter()
            .map(|v| Variable::new(v.name.clone(), v.states.clone()))
            .collect();
        let mut parents = Vec::with_capacity(self.variables.len());
        for v in &self.variables {
            let ps = v.parents.iter().map(|p| index(p)).collect::<Result<Vec<_>>>()?;
            if ps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!(
                    "parents of `{}` must be listed in variable order without repeats",
                    v.name
                )));
            }
            parents.push(ps);
        }
        let dag = Dag::from_parents(parents).map_err(|e| Error::Format(e.to_string()))?;
        let cpts = self.variables.iter().map(|v| v.cpt.clone()).collect();
        let net = BayesNet::new(variables, dag, cpts).map_err(|e| Error::Format(e.to_string()))?;
        let kt = match &self.ktree {
            None => None,
            Some(section) => {
                let cliques = section
                    .cliques
                    .iter()
                    .map(|c| c.iter().map(|n| index(n)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let kt = KTree::from_parts(section.k, &cliques, &section.parents)?;
                kt.validate().map_err(Error::KTree)?;
                if !is_moral_subgraph(net.dag(), &kt) {
                    return Err(Error::Format("network does not fit inside its k-tree".into()));
                }
                Some(kt)
            }
        };
        Ok((net, kt))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("network file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Budgets shared by every run of a comparison.
#[derive(Debug, Clone)]
pub struct BenchBudget {
    pub cache_time: Duration,
    pub max_explored: usize,
    pub learn_time: Option<Duration>,
    pub learn_iterations: Option<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub k: usize,
    pub seed: u64,
    pub score: f64,
    pub iterations: u64,
    pub elapsed: f64,
}

/// One algorithm pair on one (dataset, k, seed) cell; `delta` is
/// `score(first) - score(second)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub dataset: String,
    pub k: usize,
    pub seed: u64,
    pub first: Algorithm,
    pub second: Algorithm,
    pub delta: f64,
    pub class: EvidenceClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTally {
    pub first: Algorithm,
    pub second: Algorithm,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub runs: Vec<RunRecord>,
    pub pairs: Vec<PairRecord>,
    pub tallies: Vec<PairTally>,
}

impl BenchReport {
    pub fn runs_tsv(&self) -> String {
        let mut s = String::from("dataset\talgorithm\tk\tseed\tscore\titerations\telapsed_s\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
                r.dataset, r.algorithm, r.k, r.seed, r.score, r.iterations, r.elapsed
            );
        }
        s
    }

    pub fn pairs_tsv(&self) -> String {
        let mut s = String::from("dataset\tk\tseed\tfirst\tsecond\tdelta_bic\tclass\n");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.dataset, p.k, p.seed, p.first, p.second, p.delta, p.class
            );
        }
        s
    }

    /// One `(dataset, k, seed, algorithm, metric, value)` row per number,
    /// for plotting.
    pub fn long_format(&self) -> String {
        let mut s = String::from("dataset\tk\tseed\talgorithm\tmetric\tvalue\n");
        for r in &self.runs {
            for (metric, value) in [
                ("score", r.score),
                ("iterations", r.iterations as f64),
                ("elapsed_s", r.elapsed),
            ] {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{metric}\t{value}",
                    r.dataset, r.k, r.seed, r.algorithm
                );
            }
        }
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}-vs-{}\tdelta_bic\t{}",
                p.dataset, p.k, p.seed, p.first, p.second, p.delta
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for t in &self.tallies {
            let _ = writeln!(
                s,
                "{} vs {}: {} wins, {} ties, {} losses",
                t.first, t.second, t.wins, t.ties, t.losses
            );
        }
        s
    }
}

/// Runs every algorithm on every (dataset, k, seed) cell with one shared
/// cache per (dataset, k), then compares all algorithm pairs. A pair counts
/// as a win or loss only when `|ΔBIC| >= 2`.
pub fn bench_compare(
    datasets: &[(String, CategoricalDataset)],
    algorithms: &[Algorithm],
    ks: &[usize],
    budget: &BenchBudget,
    seeds: &[u64],
) -> Result<BenchReport> {
    if datasets.is_empty() || algorithms.is_empty() || ks.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one dataset, algorithm, k and seed".into(),
        ));
    }
    let mut report = BenchReport::default();
    let mut tallies: Vec<PairTally> = Vec::new();
    for i in 0..algorithms.len() {
        for j in i + 1..algorithms.len() {
            tallies.push(PairTally {
                first: algorithms[i],
                second: algorithms[j],
                wins: 0,
                ties: 0,
                losses: 0,
            });
        }
    }
    for (name, ds) in datasets {
        for &k in ks {
            let cache = build_cache(
                ds,
                &CacheConfig {
                    k,
                    time_budget: budget.cache_time,
                    max_explored: budget.max_explored,
                    workers: budget.workers,
                },
            )?;
            for &seed in seeds {
                let mut scores = Vec::with_capacity(algorithms.len());
                for &algorithm in algorithms {
                    let config = LearnerConfig {
                        k,
                        time_budget: budget.learn_time,
                        max_iterations: budget.learn_iterations,
                        seed,
                        workers: budget.workers,
                    };
                    let started = Instant::now();
                    let result = learn(&cache, &config, algorithm)?;
                    log::info!("{name} k={k} seed={seed} {algorithm}: {:.3}", result.score);
                    scores.push(result.score);
                    report.runs.push(RunRecord {
                        dataset: name.clone(),
                        algorithm,
                        k,
                        seed,
                        score: result.score,
                        iterations: result.iterations,
                        elapsed: started.elapsed().as_secs_f64(),
                    });
                }
                let mut t = 0;
                for i in 0..algorithms.len() {
                    for j in i + 1..algorithms.len() {
                        let delta = scores[i] - scores[j];
                        let tally = &mut tallies[t];
                        t += 1;
                        if delta >= 2.0 {
                            tally.wins += 1;
                        } else if delta <= -2.0 {
                            tally.losses += 1;
                        } else {
                            tally.ties += 1;
                        }
                        report.pairs.push(PairRecord {
                            dataset: name.clone(),
                            k,
                            seed,
                            first: algorithms[i],
                            second: algorithms[j],
                            delta,
                            class: delta_bic_classify(delta),
                        });
                    }
                }
            }
        }
    }
    report.tallies = tallies;
    Ok(report)
}
