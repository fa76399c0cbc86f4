//! BIC family scores and per-variable parent-set caches.
//!
//! All logarithms are natural. A family score is
//! `LL(X|Π) - (ln N / 2)(|X| - 1)|Π|` with maximum-likelihood estimates and
//! `N` the number of rows in which the whole family is observed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_family, CategoricalDataset, State, MISSING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub child: usize,
    /// Sorted ascending, no duplicates, never contains `child`.
    pub parents: Vec<usize>,
    pub score: f64,
}

/// Log-likelihood of a family together with the number of rows it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyFit {
    pub ll: f64,
    pub rows: usize,
}

/// Product of parent arities as a float, so oversized families still get a
/// (huge) finite penalty instead of overflowing.
pub fn parent_configs(arities: &[usize], parents: &[usize]) -> f64 {
    parents.iter().map(|&p| arities[p] as f64).product()
}

pub fn penalty(arities: &[usize], child: usize, parents: &[usize], rows: usize) -> f64 {
    let free = (arities[child] - 1) as f64;
    if free == 0.0 {
        return 0.0;
    }
    -((rows as f64).ln() / 2.0) * free * parent_configs(arities, parents)
}

/// Maximum-likelihood log-likelihood `Σ N_{x,π} ln(N_{x,π} / N_π)`.
pub fn log_likelihood(ds: &CategoricalDataset, child: usize, parents: &[usize]) -> Result<FamilyFit> {
    check_family(ds.n_vars(), child, parents)?;
    let arities = ds.arities();
    let child_arity = arities[child] as u64;
    let child_col = ds.column(child);
    let parent_cols: Vec<(&[State], u64)> = parents.iter().map(|&p| (ds.column(p), arities[p] as u64)).collect();
    let rows = ds.n_rows();

    let table_size = parents
        .iter()
        .try_fold(child_arity, |acc, &p| acc.checked_mul(arities[p] as u64));
    let dense = matches!(table_size, Some(s) if s <= (4 * rows as u64).max(1 << 12));

    let mut ll = 0.0;
    let mut used = 0usize;
    if dense {
        let size = table_size.unwrap() as usize;
        let mut table = vec![0u32; size];
        'rows: for r in 0..rows {
            let x = child_col[r];
            if x == MISSING {
                continue;
            }
            let mut key = 0u64;
            for &(col, a) in &parent_cols {
                let s = col[r];
                if s == MISSING {
                    continue 'rows;
                }
                key = key * a + s as u64;
            }
            table[(key * child_arity + x as u64) as usize] += 1;
            used += 1;
        }
        for cell in table.chunks(child_arity as usize) {
            let n_pi: u32 = cell.iter().sum();
            if n_pi == 0 {
                continue;
            }
            let n_pi = n_pi as f64;
            for &c in cell.iter().filter(|&&c| c > 0) {
                let c = c as f64;
                ll += c * (c / n_pi).ln();
            }
        }
    } else {
        // Too many configurations for a dense table: sort observed
        // (config, state) keys so each configuration is a contiguous run.
        let bits: Vec<u32> = parents
            .iter()
            .map(|&p| usize::BITS - (arities[p].max(2) - 1).leading_zeros())
            .collect();
        if bits.iter().sum::<u32>() <= 112 {
            let mut keys: Vec<(u128, State)> = Vec::with_capacity(rows);
            'packed: for r in 0..rows {
                let x = child_col[r];
                if x == MISSING {
                    continue;
                }
                let mut key = 0u128;
                for (&(col, _), &b) in parent_cols.iter().zip(&bits) {
                    let s = col[r];
                    if s == MISSING {
                        continue 'packed;
                    }
                    key = (key << b) | s as u128;
                }
                keys.push((key, x));
            }
            used = keys.len();
            keys.sort_unstable();
            ll = sorted_runs_ll(&keys);
        } else {
            let mut keys: Vec<(Vec<State>, State)> = Vec::with_capacity(rows);
            'wide: for r in 0..rows {
                let x = child_col[r];
                if x == MISSING {
                    continue;
                }
                let mut config = Vec::with_capacity(parent_cols.len());
                for &(col, _) in &parent_cols {
                    let s = col[r];
                    if s == MISSING {
                        continue 'wide;
                    }
                    config.push(s);
                }
                keys.push((config, x));
            }
            used = keys.len();
            keys.sort_unstable();
            ll = sorted_runs_ll(&keys);
        }
    }
    if used == 0 {
        return Err(Error::NoObservedFamily { child });
    }
    Ok(FamilyFit { ll, rows: used })
}

/// LL from `(config, state)` keys sorted so equal configs are adjacent.
fn sorted_runs_ll<K: PartialEq>(keys: &[(K, State)]) -> f64 {
    let mut ll = 0.0;
    let mut i = 0;
    while i < keys.len() {
        let mut j = i;
        while j < keys.len() && keys[j].0 == keys[i].0 {
            j += 1;
        }
        let n_pi = (j - i) as f64;
        let mut s = i;
        while s < j {
            let mut t = s;
            while t < j && keys[t].1 == keys[s].1 {
                t += 1;
            }
            let c = (t - s) as f64;
            ll += c * (c / n_pi).ln();
            s = t;
        }
        i = j;
    }
    ll
}

/// BIC of one family. Parents may be given in any order.
pub fn bic_family(ds: &CategoricalDataset, child: usize, parents: &[usize]) -> Result<FamilyScore> {
    let mut sorted = parents.to_vec();
    sorted.sort_unstable();
    let fit = log_likelihood(ds, child, &sorted)?;
    let score = fit.ll + penalty(&ds.arities(), child, &sorted, fit.rows);
    Ok(FamilyScore {
        child,
        parents: sorted,
        score,
    })
}

/// Constant-time approximation of `BIC(X, Π₁ ∪ Π₂)` from the scores of two
/// disjoint parent sets. The interaction term makes the penalty equal to
/// that of the union exactly; the likelihood part assumes
/// `LL(Π₁ ∪ Π₂) = LL(Π₁) + LL(Π₂) - LL(∅)`.
pub fn bic_star(
    first: &FamilyScore,
    second: &FamilyScore,
    ll_empty: f64,
    arities: &[usize],
    rows: usize,
) -> Result<f64> {
    if first.child != second.child {
        return Err(Error::InvalidArgument(
            "BIC* needs two parent sets of the same child".into(),
        ));
    }
    if first.parents.is_empty() || second.parents.is_empty() {
        return Err(Error::InvalidArgument("BIC* needs non-empty parent sets".into()));
    }
    if let Some(&p) = first.parents.iter().find(|p| second.parents.contains(p)) {
        return Err(Error::OverlappingParents(p));
    }
    let inter = interaction(first, second, ll_empty, arities, rows);
    Ok(first.score + second.score + inter)
}

fn interaction(first: &FamilyScore, second: &FamilyScore, ll_empty: f64, arities: &[usize], rows: usize) -> f64 {
    let q1 = parent_configs(arities, &first.parents);
    let q2 = parent_configs(arities, &second.parents);
    let free = (arities[first.child] - 1) as f64;
    ((rows as f64).ln() / 2.0) * free * (q1 + q2 - q1 * q2) - ll_empty
}

/// Penalty component of BIC*: `Pen(Π₁) + Pen(Π₂) + (ln N / 2)(|X|-1)(q₁+q₂-q₁q₂)`.
pub fn bic_star_penalty(arities: &[usize], child: usize, first: &[usize], second: &[usize], rows: usize) -> f64 {
    let q1 = parent_configs(arities, first);
    let q2 = parent_configs(arities, second);
    let free = (arities[child] - 1) as f64;
    penalty(arities, child, first, rows)
        + penalty(arities, child, second, rows)
        + ((rows as f64).ln() / 2.0) * free * (q1 + q2 - q1 * q2)
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    // both sorted
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

/// Score-descending order; ties prefer smaller then lexicographically
/// smaller parent sets.
fn cache_order(a: &FamilyScore, b: &FamilyScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parents.len().cmp(&b.parents.len()))
        .then_with(|| a.parents.cmp(&b.parents))
}

/// Removes every entry that has a strict subset scoring at least as well.
/// The empty parent set has no strict subset and is never removed.
pub fn prune_dominated(entries: Vec<FamilyScore>) -> Vec<FamilyScore> {
    let mut sorted = entries;
    sorted.sort_by(cache_order);
    let mut kept: Vec<FamilyScore> = Vec::with_capacity(sorted.len());
    for e in sorted {
        // everything in `kept` scores >= e; a dominated subset of e would
        // itself be dominated by a kept subset, so checking kept suffices
        let dominated = kept
            .iter()
            .any(|k| k.parents.len() < e.parents.len() && is_subset(&k.parents, &e.parents));
        if !dominated {
            kept.push(e);
        }
    }
    kept
}

/// Cached candidate parent sets for one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VarCache {
    /// Sorted descending by score.
    pub entries: Vec<FamilyScore>,
    pub best: f64,
    pub worst: f64,
    /// Exact family evaluations performed (including ∅ and singletons).
    pub explored: usize,
    pub elapsed: Duration,
    /// False when the time budget ran out before every singleton was scored.
    pub singletons_complete: bool,
}

impl VarCache {
    pub fn new(mut entries: Vec<FamilyScore>) -> Self {
        entries.sort_by(cache_order);
        let best = entries.first().map_or(f64::NEG_INFINITY, |e| e.score);
        let worst = entries.last().map_or(f64::NEG_INFINITY, |e| e.score);
        VarCache {
            entries,
            best,
            worst,
            explored: 0,
            elapsed: Duration::ZERO,
            singletons_complete: true,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn empty_set_score(&self) -> Option<f64> {
        self.entries.iter().find(|e| e.parents.is_empty()).map(|e| e.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParentSetCache {
    /// Treewidth bound the cache was built for; no entry has more parents.
    pub k: usize,
    pub vars: Vec<VarCache>,
}

impl ParentSetCache {
    pub fn new(k: usize, vars: Vec<VarCache>) -> Self {
        ParentSetCache { k, vars }
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn entries(&self, var: usize) -> &[FamilyScore] {
        &self.vars[var].entries
    }

    /// Looks up the cached score of a parent set (sorted).
    pub fn score_of(&self, var: usize, parents: &[usize]) -> Option<f64> {
        self.vars[var]
            .entries
            .iter()
            .find(|e| e.parents == parents)
            .map(|e| e.score)
    }

    /// Drops entries with more than `k` parents.
    pub fn restricted_to(&self, k: usize) -> ParentSetCache {
        let vars = self
            .vars
            .iter()
            .map(|v| {
                let mut c = VarCache::new(v.entries.iter().filter(|e| e.parents.len() <= k).cloned().collect());
                c.explored = v.explored;
                c.elapsed = v.elapsed;
                c.singletons_complete = v.singletons_complete;
                c
            })
            .collect();
        ParentSetCache { k: k.min(self.k), vars }
    }

    /// Checks the cache invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, v) in self.vars.iter().enumerate() {
            if !v.entries.iter().any(|e| e.parents.is_empty()) {
                return Err(format!("variable {i}: empty parent set missing"));
            }
            for w in v.entries.windows(2) {
                if w[0].score < w[1].score {
                    return Err(format!("variable {i}: not sorted"));
                }
            }
            for e in &v.entries {
                if e.child != i || e.parents.contains(&i) {
                    return Err(format!("variable {i}: foreign entry {:?}", e.parents));
                }
                if e.parents.len() > self.k {
                    return Err(format!("variable {i}: entry larger than k"));
                }
                if e.parents.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(format!("variable {i}: unsorted parents"));
                }
                if v.entries.iter().any(|o| {
                    o.parents.len() < e.parents.len() && is_subset(&o.parents, &e.parents) && o.score >= e.score
                }) {
                    return Err(format!("variable {i}: dominated entry {:?}", e.parents));
                }
            }
            let best = v.entries.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
            let worst = v.entries.iter().map(|e| e.score).fold(f64::INFINITY, f64::min);
            if best != v.best || worst != v.worst {
                return Err(format!("variable {i}: stale best/worst"));
            }
        }
        Ok(())
    }

    /// Text format: `n`, then per variable `index count` followed by `count`
    /// lines of `score parent_count id...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.vars.len());
        for (i, v) in self.vars.iter().enumerate() {
            let _ = writeln!(out, "{i} {}", v.entries.len());
            for e in &v.entries {
                let _ = write!(out, "{} {}", e.score, e.parents.len());
                for p in &e.parents {
                    let _ = write!(out, " {p}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the text format. `k` is taken as the largest cached parent set
    /// (at least 1).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |row: usize, message: &str| Error::Parse {
            row: row + 1,
            message: message.to_string(),
        };
        let (row, first) = lines.next().ok_or_else(|| Error::Empty("cache file".into()))?;
        let n: usize = first.trim().parse().map_err(|_| bad(row, "expected variable count"))?;
        let mut vars = Vec::with_capacity(n);
        let mut k = 1;
        for expected in 0..n {
            let (row, header) = lines.next().ok_or_else(|| bad(usize::MAX - 1, "truncated cache"))?;
            let mut it = header.split_whitespace();
            let idx: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(row, "expected `index count`"))?;
            let count: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(row, "expected `index count`"))?;
            if idx != expected {
                return Err(bad(row, "variable blocks out of order"));
            }
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let (row, line) = lines.next().ok_or_else(|| bad(usize::MAX - 1, "truncated cache"))?;
                let mut it = line.split_whitespace();
                let score: f64 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(row, "expected score"))?;
                let pc: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(row, "expected parent count"))?;
                let parents: Vec<usize> = it
                    .map(|s| s.parse().map_err(|_| bad(row, "bad parent id")))
                    .collect::<Result<_>>()?;
                if parents.len() != pc {
                    return Err(bad(row, "parent count mismatch"));
                }
                if parents.iter().any(|&p| p >= n || p == idx) {
                    return Err(bad(row, "parent id out of range"));
                }
                let mut sorted = parents.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted != parents {
                    return Err(bad(row, "parents must be sorted and distinct"));
                }
                k = k.max(pc);
                entries.push(FamilyScore {
                    child: idx,
                    parents,
                    score,
                });
            }
            vars.push(VarCache::new(entries));
        }
        Ok(ParentSetCache { k, vars })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    /// Largest parent set size to explore (the treewidth bound).
    pub k: usize,
    /// Wall-clock budget for the whole cache, shared evenly across variables.
    pub time_budget: Duration,
    /// Maximum best-first expansions per variable after the singletons.
    pub max_explored: usize,
    pub workers: usize,
}

impl CacheConfig {
    pub fn new(k: usize, time_budget: Duration, max_explored: usize) -> Self {
        CacheConfig {
            k,
            time_budget,
            max_explored,
            workers: 1,
        }
    }
}

#[derive(Debug)]
struct Candidate {
    estimate: f64,
    parents: Vec<usize>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher estimate first, then lexicographically smaller
        self.estimate
            .total_cmp(&other.estimate)
            .then_with(|| other.parents.cmp(&self.parents))
    }
}

fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u = Vec::with_capacity(a.len() + b.len());
    u.extend_from_slice(a);
    u.extend_from_slice(b);
    u.sort_unstable();
    u
}

/// Independence selection for one variable: exact scores for ∅ and every
/// singleton, then best-first exploration of unions ranked by BIC*.
pub fn build_var_cache(
    ds: &CategoricalDataset,
    child: usize,
    k: usize,
    budget: Duration,
    max_explored: usize,
) -> Result<VarCache> {
    let start = Instant::now();
    let arities = ds.arities();
    let n = ds.n_vars();
    let empty_fit = log_likelihood(ds, child, &[])?;
    let rows = empty_fit.rows;
    let empty = FamilyScore {
        child,
        parents: Vec::new(),
        score: empty_fit.ll + penalty(&arities, child, &[], rows),
    };
    let mut scored = vec![empty];
    let mut explored = 1;
    let mut singletons = Vec::new();
    let mut singletons_complete = true;

    if k >= 1 {
        for p in (0..n).filter(|&p| p != child) {
            if start.elapsed() >= budget {
                singletons_complete = false;
                break;
            }
            match bic_family(ds, child, &[p]) {
                Ok(s) => {
                    explored += 1;
                    singletons.push(s.clone());
                    scored.push(s);
                }
                Err(Error::NoObservedFamily { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if !singletons_complete {
        log::warn!(
            "variable {child}: budget exhausted after {} of {} singletons",
            singletons.len(),
            n - 1
        );
    }

    if k >= 2 && singletons_complete {
        let mut heap = BinaryHeap::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for (i, a) in singletons.iter().enumerate() {
            for b in &singletons[i + 1..] {
                let parents = union_sorted(&a.parents, &b.parents);
                let estimate = bic_star(a, b, empty_fit.ll, &arities, rows)?;
                seen.insert(parents.clone());
                heap.push(Candidate { estimate, parents });
            }
        }
        let mut expansions = 0;
        while expansions < max_explored && start.elapsed() < budget {
            let Some(Candidate { parents, .. }) = heap.pop() else {
                break;
            };
            expansions += 1;
            let exact = match bic_family(ds, child, &parents) {
                Ok(s) => s,
                Err(Error::NoObservedFamily { .. }) => continue,
                Err(e) => return Err(e),
            };
            explored += 1;
            if parents.len() < k {
                for s in &singletons {
                    let p = s.parents[0];
                    if parents.binary_search(&p).is_ok() {
                        continue;
                    }
                    let union = union_sorted(&parents, &s.parents);
                    if seen.contains(&union) {
                        continue;
                    }
                    let estimate = bic_star(&exact, s, empty_fit.ll, &arities, rows)?;
                    seen.insert(union.clone());
                    heap.push(Candidate {
                        estimate,
                        parents: union,
                    });
                }
            }
            scored.push(exact);
        }
    }

    let mut cache = VarCache::new(prune_dominated(scored));
    cache.explored = explored;
    cache.elapsed = start.elapsed();
    cache.singletons_complete = singletons_complete;
    Ok(cache)
}

/// Builds caches for every variable, concurrently across `config.workers`
/// threads. Each variable gets an equal share of the time budget.
pub fn build_cache(ds: &CategoricalDataset, config: &CacheConfig) -> Result<ParentSetCache> {
    let n = ds.n_vars();
    let per_var = config.time_budget.div_f64(n as f64);
    let run = || -> Result<Vec<VarCache>> {
        (0..n)
            .into_par_iter()
            .map(|v| build_var_cache(ds, v, config.k, per_var, config.max_explored))
            .collect()
    };
    let vars = if config.workers <= 1 {
        (0..n)
            .map(|v| build_var_cache(ds, v, config.k, per_var, config.max_explored))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(run)?
    };
    Ok(ParentSetCache::new(config.k, vars))
}
