//! Parameter estimation and exact inference.
//!
//! The junction tree is the learner's k-tree itself: every non-root clique
//! is its parent's separator plus one introduced variable, so a message is
//! a sum (or max) over a single variable. Messages are rescaled to unit
//! sum (or unit max) as they are passed and the log scale factors are
//! accumulated, which keeps long chains from underflowing while the
//! per-cell work stays in linear space.

use serde::{Deserialize, Serialize};

use crate::dataset::{counts, CategoricalDataset, State, Variable, MISSING};
use crate::error::{Error, Result};
use crate::ktree::{is_moral_subgraph, Dag, KTree};

#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    variables: Vec<Variable>,
    dag: Dag,
    /// Per variable, `configs × arity` probabilities; rows are parent
    /// configurations (parents in sorted order, last fastest).
    cpts: Vec<Vec<f64>>,
}

impl BayesNet {
    pub fn new(variables: Vec<Variable>, dag: Dag, cpts: Vec<Vec<f64>>) -> Result<Self> {
        let n = variables.len();
        if dag.n() != n || cpts.len() != n {
            return Err(Error::InvalidArgument(
                "network parts disagree on variable count".into(),
            ));
        }
        if !dag.is_complete() || !dag.is_acyclic() {
            return Err(Error::InvalidArgument(
                "network structure must be a complete DAG".into(),
            ));
        }
        for (v, cpt) in cpts.iter().enumerate() {
            let arity = variables[v].arity();
            let configs: usize = dag.parents(v).iter().map(|&p| variables[p].arity()).product();
            if cpt.len() != configs * arity {
                return Err(Error::InvalidArgument(format!(
                    "CPT of `{}` has {} entries, expected {}",
                    variables[v].name,
                    cpt.len(),
                    configs * arity
                )));
            }
            for row in cpt.chunks(arity) {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "CPT row of `{}` is not a distribution",
                        variables[v].name
                    )));
                }
            }
        }
        Ok(BayesNet { variables, dag, cpts })
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cpt(&self, var: usize) -> &[f64] {
        &self.cpts[var]
    }

    pub fn arity(&self, var: usize) -> usize {
        self.variables[var].arity()
    }

    pub fn arities(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::arity).collect()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Row index of the parent configuration found in a full assignment.
    pub fn config_index(&self, var: usize, assignment: &[State]) -> usize {
        self.dag
            .parents(var)
            .iter()
            .fold(0, |acc, &p| acc * self.arity(p) + assignment[p] as usize)
    }

    /// `P(var = assignment[var] | parents)` read from the CPT.
    pub fn family_prob(&self, var: usize, assignment: &[State]) -> f64 {
        let row = self.config_index(var, assignment);
        self.cpts[var][row * self.arity(var) + assignment[var] as usize]
    }

    /// Chain-rule log probability of a full assignment.
    pub fn joint_log_prob(&self, assignment: &[State]) -> f64 {
        (0..self.n_vars()).map(|v| self.family_prob(v, assignment).ln()).sum()
    }
}

/// `θ = (N_{x,π} + α) / (N_π + α|X|)`; with `α = 0`, unseen parent
/// configurations get uniform rows.
pub fn estimate_parameters(ds: &CategoricalDataset, dag: &Dag, alpha: f64) -> Result<BayesNet> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("smoothing {alpha} must be >= 0")));
    }
    if dag.n() != ds.n_vars() {
        return Err(Error::InvalidArgument("DAG and dataset disagree on variables".into()));
    }
    let mut cpts = Vec::with_capacity(ds.n_vars());
    for v in 0..ds.n_vars() {
        let table = counts(ds, v, dag.parents(v))?;
        let arity = table.child_arity;
        let mut cpt = Vec::with_capacity(table.counts.len());
        for row in table.counts.chunks(arity) {
            let n_pi: u64 = row.iter().sum();
            let denom = n_pi as f64 + alpha * arity as f64;
            if denom == 0.0 {
                cpt.extend(std::iter::repeat_n(1.0 / arity as f64, arity));
            } else {
                cpt.extend(row.iter().map(|&c| (c as f64 + alpha) / denom));
            }
        }
        cpts.push(cpt);
    }
    BayesNet::new(ds.variables().to_vec(), dag.clone(), cpts)
}

/// Partial assignment: one slot per variable, `MISSING` when unobserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence(Vec<State>);

impl Evidence {
    pub fn empty(n: usize) -> Self {
        Evidence(vec![MISSING; n])
    }

    /// Uses a data row directly; missing cells are unobserved.
    pub fn from_row(row: Vec<State>) -> Self {
        Evidence(row)
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, State)]) -> Self {
        let mut e = Evidence::empty(n);
        for &(v, s) in pairs {
            e.0[v] = s;
        }
        e
    }

    pub fn set(&mut self, var: usize, state: State) {
        self.0[var] = state;
    }

    pub fn clear(&mut self, var: usize) {
        self.0[var] = MISSING;
    }

    pub fn get(&self, var: usize) -> Option<State> {
        match self.0[var] {
            MISSING => None,
            s => Some(s),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, State)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != MISSING)
            .map(|(v, &s)| (v, s))
    }

    pub fn as_slice(&self) -> &[State] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEvidence {
    pub log: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mpe {
    /// Full assignment; observed variables keep their evidence.
    pub assignment: Vec<State>,
    pub log_prob: f64,
}

/// Potential-table cells read or written by one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub cell_touches: u64,
}

#[derive(Debug, Clone)]
struct Clique {
    vars: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
    parent: Option<usize>,
    /// Variable this clique adds to its parent's separator.
    introduced: Option<usize>,
    sep_size: usize,
    /// Cell of this clique -> cell of its separator with the parent.
    to_sep: Vec<u32>,
    /// Cell of the parent clique -> cell of this clique's separator.
    parent_to_sep: Vec<u32>,
}

impl Clique {
    fn position(&self, var: usize) -> usize {
        self.vars.binary_search(&var).expect("variable in clique")
    }
}

/// Clique tree over a network, ready for repeated queries. Queries take
/// `&self` and allocate their own buffers, so one tree can serve many
/// threads.
#[derive(Debug, Clone)]
pub struct JunctionTree {
    arities: Vec<usize>,
    cliques: Vec<Clique>,
    /// Product of the CPTs assigned to each clique.
    base: Vec<Vec<f64>>,
    /// Clique holding each variable's family.
    home: Vec<usize>,
}

fn strides_of(vars: &[usize], arities: &[usize]) -> (Vec<usize>, usize) {
    let mut strides = vec![0; vars.len()];
    let mut size = 1usize;
    for (i, &v) in vars.iter().enumerate().rev() {
        strides[i] = size;
        size *= arities[v];
    }
    (strides, size)
}

/// Visits every cell of a table over `vars` in index order, passing the
/// current per-variable states.
fn for_each_cell(vars: &[usize], arities: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let mut states = vec![0usize; vars.len()];
    let size: usize = vars.iter().map(|&v| arities[v]).product();
    for cell in 0..size {
        f(cell, &states);
        for i in (0..vars.len()).rev() {
            states[i] += 1;
            if states[i] < arities[vars[i]] {
                break;
            }
            states[i] = 0;
        }
    }
}

/// Maps each cell of a table over `vars` to the cell of a table over `sub`
/// (a subset of `vars`, both sorted).
fn projection(vars: &[usize], sub: &[usize], arities: &[usize]) -> Vec<u32> {
    let (sub_strides, _) = strides_of(sub, arities);
    let pos: Vec<Option<usize>> = vars.iter().map(|v| sub.binary_search(v).ok()).collect();
    let mut out = Vec::new();
    for_each_cell(vars, arities, |_, states| {
        let idx: usize = pos
            .iter()
            .zip(states)
            .filter_map(|(p, &s)| p.map(|p| sub_strides[p] * s))
            .sum();
        out.push(idx as u32);
    });
    out
}

const MAX_CLIQUE_CELLS: usize = 1 << 28;

/// Builds the clique tree from a k-tree whose cliques contain every moral
/// edge of the network; each family goes to the earliest clique covering it.
pub fn build_junction_tree(net: &BayesNet, kt: &KTree) -> Result<JunctionTree> {
    let n = net.n_vars();
    if kt.len() != n || (0..n).any(|v| !kt.contains(v)) {
        return Err(Error::InvalidArgument("k-tree does not cover every variable".into()));
    }
    if !is_moral_subgraph(net.dag(), kt) {
        return Err(Error::InvalidArgument(
            "network's moral graph is not a subgraph of the k-tree".into(),
        ));
    }
    let arities = net.arities();
    let mut cliques = Vec::with_capacity(kt.cliques().len());
    for (i, vars) in kt.cliques().iter().enumerate() {
        let (strides, size) = strides_of(vars, &arities);
        if vars.iter().map(|&v| arities[v] as f64).product::<f64>() > MAX_CLIQUE_CELLS as f64 {
            return Err(Error::InvalidArgument(format!(
                "clique {i} is too large for exact inference"
            )));
        }
        let parent = kt.parent_clique(i);
        let (sep_size, to_sep, parent_to_sep) = match (parent, kt.separator(i)) {
            (Some(p), Some(sep)) => {
                let (_, sep_size) = strides_of(&sep, &arities);
                (
                    sep_size,
                    projection(vars, &sep, &arities),
                    projection(&kt.cliques()[p], &sep, &arities),
                )
            }
            _ => (1, Vec::new(), Vec::new()),
        };
        cliques.push(Clique {
            vars: vars.clone(),
            strides,
            size,
            parent,
            introduced: kt.introduced(i),
            sep_size,
            to_sep,
            parent_to_sep,
        });
    }

    let mut base: Vec<Vec<f64>> = cliques.iter().map(|c| vec![1.0; c.size]).collect();
    let mut home = vec![0; n];
    let mut assignment = vec![0 as State; n];
    for (v, h) in home.iter_mut().enumerate() {
        let mut family = net.dag().parents(v).to_vec();
        family.push(v);
        family.sort_unstable();
        let c = kt
            .containing_clique(&family)
            .expect("moral subgraph guarantees a covering clique");
        *h = c;
        let clique = &cliques[c];
        for_each_cell(&clique.vars, &arities, |cell, states| {
            for (&var, &s) in clique.vars.iter().zip(states) {
                assignment[var] = s as State;
            }
            base[c][cell] *= net.family_prob(v, &assignment);
        });
    }
    Ok(JunctionTree {
        arities,
        cliques,
        base,
        home,
    })
}

impl JunctionTree {
    pub fn new(net: &BayesNet, kt: &KTree) -> Result<Self> {
        build_junction_tree(net, kt)
    }

    pub fn n_vars(&self) -> usize {
        self.arities.len()
    }

    pub fn clique_count(&self) -> usize {
        self.cliques.len()
    }

    pub fn clique_vars(&self, clique: usize) -> &[usize] {
        &self.cliques[clique].vars
    }

    pub fn clique_parent(&self, clique: usize) -> Option<usize> {
        self.cliques[clique].parent
    }

    /// Separator between a non-root clique and its parent.
    pub fn separator(&self, clique: usize) -> Option<Vec<usize>> {
        let c = &self.cliques[clique];
        let new = c.introduced?;
        Some(c.vars.iter().copied().filter(|&v| v != new).collect())
    }

    /// Clique holding the family of `var`.
    pub fn home_clique(&self, var: usize) -> usize {
        self.home[var]
    }

    /// Total potential cells over all cliques.
    pub fn total_cells(&self) -> usize {
        self.cliques.iter().map(|c| c.size).sum()
    }

    fn check(&self, evidence: &Evidence) -> Result<()> {
        if evidence.len() != self.n_vars() {
            return Err(Error::InvalidArgument(format!(
                "evidence covers {} variables, network has {}",
                evidence.len(),
                self.n_vars()
            )));
        }
        for (v, s) in evidence.observed() {
            if s as usize >= self.arities[v] {
                return Err(Error::InvalidArgument(format!(
                    "state {s} out of range for variable {v}"
                )));
            }
        }
        Ok(())
    }

    fn initial(&self, evidence: &Evidence, stats: &mut QueryStats) -> Vec<Vec<f64>> {
        let mut pot = self.base.clone();
        stats.cell_touches += self.total_cells() as u64;
        for (v, s) in evidence.observed() {
            let c = self.home[v];
            let clique = &self.cliques[c];
            let stride = clique.strides[clique.position(v)];
            let arity = self.arities[v];
            for (cell, p) in pot[c].iter_mut().enumerate() {
                if (cell / stride) % arity != s as usize {
                    *p = 0.0;
                }
            }
            stats.cell_touches += clique.size as u64;
        }
        pot
    }

    /// Leaves-to-root pass. Returns the upward messages and the log of the
    /// accumulated scale, or `None` when the evidence is impossible.
    fn collect(&self, pot: &mut [Vec<f64>], max: bool, stats: &mut QueryStats) -> Option<(Vec<Vec<f64>>, f64)> {
        let mut up: Vec<Vec<f64>> = vec![Vec::new(); self.cliques.len()];
        let mut log_scale = 0.0;
        for j in (1..self.cliques.len()).rev() {
            let c = &self.cliques[j];
            let p = c.parent.expect("non-root clique");
            let mut msg = vec![0.0; c.sep_size];
            if max {
                for (&s, &v) in c.to_sep.iter().zip(&pot[j]) {
                    let m = &mut msg[s as usize];
                    if v > *m {
                        *m = v;
                    }
                }
            } else {
                for (&s, &v) in c.to_sep.iter().zip(&pot[j]) {
                    msg[s as usize] += v;
                }
            }
            let scale = if max {
                msg.iter().copied().fold(0.0, f64::max)
            } else {
                msg.iter().sum()
            };
            if scale <= 0.0 {
                return None;
            }
            for m in &mut msg {
                *m /= scale;
            }
            log_scale += scale.ln();
            for (cell, v) in pot[p].iter_mut().enumerate() {
                *v *= msg[c.parent_to_sep[cell] as usize];
            }
            stats.cell_touches += (c.size + self.cliques[p].size) as u64;
            up[j] = msg;
        }
        if pot[0].iter().all(|&v| v <= 0.0) {
            return None;
        }
        Some((up, log_scale))
    }

    /// Root-to-leaf update of clique `j` from its (already calibrated)
    /// parent, dividing out `j`'s own upward message.
    fn push_down(&self, pot: &mut [Vec<f64>], up: &[Vec<f64>], j: usize, stats: &mut QueryStats) {
        let c = &self.cliques[j];
        let p = c.parent.expect("non-root clique");
        let mut down = vec![0.0; c.sep_size];
        for (&s, &v) in c.parent_to_sep.iter().zip(&pot[p]) {
            down[s as usize] += v;
        }
        let total: f64 = down.iter().sum();
        for (d, &u) in down.iter_mut().zip(&up[j]) {
            *d = if u > 0.0 { *d / total / u } else { 0.0 };
        }
        for (&s, v) in c.to_sep.iter().zip(pot[j].iter_mut()) {
            *v *= down[s as usize];
        }
        stats.cell_touches += (c.size + self.cliques[p].size) as u64;
    }

    fn clique_marginal(&self, pot: &[f64], clique: usize, var: usize) -> Vec<f64> {
        let c = &self.cliques[clique];
        let stride = c.strides[c.position(var)];
        let arity = self.arities[var];
        let mut dist = vec![0.0; arity];
        for (cell, &v) in pot.iter().enumerate() {
            dist[(cell / stride) % arity] += v;
        }
        let z: f64 = dist.iter().sum();
        for d in &mut dist {
            *d /= z;
        }
        dist
    }

    /// `P(e)` in log and linear form; impossible evidence gives 0.
    pub fn prob_evidence(&self, evidence: &Evidence) -> Result<ProbEvidence> {
        Ok(self.prob_evidence_with_stats(evidence)?.0)
    }

    pub fn prob_evidence_with_stats(&self, evidence: &Evidence) -> Result<(ProbEvidence, QueryStats)> {
        self.check(evidence)?;
        let mut stats = QueryStats::default();
        let mut pot = self.initial(evidence, &mut stats);
        let Some((_, log_scale)) = self.collect(&mut pot, false, &mut stats) else {
            return Ok((
                ProbEvidence {
                    log: f64::NEG_INFINITY,
                    prob: 0.0,
                },
                stats,
            ));
        };
        let root: f64 = pot[0].iter().sum();
        stats.cell_touches += pot[0].len() as u64;
        let log = log_scale + root.ln();
        Ok((ProbEvidence { log, prob: log.exp() }, stats))
    }

    /// Posterior `P(target | e)`.
    pub fn marginal(&self, evidence: &Evidence, target: usize) -> Result<Vec<f64>> {
        Ok(self.marginal_with_stats(evidence, target)?.0)
    }

    pub fn marginal_with_stats(&self, evidence: &Evidence, target: usize) -> Result<(Vec<f64>, QueryStats)> {
        self.check(evidence)?;
        if target >= self.n_vars() {
            return Err(Error::InvalidArgument(format!("variable {target} out of range")));
        }
        let mut stats = QueryStats::default();
        let mut pot = self.initial(evidence, &mut stats);
        let (up, _) = self
            .collect(&mut pot, false, &mut stats)
            .ok_or(Error::ImpossibleEvidence { hint: "" })?;
        // only the cliques between the root and the target's clique need
        // the downward pass
        let home = self.home[target];
        let mut path = vec![home];
        while let Some(p) = self.cliques[*path.last().unwrap()].parent {
            path.push(p);
        }
        for &j in path.iter().rev().skip(1) {
            self.push_down(&mut pot, &up, j, &mut stats);
        }
        stats.cell_touches += pot[home].len() as u64;
        Ok((self.clique_marginal(&pot[home], home, target), stats))
    }

    /// Posterior marginals of every variable after one full calibration.
    pub fn marginals(&self, evidence: &Evidence) -> Result<Vec<Vec<f64>>> {
        self.check(evidence)?;
        let mut stats = QueryStats::default();
        let mut pot = self.initial(evidence, &mut stats);
        let (up, _) = self
            .collect(&mut pot, false, &mut stats)
            .ok_or(Error::ImpossibleEvidence { hint: "" })?;
        for j in 1..self.cliques.len() {
            self.push_down(&mut pot, &up, j, &mut stats);
        }
        Ok((0..self.n_vars())
            .map(|v| self.clique_marginal(&pot[self.home[v]], self.home[v], v))
            .collect())
    }

    /// Most probable completion of the unobserved variables. At each
    /// backtracking step ties go to the lowest state index.
    pub fn mpe(&self, evidence: &Evidence) -> Result<Mpe> {
        self.check(evidence)?;
        let mut stats = QueryStats::default();
        let mut pot = self.initial(evidence, &mut stats);
        let (_, log_scale) = self
            .collect(&mut pot, true, &mut stats)
            .ok_or(Error::ImpossibleEvidence { hint: "" })?;
        let mut assignment = vec![MISSING; self.n_vars()];

        let root = &self.cliques[0];
        let mut best_cell = 0;
        for (cell, &v) in pot[0].iter().enumerate() {
            if v > pot[0][best_cell] {
                best_cell = cell;
            }
        }
        let root_max = pot[0][best_cell];
        if root_max <= 0.0 {
            return Err(Error::ImpossibleEvidence { hint: "" });
        }
        for (i, &var) in root.vars.iter().enumerate() {
            assignment[var] = ((best_cell / root.strides[i]) % self.arities[var]) as State;
        }
        for (j, c) in self.cliques.iter().enumerate().skip(1) {
            let new = c.introduced.expect("non-root clique");
            let mut base = 0;
            let mut new_stride = 0;
            for (i, &var) in c.vars.iter().enumerate() {
                if var == new {
                    new_stride = c.strides[i];
                } else {
                    base += c.strides[i] * assignment[var] as usize;
                }
            }
            let mut best = 0;
            for x in 1..self.arities[new] {
                if pot[j][base + x * new_stride] > pot[j][base + best * new_stride] {
                    best = x;
                }
            }
            assignment[new] = best as State;
        }
        for (v, s) in evidence.observed() {
            debug_assert_eq!(assignment[v], s);
            assignment[v] = s;
        }
        Ok(Mpe {
            assignment,
            log_prob: log_scale + root_max.ln(),
        })
    }
}

/// Serializable mirror of a CPT set, used by the network file format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CptRecord {
    pub parents: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl BayesNet {
    pub fn cpt_records(&self) -> Vec<CptRecord> {
        (0..self.n_vars())
            .map(|v| CptRecord {
                parents: self.dag.parents(v).to_vec(),
                probabilities: self.cpts[v].clone(),
            })
            .collect()
    }

    pub fn from_records(variables: Vec<Variable>, records: Vec<CptRecord>) -> Result<Self> {
        let mut parents = Vec::with_capacity(records.len());
        let mut cpts = Vec::with_capacity(records.len());
        for r in records {
            parents.push(r.parents);
            cpts.push(r.probabilities);
        }
        let dag = Dag::from_parents(parents)?;
        BayesNet::new(variables, dag, cpts)
    }
}
