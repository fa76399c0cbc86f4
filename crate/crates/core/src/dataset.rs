//! Columnar categorical data with a missingness sentinel.
//!
//! Cells hold state indices into per-variable dictionaries. Dictionaries are
//! built in first-occurrence order when reading CSV, so a save/load cycle
//! reproduces both cells and dictionaries.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State index type. Arity is bounded by `State::MAX` (the sentinel).
pub type State = u16;

/// Sentinel for an unobserved cell.
pub const MISSING: State = State::MAX;

pub const DEFAULT_MISSING_TOKEN: &str = "?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub states: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, states: Vec<String>) -> Self {
        Variable {
            name: name.into(),
            states,
        }
    }

    /// Variable with states labelled `0..arity`.
    pub fn with_arity(name: impl Into<String>, arity: usize) -> Self {
        Variable::new(name, (0..arity).map(|s| s.to_string()).collect())
    }

    pub fn arity(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<State> {
        self.states.iter().position(|s| s == label).map(|i| i as State)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalDataset {
    variables: Vec<Variable>,
    /// One column per variable, each of length `rows`.
    columns: Vec<Vec<State>>,
    rows: usize,
}

impl CategoricalDataset {
    /// Builds a dataset from columns, validating every invariant.
    pub fn new(variables: Vec<Variable>, columns: Vec<Vec<State>>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::Empty("dataset has no variables".into()));
        }
        if columns.len() != variables.len() {
            return Err(Error::InvalidArgument(format!(
                "{} columns for {} variables",
                columns.len(),
                variables.len()
            )));
        }
        let rows = columns[0].len();
        if rows == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        for (var, col) in variables.iter().zip(&columns) {
            if var.states.is_empty() {
                return Err(Error::NoObservedStates(var.name.clone()));
            }
            if var.arity() >= MISSING as usize {
                return Err(Error::InvalidArgument(format!(
                    "variable `{}` has too many states",
                    var.name
                )));
            }
            let mut labels: Vec<&String> = var.states.iter().collect();
            labels.sort();
            labels.dedup();
            if labels.len() != var.states.len() {
                return Err(Error::InvalidArgument(format!(
                    "variable `{}` has duplicate state labels",
                    var.name
                )));
            }
            if col.len() != rows {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` has {} rows, expected {rows}",
                    var.name,
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().find(|&&c| c != MISSING && c as usize >= var.arity()) {
                return Err(Error::InvalidArgument(format!(
                    "state index {bad} out of range for `{}`",
                    var.name
                )));
            }
        }
        let mut names: Vec<&String> = variables.iter().map(|v| &v.name).collect();
        names.sort();
        names.dedup();
        if names.len() != variables.len() {
            return Err(Error::InvalidArgument("duplicate variable names".into()));
        }
        Ok(CategoricalDataset {
            variables,
            columns,
            rows,
        })
    }

    /// Builds a dataset from row-major cells.
    pub fn from_rows(variables: Vec<Variable>, rows: &[Vec<State>]) -> Result<Self> {
        let n = variables.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("expected {n} fields, found {}", row.len()),
                });
            }
            for (col, &c) in columns.iter_mut().zip(row) {
                col.push(c);
            }
        }
        CategoricalDataset::new(variables, columns)
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, var: usize) -> &Variable {
        &self.variables[var]
    }

    pub fn arity(&self, var: usize) -> usize {
        self.variables[var].arity()
    }

    pub fn arities(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::arity).collect()
    }

    pub fn column(&self, var: usize) -> &[State] {
        &self.columns[var]
    }

    pub fn cell(&self, row: usize, var: usize) -> State {
        self.columns[var][row]
    }

    pub fn set_cell(&mut self, row: usize, var: usize, value: State) {
        debug_assert!(value == MISSING || (value as usize) < self.arity(var));
        self.columns[var][row] = value;
    }

    pub fn row(&self, row: usize) -> Vec<State> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|&&x| x == MISSING).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(|c| !c.contains(&MISSING))
    }

    /// Rows containing at least one missing cell.
    pub fn incomplete_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .filter(|&r| self.columns.iter().any(|c| c[r] == MISSING))
            .collect()
    }

    pub fn observed_count(&self, var: usize) -> usize {
        self.columns[var].iter().filter(|&&x| x != MISSING).count()
    }

    /// Reads a CSV file with a header row. Cells equal to `missing_token`
    /// (after trimming) are marked missing.
    pub fn load_csv(path: impl AsRef<Path>, missing_token: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, missing_token)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, missing_token: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
            return Err(Error::Empty("missing header row".into()));
        }
        let n = header.len();
        let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        let mut dicts: Vec<HashMap<String, State>> = vec![HashMap::new(); n];
        let mut states: Vec<Vec<String>> = vec![Vec::new(); n];
        let mut columns: Vec<Vec<State>> = vec![Vec::new(); n];

        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            if record.len() != n {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {n} fields, found {}", record.len()),
                });
            }
            for (v, field) in record.iter().enumerate() {
                let field = field.trim();
                let value = if field == missing_token {
                    MISSING
                } else if let Some(&s) = dicts[v].get(field) {
                    s
                } else {
                    let s = states[v].len();
                    if s + 1 >= MISSING as usize {
                        return Err(Error::Parse {
                            row,
                            message: format!("too many states for `{}`", names[v]),
                        });
                    }
                    dicts[v].insert(field.to_string(), s as State);
                    states[v].push(field.to_string());
                    s as State
                };
                columns[v].push(value);
            }
        }
        if columns[0].is_empty() {
            return Err(Error::Empty("no data rows".into()));
        }
        for (name, st) in names.iter().zip(&states) {
            if st.is_empty() {
                return Err(Error::NoObservedStates(name.clone()));
            }
        }
        let variables = names
            .into_iter()
            .zip(states)
            .map(|(name, states)| Variable { name, states })
            .collect();
        CategoricalDataset::new(variables, columns)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, missing_token: &str) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file, missing_token).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W, missing_token: &str) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.variables.iter().map(|v| v.name.as_str()))?;
        for r in 0..self.rows {
            w.write_record(
                self.variables
                    .iter()
                    .enumerate()
                    .map(|(v, var)| match self.columns[v][r] {
                        MISSING => missing_token,
                        s => var.states[s as usize].as_str(),
                    }),
            )?;
        }
        w.flush()
    }

    /// Re-encodes this dataset's cells against another variable list (matched
    /// by name, states matched by label). Used when a test set was loaded
    /// with its own first-occurrence dictionaries.
    pub fn recode_to(&self, variables: &[Variable]) -> Result<CategoricalDataset> {
        let mut columns = Vec::with_capacity(variables.len());
        for target in variables {
            let src = self
                .var_index(&target.name)
                .ok_or_else(|| Error::UnknownVariable(target.name.clone()))?;
            let mut map = Vec::with_capacity(self.arity(src));
            for label in &self.variables[src].states {
                map.push(target.state_index(label));
            }
            let mut col = Vec::with_capacity(self.rows);
            for &c in &self.columns[src] {
                if c == MISSING {
                    col.push(MISSING);
                    continue;
                }
                match map[c as usize] {
                    Some(s) => col.push(s),
                    None => {
                        return Err(Error::UnknownState {
                            variable: target.name.clone(),
                            state: self.variables[src].states[c as usize].clone(),
                        })
                    }
                }
            }
            columns.push(col);
        }
        CategoricalDataset::new(variables.to_vec(), columns)
    }

    /// Most frequent observed state per variable; ties go to the lowest index.
    pub fn column_modes(&self) -> Vec<State> {
        (0..self.n_vars())
            .map(|v| {
                let mut tally = vec![0usize; self.arity(v)];
                for &c in &self.columns[v] {
                    if c != MISSING {
                        tally[c as usize] += 1;
                    }
                }
                let mut best = 0;
                for (s, &t) in tally.iter().enumerate() {
                    if t > tally[best] {
                        best = s;
                    }
                }
                best as State
            })
            .collect()
    }

    /// Copy with every missing cell replaced by its column mode.
    pub fn mode_imputed(&self) -> CategoricalDataset {
        let modes = self.column_modes();
        let mut out = self.clone();
        for (col, &m) in out.columns.iter_mut().zip(&modes) {
            for c in col.iter_mut().filter(|c| **c == MISSING) {
                *c = m;
            }
        }
        out
    }
}

/// Sufficient statistics `N_{x,π}` of one family.
///
/// `counts[config * child_arity + x]`, where the parent configuration index
/// treats the listed parent order as mixed-radix digits with the last parent
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub child: usize,
    pub parents: Vec<usize>,
    pub child_arity: usize,
    pub parent_configs: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn get(&self, config: usize, state: usize) -> u64 {
        self.counts[config * self.child_arity + state]
    }

    /// `N_π` for every parent configuration.
    pub fn config_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.child_arity).map(|c| c.iter().sum()).collect()
    }
}

pub(crate) fn check_family(n_vars: usize, child: usize, parents: &[usize]) -> Result<()> {
    if child >= n_vars {
        return Err(Error::InvalidArgument(format!("variable {child} out of range")));
    }
    for (i, &p) in parents.iter().enumerate() {
        if p >= n_vars {
            return Err(Error::InvalidArgument(format!("parent {p} out of range")));
        }
        if p == child {
            return Err(Error::InvalidArgument(format!(
                "variable {child} listed as its own parent"
            )));
        }
        if parents[..i].contains(&p) {
            return Err(Error::InvalidArgument(format!("duplicate parent {p}")));
        }
    }
    Ok(())
}

/// Product of arities, or `None` when it does not fit in `usize`.
pub fn config_count(arities: &[usize], vars: &[usize]) -> Option<usize> {
    vars.iter().try_fold(1usize, |acc, &v| acc.checked_mul(arities[v]))
}

/// Counts over rows where the child and every parent are observed.
pub fn counts(ds: &CategoricalDataset, child: usize, parents: &[usize]) -> Result<ContingencyTable> {
    check_family(ds.n_vars(), child, parents)?;
    let arities = ds.arities();
    let child_arity = arities[child];
    let parent_configs = config_count(&arities, parents)
        .filter(|&c| c.checked_mul(child_arity).is_some())
        .ok_or_else(|| Error::InvalidArgument("family table too large".into()))?;
    let mut table = vec![0u64; parent_configs * child_arity];
    let child_col = ds.column(child);
    let parent_cols: Vec<&[State]> = parents.iter().map(|&p| ds.column(p)).collect();
    let mut total = 0;
    'rows: for r in 0..ds.n_rows() {
        let x = child_col[r];
        if x == MISSING {
            continue;
        }
        let mut config = 0usize;
        for (col, &p) in parent_cols.iter().zip(parents) {
            let s = col[r];
            if s == MISSING {
                continue 'rows;
            }
            config = config * arities[p] + s as usize;
        }
        table[config * child_arity + x as usize] += 1;
        total += 1;
    }
    Ok(ContingencyTable {
        child,
        parents: parents.to_vec(),
        child_arity,
        parent_configs,
        counts: table,
        total,
    })
}

/// A cell made missing by [`inject_mcar`], with its original value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedCell {
    pub row: usize,
    pub var: usize,
    pub original: State,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingMask {
    pub cells: Vec<InjectedCell>,
}

impl MissingMask {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Makes each observed cell missing independently with probability `rate`.
///
/// Cells are visited row-major, so the result depends only on the seed.
pub fn inject_mcar(ds: &CategoricalDataset, rate: f64, seed: u64) -> Result<(CategoricalDataset, MissingMask)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "missingness rate {rate} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    let mut mask = MissingMask::default();
    for row in 0..ds.n_rows() {
        for var in 0..ds.n_vars() {
            let original = ds.cell(row, var);
            if original == MISSING {
                continue;
            }
            if rng.random_bool(rate) {
                out.set_cell(row, var, MISSING);
                mask.cells.push(InjectedCell { row, var, original });
            }
        }
    }
    Ok((out, mask))
}
