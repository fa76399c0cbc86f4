//! k-trees grown one node at a time, DAGs over parent-set assignments, and
//! the moral-graph checks tying the two together.
//!
//! A [`KTree`] is stored as its clique tree: the first clique has `k + 1`
//! nodes and every later clique is an existing k-clique plus one new node.
//! The k-cliques themselves are never materialized globally; they are the
//! k-subsets of stored cliques.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KTree {
    k: usize,
    /// Nodes in insertion order.
    nodes: Vec<usize>,
    /// Sorted (k+1)-cliques in insertion order.
    cliques: Vec<Vec<usize>>,
    /// For clique `i > 0`, the index of the clique it extended.
    parent_clique: Vec<Option<usize>>,
    /// Node introduced by each non-root clique.
    introduced: Vec<Option<usize>>,
    /// node id -> indices of cliques containing it.
    member: Vec<Vec<usize>>,
}

fn sorted_subset(small: &[usize], big: &[usize]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

impl KTree {
    /// The base case: a single clique over `k + 1` distinct nodes.
    pub fn new(k: usize, vars: &[usize]) -> Result<Self> {
        if vars.len() != k + 1 {
            return Err(Error::KTree(format!(
                "initial clique needs {} nodes, got {}",
                k + 1,
                vars.len()
            )));
        }
        let mut clique = vars.to_vec();
        clique.sort_unstable();
        if clique.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::KTree("initial clique has repeated nodes".into()));
        }
        let mut kt = KTree {
            k,
            nodes: vars.to_vec(),
            cliques: vec![clique.clone()],
            parent_clique: vec![None],
            introduced: vec![None],
            member: Vec::new(),
        };
        for &v in &clique {
            kt.member_mut(v).push(0);
        }
        Ok(kt)
    }

    fn member_mut(&mut self, v: usize) -> &mut Vec<usize> {
        if v >= self.member.len() {
            self.member.resize(v + 1, Vec::new());
        }
        &mut self.member[v]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn parent_clique(&self, clique: usize) -> Option<usize> {
        self.parent_clique[clique]
    }

    pub fn introduced(&self, clique: usize) -> Option<usize> {
        self.introduced[clique]
    }

    /// Nodes shared by a non-root clique and its parent clique.
    pub fn separator(&self, clique: usize) -> Option<Vec<usize>> {
        let new = self.introduced[clique]?;
        Some(self.cliques[clique].iter().copied().filter(|&v| v != new).collect())
    }

    pub fn contains(&self, node: usize) -> bool {
        self.member.get(node).is_some_and(|m| !m.is_empty())
    }

    /// Cliques containing `node`.
    pub fn cliques_of(&self, node: usize) -> &[usize] {
        self.member.get(node).map_or(&[], |m| m.as_slice())
    }

    /// Index of the earliest clique containing every node of `set` (sorted).
    pub fn containing_clique(&self, set: &[usize]) -> Option<usize> {
        match set.first() {
            None => (!self.cliques.is_empty()).then_some(0),
            Some(&first) => self
                .cliques_of(first)
                .iter()
                .copied()
                .find(|&c| sorted_subset(set, &self.cliques[c])),
        }
    }

    /// Whether `parents` (sorted) is a subset of some k-clique.
    pub fn is_feasible(&self, parents: &[usize]) -> bool {
        parents.len() <= self.k && self.containing_clique(parents).is_some()
    }

    /// The k-subsets of one stored clique.
    pub fn kcliques_of(&self, clique: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let c = &self.cliques[clique];
        (0..c.len()).map(move |skip| {
            c.iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect()
        })
    }

    /// Every distinct k-clique, sorted.
    pub fn kcliques(&self) -> Vec<Vec<usize>> {
        let set: BTreeSet<Vec<usize>> = (0..self.cliques.len()).flat_map(|c| self.kcliques_of(c)).collect();
        set.into_iter().collect()
    }

    /// Distinct k-cliques that are supersets of `parents` (sorted), in
    /// sorted order.
    pub fn hosting_kcliques(&self, parents: &[usize]) -> Vec<Vec<usize>> {
        if parents.len() > self.k {
            return Vec::new();
        }
        let candidates: Vec<usize> = match parents.first() {
            None => (0..self.cliques.len()).collect(),
            Some(&p) => self.cliques_of(p).to_vec(),
        };
        let mut out = BTreeSet::new();
        for c in candidates {
            let clique = &self.cliques[c];
            if !sorted_subset(parents, clique) {
                continue;
            }
            for skip in clique.iter().filter(|v| parents.binary_search(v).is_err()) {
                out.insert(clique.iter().copied().filter(|v| v != skip).collect::<Vec<_>>());
            }
        }
        out.into_iter().collect()
    }

    /// Attaches `node` to an existing k-clique, creating one new (k+1)-clique.
    /// Returns the index of the new clique.
    pub fn add_node(&mut self, node: usize, kclique: &[usize]) -> Result<usize> {
        if self.contains(node) {
            return Err(Error::KTree(format!("node {node} already in the k-tree")));
        }
        let mut sep = kclique.to_vec();
        sep.sort_unstable();
        if sep.len() != self.k || sep.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::KTree(format!(
                "attachment set must be {} distinct nodes",
                self.k
            )));
        }
        let host = self
            .containing_clique(&sep)
            .ok_or_else(|| Error::KTree(format!("{sep:?} is not a k-clique of the k-tree")))?;
        let mut clique = sep;
        let pos = clique.partition_point(|&v| v < node);
        clique.insert(pos, node);
        let idx = self.cliques.len();
        for &v in &clique {
            self.member_mut(v).push(idx);
        }
        self.cliques.push(clique);
        self.parent_clique.push(Some(host));
        self.introduced.push(Some(node));
        self.nodes.push(node);
        Ok(idx)
    }

    /// Rebuilds a k-tree from its clique list and parent links, validating
    /// every structural invariant.
    pub fn from_parts(k: usize, cliques: &[Vec<usize>], parents: &[Option<usize>]) -> Result<Self> {
        if cliques.is_empty() || cliques.len() != parents.len() {
            return Err(Error::KTree("clique and parent lists disagree".into()));
        }
        if parents[0].is_some() {
            return Err(Error::KTree("first clique must be the root".into()));
        }
        let mut kt = KTree::new(k, &cliques[0])?;
        for (i, (clique, parent)) in cliques.iter().zip(parents).enumerate().skip(1) {
            let parent = parent.ok_or_else(|| Error::KTree(format!("clique {i} has no parent")))?;
            if parent >= i {
                return Err(Error::KTree(format!("clique {i} links forward to {parent}")));
            }
            let mut sorted = clique.clone();
            sorted.sort_unstable();
            let new: Vec<usize> = sorted.iter().copied().filter(|v| !kt.contains(*v)).collect();
            if new.len() != 1 {
                return Err(Error::KTree(format!("clique {i} must introduce exactly one node")));
            }
            let sep: Vec<usize> = sorted.iter().copied().filter(|&v| v != new[0]).collect();
            if !sorted_subset(&sep, &kt.cliques[parent]) {
                return Err(Error::KTree(format!("clique {i} does not extend clique {parent}")));
            }
            kt.add_node(new[0], &sep)?;
            // keep the recorded parent link even if an earlier clique also hosts sep
            kt.parent_clique[i] = Some(parent);
        }
        Ok(kt)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.cliques.is_empty() {
            return Err("no cliques".into());
        }
        if self.cliques.len() != self.nodes.len() - self.k {
            return Err("clique count differs from |nodes| - k".into());
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.cliques.iter().enumerate() {
            if c.len() != self.k + 1 {
                return Err(format!("clique {i} has {} nodes", c.len()));
            }
            match (i, self.parent_clique[i], self.introduced[i]) {
                (0, None, None) => {
                    seen.extend(c.iter().copied());
                }
                (_, Some(p), Some(new)) if p < i => {
                    if seen.contains(&new) {
                        return Err(format!("clique {i} reintroduces node {new}"));
                    }
                    let sep: Vec<usize> = c.iter().copied().filter(|&v| v != new).collect();
                    if !sorted_subset(&sep, &self.cliques[p]) {
                        return Err(format!("clique {i} shares fewer than k nodes with its parent"));
                    }
                    seen.insert(new);
                }
                _ => return Err(format!("clique {i} has an invalid parent link")),
            }
        }
        if seen.len() != self.nodes.len() {
            return Err("node list and cliques disagree".into());
        }
        Ok(())
    }
}

/// Parent-set assignment per variable. Unassigned variables have not been
/// added to the structure yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    parents: Vec<Option<Vec<usize>>>,
    score: f64,
}

impl Dag {
    pub fn new(n: usize) -> Self {
        Dag {
            parents: vec![None; n],
            score: 0.0,
        }
    }

    /// Builds a fully assigned DAG from parent lists (scores left at zero).
    pub fn from_parents(parents: Vec<Vec<usize>>) -> Result<Self> {
        let mut dag = Dag::new(parents.len());
        for (v, p) in parents.into_iter().enumerate() {
            dag.assign(v, p, 0.0)?;
        }
        if !dag.is_acyclic() {
            return Err(Error::InvalidArgument("parent lists contain a cycle".into()));
        }
        Ok(dag)
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn set_score(&mut self, score: f64) {
        self.score = score;
    }

    /// Assigns a parent set and adds its family score to the total.
    pub fn assign(&mut self, var: usize, mut parents: Vec<usize>, family_score: f64) -> Result<()> {
        let n = self.n();
        if var >= n || parents.iter().any(|&p| p >= n || p == var) {
            return Err(Error::InvalidArgument(format!("bad family for variable {var}")));
        }
        parents.sort_unstable();
        if parents.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("duplicate parent of {var}")));
        }
        self.parents[var] = Some(parents);
        self.score += family_score;
        Ok(())
    }

    pub fn is_assigned(&self, var: usize) -> bool {
        self.parents[var].is_some()
    }

    pub fn is_complete(&self) -> bool {
        self.parents.iter().all(Option::is_some)
    }

    /// Parents of `var`; empty when unassigned.
    pub fn parents(&self, var: usize) -> &[usize] {
        self.parents[var].as_deref().unwrap_or(&[])
    }

    pub fn parent_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n()).map(|v| self.parents(v).to_vec()).collect()
    }

    pub fn arc_count(&self) -> usize {
        (0..self.n()).map(|v| self.parents(v).len()).sum()
    }

    /// Same parent sets for every variable (scores ignored).
    pub fn same_structure(&self, other: &Dag) -> bool {
        self.parents == other.parents
    }

    /// Kahn topological order over assigned variables, or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n();
        let mut indegree: Vec<usize> = (0..n).map(|v| self.parents(v).len()).collect();
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            for &p in self.parents(v) {
                children[p].push(v);
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        queue.reverse();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in children[v].iter().rev() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }
}

/// Simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl UndirectedGraph {
    pub fn new(n: usize) -> Self {
        UndirectedGraph {
            adj: vec![BTreeSet::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    /// Edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nb) in self.adj.iter().enumerate() {
            out.extend(nb.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    /// Largest clique (vertex plus remaining neighbours) created when
    /// eliminating vertices in `order`. Width is this minus one.
    pub fn elimination_clique_size(&self, order: &[usize]) -> usize {
        let mut adj = self.adj.clone();
        let mut eliminated = vec![false; self.n()];
        let mut largest = if self.n() == 0 { 0 } else { 1 };
        for &v in order {
            let nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !eliminated[u]).collect();
            largest = largest.max(nb.len() + 1);
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            eliminated[v] = true;
        }
        largest
    }
}

/// Arcs plus "married" co-parents. Fails if any variable is unassigned.
pub fn moral_graph(dag: &Dag) -> Result<UndirectedGraph> {
    let mut g = UndirectedGraph::new(dag.n());
    for v in 0..dag.n() {
        if !dag.is_assigned(v) {
            return Err(Error::InvalidArgument(format!("variable {v} has no parent set")));
        }
        let ps = dag.parents(v);
        for (i, &p) in ps.iter().enumerate() {
            g.add_edge(v, p);
            for &q in &ps[i + 1..] {
                g.add_edge(p, q);
            }
        }
    }
    Ok(g)
}

/// Largest graph accepted by [`exact_treewidth`].
pub const EXACT_TREEWIDTH_LIMIT: usize = 16;

/// Exact treewidth by dynamic programming over vertex subsets: the width of
/// eliminating the set `S` first is the minimum over its last vertex `v` of
/// the width of `S - v` and the number of vertices outside `S` reachable
/// from `v` through `S - v`.
pub fn exact_treewidth(g: &UndirectedGraph) -> Result<usize> {
    let n = g.n();
    if n > EXACT_TREEWIDTH_LIMIT {
        return Err(Error::TreewidthLimit {
            n,
            limit: EXACT_TREEWIDTH_LIMIT,
        });
    }
    if n == 0 {
        return Ok(0);
    }
    let nbr: Vec<u32> = (0..n)
        .map(|v| g.neighbors(v).iter().fold(0u32, |m, &u| m | (1 << u)))
        .collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    // |Q(S, v)|: vertices outside S ∪ {v} reachable from v via paths inside S
    let q_size = |s: u32, v: usize| -> u32 {
        let mut visited = 1u32 << v;
        let mut frontier = 1u32 << v;
        let mut reach = 0u32;
        while frontier != 0 {
            let mut next = 0u32;
            let mut f = frontier;
            while f != 0 {
                let u = f.trailing_zeros() as usize;
                f &= f - 1;
                next |= nbr[u];
            }
            next &= !visited;
            visited |= next;
            reach |= next & !s;
            frontier = next & s;
        }
        (reach & !(1 << v)).count_ones()
    };
    let mut tw = vec![u32::MAX; 1usize << n];
    tw[0] = 0;
    for s in 1..=full {
        let mut best = u32::MAX;
        let mut bits = s;
        while bits != 0 {
            let v = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let rest = s & !(1 << v);
            let w = tw[rest as usize].max(q_size(rest, v));
            best = best.min(w);
        }
        tw[s as usize] = best;
    }
    Ok(tw[full as usize] as usize)
}

/// True iff every moral edge of `dag` lies inside some clique of `kt`.
/// Unassigned variables contribute no edges.
pub fn is_moral_subgraph(dag: &Dag, kt: &KTree) -> bool {
    let inside = |a: usize, b: usize| {
        let mut pair = [a, b];
        pair.sort_unstable();
        kt.containing_clique(&pair).is_some()
    };
    for v in 0..dag.n() {
        let ps = dag.parents(v);
        for (i, &p) in ps.iter().enumerate() {
            if !inside(v, p) {
                return false;
            }
            for &q in &ps[i + 1..] {
                if !inside(p, q) {
                    return false;
                }
            }
        }
    }
    true
}
