//! Discrete graphical models over binary variables.
//!
//! A [`FactorNet`] is a bag of table [`Factor`]s. The same type carries
//! Bayesian networks (one CPD factor per variable, child last in the scope)
//! and Markov networks (arbitrary non-negative potentials). Exact inference is
//! by enumeration, by variable elimination ([`FactorNet::ve_marginal`]) or, for
//! forests of unary/pairwise factors, by a leaf-to-root recursion
//! ([`FactorNet::tree_partition_function`]).

mod convert;
mod factor;
mod text;
mod ve;

pub use convert::{bn_to_mn, is_tree_structured, mlp_to_bn, pairwise_mn};
pub use factor::Factor;

use crate::error::{Error, Result};

/// Default limit on brute-force enumeration.
pub const DEFAULT_ENUM_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Bayes,
    Markov,
}

impl NetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Bayes => "bayes",
            NetKind::Markov => "markov",
        }
    }
}

/// A complete setting of every variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment(pub Vec<bool>);

impl Assignment {
    /// Bit `i` of `mask` gives variable `i`.
    pub fn from_mask(mask: u64, num_vars: usize) -> Self {
        Assignment((0..num_vars).map(|i| (mask >> i) & 1 == 1).collect())
    }

    pub fn get(&self, v: VarId) -> bool {
        self.0[v.0]
    }
}

/// Observed values for a subset of variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence(Vec<(VarId, bool)>);

impl Evidence {
    pub fn new() -> Self {
        Evidence(Vec::new())
    }

    pub fn with(mut self, v: VarId, value: bool) -> Self {
        self.set(v, value);
        self
    }

    pub fn set(&mut self, v: VarId, value: bool) {
        match self.0.iter_mut().find(|(u, _)| *u == v) {
            Some(slot) => slot.1 = value,
            None => self.0.push((v, value)),
        }
    }

    pub fn get(&self, v: VarId) -> Option<bool> {
        self.0.iter().find(|(u, _)| *u == v).map(|&(_, b)| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, bool)> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNet {
    num_vars: usize,
    factors: Vec<Factor>,
    kind: NetKind,
}

impl FactorNet {
    pub fn new(kind: NetKind, num_vars: usize, factors: Vec<Factor>) -> Result<Self> {
        for (i, f) in factors.iter().enumerate() {
            if let Some(v) = f.scope().iter().find(|v| v.0 >= num_vars) {
                return Err(Error::Structural(format!(
                    "factor {i} references variable {} but the net has {num_vars}",
                    v.0
                )));
            }
        }
        if kind == NetKind::Bayes {
            let mut owner = vec![None; num_vars];
            for (i, f) in factors.iter().enumerate() {
                let child = *f.scope().last().unwrap();
                if let Some(j) = owner[child.0] {
                    return Err(Error::Structural(format!(
                        "variable {} has two CPDs (factors {j} and {i})",
                        child.0
                    )));
                }
                owner[child.0] = Some(i);
                for (row, pair) in f.table().chunks(2).enumerate() {
                    let s = pair[0] + pair[1];
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::Structural(format!(
                            "CPD for variable {} row {row} sums to {s}",
                            child.0
                        )));
                    }
                }
            }
            if let Some(v) = owner.iter().position(Option::is_none) {
                return Err(Error::Structural(format!("variable {v} has no CPD")));
            }
        }
        Ok(FactorNet {
            num_vars,
            factors,
            kind,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    /// Product of every factor entry selected by `a`.
    pub fn joint_unnormalized(&self, a: &Assignment) -> Result<f64> {
        if a.0.len() != self.num_vars {
            return Err(Error::Structural(format!(
                "assignment has {} values, net has {} variables",
                a.0.len(),
                self.num_vars
            )));
        }
        Ok(self.factors.iter().map(|f| f.value(|v| a.get(v))).product())
    }

    fn joint_mask(&self, mask: u64) -> f64 {
        self.factors
            .iter()
            .map(|f| f.value(|v| (mask >> v.0) & 1 == 1))
            .product()
    }

    fn check_enumerable(&self, cap: usize) -> Result<()> {
        if self.num_vars > cap || self.num_vars >= 64 {
            return Err(Error::Capacity(format!(
                "{} variables exceeds the enumeration cap of {cap}",
                self.num_vars
            )));
        }
        Ok(())
    }

    /// `Z` by summing the unnormalized joint over all `2^n` assignments.
    pub fn enumerate_partition_function(&self, cap: usize) -> Result<f64> {
        self.check_enumerable(cap)?;
        Ok((0..1u64 << self.num_vars).map(|m| self.joint_mask(m)).sum())
    }

    /// `Z`, by the tree recursion when the net is treewidth-1, by enumeration
    /// otherwise.
    pub fn partition_function(&self) -> Result<f64> {
        if self.is_treewidth_one() {
            return self.tree_partition_function().map(f64::exp);
        }
        self.enumerate_partition_function(DEFAULT_ENUM_CAP).map_err(|_| {
            Error::Capacity(format!(
                "net with {} variables is neither treewidth-1 nor within the enumeration cap",
                self.num_vars
            ))
        })
    }

    /// True when every factor has at most two variables and the interaction
    /// graph is a forest.
    pub fn is_treewidth_one(&self) -> bool {
        if self.factors.iter().any(|f| f.scope().len() > 2) {
            return false;
        }
        let mut uf = UnionFind::new(self.num_vars);
        let mut seen = std::collections::HashSet::new();
        for f in &self.factors {
            if let [a, b] = f.scope() {
                let key = (a.0.min(b.0), a.0.max(b.0));
                if !seen.insert(key) {
                    continue;
                }
                if !uf.union(a.0, b.0) {
                    return false;
                }
            }
        }
        true
    }

    /// `log Z` for a treewidth-1 net.
    ///
    /// Variables are layered into generations by breadth-first search from the
    /// lowest id of each component. Starting from the deepest generation, each
    /// variable's local table (its unary factors times the messages of its
    /// children) is multiplied into the edge potentials towards its parent and
    /// summed out. The root tables of all components multiply into `Z`.
    /// Messages are renormalised as they go, with the scale kept in log space.
    pub fn tree_partition_function(&self) -> Result<f64> {
        if !self.is_treewidth_one() {
            return Err(Error::Usage("net is not treewidth-1".into()));
        }
        let n = self.num_vars;
        let mut unary = vec![[1.0f64; 2]; n];
        // edge potentials indexed by (low id, high id), table[a_low][a_high]
        let mut edges: std::collections::BTreeMap<(usize, usize), [[f64; 2]; 2]> =
            std::collections::BTreeMap::new();
        for f in &self.factors {
            match f.scope() {
                [a] => {
                    unary[a.0][0] *= f.table()[0];
                    unary[a.0][1] *= f.table()[1];
                }
                [a, b] => {
                    let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
                    let e = edges.entry((lo, hi)).or_insert([[1.0; 2]; 2]);
                    for vl in 0..2 {
                        for vh in 0..2 {
                            let idx = if swap { vh * 2 + vl } else { vl * 2 + vh };
                            e[vl][vh] *= f.table()[idx];
                        }
                    }
                }
                _ => unreachable!("checked treewidth-1"),
            }
        }
        let mut adj = vec![Vec::new(); n];
        for &(lo, hi) in edges.keys() {
            adj[lo].push(hi);
            adj[hi].push(lo);
        }
        let mut parent = vec![usize::MAX; n];
        let mut generation = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut roots = Vec::new();
        for start in 0..n {
            if generation[start] != usize::MAX {
                continue;
            }
            roots.push(start);
            generation[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &u in &adj[v] {
                    if generation[u] == usize::MAX {
                        generation[u] = generation[v] + 1;
                        parent[u] = v;
                        queue.push_back(u);
                    }
                }
            }
        }
        let mut local = unary;
        let mut log_scale = 0.0;
        for &v in order.iter().rev() {
            let p = parent[v];
            if p == usize::MAX {
                continue;
            }
            let (lo, hi) = (v.min(p), v.max(p));
            let e = &edges[&(lo, hi)];
            let mut msg = [0.0; 2];
            for (vp, m) in msg.iter_mut().enumerate() {
                for vv in 0..2 {
                    let pot = if v == lo { e[vv][vp] } else { e[vp][vv] };
                    *m += pot * local[v][vv];
                }
            }
            let s = msg[0] + msg[1];
            if s == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            log_scale += s.ln();
            local[p][0] *= msg[0] / s;
            local[p][1] *= msg[1] / s;
        }
        for &r in &roots {
            let s = local[r][0] + local[r][1];
            if s == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            log_scale += s.ln();
        }
        Ok(log_scale)
    }

    /// `P(query | evidence)` by enumeration over the unobserved variables.
    pub fn enumerate_marginal(&self, query: VarId, evidence: &Evidence, cap: usize) -> Result<(f64, f64)> {
        self.check_query(query, evidence)?;
        let free: Vec<usize> = (0..self.num_vars)
            .filter(|&i| evidence.get(VarId(i)).is_none())
            .collect();
        if free.len() > cap {
            return Err(Error::Capacity(format!(
                "{} free variables exceeds the enumeration cap of {cap}",
                free.len()
            )));
        }
        let mut base = 0u64;
        for (v, b) in evidence.iter() {
            if b {
                base |= 1 << v.0;
            }
        }
        let mut acc = [0.0; 2];
        for m in 0..1u64 << free.len() {
            let mut mask = base;
            for (k, &i) in free.iter().enumerate() {
                if (m >> k) & 1 == 1 {
                    mask |= 1 << i;
                }
            }
            acc[((mask >> query.0) & 1) as usize] += self.joint_mask(mask);
        }
        normalize(acc)
    }

    fn check_query(&self, query: VarId, evidence: &Evidence) -> Result<()> {
        if query.0 >= self.num_vars {
            return Err(Error::Usage(format!("query variable {} out of range", query.0)));
        }
        if evidence.get(query).is_some() {
            return Err(Error::Usage(format!("query variable {} is also evidence", query.0)));
        }
        if let Some((v, _)) = evidence.iter().find(|(v, _)| v.0 >= self.num_vars) {
            return Err(Error::Usage(format!("evidence variable {} out of range", v.0)));
        }
        Ok(())
    }
}

pub(crate) fn normalize(acc: [f64; 2]) -> Result<(f64, f64)> {
    let z = acc[0] + acc[1];
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Inference(format!(
            "normalizer is {z}; evidence has zero probability"
        )));
    }
    Ok((acc[0] / z, acc[1] / z))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}
