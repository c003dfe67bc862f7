use super::VarId;
use crate::error::{Error, Result};

/// Table potential over binary variables.
///
/// Entries are indexed by the assignment of `scope` read as a binary number
/// with the last scope variable as the least significant bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<VarId>,
    table: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<VarId>, table: Vec<f64>) -> Result<Self> {
        if scope.is_empty() {
            return Err(Error::Structural("factor scope is empty".into()));
        }
        if scope.len() >= 31 {
            return Err(Error::Capacity(format!("factor over {} variables", scope.len())));
        }
        if table.len() != 1 << scope.len() {
            return Err(Error::Structural(format!(
                "factor over {} variables needs {} entries, got {}",
                scope.len(),
                1usize << scope.len(),
                table.len()
            )));
        }
        for (i, a) in scope.iter().enumerate() {
            if scope[..i].contains(a) {
                return Err(Error::Structural(format!("variable {} repeated in scope", a.0)));
            }
        }
        if let Some(v) = table.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Structural(format!("factor entry {v} is not a finite non-negative value")));
        }
        Ok(Factor { scope, table })
    }

    /// Internal intermediate factors may have an empty scope (a constant).
    pub(crate) fn constant(value: f64) -> Self {
        Factor {
            scope: Vec::new(),
            table: vec![value],
        }
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.scope.contains(&v)
    }

    /// Entry selected by the values `value_of` gives the scope variables.
    pub fn value(&self, value_of: impl Fn(VarId) -> bool) -> f64 {
        let mut idx = 0usize;
        for &v in &self.scope {
            idx = (idx << 1) | value_of(v) as usize;
        }
        self.table[idx]
    }

    /// Condition on an observed value, dropping the variable from the scope.
    pub(crate) fn reduce(&self, v: VarId, value: bool) -> Factor {
        let Some(pos) = self.scope.iter().position(|&u| u == v) else {
            return self.clone();
        };
        let n = self.scope.len();
        let bit = n - 1 - pos;
        let scope: Vec<VarId> = self.scope.iter().copied().filter(|&u| u != v).collect();
        let mut table = Vec::with_capacity(1 << (n - 1));
        for idx in 0..1usize << (n - 1) {
            let high = (idx >> bit) << (bit + 1);
            let low = idx & ((1 << bit) - 1);
            table.push(self.table[high | ((value as usize) << bit) | low]);
        }
        Factor { scope, table }
    }

    /// Pointwise product over the union of scopes (sorted by id).
    pub(crate) fn product(factors: &[&Factor]) -> Factor {
        let mut scope: Vec<VarId> = factors.iter().flat_map(|f| f.scope.iter().copied()).collect();
        scope.sort();
        scope.dedup();
        let n = scope.len();
        // bit of each operand variable in the union index
        let maps: Vec<Vec<usize>> = factors
            .iter()
            .map(|f| {
                f.scope
                    .iter()
                    .map(|v| n - 1 - scope.binary_search(v).unwrap())
                    .collect()
            })
            .collect();
        let mut table = vec![1.0; 1 << n];
        for (idx, slot) in table.iter_mut().enumerate() {
            for (f, bits) in factors.iter().zip(&maps) {
                let mut j = 0usize;
                for &b in bits {
                    j = (j << 1) | ((idx >> b) & 1);
                }
                *slot *= f.table[j];
            }
        }
        Factor { scope, table }
    }

    /// Sum a variable out.
    pub(crate) fn sum_out(&self, v: VarId) -> Factor {
        let a = self.reduce(v, false);
        let b = self.reduce(v, true);
        let table = a.table.iter().zip(&b.table).map(|(x, y)| x + y).collect();
        Factor { scope: a.scope, table }
    }
}
