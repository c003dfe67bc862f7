//! Sum-product variable elimination.

use std::collections::BTreeSet;

use super::{normalize, Evidence, Factor, FactorNet, VarId};
use crate::error::Result;

impl FactorNet {
    /// Exact `(P(q = 0 | e), P(q = 1 | e))`.
    ///
    /// Evidence is absorbed into the factors, then every other variable is
    /// eliminated in min-degree order over the induced interaction graph,
    /// ties broken by the lowest id.
    pub fn ve_marginal(&self, query: VarId, evidence: &Evidence) -> Result<(f64, f64)> {
        self.check_query(query, evidence)?;
        let mut pool: Vec<Factor> = self
            .factors()
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for (v, b) in evidence.iter() {
                    if g.contains(v) {
                        g = g.reduce(v, b);
                    }
                }
                g
            })
            .collect();

        let mut remaining: BTreeSet<VarId> = (0..self.num_vars())
            .map(VarId)
            .filter(|&v| v != query && evidence.get(v).is_none())
            .collect();

        while let Some(var) = pick_min_degree(&pool, &remaining) {
            remaining.remove(&var);
            let (touching, rest): (Vec<Factor>, Vec<Factor>) =
                pool.into_iter().partition(|f| f.contains(var));
            pool = rest;
            if touching.is_empty() {
                // Unconstrained variable: uniform sum contributes a factor of 2.
                pool.push(Factor::constant(2.0));
                continue;
            }
            let refs: Vec<&Factor> = touching.iter().collect();
            let eliminated = Factor::product(&refs).sum_out(var);
            pool.push(rescale(eliminated));
        }

        let refs: Vec<&Factor> = pool.iter().collect();
        let fin = Factor::product(&refs);
        match fin.scope() {
            [] => normalize([fin.table()[0], fin.table()[0]]),
            [v] if *v == query => normalize([fin.table()[0], fin.table()[1]]),
            _ => unreachable!("only the query variable survives elimination"),
        }
    }
}

/// Intermediate factors are divided by their largest entry; the marginal is
/// normalized at the end so constant scales drop out.
fn rescale(f: Factor) -> Factor {
    let m = f.table().iter().cloned().fold(0.0, f64::max);
    if m > 0.0 && m.is_finite() {
        let scope = f.scope().to_vec();
        let table: Vec<f64> = f.table().iter().map(|v| v / m).collect();
        if scope.is_empty() {
            return Factor::constant(table[0]);
        }
        Factor::new(scope, table).expect("rescaled factor stays valid")
    } else {
        f
    }
}

fn pick_min_degree(pool: &[Factor], remaining: &BTreeSet<VarId>) -> Option<VarId> {
    let mut best: Option<(usize, VarId)> = None;
    for &v in remaining {
        let mut nbrs = BTreeSet::new();
        for f in pool.iter().filter(|f| f.contains(v)) {
            nbrs.extend(f.scope().iter().copied().filter(|&u| u != v));
        }
        let d = nbrs.len();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, v));
        }
    }
    best.map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::pgm::NetKind;

    #[test]
    fn logistic_chain_with_parent_observed() {
        // A -> B with weight 1 and bias 0, as CPDs
        let pa = Factor::new(vec![VarId(0)], vec![0.5, 0.5]).unwrap();
        let s = crate::math::sigmoid(1.0);
        let pb = Factor::new(vec![VarId(0), VarId(1)], vec![0.5, 0.5, 1.0 - s, s]).unwrap();
        let net = FactorNet::new(NetKind::Bayes, 2, vec![pa, pb]).unwrap();
        let (_, p1) = net.ve_marginal(VarId(1), &Evidence::new().with(VarId(0), true)).unwrap();
        assert!((p1 - 0.7310586).abs() < 1e-7);
    }

    #[test]
    fn isolated_uniform_variable_is_half() {
        let f = Factor::new(vec![VarId(1), VarId(2)], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = Factor::new(vec![VarId(0)], vec![3.0, 3.0]).unwrap();
        let net = FactorNet::new(NetKind::Markov, 3, vec![f, u]).unwrap();
        assert_eq!(net.ve_marginal(VarId(0), &Evidence::new()).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn query_in_evidence_is_usage_error() {
        let net = FactorNet::new(NetKind::Markov, 2, vec![]).unwrap();
        let e = Evidence::new().with(VarId(1), true);
        assert!(matches!(net.ve_marginal(VarId(1), &e), Err(Error::Usage(_))));
    }

    #[test]
    fn contradictory_evidence_is_inference_error() {
        let f = Factor::new(vec![VarId(0), VarId(1)], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = Factor::new(vec![VarId(1), VarId(2)], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let net = FactorNet::new(NetKind::Markov, 3, vec![f, g]).unwrap();
        let e = Evidence::new().with(VarId(0), true).with(VarId(2), false);
        assert!(matches!(net.ve_marginal(VarId(1), &e), Err(Error::Inference(_))));
    }
}
