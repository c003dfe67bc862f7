//! Views of a sigmoid [`Mlp`] as a graphical model.
//!
//! Variables are the network units, numbered layer-major by
//! [`Mlp::node_id`]. Inputs carry a Bernoulli(0.5) prior in the Bayesian view.

use super::{Factor, FactorNet, NetKind, VarId};
use crate::dnn::{Mlp, OutputKind};
use crate::error::{Error, Result};
use crate::math::sigmoid;

fn require_sigmoid(mlp: &Mlp) -> Result<()> {
    if mlp.output_kind() != OutputKind::Bernoulli {
        return Err(Error::Usage("graphical-model views need sigmoid units throughout".into()));
    }
    Ok(())
}

fn parents(mlp: &Mlp, layer: usize) -> Vec<VarId> {
    (0..mlp.dims()[layer - 1])
        .map(|k| VarId(mlp.node_id(layer - 1, k)))
        .collect()
}

/// Logit of unit `(layer, j)` given its parents' values, read from `mask`
/// bits over the parent list.
fn unit_logit(mlp: &Mlp, layer: usize, j: usize, mask: usize) -> f64 {
    let n = mlp.dims()[layer - 1];
    let vals: Vec<f64> = (0..n)
        .map(|k| ((mask >> (n - 1 - k)) & 1) as f64)
        .collect();
    mlp.pre_activation(layer - 1, j, &vals)
}

/// Sigmoid Bayesian network: Bernoulli(0.5) inputs and one logistic CPD per
/// unit, scope `[parents..., unit]`.
pub fn mlp_to_bn(mlp: &Mlp) -> Result<FactorNet> {
    require_sigmoid(mlp)?;
    let mut factors = Vec::new();
    for k in 0..mlp.input_dim() {
        factors.push(Factor::new(vec![VarId(mlp.node_id(0, k))], vec![0.5, 0.5])?);
    }
    for layer in 1..mlp.dims().len() {
        let pa = parents(mlp, layer);
        for j in 0..mlp.dims()[layer] {
            let mut scope = pa.clone();
            scope.push(VarId(mlp.node_id(layer, j)));
            let mut table = Vec::with_capacity(1 << scope.len());
            for mask in 0..1usize << pa.len() {
                let p = sigmoid(unit_logit(mlp, layer, j, mask));
                table.push(1.0 - p);
                table.push(p);
            }
            factors.push(Factor::new(scope, table)?);
        }
    }
    FactorNet::new(NetKind::Bayes, mlp.num_nodes(), factors)
}

/// Pairwise Markov network with one potential per edge, `e^w` when both
/// endpoints are true and 1 otherwise, and a unary `[1, e^b]` per bias.
///
/// This is the potential form used on the unrolled trees. On its own it does
/// not reproduce the Bayesian-network joint; see [`bn_to_mn`].
pub fn pairwise_mn(mlp: &Mlp) -> Result<FactorNet> {
    require_sigmoid(mlp)?;
    FactorNet::new(NetKind::Markov, mlp.num_nodes(), pairwise_factors(mlp)?)
}

fn pairwise_factors(mlp: &Mlp) -> Result<Vec<Factor>> {
    let mut factors = Vec::new();
    for layer in 1..mlp.dims().len() {
        for j in 0..mlp.dims()[layer] {
            let child = VarId(mlp.node_id(layer, j));
            for k in 0..mlp.dims()[layer - 1] {
                let parent = VarId(mlp.node_id(layer - 1, k));
                let w = mlp.weight(layer - 1, j, k);
                factors.push(Factor::new(vec![parent, child], vec![1.0, 1.0, 1.0, w.exp()])?);
            }
            let b = mlp.bias(layer - 1, j);
            factors.push(Factor::new(vec![child], vec![1.0, b.exp()])?);
        }
    }
    Ok(factors)
}

/// Markov network with the same joint distribution as [`mlp_to_bn`].
///
/// Contains the pairwise potentials of [`pairwise_mn`] plus, for every
/// non-input unit `v`, the CPD normalizer `1 / (1 + e^{s_v(pa)})` as a factor
/// over the parents of `v`. When `v` has a single parent that factor is unary,
/// so on nets where every unit has at most one parent the interaction graph is
/// exactly the network skeleton. Units with several parents couple them.
pub fn bn_to_mn(mlp: &Mlp) -> Result<FactorNet> {
    require_sigmoid(mlp)?;
    let mut factors = pairwise_factors(mlp)?;
    for layer in 1..mlp.dims().len() {
        let pa = parents(mlp, layer);
        for j in 0..mlp.dims()[layer] {
            let table = (0..1usize << pa.len())
                .map(|mask| 1.0 / (1.0 + unit_logit(mlp, layer, j, mask).exp()))
                .collect();
            factors.push(Factor::new(pa.clone(), table)?);
        }
    }
    FactorNet::new(NetKind::Markov, mlp.num_nodes(), factors)
}

/// True when the layered graph's undirected skeleton is a tree.
pub fn is_tree_structured(mlp: &Mlp) -> bool {
    let edges: usize = mlp.dims().windows(2).map(|w| w[0] * w[1]).sum();
    edges + 1 == mlp.num_nodes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::Assignment;

    fn chain(w1: f64, b1: f64, w2: f64, b2: f64) -> Mlp {
        Mlp::from_parts(&[1, 1, 1], vec![vec![w1], vec![w2]], vec![vec![b1], vec![b2]], OutputKind::Bernoulli)
            .unwrap()
    }

    #[test]
    fn zero_weight_edge_potential_is_all_ones() {
        let mn = pairwise_mn(&chain(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(mn.factors()[0].table(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn edge_potential_layout() {
        let mn = pairwise_mn(&chain(0.7, 0.0, 0.0, 0.0)).unwrap();
        let f = &mn.factors()[0];
        assert_eq!(f.scope(), &[VarId(0), VarId(1)]);
        // (A, B) = (0,0), (0,1), (1,0), (1,1)
        assert_eq!(f.table(), &[1.0, 1.0, 1.0, 0.7f64.exp()]);
        assert_eq!(f.value(|_| true), 0.7f64.exp());
    }

    #[test]
    fn chain_mn_matches_bn_joint() {
        let mlp = chain(1.3, -0.4, -2.1, 0.8);
        let bn = mlp_to_bn(&mlp).unwrap();
        let mn = bn_to_mn(&mlp).unwrap();
        let z = mn.partition_function().unwrap();
        assert!((bn.partition_function().unwrap() - 1.0).abs() < 1e-12);
        for mask in 0..8 {
            let a = Assignment::from_mask(mask, 3);
            let p_bn = bn.joint_unnormalized(&a).unwrap();
            let p_mn = mn.joint_unnormalized(&a).unwrap() / z;
            assert!((p_bn - p_mn).abs() < 1e-12, "{mask}: {p_bn} vs {p_mn}");
        }
    }

    #[test]
    fn single_parent_nets_need_no_moralization() {
        let mlp = chain(0.5, 0.1, 0.2, 0.3);
        let mn = bn_to_mn(&mlp).unwrap();
        assert!(mn.is_treewidth_one());
        assert!(mn.factors().iter().all(|f| f.scope().len() <= 2));
    }

    #[test]
    fn pairwise_alone_differs_from_bn() {
        // the child's normalizer is what the bare pairwise form leaves out
        let mlp = chain(0.0, 0.0, 3.0, 0.0);
        let bn = mlp_to_bn(&mlp).unwrap();
        let mn = pairwise_mn(&mlp).unwrap();
        let e = crate::pgm::Evidence::new();
        let (_, p_bn) = bn.ve_marginal(VarId(1), &e).unwrap();
        let (_, p_mn) = mn.ve_marginal(VarId(1), &e).unwrap();
        assert!((p_bn - 0.5).abs() < 1e-12);
        assert!(p_mn > 0.6);
    }

    #[test]
    fn tree_structure_detection() {
        let t = |d: &[usize]| is_tree_structured(&Mlp::zeros(d, OutputKind::Bernoulli).unwrap());
        assert!(t(&[1, 1, 1]));
        assert!(t(&[2, 1, 3]));
        assert!(t(&[1, 4]));
        assert!(!t(&[1, 2, 1]));
        assert!(!t(&[2, 2, 1]));
    }
}
