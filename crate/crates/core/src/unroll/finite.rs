//! Closed-form evaluation of the `L`-replicated tree.
//!
//! All `L` copies of a parent see isomorphic ancestor subtrees, so summing
//! them out multiplies a single message into the child `L` times. With `p` the
//! log-odds a latent parent carries forward and `theta` its edge weight, a
//! child's log-odds is
//!
//! ```text
//! s = b + sum_j w_j g_j + sum_i L * [ log(e^{p_i + theta_i / L} + 1) - log(e^{p_i} + 1) ]
//! ```
//!
//! where `g_j` are observed inputs (their `L` copies with weight `w_j / L` sum
//! back to `w_j g_j`). The bracket is evaluated as
//! `ln_1p(sigma(p) * expm1(theta / L))`, which keeps full relative precision
//! as `L` grows. The cost is independent of `L`.

use crate::dnn::{bernoulli_nll, Gradient, Mlp, OutputKind};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

/// Number of copies per parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Copies {
    Finite(u64),
    /// The limit, which is the network's forward pass.
    Infinite,
}

#[derive(Debug, Clone)]
pub struct FiniteLModel<'a> {
    mlp: &'a Mlp,
    copies: Copies,
}

/// `L * [softplus(p + theta / L) - softplus(p)]`.
fn replicated_message(p: f64, theta: f64, l: f64) -> f64 {
    let delta = theta / l;
    if delta < 30.0 {
        l * (sigmoid(p) * delta.exp_m1()).ln_1p()
    } else {
        l * (softplus(p + delta) - softplus(p))
    }
}

impl<'a> FiniteLModel<'a> {
    pub fn new(mlp: &'a Mlp, copies: Copies) -> Result<Self> {
        if let Copies::Finite(0) = copies {
            return Err(Error::Usage("L must be at least 1".into()));
        }
        if mlp.output_kind() != OutputKind::Bernoulli {
            return Err(Error::Usage("finite-L model needs sigmoid outputs".into()));
        }
        Ok(FiniteLModel { mlp, copies })
    }

    pub fn copies(&self) -> Copies {
        self.copies
    }

    /// Per-layer log-odds for layers `1..`: `result[l]` is layer `l + 1`.
    pub fn log_odds(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mlp = self.mlp;
        let layers = mlp.num_layers();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let first: Vec<f64> = (0..mlp.dims()[1]).map(|j| mlp.pre_activation(0, j, x)).collect();
        out.push(first);
        for l in 1..layers {
            let prev = &out[l - 1];
            let layer: Vec<f64> = match self.copies {
                Copies::Infinite => {
                    let probs: Vec<f64> = prev.iter().map(|&p| sigmoid(p)).collect();
                    (0..mlp.dims()[l + 1])
                        .map(|j| mlp.pre_activation(l, j, &probs))
                        .collect()
                }
                Copies::Finite(lc) => {
                    let lf = lc as f64;
                    (0..mlp.dims()[l + 1])
                        .map(|j| {
                            let mut s = mlp.bias(l, j);
                            for (i, &p) in prev.iter().enumerate() {
                                s += replicated_message(p, mlp.weight(l, j, i), lf);
                            }
                            s
                        })
                        .collect()
                }
            };
            out.push(layer);
        }
        out
    }

    /// `P(unit = 1 | x)` for every non-input unit; `result[l]` is layer `l + 1`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self
            .log_odds(x)
            .into_iter()
            .map(|layer| layer.into_iter().map(sigmoid).collect())
            .collect())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mlp.input_dim() {
            return Err(Error::Structural(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.mlp.input_dim()
            )));
        }
        Ok(())
    }

    /// Log-probability of the observed label at the (single) output unit,
    /// hidden units summed out.
    pub fn loglik(&self, x: &[f64], y: bool) -> Result<f64> {
        self.check_input(x)?;
        if self.mlp.output_dim() != 1 {
            return Err(Error::Usage("log-likelihood needs a single output unit".into()));
        }
        let s = *self.log_odds(x).last().unwrap().first().unwrap();
        Ok(-bernoulli_nll(sigmoid(s), y))
    }

    /// Gradient of [`FiniteLModel::loglik`] by central differences with one
    /// Richardson extrapolation step (steps `h` and `h / 2`).
    pub fn loglik_gradient(&self, x: &[f64], y: bool, h: f64) -> Result<Gradient> {
        self.check_input(x)?;
        let base = self.mlp.params();
        let mut probe = self.mlp.clone();
        let mut eval = |i: usize, delta: f64| -> Result<f64> {
            let mut p = base.clone();
            p[i] += delta;
            probe.set_params(&p);
            FiniteLModel::new(&probe, self.copies)?.loglik(x, y)
        };
        let mut g = vec![0.0; base.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let d1 = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
            let d2 = (eval(i, h / 2.0)? - eval(i, -h / 2.0)?) / h;
            *gi = (4.0 * d2 - d1) / 3.0;
        }
        Ok(Gradient::from_flat(self.mlp, &g))
    }
}

/// Finite-difference step used by the gradient oracle.
pub const FD_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::ce_loss;
    use crate::unroll::{unroll_step1, unroll_step2, DEFAULT_VERTEX_CAP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> Mlp {
        Mlp::from_parts(&[1, 1, 1], vec![vec![1.0], vec![1.0]], vec![vec![0.0], vec![0.0]], OutputKind::Bernoulli)
            .unwrap()
    }

    fn random(dims: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::zeros(dims, OutputKind::Bernoulli).unwrap();
        let p: Vec<f64> = (0..m.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        m.set_params(&p);
        m
    }

    #[test]
    fn chain_at_l1_matches_hand_value() {
        let mlp = chain();
        let m = FiniteLModel::new(&mlp, Copies::Finite(1)).unwrap();
        let out = m.forward(&[1.0]).unwrap()[1][0];
        let e = std::f64::consts::E;
        assert!((out - sigmoid(((e * e + 1.0) / (e + 1.0)).ln())).abs() < 1e-15);
        let ll = m.loglik(&[1.0], true).unwrap();
        assert!((ll - out.ln()).abs() < 1e-15);
        assert!((ll + 0.3669).abs() < 1e-4);
        let ll0 = m.loglik(&[1.0], false).unwrap();
        assert!((ll0 - (1.0 - out).ln()).abs() < 1e-14);
    }

    #[test]
    fn chain_converges_to_forward() {
        let mlp = chain();
        let m = FiniteLModel::new(&mlp, Copies::Finite(1_000_000)).unwrap();
        let out = m.forward(&[1.0]).unwrap()[1][0];
        assert!((out - sigmoid(sigmoid(1.0))).abs() <= 2e-6);
    }

    #[test]
    fn infinite_mode_is_bit_identical_to_forward() {
        for seed in 0..5 {
            let mlp = random(&[4, 4, 4, 1], seed);
            let m = FiniteLModel::new(&mlp, Copies::Infinite).unwrap();
            for mask in 0..16u32 {
                let x: Vec<f64> = (0..4).map(|i| ((mask >> i) & 1) as f64).collect();
                let ours = m.forward(&x).unwrap();
                let trace = mlp.forward(&x).unwrap();
                assert_eq!(&ours[..], &trace.activations[1..]);
                let y = mask % 2 == 0;
                assert_eq!(m.loglik(&x, y).unwrap(), -ce_loss(&trace, y as usize));
            }
        }
    }

    #[test]
    fn matches_explicit_tree_small() {
        let mlp = random(&[2, 2, 1], 11);
        let t1 = unroll_step1(&mlp);
        for l in 1..=3u64 {
            let tree = unroll_step2(&t1, l as usize, DEFAULT_VERTEX_CAP).unwrap();
            let m = FiniteLModel::new(&mlp, Copies::Finite(l)).unwrap();
            let x = [1.0, 0.0];
            let probs = m.forward(&x).unwrap();
            for layer in 1..3 {
                for j in 0..mlp.dims()[layer] {
                    let e = tree.explicit_marginal(&[true, false], mlp.node_id(layer, j)).unwrap();
                    assert!((e - probs[layer - 1][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn infinite_gradient_matches_backprop() {
        let mlp = random(&[3, 3, 2, 1], 5);
        let m = FiniteLModel::new(&mlp, Copies::Infinite).unwrap();
        let x = [1.0, 0.0, 1.0];
        let fd = m.loglik_gradient(&x, true, FD_STEP).unwrap();
        let bp = mlp.backprop(&mlp.forward(&x).unwrap(), 1);
        for (a, b) in fd.iter().zip(bp.iter()) {
            assert!((a + b).abs() < 1e-9, "{a} vs {}", -b);
        }
    }

    #[test]
    fn zero_net_gradient_symmetric_within_layers() {
        let mlp = Mlp::zeros(&[2, 3, 3, 1], OutputKind::Bernoulli).unwrap();
        let m = FiniteLModel::new(&mlp, Copies::Finite(10)).unwrap();
        let g = m.loglik_gradient(&[1.0, 1.0], true, FD_STEP).unwrap();
        for l in 0..3 {
            let first = g.d_biases[l][0];
            assert!(g.d_biases[l].iter().all(|v| (v - first).abs() < 1e-9));
            let wfirst = g.d_weights[l][0];
            assert!(g.d_weights[l].iter().all(|v| (v - wfirst).abs() < 1e-9));
        }
    }

    #[test]
    fn huge_ratio_stays_finite() {
        let mlp = Mlp::from_parts(&[1, 1, 1], vec![vec![800.0], vec![800.0]], vec![vec![0.0], vec![0.0]], OutputKind::Bernoulli)
            .unwrap();
        let m = FiniteLModel::new(&mlp, Copies::Finite(1)).unwrap();
        let p = m.forward(&[1.0]).unwrap();
        assert!(p[1][0].is_finite());
        assert_eq!(p[1][0], 1.0);
    }

    #[test]
    fn rejects_zero_copies() {
        let mlp = chain();
        assert!(FiniteLModel::new(&mlp, Copies::Finite(0)).is_err());
    }
}
