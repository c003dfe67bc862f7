//! Stochastic hidden-layer model and MCMC fine-tuning.
//!
//! Each hidden unit holds a value `h` in `(0, 1)`, read as the average of `L`
//! Bernoulli copies and approximated by `N(p, p (1 - p) / L)` with `p` the
//! logistic activation of the previous layer. Chains live in logit space.
//! [`hmc`] moves them with leapfrog trajectories, [`gibbs`] resamples binary
//! states unit by unit, and [`cd`] runs the contrastive-divergence loop.

pub mod cd;
pub mod gibbs;
pub mod hmc;

pub use cd::{cd_k_train, predict_prob, CdConfig, CdReport, Optimizer, Sampler};
pub use gibbs::{gibbs_conditional, gibbs_step, init_binary, BinaryState};
pub use hmc::{hmc_step, leapfrog, HmcConfig, HmcOutcome};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dnn::{Gradient, Mlp, OutputKind};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, logit, sigmoid, softplus};

pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;
/// Bounds applied to freshly initialized `h` before taking the logit.
pub const INIT_CLAMP: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct StochModel {
    pub mlp: Mlp,
    /// Variance divisor; `f64::INFINITY` collapses every layer to its mean.
    pub l: f64,
    pub var_floor: f64,
    /// Include the change of variables from `h` to its logit in the energy.
    pub jacobian: bool,
}

impl StochModel {
    pub fn new(mlp: Mlp, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Usage(format!("L must be positive, got {l}")));
        }
        if mlp.output_kind() != OutputKind::Bernoulli || mlp.output_dim() != 1 {
            return Err(Error::Usage("samplers need a single sigmoid output".into()));
        }
        if mlp.num_layers() < 2 {
            return Err(Error::Usage("samplers need at least one hidden layer".into()));
        }
        Ok(StochModel {
            mlp,
            l,
            var_floor: DEFAULT_VAR_FLOOR,
            jacobian: true,
        })
    }

    pub fn with_jacobian(mut self, on: bool) -> Self {
        self.jacobian = on;
        self
    }

    /// Gaussian variance for mean `p`, with the floor applied.
    pub fn variance(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.l).max(self.var_floor)
    }

    fn dvariance_dp(&self, p: f64) -> f64 {
        if p * (1.0 - p) / self.l > self.var_floor {
            (1.0 - 2.0 * p) / self.l
        } else {
            0.0
        }
    }

    /// Number of hidden layers `K`.
    pub fn num_hidden(&self) -> usize {
        self.mlp.num_layers() - 1
    }
}

/// Hidden-unit values of one chain, stored as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    logits: Vec<Vec<f64>>,
    cached_h: Vec<Vec<f64>>,
}

impl ChainState {
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        let cached_h = logits
            .iter()
            .map(|l| l.iter().map(|&r| sigmoid(r)).collect())
            .collect();
        ChainState { logits, cached_h }
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn h(&self) -> &[Vec<f64>] {
        &self.cached_h
    }

    pub fn flat_logits(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    /// Same shape as `self`, logits replaced from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let logits = self
            .logits
            .iter()
            .map(|l| l.iter().map(|_| it.next().expect("flat length")).collect())
            .collect();
        ChainState::from_logits(logits)
    }

    pub fn len(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Means of hidden layers `1..=K`, each given the values `h` of the layer
/// below (the input for layer 1), and the output logit.
fn layer_means(mlp: &Mlp, x: &[f64], h: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = h.len();
    let mut means = Vec::with_capacity(k);
    for i in 0..k {
        let prev: &[f64] = if i == 0 { x } else { &h[i - 1] };
        means.push((0..mlp.dims()[i + 1]).map(|j| sigmoid(mlp.pre_activation(i, j, prev))).collect());
    }
    let s = mlp.pre_activation(k, 0, &h[k - 1]);
    (means, s)
}

fn check_shapes(model: &StochModel, state: &ChainState, x: &[f64]) -> Result<()> {
    if x.len() != model.mlp.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} entries, network expects {}",
            x.len(),
            model.mlp.input_dim()
        )));
    }
    let dims: Vec<usize> = state.logits.iter().map(Vec::len).collect();
    if dims != model.mlp.hidden_dims() {
        return Err(Error::Structural(format!(
            "chain has hidden dims {dims:?}, network has {:?}",
            model.mlp.hidden_dims()
        )));
    }
    Ok(())
}

/// `-log p(y | h_K)` from the output logit.
fn output_nll(s: f64, y: bool) -> f64 {
    if y {
        softplus(-s)
    } else {
        softplus(s)
    }
}

/// Potential energy `U` of a chain state.
pub fn potential_energy(model: &StochModel, state: &ChainState, x: &[f64], y: bool) -> Result<f64> {
    check_shapes(model, state, x)?;
    let (means, s) = layer_means(&model.mlp, x, &state.cached_h);
    let mut u = output_nll(s, y);
    for (i, layer) in means.iter().enumerate() {
        for (j, &p) in layer.iter().enumerate() {
            let v = model.variance(p);
            let d = state.cached_h[i][j] - p;
            u += 0.5 * (LN_2PI + v.ln()) + d * d / (2.0 * v);
            if model.jacobian {
                let r = state.logits[i][j];
                u -= log_sigmoid(r) + log_sigmoid(-r);
            }
        }
    }
    Ok(u)
}

/// Derivatives of the energy (without the Jacobian) with respect to the
/// hidden values and to every pre-activation, from which both the logit
/// gradient and the parameter gradient follow.
struct Backward {
    /// `dU/dh` per hidden layer.
    dh: Vec<Vec<f64>>,
    /// `dU/da` for the pre-activations feeding hidden layer `i + 1`.
    da: Vec<Vec<f64>>,
    /// `dU/ds` at the output logit.
    ds: f64,
    energy_terms: f64,
}

fn backward(model: &StochModel, x: &[f64], h: &[Vec<f64>], y: bool) -> Backward {
    let mlp = &model.mlp;
    let k = h.len();
    let (means, s) = layer_means(mlp, x, h);
    let mut energy = output_nll(s, y);
    let ds = sigmoid(s) - if y { 1.0 } else { 0.0 };
    let mut dh: Vec<Vec<f64>> = h.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut da: Vec<Vec<f64>> = h.iter().map(|l| vec![0.0; l.len()]).collect();
    for (j, d) in dh[k - 1].iter_mut().enumerate() {
        *d += mlp.weight(k, 0, j) * ds;
    }
    for i in (0..k).rev() {
        for j in 0..h[i].len() {
            let p = means[i][j];
            let v = model.variance(p);
            let d = h[i][j] - p;
            energy += 0.5 * (LN_2PI + v.ln()) + d * d / (2.0 * v);
            dh[i][j] += d / v;
            let dp = -d / v + model.dvariance_dp(p) * (0.5 / v - d * d / (2.0 * v * v));
            da[i][j] = dp * p * (1.0 - p);
        }
        if i > 0 {
            for (m, dm) in dh[i - 1].iter_mut().enumerate() {
                for (j, &a) in da[i].iter().enumerate() {
                    *dm += mlp.weight(i, j, m) * a;
                }
            }
        }
    }
    Backward {
        dh,
        da,
        ds,
        energy_terms: energy,
    }
}

/// `dU/d logit` for every hidden unit, flattened layer by layer.
pub fn grad_potential(model: &StochModel, state: &ChainState, x: &[f64], y: bool) -> Result<Vec<f64>> {
    check_shapes(model, state, x)?;
    let b = backward(model, x, &state.cached_h, y);
    let mut g = Vec::with_capacity(state.len());
    for (i, layer) in state.cached_h.iter().enumerate() {
        for (j, &h) in layer.iter().enumerate() {
            let mut d = b.dh[i][j] * h * (1.0 - h);
            if model.jacobian {
                d += 2.0 * h - 1.0;
            }
            g.push(d);
        }
    }
    Ok(g)
}

/// Fine-tuning loss `-log p(y, h | x)` at fixed `h` and its parameter gradient.
pub fn loss_and_param_grad(model: &StochModel, h: &[Vec<f64>], x: &[f64], y: bool) -> (f64, Gradient) {
    let b = backward(model, x, h, y);
    (b.energy_terms, param_grad(&model.mlp, x, h, &b.da, b.ds))
}

/// Parameter gradient from pre-activation derivatives of every layer.
pub(crate) fn param_grad(mlp: &Mlp, x: &[f64], h: &[Vec<f64>], da: &[Vec<f64>], ds: f64) -> Gradient {
    let mut g = Gradient::zeros_like(mlp);
    let k = h.len();
    for i in 0..=k {
        let prev: &[f64] = if i == 0 { x } else { &h[i - 1] };
        let deltas: &[f64] = if i < k { &da[i] } else { std::slice::from_ref(&ds) };
        let n_in = prev.len();
        for (j, &d) in deltas.iter().enumerate() {
            g.d_biases[i][j] = d;
            for (m, &a) in prev.iter().enumerate() {
                g.d_weights[i][j * n_in + m] = d * a;
            }
        }
    }
    g
}

/// Draw a chain from the forward model, ignoring `y`: each layer from
/// `N(p, p (1 - p) / L)` given the sampled layer below, clamped to
/// `(1e-6, 1 - 1e-6)`.
pub fn init_chain<R: Rng + ?Sized>(model: &StochModel, x: &[f64], rng: &mut R) -> Result<ChainState> {
    if x.len() != model.mlp.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} entries, network expects {}",
            x.len(),
            model.mlp.input_dim()
        )));
    }
    let mut logits = Vec::with_capacity(model.num_hidden());
    let mut prev = x.to_vec();
    for i in 0..model.num_hidden() {
        let mut layer = Vec::with_capacity(model.mlp.dims()[i + 1]);
        let mut values = Vec::with_capacity(model.mlp.dims()[i + 1]);
        for j in 0..model.mlp.dims()[i + 1] {
            let p = sigmoid(model.mlp.pre_activation(i, j, &prev));
            let z: f64 = rng.sample(StandardNormal);
            let h = (p + z * (p * (1.0 - p) / model.l).sqrt()).clamp(INIT_CLAMP, 1.0 - INIT_CLAMP);
            values.push(h);
            layer.push(logit(h));
        }
        logits.push(layer);
        prev = values;
    }
    Ok(ChainState::from_logits(logits))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;

    pub(crate) fn random_model(dims: &[usize], seed: u64, l: f64) -> StochModel {
        let mut r = rng::master(seed);
        let mut mlp = Mlp::zeros(dims, OutputKind::Bernoulli).unwrap();
        let p: Vec<f64> = (0..mlp.num_params()).map(|_| r.random_range(-2.0..2.0)).collect();
        mlp.set_params(&p);
        StochModel::new(mlp, l).unwrap()
    }

    pub(crate) fn random_state(model: &StochModel, seed: u64) -> ChainState {
        let mut r = rng::master(seed);
        let logits = model
            .mlp
            .hidden_dims()
            .iter()
            .map(|&n| (0..n).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect();
        ChainState::from_logits(logits)
    }

    fn fd_grad(model: &StochModel, state: &ChainState, x: &[f64], y: bool) -> Vec<f64> {
        let base = state.flat_logits();
        let h = 1e-5;
        (0..base.len())
            .map(|i| {
                let at = |d: f64| {
                    let mut p = base.clone();
                    p[i] += d;
                    potential_energy(model, &state.with_flat(&p), x, y).unwrap()
                };
                (at(h) - at(-h)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            for jac in [true, false] {
                let model = random_model(&[3, 4, 3, 1], seed, 10.0).with_jacobian(jac);
                let state = random_state(&model, 100 + seed);
                let x = [1.0, 0.0, 1.0];
                let g = grad_potential(&model, &state, &x, seed % 2 == 0).unwrap();
                let fd = fd_grad(&model, &state, &x, seed % 2 == 0);
                let scale = fd.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() / scale <= 1e-6, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn energy_at_means_is_output_term_plus_normalizers() {
        let model = random_model(&[2, 3, 2, 1], 4, 25.0).with_jacobian(false);
        let x = [1.0, 0.0];
        // place each layer exactly at its mean given the layer below
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut prev = x.to_vec();
        for i in 0..2 {
            let layer: Vec<f64> = (0..model.mlp.dims()[i + 1])
                .map(|j| sigmoid(model.mlp.pre_activation(i, j, &prev)))
                .collect();
            prev = layer.clone();
            h.push(layer);
        }
        let state = ChainState::from_logits(h.iter().map(|l| l.iter().map(|&v| logit(v)).collect()).collect());
        let u = potential_energy(&model, &state, &x, true).unwrap();
        // recompute from the stored values the way a reader of the density would
        let (means, s) = layer_means(&model.mlp, &x, state.h());
        let mut expect = -log_sigmoid(s);
        for layer in &means {
            for &p in layer {
                expect += 0.5 * (2.0 * std::f64::consts::PI * p * (1.0 - p) / 25.0).ln();
            }
        }
        assert!((u - expect).abs() < 1e-9, "{u} vs {expect}");
    }

    #[test]
    fn doubling_l_doubles_quadratic_penalty() {
        let base = random_model(&[2, 2, 1], 9, 10.0).with_jacobian(false);
        let state = random_state(&base, 1);
        let x = [0.0, 1.0];
        let mut doubled = base.clone();
        doubled.l = 20.0;
        let quad = |m: &StochModel| {
            let (means, _) = layer_means(&m.mlp, &x, state.h());
            let p = means[0][0];
            let v = m.variance(p);
            (state.h()[0][0] - p).powi(2) / (2.0 * v)
        };
        assert!((quad(&doubled) / quad(&base) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn energy_finite_for_extreme_logits() {
        let model = random_model(&[2, 2, 1], 3, 10.0);
        let state = ChainState::from_logits(vec![vec![800.0, -800.0]]);
        let u = potential_energy(&model, &state, &[1.0, 1.0], false).unwrap();
        assert!(u.is_finite());
        assert!(grad_potential(&model, &state, &[1.0, 1.0], false).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn symmetric_net_symmetric_gradient() {
        let mut mlp = Mlp::zeros(&[2, 2, 1], OutputKind::Bernoulli).unwrap();
        mlp.set_params(&[0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let model = StochModel::new(mlp, 10.0).unwrap();
        let state = ChainState::from_logits(vec![vec![0.3, 0.3]]);
        let g = grad_potential(&model, &state, &[1.0, 1.0], true).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn descent_reaches_stationary_point() {
        let model = random_model(&[2, 2, 1], 5, 10.0);
        let mut state = random_state(&model, 6);
        let x = [1.0, 0.0];
        for _ in 0..20_000 {
            let g = grad_potential(&model, &state, &x, true).unwrap();
            let next: Vec<f64> = state.flat_logits().iter().zip(&g).map(|(r, g)| r - 0.01 * g).collect();
            state = state.with_flat(&next);
        }
        let g = grad_potential(&model, &state, &x, true).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-8, "{norm}");
    }

    #[test]
    fn init_collapses_to_means_at_infinite_l() {
        let model = random_model(&[3, 3, 2, 1], 2, f64::INFINITY);
        let x = [1.0, 1.0, 0.0];
        let state = init_chain(&model, &x, &mut rng::master(0)).unwrap();
        let trace = model.mlp.forward(&x).unwrap();
        for (i, layer) in state.h().iter().enumerate() {
            for (j, &h) in layer.iter().enumerate() {
                assert!((h - trace.activations[i + 1][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_mean_and_variance_on_zero_net() {
        let model = StochModel::new(Mlp::zeros(&[1, 2, 1], OutputKind::Bernoulli).unwrap(), 100.0).unwrap();
        let mut r = rng::master(11);
        let n = 10_000;
        let samples: Vec<f64> = (0..n).map(|_| init_chain(&model, &[0.0], &mut r).unwrap().h()[0][0]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (0.25 / 100.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
        assert!((var - 0.0025).abs() < 3.0 * 0.0025 * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn cached_values_match_logits() {
        let model = random_model(&[2, 3, 1], 1, 10.0);
        let s = init_chain(&model, &[0.0, 1.0], &mut rng::master(3)).unwrap();
        for (l, h) in s.logits().iter().flatten().zip(s.h().iter().flatten()) {
            assert!((sigmoid(*l) - h).abs() <= 1e-15);
        }
    }
}
