//! Gibbs sampling of binary hidden states in the sigmoid belief network.
//!
//! Each unit is resampled from its Markov-blanket conditional: its own
//! logistic CPD given the layer below, times the CPDs of every child (the next
//! hidden layer, or the label when it is observed) evaluated at both values.

use rand::Rng;

use super::param_grad;
use crate::dnn::{Gradient, Mlp};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

/// Hidden-unit bits per hidden layer.
pub type BinaryState = Vec<Vec<bool>>;

fn as_f64(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| b as u8 as f64).collect()
}

fn check(mlp: &Mlp, state: &BinaryState, x: &[f64]) -> Result<()> {
    if x.len() != mlp.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} entries, network expects {}",
            x.len(),
            mlp.input_dim()
        )));
    }
    let dims: Vec<usize> = state.iter().map(Vec::len).collect();
    if dims != mlp.hidden_dims() {
        return Err(Error::Structural(format!(
            "state has hidden dims {dims:?}, network has {:?}",
            mlp.hidden_dims()
        )));
    }
    Ok(())
}

/// `log p(child = bit | a) ` for a logistic CPD with logit `a`.
fn log_cpd(a: f64, bit: bool) -> f64 {
    if bit {
        -softplus(-a)
    } else {
        -softplus(a)
    }
}

/// `[P(h = 0 | blanket), P(h = 1 | blanket)]` for hidden unit `j` of hidden
/// layer `layer` (0-based). `y = None` leaves the label unobserved, so it
/// drops out of the blanket.
pub fn gibbs_conditional(mlp: &Mlp, state: &BinaryState, x: &[f64], y: Option<bool>, layer: usize, j: usize) -> [f64; 2] {
    let k = state.len();
    let below: Vec<f64> = if layer == 0 { x.to_vec() } else { as_f64(&state[layer - 1]) };
    let mut log_odds = mlp.pre_activation(layer, j, &below);
    let mut here = as_f64(&state[layer]);
    let children: Option<Vec<bool>> = if layer + 1 < k {
        Some(state[layer + 1].clone())
    } else {
        y.map(|v| vec![v])
    };
    if let Some(children) = children {
        here[j] = 0.0;
        for (c, &bit) in children.iter().enumerate() {
            let a0 = mlp.pre_activation(layer + 1, c, &here);
            let a1 = a0 + mlp.weight(layer + 1, c, j);
            log_odds += log_cpd(a1, bit) - log_cpd(a0, bit);
        }
    }
    let p1 = sigmoid(log_odds);
    [1.0 - p1, p1]
}

/// One systematic scan, layer by layer and unit by unit, each draw seeing
/// the values already updated in this sweep.
pub fn gibbs_step<R: Rng + ?Sized>(
    mlp: &Mlp,
    state: &BinaryState,
    x: &[f64],
    y: Option<bool>,
    rng: &mut R,
) -> Result<BinaryState> {
    check(mlp, state, x)?;
    let mut s = state.clone();
    for layer in 0..s.len() {
        for j in 0..s[layer].len() {
            let [_, p1] = gibbs_conditional(mlp, &s, x, y, layer, j);
            let u: f64 = rng.random();
            s[layer][j] = u < p1;
        }
    }
    Ok(s)
}

/// Ancestral draw of the hidden layers given the input, ignoring the label.
pub fn init_binary<R: Rng + ?Sized>(mlp: &Mlp, x: &[f64], rng: &mut R) -> Result<BinaryState> {
    if x.len() != mlp.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} entries, network expects {}",
            x.len(),
            mlp.input_dim()
        )));
    }
    let mut prev = x.to_vec();
    let mut out = Vec::new();
    for layer in 0..mlp.num_layers() - 1 {
        let bits: Vec<bool> = (0..mlp.dims()[layer + 1])
            .map(|j| {
                let p = sigmoid(mlp.pre_activation(layer, j, &prev));
                let u: f64 = rng.random();
                u < p
            })
            .collect();
        prev = as_f64(&bits);
        out.push(bits);
    }
    Ok(out)
}

/// `-log p(y, h | x)` under the Bernoulli CPDs at a fixed binary state, and
/// its parameter gradient.
pub fn bernoulli_loss_and_grad(mlp: &Mlp, state: &BinaryState, x: &[f64], y: bool) -> (f64, Gradient) {
    let h: Vec<Vec<f64>> = state.iter().map(|l| as_f64(l)).collect();
    let k = h.len();
    let mut loss = 0.0;
    let mut da = Vec::with_capacity(k);
    for i in 0..k {
        let prev: &[f64] = if i == 0 { x } else { &h[i - 1] };
        let d: Vec<f64> = (0..h[i].len())
            .map(|j| {
                let a = mlp.pre_activation(i, j, prev);
                loss -= log_cpd(a, state[i][j]);
                sigmoid(a) - h[i][j]
            })
            .collect();
        da.push(d);
    }
    let s = mlp.pre_activation(k, 0, &h[k - 1]);
    loss -= log_cpd(s, y);
    let ds = sigmoid(s) - if y { 1.0 } else { 0.0 };
    (loss, param_grad(mlp, x, &h, &da, ds))
}
