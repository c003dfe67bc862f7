//! Numerical convergence checks of the finite-`L` model against the network.
//!
//! Probabilities: `max |P_L(unit | x) - forward(x)|` over every unit and every
//! binary input should shrink like `1/L`. Gradients: the finite-difference
//! gradient of the finite-`L` log-likelihood should approach minus the
//! backprop gradient of the cross-entropy.

use rand::Rng;

use super::finite::FD_STEP;
use super::{unroll_step1, unroll_step2, Copies, FiniteLModel, DEFAULT_VERTEX_CAP};
use crate::dnn::{Mlp, OutputKind};
use crate::error::Result;
use crate::rng;

/// Tolerances pinned for the convergence suites.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub prob_gap_at_1e4: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    /// Smallest `k` for which `gap(2^k) / gap(2^{k-1})` is checked.
    pub ratio_from_k: u32,
    pub grad_gap_at_1e5: f64,
    pub oracle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            prob_gap_at_1e4: 5e-4,
            ratio_lo: 0.35,
            ratio_hi: 0.65,
            ratio_from_k: 6,
            grad_gap_at_1e5: 1e-3,
            oracle: 1e-10,
        }
    }
}

/// Network with every weight and bias drawn from `U(-scale, scale)`.
pub fn random_net(seed: u64, dims: &[usize], scale: f64) -> Mlp {
    let mut r = rng::master(seed);
    let mut mlp = Mlp::zeros(dims, OutputKind::Bernoulli).expect("valid dims");
    let p: Vec<f64> = (0..mlp.num_params()).map(|_| r.random_range(-scale..scale)).collect();
    mlp.set_params(&p);
    mlp
}

/// The shipped suite: 20 seeds over architectures up to 4-4-4-1.
pub fn suite_nets() -> Vec<(u64, Vec<usize>)> {
    const ARCHS: [&[usize]; 5] = [&[2, 2, 1], &[3, 3, 1], &[2, 3, 2, 1], &[4, 4, 1], &[4, 4, 4, 1]];
    (0..20u64).map(|s| (s, ARCHS[s as usize % ARCHS.len()].to_vec())).collect()
}

/// Every binary vector of length `n`, bit `i` of the index giving entry `i`.
pub fn binary_inputs(n: usize) -> Vec<Vec<f64>> {
    (0..1u32 << n)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as f64).collect())
        .collect()
}

/// Max absolute gap between finite-`L` unit probabilities and the forward pass.
pub fn prob_gap(mlp: &Mlp, copies: Copies) -> Result<f64> {
    let model = FiniteLModel::new(mlp, copies)?;
    let mut gap = 0.0f64;
    for x in binary_inputs(mlp.input_dim()) {
        let ours = model.forward(&x)?;
        let trace = mlp.forward(&x)?;
        for (a, b) in ours.iter().flatten().zip(trace.activations[1..].iter().flatten()) {
            gap = gap.max((a - b).abs());
        }
    }
    Ok(gap)
}

/// Relative gap between the finite-`L` log-likelihood gradient and minus the
/// backprop gradient: max abs difference over all inputs, labels and
/// parameters, divided by the largest backprop entry.
pub fn grad_gap(mlp: &Mlp, copies: Copies) -> Result<f64> {
    let model = FiniteLModel::new(mlp, copies)?;
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for x in binary_inputs(mlp.input_dim()) {
        let trace = mlp.forward(&x)?;
        for y in [false, true] {
            let bp = mlp.backprop(&trace, y as usize);
            let fd = model.loglik_gradient(&x, y, FD_STEP)?;
            for (a, b) in fd.iter().zip(bp.iter()) {
                diff = diff.max((a + b).abs());
                scale = scale.max(b.abs());
            }
        }
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Max gap between the materialized tree's exact marginals and the closed
/// form, over every unit and binary input.
pub fn oracle_gap(mlp: &Mlp, l: usize) -> Result<f64> {
    let tree = unroll_step2(&unroll_step1(mlp), l, DEFAULT_VERTEX_CAP)?;
    let model = FiniteLModel::new(mlp, Copies::Finite(l as u64))?;
    let mut gap = 0.0f64;
    for x in binary_inputs(mlp.input_dim()) {
        let bits: Vec<bool> = x.iter().map(|&v| v == 1.0).collect();
        let ours = model.forward(&x)?;
        for layer in 1..mlp.dims().len() {
            for j in 0..mlp.dims()[layer] {
                let e = tree.explicit_marginal(&bits, mlp.node_id(layer, j))?;
                gap = gap.max((e - ours[layer - 1][j]).abs());
            }
        }
    }
    Ok(gap)
}

/// Out-of-tolerance finding.
#[derive(Debug, Clone, PartialEq)]
pub struct Breach {
    pub seed: u64,
    pub l: u64,
    pub what: String,
}

/// Check a `(L, gap)` sequence over `L = 2^k`: successive ratios must lie in
/// the tolerance band from `ratio_from_k` on.
pub fn check_halving(seed: u64, seq: &[(u64, f64)], tol: &Tolerances) -> Vec<Breach> {
    let mut out = Vec::new();
    for w in seq.windows(2) {
        let (l0, g0) = w[0];
        let (l1, g1) = w[1];
        if l1 != 2 * l0 || l1 < 1 << tol.ratio_from_k {
            continue;
        }
        let ratio = g1 / g0;
        if !(tol.ratio_lo..=tol.ratio_hi).contains(&ratio) {
            out.push(Breach {
                seed,
                l: l1,
                what: format!("halving ratio {ratio:.4} outside [{}, {}]", tol.ratio_lo, tol.ratio_hi),
            });
        }
    }
    out
}

/// Gaps must strictly decrease as `L` increases; an exact zero that stays
/// zero is not a breach.
pub fn check_monotone(seed: u64, seq: &[(u64, f64)], label: &str) -> Vec<Breach> {
    seq.windows(2)
        .filter(|w| w[1].1 >= w[0].1 && w[1].1 != 0.0)
        .map(|w| Breach {
            seed,
            l: w[1].0,
            what: format!("{label} gap {:.3e} did not decrease from {:.3e}", w[1].1, w[0].1),
        })
        .collect()
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub l: u64,
    pub prob_gap: f64,
    pub grad_gap: f64,
}

/// `L = 2^0 ..= 2^14` merged with the decades `10^2 ..= 10^5`.
pub fn default_grid() -> Vec<u64> {
    let mut g: Vec<u64> = (0..=14).map(|k| 1u64 << k).chain([100, 1000, 10_000, 100_000]).collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Gap rows for one net over `grid`, with every tolerance breach: halving
/// ratios on the powers of two, monotone probability gaps from
/// `2^ratio_from_k` on, monotone gradient gaps over the decades, and the
/// absolute bounds at `L = 10^4` and `10^5` when those are in the grid.
pub fn check_net(seed: u64, dims: &[usize], mlp: &Mlp, grid: &[u64], tol: &Tolerances) -> Result<(Vec<GapRow>, Vec<Breach>)> {
    let mut rows = Vec::with_capacity(grid.len());
    for &l in grid {
        rows.push(GapRow {
            seed,
            dims: dims.to_vec(),
            l,
            prob_gap: prob_gap(mlp, Copies::Finite(l))?,
            grad_gap: grad_gap(mlp, Copies::Finite(l))?,
        });
    }
    let pow2: Vec<(u64, f64)> = rows.iter().filter(|r| r.l.is_power_of_two()).map(|r| (r.l, r.prob_gap)).collect();
    let mut breaches = check_halving(seed, &pow2, tol);
    let tail: Vec<(u64, f64)> = rows
        .iter()
        .filter(|r| r.l >= 1 << tol.ratio_from_k)
        .map(|r| (r.l, r.prob_gap))
        .collect();
    breaches.extend(check_monotone(seed, &tail, "probability"));
    let decades: Vec<(u64, f64)> = rows
        .iter()
        .filter(|r| r.l >= 100 && is_power_of_ten(r.l))
        .map(|r| (r.l, r.grad_gap))
        .collect();
    breaches.extend(check_monotone(seed, &decades, "gradient"));
    for r in &rows {
        if r.l == 10_000 && !(r.prob_gap <= tol.prob_gap_at_1e4) {
            breaches.push(Breach {
                seed,
                l: r.l,
                what: format!("probability gap {:.3e} above {:.0e}", r.prob_gap, tol.prob_gap_at_1e4),
            });
        }
        if r.l == 100_000 && !(r.grad_gap <= tol.grad_gap_at_1e5) {
            breaches.push(Breach {
                seed,
                l: r.l,
                what: format!("gradient gap {:.3e} above {:.0e}", r.grad_gap, tol.grad_gap_at_1e5),
            });
        }
    }
    Ok((rows, breaches))
}

fn is_power_of_ten(mut n: u64) -> bool {
    while n >= 10 && n % 10 == 0 {
        n /= 10;
    }
    n == 1
}

/// Explicit-tree oracle over `n` random 2-2-1 nets and `L = 1, 2, 3`:
/// `(seed, L, gap)` triples.
pub fn oracle_suite(n: u64, scale: f64) -> Result<Vec<(u64, u64, f64)>> {
    let mut out = Vec::new();
    for seed in 100..100 + n {
        let mlp = random_net(seed, &[2, 2, 1], scale);
        for l in 1..=3u64 {
            out.push((seed, l, oracle_gap(&mlp, l as usize)?));
        }
    }
    Ok(out)
}
