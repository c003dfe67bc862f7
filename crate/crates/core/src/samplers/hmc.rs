//! Hamiltonian Monte Carlo over hidden-unit logits, identity mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{grad_potential, potential_energy, ChainState, StochModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 0.01,
            leapfrog_steps: 10,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.leapfrog_steps == 0 {
            return Err(Error::Usage(format!(
                "HMC needs dt > 0 and at least one leapfrog step, got dt={} l={}",
                self.step_size, self.leapfrog_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HmcOutcome {
    pub state: ChainState,
    pub accepted: bool,
    /// `H(end) - H(start)` of the proposal.
    pub delta_h: f64,
}

/// `steps` leapfrog updates from `(state, momentum)`, each a half momentum
/// kick, a full position drift, and a second half kick.
pub fn leapfrog(
    model: &StochModel,
    state: &ChainState,
    momentum: &[f64],
    x: &[f64],
    y: bool,
    dt: f64,
    steps: usize,
) -> Result<(ChainState, Vec<f64>)> {
    let mut rho = state.flat_logits();
    let mut mu = momentum.to_vec();
    let mut current = state.clone();
    let mut grad = grad_potential(model, &current, x, y)?;
    for _ in 0..steps {
        for (m, g) in mu.iter_mut().zip(&grad) {
            *m -= 0.5 * dt * g;
        }
        for (r, m) in rho.iter_mut().zip(&mu) {
            *r += dt * m;
        }
        current = current.with_flat(&rho);
        grad = grad_potential(model, &current, x, y)?;
        for (m, g) in mu.iter_mut().zip(&grad) {
            *m -= 0.5 * dt * g;
        }
    }
    Ok((current, mu))
}

fn kinetic(mu: &[f64]) -> f64 {
    0.5 * mu.iter().map(|m| m * m).sum::<f64>()
}

/// `H = U + |mu|^2 / 2`.
pub fn hamiltonian(model: &StochModel, state: &ChainState, mu: &[f64], x: &[f64], y: bool) -> Result<f64> {
    Ok(potential_energy(model, state, x, y)? + kinetic(mu))
}

/// One HMC transition: fresh standard-normal momentum, a leapfrog
/// trajectory, and Metropolis acceptance with probability
/// `min(1, exp(H_start - H_end))`. A rejected or non-finite proposal leaves
/// the state unchanged.
pub fn hmc_step<R: Rng + ?Sized>(
    model: &StochModel,
    state: &ChainState,
    x: &[f64],
    y: bool,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<HmcOutcome> {
    cfg.validate()?;
    let mu0: Vec<f64> = (0..state.len()).map(|_| rng.sample(StandardNormal)).collect();
    let u: f64 = rng.random();
    let h0 = hamiltonian(model, state, &mu0, x, y)?;
    let (proposal, mu1) = leapfrog(model, state, &mu0, x, y, cfg.step_size, cfg.leapfrog_steps)?;
    let h1 = hamiltonian(model, &proposal, &mu1, x, y)?;
    let delta_h = h1 - h0;
    let accepted = delta_h.is_finite() && u < (-delta_h).exp();
    Ok(HmcOutcome {
        state: if accepted { proposal } else { state.clone() },
        accepted,
        delta_h,
    })
}
