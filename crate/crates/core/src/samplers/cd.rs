//! Contrastive-divergence fine-tuning with persistent per-example chains.
//!
//! Burn-in advances every chain `N` steps under the starting weights. Each
//! update then takes the gradient of `-log p(y, h | x)` at the current chain
//! states, applies it, and advances the chains it used by `k` steps.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::gibbs::{bernoulli_loss_and_grad, gibbs_step, init_binary, BinaryState};
use super::hmc::{hmc_step, HmcConfig};
use super::{init_chain, loss_and_param_grad, ChainState, StochModel};
use crate::dnn::{adam_step, sgd_step, AdamState, Gradient, Mlp};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Hmc(HmcConfig),
    Gibbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdConfig {
    pub k: usize,
    pub burn_in: usize,
    pub lr: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Examples per update; `None` uses the whole dataset.
    pub batch_size: Option<usize>,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            k: 1,
            burn_in: 50,
            lr: 1e-4,
            epochs: 20,
            optimizer: Optimizer::Adam,
            batch_size: None,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Usage("k must be at least 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Usage(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Usage("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CdReport {
    pub mlp: Mlp,
    /// Mean per-example loss of each epoch, evaluated before its updates.
    pub epoch_loss: Vec<f64>,
    /// Fraction of accepted HMC proposals over the whole run.
    pub acceptance: Option<f64>,
}

enum Chain {
    Continuous(ChainState),
    Binary(BinaryState),
}

struct Walker {
    chain: Chain,
    rng: StreamRng,
    accepted: usize,
    proposed: usize,
}

impl Walker {
    fn advance(&mut self, model: &StochModel, sampler: &Sampler, x: &[f64], y: bool, steps: usize) -> Result<()> {
        for _ in 0..steps {
            match (&mut self.chain, sampler) {
                (Chain::Continuous(s), Sampler::Hmc(cfg)) => {
                    let out = hmc_step(model, s, x, y, cfg, &mut self.rng)?;
                    self.accepted += out.accepted as usize;
                    self.proposed += 1;
                    *s = out.state;
                }
                (Chain::Binary(s), Sampler::Gibbs) => {
                    *s = gibbs_step(&model.mlp, s, x, Some(y), &mut self.rng)?;
                }
                _ => unreachable!("chain kind follows the sampler"),
            }
        }
        Ok(())
    }

    fn loss_grad(&self, model: &StochModel, x: &[f64], y: bool) -> (f64, Gradient) {
        match &self.chain {
            Chain::Continuous(s) => loss_and_param_grad(model, s.h(), x, y),
            Chain::Binary(s) => bernoulli_loss_and_grad(&model.mlp, s, x, y),
        }
    }
}

/// Run CD-`k` from `model.mlp` on `(x, y)` pairs. Chain `i` draws from its own
/// stream of `seed`, so the result does not depend on thread scheduling.
pub fn cd_k_train(
    model: &StochModel,
    data: &[(Vec<f64>, bool)],
    cfg: &CdConfig,
    sampler: &Sampler,
    seed: u64,
) -> Result<CdReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("fine-tuning needs at least one example".into()));
    }
    if let Sampler::Hmc(h) = sampler {
        h.validate()?;
    }
    let mut model = model.clone();
    let mut walkers: Vec<Walker> = data
        .par_iter()
        .enumerate()
        .map(|(i, (x, _))| {
            let mut r = rng::stream(seed, i as u64);
            let chain = match sampler {
                Sampler::Hmc(_) => Chain::Continuous(init_chain(&model, x, &mut r)?),
                Sampler::Gibbs => Chain::Binary(init_binary(&model.mlp, x, &mut r)?),
            };
            Ok(Walker {
                chain,
                rng: r,
                accepted: 0,
                proposed: 0,
            })
        })
        .collect::<Result<_>>()?;

    {
        let m = &model;
        walkers
            .par_iter_mut()
            .zip(data.par_iter())
            .try_for_each(|(w, (x, y))| w.advance(m, sampler, x, *y, cfg.burn_in))?;
    }

    let mut order_rng = rng::stream(seed, u64::MAX);
    let mut adam = AdamState::new(&model.mlp);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.unwrap_or(data.len()).min(data.len());
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.batch_size.is_some() {
            order.shuffle(&mut order_rng);
        }
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let m = &model;
            let parts: Vec<(f64, Gradient)> =
                idx.par_iter().map(|&i| walkers[i].loss_grad(m, &data[i].0, data[i].1)).collect();
            let mut grad = Gradient::zeros_like(&model.mlp);
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                grad.add_assign(g);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    msg: format!("fine-tuning loss became {loss}"),
                });
            }
            total += loss;
            grad.scale(1.0 / idx.len() as f64);
            match cfg.optimizer {
                Optimizer::Adam => adam_step(&mut model.mlp, &grad, &mut adam, cfg.lr),
                Optimizer::Sgd => sgd_step(&mut model.mlp, &grad, cfg.lr),
            }
            if !model.mlp.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    msg: "parameters became non-finite".into(),
                });
            }
            let m = &model;
            let mut mask = vec![false; data.len()];
            for &i in idx {
                mask[i] = true;
            }
            let mut selected: Vec<(usize, &mut Walker)> =
                walkers.iter_mut().enumerate().filter(|(i, _)| mask[*i]).collect();
            selected
                .par_iter_mut()
                .try_for_each(|(i, w)| w.advance(m, sampler, &data[*i].0, data[*i].1, cfg.k))?;
        }
        epoch_loss.push(total / data.len() as f64);
    }
    let acceptance = match sampler {
        Sampler::Hmc(_) => {
            let (a, p) = walkers.iter().fold((0, 0), |(a, p), w| (a + w.accepted, p + w.proposed));
            Some(if p == 0 { 1.0 } else { a as f64 / p as f64 })
        }
        Sampler::Gibbs => None,
    };
    Ok(CdReport {
        mlp: model.mlp,
        epoch_loss,
        acceptance,
    })
}

/// Average output probability over `n_samples` forward draws of the
/// Gaussian hidden layers, each value clamped to `[0, 1]`.
pub fn predict_prob<R: Rng + ?Sized>(model: &StochModel, x: &[f64], n_samples: usize, rng: &mut R) -> Result<f64> {
    check_predict(&model.mlp, x, n_samples)?;
    let mlp = &model.mlp;
    let k = model.num_hidden();
    let mut total = 0.0;
    for _ in 0..n_samples {
        let mut prev = x.to_vec();
        for i in 0..k {
            prev = (0..mlp.dims()[i + 1])
                .map(|j| {
                    let p = sigmoid(mlp.pre_activation(i, j, &prev));
                    let z: f64 = rng.sample(StandardNormal);
                    (p + z * (p * (1.0 - p) / model.l).sqrt()).clamp(0.0, 1.0)
                })
                .collect();
        }
        total += sigmoid(mlp.pre_activation(k, 0, &prev));
    }
    Ok(total / n_samples as f64)
}

/// Average output probability over `n_samples` ancestral draws of binary
/// hidden states, the predictive distribution of the Gibbs-trained model.
pub fn predict_prob_binary<R: Rng + ?Sized>(mlp: &Mlp, x: &[f64], n_samples: usize, rng: &mut R) -> Result<f64> {
    check_predict(mlp, x, n_samples)?;
    let k = mlp.num_layers() - 1;
    let mut total = 0.0;
    for _ in 0..n_samples {
        let h = init_binary(mlp, x, rng)?;
        let last: Vec<f64> = h[k - 1].iter().map(|&b| b as u8 as f64).collect();
        total += sigmoid(mlp.pre_activation(k, 0, &last));
    }
    Ok(total / n_samples as f64)
}

fn check_predict(mlp: &Mlp, x: &[f64], n_samples: usize) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::Usage("need at least one sample".into()));
    }
    if x.len() != mlp.input_dim() {
        return Err(Error::Structural(format!(
            "input has {} entries, network expects {}",
            x.len(),
            mlp.input_dim()
        )));
    }
    Ok(())
}
