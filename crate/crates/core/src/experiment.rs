//! Training and fine-tuning protocol shared by the command-line driver and
//! the acceptance suite.
//!
//! A network is trained on the cross-entropy with Adam, then either trained
//! further the same way or fine-tuned by CD with a Gibbs or HMC sampler.
//! Predictions of sampler-trained networks average `n_samples` stochastic
//! forward passes.

use rand::seq::SliceRandom;

use crate::datagen::{gen_model, sample_dataset, Dataset, GenSpec, ModelKind};
use crate::dnn::{adam_step, ce_loss, AdamState, Gradient, Mlp, OutputKind};
use crate::error::{Error, Result};
use crate::metrics::{ece, mae, ReportRow};
use crate::rng::{self, StreamRng};
use crate::samplers::cd::predict_prob_binary;
use crate::samplers::{cd_k_train, predict_prob, CdConfig, HmcConfig, Optimizer, Sampler, StochModel};
use rayon::prelude::*;

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_PREDICT_SAMPLES: usize = 1000;
pub const DEFAULT_BINS: usize = 10;

/// Purpose tags for seeds derived from a run seed.
pub mod seed_purpose {
    pub const SPLIT: u64 = 10;
    pub const INIT: u64 = 11;
    pub const TRAIN: u64 = 12;
    pub const FINETUNE: u64 = 13;
    pub const PREDICT: u64 = 14;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Examples per Adam step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: DEFAULT_LR,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub mlp: Mlp,
    /// Mean cross-entropy after each epoch.
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
}

pub fn mean_ce(mlp: &Mlp, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for r in data.rows() {
        total += ce_loss(&mlp.forward(&r.x)?, r.y as usize);
    }
    Ok(total / data.len() as f64)
}

/// Adam on the mean cross-entropy.
pub fn train(init: &Mlp, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::Usage("batch size must be positive".into()));
    }
    let mut mlp = init.clone();
    let mut adam = AdamState::new(&mlp);
    let mut order: Vec<usize> = (0..train.len()).collect();
    // same batch-order stream as cd_k_train, so paired comparisons see identical batches
    let mut order_rng = rng::stream(cfg.seed, u64::MAX);
    let batch = cfg.batch_size.unwrap_or(train.len()).min(train.len());
    let rows = train.rows();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut test_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.batch_size.is_some() {
            order.shuffle(&mut order_rng);
        }
        for idx in order.chunks(batch) {
            let mut grad = Gradient::zeros_like(&mlp);
            for &i in idx {
                let trace = mlp.forward(&rows[i].x)?;
                grad.add_assign(&mlp.backprop(&trace, rows[i].y as usize));
            }
            grad.scale(1.0 / idx.len() as f64);
            adam_step(&mut mlp, &grad, &mut adam, cfg.lr);
        }
        if !mlp.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: "parameters became non-finite".into(),
            });
        }
        train_loss.push(mean_ce(&mlp, train)?);
        test_loss.push(mean_ce(&mlp, test)?);
    }
    Ok(TrainReport {
        mlp,
        train_loss,
        test_loss,
    })
}

/// How a network is trained after the initial run, and how it predicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// The trained network itself, no further epochs.
    Dnn,
    /// More epochs of the same cross-entropy training.
    Sgd,
    Gibbs,
    Hmc { l: f64 },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Dnn => "dnn".into(),
            Method::Sgd => "sgd".into(),
            Method::Gibbs => "gibbs".into(),
            Method::Hmc { l } => format!("hmc-{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub k: usize,
    pub burn_in: usize,
    pub hmc: HmcConfig,
    pub jacobian: bool,
    pub optimizer: Optimizer,
    pub n_samples: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 20,
            lr: DEFAULT_LR,
            batch_size: None,
            k: 1,
            burn_in: 50,
            hmc: HmcConfig::default(),
            jacobian: true,
            optimizer: Optimizer::Adam,
            n_samples: DEFAULT_PREDICT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub mlp: Mlp,
    pub acceptance: Option<f64>,
}

fn stoch(mlp: &Mlp, l: f64, jacobian: bool) -> Result<StochModel> {
    Ok(StochModel::new(mlp.clone(), l)?.with_jacobian(jacobian))
}

pub fn finetune(mlp: &Mlp, train_set: &Dataset, method: Method, cfg: &FinetuneConfig, seed: u64) -> Result<FinetuneOutcome> {
    let fseed = rng::derive_seed(seed, seed_purpose::FINETUNE);
    let cd = CdConfig {
        k: cfg.k,
        burn_in: cfg.burn_in,
        lr: cfg.lr,
        epochs: cfg.epochs,
        optimizer: cfg.optimizer,
        batch_size: cfg.batch_size,
    };
    match method {
        Method::Dnn => Ok(FinetuneOutcome {
            mlp: mlp.clone(),
            acceptance: None,
        }),
        Method::Sgd => {
            let tc = TrainConfig {
                epochs: cfg.epochs,
                lr: cfg.lr,
                batch_size: cfg.batch_size,
                seed: fseed,
            };
            let empty = Dataset::new(train_set.n_features(), Vec::new())?;
            Ok(FinetuneOutcome {
                mlp: train(mlp, train_set, &empty, &tc)?.mlp,
                acceptance: None,
            })
        }
        Method::Gibbs => {
            // L only shapes the Gaussian layers, which Gibbs does not use
            let model = stoch(mlp, 1.0, cfg.jacobian)?;
            let out = cd_k_train(&model, &train_set.pairs(), &cd, &Sampler::Gibbs, fseed)?;
            Ok(FinetuneOutcome {
                mlp: out.mlp,
                acceptance: None,
            })
        }
        Method::Hmc { l } => {
            let model = stoch(mlp, l, cfg.jacobian)?;
            let out = cd_k_train(&model, &train_set.pairs(), &cd, &Sampler::Hmc(cfg.hmc), fseed)?;
            Ok(FinetuneOutcome {
                mlp: out.mlp,
                acceptance: out.acceptance,
            })
        }
    }
}

/// Predicted `P(y = 1 | x)` for every row. Row `i` uses its own random
/// stream, so the result is independent of thread count.
pub fn predict(mlp: &Mlp, data: &Dataset, method: Method, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    let pseed = rng::derive_seed(seed, seed_purpose::PREDICT);
    let rows = data.rows();
    let rng_for = |i: usize| -> StreamRng { rng::stream(pseed, i as u64) };
    match method {
        Method::Dnn | Method::Sgd => rows.iter().map(|r| Ok(mlp.forward(&r.x)?.output()[0])).collect(),
        Method::Gibbs => rows
            .par_iter()
            .enumerate()
            .map(|(i, r)| predict_prob_binary(mlp, &r.x, n_samples, &mut rng_for(i)))
            .collect(),
        Method::Hmc { l } => {
            let model = StochModel::new(mlp.clone(), l)?;
            rows.par_iter()
                .enumerate()
                .map(|(i, r)| predict_prob(&model, &r.x, n_samples, &mut rng_for(i)))
                .collect()
        }
    }
}

/// Metrics of one method on the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub mae: Option<f64>,
    pub ece: f64,
}

pub fn score(pred: &[f64], test: &Dataset, bins: usize) -> Result<Scores> {
    let labels: Vec<bool> = test.rows().iter().map(|r| r.y).collect();
    let mae = if test.has_truth() {
        let truth: Vec<f64> = test.rows().iter().map(|r| r.p_true.unwrap()).collect();
        Some(mae(pred, &truth)?)
    } else {
        None
    };
    Ok(Scores {
        mae,
        ece: ece(pred, &labels, bins)?,
    })
}

/// Everything one synthetic comparison run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub kind: ModelKind,
    pub weight_scale: f64,
    pub dims: Vec<usize>,
    pub n_points: usize,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub methods: Vec<Method>,
    /// Keep the dataset fixed across seeds, generated from `data_seed`.
    pub fix_data: bool,
    pub data_seed: u64,
    pub bins: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            kind: ModelKind::Bn,
            weight_scale: 0.3,
            dims: vec![4, 4, 4, 1],
            n_points: 1000,
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            methods: vec![Method::Dnn, Method::Sgd, Method::Gibbs, Method::Hmc { l: 10.0 }, Method::Hmc { l: 100.0 }, Method::Hmc { l: 1000.0 }],
            fix_data: false,
            data_seed: 0,
            bins: DEFAULT_BINS,
        }
    }
}

/// One seed of the synthetic comparison: generate data, train, fine-tune with
/// each method, score on the test split. Returns report rows and the
/// per-method wall-clock seconds per epoch of the phase that produced it.
pub fn run_comparison(cfg: &ComparisonConfig, seed: u64) -> Result<(Vec<ReportRow>, Vec<(String, f64)>)> {
    let data_seed = if cfg.fix_data { cfg.data_seed } else { seed };
    let spec = GenSpec {
        kind: cfg.kind,
        dims: cfg.dims.clone(),
        weight_scale: cfg.weight_scale,
        n_points: cfg.n_points,
        seed: data_seed,
    };
    let model = gen_model(&spec)?;
    let data = sample_dataset(&model, cfg.n_points, data_seed)?;
    let (train_set, test_set) = data.split_80_20(rng::derive_seed(seed, seed_purpose::SPLIT));
    let init = Mlp::init_random(
        &cfg.dims,
        OutputKind::Bernoulli,
        &mut rng::master(rng::derive_seed(seed, seed_purpose::INIT)),
    )?;
    let tcfg = TrainConfig {
        seed: rng::derive_seed(seed, seed_purpose::TRAIN),
        ..cfg.train.clone()
    };
    let t0 = std::time::Instant::now();
    let trained = train(&init, &train_set, &test_set, &tcfg)?.mlp;
    let train_time = t0.elapsed().as_secs_f64() / cfg.train.epochs.max(1) as f64;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for &method in &cfg.methods {
        let t0 = std::time::Instant::now();
        let tuned = finetune(&trained, &train_set, method, &cfg.finetune, seed)?;
        let per_epoch = match method {
            Method::Dnn => train_time,
            _ => t0.elapsed().as_secs_f64() / cfg.finetune.epochs.max(1) as f64,
        };
        times.push((method.name(), per_epoch));
        let pred = predict(&tuned.mlp, &test_set, method, cfg.finetune.n_samples, seed)?;
        let s = score(&pred, &test_set, cfg.bins)?;
        let row = |metric: &str, value: f64| ReportRow {
            method: method.name(),
            dataset: cfg.kind.as_str().into(),
            weight_scale: cfg.weight_scale,
            epochs: cfg.train.epochs,
            metric: metric.into(),
            value,
            seed,
        };
        if let Some(m) = s.mae {
            rows.push(row("mae", m));
        }
        rows.push(row("ece", s.ece));
    }
    Ok((rows, times))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ComparisonConfig {
        ComparisonConfig {
            n_points: 100,
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            finetune: FinetuneConfig {
                epochs: 2,
                burn_in: 2,
                n_samples: 20,
                ..FinetuneConfig::default()
            },
            ..ComparisonConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let m = Mlp::init_random(&[4, 4, 1], OutputKind::Bernoulli, &mut rng::master(1)).unwrap();
        let spec = GenSpec::default();
        let data = sample_dataset(&gen_model(&spec).unwrap(), 50, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&m, &data, &data, &cfg).unwrap().mlp, m);
    }

    #[test]
    fn loss_approaches_ln2_on_symmetric_data() {
        let spec = GenSpec {
            weight_scale: 0.0,
            ..GenSpec::default()
        };
        let data = sample_dataset(&gen_model(&spec).unwrap(), 1000, 2).unwrap();
        let m = Mlp::init_random(&[4, 4, 4, 1], OutputKind::Bernoulli, &mut rng::master(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let r = train(&m, &data, &data, &cfg).unwrap();
        let first = r.train_loss[0];
        let last = *r.train_loss.last().unwrap();
        assert!(last <= first + 1e-12);
        assert!((last - std::f64::consts::LN_2).abs() < 0.01, "{last}");
    }

    #[test]
    fn zero_lr_finetune_keeps_metrics() {
        let cfg = ComparisonConfig {
            finetune: FinetuneConfig {
                lr: 0.0,
                ..small().finetune
            },
            methods: vec![Method::Dnn, Method::Sgd],
            ..small()
        };
        let (rows, _) = run_comparison(&cfg, 4).unwrap();
        let get = |m: &str, k: &str| rows.iter().find(|r| r.method == m && r.metric == k).unwrap().value;
        assert_eq!(get("dnn", "mae"), get("sgd", "mae"));
        assert_eq!(get("dnn", "ece"), get("sgd", "ece"));
    }

    #[test]
    fn comparison_is_deterministic() {
        let cfg = small();
        let (a, _) = run_comparison(&cfg, 7).unwrap();
        let (b, _) = run_comparison(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * cfg.methods.len());
    }
}
