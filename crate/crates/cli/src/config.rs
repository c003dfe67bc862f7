//! Run settings: command-line flags override a `key=value` config file,
//! which overrides the built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use treepgm::datagen::ModelKind;
use treepgm::error::{Error, Result};
use treepgm::experiment::{DEFAULT_BINS, DEFAULT_LR, DEFAULT_PREDICT_SAMPLES};
use treepgm::samplers::{HmcConfig, Optimizer};

pub const KEYS: &[&str] = &[
    "seed",
    "epochs",
    "lr",
    "batch_size",
    "optimizer",
    "sampler",
    "L",
    "dt",
    "leapfrog",
    "k",
    "burn_in",
    "jacobian",
    "bins",
    "n_samples",
    "kind",
    "weight",
    "dims",
    "n_points",
    "scale_features",
];

/// Parsed config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(i + 1, format!("expected key=value, found `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::parse(i + 1, format!("unknown key `{k}`")));
            }
            values.insert(k.to_string(), (i + 1, v.to_string()));
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => parse(v)
                .map(Some)
                .ok_or_else(|| Error::parse(*line, format!("bad value `{v}` for `{key}`"))),
        }
    }
}

pub fn parse_on_off(s: &str) -> Option<bool> {
    match s {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

pub fn parse_dims(s: &str) -> Option<Vec<usize>> {
    let d: Option<Vec<usize>> = s.split(',').map(|p| p.trim().parse().ok()).collect();
    d.filter(|d| d.len() >= 2 && d.iter().all(|&n| n > 0))
}

pub fn parse_batch(s: &str) -> Option<Option<usize>> {
    match s {
        "full" => Some(None),
        _ => s.parse().ok().filter(|&n| n > 0).map(Some),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerChoice {
    Dnn,
    Sgd,
    Gibbs,
    Hmc,
}

impl SamplerChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dnn" => Some(Self::Dnn),
            "sgd" => Some(Self::Sgd),
            "gibbs" => Some(Self::Gibbs),
            "hmc" => Some(Self::Hmc),
            _ => None,
        }
    }
}

fn parse_optimizer(s: &str) -> Option<Optimizer> {
    match s {
        "adam" => Some(Optimizer::Adam),
        "sgd" => Some(Optimizer::Sgd),
        _ => None,
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    pub sampler: SamplerChoice,
    pub l: f64,
    pub hmc: HmcConfig,
    pub k: usize,
    pub burn_in: usize,
    pub jacobian: bool,
    pub bins: usize,
    pub n_samples: usize,
    pub kind: ModelKind,
    pub weight: f64,
    pub dims: Vec<usize>,
    pub n_points: usize,
    pub scale_features: bool,
}

/// Values given on the command line, still as text.
#[derive(Debug, Clone, Default)]
pub struct Overrides(pub Vec<(&'static str, Option<String>)>);

impl Settings {
    /// `epochs_default` differs between training (100) and fine-tuning (20).
    pub fn resolve(flags: &Overrides, file: &ConfigFile, epochs_default: usize) -> Result<Self> {
        let mut merged = file.clone();
        for (k, v) in &flags.0 {
            if let Some(v) = v {
                merged.values.insert(k.to_string(), (0, v.clone()));
            }
        }
        let f = &merged;
        let flag_err = |e: Error| match e {
            Error::Parse { line: 0, msg } => Error::Usage(msg),
            e => e,
        };
        let num = |key: &str| f.get(key, |s| s.parse::<f64>().ok().filter(|v| v.is_finite())).map_err(flag_err);
        let int = |key: &str| f.get(key, |s| s.parse::<usize>().ok()).map_err(flag_err);
        let hmc_default = HmcConfig::default();
        let s = Settings {
            seed: f.get("seed", |s| s.parse().ok()).map_err(flag_err)?.unwrap_or(0),
            epochs: int("epochs")?.unwrap_or(epochs_default),
            lr: num("lr")?.unwrap_or(DEFAULT_LR),
            batch_size: f.get("batch_size", parse_batch).map_err(flag_err)?.unwrap_or(None),
            optimizer: f.get("optimizer", parse_optimizer).map_err(flag_err)?.unwrap_or(Optimizer::Adam),
            sampler: f.get("sampler", SamplerChoice::parse).map_err(flag_err)?.unwrap_or(SamplerChoice::Hmc),
            l: num("L")?.unwrap_or(10.0),
            hmc: HmcConfig {
                step_size: num("dt")?.unwrap_or(hmc_default.step_size),
                leapfrog_steps: int("leapfrog")?.unwrap_or(hmc_default.leapfrog_steps),
            },
            k: int("k")?.unwrap_or(1),
            burn_in: int("burn_in")?.unwrap_or(50),
            jacobian: f.get("jacobian", parse_on_off).map_err(flag_err)?.unwrap_or(true),
            bins: int("bins")?.unwrap_or(DEFAULT_BINS),
            n_samples: int("n_samples")?.unwrap_or(DEFAULT_PREDICT_SAMPLES),
            kind: f.get("kind", ModelKind::parse).map_err(flag_err)?.unwrap_or(ModelKind::Bn),
            weight: num("weight")?.unwrap_or(0.3),
            dims: f.get("dims", parse_dims).map_err(flag_err)?.unwrap_or_else(|| vec![4, 4, 4, 1]),
            n_points: int("n_points")?.unwrap_or(1000),
            scale_features: f.get("scale_features", parse_on_off).map_err(flag_err)?.unwrap_or(false),
        };
        if !(s.l > 0.0) {
            return Err(Error::Usage("L must be positive".into()));
        }
        if s.bins == 0 || s.n_samples == 0 || s.k == 0 {
            return Err(Error::Usage("bins, n_samples and k must be positive".into()));
        }
        s.hmc.validate()?;
        Ok(s)
    }

    /// `key=value` lines, in config-file syntax, for echoing a run.
    pub fn echo(&self) -> String {
        let batch = self.batch_size.map_or("full".to_string(), |b| b.to_string());
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let sampler = match self.sampler {
            SamplerChoice::Dnn => "dnn",
            SamplerChoice::Sgd => "sgd",
            SamplerChoice::Gibbs => "gibbs",
            SamplerChoice::Hmc => "hmc",
        };
        let optimizer = match self.optimizer {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        };
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "seed={}\nepochs={}\nlr={}\nbatch_size={batch}\noptimizer={optimizer}\nsampler={sampler}\nL={}\ndt={}\nleapfrog={}\nk={}\nburn_in={}\njacobian={}\nbins={}\nn_samples={}\nkind={}\nweight={}\ndims={}\nn_points={}\nscale_features={}\n",
            self.seed,
            self.epochs,
            self.lr,
            self.l,
            self.hmc.step_size,
            self.hmc.leapfrog_steps,
            self.k,
            self.burn_in,
            on(self.jacobian),
            self.bins,
            self.n_samples,
            self.kind.as_str(),
            self.weight,
            dims.join(","),
            self.n_points,
            on(self.scale_features),
        )
    }
}
