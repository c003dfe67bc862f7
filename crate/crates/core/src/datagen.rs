//! Synthetic ground-truth models and labelled datasets.
//!
//! A generated model is a layered net with weights drawn from `U(-w, w)` and
//! zero biases, read either as a sigmoid Bayesian network (Bernoulli(0.5)
//! inputs, logistic CPDs) or as a pairwise Markov network with `e^w`
//! potentials on the same edges. Every row carries the exact `P(y = 1 | x)`
//! of the generating model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dnn::{Mlp, OutputKind};
use crate::error::{Error, Result};
use crate::math::{fmt17, sigmoid};
use crate::pgm::{mlp_to_bn, pairwise_mn, Assignment, Evidence, FactorNet, VarId, DEFAULT_ENUM_CAP};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bn,
    Mn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Bn => "bn",
            ModelKind::Mn => "mn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bn" => Some(ModelKind::Bn),
            "mn" => Some(ModelKind::Mn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    pub weight_scale: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            kind: ModelKind::Bn,
            dims: vec![4, 4, 4, 1],
            weight_scale: 0.3,
            n_points: 1000,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Usage(format!("need at least two non-empty layers, got {:?}", self.dims)));
        }
        if *self.dims.last().unwrap() != 1 {
            return Err(Error::Usage("generated models have a single label unit".into()));
        }
        if !(self.weight_scale >= 0.0) || !self.weight_scale.is_finite() {
            return Err(Error::Usage(format!("weight scale must be finite and >= 0, got {}", self.weight_scale)));
        }
        if self.n_points == 0 {
            return Err(Error::Usage("need at least one data point".into()));
        }
        Ok(())
    }
}

/// A generated model: the layered weights and their graphical-model view.
#[derive(Debug, Clone)]
pub struct GenModel {
    pub kind: ModelKind,
    pub mlp: Mlp,
    pub net: FactorNet,
}

/// Purpose tags for seeds derived from the experiment seed.
pub mod seed_purpose {
    pub const MODEL: u64 = 1;
    pub const DATA: u64 = 2;
}

pub fn gen_model(spec: &GenSpec) -> Result<GenModel> {
    spec.validate()?;
    let mut r = rng::master(rng::derive_seed(spec.seed, seed_purpose::MODEL));
    let mut mlp = Mlp::zeros(&spec.dims, OutputKind::Bernoulli)?;
    let n_weights: usize = mlp.weights().iter().map(Vec::len).sum();
    let w = spec.weight_scale;
    let mut params: Vec<f64> = (0..n_weights)
        .map(|_| if w > 0.0 { r.random_range(-w..w) } else { 0.0 })
        .collect();
    params.resize(mlp.num_params(), 0.0);
    mlp.set_params(&params);
    let net = match spec.kind {
        ModelKind::Bn => mlp_to_bn(&mlp)?,
        ModelKind::Mn => pairwise_mn(&mlp)?,
    };
    Ok(GenModel {
        kind: spec.kind,
        mlp,
        net,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: Vec<f64>,
    pub y: bool,
    pub p_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    rows: Vec<Row>,
}

impl Dataset {
    pub fn new(n_features: usize, rows: Vec<Row>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.x.len() != n_features) {
            return Err(Error::Structural(format!(
                "row {i} has {} features, expected {n_features}",
                rows[i].x.len()
            )));
        }
        Ok(Dataset { n_features, rows })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_truth(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.p_true.is_some())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            n_features: self.n_features,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// `(x, y)` pairs in row order.
    pub fn pairs(&self) -> Vec<(Vec<f64>, bool)> {
        self.rows.iter().map(|r| (r.x.clone(), r.y)).collect()
    }

    /// Seeded shuffle split: the first `round(0.8 n)` shuffled rows train.
    pub fn split_80_20(&self, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut rng::master(seed));
        let cut = (self.rows.len() as f64 * 0.8).round() as usize;
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Rescale every feature column to `[0, 1]` by its min and max; constant
    /// columns become 0.
    pub fn min_max_scale(&mut self) {
        for c in 0..self.n_features {
            let (lo, hi) = self
                .rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.x[c]), hi.max(r.x[c])));
            for r in &mut self.rows {
                r.x[c] = if hi > lo { (r.x[c] - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let truth = self.has_truth();
        let mut s = String::new();
        let mut header: Vec<String> = (0..self.n_features).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        if truth {
            header.push("p_true".into());
        }
        writeln!(s, "{}", header.join(",")).unwrap();
        for r in &self.rows {
            for v in &r.x {
                write!(s, "{v},").unwrap();
            }
            write!(s, "{}", r.y as u8).unwrap();
            if let (true, Some(p)) = (truth, r.p_true) {
                write!(s, ",{}", fmt17(p)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parse a CSV with a `y` column (0/1), an optional `p_true` column, and
    /// every other column taken as a feature, in file order.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty dataset file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let y_col = cols
            .iter()
            .position(|c| *c == "y")
            .ok_or_else(|| Error::parse(hl, "header has no `y` column"))?;
        let p_col = cols.iter().position(|c| *c == "p_true");
        let feature_cols: Vec<usize> = (0..cols.len()).filter(|&c| c != y_col && Some(c) != p_col).collect();
        let mut rows = Vec::new();
        for (ln, line) in lines {
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            if vals.len() != cols.len() {
                return Err(Error::parse(ln, format!("expected {} fields, found {}", cols.len(), vals.len())));
            }
            let num = |c: usize| -> Result<f64> {
                let v: f64 = vals[c]
                    .parse()
                    .map_err(|_| Error::parse(ln, format!("bad number `{}` in column `{}`", vals[c], cols[c])))?;
                if !v.is_finite() {
                    return Err(Error::parse(ln, format!("non-finite value in column `{}`", cols[c])));
                }
                Ok(v)
            };
            let y = match vals[y_col] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(ln, format!("label must be 0 or 1, found `{other}`"))),
            };
            let x = feature_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
            let p_true = match p_col {
                Some(c) => {
                    let p = num(c)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::parse(ln, "p_true outside [0, 1]"));
                    }
                    Some(p)
                }
                None => None,
            };
            rows.push(Row { x, y, p_true });
        }
        Dataset::new(feature_cols.len(), rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv(&text)
    }
}

fn input_mask(x: &[bool]) -> u64 {
    x.iter().enumerate().fold(0, |m, (i, &b)| m | ((b as u64) << i))
}

/// Exact `P(y = 1 | x)` of a generated model, cached per input pattern.
pub struct TruthOracle<'a> {
    model: &'a GenModel,
    cache: HashMap<u64, f64>,
}

impl<'a> TruthOracle<'a> {
    pub fn new(model: &'a GenModel) -> Self {
        TruthOracle {
            model,
            cache: HashMap::new(),
        }
    }

    pub fn p_true(&mut self, x: &[bool]) -> Result<f64> {
        let key = input_mask(x);
        if let Some(&p) = self.cache.get(&key) {
            return Ok(p);
        }
        let mlp = &self.model.mlp;
        let mut ev = Evidence::new();
        for (k, &b) in x.iter().enumerate() {
            ev.set(VarId(mlp.node_id(0, k)), b);
        }
        let y = VarId(mlp.node_id(mlp.dims().len() - 1, 0));
        let (_, p) = self.model.net.ve_marginal(y, &ev)?;
        self.cache.insert(key, p);
        Ok(p)
    }
}

/// Draw `n` rows from the model: ancestral sampling for BNs, exact
/// enumeration of the joint followed by categorical draws for MNs.
pub fn sample_dataset(model: &GenModel, n: usize, seed: u64) -> Result<Dataset> {
    let mlp = &model.mlp;
    let n_in = mlp.input_dim();
    let n_vars = mlp.num_nodes();
    let y_var = mlp.node_id(mlp.dims().len() - 1, 0);
    let mut r = rng::master(rng::derive_seed(seed, seed_purpose::DATA));
    let mut draws: Vec<(Vec<bool>, bool)> = Vec::with_capacity(n);
    match model.kind {
        ModelKind::Bn => {
            for _ in 0..n {
                let x: Vec<bool> = (0..n_in).map(|_| r.random_bool(0.5)).collect();
                let mut prev: Vec<f64> = x.iter().map(|&b| b as u8 as f64).collect();
                for layer in 0..mlp.num_layers() {
                    prev = (0..mlp.dims()[layer + 1])
                        .map(|j| {
                            let p = sigmoid(mlp.pre_activation(layer, j, &prev));
                            let u: f64 = r.random();
                            (u < p) as u8 as f64
                        })
                        .collect();
                }
                draws.push((x, prev[0] == 1.0));
            }
        }
        ModelKind::Mn => {
            if n_vars > DEFAULT_ENUM_CAP {
                return Err(Error::Capacity(format!(
                    "exact sampling enumerates all states; {n_vars} variables exceed the cap of {DEFAULT_ENUM_CAP}"
                )));
            }
            let mut cumulative = Vec::with_capacity(1 << n_vars);
            let mut total = 0.0;
            for mask in 0..1u64 << n_vars {
                total += model.net.joint_unnormalized(&Assignment::from_mask(mask, n_vars))?;
                cumulative.push(total);
            }
            for _ in 0..n {
                let u: f64 = r.random::<f64>() * total;
                let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                let a = Assignment::from_mask(k as u64, n_vars);
                let x: Vec<bool> = (0..n_in).map(|i| a.get(VarId(mlp.node_id(0, i)))).collect();
                draws.push((x, a.get(VarId(y_var))));
            }
        }
    }
    let mut oracle = TruthOracle::new(model);
    let rows = draws
        .into_iter()
        .map(|(x, y)| {
            let p = oracle.p_true(&x)?;
            Ok(Row {
                x: x.iter().map(|&b| b as u8 as f64).collect(),
                y,
                p_true: Some(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(n_in, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ModelKind, w: f64, seed: u64) -> GenSpec {
        GenSpec {
            kind,
            weight_scale: w,
            seed,
            ..GenSpec::default()
        }
    }

    #[test]
    fn zero_scale_gives_fair_labels() {
        for kind in [ModelKind::Bn, ModelKind::Mn] {
            let m = gen_model(&spec(kind, 0.0, 1)).unwrap();
            let d = sample_dataset(&m, 200, 1).unwrap();
            assert!(d.rows().iter().all(|r| (r.p_true.unwrap() - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn same_seed_same_model_and_data() {
        let a = gen_model(&spec(ModelKind::Mn, 1.0, 5)).unwrap();
        let b = gen_model(&spec(ModelKind::Mn, 1.0, 5)).unwrap();
        assert_eq!(a.mlp, b.mlp);
        assert_eq!(sample_dataset(&a, 50, 3).unwrap(), sample_dataset(&b, 50, 3).unwrap());
        let c = gen_model(&spec(ModelKind::Mn, 1.0, 6)).unwrap();
        assert_ne!(a.mlp, c.mlp);
    }

    #[test]
    fn weights_within_scale_biases_zero() {
        let m = gen_model(&spec(ModelKind::Bn, 0.3, 2)).unwrap();
        assert!(m.mlp.weights().iter().flatten().all(|w| w.abs() < 0.3));
        assert!(m.mlp.biases().iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn weights_pass_uniformity_ks_test() {
        let mut w: Vec<f64> = (0..1000)
            .flat_map(|s| gen_model(&spec(ModelKind::Bn, 3.0, s)).unwrap().mlp.weights().concat())
            .collect();
        assert!(w.len() >= 10_000);
        w.sort_by(f64::total_cmp);
        let n = w.len() as f64;
        let d = w
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = (v + 3.0) / 6.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.358 / n.sqrt(), "{d}");
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = gen_model(&spec(ModelKind::Bn, 1.0, 3)).unwrap();
        let d = sample_dataset(&m, 20, 4).unwrap();
        let text = d.to_csv();
        assert_eq!(text.lines().next(), Some("x0,x1,x2,x3,y,p_true"));
        assert_eq!(Dataset::from_csv(&text).unwrap(), d);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = Dataset::from_csv("x0,y\n1,0\n1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Dataset::from_csv("x0,y\n1,0\nfoo,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(Dataset::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = gen_model(&spec(ModelKind::Bn, 1.0, 3)).unwrap();
        let d = sample_dataset(&m, 1000, 4).unwrap();
        let (tr, te) = d.split_80_20(9);
        assert_eq!((tr.len(), te.len()), (800, 200));
        assert_eq!(d.split_80_20(9).0, tr);
    }

    #[test]
    fn min_max_scaling() {
        let rows = vec![
            Row { x: vec![2.0, 5.0], y: true, p_true: None },
            Row { x: vec![4.0, 5.0], y: false, p_true: None },
            Row { x: vec![3.0, 5.0], y: false, p_true: None },
        ];
        let mut d = Dataset::new(2, rows).unwrap();
        d.min_max_scale();
        let xs: Vec<Vec<f64>> = d.rows().iter().map(|r| r.x.clone()).collect();
        assert_eq!(xs, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.0]]);
    }
}
