//! Feed-forward sigmoid network.
//!
//! The same [`Mlp`] value is read three ways across the crate: as a network
//! evaluated by a deterministic forward pass, as a sigmoid Bayesian network
//! (every unit a logistic CPD of its parents), and as the source DAG that the
//! tree unrolling copies.
//!
//! Weights for layer `l` map layer `l` (size `n_l`) to layer `l + 1`
//! (size `n_{l+1}`) and are stored row-major, `n_{l+1} x n_l`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{clamp_prob, fmt17, sigmoid, PROB_CLAMP};

/// Output layer parameterisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Independent sigmoid units; the experiments use a single one.
    Bernoulli,
    /// Softmax over the output layer.
    Categorical,
}

impl OutputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::Bernoulli => "bernoulli",
            OutputKind::Categorical => "categorical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bernoulli" => Some(OutputKind::Bernoulli),
            "categorical" => Some(OutputKind::Categorical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output: OutputKind,
}

/// Weight/bias-shaped container, used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l + 1`.
    pub activations: Vec<Vec<f64>>,
    /// `pre_activations[l]` feeds `activations[l + 1]`.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(dims: &[usize], output: OutputKind) -> Result<Self> {
        check_dims(dims)?;
        let weights = dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            output,
        })
    }

    pub fn from_parts(
        dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output: OutputKind,
    ) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Structural(format!(
                "expected {layers} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            if weights[l].len() != dims[l] * dims[l + 1] {
                return Err(Error::Structural(format!(
                    "layer {l}: weight block has {} entries, expected {}",
                    weights[l].len(),
                    dims[l] * dims[l + 1]
                )));
            }
            if biases[l].len() != dims[l + 1] {
                return Err(Error::Structural(format!(
                    "layer {l}: bias block has {} entries, expected {}",
                    biases[l].len(),
                    dims[l + 1]
                )));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Structural("non-finite parameter".into()));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// Weights `0.1 * N(0, 1)`, zero biases.
    pub fn init_random<R: Rng + ?Sized>(
        dims: &[usize],
        output: OutputKind,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Mlp::zeros(dims, output)?;
        for block in &mut mlp.weights {
            for w in block.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = 0.1 * z;
            }
        }
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    /// Number of weight layers (`K + 1` for `K` hidden layers).
    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Sizes of the hidden layers only.
    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    #[inline]
    pub fn weight(&self, layer: usize, to: usize, from: usize) -> f64 {
        self.weights[layer][to * self.dims[layer] + from]
    }

    #[inline]
    pub fn weight_mut(&mut self, layer: usize, to: usize, from: usize) -> &mut f64 {
        let n = self.dims[layer];
        &mut self.weights[layer][to * n + from]
    }

    #[inline]
    pub fn bias(&self, layer: usize, to: usize) -> f64 {
        self.biases[layer][to]
    }

    pub fn bias_mut(&mut self, layer: usize, to: usize) -> &mut f64 {
        &mut self.biases[layer][to]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Global id of unit `j` in layer `layer` (inputs are layer 0).
    pub fn node_id(&self, layer: usize, j: usize) -> usize {
        self.dims[..layer].iter().sum::<usize>() + j
    }

    pub fn num_nodes(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Inverse of [`Mlp::node_id`].
    pub fn node_position(&self, id: usize) -> Option<(usize, usize)> {
        let mut offset = 0;
        for (layer, &n) in self.dims.iter().enumerate() {
            if id < offset + n {
                return Some((layer, id - offset));
            }
            offset += n;
        }
        None
    }

    /// `z = W a + b` for one layer, accumulated bias-first in index order.
    #[inline]
    pub fn pre_activation(&self, layer: usize, to: usize, prev: &[f64]) -> f64 {
        let n = self.dims[layer];
        let row = &self.weights[layer][to * n..(to + 1) * n];
        let mut z = self.biases[layer][to];
        for (w, a) in row.iter().zip(prev) {
            z += w * a;
        }
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.dims[0] {
            return Err(Error::Structural(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.dims[0]
            )));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Usage("inputs must lie in [0, 1]".into()));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ForwardTrace {
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(x.to_vec());
        for l in 0..layers {
            let prev = &activations[l];
            let z: Vec<f64> = (0..self.dims[l + 1])
                .map(|j| self.pre_activation(l, j, prev))
                .collect();
            let a = if l + 1 == layers && self.output == OutputKind::Categorical {
                softmax(&z)
            } else {
                z.iter().map(|&v| sigmoid(v)).collect()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        ForwardTrace {
            activations,
            pre_activations,
        }
    }

    /// Exact gradient of [`ce_loss`] with respect to every weight and bias.
    pub fn backprop(&self, trace: &ForwardTrace, y: usize) -> Gradient {
        let layers = self.num_layers();
        let mut grad = Gradient::zeros_like(self);
        let out = trace.output();
        let mut delta: Vec<f64> = match self.output {
            OutputKind::Bernoulli => {
                let single = out.len() == 1;
                out.iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let target = if single { y == 1 } else { j == y };
                        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                            p - if target { 1.0 } else { 0.0 }
                        } else {
                            0.0 // loss is flat inside the clamp
                        }
                    })
                    .collect()
            }
            OutputKind::Categorical => {
                if out[y] < PROB_CLAMP {
                    vec![0.0; out.len()]
                } else {
                    out.iter()
                        .enumerate()
                        .map(|(j, &p)| p - if j == y { 1.0 } else { 0.0 })
                        .collect()
                }
            }
        };
        for l in (0..layers).rev() {
            let prev = &trace.activations[l];
            let n_in = self.dims[l];
            for (j, &d) in delta.iter().enumerate() {
                grad.d_biases[l][j] = d;
                let row = &mut grad.d_weights[l][j * n_in..(j + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(prev) {
                    *g = d * a;
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; n_in];
            for (j, &d) in delta.iter().enumerate() {
                for (k, nk) in next.iter_mut().enumerate() {
                    *nk += self.weight(l, j, k) * d;
                }
            }
            for (k, nk) in next.iter_mut().enumerate() {
                let a = prev[k];
                *nk *= a * (1.0 - a);
            }
            delta = next;
        }
        grad
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened as all weight blocks, then all bias blocks.
    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter vector length");
        let mut it = flat.iter();
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v = *it.next().unwrap();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("mlp");
        for d in &self.dims {
            write!(s, " {d}").unwrap();
        }
        writeln!(s, " {}", self.output.as_str()).unwrap();
        for l in 0..self.num_layers() {
            let n_in = self.dims[l];
            for row in self.weights[l].chunks(n_in) {
                let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
                writeln!(s, "{}", line.join(" ")).unwrap();
            }
            let line: Vec<String> = self.biases[l].iter().map(|&v| fmt17(v)).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty model file"))?;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("mlp") {
            return Err(Error::parse(hline + 1, "expected `mlp` header"));
        }
        let rest: Vec<&str> = toks.collect();
        let (kind_tok, dim_toks) = rest
            .split_last()
            .ok_or_else(|| Error::parse(hline + 1, "missing layer dims"))?;
        let output = OutputKind::parse(kind_tok)
            .ok_or_else(|| Error::parse(hline + 1, format!("unknown output kind `{kind_tok}`")))?;
        let dims = dim_toks
            .iter()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(hline + 1, e.to_string()))?;
        check_dims(&dims).map_err(|e| Error::parse(hline + 1, e.to_string()))?;
        let mut values = Vec::new();
        let mut last_line = hline + 1;
        for (i, line) in lines {
            last_line = i + 1;
            for t in line.split_whitespace() {
                let v: f64 = t.parse().map_err(|_| Error::parse(i + 1, format!("bad number `{t}`")))?;
                values.push((i + 1, v));
            }
        }
        let mut it = values.into_iter();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let mut w = Vec::with_capacity(dims[l] * dims[l + 1]);
            for _ in 0..dims[l] * dims[l + 1] {
                w.push(it.next().ok_or_else(|| Error::parse(last_line, "truncated weight block"))?.1);
            }
            let mut b = Vec::with_capacity(dims[l + 1]);
            for _ in 0..dims[l + 1] {
                b.push(it.next().ok_or_else(|| Error::parse(last_line, "truncated bias block"))?.1);
            }
            weights.push(w);
            biases.push(b);
        }
        if let Some((line, _)) = it.next() {
            return Err(Error::parse(line, "trailing values after last layer"));
        }
        Mlp::from_parts(&dims, weights, biases, output).map_err(|e| Error::parse(last_line, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mlp::from_text(&text)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Structural("need at least an input and an output layer".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Structural("layer sizes must be positive".into()));
    }
    Ok(())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of the network output against label `y`, with the output
/// clamped to `[1e-12, 1 - 1e-12]` before the log.
///
/// For a single Bernoulli output `y` is 0 or 1; otherwise `y` is the index of
/// the true class.
pub fn ce_loss(trace: &ForwardTrace, y: usize) -> f64 {
    let out = trace.output();
    if out.len() == 1 {
        bernoulli_nll(out[0], y == 1)
    } else {
        -clamp_prob(out[y]).ln()
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with the probability clamp.
pub fn bernoulli_nll(p: f64, y: bool) -> f64 {
    let p = clamp_prob(p);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl Gradient {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradient {
            d_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.iter_mut() {
            *a *= s;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_weights.iter().chain(&self.d_biases).flatten().copied()
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.d_weights.iter_mut().chain(self.d_biases.iter_mut()).flatten()
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn from_flat(mlp: &Mlp, flat: &[f64]) -> Self {
        let mut g = Gradient::zeros_like(mlp);
        assert_eq!(flat.len(), mlp.num_params());
        for (a, &b) in g.iter_mut().zip(flat) {
            *a = b;
        }
        g
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Plain gradient descent: `theta -= lr * grad`.
pub fn sgd_step(mlp: &mut Mlp, grad: &Gradient, lr: f64) {
    for (p, g) in mlp
        .weights
        .iter_mut()
        .chain(mlp.biases.iter_mut())
        .flatten()
        .zip(grad.iter())
    {
        *p -= lr * g;
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradient,
    v: Gradient,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> Self {
        AdamState {
            m: Gradient::zeros_like(mlp),
            v: Gradient::zeros_like(mlp),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

pub fn adam_step(mlp: &mut Mlp, grad: &Gradient, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t);
    let c2 = 1.0 - b2.powi(state.t);
    let params = mlp.weights.iter_mut().chain(mlp.biases.iter_mut()).flatten();
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((p, g), (m, v)) in params.zip(grad.iter()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
