//! Permutation-invariant set network with exact backpropagation.
//!
//! Every element row goes through a shared encoder MLP. The encodings are
//! mean-pooled; the head sees `[pooled || encoding of one row]`:
//! - element heads score every row (one output per element),
//! - pooled heads read the designated focus row and emit `k` outputs.
//!
//! Hidden layers use `tanh`; the encoder applies it on its last layer too,
//! the head's last layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::DomainTag;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// What the outputs mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Action values.
    Q,
    /// Action probabilities after masked softmax.
    Actor,
    /// Scalar state value.
    Critic,
}

/// How outputs are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayout {
    PerElement,
    Pooled(usize),
}

/// A dense layer: `rows` outputs, `cols` inputs, weights row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Layer {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect(),
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            out.push(self.bias[r] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>());
        }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `input`.
    fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut Layer) -> Vec<f64> {
        let mut d_in = vec![0.0; self.cols];
        for (r, &d) in d_out.iter().enumerate().take(self.rows) {
            if d == 0.0 {
                continue;
            }
            grad.bias[r] += d;
            let base = r * self.cols;
            for c in 0..self.cols {
                grad.weights[base + c] += d * input[c];
                d_in[c] += d * self.weights[base + c];
            }
        }
        d_in
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer sizes for a fresh network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Hidden layers in the head (the encoder has one hidden layer).
    pub hidden_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            embed_dim: 32,
            hidden_dim: 64,
            hidden_layers: 2,
        }
    }
}

/// Weights of one network: encoder layers followed by head layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub domain: DomainTag,
    pub head: HeadKind,
    pub layout: OutputLayout,
    pub encoder_depth: usize,
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like [`NetworkParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `encoder[row][k]` is the input of encoder layer `k` for that row; the
    /// last entry is the row's embedding.
    encoder: Vec<Vec<Vec<f64>>>,
    /// Inputs of each head layer, per head evaluation.
    head: Vec<Vec<Vec<f64>>>,
    /// Row fed to the pooled head, if any.
    focus: Option<usize>,
    pub outputs: Vec<f64>,
}

impl NetworkParams {
    pub fn new(domain: DomainTag, head: HeadKind, feature_width: usize, arch: Architecture, seed: u64) -> Self {
        let layout = match (head, domain.is_routing()) {
            (HeadKind::Critic, _) => OutputLayout::Pooled(1),
            (_, true) => OutputLayout::PerElement,
            (_, false) => OutputLayout::Pooled(2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            Layer::glorot(arch.hidden_dim, feature_width, &mut rng),
            Layer::glorot(arch.embed_dim, arch.hidden_dim, &mut rng),
        ];
        let out = match layout {
            OutputLayout::PerElement => 1,
            OutputLayout::Pooled(k) => k,
        };
        let mut width = 2 * arch.embed_dim;
        for _ in 0..arch.hidden_layers {
            layers.push(Layer::glorot(arch.hidden_dim, width, &mut rng));
            width = arch.hidden_dim;
        }
        layers.push(Layer::glorot(out, width, &mut rng));
        NetworkParams {
            domain,
            head,
            layout,
            encoder_depth: 2,
            layers,
        }
    }

    /// Same shapes with every weight and bias set to zero.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        for l in &mut p.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        p
    }

    pub fn feature_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Overwrites every parameter from a flat vector in [`Self::flat`] order.
    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("flat vector too short");
            }
        }
    }

    pub fn check_shapes(&self) -> Result<(), NetworkError> {
        if self.encoder_depth == 0 || self.encoder_depth >= self.layers.len() {
            return Err(NetworkError::Shape("encoder depth out of range".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(NetworkError::Shape(format!("layer {k} arrays do not match {}x{}", l.rows, l.cols)));
            }
        }
        for k in 1..self.layers.len() {
            let expected = if k == self.encoder_depth {
                2 * self.layers[k - 1].rows
            } else {
                self.layers[k - 1].rows
            };
            if self.layers[k].cols != expected {
                return Err(NetworkError::Shape(format!(
                    "layer {k} expects {} inputs, previous layer gives {expected}",
                    self.layers[k].cols
                )));
            }
        }
        let out = self.layers.last().map_or(0, |l| l.rows);
        let expected = match self.layout {
            OutputLayout::PerElement => 1,
            OutputLayout::Pooled(k) => k,
        };
        if out != expected {
            return Err(NetworkError::Shape(format!("head emits {out} outputs, layout needs {expected}")));
        }
        Ok(())
    }

    fn encoder(&self) -> &[Layer] {
        &self.layers[..self.encoder_depth]
    }

    fn head_layers(&self) -> &[Layer] {
        &self.layers[self.encoder_depth..]
    }

    /// Raw outputs (before any softmax) and the cache for backpropagation.
    /// `focus` selects the row fed to a pooled head; `None` feeds zeros.
    pub fn forward_raw(&self, rows: &[Vec<f64>], focus: Option<usize>) -> Result<ForwardCache, NetworkError> {
        let width = self.feature_width();
        if rows.is_empty() {
            return Err(NetworkError::Shape("no element rows".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(NetworkError::Shape(format!("feature row of width {} but network expects {width}", bad.len())));
        }
        if let Some(f) = focus {
            if f >= rows.len() {
                return Err(NetworkError::Shape(format!("focus row {f} out of {}", rows.len())));
            }
        }
        let mut encoder = Vec::with_capacity(rows.len());
        let mut buf = Vec::new();
        for row in rows {
            let mut acts = vec![row.clone()];
            for layer in self.encoder() {
                layer.apply(acts.last().unwrap(), &mut buf);
                acts.push(buf.iter().map(|v| v.tanh()).collect());
            }
            encoder.push(acts);
        }
        let embed = self.encoder().last().unwrap().rows;
        let mut pooled = vec![0.0; embed];
        for acts in &encoder {
            pooled.iter_mut().zip(acts.last().unwrap()).for_each(|(p, e)| *p += e);
        }
        let inv = 1.0 / rows.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);

        let head_inputs: Vec<Vec<f64>> = match self.layout {
            OutputLayout::PerElement => encoder
                .iter()
                .map(|acts| pooled.iter().chain(acts.last().unwrap()).copied().collect())
                .collect(),
            OutputLayout::Pooled(_) => {
                let focus_emb = match focus {
                    Some(f) => encoder[f].last().unwrap().clone(),
                    None => vec![0.0; embed],
                };
                vec![pooled.iter().chain(&focus_emb).copied().collect()]
            }
        };
        let n_head = self.head_layers().len();
        let mut head = Vec::with_capacity(head_inputs.len());
        let mut outputs = Vec::new();
        for input in head_inputs {
            let mut acts = vec![input];
            for (k, layer) in self.head_layers().iter().enumerate() {
                layer.apply(acts.last().unwrap(), &mut buf);
                if k + 1 < n_head {
                    acts.push(buf.iter().map(|v| v.tanh()).collect());
                } else {
                    outputs.extend_from_slice(&buf);
                }
            }
            head.push(acts);
        }
        Ok(ForwardCache {
            encoder,
            head,
            focus,
            outputs,
        })
    }

    /// Gradients of a scalar loss given `d_outputs`, its gradient with respect
    /// to the raw outputs of `cache`.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, d_outputs, &mut grads);
        grads
    }

    pub fn backward_into(&self, cache: &ForwardCache, d_outputs: &[f64], grads: &mut Gradients) {
        let n_rows = cache.encoder.len();
        let enc_depth = self.encoder_depth;
        let embed = self.encoder().last().unwrap().rows;
        let head_layers = self.head_layers();
        let out_per_eval = head_layers.last().unwrap().rows;
        let mut d_pooled = vec![0.0; embed];
        let mut d_embed = vec![vec![0.0; embed]; n_rows];

        for (e, acts) in cache.head.iter().enumerate() {
            let mut d = d_outputs[e * out_per_eval..(e + 1) * out_per_eval].to_vec();
            for k in (0..head_layers.len()).rev() {
                let input = &acts[k];
                let d_in = head_layers[k].backward(input, &d, &mut grads.layers[enc_depth + k]);
                d = if k > 0 {
                    // input of layer k is tanh output of layer k-1
                    d_in.iter().zip(input).map(|(g, y)| g * (1.0 - y * y)).collect()
                } else {
                    d_in
                };
            }
            d_pooled.iter_mut().zip(&d[..embed]).for_each(|(a, b)| *a += b);
            let row = match self.layout {
                OutputLayout::PerElement => Some(e),
                OutputLayout::Pooled(_) => cache.focus,
            };
            if let Some(r) = row {
                d_embed[r].iter_mut().zip(&d[embed..]).for_each(|(a, b)| *a += b);
            }
        }
        let inv = 1.0 / n_rows as f64;
        for (r, acts) in cache.encoder.iter().enumerate() {
            let mut d: Vec<f64> = d_embed[r].iter().zip(&d_pooled).map(|(a, p)| a + p * inv).collect();
            for k in (0..enc_depth).rev() {
                let y = &acts[k + 1];
                let d_pre: Vec<f64> = d.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                d = self.layers[k].backward(&acts[k], &d_pre, &mut grads.layers[k]);
            }
        }
    }

    /// Mean-pooled embedding of the rows.
    pub fn pooled_embedding(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, NetworkError> {
        let cache = self.forward_raw(rows, None)?;
        let embed = self.encoder().last().unwrap().rows;
        let mut pooled = vec![0.0; embed];
        for acts in &cache.encoder {
            pooled.iter_mut().zip(acts.last().unwrap()).for_each(|(p, e)| *p += e);
        }
        pooled.iter_mut().for_each(|p| *p /= rows.len() as f64);
        Ok(pooled)
    }

    /// Head output for a state: action values (masked entries `-inf`),
    /// masked-softmax probabilities, or a single critic value.
    pub fn forward(&self, rows: &[Vec<f64>], mask: &[bool], focus: Option<usize>) -> Result<Vec<f64>, NetworkError> {
        let cache = self.forward_raw(rows, focus)?;
        match self.head {
            HeadKind::Critic => Ok(cache.outputs),
            HeadKind::Q => {
                check_mask(mask, cache.outputs.len())?;
                Ok(cache
                    .outputs
                    .iter()
                    .zip(mask)
                    .map(|(&q, &m)| if m { q } else { f64::NEG_INFINITY })
                    .collect())
            }
            HeadKind::Actor => {
                check_mask(mask, cache.outputs.len())?;
                Ok(masked_softmax(&cache.outputs, mask, 1.0))
            }
        }
    }
}

fn check_mask(mask: &[bool], outputs: usize) -> Result<(), NetworkError> {
    if mask.len() != outputs {
        return Err(NetworkError::Shape(format!("mask of length {} for {outputs} outputs", mask.len())));
    }
    Ok(())
}

/// Softmax of `logits / temperature` over unmasked entries; masked entries
/// get exactly 0. All-masked input yields all zeros.
pub fn masked_softmax(logits: &[f64], mask: &[bool], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| l / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &m)| if m { (l / temperature - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
