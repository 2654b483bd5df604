//! The confidence scorer: a small fully connected network mapping a
//! detection's feature vector to a per-class confidence in `(0, 1)`.
//!
//! Hidden layers use ReLU; the output layer has one sigmoid unit per known
//! class so classes with different loss statistics don't fight over the
//! same head. Weights are plain `Vec<f64>` in row-major order, which keeps
//! serialization trivial and the arithmetic easy to audit; the network is
//! small enough that this beats pulling in a tensor library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PRED_CLAMP;

const FORMAT_VERSION: u32 = 1;

/// One dense layer: `out[o] = sum_i weights[o*n_in + i] * in[i] + bias[o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.bias.len()] }
    }
}

/// A trained (or training) confidence network.
///
/// `widths` lists the layer sizes from input to output; `class_ids[k]`
/// names the class served by output unit `k`. Construct with
/// [`Scorer::init`], train with [`super::train_scorer`], persist with
/// [`Scorer::to_json`] / [`Scorer::from_json`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub widths: Vec<usize>,
    pub class_ids: Vec<u32>,
    pub layers: Vec<Layer>,
}

/// On-disk representation. Versioned so an incompatible future layout can
/// be detected instead of silently mis-read.
#[derive(Serialize, Deserialize)]
struct ScorerFile {
    format_version: u32,
    widths: Vec<usize>,
    class_ids: Vec<u32>,
    hidden_activation: String,
    output_activation: String,
    layers: Vec<Layer>,
}

/// Intermediate state of one forward pass, kept for backpropagation.
/// `activations[0]` is the input; `activations[k]` for hidden `k` is
/// post-ReLU; `logits` are the output layer's pre-sigmoid values.
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Per-parameter gradients, shaped exactly like [`Scorer::layers`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_for(scorer: &Scorer) -> Gradients {
        Gradients { layers: scorer.layers.iter().map(Layer::zeros_like).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= factor;
            }
            for b in &mut layer.bias {
                *b *= factor;
            }
        }
    }

    /// Flattens in the same order as [`Scorer::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Scorer {
    /// Fresh network with Glorot-uniform weights and zero biases.
    /// `class_ids` must be non-empty and strictly increasing.
    pub fn init<R: rand::Rng>(
        input_dim: usize,
        hidden: &[usize],
        class_ids: Vec<u32>,
        rng: &mut R,
    ) -> Result<Scorer> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        if class_ids.is_empty() {
            return Err(Error::invalid("scorer needs at least one class"));
        }
        if class_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("class_ids must be strictly increasing"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(class_ids.len());

        let layers = widths
            .windows(2)
            .map(|io| {
                let (n_in, n_out) = (io[0], io[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let weights =
                    (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
                Layer { weights, bias: vec![0.0; n_out] }
            })
            .collect();
        Ok(Scorer { widths, class_ids, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Index of the output unit serving `class_id`.
    pub fn class_unit(&self, class_id: u32) -> Result<usize> {
        self.class_ids
            .binary_search(&class_id)
            .map_err(|_| Error::invalid(format!("scorer has no head for class_id {class_id}")))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length mismatch");
        let mut k = 0;
        for layer in &mut self.layers {
            let (w, b) = (layer.weights.len(), layer.bias.len());
            layer.weights.copy_from_slice(&params[k..k + w]);
            k += w;
            layer.bias.copy_from_slice(&params[k..k + b]);
            k += b;
        }
    }

    /// Forward pass retaining everything [`Scorer::backward`] needs.
    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache> {
        if features.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match scorer input {}",
                features.len(),
                self.input_dim()
            )));
        }
        let mut activations = vec![features.to_vec()];
        let mut logits = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("at least the input activation exists");
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let mut z = layer.bias.clone();
            for o in 0..n_out {
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += row[i] * input[i];
                }
                z[o] += acc;
            }
            if l == last {
                logits = z;
            } else {
                for v in &mut z {
                    *v = v.max(0.0);
                }
                activations.push(z);
            }
        }
        Ok(ForwardCache { activations, logits })
    }

    /// Confidence for one detection: sigmoid of the class head's logit,
    /// clamped away from 0 and 1.
    pub fn predict(&self, features: &[f64], class_id: u32) -> Result<f64> {
        let unit = self.class_unit(class_id)?;
        let cache = self.forward_cached(features)?;
        Ok(sigmoid(cache.logits[unit]).clamp(PRED_CLAMP, 1.0 - PRED_CLAMP))
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    ///
    /// `grad_logits[o]` is the loss derivative in output logit `o`; for
    /// sigmoid + cross-entropy it is `prediction - target` on the sample's
    /// class unit and zero elsewhere, so only that head receives gradient.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64], grads: &mut Gradients) {
        assert_eq!(grad_logits.len(), *self.widths.last().expect("widths is non-empty"));
        let mut delta = grad_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let input = &cache.activations[l];
            let g = &mut grads.layers[l];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                g.bias[o] += delta[o];
                let row = &mut g.weights[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] += delta[o] * input[i];
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.layers[l].weights;
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = &weights[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    prev[i] += delta[o] * row[i];
                }
            }
            // ReLU derivative: the stored activation is already rectified,
            // so "active" is exactly "positive".
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScorerFile {
            format_version: FORMAT_VERSION,
            widths: self.widths.clone(),
            class_ids: self.class_ids.clone(),
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            layers: self.layers.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Scorer> {
        let file: ScorerFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported scorer format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.hidden_activation != "relu" || file.output_activation != "sigmoid" {
            return Err(Error::invalid(format!(
                "unsupported activations {:?}/{:?}",
                file.hidden_activation, file.output_activation
            )));
        }
        if file.widths.len() < 2 {
            return Err(Error::invalid("scorer needs an input and an output layer"));
        }
        if file.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if file.class_ids.len() != *file.widths.last().expect("widths checked non-empty") {
            return Err(Error::invalid(format!(
                "{} class ids but output width {}",
                file.class_ids.len(),
                file.widths.last().expect("widths checked non-empty")
            )));
        }
        if file.class_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("class_ids must be strictly increasing"));
        }
        if file.layers.len() != file.widths.len() - 1 {
            return Err(Error::invalid(format!(
                "{} layers but {} widths",
                file.layers.len(),
                file.widths.len()
            )));
        }
        for (l, layer) in file.layers.iter().enumerate() {
            let (n_in, n_out) = (file.widths[l], file.widths[l + 1]);
            if layer.weights.len() != n_in * n_out || layer.bias.len() != n_out {
                return Err(Error::invalid(format!(
                    "layer {l} shape mismatch: {} weights and {} biases for {n_in}x{n_out}",
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} contains non-finite parameters")));
            }
        }
        Ok(Scorer { widths: file.widths, class_ids: file.class_ids, layers: file.layers })
    }
}
