//! Tiny differentiable classifiers with exact input-space gradients.
//!
//! A [`Weights`] value pairs a [`ModelSpec`] with a flat parameter vector.
//! Gradients are obtained by a hand-written reverse pass over the layer stack;
//! the same pass yields parameter gradients for training.

mod checkpoint;
mod loss;
mod spec;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{argmax, log_softmax, softmax, LossKind};
pub use spec::{Activation, Arch, ModelSpec, CONV_KERNEL, MAX_HIDDEN_LAYERS};

use spec::Layer;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("parameter vector has {got} entries, spec needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Counts input-gradient evaluations; one unit is one forward/backward pass
/// through one model. Safe to share between threads.
#[derive(Debug, Default)]
pub struct GradCounter(AtomicU64);

impl GradCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// A classifier: spec plus flat parameters. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    spec: ModelSpec,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer (the last one is the logits).
    pre: Vec<Vec<f64>>,
}

impl Weights {
    pub fn new(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if params.len() != expected {
            return Err(NnError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|p| !p.is_finite()) {
            return Err(NnError::NonFinite { index });
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::new(spec, vec![0.0; n])
    }

    /// Scaled Gaussian initialization (std `1/sqrt(fan_in)`), zero biases.
    pub fn random<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = vec![0.0; spec.param_count()];
        for layer in spec.layers() {
            let (offset, fan_in, weights) = match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    offset,
                } => (offset, inputs, inputs * outputs),
                Layer::Conv {
                    channels, offset, ..
                } => (offset, CONV_KERNEL, channels * CONV_KERNEL),
            };
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[offset..offset + weights] {
                *p = normal.sample(rng);
            }
        }
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { index });
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Tape {
        let layers = self.spec.layers();
        let act = self.spec.activation;
        let mut tape = Tape {
            inputs: Vec::with_capacity(layers.len()),
            pre: Vec::with_capacity(layers.len()),
        };
        let mut current = x.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let z = self.apply_layer(layer, &current);
            let next = if l + 1 < layers.len() {
                z.iter().map(|&v| act.apply(v)).collect()
            } else {
                Vec::new()
            };
            tape.inputs.push(std::mem::replace(&mut current, next));
            tape.pre.push(z);
        }
        tape
    }

    fn apply_layer(&self, layer: &Layer, input: &[f64]) -> Vec<f64> {
        let p = &self.params;
        match *layer {
            Layer::Dense {
                inputs,
                outputs,
                offset,
            } => {
                let w = &p[offset..offset + inputs * outputs];
                let b = &p[offset + inputs * outputs..offset + inputs * outputs + outputs];
                (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
                    })
                    .collect()
            }
            Layer::Conv {
                channels,
                length,
                offset,
            } => {
                let kernel = &p[offset..offset + channels * CONV_KERNEL];
                let bias = &p[offset + channels * CONV_KERNEL..offset + channels * (CONV_KERNEL + 1)];
                let mut out = vec![0.0; channels * length];
                for c in 0..channels {
                    let k = &kernel[c * CONV_KERNEL..(c + 1) * CONV_KERNEL];
                    for pos in 0..length {
                        let mut acc = bias[c];
                        for (t, &kt) in k.iter().enumerate() {
                            if let Some(src) = (pos + t).checked_sub(1).filter(|&s| s < length) {
                                acc += kt * input[src];
                            }
                        }
                        out[c * length + pos] = acc;
                    }
                }
                out
            }
        }
    }

    /// Reverse pass. Returns the input gradient and, when requested, the
    /// parameter gradient, given `d loss / d logits`.
    fn reverse(&self, tape: &Tape, upstream: &[f64], want_params: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let layers = self.spec.layers();
        let act = self.spec.activation;
        let mut grad_params = want_params.then(|| vec![0.0; self.params.len()]);
        let mut delta = upstream.to_vec();
        for l in (0..layers.len()).rev() {
            if l + 1 < layers.len() {
                for (d, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                    *d *= act.derivative(z);
                }
            }
            let input = &tape.inputs[l];
            let p = &self.params;
            delta = match layers[l] {
                Layer::Dense {
                    inputs,
                    outputs,
                    offset,
                } => {
                    if let Some(gp) = grad_params.as_mut() {
                        for o in 0..outputs {
                            let row = &mut gp[offset + o * inputs..offset + (o + 1) * inputs];
                            for (g, &x) in row.iter_mut().zip(input) {
                                *g = delta[o] * x;
                            }
                            gp[offset + inputs * outputs + o] = delta[o];
                        }
                    }
                    let w = &p[offset..offset + inputs * outputs];
                    let mut back = vec![0.0; inputs];
                    for o in 0..outputs {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        for (b, &a) in back.iter_mut().zip(row) {
                            *b += a * delta[o];
                        }
                    }
                    back
                }
                Layer::Conv {
                    channels,
                    length,
                    offset,
                } => {
                    let kernel = &p[offset..offset + channels * CONV_KERNEL];
                    let mut back = vec![0.0; length];
                    for c in 0..channels {
                        let k = &kernel[c * CONV_KERNEL..(c + 1) * CONV_KERNEL];
                        let dc = &delta[c * length..(c + 1) * length];
                        let mut dk = [0.0; CONV_KERNEL];
                        for (pos, &d) in dc.iter().enumerate() {
                            for t in 0..CONV_KERNEL {
                                if let Some(src) = (pos + t).checked_sub(1).filter(|&s| s < length) {
                                    dk[t] += d * input[src];
                                    back[src] += k[t] * d;
                                }
                            }
                        }
                        if let Some(gp) = grad_params.as_mut() {
                            gp[offset + c * CONV_KERNEL..offset + (c + 1) * CONV_KERNEL].copy_from_slice(&dk);
                            gp[offset + channels * CONV_KERNEL + c] = dc.iter().sum();
                        }
                    }
                    back
                }
            };
        }
        (delta, grad_params)
    }

    /// Logits `f(x, w)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = self.run(x);
        Ok(tape.pre.pop().expect("at least one layer"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn loss(&self, x: &[f64], kind: LossKind) -> Result<f64> {
        kind.check(self.spec.num_classes)?;
        kind.value(&self.forward(x)?)
    }

    /// `∇_x loss(f(x, w))`. Counts as one gradient call.
    pub fn input_gradient(&self, x: &[f64], kind: LossKind, counter: &GradCounter) -> Result<Vec<f64>> {
        Ok(self.loss_and_input_gradient(x, kind, counter)?.1)
    }

    /// Loss value together with its input gradient. Counts as one gradient call.
    pub fn loss_and_input_gradient(
        &self,
        x: &[f64],
        kind: LossKind,
        counter: &GradCounter,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        kind.check(self.spec.num_classes)?;
        let tape = self.run(x);
        let (value, upstream) = kind.value_and_grad(tape.pre.last().expect("logits"))?;
        let (grad, _) = self.reverse(&tape, &upstream, false);
        counter.increment();
        Ok((value, grad))
    }

    /// Pulls an arbitrary logit-space cotangent back to input space. Used to
    /// fuse several models through a shared loss on averaged logits. Counts as
    /// one gradient call.
    pub fn pullback_logits(&self, x: &[f64], upstream: &[f64], counter: &GradCounter) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.spec.num_classes {
            return Err(NnError::DimensionMismatch {
                expected: self.spec.num_classes,
                got: upstream.len(),
            });
        }
        let tape = self.run(x);
        let (grad, _) = self.reverse(&tape, upstream, false);
        counter.increment();
        Ok(grad)
    }

    /// Loss and `∇_w loss` for training. Does not touch any gradient counter.
    pub fn loss_and_weight_gradient(&self, x: &[f64], kind: LossKind) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        kind.check(self.spec.num_classes)?;
        let tape = self.run(x);
        let (value, upstream) = kind.value_and_grad(tape.pre.last().expect("logits"))?;
        let (_, grad) = self.reverse(&tape, &upstream, true);
        Ok((value, grad.expect("requested")))
    }

    /// New weights `w + scale * direction`.
    pub fn axpy(&self, scale: f64, direction: &[f64]) -> Result<Self> {
        if direction.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                got: direction.len(),
            });
        }
        let params = self
            .params
            .iter()
            .zip(direction)
            .map(|(p, d)| p + scale * d)
            .collect();
        Self::new(self.spec.clone(), params)
    }
}
