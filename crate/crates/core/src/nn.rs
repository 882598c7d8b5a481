//! Fully-connected regression networks trained with RMSProp on mean squared
//! error plus an l2 weight penalty.
//!
//! Inputs are always the periodic encoding of the setting. Labels are
//! standardized with the training mean and standard deviation; predictions
//! are mapped back to seconds.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{dimension, LabeledRecord};
use crate::error::{Error, Result};
use crate::featurize::FeatureMode;
use crate::netmodel::SignalSetting;
use crate::rng;

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSpec {
    /// Hidden layer widths; empty gives a linear model.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub l2_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NnSpec {
    fn default() -> Self {
        NnSpec {
            layer_widths: vec![128, 64],
            activation: Activation::Relu,
            l2_rate: 1e-5,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl NnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be positive, l2_rate nonnegative"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.layer_widths.is_empty() {
            return "nn-linear".into();
        }
        let widths: Vec<String> = self.layer_widths.iter().map(|w| w.to_string()).collect();
        format!("nn-{}-{}", self.activation, widths.join("x"))
    }
}

/// The eight network configurations analyzed side by side: four layer
/// layouts, each with ReLU and tanh.
pub fn roster_specs(seed: u64) -> Vec<NnSpec> {
    let layouts: [&[usize]; 4] = [&[64, 64], &[128, 64], &[128, 128, 64], &[256, 128]];
    let mut out = Vec::new();
    for (i, widths) in layouts.iter().enumerate() {
        for (j, activation) in [Activation::Relu, Activation::Tanh].into_iter().enumerate() {
            out.push(NnSpec {
                layer_widths: widths.to_vec(),
                activation,
                seed: rng::mix_seed(seed, (2 * i + j) as u64),
                ..NnSpec::default()
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in × fan_out`, stored row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub spec: NnSpec,
    pub n_intersections: usize,
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<Dense>,
    pub target_scale: TargetScale,
    /// Mean mini-batch loss of each epoch, in scaled units.
    pub loss_history: Vec<f64>,
}

fn init_layers(spec: &NnSpec, n_inputs: usize, rng: &mut rng::Rng) -> Vec<Dense> {
    let mut widths = vec![n_inputs];
    widths.extend(&spec.layer_widths);
    widths.push(1);
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect()
}

/// Activations kept for the backward pass.
struct Trace {
    /// Input followed by every hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
    output: Array1<f64>,
}

fn forward(layers: &[Dense], act: Activation, x: ArrayView2<f64>, keep: bool) -> Trace {
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut h = x.to_owned();
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let mut z = h.dot(&layer.weights);
        z += &layer.bias;
        if l == last {
            if keep {
                inputs.push(h);
            }
            return Trace {
                inputs,
                pre,
                output: z.column(0).to_owned(),
            };
        }
        let a = z.mapv(|v| act.apply(v));
        if keep {
            inputs.push(h);
            pre.push(z);
        }
        h = a;
    }
    unreachable!("network has an output layer")
}

/// Regularized loss `mean((ŷ - y)²) + l2 Σ‖W‖²` and its gradients.
fn loss_and_grad(
    layers: &[Dense],
    act: Activation,
    l2: f64,
    x: ArrayView2<f64>,
    y: &Array1<f64>,
) -> (f64, Vec<Dense>) {
    let trace = forward(layers, act, x, true);
    let b = y.len() as f64;
    let resid = &trace.output - y;
    let mut loss = resid.mapv(|r| r * r).sum() / b;
    for layer in layers {
        loss += l2 * layer.weights.mapv(|w| w * w).sum();
    }

    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    let mut delta = (resid * (2.0 / b)).insert_axis(Axis(1));
    for l in (0..layers.len()).rev() {
        let input = &trace.inputs[l];
        let mut gw = input.t().dot(&delta);
        gw.scaled_add(2.0 * l2, &layers[l].weights);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&layers[l].weights.t());
            let z = &trace.pre[l - 1];
            let a = &trace.inputs[l];
            ndarray::Zip::from(&mut back)
                .and(z)
                .and(a)
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            delta = back;
        }
        grads.push(Dense {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    (loss, grads)
}

fn feature_matrix<'a>(
    settings: impl ExactSizeIterator<Item = &'a SignalSetting>,
    c: usize,
) -> Array2<f64> {
    let n = settings.len();
    let mut buf = Vec::with_capacity(n * 2 * c);
    for s in settings {
        FeatureMode::Encoded.extend(s, &mut buf);
    }
    Array2::from_shape_vec((n, 2 * c), buf).expect("feature width")
}

fn scale_of(labels: &[f64]) -> TargetScale {
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    TargetScale {
        mean,
        std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
    }
}

pub fn nn_train(train: &[LabeledRecord], spec: &NnSpec) -> Result<NnModel> {
    spec.validate()?;
    let c = dimension(train)?;
    let labels: Vec<f64> = train.iter().map(|r| r.wait_s).collect();
    let scale = scale_of(&labels);
    let x = feature_matrix(train.iter().map(|r| &r.setting), c);
    let y = Array1::from_iter(labels.iter().map(|v| (v - scale.mean) / scale.std));

    let mut rng = rng::seeded(spec.seed);
    let mut layers = init_layers(spec, 2 * c, &mut rng);
    let mut cache: Vec<Dense> = layers
        .iter()
        .map(|d| Dense {
            weights: Array2::zeros(d.weights.raw_dim()),
            bias: Array1::zeros(d.bias.raw_dim()),
        })
        .collect();

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(spec.epochs);
    let width = 2 * c;
    let mut xb = Array2::<f64>::zeros((spec.batch_size.min(n), width));
    let mut yb = Array1::<f64>::zeros(spec.batch_size.min(n));

    let rms = |param: &mut f64, cache: &mut f64, g: f64| {
        *cache = RMSPROP_DECAY * *cache + (1.0 - RMSPROP_DECAY) * g * g;
        *param -= spec.learning_rate * g / (cache.sqrt() + RMSPROP_EPSILON);
    };

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let m = chunk.len();
            if xb.nrows() != m {
                xb = Array2::zeros((m, width));
                yb = Array1::zeros(m);
            }
            for (row, &i) in chunk.iter().enumerate() {
                xb.row_mut(row).assign(&x.row(i));
                yb[row] = y[i];
            }
            let (loss, grads) = loss_and_grad(&layers, spec.activation, spec.l2_rate, xb.view(), &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss;
            batches += 1;
            for ((layer, g), cache) in layers.iter_mut().zip(&grads).zip(&mut cache) {
                ndarray::Zip::from(&mut layer.weights)
                    .and(&mut cache.weights)
                    .and(&g.weights)
                    .for_each(|p, c, &g| rms(p, c, g));
                ndarray::Zip::from(&mut layer.bias)
                    .and(&mut cache.bias)
                    .and(&g.bias)
                    .for_each(|p, c, &g| rms(p, c, g));
            }
        }
        let epoch_loss = total / batches as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: epoch_loss });
        }
        history.push(epoch_loss);
    }

    Ok(NnModel {
        spec: spec.clone(),
        n_intersections: c,
        layers,
        target_scale: scale,
        loss_history: history,
    })
}

impl NnModel {
    pub fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(setting))?[0])
    }

    pub fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>> {
        for (i, s) in settings.iter().enumerate() {
            s.check_len(self.n_intersections).map_err(|e| Error::at(i, e))?;
        }
        if settings.is_empty() {
            return Ok(Vec::new());
        }
        let x = feature_matrix(settings.iter(), self.n_intersections);
        let out = forward(&self.layers, self.spec.activation, x.view(), false).output;
        Ok(out
            .iter()
            .map(|v| v * self.target_scale.std + self.target_scale.mean)
            .collect())
    }

    /// Sum of squared weights over all layers (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.mapv(|w| w * w).sum()).sum()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Result of comparing backpropagated gradients with finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
    pub max_rel_discrepancy: f64,
    /// Smallest |pre-activation| over hidden units and records; a ReLU check
    /// is only meaningful when this is well above the step size.
    pub min_abs_preactivation: f64,
    pub n_params: usize,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Checks the analytic gradient of the regularized loss at the network's
/// initial parameters (drawn from `spec.seed`) on `sample`, with labels
/// standardized as in training.
pub fn nn_gradient_check(spec: &NnSpec, sample: &[LabeledRecord]) -> Result<GradientCheck> {
    spec.validate()?;
    if sample.len() > 10 {
        return Err(Error::invalid("gradient check takes at most 10 records"));
    }
    let c = dimension(sample)?;
    let labels: Vec<f64> = sample.iter().map(|r| r.wait_s).collect();
    let scale = scale_of(&labels);
    let x = feature_matrix(sample.iter().map(|r| &r.setting), c);
    let y = Array1::from_iter(labels.iter().map(|v| (v - scale.mean) / scale.std));
    let mut rng = rng::seeded(spec.seed);
    let mut layers = init_layers(spec, 2 * c, &mut rng);

    let trace = forward(&layers, spec.activation, x.view(), true);
    let min_abs_preactivation = trace
        .pre
        .iter()
        .flat_map(|z| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min);

    let (_, grads) = loss_and_grad(&layers, spec.activation, spec.l2_rate, x.view(), &y);
    let loss_at = |layers: &[Dense]| loss_and_grad(layers, spec.activation, spec.l2_rate, x.view(), &y).0;

    let mut worst: f64 = 0.0;
    let mut n_params = 0;
    for l in 0..layers.len() {
        let shape = layers[l].weights.raw_dim();
        for r in 0..shape[0] {
            for k in 0..shape[1] {
                let orig = layers[l].weights[[r, k]];
                layers[l].weights[[r, k]] = orig + GRAD_CHECK_STEP;
                let up = loss_at(&layers);
                layers[l].weights[[r, k]] = orig - GRAD_CHECK_STEP;
                let down = loss_at(&layers);
                layers[l].weights[[r, k]] = orig;
                let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
                worst = worst.max(rel(grads[l].weights[[r, k]], numeric));
                n_params += 1;
            }
        }
        for k in 0..layers[l].bias.len() {
            let orig = layers[l].bias[k];
            layers[l].bias[k] = orig + GRAD_CHECK_STEP;
            let up = loss_at(&layers);
            layers[l].bias[k] = orig - GRAD_CHECK_STEP;
            let down = loss_at(&layers);
            layers[l].bias[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            worst = worst.max(rel(grads[l].bias[k], numeric));
            n_params += 1;
        }
    }
    Ok(GradientCheck {
        max_rel_discrepancy: worst,
        min_abs_preactivation,
        n_params,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Standardized-label MSE of `model` over `data`, without the penalty.
pub fn scaled_mse(model: &NnModel, data: &[LabeledRecord]) -> Result<f64> {
    let settings: Vec<SignalSetting> = data.iter().map(|r| r.setting.clone()).collect();
    let pred = model.predict_batch(&settings)?;
    let s = model.target_scale;
    Ok(pred
        .iter()
        .zip(data)
        .map(|(p, r)| ((p - r.wait_s) / s.std).powi(2))
        .sum::<f64>()
        / data.len() as f64)
}
