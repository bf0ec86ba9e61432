//! Dense feed-forward classifier over a flat parameter vector.
//!
//! Parameter layout (layer-major): for each layer `l` mapping `dims[l]` inputs
//! to `dims[l+1]` outputs, the weight matrix comes first in row-major order
//! with one row per output unit, followed by the `dims[l+1]` biases.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Split;
use crate::error::{ensure_len, Error, Result};
use crate::ewr::{GradientMatrix, WeightVector};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
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

    /// Derivative expressed through the activation output `a`.
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

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    dims: Vec<usize>,
    activation: Activation,
    weights: WeightVector,
    layout: Vec<LayerLayout>,
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layout_for(dims: &[usize]) -> Vec<LayerLayout> {
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let l = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect()
}

/// Per-sample forward trace kept for backprop.
struct Trace {
    /// Layer inputs: `inputs[0]` is the sample, `inputs[l]` the output of layer `l-1`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl TinyMlp {
    pub fn new(dims: Vec<usize>, activation: Activation, weights: WeightVector) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer dims {dims:?}")));
        }
        ensure_len("flat weights vs layer dims", param_count(&dims), weights.len())?;
        let layout = layout_for(&dims);
        Ok(Self {
            dims,
            activation,
            weights,
            layout,
        })
    }

    pub fn zeros(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let p = param_count(&dims);
        Self::new(dims, activation, WeightVector::zeros(p))
    }

    /// Uniform Glorot initialization, biases zero.
    pub fn init(dims: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut flat = Vec::with_capacity(param_count(&dims));
        for w in dims.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            flat.extend((0..w[0] * w[1]).map(|_| dist.sample(&mut rng)));
            flat.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self::new(dims, activation, WeightVector::from_vec(flat)?)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    /// Same architecture with a different parameter vector.
    pub fn with_weights(&self, weights: WeightVector) -> Result<Self> {
        Self::new(self.dims.clone(), self.activation, weights)
    }

    /// `true` for bias entries of the flat vector.
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_params()];
        for l in &self.layout {
            mask[l.bias_offset..l.bias_offset + l.fan_out].fill(true);
        }
        mask
    }

    /// Per-layer `(weight matrix, bias)` pairs.
    pub fn unflatten(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        let w = self.weights.as_slice();
        self.layout
            .iter()
            .map(|l| {
                let m = Array2::from_shape_vec(
                    (l.fan_out, l.fan_in),
                    w[l.weight_offset..l.bias_offset].to_vec(),
                )
                .expect("layout matches shape");
                let b = Array1::from(w[l.bias_offset..l.bias_offset + l.fan_out].to_vec());
                (m, b)
            })
            .collect()
    }

    pub fn from_layers(layers: &[(Array2<f64>, Array1<f64>)], activation: Activation) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        let mut flat = Vec::new();
        for (i, (m, b)) in layers.iter().enumerate() {
            if i == 0 {
                dims.push(m.ncols());
            } else {
                ensure_len("layer fan-in", dims[i], m.ncols())?;
            }
            ensure_len("bias length", m.nrows(), b.len())?;
            dims.push(m.nrows());
            flat.extend(m.iter().copied());
            flat.extend(b.iter().copied());
        }
        Self::new(dims, activation, WeightVector::from_vec(flat)?)
    }

    fn trace(&self, sample: &[f64]) -> Trace {
        let w = self.weights.as_slice();
        let mut inputs = vec![sample.to_vec()];
        let mut pre = Vec::with_capacity(self.layout.len());
        let last = self.layout.len() - 1;
        for (li, l) in self.layout.iter().enumerate() {
            let input = &inputs[li];
            let z: Vec<f64> = (0..l.fan_out)
                .map(|o| {
                    let row = &w[l.weight_offset + o * l.fan_in..l.weight_offset + (o + 1) * l.fan_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + w[l.bias_offset + o]
                })
                .collect();
            if li < last {
                inputs.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Output logits for one sample.
    pub fn logits(&self, sample: &[f64]) -> Vec<f64> {
        self.trace(sample).pre.pop().expect("at least one layer")
    }

    /// Cross-entropy of one sample, its logits, and `∂ℓ/∂w` when requested.
    fn sample_loss_grad(&self, sample: &[f64], label: usize, want_grad: bool) -> (f64, Vec<f64>, Option<Vec<f64>>) {
        let trace = self.trace(sample);
        let logits = trace.pre.last().expect("at least one layer").clone();
        let lse = log_sum_exp(&logits);
        let loss = lse - logits[label];
        if !want_grad {
            return (loss, logits, None);
        }

        let w = self.weights.as_slice();
        let mut grad = vec![0.0; w.len()];
        // δ at the output: softmax − onehot.
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        delta[label] -= 1.0;
        for li in (0..self.layout.len()).rev() {
            let l = self.layout[li];
            let input = &trace.inputs[li];
            for o in 0..l.fan_out {
                let d = delta[o];
                let row = &mut grad[l.weight_offset + o * l.fan_in..l.weight_offset + (o + 1) * l.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g = d * a;
                }
                grad[l.bias_offset + o] = d;
            }
            if li > 0 {
                let z_prev = &trace.pre[li - 1];
                let a_prev = &trace.inputs[li];
                delta = (0..l.fan_in)
                    .map(|i| {
                        let back: f64 = (0..l.fan_out)
                            .map(|o| w[l.weight_offset + o * l.fan_in + i] * delta[o])
                            .sum();
                        back * self.activation.derivative(z_prev[i], a_prev[i])
                    })
                    .collect();
            }
        }
        (loss, logits, Some(grad))
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn check_batch(mlp: &TinyMlp, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    ensure_len("feature columns vs input dim", mlp.input_dim(), features.ncols())?;
    ensure_len("labels vs feature rows", features.nrows(), labels.len())?;
    if features.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= mlp.num_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            mlp.num_classes()
        )));
    }
    Ok(())
}

fn row_slice(features: ArrayView2<'_, f64>, i: usize) -> Vec<f64> {
    features.row(i).to_vec()
}

/// Mean cross-entropy over the batch.
pub fn forward_loss(mlp: &TinyMlp, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_batch(mlp, features, labels)?;
    let total: f64 = (0..labels.len())
        .map(|i| mlp.sample_loss_grad(&row_slice(features, i), labels[i], false).0)
        .sum();
    let loss = total / labels.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("forward loss"));
    }
    Ok(loss)
}

/// Row `i` is the gradient of sample `i`'s loss with respect to the flat
/// weights. Rows are computed independently and assembled in sample order.
pub fn per_sample_gradients(mlp: &TinyMlp, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<GradientMatrix> {
    check_batch(mlp, features, labels)?;
    let rows: Vec<Vec<f64>> = (0..labels.len())
        .into_par_iter()
        .map(|i| {
            mlp.sample_loss_grad(&row_slice(features, i), labels[i], true)
                .2
                .expect("gradient requested")
        })
        .collect();
    let p = mlp.num_params();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let m = Array2::from_shape_vec((labels.len(), p), flat).expect("rows have p entries");
    GradientMatrix::new(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mini-batch gradient descent on mean cross-entropy. Returns the trained
/// model and the training loss after each epoch.
pub fn train_with_history(mlp: &TinyMlp, data: &Split, cfg: &TrainConfig) -> Result<(TinyMlp, Vec<f64>)> {
    check_batch(mlp, data.features.view(), &data.labels)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut model = mlp.clone();
    let mut rng = seeded(cfg.seed);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the seeded generator.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = vec![0.0; model.num_params()];
            for &i in batch {
                let (_, _, g) = model.sample_loss_grad(&row_slice(data.features.view(), i), data.labels[i], true);
                for (a, gi) in acc.iter_mut().zip(g.expect("gradient requested")) {
                    *a += gi;
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            let mut w = model.weights.clone().into_inner();
            for (wi, a) in w.iter_mut().zip(&acc) {
                *wi -= scale * a;
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            model.weights = WeightVector::new(w)?;
        }
        let loss = forward_loss(&model, data.features.view(), &data.labels)
            .map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
        history.push(loss);
    }
    Ok((model, history))
}

pub fn train(mlp: &TinyMlp, data: &Split, cfg: &TrainConfig) -> Result<TinyMlp> {
    train_with_history(mlp, data, cfg).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// Only reported when the model has at least five classes.
    pub top5_accuracy: Option<f64>,
}

/// Mean cross-entropy and top-1 / top-5 accuracy. Ties in the logits go to
/// the lower class index.
pub fn evaluate(mlp: &TinyMlp, split: &Split) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    check_batch(mlp, split.features.view(), &split.labels)?;
    let c = mlp.num_classes();
    let mut loss = 0.0;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for i in 0..split.len() {
        let (l, logits, _) = mlp.sample_loss_grad(&row_slice(split.features.view(), i), split.labels[i], false);
        loss += l;
        let mut ranked: Vec<usize> = (0..c).collect();
        ranked.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
        if ranked[0] == split.labels[i] {
            top1 += 1;
        }
        if ranked.iter().take(5).any(|&k| k == split.labels[i]) {
            top5 += 1;
        }
    }
    let n = split.len() as f64;
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("evaluation loss"));
    }
    Ok(Evaluation {
        loss,
        accuracy: top1 as f64 / n,
        top5_accuracy: (c >= 5).then(|| top5 as f64 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn param_count_and_layout() {
        assert_eq!(param_count(&[3, 4, 2]), 3 * 4 + 4 + 4 * 2 + 2);
        let m = TinyMlp::zeros(vec![3, 4, 2], Activation::Relu).unwrap();
        let l = m.layout();
        assert_eq!(l[0].bias_offset, 12);
        assert_eq!(l[1].weight_offset, 16);
        assert_eq!(m.bias_mask().iter().filter(|&&b| b).count(), 6);
    }

    #[test]
    fn zero_weights_give_log_c_loss() {
        let m = TinyMlp::zeros(vec![4, 8, 10], Activation::Relu).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
        let loss = forward_loss(&m, x.view(), &[3, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        // Single linear layer: logits = [1e4·x, 0].
        let m = TinyMlp::new(vec![1, 2], Activation::Relu, WeightVector::from_vec(vec![1e4, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let loss = forward_loss(&m, array![[50.0]].view(), &[1]).unwrap();
        assert!((loss - 5e5).abs() < 1e-6);
    }

    #[test]
    fn zero_weight_evaluation_tie_rules() {
        let m = TinyMlp::zeros(vec![2, 3, 10], Activation::Tanh).unwrap();
        let features = Array2::from_shape_fn((20, 2), |(i, j)| (i + j) as f64);
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let eval = evaluate(&m, &Split::new(features, labels).unwrap()).unwrap();
        assert!((eval.accuracy - 0.1).abs() < 1e-15);
        assert!((eval.top5_accuracy.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flatten_round_trip_is_bit_exact() {
        let m = TinyMlp::init(vec![5, 7, 3, 4], Activation::Tanh, 11).unwrap();
        let back = TinyMlp::from_layers(&m.unflatten(), Activation::Tanh).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn duplicated_samples_give_identical_rows() {
        let m = TinyMlp::init(vec![3, 5, 4], Activation::Relu, 3).unwrap();
        let x = array![[0.2, -0.4, 1.0], [0.2, -0.4, 1.0]];
        let g = per_sample_gradients(&m, x.view(), &[2, 2]).unwrap();
        assert_eq!(g.values().row(0), g.values().row(1));
    }

    #[test]
    fn dimension_errors() {
        let m = TinyMlp::zeros(vec![3, 2], Activation::Relu).unwrap();
        assert!(forward_loss(&m, array![[1.0, 2.0]].view(), &[0]).is_err());
        assert!(forward_loss(&m, array![[1.0, 2.0, 3.0]].view(), &[2]).is_err());
        assert!(TinyMlp::new(vec![3, 2], Activation::Relu, WeightVector::zeros(3)).is_err());
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let m = TinyMlp::init(vec![2, 4, 2], Activation::Relu, 1).unwrap();
        let split = Split::new(array![[0.0, 1.0], [1.0, 0.0]], vec![0, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&m, &split, &cfg).unwrap(), m);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let m = TinyMlp::init(vec![2, 4, 2], Activation::Relu, 1).unwrap();
        let split = Split::new(array![[1e300, 1e300], [-1e300, 1e300]], vec![0, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            batch_size: 2,
            seed: 0,
        };
        let r = train(&m, &split, &cfg);
        assert!(matches!(r, Err(Error::Diverged { epoch: 0, .. })), "{r:?}");
    }
}
