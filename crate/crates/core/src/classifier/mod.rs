//! Softmax classification head trained with momentum SGD under
//! categorical cross-entropy.

mod gradcheck;
mod train;

pub use gradcheck::{finite_difference_gradient, gradient_check};
pub use train::{lr_at_epoch, train, train_on, EpochRecord, Sgd, TrainConfig, TrainHistory};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{to_usize, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;

pub const HEAD_MAGIC: &[u8; 4] = b"DHED";
pub const HEAD_VERSION: u32 = 1;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Affine layer `y = x W + b`, `W` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        Self {
            weights: Array2::from_shape_simple_fn((inputs, outputs), || T::c(dist.sample(rng))),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weights) + &self.bias
    }

    fn params_mut(&mut self) -> [&mut [T]; 2] {
        [
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn params(&self) -> [&[T]; 2] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }
}

/// Either a single linear layer or linear, ReLU, linear.
///
/// The same type doubles as the container for gradients and momentum
/// buffers, since those share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead<T> {
    hidden: Option<Dense<T>>,
    output: Dense<T>,
}

/// Activations kept from a forward pass for backpropagation.
struct Trace<T> {
    hidden_pre: Option<Array2<T>>,
    hidden_act: Option<Array2<T>>,
    probs: Array2<T>,
}

impl<T: Scalar> SoftmaxHead<T> {
    pub fn new(inputs: usize, classes: usize, hidden: Option<usize>, seed: u64) -> Result<Self> {
        if inputs == 0 || classes == 0 || hidden == Some(0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match hidden {
            None => Self {
                hidden: None,
                output: Dense::glorot(inputs, classes, &mut rng),
            },
            Some(h) => Self {
                hidden: Some(Dense::glorot(inputs, h, &mut rng)),
                output: Dense::glorot(h, classes, &mut rng),
            },
        })
    }

    pub fn zeros(inputs: usize, classes: usize, hidden: Option<usize>) -> Self {
        match hidden {
            None => Self {
                hidden: None,
                output: Dense::zeros(inputs, classes),
            },
            Some(h) => Self {
                hidden: Some(Dense::zeros(inputs, h)),
                output: Dense::zeros(h, classes),
            },
        }
    }

    pub fn from_layers(hidden: Option<Dense<T>>, output: Dense<T>) -> Result<Self> {
        if let Some(h) = &hidden {
            if h.outputs() != output.inputs() {
                return Err(Error::DimensionMismatch {
                    expected: h.outputs(),
                    found: output.inputs(),
                });
            }
        }
        Ok(Self { hidden, output })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(|h| Dense::zeros(h.inputs(), h.outputs())),
            output: Dense::zeros(self.output.inputs(), self.output.outputs()),
        }
    }

    pub fn hidden(&self) -> Option<&Dense<T>> {
        self.hidden.as_ref()
    }

    pub fn output(&self) -> &Dense<T> {
        &self.output
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).inputs()
    }

    pub fn n_classes(&self) -> usize {
        self.output.outputs()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameter slices in storage order: hidden weights and bias (when
    /// present), then output weights and bias.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.extend(h.params());
        }
        out.extend(self.output.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.extend(h.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }

    /// Whether each slice of [`params`](Self::params) belongs to the output
    /// layer.
    pub fn output_layer_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if self.hidden.is_some() {
            out.extend([false, false]);
        }
        out.extend([true, true]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> T {
        self.params().iter().flat_map(|p| p.iter()).map(|&v| v * v).sum()
    }

    fn check_input(&self, x: ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier input"));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Trace<T> {
        match &self.hidden {
            None => Trace {
                hidden_pre: None,
                hidden_act: None,
                probs: softmax_rows(self.output.forward(x)),
            },
            Some(h) => {
                let pre = h.forward(x);
                let act = pre.mapv(|v| if v > T::zero() { v } else { T::zero() });
                let probs = softmax_rows(self.output.forward(act.view()));
                Trace {
                    hidden_pre: Some(pre),
                    hidden_act: Some(act),
                    probs,
                }
            }
        }
    }

    pub fn logits(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        Ok(match &self.hidden {
            None => self.output.forward(x),
            Some(h) => {
                let act = h.forward(x).mapv(|v| if v > T::zero() { v } else { T::zero() });
                self.output.forward(act.view())
            }
        })
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        Ok(self.forward(x).probs)
    }

    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }

    /// Mean cross-entropy over `(x, labels)` and its gradient with respect
    /// to every parameter. Weight decay is not included.
    pub fn loss_and_gradient(&self, x: ArrayView2<'_, T>, labels: &[usize]) -> Result<(T, SoftmaxHead<T>)> {
        self.check_input(x)?;
        check_labels(labels, x.nrows(), self.n_classes())?;
        let trace = self.forward(x);
        let loss = cross_entropy(&trace.probs, labels)?;
        let scale = T::one() / T::from_usize_lossy(x.nrows());
        let mut delta = trace.probs;
        for (i, &y) in labels.iter().enumerate() {
            delta[[i, y]] -= T::one();
        }
        delta.mapv_inplace(|v| v * scale);

        let mut grad = self.zeros_like();
        match (&self.hidden, trace.hidden_pre, trace.hidden_act) {
            (Some(_), Some(pre), Some(act)) => {
                grad.output.weights = act.t().dot(&delta);
                grad.output.bias = delta.sum_axis(Axis(0));
                let mut back = delta.dot(&self.output.weights.t());
                back.zip_mut_with(&pre, |g, &z| {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                });
                let gh = grad.hidden.as_mut().expect("shape mirrors self");
                gh.weights = x.t().dot(&back);
                gh.bias = back.sum_axis(Axis(0));
            }
            _ => {
                grad.output.weights = x.t().dot(&delta);
                grad.output.bias = delta.sum_axis(Axis(0));
            }
        }
        Ok((loss, grad))
    }

    /// `DHED` blob: magic, u32 version, u8 has-hidden, u64 inputs, u64
    /// hidden width (0 without a hidden layer), u64 classes, then every
    /// parameter as f64 in [`params`](Self::params) order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(HEAD_MAGIC);
        w.u32(HEAD_VERSION);
        w.u8(self.hidden.is_some() as u8);
        w.u64(self.input_dim() as u64);
        w.u64(self.hidden.as_ref().map_or(0, |h| h.outputs()) as u64);
        w.u64(self.n_classes() as u64);
        for p in self.params() {
            for &v in p {
                w.f64(v.as_f64());
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic_and_version(HEAD_MAGIC, HEAD_VERSION)?;
        let has_hidden = match r.u8("hidden flag")? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Invalid(format!("hidden flag {other}"))),
        };
        let inputs = to_usize(r.u64("input dim")?, "input dim")?;
        let width = to_usize(r.u64("hidden width")?, "hidden width")?;
        let classes = to_usize(r.u64("class count")?, "class count")?;
        if inputs == 0 || classes == 0 || has_hidden == (width == 0) {
            return Err(FormatError::Invalid("inconsistent layer sizes".into()));
        }
        let mut head = Self::zeros(inputs, classes, has_hidden.then_some(width));
        for slice in head.params_mut() {
            let values = r.f64s(slice.len(), "parameters")?;
            slice.iter_mut().zip(values).for_each(|(p, v)| *p = T::c(v));
        }
        r.expect_end()?;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Max-subtracted softmax of every row.
pub fn softmax_rows<T: Scalar>(mut logits: Array2<T>) -> Array2<T> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

pub fn argmax_rows<T: Scalar>(m: &Array2<T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = (0, T::neg_infinity());
            for (j, &v) in r.iter().enumerate() {
                if v > best.1 {
                    best = (j, v);
                }
            }
            best.0
        })
        .collect()
}

/// `-(1/n) * sum ln p[i, y_i]`, probabilities floored at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &Array2<T>, labels: &[usize]) -> Result<T> {
    check_labels(labels, probs.nrows(), probs.ncols())?;
    if labels.is_empty() {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    let floor = T::c(PROB_FLOOR);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| probs[[i, y]].max(floor).ln())
        .sum();
    Ok(-total / T::from_usize_lossy(labels.len()))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_head_is_uniform() {
        let head = SoftmaxHead::<f64>::zeros(3, 4, None);
        let p = head.predict_proba(array![[1.0, -2.0, 3.0], [0.0, 0.0, 9.0]].view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax_rows(array![[100.0f64, 0.0], [1e4, -1e4], [-1e4, -1e4]]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[[0, 0]] - 1.0).abs() < 1e-15 && p[[0, 1]] < 1e-40);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
        assert_eq!(p[[2, 0]], 0.5);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = Array2::from_elem((5, 3), 1.0 / 3.0);
        let ce = cross_entropy(&uniform, &[0, 1, 2, 0, 1]).unwrap();
        assert!((ce - 3f64.ln()).abs() < 1e-12);

        let ce = cross_entropy(&array![[0.9, 0.1], [0.2, 0.8]], &[0, 1]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((ce - expected).abs() < 1e-15);
        assert!((ce - 0.164252).abs() < 1e-6);

        let perfect: f64 = cross_entropy(&array![[1.0, 0.0], [0.0, 1.0]], &[0, 1]).unwrap();
        assert!(perfect.abs() < 1e-11);

        let floored = cross_entropy(&array![[1.0, 0.0]], &[1]).unwrap();
        assert!((floored - 1e12f64.ln()).abs() < 1e-9);

        assert!(cross_entropy(&uniform, &[0, 1, 3, 0, 1]).is_err());
    }

    #[test]
    fn bias_gradient_on_zero_input() {
        let head = SoftmaxHead::<f64>::new(4, 3, None, 9).unwrap();
        let x = Array2::zeros((3, 4));
        let labels = [0, 2, 2];
        let (_, g) = head.loss_and_gradient(x.view(), &labels).unwrap();
        let p = head.predict_proba(x.view()).unwrap();
        for c in 0..3 {
            let hits = labels.iter().filter(|&&y| y == c).count() as f64;
            let expected = (p.column(c).sum() - hits) / 3.0;
            assert!((g.output().bias[c] - expected).abs() < 1e-15);
        }
        assert!(g.output().weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_checks() {
        let head = SoftmaxHead::<f64>::new(2, 3, Some(4), 0).unwrap();
        assert_eq!(head.n_params(), 2 * 4 + 4 + 4 * 3 + 3);
        assert!(matches!(
            head.predict_proba(Array2::zeros((1, 3)).view()),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
        assert!(head.predict_proba(array![[f64::NAN, 0.0]].view()).is_err());
        assert!(SoftmaxHead::<f64>::new(2, 3, Some(0), 0).is_err());
    }

    #[test]
    fn glorot_bounds_and_seed() {
        let a = SoftmaxHead::<f64>::new(10, 6, None, 3).unwrap();
        let b = SoftmaxHead::<f64>::new(10, 6, None, 3).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a.output().weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a, SoftmaxHead::<f64>::new(10, 6, None, 4).unwrap());
    }

    #[test]
    fn blob_round_trip() {
        for hidden in [None, Some(5)] {
            let head = SoftmaxHead::<f64>::new(3, 2, hidden, 1).unwrap();
            assert_eq!(SoftmaxHead::<f64>::from_bytes(&head.to_bytes()).unwrap(), head);
        }
        let mut bytes = SoftmaxHead::<f64>::zeros(1, 1, None).to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            SoftmaxHead::<f64>::from_bytes(&bytes),
            Err(FormatError::Truncated { .. })
        ));
    }
}
