//! Central finite-difference check of the analytic cross-entropy gradient.

use ndarray::ArrayView2;

use super::{cross_entropy, SoftmaxHead};
use crate::error::Result;
use crate::scalar::Scalar;

fn loss_at<T: Scalar>(head: &SoftmaxHead<T>, x: ArrayView2<'_, T>, labels: &[usize]) -> Result<T> {
    cross_entropy(&head.predict_proba(x)?, labels)
}

/// `(L(p + h) - L(p - h)) / 2h` for every parameter, flattened in
/// [`SoftmaxHead::params`] order.
pub fn finite_difference_gradient<T: Scalar>(
    head: &SoftmaxHead<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
    h: T,
) -> Result<Vec<T>> {
    let mut probe = head.clone();
    let shape: Vec<usize> = head.params().iter().map(|p| p.len()).collect();
    let mut out = Vec::with_capacity(head.n_params());
    for (slice, &len) in shape.iter().enumerate() {
        for i in 0..len {
            let original = probe.params()[slice][i];
            probe.params_mut()[slice][i] = original + h;
            let plus = loss_at(&probe, x, labels)?;
            probe.params_mut()[slice][i] = original - h;
            let minus = loss_at(&probe, x, labels)?;
            probe.params_mut()[slice][i] = original;
            out.push((plus - minus) / (h + h));
        }
    }
    Ok(out)
}

/// Largest `|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)` over all parameters.
pub fn gradient_check<T: Scalar>(head: &SoftmaxHead<T>, x: ArrayView2<'_, T>, labels: &[usize], h: T) -> Result<T> {
    let (_, analytic) = head.loss_and_gradient(x, labels)?;
    let numeric = finite_difference_gradient(head, x, labels, h)?;
    let floor = T::c(1e-8);
    Ok(analytic
        .params()
        .iter()
        .flat_map(|p| p.iter().copied())
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / floor.max(a.abs() + n.abs()))
        .fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(hidden: Option<usize>, seed: u64) -> (SoftmaxHead<f64>, Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = SoftmaxHead::new(4, 3, hidden, seed).unwrap();
        let x = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-1.0..1.0));
        let y = (0..8).map(|_| rng.random_range(0..3)).collect();
        (head, x, y)
    }

    #[test]
    fn linear_head_matches_finite_differences() {
        let (head, x, y) = instance(None, 1);
        assert!(gradient_check(&head, x.view(), &y, 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn hidden_head_matches_finite_differences() {
        let (head, x, y) = instance(Some(5), 2);
        assert!(gradient_check(&head, x.view(), &y, 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn step_sweep_stays_small() {
        let (head, x, y) = instance(Some(3), 3);
        for h in [1e-4, 1e-5, 1e-6] {
            assert!(gradient_check(&head, x.view(), &y, h).unwrap() <= 1e-3);
        }
    }

    #[test]
    fn zero_input_bias_gradient() {
        let head = SoftmaxHead::<f64>::new(2, 3, None, 4).unwrap();
        let x = Array2::zeros((4, 2));
        let y = [0, 1, 1, 2];
        let fd = finite_difference_gradient(&head, x.view(), &y, 1e-6).unwrap();
        // bias gradient of a zero-input linear head is mean(softmax(b) - onehot)
        let b = head.output().bias.clone();
        let e: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..3 {
            let hits = y.iter().filter(|&&l| l == c).count() as f64;
            let closed = e[c] / z - hits / 4.0;
            assert!((fd[6 + c] - closed).abs() < 1e-8);
        }
    }
}
