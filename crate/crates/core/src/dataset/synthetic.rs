//! Seeded 2-D Gaussian blob sets for demos and tests.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LabelSpace, SampleSet};
use crate::{Error, Result};

/// Blob centres on a circle: `blobs_per_class * classes` equally spaced
/// angles, with blob `b` of class `c` at angle index `c + b * classes`.
/// With two blobs per class, each class owns an opposite pair and the
/// class means coincide at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSpec {
    pub classes: usize,
    pub blobs_per_class: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            classes: 3,
            blobs_per_class: 2,
            radius: 5.0,
            sigma: 0.4,
        }
    }
}

impl RingSpec {
    pub fn centre(&self, class: usize, blob: usize) -> (f64, f64) {
        let total = (self.classes * self.blobs_per_class) as f64;
        let a = 2.0 * std::f64::consts::PI * (class + blob * self.classes) as f64 / total;
        (self.radius * a.cos(), self.radius * a.sin())
    }

    /// `per_class` points per class, split as evenly as possible over its
    /// blobs. Rows are grouped by class.
    pub fn sample(&self, per_class: usize, seed: u64) -> Result<SampleSet<f64>> {
        if self.classes == 0 || self.blobs_per_class == 0 {
            return Err(Error::invalid("ring needs at least one class and one blob"));
        }
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = per_class * self.classes;
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for c in 0..self.classes {
            for i in 0..per_class {
                let (cx, cy) = self.centre(c, i % self.blobs_per_class);
                let row = labels.len();
                x[[row, 0]] = cx + noise.sample(&mut rng);
                x[[row, 1]] = cy + noise.sample(&mut rng);
                labels.push(c);
            }
        }
        let space = LabelSpace::new((0..self.classes).map(|c| format!("class{c}")))?;
        SampleSet::new(x, labels, space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_pairs_share_a_class() {
        let spec = RingSpec::default();
        for c in 0..3 {
            let (a, b) = (spec.centre(c, 0), spec.centre(c, 1));
            assert!((a.0 + b.0).abs() < 1e-12 && (a.1 + b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_and_balanced() {
        let spec = RingSpec::default();
        let a = spec.sample(10, 3).unwrap();
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
        assert_eq!(a.features(), spec.sample(10, 3).unwrap().features());
        assert_ne!(a.features(), spec.sample(10, 4).unwrap().features());
    }
}
