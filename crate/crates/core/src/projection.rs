//! PCA projection of the feature space ahead of clustering.
//!
//! The basis comes from a one-sided Jacobi SVD of the centred data, run on
//! whichever of `X` or `X^T` has fewer columns. Ordering and signs are fixed
//! so that a given input always yields a bit-identical model.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::codec::{to_usize, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;

pub const PCA_MAGIC: &[u8; 4] = b"DPCA";
pub const PCA_VERSION: u32 = 1;

const MAX_SWEEPS: usize = 60;

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTarget {
    Components(usize),
    /// Smallest count whose variance reaches this fraction of the total.
    VarianceFraction(f64),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::VarianceFraction(0.95)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    mean: Array1<T>,
    /// `m x d`, orthonormal columns.
    components: Array2<T>,
    variances: Array1<T>,
    total_variance: T,
}

/// Result of the Jacobi SVD: singular values (descending) and the matching
/// right singular vectors as columns.
struct Spectrum<T> {
    singular: Vec<T>,
    vectors: Vec<Vec<T>>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn rotate_pair<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Hestenes one-sided Jacobi: rotates pairs of `cols` until they are
/// mutually orthogonal, applying the same rotations to `acc` when given.
fn orthogonalize_columns<T: Scalar>(cols: &mut [Vec<T>], mut acc: Option<&mut [Vec<T>]>) {
    let k = cols.len();
    if k < 2 {
        return;
    }
    let rows = cols[0].len();
    let tol = T::epsilon() * T::from_usize_lossy(rows.max(1)).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::c(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(cols, p, q, c, s);
                if let Some(acc) = acc.as_deref_mut() {
                    rotate_pair(acc, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Indices sorting `values` descending; equal values keep their order.
fn descending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite singular values"));
    order
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn zero_threshold<T: Scalar>(largest: T, n: usize, m: usize) -> T {
    largest * T::epsilon() * T::from_usize_lossy(n + m)
}

/// Right singular vectors of the `n x m` centred matrix. Wide input yields
/// `min(n - 1, m)` of them, padded with zero-variance directions.
fn svd_right<T: Scalar>(centred: ArrayView2<'_, T>) -> Spectrum<T> {
    let (n, m) = centred.dim();
    if n >= m {
        let mut cols: Vec<Vec<T>> = centred.columns().into_iter().map(|c| c.to_vec()).collect();
        let mut v: Vec<Vec<T>> = (0..m)
            .map(|j| (0..m).map(|i| if i == j { T::one() } else { T::zero() }).collect())
            .collect();
        orthogonalize_columns(&mut cols, Some(&mut v));
        let sigma: Vec<T> = cols.iter().map(|c| norm(c)).collect();
        let order = descending_order(&sigma);
        let largest = order.first().map_or(T::zero(), |&i| sigma[i]);
        let thresh = zero_threshold(largest, n, m);
        Spectrum {
            singular: order
                .iter()
                .map(|&i| if sigma[i] <= thresh { T::zero() } else { sigma[i] })
                .collect(),
            vectors: order.iter().map(|&i| v[i].clone()).collect(),
        }
    } else {
        // rows of the centred matrix are the columns of its transpose
        let mut cols: Vec<Vec<T>> = centred.rows().into_iter().map(|r| r.to_vec()).collect();
        orthogonalize_columns(&mut cols, None);
        let sigma: Vec<T> = cols.iter().map(|c| norm(c)).collect();
        let order = descending_order(&sigma);
        let largest = order.first().map_or(T::zero(), |&i| sigma[i]);
        let thresh = zero_threshold(largest, n, m);
        let mut singular = Vec::new();
        let mut vectors: Vec<Vec<T>> = Vec::new();
        for &i in &order {
            if sigma[i] <= thresh {
                break;
            }
            let mut u: Vec<T> = cols[i].iter().map(|&x| x / sigma[i]).collect();
            // one Gram-Schmidt pass cleans up residual non-orthogonality
            for prev in &vectors {
                let d = dot(&u, prev);
                u.iter_mut().zip(prev).for_each(|(x, &p)| *x -= d * p);
            }
            let len = norm(&u);
            u.iter_mut().for_each(|x| *x /= len);
            singular.push(sigma[i]);
            vectors.push(u);
        }
        // complete the basis from coordinate axes
        let wanted = (n.saturating_sub(1)).min(m).max(vectors.len());
        for axis in 0..m {
            if vectors.len() >= wanted {
                break;
            }
            let mut u: Vec<T> = (0..m).map(|i| if i == axis { T::one() } else { T::zero() }).collect();
            for _ in 0..2 {
                for prev in &vectors {
                    let d = dot(&u, prev);
                    u.iter_mut().zip(prev).for_each(|(x, &p)| *x -= d * p);
                }
            }
            let len = norm(&u);
            if len > T::c(1e-3) {
                u.iter_mut().for_each(|x| *x /= len);
                singular.push(T::zero());
                vectors.push(u);
            }
        }
        Spectrum { singular, vectors }
    }
}

/// Fits on the rows of `x`. Variances use the `n - 1` divisor.
pub fn fit_pca<T: Scalar>(x: &Array2<T>, target: PcaTarget) -> Result<PcaModel<T>> {
    let (n, m) = x.dim();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    if m == 0 {
        return Err(Error::invalid("PCA needs at least one feature"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }
    let limit = (n - 1).min(m);
    if let PcaTarget::Components(d) = target {
        if d == 0 || d > limit {
            return Err(Error::invalid(format!(
                "requested {d} components but at most min(n-1, m) = {limit} are available"
            )));
        }
    }
    if let PcaTarget::VarianceFraction(v) = target {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(format!("variance fraction must lie in (0, 1], got {v}")));
        }
    }

    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centred = x - &mean;
    let spectrum = svd_right(centred.view());
    let dof = T::from_usize_lossy(n - 1);
    let all_variances: Vec<T> = spectrum
        .singular
        .iter()
        .take(limit)
        .map(|&s| s * s / dof)
        .collect();
    let total_variance: T = all_variances.iter().copied().sum();

    let d = match target {
        PcaTarget::Components(d) => d,
        PcaTarget::VarianceFraction(v) => {
            if total_variance <= T::zero() {
                return Err(Error::invalid("data has zero variance; no component can be selected"));
            }
            let goal = T::c(v) * total_variance;
            let mut acc = T::zero();
            let mut d = 0;
            for &var in &all_variances {
                if var <= T::zero() {
                    break;
                }
                acc += var;
                d += 1;
                if acc >= goal {
                    break;
                }
            }
            d
        }
    };

    let mut components = Array2::zeros((m, d));
    for (j, vector) in spectrum.vectors.iter().take(d).enumerate() {
        let mut v = vector.clone();
        fix_sign(&mut v);
        for (i, &value) in v.iter().enumerate() {
            components[[i, j]] = value;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        variances: Array1::from_iter(all_variances.into_iter().take(d)),
        total_variance,
    })
}

impl<T: Scalar> PcaModel<T> {
    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<T> {
        &self.components
    }

    pub fn variances(&self) -> &Array1<T> {
        &self.variances
    }

    /// Sum of all sample-covariance eigenvalues, kept or not.
    pub fn total_variance(&self) -> T {
        self.total_variance
    }

    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_fraction(&self) -> T {
        if self.total_variance > T::zero() {
            self.variances.sum() / self.total_variance
        } else {
            T::one()
        }
    }

    /// `(x - mean) * components`.
    pub fn project(&self, x: &Array2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok((x - &self.mean).dot(&self.components))
    }

    /// `mean + coords * components^T`.
    pub fn reconstruct(&self, coords: &Array2<T>) -> Result<Array2<T>> {
        if coords.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                found: coords.ncols(),
            });
        }
        Ok(coords.dot(&self.components.t()) + &self.mean)
    }

    /// `DPCA` blob: magic, u32 version, u64 m, u64 d, f64 total variance,
    /// then mean (m), components (m x d row-major) and variances (d) as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(PCA_MAGIC);
        w.u32(PCA_VERSION);
        w.u64(self.input_dim() as u64);
        w.u64(self.output_dim() as u64);
        w.f64(self.total_variance.as_f64());
        for v in self.mean.iter().chain(self.components.iter()).chain(self.variances.iter()) {
            w.f64(v.as_f64());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic_and_version(PCA_MAGIC, PCA_VERSION)?;
        let m = to_usize(r.u64("input dim")?, "input dim")?;
        let d = to_usize(r.u64("output dim")?, "output dim")?;
        let total = T::c(r.f64("total variance")?);
        let conv = |v: Vec<f64>| v.into_iter().map(T::c).collect::<Vec<T>>();
        let mean = conv(r.f64s(m, "mean")?);
        let comps = conv(r.f64s(m.checked_mul(d).ok_or(FormatError::Truncated { what: "components" })?, "components")?);
        let vars = conv(r.f64s(d, "variances")?);
        r.expect_end()?;
        Ok(Self {
            mean: Array1::from(mean),
            components: Array2::from_shape_vec((m, d), comps).expect("length checked"),
            variances: Array1::from(vars),
            total_variance: total,
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // correlated columns so the spectrum is uneven
        let base = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let mix = Array2::from_shape_fn((m, m), |(i, j)| if i <= j { 1.0 / (1 + j - i) as f64 } else { 0.0 });
        base.dot(&mix)
    }

    fn covariance_trace(x: &Array2<f64>) -> f64 {
        let mean = x.mean_axis(Axis(0)).unwrap();
        let c = x - &mean;
        c.iter().map(|v| v * v).sum::<f64>() / (x.nrows() - 1) as f64
    }

    fn max_orthonormal_error(c: &Array2<f64>) -> f64 {
        let g = c.t().dot(c);
        let d = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[[i, j]] - want).abs());
            }
        }
        worst
    }

    #[test]
    fn axis_aligned_variance() {
        let x: Array2<f64> = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 0.1], [0.0, -0.1]];
        let p = fit_pca(&x, PcaTarget::Components(1)).unwrap();
        assert!((p.components()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p.components()[[1, 0]].abs() < 1e-12);
    }

    #[test]
    fn collinear_data_has_rank_one() {
        let x = Array2::from_shape_fn((100, 2), |(i, j)| {
            let t = i as f64 / 10.0 - 5.0;
            3.0 + if j == 0 { t } else { 2.0 * t }
        });
        let p = fit_pca(&x, PcaTarget::VarianceFraction(0.95)).unwrap();
        assert_eq!(p.output_dim(), 1);
        let full = fit_pca(&x, PcaTarget::Components(2)).unwrap();
        assert!(full.variances()[1].abs() < 1e-9);
        let dir = full.components().column(0).to_owned();
        let s5 = 5f64.sqrt();
        assert!((dir[0] - 1.0 / s5).abs() < 1e-12 && (dir[1] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction_both_branches() {
        for (n, m) in [(12, 4), (5, 9)] {
            let x = random(n, m, 3);
            let d = (n - 1).min(m);
            let p = fit_pca(&x, PcaTarget::Components(d)).unwrap();
            assert!(max_orthonormal_error(p.components()) <= 1e-8);
            let err = (&p.reconstruct(&p.project(&x).unwrap()).unwrap() - &x)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(err <= 1e-6, "{n}x{m}: {err}");
            assert!((p.variances().sum() - covariance_trace(&x)).abs() <= 1e-6);
        }
    }

    #[test]
    fn wide_data_completes_zero_variance_directions() {
        // n - 1 = 3 but rank 1
        let x = array![[1.0, 2.0, 0.0, 0.0, 1.0], [2.0, 4.0, 0.0, 0.0, 2.0], [3.0, 6.0, 0.0, 0.0, 3.0], [4.0, 8.0, 0.0, 0.0, 4.0]];
        let p = fit_pca(&x, PcaTarget::Components(3)).unwrap();
        assert!(max_orthonormal_error(p.components()) <= 1e-8);
        assert!(p.variances()[1] == 0.0 && p.variances()[2] == 0.0);
        assert_eq!(fit_pca(&x, PcaTarget::VarianceFraction(1.0)).unwrap().output_dim(), 1);
    }

    #[test]
    fn projected_variances_and_zero_mean() {
        let x = random(40, 6, 9);
        let p = fit_pca(&x, PcaTarget::Components(5)).unwrap();
        let z = p.project(&x).unwrap();
        for j in 0..5 {
            let col = z.column(j);
            let mean = col.mean().unwrap();
            assert!(mean.abs() <= 1e-9);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 39.0;
            assert!((var - p.variances()[j]).abs() <= 1e-6);
        }
        for w in p.variances().as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let row = p.project(&p.mean().clone().insert_axis(Axis(0))).unwrap();
        assert!(row.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sign_convention_and_determinism() {
        let x = random(30, 5, 1);
        let a = fit_pca(&x, PcaTarget::VarianceFraction(0.95)).unwrap();
        let b = fit_pca(&x, PcaTarget::VarianceFraction(0.95)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        for col in a.components().columns() {
            let top = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(top > 0.0);
        }
    }

    #[test]
    fn f32_instantiation() {
        let x = random(20, 3, 4).mapv(|v| v as f32);
        let p = fit_pca(&x, PcaTarget::Components(3)).unwrap();
        let g = p.components().t().dot(p.components());
        assert!((g[[0, 0]] - 1.0).abs() < 1e-5 && g[[0, 1]].abs() < 1e-5);
    }

    #[test]
    fn errors() {
        let x = random(5, 3, 2);
        assert!(fit_pca(&x.slice(s![..1, ..]).to_owned(), PcaTarget::Components(1)).is_err());
        assert!(fit_pca(&x, PcaTarget::Components(4)).is_err());
        assert!(fit_pca(&x, PcaTarget::Components(0)).is_err());
        assert!(fit_pca(&x, PcaTarget::VarianceFraction(0.0)).is_err());
        let mut bad = x.clone();
        bad[[0, 0]] = f64::INFINITY;
        assert!(fit_pca(&bad, PcaTarget::Components(1)).is_err());
        let p = fit_pca(&x, PcaTarget::Components(2)).unwrap();
        assert!(matches!(
            p.project(&Array2::zeros((2, 4))),
            Err(Error::DimensionMismatch { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn blob_round_trip() {
        let p = fit_pca(&random(10, 4, 8), PcaTarget::Components(2)).unwrap();
        let q = PcaModel::<f64>::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        let mut bytes = p.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(PcaModel::<f64>::from_bytes(&bytes), Err(FormatError::BadMagic { .. })));
    }
}
