//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DecompositionConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel<T> {
    centroids: Array2<T>,
    inertia: T,
    iterations_run: usize,
    inertia_history: Vec<T>,
    converged: bool,
}

impl<T: Scalar> KMeansModel<T> {
    pub(crate) fn from_parts(
        centroids: Array2<T>,
        inertia: T,
        iterations_run: usize,
        inertia_history: Vec<T>,
        converged: bool,
    ) -> Self {
        Self {
            centroids,
            inertia,
            iterations_run,
            inertia_history,
            converged,
        }
    }

    /// `k x d`.
    pub fn centroids(&self) -> &Array2<T> {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Sum of squared euclidean distances to the assigned centroids.
    pub fn inertia(&self) -> T {
        self.inertia
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    /// Inertia after each centroid update of the winning restart.
    pub fn inertia_history(&self) -> &[T] {
        &self.inertia_history
    }

    /// True when the run stopped because assignments stopped changing or the
    /// improvement fell below `tol`, rather than on `max_iter`.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Nearest centroid for each row.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Vec<usize>> {
        if x.ncols() != self.centroids.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.centroids.ncols(),
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| nearest(r, self.centroids.view()).0)
            .collect())
    }
}

pub fn squared_distance<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Closest centroid and its squared distance; ties go to the lower index.
pub fn nearest<T: Scalar>(point: ArrayView1<'_, T>, centroids: ArrayView2<'_, T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia_of<T: Scalar>(x: ArrayView2<'_, T>, centroids: ArrayView2<'_, T>, assignment: &[usize]) -> T {
    x.rows()
        .into_iter()
        .zip(assignment)
        .map(|(r, &a)| squared_distance(r, centroids.row(a)))
        .sum()
}

/// Per-cluster means; empty clusters keep their previous centroid.
pub fn cluster_means<T: Scalar>(x: ArrayView2<'_, T>, assignment: &[usize], previous: &Array2<T>) -> Array2<T> {
    let (k, d) = previous.dim();
    let mut sums = Array2::<T>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &a) in x.rows().into_iter().zip(assignment) {
        let mut s = sums.row_mut(a);
        s += &row;
        counts[a] += 1;
    }
    for (j, &count) in counts.iter().enumerate() {
        if count == 0 {
            sums.row_mut(j).assign(&previous.row(j));
        } else {
            let inv = T::one() / T::from_usize_lossy(count);
            sums.row_mut(j).mapv_inplace(|v| v * inv);
        }
    }
    sums
}

fn plus_plus<T: Scalar>(x: ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| squared_distance(r, x.row(chosen[0])).as_f64())
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a centroid
            Err(_) => (0..n).find(|i| !chosen.contains(i)).expect("k <= n"),
        };
        chosen.push(next);
        for (i, r) in x.rows().into_iter().enumerate() {
            let d = squared_distance(r, x.row(next)).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut centroids = Array2::zeros((k, x.ncols()));
    for (j, &i) in chosen.iter().enumerate() {
        centroids.row_mut(j).assign(&x.row(i));
    }
    centroids
}

/// Gives every empty cluster the point that is currently farthest from its
/// own centroid, taken from a cluster that can spare it.
fn repair_empty<T: Scalar>(x: ArrayView2<'_, T>, centroids: &mut Array2<T>, assignment: &mut [usize]) -> bool {
    let k = centroids.nrows();
    let mut moved = false;
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut donor: Option<(usize, T)> = None;
        for (i, r) in x.rows().into_iter().enumerate() {
            let a = assignment[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(r, centroids.row(a));
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        if let Some((i, _)) = donor {
            sizes[assignment[i]] -= 1;
            assignment[i] = j;
            sizes[j] = 1;
            centroids.row_mut(j).assign(&x.row(i));
            moved = true;
        }
    }
    moved
}

struct Run<T> {
    centroids: Array2<T>,
    assignment: Vec<usize>,
    inertia: T,
    history: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn assign_all<T: Scalar>(x: ArrayView2<'_, T>, centroids: &Array2<T>, assignment: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, r) in x.rows().into_iter().enumerate() {
        let (j, _) = nearest(r, centroids.view());
        if assignment[i] != j {
            assignment[i] = j;
            changed = true;
        }
    }
    changed
}

/// Lloyd iterations from `centroids`, spending at most `budget` of them.
/// Inertia after every mean update is appended to `history`.
fn lloyd<T: Scalar>(
    x: ArrayView2<'_, T>,
    mut centroids: Array2<T>,
    cfg: &DecompositionConfig,
    budget: usize,
    history: &mut Vec<T>,
) -> (Array2<T>, Vec<usize>, usize, bool) {
    let n = x.nrows();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut converged = false;
    let tol = T::c(cfg.tol);
    let start = history.len();
    while iterations < budget {
        let mut changed = assign_all(x, &centroids, &mut assignment);
        changed |= repair_empty(x, &mut centroids, &mut assignment);
        if !changed && iterations > 0 {
            converged = true;
            break;
        }
        iterations += 1;
        centroids = cluster_means(x, &assignment, &centroids);
        let inertia = inertia_of(x, centroids.view(), &assignment);
        let small_gain = history.len() > start
            && history.last().is_some_and(|&prev: &T| prev > T::zero() && (prev - inertia) / prev < tol);
        history.push(inertia);
        if inertia == T::zero() {
            converged = true;
            break;
        }
        if small_gain {
            // one last Lloyd step so labels and centroids agree
            if assign_all(x, &centroids, &mut assignment) {
                repair_empty(x, &mut centroids, &mut assignment);
                centroids = cluster_means(x, &assignment, &centroids);
                history.push(inertia_of(x, centroids.view(), &assignment));
            }
            converged = true;
            break;
        }
    }
    if iterations == 0 {
        assign_all(x, &centroids, &mut assignment);
    }
    (centroids, assignment, iterations, converged)
}

/// One sweep of single-point moves. A point leaves cluster `a` for `b`
/// when `n_b / (n_b + 1) d(x, c_b) < n_a / (n_a - 1) d(x, c_a)`, which
/// strictly lowers the inertia. Centroids are recomputed exactly after a
/// sweep with moves.
fn exchange_sweep<T: Scalar>(x: ArrayView2<'_, T>, centroids: &mut Array2<T>, assignment: &mut [usize]) -> bool {
    let k = centroids.nrows();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    let guard = T::one() - T::epsilon() * T::c(64.0);
    let mut moved = false;
    for (i, row) in x.rows().into_iter().enumerate() {
        let a = assignment[i];
        if sizes[a] < 2 {
            continue;
        }
        let na = T::from_usize_lossy(sizes[a]);
        let leave = na / (na - T::one()) * squared_distance(row, centroids.row(a));
        let mut best: Option<(usize, T)> = None;
        for b in (0..k).filter(|&b| b != a) {
            let nb = T::from_usize_lossy(sizes[b]);
            let join = nb / (nb + T::one()) * squared_distance(row, centroids.row(b));
            if best.is_none_or(|(_, c)| join < c) {
                best = Some((b, join));
            }
        }
        let Some((b, join)) = best else { continue };
        if join >= leave * guard {
            continue;
        }
        let nb = T::from_usize_lossy(sizes[b]);
        let mut ca = centroids.row_mut(a);
        ca.zip_mut_with(&row, |c, &v| *c = (*c * na - v) / (na - T::one()));
        let mut cb = centroids.row_mut(b);
        cb.zip_mut_with(&row, |c, &v| *c = (*c * nb + v) / (nb + T::one()));
        sizes[a] -= 1;
        sizes[b] += 1;
        assignment[i] = b;
        moved = true;
    }
    if moved {
        *centroids = cluster_means(x, assignment, centroids);
    }
    moved
}

fn single_run<T: Scalar>(x: ArrayView2<'_, T>, seeds: Array2<T>, cfg: &DecompositionConfig) -> Run<T> {
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut centroids = seeds;
    loop {
        let (c, mut assignment, used, converged) = lloyd(x, centroids, cfg, cfg.max_iter - iterations, &mut history);
        iterations += used;
        let mut c = c;
        if !cfg.exchange || iterations >= cfg.max_iter || !exchange_sweep(x, &mut c, &mut assignment) {
            let inertia = inertia_of(x, c.view(), &assignment);
            return Run {
                centroids: c,
                assignment,
                inertia,
                history,
                iterations,
                converged,
            };
        }
        iterations += 1;
        history.push(inertia_of(x, c.view(), &assignment));
        centroids = c;
    }
}

/// Best of `cfg.restarts` seeded runs; ties keep the earlier restart.
pub fn kmeans_fit<T: Scalar>(x: ArrayView2<'_, T>, k: usize, cfg: &DecompositionConfig) -> Result<(KMeansModel<T>, Vec<usize>)> {
    cfg.validate()?;
    let n = x.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} available points")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input"));
    }
    let mut best: Option<Run<T>> = None;
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let run = single_run(x, plus_plus(x, k, &mut rng), cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("restarts >= 1");
    Ok((
        KMeansModel {
            centroids: run.centroids,
            inertia: run.inertia,
            iterations_run: run.iterations,
            inertia_history: run.history,
            converged: run.converged,
        },
        run.assignment,
    ))
}
