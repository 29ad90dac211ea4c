//! Class decomposition and composition.
//!
//! Each class is clustered on its own in the PCA space and every cluster
//! becomes a sub-class `<class>_<j>`. After classification the sub-class
//! probabilities are folded back onto the parent classes.

mod kmeans;

pub use kmeans::{cluster_means, inertia_of, kmeans_fit, nearest, squared_distance, KMeansModel};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::dataset::{DecomposedSet, LabelSpace, ParentMap, SampleSet};
use crate::error::{Error, Result};
use crate::projection::PcaModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionConfig {
    pub k_per_class: usize,
    /// Per-class `k` keyed by class name, overriding `k_per_class`.
    pub k_overrides: BTreeMap<String, usize>,
    pub max_iter: usize,
    /// Relative inertia improvement below which Lloyd iterations stop.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Polish every Lloyd run with single-point exchanges that lower the
    /// inertia, escaping Lloyd fixed points that are not exchange-stable.
    pub exchange: bool,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            k_per_class: 2,
            k_overrides: BTreeMap::new(),
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
            restarts: 8,
            exchange: true,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_per_class == 0 || self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "k_per_class, max_iter and restarts must all be positive".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if let Some((name, _)) = self.k_overrides.iter().find(|(_, &k)| k == 0) {
            return Err(Error::Config(format!("k override for {name:?} must be positive")));
        }
        Ok(())
    }

    pub fn k_for(&self, class: &str) -> usize {
        self.k_overrides.get(class).copied().unwrap_or(self.k_per_class)
    }
}

/// Clustering of one parent class, with centroids ordered like its
/// sub-classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassClustering<T> {
    pub class: usize,
    pub model: KMeansModel<T>,
    /// Sub-class index (global) of each centroid row.
    pub sub_classes: Vec<usize>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<T> {
    pub set: DecomposedSet<T>,
    pub clusterings: Vec<ClassClustering<T>>,
}

impl<T: Scalar> Decomposition<T> {
    pub fn parent_map(&self) -> &ParentMap {
        self.set.parent_map()
    }
}

/// Splits every class of `data` into clusters found in the space of `pca`.
/// Within a class, sub-class `_1` is the largest cluster (ties to the lower
/// cluster index). Features in the result are the original, unprojected
/// ones.
pub fn decompose<T: Scalar>(data: &SampleSet<T>, pca: &PcaModel<T>, cfg: &DecompositionConfig) -> Result<Decomposition<T>> {
    cfg.validate()?;
    let projected = pca.project(data.features())?;
    let space = data.label_space();
    let groups = data.indices_by_class();

    let mut ks = Vec::with_capacity(space.len());
    for (c, members) in groups.iter().enumerate() {
        let k = cfg.k_for(space.name(c));
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {:?} has {} samples, fewer than k = {k}",
                space.name(c),
                members.len()
            )));
        }
        ks.push(k);
    }
    let parent_map = ParentMap::from_counts(space.clone(), &ks)?;

    let mut sub_labels = vec![0usize; data.n_samples()];
    let mut clusterings = Vec::with_capacity(space.len());
    let mut offset = 0;
    for (c, members) in groups.iter().enumerate() {
        let k = ks[c];
        let local = projected.select(Axis(0), members);
        let class_cfg = DecompositionConfig {
            seed: cfg.seed.wrapping_add(1_000 * c as u64),
            ..cfg.clone()
        };
        let (model, assignment) = kmeans_fit(local.view(), k, &class_cfg)?;
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let mut rank = vec![0usize; k];
        for (r, &cluster) in order.iter().enumerate() {
            rank[cluster] = r;
        }
        for (&row, &a) in members.iter().zip(&assignment) {
            sub_labels[row] = offset + rank[a];
        }
        let centroids = model.centroids().select(Axis(0), &order);
        clusterings.push(ClassClustering {
            class: c,
            model: KMeansModel::from_parts(
                centroids,
                model.inertia(),
                model.iterations_run(),
                model.inertia_history().to_vec(),
                model.converged(),
            ),
            sub_classes: (offset..offset + k).collect(),
            sizes: order.iter().map(|&j| sizes[j]).collect(),
        });
        offset += k;
    }
    Ok(Decomposition {
        set: DecomposedSet::new(data.features().clone(), sub_labels, parent_map)?,
        clusterings,
    })
}

/// Sub-labels for samples with known parent labels (e.g. a held-out set):
/// the nearest centroid among the sample's own class.
pub fn assign_subclasses<T: Scalar>(
    data: &SampleSet<T>,
    pca: &PcaModel<T>,
    decomposition: &Decomposition<T>,
) -> Result<DecomposedSet<T>> {
    let pm = decomposition.parent_map();
    if data.label_space() != pm.parents() {
        return Err(Error::invalid("label space differs from the decomposed training set"));
    }
    let projected = pca.project(data.features())?;
    let mut sub_labels = Vec::with_capacity(data.n_samples());
    for (row, &label) in projected.rows().into_iter().zip(data.labels()) {
        let cl = &decomposition.clusterings[label];
        let (j, _) = nearest(row, cl.model.centroids().view());
        sub_labels.push(cl.sub_classes[j]);
    }
    DecomposedSet::new(data.features().clone(), sub_labels, pm.clone())
}

/// Rule for turning sub-class probabilities into a parent prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComposeMode {
    /// Parent probability is the sum over its sub-classes.
    #[default]
    SumProbs,
    /// Parent of the most probable sub-class.
    ArgmaxMap,
}

impl std::str::FromStr for ComposeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_probs" => Ok(ComposeMode::SumProbs),
            "argmax_map" => Ok(ComposeMode::ArgmaxMap),
            other => Err(Error::Config(format!(
                "unknown compose mode {other:?} (expected sum_probs or argmax_map)"
            ))),
        }
    }
}

impl std::fmt::Display for ComposeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ComposeMode::SumProbs => "sum_probs",
            ComposeMode::ArgmaxMap => "argmax_map",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composed<T> {
    pub parent_probs: Array2<T>,
    pub predictions: Vec<usize>,
}

fn argmax<T: Scalar>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Folds `n x c'` sub-class probabilities onto the parents of `pm`.
///
/// Both modes report block sums as parent probabilities (rows renormalised
/// to 1); they differ only in how the prediction is chosen. Ties resolve to
/// the lowest index.
pub fn compose<T: Scalar>(sub_probs: &Array2<T>, pm: &ParentMap, mode: ComposeMode) -> Result<Composed<T>> {
    if sub_probs.ncols() != pm.n_sub() {
        return Err(Error::DimensionMismatch {
            expected: pm.n_sub(),
            found: sub_probs.ncols(),
        });
    }
    let tol = T::c(1e-6);
    let c = pm.parents().len();
    let mut parent_probs = Array2::<T>::zeros((sub_probs.nrows(), c));
    let mut predictions = Vec::with_capacity(sub_probs.nrows());
    for (i, row) in sub_probs.rows().into_iter().enumerate() {
        let total: T = row.iter().copied().sum();
        if row.iter().any(|v| !v.is_finite()) || (total - T::one()).abs() > tol {
            return Err(Error::invalid(format!("row {i} sums to {total}, not 1")));
        }
        let mut out = parent_probs.row_mut(i);
        for (s, &p) in row.iter().enumerate() {
            out[pm.parent_of(s)] += p;
        }
        let sum: T = out.iter().copied().sum();
        out.mapv_inplace(|v| v / sum);
        predictions.push(match mode {
            ComposeMode::SumProbs => argmax(out.iter().copied()),
            ComposeMode::ArgmaxMap => pm.parent_of(argmax(row.iter().copied())),
        });
    }
    Ok(Composed {
        parent_probs,
        predictions,
    })
}

/// Audit sidecar: one `<sample-index>,<class>,<subclass>` line per sample.
pub fn sidecar_text<T: Scalar>(set: &DecomposedSet<T>) -> String {
    let pm = set.parent_map();
    let mut out = String::new();
    for (i, &s) in set.sub_labels().iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", pm.parents().name(pm.parent_of(s)), pm.sub_names()[s]);
    }
    out
}

pub fn write_sidecar<T: Scalar>(set: &DecomposedSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, sidecar_text(set)).map_err(|e| Error::io(path, e))
}

/// Rebuilds the parent map and per-sample sub-labels from a sidecar, given
/// the parent label space and the sub-class order.
pub fn parse_sidecar(text: &str, parents: &LabelSpace, sub_names: &[String]) -> Result<(ParentMap, Vec<usize>)> {
    let mut parent_of: Vec<Option<usize>> = vec![None; sub_names.len()];
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::invalid(format!("sidecar line {}: {line:?}", lineno + 1));
        let mut parts = line.splitn(3, ',');
        let (idx, class, sub) = (
            parts.next().ok_or_else(bad)?,
            parts.next().ok_or_else(bad)?,
            parts.next().ok_or_else(bad)?,
        );
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        if idx != labels.len() {
            return Err(bad());
        }
        let p = parents.index_of(class).ok_or_else(bad)?;
        let s = sub_names.iter().position(|n| n == sub).ok_or_else(bad)?;
        match parent_of[s] {
            Some(q) if q != p => return Err(bad()),
            _ => parent_of[s] = Some(p),
        }
        labels.push(s);
    }
    let parent_of = parent_of
        .into_iter()
        .enumerate()
        .map(|(s, p)| p.ok_or_else(|| Error::invalid(format!("sub-class {:?} never appears in sidecar", sub_names[s]))))
        .collect::<Result<Vec<_>>>()?;
    Ok((ParentMap::new(sub_names.to_vec(), parent_of, parents.clone())?, labels))
}
