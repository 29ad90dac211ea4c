//! Labelled feature matrices: the original set with its class labels and the
//! decomposed set with sub-class labels plus the map back to the parents.

mod io;
mod manifest;
pub mod synthetic;

pub use io::{read_features, read_header, write_csv, write_features, FeatureHeader, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{load_manifest, ImageManifest, ManifestEntry};

use std::collections::HashSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered, duplicate-free class names. A name's position is its label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("label space must contain at least one class"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Feature matrix (rows are samples) with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T> {
    features: Array2<T>,
    labels: Vec<usize>,
    label_space: LabelSpace,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(features: Array2<T>, labels: Vec<usize>, label_space: LabelSpace) -> Result<Self> {
        let (n, m) = features.dim();
        if n == 0 || m == 0 {
            return Err(Error::invalid(format!("sample set must be non-empty, got {n}x{m}")));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_space.len()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                label_space.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            features,
            labels,
            label_space,
        })
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_space.len()
    }

    /// Row indices of every sample, grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(Vec::len).collect()
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.label_space.clone(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> SampleSet<U> {
        SampleSet {
            features: self.features.mapv(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan)),
            labels: self.labels.clone(),
            label_space: self.label_space.clone(),
        }
    }
}

/// Surjection from sub-class labels onto the original classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentMap {
    sub_names: Vec<String>,
    parent_of: Vec<usize>,
    parents: LabelSpace,
}

impl ParentMap {
    /// Sub-classes `<parent>_1 .. <parent>_k` for each parent, in parent
    /// order.
    pub fn from_counts(parents: LabelSpace, per_parent: &[usize]) -> Result<Self> {
        if per_parent.len() != parents.len() {
            return Err(Error::DimensionMismatch {
                expected: parents.len(),
                found: per_parent.len(),
            });
        }
        let mut sub_names = Vec::new();
        let mut parent_of = Vec::new();
        for (p, &k) in per_parent.iter().enumerate() {
            if k == 0 {
                return Err(Error::invalid(format!(
                    "class {:?} needs at least one sub-class",
                    parents.name(p)
                )));
            }
            for j in 1..=k {
                sub_names.push(format!("{}_{j}", parents.name(p)));
                parent_of.push(p);
            }
        }
        Self::new(sub_names, parent_of, parents)
    }

    pub fn new(sub_names: Vec<String>, parent_of: Vec<usize>, parents: LabelSpace) -> Result<Self> {
        if sub_names.len() != parent_of.len() {
            return Err(Error::DimensionMismatch {
                expected: sub_names.len(),
                found: parent_of.len(),
            });
        }
        LabelSpace::new(sub_names.iter().cloned())?;
        let mut covered = vec![false; parents.len()];
        for &p in &parent_of {
            if p >= parents.len() {
                return Err(Error::invalid(format!("parent index {p} out of range")));
            }
            covered[p] = true;
        }
        if let Some(p) = covered.iter().position(|c| !c) {
            return Err(Error::invalid(format!(
                "class {:?} has no sub-class",
                parents.name(p)
            )));
        }
        Ok(Self {
            sub_names,
            parent_of,
            parents,
        })
    }

    pub fn sub_names(&self) -> &[String] {
        &self.sub_names
    }

    pub fn n_sub(&self) -> usize {
        self.sub_names.len()
    }

    pub fn parent_of(&self, sub: usize) -> usize {
        self.parent_of[sub]
    }

    pub fn parent_indices(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn parents(&self) -> &LabelSpace {
        &self.parents
    }

    pub fn sub_label_space(&self) -> LabelSpace {
        LabelSpace::new(self.sub_names.iter().cloned()).expect("validated on construction")
    }

    /// Sub-class indices belonging to `parent`, ascending.
    pub fn children(&self, parent: usize) -> Vec<usize> {
        (0..self.n_sub()).filter(|&s| self.parent_of[s] == parent).collect()
    }
}

/// The relabelled set: same rows and features as its source, sub-class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedSet<T> {
    features: Array2<T>,
    sub_labels: Vec<usize>,
    parent_map: ParentMap,
}

impl<T: Scalar> DecomposedSet<T> {
    pub fn new(features: Array2<T>, sub_labels: Vec<usize>, parent_map: ParentMap) -> Result<Self> {
        if sub_labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: sub_labels.len(),
            });
        }
        if let Some(&bad) = sub_labels.iter().find(|&&s| s >= parent_map.n_sub()) {
            return Err(Error::invalid(format!("sub-class label {bad} out of range")));
        }
        Ok(Self {
            features,
            sub_labels,
            parent_map,
        })
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn sub_labels(&self) -> &[usize] {
        &self.sub_labels
    }

    pub fn parent_map(&self) -> &ParentMap {
        &self.parent_map
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Sub-labels mapped through the parent map.
    pub fn parent_labels(&self) -> Vec<usize> {
        self.sub_labels
            .iter()
            .map(|&s| self.parent_map.parent_of(s))
            .collect()
    }

    /// Reinterprets the sub-classes as ordinary classes, e.g. for writing
    /// a feature file.
    pub fn as_sample_set(&self) -> Result<SampleSet<T>> {
        SampleSet::new(
            self.features.clone(),
            self.sub_labels.clone(),
            self.parent_map.sub_label_space(),
        )
    }
}

/// Number of samples a class of size `n` contributes to the training side:
/// `round(fraction * n)` with halves rounded up, kept within `1..n`.
pub fn train_share(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Stratified shuffle split. Each class is shuffled with its own stream
/// derived from `seed` and cut at [`train_share`]; both sides keep the
/// original row order.
pub fn split<T: Scalar>(
    data: &SampleSet<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(SampleSet<T>, SampleSet<T>)> {
    let (train, test) = split_indices(data.labels(), data.label_space(), train_fraction, seed)?;
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Index form of [`split`], usable on anything labelled.
pub fn split_indices(
    labels: &[usize],
    space: &LabelSpace,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut groups = vec![Vec::new(); space.len()];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in groups.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {:?} has {} sample(s); splitting needs at least 2",
                space.name(class),
                members.len()
            )));
        }
        let cut = train_share(members.len(), train_fraction);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
