//! Confusion matrices and the accuracy / sensitivity / specificity family of
//! rates, computed exactly as ratios of counts.
//!
//! Rows of a [`ConfusionMatrix`] are true classes, columns are predictions.
//! A rate whose denominator is zero is reported as undefined rather than 0.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Serialize, Serializer};

use crate::dataset::LabelSpace;
use crate::{Error, Result};

pub type Rate = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    label_space: LabelSpace,
}

impl ConfusionMatrix {
    pub fn zeros(label_space: LabelSpace) -> Self {
        let c = label_space.len();
        ConfusionMatrix { counts: vec![0; c * c], label_space }
    }

    /// Builds a matrix from row-major nested counts.
    pub fn from_rows(rows: &[Vec<u64>], label_space: LabelSpace) -> Result<Self> {
        let c = label_space.len();
        if rows.len() != c {
            return Err(Error::DimensionMismatch { expected: c, found: rows.len() });
        }
        let mut counts = Vec::with_capacity(c * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, found: row.len() });
            }
            counts.extend_from_slice(row);
        }
        Ok(ConfusionMatrix { counts, label_space })
    }

    pub fn n_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes() + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        let c = self.n_classes();
        if c == 0 {
            return Vec::new();
        }
        self.counts.chunks(c).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.n_classes()).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n_classes()).map(|i| self.get(i, j)).sum()
    }

    /// Same counts with the roles of truth and prediction exchanged.
    pub fn transposed(&self) -> Self {
        let c = self.n_classes();
        let mut counts = vec![0; c * c];
        for i in 0..c {
            for j in 0..c {
                counts[j * c + i] = self.get(i, j);
            }
        }
        ConfusionMatrix { counts, label_space: self.label_space.clone() }
    }

    pub fn per_class_counts(&self, i: usize) -> Result<ClassCounts> {
        let c = self.n_classes();
        if i >= c {
            return Err(Error::invalid(format!("class index {i} out of range for {c} classes")));
        }
        let tp = self.get(i, i);
        let fn_ = self.row_sum(i) - tp;
        let fp = self.col_sum(i) - tp;
        let tn = self.total() - tp - fn_ - fp;
        Ok(ClassCounts { tp, tn, fp, fn_ })
    }
}

/// Tallies true and predicted labels into a matrix over `label_space`.
pub fn confusion(truth: &[usize], predicted: &[usize], label_space: &LabelSpace) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: predicted.len() });
    }
    let c = label_space.len();
    let mut m = ConfusionMatrix::zeros(label_space.clone());
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= c || p >= c {
            return Err(Error::invalid(format!("label {} out of range for {c} classes", t.max(p))));
        }
        m.counts[t * c + p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> Option<Rate> {
    (den != 0).then(|| Ratio::new(num, den))
}

pub fn rate_to_f64(r: Rate) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn ser_rate<S: Serializer>(r: &Option<Rate>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_f64(rate_to_f64(*r)),
        None => s.serialize_str(UNDEFINED),
    }
}

fn ser_exact<S: Serializer>(r: &Rate, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(rate_to_f64(*r))
}

fn ser_mean<S: Serializer>(r: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str(UNDEFINED),
    }
}

pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    #[serde(flatten)]
    pub counts: ClassCounts,
    #[serde(serialize_with = "ser_rate")]
    pub accuracy: Option<Rate>,
    #[serde(serialize_with = "ser_rate")]
    pub sensitivity: Option<Rate>,
    #[serde(serialize_with = "ser_rate")]
    pub specificity: Option<Rate>,
    #[serde(serialize_with = "ser_rate")]
    pub precision: Option<Rate>,
}

/// Headline rates for one designated positive class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositiveMetrics {
    pub class: String,
    pub index: usize,
    #[serde(serialize_with = "ser_rate")]
    pub sensitivity: Option<Rate>,
    #[serde(serialize_with = "ser_rate")]
    pub specificity: Option<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: u64,
    pub correct: u64,
    #[serde(serialize_with = "ser_exact")]
    pub accuracy: Rate,
    pub positive: PositiveMetrics,
    /// Mean over classes whose rate is defined.
    #[serde(serialize_with = "ser_mean")]
    pub macro_sensitivity: Option<f64>,
    #[serde(serialize_with = "ser_mean")]
    pub macro_specificity: Option<f64>,
    pub classes: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

fn defined_mean(rates: impl Iterator<Item = Option<Rate>>) -> Option<f64> {
    let defined: Vec<f64> = rates.flatten().map(rate_to_f64).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn metrics(m: &ConfusionMatrix, positive: usize) -> Result<MetricsReport> {
    let n = m.total();
    if n == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let c = m.n_classes();
    if positive >= c {
        return Err(Error::invalid(format!("positive class {positive} out of range for {c} classes")));
    }
    let mut classes = Vec::with_capacity(c);
    for i in 0..c {
        let k = m.per_class_counts(i)?;
        classes.push(ClassMetrics {
            name: m.label_space().name(i).to_string(),
            counts: k,
            accuracy: ratio(k.tp + k.tn, n),
            sensitivity: ratio(k.tp, k.tp + k.fn_),
            specificity: ratio(k.tn, k.tn + k.fp),
            precision: ratio(k.tp, k.tp + k.fp),
        });
    }
    let pos = &classes[positive];
    Ok(MetricsReport {
        n,
        correct: m.trace(),
        accuracy: Ratio::new(m.trace(), n),
        positive: PositiveMetrics {
            class: pos.name.clone(),
            index: positive,
            sensitivity: pos.sensitivity,
            specificity: pos.specificity,
        },
        macro_sensitivity: defined_mean(classes.iter().map(|k| k.sensitivity)),
        macro_specificity: defined_mean(classes.iter().map(|k| k.specificity)),
        classes,
        confusion: m.rows(),
    })
}

fn pct(r: Option<Rate>) -> String {
    r.map_or_else(|| UNDEFINED.to_string(), |r| format!("{:.2}", 100.0 * rate_to_f64(r)))
}

fn pct_f(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text report: a one-row `ACC / SN / SP` table for `method`, then
    /// per-class counts and rates.
    pub fn to_table(&self, method: &str) -> String {
        let mut out = String::new();
        let acc = pct(Some(self.accuracy));
        let sn = pct(self.positive.sensitivity);
        let sp = pct(self.positive.specificity);
        let w = method.len().max("Method".len());
        let _ = writeln!(out, "{:<w$}  {:>9}  {:>9}  {:>9}", "Method", "ACC (%)", "SN (%)", "SP (%)");
        let _ = writeln!(out, "{:<w$}  {:>9}  {:>9}  {:>9}", method, acc, sn, sp);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "positive class: {}; macro SN {} %, macro SP {} %; {} of {} correct",
            self.positive.class,
            pct_f(self.macro_sensitivity),
            pct_f(self.macro_specificity),
            self.correct,
            self.n
        );
        let _ = writeln!(out);
        let nw = self.classes.iter().map(|k| k.name.len()).max().unwrap_or(0).max("Class".len());
        let _ = writeln!(
            out,
            "{:<nw$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>9}  {:>9}  {:>9}  {:>9}",
            "Class", "TP", "TN", "FP", "FN", "ACC (%)", "SN (%)", "SP (%)", "PR (%)"
        );
        for k in &self.classes {
            let _ = writeln!(
                out,
                "{:<nw$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>9}  {:>9}  {:>9}  {:>9}",
                k.name,
                k.counts.tp,
                k.counts.tn,
                k.counts.fp,
                k.counts.fn_,
                pct(k.accuracy),
                pct(k.sensitivity),
                pct(k.specificity),
                pct(k.precision)
            );
        }
        out
    }
}
