//! Datasets, domain sequences, synthetic generators and file IO.
//!
//! Evaluation labels of the unlabeled domains live in [`HeldOutLabels`],
//! which no training entry point accepts: training code only ever sees a
//! [`DomainSequence`].

mod io;
mod synthetic;

pub use io::{load_dataset, load_manifest, save_dataset, save_manifest, DatasetFile, ManifestEntry, SequenceManifest};
pub use synthetic::{make_gaussian_blobs, make_rotating_sequence, make_two_moons, rotate, rotate_features, Generator};

use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance for matching time indices.
pub const TIME_EPS: f64 = 1e-9;

fn check_features<F: Scalar>(features: &Mat<F>, what: &str) -> Result<()> {
    if features.rows() == 0 || features.cols() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty feature matrix")));
    }
    if let Some(k) = features.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: row {} column {}", k / features.cols(), k % features.cols())));
    }
    Ok(())
}

/// Feature matrix with class labels in `1..=class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<F> {
    features: Mat<F>,
    labels: Vec<u32>,
    class_count: usize,
    time_index: F,
}

impl<F: Scalar> LabeledDataset<F> {
    /// Class count is taken from the largest label.
    pub fn new(features: Mat<F>, labels: Vec<u32>, time_index: F) -> Result<Self> {
        let c = labels.iter().copied().max().unwrap_or(0) as usize;
        Self::with_class_count(features, labels, c, time_index)
    }

    pub fn with_class_count(features: Mat<F>, labels: Vec<u32>, class_count: usize, time_index: F) -> Result<Self> {
        check_features(&features, "labeled dataset")?;
        if labels.len() != features.rows() {
            return Err(Error::shape("labels", features.rows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y as usize > class_count) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 1..={class_count}")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
            time_index,
        })
    }

    pub fn features(&self) -> &Mat<F> {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn time_index(&self) -> F {
        self.time_index
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_time_index(mut self, t: F) -> Self {
        self.time_index = t;
        self
    }

    pub fn rotated(&self, angle: F) -> Result<Self> {
        Ok(LabeledDataset {
            features: rotate_features(&self.features, angle)?,
            ..self.clone()
        })
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDomain<F> {
        UnlabeledDomain {
            features: self.features.clone(),
            time_index: self.time_index,
        }
    }

    /// Fraction of samples in the most frequent class.
    pub fn majority_fraction(&self) -> f64 {
        let mut counts = vec![0usize; self.class_count + 1];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDomain<F> {
    pub features: Mat<F>,
    pub time_index: F,
}

impl<F: Scalar> UnlabeledDomain<F> {
    pub fn new(features: Mat<F>, time_index: F) -> Result<Self> {
        check_features(&features, "unlabeled domain")?;
        Ok(UnlabeledDomain { features, time_index })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Labeled source at index 1 followed by unlabeled domains with strictly
/// ascending time indices; the last index is the horizon K.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSequence<F> {
    source: LabeledDataset<F>,
    unlabeled: Vec<UnlabeledDomain<F>>,
}

impl<F: Scalar> DomainSequence<F> {
    pub fn new(source: LabeledDataset<F>, unlabeled: Vec<UnlabeledDomain<F>>) -> Result<Self> {
        if (source.time_index() - F::one()).abs() > F::of(TIME_EPS) {
            return Err(Error::InvalidArgument(format!("source time index must be 1, got {}", source.time_index())));
        }
        let d = source.dim();
        let mut prev = source.time_index();
        for u in &unlabeled {
            if u.features.cols() != d {
                return Err(Error::shape("domain feature dimension", d, u.features.cols()));
            }
            if !(u.time_index > prev) {
                return Err(Error::InvalidArgument(format!(
                    "time indices must ascend strictly: {} after {}",
                    u.time_index, prev
                )));
            }
            prev = u.time_index;
        }
        Ok(DomainSequence { source, unlabeled })
    }

    pub fn source(&self) -> &LabeledDataset<F> {
        &self.source
    }

    pub fn unlabeled(&self) -> &[UnlabeledDomain<F>] {
        &self.unlabeled
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn class_count(&self) -> usize {
        self.source.class_count()
    }

    /// K, the index of the last domain.
    pub fn horizon(&self) -> F {
        self.unlabeled.last().map_or(self.source.time_index(), |u| u.time_index)
    }

    /// The index set T, source first.
    pub fn time_indices(&self) -> Vec<F> {
        std::iter::once(self.source.time_index())
            .chain(self.unlabeled.iter().map(|u| u.time_index))
            .collect()
    }

    /// Every domain's features (source included) with its time index.
    pub fn all_features(&self) -> Vec<(F, &Mat<F>)> {
        std::iter::once((self.source.time_index(), self.source.features()))
            .chain(self.unlabeled.iter().map(|u| (u.time_index, &u.features)))
            .collect()
    }

    /// Features of the domain at `t`, if one exists within tolerance.
    pub fn features_at(&self, t: F) -> Option<&Mat<F>> {
        self.all_features()
            .into_iter()
            .find(|(ti, _)| (*ti - t).abs() <= F::of(TIME_EPS))
            .map(|(_, m)| m)
    }

    pub fn target(&self) -> &Mat<F> {
        self.unlabeled.last().map_or(self.source.features(), |u| &u.features)
    }

    /// Keeps the source and the unlabeled domains accepted by `keep`.
    pub fn filter_unlabeled(&self, keep: impl Fn(F) -> bool) -> Self {
        DomainSequence {
            source: self.source.clone(),
            unlabeled: self.unlabeled.iter().filter(|u| keep(u.time_index)).cloned().collect(),
        }
    }
}

/// Evaluation-only labels, parallel to [`DomainSequence::unlabeled`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeldOutLabels {
    labels: Vec<Option<Vec<u32>>>,
}

impl HeldOutLabels {
    pub fn new(labels: Vec<Option<Vec<u32>>>) -> Self {
        HeldOutLabels { labels }
    }

    pub fn get(&self, i: usize) -> Option<&[u32]> {
        self.labels.get(i).and_then(|l| l.as_deref())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A domain sequence bundled with its evaluation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSequence<F> {
    pub sequence: DomainSequence<F>,
    pub held_out: HeldOutLabels,
}

impl<F: Scalar> EvaluatedSequence<F> {
    /// Labeled view of unlabeled domain `i`, when labels were held out.
    pub fn labeled_domain(&self, i: usize) -> Option<LabeledDataset<F>> {
        let u = self.sequence.unlabeled().get(i)?;
        let labels = self.held_out.get(i)?;
        LabeledDataset::with_class_count(u.features.clone(), labels.to_vec(), self.sequence.class_count(), u.time_index).ok()
    }

    /// Labeled view of the target domain.
    pub fn labeled_target(&self) -> Option<LabeledDataset<F>> {
        let n = self.sequence.unlabeled().len();
        n.checked_sub(1).and_then(|i| self.labeled_domain(i))
    }

    /// Labeled view of the domain at time index `t` (source included).
    pub fn labeled_at(&self, t: F) -> Option<LabeledDataset<F>> {
        if (self.sequence.source().time_index() - t).abs() <= F::of(TIME_EPS) {
            return Some(self.sequence.source().clone());
        }
        let i = self
            .sequence
            .unlabeled()
            .iter()
            .position(|u| (u.time_index - t).abs() <= F::of(TIME_EPS))?;
        self.labeled_domain(i)
    }

    /// Keeps the source and the unlabeled domains accepted by `keep`.
    pub fn filter_unlabeled(&self, keep: impl Fn(F) -> bool) -> Self {
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for (i, u) in self.sequence.unlabeled().iter().enumerate() {
            if keep(u.time_index) {
                domains.push(u.clone());
                labels.push(self.held_out.get(i).map(<[u32]>::to_vec));
            }
        }
        EvaluatedSequence {
            sequence: DomainSequence {
                source: self.sequence.source().clone(),
                unlabeled: domains,
            },
            held_out: HeldOutLabels::new(labels),
        }
    }
}
