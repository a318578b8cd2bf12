//! In-memory domain datasets and the f64 views the trainers consume.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Channel-major raster layout of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl RasterShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

/// One domain's samples, with labels for sources (and for the target's
/// evaluation copy).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    name: String,
    features: Vec<f32>,
    feature_dim: usize,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    raster: Option<RasterShape>,
    provenance: Vec<String>,
}

impl DomainDataset {
    /// Validates: rectangular features, all finite, labels in range and every
    /// class present when labels are given.
    pub fn new(
        name: impl Into<String>,
        features: Vec<f32>,
        feature_dim: usize,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        if feature_dim == 0 {
            return Err(Error::Data(format!("domain {name}: feature dimension is zero")));
        }
        if !features.len().is_multiple_of(feature_dim) {
            return Err(Error::Data(format!(
                "domain {name}: {} values do not form rows of length {feature_dim}",
                features.len()
            )));
        }
        if num_classes < 2 || num_classes > u16::MAX as usize {
            return Err(Error::Data(format!(
                "domain {name}: number of classes {num_classes} outside [2, 65535]"
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "domain {name}: non-finite feature value at flat index {i}"
            )));
        }
        let n = features.len() / feature_dim;
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Data(format!(
                    "domain {name}: {} labels for {n} samples",
                    labels.len()
                )));
            }
            let mut seen = vec![false; num_classes];
            for &y in labels {
                if y >= num_classes {
                    return Err(Error::Data(format!(
                        "domain {name}: label {y} out of range for {num_classes} classes"
                    )));
                }
                seen[y] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::Data(format!(
                    "domain {name}: class {missing} has no samples"
                )));
            }
        }
        Ok(Self {
            name,
            features,
            feature_dim,
            labels,
            num_classes,
            raster: None,
            provenance: Vec::new(),
        })
    }

    pub fn with_raster(mut self, shape: RasterShape) -> Result<Self> {
        if shape.len() != self.feature_dim {
            return Err(Error::mismatch("raster", shape.len(), "feature dim", self.feature_dim));
        }
        self.raster = Some(shape);
        Ok(self)
    }

    pub fn with_provenance(mut self, step: impl Into<String>) -> Self {
        self.provenance.push(step.into());
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Rebuild with new features (and possibly new layout), keeping labels,
    /// name and provenance.
    pub(crate) fn map_features(
        &self,
        features: Vec<f32>,
        feature_dim: usize,
        raster: Option<RasterShape>,
        step: String,
    ) -> Result<Self> {
        let mut out = Self::new(
            self.name.clone(),
            features,
            feature_dim,
            self.labels.clone(),
            self.num_classes,
        )?;
        out.raster = raster;
        out.provenance = self.provenance.clone();
        out.provenance.push(step);
        Ok(out)
    }

    pub(crate) fn map_labels(&self, labels: Vec<usize>, step: String) -> Result<Self> {
        let mut out = Self::new(
            self.name.clone(),
            self.features.clone(),
            self.feature_dim,
            Some(labels),
            self.num_classes,
        )?;
        out.raster = self.raster;
        out.provenance = self.provenance.clone();
        out.provenance.push(step);
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn raster(&self) -> Option<RasterShape> {
        self.raster
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|labels| {
            let mut counts = vec![0; self.num_classes];
            for &y in labels {
                counts[y] += 1;
            }
            counts
        })
    }

    pub fn to_matrix(&self) -> SampleMatrix {
        SampleMatrix {
            data: self.features.iter().map(|&v| v as f64).collect(),
            dim: self.feature_dim,
        }
    }

    /// Labeled f64 view for training and evaluation.
    pub fn labeled(&self) -> Result<LabeledSamples> {
        let labels = self.labels.clone().ok_or_else(|| {
            Error::Data(format!("domain {} has no labels", self.name))
        })?;
        Ok(LabeledSamples {
            name: self.name.clone(),
            samples: self.to_matrix(),
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Training-facing view with labels removed.
    pub fn unlabeled(&self) -> UnlabeledSamples {
        UnlabeledSamples {
            name: self.name.clone(),
            samples: self.to_matrix(),
        }
    }

    fn subset(&self, idx: &[usize], suffix: &str) -> Result<Self> {
        let mut features = Vec::with_capacity(idx.len() * self.feature_dim);
        for &i in idx {
            features.extend_from_slice(self.sample(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        let mut out = Self::new(
            format!("{}{suffix}", self.name),
            features,
            self.feature_dim,
            labels,
            self.num_classes,
        )?;
        out.raster = self.raster;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Stratified split into (train, test); each class contributes
    /// `round(count · test_fraction)` samples (at least one) to the test side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("cannot stratify unlabeled domain {}", self.name)))?;
        let mut rng = rng_from(seed, &[0x5711]);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.len() < 2 {
                return Err(Error::Data(format!(
                    "domain {}: class {c} has {} samples, cannot split",
                    self.name,
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let n_test = ((members.len() as f64 * test_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train, "")?, self.subset(&test, "")?))
    }
}

/// Row-major f64 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl SampleMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("sample rows must be nonempty and of equal length".into()));
        }
        Ok(Self {
            data: rows.concat(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn gather(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.row(i)).collect()
    }
}

/// Labeled samples in training precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub name: String,
    pub samples: SampleMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Samples whose labels were stripped; this is the only form in which target
/// training data reaches the protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSamples {
    pub name: String,
    pub samples: SampleMatrix,
}

impl UnlabeledSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
