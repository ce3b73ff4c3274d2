//! Feature/score sample sets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of (feature vector, scalar score) pairs. Serves both as a user's
/// support set and as held-out test data.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    features: Tensor,
    scores: Tensor,
}

impl SampleSet {
    pub fn new(features: Tensor, scores: Tensor) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape(
                "SampleSet features",
                "[N, dim]",
                format!("{:?}", features.shape()),
            ));
        }
        if scores.shape().len() != 1 || scores.len() != features.rows() {
            return Err(Error::shape(
                "SampleSet scores",
                features.rows(),
                scores.len(),
            ));
        }
        Ok(Self { features, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn scores(&self) -> &[f64] {
        self.scores.data()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows at `indices` (repetitions allowed), as a new set.
    pub fn subset(&self, indices: &[usize]) -> Result<SampleSet> {
        let d = self.dim();
        let mut feats = Vec::with_capacity(indices.len() * d);
        let mut scores = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::shape(
                    "SampleSet::subset",
                    format!("index < {}", self.len()),
                    i,
                ));
            }
            feats.extend_from_slice(self.feature_row(i));
            scores.push(self.scores()[i]);
        }
        SampleSet::new(
            Tensor::matrix(indices.len(), d, feats)?,
            Tensor::vector(scores)?,
        )
    }

    /// True when at least two scores differ, i.e. ranking pairs exist.
    pub fn has_distinct_scores(&self) -> bool {
        let s = self.scores();
        s.windows(2).any(|w| w[0] != w[1]) || s.iter().any(|&v| v != s[0])
    }
}
