use crate::autodiff::Tensor;

use super::{ModelError, Result};

/// Row-major feature matrix with one label per row. May be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    width: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(width: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if width == 0 || features.len() != width * labels.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} feature values cannot form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            width,
            features,
            labels,
        })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            width,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows<'a>(width: usize, rows: impl IntoIterator<Item = (&'a [f64], usize)>) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (x, y) in rows {
            if x.len() != width {
                return Err(ModelError::WidthMismatch {
                    expected: width,
                    actual: x.len(),
                });
            }
            features.extend_from_slice(x);
            labels.push(y);
        }
        Ok(Self {
            width,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// All rows as an `n x width` tensor.
    pub fn features(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Tensor::new(&[self.len(), self.width], self.features.clone())?)
    }

    /// Rows `indices` as a tensor plus their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut data = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&[indices.len(), self.width], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            width: self.width,
            features,
            labels,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.width != other.width {
            return Err(ModelError::WidthMismatch {
                expected: self.width,
                actual: other.width,
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }
}
