//! Datasets, client partitions, and metric files.

mod idx;
mod metrics;
mod split;
mod synthetic;

use std::io;

use thiserror::Error;

use crate::nn::Tensor;

pub use idx::{
    load_mnist_dir, load_mnist_idx, read_idx_images, read_idx_labels, write_idx_images,
    write_idx_labels, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use metrics::{append_metrics, read_metrics, write_metrics, METRICS_HEADER};
pub use split::{
    partition_iid, partition_label_shards, split_train_validation, Partition, PartitionStrategy,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};

pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("empty dataset")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Feature matrix plus integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    /// `inputs` holds `labels.len()` rows of `features` values.
    pub fn new(
        inputs: Vec<f64>,
        features: usize,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        if features == 0 || classes == 0 {
            return Err(DataError::Invalid(
                "features and classes must be positive".into(),
            ));
        }
        if inputs.len() != labels.len() * features {
            return Err(DataError::Invalid(format!(
                "{} inputs do not fill {} rows of {features}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite input value".into()));
        }
        let inputs = Tensor::new(vec![labels.len(), features], inputs)
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let f = self.features();
        &self.inputs.data()[i * f..(i + 1) * f]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copies the selected rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let f = self.features();
        let mut inputs = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DataError::Invalid(format!("index {i} out of range")));
            }
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(inputs, f, labels, self.classes)
    }

    /// `(x - mean) / std` applied to every feature.
    pub fn standardize(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0) || !mean.is_finite() {
            return Err(DataError::Invalid(format!(
                "bad standardization ({mean}, {std})"
            )));
        }
        for v in self.inputs.data_mut() {
            *v = (*v - mean) / std;
        }
        Ok(())
    }

    pub fn view(&self) -> DataView<'_> {
        DataView {
            dataset: self,
            indices: None,
        }
    }

    pub fn view_of<'a>(&'a self, indices: &'a [usize]) -> DataView<'a> {
        DataView {
            dataset: self,
            indices: Some(indices),
        }
    }
}

/// Borrowed selection of dataset rows.
#[derive(Clone, Copy, Debug)]
pub struct DataView<'a> {
    dataset: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        self.indices.map_or(self.dataset.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    /// Row index in the underlying dataset of the `i`-th element.
    pub fn index(&self, i: usize) -> usize {
        self.indices.map_or(i, |ix| ix[i])
    }

    pub fn sample(&self, i: usize) -> &'a [f64] {
        self.dataset.sample(self.index(i))
    }

    pub fn label(&self, i: usize) -> usize {
        self.dataset.label(self.index(i))
    }
}
