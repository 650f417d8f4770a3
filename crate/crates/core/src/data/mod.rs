//! Series datasets: synthetic generators, CSV ingestion, splitting and
//! per-coordinate standardisation.

mod csv_io;
mod generate;
mod split;
mod standardize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, parse_csv, write_csv, DatasetMetadata};
pub use generate::{
    gen_bimodal, gen_bimodal_labeled, gen_particle, gen_particle_with_frequencies, BIMODAL_MODE,
    BIMODAL_MODE_STD, PARTICLE_DAMPING,
};
pub use split::{split, SplitIndices};
pub use standardize::{apply as apply_standardizer, standardize, Standardizer};

use crate::error::{Error, Result};

/// Shape of every series in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub n: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub dim: usize,
}

impl DatasetSchema {
    pub fn series_len(&self) -> usize {
        self.context_len + self.horizon
    }

    pub fn label_dim(&self) -> usize {
        self.horizon * self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generator {
        name: String,
        seed: u64,
        params: BTreeMap<String, f64>,
    },
    File {
        path: String,
    },
    Subset {
        parent: Box<Provenance>,
        indices: usize,
    },
    Manual,
}

/// `n` independent series, each `(context_len + horizon)` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub context_len: usize,
    pub horizon: usize,
    pub dim: usize,
    pub series: Vec<Vec<Vec<f64>>>,
    pub provenance: Provenance,
    /// Present when the values have been standardised with these statistics.
    pub stats: Option<Standardizer>,
}

impl SeriesDataset {
    /// Builds a dataset and checks that every series has the declared shape.
    pub fn new(
        context_len: usize,
        horizon: usize,
        dim: usize,
        series: Vec<Vec<Vec<f64>>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if context_len == 0 || horizon == 0 || dim == 0 {
            return Err(Error::Input(format!(
                "context length, horizon and dimension must be positive (got {context_len}, {horizon}, {dim})"
            )));
        }
        for (i, s) in series.iter().enumerate() {
            if s.len() != context_len + horizon {
                return Err(Error::Shape(format!(
                    "series {i} has {} steps, expected {}",
                    s.len(),
                    context_len + horizon
                )));
            }
            if let Some(row) = s.iter().find(|r| r.len() != dim) {
                return Err(Error::Shape(format!(
                    "series {i} has a row of width {}, expected {dim}",
                    row.len()
                )));
            }
        }
        Ok(Self {
            context_len,
            horizon,
            dim,
            series,
            provenance,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            n: self.len(),
            context_len: self.context_len,
            horizon: self.horizon,
            dim: self.dim,
        }
    }

    pub fn label_dim(&self) -> usize {
        self.horizon * self.dim
    }

    pub fn context(&self, i: usize) -> &[Vec<f64>] {
        &self.series[i][..self.context_len]
    }

    /// Future rows flattened step-major into a vector of length `horizon * dim`.
    pub fn future_flat(&self, i: usize) -> Vec<f64> {
        self.series[i][self.context_len..].iter().flatten().copied().collect()
    }

    pub fn subset(&self, indices: &[usize]) -> SeriesDataset {
        SeriesDataset {
            context_len: self.context_len,
            horizon: self.horizon,
            dim: self.dim,
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            provenance: Provenance::Subset {
                parent: Box::new(self.provenance.clone()),
                indices: indices.len(),
            },
            stats: self.stats.clone(),
        }
    }
}
