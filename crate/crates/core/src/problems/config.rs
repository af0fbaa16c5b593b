//! JSON description of a problem instance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Family, LossKind, ProblemSpec, Regularizer};
use crate::error::{Error, Result};

/// Where the observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Inline deconvolution target sampled on the uniform torus grid.
    Signal { values: Vec<f64> },
    /// Inline network dataset, one feature row per label.
    Samples { features: Vec<Vec<f64>>, labels: Vec<f64> },
    /// CSV file, one sample per row, label in the last column. For
    /// deconvolution the file holds a single column with the signal.
    Csv { path: PathBuf },
    /// Synthetic data drawn from a random teacher (see `bench::make_teacher`).
    Teacher {
        teacher_size: usize,
        #[serde(default)]
        noise: f64,
        /// Number of training samples (networks) or grid points (deconvolution).
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn default_samples() -> usize {
    256
}

fn default_lambda() -> f64 {
    1.0
}

fn default_reg_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: Family,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Defaults to the family's natural regularizer.
    #[serde(default)]
    pub regularizer: Option<Regularizer>,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    pub data: DataSource,
}

impl ProblemConfig {
    /// Builds the problem. `seed` is only consumed by teacher-generated data;
    /// relative CSV paths resolve against `base_dir`.
    pub fn build(&self, seed: u64, base_dir: &Path) -> Result<ProblemSpec> {
        let spec = match (&self.family, &self.data) {
            (Family::SparseDeconvolution { order }, DataSource::Signal { values }) => {
                ProblemSpec::deconvolution(values.clone(), *order, self.lambda)?
            }
            (Family::SparseDeconvolution { order }, DataSource::Csv { path }) => {
                let (features, labels) = load_dataset_csv(&base_dir.join(path), 0)?;
                debug_assert!(features.is_empty());
                ProblemSpec::deconvolution(labels, *order, self.lambda)?
            }
            (family @ Family::SparseDeconvolution { .. }, DataSource::Teacher { teacher_size, noise, samples }) => {
                let (_, spec) = crate::bench::make_teacher_problem(
                    family,
                    *teacher_size,
                    seed,
                    *noise,
                    *samples,
                    self.lambda,
                )?;
                spec
            }
            (Family::SparseDeconvolution { .. }, DataSource::Samples { .. }) => {
                return Err(Error::Config("deconvolution takes a signal, not a sample table".into()))
            }
            (family, DataSource::Signal { .. }) => {
                return Err(Error::Config(format!("{} needs samples, not a signal", family.tag())))
            }
            (family, DataSource::Samples { features, labels }) => {
                let p = family.input_dim().unwrap_or(0);
                if let Some(row) = features.iter().find(|r| r.len() != p) {
                    return Err(Error::Shape {
                        expected: p,
                        got: row.len(),
                    });
                }
                ProblemSpec::network(family.clone(), features.concat(), labels.clone(), self.loss)?
            }
            (family, DataSource::Csv { path }) => {
                let p = family.input_dim().unwrap_or(0);
                let (features, labels) = load_dataset_csv(&base_dir.join(path), p)?;
                ProblemSpec::network(family.clone(), features, labels, self.loss)?
            }
            (family, DataSource::Teacher { teacher_size, noise, samples }) => {
                let (_, spec) =
                    crate::bench::make_teacher_problem(family, *teacher_size, seed, *noise, *samples, self.lambda)?;
                spec
            }
        };
        let spec = if spec.family().is_network() {
            if self.loss != spec.loss_kind() {
                return Err(Error::Config("teacher data supports the quadratic loss only".into()));
            }
            spec.with_lambda(self.lambda)?
        } else {
            spec
        };
        let reg = self.regularizer.unwrap_or_else(|| self.family.default_regularizer());
        spec.with_regularizer(reg, self.reg_weight)
    }
}

/// Reads a numeric CSV with `input_dim` feature columns followed by one
/// label column. A non-numeric first row is treated as a header.
pub fn load_dataset_csv(path: &Path, input_dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::Config(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    line + 1
                )))
            }
        };
        if row.len() != input_dim + 1 {
            return Err(Error::Config(format!(
                "{}: line {} has {} columns, expected {}",
                path.display(),
                line + 1,
                row.len(),
                input_dim + 1
            )));
        }
        features.extend_from_slice(&row[..input_dim]);
        labels.push(row[input_dim]);
    }
    if labels.is_empty() {
        return Err(Error::Config(format!("{}: no samples", path.display())));
    }
    Ok((features, labels))
}

impl ProblemSpec {
    /// Inline configuration reproducing this instance.
    pub fn to_config(&self) -> ProblemConfig {
        let data = match self.samples() {
            None => DataSource::Signal {
                values: self.target().to_vec(),
            },
            Some(set) => DataSource::Samples {
                features: (0..set.len()).map(|k| set.row(k).to_vec()).collect(),
                labels: set.labels.to_vec(),
            },
        };
        ProblemConfig {
            family: self.family().clone(),
            loss: self.loss_kind(),
            lambda: self.lambda(),
            regularizer: Some(self.regularizer()),
            reg_weight: self.reg_weight(),
            data,
        }
    }
}
