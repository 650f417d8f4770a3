use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-12;

/// Per-coordinate z-scoring statistics.
///
/// Context rows share one (mean, std) pair per data dimension; each of the
/// `horizon * dim` label coordinates gets its own pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub context_mean: Vec<f64>,
    pub context_std: Vec<f64>,
    pub label_mean: Vec<f64>,
    pub label_std: Vec<f64>,
}

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in values {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / n).sqrt())
}

impl Standardizer {
    /// Statistics that leave every value unchanged.
    pub fn identity(dim: usize, label_dim: usize) -> Self {
        Self {
            context_mean: vec![0.0; dim],
            context_std: vec![1.0; dim],
            label_mean: vec![0.0; label_dim],
            label_std: vec![1.0; label_dim],
        }
    }

    /// Estimates statistics from the series at `indices` only.
    pub fn fit(dataset: &SeriesDataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("cannot standardise from an empty index set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::Input(format!("index {bad} out of range for {} series", dataset.len())));
        }
        let mut stats = Self::identity(dataset.dim, dataset.label_dim());
        for d in 0..dataset.dim {
            let (m, s) = moments(
                indices
                    .iter()
                    .flat_map(|&i| dataset.context(i).iter().map(move |row| row[d])),
            );
            stats.context_mean[d] = m;
            stats.context_std[d] = s;
        }
        let futures: Vec<Vec<f64>> = indices.iter().map(|&i| dataset.future_flat(i)).collect();
        for j in 0..dataset.label_dim() {
            let (m, s) = moments(futures.iter().map(|f| f[j]));
            stats.label_mean[j] = m;
            stats.label_std[j] = s;
        }
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_mean.len() != self.context_std.len() || self.label_mean.len() != self.label_std.len() {
            return Err(Error::Shape("standardiser mean/std lengths differ".into()));
        }
        let all = self.context_mean.iter().chain(&self.label_mean);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite mean".into()));
        }
        for (what, stds) in [("context", &self.context_std), ("label", &self.label_std)] {
            if let Some(j) = stds.iter().position(|s| !(s.is_finite() && *s > MIN_STD)) {
                return Err(Error::DegenerateData(format!(
                    "{what} coordinate {j} has zero or invalid variance ({})",
                    stds[j]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.context_mean.len()
    }

    pub fn label_dim(&self) -> usize {
        self.label_mean.len()
    }

    pub fn context(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|row| {
                row.iter()
                    .zip(self.context_mean.iter().zip(&self.context_std))
                    .map(|(x, (m, s))| (x - m) / s)
                    .collect()
            })
            .collect()
    }

    pub fn context_inverse(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|row| {
                row.iter()
                    .zip(self.context_mean.iter().zip(&self.context_std))
                    .map(|(x, (m, s))| x * s + m)
                    .collect()
            })
            .collect()
    }

    pub fn label(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.label_mean.iter().zip(&self.label_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn label_inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.label_mean.iter().zip(&self.label_std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    /// `log p_raw(y) = log p_std(y) + label_log_jacobian()`.
    pub fn label_log_jacobian(&self) -> f64 {
        -self.label_std.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// Volume scale from standardised to raw label space.
    pub fn label_volume_scale(&self) -> f64 {
        self.label_std.iter().product()
    }
}

/// Z-scores every series with statistics from the `train` indices only.
pub fn standardize(dataset: &SeriesDataset, train: &[usize]) -> Result<(SeriesDataset, Standardizer)> {
    let stats = Standardizer::fit(dataset, train)?;
    Ok((apply(dataset, &stats), stats))
}

/// Applies existing statistics to a dataset.
pub fn apply(dataset: &SeriesDataset, stats: &Standardizer) -> SeriesDataset {
    let series = dataset
        .series
        .iter()
        .map(|s| {
            let mut rows = stats.context(&s[..dataset.context_len]);
            let future: Vec<f64> = s[dataset.context_len..].iter().flatten().copied().collect();
            let z = stats.label(&future);
            rows.extend(z.chunks(dataset.dim).map(<[f64]>::to_vec));
            rows
        })
        .collect();
    SeriesDataset {
        series,
        stats: Some(stats.clone()),
        ..dataset.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_particle, Provenance};
    use crate::numerics::SeededRng;

    fn planted(n: usize, mean: f64, std: f64, seed: u64) -> SeriesDataset {
        let mut rng = SeededRng::new(seed);
        let series = (0..n)
            .map(|_| (0..3).map(|_| vec![mean + std * rng.normal()]).collect())
            .collect();
        SeriesDataset::new(2, 1, 1, series, Provenance::Manual).unwrap()
    }

    #[test]
    fn standard_data_is_nearly_unchanged() {
        let ds = planted(20_000, 0.0, 1.0, 1);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (out, stats) = standardize(&ds, &idx).unwrap();
        assert!(stats.context_mean[0].abs() < 0.02 && (stats.context_std[0] - 1.0).abs() < 0.02);
        assert!((out.series[0][0][0] - ds.series[0][0][0]).abs() < 0.05);
    }

    #[test]
    fn planted_moments_recovered() {
        let ds = planted(20_000, 5.0, 2.0, 2);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let stats = Standardizer::fit(&ds, &idx).unwrap();
        // Standard errors: 2/sqrt(40000) = 0.01 for the mean, ~0.007 for the std.
        assert!((stats.context_mean[0] - 5.0).abs() < 0.05);
        assert!((stats.context_std[0] - 2.0).abs() < 0.05);
        assert!((stats.label_mean[0] - 5.0).abs() < 0.07);
        assert!((stats.label_std[0] - 2.0).abs() < 0.07);
    }

    #[test]
    fn round_trip() {
        let ds = gen_particle(30, 5, 2, 0.05, 4).unwrap();
        let stats = Standardizer::fit(&ds, &[0, 1, 2, 3, 4, 5]).unwrap();
        for i in 0..ds.len() {
            let back = stats.context_inverse(&stats.context(ds.context(i)));
            for (a, b) in back.iter().flatten().zip(ds.context(i).iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
            let y = ds.future_flat(i);
            for (a, b) in stats.label_inverse(&stats.label(&y)).iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let series = vec![vec![vec![1.0], vec![1.0], vec![2.0]]; 4];
        let ds = SeriesDataset::new(2, 1, 1, series, Provenance::Manual).unwrap();
        assert!(matches!(standardize(&ds, &[0, 1]), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn uses_training_statistics_only() {
        let ds = gen_particle(200, 5, 2, 0.05, 6).unwrap();
        let train: Vec<usize> = (0..100).collect();
        let cal: Vec<usize> = (100..200).collect();
        let (std_ds, stats) = standardize(&ds, &train).unwrap();
        assert_ne!(stats, Standardizer::fit(&ds, &cal).unwrap());
        let expected = stats.label(&ds.future_flat(150));
        assert_eq!(std_ds.future_flat(150), expected);
        assert_eq!(std_ds.stats.as_ref(), Some(&stats));
    }
}
