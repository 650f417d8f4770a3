//! Per-step conformal intervals at level `ε/H` around the flow's median
//! forecast; their product is a box with joint coverage at least `1 - ε`.

use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::SeededRng;

/// Per-step half-widths in standardised units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonferroniCalibration {
    pub epsilon: f64,
    pub horizon: usize,
    pub dim: usize,
    /// Flow samples used for each median forecast.
    pub median_samples: usize,
    /// `None` marks an unbounded step (too few calibration points).
    pub half_widths: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub epsilon: f64,
    /// Raw label units, flattened step-major like the labels.
    pub centre: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub volume: f64,
    pub log_volume: f64,
}

impl BoxRegion {
    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.lower.len() && y.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

/// The `⌈(l+1)(1-level)⌉`-th smallest score, or `None` past the end.
pub fn conformal_quantile(scores: &[f64], level: f64) -> Option<f64> {
    let l = scores.len();
    let k = ((l + 1) as f64 * (1.0 - level)).ceil() as usize;
    if k == 0 {
        return Some(f64::NEG_INFINITY);
    }
    if k > l {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[k - 1])
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median of `n` flow samples, standardised units.
fn median_forecast(model: &FlowModel, context: &[Vec<f64>], n: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let h = model.condition(context)?;
    let samples = model.sample_given(&h, rng, n)?;
    Ok((0..model.label_dim())
        .map(|j| median(&mut samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect())
}

/// Per-step scores `max_d |y - m|` for one flattened label and centre.
pub fn step_scores(y: &[f64], centre: &[f64], horizon: usize, dim: usize) -> Vec<f64> {
    (0..horizon)
        .map(|t| {
            (0..dim)
                .map(|d| (y[t * dim + d] - centre[t * dim + d]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Half-widths from per-step calibration scores, `scores[i][t]`.
pub fn bonferroni_half_widths(scores: &[Vec<f64>], horizon: usize, epsilon: f64) -> Result<Vec<Option<f64>>> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Input(format!("significance level must lie in (0, 1), got {epsilon}")));
    }
    if scores.iter().any(|s| s.len() != horizon) {
        return Err(Error::Shape("per-step scores do not match the horizon".into()));
    }
    let level = epsilon / horizon as f64;
    Ok((0..horizon)
        .map(|t| {
            let col: Vec<f64> = scores.iter().map(|s| s[t]).collect();
            conformal_quantile(&col, level).map(|q| q.max(0.0))
        })
        .collect())
}

impl BonferroniCalibration {
    pub fn fit(
        model: &FlowModel,
        cal_set: &SeriesDataset,
        epsilon: f64,
        median_samples: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if cal_set.is_empty() {
            return Err(Error::Input("calibration set is empty".into()));
        }
        if median_samples == 0 {
            return Err(Error::Input("need at least one sample for the median forecast".into()));
        }
        let (horizon, dim) = (model.horizon, model.dim);
        let mut scores = Vec::with_capacity(cal_set.len());
        for i in 0..cal_set.len() {
            let centre = median_forecast(model, cal_set.context(i), median_samples, rng)?;
            let y = model.stats.label(&cal_set.future_flat(i));
            scores.push(step_scores(&y, &centre, horizon, dim));
        }
        Ok(Self {
            epsilon,
            horizon,
            dim,
            median_samples,
            half_widths: bonferroni_half_widths(&scores, horizon, epsilon)?,
        })
    }
}

/// The baseline box for one context.
pub fn bonferroni_box(
    model: &FlowModel,
    context: &[Vec<f64>],
    calibration: &BonferroniCalibration,
    rng: &mut SeededRng,
) -> Result<BoxRegion> {
    if calibration.horizon != model.horizon || calibration.dim != model.dim {
        return Err(Error::Shape("calibration does not match model label shape".into()));
    }
    let centre_std = median_forecast(model, context, calibration.median_samples, rng)?;
    let stats = &model.stats;
    let mut lower = Vec::with_capacity(centre_std.len());
    let mut upper = Vec::with_capacity(centre_std.len());
    let mut log_volume = 0.0;
    for (j, &c) in centre_std.iter().enumerate() {
        let q = calibration.half_widths[j / calibration.dim].unwrap_or(f64::INFINITY);
        let (m, s) = (stats.label_mean[j], stats.label_std[j]);
        lower.push(m + s * (c - q));
        upper.push(m + s * (c + q));
        log_volume += (2.0 * q * s).ln();
    }
    Ok(BoxRegion {
        epsilon: calibration.epsilon,
        centre: stats.label_inverse(&centre_std),
        lower,
        upper,
        volume: log_volume.exp(),
        log_volume,
    })
}
