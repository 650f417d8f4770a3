use serde::{Deserialize, Serialize};

use super::cluster::{cluster_components, Adjacency};
use super::{estimate_volume, ClusterOptions, PredictionRegion, RegionMode, RegionPoint};
use crate::conformal::{threshold, CalibrationRecord};
use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::flow::FlowModel;

/// Grid scans are limited to this many label dimensions.
pub const MAX_GRID_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
}

impl GridAxis {
    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.cells as f64
    }

    pub fn centre(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width()
    }

    /// Cell containing `x`, if inside the axis range.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower && x <= self.upper) {
            return None;
        }
        Some((((x - self.lower) / self.width()).floor() as usize).min(self.cells - 1))
    }
}

/// Axis-aligned box split into equal cells, in raw label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    /// Same bounds and resolution on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![GridAxis { lower, upper, cells }; dim])
    }

    /// Bounds `[min - 3σ, max + 3σ]` of the calibration futures per coordinate.
    pub fn from_calibration(cal_set: &SeriesDataset, cells: usize) -> Result<Self> {
        let l = cal_set.label_dim();
        if l > MAX_GRID_DIM {
            return Err(Error::Dimensionality { dim: l, max: MAX_GRID_DIM });
        }
        if cal_set.is_empty() {
            return Err(Error::Input("calibration set is empty".into()));
        }
        let futures: Vec<Vec<f64>> = (0..cal_set.len()).map(|i| cal_set.future_flat(i)).collect();
        let axes = (0..l)
            .map(|j| {
                let vals = futures.iter().map(|f| f[j]);
                let n = futures.len() as f64;
                let mean = vals.clone().sum::<f64>() / n;
                let std = (vals.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                let pad = if std > 0.0 { 3.0 * std } else { 1.0 };
                GridAxis {
                    lower: lo - pad,
                    upper: hi + pad,
                    cells,
                }
            })
            .collect();
        Self::new(axes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > MAX_GRID_DIM {
            return Err(Error::Dimensionality {
                dim: self.axes.len(),
                max: MAX_GRID_DIM,
            });
        }
        for (k, a) in self.axes.iter().enumerate() {
            if !(a.lower.is_finite() && a.upper.is_finite() && a.lower < a.upper) {
                return Err(Error::Input(format!("grid axis {k}: need finite lower < upper")));
            }
            if a.cells < 2 {
                return Err(Error::Input(format!("grid axis {k}: need at least 2 cells")));
            }
            if !a.width().is_finite() || a.width() <= 0.0 {
                return Err(Error::Input(format!("grid axis {k}: degenerate cell width")));
            }
        }
        self.total_cells()
            .ok_or_else(|| Error::Input("grid has too many cells".into()))?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn total_cells(&self) -> Option<usize> {
        self.axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.cells))
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::width).product()
    }

    pub fn total_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.upper - a.lower).product()
    }

    pub fn centre(&self, index: &[usize]) -> Vec<f64> {
        self.axes.iter().zip(index).map(|(a, &i)| a.centre(i)).collect()
    }

    pub fn cell_of(&self, x: &[f64]) -> Option<Vec<usize>> {
        if x.len() != self.axes.len() {
            return None;
        }
        self.axes.iter().zip(x).map(|(a, &v)| a.cell_of(v)).collect()
    }

    /// All cell indices in lexicographic order (first axis slowest).
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let total = self.total_cells().unwrap_or(0);
        (0..total).map(move |mut flat| {
            let mut idx = vec![0; self.axes.len()];
            for (k, a) in self.axes.iter().enumerate().rev() {
                idx[k] = flat % a.cells;
                flat /= a.cells;
            }
            idx
        })
    }
}

/// Scans every grid cell centre and keeps those whose score clears the
/// threshold for `epsilon`.
pub fn grid_region(
    model: &FlowModel,
    context: &[Vec<f64>],
    record: &CalibrationRecord,
    epsilon: f64,
    grid: &GridSpec,
    options: &ClusterOptions,
) -> Result<PredictionRegion> {
    let l = model.label_dim();
    if l > MAX_GRID_DIM {
        return Err(Error::Dimensionality { dim: l, max: MAX_GRID_DIM });
    }
    grid.validate()?;
    if grid.dim() != l {
        return Err(Error::Shape(format!("grid has {} axes, label has {l} coordinates", grid.dim())));
    }
    record.check_model(model)?;
    let th = threshold(record, epsilon)?;
    let h = model.condition(context)?;

    let mut points = Vec::new();
    for idx in grid.indices() {
        let y = grid.centre(&idx);
        let lp = model.log_prob_raw_label(&h, &y)?;
        if th.accepts(lp) {
            points.push(RegionPoint {
                coords: y,
                log_density: lp,
                component: 0,
            });
        }
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.coords.clone()).collect();
    let labels = cluster_components(
        &coords,
        &Adjacency::Grid {
            spec: grid,
            diagonal: options.diagonal,
        },
    );
    for (p, c) in points.iter_mut().zip(&labels) {
        p.component = *c;
    }
    let n_components = labels.iter().max().map_or(0, |m| m + 1);
    let mut region = PredictionRegion {
        mode: RegionMode::Grid,
        epsilon,
        threshold: th,
        label_dim: l,
        empty: points.is_empty(),
        points,
        n_components,
        volume: super::VolumeEstimate {
            value: 0.0,
            std_error: None,
            method: super::VolumeMethod::GridCellSum,
        },
        label_log_jacobian: model.stats.label_log_jacobian(),
        model_hash: model.hash(),
        grid: Some(grid.clone()),
        n_samples: None,
        cluster_radius: None,
    };
    region.volume = estimate_volume(&region);
    Ok(region)
}
