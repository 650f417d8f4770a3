//! Explicit prediction regions: the set of labels whose conformity score
//! clears the calibrated threshold, found by scanning a grid or the flow's
//! own samples, then split into connected components.
//!
//! Coordinates are in raw label units. Log-densities are in standardised
//! space, the scale of the calibration scores; adding `label_log_jacobian`
//! gives raw-space log-densities.

mod bonferroni;
mod cluster;
mod export;
mod grid;
mod mc;

use serde::{Deserialize, Serialize};

pub use bonferroni::{
    bonferroni_box, bonferroni_half_widths, conformal_quantile, step_scores, BonferroniCalibration, BoxRegion,
};
pub use cluster::{cluster_components, median_nearest_neighbour_distance, Adjacency};
pub use export::{export_region, read_points_csv, write_points_csv, RegionFile, REGION_FORMAT, REGION_VERSION};
pub use grid::{grid_region, GridAxis, GridSpec, MAX_GRID_DIM};
pub use mc::mc_region;

use crate::conformal::Threshold;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    Grid,
    FlowSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    /// Accepted cells times cell volume.
    GridCellSum,
    /// Mean of `1[accepted] / p(x)` over flow samples `x ~ p`.
    ImportanceSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_error: Option<f64>,
    pub method: VolumeMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub coords: Vec<f64>,
    pub log_density: f64,
    pub component: usize,
}

/// How flow samples are linked into components. Distances are measured in
/// standardised label units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleLinkage {
    /// Each sample gets the radius of a ball expected to hold
    /// `expected_neighbours` of the `N` drawn samples at its own density,
    /// `N p(x) V_L r^L = κ`; a pair links within the larger of its radii.
    DensityAdaptive { expected_neighbours: f64 },
    /// One radius, `factor` times the median nearest-neighbour distance among
    /// kept samples.
    MedianNearestNeighbour { factor: f64 },
    FixedRadius { radius: f64 },
}

impl Default for SampleLinkage {
    fn default() -> Self {
        SampleLinkage::DensityAdaptive {
            expected_neighbours: 30.0,
        }
    }
}

impl SampleLinkage {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            SampleLinkage::DensityAdaptive { expected_neighbours } => expected_neighbours,
            SampleLinkage::MedianNearestNeighbour { factor } => factor,
            SampleLinkage::FixedRadius { radius } => radius,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Input(format!("sample linkage parameter must be positive, got {v}")));
        }
        Ok(())
    }
}

/// Clustering settings shared by both region modes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterOptions {
    /// Grid mode: also join cells that touch only at a corner or edge.
    pub diagonal: bool,
    /// Sample mode linkage rule.
    pub linkage: SampleLinkage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRegion {
    pub mode: RegionMode,
    pub epsilon: f64,
    pub threshold: Threshold,
    pub label_dim: usize,
    pub points: Vec<RegionPoint>,
    pub n_components: usize,
    pub volume: VolumeEstimate,
    pub label_log_jacobian: f64,
    pub model_hash: String,
    pub grid: Option<GridSpec>,
    /// Total number of flow samples drawn (sample mode).
    pub n_samples: Option<usize>,
    /// Largest linking radius used, standardised units (sample mode).
    pub cluster_radius: Option<f64>,
    pub empty: bool,
}

impl PredictionRegion {
    pub fn component_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_components];
        for p in &self.points {
            sizes[p.component] += 1;
        }
        sizes
    }

    /// Checks the structural invariants; used when reading region files.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Format(format!("region: {m}")));
        self.threshold.validate()?;
        if self.threshold.epsilon != self.epsilon {
            return fail("epsilon differs from threshold epsilon");
        }
        if self.label_dim == 0 {
            return fail("label dimension is zero");
        }
        if !self.label_log_jacobian.is_finite() {
            return fail("non-finite label_log_jacobian");
        }
        if self.empty != self.points.is_empty() {
            return fail("empty flag disagrees with point count");
        }
        let mut used = vec![false; self.n_components];
        for p in &self.points {
            if p.coords.len() != self.label_dim || p.coords.iter().any(|c| !c.is_finite()) {
                return fail("point has wrong dimension or non-finite coordinates");
            }
            if !p.log_density.is_finite() || !self.threshold.accepts(p.log_density) {
                return fail("point log-density is not above the threshold");
            }
            match used.get_mut(p.component) {
                Some(u) => *u = true,
                None => return fail("component id out of range"),
            }
        }
        if used.iter().any(|u| !u) {
            return fail("component ids are not contiguous");
        }
        let v = &self.volume;
        if !(v.value.is_finite() && v.value >= 0.0) || v.std_error.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
            return fail("invalid volume");
        }
        match self.mode {
            RegionMode::Grid => {
                let grid = match &self.grid {
                    Some(g) => g,
                    None => return fail("grid region without grid spec"),
                };
                grid.validate()?;
                if grid.axes.len() != self.label_dim || v.method != VolumeMethod::GridCellSum {
                    return fail("grid spec or volume method mismatch");
                }
            }
            RegionMode::FlowSamples => {
                let n = match self.n_samples {
                    Some(n) if n >= 1 => n,
                    _ => return fail("sample region without sample count"),
                };
                if self.points.len() > n || v.method != VolumeMethod::ImportanceSampling {
                    return fail("sample count or volume method mismatch");
                }
            }
        }
        Ok(())
    }
}

/// Recomputes the volume from the region's own contents.
///
/// Grid regions sum accepted cells. Sample regions use the importance
/// estimate `(1/N) Σ_accepted 1/p(x_i)` over all `N` drawn samples, with the
/// standard error of that mean.
pub fn estimate_volume(region: &PredictionRegion) -> VolumeEstimate {
    match region.mode {
        RegionMode::Grid => {
            let cell = region.grid.as_ref().map_or(0.0, GridSpec::cell_volume);
            VolumeEstimate {
                value: region.points.len() as f64 * cell,
                std_error: None,
                method: VolumeMethod::GridCellSum,
            }
        }
        RegionMode::FlowSamples => {
            let n = region.n_samples.unwrap_or(0).max(1) as f64;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for p in &region.points {
                let w = (-(p.log_density + region.label_log_jacobian)).exp();
                sum += w;
                sum_sq += w * w;
            }
            let mean = sum / n;
            let var = if n > 1.0 {
                ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            VolumeEstimate {
                value: mean,
                std_error: Some((var / n).sqrt()),
                method: VolumeMethod::ImportanceSampling,
            }
        }
    }
}
