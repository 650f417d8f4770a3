use super::cluster::{cluster_components, median_nearest_neighbour_distance, Adjacency};
use super::{estimate_volume, ClusterOptions, SampleLinkage, PredictionRegion, RegionMode, RegionPoint, VolumeEstimate, VolumeMethod};
use crate::conformal::{threshold, CalibrationRecord};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::SeededRng;

const NN_QUERIES: usize = 1000;

/// Draws `n_samples` labels from the flow and keeps those whose score clears
/// the threshold for `epsilon`.
///
/// Kept samples are clustered in standardised coordinates under
/// `options.linkage`.
pub fn mc_region(
    model: &FlowModel,
    context: &[Vec<f64>],
    record: &CalibrationRecord,
    epsilon: f64,
    n_samples: usize,
    rng: &mut SeededRng,
    options: &ClusterOptions,
) -> Result<PredictionRegion> {
    if n_samples == 0 {
        return Err(Error::Input("need at least one flow sample".into()));
    }
    options.linkage.validate()?;
    record.check_model(model)?;
    let th = threshold(record, epsilon)?;
    let h = model.condition(context)?;

    let samples = model.sample_given(&h, rng, n_samples)?;
    let mut points = Vec::new();
    let mut kept_std = Vec::new();
    for y_std in samples {
        let y = model.stats.label_inverse(&y_std);
        let lp = model.log_prob_raw_label(&h, &y)?;
        if !lp.is_finite() {
            return Err(Error::Density(format!("non-finite log-density {lp} at a flow sample")));
        }
        if th.accepts(lp) {
            points.push(RegionPoint {
                coords: y,
                log_density: lp,
                component: 0,
            });
            kept_std.push(y_std);
        }
    }

    let l = model.label_dim();
    let radii: Vec<f64> = match options.linkage {
        SampleLinkage::DensityAdaptive { expected_neighbours } => {
            let base = expected_neighbours.ln() - (n_samples as f64).ln() - ln_unit_ball_volume(l);
            points.iter().map(|p| ((base - p.log_density) / l as f64).exp()).collect()
        }
        SampleLinkage::MedianNearestNeighbour { factor } => {
            let r = median_nearest_neighbour_distance(&kept_std, NN_QUERIES).map_or(0.0, |d| factor * d);
            vec![r; points.len()]
        }
        SampleLinkage::FixedRadius { radius } => vec![radius; points.len()],
    };
    let labels = cluster_components(&kept_std, &Adjacency::PerPoint(&radii));
    let radius = radii.iter().copied().reduce(f64::max);
    for (p, c) in points.iter_mut().zip(&labels) {
        p.component = *c;
    }
    let n_components = labels.iter().max().map_or(0, |m| m + 1);
    let mut region = PredictionRegion {
        mode: RegionMode::FlowSamples,
        epsilon,
        threshold: th,
        label_dim: model.label_dim(),
        empty: points.is_empty(),
        points,
        n_components,
        volume: VolumeEstimate {
            value: 0.0,
            std_error: None,
            method: VolumeMethod::ImportanceSampling,
        },
        label_log_jacobian: model.stats.label_log_jacobian(),
        model_hash: model.hash(),
        grid: None,
        n_samples: Some(n_samples),
        cluster_radius: radius,
    };
    region.volume = estimate_volume(&region);
    Ok(region)
}

/// `ln(π^{L/2} / Γ(L/2 + 1))`.
pub(crate) fn ln_unit_ball_volume(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    // Γ(L/2 + 1) by the recurrence down to Γ(1) = 1 or Γ(1/2) = √π.
    let mut ln_gamma = if dim % 2 == 0 { 0.0 } else { 0.5 * std::f64::consts::PI.ln() };
    let mut x = half;
    while x > 0.0 {
        ln_gamma += x.ln();
        x -= 1.0;
    }
    half * std::f64::consts::PI.ln() - ln_gamma
}
