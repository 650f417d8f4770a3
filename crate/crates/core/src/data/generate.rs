use std::collections::BTreeMap;

use super::{Provenance, SeriesDataset};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const PARTICLE_DAMPING: f64 = 0.995;
const OMEGA_RANGE: (f64, f64) = (0.1, 0.5);

/// Bimodal futures sit at `+BIMODAL_MODE` or `-BIMODAL_MODE`.
pub const BIMODAL_MODE: [f64; 2] = [1.0, 1.0];
pub const BIMODAL_MODE_STD: f64 = 0.05;
const BIMODAL_CONTEXT_SIGMA: f64 = 0.05;

fn check_dims(n: usize, t: usize, h: usize) -> Result<()> {
    if n == 0 || t == 0 || h == 0 {
        return Err(Error::Input(format!(
            "n, context length and horizon must be at least 1 (got {n}, {t}, {h})"
        )));
    }
    Ok(())
}

/// One damped-rotation trajectory `x_{t+1} = ρ R(ω) x_t + σ ξ_t`.
fn rotation_trajectory(rng: &mut SeededRng, len: usize, sigma: f64) -> (f64, Vec<Vec<f64>>) {
    let omega = rng.uniform_range(OMEGA_RANGE.0, OMEGA_RANGE.1);
    let (sin, cos) = omega.sin_cos();
    let mut x = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
    let mut rows = Vec::with_capacity(len);
    rows.push(x.to_vec());
    for _ in 1..len {
        let noise = [rng.normal(), rng.normal()];
        x = [
            PARTICLE_DAMPING * (cos * x[0] - sin * x[1]) + sigma * noise[0],
            PARTICLE_DAMPING * (sin * x[0] + cos * x[1]) + sigma * noise[1],
        ];
        rows.push(x.to_vec());
    }
    (omega, rows)
}

/// Particle-style 2-d trajectories; also returns each series' rotation rate.
pub fn gen_particle_with_frequencies(
    n: usize,
    context_len: usize,
    horizon: usize,
    sigma: f64,
    seed: u64,
) -> Result<(SeriesDataset, Vec<f64>)> {
    check_dims(n, context_len, horizon)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("noise std must be positive, got {sigma}")));
    }
    let mut rng = SeededRng::new(seed);
    let (omegas, series): (Vec<_>, Vec<_>) = (0..n)
        .map(|_| rotation_trajectory(&mut rng, context_len + horizon, sigma))
        .unzip();
    let params = BTreeMap::from([
        ("sigma".to_string(), sigma),
        ("damping".to_string(), PARTICLE_DAMPING),
    ]);
    let ds = SeriesDataset::new(
        context_len,
        horizon,
        2,
        series,
        Provenance::Generator {
            name: "particle".into(),
            seed,
            params,
        },
    )?;
    Ok((ds, omegas))
}

pub fn gen_particle(n: usize, context_len: usize, horizon: usize, sigma: f64, seed: u64) -> Result<SeriesDataset> {
    gen_particle_with_frequencies(n, context_len, horizon, sigma, seed).map(|(ds, _)| ds)
}

/// Particle contexts followed by futures drawn from one of two modes.
///
/// The mode is a fair coin flip per series, independent of the context, and
/// shared by every future step. Returns `true` for the `+BIMODAL_MODE` mode.
pub fn gen_bimodal_labeled(
    n: usize,
    context_len: usize,
    horizon: usize,
    seed: u64,
) -> Result<(SeriesDataset, Vec<bool>)> {
    check_dims(n, context_len, horizon)?;
    let mut rng = SeededRng::new(seed);
    let mut modes = Vec::with_capacity(n);
    let mut series = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, mut rows) = rotation_trajectory(&mut rng, context_len, BIMODAL_CONTEXT_SIGMA);
        let positive = rng.uniform() < 0.5;
        let sign = if positive { 1.0 } else { -1.0 };
        for _ in 0..horizon {
            rows.push(
                BIMODAL_MODE
                    .iter()
                    .map(|m| sign * m + BIMODAL_MODE_STD * rng.normal())
                    .collect(),
            );
        }
        modes.push(positive);
        series.push(rows);
    }
    let params = BTreeMap::from([
        ("mode_std".to_string(), BIMODAL_MODE_STD),
        ("context_sigma".to_string(), BIMODAL_CONTEXT_SIGMA),
    ]);
    let ds = SeriesDataset::new(
        context_len,
        horizon,
        2,
        series,
        Provenance::Generator {
            name: "bimodal".into(),
            seed,
            params,
        },
    )?;
    Ok((ds, modes))
}

pub fn gen_bimodal(n: usize, context_len: usize, horizon: usize, seed: u64) -> Result<SeriesDataset> {
    gen_bimodal_labeled(n, context_len, horizon, seed).map(|(ds, _)| ds)
}
