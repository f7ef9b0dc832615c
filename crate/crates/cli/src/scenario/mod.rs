//! Scenario dispatch and shared sampling helpers.
//!
//! Every scenario consumes a `RunConfig` and produces verdicts plus tables.
//! Randomness always flows through a counter-based generator keyed by the
//! config seed and a per-stage stream id, so identical configs reproduce
//! identical numbers no matter how the work is scheduled.

pub mod bonnet_myers;
pub mod cones;
pub mod congruence;
pub mod geodesic;
pub mod suite;
pub mod surface;

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use finsleray::geodesic::GeodesicError;
use finsleray::geometry::{CausalSide, EffectiveDim, WeightedRicciParams};
use finsleray::model::{CausalClass, SpacetimeModel};

use crate::config::{ConfigError, RunConfig, Scenario};
use crate::report::{ScenarioResult, Table, Verdict};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or command line; maps to exit code 64.
    #[error("config error: {0}")]
    Config(String),
    /// Unexpected runtime failure; maps to exit code 2.
    #[error("{0}")]
    Failure(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Config(e.to_string())
    }
}

/// Input-shaped geodesic failures are the user's responsibility and exit 64;
/// anything else is a runtime failure the verdicts must report.
pub fn geodesic_error_is_config(e: &GeodesicError) -> bool {
    matches!(
        e,
        GeodesicError::Model(_)
            | GeodesicError::NotCausal { .. }
            | GeodesicError::BadInput(_)
            | GeodesicError::SpacelikeTangent { .. }
    )
}

#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
    pub timing: Vec<(String, f64)>,
}

impl ScenarioOutput {
    pub fn new() -> ScenarioOutput {
        ScenarioOutput::default()
    }
}

pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioResult, CliError> {
    let started = Instant::now();
    let output = match cfg.scenario {
        Scenario::Geodesic => geodesic::run(cfg)?,
        Scenario::Congruence => congruence::run(cfg)?,
        Scenario::Cones => cones::run(cfg)?,
        Scenario::BonnetMyers => bonnet_myers::run(cfg)?,
        Scenario::Surface => surface::run(cfg)?,
        Scenario::Suite => suite::run(cfg)?,
    };
    let mut result = ScenarioResult::new(cfg.scenario.name());
    result.verdicts = output.verdicts;
    result.tables = output.tables;
    result.timing = output.timing;
    result
        .timing
        .push(("total".to_string(), started.elapsed().as_secs_f64()));
    Ok(result)
}

/// Deterministic generator for one named stage of one run.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Start and end of the configured parameter interval.
pub fn span_of(cfg: &RunConfig) -> (f64, f64) {
    (cfg.numeric.t_span[0], cfg.numeric.t_span[1])
}

pub fn base_point(cfg: &RunConfig, model: &SpacetimeModel) -> Result<Vec<f64>, CliError> {
    let x0 = match &cfg.numeric.x0 {
        Some(x) => x.clone(),
        None => model.chart().center(),
    };
    if x0.len() != model.dim() {
        return Err(CliError::Config(format!(
            "x0 has {} entries, the model needs {}",
            x0.len(),
            model.dim()
        )));
    }
    if !model.chart().contains(&x0) {
        return Err(CliError::Config("x0 lies outside the model chart".into()));
    }
    Ok(x0)
}

pub fn initial_velocity(cfg: &RunConfig, model: &SpacetimeModel) -> Result<Vec<f64>, CliError> {
    let v0 = match &cfg.numeric.v0 {
        Some(v) => v.clone(),
        None => model.future_seed().to_vec(),
    };
    if v0.len() != model.dim() {
        return Err(CliError::Config(format!(
            "v0 has {} entries, the model needs {}",
            v0.len(),
            model.dim()
        )));
    }
    Ok(v0)
}

/// Draw a future-directed timelike vector near the model's cone, with a
/// random tilt and scale. Falls back to the future seed if rejection
/// sampling starves, which only happens for extremely narrow cones.
pub fn random_future_timelike(
    model: &SpacetimeModel,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let seed: Vec<f64> = model.future_seed().to_vec();
    let snorm = seed.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    for _ in 0..4000 {
        let spread: f64 = rng.gen_range(0.01..0.45);
        let scale: f64 = rng.gen_range(0.5..2.0);
        let v: Vec<f64> = seed
            .iter()
            .map(|&s| scale * (s + snorm * spread * rng.gen_range(-1.0..1.0)))
            .collect();
        let timelike = matches!(model.classify_vector(x, &v), Ok(CausalClass::Timelike));
        if timelike && model.is_future_directed(x, &v).unwrap_or(false) {
            return v;
        }
    }
    seed
}

/// Push a future timelike vector onto the cone boundary: rotate v along the
/// great circle toward a transverse direction until the causal quadratic
/// changes sign, then bisect. A straight-line march can fail when the march
/// direction itself lies on a cone boundary (multi-cone models have null
/// coordinate axes), but a cone component meets any 2-plane through v in a
/// convex sector strictly narrower than a half circle, so the rotation
/// always crosses the boundary of v's component at some angle in (0, pi),
/// whichever transverse direction is used.
pub fn make_null(model: &SpacetimeModel, x: &[f64], timelike: &[f64]) -> Option<Vec<f64>> {
    let q0 = model.causal_quadratic(x, timelike).ok()?;
    if !(q0 < 0.0) {
        return None;
    }
    let dim = timelike.len();
    let vnorm = timelike.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(vnorm > 0.0) {
        return None;
    }
    let vhat: Vec<f64> = timelike.iter().map(|a| a / vnorm).collect();

    // Transverse candidates: each coordinate axis orthogonalized against v,
    // best first. The march result does not depend on the sign convention.
    let mut axes: Vec<(f64, usize)> = (0..dim)
        .map(|j| (1.0 - vhat[j] * vhat[j], j))
        .collect();
    axes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    for &(resid2, j) in &axes {
        if resid2 < 1e-12 {
            continue;
        }
        let mut w: Vec<f64> = (0..dim)
            .map(|a| (if a == j { 1.0 } else { 0.0 }) - vhat[j] * vhat[a])
            .collect();
        let wnorm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in w.iter_mut() {
            *a /= wnorm;
        }
        let v_at = |s: f64| -> Vec<f64> {
            let (c, sn) = (s.cos(), s.sin());
            timelike
                .iter()
                .zip(&w)
                .map(|(a, b)| c * a + sn * vnorm * b)
                .collect()
        };
        let q_at = |s: f64| model.causal_quadratic(x, &v_at(s)).ok();

        let step = std::f64::consts::PI / 400.0;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=400 {
            let s = step * k as f64;
            match q_at(s) {
                Some(q) if q >= 0.0 => {
                    hi = Some(s);
                    break;
                }
                Some(_) => lo = s,
                None => break,
            }
        }
        let Some(mut hi) = hi else {
            continue;
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            match q_at(mid) {
                Some(q) if q >= 0.0 => hi = mid,
                Some(_) => lo = mid,
                None => return None,
            }
        }
        return Some(v_at(0.5 * (lo + hi)));
    }
    None
}

/// Sample an admissible (N, epsilon) pair for the given causal side of an
/// n-space-dimension model. Covers the left branch N <= base, the right
/// branch N >= n, N = n itself, and N = +inf, with epsilon spread over the
/// admissible interval but kept off its boundary.
pub fn random_admissible_pair(
    rng: &mut ChaCha8Rng,
    n: usize,
    side: CausalSide,
) -> WeightedRicciParams {
    let base = match side {
        CausalSide::Timelike => 0.0,
        CausalSide::Null => 1.0,
    };
    let nf = n as f64;
    let branch: f64 = rng.gen_range(0.0..1.0);
    let n_eff = if branch < 0.35 {
        EffectiveDim::Finite(base - rng.gen_range(0.0..8.0))
    } else if branch < 0.70 {
        EffectiveDim::Finite(nf + rng.gen_range(1e-6..9.0))
    } else if branch < 0.85 {
        EffectiveDim::Finite(nf)
    } else {
        EffectiveDim::PlusInf
    };
    let bound = match n_eff {
        EffectiveDim::PlusInf => 1.0,
        EffectiveDim::Finite(nn) if (nn - nf).abs() < 1e-12 => 3.0,
        EffectiveDim::Finite(nn) => ((nn - base) / (nn - nf)).sqrt(),
    };
    let epsilon = if rng.gen_range(0.0..1.0) < 0.15 {
        0.0
    } else {
        bound * rng.gen_range(-0.95..0.95)
    };
    WeightedRicciParams {
        n_eff,
        epsilon,
        side,
    }
}
