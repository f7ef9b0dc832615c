//! Full verification battery: twelve invariant families, one verdict each.
//!
//! Every family is a self-contained experiment over the builtin model zoo,
//! driven by per-family deterministic random streams, so the battery gives
//! the same verdicts and the same summary bytes on every invocation with
//! the same seed.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use finsleray::congruence::{
    bishop_concavity, custom_congruence_tensor, detect_conjugate_points,
    evolve_weighted_congruence, point_congruence_tensor, JacobiTensorPath, S0Outcome, TensorKind,
};
use finsleray::geodesic::{
    covariant_derivative_field, integrate_geodesic, orthonormal_frame, transport_frame,
    GeodesicOptions, GeodesicRun,
};
use finsleray::geometry::{
    c_coefficient, connection_at, curvature_at, metric_inner, CausalSide, EffectiveDim,
    WeightedRicciParams,
};
use finsleray::model::{SpacetimeModel, WarpProfile, WeightKind};
use finsleray::oracle::LorentzOracle;
use finsleray::surface::{analyze_surface, surface_normal_congruence, NormalSide, SurfacePatch};

use crate::config::{
    EffDim, Format, ModelConfig, ModelKind, NumericConfig, OutputConfig, RunConfig, Scenario,
};
use crate::report::{Field, ScenarioResult, Table, Verdict};
use crate::scenario::{
    self, make_null, random_admissible_pair, random_future_timelike, rng_stream, CliError,
    ScenarioOutput,
};

const REL_HOMOGENEITY: f64 = 1e-9;
const REL_REDUCTION: f64 = 1e-6;
const REL_ENDOMORPHISM: f64 = 1e-7;
const DRIFT_TOL: f64 = 1e-7;
const RESIDUAL_TOL: f64 = 1e-6;

/// One evolved weighted run kept alive across families: the identity
/// battery produces them, the concavity family consumes them.
struct WeightedRunData {
    run: GeodesicRun,
    tensor: JacobiTensorPath,
    n_eff: EffectiveDim,
    epsilon: f64,
    timelike: bool,
}

pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let mut out = ScenarioOutput::new();
    let seed = cfg.seed;
    let mut battery: Vec<WeightedRunData> = Vec::new();

    let families: Vec<(&'static str, Box<dyn FnOnce(&mut Vec<WeightedRunData>) -> Verdict>)> = vec![
        (
            "homogeneity_metric_battery",
            Box::new(move |_| guard("homogeneity_metric_battery", || c1_homogeneity(seed))),
        ),
        (
            "lorentzian_reduction",
            Box::new(move |_| guard("lorentzian_reduction", || c2_reduction(seed))),
        ),
        (
            "curvature_endomorphism_laws",
            Box::new(move |_| guard("curvature_endomorphism_laws", || c3_endomorphism(seed))),
        ),
        (
            "beem_cone_census",
            Box::new(move |_| guard("beem_cone_census", c4_census)),
        ),
        (
            "geodesic_conservation",
            Box::new(move |_| guard("geodesic_conservation", || c5_conservation(seed))),
        ),
        (
            "weighted_identity_residuals",
            Box::new(move |acc| guard("weighted_identity_residuals", || c6_identities(seed, acc))),
        ),
        (
            "epsilon_range_c_coefficient",
            Box::new(move |_| guard("epsilon_range_c_coefficient", || c7_coefficient(seed))),
        ),
        (
            "conjugate_point_quantitative",
            Box::new(move |_| guard("conjugate_point_quantitative", || c8_conjugate(seed))),
        ),
        (
            "focusing_bound_s0",
            Box::new(move |_| guard("focusing_bound_s0", || c9_focusing(seed))),
        ),
        (
            "weighted_bishop",
            Box::new(move |acc| guard("weighted_bishop", || c10_bishop(acc))),
        ),
        (
            "trapped_surface_machinery",
            Box::new(move |_| guard("trapped_surface_machinery", c11_surfaces)),
        ),
        (
            "determinism_json",
            Box::new(move |_| guard("determinism_json", || c12_determinism(seed))),
        ),
    ];

    let mut table = Table::new("suite", &["family", "status", "margin"]);
    for (name, f) in families {
        let started = Instant::now();
        let verdict = f(&mut battery);
        let dt = started.elapsed().as_secs_f64();
        eprintln!("[suite] {name}: {} ({dt:.2}s)", verdict.status.label().trim_end());
        out.timing.push((name.to_string(), dt));
        table.push(vec![
            Field::Text(verdict.key.clone()),
            Field::Text(verdict.status.label().to_string()),
            match verdict.margin {
                Some(m) => Field::Num(m),
                None => Field::Text(String::new()),
            },
        ]);
        out.verdicts.push(verdict);
    }
    out.tables.push(table);
    Ok(out)
}

fn guard(key: &'static str, f: impl FnOnce() -> Result<Verdict, CliError>) -> Verdict {
    match f() {
        Ok(v) => v,
        Err(e) => Verdict::fail(key, format!("family aborted: {e}"), None),
    }
}

/// The five builtin models the batteries sweep, two of them weighted so
/// the weight checks see nontrivial fields.
fn battery_models() -> Result<Vec<SpacetimeModel>, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    Ok(vec![
        SpacetimeModel::minkowski(4)
            .map_err(fail)?
            .with_weight(WeightKind::DirectionDependent { strength: 0.3 })
            .map_err(fail)?,
        SpacetimeModel::warped_product(4, WarpProfile::Cosh)
            .map_err(fail)?
            .with_weight(WeightKind::LinearT { rate: 0.4 })
            .map_err(fail)?,
        SpacetimeModel::randers_perturbed(4, 0.1).map_err(fail)?,
        SpacetimeModel::beem(3).map_err(fail)?,
        SpacetimeModel::anti_de_sitter(4, 2.0).map_err(fail)?,
    ])
}

fn interior_point(model: &SpacetimeModel, rng: &mut ChaCha8Rng, spread: f64) -> Vec<f64> {
    model
        .chart()
        .center()
        .iter()
        .map(|&c| c + rng.gen_range(-spread..spread))
        .collect()
}

fn rel(err: f64, scale: f64) -> f64 {
    err / (1.0 + scale.abs())
}

fn c1_homogeneity(seed: u64) -> Result<Verdict, CliError> {
    let models = battery_models()?;
    let mut worst = 0.0_f64;
    let mut signature_ok = true;
    for (mi, model) in models.iter().enumerate() {
        let mut rng = rng_stream(seed, 0x11 + mi as u64);
        let spread = 0.25 * chart_spread(model);
        for _ in 0..1000 {
            let x = interior_point(model, &mut rng, spread);
            let v = random_future_timelike(model, &x, &mut rng);
            let lam: f64 = rng.gen_range(0.3..3.0);
            let vl: Vec<f64> = v.iter().map(|a| a * lam).collect();
            let q = model
                .causal_quadratic(&x, &v)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let ql = model
                .causal_quadratic(&x, &vl)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            worst = worst.max(rel((ql - lam * lam * q).abs(), lam * lam * q));
            if model.has_weight() {
                let psi = model
                    .weight(&x, &v)
                    .map_err(|e| CliError::Failure(e.to_string()))?;
                let psil = model
                    .weight(&x, &vl)
                    .map_err(|e| CliError::Failure(e.to_string()))?;
                worst = worst.max(rel((psil - psi).abs(), psi));
            }
            let g = model
                .metric_matrix(&x, &v)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let gvv = metric_inner(&g, &v, &v);
            worst = worst.max(rel((gvv - q).abs(), q));
            let eig = SymmetricEigen::new(g.clone()).eigenvalues;
            let top = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            let neg = eig.iter().filter(|&&e| e < -1e-12 * top).count();
            let pos = eig.iter().filter(|&&e| e > 1e-12 * top).count();
            if neg != 1 || pos != model.dim() - 1 {
                signature_ok = false;
            }
        }
    }
    Ok(Verdict::check(
        "homogeneity_metric_battery",
        worst <= REL_HOMOGENEITY && signature_ok,
        format!(
            "5 models x 1000 cone vectors: L 2-homogeneous, psi 0-homogeneous, \
             g_v(v,v) = 2L, Lorentzian signature{}; worst relative error {worst:.3e}",
            if signature_ok {
                ""
            } else {
                " (signature violated)"
            }
        ),
        Some(REL_HOMOGENEITY - worst),
    ))
}

fn chart_spread(model: &SpacetimeModel) -> f64 {
    model
        .chart()
        .bounds()
        .iter()
        .map(|(lo, hi)| 0.5 * (hi - lo))
        .fold(f64::INFINITY, f64::min)
        .min(2.0)
}

fn c2_reduction(seed: u64) -> Result<Verdict, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    let models = [
        SpacetimeModel::minkowski(4).map_err(fail)?,
        SpacetimeModel::warped_product(4, WarpProfile::Cosh).map_err(fail)?,
    ];
    let mut worst = 0.0_f64;
    for (mi, model) in models.iter().enumerate() {
        let oracle = LorentzOracle::new(model).map_err(|e| CliError::Failure(e.to_string()))?;
        let mut rng = rng_stream(seed, 0x21 + mi as u64);
        for _ in 0..20 {
            let x = interior_point(model, &mut rng, 0.8);
            let v = random_future_timelike(model, &x, &mut rng);
            let conn = connection_at(model, &x, &v).map_err(|e| CliError::Failure(e.to_string()))?;
            let christ = oracle
                .christoffel(&x)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            for a in 0..model.dim() {
                let scale = christ[a].norm();
                worst = worst.max(rel((&conn.gamma_tilde[a] - &christ[a]).norm(), scale));
                worst = worst.max(rel((&conn.gamma[a] - &christ[a]).norm(), scale));
            }
            let curv = curvature_at(model, &x, &v).map_err(|e| CliError::Failure(e.to_string()))?;
            let tidal = oracle
                .tidal(&x, &v)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            worst = worst.max(rel((&curv.r_matrix - &tidal).norm(), tidal.norm()));
            let field = |y: &[f64]| -> Vec<f64> {
                vec![
                    (y[1] + 0.3).sin() + 1.2,
                    (y[0] * 0.6).cos(),
                    (y[2] * 0.7 - y[0] * 0.2).sin() + 0.4,
                    (y[3] - 0.4).cos() * 0.8,
                ]
            };
            let dv = covariant_derivative_field(model, &x, &v, &v, &field)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let dv_oracle = oracle
                .covariant_derivative(&x, &v, &field)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let scale = dv_oracle.iter().map(|a| a * a).sum::<f64>().sqrt();
            let diff = dv
                .iter()
                .zip(&dv_oracle)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(rel(diff, scale));
        }
    }
    Ok(Verdict::check(
        "lorentzian_reduction",
        worst <= REL_REDUCTION,
        format!(
            "quadratic models reproduce the Lorentzian connection, tidal operator, \
             and covariant derivative of the difference-quotient oracle; worst relative error {worst:.3e}"
        ),
        Some(REL_REDUCTION - worst),
    ))
}

fn c3_endomorphism(seed: u64) -> Result<Verdict, CliError> {
    let models = battery_models()?;
    let mut worst = 0.0_f64;
    for (mi, model) in models.iter().enumerate() {
        // Sampling is sequential for determinism; the heavy curvature
        // evaluations fan out over the drawn states.
        let mut rng = rng_stream(seed, 0x31 + mi as u64);
        let spread = 0.25 * chart_spread(model);
        let mut states: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(500);
        let mut attempts = 0usize;
        while states.len() < 500 {
            attempts += 1;
            if attempts > 10_000 {
                return Err(CliError::Failure(format!(
                    "{}: could not draw 500 causal states (cone sampling starved)",
                    model.label()
                )));
            }
            let x = interior_point(model, &mut rng, spread);
            let v = random_future_timelike(model, &x, &mut rng);
            if states.len() % 5 == 4 {
                match make_null(model, &x, &v) {
                    Some(vn) => states.push((x, vn)),
                    None => continue,
                }
            } else {
                states.push((x, v));
            }
        }
        let family_worst = states
            .par_iter()
            .map(|(x, v)| {
                let curv = curvature_at(model, x, v).map_err(|e| e.to_string())?;
                let g = model.metric_matrix(x, v).map_err(|e| e.to_string())?;
                let r = &curv.r_matrix;
                let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let mut rv = vec![0.0; v.len()];
                for a in 0..v.len() {
                    for b in 0..v.len() {
                        rv[a] += r[(a, b)] * v[b];
                    }
                }
                let rv_norm = rv.iter().map(|a| a * a).sum::<f64>().sqrt();
                let annihilation = rel(rv_norm, r.norm() * vnorm);
                let s = &g * r;
                let symmetry = rel((&s - s.transpose()).norm(), s.norm());
                Ok::<f64, String>(annihilation.max(symmetry))
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
            .map_err(CliError::Failure)?;
        worst = worst.max(family_worst);
    }
    Ok(Verdict::check(
        "curvature_endomorphism_laws",
        worst <= REL_ENDOMORPHISM,
        format!(
            "R_v(v) = 0 and g_v-symmetry of the curvature endomorphism over \
             500 causal vectors per model; worst relative error {worst:.3e}"
        ),
        Some(REL_ENDOMORPHISM - worst),
    ))
}

fn c4_census() -> Result<Verdict, CliError> {
    let mut bad = None;
    for k in 1..=6u32 {
        let model =
            SpacetimeModel::beem(k).map_err(|e| CliError::Failure(e.to_string()))?;
        let count = model
            .count_cone_components(&model.chart().center(), 1024)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        if count != k as usize {
            bad = Some((k, count));
            break;
        }
    }
    Ok(match bad {
        None => Verdict::pass(
            "beem_cone_census",
            "the k-cone family shows exactly k future components for k in 1..=6 \
             under an angular sweep of at least 1024 samples",
            None,
        ),
        Some((k, count)) => Verdict::fail(
            "beem_cone_census",
            format!("k = {k} produced {count} future cone component(s)"),
            None,
        ),
    })
}

fn c5_conservation(seed: u64) -> Result<Verdict, CliError> {
    let models = battery_models()?;
    let spans = [20.0, 18.0, 20.0, 20.0, 2.0];
    let mut worst = 0.0_f64;
    let mut rng = rng_stream(seed, 0x51);
    for (model, &t_end) in models.iter().zip(&spans) {
        let x0 = model.chart().center();
        let seed_dir: Vec<f64> = model.future_seed().to_vec();
        let snorm = seed_dir.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut v0 = seed_dir.clone();
        // Small random tilt keeps the run generic without leaving the cone.
        for a in v0.iter_mut().skip(1) {
            *a += 0.05 * snorm * rng.gen_range(-1.0..1.0);
        }
        let opts = GeodesicOptions {
            tol: 1e-10,
            ..GeodesicOptions::default()
        };
        let run = integrate_geodesic(model, &x0, &v0, (0.0, t_end), &[], &opts)
            .map_err(|e| CliError::Failure(format!("{}: {e}", model.label())))?;
        let drift = rel(run.l_drift(), run.l_value());
        worst = worst.max(drift);
    }
    Ok(Verdict::check(
        "geodesic_conservation",
        worst <= DRIFT_TOL,
        format!(
            "sup |L(t) - L(0)| stays within {DRIFT_TOL:.0e} relative over spans \
             up to t = 20 at tol 1e-10 on all builtin models; worst {worst:.3e}"
        ),
        Some(DRIFT_TOL - worst),
    ))
}

struct IdentityCase {
    model: SpacetimeModel,
    t_end: f64,
    timelike: bool,
}

fn identity_cases() -> Result<Vec<IdentityCase>, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    let mk = |timelike: bool,
              t_end: f64,
              model: SpacetimeModel|
     -> IdentityCase { IdentityCase { model, t_end, timelike } };
    Ok(vec![
        mk(
            true,
            4.0,
            SpacetimeModel::minkowski(4)
                .map_err(fail)?
                .with_weight(WeightKind::LinearT { rate: 0.25 })
                .map_err(fail)?,
        ),
        mk(
            true,
            3.0,
            SpacetimeModel::warped_product(4, WarpProfile::Cosh)
                .map_err(fail)?
                .with_weight(WeightKind::LinearT { rate: 0.3 })
                .map_err(fail)?,
        ),
        mk(
            true,
            1.6,
            SpacetimeModel::anti_de_sitter(4, 2.0)
                .map_err(fail)?
                .with_weight(WeightKind::DirectionDependent { strength: 0.15 })
                .map_err(fail)?,
        ),
        mk(
            false,
            4.0,
            SpacetimeModel::minkowski(4)
                .map_err(fail)?
                .with_weight(WeightKind::LinearT { rate: 0.25 })
                .map_err(fail)?,
        ),
        mk(
            false,
            3.0,
            SpacetimeModel::warped_product(4, WarpProfile::Cosh)
                .map_err(fail)?
                .with_weight(WeightKind::LinearT { rate: 0.3 })
                .map_err(fail)?,
        ),
        mk(
            false,
            1.6,
            SpacetimeModel::anti_de_sitter(4, 2.0)
                .map_err(fail)?
                .with_weight(WeightKind::LinearT { rate: 0.2 })
                .map_err(fail)?,
        ),
    ])
}

/// (N, epsilon) pairs spanning the admissible set: the left branch, +inf,
/// near the boundary on the right branch, and N equal to the spatial
/// dimension, for each causal side.
fn identity_pairs(timelike: bool) -> Vec<(EffectiveDim, f64)> {
    if timelike {
        vec![
            (EffectiveDim::Finite(-2.0), 0.0),
            (EffectiveDim::PlusInf, 0.6),
            (EffectiveDim::Finite(7.0), 0.95 * (7.0_f64 / 4.0).sqrt()),
            (EffectiveDim::Finite(3.0), 0.8),
        ]
    } else {
        vec![
            (EffectiveDim::Finite(0.0), 0.0),
            (EffectiveDim::PlusInf, 0.9),
            (EffectiveDim::Finite(6.0), 0.95 * (5.0_f64 / 3.0).sqrt()),
            (EffectiveDim::Finite(3.0), 0.5),
        ]
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let e = rng.gen_range(-scale..scale);
            s[(i, j)] = e;
            s[(j, i)] = e;
        }
    }
    s
}

fn c6_identities(seed: u64, acc: &mut Vec<WeightedRunData>) -> Result<Verdict, CliError> {
    let cases = identity_cases()?;
    let mut worst = 0.0_f64;
    let mut runs = 0usize;
    let mut rng = rng_stream(seed, 0x61);
    for case in cases {
        let model = &case.model;
        let x0 = model.chart().center();
        let v_seed = random_future_timelike(model, &x0, &mut rng);
        let v0 = if case.timelike {
            v_seed
        } else {
            make_null(model, &x0, &v_seed).ok_or_else(|| {
                CliError::Failure("could not push a battery vector onto the cone".into())
            })?
        };
        for (n_eff, eps) in identity_pairs(case.timelike) {
            let opts = GeodesicOptions::default();
            let run = integrate_geodesic(model, &x0, &v0, (0.0, case.t_end), &[eps], &opts)
                .map_err(|e| CliError::Failure(format!("{}: {e}", model.label())))?;
            let v_used = run.velocity(run.t_start());
            let legs = orthonormal_frame(model, &x0, &v_used)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let frame =
                transport_frame(&run, &legs).map_err(|e| CliError::Failure(e.to_string()))?;
            let m = legs.len();
            let j0 = DMatrix::identity(m, m);
            let j0p = random_symmetric(&mut rng, m, 0.12);
            let tensor =
                custom_congruence_tensor(&run, &frame, &j0, &j0p, TensorKind::Custom)
                    .map_err(|e| CliError::Failure(e.to_string()))?;
            let report = evolve_weighted_congruence(&run, &frame, &tensor, n_eff, eps, 48)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            let (lo, hi) = report.window;
            for k in lo..=hi {
                for series in [
                    &report.jacobi_residual,
                    &report.riccati_residual,
                    &report.raychaudhuri_residual,
                    &report.inequality_slack,
                ] {
                    let val = series[k];
                    if val.is_finite() {
                        worst = worst.max(val);
                    }
                }
            }
            runs += 1;
            acc.push(WeightedRunData {
                run,
                tensor,
                n_eff,
                epsilon: eps,
                timelike: case.timelike,
            });
        }
    }
    Ok(Verdict::check(
        "weighted_identity_residuals",
        worst <= RESIDUAL_TOL,
        format!(
            "weighted Jacobi / Riccati / Raychaudhuri residuals and the focusing \
             inequality stay within {RESIDUAL_TOL:.0e} on {runs} timelike + null runs \
             spanning the admissible (N, epsilon) set; worst {worst:.3e}"
        ),
        Some(RESIDUAL_TOL - worst),
    ))
}

fn c7_coefficient(seed: u64) -> Result<Verdict, CliError> {
    let n = 3usize;
    let mut rng = rng_stream(seed, 0x71);
    let mut min_c = f64::INFINITY;
    for k in 0..1000 {
        let side = if k % 2 == 0 {
            CausalSide::Timelike
        } else {
            CausalSide::Null
        };
        let params = random_admissible_pair(&mut rng, n, side);
        let c = c_coefficient(&params, n).map_err(|e| {
            CliError::Failure(format!(
                "admissible pair (N = {}, eps = {}) rejected: {e}",
                params.n_eff, params.epsilon
            ))
        })?;
        if !(c > 0.0) {
            return Ok(Verdict::fail(
                "epsilon_range_c_coefficient",
                format!(
                    "c(N = {}, eps = {}) = {c} is not positive",
                    params.n_eff, params.epsilon
                ),
                Some(c),
            ));
        }
        min_c = min_c.min(c);
    }

    let spot = |n_eff: EffectiveDim, eps: f64, side: CausalSide| {
        c_coefficient(
            &WeightedRicciParams {
                n_eff,
                epsilon: eps,
                side,
            },
            n,
        )
    };
    let exact = [
        (
            spot(EffectiveDim::Finite(3.0), 0.37, CausalSide::Timelike),
            1.0 / 3.0,
        ),
        (
            spot(EffectiveDim::Finite(0.0), 0.0, CausalSide::Timelike),
            1.0 / 3.0,
        ),
        (
            spot(EffectiveDim::Finite(1.0), 0.0, CausalSide::Null),
            1.0 / 2.0,
        ),
    ];
    for (got, want) in exact {
        match got {
            Ok(c) if c == want => {}
            Ok(c) => {
                return Ok(Verdict::fail(
                    "epsilon_range_c_coefficient",
                    format!("spot value c = {c} differs from the exact {want}"),
                    Some(c - want),
                ))
            }
            Err(e) => {
                return Ok(Verdict::fail(
                    "epsilon_range_c_coefficient",
                    format!("spot check rejected: {e}"),
                    None,
                ))
            }
        }
    }
    let eps_one_inf = spot(EffectiveDim::PlusInf, 1.0, CausalSide::Timelike);
    let eps_one_n = spot(EffectiveDim::Finite(3.0), 1.0, CausalSide::Timelike);
    let boundary_ok = eps_one_inf.is_err() && matches!(eps_one_n, Ok(c) if c == 1.0 / 3.0);
    Ok(Verdict::check(
        "epsilon_range_c_coefficient",
        boundary_ok,
        format!(
            "c(N, eps) > 0 on 1000 admissible pairs (min {min_c:.6}); exact spot values hold; \
             eps = 1 is rejected at N = +inf and accepted at N = n"
        ),
        Some(min_c),
    ))
}

fn point_congruence_zeros(
    model: &SpacetimeModel,
    v0: &[f64],
    t_end: f64,
) -> Result<Vec<f64>, CliError> {
    let x0 = model.chart().center();
    let opts = GeodesicOptions::default();
    let run = integrate_geodesic(model, &x0, v0, (0.0, t_end), &[], &opts)
        .map_err(|e| CliError::Failure(format!("{}: {e}", model.label())))?;
    let v_used = run.velocity(run.t_start());
    let legs =
        orthonormal_frame(model, &x0, &v_used).map_err(|e| CliError::Failure(e.to_string()))?;
    let frame = transport_frame(&run, &legs).map_err(|e| CliError::Failure(e.to_string()))?;
    let tensor =
        point_congruence_tensor(&run, &frame).map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(detect_conjugate_points(&tensor)
        .iter()
        .map(|z| z.t)
        .collect())
}

fn sweep_config(model: ModelConfig, seed: u64, k_bound: f64, n_eff: f64, t_end: f64) -> RunConfig {
    RunConfig {
        model,
        scenario: Scenario::BonnetMyers,
        numeric: NumericConfig {
            k_bound: Some(k_bound),
            n_eff: EffDim(EffectiveDim::Finite(n_eff)),
            fan: Some(8),
            t_span: [0.0, t_end],
            grid: 64,
            ..NumericConfig::default()
        },
        output: OutputConfig::default(),
        seed,
    }
}

fn c8_conjugate(seed: u64) -> Result<Verdict, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    let mut margin = f64::INFINITY;

    // Constant flag curvature: the first vanishing of det J sits at
    // pi / sqrt(K) along every unit timelike geodesic.
    let ads = SpacetimeModel::anti_de_sitter(4, 2.0).map_err(fail)?;
    let expected = std::f64::consts::PI / 2.0_f64.sqrt();
    let zeros = point_congruence_zeros(&ads, &[1.0, 0.0, 0.0, 0.0], 2.4)?;
    let first = zeros.first().copied().ok_or_else(|| {
        CliError::Failure("constant-curvature congruence never focused".into())
    })?;
    let delta = (first - expected).abs();
    if delta > 1e-3 {
        return Ok(Verdict::fail(
            "conjugate_point_quantitative",
            format!(
                "first vanishing of det J at t = {first:.9} misses pi / sqrt(K) = {expected:.9} by {delta:.3e}"
            ),
            Some(1e-3 - delta),
        ));
    }
    margin = margin.min(1e-3 - delta);

    // Unweighted sweep at N = n with K = n K_flag: the bound equals the
    // focusing time, so the sweep must pass with equality headroom.
    let sweep = scenario::bonnet_myers::run(&sweep_config(
        {
            let mut mc = ModelConfig::bare(ModelKind::AntiDeSitter);
            mc.dim = Some(4);
            mc.curvature = Some(2.0);
            mc
        },
        seed,
        6.0,
        3.0,
        2.6,
    ))?;
    for v in &sweep.verdicts {
        if v.status != crate::report::VerdictStatus::Pass {
            return Ok(Verdict::fail(
                "conjugate_point_quantitative",
                format!("unweighted diameter sweep did not pass: {}", v.invariant),
                v.margin,
            ));
        }
        if let Some(m) = v.margin {
            margin = margin.min(m);
        }
    }

    // Weighted sweep at N = 2n with a slackened K: zeros must land well
    // inside pi sqrt(N / K).
    let weighted = scenario::bonnet_myers::run(&sweep_config(
        {
            let mut mc = ModelConfig::bare(ModelKind::AntiDeSitter);
            mc.dim = Some(4);
            mc.curvature = Some(2.0);
            mc.weight = Some(crate::config::WeightConfig {
                kind: crate::config::WeightKindConfig::LinearT,
                rate: Some(0.25),
                strength: None,
                source: None,
            });
            mc
        },
        seed,
        3.0,
        6.0,
        2.6,
    ))?;
    for v in &weighted.verdicts {
        if v.status != crate::report::VerdictStatus::Pass {
            return Ok(Verdict::fail(
                "conjugate_point_quantitative",
                format!("weighted diameter sweep did not pass: {}", v.invariant),
                v.margin,
            ));
        }
    }

    // Negative curvature never focuses: comoving runs in the contracting/
    // expanding cosh warp stay nonsingular out to t = 20.
    let warped = SpacetimeModel::warped_product(4, WarpProfile::Cosh).map_err(fail)?;
    let zeros = point_congruence_zeros(&warped, &[1.0, 0.0, 0.0, 0.0], 20.0)?;
    if let Some(&t) = zeros.first() {
        return Ok(Verdict::fail(
            "conjugate_point_quantitative",
            format!("negative-curvature congruence focused at t = {t:.6}"),
            None,
        ));
    }

    Ok(Verdict::pass(
        "conjugate_point_quantitative",
        format!(
            "det J vanishes at pi / sqrt(K) within 1e-3 on constant curvature; the \
             unweighted (N = n) and weighted (N = 2n) diameter sweeps pass their bound \
             pi sqrt(N / K); negative curvature never focuses out to t = 20"
        ),
        clean(margin),
    ))
}

fn clean(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn c9_focusing(seed: u64) -> Result<Verdict, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    let mut rng = rng_stream(seed, 0x91);
    let mut counted = 0usize;
    let mut margin = f64::INFINITY;
    let mut horizons = 0usize;
    let mut attempts = 0usize;
    while counted < 20 && attempts < 60 {
        attempts += 1;
        let flavor = attempts % 3;
        let (model, t_end, timelike, n_eff) = match flavor {
            0 => {
                let rate = rng.gen_range(0.15..0.35);
                let m = SpacetimeModel::minkowski(4)
                    .map_err(fail)?
                    .with_weight(WeightKind::LinearT { rate })
                    .map_err(fail)?;
                (m, 8.0, true, EffectiveDim::Finite(-rng.gen_range(0.0..4.0)))
            }
            1 => {
                let rate = rng.gen_range(0.15..0.35);
                let m = SpacetimeModel::minkowski(4)
                    .map_err(fail)?
                    .with_weight(WeightKind::LinearT { rate })
                    .map_err(fail)?;
                (
                    m,
                    8.0,
                    false,
                    EffectiveDim::Finite(1.0 - rng.gen_range(0.0..3.0)),
                )
            }
            _ => {
                let m = SpacetimeModel::anti_de_sitter(4, 2.0)
                    .map_err(fail)?
                    .with_weight(WeightKind::LinearT { rate: 0.2 })
                    .map_err(fail)?;
                (m, 2.3, true, EffectiveDim::Finite(rng.gen_range(6.0..12.0)))
            }
        };
        let n = model.spatial_dim() as f64;
        let base = if timelike { 0.0 } else { 1.0 };
        let bound = match n_eff {
            EffectiveDim::Finite(nn) => ((nn - base) / (nn - n)).sqrt(),
            EffectiveDim::PlusInf => 1.0,
        };
        let epsilon = 0.9 * bound * rng.gen_range(-1.0_f64..1.0);
        let x0 = model.chart().center();
        let v_seed = random_future_timelike(&model, &x0, &mut rng);
        let v0 = if timelike {
            v_seed
        } else {
            match make_null(&model, &x0, &v_seed) {
                Some(v) => v,
                None => continue,
            }
        };
        let opts = GeodesicOptions::default();
        let run = match integrate_geodesic(&model, &x0, &v0, (0.0, t_end), &[epsilon], &opts) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let v_used = run.velocity(run.t_start());
        let legs = match orthonormal_frame(&model, &x0, &v_used) {
            Ok(l) => l,
            Err(_) => continue,
        };
        let frame = match transport_frame(&run, &legs) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let m = legs.len();
        let j0 = DMatrix::identity(m, m);
        let s = random_symmetric(&mut rng, m, 0.25);
        let shift = 0.45 + s.norm();
        let j0p = &s - DMatrix::identity(m, m) * shift;
        let tensor = match custom_congruence_tensor(&run, &frame, &j0, &j0p, TensorKind::Custom) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let grid = 64;
        let report = match evolve_weighted_congruence(&run, &frame, &tensor, n_eff, epsilon, grid)
        {
            Ok(r) => r,
            Err(_) => continue,
        };
        let (lo, hi) = report.window;
        let min_ric = (lo..=hi)
            .map(|k| report.ric_n_etastar[k])
            .filter(|v| v.is_finite())
            .fold(f64::INFINITY, f64::min);
        if !(min_ric >= -1e-9) {
            // The randomized draw landed outside the theorem's hypothesis;
            // it cannot count for or against the bound.
            continue;
        }
        let Some(pred) = &report.s0 else { continue };
        counted += 1;
        match pred.outcome {
            S0Outcome::Bound { s0 } => {
                let cell = (run.t_end() - run.t_start()) / grid as f64;
                let deadline = pred.t0 + s0 + cell;
                let first = report
                    .conjugate_times
                    .iter()
                    .map(|z| z.t)
                    .find(|&t| t >= pred.t0);
                match first {
                    Some(tz) if tz <= deadline => margin = margin.min(deadline - tz),
                    Some(tz) => {
                        return Ok(Verdict::fail(
                            "focusing_bound_s0",
                            format!(
                                "counterexample on {}: det J first vanished at t = {tz:.9}, \
                                 after t0 + s0 = {:.9} (N = {}, eps = {:.4})",
                                run.model().label(),
                                pred.t0 + s0,
                                n_eff,
                                epsilon
                            ),
                            Some(deadline - tz),
                        ))
                    }
                    None if run.t_end() + 1e-12 >= deadline => {
                        return Ok(Verdict::fail(
                            "focusing_bound_s0",
                            format!(
                                "counterexample on {}: no vanishing of det J although the run \
                                 covers the deadline {deadline:.6} (N = {}, eps = {:.4})",
                                run.model().label(),
                                n_eff,
                                epsilon
                            ),
                            None,
                        ))
                    }
                    None => horizons += 1,
                }
            }
            S0Outcome::Horizon { .. } => horizons += 1,
        }
    }
    if counted < 20 {
        return Ok(Verdict::fail(
            "focusing_bound_s0",
            format!("only {counted} of 20 randomized runs satisfied the hypothesis"),
            None,
        ));
    }
    Ok(Verdict::pass(
        "focusing_bound_s0",
        format!(
            "20 randomized weighted runs with Ric_N(eta*) >= 0 and contracting start: \
             det J vanished within s0 plus one grid cell ({horizons} horizon report(s), \
             zero counterexamples)"
        ),
        clean(margin),
    ))
}

fn c10_bishop(acc: &mut Vec<WeightedRunData>) -> Result<Verdict, CliError> {
    let mut worst = f64::NEG_INFINITY;
    let mut used = 0usize;
    for data in acc.iter().filter(|d| d.timelike) {
        let report = bishop_concavity(&data.run, &data.tensor, data.n_eff, data.epsilon, 48)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        if report.worst.is_finite() {
            worst = worst.max(report.worst);
            used += 1;
        }
    }
    if used == 0 {
        return Ok(Verdict::fail(
            "weighted_bishop",
            "no timelike battery runs were available for the concavity check",
            None,
        ));
    }
    Ok(Verdict::check(
        "weighted_bishop",
        worst <= RESIDUAL_TOL,
        format!(
            "xi** <= -c xi Ric_N(eta*) holds within {RESIDUAL_TOL:.0e} pointwise on all \
             {used} timelike battery runs; worst slack {worst:.3e}"
        ),
        Some(RESIDUAL_TOL - worst),
    ))
}

fn c11_surfaces() -> Result<Verdict, CliError> {
    let fail = |e: finsleray::model::ModelError| CliError::Failure(e.to_string());
    let mut margin = f64::INFINITY;

    // Round sphere in flat space: classical expansions and focal time.
    let mink = SpacetimeModel::minkowski(4).map_err(fail)?;
    let patch = SurfacePatch::sphere(4, 2.0, &[0.0; 4])
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let params: Vec<Vec<f64>> = vec![
        vec![0.7, 0.5],
        vec![1.2, 2.4],
        vec![1.9, 4.4],
        vec![2.4, 1.5],
        vec![1.0, 5.6],
        vec![2.0, 3.1],
    ];
    let report = analyze_surface(&mink, &patch, &params)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let expected = (4 - 2) as f64 / 2.0;
    let mut worst_rel = 0.0_f64;
    for s in &report.samples {
        worst_rel = worst_rel.max((s.data.theta_plus - expected).abs() / expected.abs());
        worst_rel = worst_rel.max((s.data.theta_minus + expected).abs() / expected.abs());
    }
    if worst_rel > 1e-5 {
        return Ok(Verdict::fail(
            "trapped_surface_machinery",
            format!(
                "flat sphere expansions miss (n - 1) / r relatively by {worst_rel:.3e}"
            ),
            Some(1e-5 - worst_rel),
        ));
    }
    margin = margin.min(1e-5 - worst_rel);

    let opts = GeodesicOptions::default();
    let sc = surface_normal_congruence(
        &mink,
        &patch,
        &[1.1, 0.7],
        NormalSide::Minus,
        3.0,
        &[0.0],
        &opts,
    )
    .map_err(|e| CliError::Failure(e.to_string()))?;
    let zeros = detect_conjugate_points(&sc.tensor);
    let focal = zeros
        .first()
        .map(|z| z.t)
        .ok_or_else(|| CliError::Failure("ingoing flat-sphere family never focused".into()))?;
    let focal_err = (focal - 2.0).abs() / 2.0;
    if focal_err > 0.02 {
        return Ok(Verdict::fail(
            "trapped_surface_machinery",
            format!("ingoing focal time {focal:.6} misses the radius relatively by {focal_err:.4}"),
            Some(0.02 - focal_err),
        ));
    }
    margin = margin.min(0.02 - focal_err);

    // Contracting weighted cosmology: a small sphere in the shrinking
    // phase is trapped, and stays psi-trapped for the linear-t weight.
    let warped = SpacetimeModel::warped_product(4, WarpProfile::Cosh)
        .map_err(fail)?
        .with_weight(WeightKind::LinearT { rate: 0.2 })
        .map_err(fail)?;
    let trapped_patch = SurfacePatch::sphere(4, 0.5, &[-2.0, 0.0, 0.0, 0.0])
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let trapped_report = analyze_surface(&warped, &trapped_patch, &params)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    if !trapped_report.trapped || !trapped_report.psi_trapped {
        return Ok(Verdict::fail(
            "trapped_surface_machinery",
            format!(
                "constructed contracting sphere should be trapped and psi-trapped; got trapped = {}, psi_trapped = {}",
                trapped_report.trapped, trapped_report.psi_trapped
            ),
            None,
        ));
    }
    let worst_theta1 = trapped_report
        .samples
        .iter()
        .map(|s| s.data.theta1_plus.max(s.data.theta1_minus))
        .fold(f64::NEG_INFINITY, f64::max);
    margin = margin.min(-worst_theta1);

    Ok(Verdict::pass(
        "trapped_surface_machinery",
        format!(
            "flat sphere expansions hit (n - 1) / r within 1e-5 and the ingoing focal \
             time is the radius within 2%; the contracting weighted sphere is psi-trapped \
             (worst theta1 branch {worst_theta1:.6})"
        ),
        clean(margin),
    ))
}

fn c12_determinism(seed: u64) -> Result<Verdict, CliError> {
    let mut mc = ModelConfig::bare(ModelKind::WarpedProduct);
    mc.dim = Some(4);
    mc.weight = Some(crate::config::WeightConfig {
        kind: crate::config::WeightKindConfig::LinearT,
        rate: Some(0.3),
        strength: None,
        source: None,
    });
    let sub = RunConfig {
        model: mc,
        scenario: Scenario::Congruence,
        numeric: NumericConfig {
            t_span: [0.0, 3.0],
            grid: 32,
            epsilon: vec![0.0, 0.5],
            n_eff: EffDim(EffectiveDim::Finite(6.0)),
            ..NumericConfig::default()
        },
        output: OutputConfig {
            directory: None,
            formats: vec![Format::Json],
        },
        seed,
    };
    let render = || -> Result<Vec<u8>, CliError> {
        let output = scenario::congruence::run(&sub)?;
        let mut result = ScenarioResult::new(sub.scenario.name());
        result.verdicts = output.verdicts;
        result.tables = output.tables;
        let mut artifacts: Vec<String> =
            result.tables.iter().map(|t| format!("{}.csv", t.name)).collect();
        artifacts.push("summary.json".into());
        let mut bytes = crate::report::summary_bytes(&sub, &result, &artifacts);
        for table in &result.tables {
            bytes.extend_from_slice(table.render_csv().as_bytes());
        }
        Ok(bytes)
    };
    let a = render()?;
    let b = render()?;
    let identical = a == b;
    Ok(Verdict::check(
        "determinism_json",
        identical,
        if identical {
            format!(
                "two invocations of the same weighted congruence config produced \
                 byte-identical JSON and CSV output ({} bytes)",
                a.len()
            )
        } else {
            let where_differ = a
                .iter()
                .zip(b.iter())
                .position(|(x, y)| x != y)
                .unwrap_or(a.len().min(b.len()));
            format!(
                "outputs diverged at byte {where_differ} of {} / {}",
                a.len(),
                b.len()
            )
        },
        Some(0.0),
    ))
}
