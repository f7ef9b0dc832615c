//! Congruence scenario: evolve a point congruence around one geodesic and
//! check the weighted Jacobi, Riccati, and Raychaudhuri identities, the
//! focusing inequality, concavity, and the conjugate-point bound for each
//! requested epsilon.

use finsleray::congruence::{
    bishop_concavity, evolve_weighted_congruence, genericity_probe, point_congruence_tensor,
    CongruenceError, CongruenceReport, S0Outcome,
};
use finsleray::geodesic::{
    integrate_geodesic, orthonormal_frame, transport_frame, GeodesicOptions, GeodesicRun,
};
use finsleray::geometry::EffectiveDim;
use finsleray::model::CausalClass;

use crate::config::{build_model, RunConfig};
use crate::report::{Field, Table, Verdict};
use crate::scenario::{
    base_point, geodesic_error_is_config, initial_velocity, span_of, CliError, ScenarioOutput,
};

const RESIDUAL_TOL: f64 = 1e-6;

fn worst_on_window(report: &CongruenceReport, values: &[f64]) -> Option<f64> {
    let (lo, hi) = report.window;
    let mut worst = None;
    for k in lo..=hi {
        let v = values[k];
        if v.is_nan() {
            continue;
        }
        worst = Some(match worst {
            None => v,
            Some(w) if v > w => v,
            Some(w) => w,
        });
    }
    worst
}

fn key_for(eps: f64, multi: bool, name: &str) -> String {
    if multi {
        format!("{name}[eps={eps}]")
    } else {
        name.to_string()
    }
}

pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let mut out = ScenarioOutput::new();
    let stage = std::time::Instant::now();
    let model = build_model(&cfg.model)?;
    let x0 = base_point(cfg, &model)?;
    let v0 = initial_velocity(cfg, &model)?;
    let n_eff = cfg.numeric.n_eff.0;
    let opts = GeodesicOptions {
        tol: cfg.numeric.tol,
        ..GeodesicOptions::default()
    };
    let run = match integrate_geodesic(&model, &x0, &v0, span_of(cfg), &cfg.numeric.epsilon, &opts)
    {
        Ok(r) => r,
        Err(e) if geodesic_error_is_config(&e) => return Err(CliError::Config(e.to_string())),
        Err(e) => {
            out.verdicts.push(Verdict::fail(
                "integration",
                format!("geodesic integration aborted: {e}"),
                None,
            ));
            return Ok(out);
        }
    };
    let v_used = run.velocity(run.t_start());
    let legs = orthonormal_frame(&model, &x0, &v_used)
        .map_err(|e| CliError::Failure(format!("frame construction failed: {e}")))?;
    let frame = transport_frame(&run, &legs)
        .map_err(|e| CliError::Failure(format!("frame transport failed: {e}")))?;
    let tensor = point_congruence_tensor(&run, &frame)
        .map_err(|e| CliError::Failure(format!("congruence tensor failed: {e}")))?;
    out.timing
        .push(("integration".to_string(), stage.elapsed().as_secs_f64()));

    let stage = std::time::Instant::now();
    let grid = cfg.numeric.grid.max(8);
    let multi = cfg.numeric.epsilon.len() > 1;
    let mut plot = Table::new("plot", &["series", "t", "value"]);

    for (idx, &eps) in cfg.numeric.epsilon.iter().enumerate() {
        let report = match evolve_weighted_congruence(&run, &frame, &tensor, n_eff, eps, grid) {
            Ok(r) => r,
            Err(CongruenceError::BadInput(msg)) => return Err(CliError::Config(msg)),
            Err(e) => {
                out.verdicts.push(Verdict::fail(
                    &key_for(eps, multi, "evolution"),
                    format!("congruence evolution aborted: {e}"),
                    None,
                ));
                continue;
            }
        };
        verdicts_for_report(&mut out, &run, &report, eps, multi, grid);
        if run.class() == CausalClass::Timelike {
            if let Ok(bishop) = bishop_concavity(&run, &tensor, n_eff, eps, grid) {
                let worst = bishop.worst;
                if worst.is_finite() {
                    out.verdicts.push(Verdict::check(
                        &key_for(eps, multi, "bishop_concavity"),
                        worst <= RESIDUAL_TOL,
                        format!(
                            "xi** <= -c xi Ric_N(eta*) holds within {RESIDUAL_TOL:.0e}; worst slack {worst:.3e}"
                        ),
                        Some(RESIDUAL_TOL - worst),
                    ));
                }
            }
        }
        push_tables(&mut out, &mut plot, &run, &report, idx, eps);
    }

    // Genericity is epsilon-independent: the curvature endomorphism must be
    // visible somewhere along the run for conjugate points to be forced.
    if let Ok(gen) = genericity_probe(&run, &frame, model.has_weight(), grid.min(64)) {
        out.verdicts.push(Verdict::pass(
            "genericity",
            format!(
                "largest curvature endomorphism norm along the run is {:.3e} ({})",
                gen.margin,
                if gen.generic { "generic" } else { "flat to working precision" }
            ),
            Some(gen.margin),
        ));
    }

    out.tables.push(plot);
    out.timing
        .push(("congruence".to_string(), stage.elapsed().as_secs_f64()));
    Ok(out)
}

fn verdicts_for_report(
    out: &mut ScenarioOutput,
    run: &GeodesicRun,
    report: &CongruenceReport,
    eps: f64,
    multi: bool,
    grid: usize,
) {
    for (name, values, label) in [
        (
            "jacobi_residual",
            &report.jacobi_residual,
            "weighted Jacobi equation residual",
        ),
        (
            "riccati_residual",
            &report.riccati_residual,
            "weighted Riccati equation residual",
        ),
    ] {
        if let Some(worst) = worst_on_window(report, values) {
            out.verdicts.push(Verdict::check(
                &key_for(eps, multi, name),
                worst <= RESIDUAL_TOL,
                format!("{label} stays within {RESIDUAL_TOL:.0e}; worst {worst:.3e}"),
                Some(RESIDUAL_TOL - worst),
            ));
        }
    }
    match worst_on_window(report, &report.raychaudhuri_residual) {
        Some(worst) => out.verdicts.push(Verdict::check(
            &key_for(eps, multi, "raychaudhuri_residual"),
            worst <= RESIDUAL_TOL,
            format!(
                "weighted Raychaudhuri equation residual stays within {RESIDUAL_TOL:.0e}; worst {worst:.3e}"
            ),
            Some(RESIDUAL_TOL - worst),
        )),
        None => {
            if let EffectiveDim::Finite(nn) = report.n_eff {
                if (nn - run.model().spatial_dim() as f64).abs() < 1e-12 {
                    out.verdicts.push(Verdict::pass(
                        &key_for(eps, multi, "raychaudhuri_residual"),
                        "N equals the spatial dimension: no equation form, inequality only",
                        None,
                    ));
                }
            }
        }
    }
    if let Some(worst) = worst_on_window(report, &report.inequality_slack) {
        out.verdicts.push(Verdict::check(
            &key_for(eps, multi, "focusing_inequality"),
            worst <= RESIDUAL_TOL,
            format!(
                "theta_eps* + c theta_eps^2 + tr sigma_eps^2 + Ric_N <= 0 holds within {RESIDUAL_TOL:.0e}; worst slack {worst:.3e}"
            ),
            Some(RESIDUAL_TOL - worst),
        ));
    }

    let zeros = &report.conjugate_times;
    out.verdicts.push(Verdict::pass(
        &key_for(eps, multi, "conjugate_points"),
        match zeros.first() {
            Some(first) => format!(
                "{} vanishing point(s) of det J; first at t = {:.9} (multiplicity {})",
                zeros.len(),
                first.t,
                first.multiplicity
            ),
            None => "det J never vanishes on the run".to_string(),
        },
        None,
    ));

    if let Some(pred) = &report.s0 {
        let (lo, hi) = report.window;
        let min_ric = (lo..=hi)
            .map(|k| report.ric_n_etastar[k])
            .filter(|v| !v.is_nan())
            .fold(f64::INFINITY, f64::min);
        let key = key_for(eps, multi, "focusing_bound");
        if !(min_ric >= -1e-9) {
            out.verdicts.push(Verdict::inconclusive(
                &key,
                format!(
                    "bound not applicable: Ric_N along eta* dips to {min_ric:.3e} < 0 on the window"
                ),
                Some(min_ric),
            ));
        } else {
            let cell = (run.t_end() - run.t_start()) / grid as f64;
            match pred.outcome {
                S0Outcome::Bound { s0 } => {
                    let deadline = pred.t0 + s0 + cell;
                    let first_zero = zeros.iter().map(|z| z.t).find(|&t| t >= pred.t0);
                    match first_zero {
                        Some(tz) if tz <= deadline => out.verdicts.push(Verdict::pass(
                            &key,
                            format!(
                                "det J vanished at t = {tz:.9}, within s0 = {s0:.9} of t0 = {:.9}",
                                pred.t0
                            ),
                            Some(deadline - tz),
                        )),
                        Some(tz) => out.verdicts.push(Verdict::fail(
                            &key,
                            format!(
                                "det J first vanished at t = {tz:.9}, after the bound t0 + s0 = {:.9}",
                                pred.t0 + s0
                            ),
                            Some(deadline - tz),
                        )),
                        None if run.t_end() + 1e-12 < deadline => {
                            out.verdicts.push(Verdict::inconclusive(
                                &key,
                                format!(
                                    "run ends at t = {:.6} before the focusing deadline {deadline:.6}",
                                    run.t_end()
                                ),
                                None,
                            ))
                        }
                        None => out.verdicts.push(Verdict::fail(
                            &key,
                            format!(
                                "no vanishing of det J although the run covers the deadline {deadline:.6}"
                            ),
                            None,
                        )),
                    }
                }
                S0Outcome::Horizon {
                    tau_target,
                    tau_max,
                } => out.verdicts.push(Verdict::inconclusive(
                    &key,
                    format!(
                        "horizon: the epsilon clock tops out at {tau_max:.6} before the target {tau_target:.6}"
                    ),
                    None,
                )),
            }
        }
    }

}

fn push_tables(
    out: &mut ScenarioOutput,
    plot: &mut Table,
    run: &GeodesicRun,
    report: &CongruenceReport,
    idx: usize,
    eps: f64,
) {
    let clock = run.epsilons().iter().position(|&e| e == eps);
    let mut table = Table::new(
        &format!("congruence_eps{idx}"),
        &[
            "t",
            "tau_eps",
            "theta",
            "theta_eps",
            "trace_sigma_eps2",
            "ric_n_etastar",
            "residual",
        ],
    );
    for (k, &t) in report.times.iter().enumerate() {
        let tau = clock.map(|c| run.tau(c, t)).unwrap_or(f64::NAN);
        table.push(vec![
            Field::Num(t),
            Field::Num(tau),
            Field::Num(report.theta[k]),
            Field::Num(report.theta_eps[k]),
            Field::Num(report.sigma_eps_norm2[k]),
            Field::Num(report.ric_n_etastar[k]),
            Field::Num(report.raychaudhuri_residual[k]),
        ]);
        for (series, value) in [
            (format!("theta_eps[{eps}]"), report.theta_eps[k]),
            (format!("ric_n_etastar[{eps}]"), report.ric_n_etastar[k]),
            (
                format!("raychaudhuri_residual[{eps}]"),
                report.raychaudhuri_residual[k],
            ),
        ] {
            if !value.is_nan() {
                plot.push(vec![Field::Text(series), Field::Num(t), Field::Num(value)]);
            }
        }
    }
    out.tables.push(table);
}
