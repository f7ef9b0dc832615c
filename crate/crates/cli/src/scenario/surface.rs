//! Surface scenario: solve the two lightlike normal fields on a closed
//! codimension-two sphere, report expansions and trapping, and follow the
//! chosen normal family far enough to test the focusing bound.

use finsleray::congruence::{detect_conjugate_points, s0_prediction, S0Outcome};
use finsleray::geodesic::GeodesicOptions;
use finsleray::geometry::{c_coefficient, CausalSide, WeightedRicciParams};
use finsleray::surface::{analyze_surface, surface_normal_congruence, NormalSide, SurfacePatch};

use crate::config::{build_model, RunConfig, SideConfig};
use crate::report::{Field, Table, Verdict};
use crate::scenario::{CliError, ScenarioOutput};

fn sphere_params(dim: usize, samples: usize) -> Vec<Vec<f64>> {
    let p = dim - 2;
    let per_axis = ((samples as f64).powf(1.0 / p as f64).ceil() as usize).max(2);
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(p);
    for axis in 0..p {
        let (lo, hi) = if axis + 1 == p {
            (0.25, 2.0 * std::f64::consts::PI - 0.25)
        } else {
            (0.35, std::f64::consts::PI - 0.35)
        };
        grids.push(
            (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect(),
        );
    }
    let mut params = vec![Vec::new()];
    for grid in &grids {
        let mut next = Vec::with_capacity(params.len() * grid.len());
        for stem in &params {
            for &u in grid {
                let mut row = stem.clone();
                row.push(u);
                next.push(row);
            }
        }
        params = next;
    }
    params
}

pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let mut out = ScenarioOutput::new();
    let stage = std::time::Instant::now();
    let model = build_model(&cfg.model)?;
    let dim = model.dim();
    if dim < 3 {
        return Err(CliError::Config(
            "the surface scenario needs a model of dimension at least 3".into(),
        ));
    }
    let radius = cfg.numeric.radius.unwrap_or(2.0);
    let center = match &cfg.numeric.center {
        Some(c) => c.clone(),
        None => model.chart().center(),
    };
    if center.len() != dim {
        return Err(CliError::Config(format!(
            "center has {} entries, the model needs {dim}",
            center.len()
        )));
    }
    let patch = SurfacePatch::sphere(dim, radius, &center)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let params = sphere_params(dim, cfg.numeric.samples.unwrap_or(9).max(4));

    let report = match analyze_surface(&model, &patch, &params) {
        Ok(r) => r,
        Err(e) => {
            out.verdicts.push(Verdict::fail(
                "normal_solve",
                format!("lightlike normal analysis failed: {e}"),
                None,
            ));
            return Ok(out);
        }
    };

    out.verdicts.push(Verdict::check(
        "null_residual",
        report.max_null_residual <= 1e-9,
        format!(
            "both normals satisfy L = 0 within 1e-9; worst {:.3e}",
            report.max_null_residual
        ),
        Some(1e-9 - report.max_null_residual),
    ));
    out.verdicts.push(Verdict::check(
        "orthogonality",
        report.max_orthogonality_residual <= 1e-8,
        format!(
            "both normals are g_V-orthogonal to the patch within 1e-8; worst {:.3e}",
            report.max_orthogonality_residual
        ),
        Some(1e-8 - report.max_orthogonality_residual),
    ));
    out.verdicts.push(Verdict::check(
        "distinct_rays",
        report.min_ray_separation > 1e-6,
        format!(
            "the two normal rays stay separated; minimum normalized gap {:.3e}",
            report.min_ray_separation
        ),
        Some(report.min_ray_separation - 1e-6),
    ));

    let worst_theta1 = report
        .samples
        .iter()
        .map(|s| s.data.theta1_plus.max(s.data.theta1_minus))
        .fold(f64::NEG_INFINITY, f64::max);
    out.verdicts.push(Verdict::pass(
        "trapping",
        format!(
            "surface is {}trapped and {}psi-trapped (worst theta1 branch {:.6})",
            if report.trapped { "" } else { "not " },
            if report.psi_trapped { "" } else { "not " },
            worst_theta1
        ),
        Some(-worst_theta1),
    ));

    let mut table = Table::new(
        "surface",
        &[
            "u",
            "theta_plus",
            "theta_minus",
            "theta1_plus",
            "theta1_minus",
            "trapped",
            "psi_trapped",
        ],
    );
    for s in &report.samples {
        let u_text = s
            .u
            .iter()
            .map(|c| format!("{c:.6}"))
            .collect::<Vec<_>>()
            .join(" ");
        table.push(vec![
            Field::Text(u_text),
            Field::Num(s.data.theta_plus),
            Field::Num(s.data.theta_minus),
            Field::Num(s.data.theta1_plus),
            Field::Num(s.data.theta1_minus),
            Field::Int(s.data.trapped() as i64),
            Field::Int(s.data.psi_trapped() as i64),
        ]);
    }
    out.tables.push(table);
    out.timing
        .push(("normals".to_string(), stage.elapsed().as_secs_f64()));

    // Follow one normal family and compare its first focal time against
    // the focusing bound, when the family starts contracting.
    let t_end = cfg.numeric.t_span[1];
    if t_end > 0.0 {
        let stage = std::time::Instant::now();
        let side = match cfg.numeric.side.unwrap_or(SideConfig::Minus) {
            SideConfig::Plus => NormalSide::Plus,
            SideConfig::Minus => NormalSide::Minus,
        };
        let u_mid = &params[params.len() / 2];
        let opts = GeodesicOptions {
            tol: cfg.numeric.tol,
            ..GeodesicOptions::default()
        };
        match surface_normal_congruence(&model, &patch, u_mid, side, t_end, &[0.0], &opts) {
            Ok(sc) => {
                let zeros = detect_conjugate_points(&sc.tensor);
                let first = zeros.first().map(|z| z.t);
                if sc.theta_start < 0.0 {
                    let params_w = WeightedRicciParams {
                        n_eff: cfg.numeric.n_eff.0,
                        epsilon: 0.0,
                        side: CausalSide::Null,
                    };
                    let n = model.spatial_dim();
                    let c = c_coefficient(&params_w, n)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let pred = s0_prediction(&sc.run, 0, 0.0, sc.theta_start, c)
                        .map_err(|e| CliError::Failure(e.to_string()))?;
                    let cell = t_end / cfg.numeric.grid.max(8) as f64;
                    match pred.outcome {
                        S0Outcome::Bound { s0 } => match first {
                            Some(tz) if tz <= s0 + cell => out.verdicts.push(Verdict::pass(
                                "focal_bound",
                                format!(
                                    "normal family focused at t = {tz:.9}, within s0 = {s0:.9}"
                                ),
                                Some(s0 + cell - tz),
                            )),
                            Some(tz) => out.verdicts.push(Verdict::fail(
                                "focal_bound",
                                format!(
                                    "normal family focused at t = {tz:.9}, after s0 = {s0:.9}"
                                ),
                                Some(s0 + cell - tz),
                            )),
                            None if sc.run.t_end() + 1e-12 < s0 + cell => {
                                out.verdicts.push(Verdict::inconclusive(
                                    "focal_bound",
                                    format!(
                                        "run ends at t = {:.6} before the focusing deadline {:.6}",
                                        sc.run.t_end(),
                                        s0 + cell
                                    ),
                                    None,
                                ))
                            }
                            None => out.verdicts.push(Verdict::fail(
                                "focal_bound",
                                format!(
                                    "no focal point although the run covers the deadline {:.6}",
                                    s0 + cell
                                ),
                                None,
                            )),
                        },
                        S0Outcome::Horizon {
                            tau_target,
                            tau_max,
                        } => out.verdicts.push(Verdict::inconclusive(
                            "focal_bound",
                            format!(
                                "horizon: the clock tops out at {tau_max:.6} before the target {tau_target:.6}"
                            ),
                            None,
                        )),
                    }
                } else {
                    out.verdicts.push(Verdict::pass(
                        "focal_bound",
                        format!(
                            "family starts expanding (theta = {:.6}); no focusing predicted",
                            sc.theta_start
                        ),
                        None,
                    ));
                }
                let mut focal = Table::new(
                    "surface_congruence",
                    &["t", "det_j", "theta_start", "first_zero"],
                );
                let grid = cfg.numeric.grid.max(8);
                for k in 0..=grid {
                    let t = sc.run.t_start()
                        + (sc.run.t_end() - sc.run.t_start()) * k as f64 / grid as f64;
                    focal.push(vec![
                        Field::Num(t),
                        Field::Num(sc.tensor.det_j(t)),
                        Field::Num(sc.theta_start),
                        Field::Num(first.unwrap_or(f64::NAN)),
                    ]);
                }
                out.tables.push(focal);
            }
            Err(e) => out.verdicts.push(Verdict::fail(
                "focal_bound",
                format!("normal congruence failed: {e}"),
                None,
            )),
        }
        out.timing
            .push(("congruence".to_string(), stage.elapsed().as_secs_f64()));
    }
    Ok(out)
}
