//! Geodesic scenario: integrate one geodesic, check conservation, and
//! table the trajectory with its reparametrization clocks.

use finsleray::geodesic::{integrate_geodesic, GeodesicOptions};
use finsleray::model::CausalClass;

use crate::config::{build_model, RunConfig};
use crate::report::{Field, Table, Verdict};
use crate::scenario::{
    base_point, geodesic_error_is_config, initial_velocity, span_of, CliError, ScenarioOutput,
};

pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let mut out = ScenarioOutput::new();
    let stage = std::time::Instant::now();
    let model = build_model(&cfg.model)?;
    let x0 = base_point(cfg, &model)?;
    let v0 = initial_velocity(cfg, &model)?;
    let opts = GeodesicOptions {
        tol: cfg.numeric.tol,
        ..GeodesicOptions::default()
    };
    let run = match integrate_geodesic(&model, &x0, &v0, span_of(cfg), &cfg.numeric.epsilon, &opts)
    {
        Ok(r) => r,
        Err(e) if geodesic_error_is_config(&e) => {
            return Err(CliError::Config(e.to_string()));
        }
        Err(e) => {
            out.verdicts.push(Verdict::fail(
                "integration",
                format!("geodesic integration aborted: {e}"),
                None,
            ));
            return Ok(out);
        }
    };

    let drift = run.l_drift();
    let threshold = 1e-7 * (1.0 + run.l_value().abs());
    out.verdicts.push(Verdict::check(
        "l_conservation",
        drift <= threshold,
        format!(
            "sup |L(t) - L(0)| over the run stays within {threshold:.1e}; observed {drift:.3e}"
        ),
        Some(threshold - drift),
    ));

    let class_margin = match run.class() {
        CausalClass::Timelike => {
            let q = model
                .causal_quadratic(&run.position(run.t_start()), &run.velocity(run.t_start()))
                .map_err(|e| CliError::Failure(e.to_string()))?;
            (q + 1.0).abs()
        }
        _ => run.l_value().abs(),
    };
    out.verdicts.push(Verdict::pass(
        "causal_class",
        format!(
            "initial tangent is {:?}{}; chart {}",
            run.class(),
            if run.unit_speed() { " at unit speed" } else { "" },
            if run.exited_chart() {
                format!("exited at t = {:.6}", run.t_end())
            } else {
                "contained the full run".to_string()
            }
        ),
        Some(class_margin),
    ));

    let dim = model.dim();
    let mut header: Vec<String> = vec!["t".into()];
    for a in 0..dim {
        header.push(format!("x{a}"));
    }
    for a in 0..dim {
        header.push(format!("v{a}"));
    }
    header.push("L".into());
    header.push("psi".into());
    for &eps in run.epsilons() {
        header.push(format!("tau_eps_{eps}"));
    }
    let mut table = Table {
        name: "geodesic".to_string(),
        header,
        rows: Vec::new(),
    };
    let mut plot = Table::new("plot", &["series", "t", "value"]);

    let grid = cfg.numeric.grid.max(2);
    let (t0, _) = span_of(cfg);
    let t1 = run.t_end();
    for k in 0..=grid {
        let t = t0 + (t1 - t0) * k as f64 / grid as f64;
        let (x, v) = run.state(t);
        let l = model
            .lagrangian(&x, &v)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        let psi = run
            .psi_eta(t)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        let mut row: Vec<Field> = vec![Field::Num(t)];
        row.extend(x.iter().map(|&c| Field::Num(c)));
        row.extend(v.iter().map(|&c| Field::Num(c)));
        row.push(Field::Num(l));
        row.push(Field::Num(psi));
        for idx in 0..run.epsilons().len() {
            row.push(Field::Num(run.tau(idx, t)));
        }
        table.push(row);
        plot.push(vec![
            Field::Text("L".into()),
            Field::Num(t),
            Field::Num(l),
        ]);
        plot.push(vec![
            Field::Text("psi".into()),
            Field::Num(t),
            Field::Num(psi),
        ]);
        for (idx, &eps) in run.epsilons().iter().enumerate() {
            plot.push(vec![
                Field::Text(format!("tau_eps_{eps}")),
                Field::Num(t),
                Field::Num(run.tau(idx, t)),
            ]);
        }
    }
    out.tables.push(table);
    out.tables.push(plot);
    out.timing
        .push(("geodesic".to_string(), stage.elapsed().as_secs_f64()));
    Ok(out)
}
