//! Cones scenario: census of connected components of the future cone at
//! the base point, checked against the model's expected count.

use crate::config::{build_model, ModelKind, RunConfig};
use crate::report::{Field, Table, Verdict};
use crate::scenario::{base_point, CliError, ScenarioOutput};

pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let mut out = ScenarioOutput::new();
    let stage = std::time::Instant::now();
    let model = build_model(&cfg.model)?;
    let x0 = base_point(cfg, &model)?;
    let samples = cfg.numeric.samples.unwrap_or(4096).max(1024);
    let count = model
        .count_cone_components(&x0, samples)
        .map_err(|e| CliError::Config(format!("cone census needs a dim 2 or 3 model: {e}")))?;
    let expected = match cfg.model.kind {
        ModelKind::Beem => cfg.model.k.unwrap_or(3),
        _ => 1,
    };
    out.verdicts.push(Verdict::check(
        "cone_components",
        count == expected,
        format!(
            "angular sweep with {samples} samples found {count} future cone component(s), expected {expected}"
        ),
        Some(count as f64 - expected as f64),
    ));

    let mut table = Table::new("cones", &["model", "samples", "components", "expected"]);
    table.push(vec![
        Field::Text(model.label().to_string()),
        Field::Int(samples as i64),
        Field::Int(count as i64),
        Field::Int(expected as i64),
    ]);
    out.tables.push(table);
    out.timing
        .push(("census".to_string(), stage.elapsed().as_secs_f64()));
    Ok(out)
}
