//! Strict run configuration: one TOML document drives one scenario.
//!
//! Parsing rejects unknown keys everywhere so a typo fails loudly instead
//! of silently running with a default. The numeric block's `N` accepts a
//! float or the string "inf"; every other field is plain data. A run is
//! fully reproducible from the config plus its seed.

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use finsleray::geometry::EffectiveDim;
use finsleray::model::{Chart, ModelError, SpacetimeModel, WarpProfile, WeightKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("model construction failed: {0}")]
    Model(#[from] ModelError),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Geodesic,
    Congruence,
    Cones,
    BonnetMyers,
    Surface,
    Suite,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Geodesic => "geodesic",
            Scenario::Congruence => "congruence",
            Scenario::Cones => "cones",
            Scenario::BonnetMyers => "bonnet_myers",
            Scenario::Surface => "surface",
            Scenario::Suite => "suite",
        }
    }
}

/// Effective dimension N: a float in TOML, or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffDim(pub EffectiveDim);

impl Serialize for EffDim {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            EffectiveDim::PlusInf => s.serialize_str("inf"),
            EffectiveDim::Finite(x) => s.serialize_f64(x),
        }
    }
}

impl<'de> Deserialize<'de> for EffDim {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(EffDim(EffectiveDim::Finite(x))),
            Raw::Text(t) => parse_eff_dim(&t)
                .map(EffDim)
                .map_err(serde::de::Error::custom),
        }
    }
}

pub fn parse_eff_dim(text: &str) -> Result<EffectiveDim, String> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("inf") || t == "+inf" || t.eq_ignore_ascii_case("infinity") {
        return Ok(EffectiveDim::PlusInf);
    }
    t.parse::<f64>()
        .map(EffectiveDim::Finite)
        .map_err(|_| format!("N must be a number or \"inf\", got {text:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Minkowski,
    WarpedProduct,
    RandersPerturbed,
    Beem,
    AntiDeSitter,
    Expression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileConfig {
    Exp,
    Cosh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKindConfig {
    LinearT,
    DirectionDependent,
    Expression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: WeightKindConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future_seed: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightConfig>,
}

impl ModelConfig {
    pub fn bare(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            dim: None,
            profile: None,
            strength: None,
            k: None,
            curvature: None,
            lagrangian: None,
            chart_half_width: None,
            future_seed: None,
            weight: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideConfig {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_t_span")]
    pub t_span: [f64; 2],
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(rename = "N", default = "default_n_eff")]
    pub n_eff: EffDim,
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<SideConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_t_span() -> [f64; 2] {
    [0.0, 10.0]
}
fn default_grid() -> usize {
    200
}
fn default_n_eff() -> EffDim {
    EffDim(EffectiveDim::PlusInf)
}
fn default_epsilon() -> Vec<f64> {
    vec![0.0]
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig {
            tol: default_tol(),
            t_span: default_t_span(),
            grid: default_grid(),
            n_eff: default_n_eff(),
            epsilon: default_epsilon(),
            x0: None,
            v0: None,
            radius: None,
            center: None,
            side: None,
            k_bound: None,
            fan: None,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Never serialized: the summary (and its config hash) must not depend
    /// on where the artifacts happen to land, only on what was computed.
    #[serde(default, skip_serializing)]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scenario: Scenario,
    #[serde(default)]
    pub numeric: NumericConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(model: ModelConfig, scenario: Scenario) -> RunConfig {
        RunConfig {
            model,
            scenario,
            numeric: NumericConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Builds the spacetime model described by the config block.
pub fn build_model(mc: &ModelConfig) -> Result<SpacetimeModel, ConfigError> {
    let mut model = match mc.kind {
        ModelKind::Minkowski => SpacetimeModel::minkowski(mc.dim.unwrap_or(4))?,
        ModelKind::WarpedProduct => {
            let profile = match mc.profile.unwrap_or(ProfileConfig::Cosh) {
                ProfileConfig::Exp => WarpProfile::Exp,
                ProfileConfig::Cosh => WarpProfile::Cosh,
            };
            SpacetimeModel::warped_product(mc.dim.unwrap_or(4), profile)?
        }
        ModelKind::RandersPerturbed => {
            SpacetimeModel::randers_perturbed(mc.dim.unwrap_or(4), mc.strength.unwrap_or(0.1))?
        }
        ModelKind::Beem => SpacetimeModel::beem(mc.k.unwrap_or(3) as u32)?,
        ModelKind::AntiDeSitter => {
            SpacetimeModel::anti_de_sitter(mc.dim.unwrap_or(4), mc.curvature.unwrap_or(2.0))?
        }
        ModelKind::Expression => {
            let dim = mc.dim.ok_or_else(|| {
                ConfigError::Invalid("an expression model needs an explicit dim".into())
            })?;
            let source = mc.lagrangian.as_deref().ok_or_else(|| {
                ConfigError::Invalid("an expression model needs a lagrangian source".into())
            })?;
            let half_width = mc.chart_half_width.unwrap_or(10.0);
            let seed = mc.future_seed.clone().ok_or_else(|| {
                ConfigError::Invalid("an expression model needs a future_seed".into())
            })?;
            SpacetimeModel::from_expression(
                dim,
                source,
                Chart::symmetric(dim, half_width),
                seed,
            )?
        }
    };
    if mc.kind != ModelKind::Expression {
        if let Some(hw) = mc.chart_half_width {
            let dim = model.dim();
            model = model.with_chart(Chart::symmetric(dim, hw))?;
        }
        if let Some(fs) = &mc.future_seed {
            model = model.with_future_seed(fs.clone())?;
        }
    }
    if let Some(w) = &mc.weight {
        model = match w.kind {
            WeightKindConfig::LinearT => {
                let rate = w.rate.ok_or_else(|| {
                    ConfigError::Invalid("weight kind linear_t needs a rate".into())
                })?;
                model.with_weight(WeightKind::LinearT { rate })?
            }
            WeightKindConfig::DirectionDependent => {
                let strength = w.strength.ok_or_else(|| {
                    ConfigError::Invalid(
                        "weight kind direction_dependent needs a strength".into(),
                    )
                })?;
                model.with_weight(WeightKind::DirectionDependent { strength })?
            }
            WeightKindConfig::Expression => {
                let source = w.source.as_deref().ok_or_else(|| {
                    ConfigError::Invalid("weight kind expression needs a source".into())
                })?;
                model.with_weight_expression(source)?
            }
        };
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(
            r#"
scenario = "congruence"

[model]
kind = "minkowski"
dim = 4
"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::Congruence);
        assert_eq!(cfg.numeric.tol, 1e-10);
        assert_eq!(cfg.numeric.n_eff.0, EffectiveDim::PlusInf);
        assert_eq!(cfg.numeric.epsilon, vec![0.0]);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.output.wants(Format::Csv) && cfg.output.wants(Format::Json));
        let model = build_model(&cfg.model).unwrap();
        assert_eq!(model.dim(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let err = parse_config(
            r#"
scenario = "geodesic"
typo_key = 1

[model]
kind = "minkowski"
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");

        let err = parse_config(
            r#"
scenario = "geodesic"

[model]
kind = "minkowski"

[numeric]
tolx = 1e-8
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("tolx"), "{err}");
    }

    #[test]
    fn n_eff_accepts_floats_and_inf() {
        let cfg = parse_config(
            r#"
scenario = "congruence"

[model]
kind = "minkowski"

[numeric]
N = 6.0
"#,
        )
        .unwrap();
        assert_eq!(cfg.numeric.n_eff.0, EffectiveDim::Finite(6.0));

        let cfg = parse_config(
            r#"
scenario = "congruence"

[model]
kind = "minkowski"

[numeric]
N = "inf"
"#,
        )
        .unwrap();
        assert_eq!(cfg.numeric.n_eff.0, EffectiveDim::PlusInf);

        let err = parse_config(
            r#"
scenario = "congruence"

[model]
kind = "minkowski"

[numeric]
N = "seven"
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("inf"), "{err}");
    }

    #[test]
    fn weighted_model_from_config() {
        let cfg = parse_config(
            r#"
scenario = "congruence"
seed = 7

[model]
kind = "warped_product"
dim = 4
profile = "cosh"

[model.weight]
kind = "linear_t"
rate = 0.3

[output]
formats = ["json"]
"#,
        )
        .unwrap();
        let model = build_model(&cfg.model).unwrap();
        assert!(model.has_weight());
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.output.wants(Format::Csv));
    }

    #[test]
    fn config_echo_roundtrips_through_json() {
        let cfg = parse_config(
            r#"
scenario = "suite"

[model]
kind = "beem"
k = 3

[numeric]
N = "inf"
epsilon = [0.0, 0.5]
"#,
        )
        .unwrap();
        let bytes = serde_json::to_vec(&cfg).unwrap();
        let back: RunConfig = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back.scenario, Scenario::Suite);
        assert_eq!(back.numeric.epsilon, vec![0.0, 0.5]);
        assert_eq!(back.numeric.n_eff.0, EffectiveDim::PlusInf);
    }
}
