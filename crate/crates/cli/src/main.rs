//! Command-line runner: scenarios from TOML configs or flags, reports to
//! CSV and JSON, exit codes 0 (all pass), 2 (any fail), 3 (inconclusive
//! only), 64 (config or usage error).

mod config;
mod report;
mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{
    load_config, parse_eff_dim, ConfigError, EffDim, Format, ModelConfig, ModelKind,
    ProfileConfig, RunConfig, Scenario, SideConfig, WeightConfig, WeightKindConfig,
};
use scenario::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "finsleray",
    version,
    about = "Numerical toolkit for weighted Lorentz-Finsler spacetimes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Integration tolerance.
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    /// Output directory (default "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats, comma separated: csv, json.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<String>>,
    /// Random seed echoed into the summary.
    #[arg(long)]
    seed: Option<u64>,
    /// End of the parameter span (start stays at the config value).
    #[arg(long, allow_hyphen_values = true)]
    t_end: Option<f64>,
    /// Sample grid size.
    #[arg(long)]
    grid: Option<usize>,
    /// Effective dimension N: a number or "inf".
    #[arg(long = "n")]
    n_eff: Option<String>,
    /// Epsilon values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    epsilon: Option<Vec<f64>>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model kind: minkowski, warped_product, randers_perturbed, beem,
    /// anti_de_sitter, expression.
    #[arg(long)]
    model: Option<String>,
    /// Spacetime dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Warp profile: exp or cosh.
    #[arg(long)]
    profile: Option<String>,
    /// Perturbation strength of the direction-dependent family.
    #[arg(long, allow_hyphen_values = true)]
    strength: Option<f64>,
    /// Number of cone components for the multi-cone family.
    #[arg(long)]
    k: Option<usize>,
    /// Constant flag curvature of the constant-curvature family.
    #[arg(long, allow_hyphen_values = true)]
    curvature: Option<f64>,
    /// Lagrangian source text for an expression model.
    #[arg(long)]
    lagrangian: Option<String>,
    /// Half-width of a symmetric chart override.
    #[arg(long)]
    chart_half_width: Option<f64>,
    /// Future seed vector, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    future_seed: Option<Vec<f64>>,
    /// Weight kind: linear_t, direction_dependent, expression.
    #[arg(long)]
    weight: Option<String>,
    /// Rate of the linear-t weight.
    #[arg(long, allow_hyphen_values = true)]
    rate: Option<f64>,
    /// Strength of the direction-dependent weight.
    #[arg(long, allow_hyphen_values = true)]
    weight_strength: Option<f64>,
    /// Source text of an expression weight.
    #[arg(long)]
    weight_source: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Execute the scenario described by a TOML config file; flags override
    /// the corresponding config keys.
    Run {
        config: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full verification battery (all invariant families).
    Suite {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Census of future cone components at the base point.
    Cones {
        #[command(flatten)]
        model: ModelArgs,
        /// Angular samples for the sweep.
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Integrate one geodesic and table the trajectory and clocks.
    Geodesic {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Initial velocity, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Option<Vec<f64>>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evolve a weighted point congruence along one geodesic.
    Congruence {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Initial velocity, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Option<Vec<f64>>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fan out unit timelike geodesics and check the diameter bound.
    BonnetMyers {
        #[command(flatten)]
        model: ModelArgs,
        /// Declared pointwise Ricci lower bound K.
        #[arg(long)]
        k_bound: Option<f64>,
        /// Number of rays in the fan.
        #[arg(long)]
        fan: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the lightlike normals of a codimension-two sphere and report
    /// expansions, trapping, and the focal bound.
    Surface {
        #[command(flatten)]
        model: ModelArgs,
        /// Sphere radius.
        #[arg(long)]
        radius: Option<f64>,
        /// Sphere center, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        center: Option<Vec<f64>>,
        /// Normal family to follow: plus or minus.
        #[arg(long)]
        side: Option<String>,
        /// Number of surface parameter samples.
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    if let Ok(w) = std::env::var("FINSLERAY_WORKERS") {
        match w.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("config error: FINSLERAY_WORKERS must be a positive integer, got {w:?}");
                return 64;
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                64
            };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(cli.cmd) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 64;
        }
    };
    match scenario::run_scenario(&cfg) {
        Ok(result) => {
            println!("scenario: {} (seed {})", result.scenario, cfg.seed);
            for v in &result.verdicts {
                println!("{}", v.line());
            }
            let dir = cfg
                .output
                .directory
                .clone()
                .unwrap_or_else(|| PathBuf::from("out"));
            match report::emit(&cfg, &result, &dir) {
                Ok(written) => {
                    for p in &written {
                        println!("wrote {}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: could not write reports: {e}");
                    return 2;
                }
            }
            let timing: Vec<String> = result
                .timing
                .iter()
                .map(|(k, s)| format!("{k}={s:.2}s"))
                .collect();
            println!("timing: {}", timing.join(" "));
            result.exit_code()
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            64
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn build_config(cmd: Cmd) -> Result<RunConfig, ConfigError> {
    let cfg = match cmd {
        Cmd::Run {
            config,
            model,
            common,
        } => {
            let mut cfg = load_config(&config)?;
            apply_model(&mut cfg.model, &model)?;
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::Suite { common } => {
            let mut cfg = RunConfig::new(
                ModelConfig::bare(ModelKind::Minkowski),
                Scenario::Suite,
            );
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::Cones {
            model,
            samples,
            common,
        } => {
            let mut cfg = RunConfig::new(
                model_from_args(&model, ModelKind::Beem)?,
                Scenario::Cones,
            );
            cfg.numeric.samples = samples.or(cfg.numeric.samples);
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::Geodesic {
            model,
            x0,
            v0,
            common,
        } => {
            let mut cfg = RunConfig::new(
                model_from_args(&model, ModelKind::Minkowski)?,
                Scenario::Geodesic,
            );
            cfg.numeric.x0 = x0;
            cfg.numeric.v0 = v0;
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::Congruence {
            model,
            x0,
            v0,
            common,
        } => {
            let mut cfg = RunConfig::new(
                model_from_args(&model, ModelKind::Minkowski)?,
                Scenario::Congruence,
            );
            cfg.numeric.x0 = x0;
            cfg.numeric.v0 = v0;
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::BonnetMyers {
            model,
            k_bound,
            fan,
            common,
        } => {
            let mut cfg = RunConfig::new(
                model_from_args(&model, ModelKind::AntiDeSitter)?,
                Scenario::BonnetMyers,
            );
            cfg.numeric.k_bound = k_bound;
            cfg.numeric.fan = fan;
            apply_common(&mut cfg, &common)?;
            cfg
        }
        Cmd::Surface {
            model,
            radius,
            center,
            side,
            samples,
            common,
        } => {
            let mut cfg = RunConfig::new(
                model_from_args(&model, ModelKind::Minkowski)?,
                Scenario::Surface,
            );
            cfg.numeric.radius = radius;
            cfg.numeric.center = center;
            cfg.numeric.side = match side.as_deref() {
                None => None,
                Some("plus") => Some(SideConfig::Plus),
                Some("minus") => Some(SideConfig::Minus),
                Some(other) => {
                    return Err(ConfigError::Invalid(format!(
                        "side must be plus or minus, got {other:?}"
                    )))
                }
            };
            cfg.numeric.samples = samples.or(cfg.numeric.samples);
            apply_common(&mut cfg, &common)?;
            cfg
        }
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_kind(s: &str) -> Result<ModelKind, ConfigError> {
    Ok(match s {
        "minkowski" => ModelKind::Minkowski,
        "warped_product" => ModelKind::WarpedProduct,
        "randers_perturbed" => ModelKind::RandersPerturbed,
        "beem" => ModelKind::Beem,
        "anti_de_sitter" => ModelKind::AntiDeSitter,
        "expression" => ModelKind::Expression,
        other => {
            return Err(ConfigError::Invalid(format!(
                "unknown model kind {other:?}"
            )))
        }
    })
}

fn model_from_args(args: &ModelArgs, default_kind: ModelKind) -> Result<ModelConfig, ConfigError> {
    let mut mc = ModelConfig::bare(default_kind);
    apply_model(&mut mc, args)?;
    Ok(mc)
}

fn apply_model(mc: &mut ModelConfig, args: &ModelArgs) -> Result<(), ConfigError> {
    if let Some(kind) = &args.model {
        mc.kind = parse_kind(kind)?;
    }
    if args.dim.is_some() {
        mc.dim = args.dim;
    }
    if let Some(profile) = &args.profile {
        mc.profile = Some(match profile.as_str() {
            "exp" => ProfileConfig::Exp,
            "cosh" => ProfileConfig::Cosh,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "profile must be exp or cosh, got {other:?}"
                )))
            }
        });
    }
    if args.strength.is_some() {
        mc.strength = args.strength;
    }
    if args.k.is_some() {
        mc.k = args.k;
    }
    if args.curvature.is_some() {
        mc.curvature = args.curvature;
    }
    if args.lagrangian.is_some() {
        mc.lagrangian = args.lagrangian.clone();
    }
    if args.chart_half_width.is_some() {
        mc.chart_half_width = args.chart_half_width;
    }
    if args.future_seed.is_some() {
        mc.future_seed = args.future_seed.clone();
    }
    if let Some(weight) = &args.weight {
        let kind = match weight.as_str() {
            "linear_t" => WeightKindConfig::LinearT,
            "direction_dependent" => WeightKindConfig::DirectionDependent,
            "expression" => WeightKindConfig::Expression,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown weight kind {other:?}"
                )))
            }
        };
        mc.weight = Some(WeightConfig {
            kind,
            rate: args.rate,
            strength: args.weight_strength,
            source: args.weight_source.clone(),
        });
    } else if let Some(w) = &mut mc.weight {
        if args.rate.is_some() {
            w.rate = args.rate;
        }
        if args.weight_strength.is_some() {
            w.strength = args.weight_strength;
        }
        if args.weight_source.is_some() {
            w.source = args.weight_source.clone();
        }
    }
    Ok(())
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) -> Result<(), ConfigError> {
    if let Some(tol) = common.tol {
        cfg.numeric.tol = tol;
    }
    if common.out.is_some() {
        cfg.output.directory = common.out.clone();
    }
    if let Some(formats) = &common.format {
        let mut parsed = Vec::with_capacity(formats.len());
        for f in formats {
            parsed.push(match f.as_str() {
                "csv" => Format::Csv,
                "json" => Format::Json,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "format must be csv or json, got {other:?}"
                    )))
                }
            });
        }
        cfg.output.formats = parsed;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t_end) = common.t_end {
        cfg.numeric.t_span[1] = t_end;
    }
    if let Some(grid) = common.grid {
        cfg.numeric.grid = grid;
    }
    if let Some(n) = &common.n_eff {
        cfg.numeric.n_eff = EffDim(parse_eff_dim(n).map_err(ConfigError::Invalid)?);
    }
    if let Some(eps) = &common.epsilon {
        cfg.numeric.epsilon = eps.clone();
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if !(cfg.numeric.tol > 0.0) || !cfg.numeric.tol.is_finite() {
        return Err(ConfigError::Invalid(format!(
            "tol must be positive and finite, got {}",
            cfg.numeric.tol
        )));
    }
    let [t0, t1] = cfg.numeric.t_span;
    if !t0.is_finite() || !t1.is_finite() || !(t1 > t0) {
        return Err(ConfigError::Invalid(format!(
            "t_span must be a finite increasing interval, got [{t0}, {t1}]"
        )));
    }
    if cfg.numeric.grid < 2 {
        return Err(ConfigError::Invalid(format!(
            "grid must be at least 2, got {}",
            cfg.numeric.grid
        )));
    }
    if cfg.numeric.epsilon.is_empty() {
        return Err(ConfigError::Invalid("epsilon list must be nonempty".into()));
    }
    if cfg.numeric.epsilon.iter().any(|e| !e.is_finite()) {
        return Err(ConfigError::Invalid(
            "epsilon values must all be finite".into(),
        ));
    }
    if cfg.output.formats.is_empty() {
        return Err(ConfigError::Invalid(
            "output.formats must name at least one of csv, json".into(),
        ));
    }
    Ok(())
}
