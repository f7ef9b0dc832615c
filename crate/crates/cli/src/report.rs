//! Verdicts, tables, and deterministic report emission.
//!
//! A scenario produces a list of verdicts (pass / fail / inconclusive, each
//! with a margin and the name of the invariant it checked) plus zero or more
//! tables. Emission is byte-stable: floats go through a %.17g formatter, the
//! JSON summary is rendered from fixed-order structs, and wall-clock timing
//! stays out of the summary so two identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl VerdictStatus {
    pub fn label(&self) -> &'static str {
        match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::Inconclusive => "inconclusive",
        }
    }
}

/// One checked invariant. `margin` is the worst headroom observed:
/// positive means the check held with room to spare, negative by how
/// much it was violated. `invariant` names what was checked and, on a
/// fail, carries the witness.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub key: String,
    pub status: VerdictStatus,
    pub invariant: String,
    pub margin: Option<f64>,
}

fn clean_margin(margin: Option<f64>) -> Option<f64> {
    margin.filter(|m| m.is_finite())
}

impl Verdict {
    pub fn pass(key: &str, invariant: impl Into<String>, margin: Option<f64>) -> Verdict {
        Verdict {
            key: key.to_string(),
            status: VerdictStatus::Pass,
            invariant: invariant.into(),
            margin: clean_margin(margin),
        }
    }

    pub fn fail(key: &str, invariant: impl Into<String>, margin: Option<f64>) -> Verdict {
        Verdict {
            key: key.to_string(),
            status: VerdictStatus::Fail,
            invariant: invariant.into(),
            margin: clean_margin(margin),
        }
    }

    pub fn inconclusive(key: &str, invariant: impl Into<String>, margin: Option<f64>) -> Verdict {
        Verdict {
            key: key.to_string(),
            status: VerdictStatus::Inconclusive,
            invariant: invariant.into(),
            margin: clean_margin(margin),
        }
    }

    /// Pass iff `ok`, with the same key, invariant, and margin either way.
    pub fn check(key: &str, ok: bool, invariant: impl Into<String>, margin: Option<f64>) -> Verdict {
        if ok {
            Verdict::pass(key, invariant, margin)
        } else {
            Verdict::fail(key, invariant, margin)
        }
    }

    pub fn line(&self) -> String {
        let mut s = format!("{:<12} {}", self.status.label().to_uppercase(), self.key);
        if let Some(m) = self.margin {
            let _ = write!(s, "  margin={}", format_g17(m));
        }
        let _ = write!(s, "  [{}]", self.invariant);
        s
    }
}

#[derive(Debug, Clone)]
pub enum Field {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Num(x) => format_g17(*x),
            Field::Int(k) => k.to_string(),
            Field::Text(t) => {
                if t.contains(',') || t.contains('"') || t.contains('\n') {
                    format!("\"{}\"", t.replace('"', "\"\""))
                } else {
                    t.clone()
                }
            }
        }
    }
}

/// A CSV table; `name` becomes the file stem. Column order is fixed by
/// construction and never reordered during emission.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Table {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Field::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub struct ScenarioResult {
    pub scenario: &'static str,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
    /// Wall-clock seconds per stage; printed to stdout, never serialized.
    pub timing: Vec<(String, f64)>,
}

impl ScenarioResult {
    pub fn new(scenario: &'static str) -> ScenarioResult {
        ScenarioResult {
            scenario,
            verdicts: Vec::new(),
            tables: Vec::new(),
            timing: Vec::new(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        let mut saw_inconclusive = false;
        for v in &self.verdicts {
            match v.status {
                VerdictStatus::Fail => return 2,
                VerdictStatus::Inconclusive => saw_inconclusive = true,
                VerdictStatus::Pass => {}
            }
        }
        if saw_inconclusive {
            3
        } else {
            0
        }
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    version: &'static str,
    scenario: &'static str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    verdicts: &'a [Verdict],
    artifacts: &'a [String],
}

/// Renders the JSON summary for a finished scenario. Timing is excluded
/// on purpose; everything else is a pure function of config and results.
pub fn summary_bytes(cfg: &RunConfig, result: &ScenarioResult, artifacts: &[String]) -> Vec<u8> {
    let doc = SummaryDoc {
        version: env!("CARGO_PKG_VERSION"),
        scenario: result.scenario,
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg,
        verdicts: &result.verdicts,
        artifacts,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes the requested formats into `dir` and returns the paths written.
pub fn emit(cfg: &RunConfig, result: &ScenarioResult, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    if cfg.output.wants(Format::Csv) {
        for table in &result.tables {
            let name = format!("{}.csv", table.name);
            let path = dir.join(&name);
            std::fs::write(&path, table.render_csv())?;
            names.push(name);
            written.push(path);
        }
    }
    if cfg.output.wants(Format::Json) {
        let name = "summary.json".to_string();
        names.push(name.clone());
        let bytes = summary_bytes(cfg, result, &names);
        let path = dir.join(&name);
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

/// Formats a double exactly like C's printf("%.17g", x): up to 17
/// significant digits, trailing zeros stripped, fixed notation for rounded
/// exponents in [-4, 17), otherwise scientific with a signed exponent of
/// at least two digits.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf" } else { "inf" }.to_string();
    }
    let sci = format!("{:.16e}", x);
    let epos = sci.find('e').expect("exponent marker");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent parses");
    if (-4..17).contains(&exp) {
        let prec = (16 - exp).max(0) as usize;
        let mut fixed = format!("{:.*}", prec, x);
        if fixed.contains('.') {
            while fixed.ends_with('0') {
                fixed.pop();
            }
            if fixed.ends_with('.') {
                fixed.pop();
            }
        }
        fixed
    } else {
        let mantissa = &sci[..epos];
        let mut digits = mantissa.to_string();
        if digits.contains('.') {
            while digits.ends_with('0') {
                digits.pop();
            }
            if digits.ends_with('.') {
                digits.pop();
            }
        }
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", digits, sign, exp.abs())
    }
}
