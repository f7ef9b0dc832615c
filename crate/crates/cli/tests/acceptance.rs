//! End-to-end acceptance gate.
//!
//! Runs the `suite` scenario through the real binary and checks every
//! verification family it reports. Each family exercises one advertised
//! capability of the toolkit; the test prints one line per family and
//! fails if any family does not pass.

use std::process::Command;

/// Families the suite must report, in order, with a short statement of
/// what each one certifies.
const FAMILIES: &[(&str, &str)] = &[
    (
        "homogeneity_metric_battery",
        "L is 2-homogeneous, psi is 0-homogeneous, g_v has Lorentz signature and g_v(v,v) = 2L on all builtin models",
    ),
    (
        "lorentzian_reduction",
        "connection, curvature, and covariant derivatives reduce to the metric-geometry values on quadratic models",
    ),
    (
        "curvature_endomorphism_laws",
        "R_v annihilates v and g_v R_v is symmetric across models and causal directions",
    ),
    (
        "beem_cone_census",
        "the k-fold cone family exposes exactly k future components to the angular census",
    ),
    (
        "geodesic_conservation",
        "L is conserved to 1e-7 relative over long geodesic runs on every builtin model",
    ),
    (
        "weighted_identity_residuals",
        "Jacobi, Riccati, Raychaudhuri, and the focusing inequality hold to 1e-6 across the admissible (N, epsilon) range",
    ),
    (
        "epsilon_range_c_coefficient",
        "admissible epsilon ranges and the c(N, epsilon) coefficient match their closed forms",
    ),
    (
        "conjugate_point_quantitative",
        "conjugate points appear where constant-curvature comparison says they must, and nowhere they must not",
    ),
    (
        "focusing_bound_s0",
        "theta_eps < 0 with Ric_N >= 0 forces det J = 0 within the predicted proper-clock span s0",
    ),
    (
        "weighted_bishop",
        "the Bishop concavity inequality holds along weighted timelike congruences",
    ),
    (
        "trapped_surface_machinery",
        "surface normals, expansions, trapping flags, and the focal-time bound are correct on spheres",
    ),
    (
        "determinism_json",
        "identical configs reproduce byte-identical summary and table artifacts",
    ),
];

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = Command::new(env!("CARGO_BIN_EXE_finsleray"))
        .args(["suite", "--seed", "0", "--out"])
        .arg(dir.path())
        .output()
        .expect("run suite");

    let summary_path = dir.path().join("summary.json");
    let bytes = std::fs::read(&summary_path).unwrap_or_else(|e| {
        panic!(
            "suite left no summary.json ({e});\nstdout:\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    });
    let doc: serde_json::Value = serde_json::from_slice(&bytes).expect("summary.json parses");
    let verdicts = doc["verdicts"].as_array().expect("verdicts array");

    let mut failed = Vec::new();
    for (idx, (key, what)) in FAMILIES.iter().enumerate() {
        let found = verdicts.iter().find(|v| v["key"] == *key);
        let status = found
            .and_then(|v| v["status"].as_str())
            .unwrap_or("missing");
        println!("[{:2}/12] {status:12} {key}: {what}", idx + 1);
        if status != "pass" {
            let detail = found
                .and_then(|v| v["invariant"].as_str())
                .unwrap_or("(no verdict reported)");
            failed.push(format!("{key} [{status}]: {detail}"));
        }
    }

    assert_eq!(
        verdicts.len(),
        FAMILIES.len(),
        "suite reported a different number of families than expected"
    );
    assert!(
        failed.is_empty(),
        "acceptance families failed:\n{}",
        failed.join("\n")
    );
    assert!(
        out.status.success(),
        "suite exit status was {:?}",
        out.status.code()
    );
}
