//! End-to-end runs through the public API, the way a consumer would chain
//! the pieces: integrate a geodesic, build a transverse frame, transport
//! it, seed a Lagrange tensor, and evolve the weighted congruence. The
//! flat and constant-curvature cases have closed forms to pin against.

use finsleray::congruence::{evolve_weighted_congruence, point_congruence_tensor};
use finsleray::geodesic::{
    integrate_geodesic, orthonormal_frame, transport_frame, GeodesicOptions,
};
use finsleray::geometry::EffectiveDim;
use finsleray::model::SpacetimeModel;

/// Flat space, point congruence: J = (t - t0) I, so theta = m / t, no
/// shear, no focusing, and the focusing inequality holds with slack.
#[test]
fn flat_point_congruence_end_to_end() {
    let model = SpacetimeModel::minkowski(4).expect("builtin model");
    let x0 = model.chart().center();
    let v0 = [1.0, 0.3, 0.0, 0.0];
    let opts = GeodesicOptions::default();
    let run =
        integrate_geodesic(&model, &x0, &v0, (0.0, 5.0), &[0.2], &opts).expect("geodesic run");

    // The default options normalize a timelike seed to unit speed, so the
    // conserved value is L = -1/2 at both ends.
    let l_at = |t: f64| {
        model
            .lagrangian(&run.position(t), &run.velocity(t))
            .expect("L along the run")
    };
    let (l0, l1) = (l_at(run.t_start()), l_at(5.0));
    assert!((l0 + 0.5).abs() <= 1e-12, "unit-speed start has L = -1/2, got {l0}");
    assert!(
        (l1 - l0).abs() <= 1e-9 * l0.abs(),
        "L drifted from {l0} to {l1}"
    );

    let v_used = run.velocity(run.t_start());
    let legs = orthonormal_frame(&model, &x0, &v_used).expect("transverse frame");
    let frame = transport_frame(&run, &legs).expect("parallel transport");
    let tensor = point_congruence_tensor(&run, &frame).expect("point congruence");
    let report =
        evolve_weighted_congruence(&run, &frame, &tensor, EffectiveDim::Finite(6.0), 0.2, 200)
            .expect("congruence evolution");

    assert_eq!(report.m, 3);
    assert!(
        report.conjugate_times.is_empty(),
        "flat space focused at {:?}",
        report.conjugate_times.first()
    );
    assert!(report.s0.is_none(), "expanding run predicted a focusing time");

    // theta = 3 / t away from the caustic at t = 0.
    for (k, &t) in report.times.iter().enumerate() {
        if !(report.window.0..=report.window.1).contains(&k) || t < 0.5 {
            continue;
        }
        let expect = 3.0 / t;
        assert!(
            (report.theta[k] - expect).abs() <= 1e-6 * expect,
            "theta({t}) = {} but flat point congruence gives {expect}",
            report.theta[k]
        );
        assert!(
            report.sigma_eps_norm2[k].abs() <= 1e-9,
            "isotropic congruence grew shear {} at t = {t}",
            report.sigma_eps_norm2[k]
        );
        assert!(
            report.inequality_slack[k] <= 1e-6,
            "focusing inequality violated at t = {t}: slack {}",
            report.inequality_slack[k]
        );
    }
}

/// Constant flag curvature K: J = sin(sqrt(K) t) / sqrt(K) I along a unit
/// timelike comoving ray, so the whole tensor degenerates at pi / sqrt(K)
/// with a sign change of det J.
#[test]
fn constant_curvature_focusing_through_public_api() {
    let k_flag = 2.0;
    let model = SpacetimeModel::anti_de_sitter(4, k_flag).expect("builtin model");
    let x0 = model.chart().center();
    let v0 = [1.0, 0.0, 0.0, 0.0];
    let opts = GeodesicOptions::default();
    let run =
        integrate_geodesic(&model, &x0, &v0, (0.0, 3.0), &[0.0], &opts).expect("geodesic run");

    let v_used = run.velocity(run.t_start());
    let legs = orthonormal_frame(&model, &x0, &v_used).expect("transverse frame");
    let frame = transport_frame(&run, &legs).expect("parallel transport");
    let tensor = point_congruence_tensor(&run, &frame).expect("point congruence");
    let report =
        evolve_weighted_congruence(&run, &frame, &tensor, EffectiveDim::PlusInf, 0.0, 200)
            .expect("congruence evolution");

    let first = report
        .conjugate_times
        .first()
        .expect("constant curvature must focus");
    let expected = std::f64::consts::PI / k_flag.sqrt();
    assert!(
        (first.t - expected).abs() <= 1e-3,
        "first conjugate time {} misses pi / sqrt(K) = {expected}",
        first.t
    );
    assert_eq!(first.multiplicity, 3, "all transverse directions degenerate at once");
    assert!(first.sign_change, "det J = sin^3 changes sign at the zero");
}
