//! Jacobi tensor fields, weighted congruences, and focusing diagnostics.
//!
//! A Jacobi tensor J along a causal geodesic solves, in a parallel frame,
//!
//! ```text
//! J'' + R J = 0,    R^i_j = g(e_i, R_v(e_j))
//! ```
//!
//! with m = n transverse legs on timelike runs and m = n - 1 quotient legs
//! on null runs. The weighted objects are built from J_psi = e^{-psi/m} J:
//!
//! ```text
//! B_eps     = e^{a psi} (B - (psi'/m) I),      B = J' J^{-1},  a = 2(1-eps)/m
//! theta_eps = trace B_eps = e^{a psi} (theta - psi')
//! sigma_eps = B_eps - (theta_eps/m) I
//! R_(N,eps) = e^{2a psi} { R + (1/m)(psi'' - psi'^2/(N-n)) I }
//! ```
//!
//! where the star derivative is X* = e^{a psi} X' and n is the spatial
//! dimension (the psi'^2 denominator keeps N - n even on null runs). The
//! identities checked as residuals, with the base value b = 0 timelike and
//! b = 1 null:
//!
//! ```text
//! J_psi** + (2 eps/m) psi* J_psi* + R_(b,eps) J_psi            = 0
//! B_eps*  + (2 eps/m) psi* B_eps  + B_eps^2   + R_(b,eps)      = 0
//! theta_eps* + C theta_eps^2/m + Q^2-term + tr sigma_eps^2
//!            + Ric_N(eta*)                                     = 0
//! ```
//!
//! Every residual divides by 1 + sum of term magnitudes, so the stored
//! numbers are relative. Second derivatives of J come from a five-point
//! stencil on the dense J' output rather than from the right-hand side of
//! the integrated equation, so the residuals also see integration error.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geodesic::{GeodesicError, GeodesicRun, ParallelFrame};
use crate::geometry::{
    c_coefficient, curvature_at, epsilon_range_check, psi_eta_derivatives, weighted_ricci,
    CausalSide, EffectiveDim, GeometryError, WeightedRicciParams,
};
use crate::model::{CausalClass, ModelError};
use crate::ode::{dopri5, Dopri5Options, OdeError, Solution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CongruenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("tensor/frame size {got} does not match the run's transverse dimension {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("J is never invertible on the sample grid")]
    WindowEmpty,
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Transverse dimension m for a run: n timelike, n - 1 null.
pub fn transverse_dim(run: &GeodesicRun) -> usize {
    match run.class() {
        CausalClass::Lightlike => run.model().spatial_dim() - 1,
        _ => run.model().spatial_dim(),
    }
}

fn causal_side(run: &GeodesicRun) -> CausalSide {
    match run.class() {
        CausalClass::Lightlike => CausalSide::Null,
        _ => CausalSide::Timelike,
    }
}

fn base_dim(side: CausalSide) -> f64 {
    match side {
        CausalSide::Timelike => 0.0,
        CausalSide::Null => 1.0,
    }
}

/// Curvature endomorphism in the parallel frame: R^i_j with R(e_j)
/// expanded over the frame legs through the current gram matrix.
pub fn frame_curvature(
    run: &GeodesicRun,
    frame: &ParallelFrame,
    t: f64,
) -> Result<DMatrix<f64>, CongruenceError> {
    let (x, v) = run.state(t);
    let curv = curvature_at(run.model(), &x, &v)?;
    let g = run.model().metric_matrix(&x, &v)?;
    let legs = frame.basis(t);
    let m = frame.m;
    let dim = run.dim();
    let mut mixed = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut r_ej = vec![0.0; dim];
        for a in 0..dim {
            for b in 0..dim {
                r_ej[a] += curv.r_matrix[(a, b)] * legs[j][b];
            }
        }
        for i in 0..m {
            mixed[(i, j)] = crate::geometry::metric_inner(&g, &legs[i], &r_ej);
        }
    }
    let gram = frame.gram(run, t)?;
    let gram_inv = gram.clone().try_inverse().ok_or_else(|| {
        GeometryError::Degenerate {
            point: format!("{x:?}"),
            reason: "frame gram is singular".into(),
        }
    })?;
    Ok(gram_inv * mixed)
}

/// Weighted curvature endomorphism R_(N,eps) in the frame. For N equal to
/// the spatial dimension the psi'^2 term is singular; it is dropped when
/// psi' vanishes along the run and rejected otherwise.
pub fn weighted_frame_curvature(
    run: &GeodesicRun,
    frame: &ParallelFrame,
    t: f64,
    n_eff: EffectiveDim,
    epsilon: f64,
) -> Result<DMatrix<f64>, CongruenceError> {
    let r = frame_curvature(run, frame, t)?;
    let m = frame.m as f64;
    let n = run.model().spatial_dim() as f64;
    let (x, v) = run.state(t);
    let psi = run.psi_eta(t)?;
    let (d1, d2) = psi_eta_derivatives(run.model(), &x, &v)?;
    let v_scale = v.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    let weight_term = match n_eff {
        EffectiveDim::PlusInf => d2,
        EffectiveDim::Finite(nf) if nf == n => {
            if d1.abs() <= 1e-9 * (1.0 + v_scale) {
                d2
            } else {
                return Err(CongruenceError::BadInput(format!(
                    "R_(N,eps) is singular at N = n = {n} with psi' = {d1:.3e}"
                )));
            }
        }
        EffectiveDim::Finite(nf) => d2 - d1 * d1 / (nf - n),
    };
    let a = 2.0 * (1.0 - epsilon) / m;
    let pref = (2.0 * a * psi).exp();
    let mm = frame.m;
    let mut out = r;
    for i in 0..mm {
        out[(i, i)] += weight_term / m;
    }
    Ok(out * pref)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    FromPoint,
    FromSurface,
    Custom,
}

/// Dense-output Jacobi tensor J(t), J'(t) along a run, in a parallel frame.
#[derive(Debug, Clone)]
pub struct JacobiTensorPath {
    m: usize,
    kind: TensorKind,
    lagrange: bool,
    solution: Solution,
}

impl JacobiTensorPath {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    /// Whether the initial data satisfied the Lagrange identity, which then
    /// propagates along the whole run.
    pub fn lagrange_expected(&self) -> bool {
        self.lagrange
    }

    pub fn t_span(&self) -> (f64, f64) {
        (self.solution.t_start, self.solution.t_end)
    }

    pub fn j(&self, t: f64) -> DMatrix<f64> {
        let y = self.solution.sample(t);
        DMatrix::from_row_slice(self.m, self.m, &y[..self.m * self.m])
    }

    pub fn j_prime(&self, t: f64) -> DMatrix<f64> {
        let y = self.solution.sample(t);
        DMatrix::from_row_slice(self.m, self.m, &y[self.m * self.m..])
    }

    pub fn det_j(&self, t: f64) -> f64 {
        self.j(t).determinant()
    }

    /// J'' by a fourth-order stencil on the dense J' output: central in the
    /// interior, one-sided within two steps of the span ends.
    pub fn j_second_fd(&self, t: f64) -> DMatrix<f64> {
        let (t0, t1) = self.t_span();
        let mut h = 5e-3 * (1.0 + t.abs());
        let span = t1 - t0;
        if span < 8.0 * h {
            h = span / 8.0;
        }
        if t - 2.0 * h >= t0 && t + 2.0 * h <= t1 {
            let m2 = self.j_prime(t - 2.0 * h);
            let m1 = self.j_prime(t - h);
            let p1 = self.j_prime(t + h);
            let p2 = self.j_prime(t + 2.0 * h);
            (m2 - m1 * 8.0 + p1 * 8.0 - p2) / (12.0 * h)
        } else if t + 4.0 * h <= t1 {
            let f0 = self.j_prime(t);
            let f1 = self.j_prime(t + h);
            let f2 = self.j_prime(t + 2.0 * h);
            let f3 = self.j_prime(t + 3.0 * h);
            let f4 = self.j_prime(t + 4.0 * h);
            (f0 * -25.0 + f1 * 48.0 - f2 * 36.0 + f3 * 16.0 - f4 * 3.0) / (12.0 * h)
        } else {
            let f0 = self.j_prime(t);
            let f1 = self.j_prime(t - h);
            let f2 = self.j_prime(t - 2.0 * h);
            let f3 = self.j_prime(t - 3.0 * h);
            let f4 = self.j_prime(t - 4.0 * h);
            (f0 * 25.0 - f1 * 48.0 + f2 * 36.0 - f3 * 16.0 + f4 * 3.0) / (12.0 * h)
        }
    }

    /// Smallest singular value of the stacked [J; J'] matrix, normalized by
    /// the largest; zero would mean a common kernel vector.
    pub fn nontriviality_margin(&self, t: f64) -> f64 {
        let j = self.j(t);
        let jp = self.j_prime(t);
        let mut stacked = DMatrix::zeros(2 * self.m, self.m);
        stacked.view_mut((0, 0), (self.m, self.m)).copy_from(&j);
        stacked
            .view_mut((self.m, 0), (self.m, self.m))
            .copy_from(&jp);
        let sv = stacked.svd(false, false).singular_values;
        let smax = sv.max();
        if smax == 0.0 {
            0.0
        } else {
            sv.min() / smax
        }
    }

    /// Frobenius norm of (J')^T J - J^T J' (plain transpose: the frame is
    /// orthonormal, so the gram is the identity).
    pub fn lagrange_defect(&self, t: f64) -> f64 {
        let j = self.j(t);
        let jp = self.j_prime(t);
        (jp.transpose() * &j - j.transpose() * &jp).norm()
    }

    /// Condition number of J(t); infinite when singular.
    pub fn condition_number(&self, t: f64) -> f64 {
        let sv = self.j(t).svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin == 0.0 {
            f64::INFINITY
        } else {
            smax / smin
        }
    }
}

/// Integrate a Jacobi tensor from arbitrary initial data J(t0), J'(t0).
pub fn custom_congruence_tensor(
    run: &GeodesicRun,
    frame: &ParallelFrame,
    j0: &DMatrix<f64>,
    j0_prime: &DMatrix<f64>,
    kind: TensorKind,
) -> Result<JacobiTensorPath, CongruenceError> {
    let m = transverse_dim(run);
    if frame.m != m {
        return Err(CongruenceError::SizeMismatch {
            expected: m,
            got: frame.m,
        });
    }
    if j0.nrows() != m || j0.ncols() != m || j0_prime.nrows() != m || j0_prime.ncols() != m {
        return Err(CongruenceError::SizeMismatch {
            expected: m,
            got: j0.nrows().max(j0.ncols()).max(j0_prime.nrows()),
        });
    }
    let scale0 = 1.0 + j0.norm() + j0_prime.norm();
    let mut stacked = DMatrix::zeros(2 * m, m);
    stacked.view_mut((0, 0), (m, m)).copy_from(j0);
    stacked.view_mut((m, 0), (m, m)).copy_from(j0_prime);
    let sv = stacked.svd(false, false).singular_values;
    if sv.min() <= 1e-10 * sv.max().max(1e-300) {
        return Err(CongruenceError::BadInput(
            "initial J and J' share a kernel vector".into(),
        ));
    }
    let lagrange =
        (j0_prime.transpose() * j0 - j0.transpose() * j0_prime).norm() <= 1e-10 * scale0;

    let mut y0 = Vec::with_capacity(2 * m * m);
    y0.extend(j0.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    y0.extend(
        j0_prime
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    );

    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
        let r = frame_curvature(run, frame, t).map_err(|e| e.to_string())?;
        let mm = m * m;
        dy[..mm].copy_from_slice(&y[mm..]);
        let j = DMatrix::from_row_slice(m, m, &y[..mm]);
        let rj = r * j;
        for row in 0..m {
            for col in 0..m {
                dy[mm + row * m + col] = -rj[(row, col)];
            }
        }
        Ok(())
    };
    let opts = Dopri5Options {
        rtol: 1e-10,
        atol: 1e-12,
        ..Dopri5Options::default()
    };
    let solution = dopri5(&mut rhs, (run.t_start(), run.t_end()), &y0, &opts, &[])?;
    Ok(JacobiTensorPath {
        m,
        kind,
        lagrange,
        solution,
    })
}

/// Point congruence: J(t0) = 0, J'(t0) = I, the geodesic variation through
/// a single event. The Lagrange identity holds automatically.
pub fn point_congruence_tensor(
    run: &GeodesicRun,
    frame: &ParallelFrame,
) -> Result<JacobiTensorPath, CongruenceError> {
    let m = transverse_dim(run);
    let j0 = DMatrix::zeros(m, m);
    let j0p = DMatrix::identity(m, m);
    custom_congruence_tensor(run, frame, &j0, &j0p, TensorKind::FromPoint)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePoint {
    pub t: f64,
    pub refinement_error: f64,
    /// Number of singular values of J below threshold at the located time.
    pub multiplicity: usize,
    /// False for a tangency: det J touches zero without changing sign.
    pub sign_change: bool,
}

/// Locate zeros of det J. Sign changes are refined by bisection; even-order
/// tangencies (det touches zero) are found as local minima of |det| whose
/// smallest singular value drops below 1e-8 times the run median scale.
/// For point congruences the scan starts just after the vertex, where
/// det J = 0 by construction.
pub fn detect_conjugate_points(tensor: &JacobiTensorPath) -> Vec<ConjugatePoint> {
    let (t0, t1) = tensor.t_span();
    let span = t1 - t0;
    if !(span > 0.0) {
        return Vec::new();
    }
    let start = if tensor.kind() == TensorKind::FromPoint {
        t0 + 1e-3 * span
    } else {
        t0
    };
    let k_scan = 2048;
    let mut ts = Vec::with_capacity(k_scan + 1);
    let mut dets = Vec::with_capacity(k_scan + 1);
    let mut smaxes = Vec::with_capacity(k_scan + 1);
    let mut smins = Vec::with_capacity(k_scan + 1);
    for k in 0..=k_scan {
        let t = start + (t1 - start) * k as f64 / k_scan as f64;
        let j = tensor.j(t);
        let sv = j.clone().svd(false, false).singular_values;
        ts.push(t);
        dets.push(j.determinant());
        smaxes.push(sv.max());
        smins.push(sv.min());
    }
    let mut sorted = smaxes.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2].max(1e-300);
    let sv_threshold = 1e-8 * median;

    let multiplicity_at = |t: f64| -> usize {
        let sv = tensor.j(t).svd(false, false).singular_values;
        sv.iter().filter(|s| **s < sv_threshold).count().max(1)
    };

    let mut found: Vec<ConjugatePoint> = Vec::new();
    for k in 1..=k_scan {
        if dets[k - 1] == 0.0 {
            continue;
        }
        if dets[k - 1] * dets[k] < 0.0 || dets[k] == 0.0 {
            let (mut lo, mut hi) = (ts[k - 1], ts[k]);
            let mut f_lo = dets[k - 1];
            for _ in 0..100 {
                if hi - lo <= 1e-9 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let f_mid = tensor.det_j(mid);
                if f_lo * f_mid <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    f_lo = f_mid;
                }
            }
            let t_star = 0.5 * (lo + hi);
            found.push(ConjugatePoint {
                t: t_star,
                refinement_error: hi - lo,
                multiplicity: multiplicity_at(t_star),
                sign_change: true,
            });
        }
    }
    // Tangencies: local dips of the smallest singular value with the same
    // det sign on both sides. The dip is refined on min-SV itself, which is
    // V-shaped at an even-order zero while |det| has a flat noise floor.
    let min_sv = |t: f64| -> f64 { tensor.j(t).svd(false, false).singular_values.min() };
    for k in 1..k_scan {
        let same_sign = dets[k - 1] * dets[k + 1] > 0.0;
        let local_min = smins[k] <= smins[k - 1] && smins[k] <= smins[k + 1];
        if !(same_sign && local_min && smins[k] < 1e-2 * median) {
            continue;
        }
        let (mut lo, mut hi) = (ts[k - 1], ts[k + 1]);
        for _ in 0..200 {
            if hi - lo <= 1e-9 {
                break;
            }
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if min_sv(m1) < min_sv(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t_star = 0.5 * (lo + hi);
        if min_sv(t_star) >= sv_threshold {
            continue;
        }
        if found.iter().any(|c| (c.t - t_star).abs() < 1e-6 * span.max(1.0)) {
            continue;
        }
        found.push(ConjugatePoint {
            t: t_star,
            refinement_error: hi - lo,
            multiplicity: multiplicity_at(t_star),
            sign_change: false,
        });
    }
    found.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    found
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum S0Outcome {
    /// det J must vanish within [t0, t0 + s0].
    Bound { s0: f64 },
    /// The clock never reaches the target value on this run.
    Horizon { tau_target: f64, tau_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S0Prediction {
    pub t0: f64,
    pub theta_eps_t0: f64,
    pub c: f64,
    pub outcome: S0Outcome,
}

/// Focusing-time bound s0 = tau^{-1}(tau(t0) - 1/(c theta_eps(t0))) - t0,
/// evaluated on the run's clock for the matching epsilon.
pub fn s0_prediction(
    run: &GeodesicRun,
    clock: usize,
    t0: f64,
    theta_eps_t0: f64,
    c: f64,
) -> Result<S0Prediction, CongruenceError> {
    if !(c > 0.0) {
        return Err(CongruenceError::BadInput(format!(
            "the bound needs c > 0, got {c}"
        )));
    }
    if !(theta_eps_t0 < 0.0) {
        return Err(CongruenceError::BadInput(format!(
            "the bound needs theta_eps(t0) < 0, got {theta_eps_t0}"
        )));
    }
    let tau_target = run.tau(clock, t0) - 1.0 / (c * theta_eps_t0);
    let outcome = match run.tau_inverse(clock, tau_target) {
        Some(t) => S0Outcome::Bound { s0: t - t0 },
        None => S0Outcome::Horizon {
            tau_target,
            tau_max: run.tau(clock, run.t_end()),
        },
    };
    Ok(S0Prediction {
        t0,
        theta_eps_t0,
        c,
        outcome,
    })
}

/// Evolution of the weighted congruence quantities over a sample grid.
#[derive(Debug, Clone)]
pub struct CongruenceReport {
    pub n_eff: EffectiveDim,
    pub epsilon: f64,
    pub c: f64,
    pub m: usize,
    pub times: Vec<f64>,
    /// Inclusive index range of the longest contiguous stretch where J is
    /// invertible (condition number below 1e10). Entries outside any
    /// invertible point are NaN.
    pub window: (usize, usize),
    pub theta: Vec<f64>,
    pub theta_eps: Vec<f64>,
    pub sigma_eps_norm2: Vec<f64>,
    pub b_eps: Vec<Option<DMatrix<f64>>>,
    pub ric_n_etastar: Vec<f64>,
    /// Relative residual of the applicable Raychaudhuri equation; NaN at
    /// N = n, which has no equation form.
    pub raychaudhuri_residual: Vec<f64>,
    /// Relative slack of theta* + c theta^2 + tr sigma^2 + Ric_N <= 0.
    pub inequality_slack: Vec<f64>,
    pub jacobi_residual: Vec<f64>,
    pub riccati_residual: Vec<f64>,
    pub conjugate_times: Vec<ConjugatePoint>,
    pub s0: Option<S0Prediction>,
}

/// Evaluate the weighted congruence along the run: B_eps, expansions,
/// shears, and the Jacobi/Riccati/Raychaudhuri residuals on the maximal
/// invertibility window. s0 is attached when the run carries a clock for
/// this epsilon and the expansion is negative somewhere on the window.
pub fn evolve_weighted_congruence(
    run: &GeodesicRun,
    frame: &ParallelFrame,
    tensor: &JacobiTensorPath,
    n_eff: EffectiveDim,
    epsilon: f64,
    grid: usize,
) -> Result<CongruenceReport, CongruenceError> {
    let m = transverse_dim(run);
    if frame.m != m || tensor.m() != m {
        return Err(CongruenceError::SizeMismatch {
            expected: m,
            got: frame.m.min(tensor.m()),
        });
    }
    if grid < 8 {
        return Err(CongruenceError::BadInput("grid too coarse".into()));
    }
    let side = causal_side(run);
    let params = WeightedRicciParams {
        n_eff,
        epsilon,
        side,
    };
    let n = run.model().spatial_dim();
    let range = epsilon_range_check(&params, n)?;
    if !range.admissible {
        return Err(CongruenceError::BadInput(format!(
            "epsilon = {epsilon} outside the admissible range (bound {}) for N = {n_eff}",
            range.bound
        )));
    }
    let c = c_coefficient(&params, n)?;
    let b = base_dim(side);
    let n_f = n as f64;
    let m_f = m as f64;
    let a = 2.0 * (1.0 - epsilon) / m_f;

    let (t0, t1) = tensor.t_span();
    let times: Vec<f64> = (0..=grid)
        .map(|k| t0 + (t1 - t0) * k as f64 / grid as f64)
        .collect();
    let invertible: Vec<bool> = times
        .iter()
        .map(|t| tensor.condition_number(*t) < 1e10)
        .collect();
    let window = longest_true_window(&invertible).ok_or(CongruenceError::WindowEmpty)?;

    let len = times.len();
    let nan = f64::NAN;
    let mut theta = vec![nan; len];
    let mut theta_eps_v = vec![nan; len];
    let mut sigma2 = vec![nan; len];
    let mut b_eps_v: Vec<Option<DMatrix<f64>>> = vec![None; len];
    let mut ric_star = vec![nan; len];
    let mut raych = vec![nan; len];
    let mut slack = vec![nan; len];
    let mut jacobi_res = vec![nan; len];
    let mut riccati_res = vec![nan; len];

    for k in 0..len {
        if !invertible[k] {
            continue;
        }
        let t = times[k];
        let (x, v) = run.state(t);
        let psi = run.psi_eta(t)?;
        let (psi_d1, psi_d2) = psi_eta_derivatives(run.model(), &x, &v)?;
        let pref = (a * psi).exp();

        let j = tensor.j(t);
        let jp = tensor.j_prime(t);
        let j_inv = match j.clone().try_inverse() {
            Some(inv) => inv,
            None => continue,
        };
        let b_mat = &jp * &j_inv;
        let theta_t = b_mat.trace();
        let ident = DMatrix::identity(m, m);
        let b_eps = (&b_mat - &ident * (psi_d1 / m_f)) * pref;
        let theta_eps = b_eps.trace();
        let sigma_eps = &b_eps - &ident * (theta_eps / m_f);
        let tr_sigma2 = (&sigma_eps * &sigma_eps).trace();

        let ric_n = weighted_ricci(run.model(), &x, &v, n_eff)?;
        let ric_n_star = pref * pref * ric_n;

        // Base-N weighted curvature in the frame, used by the Jacobi and
        // Riccati forms: R + (1/m)(psi'' + psi'^2/m) I, then e^{2a psi}.
        let r_frame = frame_curvature(run, frame, t)?;
        let r_tilde = &r_frame + &ident * ((psi_d2 + psi_d1 * psi_d1 / m_f) / m_f);
        let r_base_eps = &r_tilde * (pref * pref);

        let j_second = tensor.j_second_fd(t);

        // Weighted Jacobi residual, with the common e^{-psi/m} pulled out.
        let em = (-psi / m_f).exp();
        let j_psi = &j * em;
        let j_psi_p = (&jp - &j * (psi_d1 / m_f)) * em;
        let j_psi_pp = (&j_second - &jp * (2.0 * psi_d1 / m_f)
            + &j * ((psi_d1 / m_f).powi(2) - psi_d2 / m_f))
            * em;
        let term1 = &j_psi_pp * (pref * pref);
        let term2 = &j_psi_p * (pref * pref * (2.0 / m_f) * psi_d1);
        let term3 = &r_base_eps * &j_psi;
        let scale_j = 1.0 + term1.norm() + term2.norm() + term3.norm();
        jacobi_res[k] = (&term1 + &term2 + &term3).norm() / scale_j;

        // Weighted Riccati residual.
        let b_prime = &j_second * &j_inv - &b_mat * &b_mat;
        let b_eps_prime = &b_eps * (a * psi_d1) + (&b_prime - &ident * (psi_d2 / m_f)) * pref;
        let b_eps_star = &b_eps_prime * pref;
        let psi_star = pref * psi_d1;
        let rt1 = b_eps_star;
        let rt2 = &b_eps * ((2.0 * epsilon / m_f) * psi_star);
        let rt3 = &b_eps * &b_eps;
        let scale_r = 1.0 + rt1.norm() + rt2.norm() + rt3.norm() + r_base_eps.norm();
        riccati_res[k] = (&rt1 + &rt2 + &rt3 + &r_base_eps).norm() / scale_r;

        // Expansion rate in the clock parameter.
        let theta_prime = b_prime.trace();
        let theta_eps_prime = a * psi_d1 * theta_eps + pref * (theta_prime - psi_d2);
        let theta_eps_star = pref * theta_eps_prime;

        let equation = match n_eff {
            EffectiveDim::Finite(nf) if nf == b => {
                let terms = [
                    theta_eps_star,
                    (2.0 * epsilon / m_f) * psi_star * theta_eps,
                    theta_eps * theta_eps / m_f,
                    tr_sigma2,
                    ric_n_star,
                ];
                Some(terms)
            }
            EffectiveDim::Finite(nf) if nf == n_f => None,
            EffectiveDim::Finite(nf) => {
                let coef = 1.0 - epsilon * epsilon * (nf - n_f) / (nf - b);
                let square = epsilon * theta_eps / (nf - b) + psi_star / (nf - n_f);
                let terms = [
                    theta_eps_star,
                    coef * theta_eps * theta_eps / m_f,
                    ((nf - b) * (nf - n_f) / m_f) * square * square,
                    tr_sigma2,
                    ric_n_star,
                ];
                Some(terms)
            }
            EffectiveDim::PlusInf => {
                let square = epsilon * theta_eps + psi_star;
                let terms = [
                    theta_eps_star,
                    (1.0 - epsilon * epsilon) * theta_eps * theta_eps / m_f,
                    square * square / m_f,
                    tr_sigma2,
                    ric_n_star,
                ];
                Some(terms)
            }
        };
        if let Some(terms) = equation {
            let scale = 1.0 + terms.iter().map(|v| v.abs()).sum::<f64>();
            raych[k] = terms.iter().sum::<f64>() / scale;
        }

        // Inequality slack (defined for every admissible pair, N = n too).
        let ineq_terms = [
            theta_eps_star,
            c * theta_eps * theta_eps,
            tr_sigma2,
            ric_n_star,
        ];
        if ric_n_star.is_finite() {
            let scale = 1.0 + ineq_terms.iter().map(|v| v.abs()).sum::<f64>();
            slack[k] = ineq_terms.iter().sum::<f64>() / scale;
        } else {
            slack[k] = f64::NEG_INFINITY;
        }

        theta[k] = theta_t;
        theta_eps_v[k] = theta_eps;
        sigma2[k] = tr_sigma2;
        ric_star[k] = ric_n_star;
        b_eps_v[k] = Some(b_eps);
    }

    let conjugate_times = detect_conjugate_points(tensor);

    let clock = run
        .epsilons()
        .iter()
        .position(|e| (e - epsilon).abs() < 1e-12);
    let mut s0 = None;
    if let Some(ci) = clock {
        for k in window.0..=window.1 {
            if theta_eps_v[k].is_finite() && theta_eps_v[k] < 0.0 {
                s0 = s0_prediction(run, ci, times[k], theta_eps_v[k], c).ok();
                break;
            }
        }
    }

    Ok(CongruenceReport {
        n_eff,
        epsilon,
        c,
        m,
        times,
        window,
        theta,
        theta_eps: theta_eps_v,
        sigma_eps_norm2: sigma2,
        b_eps: b_eps_v,
        ric_n_etastar: ric_star,
        raychaudhuri_residual: raych,
        inequality_slack: slack,
        jacobi_residual: jacobi_res,
        riccati_residual: riccati_res,
        conjugate_times,
        s0,
    })
}

fn longest_true_window(flags: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for (k, flag) in flags.iter().enumerate() {
        match (flag, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                if best.map_or(true, |(bs, be)| k - 1 - s > be - bs) {
                    best = Some((s, k - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let e = flags.len() - 1;
        if best.map_or(true, |(bs, be)| e - s > be - bs) {
            best = Some((s, e));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericityReport {
    /// Largest spectral norm of the (weighted) curvature over the grid.
    pub margin: f64,
    pub threshold: f64,
    pub generic: bool,
}

/// Probe the genericity condition: somewhere along the run the curvature
/// endomorphism (or its weighted N = 0 / N = 1, eps = 0 variant) must be
/// nonzero.
pub fn genericity_probe(
    run: &GeodesicRun,
    frame: &ParallelFrame,
    weighted: bool,
    grid: usize,
) -> Result<GenericityReport, CongruenceError> {
    let base = base_dim(causal_side(run));
    let mut margin = 0.0_f64;
    for k in 0..=grid {
        let t = run.t_start() + (run.t_end() - run.t_start()) * k as f64 / grid as f64;
        let r = if weighted {
            weighted_frame_curvature(run, frame, t, EffectiveDim::Finite(base), 0.0)?
        } else {
            frame_curvature(run, frame, t)?
        };
        let top = r.svd(false, false).singular_values.max();
        margin = margin.max(top);
    }
    let threshold = 1e-10 * (1.0 + margin);
    Ok(GenericityReport {
        margin,
        threshold,
        generic: margin > threshold,
    })
}

#[derive(Debug, Clone)]
pub struct BishopReport {
    pub c: f64,
    pub times: Vec<f64>,
    /// Relative slack of xi** + c xi Ric_N(eta*) <= 0 at each grid time;
    /// -inf marks points where Ric_N is -inf (trivially satisfied).
    pub slack: Vec<f64>,
    pub worst: f64,
}

/// Concavity check for xi = |det J_psi|^c = e^{-c psi} |det J|^c: along the
/// invertibility window, xi** <= -c xi Ric_N(eta*). Derivatives of xi use a
/// five-point stencil on the dense outputs.
pub fn bishop_concavity(
    run: &GeodesicRun,
    tensor: &JacobiTensorPath,
    n_eff: EffectiveDim,
    epsilon: f64,
    grid: usize,
) -> Result<BishopReport, CongruenceError> {
    let m = transverse_dim(run);
    if tensor.m() != m {
        return Err(CongruenceError::SizeMismatch {
            expected: m,
            got: tensor.m(),
        });
    }
    let side = causal_side(run);
    let params = WeightedRicciParams {
        n_eff,
        epsilon,
        side,
    };
    let n = run.model().spatial_dim();
    let c = c_coefficient(&params, n)?;
    let m_f = m as f64;
    let a = 2.0 * (1.0 - epsilon) / m_f;

    let (t0, t1) = tensor.t_span();
    let coarse: Vec<f64> = (0..=grid)
        .map(|k| t0 + (t1 - t0) * k as f64 / grid as f64)
        .collect();
    let invertible: Vec<bool> = coarse
        .iter()
        .map(|t| tensor.condition_number(*t) < 1e10)
        .collect();
    let window = longest_true_window(&invertible).ok_or(CongruenceError::WindowEmpty)?;

    // xi = |det J|^c has unbounded derivatives at zeros of det J (c < 1),
    // so the stencil step must shrink as a node approaches one: with
    // h <= delta / 8 the five points stay in the smooth region and the
    // truncation error remains a small fraction of xi'' itself. Zeros are
    // located on a fine grid: sign changes bisected, near-tangencies kept
    // as-is (their location only feeds the step bound).
    let fine_n = grid.max(8) * 16;
    let mut kinks: Vec<f64> = Vec::new();
    let mut fine: Vec<(f64, f64)> = Vec::with_capacity(fine_n + 1);
    let mut max_abs = 0.0_f64;
    for k in 0..=fine_n {
        let t = t0 + (t1 - t0) * k as f64 / fine_n as f64;
        let d = tensor.det_j(t);
        max_abs = max_abs.max(d.abs());
        if let Some(&(tp, dp)) = fine.last() {
            if d == 0.0 || d.signum() != dp.signum() {
                let (mut lo, mut hi, mut dlo) = (tp, t, dp);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let dm = tensor.det_j(mid);
                    if dm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if dm.signum() == dlo.signum() {
                        lo = mid;
                        dlo = dm;
                    } else {
                        hi = mid;
                    }
                }
                kinks.push(0.5 * (lo + hi));
            }
        }
        fine.push((t, d));
    }
    for w in fine.windows(3) {
        let (tm, dm) = w[1];
        if dm.abs() < 1e-6 * max_abs && dm.abs() <= w[0].1.abs() && dm.abs() <= w[2].1.abs() {
            kinks.push(tm);
        }
    }

    let xi = |t: f64| -> Result<f64, CongruenceError> {
        let psi = run.psi_eta(t)?;
        Ok((-c * psi).exp() * tensor.det_j(t).abs().powf(c))
    };

    let mut times = Vec::new();
    let mut slack = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for k in window.0..=window.1 {
        let t = coarse[k];
        let mut h = (5e-3 * (1.0 + t.abs())).min((coarse[window.1] - coarse[window.0]) / 8.0);
        for z in &kinks {
            h = h.min((z - t).abs() / 8.0);
        }
        if h < 1e-7 * (1.0 + t.abs()) {
            continue;
        }
        if t - 2.0 * h < coarse[window.0] || t + 2.0 * h > coarse[window.1] {
            continue;
        }
        let f_m2 = xi(t - 2.0 * h)?;
        let f_m1 = xi(t - h)?;
        let f_0 = xi(t)?;
        let f_p1 = xi(t + h)?;
        let f_p2 = xi(t + 2.0 * h)?;
        let xi_p = (f_m2 - 8.0 * f_m1 + 8.0 * f_p1 - f_p2) / (12.0 * h);
        let xi_pp = (-f_m2 + 16.0 * f_m1 - 30.0 * f_0 + 16.0 * f_p1 - f_p2) / (12.0 * h * h);

        let (x, v) = run.state(t);
        let psi = run.psi_eta(t)?;
        let (psi_d1, _) = psi_eta_derivatives(run.model(), &x, &v)?;
        let pref = (a * psi).exp();
        let xi_star_star = pref * pref * (xi_pp + a * psi_d1 * xi_p);

        let ric_star = pref * pref * weighted_ricci(run.model(), &x, &v, n_eff)?;
        times.push(t);
        if ric_star.is_finite() {
            let scale = 1.0 + xi_star_star.abs() + (c * f_0 * ric_star).abs();
            let s = (xi_star_star + c * f_0 * ric_star) / scale;
            slack.push(s);
            worst = worst.max(s);
        } else {
            slack.push(f64::NEG_INFINITY);
        }
    }
    if times.is_empty() {
        return Err(CongruenceError::WindowEmpty);
    }
    Ok(BishopReport {
        c,
        times,
        slack,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{integrate_geodesic, orthonormal_frame, transport_frame, GeodesicOptions};
    use crate::model::{SpacetimeModel, WarpProfile, WeightKind};

    fn timelike_setup(
        model: &SpacetimeModel,
        v0: &[f64],
        t_end: f64,
        epsilons: &[f64],
    ) -> (GeodesicRun, ParallelFrame) {
        let x0 = vec![0.0; model.dim()];
        let run = integrate_geodesic(
            model,
            &x0,
            v0,
            (0.0, t_end),
            epsilons,
            &GeodesicOptions::default(),
        )
        .unwrap();
        let v_used = run.velocity(0.0);
        let legs = orthonormal_frame(model, &x0, &v_used).unwrap();
        let frame = transport_frame(&run, &legs).unwrap();
        (run, frame)
    }

    #[test]
    fn minkowski_point_congruence_is_linear() {
        let m = SpacetimeModel::minkowski(4).unwrap();
        let (run, frame) = timelike_setup(&m, &[1.0, 0.0, 0.0, 0.0], 6.0, &[0.0]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        assert!(tensor.lagrange_expected());
        for t in [1.0, 3.0, 5.5] {
            let j = tensor.j(t);
            for r in 0..3 {
                for c in 0..3 {
                    let want = if r == c { t } else { 0.0 };
                    assert!((j[(r, c)] - want).abs() < 1e-9);
                }
            }
            assert!(tensor.lagrange_defect(t) < 1e-9);
            assert!(tensor.nontriviality_margin(t) > 1e-2);
        }
        assert!(detect_conjugate_points(&tensor).is_empty());

        let report =
            evolve_weighted_congruence(&run, &frame, &tensor, EffectiveDim::PlusInf, 0.0, 60)
                .unwrap();
        // theta = m / t away from the vertex; residuals tiny on flat space.
        for k in report.window.0..=report.window.1 {
            let t = report.times[k];
            if t < 0.5 {
                continue;
            }
            assert!((report.theta[k] - 3.0 / t).abs() < 1e-7);
            assert!((report.theta_eps[k] - report.theta[k]).abs() < 1e-10);
            assert!(report.raychaudhuri_residual[k].abs() < 1e-8);
            assert!(report.jacobi_residual[k] < 1e-8);
            assert!(report.riccati_residual[k] < 1e-8);
            assert!(report.inequality_slack[k] < 1e-8);
        }
    }

    #[test]
    fn constant_positive_curvature_refocuses() {
        // Radial observer at the bowl center with tidal strength K:
        // R_frame = K I and J = sin(sqrt(K) t)/sqrt(K) I, refocusing at
        // pi/sqrt(K).
        let k = 2.0_f64;
        let ads = SpacetimeModel::anti_de_sitter(4, k).unwrap();
        let (run, frame) = timelike_setup(&ads, &[1.0, 0.0, 0.0, 0.0], 2.4, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        let j = tensor.j(1.0);
        let want_diag = k.sqrt().sin() / k.sqrt();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { want_diag } else { 0.0 };
                assert!(
                    (j[(r, c)] - want).abs() < 1e-4,
                    "J(1)[{r},{c}] = {}",
                    j[(r, c)]
                );
            }
        }
        let conj = detect_conjugate_points(&tensor);
        assert_eq!(conj.len(), 1, "found {conj:?}");
        assert!((conj[0].t - std::f64::consts::PI / k.sqrt()).abs() < 1e-3);
        assert!(conj[0].sign_change);
        assert_eq!(conj[0].multiplicity, 3);
    }

    #[test]
    fn even_multiplicity_zero_is_reported_as_tangency() {
        // One dimension lower the same congruence has det J ~ sin^2, which
        // touches zero without a sign change.
        let k = 2.0_f64;
        let ads = SpacetimeModel::anti_de_sitter(3, k).unwrap();
        let (run, frame) = timelike_setup(&ads, &[1.0, 0.0, 0.0], 2.4, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        let conj = detect_conjugate_points(&tensor);
        assert_eq!(conj.len(), 1, "found {conj:?}");
        assert!((conj[0].t - std::f64::consts::PI / k.sqrt()).abs() < 1e-3);
        assert!(!conj[0].sign_change);
        assert_eq!(conj[0].multiplicity, 2);
    }

    #[test]
    fn negative_curvature_never_refocuses() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let (run, frame) = timelike_setup(&m, &[1.0, 0.0, 0.0], 8.0, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        // J = sinh(t) I in the comoving frame.
        let j = tensor.j(2.0);
        assert!((j[(0, 0)] - 2.0_f64.sinh()).abs() < 1e-6);
        assert!(detect_conjugate_points(&tensor).is_empty());
    }

    #[test]
    fn weighted_residuals_vanish_on_curved_weighted_run() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let eps = 0.5;
        let (run, frame) = timelike_setup(&m, &[1.0, 0.12, -0.05], 6.0, &[eps]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        let n_eff = EffectiveDim::Finite(4.0);
        let report = evolve_weighted_congruence(&run, &frame, &tensor, n_eff, eps, 80).unwrap();

        let mut checked = 0;
        for k in report.window.0..=report.window.1 {
            let t = report.times[k];
            if t < 0.3 {
                continue;
            }
            checked += 1;
            assert!(
                report.jacobi_residual[k] < 1e-6,
                "jacobi {} at t = {t}",
                report.jacobi_residual[k]
            );
            assert!(
                report.riccati_residual[k] < 1e-6,
                "riccati {} at t = {t}",
                report.riccati_residual[k]
            );
            assert!(
                report.raychaudhuri_residual[k].abs() < 1e-6,
                "raychaudhuri {} at t = {t}",
                report.raychaudhuri_residual[k]
            );
            assert!(report.inequality_slack[k] < 1e-6);

            // Expansion identity theta_eps = e^{a psi}(theta - psi').
            let (x, v) = run.state(t);
            let psi = run.psi_eta(t).unwrap();
            let (d1, _) = psi_eta_derivatives(run.model(), &x, &v).unwrap();
            let a = 2.0 * (1.0 - eps) / 2.0;
            let direct = (a * psi).exp() * (report.theta[k] - d1);
            assert!(
                (report.theta_eps[k] - direct).abs() < 1e-7 * (1.0 + direct.abs()),
                "prefactor identity at t = {t}"
            );

            // trace(B_eps) = theta_eps by construction; spot the shear too.
            let b_eps = report.b_eps[k].as_ref().unwrap();
            assert!((b_eps.trace() - report.theta_eps[k]).abs() < 1e-12);
            assert!(report.sigma_eps_norm2[k] >= -1e-12);
        }
        assert!(checked > 40, "window too small: {checked} points");
    }

    #[test]
    fn weighted_curvature_trace_matches_weighted_ricci() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.25 })
            .unwrap();
        let eps = 0.4;
        let (run, frame) = timelike_setup(&m, &[1.0, 0.2, 0.1], 5.0, &[]);
        for n_eff in [EffectiveDim::Finite(5.0), EffectiveDim::PlusInf] {
            for t in [0.5, 2.0, 4.5] {
                let r_w = weighted_frame_curvature(&run, &frame, t, n_eff, eps).unwrap();
                let (x, v) = run.state(t);
                let psi = run.psi_eta(t).unwrap();
                let a = 2.0 * (1.0 - eps) / 2.0;
                let want =
                    (2.0 * a * psi).exp() * weighted_ricci(run.model(), &x, &v, n_eff).unwrap();
                assert!(
                    (r_w.trace() - want).abs() < 1e-7 * (1.0 + want.abs()),
                    "trace {} vs Ric {} at t = {t}",
                    r_w.trace(),
                    want
                );
            }
        }
    }

    #[test]
    fn null_congruence_residuals_on_weighted_flat_space() {
        let m = SpacetimeModel::minkowski(4)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.25 })
            .unwrap();
        let x0 = [0.0; 4];
        let v0 = [1.0, 1.0, 0.0, 0.0];
        let eps = 0.3;
        let run = integrate_geodesic(
            &m,
            &x0,
            &v0,
            (0.0, 8.0),
            &[eps],
            &GeodesicOptions::default(),
        )
        .unwrap();
        assert_eq!(run.class(), CausalClass::Lightlike);
        let legs = orthonormal_frame(&m, &x0, &v0).unwrap();
        let frame = transport_frame(&run, &legs).unwrap();
        assert_eq!(transverse_dim(&run), 2);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();

        // Exercise the +inf form and a finite N on the low side of the
        // null-admissible set.
        for n_eff in [EffectiveDim::PlusInf, EffectiveDim::Finite(0.0)] {
            let report =
                evolve_weighted_congruence(&run, &frame, &tensor, n_eff, eps, 80).unwrap();
            for k in report.window.0..=report.window.1 {
                let t = report.times[k];
                if t < 0.4 {
                    continue;
                }
                assert!(report.jacobi_residual[k] < 1e-6, "jacobi at {t}");
                assert!(report.riccati_residual[k] < 1e-6, "riccati at {t}");
                assert!(
                    report.raychaudhuri_residual[k].abs() < 1e-6,
                    "raychaudhuri {} at {t} for {n_eff:?}",
                    report.raychaudhuri_residual[k]
                );
                assert!(report.inequality_slack[k] < 1e-6);
            }
        }
    }

    #[test]
    fn epsilon_zero_residual_reduces_to_unweighted_form_on_j_psi() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let (run, frame) = timelike_setup(&m, &[1.0, 0.1, 0.0], 4.0, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        let report =
            evolve_weighted_congruence(&run, &frame, &tensor, EffectiveDim::Finite(0.0), 0.0, 40)
                .unwrap();

        // At eps = 0 the Riccati cross term carries a zero coefficient and
        // the Jacobi residual matrix is exactly J_psi** + R_(0,0) J_psi
        // with no first-order term beyond what J_psi** itself contains.
        let m_f = 2.0;
        for k in report.window.0..=report.window.1 {
            let t = report.times[k];
            if t < 0.3 {
                continue;
            }
            let (x, v) = run.state(t);
            let psi = run.psi_eta(t).unwrap();
            let (d1, d2) = psi_eta_derivatives(run.model(), &x, &v).unwrap();
            // a = 2(1 - 0)/m, so e^{2 a psi} = e^{4 psi / m}.
            let pref2 = (4.0 * psi / m_f).exp();
            let em = (-psi / m_f).exp();
            let j = tensor.j(t);
            let jp = tensor.j_prime(t);
            let jpp = tensor.j_second_fd(t);
            let ident = DMatrix::identity(2, 2);
            let j_psi = &j * em;
            let j_psi_p = (&jp - &j * (d1 / m_f)) * em;
            let j_psi_pp =
                (&jpp - &jp * (2.0 * d1 / m_f) + &j * ((d1 / m_f).powi(2) - d2 / m_f)) * em;
            // J_psi** = e^{2 a psi}(J_psi'' + a psi' J_psi').
            let j_psi_ss = (&j_psi_pp + &j_psi_p * ((2.0 / m_f) * d1)) * pref2;
            let r_base = (frame_curvature(&run, &frame, t).unwrap()
                + &ident * ((d2 + d1 * d1 / m_f) / m_f))
                * pref2;
            let unweighted_form = &j_psi_ss + &r_base * &j_psi;

            // The general formula's three terms, with eps = 0 in place.
            let term1 = &j_psi_pp * pref2;
            let term2 = &j_psi_p * (pref2 * (2.0 / m_f) * d1);
            let term3 = &r_base * &j_psi;
            let general_form = &term1 + &term2 + &term3;
            let mag = 1.0 + unweighted_form.norm();
            assert!(
                (&general_form - &unweighted_form).norm() < 1e-12 * mag,
                "reduction mismatch at t = {t}"
            );
            let here = unweighted_form.norm() / (1.0 + j_psi_ss.norm() + term3.norm());
            assert!(here < 1e-6, "unweighted-form residual {here} at t = {t}");
            assert!(report.jacobi_residual[k] < 1e-6);
        }
    }

    #[test]
    fn s0_bound_is_sharp_on_focusing_flat_congruence() {
        let m = SpacetimeModel::minkowski(4).unwrap();
        let (run, frame) = timelike_setup(&m, &[1.0, 0.0, 0.0, 0.0], 6.0, &[0.0]);
        // J = (4 - t) I focuses exactly at t = 4.
        let j0 = DMatrix::identity(3, 3) * 4.0;
        let j0p = DMatrix::identity(3, 3) * -1.0;
        let tensor =
            custom_congruence_tensor(&run, &frame, &j0, &j0p, TensorKind::Custom).unwrap();
        assert!(tensor.lagrange_expected());

        let report =
            evolve_weighted_congruence(&run, &frame, &tensor, EffectiveDim::PlusInf, 0.0, 120)
                .unwrap();
        assert!((report.c - 1.0 / 3.0).abs() < 1e-15);
        let s0 = report.s0.expect("theta_eps < 0 from the start");
        match s0.outcome {
            S0Outcome::Bound { s0: bound } => {
                let t_zero = 4.0;
                let t0 = s0.t0;
                assert!(
                    (t0 + bound - t_zero).abs() < 1e-6,
                    "bound {bound} from t0 = {t0}"
                );
            }
            S0Outcome::Horizon { .. } => panic!("bound should be reachable"),
        }
        let conj = detect_conjugate_points(&tensor);
        assert_eq!(conj.len(), 1);
        assert!((conj[0].t - 4.0).abs() < 1e-9);
        assert_eq!(conj[0].multiplicity, 3);

        // Truncated run: the clock never reaches the target.
        let (run2, frame2) = timelike_setup(&m, &[1.0, 0.0, 0.0, 0.0], 2.0, &[0.0]);
        let tensor2 =
            custom_congruence_tensor(&run2, &frame2, &j0, &j0p, TensorKind::Custom).unwrap();
        let report2 =
            evolve_weighted_congruence(&run2, &frame2, &tensor2, EffectiveDim::PlusInf, 0.0, 60)
                .unwrap();
        match report2.s0.unwrap().outcome {
            S0Outcome::Horizon {
                tau_target,
                tau_max,
            } => assert!(tau_target > tau_max),
            S0Outcome::Bound { .. } => panic!("target lies beyond the run"),
        }
    }

    #[test]
    fn genericity_margins_match_closed_forms() {
        let flat = SpacetimeModel::minkowski(3).unwrap();
        let (run, frame) = timelike_setup(&flat, &[1.0, 0.0, 0.0], 4.0, &[]);
        let probe = genericity_probe(&run, &frame, false, 32).unwrap();
        assert!(!probe.generic);
        assert_eq!(probe.margin, 0.0);

        let curved = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let (run_c, frame_c) = timelike_setup(&curved, &[1.0, 0.0, 0.0], 4.0, &[]);
        let probe_c = genericity_probe(&run_c, &frame_c, false, 32).unwrap();
        assert!(probe_c.generic);
        assert!((probe_c.margin - 1.0).abs() < 1e-6);

        // Flat space with psi = -lambda x0: the weighted probe sees
        // (1/n)(psi'' + psi'^2/n) = lambda^2/n^2 at t = 0, decaying after.
        let lambda = 0.3;
        let weighted = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: lambda })
            .unwrap();
        let (run_w, frame_w) = timelike_setup(&weighted, &[1.0, 0.0, 0.0], 4.0, &[]);
        let plain = genericity_probe(&run_w, &frame_w, false, 32).unwrap();
        assert!(!plain.generic);
        let probe_w = genericity_probe(&run_w, &frame_w, true, 32).unwrap();
        let expected = lambda * lambda / 4.0;
        assert!(
            (probe_w.margin - expected).abs() < 1e-6,
            "margin {} vs {expected}",
            probe_w.margin
        );
        assert!(probe_w.generic);
    }

    #[test]
    fn bishop_concavity_holds_on_weighted_runs() {
        // Flat, unweighted: xi = t is linear, slack is exactly zero.
        let flat = SpacetimeModel::minkowski(4).unwrap();
        let (run, frame) = timelike_setup(&flat, &[1.0, 0.0, 0.0, 0.0], 6.0, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        let flat_report =
            bishop_concavity(&run, &tensor, EffectiveDim::PlusInf, 0.0, 60).unwrap();
        assert!(flat_report.worst < 1e-8, "worst {}", flat_report.worst);

        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let (run_w, frame_w) = timelike_setup(&m, &[1.0, 0.1, 0.0], 6.0, &[]);
        let tensor_w = point_congruence_tensor(&run_w, &frame_w).unwrap();
        let report = bishop_concavity(&run_w, &tensor_w, EffectiveDim::Finite(6.0), 0.3, 60)
            .unwrap();
        assert!(report.worst < 1e-6, "worst slack {}", report.worst);
    }

    #[test]
    fn inadmissible_pairs_are_rejected() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let (run, frame) = timelike_setup(&m, &[1.0, 0.0, 0.0], 3.0, &[]);
        let tensor = point_congruence_tensor(&run, &frame).unwrap();
        // |eps| = 1 sits exactly on the boundary for N = +inf.
        assert!(evolve_weighted_congruence(
            &run,
            &frame,
            &tensor,
            EffectiveDim::PlusInf,
            1.0,
            40
        )
        .is_err());
        // At N = n every epsilon is admissible; the report has no equation
        // residual but carries the inequality.
        let report = evolve_weighted_congruence(
            &run,
            &frame,
            &tensor,
            EffectiveDim::Finite(2.0),
            1.0,
            40,
        )
        .unwrap();
        for k in report.window.0..=report.window.1 {
            assert!(report.raychaudhuri_residual[k].is_nan());
            // psi = 0 keeps Ric_n finite, so the slack is real here.
            assert!(report.inequality_slack[k] < 1e-8);
        }
    }
}
