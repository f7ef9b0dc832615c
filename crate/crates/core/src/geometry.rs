//! Pointwise geometry of a weighted Lorentz-Finsler structure.
//!
//! Everything here comes from one jet evaluation of L per point. With
//! g_ab(v) = d^2 L / dv^a dv^b, the objects are
//!
//! ```text
//! G^a(v)   = 1/2 g^(ad) (v^b d^2 L/dx^b dv^d - dL/dx^d)        (spray)
//! N^a_b    = dG^a/dv^b                                          (nonlinear connection)
//! Gtil^a_bc = 1/2 g^(ad) (d_b g_dc + d_c g_bd - d_d g_bc)       (formal Christoffel)
//! Gam^a_bc = Gtil^a_bc - 1/2 g^(ad) (dg_dc/dv^m N^m_b
//!              + dg_bd/dv^m N^m_c - dg_bc/dv^m N^m_d)           (modified)
//! R^a_b    = 2 dG^a/dx^b - (dN^a_b/dx^c v^c - 2 dN^a_b/dv^c G^c)
//!              - N^a_c N^c_b                                    (curvature)
//! ```
//!
//! The spray/connection values need a (1x, 3v) jet and the curvature path a
//! (2x, 4v) jet: the dN/dv . G term carries fourth vertical derivatives of
//! L whenever the spray is nonzero and L is not quadratic in v.
//!
//! Weighted Ricci follows Ric_N(v) = Ric(v) + psi''_eta(0) -
//! psi'_eta(0)^2 / (N - n) where eta is the geodesic with eta'(0) = v, with
//! the N = +inf and N = n conventions spelled out at [`weighted_ricci`].

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::jet::{seed_point, Jet, JetSpace};
use crate::model::{CausalClass, ModelError, SpacetimeModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("vertical metric is degenerate at ({point}): {reason}")]
    Degenerate { point: String, reason: String },
    #[error("flag denominator {denominator:.3e} below tolerance {tol:.3e}")]
    DegenerateFlag { denominator: f64, tol: f64 },
    #[error("direction must be {expected}, got {got:?}")]
    WrongCausalClass {
        expected: &'static str,
        got: CausalClass,
    },
    #[error("parameter out of range: {0}")]
    Parameter(String),
}

/// Vertical metric with inverse at a point of the tangent bundle.
#[derive(Debug, Clone)]
pub struct MetricAtVector {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
}

/// Spray, nonlinear connection and both Christoffel arrays at one (x, v).
#[derive(Debug, Clone)]
pub struct ConnectionData {
    /// Gtil^a_bc indexed as gamma_tilde[a][(b, c)].
    pub gamma_tilde: Vec<DMatrix<f64>>,
    pub spray: Vec<f64>,
    pub nonlinear: DMatrix<f64>,
    /// Modified Gam^a_bc indexed as gamma[a][(b, c)].
    pub gamma: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct CurvatureAtVector {
    pub r_matrix: DMatrix<f64>,
    pub ricci: f64,
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
}

/// Effective dimension parameter N, an extended real with explicit +inf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectiveDim {
    Finite(f64),
    PlusInf,
}

impl EffectiveDim {
    pub fn as_f64(self) -> f64 {
        match self {
            EffectiveDim::Finite(n) => n,
            EffectiveDim::PlusInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, EffectiveDim::Finite(_))
    }
}

impl std::fmt::Display for EffectiveDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectiveDim::Finite(n) => write!(f, "{n}"),
            EffectiveDim::PlusInf => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalSide {
    Timelike,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRicciParams {
    pub n_eff: EffectiveDim,
    pub epsilon: f64,
    pub side: CausalSide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRange {
    pub admissible: bool,
    /// Supremum of |epsilon|; +inf when every epsilon is admissible.
    pub bound: f64,
    /// True when the range condition is void (N equals the base dimension).
    pub void: bool,
}

/// Rejection band: the admissibility inequalities are strict, so epsilon
/// within this distance of the bound is treated as outside.
const EPSILON_BOUNDARY_BAND: f64 = 1e-9;

pub fn metric_at(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<MetricAtVector, GeometryError> {
    require_nonzero(v)?;
    let g = model.metric_matrix(x, v)?;
    crate::model::check_lorentzian(&g, x)?;
    let g_inv = invert_values(&g, x)?;
    Ok(MetricAtVector {
        g,
        g_inv,
        point: x.to_vec(),
        direction: v.to_vec(),
    })
}

/// g_v(a, b) for a metric matrix.
pub fn metric_inner(g: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            acc += g[(i, j)] * a[i] * b[j];
        }
    }
    acc
}

pub fn connection_at(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<ConnectionData, GeometryError> {
    require_nonzero(v)?;
    let dim = model.dim();
    let sp = spray_jets(model, x, v, 1, 3, 0, 1)?;
    let zero = vec![0usize; dim];

    let spray: Vec<f64> = sp.spray.iter().map(|j| j.value()).collect();
    let mut nonlinear = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            nonlinear[(a, b)] = sp.spray[a]
                .partial(&zero, &unit(dim, b))
                .expect("first fiber derivative inside truncation");
        }
    }

    // dg_bc/dx^a and dg_bc/dv^m straight from the box jet of L.
    let l = &sp.l_box;
    let dgdx = |a: usize, b: usize, c: usize| -> f64 {
        l.partial(&unit(dim, a), &pair(dim, b, c)).expect("in range")
    };
    let dgdv = |m: usize, b: usize, c: usize| -> f64 {
        l.partial(&zero, &triple(dim, m, b, c)).expect("in range")
    };

    let ginv = &sp.ginv_values;
    let mut gamma_tilde = vec![DMatrix::zeros(dim, dim); dim];
    for a in 0..dim {
        for b in 0..dim {
            for c in b..dim {
                let mut acc = 0.0;
                for d in 0..dim {
                    acc += ginv[(a, d)] * (dgdx(b, d, c) + dgdx(c, b, d) - dgdx(d, b, c));
                }
                gamma_tilde[a][(b, c)] = 0.5 * acc;
                gamma_tilde[a][(c, b)] = 0.5 * acc;
            }
        }
    }

    let mut gamma = gamma_tilde.clone();
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let mut corr = 0.0;
                for d in 0..dim {
                    let mut inner = 0.0;
                    for m in 0..dim {
                        inner += dgdv(m, d, c) * nonlinear[(m, b)]
                            + dgdv(m, b, d) * nonlinear[(m, c)]
                            - dgdv(m, b, c) * nonlinear[(m, d)];
                    }
                    corr += ginv[(a, d)] * inner;
                }
                gamma[a][(b, c)] -= 0.5 * corr;
            }
        }
    }

    Ok(ConnectionData {
        gamma_tilde,
        spray,
        nonlinear,
        gamma,
    })
}

pub fn curvature_at(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<CurvatureAtVector, GeometryError> {
    require_nonzero(v)?;
    if model.classify_vector(x, v)? == CausalClass::Spacelike {
        return Err(GeometryError::WrongCausalClass {
            expected: "causal (timelike or lightlike)",
            got: CausalClass::Spacelike,
        });
    }
    let dim = model.dim();
    let sp = spray_jets(model, x, v, 2, 4, 1, 2)?;
    let zero = vec![0usize; dim];

    let g_val: Vec<f64> = sp.spray.iter().map(|j| j.value()).collect();
    let mut n_val = DMatrix::zeros(dim, dim);
    let mut dg_dx = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            n_val[(a, b)] = sp.spray[a].partial(&zero, &unit(dim, b)).expect("in range");
            dg_dx[(a, b)] = sp.spray[a].partial(&unit(dim, b), &zero).expect("in range");
        }
    }

    let mut r = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut val = 2.0 * dg_dx[(a, b)];
            for c in 0..dim {
                let dn_dx = sp.spray[a]
                    .partial(&unit(dim, c), &unit(dim, b))
                    .expect("in range");
                let dn_dv = sp.spray[a]
                    .partial(&zero, &pair(dim, b, c))
                    .expect("in range");
                val -= dn_dx * v[c] - 2.0 * dn_dv * g_val[c];
                val -= n_val[(a, c)] * n_val[(c, b)];
            }
            r[(a, b)] = val;
        }
    }

    let ricci = r.trace();
    Ok(CurvatureAtVector {
        r_matrix: r,
        ricci,
        point: x.to_vec(),
        direction: v.to_vec(),
    })
}

/// Flag curvature of the plane spanned by the timelike flagpole v and w:
/// K(v,w) = -g_v(R_v(w), w) / (g_v(v,v) g_v(w,w) - g_v(v,w)^2).
pub fn flag_curvature(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    w: &[f64],
) -> Result<f64, GeometryError> {
    if model.classify_vector(x, v)? != CausalClass::Timelike {
        return Err(GeometryError::WrongCausalClass {
            expected: "timelike flagpole",
            got: model.classify_vector(x, v)?,
        });
    }
    let metric = metric_at(model, x, v)?;
    let curv = curvature_at(model, x, v)?;
    let gvv = metric_inner(&metric.g, v, v);
    let gww = metric_inner(&metric.g, w, w);
    let gvw = metric_inner(&metric.g, v, w);
    let den = gvv * gww - gvw * gvw;
    let scale = metric.g.norm()
        * v.iter().map(|c| c * c).sum::<f64>()
        * w.iter().map(|c| c * c).sum::<f64>();
    let tol = 1e-10 * scale.max(1e-300);
    if den.abs() < tol {
        return Err(GeometryError::DegenerateFlag {
            denominator: den,
            tol,
        });
    }
    let rw: Vec<f64> = (0..v.len())
        .map(|a| (0..v.len()).map(|b| curv.r_matrix[(a, b)] * w[b]).sum())
        .collect();
    Ok(-metric_inner(&metric.g, &rw, w) / den)
}

/// Weighted Ricci curvature Ric_N(v) for causal v.
///
/// N = +inf drops the psi'^2 term; N = n (the spatial dimension) yields
/// -inf unless psi'_eta(0) vanishes (within 1e-9 scaled), in which case it
/// equals Ric + psi''. Unweighted models return Ric(v) for every N.
pub fn weighted_ricci(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    n_eff: EffectiveDim,
) -> Result<f64, GeometryError> {
    if model.classify_vector(x, v)? == CausalClass::Spacelike {
        return Err(GeometryError::WrongCausalClass {
            expected: "causal (timelike or lightlike)",
            got: CausalClass::Spacelike,
        });
    }
    let ric = curvature_at(model, x, v)?.ricci;
    if !model.has_weight() {
        return Ok(ric);
    }
    let (psi1, psi2) = psi_eta_derivatives(model, x, v)?;
    let n = model.spatial_dim() as f64;
    Ok(match n_eff {
        EffectiveDim::PlusInf => ric + psi2,
        EffectiveDim::Finite(nn) if nn == n => {
            let v_scale = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            if psi1.abs() > 1e-9 * (1.0 + v_scale) {
                f64::NEG_INFINITY
            } else {
                ric + psi2
            }
        }
        EffectiveDim::Finite(nn) => ric + psi2 - psi1 * psi1 / (nn - n),
    })
}

/// First and second derivatives of t -> psi(eta(t), eta'(t)) at t = 0 along
/// the geodesic with eta'(0) = v: a five-point stencil with step
/// h = 1e-3 * (1 + |x|) / (1 + |v|), Richardson-combined with h/2.
pub fn psi_eta_derivatives(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<(f64, f64), GeometryError> {
    let x_scale = x.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let v_scale = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let h = 1e-3 * (1.0 + x_scale) / (1.0 + v_scale);
    let coarse = psi_stencil(model, x, v, h)?;
    let fine = psi_stencil(model, x, v, 0.5 * h)?;
    // Both stencils are fourth-order accurate; one Richardson level knocks
    // the leading error term out.
    let d1 = (16.0 * fine.0 - coarse.0) / 15.0;
    let d2 = (16.0 * fine.1 - coarse.1) / 15.0;
    Ok((d1, d2))
}

fn psi_stencil(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    h: f64,
) -> Result<(f64, f64), GeometryError> {
    let psi0 = model.weight(x, v)?;
    let (xm1, vm1) = geodesic_micro(model, x, v, -h)?;
    let (xm2, vm2) = geodesic_micro(model, &xm1, &vm1, -h)?;
    let (xp1, vp1) = geodesic_micro(model, x, v, h)?;
    let (xp2, vp2) = geodesic_micro(model, &xp1, &vp1, h)?;
    let m2 = model.weight(&xm2, &vm2)?;
    let m1 = model.weight(&xm1, &vm1)?;
    let p1 = model.weight(&xp1, &vp1)?;
    let p2 = model.weight(&xp2, &vp2)?;
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * psi0 + 16.0 * p1 - p2) / (12.0 * h * h);
    Ok((d1, d2))
}

/// Spray coefficients G^a(x, v) as plain values.
pub fn spray_at(model: &SpacetimeModel, x: &[f64], v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let sp = spray_jets(model, x, v, 1, 2, 0, 0)?;
    Ok(sp.spray.iter().map(|j| j.value()).collect())
}

/// One RK4 step of the geodesic equation x' = v, v' = -2G(x, v) over dt,
/// split into four substeps (local error far below stencil truncation).
fn geodesic_micro(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
    let mut x = x.to_vec();
    let mut v = v.to_vec();
    let substeps = 4;
    let h = dt / substeps as f64;
    let rhs = |x: &[f64], v: &[f64]| -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        let g = spray_at(model, x, v)?;
        Ok((v.to_vec(), g.iter().map(|gi| -2.0 * gi).collect()))
    };
    for _ in 0..substeps {
        let (k1x, k1v) = rhs(&x, &v)?;
        let (k2x, k2v) = rhs(
            &add_scaled(&x, &k1x, 0.5 * h),
            &add_scaled(&v, &k1v, 0.5 * h),
        )?;
        let (k3x, k3v) = rhs(
            &add_scaled(&x, &k2x, 0.5 * h),
            &add_scaled(&v, &k2v, 0.5 * h),
        )?;
        let (k4x, k4v) = rhs(&add_scaled(&x, &k3x, h), &add_scaled(&v, &k3v, h))?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    Ok((x, v))
}

fn add_scaled(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(ai, bi)| ai + s * bi).collect()
}

/// Admissibility of (N, epsilon) per side. Timelike N must lie in
/// (-inf, 0] u [n, +inf], null N in (-inf, 1] u [n, +inf]. The bound is
/// sqrt(N/(N-n)) (timelike) or sqrt((N-1)/(N-n)) (null), +inf when the
/// condition is void at N = n, and the base cases N = 0 (timelike) and
/// N = 1 (null) admit only epsilon = 0. Inequalities are strict, with a
/// 1e-9 rejection band at the bound.
pub fn epsilon_range_check(
    params: &WeightedRicciParams,
    n: usize,
) -> Result<EpsilonRange, GeometryError> {
    let n_f = n as f64;
    let eps = params.epsilon;
    if !eps.is_finite() {
        return Err(GeometryError::Parameter(format!(
            "epsilon must be finite, got {eps}"
        )));
    }
    let (base, legal_gap): (f64, _) = match params.side {
        CausalSide::Timelike => (0.0, (0.0, n_f)),
        CausalSide::Null => {
            if n < 2 {
                return Err(GeometryError::Parameter(
                    "null side needs spatial dimension at least 2".into(),
                ));
            }
            (1.0, (1.0, n_f))
        }
    };
    let nn = match params.n_eff {
        EffectiveDim::PlusInf => {
            let bound = 1.0;
            return Ok(EpsilonRange {
                admissible: eps.abs() < bound - EPSILON_BOUNDARY_BAND,
                bound,
                void: false,
            });
        }
        EffectiveDim::Finite(nn) => nn,
    };
    if !nn.is_finite() {
        return Err(GeometryError::Parameter(format!(
            "N must be finite or +inf, got {nn}"
        )));
    }
    if nn > legal_gap.0 && nn < legal_gap.1 {
        return Err(GeometryError::Parameter(format!(
            "N = {nn} lies in the illegal gap ({}, {}) for this side",
            legal_gap.0, legal_gap.1
        )));
    }
    if nn == n_f {
        return Ok(EpsilonRange {
            admissible: true,
            bound: f64::INFINITY,
            void: true,
        });
    }
    if nn == base {
        return Ok(EpsilonRange {
            admissible: eps == 0.0,
            bound: 0.0,
            void: false,
        });
    }
    let ratio = (nn - base) / (nn - n_f);
    let bound = ratio.sqrt();
    Ok(EpsilonRange {
        admissible: eps.abs() < bound - EPSILON_BOUNDARY_BAND,
        bound,
        void: false,
    })
}

/// c(N, epsilon) = (1 - epsilon^2 (N-n)/N) / n on the timelike side with
/// c(0, 0) := 1/n, and (1 - epsilon^2 (N-n)/(N-1)) / (n-1) on the null side
/// with c(1, 0) := 1/(n-1); N = n gives 1/n (resp. 1/(n-1)) for every
/// epsilon. Positive for every admissible pair.
pub fn c_coefficient(params: &WeightedRicciParams, n: usize) -> Result<f64, GeometryError> {
    let range = epsilon_range_check(params, n)?;
    if !range.admissible {
        return Err(GeometryError::Parameter(format!(
            "(N, epsilon) = ({}, {}) outside the admissible range (bound {})",
            params.n_eff, params.epsilon, range.bound
        )));
    }
    let n_f = n as f64;
    let (base, denom) = match params.side {
        CausalSide::Timelike => (0.0, n_f),
        CausalSide::Null => (1.0, n_f - 1.0),
    };
    let eps2 = params.epsilon * params.epsilon;
    let factor = match params.n_eff {
        EffectiveDim::PlusInf => 1.0 - eps2,
        EffectiveDim::Finite(nn) if nn == n_f => 1.0,
        EffectiveDim::Finite(nn) if nn == base => 1.0,
        EffectiveDim::Finite(nn) => 1.0 - eps2 * (nn - n_f) / (nn - base),
    };
    Ok(factor / denom)
}

struct SprayJets {
    l_box: Jet,
    spray: Vec<Jet>,
    #[allow(dead_code)]
    g_values: DMatrix<f64>,
    ginv_values: DMatrix<f64>,
}

/// Evaluate L once in a (box_x, box_v) jet box and return the spray as jets
/// in the (w_x, w_v) working truncation, along with metric values.
fn spray_jets(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    box_x: usize,
    box_v: usize,
    w_x: usize,
    w_v: usize,
) -> Result<SprayJets, GeometryError> {
    let dim = model.dim();
    let space = JetSpace::get(dim, box_x, box_v);
    let (xj, vj) = seed_point(&space, x, v);
    let l_box = model.lagrangian(&xj, &vj)?;
    let w = JetSpace::get(dim, w_x, w_v);
    let zero = vec![0usize; dim];

    let mut g_jets: Vec<Vec<Jet>> = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut row = Vec::with_capacity(dim);
        for b in 0..dim {
            let (lo, hi) = (a.min(b), a.max(b));
            row.push(l_box.partial_jet(&zero, &pair(dim, lo, hi), &w));
        }
        g_jets.push(row);
    }
    let mut g_values = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            g_values[(a, b)] = g_jets[a][b].value();
        }
    }
    let ginv_jets = jet_matrix_inverse(&g_jets, &w, x)?;
    let mut ginv_values = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            ginv_values[(a, b)] = ginv_jets[a][b].value();
        }
    }

    let v_jets: Vec<Jet> = (0..dim).map(|i| Jet::fiber_var(&w, i, v[i])).collect();
    let mut rhs = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut acc = -l_box.partial_jet(&unit(dim, d), &zero, &w);
        for b in 0..dim {
            let lxv = l_box.partial_jet(&unit(dim, b), &unit(dim, d), &w);
            acc = acc + &v_jets[b] * &lxv;
        }
        rhs.push(acc);
    }
    let mut spray = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut acc = Jet::constant(&w, 0.0);
        for d in 0..dim {
            acc = acc + &ginv_jets[a][d] * &rhs[d];
        }
        spray.push(acc * 0.5);
    }

    Ok(SprayJets {
        l_box,
        spray,
        g_values,
        ginv_values,
    })
}

/// Gauss-Jordan inversion of a jet-valued symmetric matrix, pivoting on the
/// value parts. Pivots are judged against their own row's scale, not the
/// global matrix scale: metrics like diag(-1, cosh^2 t, ...) are invertible
/// to full per-row precision at any anisotropy, and only a row that is
/// small against itself signals a genuinely degenerate direction.
fn jet_matrix_inverse(
    m: &[Vec<Jet>],
    w: &Arc<JetSpace>,
    point: &[f64],
) -> Result<Vec<Vec<Jet>>, GeometryError> {
    let n = m.len();
    let mut a: Vec<Vec<Jet>> = m.to_vec();
    let mut inv: Vec<Vec<Jet>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Jet::constant(w, if i == j { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let mut row_scale: Vec<f64> = m
        .iter()
        .map(|row| {
            row.iter()
                .map(|j| j.value().abs())
                .fold(0.0_f64, f64::max)
                .max(1e-300)
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| {
                (a[r][col].value().abs() / row_scale[r])
                    .partial_cmp(&(a[s][col].value().abs() / row_scale[s]))
                    .unwrap()
            })
            .unwrap();
        let tol = 1e-12 * row_scale[piv];
        if a[piv][col].value().abs() <= tol {
            return Err(GeometryError::Degenerate {
                point: point.iter().map(|c| format!("{c:.6}")).collect::<Vec<_>>().join(", "),
                reason: format!("pivot {:.3e} below {tol:.3e}", a[piv][col].value()),
            });
        }
        row_scale.swap(col, piv);
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col].clone();
        for j in 0..n {
            a[col][j] = &a[col][j] / &d;
            inv[col][j] = &inv[col][j] / &d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col].clone();
            for j in 0..n {
                a[r][j] = &a[r][j] - &(&f * &a[col][j]);
                inv[r][j] = &inv[r][j] - &(&f * &inv[col][j]);
            }
        }
    }
    Ok(inv)
}

fn invert_values(g: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
    let dim = g.nrows();
    // Judge singularity on the row-equilibrated matrix so that extreme but
    // benign anisotropy (cosh^2-scaled spatial blocks) does not read as
    // degeneracy; its determinant is scale-free and O(1) for any metric
    // with genuinely independent rows.
    let mut eq = g.clone();
    for i in 0..dim {
        let scale = (0..dim)
            .map(|j| g[(i, j)].abs())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        for j in 0..dim {
            eq[(i, j)] /= scale;
        }
    }
    let det = eq.determinant();
    if det.abs() < 1e-12 {
        return Err(GeometryError::Degenerate {
            point: x.iter().map(|c| format!("{c:.6}")).collect::<Vec<_>>().join(", "),
            reason: format!("equilibrated determinant {det:.3e} below tolerance"),
        });
    }
    g.clone().try_inverse().ok_or_else(|| GeometryError::Degenerate {
        point: x.iter().map(|c| format!("{c:.6}")).collect::<Vec<_>>().join(", "),
        reason: "inversion failed".into(),
    })
}

fn require_nonzero(v: &[f64]) -> Result<(), GeometryError> {
    if v.iter().all(|c| *c == 0.0) {
        return Err(GeometryError::Parameter(
            "direction vector must be nonzero".into(),
        ));
    }
    Ok(())
}

fn unit(dim: usize, i: usize) -> Vec<usize> {
    let mut m = vec![0usize; dim];
    m[i] = 1;
    m
}

fn pair(dim: usize, a: usize, b: usize) -> Vec<usize> {
    let mut m = vec![0usize; dim];
    m[a] += 1;
    m[b] += 1;
    m
}

fn triple(dim: usize, a: usize, b: usize, c: usize) -> Vec<usize> {
    let mut m = vec![0usize; dim];
    m[a] += 1;
    m[b] += 1;
    m[c] += 1;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Chart, WarpProfile, WeightKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_timelike(
        model: &SpacetimeModel,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = model.future_seed().to_vec();
            for c in v.iter_mut() {
                *c += rng.gen_range(-0.4..0.4);
            }
            if model.classify_vector(x, &v).unwrap() == CausalClass::Timelike {
                return v;
            }
        }
    }

    #[test]
    fn minkowski_metric_connection_curvature_vanish() {
        let m = SpacetimeModel::minkowski(4).unwrap();
        let x = [0.1, -0.4, 0.2, 0.9];
        let v = [2.0, 1.0, 0.0, 0.0];
        let metric = metric_at(&m, &x, &v).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let want = if a != b {
                    0.0
                } else if a == 0 {
                    -1.0
                } else {
                    1.0
                };
                assert_eq!(metric.g[(a, b)], want);
                assert_eq!(metric.g_inv[(a, b)], want);
            }
        }
        assert!((metric_inner(&metric.g, &v, &v) + 3.0).abs() < 1e-14);

        let conn = connection_at(&m, &x, &v).unwrap();
        assert!(conn.spray.iter().all(|c| c.abs() < 1e-14));
        assert!(conn.nonlinear.iter().all(|c| c.abs() < 1e-14));
        for a in 0..4 {
            assert!(conn.gamma_tilde[a].iter().all(|c| c.abs() < 1e-14));
            assert!(conn.gamma[a].iter().all(|c| c.abs() < 1e-14));
        }
        let curv = curvature_at(&m, &x, &v).unwrap();
        assert!(curv.r_matrix.iter().all(|c| c.abs() < 1e-14));
        assert_eq!(curv.ricci, 0.0);

        let w = [0.0, 1.0, 0.3, 0.0];
        assert!(flag_curvature(&m, &x, &v, &w).unwrap().abs() < 1e-14);
    }

    #[test]
    fn euler_identity_on_randers() {
        let m = SpacetimeModel::randers_perturbed(3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = [0.0; 3];
        for _ in 0..50 {
            let v = sample_timelike(&m, &x, &mut rng);
            let metric = metric_at(&m, &x, &v).unwrap();
            let two_l = m.causal_quadratic(&x, &v).unwrap();
            let gvv = metric_inner(&metric.g, &v, &v);
            assert!(
                (gvv - two_l).abs() < 1e-9 * two_l.abs().max(1.0),
                "g_v(v,v) = {gvv} vs 2L = {two_l}"
            );
            // g . g_inv = identity.
            let prod = &metric.g * &metric.g_inv;
            for a in 0..3 {
                for b in 0..3 {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((prod[(a, b)] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn spray_identities_on_warped_product() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = [0.4, 0.2, -0.7];
        for _ in 0..20 {
            let v = sample_timelike(&m, &x, &mut rng);
            let conn = connection_at(&m, &x, &v).unwrap();
            // 2G = N v.
            for a in 0..3 {
                let nv: f64 = (0..3).map(|b| conn.nonlinear[(a, b)] * v[b]).sum();
                assert!(
                    (2.0 * conn.spray[a] - nv).abs() < 1e-8 * nv.abs().max(1.0),
                    "2G != Nv at row {a}"
                );
            }
            // G = 1/2 Gtil v v.
            for a in 0..3 {
                let mut acc = 0.0;
                for b in 0..3 {
                    for c in 0..3 {
                        acc += conn.gamma_tilde[a][(b, c)] * v[b] * v[c];
                    }
                }
                assert!((conn.spray[a] - 0.5 * acc).abs() < 1e-9 * acc.abs().max(1.0));
            }
            // Quadratic L: modified and formal Christoffels coincide.
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        assert!(
                            (conn.gamma[a][(b, c)] - conn.gamma_tilde[a][(b, c)]).abs() < 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn homogeneity_ladder_on_randers_expression_hybrid() {
        // x-dependent non-quadratic model so G, N, R are all nonzero.
        let m = SpacetimeModel::from_expression(
            3,
            "0.5*(-(v0^2) + v1^2 + v2^2) + 0.05*exp(0.3*x1)*v0*sqrt(v0^2 + v1^2 + v2^2)",
            Chart::symmetric(3, 10.0),
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let x = [0.2, 0.5, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let v = sample_timelike(&m, &x, &mut rng);
            let g1 = metric_at(&m, &x, &v).unwrap();
            let c1 = connection_at(&m, &x, &v).unwrap();
            let r1 = curvature_at(&m, &x, &v).unwrap();
            for c in [0.5, 2.0, 7.0] {
                let vc: Vec<f64> = v.iter().map(|t| c * t).collect();
                let gc = metric_at(&m, &x, &vc).unwrap();
                let cc = connection_at(&m, &x, &vc).unwrap();
                let rc = curvature_at(&m, &x, &vc).unwrap();
                let scale_g = g1.g.norm();
                assert!((&gc.g - &g1.g).norm() < 1e-8 * scale_g, "g not 0-homogeneous");
                for a in 0..3 {
                    assert!(
                        (cc.spray[a] - c * c * c1.spray[a]).abs()
                            < 1e-8 * (c * c * c1.spray[a]).abs().max(1e-4)
                    );
                }
                let scale_n = c1.nonlinear.norm().max(1e-4);
                assert!((&cc.nonlinear - &(c * &c1.nonlinear)).norm() < 1e-8 * c * scale_n);
                let scale_r = r1.r_matrix.norm().max(1e-4);
                assert!(
                    (&rc.r_matrix - &(c * c * &r1.r_matrix)).norm() < 1e-7 * c * c * scale_r,
                    "R not 2-homogeneous"
                );
            }
        }
    }

    #[test]
    fn curvature_structure_identities_hold_on_nonquadratic_model() {
        let m = SpacetimeModel::from_expression(
            3,
            "0.5*(-(v0^2) + v1^2 + v2^2) + 0.05*exp(0.3*x1)*v0*sqrt(v0^2 + v1^2 + v2^2)",
            Chart::symmetric(3, 10.0),
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let x = [0.2, 0.5, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let v = sample_timelike(&m, &x, &mut rng);
            let curv = curvature_at(&m, &x, &v).unwrap();
            let metric = metric_at(&m, &x, &v).unwrap();
            let scale = curv.r_matrix.norm().max(1e-10);
            // R_v(v) = 0.
            for a in 0..3 {
                let rv: f64 = (0..3).map(|b| curv.r_matrix[(a, b)] * v[b]).sum();
                assert!(rv.abs() < 1e-7 * scale, "R_v(v) != 0: {rv} vs scale {scale}");
            }
            // g_v symmetry of R_v.
            let gr = &metric.g * &curv.r_matrix;
            for a in 0..3 {
                for b in 0..3 {
                    assert!(
                        (gr[(a, b)] - gr[(b, a)]).abs() < 1e-7 * scale * metric.g.norm(),
                        "g R not symmetric"
                    );
                }
            }
            assert!((curv.ricci - curv.r_matrix.trace()).abs() < 1e-14 * scale);
        }
    }

    #[test]
    fn warped_cosh_tidal_matrix_is_minus_identity_on_comoving_frame() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let x = [0.6, 0.1, -0.2];
        let v = [1.0, 0.0, 0.0];
        let curv = curvature_at(&m, &x, &v).unwrap();
        // f = cosh has f''/f = 1, so spatial rows carry -(f''/f) = -1.
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b && a > 0 { -1.0 } else { 0.0 };
                assert!(
                    (curv.r_matrix[(a, b)] - want).abs() < 1e-9,
                    "R[{a}{b}] = {}",
                    curv.r_matrix[(a, b)]
                );
            }
        }
        assert!((curv.ricci + 2.0).abs() < 1e-9);
    }

    #[test]
    fn anti_de_sitter_has_constant_positive_tidal_strength() {
        let kk = 1.7;
        let m = SpacetimeModel::anti_de_sitter(3, kk).unwrap();
        // At the origin with a boosted unit vector.
        let x = [0.0, 0.0, 0.0];
        let chi = 0.8_f64;
        let v = [chi.cosh(), chi.sinh(), 0.0];
        let curv = curvature_at(&m, &x, &v).unwrap();
        assert!(
            (curv.ricci - 2.0 * kk).abs() < 1e-7,
            "Ric = {} want {}",
            curv.ricci,
            2.0 * kk
        );
        // Off-center: Ric(v) = n K F(v)^2 for timelike v.
        let x = [0.3, 0.5, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let v = sample_timelike(&m, &x, &mut rng);
            let f2 = -m.causal_quadratic(&x, &v).unwrap();
            let curv = curvature_at(&m, &x, &v).unwrap();
            assert!(
                (curv.ricci - 2.0 * kk * f2).abs() < 1e-5 * (2.0 * kk * f2).abs(),
                "Ric = {} want {}",
                curv.ricci,
                2.0 * kk * f2
            );
        }
    }

    #[test]
    fn flag_curvature_constant_on_anti_de_sitter_and_plane_invariant() {
        let kk = 1.0;
        let m = SpacetimeModel::anti_de_sitter(3, kk).unwrap();
        let x = [0.0, 0.0, 0.0];
        let v = [1.0, 0.0, 0.0];
        for w in [[0.0, 1.0, 0.0], [0.0, 0.3, -0.8], [0.5, 1.0, 0.2]] {
            let k = flag_curvature(&m, &x, &v, &w).unwrap();
            assert!((k - kk).abs() < 1e-7, "flag = {k}");
        }
        // Depends only on the plane: K(v, w) = K(v, v + 2w).
        let w = [0.0, 1.0, 0.4];
        let k1 = flag_curvature(&m, &x, &v, &w).unwrap();
        let w2 = [v[0] + 2.0 * w[0], v[1] + 2.0 * w[1], v[2] + 2.0 * w[2]];
        let k2 = flag_curvature(&m, &x, &v, &w2).unwrap();
        assert!((k1 - k2).abs() < 1e-9);
        // Sum over a g_v-orthonormal spatial frame gives Ric.
        let e1 = [0.0, 1.0, 0.0];
        let e2 = [0.0, 0.0, 1.0];
        let sum = flag_curvature(&m, &x, &v, &e1).unwrap() + flag_curvature(&m, &x, &v, &e2).unwrap();
        let ric = curvature_at(&m, &x, &v).unwrap().ricci;
        assert!((sum - ric).abs() < 1e-6);
        // Degenerate flag: w parallel to v.
        assert!(matches!(
            flag_curvature(&m, &x, &v, &[2.0, 0.0, 0.0]),
            Err(GeometryError::DegenerateFlag { .. })
        ));
    }

    #[test]
    fn weighted_ricci_closed_forms_on_linear_weight() {
        let m = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let x = [0.2, 0.1, 0.0];
        let v = [2.0, 0.5, 0.0];
        // psi_eta(t) = -0.3 (x0 + t v0): psi' = -0.6, psi'' = 0.
        let inf = weighted_ricci(&m, &x, &v, EffectiveDim::PlusInf).unwrap();
        assert!(inf.abs() < 1e-9, "Ric_inf = {inf}");
        let n5 = weighted_ricci(&m, &x, &v, EffectiveDim::Finite(5.0)).unwrap();
        assert!((n5 + 0.36 / 3.0).abs() < 1e-9, "Ric_5 = {n5}");
        let nn = weighted_ricci(&m, &x, &v, EffectiveDim::Finite(2.0)).unwrap();
        assert_eq!(nn, f64::NEG_INFINITY);
        // Monotonicity: Ric_n <= Ric_N <= Ric_inf <= Ric_N' for N' < 0.
        let n4 = weighted_ricci(&m, &x, &v, EffectiveDim::Finite(4.0)).unwrap();
        let neg = weighted_ricci(&m, &x, &v, EffectiveDim::Finite(-5.0)).unwrap();
        assert!(nn <= n4 && n4 <= inf && inf <= neg);
        // 2-homogeneity.
        let vc: Vec<f64> = v.iter().map(|c| 1.7 * c).collect();
        let n5c = weighted_ricci(&m, &x, &vc, EffectiveDim::Finite(5.0)).unwrap();
        assert!((n5c - 1.7 * 1.7 * n5).abs() < 1e-8 * n5.abs());
    }

    #[test]
    fn weighted_ricci_on_curved_base_and_unweighted_shortcut() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let x = [0.5, 0.0, 0.0];
        let v = [1.0, 0.0, 0.0];
        // Comoving geodesic: Ric = -2, psi' = -0.3, psi'' = 0.
        let n6 = weighted_ricci(&m, &x, &v, EffectiveDim::Finite(6.0)).unwrap();
        assert!((n6 - (-2.0 - 0.09 / 4.0)).abs() < 1e-8, "Ric_6 = {n6}");

        let plain = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let r = weighted_ricci(&plain, &x, &v, EffectiveDim::Finite(0.0)).unwrap();
        let ric = curvature_at(&plain, &x, &v).unwrap().ricci;
        assert_eq!(r, ric);
    }

    #[test]
    fn epsilon_range_matches_spec_cases() {
        let n = 3;
        let tl = |n_eff, epsilon| WeightedRicciParams {
            n_eff,
            epsilon,
            side: CausalSide::Timelike,
        };
        let nl = |n_eff, epsilon| WeightedRicciParams {
            n_eff,
            epsilon,
            side: CausalSide::Null,
        };
        // N = +inf: bound 1, epsilon = 1 inadmissible.
        let r = epsilon_range_check(&tl(EffectiveDim::PlusInf, 1.0), n).unwrap();
        assert!(!r.admissible && (r.bound - 1.0).abs() < 1e-15);
        let r = epsilon_range_check(&tl(EffectiveDim::PlusInf, 0.5), n).unwrap();
        assert!(r.admissible);
        // N = 0: only epsilon = 0.
        let r = epsilon_range_check(&tl(EffectiveDim::Finite(0.0), 0.0), n).unwrap();
        assert!(r.admissible && r.bound == 0.0);
        assert!(!epsilon_range_check(&tl(EffectiveDim::Finite(0.0), 1e-12), n)
            .unwrap()
            .admissible);
        // N = n: void, everything admissible, epsilon = 1 included.
        let r = epsilon_range_check(&tl(EffectiveDim::Finite(3.0), 1.0), n).unwrap();
        assert!(r.admissible && r.void && r.bound.is_infinite());
        // Illegal gap.
        assert!(epsilon_range_check(&tl(EffectiveDim::Finite(1.5), 0.0), n).is_err());
        assert!(epsilon_range_check(&nl(EffectiveDim::Finite(2.0), 0.0), n).is_err());
        // Null: N = n void; N = 1 base case; N = +inf bound 1.
        let r = epsilon_range_check(&nl(EffectiveDim::Finite(3.0), 5.0), n).unwrap();
        assert!(r.admissible && r.void);
        let r = epsilon_range_check(&nl(EffectiveDim::Finite(1.0), 0.0), n).unwrap();
        assert!(r.admissible && r.bound == 0.0);
        let r = epsilon_range_check(&nl(EffectiveDim::PlusInf, 0.9999999999), n).unwrap();
        assert!(!r.admissible);
        // Finite bounds.
        let r = epsilon_range_check(&tl(EffectiveDim::Finite(-5.0), 0.5), n).unwrap();
        assert!((r.bound - (5.0_f64 / 8.0).sqrt()).abs() < 1e-15 && r.admissible);
        let r = epsilon_range_check(&nl(EffectiveDim::Finite(6.0), 1.2), n).unwrap();
        assert!((r.bound - (5.0_f64 / 3.0).sqrt()).abs() < 1e-15 && r.admissible);
    }

    #[test]
    fn c_coefficient_spot_values_and_positivity() {
        let n = 3;
        let tl = |n_eff, epsilon| WeightedRicciParams {
            n_eff,
            epsilon,
            side: CausalSide::Timelike,
        };
        let nl = |n_eff, epsilon| WeightedRicciParams {
            n_eff,
            epsilon,
            side: CausalSide::Null,
        };
        assert!((c_coefficient(&tl(EffectiveDim::Finite(3.0), 0.7), n).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((c_coefficient(&tl(EffectiveDim::Finite(0.0), 0.0), n).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((c_coefficient(&nl(EffectiveDim::Finite(1.0), 0.0), n).unwrap() - 0.5).abs() < 1e-15);
        assert!(c_coefficient(&tl(EffectiveDim::PlusInf, 1.0), n).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 1000 {
            let side = if rng.gen::<bool>() {
                CausalSide::Timelike
            } else {
                CausalSide::Null
            };
            let n_eff = match rng.gen_range(0..4) {
                0 => EffectiveDim::PlusInf,
                1 => EffectiveDim::Finite(rng.gen_range(-20.0..0.0_f64)),
                2 => EffectiveDim::Finite(rng.gen_range(3.0..40.0_f64)),
                _ => EffectiveDim::Finite(3.0),
            };
            let params = WeightedRicciParams {
                n_eff,
                epsilon: rng.gen_range(-1.5..1.5),
                side,
            };
            let range = match epsilon_range_check(&params, n) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if !range.admissible {
                continue;
            }
            let c = c_coefficient(&params, n).unwrap();
            assert!(c > 0.0, "c({}, {}) = {c}", params.n_eff, params.epsilon);
            checked += 1;
        }
    }

    #[test]
    fn degenerate_directions_are_rejected() {
        let m = SpacetimeModel::beem(2).unwrap();
        let x = [0.0, 0.0];
        // Spacelike direction rejected by curvature.
        assert!(matches!(
            curvature_at(&m, &x, &[1.0, 0.0]),
            Err(GeometryError::WrongCausalClass { .. })
        ));
        // Zero vector rejected outright.
        assert!(matches!(
            metric_at(&m, &x, &[0.0, 0.0]),
            Err(GeometryError::Parameter(_))
        ));
    }
}
