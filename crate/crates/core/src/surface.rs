//! Spacelike codimension-two patches and their lightlike normal data.
//!
//! A patch is an embedded map S: U in R^(d-2) -> M whose tangent directions
//! w_i = dS/du_i are spacelike. At every patch point the causal cone meets
//! the g-orthogonal complement of the tangent plane in exactly two boundary
//! rays, the outgoing and ingoing lightlike normals V+ and V-. They solve
//!
//! ```text
//! L(x, V) = 0,        g_V(V, w_i) = 0   for every tangent w_i,
//! ```
//!
//! and are pinned to a single representative per ray through the fixed
//! pairing against the model's future seed fs,
//!
//! ```text
//! g_fs(fs, V) = -1,
//! ```
//!
//! which is negative on the whole future cone and so selects the
//! future-directed solutions. The expansion of the normal field along the
//! patch is the shape-operator trace
//!
//! ```text
//! theta = h^(ij) g_V(D^V_{w_i} V, w_j),      h_ij = g_V(w_i, w_j),
//! ```
//!
//! and its weighted companion subtracts the derivative of the weight along
//! the normal geodesic, theta_1 = theta - psi_eta'(0). A patch with
//! theta_1 < 0 on both normal families traps even the weight-corrected
//! light expansion; with psi = 0 this reduces to the classical trapped
//! surface criterion theta+- < 0.
//!
//! Following a normal family off the patch gives a lightlike geodesic
//! congruence whose Jacobi tensor starts at J(0) = I with J'(0) equal to
//! the shape operator in a parallel quotient frame; that path feeds the
//! conjugate-point and focusing machinery directly.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::congruence::{
    custom_congruence_tensor, CongruenceError, JacobiTensorPath, TensorKind,
};
use crate::geodesic::{
    integrate_geodesic, transport_frame, GeodesicError, GeodesicOptions, GeodesicRun,
    ParallelFrame,
};
use crate::geometry::{connection_at, metric_inner, psi_eta_derivatives, GeometryError};
use crate::jet::{seed_point, JetSpace};
use crate::model::{CausalClass, ModelError, SpacetimeModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Congruence(#[from] CongruenceError),
    #[error("normal solve stalled with residual {residual:.3e}")]
    NewtonDiverged { residual: f64 },
    #[error("the two normal solves collapsed onto one ray")]
    DegenerateRays,
    #[error("a computed normal is not future-directed")]
    NotFutureDirected,
    #[error("tangent direction {direction} is not spacelike")]
    CausalTangent { direction: String },
    #[error("{0}")]
    BadInput(String),
}

/// Embedded spacelike patch of codimension two.
///
/// The embedding closure is total on the parameter box the caller samples;
/// tangent vectors come from Richardson-extrapolated central differences at
/// step `scale * 1e-3`, so `scale` should be the characteristic parameter
/// size over which the embedding varies by order one.
pub struct SurfacePatch {
    dim: usize,
    param_dim: usize,
    scale: f64,
    interior_point: Vec<f64>,
    embedding: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for SurfacePatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfacePatch")
            .field("dim", &self.dim)
            .field("param_dim", &self.param_dim)
            .field("scale", &self.scale)
            .field("interior_point", &self.interior_point)
            .finish()
    }
}

impl SurfacePatch {
    /// `interior_point` is a reference point on the inside of the patch;
    /// the normal whose spatial direction points away from it is labeled
    /// the outgoing one.
    pub fn new(
        dim: usize,
        scale: f64,
        interior_point: Vec<f64>,
        embedding: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    ) -> Result<SurfacePatch, SurfaceError> {
        if dim < 3 {
            return Err(SurfaceError::BadInput(
                "codimension-two patches need dimension at least 3".into(),
            ));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(SurfaceError::BadInput(format!(
                "patch scale must be positive and finite, got {scale}"
            )));
        }
        if interior_point.len() != dim {
            return Err(SurfaceError::BadInput(format!(
                "interior point has length {}, expected {dim}",
                interior_point.len()
            )));
        }
        Ok(SurfacePatch {
            dim,
            param_dim: dim - 2,
            scale,
            interior_point,
            embedding,
        })
    }

    /// Round sphere of the given coordinate radius inside the constant-time
    /// slice through `center`, in hyperspherical angles. The polar angles
    /// degenerate at 0 and pi, so sample strictly inside (0, pi).
    pub fn sphere(dim: usize, radius: f64, center: &[f64]) -> Result<SurfacePatch, SurfaceError> {
        if dim < 3 {
            return Err(SurfaceError::BadInput(
                "a sphere patch needs dimension at least 3".into(),
            ));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(SurfaceError::BadInput(format!(
                "sphere radius must be positive and finite, got {radius}"
            )));
        }
        if center.len() != dim {
            return Err(SurfaceError::BadInput(format!(
                "sphere center has length {}, expected {dim}",
                center.len()
            )));
        }
        let c = center.to_vec();
        let spatial = dim - 1;
        let embedding = move |u: &[f64]| -> Vec<f64> {
            let mut x = c.clone();
            let mut sin_prod = radius;
            for k in 0..spatial {
                if k < spatial - 1 {
                    x[1 + k] += sin_prod * u[k].cos();
                    sin_prod *= u[k].sin();
                } else {
                    x[1 + k] += sin_prod;
                }
            }
            x
        };
        SurfacePatch::new(dim, 1.0, center.to_vec(), Box::new(embedding))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior_point
    }

    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.param_dim, "parameter dimension mismatch");
        (self.embedding)(u)
    }

    /// Tangent basis w_i = dS/du_i at the given parameters.
    pub fn tangent_basis(&self, u: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(u.len(), self.param_dim, "parameter dimension mismatch");
        let h = self.scale * 1e-3;
        let mut out = Vec::with_capacity(self.param_dim);
        for i in 0..self.param_dim {
            let shift = |s: f64| -> Vec<f64> {
                let mut us = u.to_vec();
                us[i] += s;
                (self.embedding)(&us)
            };
            let plus = shift(h);
            let minus = shift(-h);
            let plus_half = shift(0.5 * h);
            let minus_half = shift(-0.5 * h);
            let mut w = vec![0.0; self.dim];
            for a in 0..self.dim {
                let coarse = (plus[a] - minus[a]) / (2.0 * h);
                let fine = (plus_half[a] - minus_half[a]) / h;
                w[a] = (4.0 * fine - coarse) / 3.0;
            }
            out.push(w);
        }
        out
    }
}

/// The two future lightlike normals at one patch point, with the final
/// Newton residual norms of each solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LightlikePair {
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub residual_plus: f64,
    pub residual_minus: f64,
}

fn lagrangian_jet(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<(f64, DVector<f64>, DMatrix<f64>), SurfaceError> {
    let dim = model.dim();
    let space = JetSpace::get(dim, 0, 2);
    let (xj, vj) = seed_point(&space, x, v);
    let l = model.lagrangian(&xj, &vj)?;
    let zero = vec![0usize; dim];
    let mut multi = vec![0usize; dim];
    let mut grad = DVector::zeros(dim);
    for b in 0..dim {
        multi.fill(0);
        multi[b] = 1;
        grad[b] = l
            .partial(&zero, &multi)
            .expect("first fiber derivative is inside the truncation");
    }
    let mut hess = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            multi.fill(0);
            multi[a] += 1;
            multi[b] += 1;
            let val = l
                .partial(&zero, &multi)
                .expect("second fiber derivative is inside the truncation");
            hess[(a, b)] = val;
            hess[(b, a)] = val;
        }
    }
    Ok((l.value(), grad, hess))
}

/// Row vector of the normalization equation: (g_fs . fs), evaluated at x
/// with the metric taken at the future seed itself.
fn normalization_row(model: &SpacetimeModel, x: &[f64]) -> Result<DVector<f64>, SurfaceError> {
    let fs = model.future_seed().to_vec();
    let g = model.metric_matrix(x, &fs)?;
    let mut row = DVector::zeros(model.dim());
    for b in 0..model.dim() {
        for a in 0..model.dim() {
            row[b] += g[(a, b)] * fs[a];
        }
    }
    Ok(row)
}

fn normal_system(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[DVector<f64>],
    nrow: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, f64), SurfaceError> {
    let dim = model.dim();
    let (lval, grad, hess) = lagrangian_jet(model, x, v.as_slice())?;
    let mut res = DVector::zeros(dim);
    res[0] = lval;
    for (i, w) in tangents.iter().enumerate() {
        res[1 + i] = grad.dot(w);
    }
    res[dim - 1] = nrow.dot(v) + 1.0;
    let mut jac = DMatrix::zeros(dim, dim);
    jac.row_mut(0).copy_from(&grad.transpose());
    for (i, w) in tangents.iter().enumerate() {
        let gw = &hess * w;
        jac.row_mut(1 + i).copy_from(&gw.transpose());
    }
    jac.row_mut(dim - 1).copy_from(&nrow.transpose());
    let scale = 1.0 + hess.norm() * (1.0 + v.norm_squared());
    Ok((res, jac, scale))
}

/// Damped Newton solve of {L = 0, g_v(v, w_i) = 0, g_fs(fs, v) = -1}.
///
/// Each equation row differentiates exactly: the Hessian of L is the metric,
/// so the Jacobian needs nothing beyond the same second-order fiber jet that
/// evaluates the residual.
fn newton_normal(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[Vec<f64>],
    nrow: &DVector<f64>,
    seed: &[f64],
) -> Result<(Vec<f64>, f64), SurfaceError> {
    let wv: Vec<DVector<f64>> = tangents
        .iter()
        .map(|w| DVector::from_column_slice(w))
        .collect();
    let mut v = DVector::from_column_slice(seed);
    let (mut res, mut jac, mut scale) = normal_system(model, x, &wv, nrow, &v)?;
    for _ in 0..60 {
        let rnorm = res.norm();
        if rnorm <= 1e-13 * scale {
            return Ok((v.as_slice().to_vec(), rnorm));
        }
        let delta = jac
            .clone()
            .lu()
            .solve(&res)
            .ok_or(SurfaceError::NewtonDiverged { residual: rnorm })?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &v - &delta * step;
            let (cres, cjac, cscale) = normal_system(model, x, &wv, nrow, &cand)?;
            if cres.norm() < rnorm {
                v = cand;
                res = cres;
                jac = cjac;
                scale = cscale;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(SurfaceError::NewtonDiverged { residual: rnorm });
        }
    }
    let rnorm = res.norm();
    if rnorm <= 1e-10 * scale {
        Ok((v.as_slice().to_vec(), rnorm))
    } else {
        Err(SurfaceError::NewtonDiverged { residual: rnorm })
    }
}

/// Euclidean Gram-Schmidt, dropping directions that fall below a relative
/// independence floor.
fn euclid_orthonormal(vecs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vecs.len());
    for v in vecs {
        let mut w = v.clone();
        for e in &out {
            let proj = e.dot(&w);
            w -= e * proj;
        }
        let n = w.norm();
        if n > 1e-10 * (1.0 + v.norm()) {
            out.push(w / n);
        }
    }
    out
}

fn check_tangents(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[Vec<f64>],
) -> Result<(), SurfaceError> {
    let dim = model.dim();
    if tangents.len() != dim - 2 {
        return Err(SurfaceError::BadInput(format!(
            "expected {} tangent directions, got {}",
            dim - 2,
            tangents.len()
        )));
    }
    if tangents.iter().any(|w| w.len() != dim) {
        return Err(SurfaceError::BadInput(
            "tangent vector length does not match the model dimension".into(),
        ));
    }
    let wv: Vec<DVector<f64>> = tangents
        .iter()
        .map(|w| DVector::from_column_slice(w))
        .collect();
    if euclid_orthonormal(&wv).len() != tangents.len() {
        return Err(SurfaceError::BadInput(
            "tangent directions are linearly dependent".into(),
        ));
    }
    // The spacelike requirement is an open condition on the whole tangent
    // plane, so sweep a deterministic fan of unit combinations rather than
    // just the basis vectors.
    let p = tangents.len();
    let mut combos: Vec<Vec<f64>> = Vec::new();
    for i in 0..p {
        let mut c = vec![0.0; p];
        c[i] = 1.0;
        combos.push(c);
    }
    for k in 0..16usize {
        let mut c = vec![0.0; p];
        let mut norm = 0.0;
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = ((k + 1) as f64 * 0.7391 + (i + 1) as f64 * 1.2113).sin();
            norm += *ci * *ci;
        }
        if norm > 1e-8 {
            let inv = norm.sqrt().recip();
            c.iter_mut().for_each(|ci| *ci *= inv);
            combos.push(c);
        }
    }
    for c in combos {
        let mut dir = vec![0.0; dim];
        for (ci, w) in c.iter().zip(tangents) {
            for a in 0..dim {
                dir[a] += ci * w[a];
            }
        }
        if model.classify_vector(x, &dir)? != CausalClass::Spacelike {
            return Err(SurfaceError::CausalTangent {
                direction: format!("{dir:?}"),
            });
        }
    }
    Ok(())
}

/// First cone crossing of s -> fs + s * dir for s > 0, by doubling march
/// and bisection on the causal quadratic. The segment from the timelike
/// seed to the crossing stays inside one convex cone, so the crossing is a
/// future boundary point.
fn cone_crossing(
    model: &SpacetimeModel,
    x: &[f64],
    fs: &[f64],
    dir: &DVector<f64>,
) -> Result<DVector<f64>, SurfaceError> {
    let fsv = DVector::from_column_slice(fs);
    let at = |s: f64| -> Vec<f64> {
        let v = &fsv + dir * s;
        v.as_slice().to_vec()
    };
    let q0 = model.causal_quadratic(x, fs)?;
    if q0 >= 0.0 {
        return Err(SurfaceError::BadInput(
            "the future seed is not timelike at the surface point".into(),
        ));
    }
    let base = fsv.norm().max(1e-12);
    let mut lo = 0.0;
    let mut hi = 0.25 * base;
    let mut found = false;
    for _ in 0..80 {
        if model.causal_quadratic(x, &at(hi))? >= 0.0 {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return Err(SurfaceError::BadInput(
            "the fiber ray from the seed never leaves the cone".into(),
        ));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if model.causal_quadratic(x, &at(mid))? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(&fsv + dir * (0.5 * (lo + hi)))
}

/// Both future lightlike normals of the tangent plane at x, labeled by the
/// sign of their component along `outward` after projecting out the
/// tangent directions. V+ points with the outward hint, V- against it.
pub fn lightlike_normals_with_outward(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[Vec<f64>],
    outward: &[f64],
) -> Result<LightlikePair, SurfaceError> {
    let dim = model.dim();
    if x.len() != dim {
        return Err(SurfaceError::BadInput(format!(
            "point has length {}, expected {dim}",
            x.len()
        )));
    }
    check_tangents(model, x, tangents)?;
    let fs = model.future_seed().to_vec();
    let nrow = normalization_row(model, x)?;

    // Split off the two-plane euclidean-orthogonal to the tangents; the
    // cone boundary rays we want live transverse to the tangent plane.
    let wv: Vec<DVector<f64>> = tangents
        .iter()
        .map(|w| DVector::from_column_slice(w))
        .collect();
    let what = euclid_orthonormal(&wv);
    let mut complement: Vec<DVector<f64>> = Vec::new();
    for k in 0..dim {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        for w in &what {
            let proj = w.dot(&e);
            e -= w * proj;
        }
        for c in &complement {
            let proj = c.dot(&e);
            e -= c * proj;
        }
        let n = e.norm();
        if n > 1e-8 {
            complement.push(e / n);
            if complement.len() == 2 {
                break;
            }
        }
    }
    if complement.len() != 2 {
        return Err(SurfaceError::BadInput(
            "could not span the normal two-plane of the tangent basis".into(),
        ));
    }
    let fsv = DVector::from_column_slice(&fs);
    let (p, q) = (&complement[0], &complement[1]);
    let fp = p.dot(&fsv);
    let fq = q.dot(&fsv);
    if (fp * fp + fq * fq).sqrt() <= 1e-10 * (1.0 + fsv.norm()) {
        return Err(SurfaceError::BadInput(
            "the future seed is tangent to the surface".into(),
        ));
    }
    // Unit complement direction orthogonal to the seed's projection; the
    // seed plus a multiple of it exits the cone on both sides.
    let mut u_dir = q * fp - p * fq;
    u_dir /= u_dir.norm();

    let solve_side = |sign: f64| -> Result<(Vec<f64>, f64), SurfaceError> {
        let dir = &u_dir * sign;
        let seed = cone_crossing(model, x, &fs, &dir)?;
        let pairing = nrow.dot(&seed);
        if pairing >= 0.0 {
            return Err(SurfaceError::NotFutureDirected);
        }
        let seed = seed / (-pairing);
        newton_normal(model, x, tangents, &nrow, seed.as_slice())
    };
    let (va, ra) = solve_side(1.0)?;
    let (vb, rb) = solve_side(-1.0)?;

    for v in [&va, &vb] {
        if !model.is_future_directed(x, v)? {
            return Err(SurfaceError::NotFutureDirected);
        }
    }
    let na = DVector::from_column_slice(&va).normalize();
    let nb = DVector::from_column_slice(&vb).normalize();
    if (&na - &nb).norm() <= 1e-6 {
        return Err(SurfaceError::DegenerateRays);
    }

    // Orientation: project the outward hint off the tangent plane and rank
    // the two rays by their component along what is left.
    let mut d = DVector::from_column_slice(outward);
    for w in &what {
        let proj = w.dot(&d);
        d -= w * proj;
    }
    let mut first_is_plus = true;
    if d.norm() > 1e-8 * (1.0 + DVector::from_column_slice(outward).norm()) {
        let score_a = DVector::from_column_slice(&va).dot(&d);
        let score_b = DVector::from_column_slice(&vb).dot(&d);
        first_is_plus = score_a >= score_b;
    }
    let (v_plus, residual_plus, v_minus, residual_minus) = if first_is_plus {
        (va, ra, vb, rb)
    } else {
        (vb, rb, va, ra)
    };
    Ok(LightlikePair {
        v_plus,
        v_minus,
        residual_plus,
        residual_minus,
    })
}

/// Lightlike normals labeled with the chart center as the interior
/// reference point; see [`lightlike_normals_with_outward`] for the
/// labeling rule when a better reference is available.
pub fn lightlike_normals(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[Vec<f64>],
) -> Result<LightlikePair, SurfaceError> {
    let center = model.chart().center();
    let outward: Vec<f64> = x.iter().zip(&center).map(|(a, b)| a - b).collect();
    lightlike_normals_with_outward(model, x, tangents, &outward)
}

/// Covariant derivatives D^V_{w_i} V of one normal family along the patch.
///
/// The field derivative dV/du_i comes from re-solving the normal system at
/// parameter stencil points with the center solution as the Newton seed, so
/// every stencil value sits on the same ray branch; the connection term
/// uses the reference metric of the field vector itself.
fn normal_field_covariant_derivatives(
    model: &SpacetimeModel,
    patch: &SurfacePatch,
    u: &[f64],
    x: &[f64],
    tangents: &[Vec<f64>],
    v: &[f64],
) -> Result<Vec<DVector<f64>>, SurfaceError> {
    let dim = model.dim();
    let p = patch.param_dim();
    let h = patch.scale() * 1e-3;
    let solve_at = |us: &[f64]| -> Result<DVector<f64>, SurfaceError> {
        let xs = patch.point(us);
        let ws = patch.tangent_basis(us);
        let nrow = normalization_row(model, &xs)?;
        let (vs, _) = newton_normal(model, &xs, &ws, &nrow, v)?;
        Ok(DVector::from_vec(vs))
    };
    let conn = connection_at(model, x, v)?;
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let shift = |s: f64| -> Result<DVector<f64>, SurfaceError> {
            let mut us = u.to_vec();
            us[i] += s;
            solve_at(&us)
        };
        let coarse = (shift(h)? - shift(-h)?) / (2.0 * h);
        let fine = (shift(0.5 * h)? - shift(-0.5 * h)?) / h;
        let mut cov = (fine * 4.0 - coarse) / 3.0;
        for a in 0..dim {
            let mut acc = 0.0;
            for b in 0..dim {
                for c in 0..dim {
                    acc += conn.gamma[a][(b, c)] * tangents[i][b] * v[c];
                }
            }
            cov[a] += acc;
        }
        out.push(cov);
    }
    Ok(out)
}

fn expansion_from_derivatives(
    model: &SpacetimeModel,
    x: &[f64],
    tangents: &[Vec<f64>],
    v: &[f64],
    dcov: &[DVector<f64>],
) -> Result<(f64, f64), SurfaceError> {
    let g = model.metric_matrix(x, v)?;
    let p = tangents.len();
    let mut hmat = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let val = metric_inner(&g, &tangents[i], &tangents[j]);
            hmat[(i, j)] = val;
            hmat[(j, i)] = val;
        }
    }
    let hinv = hmat.try_inverse().ok_or_else(|| {
        SurfaceError::BadInput("the induced surface metric is singular".into())
    })?;
    let mut theta = 0.0;
    for i in 0..p {
        for j in 0..p {
            theta += hinv[(i, j)] * metric_inner(&g, dcov[i].as_slice(), &tangents[j]);
        }
    }
    let (psi1, _) = psi_eta_derivatives(model, x, v)?;
    Ok((theta, theta - psi1))
}

/// Normal data and expansion scalars of one patch point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionData {
    pub x: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
    pub pair: LightlikePair,
    pub theta_plus: f64,
    pub theta_minus: f64,
    pub theta1_plus: f64,
    pub theta1_minus: f64,
}

impl ExpansionData {
    /// Weighted trapped criterion at this point: both families contract
    /// even after the weight correction.
    pub fn psi_trapped(&self) -> bool {
        self.theta1_plus < 0.0 && self.theta1_minus < 0.0
    }

    pub fn trapped(&self) -> bool {
        self.theta_plus < 0.0 && self.theta_minus < 0.0
    }
}

/// Both lightlike normals and both expansion pairs at one parameter point.
pub fn surface_expansion(
    model: &SpacetimeModel,
    patch: &SurfacePatch,
    u: &[f64],
) -> Result<ExpansionData, SurfaceError> {
    if patch.dim() != model.dim() {
        return Err(SurfaceError::BadInput(format!(
            "patch dimension {} does not match model dimension {}",
            patch.dim(),
            model.dim()
        )));
    }
    let x = patch.point(u);
    let tangents = patch.tangent_basis(u);
    let outward: Vec<f64> = x
        .iter()
        .zip(patch.interior_point())
        .map(|(a, b)| a - b)
        .collect();
    let pair = lightlike_normals_with_outward(model, &x, &tangents, &outward)?;
    let dcov_plus =
        normal_field_covariant_derivatives(model, patch, u, &x, &tangents, &pair.v_plus)?;
    let (theta_plus, theta1_plus) =
        expansion_from_derivatives(model, &x, &tangents, &pair.v_plus, &dcov_plus)?;
    let dcov_minus =
        normal_field_covariant_derivatives(model, patch, u, &x, &tangents, &pair.v_minus)?;
    let (theta_minus, theta1_minus) =
        expansion_from_derivatives(model, &x, &tangents, &pair.v_minus, &dcov_minus)?;
    Ok(ExpansionData {
        x,
        tangents,
        pair,
        theta_plus,
        theta_minus,
        theta1_plus,
        theta1_minus,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub u: Vec<f64>,
    pub data: ExpansionData,
}

/// Patch-wide summary over a sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceReport {
    pub samples: Vec<SurfaceSample>,
    /// theta+- < 0 at every sample.
    pub trapped: bool,
    /// theta1+- < 0 at every sample.
    pub psi_trapped: bool,
    /// max over samples and sides of |L(V)| / (1 + |g| (1 + |V|^2)).
    pub max_null_residual: f64,
    /// max over samples, sides, and tangents of the normalized g_V(V, w).
    pub max_orthogonality_residual: f64,
    /// min over samples of the euclidean gap between the unit rays.
    pub min_ray_separation: f64,
}

pub fn analyze_surface(
    model: &SpacetimeModel,
    patch: &SurfacePatch,
    params: &[Vec<f64>],
) -> Result<SurfaceReport, SurfaceError> {
    if params.is_empty() {
        return Err(SurfaceError::BadInput(
            "at least one parameter sample is required".into(),
        ));
    }
    let mut samples = Vec::with_capacity(params.len());
    let mut trapped = true;
    let mut psi_trapped = true;
    let mut max_null = 0.0f64;
    let mut max_orth = 0.0f64;
    let mut min_sep = f64::INFINITY;
    for u in params {
        let data = surface_expansion(model, patch, u)?;
        trapped &= data.trapped();
        psi_trapped &= data.psi_trapped();
        for v in [&data.pair.v_plus, &data.pair.v_minus] {
            let g = model.metric_matrix(&data.x, v)?;
            let vnorm: f64 = v.iter().map(|c| c * c).sum::<f64>();
            let lval = 0.5 * model.causal_quadratic(&data.x, v)?;
            max_null = max_null.max(lval.abs() / (1.0 + g.norm() * (1.0 + vnorm)));
            for w in &data.tangents {
                let wnorm: f64 = w.iter().map(|c| c * c).sum::<f64>().sqrt();
                let pairing = metric_inner(&g, v, w);
                max_orth = max_orth
                    .max(pairing.abs() / (1.0 + g.norm() * (1.0 + vnorm.sqrt()) * (1.0 + wnorm)));
            }
        }
        let na = DVector::from_column_slice(&data.pair.v_plus).normalize();
        let nb = DVector::from_column_slice(&data.pair.v_minus).normalize();
        min_sep = min_sep.min((&na - &nb).norm());
        samples.push(SurfaceSample {
            u: u.clone(),
            data,
        });
    }
    Ok(SurfaceReport {
        samples,
        trapped,
        psi_trapped,
        max_null_residual: max_null,
        max_orthogonality_residual: max_orth,
        min_ray_separation: min_sep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalSide {
    Plus,
    Minus,
}

/// Lightlike geodesic congruence fired off the patch along one normal
/// family, with its Jacobi tensor seeded by the surface shape operator.
#[derive(Debug)]
pub struct SurfaceCongruence {
    pub run: GeodesicRun,
    pub frame: ParallelFrame,
    pub tensor: JacobiTensorPath,
    /// tr J'(0), the expansion of the family at the surface.
    pub theta_start: f64,
}

/// Metric Gram-Schmidt that also returns the coefficient matrix expressing
/// each leg in the input basis.
fn h_orthonormalize(
    g: &DMatrix<f64>,
    vecs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, DMatrix<f64>), SurfaceError> {
    let m = vecs.len();
    let mut legs: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut coeff = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut w = DVector::from_column_slice(&vecs[i]);
        let mut row = DVector::zeros(m);
        row[i] = 1.0;
        for (a, leg) in legs.iter().enumerate() {
            let proj = metric_inner(g, leg.as_slice(), w.as_slice());
            w -= leg * proj;
            for k in 0..m {
                row[k] -= coeff[(a, k)] * proj;
            }
        }
        let ww = metric_inner(g, w.as_slice(), w.as_slice());
        if ww <= 1e-10 * g.norm() * (1.0 + w.norm_squared()) {
            return Err(SurfaceError::BadInput(
                "tangent basis is degenerate under the induced metric".into(),
            ));
        }
        let inv = ww.sqrt().recip();
        w *= inv;
        row *= inv;
        for k in 0..m {
            coeff[(i, k)] = row[k];
        }
        legs.push(w);
    }
    Ok((
        legs.into_iter().map(|l| l.as_slice().to_vec()).collect(),
        coeff,
    ))
}

/// Integrates the normal geodesic at `u` and assembles the congruence data
/// J(0) = I, J'(0) = shape operator in a parallel orthonormal frame built
/// from the surface tangents.
pub fn surface_normal_congruence(
    model: &SpacetimeModel,
    patch: &SurfacePatch,
    u: &[f64],
    side: NormalSide,
    t_end: f64,
    epsilons: &[f64],
    opts: &GeodesicOptions,
) -> Result<SurfaceCongruence, SurfaceError> {
    if patch.dim() != model.dim() {
        return Err(SurfaceError::BadInput(format!(
            "patch dimension {} does not match model dimension {}",
            patch.dim(),
            model.dim()
        )));
    }
    if !(t_end > 0.0) {
        return Err(SurfaceError::BadInput(format!(
            "the congruence span must be positive, got {t_end}"
        )));
    }
    let x = patch.point(u);
    let tangents = patch.tangent_basis(u);
    let outward: Vec<f64> = x
        .iter()
        .zip(patch.interior_point())
        .map(|(a, b)| a - b)
        .collect();
    let pair = lightlike_normals_with_outward(model, &x, &tangents, &outward)?;
    let v = match side {
        NormalSide::Plus => pair.v_plus,
        NormalSide::Minus => pair.v_minus,
    };
    let dcov = normal_field_covariant_derivatives(model, patch, u, &x, &tangents, &v)?;
    let g = model.metric_matrix(&x, &v)?;
    let (legs, coeff) = h_orthonormalize(&g, &tangents)?;
    let m = legs.len();
    let dim = model.dim();
    let mut b0 = DMatrix::zeros(m, m);
    for a in 0..m {
        let mut da = DVector::zeros(dim);
        for i in 0..m {
            da += &dcov[i] * coeff[(a, i)];
        }
        for b in 0..m {
            b0[(b, a)] = metric_inner(&g, da.as_slice(), &legs[b]);
        }
    }
    // The shape operator of a surface-orthogonal family is symmetric; the
    // finite-difference remainder in the antisymmetric part is noise, and
    // dropping it keeps the Lagrange pairing of the tensor exact.
    let b0 = (&b0 + &b0.transpose()) * 0.5;
    let run = integrate_geodesic(model, &x, &v, (0.0, t_end), epsilons, opts)?;
    let frame = transport_frame(&run, &legs)?;
    let theta_start = b0.trace();
    let tensor = custom_congruence_tensor(
        &run,
        &frame,
        &DMatrix::identity(m, m),
        &b0,
        TensorKind::FromSurface,
    )?;
    Ok(SurfaceCongruence {
        run,
        frame,
        tensor,
        theta_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congruence::{detect_conjugate_points, s0_prediction, S0Outcome};
    use crate::geometry::{c_coefficient, CausalSide, EffectiveDim, WeightedRicciParams};
    use crate::model::WeightKind;

    fn sphere_params_dim4() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &a in &[0.5f64, 1.1, 1.9, 2.6] {
            for &b in &[0.3f64, 1.7, 3.9] {
                out.push(vec![a, b]);
            }
        }
        out
    }

    #[test]
    fn minkowski_sphere_has_classical_normals_and_expansions() {
        let model = SpacetimeModel::minkowski(4).unwrap();
        let radius = 2.0;
        let patch = SurfacePatch::sphere(4, radius, &[0.0; 4]).unwrap();
        let report = analyze_surface(&model, &patch, &sphere_params_dim4()).unwrap();
        assert!(report.max_null_residual < 1e-9);
        assert!(report.max_orthogonality_residual < 1e-8);
        assert!(report.min_ray_separation > 0.5);
        assert!(!report.trapped);
        assert!(!report.psi_trapped);
        for sample in &report.samples {
            let d = &sample.data;
            let radial: Vec<f64> = d.x.iter().map(|c| c / radius).collect();
            for a in 0..4 {
                let expect = if a == 0 { 1.0 } else { radial[a] };
                assert!(
                    (d.pair.v_plus[a] - expect).abs() < 1e-8,
                    "outgoing normal component {a}: {} vs {expect}",
                    d.pair.v_plus[a]
                );
                let expect_in = if a == 0 { 1.0 } else { -radial[a] };
                assert!((d.pair.v_minus[a] - expect_in).abs() < 1e-8);
            }
            // Round sphere of radius r in flat space: theta = +-(n-1)/r.
            assert!((d.theta_plus - 2.0 / radius).abs() < 1e-7);
            assert!((d.theta_minus + 2.0 / radius).abs() < 1e-7);
            // No weight, so the corrected scalars coincide with the raw ones.
            assert_eq!(d.theta_plus, d.theta1_plus);
            assert_eq!(d.theta_minus, d.theta1_minus);
        }
    }

    #[test]
    fn perturbed_cone_normals_stay_on_the_cone() {
        let model = SpacetimeModel::randers_perturbed(4, 0.1).unwrap();
        let patch = SurfacePatch::sphere(4, 1.5, &[0.0; 4]).unwrap();
        let report =
            analyze_surface(&model, &patch, &[vec![0.8, 0.4], vec![1.4, 2.3], vec![2.2, 5.1]])
                .unwrap();
        assert!(report.max_null_residual < 1e-9);
        assert!(report.max_orthogonality_residual < 1e-8);
        assert!(report.min_ray_separation > 1e-2);
        for sample in &report.samples {
            for v in [&sample.data.pair.v_plus, &sample.data.pair.v_minus] {
                assert_eq!(
                    model.classify_vector(&sample.data.x, v).unwrap(),
                    CausalClass::Lightlike
                );
                assert!(model.is_future_directed(&sample.data.x, v).unwrap());
            }
        }

        // Same invariants on a circle in one fewer dimension, where the
        // patch has a single parameter.
        let model3 = SpacetimeModel::randers_perturbed(3, 0.1).unwrap();
        let patch3 = SurfacePatch::sphere(3, 1.5, &[0.0; 3]).unwrap();
        let report3 =
            analyze_surface(&model3, &patch3, &[vec![0.3], vec![2.1], vec![4.4]]).unwrap();
        assert!(report3.max_null_residual < 1e-9);
        assert!(report3.max_orthogonality_residual < 1e-8);
    }

    #[test]
    fn ingoing_rays_from_a_flat_sphere_focus_at_the_center() {
        let model = SpacetimeModel::minkowski(4).unwrap();
        let radius = 2.0;
        let patch = SurfacePatch::sphere(4, radius, &[0.0; 4]).unwrap();
        let sc = surface_normal_congruence(
            &model,
            &patch,
            &[1.1, 0.7],
            NormalSide::Minus,
            3.0,
            &[0.0],
            &GeodesicOptions::default(),
        )
        .unwrap();
        // Ingoing spheres contract at (n-1)/r, and every ray reaches the
        // center after parameter time r, where the whole tensor collapses.
        assert!((sc.theta_start + 2.0 / radius).abs() < 1e-8);
        assert!(sc.tensor.lagrange_expected());
        let j_mid = sc.tensor.j(1.0);
        for a in 0..2 {
            for b in 0..2 {
                let expect = if a == b { 1.0 - 1.0 / radius } else { 0.0 };
                assert!((j_mid[(a, b)] - expect).abs() < 1e-6);
            }
        }
        let conj = detect_conjugate_points(&sc.tensor);
        assert!(!conj.is_empty(), "no focal point detected");
        assert!(
            (conj[0].t - radius).abs() < 1e-4,
            "focal time {} expected {radius}",
            conj[0].t
        );
        assert_eq!(conj[0].multiplicity, 2);

        let params = WeightedRicciParams {
            n_eff: EffectiveDim::PlusInf,
            epsilon: 0.0,
            side: CausalSide::Null,
        };
        let c = c_coefficient(&params, model.spatial_dim()).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        let pred = s0_prediction(&sc.run, 0, 0.0, sc.theta_start, c).unwrap();
        match pred.outcome {
            S0Outcome::Bound { s0 } => {
                assert!((s0 - radius).abs() < 1e-4, "s0 {s0} expected {radius}");
            }
            S0Outcome::Horizon { .. } => panic!("expected a finite focusing bound"),
        }
    }

    #[test]
    fn contracting_cosmology_sphere_is_trapped() {
        let model = SpacetimeModel::warped_product(4, crate::model::WarpProfile::Cosh)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.2 })
            .unwrap();
        let t0 = -2.0;
        let rho = 0.5;
        let patch = SurfacePatch::sphere(4, rho, &[t0, 0.0, 0.0, 0.0]).unwrap();
        let report = analyze_surface(
            &model,
            &patch,
            &[vec![0.7, 0.9], vec![1.3, 2.6], vec![2.4, 4.8]],
        )
        .unwrap();
        assert!(report.max_null_residual < 1e-9);
        assert!(report.max_orthogonality_residual < 1e-8);
        assert!(report.trapped);
        assert!(report.psi_trapped);
        // Expanding-slice closed form: theta+- = (n-1) (f'/f +- 1/(f rho))
        // for the V0 = 1 normalization, with f = cosh and f'/f = tanh.
        let h = t0.tanh();
        let inv_r = 1.0 / (t0.cosh() * rho);
        let theta_out = 2.0 * (h + inv_r);
        let theta_in = 2.0 * (h - inv_r);
        for sample in &report.samples {
            let d = &sample.data;
            assert!(
                (d.theta_plus - theta_out).abs() < 1e-5 * theta_out.abs(),
                "theta+ {} vs {theta_out}",
                d.theta_plus
            );
            assert!((d.theta_minus - theta_in).abs() < 1e-5 * theta_in.abs());
            // psi = -0.2 t along a V0 = 1 ray gives psi' = -0.2 exactly.
            assert!((d.theta1_plus - (d.theta_plus + 0.2)).abs() < 1e-7);
            assert!((d.theta1_minus - (d.theta_minus + 0.2)).abs() < 1e-7);
        }
    }

    #[test]
    fn causal_tangent_directions_are_rejected() {
        let model = SpacetimeModel::minkowski(3).unwrap();
        let err = lightlike_normals(&model, &[0.0, 1.0, 0.0], &[vec![1.0, 0.2, 0.0]]).unwrap_err();
        assert!(matches!(err, SurfaceError::CausalTangent { .. }));

        // A degenerate tangent basis spans no surface at all.
        let err =
            lightlike_normals(&model, &[0.0, 1.0, 0.0], &[vec![0.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, SurfaceError::BadInput(_)));
    }
}
