//! Geodesic flow, reparameterization clocks, and parallel frames.
//!
//! Geodesics solve x' = v, v' = -2G(x, v) in affine parametrization, so
//! L(x(t), v(t)) is a constant of motion; the run records the worst drift
//! as a quality check. Alongside the flow the integrator carries one
//! quadrature clock per requested epsilon,
//!
//! ```text
//! tau_eps(t) = integral_0^t exp((2(eps - 1)/m) psi(eta(s), eta'(s))) ds
//! ```
//!
//! with m = n on timelike runs and m = n - 1 on null runs (n the spatial
//! dimension). Vectors are transported by D along the curve with the
//! curve's own velocity as reference:
//!
//! ```text
//! (D_eta' X)^a = dX^a/dt + Gam^a_bc(eta') eta'^b X^c
//! ```
//!
//! which preserves g_eta' inner products along geodesics; parallel frames
//! therefore keep their gram matrix, and the drift is monitored rather
//! than corrected.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{connection_at, metric_inner, spray_at, GeometryError};
use crate::model::{CausalClass, ModelError, SpacetimeModel};
use crate::ode::{dopri5, rk4, Dopri5Options, OdeError, Solution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("initial velocity must be causal, got {got:?}")]
    NotCausal { got: CausalClass },
    #[error("initial frame leg {leg} is not g_v-orthogonal to the velocity (defect {defect:.3e})")]
    FrameNotOrthogonal { leg: usize, defect: f64 },
    #[error("initial frame is linearly dependent (singular value ratio {ratio:.3e})")]
    FrameDependent { ratio: f64 },
    #[error("geodesic left the chart at t = {t_reached} before reaching t = {t_target}")]
    ChartExit { t_reached: f64, t_target: f64 },
    #[error("tangent became spacelike at t = {t}")]
    SpacelikeTangent { t: f64 },
    #[error("bad input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone)]
pub struct GeodesicOptions {
    /// Relative tolerance; absolute tolerance is tol * 1e-2.
    pub tol: f64,
    pub max_steps: usize,
    /// Fixed-step RK4 with this many steps instead of the adaptive pair.
    pub rk4_steps: Option<usize>,
    /// Rescale a timelike v0 to unit speed (F = 1) before integrating.
    pub normalize: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions {
            tol: 1e-10,
            max_steps: 2_000_000,
            rk4_steps: None,
            normalize: true,
        }
    }
}

/// A completed geodesic run with dense output and its quadrature clocks.
#[derive(Debug, Clone)]
pub struct GeodesicRun {
    model: SpacetimeModel,
    solution: Solution,
    class: CausalClass,
    epsilons: Vec<f64>,
    exponents: Vec<f64>,
    l_value: f64,
    l_drift: f64,
    unit_speed: bool,
    exited_chart: bool,
}

impl GeodesicRun {
    pub fn model(&self) -> &SpacetimeModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn t_start(&self) -> f64 {
        self.solution.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.solution.t_end
    }

    pub fn class(&self) -> CausalClass {
        self.class
    }

    pub fn unit_speed(&self) -> bool {
        self.unit_speed
    }

    pub fn exited_chart(&self) -> bool {
        self.exited_chart
    }

    /// Conserved Lagrangian value L(x0, v0) after any normalization.
    pub fn l_value(&self) -> f64 {
        self.l_value
    }

    /// Worst |L(t) - L(0)| over a fine sample grid.
    pub fn l_drift(&self) -> f64 {
        self.l_drift
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    /// Quadrature exponent 2(eps - 1)/m for the idx-th requested epsilon.
    pub fn exponent(&self, idx: usize) -> f64 {
        self.exponents[idx]
    }

    pub fn solution(&self) -> &Solution {
        &self.solution
    }

    pub fn position(&self, t: f64) -> Vec<f64> {
        let y = self.solution.sample(t);
        y[..self.dim()].to_vec()
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        let y = self.solution.sample(t);
        y[self.dim()..2 * self.dim()].to_vec()
    }

    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let y = self.solution.sample(t);
        let dim = self.dim();
        (y[..dim].to_vec(), y[dim..2 * dim].to_vec())
    }

    /// psi along the curve, evaluated on the current state.
    pub fn psi_eta(&self, t: f64) -> Result<f64, GeodesicError> {
        let (x, v) = self.state(t);
        Ok(self.model.weight(&x, &v)?)
    }

    /// Value of the idx-th quadrature clock at t.
    pub fn tau(&self, idx: usize, t: f64) -> f64 {
        assert!(idx < self.epsilons.len(), "no clock {idx} was requested");
        let y = self.solution.sample(t);
        y[2 * self.dim() + idx]
    }

    /// Parameter t with tau_idx(t) = target, or None when the clock never
    /// reaches the target on this run (the horizon case).
    pub fn tau_inverse(&self, idx: usize, target: f64) -> Option<f64> {
        assert!(idx < self.epsilons.len(), "no clock {idx} was requested");
        let (t0, t1) = (self.t_start(), self.t_end());
        if target < self.tau(idx, t0) || target > self.tau(idx, t1) {
            return None;
        }
        let mut lo = t0;
        let mut hi = t1;
        for _ in 0..200 {
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.tau(idx, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Integrate the geodesic with clock states for each requested epsilon.
/// Timelike starts are rescaled to unit speed unless opts.normalize is off;
/// null starts keep their affine parametrization. Chart exit stops the run
/// early (a boundary event, not an error).
pub fn integrate_geodesic(
    model: &SpacetimeModel,
    x0: &[f64],
    v0: &[f64],
    t_span: (f64, f64),
    epsilons: &[f64],
    opts: &GeodesicOptions,
) -> Result<GeodesicRun, GeodesicError> {
    let dim = model.dim();
    if x0.len() != dim || v0.len() != dim {
        return Err(GeodesicError::BadInput(format!(
            "state dimension {}x{} does not match model dimension {dim}",
            x0.len(),
            v0.len()
        )));
    }
    if !model.chart().contains(x0) {
        return Err(GeodesicError::BadInput(format!(
            "start point {x0:?} lies outside the chart"
        )));
    }
    let class = model.classify_vector(x0, v0)?;
    if class == CausalClass::Spacelike {
        return Err(GeodesicError::NotCausal { got: class });
    }

    let mut v_init = v0.to_vec();
    let mut unit_speed = false;
    if class == CausalClass::Timelike && opts.normalize {
        let f = model.lorentz_finsler_norm(x0, v0)?;
        for c in v_init.iter_mut() {
            *c /= f;
        }
        unit_speed = true;
    }

    let n = model.spatial_dim();
    let m_eff = match class {
        CausalClass::Timelike => n,
        CausalClass::Lightlike => {
            if n < 2 && !epsilons.is_empty() {
                return Err(GeodesicError::BadInput(
                    "null clocks need spatial dimension at least 2".into(),
                ));
            }
            n.saturating_sub(1).max(1)
        }
        CausalClass::Spacelike => unreachable!(),
    };
    let exponents: Vec<f64> = epsilons
        .iter()
        .map(|eps| 2.0 * (eps - 1.0) / m_eff as f64)
        .collect();

    let mut y0 = Vec::with_capacity(2 * dim + epsilons.len());
    y0.extend_from_slice(x0);
    y0.extend_from_slice(&v_init);
    y0.extend(std::iter::repeat(0.0).take(epsilons.len()));

    let exps = exponents.clone();
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
        let (x, v) = (&y[..dim], &y[dim..2 * dim]);
        let spray = spray_at(model, x, v).map_err(|e| e.to_string())?;
        dy[..dim].copy_from_slice(v);
        for i in 0..dim {
            dy[dim + i] = -2.0 * spray[i];
        }
        if !exps.is_empty() {
            let psi = model.weight(x, v).map_err(|e| e.to_string())?;
            for (slot, a) in exps.iter().enumerate() {
                dy[2 * dim + slot] = (a * psi).exp();
            }
        }
        Ok(())
    };

    let chart = model.chart().clone();
    let exit_event = move |_t: f64, y: &[f64]| chart.boundary_margin(&y[..dim]);
    let events: [crate::ode::EventFn; 1] = [&exit_event];

    let solution = match opts.rk4_steps {
        Some(steps) => rk4(&mut rhs, t_span, &y0, steps, &events)?,
        None => {
            let ode_opts = Dopri5Options {
                rtol: opts.tol,
                atol: opts.tol * 1e-2,
                max_steps: opts.max_steps,
                ..Dopri5Options::default()
            };
            dopri5(&mut rhs, t_span, &y0, &ode_opts, &events)?
        }
    };
    let exited_chart = solution.stopped_by_event == Some(0);

    let l_value = model.lagrangian(x0, &v_init)?;
    let mut l_drift = 0.0_f64;
    let samples = 512;
    for k in 0..=samples {
        let t = solution.t_start
            + (solution.t_end - solution.t_start) * k as f64 / samples as f64;
        let y = solution.sample(t);
        let l = model.lagrangian(&y[..dim], &y[dim..2 * dim])?;
        l_drift = l_drift.max((l - l_value).abs());
    }

    Ok(GeodesicRun {
        model: model.clone(),
        solution,
        class,
        epsilons: epsilons.to_vec(),
        exponents,
        l_value,
        l_drift,
        unit_speed,
        exited_chart,
    })
}

/// eta(t) for the geodesic with eta(0) = x, eta'(0) = v, without any
/// normalization; exp_x(v) is the t = 1 value. Chart exit before t is an
/// error here since the requested point does not exist in the chart.
pub fn exponential_map(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    t: f64,
) -> Result<Vec<f64>, GeodesicError> {
    if !(t > 0.0) {
        return Err(GeodesicError::BadInput(format!(
            "exponential map needs t > 0, got {t}"
        )));
    }
    let opts = GeodesicOptions {
        normalize: false,
        ..GeodesicOptions::default()
    };
    let run = integrate_geodesic(model, x, v, (0.0, t), &[], &opts)?;
    if run.exited_chart() {
        return Err(GeodesicError::ChartExit {
            t_reached: run.t_end(),
            t_target: t,
        });
    }
    Ok(run.position(t))
}

/// Pointwise covariant derivative D^w_v X of a position-dependent field,
/// with the connection evaluated at the reference vector w:
/// (D^w_v X)^a = v^b dX^a/dx^b + Gam^a_bc(w) v^b X^c.
pub fn covariant_derivative_field(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
    reference: &[f64],
    field: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>, GeodesicError> {
    let dim = model.dim();
    let conn = connection_at(model, x, reference)?;
    let fx = field(x);
    let mut out = vec![0.0; dim];
    for b in 0..dim {
        let h = 1e-3 * (1.0 + x[b].abs());
        let d = central_derivative(
            |hh| {
                let mut xp = x.to_vec();
                xp[b] += hh;
                let mut xm = x.to_vec();
                xm[b] -= hh;
                let fp = field(&xp);
                let fm = field(&xm);
                (0..dim).map(|a| (fp[a] - fm[a]) / (2.0 * hh)).collect()
            },
            h,
        );
        for a in 0..dim {
            out[a] += v[b] * d[a];
        }
    }
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                out[a] += conn.gamma[a][(b, c)] * v[b] * fx[c];
            }
        }
    }
    Ok(out)
}

/// Covariant derivative along a curve of a field given along the curve:
/// (D^w_eta' X)^a(t) = dX^a/dt + Gam^a_bc(w(t)) eta'^b(t) X^c(t).
pub fn covariant_derivative_along(
    model: &SpacetimeModel,
    position: &dyn Fn(f64) -> Vec<f64>,
    velocity: &dyn Fn(f64) -> Vec<f64>,
    field: &dyn Fn(f64) -> Vec<f64>,
    reference: &dyn Fn(f64) -> Vec<f64>,
    t: f64,
) -> Result<Vec<f64>, GeodesicError> {
    let dim = model.dim();
    let x = position(t);
    let v = velocity(t);
    let w = reference(t);
    if w.iter().all(|c| *c == 0.0) {
        return Err(GeodesicError::BadInput(
            "reference vector vanishes along the curve".into(),
        ));
    }
    let conn = connection_at(model, &x, &w)?;
    let h = 1e-3 * (1.0 + t.abs());
    let dxdt = central_derivative(
        |hh| {
            let fp = field(t + hh);
            let fm = field(t - hh);
            (0..dim).map(|a| (fp[a] - fm[a]) / (2.0 * hh)).collect()
        },
        h,
    );
    let fx = field(t);
    let mut out = dxdt;
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                out[a] += conn.gamma[a][(b, c)] * v[b] * fx[c];
            }
        }
    }
    Ok(out)
}

/// Richardson-extrapolated central difference (second order at h and h/2).
fn central_derivative(f: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let coarse = f(h);
    let fine = f(0.5 * h);
    coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect()
}

/// g_v-orthonormal transverse frame at (x, v): n spacelike legs orthogonal
/// to a timelike v, or n-1 quotient representatives orthogonal to a null v
/// (independent modulo v). Legs are orthonormal in g_v, which is positive
/// definite on those subspaces.
pub fn orthonormal_frame(
    model: &SpacetimeModel,
    x: &[f64],
    v: &[f64],
) -> Result<Vec<Vec<f64>>, GeodesicError> {
    let dim = model.dim();
    let class = model.classify_vector(x, v)?;
    let g = model.metric_matrix(x, v)?;
    let scale = g.norm();
    match class {
        CausalClass::Timelike => {
            // Gram-Schmidt seeded with v itself; its projection coefficient
            // uses g(v, v) < 0, every later leg is spacelike.
            let mut legs: Vec<Vec<f64>> = Vec::with_capacity(dim);
            let mut norms: Vec<f64> = Vec::with_capacity(dim);
            let gvv = metric_inner(&g, v, v);
            legs.push(v.to_vec());
            norms.push(gvv);
            for i in 0..dim {
                if legs.len() == dim {
                    break;
                }
                let mut w = vec![0.0; dim];
                w[i] = 1.0;
                for (leg, norm) in legs.iter().zip(&norms) {
                    let coef = metric_inner(&g, leg, &w) / norm;
                    for a in 0..dim {
                        w[a] -= coef * leg[a];
                    }
                }
                let ww = metric_inner(&g, &w, &w);
                if ww > 1e-10 * scale {
                    let s = ww.sqrt();
                    legs.push(w.iter().map(|c| c / s).collect());
                    norms.push(1.0);
                }
            }
            if legs.len() != dim {
                return Err(GeodesicError::BadInput(
                    "could not complete an orthonormal frame".into(),
                ));
            }
            Ok(legs[1..].to_vec())
        }
        CausalClass::Lightlike => {
            // Restrict to N = ker g(v, .) by subtracting along a transversal
            // u with g(v, u) != 0, then Gram-Schmidt in the degenerate inner
            // product; directions proportional to v have zero norm and drop
            // out, leaving n-1 quotient representatives.
            let gv: Vec<f64> = (0..dim)
                .map(|a| (0..dim).map(|b| g[(a, b)] * v[b]).sum())
                .collect();
            let (u_idx, pairing) = gv
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if pairing.abs() <= 1e-12 * scale {
                return Err(GeodesicError::BadInput(
                    "g(v, .) vanishes; metric degenerate at v".into(),
                ));
            }
            let mut legs: Vec<Vec<f64>> = Vec::new();
            for i in 0..dim {
                let mut w = vec![0.0; dim];
                w[i] = 1.0;
                // Into N: remove the g(v, .) component via e_{u_idx}.
                let coef = gv[i] / pairing;
                w[u_idx] -= coef;
                for leg in &legs {
                    let c = metric_inner(&g, leg, &w);
                    for a in 0..dim {
                        w[a] -= c * leg[a];
                    }
                }
                let ww = metric_inner(&g, &w, &w);
                if ww > 1e-10 * scale {
                    let s = ww.sqrt();
                    legs.push(w.iter().map(|c| c / s).collect());
                }
            }
            let want = dim - 2;
            if legs.len() != want {
                return Err(GeodesicError::BadInput(format!(
                    "null quotient frame has {} legs, expected {want}",
                    legs.len()
                )));
            }
            Ok(legs)
        }
        CausalClass::Spacelike => Err(GeodesicError::NotCausal { got: class }),
    }
}

/// Parallel frame along a geodesic run, as dense-output states.
#[derive(Debug, Clone)]
pub struct ParallelFrame {
    pub m: usize,
    dim: usize,
    solution: Solution,
    pub gram_initial: DMatrix<f64>,
}

impl ParallelFrame {
    /// Frame legs at parameter t.
    pub fn basis(&self, t: f64) -> Vec<Vec<f64>> {
        let y = self.solution.sample(t);
        (0..self.m)
            .map(|i| y[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }

    /// Current gram matrix g_{eta'(t)}(e_i, e_j).
    pub fn gram(&self, run: &GeodesicRun, t: f64) -> Result<DMatrix<f64>, GeodesicError> {
        let (x, v) = run.state(t);
        let g = run.model().metric_matrix(&x, &v)?;
        let legs = self.basis(t);
        let mut out = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            for j in 0..self.m {
                out[(i, j)] = metric_inner(&g, &legs[i], &legs[j]);
            }
        }
        Ok(out)
    }

    /// Worst entrywise gram deviation from the initial gram over a grid.
    pub fn gram_drift(&self, run: &GeodesicRun, samples: usize) -> Result<f64, GeodesicError> {
        let mut worst = 0.0_f64;
        for k in 0..=samples {
            let t = run.t_start() + (run.t_end() - run.t_start()) * k as f64 / samples as f64;
            let gram = self.gram(run, t)?;
            worst = worst.max((&gram - &self.gram_initial).amax());
        }
        Ok(worst)
    }

    /// Worst |g_{eta'}(eta', e_i)| over a grid.
    pub fn orthogonality_drift(
        &self,
        run: &GeodesicRun,
        samples: usize,
    ) -> Result<f64, GeodesicError> {
        let mut worst = 0.0_f64;
        for k in 0..=samples {
            let t = run.t_start() + (run.t_end() - run.t_start()) * k as f64 / samples as f64;
            let (x, v) = run.state(t);
            let g = run.model().metric_matrix(&x, &v)?;
            for leg in self.basis(t) {
                worst = worst.max(metric_inner(&g, &v, &leg).abs());
            }
        }
        Ok(worst)
    }
}

/// Parallel-transport the given transverse legs along the run by
/// D^{eta'}_{eta'} e = 0, driven by the run's dense output. Legs must be
/// g_{v0}-orthogonal to the initial velocity (defect above 1e-8 rejects)
/// and linearly independent.
pub fn transport_frame(
    run: &GeodesicRun,
    initial: &[Vec<f64>],
) -> Result<ParallelFrame, GeodesicError> {
    let model = run.model();
    let dim = run.dim();
    let m = initial.len();
    if m == 0 || initial.iter().any(|leg| leg.len() != dim) {
        return Err(GeodesicError::BadInput(
            "frame legs must be nonempty and of model dimension".into(),
        ));
    }
    let (x0, v0) = run.state(run.t_start());
    let g0 = model.metric_matrix(&x0, &v0)?;
    let scale = g0.norm();
    for (i, leg) in initial.iter().enumerate() {
        let leg_norm = leg.iter().map(|c| c * c).sum::<f64>().sqrt();
        let v_norm = v0.iter().map(|c| c * c).sum::<f64>().sqrt();
        let defect = metric_inner(&g0, &v0, leg).abs();
        if defect > 1e-8 * (scale * leg_norm * v_norm).max(1e-300) {
            return Err(GeodesicError::FrameNotOrthogonal { leg: i, defect });
        }
    }
    let basis_matrix = DMatrix::from_fn(dim, m, |r, c| initial[c][r]);
    let svd = basis_matrix.svd(false, false);
    let (smax, smin) = (
        svd.singular_values.max(),
        svd.singular_values.min(),
    );
    if smin <= 1e-10 * smax {
        return Err(GeodesicError::FrameDependent { ratio: smin / smax });
    }

    let mut gram_initial = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            gram_initial[(i, j)] = metric_inner(&g0, &initial[i], &initial[j]);
        }
    }

    let mut y0 = Vec::with_capacity(m * dim);
    for leg in initial {
        y0.extend_from_slice(leg);
    }
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
        let (x, v) = run.state(t);
        let conn = connection_at(model, &x, &v).map_err(|e| e.to_string())?;
        for i in 0..m {
            let e = &y[i * dim..(i + 1) * dim];
            for a in 0..dim {
                let mut acc = 0.0;
                for b in 0..dim {
                    for c in 0..dim {
                        acc += conn.gamma[a][(b, c)] * v[b] * e[c];
                    }
                }
                dy[i * dim + a] = -acc;
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
    Ok(ParallelFrame {
        m,
        dim,
        solution,
        gram_initial,
    })
}

/// Length integral of F along a sampled curve by composite Simpson with the
/// given number of panels. Spacelike tangents are an error; null tangents
/// contribute zero.
pub fn curve_length_sampled(
    model: &SpacetimeModel,
    curve: &dyn Fn(f64) -> (Vec<f64>, Vec<f64>),
    t0: f64,
    t1: f64,
    panels: usize,
) -> Result<f64, GeodesicError> {
    if !(t1 > t0) || panels == 0 {
        return Err(GeodesicError::BadInput(
            "length needs an increasing interval and at least one panel".into(),
        ));
    }
    let steps = 2 * panels;
    let h = (t1 - t0) / steps as f64;
    let mut acc = 0.0;
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        let (x, v) = curve(t);
        if model.classify_vector(&x, &v)? == CausalClass::Spacelike {
            return Err(GeodesicError::SpacelikeTangent { t });
        }
        let f = model.lorentz_finsler_norm(&x, &v)?;
        let w = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f;
    }
    Ok(acc * h / 3.0)
}

/// Length of a stretch of a geodesic run.
pub fn curve_length(
    run: &GeodesicRun,
    t0: f64,
    t1: f64,
    panels: usize,
) -> Result<f64, GeodesicError> {
    curve_length_sampled(run.model(), &|t| run.state(t), t0, t1, panels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{WarpProfile, WeightKind};
    use crate::oracle::LorentzOracle;

    #[test]
    fn minkowski_geodesics_are_straight_lines() {
        let m = SpacetimeModel::minkowski(4).unwrap();
        let x0 = [0.0; 4];
        let v0 = [1.0, 0.3, 0.0, 0.0];
        let run = integrate_geodesic(
            &m,
            &x0,
            &v0,
            (0.0, 8.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        assert!(run.unit_speed());
        let f = (1.0_f64 - 0.09).sqrt();
        let t = 5.3;
        let pos = run.position(t);
        for a in 0..4 {
            assert!(
                (pos[a] - t * v0[a] / f).abs() < 1e-9,
                "x[{a}] = {} at t = {t}",
                pos[a]
            );
        }
        assert!((run.l_value() + 0.5).abs() < 1e-12, "unit speed means L = -1/2");
        assert!(run.l_drift() < 1e-12);
    }

    #[test]
    fn l_drift_stays_small_on_curved_and_nonquadratic_models() {
        let models = [
            SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap(),
            SpacetimeModel::randers_perturbed(3, 0.1).unwrap(),
            SpacetimeModel::anti_de_sitter(3, 1.0).unwrap(),
        ];
        for m in &models {
            let x0 = vec![0.0; 3];
            let v0 = vec![1.0, 0.35, -0.1];
            let run = integrate_geodesic(
                m,
                &x0,
                &v0,
                (0.0, 10.0),
                &[],
                &GeodesicOptions::default(),
            )
            .unwrap();
            assert!(
                run.l_drift() < 1e-7 * run.l_value().abs().max(1.0),
                "L drift {} on {}",
                run.l_drift(),
                m.label()
            );
        }
    }

    #[test]
    fn clock_matches_closed_form_on_weighted_minkowski() {
        // psi = -lambda x0 along v = e0: tau_0(T) = (n/(2 lambda)) (e^{2 lambda T / n} - 1).
        let lambda = 0.3;
        let m = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: lambda })
            .unwrap();
        let run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[1.0, 0.0, 0.0],
            (0.0, 5.0),
            &[0.0, 1.0],
            &GeodesicOptions::default(),
        )
        .unwrap();
        let n = 2.0;
        for t in [1.0, 2.5, 5.0] {
            let want = n / (2.0 * lambda) * ((2.0 * lambda * t / n).exp() - 1.0);
            let got = run.tau(0, t);
            assert!((got - want).abs() < 1e-9 * want, "tau_0({t}) = {got} want {want}");
            // epsilon = 1 clock is proper time itself.
            assert!((run.tau(1, t) - t).abs() < 1e-12);
        }
        // Chain rule: d tau/dt equals the integrand.
        let t = 2.0;
        let h = 1e-5;
        let deriv = (run.tau(0, t + h) - run.tau(0, t - h)) / (2.0 * h);
        let integrand = (run.exponent(0) * run.psi_eta(t).unwrap()).exp();
        assert!((deriv - integrand).abs() < 1e-6 * integrand);
        // Round trip through the inverse.
        let val = run.tau(0, 3.3);
        let back = run.tau_inverse(0, val).unwrap();
        assert!((back - 3.3).abs() < 1e-9);
        assert!(run.tau_inverse(0, run.tau(0, 5.0) + 1.0).is_none());
    }

    #[test]
    fn chart_exit_is_an_event() {
        let m = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_chart(crate::model::Chart::symmetric(3, 2.0))
            .unwrap();
        let run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[1.0, 0.0, 0.0],
            (0.0, 10.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        assert!(run.exited_chart());
        assert!((run.t_end() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn exponential_map_is_homogeneous_in_the_flow_sense() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let x = [0.1, 0.2, -0.3];
        let v = [0.8, 0.25, 0.1];
        let at_one = exponential_map(&m, &x, &[2.0 * v[0], 2.0 * v[1], 2.0 * v[2]], 1.0).unwrap();
        let at_two = exponential_map(&m, &x, &v, 2.0).unwrap();
        for a in 0..3 {
            assert!((at_one[a] - at_two[a]).abs() < 1e-8);
        }
        // Flat case: exp_x(v) = x + v.
        let flat = SpacetimeModel::minkowski(3).unwrap();
        let p = exponential_map(&flat, &x, &v, 1.0).unwrap();
        for a in 0..3 {
            assert!((p[a] - (x[a] + v[a])).abs() < 1e-10);
        }
    }

    #[test]
    fn geodesic_self_derivative_vanishes_and_matches_plain_derivative_when_flat() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[1.0, 0.4, 0.0],
            (0.0, 6.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        let pos = |t: f64| run.position(t);
        let vel = |t: f64| run.velocity(t);
        for t in [1.0, 3.0, 5.0] {
            let d = covariant_derivative_along(&m, &pos, &vel, &vel, &vel, t).unwrap();
            let mag: f64 = d.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(mag < 1e-6, "D_eta' eta' = {d:?} at t = {t}");
        }
    }

    #[test]
    fn covariant_derivative_matches_lorentz_oracle_on_quadratic_model() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let oracle = LorentzOracle::new(&m).unwrap();
        let x = [0.4, 0.3, -0.2];
        let v = [1.0, 0.2, 0.35];
        let field = |x: &[f64]| vec![x[1] * x[1], 0.3 * x[0], x[2] - x[0]];
        let ours = covariant_derivative_field(&m, &x, &v, &v, &field).unwrap();
        let theirs = oracle.covariant_derivative(&x, &v, &field).unwrap();
        for a in 0..3 {
            assert!(
                (ours[a] - theirs[a]).abs() < 1e-6,
                "component {a}: {} vs {}",
                ours[a],
                theirs[a]
            );
        }
    }

    #[test]
    fn orthonormal_frames_have_unit_gram() {
        let m = SpacetimeModel::randers_perturbed(3, 0.1).unwrap();
        let x = [0.0; 3];
        let v = [1.0, 0.2, -0.1];
        let legs = orthonormal_frame(&m, &x, &v).unwrap();
        assert_eq!(legs.len(), 2);
        let g = m.metric_matrix(&x, &v).unwrap();
        for (i, a) in legs.iter().enumerate() {
            assert!(metric_inner(&g, &v, a).abs() < 1e-10);
            for (j, b) in legs.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((metric_inner(&g, a, b) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn null_quotient_frame_in_minkowski() {
        let m = SpacetimeModel::minkowski(4).unwrap();
        let x = [0.0; 4];
        let v = [1.0, 1.0, 0.0, 0.0];
        let legs = orthonormal_frame(&m, &x, &v).unwrap();
        assert_eq!(legs.len(), 2);
        let g = m.metric_matrix(&x, &v).unwrap();
        for leg in &legs {
            assert!(metric_inner(&g, &v, leg).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_frame_keeps_gram_and_orthogonality() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let x0 = [0.0; 3];
        let v0 = [1.0, 0.3, 0.1];
        let run = integrate_geodesic(
            &m,
            &x0,
            &v0,
            (0.0, 10.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        let v_used = run.velocity(0.0);
        let legs = orthonormal_frame(&m, &x0, &v_used).unwrap();
        let frame = transport_frame(&run, &legs).unwrap();
        assert!(frame.gram_drift(&run, 64).unwrap() < 1e-6);
        assert!(frame.orthogonality_drift(&run, 64).unwrap() < 1e-7);
    }

    #[test]
    fn frame_preconditions_are_enforced() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[1.0, 0.0, 0.0],
            (0.0, 2.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        // Not orthogonal to v.
        let bad = vec![vec![1.0, 0.5, 0.0]];
        assert!(matches!(
            transport_frame(&run, &bad),
            Err(GeodesicError::FrameNotOrthogonal { .. })
        ));
        // Dependent legs.
        let dep = vec![vec![0.0, 1.0, 0.0], vec![0.0, 2.0, 0.0]];
        assert!(matches!(
            transport_frame(&run, &dep),
            Err(GeodesicError::FrameDependent { .. })
        ));
    }

    #[test]
    fn lengths_of_model_curves() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[2.0, 0.6, 0.0],
            (0.0, 7.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        // Unit speed: length equals parameter span.
        let len = curve_length(&run, 0.0, 7.0, 64).unwrap();
        assert!((len - 7.0).abs() < 1e-9);
        // Lightlike curves have zero length.
        let null_run = integrate_geodesic(
            &m,
            &[0.0; 3],
            &[1.0, 1.0, 0.0],
            (0.0, 4.0),
            &[],
            &GeodesicOptions::default(),
        )
        .unwrap();
        let len0 = curve_length(&null_run, 0.0, 4.0, 32).unwrap();
        assert!(len0.abs() < 1e-8);
        // Reparametrization invariance: phi(s) = s^2/2 + s on [0, 2] covers
        // t in [0, 4] of a unit-speed straight line.
        let v = run.velocity(0.0);
        let curve = |s: f64| -> (Vec<f64>, Vec<f64>) {
            let phi = 0.5 * s * s + s;
            let dphi = s + 1.0;
            (
                (0..3).map(|a| phi * v[a]).collect(),
                (0..3).map(|a| dphi * v[a]).collect(),
            )
        };
        let len_re = curve_length_sampled(&m, &curve, 0.0, 2.0, 64).unwrap();
        assert!((len_re - 4.0).abs() < 1e-7, "reparametrized length {len_re}");
    }

    #[test]
    fn spacelike_initial_velocity_is_rejected() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        assert!(matches!(
            integrate_geodesic(
                &m,
                &[0.0; 3],
                &[0.1, 1.0, 0.0],
                (0.0, 1.0),
                &[],
                &GeodesicOptions::default()
            ),
            Err(GeodesicError::NotCausal { .. })
        ));
    }
}
