//! Spacetime models: a Lagrangian L(x, v) with an optional weight psi(x, v).
//!
//! L is positively 2-homogeneous in v and its vertical Hessian
//! g_ab(x, v) = d^2 L / dv^a dv^b has Lorentzian signature (-, +, ..., +)
//! on the causal directions of interest. Causal classes follow the sign of
//! 2L = g_v(v, v): timelike (< 0), lightlike (= 0, v != 0), spacelike
//! otherwise. The weight is 0-homogeneous in v where it depends on v at all.
//!
//! Builtin families:
//!
//! ```text
//! minkowski(d)             L = (-(v0)^2 + sum_i (vi)^2) / 2
//! warped_product(d, f)     L = (-(v0)^2 + f(x0)^2 sum_i (vi)^2) / 2,  f = exp or cosh
//! randers_perturbed(d, e)  L = minkowski + e v0 sqrt((v0)^2 + |vbar|^2)
//! beem(k)                  L = r^2 cos(k theta) in dimension 2, k timelike cones
//! anti_de_sitter(d, K)     constant positive timelike tidal strength K; its
//!                          timelike geodesics from the chart center refocus
//!                          at proper time pi / sqrt(K)
//! ```
//!
//! and builtin weights `zero`, `linear_t` (psi = -lambda x0, position only)
//! and `direction_dependent` (psi = kappa log(|v|_euclid / v0), genuinely
//! velocity dependent, defined on v0 > 0).
//!
//! The anti-de Sitter chart is the exponential map of the spatial slice at
//! the origin: with w = K |xbar|^2,
//!
//! ```text
//! 2L = -(1 + w shc(w)) (v0)^2 + shc(w) |vbar|^2 + K b(w) (xbar . vbar)^2
//! shc(w) = sinh(sqrt(w))^2 / w,   b(w) = (1 - shc(w)) / w
//! ```
//!
//! evaluated through their entire power series, which converge fast on any
//! reasonable chart.


use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{EvalError, ModelExpression, ParseError};
use crate::jet::{seed_point, DiffScalar, DomainError, JetSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model dimension {dim} unsupported: {reason}")]
    Dimension { dim: usize, reason: String },
    #[error("parameter {name} = {value} out of range: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: String,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expression references {name} but the model dimension is {dim}")]
    ExpressionIndex { name: String, dim: usize },
    #[error("vertical Hessian at ({point}) is not Lorentzian: {reason}")]
    NotLorentzian { point: String, reason: String },
    #[error("future seed {seed:?} is not timelike at the chart center")]
    SeedNotTimelike { seed: Vec<f64> },
    #[error("argument has dimension {got}, model has dimension {dim}")]
    ArgumentDimension { dim: usize, got: usize },
    #[error("cone counting supports dimensions 2 and 3, not {dim}")]
    ConeDimension { dim: usize },
}

impl From<DomainError> for ModelError {
    fn from(e: DomainError) -> Self {
        ModelError::Eval(EvalError::Domain(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpProfile {
    Exp,
    Cosh,
}

impl WarpProfile {
    pub fn name(self) -> &'static str {
        match self {
            WarpProfile::Exp => "exp",
            WarpProfile::Cosh => "cosh",
        }
    }
}

#[derive(Debug, Clone)]
pub enum LagrangianKind {
    Minkowski,
    WarpedProduct { profile: WarpProfile },
    RandersPerturbed { strength: f64 },
    Beem { k: u32 },
    AntiDeSitter { curvature: f64 },
    Expression(ModelExpression),
}

#[derive(Debug, Clone)]
pub enum WeightKind {
    Zero,
    LinearT { rate: f64 },
    DirectionDependent { strength: f64 },
    Expression(ModelExpression),
}

impl WeightKind {
    fn label(&self) -> Option<String> {
        match self {
            WeightKind::Zero => None,
            WeightKind::LinearT { rate } => Some(format!("linear_t({rate})")),
            WeightKind::DirectionDependent { strength } => {
                Some(format!("direction_dependent({strength})"))
            }
            WeightKind::Expression(e) => Some(format!("psi[{}]", e.source())),
        }
    }
}

/// Box-shaped coordinate chart; integration stops at its boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    bounds: Vec<(f64, f64)>,
}

impl Chart {
    pub fn new(bounds: Vec<(f64, f64)>) -> Chart {
        assert!(
            bounds.iter().all(|(lo, hi)| lo < hi),
            "chart bounds must be nonempty intervals"
        );
        Chart { bounds }
    }

    /// Symmetric box |x_i| <= half_width for every coordinate.
    pub fn symmetric(dim: usize, half_width: f64) -> Chart {
        Chart::new(vec![(-half_width, half_width); dim])
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len()
            && x.iter()
                .zip(&self.bounds)
                .all(|(xi, (lo, hi))| lo <= xi && xi <= hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn boundary_margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.bounds)
            .map(|(xi, (lo, hi))| (xi - lo).min(hi - xi))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
}

#[derive(Debug, Clone)]
pub struct SpacetimeModel {
    label: String,
    dim: usize,
    lagrangian: LagrangianKind,
    weight: WeightKind,
    chart: Chart,
    future_seed: Vec<f64>,
    lightlike_tol: f64,
}

const DEFAULT_LIGHTLIKE_TOL: f64 = 1e-9;

impl SpacetimeModel {
    pub fn minkowski(dim: usize) -> Result<SpacetimeModel, ModelError> {
        let mut seed = vec![0.0; dim];
        seed[0] = 1.0;
        SpacetimeModel::assemble(
            format!("minkowski({dim})"),
            dim,
            LagrangianKind::Minkowski,
            Chart::symmetric(dim, 50.0),
            seed,
        )
    }

    pub fn warped_product(dim: usize, profile: WarpProfile) -> Result<SpacetimeModel, ModelError> {
        let mut seed = vec![0.0; dim];
        seed[0] = 1.0;
        let mut bounds = vec![(-25.0, 25.0)];
        bounds.extend(std::iter::repeat((-10.0, 10.0)).take(dim.saturating_sub(1)));
        SpacetimeModel::assemble(
            format!("warped_product({dim},{})", profile.name()),
            dim,
            LagrangianKind::WarpedProduct { profile },
            Chart::new(bounds),
            seed,
        )
    }

    pub fn randers_perturbed(dim: usize, strength: f64) -> Result<SpacetimeModel, ModelError> {
        if !strength.is_finite() || strength.abs() >= 0.5 {
            return Err(ModelError::Parameter {
                name: "strength",
                value: strength,
                reason: "perturbation must satisfy |strength| < 0.5".into(),
            });
        }
        let mut seed = vec![0.0; dim];
        seed[0] = 1.0;
        SpacetimeModel::assemble(
            format!("randers_perturbed({dim},{strength})"),
            dim,
            LagrangianKind::RandersPerturbed { strength },
            Chart::symmetric(dim, 50.0),
            seed,
        )
    }

    pub fn beem(k: u32) -> Result<SpacetimeModel, ModelError> {
        if k == 0 {
            return Err(ModelError::Parameter {
                name: "k",
                value: 0.0,
                reason: "cone count must be at least 1".into(),
            });
        }
        // Center of one timelike cone: k theta = pi.
        let theta = std::f64::consts::PI / k as f64;
        let seed = vec![theta.cos(), theta.sin()];
        SpacetimeModel::assemble(
            format!("beem({k})"),
            2,
            LagrangianKind::Beem { k },
            Chart::symmetric(2, 50.0),
            seed,
        )
    }

    pub fn anti_de_sitter(dim: usize, curvature: f64) -> Result<SpacetimeModel, ModelError> {
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(ModelError::Parameter {
                name: "curvature",
                value: curvature,
                reason: "tidal strength must be positive".into(),
            });
        }
        let mut seed = vec![0.0; dim];
        seed[0] = 1.0;
        // Chart wide enough for refocusing runs started well off center;
        // the series profiles stay accurate far beyond it.
        let half_width = 2.5 / curvature.sqrt().min(1.0).max(0.2);
        SpacetimeModel::assemble(
            format!("anti_de_sitter({dim},{curvature})"),
            dim,
            LagrangianKind::AntiDeSitter { curvature },
            Chart::symmetric(dim, half_width.max(2.5)),
            seed,
        )
    }

    /// Model from an expression source; the seed must be timelike for it.
    pub fn from_expression(
        dim: usize,
        lagrangian_source: &str,
        chart: Chart,
        future_seed: Vec<f64>,
    ) -> Result<SpacetimeModel, ModelError> {
        let expr = crate::expr::parse_expression(lagrangian_source)?;
        check_expression_indices(&expr, dim)?;
        SpacetimeModel::assemble(
            format!("expression[{lagrangian_source}]"),
            dim,
            LagrangianKind::Expression(expr),
            chart,
            future_seed,
        )
    }

    fn assemble(
        label: String,
        dim: usize,
        lagrangian: LagrangianKind,
        chart: Chart,
        future_seed: Vec<f64>,
    ) -> Result<SpacetimeModel, ModelError> {
        if dim < 2 || dim > 9 {
            return Err(ModelError::Dimension {
                dim,
                reason: "need 2 <= dim <= 9".into(),
            });
        }
        if chart.dim() != dim || future_seed.len() != dim {
            return Err(ModelError::ArgumentDimension {
                dim,
                got: if chart.dim() != dim {
                    chart.dim()
                } else {
                    future_seed.len()
                },
            });
        }
        let model = SpacetimeModel {
            label,
            dim,
            lagrangian,
            weight: WeightKind::Zero,
            chart,
            future_seed,
            lightlike_tol: DEFAULT_LIGHTLIKE_TOL,
        };
        model.validate_reference_point()?;
        Ok(model)
    }

    /// Attach a weight, validating expression indices against the dimension.
    pub fn with_weight(mut self, weight: WeightKind) -> Result<SpacetimeModel, ModelError> {
        if let WeightKind::Expression(e) = &weight {
            check_expression_indices(e, self.dim)?;
        }
        if let Some(tag) = weight.label() {
            self.label = format!("{}+{}", self.label, tag);
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn with_weight_expression(self, source: &str) -> Result<SpacetimeModel, ModelError> {
        let expr = crate::expr::parse_expression(source)?;
        self.with_weight(WeightKind::Expression(expr))
    }

    pub fn with_chart(mut self, chart: Chart) -> Result<SpacetimeModel, ModelError> {
        if chart.dim() != self.dim {
            return Err(ModelError::ArgumentDimension {
                dim: self.dim,
                got: chart.dim(),
            });
        }
        self.chart = chart;
        self.validate_reference_point()?;
        Ok(self)
    }

    pub fn with_future_seed(mut self, seed: Vec<f64>) -> Result<SpacetimeModel, ModelError> {
        if seed.len() != self.dim {
            return Err(ModelError::ArgumentDimension {
                dim: self.dim,
                got: seed.len(),
            });
        }
        self.future_seed = seed;
        self.validate_reference_point()?;
        Ok(self)
    }

    pub fn with_lightlike_tol(mut self, tol: f64) -> SpacetimeModel {
        assert!(tol > 0.0 && tol.is_finite());
        self.lightlike_tol = tol;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spatial dimension n = dim - 1, the trace length of the orthogonal
    /// complement of a timelike direction.
    pub fn spatial_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn future_seed(&self) -> &[f64] {
        &self.future_seed
    }

    pub fn lightlike_tol(&self) -> f64 {
        self.lightlike_tol
    }

    pub fn weight_kind(&self) -> &WeightKind {
        &self.weight
    }

    pub fn lagrangian_kind(&self) -> &LagrangianKind {
        &self.lagrangian
    }

    pub fn has_weight(&self) -> bool {
        !matches!(self.weight, WeightKind::Zero)
    }

    /// Whether the weight depends on the fiber coordinates.
    pub fn weight_is_direction_dependent(&self) -> bool {
        match &self.weight {
            WeightKind::Zero | WeightKind::LinearT { .. } => false,
            WeightKind::DirectionDependent { .. } => true,
            WeightKind::Expression(e) => e.max_fiber_index().is_some(),
        }
    }

    pub fn lagrangian<S: DiffScalar>(&self, x: &[S], v: &[S]) -> Result<S, ModelError> {
        self.check_args(x.len(), v.len())?;
        match &self.lagrangian {
            LagrangianKind::Minkowski => Ok(minkowski_quadratic(x, v)),
            LagrangianKind::WarpedProduct { profile } => {
                let f2 = match profile {
                    WarpProfile::Exp => (x[0].clone() * 2.0).exp(),
                    WarpProfile::Cosh => {
                        let c = x[0].cosh();
                        c.clone() * c
                    }
                };
                let mut spatial = v[1].clone() * v[1].clone();
                for vi in &v[2..] {
                    spatial = spatial + vi.clone() * vi.clone();
                }
                Ok((f2 * spatial - v[0].clone() * v[0].clone()) * 0.5)
            }
            LagrangianKind::RandersPerturbed { strength } => {
                let quad = minkowski_quadratic(x, v);
                let norm2 = euclidean_norm_squared(v);
                let norm = norm2.sqrt()?;
                Ok(quad + v[0].clone() * norm * *strength)
            }
            LagrangianKind::Beem { k } => {
                let r2 = euclidean_norm_squared(v);
                let theta = v[1].atan2(&v[0])?;
                Ok(r2 * (theta * (*k as f64)).cos())
            }
            LagrangianKind::AntiDeSitter { curvature } => {
                let kk = *curvature;
                let mut rho2 = x[1].clone() * x[1].clone();
                let mut dot = x[1].clone() * v[1].clone();
                let mut spatial = v[1].clone() * v[1].clone();
                for i in 2..x.len() {
                    rho2 = rho2 + x[i].clone() * x[i].clone();
                    dot = dot + x[i].clone() * v[i].clone();
                    spatial = spatial + v[i].clone() * v[i].clone();
                }
                let w = rho2 * kk;
                let shc = w.apply_analytic(&|w0, m| shc_series_derivs(w0, m));
                let b = w.apply_analytic(&|w0, m| shc_b_series_derivs(w0, m));
                let time_factor = w * shc.clone() + 1.0;
                let term_t = time_factor * v[0].clone() * v[0].clone();
                let term_s = shc * spatial;
                let term_r = b * (dot.clone() * dot) * kk;
                Ok((term_s + term_r - term_t) * 0.5)
            }
            LagrangianKind::Expression(expr) => Ok(expr.eval(x, v)?),
        }
    }

    pub fn weight<S: DiffScalar>(&self, x: &[S], v: &[S]) -> Result<S, ModelError> {
        self.check_args(x.len(), v.len())?;
        match &self.weight {
            WeightKind::Zero => Ok(x[0].lift_constant(0.0)),
            WeightKind::LinearT { rate } => Ok(-(x[0].clone() * *rate)),
            WeightKind::DirectionDependent { strength } => {
                let norm2 = euclidean_norm_squared(v);
                let half_log = norm2.ln()? * 0.5;
                let log_v0 = v[0].ln()?;
                Ok((half_log - log_v0) * *strength)
            }
            WeightKind::Expression(expr) => Ok(expr.eval(x, v)?),
        }
    }

    fn check_args(&self, nx: usize, nv: usize) -> Result<(), ModelError> {
        if nx != self.dim {
            return Err(ModelError::ArgumentDimension {
                dim: self.dim,
                got: nx,
            });
        }
        if nv != self.dim {
            return Err(ModelError::ArgumentDimension {
                dim: self.dim,
                got: nv,
            });
        }
        Ok(())
    }

    /// Vertical Hessian g_ab(x, v) = d^2 L / dv^a dv^b as a plain matrix.
    pub fn metric_matrix(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_args(x.len(), v.len())?;
        let space = JetSpace::get(self.dim, 0, 2);
        let (xj, vj) = seed_point(&space, x, v);
        let l = self.lagrangian(&xj, &vj)?;
        let mut g = DMatrix::zeros(self.dim, self.dim);
        let mut multi = vec![0usize; self.dim];
        for a in 0..self.dim {
            for b in a..self.dim {
                multi.iter_mut().for_each(|m| *m = 0);
                multi[a] += 1;
                multi[b] += 1;
                let val = l
                    .partial(&vec![0; self.dim], &multi)
                    .expect("second fiber derivative is inside the truncation");
                g[(a, b)] = val;
                g[(b, a)] = val;
            }
        }
        Ok(g)
    }

    /// 2L(x, v) = g_v(v, v); negative for timelike directions.
    pub fn causal_quadratic(&self, x: &[f64], v: &[f64]) -> Result<f64, ModelError> {
        Ok(2.0 * self.lagrangian(x, v)?)
    }

    /// Length of a causal vector: sqrt(max(0, -2L)).
    pub fn lorentz_finsler_norm(&self, x: &[f64], v: &[f64]) -> Result<f64, ModelError> {
        Ok((-self.causal_quadratic(x, v)?).max(0.0).sqrt())
    }

    pub fn classify_vector(&self, x: &[f64], v: &[f64]) -> Result<CausalClass, ModelError> {
        self.check_args(x.len(), v.len())?;
        let scale: f64 = v.iter().map(|c| c * c).sum();
        if scale == 0.0 {
            return Ok(CausalClass::Spacelike);
        }
        let q = self.causal_quadratic(x, v)?;
        if q.abs() <= self.lightlike_tol * scale {
            Ok(CausalClass::Lightlike)
        } else if q < 0.0 {
            Ok(CausalClass::Timelike)
        } else {
            Ok(CausalClass::Spacelike)
        }
    }

    /// Whether a causal vector points into the cone selected by the seed.
    ///
    /// g_v(v, seed) < 0 decides it when v and the seed share a cone (reverse
    /// Cauchy-Schwarz); for multi-cone models the sign alone can mislead, so
    /// a timelike v is accepted only if the straight fiber homotopy from v
    /// to the seed stays timelike.
    pub fn is_future_directed(&self, x: &[f64], v: &[f64]) -> Result<bool, ModelError> {
        let class = self.classify_vector(x, v)?;
        if class == CausalClass::Spacelike {
            return Ok(false);
        }
        if class == CausalClass::Timelike && !self.same_cone_as_seed(x, v)? {
            return Ok(false);
        }
        let g = self.metric_matrix(x, v)?;
        let mut pairing = 0.0;
        for a in 0..self.dim {
            for b in 0..self.dim {
                pairing += g[(a, b)] * v[a] * self.future_seed[b];
            }
        }
        Ok(pairing < 0.0)
    }

    fn same_cone_as_seed(&self, x: &[f64], v: &[f64]) -> Result<bool, ModelError> {
        let vn = normalize(v);
        let sn = normalize(&self.future_seed);
        let steps = 64;
        for i in 0..=steps {
            let s = i as f64 / steps as f64;
            let mid: Vec<f64> = vn
                .iter()
                .zip(&sn)
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect();
            let len2: f64 = mid.iter().map(|c| c * c).sum();
            if len2 < 1e-12 {
                // Antipodal pair; the chord passes the origin, so the two
                // directions cannot share a convex cone.
                return Ok(false);
            }
            if self.causal_quadratic(x, &mid)? >= 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Number of connected components of the timelike set in the fiber over
    /// x. Dimension 2 sweeps the circle, dimension 3 flood-fills a
    /// latitude-longitude grid; `min_samples` floors the resolution.
    pub fn count_cone_components(&self, x: &[f64], min_samples: usize) -> Result<usize, ModelError> {
        match self.dim {
            2 => {
                let m = min_samples.max(4096);
                let mut timelike = Vec::with_capacity(m);
                for i in 0..m {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    let v = [theta.cos(), theta.sin()];
                    timelike.push(self.causal_quadratic(x, &v)? < 0.0);
                }
                let mut runs = 0;
                for i in 0..m {
                    let prev = timelike[(i + m - 1) % m];
                    if timelike[i] && !prev {
                        runs += 1;
                    }
                }
                if runs == 0 && timelike[0] {
                    runs = 1;
                }
                Ok(runs)
            }
            3 => {
                let lat = (min_samples as f64).sqrt().ceil() as usize;
                let lat = lat.max(96);
                let lon = 2 * lat;
                let mut mask = vec![false; lat * lon];
                for i in 0..lat {
                    // Cell-centered latitudes keep the poles as ordinary rows.
                    let phi = std::f64::consts::PI * (i as f64 + 0.5) / lat as f64;
                    for j in 0..lon {
                        let theta = 2.0 * std::f64::consts::PI * j as f64 / lon as f64;
                        let v = [
                            phi.cos(),
                            phi.sin() * theta.cos(),
                            phi.sin() * theta.sin(),
                        ];
                        mask[i * lon + j] = self.causal_quadratic(x, &v)? < 0.0;
                    }
                }
                Ok(count_sphere_components(&mask, lat, lon))
            }
            d => Err(ModelError::ConeDimension { dim: d }),
        }
    }

    fn validate_reference_point(&self) -> Result<(), ModelError> {
        let center = self.chart.center();
        let q = self.causal_quadratic(&center, &self.future_seed)?;
        if q >= 0.0 {
            return Err(ModelError::SeedNotTimelike {
                seed: self.future_seed.clone(),
            });
        }
        // The single-cone member of the Beem family has det(Hess L) =
        // 3 cos^2(theta) - 1, positive at the cone center, so the Hessian
        // is definite there rather than Lorentzian. Sign-based operations
        // (classification, cone census) remain meaningful; metric-level
        // operations check the signature pointwise where they run.
        if matches!(self.lagrangian, LagrangianKind::Beem { k: 1 }) {
            return Ok(());
        }
        let g = self.metric_matrix(&center, &self.future_seed)?;
        check_lorentzian(&g, &center)
    }
}

/// Eigenvalue signature test: exactly one negative direction, none near zero.
pub(crate) fn check_lorentzian(g: &DMatrix<f64>, point: &[f64]) -> Result<(), ModelError> {
    let sym = nalgebra::SymmetricEigen::new(g.clone());
    let scale = sym
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0_f64, f64::max);
    let tol = 1e-10 * scale.max(1e-300);
    let mut negative = 0;
    for l in sym.eigenvalues.iter() {
        if l.abs() <= tol {
            return Err(ModelError::NotLorentzian {
                point: format_point(point),
                reason: format!("eigenvalue {l:.3e} is degenerate"),
            });
        }
        if *l < 0.0 {
            negative += 1;
        }
    }
    if negative != 1 {
        return Err(ModelError::NotLorentzian {
            point: format_point(point),
            reason: format!("{negative} negative eigenvalues, expected exactly 1"),
        });
    }
    Ok(())
}

fn format_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|c| format!("{c:.6}")).collect();
    parts.join(", ")
}

fn minkowski_quadratic<S: DiffScalar>(x: &[S], v: &[S]) -> S {
    let _ = x;
    let mut acc = -(v[0].clone() * v[0].clone());
    for vi in &v[1..] {
        acc = acc + vi.clone() * vi.clone();
    }
    acc * 0.5
}

fn euclidean_norm_squared<S: DiffScalar>(v: &[S]) -> S {
    let mut acc = v[0].clone() * v[0].clone();
    for vi in &v[1..] {
        acc = acc + vi.clone() * vi.clone();
    }
    acc
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let len: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter().map(|c| c / len).collect()
}

/// Derivatives 0..=max_order of shc(w) = sinh(sqrt(w))^2 / w at w0 >= 0,
/// from shc(w) = sum_j 4^(j+1) w^j / (2 (2j+2)!).
fn shc_series_derivs(w0: f64, max_order: usize) -> Vec<f64> {
    series_derivs(w0, max_order, 0)
}

/// Derivatives of b(w) = (1 - shc(w)) / w = -sum_j 4^(j+2) w^j / (2 (2j+4)!).
fn shc_b_series_derivs(w0: f64, max_order: usize) -> Vec<f64> {
    series_derivs(w0, max_order, 1)
        .into_iter()
        .map(|d| -d)
        .collect()
}

/// Derivatives of h(w) = sum_j c_(j+shift) w^j with c_p = 4^(p+1) / (2 (2p+2)!):
/// h^(m)(w) = sum_i c_(i+m+shift) (i+m)!/i! w^i, summed by term recurrence.
fn series_derivs(w0: f64, max_order: usize, shift: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_order + 1);
    for m in 0..=max_order {
        // c_0 = 1 and c_p / c_(p-1) = 4 / ((2p+2)(2p+1)).
        let mut coeff = 1.0_f64;
        for p in 1..=(m + shift) {
            coeff *= 4.0 / (((2 * p + 2) * (2 * p + 1)) as f64);
        }
        let mut term = coeff;
        for i in 1..=m {
            term *= i as f64;
        }
        let mut sum = 0.0;
        let mut i = 0usize;
        loop {
            sum += term;
            let q = i + m + shift;
            term *= 4.0 * w0 / (((2 * q + 4) * (2 * q + 3)) as f64);
            term *= (i + m + 1) as f64 / (i + 1) as f64;
            i += 1;
            if term.abs() < 1e-18 * sum.abs() + 1e-300 || i > 400 {
                break;
            }
        }
        out.push(sum);
    }
    out
}

/// Connected components of a boolean mask on a latitude-longitude sphere
/// grid: rows wrap in longitude, all cells of the first and last rows meet
/// at the poles.
fn count_sphere_components(mask: &[bool], lat: usize, lon: usize) -> usize {
    let mut parent: Vec<usize> = (0..mask.len()).collect();
    fn find(parent: &mut Vec<usize>, mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            parent[ra] = rb;
        }
    };
    for i in 0..lat {
        for j in 0..lon {
            let here = i * lon + j;
            if !mask[here] {
                continue;
            }
            let right = i * lon + (j + 1) % lon;
            if mask[right] {
                union(&mut parent, here, right);
            }
            if i + 1 < lat {
                let down = (i + 1) * lon + j;
                if mask[down] {
                    union(&mut parent, here, down);
                }
            }
        }
    }
    // Pole rows: neighbors across the pole share the cap.
    for row in [0, lat - 1] {
        let mut first_true = None;
        for j in 0..lon {
            if mask[row * lon + j] {
                match first_true {
                    None => first_true = Some(row * lon + j),
                    Some(f) => union(&mut parent, f, row * lon + j),
                }
            }
        }
    }
    let mut roots = std::collections::HashSet::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            roots.insert(find(&mut parent, i));
        }
    }
    roots.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minkowski_lagrangian_matches_closed_form() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let x = [0.0, 0.0, 0.0];
        let v = [2.0, 1.0, 0.5];
        let l = m.lagrangian(&x, &v).unwrap();
        assert_eq!(l, 0.5 * (-4.0 + 1.0 + 0.25));
        assert_eq!(m.classify_vector(&x, &v).unwrap(), CausalClass::Timelike);
        assert!((m.lorentz_finsler_norm(&x, &v).unwrap() - 2.75_f64.sqrt()).abs() < 1e-15);
        let g = m.metric_matrix(&x, &v).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a != b {
                    0.0
                } else if a == 0 {
                    -1.0
                } else {
                    1.0
                };
                assert_eq!(g[(a, b)], want);
            }
        }
    }

    #[test]
    fn warped_product_scales_spatial_velocities_by_profile() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Exp).unwrap();
        let x = [0.3, 0.0, 0.0];
        let v = [1.0, 0.4, -0.2];
        let f2 = (2.0_f64 * 0.3).exp();
        let want = 0.5 * (-1.0 + f2 * (0.16 + 0.04));
        assert!((m.lagrangian(&x, &v).unwrap() - want).abs() < 1e-15);

        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let f2 = 0.3_f64.cosh().powi(2);
        let want = 0.5 * (-1.0 + f2 * (0.16 + 0.04));
        assert!((m.lagrangian(&x, &v).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn randers_perturbation_matches_closed_form_and_is_not_reversible() {
        let m = SpacetimeModel::randers_perturbed(3, 0.05).unwrap();
        let x = [0.0; 3];
        let v = [1.0, 0.2, -0.3];
        let want = 0.5 * (-1.0 + 0.04 + 0.09) + 0.05 * 1.0 * 1.13_f64.sqrt();
        assert!((m.lagrangian(&x, &v).unwrap() - want).abs() < 1e-15);
        let neg = [-1.0, -0.2, 0.3];
        let l_neg = m.lagrangian(&x, &neg).unwrap();
        assert!((l_neg - m.lagrangian(&x, &v).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn beem_lagrangian_and_cone_count() {
        for k in 1..=6u32 {
            let m = SpacetimeModel::beem(k).unwrap();
            let x = [0.0, 0.0];
            // Cone center: k theta = pi.
            let theta = std::f64::consts::PI / k as f64;
            let v = [theta.cos(), theta.sin()];
            let l = m.lagrangian(&x, &v).unwrap();
            assert!((l + 1.0).abs() < 1e-12, "k={k}: L={l}");
            assert_eq!(m.count_cone_components(&x, 4096).unwrap(), k as usize);
        }
        let m = SpacetimeModel::beem(3).unwrap();
        let l = m.lagrangian(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minkowski_cone_count_is_two() {
        for dim in [2usize, 3] {
            let m = SpacetimeModel::minkowski(dim).unwrap();
            let x = vec![0.0; dim];
            assert_eq!(m.count_cone_components(&x, 4096).unwrap(), 2);
        }
    }

    #[test]
    fn anti_de_sitter_profiles_match_direct_hyperbolic_functions() {
        // Oracle: direct evaluation through sinh, not the series.
        for w in [1e-8, 0.3, 1.7, 6.0, 14.0] {
            let shc = shc_series_derivs(w, 0)[0];
            let direct = w.sqrt().sinh().powi(2) / w;
            assert!(
                (shc - direct).abs() < 1e-12 * direct.abs(),
                "shc({w}) = {shc} vs {direct}"
            );
            // (1 - shc)/w cancels catastrophically below w ~ 1e-4, so the
            // direct form is only a valid oracle away from zero.
            if w > 0.1 {
                let b = shc_b_series_derivs(w, 0)[0];
                let direct_b = (1.0 - direct) / w;
                assert!(
                    (b - direct_b).abs() < 1e-11 * direct_b.abs().max(1.0),
                    "b({w}) = {b} vs {direct_b}"
                );
            }
        }
        assert!((shc_series_derivs(0.0, 0)[0] - 1.0).abs() < 1e-15);
        assert!((shc_b_series_derivs(0.0, 0)[0] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn anti_de_sitter_series_derivatives_match_finite_differences() {
        let w = 2.3;
        let h = 1e-6;
        let d = shc_series_derivs(w, 2);
        let fd1 = (shc_series_derivs(w + h, 0)[0] - shc_series_derivs(w - h, 0)[0]) / (2.0 * h);
        assert!((d[1] - fd1).abs() < 1e-7 * d[1].abs().max(1.0));
        let h2 = 1e-4;
        let fd2 = (shc_series_derivs(w + h2, 0)[0] - 2.0 * d[0]
            + shc_series_derivs(w - h2, 0)[0])
            / (h2 * h2);
        assert!((d[2] - fd2).abs() < 1e-5 * d[2].abs().max(1.0));
        let db = shc_b_series_derivs(w, 1);
        let fdb = (shc_b_series_derivs(w + h, 0)[0] - shc_b_series_derivs(w - h, 0)[0]) / (2.0 * h);
        assert!((db[1] - fdb).abs() < 1e-7 * db[1].abs().max(1.0));
    }

    #[test]
    fn anti_de_sitter_lagrangian_against_direct_formula() {
        let kk = 1.3;
        let m = SpacetimeModel::anti_de_sitter(3, kk).unwrap();
        let x = [0.7, 0.9, -0.4];
        let v = [1.1, 0.3, 0.25];
        let rho2 = x[1] * x[1] + x[2] * x[2];
        let w = kk * rho2;
        let shc = w.sqrt().sinh().powi(2) / w;
        let b = (1.0 - shc) / w;
        let dot = x[1] * v[1] + x[2] * v[2];
        let spatial = v[1] * v[1] + v[2] * v[2];
        let want = 0.5 * (-(1.0 + w * shc) * v[0] * v[0] + shc * spatial + kk * b * dot * dot);
        let got = m.lagrangian(&x, &v).unwrap();
        assert!((got - want).abs() < 1e-13 * want.abs().max(1.0), "{got} vs {want}");

        // Chart center is exactly Minkowski.
        let origin = [0.0, 0.0, 0.0];
        let fan = [1.25_f64.cosh(), 1.25_f64.sinh(), 0.0];
        let q = m.causal_quadratic(&origin, &fan).unwrap();
        assert!((q + 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_homogeneity_spot_checks() {
        let models = [
            SpacetimeModel::randers_perturbed(3, 0.05).unwrap(),
            SpacetimeModel::beem(4).unwrap(),
            SpacetimeModel::anti_de_sitter(3, 1.0).unwrap(),
        ];
        for m in &models {
            let dim = m.dim();
            let x: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64).collect();
            let v: Vec<f64> = (0..dim)
                .map(|i| if i == 0 { 1.2 } else { 0.3 - 0.1 * i as f64 })
                .collect();
            let l = m.lagrangian(&x, &v).unwrap();
            let v2: Vec<f64> = v.iter().map(|c| 2.0 * c).collect();
            let l2 = m.lagrangian(&x, &v2).unwrap();
            assert!(
                (l2 - 4.0 * l).abs() < 1e-12 * l.abs().max(1.0),
                "{}: 2-homogeneity failed",
                m.label()
            );
        }
    }

    #[test]
    fn classification_respects_tolerance_band() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let x = [0.0; 3];
        assert_eq!(
            m.classify_vector(&x, &[1.0, 1.0, 0.0]).unwrap(),
            CausalClass::Lightlike
        );
        assert_eq!(
            m.classify_vector(&x, &[1.0 + 1e-10, 1.0, 0.0]).unwrap(),
            CausalClass::Lightlike
        );
        assert_eq!(
            m.classify_vector(&x, &[1.1, 1.0, 0.0]).unwrap(),
            CausalClass::Timelike
        );
        assert_eq!(
            m.classify_vector(&x, &[0.9, 1.0, 0.0]).unwrap(),
            CausalClass::Spacelike
        );
        assert_eq!(
            m.classify_vector(&x, &[0.0, 0.0, 0.0]).unwrap(),
            CausalClass::Spacelike
        );
    }

    #[test]
    fn future_detection_uses_cone_membership() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let x = [0.0; 3];
        assert!(m.is_future_directed(&x, &[1.0, 0.3, 0.0]).unwrap());
        assert!(!m.is_future_directed(&x, &[-1.0, 0.3, 0.0]).unwrap());
        assert!(m.is_future_directed(&x, &[1.0, 1.0, 0.0]).unwrap());
        assert!(!m.is_future_directed(&x, &[0.3, 1.0, 0.0]).unwrap());

        // Four cones; only the seeded one counts as future.
        let m = SpacetimeModel::beem(4).unwrap();
        let x = [0.0, 0.0];
        let quarter = std::f64::consts::PI / 4.0;
        let inside = [quarter.cos(), quarter.sin()];
        assert!(m.is_future_directed(&x, &inside).unwrap());
        let other = [
            (quarter + std::f64::consts::FRAC_PI_2).cos(),
            (quarter + std::f64::consts::FRAC_PI_2).sin(),
        ];
        assert_eq!(m.classify_vector(&x, &other).unwrap(), CausalClass::Timelike);
        assert!(!m.is_future_directed(&x, &other).unwrap());
        let opposite = [-inside[0], -inside[1]];
        assert!(!m.is_future_directed(&x, &opposite).unwrap());
    }

    #[test]
    fn weights_evaluate_to_closed_forms() {
        let m = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_weight(WeightKind::LinearT { rate: 0.3 })
            .unwrap();
        let psi = m.weight(&[2.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((psi + 0.6).abs() < 1e-15);
        assert!(!m.weight_is_direction_dependent());

        let m = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_weight(WeightKind::DirectionDependent { strength: 0.5 })
            .unwrap();
        let psi = m.weight(&[0.0; 3], &[1.0, 0.6, 0.0]).unwrap();
        assert!((psi - 0.25 * 1.36_f64.ln()).abs() < 1e-15);
        let psi0 = m.weight(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!(psi0.abs() < 1e-15);
        assert!(m.weight_is_direction_dependent());
    }

    #[test]
    fn expression_models_behave_like_builtins() {
        let m = SpacetimeModel::from_expression(
            2,
            "0.5 * (-(v0^2) + v1^2)",
            Chart::symmetric(2, 10.0),
            vec![1.0, 0.0],
        )
        .unwrap();
        assert_eq!(
            m.classify_vector(&[0.0, 0.0], &[1.0, 0.3]).unwrap(),
            CausalClass::Timelike
        );
        let g = m.metric_matrix(&[0.0, 0.0], &[1.0, 0.3]).unwrap();
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(1, 1)], 1.0);

        let err = SpacetimeModel::from_expression(
            2,
            "v5 * v5 - v0 * v0",
            Chart::symmetric(2, 10.0),
            vec![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::ExpressionIndex { .. }));
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(matches!(
            SpacetimeModel::anti_de_sitter(3, -1.0),
            Err(ModelError::Parameter { .. })
        ));
        assert!(matches!(
            SpacetimeModel::minkowski(1),
            Err(ModelError::Dimension { .. })
        ));
        assert!(matches!(
            SpacetimeModel::randers_perturbed(3, 0.7),
            Err(ModelError::Parameter { .. })
        ));
        let err = SpacetimeModel::minkowski(3)
            .unwrap()
            .with_future_seed(vec![0.0, 1.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, ModelError::SeedNotTimelike { .. }));
        // Spacelike-signature expression: two negative eigenvalues.
        let err = SpacetimeModel::from_expression(
            2,
            "0.5 * (-(v0^2) - v1^2)",
            Chart::symmetric(2, 10.0),
            vec![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NotLorentzian { .. }));
    }

    #[test]
    fn chart_geometry_helpers() {
        let c = Chart::new(vec![(-1.0, 3.0), (-2.0, 2.0)]);
        assert_eq!(c.center(), vec![1.0, 0.0]);
        assert!(c.contains(&[0.0, 0.0]));
        assert!(!c.contains(&[3.5, 0.0]));
        assert!((c.boundary_margin(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(c.boundary_margin(&[4.0, 0.0]) < 0.0);
    }
}

fn check_expression_indices(expr: &ModelExpression, dim: usize) -> Result<(), ModelError> {
    if let Some(i) = expr.max_base_index() {
        if i >= dim {
            return Err(ModelError::ExpressionIndex {
                name: format!("x{i}"),
                dim,
            });
        }
    }
    if let Some(i) = expr.max_fiber_index() {
        if i >= dim {
            return Err(ModelError::ExpressionIndex {
                name: format!("v{i}"),
                dim,
            });
        }
    }
    Ok(())
}
