//! Forward-mode truncated Taylor scalars ("jets") over a chart of a tangent
//! bundle.
//!
//! A [`Jet`] carries the value of a scalar field f(x, v) together with the
//! dense table of its mixed partial derivatives with respect to the base
//! coordinates x^0..x^n and fiber coordinates v^0..v^n, truncated at a fixed
//! total order in x and a fixed total order in v. The default truncation is
//! order 2 in x and order 3 in v, which covers metric, connection and spray
//! computations; the curvature path internally raises the fiber order to 4
//! because the derivative of the nonlinear connection in fiber directions
//! reaches fourth vertical derivatives of the Lagrangian.
//!
//! Coefficients are stored as Taylor coefficients (derivative divided by the
//! multi-index factorial), which makes multiplication a plain truncated
//! convolution. [`Jet::partial`] converts back to derivatives on extraction.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Domain failures of elementary functions during evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("square root of non-positive value {0}")]
    Sqrt(f64),
    #[error("logarithm of non-positive value {0}")]
    Log(f64),
    #[error("reciprocal of zero")]
    Recip,
    #[error("power with non-positive base {0} and non-integer exponent {1}")]
    Pow(f64, f64),
    #[error("atan2 at the origin")]
    Atan2Origin,
}

/// Structural misuse of the jet API.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("multi-index length {got} does not match chart dimension {dim}")]
    DimensionMismatch { dim: usize, got: usize },
    #[error("requested {side} order {requested} exceeds truncation order {max}")]
    OrderExceeded {
        side: &'static str,
        requested: usize,
        max: usize,
    },
    #[error("coordinate index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn enumerate_multis(dim: usize, max_order: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = Vec::new();
    let mut current = vec![0u8; dim];
    fn rec(out: &mut Vec<Vec<u8>>, current: &mut Vec<u8>, pos: usize, left: usize) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for k in 0..=left {
            current[pos] = k as u8;
            rec(out, current, pos + 1, left - k);
        }
        current[pos] = 0;
    }
    rec(&mut out, &mut current, 0, max_order);
    out.sort_by_key(|m| {
        let total: usize = m.iter().map(|&k| k as usize).sum();
        (total, m.clone())
    });
    out
}

fn multi_total(m: &[u8]) -> usize {
    m.iter().map(|&k| k as usize).sum()
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

fn multi_factorial(m: &[u8]) -> f64 {
    m.iter().map(|&k| factorial(k as usize)).product()
}

/// Shared truncation data for a family of jets: index enumeration and the
/// truncated convolution table. Spaces are cached and deduplicated, so
/// cloning a handle is cheap and jets from the same configuration share one.
pub struct JetSpace {
    dim: usize,
    x_order: usize,
    v_order: usize,
    x_multis: Vec<Vec<u8>>,
    v_multis: Vec<Vec<u8>>,
    x_pos: HashMap<Vec<u8>, usize>,
    v_pos: HashMap<Vec<u8>, usize>,
    /// (lhs combined index, rhs combined index, output combined index)
    prod: Vec<(u32, u32, u32)>,
    /// alpha! * beta! per combined index, for derivative extraction.
    ext_factor: Vec<f64>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "JetSpace(dim={}, x_order={}, v_order={})",
            self.dim, self.x_order, self.v_order
        )
    }
}

impl JetSpace {
    /// Truncation used by default throughout the geometry layer.
    pub const DEFAULT_X_ORDER: usize = 2;
    pub const DEFAULT_V_ORDER: usize = 3;

    pub fn get(dim: usize, x_order: usize, v_order: usize) -> Arc<JetSpace> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, usize), Arc<JetSpace>>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet space cache poisoned");
        guard
            .entry((dim, x_order, v_order))
            .or_insert_with(|| Arc::new(JetSpace::build(dim, x_order, v_order)))
            .clone()
    }

    /// Default truncation (2 in x, 3 in v) for the given chart dimension.
    pub fn standard(dim: usize) -> Arc<JetSpace> {
        Self::get(dim, Self::DEFAULT_X_ORDER, Self::DEFAULT_V_ORDER)
    }

    fn build(dim: usize, x_order: usize, v_order: usize) -> JetSpace {
        assert!(dim >= 1, "jet space needs at least one coordinate");
        let x_multis = enumerate_multis(dim, x_order);
        let v_multis = enumerate_multis(dim, v_order);
        let x_pos: HashMap<Vec<u8>, usize> = x_multis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let v_pos: HashMap<Vec<u8>, usize> = v_multis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let nv = v_multis.len();

        let mut prod = Vec::new();
        let mut sum = vec![0u8; dim];
        for (xi1, xm1) in x_multis.iter().enumerate() {
            for (xi2, xm2) in x_multis.iter().enumerate() {
                if multi_total(xm1) + multi_total(xm2) > x_order {
                    continue;
                }
                for (s, (&a, &b)) in sum.iter_mut().zip(xm1.iter().zip(xm2.iter())) {
                    *s = a + b;
                }
                let xo = x_pos[&sum];
                for (vi1, vm1) in v_multis.iter().enumerate() {
                    for (vi2, vm2) in v_multis.iter().enumerate() {
                        if multi_total(vm1) + multi_total(vm2) > v_order {
                            continue;
                        }
                        let mut vsum = vec![0u8; dim];
                        for (s, (&a, &b)) in vsum.iter_mut().zip(vm1.iter().zip(vm2.iter())) {
                            *s = a + b;
                        }
                        let vo = v_pos[&vsum];
                        prod.push((
                            (xi1 * nv + vi1) as u32,
                            (xi2 * nv + vi2) as u32,
                            (xo * nv + vo) as u32,
                        ));
                    }
                }
            }
        }
        prod.sort_by_key(|&(_, _, o)| o);

        let mut ext_factor = vec![0.0; x_multis.len() * nv];
        for (xi, xm) in x_multis.iter().enumerate() {
            for (vi, vm) in v_multis.iter().enumerate() {
                ext_factor[xi * nv + vi] = multi_factorial(xm) * multi_factorial(vm);
            }
        }

        JetSpace {
            dim,
            x_order,
            v_order,
            x_multis,
            v_multis,
            x_pos,
            v_pos,
            prod,
            ext_factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn x_order(&self) -> usize {
        self.x_order
    }
    pub fn v_order(&self) -> usize {
        self.v_order
    }
    pub fn len(&self) -> usize {
        self.x_multis.len() * self.v_multis.len()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Highest total derivative order representable; univariate compositions
    /// need base-point derivatives up to this order.
    pub fn max_total_order(&self) -> usize {
        self.x_order + self.v_order
    }

    fn same_truncation(&self, other: &JetSpace) -> bool {
        self.dim == other.dim && self.x_order == other.x_order && self.v_order == other.v_order
    }
}

/// Which coordinate a lifted value plays in the chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateRole {
    Base(usize),
    Fiber(usize),
    Constant,
}

/// Truncated Taylor expansion of a scalar field on (x, v) around a point.
#[derive(Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Jet(value={}, dim={}, x_order={}, v_order={})",
            self.c[0], self.space.dim, self.space.x_order, self.space.v_order
        )
    }
}

/// Lift a plain value into a jet. Base and fiber roles seed the matching
/// first-order coefficient with 1 when the truncation allows it.
pub fn lift(space: &Arc<JetSpace>, value: f64, role: CoordinateRole) -> Result<Jet, JetError> {
    let mut jet = Jet {
        space: space.clone(),
        c: vec![0.0; space.len()],
    };
    jet.c[0] = value;
    let nv = space.v_multis.len();
    match role {
        CoordinateRole::Constant => {}
        CoordinateRole::Base(i) => {
            if i >= space.dim {
                return Err(JetError::IndexOutOfRange {
                    index: i,
                    dim: space.dim,
                });
            }
            if space.x_order >= 1 {
                let mut e = vec![0u8; space.dim];
                e[i] = 1;
                let xi = space.x_pos[&e];
                jet.c[xi * nv] = 1.0;
            }
        }
        CoordinateRole::Fiber(i) => {
            if i >= space.dim {
                return Err(JetError::IndexOutOfRange {
                    index: i,
                    dim: space.dim,
                });
            }
            if space.v_order >= 1 {
                let mut e = vec![0u8; space.dim];
                e[i] = 1;
                let vi = space.v_pos[&e];
                jet.c[vi] = 1.0;
            }
        }
    }
    Ok(jet)
}

/// Seed jets for every coordinate of a chart point (x, v).
pub fn seed_point(space: &Arc<JetSpace>, x: &[f64], v: &[f64]) -> (Vec<Jet>, Vec<Jet>) {
    assert_eq!(x.len(), space.dim(), "base point dimension mismatch");
    assert_eq!(v.len(), space.dim(), "fiber point dimension mismatch");
    let xs = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| lift(space, xi, CoordinateRole::Base(i)).expect("index in range"))
        .collect();
    let vs = v
        .iter()
        .enumerate()
        .map(|(i, &vi)| lift(space, vi, CoordinateRole::Fiber(i)).expect("index in range"))
        .collect();
    (xs, vs)
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, value: f64) -> Jet {
        lift(space, value, CoordinateRole::Constant).expect("constant lift cannot fail")
    }

    pub fn base_var(space: &Arc<JetSpace>, index: usize, value: f64) -> Jet {
        lift(space, value, CoordinateRole::Base(index)).expect("base index in range")
    }

    pub fn fiber_var(space: &Arc<JetSpace>, index: usize, value: f64) -> Jet {
        lift(space, value, CoordinateRole::Fiber(index)).expect("fiber index in range")
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|c| c.is_finite())
    }

    fn assert_same_space(&self, other: &Jet) {
        assert!(
            Arc::ptr_eq(&self.space, &other.space) || self.space.same_truncation(&other.space),
            "jet arithmetic across different truncations: {:?} vs {:?}",
            self.space,
            other.space
        );
    }

    /// Mixed partial derivative for the given base/fiber multi-indices.
    pub fn partial(&self, x_multi: &[usize], v_multi: &[usize]) -> Result<f64, JetError> {
        let dim = self.space.dim;
        if x_multi.len() != dim {
            return Err(JetError::DimensionMismatch {
                dim,
                got: x_multi.len(),
            });
        }
        if v_multi.len() != dim {
            return Err(JetError::DimensionMismatch {
                dim,
                got: v_multi.len(),
            });
        }
        let xt: usize = x_multi.iter().sum();
        if xt > self.space.x_order {
            return Err(JetError::OrderExceeded {
                side: "base",
                requested: xt,
                max: self.space.x_order,
            });
        }
        let vt: usize = v_multi.iter().sum();
        if vt > self.space.v_order {
            return Err(JetError::OrderExceeded {
                side: "fiber",
                requested: vt,
                max: self.space.v_order,
            });
        }
        let xm: Vec<u8> = x_multi.iter().map(|&k| k as u8).collect();
        let vm: Vec<u8> = v_multi.iter().map(|&k| k as u8).collect();
        let xi = self.space.x_pos[&xm];
        let vi = self.space.v_pos[&vm];
        let idx = xi * self.space.v_multis.len() + vi;
        Ok(self.c[idx] * self.space.ext_factor[idx])
    }

    /// The derivative of this jet as a jet in a (smaller) target truncation.
    ///
    /// Shifting by the multi-indices (s, u) is exact as long as
    /// target.x_order + |s| <= self.x_order and likewise on the fiber side;
    /// the call panics otherwise, since silently truncated derivatives would
    /// corrupt downstream curvature assembly.
    pub fn partial_jet(
        &self,
        x_shift: &[usize],
        v_shift: &[usize],
        target: &Arc<JetSpace>,
    ) -> Jet {
        let dim = self.space.dim;
        assert_eq!(target.dim, dim, "target space dimension mismatch");
        let xs: usize = x_shift.iter().sum();
        let vs: usize = v_shift.iter().sum();
        assert!(
            target.x_order + xs <= self.space.x_order
                && target.v_order + vs <= self.space.v_order,
            "partial_jet target orders ({}, {}) plus shift ({}, {}) exceed source ({}, {})",
            target.x_order,
            target.v_order,
            xs,
            vs,
            self.space.x_order,
            self.space.v_order
        );
        let nv_src = self.space.v_multis.len();
        let nv_tgt = target.v_multis.len();
        let mut out = vec![0.0; target.len()];
        let mut shifted_x = vec![0u8; dim];
        let mut shifted_v = vec![0u8; dim];
        for (txi, txm) in target.x_multis.iter().enumerate() {
            for (k, s) in shifted_x.iter_mut().enumerate() {
                *s = txm[k] + x_shift[k] as u8;
            }
            let sxi = self.space.x_pos[&shifted_x];
            // (gamma + s)! / gamma! componentwise
            let xfac: f64 = txm
                .iter()
                .zip(x_shift.iter())
                .map(|(&g, &s)| {
                    let g = g as usize;
                    ((g + 1)..=(g + s)).fold(1.0, |acc, i| acc * i as f64)
                })
                .product();
            for (tvi, tvm) in target.v_multis.iter().enumerate() {
                for (k, s) in shifted_v.iter_mut().enumerate() {
                    *s = tvm[k] + v_shift[k] as u8;
                }
                let svi = self.space.v_pos[&shifted_v];
                let vfac: f64 = tvm
                    .iter()
                    .zip(v_shift.iter())
                    .map(|(&g, &s)| {
                        let g = g as usize;
                        ((g + 1)..=(g + s)).fold(1.0, |acc, i| acc * i as f64)
                    })
                    .product();
                out[txi * nv_tgt + tvi] = self.c[sxi * nv_src + svi] * xfac * vfac;
            }
        }
        Jet {
            space: target.clone(),
            c: out,
        }
    }

    /// Composition with a univariate analytic function given by its
    /// derivatives [f(u0), f'(u0), ..] at the jet's value u0. The slice must
    /// cover max_total_order + 1 entries.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let m_max = self.space.max_total_order();
        assert!(
            derivs.len() > m_max,
            "composition needs {} derivatives, got {}",
            m_max + 1,
            derivs.len()
        );
        let mut nil = self.clone();
        nil.c[0] = 0.0;
        let mut acc = Jet::constant(&self.space, derivs[0]);
        let mut power = Jet::constant(&self.space, 1.0);
        let mut fact = 1.0;
        for (m, &d) in derivs.iter().enumerate().take(m_max + 1).skip(1) {
            fact *= m as f64;
            power = &power * &nil;
            if d != 0.0 {
                acc = &acc + &(&power * (d / fact));
            }
        }
        acc
    }

    /// Composition with an analytic profile supplied as a derivative
    /// generator: derivs(u0, count) returns [f(u0), .., f^(count)(u0)].
    pub fn compose_with(&self, derivs: &dyn Fn(f64, usize) -> Vec<f64>) -> Jet {
        let m = self.space.max_total_order();
        let d = derivs(self.value(), m);
        assert!(d.len() > m, "analytic profile returned too few derivatives");
        self.compose(&d)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let derivs = vec![e; self.space.max_total_order() + 1];
        self.compose(&derivs)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let derivs: Vec<f64> = (0..=self.space.max_total_order())
            .map(|k| cycle[k % 4])
            .collect();
        self.compose(&derivs)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let derivs: Vec<f64> = (0..=self.space.max_total_order())
            .map(|k| cycle[k % 4])
            .collect();
        self.compose(&derivs)
    }

    pub fn sinh(&self) -> Jet {
        let sh = self.value().sinh();
        let ch = self.value().cosh();
        let derivs: Vec<f64> = (0..=self.space.max_total_order())
            .map(|k| if k % 2 == 0 { sh } else { ch })
            .collect();
        self.compose(&derivs)
    }

    pub fn cosh(&self) -> Jet {
        let sh = self.value().sinh();
        let ch = self.value().cosh();
        let derivs: Vec<f64> = (0..=self.space.max_total_order())
            .map(|k| if k % 2 == 0 { ch } else { sh })
            .collect();
        self.compose(&derivs)
    }

    pub fn sqrt(&self) -> Result<Jet, DomainError> {
        let u0 = self.value();
        if u0 <= 0.0 {
            return Err(DomainError::Sqrt(u0));
        }
        // d^k sqrt(u) = (1/2)(1/2 - 1)..(1/2 - k + 1) u^(1/2 - k)
        let m = self.space.max_total_order();
        let mut derivs = Vec::with_capacity(m + 1);
        let mut fall = 1.0;
        for k in 0..=m {
            if k > 0 {
                fall *= 0.5 - (k as f64 - 1.0);
            }
            derivs.push(fall * u0.powf(0.5 - k as f64));
        }
        Ok(self.compose(&derivs))
    }

    pub fn ln(&self) -> Result<Jet, DomainError> {
        let u0 = self.value();
        if u0 <= 0.0 {
            return Err(DomainError::Log(u0));
        }
        let m = self.space.max_total_order();
        let mut derivs = Vec::with_capacity(m + 1);
        derivs.push(u0.ln());
        let mut sign = 1.0;
        for k in 1..=m {
            derivs.push(sign * factorial(k - 1) / u0.powi(k as i32));
            sign = -sign;
        }
        Ok(self.compose(&derivs))
    }

    pub fn recip(&self) -> Result<Jet, DomainError> {
        let u0 = self.value();
        if u0 == 0.0 {
            return Err(DomainError::Recip);
        }
        let m = self.space.max_total_order();
        let mut derivs = Vec::with_capacity(m + 1);
        let mut d = 1.0 / u0;
        derivs.push(d);
        for k in 1..=m {
            d *= -(k as f64) / u0;
            derivs.push(d);
        }
        Ok(self.compose(&derivs))
    }

    pub fn powf(&self, p: f64) -> Result<Jet, DomainError> {
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            return self.powi_checked(p as i32);
        }
        let u0 = self.value();
        if u0 <= 0.0 {
            return Err(DomainError::Pow(u0, p));
        }
        let m = self.space.max_total_order();
        let mut derivs = Vec::with_capacity(m + 1);
        let mut fall = 1.0;
        for k in 0..=m {
            if k > 0 {
                fall *= p - (k as f64 - 1.0);
            }
            derivs.push(fall * u0.powf(p - k as f64));
        }
        Ok(self.compose(&derivs))
    }

    /// Integer power by repeated squaring; negative exponents go through the
    /// reciprocal and error on a zero value.
    pub fn powi_checked(&self, k: i32) -> Result<Jet, DomainError> {
        if k < 0 {
            return self.recip()?.powi_checked(-k);
        }
        let mut acc = Jet::constant(&self.space, 1.0);
        let mut base = self.clone();
        let mut e = k as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(acc)
    }

    pub fn powi(&self, k: i32) -> Jet {
        self.powi_checked(k)
            .expect("negative integer power of zero-valued jet")
    }

    /// Arctangent of a jet whose value may be anything; uses the identity
    /// atan(t) = atan(t0) + atan((t - t0) / (1 + t t0)) so the series part
    /// always runs on a zero-valued argument.
    fn atan(&self) -> Jet {
        let t0 = self.value();
        let num = self - t0;
        let den = &(self * t0) + 1.0;
        let s = &num / &den;
        let m = self.space.max_total_order();
        let mut derivs = vec![0.0; m + 1];
        // Derivatives of atan at 0: odd orders alternate (k-1)! in sign.
        let mut sign = 1.0;
        let mut k = 1;
        while k <= m {
            derivs[k] = sign * factorial(k - 1);
            sign = -sign;
            k += 2;
        }
        &s.compose(&derivs) + t0.atan()
    }

    /// Quadrant-correct atan2(self, x), where self plays the role of y.
    pub fn atan2(&self, x: &Jet) -> Result<Jet, DomainError> {
        self.assert_same_space(x);
        let y0 = self.value();
        let x0 = x.value();
        if x0 == 0.0 && y0 == 0.0 {
            return Err(DomainError::Atan2Origin);
        }
        if x0.abs() >= y0.abs() {
            let t = self / x;
            let base = t.atan();
            if x0 > 0.0 {
                Ok(base)
            } else {
                let shift = if y0 >= 0.0 {
                    std::f64::consts::PI
                } else {
                    -std::f64::consts::PI
                };
                Ok(&base + shift)
            }
        } else {
            let t = x / self;
            let shift = if y0 > 0.0 {
                std::f64::consts::FRAC_PI_2
            } else {
                -std::f64::consts::FRAC_PI_2
            };
            Ok(&(-t.atan()) + shift)
        }
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $impl_fn:ident) => {
        impl $trait<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                self.$impl_fn(rhs)
            }
        }
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                (&self).$impl_fn(&rhs)
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                (&self).$impl_fn(rhs)
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                self.$impl_fn(&rhs)
            }
        }
    };
}

impl Jet {
    fn add_impl(&self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        let mut out = self.clone();
        for (o, r) in out.c.iter_mut().zip(rhs.c.iter()) {
            *o += r;
        }
        out
    }

    fn sub_impl(&self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        let mut out = self.clone();
        for (o, r) in out.c.iter_mut().zip(rhs.c.iter()) {
            *o -= r;
        }
        out
    }

    fn mul_impl(&self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        let mut out = vec![0.0; self.space.len()];
        for &(a, b, o) in &self.space.prod {
            out[o as usize] += self.c[a as usize] * rhs.c[b as usize];
        }
        Jet {
            space: self.space.clone(),
            c: out,
        }
    }

    fn div_impl(&self, rhs: &Jet) -> Jet {
        let inv = rhs.recip().expect("division by zero-valued jet");
        self.mul_impl(&inv)
    }
}

jet_binop!(Add, add, add_impl);
jet_binop!(Sub, sub, sub_impl);
jet_binop!(Mul, mul, mul_impl);
jet_binop!(Div, div, div_impl);

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        let mut out = self.clone();
        for o in out.c.iter_mut() {
            *o = -*o;
        }
        out
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

macro_rules! jet_scalar_op {
    ($trait:ident, $method:ident, $body:expr) => {
        impl $trait<f64> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $body;
                f(self, rhs)
            }
        }
        impl $trait<f64> for Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $body;
                f(&self, rhs)
            }
        }
    };
}

jet_scalar_op!(Add, add, |jet, k| {
    let mut out = jet.clone();
    out.c[0] += k;
    out
});
jet_scalar_op!(Sub, sub, |jet, k| {
    let mut out = jet.clone();
    out.c[0] -= k;
    out
});
jet_scalar_op!(Mul, mul, |jet, k| {
    let mut out = jet.clone();
    for o in out.c.iter_mut() {
        *o *= k;
    }
    out
});
jet_scalar_op!(Div, div, |jet, k| {
    let mut out = jet.clone();
    for o in out.c.iter_mut() {
        *o /= k;
    }
    out
});

/// Scalar abstraction shared by plain f64 evaluation and jet evaluation, so
/// model Lagrangians and weights are written once and differentiated for
/// free.
pub trait DiffScalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant with the same shape as self.
    fn lift_constant(&self, c: f64) -> Self;
    fn exp(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sinh(&self) -> Self;
    fn cosh(&self) -> Self;
    fn sqrt(&self) -> Result<Self, DomainError>;
    fn ln(&self) -> Result<Self, DomainError>;
    fn recip(&self) -> Result<Self, DomainError>;
    fn powf(&self, p: f64) -> Result<Self, DomainError>;
    fn powi(&self, k: i32) -> Result<Self, DomainError>;
    fn atan2(&self, x: &Self) -> Result<Self, DomainError>;
    /// Apply an analytic profile given by a derivative generator.
    fn apply_analytic(&self, derivs: &dyn Fn(f64, usize) -> Vec<f64>) -> Self;
}

impl DiffScalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift_constant(&self, c: f64) -> f64 {
        c
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn sinh(&self) -> f64 {
        f64::sinh(*self)
    }
    fn cosh(&self) -> f64 {
        f64::cosh(*self)
    }
    fn sqrt(&self) -> Result<f64, DomainError> {
        if *self <= 0.0 {
            Err(DomainError::Sqrt(*self))
        } else {
            Ok(f64::sqrt(*self))
        }
    }
    fn ln(&self) -> Result<f64, DomainError> {
        if *self <= 0.0 {
            Err(DomainError::Log(*self))
        } else {
            Ok(f64::ln(*self))
        }
    }
    fn recip(&self) -> Result<f64, DomainError> {
        if *self == 0.0 {
            Err(DomainError::Recip)
        } else {
            Ok(1.0 / *self)
        }
    }
    fn powf(&self, p: f64) -> Result<f64, DomainError> {
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            return DiffScalar::powi(self, p as i32);
        }
        if *self <= 0.0 {
            Err(DomainError::Pow(*self, p))
        } else {
            Ok(f64::powf(*self, p))
        }
    }
    fn powi(&self, k: i32) -> Result<f64, DomainError> {
        if k < 0 && *self == 0.0 {
            return Err(DomainError::Recip);
        }
        Ok(f64::powi(*self, k))
    }
    fn atan2(&self, x: &f64) -> Result<f64, DomainError> {
        if *self == 0.0 && *x == 0.0 {
            Err(DomainError::Atan2Origin)
        } else {
            Ok(f64::atan2(*self, *x))
        }
    }
    fn apply_analytic(&self, derivs: &dyn Fn(f64, usize) -> Vec<f64>) -> f64 {
        derivs(*self, 0)[0]
    }
}

impl DiffScalar for Jet {
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn lift_constant(&self, c: f64) -> Jet {
        Jet::constant(&self.space, c)
    }
    fn exp(&self) -> Jet {
        Jet::exp(self)
    }
    fn sin(&self) -> Jet {
        Jet::sin(self)
    }
    fn cos(&self) -> Jet {
        Jet::cos(self)
    }
    fn sinh(&self) -> Jet {
        Jet::sinh(self)
    }
    fn cosh(&self) -> Jet {
        Jet::cosh(self)
    }
    fn sqrt(&self) -> Result<Jet, DomainError> {
        Jet::sqrt(self)
    }
    fn ln(&self) -> Result<Jet, DomainError> {
        Jet::ln(self)
    }
    fn recip(&self) -> Result<Jet, DomainError> {
        Jet::recip(self)
    }
    fn powf(&self, p: f64) -> Result<Jet, DomainError> {
        Jet::powf(self, p)
    }
    fn powi(&self, k: i32) -> Result<Jet, DomainError> {
        Jet::powi_checked(self, k)
    }
    fn atan2(&self, x: &Jet) -> Result<Jet, DomainError> {
        Jet::atan2(self, x)
    }
    fn apply_analytic(&self, derivs: &dyn Fn(f64, usize) -> Vec<f64>) -> Jet {
        Jet::compose_with(self, derivs)
    }
}

/// Settings for finite-difference cross-checks.
#[derive(Debug, Clone)]
pub struct DiffConfig {
    /// Relative step; the per-coordinate step is fd_step * max(1, |coord|).
    pub fd_step: f64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig { fd_step: 1e-5 }
    }
}

impl DiffConfig {
    pub fn new(fd_step: f64) -> Result<Self, JetError> {
        if !(fd_step > 0.0) {
            return Err(JetError::Domain(DomainError::Recip));
        }
        Ok(DiffConfig { fd_step })
    }
}

/// Central-difference estimate of a mixed partial, recursing one derivative
/// at a time. Steps scale with the coordinate magnitude, and the base step
/// widens with the total derivative order as step^(3/(order+2)) so that
/// roundoff amplification (ulp / h^order) stays balanced against truncation
/// error; at order 1 this is the configured step itself.
pub fn central_difference<F>(
    f: &F,
    x: &[f64],
    v: &[f64],
    x_multi: &[usize],
    v_multi: &[usize],
    step: f64,
) -> Result<f64, DomainError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, DomainError>,
{
    let order: usize = x_multi.iter().chain(v_multi.iter()).sum();
    let h = if order <= 1 {
        step
    } else {
        step.powf(3.0 / (order as f64 + 2.0))
    };
    central_difference_rec(f, x, v, x_multi, v_multi, h)
}

fn central_difference_rec<F>(
    f: &F,
    x: &[f64],
    v: &[f64],
    x_multi: &[usize],
    v_multi: &[usize],
    step: f64,
) -> Result<f64, DomainError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, DomainError>,
{
    if let Some(i) = x_multi.iter().position(|&k| k > 0) {
        let mut lower = x_multi.to_vec();
        lower[i] -= 1;
        let h = step * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        let fp = central_difference_rec(f, &xp, v, &lower, v_multi, step)?;
        let fm = central_difference_rec(f, &xm, v, &lower, v_multi, step)?;
        return Ok((fp - fm) / (2.0 * h));
    }
    if let Some(i) = v_multi.iter().position(|&k| k > 0) {
        let mut lower = v_multi.to_vec();
        lower[i] -= 1;
        let h = step * v[i].abs().max(1.0);
        let mut vp = v.to_vec();
        vp[i] += h;
        let mut vm = v.to_vec();
        vm[i] -= h;
        let fp = central_difference_rec(f, x, &vp, x_multi, &lower, step)?;
        let fm = central_difference_rec(f, x, &vm, x_multi, &lower, step)?;
        return Ok((fp - fm) / (2.0 * h));
    }
    f(x, v)
}

/// Absolute difference between the jet-computed partial and its
/// central-difference estimate. The plain and jet closures must evaluate the
/// same field; the duplication is what makes the check independent.
pub fn finite_difference_check<FP, FJ>(
    f_plain: FP,
    f_jet: FJ,
    x: &[f64],
    v: &[f64],
    x_multi: &[usize],
    v_multi: &[usize],
    config: &DiffConfig,
) -> Result<f64, JetError>
where
    FP: Fn(&[f64], &[f64]) -> Result<f64, DomainError>,
    FJ: Fn(&[Jet], &[Jet]) -> Result<Jet, DomainError>,
{
    let dim = x.len();
    if v.len() != dim || x_multi.len() != dim || v_multi.len() != dim {
        return Err(JetError::DimensionMismatch {
            dim,
            got: v.len().max(x_multi.len()).max(v_multi.len()),
        });
    }
    let xt: usize = x_multi.iter().sum();
    let vt: usize = v_multi.iter().sum();
    if xt > JetSpace::DEFAULT_X_ORDER {
        return Err(JetError::OrderExceeded {
            side: "base",
            requested: xt,
            max: JetSpace::DEFAULT_X_ORDER,
        });
    }
    if vt > JetSpace::DEFAULT_V_ORDER {
        return Err(JetError::OrderExceeded {
            side: "fiber",
            requested: vt,
            max: JetSpace::DEFAULT_V_ORDER,
        });
    }
    let space = JetSpace::get(dim, xt, vt);
    let (xj, vj) = seed_point(&space, x, v);
    let jet = f_jet(&xj, &vj)?;
    let jet_partial = jet.partial(x_multi, v_multi)?;
    let fd = central_difference(&f_plain, x, v, x_multi, v_multi, config.fd_step)?;
    Ok((jet_partial - fd).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_space(dim: usize) -> Arc<JetSpace> {
        JetSpace::standard(dim)
    }

    #[test]
    fn polynomial_partials_are_exact() {
        // f(x, v) = (x0)^2 (v0)^3 + 2 x0 x1 v0 v1 at x = (1.5, -0.7), v = (2.0, 0.25)
        let space = std_space(2);
        let (x, v) = seed_point(&space, &[1.5, -0.7], &[2.0, 0.25]);
        let f = &(&(&x[0] * &x[0]) * &(&(&v[0] * &v[0]) * &v[0]))
            + &(&(&(&x[0] * &x[1]) * &(&v[0] * &v[1])) * 2.0);

        assert!((f.value() - 16.95).abs() < 1e-12);
        let d_v0 = f.partial(&[0, 0], &[1, 0]).unwrap();
        assert!((d_v0 - 26.475).abs() < 1e-12, "got {d_v0}");
        let d_x0x0_v0v0v0 = f.partial(&[2, 0], &[3, 0]).unwrap();
        assert!((d_x0x0_v0v0v0 - 12.0).abs() < 1e-12);
        let d_mixed = f.partial(&[1, 1], &[1, 1]).unwrap();
        assert!((d_mixed - 2.0).abs() < 1e-12);
        // A partial that is identically zero for this polynomial.
        let d_zero = f.partial(&[0, 2], &[0, 0]).unwrap();
        assert!(d_zero.abs() < 1e-12);
    }

    #[test]
    fn transcendental_partial_matches_closed_form() {
        // f = sin(x0) * (v1)^2; d^2 f / dx0 dv1 = cos(x0) * 2 v1
        let space = std_space(2);
        let (x, v) = seed_point(&space, &[0.3, 0.0], &[0.0, 2.0]);
        let f = &x[0].sin() * &(&v[1] * &v[1]);
        let d = f.partial(&[1, 0], &[0, 1]).unwrap();
        assert!(
            (d - 3.821345956502424).abs() < 1e-12,
            "d^2(sin(x0) v1^2)/dx0 dv1 = {d}"
        );
    }

    #[test]
    fn finite_difference_agrees_with_jets_through_compositions() {
        // f = exp(x0 v0) * sqrt(1 + v1^2) + log(2 + sin(x1))
        fn eval<S: DiffScalar>(x: &[S], v: &[S]) -> Result<S, DomainError> {
            let a = (x[0].clone() * v[0].clone()).exp();
            let b = (v[1].clone() * v[1].clone() + 1.0).sqrt()?;
            let c = (x[1].sin() + 2.0).ln()?;
            Ok(a * b + c)
        }
        let x = [0.4, -1.1];
        let v = [0.7, 1.3];
        let config = DiffConfig::default();
        for (xm, vm) in [
            ([1usize, 0], [0usize, 0]),
            ([0, 1], [0, 0]),
            ([0, 0], [1, 0]),
            ([0, 0], [0, 1]),
            ([1, 0], [1, 0]),
            ([0, 0], [0, 2]),
            ([2, 0], [1, 0]),
            ([0, 0], [1, 2]),
        ] {
            let resid = finite_difference_check(
                eval::<f64>,
                eval::<Jet>,
                &x,
                &v,
                &xm,
                &vm,
                &config,
            )
            .unwrap();
            assert!(
                resid < 1e-4,
                "fd residual {resid} too large for multi-index {xm:?},{vm:?}"
            );
        }
    }

    #[test]
    fn atan2_jet_matches_analytic_derivatives_in_every_quadrant() {
        // d(atan2(y, x))/dx = -y/r^2, /dy = x/r^2; second order:
        // d2/dx2 = 2xy/r^4, d2/dy2 = -2xy/r^4, d2/dxdy = (y^2 - x^2)/r^4.
        let space = JetSpace::get(1, 0, 3);
        for (x0, y0) in [
            (1.3, 0.4),
            (-1.2, 0.5),
            (-0.8, -1.7),
            (0.6, -1.9),
            (0.0, 2.0),
            (0.0, -2.0),
            (-2.0, 0.0),
        ] {
            let y = Jet::fiber_var(&space, 0, y0);
            let x = Jet::constant(&space, x0);
            // Differentiate in y only (x held constant): one fiber variable.
            let f = y.atan2(&x).unwrap();
            let r2 = x0 * x0 + y0 * y0;
            assert!((f.value() - y0.atan2(x0)).abs() < 1e-14);
            let dy = f.partial(&[0], &[1]).unwrap();
            assert!((dy - x0 / r2).abs() < 1e-12, "at ({x0},{y0}): {dy}");
            let dyy = f.partial(&[0], &[2]).unwrap();
            let expect = -2.0 * x0 * y0 / (r2 * r2);
            assert!((dyy - expect).abs() < 1e-11, "at ({x0},{y0}): {dyy}");
        }
    }

    #[test]
    fn division_and_reciprocal_invert_multiplication() {
        let space = std_space(2);
        let (x, v) = seed_point(&space, &[0.9, -0.3], &[1.4, 0.8]);
        let a = &(&x[0] * &v[1]) + &(&v[0] * 0.7 - 2.0);
        let b = &(&x[1].cos() * &v[0]) + 3.0;
        let q = &a / &b;
        let back = &q * &b;
        for (ca, cb) in a.c.iter().zip(back.c.iter()) {
            assert!((ca - cb).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_and_log_reject_non_positive_values() {
        let space = std_space(1);
        let neg = Jet::constant(&space, -2.0);
        assert!(matches!(neg.sqrt(), Err(DomainError::Sqrt(_))));
        assert!(matches!(neg.ln(), Err(DomainError::Log(_))));
        let zero = Jet::constant(&space, 0.0);
        assert!(zero.sqrt().is_err());
        assert!(zero.ln().is_err());
        assert!(zero.recip().is_err());
    }

    #[test]
    fn partial_requests_beyond_truncation_error_out() {
        let space = std_space(2);
        let (x, _v) = seed_point(&space, &[1.0, 2.0], &[0.5, 0.5]);
        let err = x[0].partial(&[3, 0], &[0, 0]).unwrap_err();
        assert!(matches!(err, JetError::OrderExceeded { .. }));
        let err = x[0].partial(&[0], &[0, 0]).unwrap_err();
        assert!(matches!(err, JetError::DimensionMismatch { .. }));
    }

    #[test]
    fn partial_jet_shifts_are_consistent_with_direct_partials() {
        // Take d/dv0 of f as a jet and check its x-derivatives match the
        // mixed partials of f itself.
        let space = JetSpace::get(2, 2, 3);
        let (x, v) = seed_point(&space, &[0.8, -0.4], &[1.1, 0.6]);
        let f = &(&x[0].sin() * &(&v[0] * &(&v[1] * &v[1]))) + &(&x[1] * &(&v[0] * &v[0]));
        let target = JetSpace::get(2, 2, 2);
        let df_dv0 = f.partial_jet(&[0, 0], &[1, 0], &target);
        for (xm, vm) in [
            ([0usize, 0], [0usize, 0]),
            ([1, 0], [0, 0]),
            ([0, 0], [0, 1]),
            ([1, 1], [0, 2]),
            ([2, 0], [1, 0]),
        ] {
            let direct = f
                .partial(&xm, &[vm[0] + 1, vm[1]])
                .expect("within source truncation");
            let shifted = df_dv0.partial(&xm, &vm).unwrap();
            assert!(
                (direct - shifted).abs() < 1e-12,
                "mismatch at {xm:?},{vm:?}: {direct} vs {shifted}"
            );
        }
    }

    #[test]
    fn lift_roles_seed_first_order_coefficients() {
        let space = std_space(2);
        let xj = lift(&space, 2.5, CoordinateRole::Base(1)).unwrap();
        assert_eq!(xj.value(), 2.5);
        assert_eq!(xj.partial(&[0, 1], &[0, 0]).unwrap(), 1.0);
        assert_eq!(xj.partial(&[1, 0], &[0, 0]).unwrap(), 0.0);
        let vj = lift(&space, -0.5, CoordinateRole::Fiber(0)).unwrap();
        assert_eq!(vj.partial(&[0, 0], &[1, 0]).unwrap(), 1.0);
        assert!(lift(&space, 0.0, CoordinateRole::Base(2)).is_err());
    }

    #[test]
    fn default_fd_step_is_documented_value() {
        let config = DiffConfig::default();
        assert_eq!(config.fd_step, 1e-5);
        assert!(DiffConfig::new(-1.0).is_err());
    }
}
