//! Numerical toolkit for weighted Lorentz-Finsler spacetimes.
//!
//! The toolkit takes a Lagrangian L(x, v), positively 2-homogeneous in v with
//! Lorentzian vertical Hessian, together with a 0-homogeneous weight psi(x, v),
//! and computes the associated geometry: metric tensors on the tangent bundle,
//! sprays and nonlinear connections, curvature endomorphisms, geodesics,
//! parallel frames, Jacobi and Lagrange tensor fields, and the weighted
//! expansion/shear machinery used to study focusing of causal geodesic
//! congruences.
//!
//! Layering, bottom up:
//! * [`jet`]: forward-mode truncated Taylor scalars over base and fiber
//!   coordinates; every derivative in the crate flows through these.
//! * [`expr`]: a small expression language so models can be supplied as text.
//! * [`model`]: spacetime models (builtin families and expression-backed),
//!   causal classification and cone censuses.
//! * [`geometry`]: pointwise tensors: metric, connections, curvature,
//!   flag curvature, weighted Ricci, epsilon-range bookkeeping.
//! * [`ode`]: embedded Runge-Kutta 5(4) integration with dense output.
//! * [`geodesic`]: geodesic flow, parallel transport, exponential map.
//! * [`congruence`]: Jacobi tensors along geodesics, weighted expansion and
//!   shear, conjugate point detection, focusing bounds.
//! * [`surface`]: codimension-two surfaces, lightlike normals, expansions,
//!   trapped-surface verdicts.
//! * [`oracle`]: finite-difference reference implementations used by the
//!   test batteries; independent of the jet-based paths they check.

pub mod congruence;
pub mod expr;
pub mod geodesic;
pub mod geometry;
pub mod jet;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod surface;
