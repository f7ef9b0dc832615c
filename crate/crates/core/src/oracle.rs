//! Finite-difference reference geometry for quadratic Lagrangians.
//!
//! When L(x, v) = 1/2 g_ab(x) v^a v^b the structure is classical Lorentzian
//! and every object has a textbook formula in terms of g and its coordinate
//! derivatives:
//!
//! ```text
//! Gam^a_bc    = 1/2 g^(ad) (d_b g_dc + d_c g_bd - d_d g_bc)
//! tidal(v)^a_b = v^c v^d (d_b Gam^a_cd - d_c Gam^a_bd
//!                 + Gam^a_bm Gam^m_cd - Gam^a_cm Gam^m_bd)
//! (D_v X)^a   = v^b dX^a/dx^b + Gam^a_bc v^b X^c
//! ```
//!
//! Everything is computed with Richardson-extrapolated central differences
//! of plain f64 evaluations of L, so none of the jet machinery is involved.
//! The constructor certifies that L really is quadratic in v before any of
//! this is trusted.

use nalgebra::DMatrix;

use crate::geometry::GeometryError;
use crate::model::SpacetimeModel;

pub struct LorentzOracle<'a> {
    model: &'a SpacetimeModel,
    /// Relative base step for coordinate differences.
    step: f64,
}

impl<'a> LorentzOracle<'a> {
    /// Certify that the model's Lagrangian is quadratic in v at the chart
    /// center and wrap it. Non-quadratic models are rejected.
    pub fn new(model: &'a SpacetimeModel) -> Result<Self, GeometryError> {
        let oracle = LorentzOracle { model, step: 1e-3 };
        let x = model.chart().center();
        let g = oracle.metric(&x)?;
        // 2-homogeneous L has no linear part, so quadratic means
        // L(v) = 1/2 v . g(x) v exactly, for any v.
        for trial in 0..3 {
            let mut v = vec![0.0; model.dim()];
            for (i, c) in v.iter_mut().enumerate() {
                *c = 0.3 + 0.7 * ((trial * 7 + i * 3 + 1) as f64).sin();
            }
            let l = model.lagrangian(&x, &v)?;
            let quad = 0.5 * crate::geometry::metric_inner(&g, &v, &v);
            if (l - quad).abs() > 1e-8 * (1.0 + l.abs()) {
                return Err(GeometryError::Parameter(format!(
                    "Lagrangian of '{}' is not quadratic in v; the Lorentzian \
                     oracle does not apply",
                    model.label()
                )));
            }
        }
        Ok(oracle)
    }

    /// g_ab(x) from central differences of L in v. Exact to roundoff for
    /// quadratic L regardless of step, so a unit step is used.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let dim = self.model.dim();
        let h = 1.0;
        let l = |v: &[f64]| self.model.lagrangian(x, v);
        let mut g = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for b in a..dim {
                let val = if a == b {
                    let mut vp = vec![0.0; dim];
                    vp[a] = h;
                    let mut vm = vec![0.0; dim];
                    vm[a] = -h;
                    (l(&vp)? - 2.0 * l(&vec![0.0; dim])? + l(&vm)?) / (h * h)
                } else {
                    let mut vpp = vec![0.0; dim];
                    vpp[a] = h;
                    vpp[b] = h;
                    let mut vpm = vpp.clone();
                    vpm[b] = -h;
                    let mut vmp = vpp.clone();
                    vmp[a] = -h;
                    let mut vmm = vpm.clone();
                    vmm[a] = -h;
                    (l(&vpp)? - l(&vpm)? - l(&vmp)? + l(&vmm)?) / (4.0 * h * h)
                };
                g[(a, b)] = val;
                g[(b, a)] = val;
            }
        }
        Ok(g)
    }

    /// Christoffel symbols indexed as gamma[a][(b, c)].
    pub fn christoffel(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>, GeometryError> {
        let jets = self.metric_jets(x)?;
        Ok(christoffel_from(&jets))
    }

    /// Tidal operator driving geodesic deviation, as the matrix acting on
    /// the deviation vector: J''^a + tidal^a_b J^b = 0 along the geodesic
    /// with velocity v.
    pub fn tidal(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let dim = self.model.dim();
        let jets = self.metric_jets(x)?;
        let gamma = christoffel_from(&jets);
        let dgamma = dchristoffel_from(&jets);

        let mut t = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = 0.0;
                for c in 0..dim {
                    for d in 0..dim {
                        let mut term = dgamma[b][a][(c, d)] - dgamma[c][a][(b, d)];
                        for m in 0..dim {
                            term += gamma[a][(b, m)] * gamma[m][(c, d)]
                                - gamma[a][(c, m)] * gamma[m][(b, d)];
                        }
                        acc += v[c] * v[d] * term;
                    }
                }
                t[(a, b)] = acc;
            }
        }
        Ok(t)
    }

    /// (D_v X)^a at x for a vector field given as a closure.
    pub fn covariant_derivative(
        &self,
        x: &[f64],
        v: &[f64],
        field: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>, GeometryError> {
        let dim = self.model.dim();
        let gamma = self.christoffel(x)?;
        let x_val = field(x);
        let mut out = vec![0.0; dim];
        for b in 0..dim {
            let h = self.step * (1.0 + x[b].abs());
            let dx_b = richardson(|hh| {
                let mut xp = x.to_vec();
                xp[b] += hh;
                let mut xm = x.to_vec();
                xm[b] -= hh;
                let fp = field(&xp);
                let fm = field(&xm);
                (0..dim).map(|a| (fp[a] - fm[a]) / (2.0 * hh)).collect()
            }, h);
            for a in 0..dim {
                out[a] += v[b] * dx_b[a];
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    out[a] += gamma[a][(b, c)] * v[b] * x_val[c];
                }
            }
        }
        Ok(out)
    }

    /// Metric with first and second coordinate derivatives at x, each from
    /// Richardson-extrapolated central differences.
    fn metric_jets(&self, x: &[f64]) -> Result<MetricJets, GeometryError> {
        let dim = self.model.dim();
        let g = self.metric(x)?;
        let g_inv = g.clone().try_inverse().ok_or_else(|| GeometryError::Degenerate {
            point: format!("{x:?}"),
            reason: "oracle metric not invertible".into(),
        })?;

        let at = |x: &[f64]| self.metric(x);
        let mut dg = Vec::with_capacity(dim);
        for b in 0..dim {
            let h = self.step * (1.0 + x[b].abs());
            dg.push(richardson_mat(
                |hh| {
                    let mut xp = x.to_vec();
                    xp[b] += hh;
                    let mut xm = x.to_vec();
                    xm[b] -= hh;
                    Ok((at(&xp)? - at(&xm)?) / (2.0 * hh))
                },
                h,
            )?);
        }

        let mut ddg = vec![vec![DMatrix::zeros(dim, dim); dim]; dim];
        for b in 0..dim {
            for c in b..dim {
                let hb = self.step * (1.0 + x[b].abs());
                let val = if b == c {
                    richardson_mat(
                        |hh| {
                            let mut xp = x.to_vec();
                            xp[b] += hh;
                            let mut xm = x.to_vec();
                            xm[b] -= hh;
                            Ok((at(&xp)? - 2.0 * &g + at(&xm)?) / (hh * hh))
                        },
                        hb,
                    )?
                } else {
                    let hc = self.step * (1.0 + x[c].abs());
                    richardson_mat(
                        |hh| {
                            let s = hh / hb;
                            let (hb, hc) = (hh, hc * s);
                            let mut xpp = x.to_vec();
                            xpp[b] += hb;
                            xpp[c] += hc;
                            let mut xpm = x.to_vec();
                            xpm[b] += hb;
                            xpm[c] -= hc;
                            let mut xmp = x.to_vec();
                            xmp[b] -= hb;
                            xmp[c] += hc;
                            let mut xmm = x.to_vec();
                            xmm[b] -= hb;
                            xmm[c] -= hc;
                            Ok((at(&xpp)? - at(&xpm)? - at(&xmp)? + at(&xmm)?)
                                / (4.0 * hb * hc))
                        },
                        hb,
                    )?
                };
                ddg[b][c] = val.clone();
                ddg[c][b] = val;
            }
        }

        let mut dg_inv = Vec::with_capacity(dim);
        for b in 0..dim {
            dg_inv.push(-(&g_inv * &dg[b] * &g_inv));
        }

        Ok(MetricJets {
            g_inv,
            dg,
            ddg,
            dg_inv,
        })
    }
}

struct MetricJets {
    g_inv: DMatrix<f64>,
    dg: Vec<DMatrix<f64>>,
    ddg: Vec<Vec<DMatrix<f64>>>,
    dg_inv: Vec<DMatrix<f64>>,
}

fn christoffel_from(jets: &MetricJets) -> Vec<DMatrix<f64>> {
    let dim = jets.dg.len();
    let mut gamma = vec![DMatrix::zeros(dim, dim); dim];
    for a in 0..dim {
        for b in 0..dim {
            for c in b..dim {
                let mut acc = 0.0;
                for d in 0..dim {
                    acc += jets.g_inv[(a, d)]
                        * (jets.dg[b][(d, c)] + jets.dg[c][(b, d)] - jets.dg[d][(b, c)]);
                }
                gamma[a][(b, c)] = 0.5 * acc;
                gamma[a][(c, b)] = 0.5 * acc;
            }
        }
    }
    gamma
}

/// dgamma[e][a][(b, c)] = d Gam^a_bc / dx^e, from the product rule.
fn dchristoffel_from(jets: &MetricJets) -> Vec<Vec<DMatrix<f64>>> {
    let dim = jets.dg.len();
    let mut dgamma = vec![vec![DMatrix::zeros(dim, dim); dim]; dim];
    for e in 0..dim {
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let mut acc = 0.0;
                    for d in 0..dim {
                        acc += jets.dg_inv[e][(a, d)]
                            * (jets.dg[b][(d, c)] + jets.dg[c][(b, d)] - jets.dg[d][(b, c)]);
                        acc += jets.g_inv[(a, d)]
                            * (jets.ddg[e][b][(d, c)] + jets.ddg[e][c][(b, d)]
                                - jets.ddg[e][d][(b, c)]);
                    }
                    dgamma[e][a][(b, c)] = 0.5 * acc;
                }
            }
        }
    }
    dgamma
}

/// One Richardson level for a second-order central difference: evaluates at
/// h and h/2 and combines to fourth order.
fn richardson(f: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let coarse = f(h);
    let fine = f(0.5 * h);
    coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect()
}

fn richardson_mat(
    f: impl Fn(f64) -> Result<DMatrix<f64>, GeometryError>,
    h: f64,
) -> Result<DMatrix<f64>, GeometryError> {
    let coarse = f(h)?;
    let fine = f(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WarpProfile;

    #[test]
    fn rejects_non_quadratic_models() {
        let m = SpacetimeModel::randers_perturbed(3, 0.1).unwrap();
        assert!(LorentzOracle::new(&m).is_err());
        let m = SpacetimeModel::beem(3).unwrap();
        assert!(LorentzOracle::new(&m).is_err());
    }

    #[test]
    fn minkowski_is_flat() {
        let m = SpacetimeModel::minkowski(3).unwrap();
        let oracle = LorentzOracle::new(&m).unwrap();
        let x = [0.3, -0.8, 1.2];
        let g = oracle.metric(&x).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a != b {
                    0.0
                } else if a == 0 {
                    -1.0
                } else {
                    1.0
                };
                assert!((g[(a, b)] - want).abs() < 1e-12);
            }
        }
        let gamma = oracle.christoffel(&x).unwrap();
        for a in 0..3 {
            assert!(gamma[a].iter().all(|c| c.abs() < 1e-10));
        }
        let t = oracle.tidal(&x, &[1.0, 0.2, 0.0]).unwrap();
        assert!(t.iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn warped_christoffels_match_closed_form() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let oracle = LorentzOracle::new(&m).unwrap();
        let x = [0.7_f64, 0.1, -0.5];
        let (f, fp) = (x[0].cosh(), x[0].sinh());
        let gamma = oracle.christoffel(&x).unwrap();
        for i in 1..3 {
            assert!((gamma[0][(i, i)] - f * fp).abs() < 1e-9, "Gam^0_ii");
            assert!((gamma[i][(0, i)] - fp / f).abs() < 1e-9, "Gam^i_0i");
            assert!((gamma[i][(i, 0)] - fp / f).abs() < 1e-9);
        }
        assert!(gamma[0][(0, 0)].abs() < 1e-9);
        assert!(gamma[1][(2, 2)].abs() < 1e-9);
    }

    #[test]
    fn warped_tidal_matches_closed_form_on_comoving_velocity() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let oracle = LorentzOracle::new(&m).unwrap();
        let x = [0.6, 0.1, -0.2];
        let t = oracle.tidal(&x, &[1.0, 0.0, 0.0]).unwrap();
        // f = cosh: J'' - J = 0 along comoving observers, so the operator in
        // J'' + T J = 0 is -identity on spatial directions.
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b && a > 0 { -1.0 } else { 0.0 };
                assert!((t[(a, b)] - want).abs() < 1e-8, "T[{a}{b}] = {}", t[(a, b)]);
            }
        }
    }

    #[test]
    fn covariant_derivative_matches_hand_value() {
        let m = SpacetimeModel::warped_product(3, WarpProfile::Cosh).unwrap();
        let oracle = LorentzOracle::new(&m).unwrap();
        let x = [0.4_f64, 0.0, 0.0];
        let v = [1.0, 0.5, 0.0];
        // X = (0, x0, 0): dX^1/dx^0 = 1, so
        // (D_v X)^a = v^0 d_0 X^a + Gam^a_bc v^b X^c.
        let field = |x: &[f64]| vec![0.0, x[0], 0.0];
        let got = oracle.covariant_derivative(&x, &v, &field).unwrap();
        let (f, fp) = (x[0].cosh(), x[0].sinh());
        // a = 0: Gam^0_11 v^1 X^1 = f f' * 0.5 * x0.
        let want0 = f * fp * 0.5 * x[0];
        // a = 1: v^0 * 1 + Gam^1_01 v^0 X^1 + Gam^1_10 v^1 X^0(=0).
        let want1 = v[0] + (fp / f) * v[0] * x[0];
        assert!((got[0] - want0).abs() < 1e-8, "got0 = {}", got[0]);
        assert!((got[1] - want1).abs() < 1e-8, "got1 = {}", got[1]);
        assert!(got[2].abs() < 1e-8);
    }
}
