//! Explicit Runge-Kutta integration with continuous output.
//!
//! The workhorse is the Dormand-Prince 5(4) pair with the standard
//! fourth-order interpolant, so every accepted step carries a polynomial
//! that can be sampled anywhere inside it:
//!
//! ```text
//! y(t0 + s h) = r1 + s (r2 + (1-s)(r3 + s (r4 + (1-s) r5)))
//! ```
//!
//! Step control is the usual mixed-tolerance RMS error with PI-free
//! amplification clamped to [0.2, 5]. Events are scalar functions of
//! (t, y); integration stops at the first falling zero crossing, located by
//! bisection on the dense output. A fixed-step classical RK4 driver with
//! cubic Hermite interpolation backs up the adaptive method where a rigidly
//! predictable cost matters more than error control.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
    #[error("step size {h:.3e} underflowed at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget {max_steps} exhausted at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("bad integrator input: {0}")]
    BadInput(String),
}

pub type RhsFn<'a> = &'a mut dyn FnMut(f64, &[f64], &mut [f64]) -> Result<(), String>;
pub type EventFn<'a> = &'a dyn Fn(f64, &[f64]) -> f64;

#[derive(Debug, Clone)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

/// Continuous representation of one accepted step.
#[derive(Debug, Clone)]
enum Interpolant {
    /// Dormand-Prince rcont1..rcont5 arrays.
    Dopri([Vec<f64>; 5]),
    /// Cubic Hermite data (y0, y1, h f0, h f1).
    Hermite {
        y0: Vec<f64>,
        y1: Vec<f64>,
        hf0: Vec<f64>,
        hf1: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub t1: f64,
    /// Width the interpolant was built for; t1 may have been pulled in by
    /// an event but the polynomial remains valid on the original step.
    h: f64,
    interp: Interpolant,
}

impl DenseSegment {
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        match &self.interp {
            Interpolant::Dopri([r1, r2, r3, r4, r5]) => {
                let s1 = 1.0 - s;
                for i in 0..out.len() {
                    out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
                }
            }
            Interpolant::Hermite { y0, y1, hf0, hf1 } => {
                let s2 = s * s;
                let s3 = s2 * s;
                let (h00, h10, h01, h11) = (
                    2.0 * s3 - 3.0 * s2 + 1.0,
                    s3 - 2.0 * s2 + s,
                    -2.0 * s3 + 3.0 * s2,
                    s3 - s2,
                );
                for i in 0..out.len() {
                    out[i] = h00 * y0[i] + h10 * hf0[i] + h01 * y1[i] + h11 * hf1[i];
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub t_start: f64,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub segments: Vec<DenseSegment>,
    pub n_steps: usize,
    pub n_rejected: usize,
    pub n_rhs: usize,
    /// Index of the event that terminated the run, if any.
    pub stopped_by_event: Option<usize>,
}

impl Solution {
    pub fn dim(&self) -> usize {
        self.y_end.len()
    }

    /// Interpolated state at t, which must lie in [t_start, t_end] up to a
    /// relative slack of 1e-9.
    pub fn sample_into(&self, t: f64, out: &mut [f64]) {
        let span = (self.t_end - self.t_start).abs().max(1.0);
        assert!(
            t >= self.t_start - 1e-9 * span && t <= self.t_end + 1e-9 * span,
            "sample time {t} outside [{}, {}]",
            self.t_start,
            self.t_end
        );
        let t = t.clamp(self.t_start, self.t_end);
        // First segment whose right end reaches t.
        let idx = self
            .segments
            .partition_point(|seg| seg.t1 < t)
            .min(self.segments.len() - 1);
        self.segments[idx].eval_into(t, out);
    }

    pub fn sample(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(t, &mut out);
        out
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// Error weights b - bhat.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Interpolant weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrate y' = f(t, y) over t_span with adaptive Dormand-Prince 5(4),
/// keeping dense output for the whole run. Stops early at the first event
/// whose value crosses from positive to non-positive.
pub fn dopri5(
    rhs: RhsFn,
    t_span: (f64, f64),
    y0: &[f64],
    opts: &Dopri5Options,
    events: &[EventFn],
) -> Result<Solution, OdeError> {
    let (t_start, t_final) = t_span;
    if !(t_final > t_start) {
        return Err(OdeError::BadInput(format!(
            "t span must be increasing, got [{t_start}, {t_final}]"
        )));
    }
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(OdeError::BadInput("tolerances must be positive".into()));
    }
    let n = y0.len();
    let mut t = t_start;
    let mut y = y0.to_vec();
    let mut n_rhs = 0usize;

    let mut k1 = vec![0.0; n];
    let mut call = |t: f64, y: &[f64], out: &mut [f64], n_rhs: &mut usize| {
        *n_rhs += 1;
        rhs(t, y, out).map_err(|message| OdeError::Rhs { t, message })
    };
    call(t, &y, &mut k1, &mut n_rhs)?;

    let mut event_values: Vec<f64> = events.iter().map(|e| e(t, &y)).collect();

    let mut h = match opts.h_init {
        Some(h) => h,
        None => initial_step(&mut call, t, &y, &k1, t_final, opts, &mut n_rhs)?,
    }
    .min(opts.h_max)
    .min(t_final - t_start);

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut y_stage = vec![0.0; n];
    let mut y_next = vec![0.0; n];

    let mut segments = Vec::new();
    let mut n_steps = 0usize;
    let mut n_rejected = 0usize;
    let mut first_step = true;

    loop {
        if n_steps + n_rejected >= opts.max_steps {
            return Err(OdeError::MaxSteps {
                t,
                max_steps: opts.max_steps,
            });
        }
        let h_left = t_final - t;
        if h_left <= 1e-14 * t.abs().max(1.0) {
            break;
        }
        h = h.min(h_left).min(opts.h_max);
        if h <= f64::EPSILON * t.abs().max(1.0) * 16.0 {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }

        for i in 0..n {
            y_stage[i] = y[i] + h * A21 * k1[i];
        }
        call(t + C2 * h, &y_stage, &mut k2, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        call(t + C3 * h, &y_stage, &mut k3, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        call(t + C4 * h, &y_stage, &mut k4, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        call(t + C5 * h, &y_stage, &mut k5, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        call(t + h, &y_stage, &mut k6, &mut n_rhs)?;
        for i in 0..n {
            y_next[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        call(t + h, &y_next, &mut k7, &mut n_rhs)?;

        // RMS of the embedded error against the mixed tolerance.
        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                    + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_next[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if err > 1.0 {
            n_rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            first_step = false;
            continue;
        }

        // Accepted: build the interpolant.
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let dy = y_next[i] - y[i];
            r1[i] = y[i];
            r2[i] = dy;
            r3[i] = h * k1[i] - dy;
            r4[i] = dy - h * k7[i] - r3[i];
            r5[i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                    + D7 * k7[i]);
        }
        let mut segment = DenseSegment {
            t0: t,
            t1: t + h,
            h,
            interp: Interpolant::Dopri([r1, r2, r3, r4, r5]),
        };

        // Event sweep over the accepted step.
        let mut hit: Option<(usize, f64)> = None;
        for (j, event) in events.iter().enumerate() {
            let g1 = event(t + h, &y_next);
            if event_values[j] > 0.0 && g1 <= 0.0 {
                let t_star = bisect_event(event, &segment, t, t + h);
                if hit.map(|(_, tb)| t_star < tb).unwrap_or(true) {
                    hit = Some((j, t_star));
                }
            }
            event_values[j] = g1;
        }

        n_steps += 1;
        if let Some((j, t_star)) = hit {
            segment.t1 = t_star;
            let mut y_star = vec![0.0; n];
            segment.eval_into(t_star, &mut y_star);
            segments.push(segment);
            return Ok(Solution {
                t_start,
                t_end: t_star,
                y_end: y_star,
                segments,
                n_steps,
                n_rejected,
                n_rhs,
                stopped_by_event: Some(j),
            });
        }

        segments.push(segment);
        t += h;
        std::mem::swap(&mut y, &mut y_next);
        std::mem::swap(&mut k1, &mut k7); // FSAL

        let fac_max = if first_step { 10.0 } else { 5.0 };
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, fac_max);
        h *= fac;
        first_step = false;
    }

    Ok(Solution {
        t_start,
        t_end: t,
        y_end: y,
        segments,
        n_steps,
        n_rejected,
        n_rhs,
        stopped_by_event: None,
    })
}

/// Hairer's starting-step heuristic for order 5.
fn initial_step(
    call: &mut impl FnMut(f64, &[f64], &mut [f64], &mut usize) -> Result<(), OdeError>,
    t: f64,
    y: &[f64],
    f0: &[f64],
    t_final: f64,
    opts: &Dopri5Options,
    n_rhs: &mut usize,
) -> Result<f64, OdeError> {
    let n = y.len();
    let sc: Vec<f64> = y
        .iter()
        .map(|yi| opts.atol + opts.rtol * yi.abs())
        .collect();
    let d0 = rms_scaled(y, &sc);
    let d1 = rms_scaled(f0, &sc);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_final - t);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    call(t + h0, &y1, &mut f1, n_rhs)?;
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms_scaled(&diff, &sc) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(t_final - t))
}

fn rms_scaled(v: &[f64], sc: &[f64]) -> f64 {
    let s: f64 = v
        .iter()
        .zip(sc)
        .map(|(vi, sci)| (vi / sci) * (vi / sci))
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Locate the first zero of the event inside (t_lo, t_hi] on one segment,
/// assuming event(t_lo) > 0 >= event(t_hi).
fn bisect_event(event: EventFn, segment: &DenseSegment, t_lo: f64, t_hi: f64) -> f64 {
    let mut lo = t_lo;
    let mut hi = t_hi;
    let mut y = vec![0.0; segment_dim(segment)];
    let tol = 1e-13 * (t_hi.abs().max(1.0));
    for _ in 0..120 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        segment.eval_into(mid, &mut y);
        if event(mid, &y) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn segment_dim(segment: &DenseSegment) -> usize {
    match &segment.interp {
        Interpolant::Dopri([r1, ..]) => r1.len(),
        Interpolant::Hermite { y0, .. } => y0.len(),
    }
}

/// Fixed-step classical RK4 with cubic Hermite dense output; same event
/// semantics as [`dopri5`]. `n_steps` counts equal subdivisions of t_span.
pub fn rk4(
    rhs: RhsFn,
    t_span: (f64, f64),
    y0: &[f64],
    n_steps: usize,
    events: &[EventFn],
) -> Result<Solution, OdeError> {
    let (t_start, t_final) = t_span;
    if !(t_final > t_start) || n_steps == 0 {
        return Err(OdeError::BadInput(format!(
            "need an increasing span and at least one step, got [{t_start}, {t_final}] x {n_steps}"
        )));
    }
    let n = y0.len();
    let h = (t_final - t_start) / n_steps as f64;
    let mut t = t_start;
    let mut y = y0.to_vec();
    let mut n_rhs = 0usize;
    let mut call = |t: f64, y: &[f64], out: &mut [f64], n_rhs: &mut usize| {
        *n_rhs += 1;
        rhs(t, y, out).map_err(|message| OdeError::Rhs { t, message })
    };

    let mut f0 = vec![0.0; n];
    call(t, &y, &mut f0, &mut n_rhs)?;
    let mut event_values: Vec<f64> = events.iter().map(|e| e(t, &y)).collect();

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut y_stage = vec![0.0; n];
    let mut segments = Vec::new();

    for step in 0..n_steps {
        let t1 = if step + 1 == n_steps {
            t_final
        } else {
            t_start + (step + 1) as f64 * h
        };
        let h = t1 - t;
        for i in 0..n {
            y_stage[i] = y[i] + 0.5 * h * f0[i];
        }
        call(t + 0.5 * h, &y_stage, &mut k2, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i] + 0.5 * h * k2[i];
        }
        call(t + 0.5 * h, &y_stage, &mut k3, &mut n_rhs)?;
        for i in 0..n {
            y_stage[i] = y[i] + h * k3[i];
        }
        call(t + h, &y_stage, &mut k4, &mut n_rhs)?;
        let y1: Vec<f64> = (0..n)
            .map(|i| y[i] + h / 6.0 * (f0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let mut f1 = vec![0.0; n];
        call(t1, &y1, &mut f1, &mut n_rhs)?;

        let mut segment = DenseSegment {
            t0: t,
            t1,
            h,
            interp: Interpolant::Hermite {
                y0: y.clone(),
                y1: y1.clone(),
                hf0: f0.iter().map(|f| h * f).collect(),
                hf1: f1.iter().map(|f| h * f).collect(),
            },
        };

        let mut hit: Option<(usize, f64)> = None;
        for (j, event) in events.iter().enumerate() {
            let g1 = event(t1, &y1);
            if event_values[j] > 0.0 && g1 <= 0.0 {
                let t_star = bisect_event(event, &segment, t, t1);
                if hit.map(|(_, tb)| t_star < tb).unwrap_or(true) {
                    hit = Some((j, t_star));
                }
            }
            event_values[j] = g1;
        }
        if let Some((j, t_star)) = hit {
            segment.t1 = t_star;
            let mut y_star = vec![0.0; n];
            segment.eval_into(t_star, &mut y_star);
            segments.push(segment);
            return Ok(Solution {
                t_start,
                t_end: t_star,
                y_end: y_star,
                segments,
                n_steps: step + 1,
                n_rejected: 0,
                n_rhs,
                stopped_by_event: Some(j),
            });
        }

        segments.push(segment);
        t = t1;
        y = y1;
        std::mem::swap(&mut f0, &mut f1);
    }

    Ok(Solution {
        t_start,
        t_end: t,
        y_end: y,
        segments,
        n_steps,
        n_rejected: 0,
        n_rhs,
        stopped_by_event: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), String> {
        dy[0] = -y[0];
        Ok(())
    }

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), String> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn decay_matches_exponential() {
        let opts = Dopri5Options {
            rtol: 1e-11,
            atol: 1e-13,
            ..Dopri5Options::default()
        };
        let sol = dopri5(&mut decay, (0.0, 5.0), &[1.0], &opts, &[]).unwrap();
        assert!((sol.y_end[0] - (-5.0_f64).exp()).abs() < 1e-11);
        assert!(sol.n_steps > 5);
    }

    #[test]
    fn dense_output_tracks_oscillator_everywhere() {
        let opts = Dopri5Options {
            rtol: 1e-10,
            atol: 1e-12,
            ..Dopri5Options::default()
        };
        let sol = dopri5(&mut oscillator, (0.0, 12.0), &[0.0, 1.0], &opts, &[]).unwrap();
        assert!((sol.y_end[0] - 12.0_f64.sin()).abs() < 1e-9);
        for k in 0..=480 {
            let t = 12.0 * k as f64 / 480.0;
            let y = sol.sample(t);
            assert!(
                (y[0] - t.sin()).abs() < 5e-9 && (y[1] - t.cos()).abs() < 5e-9,
                "dense output off at t = {t}: {y:?}"
            );
        }
    }

    #[test]
    fn tighter_tolerance_means_smaller_error() {
        let run = |rtol: f64| {
            let opts = Dopri5Options {
                rtol,
                atol: rtol * 1e-2,
                ..Dopri5Options::default()
            };
            let sol = dopri5(&mut oscillator, (0.0, 20.0), &[0.0, 1.0], &opts, &[]).unwrap();
            (sol.y_end[0] - 20.0_f64.sin()).abs()
        };
        let coarse = run(1e-6);
        let fine = run(1e-11);
        assert!(fine < coarse / 100.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn event_stops_at_crossing() {
        let mut rhs = |_t: f64, _y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            dy[0] = -1.0;
            Ok(())
        };
        let event = |_t: f64, y: &[f64]| y[0];
        let sol = dopri5(
            &mut rhs,
            (0.0, 10.0),
            &[1.0],
            &Dopri5Options::default(),
            &[&event],
        )
        .unwrap();
        assert_eq!(sol.stopped_by_event, Some(0));
        assert!((sol.t_end - 1.0).abs() < 1e-10, "t_end = {}", sol.t_end);
        assert!(sol.y_end[0].abs() < 1e-10);
    }

    #[test]
    fn earliest_of_two_events_wins() {
        let mut rhs = |_t: f64, _y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            dy[0] = 1.0;
            Ok(())
        };
        let late = |_t: f64, y: &[f64]| 3.0 - y[0];
        let early = |_t: f64, y: &[f64]| 2.0 - y[0];
        let sol = dopri5(
            &mut rhs,
            (0.0, 10.0),
            &[0.0],
            &Dopri5Options::default(),
            &[&late, &early],
        )
        .unwrap();
        assert_eq!(sol.stopped_by_event, Some(1));
        assert!((sol.t_end - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rhs_failure_is_reported_with_time() {
        let mut rhs = |t: f64, _y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            if t > 1.0 {
                return Err("boom".into());
            }
            dy[0] = 1.0;
            Ok(())
        };
        let err = dopri5(
            &mut rhs,
            (0.0, 5.0),
            &[0.0],
            &Dopri5Options::default(),
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, OdeError::Rhs { .. }));
    }

    #[test]
    fn backward_span_is_rejected() {
        assert!(matches!(
            dopri5(&mut decay, (1.0, 0.0), &[1.0], &Dopri5Options::default(), &[]),
            Err(OdeError::BadInput(_))
        ));
    }

    #[test]
    fn rk4_error_decays_at_fourth_order() {
        let run = |steps: usize| {
            let sol = rk4(&mut oscillator, (0.0, 6.0), &[0.0, 1.0], steps, &[]).unwrap();
            (sol.y_end[0] - 6.0_f64.sin()).abs()
        };
        let coarse = run(200);
        let fine = run(400);
        let ratio = coarse / fine;
        assert!(
            (8.0..32.0).contains(&ratio),
            "expected ~16x shrink, got {ratio} ({coarse} -> {fine})"
        );
    }

    #[test]
    fn rk4_hermite_dense_output_is_accurate() {
        let sol = rk4(&mut oscillator, (0.0, 6.0), &[0.0, 1.0], 600, &[]).unwrap();
        for k in 0..=300 {
            let t = 6.0 * k as f64 / 300.0;
            let y = sol.sample(t);
            assert!((y[0] - t.sin()).abs() < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn rk4_event_matches_adaptive_result() {
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        // First zero of sin(t) after start: t = pi.
        let event = |_t: f64, y: &[f64]| y[0] + 0.5; // sin crosses -0.5 at 7pi/6
        let sol = rk4(&mut rhs, (1.0, 10.0), &[1.0_f64.sin(), 1.0_f64.cos()], 2000, &[&event])
            .unwrap();
        let want = 7.0 * std::f64::consts::PI / 6.0;
        assert!((sol.t_end - want).abs() < 1e-8, "t_end = {}", sol.t_end);
    }
}
