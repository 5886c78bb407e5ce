//! Adaptive Dormand–Prince 5(4) integrator with embedded error control.
//!
//! The state type only needs in-place `y += a·x` and a weighted error norm, so
//! complex matrices can be integrated without flattening them.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::{Error, Result};

/// Vector-space operations needed by the integrator.
pub trait OdeState: Clone {
    /// `self += a * other`
    fn add_scaled(&mut self, a: f64, other: &Self);

    /// RMS of `err_i / (atol + rtol * max(|y0_i|, |y1_i|))` over all components.
    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64;
}

impl OdeState for Matrix3<Complex64> {
    fn add_scaled(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other.iter()) {
            *s += *o * a;
        }
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        let mut acc = 0.0;
        for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
            // real and imaginary parts are independent components
            let sr = atol + rtol * a.re.abs().max(b.re.abs());
            let si = atol + rtol * a.im.abs().max(b.im.abs());
            acc += (e.re / sr).powi(2) + (e.im / si).powi(2);
        }
        (acc / 18.0).sqrt()
    }
}

impl OdeState for Vec<f64> {
    fn add_scaled(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += a * o;
        }
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        let n = err.len().max(1) as f64;
        let acc: f64 = err
            .iter()
            .zip(y0)
            .zip(y1)
            .map(|((e, a), b)| (e / (atol + rtol * a.abs().max(b.abs()))).powi(2))
            .sum();
        (acc / n).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step the controller may take.
    pub dt_max: f64,
    /// A proposed step below `dt_min_fraction * dt_max` is an error.
    pub dt_min_fraction: f64,
    pub max_steps: usize,
}

impl Tolerances {
    pub fn new(dt_max: f64) -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            dt_max,
            dt_min_fraction: 1e-6,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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

// 5th-order minus embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

fn combo<S: OdeState>(y: &S, h: f64, terms: &[(f64, &S)]) -> S {
    let mut out = y.clone();
    for (c, k) in terms {
        if *c != 0.0 {
            out.add_scaled(h * c, k);
        }
    }
    out
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1`.
///
/// `observer` is called with every accepted `(t, y)`, including the final
/// point, but not the initial one. `h_start` seeds the step controller; the
/// last accepted step size is returned so that consecutive segments can carry
/// it forward.
pub fn integrate<S, F, O>(
    mut rhs: F,
    t0: f64,
    t1: f64,
    y0: S,
    tol: &Tolerances,
    h_start: Option<f64>,
    mut observer: O,
) -> Result<(S, f64, StepStats)>
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
    O: FnMut(f64, &S),
{
    let mut stats = StepStats::default();
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok((y0, h_start.unwrap_or(tol.dt_max), stats));
    }
    let h_min = tol.dt_min_fraction * tol.dt_max;
    let mut h = h_start.unwrap_or(tol.dt_max * 1e-3).min(tol.dt_max).max(h_min);
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    stats.evaluations += 1;
    let mut reject_streak = false;

    while t < t1 {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(Error::StepSizeUnderflow { t, dt: h });
        }
        // the final step may be shorter than h_min; that is not underflow
        let last = t + h >= t1 - 1e-15 * t1.abs().max(span);
        let step = if last { t1 - t } else { h };

        let k2 = rhs(t + C2 * step, &combo(&y, step, &[(A21, &k1)]));
        let k3 = rhs(t + C3 * step, &combo(&y, step, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(
            t + C4 * step,
            &combo(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = rhs(
            t + C5 * step,
            &combo(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = rhs(
            t + step,
            &combo(
                &y,
                step,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = combo(
            &y,
            step,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = rhs(t + step, &y_new);
        stats.evaluations += 6;

        // y_new − y_embedded = h·Σ eᵢ kᵢ
        let mut err = k1.clone();
        err.add_scaled(-1.0, &k1);
        for (c, k) in [(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)] {
            err.add_scaled(step * c, k);
        }
        let e = S::error_norm(&err, &y, &y_new, tol.rtol, tol.atol);

        if e <= 1.0 {
            t = if last { t1 } else { t + step };
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
            observer(t, &y);
            let fac = if e == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * e.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            let fac = if reject_streak { fac.min(1.0) } else { fac };
            reject_streak = false;
            if !last {
                h = (step * fac).min(tol.dt_max);
            }
        } else {
            stats.rejected += 1;
            reject_streak = true;
            let fac = if e.is_finite() {
                (SAFETY * e.powf(-0.2)).clamp(FAC_MIN, 1.0)
            } else {
                FAC_MIN
            };
            h = step * fac;
            if h < h_min && step >= h_min {
                return Err(Error::StepSizeUnderflow { t, dt: h });
            }
        }
    }
    Ok((y, h, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let tol = Tolerances::new(0.5);
        let (y, _, stats) = integrate(
            |_, y: &Vec<f64>| vec![-y[0]],
            0.0,
            5.0,
            vec![1.0],
            &tol,
            None,
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn harmonic_oscillator_conserves_energy_to_tolerance() {
        let tol = Tolerances::new(0.1);
        let (y, _, _) = integrate(
            |_, y: &Vec<f64>| vec![y[1], -y[0]],
            0.0,
            20.0,
            vec![1.0, 0.0],
            &tol,
            None,
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - 20.0f64.cos()).abs() < 1e-7);
        assert!((y[1] + 20.0f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn observer_sees_final_point() {
        let tol = Tolerances::new(0.3);
        let mut last = 0.0;
        integrate(
            |_, y: &Vec<f64>| vec![y[0]],
            0.0,
            1.0,
            vec![1.0],
            &tol,
            None,
            |t, _| last = t,
        )
        .unwrap();
        assert_eq!(last, 1.0);
    }

    #[test]
    fn stiff_blowup_is_reported_as_underflow() {
        // forcing term with a discontinuity the controller cannot resolve
        let tol = Tolerances {
            dt_min_fraction: 1e-3,
            ..Tolerances::new(1.0)
        };
        let res = integrate(
            |t, _: &Vec<f64>| vec![if t > 0.5 { 1.0 / (t - 0.5) } else { 0.0 }],
            0.0,
            1.0,
            vec![0.0],
            &tol,
            None,
            |_, _| {},
        );
        assert!(matches!(res, Err(Error::StepSizeUnderflow { .. })));
    }
}
