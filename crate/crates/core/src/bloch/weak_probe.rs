//! First-order (weak-probe) dynamics of one velocity class.
//!
//! With all population in `|+1⟩` and the probe treated to first order, only
//! the optical coherence `x = σ_{e,+1}` and the Raman coherence
//! `y = σ_{−1,+1}` respond:
//!
//! ```text
//! dx/dt = (−Γ + iΔ_P) x − iΩ_C y − iΩ_P
//! dy/dt = −iΩ_C* x + (−Γ_R + iδ_R) y
//! ```
//!
//! For piecewise-constant coupling and a probe that is linear within each
//! step the solution is exact, so steps are limited only by how fast the
//! probe changes, not by Γ or the Doppler shifts.

use nalgebra::{Matrix2, Matrix4, Vector2};
use num_complex::Complex64;

use super::LambdaParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeakProbeState {
    /// σ_{e,+1}
    pub optical: Complex64,
    /// σ_{−1,+1}; the Raman coherence σ_{+1,−1} is its conjugate.
    pub raman: Complex64,
}

impl WeakProbeState {
    pub fn raman_coherence(&self) -> Complex64 {
        self.raman.conj()
    }
}

/// Generator `M` of the homogeneous part, `d(x, y)/dt = M (x, y) + (−iΩ_P, 0)`.
///
/// `shift` is a co-propagating Doppler shift: it enters the optical detuning
/// only, so δ_R is the unshifted value bit for bit. `raman_decay` overrides
/// Γ_R so that callers can apply a different rate in the dark.
pub fn generator(p: &LambdaParams, coupling: Complex64, raman_decay: f64, shift: f64) -> Matrix2<Complex64> {
    Matrix2::new(
        Complex64::new(-p.gamma_opt, p.detuning_probe + shift),
        -I * coupling,
        -I * coupling.conj(),
        Complex64::new(-raman_decay, p.raman_detuning()),
    )
}

/// Steady state under constant fields: `−M⁻¹ (−iΩ_P, 0)`.
pub fn steady_state(
    p: &LambdaParams,
    coupling: Complex64,
    probe: Complex64,
    shift: f64,
) -> Option<WeakProbeState> {
    let m = generator(p, coupling, p.gamma_raman, shift);
    let inv = m.try_inverse()?;
    let s = -(inv * Vector2::new(-I * probe, Complex64::new(0.0, 0.0)));
    Some(WeakProbeState {
        optical: s[0],
        raman: s[1],
    })
}

/// Exact one-step propagator for a fixed generator and step `dt`.
///
/// `next = E·state + g1·u0 + g2·(u1 − u0)` where `u = −iΩ_P` varies linearly
/// from `u0` to `u1` over the step.
#[derive(Debug, Clone, Copy)]
pub struct StepPropagator {
    e: Matrix2<Complex64>,
    g1: Vector2<Complex64>,
    g2: Vector2<Complex64>,
}

impl StepPropagator {
    pub fn new(m: &Matrix2<Complex64>, dt: f64) -> Self {
        // exp of [[M dt, e1, 0], [0, 0, 1], [0, 0, 0]] carries e^{M dt} and
        // the two source integrals (divided by dt) in its top rows
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let mdt = m * Complex64::new(dt, 0.0);
        #[rustfmt::skip]
        let aug = Matrix4::new(
            mdt[(0, 0)], mdt[(0, 1)], one, z,
            mdt[(1, 0)], mdt[(1, 1)], z, z,
            z, z, z, one,
            z, z, z, z,
        );
        let x = aug.exp();
        let dtc = Complex64::new(dt, 0.0);
        Self {
            e: Matrix2::new(x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]),
            g1: Vector2::new(x[(0, 2)], x[(1, 2)]) * dtc,
            g2: Vector2::new(x[(0, 3)], x[(1, 3)]) * dtc,
        }
    }

    /// Advances one step with the probe going linearly from `probe0` to `probe1`.
    #[inline]
    pub fn step(&self, s: WeakProbeState, probe0: Complex64, probe1: Complex64) -> WeakProbeState {
        let u0 = -I * probe0;
        let du = -I * (probe1 - probe0);
        let e = &self.e;
        WeakProbeState {
            optical: e[(0, 0)] * s.optical + e[(0, 1)] * s.raman + self.g1[0] * u0 + self.g2[0] * du,
            raman: e[(1, 0)] * s.optical + e[(1, 1)] * s.raman + self.g1[1] * u0 + self.g2[1] * du,
        }
    }
}
