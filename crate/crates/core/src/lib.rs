//! Simulation and analysis of EIT light storage in a Doppler-broadened
//! three-level Λ system.
//!
//! All rates, detunings and Rabi frequencies are angular frequencies in rad/s.
//! Use [`angular`] to convert an ordinary frequency (the usual "X/2π" value in Hz).
//!
//! Level ordering everywhere is `{|e⟩, |−1⟩, |+1⟩}`: the coupling field drives
//! `|−1⟩ ↔ |e⟩`, the probe drives `|+1⟩ ↔ |e⟩`, and the atoms start in `|+1⟩`.

pub mod analysis;
pub mod bloch;
pub mod doppler;
mod error;
pub mod homodyne;
pub mod integrator;
pub mod protocol;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Converts an ordinary frequency in Hz to an angular frequency in rad/s.
pub fn angular(hz: f64) -> f64 {
    std::f64::consts::TAU * hz
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = phi.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Trapezoidal integral of `y` sampled at `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_is_half_open_at_minus_pi() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_phase(0.25), 0.25);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let t = [0.0, 0.5, 2.0];
        let y: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&t, &y) - 8.0).abs() < 1e-14);
    }
}
