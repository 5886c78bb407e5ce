//! Three-level Λ system: parameters, density matrices, closed-form steady
//! states and the first-order retrieval calculation.
//!
//! Hamiltonian convention (rotating frame, ℏ = 1, basis `{|e⟩, |−1⟩, |+1⟩}`):
//!
//! ```text
//!     ⎛ 0    Ω_C   Ω_P ⎞
//! H = ⎜ Ω_C* Δ_C   0   ⎟
//!     ⎝ Ω_P* 0     Δ_P ⎠
//! ```
//!
//! Positive detunings mean the laser is above the transition frequency. With
//! this sign choice the steady-state Raman coherence `σ_{+1,−1}` takes exactly
//! the form `−Ω_C Ω_P* / ((Γ_R + iδ_R)(Γ + iΔ_P) + |Ω_C|²)`.

mod evolve;
pub mod weak_probe;

pub use evolve::{
    evolve_density_matrix, evolve_with, relaxation, ConstantFields, EvolveOptions, FieldSource, Sampling,
    Trajectory,
};

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::invalid;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Rates, detunings and Rabi frequencies of the Λ system, all in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaParams {
    /// Optical coherence decay rate Γ.
    pub gamma_opt: f64,
    /// Raman (ground-state) coherence decay rate Γ_R.
    pub gamma_raman: f64,
    /// Excited-state population decay rate γ.
    pub gamma_pol: f64,
    /// Storage coupling Ω_C on `|−1⟩ ↔ |e⟩`.
    pub rabi_coupling: Complex64,
    /// Readout coupling Ω_{C2}.
    pub rabi_coupling_read: Complex64,
    /// Probe Ω_P on `|+1⟩ ↔ |e⟩`.
    pub rabi_probe: Complex64,
    pub detuning_probe: f64,
    pub detuning_coupling: f64,
}

impl LambdaParams {
    /// Decay rates only; fields and detunings are zero.
    pub fn with_rates(gamma_opt: f64, gamma_raman: f64, gamma_pol: f64) -> Self {
        Self {
            gamma_opt,
            gamma_raman,
            gamma_pol,
            rabi_coupling: Complex64::new(0.0, 0.0),
            rabi_coupling_read: Complex64::new(0.0, 0.0),
            rabi_probe: Complex64::new(0.0, 0.0),
            detuning_probe: 0.0,
            detuning_coupling: 0.0,
        }
    }

    /// Sets both optical detunings to `delta` (Raman resonance).
    pub fn at_detuning(mut self, delta: f64) -> Self {
        self.detuning_probe = delta;
        self.detuning_coupling = delta;
        self
    }

    /// Raman detuning δ_R = Δ_P − Δ_C.
    pub fn raman_detuning(&self) -> f64 {
        self.detuning_probe - self.detuning_coupling
    }

    /// Both optical detunings shifted by the same amount (a co-propagating
    /// Doppler shift). δ_R is unchanged.
    pub fn doppler_shifted(&self, shift: f64) -> Self {
        Self {
            detuning_probe: self.detuning_probe + shift,
            detuning_coupling: self.detuning_coupling + shift,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma_opt,
            self.gamma_raman,
            self.gamma_pol,
            self.detuning_probe,
            self.detuning_coupling,
        ]
        .iter()
        .all(|x| x.is_finite())
            && [self.rabi_coupling, self.rabi_coupling_read, self.rabi_probe]
                .iter()
                .all(|z| z.is_finite());
        if !finite {
            return invalid("non-finite Λ-system parameter");
        }
        if self.gamma_opt <= 0.0 {
            return invalid(format!("gamma_opt must be > 0 (got {})", self.gamma_opt));
        }
        if self.gamma_raman < 0.0 {
            return invalid(format!("gamma_raman must be >= 0 (got {})", self.gamma_raman));
        }
        if self.gamma_pol <= 0.0 {
            return invalid(format!("gamma_pol must be > 0 (got {})", self.gamma_pol));
        }
        Ok(())
    }

    /// Extra condition for time evolution: the relaxation model is completely
    /// positive only if Γ ≥ γ/2 + Γ_R/4.
    pub fn validate_for_evolution(&self) -> Result<()> {
        self.validate()?;
        let floor = 0.5 * self.gamma_pol + 0.25 * self.gamma_raman;
        if self.gamma_opt < floor * (1.0 - 1e-12) {
            return invalid(format!(
                "gamma_opt = {:e} is below gamma_pol/2 + gamma_raman/4 = {:e}; relaxation would not preserve positivity",
                self.gamma_opt, floor
            ));
        }
        Ok(())
    }
}

/// Index into the `{|e⟩, |−1⟩, |+1⟩}` basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Excited = 0,
    Minus = 1,
    Plus = 2,
}

impl Level {
    pub const fn index(self) -> usize {
        self as usize
    }
}

/// Violations of the density-matrix invariants, as measured.
#[derive(Debug, Clone, Copy)]
pub struct InvariantReport {
    pub hermiticity_error: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl InvariantReport {
    pub const HERMITICITY_TOL: f64 = 1e-12;
    pub const TRACE_TOL: f64 = 1e-9;
    pub const EIGEN_TOL: f64 = 1e-9;

    pub fn holds(&self) -> bool {
        self.hermiticity_error <= Self::HERMITICITY_TOL
            && self.trace_error <= Self::TRACE_TOL
            && self.min_eigenvalue >= -Self::EIGEN_TOL
    }
}

/// 3×3 density matrix in the `{|e⟩, |−1⟩, |+1⟩}` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix3(Matrix3<Complex64>);

impl DensityMatrix3 {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix3<Complex64>) -> Result<Self> {
        let rho = Self(m);
        let report = rho.invariants();
        if !report.holds() {
            return invalid(format!("not a density matrix: {report:?}"));
        }
        Ok(rho)
    }

    /// Wraps a matrix without checking it; evolution output uses this.
    pub fn from_matrix_unchecked(m: Matrix3<Complex64>) -> Self {
        Self(m)
    }

    pub fn pure(level: Level) -> Self {
        let mut m = Matrix3::zeros();
        m[(level.index(), level.index())] = Complex64::new(1.0, 0.0);
        Self(m)
    }

    /// Storage-end state: all population in `|+1⟩` plus a Raman coherence
    /// `σ_{+1,−1}`. Only the coherence is first order; this is not a valid
    /// density matrix unless the coherence vanishes.
    pub fn stored(sigma_plus_minus: Complex64) -> Self {
        let mut m = Matrix3::zeros();
        m[(2, 2)] = Complex64::new(1.0, 0.0);
        m[(2, 1)] = sigma_plus_minus;
        m[(1, 2)] = sigma_plus_minus.conj();
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<Complex64> {
        &self.0
    }

    pub fn get(&self, row: Level, col: Level) -> Complex64 {
        self.0[(row.index(), col.index())]
    }

    pub fn population(&self, level: Level) -> f64 {
        self.get(level, level).re
    }

    /// σ_{+1,−1}
    pub fn raman_coherence(&self) -> Complex64 {
        self.get(Level::Plus, Level::Minus)
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn invariants(&self) -> InvariantReport {
        let m = &self.0;
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let hermitian_part = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let min_eig = hermitian_part
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        InvariantReport {
            hermiticity_error: herm,
            trace_error: (self.trace() - Complex64::new(1.0, 0.0)).norm(),
            min_eigenvalue: min_eig,
        }
    }
}

/// Which frame a Raman coherence value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// σ̃ = σ·exp(iδ_R t)
    Rotating,
    Lab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamanCoherence {
    pub value: Complex64,
    pub frame: Frame,
}

impl RamanCoherence {
    /// Largest coherence magnitude a unit-trace two-level block allows.
    pub const BOUND: f64 = 0.5;

    /// The closed-form value is perturbative and may leave the physical
    /// region when |Ω_P| is not small compared with |Ω_C|.
    pub fn within_bound(&self) -> bool {
        self.value.norm() <= Self::BOUND
    }

    /// Converts between frames at time `t` for Raman detuning `delta_r`.
    pub fn to_frame(self, frame: Frame, t: f64, delta_r: f64) -> Self {
        let value = match (self.frame, frame) {
            (Frame::Rotating, Frame::Lab) => self.value * Complex64::from_polar(1.0, -delta_r * t),
            (Frame::Lab, Frame::Rotating) => self.value * Complex64::from_polar(1.0, delta_r * t),
            _ => self.value,
        };
        Self { value, frame }
    }
}

/// Steady-state Raman coherence σ̃_{+1,−1} with all population in `|+1⟩`.
pub fn steady_state_raman_coherence(p: &LambdaParams) -> Result<RamanCoherence> {
    p.validate()?;
    let denom = Complex64::new(p.gamma_raman, p.raman_detuning())
        * Complex64::new(p.gamma_opt, p.detuning_probe)
        + p.rabi_coupling.norm_sqr();
    // the working unit system is rad/s, where physical denominators are ≫ 1
    if denom.norm() < 1e-30 {
        return Err(Error::DegenerateDenominator(denom.norm()));
    }
    Ok(RamanCoherence {
        value: -p.rabi_coupling * p.rabi_probe.conj() / denom,
        frame: Frame::Rotating,
    })
}

/// φ_EIT = arctan(Γ_R Δ / (|Ω_C|² + Γ_R Γ)) from raw quantities.
///
/// Returns `None` when the denominator vanishes.
pub fn eit_phase(gamma_raman: f64, gamma_opt: f64, coupling_abs: f64, detuning: f64) -> Option<f64> {
    let den = coupling_abs * coupling_abs + gamma_raman * gamma_opt;
    if den <= 0.0 {
        return None;
    }
    Some((gamma_raman * detuning / den).atan())
}

/// Extra phase of the stored coherence at Raman resonance; carries the sign of Δ_P.
///
/// δ_R is ignored. The stored coherence's argument relative to Δ_P = 0 is
/// `−eit_phase_shift`.
pub fn eit_phase_shift(p: &LambdaParams) -> Result<f64> {
    p.validate()?;
    eit_phase(
        p.gamma_raman,
        p.gamma_opt,
        p.rabi_coupling.norm(),
        p.detuning_probe,
    )
    .ok_or_else(|| Error::InvalidParameter("|Ω_C|² + Γ_R Γ must be > 0".into()))
}

/// Rotating-frame Λ Hamiltonian divided by ℏ (rad/s).
pub fn build_hamiltonian(
    omega_c: Complex64,
    omega_p: Complex64,
    delta_p: f64,
    delta_c: f64,
) -> Matrix3<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    Matrix3::new(
        z,
        omega_c,
        omega_p,
        omega_c.conj(),
        Complex64::new(delta_c, 0.0),
        z,
        omega_p.conj(),
        z,
        Complex64::new(delta_p, 0.0),
    )
}

/// Output of [`retrieval_first_order`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    /// Retrieved amplitude Ω_r(t), proportionality constant 1.
    pub amplitude: Complex64,
    /// arg Ω_{C2} − arg σ_{+1,−1}, wrapped to (−π, π].
    pub relative_phase: f64,
}

/// First-order readout of a stored Raman coherence by the coupling `omega_c2`.
///
/// Starting from the storage-end state, `dσ_{+1,e}/dt = iΩ_{C2}* σ_{+1,−1}`,
/// so `σ_{+1,e}(t) = iΩ_{C2}* σ t` and the emitted field `Ω_r ∝ iσ_{+1,e}*`
/// equals `Ω_{C2} σ* t`. Valid while `|Ω_{C2}| t ≲ 1`.
pub fn retrieval_first_order(sigma_raman: Complex64, omega_c2: Complex64, t: f64) -> Retrieval {
    let sigma_e = I * omega_c2.conj() * sigma_raman * t;
    let amplitude = I * sigma_e.conj();
    Retrieval {
        amplitude,
        relative_phase: crate::wrap_phase(omega_c2.arg() - sigma_raman.arg()),
    }
}
