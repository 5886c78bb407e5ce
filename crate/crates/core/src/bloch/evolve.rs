//! Time evolution of the full density matrix,
//! `dσ/dt = −i[H(t), σ] + R(σ)`.

use nalgebra::Matrix3;
use num_complex::Complex64;

use super::{build_hamiltonian, DensityMatrix3, LambdaParams};
use crate::error::invalid;
use crate::integrator::{integrate, StepStats, Tolerances};
use crate::Result;

/// Time-dependent complex Rabi frequencies `(Ω_C(t), Ω_P(t))`.
pub trait FieldSource: Sync {
    fn fields(&self, t: f64) -> (Complex64, Complex64);

    /// Times where the fields are discontinuous or have kinks. The integrator
    /// restarts at each of them and records a sample there.
    fn events(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFields {
    pub coupling: Complex64,
    pub probe: Complex64,
}

impl FieldSource for ConstantFields {
    fn fields(&self, _t: f64) -> (Complex64, Complex64) {
        (self.coupling, self.probe)
    }
}

/// Relaxation superoperator.
///
/// Optical coherences decay at Γ, the Raman coherence at Γ_R, and the excited
/// population at γ with half of it returned to each ground sublevel.
pub fn relaxation(rho: &Matrix3<Complex64>, p: &LambdaParams) -> Matrix3<Complex64> {
    let mut r = Matrix3::zeros();
    let see = rho[(0, 0)];
    r[(0, 0)] = -see * p.gamma_pol;
    r[(1, 1)] = see * (0.5 * p.gamma_pol);
    r[(2, 2)] = see * (0.5 * p.gamma_pol);
    for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 0)] {
        r[(i, j)] = -rho[(i, j)] * p.gamma_opt;
    }
    r[(1, 2)] = -rho[(1, 2)] * p.gamma_raman;
    r[(2, 1)] = -rho[(2, 1)] * p.gamma_raman;
    r
}

fn rhs(rho: &Matrix3<Complex64>, h: &Matrix3<Complex64>, p: &LambdaParams) -> Matrix3<Complex64> {
    let comm = h * rho - rho * h;
    comm * Complex64::new(0.0, -1.0) + relaxation(rho, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Every accepted step plus every event time.
    AllSteps,
    /// Only the event times and the end of the span.
    EventsOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub tolerances: Tolerances,
    pub sampling: Sampling,
}

impl EvolveOptions {
    pub fn new(dt_max: f64) -> Self {
        Self {
            tolerances: Tolerances::new(dt_max),
            sampling: Sampling::AllSteps,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix3>,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, &DensityMatrix3)> {
        self.times.last().copied().zip(self.states.last())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrates the density matrix over `t_span` with the default tolerances
/// (rtol 1e−9, atol 1e−12) and records every accepted step.
pub fn evolve_density_matrix(
    rho0: &DensityMatrix3,
    fields: &impl FieldSource,
    p: &LambdaParams,
    t_span: [f64; 2],
    dt_max: f64,
) -> Result<Trajectory> {
    evolve_with(rho0, fields, p, t_span, &EvolveOptions::new(dt_max)).map(|(traj, _)| traj)
}

pub fn evolve_with(
    rho0: &DensityMatrix3,
    fields: &impl FieldSource,
    p: &LambdaParams,
    t_span: [f64; 2],
    opts: &EvolveOptions,
) -> Result<(Trajectory, StepStats)> {
    p.validate_for_evolution()?;
    let [t0, t1] = t_span;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return invalid(format!("t_span must be ordered and finite (got [{t0}, {t1}])"));
    }
    if !(opts.tolerances.dt_max > 0.0) {
        return invalid("dt_max must be > 0");
    }
    if !rho0.invariants().holds() {
        return invalid(format!(
            "initial state is not a density matrix: {:?}",
            rho0.invariants()
        ));
    }

    let mut cuts: Vec<f64> = fields
        .events()
        .into_iter()
        .filter(|&e| e > t0 && e < t1)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(t1);

    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![*rho0],
    };
    let mut stats = StepStats::default();
    let mut y = *rho0.matrix();
    let mut start = t0;
    let mut h = None;
    for end in cuts {
        // evaluate the fields strictly inside the segment so that
        // discontinuities at its edges are seen from the correct side
        let nudge = 1e-9 * (end - start);
        let f = |t: f64, rho: &Matrix3<Complex64>| {
            let (oc, op) = fields.fields(t.clamp(start + nudge, end - nudge));
            let ham = build_hamiltonian(oc, op, p.detuning_probe, p.detuning_coupling);
            rhs(rho, &ham, p)
        };
        let record_all = opts.sampling == Sampling::AllSteps;
        let (y_end, h_end, seg) = integrate(f, start, end, y, &opts.tolerances, h, |t, rho| {
            if record_all {
                traj.times.push(t);
                traj.states.push(DensityMatrix3::from_matrix_unchecked(*rho));
            }
        })?;
        if !record_all && end > start {
            traj.times.push(end);
            traj.states.push(DensityMatrix3::from_matrix_unchecked(y_end));
        }
        stats.accepted += seg.accepted;
        stats.rejected += seg.rejected;
        stats.evaluations += seg.evaluations;
        y = y_end;
        h = Some(h_end);
        start = end;
    }
    Ok((traj, stats))
}
