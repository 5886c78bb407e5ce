//! Sliced propagation of a weak probe through the Doppler-broadened cell.
//!
//! Each slice holds one copy of every velocity class. Atoms obey the linear
//! weak-probe equations (exact per step for piecewise-constant coupling and
//! a probe that is linear within each step); the field obeys `dΩ_P/dz = −iκ⟨σ_{e,+1}⟩`,
//! stepped with Heun's method over the slices.

use std::collections::HashMap;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{CellConfig, StorageOptions, Window};
use crate::bloch::weak_probe::{generator, steady_state, StepPropagator, WeakProbeState};
use crate::bloch::{FieldSource, LambdaParams};
use crate::doppler::VelocityGrid;
use crate::error::invalid;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const CLASS_CHUNK: usize = 4;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Field at the cell entrance and exit on the simulation time grid.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub times: Vec<f64>,
    pub input: Vec<Complex64>,
    pub output: Vec<Complex64>,
    /// Coupling at the entrance, sampled on the grid.
    pub coupling: Vec<Complex64>,
    /// Input just after the start and just before the end of each step.
    pub input_steps: Vec<[Complex64; 2]>,
    /// Output just after the start and just before the end of each step.
    pub output_steps: Vec<[Complex64; 2]>,
}

/// Propagates arbitrary fields from `t = 0` to `t_end`, atoms starting in `|+1⟩`.
pub fn run_fields(
    fields: &impl FieldSource,
    t_end: f64,
    cell: &CellConfig,
    p: &LambdaParams,
    grid: &VelocityGrid,
    opts: &StorageOptions,
) -> Result<Propagation> {
    propagate(fields, t_end, None, cell, p, grid, opts)
}

/// `κL` such that the coupling-off, line-center intensity transmission of
/// `grid` is `exp(−αL)` for the sliced Heun scheme itself.
///
/// At line center the susceptibility of a symmetric grid is real, so each
/// slice multiplies the amplitude by `1 − b + b²/2` with `b = κL·χ0/N`.
fn kappa_length(cell: &CellConfig, p: &LambdaParams, grid: &VelocityGrid) -> Result<f64> {
    if cell.absorption_depth == 0.0 {
        return Ok(0.0);
    }
    let chi0: f64 = grid
        .classes()
        .iter()
        .map(|c| c.weight * (1.0 / Complex64::new(p.gamma_opt, -c.shift)).re)
        .sum();
    if !(chi0 > 0.0) {
        return invalid("cannot calibrate the absorption depth");
    }
    let n = cell.n_slices as f64;
    let r = (-cell.absorption_depth / (2.0 * n)).exp();
    if r <= 0.5 {
        return invalid(format!(
            "absorption depth {} needs more than {} slices",
            cell.absorption_depth, cell.n_slices
        ));
    }
    let b = 1.0 - (2.0 * r - 1.0).sqrt();
    Ok(n * b / chi0)
}

fn time_grid(events: Vec<f64>, t_end: f64, dt_max: f64) -> Vec<f64> {
    let mut cuts: Vec<f64> = events.into_iter().filter(|&e| e > 0.0 && e < t_end).collect();
    cuts.push(0.0);
    cuts.push(t_end);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut times = vec![0.0];
    for w in cuts.windows(2) {
        let n = ((w[1] - w[0]) / dt_max).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        times.extend((1..n).map(|k| w[0] + k as f64 * h));
        times.push(w[1]);
    }
    times
}

/// Distinct (dt, coupling, Raman rate) combinations and, per step, which one applies.
struct StepKinds {
    kinds: Vec<(f64, Complex64, f64)>,
    of_step: Vec<usize>,
}

fn classify_steps(
    times: &[f64],
    fields: &impl FieldSource,
    dark: Option<Window>,
    p: &LambdaParams,
    opts: &StorageOptions,
) -> StepKinds {
    let mut index: HashMap<[u64; 4], usize> = HashMap::new();
    let mut kinds = Vec::new();
    let mut of_step = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let mid = 0.5 * (w[0] + w[1]);
        let coupling = fields.fields(mid).0;
        let rate = match dark {
            Some(d) if mid >= d.start && mid < d.end => opts.decay_convention.dark_raman_rate(p.gamma_raman),
            _ => p.gamma_raman,
        };
        let key = [
            dt.to_bits(),
            coupling.re.to_bits(),
            coupling.im.to_bits(),
            rate.to_bits(),
        ];
        let k = *index.entry(key).or_insert_with(|| {
            kinds.push((dt, coupling, rate));
            kinds.len() - 1
        });
        of_step.push(k);
    }
    StepKinds { kinds, of_step }
}

/// Propagators indexed `[class][kind]` for one coupling scale.
fn build_table(
    kinds: &StepKinds,
    scale: f64,
    p: &LambdaParams,
    grid: &VelocityGrid,
) -> Vec<Vec<StepPropagator>> {
    grid.classes()
        .par_iter()
        .map(|c| {
            kinds
                .kinds
                .iter()
                .map(|&(dt, coupling, rate)| {
                    let m: Matrix2<Complex64> = generator(p, coupling * scale, rate, c.shift);
                    StepPropagator::new(&m, dt)
                })
                .collect()
        })
        .collect()
}

/// Probe seen by the atoms: value just after the start and just before the
/// end of each step, so jumps at grid points are taken from the right side.
struct Drive {
    start: Vec<Complex64>,
    end: Vec<Complex64>,
}

impl Drive {
    fn sample(times: &[f64], fields: &impl FieldSource) -> Self {
        let (start, end) = times
            .windows(2)
            .map(|w| {
                let nudge = 1e-9 * (w[1] - w[0]);
                (fields.fields(w[0] + nudge).1, fields.fields(w[1] - nudge).1)
            })
            .unzip();
        Self { start, end }
    }

    /// The drive plus a correction that is continuous on the grid.
    fn plus(&self, c: &[Complex64]) -> Self {
        Self {
            start: self.start.iter().zip(c).map(|(a, b)| a + b).collect(),
            end: self.end.iter().zip(&c[1..]).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Doppler-averaged optical coherence on the time grid.
fn polarization(
    table: &[Vec<StepPropagator>],
    grid: &VelocityGrid,
    of_step: &[usize],
    drive: &Drive,
) -> Vec<Complex64> {
    let classes = grid.classes();
    let n = of_step.len() + 1;
    let idx: Vec<usize> = (0..classes.len()).collect();
    let partials: Vec<Vec<Complex64>> = idx
        .par_chunks(CLASS_CHUNK)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for &c in chunk {
                let w = classes[c].weight;
                let props = &table[c];
                let mut s = WeakProbeState::default();
                for (i, &k) in of_step.iter().enumerate() {
                    s = props[k].step(s, drive.start[i], drive.end[i]);
                    acc[i + 1] += s.optical * w;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

pub(super) fn propagate(
    fields: &impl FieldSource,
    t_end: f64,
    dark: Option<Window>,
    cell: &CellConfig,
    p: &LambdaParams,
    grid: &VelocityGrid,
    opts: &StorageOptions,
) -> Result<Propagation> {
    p.validate()?;
    cell.validate()?;
    if !(opts.dt_max > 0.0) || !opts.dt_max.is_finite() {
        return invalid("dt_max must be > 0");
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return invalid("simulation end time must be > 0");
    }
    let grid = grid.pumped(cell.pumped_fraction)?;
    let kappa_l = kappa_length(cell, p, &grid)?;

    let times = time_grid(fields.events(), t_end, opts.dt_max);
    let input: Vec<Complex64> = times.iter().map(|&t| fields.fields(t).1).collect();
    let coupling: Vec<Complex64> = times.iter().map(|&t| fields.fields(t).0).collect();
    let peak_in = input.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let drive = Drive::sample(&times, fields);

    let kinds = classify_steps(&times, fields, dark, p, opts);
    let profile = cell.coupling_profile();
    let uniform = profile.iter().all(|&s| s == profile[0]);
    let mut shared = None;

    // the field is input + correction; the correction is continuous in time
    let g = -I * (kappa_l / cell.n_slices as f64);
    let mut corr = vec![Complex64::new(0.0, 0.0); times.len()];
    if kappa_l > 0.0 {
        for (slice, &scale) in profile.iter().enumerate() {
            let table = if uniform {
                shared.get_or_insert_with(|| build_table(&kinds, scale, p, &grid))
            } else {
                shared.insert(build_table(&kinds, scale, p, &grid))
            };
            let p1 = polarization(table, &grid, &kinds.of_step, &drive.plus(&corr));
            let pred: Vec<Complex64> = corr.iter().zip(&p1).map(|(&c, &x)| c + g * x).collect();
            let p2 = polarization(table, &grid, &kinds.of_step, &drive.plus(&pred));
            for ((c, a), b) in corr.iter_mut().zip(&p1).zip(&p2) {
                *c += g * 0.5 * (a + b);
            }
            let worst = input
                .iter()
                .zip(&corr)
                .map(|(i, c)| (i + c).norm())
                .fold(0.0, f64::max);
            if !worst.is_finite() || worst > DIVERGENCE_FACTOR * peak_in {
                return Err(Error::Divergence {
                    slice,
                    amplitude: worst,
                });
            }
        }
    }
    let output = input.iter().zip(&corr).map(|(i, c)| i + c).collect();
    let input_steps: Vec<[Complex64; 2]> = drive
        .start
        .iter()
        .zip(&drive.end)
        .map(|(&a, &b)| [a, b])
        .collect();
    let out = drive.plus(&corr);
    let output_steps = out.start.iter().zip(&out.end).map(|(&a, &b)| [a, b]).collect();
    Ok(Propagation {
        times,
        input,
        output,
        coupling,
        input_steps,
        output_steps,
    })
}

/// Steady-state intensity transmission of a weak cw probe with constant
/// coupling `coupling`, using the same slicing as the time-domain run.
pub fn cw_transmission(
    p: &LambdaParams,
    cell: &CellConfig,
    grid: &VelocityGrid,
    coupling: Complex64,
) -> Result<f64> {
    p.validate()?;
    cell.validate()?;
    let grid = grid.pumped(cell.pumped_fraction)?;
    let kappa_l = kappa_length(cell, p, &grid)?;
    let h = -I * (kappa_l / cell.n_slices as f64);
    let one = Complex64::new(1.0, 0.0);
    let mut amp = one;
    for scale in cell.coupling_profile() {
        let mut chi = Complex64::new(0.0, 0.0);
        for c in grid.classes() {
            let s =
                steady_state(p, coupling * scale, one, c.shift).ok_or(Error::DegenerateDenominator(0.0))?;
            chi += s.optical * c.weight;
        }
        let hg = h * chi;
        amp *= one + hg + 0.5 * hg * hg;
    }
    Ok(amp.norm_sqr())
}
