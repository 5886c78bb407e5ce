//! The storage protocol: field timelines, sliced-cell propagation and the
//! end-to-end simulation that produces the leak and the retrieved pulse.
//!
//! Sequence: the coupling is on from the start; the probe rises
//! exponentially and is cut abruptly at `probe_cutoff_time`; the coupling is
//! switched off at `coupling_off_time`, stays off for the storage time τ and
//! is switched back on (possibly with a different amplitude or phase) to
//! release the stored pulse.

mod engine;

use std::io::Write;

use num_complex::Complex64;

pub use engine::{cw_transmission, run_fields, Propagation};

use crate::bloch::{FieldSource, LambdaParams};
use crate::doppler::VelocityGrid;
use crate::error::invalid;
use crate::{Error, Result};

/// Closed time interval `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Time profile of the coupling and probe Rabi frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldTimeline {
    /// Time constant of the exponential leading edge (s).
    pub probe_rise_time: f64,
    /// Instant the probe drops to zero (s).
    pub probe_cutoff_time: f64,
    pub probe_peak_rabi: Complex64,
    pub coupling_on_rabi: Complex64,
    pub coupling_off_time: f64,
    pub storage_time: f64,
    pub coupling_read_rabi: Complex64,
}

impl FieldTimeline {
    pub fn validate(&self) -> Result<()> {
        let times = [
            self.probe_rise_time,
            self.probe_cutoff_time,
            self.coupling_off_time,
            self.storage_time,
        ];
        if times.iter().any(|t| !t.is_finite()) {
            return invalid("non-finite timeline value");
        }
        if self.probe_rise_time <= 0.0 {
            return invalid("probe_rise_time must be > 0");
        }
        if !(self.probe_cutoff_time > 0.0 && self.probe_cutoff_time <= self.coupling_off_time) {
            return invalid(format!(
                "need 0 < probe_cutoff_time ({}) <= coupling_off_time ({})",
                self.probe_cutoff_time, self.coupling_off_time
            ));
        }
        if self.storage_time < 0.0 {
            return invalid("storage_time must be >= 0");
        }
        Ok(())
    }

    /// Ideal probe: `peak·exp((t − cutoff)/rise)` up to the cutoff, zero after.
    pub fn probe(&self, t: f64) -> Complex64 {
        if t <= self.probe_cutoff_time {
            self.probe_peak_rabi * ((t - self.probe_cutoff_time) / self.probe_rise_time).exp()
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Ideal coupling: on, then dark for τ, then the readout value.
    pub fn coupling(&self, t: f64) -> Complex64 {
        if t < self.coupling_off_time {
            self.coupling_on_rabi
        } else if t < self.reopen_time() {
            Complex64::new(0.0, 0.0)
        } else {
            self.coupling_read_rabi
        }
    }

    pub fn reopen_time(&self) -> f64 {
        self.coupling_off_time + self.storage_time
    }

    /// `[0, coupling_off_time]`
    pub fn leak_window(&self) -> Window {
        Window::new(0.0, self.coupling_off_time)
    }

    /// `[reopen, reopen + rise_multiple·probe_rise_time]`
    pub fn retrieved_window(&self, rise_multiple: f64) -> Window {
        let start = self.reopen_time();
        Window::new(start, start + rise_multiple * self.probe_rise_time)
    }

    /// The dark interval `[coupling_off_time, reopen)`.
    pub fn dark_window(&self) -> Window {
        Window::new(self.coupling_off_time, self.reopen_time())
    }

    /// Local-oscillator phase at `t`: the storage coupling's phase up to and
    /// including `coupling_off_time`, the readout coupling's phase after.
    pub fn lo_phase(&self, t: f64) -> f64 {
        if t <= self.coupling_off_time {
            arg_or_zero(self.coupling_on_rabi)
        } else {
            arg_or_zero(self.coupling_read_rabi)
        }
    }

    /// The same timeline with coupling switches smoothed into linear ramps.
    pub fn ramped(&self, ramp: f64) -> RampedTimeline<'_> {
        RampedTimeline {
            timeline: self,
            ramp: ramp.max(0.0),
        }
    }
}

fn arg_or_zero(z: Complex64) -> f64 {
    if z.norm() == 0.0 {
        0.0
    } else {
        z.arg()
    }
}

impl FieldSource for FieldTimeline {
    fn fields(&self, t: f64) -> (Complex64, Complex64) {
        (self.coupling(t), self.probe(t))
    }

    fn events(&self) -> Vec<f64> {
        vec![self.probe_cutoff_time, self.coupling_off_time, self.reopen_time()]
    }
}

/// Timeline whose coupling switches are linear ramps of length `ramp`.
///
/// The switch-off ramp starts at `coupling_off_time` (the probe is fully
/// in by then) and the switch-on ramp starts at the reopen time. Both are
/// clipped to the dark interval, so the coupling equals the ideal value
/// before the switch-off and after the switch-on ramp.
#[derive(Debug, Clone, Copy)]
pub struct RampedTimeline<'a> {
    timeline: &'a FieldTimeline,
    ramp: f64,
}

impl RampedTimeline<'_> {
    fn down_end(&self) -> f64 {
        let tl = self.timeline;
        tl.coupling_off_time + self.ramp.min(tl.storage_time)
    }

    pub fn coupling(&self, t: f64) -> Complex64 {
        let tl = self.timeline;
        let off = tl.coupling_off_time;
        let reopen = tl.reopen_time();
        if self.ramp == 0.0 || tl.storage_time == 0.0 {
            return tl.coupling(t);
        }
        let down_end = self.down_end();
        if t < off {
            tl.coupling_on_rabi
        } else if t < down_end {
            tl.coupling_on_rabi * ((down_end - t) / (down_end - off))
        } else if t < reopen {
            Complex64::new(0.0, 0.0)
        } else if t < reopen + self.ramp {
            tl.coupling_read_rabi * ((t - reopen) / self.ramp)
        } else {
            tl.coupling_read_rabi
        }
    }
}

impl FieldSource for RampedTimeline<'_> {
    fn fields(&self, t: f64) -> (Complex64, Complex64) {
        (self.coupling(t), self.timeline.probe(t))
    }

    fn events(&self) -> Vec<f64> {
        let tl = self.timeline;
        let mut e = tl.events();
        if self.ramp > 0.0 && tl.storage_time > 0.0 {
            e.push(self.down_end());
            e.push(tl.reopen_time() + self.ramp);
        }
        e
    }
}

/// Geometry and absorption of the vapour cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellConfig {
    /// Cell length (m).
    pub length: f64,
    /// Doppler-averaged line-center absorption depth αL of the probe
    /// (intensity transmission `exp(−αL)` with the coupling off).
    pub absorption_depth: f64,
    pub n_slices: usize,
    /// Fraction of the Doppler profile that is optically pumped, in (0, 1].
    pub pumped_fraction: f64,
    /// Beer-law intensity attenuation coefficient of the coupling (1/m);
    /// `None` leaves the coupling uniform along the cell.
    pub coupling_attenuation: Option<f64>,
}

impl CellConfig {
    pub fn new(length: f64, absorption_depth: f64) -> Self {
        Self {
            length,
            absorption_depth,
            n_slices: 32,
            pumped_fraction: 1.0,
            coupling_attenuation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return invalid("cell length must be > 0");
        }
        if !(self.absorption_depth >= 0.0) || !self.absorption_depth.is_finite() {
            return invalid("absorption_depth must be >= 0");
        }
        if self.n_slices == 0 {
            return invalid("n_slices must be >= 1");
        }
        if !(self.pumped_fraction > 0.0 && self.pumped_fraction <= 1.0) {
            return invalid("pumped_fraction must be in (0, 1]");
        }
        if let Some(b) = self.coupling_attenuation {
            if !(b >= 0.0) || !b.is_finite() {
                return invalid("coupling attenuation coefficient must be >= 0");
            }
        }
        Ok(())
    }

    /// Coupling amplitude factor at the center of each slice.
    pub fn coupling_profile(&self) -> Vec<f64> {
        let n = self.n_slices;
        (0..n)
            .map(|k| match self.coupling_attenuation {
                Some(beta) => (-0.5 * beta * self.length * (k as f64 + 0.5) / n as f64).exp(),
                None => 1.0,
            })
            .collect()
    }
}

/// How the stored coherence relaxes while the coupling is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayConvention {
    /// Stored energy decays at Γ_R: efficiency ∝ exp(−Γ_R τ), i.e. a decay
    /// time of 1/Γ_R (11.4 µs for Γ_R/2π = 14 kHz). The Raman coherence
    /// relaxes at Γ_R/2 in the dark.
    #[default]
    Efficiency,
    /// The Raman coherence relaxes at Γ_R at all times, so efficiency
    /// decays at 2Γ_R.
    Amplitude,
}

impl DecayConvention {
    /// Raman coherence relaxation rate during the dark interval.
    pub fn dark_raman_rate(self, gamma_raman: f64) -> f64 {
        match self {
            Self::Efficiency => 0.5 * gamma_raman,
            Self::Amplitude => gamma_raman,
        }
    }

    /// Decay time of the storage efficiency versus storage time.
    pub fn efficiency_decay_time(self, gamma_raman: f64) -> f64 {
        1.0 / (2.0 * self.dark_raman_rate(gamma_raman))
    }
}

/// Numerical settings of the propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageOptions {
    /// Largest time step (s).
    pub dt_max: f64,
    /// Duration of the linear ramps that realize abrupt coupling switches (s).
    pub ramp_time: f64,
    /// Retrieved window length in probe rise times.
    pub retrieval_rise_times: f64,
    pub decay_convention: DecayConvention,
}

impl Default for StorageOptions {
    fn default() -> Self {
        Self {
            dt_max: 2e-9,
            ramp_time: 10e-9,
            retrieval_rise_times: 5.0,
            decay_convention: DecayConvention::Efficiency,
        }
    }
}

/// Output of [`run_storage`].
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub time_grid: Vec<f64>,
    /// Probe Rabi frequency at the cell exit.
    pub probe_out_amplitude: Vec<Complex64>,
    /// Probe at the exit of the same cell without atoms, i.e. the input.
    pub reference_out_amplitude: Vec<Complex64>,
    /// Realized (ramped) coupling at the cell entrance.
    pub coupling: Vec<Complex64>,
    pub leak_window: Window,
    pub retrieved_window: Window,
    pub timeline: FieldTimeline,
    /// One-sided exit amplitudes `[just after t_i, just before t_{i+1}]` per
    /// step, so integrals are unaffected by the probe cutoff jump.
    pub probe_out_steps: Vec<[Complex64; 2]>,
    pub reference_out_steps: Vec<[Complex64; 2]>,
}

impl SimulationResult {
    pub fn coupling_on(&self, i: usize) -> bool {
        self.coupling[i].norm() > 0.0
    }

    /// Exit amplitude referred to the local oscillator, i.e. multiplied by
    /// `exp(−i·φ_LO(t))`.
    pub fn lo_referenced_output(&self) -> Vec<Complex64> {
        self.time_grid
            .iter()
            .zip(&self.probe_out_amplitude)
            .map(|(&t, &a)| a * Complex64::from_polar(1.0, -self.timeline.lo_phase(t)))
            .collect()
    }

    /// Trapezoidal `∫_w f(t, Ω) dt` over the steps lying inside `w`.
    fn window_integral(
        &self,
        w: Window,
        steps: &[[Complex64; 2]],
        f: impl Fn(f64, Complex64) -> Complex64,
    ) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, [a, b]) in steps.iter().enumerate() {
            let (t0, t1) = (self.time_grid[i], self.time_grid[i + 1]);
            if w.contains(t0) && w.contains(t1) {
                acc += (f(t0, *a) + f(t1, *b)) * (0.5 * (t1 - t0));
            }
        }
        acc
    }

    /// `∫_w |Ω_out|² dt`
    pub fn window_energy(&self, w: Window) -> f64 {
        self.window_integral(w, &self.probe_out_steps, |_, z| z.norm_sqr().into())
            .re
    }

    /// `∫ |Ω_in|² dt` over the whole run.
    pub fn input_energy(&self) -> f64 {
        let all = Window::new(self.time_grid[0], self.time_grid[self.time_grid.len() - 1]);
        self.window_integral(all, &self.reference_out_steps, |_, z| z.norm_sqr().into())
            .re
    }

    fn lo_referenced_integral(&self, w: Window) -> Complex64 {
        let tl = self.timeline;
        self.window_integral(w, &self.probe_out_steps, |t, z| {
            z * Complex64::from_polar(1.0, -tl.lo_phase(t))
        })
    }

    /// Phase of the exit field in `w`, `arg ∫_w Ω_out dt`.
    pub fn absolute_window_phase(&self, w: Window) -> f64 {
        self.window_integral(w, &self.probe_out_steps, |_, z| z).arg()
    }

    /// Retrieved minus leak phase as a homodyne measurement sees it: each
    /// window is referred to the coupling beam present in that window.
    pub fn relative_phase(&self) -> f64 {
        let leak = self.lo_referenced_integral(self.leak_window);
        let ret = self.lo_referenced_integral(self.retrieved_window);
        crate::wrap_phase(ret.arg() - leak.arg())
    }

    /// Largest |Ω_out| inside `[start + settle, end]` of the dark interval,
    /// relative to the input peak.
    pub fn dark_residual(&self, settle: f64) -> f64 {
        let dark = self.timeline.dark_window();
        let peak = self
            .reference_out_amplitude
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let worst = self
            .time_grid
            .iter()
            .zip(&self.probe_out_amplitude)
            .filter(|(&t, _)| t >= dark.start + settle && t <= dark.end)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max);
        worst / peak
    }

    /// `time_s,re_out,im_out,re_ref,im_ref,coupling_on_flag`
    pub fn write_columns<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,re_out,im_out,re_ref,im_ref,coupling_on_flag")?;
        for i in 0..self.time_grid.len() {
            let o = self.probe_out_amplitude[i];
            let r = self.reference_out_amplitude[i];
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.time_grid[i],
                o.re,
                o.im,
                r.re,
                r.im,
                u8::from(self.coupling_on(i))
            )?;
        }
        Ok(())
    }
}

/// Runs the storage protocol with default numerical settings.
pub fn run_storage(
    timeline: &FieldTimeline,
    cell: &CellConfig,
    p: &LambdaParams,
    grid: &VelocityGrid,
) -> Result<SimulationResult> {
    run_storage_with(timeline, cell, p, grid, &StorageOptions::default())
}

/// Runs the storage protocol.
///
/// `p` supplies the decay rates and optical detunings; the fields come from
/// `timeline`.
pub fn run_storage_with(
    timeline: &FieldTimeline,
    cell: &CellConfig,
    p: &LambdaParams,
    grid: &VelocityGrid,
    opts: &StorageOptions,
) -> Result<SimulationResult> {
    timeline.validate()?;
    if !(opts.retrieval_rise_times > 0.0) {
        return invalid("retrieval window must be > 0 rise times");
    }
    let retrieved_window = timeline.retrieved_window(opts.retrieval_rise_times);
    let ramped = timeline.ramped(opts.ramp_time);
    let prop = engine::propagate(
        &ramped,
        retrieved_window.end,
        Some(timeline.dark_window()),
        cell,
        p,
        grid,
        opts,
    )?;
    Ok(SimulationResult {
        time_grid: prop.times,
        probe_out_amplitude: prop.output,
        reference_out_amplitude: prop.input,
        coupling: prop.coupling,
        leak_window: timeline.leak_window(),
        retrieved_window,
        timeline: *timeline,
        probe_out_steps: prop.output_steps,
        reference_out_steps: prop.input_steps,
    })
}

/// FWHM (rad/s) of the cw probe transmission peak versus Raman detuning.
///
/// The coupling is `p.rabi_coupling`; the scan moves Δ_P around `p.detuning_coupling`.
/// The half level lies midway between the peak and the coupling-off
/// transmission at the same optical detuning.
pub fn transparency_window(p: &LambdaParams, cell: &CellConfig, grid: &VelocityGrid) -> Result<f64> {
    if p.rabi_coupling.norm() == 0.0 {
        return invalid("transparency window needs a nonzero coupling");
    }
    let at = |delta_r: f64| {
        let q = LambdaParams {
            detuning_probe: p.detuning_coupling + delta_r,
            ..*p
        };
        cw_transmission(&q, cell, grid, q.rabi_coupling)
    };
    let peak = at(0.0)?;
    let floor = cw_transmission(
        &p.at_detuning(p.detuning_coupling),
        cell,
        grid,
        Complex64::new(0.0, 0.0),
    )?;
    let contrast = peak - floor;
    if contrast < 1e-6 {
        return Err(Error::NoPeak(contrast));
    }
    let half = floor + 0.5 * contrast;
    let guess = p.gamma_raman + p.rabi_coupling.norm_sqr() / p.gamma_opt;
    let mut edges = [0.0; 2];
    for (edge, sign) in edges.iter_mut().zip([1.0, -1.0]) {
        let mut lo = 0.0;
        let mut hi = guess.max(1.0);
        let mut expansions = 0;
        while at(sign * hi)? > half {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::NoPeak(contrast));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(sign * mid)? > half {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-9 * hi {
                break;
            }
        }
        *edge = sign * 0.5 * (lo + hi);
    }
    Ok(edges[0] - edges[1])
}
