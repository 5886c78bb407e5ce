//! Homodyne detection with the coupling beam as local oscillator.
//!
//! A photodiode sees `I_C + I_P + α√(I_C I_P)·cos(arg Ω_P − φ_LO)`. The LO
//! phase is scanned slowly, so each shot has an essentially constant phase;
//! the envelope over many shots gives the probe intensity and a sinusoidal
//! fit across shots gives the probe phase in a time window.

mod io;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use io::{read_traces, write_traces};

use crate::error::invalid;
use crate::protocol::Window;
use crate::{Error, Result};

/// Product of scan frequency and trace duration above which the LO phase
/// can no longer be treated as constant within a shot.
pub const SCAN_SLOWNESS_LIMIT: f64 = 0.01;

/// Minimum number of distinct LO phases for envelope extraction.
pub const MIN_PHASES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneConfig {
    /// I_C (detector units).
    pub lo_intensity: f64,
    /// α in (0, 2]; 2 is perfect mode overlap.
    pub contrast: f64,
    /// Hz
    pub scan_frequency: f64,
    /// Total LO phase excursion of one scan (rad).
    pub scan_amplitude: f64,
    /// Hz
    pub sample_rate: f64,
    /// RMS of additive Gaussian intensity noise (detector units).
    pub noise_rms: f64,
}

impl HomodyneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo_intensity > 0.0) || !self.lo_intensity.is_finite() {
            return invalid("lo_intensity must be > 0");
        }
        if !(self.contrast > 0.0 && self.contrast <= 2.0) {
            return invalid(format!("contrast must be in (0, 2] (got {})", self.contrast));
        }
        if !(self.scan_frequency >= 0.0) || !self.scan_frequency.is_finite() {
            return invalid("scan_frequency must be >= 0");
        }
        if !self.scan_amplitude.is_finite() {
            return invalid("scan_amplitude must be finite");
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return invalid("sample_rate must be > 0");
        }
        if !(self.noise_rms >= 0.0) || !self.noise_rms.is_finite() {
            return invalid("noise_rms must be >= 0");
        }
        Ok(())
    }

    /// True when the LO phase stays constant over a shot of `duration`.
    pub fn scan_is_slow(&self, duration: f64) -> bool {
        self.scan_frequency * duration <= SCAN_SLOWNESS_LIMIT
    }

    /// LO phase drift rate during one scan (rad/s).
    pub fn scan_rate(&self) -> f64 {
        self.scan_amplitude * self.scan_frequency
    }

    /// Nominal LO phases of `n` shots spread evenly over one scan.
    pub fn scan_phases(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| self.scan_amplitude * k as f64 / n as f64)
            .collect()
    }
}

/// One recorded shot.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrace {
    pub shot_id: u64,
    pub time: Vec<f64>,
    pub intensity: Vec<f64>,
    /// LO phase per sample (rad).
    pub lo_phase: Vec<f64>,
}

impl DetectorTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    fn mean_phase(&self, w: Window) -> f64 {
        let (sum, n) = self
            .time
            .iter()
            .zip(&self.lo_phase)
            .filter(|(t, _)| w.contains(**t))
            .fold((0.0, 0usize), |(s, n), (_, &ph)| (s + ph, n + 1));
        if n == 0 {
            self.lo_phase.first().copied().unwrap_or(0.0)
        } else {
            sum / n as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub trace: DetectorTrace,
    /// Set when `scan_frequency·duration` exceeds [`SCAN_SLOWNESS_LIMIT`].
    pub scan_warning: bool,
}

/// Noise source for one shot: a fixed seed with the shot id as stream, so a
/// shot's noise does not depend on which other shots are generated.
pub fn shot_rng(seed: u64, shot_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot_id);
    rng
}

/// Detector signal for a probe amplitude sampled at `time`.
///
/// The probe is given in units where `|probe|²` is the intensity I_P. The
/// LO phase starts at `lo_phase` and drifts at the scan rate. Noise is added
/// only when `cfg.noise_rms > 0`, drawn from `rng`.
pub fn synthesize_trace(
    time: &[f64],
    probe: &[Complex64],
    cfg: &HomodyneConfig,
    lo_phase: f64,
    shot_id: u64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Synthesized> {
    cfg.validate()?;
    if time.len() != probe.len() || time.is_empty() {
        return invalid("time and probe must be nonempty and of equal length");
    }
    let t0 = time[0];
    let duration = time[time.len() - 1] - t0;
    let scan_warning = !cfg.scan_is_slow(duration);
    if scan_warning {
        log::warn!(
            "LO scan not slow: scan_frequency·duration = {:.3e} > {SCAN_SLOWNESS_LIMIT}",
            cfg.scan_frequency * duration
        );
    }
    let rate = cfg.scan_rate();
    let lo: Vec<f64> = time.iter().map(|&t| lo_phase + rate * (t - t0)).collect();
    let mut intensity: Vec<f64> = probe
        .iter()
        .zip(&lo)
        .map(|(a, &phi)| {
            let ip = a.norm_sqr();
            let beat = if ip > 0.0 { (a.arg() - phi).cos() } else { 0.0 };
            cfg.lo_intensity + ip + cfg.contrast * (cfg.lo_intensity * ip).sqrt() * beat
        })
        .collect();
    if cfg.noise_rms > 0.0 {
        let rng = match rng {
            Some(r) => r,
            None => return invalid("noise_rms > 0 needs a random source"),
        };
        let normal = Normal::new(0.0, cfg.noise_rms).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in intensity.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(Synthesized {
        trace: DetectorTrace {
            shot_id,
            time: time.to_vec(),
            intensity,
            lo_phase: lo,
        },
        scan_warning,
    })
}

/// A full scan: `n_phases` shots at [`HomodyneConfig::scan_phases`], shot ids
/// `0..n_phases`, noise streams derived from `seed`.
pub fn synthesize_scan(
    time: &[f64],
    probe: &[Complex64],
    cfg: &HomodyneConfig,
    n_phases: usize,
    seed: u64,
) -> Result<Vec<DetectorTrace>> {
    cfg.scan_phases(n_phases)
        .into_par_iter()
        .enumerate()
        .map(|(k, phi)| {
            let mut rng = shot_rng(seed, k as u64);
            synthesize_trace(time, probe, cfg, phi, k as u64, Some(&mut rng)).map(|s| s.trace)
        })
        .collect()
}

/// Per-bin extrema of a phase-scanned set of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub time: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Distinct LO phases (mod 2π, to 1e−9 rad) and their span.
///
/// The span of `n` sorted distinct phases is `(max − min)·n/(n − 1)`, so `n`
/// equally spaced phases over `[0, 2π)` span exactly 2π.
pub fn phase_coverage(phases: &[f64]) -> (usize, f64) {
    let tau = std::f64::consts::TAU;
    let mut p: Vec<f64> = phases.iter().map(|x| x.rem_euclid(tau)).collect();
    p.sort_by(f64::total_cmp);
    p.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if p.len() > 1 && (p[0] + tau - p[p.len() - 1]) < 1e-9 {
        p.pop();
    }
    let n = p.len();
    if n < 2 {
        return (n, 0.0);
    }
    (n, (p[n - 1] - p[0]) * n as f64 / (n - 1) as f64)
}

fn check_common_grid(traces: &[DetectorTrace]) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::TraceFormat("no traces".into()))?;
    for t in traces {
        if t.time != first.time || t.intensity.len() != t.len() || t.lo_phase.len() != t.len() {
            return Err(Error::TraceFormat(format!(
                "shot {} does not share the time grid of shot {}",
                t.shot_id, first.shot_id
            )));
        }
    }
    Ok(())
}

fn check_coverage(traces: &[DetectorTrace]) -> Result<()> {
    let phases: Vec<f64> = traces.iter().map(|t| t.lo_phase[0]).collect();
    let (distinct, span) = phase_coverage(&phases);
    if distinct < MIN_PHASES || span < std::f64::consts::TAU * (1.0 - 1e-9) {
        return Err(Error::PhaseCoverage { distinct, span });
    }
    Ok(())
}

/// Centered moving average over `width` samples, truncated at the ends.
pub fn smooth(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return values.to_vec();
    }
    let half = width / 2;
    let mut prefix = vec![0.0; values.len() + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Upper and lower envelopes over a phase scan, after smoothing each trace
/// with a `smoothing`-sample moving average (1 disables it).
pub fn extract_envelopes(traces: &[DetectorTrace], smoothing: usize) -> Result<EnvelopePair> {
    check_common_grid(traces)?;
    check_coverage(traces)?;
    let smoothed: Vec<Vec<f64>> = traces
        .par_iter()
        .map(|t| smooth(&t.intensity, smoothing))
        .collect();
    let n = traces[0].len();
    let mut upper = vec![f64::NEG_INFINITY; n];
    let mut lower = vec![f64::INFINITY; n];
    for s in &smoothed {
        for i in 0..n {
            upper[i] = upper[i].max(s[i]);
            lower[i] = lower[i].min(s[i]);
        }
    }
    Ok(EnvelopePair {
        time: traces[0].time.clone(),
        upper,
        lower,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub time: Vec<f64>,
    pub probe_intensity: Vec<f64>,
    /// `|(upper − lower) − 2α√(I_C I_P)|` per bin.
    pub residual: Vec<f64>,
    /// Bins where `(upper + lower)/2 < I_C` and I_P was clamped to 0.
    pub clamped: Vec<bool>,
}

impl Inversion {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }
}

/// `I_P = (upper + lower)/2 − I_C`, clamped at zero.
pub fn invert_interference(env: &EnvelopePair, lo_intensity: f64, contrast: f64) -> Result<Inversion> {
    if !(contrast > 0.0) || !contrast.is_finite() {
        return invalid("contrast must be > 0");
    }
    if !(lo_intensity > 0.0) || !lo_intensity.is_finite() {
        return invalid("lo_intensity must be > 0");
    }
    let n = env.upper.len();
    let mut out = Inversion {
        time: env.time.clone(),
        probe_intensity: Vec::with_capacity(n),
        residual: Vec::with_capacity(n),
        clamped: Vec::with_capacity(n),
    };
    for (&u, &l) in env.upper.iter().zip(&env.lower) {
        let raw = 0.5 * (u + l) - lo_intensity;
        let ip = raw.max(0.0);
        out.probe_intensity.push(ip);
        out.clamped.push(raw < 0.0);
        out.residual
            .push(((u - l) - 2.0 * contrast * (lo_intensity * ip).sqrt()).abs());
    }
    Ok(out)
}

/// α from a cw calibration segment.
///
/// Each trace is averaged over `segment` (noise drops as the square root of
/// the sample count), then `α = (max − min)/(2√(I_C I_P))` across traces.
/// `probe_intensity` is the known cw I_P; `None` infers it from the mean of
/// the extrema.
pub fn estimate_contrast(
    traces: &[DetectorTrace],
    lo_intensity: f64,
    probe_intensity: Option<f64>,
    segment: Window,
) -> Result<f64> {
    check_common_grid(traces)?;
    check_coverage(traces)?;
    if !(lo_intensity > 0.0) {
        return invalid("lo_intensity must be > 0");
    }
    let means: Vec<f64> = traces
        .iter()
        .map(|t| {
            let v: Vec<f64> = t
                .time
                .iter()
                .zip(&t.intensity)
                .filter(|(x, _)| segment.contains(**x))
                .map(|(_, &i)| i)
                .collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect();
    if means.iter().any(|m| m.is_nan()) {
        return invalid("calibration segment contains no samples");
    }
    let upper = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = means.iter().copied().fold(f64::INFINITY, f64::min);
    let ip = probe_intensity.unwrap_or(0.5 * (upper + lower) - lo_intensity);
    if !(ip > 1e-9 * lo_intensity) {
        return Err(Error::ZeroProbe);
    }
    Ok((upper - lower) / (2.0 * (lo_intensity * ip).sqrt()))
}

/// Least-squares fit of `c0 + a cos φ + b sin φ` returning `(a, b, residual rms)`.
fn fit_sinusoid(phases: &[f64], values: &[f64]) -> Result<(f64, f64, f64)> {
    use nalgebra::{Matrix3, Vector3};
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&ph, &y) in phases.iter().zip(values) {
        let row = Vector3::new(1.0, ph.cos(), ph.sin());
        ata += row * row.transpose();
        atb += row * y;
    }
    let sol = ata.try_inverse().ok_or_else(|| Error::DegenerateFit {
        window: "scan",
        amplitude: 0.0,
        floor: 0.0,
    })? * atb;
    let ss: f64 = phases
        .iter()
        .zip(values)
        .map(|(&ph, &y)| (y - sol[0] - sol[1] * ph.cos() - sol[2] * ph.sin()).powi(2))
        .sum();
    Ok((sol[1], sol[2], (ss / phases.len() as f64).sqrt()))
}

/// Phase of the probe in `w` relative to the LO: fits the window-integrated
/// signal of every shot against its LO phase.
fn window_phase(traces: &[DetectorTrace], w: Window, name: &'static str) -> Result<f64> {
    let mut phases = Vec::with_capacity(traces.len());
    let mut values = Vec::with_capacity(traces.len());
    for t in traces {
        let mut acc = 0.0;
        for i in 1..t.len() {
            if w.contains(t.time[i - 1]) && w.contains(t.time[i]) {
                acc += 0.5 * (t.time[i] - t.time[i - 1]) * (t.intensity[i - 1] + t.intensity[i]);
            }
        }
        phases.push(t.mean_phase(w));
        values.push(acc);
    }
    let (a, b, rms) = fit_sinusoid(&phases, &values)?;
    let amplitude = a.hypot(b);
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = rms.max(1e-12 * scale);
    if !(amplitude >= 3.0 * floor) || amplitude == 0.0 {
        return Err(Error::DegenerateFit {
            window: name,
            amplitude,
            floor,
        });
    }
    Ok(b.atan2(a))
}

/// Retrieved-minus-leak probe phase, wrapped to (−π, π].
pub fn extract_relative_phase(traces: &[DetectorTrace], leak: Window, retrieved: Window) -> Result<f64> {
    check_common_grid(traces)?;
    check_coverage(traces)?;
    let phi_leak = window_phase(traces, leak, "leak")?;
    let phi_ret = window_phase(traces, retrieved, "retrieved")?;
    Ok(crate::wrap_phase(phi_ret - phi_leak))
}

#[cfg(test)]
mod tests;
