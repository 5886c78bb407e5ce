use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use eit_core::analysis::{leak_level, phase_vs_detuning_curve, storage_efficiency, write_phase_table};
use eit_core::bloch::eit_phase_shift;
use eit_core::homodyne::{
    estimate_contrast, extract_envelopes, extract_relative_phase, invert_interference, read_traces, shot_rng,
    synthesize_scan, synthesize_trace, write_traces, DetectorTrace,
};
use eit_core::protocol::{run_storage_with, SimulationResult, Window};
use eit_core::{angular, Complex64};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Axis, ScenarioConfig, SweepMode};
use crate::CliError;

pub const RESULT_FILE: &str = "result.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const TRACES_FILE: &str = "traces.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PHASE_CURVE_FILE: &str = "phase_curve.csv";
pub const PROCESSED_FILE: &str = "processed.csv";
pub const PROCESSED_SUMMARY_FILE: &str = "processed.toml";

/// Scalar outcome of one storage run.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub efficiency: f64,
    pub leak_level: f64,
    /// Retrieved minus leak phase, each referred to its coupling beam (rad).
    pub phase_rad: f64,
    /// Closed-form stored-coherence phase at the effective Γ (rad).
    pub eit_phase_shift_rad: f64,
    pub input_energy: f64,
    pub time_steps: usize,
}

pub fn run_point(cfg: &ScenarioConfig) -> Result<(SimulationResult, Summary), CliError> {
    let p = cfg.to_params();
    let result = run_storage_with(
        &cfg.to_timeline(),
        &cfg.to_cell(),
        &p,
        &cfg.to_grid()?,
        &cfg.to_options(),
    )?;
    let closed = eit_phase_shift(&eit_core::bloch::LambdaParams {
        gamma_opt: cfg.effective_gamma()?,
        ..p
    })?;
    let summary = Summary {
        efficiency: storage_efficiency(&result)?,
        leak_level: leak_level(&result)?,
        phase_rad: result.relative_phase(),
        eit_phase_shift_rad: closed,
        input_energy: result.input_energy(),
        time_steps: result.time_grid.len(),
    };
    Ok((result, summary))
}

pub fn simulate(cfg: &ScenarioConfig, out: &Path, emit_traces: bool) -> Result<Summary, CliError> {
    create_dir(out)?;
    let (result, summary) = run_point(cfg)?;
    log::info!(
        "efficiency {:.4}, leak {:.4}, phase {:.4} rad over {} steps",
        summary.efficiency,
        summary.leak_level,
        summary.phase_rad,
        summary.time_steps
    );
    write_file(&out.join(RESULT_FILE), |w| Ok(result.write_columns(w)?))?;
    let text = toml::to_string(&summary).expect("summary serializes");
    write_file(&out.join(SUMMARY_FILE), |w| {
        w.write_all(text.as_bytes()).map_err(Into::into)
    })?;
    if emit_traces {
        let (traces, calibration) = synthesize_detector_data(cfg, &result)?;
        write_file(&out.join(TRACES_FILE), |w| Ok(write_traces(w, &traces)?))?;
        write_file(&out.join(CALIBRATION_FILE), |w| {
            Ok(write_traces(w, &calibration)?)
        })?;
    }
    Ok(summary)
}

/// Detector records of the exit field on a uniform sample grid, plus a cw
/// calibration scan at the configured peak probe intensity.
pub fn synthesize_detector_data(
    cfg: &ScenarioConfig,
    result: &SimulationResult,
) -> Result<(Vec<DetectorTrace>, Vec<DetectorTrace>), CliError> {
    let h = &cfg.homodyne;
    let hc = cfg.to_homodyne();
    let peak = result.timeline.probe_peak_rabi.norm();
    if !(peak > 0.0) {
        return Err(CliError::Usage("traces need a nonzero probe".into()));
    }
    let scale = h.probe_peak_intensity.sqrt() / peak;
    let t_end = *result.time_grid.last().expect("nonempty grid");
    let time = sample_times(0.0, t_end, h.sample_rate_hz);
    let field = result.lo_referenced_output();
    let probe: Vec<Complex64> = time
        .iter()
        .map(|&t| interpolate(&result.time_grid, &field, t) * scale)
        .collect();
    let traces = synthesize_scan(&time, &probe, &hc, h.n_phases, cfg.seed)?;

    // Noise streams after the signal shots so the two records are independent
    let cal_time = sample_times(0.0, h.calibration_duration_s, h.sample_rate_hz);
    let cw = vec![Complex64::new(h.probe_peak_intensity.sqrt(), 0.0); cal_time.len()];
    let n = h.n_phases as u64;
    let calibration = hc
        .scan_phases(h.n_phases)
        .into_par_iter()
        .enumerate()
        .map(|(k, phi)| {
            let mut rng = shot_rng(cfg.seed, n + k as u64);
            synthesize_trace(&cal_time, &cw, &hc, phi, k as u64, Some(&mut rng)).map(|s| s.trace)
        })
        .collect::<eit_core::Result<Vec<_>>>()?;
    Ok((traces, calibration))
}

fn sample_times(start: f64, end: f64, rate: f64) -> Vec<f64> {
    let n = ((end - start) * rate).floor() as usize;
    (0..=n).map(|k| start + k as f64 / rate).collect()
}

/// Linear interpolation on a sorted grid; clamps outside it.
fn interpolate(grid: &[f64], values: &[Complex64], t: f64) -> Complex64 {
    let i = grid.partition_point(|&x| x <= t);
    if i == 0 {
        return values[0];
    }
    if i == grid.len() {
        return values[grid.len() - 1];
    }
    let (t0, t1) = (grid[i - 1], grid[i]);
    let f = (t - t0) / (t1 - t0);
    values[i - 1] * (1.0 - f) + values[i] * f
}

/// One row of the sweep table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub efficiency: f64,
    pub leak_level: f64,
    pub phase_rad: f64,
}

pub fn sweep(cfg: &ScenarioConfig, out: &Path) -> Result<PathBuf, CliError> {
    create_dir(out)?;
    let values = cfg.sweep_values();
    match cfg.sweep.mode {
        SweepMode::ClosedForm => {
            let curve = closed_form_curve(cfg, &values)?;
            let path = out.join(PHASE_CURVE_FILE);
            write_file(&path, |w| Ok(write_phase_table(w, &curve)?))?;
            Ok(path)
        }
        SweepMode::Simulate => {
            let rows = simulate_sweep(cfg, cfg.sweep.axis, &values)?;
            let path = out.join(SWEEP_FILE);
            write_file(&path, |w| write_sweep_table(w, &rows))?;
            Ok(path)
        }
    }
}

/// `(Δ in rad/s, |φ_EIT|)` at the configured Γ, Γ_R and |Ω_C|.
pub fn closed_form_curve(cfg: &ScenarioConfig, detunings_hz: &[f64]) -> Result<Vec<(f64, f64)>, CliError> {
    let s = &cfg.system;
    let d: Vec<f64> = detunings_hz.iter().map(|&x| angular(x)).collect();
    Ok(phase_vs_detuning_curve(
        angular(s.gamma_raman_hz),
        angular(s.gamma_opt_hz),
        angular(s.coupling_rabi_hz),
        &d,
    )?)
}

/// Runs every point in parallel; rows come back in axis order.
pub fn simulate_sweep(cfg: &ScenarioConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    values
        .par_iter()
        .map(|&v| {
            let (_, s) = run_point(&cfg.at_axis(axis, v))?;
            log::info!("{axis:?} = {v:e}: efficiency {:.4}", s.efficiency);
            Ok(SweepRow {
                axis_value: v,
                efficiency: s.efficiency,
                leak_level: s.leak_level,
                phase_rad: s.phase_rad,
            })
        })
        .collect()
}

pub fn write_sweep_table<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    out.write_record(["axis_value", "efficiency", "leak_level", "phase_rad"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record(
            [r.axis_value, r.efficiency, r.leak_level, r.phase_rad].map(|v| format!("{v:.16e}")),
        )
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| CliError::Core(e.into()))?;
    Ok(())
}

/// How the contrast α is obtained in [`process_traces`].
#[derive(Debug, Clone)]
pub enum ContrastSource {
    Known(f64),
    /// Estimated from a cw calibration scan (whole record as the segment).
    Calibration(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcessedSummary {
    pub relative_phase_rad: f64,
    pub contrast: f64,
    pub lo_intensity: f64,
    pub clamped_bins: usize,
}

/// Recovers I_P(t) and the retrieved-vs-leak phase from trace files. The
/// leak and retrieved windows come from the scenario timeline.
pub fn process_traces(
    cfg: &ScenarioConfig,
    inputs: &[PathBuf],
    lo_intensity: f64,
    contrast: ContrastSource,
    out: &Path,
) -> Result<ProcessedSummary, CliError> {
    let mut traces = Vec::new();
    for path in inputs {
        traces.extend(read_trace_file(path)?);
    }
    let alpha = match contrast {
        ContrastSource::Known(a) => a,
        ContrastSource::Calibration(path) => {
            let cal = read_trace_file(&path)?;
            let t = &cal
                .first()
                .ok_or_else(|| CliError::Usage("empty calibration file".into()))?
                .time;
            let segment = Window::new(t[0], t[t.len() - 1]);
            let a = estimate_contrast(&cal, lo_intensity, None, segment)?;
            log::info!("estimated contrast {a:.4}");
            a
        }
    };
    let env = extract_envelopes(&traces, cfg.homodyne.smoothing)?;
    let inv = invert_interference(&env, lo_intensity, alpha)?;
    let tl = cfg.to_timeline();
    let phase = extract_relative_phase(
        &traces,
        tl.leak_window(),
        tl.retrieved_window(cfg.solver.retrieval_rise_times),
    )?;
    let summary = ProcessedSummary {
        relative_phase_rad: phase,
        contrast: alpha,
        lo_intensity,
        clamped_bins: inv.clamped.iter().filter(|&&c| c).count(),
    };
    create_dir(out)?;
    write_file(&out.join(PROCESSED_FILE), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_s", "probe_intensity"])
            .map_err(|e| CliError::Core(e.into()))?;
        for (t, ip) in inv.time.iter().zip(&inv.probe_intensity) {
            out.write_record([format!("{t:.16e}"), format!("{ip:.16e}")])
                .map_err(|e| CliError::Core(e.into()))?;
        }
        out.flush().map_err(|e| CliError::Core(e.into()))?;
        Ok(())
    })?;
    let text = toml::to_string(&summary).expect("summary serializes");
    write_file(&out.join(PROCESSED_SUMMARY_FILE), |w| {
        w.write_all(text.as_bytes()).map_err(Into::into)
    })?;
    Ok(summary)
}

fn read_trace_file(path: &Path) -> Result<Vec<DetectorTrace>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_traces(f).map_err(|e| match e {
        eit_core::Error::TraceFormat(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        other => other.into(),
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let grid = [0.0, 1.0, 3.0];
        let v = [
            Complex64::new(0.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(2.0, 4.0),
        ];
        assert_eq!(interpolate(&grid, &v, 0.5), Complex64::new(1.0, 0.0));
        assert_eq!(interpolate(&grid, &v, 2.0), Complex64::new(2.0, 2.0));
        assert_eq!(interpolate(&grid, &v, -1.0), v[0]);
        assert_eq!(interpolate(&grid, &v, 9.0), v[2]);
    }

    #[test]
    fn sample_grid_is_uniform() {
        let t = sample_times(0.0, 1e-6, 250e6);
        assert_eq!(t.len(), 251);
        assert_eq!(t[1], 4e-9);
    }
}
