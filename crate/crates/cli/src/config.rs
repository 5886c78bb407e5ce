//! Scenario files.
//!
//! Frequencies are ordinary frequencies in Hz (the "X/2π" values); they are
//! converted to rad/s once, in the `to_*` builders.

use std::f64::consts::PI;
use std::path::Path;

use eit_core::bloch::LambdaParams;
use eit_core::doppler::{effective_gamma, make_grid, VelocityGrid};
use eit_core::homodyne::HomodyneConfig;
use eit_core::protocol::{CellConfig, DecayConvention, FieldTimeline, StorageOptions};
use eit_core::{angular, Complex64};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Root of every noise stream.
    pub seed: u64,
    pub system: SystemSection,
    pub cell: CellSection,
    pub timeline: TimelineSection,
    pub doppler: DopplerSection,
    pub solver: SolverSection,
    pub homodyne: HomodyneSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub gamma_opt_hz: f64,
    pub gamma_raman_hz: f64,
    /// Excited-state population decay rate (1/s, not divided by 2π).
    pub gamma_pol_per_s: f64,
    pub coupling_rabi_hz: f64,
    pub coupling_phase_rad: f64,
    pub read_rabi_hz: f64,
    pub read_phase_rad: f64,
    pub probe_rabi_hz: f64,
    pub probe_phase_rad: f64,
    /// Optical detuning of the coupling from the Doppler-profile center.
    pub detuning_hz: f64,
    pub raman_detuning_hz: f64,
    pub decay_convention: Convention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Efficiency,
    Amplitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub length_m: f64,
    pub absorption_depth: f64,
    pub n_slices: usize,
    pub pumped_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_attenuation_per_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimelineSection {
    pub probe_rise_time_s: f64,
    pub probe_cutoff_time_s: f64,
    pub coupling_off_time_s: f64,
    pub storage_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DopplerSection {
    pub hwhm_hz: f64,
    pub n_classes: usize,
    pub span_sigmas: f64,
    /// Homogeneous width used by closed-form comparisons; defaults to the
    /// calibrated fraction of the Doppler HWHM.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_gamma_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt_max_s: f64,
    pub ramp_time_s: f64,
    pub retrieval_rise_times: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomodyneSection {
    pub lo_intensity: f64,
    pub contrast: f64,
    pub scan_frequency_hz: f64,
    pub scan_amplitude_rad: f64,
    pub sample_rate_hz: f64,
    pub noise_rms: f64,
    pub n_phases: usize,
    /// Detector intensity of the probe at the input peak.
    pub probe_peak_intensity: f64,
    /// Length of the cw calibration record.
    pub calibration_duration_s: f64,
    pub smoothing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    /// Coupling detuning (Hz).
    Detuning,
    /// Storage time (s).
    StorageTime,
    /// Coupling power as a fraction of the configured one.
    CouplingPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Simulate,
    /// Closed-form phase curve only; requires the detuning axis.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub mode: SweepMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            system: SystemSection::default(),
            cell: CellSection::default(),
            timeline: TimelineSection::default(),
            doppler: DopplerSection::default(),
            solver: SolverSection::default(),
            homodyne: HomodyneSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            gamma_opt_hz: 0.4e9,
            gamma_raman_hz: 14e3,
            gamma_pol_per_s: 1.4e8,
            coupling_rabi_hz: 23e6,
            coupling_phase_rad: 0.0,
            read_rabi_hz: 23e6,
            read_phase_rad: 0.0,
            probe_rabi_hz: 0.2e6,
            probe_phase_rad: 0.0,
            detuning_hz: 0.0,
            raman_detuning_hz: 0.0,
            decay_convention: Convention::Efficiency,
        }
    }
}

impl Default for CellSection {
    fn default() -> Self {
        Self {
            length_m: 0.06,
            absorption_depth: 6.8,
            n_slices: 32,
            pumped_fraction: 1.0,
            coupling_attenuation_per_m: None,
        }
    }
}

impl Default for TimelineSection {
    fn default() -> Self {
        Self {
            probe_rise_time_s: 2e-6,
            probe_cutoff_time_s: 16e-6,
            coupling_off_time_s: 16e-6,
            storage_time_s: 3e-6,
        }
    }
}

impl Default for DopplerSection {
    fn default() -> Self {
        // 101 classes keep the quadrature drift on doubling below 1e-6 out to
        // 2.2 GHz detuning (81 reach 1.3e-6)
        Self {
            hwhm_hz: 0.9e9,
            n_classes: 101,
            span_sigmas: 4.0,
            effective_gamma_hz: None,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = StorageOptions::default();
        Self {
            dt_max_s: o.dt_max,
            ramp_time_s: o.ramp_time,
            retrieval_rise_times: o.retrieval_rise_times,
        }
    }
}

impl Default for HomodyneSection {
    fn default() -> Self {
        Self {
            lo_intensity: 1.0,
            contrast: 1.65,
            scan_frequency_hz: 0.02,
            scan_amplitude_rad: 10.0 * PI,
            sample_rate_hz: 250e6,
            noise_rms: 0.0,
            n_phases: 64,
            probe_peak_intensity: 0.1,
            calibration_duration_s: 1e-6,
            smoothing: 1,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: Axis::Detuning,
            start: 0.0,
            stop: 2.2e9,
            points: 12,
            mode: SweepMode::Simulate,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|issue| issue.anchor(text))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn validate(&self) -> Result<(), Issue> {
        let s = &self.system;
        positive("system", "gamma_opt_hz", s.gamma_opt_hz)?;
        non_negative("system", "gamma_raman_hz", s.gamma_raman_hz)?;
        non_negative("system", "gamma_pol_per_s", s.gamma_pol_per_s)?;
        for (key, v) in [
            ("coupling_rabi_hz", s.coupling_rabi_hz),
            ("read_rabi_hz", s.read_rabi_hz),
            ("probe_rabi_hz", s.probe_rabi_hz),
        ] {
            non_negative("system", key, v)?;
        }
        for (key, v) in [
            ("coupling_phase_rad", s.coupling_phase_rad),
            ("read_phase_rad", s.read_phase_rad),
            ("probe_phase_rad", s.probe_phase_rad),
            ("detuning_hz", s.detuning_hz),
            ("raman_detuning_hz", s.raman_detuning_hz),
        ] {
            finite("system", key, v)?;
        }
        let c = &self.cell;
        positive("cell", "length_m", c.length_m)?;
        non_negative("cell", "absorption_depth", c.absorption_depth)?;
        check(c.n_slices >= 1, "cell", "n_slices", "must be >= 1")?;
        check(
            c.pumped_fraction > 0.0 && c.pumped_fraction <= 1.0,
            "cell",
            "pumped_fraction",
            "must be in (0, 1]",
        )?;
        if let Some(b) = c.coupling_attenuation_per_m {
            non_negative("cell", "coupling_attenuation_per_m", b)?;
        }
        let t = &self.timeline;
        positive("timeline", "probe_rise_time_s", t.probe_rise_time_s)?;
        positive("timeline", "probe_cutoff_time_s", t.probe_cutoff_time_s)?;
        check(
            t.coupling_off_time_s >= t.probe_cutoff_time_s && t.coupling_off_time_s.is_finite(),
            "timeline",
            "coupling_off_time_s",
            "must be finite and >= probe_cutoff_time_s",
        )?;
        non_negative("timeline", "storage_time_s", t.storage_time_s)?;
        let d = &self.doppler;
        positive("doppler", "hwhm_hz", d.hwhm_hz)?;
        check(d.n_classes % 2 == 1, "doppler", "n_classes", "must be odd")?;
        positive("doppler", "span_sigmas", d.span_sigmas)?;
        if let Some(g) = d.effective_gamma_hz {
            positive("doppler", "effective_gamma_hz", g)?;
        }
        let v = &self.solver;
        positive("solver", "dt_max_s", v.dt_max_s)?;
        non_negative("solver", "ramp_time_s", v.ramp_time_s)?;
        positive("solver", "retrieval_rise_times", v.retrieval_rise_times)?;
        let h = &self.homodyne;
        positive("homodyne", "lo_intensity", h.lo_intensity)?;
        check(
            h.contrast > 0.0 && h.contrast <= 2.0,
            "homodyne",
            "contrast",
            "must be in (0, 2]",
        )?;
        non_negative("homodyne", "scan_frequency_hz", h.scan_frequency_hz)?;
        finite("homodyne", "scan_amplitude_rad", h.scan_amplitude_rad)?;
        positive("homodyne", "sample_rate_hz", h.sample_rate_hz)?;
        non_negative("homodyne", "noise_rms", h.noise_rms)?;
        check(h.n_phases >= 2, "homodyne", "n_phases", "must be >= 2")?;
        positive("homodyne", "probe_peak_intensity", h.probe_peak_intensity)?;
        positive("homodyne", "calibration_duration_s", h.calibration_duration_s)?;
        check(h.smoothing >= 1, "homodyne", "smoothing", "must be >= 1")?;
        let w = &self.sweep;
        finite("sweep", "start", w.start)?;
        finite("sweep", "stop", w.stop)?;
        check(w.points >= 1, "sweep", "points", "must be >= 1")?;
        self.validate_sweep_values()?;
        check(
            w.mode == SweepMode::Simulate || w.axis == Axis::Detuning,
            "sweep",
            "mode",
            "closed_form needs axis = \"detuning\"",
        )?;

        // Cross-field invariants enforced by the physics types
        let anchor =
            |section: &'static str| move |e: eit_core::Error| Issue::new(section, None, e.to_string());
        self.to_params()
            .validate_for_evolution()
            .map_err(anchor("system"))?;
        self.to_timeline().validate().map_err(anchor("timeline"))?;
        self.to_cell().validate().map_err(anchor("cell"))?;
        self.to_grid().map_err(anchor("doppler"))?;
        self.to_homodyne().validate().map_err(anchor("homodyne"))?;
        Ok(())
    }

    fn validate_sweep_values(&self) -> Result<(), Issue> {
        let w = &self.sweep;
        match w.axis {
            Axis::Detuning => Ok(()),
            Axis::StorageTime => check(
                w.start >= 0.0 && w.stop >= 0.0,
                "sweep",
                "start",
                "storage times must be >= 0",
            ),
            Axis::CouplingPower => check(
                w.start >= 0.0 && w.stop >= 0.0,
                "sweep",
                "start",
                "power fractions must be >= 0",
            ),
        }
    }

    pub fn to_params(&self) -> LambdaParams {
        let s = &self.system;
        let delta_c = angular(s.detuning_hz);
        LambdaParams {
            rabi_coupling: Complex64::from_polar(angular(s.coupling_rabi_hz), s.coupling_phase_rad),
            rabi_coupling_read: Complex64::from_polar(angular(s.read_rabi_hz), s.read_phase_rad),
            rabi_probe: Complex64::from_polar(angular(s.probe_rabi_hz), s.probe_phase_rad),
            detuning_coupling: delta_c,
            detuning_probe: delta_c + angular(s.raman_detuning_hz),
            ..LambdaParams::with_rates(
                angular(s.gamma_opt_hz),
                angular(s.gamma_raman_hz),
                s.gamma_pol_per_s,
            )
        }
    }

    pub fn to_timeline(&self) -> FieldTimeline {
        let p = self.to_params();
        let t = &self.timeline;
        FieldTimeline {
            probe_rise_time: t.probe_rise_time_s,
            probe_cutoff_time: t.probe_cutoff_time_s,
            probe_peak_rabi: p.rabi_probe,
            coupling_on_rabi: p.rabi_coupling,
            coupling_off_time: t.coupling_off_time_s,
            storage_time: t.storage_time_s,
            coupling_read_rabi: p.rabi_coupling_read,
        }
    }

    pub fn to_cell(&self) -> CellConfig {
        let c = &self.cell;
        CellConfig {
            n_slices: c.n_slices,
            pumped_fraction: c.pumped_fraction,
            coupling_attenuation: c.coupling_attenuation_per_m,
            ..CellConfig::new(c.length_m, c.absorption_depth)
        }
    }

    pub fn to_grid(&self) -> eit_core::Result<VelocityGrid> {
        let d = &self.doppler;
        make_grid(angular(d.hwhm_hz), d.n_classes, d.span_sigmas)
    }

    /// Γ used for closed-form comparisons (rad/s).
    pub fn effective_gamma(&self) -> eit_core::Result<f64> {
        let grid = self.to_grid()?;
        Ok(effective_gamma(
            &grid,
            self.doppler.effective_gamma_hz.map(angular),
        ))
    }

    pub fn to_options(&self) -> StorageOptions {
        let v = &self.solver;
        StorageOptions {
            dt_max: v.dt_max_s,
            ramp_time: v.ramp_time_s,
            retrieval_rise_times: v.retrieval_rise_times,
            decay_convention: match self.system.decay_convention {
                Convention::Efficiency => DecayConvention::Efficiency,
                Convention::Amplitude => DecayConvention::Amplitude,
            },
        }
    }

    pub fn to_homodyne(&self) -> HomodyneConfig {
        let h = &self.homodyne;
        HomodyneConfig {
            lo_intensity: h.lo_intensity,
            contrast: h.contrast,
            scan_frequency: h.scan_frequency_hz,
            scan_amplitude: h.scan_amplitude_rad,
            sample_rate: h.sample_rate_hz,
            noise_rms: h.noise_rms,
        }
    }

    /// Evenly spaced axis values from `start` to `stop` inclusive.
    pub fn sweep_values(&self) -> Vec<f64> {
        let w = &self.sweep;
        if w.points == 1 {
            return vec![w.start];
        }
        (0..w.points)
            .map(|k| w.start + (w.stop - w.start) * k as f64 / (w.points - 1) as f64)
            .collect()
    }

    /// Copy of the scenario with the sweep axis set to `value`.
    pub fn at_axis(&self, axis: Axis, value: f64) -> Self {
        let mut c = self.clone();
        match axis {
            Axis::Detuning => c.system.detuning_hz = value,
            Axis::StorageTime => c.timeline.storage_time_s = value,
            Axis::CouplingPower => {
                // Rabi frequency scales with the square root of the power
                let f = value.sqrt();
                c.system.coupling_rabi_hz *= f;
                c.system.read_rabi_hz *= f;
            }
        }
        c
    }
}

/// A rejected value, located by section and key.
#[derive(Debug)]
struct Issue {
    section: &'static str,
    key: Option<&'static str>,
    message: String,
}

impl Issue {
    fn new(section: &'static str, key: Option<&'static str>, message: String) -> Self {
        Self {
            section,
            key,
            message,
        }
    }

    /// Attaches the source line of the offending key (or of its section
    /// header, or "default" when neither appears in the file).
    fn anchor(self, text: &str) -> CliError {
        let name = match self.key {
            Some(k) => format!("{}.{}", self.section, k),
            None => self.section.to_string(),
        };
        let place = match find_line(text, self.section, self.key) {
            Some(line) => format!("line {line}"),
            None => "default value".to_string(),
        };
        CliError::Config(format!("{place}: {name}: {}", self.message))
    }
}

fn find_line(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let (true, Some(k)) = (in_section, key) {
            if line.split('=').next().map(str::trim) == Some(k) {
                return Some(i + 1);
            }
        }
    }
    header_line
}

fn check(ok: bool, section: &'static str, key: &'static str, msg: &str) -> Result<(), Issue> {
    if ok {
        Ok(())
    } else {
        Err(Issue::new(section, Some(key), msg.to_string()))
    }
}

fn positive(section: &'static str, key: &'static str, v: f64) -> Result<(), Issue> {
    check(
        v > 0.0 && v.is_finite(),
        section,
        key,
        &format!("must be finite and > 0 (got {v})"),
    )
}

fn non_negative(section: &'static str, key: &'static str, v: f64) -> Result<(), Issue> {
    check(
        v >= 0.0 && v.is_finite(),
        section,
        key,
        &format!("must be finite and >= 0 (got {v})"),
    )
}

fn finite(section: &'static str, key: &'static str, v: f64) -> Result<(), Issue> {
    check(v.is_finite(), section, key, &format!("must be finite (got {v})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_convert_once() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let p = cfg.to_params();
        assert_eq!(p.gamma_raman, 2.0 * PI * 14e3);
        assert_eq!(p.rabi_coupling.re, 2.0 * PI * 23e6);
        assert_eq!(p.gamma_pol, 1.4e8);
        assert_eq!(cfg.to_cell().absorption_depth, 6.8);
        assert_eq!(cfg.to_grid().unwrap().len(), 101);
    }

    #[test]
    fn normalized_document_reloads_identically() {
        let mut cfg = ScenarioConfig::default();
        cfg.cell.coupling_attenuation_per_m = Some(3.25);
        cfg.system.coupling_phase_rad = 0.1 + 0.2;
        cfg.sweep.axis = Axis::CouplingPower;
        let back = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_line() {
        let err = ScenarioConfig::parse("seed = 3\n[cell]\nlength_m = 0.06\nlenght_m = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lenght_m") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn invalid_values_point_at_the_key() {
        let err = ScenarioConfig::parse("[doppler]\nhwhm_hz = 0.9e9\n\nn_classes = 80\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("line 4") && msg.contains("doppler.n_classes"),
            "{msg}"
        );
        let err = ScenarioConfig::parse("[homodyne]\ncontrast = 2.5\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn cross_field_violations_name_the_section() {
        let text = "[system]\ngamma_opt_hz = 1.0\ngamma_pol_per_s = 1.4e8\n";
        let msg = ScenarioConfig::parse(text).unwrap_err().to_string();
        assert!(msg.starts_with("config: line 1: system"), "{msg}");
    }

    #[test]
    fn sweep_grid_and_axis_overrides() {
        let mut cfg = ScenarioConfig::default();
        cfg.sweep.start = 1.0;
        cfg.sweep.stop = 3.0;
        cfg.sweep.points = 3;
        assert_eq!(cfg.sweep_values(), vec![1.0, 2.0, 3.0]);
        let quarter = cfg.at_axis(Axis::CouplingPower, 0.25);
        assert_eq!(quarter.system.coupling_rabi_hz, 11.5e6);
        assert_eq!(quarter.system.read_rabi_hz, 11.5e6);
        assert_eq!(cfg.at_axis(Axis::StorageTime, 5e-6).timeline.storage_time_s, 5e-6);
    }
}
