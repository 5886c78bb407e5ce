//! Figures of merit and fits: storage efficiency, leak level, decay-time
//! fits, closed-form phase curves and the optical-depth diagnostics.

use std::io::Write;

use crate::bloch::eit_phase;
use crate::error::invalid;
use crate::protocol::{SimulationResult, Window};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyPoint {
    /// τ (s)
    pub storage_time: f64,
    /// Δ (rad/s)
    pub detuning: f64,
    pub efficiency: f64,
}

impl EfficiencyPoint {
    pub fn new(storage_time: f64, detuning: f64, efficiency: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) {
            return invalid(format!("efficiency must be in [0, 1] (got {efficiency})"));
        }
        Ok(Self {
            storage_time,
            detuning,
            efficiency,
        })
    }
}

/// Retrieved energy over the no-atoms reference energy.
pub fn storage_efficiency(result: &SimulationResult) -> Result<f64> {
    let reference = result.input_energy();
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(result.window_energy(result.retrieved_window) / reference)
}

/// Leak energy over the incoming pulse energy.
pub fn leak_level(result: &SimulationResult) -> Result<f64> {
    let reference = result.input_energy();
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(result.window_energy(result.leak_window) / reference)
}

/// `∫_window signal dt / ∫ reference dt` for intensity traces, e.g. probe
/// intensities recovered from homodyne data.
pub fn area_ratio(
    time: &[f64],
    signal: &[f64],
    window: Window,
    reference_time: &[f64],
    reference: &[f64],
) -> Result<f64> {
    if time.len() != signal.len() || reference_time.len() != reference.len() {
        return invalid("time and value arrays differ in length");
    }
    let den = crate::trapezoid(reference_time, reference);
    if !(den > 0.0) {
        return Err(Error::ZeroReference);
    }
    let (t, y): (Vec<f64>, Vec<f64>) = time
        .iter()
        .zip(signal)
        .filter(|(t, _)| window.contains(**t))
        .map(|(&t, &y)| (t, y))
        .unzip();
    Ok(crate::trapezoid(&t, &y) / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub amplitude: f64,
    /// T_d (s); infinite when `non_decaying`.
    pub decay_time: f64,
    /// RMS of `A·exp(−τ/T_d) − η` over the points.
    pub residual_rms: f64,
    /// The data do not decrease with τ.
    pub non_decaying: bool,
    pub iterations: usize,
}

const MAX_FIT_ITERATIONS: usize = 500;

/// Least-squares fit of `A·exp(−τ/T_d)` to efficiencies (linear, not log,
/// residuals), Levenberg–Marquardt from a log-linear initial guess.
pub fn fit_exponential_decay(points: &[EfficiencyPoint]) -> Result<DecayFit> {
    if points.len() < 3 {
        return invalid("need at least 3 points");
    }
    let mut taus: Vec<f64> = points.iter().map(|p| p.storage_time).collect();
    taus.sort_by(f64::total_cmp);
    if taus.windows(2).any(|w| w[0] == w[1]) {
        return invalid("storage times must be distinct");
    }
    if points.iter().any(|p| !(p.efficiency > 0.0)) {
        return invalid("efficiencies must be > 0");
    }
    // work in τ/τ_max for conditioning
    let scale = taus[taus.len() - 1].abs().max(f64::MIN_POSITIVE);
    let x: Vec<f64> = points.iter().map(|p| p.storage_time / scale).collect();
    let y: Vec<f64> = points.iter().map(|p| p.efficiency).collect();
    let n = x.len() as f64;

    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rms_of = |a: f64, k: f64| -> f64 {
        let ss: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| (a * (-k * xi).exp() - yi).powi(2))
            .sum();
        (ss / n).sqrt()
    };
    if !(slope < 0.0) {
        let mean = y.iter().sum::<f64>() / n;
        return Ok(DecayFit {
            amplitude: mean,
            decay_time: f64::INFINITY,
            residual_rms: rms_of(mean, 0.0),
            non_decaying: true,
            iterations: 0,
        });
    }
    let mut a = (my - slope * mx).exp();
    let mut k = -slope;
    let mut lambda = 1e-3;
    let cost = |a: f64, k: f64| rms_of(a, k).powi(2) * n;
    let mut c = cost(a, k);
    for it in 1..=MAX_FIT_ITERATIONS {
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            let e = (-k * xi).exp();
            let r = a * e - yi;
            let (da, dk) = (e, -a * xi * e);
            j11 += da * da;
            j12 += da * dk;
            j22 += dk * dk;
            g1 += da * r;
            g2 += dk * r;
        }
        loop {
            let (m11, m22) = (j11 * (1.0 + lambda), j22 * (1.0 + lambda));
            let det = m11 * m22 - j12 * j12;
            let step_a = -(m22 * g1 - j12 * g2) / det;
            let step_k = -(m11 * g2 - j12 * g1) / det;
            let (na, nk) = (a + step_a, k + step_k);
            let nc = cost(na, nk);
            if nc.is_finite() && nc <= c {
                let small =
                    step_a.abs() <= 1e-14 * a.abs().max(1e-300) && step_k.abs() <= 1e-14 * k.abs().max(1e-12);
                a = na;
                k = nk;
                let improvement = c - nc;
                c = nc;
                lambda = (lambda * 0.3).max(1e-15);
                if small || improvement <= 1e-30 * c.max(1e-300) {
                    return Ok(finish(a, k, scale, rms_of(a, k), it));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // no downhill step left: at a minimum to working precision
                return Ok(finish(a, k, scale, rms_of(a, k), it));
            }
        }
    }
    Err(Error::NonConvergence(MAX_FIT_ITERATIONS))
}

fn finish(a: f64, k: f64, scale: f64, residual_rms: f64, iterations: usize) -> DecayFit {
    let non_decaying = k <= 0.0;
    DecayFit {
        amplitude: a,
        decay_time: if non_decaying { f64::INFINITY } else { scale / k },
        residual_rms,
        non_decaying,
        iterations,
    }
}

/// `(Δ, |φ_EIT(Δ)|)` from the closed-form stored-coherence phase.
pub fn phase_vs_detuning_curve(
    gamma_raman: f64,
    gamma_opt: f64,
    rabi_coupling: f64,
    detunings: &[f64],
) -> Result<Vec<(f64, f64)>> {
    detunings
        .iter()
        .map(|&d| {
            if !d.is_finite() {
                return invalid(format!("detuning must be finite (got {d})"));
            }
            eit_phase(gamma_raman, gamma_opt, rabi_coupling.abs(), d)
                .map(|phi| (d, phi.abs()))
                .ok_or_else(|| Error::InvalidParameter("|Ω_C|² + Γ_R Γ must be > 0".into()))
        })
        .collect()
}

/// `d = αL/2`
pub fn optical_depth(alpha_l: f64) -> f64 {
    alpha_l / 2.0
}

/// `T·d·γ`; storage is adiabatic when this is much larger than one.
pub fn adiabaticity_parameter(pulse_duration: f64, optical_depth: f64, gamma_pol: f64) -> f64 {
    pulse_duration * optical_depth * gamma_pol
}

/// `detuning_hz,efficiency,leak_level` rows (detuning in Hz, not rad/s).
pub fn write_efficiency_table<W: Write>(w: W, rows: &[(f64, f64, f64)]) -> Result<()> {
    write_table(
        w,
        &["detuning_hz", "efficiency", "leak_level"],
        rows.iter().map(|r| vec![r.0, r.1, r.2]),
    )
}

/// `storage_time_s,efficiency` rows.
pub fn write_decay_table<W: Write>(w: W, points: &[EfficiencyPoint]) -> Result<()> {
    write_table(
        w,
        &["storage_time_s", "efficiency"],
        points.iter().map(|p| vec![p.storage_time, p.efficiency]),
    )
}

/// `detuning_hz,abs_phase_rad` rows.
pub fn write_phase_table<W: Write>(w: W, curve: &[(f64, f64)]) -> Result<()> {
    write_table(
        w,
        &["detuning_hz", "abs_phase_rad"],
        curve.iter().map(|&(d, p)| vec![d / std::f64::consts::TAU, p]),
    )
}

fn write_table<W: Write>(w: W, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular;
    use crate::bloch::LambdaParams;
    use crate::doppler::make_grid;
    use crate::protocol::{run_storage, CellConfig, FieldTimeline};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn decay_points(td: f64, amp: f64, taus: &[f64]) -> Vec<EfficiencyPoint> {
        taus.iter()
            .map(|&t| EfficiencyPoint::new(t, 0.0, amp * (-t / td).exp()).unwrap())
            .collect()
    }

    fn taus(n: usize) -> Vec<f64> {
        (0..n).map(|k| 1e-6 + 29e-6 * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn point_bounds() {
        assert!(EfficiencyPoint::new(1e-6, 0.0, 1.2).is_err());
        assert!(EfficiencyPoint::new(1e-6, 0.0, -0.1).is_err());
        assert!(EfficiencyPoint::new(1e-6, 0.0, 0.11).is_ok());
    }

    #[test]
    fn exact_decay_recovered() {
        let pts = decay_points(11e-6, 0.2, &taus(10));
        let fit = fit_exponential_decay(&pts).unwrap();
        assert!((fit.decay_time / 11e-6 - 1.0).abs() < 1e-3);
        assert!((fit.amplitude - 0.2).abs() < 1e-9);
        assert!(fit.residual_rms < 1e-12);
        assert!(!fit.non_decaying);
    }

    #[test]
    fn constant_efficiency_is_non_decaying() {
        let pts: Vec<_> = taus(6)
            .iter()
            .map(|&t| EfficiencyPoint::new(t, 0.0, 0.15).unwrap())
            .collect();
        let fit = fit_exponential_decay(&pts).unwrap();
        assert!(fit.non_decaying);
        assert_eq!(fit.decay_time, f64::INFINITY);
        assert!((fit.amplitude - 0.15).abs() < 1e-15);
    }

    #[test]
    fn fit_preconditions() {
        let pts = decay_points(11e-6, 0.2, &taus(10));
        assert!(fit_exponential_decay(&pts[..2]).is_err());
        let dup = vec![pts[0], pts[0], pts[1]];
        assert!(fit_exponential_decay(&dup).is_err());
        let mut zero = pts.clone();
        zero[3].efficiency = 0.0;
        assert!(fit_exponential_decay(&zero).is_err());
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(1.0, 0.05).unwrap();
        let pts: Vec<_> = decay_points(11e-6, 0.2, &taus(12))
            .into_iter()
            .map(|p| EfficiencyPoint {
                efficiency: p.efficiency * noise.sample(&mut rng),
                ..p
            })
            .collect();
        let base = fit_exponential_decay(&pts).unwrap();
        let c = 3.7;
        let scaled: Vec<_> = pts
            .iter()
            .map(|p| EfficiencyPoint {
                efficiency: p.efficiency * c / 4.0,
                ..*p
            })
            .collect();
        let fit = fit_exponential_decay(&scaled).unwrap();
        assert!((fit.decay_time / base.decay_time - 1.0).abs() < 1e-9);
        assert!((fit.amplitude / (base.amplitude * c / 4.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noisy_fits_within_ten_percent() {
        let noise = Normal::new(1.0, 0.05).unwrap();
        let mut errors: Vec<f64> = (0..100u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts: Vec<_> = decay_points(11e-6, 0.2, &taus(12))
                    .into_iter()
                    .map(|p| EfficiencyPoint {
                        efficiency: p.efficiency * noise.sample(&mut rng),
                        ..p
                    })
                    .collect();
                (fit_exponential_decay(&pts).unwrap().decay_time / 11e-6 - 1.0).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[94] < 0.1, "95th percentile {}", errors[94]);
    }

    #[test]
    fn phase_curve_examples_and_shape() {
        let gr = angular(14e3);
        let c = phase_vs_detuning_curve(gr, angular(0.4e9), 0.0, &[0.0, angular(2.2e9)]).unwrap();
        assert_eq!(c[0].1, 0.0);
        assert!((c[1].1 - 5.5f64.atan()).abs() < 1e-12);
        let c = phase_vs_detuning_curve(gr, angular(0.42e9), angular(23e6), &[angular(2.2e9)]).unwrap();
        assert!((c[0].1 - 0.0575).abs() < 1e-4);

        let ds: Vec<f64> = (0..50).map(|k| angular(0.1e9) * k as f64).collect();
        let curve = phase_vs_detuning_curve(gr, angular(0.4e9), angular(5e6), &ds).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!(curve.iter().all(|&(_, p)| p < std::f64::consts::FRAC_PI_2));
        let neg: Vec<f64> = ds.iter().map(|d| -d).collect();
        let mirrored = phase_vs_detuning_curve(gr, angular(0.4e9), angular(5e6), &neg).unwrap();
        for (a, b) in curve.iter().zip(&mirrored) {
            assert_eq!(a.1, b.1);
        }
        let mut last = f64::INFINITY;
        for oc in [0.0, 5e6, 10e6, 23e6, 50e6] {
            let p = phase_vs_detuning_curve(gr, angular(0.4e9), angular(oc), &[angular(1e9)]).unwrap()[0].1;
            assert!(p < last);
            last = p;
        }
        assert!(phase_vs_detuning_curve(gr, 1.0, 0.0, &[f64::NAN]).is_err());
    }

    #[test]
    fn diagnostics() {
        assert_eq!(optical_depth(7.0), 3.5);
        assert_eq!(optical_depth(0.0), 0.0);
        assert_eq!(optical_depth(6.8), 3.4);
        assert_eq!(adiabaticity_parameter(2e-6, 3.5, 1.4e8), 980.0);
        assert_eq!(adiabaticity_parameter(4e-6, 3.5, 1.4e8), 1960.0);
        assert_eq!(adiabaticity_parameter(0.0, 3.5, 1.4e8), 0.0);
    }

    #[test]
    fn area_ratios() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let r: Vec<f64> = t.iter().map(|x| (-(x - 5.0f64).powi(2)).exp()).collect();
        let w = Window::new(0.0, 10.0);
        assert_eq!(area_ratio(&t, &vec![0.0; t.len()], w, &t, &r).unwrap(), 0.0);
        assert!((area_ratio(&t, &r, w, &t, &r).unwrap() - 1.0).abs() < 1e-15);
        let s: Vec<f64> = r.iter().map(|v| 0.11 * v).collect();
        assert!((area_ratio(&t, &s, w, &t, &r).unwrap() - 0.11).abs() < 1e-15);
        assert!(matches!(
            area_ratio(&t, &s, w, &t, &vec![0.0; t.len()]),
            Err(Error::ZeroReference)
        ));
    }

    fn sim(depth: f64) -> SimulationResult {
        let tl = FieldTimeline {
            probe_rise_time: 0.5e-6,
            probe_cutoff_time: 4e-6,
            probe_peak_rabi: Complex64::new(angular(0.2e6), 0.0),
            coupling_on_rabi: Complex64::new(angular(23e6), 0.0),
            coupling_off_time: 4e-6,
            storage_time: 1e-6,
            coupling_read_rabi: Complex64::new(angular(23e6), 0.0),
        };
        let p = LambdaParams::with_rates(angular(0.4e9), angular(14e3), 1.4e8).at_detuning(angular(0.5e9));
        let cell = CellConfig {
            n_slices: 8,
            ..CellConfig::new(0.06, depth)
        };
        run_storage(&tl, &cell, &p, &make_grid(angular(0.9e9), 11, 4.0).unwrap()).unwrap()
    }

    #[test]
    fn leak_level_of_transparent_cell_is_one() {
        let r = sim(0.0);
        assert!((leak_level(&r).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(storage_efficiency(&r).unwrap(), 0.0);
    }

    #[test]
    fn metrics_match_independent_quadrature() {
        let r = sim(6.8);
        // cutoff = coupling_off_time, so no jump lies inside either window and
        // the sampled amplitudes are the one-sided ones
        let direct = |w: Window| {
            let (t, y): (Vec<f64>, Vec<f64>) = r
                .time_grid
                .iter()
                .zip(&r.probe_out_amplitude)
                .filter(|(t, _)| w.contains(**t))
                .map(|(&t, a)| (t, a.norm_sqr()))
                .unzip();
            crate::trapezoid(&t, &y)
        };
        let (t, y): (Vec<f64>, Vec<f64>) = r
            .time_grid
            .iter()
            .zip(&r.reference_out_amplitude)
            .filter(|(t, _)| **t <= r.timeline.probe_cutoff_time)
            .map(|(&t, a)| (t, a.norm_sqr()))
            .unzip();
        let input = crate::trapezoid(&t, &y);
        let leak = leak_level(&r).unwrap();
        let eff = storage_efficiency(&r).unwrap();
        assert!((leak - direct(r.leak_window) / input).abs() < 1e-12);
        assert!((eff - direct(r.retrieved_window) / input).abs() < 1e-12);
        assert!(eff + leak <= 1.0 + 1e-9);
        assert!(eff > 0.0);
    }

    #[test]
    fn fully_absorbing_cell_without_coupling_has_no_leak() {
        let mut r = sim(0.0);
        r.probe_out_amplitude
            .iter_mut()
            .for_each(|z| *z = Complex64::new(0.0, 0.0));
        r.probe_out_steps
            .iter_mut()
            .for_each(|s| *s = [Complex64::new(0.0, 0.0); 2]);
        assert_eq!(leak_level(&r).unwrap(), 0.0);
    }

    #[test]
    fn tables_have_headers() {
        let mut buf = Vec::new();
        write_efficiency_table(&mut buf, &[(2.2e9, 0.11, 0.3)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("detuning_hz,efficiency,leak_level\n2.2000000000000000e9,"));
        let mut buf = Vec::new();
        write_phase_table(&mut buf, &[(angular(1e9), 0.5)]).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("1.0000000000000000e9,5.0000000000000000e-1"));
    }
}
