use std::f64::consts::{PI, TAU};

use super::*;

fn cfg(contrast: f64, noise_rms: f64) -> HomodyneConfig {
    HomodyneConfig {
        lo_intensity: 1.0,
        contrast,
        scan_frequency: 0.02,
        scan_amplitude: 10.0 * PI,
        sample_rate: 50e6,
        noise_rms,
    }
}

fn grid(cfg: &HomodyneConfig, duration: f64) -> Vec<f64> {
    let n = (duration * cfg.sample_rate).round() as usize;
    (0..=n).map(|k| k as f64 / cfg.sample_rate).collect()
}

/// Leak around 4 µs and a retrieved pulse around 12 µs with an extra phase.
fn two_pulses(time: &[f64], leak_phase: f64, extra: f64) -> Vec<Complex64> {
    time.iter()
        .map(|&t| {
            let leak = 0.3 * (-((t - 4e-6) / 1e-6).powi(2)).exp();
            let ret = 0.2 * (-((t - 12e-6) / 1.5e-6).powi(2)).exp();
            Complex64::from_polar(leak, leak_phase) + Complex64::from_polar(ret, leak_phase + extra)
        })
        .collect()
}

const LEAK: Window = Window {
    start: 0.0,
    end: 8e-6,
};
const RET: Window = Window {
    start: 8e-6,
    end: 20e-6,
};

#[test]
fn config_validation() {
    assert!(cfg(1.65, 0.0).validate().is_ok());
    assert!(cfg(0.0, 0.0).validate().is_err());
    assert!(cfg(2.1, 0.0).validate().is_err());
    assert!(cfg(2.0, -1.0).validate().is_err());
}

#[test]
fn two_beam_arithmetic() {
    let c = cfg(2.0, 0.0);
    let t = [0.0, 1e-6];
    let probe = [Complex64::new(0.2, 0.0), Complex64::from_polar(0.2, PI)];
    let s = synthesize_trace(&t, &probe, &c, 0.0, 0, None).unwrap();
    assert!((s.trace.intensity[0] - 1.44).abs() < 1e-12);
    assert!((s.trace.intensity[1] - 0.64).abs() < 1e-12);

    let s = synthesize_trace(&t, &[Complex64::new(0.1, 0.0); 2], &cfg(1.65, 0.0), 0.0, 0, None).unwrap();
    assert!((s.trace.intensity[0] - 1.175).abs() < 1e-12);

    let s = synthesize_trace(&t, &[Complex64::new(0.0, 0.0); 2], &c, 0.3, 0, None).unwrap();
    assert_eq!(s.trace.intensity, vec![1.0, 1.0]);
}

#[test]
fn noise_needs_a_source_and_is_reproducible() {
    let c = cfg(1.65, 0.01);
    let t = grid(&c, 2e-6);
    let probe = vec![Complex64::new(0.1, 0.0); t.len()];
    assert!(synthesize_trace(&t, &probe, &c, 0.0, 0, None).is_err());
    let a = synthesize_scan(&t, &probe, &c, 16, 7).unwrap();
    let b = synthesize_scan(&t, &probe, &c, 16, 7).unwrap();
    let other = synthesize_scan(&t, &probe, &c, 16, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, other);
    // a shot's noise depends only on the seed and its id
    let mut rng = shot_rng(7, 5);
    let five = synthesize_trace(&t, &probe, &c, a[5].lo_phase[0], 5, Some(&mut rng)).unwrap();
    assert_eq!(five.trace, a[5]);
}

#[test]
fn scan_slowness_guard() {
    let slow = cfg(1.65, 0.0);
    let t = [0.0, 30e-6];
    let p = [Complex64::new(0.1, 0.0); 2];
    assert!(
        !synthesize_trace(&t, &p, &slow, 0.0, 0, None)
            .unwrap()
            .scan_warning
    );
    let fast = HomodyneConfig {
        scan_frequency: 1e4,
        ..slow
    };
    assert!(
        synthesize_trace(&t, &p, &fast, 0.0, 0, None)
            .unwrap()
            .scan_warning
    );
}

#[test]
fn coverage_rules() {
    assert_eq!(phase_coverage(&cfg(2.0, 0.0).scan_phases(64)), (64, TAU));
    let (n, span) = phase_coverage(&(0..64).map(|k| TAU * k as f64 / 64.0).collect::<Vec<_>>());
    assert_eq!(n, 64);
    assert!((span - TAU).abs() < 1e-12);
    let c = cfg(2.0, 0.0);
    let t = grid(&c, 1e-6);
    let probe = vec![Complex64::new(0.1, 0.0); t.len()];
    let few: Vec<DetectorTrace> = (0..4)
        .map(|k| {
            synthesize_trace(&t, &probe, &c, TAU * k as f64 / 4.0, k, None)
                .unwrap()
                .trace
        })
        .collect();
    assert!(matches!(
        extract_envelopes(&few, 1),
        Err(Error::PhaseCoverage { distinct: 4, .. })
    ));
    let half: Vec<DetectorTrace> = (0..16)
        .map(|k| {
            synthesize_trace(&t, &probe, &c, PI * k as f64 / 16.0, k, None)
                .unwrap()
                .trace
        })
        .collect();
    assert!(matches!(
        extract_envelopes(&half, 1),
        Err(Error::PhaseCoverage { .. })
    ));
}

#[test]
fn envelopes_of_constant_probe() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 1e-6);
    let ip: f64 = 0.04;
    let probe = vec![Complex64::from_polar(ip.sqrt(), 0.37); t.len()];
    let traces = synthesize_scan(&t, &probe, &c, 64, 0).unwrap();
    let env = extract_envelopes(&traces, 1).unwrap();
    let beat = c.contrast * ip.sqrt();
    for (u, l) in env.upper.iter().zip(&env.lower) {
        assert!((u - (1.0 + ip + beat)).abs() < 5e-3 * (1.0 + ip + beat));
        assert!((l - (1.0 + ip - beat)).abs() < 5e-3 * (1.0 + ip - beat));
        assert!(u >= l);
    }

    let zero = vec![Complex64::new(0.0, 0.0); t.len()];
    let env = extract_envelopes(&synthesize_scan(&t, &zero, &c, 64, 0).unwrap(), 1).unwrap();
    assert!(env.upper.iter().chain(&env.lower).all(|&v| v == 1.0));
}

#[test]
fn eight_phase_bias_bound() {
    let c = cfg(2.0, 0.0);
    let t = [0.0];
    let ip: f64 = 0.04;
    let beat = c.contrast * ip.sqrt();
    let bound = (1.0 - (PI / 8.0).cos()) * beat;
    for probe_phase in [0.0, 0.1, 0.2, PI / 8.0, 1.0] {
        let probe = [Complex64::from_polar(ip.sqrt(), probe_phase)];
        let traces: Vec<DetectorTrace> = (0..8)
            .map(|k| {
                synthesize_trace(&t, &probe, &c, TAU * k as f64 / 8.0, k, None)
                    .unwrap()
                    .trace
            })
            .collect();
        let env = extract_envelopes(&traces, 1).unwrap();
        let miss = 1.0 + ip + beat - env.upper[0];
        assert!(miss >= -1e-15 && miss <= bound + 1e-15, "{miss} {bound}");
    }
}

#[test]
fn inversion_examples() {
    let env = EnvelopePair {
        time: vec![0.0, 1.0, 2.0],
        upper: vec![1.44, 1.0, 0.99],
        lower: vec![0.64, 1.0, 0.97],
    };
    let inv = invert_interference(&env, 1.0, 2.0).unwrap();
    assert!((inv.probe_intensity[0] - 0.04).abs() < 1e-15);
    assert!(inv.residual[0] < 1e-15);
    assert_eq!(inv.probe_intensity[1], 0.0);
    assert_eq!(inv.probe_intensity[2], 0.0);
    assert_eq!(inv.clamped, vec![false, false, true]);
    assert!(inv.any_clamped());
    assert!(invert_interference(&env, 1.0, 0.0).is_err());
}

#[test]
fn noiseless_round_trip_recovers_intensity() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 20e-6);
    let probe = two_pulses(&t, 0.4, -1.0);
    let traces = synthesize_scan(&t, &probe, &c, 64, 0).unwrap();
    let inv = invert_interference(&extract_envelopes(&traces, 1).unwrap(), 1.0, c.contrast).unwrap();
    for (ip, a) in inv.probe_intensity.iter().zip(&probe) {
        assert!(
            (ip - a.norm_sqr()).abs() <= 1e-6 * a.norm_sqr().max(1e-3),
            "{ip} {}",
            a.norm_sqr()
        );
    }
    assert!(!inv.any_clamped());
}

#[test]
fn residual_vanishes_with_true_contrast() {
    // probe phase on the LO grid, so the extrema are sampled exactly
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 2e-6);
    let probe: Vec<Complex64> = t
        .iter()
        .map(|&x| Complex64::from_polar(0.3 * (-x / 1e-6).exp(), PI / 4.0))
        .collect();
    let traces = synthesize_scan(&t, &probe, &c, 64, 0).unwrap();
    let inv = invert_interference(&extract_envelopes(&traces, 1).unwrap(), 1.0, c.contrast).unwrap();
    assert!(inv.residual.iter().all(|&r| r <= 1e-9));
}

#[test]
fn contrast_estimation() {
    for alpha in [1.65, 2.0] {
        let c = cfg(alpha, 0.0);
        let t = grid(&c, 2e-6);
        let probe = vec![Complex64::new(0.3, 0.0); t.len()];
        let traces = synthesize_scan(&t, &probe, &c, 64, 0).unwrap();
        let seg = Window::new(0.0, 2e-6);
        let est = estimate_contrast(&traces, 1.0, Some(0.09), seg).unwrap();
        assert!((est - alpha).abs() < 0.01, "{est}");
        let inferred = estimate_contrast(&traces, 1.0, None, seg).unwrap();
        assert!((inferred - alpha).abs() < 0.01, "{inferred}");
    }
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 1e-6);
    let zero = vec![Complex64::new(0.0, 0.0); t.len()];
    let traces = synthesize_scan(&t, &zero, &c, 64, 0).unwrap();
    assert!(matches!(
        estimate_contrast(&traces, 1.0, None, Window::new(0.0, 1e-6)),
        Err(Error::ZeroProbe)
    ));
}

#[test]
fn contrast_estimation_with_one_percent_noise() {
    let c = cfg(1.65, 0.01);
    let t = grid(&c, 2e-6);
    let probe = vec![Complex64::new(0.3, 0.0); t.len()];
    for seed in 0..100 {
        let traces = synthesize_scan(&t, &probe, &c, 64, seed).unwrap();
        let est = estimate_contrast(&traces, 1.0, Some(0.09), Window::new(0.0, 2e-6)).unwrap();
        assert!((est - 1.65).abs() < 0.05, "seed {seed}: {est}");
    }
}

#[test]
fn relative_phase_examples() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 20e-6);
    for (extra, tol) in [(0.0, 1e-3), (-1.391, 1e-2)] {
        let traces = synthesize_scan(&t, &two_pulses(&t, 0.8, extra), &c, 64, 0).unwrap();
        let got = extract_relative_phase(&traces, LEAK, RET).unwrap();
        assert!((got - extra).abs() < tol, "{got} {extra}");
    }
    let traces = synthesize_scan(&t, &two_pulses(&t, 0.8, PI), &c, 64, 0).unwrap();
    let got = extract_relative_phase(&traces, LEAK, RET).unwrap();
    assert!((got.abs() - PI).abs() < 1e-2);
}

#[test]
fn relative_phase_ignores_global_lo_offset() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 20e-6);
    let traces = synthesize_scan(&t, &two_pulses(&t, -0.3, 0.9), &c, 64, 0).unwrap();
    let base = extract_relative_phase(&traces, LEAK, RET).unwrap();
    let shifted: Vec<DetectorTrace> = traces
        .iter()
        .map(|tr| DetectorTrace {
            lo_phase: tr.lo_phase.iter().map(|p| p + 1.234).collect(),
            ..tr.clone()
        })
        .collect();
    // the signal itself is unchanged, so shifting the recorded phases by a
    // constant shifts both window phases equally
    let moved = extract_relative_phase(&shifted, LEAK, RET).unwrap();
    assert!((base - moved).abs() < 1e-9);
}

#[test]
fn empty_window_is_degenerate() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 20e-6);
    let probe: Vec<Complex64> = two_pulses(&t, 0.0, 0.0)
        .into_iter()
        .zip(&t)
        .map(|(a, &x)| if x > 7.5e-6 { Complex64::new(0.0, 0.0) } else { a })
        .collect();
    let traces = synthesize_scan(&t, &probe, &c, 64, 0).unwrap();
    assert!(matches!(
        extract_relative_phase(&traces, LEAK, RET),
        Err(Error::DegenerateFit {
            window: "retrieved",
            ..
        })
    ));
}

#[test]
fn trace_file_round_trip_is_bit_exact() {
    let c = cfg(1.65, 0.0);
    let t = grid(&c, 1e-6);
    let traces = synthesize_scan(&t, &two_pulses(&t, 0.1, 0.2), &c, 8, 0).unwrap();
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces).unwrap();
    assert!(buf.starts_with(b"time_s,intensity,lo_phase_rad,shot_id\n"));
    let back = read_traces(buf.as_slice()).unwrap();
    assert_eq!(back, traces);
}

#[test]
fn trace_file_errors() {
    assert!(matches!(
        read_traces("a,b,c,d\n".as_bytes()),
        Err(Error::TraceFormat(_))
    ));
    let bad = "time_s,intensity,lo_phase_rad,shot_id\n0,1,0,0\n1,x,0,0\n";
    let err = read_traces(bad.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    let split = "time_s,intensity,lo_phase_rad,shot_id\n0,1,0,0\n0,1,0,1\n1,1,0,0\n";
    assert!(read_traces(split.as_bytes()).is_err());
}

#[test]
fn smoothing_preserves_constants_and_lines() {
    assert_eq!(smooth(&[2.0; 7], 5), vec![2.0; 7]);
    let line: Vec<f64> = (0..9).map(|k| k as f64).collect();
    let s = smooth(&line, 3);
    assert_eq!(&s[1..8], &line[1..8]);
}
