//! Velocity classes of a Maxwell–Boltzmann gas and averaging over them.
//!
//! Coupling and probe co-propagate, so a class with Doppler shift `s` sees
//! both optical detunings shifted by `s` and an unchanged Raman detuning.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bloch::LambdaParams;
use crate::error::invalid;
use crate::Result;

/// Ratio of the effective optical width to the Doppler HWHM used in the
/// closed-form phase curves: Γ/2π = 0.4 GHz for a 0.9 GHz HWHM.
pub const EFFECTIVE_WIDTH_CALIBRATION: f64 = 0.4 / 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityClass {
    /// Doppler shift (rad/s).
    pub shift: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    classes: Vec<VelocityClass>,
    hwhm: f64,
}

/// Gaussian standard deviation for a given half width at half maximum.
pub fn sigma_from_hwhm(hwhm: f64) -> f64 {
    hwhm / (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Uniform trapezoidal quadrature of the Gaussian Doppler profile over
/// `±span_sigmas·σ`, renormalized to unit total weight.
///
/// A zero `hwhm` yields the single class at zero shift.
pub fn make_grid(hwhm: f64, n_classes: usize, span_sigmas: f64) -> Result<VelocityGrid> {
    if n_classes == 0 || n_classes % 2 == 0 {
        return invalid(format!("n_classes must be odd and >= 1 (got {n_classes})"));
    }
    if !(span_sigmas > 0.0) || !span_sigmas.is_finite() {
        return invalid(format!("span_sigmas must be > 0 (got {span_sigmas})"));
    }
    if !(hwhm >= 0.0) || !hwhm.is_finite() {
        return invalid(format!("hwhm must be >= 0 (got {hwhm})"));
    }
    if n_classes == 1 || hwhm == 0.0 {
        return Ok(VelocityGrid {
            classes: vec![VelocityClass {
                shift: 0.0,
                weight: 1.0,
            }],
            hwhm,
        });
    }
    let sigma = sigma_from_hwhm(hwhm);
    let half = (n_classes / 2) as i64;
    let h = span_sigmas * sigma / half as f64;
    let mut classes: Vec<VelocityClass> = (-half..=half)
        .map(|j| {
            let shift = j as f64 * h;
            let end = if j.abs() == half { 0.5 } else { 1.0 };
            let weight = end * (-0.5 * (shift / sigma).powi(2)).exp();
            VelocityClass { shift, weight }
        })
        .collect();
    normalize(&mut classes);
    Ok(VelocityGrid { classes, hwhm })
}

fn normalize(classes: &mut [VelocityClass]) {
    let total: f64 = classes.iter().map(|c| c.weight).sum();
    for c in classes.iter_mut() {
        c.weight /= total;
    }
}

impl VelocityGrid {
    pub fn classes(&self) -> &[VelocityClass] {
        &self.classes
    }

    pub fn hwhm(&self) -> f64 {
        self.hwhm
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Multiplies weights by `window(shift)`, drops classes whose weight
    /// becomes zero and renormalizes.
    pub fn with_window(&self, window: impl Fn(f64) -> f64) -> Result<Self> {
        let mut classes: Vec<VelocityClass> = self
            .classes
            .iter()
            .map(|c| VelocityClass {
                shift: c.shift,
                weight: c.weight * window(c.shift).max(0.0),
            })
            .filter(|c| c.weight > 0.0)
            .collect();
        if classes.is_empty() {
            return invalid("window removed every velocity class");
        }
        normalize(&mut classes);
        Ok(Self {
            classes,
            hwhm: self.hwhm,
        })
    }

    /// Keeps the central classes holding at least `fraction` of the weight.
    ///
    /// Optical pumping reaches only part of the Doppler profile; with no
    /// known functional form this is a hard window on the profile's core.
    pub fn pumped(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return invalid(format!("pumped fraction must be in (0, 1] (got {fraction})"));
        }
        if fraction >= 1.0 {
            return Ok(self.clone());
        }
        let mut order: Vec<&VelocityClass> = self.classes.iter().collect();
        order.sort_by(|a, b| a.shift.abs().total_cmp(&b.shift.abs()));
        let mut acc = 0.0;
        let mut cutoff = 0.0;
        for c in order {
            if acc >= fraction * (1.0 - 1e-12) {
                break;
            }
            acc += c.weight;
            cutoff = c.shift.abs();
        }
        self.with_window(|s| if s.abs() <= cutoff { 1.0 } else { 0.0 })
    }

    /// True when the shift list equals its own negation.
    pub fn is_symmetric(&self) -> bool {
        let n = self.classes.len();
        (0..n).all(|k| self.classes[k].shift == -self.classes[n - 1 - k].shift)
    }
}

/// `Σ_k w_k · response(shift_k)`.
///
/// Classes are evaluated in parallel; the sum runs in grid order so the
/// result does not depend on scheduling.
pub fn average_response<F>(grid: &VelocityGrid, response: F) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64> + Sync,
{
    let values: Vec<Complex64> = grid
        .classes
        .par_iter()
        .map(|c| response(c.shift).map(|v| v * c.weight))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().sum())
}

/// Averages a Λ-system response, shifting both optical detunings per class.
pub fn average_lambda_response<F>(grid: &VelocityGrid, p: &LambdaParams, response: F) -> Result<Complex64>
where
    F: Fn(&LambdaParams) -> Result<Complex64> + Sync,
{
    average_response(grid, |shift| response(&p.doppler_shifted(shift)))
}

/// Effective optical width for closed-form shortcuts: the override when
/// given, otherwise the HWHM scaled by [`EFFECTIVE_WIDTH_CALIBRATION`].
pub fn effective_gamma(grid: &VelocityGrid, override_gamma: Option<f64>) -> f64 {
    override_gamma.unwrap_or(grid.hwhm * EFFECTIVE_WIDTH_CALIBRATION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular;

    #[test]
    fn single_class_grid() {
        let g = make_grid(angular(0.9e9), 1, 4.0).unwrap();
        assert_eq!(
            g.classes(),
            &[VelocityClass {
                shift: 0.0,
                weight: 1.0
            }]
        );
    }

    #[test]
    fn even_or_empty_grids_rejected() {
        assert!(make_grid(1.0, 4, 4.0).is_err());
        assert!(make_grid(1.0, 0, 4.0).is_err());
        assert!(make_grid(1.0, 5, 0.0).is_err());
        assert!(make_grid(-1.0, 5, 4.0).is_err());
    }

    #[test]
    fn sigma_of_nominal_width() {
        let sigma = sigma_from_hwhm(angular(0.9e9));
        let expected = angular(0.9e9 / (2.0 * 2f64.ln()).sqrt());
        assert!((sigma - expected).abs() < 1e-6);
        assert!((sigma / angular(1e9) - 0.7646).abs() < 5e-4);
    }

    #[test]
    fn weights_normalized_and_shifts_symmetric() {
        for n in [3, 11, 41, 201] {
            let g = make_grid(angular(0.9e9), n, 4.0).unwrap();
            let total: f64 = g.classes().iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(g.classes().iter().all(|c| c.weight > 0.0));
            assert!(g.is_symmetric());
            let edge = g.classes().last().unwrap().shift;
            assert!((edge - 4.0 * sigma_from_hwhm(angular(0.9e9))).abs() < 1e-3);
        }
    }

    #[test]
    fn averages_of_constant_and_odd_responses() {
        let g = make_grid(angular(0.9e9), 101, 4.0).unwrap();
        let c = Complex64::new(0.3, -1.7);
        let avg = average_response(&g, |_| Ok(c)).unwrap();
        assert!((avg - c).norm() < 1e-14);
        let odd = average_response(&g, |s| Ok(Complex64::new(s / 1e9, (s / 3e9).powi(3)))).unwrap();
        assert!(odd.norm() < 1e-12);
    }

    #[test]
    fn errors_propagate_from_response() {
        let g = make_grid(1.0, 5, 3.0).unwrap();
        let r = average_response(&g, |s| {
            if s > 0.5 {
                invalid("boom")
            } else {
                Ok(Complex64::new(1.0, 0.0))
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn effective_gamma_rules() {
        let g = make_grid(angular(0.9e9), 41, 4.0).unwrap();
        assert!((effective_gamma(&g, None) / angular(0.4e9) - 1.0).abs() < 1e-12);
        assert_eq!(effective_gamma(&g, Some(angular(0.42e9))), angular(0.42e9));
        let z = make_grid(0.0, 1, 4.0).unwrap();
        assert_eq!(effective_gamma(&z, None), 0.0);
    }

    #[test]
    fn pumped_window_keeps_core() {
        let g = make_grid(angular(0.9e9), 41, 4.0).unwrap();
        let half = g.pumped(0.5).unwrap();
        assert!(half.len() < g.len());
        assert!(half.is_symmetric());
        let total: f64 = half.classes().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(g.pumped(1.0).unwrap(), g);
        assert!(g.pumped(0.0).is_err());
    }
}
