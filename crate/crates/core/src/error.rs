use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate steady-state denominator (|D| = {0:e})")]
    DegenerateDenominator(f64),

    #[error("step size underflow at t = {t:e} s (proposed dt = {dt:e} s)")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("propagation diverged in slice {slice}: |amplitude| = {amplitude:e} exceeds 10x the input peak")]
    Divergence { slice: usize, amplitude: f64 },

    #[error("no transparency peak found (contrast {0:e})")]
    NoPeak(f64),

    #[error("insufficient local-oscillator phase coverage: {distinct} distinct phases spanning {span:.4} rad (need >= 8 spanning 2π)")]
    PhaseCoverage { distinct: usize, span: f64 },

    #[error("degenerate phase fit in {window} window: interference amplitude {amplitude:e} below 3x noise floor {floor:e}")]
    DegenerateFit {
        window: &'static str,
        amplitude: f64,
        floor: f64,
    },

    #[error("reference area is zero")]
    ZeroReference,

    #[error("probe intensity below detection threshold")]
    ZeroProbe,

    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("trace data: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
