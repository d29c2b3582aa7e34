//! Large-width asymptotics: every dynamical regime that survives m -> infinity.
//!
//! Each submodule owns one family of limits. `lazy` covers kernel-scale
//! second-layer initialization (closed forms on times of order 1/m, a reduced
//! two-field Volterra system on times of order one). `mean_field` covers
//! order-one initialization (closed forms, the sqrt(m)-time system, the
//! alignment ODEs and their 1/m corrections). `pspin` is the time-changed
//! reduction of the sqrt(m) system to gradient flow on a random landscape,
//! and `fixed_abar` the infinite-width limit at fixed samples-per-parameter.

pub mod fixed_abar;
pub mod lazy;
pub mod mean_field;
pub mod pspin;

use std::fmt;
use std::str::FromStr;

use crate::dmft::SecondLayerInit;
use crate::kernels::{KernelError, Model};

pub use fixed_abar::FixedAbar;
pub use lazy::{LazyPnRegime1, LazyRegime2, LazySiRegime1};
pub use mean_field::{
    mf_corrections_solve, mf_ode_solve, mf_sqrtm_solve, CorrectionSlopes, MfCorrections,
    MfOdeSolution, MfPnRegime1, SqrtmSolution,
};
pub use pspin::{pspin_solve, PspinState};

/// Parameters common to the asymptotic descriptions: the per-neuron sample
/// ratio alpha = n / (m d) held fixed as the width grows, the second-layer
/// initialization scale, and the data model.
#[derive(Debug, Clone)]
pub struct RegimeParams {
    pub alpha: f64,
    pub init: SecondLayerInit,
    pub model: Model,
}

impl RegimeParams {
    pub fn new(alpha: f64, init: SecondLayerInit, model: Model) -> Result<Self, ScalingError> {
        if !(alpha > 0.0) {
            return Err(ScalingError::BadAlpha(alpha));
        }
        Ok(Self { alpha, init, model })
    }

    pub(crate) fn gamma0(&self) -> Result<f64, ScalingError> {
        match self.init {
            SecondLayerInit::Lazy { gamma0 } => Ok(gamma0),
            SecondLayerInit::MeanField { .. } => Err(ScalingError::WrongInit {
                expected: "lazy (gamma0)",
            }),
        }
    }

    pub(crate) fn a0(&self) -> Result<f64, ScalingError> {
        match self.init {
            SecondLayerInit::MeanField { a0 } => Ok(a0),
            SecondLayerInit::Lazy { .. } => Err(ScalingError::WrongInit {
                expected: "mean-field (a0)",
            }),
        }
    }
}

/// Selector for the asymptotic descriptions, used by the command-line
/// `--regime` switch. Names follow the solver functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LazyPnRegime1,
    LazyPnRegime2,
    LazySiRegime1,
    MfPnRegime1,
    MfSqrtm,
    MfOde,
    MfCorrections,
    Pspin,
    FixedAbar,
}

impl Regime {
    pub const ALL: [Regime; 9] = [
        Regime::LazyPnRegime1,
        Regime::LazyPnRegime2,
        Regime::LazySiRegime1,
        Regime::MfPnRegime1,
        Regime::MfSqrtm,
        Regime::MfOde,
        Regime::MfCorrections,
        Regime::Pspin,
        Regime::FixedAbar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::LazyPnRegime1 => "lazy_pn_regime1",
            Regime::LazyPnRegime2 => "lazy_pn_regime2",
            Regime::LazySiRegime1 => "lazy_si_regime1",
            Regime::MfPnRegime1 => "mf_pn_regime1",
            Regime::MfSqrtm => "mf_sqrtm",
            Regime::MfOde => "mf_ode",
            Regime::MfCorrections => "mf_corrections",
            Regime::Pspin => "pspin",
            Regime::FixedAbar => "fixed_abar",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = ScalingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| ScalingError::UnknownRegime(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScalingError {
    #[error("sample ratio alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("this regime needs {expected} initialization")]
    WrongInit { expected: &'static str },
    #[error("this regime is defined for pure-noise targets only")]
    NotPureNoise,
    #[error("the relaxation rate vanishes (alpha * a0^2 * h'(0) = 0)")]
    ZeroRate,
    #[error("the landscape covariance must have no linear part here")]
    LinearPartPresent,
    #[error("the corrections system requires phi_hat = h and matching norms")]
    LinkKernelMismatch,
    #[error("baseline did not converge to perfect alignment: a = {a}, v = {v}")]
    BaselineNotConverged { a: f64, v: f64 },
    #[error("projector violated: |v_{neuron}| = {value} at t = {time}")]
    OverlapExceeded { neuron: usize, value: f64, time: f64 },
    #[error("unknown regime name {0:?}")]
    UnknownRegime(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Least-squares line through (xs, ys); returns (intercept, slope).
pub(crate) fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points for a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}
