//! Activation covariance kernels and target links.
//!
//! For an activation with Hermite coefficients s_k, the covariance of the
//! post-activation field between two weight vectors with overlap q is the
//! polynomial h(q) = sum_k s_k^2 q^k. The teacher nonlinearity enters the
//! dynamics only through the coupling polynomial phi_hat(q) = sum_k s_k f_k q^k
//! (f_k are the target's Hermite coefficients), its total power ||phi||^2, and
//! the label-noise variance tau^2. Every solver and simulator in the crate is
//! parameterized by the pair of objects defined here.
//!
//! Conventions: coefficient index = monomial degree, entry 0 must vanish
//! (activations and targets are centered), and the degree is capped at 16,
//! which is far beyond anything the solvers are used for in practice.

use thiserror::Error;

/// Highest monomial degree accepted in kernel and link polynomials.
pub const MAX_DEGREE: usize = 16;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KernelError {
    #[error("constant Hermite coefficient must be zero (centered activation), got {0}")]
    NotCentered(f64),
    #[error("covariance coefficient for degree {degree} is negative: {value}")]
    NegativeCoefficient { degree: usize, value: f64 },
    #[error("polynomial degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("coefficient for degree {0} is not finite")]
    NotFinite(usize),
    #[error("negative variance parameter: {0}")]
    NegativeVariance(f64),
    #[error("h'(0) = 0: the linear response vanishes and the effective noise is undefined")]
    NoLinearComponent,
}

/// Covariance polynomial h(q) = sum_k c_k^2 q^k of a centered activation.
///
/// `coeffs[k]` stores c_k^2 (not c_k), so entries are nonnegative and entry 0
/// is zero. The polynomial is a covariance function on overlaps, hence only
/// |q| <= 1 is meaningful, but evaluation is total: solver trajectories
/// overshoot the unit interval by O(eta) and must not trip an assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceKernel {
    coeffs: Vec<f64>,
}

impl CovarianceKernel {
    /// Builds a kernel from squared Hermite coefficients, checking centering,
    /// nonnegativity, and the degree cap.
    pub fn new(coeffs: Vec<f64>) -> Result<Self, KernelError> {
        validate_len(coeffs.len())?;
        for (k, &c) in coeffs.iter().enumerate() {
            if !c.is_finite() {
                return Err(KernelError::NotFinite(k));
            }
            if c < 0.0 {
                return Err(KernelError::NegativeCoefficient { degree: k, value: c });
            }
        }
        if let Some(&c0) = coeffs.first() {
            if c0 != 0.0 {
                return Err(KernelError::NotCentered(c0));
            }
        }
        Ok(Self { coeffs })
    }

    /// Squared coefficients c_k^2, indexed by degree.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// h(q), h'(q), or h''(q) according to `order`.
    #[inline]
    pub fn eval(&self, q: f64, order: usize) -> f64 {
        eval_poly(&self.coeffs, q, order)
    }

    /// The kernel with its linear part removed: h~(z) = h(z) - h'(0) z.
    ///
    /// This is the covariance seen by the degrees of freedom transverse to the
    /// signal direction; it drives the p-spin-like glassy sector.
    pub fn tilde(&self) -> CovarianceKernel {
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() > 1 {
            coeffs[1] = 0.0;
        }
        CovarianceKernel { coeffs }
    }

    /// Largest degree with a nonzero coefficient (0 for the zero kernel).
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }
}

/// Builds the covariance kernel of an activation given its Hermite
/// coefficients s_k (signed): coeffs[k] = s_k^2.
pub fn hermite_to_kernel(s: &[f64]) -> Result<CovarianceKernel, KernelError> {
    validate_len(s.len())?;
    if let Some(&s0) = s.first() {
        if s0 != 0.0 {
            return Err(KernelError::NotCentered(s0));
        }
    }
    for (k, &sk) in s.iter().enumerate() {
        if !sk.is_finite() {
            return Err(KernelError::NotFinite(k));
        }
    }
    CovarianceKernel::new(s.iter().map(|&sk| sk * sk).collect())
}

/// Target-side data: the coupling polynomial phi_hat(q) = sum_k s_k f_k q^k,
/// the target power ||phi||^2 = sum_k f_k^2, and the label-noise variance.
///
/// Coefficients are the products s_k f_k, so they may have either sign. Only
/// the combination (phi_hat, ||phi||^2, tau^2) ever enters the dynamics; the
/// raw f_k are needed only when synthesizing actual datasets and live in the
/// simulator modules instead.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLink {
    coeffs: Vec<f64>,
    phi_norm2: f64,
    tau2: f64,
}

impl TargetLink {
    pub fn new(coeffs: Vec<f64>, phi_norm2: f64, tau2: f64) -> Result<Self, KernelError> {
        validate_len(coeffs.len())?;
        for (k, &c) in coeffs.iter().enumerate() {
            if !c.is_finite() {
                return Err(KernelError::NotFinite(k));
            }
        }
        if let Some(&c0) = coeffs.first() {
            if c0 != 0.0 {
                return Err(KernelError::NotCentered(c0));
            }
        }
        if !(phi_norm2 >= 0.0) {
            return Err(KernelError::NegativeVariance(phi_norm2));
        }
        if !(tau2 >= 0.0) {
            return Err(KernelError::NegativeVariance(tau2));
        }
        Ok(Self { coeffs, phi_norm2, tau2 })
    }

    /// Labels are pure noise: no target signal at all.
    pub fn pure_noise(tau2: f64) -> Result<Self, KernelError> {
        Self::new(vec![], 0.0, tau2)
    }

    /// phi_hat(q) and its first two derivatives, selected by `order`.
    #[inline]
    pub fn eval_phi_hat(&self, q: f64, order: usize) -> f64 {
        eval_poly(&self.coeffs, q, order)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn phi_norm2(&self) -> f64 {
        self.phi_norm2
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// True when the target carries no signal at all: labels are noise.
    pub fn is_pure_noise(&self) -> bool {
        self.phi_norm2 == 0.0 && self.coeffs.iter().all(|&c| c == 0.0)
    }
}

/// Kernel/link pair describing one learning problem.
#[derive(Debug, Clone)]
pub struct Model {
    pub kernel: CovarianceKernel,
    pub link: TargetLink,
}

impl Model {
    pub fn new(kernel: CovarianceKernel, link: TargetLink) -> Self {
        Self { kernel, link }
    }

    /// Pure-noise problem over the given activation covariance.
    pub fn pure_noise(kernel: CovarianceKernel, tau2: f64) -> Self {
        Self { kernel, link: TargetLink::pure_noise(tau2).expect("tau2 >= 0") }
    }
}

/// Effective noise variance tau'^2 = tau^2 + ||phi||^2 - phi_hat'(0)^2 / h'(0).
///
/// After the signal overlap has equilibrated in the lazy regime, a single-index
/// target is indistinguishable from pure label noise at this variance: the
/// learnable linear component phi_hat'(0)^2 / h'(0) is subtracted and the rest
/// of the target acts as noise. Fails when h'(0) = 0, since the overlap then
/// never moves and no component is learned.
pub fn effective_noise(link: &TargetLink, kernel: &CovarianceKernel) -> Result<f64, KernelError> {
    let hp0 = kernel.eval(0.0, 1);
    if hp0 == 0.0 {
        return Err(KernelError::NoLinearComponent);
    }
    let phip0 = link.eval_phi_hat(0.0, 1);
    Ok(link.tau2() + link.phi_norm2() - phip0 * phip0 / hp0)
}

fn validate_len(len: usize) -> Result<(), KernelError> {
    if len > MAX_DEGREE + 1 {
        Err(KernelError::DegreeTooHigh(len - 1))
    } else {
        Ok(())
    }
}

/// Horner evaluation of the polynomial or one of its first two derivatives.
#[inline]
fn eval_poly(coeffs: &[f64], q: f64, order: usize) -> f64 {
    assert!(order <= 2, "only orders 0, 1, 2 are defined");
    let n = coeffs.len();
    let mut acc = 0.0;
    match order {
        0 => {
            for k in (0..n).rev() {
                acc = acc * q + coeffs[k];
            }
        }
        1 => {
            for k in (1..n).rev() {
                acc = acc * q + coeffs[k] * k as f64;
            }
        }
        _ => {
            for k in (2..n).rev() {
                acc = acc * q + coeffs[k] * (k * (k - 1)) as f64;
            }
        }
    }
    acc
}
