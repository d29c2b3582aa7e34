//! Two-time mean-field solvers for gradient-flow training of two-layer
//! networks on Gaussian-equivalent data.
//!
//! [`general`] integrates the full per-neuron system: an m x m matrix of
//! correlation and response fields plus per-neuron second-layer weights,
//! signal overlaps, and Lagrange multipliers enforcing the spherical
//! constraint. [`symm`] integrates the reduction to six scalar unknowns that
//! holds when the initial condition treats all neurons identically; it is the
//! workhorse for large m. Both share the quadrature and residual-pair
//! machinery from [`crate::timegrid`] and agree to solver precision whenever
//! the symmetric ansatz applies, which is the strongest correctness check in
//! the test suite.

pub mod general;
pub mod symm;

/// Initialization scale of the second layer.
///
/// Mean-field runs pin a(0) directly; lazy runs pin gamma_0 = a(0) / sqrt(m),
/// so the first-layer dynamics freezes as m grows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecondLayerInit {
    MeanField { a0: f64 },
    Lazy { gamma0: f64 },
}

impl SecondLayerInit {
    /// The actual initial second-layer weight for a width-m network.
    pub fn a0(&self, m: usize) -> f64 {
        match *self {
            SecondLayerInit::MeanField { a0 } => a0,
            SecondLayerInit::Lazy { gamma0 } => gamma0 * (m as f64).sqrt(),
        }
    }
}
