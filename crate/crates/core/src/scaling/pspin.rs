//! Gradient flow on a spherical random landscape with rotation-invariant
//! Gaussian disorder. After a monotone time change, the sqrt(m)-timescale
//! system of `mean_field` collapses onto exactly these equations, with the
//! centered covariance h~(z) = h(z) - h'(0) z as the only input; the
//! long-time energy of this flow is what sets the growth rate of the second
//! layer there.

use crate::kernels::CovarianceKernel;
use crate::timegrid::CausalField;

use super::ScalingError;

/// Correlation/response history of the landscape flow plus the running energy.
#[derive(Debug, Clone)]
pub struct PspinState {
    tilde_h: CovarianceKernel,
    eta: f64,
    c_d: CausalField,
    r_d: CausalField,
    nu: Vec<f64>,
    energy: Vec<f64>,
    m_k: Vec<f64>,
    m_c: Vec<f64>,
}

/// Integrates the landscape flow for `steps` steps of size `eta`.
///
/// `tilde_h` must have no linear part: a linear component is not scale
/// invariant on the sphere and belongs to the drift, not the disorder.
pub fn pspin_solve(
    tilde_h: &CovarianceKernel,
    eta: f64,
    steps: usize,
) -> Result<PspinState, ScalingError> {
    assert!(eta > 0.0, "step size must be positive");
    if tilde_h.coeffs().len() > 1 && tilde_h.coeffs()[1] != 0.0 {
        return Err(ScalingError::LinearPartPresent);
    }
    let rows = steps + 1;
    let mut c_d = CausalField::with_capacity(true, rows);
    let mut r_d = CausalField::with_capacity(false, rows);
    c_d.extend(&[1.0]).unwrap();
    r_d.extend(&[0.0]).unwrap();
    let mut state = PspinState {
        tilde_h: tilde_h.clone(),
        eta,
        c_d,
        r_d,
        nu: Vec::new(),
        energy: Vec::new(),
        m_k: Vec::new(),
        m_c: Vec::new(),
    };
    for _ in 0..steps {
        state.close_row();
        state.extend_row();
    }
    state.close_row();
    Ok(state)
}

impl PspinState {
    fn close_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let cd_row = self.c_d.row(t);
        let rd_row = self.r_d.row(t);
        self.m_k.clear();
        self.m_c.clear();
        let mut nu = 0.0;
        let mut energy = 0.0;
        for s in 0..=t {
            let hp = self.tilde_h.eval(cd_row[s], 1);
            let k = self.tilde_h.eval(cd_row[s], 2) * rd_row[s];
            self.m_k.push(k);
            self.m_c.push(hp);
            nu += k * cd_row[s] + hp * rd_row[s];
            energy += hp * rd_row[s];
        }
        self.nu.push(self.eta * nu);
        self.energy.push(-self.eta * energy);
    }

    fn extend_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let eta = self.eta;
        let nu_t = self.nu[t];
        let n = t + 1;

        let mut acc1 = vec![0.0; n];
        self.c_d.sym_matvec_add(&self.m_k, &mut acc1);

        let mut new_cd = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd_tp = self.r_d.row(tp);
            let mut acc2 = 0.0;
            for s in 0..=tp {
                acc2 += self.m_c[s] * rd_tp[s];
            }
            let f = -nu_t * self.c_d.get(t, tp) + eta * (acc1[tp] + acc2);
            new_cd[tp] = self.c_d.get(t, tp) + eta * f;
            if tp == t {
                new_cd[t + 1] = self.c_d.get(t, t) + 2.0 * eta * f;
            }
        }

        let mut acc_r = vec![0.0; n];
        for s in 0..=t {
            let rd_s = self.r_d.row(s);
            let k = self.m_k[s];
            for tp in 0..=s {
                acc_r[tp] += k * rd_s[tp];
            }
        }
        let mut new_rd = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd = self.r_d.get(t, tp);
            new_rd[tp] = rd + eta * (-nu_t * rd + eta * acc_r[tp]);
        }
        new_rd[t] += 1.0;
        new_rd[t + 1] = 0.0;

        self.c_d.extend(&new_cd).unwrap();
        self.r_d.extend(&new_rd).unwrap();
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn steps(&self) -> usize {
        self.nu.len().saturating_sub(1)
    }

    pub fn c_d(&self) -> &CausalField {
        &self.c_d
    }

    pub fn r_d(&self) -> &CausalField {
        &self.r_d
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Energy per coordinate along the flow.
    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    /// Last-time energy together with a convergence flag: converged means the
    /// relative change over the last fifth of the window stayed below 1e-3.
    pub fn energy_estimate(&self) -> (f64, bool) {
        let last = *self.energy.last().expect("at least one closed row");
        let start = self.energy.len() - self.energy.len() / 5;
        let scale = last.abs().max(1e-9);
        let converged = self.energy[start..]
            .iter()
            .all(|e| (e - last).abs() <= 1e-3 * scale);
        (last, converged)
    }
}
