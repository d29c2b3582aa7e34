//! Infinite-width limits for kernel-scale (gamma0 * sqrt(m)) initialization.
//!
//! Two timescales matter. On times of order 1/m the weights barely move and
//! everything is linear: [`LazyPnRegime1`] and [`LazySiRegime1`] are closed
//! forms. On times of order one the first layer moves by a finite amount and
//! the system stays genuinely nonlinear: [`LazyRegime2`] integrates the
//! reduced two-field Volterra system with the shared residual-pair engine.
//! Single-index targets are handled by reduction to pure noise at the
//! effective noise level, the overlap having saturated in the first regime.

use crate::kernels::{effective_noise, CovarianceKernel};
use crate::timegrid::{CausalField, ResponseCorrelation};

use super::{RegimeParams, ScalingError};

/// Closed forms for pure-noise data, frozen second layer, times of order 1/m.
///
/// All fields relax exponentially at the rate rho = alpha * gamma0^2 * h'(0):
/// the network fits the linear component of the noise and nothing else.
/// Correlation deviations are reported in units of 1/m, i.e. the limits of
/// m * C_o and m * (C_d - 1).
#[derive(Debug, Clone)]
pub struct LazyPnRegime1 {
    rho: f64,
    gamma0: f64,
    tau2: f64,
    h1: f64,
    hp0: f64,
}

impl LazyPnRegime1 {
    pub fn new(params: &RegimeParams) -> Result<Self, ScalingError> {
        let gamma0 = params.gamma0()?;
        if !params.model.link.is_pure_noise() {
            return Err(ScalingError::NotPureNoise);
        }
        let hp0 = params.model.kernel.eval(0.0, 1);
        let rho = params.alpha * gamma0 * gamma0 * hp0;
        if rho == 0.0 {
            return Err(ScalingError::ZeroRate);
        }
        Ok(Self {
            rho,
            gamma0,
            tau2: params.model.link.tau2(),
            h1: params.model.kernel.eval(1.0, 0),
            hp0,
        })
    }

    /// Relaxation rate alpha * gamma0^2 * h'(0).
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Off-diagonal response, zero at equal times and saturating at -1.
    pub fn r_o(&self, t: f64, s: f64) -> f64 {
        if t <= s {
            0.0
        } else {
            (-self.rho * (t - s)).exp() - 1.0
        }
    }

    /// Off-diagonal correlation; the diagonal is `c_o(t, t)`.
    pub fn c_o(&self, t: f64, s: f64) -> f64 {
        (-self.rho * (t + s)).exp() - 1.0
    }

    /// Deviation of the self-overlap from one, in units of 1/m.
    pub fn c_d(&self, t: f64, s: f64) -> f64 {
        (-self.rho * (t + s)).exp()
            - 0.5 * ((-2.0 * self.rho * t).exp() + (-2.0 * self.rho * s).exp())
    }

    /// Train error on this timescale (equal to the test error here).
    pub fn e_tr(&self, t: f64) -> f64 {
        let g2 = self.gamma0 * self.gamma0;
        0.5 * (self.tau2 + g2 * self.h1 + g2 * self.hp0 * self.c_o(t, t))
    }

    /// Long-time limit of the train error: the entry value of the next regime.
    pub fn plateau(&self) -> f64 {
        let g2 = self.gamma0 * self.gamma0;
        0.5 * (self.tau2 + g2 * (self.h1 - self.hp0))
    }
}

/// Closed forms for a single-index target (latent dimension one) on times of
/// order 1/m: on top of the pure-noise relaxation the overlap with the latent
/// direction grows to v_inf, and the network learns the linear component of
/// the target. The overlap is reported in the sqrt(m)-rescaled variable.
#[derive(Debug, Clone)]
pub struct LazySiRegime1 {
    rho: f64,
    gamma0: f64,
    v_inf: f64,
    tau2: f64,
    phi_norm2: f64,
    phip0: f64,
    h1: f64,
    hp0: f64,
}

impl LazySiRegime1 {
    pub fn new(params: &RegimeParams) -> Result<Self, ScalingError> {
        let gamma0 = params.gamma0()?;
        let kernel = &params.model.kernel;
        let link = &params.model.link;
        let hp0 = kernel.eval(0.0, 1);
        if hp0 == 0.0 || gamma0 == 0.0 {
            return Err(ScalingError::ZeroRate);
        }
        let phip0 = link.eval_phi_hat(0.0, 1);
        Ok(Self {
            rho: params.alpha * gamma0 * gamma0 * hp0,
            gamma0,
            v_inf: phip0 / (gamma0 * hp0),
            tau2: link.tau2(),
            phi_norm2: link.phi_norm2(),
            phip0,
            h1: kernel.eval(1.0, 0),
            hp0,
        })
    }

    /// Saturation value of the rescaled overlap.
    pub fn v_inf(&self) -> f64 {
        self.v_inf
    }

    /// Rescaled overlap sqrt(m) * v at scaled time t.
    pub fn v_hat(&self, t: f64) -> f64 {
        self.v_inf * (1.0 - (-self.rho * t).exp())
    }

    /// Equal-time off-diagonal correlation in units of 1/m.
    pub fn c_o_diag(&self, t: f64) -> f64 {
        let v = self.v_hat(t);
        (-2.0 * self.rho * t).exp() - 1.0 + v * v
    }

    /// Train/test error on this timescale.
    pub fn e_hat(&self, t: f64) -> f64 {
        let g2 = self.gamma0 * self.gamma0;
        0.5 * (self.tau2 + self.phi_norm2 - 2.0 * self.gamma0 * self.phip0 * self.v_hat(t)
            + g2 * (self.h1 + self.hp0 * self.c_o_diag(t)))
    }

    /// Long-time limit of the error: noise floor plus the unlearnable part of
    /// the target plus the cost of the frozen random features.
    pub fn e_plateau(&self) -> f64 {
        let g2 = self.gamma0 * self.gamma0;
        0.5 * (self.tau2 + self.phi_norm2 - self.phip0 * self.phip0 / self.hp0
            + g2 * (self.h1 - self.hp0))
    }
}

/// Reduced system on times of order one for kernel-scale initialization:
/// diagonal correlation and response only, with the off-diagonal slaved to
/// them. Single-index targets run as pure noise at the effective noise level;
/// `v_inf2` records the squared saturated overlap used to map the
/// off-diagonal correlation back to the original variables.
#[derive(Debug, Clone)]
pub struct LazyRegime2 {
    tilde: CovarianceKernel,
    alpha: f64,
    gamma0: f64,
    tau2_eff: f64,
    v_inf2: f64,
    eta: f64,
    c_d: CausalField,
    r_d: CausalField,
    sigma_c: CausalField,
    pair: ResponseCorrelation,
    nu: Vec<f64>,
    e_tr: Vec<f64>,
    m_r: Vec<f64>,
    m_c: Vec<f64>,
}

impl LazyRegime2 {
    pub fn new(params: &RegimeParams, eta: f64) -> Result<Self, ScalingError> {
        Self::with_capacity(params, eta, 256)
    }

    pub fn with_capacity(
        params: &RegimeParams,
        eta: f64,
        steps_cap: usize,
    ) -> Result<Self, ScalingError> {
        assert!(eta > 0.0, "step size must be positive");
        let gamma0 = params.gamma0()?;
        let link = &params.model.link;
        let (tau2_eff, v_inf2) = if link.is_pure_noise() {
            (link.tau2(), 0.0)
        } else {
            let hp0 = params.model.kernel.eval(0.0, 1);
            if hp0 == 0.0 || gamma0 == 0.0 {
                return Err(ScalingError::ZeroRate);
            }
            let v_inf = link.eval_phi_hat(0.0, 1) / (gamma0 * hp0);
            (
                effective_noise(link, &params.model.kernel)?,
                v_inf * v_inf,
            )
        };
        let rows = steps_cap + 1;
        let mut c_d = CausalField::with_capacity(true, rows);
        let mut r_d = CausalField::with_capacity(false, rows);
        c_d.extend(&[1.0]).unwrap();
        r_d.extend(&[0.0]).unwrap();
        Ok(Self {
            tilde: params.model.kernel.tilde(),
            alpha: params.alpha,
            gamma0,
            tau2_eff,
            v_inf2,
            eta,
            c_d,
            r_d,
            sigma_c: CausalField::with_capacity(true, rows),
            pair: ResponseCorrelation::new(eta, rows),
            nu: Vec::new(),
            e_tr: Vec::new(),
            m_r: Vec::new(),
            m_c: Vec::new(),
        })
    }

    pub fn step(&mut self) {
        if !self.is_closed() {
            self.close_row();
        }
        self.extend_row();
    }

    pub fn run(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step();
        }
        if !self.is_closed() {
            self.close_row();
        }
    }

    /// Steps until the train error falls below `threshold` or `max_steps`
    /// extensions have been taken; returns the number of steps taken.
    pub fn run_until_below(&mut self, threshold: f64, max_steps: usize) -> usize {
        if !self.is_closed() {
            self.close_row();
        }
        let mut taken = 0;
        while *self.e_tr.last().unwrap() >= threshold && taken < max_steps {
            self.extend_row();
            self.close_row();
            taken += 1;
        }
        taken
    }

    fn is_closed(&self) -> bool {
        self.nu.len() == self.c_d.rows()
    }

    fn close_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let eta = self.eta;
        let g2 = self.gamma0 * self.gamma0;

        let cd_row = self.c_d.row(t);
        let rd_row = self.r_d.row(t);
        let mut sc_row = vec![0.0; t + 1];
        let mut sr_row = vec![0.0; t + 1];
        for s in 0..=t {
            sc_row[s] = self.tau2_eff + g2 * self.tilde.eval(cd_row[s], 0);
            sr_row[s] = g2 * self.tilde.eval(cd_row[s], 1) * rd_row[s];
        }
        self.sigma_c.extend(&sc_row).unwrap();
        self.pair.extend_row(&sr_row, &self.sigma_c);

        let ra_row = self.pair.r_a.row(t);
        let ca_row = self.pair.c_a.row(t);
        self.e_tr.push(-0.5 * ca_row[t]);

        self.m_r.clear();
        self.m_c.clear();
        for s in 0..=t {
            let hpt = self.tilde.eval(cd_row[s], 1);
            let hppt = self.tilde.eval(cd_row[s], 2);
            self.m_r
                .push(self.alpha * (ra_row[s] * hpt + ca_row[s] * hppt * rd_row[s]));
            self.m_c.push(self.alpha * hpt * ca_row[s]);
        }

        let mut mem = 0.0;
        for s in 0..=t {
            mem += self.m_r[s] * cd_row[s] + self.m_c[s] * rd_row[s];
        }
        self.nu.push(-eta * mem);
    }

    fn extend_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let eta = self.eta;
        let nu_t = self.nu[t];
        let n = t + 1;

        let mut acc1 = vec![0.0; n];
        self.c_d.sym_matvec_add(&self.m_r, &mut acc1);

        let mut new_cd = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd_tp = self.r_d.row(tp);
            let mut acc2 = 0.0;
            for s in 0..=tp {
                acc2 += self.m_c[s] * rd_tp[s];
            }
            let f = -nu_t * self.c_d.get(t, tp) - eta * (acc1[tp] + acc2);
            new_cd[tp] = self.c_d.get(t, tp) + eta * f;
            if tp == t {
                new_cd[t + 1] = self.c_d.get(t, t) + 2.0 * eta * f;
            }
        }

        let mut acc_r = vec![0.0; n];
        for s in 0..=t {
            let rd_s = self.r_d.row(s);
            let k = self.m_r[s];
            for tp in 0..=s {
                acc_r[tp] += k * rd_s[tp];
            }
        }
        let mut new_rd = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd = self.r_d.get(t, tp);
            new_rd[tp] = rd + eta * (-nu_t * rd - eta * acc_r[tp]);
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

    /// Noise level actually integrated: tau^2 itself for pure noise, the
    /// inflated effective value for a single-index target.
    pub fn effective_tau2(&self) -> f64 {
        self.tau2_eff
    }

    /// Squared saturated overlap carried over from the first regime; zero for
    /// pure noise.
    pub fn v_inf2(&self) -> f64 {
        self.v_inf2
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

    pub fn e_tr(&self) -> &[f64] {
        &self.e_tr
    }

    /// Off-diagonal correlation (times m) in the original variables.
    pub fn c_o_scaled(&self, t: usize, s: usize) -> f64 {
        -self.c_d.get(t, s) + self.v_inf2
    }

    /// Test error on this timescale; constant because no learning happens
    /// here, only (over)fitting of noise.
    pub fn e_ts_plateau(&self) -> f64 {
        let g2 = self.gamma0 * self.gamma0;
        0.5 * (self.tau2_eff + g2 * self.tilde.eval(1.0, 0))
    }
}
