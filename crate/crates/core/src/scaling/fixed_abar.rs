//! Wide-network interpolation dynamics at fixed data-per-neuron ratio.
//!
//! Pure-noise fitting with the second layer pinned at one, on times of
//! order m: both the self-overlap and the (order-one) pair overlaps evolve,
//! and whether the train error reaches zero depends only on
//! alpha_bar = alpha * m. The relaxation time diverges at the interpolation
//! threshold, which is how the threshold is located numerically.

use crate::kernels::{CovarianceKernel, Model};
use crate::timegrid::{CausalField, ResponseCorrelation};

use super::ScalingError;

/// Volterra integrator for the fixed-ratio limit. Works in the rescaled
/// time t / m of the finite-width system.
#[derive(Debug, Clone)]
pub struct FixedAbar {
    kernel: CovarianceKernel,
    alpha_bar: f64,
    tau2: f64,
    eta: f64,
    c_d: CausalField,
    c_o: CausalField,
    r_d: CausalField,
    r_o: CausalField,
    sigma_c: CausalField,
    pair: ResponseCorrelation,
    nu: Vec<f64>,
    e_tr: Vec<f64>,
    m_rd: Vec<f64>,
    m_ro: Vec<f64>,
    m_cd: Vec<f64>,
    m_co: Vec<f64>,
}

impl FixedAbar {
    pub fn new(model: &Model, alpha_bar: f64, eta: f64) -> Result<Self, ScalingError> {
        Self::with_capacity(model, alpha_bar, eta, 1)
    }

    /// As [`FixedAbar::new`], preallocating for `rows_cap` grid rows.
    pub fn with_capacity(
        model: &Model,
        alpha_bar: f64,
        eta: f64,
        rows_cap: usize,
    ) -> Result<Self, ScalingError> {
        assert!(eta > 0.0, "step size must be positive");
        if !(alpha_bar > 0.0) {
            return Err(ScalingError::BadAlpha(alpha_bar));
        }
        if !model.link.is_pure_noise() {
            return Err(ScalingError::NotPureNoise);
        }
        let mut c_d = CausalField::with_capacity(true, rows_cap);
        let mut c_o = CausalField::with_capacity(true, rows_cap);
        let mut r_d = CausalField::with_capacity(false, rows_cap);
        let mut r_o = CausalField::with_capacity(false, rows_cap);
        c_d.extend(&[1.0]).unwrap();
        c_o.extend(&[0.0]).unwrap();
        r_d.extend(&[0.0]).unwrap();
        r_o.extend(&[0.0]).unwrap();
        Ok(Self {
            kernel: model.kernel.clone(),
            alpha_bar,
            tau2: model.link.tau2(),
            eta,
            c_d,
            c_o,
            r_d,
            r_o,
            sigma_c: CausalField::with_capacity(true, rows_cap),
            pair: ResponseCorrelation::new(eta, rows_cap),
            nu: Vec::new(),
            e_tr: Vec::new(),
            m_rd: Vec::new(),
            m_ro: Vec::new(),
            m_cd: Vec::new(),
            m_co: Vec::new(),
        })
    }

    /// Advances `steps` grid steps and closes the final row, so every series
    /// has `steps + 1` entries afterwards.
    pub fn run(&mut self, steps: usize) {
        if !self.is_closed() {
            self.close_row();
        }
        for _ in 0..steps {
            self.extend_row();
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
        let ab = self.alpha_bar;

        let cd_row = self.c_d.row(t);
        let co_row = self.c_o.row(t);
        let rd_row = self.r_d.row(t);
        let ro_row = self.r_o.row(t);
        let mut sc_row = vec![0.0; t + 1];
        let mut sr_row = vec![0.0; t + 1];
        for s in 0..=t {
            sc_row[s] = self.tau2 + self.kernel.eval(co_row[s], 0);
            sr_row[s] = self.kernel.eval(cd_row[s], 1) * rd_row[s]
                + self.kernel.eval(co_row[s], 1) * ro_row[s];
        }
        self.sigma_c.extend(&sc_row).unwrap();
        self.pair.extend_row(&sr_row, &self.sigma_c);

        let ra_row = self.pair.r_a.row(t);
        let ca_row = self.pair.c_a.row(t);
        self.e_tr.push(-0.5 * ca_row[t]);

        self.m_rd.clear();
        self.m_ro.clear();
        self.m_cd.clear();
        self.m_co.clear();
        for s in 0..=t {
            let hp_d = self.kernel.eval(cd_row[s], 1);
            let hpp_d = self.kernel.eval(cd_row[s], 2);
            let hp_o = self.kernel.eval(co_row[s], 1);
            let hpp_o = self.kernel.eval(co_row[s], 2);
            self.m_rd.push(ab * ca_row[s] * hpp_d * rd_row[s]);
            self.m_ro
                .push(ab * (ca_row[s] * hpp_o * ro_row[s] + ra_row[s] * hp_o));
            self.m_cd.push(ab * ca_row[s] * hp_d);
            self.m_co.push(ab * ca_row[s] * hp_o);
        }

        let mut mem = 0.0;
        for s in 0..=t {
            mem += self.m_rd[s] * cd_row[s] + self.m_ro[s] * co_row[s];
            mem += self.m_cd[s] * rd_row[s] + self.m_co[s] * ro_row[s];
        }
        self.nu.push(-eta * mem);
    }

    fn extend_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let eta = self.eta;
        let nu_t = self.nu[t];
        let n = t + 1;

        // Correlation memory over all earlier rows in one pass per field.
        let mut acc_d = vec![0.0; n];
        self.c_d.sym_matvec_add(&self.m_rd, &mut acc_d);
        self.c_o.sym_matvec_add(&self.m_ro, &mut acc_d);
        let mut m_sum = vec![0.0; n];
        for s in 0..=t {
            m_sum[s] = self.m_rd[s] + self.m_ro[s];
        }
        let mut acc_o = vec![0.0; n];
        self.c_o.sym_matvec_add(&m_sum, &mut acc_o);

        let mut new_cd = vec![0.0; n + 1];
        let mut new_co = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd_tp = self.r_d.row(tp);
            let ro_tp = self.r_o.row(tp);
            let mut acc2_d = 0.0;
            let mut acc2_o = 0.0;
            for s in 0..=tp {
                acc2_d += self.m_cd[s] * rd_tp[s] + self.m_co[s] * ro_tp[s];
                acc2_o += self.m_co[s] * (ro_tp[s] + rd_tp[s]);
            }
            let f_d = -nu_t * self.c_d.get(t, tp) - eta * (acc_d[tp] + acc2_d);
            let f_o = -nu_t * self.c_o.get(t, tp) - eta * (acc_o[tp] + acc2_o);
            new_cd[tp] = self.c_d.get(t, tp) + eta * f_d;
            new_co[tp] = self.c_o.get(t, tp) + eta * f_o;
            if tp == t {
                new_cd[t + 1] = self.c_d.get(t, t) + 2.0 * eta * f_d;
                new_co[t + 1] = self.c_o.get(t, t) + 2.0 * eta * f_o;
            }
        }

        // Response memory: kernels at the closing row against earlier rows.
        let mut acc_rd = vec![0.0; n];
        let mut acc_ro = vec![0.0; n];
        for s in 0..=t {
            let rd_s = self.r_d.row(s);
            let ro_s = self.r_o.row(s);
            let k_d = self.m_rd[s];
            let k_o = self.m_ro[s];
            for tp in 0..=s {
                acc_rd[tp] += k_d * rd_s[tp];
                acc_ro[tp] += k_d * ro_s[tp] + k_o * (rd_s[tp] + ro_s[tp]);
            }
        }
        let mut new_rd = vec![0.0; n + 1];
        let mut new_ro = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd = self.r_d.get(t, tp);
            let ro = self.r_o.get(t, tp);
            new_rd[tp] = rd + eta * (-nu_t * rd - eta * acc_rd[tp]);
            new_ro[tp] = ro + eta * (-nu_t * ro - eta * acc_ro[tp]);
        }
        new_rd[t] += 1.0;
        new_rd[t + 1] = 0.0;
        new_ro[t + 1] = 0.0;

        self.c_d.extend(&new_cd).unwrap();
        self.c_o.extend(&new_co).unwrap();
        self.r_d.extend(&new_rd).unwrap();
        self.r_o.extend(&new_ro).unwrap();
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn steps(&self) -> usize {
        self.nu.len().saturating_sub(1)
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    pub fn c_d(&self) -> &CausalField {
        &self.c_d
    }

    pub fn c_o(&self) -> &CausalField {
        &self.c_o
    }

    pub fn r_d(&self) -> &CausalField {
        &self.r_d
    }

    pub fn r_o(&self) -> &CausalField {
        &self.r_o
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn e_tr(&self) -> &[f64] {
        &self.e_tr
    }

    pub fn residual_corr(&self) -> &ResponseCorrelation {
        &self.pair
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CovarianceKernel, Model};
    use approx::assert_abs_diff_eq;

    fn threshold_model(tau: f64) -> Model {
        let kernel = CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap();
        Model::pure_noise(kernel, tau * tau)
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = threshold_model(1.0);
        assert!(matches!(
            FixedAbar::new(&model, 0.0, 0.1),
            Err(ScalingError::BadAlpha(_))
        ));
        let signal = Model::new(
            CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap(),
            crate::kernels::TargetLink::new(vec![0.0, 0.3], 0.5, 1.0).unwrap(),
        );
        assert!(matches!(
            FixedAbar::new(&signal, 1.0, 0.1),
            Err(ScalingError::NotPureNoise)
        ));
    }

    #[test]
    fn initial_error_is_half_noise_and_diagonal_stays_pinned() {
        let mut solver = FixedAbar::with_capacity(&threshold_model(0.7), 1.0, 0.1, 201).unwrap();
        solver.run(200);
        assert_abs_diff_eq!(solver.e_tr()[0], 0.49 / 2.0, epsilon = 1e-15);
        for t in 0..=200 {
            assert_abs_diff_eq!(solver.c_d().get(t, t), 1.0, epsilon = 1e-12);
        }
        assert_eq!(solver.c_o().get(0, 0), 0.0);
    }

    #[test]
    fn below_threshold_interpolates() {
        let mut solver = FixedAbar::with_capacity(&threshold_model(1.0), 0.5, 0.05, 2001).unwrap();
        let taken = solver.run_until_below(1e-7, 2000);
        assert!(taken < 2000, "no interpolation after t = 100");
        let last = *solver.e_tr().last().unwrap();
        assert!(last < 1e-7 && last > -1e-9, "e_tr = {last}");
    }

    #[test]
    fn above_threshold_plateaus() {
        let mut solver = FixedAbar::with_capacity(&threshold_model(1.0), 2.0, 0.1, 401).unwrap();
        solver.run(400);
        let e = solver.e_tr();
        assert!(e[400] > 0.01, "no plateau: e_tr = {}", e[400]);
        assert!(e[400] <= e[300] && e[400] > 0.9 * e[300]);
    }
}
