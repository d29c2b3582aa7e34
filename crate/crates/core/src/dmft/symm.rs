//! Symmetric-initialization solver: six unknowns instead of m x m fields.
//!
//! When all neurons start with the same second-layer weight, zero signal
//! overlap, and an exchangeable first-layer geometry, the per-neuron system
//! collapses onto diagonal/off-diagonal correlation and response functions
//! C_d, C_o, R_d, R_o together with the scalars a(t), v(t), nu(t). Cost per
//! completed step T is O(T) memory and O(T^2) work, so a horizon of several
//! thousand steps is routine on one core.

use crate::kernels::Model;
use crate::timegrid::{CausalField, ResponseCorrelation};

use super::SecondLayerInit;

#[derive(Debug, Clone, Copy)]
pub struct SymmConfig {
    pub m: usize,
    /// Sample ratio n / d. At fixed alpha = n / (m d) pass alpha * m.
    pub alpha_bar: f64,
    pub eta: f64,
    pub init: SecondLayerInit,
    /// Keep a(t) = a(0) for the whole run; everything else still sees a(0).
    pub freeze_a: bool,
}

/// State of one symmetric-reduction integration.
///
/// The driver alternates closing a row (self-energies, residual pair, memory
/// kernels, nu at the newest time) with an Euler extension of all unknowns to
/// the next time. [`SymmDmft::run`] performs `steps` extensions and one final
/// close, so every recorded series has steps + 1 entries.
#[derive(Debug, Clone)]
pub struct SymmDmft {
    model: Model,
    cfg: SymmConfig,
    c_d: CausalField,
    c_o: CausalField,
    r_d: CausalField,
    r_o: CausalField,
    sigma_c: CausalField,
    pair: ResponseCorrelation,
    a: Vec<f64>,
    v: Vec<f64>,
    phi_v: Vec<f64>,
    nu: Vec<f64>,
    e_tr: Vec<f64>,
    e_ts: Vec<f64>,
    // Memory-kernel rows cached between the close and extend phases.
    m_rd: Vec<f64>,
    m_ro: Vec<f64>,
    m_cd: Vec<f64>,
    m_co: Vec<f64>,
    int_ra: f64,
}

impl SymmDmft {
    pub fn new(model: Model, cfg: SymmConfig) -> Self {
        Self::with_capacity(model, cfg, 256)
    }

    /// `steps_cap` sizes the triangular storage up front; exceeding it still
    /// works but reallocates.
    pub fn with_capacity(model: Model, cfg: SymmConfig, steps_cap: usize) -> Self {
        assert!(cfg.m >= 1, "width must be at least 1");
        assert!(cfg.eta > 0.0, "step size must be positive");
        let rows = steps_cap + 1;
        let mut c_d = CausalField::with_capacity(true, rows);
        let mut c_o = CausalField::with_capacity(true, rows);
        let mut r_d = CausalField::with_capacity(false, rows);
        let mut r_o = CausalField::with_capacity(false, rows);
        c_d.extend(&[1.0]).unwrap();
        c_o.extend(&[0.0]).unwrap();
        r_d.extend(&[0.0]).unwrap();
        r_o.extend(&[0.0]).unwrap();
        let a0 = cfg.init.a0(cfg.m);
        Self {
            model,
            cfg,
            c_d,
            c_o,
            r_d,
            r_o,
            sigma_c: CausalField::with_capacity(true, rows),
            pair: ResponseCorrelation::new(cfg.eta, rows),
            a: vec![a0],
            v: vec![0.0],
            phi_v: Vec::new(),
            nu: Vec::new(),
            e_tr: Vec::new(),
            e_ts: Vec::new(),
            m_rd: Vec::new(),
            m_ro: Vec::new(),
            m_cd: Vec::new(),
            m_co: Vec::new(),
            int_ra: 0.0,
        }
    }

    /// Closes the newest row if needed, then Euler-extends everything by one
    /// step.
    pub fn step(&mut self) {
        if !self.is_closed() {
            self.close_row();
        }
        self.extend_row();
    }

    /// Runs `steps` extensions and closes the final row, leaving series of
    /// length steps + 1.
    pub fn run(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step();
        }
        if !self.is_closed() {
            self.close_row();
        }
    }

    fn is_closed(&self) -> bool {
        self.nu.len() == self.c_d.rows()
    }

    /// Row T of the self-energies, the residual pair, the memory kernels, and
    /// nu(T), plus the recorded errors at time T.
    fn close_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let m = self.cfg.m as f64;
        let mm1 = m - 1.0;
        let eta = self.cfg.eta;
        let pref = self.cfg.alpha_bar / m;
        let kernel = &self.model.kernel;
        let link = &self.model.link;
        let tau2 = link.tau2();
        let phi2 = link.phi_norm2();

        let a_t = self.a[t];
        let v_t = self.v[t];
        let phi_t = link.eval_phi_hat(v_t, 0);
        let phip_t = link.eval_phi_hat(v_t, 1);
        self.phi_v.push(phi_t);

        // Kernel values along row T, reused by every assembly below.
        let cd_row = self.c_d.row(t);
        let co_row = self.c_o.row(t);
        let rd_row = self.r_d.row(t);
        let ro_row = self.r_o.row(t);
        let mut h_cd = vec![0.0; t + 1];
        let mut hp_cd = vec![0.0; t + 1];
        let mut hpp_cd = vec![0.0; t + 1];
        let mut h_co = vec![0.0; t + 1];
        let mut hp_co = vec![0.0; t + 1];
        let mut hpp_co = vec![0.0; t + 1];
        for s in 0..=t {
            h_cd[s] = kernel.eval(cd_row[s], 0);
            hp_cd[s] = kernel.eval(cd_row[s], 1);
            hpp_cd[s] = kernel.eval(cd_row[s], 2);
            h_co[s] = kernel.eval(co_row[s], 0);
            hp_co[s] = kernel.eval(co_row[s], 1);
            hpp_co[s] = kernel.eval(co_row[s], 2);
        }

        let mut sc_row = vec![0.0; t + 1];
        let mut sr_row = vec![0.0; t + 1];
        for s in 0..=t {
            let w = a_t * self.a[s];
            sc_row[s] = tau2 + phi2 - a_t * phi_t - self.a[s] * self.phi_v[s]
                + w / m * h_cd[s]
                + mm1 / m * w * h_co[s];
            sr_row[s] = w / m * hp_cd[s] * rd_row[s] + mm1 / m * w * hp_co[s] * ro_row[s];
        }
        self.sigma_c.extend(&sc_row).unwrap();
        self.pair.extend_row(&sr_row, &self.sigma_c);

        let ra_row = self.pair.r_a.row(t);
        let ca_row = self.pair.c_a.row(t);
        self.e_tr.push(-0.5 * ca_row[t]);
        self.e_ts.push(
            0.5 * (tau2 + phi2 - 2.0 * a_t * phi_t
                + a_t * a_t / m * kernel.eval(1.0, 0)
                + mm1 / m * a_t * a_t * kernel.eval(co_row[t], 0)),
        );

        self.m_rd.clear();
        self.m_ro.clear();
        self.m_cd.clear();
        self.m_co.clear();
        for s in 0..=t {
            let w = pref * a_t * self.a[s];
            let (ra, ca) = (ra_row[s], ca_row[s]);
            self.m_rd.push(w * (ra * hp_cd[s] + ca * hpp_cd[s] * rd_row[s]));
            self.m_ro.push(w * (ra * hp_co[s] + ca * hpp_co[s] * ro_row[s]));
            self.m_cd.push(w * ca * hp_cd[s]);
            self.m_co.push(w * ca * hp_co[s]);
        }
        self.int_ra = eta * ra_row.iter().sum::<f64>();

        let mut mem_c = 0.0;
        let mut mem_r = 0.0;
        for s in 0..=t {
            mem_c += self.m_rd[s] * cd_row[s] + mm1 * self.m_ro[s] * co_row[s];
            mem_r += self.m_cd[s] * rd_row[s] + mm1 * self.m_co[s] * ro_row[s];
        }
        let nu_t = pref * phip_t * v_t * a_t * self.int_ra - eta / m * (mem_c + mem_r);
        self.nu.push(nu_t);
    }

    /// One Euler step: new rows for all four fields and new scalars.
    fn extend_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let m = self.cfg.m as f64;
        let mm1 = m - 1.0;
        let mm2 = m - 2.0;
        let eta = self.cfg.eta;
        let pref = self.cfg.alpha_bar / m;
        let kernel = &self.model.kernel;
        let link = &self.model.link;

        let a_t = self.a[t];
        let v_t = self.v[t];
        let nu_t = self.nu[t];
        let phi_t = self.phi_v[t];
        let phip_t = link.eval_phi_hat(v_t, 1);
        let drive = pref * phip_t * a_t * self.int_ra;

        let ra_row = self.pair.r_a.row(t);
        let ca_row = self.pair.c_a.row(t);
        let cd_row = self.c_d.row(t);
        let co_row = self.c_o.row(t);

        // a(t): both memory integrals run against row T of the residual pair.
        let a_next = if self.cfg.freeze_a {
            a_t
        } else {
            let mut resp = 0.0;
            let mut corr = 0.0;
            for s in 0..=t {
                let h_d = kernel.eval(cd_row[s], 0);
                let h_o = kernel.eval(co_row[s], 0);
                let hp_d = kernel.eval(cd_row[s], 1);
                let hp_o = kernel.eval(co_row[s], 1);
                resp += ra_row[s] * self.a[s] * (h_d / m + mm1 / m * h_o);
                corr += ca_row[s]
                    * self.a[s]
                    * (hp_d / m * self.r_d.get(t, s) + mm1 / m * hp_o * self.r_o.get(t, s));
            }
            a_t + eta * (pref * phi_t * self.int_ra - pref * eta * resp - pref * eta * corr)
        };

        // v(t).
        let mut mem_v = 0.0;
        for s in 0..=t {
            mem_v += (self.m_rd[s] + mm1 * self.m_ro[s]) * self.v[s];
        }
        let v_next = v_t + eta * (-nu_t * v_t + drive - eta / m * mem_v);

        // Memory accumulators for the correlation updates, all time arguments
        // t' = 0..=T at once. acc1 handles the response-kernel integral over
        // the full row via symmetric matvecs; acc2 is one contiguous dot per
        // t' for the correlation-kernel integral up to t'.
        let n = t + 1;
        let mut acc1_d = vec![0.0; n];
        let coeff: Vec<f64> = self.m_ro.iter().map(|v| mm1 * v).collect();
        self.c_d.sym_matvec_add(&self.m_rd, &mut acc1_d);
        self.c_o.sym_matvec_add(&coeff, &mut acc1_d);

        let mut acc1_o = vec![0.0; n];
        let coeff_o: Vec<f64> = self
            .m_rd
            .iter()
            .zip(&self.m_ro)
            .map(|(d, o)| d + mm2 * o)
            .collect();
        self.c_o.sym_matvec_add(&coeff_o, &mut acc1_o);
        self.c_d.sym_matvec_add(&self.m_ro, &mut acc1_o);

        let mcd_comb: Vec<f64> = self
            .m_cd
            .iter()
            .zip(&self.m_co)
            .map(|(d, o)| d + mm2 * o)
            .collect();
        let mut new_cd = vec![0.0; n + 1];
        let mut new_co = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd_tp = self.r_d.row(tp);
            let ro_tp = self.r_o.row(tp);
            let mut acc2_d = 0.0;
            let mut acc2_o = 0.0;
            for s in 0..=tp {
                acc2_d += self.m_cd[s] * rd_tp[s] + mm1 * self.m_co[s] * ro_tp[s];
                acc2_o += mcd_comb[s] * ro_tp[s] + self.m_co[s] * rd_tp[s];
            }
            let f_d = -nu_t * self.c_d.get(t, tp) + drive * self.v[tp]
                - eta / m * (acc1_d[tp] + acc2_d);
            let f_o = -nu_t * self.c_o.get(t, tp) + drive * self.v[tp]
                - eta / m * (acc1_o[tp] + acc2_o);
            new_cd[tp] = self.c_d.get(t, tp) + eta * f_d;
            new_co[tp] = self.c_o.get(t, tp) + eta * f_o;
            if tp == t {
                // The diagonal moves with both time arguments: twice the
                // one-sided derivative by symmetry. No renormalization is
                // applied, so the O(eta) drift of C_d(t, t) away from 1 is a
                // convergence monitor.
                new_cd[t + 1] = self.c_d.get(t, t) + 2.0 * eta * f_d;
                new_co[t + 1] = self.c_o.get(t, t) + 2.0 * eta * f_o;
            }
        }

        // Response updates: the memory term sums rows s of R against the
        // kernel row, entering each column t' <= s, so it is one axpy per s.
        let mut acc_rd = vec![0.0; n];
        let mut acc_ro = vec![0.0; n];
        for s in 0..=t {
            let rd_s = self.r_d.row(s);
            let ro_s = self.r_o.row(s);
            let (kd, ko) = (self.m_rd[s], mm1 * self.m_ro[s]);
            let (kd_o, ko_o) = (self.m_rd[s] + mm2 * self.m_ro[s], self.m_ro[s]);
            for tp in 0..=s {
                acc_rd[tp] += kd * rd_s[tp] + ko * ro_s[tp];
                acc_ro[tp] += kd_o * ro_s[tp] + ko_o * rd_s[tp];
            }
        }
        let mut new_rd = vec![0.0; n + 1];
        let mut new_ro = vec![0.0; n + 1];
        for tp in 0..=t {
            let rd = self.r_d.get(t, tp);
            let ro = self.r_o.get(t, tp);
            new_rd[tp] = rd + eta * (-nu_t * rd - eta / m * acc_rd[tp]);
            new_ro[tp] = ro + eta * (-nu_t * ro - eta / m * acc_ro[tp]);
        }
        // Discrete delta: the response to a kick at T lands at T + eta.
        new_rd[t] += 1.0;
        new_rd[t + 1] = 0.0;
        new_ro[t + 1] = 0.0;

        self.c_d.extend(&new_cd).unwrap();
        self.c_o.extend(&new_co).unwrap();
        self.r_d.extend(&new_rd).unwrap();
        self.r_o.extend(&new_ro).unwrap();
        self.a.push(a_next);
        self.v.push(v_next);
    }

    pub fn cfg(&self) -> &SymmConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn eta(&self) -> f64 {
        self.cfg.eta
    }

    /// Completed steps (closed rows minus one).
    pub fn steps(&self) -> usize {
        self.nu.len().saturating_sub(1)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// gamma(t) = a(t) / sqrt(m), the lazy-scale second-layer weight.
    pub fn gamma(&self, j: usize) -> f64 {
        self.a[j] / (self.cfg.m as f64).sqrt()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn e_tr(&self) -> &[f64] {
        &self.e_tr
    }

    pub fn e_ts(&self) -> &[f64] {
        &self.e_ts
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

    pub fn r_a(&self) -> &CausalField {
        &self.pair.r_a
    }

    pub fn c_a(&self) -> &CausalField {
        &self.pair.c_a
    }

    /// Two-point function of the residual (train-error) process,
    /// -C_A(t, s), useful for inspecting equilibration.
    pub fn residual_corr(&self, t: usize, s: usize) -> f64 {
        -self.pair.c_a.get(t, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CovarianceKernel, TargetLink};
    use approx::assert_abs_diff_eq;

    fn quarter_quadratic() -> CovarianceKernel {
        CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap()
    }

    fn pure_noise_cfg(m: usize, alpha_bar: f64, eta: f64, a0: f64) -> (Model, SymmConfig) {
        let model = Model::pure_noise(quarter_quadratic(), 1.0);
        let cfg = SymmConfig {
            m,
            alpha_bar,
            eta,
            init: SecondLayerInit::MeanField { a0 },
            freeze_a: false,
        };
        (model, cfg)
    }

    #[test]
    fn initial_train_error_hand_value() {
        // m = 4, a0 = 1, tau = 1, h = (3/10) z + z^2 / 2:
        // e_tr(0) = (1 + h(1) / 4) / 2 = (1 + 0.2) / 2 = 0.6.
        let (model, cfg) = pure_noise_cfg(4, 1.5 * 4.0, 0.1, 1.0);
        let mut solver = SymmDmft::new(model, cfg);
        solver.run(0);
        assert_abs_diff_eq!(solver.e_tr()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(solver.e_ts()[0], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn response_delta_lands_one_step_late() {
        let (model, cfg) = pure_noise_cfg(4, 6.0, 0.1, 1.0);
        let mut solver = SymmDmft::new(model, cfg);
        solver.run(3);
        for t in 0..=3 {
            assert_eq!(solver.r_d().get(t, t), 0.0);
            assert_eq!(solver.r_o().get(t, t), 0.0);
        }
        assert_abs_diff_eq!(solver.r_d().get(1, 0), 1.0, epsilon = 0.0);
        assert_eq!(solver.r_o().get(1, 0), 0.0);
    }

    #[test]
    fn spherical_constraint_drift_halves_with_eta() {
        // Pure-noise runs keep C_d(t, t) = 1 identically (the Lagrange
        // multiplier cancellation is exact on the grid), so exercise the
        // drift with a moving signal overlap instead.
        let drift = |eta: f64| {
            let kernel = CovarianceKernel::new(vec![0.0, 0.9, 0.5]).unwrap();
            let link = TargetLink::new(vec![0.0, 0.9, 0.5], 1.4, 0.09).unwrap();
            let cfg = SymmConfig {
                m: 4,
                alpha_bar: 6.0,
                eta,
                init: SecondLayerInit::MeanField { a0: 1.0 },
                freeze_a: false,
            };
            let mut solver = SymmDmft::new(Model::new(kernel, link), cfg);
            let steps = (4.0 / eta).round() as usize;
            solver.run(steps);
            (0..=steps)
                .map(|t| (solver.c_d().get(t, t) - 1.0).abs())
                .fold(0.0, f64::max)
        };
        let d1 = drift(0.1);
        let d2 = drift(0.05);
        assert!(d1 > 0.0 && d1 < 0.2, "drift at eta = 0.1 is {d1}");
        let ratio = d1 / d2;
        assert!(
            (1.5..=2.5).contains(&ratio),
            "drift should scale linearly in eta, got ratio {ratio}"
        );
    }

    #[test]
    fn freeze_a_pins_the_second_layer() {
        let (model, mut cfg) = pure_noise_cfg(8, 4.0, 0.1, 0.7);
        cfg.freeze_a = true;
        let mut solver = SymmDmft::new(model, cfg);
        solver.run(30);
        assert!(solver.a().iter().all(|&a| a == 0.7));
        // The rest of the system still moves.
        assert!(solver.e_tr()[30] < solver.e_tr()[0]);
    }

    #[test]
    fn scale_covariance_of_train_error() {
        // Pure noise with frozen second layer: (tau, gamma0, eta) ->
        // (c tau, c gamma0, eta / c^2) multiplies e_tr by c^2 step for step.
        // Training a breaks this equivalence, which is why it stays frozen.
        let c: f64 = 2.0;
        let kernel = CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap();
        let run = |tau: f64, gamma0: f64, eta: f64| {
            let model = Model::pure_noise(kernel.clone(), tau * tau);
            let cfg = SymmConfig {
                m: 6,
                alpha_bar: 3.0,
                eta,
                init: SecondLayerInit::Lazy { gamma0 },
                freeze_a: true,
            };
            let mut solver = SymmDmft::new(model, cfg);
            solver.run(40);
            solver.e_tr().to_vec()
        };
        let base = run(1.0, 1.0, 0.1);
        let scaled = run(c, c, 0.1 / (c * c));
        for (e_a, e_b) in base.iter().zip(&scaled) {
            assert_abs_diff_eq!(c * c * e_a, *e_b, epsilon = 1e-9);
        }
    }

    #[test]
    fn signal_run_moves_the_overlap() {
        // A learnable linear component pulls v away from zero and drops e_ts.
        let kernel = CovarianceKernel::new(vec![0.0, 0.9, 0.5]).unwrap();
        let link = TargetLink::new(vec![0.0, 0.9, 0.5], 1.4, 0.09).unwrap();
        let cfg = SymmConfig {
            m: 4,
            alpha_bar: 6.0,
            eta: 0.05,
            init: SecondLayerInit::MeanField { a0: 1.0 },
            freeze_a: false,
        };
        let mut solver = SymmDmft::new(Model::new(kernel, link), cfg);
        solver.run(100);
        assert!(solver.v()[100] > 0.05, "overlap stayed at {}", solver.v()[100]);
        assert!(solver.e_ts()[100] < solver.e_ts()[0]);
        assert!(solver.v().iter().all(|v| v.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn append_stability_across_run_lengths() {
        let (model, cfg) = pure_noise_cfg(4, 6.0, 0.1, 1.0);
        let mut short = SymmDmft::new(model.clone(), cfg);
        short.run(20);
        let mut long = SymmDmft::new(model, cfg);
        long.run(35);
        for t in 0..=20 {
            assert_eq!(short.e_tr()[t].to_bits(), long.e_tr()[t].to_bits());
            assert_eq!(short.a()[t].to_bits(), long.a()[t].to_bits());
            for s in 0..=t {
                assert_eq!(
                    short.c_d().get(t, s).to_bits(),
                    long.c_d().get(t, s).to_bits()
                );
            }
        }
    }
}
