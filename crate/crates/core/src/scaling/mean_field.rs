//! Infinite-width limits for order-one second-layer initialization.
//!
//! Pure noise first: on times of order one only the off-diagonal overlaps
//! move ([`MfPnRegime1`], closed forms), and on times of order sqrt(m) the
//! second layer grows while the first layer decorrelates
//! ([`mf_sqrtm_solve`]). With a signal, neurons align along the latent
//! direction following a closed system of ODEs ([`mf_ode_solve`]); the 1/m
//! deviations from that limit obey a linear Volterra system
//! ([`mf_corrections_solve`]) whose solutions grow linearly in time, and the
//! growth rates double-check against an explicit linear system.

use crate::kernels::Model;
use crate::timegrid::{CausalField, TimeGrid};

use super::{linear_regression, RegimeParams, ScalingError};

/// Closed forms for pure-noise data on times of order one: the self-overlap
/// stays pinned while neuron pairs anti-correlate at rate
/// rho0 = alpha * a0^2 * h'(0), settling at (tau^2 - rho0) / rho0 in units of
/// 1/m. The train error is flat at tau^2 / 2 here.
#[derive(Debug, Clone)]
pub struct MfPnRegime1 {
    rho0: f64,
    tau2: f64,
}

impl MfPnRegime1 {
    pub fn new(params: &RegimeParams) -> Result<Self, ScalingError> {
        let a0 = params.a0()?;
        if !params.model.link.is_pure_noise() {
            return Err(ScalingError::NotPureNoise);
        }
        let rho0 = params.alpha * a0 * a0 * params.model.kernel.eval(0.0, 1);
        if rho0 == 0.0 {
            return Err(ScalingError::ZeroRate);
        }
        Ok(Self {
            rho0,
            tau2: params.model.link.tau2(),
        })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    /// Off-diagonal response in units of 1/m.
    pub fn r_o(&self, t: f64, s: f64) -> f64 {
        if t <= s {
            0.0
        } else {
            (-self.rho0 * (t - s)).exp() - 1.0
        }
    }

    /// Off-diagonal correlation in units of 1/m (symmetric in its arguments).
    pub fn c_o(&self, t: f64, s: f64) -> f64 {
        let (t, tp) = if t >= s { (t, s) } else { (s, t) };
        let r = self.rho0;
        let a = (2.0 * self.tau2 / r - (self.tau2 - r) / r) * (-2.0 * r * tp).exp()
            - self.tau2 / r * (-r * tp).exp();
        a * (-r * (t - tp)).exp() + (self.tau2 - r) / r - self.tau2 / r * (-r * tp).exp()
    }

    /// Limit of c_o(t, t): what the risk gradient leaves behind after fitting
    /// the linear part of the noise.
    pub fn c_o_limit(&self) -> f64 {
        (self.tau2 - self.rho0) / self.rho0
    }
}

/// History of the sqrt(m)-timescale system: diagonal correlation/response,
/// the growing second layer, and its Lagrange multiplier.
#[derive(Debug, Clone)]
pub struct SqrtmSolution {
    model: Model,
    alpha: f64,
    eta: f64,
    c_d: CausalField,
    r_d: CausalField,
    a: Vec<f64>,
    nu: Vec<f64>,
    m_k: Vec<f64>,
    m_c: Vec<f64>,
    int_a: f64,
}

/// Integrates the pure-noise dynamics on times of order sqrt(m), where the
/// second layer becomes the slow variable. The time variable here is
/// t / sqrt(m).
pub fn mf_sqrtm_solve(
    params: &RegimeParams,
    eta: f64,
    steps: usize,
) -> Result<SqrtmSolution, ScalingError> {
    assert!(eta > 0.0, "step size must be positive");
    let a0 = params.a0()?;
    if !params.model.link.is_pure_noise() {
        return Err(ScalingError::NotPureNoise);
    }
    let rows = steps + 1;
    let mut c_d = CausalField::with_capacity(true, rows);
    let mut r_d = CausalField::with_capacity(false, rows);
    c_d.extend(&[1.0]).unwrap();
    r_d.extend(&[0.0]).unwrap();
    let mut state = SqrtmSolution {
        model: params.model.clone(),
        alpha: params.alpha,
        eta,
        c_d,
        r_d,
        a: vec![a0],
        nu: Vec::new(),
        m_k: Vec::new(),
        m_c: Vec::new(),
        int_a: 0.0,
    };
    for _ in 0..steps {
        state.close_row();
        state.extend_row();
    }
    state.close_row();
    Ok(state)
}

impl SqrtmSolution {
    fn close_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let kernel = &self.model.kernel;
        let hp0 = kernel.eval(0.0, 1);
        let cd_row = self.c_d.row(t);
        let rd_row = self.r_d.row(t);
        self.m_k.clear();
        self.m_c.clear();
        let mut int_k = 0.0;
        let mut int_a = 0.0;
        for s in 0..=t {
            let k = self.a[s] * kernel.eval(cd_row[s], 2) * rd_row[s];
            let c = self.a[s] * (kernel.eval(cd_row[s], 1) - hp0);
            self.m_k.push(k);
            self.m_c.push(c);
            int_k += k * cd_row[s];
            int_a += c * rd_row[s];
        }
        let tau2 = self.model.link.tau2();
        self.int_a = self.eta * int_a;
        self.nu
            .push(self.alpha * tau2 * self.a[t] * self.eta * (int_k + int_a));
    }

    fn extend_row(&mut self) {
        let t = self.c_d.rows() - 1;
        let eta = self.eta;
        let tau2 = self.model.link.tau2();
        let nu_t = self.nu[t];
        let pref = self.alpha * tau2 * self.a[t];
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
            let f = -nu_t * self.c_d.get(t, tp) + pref * eta * (acc1[tp] + acc2);
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
            new_rd[tp] = rd + eta * (-nu_t * rd + pref * eta * acc_r[tp]);
        }
        new_rd[t] += 1.0;
        new_rd[t + 1] = 0.0;

        self.c_d.extend(&new_cd).unwrap();
        self.r_d.extend(&new_rd).unwrap();
        self.a.push(self.a[t] + eta * self.alpha * tau2 * self.int_a);
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

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Late-time growth rate of the second layer: difference quotient over
    /// the second half of the window, which converges to the asymptotic
    /// slope much faster than a(t) / t itself.
    pub fn a_slope(&self) -> f64 {
        let last = self.a.len() - 1;
        let half = last / 2;
        (self.a[last] - self.a[half]) / (self.eta * (last - half) as f64)
    }
}

/// Trajectories of the neuron-alignment ODE system at width m.
#[derive(Debug, Clone)]
pub struct MfOdeSolution {
    dt: f64,
    /// Per-neuron second-layer weights, indexed `[neuron][step]`.
    pub a: Vec<Vec<f64>>,
    /// Per-neuron latent overlaps, indexed `[neuron][step]`.
    pub v: Vec<Vec<f64>>,
    /// Risk along the trajectory.
    pub e: Vec<f64>,
}

/// Classical fourth-order integration of the alignment ODEs from
/// per-neuron initial conditions (one `(a0, v0)` pair per neuron).
/// The homogeneous (width-independent) system is the m = 1 case.
pub fn mf_ode_solve(
    model: &Model,
    alpha: f64,
    init: &[(f64, f64)],
    t_max: f64,
) -> Result<MfOdeSolution, ScalingError> {
    assert!(!init.is_empty(), "need at least one neuron");
    assert!(t_max > 0.0, "horizon must be positive");
    let dt = 1e-3;
    let steps = (t_max / dt).ceil() as usize;
    let m = init.len();
    let mut a: Vec<f64> = init.iter().map(|&(a0, _)| a0).collect();
    let mut v: Vec<f64> = init.iter().map(|&(_, v0)| v0).collect();
    for (i, &vi) in v.iter().enumerate() {
        if vi.abs() > 1.0 {
            return Err(ScalingError::OverlapExceeded {
                neuron: i,
                value: vi,
                time: 0.0,
            });
        }
    }

    let mut out = MfOdeSolution {
        dt,
        a: vec![Vec::with_capacity(steps + 1); m],
        v: vec![Vec::with_capacity(steps + 1); m],
        e: Vec::with_capacity(steps + 1),
    };
    let record = |a: &[f64], v: &[f64], out: &mut MfOdeSolution| {
        for i in 0..m {
            out.a[i].push(a[i]);
            out.v[i].push(v[i]);
        }
        out.e.push(mf_risk(model, a, v));
    };
    record(&a, &v, &mut out);

    let mut ka = vec![vec![0.0; m]; 4];
    let mut kv = vec![vec![0.0; m]; 4];
    let mut ta = vec![0.0; m];
    let mut tv = vec![0.0; m];
    for step in 0..steps {
        ode_rhs(model, alpha, &a, &v, &mut ka[0], &mut kv[0]);
        for i in 0..m {
            ta[i] = a[i] + 0.5 * dt * ka[0][i];
            tv[i] = v[i] + 0.5 * dt * kv[0][i];
        }
        ode_rhs(model, alpha, &ta, &tv, &mut ka[1], &mut kv[1]);
        for i in 0..m {
            ta[i] = a[i] + 0.5 * dt * ka[1][i];
            tv[i] = v[i] + 0.5 * dt * kv[1][i];
        }
        ode_rhs(model, alpha, &ta, &tv, &mut ka[2], &mut kv[2]);
        for i in 0..m {
            ta[i] = a[i] + dt * ka[2][i];
            tv[i] = v[i] + dt * kv[2][i];
        }
        ode_rhs(model, alpha, &ta, &tv, &mut ka[3], &mut kv[3]);
        for i in 0..m {
            a[i] += dt / 6.0 * (ka[0][i] + 2.0 * ka[1][i] + 2.0 * ka[2][i] + ka[3][i]);
            v[i] += dt / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
            if v[i].abs() > 1.0 + 1e-9 {
                return Err(ScalingError::OverlapExceeded {
                    neuron: i,
                    value: v[i],
                    time: (step + 1) as f64 * dt,
                });
            }
        }
        record(&a, &v, &mut out);
    }
    Ok(out)
}

impl MfOdeSolution {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index of the stored step closest to time `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.e.len() - 1)
    }
}

/// Alignment-ODE right-hand sides; `(1 - v^2)` is the projector onto the
/// sphere's tangent space in the latent coordinate.
fn ode_rhs(model: &Model, alpha: f64, a: &[f64], v: &[f64], da: &mut [f64], dv: &mut [f64]) {
    let m = a.len();
    let inv_m = 1.0 / m as f64;
    let kernel = &model.kernel;
    let link = &model.link;
    for i in 0..m {
        let mut s = 0.0;
        let mut d = 0.0;
        for j in 0..m {
            let q = v[i] * v[j];
            s += a[j] * kernel.eval(q, 0);
            d += a[j] * kernel.eval(q, 1) * v[j];
        }
        s *= inv_m;
        d *= inv_m;
        da[i] = alpha * (link.eval_phi_hat(v[i], 0) - s);
        dv[i] = alpha * a[i] * (1.0 - v[i] * v[i]) * (link.eval_phi_hat(v[i], 1) - d);
    }
}

/// Risk of the width-m alignment state (train and test coincide in this
/// limit).
fn mf_risk(model: &Model, a: &[f64], v: &[f64]) -> f64 {
    let m = a.len();
    let inv_m = 1.0 / m as f64;
    let link = &model.link;
    let mut lin = 0.0;
    for j in 0..m {
        lin += a[j] * link.eval_phi_hat(v[j], 0);
    }
    let mut quad = 0.0;
    for i in 0..m {
        for j in 0..m {
            quad += a[i] * a[j] * model.kernel.eval(v[i] * v[j], 0);
        }
    }
    0.5 * (link.tau2() + link.phi_norm2() - 2.0 * inv_m * lin + inv_m * inv_m * quad)
}

/// Growth rates of the 1/m corrections, either from a tail fit of the
/// integrated trajectories or from the closed linear system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionSlopes {
    pub a_star: f64,
    pub v_star: f64,
    pub nu_star: f64,
    pub c_star: f64,
}

/// Baseline tail limits v1 = lim (v - 1) t and nu1 = lim nu t, each with the
/// shift observed when the fit window shrinks from the last decade to the
/// last half decade (a stability report for the extrapolation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineTailLimits {
    pub v1: f64,
    pub nu1: f64,
    pub v1_drift: f64,
    pub nu1_drift: f64,
}

/// Linear Volterra system for the 1/m deviations from the alignment limit,
/// integrated on top of a closed-form baseline.
///
/// Restricted to a single-index target with phi_hat = h and a(0) = 1: the
/// baseline then converges to perfect alignment and admits closed-form
/// two-time fields (exponentials of cumulated rates), which enter here as
/// sources and memory kernels. The baseline response is evaluated at its
/// continuum equal-time value R(t, t) = 1.
#[derive(Debug, Clone)]
pub struct MfCorrections {
    model: Model,
    alpha: f64,
    eta: f64,
    source_scale: f64,
    // Baseline series on the grid.
    ab: Vec<f64>,
    vb: Vec<f64>,
    nub: Vec<f64>,
    g: Vec<f64>,
    p: Vec<f64>,
    big_n: Vec<f64>,
    big_p: Vec<f64>,
    exp_n: Vec<f64>,
    q: Vec<f64>,
    // Corrections.
    a_t: Vec<f64>,
    v_t: Vec<f64>,
    nu_t: Vec<f64>,
    c_o: CausalField,
}

/// Integrates the corrections system for `steps` steps of size `eta`.
/// `source_scale` multiplies every baseline-only source term; 1.0 is the
/// physical system, other values exercise linearity.
pub fn mf_corrections_solve(
    model: &Model,
    alpha: f64,
    eta: f64,
    steps: usize,
    source_scale: f64,
) -> Result<MfCorrections, ScalingError> {
    assert!(eta > 0.0, "step size must be positive");
    let kernel = &model.kernel;
    let link = &model.link;
    let same_poly = kernel.coeffs().len() == link.coeffs().len()
        && kernel
            .coeffs()
            .iter()
            .zip(link.coeffs())
            .all(|(a, b)| a == b);
    if !same_poly || (link.phi_norm2() - kernel.eval(1.0, 0)).abs() > 1e-12 {
        return Err(ScalingError::LinkKernelMismatch);
    }

    let mut state = MfCorrections {
        model: model.clone(),
        alpha,
        eta,
        source_scale,
        ab: Vec::with_capacity(steps + 1),
        vb: Vec::with_capacity(steps + 1),
        nub: Vec::with_capacity(steps + 1),
        g: Vec::with_capacity(steps + 1),
        p: Vec::with_capacity(steps + 1),
        big_n: Vec::with_capacity(steps + 1),
        big_p: Vec::with_capacity(steps + 1),
        exp_n: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        a_t: vec![0.0],
        v_t: vec![0.0],
        nu_t: Vec::new(),
        c_o: CausalField::with_capacity(true, steps + 1),
    };
    state.c_o.extend(&[0.0]).unwrap();
    state.integrate_baseline(steps);
    for t in 0..steps {
        state.close_and_extend(t);
    }
    state.close_only(steps);
    Ok(state)
}

impl MfCorrections {
    /// Baseline trajectory by classical fourth-order steps at the grid
    /// spacing, plus the cumulated rates entering the closed-form two-time
    /// fields (trapezoidal in the integrands).
    fn integrate_baseline(&mut self, steps: usize) {
        let model = self.model.clone();
        let alpha = self.alpha;
        let mut a = [1.0];
        let mut v = [0.0];
        let mut da = [0.0];
        let mut dv = [0.0];
        let (mut ka, mut kv) = ([[0.0; 4]], [[0.0; 4]]);
        let push_point = |state: &mut Self, a: f64, v: f64| {
            let kernel = &state.model.kernel;
            let link = &state.model.link;
            let g = alpha * link.eval_phi_hat(v, 1) * a;
            let p = alpha * a * a * kernel.eval(v * v, 1);
            state.ab.push(a);
            state.vb.push(v);
            state.g.push(g);
            state.p.push(p);
            state.nub.push(g * v - p * v * v);
        };
        push_point(self, a[0], v[0]);
        for _ in 0..steps {
            let dt = self.eta;
            ode_rhs(&model, alpha, &a, &v, &mut da, &mut dv);
            (ka[0][0], kv[0][0]) = (da[0], dv[0]);
            ode_rhs(
                &model,
                alpha,
                &[a[0] + 0.5 * dt * ka[0][0]],
                &[v[0] + 0.5 * dt * kv[0][0]],
                &mut da,
                &mut dv,
            );
            (ka[0][1], kv[0][1]) = (da[0], dv[0]);
            ode_rhs(
                &model,
                alpha,
                &[a[0] + 0.5 * dt * ka[0][1]],
                &[v[0] + 0.5 * dt * kv[0][1]],
                &mut da,
                &mut dv,
            );
            (ka[0][2], kv[0][2]) = (da[0], dv[0]);
            ode_rhs(
                &model,
                alpha,
                &[a[0] + dt * ka[0][2]],
                &[v[0] + dt * kv[0][2]],
                &mut da,
                &mut dv,
            );
            (ka[0][3], kv[0][3]) = (da[0], dv[0]);
            a[0] += dt / 6.0 * (ka[0][0] + 2.0 * ka[0][1] + 2.0 * ka[0][2] + ka[0][3]);
            v[0] += dt / 6.0 * (kv[0][0] + 2.0 * kv[0][1] + 2.0 * kv[0][2] + kv[0][3]);
            push_point(self, a[0], v[0]);
        }
        // Cumulated rates N, P (trapezoid) and the alignment integral Q.
        // N grows logarithmically so exp(N) is safe to store; P grows
        // linearly, so it is kept in log space and only exponentiated as
        // differences.
        let n = steps + 1;
        let mut big_n = vec![0.0; n];
        let mut big_p = vec![0.0; n];
        for t in 1..n {
            big_n[t] =
                big_n[t - 1] + 0.5 * self.eta * (self.nub[t - 1] + self.nub[t]);
            big_p[t] = big_p[t - 1] + 0.5 * self.eta * (self.p[t - 1] + self.p[t]);
        }
        self.exp_n = big_n.iter().map(|x| x.exp()).collect();
        self.big_n = big_n;
        self.big_p = big_p;
        self.q = vec![0.0; n];
        let integrand =
            |state: &Self, t: usize| state.exp_n[t] * (state.g[t] - state.p[t] * state.vb[t]);
        for t in 1..n {
            self.q[t] =
                self.q[t - 1] + 0.5 * self.eta * (integrand(self, t - 1) + integrand(self, t));
        }
    }

    /// Baseline diagonal response between grid times i >= j.
    fn rd_base(&self, i: usize, j: usize) -> f64 {
        self.exp_n[j] / self.exp_n[i]
    }

    /// Baseline off-diagonal response (times m) between grid times i >= j.
    fn ro_base(&self, i: usize, j: usize) -> f64 {
        -self.rd_base(i, j) * (1.0 - (self.big_p[j] - self.big_p[i]).exp())
    }

    /// Baseline diagonal correlation at any index order.
    fn cd_base(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.rd_base(i, j) + self.vb[j] * (self.q[i] - self.q[j]) / self.exp_n[i]
    }

    /// Residual two-point function of the baseline (sign flipped).
    fn ca_base(&self, i: usize, j: usize) -> f64 {
        let link = &self.model.link;
        let kernel = &self.model.kernel;
        let co = self.vb[i] * self.vb[j];
        -(link.tau2() + link.phi_norm2()
            - self.ab[i] * link.eval_phi_hat(self.vb[i], 0)
            - self.ab[j] * link.eval_phi_hat(self.vb[j], 0)
            + self.ab[i] * self.ab[j] * kernel.eval(co, 0))
    }

    /// nu-correction at row `t`, then the Euler advance of everything to
    /// t + 1 (`close_only` stops after recording nu).
    fn close_and_extend(&mut self, t: usize) {
        self.close_only(t);
        self.extend(t);
    }

    fn close_only(&mut self, t: usize) {
        let kernel = self.model.kernel.clone();
        let link = self.model.link.clone();
        let alpha = self.alpha;
        let eta = self.eta;
        let src = self.source_scale;

        let (at, vt) = (self.ab[t], self.vb[t]);
        let phi1 = link.eval_phi_hat(vt, 1);
        let phi2 = link.eval_phi_hat(vt, 2);
        let hp_vv = kernel.eval(vt * vt, 1);
        let hpp_vv = kernel.eval(vt * vt, 2);
        let p_t = self.p[t];
        let mrd_delta = alpha * at * at * kernel.eval(1.0, 1);
        let mro1_delta = 2.0 * alpha * at * self.a_t[t] * hp_vv
            + alpha * at * at * hpp_vv * self.c_o.get(t, t);

        // One pass over the row: sources and kernel contractions.
        let mut i_sigma = 0.0;
        let mut sum_mrd_cd = 0.0;
        let mut sum_mro1_v = 0.0;
        let mut sum_mcd_rd = 0.0;
        let mut sum_mco_ro = 0.0;
        for s in 0..=t {
            let asv = self.ab[s];
            let cd = self.cd_base(t, s);
            let co = self.vb[s] * vt;
            let rd = self.rd_base(t, s);
            let ro = self.ro_base(t, s);
            let ca = self.ca_base(t, s);
            let sig1 = at * asv * (kernel.eval(cd, 1) * rd + kernel.eval(co, 1) * ro);
            i_sigma += sig1;
            sum_mrd_cd += alpha * at * asv * ca * kernel.eval(cd, 2) * rd * cd;
            let mro1_reg = -alpha * at * asv * sig1 * kernel.eval(co, 1)
                + alpha * at * asv * ca * kernel.eval(co, 2) * ro;
            sum_mro1_v += mro1_reg * self.vb[s];
            sum_mcd_rd += alpha * at * asv * ca * kernel.eval(cd, 1) * rd;
            sum_mco_ro += alpha * at * asv * ca * kernel.eval(co, 1) * ro;
        }
        i_sigma *= eta;

        let nu_new = alpha * phi1 * self.v_t[t] * at
            + alpha * phi2 * vt * self.v_t[t] * at
            + alpha * phi1 * vt * self.a_t[t]
            - src * alpha * phi1 * vt * at * i_sigma
            - src * (mrd_delta * 1.0 + eta * sum_mrd_cd - p_t * vt * vt)
            - (mro1_delta * vt * vt + src * eta * sum_mro1_v * vt + p_t * self.c_o.get(t, t))
            - src * eta * (sum_mcd_rd + sum_mco_ro);
        self.nu_t.push(nu_new);
    }

    fn extend(&mut self, t: usize) {
        let kernel = self.model.kernel.clone();
        let link = self.model.link.clone();
        let alpha = self.alpha;
        let eta = self.eta;
        let src = self.source_scale;

        let (at, vt) = (self.ab[t], self.vb[t]);
        let phi0 = link.eval_phi_hat(vt, 0);
        let phi1 = link.eval_phi_hat(vt, 1);
        let phi2 = link.eval_phi_hat(vt, 2);
        let h_vv = kernel.eval(vt * vt, 0);
        let hp_vv = kernel.eval(vt * vt, 1);
        let hpp_vv = kernel.eval(vt * vt, 2);
        let h1 = kernel.eval(1.0, 0);
        let p_t = self.p[t];
        let nub_t = self.nub[t];
        let nu_t = self.nu_t[t];
        let co_tt = self.c_o.get(t, t);
        let mrd_delta = alpha * at * at * kernel.eval(1.0, 1);
        let mro1_delta =
            2.0 * alpha * at * self.a_t[t] * hp_vv + alpha * at * at * hpp_vv * co_tt;

        // Row passes shared by the three scalar updates and the field update.
        let mut i_sigma = 0.0;
        let mut sum_sig_ah = 0.0; // Sigma^1 a h(Co)
        let mut sum_ca_mix = 0.0; // C_A a [h'(Cd) Rd + h'(Co) Ro]
        let mut sum_mrd_v = 0.0; // reg M_R^d against v
        let mut sum_mro1_v = 0.0; // reg M_Ro^1 against v
        let mut mco_row = vec![0.0; t + 1]; // off-diagonal C-kernel at (t, s)
        for s in 0..=t {
            let asv = self.ab[s];
            let cd = self.cd_base(t, s);
            let co = self.vb[s] * vt;
            let rd = self.rd_base(t, s);
            let ro = self.ro_base(t, s);
            let ca = self.ca_base(t, s);
            let mix = asv * (kernel.eval(cd, 1) * rd + kernel.eval(co, 1) * ro);
            let sig1 = at * mix;
            i_sigma += sig1;
            sum_sig_ah += sig1 * asv * kernel.eval(co, 0);
            sum_ca_mix += ca * mix;
            let mrd_reg = alpha * at * asv * ca * kernel.eval(cd, 2) * rd;
            sum_mrd_v += mrd_reg * self.vb[s];
            let mro1_reg = -alpha * at * asv * sig1 * kernel.eval(co, 1)
                + alpha * at * asv * ca * kernel.eval(co, 2) * ro;
            sum_mro1_v += mro1_reg * self.vb[s];
            mco_row[s] = alpha * at * asv * ca * kernel.eval(co, 1);
        }
        i_sigma *= eta;

        // Second-layer correction.
        let da = alpha * phi1 * self.v_t[t] - src * alpha * phi0 * i_sigma
            - src * alpha * at * (h1 - h_vv)
            + src * alpha * eta * sum_sig_ah
            - alpha * self.a_t[t] * h_vv
            - alpha * at * hp_vv * co_tt
            - src * alpha * eta * sum_ca_mix;
        let a_next = self.a_t[t] + eta * da;

        // Overlap correction.
        let dv = -nub_t * self.v_t[t] - nu_t * vt + alpha * phi1 * self.a_t[t]
            + alpha * phi2 * self.v_t[t] * at
            - src * alpha * phi1 * at * i_sigma
            - src * (mrd_delta * vt + eta * sum_mrd_v - p_t * vt)
            - (mro1_delta * vt + src * eta * sum_mro1_v + p_t * self.v_t[t]);
        let v_next = self.v_t[t] + eta * dv;

        // Off-diagonal correlation correction, all earlier times at once.
        // The last integral pairs the off-diagonal C-kernel at (t, s) with
        // R_d(t', s) + R_o(t', s) = exp(N(s) + P(s) - N(t') - P(t')); the
        // running sum below carries it across t' through bounded decay
        // factors only, so long windows cannot overflow.
        let n = t + 1;
        let mut new_co = vec![0.0; n + 1];
        let mut tail_sum = 0.0;
        for tp in 0..=t {
            let vp = self.vb[tp];
            let co_base_tp = vp * vt;
            let cd_base_tp = self.cd_base(tp, t);
            let co_tilde = self.c_o.get(t, tp);
            if tp > 0 {
                let decay = (self.big_n[tp - 1] + self.big_p[tp - 1]
                    - self.big_n[tp]
                    - self.big_p[tp])
                    .exp();
                tail_sum *= decay;
            }
            tail_sum += mco_row[tp];
            let tail = src * eta * tail_sum;
            let f = -nub_t * co_tilde - nu_t * co_base_tp
                + alpha * phi2 * self.v_t[t] * vp * at
                + alpha * phi1 * self.v_t[tp] * at
                + alpha * phi1 * vp * self.a_t[t]
                - src * alpha * phi1 * vp * at * i_sigma
                - src
                    * (mrd_delta * co_base_tp + eta * sum_mrd_v * vp + p_t * cd_base_tp
                        - 2.0 * p_t * co_base_tp)
                - (p_t * co_tilde + mro1_delta * co_base_tp + src * eta * sum_mro1_v * vp)
                - tail;
            new_co[tp] = co_tilde + eta * f;
            if tp == t {
                new_co[t + 1] = co_tilde + 2.0 * eta * f;
            }
        }

        self.c_o.extend(&new_co).unwrap();
        self.a_t.push(a_next);
        self.v_t.push(v_next);
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn steps(&self) -> usize {
        self.nu_t.len().saturating_sub(1)
    }

    pub fn baseline_a(&self) -> &[f64] {
        &self.ab
    }

    pub fn baseline_v(&self) -> &[f64] {
        &self.vb
    }

    pub fn baseline_nu(&self) -> &[f64] {
        &self.nub
    }

    pub fn a_tilde(&self) -> &[f64] {
        &self.a_t
    }

    pub fn v_tilde(&self) -> &[f64] {
        &self.v_t
    }

    pub fn nu_tilde(&self) -> &[f64] {
        &self.nu_t
    }

    pub fn c_o_tilde(&self) -> &CausalField {
        &self.c_o
    }

    /// Growth rates from straight-line fits over the second half of the
    /// window.
    pub fn tail_slopes(&self) -> CorrectionSlopes {
        let last = self.nu_t.len() - 1;
        let lo = last / 2;
        let ts: Vec<f64> = (lo..=last).map(|j| j as f64 * self.eta).collect();
        let fit = |ys: Vec<f64>| linear_regression(&ts, &ys).1;
        CorrectionSlopes {
            a_star: fit((lo..=last).map(|j| self.a_t[j]).collect()),
            v_star: fit((lo..=last).map(|j| self.v_t[j]).collect()),
            nu_star: fit((lo..=last).map(|j| self.nu_t[j]).collect()),
            c_star: fit((lo..=last).map(|j| self.c_o.get(j, j)).collect()),
        }
    }

    /// Tail limits of the baseline, extrapolated to t = infinity as the
    /// intercept of y(t) against 1/t over the last decade of the window.
    pub fn baseline_tail_limits(&self) -> BaselineTailLimits {
        let last = self.ab.len() - 1;
        let grid = TimeGrid::new(self.eta, last);
        let intercept = |lo: usize| {
            let xs: Vec<f64> = (lo..=last).map(|j| 1.0 / grid.time(j)).collect();
            let v1s: Vec<f64> = (lo..=last)
                .map(|j| (self.vb[j] - 1.0) * grid.time(j))
                .collect();
            let nu1s: Vec<f64> = (lo..=last).map(|j| self.nub[j] * grid.time(j)).collect();
            (
                linear_regression(&xs, &v1s).0,
                linear_regression(&xs, &nu1s).0,
            )
        };
        let (v1, nu1) = intercept((last / 10).max(1));
        let narrow = ((last as f64 / 10f64.sqrt()) as usize).max(1);
        let (v1_n, nu1_n) = intercept(narrow);
        BaselineTailLimits {
            v1,
            nu1,
            v1_drift: v1_n - v1,
            nu1_drift: nu1_n - nu1,
        }
    }

    /// Growth rates from the closed linear system, using tail limits
    /// v1 = lim (v - 1) t and nu1 = lim nu t of the baseline. Refuses unless
    /// the baseline has essentially aligned by the end of the window.
    pub fn analytic_slopes(&self) -> Result<CorrectionSlopes, ScalingError> {
        let last = self.ab.len() - 1;
        if (self.ab[last] - 1.0).abs() > 0.05 || (self.vb[last] - 1.0).abs() > 0.05 {
            return Err(ScalingError::BaselineNotConverged {
                a: self.ab[last],
                v: self.vb[last],
            });
        }
        let BaselineTailLimits { v1, nu1, .. } = self.baseline_tail_limits();

        let link = &self.model.link;
        let alpha = self.alpha;
        let f0 = link.eval_phi_hat(1.0, 0);
        let f1 = link.eval_phi_hat(1.0, 1);
        let f2 = link.eval_phi_hat(1.0, 2);
        let kappa = f0 / f1;
        let psi = f2 - f1 - f1 * f1;
        let a_star = 4.0 * v1 * alpha * (f0 * f2 / f1 - link.tau2())
            / ((1.0 + 2.0 * nu1) * kappa + 2.0 * v1 * alpha * psi);
        let v_star = -kappa * a_star;
        Ok(CorrectionSlopes {
            a_star,
            v_star,
            nu_star: -alpha * psi * a_star + 2.0 * alpha * f0 * f2 / f1,
            c_star: 2.0 * v_star,
        })
    }
}
