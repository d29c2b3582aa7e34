//! Full per-neuron solver: m x m correlation/response fields.
//!
//! This integrates the closed equations for finite width m with an arbitrary
//! exchangeability-breaking initial condition: per-neuron second-layer weights
//! a_i, signal overlaps v_i, and a full matrix of first-layer overlaps
//! C_ij(t, t') with responses R_ij(t, t'). Cost per step is O(m^3 T^2), so it
//! is meant for small m; the symmetric reduction in [`super::symm`] covers the
//! large-m regimes and must agree with this solver whenever its ansatz holds.

use crate::kernels::Model;
use crate::timegrid::{CausalField, ResponseCorrelation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("initial condition has inconsistent lengths for width {0}")]
    BadShape(usize),
    #[error("initial overlap matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("initial overlap matrix must have unit diagonal, got {0} at neuron {1}")]
    BadDiagonal(f64, usize),
    #[error("initial overlap matrix is not positive semidefinite (pivot {0} at {1})")]
    NotPsd(f64, usize),
    #[error("initial signal overlap {0} at neuron {1} exceeds the sphere")]
    OverlapTooLarge(f64, usize),
}

/// Initial condition for the per-neuron system: weights a_i(0), signal
/// overlaps v_i(0), and the first-layer overlap matrix C_ij(0, 0) (row-major
/// m x m, symmetric, unit diagonal, positive semidefinite).
#[derive(Debug, Clone)]
pub struct GeneralInit {
    pub a0: Vec<f64>,
    pub v0: Vec<f64>,
    pub c0: Vec<f64>,
}

impl GeneralInit {
    /// Exchangeable start: equal weights, zero overlap, orthonormal neurons.
    pub fn symmetric(m: usize, a0: f64) -> Self {
        let mut c0 = vec![0.0; m * m];
        for i in 0..m {
            c0[i * m + i] = 1.0;
        }
        Self { a0: vec![a0; m], v0: vec![0.0; m], c0 }
    }

    fn validate(&self, m: usize) -> Result<(), InitError> {
        if self.a0.len() != m || self.v0.len() != m || self.c0.len() != m * m {
            return Err(InitError::BadShape(m));
        }
        for (i, &v) in self.v0.iter().enumerate() {
            if v.abs() > 1.0 {
                return Err(InitError::OverlapTooLarge(v, i));
            }
        }
        for i in 0..m {
            let d = self.c0[i * m + i];
            if d != 1.0 {
                return Err(InitError::BadDiagonal(d, i));
            }
            for j in 0..i {
                if self.c0[i * m + j] != self.c0[j * m + i] {
                    return Err(InitError::NotSymmetric(i, j));
                }
            }
        }
        // Semidefinite Cholesky: zero pivots are fine (overlapping neurons are
        // legitimate initial conditions) as long as no pivot goes negative and
        // rank-deficient columns are consistent.
        let mut l = self.c0.clone();
        let tol = 1e-10;
        for k in 0..m {
            let mut d = l[k * m + k];
            for p in 0..k {
                d -= l[k * m + p] * l[k * m + p];
            }
            if d < -tol {
                return Err(InitError::NotPsd(d, k));
            }
            if d <= tol {
                // Deflated direction: the rest of the column must vanish too.
                for i in k + 1..m {
                    let mut off = l[i * m + k];
                    for p in 0..k {
                        off -= l[i * m + p] * l[k * m + p];
                    }
                    if off.abs() > 1e-8 {
                        return Err(InitError::NotPsd(off, k));
                    }
                    l[i * m + k] = 0.0;
                }
                l[k * m + k] = 0.0;
                continue;
            }
            let root = d.sqrt();
            l[k * m + k] = root;
            for i in k + 1..m {
                let mut off = l[i * m + k];
                for p in 0..k {
                    off -= l[i * m + p] * l[k * m + p];
                }
                l[i * m + k] = off / root;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneralConfig {
    pub m: usize,
    /// Sample ratio n / d.
    pub alpha_bar: f64,
    pub eta: f64,
    pub init: GeneralInit,
    pub freeze_a: bool,
}

/// State of one per-neuron integration. Same close/extend cadence as the
/// symmetric solver; ordered pairs (i, j) index the flattened field arrays as
/// i * m + j, and C_ij(t, s) for s > t is read from the transposed pair.
#[derive(Debug)]
pub struct GeneralDmft {
    model: Model,
    cfg: GeneralConfig,
    c: Vec<CausalField>,
    r: Vec<CausalField>,
    sigma_c: CausalField,
    pair: ResponseCorrelation,
    a: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    /// (1/m) sum_l a_l(s) phi_hat(v_l(s)), cached per closed row.
    a_phi: Vec<f64>,
    e_tr: Vec<f64>,
    e_ts: Vec<f64>,
    m_r: Vec<Vec<f64>>,
    m_c: Vec<Vec<f64>>,
    int_ra: f64,
}

impl GeneralDmft {
    pub fn new(model: Model, cfg: GeneralConfig) -> Result<Self, InitError> {
        let m = cfg.m;
        assert!(m >= 1, "width must be at least 1");
        assert!(cfg.eta > 0.0, "step size must be positive");
        cfg.init.validate(m)?;
        let mut c = Vec::with_capacity(m * m);
        let mut r = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut cf = CausalField::new(false);
                cf.extend(&[cfg.init.c0[i * m + j]]).unwrap();
                c.push(cf);
                let mut rf = CausalField::new(false);
                rf.extend(&[0.0]).unwrap();
                r.push(rf);
            }
        }
        Ok(Self {
            a: cfg.init.a0.iter().map(|&x| vec![x]).collect(),
            v: cfg.init.v0.iter().map(|&x| vec![x]).collect(),
            nu: vec![Vec::new(); m],
            pair: ResponseCorrelation::new(cfg.eta, 0),
            model,
            cfg,
            c,
            r,
            sigma_c: CausalField::new(true),
            a_phi: Vec::new(),
            e_tr: Vec::new(),
            e_ts: Vec::new(),
            m_r: vec![Vec::new(); m * m],
            m_c: vec![Vec::new(); m * m],
            int_ra: 0.0,
        })
    }

    /// C_ij(t, s) for any ordering of the time arguments.
    #[inline]
    fn get_c(&self, i: usize, j: usize, t: usize, s: usize) -> f64 {
        let m = self.cfg.m;
        if s <= t {
            self.c[i * m + j].get(t, s)
        } else {
            self.c[j * m + i].get(s, t)
        }
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

    fn is_closed(&self) -> bool {
        self.nu[0].len() == self.c[0].rows()
    }

    fn close_row(&mut self) {
        let t = self.c[0].rows() - 1;
        let m = self.cfg.m;
        let mf = m as f64;
        let eta = self.cfg.eta;
        let pref = self.cfg.alpha_bar / mf;
        let kernel = &self.model.kernel;
        let link = &self.model.link;
        let tau2 = link.tau2();
        let phi2 = link.phi_norm2();

        let a_t: Vec<f64> = (0..m).map(|i| self.a[i][t]).collect();
        let v_t: Vec<f64> = (0..m).map(|i| self.v[i][t]).collect();
        let phi_t: Vec<f64> = v_t.iter().map(|&v| link.eval_phi_hat(v, 0)).collect();
        let phip_t: Vec<f64> = v_t.iter().map(|&v| link.eval_phi_hat(v, 1)).collect();
        self.a_phi
            .push(a_t.iter().zip(&phi_t).map(|(a, p)| a * p).sum::<f64>() / mf);

        let mut sc_row = vec![0.0; t + 1];
        let mut sr_row = vec![0.0; t + 1];
        for s in 0..=t {
            let mut hsum = 0.0;
            let mut hrsum = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let w = a_t[i] * self.a[j][s];
                    let cij = self.c[i * m + j].get(t, s);
                    hsum += w * kernel.eval(cij, 0);
                    hrsum += w * kernel.eval(cij, 1) * self.r[i * m + j].get(t, s);
                }
            }
            sc_row[s] = tau2 + phi2 + hsum / (mf * mf) - self.a_phi[t] - self.a_phi[s];
            sr_row[s] = hrsum / (mf * mf);
        }
        self.sigma_c.extend(&sc_row).unwrap();
        self.pair.extend_row(&sr_row, &self.sigma_c);

        let ra_row = self.pair.r_a.row(t);
        let ca_row = self.pair.c_a.row(t);
        self.e_tr.push(-0.5 * ca_row[t]);
        let mut hself = 0.0;
        for i in 0..m {
            for j in 0..m {
                hself += a_t[i] * a_t[j] * kernel.eval(self.get_c(i, j, t, t), 0);
            }
        }
        self.e_ts
            .push(0.5 * (tau2 + phi2 + hself / (mf * mf) - 2.0 * self.a_phi[t]));

        for i in 0..m {
            for j in 0..m {
                let ij = i * m + j;
                self.m_r[ij].clear();
                self.m_c[ij].clear();
                for s in 0..=t {
                    let w = pref * a_t[i] * self.a[j][s];
                    let cij = self.c[ij].get(t, s);
                    let rij = self.r[ij].get(t, s);
                    self.m_r[ij].push(
                        w * (ra_row[s] * kernel.eval(cij, 1)
                            + ca_row[s] * kernel.eval(cij, 2) * rij),
                    );
                    self.m_c[ij].push(w * ca_row[s] * kernel.eval(cij, 1));
                }
            }
        }
        self.int_ra = eta * ra_row.iter().sum::<f64>();

        for i in 0..m {
            let mut mem = 0.0;
            for j in 0..m {
                let ij = i * m + j;
                let ji = j * m + i;
                let cji_row = self.c[ji].row(t);
                let rji_row = self.r[ji].row(t);
                for s in 0..=t {
                    // C_ij(s, t) read as C_ji(t, s): row t is contiguous.
                    mem += self.m_r[ij][s] * cji_row[s] + self.m_c[ij][s] * rji_row[s];
                }
            }
            let nu_i = pref * a_t[i] * phip_t[i] * v_t[i] * self.int_ra - eta / mf * mem;
            self.nu[i].push(nu_i);
        }
    }

    fn extend_row(&mut self) {
        let t = self.c[0].rows() - 1;
        let m = self.cfg.m;
        let mf = m as f64;
        let eta = self.cfg.eta;
        let pref = self.cfg.alpha_bar / mf;
        let kernel = &self.model.kernel;
        let link = &self.model.link;

        let a_t: Vec<f64> = (0..m).map(|i| self.a[i][t]).collect();
        let v_t: Vec<f64> = (0..m).map(|i| self.v[i][t]).collect();
        let nu_t: Vec<f64> = (0..m).map(|i| self.nu[i][t]).collect();
        let phi_t: Vec<f64> = v_t.iter().map(|&v| link.eval_phi_hat(v, 0)).collect();
        let phip_t: Vec<f64> = v_t.iter().map(|&v| link.eval_phi_hat(v, 1)).collect();
        let ra_row = self.pair.r_a.row(t).to_vec();
        let ca_row = self.pair.c_a.row(t).to_vec();

        // Second-layer weights.
        let mut a_next = a_t.clone();
        if !self.cfg.freeze_a {
            for i in 0..m {
                let mut resp = 0.0;
                let mut corr = 0.0;
                for s in 0..=t {
                    let mut havg = 0.0;
                    let mut hpavg = 0.0;
                    for l in 0..m {
                        // C_li(s, t) = C_il(t, s).
                        let cil = self.c[i * m + l].get(t, s);
                        havg += self.a[l][s] * kernel.eval(cil, 0);
                        hpavg += self.a[l][s]
                            * kernel.eval(cil, 1)
                            * self.r[i * m + l].get(t, s);
                    }
                    resp += ra_row[s] * (havg / mf - phi_t[i]);
                    corr += ca_row[s] * hpavg / mf;
                }
                a_next[i] = a_t[i] + eta * (-pref * eta * resp - pref * eta * corr);
            }
        }

        // Signal overlaps.
        let mut v_next = v_t.clone();
        for i in 0..m {
            let mut mem = 0.0;
            for j in 0..m {
                let ij = i * m + j;
                for s in 0..=t {
                    mem += self.m_r[ij][s] * self.v[j][s];
                }
            }
            v_next[i] = v_t[i]
                + eta
                    * (-nu_t[i] * v_t[i] + pref * a_t[i] * phip_t[i] * self.int_ra
                        - eta / mf * mem);
        }

        // Correlation rows: the one-sided derivative F_ij(T, t') for every
        // ordered pair; the new diagonal adds F_ij and F_ji.
        let mut f = vec![vec![0.0; t + 1]; m * m];
        for i in 0..m {
            for j in 0..m {
                let ij = i * m + j;
                let drive = pref * a_t[i] * phip_t[i] * self.int_ra;
                for tp in 0..=t {
                    let mut mem_r = 0.0;
                    for l in 0..m {
                        let il = i * m + l;
                        for s in 0..=t {
                            mem_r += self.m_r[il][s] * self.get_c(l, j, s, tp);
                        }
                    }
                    let mut mem_c = 0.0;
                    for l in 0..m {
                        let il = i * m + l;
                        let jl_row = self.r[j * m + l].row(tp);
                        for s in 0..=tp {
                            mem_c += self.m_c[il][s] * jl_row[s];
                        }
                    }
                    f[ij][tp] = -nu_t[i] * self.c[ij].get(t, tp) + drive * self.v[j][tp]
                        - eta / mf * (mem_r + mem_c);
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                let ij = i * m + j;
                let mut row = vec![0.0; t + 2];
                for tp in 0..=t {
                    row[tp] = self.c[ij].get(t, tp) + eta * f[ij][tp];
                }
                row[t + 1] = self.c[ij].get(t, t) + eta * (f[ij][t] + f[j * m + i][t]);
                self.c[ij].extend(&row).unwrap();
            }
        }

        // Response rows.
        for i in 0..m {
            for j in 0..m {
                let ij = i * m + j;
                let mut row = vec![0.0; t + 2];
                for tp in 0..=t {
                    let mut mem = 0.0;
                    for l in 0..m {
                        let il = i * m + l;
                        for s in tp..=t {
                            mem += self.m_r[il][s] * self.r[l * m + j].get(s, tp);
                        }
                    }
                    let rij = self.r[ij].get(t, tp);
                    row[tp] = rij + eta * (-nu_t[i] * rij - eta / mf * mem);
                }
                if i == j {
                    row[t] += 1.0;
                }
                self.r[ij].extend(&row).unwrap();
            }
        }

        for i in 0..m {
            self.a[i].push(a_next[i]);
            self.v[i].push(v_next[i]);
        }
    }

    pub fn cfg(&self) -> &GeneralConfig {
        &self.cfg
    }

    pub fn eta(&self) -> f64 {
        self.cfg.eta
    }

    pub fn steps(&self) -> usize {
        self.nu[0].len().saturating_sub(1)
    }

    pub fn a(&self, i: usize) -> &[f64] {
        &self.a[i]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    pub fn nu(&self, i: usize) -> &[f64] {
        &self.nu[i]
    }

    pub fn e_tr(&self) -> &[f64] {
        &self.e_tr
    }

    pub fn e_ts(&self) -> &[f64] {
        &self.e_ts
    }

    pub fn c_field(&self, i: usize, j: usize) -> &CausalField {
        &self.c[i * self.cfg.m + j]
    }

    pub fn r_field(&self, i: usize, j: usize) -> &CausalField {
        &self.r[i * self.cfg.m + j]
    }

    pub fn r_a(&self) -> &CausalField {
        &self.pair.r_a
    }

    pub fn c_a(&self) -> &CausalField {
        &self.pair.c_a
    }

    pub fn residual_corr(&self, t: usize, s: usize) -> f64 {
        -self.pair.c_a.get(t, s)
    }
}
