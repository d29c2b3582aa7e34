//! Finite-(n, d) realizations of the Gaussian-equivalent training risk and
//! projected gradient descent on them: the Monte-Carlo oracle for the
//! two-time solvers.
//!
//! A realization holds one iid standard Gaussian tensor per sample and per
//! kernel degree; contracting sample i's degree-k tensor with w^(x)k and
//! weighting by c_k = sqrt(h_k) produces a risk process with covariance
//! (1/m^2) <a, h(W W'^T) a'> exactly. The target part phi^g reuses the same
//! tensors contracted with the latent direction, plus an independent Gaussian
//! that completes the variance to ||phi||^2, so that both marginals and the
//! cross covariance come out right simultaneously.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::Model;
use crate::rng;

/// Dense tensors refuse to allocate beyond this (per landscape).
const MEMORY_BUDGET_BYTES: u128 = 2_000_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degree-{degree} dense tensors at n = {n}, d = {d} need {bytes} bytes")]
    MemoryBudget {
        degree: usize,
        n: usize,
        d: usize,
        bytes: u128,
    },
    #[error("kernel degree {0} exceeds the dense-tensor limit of 3")]
    DegreeTooHigh(usize),
    #[error("target couples at degree {0} where the kernel has no weight")]
    UnsupportedTarget(usize),
    #[error("shared target components exceed ||phi||^2 by {0}")]
    VarianceDeficit(f64),
    #[error("non-finite value at step {0}")]
    NotFinite(usize),
    #[error("initial row {0} has norm {1}, want 1")]
    NotUnitRow(usize, f64),
    #[error("need at least 2 realizations, got {0}")]
    TooFewRealizations(usize),
}

/// One realization of the Gaussian risk: tensors, latent direction, labels.
#[derive(Debug, Clone)]
pub struct TensorLandscape {
    n: usize,
    d: usize,
    model: Model,
    c: Vec<f64>,
    j1: Vec<f64>,
    j2: Vec<f64>,
    j3: Vec<f64>,
    u: Vec<f64>,
    phi: Vec<f64>,
    noise: Vec<f64>,
    y: Vec<f64>,
}

/// Draws a landscape. Deterministic under (seed, index): all randomness
/// flows through one counter-based stream.
pub fn sample_landscape(
    n: usize,
    d: usize,
    model: &Model,
    seed: u64,
    index: u64,
) -> Result<TensorLandscape, SimError> {
    let coeffs = model.kernel.coeffs();
    let degree = model.kernel.degree();
    if degree > 3 {
        return Err(SimError::DegreeTooHigh(degree));
    }
    let active = |k: usize| coeffs.len() > k && coeffs[k] != 0.0;
    let mut bytes: u128 = 0;
    for k in 1..=3usize {
        if active(k) {
            bytes += 8 * (n as u128) * (d as u128).pow(k as u32);
        }
    }
    if bytes > MEMORY_BUDGET_BYTES {
        return Err(SimError::MemoryBudget {
            degree,
            n,
            d,
            bytes,
        });
    }

    let link = &model.link;
    let mut c = vec![0.0; 4];
    for k in 1..=3 {
        if active(k) {
            c[k] = coeffs[k].sqrt();
        }
    }
    // Shared-tensor coefficients for phi^g and the independent remainder.
    let phat = link.coeffs();
    let mut theta = vec![0.0; 4];
    let mut shared = 0.0;
    for (k, &pk) in phat.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        if k > 3 || c[k] == 0.0 {
            return Err(SimError::UnsupportedTarget(k));
        }
        theta[k] = pk / c[k];
        shared += theta[k] * theta[k];
    }
    let mut rem2 = link.phi_norm2() - shared;
    if rem2 < 0.0 {
        if rem2 < -1e-9 {
            return Err(SimError::VarianceDeficit(-rem2));
        }
        rem2 = 0.0;
    }

    let mut rng = rng::stream(seed, index);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.sample(StandardNormal)).collect()
    };
    let j1 = if active(1) { draw(n * d) } else { Vec::new() };
    let j2 = if active(2) { draw(n * d * d) } else { Vec::new() };
    let j3 = if active(3) { draw(n * d * d * d) } else { Vec::new() };
    let mut u = draw(d);
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut u {
        *x /= norm;
    }

    let mut phi = vec![0.0; n];
    if !link.is_pure_noise() {
        let uu = outer_powers(&u, d);
        for i in 0..n {
            let mut p = 0.0;
            if theta[1] != 0.0 {
                p += theta[1] * dot(&j1[i * d..(i + 1) * d], &u);
            }
            if theta[2] != 0.0 {
                p += theta[2] * dot(&j2[i * d * d..(i + 1) * d * d], &uu.1);
            }
            if theta[3] != 0.0 {
                p += theta[3] * dot(&j3[i * d * d * d..(i + 1) * d * d * d], &uu.2);
            }
            phi[i] = p;
        }
        if rem2 > 0.0 {
            let r = rem2.sqrt();
            for p in &mut phi {
                *p += r * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let tau = link.tau2().sqrt();
    let noise: Vec<f64> = (0..n)
        .map(|_| tau * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = phi.iter().zip(&noise).map(|(p, e)| p + e).collect();

    Ok(TensorLandscape {
        n,
        d,
        model: model.clone(),
        c,
        j1,
        j2,
        j3,
        u,
        phi,
        noise,
        y,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (w, w^(x)2, w^(x)3) as flat vectors; empty when unused by the caller.
fn outer_powers(w: &[f64], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut w2 = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            w2[a * d + b] = w[a] * w[b];
        }
    }
    let mut w3 = vec![0.0; d * d * d];
    for a in 0..d {
        for bc in 0..d * d {
            w3[a * d * d + bc] = w[a] * w2[bc];
        }
    }
    (w.to_vec(), w2, w3)
}

impl TensorLandscape {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn latent(&self) -> &[f64] {
        &self.u
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn target_values(&self) -> &[f64] {
        &self.phi
    }

    /// Per-neuron feature values psi_i(w_j) = sum_k c_k <J_i^(k), w_j^(x)k>
    /// for all samples i, one neuron at a time; `out` is n-long.
    fn features_into(&self, w: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        let need2 = self.c[2] != 0.0;
        let need3 = self.c[3] != 0.0;
        let (_, w2, w3) = if need2 || need3 {
            outer_powers(w, d)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for i in 0..n {
            let mut t = 0.0;
            if self.c[1] != 0.0 {
                t += self.c[1] * dot(&self.j1[i * d..(i + 1) * d], w);
            }
            if need2 {
                t += self.c[2] * dot(&self.j2[i * d * d..(i + 1) * d * d], &w2);
            }
            if need3 {
                t += self.c[3] * dot(&self.j3[i * d * d * d..(i + 1) * d * d * d], &w3);
            }
            out[i] = t;
        }
    }

    /// Risk-process values f^g_i(a, W) for all samples; W is m x d flat.
    pub fn f_values(&self, a: &[f64], w: &[f64]) -> Vec<f64> {
        let m = a.len();
        let mut f = vec![0.0; self.n];
        let mut psi = vec![0.0; self.n];
        for j in 0..m {
            self.features_into(&w[j * self.d..(j + 1) * self.d], &mut psi);
            for i in 0..self.n {
                f[i] += a[j] * psi[i];
            }
        }
        for x in &mut f {
            *x /= m as f64;
        }
        f
    }

    /// Training risk (1/2n) sum_i (y_i - f_i)^2.
    pub fn risk(&self, a: &[f64], w: &[f64]) -> f64 {
        let f = self.f_values(a, w);
        let mut s = 0.0;
        for i in 0..self.n {
            let r = self.y[i] - f[i];
            s += r * r;
        }
        s / (2.0 * self.n as f64)
    }
}

/// Everything gd_run records, one entry per visited step (steps + 1 total).
#[derive(Debug, Clone)]
pub struct GdTrajectory {
    pub eta_gd: f64,
    pub e_tr: Vec<f64>,
    /// Second layer, m per entry.
    pub a: Vec<Vec<f64>>,
    /// Latent overlaps u . w_i, m per entry.
    pub v: Vec<Vec<f64>>,
    /// Equal-time overlaps <w_i(t), w_j(t)>, m*m flat per entry.
    pub c_tt: Vec<Vec<f64>>,
    /// Overlaps with the start, <w_i(t), w_j(0)>, m*m flat per entry.
    pub c_t0: Vec<Vec<f64>>,
}

impl GdTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.e_tr.len()).map(|k| k as f64 * self.eta_gd).collect()
    }

    /// Number of steps on which the training risk rose by more than `tol`;
    /// a diagnostic, not an invariant (large steps may legitimately
    /// overshoot).
    pub fn energy_increase_count(&self, tol: f64) -> usize {
        self.e_tr
            .windows(2)
            .filter(|w| w[1] > w[0] + tol)
            .count()
    }
}

/// Projected gradient descent on the realized landscape:
/// a step of -eta (n/d) on the gradient, then row normalization.
pub fn gd_run(
    land: &TensorLandscape,
    a0: &[f64],
    w0: &[f64],
    eta_gd: f64,
    steps: usize,
    freeze_a: bool,
) -> Result<GdTrajectory, SimError> {
    let (n, d) = (land.n, land.d);
    let m = a0.len();
    assert_eq!(w0.len(), m * d, "W0 shape");
    for j in 0..m {
        let norm = dot(&w0[j * d..(j + 1) * d], &w0[j * d..(j + 1) * d]).sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(SimError::NotUnitRow(j, norm));
        }
    }

    let mut a = a0.to_vec();
    let mut w = w0.to_vec();
    let rate = eta_gd * n as f64 / d as f64;
    let inv_m = 1.0 / m as f64;

    let mut traj = GdTrajectory {
        eta_gd,
        e_tr: Vec::with_capacity(steps + 1),
        a: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
        c_tt: Vec::with_capacity(steps + 1),
        c_t0: Vec::with_capacity(steps + 1),
    };

    let mut psi = vec![0.0; m * n];
    let mut f = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let need2 = land.c[2] != 0.0;
    let need3 = land.c[3] != 0.0;
    let mut b2 = vec![0.0; if need2 { d * d } else { 0 }];
    let mut b3 = vec![0.0; if need3 { d * d * d } else { 0 }];

    for step in 0..=steps {
        for j in 0..m {
            land.features_into(&w[j * d..(j + 1) * d], &mut psi[j * n..(j + 1) * n]);
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                s += a[j] * psi[j * n + i];
            }
            f[i] = s * inv_m;
        }
        let mut e = 0.0;
        for i in 0..n {
            let r = land.y[i] - f[i];
            e += r * r;
            resid[i] = (f[i] - land.y[i]) / n as f64;
        }
        let e = e / (2.0 * n as f64);
        if !e.is_finite() {
            return Err(SimError::NotFinite(step));
        }

        traj.e_tr.push(e);
        traj.a.push(a.clone());
        traj.v
            .push((0..m).map(|j| dot(&w[j * d..(j + 1) * d], &land.u)).collect());
        let mut ctt = vec![0.0; m * m];
        let mut ct0 = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                ctt[i * m + j] = dot(&w[i * d..(i + 1) * d], &w[j * d..(j + 1) * d]);
                ct0[i * m + j] = dot(&w[i * d..(i + 1) * d], &w0[j * d..(j + 1) * d]);
            }
        }
        traj.c_tt.push(ctt);
        traj.c_t0.push(ct0);

        if step == steps {
            break;
        }

        // Residual-weighted tensors: one pass over samples makes every
        // per-neuron gradient a cheap contraction afterwards.
        let mut b1 = vec![0.0; d];
        if land.c[1] != 0.0 {
            for i in 0..n {
                let r = resid[i];
                let row = &land.j1[i * d..(i + 1) * d];
                for x in 0..d {
                    b1[x] += r * row[x];
                }
            }
        }
        if need2 {
            b2.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let r = resid[i];
                let row = &land.j2[i * d * d..(i + 1) * d * d];
                for x in 0..d * d {
                    b2[x] += r * row[x];
                }
            }
        }
        if need3 {
            b3.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let r = resid[i];
                let row = &land.j3[i * d * d * d..(i + 1) * d * d * d];
                for x in 0..d * d * d {
                    b3[x] += r * row[x];
                }
            }
        }

        let mut new_a = a.clone();
        if !freeze_a {
            for j in 0..m {
                let g = dot(&resid, &psi[j * n..(j + 1) * n]) * inv_m;
                new_a[j] = a[j] - rate * g;
            }
        }
        for j in 0..m {
            let wj = &w[j * d..(j + 1) * d];
            let mut grad = vec![0.0; d];
            if land.c[1] != 0.0 {
                for x in 0..d {
                    grad[x] += land.c[1] * b1[x];
                }
            }
            if need2 {
                // Gradient of <B2, w w^T> = (B2 + B2^T) w.
                for x in 0..d {
                    let mut s = 0.0;
                    for y in 0..d {
                        s += (b2[x * d + y] + b2[y * d + x]) * wj[y];
                    }
                    grad[x] += land.c[2] * s;
                }
            }
            if need3 {
                // Three insertion positions of the degree-3 contraction.
                for x in 0..d {
                    let mut s = 0.0;
                    for y in 0..d {
                        for z in 0..d {
                            s += (b3[x * d * d + y * d + z]
                                + b3[y * d * d + x * d + z]
                                + b3[y * d * d + z * d + x])
                                * wj[y]
                                * wj[z];
                        }
                    }
                    grad[x] += land.c[3] * s;
                }
            }
            let scale = rate * a[j] * inv_m;
            let row = &mut w[j * d..(j + 1) * d];
            for x in 0..d {
                row[x] -= scale * grad[x];
            }
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
        a = new_a;
    }
    Ok(traj)
}

/// Ensemble setup shared by all realizations of one Monte-Carlo comparison.
#[derive(Debug, Clone)]
pub struct GdConfig {
    pub n: usize,
    pub d: usize,
    pub model: Model,
    pub a0: Vec<f64>,
    /// w_i(0) is shared unit vector number `row_pattern[i]`; repeating an
    /// index reproduces correlated starts like C_13(0,0) = 1.
    pub row_pattern: Vec<usize>,
    pub eta_gd: f64,
    pub steps: usize,
    pub freeze_a: bool,
}

/// Per-time mean and standard error of every recorded observable.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub eta_gd: f64,
    pub count: usize,
    pub e_tr: MeanSeries,
    pub a: Vec<MeanSeries>,
    pub v: Vec<MeanSeries>,
    pub c_tt: Vec<MeanSeries>,
    pub c_t0: Vec<MeanSeries>,
}

#[derive(Debug, Clone, Default)]
pub struct MeanSeries {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Running (count, mean, M2) per slot, merged pairwise so the floating-point
/// result does not depend on thread scheduling.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.count += 1.0;
        for (k, &x) in xs.iter().enumerate() {
            let delta = x - self.mean[k];
            self.mean[k] += delta / self.count;
            self.m2[k] += delta * (x - self.mean[k]);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let total = self.count + other.count;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * other.count / total;
            self.m2[k] += other.m2[k] + delta * delta * self.count * other.count / total;
        }
        self.count = total;
    }

    fn series(&self, slots: usize, slot: impl Fn(usize) -> usize) -> MeanSeries {
        let n = self.count;
        let mut out = MeanSeries {
            mean: Vec::with_capacity(slots),
            stderr: Vec::with_capacity(slots),
        };
        for t in 0..slots {
            let k = slot(t);
            out.mean.push(self.mean[k]);
            let var = if n > 1.0 { self.m2[k] / (n - 1.0) } else { 0.0 };
            out.stderr.push((var / n).sqrt());
        }
        out
    }
}

/// Runs one realization of `cfg` under (master seed, realization index).
pub fn realize(cfg: &GdConfig, seed: u64, index: u64) -> Result<GdTrajectory, SimError> {
    let land = sample_landscape(cfg.n, cfg.d, &cfg.model, seed, 2 * index)?;
    let mut rng = rng::stream(seed, 2 * index + 1);
    let shared = cfg.row_pattern.iter().copied().max().unwrap_or(0) + 1;
    let mut vs = vec![0.0; shared * cfg.d];
    for v in vs.chunks_mut(cfg.d) {
        loop {
            for x in v.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let norm = dot(v, v).sqrt();
            if norm > 1e-12 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                break;
            }
        }
    }
    let m = cfg.a0.len();
    let mut w0 = vec![0.0; m * cfg.d];
    for (i, &p) in cfg.row_pattern.iter().enumerate() {
        w0[i * cfg.d..(i + 1) * cfg.d].copy_from_slice(&vs[p * cfg.d..(p + 1) * cfg.d]);
    }
    gd_run(&land, &cfg.a0, &w0, cfg.eta_gd, cfg.steps, cfg.freeze_a)
}

/// Ensemble mean and stderr over `n_realizations` independent draws.
/// Realizations run in parallel in fixed chunks; chunk partials merge in
/// index order, so the result is bit-identical however many threads run.
pub fn mc_average(cfg: &GdConfig, seed: u64, n_realizations: usize) -> Result<McSummary, SimError> {
    if n_realizations < 2 {
        return Err(SimError::TooFewRealizations(n_realizations));
    }
    let m = cfg.a0.len();
    let times = cfg.steps + 1;
    let slots = times * (1 + 2 * m + 2 * m * m);
    let flatten = |traj: &GdTrajectory| -> Vec<f64> {
        let mut row = Vec::with_capacity(slots);
        for t in 0..times {
            row.push(traj.e_tr[t]);
            row.extend_from_slice(&traj.a[t]);
            row.extend_from_slice(&traj.v[t]);
            row.extend_from_slice(&traj.c_tt[t]);
            row.extend_from_slice(&traj.c_t0[t]);
        }
        row
    };

    const CHUNK: usize = 16;
    let n_chunks = n_realizations.div_ceil(CHUNK);
    let partials: Vec<Result<Moments, SimError>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Moments::new(slots);
            let hi = ((chunk + 1) * CHUNK).min(n_realizations);
            for r in chunk * CHUNK..hi {
                let traj = realize(cfg, seed, r as u64)?;
                acc.push(&flatten(&traj));
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::new(slots);
    for p in partials {
        total.merge(&p?);
    }

    let stride = 1 + 2 * m + 2 * m * m;
    let series = |offset: usize| total.series(times, |t| t * stride + offset);
    Ok(McSummary {
        eta_gd: cfg.eta_gd,
        count: n_realizations,
        e_tr: series(0),
        a: (0..m).map(|j| series(1 + j)).collect(),
        v: (0..m).map(|j| series(1 + m + j)).collect(),
        c_tt: (0..m * m).map(|k| series(1 + 2 * m + k)).collect(),
        c_t0: (0..m * m).map(|k| series(1 + 2 * m + m * m + k)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CovarianceKernel, Model, TargetLink};
    use approx::assert_abs_diff_eq;

    fn setting1_kernel() -> CovarianceKernel {
        CovarianceKernel::new(vec![0.0, 0.1, 0.5]).unwrap()
    }

    #[test]
    fn degree_one_covariance_matches_closed_form() {
        // h(q) = q: f^g is linear in the tensors, and its covariance at two
        // fixed weight settings is <a, W W'^T a'> / m^2 exactly.
        let kernel = CovarianceKernel::new(vec![0.0, 1.0]).unwrap();
        let model = Model::pure_noise(kernel, 1.0);
        let (n, d) = (4usize, 16usize);
        let mut setup = rng::stream(99, 0);
        let m = 2usize;
        let unit = |setup: &mut rand_chacha::ChaCha8Rng| {
            let mut v: Vec<f64> = (0..d).map(|_| setup.sample(StandardNormal)).collect();
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        };
        let w: Vec<f64> = (0..m).flat_map(|_| unit(&mut setup)).collect();
        let wp: Vec<f64> = (0..m).flat_map(|_| unit(&mut setup)).collect();
        let a = [1.0, -0.5];
        let ap = [0.7, 0.9];

        let mut want = 0.0;
        for i in 0..m {
            for j in 0..m {
                want += a[i] * ap[j] * dot(&w[i * d..(i + 1) * d], &wp[j * d..(j + 1) * d]);
            }
        }
        want /= (m * m) as f64;

        let draws = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0.0;
        for r in 0..draws / n {
            let land = sample_landscape(n, d, &model, 7, r as u64).unwrap();
            let f = land.f_values(&a, &w);
            let fp = land.f_values(&ap, &wp);
            for i in 0..n {
                let prod = f[i] * fp[i];
                sum += prod;
                sumsq += prod * prod;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = (sumsq / count - mean * mean).max(0.0);
        let stderr = (var / count).sqrt();
        assert!(
            (mean - want).abs() <= 3.0 * stderr,
            "covariance {mean} vs {want}, stderr {stderr}"
        );
    }

    #[test]
    fn two_point_covariance_at_equal_weights_matches_h_of_one() {
        // Setting-1 kernel, W = W', a = a' = 1, m = 1: covariance h(1) = 0.6.
        let model = Model::pure_noise(setting1_kernel(), 1.0);
        let (n, d) = (8usize, 10usize);
        let mut w = vec![0.0; d];
        w[0] = 1.0;
        let a = [1.0];
        let draws = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0.0;
        for r in 0..draws / n {
            let land = sample_landscape(n, d, &model, 21, r as u64).unwrap();
            let f = land.f_values(&a, &w);
            for i in 0..n {
                sum += f[i] * f[i];
                sumsq += f[i] * f[i] * f[i] * f[i];
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = (sumsq / count - mean * mean).max(0.0);
        let stderr = (var / count).sqrt();
        assert!(
            (mean - 0.6).abs() <= 4.0 * stderr,
            "variance {mean} vs 0.6, stderr {stderr}"
        );
    }

    #[test]
    fn pure_noise_labels_are_just_noise() {
        let model = Model::pure_noise(setting1_kernel(), 4.0);
        let land = sample_landscape(2000, 5, &model, 3, 0).unwrap();
        assert!(land.target_values().iter().all(|&p| p == 0.0));
        assert_eq!(land.labels(), land.noise.as_slice());
        let var = land.labels().iter().map(|y| y * y).sum::<f64>() / 2000.0;
        assert!((var - 4.0).abs() < 0.3, "label variance {var}");
    }

    #[test]
    fn target_variance_and_cross_covariance_come_out_right() {
        // h = phi_hat = (9/10)z + z^3/6: the shared-tensor construction must
        // hit Var(phi) = ||phi||^2 and E[f phi] = phi_hat(w . u)/m. The
        // latent is redrawn per landscape, so pin w . u by building w from
        // the realized latent itself: w = q u + sqrt(1-q^2) r with r a unit
        // vector orthogonal to u.
        let kernel = CovarianceKernel::new(vec![0.0, 0.9, 0.0, 1.0 / 6.0]).unwrap();
        let link =
            TargetLink::new(vec![0.0, 0.9, 0.0, 1.0 / 6.0], 0.9 + 1.0 / 6.0, 0.36).unwrap();
        let model = Model::new(kernel, link);
        let (n, d) = (16usize, 6usize);
        let draws = 60_000usize;
        let a = [1.0];

        for q in [1.0, 0.5] {
            let mut var_sum = 0.0;
            let mut cross_sum = 0.0;
            let mut cross_sq = 0.0;
            let mut count = 0.0;
            for r in 0..draws / n {
                let land = sample_landscape(n, d, &model, 11, r as u64).unwrap();
                let u = land.latent();
                let mut w: Vec<f64> = u.iter().map(|&x| q * x).collect();
                if q < 1.0 {
                    let mut perp = vec![0.0; d];
                    perp[0] = 1.0;
                    let proj = dot(&perp, u);
                    for x in 0..d {
                        perp[x] -= proj * u[x];
                    }
                    let norm = dot(&perp, &perp).sqrt();
                    let s = (1.0 - q * q).sqrt() / norm;
                    for x in 0..d {
                        w[x] += s * perp[x];
                    }
                }
                let f = land.f_values(&a, &w);
                for i in 0..n {
                    let p = land.target_values()[i];
                    var_sum += p * p;
                    cross_sum += f[i] * p;
                    cross_sq += f[i] * p * f[i] * p;
                    count += 1.0;
                }
            }
            let var = var_sum / count;
            assert!(
                (var - (0.9 + 1.0 / 6.0)).abs() < 0.02,
                "target variance {var}"
            );
            let got = cross_sum / count;
            let want = model.link.eval_phi_hat(q, 0);
            let spread = ((cross_sq / count - got * got).max(0.0) / count).sqrt();
            assert!(
                (got - want).abs() <= 4.0 * spread.max(1e-3),
                "cross covariance at q = {q}: {got} vs {want}, stderr {spread}"
            );
        }
    }

    #[test]
    fn zero_landscape_freezes_the_trajectory() {
        let kernel = CovarianceKernel::new(vec![0.0, 0.0]).unwrap();
        let model = Model::pure_noise(kernel, 0.0);
        let land = sample_landscape(12, 6, &model, 5, 0).unwrap();
        let mut w0 = vec![0.0; 2 * 6];
        w0[0] = 1.0;
        w0[6 + 1] = 1.0;
        let traj = gd_run(&land, &[1.0, -1.0], &w0, 0.1, 20, false).unwrap();
        for t in 0..=20 {
            assert_eq!(traj.e_tr[t], 0.0);
            assert_eq!(traj.a[t], vec![1.0, -1.0]);
            assert_eq!(traj.c_t0[t], traj.c_t0[0]);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // Degrees 1 + 2 + 3 together, with a live target part.
        let kernel = CovarianceKernel::new(vec![0.0, 0.1, 0.5, 1.0 / 12.0]).unwrap();
        let link = TargetLink::new(vec![0.0, 0.2, 0.3, 0.1], 0.9, 0.25).unwrap();
        let model = Model::new(kernel, link);
        let (n, d, m) = (5usize, 8usize, 2usize);
        let land = sample_landscape(n, d, &model, 13, 0).unwrap();

        let mut rng = rng::stream(13, 1);
        let mut w = vec![0.0; m * d];
        for j in 0..m {
            let row = &mut w[j * d..(j + 1) * d];
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let norm = dot(row, row).sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let a = vec![0.8, -0.6];

        // One unprojected GD step of size eps recovers the gradient; compare
        // against central differences of the risk.
        let eps = 1e-6;
        let rate = |land: &TensorLandscape| land.n as f64 / land.d as f64;
        let traj = gd_run(&land, &a, &w, eps / rate(&land), 1, false).unwrap();
        let mut grad_a = vec![0.0; m];
        for j in 0..m {
            grad_a[j] = (a[j] - traj.a[1][j]) / eps;
        }
        for j in 0..m {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += eps;
            am[j] -= eps;
            let want = (land.risk(&ap, &w) - land.risk(&am, &w)) / (2.0 * eps);
            let rel = (grad_a[j] - want).abs() / want.abs().max(1e-12);
            assert!(rel <= 1e-5, "a-gradient {j}: {} vs {want}", grad_a[j]);
        }

        // First-layer gradient at 10 random coordinates, read off before the
        // sphere projection distorts the step: compare the tangential parts.
        for probe in 0..10 {
            let j = probe % m;
            let x = (probe * 3 + 1) % d;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j * d + x] += eps;
            wm[j * d + x] -= eps;
            let want = (land.risk(&a, &wp) - land.risk(&a, &wm)) / (2.0 * eps);

            let got = analytic_w_gradient(&land, &a, &w, j)[x];
            let rel = (got - want).abs() / want.abs().max(1e-9);
            assert!(rel <= 1e-5, "w-gradient ({j},{x}): {got} vs {want}");
        }
    }

    /// Reference gradient of the risk in w_j, assembled the slow way.
    fn analytic_w_gradient(land: &TensorLandscape, a: &[f64], w: &[f64], j: usize) -> Vec<f64> {
        let (n, d) = (land.n, land.d);
        let m = a.len();
        let f = land.f_values(a, w);
        let wj = &w[j * d..(j + 1) * d];
        let mut grad = vec![0.0; d];
        for i in 0..n {
            let r = (f[i] - land.y[i]) / n as f64;
            if land.c[1] != 0.0 {
                let row = &land.j1[i * d..(i + 1) * d];
                for x in 0..d {
                    grad[x] += r * land.c[1] * row[x];
                }
            }
            if land.c[2] != 0.0 {
                let row = &land.j2[i * d * d..(i + 1) * d * d];
                for x in 0..d {
                    let mut s = 0.0;
                    for y in 0..d {
                        s += (row[x * d + y] + row[y * d + x]) * wj[y];
                    }
                    grad[x] += r * land.c[2] * s;
                }
            }
            if land.c[3] != 0.0 {
                let row = &land.j3[i * d * d * d..(i + 1) * d * d * d];
                for x in 0..d {
                    let mut s = 0.0;
                    for y in 0..d {
                        for z in 0..d {
                            s += (row[x * d * d + y * d + z]
                                + row[y * d * d + x * d + z]
                                + row[y * d * d + z * d + x])
                                * wj[y]
                                * wj[z];
                        }
                    }
                    grad[x] += r * land.c[3] * s;
                }
            }
        }
        let scale = a[j] / m as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        grad
    }

    #[test]
    fn memory_budget_is_enforced() {
        let kernel = CovarianceKernel::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let model = Model::pure_noise(kernel, 1.0);
        let err = sample_landscape(1000, 700, &model, 0, 0).unwrap_err();
        assert!(matches!(err, SimError::MemoryBudget { .. }));
    }

    #[test]
    fn identical_realizations_have_zero_stderr() {
        let cfg = GdConfig {
            n: 10,
            d: 6,
            model: Model::pure_noise(setting1_kernel(), 1.0),
            a0: vec![1.0, -1.0],
            row_pattern: vec![0, 1],
            eta_gd: 0.1,
            steps: 5,
            freeze_a: false,
        };
        let a = realize(&cfg, 42, 7).unwrap();
        let b = realize(&cfg, 42, 7).unwrap();
        assert_eq!(a.e_tr, b.e_tr);
        let mut acc = Moments::new(a.e_tr.len());
        acc.push(&a.e_tr);
        acc.push(&b.e_tr);
        let s = acc.series(a.e_tr.len(), |t| t);
        assert!(s.stderr.iter().all(|&e| e == 0.0));
        assert_eq!(s.mean, a.e_tr);
    }

    #[test]
    fn constant_trajectories_average_to_their_midpoint() {
        // Zero kernel, tau = 1: nothing moves and e_tr is ||eps||^2 / 2n,
        // a different constant per realization.
        let cfg = GdConfig {
            n: 50,
            d: 4,
            model: Model::pure_noise(CovarianceKernel::new(vec![0.0, 0.0]).unwrap(), 1.0),
            a0: vec![1.0],
            row_pattern: vec![0],
            eta_gd: 0.1,
            steps: 4,
            freeze_a: false,
        };
        let t0 = realize(&cfg, 9, 0).unwrap();
        let t1 = realize(&cfg, 9, 1).unwrap();
        let summary = mc_average(&cfg, 9, 2).unwrap();
        for t in 0..=4 {
            assert_abs_diff_eq!(
                summary.e_tr.mean[t],
                0.5 * (t0.e_tr[t] + t1.e_tr[t]),
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(summary.e_tr.mean[t], summary.e_tr.mean[0], epsilon = 1e-14);
        }
    }

    #[test]
    fn stderr_shrinks_like_inverse_sqrt_n() {
        let cfg = GdConfig {
            n: 30,
            d: 4,
            model: Model::pure_noise(CovarianceKernel::new(vec![0.0, 0.0]).unwrap(), 1.0),
            a0: vec![1.0],
            row_pattern: vec![0],
            eta_gd: 0.1,
            steps: 0,
            freeze_a: false,
        };
        let s100 = mc_average(&cfg, 4, 100).unwrap();
        let s400 = mc_average(&cfg, 4, 400).unwrap();
        let ratio = s100.e_tr.stderr[0] / s400.e_tr.stderr[0];
        assert!(
            (ratio - 2.0).abs() <= 0.4,
            "stderr ratio {ratio}, want about 2"
        );
    }

    #[test]
    fn chunked_merge_is_scheduling_independent() {
        // The parallel path must give the same bits as a sequential fold.
        let cfg = GdConfig {
            n: 12,
            d: 5,
            model: Model::pure_noise(setting1_kernel(), 1.0),
            a0: vec![0.5, -0.5],
            row_pattern: vec![0, 0],
            eta_gd: 0.1,
            steps: 3,
            freeze_a: false,
        };
        let par = mc_average(&cfg, 77, 40).unwrap();
        let again = mc_average(&cfg, 77, 40).unwrap();
        assert_eq!(par.e_tr.mean, again.e_tr.mean);
        assert_eq!(par.e_tr.stderr, again.e_tr.stderr);
    }

    #[test]
    fn descent_does_not_climb_at_paper_scale_steps() {
        let cfg = GdConfig {
            n: 60,
            d: 40,
            model: Model::pure_noise(setting1_kernel(), 1.0),
            a0: vec![1.0, 1.0, -1.0, -1.0],
            row_pattern: vec![0, 1, 0, 1],
            eta_gd: 0.1,
            steps: 50,
            freeze_a: false,
        };
        let traj = realize(&cfg, 123, 0).unwrap();
        assert_eq!(traj.energy_increase_count(1e-8), 0);
    }
}
