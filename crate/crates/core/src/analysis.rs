//! Post-processing of completed runs: relaxation times, power-law fits that
//! locate interpolation thresholds, the noise-rescaling transfer of
//! thresholds, parametric resampling, and master-curve collapse metrics.

use thiserror::Error;

use crate::kernels::{effective_noise, CovarianceKernel, TargetLink};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {want} points, got {got}")]
    TooFewPoints { want: usize, got: usize },
    #[error("relaxation time at point {0} must be positive and finite")]
    BadPoint(usize),
    #[error("x* search ran into the bracket boundary at gap {0}")]
    BracketExhausted(f64),
    #[error("fitted exponent {0} is not positive")]
    BadExponent(f64),
    #[error("x is not strictly monotone on the selected window")]
    NonMonotone,
    #[error("x is constant on the selected window")]
    ConstantX,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rescaled runs share no common window")]
    EmptyWindow,
    #[error("kernel has no linear part, the noise reduction is singular")]
    SingularReduction,
}

/// First-crossing time of the training error below epsilon * tau^2.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationResult {
    /// None encodes "did not relax within the horizon".
    pub t_rel: Option<f64>,
    pub epsilon: f64,
    /// Label of the run the series came from; plumbing for sweep output.
    pub run: String,
}

/// Locates the first grid time with e_tr below epsilon * tau^2 and refines
/// it by interpolation, linear in log e_tr because the tails decay
/// exponentially (plain linear when a bracketing value is not positive).
pub fn relaxation_time(
    times: &[f64],
    e_tr: &[f64],
    tau2: f64,
    epsilon: f64,
) -> Result<RelaxationResult, AnalysisError> {
    if times.len() != e_tr.len() {
        return Err(AnalysisError::LengthMismatch(times.len(), e_tr.len()));
    }
    let thr = epsilon * tau2;
    let hit = e_tr.iter().position(|&e| e < thr);
    let t_rel = match hit {
        None => None,
        Some(0) => Some(times[0]),
        Some(j) => {
            let (t0, t1) = (times[j - 1], times[j]);
            let (e0, e1) = (e_tr[j - 1], e_tr[j]);
            let frac = if e0 > 0.0 && e1 > 0.0 && thr > 0.0 {
                (e0.ln() - thr.ln()) / (e0.ln() - e1.ln())
            } else {
                (e0 - thr) / (e0 - e1)
            };
            Some(t0 + frac * (t1 - t0))
        }
    };
    Ok(RelaxationResult {
        t_rel,
        epsilon,
        run: String::new(),
    })
}

/// Fit of t_rel = L (x* - x)^(-nu) near a divergence approached from below.
#[derive(Debug, Clone)]
pub struct PowerLawFit {
    pub x_star: f64,
    pub nu: f64,
    pub amplitude: f64,
    /// RMS residual of the log-log linear fit at the chosen x*.
    pub residual: f64,
    /// False when t_rel is not increasing in x (the fit is then suspect).
    pub monotone: bool,
}

impl PowerLawFit {
    /// key=value lines for the summary files the sweep driver writes.
    pub fn summary(&self, label: &str) -> String {
        format!(
            "{label}.x_star={:.12e}\n{label}.nu={:.12e}\n{label}.amplitude={:.12e}\n{label}.residual={:.12e}\n{label}.monotone={}\n",
            self.x_star, self.nu, self.amplitude, self.residual, self.monotone
        )
    }
}

fn log_fit(points: &[(f64, f64)], x_star: f64, fix_nu: Option<f64>) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let us: Vec<f64> = points.iter().map(|&(x, _)| (x_star - x).ln()).collect();
    let ws: Vec<f64> = points.iter().map(|&(_, t)| t.ln()).collect();
    let mu = us.iter().sum::<f64>() / n;
    let mw = ws.iter().sum::<f64>() / n;
    let slope = match fix_nu {
        Some(nu) => -nu,
        None => {
            let cov: f64 = us.iter().zip(&ws).map(|(u, w)| (u - mu) * (w - mw)).sum();
            let var: f64 = us.iter().map(|u| (u - mu) * (u - mu)).sum();
            cov / var
        }
    };
    let intercept = mw - slope * mu;
    let mut rss = 0.0;
    for (u, w) in us.iter().zip(&ws) {
        let r = w - (intercept + slope * u);
        rss += r * r;
    }
    (slope, intercept, (rss / n).sqrt())
}

/// 1-D search over the divergence location x*: for each candidate the fit of
/// log t_rel against log(x* - x) is linear least squares, and the candidate
/// minimizing the RMS residual wins. `fix_nu` pins the exponent and fits
/// only (x*, L), the variant the acceptance thresholds use.
pub fn fit_powerlaw(
    points: &[(f64, f64)],
    fix_nu: Option<f64>,
) -> Result<PowerLawFit, AnalysisError> {
    if points.len() < 4 {
        return Err(AnalysisError::TooFewPoints {
            want: 4,
            got: points.len(),
        });
    }
    for (i, &(_, t)) in points.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(AnalysisError::BadPoint(i));
        }
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = pts.windows(2).all(|w| w[1].1 > w[0].1);
    let x_max = pts.last().unwrap().0;
    let span = (x_max - pts[0].0).max(x_max.abs()).max(1e-300);

    // Coarse log-spaced scan of the gap g = x* - x_max, then golden-section
    // refinement inside the winning bracket.
    let (g_lo, g_hi) = (span * 1e-12, span * 1e6);
    let n_scan = 400;
    let ratio = (g_hi / g_lo).powf(1.0 / (n_scan - 1) as f64);
    let mut best = (f64::INFINITY, 0usize);
    let mut g = g_lo;
    let mut gaps = Vec::with_capacity(n_scan);
    for k in 0..n_scan {
        gaps.push(g);
        let (_, _, r) = log_fit(&pts, x_max + g, fix_nu);
        if r < best.0 {
            best = (r, k);
        }
        g *= ratio;
    }
    if best.1 == 0 || best.1 == n_scan - 1 {
        return Err(AnalysisError::BracketExhausted(gaps[best.1]));
    }

    let (mut a, mut b) = (gaps[best.1 - 1], gaps[best.1 + 1]);
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = log_fit(&pts, x_max + c, fix_nu).2;
    let mut fd = log_fit(&pts, x_max + d, fix_nu).2;
    for _ in 0..300 {
        if b - a <= f64::EPSILON * b {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = log_fit(&pts, x_max + c, fix_nu).2;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = log_fit(&pts, x_max + d, fix_nu).2;
        }
    }
    let g_best = 0.5 * (a + b);
    let x_star = x_max + g_best;
    let (slope, intercept, residual) = log_fit(&pts, x_star, fix_nu);
    let nu = -slope;
    if nu <= 0.0 {
        return Err(AnalysisError::BadExponent(nu));
    }
    Ok(PowerLawFit {
        x_star,
        nu,
        amplitude: intercept.exp(),
        residual,
        monotone,
    })
}

/// Threshold transfer from the pure-noise problem: a target and noise enter
/// only through the effective noise tau'^2, so the threshold scales by its
/// square root.
pub fn gamma_star_transfer(
    gamma_star_pn: f64,
    link: &TargetLink,
    kernel: &CovarianceKernel,
) -> Result<f64, AnalysisError> {
    if kernel.coeffs().len() < 2 || kernel.coeffs()[1] <= 0.0 {
        return Err(AnalysisError::SingularReduction);
    }
    let tau_eff2 =
        effective_noise(link, kernel).map_err(|_| AnalysisError::SingularReduction)?;
    Ok(tau_eff2.sqrt() * gamma_star_pn)
}

/// Resamples y(x) onto a uniform x-grid by linear interpolation. The window
/// is an index range [lo, hi); x must be strictly monotone on it (either
/// direction). Output x is always increasing.
pub fn parametric_curve(
    x: &[f64],
    y: &[f64],
    window: Option<(usize, usize)>,
    samples: usize,
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let (lo, hi) = window.unwrap_or((0, x.len()));
    let xs = &x[lo..hi];
    let ys = &y[lo..hi];
    if xs.len() < 2 || samples < 2 {
        return Err(AnalysisError::TooFewPoints {
            want: 2,
            got: xs.len().min(samples),
        });
    }
    if xs.iter().all(|&v| v == xs[0]) {
        return Err(AnalysisError::ConstantX);
    }
    let increasing = xs[1] > xs[0];
    let ordered = |a: f64, b: f64| if increasing { a < b } else { a > b };
    if !xs.windows(2).all(|w| ordered(w[0], w[1])) {
        return Err(AnalysisError::NonMonotone);
    }

    let (xv, yv): (Vec<f64>, Vec<f64>) = if increasing {
        (xs.to_vec(), ys.to_vec())
    } else {
        (
            xs.iter().rev().copied().collect(),
            ys.iter().rev().copied().collect(),
        )
    };
    let (x0, x1) = (xv[0], xv[xv.len() - 1]);
    let mut out_x = Vec::with_capacity(samples);
    let mut out_y = Vec::with_capacity(samples);
    let mut seg = 0usize;
    for k in 0..samples {
        let xq = x0 + (x1 - x0) * k as f64 / (samples - 1) as f64;
        while seg + 2 < xv.len() && xv[seg + 1] <= xq {
            seg += 1;
        }
        let frac = (xq - xv[seg]) / (xv[seg + 1] - xv[seg]);
        out_x.push(xq);
        out_y.push(yv[seg] + frac * (yv[seg + 1] - yv[seg]));
    }
    Ok((out_x, out_y))
}

/// Sup-norm distances between consecutive rescaled curves.
#[derive(Debug, Clone)]
pub struct CollapseReport {
    /// Widths sorted ascending.
    pub m: Vec<f64>,
    /// Distance between run k and run k+1 on the common rescaled window.
    pub pair_distance: Vec<f64>,
    /// True when the distances strictly decrease with m.
    pub shrinking: bool,
}

/// Measures how well curves at different widths collapse after rescaling
/// time by m^(-time_power) and values by m^(value_power). Distances are
/// sup-norms over a uniform probe grid on the common rescaled window.
pub fn collapse_distance(
    runs: &[(f64, &[f64], &[f64])],
    time_power: f64,
    value_power: f64,
) -> Result<CollapseReport, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            want: 2,
            got: runs.len(),
        });
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&i, &j| runs[i].0.total_cmp(&runs[j].0));

    struct Scaled {
        m: f64,
        x: Vec<f64>,
        y: Vec<f64>,
    }
    let mut scaled = Vec::with_capacity(runs.len());
    for &i in &order {
        let (m, t, v) = runs[i];
        if t.len() != v.len() {
            return Err(AnalysisError::LengthMismatch(t.len(), v.len()));
        }
        if t.len() < 2 {
            return Err(AnalysisError::TooFewPoints { want: 2, got: t.len() });
        }
        let tp = m.powf(time_power);
        let vp = m.powf(value_power);
        scaled.push(Scaled {
            m,
            x: t.iter().map(|&tt| tt / tp).collect(),
            y: v.iter().map(|&vv| vv * vp).collect(),
        });
    }
    let lo = scaled
        .iter()
        .map(|s| s.x[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = scaled
        .iter()
        .map(|s| *s.x.last().unwrap())
        .fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(AnalysisError::EmptyWindow);
    }

    let probes = 512usize;
    let value_at = |s: &Scaled, xq: f64| -> f64 {
        let j = match s.x.binary_search_by(|v| v.total_cmp(&xq)) {
            Ok(j) => return s.y[j],
            Err(j) => j.clamp(1, s.x.len() - 1),
        };
        let frac = (xq - s.x[j - 1]) / (s.x[j] - s.x[j - 1]);
        s.y[j - 1] + frac * (s.y[j] - s.y[j - 1])
    };
    let mut pair_distance = Vec::with_capacity(scaled.len() - 1);
    for pair in scaled.windows(2) {
        let mut sup = 0.0f64;
        for k in 0..probes {
            let xq = lo + (hi - lo) * k as f64 / (probes - 1) as f64;
            sup = sup.max((value_at(&pair[0], xq) - value_at(&pair[1], xq)).abs());
        }
        pair_distance.push(sup);
    }
    let shrinking = pair_distance.windows(2).all(|w| w[1] < w[0]);
    Ok(CollapseReport {
        m: scaled.iter().map(|s| s.m).collect(),
        pair_distance,
        shrinking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_decay_crosses_at_minus_log_epsilon() {
        let times: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
        let e: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let r = relaxation_time(&times, &e, 1.0, 1e-7).unwrap();
        assert_abs_diff_eq!(r.t_rel.unwrap(), 16.118_095_650_958_32, epsilon = 1e-9);
    }

    #[test]
    fn flat_series_never_relaxes() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let e = vec![0.5; 100];
        let r = relaxation_time(&times, &e, 1.0, 1e-7).unwrap();
        assert_eq!(r.t_rel, None);
    }

    #[test]
    fn already_below_threshold_relaxes_at_the_first_time() {
        let times = [0.0, 1.0, 2.0];
        let e = [1e-9, 1e-10, 1e-11];
        let r = relaxation_time(&times, &e, 1.0, 1e-7).unwrap();
        assert_eq!(r.t_rel, Some(0.0));
    }

    #[test]
    fn crossing_interpolation_is_monotone_in_epsilon() {
        let times: Vec<f64> = (0..500).map(|k| k as f64 * 0.05).collect();
        let e: Vec<f64> = times.iter().map(|t| (-0.7 * t).exp() * 0.3).collect();
        let mut last = f64::NEG_INFINITY;
        for eps in [1e-3, 1e-4, 1e-5, 1e-6, 1e-7] {
            let t = relaxation_time(&times, &e, 1.0, eps)
                .unwrap()
                .t_rel
                .unwrap();
            assert!(t >= last, "t_rel fell from {last} to {t} at eps {eps}");
            last = t;
        }
    }

    #[test]
    fn synthetic_power_law_is_recovered_exactly() {
        let alphas = [0.6, 0.8, 1.0, 1.1];
        let pts: Vec<(f64, f64)> = alphas
            .iter()
            .map(|&a: &f64| (a, 3.0 * (1.2 - a).powi(-2)))
            .collect();
        let fit = fit_powerlaw(&pts, None).unwrap();
        assert_abs_diff_eq!(fit.x_star, 1.2, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.nu, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.amplitude, 3.0, epsilon = 1e-6);
        assert!(fit.monotone);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn pinned_exponent_variant_recovers_the_location() {
        let alphas = [0.6, 0.75, 0.9, 1.0, 1.1];
        let pts: Vec<(f64, f64)> = alphas
            .iter()
            .map(|&a: &f64| (a, 0.7 * (1.18 - a).powi(-2)))
            .collect();
        let fit = fit_powerlaw(&pts, Some(2.0)).unwrap();
        assert_abs_diff_eq!(fit.x_star, 1.18, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.nu, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.amplitude, 0.7, epsilon = 1e-6);
    }

    #[test]
    fn non_monotone_relaxation_times_raise_the_flag() {
        let pts = [(0.6, 10.0), (0.8, 8.0), (1.0, 30.0), (1.1, 80.0)];
        let fit = fit_powerlaw(&pts, Some(2.0)).unwrap();
        assert!(!fit.monotone);
    }

    #[test]
    fn decreasing_times_exhaust_the_bracket() {
        // Times shrinking toward the right edge cannot come from a
        // divergence above it with the exponent pinned positive.
        let pts = [(0.6, 80.0), (0.8, 30.0), (1.0, 8.0), (1.1, 3.0)];
        let err = fit_powerlaw(&pts, Some(2.0)).unwrap_err();
        assert!(
            matches!(err, AnalysisError::BracketExhausted(_)),
            "got {err:?}"
        );
    }

    #[test]
    fn too_few_or_bad_points_are_rejected() {
        let short = [(0.6, 10.0), (0.8, 20.0), (1.0, 40.0)];
        assert!(matches!(
            fit_powerlaw(&short, None).unwrap_err(),
            AnalysisError::TooFewPoints { want: 4, got: 3 }
        ));
        let bad = [(0.6, 10.0), (0.8, 20.0), (1.0, 0.0), (1.1, 40.0)];
        assert!(matches!(
            fit_powerlaw(&bad, None).unwrap_err(),
            AnalysisError::BadPoint(2)
        ));
    }

    #[test]
    fn transfer_is_identity_for_unit_pure_noise_and_scales_with_tau() {
        let kernel = CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap();
        let pn1 = TargetLink::pure_noise(1.0).unwrap();
        assert_abs_diff_eq!(
            gamma_star_transfer(0.8, &pn1, &kernel).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        let pn25 = TargetLink::pure_noise(2.5 * 2.5).unwrap();
        assert_abs_diff_eq!(
            gamma_star_transfer(0.8, &pn25, &kernel).unwrap(),
            2.5 * 0.8,
            epsilon = 1e-14
        );
    }

    #[test]
    fn transfer_reduces_a_learnable_component() {
        // h = phi_hat = (9/10)z + z^2/2, tau = 0.3, ||phi||^2 = 1.4:
        // tau'^2 = 0.09 + 1.4 - 0.81/0.9 = 0.59.
        let kernel = CovarianceKernel::new(vec![0.0, 0.9, 0.5]).unwrap();
        let link = TargetLink::new(vec![0.0, 0.9, 0.5], 1.4, 0.09).unwrap();
        let got = gamma_star_transfer(1.0, &link, &kernel).unwrap();
        assert_abs_diff_eq!(got, 0.59f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(got, 0.768, epsilon = 5e-4);
    }

    #[test]
    fn transfer_requires_a_linear_kernel_part() {
        let kernel = CovarianceKernel::new(vec![0.0, 0.0, 1.0]).unwrap();
        let link = TargetLink::pure_noise(1.0).unwrap();
        assert!(matches!(
            gamma_star_transfer(1.0, &link, &kernel).unwrap_err(),
            AnalysisError::SingularReduction
        ));
    }

    #[test]
    fn parametric_resampling_recovers_a_parabola() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|t| t * t).collect();
        let (xs, ys) = parametric_curve(&t, &y, None, 37).unwrap();
        // Linear interpolation of t^2 on step h is off by at most h^2/4.
        for (x, y) in xs.iter().zip(&ys) {
            assert_abs_diff_eq!(*y, x * x, epsilon = 2.5e-5);
        }
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[36], 1.0);
    }

    #[test]
    fn parametric_handles_decreasing_x_and_rejects_bad_input() {
        let x = [3.0, 2.0, 1.0];
        let y = [9.0, 4.0, 1.0];
        let (xs, ys) = parametric_curve(&x, &y, None, 3).unwrap();
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);
        assert_eq!(ys, vec![1.0, 4.0, 9.0]);

        let wiggle = [0.0, 1.0, 0.5, 2.0];
        let yy = [0.0; 4];
        assert!(matches!(
            parametric_curve(&wiggle, &yy, None, 4).unwrap_err(),
            AnalysisError::NonMonotone
        ));
        // A window that restricts to the monotone head is fine.
        assert!(parametric_curve(&wiggle, &yy, Some((0, 2)), 4).is_ok());

        let flat = [1.0, 1.0, 1.0];
        assert!(matches!(
            parametric_curve(&flat, &yy[..3], None, 3).unwrap_err(),
            AnalysisError::ConstantX
        ));
    }

    #[test]
    fn identical_runs_collapse_to_zero_distance() {
        let t: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (1.0 + t).recip()).collect();
        let runs = [(16.0, &t[..], &y[..]), (64.0, &t[..], &y[..])];
        let rep = collapse_distance(&runs, 0.0, 0.0).unwrap();
        assert_eq!(rep.pair_distance, vec![0.0]);
    }

    #[test]
    fn one_over_m_defects_halve_as_m_doubles() {
        let t: Vec<f64> = (0..=80).map(|k| k as f64 * 0.05).collect();
        let master: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let defect: Vec<f64> = t.iter().map(|t| (1.5 * t).sin()).collect();
        let make = |m: f64| -> Vec<f64> {
            master
                .iter()
                .zip(&defect)
                .map(|(g, c)| g + c / m)
                .collect()
        };
        let (y16, y32, y64) = (make(16.0), make(32.0), make(64.0));
        let runs = [
            (16.0, &t[..], &y16[..]),
            (32.0, &t[..], &y32[..]),
            (64.0, &t[..], &y64[..]),
        ];
        let rep = collapse_distance(&runs, 0.0, 0.0).unwrap();
        assert!(rep.shrinking);
        assert_abs_diff_eq!(
            rep.pair_distance[0] / rep.pair_distance[1],
            2.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn disjoint_rescaled_windows_are_an_error() {
        let t1: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let t2: Vec<f64> = (0..10).map(|k| 100.0 + k as f64).collect();
        let y = vec![0.0; 10];
        let runs = [(1.0, &t1[..], &y[..]), (1.0, &t2[..], &y[..])];
        assert!(matches!(
            collapse_distance(&runs, 0.0, 0.0).unwrap_err(),
            AnalysisError::EmptyWindow
        ));
    }

    #[test]
    fn summary_lines_are_key_value_formatted() {
        let fit = PowerLawFit {
            x_star: 1.18,
            nu: 2.0,
            amplitude: 0.7,
            residual: 1e-3,
            monotone: true,
        };
        let s = fit.summary("fit");
        assert!(s.contains("fit.x_star=1.180000000000e0"));
        assert!(s.contains("fit.monotone=true"));
    }
}
