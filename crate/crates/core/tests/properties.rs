//! Fuzzed invariants. The module suites pin hand values at fixed settings;
//! everything here must hold across a whole input region.

use gflow_core::analysis::{fit_powerlaw, gamma_star_transfer, relaxation_time};
use gflow_core::dmft::general::{GeneralConfig, GeneralDmft, GeneralInit};
use gflow_core::kernels::{hermite_to_kernel, CovarianceKernel, Model, TargetLink};
use gflow_core::scaling::mean_field::mf_ode_solve;
use proptest::prelude::*;

fn small_kernel() -> impl Strategy<Value = CovarianceKernel> {
    (0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64).prop_map(|(c1, c2, c3)| {
        CovarianceKernel::new(vec![0.0, c1, c2, c3]).unwrap()
    })
}

proptest! {
    #[test]
    fn kernel_is_maximal_at_unit_overlap(kernel in small_kernel(), q in -1.0..1.0f64) {
        prop_assert!(kernel.eval(q, 0).abs() <= kernel.eval(1.0, 0) + 1e-12);
    }

    #[test]
    fn kernel_derivative_matches_finite_differences(
        kernel in small_kernel(),
        q in -0.9..0.9f64,
    ) {
        let eps = 1e-5;
        let fd = (kernel.eval(q + eps, 0) - kernel.eval(q - eps, 0)) / (2.0 * eps);
        let scale: f64 = 1.0 + kernel.coeffs().iter().sum::<f64>();
        prop_assert!((kernel.eval(q, 1) - fd).abs() <= 10.0 * scale * eps * eps + 1e-9);
    }

    #[test]
    fn hermite_kernel_at_one_sums_squared_coefficients(
        s1 in -1.5..1.5f64,
        s2 in -1.5..1.5f64,
        s3 in -1.5..1.5f64,
    ) {
        let kernel = hermite_to_kernel(&[0.0, s1, s2, s3]).unwrap();
        let want = s1 * s1 + s2 * s2 + s3 * s3;
        prop_assert!((kernel.eval(1.0, 0) - want).abs() <= 1e-12 * (1.0 + want));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_law_fits_are_exact_on_exact_data(
        x_star in 0.5..3.0f64,
        nu in 0.5..4.0f64,
        amplitude in 0.1..10.0f64,
        gap_scale in 0.5..2.0f64,
    ) {
        let gaps = [0.7, 0.5, 0.35, 0.25, 0.15, 0.08];
        let pts: Vec<(f64, f64)> = gaps
            .iter()
            .map(|g| {
                let gap = g * gap_scale;
                (x_star - gap, amplitude * gap.powf(-nu))
            })
            .collect();

        let fit = fit_powerlaw(&pts, None).unwrap();
        prop_assert!((fit.x_star - x_star).abs() <= 1e-6 * x_star.abs());
        prop_assert!((fit.nu - nu).abs() <= 1e-6 * nu);
        prop_assert!((fit.amplitude - amplitude).abs() <= 1e-6 * amplitude);

        let pinned = fit_powerlaw(&pts, Some(nu)).unwrap();
        prop_assert!((pinned.x_star - x_star).abs() <= 1e-6 * x_star.abs());
        prop_assert!((pinned.amplitude - amplitude).abs() <= 1e-6 * amplitude);
    }

    #[test]
    fn relaxation_time_never_shrinks_as_epsilon_tightens(
        values in prop::collection::vec(1e-9..10.0f64, 20..120),
        tau2 in 0.25..4.0f64,
        eps_hi in 1e-6..1e-2f64,
        ratio in 1e-3..0.99f64,
    ) {
        let times: Vec<f64> = (0..values.len()).map(|k| k as f64 * 0.1).collect();
        let eps_lo = eps_hi * ratio;
        let loose = relaxation_time(&times, &values, tau2, eps_hi).unwrap().t_rel;
        let tight = relaxation_time(&times, &values, tau2, eps_lo).unwrap().t_rel;
        match (loose, tight) {
            (Some(tl), Some(tt)) => prop_assert!(tt >= tl - 1e-12),
            (None, got) => prop_assert!(got.is_none()),
            (Some(_), None) => {}
        }
    }

    #[test]
    fn threshold_transfer_is_homogeneous_of_degree_one(
        c1 in 0.1..2.0f64,
        c2 in 0.0..2.0f64,
        p1 in -1.0..1.0f64,
        margin in 0.0..2.0f64,
        tau2 in 0.0..4.0f64,
        c in 0.1..10.0f64,
        gamma_pn in 0.1..3.0f64,
    ) {
        let kernel = CovarianceKernel::new(vec![0.0, c1, c2]).unwrap();
        let phi_norm2 = p1 * p1 / c1 + margin;
        let base = TargetLink::new(vec![0.0, p1], phi_norm2, tau2).unwrap();
        let scaled = TargetLink::new(
            vec![0.0, c * p1],
            c * c * phi_norm2,
            c * c * tau2,
        )
        .unwrap();
        let got = gamma_star_transfer(gamma_pn, &scaled, &kernel).unwrap();
        let want = c * gamma_star_transfer(gamma_pn, &base, &kernel).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn per_neuron_solver_is_permutation_equivariant(
        a0 in prop::collection::vec(-1.5..1.5f64, 3),
        vraw in prop::collection::vec(-0.9..0.9f64, 3),
        rows in prop::collection::vec(-1.0..1.0f64, 9),
        tau2 in 0.25..2.0f64,
    ) {
        // Random correlation matrix: cosine overlaps of three vectors in R^4
        // whose appended constant coordinate keeps every norm at least 1.
        let mut u = [[0.0f64; 4]; 3];
        for i in 0..3 {
            u[i][..3].copy_from_slice(&rows[3 * i..3 * i + 3]);
            u[i][3] = 1.0;
        }
        let mut c0 = vec![0.0; 9];
        for i in 0..3 {
            c0[i * 3 + i] = 1.0;
            for j in 0..i {
                let dot: f64 = (0..4).map(|k| u[i][k] * u[j][k]).sum();
                let ni = (0..4).map(|k| u[i][k] * u[i][k]).sum::<f64>().sqrt();
                let nj = (0..4).map(|k| u[j][k] * u[j][k]).sum::<f64>().sqrt();
                let cos = dot / (ni * nj);
                c0[i * 3 + j] = cos;
                c0[j * 3 + i] = cos;
            }
        }

        let kernel = CovarianceKernel::new(vec![0.0, 0.3, 0.5]).unwrap();
        let model = Model::pure_noise(kernel, tau2);
        let perm = [2usize, 0, 1];
        let mut a0p = vec![0.0; 3];
        let mut v0p = vec![0.0; 3];
        let mut c0p = vec![0.0; 9];
        for i in 0..3 {
            a0p[perm[i]] = a0[i];
            v0p[perm[i]] = vraw[i];
            for j in 0..3 {
                c0p[perm[i] * 3 + perm[j]] = c0[i * 3 + j];
            }
        }
        let run = |a0: Vec<f64>, v0: Vec<f64>, c0: Vec<f64>| {
            let cfg = GeneralConfig {
                m: 3,
                alpha_bar: 1.5,
                eta: 0.1,
                init: GeneralInit { a0, v0, c0 },
                freeze_a: false,
            };
            let mut solver = GeneralDmft::new(model.clone(), cfg).unwrap();
            solver.run(8);
            solver
        };
        let base = run(a0.clone(), vraw.clone(), c0.clone());
        let permuted = run(a0p, v0p, c0p);
        for i in 0..3 {
            for t in 0..=8 {
                prop_assert!((base.a(i)[t] - permuted.a(perm[i])[t]).abs() <= 1e-12);
                prop_assert!((base.v(i)[t] - permuted.v(perm[i])[t]).abs() <= 1e-12);
            }
            for j in 0..3 {
                for t in 0..=8 {
                    for s in 0..=t {
                        let d = (base.c_field(i, j).get(t, s)
                            - permuted.c_field(perm[i], perm[j]).get(t, s))
                        .abs();
                        prop_assert!(d <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn alignment_ode_respects_the_sphere(
        a0 in -2.0..2.0f64,
        v0 in -0.999..0.999f64,
        alpha in 0.05..0.6f64,
        tau in 0.1..1.0f64,
    ) {
        let kernel = CovarianceKernel::new(vec![0.0, 0.9, 0.0, 1.0 / 6.0]).unwrap();
        let link = TargetLink::new(
            vec![0.0, 0.9, 0.0, 1.0 / 6.0],
            0.9 + 1.0 / 6.0,
            tau * tau,
        )
        .unwrap();
        let sol = mf_ode_solve(&Model::new(kernel, link), alpha, &[(a0, v0)], 5.0).unwrap();
        for v in &sol.v[0] {
            prop_assert!(v.abs() <= 1.0 + 1e-9, "overlap left the sphere: {v}");
        }
    }
}
