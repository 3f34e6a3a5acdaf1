use mflab_core::concentration::{bound_single, ConcentrationQuery};
use mflab_core::constants::{
    lsi_constant_pipeline, lsi_constant_theorem, lsi_limit_remark, optimize_epsilon, standard_tightening, tighten,
    ConstantsInput, ConstantsReport, Formula,
};
use mflab_core::estimators::default_dictionary;
use mflab_core::gaussian_oracle::{fisher_gaussian, kl_gaussian, GaussianMeasure};
use mflab_core::positivity::{quadratic_form, Kernel};
use mflab_core::{
    drift, hessian_un, potential_un, BuiltinModel, EnergyModel, GaussianMeanField, ParticleConfiguration,
    RbfInteraction, TestFunction,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn input() -> impl Strategy<Value = ConstantsInput> {
    (1usize..6, 2u64..100_000, 0.05f64..0.95, 0.0f64..2.0, 0.1f64..10.0)
        .prop_map(|(dim, n, epsilon, alpha, rho)| ConstantsInput { dim, n_particles: n, epsilon, m_mm: alpha * rho, rho })
}

fn model() -> impl Strategy<Value = BuiltinModel> {
    prop_oneof![
        (0.2f64..3.0, 0.0f64..2.0).prop_map(|(a, l)| BuiltinModel::Gaussian(GaussianMeanField::new(a, l).unwrap())),
        (0.2f64..3.0, 0.0f64..2.0, 0.5f64..2.0)
            .prop_map(|(a, k, s)| BuiltinModel::Rbf(RbfInteraction::new(a, k, s, 1.0).unwrap())),
    ]
}

fn configuration() -> impl Strategy<Value = ParticleConfiguration> {
    (1usize..6, 1usize..4).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| ParticleConfiguration::new(n, d, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn constants_are_homogeneous(inp in input(), c in 0.1f64..10.0) {
        let scaled = ConstantsInput { rho: c * inp.rho, m_mm: c * inp.m_mm, ..inp };
        let a = ConstantsReport::compute(&inp).unwrap();
        let b = ConstantsReport::compute(&scaled).unwrap();
        for (x, y) in [
            (a.rho_prime, b.rho_prime), (a.delta, b.delta), (a.rho_poincare, b.rho_poincare),
            (a.rho_lsi_pipeline, b.rho_lsi_pipeline), (a.rho_lsi_theorem, b.rho_lsi_theorem),
            (a.rho_limit_remark, b.rho_limit_remark), (a.rho_lsi_optimized, b.rho_lsi_optimized),
        ] {
            prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{} vs {}", c * x, y);
        }
        if a.valid_optimized {
            prop_assert!((a.epsilon_star - b.epsilon_star).abs() < 1e-6);
        }
    }

    #[test]
    fn tightening_beats_standard(r1 in 1e-3f64..10.0, r2 in 1e-3f64..10.0, delta in 1e-3f64..20.0) {
        let t = tighten(r1, r2, delta).unwrap();
        let s = standard_tightening(r1, r2, delta).unwrap();
        prop_assert!(t > s);
        prop_assert!(t <= r1);
    }

    #[test]
    fn pipeline_below_its_ingredients(inp in input()) {
        if let Ok(v) = lsi_constant_pipeline(&inp) {
            let r = ConstantsReport::compute(&inp).unwrap();
            prop_assert!(v <= r.rho_prime.min(r.rho_poincare) + 1e-15);
        }
    }

    #[test]
    fn optimizer_dominates_midpoint(inp in input()) {
        for f in [Formula::Pipeline, Formula::Theorem] {
            let mid = match f {
                Formula::Pipeline => lsi_constant_pipeline(&inp.with_epsilon(0.5)),
                Formula::Theorem => lsi_constant_theorem(&inp.with_epsilon(0.5)),
            };
            if let Ok(mid) = mid {
                let best = optimize_epsilon(&inp, f).unwrap();
                prop_assert!(best.rho_star >= mid * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn remark_limit_decreases_in_dimension(rho in 0.1f64..10.0, alpha in 0.01f64..2.0, eps in 0.05f64..0.95) {
        let v: Vec<f64> = (1..=10).map(|d| lsi_limit_remark(d, rho, alpha, eps).unwrap()).collect();
        prop_assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn drift_is_negative_gradient(m in model(), x in configuration()) {
        let b = drift(&m, &x);
        let h = 1e-6;
        let scale = b.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        for j in 0..b.len() {
            let mut p = x.as_slice().to_vec();
            let mut q = p.clone();
            p[j] += h;
            q[j] -= h;
            let (n, d) = (x.n_particles(), x.dim());
            let up = potential_un(&m, &ParticleConfiguration::new(n, d, p).unwrap()).unwrap();
            let dn = potential_un(&m, &ParticleConfiguration::new(n, d, q).unwrap()).unwrap();
            prop_assert!(((dn - up) / (2.0 * h) - b[j]).abs() < 1e-5 * scale);
        }
    }

    #[test]
    fn permutation_equivariance(m in model(), x in configuration(), seed in any::<u64>()) {
        let n = x.n_particles();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let y = x.permuted(&perm);
        let (ux, uy) = (potential_un(&m, &x).unwrap(), potential_un(&m, &y).unwrap());
        prop_assert!((ux - uy).abs() <= 1e-12 * (1.0 + ux.abs()));
        let (bx, by) = (drift(&m, &x), drift(&m, &y));
        let d = x.dim();
        for (i, &pi) in perm.iter().enumerate() {
            for k in 0..d {
                prop_assert!((by[i * d + k] - bx[pi * d + k]).abs() <= 1e-12 * (1.0 + bx[pi * d + k].abs()));
            }
        }
    }

    #[test]
    fn hessian_quadratic_matches_dense(m in model(), x in configuration()) {
        let h = hessian_un(&m, &x).unwrap().matrix;
        let v: Vec<f64> = (0..h.nrows()).map(|j| (j as f64 * 0.7).sin()).collect();
        let vv = DVector::from_vec(v.clone());
        let dense = (vv.transpose() * &h * &vv)[(0, 0)];
        prop_assert!((dense - m.hessian_quadratic(&x, &v)).abs() <= 1e-10 * (1.0 + dense.abs()));
    }

    #[test]
    fn gaussian_lsi_chain(seed in any::<u64>()) {
        let rnd = |k: u64| ((seed.wrapping_add(k).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64) / (1u64 << 53) as f64;
        let mk = |o: u64| {
            let l = DMatrix::from_fn(3, 3, |i, j| if i >= j { rnd(o + (3 * i + j) as u64) - 0.5 } else { 0.0 });
            let cov = &l * l.transpose() + DMatrix::identity(3, 3) * 0.2;
            let mean = DVector::from_fn(3, |i, _| 2.0 * rnd(o + 20 + i as u64) - 1.0);
            GaussianMeasure::new(mean, cov).unwrap()
        };
        let (p, q) = (mk(0), mk(100));
        let kl = kl_gaussian(&p, &q).unwrap();
        let fi = fisher_gaussian(&p, &q).unwrap();
        let lam = nalgebra::SymmetricEigen::new(q.cov().clone().try_inverse().unwrap()).eigenvalues.min();
        prop_assert!(2.0 * lam * kl <= fi * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn test_functions_match_finite_differences(v in proptest::collection::vec(-1.5f64..1.5, 6)) {
        let h = 1e-5;
        for f in default_dictionary(3, 2) {
            let e = f.evaluate(&v);
            for j in 0..6 {
                let mut p = v.clone();
                let mut q = v.clone();
                p[j] += h;
                q[j] -= h;
                let fd = (f.value(&p) - f.value(&q)) / (2.0 * h);
                prop_assert!((fd - e.grad[j]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
            let lap_fd: f64 = (0..6).map(|j| {
                let mut p = v.clone();
                let mut q = v.clone();
                p[j] += 1e-4;
                q[j] -= 1e-4;
                (f.value(&p) - 2.0 * e.value + f.value(&q)) / 1e-8
            }).sum();
            prop_assert!((lap_fd - e.laplacian).abs() <= 1e-4 * (1.0 + e.laplacian.abs()));
        }
    }

    #[test]
    fn kernel_forms_nonnegative_and_permutation_invariant(
        xs in proptest::collection::vec(-3.0f64..3.0, 8),
        vs in proptest::collection::vec(-2.0f64..2.0, 8),
        w in -2.0f64..2.0,
    ) {
        for k in [Kernel::Rbf { sigma: 1.0 }, Kernel::Cosine { omega: vec![w, 0.5] }, Kernel::Linear] {
            let q = quadratic_form(&k, &xs, &vs, 2).unwrap();
            prop_assert!(q >= -1e-9);
            let rot = |a: &[f64]| [&a[2..], &a[..2]].concat();
            let qp = quadratic_form(&k, &rot(&xs), &rot(&vs), 2).unwrap();
            prop_assert!((q - qp).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn envelope_monotonicity(t in 1.0f64..10.0, r in 0.0f64..3.0, m in 0.0f64..3.0, dt in 0.01f64..2.0, dr in 0.01f64..1.0) {
        let q = ConcentrationQuery {
            t, r, m_hess: m, rho: 1.0,
            observable: TestFunction::coordinate(0),
            initial: GaussianMeasure::point_mass(DVector::from_element(1, 0.3)),
        };
        let star = GaussianMeasure::standard(1);
        let base = bound_single(&q, &star).unwrap();
        let later = bound_single(&ConcentrationQuery { t: t + dt, ..q.clone() }, &star).unwrap();
        let farther = bound_single(&ConcentrationQuery { r: r + dr, ..q.clone() }, &star).unwrap();
        let stiffer = bound_single(&ConcentrationQuery { m_hess: m + dr, ..q.clone() }, &star).unwrap();
        prop_assert!(later.value <= base.value);
        prop_assert!(farther.value < base.value);
        prop_assert!(stiffer.value >= base.value);
        prop_assert!(base.value <= base.prefactor);
    }
}
