//! Monte Carlo checks of the simulator and samplers against closed forms.

use mflab_core::dynamics::{
    mala, sample_gibbs, simulate, simulate_from, EnsembleState, GibbsMethod, InitialCondition, MalaConfig, Scheme,
    SimConfig,
};
use mflab_core::energy::EnergyBounds;
use mflab_core::gaussian_oracle::{gibbs_gaussian, gibbs_precision, ou_flow, GaussianMeasure};
use mflab_core::stats::Moments;
use mflab_core::{EmpiricalMeasure, EnergyModel, GaussianMeanField, ParticleConfiguration};
use nalgebra::{DMatrix, DVector};

/// Sample mean of `q(x)` over configurations, with its standard error.
fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut m = Moments::new(1);
    xs.for_each(|v| m.push(&[v]));
    (m.mean(0), m.stderr(0))
}

#[test]
fn ou_variance_from_the_origin() {
    let model = GaussianMeanField::new(1.0, 0.0).unwrap();
    let init = InitialCondition::Point(ParticleConfiguration::zeros(100, 1).unwrap());
    let cfg = SimConfig::new(0.001, 1000, 21, 1000, Scheme::EulerMaruyama);
    let traj = simulate(&model, &init, &cfg, None).unwrap();
    let (v, se) = mean_se(traj.final_state.live_states().flat_map(|c| c.as_slice().to_vec()).map(|x| x * x));
    let exact = -(-2f64).exp_m1();
    assert!((v - exact).abs() < 3.0 * se, "{v} vs {exact} (se {se})");
}

struct Free;

impl EnergyModel for Free {
    fn name(&self) -> &str {
        "free"
    }
    fn energy(&self, _: &EmpiricalMeasure<'_>) -> f64 {
        0.0
    }
    fn flat_derivative(&self, _: &EmpiricalMeasure<'_>, _: &[f64]) -> f64 {
        0.0
    }
    fn intrinsic_derivative(&self, _: &EmpiricalMeasure<'_>, _: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn second_intrinsic(&self, m: &EmpiricalMeasure<'_>, _: &[f64], _: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(m.dim(), m.dim())
    }
    fn grad_intrinsic(&self, m: &EmpiricalMeasure<'_>, _: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(m.dim(), m.dim())
    }
    fn bounds(&self) -> EnergyBounds {
        EnergyBounds { m_mm: 0.0, m_mx: 0.0, rho_hat: 1.0 }
    }
}

#[test]
fn drift_free_increments_are_brownian() {
    let dt = 0.01;
    let init = InitialCondition::Point(ParticleConfiguration::zeros(10, 2).unwrap());
    let cfg = SimConfig::new(dt, 1, 5, 5000, Scheme::EulerMaruyama);
    let traj = simulate(&Free, &init, &cfg, None).unwrap();
    let incs: Vec<f64> = traj.final_state.live_states().flat_map(|c| c.as_slice().to_vec()).collect();
    let (m, se) = mean_se(incs.iter().copied());
    assert!(m.abs() < 3.0 * se);
    let (v, se) = mean_se(incs.iter().map(|x| x * x));
    assert!((v - 2.0 * dt).abs() < 3.0 * se, "{v}");
}

#[test]
fn exact_gibbs_mode_variances() {
    let model = GaussianMeanField::new(1.0, 1.0).unwrap();
    let s = sample_gibbs(&model, 2, 1, 200_000, 8, GibbsMethod::ExactGaussian).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (sum_v, sum_se) = mean_se(s.iter().map(|c| (h * (c.as_slice()[0] + c.as_slice()[1])).powi(2)));
    let (dif_v, dif_se) = mean_se(s.iter().map(|c| (h * (c.as_slice()[0] - c.as_slice()[1])).powi(2)));
    assert!((sum_v - 0.5).abs() < 3.0 * sum_se, "{sum_v}");
    assert!((dif_v - 1.0).abs() < 3.0 * dif_se, "{dif_v}");
}

#[test]
fn product_case_is_standard_normal() {
    let model = GaussianMeanField::new(1.0, 0.0).unwrap();
    let s = sample_gibbs(&model, 3, 2, 50_000, 2, GibbsMethod::ExactGaussian).unwrap();
    for j in 0..6 {
        for k in j..6 {
            let (c, se) = mean_se(s.iter().map(|x| x.as_slice()[j] * x.as_slice()[k]));
            let want = if j == k { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 3.5 * se, "cov[{j},{k}] = {c}");
        }
    }
}

#[test]
fn mala_matches_exact_moments() {
    // Chains are autocorrelated, so errors are judged from the spread of
    // per-chain averages.
    let model = GaussianMeanField::new(1.0, 1.0).unwrap();
    let cfg = MalaConfig { burn_in: 2000, thin: 5, n_chains: 32, initial_step: None };
    let per_chain = 400;
    let run = mala(&model, 4, 1, 32 * per_chain, 17, &cfg).unwrap();
    assert!(run.acceptance > 0.4 && run.acceptance < 0.7, "{}", run.acceptance);
    let exact = gibbs_gaussian(1.0, 1.0, 4, 1).unwrap();
    type Check = (&'static str, fn(&[f64]) -> f64, f64);
    let checks: [Check; 2] = [
        ("x0^2", |x| x[0] * x[0], exact.cov()[(0, 0)]),
        ("mean^2", |x| (x.iter().sum::<f64>() / 4.0).powi(2), 1.0 / (4.0 * 2.0)),
    ];
    for (name, q, want) in checks {
        let chain_means: Vec<f64> = run
            .samples
            .chunks(per_chain)
            .map(|c| c.iter().map(|s| q(s.as_slice())).sum::<f64>() / per_chain as f64)
            .collect();
        let (m, se) = mean_se(chain_means.into_iter());
        assert!((m - want).abs() < 3.0 * se, "{name}: {m} vs {want} (se {se})");
    }
}

#[test]
fn gaussian_initial_law_follows_ou_flow() {
    let (a, l, n) = (1.0, 0.5, 3);
    let model = GaussianMeanField::new(a, l).unwrap();
    let mean = DVector::from_row_slice(&[1.0, -0.5, 2.0]);
    let cov = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.0, 0.0, 0.0, 0.2]);
    let law = GaussianMeasure::new(mean, cov).unwrap();
    let init = InitialCondition::Gaussian { n_particles: n, dim: 1, law: law.clone() };
    let cfg = SimConfig::new(0.25, 4, 33, 40_000, Scheme::ExactGaussian);
    let traj = simulate(&model, &init, &cfg, None).unwrap();
    let exact = ou_flow(&law, &gibbs_precision(a, l, n, 1), 1.0).unwrap();
    let states: Vec<&ParticleConfiguration> = traj.final_state.live_states().collect();
    for j in 0..n {
        let (m, se) = mean_se(states.iter().map(|c| c.as_slice()[j]));
        assert!((m - exact.mean()[j]).abs() < 3.0 * se, "mean {j}");
        for k in j..n {
            let (c, se) = mean_se(
                states.iter().map(|c| (c.as_slice()[j] - exact.mean()[j]) * (c.as_slice()[k] - exact.mean()[k])),
            );
            assert!((c - exact.cov()[(j, k)]).abs() < 3.5 * se, "cov {j}{k}: {c} vs {}", exact.cov()[(j, k)]);
        }
    }
    let snap = traj.snapshots.last().unwrap();
    assert_eq!(snap.time, 1.0);
    assert_eq!(snap.n_live, 40_000);
}

#[test]
fn gibbs_measure_is_invariant() {
    let (a, l, n) = (1.0, 0.5, 4);
    let model = GaussianMeanField::new(a, l).unwrap();
    let init = InitialCondition::Gibbs { n_particles: n, dim: 1, method: GibbsMethod::ExactGaussian };
    let cfg = SimConfig::new(0.01, 100, 4, 20_000, Scheme::EulerMaruyama);
    let traj = simulate(&model, &init, &cfg, None).unwrap();
    let exact = gibbs_gaussian(a, l, n, 1).unwrap();
    let states: Vec<&ParticleConfiguration> = traj.final_state.live_states().collect();
    for j in 0..n {
        let (c, se) = mean_se(states.iter().map(|c| c.as_slice()[j] * c.as_slice()[j]));
        // Euler-Maruyama bias at dt = 0.01 is about dt/2 relative.
        assert!((c - exact.cov()[(j, j)]).abs() < 3.0 * se + 0.006, "var {j}: {c}");
    }
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let model = GaussianMeanField::new(1.0, 0.5).unwrap();
    let init = InitialCondition::Gibbs { n_particles: 5, dim: 2, method: GibbsMethod::ExactGaussian };
    let cfg = SimConfig { snapshot_every: 3, ..SimConfig::new(0.05, 10, 77, 64, Scheme::EulerMaruyama) };
    let a = simulate(&model, &init, &cfg, None).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| simulate(&model, &init, &cfg, None).unwrap());
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.snapshots.len(), 5);
    for (x, y) in a.final_state.live_states().zip(b.final_state.live_states()) {
        assert_eq!(x, y);
    }
}

#[test]
fn permuted_particles_with_permuted_streams_give_permuted_states() {
    let model = mflab_core::RbfInteraction::new(1.0, 0.7, 1.0, 1.0).unwrap();
    let x0 = ParticleConfiguration::new(4, 2, vec![0.1, 0.2, -1.0, 0.5, 0.7, -0.3, 1.5, 1.0]).unwrap();
    let perm = [2, 0, 3, 1];
    let cfg = SimConfig::new(0.02, 25, 9, 3, Scheme::EulerMaruyama);
    let base = EnsembleState::new(vec![x0.clone(); 3], cfg.seed).unwrap();
    let mut permuted = base.clone();
    permuted.replicas_mut().iter_mut().for_each(|r| r.permute_particles(&perm));
    let a = simulate_from(&model, base, &cfg, None).unwrap();
    let b = simulate_from(&model, permuted, &cfg, None).unwrap();
    for (x, y) in a.final_state.live_states().zip(b.final_state.live_states()) {
        assert_eq!(&x.permuted(&perm), y);
    }
}

#[test]
fn controlled_dynamics_add_the_control() {
    let model = GaussianMeanField::new(1.0, 0.0).unwrap();
    let x0 = ParticleConfiguration::zeros(2, 1).unwrap();
    let cfg = SimConfig { noise: mflab_core::NoiseMode::Suppressed, ..SimConfig::new(0.1, 1, 0, 1, Scheme::EulerMaruyama) };
    let push = |_t: f64, _x: &[f64], _m: &EmpiricalMeasure<'_>, out: &mut [f64]| out[0] = 3.0;
    let traj = simulate(&model, &InitialCondition::Point(x0), &cfg, Some(&push)).unwrap();
    let s = traj.final_state.live_states().next().unwrap();
    assert!((s.as_slice()[0] - 0.3).abs() < 1e-15);
}
