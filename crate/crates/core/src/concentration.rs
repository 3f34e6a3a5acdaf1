//! Gaussian concentration envelopes for Lipschitz observables along the
//! flow, and their comparison with simulated deviation tails.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constants::ConstantsReport;
use crate::dynamics::{simulate, GibbsMethod, InitialCondition, MalaConfig, SimConfig};
use crate::energy::{EnergyBounds, EnergyModel};
use crate::error::{Error, Result};
use crate::estimators::TestFunction;
use crate::gaussian_oracle::{w2_squared, GaussianMeasure};
use crate::rng::{substream, Domain};
use crate::stats::{wilson_interval, CompensatedSum, Z99};

/// Slack on the sampled gradient norm of a 1-Lipschitz observable.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;
/// Points used to spot-check the Lipschitz constant.
pub const LIPSCHITZ_PROBES: usize = 1000;
/// Minimum replica count for tail estimation.
pub const MIN_REPLICAS: usize = 1000;
/// Draws used when a reference mean has no closed form.
pub const REFERENCE_DRAWS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationQuery {
    /// Time, at least 1.
    pub t: f64,
    /// Deviation level.
    pub r: f64,
    /// Bound on the Hessian of the potential.
    pub m_hess: f64,
    /// Log-Sobolev constant of the target.
    pub rho: f64,
    /// 1-Lipschitz observable.
    pub observable: TestFunction,
    /// Initial law; point masses allowed.
    pub initial: GaussianMeasure,
}

impl ConcentrationQuery {
    /// Checks the scalar ranges and probes `|∇f| ≤ 1` on random points of `R^dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.t >= 1.0) {
            return Err(Error::Domain(format!("time must be at least 1, got {}", self.t)));
        }
        if !(self.r >= 0.0) || !(self.m_hess >= 0.0) || !(self.rho > 0.0) {
            return Err(Error::Domain("need r >= 0, M >= 0 and rho > 0".into()));
        }
        let worst = lipschitz_probe(&self.observable, dim);
        if worst > 1.0 + LIPSCHITZ_SLACK {
            return Err(Error::Domain(format!("observable gradient norm {worst} exceeds 1")));
        }
        Ok(())
    }
}

/// Largest gradient norm of `f` over the origin and `N(0, 9I)` probes.
pub fn lipschitz_probe(f: &TestFunction, dim: usize) -> f64 {
    let mut x = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    for i in 0..=LIPSCHITZ_PROBES {
        if i > 0 {
            let mut rng = substream(0, Domain::Observable, i as u64, 0);
            x.iter_mut().for_each(|v| *v = 3.0 * rng.sample::<f64, _>(StandardNormal));
        }
        let g = f.evaluate(&x).grad;
        worst = worst.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    worst
}

/// A concentration envelope `prefactor · exp(-decay)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub prefactor: f64,
    pub value: f64,
    /// The envelope exceeds 1 and carries no information.
    pub vacuous: bool,
}

impl Envelope {
    fn new(prefactor: f64, log_decay: f64) -> Self {
        let value = prefactor * (-log_decay).exp();
        Envelope { prefactor, value, vacuous: value > 1.0 }
    }
}

/// `(M² + 3)/6 · e^{-ρ(t-1)}`.
fn exponent_rate(m_hess: f64, rho: f64, t: f64) -> f64 {
    (m_hess * m_hess + 3.0) / 6.0 * (-rho * (t - 1.0)).exp()
}

/// `∫exp(c W₂²(δ_x, m_*)) m₀(dx)` for Gaussian `m₀` and `m_*`.
///
/// With `W₂²(δ_x, m_*) = |x − μ_*|² + tr Σ_*` and `m₀ = N(b, Σ₀)`, the
/// integral is `exp(c tr Σ_*) det(I − 2cΣ₀)^{-1/2} exp(c bᵀ(I − 2cΣ₀)⁻¹b)`
/// with `b = μ₀ − μ_*`, finite iff `2c λ_max(Σ₀) < 1`.
pub fn prefactor(c: f64, m0: &GaussianMeasure, m_star: &GaussianMeasure) -> Result<f64> {
    if m0.dim() != m_star.dim() {
        return Err(Error::Invalid("initial law and target differ in dimension".into()));
    }
    let b: DVector<f64> = m0.mean() - m_star.mean();
    let log_trace = c * m_star.cov().trace();
    if m0.is_point_mass() {
        return Ok((log_trace + c * b.norm_squared()).exp());
    }
    let eig = SymmetricEigen::new(m0.cov().clone());
    let top = eig.eigenvalues.max();
    if 2.0 * c * top >= 1.0 {
        return Err(Error::DivergentIntegral(format!(
            "2c·λ_max(Σ₀) = {} ≥ 1",
            2.0 * c * top
        )));
    }
    // Work in the eigenbasis of Σ₀: factors decouple per eigenvalue.
    let proj = eig.eigenvectors.transpose() * &b;
    let mut log = CompensatedSum::default();
    log.add(log_trace);
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        let one_minus = 1.0 - 2.0 * c * s.max(0.0);
        log.add(-0.5 * one_minus.ln());
        log.add(c * proj[i] * proj[i] / one_minus);
    }
    Ok(log.value().exp())
}

/// Envelope for `P(f(X_t) − E f(X_*) ≥ r)` in the single-measure setting.
pub fn bound_single(q: &ConcentrationQuery, m_star: &GaussianMeasure) -> Result<Envelope> {
    q.validate(m_star.dim())?;
    let c = exponent_rate(q.m_hess, q.rho, q.t);
    Ok(Envelope::new(prefactor(c, &q.initial, m_star)?, q.rho * q.r * q.r / 4.0))
}

/// Envelope for `P((1/N)Σ f(Xⁱ_t) − E f(X_*) ≥ r)` in the particle setting.
///
/// The Hessian bound becomes `M_mm + M_mx`, the rate becomes the
/// ε-optimized particle constant from `constants`, and the decay gains a
/// factor `N`. The `m_hess` and `rho` fields of `q` are ignored; its
/// observable acts on one particle in `R^d` and `initial` lives on `R^{Nd}`.
pub fn bound_particle(
    q: &ConcentrationQuery,
    constants: &ConstantsReport,
    bounds: &EnergyBounds,
    n: usize,
    m_star_n: &GaussianMeasure,
) -> Result<Envelope> {
    if !constants.valid_optimized {
        return Err(Error::Regime { constant: "rho_lsi_optimized", value: constants.rho_lsi_optimized });
    }
    if n == 0 || !m_star_n.dim().is_multiple_of(n) {
        return Err(Error::Invalid("target dimension must be a multiple of N".into()));
    }
    let rho = constants.rho_lsi_optimized;
    let m = bounds.m_mm + bounds.m_mx;
    let per_particle = ConcentrationQuery { m_hess: m, rho, ..q.clone() };
    per_particle.validate(m_star_n.dim() / n)?;
    let c = exponent_rate(m, rho, q.t);
    Ok(Envelope::new(prefactor(c, &q.initial, m_star_n)?, n as f64 * rho * q.r * q.r / 4.0))
}

/// `((M² + 3)/3) e^{-ρ(t-1)} W₂²(μ₀, m_*) + control_energy`.
pub fn entropy_decay_bound(
    mu0: &GaussianMeasure,
    m_star: &GaussianMeasure,
    t: f64,
    m_hess: f64,
    rho: f64,
    control_energy: f64,
) -> Result<f64> {
    if !(t >= 1.0) {
        return Err(Error::Domain(format!("time must be at least 1, got {t}")));
    }
    if !(control_energy >= 0.0) || !(rho > 0.0) || !(m_hess >= 0.0) {
        return Err(Error::Domain("need control energy >= 0, rho > 0, M >= 0".into()));
    }
    Ok(2.0 * exponent_rate(m_hess, rho, t) * w2_squared(mu0, m_star)? + control_energy)
}

/// `E g` for `g ~ N(0, s²)` raised to the `p`-th power.
fn gaussian_moment(s2: f64, p: u32) -> f64 {
    if p % 2 == 1 {
        return 0.0;
    }
    let double_factorial: f64 = (1..p).step_by(2).map(|k| k as f64).product();
    s2.powi(p as i32 / 2) * double_factorial
}

/// `E f(X)` for `X ~ N(0, s² I_d)`: exact for polynomials, Monte Carlo otherwise.
pub fn isotropic_gaussian_mean(f: &TestFunction, s2: f64, d: usize, seed: u64) -> f64 {
    if let TestFunction::Polynomial(terms) = f {
        return terms
            .iter()
            .map(|m| m.coef * m.factors.iter().map(|&(_, p)| gaussian_moment(s2, p)).product::<f64>())
            .sum();
    }
    let sd = s2.sqrt();
    let mut rng = substream(seed, Domain::Observable, u64::MAX, 0);
    let mut x = vec![0.0; d];
    let mut acc = CompensatedSum::default();
    for _ in 0..REFERENCE_DRAWS {
        x.iter_mut().for_each(|v| *v = sd * rng.sample::<f64, _>(StandardNormal));
        acc.add(f.value(&x));
    }
    acc.value() / REFERENCE_DRAWS as f64
}

/// `E f(X¹_*)` under the one-particle marginal of the Gibbs measure: exact
/// marginal for the quadratic model, Langevin Monte Carlo otherwise.
pub fn reference_mean<M: EnergyModel + ?Sized>(
    model: &M,
    f: &TestFunction,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<f64> {
    if let Some(g) = model.as_gaussian() {
        let s2 = 1.0 / g.a() + (1.0 / (g.a() + g.lambda()) - 1.0 / g.a()) / n as f64;
        return Ok(isotropic_gaussian_mean(f, s2, d, seed));
    }
    let samples = crate::dynamics::sample_gibbs(model, n, d, 4000, seed, GibbsMethod::Mala(MalaConfig::default()))?;
    let mut acc = CompensatedSum::default();
    for s in &samples {
        for i in 0..n {
            acc.add(f.value(s.point(i)));
        }
    }
    Ok(acc.value() / (samples.len() * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailPoint {
    pub r: f64,
    pub exceed: u64,
    pub trials: u64,
    pub empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Empirical `P((1/N)Σ f(Xⁱ_t) − E f(X_*) ≥ r)` with Wilson 99% intervals,
/// one entry per `r` in `r_grid`. The simulation runs `round(t/dt)` steps
/// of `sim`, which must land on `t`.
pub fn empirical_tail<M: EnergyModel + ?Sized>(
    model: &M,
    initial: &InitialCondition,
    f: &TestFunction,
    t: f64,
    r_grid: &[f64],
    sim: &SimConfig,
) -> Result<Vec<TailPoint>> {
    if sim.n_replicas < MIN_REPLICAS {
        return Err(Error::Invalid(format!("need at least {MIN_REPLICAS} replicas, got {}", sim.n_replicas)));
    }
    let steps = (t / sim.dt).round();
    if !(t >= 0.0) || (steps * sim.dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Invalid(format!("t = {t} is not a whole number of steps of {}", sim.dt)));
    }
    let (n, d) = initial.shape();
    let cfg = SimConfig { n_steps: steps as usize, snapshot_every: steps.max(1.0) as usize, ..*sim };
    let traj = simulate(model, initial, &cfg, None)?;
    if let Some(first) = traj.divergences.first() {
        return Err((*first).into());
    }
    let center = reference_mean(model, f, n, d, sim.seed)?;
    let deviations: Vec<f64> = traj
        .final_state
        .replicas()
        .iter()
        .map(|r| {
            let s = r.state();
            (0..n).map(|i| f.value(s.point(i))).sum::<f64>() / n as f64 - center
        })
        .collect();
    let trials = deviations.len() as u64;
    Ok(r_grid
        .iter()
        .map(|&r| {
            let exceed = deviations.iter().filter(|&&v| v >= r).count() as u64;
            let (ci_low, ci_high) = wilson_interval(exceed, trials, Z99);
            TailPoint { r, exceed, trials, empirical: exceed as f64 / trials as f64, ci_low, ci_high }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailComparison {
    pub t: f64,
    pub r: f64,
    pub empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Envelope value; `+∞` when the prefactor integral diverges.
    pub bound: f64,
    pub dominated: bool,
    pub vacuous: bool,
}

impl TailComparison {
    pub fn new(t: f64, point: &TailPoint, bound: f64) -> Self {
        TailComparison {
            t,
            r: point.r,
            empirical: point.empirical,
            ci_low: point.ci_low,
            ci_high: point.ci_high,
            bound,
            dominated: bound >= point.ci_high || bound >= 1.0,
            vacuous: bound > 1.0,
        }
    }
}

/// Resolves an envelope to its value, mapping a divergent prefactor to `+∞`.
pub fn envelope_or_infinite(e: Result<Envelope>) -> Result<f64> {
    match e {
        Ok(e) => Ok(e.value),
        Err(Error::DivergentIntegral(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Covariance `σ²I` helper for isotropic laws.
pub fn isotropic(mean: DVector<f64>, s2: f64) -> Result<GaussianMeasure> {
    let k = mean.len();
    GaussianMeasure::new(mean, DMatrix::identity(k, k) * s2)
}
