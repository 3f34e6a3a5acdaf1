//! Simulation of the particle system `dXⁱ = -D_mF(μ_X, Xⁱ)dt + √2 dBⁱ` and
//! direct sampling of its Gibbs measure.
//!
//! Each (replica, particle) pair owns a seeded noise substream, so replicas
//! can be stepped on any number of threads with bit-identical results.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::energy::{drift, potential_un, EmpiricalMeasure, EnergyModel, GaussianMeanField, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::gaussian_oracle::GaussianMeasure;
use crate::rng::{substream, Domain, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    /// Exact Ornstein–Uhlenbeck transition; quadratic model only.
    ExactGaussian,
}

/// Diffusion switch. `Suppressed` turns the scheme into deterministic
/// gradient descent and exists for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Standard,
    Suppressed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub n_replicas: usize,
    pub scheme: Scheme,
    pub noise: NoiseMode,
    /// Steps between snapshots; the initial and final states are always recorded.
    pub snapshot_every: usize,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: usize, seed: u64, n_replicas: usize, scheme: Scheme) -> Self {
        SimConfig {
            dt,
            n_steps,
            seed,
            n_replicas,
            scheme,
            noise: NoiseMode::Standard,
            snapshot_every: n_steps.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_replicas == 0 {
            return Err(Error::Invalid("need at least one replica".into()));
        }
        Ok(())
    }
}

/// An optional control `α(t, x, μ)` added to the drift, written into `out`.
pub type Control<'a> = dyn Fn(f64, &[f64], &EmpiricalMeasure<'_>, &mut [f64]) + Sync + 'a;

#[derive(Debug, Clone)]
pub struct Replica {
    state: ParticleConfiguration,
    streams: Vec<StreamRng>,
    diverged_at: Option<f64>,
}

impl Replica {
    pub fn state(&self) -> &ParticleConfiguration {
        &self.state
    }

    pub fn diverged_at(&self) -> Option<f64> {
        self.diverged_at
    }

    /// Permutes particles together with their noise streams.
    pub fn permute_particles(&mut self, perm: &[usize]) {
        self.state = self.state.permuted(perm);
        self.streams = perm.iter().map(|&j| self.streams[j].clone()).collect();
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleState {
    replicas: Vec<Replica>,
    time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub time: f64,
    pub replica: usize,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Diverged { time: d.time, replica: d.replica }
    }
}

impl EnsembleState {
    /// Starts replicas at the given configurations with noise streams derived
    /// from `seed`.
    pub fn new(configs: Vec<ParticleConfiguration>, seed: u64) -> Result<Self> {
        let first = configs.first().ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
        let (n, d) = (first.n_particles(), first.dim());
        if configs.iter().any(|c| c.n_particles() != n || c.dim() != d) {
            return Err(Error::Invalid("replicas must share N and d".into()));
        }
        let replicas = configs
            .into_iter()
            .enumerate()
            .map(|(r, state)| Replica {
                streams: (0..n)
                    .map(|i| substream(seed, Domain::ParticleNoise, r as u64, i as u64))
                    .collect(),
                state,
                diverged_at: None,
            })
            .collect();
        Ok(EnsembleState { replicas, time: 0.0 })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn replicas_mut(&mut self) -> &mut [Replica] {
        &mut self.replicas
    }

    pub fn n_particles(&self) -> usize {
        self.replicas[0].state.n_particles()
    }

    pub fn dim(&self) -> usize {
        self.replicas[0].state.dim()
    }

    /// Configurations of the replicas that have not diverged.
    pub fn live_states(&self) -> impl Iterator<Item = &ParticleConfiguration> {
        self.replicas.iter().filter(|r| r.diverged_at.is_none()).map(|r| &r.state)
    }
}

fn exact_mode_sd(rate: f64, dt: f64) -> f64 {
    (-(-2.0 * rate * dt).exp_m1() / rate).sqrt()
}

fn step_replica<M: EnergyModel + ?Sized>(
    model: &M,
    replica: &mut Replica,
    cfg: &SimConfig,
    time: f64,
    control: Option<&Control<'_>>,
) -> bool {
    let (n, d) = (replica.state.n_particles(), replica.state.dim());
    let noise_on = cfg.noise == NoiseMode::Standard;
    let mut xi = vec![0.0; n * d];
    if noise_on {
        for (i, stream) in replica.streams.iter_mut().enumerate() {
            for v in &mut xi[i * d..(i + 1) * d] {
                *v = stream.sample(StandardNormal);
            }
        }
    }
    let x = replica.state.as_slice();
    let mut next = vec![0.0; n * d];
    match cfg.scheme {
        Scheme::EulerMaruyama => {
            let mut b = drift(model, &replica.state);
            if let Some(control) = control {
                let m = replica.state.empirical();
                let mut out = vec![0.0; d];
                for i in 0..n {
                    control(time, replica.state.point(i), &m, &mut out);
                    for k in 0..d {
                        b[i * d + k] += out[k];
                    }
                }
            }
            let scale = (2.0 * cfg.dt).sqrt();
            for j in 0..n * d {
                next[j] = x[j] + b[j] * cfg.dt + scale * xi[j];
            }
        }
        Scheme::ExactGaussian => {
            let g = model.as_gaussian().expect("checked by caller");
            let (fast, slow) = (g.a() + g.lambda(), g.a());
            let (decay_fast, decay_slow) = ((-fast * cfg.dt).exp(), (-slow * cfg.dt).exp());
            let (sd_fast, sd_slow) = (exact_mode_sd(fast, cfg.dt), exact_mode_sd(slow, cfg.dt));
            let xbar = replica.state.empirical().mean();
            let xibar = EmpiricalMeasure::new(&xi, d).mean();
            for j in 0..n * d {
                let k = j % d;
                next[j] = decay_fast * xbar[k]
                    + decay_slow * (x[j] - xbar[k])
                    + sd_slow * (xi[j] - xibar[k])
                    + sd_fast * xibar[k];
            }
        }
    }
    match ParticleConfiguration::new(n, d, next) {
        Ok(state) => {
            replica.state = state;
            true
        }
        Err(_) => false,
    }
}

/// Advances every live replica by one step of size `cfg.dt`. Replicas that
/// produce a non-finite coordinate keep their last finite state, stop
/// evolving, and are returned as divergences.
pub fn step<M: EnergyModel + ?Sized>(
    model: &M,
    state: &mut EnsembleState,
    cfg: &SimConfig,
    control: Option<&Control<'_>>,
) -> Result<Vec<Divergence>> {
    cfg.validate()?;
    if cfg.scheme == Scheme::ExactGaussian {
        if model.as_gaussian().is_none() {
            return Err(Error::Invalid("exact_gaussian scheme needs the Gaussian model".into()));
        }
        if control.is_some() {
            return Err(Error::Invalid("exact_gaussian scheme does not support controls".into()));
        }
    }
    let time = state.time;
    let next_time = time + cfg.dt;
    let diverged: Vec<Divergence> = state
        .replicas
        .par_iter_mut()
        .enumerate()
        .filter(|(_, r)| r.diverged_at.is_none())
        .filter_map(|(idx, r)| {
            if step_replica(model, r, cfg, time, control) {
                None
            } else {
                r.diverged_at = Some(next_time);
                Some(Divergence { time: next_time, replica: idx })
            }
        })
        .collect();
    state.time = next_time;
    Ok(diverged)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GibbsMethod {
    ExactGaussian,
    Mala(MalaConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    /// Starting step size; `None` derives one from the model bounds.
    pub initial_step: Option<f64>,
}

impl Default for MalaConfig {
    fn default() -> Self {
        MalaConfig { burn_in: 2000, thin: 5, n_chains: 16, initial_step: None }
    }
}

/// Acceptance window targeted while tuning.
pub const MALA_TARGET: (f64, f64) = (0.5, 0.6);
/// Post-burn-in acceptance outside this range is a tuning failure.
pub const MALA_ACCEPTABLE: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Clone)]
pub enum InitialCondition {
    Point(ParticleConfiguration),
    /// A law on `R^{Nd}`; point masses allowed.
    Gaussian { n_particles: usize, dim: usize, law: GaussianMeasure },
    Gibbs { n_particles: usize, dim: usize, method: GibbsMethod },
}

impl InitialCondition {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            InitialCondition::Point(c) => (c.n_particles(), c.dim()),
            InitialCondition::Gaussian { n_particles, dim, .. }
            | InitialCondition::Gibbs { n_particles, dim, .. } => (*n_particles, *dim),
        }
    }

    /// One configuration per replica, deterministic in `seed`.
    pub fn realize<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        n_replicas: usize,
        seed: u64,
    ) -> Result<Vec<ParticleConfiguration>> {
        match self {
            InitialCondition::Point(c) => Ok(vec![c.clone(); n_replicas]),
            InitialCondition::Gaussian { n_particles, dim, law } => {
                if law.dim() != n_particles * dim {
                    return Err(Error::Invalid("initial law has the wrong dimension".into()));
                }
                let sampler = law.sampler();
                (0..n_replicas)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = substream(seed, Domain::Initial, r as u64, 0);
                        let mut x = vec![0.0; law.dim()];
                        sampler.sample_into(&mut rng, &mut x);
                        ParticleConfiguration::new(*n_particles, *dim, x)
                    })
                    .collect()
            }
            InitialCondition::Gibbs { n_particles, dim, method } => {
                let init_seed = seed ^ 0x1A2B_3C4D_5E6F_7081;
                sample_gibbs(model, *n_particles, *dim, n_replicas, init_seed, *method)
            }
        }
    }
}

/// Per-replica observables recorded at each snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSummary {
    pub replica: usize,
    /// `(1/N) Σ xⁱ`, one entry per coordinate.
    pub particle_mean: Vec<f64>,
    /// `(1/N) Σ |xⁱ|²`.
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub replicas: Vec<ReplicaSummary>,
    /// Mean of the full `Nd` state over live replicas.
    pub mean: Vec<f64>,
    /// Covariance (`1/(R-1)` normalization) of the full state over live replicas.
    pub cov: DMatrix<f64>,
    pub n_live: usize,
}

impl Snapshot {
    fn capture(state: &EnsembleState) -> Self {
        let k = state.n_particles() * state.dim();
        let replicas = state
            .replicas
            .iter()
            .enumerate()
            .filter(|(_, r)| r.diverged_at.is_none())
            .map(|(idx, r)| {
                let m = r.state.empirical();
                ReplicaSummary {
                    replica: idx,
                    particle_mean: m.mean(),
                    second_moment: r.state.as_slice().iter().map(|v| v * v).sum::<f64>()
                        / r.state.n_particles() as f64,
                }
            })
            .collect::<Vec<_>>();
        let live: Vec<&[f64]> = state.live_states().map(|c| c.as_slice()).collect();
        let n_live = live.len();
        let mut mean = vec![0.0; k];
        for x in &live {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_live.max(1) as f64);
        let mut cov = DMatrix::zeros(k, k);
        for x in &live {
            let c: Vec<f64> = x.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for r in 0..k {
                for s in r..k {
                    cov[(r, s)] += c[r] * c[s];
                }
            }
        }
        let norm = (n_live.max(2) - 1) as f64;
        for r in 0..k {
            for s in r..k {
                cov[(r, s)] /= norm;
                cov[(s, r)] = cov[(r, s)];
            }
        }
        Snapshot { time: state.time, replicas, mean, cov, n_live }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub divergences: Vec<Divergence>,
    pub final_state: EnsembleState,
}

/// Runs `cfg.n_steps` steps from `initial`, recording snapshots at step 0,
/// every `cfg.snapshot_every` steps, and at the end.
pub fn simulate<M: EnergyModel + ?Sized>(
    model: &M,
    initial: &InitialCondition,
    cfg: &SimConfig,
    control: Option<&Control<'_>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let configs = initial.realize(model, cfg.n_replicas, cfg.seed)?;
    let state = EnsembleState::new(configs, cfg.seed)?;
    simulate_from(model, state, cfg, control)
}

/// As [`simulate`], from an explicit ensemble.
pub fn simulate_from<M: EnergyModel + ?Sized>(
    model: &M,
    mut state: EnsembleState,
    cfg: &SimConfig,
    control: Option<&Control<'_>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let every = cfg.snapshot_every.max(1);
    let mut snapshots = vec![Snapshot::capture(&state)];
    let mut divergences = Vec::new();
    for k in 1..=cfg.n_steps {
        divergences.extend(step(model, &mut state, cfg, control)?);
        if k % every == 0 || k == cfg.n_steps {
            snapshots.push(Snapshot::capture(&state));
        }
    }
    Ok(Trajectory { snapshots, divergences, final_state: state })
}

/// Writes the `index`-th exact draw from the Gibbs measure of the quadratic
/// model into `out` (length `Nd`).
///
/// With `z` standard normal and `z̄` its particle average,
/// `xⁱ = (zⁱ - z̄)/√a + z̄/√(a+λ)` has covariance `P⁻¹`.
pub fn exact_gibbs_draw(model: &GaussianMeanField, n: usize, d: usize, seed: u64, index: u64, out: &mut [f64]) {
    let mut rng = substream(seed, Domain::GibbsExact, index, 0);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let zbar = EmpiricalMeasure::new(out, d).mean();
    let (slow, fast) = (1.0 / model.a().sqrt(), 1.0 / (model.a() + model.lambda()).sqrt());
    for (j, v) in out.iter_mut().enumerate() {
        let m = zbar[j % d];
        *v = slow * (*v - m) + fast * m;
    }
    debug_assert_eq!(out.len(), n * d);
}

#[derive(Debug, Clone)]
pub struct MalaRun {
    pub samples: Vec<ParticleConfiguration>,
    /// Post-burn-in acceptance rate pooled over chains.
    pub acceptance: f64,
    /// Tuned step size of each chain.
    pub step_sizes: Vec<f64>,
}

struct ChainOutput {
    samples: Vec<ParticleConfiguration>,
    accepted: usize,
    proposed: usize,
    step: f64,
}

fn mala_chain<M: EnergyModel + ?Sized>(
    model: &M,
    n: usize,
    d: usize,
    n_samples: usize,
    seed: u64,
    chain: usize,
    cfg: &MalaConfig,
) -> Result<ChainOutput> {
    let mut rng = substream(seed, Domain::Mala, chain as u64, 0);
    let b = model.bounds();
    let lipschitz = (b.m_mx + b.m_mm).max(b.rho_hat);
    let mut h = cfg.initial_step.unwrap_or(1.0 / (lipschitz * ((n * d) as f64).cbrt()));
    let k = n * d;

    let init: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) / b.rho_hat.sqrt()).collect();
    let mut x = ParticleConfiguration::new(n, d, init)?;
    let mut ux = potential_un(model, &x)?;
    let mut gx = drift(model, &x);

    let mut samples = Vec::with_capacity(n_samples);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let (mut window_acc, mut window_len) = (0usize, 0usize);
    let target = 0.5 * (MALA_TARGET.0 + MALA_TARGET.1);
    let thin = cfg.thin.max(1);
    let total = cfg.burn_in + n_samples * thin;

    for it in 0..total {
        let scale = (2.0 * h).sqrt();
        let proposal: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&gx)
            .map(|(xi, gi)| xi + h * gi + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut accept = false;
        if let Ok(y) = ParticleConfiguration::new(n, d, proposal) {
            if let Ok(uy) = potential_un(model, &y) {
                let gy = drift(model, &y);
                // log q(x | y) - log q(y | x) for the Langevin proposal.
                let fwd: f64 = y.as_slice().iter().zip(x.as_slice()).zip(&gx)
                    .map(|((yi, xi), gi)| (yi - xi - h * gi).powi(2))
                    .sum();
                let bwd: f64 = x.as_slice().iter().zip(y.as_slice()).zip(&gy)
                    .map(|((xi, yi), gi)| (xi - yi - h * gi).powi(2))
                    .sum();
                let log_ratio = -(uy - ux) - (bwd - fwd) / (4.0 * h);
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    x = y;
                    ux = uy;
                    gx = gy;
                    accept = true;
                }
            }
        }
        if it < cfg.burn_in {
            window_acc += accept as usize;
            window_len += 1;
            if window_len == 50 {
                let rate = window_acc as f64 / window_len as f64;
                h *= (2.0 * (rate - target)).exp();
                window_acc = 0;
                window_len = 0;
            }
        } else {
            accepted += accept as usize;
            proposed += 1;
            if (it - cfg.burn_in + 1).is_multiple_of(thin) {
                samples.push(x.clone());
            }
        }
    }
    Ok(ChainOutput { samples, accepted, proposed, step: h })
}

/// Metropolis-adjusted Langevin sampling of `exp(-U^N)` with independent,
/// individually tuned chains.
pub fn mala<M: EnergyModel + ?Sized>(
    model: &M,
    n: usize,
    d: usize,
    n_samples: usize,
    seed: u64,
    cfg: &MalaConfig,
) -> Result<MalaRun> {
    let chains = cfg.n_chains.max(1);
    let per_chain = n_samples.div_ceil(chains);
    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|c| mala_chain(model, n, d, per_chain, seed, c, cfg))
        .collect::<Result<_>>()?;
    let accepted: usize = outputs.iter().map(|o| o.accepted).sum();
    let proposed: usize = outputs.iter().map(|o| o.proposed).sum();
    let acceptance = if proposed == 0 { f64::NAN } else { accepted as f64 / proposed as f64 };
    if !(acceptance >= MALA_ACCEPTABLE.0 && acceptance <= MALA_ACCEPTABLE.1) && proposed > 0 {
        return Err(Error::Tuning { acceptance });
    }
    let step_sizes = outputs.iter().map(|o| o.step).collect();
    let mut samples: Vec<ParticleConfiguration> = outputs.into_iter().flat_map(|o| o.samples).collect();
    samples.truncate(n_samples);
    Ok(MalaRun { samples, acceptance, step_sizes })
}

/// Draws `n_samples` configurations from the N-particle Gibbs measure.
pub fn sample_gibbs<M: EnergyModel + ?Sized>(
    model: &M,
    n: usize,
    d: usize,
    n_samples: usize,
    seed: u64,
    method: GibbsMethod,
) -> Result<Vec<ParticleConfiguration>> {
    if n == 0 || d == 0 {
        return Err(Error::Invalid("Gibbs sampling needs N >= 1 and d >= 1".into()));
    }
    match method {
        GibbsMethod::ExactGaussian => {
            let g = model
                .as_gaussian()
                .ok_or_else(|| Error::Invalid("exact Gibbs sampling needs the Gaussian model".into()))?;
            (0..n_samples)
                .into_par_iter()
                .map(|s| {
                    let mut x = vec![0.0; n * d];
                    exact_gibbs_draw(g, n, d, seed, s as u64, &mut x);
                    ParticleConfiguration::new(n, d, x)
                })
                .collect()
        }
        GibbsMethod::Mala(cfg) => mala(model, n, d, n_samples, seed, &cfg).map(|r| r.samples),
    }
}
