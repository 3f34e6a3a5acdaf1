//! One function per experiment. Each writes its CSV report and returns the
//! worst status among its verdicts.

use std::cell::OnceCell;
use std::path::PathBuf;

use mflab_core::concentration::{
    bound_particle, bound_single, empirical_tail, envelope_or_infinite, ConcentrationQuery, TailComparison,
};
use mflab_core::constants::{defective_constants, poincare_constant, ConstantsInput, ConstantsReport};
use mflab_core::dynamics::{simulate, GibbsMethod, InitialCondition, MalaConfig, SimConfig};
use mflab_core::estimators::{
    coordinate_dictionary, default_dictionary, entropy_decay_rate, rayleigh_gap, DictionaryMoments,
    ExactGibbsSamples, InequalityVerdict, SampleSource, TestFunction, DEFAULT_DICTIONARY_NAMES, SIGMAS,
};
use mflab_core::gaussian_oracle::{exact_spectral_constant, gibbs_gaussian, random_gaussian, GaussianMeasure};
use mflab_core::positivity::{min_quadratic_form, mu_h_convergence, positive_type_check, quadratic_form};
use mflab_core::{BuiltinModel, EnergyModel, GaussianMeanField, ParticleConfiguration, Scheme};
use nalgebra::DVector;

use crate::config::{Config, DictionaryConfig, EnvelopeConfig, Experiment, InitialConfig, SamplerConfig};
use crate::output::{flag, num, Report};
use crate::status::{Failure, Status};

/// Offsets that give each experiment its own random streams.
const SEED_SAMPLES: u64 = 0x5A;
const SEED_KERNEL: u64 = 0x4B;
const SEED_DECAY: u64 = 0xDE;

enum Samples {
    Exact(ExactGibbsSamples),
    Stored(Vec<ParticleConfiguration>),
}

impl Samples {
    fn source(&self) -> &dyn SampleSource {
        match self {
            Samples::Exact(s) => s,
            Samples::Stored(v) => v,
        }
    }
}

/// Resolved model plus lazily shared state for one invocation.
pub struct Session {
    pub cfg: Config,
    pub model: BuiltinModel,
    moments: OnceCell<DictionaryMoments>,
    /// Paths written so far, in order.
    pub written: Vec<PathBuf>,
}

impl Session {
    pub fn new(cfg: Config) -> Result<Self, Failure> {
        cfg.validate()?;
        let model = cfg.model.build()?;
        Ok(Session { cfg, model, moments: OnceCell::new(), written: Vec::new() })
    }

    fn gaussian(&self) -> Option<&GaussianMeanField> {
        self.model.as_gaussian()
    }

    fn shape(&self) -> (usize, usize) {
        (self.cfg.particles.n_particles, self.cfg.particles.dim)
    }

    fn constants_input(&self, dim: usize, n: u64, epsilon: f64) -> ConstantsInput {
        let b = self.model.bounds();
        ConstantsInput {
            dim,
            n_particles: n,
            epsilon,
            m_mm: self.cfg.constants.m_mm.unwrap_or(b.m_mm),
            rho: self.cfg.constants.rho.unwrap_or(b.rho_hat),
        }
    }

    fn gibbs_method(&self) -> GibbsMethod {
        let e = &self.cfg.estimators;
        let mala = GibbsMethod::Mala(MalaConfig {
            burn_in: e.mala_burn_in,
            thin: e.mala_thin,
            n_chains: e.mala_chains,
            initial_step: None,
        });
        match e.sampler {
            SamplerConfig::Exact => GibbsMethod::ExactGaussian,
            SamplerConfig::Mala => mala,
            SamplerConfig::Auto if self.gaussian().is_some() => GibbsMethod::ExactGaussian,
            SamplerConfig::Auto => mala,
        }
    }

    fn samples(&self, count: usize) -> Result<Samples, Failure> {
        let (n, d) = self.shape();
        let seed = self.cfg.seed ^ SEED_SAMPLES;
        Ok(match (self.gibbs_method(), self.gaussian()) {
            (GibbsMethod::ExactGaussian, Some(g)) => {
                Samples::Exact(ExactGibbsSamples { model: *g, n_particles: n, dim: d, count, seed })
            }
            (method, _) => Samples::Stored(mflab_core::dynamics::sample_gibbs(&self.model, n, d, count, seed, method)?),
        })
    }

    fn dictionary_moments(&self) -> Result<&DictionaryMoments, Failure> {
        if let Some(m) = self.moments.get() {
            return Ok(m);
        }
        let (n, d) = self.shape();
        let samples = self.samples(self.cfg.estimators.n_samples)?;
        let m = DictionaryMoments::collect(&self.model, samples.source(), &default_dictionary(n, d))?;
        Ok(self.moments.get_or_init(|| m))
    }

    fn report(&self, exp: Experiment, columns: &[&str]) -> Result<Report, Failure> {
        Report::new(&self.cfg, exp.file_stem(), exp.name(), columns)
    }

    fn finish(&mut self, report: Report) -> Result<(), Failure> {
        let path = report.finish()?;
        self.written.push(path);
        Ok(())
    }

    pub fn run(&mut self, exp: Experiment) -> Result<Status, Failure> {
        match exp {
            Experiment::Constants => self.constants(),
            Experiment::Simulate => self.simulate(),
            Experiment::CheckGamma2 => self.check_gamma2(),
            Experiment::CheckPoincare => self.check_poincare(),
            Experiment::CheckDlsi => self.check_dlsi(),
            Experiment::EstimateGap => self.estimate_gap(),
            Experiment::FitDecay => self.fit_decay(),
            Experiment::CheckKernel => self.check_kernel(),
            Experiment::Concentration => self.concentration(),
            Experiment::FullSuite => self.full_suite(),
        }
    }

    fn constants(&mut self) -> Result<Status, Failure> {
        let c = self.cfg.constants.clone();
        let (n, d) = self.shape();
        let dims = if c.dim_grid.is_empty() { vec![d] } else { c.dim_grid.clone() };
        let ns = if c.n_grid.is_empty() { vec![n as u64] } else { c.n_grid.clone() };
        let eps = if c.epsilon_grid.is_empty() { vec![c.epsilon] } else { c.epsilon_grid.clone() };
        let columns = [
            "dim", "n_particles", "epsilon", "m_mm", "rho", "alpha", "rho_prime", "delta", "rho_poincare",
            "rho_lsi_pipeline", "rho_lsi_theorem", "rho_lsi_standard", "rho_limit_remark", "rho_limit_pipeline",
            "epsilon_star", "rho_lsi_optimized", "valid_pipeline", "valid_theorem", "valid_optimized",
        ];
        let mut report = self.report(Experiment::Constants, &columns)?;
        println!(
            "{:>4} {:>7} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "d", "N", "eps", "rho_prime", "rho_poinc", "pipeline", "theorem", "optimized"
        );
        for &dim in &dims {
            for &nn in &ns {
                for &e in &eps {
                    let r = ConstantsReport::compute(&self.constants_input(dim, nn, e))?;
                    report.row([
                        dim.to_string(),
                        nn.to_string(),
                        num(e),
                        num(r.input.m_mm),
                        num(r.input.rho),
                        num(r.alpha),
                        num(r.rho_prime),
                        num(r.delta),
                        num(r.rho_poincare),
                        num(r.rho_lsi_pipeline),
                        num(r.rho_lsi_theorem),
                        num(r.rho_lsi_standard),
                        num(r.rho_limit_remark),
                        num(r.rho_limit_pipeline),
                        num(r.epsilon_star),
                        num(r.rho_lsi_optimized),
                        flag(r.valid_pipeline),
                        flag(r.valid_theorem),
                        flag(r.valid_optimized),
                    ])?;
                    let mark = |v: f64, ok: bool| if ok { format!("{v:12.6}") } else { format!("{:>12}", "invalid") };
                    println!(
                        "{:>4} {:>7} {:>6.3} {} {} {} {} {}",
                        dim,
                        nn,
                        e,
                        mark(r.rho_prime, r.rho_prime > 0.0),
                        mark(r.rho_poincare, r.rho_poincare > 0.0),
                        mark(r.rho_lsi_pipeline, r.valid_pipeline),
                        mark(r.rho_lsi_theorem, r.valid_theorem),
                        mark(r.rho_lsi_optimized, r.valid_optimized),
                    );
                }
            }
        }
        self.finish(report)?;
        Ok(Status::Pass)
    }

    fn initial_condition(&self, kind: InitialConfig, value: f64) -> Result<InitialCondition, Failure> {
        let (n, d) = self.shape();
        Ok(match kind {
            InitialConfig::Point => InitialCondition::Point(ParticleConfiguration::new(n, d, vec![value; n * d])?),
            InitialConfig::Gibbs => InitialCondition::Gibbs { n_particles: n, dim: d, method: self.gibbs_method() },
        })
    }

    fn simulate(&mut self) -> Result<Status, Failure> {
        let s = self.cfg.simulation.clone();
        let init = self.initial_condition(s.initial, s.initial_value)?;
        let sim = SimConfig {
            snapshot_every: s.snapshot_every,
            ..SimConfig::new(s.dt, s.n_steps, self.cfg.seed, s.n_replicas, s.scheme.into())
        };
        let traj = simulate(&self.model, &init, &sim, None)?;
        let mut report = self.report(Experiment::Simulate, &["time", "replica", "observable", "value"])?;
        for snap in &traj.snapshots {
            let t = num(snap.time);
            for r in &snap.replicas {
                let id = r.replica.to_string();
                for (c, m) in r.particle_mean.iter().enumerate() {
                    report.row([t.as_str(), &id, &format!("mean_{c}"), &num(*m)])?;
                }
                report.row([t.as_str(), &id, "second_moment", &num(r.second_moment)])?;
            }
            for (j, m) in snap.mean.iter().enumerate() {
                report.row([t.as_str(), "all", &format!("mean_{j}"), &num(*m)])?;
            }
            for j in 0..snap.cov.nrows() {
                for k in j..snap.cov.ncols() {
                    report.row([t.as_str(), "all", &format!("cov_{j}_{k}"), &num(snap.cov[(j, k)])])?;
                }
            }
        }
        for dv in &traj.divergences {
            report.row([num(dv.time), dv.replica.to_string(), "diverged".into(), num(dv.time)])?;
        }
        self.finish(report)?;
        Ok(if traj.divergences.is_empty() { Status::Pass } else { Status::Divergence })
    }

    fn verdict_report(
        &mut self,
        exp: Experiment,
        extra: &[(&str, f64)],
        verdict: impl Fn(&DictionaryMoments, usize) -> InequalityVerdict,
    ) -> Result<Status, Failure> {
        let mut columns = vec![
            "function", "lhs", "rhs", "lhs_stderr", "rhs_stderr", "combined_stderr", "margin_sigmas", "holds",
            "inconclusive",
        ];
        columns.extend(extra.iter().map(|e| e.0));
        let mut report = self.report(exp, &columns)?;
        let moments = self.dictionary_moments()?;
        let mut status = Status::Pass;
        for (k, name) in DEFAULT_DICTIONARY_NAMES.iter().enumerate() {
            let v = verdict(moments, k);
            let mut row = vec![
                name.to_string(),
                num(v.lhs),
                num(v.rhs),
                num(v.lhs_stderr),
                num(v.rhs_stderr),
                num(v.combined_stderr),
                num(v.margin_sigmas),
                flag(v.holds),
                flag(v.inconclusive),
            ];
            row.extend(extra.iter().map(|e| num(e.1)));
            report.row(row)?;
            if !v.holds {
                status = status.max(Status::Fail);
            }
            if v.inconclusive {
                status = status.max(Status::Inconclusive);
            }
        }
        self.finish(report)?;
        Ok(status)
    }

    fn check_gamma2(&mut self) -> Result<Status, Failure> {
        self.verdict_report(Experiment::CheckGamma2, &[], |m, k| m.gamma2(k))
    }

    fn check_poincare(&mut self) -> Result<Status, Failure> {
        let input = self.constants_input(self.shape().1, self.shape().0 as u64, self.cfg.constants.epsilon);
        let rho2 = poincare_constant(input.rho, input.m_mm, input.n_particles).require("rho_poincare")?;
        self.verdict_report(Experiment::CheckPoincare, &[("rho_poincare", rho2)], move |m, k| {
            m.second_order_poincare(k, rho2)
        })
    }

    fn check_dlsi(&mut self) -> Result<Status, Failure> {
        let (n, d) = self.shape();
        let dc = defective_constants(&self.constants_input(d, n as u64, self.cfg.estimators.dlsi_epsilon))?;
        if !(dc.rho_prime > 0.0) {
            return Err(mflab_core::Error::Regime { constant: "rho_prime", value: dc.rho_prime }.into());
        }
        let (rp, delta) = (dc.rho_prime, dc.delta);
        self.verdict_report(Experiment::CheckDlsi, &[("rho_prime", rp), ("delta", delta)], move |m, k| {
            m.defective_lsi(k, rp, delta)
        })
    }

    fn estimate_gap(&mut self) -> Result<Status, Failure> {
        let (n, d) = self.shape();
        let e = self.cfg.estimators.clone();
        let coords = coordinate_dictionary(e.gap_particles.min(n) * d);
        let dictionary: Vec<TestFunction> = match e.gap_dictionary {
            DictionaryConfig::Coordinates => coords,
            DictionaryConfig::Default => default_dictionary(n, d),
            DictionaryConfig::Extended => coords.into_iter().chain(default_dictionary(n, d)).collect(),
        };
        let samples = self.samples(e.gap_samples)?;
        let gap = rayleigh_gap(samples.source(), &dictionary)?;
        let input = self.constants_input(d, n as u64, self.cfg.constants.epsilon);
        let rho2 = poincare_constant(input.rho, input.m_mm, input.n_particles);
        let exact = self.gaussian().map(|g| exact_spectral_constant(g.a(), g.lambda(), n)).unwrap_or(f64::NAN);
        let holds = gap.value >= rho2.value - SIGMAS * gap.stderr;
        let mut report = self.report(
            Experiment::EstimateGap,
            &[
                "dictionary", "n_functions", "n_samples", "value", "stderr", "condition", "rho_poincare",
                "poincare_valid", "exact", "ratio_to_exact", "holds",
            ],
        )?;
        report.row([
            format!("{:?}", e.gap_dictionary).to_lowercase(),
            dictionary.len().to_string(),
            e.gap_samples.to_string(),
            num(gap.value),
            num(gap.stderr),
            num(gap.condition),
            num(rho2.value),
            flag(rho2.valid),
            num(exact),
            num(gap.value / exact),
            flag(holds),
        ])?;
        self.finish(report)?;
        Ok(if holds { Status::Pass } else { Status::Fail })
    }

    fn fit_decay(&mut self) -> Result<Status, Failure> {
        let g = *self
            .gaussian()
            .ok_or_else(|| Failure::config("fit-decay needs the gaussian model"))?;
        let (n, d) = self.shape();
        let k = n * d;
        let stationary = gibbs_gaussian(g.a(), g.lambda(), n, d)?;
        let report_c = ConstantsReport::compute(&self.constants_input(d, n as u64, self.cfg.constants.epsilon))?;
        if !report_c.valid_optimized {
            return Err(mflab_core::Error::Regime { constant: "rho_lsi_optimized", value: report_c.rho_lsi_optimized }.into());
        }
        let lower = 2.0 * report_c.rho_lsi_optimized;
        let times = self.cfg.decay.times.clone();

        let shifted = |mean: Vec<f64>| GaussianMeasure::new(DVector::from_vec(mean), stationary.cov().clone());
        let mut cases: Vec<(String, GaussianMeasure, f64)> = Vec::new();
        let fast = 2.0 * (g.a() + g.lambda());
        if n >= 2 {
            let mut m = vec![0.0; k];
            m[0] = 1.0;
            m[d] = -1.0;
            cases.push(("slow_mode".into(), shifted(m)?, 2.0 * g.a()));
        }
        let m: Vec<f64> = (0..k).map(|j| if j % d == 0 { 1.0 } else { 0.0 }).collect();
        cases.push(("fast_mode".into(), shifted(m)?, fast));
        for r in 0..self.cfg.decay.n_random {
            cases.push((format!("random_{r}"), random_gaussian(k, self.cfg.seed ^ SEED_DECAY, r as u64, 0.1), f64::NAN));
        }

        let mut report = self.report(
            Experiment::FitDecay,
            &["initial", "rate", "expected", "rel_error", "lower_bound", "holds"],
        )?;
        let mut status = Status::Pass;
        for (name, m0, expected) in &cases {
            let rate = entropy_decay_rate(&g, n, d, m0, &times)?;
            let rel = (rate - expected).abs() / expected;
            let holds = rate >= lower && (expected.is_nan() || rel <= 0.01);
            if !holds {
                status = Status::Fail;
            }
            report.row([name.clone(), num(rate), num(*expected), num(rel), num(lower), flag(holds)])?;
        }
        self.finish(report)?;
        Ok(status)
    }

    fn check_kernel(&mut self) -> Result<Status, Failure> {
        let kc = self.cfg.kernel.clone();
        let kernel = kc.kernel.build();
        let seed = self.cfg.seed ^ SEED_KERNEL;
        let pos = positive_type_check(&kernel, kc.n_trials, kc.atoms_per_trial, kc.dim, seed, kc.tolerance)?;
        let min_form = min_quadratic_form(&kernel, kc.n_trials, kc.atoms_per_trial, kc.dim, seed)?;
        let mut report = self.report(
            Experiment::CheckKernel,
            &[
                "kernel", "n_trials", "atoms_per_trial", "min_energy", "argmin_trial", "min_gram_eigenvalue",
                "min_quadratic_form", "positive", "expect_positive",
            ],
        )?;
        report.row([
            kernel.name(),
            kc.n_trials.to_string(),
            kc.atoms_per_trial.to_string(),
            num(pos.min_value),
            pos.argmin_trial.to_string(),
            num(pos.min_gram_eigenvalue),
            num(min_form),
            flag(pos.positive),
            flag(kc.expect_positive),
        ])?;
        self.finish(report)?;

        // Convergence of the finite-step form on the first trial's points.
        let xs: Vec<f64> = pos.argmin_atoms.clone();
        let vs: Vec<f64> = xs.iter().enumerate().map(|(j, x)| (x + j as f64).sin()).collect();
        let conv = mu_h_convergence(&kernel, &xs, &vs, kc.dim, &kc.steps)?;
        let limit = quadratic_form(&kernel, &xs, &vs, kc.dim)?;
        let mut conv_report = Report::new(
            &self.cfg,
            "kernel_convergence",
            Experiment::CheckKernel.name(),
            &["h", "quadratic_form", "abs_error", "observed_order"],
        )?;
        for (i, (h, err)) in conv.steps.iter().zip(&conv.errors).enumerate() {
            let order = if i == 0 { f64::NAN } else { conv.orders[i - 1] };
            conv_report.row([num(*h), num(limit), num(*err), num(order)])?;
        }
        self.finish(conv_report)?;

        let form_ok = !kc.expect_positive || min_form >= kc.tolerance;
        Ok(if pos.positive == kc.expect_positive && form_ok { Status::Pass } else { Status::Fail })
    }

    fn concentration(&mut self) -> Result<Status, Failure> {
        let q = self.cfg.concentration.clone();
        let g = *self
            .gaussian()
            .ok_or_else(|| Failure::config("concentration envelopes need the gaussian model's closed-form target"))?;
        let (n, d) = self.shape();
        let envelope = match q.envelope {
            EnvelopeConfig::Auto if n == 1 => EnvelopeConfig::Single,
            EnvelopeConfig::Auto => EnvelopeConfig::Particle,
            other => other,
        };
        if envelope == EnvelopeConfig::Single && n != 1 {
            return Err(Failure::config("the single-measure envelope needs n_particles = 1"));
        }
        let init = self.initial_condition(q.initial, q.initial_value)?;
        let m0 = match &init {
            InitialCondition::Point(c) => GaussianMeasure::point_mass(DVector::from_column_slice(c.as_slice())),
            _ => gibbs_gaussian(g.a(), g.lambda(), n, d)?,
        };
        let target = gibbs_gaussian(g.a(), g.lambda(), n, d)?;
        let constants = ConstantsReport::compute(&self.constants_input(d, n as u64, self.cfg.constants.epsilon))?;
        let observable = TestFunction::coordinate(0);

        let mut report = self.report(
            Experiment::Concentration,
            &["t", "r", "empirical", "ci_low", "ci_high", "bound", "dominated", "vacuous"],
        )?;
        let mut status = Status::Pass;
        for &t in &q.times {
            let sim = SimConfig::new(q.dt, 0, self.cfg.seed, q.n_replicas, Scheme::ExactGaussian);
            let tails = empirical_tail(&self.model, &init, &observable, t, &q.radii, &sim)?;
            for p in &tails {
                let query = ConcentrationQuery {
                    t,
                    r: p.r.max(0.0),
                    // For one particle the potential is (a+λ)|x|²/2.
                    m_hess: g.a() + g.lambda(),
                    rho: g.a() + g.lambda(),
                    observable: observable.clone(),
                    initial: m0.clone(),
                };
                let bound = match envelope {
                    EnvelopeConfig::Single => envelope_or_infinite(bound_single(&query, &target))?,
                    _ => envelope_or_infinite(bound_particle(&query, &constants, &self.model.bounds(), n, &target))?,
                };
                let c = TailComparison::new(t, p, bound);
                if !c.dominated {
                    status = Status::Fail;
                }
                report.row([
                    num(c.t),
                    num(c.r),
                    num(c.empirical),
                    num(c.ci_low),
                    num(c.ci_high),
                    num(c.bound),
                    flag(c.dominated),
                    flag(c.vacuous),
                ])?;
            }
        }
        self.finish(report)?;
        Ok(status)
    }

    fn full_suite(&mut self) -> Result<Status, Failure> {
        let mut worst = Status::Pass;
        let mut rows = Vec::new();
        for exp in Experiment::SUITE {
            let (status, message) = match self.run(exp) {
                Ok(s) => (s, String::new()),
                Err(f) => {
                    eprintln!("{}: {}", exp.name(), f);
                    (f.status, f.message)
                }
            };
            println!("{:<16} {}", exp.name(), status);
            worst = worst.max(status);
            rows.push((exp, status, message));
        }
        let mut report = self.report(Experiment::FullSuite, &["experiment", "status", "exit_code", "message"])?;
        for (exp, status, message) in rows {
            report.row([exp.name().to_string(), status.label().to_string(), status.code().to_string(), message])?;
        }
        self.finish(report)?;
        Ok(worst)
    }
}
