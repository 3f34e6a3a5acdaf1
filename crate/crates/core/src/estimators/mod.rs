//! Monte Carlo checks of functional inequalities under the Gibbs measure.
//!
//! Every estimator reduces over fixed blocks of sample indices and merges
//! the block results in index order, so the output does not depend on the
//! number of worker threads.

mod test_function;

pub use test_function::{
    coordinate_dictionary, default_dictionary, DEFAULT_DICTIONARY_NAMES, Evaluation, Monomial, Outer, TestFunction,
};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dynamics::exact_gibbs_draw;
use crate::energy::{dot, EnergyModel, GaussianMeanField, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::gaussian_oracle::{gibbs_gaussian, gibbs_precision, kl_gaussian, ou_flow, GaussianMeasure};
use crate::stats::{linear_fit, CompensatedSum, Moments};

/// Samples per reduction block.
pub const BLOCK: usize = 4096;
/// Margin, in combined standard errors, allowed before a verdict fails.
pub const SIGMAS: f64 = 3.0;
/// A check whose combined standard error exceeds this fraction of the
/// estimated magnitude is inconclusive.
pub const INCONCLUSIVE_RATIO: f64 = 0.5;
/// Lower clip applied to `f²` before taking `t log t`.
pub const SQUARE_FLOOR: f64 = 1e-16;
/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e10;
/// Minimum sample size for the Rayleigh-quotient estimator.
pub const MIN_GAP_SAMPLES: usize = 10_000;
/// Entropies below this are dropped from decay fits.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// Indexed access to a fixed set of particle configurations.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(N, d)` of every sample.
    fn shape(&self) -> (usize, usize);

    /// Writes sample `index` (length `Nd`) into `out`.
    fn fill(&self, index: usize, out: &mut [f64]);
}

impl SampleSource for [ParticleConfiguration] {
    fn len(&self) -> usize {
        <[ParticleConfiguration]>::len(self)
    }

    fn shape(&self) -> (usize, usize) {
        self.first().map(|c| (c.n_particles(), c.dim())).unwrap_or((0, 0))
    }

    fn fill(&self, index: usize, out: &mut [f64]) {
        out.copy_from_slice(self[index].as_slice());
    }
}

impl SampleSource for Vec<ParticleConfiguration> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn shape(&self) -> (usize, usize) {
        self.as_slice().shape()
    }

    fn fill(&self, index: usize, out: &mut [f64]) {
        self.as_slice().fill(index, out)
    }
}

/// Exact Gibbs draws of the quadratic model, generated on demand.
#[derive(Debug, Clone)]
pub struct ExactGibbsSamples {
    pub model: GaussianMeanField,
    pub n_particles: usize,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
}

impl SampleSource for ExactGibbsSamples {
    fn len(&self) -> usize {
        self.count
    }

    fn shape(&self) -> (usize, usize) {
        (self.n_particles, self.dim)
    }

    fn fill(&self, index: usize, out: &mut [f64]) {
        exact_gibbs_draw(&self.model, self.n_particles, self.dim, self.seed, index as u64, out);
    }
}

/// Maps each sample index range `[lo, hi)` to a partial result in parallel
/// and returns the partials in index order.
fn block_map<S, T, F>(source: &S, block: usize, f: F) -> Vec<T>
where
    S: SampleSource + ?Sized,
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    let n = source.len();
    let n_blocks = n.div_ceil(block);
    (0..n_blocks)
        .into_par_iter()
        .map(|b| f(b * block, ((b + 1) * block).min(n)))
        .collect()
}

fn phi(t: f64) -> f64 {
    t * t.ln()
}

// Per-sample quantities tracked for every test function.
const Q_LF2: usize = 0;
const Q_GAMMA2: usize = 1;
const Q_GRAD2: usize = 2;
const Q_F2: usize = 3;
const Q_PHI: usize = 4;
const Q_F: usize = 5;
const N_Q: usize = 6;

/// First and second moments of `(Lf)², Γ₂(f), |∇f|², f², φ(f²), f` for each
/// function of a dictionary, accumulated in a single pass.
#[derive(Debug, Clone)]
pub struct DictionaryMoments {
    per_function: Vec<Moments>,
}

impl DictionaryMoments {
    pub fn collect<M, S>(model: &M, samples: &S, dictionary: &[TestFunction]) -> Result<Self>
    where
        M: EnergyModel + ?Sized,
        S: SampleSource + ?Sized,
    {
        let (n, d) = samples.shape();
        if samples.is_empty() || n == 0 {
            return Err(Error::Invalid("no samples".into()));
        }
        for f in dictionary {
            if f.max_index().is_some_and(|j| j >= n * d) {
                return Err(Error::Invalid(format!("test function reads past coordinate {}", n * d)));
            }
        }
        let partials = block_map(samples, BLOCK, |lo, hi| -> Result<Vec<Moments>> {
            let mut acc = vec![Moments::new(N_Q); dictionary.len()];
            let mut x = vec![0.0; n * d];
            let mut b = vec![0.0; n * d];
            for s in lo..hi {
                samples.fill(s, &mut x);
                let config = ParticleConfiguration::new(n, d, x.clone())?;
                model.drift_into(&config, &mut b);
                for (f, m) in dictionary.iter().zip(acc.iter_mut()) {
                    let e = f.evaluate(&x);
                    let lf = e.laplacian + dot(&b, &e.grad);
                    let gamma2 = e.hess_norm2 + model.hessian_quadratic(&config, &e.grad);
                    let f2 = e.value * e.value;
                    m.push(&[lf * lf, gamma2, dot(&e.grad, &e.grad), f2, phi(f2.max(SQUARE_FLOOR)), e.value]);
                }
            }
            Ok(acc)
        });
        let mut per_function = vec![Moments::new(N_Q); dictionary.len()];
        for part in partials {
            for (total, m) in per_function.iter_mut().zip(part?) {
                total.merge(&m);
            }
        }
        Ok(DictionaryMoments { per_function })
    }

    pub fn len(&self) -> usize {
        self.per_function.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_function.is_empty()
    }

    /// Sample mean of the `k`-th function.
    pub fn mean_value(&self, k: usize) -> f64 {
        self.per_function[k].mean(Q_F)
    }

    pub fn moments(&self, k: usize) -> &Moments {
        &self.per_function[k]
    }

    /// `∫(Lf)²` against `∫Γ₂(f)`, as an equality.
    pub fn gamma2(&self, k: usize) -> InequalityVerdict {
        let m = &self.per_function[k];
        InequalityVerdict::assess(
            m,
            (m.mean(Q_LF2), unit(Q_LF2)),
            (m.mean(Q_GAMMA2), unit(Q_GAMMA2)),
            Relation::Equal,
        )
    }

    /// `ρ∫|∇f|² ≤ ∫(Lf)²`.
    pub fn second_order_poincare(&self, k: usize, rho: f64) -> InequalityVerdict {
        let m = &self.per_function[k];
        let mut lhs = [0.0; N_Q];
        lhs[Q_GRAD2] = rho;
        InequalityVerdict::assess(m, (rho * m.mean(Q_GRAD2), lhs), (m.mean(Q_LF2), unit(Q_LF2)), Relation::AtMost)
    }

    /// `∫φ(f²) − φ(∫f²) ≤ (2/ρ′)∫|∇f|² + (δ/2ρ′)∫f²`, with the nonlinear
    /// left side linearized by the delta method.
    pub fn defective_lsi(&self, k: usize, rho_prime: f64, delta: f64) -> InequalityVerdict {
        let m = &self.per_function[k];
        let m2 = m.mean(Q_F2).max(SQUARE_FLOOR);
        let mut lhs = [0.0; N_Q];
        lhs[Q_PHI] = 1.0;
        lhs[Q_F2] = -(m2.ln() + 1.0);
        let mut rhs = [0.0; N_Q];
        rhs[Q_GRAD2] = 2.0 / rho_prime;
        rhs[Q_F2] = delta / (2.0 * rho_prime);
        InequalityVerdict::assess(
            m,
            (m.mean(Q_PHI) - phi(m2), lhs),
            (rhs[Q_GRAD2] * m.mean(Q_GRAD2) + rhs[Q_F2] * m.mean(Q_F2), rhs),
            Relation::AtMost,
        )
    }
}

fn unit(i: usize) -> [f64; N_Q] {
    let mut c = [0.0; N_Q];
    c[i] = 1.0;
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    AtMost,
    Equal,
}

/// Outcome of comparing two Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityVerdict {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    /// Standard error of `rhs − lhs`, using the correlation of the shared samples.
    pub combined_stderr: f64,
    /// `(rhs − lhs)/combined_stderr`.
    pub margin_sigmas: f64,
    pub holds: bool,
    pub inconclusive: bool,
}

impl InequalityVerdict {
    fn assess(m: &Moments, lhs: (f64, [f64; N_Q]), rhs: (f64, [f64; N_Q]), rel: Relation) -> Self {
        let diff: Vec<f64> = rhs.1.iter().zip(&lhs.1).map(|(r, l)| r - l).collect();
        let combined = m.stderr_of(&diff);
        Self::from_parts(lhs.0, rhs.0, m.stderr_of(&lhs.1), m.stderr_of(&rhs.1), combined, rel == Relation::Equal)
    }

    fn from_parts(lhs: f64, rhs: f64, lhs_stderr: f64, rhs_stderr: f64, combined: f64, equality: bool) -> Self {
        let gap = rhs - lhs;
        let magnitude = lhs.abs().max(rhs.abs());
        let round_off = 1e-12 * (1.0 + magnitude);
        let margin_sigmas = if gap.abs() <= round_off {
            0.0
        } else if combined > 0.0 {
            gap / combined
        } else {
            gap.signum() * f64::INFINITY
        };
        let slack = SIGMAS * combined + round_off;
        let holds = if equality { gap.abs() <= slack } else { -gap <= slack };
        InequalityVerdict {
            lhs,
            rhs,
            lhs_stderr,
            rhs_stderr,
            combined_stderr: combined,
            margin_sigmas,
            holds,
            inconclusive: magnitude > 0.0 && combined > INCONCLUSIVE_RATIO * magnitude,
        }
    }

    /// Converts an inconclusive verdict into an error.
    pub fn conclusive(self, what: &str) -> Result<Self> {
        if self.inconclusive {
            Err(Error::Inconclusive {
                what: what.to_string(),
                stderr: self.combined_stderr,
                magnitude: self.lhs.abs().max(self.rhs.abs()),
            })
        } else {
            Ok(self)
        }
    }
}

pub fn gamma2_identity_check<M, S>(model: &M, samples: &S, f: &TestFunction) -> Result<InequalityVerdict>
where
    M: EnergyModel + ?Sized,
    S: SampleSource + ?Sized,
{
    DictionaryMoments::collect(model, samples, std::slice::from_ref(f))?.gamma2(0).conclusive("gamma2 identity")
}

pub fn second_order_poincare_check<M, S>(model: &M, samples: &S, f: &TestFunction, rho2: f64) -> Result<InequalityVerdict>
where
    M: EnergyModel + ?Sized,
    S: SampleSource + ?Sized,
{
    if !(rho2 > 0.0) {
        return Err(Error::Domain(format!("Poincare constant must be positive, got {rho2}")));
    }
    DictionaryMoments::collect(model, samples, std::slice::from_ref(f))?
        .second_order_poincare(0, rho2)
        .conclusive("second-order Poincare")
}

pub fn defective_lsi_check<M, S>(
    model: &M,
    samples: &S,
    f: &TestFunction,
    rho_prime: f64,
    delta: f64,
) -> Result<InequalityVerdict>
where
    M: EnergyModel + ?Sized,
    S: SampleSource + ?Sized,
{
    if !(rho_prime > 0.0) || !(delta >= 0.0) {
        return Err(Error::Domain(format!("need rho' > 0 and delta >= 0, got {rho_prime}, {delta}")));
    }
    DictionaryMoments::collect(model, samples, std::slice::from_ref(f))?
        .defective_lsi(0, rho_prime, delta)
        .conclusive("defective log-Sobolev")
}

/// Block sums for the Rayleigh-quotient Gram matrices.
#[derive(Debug, Clone)]
struct GramSums {
    n: u64,
    f: Vec<CompensatedSum>,
    ff: Vec<CompensatedSum>,
    gg: Vec<CompensatedSum>,
}

impl GramSums {
    fn new(m: usize) -> Self {
        GramSums {
            n: 0,
            f: vec![CompensatedSum::default(); m],
            ff: vec![CompensatedSum::default(); m * m],
            gg: vec![CompensatedSum::default(); m * m],
        }
    }

    fn merge(&mut self, o: &GramSums) {
        self.n += o.n;
        for (a, b) in self.f.iter_mut().zip(&o.f) {
            a.merge(b);
        }
        for (a, b) in self.ff.iter_mut().zip(&o.ff) {
            a.merge(b);
        }
        for (a, b) in self.gg.iter_mut().zip(&o.gg) {
            a.merge(b);
        }
    }

    fn gap(&self) -> Result<(f64, f64)> {
        let m = self.f.len();
        let n = self.n as f64;
        let mean: Vec<f64> = self.f.iter().map(|s| s.value() / n).collect();
        let cov = DMatrix::from_fn(m, m, |k, l| {
            let (a, b) = (k.min(l), k.max(l));
            (self.ff[a * m + b].value() - n * mean[a] * mean[b]) / (n - 1.0)
        });
        let energy = DMatrix::from_fn(m, m, |k, l| self.gg[k.min(l) * m + k.max(l)].value() / n);
        let eig = SymmetricEigen::new(cov);
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Dictionary { condition });
        }
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
            * eig.eigenvectors.transpose();
        let reduced = &inv_sqrt * energy * &inv_sqrt;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        Ok((SymmetricEigen::new(reduced).eigenvalues.min(), condition))
    }
}

/// Number of contiguous sample groups used by the jackknife.
pub const JACKKNIFE_GROUPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    /// Minimal Rayleigh quotient `∫|∇f|² / Var(f)` over the dictionary span.
    pub value: f64,
    /// Delete-one-group jackknife standard error.
    pub stderr: f64,
    /// Condition number of the covariance Gram matrix.
    pub condition: f64,
}

/// Minimizes `∫|∇f|²/Var(f)` over the span of `dictionary` by solving the
/// generalized eigenproblem of the two Gram matrices. Since the span is
/// finite, the result estimates an upper bound on the Poincaré constant.
pub fn rayleigh_gap<S: SampleSource + ?Sized>(samples: &S, dictionary: &[TestFunction]) -> Result<GapEstimate> {
    let m = dictionary.len();
    if m < 2 {
        return Err(Error::Invalid("need at least two dictionary functions".into()));
    }
    if samples.len() < MIN_GAP_SAMPLES {
        return Err(Error::Invalid(format!("need at least {MIN_GAP_SAMPLES} samples, got {}", samples.len())));
    }
    let (n, d) = samples.shape();
    let group = samples.len().div_ceil(JACKKNIFE_GROUPS);
    let groups = block_map(samples, group, |lo, hi| {
        let mut acc = GramSums::new(m);
        let mut x = vec![0.0; n * d];
        let mut values = vec![0.0; m];
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); m];
        for s in lo..hi {
            samples.fill(s, &mut x);
            for (k, f) in dictionary.iter().enumerate() {
                let e = f.evaluate(&x);
                values[k] = e.value;
                grads[k] = e.grad;
            }
            acc.n += 1;
            for k in 0..m {
                acc.f[k].add(values[k]);
                for l in k..m {
                    acc.ff[k * m + l].add(values[k] * values[l]);
                    acc.gg[k * m + l].add(dot(&grads[k], &grads[l]));
                }
            }
        }
        acc
    });
    let mut total = GramSums::new(m);
    for g in &groups {
        total.merge(g);
    }
    let (value, condition) = total.gap()?;
    let g = groups.len();
    let loo: Vec<f64> = (0..g)
        .map(|skip| {
            let mut acc = GramSums::new(m);
            for (j, part) in groups.iter().enumerate() {
                if j != skip {
                    acc.merge(part);
                }
            }
            acc.gap().map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let mean = loo.iter().sum::<f64>() / g as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (g as f64 - 1.0) / g as f64;
    Ok(GapEstimate { value, stderr: var.sqrt(), condition })
}

/// `(t, H(m_t | m_*))` along the exact flow of the quadratic model.
pub fn entropy_curve(
    model: &GaussianMeanField,
    n: usize,
    d: usize,
    m0: &GaussianMeasure,
    times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let stationary = gibbs_gaussian(model.a(), model.lambda(), n, d)?;
    let precision = gibbs_precision(model.a(), model.lambda(), n, d);
    times
        .iter()
        .map(|&t| {
            let mt = ou_flow(m0, &precision, t)?;
            Ok((t, kl_gaussian(&mt, &stationary)?))
        })
        .collect()
}

/// Least-squares decay rate of `log H(m_t | m_*)` over `times`, dropping
/// grid points where the entropy is below [`ENTROPY_FLOOR`].
pub fn entropy_decay_rate(
    model: &GaussianMeanField,
    n: usize,
    d: usize,
    m0: &GaussianMeasure,
    times: &[f64],
) -> Result<f64> {
    let curve = entropy_curve(model, n, d, m0, times)?;
    let (t, logh): (Vec<f64>, Vec<f64>) = curve
        .into_iter()
        .filter(|&(_, h)| h >= ENTROPY_FLOOR)
        .map(|(t, h)| (t, h.ln()))
        .unzip();
    if t.len() < 2 {
        return Err(Error::Invalid("fewer than two entropies above the floor".into()));
    }
    Ok(-linear_fit(&t, &logh).0)
}
