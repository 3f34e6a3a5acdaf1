//! Closed-form ground truth for the quadratic model.
//!
//! For `GaussianMeanField(a, λ)` the Gibbs measure is a centred Gaussian with
//! precision `P = aI + (λ/N)(1 1ᵀ ⊗ I_d)`, the particle SDE is an
//! Ornstein–Uhlenbeck process driven by `P`, and entropy, Fisher information
//! and Wasserstein distances along the flow are all explicit.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Eigenvalues below this are treated as zero and rejected.
pub const EIGEN_FLOOR: f64 = 1e-14;
/// Relative symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A Gaussian law `N(mean, cov)` on `R^k`. A covariance of exactly zero
/// encodes a point mass; only [`ou_flow`] and [`w2_point`]-style callers
/// accept that case.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 || cov.nrows() != k || cov.ncols() != k {
            return Err(Error::Invalid(format!(
                "mean of length {k} does not match {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Gaussian parameters must be finite".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * cov.amax().max(1.0) {
            return Err(Error::Invalid(format!("covariance is not symmetric (defect {asym:e})")));
        }
        let min_eig = min_eigenvalue(&cov);
        if min_eig <= EIGEN_FLOOR {
            return Err(Error::Singular { min_eigenvalue: min_eig });
        }
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn point_mass(x: DVector<f64>) -> Self {
        let k = x.len();
        GaussianMeasure { mean: x, cov: DMatrix::zeros(k, k) }
    }

    pub fn standard(k: usize) -> Self {
        GaussianMeasure { mean: DVector::zeros(k), cov: DMatrix::identity(k, k) }
    }

    /// `N` independent copies of `N(mean, cov)` on `R^d`, as one law on `R^{Nd}`.
    pub fn product(n: usize, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        let mut big_mean = DVector::zeros(n * d);
        let mut big_cov = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            big_mean.rows_mut(i * d, d).copy_from(mean);
            big_cov.view_mut((i * d, i * d), (d, d)).copy_from(cov);
        }
        if cov.iter().all(|&v| v == 0.0) {
            return Ok(Self::point_mass(big_mean));
        }
        Self::new(big_mean, big_cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_point_mass(&self) -> bool {
        self.cov.iter().all(|&v| v == 0.0)
    }

    /// Reusable sampler; point masses sample their atom.
    pub fn sampler(&self) -> GaussianSampler {
        let factor = if self.is_point_mass() {
            None
        } else {
            Some(
                Cholesky::new(self.cov.clone())
                    .expect("validated covariance is positive definite")
                    .l(),
            )
        };
        GaussianSampler { mean: self.mean.clone(), factor }
    }

    fn require_regular(&self, what: &str) -> Result<()> {
        if self.is_point_mass() {
            return Err(Error::Domain(format!("{what} is undefined for a point mass")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
}

impl GaussianSampler {
    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = self.mean.len();
        match &self.factor {
            None => out.copy_from_slice(self.mean.as_slice()),
            Some(l) => {
                let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = self.mean[r];
                    for c in 0..=r {
                        acc += l[(r, c)] * z[c];
                    }
                    *o = acc;
                }
            }
        }
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn symmetric_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Precision `aI_{Nd} + (λ/N)(1_N 1_Nᵀ ⊗ I_d)` of the Gibbs measure.
pub fn gibbs_precision(a: f64, lambda: f64, n: usize, d: usize) -> DMatrix<f64> {
    let k = n * d;
    DMatrix::from_fn(k, k, |r, c| {
        let same_coord = if r % d == c % d { lambda / n as f64 } else { 0.0 };
        let diag = if r == c { a } else { 0.0 };
        diag + same_coord
    })
}

fn check_normalizable(a: f64, lambda: f64, n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::Invalid("Gibbs measure needs N >= 1 and d >= 1".into()));
    }
    if !(a > 0.0) || !(a + lambda > 0.0) {
        return Err(Error::NotNormalizable(format!(
            "precision eigenvalues a = {a} and a + lambda = {} must be positive",
            a + lambda
        )));
    }
    Ok(())
}

/// The exact N-particle Gibbs measure of `GaussianMeanField(a, λ)`.
///
/// `P` has eigenvalue `a + λ` on the `d`-dimensional "all particles equal"
/// subspace (projector `Π = (1/N)(1 1ᵀ ⊗ I_d)`) and `a` on its complement, so
/// `P⁻¹ = (1/a)(I - Π) + (1/(a+λ))Π` with no generic inversion.
pub fn gibbs_gaussian(a: f64, lambda: f64, n: usize, d: usize) -> Result<GaussianMeasure> {
    check_normalizable(a, lambda, n, d)?;
    let k = n * d;
    let shift = (1.0 / (a + lambda) - 1.0 / a) / n as f64;
    let cov = DMatrix::from_fn(k, k, |r, c| {
        let proj = if r % d == c % d { shift } else { 0.0 };
        let diag = if r == c { 1.0 / a } else { 0.0 };
        diag + proj
    });
    GaussianMeasure::new(DVector::zeros(k), cov)
}

/// Smallest eigenvalue of the Gibbs precision, which is the exact
/// log-Sobolev and Poincaré constant of the Gibbs measure.
pub fn exact_spectral_constant(a: f64, lambda: f64, n: usize) -> f64 {
    if n == 1 {
        a + lambda
    } else {
        a.min(a + lambda)
    }
}

/// Law at time `t` of `dX = -PX dt + √2 dB` started from `m0`, plus the
/// covariance asymmetry removed by symmetrization.
pub fn ou_flow_report(m0: &GaussianMeasure, precision: &DMatrix<f64>, t: f64) -> Result<(GaussianMeasure, f64)> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("flow time must be nonnegative, got {t}")));
    }
    let k = m0.dim();
    if precision.nrows() != k || precision.ncols() != k {
        return Err(Error::Invalid("precision does not match the initial law".into()));
    }
    if t == 0.0 {
        return Ok((m0.clone(), 0.0));
    }
    let eig = SymmetricEigen::new(precision.clone());
    if eig.eigenvalues.min() <= EIGEN_FLOOR {
        return Err(Error::Singular { min_eigenvalue: eig.eigenvalues.min() });
    }
    let v = &eig.eigenvectors;
    let decay = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (-l * t).exp())) * v.transpose();
    let stationary_part = v
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| -(-2.0 * l * t).exp_m1() / l))
        * v.transpose();
    let mean = &decay * m0.mean();
    let raw = &decay * m0.cov() * &decay + stationary_part;
    let defect = (&raw - raw.transpose()).amax() / raw.amax().max(1.0);
    let cov = (&raw + raw.transpose()) * 0.5;
    Ok((GaussianMeasure::new(mean, cov)?, defect))
}

pub fn ou_flow(m0: &GaussianMeasure, precision: &DMatrix<f64>, t: f64) -> Result<GaussianMeasure> {
    ou_flow_report(m0, precision, t).map(|(m, _)| m)
}

fn check_pair(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Invalid(format!("dimension mismatch: {} vs {}", p.dim(), q.dim())));
    }
    p.require_regular("this divergence")?;
    q.require_regular("this divergence")
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular { min_eigenvalue: min_eigenvalue(m) })
}

fn log_det(c: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Relative entropy `H(p | q)`.
pub fn kl_gaussian(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    check_pair(p, q)?;
    let cq = cholesky(q.cov())?;
    let cp = cholesky(p.cov())?;
    let k = p.dim() as f64;
    let trace = cq.solve(p.cov()).trace();
    let diff = q.mean() - p.mean();
    let maha = diff.dot(&cq.solve(&diff));
    Ok(0.5 * (trace - k + maha + log_det(&cq) - log_det(&cp)))
}

/// Relative Fisher information `I(p | q) = ∫|∇log(dp/dq)|² dp`.
pub fn fisher_gaussian(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    check_pair(p, q)?;
    let qi = cholesky(q.cov())?.inverse();
    let pi = cholesky(p.cov())?.inverse();
    let delta = &qi - &pi;
    let trace = (&delta * p.cov() * &delta).trace();
    let shift = &qi * (p.mean() - q.mean());
    Ok(trace + shift.norm_squared())
}

/// Quadratic Wasserstein distance between two Gaussians.
pub fn w2_gaussian(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    check_pair(p, q)?;
    let sq = symmetric_function(q.cov(), |l| l.max(0.0).sqrt());
    let inner = &sq * p.cov() * &sq;
    let inner = (&inner + inner.transpose()) * 0.5;
    let root = symmetric_function(&inner, |l| l.max(0.0).sqrt());
    let bures = p.cov().trace() + q.cov().trace() - 2.0 * root.trace();
    Ok(((p.mean() - q.mean()).norm_squared() + bures.max(0.0)).sqrt())
}

/// `W₂(δ_x, q)`, i.e. `√(|x - μ_q|² + tr Σ_q)`.
pub fn w2_point(x: &DVector<f64>, q: &GaussianMeasure) -> Result<f64> {
    if x.len() != q.dim() {
        return Err(Error::Invalid(format!("dimension mismatch: {} vs {}", x.len(), q.dim())));
    }
    Ok(((x - q.mean()).norm_squared() + q.cov().trace()).sqrt())
}

/// `W₂²(μ₀, q)` for `μ₀` either a point mass or a regular Gaussian.
pub fn w2_squared(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    if p.is_point_mass() {
        w2_point(p.mean(), q).map(|w| w * w)
    } else {
        w2_gaussian(p, q).map(|w| w * w)
    }
}

/// A random law on `R^k`: mean with `N(0, I)` entries and covariance
/// `AAᵀ/k + floor·I` with standard normal `A`. Deterministic in `(seed, index)`.
pub fn random_gaussian(k: usize, seed: u64, index: u64, floor: f64) -> GaussianMeasure {
    let mut rng = substream(seed, Domain::Generic, index, 0);
    let mean = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut cov = &a * a.transpose() / k as f64 + DMatrix::identity(k, k) * floor;
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianMeasure::new(mean, cov).expect("positive floor keeps the covariance definite")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss1(mu: f64, var: f64) -> GaussianMeasure {
        GaussianMeasure::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn rejects_bad_covariances() {
        let m = DVector::zeros(2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(GaussianMeasure::new(m.clone(), asym), Err(Error::Invalid(_))));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(GaussianMeasure::new(m, singular), Err(Error::Singular { .. })));
    }

    #[test]
    fn uncoupled_gibbs_is_isotropic() {
        let g = gibbs_gaussian(2.0, 0.0, 3, 2).unwrap();
        assert!((g.cov() - DMatrix::identity(6, 6) * 0.5).amax() < 1e-15);
        assert!(matches!(gibbs_gaussian(1.0, -1.0, 2, 1), Err(Error::NotNormalizable(_))));
        assert!(matches!(gibbs_gaussian(0.0, 1.0, 2, 1), Err(Error::NotNormalizable(_))));
    }

    #[test]
    fn gibbs_covariance_inverts_precision() {
        for &(a, l, n, d) in &[(1.0, 1.0, 2, 1), (0.7, 2.5, 5, 3), (1.3, 0.0, 4, 2)] {
            let g = gibbs_gaussian(a, l, n, d).unwrap();
            let p = gibbs_precision(a, l, n, d);
            let id = DMatrix::<f64>::identity(n * d, n * d);
            assert!((g.cov() * p - id).amax() < 1e-13);
        }
    }

    #[test]
    fn identical_laws_have_zero_divergences() {
        let g = gibbs_gaussian(1.0, 0.5, 3, 1).unwrap();
        assert!(kl_gaussian(&g, &g).unwrap().abs() < 1e-13);
        assert!(fisher_gaussian(&g, &g).unwrap().abs() < 1e-12);
        assert!(w2_gaussian(&g, &g).unwrap().abs() < 1e-6);
    }

    #[test]
    fn shifted_unit_gaussians() {
        let q = gauss1(0.0, 1.0);
        for mu in [-2.0, 0.3, 1.5] {
            let p = gauss1(mu, 1.0);
            assert!((kl_gaussian(&p, &q).unwrap() - mu * mu / 2.0).abs() < 1e-14);
            assert!((fisher_gaussian(&p, &q).unwrap() - mu * mu).abs() < 1e-14);
            assert!((w2_gaussian(&p, &q).unwrap() - mu.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn point_masses_only_where_defined() {
        let x = GaussianMeasure::point_mass(DVector::from_element(1, 2.0));
        let q = gauss1(0.0, 1.0);
        assert!(kl_gaussian(&x, &q).is_err());
        assert!(fisher_gaussian(&q, &x).is_err());
        assert!((w2_point(x.mean(), &q).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!((w2_squared(&x, &q).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn flow_endpoints() {
        let p = gibbs_precision(1.0, 0.5, 3, 1);
        let m0 = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            DMatrix::identity(3, 3) * 0.3,
        )
        .unwrap();
        assert_eq!(ou_flow(&m0, &p, 0.0).unwrap(), m0);
        let late = ou_flow(&m0, &p, 60.0).unwrap();
        let stationary = gibbs_gaussian(1.0, 0.5, 3, 1).unwrap();
        assert!(late.mean().amax() < 1e-20);
        assert!((late.cov() - stationary.cov()).amax() < 1e-14);
    }

    #[test]
    fn scalar_flow_from_near_point_mass() {
        let p = DMatrix::identity(1, 1);
        let m0 = gauss1(0.0, 1e-12);
        let m1 = ou_flow(&m0, &p, 1.0).unwrap();
        let expected = 1.0 - (-2.0f64).exp();
        assert!((m1.cov()[(0, 0)] - expected).abs() < 1e-12);
        let from_point = ou_flow(&GaussianMeasure::point_mass(DVector::zeros(1)), &p, 1.0).unwrap();
        assert!((from_point.cov()[(0, 0)] - expected).abs() < 1e-15);
    }
}
