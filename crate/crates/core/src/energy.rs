//! Mean field energy functionals and the N-particle potential built from them.
//!
//! A model supplies `F` together with its flat and intrinsic derivatives; the
//! free functions here assemble the particle potential `U^N(x) = N F(μ_x)`,
//! its drift `-∇U^N` and its Hessian from those derivatives.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A point `x = (x¹, …, x^N)` of `R^{Nd}`, stored particle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    n: usize,
    d: usize,
    points: Vec<f64>,
}

impl ParticleConfiguration {
    pub fn new(n_particles: usize, dim: usize, points: Vec<f64>) -> Result<Self> {
        if n_particles == 0 || dim == 0 {
            return Err(Error::Invalid(format!(
                "configuration needs N >= 1 and d >= 1, got N = {n_particles}, d = {dim}"
            )));
        }
        if points.len() != n_particles * dim {
            return Err(Error::Invalid(format!(
                "expected {} coordinates for N = {n_particles}, d = {dim}, got {}",
                n_particles * dim,
                points.len()
            )));
        }
        if let Some(k) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "coordinate {} of particle {} is not finite",
                k % dim,
                k / dim
            )));
        }
        Ok(ParticleConfiguration { n: n_particles, d: dim, points })
    }

    pub fn zeros(n_particles: usize, dim: usize) -> Result<Self> {
        Self::new(n_particles, dim, vec![0.0; n_particles * dim])
    }

    /// Builds a configuration from one vector per particle.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Invalid("particles have differing dimensions".into()));
        }
        Self::new(points.len(), d, points.concat())
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.points
    }

    pub fn empirical(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure::new(&self.points, self.d)
    }

    /// Particle `i` of the result is particle `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut points = Vec::with_capacity(self.points.len());
        for &j in perm {
            points.extend_from_slice(self.point(j));
        }
        ParticleConfiguration { n: self.n, d: self.d, points }
    }
}

/// Uniform-weight atomic measure `μ_x = (1/N) Σ δ_{xⁱ}`.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMeasure<'a> {
    points: &'a [f64],
    d: usize,
}

impl<'a> EmpiricalMeasure<'a> {
    /// `points` is a flat particle-major buffer whose length is a multiple of `d`.
    pub fn new(points: &'a [f64], d: usize) -> Self {
        debug_assert!(d > 0 && points.len().is_multiple_of(d) && !points.is_empty());
        EmpiricalMeasure { points, d }
    }

    pub fn n_atoms(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.n_atoms() as f64
    }

    pub fn atoms(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.points.chunks_exact(self.d)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for x in self.atoms() {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += xk;
            }
        }
        let w = self.weight();
        m.iter_mut().for_each(|v| *v *= w);
        m
    }
}

/// Regularity constants of a model: operator-norm bounds on `D_m²F` and
/// `∇ₓD_mF`, and the uniform log-Sobolev constant of the hat measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBounds {
    pub m_mm: f64,
    pub m_mx: f64,
    pub rho_hat: f64,
}

impl EnergyBounds {
    pub fn new(m_mm: f64, m_mx: f64, rho_hat: f64) -> Result<Self> {
        if !(m_mm >= 0.0 && m_mx >= 0.0 && rho_hat > 0.0)
            || !(m_mm.is_finite() && m_mx.is_finite() && rho_hat.is_finite())
        {
            return Err(Error::Invalid(format!(
                "bounds need m_mm >= 0, m_mx >= 0, rho_hat > 0 (got {m_mm}, {m_mx}, {rho_hat})"
            )));
        }
        Ok(EnergyBounds { m_mm, m_mx, rho_hat })
    }

    /// `M^F_mm / ρ`.
    pub fn alpha(&self) -> f64 {
        self.m_mm / self.rho_hat
    }
}

/// A flat-convex mean field energy with analytic derivatives.
///
/// Implementations must be pure; the dynamics evaluate them from many
/// threads at once.
pub trait EnergyModel: Send + Sync {
    fn name(&self) -> &str;

    /// `F(m)`.
    fn energy(&self, m: &EmpiricalMeasure<'_>) -> f64;

    /// `δF/δm(m, x)`, up to an additive constant.
    fn flat_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> f64;

    /// Writes `D_mF(m, x)` into `out`.
    fn intrinsic_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64], out: &mut [f64]);

    /// `D_m²F(m, x, y) = ∇_x ∇_y δ²F/δm²(m, x, y)`, rows indexed by `x`.
    fn second_intrinsic(&self, m: &EmpiricalMeasure<'_>, x: &[f64], y: &[f64]) -> DMatrix<f64>;

    /// `∇ₓD_mF(m, x)`.
    fn grad_intrinsic(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> DMatrix<f64>;

    fn bounds(&self) -> EnergyBounds;

    /// Writes `-D_mF(μ_x, xⁱ)` for every particle into `out` (length `Nd`).
    fn drift_into(&self, config: &ParticleConfiguration, out: &mut [f64]) {
        let m = config.empirical();
        let d = config.dim();
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.intrinsic_derivative(&m, config.point(i), chunk);
            chunk.iter_mut().for_each(|v| *v = -*v);
        }
    }

    /// `vᵀ ∇²U^N(x) v` without assembling the full Hessian.
    fn hessian_quadratic(&self, config: &ParticleConfiguration, v: &[f64]) -> f64 {
        let m = config.empirical();
        let (n, d) = (config.n_particles(), config.dim());
        let block = |i: usize| nalgebra::DVector::from_column_slice(&v[i * d..(i + 1) * d]);
        let mut total = 0.0;
        for i in 0..n {
            let vi = block(i);
            total += vi.dot(&(self.grad_intrinsic(&m, config.point(i)) * &vi));
            for j in 0..n {
                let vj = block(j);
                let cross = self.second_intrinsic(&m, config.point(i), config.point(j));
                total += vi.dot(&(cross * vj)) / n as f64;
            }
        }
        total
    }

    /// Downcast hook for samplers and oracles that exist only for the
    /// quadratic model.
    fn as_gaussian(&self) -> Option<&GaussianMeanField> {
        None
    }
}

/// `F(m) = (a/2)∫|x|² dm + (λ/2)|∫x dm|²`: the exactly solvable model whose
/// Gibbs measure is Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeanField {
    a: f64,
    lambda: f64,
}

impl GaussianMeanField {
    pub fn new(a: f64, lambda: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "GaussianMeanField needs a > 0 and lambda >= 0 (got a = {a}, lambda = {lambda})"
            )));
        }
        Ok(GaussianMeanField { a, lambda })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl EnergyModel for GaussianMeanField {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn energy(&self, m: &EmpiricalMeasure<'_>) -> f64 {
        let second: f64 = m.atoms().map(|x| dot(x, x)).sum::<f64>() * m.weight();
        let mean = m.mean();
        0.5 * self.a * second + 0.5 * self.lambda * dot(&mean, &mean)
    }

    fn flat_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> f64 {
        0.5 * self.a * dot(x, x) + self.lambda * dot(&m.mean(), x)
    }

    fn intrinsic_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64], out: &mut [f64]) {
        let mean = m.mean();
        for ((o, xk), mk) in out.iter_mut().zip(x).zip(&mean) {
            *o = self.a * xk + self.lambda * mk;
        }
    }

    fn second_intrinsic(&self, m: &EmpiricalMeasure<'_>, _x: &[f64], _y: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(m.dim(), m.dim()) * self.lambda
    }

    fn grad_intrinsic(&self, m: &EmpiricalMeasure<'_>, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(m.dim(), m.dim()) * self.a
    }

    fn bounds(&self) -> EnergyBounds {
        EnergyBounds { m_mm: self.lambda, m_mx: self.a, rho_hat: self.a }
    }

    fn drift_into(&self, config: &ParticleConfiguration, out: &mut [f64]) {
        let mean = config.empirical().mean();
        let d = config.dim();
        for (i, (o, x)) in out.iter_mut().zip(config.as_slice()).enumerate() {
            *o = -(self.a * x + self.lambda * mean[i % d]);
        }
    }

    fn hessian_quadratic(&self, config: &ParticleConfiguration, v: &[f64]) -> f64 {
        let d = config.dim();
        let mut total = vec![0.0; d];
        for (i, vi) in v.iter().enumerate() {
            total[i % d] += vi;
        }
        self.a * dot(v, v) + self.lambda * dot(&total, &total) / config.n_particles() as f64
    }

    fn as_gaussian(&self) -> Option<&GaussianMeanField> {
        Some(self)
    }
}

/// `F(m) = (a/2)∫|x|² dm + (κ/2)∬exp(-|x-x'|²/2σ²) dm dm`.
///
/// The Gaussian kernel is of positive type, so the interaction is flat
/// convex. Writing `k(z) = exp(-|z|²/2σ²)` and `s = |z|²/σ²`:
///
/// * `D_m²F(m,x,x') = κ k(z)(I/σ² - zzᵀ/σ⁴)` has eigenvalues `κe^{-s/2}/σ²`
///   and `κ(1-s)e^{-s/2}/σ²`, whose moduli peak at `s = 0`, so
///   `M^F_mm = κ/σ²`.
/// * `∇²k(z) = k(z)(zzᵀ/σ⁴ - I/σ²)` has spectrum in `[-1/σ², 2e^{-3/2}/σ²]`
///   (the radial eigenvalue `(s-1)e^{-s/2}/σ²` peaks at `s = 3`), and so does
///   any average of it. Hence `∇ₓD_mF = aI + κ∫∇²k` has operator norm at most
///   `M^F_mx = max(|a - κ/σ²|, a + 2κe^{-3/2}/σ²)`.
///
/// No closed-form recipe exists for the hat-measure log-Sobolev constant, so
/// `rho_hat` is supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfInteraction {
    a: f64,
    kappa: f64,
    sigma: f64,
    rho_hat: f64,
}

impl RbfInteraction {
    pub fn new(a: f64, kappa: f64, sigma: f64, rho_hat: f64) -> Result<Self> {
        let finite = [a, kappa, sigma, rho_hat].iter().all(|v| v.is_finite());
        if !(finite && a > 0.0 && kappa >= 0.0 && sigma > 0.0 && rho_hat > 0.0) {
            return Err(Error::Invalid(format!(
                "RbfInteraction needs a > 0, kappa >= 0, sigma > 0, rho_hat > 0 \
                 (got {a}, {kappa}, {sigma}, {rho_hat})"
            )));
        }
        Ok(RbfInteraction { a, kappa, sigma, rho_hat })
    }

    fn kernel(&self, z2: f64) -> f64 {
        (-0.5 * z2 / (self.sigma * self.sigma)).exp()
    }

    /// `k(z)(zzᵀ/σ⁴ - I/σ²)`.
    fn kernel_hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let s2 = self.sigma * self.sigma;
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let k = self.kernel(dot(&z, &z));
        DMatrix::from_fn(d, d, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            k * (z[r] * z[c] / (s2 * s2) - id / s2)
        })
    }
}

impl EnergyModel for RbfInteraction {
    fn name(&self) -> &str {
        "rbf"
    }

    fn energy(&self, m: &EmpiricalMeasure<'_>) -> f64 {
        let w = m.weight();
        let second: f64 = m.atoms().map(|x| dot(x, x)).sum::<f64>() * w;
        let mut pair = 0.0;
        for x in m.atoms() {
            for y in m.atoms() {
                pair += self.kernel(dist2(x, y));
            }
        }
        0.5 * self.a * second + 0.5 * self.kappa * pair * w * w
    }

    fn flat_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> f64 {
        let interaction: f64 = m.atoms().map(|y| self.kernel(dist2(x, y))).sum();
        0.5 * self.a * dot(x, x) + self.kappa * interaction * m.weight()
    }

    fn intrinsic_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        let scale = self.kappa * m.weight() / s2;
        for (o, xk) in out.iter_mut().zip(x) {
            *o = self.a * xk;
        }
        for y in m.atoms() {
            let k = self.kernel(dist2(x, y));
            for ((o, xk), yk) in out.iter_mut().zip(x).zip(y) {
                *o -= scale * k * (xk - yk);
            }
        }
    }

    fn second_intrinsic(&self, _m: &EmpiricalMeasure<'_>, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        self.kernel_hessian(x, y) * (-self.kappa)
    }

    fn grad_intrinsic(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut g = DMatrix::identity(d, d) * self.a;
        let w = self.kappa * m.weight();
        for y in m.atoms() {
            g += self.kernel_hessian(x, y) * w;
        }
        g
    }

    fn bounds(&self) -> EnergyBounds {
        let s2 = self.sigma * self.sigma;
        let m_mm = self.kappa / s2;
        let m_mx = (self.a - self.kappa / s2)
            .abs()
            .max(self.a + 2.0 * self.kappa * (-1.5f64).exp() / s2);
        EnergyBounds { m_mm, m_mx, rho_hat: self.rho_hat }
    }
}

/// The built-in models, selectable by name from configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    Gaussian(GaussianMeanField),
    Rbf(RbfInteraction),
}

impl BuiltinModel {
    fn inner(&self) -> &dyn EnergyModel {
        match self {
            BuiltinModel::Gaussian(m) => m,
            BuiltinModel::Rbf(m) => m,
        }
    }
}

impl EnergyModel for BuiltinModel {
    fn name(&self) -> &str {
        self.inner().name()
    }
    fn energy(&self, m: &EmpiricalMeasure<'_>) -> f64 {
        self.inner().energy(m)
    }
    fn flat_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> f64 {
        self.inner().flat_derivative(m, x)
    }
    fn intrinsic_derivative(&self, m: &EmpiricalMeasure<'_>, x: &[f64], out: &mut [f64]) {
        self.inner().intrinsic_derivative(m, x, out)
    }
    fn second_intrinsic(&self, m: &EmpiricalMeasure<'_>, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        self.inner().second_intrinsic(m, x, y)
    }
    fn grad_intrinsic(&self, m: &EmpiricalMeasure<'_>, x: &[f64]) -> DMatrix<f64> {
        self.inner().grad_intrinsic(m, x)
    }
    fn bounds(&self) -> EnergyBounds {
        self.inner().bounds()
    }
    fn drift_into(&self, config: &ParticleConfiguration, out: &mut [f64]) {
        self.inner().drift_into(config, out)
    }
    fn hessian_quadratic(&self, config: &ParticleConfiguration, v: &[f64]) -> f64 {
        self.inner().hessian_quadratic(config, v)
    }
    fn as_gaussian(&self) -> Option<&GaussianMeanField> {
        self.inner().as_gaussian()
    }
}

/// `U^N(x) = N F(μ_x)`.
pub fn potential_un<M: EnergyModel + ?Sized>(model: &M, config: &ParticleConfiguration) -> Result<f64> {
    let m = config.empirical();
    let u = config.n_particles() as f64 * model.energy(&m);
    if u.is_finite() {
        return Ok(u);
    }
    let particle = (0..config.n_particles())
        .find(|&i| !model.flat_derivative(&m, config.point(i)).is_finite())
        .unwrap_or_else(|| {
            (0..config.n_particles())
                .max_by(|&i, &j| {
                    let (pi, pj) = (config.point(i), config.point(j));
                    dot(pi, pi).total_cmp(&dot(pj, pj))
                })
                .unwrap_or(0)
        });
    Err(Error::NonFiniteEnergy { particle })
}

/// Drift of the particle SDE: entry `(i, k)` is `-D_mF(μ_x, xⁱ)_k`.
pub fn drift<M: EnergyModel + ?Sized>(model: &M, config: &ParticleConfiguration) -> Vec<f64> {
    let mut out = vec![0.0; config.as_slice().len()];
    model.drift_into(config, &mut out);
    out
}

/// Symmetrized Hessian of `U^N` with the asymmetry it had before
/// symmetrization.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianUN {
    pub matrix: DMatrix<f64>,
    /// `max |H - Hᵀ| / max(1, max |H|)` before averaging.
    pub asymmetry: f64,
}

pub const HESSIAN_ASYMMETRY_TOL: f64 = 1e-9;

/// `∇²_{ij}U^N = ∇ₓD_mF(μ_x, xⁱ)1_{i=j} + (1/N)D_m²F(μ_x, xⁱ, xʲ)`.
pub fn hessian_un<M: EnergyModel + ?Sized>(model: &M, config: &ParticleConfiguration) -> Result<HessianUN> {
    let (n, d) = (config.n_particles(), config.dim());
    let m = config.empirical();
    let mut h = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        let xi = config.point(i);
        for j in 0..n {
            let mut block = model.second_intrinsic(&m, xi, config.point(j)) / n as f64;
            if i == j {
                block += model.grad_intrinsic(&m, xi);
            }
            h.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let scale = h.amax().max(1.0);
    let asymmetry = (&h - h.transpose()).amax() / scale;
    if asymmetry > HESSIAN_ASYMMETRY_TOL {
        return Err(Error::AsymmetricHessian { defect: asymmetry });
    }
    let matrix = (&h + h.transpose()) * 0.5;
    Ok(HessianUN { matrix, asymmetry })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
