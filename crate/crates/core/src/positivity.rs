//! Positive-type interaction kernels and the discrete cross-Hessian form.
//!
//! For a kernel `W` with zero-mass signed measures `μ`, positive type means
//! `∬W dμ⊗² ≥ 0`. Taking `μ_h = Σᵢ(δ_{xⁱ+hvⁱ} − δ_{xⁱ})` and letting
//! `h → 0` gives nonnegativity of `Σᵢⱼ vⁱᵀ∇₁∇₂W(xⁱ,xʲ)vʲ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Default threshold below which a form value certifies negativity.
pub const POSITIVITY_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `exp(-|x-y|²/(2σ²))`.
    Rbf { sigma: f64 },
    /// `cos(ω·(x-y))`.
    Cosine { omega: Vec<f64> },
    /// `x·y`.
    Linear,
    Negated(Box<Kernel>),
}

impl Kernel {
    pub fn negated(self) -> Self {
        Kernel::Negated(Box::new(self))
    }

    pub fn name(&self) -> String {
        match self {
            Kernel::Rbf { .. } => "rbf".into(),
            Kernel::Cosine { .. } => "cosine".into(),
            Kernel::Linear => "linear".into(),
            Kernel::Negated(k) => format!("neg_{}", k.name()),
        }
    }

    /// Dimension fixed by the kernel parameters, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            Kernel::Cosine { omega } => Some(omega.len()),
            Kernel::Negated(k) => k.fixed_dim(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Rbf { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Invalid(format!("rbf bandwidth must be positive, got {sigma}")))
            }
            Kernel::Cosine { omega } if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) => {
                Err(Error::Invalid("cosine frequency must be a finite nonempty vector".into()))
            }
            Kernel::Negated(k) => k.validate(),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Rbf { sigma } => {
                let z2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-z2 / (2.0 * sigma * sigma)).exp()
            }
            Kernel::Cosine { omega } => omega.iter().zip(x.iter().zip(y)).map(|(w, (a, b))| w * (a - b)).sum::<f64>().cos(),
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            Kernel::Negated(k) => -k.value(x, y),
        }
    }

    /// `∇_x ∇_yᵀ W(x, y)`.
    pub fn cross_hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        match self {
            Kernel::Rbf { sigma } => {
                let s2 = sigma * sigma;
                let z = DVector::from_iterator(d, x.iter().zip(y).map(|(a, b)| a - b));
                let w = (-z.norm_squared() / (2.0 * s2)).exp();
                (DMatrix::identity(d, d) / s2 - &z * z.transpose() / (s2 * s2)) * w
            }
            Kernel::Cosine { omega } => {
                let w = DVector::from_column_slice(omega);
                let phase: f64 = omega.iter().zip(x.iter().zip(y)).map(|(o, (a, b))| o * (a - b)).sum();
                &w * w.transpose() * phase.cos()
            }
            Kernel::Linear => DMatrix::identity(d, d),
            Kernel::Negated(k) => -k.cross_hessian(x, y),
        }
    }
}

fn check_shapes(xs: &[f64], vs: &[f64], d: usize) -> Result<()> {
    if d == 0 || xs.len() != vs.len() || !xs.len().is_multiple_of(d) {
        return Err(Error::Invalid("points and directions must be N d-vectors each".into()));
    }
    Ok(())
}

/// `Σᵢⱼ vⁱᵀ ∇₁∇₂W(xⁱ, xʲ) vʲ` for flattened points and directions.
pub fn quadratic_form(kernel: &Kernel, xs: &[f64], vs: &[f64], d: usize) -> Result<f64> {
    check_shapes(xs, vs, d)?;
    let n = xs.len() / d;
    let mut total = 0.0;
    for i in 0..n {
        let vi = DVector::from_column_slice(&vs[i * d..(i + 1) * d]);
        for j in 0..n {
            let vj = DVector::from_column_slice(&vs[j * d..(j + 1) * d]);
            let h = kernel.cross_hessian(&xs[i * d..(i + 1) * d], &xs[j * d..(j + 1) * d]);
            total += vi.dot(&(h * vj));
        }
    }
    Ok(total)
}

/// `∬W dμ⊗²` for the signed discrete measure `Σ_a w_a δ_{atom_a}`.
pub fn signed_measure_energy(kernel: &Kernel, atoms: &[f64], weights: &[f64], d: usize) -> Result<f64> {
    if d == 0 || atoms.len() != weights.len() * d {
        return Err(Error::Invalid("need one weight per d-dimensional atom".into()));
    }
    let point = |a: usize| &atoms[a * d..(a + 1) * d];
    let mut total = 0.0;
    for (a, wa) in weights.iter().enumerate() {
        for (b, wb) in weights.iter().enumerate() {
            total += wa * wb * kernel.value(point(a), point(b));
        }
    }
    Ok(total)
}

/// `(1/h²)∬W dμ_h⊗²` with `μ_h = Σᵢ(δ_{xⁱ+hvⁱ} − δ_{xⁱ})`.
pub fn mu_h_form(kernel: &Kernel, xs: &[f64], vs: &[f64], d: usize, h: f64) -> Result<f64> {
    check_shapes(xs, vs, d)?;
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step must be positive, got {h}")));
    }
    let n = xs.len() / d;
    let moved: Vec<f64> = xs.iter().zip(vs).map(|(x, v)| x + h * v).collect();
    let at = |p: &[f64], i: usize| p[i * d..(i + 1) * d].to_vec();
    // The 2N signed atoms, grouped pairwise so unmoved atoms cancel exactly.
    let mut total = 0.0;
    for i in 0..n {
        let (xi, yi) = (at(xs, i), at(&moved, i));
        for j in 0..n {
            let (xj, yj) = (at(xs, j), at(&moved, j));
            total += (kernel.value(&yi, &yj) - kernel.value(&yi, &xj)) - (kernel.value(&xi, &yj) - kernel.value(&xi, &xj));
        }
    }
    Ok(total / (h * h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub steps: Vec<f64>,
    /// `|mu_h_form − quadratic_form|` at each step.
    pub errors: Vec<f64>,
    /// `log₂(e_k / e_{k+1})` for consecutive halvings.
    pub orders: Vec<f64>,
}

/// Error of the finite-`h` form against its limit along a step sequence.
pub fn mu_h_convergence(kernel: &Kernel, xs: &[f64], vs: &[f64], d: usize, steps: &[f64]) -> Result<Convergence> {
    let limit = quadratic_form(kernel, xs, vs, d)?;
    let errors = steps
        .iter()
        .map(|&h| mu_h_form(kernel, xs, vs, d, h).map(|v| (v - limit).abs()))
        .collect::<Result<Vec<_>>>()?;
    let orders = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    Ok(Convergence { steps: steps.to_vec(), errors, orders })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub n_trials: usize,
    /// Smallest `∬W dμ⊗²` over the random zero-mass measures.
    pub min_value: f64,
    pub argmin_trial: usize,
    pub argmin_atoms: Vec<f64>,
    pub argmin_weights: Vec<f64>,
    /// Smallest eigenvalue of the Gram matrix restricted to zero-mass
    /// weight vectors, over all trials.
    pub min_gram_eigenvalue: f64,
    pub tolerance: f64,
    pub positive: bool,
}

struct Trial {
    value: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    gram_min: f64,
}

fn zero_mass_min_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    if n < 2 {
        return f64::INFINITY;
    }
    // Project onto 1⊥ and push the constant direction far above the spectrum.
    let q = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let proj = &q * gram * &q;
    let lift = proj.abs().sum() + 1.0;
    let lifted = proj + DMatrix::from_element(n, n, lift / n as f64);
    SymmetricEigen::new(lifted).eigenvalues.min()
}

/// Searches random zero-mass signed measures for negative kernel energy.
/// Atoms are `N(0, 4I)` in `R^d`; weights are centered standard normals.
pub fn positive_type_check(
    kernel: &Kernel,
    n_trials: usize,
    atoms_per_trial: usize,
    d: usize,
    seed: u64,
    tolerance: f64,
) -> Result<PositivityReport> {
    kernel.validate()?;
    if n_trials == 0 || atoms_per_trial < 2 || d == 0 {
        return Err(Error::Invalid("need n_trials >= 1, at least two atoms, and d >= 1".into()));
    }
    if kernel.fixed_dim().is_some_and(|k| k != d) {
        return Err(Error::Invalid("kernel dimension does not match d".into()));
    }
    let trials: Vec<Trial> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, Domain::Kernel, t as u64, 0);
            let atoms: Vec<f64> = (0..atoms_per_trial * d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut weights: Vec<f64> = (0..atoms_per_trial).map(|_| rng.sample(StandardNormal)).collect();
            let mean = weights.iter().sum::<f64>() / atoms_per_trial as f64;
            weights.iter_mut().for_each(|w| *w -= mean);
            let gram = DMatrix::from_fn(atoms_per_trial, atoms_per_trial, |a, b| {
                kernel.value(&atoms[a * d..(a + 1) * d], &atoms[b * d..(b + 1) * d])
            });
            let w = DVector::from_column_slice(&weights);
            let value = w.dot(&(&gram * &w));
            Trial { value, gram_min: zero_mass_min_eigenvalue(&gram), atoms, weights }
        })
        .collect();
    let (argmin, best) = trials
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .expect("at least one trial");
    let min_gram_eigenvalue = trials.iter().map(|t| t.gram_min).fold(f64::INFINITY, f64::min);
    Ok(PositivityReport {
        n_trials,
        min_value: best.value,
        argmin_trial: argmin,
        argmin_atoms: best.atoms.clone(),
        argmin_weights: best.weights.clone(),
        min_gram_eigenvalue,
        tolerance,
        positive: best.value >= tolerance && min_gram_eigenvalue >= tolerance,
    })
}

/// Minimum of [`quadratic_form`] over random points `N(0, 4I)` and
/// directions `N(0, I)`.
pub fn min_quadratic_form(kernel: &Kernel, n_trials: usize, n_points: usize, d: usize, seed: u64) -> Result<f64> {
    kernel.validate()?;
    (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, Domain::Kernel, t as u64, 1);
            let xs: Vec<f64> = (0..n_points * d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let vs: Vec<f64> = (0..n_points * d).map(|_| rng.sample(StandardNormal)).collect();
            quadratic_form(kernel, &xs, &vs, d)
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_kernel_form_is_squared_sum() {
        let xs = [0.1, 2.0, -1.0, 0.5, 0.3, 0.3];
        let vs = [1.0, -2.0, 0.5, 0.5, 3.0, 1.0];
        let s = [4.5, -0.5];
        let expect = s[0] * s[0] + s[1] * s[1];
        assert!((quadratic_form(&Kernel::Linear, &xs, &vs, 2).unwrap() - expect).abs() < 1e-12);
        for h in [1.0, 0.1, 1e-3] {
            assert!((mu_h_form(&Kernel::Linear, &xs, &vs, 2, h).unwrap() - expect).abs() < 1e-9 * (1.0 + 1.0 / h));
        }
    }

    #[test]
    fn zero_directions_give_zero() {
        let k = Kernel::Rbf { sigma: 1.0 };
        let xs = [0.0, 1.0, 2.0];
        assert_eq!(quadratic_form(&k, &xs, &[0.0; 3], 1).unwrap(), 0.0);
        assert_eq!(mu_h_form(&k, &xs, &[0.0; 3], 1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn cross_hessians_match_finite_differences() {
        let h = 1e-4;
        let x = [0.3, -0.4];
        let y = [-0.2, 0.9];
        for k in [Kernel::Rbf { sigma: 0.8 }, Kernel::Cosine { omega: vec![1.5, -0.7] }, Kernel::Linear] {
            let exact = k.cross_hessian(&x, &y);
            for i in 0..2 {
                for j in 0..2 {
                    let shift = |si: f64, sj: f64| {
                        let mut xx = x;
                        let mut yy = y;
                        xx[i] += si;
                        yy[j] += sj;
                        k.value(&xx, &yy)
                    };
                    let fd = (shift(h, h) - shift(h, -h) - shift(-h, h) + shift(-h, -h)) / (4.0 * h * h);
                    assert!((fd - exact[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()), "{k:?}");
                }
            }
        }
    }

    #[test]
    fn atom_pair_energy() {
        let k = Kernel::Rbf { sigma: 1.0 };
        let atoms = [0.5, -1.0];
        let e = signed_measure_energy(&k, &atoms, &[1.0, -1.0], 1).unwrap();
        let direct = 2.0 - 2.0 * k.value(&[0.5], &[-1.0]);
        assert!((e - direct).abs() < 1e-15);
    }

    #[test]
    fn negated_rbf_is_caught() {
        let k = Kernel::Rbf { sigma: 1.0 }.negated();
        let r = positive_type_check(&k, 10, 4, 2, 5, POSITIVITY_TOL).unwrap();
        assert!(!r.positive);
        assert!(r.min_value < -1e-3);
    }
}
