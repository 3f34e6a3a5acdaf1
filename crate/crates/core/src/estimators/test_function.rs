//! Smooth test functions on `R^k` with analytic derivatives.

use nalgebra::DMatrix;

/// One term `c · Π x_i^{p_i}` of a sparse polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    /// `(coordinate, power)` pairs with distinct coordinates and powers ≥ 1.
    pub factors: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn new(coef: f64, factors: Vec<(usize, u32)>) -> Self {
        Monomial { coef, factors }
    }
}

/// Outer maps used to build bounded or positive variants of a function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outer {
    /// `g ↦ c·tanh(g/c)`: smooth clipping to `(-c, c)` with unit slope at 0.
    Tanh(f64),
    /// `g ↦ exp(s·g)`.
    Exp(f64),
}

impl Outer {
    /// `(h(g), h'(g), h''(g))`.
    fn jet(&self, g: f64) -> (f64, f64, f64) {
        match *self {
            Outer::Tanh(c) => {
                let t = (g / c).tanh();
                let s = 1.0 - t * t;
                (c * t, s, -2.0 * t * s / c)
            }
            Outer::Exp(s) => {
                let e = (s * g).exp();
                (e, s * e, s * s * e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    Polynomial(Vec<Monomial>),
    /// `√(s² + |x|²)`: 1-Lipschitz with bounded Hessian.
    Radial { scale: f64 },
    Compose { inner: Box<TestFunction>, outer: Outer },
}

/// Value and derivative summaries at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub laplacian: f64,
    /// Squared Frobenius norm of the Hessian.
    pub hess_norm2: f64,
    /// `∇fᵀ ∇²f ∇f`.
    pub grad_hess_grad: f64,
}

fn pow_or_zero(x: f64, e: i64) -> f64 {
    if e < 0 {
        0.0
    } else {
        x.powi(e as i32)
    }
}

impl TestFunction {
    pub fn coordinate(j: usize) -> Self {
        TestFunction::Polynomial(vec![Monomial::new(1.0, vec![(j, 1)])])
    }

    /// `Σ_j v_j x_j` over the nonzero entries of `v`.
    pub fn linear(v: &[f64]) -> Self {
        TestFunction::Polynomial(
            v.iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, &c)| Monomial::new(c, vec![(j, 1)]))
                .collect(),
        )
    }

    pub fn monomial(coef: f64, factors: Vec<(usize, u32)>) -> Self {
        TestFunction::Polynomial(vec![Monomial::new(coef, factors)])
    }

    pub fn clipped(self, c: f64) -> Self {
        TestFunction::Compose { inner: Box::new(self), outer: Outer::Tanh(c) }
    }

    pub fn exponential(self, s: f64) -> Self {
        TestFunction::Compose { inner: Box::new(self), outer: Outer::Exp(s) }
    }

    /// Largest coordinate index the function reads, if any. Radial
    /// functions read every coordinate and report `None`.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            TestFunction::Constant(_) | TestFunction::Radial { .. } => None,
            TestFunction::Polynomial(terms) => terms.iter().flat_map(|m| m.factors.iter().map(|f| f.0)).max(),
            TestFunction::Compose { inner, .. } => inner.max_index(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Polynomial(terms) => terms
                .iter()
                .map(|m| m.coef * m.factors.iter().map(|&(i, p)| x[i].powi(p as i32)).product::<f64>())
                .sum(),
            TestFunction::Radial { scale } => (scale * scale + x.iter().map(|v| v * v).sum::<f64>()).sqrt(),
            TestFunction::Compose { inner, outer } => outer.jet(inner.value(x)).0,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        let k = x.len();
        match self {
            TestFunction::Constant(c) => Evaluation {
                value: *c,
                grad: vec![0.0; k],
                laplacian: 0.0,
                hess_norm2: 0.0,
                grad_hess_grad: 0.0,
            },
            TestFunction::Polynomial(terms) => {
                let mut value = 0.0;
                let mut grad = vec![0.0; k];
                let mut hess: Vec<(usize, usize, f64)> = Vec::new();
                for m in terms {
                    let f = &m.factors;
                    let pw = |a: usize, drop: i64| pow_or_zero(x[f[a].0], f[a].1 as i64 - drop);
                    let others = |skip: &[usize]| -> f64 {
                        (0..f.len()).filter(|b| !skip.contains(b)).map(|b| pw(b, 0)).product()
                    };
                    value += m.coef * others(&[]);
                    for a in 0..f.len() {
                        let p = f[a].1 as f64;
                        grad[f[a].0] += m.coef * p * pw(a, 1) * others(&[a]);
                        if f[a].1 >= 2 {
                            let v = m.coef * p * (p - 1.0) * pw(a, 2) * others(&[a]);
                            hess.push((f[a].0, f[a].0, v));
                        }
                        for b in a + 1..f.len() {
                            let v = m.coef * p * f[b].1 as f64 * pw(a, 1) * pw(b, 1) * others(&[a, b]);
                            let (i, j) = (f[a].0.min(f[b].0), f[a].0.max(f[b].0));
                            hess.push((i, j, v));
                        }
                    }
                }
                hess.sort_unstable_by_key(|&(i, j, _)| (i, j));
                let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(hess.len());
                for (i, j, v) in hess {
                    match merged.last_mut() {
                        Some(last) if last.0 == i && last.1 == j => last.2 += v,
                        _ => merged.push((i, j, v)),
                    }
                }
                let (mut laplacian, mut hess_norm2, mut grad_hess_grad) = (0.0, 0.0, 0.0);
                for (i, j, v) in merged {
                    if i == j {
                        laplacian += v;
                        hess_norm2 += v * v;
                        grad_hess_grad += grad[i] * v * grad[i];
                    } else {
                        hess_norm2 += 2.0 * v * v;
                        grad_hess_grad += 2.0 * grad[i] * v * grad[j];
                    }
                }
                Evaluation { value, grad, laplacian, hess_norm2, grad_hess_grad }
            }
            TestFunction::Radial { scale } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let f = (scale * scale + r2).sqrt();
                let grad: Vec<f64> = x.iter().map(|v| v / f).collect();
                // ∇²f = I/f − x xᵀ/f³
                let radial = 1.0 / f - r2 / (f * f * f);
                Evaluation {
                    value: f,
                    laplacian: (k as f64 - 1.0) / f + radial,
                    hess_norm2: (k as f64 - 1.0) / (f * f) + radial * radial,
                    grad_hess_grad: (r2 / (f * f)) * radial,
                    grad,
                }
            }
            TestFunction::Compose { inner, outer } => {
                let e = inner.evaluate(x);
                let (h, h1, h2) = outer.jet(e.value);
                let g2: f64 = e.grad.iter().map(|v| v * v).sum();
                Evaluation {
                    value: h,
                    laplacian: h2 * g2 + h1 * e.laplacian,
                    hess_norm2: h2 * h2 * g2 * g2 + 2.0 * h2 * h1 * e.grad_hess_grad + h1 * h1 * e.hess_norm2,
                    grad_hess_grad: h1 * h1 * (h2 * g2 * g2 + h1 * e.grad_hess_grad),
                    grad: e.grad.iter().map(|v| h1 * v).collect(),
                }
            }
        }
    }

    /// Dense Hessian; intended for validation, not hot loops.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let k = x.len();
        match self {
            TestFunction::Constant(_) => DMatrix::zeros(k, k),
            TestFunction::Polynomial(terms) => {
                let mut h = DMatrix::zeros(k, k);
                for m in terms {
                    let f = &m.factors;
                    for a in 0..f.len() {
                        for b in 0..f.len() {
                            let mut v = m.coef;
                            for (c, &(i, p)) in f.iter().enumerate() {
                                let drop = (c == a) as i64 + (c == b) as i64;
                                let fall = match drop {
                                    0 => 1.0,
                                    1 => p as f64,
                                    _ => p as f64 * (p as f64 - 1.0),
                                };
                                v *= fall * pow_or_zero(x[i], p as i64 - drop);
                            }
                            h[(f[a].0, f[b].0)] += v;
                        }
                    }
                }
                h
            }
            TestFunction::Radial { scale } => {
                let f = (scale * scale + x.iter().map(|v| v * v).sum::<f64>()).sqrt();
                let xv = nalgebra::DVector::from_column_slice(x);
                DMatrix::identity(k, k) / f - &xv * xv.transpose() / (f * f * f)
            }
            TestFunction::Compose { inner, outer } => {
                let e = inner.evaluate(x);
                let (_, h1, h2) = outer.jet(e.value);
                let g = nalgebra::DVector::from_vec(e.grad);
                &g * g.transpose() * h2 + inner.hessian(x) * h1
            }
        }
    }
}

/// Twenty functions on `N` particles in `R^d` (flattened coordinate
/// `i·d + c`): coordinates and particle averages, degree-2 monomials, a
/// radial function, and smoothly clipped or exponentiated variants.
pub fn default_dictionary(n: usize, d: usize) -> Vec<TestFunction> {
    let at = |i: usize, c: usize| (i % n) * d + (c % d);
    let second = if d > 1 { at(0, 1) } else { at(2, 0) };
    let (x0, x1, last) = (at(0, 0), at(1, 0), at(n - 1, d - 1));
    let mean_mode = TestFunction::Polynomial(
        (0..n).map(|i| Monomial::new(1.0 / n as f64, vec![(at(i, 0), 1)])).collect(),
    );
    let second_moment = TestFunction::Polynomial(
        (0..n * d).map(|j| Monomial::new(1.0 / n as f64, vec![(j, 2)])).collect(),
    );
    let difference = |c: f64| {
        if x0 == x1 {
            TestFunction::coordinate(x0)
        } else {
            TestFunction::Polynomial(vec![Monomial::new(c, vec![(x0, 1)]), Monomial::new(-c, vec![(x1, 1)])])
        }
    };
    let product = |a: usize, b: usize| {
        if a == b {
            TestFunction::monomial(1.0, vec![(a, 2)])
        } else {
            TestFunction::monomial(1.0, vec![(a, 1), (b, 1)])
        }
    };
    vec![
        TestFunction::coordinate(x0),
        TestFunction::coordinate(x1),
        TestFunction::coordinate(last),
        mean_mode.clone(),
        difference(1.0),
        TestFunction::monomial(1.0, vec![(x0, 2)]),
        product(x0, x1),
        product(x0, second),
        second_moment.clone(),
        TestFunction::Polynomial(vec![Monomial::new(1.0, vec![(x0, 2)]), Monomial::new(-1.0, vec![(x1, 2)])]),
        TestFunction::Polynomial(vec![Monomial::new(1.0, vec![(x0, 1)]), Monomial::new(0.5, vec![(x0, 2)])]),
        TestFunction::Radial { scale: 1.0 },
        TestFunction::coordinate(x0).clipped(1.0),
        product(x0, x1).clipped(1.0),
        TestFunction::monomial(1.0, vec![(x0, 2)]).clipped(2.0),
        mean_mode.clipped(0.5),
        TestFunction::coordinate(x0).exponential(0.1),
        difference(1.0).exponential(0.2),
        TestFunction::Radial { scale: 1.0 }.clipped(2.0),
        second_moment.clipped(3.0),
    ]
}

/// Short labels for [`default_dictionary`], in order.
pub const DEFAULT_DICTIONARY_NAMES: [&str; 20] = [
    "x0",
    "x1",
    "x_last",
    "mean",
    "diff",
    "x0^2",
    "x0*x1",
    "x0*y0",
    "second_moment",
    "x0^2-x1^2",
    "x0+x0^2/2",
    "radial",
    "tanh(x0)",
    "tanh(x0*x1)",
    "tanh(x0^2)",
    "tanh(mean)",
    "exp(x0)",
    "exp(diff)",
    "tanh(radial)",
    "tanh(second_moment)",
];

/// One coordinate function per flattened coordinate.
pub fn coordinate_dictionary(k: usize) -> Vec<TestFunction> {
    (0..k).map(TestFunction::coordinate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &TestFunction, x: &[f64]) {
        let h = 1e-5;
        let e = f.evaluate(x);
        let hess = f.hessian(x);
        let k = x.len();
        for j in 0..k {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((fd - e.grad[j]).abs() <= 1e-6 * (1.0 + e.grad[j].abs()), "{f:?} grad {j}");
            let gp = f.evaluate(&xp).grad;
            let gm = f.evaluate(&xm).grad;
            for i in 0..k {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - hess[(i, j)]).abs() <= 1e-5 * (1.0 + fd.abs()), "{f:?} hess {i},{j}");
            }
        }
        assert!((hess.trace() - e.laplacian).abs() < 1e-10 * (1.0 + e.laplacian.abs()));
        assert!((hess.norm_squared() - e.hess_norm2).abs() < 1e-9 * (1.0 + e.hess_norm2));
        let g = nalgebra::DVector::from_vec(e.grad.clone());
        let ghg = (g.transpose() * &hess * &g)[(0, 0)];
        assert!((ghg - e.grad_hess_grad).abs() < 1e-9 * (1.0 + ghg.abs()));
    }

    #[test]
    fn dictionary_derivatives_match_finite_differences() {
        let x = [0.3, -0.7, 1.1, 0.4, -0.2, 0.9];
        for (n, d) in [(3, 2), (6, 1), (2, 3)] {
            let dict = default_dictionary(n, d);
            assert_eq!(dict.len(), 20);
            for f in &dict {
                fd_check(f, &x);
            }
        }
    }

    #[test]
    fn cubic_cross_term() {
        let f = TestFunction::monomial(2.0, vec![(0, 2), (1, 1), (2, 3)]);
        fd_check(&f, &[0.5, -1.2, 0.8]);
    }
}
