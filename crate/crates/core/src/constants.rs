//! Explicit constants of the uniform log-Sobolev pipeline.
//!
//! The chain is: a defective log-Sobolev inequality `(ρ', δ)`, a uniform
//! Poincaré constant `ρ - M_mm/N`, and a tightening that removes the defect.
//! The closed form stated for the final constant does not agree with the
//! composition of the three steps, so both are evaluated and reported side
//! by side. The composed value is the canonical one.
//!
//! Constants follow the `2ρH ≤ I` convention throughout.

use crate::error::{Error, Result};

/// Lower clamp of the ε search interval; the formulas blow up at 0 and 1.
pub const EPSILON_CLAMP: f64 = 1e-8;
/// Width at which the bracketed ε search stops.
pub const EPSILON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsInput {
    pub dim: usize,
    pub n_particles: u64,
    pub epsilon: f64,
    pub m_mm: f64,
    pub rho: f64,
}

impl ConstantsInput {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_particles == 0 {
            return Err(Error::Invalid("constants need d >= 1 and N >= 1".into()));
        }
        check_epsilon(self.epsilon)?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Domain(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.m_mm >= 0.0 && self.m_mm.is_finite()) {
            return Err(Error::Domain(format!("m_mm must be nonnegative, got {}", self.m_mm)));
        }
        Ok(())
    }

    /// `α = M_mm / ρ`.
    pub fn alpha(&self) -> f64 {
        self.m_mm / self.rho
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        ConstantsInput { epsilon, ..self }
    }

    fn n(&self) -> f64 {
        self.n_particles as f64
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}

/// A computed constant together with whether it lies in its valid regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub valid: bool,
}

impl Flagged {
    fn positive(value: f64) -> Self {
        Flagged { value, valid: value > 0.0 && value.is_finite() }
    }

    pub fn require(self, constant: &'static str) -> Result<f64> {
        if self.valid {
            Ok(self.value)
        } else {
            Err(Error::Regime { constant, value: self.value })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectiveConstants {
    pub rho_prime: f64,
    pub delta: f64,
    /// `ρ' > 0`.
    pub valid: bool,
}

/// `ρ' = (1-ε)ρ - (M/N)(8 + 6(ε⁻¹-1)M/ρ)` and `δ = 2dM(5 + 3(ε⁻¹-1)M/ρ)`.
pub fn defective_constants(input: &ConstantsInput) -> Result<DefectiveConstants> {
    input.validate()?;
    let m = input.m_mm;
    let alpha = input.alpha();
    let inv = 1.0 / input.epsilon - 1.0;
    let rho_prime = (1.0 - input.epsilon) * input.rho - (m / input.n()) * (8.0 + 6.0 * inv * alpha);
    let delta = 2.0 * input.dim as f64 * m * (5.0 + 3.0 * inv * alpha);
    Ok(DefectiveConstants { rho_prime, delta, valid: rho_prime > 0.0 })
}

/// `ρ - M_mm/N`; nonpositive values are flagged.
pub fn poincare_constant(rho: f64, m_mm: f64, n: u64) -> Flagged {
    Flagged::positive(rho - m_mm / n as f64)
}

fn check_tightening(rho1: f64, rho2: f64, delta: f64) -> Result<()> {
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::Domain(format!(
            "tightening needs rho1 > 0 and rho2 > 0 (got {rho1}, {rho2})"
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("defect must be nonnegative, got {delta}")));
    }
    Ok(())
}

/// Hypercontractive tightening: `ρ₁ρ₂ / (ρ₂ + δ/4)`.
pub fn tighten(rho1: f64, rho2: f64, delta: f64) -> Result<f64> {
    check_tightening(rho1, rho2, delta)?;
    Ok(rho1 * rho2 / (rho2 + 0.25 * delta))
}

/// Classical Rothaus-based tightening `(1/ρ₁ + (δ/(4ρ₁) + 1)/ρ₂)⁻¹`, kept
/// for comparison.
pub fn standard_tightening(rho1: f64, rho2: f64, delta: f64) -> Result<f64> {
    check_tightening(rho1, rho2, delta)?;
    Ok(1.0 / (1.0 / rho1 + (delta / (4.0 * rho1) + 1.0) / rho2))
}

fn pipeline_raw(input: &ConstantsInput) -> (f64, DefectiveConstants, Flagged) {
    let defective = defective_constants(input).expect("validated input");
    let rho2 = poincare_constant(input.rho, input.m_mm, input.n_particles);
    let value = defective.rho_prime * rho2.value / (rho2.value + 0.25 * defective.delta);
    (value, defective, rho2)
}

/// Defective constants, Poincaré constant and tightening composed.
pub fn lsi_constant_pipeline(input: &ConstantsInput) -> Result<f64> {
    input.validate()?;
    let (_, defective, rho2) = pipeline_raw(input);
    let rho2 = rho2.require("rho_poincare")?;
    if !defective.valid {
        return Err(Error::Regime { constant: "rho_prime", value: defective.rho_prime });
    }
    tighten(defective.rho_prime, rho2, defective.delta)
}

fn theorem_raw(input: &ConstantsInput) -> f64 {
    let alpha = input.alpha();
    let n = input.n();
    let inv = 1.0 / input.epsilon - 1.0;
    let numerator = 1.0 - input.epsilon - (8.0 * alpha + 6.0 * inv) * alpha * alpha / n;
    let denominator =
        1.0 + 2.0 * input.dim as f64 * (5.0 + 3.0 * inv * alpha) * alpha / (1.0 - alpha / n);
    numerator / denominator * input.rho
}

/// The closed form as printed:
/// `ρ[1 - ε - (8α + 6(ε⁻¹-1))α²/N] / [1 + 2d(5 + 3(ε⁻¹-1)α)α/(1 - α/N)]`.
pub fn lsi_constant_theorem(input: &ConstantsInput) -> Result<f64> {
    input.validate()?;
    let alpha = input.alpha();
    if !(input.n() > alpha) {
        return Err(Error::Regime { constant: "n_particles - alpha", value: input.n() - alpha });
    }
    Flagged::positive(theorem_raw(input)).require("rho_lsi_theorem")
}

/// `N → ∞` limit of the closed form: `(1-ε)ρ / (1 + 2dα(5 + 3(ε⁻¹-1)α))`.
pub fn lsi_limit_remark(dim: usize, rho: f64, alpha: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let inv = 1.0 / epsilon - 1.0;
    Ok((1.0 - epsilon) * rho / (1.0 + 2.0 * dim as f64 * alpha * (5.0 + 3.0 * inv * alpha)))
}

/// `N → ∞` limit of the composed pipeline: `(1-ε)ρ / (1 + δ/(4ρ))`, with
/// `δ` at its (N-free) value.
pub fn lsi_limit_pipeline(dim: usize, rho: f64, m_mm: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let inv = 1.0 / epsilon - 1.0;
    let delta = 2.0 * dim as f64 * m_mm * (5.0 + 3.0 * inv * m_mm / rho);
    Ok((1.0 - epsilon) * rho / (1.0 + delta / (4.0 * rho)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    Pipeline,
    Theorem,
}

impl Formula {
    fn raw(self, input: &ConstantsInput) -> f64 {
        match self {
            Formula::Pipeline => pipeline_raw(input).0,
            Formula::Theorem => theorem_raw(input),
        }
    }

    fn evaluate(self, input: &ConstantsInput) -> Result<f64> {
        match self {
            Formula::Pipeline => lsi_constant_pipeline(input),
            Formula::Theorem => lsi_constant_theorem(input),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizedEpsilon {
    pub epsilon_star: f64,
    pub rho_star: f64,
}

/// Maximizes the chosen formula over `ε ∈ [1e-8, 1-1e-8]`.
///
/// Both formulas are quasi-concave in ε (a concave numerator over a convex
/// positive denominator), so a coarse scan followed by golden-section
/// refinement of the best bracket finds the global maximum. The `epsilon`
/// field of `input` is ignored.
pub fn optimize_epsilon(input: &ConstantsInput, formula: Formula) -> Result<OptimizedEpsilon> {
    input.with_epsilon(0.5).validate()?;
    let lo = EPSILON_CLAMP;
    let hi = 1.0 - EPSILON_CLAMP;
    let f = |e: f64| formula.raw(&input.with_epsilon(e));

    // Log-spaced near 0 (where the optimum sits for small α) plus a uniform grid.
    let mut grid: Vec<f64> = (0..=80).map(|k| lo * (0.5 / lo).powf(k as f64 / 80.0)).collect();
    grid.extend((1..200).map(|k| k as f64 / 200.0));
    grid.push(hi);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let values: Vec<f64> = grid.iter().map(|&e| f(e)).collect();
    let best = (0..grid.len())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("nonempty grid");

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > EPSILON_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mut epsilon_star = 0.5 * (a + b);
    if values[best] > f(epsilon_star) {
        epsilon_star = grid[best];
    }

    match formula.evaluate(&input.with_epsilon(epsilon_star)) {
        Ok(v) => Ok(OptimizedEpsilon { epsilon_star, rho_star: v }),
        Err(e) => {
            // A positive raw value may still violate N > α; fall back to any
            // valid grid point before giving up.
            let valid = grid
                .iter()
                .filter_map(|&e| formula.evaluate(&input.with_epsilon(e)).ok().map(|v| (e, v)))
                .max_by(|x, y| x.1.total_cmp(&y.1));
            valid
                .map(|(epsilon_star, rho_star)| OptimizedEpsilon { epsilon_star, rho_star })
                .ok_or(e)
        }
    }
}

/// Every constant of the pipeline for one `(d, N, ε, M_mm, ρ)` tuple.
/// Constants outside their regime are reported as computed, with the
/// corresponding `valid_*` flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsReport {
    pub input: ConstantsInput,
    pub alpha: f64,
    pub rho_prime: f64,
    pub delta: f64,
    pub rho_poincare: f64,
    pub rho_lsi_pipeline: f64,
    pub rho_lsi_theorem: f64,
    pub rho_lsi_standard: f64,
    pub rho_limit_remark: f64,
    pub rho_limit_pipeline: f64,
    pub epsilon_star: f64,
    pub rho_lsi_optimized: f64,
    pub valid_pipeline: bool,
    pub valid_theorem: bool,
    pub valid_optimized: bool,
}

impl ConstantsReport {
    pub fn compute(input: &ConstantsInput) -> Result<Self> {
        input.validate()?;
        let alpha = input.alpha();
        let (pipeline, defective, rho2) = pipeline_raw(input);
        let valid_pipeline = defective.valid && rho2.valid && pipeline > 0.0;
        let standard = 1.0
            / (1.0 / defective.rho_prime
                + (defective.delta / (4.0 * defective.rho_prime) + 1.0) / rho2.value);
        let theorem = theorem_raw(input);
        let valid_theorem = input.n() > alpha && theorem > 0.0;
        let optimized = optimize_epsilon(input, Formula::Pipeline);
        Ok(ConstantsReport {
            input: *input,
            alpha,
            rho_prime: defective.rho_prime,
            delta: defective.delta,
            rho_poincare: rho2.value,
            rho_lsi_pipeline: pipeline,
            rho_lsi_theorem: theorem,
            rho_lsi_standard: standard,
            rho_limit_remark: lsi_limit_remark(input.dim, input.rho, alpha, input.epsilon)?,
            rho_limit_pipeline: lsi_limit_pipeline(input.dim, input.rho, input.m_mm, input.epsilon)?,
            epsilon_star: optimized.as_ref().map_or(f64::NAN, |o| o.epsilon_star),
            rho_lsi_optimized: optimized.as_ref().map_or(f64::NAN, |o| o.rho_star),
            valid_pipeline,
            valid_theorem,
            valid_optimized: optimized.is_ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(n: u64) -> ConstantsInput {
        ConstantsInput { dim: 1, n_particles: n, epsilon: 0.5, m_mm: 0.5, rho: 1.0 }
    }

    #[test]
    fn epsilon_domain_is_enforced() {
        for e in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            let input = reference(100).with_epsilon(e);
            assert!(matches!(defective_constants(&input), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn interaction_free_constants() {
        let input = ConstantsInput { m_mm: 0.0, ..reference(10) }.with_epsilon(0.3);
        let dc = defective_constants(&input).unwrap();
        assert_eq!(dc.delta, 0.0);
        assert!((dc.rho_prime - 0.7).abs() < 1e-15);
        assert_eq!(poincare_constant(1.0, 0.0, 10).value, 1.0);
        assert!((lsi_constant_pipeline(&input).unwrap() - 0.7).abs() < 1e-15);
        assert!((lsi_constant_theorem(&input).unwrap() - 0.7).abs() < 1e-15);
        assert!((lsi_limit_remark(3, 1.0, 0.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn poincare_boundary_is_flagged() {
        let p = poincare_constant(1.0, 0.5, 100);
        assert!((p.value - 0.995).abs() < 1e-15 && p.valid);
        let edge = poincare_constant(1.0, 4.0, 4);
        assert_eq!(edge.value, 0.0);
        assert!(!edge.valid);
    }

    #[test]
    fn tightening_limits_and_errors() {
        assert_eq!(tighten(0.4, 0.9, 0.0).unwrap(), 0.4);
        assert!((tighten(0.4, 1e12, 5.0).unwrap() - 0.4).abs() < 1e-11);
        let h = standard_tightening(0.4, 0.9, 0.0).unwrap();
        assert!((h - 1.0 / (1.0 / 0.4 + 1.0 / 0.9)).abs() < 1e-15);
        assert!(tighten(0.0, 1.0, 1.0).is_err());
        assert!(standard_tightening(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn pipeline_reports_regime_failures() {
        let bad = ConstantsInput { m_mm: 5.0, ..reference(2) };
        match lsi_constant_pipeline(&bad) {
            Err(Error::Regime { .. }) => {}
            other => panic!("expected regime error, got {other:?}"),
        }
        let report = ConstantsReport::compute(&bad).unwrap();
        assert!(!report.valid_pipeline && !report.valid_theorem);
        assert!(report.rho_prime < 0.0, "invalid constants are reported unclamped");
    }

    #[test]
    fn optimizer_handles_interaction_free_case() {
        let input = ConstantsInput { m_mm: 0.0, ..reference(50) };
        let opt = optimize_epsilon(&input, Formula::Pipeline).unwrap();
        assert!(opt.epsilon_star < 1e-7);
        assert!((opt.rho_star - 1.0).abs() < 1e-7);
    }

    #[test]
    fn report_is_internally_consistent() {
        let r = ConstantsReport::compute(&reference(100)).unwrap();
        assert!(r.valid_pipeline && r.valid_theorem && r.valid_optimized);
        assert!(r.rho_lsi_pipeline <= r.rho_poincare && r.rho_lsi_pipeline <= r.rho_prime);
        assert!(r.rho_lsi_standard < r.rho_lsi_pipeline);
        assert!(r.rho_lsi_optimized >= r.rho_lsi_pipeline);
        assert!(r.epsilon_star > 0.0 && r.epsilon_star < 1.0);
    }
}
