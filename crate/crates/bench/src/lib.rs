//! Fixtures shared by the benchmarks.

use mflab_core::{GaussianMeanField, ParticleConfiguration, RbfInteraction};

/// A deterministic, spread-out configuration of `n` particles in `R^d`.
pub fn spread_config(n: usize, d: usize) -> ParticleConfiguration {
    let points = (0..n * d).map(|k| ((k as f64 * 0.754_877_666).fract() - 0.5) * 4.0).collect();
    ParticleConfiguration::new(n, d, points).expect("finite points")
}

pub fn gaussian() -> GaussianMeanField {
    GaussianMeanField::new(1.0, 0.5).expect("valid parameters")
}

pub fn rbf() -> RbfInteraction {
    RbfInteraction::new(1.3, 0.8, 1.5, 1.0).expect("valid parameters")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_have_the_requested_shape() {
        let c = super::spread_config(5, 3);
        assert_eq!((c.n_particles(), c.dim()), (5, 3));
        assert!(c.as_slice().iter().all(|v| v.abs() <= 2.0));
    }
}
