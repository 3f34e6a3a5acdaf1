//! Reference values computed independently at 40 significant digits.

#![allow(clippy::excessive_precision)]

use mflab_core::constants::{
    defective_constants, lsi_constant_pipeline, lsi_constant_theorem, lsi_limit_pipeline, lsi_limit_remark,
    poincare_constant, standard_tightening, tighten, ConstantsInput,
};
use mflab_core::gaussian_oracle::{fisher_gaussian, kl_gaussian, w2_gaussian, GaussianMeasure};
use mflab_core::{drift, potential_un, EnergyModel, GaussianMeanField, ParticleConfiguration, RbfInteraction};
use nalgebra::{DMatrix, DVector};

fn close(got: f64, want: f64, rel: f64) {
    assert!((got - want).abs() <= rel * want.abs().max(1e-300), "got {got}, want {want}");
}

fn reference_input() -> ConstantsInput {
    ConstantsInput { dim: 1, n_particles: 100, epsilon: 0.5, m_mm: 0.5, rho: 1.0 }
}

#[test]
fn constants_at_reference_point() {
    let input = reference_input();
    let dc = defective_constants(&input).unwrap();
    close(dc.rho_prime, 0.445, 1e-14);
    close(dc.delta, 6.5, 1e-14);
    close(poincare_constant(1.0, 0.5, 100).value, 0.995, 1e-14);
    close(tighten(0.445, 0.995, 6.5).unwrap(), 0.168_998_091_603_053_44, 1e-13);
    close(standard_tightening(0.445, 0.995, 6.5).unwrap(), 0.144_461_663_947_797_72, 1e-13);
    close(lsi_constant_pipeline(&input).unwrap(), 0.168_998_091_603_053_44, 1e-13);
    close(lsi_constant_theorem(&input).unwrap(), 0.063_058_705_803_869_246, 1e-13);
    close(lsi_limit_remark(1, 1.0, 0.5, 0.5).unwrap(), 1.0 / 15.0, 1e-14);
    close(lsi_limit_pipeline(1, 1.0, 0.5, 0.5).unwrap(), 0.190_476_190_476_190_48, 1e-14);
}

fn config() -> ParticleConfiguration {
    ParticleConfiguration::new(3, 2, vec![0.4, -1.1, 2.0, 0.3, -0.6, 0.9]).unwrap()
}

#[test]
fn gaussian_model_energy_and_drift() {
    let m = GaussianMeanField::new(1.3, 0.7).unwrap();
    close(potential_un(&m, &config()).unwrap(), 4.688_666_666_666_666_7, 1e-14);
    let want = [-0.94, 1.406_666_666_666_666_7, -3.02, -0.413_333_333_333_333_33, 0.36, -1.193_333_333_333_333_3];
    for (g, w) in drift(&m, &config()).iter().zip(want) {
        close(*g, w, 1e-14);
    }
}

#[test]
fn rbf_model_energy_drift_and_bounds() {
    let m = RbfInteraction::new(1.3, 0.8, 1.5, 1.0).unwrap();
    close(potential_un(&m, &config()).unwrap(), 4.949_755_712_322_560_0, 1e-14);
    let want = [
        -0.550_436_016_744_932_10,
        1.291_199_022_835_861_0,
        -2.467_218_562_677_201_6,
        -0.343_844_558_361_413_79,
        0.677_654_579_422_133_71,
        -1.077_354_464_474_447_2,
    ];
    for (g, w) in drift(&m, &config()).iter().zip(want) {
        close(*g, w, 1e-13);
    }
    let b = m.bounds();
    close(b.m_mm, 0.355_555_555_555_555_56, 1e-15);
    close(b.m_mx, 1.458_670_336_105_550_1, 1e-15);
}

#[test]
fn gaussian_divergences() {
    let p = GaussianMeasure::new(
        DVector::from_row_slice(&[0.3, -0.2]),
        DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]),
    )
    .unwrap();
    let q = GaussianMeasure::new(
        DVector::from_row_slice(&[0.1, 0.5]),
        DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 2.0]),
    )
    .unwrap();
    close(kl_gaussian(&p, &q).unwrap(), 0.488_758_018_379_330_17, 1e-12);
    close(fisher_gaussian(&p, &q).unwrap(), 1.310_439_259_213_963_9, 1e-12);
    close(w2_gaussian(&p, &q).unwrap().powi(2), 1.063_955_909_397_539_4, 1e-11);
}
