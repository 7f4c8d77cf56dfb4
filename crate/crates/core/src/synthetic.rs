//! A synthetic eight-oxide glass dataset with a known Tg law:
//!
//! ```text
//! Tg = Σᵢ wᵢ xᵢ + Σᵢ<ⱼ cᵢⱼ xᵢ xⱼ + N(0, 5 °C)
//! ```
//!
//! Compositions are sparse: each draws 3 to 6 components and splits unit
//! mass among them with flat Dirichlet weights.

use crate::data::{ComponentSchema, RawSample, TgBand};
use crate::error::Result;
use crate::numeric::{gaussian, SeededRng};

pub const COMPONENTS: [&str; 8] = ["SiO2", "Al2O3", "B2O3", "Na2O", "K2O", "CaO", "MgO", "ZnO"];

/// Linear coefficients in °C per unit fraction, in [`COMPONENTS`] order.
pub const LINEAR: [f64; 8] = [700.0, 800.0, 420.0, 300.0, 280.0, 680.0, 650.0, 480.0];

/// Pairwise coefficients `(i, j, cᵢⱼ)`; unlisted pairs are 0.
pub const PAIRWISE: [(usize, usize, f64); 7] = [
    (0, 1, 300.0),  // SiO2–Al2O3
    (1, 3, -250.0), // Al2O3–Na2O
    (2, 3, 350.0),  // B2O3–Na2O
    (5, 6, -150.0), // CaO–MgO
    (0, 3, -200.0), // SiO2–Na2O
    (1, 4, -200.0), // Al2O3–K2O
    (2, 7, 150.0),  // B2O3–ZnO
];

pub const NOISE_STD: f64 = 5.0;
pub const SAMPLE_COUNT: usize = 4000;
pub const DATA_SEED: u64 = 20_240_611;

/// Target band; holds about a fifth of the default dataset.
pub const BAND: (f64, f64) = (510.0, 565.0);

pub fn schema() -> ComponentSchema {
    ComponentSchema::new(COMPONENTS).expect("static component names are valid")
}

pub fn band() -> TgBand {
    TgBand::new(BAND.0, BAND.1).expect("static band is valid")
}

/// Noise-free Tg of a composition.
pub fn tg_mean(x: &[f64]) -> f64 {
    let linear: f64 = x.iter().zip(LINEAR).map(|(v, w)| v * w).sum();
    let pairs: f64 = PAIRWISE.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum();
    linear + pairs
}

fn composition(rng: &mut SeededRng) -> Vec<f64> {
    let n = COMPONENTS.len();
    let active = 3 + rng.below(4);
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut x = vec![0.0; n];
    for &i in &idx[..active] {
        // Exp(1) draws give a flat Dirichlet after normalization
        x[i] = -(1.0 - rng.uniform()).ln();
    }
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    x
}

/// `count` labelled compositions, deterministic in `seed`.
pub fn generate(count: usize, seed: u64) -> Vec<RawSample> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let fractions = composition(&mut rng);
            let tg = tg_mean(&fractions) + gaussian(&mut rng, 0.0, NOISE_STD);
            RawSample { fractions, tg: Some(tg) }
        })
        .collect()
}

/// The default dataset used by the end-to-end checks.
pub fn default_dataset() -> Result<(ComponentSchema, Vec<RawSample>)> {
    Ok((schema(), generate(SAMPLE_COUNT, DATA_SEED)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_are_sparse_simplex_points() {
        for s in generate(500, 1) {
            let sum: f64 = s.fractions.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let nz = s.fractions.iter().filter(|&&v| v > 0.0).count();
            assert!((3..=6).contains(&nz));
            assert!(s.fractions.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn pure_components_follow_linear_terms() {
        for i in 0..8 {
            let mut x = vec![0.0; 8];
            x[i] = 1.0;
            assert_eq!(tg_mean(&x), LINEAR[i]);
        }
        let mut x = vec![0.0; 8];
        x[0] = 0.5;
        x[1] = 0.5;
        assert_eq!(tg_mean(&x), 350.0 + 400.0 + 75.0);
    }

    #[test]
    fn band_holds_about_a_fifth() {
        let (_, data) = default_dataset().unwrap();
        let b = band();
        let inside = data.iter().filter(|s| b.contains(s.tg.unwrap())).count();
        let frac = inside as f64 / data.len() as f64;
        assert!((0.15..=0.25).contains(&frac), "{frac}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(50, 3), generate(50, 3));
        assert_ne!(generate(50, 3), generate(50, 4));
    }
}
