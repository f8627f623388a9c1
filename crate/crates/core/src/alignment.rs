//! Pseudo channels from retrieved path features, and power normalization.
//!
//! A pseudo channel keeps only what the geometry and the system layout
//! determine (spreading loss, subcarrier phase ramp, array phase) and fills
//! the rest of each path's response with a random placeholder
//! `z ~ CN(0, sigma_z^2)`, i.e. total complex variance `sigma_z^2` split evenly
//! between the real and imaginary parts.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{accumulate_path, ChannelMatrix, PartialChannel, SystemConfig};
use crate::error::{Error, Result};
use crate::feature_store::FeaturePath;
use crate::geom::v3;

/// Placeholder standard deviation used in the reference experiments.
pub const DEFAULT_SIGMA_Z: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoChannel {
    pub entries: Array2<Complex64>,
    pub source_grid_index: Option<usize>,
    pub placeholder_seed: u64,
}

impl PseudoChannel {
    pub fn with_source(mut self, index: usize) -> Self {
        self.source_grid_index = Some(index);
        self
    }
}

/// Builds a pseudo channel with placeholders drawn from a seeded generator.
pub fn build_pseudo_channel(
    features: &[FeaturePath],
    cfg: &SystemConfig,
    sigma_z: f64,
    seed: u64,
) -> PseudoChannel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = sigma_z / std::f64::consts::SQRT_2;
    let entries = pseudo_entries(features, cfg, |_| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im) * scale
    });
    PseudoChannel {
        entries,
        source_grid_index: None,
        placeholder_seed: seed,
    }
}

/// Pseudo-channel entries with caller-supplied placeholders, one per path.
pub fn pseudo_entries(
    features: &[FeaturePath],
    cfg: &SystemConfig,
    mut placeholder: impl FnMut(usize) -> Complex64,
) -> Array2<Complex64> {
    let mut h = Array2::zeros(cfg.shape());
    for (p, f) in features.iter().enumerate() {
        let gain = placeholder(p) * cfg.spreading_gain(f.length_m);
        accumulate_path(&mut h, gain, cfg, f.length_m, v3(f.depart_dir));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationState {
    /// Mean per-entry power of the partial channel.
    pub power: f64,
}

impl NormalizationState {
    pub fn from_partial(hp: &PartialChannel) -> Result<Self> {
        let n = hp.entries.len() as f64;
        let power = hp.power() / n;
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::OutageSample);
        }
        Ok(Self { power })
    }

    pub fn scale(&self) -> f64 {
        self.power.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBundle {
    pub full: Option<ChannelMatrix>,
    pub partial: PartialChannel,
    pub pseudos: Vec<Array2<Complex64>>,
}

/// Divides every matrix by the RMS amplitude of the partial channel.
pub fn normalize_bundle(
    h_full: Option<&ChannelMatrix>,
    h_partial: &PartialChannel,
    pseudos: &[PseudoChannel],
) -> Result<(NormalizedBundle, NormalizationState)> {
    let state = NormalizationState::from_partial(h_partial)?;
    let s = state.scale();
    let bundle = NormalizedBundle {
        full: h_full.map(|h| ChannelMatrix(h.0.mapv(|c| c / s))),
        partial: PartialChannel {
            entries: h_partial.entries.mapv(|c| c / s),
            ..h_partial.clone()
        },
        pseudos: pseudos.iter().map(|p| p.entries.mapv(|c| c / s)).collect(),
    };
    Ok((bundle, state))
}

/// Restores the original scale of a normalized estimate.
pub fn denormalize(h: &ChannelMatrix, state: &NormalizationState) -> ChannelMatrix {
    let s = state.scale();
    ChannelMatrix(h.0.mapv(|c| c * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::SPEED_OF_LIGHT;
    use std::f64::consts::PI;

    fn one_path() -> Vec<FeaturePath> {
        vec![FeaturePath {
            length_m: 73.0,
            depart_dir: [0.48, 0.6, -0.64],
        }]
    }

    fn partial(v: Complex64) -> PartialChannel {
        PartialChannel {
            entries: Array2::from_elem((4, 16), v),
            omega_t: vec![0, 4, 8, 12],
            omega_c: (0..256).step_by(16).collect(),
        }
    }

    #[test]
    fn empty_features_give_zero() {
        let cfg = SystemConfig::desk();
        let p = build_pseudo_channel(&[], &cfg, 0.5, 1);
        assert!(p.entries.iter().all(|c| *c == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn unit_placeholder_closed_form() {
        let cfg = SystemConfig::desk();
        let f = one_path();
        let h = pseudo_entries(&f, &cfg, |_| Complex64::new(1.0, 0.0));
        let amp = cfg.wavelength() / (4.0 * PI * 73.0);
        let tau = 73.0 / SPEED_OF_LIGHT;
        let ramp = Complex64::from_polar(1.0, -2.0 * PI * cfg.subcarrier_spacing() * tau);
        for n in 0..8 {
            for m in 0..32 {
                assert!((h[[n, m]].norm() - amp).abs() / amp < 1e-12);
                if m + 1 < 32 {
                    let r = h[[n, m + 1]] / h[[n, m]];
                    assert!((r - ramp).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn placeholder_second_moment() {
        let cfg = SystemConfig::desk();
        let f = one_path();
        let amp2 = (cfg.wavelength() / (4.0 * PI * 73.0)).powi(2);
        let draws = 10_000;
        let mut acc = 0.0;
        for seed in 0..draws {
            acc += build_pseudo_channel(&f, &cfg, 0.5, seed).entries[[3, 7]].norm_sqr();
        }
        let m2 = acc / draws as f64;
        assert!((m2 / (0.25 * amp2) - 1.0).abs() < 0.03, "ratio {}", m2 / (0.25 * amp2));
    }

    #[test]
    fn seeds_change_draws() {
        let cfg = SystemConfig::desk();
        let a = build_pseudo_channel(&one_path(), &cfg, 0.5, 1);
        let b = build_pseudo_channel(&one_path(), &cfg, 0.5, 2);
        assert_ne!(a.entries, b.entries);
        assert_eq!(a, build_pseudo_channel(&one_path(), &cfg, 0.5, 1));
    }

    #[test]
    fn unit_and_double_power() {
        let one = partial(Complex64::new(1.0, 0.0));
        let full = ChannelMatrix(Array2::from_elem((16, 256), Complex64::new(0.5, -2.0)));
        let (b, st) = normalize_bundle(Some(&full), &one, &[]).unwrap();
        assert_eq!(st.power, 1.0);
        assert_eq!(b.partial.entries, one.entries);
        assert_eq!(b.full.unwrap(), full);

        let two = partial(Complex64::new(2.0, 0.0));
        let (b, st) = normalize_bundle(Some(&full), &two, &[]).unwrap();
        assert_eq!(st.power, 4.0);
        assert!(b.partial.entries.iter().all(|c| *c == Complex64::new(1.0, 0.0)));
        assert_eq!(b.full.unwrap(), ChannelMatrix(full.0.mapv(|c| c / 2.0)));
    }

    #[test]
    fn zero_partial_is_outage() {
        assert!(matches!(
            normalize_bundle(None, &partial(Complex64::new(0.0, 0.0)), &[]),
            Err(Error::OutageSample)
        ));
    }

    #[test]
    fn denormalize_cases() {
        let st = NormalizationState { power: 4.0 };
        let ones = ChannelMatrix(Array2::from_elem((2, 3), Complex64::new(1.0, 0.0)));
        assert!(denormalize(&ones, &st).0.iter().all(|c| *c == Complex64::new(2.0, 0.0)));
        let z = ChannelMatrix::zeros((2, 3));
        assert_eq!(denormalize(&z, &st), z);
    }
}
