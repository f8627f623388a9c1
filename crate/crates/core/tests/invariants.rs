use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;

use gcd::alignment::{build_pseudo_channel, denormalize, normalize_bundle};
use gcd::channel::{nmse, ChannelMatrix, PartialChannel, SystemConfig};
use gcd::dataset::derive_seed;
use gcd::feature_store::FeaturePath;
use gcd::harness::{percentile, Summary};
use gcd::net::{loss, CMat};

fn cmat(v: &[f64], r: usize, c: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((r, c), |(i, j)| Complex64::new(v[2 * (i * c + j)], v[2 * (i * c + j) + 1]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_pilots_have_unit_power(
        v in proptest::collection::vec(-1.0..1.0f64, 32),
        exp in -8i32..8,
    ) {
        let e = cmat(&v, 2, 8).mapv(|x| x * 10f64.powi(exp));
        prop_assume!(e.iter().any(|x| x.norm() > 0.0));
        let hp = PartialChannel { entries: e, omega_t: vec![0, 4], omega_c: (0..8).map(|i| 4 * i).collect() };
        let (b, st) = normalize_bundle(None, &hp, &[]).unwrap();
        let p = b.partial.power() / 16.0;
        prop_assert!((p - 1.0).abs() < 1e-12);
        let back = denormalize(&ChannelMatrix(b.partial.entries.clone()), &st);
        for (a, o) in back.0.iter().zip(hp.entries.iter()) {
            prop_assert!((a - o).norm() <= 1e-15 * o.norm().max(st.scale()));
        }
    }

    #[test]
    fn pseudo_channels_scale_inversely_with_the_pilots(
        v in proptest::collection::vec(-1.0..1.0f64, 32),
        c in 1e-3..1e3f64,
        len in 20.0..300.0f64,
    ) {
        let cfg = SystemConfig::desk();
        let e = cmat(&v, 2, 8);
        prop_assume!(e.iter().any(|x| x.norm() > 1e-3));
        let hp = PartialChannel { entries: e.clone(), omega_t: cfg.omega_t.clone(), omega_c: cfg.omega_c.clone() };
        let hc = PartialChannel { entries: e.mapv(|x| x * c), ..hp.clone() };
        let ps = vec![build_pseudo_channel(&[FeaturePath { length_m: len, depart_dir: [0.6, 0.8, 0.0] }], &cfg, 0.5, 1)];
        let (a, _) = normalize_bundle(None, &hp, &ps).unwrap();
        let (b, _) = normalize_bundle(None, &hc, &ps).unwrap();
        for (x, y) in a.partial.entries.iter().zip(b.partial.entries.iter()) {
            prop_assert!((x - y).norm() <= 4.0 * f64::EPSILON * x.norm().max(1.0));
        }
        for (x, y) in a.pseudos[0].iter().zip(b.pseudos[0].iter()) {
            prop_assert!((x / c - y).norm() <= 4.0 * f64::EPSILON * y.norm());
        }
    }

    #[test]
    fn loss_is_quadratically_homogeneous(
        a in proptest::collection::vec(-1.0..1.0f64, 16),
        b in proptest::collection::vec(-1.0..1.0f64, 16),
        c in 0.01..100.0f64,
    ) {
        let x = CMat::from_complex(&cmat(&a, 2, 4));
        let y = CMat::from_complex(&cmat(&b, 2, 4));
        let l = loss(&x, &y);
        prop_assert!(l >= 0.0);
        prop_assert!((loss(&x.scaled(c), &y.scaled(c)) - c * c * l).abs() <= 1e-12 * c * c * l.max(1e-300));
        prop_assert_eq!(loss(&x, &x), 0.0);
    }

    #[test]
    fn nmse_ignores_common_scaling(
        a in proptest::collection::vec(-1.0..1.0f64, 16),
        b in proptest::collection::vec(-1.0..1.0f64, 16),
        c in 0.01..100.0f64,
    ) {
        let t = ChannelMatrix(cmat(&a, 2, 4));
        let e = ChannelMatrix(cmat(&b, 2, 4));
        prop_assume!(t.power() > 1e-6);
        let base = nmse(&t, &e).unwrap();
        let scaled = nmse(&t.scaled(c), &e.scaled(c)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1e-12));
    }

    #[test]
    fn derived_seeds_differ_across_streams(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, j));
        prop_assert_eq!(derive_seed(seed, i), derive_seed(seed, i));
    }

    #[test]
    fn summaries_are_ordered(v in proptest::collection::vec(1e-6..10.0f64, 1..200)) {
        let s = Summary::of(&v);
        prop_assert!(s.p10 <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.p90);
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(percentile(&sorted, 0.0) <= percentile(&sorted, 1.0));
    }
}
