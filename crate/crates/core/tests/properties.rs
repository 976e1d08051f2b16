use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rankone_core::linalg::{self, CMatrix, CVector, C64};
use rankone_core::model::{self, CorrelationMode, PilotKind, SystemConfig, UserPaths};
use rankone_core::{fastpath, rank1, rng, EstimatorOptions, NystromWeight, Refinement};

/// Well-separated angles: sines spaced at least `4/M` apart.
fn separated(m: usize, p: usize) -> impl Strategy<Value = Vec<f64>> {
    let slot = 1.8 / p as f64;
    prop::collection::vec(0.0f64..1.0, p).prop_map(move |u| {
        u.iter()
            .enumerate()
            .map(|(i, x)| {
                let lo = -0.9 + i as f64 * slot;
                let width = (slot - 4.0 / m as f64).max(0.0);
                (lo + x * width).asin()
            })
            .collect()
    })
}

fn gains(p: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((0.3f64..1.5, 0.0f64..2.0 * PI), p)
        .prop_map(|v| v.into_iter().map(|(r, a)| C64::from_polar(r, a)).collect())
}

fn user(m: usize, p: usize) -> impl Strategy<Value = CVector> {
    (separated(m, p), gains(p))
        .prop_map(move |(thetas, gains)| UserPaths { thetas, gains }.channel(m, 0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_entries_unit_modulus(theta in -FRAC_PI_2..FRAC_PI_2, m in 1usize..300) {
        let a = model::steering_vector(theta, m, 0.5);
        prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        prop_assert!((a.norm_squared() - m as f64).abs() <= 1e-9 * m as f64);
    }

    #[test]
    fn drawn_channels_meet_gap(seed in any::<u64>(), p in 1usize..6) {
        let cfg = SystemConfig::new(128, 2, p);
        let ch = model::draw_channel(&cfg, &mut rng::stream(seed, &[]), CorrelationMode::FullRank)
            .unwrap();
        let gap = model::required_gap(&cfg).unwrap();
        for u in &ch.users {
            prop_assert!(u.min_gap() >= gap);
            prop_assert!(model::min_frequency_gap(&u.thetas, 0.5) >= gap);
            prop_assert!(u.thetas.iter().all(|t| (-FRAC_PI_2..FRAC_PI_2).contains(t)));
        }
    }

    #[test]
    fn transmit_despread_linear(seed in any::<u64>()) {
        let cfg = SystemConfig::new(16, 3, 2);
        let mut r = rng::stream(seed, &[]);
        let pilots = model::draw_pilots(&cfg, &mut r, PilotKind::RandomGaussian).unwrap();
        let h1 = rng::complex_gaussian_matrix(&mut r, 16, 3, 1.0);
        let h2 = rng::complex_gaussian_matrix(&mut r, 16, 3, 1.0);
        let rx = |h: &CMatrix| model::transmit(h, &pilots, 0.0, &mut rng::stream(0, &[])).unwrap();
        let sum = rx(&(&h1 + &h2));
        for k in 0..3 {
            let x = pilots.column(k);
            let lhs = model::despread(&sum, &x).unwrap();
            let rhs = model::despread(&rx(&h1), &x).unwrap() + model::despread(&rx(&h2), &x).unwrap();
            prop_assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn hankel_index_rule(m in 2usize..24, l_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let l = 1 + ((m - 1) as f64 * l_frac) as usize;
        let l = l.min(m - 1);
        let y = rng::complex_gaussian_vector(&mut rng::stream(seed, &[]), m, 1.0);
        let h = rank1::build_hankel(&y, l).unwrap();
        let dense = h.to_matrix();
        prop_assert_eq!(dense.shape(), (l, m - l));
        for i in 0..l {
            for j in 0..m - l {
                prop_assert_eq!(dense[(i, j)], y[i + j]);
                prop_assert_eq!(h.entry(i, j), y[i + j]);
            }
        }
    }

    #[test]
    fn square_hankel_is_symmetric(half in 1usize..32, seed in any::<u64>()) {
        let y = rng::complex_gaussian_vector(&mut rng::stream(seed, &[]), 2 * half, 1.0);
        let h = rank1::build_hankel(&y, half).unwrap();
        prop_assert!(h.is_square());
        let dense = h.to_matrix();
        prop_assert_eq!(dense.transpose(), dense);
    }

    #[test]
    fn noiseless_rank_equals_path_count((p, y) in (1usize..5).prop_flat_map(|p| (Just(p), user(64, p)))) {
        let h = rank1::build_hankel(&y, 32).unwrap().to_matrix();
        let s = linalg::singular_values(h).unwrap();
        prop_assert_eq!(linalg::numerical_rank(&s, 1e-8), p);
    }

    #[test]
    fn projector_is_idempotent(y in user(64, 3), noise in any::<u64>()) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 64, 0.01);
        let h = rank1::build_hankel(&y, 32).unwrap();
        let u = rank1::signal_subspace(&h, 3).unwrap().u;
        let proj = &u * u.adjoint();
        prop_assert!((&proj * &proj - &proj).norm() <= 1e-8);
    }

    #[test]
    fn denominator_within_bounds(y in user(64, 3), noise in any::<u64>()) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 64, 0.1);
        let mut cfg = SystemConfig::new(64, 1, 3);
        cfg.grid_size = 512;
        let h = rank1::build_hankel(&y, 32).unwrap();
        let u = rank1::signal_subspace(&h, 3).unwrap().u;
        let spec = rank1::pseudo_spectrum(&u, &cfg);
        for v in spec.values {
            prop_assert!(v > 0.0);
            prop_assert!(1.0 / v <= 32.0 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn phase_equivariance(y in user(64, 3), noise in any::<u64>(), phi in 0.0f64..2.0 * PI) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 64, 0.01);
        let cfg = SystemConfig::new(64, 1, 3);
        let opts = EstimatorOptions::default();
        let rot = C64::from_polar(1.0, phi);
        let (a, _) = rank1::estimate_single_user(&y, &cfg, &opts).unwrap();
        let (b, _) = rank1::estimate_single_user(&(&y * rot), &cfg, &opts).unwrap();
        for (ta, tb) in a.thetas.iter().zip(&b.thetas) {
            prop_assert!((ta - tb).abs() <= 1e-9);
        }
        for (ga, gb) in a.gains.iter().zip(&b.gains) {
            prop_assert!((ga * rot - gb).norm() <= 1e-6 * ga.norm().max(1.0));
        }
    }

    #[test]
    fn scaling_equivariance(y in user(64, 3), noise in any::<u64>(), scale in 0.01f64..100.0) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 64, 0.01);
        let cfg = SystemConfig::new(64, 1, 3);
        let peaks = |y: &CVector| {
            let h = rank1::build_hankel(y, 32).unwrap();
            let u = rank1::signal_subspace(&h, 3).unwrap().u;
            let mut idx = rank1::aoas_from_subspace(&u, &cfg, Refinement::None).unwrap().grid_indices;
            idx.sort_unstable();
            idx
        };
        let scaled = &y * C64::new(scale, 0.0);
        prop_assert_eq!(peaks(&y), peaks(&scaled));
        let opts = EstimatorOptions::default();
        let (a, _) = rank1::estimate_single_user(&y, &cfg, &opts).unwrap();
        let (b, _) = rank1::estimate_single_user(&scaled, &cfg, &opts).unwrap();
        for (ga, gb) in a.gains.iter().zip(&b.gains) {
            prop_assert!((ga * scale - gb).norm() <= 1e-6 * (ga * scale).norm().max(1.0));
        }
    }

    #[test]
    fn sketch_basis_is_orthonormal(y in user(128, 3), noise in any::<u64>(), s in 3usize..20) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 128, 0.01);
        let h = rank1::build_hankel(&y, 64).unwrap();
        let sub = fastpath::sketch_subspace(
            &h,
            3,
            s,
            &EstimatorOptions::default(),
            &mut rng::stream(noise, &[1]),
        )
        .unwrap();
        prop_assert!(linalg::gram_deviation(&sub.u) <= 1e-10);
    }

    #[test]
    fn full_sampling_recovers_exact_subspace(y in user(48, 3), noise in any::<u64>()) {
        let y = y + rng::complex_gaussian_vector(&mut rng::stream(noise, &[]), 48, 0.01);
        let h = rank1::build_hankel(&y, 24).unwrap();
        let exact = rank1::signal_subspace(&h, 3).unwrap().u;
        for weight in [NystromWeight::Sketched, NystromWeight::Exact] {
            let opts = EstimatorOptions { nystrom_weight: weight, ..Default::default() };
            let sub = fastpath::sketch_subspace(&h, 3, 24, &opts, &mut rng::stream(noise, &[1])).unwrap();
            let d = linalg::projector_distance(&sub.u, &exact);
            prop_assert!(d <= 1e-8, "{:?}: {}", weight, d);
        }
    }
}
