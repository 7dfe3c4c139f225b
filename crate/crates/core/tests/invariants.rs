//! Property tests over the public API.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use cdlsr::imaging::{build_training_batch, degrade, BatchSpec, Image};
use cdlsr::learning::solve_hr_dictionaries;
use cdlsr::metrics::{atom_recovery_ratio, ssim, RecoveryThreshold};
use cdlsr::model::CoupledDictionarySet;
use cdlsr::rng::{gaussian_matrix, normalize_columns, seeded, SeededRng};
use cdlsr::sr::{super_resolve_image, SrConfig};
use cdlsr::synth::{gen_paired_images, gen_ground_truth, synthesize, Sparsities, SynthConfig};

fn unit_dict(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let mut d = gaussian_matrix(rows, cols, rng);
    normalize_columns(&mut d);
    d
}

fn random_image(w: usize, h: usize, rng: &mut SeededRng) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn square_set(side: usize, k: usize, rng: &mut SeededRng) -> CoupledDictionarySet {
    let n = side * side;
    let mut d = || unit_dict(n, k, rng);
    CoupledDictionarySet::new(d(), d(), d(), d(), d(), d()).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn recovery_ignores_order_and_sign(seed in 0u64..10_000, k in 2usize..24, jitter in 0.0f64..0.02) {
        let mut rng = seeded(seed);
        let truth = unit_dict(10, k, &mut rng);
        let noisy = &truth + gaussian_matrix(10, k, &mut rng) * (jitter / 10f64.sqrt());
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let shuffled = DMatrix::from_fn(10, k, |r, c| {
            let sign = if (seed >> (c % 60)) & 1 == 1 { -1.0 } else { 1.0 };
            sign * noisy[(r, order[c])]
        });
        let th = RecoveryThreshold::default();
        let a = atom_recovery_ratio(&truth, &noisy, th).unwrap();
        let b = atom_recovery_ratio(&truth, &shuffled, th).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(atom_recovery_ratio(&truth, &truth, th).unwrap(), 1.0);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..10_000, w in 11usize..20, h in 11usize..20) {
        let mut rng = seeded(seed);
        let a = random_image(w, h, &mut rng);
        let b = random_image(w, h, &mut rng);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hr_solve_is_stationary(seed in 0u64..10_000, k in 1usize..10, t in 1usize..40, lambda in 1e-4f64..1.0) {
        let mut rng = seeded(seed);
        let z = gaussian_matrix(k, t, &mut rng);
        let u = gaussian_matrix(k, t, &mut rng);
        let x = gaussian_matrix(9, t, &mut rng);
        let (dc, du) = solve_hr_dictionaries(&x, &z, &u, lambda).unwrap();
        let mut gamma = DMatrix::zeros(2 * k, t);
        gamma.rows_mut(0, k).copy_from(&z);
        gamma.rows_mut(k, k).copy_from(&u);
        let mut d = DMatrix::zeros(9, 2 * k);
        d.columns_mut(0, k).copy_from(&dc);
        d.columns_mut(k, k).copy_from(&du);
        let grad = (&d * &gamma - &x) * gamma.transpose() + &d * lambda;
        prop_assert!(grad.norm() <= 1e-8 * x.norm().max(1.0), "{}", grad.norm());
    }

    #[test]
    fn lr_signals_are_selected_hr_rows(seed in 0u64..10_000, m in 1usize..12) {
        let cfg = SynthConfig {
            n: 12,
            m,
            k: 8,
            t: 30,
            sparsities: Sparsities::new(2, 1, 1),
            input_snr_db: None,
            trials: 1,
            seed,
        };
        let gt = gen_ground_truth(&cfg).unwrap();
        let batch = synthesize(&gt).unwrap();
        prop_assert_eq!(&gt.selector.apply(&batch.x_h), &batch.x_l);
    }

    #[test]
    fn dc_shift_passes_through(seed in 0u64..10_000, shift in -0.25f64..0.25, stride in 1usize..=4) {
        let mut rng = seeded(seed);
        let dset = square_set(4, 6, &mut rng);
        // mid-range content, so resizing never hits the [0,1] clamp
        let hr = random_image(12, 12, &mut rng).map(|v| 0.4 + 0.2 * v).unwrap();
        let guide = random_image(12, 12, &mut rng);
        let lr = degrade(&hr, 2).unwrap();
        let cfg = SrConfig { scale: 2, patch_side: 4, stride, sparsity: 3, ..SrConfig::default() };
        let base = super_resolve_image(&lr, &guide, &dset, &cfg).unwrap();
        let moved = super_resolve_image(
            &lr.map(|v| v + shift).unwrap(),
            &guide.map(|v| v + shift).unwrap(),
            &dset,
            &cfg,
        )
        .unwrap();
        for (a, b) in base.pixels().iter().zip(moved.pixels()) {
            prop_assert!((b - a - shift).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn training_patches_have_zero_mean(seed in 0u64..1000, stride in 1usize..4) {
        let (hr, guide) = gen_paired_images(64, 64, seed).unwrap();
        let lr = degrade(&hr, 2).unwrap();
        let spec = BatchSpec {
            patch_side: 4,
            scale: 2,
            stride,
            variance_threshold: 0.0,
            max_t: 500,
            seed,
        };
        let batch = build_training_batch(&[lr], &[hr], &[guide], &spec).unwrap();
        prop_assert!(batch.x_h.ncols() > 0);
        for m in [&batch.x_l, &batch.x_h, &batch.y] {
            for col in m.column_iter() {
                prop_assert!(col.mean().abs() <= 1e-12);
            }
        }
    }
}
