use nalgebra::DMatrix;

use super::*;
use crate::learning::CodeBatch;
use crate::metrics::{atom_recovery_ratio, RecoveryThreshold};
use crate::model::{JointSparseCode, SparseVec, TrainConfig};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n: 12,
        m: 5,
        k: 7,
        t: 40,
        sparsities: Sparsities::new(2, 1, 1),
        input_snr_db: None,
        trials: 2,
        seed,
    }
}

#[test]
fn ground_truth_follows_the_generative_rules() {
    let cfg = small(1);
    let gt = gen_ground_truth(&cfg).unwrap();
    let d = &gt.dset;
    for mat in [&d.psi_c_h, &d.psi_h, &d.phi_c, &d.phi] {
        for col in mat.column_iter() {
            assert!((col.norm() - 1.0).abs() <= 1e-12);
        }
    }
    let a = gt.subsample_matrix();
    assert_eq!(&a * &d.psi_c_h, d.psi_c_l);
    assert_eq!(&a * &d.psi_h, d.psi_l);
    assert_eq!(gt.selector.rows.len(), 5);
    assert!(gt.selector.rows.windows(2).all(|w| w[0] < w[1]));
    for code in &gt.codes.codes {
        assert_eq!((code.z.nnz(), code.u.nnz(), code.v.nnz()), (2, 1, 1));
    }
}

#[test]
fn infeasible_configs_are_rejected() {
    let too_sparse = SynthConfig {
        sparsities: Sparsities::new(8, 0, 0),
        ..small(0)
    };
    assert!(gen_ground_truth(&too_sparse).is_err());
    let m_too_big = SynthConfig { m: 12, ..small(0) };
    assert!(m_too_big.validate().is_err());
    let total_too_big = SynthConfig {
        n: 3,
        m: 2,
        sparsities: Sparsities::new(2, 2, 2),
        ..small(0)
    };
    assert!(total_too_big.validate().is_err());
}

#[test]
fn synthesis_matches_hand_products() {
    // K = 4, M = 2, N = 3
    let psi_c_h = DMatrix::from_row_slice(3, 4, &[1., 0., 2., 0., 0., 1., 0., 1., 1., 1., 0., 0.]);
    let psi_h = DMatrix::from_row_slice(3, 4, &[0., 1., 0., 0., 1., 0., 0., 2., 0., 0., 1., 0.]);
    let phi_c = DMatrix::from_row_slice(3, 4, &[1., 1., 1., 1., 0., 0., 1., 0., 0., 1., 0., 0.]);
    let phi = DMatrix::from_row_slice(3, 4, &[0., 0., 0., 1., 1., 0., 0., 0., 0., 1., 0., 0.]);
    let rows = [0, 2];
    let dset = crate::model::CoupledDictionarySet::new(
        psi_c_h.select_rows(&rows),
        psi_h.select_rows(&rows),
        psi_c_h,
        psi_h,
        phi_c,
        phi,
    )
    .unwrap();
    let sv = |entries: &[(usize, f64)]| SparseVec {
        len: 4,
        entries: entries.to_vec(),
    };
    let codes = CodeBatch {
        k: 4,
        codes: vec![JointSparseCode {
            z: sv(&[(0, 2.0), (2, -1.0)]),
            u: sv(&[(3, 0.5)]),
            v: sv(&[(1, 3.0)]),
        }],
    };
    let batch = synthesize_from(&dset, &codes).unwrap();
    // x_h = 2*[1,0,1] - [2,0,0] + 0.5*[0,2,0] = [0, 1, 2]
    assert_eq!(batch.x_h.as_slice(), &[0.0, 1.0, 2.0]);
    assert_eq!(batch.x_l.as_slice(), &[0.0, 2.0]);
    // y = 2*[1,0,0] - [1,1,0] + 3*[0,0,1] = [1, -1, 3]
    assert_eq!(batch.y.as_slice(), &[1.0, -1.0, 3.0]);

    let zero = CodeBatch {
        k: 4,
        codes: vec![JointSparseCode::zeros(4); 3],
    };
    let z = synthesize_from(&dset, &zero).unwrap();
    assert!(z.x_l.iter().chain(z.x_h.iter()).chain(z.y.iter()).all(|&v| v == 0.0));
}

#[test]
fn lr_data_is_a_row_subset_of_hr_data() {
    let gt = gen_ground_truth(&small(2)).unwrap();
    let batch = synthesize(&gt).unwrap();
    let a = gt.subsample_matrix();
    let diff = &a * &batch.x_h - &batch.x_l;
    assert!(diff.amax() <= 1e-12);
}

#[test]
fn awgn_hits_the_requested_snr() {
    let gt = gen_ground_truth(&SynthConfig {
        t: 10_000,
        ..small(3)
    })
    .unwrap();
    let clean = synthesize(&gt).unwrap().x_h;
    for snr in [-2.0, 5.0, 16.0] {
        let noisy = add_awgn(&clean, snr, 9).unwrap();
        let noise = &noisy - &clean;
        let realized = 10.0 * (clean.norm_squared() / noise.norm_squared()).log10();
        assert!((realized - snr).abs() <= 0.2, "{snr} dB gave {realized}");
    }
    assert_eq!(add_awgn(&clean, f64::INFINITY, 1).unwrap(), clean);
    assert_eq!(add_awgn(&clean, 3.0, 4).unwrap(), add_awgn(&clean, 3.0, 4).unwrap());
    assert_ne!(add_awgn(&clean, 3.0, 4).unwrap(), add_awgn(&clean, 3.0, 5).unwrap());
    assert!(matches!(add_awgn(&DMatrix::zeros(2, 2), 3.0, 1), Err(Error::ZeroPower)));
    assert!(add_awgn(&clean, f64::NAN, 1).is_err());
}

#[test]
fn truth_recovers_itself() {
    let gt = gen_ground_truth(&small(4)).unwrap();
    let th = RecoveryThreshold::default();
    let r = compare_step1(&gt.dset, &gt.dset, atom_recovery_ratio, th).unwrap();
    assert_eq!(r.as_array(), [1.0; 4]);
}

#[test]
fn paired_images_share_regions_only() {
    let (a, b) = gen_paired_images(64, 72, 5).unwrap();
    let labels = region_labels(64, 72, 5);
    assert_eq!(a.dims(), (64, 72));
    for r in 0..72 {
        for c in 0..64 {
            let i = r * 64 + c;
            if c + 1 < 64 {
                let same = labels[i] == labels[i + 1];
                // a is constant inside a region and steps at every boundary
                assert_eq!(same, a.get(r, c) == a.get(r, c + 1));
                if !same {
                    assert_ne!(b.get(r, c), b.get(r, c + 1));
                }
            }
        }
    }
    assert_ne!(a.pixels(), b.pixels());
    let distinct = |img: &crate::imaging::Image| {
        let mut v: Vec<u64> = img.pixels().iter().map(|p| p.to_bits()).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    // texture gives b many more grey levels than the piecewise-constant a
    assert!(distinct(&b) > 4 * distinct(&a));
    assert_eq!(gen_paired_images(64, 72, 5).unwrap(), (a, b));
    assert!(gen_paired_images(63, 80, 5).is_err());
}

#[test]
fn report_sentinels_and_svg() {
    assert_eq!(number(f64::INFINITY), serde_json::json!("inf"));
    assert_eq!(number(f64::NEG_INFINITY), serde_json::json!("-inf"));
    assert_eq!(number(f64::NAN), serde_json::json!("nan"));
    assert_eq!(number(1.5), serde_json::json!(1.5));
    let svg = line_plot_svg(
        "t",
        "x",
        "y",
        &[Series {
            name: "a<b".into(),
            color: "red".into(),
            points: vec![(0.0, 1.0), (1.0, f64::INFINITY), (2.0, 3.0)],
        }],
    );
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("a&lt;b"));
}

fn tiny_train(k: usize, workers: usize) -> TrainConfig {
    TrainConfig {
        atoms: k,
        sparsity: 4,
        out_iter: 2,
        in_iter: 2,
        lambda: 1e-3,
        seed: 3,
        workers,
    }
}

#[test]
fn cdl_reports_are_identical_across_worker_counts() {
    let cfg = SynthConfig {
        t: 300,
        trials: 3,
        input_snr_db: Some(10.0),
        ..small(6)
    };
    let reports: Vec<String> = [1, 2, 8]
        .into_iter()
        .map(|w| run_cdl_recovery(&cfg, &tiny_train(7, w)).unwrap().to_json())
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
    let parsed: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(parsed["per_setting"].as_array().unwrap().len(), 3);
    assert_eq!(parsed["per_setting"][0]["metrics"]["rmse_x"].as_array().unwrap().len(), 8);
}

#[test]
fn cdl_rejects_mismatched_atom_count() {
    assert!(run_cdl_recovery(&small(7), &tiny_train(8, 1)).is_err());
}

#[test]
fn csr_sweep_with_true_dictionaries() {
    let opts = CsrOptions {
        synth: SynthConfig {
            n: 16,
            m: 6,
            k: 10,
            t: 50,
            sparsities: Sparsities::new(2, 1, 1),
            input_snr_db: None,
            trials: 1,
            seed: 8,
        },
        measurements: vec![4, 10, 16],
        test_trials: 30,
        noisy_snr_db: Some(5.0),
        source: CsrSource::GroundTruth,
        train_on_hr: true,
    };
    let train = tiny_train(10, 1);
    let (models, points) = run_csr_experiment(&opts, &train).unwrap();
    assert_eq!(points.len(), 3 * 2 * 2);
    let full = find_point(&points, 16, false, CsrArm::WithSideInfo).unwrap();
    assert!(full.mean_rmse <= 1e-10, "{full:?}");
    let noisy = find_point(&points, 16, true, CsrArm::WithSideInfo).unwrap();
    assert!(noisy.mean_rmse > full.mean_rmse);
    let (_, again) = run_csr_experiment(&opts, &TrainConfig { workers: 3, ..train.clone() }).unwrap();
    assert_eq!(points, again);
    let report = csr_report(&opts, &train, &models, &points);
    assert_eq!(report.per_setting.len(), points.len());
    let bad = CsrOptions {
        measurements: vec![17],
        ..opts
    };
    assert!(bad.validate().is_err());
}
