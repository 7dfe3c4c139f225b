use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::*;
use crate::model::validate;
use crate::rng::{gaussian_matrix, seeded};

fn sparse(len: usize, entries: &[(usize, f64)]) -> SparseVec {
    SparseVec {
        len,
        entries: entries.to_vec(),
    }
}

fn random_instance(seed: u64, m: usize, n: usize, k: usize, t: usize) -> (DMatrix<f64>, DMatrix<f64>, Step1Dictionaries) {
    let mut rng = seeded(seed);
    let dicts = Step1Dictionaries::random(m, n, k, &mut rng);
    let x = gaussian_matrix(m, t, &mut rng);
    let y = gaussian_matrix(n, t, &mut rng);
    (x, y, dicts)
}

/// `||X - Psi_c Z - Psi U||^2` and `||Y - Phi_c Z - Phi V||^2` from dense
/// code matrices.
fn branch_objectives(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: &Step1Dictionaries,
    codes: &CodeBatch,
) -> (f64, f64) {
    let z = codes.z_matrix();
    let u = codes.u_matrix();
    let v = codes.v_matrix();
    let ex = x - &d.psi_c_l * &z - &d.psi_l * &u;
    let ey = y - &d.phi_c * &z - &d.phi * &v;
    (ex.norm_squared(), ey.norm_squared())
}

fn stacked_norm(d: &Step1Dictionaries, k: usize) -> f64 {
    (d.psi_c_l.column(k).norm_squared() + d.phi_c.column(k).norm_squared()).sqrt()
}

#[test]
fn init_has_unit_atoms() {
    let mut rng = seeded(4);
    let d = Step1Dictionaries::random(5, 9, 7, &mut rng);
    for k in 0..7 {
        assert!((stacked_norm(&d, k) - 1.0).abs() < 1e-12);
        assert!((d.psi_l.column(k).norm() - 1.0).abs() < 1e-12);
        assert!((d.phi.column(k).norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn common_rank_one_case_is_exact() {
    let x = DMatrix::from_column_slice(2, 1, &[-3.0, 1.0]);
    let y = DMatrix::from_column_slice(3, 1, &[2.0, 0.5, -1.0]);
    let mut rng = seeded(2);
    let mut d = Step1Dictionaries::random(2, 3, 1, &mut rng);
    let mut codes = CodeBatch {
        k: 1,
        codes: vec![JointSparseCode {
            z: sparse(1, &[(0, 1.0)]),
            u: SparseVec::zeros(1),
            v: SparseVec::zeros(1),
        }],
    };
    update_common_dictionaries(&x, &y, &mut d, &mut codes).unwrap();
    let signal = [-3.0, 1.0, 2.0, 0.5, -1.0];
    let norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
    // first entry must be positive, so the atom is -signal/|signal|
    let atom: Vec<f64> = d.psi_c_l.iter().chain(d.phi_c.iter()).copied().collect();
    for (a, s) in atom.iter().zip(signal) {
        assert!((a + s / norm).abs() < 1e-12);
    }
    assert!((codes.codes[0].z.entries[0].1 + norm).abs() < 1e-12);
    let (ox, oy) = branch_objectives(&x, &y, &d, &codes);
    assert!(ox + oy < 1e-20);
}

#[test]
fn unique_rank_one_case_is_exact() {
    let x = DMatrix::from_column_slice(3, 1, &[0.0, 2.0, -1.0]);
    let y = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
    let mut rng = seeded(3);
    let mut d = Step1Dictionaries::random(3, 3, 1, &mut rng);
    let mut codes = CodeBatch {
        k: 1,
        codes: vec![JointSparseCode {
            z: SparseVec::zeros(1),
            u: sparse(1, &[(0, 0.5)]),
            v: SparseVec::zeros(1),
        }],
    };
    update_unique_dictionaries(&x, &y, &mut d, &mut codes).unwrap();
    let norm = 5f64.sqrt();
    assert!((d.psi_l[(0, 0)]).abs() < 1e-15);
    assert!((d.psi_l[(1, 0)] - 2.0 / norm).abs() < 1e-12);
    assert!((d.psi_l[(2, 0)] + 1.0 / norm).abs() < 1e-12);
    assert!((codes.codes[0].u.entries[0].1 - norm).abs() < 1e-12);
}

#[test]
fn unused_atom_takes_worst_residual() {
    // atom 1 unused; sample 2 has the largest residual, sample 0 is exact
    let mut rng = seeded(7);
    let mut d = Step1Dictionaries::random(3, 4, 2, &mut rng);
    let mut x = DMatrix::zeros(3, 3);
    let mut y = DMatrix::zeros(4, 3);
    x.column_mut(0).copy_from(&(d.psi_c_l.column(0) * 2.0));
    y.column_mut(0).copy_from(&(d.phi_c.column(0) * 2.0));
    x.column_mut(1).copy_from_slice(&[0.1, 0.0, 0.0]);
    x.column_mut(2).copy_from_slice(&[0.0, 3.0, 0.0]);
    y.column_mut(2).copy_from_slice(&[0.0, 0.0, 4.0, 0.0]);
    let mut codes = CodeBatch {
        k: 2,
        codes: vec![
            JointSparseCode {
                z: sparse(2, &[(0, 2.0)]),
                u: SparseVec::zeros(2),
                v: SparseVec::zeros(2),
            },
            JointSparseCode::zeros(2),
            JointSparseCode::zeros(2),
        ],
    };
    update_common_dictionaries(&x, &y, &mut d, &mut codes).unwrap();
    let expected = [0.0, 0.6, 0.0, 0.0, 0.0, 0.8, 0.0];
    let atom: Vec<f64> = d.psi_c_l.column(1).iter().chain(d.phi_c.column(1).iter()).copied().collect();
    for (a, e) in atom.iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{atom:?}");
    }
}

#[test]
fn unused_atoms_claim_distinct_samples() {
    let (x, y, mut d) = random_instance(5, 4, 5, 3, 6);
    let mut codes = CodeBatch {
        k: 3,
        codes: vec![JointSparseCode::zeros(3); 6],
    };
    update_common_dictionaries(&x, &y, &mut d, &mut codes).unwrap();
    for a in 0..3 {
        for b in a + 1..3 {
            let dot = d.psi_c_l.column(a).dot(&d.psi_c_l.column(b)) + d.phi_c.column(a).dot(&d.phi_c.column(b));
            assert!(dot.abs() < 1.0 - 1e-9, "atoms {a} and {b} coincide");
        }
    }
}

#[test]
fn objectives_never_increase_per_atom() {
    for seed in 0..10 {
        let (x, y, mut d) = random_instance(100 + seed, 6, 10, 4, 20);
        let mut codes = global_sparse_coding(&x, &y, &d, 3).unwrap();

        let (ox, oy) = branch_objectives(&x, &y, &d, &codes);
        let mut last = ox + oy;
        update_common_dictionaries_observed(&x, &y, &mut d, &mut codes, |k, dd, cc| {
            let (ox, oy) = branch_objectives(&x, &y, dd, cc);
            assert!(ox + oy <= last * (1.0 + 1e-12) + 1e-12, "seed {seed} atom {k}");
            assert!((stacked_norm(dd, k) - 1.0).abs() < 1e-9);
            last = ox + oy;
        })
        .unwrap();

        let mut codes = global_sparse_coding(&x, &y, &d, 3).unwrap();
        let (mut lx, mut ly) = branch_objectives(&x, &y, &d, &codes);
        update_unique_dictionaries_observed(&x, &y, &mut d, &mut codes, |atom, dd, cc| {
            let (ox, oy) = branch_objectives(&x, &y, dd, cc);
            match atom {
                UniqueAtom::Target(k) => {
                    assert!(ox <= lx * (1.0 + 1e-12) + 1e-12, "seed {seed} psi {k}");
                    assert!((dd.psi_l.column(k).norm() - 1.0).abs() < 1e-9);
                    assert!((oy - ly).abs() <= 1e-12 * ly.max(1.0));
                }
                UniqueAtom::Guidance(k) => {
                    assert!(oy <= ly * (1.0 + 1e-12) + 1e-12, "seed {seed} phi {k}");
                    assert!((dd.phi.column(k).norm() - 1.0).abs() < 1e-9);
                    assert!((ox - lx).abs() <= 1e-12 * lx.max(1.0));
                }
            }
            lx = ox;
            ly = oy;
        })
        .unwrap();
    }
}

#[test]
fn power_iteration_matches_full_decomposition() {
    let mut rng = seeded(21);
    for (rows, cols) in [(8, 30), (30, 8), (5, 5), (80, 300)] {
        let e = gaussian_matrix(rows, cols, &mut rng);
        let warm = gaussian_matrix(rows, 1, &mut rng).column(0).into_owned();
        let (p1, s1, q1) = top_singular_triplet(&e).unwrap();
        let (p2, s2, q2) = ksvd::singular_triplet(&e, Some(&warm)).unwrap();
        let svd = e.clone().svd(false, false);
        assert!((s1 - svd.singular_values.max()).abs() < 1e-9 * s1);
        assert!((s1 - s2).abs() < 1e-9 * s1);
        assert!((p1 - p2).norm() < 1e-9);
        assert!((q1 - q2).norm() < 1e-9);
    }
}

#[test]
fn zero_error_matrix_has_no_triplet() {
    assert!(top_singular_triplet(&DMatrix::zeros(3, 4)).is_none());
    assert!(ksvd::singular_triplet(&DMatrix::zeros(3, 4), Some(&DVector::from_element(3, 1.0))).is_none());
}

#[test]
fn coding_recovers_distinct_atoms() {
    let (_, _, d) = random_instance(8, 6, 10, 4, 1);
    let jd = d.joint().unwrap();
    let atoms = jd.stacked();
    let x = atoms.rows(0, 6).into_owned();
    let y = atoms.rows(6, 10).into_owned();
    let codes = global_sparse_coding(&x, &y, &d, 1).unwrap();
    for (i, code) in codes.codes.iter().enumerate() {
        assert_eq!(code.nnz(), 1);
        let stacked = code.to_stacked();
        assert!((stacked[i] - 1.0).abs() < 1e-12);
    }
    assert!(matches!(
        global_sparse_coding(&x, &y, &d, 0),
        Err(Error::BudgetOutOfRange { .. })
    ));
}

#[test]
fn coding_of_representable_samples_is_exact() {
    let mut rng = seeded(12);
    let d = Step1Dictionaries::random(20, 30, 10, &mut rng);
    let jd = d.joint().unwrap();
    let mut stacked = DMatrix::zeros(50, 100);
    for i in 0..100 {
        let picks = rand::seq::index::sample(&mut rng, 30, 3).into_vec();
        for j in picks {
            let c: f64 = rng.random_range(0.5..2.0);
            let col = jd.stacked().column(j) * c;
            stacked.column_mut(i).axpy(1.0, &col, 1.0);
        }
    }
    let x = stacked.rows(0, 20).into_owned();
    let y = stacked.rows(20, 30).into_owned();
    let codes = global_sparse_coding(&x, &y, &d, 3).unwrap();
    let res = residuals(&x, &y, &d, &codes);
    let mut total = 0.0;
    for i in 0..100 {
        let r = (res.x.column(i).norm_squared() + res.y.column(i).norm_squared()).sqrt();
        total += r / stacked.column(i).norm();
    }
    assert!(total / 100.0 <= 1e-10);
}

fn ridge_oracle(x: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    // (G G^T + lambda I) D^T = G X^T, by explicit sums and an LU solve
    let p = gamma.nrows();
    let t = gamma.ncols();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = (0..t).map(|c| gamma[(i, c)] * gamma[(j, c)]).sum::<f64>();
        }
        a[(i, i)] += lambda;
    }
    let mut b = DMatrix::zeros(p, x.nrows());
    for i in 0..p {
        for r in 0..x.nrows() {
            b[(i, r)] = (0..t).map(|c| gamma[(i, c)] * x[(r, c)]).sum::<f64>();
        }
    }
    a.lu().solve(&b).unwrap().transpose()
}

fn random_codes(k: usize, t: usize, rng: &mut impl Rng) -> CodeBatch {
    let codes = (0..t)
        .map(|_| {
            let mut c = JointSparseCode::zeros(k);
            for part in [&mut c.z, &mut c.u, &mut c.v] {
                let mut idx = rand::seq::index::sample(rng, k, 2).into_vec();
                idx.sort_unstable();
                part.entries = idx.into_iter().map(|j| (j, rng.random_range(-1.0..1.0))).collect();
            }
            c
        })
        .collect();
    CodeBatch { k, codes }
}

#[test]
fn ridge_matches_normal_equations_oracle() {
    let mut rng = seeded(30);
    let (n, k, t) = (8, 4, 30);
    let x_h = gaussian_matrix(n, t, &mut rng);
    let codes = random_codes(k, t, &mut rng);
    let (z, u) = (codes.z_matrix(), codes.u_matrix());
    let lambda = 1e-3;
    let (c, un) = solve_hr_dictionaries(&x_h, &z, &u, lambda).unwrap();
    let mut gamma = DMatrix::zeros(2 * k, t);
    gamma.rows_mut(0, k).copy_from(&z);
    gamma.rows_mut(k, k).copy_from(&u);
    let oracle = ridge_oracle(&x_h, &gamma, lambda);
    assert!((&c - oracle.columns(0, k)).amax() < 1e-8);
    assert!((&un - oracle.columns(k, k)).amax() < 1e-8);

    let (c2, u2) = solve_hr_from_codes(&x_h, &codes, lambda).unwrap();
    assert!((&c - c2).amax() < 1e-12);
    assert!((&un - u2).amax() < 1e-12);

    // stationarity of the ridge objective
    let mut d = DMatrix::zeros(n, 2 * k);
    d.columns_mut(0, k).copy_from(&c);
    d.columns_mut(k, k).copy_from(&un);
    let grad = (&d * &gamma - &x_h) * gamma.transpose() + &d * lambda;
    assert!(grad.norm() <= 1e-8 * x_h.norm());
}

#[test]
fn ridge_with_orthonormal_codes_returns_data() {
    let mut rng = seeded(31);
    let k = 3;
    let x_h = gaussian_matrix(5, 2 * k, &mut rng);
    let z = DMatrix::identity(2 * k, 2 * k).rows(0, k).into_owned();
    let u = DMatrix::identity(2 * k, 2 * k).rows(k, k).into_owned();
    let (c, un) = solve_hr_dictionaries(&x_h, &z, &u, 1e-12).unwrap();
    assert!((c - x_h.columns(0, k)).amax() < 1e-10);
    assert!((un - x_h.columns(k, k)).amax() < 1e-10);
}

#[test]
fn ridge_handles_unused_atoms_and_rejects_bad_lambda() {
    let mut rng = seeded(32);
    let x_h = gaussian_matrix(4, 10, &mut rng);
    let mut z = gaussian_matrix(3, 10, &mut rng);
    z.row_mut(1).fill(0.0);
    let u = gaussian_matrix(3, 10, &mut rng);
    let (c, _) = solve_hr_dictionaries(&x_h, &z, &u, 1e-3).unwrap();
    assert!(c.iter().all(|v| v.is_finite()));
    assert!(c.column(1).norm() < 1e-12);
    assert!(matches!(
        solve_hr_dictionaries(&x_h, &z, &u, 0.0),
        Err(Error::NonPositiveLambda(_))
    ));
}

fn small_config(k: usize, s: usize) -> TrainConfig {
    TrainConfig {
        atoms: k,
        sparsity: s,
        out_iter: 2,
        in_iter: 2,
        lambda: 1e-3,
        seed: 5,
        workers: 1,
    }
}

fn small_batch(seed: u64, m: usize, n: usize, t: usize) -> TrainingBatch {
    let mut rng = seeded(seed);
    let x_h = gaussian_matrix(n, t, &mut rng);
    let x_l = x_h.rows(0, m).into_owned();
    let y = gaussian_matrix(n, t, &mut rng);
    TrainingBatch::new(x_l, x_h, y).unwrap()
}

#[test]
fn step1_ignores_hr_data() {
    let batch = small_batch(40, 4, 9, 25);
    let cfg = small_config(3, 3);
    let (clean, _) = train(&batch, &cfg).unwrap();
    let mut poisoned = batch.clone();
    poisoned.x_h.fill(f64::NAN);
    let (dirty, _) = train(&poisoned, &cfg).unwrap();
    assert_eq!(clean.psi_c_l, dirty.psi_c_l);
    assert_eq!(clean.psi_l, dirty.psi_l);
    assert_eq!(clean.phi_c, dirty.phi_c);
    assert_eq!(clean.phi, dirty.phi);
    assert!(dirty.psi_c_h.iter().any(|v| v.is_nan()));
}

#[test]
fn trace_length_follows_loop_nesting() {
    let batch = small_batch(41, 3, 6, 12);
    let mut cfg = small_config(2, 2);
    cfg.out_iter = 1;
    cfg.in_iter = 1;
    let out = learn_lr_guidance_dictionaries(&batch.x_l, &batch.y, &cfg).unwrap();
    assert_eq!(out.trace.rmse_x.len(), 2);
    assert_eq!(out.trace.phase, vec![Phase::Common, Phase::Unique]);
    cfg.out_iter = 3;
    cfg.in_iter = 2;
    let out = learn_lr_guidance_dictionaries(&batch.x_l, &batch.y, &cfg).unwrap();
    assert_eq!(out.trace.rmse_y.len(), 12);
}

#[test]
fn smoke_run_validates() {
    let batch = small_batch(42, 2, 4, 4);
    let (set, trace) = train(&batch, &small_config(2, 2)).unwrap();
    assert!(validate(&set).passed());
    assert!(trace.final_rmse_x.is_finite());
}

#[test]
fn truth_is_a_fixed_point() {
    let mut rng = seeded(43);
    let (m, n, k, t) = (12, 20, 6, 60);
    let truth = Step1Dictionaries::random(m, n, k, &mut rng);
    let mut z0 = DMatrix::zeros(k, t);
    for i in 0..t {
        for j in rand::seq::index::sample(&mut rng, k, 2) {
            z0[(j, i)] = rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    let x = &truth.psi_c_l * &z0;
    let y = &truth.phi_c * &z0;
    let cfg = TrainConfig {
        atoms: k,
        sparsity: 2,
        out_iter: 1,
        in_iter: 2,
        lambda: 1e-3,
        seed: 0,
        workers: 1,
    };
    let out = learn_from(&x, &y, truth, &cfg).unwrap();
    assert!(out.trace.final_rmse_x <= 1e-8, "{}", out.trace.final_rmse_x);
    assert!(out.trace.rmse_x.iter().all(|r| *r <= 1e-8), "{:?}", out.trace.rmse_x);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let batch = small_batch(44, 6, 12, 700);
    let mut reference = None;
    for workers in [1, 2, 8] {
        let mut cfg = small_config(8, 4);
        cfg.workers = workers;
        let (set, trace) = train(&batch, &cfg).unwrap();
        let bits: Vec<u64> = set.blocks().iter().flat_map(|(_, m)| m.iter().map(|v| v.to_bits())).collect();
        match &reference {
            None => reference = Some((bits, trace.rmse_x.clone())),
            Some((b, r)) => {
                assert_eq!(b, &bits, "workers {workers}");
                assert_eq!(r, &trace.rmse_x);
            }
        }
    }
}

#[test]
fn config_errors_surface() {
    let batch = small_batch(45, 3, 6, 10);
    let mut cfg = small_config(2, 2);
    cfg.lambda = -1.0;
    assert!(matches!(train(&batch, &cfg), Err(Error::InvalidConfig(_))));
    let cfg = small_config(2, 2);
    let init = Step1Dictionaries::random(3, 6, 3, &mut seeded(0));
    assert!(learn_from(&batch.x_l, &batch.y, init, &cfg).is_err());
}

#[test]
fn single_modality_training_reduces_error() {
    let batch = small_batch(46, 5, 10, 80);
    let cfg = TrainConfig {
        atoms: 4,
        sparsity: 3,
        out_iter: 2,
        in_iter: 3,
        lambda: 1e-3,
        seed: 1,
        workers: 1,
    };
    let (dicts, trace) = learn_single_modality(&batch.x_l, &batch.x_h, &cfg).unwrap();
    assert_eq!(dicts.lr.shape(), (5, 8));
    assert_eq!(dicts.hr.shape(), (10, 8));
    assert_eq!(trace.rmse_x.len(), 12);
    assert!(trace.final_rmse_x < trace.rmse_x[0]);
    for col in dicts.lr.column_iter() {
        assert!((col.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_modality_from_coupled_concatenates() {
    let batch = small_batch(47, 2, 4, 6);
    let (set, _) = train(&batch, &small_config(2, 2)).unwrap();
    let single = SingleModalityDictionaries::from_coupled(&set);
    assert_eq!(single.atoms(), 4);
    assert_eq!(single.lr.column(3), set.psi_l.column(1));
    assert_eq!(single.hr.column(0), set.psi_c_h.column(0));
}
