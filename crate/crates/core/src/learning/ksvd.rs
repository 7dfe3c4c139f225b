//! Rank-one atom updates.
//!
//! For atom `k` with users `Omega_k`, the error matrix `E_k` is the
//! current residual on those samples with atom `k`'s contribution added
//! back. Its leading singular pair gives the new atom (unit norm, first
//! nonzero entry positive) and the new code row `sigma * q`, which is
//! the best rank-one fit of `E_k` and so never increases the objective.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{CodeBatch, Residuals, Step1Dictionaries};
use crate::model::{JointSparseCode, SparseVec};

/// Leading singular triplet `(p, sigma, q)` of `e`, with the first
/// nonzero entry of `p` positive. `None` when `e` is zero.
pub fn top_singular_triplet(e: &DMatrix<f64>) -> Option<(DVector<f64>, f64, DVector<f64>)> {
    singular_triplet(e, None)
}

/// Power-iteration stopping threshold on successive unit vectors.
const POWER_TOLERANCE: f64 = 1e-13;
const POWER_MAX_ITER: usize = 500;

/// As [`top_singular_triplet`]; `warm` (a guess for `p`) enables power
/// iteration, with a full eigendecomposition when it fails to converge.
pub(crate) fn singular_triplet(
    e: &DMatrix<f64>,
    warm: Option<&DVector<f64>>,
) -> Option<(DVector<f64>, f64, DVector<f64>)> {
    let (rows, cols) = e.shape();
    if rows == 0 || cols == 0 {
        return None;
    }
    let mut p = if rows <= cols {
        let gram = e * e.transpose();
        let start = warm.cloned();
        top_eigenvector(gram, start)?
    } else {
        let gram = e.transpose() * e;
        let start = warm.map(|w| e.tr_mul(w));
        e * top_eigenvector(gram, start)?
    };
    let p_norm = p.norm();
    if p_norm == 0.0 || !p_norm.is_finite() {
        return None;
    }
    p /= p_norm;
    // q = E^T p has norm sigma
    let q_full = e.tr_mul(&p);
    let sigma = q_full.norm();
    if sigma == 0.0 {
        return None;
    }
    let mut q = q_full / sigma;
    if let Some(first) = p.iter().find(|v| **v != 0.0) {
        if *first < 0.0 {
            p.neg_mut();
            q.neg_mut();
        }
    }
    Some((p, sigma, q))
}

fn power_iteration(gram: &DMatrix<f64>, start: DVector<f64>) -> Option<DVector<f64>> {
    let n0 = start.norm();
    if !(n0 > 0.0) || !n0.is_finite() {
        return None;
    }
    // a small fixed tilt keeps an orthogonal guess from stalling
    let tilt = 1e-2 / (start.len() as f64).sqrt();
    let mut v = start / n0;
    v.add_scalar_mut(tilt);
    v /= v.norm();
    let mut next = DVector::zeros(v.len());
    for _ in 0..POWER_MAX_ITER {
        next.gemv(1.0, gram, &v, 0.0);
        let n = next.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        next /= n;
        // sign is irrelevant for convergence; compare against the closer one
        if next.dot(&v) < 0.0 {
            next.neg_mut();
        }
        let delta = (&next - &v).norm();
        std::mem::swap(&mut v, &mut next);
        if delta <= POWER_TOLERANCE {
            return Some(v);
        }
    }
    None
}

fn top_eigenvector(gram: DMatrix<f64>, start: Option<DVector<f64>>) -> Option<DVector<f64>> {
    if let Some(v) = start.and_then(|s| power_iteration(&gram, s)) {
        return Some(v);
    }
    let eig = SymmetricEigen::new(gram);
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(val > 0.0) {
        return None;
    }
    Some(eig.eigenvectors.column(idx).into_owned())
}

/// One branch an atom spans: the dictionary holding it and the residual
/// of that branch.
pub(crate) struct Branch<'a> {
    pub dict: &'a mut DMatrix<f64>,
    pub residual: &'a mut DMatrix<f64>,
}

/// Rank-one update of column `k` across `branches`, for the samples in
/// `samples` whose current coefficients are `coefs` (updated in place).
pub(crate) fn update_atom(branches: &mut [Branch<'_>], k: usize, samples: &[usize], coefs: &mut [f64]) {
    let total_rows: usize = branches.iter().map(|b| b.dict.nrows()).sum();
    let mut e = DMatrix::zeros(total_rows, samples.len());
    let mut offset = 0;
    for b in branches.iter() {
        let rows = b.dict.nrows();
        let atom = b.dict.column(k);
        for (j, (&i, &c)) in samples.iter().zip(coefs.iter()).enumerate() {
            let mut col = e.column_mut(j);
            let mut dst = col.rows_mut(offset, rows);
            dst.copy_from(&b.residual.column(i));
            dst.axpy(c, &atom, 1.0);
        }
        offset += rows;
    }
    let mut warm = DVector::zeros(total_rows);
    offset = 0;
    for b in branches.iter() {
        let rows = b.dict.nrows();
        warm.rows_mut(offset, rows).copy_from(&b.dict.column(k));
        offset += rows;
    }
    let Some((p, sigma, q)) = singular_triplet(&e, Some(&warm)) else {
        // E_k vanishes: the samples are fully explained without this atom
        for (j, &i) in samples.iter().enumerate() {
            offset = 0;
            for b in branches.iter_mut() {
                let rows = b.dict.nrows();
                b.residual
                    .column_mut(i)
                    .copy_from(&e.column(j).rows(offset, rows));
                offset += rows;
            }
            coefs[j] = 0.0;
        }
        return;
    };
    offset = 0;
    for b in branches.iter_mut() {
        let rows = b.dict.nrows();
        let seg = p.rows(offset, rows);
        b.dict.column_mut(k).copy_from(&seg);
        for (j, &i) in samples.iter().enumerate() {
            let c = sigma * q[j];
            let mut col = b.residual.column_mut(i);
            col.copy_from(&e.column(j).rows(offset, rows));
            col.axpy(-c, &seg, 1.0);
        }
        offset += rows;
    }
    for (c, qj) in coefs.iter_mut().zip(q.iter()) {
        *c = sigma * qj;
    }
}

/// Replaces an unused atom with the normalized residual of the worst
/// represented sample not yet claimed in this pass (ties: lowest index).
/// The atom is left alone when no residual exceeds `floor_sq`.
pub(crate) fn replace_unused(
    branches: &mut [Branch<'_>],
    k: usize,
    claimed: &mut HashSet<usize>,
    floor_sq: f64,
) {
    let Some(first) = branches.first() else { return };
    let t = first.residual.ncols();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..t {
        if claimed.contains(&i) {
            continue;
        }
        let sq: f64 = branches
            .iter()
            .map(|b| b.residual.column(i).norm_squared())
            .sum();
        if best.is_none_or(|(_, s)| sq > s) {
            best = Some((i, sq));
        }
    }
    let Some((i, sq)) = best else { return };
    if !(sq > floor_sq) {
        return;
    }
    claimed.insert(i);
    let norm = sq.sqrt();
    for b in branches.iter_mut() {
        let col = b.residual.column(i) / norm;
        b.dict.column_mut(k).copy_from(&col);
    }
}

/// `(sample, slot)` for every nonzero coefficient of each atom.
fn atom_users(
    codes: &CodeBatch,
    part: impl Fn(&JointSparseCode) -> &SparseVec,
) -> Vec<Vec<(usize, usize)>> {
    let mut users = vec![Vec::new(); codes.k];
    for (i, code) in codes.codes.iter().enumerate() {
        for (slot, &(j, c)) in part(code).entries.iter().enumerate() {
            if c != 0.0 {
                users[j].push((i, slot));
            }
        }
    }
    users
}

pub(crate) fn update_common(
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
    res: &mut Residuals,
    mut observer: impl FnMut(usize, &Step1Dictionaries, &CodeBatch),
) {
    let users = atom_users(codes, |c| &c.z);
    let floor_sq = res.floor_sq;
    let mut claimed = HashSet::new();
    for (k, uses) in users.iter().enumerate() {
        let mut branches = [
            Branch {
                dict: &mut dicts.psi_c_l,
                residual: &mut res.x,
            },
            Branch {
                dict: &mut dicts.phi_c,
                residual: &mut res.y,
            },
        ];
        if uses.is_empty() {
            replace_unused(&mut branches, k, &mut claimed, floor_sq);
        } else {
            let samples: Vec<usize> = uses.iter().map(|&(i, _)| i).collect();
            let mut coefs: Vec<f64> = uses
                .iter()
                .map(|&(i, slot)| codes.codes[i].z.entries[slot].1)
                .collect();
            update_atom(&mut branches, k, &samples, &mut coefs);
            for (&(i, slot), c) in uses.iter().zip(coefs) {
                codes.codes[i].z.entries[slot].1 = c;
            }
        }
        observer(k, dicts, codes);
    }
}

/// Identifies the atom just updated in a unique pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniqueAtom {
    Target(usize),
    Guidance(usize),
}

pub(crate) fn update_unique(
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
    res: &mut Residuals,
    mut observer: impl FnMut(UniqueAtom, &Step1Dictionaries, &CodeBatch),
) {
    let floor_sq = res.floor_sq;
    for target in [true, false] {
        let users = if target {
            atom_users(codes, |c| &c.u)
        } else {
            atom_users(codes, |c| &c.v)
        };
        let mut claimed = HashSet::new();
        for (k, uses) in users.iter().enumerate() {
            let branch = if target {
                Branch {
                    dict: &mut dicts.psi_l,
                    residual: &mut res.x,
                }
            } else {
                Branch {
                    dict: &mut dicts.phi,
                    residual: &mut res.y,
                }
            };
            let mut branches = [branch];
            if uses.is_empty() {
                replace_unused(&mut branches, k, &mut claimed, floor_sq);
            } else {
                let samples: Vec<usize> = uses.iter().map(|&(i, _)| i).collect();
                let mut coefs: Vec<f64> = uses
                    .iter()
                    .map(|&(i, slot)| {
                        let code = &codes.codes[i];
                        let sv = if target { &code.u } else { &code.v };
                        sv.entries[slot].1
                    })
                    .collect();
                update_atom(&mut branches, k, &samples, &mut coefs);
                for (&(i, slot), c) in uses.iter().zip(coefs) {
                    let code = &mut codes.codes[i];
                    let sv = if target { &mut code.u } else { &mut code.v };
                    sv.entries[slot].1 = c;
                }
            }
            let id = if target {
                UniqueAtom::Target(k)
            } else {
                UniqueAtom::Guidance(k)
            };
            observer(id, dicts, codes);
        }
    }
}
