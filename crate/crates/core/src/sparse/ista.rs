use nalgebra::DVector;

use super::AtomDictionary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IstaOptions {
    /// Weight of the l1 term.
    pub lambda: f64,
    pub max_iter: usize,
    /// Relative objective decrease below which iteration stops.
    pub tol: f64,
}

impl Default for IstaOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IstaSolution {
    pub coefs: DVector<f64>,
    /// Objective at the starting point followed by one value per iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// Step-size constant: largest squared singular value of the dictionary.
    pub lipschitz: f64,
}

/// Largest eigenvalue of `D^T D` by power iteration.
pub(super) fn largest_squared_singular_value(dict: &AtomDictionary) -> f64 {
    let d = dict.matrix();
    let p = d.ncols();
    if p == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let w = d.tr_mul(&(d * &v));
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - estimate).abs() <= 1e-14 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // Rayleigh quotients approach from below; a hair of slack keeps the
    // step inside the descent region.
    estimate * (1.0 + 1e-9)
}

fn objective(dict: &AtomDictionary, signal: &DVector<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    let r = signal - dict.matrix() * c;
    r.norm_squared() + lambda * c.lp_norm(1)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(super) fn solve(dict: &AtomDictionary, signal: &[f64], opts: &IstaOptions) -> Result<IstaSolution> {
    if !(opts.lambda > 0.0) {
        return Err(Error::NonPositiveLambda(opts.lambda));
    }
    let x = DVector::from_column_slice(signal);
    let d = dict.matrix();
    let lipschitz = dict.lipschitz();
    let mut c = DVector::zeros(dict.atoms());
    let mut history = vec![objective(dict, &x, &c, opts.lambda)];
    let threshold = opts.lambda / (2.0 * lipschitz);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let prev = *history.last().expect("non-empty");
        if prev == 0.0 {
            break;
        }
        let grad = d.tr_mul(&(&x - d * &c));
        let next = (&c + grad / lipschitz).map(|v| soft_threshold(v, threshold));
        let value = objective(dict, &x, &next, opts.lambda);
        iterations += 1;
        c = next;
        history.push(value);
        if (prev - value) <= opts.tol * prev {
            break;
        }
    }
    Ok(IstaSolution {
        coefs: c,
        objective: history,
        iterations,
        lipschitz,
    })
}
