//! Energies, weak forms and gradients over a [`KernelTable`].
//!
//! Convention: the normalising constant of the operator is 1 and the pair sum
//! runs over ordered pairs, so `E(u) = Σ_{i≠j} w_ij |u_i - u_j|^p + Σ_i b_i |u_i|^p`.
//! Row reductions run in parallel; partial sums are combined in row order, so
//! results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::KernelTable;

#[inline]
pub fn pow_abs(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == 2.0 {
        a * a
    } else if p == 3.0 {
        a * a * a
    } else if p == 1.0 {
        a
    } else if a == 0.0 {
        0.0
    } else {
        a.powf(p)
    }
}

/// `J_p(t) = |t|^{p-2} t`.
#[inline]
pub fn jp(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t
    } else if p == 3.0 {
        t.abs() * t
    } else if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 2.0) * t
    }
}

fn ordered_sum(parts: Vec<f64>) -> f64 {
    parts.into_iter().sum()
}

/// `[u]^p_{s,p}` (the p-th power of the seminorm).
pub fn gagliardo_energy(u: &Field, k: &KernelTable, p: f64) -> f64 {
    let v = &u.values;
    let b = k.complement();
    let parts: Vec<f64> = (0..k.len())
        .into_par_iter()
        .map(|i| {
            let ui = v[i];
            let row = k.row(i);
            let mut acc = 0.0;
            for (w, uj) in row.iter().zip(v) {
                acc += w * pow_abs(ui - uj, p);
            }
            acc + b[i] * pow_abs(ui, p)
        })
        .collect();
    ordered_sum(parts)
}

pub fn lp_norm_pow(u: &Field, r: f64) -> Result<f64> {
    u.lp_norm_pow(r)
}

/// `⟨(-Δ_p)^s u, v⟩ = Σ_{i≠j} w_ij J_p(u_i-u_j)(v_i-v_j) + Σ_i b_i J_p(u_i) v_i`.
pub fn weak_action(u: &Field, v: &Field, k: &KernelTable, p: f64) -> f64 {
    let uu = &u.values;
    let vv = &v.values;
    let b = k.complement();
    let parts: Vec<f64> = (0..k.len())
        .into_par_iter()
        .map(|i| {
            let row = k.row(i);
            let mut acc = 0.0;
            for j in 0..row.len() {
                acc += row[j] * jp(uu[i] - uu[j], p) * (vv[i] - vv[j]);
            }
            acc + b[i] * jp(uu[i], p) * vv[i]
        })
        .collect();
    ordered_sum(parts)
}

/// ℓ² gradient of [`gagliardo_energy`]: `2p Σ_j w_ij J_p(u_i - u_j) + p b_i J_p(u_i)`.
pub fn energy_gradient(u: &Field, k: &KernelTable, p: f64) -> Field {
    let v = &u.values;
    let b = k.complement();
    let grad: Vec<f64> = (0..k.len())
        .into_par_iter()
        .map(|i| {
            let ui = v[i];
            let mut acc = 0.0;
            for (w, uj) in k.row(i).iter().zip(v) {
                acc += w * jp(ui - uj, p);
            }
            2.0 * p * acc + p * b[i] * jp(ui, p)
        })
        .collect();
    Field::new(grad, u.cell_measure)
}

/// Hessian of [`gagliardo_energy`]; requires `p >= 2` so that it stays bounded.
pub fn energy_hessian(u: &Field, k: &KernelTable, p: f64) -> Result<DMatrix<f64>> {
    if p < 2.0 {
        return Err(Error::Parameter(format!("energy Hessian needs p >= 2, got {p}")));
    }
    let n = k.len();
    let v = &u.values;
    let c = p * (p - 1.0);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = c * k.complement()[i] * pow_abs(v[i], p - 2.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = 2.0 * c * k.pair(i, j) * pow_abs(v[i] - v[j], p - 2.0);
            h[(i, j)] = -e;
            diag += e;
        }
        h[(i, i)] = diag;
    }
    Ok(h)
}

/// `z(t) = ((1-t) v^p + t u^p)^{1/p}` nodewise, for nonnegative `u` and `v`.
pub fn convex_path(u: &Field, v: &Field, p: f64, t: f64) -> Field {
    Field::new(
        u.values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| ((1.0 - t) * pow_abs(*b, p) + t * pow_abs(*a, p)).powf(1.0 / p))
            .collect(),
        u.cell_measure,
    )
}

/// Strict-monotonicity gap of the operator and the matching seminorm lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityGap {
    pub lhs: f64,
    pub rhs_seminorm_term: f64,
}

impl MonotonicityGap {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs_seminorm_term
    }
}

/// `lhs = ⟨A u - A v, u - v⟩` with `[u-v]^p` (p ≥ 2) or
/// `[u-v]² / ([u]^p + [v]^p)^{(2-p)/p}` (1 < p < 2) on the right.
pub fn monotonicity_gap(u: &Field, v: &Field, k: &KernelTable, p: f64) -> Result<MonotonicityGap> {
    if u.values == v.values {
        return Err(Error::Degenerate("monotonicity gap needs u != v".into()));
    }
    let d = u.sub(v);
    let lhs = weak_action(u, &d, k, p) - weak_action(v, &d, k, p);
    let ed = gagliardo_energy(&d, k, p);
    let rhs = if p >= 2.0 {
        ed
    } else {
        let eu = gagliardo_energy(u, k, p);
        let ev = gagliardo_energy(v, k, p);
        ed.powf(2.0 / p) / (eu + ev).powf((2.0 - p) / p)
    };
    Ok(MonotonicityGap {
        lhs,
        rhs_seminorm_term: rhs,
    })
}
