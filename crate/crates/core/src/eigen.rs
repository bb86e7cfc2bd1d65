//! First eigenpair of the fractional p-sub-Laplacian.
//!
//! `λ₁ = min [u]^p / ‖u‖_p^p` is found by gradient descent on the Rayleigh
//! quotient over the discrete unit `L^p` sphere: the step follows the
//! Lagrangian residual `∇E - λ ∇‖u‖_p^p` (which is tangent to the sphere),
//! is sized by Armijo backtracking, and the iterate is rescaled radially back
//! onto the sphere. At `p = 2` a dense generalised eigensolve serves as an
//! independent oracle.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::{FracParams, KernelTable};
use crate::variational::{energy_gradient, gagliardo_energy, jp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOpts {
    /// Stop when the ℓ² norm of the Lagrangian residual drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    /// Relative slack in the line search once decrease falls below rounding.
    pub slack: f64,
    /// Extra descent steps after taking `|u|`.
    pub polish_steps: usize,
    /// Random restarts used by the simplicity checks.
    pub restarts: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            tol: 1e-9,
            max_iter: 50_000,
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            slack: 1e-14,
            polish_steps: 100,
            restarts: 5,
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("solver tol must be positive, got {}", self.tol)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.initial_step > 0.0) {
            return Err(Error::Parameter("line search needs 0 < backtrack < 1 and a positive initial step".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Rayleigh quotient of the polished, sign-fixed eigenfunction.
    pub lambda1: f64,
    /// Rayleigh quotient of the converged iterate before taking `|u|`.
    pub lambda1_raw: f64,
    /// Nonnegative eigenfunction with `‖φ₁‖_p = 1`.
    pub phi1: Field,
    pub iterations: usize,
    /// Lagrangian residual at `phi1`.
    pub residual: f64,
    /// Rayleigh quotient after every accepted step.
    pub solver_trace: Vec<f64>,
}

/// `[u]^p / ‖u‖_p^p`.
pub fn rayleigh(u: &Field, k: &KernelTable, p: f64) -> Result<f64> {
    k.check_field(u)?;
    let n = u.integral_pow(p);
    if n == 0.0 {
        return Err(Error::Degenerate("Rayleigh quotient of the zero field".into()));
    }
    Ok(gagliardo_energy(u, k, p) / n)
}

fn normalize(u: &mut Field, p: f64) -> Result<()> {
    let n = u.integral_pow(p);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("cannot normalise field with ‖u‖_p^p = {n}")));
    }
    let c = n.powf(-1.0 / p);
    u.values.iter_mut().for_each(|v| *v *= c);
    Ok(())
}

/// Lagrangian residual `∇E - λ ∇‖u‖_p^p` for `u` on the unit sphere.
fn residual(u: &Field, k: &KernelTable, p: f64, lambda: f64) -> Field {
    let mut g = energy_gradient(u, k, p);
    let c = u.cell_measure;
    for (gi, ui) in g.values.iter_mut().zip(&u.values) {
        *gi -= lambda * p * c * jp(*ui, p);
    }
    g
}

struct Descent {
    u: Field,
    lambda: f64,
    residual: f64,
    iterations: usize,
    trace: Vec<f64>,
    converged: bool,
}

fn descend(k: &KernelTable, p: f64, start: &Field, opts: &SolverOpts, budget: usize, stop_on_tol: bool) -> Result<Descent> {
    let mut u = start.clone();
    normalize(&mut u, p)?;
    let cell = u.cell_measure;
    let mut lambda = gagliardo_energy(&u, k, p);
    let mut r = residual(&u, k, p, lambda);
    let mut rnorm = r.dot(&r).sqrt();
    let mut trace = vec![lambda];
    let mut iterations = 0;
    while iterations < budget {
        if stop_on_tol && rnorm < opts.tol {
            return Ok(Descent { u, lambda, residual: rnorm, iterations, trace, converged: true });
        }
        let decrease = rnorm * rnorm / cell;
        let mut tau = opts.initial_step;
        let mut accepted = None;
        while tau > 1e-30 {
            let mut cand = u.add_scaled(-tau / cell, &r);
            normalize(&mut cand, p)?;
            let lc = gagliardo_energy(&cand, k, p);
            if !lc.is_finite() {
                return Err(Error::Numeric(format!("non-finite Rayleigh quotient at step {tau:e}")));
            }
            let noise = opts.slack * lambda.abs();
            if lc <= lambda - opts.sufficient_decrease * tau * decrease && lambda - lc > noise {
                accepted = Some((cand, lc, None));
                break;
            }
            if lc <= lambda + noise {
                // decrease below rounding: accept only if stationarity improves
                let rc = residual(&cand, k, p, lc);
                let rcn = rc.dot(&rc).sqrt();
                if rcn < rnorm {
                    accepted = Some((cand, lc, Some((rc, rcn))));
                    break;
                }
            }
            tau *= opts.backtrack;
        }
        let Some((cand, lc, cached)) = accepted else {
            break;
        };
        u = cand;
        lambda = lc;
        (r, rnorm) = match cached {
            Some(c) => c,
            None => {
                let r = residual(&u, k, p, lambda);
                let n = r.dot(&r).sqrt();
                (r, n)
            }
        };
        trace.push(lambda);
        iterations += 1;
    }
    let converged = rnorm < opts.tol;
    Ok(Descent { u, lambda, residual: rnorm, iterations, trace, converged })
}

/// Minimise the Rayleigh quotient starting from `init`.
pub fn minimize_rayleigh(k: &KernelTable, p: f64, init: &Field, opts: &SolverOpts) -> Result<EigenResult> {
    opts.validate()?;
    k.check_field(init)?;
    let d = descend(k, p, init, opts, opts.max_iter, true)?;
    if !d.converged {
        return Err(Error::NonConvergence {
            iterations: d.iterations,
            residual: d.residual,
            trace: d.trace,
        });
    }
    let lambda1_raw = d.lambda;
    let polished = descend(k, p, &d.u.abs(), opts, opts.polish_steps, false)?;
    let mut trace = d.trace;
    trace.extend_from_slice(&polished.trace[1..]);
    let mut phi1 = polished.u.abs();
    normalize(&mut phi1, p)?;
    let lambda1 = gagliardo_energy(&phi1, k, p);
    let res = residual(&phi1, k, p, lambda1);
    Ok(EigenResult {
        lambda1,
        lambda1_raw,
        phi1,
        iterations: d.iterations + polished.iterations,
        residual: res.dot(&res).sqrt(),
        solver_trace: trace,
    })
}

/// Generalised spectrum of `(A, cell·I)` where `uᵀAu = E(u)` at `p = 2`.
#[derive(Clone, Debug)]
pub struct P2Spectrum {
    /// Ascending generalised eigenvalues.
    pub values: Vec<f64>,
    /// Matching unit eigenvectors (columns).
    pub vectors: DMatrix<f64>,
}

impl P2Spectrum {
    pub fn vector(&self, k: usize, cell_measure: f64) -> Field {
        Field::new(self.vectors.column(k).iter().copied().collect(), cell_measure)
    }
}

/// Symmetric matrix of the quadratic form `E(u)` at `p = 2`.
pub fn p2_matrix(k: &KernelTable) -> Result<DMatrix<f64>> {
    let n = k.len();
    let mut a = DMatrix::zeros(n, n);
    let scale = k.pair_weights().iter().fold(0.0f64, |m, w| m.max(*w));
    for i in 0..n {
        let mut diag = k.complement()[i];
        for j in 0..n {
            if i != j {
                let (wij, wji) = (k.pair(i, j), k.pair(j, i));
                if (wij - wji).abs() > 1e-12 * scale {
                    return Err(Error::Numeric(format!("kernel asymmetric at ({i},{j}): {wij} vs {wji}")));
                }
                a[(i, j)] = -2.0 * wij;
                diag += 2.0 * wij;
            }
        }
        a[(i, i)] = diag;
    }
    Ok(a)
}

pub fn p2_spectrum(k: &KernelTable) -> Result<P2Spectrum> {
    let a = p2_matrix(k)?;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..k.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i] / k.cell_measure).collect();
    let vectors = DMatrix::from_fn(k.len(), k.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(P2Spectrum { values, vectors })
}

/// Smallest generalised eigenvalue of the `p = 2` quadratic form.
pub fn p2_oracle(k: &KernelTable) -> Result<f64> {
    Ok(p2_spectrum(k)?.values[0])
}

/// `C^{-p} |Ω|^{-ps/Q}` for an embedding constant `C` with `‖u‖_{p*} ≤ C [u]`.
pub fn lambda1_lower_bound(grid: &GridDomain, fp: &FracParams, sobolev_const: f64) -> f64 {
    let q = grid.group().homogeneous_dim() as f64;
    sobolev_const.powf(-fp.p) * grid.measure().powf(-fp.ps() / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, DomainSpec};
    use crate::group::GroupConfig;
    use crate::kernel::{assemble, TruncationPolicy};

    fn interval(h: f64, half: f64, s: f64) -> (GridDomain, KernelTable) {
        let g = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-half], vec![half]), h).unwrap();
        let k = assemble(&g, &FracParams::new(s, 2.0), &TruncationPolicy::default()).unwrap();
        (g, k)
    }

    #[test]
    fn rayleigh_examples() {
        let (g, k) = interval(1.0 / 16.0, 1.0, 0.3);
        let u = Field::random(&g, 4, -1.0, 1.0);
        let r1 = rayleigh(&u, &k, 2.0).unwrap();
        assert!((rayleigh(&u.scaled(2.0), &k, 2.0).unwrap() - r1).abs() < 1e-13 * r1);
        assert!(matches!(rayleigh(&Field::zeros(&g), &k, 2.0), Err(Error::Degenerate(_))));
        let single = KernelTable::from_parts(GroupConfig::Abelian { dim: 1 }, FracParams::new(0.3, 2.0), 0.5, vec![0.0], vec![3.0]).unwrap();
        assert_eq!(rayleigh(&Field::new(vec![1.0], 0.5), &single, 2.0).unwrap(), 6.0);
    }

    #[test]
    fn p2_matrix_reproduces_energy() {
        let (g, k) = interval(1.0 / 16.0, 1.0, 0.3);
        let a = p2_matrix(&k).unwrap();
        for seed in 0..100 {
            let u = Field::random(&g, seed, -1.0, 1.0);
            let x = nalgebra::DVector::from_vec(u.values.clone());
            let q = x.dot(&(&a * &x));
            let e = gagliardo_energy(&u, &k, 2.0);
            assert!((q - e).abs() < 1e-12 * e);
        }
    }

    #[test]
    fn solver_matches_oracle_and_is_positive() {
        let (g, k) = interval(1.0 / 16.0, 1.0, 0.3);
        let res = minimize_rayleigh(&k, 2.0, &Field::positive_bump(&g), &SolverOpts::default()).unwrap();
        let oracle = p2_oracle(&k).unwrap();
        assert!((res.lambda1 - oracle).abs() < 1e-8 * oracle);
        assert!(res.phi1.min() > 0.0);
        assert!((res.phi1.integral_pow(2.0) - 1.0).abs() < 1e-12);
        for w in res.solver_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
        let spec = p2_spectrum(&k).unwrap();
        let v0 = spec.vector(0, g.cell_measure);
        assert!(v0.values.iter().all(|x| x.signum() == v0.values[0].signum()));
    }

    #[test]
    fn forced_non_convergence_carries_trace() {
        let (g, k) = interval(1.0 / 16.0, 1.0, 0.3);
        let opts = SolverOpts { max_iter: 1, ..Default::default() };
        match minimize_rayleigh(&k, 2.0, &Field::positive_bump(&g), &opts) {
            Err(Error::NonConvergence { trace, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(trace.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonlinear_p3_is_positive_and_simple() {
        let g = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]), 1.0 / 16.0).unwrap();
        let k = assemble(&g, &FracParams::new(0.25, 3.0), &TruncationPolicy::default()).unwrap();
        let a = minimize_rayleigh(&k, 3.0, &Field::positive_bump(&g), &SolverOpts::default()).unwrap();
        let b = minimize_rayleigh(&k, 3.0, &Field::random(&g, 77, 0.05, 1.0), &SolverOpts::default()).unwrap();
        assert!(a.phi1.min() > 0.0);
        assert!(a.phi1.cosine(&b.phi1) > 1.0 - 1e-6);
        assert!((a.lambda1 - b.lambda1).abs() < 1e-9 * a.lambda1);
    }

    #[test]
    fn domain_monotonicity_on_nested_intervals() {
        let (_, small) = interval(0.125, 1.0, 0.3);
        let (_, large) = interval(0.125, 1.5, 0.3);
        let ls = p2_oracle(&small).unwrap();
        let ll = p2_oracle(&large).unwrap();
        assert!(ls >= ll, "{ls} < {ll}");
    }

    #[test]
    fn lower_bound_power_law() {
        let g = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]), 0.25).unwrap();
        let g2 = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-2.0], vec![2.0]), 0.25).unwrap();
        let fp = FracParams::new(0.3, 2.0);
        let ratio = lambda1_lower_bound(&g2, &fp, 1.3) / lambda1_lower_bound(&g, &fp, 1.3);
        assert!((ratio - 2f64.powf(-0.6)).abs() < 1e-14);
    }
}
