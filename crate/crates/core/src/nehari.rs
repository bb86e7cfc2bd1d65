//! Nehari fibering for `(-Δ_p)^s u = λ f u^{-δ} + g u^q` with zero exterior data.
//!
//! Along a ray `t ↦ t u` the energy is the scalar fiber map
//! `φ(t) = t^p A/p - λ t^{1-δ} F/(1-δ) - t^{q+1} G/(q+1)` with
//! `A = [u]^p`, `F = ∫ f |u|^{1-δ}` and `G = ∫ g |u|^{q+1}`. Its critical points
//! are the roots of `m(t) = t^{p-1+δ} A - t^{q+δ} G = λF`; the smaller root lies on
//! `N⁺` (local minimum of the fiber) and the larger on `N⁻` (local maximum).
//!
//! Each branch is minimised through the reduced functional `J(w) = I(t_b(w) w)`,
//! which is 0-homogeneous in the direction `w`. By the envelope property its
//! gradient is `t_b ∇I(t_b w)`. Descent runs with the singular term regularised
//! as `(u + ε)^{-δ}` under a decreasing ε schedule; at `p ≥ 2` a damped Newton
//! iteration on the regularised Euler–Lagrange system finishes the solve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::{FracParams, KernelTable};
use crate::variational::{energy_gradient, energy_hessian, gagliardo_energy, pow_abs, weak_action};

/// Data of the singular concave–convex problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub fp: FracParams,
    pub delta: f64,
    pub q: f64,
    pub f: Field,
    pub g: Field,
    pub lambda: f64,
    /// Floor of the regularised singular term `(u + ε)^{-δ}`.
    pub eps_sing: f64,
}

impl ProblemSpec {
    pub fn validate(&self, k: &KernelTable) -> Result<()> {
        let p = self.fp.p;
        let p_star = self.fp.p_star(&k.group);
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.q + 1.0 > p && self.q + 1.0 < p_star) {
            return Err(Error::Parameter(format!(
                "need p < q+1 < p* = {p_star}, got p = {p}, q = {}",
                self.q
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.eps_sing > 0.0) {
            return Err(Error::Parameter(format!("eps_sing must be positive, got {}", self.eps_sing)));
        }
        for (name, w) in [("f", &self.f), ("g", &self.g)] {
            k.check_field(w)?;
            if !w.values.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("weight {name} must be finite and strictly positive")));
            }
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> ProblemSpec {
        ProblemSpec { lambda, ..self.clone() }
    }

    pub fn with_f(&self, f: Field) -> ProblemSpec {
        ProblemSpec { f, ..self.clone() }
    }

    pub fn with_eps(&self, eps_sing: f64) -> ProblemSpec {
        ProblemSpec { eps_sing, ..self.clone() }
    }
}

/// `I_λ(u) = [u]^p/p - λ/(1-δ) ∫ f|u|^{1-δ} - 1/(q+1) ∫ g|u|^{q+1}`.
pub fn energy_i(u: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<f64> {
    let s = fiber_scalars(u, ps, k)?;
    Ok(scalar_fiber(ps, s).phi(1.0))
}

/// `I_λ` with the singular primitive replaced by `((|u|+ε)^{1-δ} - ε^{1-δ})/(1-δ)`.
pub fn energy_i_regularized(u: &Field, ps: &ProblemSpec, k: &KernelTable, eps: f64) -> Result<f64> {
    k.check_field(u)?;
    let p = ps.fp.p;
    let e0 = eps.powf(1.0 - ps.delta);
    let sing: f64 = u
        .values
        .iter()
        .zip(&ps.f.values)
        .map(|(v, f)| f * ((v.abs() + eps).powf(1.0 - ps.delta) - e0))
        .sum::<f64>()
        * u.cell_measure
        / (1.0 - ps.delta);
    Ok(gagliardo_energy(u, k, p) / p - ps.lambda * sing - u.weighted_integral_pow(&ps.g, ps.q + 1.0) / (ps.q + 1.0))
}

/// ℓ² gradient of [`energy_i_regularized`] for `u ≥ 0`.
pub fn gradient_i(u: &Field, ps: &ProblemSpec, k: &KernelTable, eps: f64) -> Field {
    let p = ps.fp.p;
    let c = u.cell_measure;
    let mut g = energy_gradient(u, k, p);
    for (i, gi) in g.values.iter_mut().enumerate() {
        let ui = u.values[i].max(0.0);
        *gi = *gi / p - c * (ps.lambda * ps.f.values[i] * (ui + eps).powf(-ps.delta) + ps.g.values[i] * pow_abs(ui, ps.q));
    }
    g
}

/// The three fiber scalars `A`, `F`, `G` of a direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberScalars {
    pub a: f64,
    pub f: f64,
    pub g: f64,
}

pub fn fiber_scalars(u: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<FiberScalars> {
    k.check_field(u)?;
    Ok(FiberScalars {
        a: gagliardo_energy(u, k, ps.fp.p),
        f: u.weighted_integral_pow(&ps.f, 1.0 - ps.delta),
        g: u.weighted_integral_pow(&ps.g, ps.q + 1.0),
    })
}

/// Closed-form fiber map of one direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fiber {
    pub p: f64,
    pub delta: f64,
    pub q: f64,
    pub lambda: f64,
    pub s: FiberScalars,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiberValues {
    pub phi: f64,
    pub dphi: f64,
    pub ddphi: f64,
}

impl Fiber {
    pub fn phi(&self, t: f64) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        t.powf(p) * s.a / p - self.lambda * t.powf(1.0 - d) * s.f / (1.0 - d) - t.powf(q + 1.0) * s.g / (q + 1.0)
    }

    pub fn dphi(&self, t: f64) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        t.powf(p - 1.0) * s.a - self.lambda * t.powf(-d) * s.f - t.powf(q) * s.g
    }

    pub fn ddphi(&self, t: f64) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        (p - 1.0) * t.powf(p - 2.0) * s.a + d * self.lambda * t.powf(-d - 1.0) * s.f - q * t.powf(q - 1.0) * s.g
    }

    /// `m(t) = t^{p-1+δ} A - t^{q+δ} G`, so that `φ'(t) = t^{-δ} (m(t) - λF)`.
    pub fn m(&self, t: f64) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        t.powf(p - 1.0 + d) * s.a - t.powf(q + d) * s.g
    }

    pub fn t_max(&self) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        ((p - 1.0 + d) * s.a / ((q + d) * s.g)).powf(1.0 / (q + 1.0 - p))
    }

    /// `m(t_max)` by direct substitution.
    pub fn m_max(&self) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        let e = (p - 1.0 + d) / (q + 1.0 - p);
        (q + 1.0 - p) / (q + d) * ((p - 1.0 + d) / (q + d)).powf(e) * s.a.powf((q + d) / (q + 1.0 - p)) / s.g.powf(e)
    }

    /// Scale of the three terms of `φ''`; zero tests are relative to it.
    fn ddphi_scale(&self, t: f64) -> f64 {
        let (p, d, q, s) = (self.p, self.delta, self.q, self.s);
        (p - 1.0) * t.powf(p - 2.0) * s.a + d * self.lambda * t.powf(-d - 1.0) * s.f + q * t.powf(q - 1.0) * s.g
    }

    pub fn values(&self, t: f64) -> FiberValues {
        FiberValues {
            phi: self.phi(t),
            dphi: self.dphi(t),
            ddphi: self.ddphi(t),
        }
    }
}

pub fn scalar_fiber(ps: &ProblemSpec, s: FiberScalars) -> Fiber {
    Fiber {
        p: ps.fp.p,
        delta: ps.delta,
        q: ps.q,
        lambda: ps.lambda,
        s,
    }
}

/// `φ_u(t)` and its first two derivatives.
pub fn fiber(u: &Field, ps: &ProblemSpec, k: &KernelTable, t: f64) -> Result<FiberValues> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("fiber parameter must be positive, got {t}")));
    }
    let s = fiber_scalars(u, ps, k)?;
    if s.a == 0.0 {
        return Err(Error::Degenerate("fiber map of the zero field".into()));
    }
    Ok(scalar_fiber(ps, s).values(t))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberReport {
    pub t_max: f64,
    pub m_max: f64,
    /// `λ ∫ f |u|^{1-δ}`.
    pub lam_f: f64,
    /// `(t1, t2)` with `t1 < t_max < t2`, absent when `λF ≥ m_max`.
    pub roots: Option<(f64, f64)>,
    /// `(φ''(t1), φ''(t2))`.
    pub ddphi: Option<(f64, f64)>,
}

impl FiberReport {
    pub fn ddphi_signs(&self) -> Option<(f64, f64)> {
        self.ddphi.map(|(a, b)| (a.signum(), b.signum()))
    }

    pub fn root(&self, branch: Branch) -> Option<f64> {
        self.roots.map(|(t1, t2)| match branch {
            Branch::Nplus => t1,
            Branch::Nminus => t2,
        })
    }
}

/// Bisection for `m(t) = level` on a bracket where `m - level` changes sign once.
fn bisect(fib: &Fiber, level: f64, mut lo: f64, mut hi: f64) -> f64 {
    let rising = fib.m(lo) < level;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (fib.m(mid) < level) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (ml, mh) = ((fib.m(lo) - level).abs(), (fib.m(hi) - level).abs());
    if ml <= mh {
        lo
    } else {
        hi
    }
}

/// Roots of `m(t) = λF` for a scalar fiber, by bracketing and bisection.
pub fn fiber_roots(fib: &Fiber) -> Result<FiberReport> {
    let s = fib.s;
    if !(s.a > 0.0 && s.g > 0.0 && s.f > 0.0) {
        return Err(Error::Degenerate(format!("fiber scalars must be positive, got {s:?}")));
    }
    let t_max = fib.t_max();
    let m_max = fib.m_max();
    let lam_f = fib.lambda * s.f;
    let mut report = FiberReport {
        t_max,
        m_max,
        lam_f,
        roots: None,
        ddphi: None,
    };
    if !(lam_f < m_max) {
        return Ok(report);
    }
    let mut trace = Vec::new();
    let mut lo = t_max;
    while fib.m(lo) >= lam_f {
        lo *= 0.5;
        trace.push(lo);
        if trace.len() > 2000 || lo == 0.0 {
            return Err(Error::Numeric(format!("no lower bracket for the N+ root; tried {trace:?}")));
        }
    }
    trace.clear();
    let mut hi = t_max;
    while fib.m(hi) >= lam_f {
        hi *= 2.0;
        trace.push(hi);
        if trace.len() > 2000 || !hi.is_finite() {
            return Err(Error::Numeric(format!("no upper bracket for the N- root; tried {trace:?}")));
        }
    }
    let t1 = bisect(fib, lam_f, lo, t_max);
    let t2 = bisect(fib, lam_f, t_max, hi);
    let (d1, d2) = (fib.ddphi(t1), fib.ddphi(t2));
    for (t, d) in [(t1, d1), (t2, d2)] {
        if d.abs() <= 1e-9 * fib.ddphi_scale(t) {
            return Err(Error::BranchCollapse(format!(
                "fiber root t = {t} lies on N0 (phi'' = {d}); lambda too large or grid too coarse"
            )));
        }
    }
    report.roots = Some((t1, t2));
    report.ddphi = Some((d1, d2));
    Ok(report)
}

pub fn fiber_critical(u: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<FiberReport> {
    let s = fiber_scalars(u, ps, k)?;
    if s.a == 0.0 {
        return Err(Error::Degenerate("fiber map of the zero field".into()));
    }
    fiber_roots(&scalar_fiber(ps, s))
}

/// Largest λ for which the sampled directions all carry two fiber roots, and the
/// closed-form lower estimate from embedding constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaStar {
    pub empirical: f64,
    /// Index of the direction attaining `empirical`.
    pub argmin: usize,
    pub directions: usize,
    /// The closed form with the exponent `(δ+q)/(δ+1-p)` and prefactor `(q+2-p)/(p-1+δ)`.
    pub formula_literal: Option<f64>,
    /// The same bound rebuilt from the substituted `m(t_max)`.
    pub formula_consistent: Option<f64>,
}

/// Embedding constants `S_α = sup { ‖u‖_α^α : [u] = 1 }` at `α = q+1` and `α = 1-δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConstants {
    pub s_q1: f64,
    pub s_1md: f64,
}

/// `m(t_max)/F`, the λ at which the fiber of `u` loses its two roots.
pub fn direction_threshold(u: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<f64> {
    let s = fiber_scalars(u, ps, k)?;
    if !(s.a > 0.0 && s.f > 0.0 && s.g > 0.0) {
        return Err(Error::Degenerate(format!("direction has a vanishing fiber scalar: {s:?}")));
    }
    Ok(scalar_fiber(ps, s).m_max() / s.f)
}

pub fn lambda_star_formula(ps: &ProblemSpec, c: EmbeddingConstants) -> (f64, f64) {
    let (p, d, q) = (ps.fp.p, ps.delta, ps.q);
    let e = (p - 1.0 + d) / (q + 1.0 - p);
    let tail = c.s_q1.powf(-e) / c.s_1md / (ps.f.sup_norm() * ps.g.sup_norm().powf(e));
    let literal = (q + 2.0 - p) / (p - 1.0 + d) * ((p - 1.0 + d) / (q + d)).powf((d + q) / (d + 1.0 - p)) * tail;
    let consistent = (q + 1.0 - p) / (q + d) * ((p - 1.0 + d) / (q + d)).powf(e) * tail;
    (literal, consistent)
}

pub fn lambda_star(dirs: &[Field], ps: &ProblemSpec, k: &KernelTable, embedding: Option<EmbeddingConstants>) -> Result<LambdaStar> {
    if dirs.is_empty() {
        return Err(Error::Parameter("lambda_star needs at least one direction".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, u) in dirs.iter().enumerate() {
        let v = direction_threshold(u, ps, k)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    let formula = embedding.map(|c| lambda_star_formula(ps, c));
    Ok(LambdaStar {
        empirical: best.0,
        argmin: best.1,
        directions: dirs.len(),
        formula_literal: formula.map(|f| f.0),
        formula_consistent: formula.map(|f| f.1),
    })
}

/// Seeded smooth positive directions for sampling λ_*.
pub fn sample_directions(grid: &GridDomain, count: usize, seed: u64) -> Vec<Field> {
    (0..count as u64)
        .map(|i| Field::random_smooth_positive(grid, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}

/// Whether every sampled direction has both fiber roots at `ps.lambda`.
pub fn has_two_roots(dirs: &[Field], ps: &ProblemSpec, k: &KernelTable) -> Result<bool> {
    for u in dirs {
        if direction_threshold(u, ps, k)? <= ps.lambda {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Nplus,
    Nminus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NehariOpts {
    /// Regularisation floors used by the descent before `eps_sing`.
    pub eps_schedule: Vec<f64>,
    /// Descent iterations per regularisation stage.
    pub stage_iters: usize,
    pub newton_iters: usize,
    /// Target for the nodal regularised Euler–Lagrange residual.
    pub tol: f64,
    /// Residuals are reported on nodes with `u` above this.
    pub report_floor: f64,
    /// Directions sampled for `λ = "auto"`.
    pub lambda_directions: usize,
    /// `λ = auto_fraction · λ_*` when λ is not given.
    pub auto_fraction: f64,
}

impl Default for NehariOpts {
    fn default() -> Self {
        NehariOpts {
            eps_schedule: vec![1e-2, 1e-4, 1e-6],
            stage_iters: 500,
            newton_iters: 60,
            tol: 1e-10,
            report_floor: 1e-6,
            lambda_directions: 64,
            auto_fraction: 0.5,
        }
    }
}

impl NehariOpts {
    pub fn validate(&self) -> Result<()> {
        if self.eps_schedule.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Parameter("eps schedule entries must be positive".into()));
        }
        if !(self.tol > 0.0) || !(self.report_floor >= 0.0) {
            return Err(Error::Parameter("nehari tol must be positive and report_floor nonnegative".into()));
        }
        if !(self.auto_fraction > 0.0 && self.auto_fraction < 1.0) || self.lambda_directions == 0 {
            return Err(Error::Parameter("auto lambda needs 0 < auto_fraction < 1 and at least one direction".into()));
        }
        Ok(())
    }
}

fn clamp_nonneg(u: &mut Field) {
    u.values.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Rescale to `[w] = 1`.
fn unit_direction(w: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<Field> {
    let a = gagliardo_energy(w, k, ps.fp.p);
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Degenerate(format!("direction has seminorm energy {a}")));
    }
    Ok(w.scaled(a.powf(-1.0 / ps.fp.p)))
}

/// `J(w)` and the branch root `t_b(w)`; `None` when the fiber has no roots.
fn reduced(w: &Field, ps: &ProblemSpec, k: &KernelTable, branch: Branch) -> Result<Option<(f64, f64)>> {
    let s = fiber_scalars(w, ps, k)?;
    if !(s.f > 0.0 && s.g > 0.0) {
        return Ok(None);
    }
    let fib = scalar_fiber(ps, s);
    let rep = match fiber_roots(&fib) {
        Ok(r) => r,
        Err(Error::BranchCollapse(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(rep.root(branch).map(|t| (fib.phi(t), t)))
}

/// Projected descent on the reduced functional at a fixed regularisation.
fn descend_stage(w0: Field, ps: &ProblemSpec, k: &KernelTable, branch: Branch, eps: f64, iters: usize, trace: &mut Vec<f64>) -> Result<Field> {
    let cell = w0.cell_measure;
    let mut w = w0;
    let Some((mut j, mut t)) = reduced(&w, ps, k, branch)? else {
        return Err(Error::BranchCollapse(format!(
            "direction has no {branch:?} fiber root at lambda = {}",
            ps.lambda
        )));
    };
    let mut prev: Option<(Field, Field)> = None;
    for _ in 0..iters {
        let grad = gradient_i(&w.scaled(t), ps, k, eps).scaled(t);
        let pg: f64 = w
            .values
            .iter()
            .zip(&grad.values)
            .map(|(wi, gi)| if *wi <= 0.0 && *gi > 0.0 { 0.0 } else { gi * gi })
            .sum::<f64>()
            .sqrt();
        if pg / cell < 1e-13 {
            break;
        }
        let mut tau = match &prev {
            Some((wp, gp)) => {
                let s = w.sub(wp);
                let y = grad.sub(gp).scaled(1.0 / cell);
                let sy = s.dot(&y);
                if sy > 0.0 {
                    s.dot(&s) / sy
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        let wmax = w.sup_norm();
        let gmax = grad.sup_norm() / cell;
        if !(tau > 0.0) || !tau.is_finite() {
            tau = 0.1 * wmax / gmax.max(f64::MIN_POSITIVE);
        }
        tau = tau.min(wmax / gmax.max(f64::MIN_POSITIVE));
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = w.add_scaled(-tau / cell, &grad);
            clamp_nonneg(&mut trial);
            let predicted = grad.dot(&trial.sub(&w));
            if trial.sup_norm() > 0.0 {
                let cand = unit_direction(&trial, ps, k)?;
                if let Some((jc, tc)) = reduced(&cand, ps, k, branch)? {
                    if jc <= j + 1e-4 * predicted && jc < j {
                        accepted = Some((cand, jc, tc));
                        break;
                    }
                }
            }
            tau *= 0.5;
        }
        let Some((cand, jc, tc)) = accepted else {
            break;
        };
        prev = Some((w, grad));
        let done = (j - jc).abs() <= 1e-15 * j.abs();
        w = cand;
        j = jc;
        t = tc;
        trace.push(j);
        if done {
            break;
        }
    }
    Ok(w)
}

/// Hessian of the regularised energy at `u > 0`.
fn hessian_i(u: &Field, ps: &ProblemSpec, k: &KernelTable, eps: f64) -> Result<DMatrix<f64>> {
    let p = ps.fp.p;
    let mut h = energy_hessian(u, k, p)? / p;
    let c = u.cell_measure;
    for i in 0..u.len() {
        let ui = u.values[i].max(0.0);
        h[(i, i)] += c
            * (ps.lambda * ps.delta * ps.f.values[i] * (ui + eps).powf(-ps.delta - 1.0)
                - ps.q * ps.g.values[i] * pow_abs(ui, ps.q - 1.0));
    }
    Ok(h)
}

fn nodal_norm(g: &Field) -> f64 {
    g.sup_norm() / g.cell_measure
}

/// Nodal size of the right-hand side `λ f (u+ε)^{-δ} + g u^q`; rounding in the
/// residual scales with it.
fn rhs_scale(u: &Field, ps: &ProblemSpec, eps: f64) -> f64 {
    u.values
        .iter()
        .enumerate()
        .map(|(i, ui)| {
            let ui = ui.max(0.0);
            ps.lambda * ps.f.values[i] * (ui + eps).powf(-ps.delta) + ps.g.values[i] * pow_abs(ui, ps.q)
        })
        .fold(0.0, f64::max)
}

/// Damped Newton on `∇I_ε(u) = 0`, keeping every node positive. The stopping
/// test is relative to the right-hand side once that exceeds one.
fn newton_polish(u0: Field, ps: &ProblemSpec, k: &KernelTable, eps: f64, opts: &NehariOpts) -> Result<Field> {
    let mut u = u0;
    let mut g = gradient_i(&u, ps, k, eps);
    let mut res = nodal_norm(&g);
    let mut trace = vec![res];
    let tol = opts.tol * rhs_scale(&u, ps, eps).max(1.0);
    for _ in 0..opts.newton_iters {
        if res < tol {
            return Ok(u);
        }
        let h = hessian_i(&u, ps, k, eps)?;
        let rhs = nalgebra::DVector::from_iterator(g.len(), g.values.iter().map(|v| -v));
        let Some(step) = h.lu().solve(&rhs) else {
            return Err(Error::Numeric("singular Hessian in Newton polish".into()));
        };
        let mut alpha: f64 = 1.0;
        for (ui, di) in u.values.iter().zip(step.iter()) {
            if *di < 0.0 {
                alpha = alpha.min(-0.9 * ui / di);
            }
        }
        let mut accepted = false;
        while alpha > 1e-10 {
            let cand = Field::new(
                u.values.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect(),
                u.cell_measure,
            );
            let gc = gradient_i(&cand, ps, k, eps);
            let rc = nodal_norm(&gc);
            if rc < res {
                u = cand;
                g = gc;
                res = rc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        trace.push(res);
        if !accepted {
            break;
        }
    }
    if res < tol.max(1e-3 * tol.sqrt()) {
        return Ok(u);
    }
    Err(Error::NonConvergence {
        iterations: trace.len() - 1,
        residual: res,
        trace,
    })
}

/// Minimiser of `I_λ` over `N⁺` or `N⁻`, returned on the Nehari manifold.
pub fn solve_branch(branch: Branch, ps: &ProblemSpec, k: &KernelTable, init: &Field, opts: &NehariOpts) -> Result<Field> {
    ps.validate(k)?;
    opts.validate()?;
    k.check_field(init)?;
    if init.values.iter().any(|v| *v < 0.0) || init.sup_norm() == 0.0 {
        return Err(Error::Parameter("initial direction must be nonnegative and nonzero".into()));
    }
    let mut w = unit_direction(init, ps, k)?;
    let mut trace = Vec::new();
    let mut schedule: Vec<f64> = opts.eps_schedule.iter().copied().filter(|e| *e > ps.eps_sing).collect();
    schedule.push(ps.eps_sing);
    for eps in &schedule {
        w = descend_stage(w, ps, k, branch, *eps, opts.stage_iters, &mut trace)?;
    }
    let Some((_, t)) = reduced(&w, ps, k, branch)? else {
        return Err(Error::BranchCollapse(format!("{branch:?} fiber root vanished during descent")));
    };
    let mut u = w.scaled(t);
    if ps.fp.p >= 2.0 && u.min() > 0.0 {
        u = newton_polish(u, ps, k, ps.eps_sing, opts)?;
    }
    let rep = fiber_critical(&u, ps, k)?;
    let Some((t1, t2)) = rep.roots else {
        return Err(Error::BranchCollapse(format!("{branch:?} solution has no fiber roots")));
    };
    let near_plus = (t1.ln()).abs() < (t2.ln()).abs();
    if near_plus != (branch == Branch::Nplus) {
        return Err(Error::BranchCollapse(format!(
            "polished {branch:?} solution moved to the other branch (roots {t1}, {t2})"
        )));
    }
    let tb = if near_plus { t1 } else { t2 };
    Ok(u.scaled(tb))
}

/// `max_ψ |⟨(-Δ_p)^s u, ψ⟩ - λ∫ f (u+ε)^{-δ} ψ - ∫ g u^q ψ| / ‖ψ‖_{L¹}`.
pub fn el_residual(u: &Field, ps: &ProblemSpec, k: &KernelTable, tests: &[Field], eps: f64) -> Result<f64> {
    k.check_field(u)?;
    let p = ps.fp.p;
    let c = u.cell_measure;
    let mut worst: f64 = 0.0;
    for psi in tests {
        k.check_field(psi)?;
        let mut rhs = 0.0;
        let mut l1 = 0.0;
        for i in 0..u.len() {
            let v = psi.values[i];
            if v == 0.0 {
                continue;
            }
            let ui = u.values[i];
            if ui < 0.0 || (eps == 0.0 && ui == 0.0) {
                return Err(Error::Degenerate(format!("test function supported where u = {ui} at node {i}")));
            }
            rhs += c * v * (ps.lambda * ps.f.values[i] * (ui + eps).powf(-ps.delta) + ps.g.values[i] * pow_abs(ui, ps.q));
            l1 += c * v.abs();
        }
        if l1 == 0.0 {
            return Err(Error::Degenerate("zero test function".into()));
        }
        worst = worst.max((weak_action(u, psi, k, p) - rhs).abs() / l1);
    }
    Ok(worst)
}

/// [`el_residual`] over the nodal indicator functions of `{u > floor}`.
pub fn nodal_el_residual(u: &Field, ps: &ProblemSpec, k: &KernelTable, eps: f64, floor: f64) -> Result<f64> {
    k.check_field(u)?;
    let g = gradient_i(u, ps, k, eps);
    let mut worst: Option<f64> = None;
    for (ui, gi) in u.values.iter().zip(&g.values) {
        if *ui > floor {
            worst = Some(worst.unwrap_or(0.0).max(gi.abs() / u.cell_measure));
        }
    }
    worst.ok_or_else(|| Error::Degenerate(format!("no node with u > {floor}")))
}

/// `|[u]^p - λ∫f|u|^{1-δ} - ∫g|u|^{q+1}| / [u]^p`.
pub fn nehari_residual(u: &Field, ps: &ProblemSpec, k: &KernelTable) -> Result<f64> {
    let s = fiber_scalars(u, ps, k)?;
    if s.a == 0.0 {
        return Err(Error::Degenerate("Nehari residual of the zero field".into()));
    }
    Ok((s.a - ps.lambda * s.f - s.g).abs() / s.a)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchResiduals {
    /// Nodal regularised Euler–Lagrange residual on `{u > report_floor}`.
    pub el: f64,
    /// Same with `ε = 0`.
    pub el_unregularized: f64,
    pub nehari: f64,
}

#[derive(Clone, Debug)]
pub struct NehariResult {
    pub lambda: f64,
    pub u_plus: Field,
    pub u_minus: Field,
    pub i_plus: f64,
    pub i_minus: f64,
    pub residual_plus: BranchResiduals,
    pub residual_minus: BranchResiduals,
    /// Fiber of the unit direction of each solution.
    pub fiber_plus: FiberReport,
    pub fiber_minus: FiberReport,
}

fn residuals(u: &Field, ps: &ProblemSpec, k: &KernelTable, opts: &NehariOpts) -> Result<BranchResiduals> {
    Ok(BranchResiduals {
        el: nodal_el_residual(u, ps, k, ps.eps_sing, opts.report_floor)?,
        el_unregularized: nodal_el_residual(u, ps, k, 0.0, opts.report_floor)?,
        nehari: nehari_residual(u, ps, k)?,
    })
}

/// Both branch solutions with their energies and residuals.
pub fn solve_nehari(ps: &ProblemSpec, k: &KernelTable, init: &Field, opts: &NehariOpts) -> Result<NehariResult> {
    let (plus, minus) = rayon::join(
        || solve_branch(Branch::Nplus, ps, k, init, opts),
        || solve_branch(Branch::Nminus, ps, k, init, opts),
    );
    let (u_plus, u_minus) = (plus?, minus?);
    let i_plus = energy_i(&u_plus, ps, k)?;
    let i_minus = energy_i(&u_minus, ps, k)?;
    if !(i_plus < 0.0 && i_minus > 0.0) {
        return Err(Error::BranchCollapse(format!(
            "energies out of order: I(u+) = {i_plus}, I(u-) = {i_minus}; lambda too large for a positive N- level"
        )));
    }
    let gap = u_plus.sub(&u_minus).integral_pow(ps.fp.p) / u_minus.integral_pow(ps.fp.p);
    if !(gap > 1e-12) {
        return Err(Error::BranchCollapse("branch solutions coincide".into()));
    }
    let unit = |u: &Field| -> Result<FiberReport> { fiber_critical(&unit_direction(u, ps, k)?, ps, k) };
    Ok(NehariResult {
        lambda: ps.lambda,
        residual_plus: residuals(&u_plus, ps, k, opts)?,
        residual_minus: residuals(&u_minus, ps, k, opts)?,
        fiber_plus: unit(&u_plus)?,
        fiber_minus: unit(&u_minus)?,
        u_plus,
        u_minus,
        i_plus,
        i_minus,
    })
}

/// `auto_fraction · λ_*` over sampled directions, with the sample's `λ_*`.
pub fn auto_lambda(grid: &GridDomain, ps: &ProblemSpec, k: &KernelTable, opts: &NehariOpts, seed: u64) -> Result<(f64, LambdaStar)> {
    let dirs = sample_directions(grid, opts.lambda_directions, seed);
    let ls = lambda_star(&dirs, ps, k, None)?;
    Ok((opts.auto_fraction * ls.empirical, ls))
}
