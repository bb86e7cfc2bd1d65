//! Batch checks of the qualitative properties of both problems.
//!
//! An [`Instance`] is a configured grid and kernel that solves its eigenproblem
//! and singular problem lazily, once. Every check returns a [`CheckReport`]
//! carrying the measured values, the tolerances it applied and a hash of the
//! instance; [`run_suite`] runs them in parallel and orders the reports by name.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::config::{LambdaChoice, RunConfig};
use crate::domain::{build_grid, GridDomain};
use crate::eigen::{minimize_rayleigh, p2_oracle, p2_spectrum, EigenResult};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::kernel::{assemble, KernelTable};
use crate::nehari::{
    fiber_roots, fiber_scalars, has_two_roots, lambda_star, sample_directions, scalar_fiber, solve_branch, solve_nehari,
    Branch, EmbeddingConstants, Fiber, FiberScalars, LambdaStar, NehariResult, ProblemSpec,
};
use crate::variational::{convex_path, energy_gradient, gagliardo_energy, monotonicity_gap, pow_abs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    /// The statement being checked.
    pub reference: String,
    pub instance: String,
    pub instance_hash: String,
    pub status: Status,
    pub measured: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl CheckReport {
    fn new(name: &str, reference: &str, inst: &Instance) -> Self {
        CheckReport {
            name: name.into(),
            reference: reference.into(),
            instance: inst.name.clone(),
            instance_hash: inst.hash.clone(),
            status: Status::Fail,
            measured: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            message: None,
        }
    }

    fn measure(&mut self, key: &str, v: f64) -> &mut Self {
        self.measured.insert(key.into(), v);
        self
    }

    fn tol(&mut self, key: &str, v: f64) -> &mut Self {
        self.tolerances.insert(key.into(), v);
        self
    }

    fn verdict(mut self, ok: bool) -> Self {
        self.status = if ok { Status::Pass } else { Status::Fail };
        self
    }

    fn skipped(mut self, why: &str) -> Self {
        self.status = Status::Skipped;
        self.message = Some(why.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// The singular problem resolved on an instance: λ fixed and the sampled λ_*.
#[derive(Clone, Debug)]
pub struct ResolvedProblem {
    pub spec: ProblemSpec,
    pub lambda_star: LambdaStar,
    pub directions: Vec<Field>,
}

/// A configured grid and kernel with lazily solved problems.
pub struct Instance {
    pub name: String,
    pub cfg: RunConfig,
    pub grid: GridDomain,
    pub kernel: KernelTable,
    pub hash: String,
    eigen: OnceLock<std::result::Result<EigenResult, String>>,
    problem: OnceLock<std::result::Result<ResolvedProblem, String>>,
    nehari: OnceLock<std::result::Result<NehariResult, String>>,
}

fn seq<T: Clone>(cell: &std::result::Result<T, String>, what: &str) -> Result<T> {
    cell.clone().map_err(|e| Error::Sequencing(format!("{what} unavailable: {e}")))
}

/// Short content hash of a configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl Instance {
    pub fn new(name: &str, cfg: RunConfig) -> Result<Instance> {
        let grid = build_grid(&cfg.domain_spec(), cfg.h)?;
        let kernel = assemble(&grid, &cfg.fp, &cfg.truncation)?;
        Ok(Instance::with_kernel(name, cfg, grid, kernel))
    }

    pub fn with_kernel(name: &str, cfg: RunConfig, grid: GridDomain, kernel: KernelTable) -> Instance {
        let hash = config_hash(&cfg);
        Instance {
            name: name.into(),
            cfg,
            grid,
            kernel,
            hash,
            eigen: OnceLock::new(),
            problem: OnceLock::new(),
            nehari: OnceLock::new(),
        }
    }

    pub fn p(&self) -> f64 {
        self.cfg.fp.p
    }

    pub fn eigen(&self) -> Result<EigenResult> {
        let cell = self.eigen.get_or_init(|| {
            minimize_rayleigh(&self.kernel, self.p(), &Field::positive_bump(&self.grid), &self.cfg.solver).map_err(|e| e.to_string())
        });
        seq(cell, "eigen solution")
    }

    /// λ_* over the configured sample of directions and the problem at the configured λ.
    pub fn problem(&self) -> Result<ResolvedProblem> {
        let cell = self.problem.get_or_init(|| self.resolve_problem().map_err(|e| e.to_string()));
        seq(cell, "problem")
    }

    /// Uncached [`Instance::problem`] with the original error.
    pub fn resolve_problem(&self) -> Result<ResolvedProblem> {
        let pc = self.cfg.problem()?;
        let provisional = pc.instantiate(&self.grid, &self.kernel, self.cfg.fp, &self.cfg.base_dir, 1.0)?;
        let directions = sample_directions(&self.grid, self.cfg.nehari.lambda_directions, self.cfg.seed);
        let ls = lambda_star(&directions, &provisional, &self.kernel, None)?;
        let lambda = match pc.lambda {
            LambdaChoice::Auto => self.cfg.nehari.auto_fraction * ls.empirical,
            LambdaChoice::Value(v) => v,
        };
        Ok(ResolvedProblem {
            spec: provisional.with_lambda(lambda),
            lambda_star: ls,
            directions,
        })
    }

    pub fn nehari(&self) -> Result<NehariResult> {
        let cell = self.nehari.get_or_init(|| {
            self.problem()
                .and_then(|rp| solve_nehari(&rp.spec, &self.kernel, &Field::positive_bump(&self.grid), &self.cfg.nehari))
                .map_err(|e| e.to_string())
        });
        seq(cell, "two-branch solution")
    }
}

/// Empirical `S_α = sup { ‖u‖_α^α : [u] = 1 }` from projected ascent.
#[derive(Clone, Debug)]
pub struct EmbeddingEstimate {
    pub value: f64,
    /// Running maximum after each start.
    pub history: Vec<f64>,
    pub maximizer: Field,
}

/// `‖u‖_α^α / [u]^α` and the ℓ² gradient of its logarithm.
fn embedding_ratio(u: &Field, k: &KernelTable, p: f64, alpha: f64) -> (f64, Field) {
    let n = u.integral_pow(alpha);
    let e = gagliardo_energy(u, k, p);
    let ge = energy_gradient(u, k, p);
    let c = u.cell_measure;
    let grad = Field::new(
        u.values
            .iter()
            .zip(&ge.values)
            .map(|(ui, gi)| alpha * c * pow_abs(*ui, alpha - 1.0) / n - alpha / p * gi / e)
            .collect(),
        c,
    );
    (n / e.powf(alpha / p), grad)
}

fn ascend(start: &Field, k: &KernelTable, p: f64, alpha: f64, iters: usize) -> (f64, Field) {
    let c = start.cell_measure;
    let floor = |u: &mut Field| {
        let m = u.sup_norm();
        let lo = if alpha < 1.0 { 1e-9 * m } else { 0.0 };
        u.values.iter_mut().for_each(|v| *v = v.abs().max(lo));
        let e = gagliardo_energy(u, k, p);
        let s = e.powf(-1.0 / p);
        u.values.iter_mut().for_each(|v| *v *= s);
    };
    let mut u = start.abs();
    floor(&mut u);
    let (mut r, mut g) = embedding_ratio(&u, k, p, alpha);
    let mut prev: Option<(Field, Field)> = None;
    for _ in 0..iters {
        let mut tau = match &prev {
            Some((up, gp)) => {
                let s = u.sub(up);
                let y = g.sub(gp).scaled(1.0 / c);
                let sy = s.dot(&y);
                if sy < 0.0 {
                    -s.dot(&s) / sy
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        let gmax = g.sup_norm() / c;
        if gmax == 0.0 {
            break;
        }
        if !(tau > 0.0) || !tau.is_finite() {
            tau = 0.05 * u.sup_norm() / gmax;
        }
        let mut accepted = None;
        for _ in 0..50 {
            let mut cand = u.add_scaled(tau / c, &g);
            floor(&mut cand);
            let (rc, gc) = embedding_ratio(&cand, k, p, alpha);
            if rc > r {
                accepted = Some((cand, rc, gc));
                break;
            }
            tau *= 0.5;
        }
        let Some((cand, rc, gc)) = accepted else {
            break;
        };
        let done = rc - r <= 1e-15 * r;
        prev = Some((std::mem::replace(&mut u, cand), std::mem::replace(&mut g, gc)));
        r = rc;
        if done {
            break;
        }
    }
    (r, u)
}

/// Best `‖u‖_α^α` over `[u] = 1` found from `restarts` seeded starts plus `inits`.
pub fn estimate_embedding_constant(
    grid: &GridDomain,
    k: &KernelTable,
    p: f64,
    alpha: f64,
    restarts: usize,
    seed: u64,
    inits: &[Field],
) -> Result<EmbeddingEstimate> {
    let p_star = k.params.p_star(&k.group);
    if !(alpha > 0.0 && alpha <= p_star) {
        return Err(Error::Parameter(format!("embedding exponent must lie in (0, {p_star}], got {alpha}")));
    }
    let mut starts: Vec<Field> = (0..restarts as u64)
        .map(|i| Field::random(grid, seed.wrapping_mul(7919).wrapping_add(i), 0.05, 1.0))
        .collect();
    for f in inits {
        k.check_field(f)?;
        starts.push(f.clone());
    }
    let runs: Vec<(f64, Field)> = starts.par_iter().map(|s| ascend(s, k, p, alpha, 3000)).collect();
    let mut history = Vec::with_capacity(runs.len());
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (v, _)) in runs.iter().enumerate() {
        if *v > best.0 {
            best = (*v, i);
        }
        history.push(best.0);
    }
    Ok(EmbeddingEstimate {
        value: best.0,
        history,
        maximizer: runs[best.1].1.clone(),
    })
}

pub fn check_p2_oracle(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new("p2_oracle", "Rayleigh minimiser equals the smallest generalised eigenvalue at p = 2", inst);
    if inst.p() != 2.0 {
        return Ok(rep.skipped("oracle only exists at p = 2"));
    }
    let eig = inst.eigen()?;
    let oracle = p2_oracle(&inst.kernel)?;
    let rel = (eig.lambda1 - oracle).abs() / oracle;
    rep.measure("lambda1_solver", eig.lambda1)
        .measure("lambda1_oracle", oracle)
        .measure("relative_error", rel)
        .tol("relative_error", 1e-8);
    Ok(rep.verdict(rel < 1e-8))
}

pub fn check_positivity_simplicity(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "positivity_simplicity",
        "first eigenfunction is strictly positive and the first eigenvalue is simple",
        inst,
    );
    let base = inst.eigen()?;
    let n = inst.cfg.verify.restarts;
    let runs: Vec<Result<EigenResult>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let init = Field::random(&inst.grid, inst.cfg.seed.wrapping_add(1000 + i), -1.0, 1.0);
            minimize_rayleigh(&inst.kernel, inst.p(), &init, &inst.cfg.solver)
        })
        .collect();
    let mut phis = vec![base.phi1.clone()];
    let mut lambdas = vec![base.lambda1];
    for r in runs {
        let r = r?;
        phis.push(r.phi1);
        lambdas.push(r.lambda1);
    }
    let min_node = phis.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    let mut min_cos: f64 = 1.0;
    for a in 0..phis.len() {
        for b in a + 1..phis.len() {
            min_cos = min_cos.min(phis[a].cosine(&phis[b]));
        }
    }
    let lmin = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rep.measure("lambda1", base.lambda1)
        .measure("lambda1_raw", base.lambda1_raw)
        .measure("min_phi1", min_node)
        .measure("min_pairwise_cosine", min_cos)
        .measure("lambda1_spread", (lmax - lmin) / lmin)
        .measure("restarts", n as f64)
        .tol("cosine_gap", 1e-6)
        .tol("min_restarts", 5.0);
    Ok(rep.verdict(min_node > 0.0 && min_cos > 1.0 - 1e-6 && n >= 5))
}

pub fn check_scaling(inst: &Instance, r: f64) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        &format!("scaling_r={r}"),
        "lambda1(D_r Omega) r^{ps} = lambda1(Omega) under the group dilation",
        inst,
    );
    let base = inst.eigen()?;
    let grid_r = inst.grid.dilated(r)?;
    if grid_r.len() != inst.grid.len() {
        return Err(Error::Config("dilated grid does not match the base grid".into()));
    }
    let k_r = assemble(&grid_r, &inst.cfg.fp, &inst.cfg.truncation)?;
    let eig_r = minimize_rayleigh(&k_r, inst.p(), &Field::positive_bump(&grid_r), &inst.cfg.solver)?;
    let ps = inst.cfg.fp.ps();
    let ratio = eig_r.lambda1 / base.lambda1;
    let rel = (eig_r.lambda1 * r.powf(ps) - base.lambda1).abs() / base.lambda1;
    rep.measure("r", r)
        .measure("lambda1", base.lambda1)
        .measure("lambda1_dilated", eig_r.lambda1)
        .measure("ratio", ratio)
        .measure("expected_ratio", r.powf(-ps))
        .measure("relative_error", rel)
        .tol("relative_error", 1e-10);
    Ok(rep.verdict(rel < 1e-10))
}

/// Measures of the nodal sets of the second `p = 2` eigenvector and the implied
/// constant `C = λ₂ |Ω_±|^{ps/Q}`.
fn nodal_constants(grid: &GridDomain, k: &KernelTable, ps: f64) -> Result<(f64, f64, f64, f64, f64)> {
    let spec = p2_spectrum(k)?;
    if spec.values.len() < 2 {
        return Err(Error::Degenerate("need at least two nodes for a second eigenvector".into()));
    }
    let v = spec.vector(1, grid.cell_measure);
    let scale = v.sup_norm();
    let plus = v.values.iter().filter(|x| **x > 1e-12 * scale).count() as f64 * grid.cell_measure;
    let minus = v.values.iter().filter(|x| **x < -1e-12 * scale).count() as f64 * grid.cell_measure;
    let q = grid.group().homogeneous_dim() as f64;
    let l2 = spec.values[1];
    Ok((l2, plus, minus, l2 * plus.powf(ps / q), l2 * minus.powf(ps / q)))
}

pub fn check_sign_change(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "sign_change",
        "eigenfunctions of eigenvalues above the first change sign; nu >= C |Omega_+|^{-ps/Q}",
        inst,
    );
    if inst.p() != 2.0 {
        return Ok(rep.skipped("second eigenvector only available from the p = 2 oracle"));
    }
    let ps = inst.cfg.fp.ps();
    let (l2, plus, minus, cp, cm) = nodal_constants(&inst.grid, &inst.kernel, ps)?;
    rep.measure("lambda2", l2)
        .measure("measure_plus", plus)
        .measure("measure_minus", minus)
        .measure("c_plus", cp)
        .measure("c_minus", cm);
    let mut ok = plus > 0.0 && minus > 0.0 && cp > 0.0;
    let fine = build_grid(&inst.grid.spec, inst.grid.h / 2.0)?;
    if fine.len() <= 2500 {
        let kf = assemble(&fine, &inst.cfg.fp, &inst.cfg.truncation)?;
        let (_, _, _, cpf, _) = nodal_constants(&fine, &kf, ps)?;
        let drift = (cpf / cp - 1.0).abs();
        rep.measure("c_plus_refined", cpf).measure("c_plus_drift", drift).tol("c_plus_drift", 0.2);
        ok &= drift < 0.2;
    }
    Ok(rep.verdict(ok))
}

pub fn check_embedding_duality(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "embedding_duality",
        "S_p = 1/lambda1 with maximiser phi1",
        inst,
    );
    let eig = inst.eigen()?;
    let p = inst.p();
    let est = estimate_embedding_constant(&inst.grid, &inst.kernel, p, p, inst.cfg.verify.embedding_restarts, inst.cfg.seed, &[])?;
    let rel = (est.value * eig.lambda1 - 1.0).abs();
    let cos = est.maximizer.cosine(&eig.phi1);
    rep.measure("s_p", est.value)
        .measure("inverse_lambda1", 1.0 / eig.lambda1)
        .measure("relative_error", rel)
        .measure("maximizer_cosine", cos)
        .tol("relative_error", 1e-6)
        .tol("cosine_gap", 1e-4);
    Ok(rep.verdict(rel < 1e-6 && est.value <= (1.0 + 1e-9) / eig.lambda1 && cos > 1.0 - 1e-4))
}

/// The scalar fiber with `A = F = G = 1`, `p = 2`, `δ = 0.5`, `q = 1.3`.
pub fn reference_fiber(lambda: f64) -> Fiber {
    Fiber {
        p: 2.0,
        delta: 0.5,
        q: 1.3,
        lambda,
        s: FiberScalars { a: 1.0, f: 1.0, g: 1.0 },
    }
}

pub fn check_fiber_structure(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "fiber_structure",
        "below lambda_* every fiber has exactly two critical points t1 < t_max < t2, on N+ and N-",
        inst,
    );
    if inst.cfg.problem.is_none() {
        return Ok(rep.skipped("no problem section"));
    }
    let rp = inst.problem()?;
    let count = inst.cfg.verify.fiber_directions;
    let dirs = sample_directions(&inst.grid, count, inst.cfg.seed.wrapping_add(17));
    let ls = lambda_star(&dirs, &rp.spec, &inst.kernel, None)?;
    let ps = rp.spec.with_lambda(0.5 * ls.empirical);
    let mut ok_count = 0usize;
    let mut worst_level: f64 = 0.0;
    for u in &dirs {
        let fib = scalar_fiber(&ps, fiber_scalars(u, &ps, &inst.kernel)?);
        let r = fiber_roots(&fib)?;
        if let (Some((t1, t2)), Some((d1, d2))) = (r.roots, r.ddphi) {
            let lvl = ((fib.m(t1) - r.lam_f).abs()).max((fib.m(t2) - r.lam_f).abs()) / r.m_max;
            worst_level = worst_level.max(lvl);
            if t1 < r.t_max && r.t_max < t2 && d1 > 0.0 && d2 < 0.0 {
                ok_count += 1;
            }
        }
    }
    let rf = reference_fiber(0.03);
    let rr = fiber_roots(&rf)?;
    let (t1, t2) = rr.roots.unwrap_or((f64::NAN, f64::NAN));
    let ref_level = (rf.m(t1) - 0.03).abs().max((rf.m(t2) - 0.03).abs());
    // Printed references carry half a unit in their last digit.
    let ref_ok = (rr.t_max - 0.54458).abs() <= 5e-6
        && (rr.m_max - 0.066980).abs() <= 5e-7
        && (t1 - 0.1757).abs() < 5e-3 * 0.1757
        && (t2 - 0.8849).abs() < 5e-3 * 0.8849
        && ref_level < 1e-10;
    rep.measure("directions", count as f64)
        .measure("lambda_star_sample", ls.empirical)
        .measure("lambda", ps.lambda)
        .measure("two_root_directions", ok_count as f64)
        .measure("max_relative_level_error", worst_level)
        .measure("ref_t_max", rr.t_max)
        .measure("ref_m_max", rr.m_max)
        .measure("ref_t1", t1)
        .measure("ref_t2", t2)
        .measure("ref_level_error", ref_level)
        .tol("level_error", 1e-10)
        .tol("ref_t_max_abs", 5e-6)
        .tol("ref_m_max_abs", 5e-7)
        .tol("ref_roots_relative", 5e-3);
    Ok(rep.verdict(ok_count == count && worst_level < 1e-10 && ref_ok))
}

pub fn check_two_solutions(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "two_solutions",
        "two distinct nonnegative solutions with I(u+) < 0 < I(u-)",
        inst,
    );
    if inst.cfg.problem.is_none() {
        return Ok(rep.skipped("no problem section"));
    }
    let rp = inst.problem()?;
    let res = inst.nehari()?;
    let p = inst.p();
    let sep = res.u_plus.sub(&res.u_minus).integral_pow(p).powf(1.0 / p) / res.u_minus.integral_pow(p).powf(1.0 / p);
    let min_node = res.u_plus.min().min(res.u_minus.min());
    let nehari = res.residual_plus.nehari.max(res.residual_minus.nehari);
    let el = res.residual_plus.el.max(res.residual_minus.el);
    rep.measure("lambda", res.lambda)
        .measure("lambda_over_lambda_star", res.lambda / rp.lambda_star.empirical)
        .measure("I_plus", res.i_plus)
        .measure("I_minus", res.i_minus)
        .measure("separation", sep)
        .measure("min_node", min_node)
        .measure("nehari_residual", nehari)
        .measure("el_residual", el)
        .measure("el_residual_unregularized", res.residual_plus.el_unregularized.max(res.residual_minus.el_unregularized))
        .tol("nehari_residual", 1e-8)
        .tol("el_residual", 1e-6)
        .tol("separation", 0.1);
    Ok(rep.verdict(res.i_plus < 0.0 && res.i_minus > 0.0 && sep > 0.1 && min_node >= 0.0 && nehari < 1e-8 && el < 1e-6))
}

pub fn check_norm_bounds(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "norm_bounds",
        "[u+] bounded above and [u-] bounded below through the embedding constants S_{1-delta}, S_{q+1}",
        inst,
    );
    if inst.cfg.problem.is_none() {
        return Ok(rep.skipped("no problem section"));
    }
    let rp = inst.problem()?;
    let res = inst.nehari()?;
    let ps = &rp.spec;
    let (p, d, q) = (ps.fp.p, ps.delta, ps.q);
    let inits = [res.u_plus.clone(), res.u_minus.clone()];
    let n = inst.cfg.verify.embedding_restarts;
    let s1 = estimate_embedding_constant(&inst.grid, &inst.kernel, p, 1.0 - d, n, inst.cfg.seed, &inits)?.value;
    let sq = estimate_embedding_constant(&inst.grid, &inst.kernel, p, q + 1.0, n, inst.cfg.seed, &inits)?.value;
    let upper = (ps.lambda * (q + d) * s1 * ps.f.sup_norm() / (q + 1.0 - p)).powf(1.0 / (p - 1.0 + d));
    let lower = ((p - 1.0 + d) / ((q + d) * sq * ps.g.sup_norm())).powf(1.0 / (q + 1.0 - p));
    let sn_plus = gagliardo_energy(&res.u_plus, &inst.kernel, p).powf(1.0 / p);
    let sn_minus = gagliardo_energy(&res.u_minus, &inst.kernel, p).powf(1.0 / p);
    let ls = lambda_star(&rp.directions, ps, &inst.kernel, Some(EmbeddingConstants { s_q1: sq, s_1md: s1 }))?;
    rep.measure("S_1_minus_delta", s1)
        .measure("S_q_plus_1", sq)
        .measure("seminorm_u_plus", sn_plus)
        .measure("upper_bound_u_plus", upper)
        .measure("seminorm_u_minus", sn_minus)
        .measure("lower_bound_u_minus", lower)
        .measure("lambda_star_empirical", ls.empirical)
        .measure("lambda_star_formula_literal", ls.formula_literal.unwrap_or(f64::NAN))
        .measure("lambda_star_formula_consistent", ls.formula_consistent.unwrap_or(f64::NAN));
    Ok(rep.verdict(sn_plus <= upper && sn_minus >= lower))
}

pub fn check_comparison(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "comparison",
        "weak comparison: a larger singular weight gives a larger N+ solution nodewise",
        inst,
    );
    if inst.cfg.problem.is_none() {
        return Ok(rep.skipped("no problem section"));
    }
    let rp = inst.problem()?;
    let u = inst.nehari()?.u_plus;
    let init = Field::positive_bump(&inst.grid);
    let tol = 1e-8;
    let mut ok = true;
    for factor in [0.8, 1.0, 1.2] {
        let ps = rp.spec.with_f(rp.spec.f.scaled(factor));
        let v = solve_branch(Branch::Nplus, &ps, &inst.kernel, &init, &inst.cfg.nehari)?;
        let below = v.values.iter().zip(&u.values).map(|(a, b)| b - a).fold(f64::NEG_INFINITY, f64::max);
        let above = v.values.iter().zip(&u.values).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        let ordered = if factor > 1.0 {
            below <= tol
        } else if factor < 1.0 {
            above <= tol
        } else {
            below.max(above) <= tol
        };
        ok &= ordered;
        rep.measure(&format!("max(u-v)_f{factor}"), below).measure(&format!("max(v-u)_f{factor}"), above);
    }
    rep.tol("nodewise", tol);
    Ok(rep.verdict(ok))
}

pub fn check_linfty_stability(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "linfty_stability",
        "solutions are bounded: sup u+ stays stable under refinement; lambda1(h) is Cauchy",
        inst,
    );
    let h_list = &inst.cfg.verify.h_list;
    if h_list.len() < 2 {
        return Ok(rep.skipped("verify.h_list needs at least two spacings"));
    }
    let rp = match &inst.cfg.problem {
        Some(_) => Some(inst.problem()?),
        None => None,
    };
    let mut sups = Vec::new();
    let mut lambdas = Vec::new();
    for h in h_list {
        let grid = build_grid(&inst.grid.spec, *h)?;
        let k = assemble(&grid, &inst.cfg.fp, &inst.cfg.truncation)?;
        let eig = minimize_rayleigh(&k, inst.p(), &Field::positive_bump(&grid), &inst.cfg.solver)
            .map_err(|e| Error::Sequencing(format!("eigen solve at h = {h}: {e}")))?;
        rep.measure(&format!("lambda1_h{h}"), eig.lambda1);
        lambdas.push(eig.lambda1);
        if let (Some(rp), Some(pc)) = (&rp, &inst.cfg.problem) {
            let ps = pc
                .instantiate(&grid, &k, inst.cfg.fp, &inst.cfg.base_dir, rp.spec.lambda)
                .map_err(|e| Error::Sequencing(format!("problem at h = {h}: {e}")))?;
            let u = solve_branch(Branch::Nplus, &ps, &k, &Field::positive_bump(&grid), &inst.cfg.nehari)
                .map_err(|e| Error::Sequencing(format!("N+ solve at h = {h}: {e}")))?;
            rep.measure(&format!("sup_u_plus_h{h}"), u.sup_norm());
            sups.push(u.sup_norm());
        }
    }
    let cauchy = lambdas.windows(2).map(|w| (w[1] - w[0]).abs() / w[0]).fold(0.0, f64::max);
    rep.measure("lambda1_max_successive_change", cauchy).tol("lambda1_successive_change", 0.05);
    let mut ok = cauchy < 0.05;
    if !sups.is_empty() {
        let lo = sups.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sups.iter().copied().fold(0.0, f64::max);
        rep.measure("sup_variation", hi / lo - 1.0).tol("sup_variation", 0.5);
        ok &= hi / lo - 1.0 < 0.5;
    }
    Ok(rep.verdict(ok))
}

pub fn check_operator_inequalities(inst: &Instance) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "operator_inequalities",
        "strict monotonicity of the operator, hidden convexity along p-interpolation, [|u|] <= [u]",
        inst,
    );
    let p = inst.p();
    let k = &inst.kernel;
    let mut min_gap = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut convex_violation: f64 = 0.0;
    let mut abs_violation: f64 = 0.0;
    for i in 0..100u64 {
        let s = inst.cfg.seed.wrapping_mul(31).wrapping_add(i);
        let u = Field::random(&inst.grid, s, -1.0, 1.0);
        let v = Field::random(&inst.grid, s + 500, -1.0, 1.0);
        let gap = monotonicity_gap(&u, &v, k, p)?;
        min_gap = min_gap.min(gap.lhs);
        min_ratio = min_ratio.min(gap.ratio());
        let eu = gagliardo_energy(&u, k, p);
        abs_violation = abs_violation.max((gagliardo_energy(&u.abs(), k, p) - eu) / eu);
        let a = u.abs().scaled(u.integral_pow(p).powf(-1.0 / p));
        let b = v.abs().scaled(v.integral_pow(p).powf(-1.0 / p));
        let (ea, eb) = (gagliardo_energy(&a, k, p), gagliardo_energy(&b, k, p));
        for t in [0.25, 0.5, 0.75] {
            let ez = gagliardo_energy(&convex_path(&a, &b, p, t), k, p);
            convex_violation = convex_violation.max((ez - (1.0 - t) * eb - t * ea) / (ea + eb));
        }
    }
    rep.measure("min_monotonicity_lhs", min_gap)
        .measure("min_monotonicity_ratio", min_ratio)
        .measure("max_convexity_violation", convex_violation)
        .measure("max_abs_violation", abs_violation)
        .tol("violation", 1e-12);
    Ok(rep.verdict(min_gap > 0.0 && convex_violation <= 1e-12 && abs_violation <= 1e-12))
}

/// One row of a λ sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub lambda_over_lambda_star: f64,
    pub has_two_roots: bool,
    pub i_plus: Option<f64>,
    pub i_minus: Option<f64>,
    pub sup_u_plus: Option<f64>,
    pub sup_u_minus: Option<f64>,
    pub error: Option<String>,
}

/// Solve at each λ; `has_two_roots` refers to the instance's sample of directions.
pub fn lambda_sweep(inst: &Instance, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    let rp = inst.problem()?;
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(Error::Config(format!("sweep lambda must be positive, got {lambda}")));
            }
            let ps = rp.spec.with_lambda(lambda);
            let two = has_two_roots(&rp.directions, &ps, &inst.kernel)?;
            let mut row = SweepRow {
                lambda,
                lambda_over_lambda_star: lambda / rp.lambda_star.empirical,
                has_two_roots: two,
                i_plus: None,
                i_minus: None,
                sup_u_plus: None,
                sup_u_minus: None,
                error: None,
            };
            if two {
                match solve_nehari(&ps, &inst.kernel, &Field::positive_bump(&inst.grid), &inst.cfg.nehari) {
                    Ok(res) => {
                        row.i_plus = Some(res.i_plus);
                        row.i_minus = Some(res.i_minus);
                        row.sup_u_plus = Some(res.u_plus.sup_norm());
                        row.sup_u_minus = Some(res.u_minus.sup_norm());
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
            } else {
                row.error = Some("no fiber roots for some sampled direction".into());
            }
            Ok(row)
        })
        .collect()
}

/// Number of changes of `has_two_roots` along the rows.
pub fn transitions(rows: &[SweepRow]) -> usize {
    rows.windows(2).filter(|w| w[0].has_two_roots != w[1].has_two_roots).count()
}

type Check = fn(&Instance) -> Result<CheckReport>;

fn failed(name: &str, inst: &Instance, e: Error) -> CheckReport {
    let mut rep = CheckReport::new(name, "check could not run", inst);
    rep.message = Some(e.to_string());
    rep
}

/// All checks on one instance, ordered by name.
pub fn run_suite(inst: &Instance) -> Vec<CheckReport> {
    let checks: Vec<(&str, Check)> = vec![
        ("comparison", check_comparison),
        ("embedding_duality", check_embedding_duality),
        ("fiber_structure", check_fiber_structure),
        ("linfty_stability", check_linfty_stability),
        ("norm_bounds", check_norm_bounds),
        ("operator_inequalities", check_operator_inequalities),
        ("p2_oracle", check_p2_oracle),
        ("positivity_simplicity", check_positivity_simplicity),
        ("sign_change", check_sign_change),
        ("two_solutions", check_two_solutions),
    ];
    let mut reports: Vec<CheckReport> = checks
        .par_iter()
        .map(|(name, f)| f(inst).unwrap_or_else(|e| failed(name, inst, e)))
        .collect();
    let scaled: Vec<CheckReport> = inst
        .cfg
        .verify
        .scaling_r
        .par_iter()
        .map(|r| check_scaling(inst, *r).unwrap_or_else(|e| failed(&format!("scaling_r={r}"), inst, e)))
        .collect();
    reports.extend(scaled);
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::group::GroupConfig;
    use crate::kernel::FracParams;

    #[test]
    fn embedding_two_node_brute_force() {
        let grid = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-0.5], vec![0.5]), 0.5).unwrap();
        assert_eq!(grid.len(), 2);
        let k = assemble(&grid, &FracParams::new(0.3, 2.0), &Default::default()).unwrap();
        let est = estimate_embedding_constant(&grid, &k, 2.0, 1.0, 8, 1, &[]).unwrap();
        let mut brute: f64 = 0.0;
        let n = 200_000;
        for i in 0..=n {
            let th = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
            let u = Field::new(vec![th.cos(), th.sin()], grid.cell_measure);
            brute = brute.max(u.integral_pow(1.0) / gagliardo_energy(&u, &k, 2.0).sqrt());
        }
        assert!((est.value - brute).abs() < 1e-6 * brute, "{} vs {brute}", est.value);
        for w in est.history.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(estimate_embedding_constant(&grid, &k, 2.0, 0.0, 1, 1, &[]).is_err());
        assert!(estimate_embedding_constant(&grid, &k, 2.0, 100.0, 1, 1, &[]).is_err());
    }

    #[test]
    fn sp_is_inverse_lambda1() {
        let grid = build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]), 0.125).unwrap();
        let k = assemble(&grid, &FracParams::new(0.3, 2.0), &Default::default()).unwrap();
        let l1 = p2_oracle(&k).unwrap();
        let est = estimate_embedding_constant(&grid, &k, 2.0, 2.0, 4, 2, &[]).unwrap();
        assert!((est.value * l1 - 1.0).abs() < 1e-8, "{}", est.value * l1);
    }
}
