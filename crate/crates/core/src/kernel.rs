//! Discrete Gagliardo kernel for `X_0^{s,p}(Ω)`.
//!
//! Pair weights `w_ij = d(x_i, x_j)^{-(Q+ps)} · cell²` cover `Ω × Ω`; the
//! complement weights `b_i = 2 · cell · ∫_{G∖Ω} d(x_i, y)^{-(Q+ps)} dy` cover the
//! two strips `Ω × Ωᶜ` and `Ωᶜ × Ω`.
//!
//! The complement mass is integrated in gauge-polar coordinates around each node:
//! along every direction `ω` of a sphere quadrature the ray `x_i ∘ D_ρ ω` is
//! scanned out to `R_t`, exit/re-entry radii are located by bisection, and each
//! exterior interval `[a, b]` contributes `(a^{-ps} - b^{-ps}) / ps` exactly.
//! Everything beyond `R_t` is exterior and adds `R_t^{-ps} / ps` per direction,
//! which sums to the analytic remainder `σ_S R_t^{-ps} / ps`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, GridDomain};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::group::{self, GroupConfig, GroupPoint};
use crate::sphere::{self, DirectionQuadrature};

/// Fractional order `s` and integrability exponent `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FracParams {
    pub s: f64,
    pub p: f64,
}

impl FracParams {
    pub fn new(s: f64, p: f64) -> Self {
        FracParams { s, p }
    }

    pub fn ps(&self) -> f64 {
        self.p * self.s
    }

    /// Kernel exponent `Q + ps`.
    pub fn kernel_exponent(&self, cfg: &GroupConfig) -> f64 {
        cfg.homogeneous_dim() as f64 + self.ps()
    }

    /// Critical Sobolev exponent `Qp / (Q - sp)`.
    pub fn p_star(&self, cfg: &GroupConfig) -> f64 {
        let q = cfg.homogeneous_dim() as f64;
        q * self.p / (q - self.ps())
    }

    pub fn validate(&self, cfg: &GroupConfig) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Parameter(format!("s must lie in (0,1), got {}", self.s)));
        }
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(Error::Parameter(format!("p must exceed 1, got {}", self.p)));
        }
        let q = cfg.homogeneous_dim() as f64;
        if !(q > self.ps()) {
            return Err(Error::Parameter(format!(
                "need Q > sp, got Q = {q}, sp = {}",
                self.ps()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExteriorStep {
    Named(String),
    Fixed(f64),
}

impl Default for ExteriorStep {
    fn default() -> Self {
        ExteriorStep::Named("same-as-grid".into())
    }
}

/// Controls the complement quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationPolicy {
    /// Ray scan radius as a multiple of the domain's gauge diameter.
    #[serde(rename = "R_t_factor", default = "default_rt_factor")]
    pub r_t_factor: f64,
    /// Radial sampling step along rays; `"same-as-grid"` uses the grid spacing `h`.
    #[serde(default)]
    pub exterior_h: ExteriorStep,
    /// Polar resolution of the direction quadrature.
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_rt_factor() -> f64 {
    8.0
}

fn default_directions() -> usize {
    24
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            r_t_factor: default_rt_factor(),
            exterior_h: ExteriorStep::default(),
            directions: default_directions(),
        }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_t_factor >= 1.0) || !self.r_t_factor.is_finite() {
            return Err(Error::Policy(format!(
                "truncation radius must be at least the domain diameter (R_t_factor = {})",
                self.r_t_factor
            )));
        }
        match &self.exterior_h {
            ExteriorStep::Named(s) if s == "same-as-grid" => {}
            ExteriorStep::Named(s) => {
                return Err(Error::Policy(format!("unknown exterior_h '{s}'")));
            }
            ExteriorStep::Fixed(v) if !(*v > 0.0) || !v.is_finite() => {
                return Err(Error::Policy(format!("exterior_h must be positive, got {v}")));
            }
            ExteriorStep::Fixed(_) => {}
        }
        if self.directions == 0 || self.directions > 4096 {
            return Err(Error::Policy(format!("directions must be in 1..=4096, got {}", self.directions)));
        }
        Ok(())
    }

    fn step(&self, grid_h: f64) -> f64 {
        match self.exterior_h {
            ExteriorStep::Fixed(v) => v,
            ExteriorStep::Named(_) => grid_h,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    pub group: GroupConfig,
    pub params: FracParams,
    pub cell_measure: f64,
    n: usize,
    pair: Vec<f64>,
    complement: Vec<f64>,
}

impl KernelTable {
    pub fn from_parts(
        group: GroupConfig,
        params: FracParams,
        cell_measure: f64,
        pair: Vec<f64>,
        complement: Vec<f64>,
    ) -> Result<Self> {
        let n = complement.len();
        if pair.len() != n * n {
            return Err(Error::Config(format!("pair table has {} entries, expected {}", pair.len(), n * n)));
        }
        Ok(KernelTable {
            group,
            params,
            cell_measure,
            n,
            pair,
            complement,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.pair[i * self.n..(i + 1) * self.n]
    }

    pub fn pair_weights(&self) -> &[f64] {
        &self.pair
    }

    pub fn complement(&self) -> &[f64] {
        &self.complement
    }

    pub fn p(&self) -> f64 {
        self.params.p
    }

    /// Fields must have one value per node.
    pub fn check_field(&self, u: &Field) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::Config(format!(
                "field has {} values, kernel has {} nodes",
                u.len(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Assemble pair and complement weights for `grid`.
pub fn assemble(grid: &GridDomain, fp: &FracParams, trunc: &TruncationPolicy) -> Result<KernelTable> {
    let g = *grid.group();
    fp.validate(&g)?;
    trunc.validate()?;
    let n = grid.len();
    let expo = fp.kernel_exponent(&g);
    let cell2 = grid.cell_measure * grid.cell_measure;

    let pair: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = grid.node(i);
            (0..n).map(move |j| {
                if i == j {
                    0.0
                } else {
                    kernel_value(group::hdistance_raw(&g, xi, grid.node(j)), expo) * cell2
                }
            })
        })
        .collect();

    let rays = RayQuadrature::new(&grid.spec, fp, trunc, grid.h);
    let complement: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| 2.0 * grid.cell_measure * rays.complement_mass(grid.node(i)))
        .collect();

    if let Some(bad) = complement.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::Numeric(format!("complement weight of node {bad} is {}", complement[bad])));
    }
    KernelTable::from_parts(g, *fp, grid.cell_measure, pair, complement)
}

#[inline]
fn kernel_value(d: f64, expo: f64) -> f64 {
    if expo == 5.0 {
        let d2 = d * d;
        1.0 / (d2 * d2 * d)
    } else {
        d.powf(-expo)
    }
}

/// Ray integration of `∫_{G∖Ω} d(x, y)^{-(Q+ps)} dy` around arbitrary points.
pub struct RayQuadrature {
    spec: DomainSpec,
    dirs: DirectionQuadrature,
    ps: f64,
    r_t: f64,
    step: f64,
}

impl RayQuadrature {
    pub fn new(spec: &DomainSpec, fp: &FracParams, trunc: &TruncationPolicy, grid_h: f64) -> Self {
        RayQuadrature {
            spec: spec.clone(),
            dirs: DirectionQuadrature::new(&spec.group, trunc.directions),
            ps: fp.ps(),
            r_t: trunc.r_t_factor * spec.diameter(),
            step: trunc.step(grid_h),
        }
    }

    pub fn truncation_radius(&self) -> f64 {
        self.r_t
    }

    /// `∫_{G∖Ω} d(x, y)^{-(Q+ps)} dy` for a point `x` (inside or outside Ω).
    pub fn complement_mass(&self, x: &[f64]) -> f64 {
        let g = self.spec.group;
        let ps = self.ps;
        let r_t = self.r_t.max(self.spec.enclosing_radius(x));
        let steps = (r_t / self.step).ceil().max(1.0) as usize;
        let mut y = vec![0.0; x.len()];
        let mut w = vec![0.0; x.len()];
        let mut inside_at = |rho: f64, omega: &[f64]| {
            w.copy_from_slice(omega);
            group::dilate_in_place(&g, rho, &mut w);
            group::compose_into(&g, x, &w, &mut y);
            self.spec.contains(&y)
        };
        let tail = r_t.powf(-ps) / ps;
        let mut total = 0.0;
        for k in 0..self.dirs.len() {
            let omega = self.dirs.direction(k);
            let mut mass = 0.0;
            let mut inside = self.spec.contains(x);
            // start of the current exterior interval
            let mut exit_at = if inside { f64::NAN } else { 0.0 };
            let mut prev = 0.0;
            for s in 1..=steps {
                let rho = if s == steps { r_t } else { s as f64 * self.step };
                let now = inside_at(rho, omega);
                if now != inside {
                    let (mut a, mut b) = (prev, rho);
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        if mid <= a || mid >= b {
                            break;
                        }
                        if inside_at(mid, omega) == inside {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    let cross = 0.5 * (a + b);
                    if inside {
                        exit_at = cross;
                    } else {
                        mass += radial_mass(exit_at, cross, ps);
                    }
                    inside = now;
                }
                prev = rho;
            }
            if !inside {
                mass += radial_mass(exit_at, r_t, ps);
            }
            total += self.dirs.weights[k] * (mass + tail);
        }
        total
    }

    /// `∫_S ∫_R^∞ |v(x ∘ D_ρ ω)|^{e} ρ^{-1-ps} dρ dσ(ω)` with the substitution
    /// `τ = ρ^{-ps}`, which maps the radial integral onto the finite interval `(0, R^{-ps})`.
    pub fn exterior_moment(&self, x: &[f64], radius: f64, e: f64, v: impl Fn(&[f64]) -> f64) -> f64 {
        let g = self.spec.group;
        let ps = self.ps;
        let (nodes, weights) = sphere::gauss_legendre(48);
        let tau_max = radius.powf(-ps);
        let mut y = vec![0.0; x.len()];
        let mut w = vec![0.0; x.len()];
        let mut total = 0.0;
        for k in 0..self.dirs.len() {
            let omega = self.dirs.direction(k);
            let mut line = 0.0;
            for (z, wz) in nodes.iter().zip(&weights) {
                let tau = 0.5 * tau_max * (z + 1.0);
                let rho = tau.powf(-1.0 / ps);
                w.copy_from_slice(omega);
                group::dilate_in_place(&g, rho, &mut w);
                group::compose_into(&g, x, &w, &mut y);
                line += 0.5 * tau_max * wz * v(&y).abs().powf(e);
            }
            total += self.dirs.weights[k] * line / ps;
        }
        total
    }
}

#[inline]
fn radial_mass(a: f64, b: f64, ps: f64) -> f64 {
    let lower = if a > 0.0 { a.powf(-ps) } else { f64::INFINITY };
    (lower - b.powf(-ps)) / ps
}

/// Nonlocal tail `[R^{sp} ∫_{G∖B_R(x₀)} |v|^{p-1} d(x, x₀)^{-(Q+ps)} dx]^{1/(p-1)}` of a grid field.
pub fn tail(field: &Field, center: &GroupPoint, radius: f64, fp: &FracParams, grid: &GridDomain) -> Result<f64> {
    let g = *grid.group();
    if center.0.len() != g.topo_dim() {
        return Err(Error::Config("tail centre does not match the group".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("tail radius must be positive, got {radius}")));
    }
    if field.len() != grid.len() {
        return Err(Error::Config("field does not match grid".into()));
    }
    let expo = fp.kernel_exponent(&g);
    let p = fp.p;
    let mut sum = 0.0;
    for (x, v) in grid.nodes().zip(&field.values) {
        let d = group::hdistance_raw(&g, x, &center.0);
        if d >= radius && *v != 0.0 {
            sum += grid.cell_measure * v.abs().powf(p - 1.0) * d.powf(-expo);
        }
    }
    Ok((radius.powf(fp.ps()) * sum).powf(1.0 / (p - 1.0)))
}

/// Tail of an arbitrary function defined on the whole group, by ray quadrature.
pub fn tail_of_fn(
    v: impl Fn(&[f64]) -> f64,
    cfg: &GroupConfig,
    center: &GroupPoint,
    radius: f64,
    fp: &FracParams,
    directions: usize,
) -> f64 {
    let spec = DomainSpec::gauge_ball(*cfg, radius);
    let trunc = TruncationPolicy {
        directions,
        ..TruncationPolicy::default()
    };
    let rays = RayQuadrature::new(&spec, fp, &trunc, radius);
    let integral = rays.exterior_moment(&center.0, radius, fp.p - 1.0, v);
    (radius.powf(fp.ps()) * integral).powf(1.0 / (fp.p - 1.0))
}

/// `σ_S` for the grid's group (closed form where available).
pub fn sphere_constant(cfg: &GroupConfig) -> f64 {
    sphere::sphere_constant(cfg)
}
