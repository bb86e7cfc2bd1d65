//! Polar decomposition of Haar measure: unit-ball volumes, the gauge-sphere
//! constant `σ_S = Q |B(0,1)|`, and direction quadratures on the unit gauge sphere.
//!
//! In gauge-polar coordinates `y = x ∘ D_ρ ω` the Haar measure splits as
//! `dy = ρ^{Q-1} dρ dσ(ω)`, so radial kernel integrals reduce to one-dimensional
//! integrals along dilation rays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::group::{self, GroupConfig};

/// Samples used when a closed form for the ball volume is unavailable.
const MC_VOLUME_SAMPLES: usize = 2_000_000;
const MC_SEED: u64 = 0x5eed_ba11;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Monte Carlo estimate of the unit gauge ball volume (rejection from its bounding box).
pub fn mc_ball_volume(cfg: &GroupConfig, samples: usize, seed: u64) -> f64 {
    let d = cfg.topo_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        if group::gauge_raw(cfg, &z) < 1.0 {
            hits += 1;
        }
    }
    // every coordinate of the unit ball lies in [-1, 1] (|t| <= 1 on H^n too)
    hits as f64 / samples as f64 * 2f64.powi(d as i32)
}

/// Volume of the unit gauge ball `|B(0,1)|`.
pub fn unit_ball_volume(cfg: &GroupConfig) -> f64 {
    match *cfg {
        GroupConfig::Abelian { dim } => euclidean_ball_volume(dim),
        GroupConfig::Heisenberg { n: 1 } => PI * PI / 2.0,
        GroupConfig::Heisenberg { .. } => mc_ball_volume(cfg, MC_VOLUME_SAMPLES, MC_SEED),
    }
}

fn euclidean_ball_volume(dim: usize) -> f64 {
    let (mut v, mut k) = if dim % 2 == 0 { (1.0, 0) } else { (2.0, 1) };
    while k < dim {
        k += 2;
        v *= 2.0 * PI / k as f64;
    }
    v
}

/// Gauge-sphere constant `σ_S = Q |B(0,1)|`.
pub fn sphere_constant(cfg: &GroupConfig) -> f64 {
    cfg.homogeneous_dim() as f64 * unit_ball_volume(cfg)
}

/// Weighted directions on the unit gauge sphere; weights sum to `σ_S`.
#[derive(Clone, Debug)]
pub struct DirectionQuadrature {
    dim: usize,
    dirs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DirectionQuadrature {
    /// Tensor rules for `R^1`, `R^2`, `R^3` and `H^1`; seeded cone sampling otherwise.
    /// `resolution` is the number of polar nodes (azimuthal nodes are doubled).
    pub fn new(cfg: &GroupConfig, resolution: usize) -> Self {
        let m = resolution.max(2);
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        match *cfg {
            GroupConfig::Abelian { dim: 1 } => {
                dirs.extend_from_slice(&[1.0, -1.0]);
                weights.extend_from_slice(&[1.0, 1.0]);
            }
            GroupConfig::Abelian { dim: 2 } => {
                let k = 2 * m;
                for j in 0..k {
                    let b = 2.0 * PI * (j as f64 + 0.5) / k as f64;
                    dirs.extend_from_slice(&[b.cos(), b.sin()]);
                    weights.push(2.0 * PI / k as f64);
                }
            }
            GroupConfig::Abelian { dim: 3 } => {
                let (zs, wz) = gauss_legendre(m);
                let k = 2 * m;
                for (z, wz) in zs.iter().zip(&wz) {
                    let r = (1.0 - z * z).sqrt();
                    for j in 0..k {
                        let b = 2.0 * PI * (j as f64 + 0.5) / k as f64;
                        dirs.extend_from_slice(&[r * b.cos(), r * b.sin(), *z]);
                        weights.push(wz * 2.0 * PI / k as f64);
                    }
                }
            }
            GroupConfig::Heisenberg { n: 1 } => {
                // x + iy = sqrt(cos a) e^{ib}, t = sin a; the surface element is da db.
                let (zs, wz) = gauss_legendre(m);
                let k = 2 * m;
                for (z, wz) in zs.iter().zip(&wz) {
                    let a = 0.5 * PI * z;
                    let r = a.cos().max(0.0).sqrt();
                    for j in 0..k {
                        let b = 2.0 * PI * (j as f64 + 0.5) / k as f64;
                        dirs.extend_from_slice(&[r * b.cos(), r * b.sin(), a.sin()]);
                        weights.push(0.5 * PI * wz * 2.0 * PI / k as f64);
                    }
                }
            }
            _ => {
                // Uniform points of the unit ball pushed radially onto the sphere are
                // distributed as dσ / σ_S.
                let count = 4 * m * m;
                let d = cfg.topo_dim();
                let sigma = sphere_constant(cfg);
                let mut rng = ChaCha8Rng::seed_from_u64(MC_SEED ^ count as u64);
                let mut z = vec![0.0; d];
                while weights.len() < count {
                    for v in z.iter_mut() {
                        *v = rng.random_range(-1.0..1.0);
                    }
                    let rho = group::gauge_raw(cfg, &z);
                    if rho < 1.0 && rho > 1e-3 {
                        group::dilate_in_place(cfg, 1.0 / rho, &mut z);
                        dirs.extend_from_slice(&z);
                        weights.push(sigma / count as f64);
                    }
                }
            }
        }
        DirectionQuadrature {
            dim: cfg.topo_dim(),
            dirs,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.dirs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let int = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-14);
        assert!((int(14) - 2.0 / 15.0).abs() < 1e-14);
        assert!(int(7).abs() < 1e-15);
    }

    #[test]
    fn closed_form_volumes() {
        assert_eq!(unit_ball_volume(&GroupConfig::Abelian { dim: 1 }), 2.0);
        assert!((unit_ball_volume(&GroupConfig::Abelian { dim: 2 }) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(&GroupConfig::Abelian { dim: 3 }) - 4.0 * PI / 3.0).abs() < 1e-14);
        let h1 = GroupConfig::Heisenberg { n: 1 };
        assert!((sphere_constant(&h1) - 2.0 * PI * PI).abs() < 1e-13);
        assert_eq!(sphere_constant(&GroupConfig::Abelian { dim: 1 }), 2.0);
    }

    #[test]
    fn monte_carlo_volume_agrees_with_closed_form() {
        let h1 = GroupConfig::Heisenberg { n: 1 };
        let est = mc_ball_volume(&h1, 10_000_000, 11);
        let exact = PI * PI / 2.0;
        assert!((est - exact).abs() / exact < 0.005, "{est}");
        let sigma = 4.0 * est;
        assert!((sigma - 2.0 * PI * PI).abs() / (2.0 * PI * PI) < 0.005);
    }

    #[test]
    fn heisenberg_n2_volume_matches_beta_integral() {
        // |B| = 2 |S^{2n-1}| ∫_0^1 r^{2n-1} sqrt(1 - r^4) dr; for n = 2 the integral is 1/6.
        let exact = 2.0 * (2.0 * PI * PI) / 6.0;
        let est = unit_ball_volume(&GroupConfig::Heisenberg { n: 2 });
        assert!((est - exact).abs() / exact < 0.01, "{est} vs {exact}");
    }

    #[test]
    fn direction_weights_sum_to_sphere_constant() {
        for cfg in [
            GroupConfig::Abelian { dim: 1 },
            GroupConfig::Abelian { dim: 2 },
            GroupConfig::Abelian { dim: 3 },
            GroupConfig::Heisenberg { n: 1 },
            GroupConfig::Heisenberg { n: 2 },
        ] {
            let q = DirectionQuadrature::new(&cfg, 12);
            let sigma = sphere_constant(&cfg);
            assert!((q.total_weight() - sigma).abs() < 1e-12 * sigma, "{cfg:?}");
            for k in 0..q.len() {
                let g = group::gauge_raw(&cfg, q.direction(k));
                assert!((g - 1.0).abs() < 1e-12, "{cfg:?} {g}");
            }
        }
    }

    #[test]
    fn heisenberg_rule_integrates_polar_moments() {
        // ∫_{B(0,1)} t^2 dy = ∫_S ∫_0^1 (ρ^2 sin a)^2 ρ^3 dρ dσ = (1/8) ∫ sin^2 a da db = π^2/8
        let cfg = GroupConfig::Heisenberg { n: 1 };
        let q = DirectionQuadrature::new(&cfg, 16);
        let val: f64 = (0..q.len())
            .map(|k| q.weights[k] * q.direction(k)[2].powi(2) / 8.0)
            .sum();
        assert!((val - PI * PI / 8.0).abs() < 1e-12, "{val}");
    }
}
