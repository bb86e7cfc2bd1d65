//! Group law, dilations and the homogeneous gauge for the two supported
//! stratified groups: abelian `R^N` and the Heisenberg group `H^n`.
//!
//! Heisenberg points are stored flat as `(x_1..x_n, y_1..y_n, t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "group", rename_all = "lowercase")]
pub enum GroupConfig {
    Abelian { dim: usize },
    Heisenberg { n: usize },
}

impl GroupConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GroupConfig::Abelian { dim: 0 } => {
                Err(Error::Config("abelian group needs dim >= 1".into()))
            }
            GroupConfig::Heisenberg { n: 0 } => {
                Err(Error::Config("Heisenberg group needs n >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Homogeneous dimension `Q`.
    pub fn homogeneous_dim(&self) -> usize {
        match *self {
            GroupConfig::Abelian { dim } => dim,
            GroupConfig::Heisenberg { n } => 2 * n + 2,
        }
    }

    /// Number of coordinates of a point.
    pub fn topo_dim(&self) -> usize {
        match *self {
            GroupConfig::Abelian { dim } => dim,
            GroupConfig::Heisenberg { n } => 2 * n + 1,
        }
    }

    /// Dilation weight of coordinate `c` (1 for the first layer, 2 for the centre).
    pub fn weight(&self, c: usize) -> i32 {
        match *self {
            GroupConfig::Heisenberg { n } if c == 2 * n => 2,
            _ => 1,
        }
    }

    pub fn identity(&self) -> GroupPoint {
        GroupPoint(vec![0.0; self.topo_dim()])
    }

    fn check(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.topo_dim() {
            return Err(Error::Config(format!(
                "point has {} coordinates, group {:?} expects {}",
                a.len(),
                self,
                self.topo_dim()
            )));
        }
        Ok(())
    }

    /// Label used in reports.
    pub fn label(&self) -> String {
        match *self {
            GroupConfig::Abelian { dim } => format!("abelian(R^{dim})"),
            GroupConfig::Heisenberg { n } => format!("heisenberg(H^{n})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupPoint(pub Vec<f64>);

impl GroupPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        GroupPoint(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for GroupPoint {
    fn from(v: Vec<f64>) -> Self {
        GroupPoint(v)
    }
}

/// Group product `a ∘ b`.
pub fn compose(cfg: &GroupConfig, a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
    cfg.check(&a.0)?;
    cfg.check(&b.0)?;
    let mut out = vec![0.0; a.0.len()];
    compose_into(cfg, &a.0, &b.0, &mut out);
    Ok(GroupPoint(out))
}

/// Unchecked product written into `out`; all slices must have `topo_dim` entries.
pub fn compose_into(cfg: &GroupConfig, a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
    if let GroupConfig::Heisenberg { n } = *cfg {
        // t + t' + 2(<x', y> - <x, y'>)
        let mut sym = 0.0;
        for k in 0..n {
            sym += b[k] * a[n + k] - a[k] * b[n + k];
        }
        out[2 * n] += 2.0 * sym;
    }
}

pub fn inverse(cfg: &GroupConfig, a: &GroupPoint) -> Result<GroupPoint> {
    cfg.check(&a.0)?;
    Ok(GroupPoint(a.0.iter().map(|x| -x).collect()))
}

/// Anisotropic dilation `D_r`.
pub fn dilate(cfg: &GroupConfig, r: f64, a: &GroupPoint) -> Result<GroupPoint> {
    cfg.check(&a.0)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("dilation factor must be positive, got {r}")));
    }
    let mut out = a.0.clone();
    dilate_in_place(cfg, r, &mut out);
    Ok(GroupPoint(out))
}

pub(crate) fn dilate_in_place(cfg: &GroupConfig, r: f64, a: &mut [f64]) {
    for (c, x) in a.iter_mut().enumerate() {
        *x *= if cfg.weight(c) == 2 { r * r } else { r };
    }
}

/// Homogeneous gauge: Euclidean norm on `R^N`, Korányi gauge on `H^n`.
pub fn gauge(cfg: &GroupConfig, a: &GroupPoint) -> Result<f64> {
    cfg.check(&a.0)?;
    Ok(gauge_raw(cfg, &a.0))
}

#[inline]
pub fn gauge_raw(cfg: &GroupConfig, a: &[f64]) -> f64 {
    match *cfg {
        GroupConfig::Abelian { dim } => {
            if dim == 1 {
                a[0].abs()
            } else {
                a.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
        }
        GroupConfig::Heisenberg { n } => {
            let horizontal: f64 = a[..2 * n].iter().map(|x| x * x).sum();
            let t = a[2 * n];
            (horizontal * horizontal + t * t).sqrt().sqrt()
        }
    }
}

/// Left-invariant distance `|b^{-1} ∘ a|`.
pub fn hdistance(cfg: &GroupConfig, a: &GroupPoint, b: &GroupPoint) -> Result<f64> {
    cfg.check(&a.0)?;
    cfg.check(&b.0)?;
    Ok(hdistance_raw(cfg, &a.0, &b.0))
}

#[inline]
pub fn hdistance_raw(cfg: &GroupConfig, a: &[f64], b: &[f64]) -> f64 {
    match *cfg {
        GroupConfig::Abelian { dim } => {
            if dim == 1 {
                (a[0] - b[0]).abs()
            } else {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
        }
        GroupConfig::Heisenberg { n } => {
            let mut horizontal = 0.0;
            let mut sym = 0.0;
            for k in 0..n {
                let dx = a[k] - b[k];
                let dy = a[n + k] - b[n + k];
                horizontal += dx * dx + dy * dy;
                sym += b[k] * a[n + k] - a[k] * b[n + k];
            }
            let t = a[2 * n] - b[2 * n] + 2.0 * sym;
            (horizontal * horizontal + t * t).sqrt().sqrt()
        }
    }
}
