//! Bounded domains and their cell-centred lattice discretisation.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::group::{self, GroupConfig, GroupPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    GaugeBall {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<GroupPoint>,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub group: GroupConfig,
    pub shape: Shape,
}

impl DomainSpec {
    pub fn gauge_ball(group: GroupConfig, radius: f64) -> Self {
        DomainSpec {
            group,
            shape: Shape::GaugeBall { radius, center: None },
        }
    }

    pub fn boxed(group: GroupConfig, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        DomainSpec {
            group,
            shape: Shape::Box { lo, hi },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.group.validate()?;
        let d = self.group.topo_dim();
        match &self.shape {
            Shape::GaugeBall { radius, center } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Domain(format!("gauge ball radius must be positive, got {radius}")));
                }
                if let Some(c) = center {
                    if c.0.len() != d || c.0.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Domain("gauge ball centre does not match the group".into()));
                    }
                }
            }
            Shape::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d {
                    return Err(Error::Domain(format!("box corners must have {d} coordinates")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::Domain("box needs lo < hi componentwise".into()));
                }
            }
        }
        Ok(())
    }

    fn center(&self) -> Vec<f64> {
        match &self.shape {
            Shape::GaugeBall { center: Some(c), .. } => c.0.clone(),
            Shape::GaugeBall { center: None, .. } => vec![0.0; self.group.topo_dim()],
            Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// Membership predicate on raw coordinates.
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::GaugeBall { radius, center } => {
                let d = match center {
                    Some(c) => group::hdistance_raw(&self.group, x, &c.0),
                    None => group::gauge_raw(&self.group, x),
                };
                d < *radius
            }
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *a < *v && *v < *b),
        }
    }

    /// Coordinate bounding box `(lo, hi)` of the domain.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::GaugeBall { radius, .. } => {
                let c = self.center();
                let r = *radius;
                let mut lo = Vec::with_capacity(c.len());
                let mut hi = Vec::with_capacity(c.len());
                let twist = match self.group {
                    GroupConfig::Heisenberg { n } => {
                        2.0 * r * c[..2 * n].iter().map(|v| v.abs()).sum::<f64>()
                    }
                    GroupConfig::Abelian { .. } => 0.0,
                };
                for (k, ck) in c.iter().enumerate() {
                    let ext = if self.group.weight(k) == 2 { r * r + twist } else { r };
                    lo.push(ck - ext);
                    hi.push(ck + ext);
                }
                (lo, hi)
            }
        }
    }

    /// Radius of a gauge ball around `x` that contains the whole domain.
    pub fn enclosing_radius(&self, x: &[f64]) -> f64 {
        let g = &self.group;
        match &self.shape {
            Shape::GaugeBall { radius, center } => {
                let c = center.as_ref().map(|c| c.0.clone()).unwrap_or_else(|| vec![0.0; x.len()]);
                group::hdistance_raw(g, x, &c) + radius
            }
            Shape::Box { lo, hi } => {
                // Translated gauge balls are convex in coordinates, so the corners decide.
                let d = lo.len();
                let mut corner = vec![0.0; d];
                let mut best: f64 = 0.0;
                for mask in 0..(1usize << d) {
                    for k in 0..d {
                        corner[k] = if mask >> k & 1 == 1 { hi[k] } else { lo[k] };
                    }
                    best = best.max(group::hdistance_raw(g, &corner, x));
                }
                best
            }
        }
    }

    /// Upper bound on the gauge diameter.
    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::GaugeBall { radius, .. } => 2.0 * radius,
            Shape::Box { .. } => 2.0 * self.enclosing_radius(&self.center()),
        }
    }

    /// Image of the domain under the dilation `D_r`.
    pub fn dilate(&self, r: f64) -> Result<DomainSpec> {
        let g = self.group;
        let shape = match &self.shape {
            Shape::GaugeBall { radius, center } => Shape::GaugeBall {
                radius: radius * r,
                center: match center {
                    Some(c) => Some(group::dilate(&g, r, c)?),
                    None => None,
                },
            },
            Shape::Box { lo, hi } => Shape::Box {
                lo: group::dilate(&g, r, &GroupPoint(lo.clone()))?.0,
                hi: group::dilate(&g, r, &GroupPoint(hi.clone()))?.0,
            },
        };
        Ok(DomainSpec { group: g, shape })
    }
}

/// Interior lattice nodes of a domain.
///
/// Node `i` sits at `spacing[c] * (index[i][c] + 1/2)`. The base grid has the
/// same spacing in every coordinate; dilation-matched grids scale the
/// centre coordinate quadratically.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    pub spec: DomainSpec,
    /// Gauge length scale of the lattice (the base spacing `h`).
    pub h: f64,
    pub spacing: Vec<f64>,
    pub cell_measure: f64,
    indices: Vec<i64>,
    nodes: Vec<f64>,
}

impl GridDomain {
    pub fn group(&self) -> &GroupConfig {
        &self.spec.group
    }

    pub fn dim(&self) -> usize {
        self.spacing.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[i * d..(i + 1) * d]
    }

    pub fn lattice_index(&self, i: usize) -> &[i64] {
        let d = self.dim();
        &self.indices[i * d..(i + 1) * d]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim())
    }

    /// Haar measure of the discrete domain.
    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_measure
    }

    /// Grid of `D_r(Ω)` whose nodes are the dilated nodes of `self`.
    pub fn dilated(&self, r: f64) -> Result<GridDomain> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("dilation factor must be positive, got {r}")));
        }
        let g = self.spec.group;
        let spacing: Vec<f64> = self
            .spacing
            .iter()
            .enumerate()
            .map(|(c, s)| if g.weight(c) == 2 { s * r * r } else { s * r })
            .collect();
        Ok(Self::from_parts(self.spec.dilate(r)?, self.h * r, spacing, self.indices.clone()))
    }

    fn from_parts(spec: DomainSpec, h: f64, spacing: Vec<f64>, indices: Vec<i64>) -> Self {
        let d = spacing.len();
        let nodes = indices
            .chunks_exact(d)
            .flat_map(|k| k.iter().zip(&spacing).map(|(&ki, s)| s * (ki as f64 + 0.5)).collect::<Vec<_>>())
            .collect();
        let cell_measure = spacing.iter().product();
        GridDomain {
            spec,
            h,
            spacing,
            cell_measure,
            indices,
            nodes,
        }
    }

    /// Keep only the nodes selected by `keep`, restricting to a smaller domain.
    pub fn restrict(&self, spec: DomainSpec, keep: impl Fn(&[f64]) -> bool) -> Result<GridDomain> {
        let d = self.dim();
        let mut idx = Vec::new();
        for i in 0..self.len() {
            if keep(self.node(i)) {
                idx.extend_from_slice(self.lattice_index(i));
            }
        }
        if idx.is_empty() {
            return Err(Error::Domain("restriction leaves no nodes".into()));
        }
        debug_assert_eq!(idx.len() % d, 0);
        Ok(Self::from_parts(spec, self.h, self.spacing.clone(), idx))
    }

    /// CSV export: `node,x0,x1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node");
        for c in 0..self.dim() {
            let _ = write!(out, ",x{c}");
        }
        out.push('\n');
        for (i, x) in self.nodes().enumerate() {
            let _ = write!(out, "{i}");
            for v in x {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Cell-centred lattice nodes `h (k + 1/2)` inside the domain, in lexicographic order of `k`.
pub fn build_grid(spec: &DomainSpec, h: f64) -> Result<GridDomain> {
    spec.validate()?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
    }
    let d = spec.group.topo_dim();
    let (lo, hi) = spec.bounding_box();
    let mut ranges = Vec::with_capacity(d);
    let mut total: u128 = 1;
    for c in 0..d {
        let k0 = (lo[c] / h - 0.5).floor() as i64 - 1;
        let k1 = (hi[c] / h - 0.5).ceil() as i64 + 1;
        total = total.saturating_mul((k1 - k0 + 1) as u128);
        ranges.push((k0, k1));
    }
    if total > 200_000_000 {
        return Err(Error::Domain(format!(
            "grid of {spec:?} at h={h} would scan {total} lattice points"
        )));
    }
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut x = vec![0.0; d];
    let mut indices = Vec::new();
    'scan: loop {
        for c in 0..d {
            x[c] = h * (k[c] as f64 + 0.5);
        }
        if spec.contains(&x) {
            indices.extend_from_slice(&k);
        }
        // odometer, last coordinate fastest
        let mut c = d;
        loop {
            if c == 0 {
                break 'scan;
            }
            c -= 1;
            if k[c] < ranges[c].1 {
                k[c] += 1;
                break;
            }
            k[c] = ranges[c].0;
        }
    }
    if indices.is_empty() {
        return Err(Error::Domain(format!("no lattice node of spacing h={h} lies inside {spec:?}")));
    }
    Ok(GridDomain::from_parts(spec.clone(), h, vec![h; d], indices))
}

#[cfg(test)]
mod tests {
    use super::*;

    const A1: GroupConfig = GroupConfig::Abelian { dim: 1 };
    const H1: GroupConfig = GroupConfig::Heisenberg { n: 1 };

    #[test]
    fn unit_interval_quarter_grid() {
        let g = build_grid(&DomainSpec::boxed(A1, vec![-1.0], vec![1.0]), 0.5).unwrap();
        let xs: Vec<f64> = g.nodes().map(|x| x[0]).collect();
        assert_eq!(xs, vec![-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(g.measure(), 2.0);
        assert_eq!(g.cell_measure, 0.5);
    }

    #[test]
    fn too_coarse_is_domain_error() {
        let err = build_grid(&DomainSpec::boxed(A1, vec![-1.0], vec![1.0]), 3.0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_grid(&DomainSpec::gauge_ball(H1, -1.0), 0.1).is_err());
        assert!(build_grid(&DomainSpec::boxed(A1, vec![1.0], vec![-1.0]), 0.1).is_err());
        assert!(build_grid(&DomainSpec::boxed(A1, vec![-1.0], vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn heisenberg_ball_matches_membership_scan() {
        let spec = DomainSpec::gauge_ball(H1, 1.0);
        let g = build_grid(&spec, 0.5).unwrap();
        // brute force over a generous cube
        let mut count = 0;
        for i in -10..10 {
            for j in -10..10 {
                for k in -10..10 {
                    let p = [0.5 * (i as f64 + 0.5), 0.5 * (j as f64 + 0.5), 0.5 * (k as f64 + 0.5)];
                    let r = ((p[0] * p[0] + p[1] * p[1]).powi(2) + p[2] * p[2]).powf(0.25);
                    if r < 1.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(g.len(), count);
        assert!(g.nodes().all(|x| spec.contains(x)));
    }

    #[test]
    fn koranyi_ball_measure_converges() {
        let g = build_grid(&DomainSpec::gauge_ball(H1, 1.0), 0.05).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!((g.measure() - exact).abs() / exact < 0.01, "{}", g.measure());
    }

    #[test]
    fn dilation_matching_is_exact() {
        let g = build_grid(&DomainSpec::gauge_ball(H1, 1.0), 0.25).unwrap();
        for r in [2.0, 0.5, 3.0] {
            let gd = g.dilated(r).unwrap();
            assert_eq!(gd.len(), g.len());
            let ratio = gd.measure() / g.measure();
            assert!((ratio - r.powi(4)).abs() < 1e-12 * r.powi(4));
            for i in 0..g.len() {
                let di = group::dilate(&H1, r, &GroupPoint(g.node(i).to_vec())).unwrap();
                for (a, b) in di.0.iter().zip(gd.node(i)) {
                    assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
                }
                assert!(gd.spec.contains(gd.node(i)) || r != 2.0 && r != 0.5);
            }
        }
    }

    #[test]
    fn builds_are_deterministic() {
        let spec = DomainSpec::gauge_ball(H1, 1.0);
        assert_eq!(build_grid(&spec, 0.2).unwrap(), build_grid(&spec, 0.2).unwrap());
    }

    #[test]
    fn off_centre_ball_nodes_inside() {
        let spec = DomainSpec {
            group: H1,
            shape: Shape::GaugeBall { radius: 0.8, center: Some(GroupPoint(vec![0.5, -0.4, 0.3])) },
        };
        let g = build_grid(&spec, 0.1).unwrap();
        assert!(g.len() > 100);
        assert!(g.nodes().all(|x| spec.contains(x)));
        // bounding box must not clip: the coarse membership scan on a wide box agrees
        let wide = build_grid(&DomainSpec::boxed(H1, vec![-3.0; 3], vec![3.0; 3]), 0.1).unwrap();
        let count = wide.nodes().filter(|x| spec.contains(x)).count();
        assert_eq!(count, g.len());
    }

    #[test]
    fn csv_export_lists_nodes() {
        let g = build_grid(&DomainSpec::boxed(A1, vec![-1.0], vec![1.0]), 0.5).unwrap();
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("node,x0\n0,-7.5e-1"));
    }
}
