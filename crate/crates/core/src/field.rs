//! Nodal fields on a grid, implicitly zero outside the domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

use crate::domain::GridDomain;
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"SSFD";
const BINARY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub cell_measure: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, cell_measure: f64) -> Self {
        Field { values, cell_measure }
    }

    pub fn zeros(grid: &GridDomain) -> Self {
        Field::new(vec![0.0; grid.len()], grid.cell_measure)
    }

    pub fn constant(grid: &GridDomain, c: f64) -> Self {
        Field::new(vec![c; grid.len()], grid.cell_measure)
    }

    pub fn from_fn(grid: &GridDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        Field::new(grid.nodes().map(f).collect(), grid.cell_measure)
    }

    /// Product of coordinate hat functions over the domain's bounding box; strictly
    /// positive at every node.
    pub fn positive_bump(grid: &GridDomain) -> Self {
        let (lo, hi) = grid.spec.bounding_box();
        Field::from_fn(grid, |x| {
            x.iter()
                .enumerate()
                .map(|(c, v)| {
                    let half = 0.5 * (hi[c] - lo[c]);
                    let mid = 0.5 * (hi[c] + lo[c]);
                    (1.0 - ((v - mid) / half).abs()).max(1e-3)
                })
                .product()
        })
    }

    /// Values uniform in `[lo, hi)`, reproducible from `seed`.
    pub fn random(grid: &GridDomain, seed: u64, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(
            (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect(),
            grid.cell_measure,
        )
    }

    /// A smooth positive direction: the bump raised to a random power times the
    /// exponential of a random linear function of the coordinates.
    pub fn random_smooth_positive(grid: &GridDomain, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bump = Field::positive_bump(grid);
        let (lo, hi) = grid.spec.bounding_box();
        let expo: f64 = rng.random_range(0.6..1.6);
        let slopes: Vec<f64> = (0..grid.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = grid
            .nodes()
            .zip(&bump.values)
            .map(|(x, b)| {
                let lin: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(c, v)| slopes[c] * (v - 0.5 * (lo[c] + hi[c])) / (0.5 * (hi[c] - lo[c])))
                    .sum();
                b.powf(expo) * lin.exp()
            })
            .collect();
        Field::new(values, grid.cell_measure)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field::new(self.values.iter().map(|v| c * v).collect(), self.cell_measure)
    }

    pub fn abs(&self) -> Field {
        Field::new(self.values.iter().map(|v| v.abs()).collect(), self.cell_measure)
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field::new(
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            self.cell_measure,
        )
    }

    pub fn add_scaled(&self, c: f64, other: &Field) -> Field {
        Field::new(
            self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
            self.cell_measure,
        )
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// ℓ² cosine similarity.
    pub fn cosine(&self, other: &Field) -> f64 {
        self.dot(other) / (self.dot(self).sqrt() * other.dot(other).sqrt())
    }

    /// `‖u‖_r^r = Σ cell |u_i|^r`.
    pub fn lp_norm_pow(&self, r: f64) -> Result<f64> {
        if !(r >= 1.0) {
            return Err(Error::Parameter(format!("L^r norm needs r >= 1, got {r}")));
        }
        Ok(self.integral_pow(r))
    }

    /// `Σ cell |u_i|^r` for any `r > 0` (quasi-norms below 1 included).
    pub fn integral_pow(&self, r: f64) -> f64 {
        self.cell_measure * self.values.iter().map(|v| crate::variational::pow_abs(*v, r)).sum::<f64>()
    }

    /// `Σ cell w_i |u_i|^r`.
    pub fn weighted_integral_pow(&self, weight: &Field, r: f64) -> f64 {
        self.cell_measure
            * self
                .values
                .iter()
                .zip(&weight.values)
                .map(|(v, w)| w * crate::variational::pow_abs(*v, r))
                .sum::<f64>()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v:e}");
        }
        out
    }

    /// Parse `node,value` CSV; nodes must be listed as `0..n` in order.
    pub fn from_csv(text: &str, grid: &GridDomain) -> Result<Field> {
        let values = parse_field_csv(text)?;
        if values.len() != grid.len() {
            return Err(Error::Parse(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field::new(values, grid.cell_measure))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.cell_measure.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decode the flat binary layout: magic, version, count, cell measure, values (all LE).
    pub fn from_bytes(bytes: &[u8]) -> Result<Field> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != BINARY_MAGIC {
            return Err(Error::Parse("bad field magic".into()));
        }
        let version = r.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Parse(format!("unsupported field version {version}")));
        }
        let n = r.u64()?;
        let cell = r.f64()?;
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::Parse("cell measure must be positive".into()));
        }
        if n.checked_mul(8) != Some(r.remaining() as u64) {
            return Err(Error::Parse(format!("expected {n} values, found {} bytes", r.remaining())));
        }
        let mut values = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::Parse("non-finite field value".into()));
            }
            values.push(v);
        }
        Ok(Field::new(values, cell))
    }
}

pub fn parse_field_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some(h) if h.replace(' ', "") == "node,value" => {}
        other => return Err(Error::Parse(format!("expected header 'node,value', got {other:?}"))),
    }
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let (idx, val) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: expected 'node,value'", k + 2)))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: bad node index: {e}", k + 2)))?;
        if idx != k {
            return Err(Error::Parse(format!("line {}: node {idx} out of order", k + 2)));
        }
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: bad value: {e}", k + 2)))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("line {}: non-finite value", k + 2)));
        }
        values.push(v);
    }
    Ok(values)
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(Error::Parse("unexpected end of input".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, DomainSpec};
    use crate::group::GroupConfig;
    use proptest::prelude::*;

    fn grid4() -> GridDomain {
        build_grid(&DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]), 0.5).unwrap()
    }

    #[test]
    fn lp_norm_examples() {
        let g = grid4();
        assert_eq!(Field::constant(&g, 1.0).lp_norm_pow(2.0).unwrap(), g.measure());
        assert_eq!(Field::zeros(&g).lp_norm_pow(3.0).unwrap(), 0.0);
        let u = Field::new(vec![1.0, 2.0, 2.0, 1.0], g.cell_measure);
        assert_eq!(u.lp_norm_pow(2.0).unwrap(), 5.0);
        assert!(matches!(u.lp_norm_pow(0.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn bump_is_positive() {
        let g = build_grid(&DomainSpec::gauge_ball(GroupConfig::Heisenberg { n: 1 }, 1.0), 0.25).unwrap();
        assert!(Field::positive_bump(&g).min() > 0.0);
        assert!(Field::random_smooth_positive(&g, 3).min() > 0.0);
    }

    #[test]
    fn csv_rejects_garbage() {
        let g = grid4();
        assert!(Field::from_csv("node,value\n0,1\n1,2\n", &g).is_err());
        assert!(Field::from_csv("idx,val\n0,1\n", &g).is_err());
        assert!(Field::from_csv("node,value\n1,1\n0,2\n2,3\n3,4\n", &g).is_err());
        assert!(Field::from_csv("node,value\n0,1\n1,NaN\n2,3\n3,4\n", &g).is_err());
        let u = Field::from_csv("node,value\n0,1\n1,2\n2,3\n3,4.5e0\n", &g).unwrap();
        assert_eq!(u.values, vec![1.0, 2.0, 3.0, 4.5]);
    }

    #[test]
    fn binary_rejects_truncation() {
        let u = Field::new(vec![1.0, -2.0], 0.25);
        let b = u.to_bytes();
        assert!(Field::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(Field::from_bytes(&b[..3]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Field::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_binary_round_trip(values in prop::collection::vec(-1e6f64..1e6, 4)) {
            let g = grid4();
            let u = Field::new(values, g.cell_measure);
            prop_assert_eq!(&Field::from_csv(&u.to_csv(), &g).unwrap(), &u);
            prop_assert_eq!(&Field::from_bytes(&u.to_bytes()).unwrap(), &u);
        }
    }
}
