//! On-disk cache of assembled kernel tables.
//!
//! Layout (little-endian): magic `SSKC`, version `u32`, 32-byte key, group tag `u8`
//! and parameter `u32`, `s`, `p`, cell measure, node count `u64`, then the `n²`
//! pair weights and `n` complement weights as `f64`. The key is a SHA-256 digest
//! of everything the table depends on, so a stale file is rejected rather than
//! reused.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::field::ByteReader;
use crate::group::GroupConfig;
use crate::kernel::{FracParams, KernelTable, TruncationPolicy};
use crate::CONVENTION;

const MAGIC: &[u8; 4] = b"SSKC";
const VERSION: u32 = 1;

pub type CacheKey = [u8; 32];

#[derive(Serialize)]
struct KeyMaterial<'a> {
    convention: &'a str,
    version: u32,
    spec: &'a DomainSpec,
    h: f64,
    fp: &'a FracParams,
    truncation: &'a TruncationPolicy,
}

pub fn cache_key(spec: &DomainSpec, h: f64, fp: &FracParams, trunc: &TruncationPolicy) -> CacheKey {
    let km = KeyMaterial {
        convention: CONVENTION,
        version: VERSION,
        spec,
        h,
        fp,
        truncation: trunc,
    };
    let json = serde_json::to_vec(&km).expect("key material serialises");
    Sha256::digest(&json).into()
}

pub fn key_hex(key: &CacheKey) -> String {
    key.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(k: &KernelTable, key: &CacheKey) -> Vec<u8> {
    let n = k.len();
    let mut out = Vec::with_capacity(80 + 8 * (n * n + n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(key);
    let (tag, param) = match k.group {
        GroupConfig::Abelian { dim } => (0u8, dim as u32),
        GroupConfig::Heisenberg { n } => (1u8, n as u32),
    };
    out.push(tag);
    out.extend_from_slice(&param.to_le_bytes());
    for v in [k.params.s, k.params.p, k.cell_measure] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in k.pair_weights().iter().chain(k.complement()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode and validate a cached table; `expected` rejects tables built for other inputs.
pub fn decode(bytes: &[u8], expected: Option<&CacheKey>) -> Result<KernelTable> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("bad kernel cache magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported kernel cache version {version}")));
    }
    let key = r.take(32)?;
    if let Some(e) = expected {
        if key != e.as_slice() {
            return Err(Error::Parse("kernel cache key does not match the configuration".into()));
        }
    }
    let tag = r.take(1)?[0];
    let param = r.u32()? as usize;
    let group = match tag {
        0 => GroupConfig::Abelian { dim: param },
        1 => GroupConfig::Heisenberg { n: param },
        t => return Err(Error::Parse(format!("unknown group tag {t}"))),
    };
    group.validate().map_err(|e| Error::Parse(e.to_string()))?;
    let fp = FracParams::new(r.f64()?, r.f64()?);
    fp.validate(&group).map_err(|e| Error::Parse(e.to_string()))?;
    let cell = r.f64()?;
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::Parse("cell measure must be positive".into()));
    }
    let n = r.u64()?;
    let count = n
        .checked_mul(n)
        .and_then(|m| m.checked_add(n))
        .and_then(|m| m.checked_mul(8))
        .ok_or_else(|| Error::Parse("node count overflows".into()))?;
    if count != r.remaining() as u64 {
        return Err(Error::Parse(format!("expected {count} payload bytes, found {}", r.remaining())));
    }
    let n = n as usize;
    let mut pair = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        pair.push(r.f64()?);
    }
    let mut complement = Vec::with_capacity(n);
    for _ in 0..n {
        complement.push(r.f64()?);
    }
    for i in 0..n {
        if !(complement[i] > 0.0) || !complement[i].is_finite() {
            return Err(Error::Parse(format!("complement weight {i} is not positive")));
        }
        for j in 0..n {
            let w = pair[i * n + j];
            let ok = if i == j { w == 0.0 } else { w > 0.0 && w.is_finite() && w == pair[j * n + i] };
            if !ok {
                return Err(Error::Parse(format!("invalid pair weight at ({i},{j})")));
            }
        }
    }
    KernelTable::from_parts(group, fp, cell, pair, complement).map_err(|e| Error::Parse(e.to_string()))
}

/// Load the table for `key` from `dir`, or build it with `build` and store it.
pub fn load_or_build(dir: &Path, key: &CacheKey, build: impl FnOnce() -> Result<KernelTable>) -> Result<(KernelTable, bool)> {
    let path = dir.join(format!("kernel-{}.bin", &key_hex(key)[..16]));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(k) = decode(&bytes, Some(key)) {
            return Ok((k, true));
        }
    }
    let k = build()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, encode(&k, key))?;
    Ok((k, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use crate::kernel::assemble;

    fn table() -> (DomainSpec, KernelTable) {
        let spec = DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]);
        let grid = build_grid(&spec, 0.25).unwrap();
        let fp = FracParams::new(0.3, 2.0);
        (spec, assemble(&grid, &fp, &TruncationPolicy::default()).unwrap())
    }

    #[test]
    fn round_trip_and_key_check() {
        let (spec, k) = table();
        let key = cache_key(&spec, 0.25, &k.params, &TruncationPolicy::default());
        let bytes = encode(&k, &key);
        assert_eq!(decode(&bytes, Some(&key)).unwrap(), k);
        let other = cache_key(&spec, 0.125, &k.params, &TruncationPolicy::default());
        assert_ne!(key, other);
        assert!(decode(&bytes, Some(&other)).is_err());
    }

    #[test]
    fn rejects_corruption() {
        let (spec, k) = table();
        let key = cache_key(&spec, 0.25, &k.params, &TruncationPolicy::default());
        let bytes = encode(&k, &key);
        for cut in [0, 3, 40, 60, bytes.len() - 1] {
            assert!(decode(&bytes[..cut], None).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, None).is_err());
        let mut neg = bytes.clone();
        let last = neg.len() - 8;
        neg[last..].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode(&neg, None).is_err());
    }

    #[test]
    fn load_or_build_reuses_file() {
        let (spec, k) = table();
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key(&spec, 0.25, &k.params, &TruncationPolicy::default());
        let (a, hit) = load_or_build(dir.path(), &key, || Ok(k.clone())).unwrap();
        assert!(!hit);
        let (b, hit) = load_or_build(dir.path(), &key, || panic!("should hit the cache")).unwrap();
        assert!(hit);
        assert_eq!(a, b);
    }
}
