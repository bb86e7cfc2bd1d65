//! JSON run configuration, validated strictly at load.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::path::{Path, PathBuf};

use crate::domain::{DomainSpec, GridDomain, Shape};
use crate::eigen::SolverOpts;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::group::GroupConfig;
use crate::kernel::{FracParams, KernelTable, TruncationPolicy};
use crate::nehari::{NehariOpts, ProblemSpec};
use crate::SCHEMA_VERSION;

/// A weight function: `"const:c"` or a path to a `node,value` CSV.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSpec {
    Const(f64),
    Csv(PathBuf),
}

impl WeightSpec {
    pub fn parse(s: &str) -> Result<WeightSpec> {
        if let Some(rest) = s.strip_prefix("const:") {
            let c: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad constant weight '{s}'")))?;
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(format!("constant weight must be positive, got {c}")));
            }
            Ok(WeightSpec::Const(c))
        } else if s.trim().is_empty() {
            Err(Error::Config("empty weight specification".into()))
        } else {
            Ok(WeightSpec::Csv(PathBuf::from(s)))
        }
    }

    pub fn field(&self, grid: &GridDomain, base_dir: &Path) -> Result<Field> {
        match self {
            WeightSpec::Const(c) => Ok(Field::constant(grid, *c)),
            WeightSpec::Csv(path) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("cannot read weight file {}: {e}", full.display())))?;
                Field::from_csv(&text, grid)
            }
        }
    }
}

impl Serialize for WeightSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WeightSpec::Const(c) => s.serialize_str(&format!("const:{c}")),
            WeightSpec::Csv(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }
}

impl<'de> Deserialize<'de> for WeightSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        WeightSpec::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `"auto"` or a positive number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaChoice {
    Auto,
    Value(f64),
}

impl Serialize for LambdaChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Auto => s.serialize_str("auto"),
            LambdaChoice::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LambdaChoice::Value(v)),
            Raw::Str(s) if s == "auto" => Ok(LambdaChoice::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("lambda must be a number or \"auto\", got '{s}'"))),
        }
    }
}

fn default_eps_sing() -> f64 {
    1e-8
}

/// The singular problem as configured, before weights are laid on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub delta: f64,
    pub q: f64,
    pub lambda: LambdaChoice,
    pub f: WeightSpec,
    pub g: WeightSpec,
    #[serde(default = "default_eps_sing")]
    pub eps_sing: f64,
}

impl ProblemConfig {
    /// The problem on `grid` with the given λ (weights loaded and validated).
    pub fn instantiate(&self, grid: &GridDomain, k: &KernelTable, fp: FracParams, base_dir: &Path, lambda: f64) -> Result<ProblemSpec> {
        let ps = ProblemSpec {
            fp,
            delta: self.delta,
            q: self.q,
            f: self.f.field(grid, base_dir)?,
            g: self.g.field(grid, base_dir)?,
            lambda,
            eps_sing: self.eps_sing,
        };
        ps.validate(k)?;
        Ok(ps)
    }

    fn validate(&self, group: &GroupConfig, fp: &FracParams) -> Result<()> {
        let p_star = fp.p_star(group);
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("problem.delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.q + 1.0 > fp.p && self.q + 1.0 < p_star) {
            return Err(Error::Config(format!(
                "problem.q must satisfy p < q+1 < p* = {p_star} (p = {}), got q = {}",
                fp.p, self.q
            )));
        }
        if let LambdaChoice::Value(v) = self.lambda {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("problem.lambda must be positive, got {v}")));
            }
        }
        if !(self.eps_sing > 0.0) {
            return Err(Error::Config(format!("problem.eps_sing must be positive, got {}", self.eps_sing)));
        }
        Ok(())
    }
}

/// λ values for a sweep, either absolute or as multiples of the sampled λ_*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub factors: Option<Vec<f64>>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub h_list: Vec<f64>,
    pub scaling_r: Vec<f64>,
    /// Random restarts for the simplicity check.
    pub restarts: usize,
    /// Restarts for embedding-constant ascent.
    pub embedding_restarts: usize,
    /// Directions for the fiber-structure check.
    pub fiber_directions: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            h_list: Vec::new(),
            scaling_r: vec![0.5, 2.0],
            restarts: 5,
            embedding_restarts: 32,
            fiber_directions: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub group: GroupConfig,
    pub domain: Shape,
    pub h: f64,
    pub fp: FracParams,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub solver: SolverOpts,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub nehari: NehariOpts,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Directory relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_json(&text, &base)
    }

    pub fn domain_spec(&self) -> DomainSpec {
        DomainSpec {
            group: self.group.clone(),
            shape: self.domain.clone(),
        }
    }

    /// Every constraint is re-checked here and reported as a configuration error.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.domain_spec().validate().map_err(as_config)?;
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("h must be positive, got {}", self.h)));
        }
        self.fp.validate(&self.group).map_err(as_config)?;
        self.truncation.validate().map_err(as_config)?;
        self.solver.validate().map_err(as_config)?;
        self.nehari.validate().map_err(as_config)?;
        if let Some(p) = &self.problem {
            p.validate(&self.group, &self.fp)?;
        }
        if let Some(s) = &self.sweep {
            for v in s.factors.iter().chain(s.lambdas.iter()).flatten() {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("sweep values must be positive, got {v}")));
                }
            }
        }
        if self.verify.h_list.iter().chain(&self.verify.scaling_r).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("verify.h_list and verify.scaling_r entries must be positive".into()));
        }
        if self.verify.restarts == 0 || self.verify.embedding_restarts == 0 || self.verify.fiber_directions == 0 {
            return Err(Error::Config("verify restart and direction counts must be positive".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<&ProblemConfig> {
        self.problem
            .as_ref()
            .ok_or_else(|| Error::Config("config has no problem section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "schema_version": 1,
        "group": {"group": "abelian", "dim": 1},
        "domain": {"shape": "box", "lo": [-1.0], "hi": [1.0]},
        "h": 0.125,
        "fp": {"s": 0.3, "p": 2.0},
        "problem": {"delta": 0.2, "q": 2.0, "lambda": "auto", "f": "const:1", "g": "const:1"},
        "seed": 3
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<RunConfig> {
        let mut v: serde_json::Value = serde_json::from_str(GOOD).unwrap();
        edit(&mut v);
        RunConfig::from_json(&v.to_string(), Path::new("."))
    }

    #[test]
    fn loads_reference_shape() {
        let cfg = with(|_| {}).unwrap();
        let p = cfg.problem().unwrap();
        assert_eq!(p.lambda, LambdaChoice::Auto);
        assert_eq!(p.f, WeightSpec::Const(1.0));
        assert_eq!(p.eps_sing, 1e-8);
        assert_eq!(cfg.truncation, TruncationPolicy::default());
        assert_eq!(cfg.solver, SolverOpts::default());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(RunConfig::from_json("{not json", Path::new(".")), Err(Error::Config(_))));
        let cases: Vec<Box<dyn FnOnce(&mut serde_json::Value)>> = vec![
            Box::new(|v| v["fp"]["s"] = 0.9.into()),
            Box::new(|v| v["schema_version"] = 2.into()),
            Box::new(|v| v["h"] = (-1.0).into()),
            Box::new(|v| {
                v["problem"].as_object_mut().unwrap().remove("g");
            }),
            Box::new(|v| v["problem"]["q"] = 9.0.into()),
            Box::new(|v| v["problem"]["lambda"] = "big".into()),
            Box::new(|v| v["problem"]["f"] = "const:-1".into()),
            Box::new(|v| v["extra"] = 1.into()),
            Box::new(|v| v["truncation"] = serde_json::json!({"R_t_factor": 0.5})),
            Box::new(|v| v["group"] = serde_json::json!({"group": "heisenberg", "n": 0})),
        ];
        for edit in cases {
            assert!(matches!(with(edit), Err(Error::Config(_))));
        }
    }

    #[test]
    fn heisenberg_exponent_window() {
        let heis = |q: f64| {
            with(|v| {
                v["group"] = serde_json::json!({"group": "heisenberg", "n": 1});
                v["domain"] = serde_json::json!({"shape": "gauge_ball", "radius": 1.0});
                v["fp"] = serde_json::json!({"s": 0.5, "p": 2.0});
                v["problem"]["q"] = q.into();
            })
        };
        assert!(heis(1.3).is_ok());
        assert!(heis(1.7).is_err());
        assert!(heis(0.95).is_err());
    }

    #[test]
    fn weight_spec_round_trip() {
        for s in ["const:2.5", "weights/f.csv"] {
            let w = WeightSpec::parse(s).unwrap();
            let back: WeightSpec = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
            assert_eq!(w, back);
        }
        assert!(WeightSpec::parse("const:x").is_err());
        assert!(WeightSpec::parse("").is_err());
    }
}
