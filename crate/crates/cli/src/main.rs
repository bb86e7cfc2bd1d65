//! `subspec eigen|nehari|sweep|verify --config path.json`.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration error,
//! 3 solver failure, 4 branch collapse (λ too large for two fiber roots).

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use subspec_core::cache;
use subspec_core::config::RunConfig;
use subspec_core::eigen::{minimize_rayleigh, p2_oracle};
use subspec_core::nehari::solve_nehari;
use subspec_core::properties::{lambda_sweep, run_suite, transitions, Instance, Status};
use subspec_core::{assemble, build_grid, Error, Field, CONVENTION, SCHEMA_VERSION};

const ENV_OUTPUT_DIR: &str = "SUBSPEC_OUTPUT_DIR";
const ENV_THREADS: &str = "SUBSPEC_THREADS";

#[derive(Parser)]
#[command(name = "subspec", version, about = "Fractional p-sub-Laplacian eigenpairs and singular Nehari problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Assemble the kernel even if a cached table exists.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// First eigenpair by Rayleigh-quotient descent.
    Eigen(Common),
    /// Both Nehari-branch solutions of the singular problem.
    Nehari(Common),
    /// Solve over a list of λ values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated λ values (overrides the config's sweep section).
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Run the property checks.
    Verify(Common),
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse(_) | Error::Domain(_) | Error::Parameter(_) | Error::Policy(_) => 2,
            Error::BranchCollapse(_) => 4,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        msg: format!("cannot write {}: {e}", path.display()),
    }
}

type Run<T> = std::result::Result<T, Failure>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn load(c: &Common) -> Run<Ctx> {
        let cfg = RunConfig::load(&c.config)?;
        let threads = c
            .threads
            .or_else(|| std::env::var(ENV_THREADS).ok().and_then(|v| v.parse().ok()))
            .unwrap_or(0);
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
        let out = c
            .out
            .clone()
            .or_else(|| std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from))
            .unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out).map_err(|e| io_fail(&out, e))?;
        Ok(Ctx { cfg, out })
    }

    fn instance(&self, no_cache: bool) -> Run<Instance> {
        let spec = self.cfg.domain_spec();
        let grid = build_grid(&spec, self.cfg.h)?;
        println!("grid: {} nodes, cell measure {:.6e}", grid.len(), grid.cell_measure);
        let build = || assemble(&grid, &self.cfg.fp, &self.cfg.truncation);
        let kernel = if no_cache {
            build()?
        } else {
            let key = cache::cache_key(&spec, self.cfg.h, &self.cfg.fp, &self.cfg.truncation);
            let (k, hit) = cache::load_or_build(&self.out.join("cache"), &key, build)?;
            println!("kernel: {}", if hit { "loaded from cache" } else { "assembled" });
            k
        };
        Ok(Instance::with_kernel(&instance_name(&self.cfg), self.cfg.clone(), grid, kernel))
    }

    fn write(&self, name: &str, text: &str) -> Run<()> {
        let path = self.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_fail(&path, e))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json(&self, name: &str, mut body: Value) -> Run<()> {
        if let Value::Object(m) = &mut body {
            m.insert("schema_version".into(), json!(SCHEMA_VERSION));
            m.insert("convention".into(), json!(CONVENTION));
        }
        let text = serde_json::to_string_pretty(&body).expect("json values serialise");
        self.write(name, &(text + "\n"))
    }

    fn write_field(&self, name: &str, f: &Field) -> Run<()> {
        self.write(name, &(csv_banner() + &f.to_csv()))
    }
}

fn csv_banner() -> String {
    format!("# schema_version={SCHEMA_VERSION}; convention={CONVENTION}\n")
}

fn instance_name(cfg: &RunConfig) -> String {
    format!("{}/{:?}/h={}", cfg.group.label(), cfg.domain, cfg.h)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialise")
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = csv_banner() + "iteration,rayleigh\n";
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:e}");
    }
    s
}

fn cmd_eigen(c: &Common) -> Run<u8> {
    let ctx = Ctx::load(c)?;
    let inst = ctx.instance(c.no_cache)?;
    ctx.write("nodes.csv", &(csv_banner() + &inst.grid.to_csv()))?;
    let p = ctx.cfg.fp.p;
    let res = match minimize_rayleigh(&inst.kernel, p, &Field::positive_bump(&inst.grid), &ctx.cfg.solver) {
        Ok(r) => r,
        Err(Error::NonConvergence { iterations, residual, trace }) => {
            ctx.write("trace.csv", &trace_csv(&trace))?;
            return Err(Failure {
                code: 3,
                msg: format!("eigen solver did not converge after {iterations} iterations (residual {residual:.3e})"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    println!("lambda1 = {:.12e} after {} iterations (residual {:.3e})", res.lambda1, res.iterations, res.residual);
    let oracle = if p == 2.0 { Some(p2_oracle(&inst.kernel)?) } else { None };
    ctx.write_field("phi1.csv", &res.phi1)?;
    ctx.write("trace.csv", &trace_csv(&res.solver_trace))?;
    ctx.write_json(
        "eigen_result.json",
        json!({
            "instance_hash": inst.hash,
            "lambda1": res.lambda1,
            "lambda1_raw": res.lambda1_raw,
            "lambda1_p2_oracle": oracle,
            "residual": res.residual,
            "iterations": res.iterations,
            "phi1_csv_path": "phi1.csv",
            "nodes": inst.grid.len(),
            "cell_measure": inst.grid.cell_measure,
            "config": to_value(&ctx.cfg),
        }),
    )?;
    Ok(0)
}

fn cmd_nehari(c: &Common) -> Run<u8> {
    let ctx = Ctx::load(c)?;
    ctx.cfg.problem()?;
    let inst = ctx.instance(c.no_cache)?;
    let rp = inst.resolve_problem()?;
    let lambda = rp.spec.lambda;
    println!(
        "lambda = {lambda:.6e}, sampled lambda_* = {:.6e} (margin {:.3})",
        rp.lambda_star.empirical,
        lambda / rp.lambda_star.empirical
    );
    let res = solve_nehari(&rp.spec, &inst.kernel, &Field::positive_bump(&inst.grid), &ctx.cfg.nehari)?;
    println!("I(u+) = {:.6e}, I(u-) = {:.6e}", res.i_plus, res.i_minus);
    ctx.write("nodes.csv", &(csv_banner() + &inst.grid.to_csv()))?;
    ctx.write_field("u_plus.csv", &res.u_plus)?;
    ctx.write_field("u_minus.csv", &res.u_minus)?;
    ctx.write_json(
        "fiber_report.json",
        json!({
            "instance_hash": inst.hash,
            "lambda": lambda,
            "u_plus_direction": to_value(&res.fiber_plus),
            "u_minus_direction": to_value(&res.fiber_minus),
        }),
    )?;
    ctx.write_json(
        "nehari_result.json",
        json!({
            "instance_hash": inst.hash,
            "lambda": lambda,
            "lambda_star": to_value(&rp.lambda_star),
            "lambda_margin": lambda / rp.lambda_star.empirical,
            "I_plus": res.i_plus,
            "I_minus": res.i_minus,
            "sup_u_plus": res.u_plus.sup_norm(),
            "sup_u_minus": res.u_minus.sup_norm(),
            "residuals": {"u_plus": to_value(&res.residual_plus), "u_minus": to_value(&res.residual_minus)},
            "u_plus_csv_path": "u_plus.csv",
            "u_minus_csv_path": "u_minus.csv",
            "config": to_value(&ctx.cfg),
        }),
    )?;
    Ok(0)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn cmd_sweep(c: &Common, lambdas: &Option<Vec<f64>>) -> Run<u8> {
    let ctx = Ctx::load(c)?;
    ctx.cfg.problem()?;
    let inst = ctx.instance(c.no_cache)?;
    let rp = inst.resolve_problem()?;
    let list: Vec<f64> = match (lambdas, &ctx.cfg.sweep) {
        (Some(l), _) => l.clone(),
        (None, Some(s)) => match (&s.lambdas, &s.factors) {
            (Some(l), _) => l.clone(),
            (None, Some(f)) => f.iter().map(|x| x * rp.lambda_star.empirical).collect(),
            (None, None) => Vec::new(),
        },
        (None, None) => Vec::new(),
    };
    if list.is_empty() {
        return Err(Error::Config("sweep needs a nonempty lambda list".into()).into());
    }
    let rows = lambda_sweep(&inst, &list)?;
    let mut csv = csv_banner() + "lambda,has_two_roots,I_plus,I_minus,sup_u_plus,sup_u_minus,lambda_over_lambda_star,error\n";
    for r in &rows {
        let _ = writeln!(
            csv,
            "{:e},{},{},{},{},{},{:e},{}",
            r.lambda,
            r.has_two_roots,
            opt(r.i_plus),
            opt(r.i_minus),
            opt(r.sup_u_plus),
            opt(r.sup_u_minus),
            r.lambda_over_lambda_star,
            r.error.clone().unwrap_or_default().replace(',', ";")
        );
        println!(
            "lambda = {:.4e} ({:.3} lambda_*): two roots {}{}",
            r.lambda,
            r.lambda_over_lambda_star,
            r.has_two_roots,
            r.error.as_ref().map(|e| format!(" [{e}]")).unwrap_or_default()
        );
    }
    ctx.write("sweep.csv", &csv)?;
    ctx.write_json(
        "sweep.json",
        json!({
            "instance_hash": inst.hash,
            "lambda_star": to_value(&rp.lambda_star),
            "transitions": transitions(&rows),
            "rows": to_value(&rows),
        }),
    )?;
    Ok(0)
}

fn cmd_verify(c: &Common) -> Run<u8> {
    let ctx = Ctx::load(c)?;
    let inst = ctx.instance(c.no_cache)?;
    let reports = run_suite(&inst);
    let mut table = format!("{:<24} {:<8} {}\n", "check", "status", "detail");
    for r in &reports {
        let status = match r.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        let detail = r.message.clone().unwrap_or_else(|| {
            r.measured
                .iter()
                .take(4)
                .map(|(k, v)| format!("{k}={v:.4e}"))
                .collect::<Vec<_>>()
                .join(" ")
        });
        let _ = writeln!(table, "{:<24} {:<8} {}", r.name, status, detail);
    }
    print!("{table}");
    let all = reports.iter().all(|r| r.passed());
    ctx.write("verify_table.txt", &table)?;
    ctx.write_json(
        "verify_report.json",
        json!({
            "instance": inst.name,
            "instance_hash": inst.hash,
            "all_passed": all,
            "reports": to_value(&reports),
        }),
    )?;
    Ok(if all { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.cmd {
        Cmd::Eigen(c) => cmd_eigen(c),
        Cmd::Nehari(c) => cmd_nehari(c),
        Cmd::Sweep { common, lambdas } => cmd_sweep(common, lambdas),
        Cmd::Verify(c) => cmd_verify(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
