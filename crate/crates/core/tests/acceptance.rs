//! Acceptance run over the shipped reference instances: one [PASS]/[FAIL] line per criterion.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use subspec_core::config::RunConfig;
use subspec_core::kernel::RayQuadrature;
use subspec_core::nehari::{energy_i_regularized, gradient_i, ProblemSpec};
use subspec_core::properties::{
    check_comparison, check_fiber_structure, check_p2_oracle, check_positivity_simplicity, check_scaling,
    check_sign_change, check_two_solutions, lambda_sweep, transitions, CheckReport, Instance,
};
use subspec_core::variational::{convex_path, energy_gradient, gagliardo_energy, monotonicity_gap};
use subspec_core::{assemble, build_grid, DomainSpec, Field, FracParams, GroupConfig, KernelTable, TruncationPolicy};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn instance(file: &str) -> Instance {
    let cfg = RunConfig::load(&configs().join(file)).expect("reference config loads");
    Instance::new(file, cfg).expect("reference instance builds")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_reports(reports: &[CheckReport]) -> Outcome {
    let pass = reports.iter().all(|r| r.status == subspec_core::properties::Status::Pass);
    let detail = reports
        .iter()
        .map(|r| {
            let m = r
                .message
                .clone()
                .unwrap_or_else(|| r.measured.iter().map(|(k, v)| format!("{k}={v:.3e}")).collect::<Vec<_>>().join(" "));
            format!("{}@{}: {m}", r.name, r.instance)
        })
        .collect::<Vec<_>>()
        .join(" | ");
    Outcome { pass, detail }
}

fn checks(insts: &[&Instance], f: impl Fn(&Instance) -> subspec_core::Result<CheckReport>) -> Outcome {
    let mut reports = Vec::new();
    for inst in insts {
        match f(inst) {
            Ok(r) => reports.push(r),
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("{}: {e}", inst.name),
                }
            }
        }
    }
    from_reports(&reports)
}

fn kernel_1d(p: f64) -> (subspec_core::GridDomain, KernelTable) {
    let spec = DomainSpec::boxed(GroupConfig::Abelian { dim: 1 }, vec![-1.0], vec![1.0]);
    let grid = build_grid(&spec, 0.0625).unwrap();
    let k = assemble(&grid, &FracParams::new(0.3, p), &TruncationPolicy::default()).unwrap();
    (grid, k)
}

fn sweep(inst: &Instance) -> Outcome {
    let ls = match inst.problem() {
        Ok(rp) => rp.lambda_star.empirical,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let factors: Vec<f64> = (0..20).map(|i| 0.1 * 20f64.powf(i as f64 / 19.0)).collect();
    let lambdas: Vec<f64> = factors.iter().map(|f| f * ls).collect();
    match lambda_sweep(inst, &lambdas) {
        Ok(rows) => {
            let n = transitions(&rows);
            let edge = rows.iter().position(|r| !r.has_two_roots).map(|i| rows[i].lambda_over_lambda_star);
            Outcome {
                pass: n == 1 && rows[0].has_two_roots,
                detail: format!("{}: {n} transition(s), first no-root factor {edge:?}", inst.name),
            }
        }
        Err(e) => Outcome { pass: false, detail: e.to_string() },
    }
}

fn monotonicity() -> Outcome {
    let mut min_lhs = f64::INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let (g, k) = kernel_1d(p);
        for i in 0..1000u64 {
            let u = Field::random(&g, 10_000 + i, -1.0, 1.0);
            let v = Field::random(&g, 20_000 + i, -1.0, 1.0);
            let gap = monotonicity_gap(&u, &v, &k, p).unwrap();
            min_lhs = min_lhs.min(gap.lhs);
            if p == 2.0 {
                worst_ratio = worst_ratio.max((gap.ratio() - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: min_lhs > 0.0 && worst_ratio <= 1e-12,
        detail: format!("3000 pairs: min lhs {min_lhs:.3e}, max |ratio-1| at p=2 {worst_ratio:.3e}"),
    }
}

fn gradients() -> Outcome {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let (g, k) = kernel_1d(p);
        for i in 0..50u64 {
            let u = Field::random(&g, 30_000 + i, -1.0, 1.0);
            let v = Field::random(&g, 40_000 + i, -1.0, 1.0);
            let fd = (gagliardo_energy(&u.add_scaled(eps, &v), &k, p) - gagliardo_energy(&u.add_scaled(-eps, &v), &k, p)) / (2.0 * eps);
            let an = energy_gradient(&u, &k, p).dot(&v);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
        }
        // The full singular functional, on positive fields away from the regularisation scale.
        let ps = ProblemSpec {
            fp: FracParams::new(0.3, p),
            delta: 0.2,
            q: 2.0,
            f: Field::constant(&g, 1.0),
            g: Field::constant(&g, 1.0),
            lambda: 3.0,
            eps_sing: 1e-8,
        };
        for i in 0..20u64 {
            let u = Field::random(&g, 50_000 + i, 0.2, 1.0);
            let v = Field::random(&g, 60_000 + i, -1.0, 1.0);
            for reg in [1e-2, 1e-6] {
                let e = |w: &Field| energy_i_regularized(w, &ps, &k, reg).unwrap();
                let fd = (e(&u.add_scaled(eps, &v)) - e(&u.add_scaled(-eps, &v))) / (2.0 * eps);
                let an = gradient_i(&u, &ps, &k, reg).dot(&v);
                worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
            }
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("max relative central-difference error {worst:.3e} over p in {{1.5, 2, 3}}"),
    }
}

fn complement_mass() -> Outcome {
    let spec = DomainSpec::gauge_ball(GroupConfig::Heisenberg { n: 1 }, 1.0);
    let rays = RayQuadrature::new(&spec, &FracParams::new(0.5, 2.0), &TruncationPolicy::default(), 0.2);
    let m = rays.complement_mass(&[0.0, 0.0, 0.0]);
    let rel = (m - 2.0 * PI * PI).abs() / (2.0 * PI * PI);
    Outcome {
        pass: rel < 0.01,
        detail: format!("mass {m:.10} vs 2pi^2, relative error {rel:.3e}"),
    }
}

fn convexity() -> Outcome {
    let mut convex: f64 = 0.0;
    let mut abs: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let (g, k) = kernel_1d(p);
        for i in 0..100u64 {
            let u = Field::random(&g, 70_000 + i, -1.0, 1.0);
            let eu = gagliardo_energy(&u, &k, p);
            abs = abs.max((gagliardo_energy(&u.abs(), &k, p) - eu) / eu);
            let a = u.abs().scaled(u.integral_pow(p).powf(-1.0 / p));
            let w = Field::random(&g, 80_000 + i, 0.0, 1.0);
            let b = w.scaled(w.integral_pow(p).powf(-1.0 / p));
            let (ea, eb) = (gagliardo_energy(&a, &k, p), gagliardo_energy(&b, &k, p));
            for t in [0.25, 0.5, 0.75] {
                let ez = gagliardo_energy(&convex_path(&a, &b, p, t), &k, p);
                convex = convex.max((ez - (1.0 - t) * eb - t * ea) / (ea + eb));
            }
        }
    }
    Outcome {
        pass: convex <= 1e-12 && abs <= 1e-12,
        detail: format!("max convexity excess {convex:.3e}, max |u| excess {abs:.3e}"),
    }
}

fn main() {
    let start = Instant::now();
    let one_d = instance("abelian1d.json");
    let heis = instance("heisenberg_ball.json");
    let both = [&one_d, &heis];
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 p=2 oracle equivalence", Box::new(|| checks(&both, check_p2_oracle))),
        (
            "2 dilation scaling",
            Box::new(|| {
                checks(&both, |i| {
                    let a = check_scaling(i, 0.5)?;
                    let b = check_scaling(i, 2.0)?;
                    Ok(if a.status == subspec_core::properties::Status::Pass { b } else { a })
                })
            }),
        ),
        ("3 positivity and simplicity", Box::new(|| checks(&both, check_positivity_simplicity))),
        ("4 sign change of the second eigenvector", Box::new(|| checks(&[&one_d], check_sign_change))),
        ("5 fiber-map structure", Box::new(|| checks(&both, check_fiber_structure))),
        ("6 two solutions", Box::new(|| checks(&both, check_two_solutions))),
        (
            "7 lambda-sweep threshold",
            Box::new(|| {
                let a = sweep(&one_d);
                let b = sweep(&heis);
                Outcome {
                    pass: a.pass && b.pass,
                    detail: format!("{} | {}", a.detail, b.detail),
                }
            }),
        ),
        ("8 comparison principle", Box::new(|| checks(&both, check_comparison))),
        ("9 operator monotonicity", Box::new(monotonicity)),
        ("10 energy-gradient correctness", Box::new(gradients)),
        ("11 complement quadrature", Box::new(complement_mass)),
        ("12 hidden convexity and |u| inequality", Box::new(convexity)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {name} ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
