//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! fails if any of them fails.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use idlab::coefficients::{LowerOrder, Preset};
use idlab::config::{ExperimentConfig, SideConfig};
use idlab::experiments::{self, bounds_assertion};
use idlab::geometry::{Domain, Grid};
use idlab::identifiability::Verdict;
use idlab::io::csv_string;
use idlab::reconstruction::{inverse_kirchhoff, kirchhoff_transform, ParamA};
use idlab::singular::{
    dn_lambda_gamma_integral, scaling_sweep, DirichletDatum, ScalingOptions, SingularTestFn,
};
use idlab::solver::{solve_parabolic, step_residual, ProblemSpec};

use common::{identity_residuals, orders, Manufactured};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, detail: String) -> Outcome {
    Outcome { pass: cond, detail }
}

fn scaling() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for domain in [Domain::default(), Domain::unit_cube()] {
        let report = scaling_sweep(&domain, &ScalingOptions::default()).expect("sweep");
        for v in &report.verdicts {
            if !v.pass {
                pass = false;
                notes.push(format!(
                    "d={} {:?} p={} slope={:.3} spread={:?}",
                    v.dim, v.quantity, v.p, v.fitted_slope, v.log_ratio_spread
                ));
            }
        }
    }
    check(pass, if notes.is_empty() { "all regimes within tolerance".into() } else { notes.join("; ") })
}

fn exact_constants() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut nonneg = true;
    for (domain, exact) in [
        (Domain::default(), 1.0 / (2.0 * PI)),
        (Domain::unit_cube(), 1.0 / (4.0 * 2f64.sqrt())),
    ] {
        for k in 3..=9 {
            let eps = domain.eps0 * 2f64.powi(-k);
            let f = SingularTestFn::new(&domain, eps).unwrap();
            let r = dn_lambda_gamma_integral(&f, domain.eps0).unwrap();
            worst = worst.max((eps * r.integral - exact).abs());
            nonneg &= r.min_dn >= 0.0;
        }
    }
    check(worst <= 1e-6 && nonneg, format!("max deviation {worst:.2e}, nonnegative: {nonneg}"))
}

fn datum_admissibility() -> Outcome {
    let domain = Domain::default();
    let (g1, g2) = (0.2, 0.8);
    let mut norms = Vec::new();
    let mut in_range = true;
    for k in 3..=9 {
        let eps = domain.eps0 * 2f64.powi(-k);
        let g = DirichletDatum::new(&domain, eps, g1, g2, (0.25, 0.75)).unwrap();
        for i in 0..=200 {
            let x = [i as f64 / 200.0, 0.0];
            for j in 0..=40 {
                let v = g.value(&x, j as f64 / 40.0);
                in_range &= (g1..=g2).contains(&v);
            }
        }
        norms.push(g.h1_norm());
    }
    let hi = norms.iter().cloned().fold(f64::MIN, f64::max);
    let lo = norms.iter().cloned().fold(f64::MAX, f64::min);
    check(in_range && hi / lo < 2.0, format!("in range: {in_range}, norm spread {:.3}", hi / lo))
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn forward_solver() -> Outcome {
    let m = Manufactured::Linear;
    let space: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| m.error(&m.solve(n, 4))).collect();
    let m = Manufactured::Decaying(5.0);
    let time: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| m.error(&m.solve(96, n))).collect();
    let (ps, pt) = (orders(&space), orders(&time));
    let space_min = ps.iter().cloned().fold(f64::INFINITY, f64::min);
    let time_min = pt.iter().cloned().fold(f64::INFINITY, f64::min);

    let c = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
    let grid = Arc::new(Grid::uniform(&Domain::default(), 16).unwrap());
    let spec = ProblemSpec::new(grid, c.clone(), Arc::new(|_, _| 0.4), Arc::new(|_| 0.4), 8);
    let f = solve_parabolic(&spec).unwrap();
    let constant = (1..=8).map(|n| step_residual(&f, &c, n).unwrap()).fold(0.0, f64::max);

    let mut bounds = Vec::new();
    for name in ["bioheat", "chemotaxis"] {
        let cfg = experiments::example_config(name).unwrap();
        let s = experiments::solve_side(&cfg, &cfg.side1).unwrap();
        let (lo, hi) = experiments::example_bounds(&cfg);
        bounds.push(bounds_assertion(name, &s.field, lo, hi));
    }
    let pass = space_min >= 1.9 && time_min >= 0.9 && constant <= 1e-12 && bounds.iter().all(|a| a.pass);
    let b: Vec<String> = bounds.iter().map(|a| format!("{} {}", a.name, a.detail)).collect();
    check(
        pass,
        format!(
            "space orders {ps:.3?}, time orders {pt:.3?}, constant residual {constant:.1e}, {}",
            b.join(", ")
        ),
    )
}

fn identity_order() -> Outcome {
    let levels = [16, 32, 64, 128];
    let linear = identity_residuals(
        &Preset::Constant { value: 2.0 }.build((0.0, 1.0)).unwrap(),
        &Preset::Constant { value: 1.0 }.build((0.0, 1.0)).unwrap(),
        &levels,
    );
    let lower = LowerOrder {
        reaction_rate: 0.5,
        storage_scale: 1.2,
        ..LowerOrder::none()
    };
    let nonlinear = identity_residuals(
        &Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap(),
        &Preset::Affine { a0: 0.5, a1: 0.5 }.build_with((0.0, 1.0), &lower).unwrap(),
        &levels,
    );
    let (pl, pn) = (orders(&linear), orders(&nonlinear));
    let pass = pl.iter().chain(&pn).all(|&q| q >= 0.9);
    check(
        pass,
        format!(
            "linear residuals {} orders {pl:.3?}; nonlinear residuals {} orders {pn:.3?}",
            sci(&linear),
            sci(&nonlinear)
        ),
    )
}

fn discrimination(report_csv: &mut String) -> Outcome {
    let cfg = experiments::discrimination_config(false);
    let report = experiments::discriminate(&cfg).unwrap();
    *report_csv = csv_string(&experiments::report_rows(&report)).unwrap();
    let sweep = &report.sweeps[0];
    let slope_ok = (-0.6..=-0.4).contains(&sweep.slope);
    let spread_ok = sweep.lower_ratio_spread <= 10.0;

    let agree = experiments::discriminate(&experiments::discrimination_config(true)).unwrap();
    let tol = cfg.sweep.controls.tol;
    let largest = agree
        .sweeps
        .iter()
        .flat_map(|s| s.rows.iter())
        .map(|r| r.principal.abs())
        .fold(0.0, f64::max);
    let pass = report.verdict == Verdict::Distinguishable
        && slope_ok
        && spread_ok
        && agree.verdict == Verdict::NotDetected
        && largest <= 10.0 * tol;
    check(
        pass,
        format!(
            "a1=2 vs a2=1: {} (slope {:.4}, lower/|ln ε| spread {:.2}); a1=a2: {} (max |principal| {largest:.1e})",
            report.verdict.as_str(),
            sweep.slope,
            sweep.lower_ratio_spread,
            agree.verdict.as_str()
        ),
    )
}

fn reverse_checks() -> Outcome {
    let side = SideConfig {
        coefficient: Preset::Affine { a0: 1.0, a1: 1.0 },
        lower: LowerOrder {
            reaction_rate: 0.3,
            storage_scale: 1.1,
            drift: [0.2, -0.1],
            ..LowerOrder::none()
        },
        initial_bump: 0.1,
        ..SideConfig::default()
    };
    let mut cfg = ExperimentConfig {
        side1: side.clone(),
        side2: Some(side),
        ..ExperimentConfig::default()
    };
    cfg.reverse.data_size = 8;
    let reports = experiments::reverse(&cfg).unwrap();
    let tol = cfg.controls.tol;
    let mut notes = Vec::new();
    let mut pass = reports.len() == 2;
    for r in &reports {
        let worst = r.gaps.iter().cloned().fold(0.0, f64::max);
        pass &= r.gaps.len() == 8 && worst <= 10.0 * tol;
        notes.push(format!("{:?}: {} data, max gap {worst:.1e}", r.mode, r.gaps.len()));
    }
    check(pass, notes.join("; "))
}

fn reconstruction() -> Outcome {
    let cfg = ExperimentConfig::default();
    let r = &cfg.reconstruction;
    let meas = experiments::synthesize(&cfg).unwrap();
    let init = experiments::constant_init(&meas, r.init).unwrap();
    let rec = experiments::reconstruct(&meas, &init, r.reg, &r.options, 0.05).unwrap();

    let a = ParamA::from_fn((0.0, 1.0), 6, 0.1, |u| 1.0 + u).unwrap();
    let u: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let back = inverse_kirchhoff(&a, &kirchhoff_transform(&a, &u).unwrap()).unwrap();
    let trip = u.iter().zip(&back).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    check(
        rec.pass && !meas.provenance.inverse_crime && trip <= 1e-10,
        format!(
            "relative error {:.2}% after {} forward solves, Kirchhoff round trip {trip:.1e}",
            100.0 * rec.relative_error,
            rec.forward_solves
        ),
    )
}

fn determinism(first: &str) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let report = pool
        .install(|| experiments::discriminate(&experiments::discrimination_config(false)))
        .unwrap();
    let second = csv_string(&experiments::report_rows(&report)).unwrap();
    check(
        !first.is_empty() && first == second,
        format!("report.csv of {} bytes, identical on a two-thread rerun: {}", first.len(), first == second),
    )
}

fn main() {
    // the determinism rerun compares against the report of criterion 6
    let report = std::cell::RefCell::new(String::new());
    let criteria: Vec<Criterion> = vec![
        ("1 singular-function scaling", Duration::from_secs(60), Box::new(scaling)),
        ("2 normal-derivative constants", Duration::from_secs(10), Box::new(exact_constants)),
        ("3 Dirichlet datum admissibility", Duration::from_secs(10), Box::new(datum_admissibility)),
        ("4 forward solver", Duration::from_secs(300), Box::new(forward_solver)),
        ("5 integral identity order", Duration::from_secs(300), Box::new(identity_order)),
        (
            "6 discrimination",
            Duration::from_secs(900),
            Box::new(|| discrimination(&mut report.borrow_mut())),
        ),
        ("7 reverse checks", Duration::from_secs(180), Box::new(reverse_checks)),
        ("8 reconstruction", Duration::from_secs(1200), Box::new(reconstruction)),
        ("9 determinism", Duration::from_secs(900), Box::new(|| determinism(&report.borrow()))),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let ok = out.pass && took <= budget;
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.1}s of {}s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
