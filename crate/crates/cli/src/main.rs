use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use idlab::config::{ExperimentConfig, SideConfig};
use idlab::experiments::{self, BatteryConfig};
use idlab::io::{self, Assertion, Manifest};
use idlab::reconstruction::{MeasurementSet, ParamA};
use idlab::Error;

#[derive(Parser)]
#[command(name = "idlab", version, about = "Numerical lab for uniqueness of nonlinear diffusion coefficients")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Manifest path; defaults to `<out>/manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "IDLAB_THREADS", default_value_t = 0)]
    threads: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Scaling laws of the singular solutions and test functions.
    VerifyScaling,
    /// Forward solve of `side1` (or `side2` with `--second`).
    Solve {
        #[arg(long)]
        second: bool,
    },
    /// Pairs stored fields with a test battery.
    Flux {
        #[arg(long)]
        field: PathBuf,
        /// Side configuration (JSON) the field was computed with.
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long)]
        battery: Option<PathBuf>,
        #[arg(long, requires = "coeffs2")]
        field2: Option<PathBuf>,
        #[arg(long, requires = "field2")]
        coeffs2: Option<PathBuf>,
    },
    /// Singular-solution sweep on the disagreement set of `side1` and `side2`.
    Discriminate,
    /// Equal coefficients must give equal boundary fluxes.
    ReverseCheck,
    /// Synthetic measurements for the reconstruction.
    Synthesize,
    /// Recovers a piecewise-linear `a(u)` from measurements.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        /// Initial coefficient (JSON); a constant from the config otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        reg: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Worked examples: `bioheat` or `chemotaxis`.
    Examples { name: String },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::VerifyScaling => "verify-scaling",
            Command::Solve { .. } => "solve",
            Command::Flux { .. } => "flux",
            Command::Discriminate => "discriminate",
            Command::ReverseCheck => "reverse-check",
            Command::Synthesize => "synthesize",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Examples { .. } => "examples",
        }
    }
}

/// Schema problems exit with 2, numerical failures with 3, the rest with 1.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::OutOfRange { .. } => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

struct Run {
    out: PathBuf,
    manifest_path: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv<T: serde::Serialize>(&mut self, name: &str, rows: &[T]) -> idlab::Result<()> {
        let p = self.path(name);
        io::write_csv(&p, rows)?;
        self.manifest.record(&p)
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> idlab::Result<()> {
        let p = self.path(name);
        io::write_json(&p, value)?;
        self.manifest.record(&p)
    }
}

fn load_config(g: &Global) -> idlab::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            ExperimentConfig::from_json(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Resolves the configuration recorded in the manifest.
fn config_for(cmd: &Command, g: &Global) -> idlab::Result<(ExperimentConfig, serde_json::Value)> {
    let mut cfg = match cmd {
        Command::Examples { name } => {
            let mut c = experiments::example_config(name)?;
            if let Some(s) = g.seed {
                c.seed = s;
            }
            c
        }
        _ => load_config(g)?,
    };
    let extra = match cmd {
        Command::Flux {
            field,
            coeffs,
            battery,
            field2,
            coeffs2,
        } => {
            let battery: BatteryConfig = match battery {
                Some(p) => io::read_json(p)?,
                None => BatteryConfig::default(),
            };
            json!({
                "field": field,
                "coeffs": io::read_json::<SideConfig>(coeffs)?,
                "field2": field2,
                "coeffs2": coeffs2.as_deref().map(io::read_json::<SideConfig>).transpose()?,
                "battery": battery,
            })
        }
        Command::Reconstruct {
            data,
            init,
            reg,
            tolerance,
        } => {
            if let Some(r) = reg {
                cfg.reconstruction.reg = *r;
            }
            if let Some(t) = tolerance {
                cfg.reconstruction.tolerance = *t;
            }
            json!({ "data": data, "init": init })
        }
        Command::Solve { second } => json!({ "second": second }),
        Command::Examples { name } => json!({ "example": name }),
        _ => serde_json::Value::Null,
    };
    let value = json!({ "experiment": cfg, "arguments": extra });
    Ok((cfg, value))
}

fn execute(cmd: &Command, cfg: &ExperimentConfig, run: &mut Run) -> idlab::Result<()> {
    match cmd {
        Command::VerifyScaling => {
            let (rows, verdicts) = experiments::verify_scaling(cfg)?;
            run.csv("scaling.csv", &rows)?;
            run.json("verdicts.json", &verdicts)?;
            for v in &verdicts {
                run.manifest.assert(Assertion::new(
                    format!("{:?} p={} d={}", v.quantity, v.p, v.dim),
                    v.pass,
                    format!("{:?}, fitted slope {:.4}", v.regime, v.fitted_slope),
                ));
            }
        }
        Command::Solve { second } => {
            let side = if *second { cfg.second() } else { &cfg.side1 };
            let s = experiments::solve_side(cfg, side)?;
            write_solution(run, &s)?;
        }
        Command::Flux {
            field,
            coeffs,
            battery,
            field2,
            coeffs2,
        } => {
            let battery: BatteryConfig = match battery {
                Some(p) => io::read_json(p)?,
                None => BatteryConfig::default(),
            };
            let f1 = io::read_field(field)?;
            let c1 = io::read_json::<SideConfig>(coeffs)?.coefficients()?;
            let second = match (field2, coeffs2) {
                (Some(f), Some(c)) => Some((io::read_field(f)?, io::read_json::<SideConfig>(c)?.coefficients()?)),
                _ => None,
            };
            let rows = experiments::flux_table((&f1, &c1), second.as_ref().map(|(f, c)| (f, c)), &battery)?;
            run.csv("flux.csv", &rows)?;
        }
        Command::Discriminate => {
            let report = experiments::discriminate(cfg)?;
            run.csv("report.csv", &experiments::report_rows(&report))?;
            run.json("discrimination.json", &report)?;
            run.manifest.summary = json!({ "verdict": report.verdict, "max_difference": report.max_difference });
            log::info!("verdict {}", report.verdict.as_str());
            if let Some(want) = cfg.expect_verdict {
                run.manifest.assert(Assertion::new(
                    "verdict",
                    report.verdict == want,
                    format!("expected {}, got {}", want.as_str(), report.verdict.as_str()),
                ));
            }
        }
        Command::ReverseCheck => {
            let reports = experiments::reverse(cfg)?;
            run.csv("gaps.csv", &experiments::gap_rows(&reports))?;
            for r in &reports {
                let worst = r.gaps.iter().cloned().fold(0.0, f64::max);
                run.manifest.assert(Assertion::new(
                    format!("{:?} gaps", r.mode).to_lowercase(),
                    r.pass,
                    format!("max gap {worst:.3e}, threshold {:.3e}", r.threshold),
                ));
            }
        }
        Command::Synthesize => {
            let meas = experiments::synthesize(cfg)?;
            if meas.provenance.inverse_crime {
                log::warn!("{}", meas.provenance.warning.as_deref().unwrap_or("inverse crime"));
            }
            run.json("measurements.json", &meas)?;
        }
        Command::Reconstruct { data, init, .. } => {
            let meas: MeasurementSet = io::read_json(data)?;
            let r = &cfg.reconstruction;
            let init = match init {
                Some(p) => io::read_json::<ParamA>(p)?,
                None => experiments::constant_init(&meas, r.init)?,
            };
            let rec = experiments::reconstruct(&meas, &init, r.reg, &r.options, r.tolerance)?;
            let history: Vec<_> = rec
                .history
                .iter()
                .enumerate()
                .map(|(k, &m)| HistoryRow { iteration: k, misfit: m })
                .collect();
            run.csv("history.csv", &history)?;
            run.json("recovered.json", &rec)?;
            run.manifest.assert(Assertion::new(
                "relative error",
                rec.pass,
                format!("{:.4e} against tolerance {:.4e}", rec.relative_error, rec.tolerance),
            ));
        }
        Command::Examples { name } => {
            let s = experiments::solve_side(cfg, &cfg.side1)?;
            write_solution(run, &s)?;
            let (lo, hi) = experiments::example_bounds(cfg);
            run.manifest
                .assert(experiments::bounds_assertion(&format!("{name} maximum principle"), &s.field, lo, hi));
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct HistoryRow {
    iteration: usize,
    misfit: f64,
}

fn write_solution(run: &mut Run, s: &experiments::SolveOutcome) -> idlab::Result<()> {
    run.csv("trace.csv", &experiments::gamma_m_trace(&s.field))?;
    let p = run.path("field.bin");
    io::write_field(&p, &s.field)?;
    run.manifest.record(&p)?;
    if let Some(v) = &s.signal {
        let p = run.path("signal.bin");
        io::write_field(&p, v)?;
        run.manifest.record(&p)?;
    }
    Ok(())
}

fn finish(run: &mut Run) -> idlab::Result<()> {
    io::write_json(&run.manifest_path, &run.manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Err(e) = experiments::configure_threads(cli.global.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let (cfg, recorded) = match config_for(&cli.command, &cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let out = cli.global.out.clone();
    let manifest_path = cli.global.manifest.clone().unwrap_or_else(|| out.join("manifest.json"));
    let manifest = match Manifest::new(cli.command.name(), &recorded, cfg.seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let mut run = Run {
        out,
        manifest_path,
        manifest,
    };
    if let Err(e) = fs::create_dir_all(&run.out) {
        eprintln!("error: {}: {e}", run.out.display());
        return ExitCode::from(1);
    }
    let marker = io::failed_marker(&run.out);
    let _ = fs::remove_file(&marker);

    let result = execute(&cli.command, &cfg, &mut run);
    let code = match &result {
        Ok(()) => {
            run.manifest.finish();
            if run.manifest.all_pass() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            run.manifest.fail(e);
            if let Err(m) = fs::write(&marker, format!("{e}\n")) {
                eprintln!("error: {}: {m}", marker.display());
            }
            exit_code(e)
        }
    };
    for a in &run.manifest.assertions {
        println!("{} {}: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    if let Err(e) = finish(&mut run) {
        eprintln!("error: writing manifest: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
