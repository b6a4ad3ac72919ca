//! Experiment runners shared by the command line and the acceptance suite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, LowerOrder, Preset};
use crate::config::{BoundaryConfig, ExperimentConfig, SideConfig};
use crate::error::{Error, Result};
use crate::flux::FluxFunctional;
use crate::geometry::{BcKind, BcLabels, Domain};
use crate::identifiability::{
    battery_specs, discrimination_sweep, reverse_check, DiscriminationReport, ReverseReport,
};
use crate::io::Assertion;
use crate::reconstruction::{recover_a, synthesize_measurements, MeasurementSet, ParamA, RecoveryOptions};
use crate::singular::{scaling_sweep, CutoffPair, RegimeVerdict, ScalingRow, SingularTestFn};
use crate::solver::{solve_coupled, solve_parabolic, FieldST, ProblemSpec};
use crate::testfn::{boundary_battery, h1_time_h1_norm, make_test_function, SpaceTimeFn};

/// Sizes the global worker pool; `0` keeps the default.
pub fn configure_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Scaling sweep in two and three dimensions.
pub fn verify_scaling(cfg: &ExperimentConfig) -> Result<(Vec<ScalingRow>, Vec<RegimeVerdict>)> {
    let d2 = Domain {
        dim: 2,
        ..cfg.domain().clone()
    };
    let d3 = Domain {
        eps0: d2.eps0,
        t_final: d2.t_final,
        ..Domain::unit_cube()
    };
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for d in [d2, d3] {
        let r = scaling_sweep(&d, &cfg.scaling)?;
        rows.extend(r.rows);
        verdicts.extend(r.verdicts);
    }
    Ok((rows, verdicts))
}

/// Forward solve of `side1`; the chemotaxis preset also returns the signal.
pub struct SolveOutcome {
    pub field: FieldST,
    pub signal: Option<FieldST>,
    pub coeffs: CoefficientSet,
}

pub fn solve_side(cfg: &ExperimentConfig, side: &SideConfig) -> Result<SolveOutcome> {
    let domain = cfg.domain();
    let grid = Arc::new(cfg.grid()?);
    let (boundary, level) = cfg.boundary.build(domain)?;
    let s = side.side()?;
    let off = s.offset.clone();
    let spec = ProblemSpec::new(
        grid,
        s.coeffs.clone(),
        boundary,
        Arc::new(move |x| level + off(x)),
        cfg.n_steps,
    )
    .with_controls(cfg.controls);
    let (field, signal) = match side.coupled() {
        Some(c) => {
            let (u, v) = solve_coupled(&spec, &c)?;
            (u, Some(v))
        }
        None => (solve_parabolic(&spec)?, None),
    };
    Ok(SolveOutcome {
        field,
        signal,
        coeffs: s.coeffs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub x1: f64,
    pub u: f64,
}

/// `Γ_M` trace of every time level, ordered by step and position.
pub fn gamma_m_trace(field: &FieldST) -> Vec<TraceRow> {
    let nodes = field.grid.gamma_m_nodes();
    let mut rows = Vec::new();
    for n in 0..field.n_times() {
        for &k in &nodes {
            rows.push(TraceRow {
                step: n,
                t: field.times[n],
                x1: field.grid.coord(k)[0],
                u: field.values[n][k],
            });
        }
    }
    rows
}

/// Nodewise bounds check `lo ≤ u ≤ hi` up to `1e-10`.
pub fn bounds_assertion(name: &str, field: &FieldST, lo: f64, hi: f64) -> Assertion {
    let (mn, mx) = field.min_max();
    let tol = 1e-10;
    Assertion::new(
        name,
        mn >= lo - tol && mx <= hi + tol,
        format!("min {mn:.6e}, max {mx:.6e}, bounds [{lo}, {hi}]"),
    )
}

/// Built-in example configurations.
pub fn example_config(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    match name {
        "bioheat" => {
            cfg.side1 = SideConfig {
                coefficient: Preset::Bioheat { u_b: 1.0, c_b: 2.0 },
                initial_bump: 0.3,
                ..SideConfig::default()
            };
            cfg.boundary = BoundaryConfig::Datum {
                level: 0.2,
                g_hi: 1.0,
                eps_factor: 1.0,
                window: (0.1, 0.9),
            };
        }
        "chemotaxis" => {
            let mut domain = cfg.domain().clone();
            domain.bc_labels = BcLabels {
                bottom: BcKind::Dirichlet,
                right: BcKind::Neumann,
                top: BcKind::Neumann,
                left: BcKind::Neumann,
            };
            cfg.domain.domain = domain;
            cfg.side1 = SideConfig {
                coefficient: Preset::Chemotaxis { chi: 1.0 },
                initial_bump: 0.6,
                production: 1.0,
                ..SideConfig::default()
            };
            cfg.boundary = BoundaryConfig::Datum {
                level: 0.2,
                g_hi: 1.0,
                eps_factor: 1.0,
                window: (0.1, 0.9),
            };
        }
        other => return Err(Error::Config(format!("unknown example `{other}` (bioheat, chemotaxis)"))),
    }
    Ok(cfg)
}

/// Range the example's maximum principle guarantees.
pub fn example_bounds(cfg: &ExperimentConfig) -> (f64, f64) {
    match cfg.side1.coefficient {
        Preset::Bioheat { u_b, .. } => (0.0, u_b),
        _ => (0.0, 1.0),
    }
}

/// Test battery of the `flux` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    /// Number of boundary bumps on `Γ_M`.
    pub size: usize,
    /// Singular test functions `φ^ε` with `ε = factor·ε0`.
    pub singular_eps_factors: Vec<f64>,
    /// Time window of the singular test functions, as fractions of `T`.
    pub window: (f64, f64),
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            size: 6,
            singular_eps_factors: vec![0.5, 0.25],
            window: (0.25, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRow {
    pub member: String,
    pub pairing1: f64,
    pub pairing2: f64,
    pub gap: f64,
    pub norm: f64,
    pub normalized_gap: f64,
}

/// Pairs one or two stored fields with a battery. Without a second field
/// the gap is the pairing itself.
pub fn flux_table(
    first: (&FieldST, &CoefficientSet),
    second: Option<(&FieldST, &CoefficientSet)>,
    battery: &BatteryConfig,
) -> Result<Vec<FluxRow>> {
    let domain = first.0.grid.domain.clone();
    let bumps = boundary_battery(&domain, battery.size);
    let mut members: Vec<(String, Box<dyn SpaceTimeFn>)> = bumps
        .into_iter()
        .enumerate()
        .map(|(k, b)| (format!("bump{k}"), Box::new(b) as Box<dyn SpaceTimeFn>))
        .collect();
    let t = domain.t_final;
    for f in &battery.singular_eps_factors {
        let eps = f * domain.eps0;
        let phi = make_test_function(
            SingularTestFn::new(&domain, eps)?,
            CutoffPair::new(&domain.xbar, eps, (battery.window.0 * t, battery.window.1 * t))?,
        );
        members.push((format!("singular{f}"), Box::new(phi)));
    }
    let refs: Vec<&dyn SpaceTimeFn> = members.iter().map(|(_, p)| p.as_ref()).collect();
    let p1 = FluxFunctional::new(first.0, first.1).pair_many(&refs)?;
    let p2 = match second {
        Some((f, c)) => FluxFunctional::new(f, c).pair_many(&refs)?,
        None => vec![0.0; refs.len()],
    };
    Ok(members
        .iter()
        .zip(refs.iter())
        .zip(p1.iter().zip(&p2))
        .map(|(((name, _), phi), (a, b))| {
            let norm = h1_time_h1_norm(*phi, &domain, 32);
            FluxRow {
                member: name.clone(),
                pairing1: *a,
                pairing2: *b,
                gap: a - b,
                norm,
                normalized_gap: (a - b).abs() / norm,
            }
        })
        .collect())
}

/// Mismatched lower-order data used by the discrimination experiment:
/// reaction `0.05·(u + 1)`, storage `1.05·u` and an initial bump of `0.05`.
pub fn mismatched_side(coefficient: Preset) -> SideConfig {
    SideConfig {
        coefficient,
        lower: LowerOrder {
            reaction_rate: 0.05,
            reaction_reference: -1.0,
            storage_scale: 1.05,
            drift: [0.0, 0.0],
        },
        initial_bump: 0.05,
        ..SideConfig::default()
    }
}

/// Configuration of the headline experiment: `a1 = 2` against `a2 = 1` (or
/// `a2 = 2` when `agreeing`) with the lower-order mismatch on side two.
pub fn discrimination_config(agreeing: bool) -> ExperimentConfig {
    let side2 = mismatched_side(Preset::Constant {
        value: if agreeing { 2.0 } else { 1.0 },
    });
    ExperimentConfig {
        side1: SideConfig {
            coefficient: Preset::Constant { value: 2.0 },
            ..SideConfig::default()
        },
        side2: Some(side2),
        ..ExperimentConfig::default()
    }
}

pub fn discriminate(cfg: &ExperimentConfig) -> Result<DiscriminationReport> {
    let s1 = cfg.side1.side()?;
    let s2 = cfg.second().side()?;
    discrimination_sweep(cfg.domain(), &s1, &s2, &cfg.sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rectangle: usize,
    pub eps: f64,
    pub n_nodes: usize,
    pub principal: f64,
    pub lhs: f64,
    pub flux: f64,
    pub storage: f64,
    pub drift: f64,
    pub reaction: f64,
    pub residual: f64,
    pub flux_near: f64,
    pub flux_far: f64,
    pub lower_sum: f64,
    pub error: String,
}

pub fn report_rows(report: &DiscriminationReport) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (k, s) in report.sweeps.iter().enumerate() {
        for r in &s.rows {
            out.push(ReportRow {
                rectangle: k,
                eps: r.eps,
                n_nodes: r.n_nodes,
                principal: r.principal,
                lhs: r.identity.lhs,
                flux: r.identity.flux,
                storage: r.identity.storage,
                drift: r.identity.drift,
                reaction: r.identity.reaction,
                residual: r.identity.residual,
                flux_near: r.flux_near,
                flux_far: r.flux_far,
                lower_sum: r.lower_sum,
                error: r.error.clone().unwrap_or_default(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub mode: String,
    pub datum: usize,
    pub gap: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn reverse(cfg: &ExperimentConfig) -> Result<Vec<ReverseReport>> {
    let s1 = cfg.side1.side()?;
    let s2 = cfg.second().side()?;
    let r = &cfg.reverse;
    let data = battery_specs(cfg.domain(), cfg.side1.u_range, r.data_size, &r.eps_factors)
        .iter()
        .map(|d| d.build(cfg.domain()))
        .collect::<Result<Vec<_>>>()?;
    r.modes
        .iter()
        .map(|&mode| {
            let opts = crate::identifiability::ReverseOptions {
                mode,
                controls: cfg.controls,
                ..r.options.clone()
            };
            reverse_check(cfg.domain(), &s1, &s2, &data, &opts)
        })
        .collect()
}

pub fn gap_rows(reports: &[ReverseReport]) -> Vec<GapRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.gaps.iter().enumerate().map(move |(k, &g)| GapRow {
                mode: format!("{:?}", r.mode).to_lowercase(),
                datum: k,
                gap: g,
                threshold: r.threshold,
                pass: g <= r.threshold,
            })
        })
        .collect()
}

/// True coefficient, data and synthetic pairings of the reconstruction block.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<MeasurementSet> {
    let r = &cfg.reconstruction;
    let range = cfg.side1.u_range;
    let (a0, a1) = r.truth;
    let truth = ParamA::from_fn(range, r.knots, r.a_lo, |u| a0 + a1 * u)?;
    let data = battery_specs(cfg.domain(), range, r.data_size, &r.eps_factors);
    let synthesis = crate::reconstruction::ForwardModel {
        n_cells: r.inversion.n_cells * r.refine,
        n_steps: r.inversion.n_steps * r.refine,
        ..r.inversion
    };
    synthesize_measurements(cfg.domain(), &truth, &data, synthesis, r.inversion, r.noise, cfg.seed)
}

/// Constant initial guess for [`reconstruct`].
pub fn constant_init(meas: &MeasurementSet, value: f64) -> Result<ParamA> {
    let t = &meas.provenance.true_coefficient;
    ParamA::from_fn(t.range, t.values.len(), t.a_lo, |_| value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovered {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub history: Vec<f64>,
    pub final_misfit: f64,
    pub converged: bool,
    pub forward_solves: usize,
    /// Relative max-norm knot error against the synthesis coefficient.
    pub relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn reconstruct(
    meas: &MeasurementSet,
    init: &ParamA,
    reg: f64,
    opts: &RecoveryOptions,
    tolerance: f64,
) -> Result<Recovered> {
    let (a, d) = recover_a(meas, init, reg, opts)?;
    let truth = meas.provenance.true_coefficient.clone();
    let relative_error = a.relative_error(|u| truth.eval(u));
    Ok(Recovered {
        knots: a.knots(),
        values: a.values,
        history: d.history,
        final_misfit: d.final_misfit,
        converged: d.converged,
        forward_solves: d.forward_solves,
        relative_error,
        tolerance,
        pass: relative_error <= tolerance,
    })
}
