//! Distinguishing two diffusion coefficients from boundary flux data.
//!
//! The machinery follows the uniqueness argument: locate a rectangle in
//! `(t, u)` where the coefficients differ, drive both problems with a
//! Dirichlet datum concentrated near the foot point, and test the flux
//! difference against the singular harmonic test functions `φ^ε`. The
//! principal boundary term grows like `ε^{(1-d)/2}` while everything the
//! lower-order terms contribute stays within `O(|ln ε|)`.

use std::cell::RefCell;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::flux::{boundary_integral, discrete_pair_elliptic, FluxFunctional};
use crate::geometry::{Domain, Grid, Point2};
use crate::quadrature::{adaptive, composite, fit_slope, GaussLegendre};
use crate::singular::{DirichletDatum, SingularTestFn};
use crate::solver::{solve_elliptic, solve_parabolic, BoundaryFn, InitialFn, ProblemSpec, SolverControls};
use crate::testfn::{
    boundary_battery, h1_time_h1_norm, harmonicity_defect, make_test_function, Localized, Part, SpaceTimeFn,
};

/// Harmonicity defect above which a test function is rejected.
pub const HARMONIC_TOL: f64 = 1e-2;

/// `A(t, g) = ∫_{lower}^{g} a(t, u) du`, adaptive to `1e-12`.
pub fn antiderivative(coeffs: &CoefficientSet, lower: f64, t: f64, g: f64) -> Result<f64> {
    if g == lower {
        return Ok(0.0);
    }
    let mut failure = None;
    let v = adaptive(
        |u| match coeffs.a(t, u) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        lower,
        g,
        1e-12,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// A rectangle `(t1, t2) × (g1, g2)` on which `s·(a1 - a2) ≥ η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub witness: (f64, f64),
    /// `|a1 - a2|` at the witness.
    pub peak: f64,
    pub eta: f64,
    pub t_range: (f64, f64),
    pub g_range: (f64, f64),
    /// `+1` when `a1 > a2` on the rectangle, `-1` otherwise.
    pub sign: f64,
}

impl Disagreement {
    /// Time window for the test functions: the rectangle's time range, or
    /// `(T/4, 3T/4)` when it spans the whole interval. Ends touching `0` or
    /// `T` are pulled inward by a tenth of the range.
    pub fn window(&self, t_final: f64) -> (f64, f64) {
        let (a, b) = self.t_range;
        let tol = 1e-12 * t_final;
        if a <= tol && b >= t_final - tol {
            return (0.25 * t_final, 0.75 * t_final);
        }
        let pad = 0.1 * (b - a);
        (if a <= tol { a + pad } else { a }, if b >= t_final - tol { b - pad } else { b })
    }
}

const SCAN: usize = 256;

/// Times, values and `diff[i][j]` at `(ts[i], us[j])`.
type Samples = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Samples `a1 - a2` on a uniform `n × n` grid of `[0, T] × u_range`.
fn sample_difference(
    a1: &CoefficientSet,
    a2: &CoefficientSet,
    t_final: f64,
    u_range: (f64, f64),
    n: usize,
) -> Result<Samples> {
    let ts: Vec<f64> = (0..n).map(|i| t_final * i as f64 / (n - 1) as f64).collect();
    let us: Vec<f64> = (0..n)
        .map(|j| u_range.0 + (u_range.1 - u_range.0) * j as f64 / (n - 1) as f64)
        .collect();
    let diff = ts
        .iter()
        .map(|&t| us.iter().map(|&u| Ok(a1.a(t, u)? - a2.a(t, u)?)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((ts, us, diff))
}

/// All disagreement rectangles: one per connected component of the set
/// where `|a1 - a2|` reaches half its global maximum with a fixed sign.
/// Sorted by decreasing peak difference.
pub fn locate_disagreements(
    a1: &CoefficientSet,
    a2: &CoefficientSet,
    t_final: f64,
    u_range: (f64, f64),
    atol: f64,
) -> Result<Vec<Disagreement>> {
    let (ts, us, diff) = sample_difference(a1, a2, t_final, u_range, SCAN)?;
    let max = diff.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if max <= atol {
        return Ok(Vec::new());
    }
    let eta = 0.5 * max;
    let n = SCAN;
    let mut label = vec![vec![usize::MAX; n]; n];
    let mut out = Vec::new();
    for i0 in 0..n {
        for j0 in 0..n {
            if label[i0][j0] != usize::MAX || diff[i0][j0].abs() < eta {
                continue;
            }
            let sign = diff[i0][j0].signum();
            let id = out.len();
            let inside = |i: usize, j: usize| sign * diff[i][j] >= eta;
            // flood fill the component
            let mut stack = vec![(i0, j0)];
            label[i0][j0] = id;
            let mut best = (i0, j0);
            while let Some((i, j)) = stack.pop() {
                if sign * diff[i][j] > sign * diff[best.0][best.1] {
                    best = (i, j);
                }
                let nb = [
                    (i.wrapping_sub(1), j),
                    (i + 1, j),
                    (i, j.wrapping_sub(1)),
                    (i, j + 1),
                ];
                for (a, b) in nb {
                    if a < n && b < n && label[a][b] == usize::MAX && inside(a, b) {
                        label[a][b] = id;
                        stack.push((a, b));
                    }
                }
            }
            let (ri, rj) = maximal_rectangle(&label, id, best);
            let mut rect = Disagreement {
                witness: (ts[best.0], us[best.1]),
                peak: diff[best.0][best.1].abs(),
                eta,
                t_range: (ts[ri.0], ts[ri.1]),
                g_range: (us[rj.0], us[rj.1]),
                sign,
            };
            shrink_until_verified(a1, a2, &mut rect)?;
            out.push(rect);
        }
    }
    out.sort_by(|a, b| b.peak.partial_cmp(&a.peak).unwrap());
    Ok(out)
}

/// The disagreement with the largest gap, if any.
pub fn locate_disagreement(
    a1: &CoefficientSet,
    a2: &CoefficientSet,
    t_final: f64,
    u_range: (f64, f64),
    atol: f64,
) -> Result<Option<Disagreement>> {
    Ok(locate_disagreements(a1, a2, t_final, u_range, atol)?.into_iter().next())
}

/// Largest axis-aligned block of cells labelled `id` containing `seed`.
fn maximal_rectangle(label: &[Vec<usize>], id: usize, seed: (usize, usize)) -> ((usize, usize), (usize, usize)) {
    let n = label.len();
    let run = |i: usize| -> Option<(usize, usize)> {
        if label[i][seed.1] != id {
            return None;
        }
        let mut l = seed.1;
        while l > 0 && label[i][l - 1] == id {
            l -= 1;
        }
        let mut r = seed.1;
        while r + 1 < n && label[i][r + 1] == id {
            r += 1;
        }
        Some((l, r))
    };
    let runs: Vec<Option<(usize, usize)>> = (0..n).map(run).collect();
    let mut lo = seed.0;
    while lo > 0 && runs[lo - 1].is_some() {
        lo -= 1;
    }
    let mut hi = seed.0;
    while hi + 1 < n && runs[hi + 1].is_some() {
        hi += 1;
    }
    let mut best = (0usize, (seed.0, seed.0), (seed.1, seed.1));
    for i1 in lo..=seed.0 {
        let (mut l, mut r) = (0, n - 1);
        for (i2, span) in runs.iter().enumerate().take(hi + 1).skip(i1) {
            let (a, b) = span.unwrap();
            l = l.max(a);
            r = r.min(b);
            if i2 >= seed.0 {
                let area = (i2 - i1 + 1) * (r - l + 1);
                if area > best.0 {
                    best = (area, (i1, i2), (l, r));
                }
            }
        }
    }
    (best.1, best.2)
}

/// Re-samples the rectangle on a finer grid and pulls the sides in until
/// the margin holds everywhere.
fn shrink_until_verified(a1: &CoefficientSet, a2: &CoefficientSet, d: &mut Disagreement) -> Result<()> {
    for _ in 0..64 {
        let (t0, t1) = d.t_range;
        let (g0, g1) = d.g_range;
        let m = 64;
        let mut ok = true;
        'scan: for i in 0..=m {
            for j in 0..=m {
                let t = t0 + (t1 - t0) * i as f64 / m as f64;
                let u = g0 + (g1 - g0) * j as f64 / m as f64;
                if d.sign * (a1.a(t, u)? - a2.a(t, u)?) < d.eta * (1.0 - 1e-12) {
                    ok = false;
                    break 'scan;
                }
            }
        }
        if ok {
            return Ok(());
        }
        let (wt, wg) = (t1 - t0, g1 - g0);
        let pull = |a: f64, b: f64, c: f64, w: f64| {
            let a2 = if c - a > 1e-3 * w { a + 0.02 * w } else { a };
            let b2 = if b - c > 1e-3 * w { b - 0.02 * w } else { b };
            (a2.min(c), b2.max(c))
        };
        d.t_range = pull(t0, t1, d.witness.0, wt);
        d.g_range = pull(g0, g1, d.witness.1, wg);
    }
    Err(Error::Unresolved(
        "disagreement rectangle could not be verified on the refined grid".into(),
    ))
}

/// Terms of the integral identity for two solutions and one test function.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityBreakdown {
    /// `∫∫_{∂Ω} (A1(t,u1) - A2(t,u2)) ∂_nφ`
    pub lhs: f64,
    /// `⟨j1 - j2, φ⟩` from the discrete fluxes.
    pub flux: f64,
    /// `∫∫ (d1 - d2) ∂_tφ`
    pub storage: f64,
    /// `∫∫ (b1 - b2)·∇φ`
    pub drift: f64,
    /// `∫∫ (c1 - c2) φ`
    pub reaction: f64,
    /// `lhs - (flux + storage - drift - reaction)`
    pub residual: f64,
}

impl IdentityBreakdown {
    pub fn rhs(&self) -> f64 {
        self.flux + self.storage - self.drift - self.reaction
    }

    pub fn lower_sum(&self) -> f64 {
        self.storage.abs() + self.drift.abs() + self.reaction.abs()
    }

    /// `|residual| / max(|lhs|, 1)`.
    pub fn relative_residual(&self) -> f64 {
        self.residual.abs() / self.lhs.abs().max(1.0)
    }
}

/// Evaluates every term of the identity. `lower` is the lower limit of the
/// antiderivatives. Fails for test functions that are not harmonic in space.
pub fn evaluate_identity(
    u1: &crate::solver::FieldST,
    u2: &crate::solver::FieldST,
    c1: &CoefficientSet,
    c2: &CoefficientSet,
    phi: &dyn SpaceTimeFn,
    lower: f64,
) -> Result<IdentityBreakdown> {
    let defect = harmonicity_defect(phi);
    if !(defect <= HARMONIC_TOL) {
        return Err(Error::TestFunction(format!(
            "test function is not harmonic in space (relative Laplacian {defect:e})"
        )));
    }
    if u1.times != u2.times {
        return Err(Error::InvalidInput("fields use different time grids".into()));
    }
    let j1 = FluxFunctional::new(u1, c1);
    let j2 = FluxFunctional::new(u2, c2);
    let t1 = j1.terms(phi)?;
    let t2 = j2.terms(phi)?;
    let flux = j1.discrete_pair(phi)? - j2.discrete_pair(phi)?;
    let lhs = boundary_a_integral(u1, c1, phi, lower)? - boundary_a_integral(u2, c2, phi, lower)?;
    let mut b = IdentityBreakdown {
        lhs,
        flux,
        storage: t1.storage - t2.storage,
        drift: t1.drift - t2.drift,
        reaction: t1.reaction - t2.reaction,
        residual: 0.0,
    };
    b.residual = b.lhs - b.rhs();
    Ok(b)
}

fn boundary_a_integral(
    field: &crate::solver::FieldST,
    coeffs: &CoefficientSet,
    phi: &dyn SpaceTimeFn,
    lower: f64,
) -> Result<f64> {
    let failure = RefCell::new(None);
    let v = boundary_integral(field, phi, 2, &|_, t, u| match antiderivative(coeffs, lower, t, u) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    });
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Exact principal term `∫∫_{Γ_M∩B_ε} (A1(t,g) - A2(t,g)) χ(t) ∂_nλ^ε`
/// for the concentrated datum `g`.
pub fn principal_term(
    datum: &DirichletDatum,
    lambda: &SingularTestFn,
    c1: &CoefficientSet,
    c2: &CoefficientSet,
) -> Result<f64> {
    if datum.dim != 2 {
        return Err(Error::InvalidInput("principal term is implemented for d = 2".into()));
    }
    let rule = GaussLegendre::new(8);
    let e = datum.eps();
    let (t1, t2) = datum.window();
    let cut = &datum.cutoff;
    let space = [-e, -0.5 * e, 0.0, 0.5 * e, e];
    let times: Vec<f64> = (0..=8).map(|k| t1 + (t2 - t1) * k as f64 / 8.0).collect();
    let mut failure = None;
    let v = composite(&rule, &times, |t| {
        let chi = cut.temporal(t);
        chi * composite(&rule, &space, |s| {
            let g = datum.value_radial(s.abs(), t);
            let diff = antiderivative(c1, datum.g1, t, g).and_then(|a| Ok(a - antiderivative(c2, datum.g1, t, g)?));
            match diff {
                Ok(d) => d * lambda.dn_radial(s.abs()),
                Err(err) => {
                    failure.get_or_insert(err);
                    0.0
                }
            }
        })
    });
    match failure {
        Some(err) => Err(err),
        None => Ok(v),
    }
}

/// One side of the comparison: coefficients and initial data. The initial
/// value is `level + offset(x)`, where `level` is the boundary value at
/// `t = 0`, so `offset` should vanish on `∂Ω`.
#[derive(Clone)]
pub struct Side {
    pub coeffs: CoefficientSet,
    pub offset: InitialFn,
}

impl Side {
    pub fn new(coeffs: CoefficientSet) -> Self {
        Self {
            coeffs,
            offset: Arc::new(|_| 0.0),
        }
    }

    /// Adds `amplitude · 16 x1(1-x1) x2(1-x2)` to the initial value.
    pub fn with_initial_bump(mut self, amplitude: f64) -> Self {
        self.offset = Arc::new(move |x: Point2| amplitude * 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
        self
    }

    fn initial(&self, level: f64) -> InitialFn {
        let off = self.offset.clone();
        Arc::new(move |x| level + off(x))
    }
}

/// Sweep over `ε` and the resolution attached to each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// `ε / ε0` for every row.
    pub eps_factors: Vec<f64>,
    pub n_steps: usize,
    /// Finest spacing is `ε / h_ratio`.
    pub h_ratio: f64,
    /// Fine spacing is kept within `fine_radius · ε` of the foot point.
    pub fine_radius: f64,
    pub h_coarse: f64,
    pub growth: f64,
    pub controls: SolverControls,
    /// Coefficient differences below this count as agreement.
    pub atol: f64,
    pub slope_tol: f64,
    /// Required `|principal| / lower_sum` at the smallest `ε`.
    pub dominance: f64,
    /// When no disagreement exists, still run the sweep on the full value
    /// range so the vanishing principal term is reported.
    pub probe_when_agreeing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            eps_factors: (3..=7).map(|k| 2f64.powi(-k)).collect(),
            n_steps: 128,
            h_ratio: 8.0,
            fine_radius: 2.0,
            h_coarse: 1.0 / 32.0,
            growth: 1.2,
            controls: SolverControls::default(),
            atol: 1e-8,
            slope_tol: 0.1,
            dominance: 4.0,
            probe_when_agreeing: true,
        }
    }
}

/// One `ε` of the sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub n_nodes: usize,
    /// Exact principal term of the datum.
    pub principal: f64,
    #[serde(flatten)]
    pub identity: IdentityBreakdown,
    /// Flux pairing split by the spatial hat of radius `ε0`.
    pub flux_near: f64,
    pub flux_far: f64,
    pub lower_sum: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Distinguishable,
    NotDetected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Distinguishable => "DISTINGUISHABLE",
            Verdict::NotDetected => "NOT-DETECTED",
        }
    }
}

/// Sweep over one rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleSweep {
    pub disagreement: Option<Disagreement>,
    pub g_range: (f64, f64),
    pub window: (f64, f64),
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub predicted_slope: f64,
    /// `max/min` of `lower_sum / |ln ε|` over the rows.
    pub lower_ratio_spread: f64,
    /// Smallest `|principal| ε^{(d-1)/2}`.
    pub c1: f64,
    /// Largest `lower_sum / |ln ε|`.
    pub c2: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub max_difference: f64,
    pub sweeps: Vec<RectangleSweep>,
    pub verdict: Verdict,
}

/// Runs the `ε`-sweep on every disagreement rectangle of `(side1, side2)`.
pub fn discrimination_sweep(
    domain: &Domain,
    side1: &Side,
    side2: &Side,
    opts: &SweepOptions,
) -> Result<DiscriminationReport> {
    if domain.dim != 2 {
        return Err(Error::InvalidInput("the forward solver is two-dimensional".into()));
    }
    let u_range = side1.coeffs.bounds.u_range;
    let (_, _, diff) = sample_difference(&side1.coeffs, &side2.coeffs, domain.t_final, u_range, SCAN)?;
    let max_difference = diff.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let rects = locate_disagreements(&side1.coeffs, &side2.coeffs, domain.t_final, u_range, opts.atol)?;
    let mut sweeps = Vec::new();
    if rects.is_empty() {
        if opts.probe_when_agreeing {
            let full = Disagreement {
                witness: (0.5 * domain.t_final, 0.5 * (u_range.0 + u_range.1)),
                peak: 0.0,
                eta: 0.0,
                t_range: (0.0, domain.t_final),
                g_range: u_range,
                sign: 1.0,
            };
            let mut s = sweep_rectangle(domain, side1, side2, &full, opts)?;
            s.disagreement = None;
            s.verdict = Verdict::NotDetected;
            sweeps.push(s);
        }
    } else {
        for r in &rects {
            sweeps.push(sweep_rectangle(domain, side1, side2, r, opts)?);
        }
    }
    let verdict = if sweeps.iter().any(|s| s.verdict == Verdict::Distinguishable) {
        Verdict::Distinguishable
    } else {
        Verdict::NotDetected
    };
    Ok(DiscriminationReport {
        max_difference,
        sweeps,
        verdict,
    })
}

fn sweep_rectangle(
    domain: &Domain,
    side1: &Side,
    side2: &Side,
    rect: &Disagreement,
    opts: &SweepOptions,
) -> Result<RectangleSweep> {
    let window = rect.window(domain.t_final);
    let (g1, g2) = rect.g_range;
    let rows: Vec<SweepRow> = opts
        .eps_factors
        .par_iter()
        .map(|&f| {
            let eps = f * domain.eps0;
            sweep_row(domain, side1, side2, eps, (g1, g2), window, opts).unwrap_or_else(|e| SweepRow {
                eps,
                error: Some(e.to_string()),
                ..SweepRow::default()
            })
        })
        .collect();
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let d = domain.dim as f64;
    let predicted = 0.5 * (1.0 - d);
    let slope = if ok.len() >= 2 && ok.iter().all(|r| r.principal != 0.0) {
        let x: Vec<f64> = ok.iter().map(|r| r.eps.ln()).collect();
        let y: Vec<f64> = ok.iter().map(|r| r.principal.abs().ln()).collect();
        fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    let ratios: Vec<f64> = ok.iter().map(|r| r.lower_sum / r.eps.ln().abs()).collect();
    let rmax = ratios.iter().cloned().fold(0.0, f64::max);
    let rmin = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let lower_ratio_spread = if rmin > 0.0 { rmax / rmin } else { f64::INFINITY };
    let c1 = ok
        .iter()
        .map(|r| r.principal.abs() * r.eps.powf(0.5 * (d - 1.0)))
        .fold(f64::INFINITY, f64::min);
    let smallest = ok.iter().min_by(|a, b| a.eps.partial_cmp(&b.eps).unwrap());
    let dominant = smallest.is_some_and(|r| {
        r.principal.abs() > 10.0 * opts.controls.tol && r.principal.abs() >= opts.dominance * r.lower_sum
    });
    let verdict = if ok.len() == rows.len() && (slope - predicted).abs() <= opts.slope_tol && dominant {
        Verdict::Distinguishable
    } else {
        Verdict::NotDetected
    };
    Ok(RectangleSweep {
        disagreement: Some(rect.clone()),
        g_range: (g1, g2),
        window,
        rows,
        slope,
        predicted_slope: predicted,
        lower_ratio_spread,
        c1,
        c2: rmax,
        verdict,
    })
}

/// Grid resolving the structures of size `ε` near the foot point.
pub fn sweep_grid(domain: &Domain, eps: f64, opts: &SweepOptions) -> Result<Grid> {
    let h_fine = (eps / opts.h_ratio).min(opts.h_coarse);
    Grid::graded(domain, h_fine, opts.fine_radius * eps, opts.h_coarse, opts.growth)
}

fn sweep_row(
    domain: &Domain,
    side1: &Side,
    side2: &Side,
    eps: f64,
    g_range: (f64, f64),
    window: (f64, f64),
    opts: &SweepOptions,
) -> Result<SweepRow> {
    let datum = DirichletDatum::new(domain, eps, g_range.0, g_range.1, window)?;
    let lambda = SingularTestFn::new(domain, eps)?;
    let phi = make_test_function(lambda.clone(), datum.cutoff.clone());
    let grid = Arc::new(sweep_grid(domain, eps, opts)?);
    let g = datum.clone();
    let boundary: BoundaryFn = Arc::new(move |x, t| g.value(&x, t));
    let solve = |side: &Side| {
        let spec = ProblemSpec::new(
            grid.clone(),
            side.coeffs.clone(),
            boundary.clone(),
            side.initial(g_range.0),
            opts.n_steps,
        )
        .with_controls(opts.controls);
        solve_parabolic(&spec)
    };
    let u1 = solve(side1)?;
    let u2 = solve(side2)?;
    let identity = evaluate_identity(&u1, &u2, &side1.coeffs, &side2.coeffs, &phi, g_range.0)?;
    let principal = principal_term(&datum, &lambda, &side1.coeffs, &side2.coeffs)?;
    let near = Localized::new(phi.clone(), domain, Part::Near);
    let far = Localized::new(phi.clone(), domain, Part::Far);
    let j1 = FluxFunctional::new(&u1, &side1.coeffs).discrete_pair_many(&[&near, &far])?;
    let j2 = FluxFunctional::new(&u2, &side2.coeffs).discrete_pair_many(&[&near, &far])?;
    Ok(SweepRow {
        eps,
        n_nodes: grid.n_nodes(),
        principal,
        lower_sum: identity.lower_sum(),
        identity,
        flux_near: j1[0] - j2[0],
        flux_far: j1[1] - j2[1],
        error: None,
    })
}

/// Parameters of a concentrated datum `level + γ ε^{1/2} χ^ε(x) χ(t)` whose
/// amplitude is sized for the range `[level, g_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatumSpec {
    pub level: f64,
    pub g_hi: f64,
    pub eps: f64,
    pub window: (f64, f64),
}

impl DatumSpec {
    pub fn build(&self, domain: &Domain) -> Result<DirichletData> {
        let datum = DirichletDatum::new(domain, self.eps, self.level, self.g_hi, self.window)?;
        Ok(DirichletData {
            boundary: Arc::new(move |x, t| datum.value(&x, t)),
            level: self.level,
        })
    }
}

/// A Dirichlet datum together with its (spatially constant) value at `t = 0`.
#[derive(Clone)]
pub struct DirichletData {
    pub boundary: BoundaryFn,
    pub level: f64,
}

/// Concentrated data at base levels spread over `[g_lo, g_hi)`, widths
/// cycling through `eps_factors · ε0`, on the time window `(0.1T, 0.9T)`.
pub fn battery_specs(domain: &Domain, g_range: (f64, f64), size: usize, eps_factors: &[f64]) -> Vec<DatumSpec> {
    let (lo, hi) = g_range;
    (0..size)
        .map(|k| DatumSpec {
            level: lo + (hi - lo) * k as f64 / size as f64,
            g_hi: hi,
            eps: domain.eps0 * eps_factors[k % eps_factors.len()],
            window: (0.1 * domain.t_final, 0.9 * domain.t_final),
        })
        .collect()
}

/// [`battery_specs`] with widths `ε0`, `ε0/2`, `ε0/4`, instantiated.
pub fn dirichlet_battery(domain: &Domain, g_range: (f64, f64), size: usize) -> Result<Vec<DirichletData>> {
    battery_specs(domain, g_range, size, &[1.0, 0.5, 0.25])
        .iter()
        .map(|s| s.build(domain))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Parabolic,
    Elliptic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverseOptions {
    pub mode: Mode,
    pub n_cells: usize,
    pub n_steps: usize,
    /// Number of boundary bumps in the test battery.
    pub battery_size: usize,
    /// Frozen time of the elliptic problems.
    pub elliptic_time: f64,
    pub controls: SolverControls,
}

impl Default for ReverseOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Parabolic,
            n_cells: 32,
            n_steps: 32,
            battery_size: 6,
            elliptic_time: 0.5,
            controls: SolverControls::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseReport {
    pub mode: Mode,
    /// Normalized battery gap per Dirichlet datum.
    pub gaps: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
}

/// Errors unless the two sides agree on every coefficient and on the
/// initial value at a set of probe points.
pub fn assert_same_spec(s1: &Side, s2: &Side, t_final: f64) -> Result<()> {
    let (lo, hi) = s1.coeffs.bounds.u_range;
    let (c1, c2) = (&s1.coeffs, &s2.coeffs);
    if c1.has_drift() != c2.has_drift() || c1.has_reaction() != c2.has_reaction() {
        return Err(Error::InvalidInput("sides differ in their lower-order structure".into()));
    }
    for i in 0..=8 {
        let x: Point2 = [0.1 + 0.1 * i as f64, 0.9 - 0.1 * i as f64];
        if s1.offset.as_ref()(x) != s2.offset.as_ref()(x) {
            return Err(Error::InvalidInput("sides have different initial values".into()));
        }
        for j in 0..=8 {
            let t = t_final * j as f64 / 8.0;
            for k in 0..=8 {
                let u = lo + (hi - lo) * k as f64 / 8.0;
                let g = [0.3, -0.2];
                let same = c1.a(t, u)? == c2.a(t, u)?
                    && c1.d(t, u) == c2.d(t, u)
                    && c1.b(x, t, u) == c2.b(x, t, u)
                    && c1.c(x, t, u, g) == c2.c(x, t, u, g);
                if !same {
                    return Err(Error::InvalidInput(format!(
                        "sides differ at (t, u) = ({t}, {u}); the reverse check needs identical specs"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Flux gaps on `Γ_M` for identical specs over a Dirichlet battery.
pub fn reverse_check(
    domain: &Domain,
    side1: &Side,
    side2: &Side,
    data: &[DirichletData],
    opts: &ReverseOptions,
) -> Result<ReverseReport> {
    assert_same_spec(side1, side2, domain.t_final)?;
    reverse_gaps(domain, side1, side2, data, opts)
}

/// Gap computation without the sameness precondition, used to show that a
/// perturbed coefficient is detected.
pub fn reverse_gaps(
    domain: &Domain,
    side1: &Side,
    side2: &Side,
    data: &[DirichletData],
    opts: &ReverseOptions,
) -> Result<ReverseReport> {
    let grid = Arc::new(Grid::uniform(domain, opts.n_cells)?);
    let bumps = boundary_battery(domain, opts.battery_size);
    let battery: Vec<&dyn SpaceTimeFn> = bumps.iter().map(|b| b as &dyn SpaceTimeFn).collect();
    let norms: Vec<f64> = battery.iter().map(|p| h1_time_h1_norm(*p, domain, 32)).collect();
    let gaps: Vec<Result<f64>> = data
        .par_iter()
        .map(|g| -> Result<f64> {
            let pairings = |side: &Side| -> Result<Vec<f64>> {
                match opts.mode {
                    Mode::Parabolic => {
                        let spec = ProblemSpec::new(
                            grid.clone(),
                            side.coeffs.clone(),
                            g.boundary.clone(),
                            side.initial(g.level),
                            opts.n_steps,
                        )
                        .with_controls(opts.controls);
                        let u = solve_parabolic(&spec)?;
                        FluxFunctional::new(&u, &side.coeffs).discrete_pair_many(&battery)
                    }
                    Mode::Elliptic => {
                        let t = opts.elliptic_time * domain.t_final;
                        let sol = solve_elliptic(grid.clone(), &side.coeffs, &g.boundary, t, &opts.controls)?;
                        battery
                            .iter()
                            .map(|p| {
                                let (a, b) = p.time_support();
                                discrete_pair_elliptic(&sol, &side.coeffs, *p, 0.5 * (a + b))
                            })
                            .collect()
                    }
                }
            };
            let p1 = pairings(side1)?;
            let p2 = pairings(side2)?;
            Ok(p1
                .iter()
                .zip(&p2)
                .zip(&norms)
                .map(|((a, b), n)| (a - b).abs() / n)
                .fold(0.0, f64::max))
        })
        .collect();
    let gaps = gaps.into_iter().collect::<Result<Vec<_>>>()?;
    let threshold = 10.0 * opts.controls.tol;
    let pass = gaps.iter().all(|g| *g <= threshold);
    Ok(ReverseReport {
        mode: opts.mode,
        gaps,
        threshold,
        pass,
    })
}
