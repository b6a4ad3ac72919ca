//! The Neumann flux as a variational functional.
//!
//! For a space-time field `u` the flux `j` is defined through
//!
//! ```text
//! ⟨j, φ⟩ = ∫∫ (a∇u + b)·∇φ + c φ - d(t,u) ∂_tφ  dx dt
//! ```
//!
//! for every `φ` vanishing at `t = 0` and `t = T`. It is never extracted as
//! a pointwise normal derivative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::geometry::{shape, shape_grad, Domain, Edge, Grid, Point2};
use crate::quadrature::GaussLegendre;
use crate::solver::{elliptic_residual_vector, step_residual_vector, EllipticSolution, FieldST};
use crate::testfn::{check_boundary_vanishing, check_temporal_vanishing, h1_time_h1_norm, SpaceTimeFn};

/// The four volume contributions of a pairing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    /// `∫∫ a∇u·∇φ`
    pub diffusion: f64,
    /// `∫∫ b·∇φ`
    pub drift: f64,
    /// `∫∫ c φ`
    pub reaction: f64,
    /// `∫∫ d ∂_tφ`
    pub storage: f64,
}

impl PairTerms {
    /// `⟨j, φ⟩ = diffusion + drift + reaction - storage`.
    pub fn total(&self) -> f64 {
        self.diffusion + self.drift + self.reaction - self.storage
    }

    fn add(&mut self, o: &PairTerms) {
        self.diffusion += o.diffusion;
        self.drift += o.drift;
        self.reaction += o.reaction;
        self.storage += o.storage;
    }
}

/// Quadrature settings of the pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingRule {
    /// Gauss points per direction and cell.
    pub space_points: usize,
    /// Gauss points per time step.
    pub time_points: usize,
}

impl Default for PairingRule {
    fn default() -> Self {
        Self {
            space_points: 3,
            time_points: 2,
        }
    }
}

/// Field and coefficients whose flux is being paired.
#[derive(Clone, Copy)]
pub struct FluxFunctional<'a> {
    pub field: &'a FieldST,
    pub coeffs: &'a CoefficientSet,
    pub rule: PairingRule,
}

impl<'a> FluxFunctional<'a> {
    pub fn new(field: &'a FieldST, coeffs: &'a CoefficientSet) -> Self {
        Self {
            field,
            coeffs,
            rule: PairingRule::default(),
        }
    }

    pub fn with_rule(mut self, rule: PairingRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn pair(&self, phi: &dyn SpaceTimeFn) -> Result<f64> {
        Ok(self.terms_many(&[phi])?[0].total())
    }

    pub fn pair_many(&self, phis: &[&dyn SpaceTimeFn]) -> Result<Vec<f64>> {
        Ok(self.terms_many(phis)?.iter().map(PairTerms::total).collect())
    }

    pub fn terms(&self, phi: &dyn SpaceTimeFn) -> Result<PairTerms> {
        Ok(self.terms_many(&[phi])?[0])
    }

    /// Term-wise pairings of one field with several test functions in a
    /// single pass over the space-time quadrature points.
    pub fn terms_many(&self, phis: &[&dyn SpaceTimeFn]) -> Result<Vec<PairTerms>> {
        let domain = &self.field.grid.domain;
        for phi in phis {
            check_temporal_vanishing(*phi, domain)?;
        }
        let f = self.field;
        let grid = &*f.grid;
        let trule = GaussLegendre::new(self.rule.time_points);
        let srule = GaussLegendre::new(self.rule.space_points);
        let (lo, hi) = phis.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            let (s, e) = p.time_support();
            (a.min(s), b.max(e))
        });
        // time quadrature points: (level n, weight of level n, weight of n+1, t, w)
        let mut tpts = Vec::new();
        for n in 0..f.n_times() - 1 {
            let (t0, t1) = (f.times[n], f.times[n + 1]);
            if t1 <= lo || t0 >= hi {
                continue;
            }
            // split the step at kinks of the test functions
            let mut cuts = vec![t0, t1];
            for p in phis {
                cuts.extend(p.time_kinks().into_iter().filter(|&k| k > t0 && k < t1));
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup();
            for w in cuts.windows(2) {
                for (t, wt) in trule.on_interval(w[0], w[1]) {
                    let s = (t - t0) / (t1 - t0);
                    tpts.push((n, 1.0 - s, s, t, wt));
                }
            }
        }
        let ref_pts: Vec<(f64, f64, f64)> = srule
            .on_interval(0.0, 1.0)
            .flat_map(|(xi, wx)| {
                srule
                    .on_interval(0.0, 1.0)
                    .map(move |(eta, wy)| (xi, eta, wx * wy))
                    .collect::<Vec<_>>()
            })
            .collect();
        let rows: Vec<Result<Vec<PairTerms>>> = (0..grid.ny())
            .into_par_iter()
            .map(|cj| {
                let mut acc = vec![PairTerms::default(); phis.len()];
                for ci in 0..grid.nx() {
                    self.cell(grid, ci, cj, &tpts, &ref_pts, phis, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        // fixed-order reduction keeps results independent of the thread count
        let mut total = vec![PairTerms::default(); phis.len()];
        for r in rows {
            for (t, p) in total.iter_mut().zip(r?) {
                t.add(&p);
            }
        }
        Ok(total)
    }

    /// Discrete flux pairing: the backward-Euler residuals tested with the
    /// nodal values of `φ`, `Σ_n τ_n Σ_k R^n_k φ(x_k, t_n)`.
    ///
    /// Only boundary nodes contribute once the interior equations are solved,
    /// so this is the flux a measurement of the discrete DtN map returns. It
    /// differs from the volume pairing by `O(h + τ)`.
    pub fn discrete_pair_many(&self, phis: &[&dyn SpaceTimeFn]) -> Result<Vec<f64>> {
        let f = self.field;
        let grid = &*f.grid;
        for phi in phis {
            check_temporal_vanishing(*phi, &grid.domain)?;
        }
        let steps: Vec<usize> = (1..f.n_times())
            .filter(|&n| {
                let t = f.times[n];
                phis.iter().any(|p| {
                    let (a, b) = p.time_support();
                    t > a && t < b
                })
            })
            .collect();
        let parts: Vec<Result<Vec<f64>>> = steps
            .par_iter()
            .map(|&n| {
                let r = step_residual_vector(f, self.coeffs, n)?;
                let tau = f.times[n] - f.times[n - 1];
                let t = f.times[n];
                Ok(phis
                    .iter()
                    .map(|p| {
                        tau * r
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(k, v)| v * p.value(grid.coord(k), t))
                            .sum::<f64>()
                    })
                    .collect())
            })
            .collect();
        let mut total = vec![0.0; phis.len()];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p?) {
                *t += v;
            }
        }
        Ok(total)
    }

    pub fn discrete_pair(&self, phi: &dyn SpaceTimeFn) -> Result<f64> {
        Ok(self.discrete_pair_many(&[phi])?[0])
    }

    #[allow(clippy::too_many_arguments)]
    fn cell(
        &self,
        grid: &Grid,
        ci: usize,
        cj: usize,
        tpts: &[(usize, f64, f64, f64, f64)],
        ref_pts: &[(f64, f64, f64)],
        phis: &[&dyn SpaceTimeFn],
        acc: &mut [PairTerms],
    ) -> Result<()> {
        let f = self.field;
        let c = self.coeffs;
        let nodes = grid.cell_nodes(ci, cj);
        let (x0, y0) = (grid.xs[ci], grid.ys[cj]);
        let hx = grid.xs[ci + 1] - x0;
        let hy = grid.ys[cj + 1] - y0;
        let area = hx * hy;
        for &(xi, eta, ws) in ref_pts {
            let nv = shape(xi, eta);
            let rg = shape_grad(xi, eta);
            let x = [x0 + xi * hx, y0 + eta * hy];
            for &(n, w0, w1, t, wt) in tpts {
                let (u0, u1) = (&f.values[n], &f.values[n + 1]);
                let mut u = 0.0;
                let mut g = [0.0; 2];
                for k in 0..4 {
                    let uk = w0 * u0[nodes[k]] + w1 * u1[nodes[k]];
                    u += nv[k] * uk;
                    g[0] += rg[k][0] / hx * uk;
                    g[1] += rg[k][1] / hy * uk;
                }
                let a = c.a(t, u)?;
                let b = c.b(x, t, u);
                let cv = c.c(x, t, u, g);
                let d = c.d(t, u);
                let w = ws * area * wt;
                for (acc, phi) in acc.iter_mut().zip(phis) {
                    let (s, e) = phi.time_support();
                    if t <= s || t >= e {
                        continue;
                    }
                    let pg = phi.grad(x, t);
                    acc.diffusion += w * a * (g[0] * pg[0] + g[1] * pg[1]);
                    if c.has_drift() {
                        acc.drift += w * (b[0] * pg[0] + b[1] * pg[1]);
                    }
                    if c.has_reaction() {
                        acc.reaction += w * cv * phi.value(x, t);
                    }
                    acc.storage += w * d * phi.dt(x, t);
                }
            }
        }
        Ok(())
    }
}

pub fn pair(field: &FieldST, coeffs: &CoefficientSet, phi: &dyn SpaceTimeFn) -> Result<f64> {
    FluxFunctional::new(field, coeffs).pair(phi)
}

pub fn pair_many(field: &FieldST, coeffs: &CoefficientSet, phis: &[&dyn SpaceTimeFn]) -> Result<Vec<f64>> {
    FluxFunctional::new(field, coeffs).pair_many(phis)
}

/// Weak-form residual: the pairing with a test function vanishing on the
/// whole boundary.
pub fn weak_residual(field: &FieldST, phi: &dyn SpaceTimeFn, coeffs: &CoefficientSet) -> Result<f64> {
    check_boundary_vanishing(phi, |_| true, "∂Ω")?;
    pair(field, coeffs, phi)
}

/// Stationary pairing `∫ (a∇u + b)·∇φ + c φ` with `φ(·, t)`.
pub fn pair_elliptic(
    sol: &EllipticSolution,
    coeffs: &CoefficientSet,
    phi: &dyn SpaceTimeFn,
    t: f64,
) -> Result<f64> {
    let grid = &*sol.grid;
    let rule = GaussLegendre::new(3);
    let mut total = 0.0;
    for cj in 0..grid.ny() {
        for ci in 0..grid.nx() {
            let nodes = grid.cell_nodes(ci, cj);
            let (x0, y0) = (grid.xs[ci], grid.ys[cj]);
            let hx = grid.xs[ci + 1] - x0;
            let hy = grid.ys[cj + 1] - y0;
            for (xi, wx) in rule.on_interval(0.0, 1.0) {
                for (eta, wy) in rule.on_interval(0.0, 1.0) {
                    let nv = shape(xi, eta);
                    let rg = shape_grad(xi, eta);
                    let mut u = 0.0;
                    let mut g = [0.0; 2];
                    for k in 0..4 {
                        let uk = sol.u[nodes[k]];
                        u += nv[k] * uk;
                        g[0] += rg[k][0] / hx * uk;
                        g[1] += rg[k][1] / hy * uk;
                    }
                    let x = [x0 + xi * hx, y0 + eta * hy];
                    let a = coeffs.a(t, u)?;
                    let b = coeffs.b(x, t, u);
                    let pg = phi.grad(x, t);
                    let w = wx * wy * hx * hy;
                    total += w * ((a * g[0] + b[0]) * pg[0] + (a * g[1] + b[1]) * pg[1]);
                    if coeffs.has_reaction() {
                        total += w * coeffs.c(x, t, u, g) * phi.value(x, t);
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Discrete counterpart of [`pair_elliptic`]: nodal residuals tested with
/// `φ(·, t)`.
pub fn discrete_pair_elliptic(
    sol: &EllipticSolution,
    coeffs: &CoefficientSet,
    phi: &dyn SpaceTimeFn,
    t: f64,
) -> Result<f64> {
    let r = elliptic_residual_vector(sol, coeffs, t)?;
    Ok(r.iter()
        .enumerate()
        .map(|(k, v)| v * phi.value(sol.grid.coord(k), t))
        .sum())
}

/// Space-time boundary integral `∫∫_{∂Ω} f(x, t, u) ∂_nφ ds dt` of a field's
/// trace, with Gauss rules per boundary segment and time step.
pub fn boundary_integral(
    field: &FieldST,
    phi: &dyn SpaceTimeFn,
    space_points: usize,
    f: &dyn Fn(Point2, f64, f64) -> f64,
) -> f64 {
    let grid = &*field.grid;
    let srule = GaussLegendre::new(space_points);
    let trule = GaussLegendre::new(2);
    let (lo, hi) = phi.time_support();
    let mut total = 0.0;
    for n in 0..field.n_times() - 1 {
        let (t0, t1) = (field.times[n], field.times[n + 1]);
        if t1 <= lo || t0 >= hi {
            continue;
        }
        let mut cuts = vec![t0, t1];
        cuts.extend(phi.time_kinks().into_iter().filter(|&k| k > t0 && k < t1));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for tw in cuts.windows(2) {
            for (t, wt) in trule.on_interval(tw[0], tw[1]) {
                let s = (t - t0) / (t1 - t0);
                let level = |k: usize| (1.0 - s) * field.values[n][k] + s * field.values[n + 1][k];
                for edge in Edge::ALL {
                    let nrm = edge.outward_normal();
                    for (a, b, ka, kb) in edge_segments(grid, edge) {
                        let (ua, ub) = (level(ka), level(kb));
                        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                        for (r, wr) in srule.on_interval(0.0, 1.0) {
                            let x = [a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])];
                            let u = (1.0 - r) * ua + r * ub;
                            let g = phi.grad(x, t);
                            total += wt * wr * len * f(x, t, u) * (g[0] * nrm[0] + g[1] * nrm[1]);
                        }
                    }
                }
            }
        }
    }
    total
}

/// Boundary segments `(start, end, start node, end node)` along one edge.
pub fn edge_segments(grid: &Grid, edge: Edge) -> Vec<(Point2, Point2, usize, usize)> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Vec::new();
    match edge {
        Edge::Bottom | Edge::Top => {
            let j = if edge == Edge::Bottom { 0 } else { ny };
            for i in 0..nx {
                let (a, b) = (grid.node(i, j), grid.node(i + 1, j));
                out.push((grid.coord(a), grid.coord(b), a, b));
            }
        }
        Edge::Left | Edge::Right => {
            let i = if edge == Edge::Left { 0 } else { nx };
            for j in 0..ny {
                let (a, b) = (grid.node(i, j), grid.node(i, j + 1));
                out.push((grid.coord(a), grid.coord(b), a, b));
            }
        }
    }
    out
}

/// Normalized gaps `|⟨j1 - j2, φ⟩| / ‖φ‖` over a battery supported on `Γ_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    pub per_member: Vec<f64>,
    pub norms: Vec<f64>,
}

pub fn flux_gap_on_gamma_m(
    j1: &FluxFunctional,
    j2: &FluxFunctional,
    battery: &[&dyn SpaceTimeFn],
) -> Result<GapReport> {
    let domain: &Domain = &j1.field.grid.domain;
    for phi in battery {
        check_temporal_vanishing(*phi, domain)?;
        check_boundary_vanishing(*phi, |x| !domain.on_gamma_m(&[x[0], x[1]]), "∂Ω∖Γ_M")?;
    }
    let p1 = j1.pair_many(battery)?;
    let p2 = j2.pair_many(battery)?;
    let norms: Vec<f64> = battery.iter().map(|p| h1_time_h1_norm(*p, domain, 32)).collect();
    let per_member: Vec<f64> = p1
        .iter()
        .zip(&p2)
        .zip(&norms)
        .map(|((a, b), n)| (a - b).abs() / n)
        .collect();
    if norms.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::TestFunction("battery member with zero norm".into()));
    }
    Ok(GapReport {
        gap: per_member.iter().cloned().fold(0.0, f64::max),
        per_member,
        norms,
    })
}
