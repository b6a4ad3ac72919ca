//! Forward solvers: bilinear finite elements in space, backward Euler in
//! time, Picard or Newton iteration for the nonlinearities.
//!
//! The discrete problem at time `t_n` reads, for every free node `i`,
//!
//! ```text
//! Σ_cells ∫ (a(t,u_h)∇u_h + b(x,t,u_h))·∇ψ_i            (2×2 Gauss)
//!   + Σ_cells |K|/4 c(x_i, t, u_i, ∇u_h|_K(x_i))          (vertex rule)
//!   + M_i (d(t,u_i) - d(t_{n-1},u_i^{n-1})) / τ = 0       (lumped mass)
//! ```
//!
//! and Dirichlet nodes take the boundary datum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, DriftFn};
use crate::error::{Error, Result};
use crate::geometry::{shape, shape_grad, Grid, Point2};
use crate::sparse::{self, CsrMatrix};

pub type BoundaryFn = Arc<dyn Fn(Point2, f64) -> f64 + Send + Sync>;
pub type InitialFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearMethod {
    /// Frozen-coefficient iteration with a symmetric matrix.
    Picard,
    /// Full Jacobian including the derivatives of `a`, `b` and `c`.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    /// Relative tolerance on the diagonally scaled residual.
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
    pub method: NonlinearMethod,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            linear_tol: 1e-12,
            method: NonlinearMethod::Picard,
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub grid: Arc<Grid>,
    pub coeffs: CoefficientSet,
    pub boundary: BoundaryFn,
    pub initial: InitialFn,
    pub n_steps: usize,
    pub controls: SolverControls,
}

impl ProblemSpec {
    pub fn new(
        grid: Arc<Grid>,
        coeffs: CoefficientSet,
        boundary: BoundaryFn,
        initial: InitialFn,
        n_steps: usize,
    ) -> Self {
        Self {
            grid,
            coeffs,
            boundary,
            initial,
            n_steps,
            controls: SolverControls::default(),
        }
    }

    pub fn with_controls(mut self, controls: SolverControls) -> Self {
        self.controls = controls;
        self
    }

    pub fn tau(&self) -> f64 {
        self.grid.domain.t_final / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let t = self.grid.domain.t_final;
        (0..=self.n_steps)
            .map(|n| t * n as f64 / self.n_steps as f64)
            .collect()
    }
}

/// Per-run solver diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Nonlinear iterations per time step.
    pub iterations: Vec<usize>,
    /// Largest final scaled residual over all steps.
    pub max_residual: f64,
    /// Outer coupling iterations per step (coupled mode only).
    #[serde(default)]
    pub outer_iterations: Vec<usize>,
}

/// Space-time nodal field `values[n][k]` at `times[n]`.
#[derive(Debug, Clone)]
pub struct FieldST {
    pub grid: Arc<Grid>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub report: SolveReport,
}

impl FieldST {
    pub fn new(grid: Arc<Grid>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || values.iter().any(|v| v.len() != grid.n_nodes()) {
            return Err(Error::InvalidInput("field shape does not match grid and time stamps".into()));
        }
        Ok(Self {
            grid,
            times,
            values,
            report: SolveReport::default(),
        })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn at(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn trace(&self, n: usize, nodes: &[usize]) -> Vec<f64> {
        nodes.iter().map(|&k| self.values[n][k]).collect()
    }

    pub fn gamma_m_trace(&self, n: usize) -> Vec<f64> {
        self.trace(n, &self.grid.gamma_m_nodes())
    }

    /// Bilinear in space, linear in time.
    pub fn value(&self, x: Point2, t: f64) -> f64 {
        let (n, w) = self.time_bracket(t);
        let a = self.grid.interpolate(&self.values[n], x);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.grid.interpolate(&self.values[n + 1], x)
    }

    pub fn gradient(&self, n: usize, x: Point2) -> Point2 {
        self.grid.interpolate_gradient(&self.values[n], x)
    }

    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let m = self.times.len();
        if m == 1 || t <= self.times[0] {
            return (0, 0.0);
        }
        if t >= self.times[m - 1] {
            return (m - 2, 1.0);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        (k, (t - self.times[k]) / (self.times[k + 1] - self.times[k]))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `‖u‖_{L²(0,T;H¹)}` with the right-endpoint rule in time.
    pub fn energy_norm(&self) -> f64 {
        let mut s = 0.0;
        for n in 1..self.times.len() {
            s += (self.times[n] - self.times[n - 1]) * h1_norm_sq(&self.grid, &self.values[n]);
        }
        s.sqrt()
    }
}

/// Squared `H¹` norm of a nodal field (2×2 Gauss per cell).
pub fn h1_norm_sq(grid: &Grid, u: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let nodes = grid.cell_nodes(i, j);
            let hx = grid.xs[i + 1] - grid.xs[i];
            let hy = grid.ys[j + 1] - grid.ys[j];
            for &(xi, eta) in &GAUSS2 {
                let nv = shape(xi, eta);
                let ng = shape_grad(xi, eta);
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for k in 0..4 {
                    let uk = u[nodes[k]];
                    v += nv[k] * uk;
                    g[0] += ng[k][0] / hx * uk;
                    g[1] += ng[k][1] / hy * uk;
                }
                s += 0.25 * hx * hy * (v * v + g[0] * g[0] + g[1] * g[1]);
            }
        }
    }
    s
}

const G: f64 = 0.211_324_865_405_187_1; // (1 - 1/√3)/2
const GAUSS2: [(f64, f64); 4] = [(G, G), (1.0 - G, G), (G, 1.0 - G), (1.0 - G, 1.0 - G)];
const VERTICES: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

/// Storage data of the previous step: `d(t_{n-1}, u^{n-1})` per node and `τ`.
struct Storage<'a> {
    prev: &'a [f64],
    tau: f64,
}

/// Assembles the residual and (optionally) the iteration matrix.
#[allow(clippy::too_many_arguments)]
fn assemble(
    grid: &Grid,
    coeffs: &CoefficientSet,
    u: &[f64],
    t: f64,
    storage: Option<&Storage>,
    newton: bool,
    res: &mut [f64],
    mut jac: Option<&mut CsrMatrix>,
) -> Result<()> {
    res.iter_mut().for_each(|r| *r = 0.0);
    if let Some(j) = jac.as_deref_mut() {
        j.clear();
    }
    for cj in 0..grid.ny() {
        for ci in 0..grid.nx() {
            let nodes = grid.cell_nodes(ci, cj);
            let (x0, y0) = (grid.xs[ci], grid.ys[cj]);
            let hx = grid.xs[ci + 1] - x0;
            let hy = grid.ys[cj + 1] - y0;
            let ul = [u[nodes[0]], u[nodes[1]], u[nodes[2]], u[nodes[3]]];
            let w = 0.25 * hx * hy;
            for &(xi, eta) in &GAUSS2 {
                let nv = shape(xi, eta);
                let rg = shape_grad(xi, eta);
                let dg: [[f64; 2]; 4] = std::array::from_fn(|k| [rg[k][0] / hx, rg[k][1] / hy]);
                let mut ug = 0.0;
                let mut gu = [0.0; 2];
                for k in 0..4 {
                    ug += nv[k] * ul[k];
                    gu[0] += dg[k][0] * ul[k];
                    gu[1] += dg[k][1] * ul[k];
                }
                let x = [x0 + xi * hx, y0 + eta * hy];
                let a = coeffs.a(t, ug)?;
                let b = coeffs.b(x, t, ug);
                let flux = [a * gu[0] + b[0], a * gu[1] + b[1]];
                for k in 0..4 {
                    res[nodes[k]] += w * (flux[0] * dg[k][0] + flux[1] * dg[k][1]);
                }
                if let Some(jm) = jac.as_deref_mut() {
                    let (da, db) = if newton {
                        (coeffs.a_u(t, ug), coeffs.b_u(x, t, ug))
                    } else {
                        (0.0, [0.0; 2])
                    };
                    let lin = [da * gu[0] + db[0], da * gu[1] + db[1]];
                    for k in 0..4 {
                        for m in 0..4 {
                            let mut v = a * (dg[m][0] * dg[k][0] + dg[m][1] * dg[k][1]);
                            if newton {
                                v += nv[m] * (lin[0] * dg[k][0] + lin[1] * dg[k][1]);
                            }
                            jm.add(nodes[k], nodes[m], w * v);
                        }
                    }
                }
            }
            if coeffs.has_reaction() {
                for (k, &(xi, eta)) in VERTICES.iter().enumerate() {
                    let rg = shape_grad(xi, eta);
                    let dg: [[f64; 2]; 4] = std::array::from_fn(|m| [rg[m][0] / hx, rg[m][1] / hy]);
                    let mut gu = [0.0; 2];
                    for m in 0..4 {
                        gu[0] += dg[m][0] * ul[m];
                        gu[1] += dg[m][1] * ul[m];
                    }
                    let x = [x0 + xi * hx, y0 + eta * hy];
                    res[nodes[k]] += w * coeffs.c(x, t, ul[k], gu);
                    if let Some(jm) = jac.as_deref_mut() {
                        jm.add(nodes[k], nodes[k], w * coeffs.c_u(x, t, ul[k], gu));
                        if newton && coeffs.c_uses_gradient {
                            let cp = coeffs.c_p(x, t, ul[k], gu);
                            for m in 0..4 {
                                jm.add(nodes[k], nodes[m], w * (cp[0] * dg[m][0] + cp[1] * dg[m][1]));
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(st) = storage {
        let mass = grid.volume_weights();
        for k in 0..grid.n_nodes() {
            res[k] += mass[k] * (coeffs.d(t, u[k]) - st.prev[k]) / st.tau;
            if let Some(jm) = jac.as_deref_mut() {
                jm.add(k, k, mass[k] * coeffs.d_u(t, u[k]) / st.tau);
            }
        }
    }
    Ok(())
}

/// Iterates one nonlinear solve (a time step or the elliptic problem) with
/// Dirichlet values already in place. Returns the iteration count and the
/// final scaled residual.
fn nonlinear_solve(
    grid: &Grid,
    coeffs: &CoefficientSet,
    u: &mut [f64],
    t: f64,
    storage: Option<&Storage>,
    controls: &SolverControls,
    step: usize,
) -> Result<(usize, f64)> {
    let n = grid.n_nodes();
    let fixed: Vec<bool> = (0..n).map(|k| grid.is_dirichlet(k)).collect();
    let newton = controls.method == NonlinearMethod::Newton;
    let mut jac = CsrMatrix::nine_point(grid);
    let mut res = vec![0.0; n];
    let mut history = Vec::new();
    let mut delta = vec![0.0; n];
    for it in 0..=controls.max_iter {
        assemble(grid, coeffs, u, t, storage, newton, &mut res, Some(&mut jac))?;
        let diag = jac.diagonal();
        let scaled = (0..n)
            .filter(|&k| !fixed[k])
            .map(|k| (res[k] / diag[k]).abs())
            .fold(0.0, f64::max);
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        history.push(scaled);
        if !scaled.is_finite() {
            break;
        }
        if scaled <= controls.tol * umax.max(1.0) {
            return Ok((it, scaled));
        }
        if it == controls.max_iter {
            break;
        }
        jac.constrain(&fixed);
        let rhs: Vec<f64> = (0..n).map(|k| if fixed[k] { 0.0 } else { -res[k] }).collect();
        delta.iter_mut().for_each(|d| *d = 0.0);
        let symmetric = !newton;
        sparse::solve(&jac, &rhs, &mut delta, symmetric, controls.linear_tol)?;
        for k in 0..n {
            if !fixed[k] {
                u[k] += delta[k];
            }
        }
    }
    Err(Error::NonlinearDivergence {
        step,
        time: t,
        history,
    })
}

fn apply_dirichlet(grid: &Grid, boundary: &BoundaryFn, t: f64, u: &mut [f64]) {
    for k in 0..grid.n_nodes() {
        if grid.is_dirichlet(k) {
            u[k] = boundary(grid.coord(k), t);
        }
    }
}

fn initial_level(spec: &ProblemSpec) -> Vec<f64> {
    let grid = &spec.grid;
    let mut u: Vec<f64> = (0..grid.n_nodes()).map(|k| (spec.initial)(grid.coord(k))).collect();
    let mut mismatch: f64 = 0.0;
    for k in 0..grid.n_nodes() {
        if grid.is_dirichlet(k) {
            let g = (spec.boundary)(grid.coord(k), 0.0);
            mismatch = mismatch.max((g - u[k]).abs());
            u[k] = g;
        }
    }
    if mismatch > 1e-8 {
        log::warn!("initial value and boundary datum differ by {mismatch:e} at t = 0");
    }
    u
}

/// Advances `u_prev` by one backward-Euler step to time `t`.
fn advance(
    spec: &ProblemSpec,
    coeffs: &CoefficientSet,
    u_prev: &[f64],
    t_prev: f64,
    t: f64,
    step: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let grid = &spec.grid;
    let prev: Vec<f64> = u_prev.iter().map(|&v| coeffs.d(t_prev, v)).collect();
    let storage = Storage {
        prev: &prev,
        tau: t - t_prev,
    };
    let mut u = u_prev.to_vec();
    apply_dirichlet(grid, &spec.boundary, t, &mut u);
    let (its, r) = nonlinear_solve(grid, coeffs, &mut u, t, Some(&storage), &spec.controls, step)?;
    Ok((u, its, r))
}

/// Solves the parabolic problem on `[0, T]` with `n_steps` uniform steps.
pub fn solve_parabolic(spec: &ProblemSpec) -> Result<FieldST> {
    if spec.n_steps == 0 {
        return Err(Error::InvalidInput("n_steps must be positive".into()));
    }
    let times = spec.times();
    let mut values = Vec::with_capacity(times.len());
    values.push(initial_level(spec));
    let mut report = SolveReport::default();
    for n in 1..times.len() {
        let (u, its, r) = advance(spec, &spec.coeffs, &values[n - 1], times[n - 1], times[n], n)?;
        report.iterations.push(its);
        report.max_residual = report.max_residual.max(r);
        values.push(u);
    }
    Ok(FieldST {
        grid: spec.grid.clone(),
        times,
        values,
        report,
    })
}

/// Result of a stationary solve.
#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub grid: Arc<Grid>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `-div(a(u)∇u + b(x,u)) + c(x,u,∇u) = 0` with `u = g` on the
/// Dirichlet edges. Coefficients are evaluated at the frozen time `t`.
pub fn solve_elliptic(
    grid: Arc<Grid>,
    coeffs: &CoefficientSet,
    boundary: &BoundaryFn,
    t: f64,
    controls: &SolverControls,
) -> Result<EllipticSolution> {
    let mut u = vec![0.0; grid.n_nodes()];
    apply_dirichlet(&grid, boundary, t, &mut u);
    // start from the mean boundary value in the interior
    let bn: Vec<usize> = (0..grid.n_nodes()).filter(|&k| grid.is_dirichlet(k)).collect();
    let mean = bn.iter().map(|&k| u[k]).sum::<f64>() / bn.len() as f64;
    for k in 0..grid.n_nodes() {
        if !grid.is_dirichlet(k) {
            u[k] = mean;
        }
    }
    let (iterations, residual) = nonlinear_solve(&grid, coeffs, &mut u, t, None, controls, 0)?;
    Ok(EllipticSolution {
        grid,
        u,
        iterations,
        residual,
    })
}

/// Second species of the parabolic-elliptic drift-diffusion system:
/// `-ΔV + V = h(u)` with homogeneous Neumann data, and drift
/// `sensitivity(u)·∇V` in the first equation.
#[derive(Clone)]
pub struct CoupledSpec {
    pub sensitivity: ScalarFn,
    pub production: ScalarFn,
    pub outer_tol: f64,
    pub outer_max: usize,
}

impl CoupledSpec {
    /// `sensitivity = chi·u(1-u)`, `production = h`.
    pub fn logistic(chi: f64, production: ScalarFn) -> Self {
        Self {
            sensitivity: Arc::new(move |u| chi * u * (1.0 - u)),
            production,
            outer_tol: 1e-10,
            outer_max: 50,
        }
    }
}

/// Assembled `K + M` (lumped) operator of the second species.
struct ScreenedPoisson {
    matrix: CsrMatrix,
}

impl ScreenedPoisson {
    fn new(grid: &Grid) -> Self {
        let mut m = CsrMatrix::nine_point(grid);
        for cj in 0..grid.ny() {
            for ci in 0..grid.nx() {
                let nodes = grid.cell_nodes(ci, cj);
                let hx = grid.xs[ci + 1] - grid.xs[ci];
                let hy = grid.ys[cj + 1] - grid.ys[cj];
                let w = 0.25 * hx * hy;
                for &(xi, eta) in &GAUSS2 {
                    let rg = shape_grad(xi, eta);
                    let dg: [[f64; 2]; 4] = std::array::from_fn(|k| [rg[k][0] / hx, rg[k][1] / hy]);
                    for k in 0..4 {
                        for l in 0..4 {
                            m.add(nodes[k], nodes[l], w * (dg[k][0] * dg[l][0] + dg[k][1] * dg[l][1]));
                        }
                    }
                }
            }
        }
        for (k, &mass) in grid.volume_weights().iter().enumerate() {
            m.add(k, k, mass);
        }
        Self { matrix: m }
    }

    fn solve(&self, grid: &Grid, source: &[f64], guess: &mut [f64], tol: f64) -> Result<()> {
        let rhs: Vec<f64> = grid
            .volume_weights()
            .iter()
            .zip(source)
            .map(|(m, s)| m * s)
            .collect();
        sparse::solve(&self.matrix, &rhs, guess, true, tol)?;
        Ok(())
    }
}

fn drift_from_potential(grid: Arc<Grid>, v: Vec<f64>, sensitivity: ScalarFn) -> DriftFn {
    Arc::new(move |x, _t, u| {
        let g = grid.interpolate_gradient(&v, x);
        let s = sensitivity(u);
        [s * g[0], s * g[1]]
    })
}

/// Gauss–Seidel coupling of the parabolic equation for `u` with the
/// stationary equation for `V`. Returns `(u, V)`.
pub fn solve_coupled(spec: &ProblemSpec, coupled: &CoupledSpec) -> Result<(FieldST, FieldST)> {
    for end in [0.0, 1.0] {
        let v = (coupled.sensitivity)(end);
        if v.abs() > 1e-14 {
            return Err(Error::InvalidInput(format!(
                "drift sensitivity must vanish at u = 0 and u = 1 (value {v} at {end})"
            )));
        }
    }
    if spec.coeffs.has_drift() {
        return Err(Error::InvalidInput(
            "the coupled solver supplies the drift; the coefficient set must not carry one".into(),
        ));
    }
    let grid = spec.grid.clone();
    let n = grid.n_nodes();
    let op = ScreenedPoisson::new(&grid);
    let times = spec.times();
    let mut us = vec![initial_level(spec)];
    let mut vs = Vec::with_capacity(times.len());
    let source = |u: &[f64]| -> Vec<f64> { u.iter().map(|&x| (coupled.production)(x)).collect() };
    let mut v = vec![0.0; n];
    op.solve(&grid, &source(&us[0]), &mut v, spec.controls.linear_tol)?;
    vs.push(v.clone());
    let mut report = SolveReport::default();
    for step in 1..times.len() {
        let prev = us[step - 1].clone();
        let mut current = prev.clone();
        let mut converged = false;
        let mut total_its = 0;
        for outer in 0..coupled.outer_max {
            op.solve(&grid, &source(&current), &mut v, spec.controls.linear_tol)?;
            let coeffs = spec
                .coeffs
                .clone()
                .with_drift(drift_from_potential(grid.clone(), v.clone(), coupled.sensitivity.clone()));
            let (next, its, r) = advance(spec, &coeffs, &prev, times[step - 1], times[step], step)?;
            total_its += its;
            report.max_residual = report.max_residual.max(r);
            let change = next
                .iter()
                .zip(&current)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            current = next;
            if change <= coupled.outer_tol {
                report.outer_iterations.push(outer + 1);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonlinearDivergence {
                step,
                time: times[step],
                history: vec![],
            });
        }
        op.solve(&grid, &source(&current), &mut v, spec.controls.linear_tol)?;
        report.iterations.push(total_its);
        us.push(current);
        vs.push(v.clone());
    }
    let u_field = FieldST {
        grid: grid.clone(),
        times: times.clone(),
        values: us,
        report,
    };
    let v_field = FieldST {
        grid,
        times,
        values: vs,
        report: SolveReport::default(),
    };
    Ok((u_field, v_field))
}

/// Nodal residual of the discrete equations of step `n`, Dirichlet rows
/// included. On boundary nodes it is the discrete normal flux.
pub fn step_residual_vector(field: &FieldST, coeffs: &CoefficientSet, n: usize) -> Result<Vec<f64>> {
    let grid = &field.grid;
    if n == 0 || n >= field.n_times() {
        return Err(Error::InvalidInput(format!("step {n} out of range")));
    }
    let prev: Vec<f64> = field.values[n - 1]
        .iter()
        .map(|&v| coeffs.d(field.times[n - 1], v))
        .collect();
    let storage = Storage {
        prev: &prev,
        tau: field.times[n] - field.times[n - 1],
    };
    let mut res = vec![0.0; grid.n_nodes()];
    assemble(grid, coeffs, &field.values[n], field.times[n], Some(&storage), false, &mut res, None)?;
    Ok(res)
}

/// Nodal residual of the stationary equations at the frozen time `t`.
pub fn elliptic_residual_vector(sol: &EllipticSolution, coeffs: &CoefficientSet, t: f64) -> Result<Vec<f64>> {
    let mut res = vec![0.0; sol.grid.n_nodes()];
    assemble(&sol.grid, coeffs, &sol.u, t, None, false, &mut res, None)?;
    Ok(res)
}

/// Scaled residual of the discrete equations of step `n` for a stored field
/// (zero up to the nonlinear tolerance for a converged solve).
pub fn step_residual(field: &FieldST, coeffs: &CoefficientSet, n: usize) -> Result<f64> {
    let grid = &field.grid;
    if n == 0 || n >= field.n_times() {
        return Err(Error::InvalidInput(format!("step {n} out of range")));
    }
    let prev: Vec<f64> = field.values[n - 1]
        .iter()
        .map(|&v| coeffs.d(field.times[n - 1], v))
        .collect();
    let storage = Storage {
        prev: &prev,
        tau: field.times[n] - field.times[n - 1],
    };
    let mut res = vec![0.0; grid.n_nodes()];
    let mut jac = CsrMatrix::nine_point(grid);
    assemble(grid, coeffs, &field.values[n], field.times[n], Some(&storage), false, &mut res, Some(&mut jac))?;
    let diag = jac.diagonal();
    Ok((0..grid.n_nodes())
        .filter(|&k| !grid.is_dirichlet(k))
        .map(|k| (res[k] / diag[k]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Preset;
    use crate::geometry::{BcKind, BcLabels, Domain};

    fn grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(&Domain::default(), n).unwrap())
    }

    #[test]
    fn constant_state_is_preserved() {
        let c = Preset::Constant { value: 1.0 }.build((0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(grid(16), c.clone(), Arc::new(|_, _| 0.4), Arc::new(|_| 0.4), 8);
        let f = solve_parabolic(&spec).unwrap();
        for v in f.values.iter().flatten() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!(step_residual(&f, &c, 3).unwrap() < 1e-12);
    }

    #[test]
    fn elliptic_reproduces_affine_data() {
        let c = Preset::Constant { value: 1.0 }.build((-2.0, 3.0)).unwrap();
        let g: BoundaryFn = Arc::new(|x, _| 0.3 + 1.2 * x[0] - 0.7 * x[1]);
        let sol = solve_elliptic(grid(12), &c, &g, 0.0, &SolverControls::default()).unwrap();
        for k in 0..sol.grid.n_nodes() {
            assert!((sol.u[k] - g(sol.grid.coord(k), 0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn newton_and_picard_agree() {
        let c = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
        let g: BoundaryFn = Arc::new(|x, t| 0.5 + 0.4 * (3.0 * x[0]).sin() * t);
        let mk = |m| {
            ProblemSpec::new(grid(12), c.clone(), g.clone(), Arc::new(|_| 0.5), 6).with_controls(SolverControls {
                method: m,
                ..SolverControls::default()
            })
        };
        let a = solve_parabolic(&mk(NonlinearMethod::Picard)).unwrap();
        let b = solve_parabolic(&mk(NonlinearMethod::Newton)).unwrap();
        let diff = a.values[6]
            .iter()
            .zip(&b.values[6])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        assert!(b.report.iterations.iter().sum::<usize>() <= a.report.iterations.iter().sum::<usize>());
    }

    #[test]
    fn neumann_edges_preserve_constants() {
        let d = Domain::default()
            .with_bc(BcLabels {
                top: BcKind::Neumann,
                left: BcKind::Neumann,
                ..BcLabels::default()
            })
            .unwrap();
        let g = Arc::new(Grid::uniform(&d, 10).unwrap());
        assert!(!g.is_dirichlet(g.node(3, 10)));
        assert!(g.is_dirichlet(g.node(0, 0)));
        let c = Preset::Affine { a0: 1.0, a1: 0.5 }.build((0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(g, c, Arc::new(|_, _| 0.7), Arc::new(|_| 0.7), 4);
        let f = solve_parabolic(&spec).unwrap();
        assert!(f.values[4].iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn coupled_constant_state_is_equilibrium() {
        let c = Preset::Chemotaxis { chi: 1.0 }.build((0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(grid(10), c, Arc::new(|_, _| 0.3), Arc::new(|_| 0.3), 4);
        let (u, v) = solve_coupled(&spec, &CoupledSpec::logistic(1.0, Arc::new(|u| u))).unwrap();
        assert!(u.values[4].iter().all(|x| (x - 0.3).abs() < 1e-12));
        assert!(v.values[4].iter().all(|x| (x - 0.3).abs() < 1e-10));
    }

    #[test]
    fn coupled_without_production_matches_parabolic() {
        let c = Preset::Chemotaxis { chi: 1.0 }.build((0.0, 1.0)).unwrap();
        let g: BoundaryFn = Arc::new(|x, t| 0.2 + 0.5 * x[0] * t);
        let spec = ProblemSpec::new(grid(10), c, g, Arc::new(|_| 0.2), 4);
        let (u, v) = solve_coupled(&spec, &CoupledSpec::logistic(1.0, Arc::new(|_| 0.0))).unwrap();
        let p = solve_parabolic(&spec).unwrap();
        assert!(v.values.iter().flatten().all(|x| x.abs() < 1e-14));
        for (a, b) in u.values.iter().flatten().zip(p.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_rejects_bad_sensitivity() {
        let c = Preset::Chemotaxis { chi: 1.0 }.build((0.0, 1.0)).unwrap();
        let spec = ProblemSpec::new(grid(10), c, Arc::new(|_, _| 0.3), Arc::new(|_| 0.3), 2);
        let bad = CoupledSpec {
            sensitivity: Arc::new(|u| u),
            ..CoupledSpec::logistic(1.0, Arc::new(|u| u))
        };
        assert!(solve_coupled(&spec, &bad).is_err());
    }

    #[test]
    fn field_interpolates_in_time() {
        let g = grid(8);
        let n = g.n_nodes();
        let f = FieldST::new(g, vec![0.0, 1.0], vec![vec![0.0; n], vec![2.0; n]]).unwrap();
        assert!((f.value([0.3, 0.3], 0.25) - 0.5).abs() < 1e-15);
        assert!((f.energy_norm() - 2.0).abs() < 1e-12);
    }
}
