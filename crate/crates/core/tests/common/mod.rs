//! Oracles shared by the integration suites.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use idlab::coefficients::{CoefficientSet, Preset};
use idlab::geometry::{Domain, Grid};
use idlab::solver::{solve_parabolic, FieldST, ProblemSpec};

/// Manufactured solution `u*(x, t) = s(x)·θ(t)` with `s = sin(πx)sin(πy)`,
/// for the diffusion `a(u) = 1 + u` and storage `d = u`.
#[derive(Clone, Copy)]
pub enum Manufactured {
    /// `θ = e^{-rate·t}`.
    Decaying(f64),
    /// `θ = (1 + t)/2`; backward Euler differentiates it exactly.
    Linear,
}

impl Manufactured {
    fn theta(self, t: f64) -> (f64, f64) {
        match self {
            Manufactured::Decaying(r) => ((-r * t).exp(), -r * (-r * t).exp()),
            Manufactured::Linear => (0.5 * (1.0 + t), 0.5),
        }
    }

    pub fn exact(self, x: [f64; 2], t: f64) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin() * self.theta(t).0
    }

    /// `∂t u* − div((1 + u*)∇u*)`, written out by hand.
    pub fn forcing(self, x: [f64; 2], t: f64) -> f64 {
        let (th, dth) = self.theta(t);
        let (sx, cx) = ((PI * x[0]).sin(), (PI * x[0]).cos());
        let (sy, cy) = ((PI * x[1]).sin(), (PI * x[1]).cos());
        let u = sx * sy * th;
        let grad2 = PI * PI * th * th * (cx * cx * sy * sy + sx * sx * cy * cy);
        let lap = -2.0 * PI * PI * u;
        sx * sy * dth - (1.0 + u) * lap - grad2
    }

    pub fn coefficients(self) -> CoefficientSet {
        let base = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
        base.with_reaction(Arc::new(move |x, t, _, _| -self.forcing(x, t)), false)
    }

    pub fn solve(self, n_cells: usize, n_steps: usize) -> FieldST {
        let grid = Arc::new(Grid::uniform(&Domain::default(), n_cells).unwrap());
        let spec = ProblemSpec::new(
            grid,
            self.coefficients(),
            Arc::new(move |x, t| self.exact(x, t)),
            Arc::new(move |x| self.exact(x, 0.0)),
            n_steps,
        );
        solve_parabolic(&spec).unwrap()
    }

    /// Discrete `L²(0,T; L²)` error with lumped weights.
    pub fn error(self, field: &FieldST) -> f64 {
        let w = field.grid.volume_weights();
        let mut sum = 0.0;
        for n in 1..field.n_times() {
            let tau = field.times[n] - field.times[n - 1];
            let t = field.times[n];
            for (k, wk) in w.iter().enumerate() {
                let e = field.values[n][k] - self.exact(field.grid.coord(k), t);
                sum += tau * wk * e * e;
            }
        }
        sum.sqrt()
    }
}

/// Observed orders `log2(e_k / e_{k+1})` for successive halvings.
pub fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Relative identity residuals for two sides on successively halved
/// uniform grids, with `h` and `τ` refined together.
pub fn identity_residuals(
    c1: &CoefficientSet,
    c2: &CoefficientSet,
    levels: &[usize],
) -> Vec<f64> {
    use idlab::identifiability::{evaluate_identity, DatumSpec};
    use idlab::singular::{CutoffPair, SingularTestFn};
    use idlab::testfn::make_test_function;

    let domain = Domain::default();
    let eps = domain.eps0;
    let window = (0.25, 0.75);
    let data = DatumSpec {
        level: 0.0,
        g_hi: 1.0,
        eps,
        window,
    }
    .build(&domain)
    .unwrap();
    let phi = make_test_function(
        SingularTestFn::new(&domain, eps).unwrap(),
        CutoffPair::new(&domain.xbar, eps, window).unwrap(),
    );
    levels
        .iter()
        .map(|&n| {
            let grid = Arc::new(Grid::uniform(&domain, n).unwrap());
            let solve = |c: &CoefficientSet| {
                let spec = ProblemSpec::new(grid.clone(), c.clone(), data.boundary.clone(), Arc::new(|_| 0.0), n);
                solve_parabolic(&spec).unwrap()
            };
            let (u1, u2) = (solve(c1), solve(c2));
            let b = evaluate_identity(&u1, &u2, c1, c2, &phi, 0.0).unwrap();
            b.residual.abs() / b.lhs.abs()
        })
        .collect()
}
