use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use idlab::coefficients::{CoefficientSet, Preset};
use idlab::flux::FluxFunctional;
use idlab::geometry::{dist, exterior_point, Domain, Grid, Point2};
use idlab::identifiability::principal_term;
use idlab::reconstruction::{inverse_kirchhoff, kirchhoff_transform, ParamA};
use idlab::singular::{CutoffPair, DirichletDatum, SingularTestFn};
use idlab::solver::{solve_parabolic, FieldST, ProblemSpec};
use idlab::testfn::{boundary_battery, make_test_function, SpaceTimeFn};

/// `α·φ1 + β·φ2`.
struct Combination<'a> {
    alpha: f64,
    beta: f64,
    phi1: &'a dyn SpaceTimeFn,
    phi2: &'a dyn SpaceTimeFn,
}

impl SpaceTimeFn for Combination<'_> {
    fn value(&self, x: Point2, t: f64) -> f64 {
        self.alpha * self.phi1.value(x, t) + self.beta * self.phi2.value(x, t)
    }

    fn grad(&self, x: Point2, t: f64) -> Point2 {
        let (p, q) = (self.phi1.grad(x, t), self.phi2.grad(x, t));
        [self.alpha * p[0] + self.beta * q[0], self.alpha * p[1] + self.beta * q[1]]
    }

    fn dt(&self, x: Point2, t: f64) -> f64 {
        self.alpha * self.phi1.dt(x, t) + self.beta * self.phi2.dt(x, t)
    }

    fn time_support(&self) -> (f64, f64) {
        let (a, b) = (self.phi1.time_support(), self.phi2.time_support());
        (a.0.min(b.0), a.1.max(b.1))
    }

    fn time_kinks(&self) -> Vec<f64> {
        let mut k = self.phi1.time_kinks();
        k.extend(self.phi2.time_kinks());
        k
    }
}

fn stored_solution() -> &'static (FieldST, CoefficientSet) {
    static CELL: OnceLock<(FieldST, CoefficientSet)> = OnceLock::new();
    CELL.get_or_init(|| {
        let c = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
        let grid = Arc::new(Grid::uniform(&Domain::default(), 12).unwrap());
        let g = Arc::new(|x: Point2, t: f64| 0.3 + 0.4 * x[0] * t + 0.1 * x[1]);
        let spec = ProblemSpec::new(grid, c.clone(), g, Arc::new(|x: Point2| 0.3 + 0.1 * x[1]), 6);
        (solve_parabolic(&spec).unwrap(), c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_function_is_evaluable_on_the_closed_domain(f in 0.01f64..=1.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let dom = Domain::default();
        let eps = f * dom.eps0;
        let c = exterior_point(&dom, eps).unwrap();
        prop_assert!(dist(&[x, y], &c) >= eps.min(dist(&dom.xbar, &c)) * (1.0 - 1e-12));
        let lam = SingularTestFn::new(&dom, eps).unwrap();
        prop_assert!(lam.value(&[x, y]).is_finite());
    }

    #[test]
    fn singular_gradient_matches_differences(f in 0.05f64..=1.0, x in 0.05f64..=0.95, y in 0.05f64..=0.95) {
        let dom = Domain::default();
        let lam = SingularTestFn::new(&dom, f * dom.eps0).unwrap();
        let g = lam.grad(&[x, y]);
        let h = 1e-6;
        let fd = [
            (lam.value(&[x + h, y]) - lam.value(&[x - h, y])) / (2.0 * h),
            (lam.value(&[x, y + h]) - lam.value(&[x, y - h])) / (2.0 * h),
        ];
        let scale = g[0].hypot(g[1]);
        prop_assert!((g[0] - fd[0]).hypot(g[1] - fd[1]) <= 1e-6 * scale.max(1e-12));
    }

    #[test]
    fn datum_stays_in_its_range(f in 0.01f64..=1.0, g1 in -1.0f64..1.0, width in 0.05f64..2.0, x in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let dom = Domain::default();
        let g2 = g1 + width;
        let d = DirichletDatum::new(&dom, f * dom.eps0, g1, g2, (0.25, 0.75)).unwrap();
        let v = d.value(&[x, 0.0], t);
        prop_assert!(v >= g1 && v <= g2);
    }

    #[test]
    fn pairing_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, i in 0usize..4, j in 0usize..4) {
        let (field, c) = stored_solution();
        let battery = boundary_battery(&field.grid.domain, 4);
        let flux = FluxFunctional::new(field, c);
        let combo = Combination { alpha, beta, phi1: &battery[i], phi2: &battery[j] };
        let lhs = flux.pair(&combo).unwrap();
        let p1 = flux.pair(&battery[i]).unwrap();
        let p2 = flux.pair(&battery[j]).unwrap();
        let rhs = alpha * p1 + beta * p2;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + alpha.abs() * p1.abs() + beta.abs() * p2.abs()));
    }

    #[test]
    fn swapping_sides_negates_the_principal_term(a1 in 0.2f64..5.0, a2 in 0.2f64..5.0, f in 0.02f64..=1.0) {
        let dom = Domain::default();
        let eps = f * dom.eps0;
        let c1 = Preset::Constant { value: a1 }.build((0.0, 1.0)).unwrap();
        let c2 = Preset::Affine { a0: a2, a1: 0.5 }.build((0.0, 1.0)).unwrap();
        let datum = DirichletDatum::new(&dom, eps, 0.0, 1.0, (0.25, 0.75)).unwrap();
        let lam = SingularTestFn::new(&dom, eps).unwrap();
        let p = principal_term(&datum, &lam, &c1, &c2).unwrap();
        let q = principal_term(&datum, &lam, &c2, &c1).unwrap();
        prop_assert_eq!(p, -q);
    }

    #[test]
    fn kirchhoff_round_trip(values in prop::collection::vec(0.1f64..4.0, 2..12), lo in -1.0f64..1.0, span in 0.1f64..3.0) {
        let a = ParamA::new((lo, lo + span), values, 0.1).unwrap();
        let u: Vec<f64> = (0..=40).map(|k| lo + span * k as f64 / 40.0).collect();
        let back = inverse_kirchhoff(&a, &kirchhoff_transform(&a, &u).unwrap()).unwrap();
        for (x, y) in u.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn singular_test_function_time_factor_vanishes_outside_window() {
    let dom = Domain::default();
    let phi = make_test_function(
        SingularTestFn::new(&dom, 0.1).unwrap(),
        CutoffPair::new(&dom.xbar, 0.1, (0.25, 0.75)).unwrap(),
    );
    for t in [0.0, 0.1, 0.25, 0.75, 0.9, 1.0] {
        assert_eq!(phi.value([0.3, 0.4], t), 0.0);
    }
    assert!(phi.value([0.3, 0.4], 0.5) != 0.0);
}
