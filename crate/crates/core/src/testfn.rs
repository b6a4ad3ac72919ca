//! Space-time test functions for the flux pairing.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point2};
use crate::quadrature::GaussLegendre;
use crate::singular::{relative_laplacian, CutoffPair, SingularTestFn};

/// A test function `φ(x, t)` with analytic derivatives.
pub trait SpaceTimeFn: Send + Sync {
    fn value(&self, x: Point2, t: f64) -> f64;
    fn grad(&self, x: Point2, t: f64) -> Point2;
    fn dt(&self, x: Point2, t: f64) -> f64;

    /// `∇∂_tφ`, by default from differences of the gradient in time.
    fn grad_dt(&self, x: Point2, t: f64) -> Point2 {
        let h = 1e-6;
        let p = self.grad(x, t + h);
        let m = self.grad(x, t - h);
        [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
    }

    /// Closed interval outside of which `φ` vanishes identically.
    fn time_support(&self) -> (f64, f64);

    /// Breakpoints in time where `φ` is only piecewise smooth.
    fn time_kinks(&self) -> Vec<f64> {
        let (a, b) = self.time_support();
        vec![a, b]
    }
}

/// `φ^ε(x, t) = λ^ε(x) χ(t)`.
#[derive(Debug, Clone)]
pub struct SingularSpaceTime {
    pub lambda: SingularTestFn,
    pub cutoff: CutoffPair,
}

pub fn make_test_function(lambda: SingularTestFn, cutoff: CutoffPair) -> SingularSpaceTime {
    SingularSpaceTime { lambda, cutoff }
}

impl SpaceTimeFn for SingularSpaceTime {
    fn value(&self, x: Point2, t: f64) -> f64 {
        let c = self.cutoff.temporal(t);
        if c == 0.0 {
            return 0.0;
        }
        self.lambda.value(&x) * c
    }

    fn grad(&self, x: Point2, t: f64) -> Point2 {
        let c = self.cutoff.temporal(t);
        if c == 0.0 {
            return [0.0; 2];
        }
        let g = self.lambda.grad(&x);
        [g[0] * c, g[1] * c]
    }

    fn dt(&self, x: Point2, t: f64) -> f64 {
        let c = self.cutoff.temporal_dt(t);
        if c == 0.0 {
            return 0.0;
        }
        self.lambda.value(&x) * c
    }

    fn grad_dt(&self, x: Point2, t: f64) -> Point2 {
        let c = self.cutoff.temporal_dt(t);
        let g = self.lambda.grad(&x);
        [g[0] * c, g[1] * c]
    }

    fn time_support(&self) -> (f64, f64) {
        (self.cutoff.t1, self.cutoff.t2)
    }
}

/// Which part of the split `φ = χ^{ε0}φ + (1-χ^{ε0})φ` to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Near,
    Far,
}

/// `φ` multiplied by the spatial hat `χ^{ε0}` around the foot point (or by
/// its complement).
#[derive(Debug, Clone)]
pub struct Localized<F> {
    pub inner: F,
    pub hat: CutoffPair,
    pub part: Part,
}

impl<F: SpaceTimeFn> Localized<F> {
    pub fn new(inner: F, domain: &Domain, part: Part) -> Self {
        let hat = CutoffPair::new(&domain.xbar, domain.eps0, (0.0, domain.t_final))
            .expect("domain was validated");
        Self { inner, hat, part }
    }

    fn weight(&self, x: Point2) -> (f64, Point2) {
        let dx = [x[0] - self.hat.xbar[0], x[1] - self.hat.xbar[1]];
        let r = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
        let w = self.hat.spatial_radial(r);
        let dw = self.hat.spatial_radial_derivative(r);
        let g = if r > 0.0 { [dw * dx[0] / r, dw * dx[1] / r] } else { [0.0; 2] };
        match self.part {
            Part::Near => (w, g),
            Part::Far => (1.0 - w, [-g[0], -g[1]]),
        }
    }
}

impl<F: SpaceTimeFn> SpaceTimeFn for Localized<F> {
    fn value(&self, x: Point2, t: f64) -> f64 {
        self.weight(x).0 * self.inner.value(x, t)
    }

    fn grad(&self, x: Point2, t: f64) -> Point2 {
        let (w, dw) = self.weight(x);
        let v = self.inner.value(x, t);
        let g = self.inner.grad(x, t);
        [w * g[0] + v * dw[0], w * g[1] + v * dw[1]]
    }

    fn dt(&self, x: Point2, t: f64) -> f64 {
        self.weight(x).0 * self.inner.dt(x, t)
    }

    fn grad_dt(&self, x: Point2, t: f64) -> Point2 {
        let (w, dw) = self.weight(x);
        let v = self.inner.dt(x, t);
        let g = self.inner.grad_dt(x, t);
        [w * g[0] + v * dw[0], w * g[1] + v * dw[1]]
    }

    fn time_support(&self) -> (f64, f64) {
        self.inner.time_support()
    }

    fn time_kinks(&self) -> Vec<f64> {
        self.inner.time_kinks()
    }
}

/// Boundary bump supported near the bottom edge:
/// `hat((x1 - center)/width) · (1 - x2/depth)_+ · χ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBump {
    pub center: f64,
    pub width: f64,
    pub depth: f64,
    pub t1: f64,
    pub t2: f64,
}

impl BoundaryBump {
    fn space(&self, x: Point2) -> (f64, Point2) {
        let s = (x[0] - self.center) / self.width;
        let (h, dh) = if s.abs() >= 1.0 {
            (0.0, 0.0)
        } else {
            (1.0 - s.abs(), -s.signum() / self.width)
        };
        let z = 1.0 - x[1] / self.depth;
        let (v, dv) = if z <= 0.0 { (0.0, 0.0) } else { (z, -1.0 / self.depth) };
        (h * v, [dh * v, h * dv])
    }

    fn chi(&self, t: f64) -> (f64, f64) {
        if t > self.t1 && t < self.t2 {
            ((t - self.t1) * (self.t2 - t), self.t1 + self.t2 - 2.0 * t)
        } else {
            (0.0, 0.0)
        }
    }

    /// Trace on the bottom edge at `(x1, 0)`.
    pub fn trace(&self, x1: f64, t: f64) -> f64 {
        self.value([x1, 0.0], t)
    }
}

impl SpaceTimeFn for BoundaryBump {
    fn value(&self, x: Point2, t: f64) -> f64 {
        self.space(x).0 * self.chi(t).0
    }

    fn grad(&self, x: Point2, t: f64) -> Point2 {
        let (_, g) = self.space(x);
        let c = self.chi(t).0;
        [g[0] * c, g[1] * c]
    }

    fn dt(&self, x: Point2, t: f64) -> f64 {
        self.space(x).0 * self.chi(t).1
    }

    fn grad_dt(&self, x: Point2, t: f64) -> Point2 {
        let (_, g) = self.space(x);
        let c = self.chi(t).1;
        [g[0] * c, g[1] * c]
    }

    fn time_support(&self) -> (f64, f64) {
        (self.t1, self.t2)
    }
}

/// Nested battery of bumps on `Γ_M`: level `l` holds `2^{l+1} - 1`
/// overlapping hats of half-width `eps0 / 2^l`; members cycle through three
/// time windows. The first `n` members of a larger battery are the battery
/// of size `n`.
pub fn boundary_battery(domain: &Domain, size: usize) -> Vec<BoundaryBump> {
    let t = domain.t_final;
    let windows = [(0.05 * t, 0.95 * t), (0.05 * t, 0.5 * t), (0.5 * t, 0.95 * t)];
    let xb = domain.xbar[0];
    let mut out = Vec::with_capacity(size);
    let mut level = 0;
    while out.len() < size {
        let w = domain.eps0 / 2f64.powi(level);
        let m = (1i64 << level) - 1;
        for k in -m..=m {
            if out.len() == size {
                break;
            }
            let (t1, t2) = windows[out.len() % 3];
            out.push(BoundaryBump {
                center: xb + k as f64 * w,
                width: w,
                depth: w.min(0.5),
                t1,
                t2,
            });
        }
        level += 1;
    }
    out
}

type ValueFn = Arc<dyn Fn(Point2, f64) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point2, f64) -> Point2 + Send + Sync>;

/// Test function given by closures.
#[derive(Clone)]
pub struct ClosureFn {
    pub value: ValueFn,
    pub grad: GradFn,
    pub dt: ValueFn,
    pub support: (f64, f64),
}

impl SpaceTimeFn for ClosureFn {
    fn value(&self, x: Point2, t: f64) -> f64 {
        (self.value)(x, t)
    }
    fn grad(&self, x: Point2, t: f64) -> Point2 {
        (self.grad)(x, t)
    }
    fn dt(&self, x: Point2, t: f64) -> f64 {
        (self.dt)(x, t)
    }
    fn time_support(&self) -> (f64, f64) {
        self.support
    }
}

/// Separable `S(x)·χ(t)` with the quadratic bump `χ` on `window`.
pub fn separable<S, G>(space: S, grad: G, window: (f64, f64)) -> ClosureFn
where
    S: Fn(Point2) -> f64 + Send + Sync + 'static,
    G: Fn(Point2) -> Point2 + Send + Sync + 'static,
{
    let (t1, t2) = window;
    let chi = move |t: f64| if t > t1 && t < t2 { (t - t1) * (t2 - t) } else { 0.0 };
    let dchi = move |t: f64| if t > t1 && t < t2 { t1 + t2 - 2.0 * t } else { 0.0 };
    let space = Arc::new(space);
    let grad = Arc::new(grad);
    let (s1, s2) = (space.clone(), space);
    ClosureFn {
        value: Arc::new(move |x, t| s1(x) * chi(t)),
        grad: Arc::new(move |x, t| {
            let g = grad(x);
            [g[0] * chi(t), g[1] * chi(t)]
        }),
        dt: Arc::new(move |x, t| s2(x) * dchi(t)),
        support: window,
    }
}

/// Checks that `φ` vanishes at `t = 0` and `t = T`.
pub fn check_temporal_vanishing(phi: &dyn SpaceTimeFn, domain: &Domain) -> Result<()> {
    let probes = [[0.5, 0.5], [0.1, 0.0], domain.xbar2(), [0.9, 1.0], [0.3, 0.7]];
    for t in [0.0, domain.t_final] {
        for x in probes {
            let v = phi.value(x, t);
            if v.abs() > 1e-12 {
                return Err(Error::TestFunction(format!(
                    "φ({x:?}, {t}) = {v:e} does not vanish at the end of the time interval"
                )));
            }
        }
    }
    let (a, b) = phi.time_support();
    if a < 0.0 || b > domain.t_final {
        return Err(Error::TestFunction(format!("time support ({a}, {b}) leaves [0, T]")));
    }
    Ok(())
}

fn boundary_probes(n: usize) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(4 * n);
    for k in 0..=n {
        let s = k as f64 / n as f64;
        pts.push([s, 0.0]);
        pts.push([1.0, s]);
        pts.push([s, 1.0]);
        pts.push([0.0, s]);
    }
    pts
}

fn time_probes(phi: &dyn SpaceTimeFn) -> Vec<f64> {
    let (a, b) = phi.time_support();
    (1..8).map(|k| a + (b - a) * k as f64 / 8.0).collect()
}

/// Checks that `φ` vanishes on the boundary points selected by `outside`.
pub fn check_boundary_vanishing(
    phi: &dyn SpaceTimeFn,
    outside: impl Fn(Point2) -> bool,
    what: &str,
) -> Result<()> {
    for t in time_probes(phi) {
        for x in boundary_probes(256) {
            if outside(x) {
                let v = phi.value(x, t);
                if v.abs() > 1e-12 {
                    return Err(Error::TestFunction(format!(
                        "φ({x:?}, {t}) = {v:e} does not vanish on {what}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Largest scale-free harmonicity defect of `φ(·, t)` over interior probe
/// points in the middle of the time support.
pub fn harmonicity_defect(phi: &dyn SpaceTimeFn) -> f64 {
    let (a, b) = phi.time_support();
    let t = 0.5 * (a + b);
    let mut worst: f64 = 0.0;
    for i in 1..10 {
        for j in 1..10 {
            let x = [i as f64 / 10.0, j as f64 / 10.0];
            let rho = x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1]);
            let d = relative_laplacian(|y| phi.value([y[0], y[1]], t), &x, rho);
            worst = worst.max(d);
        }
    }
    worst
}

/// `‖φ‖_{H¹(0,T;H¹(Ω))}` by tensor Gauss quadrature on a uniform `m × m`
/// cell partition and the time kinks of `φ`.
pub fn h1_time_h1_norm(phi: &dyn SpaceTimeFn, domain: &Domain, m: usize) -> f64 {
    let rule = GaussLegendre::new(4);
    let mut kinks = phi.time_kinks();
    kinks.push(0.0);
    kinks.push(domain.t_final);
    kinks.retain(|t| (0.0..=domain.t_final).contains(t));
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kinks.dedup();
    let mut s = 0.0;
    for tw in kinks.windows(2) {
        for (t, wt) in rule.on_interval(tw[0], tw[1]) {
            for i in 0..m {
                for j in 0..m {
                    let (x0, x1) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
                    let (y0, y1) = (j as f64 / m as f64, (j + 1) as f64 / m as f64);
                    for (x, wx) in rule.on_interval(x0, x1) {
                        for (y, wy) in rule.on_interval(y0, y1) {
                            let p = [x, y];
                            let v = phi.value(p, t);
                            let g = phi.grad(p, t);
                            let dv = phi.dt(p, t);
                            let dg = phi.grad_dt(p, t);
                            s += wt * wx * wy
                                * (v * v + g[0] * g[0] + g[1] * g[1] + dv * dv + dg[0] * dg[0] + dg[1] * dg[1]);
                        }
                    }
                }
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_test_function_properties() {
        let d = Domain::default();
        let lam = SingularTestFn::new(&d, d.eps0 / 8.0).unwrap();
        let cut = CutoffPair::new(&d.xbar, d.eps0 / 8.0, (0.25, 0.75)).unwrap();
        let phi = make_test_function(lam, cut);
        assert_eq!(phi.value([0.3, 0.3], 0.1), 0.0);
        assert_eq!(phi.dt([0.3, 0.3], 0.5), 0.0);
        check_temporal_vanishing(&phi, &d).unwrap();
        assert!(harmonicity_defect(&phi) < 1e-2);
        let h = 1e-6;
        let fd = (phi.value([0.4, 0.2], 0.3 + h) - phi.value([0.4, 0.2], 0.3 - h)) / (2.0 * h);
        assert!((fd - phi.dt([0.4, 0.2], 0.3)).abs() < 1e-6 * fd.abs());
    }

    #[test]
    fn bumps_are_not_harmonic() {
        let d = Domain::default();
        let b = boundary_battery(&d, 1)[0];
        let smooth = separable(|x| (x[0] * 3.0).sin() * (x[1] * 2.0).exp(), |_| [0.0; 2], (0.2, 0.8));
        assert!(harmonicity_defect(&smooth) > 1e-2);
        assert!(b.depth <= 0.5);
    }

    #[test]
    fn battery_is_nested_and_supported_on_gamma_m() {
        let d = Domain::default();
        let big = boundary_battery(&d, 64);
        let small = boundary_battery(&d, 8);
        assert_eq!(&big[..8], &small[..]);
        for b in &big {
            assert!(b.center - b.width >= d.xbar[0] - d.eps0 - 1e-12);
            assert!(b.center + b.width <= d.xbar[0] + d.eps0 + 1e-12);
            check_boundary_vanishing(b, |x| !d.on_gamma_m(&[x[0], x[1]]), "∂Ω∖Γ_M").unwrap();
            check_temporal_vanishing(b, &d).unwrap();
        }
    }

    #[test]
    fn bump_gradient_matches_differences() {
        let b = BoundaryBump {
            center: 0.5,
            width: 0.2,
            depth: 0.3,
            t1: 0.1,
            t2: 0.9,
        };
        let x = [0.56, 0.1];
        let g = b.grad(x, 0.4);
        let h = 1e-7;
        let fx = (b.value([x[0] + h, x[1]], 0.4) - b.value([x[0] - h, x[1]], 0.4)) / (2.0 * h);
        let fy = (b.value([x[0], x[1] + h], 0.4) - b.value([x[0], x[1] - h], 0.4)) / (2.0 * h);
        assert!((g[0] - fx).abs() < 1e-6 && (g[1] - fy).abs() < 1e-6);
    }

    #[test]
    fn localized_parts_sum_to_whole() {
        let d = Domain::default();
        let lam = SingularTestFn::new(&d, 0.05).unwrap();
        let cut = CutoffPair::new(&d.xbar, 0.05, (0.25, 0.75)).unwrap();
        let phi = make_test_function(lam, cut);
        let near = Localized::new(phi.clone(), &d, Part::Near);
        let far = Localized::new(phi.clone(), &d, Part::Far);
        for x in [[0.5, 0.0], [0.6, 0.1], [0.9, 0.9]] {
            let s = near.value(x, 0.4) + far.value(x, 0.4);
            assert!((s - phi.value(x, 0.4)).abs() < 1e-12);
            let g = near.grad(x, 0.4);
            let h = far.grad(x, 0.4);
            let p = phi.grad(x, 0.4);
            assert!((g[0] + h[0] - p[0]).abs() < 1e-9 * p[0].abs().max(1.0));
        }
    }

    #[test]
    fn separable_norm_matches_closed_form() {
        // S ≡ 1 on the unit square: ‖φ‖² = ∫χ² + χ'² dt
        let d = Domain::default();
        let phi = separable(|_| 1.0, |_| [0.0; 2], (0.25, 0.75));
        let w: f64 = 0.5;
        let exact = (w.powi(5) / 30.0 + w.powi(3) / 3.0).sqrt();
        assert!((h1_time_h1_norm(&phi, &d, 2) - exact).abs() < 1e-5);
    }
}
