//! Coefficient sets `(a, b, c, d)` of the quasilinear equation
//!
//! ```text
//! ∂t d(t,u) - div(a(t,u)∇u + b(x,t,u)) + c(x,t,u,∇u) = 0
//! ```
//!
//! and the named presets.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub type ScalarTU = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(Point2, f64, f64) -> Point2 + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(Point2, f64, f64, Point2) -> f64 + Send + Sync>;

/// Regularity metadata attached to a coefficient set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub a_lo: f64,
    pub a_hi: f64,
    /// Budget for the `W^{1,∞}` norms of the coefficients.
    pub c_a: f64,
    /// Bound on `‖u0‖_{L²}`.
    pub c_0: f64,
    /// Admissible range `[g_lo, g_hi]` of the solution; coefficient
    /// arguments are clamped into it.
    pub u_range: (f64, f64),
}

impl Default for CoefficientBounds {
    fn default() -> Self {
        Self {
            a_lo: 0.1,
            a_hi: 10.0,
            c_a: 10.0,
            c_0: 1.0,
            u_range: (0.0, 1.0),
        }
    }
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub a: ScalarTU,
    pub b: Option<DriftFn>,
    pub c: Option<ReactionFn>,
    pub d: ScalarTU,
    pub bounds: CoefficientBounds,
    /// Whether `c` depends on `∇u` (enables the gradient terms of the Jacobian).
    pub c_uses_gradient: bool,
    clamp_warned: Arc<AtomicBool>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("has_drift", &self.b.is_some())
            .field("has_reaction", &self.c.is_some())
            .field("bounds", &self.bounds)
            .finish()
    }
}

const FD_STEP: f64 = 1e-6;

impl CoefficientSet {
    /// Set with diffusion `a`, storage `d(t,u) = u` and no drift or reaction.
    pub fn new(name: impl Into<String>, a: ScalarTU, bounds: CoefficientBounds) -> Self {
        Self {
            name: name.into(),
            a,
            b: None,
            c: None,
            d: Arc::new(|_, u| u),
            bounds,
            c_uses_gradient: false,
            clamp_warned: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn with_drift(mut self, b: DriftFn) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_reaction(mut self, c: ReactionFn, uses_gradient: bool) -> Self {
        self.c = Some(c);
        self.c_uses_gradient = uses_gradient;
        self
    }

    pub fn with_storage(mut self, d: ScalarTU) -> Self {
        self.d = d;
        self
    }

    pub fn with_bounds(mut self, bounds: CoefficientBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        let (lo, hi) = self.bounds.u_range;
        if u < lo || u > hi {
            let tol = 1e-9 * (hi - lo);
            if (u < lo - tol || u > hi + tol) && !self.clamp_warned.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "{}: u = {u} outside [{lo}, {hi}], clamping coefficient arguments",
                    self.name
                );
            }
            u.clamp(lo, hi)
        } else {
            u
        }
    }

    /// `a(t, u)` with the ellipticity bound checked.
    #[inline]
    pub fn a(&self, t: f64, u: f64) -> Result<f64> {
        let uc = self.clamp(u);
        let v = (self.a)(t, uc);
        if !(v >= self.bounds.a_lo) {
            return Err(Error::NotElliptic {
                t,
                u: uc,
                value: v,
                a_lo: self.bounds.a_lo,
            });
        }
        Ok(v)
    }

    /// `∂a/∂u` by central differences (zero where the clamp is active).
    pub fn a_u(&self, t: f64, u: f64) -> f64 {
        let h = FD_STEP * u.abs().max(1.0);
        ((self.a)(t, self.clamp(u + h)) - (self.a)(t, self.clamp(u - h))) / (2.0 * h)
    }

    #[inline]
    pub fn b(&self, x: Point2, t: f64, u: f64) -> Point2 {
        match &self.b {
            Some(b) => b(x, t, self.clamp(u)),
            None => [0.0; 2],
        }
    }

    pub fn b_u(&self, x: Point2, t: f64, u: f64) -> Point2 {
        match &self.b {
            Some(b) => {
                let h = FD_STEP * u.abs().max(1.0);
                let p = b(x, t, self.clamp(u + h));
                let m = b(x, t, self.clamp(u - h));
                [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
            }
            None => [0.0; 2],
        }
    }

    #[inline]
    pub fn c(&self, x: Point2, t: f64, u: f64, grad: Point2) -> f64 {
        match &self.c {
            Some(c) => c(x, t, self.clamp(u), grad),
            None => 0.0,
        }
    }

    pub fn c_u(&self, x: Point2, t: f64, u: f64, grad: Point2) -> f64 {
        match &self.c {
            Some(c) => {
                let h = FD_STEP * u.abs().max(1.0);
                (c(x, t, self.clamp(u + h), grad) - c(x, t, self.clamp(u - h), grad)) / (2.0 * h)
            }
            None => 0.0,
        }
    }

    pub fn c_p(&self, x: Point2, t: f64, u: f64, grad: Point2) -> Point2 {
        match &self.c {
            Some(c) if self.c_uses_gradient => {
                let uc = self.clamp(u);
                let h = FD_STEP * grad[0].abs().max(grad[1].abs()).max(1.0);
                let d0 = c(x, t, uc, [grad[0] + h, grad[1]]) - c(x, t, uc, [grad[0] - h, grad[1]]);
                let d1 = c(x, t, uc, [grad[0], grad[1] + h]) - c(x, t, uc, [grad[0], grad[1] - h]);
                [d0 / (2.0 * h), d1 / (2.0 * h)]
            }
            _ => [0.0; 2],
        }
    }

    #[inline]
    pub fn d(&self, t: f64, u: f64) -> f64 {
        (self.d)(t, self.clamp(u))
    }

    pub fn d_u(&self, t: f64, u: f64) -> f64 {
        let h = FD_STEP * u.abs().max(1.0);
        ((self.d)(t, self.clamp(u + h)) - (self.d)(t, self.clamp(u - h))) / (2.0 * h)
    }

    pub fn has_drift(&self) -> bool {
        self.b.is_some()
    }

    pub fn has_reaction(&self) -> bool {
        self.c.is_some()
    }
}

/// Piecewise-linear table `a(t, u)` on a tensor grid of time and value knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotTable {
    pub u_knots: Vec<f64>,
    /// Empty for a time-independent table.
    #[serde(default)]
    pub t_knots: Vec<f64>,
    /// `values[k][m]` at `(t_knots[k], u_knots[m])`; a single row when
    /// `t_knots` is empty.
    pub values: Vec<Vec<f64>>,
}

impl KnotTable {
    pub fn validate(&self) -> Result<()> {
        let nt = self.t_knots.len().max(1);
        if self.u_knots.len() < 2 || !self.u_knots.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("u_knots must have at least two increasing entries".into()));
        }
        if !self.t_knots.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("t_knots must be increasing".into()));
        }
        if self.values.len() != nt || self.values.iter().any(|r| r.len() != self.u_knots.len()) {
            return Err(Error::InvalidInput("knot table values have the wrong shape".into()));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        if self.t_knots.len() <= 1 {
            return interp(&self.u_knots, &self.values[0], u);
        }
        let (k, w) = bracket(&self.t_knots, t);
        let lo = interp(&self.u_knots, &self.values[k], u);
        let hi = interp(&self.u_knots, &self.values[k + 1], u);
        (1.0 - w) * lo + w * hi
    }
}

fn bracket(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    let x = x.clamp(knots[0], knots[n - 1]);
    let k = knots.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
    (k, (x - knots[k]) / (knots[k + 1] - knots[k]))
}

/// Piecewise-linear interpolation, constant extrapolation.
pub fn interp(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let (k, w) = bracket(knots, x);
    (1.0 - w) * values[k] + w * values[k + 1]
}

/// Configurable coefficient presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum Preset {
    /// `a ≡ value`, `d = u`.
    Constant { value: f64 },
    /// `a = a0 + a1·u`, `d = u`.
    Affine { a0: f64, a1: f64 },
    /// Tissue heat transfer with perfusion toward the blood temperature `u_b`.
    Bioheat {
        #[serde(default = "default_ub")]
        u_b: f64,
        #[serde(default = "default_perfusion")]
        c_b: f64,
    },
    /// First equation of the parabolic-elliptic chemotaxis system; the drift
    /// `chi·u(1-u)∇V` is supplied by the coupled solver.
    Chemotaxis {
        #[serde(default = "default_chi")]
        chi: f64,
    },
    /// Piecewise-linear table in `u` (optionally in `t`).
    Table(KnotTable),
}

fn default_ub() -> f64 {
    1.0
}
fn default_perfusion() -> f64 {
    2.0
}
fn default_chi() -> f64 {
    1.0
}

/// Optional lower-order modifications applied on top of a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LowerOrder {
    /// Linear reaction `c = rate·(u - reference)`.
    #[serde(default)]
    pub reaction_rate: f64,
    #[serde(default)]
    pub reaction_reference: f64,
    /// Storage `d = storage_scale·u`.
    #[serde(default = "one")]
    pub storage_scale: f64,
    /// Constant drift vector `b = drift·u`.
    #[serde(default)]
    pub drift: [f64; 2],
}

fn one() -> f64 {
    1.0
}

impl LowerOrder {
    pub fn none() -> Self {
        Self {
            storage_scale: 1.0,
            ..Self::default()
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.reaction_rate == 0.0 && self.storage_scale == 1.0 && self.drift == [0.0, 0.0]
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Constant { .. } => "constant",
            Preset::Affine { .. } => "affine",
            Preset::Bioheat { .. } => "bioheat",
            Preset::Chemotaxis { .. } => "chemotaxis",
            Preset::Table(_) => "table",
        }
    }

    /// Instantiates the preset for solutions in `u_range`.
    pub fn build(&self, u_range: (f64, f64)) -> Result<CoefficientSet> {
        let (lo, hi) = u_range;
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!("empty value range [{lo}, {hi}]")));
        }
        let bounds = |a_lo: f64, a_hi: f64, c_a: f64| CoefficientBounds {
            a_lo,
            a_hi,
            c_a,
            c_0: lo.abs().max(hi.abs()),
            u_range,
        };
        let set = match *self {
            Preset::Constant { value } => {
                if !(value > 0.0) {
                    return Err(Error::InvalidInput(format!("constant diffusion {value} must be positive")));
                }
                CoefficientSet::new("constant", Arc::new(move |_, _| value), bounds(value, value, value))
            }
            Preset::Affine { a0, a1 } => {
                let (v_lo, v_hi) = {
                    let p = a0 + a1 * lo;
                    let q = a0 + a1 * hi;
                    (p.min(q), p.max(q))
                };
                if !(v_lo > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "affine diffusion {a0} + {a1}·u is not positive on [{lo}, {hi}]"
                    )));
                }
                CoefficientSet::new(
                    "affine",
                    Arc::new(move |_, u| a0 + a1 * u),
                    bounds(v_lo, v_hi, v_hi.max(a1.abs())),
                )
            }
            Preset::Bioheat { u_b, c_b } => {
                if !(u_b > 0.0 && c_b >= 0.0) {
                    return Err(Error::InvalidInput("bioheat needs u_b > 0 and c_b >= 0".into()));
                }
                CoefficientSet::new(
                    "bioheat",
                    Arc::new(move |_, u| 1.0 + u.clamp(0.0, u_b) / u_b),
                    CoefficientBounds {
                        u_range: (0.0, u_b),
                        ..bounds(1.0, 2.0, 2.0 + c_b)
                    },
                )
                .with_reaction(Arc::new(move |_, _, u, _| c_b * (u - u_b)), false)
            }
            Preset::Chemotaxis { .. } => CoefficientSet::new(
                "chemotaxis",
                Arc::new(|_, _| 1.0),
                CoefficientBounds {
                    u_range: (0.0, 1.0),
                    ..bounds(1.0, 1.0, 1.0)
                },
            ),
            Preset::Table(ref table) => {
                table.validate()?;
                let lo_v = table.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
                let hi_v = table.values.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !(lo_v > 0.0) {
                    return Err(Error::InvalidInput("table diffusion must be positive".into()));
                }
                let t = table.clone();
                CoefficientSet::new("table", Arc::new(move |tt, u| t.eval(tt, u)), bounds(lo_v, hi_v, hi_v))
            }
        };
        Ok(set)
    }

    /// Builds the preset and applies lower-order modifications.
    pub fn build_with(&self, u_range: (f64, f64), lower: &LowerOrder) -> Result<CoefficientSet> {
        let mut set = self.build(u_range)?;
        if lower.reaction_rate != 0.0 {
            let (k, r) = (lower.reaction_rate, lower.reaction_reference);
            let base = set.c.clone();
            let c: ReactionFn = Arc::new(move |x, t, u, g| {
                k * (u - r) + base.as_ref().map_or(0.0, |b| b(x, t, u, g))
            });
            let grad = set.c_uses_gradient;
            set = set.with_reaction(c, grad);
        }
        if lower.storage_scale != 1.0 {
            let s = lower.storage_scale;
            if !(s > 0.0) {
                return Err(Error::InvalidInput("storage scale must be positive".into()));
            }
            set = set.with_storage(Arc::new(move |_, u| s * u));
        }
        if lower.drift != [0.0, 0.0] {
            let v = lower.drift;
            let base = set.b.clone();
            set = set.with_drift(Arc::new(move |x, t, u| {
                let b0 = base.as_ref().map_or([0.0; 2], |b| b(x, t, u));
                [b0[0] + v[0] * u, b0[1] + v[1] * u]
            }));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_evaluate() {
        let c = Preset::Constant { value: 2.0 }.build((0.0, 1.0)).unwrap();
        assert_eq!(c.a(0.3, 0.5).unwrap(), 2.0);
        assert_eq!(c.d(0.0, 0.7), 0.7);
        let a = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
        assert!((a.a(0.0, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!((a.a_u(0.0, 0.5) - 1.0).abs() < 1e-8);
        let b = Preset::Bioheat { u_b: 1.0, c_b: 2.0 }.build((0.0, 1.0)).unwrap();
        assert!(b.c([0.0; 2], 0.0, 1.0, [0.0; 2]).abs() < 1e-15);
        assert!(b.c([0.0; 2], 0.0, 0.0, [0.0; 2]) < 0.0);
    }

    #[test]
    fn ellipticity_violation_is_reported() {
        let set = CoefficientSet::new(
            "bad",
            Arc::new(|_, u| u),
            CoefficientBounds {
                a_lo: 0.5,
                ..CoefficientBounds::default()
            },
        );
        assert!(matches!(set.a(0.0, 0.1), Err(Error::NotElliptic { .. })));
        assert!(set.a(0.0, 0.9).is_ok());
    }

    #[test]
    fn clamping_outside_range() {
        let a = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
        assert_eq!(a.a(0.0, 5.0).unwrap(), 2.0);
        assert_eq!(a.a_u(0.0, 5.0), 0.0);
    }

    #[test]
    fn knot_table_interpolates() {
        let t = KnotTable {
            u_knots: vec![0.0, 0.5, 1.0],
            t_knots: vec![0.0, 1.0],
            values: vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0, 5.0]],
        };
        t.validate().unwrap();
        assert!((t.eval(0.0, 0.25) - 1.5).abs() < 1e-15);
        assert!((t.eval(0.5, 0.25) - 2.5).abs() < 1e-15);
        assert!((t.eval(1.0, 2.0) - 5.0).abs() < 1e-15);
        let bad = KnotTable { values: vec![vec![1.0]], ..t };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lower_order_modifications() {
        let lo = LowerOrder {
            reaction_rate: 0.5,
            reaction_reference: 0.2,
            storage_scale: 1.05,
            drift: [0.0, 0.0],
        };
        let s = Preset::Constant { value: 1.0 }.build_with((0.0, 1.0), &lo).unwrap();
        assert!((s.c([0.0; 2], 0.0, 0.4, [0.0; 2]) - 0.1).abs() < 1e-15);
        assert!((s.d(0.0, 1.0) - 1.05).abs() < 1e-15);
        assert!((s.d_u(0.0, 0.5) - 1.05).abs() < 1e-8);
    }

    #[test]
    fn preset_json_round_trip() {
        let p: Preset = serde_json::from_str(r#"{"preset":"affine","a0":1.0,"a1":1.0}"#).unwrap();
        assert_eq!(p, Preset::Affine { a0: 1.0, a1: 1.0 });
        let q: Preset = serde_json::from_str(r#"{"preset":"bioheat"}"#).unwrap();
        assert_eq!(q, Preset::Bioheat { u_b: 1.0, c_b: 2.0 });
    }
}
