//! Output least-squares recovery of a piecewise-linear `a(u)` from flux
//! pairings, and the Kirchhoff substitution `w = A(u)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientBounds, CoefficientSet, KnotTable};
use crate::error::{Error, Result};
use crate::flux::FluxFunctional;
use crate::geometry::{Domain, Grid};
use crate::identifiability::DatumSpec;
use crate::solver::{solve_parabolic, ProblemSpec, SolverControls};
use crate::testfn::{boundary_battery, SpaceTimeFn};

/// Piecewise-linear `a(u)` on uniform knots over `range`, extended by
/// constants outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamA {
    pub range: (f64, f64),
    pub values: Vec<f64>,
    pub a_lo: f64,
}

impl ParamA {
    pub fn new(range: (f64, f64), values: Vec<f64>, a_lo: f64) -> Result<Self> {
        let p = Self { range, values, a_lo };
        p.validate()?;
        Ok(p)
    }

    /// Knot values sampled from `f`.
    pub fn from_fn(range: (f64, f64), n: usize, a_lo: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let knots = uniform_knots(range, n);
        Self::new(range, knots.iter().map(|&u| f(u)).collect(), a_lo)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range.0 < self.range.1) {
            return Err(Error::InvalidInput(format!("empty knot range {:?}", self.range)));
        }
        if self.values.len() < 2 {
            return Err(Error::InvalidInput("at least two knots are needed".into()));
        }
        if !(self.a_lo > 0.0) {
            return Err(Error::InvalidInput("positivity floor must be positive".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v >= self.a_lo)) {
            return Err(Error::InvalidInput(format!(
                "knot value {v} is below the floor {}; A would not be strictly increasing",
                self.a_lo
            )));
        }
        Ok(())
    }

    pub fn knots(&self) -> Vec<f64> {
        uniform_knots(self.range, self.values.len())
    }

    fn spacing(&self) -> f64 {
        (self.range.1 - self.range.0) / (self.values.len() - 1) as f64
    }

    pub fn eval(&self, u: f64) -> f64 {
        let n = self.values.len();
        let s = ((u - self.range.0) / self.spacing()).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let f = s - i as f64;
        (1.0 - f) * self.values[i] + f * self.values[i + 1]
    }

    /// `A(u) = ∫_0^u a`, exact for the piecewise-linear profile.
    pub fn antiderivative(&self, u: f64) -> f64 {
        self.primitive(u) - self.primitive(0.0)
    }

    // ∫_{range.0}^u a
    fn primitive(&self, u: f64) -> f64 {
        let (lo, hi) = self.range;
        let n = self.values.len();
        if u <= lo {
            return (u - lo) * self.values[0];
        }
        let h = self.spacing();
        let mut s = 0.0;
        for i in 0..n - 1 {
            let a = lo + i as f64 * h;
            if u <= a {
                return s;
            }
            let b = (a + h).min(u);
            s += (b - a) * 0.5 * (self.eval(a) + self.eval(b));
        }
        s + (u - hi).max(0.0) * self.values[n - 1]
    }

    /// Coefficient set with `d = u` and no lower-order terms.
    pub fn to_coefficients(&self) -> CoefficientSet {
        let p = self.clone();
        let hi = self.values.iter().cloned().fold(0.0, f64::max);
        CoefficientSet::new(
            "table",
            Arc::new(move |_, u| p.eval(u)),
            CoefficientBounds {
                a_lo: self.a_lo,
                a_hi: hi,
                c_a: hi,
                c_0: self.range.0.abs().max(self.range.1.abs()),
                u_range: self.range,
            },
        )
    }

    pub fn to_table(&self) -> KnotTable {
        KnotTable {
            u_knots: self.knots(),
            t_knots: Vec::new(),
            values: vec![self.values.clone()],
        }
    }

    /// Relative max-norm distance of the knot values to `a`.
    pub fn relative_error(&self, a: impl Fn(f64) -> f64) -> f64 {
        self.knots()
            .iter()
            .zip(&self.values)
            .map(|(&u, v)| ((v - a(u)) / a(u)).abs())
            .fold(0.0, f64::max)
    }
}

fn uniform_knots(range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// `w = A(u)` nodewise.
pub fn kirchhoff_transform(a: &ParamA, u: &[f64]) -> Result<Vec<f64>> {
    a.validate()?;
    Ok(u.iter().map(|&v| a.antiderivative(v)).collect())
}

/// Inverse of [`kirchhoff_transform`] by safeguarded Newton iteration inside
/// a shrinking bisection bracket, to `1e-12`.
pub fn inverse_kirchhoff(a: &ParamA, w: &[f64]) -> Result<Vec<f64>> {
    a.validate()?;
    w.iter().map(|&target| invert_one(a, target)).collect()
}

fn invert_one(a: &ParamA, target: f64) -> Result<f64> {
    // A(0) = 0 and A' >= a_lo bound the root
    let r = target.abs() / a.a_lo + 1e-300;
    let (mut lo, mut hi) = (-r, r);
    let mut u = target / a.eval(0.0);
    for _ in 0..200 {
        if !(u > lo && u < hi) {
            u = 0.5 * (lo + hi);
        }
        let f = a.antiderivative(u) - target;
        if f.abs() <= 1e-14 * target.abs().max(1.0) || hi - lo <= 1e-13 * r.max(1.0) {
            return Ok(u);
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        u -= f / a.eval(u);
    }
    Err(Error::Unresolved(format!("inverse Kirchhoff transform did not converge for w = {target}")))
}

/// Resolution of the forward map used for synthesis or inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardModel {
    pub n_cells: usize,
    pub n_steps: usize,
    pub battery_size: usize,
    pub controls: SolverControls,
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self {
            n_cells: 16,
            n_steps: 16,
            battery_size: 4,
            controls: SolverControls::default(),
        }
    }
}

impl ForwardModel {
    /// The same model at half the spacing and half the step.
    pub fn refined(&self) -> Self {
        Self {
            n_cells: 2 * self.n_cells,
            n_steps: 2 * self.n_steps,
            ..*self
        }
    }

    /// Pairings `⟨j(a; g_k), φ_m⟩` for every datum, row-major in `k`.
    pub fn pairings(&self, domain: &Domain, coeffs: &CoefficientSet, data: &[DatumSpec]) -> Result<Vec<Vec<f64>>> {
        let grid = Arc::new(Grid::uniform(domain, self.n_cells)?);
        let bumps = boundary_battery(domain, self.battery_size);
        let battery: Vec<&dyn SpaceTimeFn> = bumps.iter().map(|b| b as &dyn SpaceTimeFn).collect();
        data.par_iter()
            .map(|spec| {
                let g = spec.build(domain)?;
                let level = g.level;
                let problem = ProblemSpec::new(
                    grid.clone(),
                    coeffs.clone(),
                    g.boundary,
                    Arc::new(move |_| level),
                    self.n_steps,
                )
                .with_controls(self.controls);
                let u = solve_parabolic(&problem)?;
                FluxFunctional::new(&u, coeffs).discrete_pair_many(&battery)
            })
            .collect()
    }
}

/// Record of how a measurement set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub true_coefficient: ParamA,
    pub synthesis: ForwardModel,
    pub inversion: ForwardModel,
    pub seed: u64,
    pub inverse_crime: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub domain: Domain,
    pub data: Vec<DatumSpec>,
    /// `pairings[k][m] = ⟨j(g_k), φ_m⟩`.
    pub pairings: Vec<Vec<f64>>,
    pub noise: f64,
    pub provenance: Provenance,
}

/// Synthesizes pairings with `truth` on `synthesis` and adds relative
/// Gaussian noise `noise·|value|·N(0,1)`. Using the inversion resolution for
/// synthesis is allowed but flagged.
pub fn synthesize_measurements(
    domain: &Domain,
    truth: &ParamA,
    data: &[DatumSpec],
    synthesis: ForwardModel,
    inversion: ForwardModel,
    noise: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if synthesis.battery_size != inversion.battery_size {
        return Err(Error::InvalidInput("synthesis and inversion must share the test battery".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidInput(format!("noise level {noise} must be non-negative")));
    }
    let mut pairings = synthesis.pairings(domain, &truth.to_coefficients(), data)?;
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for v in pairings.iter_mut().flatten() {
            *v += noise * v.abs() * normal.sample(&mut rng);
        }
    }
    let inverse_crime = synthesis.n_cells == inversion.n_cells && synthesis.n_steps == inversion.n_steps;
    let warning = inverse_crime.then(|| {
        log::warn!("measurements synthesized on the inversion grid");
        "inverse crime: data synthesized on the inversion discretization".to_string()
    });
    Ok(MeasurementSet {
        domain: domain.clone(),
        data: data.to_vec(),
        pairings,
        noise,
        provenance: Provenance {
            true_coefficient: truth.clone(),
            synthesis,
            inversion,
            seed,
            inverse_crime,
            warning,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryOptions {
    pub max_iter: usize,
    /// Relative finite-difference step on the knot values.
    pub fd_step: f64,
    /// Stop once the relative objective decrease falls below this.
    pub rel_tol: f64,
    pub initial_damping: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            fd_step: 1e-4,
            rel_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    /// Objective after every accepted iterate, starting with the initial guess.
    pub history: Vec<f64>,
    pub final_misfit: f64,
    pub iterations: usize,
    pub forward_solves: usize,
    pub converged: bool,
}

/// Data misfit `Σ (⟨j(a; g_k), φ_m⟩ - data)²` of a candidate on the
/// inversion model.
pub fn misfit(meas: &MeasurementSet, a: &ParamA) -> Result<f64> {
    let r = residuals(meas, a)?;
    Ok(r.iter().map(|v| v * v).sum())
}

fn residuals(meas: &MeasurementSet, a: &ParamA) -> Result<Vec<f64>> {
    let p = meas
        .provenance
        .inversion
        .pairings(&meas.domain, &a.to_coefficients(), &meas.data)?;
    Ok(p.iter()
        .flatten()
        .zip(meas.pairings.iter().flatten())
        .map(|(m, d)| m - d)
        .collect())
}

fn second_difference(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n.saturating_sub(2), n);
    for i in 0..n.saturating_sub(2) {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d
}

/// Projected Levenberg–Marquardt on
/// `misfit(θ) + reg_weight·‖D²θ‖²` with `θ ≥ a_lo`, gradients by central
/// differences. Returns the best iterate even when not converged.
pub fn recover_a(
    meas: &MeasurementSet,
    init: &ParamA,
    reg_weight: f64,
    opts: &RecoveryOptions,
) -> Result<(ParamA, RecoveryDiagnostics)> {
    init.validate()?;
    let n = init.values.len();
    if n > 16 {
        return Err(Error::InvalidInput(format!("{n} knots exceed the limit of 16")));
    }
    if !(reg_weight >= 0.0) {
        return Err(Error::InvalidInput("regularization weight must be non-negative".into()));
    }
    let d2 = second_difference(n);
    let dtd = d2.transpose() * &d2;
    let objective = |theta: &DVector<f64>, r: &[f64]| {
        let c = &d2 * theta;
        r.iter().map(|v| v * v).sum::<f64>() + reg_weight * c.norm_squared()
    };
    let mut current = init.clone();
    let mut theta = DVector::from_vec(init.values.clone());
    let mut r = residuals(meas, &current)?;
    let mut solves = 1;
    let mut obj = objective(&theta, &r);
    let mut history = vec![obj];
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        // central-difference Jacobian, one column per knot
        let cols: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let h = opts.fd_step * theta[i].abs().max(1.0);
                let shift = |s: f64| {
                    let mut v = current.values.clone();
                    v[i] += s;
                    ParamA {
                        values: v,
                        ..current.clone()
                    }
                };
                let plus = residuals(meas, &shift(h))?;
                let minus = residuals(meas, &shift(-h))?;
                Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
            })
            .collect();
        solves += 2 * n;
        let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
        let jac = DMatrix::from_fn(r.len(), n, |k, i| cols[i][k]);
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac + reg_weight * &dtd;
        let grad = jac.transpose() * &rv + reg_weight * (&dtd * &theta);
        let mut accepted = false;
        for _ in 0..12 {
            let scale = jtj.diagonal().map(|v| v.max(1e-300));
            let sys = &jtj + DMatrix::from_diagonal(&(mu * scale));
            let Some(step) = sys.lu().solve(&(-&grad)) else {
                mu *= 10.0;
                continue;
            };
            let trial = (&theta + step).map(|v| v.max(init.a_lo));
            let cand = ParamA {
                values: trial.as_slice().to_vec(),
                ..current.clone()
            };
            solves += 1;
            match residuals(meas, &cand) {
                Ok(rt) => {
                    let ot = objective(&trial, &rt);
                    if ot < obj {
                        let decrease = (obj - ot) / obj.max(1e-300);
                        theta = trial;
                        current = cand;
                        r = rt;
                        obj = ot;
                        history.push(obj);
                        mu = (mu / 3.0).max(1e-12);
                        accepted = true;
                        if decrease < opts.rel_tol {
                            converged = true;
                        }
                        break;
                    }
                    mu *= 10.0;
                }
                // a failed forward solve rejects the trial
                Err(e) => {
                    log::debug!("trial rejected: {e}");
                    mu *= 10.0;
                }
            }
        }
        if !accepted {
            // no descent left at any damping: stationary up to the FD gradient
            converged = grad.norm() <= 1e-8 * obj.sqrt().max(1e-300) || obj == 0.0;
            break;
        }
        if converged {
            break;
        }
    }
    let final_misfit = r.iter().map(|v| v * v).sum();
    Ok((
        current,
        RecoveryDiagnostics {
            history,
            final_misfit,
            iterations,
            forward_solves: solves * meas.data.len(),
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn evaluation_and_antiderivative() {
        let a = ParamA::from_fn((0.0, 1.0), 6, 0.1, |u| 1.0 + u).unwrap();
        assert_abs_diff_eq!(a.eval(0.3), 1.3, epsilon = 1e-14);
        assert_abs_diff_eq!(a.eval(-1.0), 1.0);
        assert_abs_diff_eq!(a.eval(2.0), 2.0);
        for u in [-0.5, 0.0, 0.25, 0.6, 1.0, 1.7] {
            let exact = if u < 0.0 {
                u
            } else if u <= 1.0 {
                u + 0.5 * u * u
            } else {
                1.5 + 2.0 * (u - 1.0)
            };
            assert_abs_diff_eq!(a.antiderivative(u), exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn identity_transform_for_unit_coefficient() {
        let a = ParamA::from_fn((0.0, 1.0), 4, 0.5, |_| 1.0).unwrap();
        let u = [0.0, 0.2, 0.9, 1.3, -0.4];
        assert_eq!(kirchhoff_transform(&a, &u).unwrap(), u.to_vec());
    }

    #[test]
    fn round_trip_with_a_dip_to_the_floor() {
        let a = ParamA::new((0.0, 1.0), vec![1.0, 0.05, 2.0, 0.7], 0.05).unwrap();
        let u: Vec<f64> = (0..50).map(|k| -0.2 + 1.4 * k as f64 / 49.0).collect();
        let w = kirchhoff_transform(&a, &u).unwrap();
        let back = inverse_kirchhoff(&a, &w).unwrap();
        for (x, y) in u.iter().zip(&back) {
            assert!((x - y).abs() <= 1e-10);
        }
        assert!(ParamA::new((0.0, 1.0), vec![1.0, 0.0], 0.05).is_err());
    }

    #[test]
    fn second_difference_annihilates_lines() {
        let d = second_difference(5);
        let v = DVector::from_fn(5, |i, _| 2.0 - 0.3 * i as f64);
        assert!((d * v).norm() < 1e-14);
    }

    #[test]
    fn inverse_crime_is_flagged() {
        let dom = Domain::default();
        let truth = ParamA::from_fn((0.0, 1.0), 3, 0.1, |_| 1.0).unwrap();
        let data = crate::identifiability::battery_specs(&dom, (0.0, 1.0), 1, &[1.0]);
        let m = ForwardModel {
            n_cells: 8,
            n_steps: 4,
            battery_size: 2,
            ..ForwardModel::default()
        };
        let set = synthesize_measurements(&dom, &truth, &data, m, m, 0.0, 1).unwrap();
        assert!(set.provenance.inverse_crime);
        assert!(set.provenance.warning.is_some());
        let fair = synthesize_measurements(&dom, &truth, &data, m.refined(), m, 0.0, 1).unwrap();
        assert!(!fair.provenance.inverse_crime);
    }
}
