//! JSON experiment configuration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, LowerOrder, Preset};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Grid};
use crate::identifiability::{DatumSpec, Mode, ReverseOptions, Side, SweepOptions, Verdict};
use crate::reconstruction::{ForwardModel, RecoveryOptions};
use crate::singular::ScalingOptions;
use crate::solver::{BoundaryFn, CoupledSpec, SolverControls};

/// Domain block: the geometry plus the uniform grid resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    #[serde(flatten)]
    pub domain: Domain,
    #[serde(default = "default_cells")]
    pub n_cells: usize,
}

fn default_cells() -> usize {
    32
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            domain: Domain::default(),
            n_cells: default_cells(),
        }
    }
}

/// Coefficients and initial data of one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideConfig {
    pub coefficient: Preset,
    #[serde(default = "LowerOrder::none")]
    pub lower: LowerOrder,
    /// Amplitude of the interior bump added to the initial value.
    #[serde(default)]
    pub initial_bump: f64,
    /// Value range `[g_lo, g_hi]` of the coefficients.
    #[serde(default = "unit_range")]
    pub u_range: (f64, f64),
    /// Production `h(u) = production·u` of the chemotactic signal.
    #[serde(default = "one")]
    pub production: f64,
}

fn unit_range() -> (f64, f64) {
    (0.0, 1.0)
}

fn one() -> f64 {
    1.0
}

impl Default for SideConfig {
    fn default() -> Self {
        Self {
            coefficient: Preset::Constant { value: 1.0 },
            lower: LowerOrder::none(),
            initial_bump: 0.0,
            u_range: unit_range(),
            production: 1.0,
        }
    }
}

impl SideConfig {
    pub fn coefficients(&self) -> Result<CoefficientSet> {
        self.coefficient.build_with(self.u_range, &self.lower)
    }

    pub fn side(&self) -> Result<Side> {
        Ok(Side::new(self.coefficients()?).with_initial_bump(self.initial_bump))
    }

    /// Second-species data when the preset is chemotactic.
    pub fn coupled(&self) -> Option<CoupledSpec> {
        match self.coefficient {
            Preset::Chemotaxis { chi } => {
                let k = self.production;
                Some(CoupledSpec::logistic(chi, Arc::new(move |u| k * u)))
            }
            _ => None,
        }
    }
}

/// Dirichlet datum of a single solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundaryConfig {
    Constant {
        value: f64,
    },
    /// Concentrated datum of width `eps_factor·ε0`.
    Datum {
        level: f64,
        g_hi: f64,
        #[serde(default = "one")]
        eps_factor: f64,
        #[serde(default = "default_window")]
        window: (f64, f64),
    },
}

fn default_window() -> (f64, f64) {
    (0.25, 0.75)
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::Datum {
            level: 0.0,
            g_hi: 1.0,
            eps_factor: 1.0,
            window: default_window(),
        }
    }
}

impl BoundaryConfig {
    /// Boundary function and its value at `t = 0`; windows are fractions of `T`.
    pub fn build(&self, domain: &Domain) -> Result<(BoundaryFn, f64)> {
        match *self {
            BoundaryConfig::Constant { value } => Ok((Arc::new(move |_, _| value), value)),
            BoundaryConfig::Datum {
                level,
                g_hi,
                eps_factor,
                window,
            } => {
                let t = domain.t_final;
                let d = DatumSpec {
                    level,
                    g_hi,
                    eps: eps_factor * domain.eps0,
                    window: (window.0 * t, window.1 * t),
                }
                .build(domain)?;
                Ok((d.boundary, d.level))
            }
        }
    }
}

/// Dirichlet data and test functions of the reverse check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReverseConfig {
    pub modes: Vec<Mode>,
    pub data_size: usize,
    pub eps_factors: Vec<f64>,
    pub options: ReverseOptions,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Parabolic, Mode::Elliptic],
            data_size: 8,
            eps_factors: vec![1.0, 0.5, 0.25],
            options: ReverseOptions::default(),
        }
    }
}

/// Synthetic-data reconstruction of a piecewise-linear `a(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// True coefficient `a0 + a1·u` sampled at the knots.
    pub truth: (f64, f64),
    pub knots: usize,
    pub a_lo: f64,
    pub data_size: usize,
    pub eps_factors: Vec<f64>,
    pub inversion: ForwardModel,
    /// Synthesis runs at `h/refine`, `τ/refine`; `1` commits the inverse crime.
    pub refine: usize,
    pub noise: f64,
    /// Initial constant knot value.
    pub init: f64,
    pub reg: f64,
    /// Declared pass threshold on the relative max-norm knot error.
    pub tolerance: f64,
    pub options: RecoveryOptions,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            truth: (1.0, 1.0),
            knots: 6,
            a_lo: 0.1,
            data_size: 8,
            eps_factors: vec![1.0],
            inversion: ForwardModel {
                n_cells: 24,
                n_steps: 24,
                ..ForwardModel::default()
            },
            refine: 2,
            noise: 0.0,
            init: 1.5,
            reg: 1e-8,
            tolerance: 0.05,
            options: RecoveryOptions::default(),
        }
    }
}

/// Full experiment configuration; every block but `domain` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub side1: SideConfig,
    #[serde(default)]
    pub side2: Option<SideConfig>,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub controls: SolverControls,
    #[serde(default)]
    pub scaling: ScalingOptions,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub reverse: ReverseConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub seed: u64,
    /// Verdict the `discriminate` run must reach to exit successfully.
    #[serde(default)]
    pub expect_verdict: Option<Verdict>,
}

fn default_steps() -> usize {
    32
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig::default(),
            n_steps: default_steps(),
            side1: SideConfig::default(),
            side2: None,
            boundary: BoundaryConfig::default(),
            controls: SolverControls::default(),
            scaling: ScalingOptions::default(),
            sweep: SweepOptions::default(),
            reverse: ReverseConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            seed: 0,
            expect_verdict: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration; schema errors carry the path
    /// of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain
            .domain
            .validate()
            .map_err(|e| Error::Config(format!("domain: {e}")))?;
        if self.domain.n_cells < 8 {
            return Err(Error::Config("domain.n_cells: at least 8 cells are needed".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps: must be positive".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain.domain
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.domain(), self.domain.n_cells)
    }

    /// `side2`, falling back to `side1`.
    pub fn second(&self) -> &SideConfig {
        self.side2.as_ref().unwrap_or(&self.side1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"domain": {"dim": 2, "xbar": [0.5, 0.0], "eps0": 0.25, "T": 1.0}}"#)
            .unwrap();
        assert_eq!(cfg.domain.n_cells, 32);
        assert_eq!(cfg.n_steps, 32);
        assert_eq!(cfg.sweep, SweepOptions::default());
    }

    #[test]
    fn missing_field_reports_its_path() {
        let err = ExperimentConfig::from_json(r#"{"domain": {"dim": 2, "xbar": [0.5, 0.0], "T": 1.0}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("eps0"), "{msg}");
        let err = ExperimentConfig::from_json(
            r#"{"domain": {"dim": 2, "xbar": [0.5, 0.0], "eps0": 0.25, "T": 1.0},
                "side1": {"coefficient": {"preset": "constant", "value": "x"}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("side1.coefficient"), "{err}");
    }

    #[test]
    fn presets_by_name() {
        let cfg = ExperimentConfig::from_json(
            r#"{"domain": {"dim": 2, "xbar": [0.5, 0.0], "eps0": 0.25, "T": 1.0, "n_cells": 16},
                "side1": {"coefficient": {"preset": "bioheat"}},
                "side2": {"coefficient": {"preset": "table", "u_knots": [0, 1], "values": [[1, 2]]},
                          "lower": {"storage_scale": 1.05}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.domain.n_cells, 16);
        assert!(cfg.side1.coefficients().unwrap().has_reaction());
        let c2 = cfg.second().coefficients().unwrap();
        assert!((c2.a(0.0, 0.5).unwrap() - 1.5).abs() < 1e-14);
        assert!((c2.d(0.0, 1.0) - 1.05).abs() < 1e-14);
    }
}
