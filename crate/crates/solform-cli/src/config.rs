//! TOML run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use solform::model::ModelKind;

use crate::UsageError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory receiving one subdirectory per command.
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelSection,
    pub grid: GridSection,
    pub soliton: SolitonSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub chart: ChartSection,
    #[serde(default)]
    pub modulate: ModulateSection,
    #[serde(default)]
    pub normalform: NormalFormSection,
}

fn default_seed() -> u64 {
    7
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSection {
    /// Multipliers of the center soliton.
    pub lambda: Vec<f64>,
    #[serde(default = "default_solver_tol")]
    pub tol: f64,
    /// End value of `lambda[0]` for the branch table; no branch when absent.
    pub branch_end: Option<f64>,
    #[serde(default = "default_branch_steps")]
    pub branch_steps: usize,
    #[serde(default = "default_rank_threshold")]
    pub rank_threshold: f64,
}

fn default_solver_tol() -> f64 {
    1e-10
}

fn default_branch_steps() -> usize {
    8
}

fn default_rank_threshold() -> f64 {
    1e-8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Smallest admissible `|e . k|` over the combinations checked.
    pub resonance_tol: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { resonance_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartSection {
    /// Half-width of the `p`-box relative to `|p0|`.
    pub radius_fraction: f64,
    /// Relative size `|R| / |Phi|` of the audited states.
    pub epsilon: f64,
    /// Offset of `Pi` from `p0` at the audited states.
    pub pi_offset: f64,
    pub samples: usize,
    pub states: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    /// Number of doublings of `epsilon` probed for the largest passing chart size.
    pub ladder: usize,
}

impl Default for ChartSection {
    fn default() -> Self {
        Self { radius_fraction: 0.2, epsilon: 1e-2, pi_offset: 0.02, samples: 4, states: 2, fd_step: 1e-4, tolerance: 1e-5, ladder: 4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulateSection {
    pub tau: Vec<f64>,
    /// Relative size of the random remainder added to the soliton.
    pub amplitude: f64,
}

impl Default for ModulateSection {
    fn default() -> Self {
        Self { tau: vec![0.1], amplitude: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalFormSection {
    /// Weight cap; `2N + 3` when absent.
    pub cap: Option<u32>,
    /// Largest scalar `z`-degree to normalize; all `2N + 1` steps when absent.
    pub max_degree: Option<u32>,
    /// Taylor order of the coefficients in `rho`.
    pub rho_order: u32,
    pub tolerance: f64,
    pub update_tol: f64,
    pub max_iter: usize,
    pub oracle: bool,
    pub oracle_amplitude: f64,
    pub oracle_samples: usize,
}

impl Default for NormalFormSection {
    fn default() -> Self {
        Self {
            cap: None,
            max_degree: None,
            rho_order: 1,
            tolerance: 1e-8,
            update_tol: 1e-10,
            max_iter: 20,
            oracle: true,
            oracle_amplitude: 8.0,
            oracle_samples: 4,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let cfg: Self = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: &str| Err(UsageError(format!("config: {m}")));
        let n_sym = match self.model.kind {
            ModelKind::CubicNls => 2,
            ModelKind::PotentialWell => 1,
        };
        if self.grid.points < 8 || !self.grid.points.is_power_of_two() {
            return bad("grid.points must be a power of two, at least 8");
        }
        if self.grid.half_width <= 0.0 {
            return bad("grid.half_width must be positive");
        }
        if self.soliton.lambda.len() != n_sym {
            return bad(&format!("soliton.lambda needs {n_sym} entries for this model"));
        }
        if self.soliton.branch_steps == 0 {
            return bad("soliton.branch_steps must be positive");
        }
        let positive = [
            ("soliton.tol", self.soliton.tol),
            ("soliton.rank_threshold", self.soliton.rank_threshold),
            ("spectrum.resonance_tol", self.spectrum.resonance_tol),
            ("chart.radius_fraction", self.chart.radius_fraction),
            ("chart.fd_step", self.chart.fd_step),
            ("chart.tolerance", self.chart.tolerance),
            ("modulate.amplitude", self.modulate.amplitude),
            ("normalform.tolerance", self.normalform.tolerance),
            ("normalform.update_tol", self.normalform.update_tol),
            ("normalform.oracle_amplitude", self.normalform.oracle_amplitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.chart.epsilon >= 0.0) {
            return bad("chart.epsilon must be non-negative");
        }
        if self.chart.samples == 0 || self.chart.states == 0 {
            return bad("chart.samples and chart.states must be positive");
        }
        if self.modulate.tau.len() != n_sym {
            return bad(&format!("modulate.tau needs {n_sym} entries for this model"));
        }
        if self.normalform.rho_order != 1 {
            return bad("normalform.rho_order: only order 1 is supported");
        }
        if self.normalform.max_iter == 0 || self.normalform.oracle_samples == 0 {
            return bad("normalform.max_iter and normalform.oracle_samples must be positive");
        }
        if let Some(d) = self.normalform.max_degree {
            if d < 2 {
                return bad("normalform.max_degree must be at least 2");
            }
        }
        Ok(())
    }
}
