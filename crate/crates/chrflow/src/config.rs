//! Run configuration: JSON schema, validation, and translation into solver
//! objects.
//!
//! Configs are strict: unknown keys are rejected by the parser, and semantic
//! errors name the offending key. Optional blocks (solver tolerances, output
//! paths) have defaults that are filled in and echoed back, so the effective
//! configuration of a run is always visible.

use chr_core::mesh::{build_grid, Grid};
use chr_core::operators::NewtonConfig;
use chr_core::physics::{ElasticParams, FreeEnergy, ModelParams, ReactionRate};
use chr_core::gradientflow::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Configuration error: names the key at fault. Always maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub free_energy: FreeEnergyConfig,
    pub rate: RateConfig,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elasticity: Option<ElasticityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FreeEnergyConfig {
    RegularSolution { omega: f64, kt: f64 },
    DoubleWell,
    Quadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    ButlerVolmer {
        k_ins: f64,
        k_ext: f64,
        beta: f64,
        mu_e: f64,
    },
    TruncatedBv {
        k_ins: f64,
        k_ext: f64,
        beta: f64,
        mu_e: f64,
        w_max: f64,
    },
    Linear {
        kappa: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticityConfig {
    pub lambda: f64,
    pub mu_shear: f64,
    pub e0: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
    pub picard_tol: f64,
    pub picard_max_outer: usize,
    /// Run the strong pathway without a truncation radius. The de-truncation
    /// check is then vacuous and reported as passed.
    pub waive_detruncation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Weak,
    Strong,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let n = NewtonConfig::default();
        SolverConfig {
            kind: SolverKind::Weak,
            newton_abs_tol: n.abs_tol,
            newton_rel_tol: n.rel_tol,
            newton_max_iter: n.max_iter,
            picard_tol: 1e-9,
            picard_max_outer: 60,
            waive_detruncation: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Constant {
        value: f64,
    },
    PlateauBump {
        base: f64,
        amplitude: f64,
        lo: f64,
        hi: f64,
    },
    RandomUniform {
        lo: f64,
        hi: f64,
    },
    Cosine {
        base: f64,
        amplitude: f64,
        modes: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trajectory: String,
    pub snapshot_prefix: String,
    /// Write a field snapshot every this many steps; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            trajectory: "trajectory.csv".into(),
            snapshot_prefix: "snapshot".into(),
            snapshot_stride: 0,
        }
    }
}

/// Everything a run needs, built from a validated config.
pub struct Prepared {
    pub grid: Grid,
    pub params: ModelParams,
    pub tg: TimeGrid,
    pub c0: Vec<f64>,
    pub newton: NewtonConfig,
}

impl RunConfig {
    /// Parse a config from JSON text. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| ConfigError(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic validation beyond what the parser enforces. Errors name the
    /// offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if g.dim != 1 && g.dim != 2 {
            return err(format!("grid.dim: must be 1 or 2, got {}", g.dim));
        }
        if g.extents.len() != g.dim {
            return err(format!(
                "grid.extents: expected {} entries for grid.dim = {}, got {}",
                g.dim,
                g.dim,
                g.extents.len()
            ));
        }
        if g.counts.len() != g.dim {
            return err(format!(
                "grid.counts: expected {} entries for grid.dim = {}, got {}",
                g.dim,
                g.dim,
                g.counts.len()
            ));
        }
        if g.extents.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return err("grid.extents: entries must be finite and positive");
        }
        if g.counts.iter().any(|&n| n < 3) {
            return err("grid.counts: each axis needs at least 3 nodes");
        }

        match self.model.free_energy {
            FreeEnergyConfig::RegularSolution { omega, kt } => {
                if !omega.is_finite() {
                    return err("model.free_energy.omega: must be finite");
                }
                if !(kt > 0.0) || !kt.is_finite() {
                    return err("model.free_energy.kt: must be finite and positive");
                }
            }
            FreeEnergyConfig::DoubleWell | FreeEnergyConfig::Quadratic => {}
        }
        match self.model.rate {
            RateConfig::ButlerVolmer {
                k_ins,
                k_ext,
                beta,
                ..
            } => {
                if !(k_ins > 0.0) {
                    return err("model.rate.k_ins: must be positive");
                }
                if !(k_ext > 0.0) {
                    return err("model.rate.k_ext: must be positive");
                }
                if !(beta > 0.0) {
                    return err("model.rate.beta: must be positive");
                }
            }
            RateConfig::TruncatedBv {
                k_ins,
                k_ext,
                beta,
                w_max,
                ..
            } => {
                if !(k_ins > 0.0) {
                    return err("model.rate.k_ins: must be positive");
                }
                if !(k_ext > 0.0) {
                    return err("model.rate.k_ext: must be positive");
                }
                if !(beta > 0.0) {
                    return err("model.rate.beta: must be positive");
                }
                if !(w_max > 0.0) {
                    return err("model.rate.w_max: must be positive");
                }
            }
            RateConfig::Linear { kappa } => {
                if !(kappa >= 0.0) || !kappa.is_finite() {
                    return err("model.rate.kappa: must be finite and non-negative");
                }
            }
        }
        if !(self.model.rho > 0.0) || !self.model.rho.is_finite() {
            return err("model.rho: must be finite and positive");
        }
        if let Some(e) = &self.model.elasticity {
            if g.dim != 2 {
                return err(format!(
                    "model.elasticity: requires a 2-dimensional grid (grid.dim = {})",
                    g.dim
                ));
            }
            if !(e.mu_shear > 0.0) {
                return err("model.elasticity.mu_shear: must be positive");
            }
            if !(e.lambda + e.mu_shear > 0.0) {
                return err("model.elasticity.lambda: lambda + mu_shear must be positive");
            }
            if (e.e0[0][1] - e.e0[1][0]).abs() > 0.0 {
                return err("model.elasticity.e0: must be symmetric");
            }
        }
        if let Some(a) = self.model.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return err("model.alpha: must be finite and positive");
            }
        }

        if !(self.time.horizon > 0.0) || !self.time.horizon.is_finite() {
            return err("time.horizon: must be finite and positive");
        }
        if self.time.steps == 0 {
            return err("time.steps: must be at least 1");
        }

        let s = &self.solver;
        if !(s.newton_abs_tol > 0.0) {
            return err("solver.newton_abs_tol: must be positive");
        }
        if !(s.newton_rel_tol > 0.0) {
            return err("solver.newton_rel_tol: must be positive");
        }
        if s.newton_max_iter == 0 {
            return err("solver.newton_max_iter: must be at least 1");
        }
        if !(s.picard_tol > 0.0) {
            return err("solver.picard_tol: must be positive");
        }
        if s.picard_max_outer == 0 {
            return err("solver.picard_max_outer: must be at least 1");
        }
        if s.kind == SolverKind::Strong {
            if self.model.elasticity.is_some() {
                return err("model.elasticity: the strong solver does not support elastic coupling");
            }
            if self.model.alpha.is_none() && !s.waive_detruncation {
                return err(
                    "model.alpha: required when solver.kind = \"strong\" \
                     (or set solver.waive_detruncation = true)",
                );
            }
        }

        match self.initial {
            InitialConfig::Constant { value } => {
                if !value.is_finite() {
                    return err("initial.value: must be finite");
                }
            }
            InitialConfig::PlateauBump {
                base,
                amplitude,
                lo,
                hi,
            } => {
                if !base.is_finite() || !amplitude.is_finite() {
                    return err("initial.base: base and amplitude must be finite");
                }
                if !(lo < hi) || !(0.0 <= lo) || !(hi <= 1.0) {
                    return err("initial.lo: window must satisfy 0 <= lo < hi <= 1");
                }
            }
            InitialConfig::RandomUniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return err("initial.lo: bounds must be finite with lo < hi");
                }
            }
            InitialConfig::Cosine { ref modes, .. } => {
                if modes.len() != g.dim {
                    return err(format!(
                        "initial.modes: expected {} entries for grid.dim = {}, got {}",
                        g.dim,
                        g.dim,
                        modes.len()
                    ));
                }
            }
        }

        if self.output.snapshot_stride > 0 && self.output.snapshot_prefix.is_empty() {
            return err("output.snapshot_prefix: must be non-empty when snapshots are enabled");
        }
        Ok(())
    }

    /// Build the solver objects. Call only after `validate`.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let grid = build_grid(self.grid.dim, &self.grid.extents, &self.grid.counts)
            .map_err(|e| ConfigError(format!("grid: {e}")))?;

        let free_energy = match self.model.free_energy {
            FreeEnergyConfig::RegularSolution { omega, kt } => {
                FreeEnergy::regular_solution(omega, kt)
            }
            FreeEnergyConfig::DoubleWell => Ok(FreeEnergy::double_well()),
            FreeEnergyConfig::Quadratic => Ok(FreeEnergy::quadratic()),
        }
        .map_err(|e| ConfigError(format!("model.free_energy: {e}")))?;

        let rate = match self.model.rate {
            RateConfig::ButlerVolmer {
                k_ins,
                k_ext,
                beta,
                mu_e,
            } => ReactionRate::butler_volmer(k_ins, k_ext, beta, mu_e),
            RateConfig::TruncatedBv {
                k_ins,
                k_ext,
                beta,
                mu_e,
                w_max,
            } => ReactionRate::truncated_bv(k_ins, k_ext, beta, mu_e, w_max),
            RateConfig::Linear { kappa } => ReactionRate::linear(kappa),
        }
        .map_err(|e| ConfigError(format!("model.rate: {e}")))?;

        let elasticity = match &self.model.elasticity {
            None => None,
            Some(e) => Some(
                ElasticParams::new(e.lambda, e.mu_shear, e.e0)
                    .map_err(|err| ConfigError(format!("model.elasticity: {err}")))?,
            ),
        };

        // A waived de-truncation check runs the strong pathway with a radius
        // far beyond any representable field, so the plateau is never reached.
        let alpha = match (self.model.alpha, self.solver.kind) {
            (Some(a), _) => Some(a),
            (None, SolverKind::Strong) => Some(1e300),
            (None, SolverKind::Weak) => None,
        };

        let params = ModelParams {
            free_energy,
            rate,
            rho: self.model.rho,
            elasticity,
            alpha,
        };
        params
            .validate()
            .map_err(|e| ConfigError(format!("model: {e}")))?;

        let tg = TimeGrid::new(self.time.horizon, self.time.steps)
            .map_err(|e| ConfigError(format!("time: {e}")))?;

        let c0 = self.initial_field_on(&grid);

        let newton = NewtonConfig {
            abs_tol: self.solver.newton_abs_tol,
            rel_tol: self.solver.newton_rel_tol,
            max_iter: self.solver.newton_max_iter,
            ..NewtonConfig::default()
        };

        Ok(Prepared {
            grid,
            params,
            tg,
            c0,
            newton,
        })
    }

    /// Evaluate the configured initial data on any grid (convergence studies
    /// rebuild it on refined grids).
    pub(crate) fn initial_field_on(&self, grid: &Grid) -> Vec<f64> {
        match self.initial {
            InitialConfig::Constant { value } => grid.constant_field(value),
            InitialConfig::PlateauBump {
                base,
                amplitude,
                lo,
                hi,
            } => grid.plateau_bump(base, amplitude, lo, hi),
            InitialConfig::RandomUniform { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..grid.node_count())
                    .map(|_| rng.gen_range(lo..hi))
                    .collect()
            }
            InitialConfig::Cosine {
                base,
                amplitude,
                ref modes,
            } => {
                use core::f64::consts::PI;
                grid.field_from_fn(|x, y| {
                    let mut v = (modes[0] as f64 * PI * x / grid.lx()).cos();
                    if grid.dim() == 2 {
                        v *= (modes[1] as f64 * PI * y / grid.ly()).cos();
                    }
                    base + amplitude * v
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "grid": {"dim": 1, "extents": [1.0], "counts": [17]},
            "model": {
                "free_energy": {"kind": "regular_solution", "omega": 3.0, "kt": 1.0},
                "rate": {"kind": "truncated_bv", "k_ins": 1.0, "k_ext": 2.0,
                         "beta": 1.0, "mu_e": 0.0, "w_max": 5.0},
                "rho": 1.0
            },
            "time": {"horizon": 0.01, "steps": 10},
            "initial": {"kind": "constant", "value": 0.5}
        })
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_json(&base_json().to_string()).unwrap();
        assert_eq!(cfg.solver.kind, SolverKind::Weak);
        assert_eq!(cfg.solver.picard_max_outer, 60);
        assert_eq!(cfg.output.trajectory, "trajectory.csv");
        assert_eq!(cfg.output.snapshot_stride, 0);
        let p = cfg.prepare().unwrap();
        assert_eq!(p.grid.node_count(), 17);
        assert_eq!(p.c0.len(), 17);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut j = base_json();
        j["grid"]["spacing"] = serde_json::json!(0.1);
        let e = RunConfig::from_json(&j.to_string()).unwrap_err();
        assert!(e.0.contains("spacing"), "error should name the key: {e}");
    }

    #[test]
    fn elasticity_on_1d_grid_names_key() {
        let mut j = base_json();
        j["model"]["elasticity"] =
            serde_json::json!({"lambda": 1.0, "mu_shear": 1.0, "e0": [[0.0,0.0],[0.0,0.0]]});
        let e = RunConfig::from_json(&j.to_string()).unwrap_err();
        assert!(e.0.contains("model.elasticity"), "got: {e}");
    }

    #[test]
    fn strong_without_alpha_names_key() {
        let mut j = base_json();
        j["solver"] = serde_json::json!({"kind": "strong"});
        let e = RunConfig::from_json(&j.to_string()).unwrap_err();
        assert!(e.0.contains("model.alpha"), "got: {e}");
        // The waiver makes the same config acceptable.
        j["solver"]["waive_detruncation"] = serde_json::json!(true);
        let cfg = RunConfig::from_json(&j.to_string()).unwrap();
        let p = cfg.prepare().unwrap();
        assert_eq!(p.params.alpha, Some(1e300));
    }

    #[test]
    fn mismatched_counts_name_key() {
        let mut j = base_json();
        j["grid"]["counts"] = serde_json::json!([17, 17]);
        let e = RunConfig::from_json(&j.to_string()).unwrap_err();
        assert!(e.0.contains("grid.counts"), "got: {e}");
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::from_json(&base_json().to_string()).unwrap();
        let echoed = serde_json::to_string_pretty(&cfg).unwrap();
        let again = RunConfig::from_json(&echoed).unwrap();
        assert_eq!(again.solver.picard_tol, cfg.solver.picard_tol);
        assert_eq!(again.seed, cfg.seed);
    }
}
