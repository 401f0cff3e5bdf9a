//! Run configuration: flags, config files, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::disorder::WeightModel;
use crate::engine::{Precision, Support};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Gpl,
    P2p,
    PhaseGrid,
    Table1,
    Classify,
    CltCheck,
    Monotonicity,
    Localize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gpl => "gpl",
            Command::P2p => "p2p",
            Command::PhaseGrid => "phase-grid",
            Command::Table1 => "table1",
            Command::Classify => "classify",
            Command::CltCheck => "clt-check",
            Command::Monotonicity => "monotonicity",
            Command::Localize => "localize",
        }
    }

    /// Commands that read a random environment.
    pub fn needs_seed(self) -> bool {
        !matches!(self, Command::Classify | Command::PhaseGrid)
    }
}

/// Field grid around `h`: `points` values per axis on `[-extent, extent]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldGrid {
    pub axes: Vec<usize>,
    pub extent: f64,
    pub points: usize,
}

impl FieldGrid {
    pub fn coords(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![0.0];
        }
        (0..self.points)
            .map(|i| -self.extent + 2.0 * self.extent * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

fn default_weights() -> WeightModel {
    WeightModel::Uniform01
}
fn default_kernel() -> KernelSpec {
    KernelSpec::Simple { d: 3 }
}
fn default_beta() -> f64 {
    1.0
}
fn default_n() -> u64 {
    64
}
fn default_samples() -> u64 {
    100
}
fn default_burn_in() -> f64 {
    crate::experiments::DEFAULT_BURN_IN
}
fn default_return_terms() -> u64 {
    crate::criteria::DEFAULT_RETURN_TERMS
}
fn default_slack() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_weights")]
    pub weights: WeightModel,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Overrides `beta` for commands that sweep it.
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    /// Field, or the grid centre; empty means the origin.
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default)]
    pub h_grid: Option<FieldGrid>,
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub memory_budget_bytes: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub support: Support,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_return_terms")]
    pub return_terms: u64,
    /// Absolute allowance for finite-`n` bias in limit comparisons.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Values given on the command line; unset fields fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flags {
    pub beta: Option<f64>,
    pub h: Option<Vec<f64>>,
    pub n: Option<u64>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// `h`, with an empty field read as the origin.
    pub fn field(&self) -> Vec<f64> {
        if self.h.is_empty() {
            vec![0.0; self.dim()]
        } else {
            self.h.clone()
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.betas.clone().unwrap_or_else(|| vec![self.beta])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dim();
        if d == 0 {
            return err("kernel.d must be >= 1");
        }
        for (key, b) in std::iter::once(("beta", self.beta)).chain(self.betas.iter().flatten().map(|&b| ("betas", b))) {
            if !(b > 0.0 && b.is_finite()) {
                return err(format!("{key} must be > 0, got {b}"));
            }
        }
        if let Some(bs) = &self.betas {
            if bs.is_empty() {
                return err("betas must not be empty");
            }
            if self.command == Command::Monotonicity && bs.windows(2).any(|w| w[1] <= w[0]) {
                return err("betas must be strictly ascending");
            }
        }
        if !self.h.is_empty() && self.h.len() != d {
            return err(format!("h has {} components, kernel dimension is {d}", self.h.len()));
        }
        if self.h.iter().any(|v| !v.is_finite()) {
            return err("h must be finite");
        }
        if let Some(g) = &self.h_grid {
            if g.axes.is_empty() || g.axes.len() > 2 {
                return err("h_grid.axes must list one or two axes");
            }
            if let Some(a) = g.axes.iter().find(|&&a| a >= d) {
                return err(format!("h_grid.axes entry {a} must be < {d}"));
            }
            if g.axes.len() == 2 && g.axes[0] == g.axes[1] {
                return err("h_grid.axes must be distinct");
            }
            if !(g.extent >= 0.0 && g.extent.is_finite()) {
                return err("h_grid.extent must be >= 0");
            }
            if g.points == 0 {
                return err("h_grid.points must be > 0");
            }
        }
        if self.command == Command::PhaseGrid && self.h_grid.as_ref().is_none_or(|g| g.axes.len() != 2) {
            return err("phase-grid needs h_grid with two axes");
        }
        if self.n == 0 {
            return err("n must be > 0");
        }
        if self.samples == 0 {
            return err("samples must be > 0");
        }
        if self.command == Command::Table1 && self.samples < 2 {
            return err("samples must be >= 2 for table1");
        }
        if self.command.needs_seed() && self.seed.is_none() {
            return err(format!("seed is required for {}", self.command.name()));
        }
        if self.threads == Some(0) {
            return err("threads must be > 0");
        }
        if self.memory_budget_bytes == Some(0) {
            return err("memory_budget_bytes must be > 0");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return err(format!("burn_in must lie in [0, 1), got {}", self.burn_in));
        }
        if self.return_terms < 10 {
            return err("return_terms must be >= 10");
        }
        if !(self.slack >= 0.0) {
            return err("slack must be >= 0");
        }
        Ok(())
    }
}

/// Build a config from the subcommand and flags, then let the config file
/// (if any) override them key by key.
pub fn parse_config(command: Command, flags: &Flags, file: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let mut obj = Map::new();
    obj.insert("command".into(), serde_json::to_value(command).unwrap());
    let mut put = |k: &str, v: Value| {
        obj.insert(k.into(), v);
    };
    if let Some(v) = flags.beta {
        put("beta", v.into());
    }
    if let Some(v) = &flags.h {
        put("h", v.clone().into());
    }
    if let Some(v) = flags.n {
        put("n", v.into());
    }
    if let Some(v) = flags.samples {
        put("samples", v.into());
    }
    if let Some(v) = flags.seed {
        put("seed", v.into());
    }
    if let Some(v) = flags.threads {
        put("threads", v.into());
    }
    if let Some(v) = &flags.out {
        put("out", v.to_string_lossy().into_owned().into());
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let Value::Object(file_obj) = parsed else {
            return err(format!("{}: top level must be an object", path.display()));
        };
        for (k, v) in file_obj {
            if k == "command" && v != obj["command"] {
                return err(format!(
                    "config file command {v} does not match subcommand {}",
                    command.name()
                ));
            }
            obj.insert(k, v);
        }
    }
    let cfg: RunConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| ConfigError(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Comma-separated reals, as given to `--h`.
pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = RunConfig::from_json(r#"{"command":"classify"}"#).unwrap();
        assert_eq!(c.kernel, KernelSpec::Simple { d: 3 });
        assert_eq!(c.field(), vec![0.0; 3]);
        assert_eq!(c.n, 64);
    }

    #[test]
    fn negative_beta_is_rejected() {
        let e = RunConfig::from_json(r#"{"command":"classify","beta":-1}"#).unwrap_err();
        assert_eq!(e.0, "beta must be > 0, got -1");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_json(r#"{"command":"classify","betta":1}"#).unwrap_err();
        assert!(e.0.contains("betta"), "{e}");
    }

    #[test]
    fn seed_is_mandatory_for_sampling_commands() {
        assert!(RunConfig::from_json(r#"{"command":"gpl"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command":"gpl","seed":1}"#).is_ok());
    }
}
