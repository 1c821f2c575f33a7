//! Run configuration: JSON with a published schema
//! (`crates/cli/schema/runconfig.schema.json`), strict field checking, and
//! invariant validation with schema-path error messages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use widthlab_core::arch::{ArchKind, ArchSpec, ConvGeometry, WidthProfile};
use widthlab_core::nonlin::Nonlinearity;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config invalid at {path}: {message}")]
    Invalid { path: String, message: String },

    #[error("config file {0}: {1}")]
    Io(PathBuf, std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// fc | residual | conv1d
    pub kind: String,
    pub depth: usize,
    pub input_dim: usize,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    /// relu | tanh | linear
    pub phi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub filter_half_width: usize,
    pub spatial_d: usize,
    pub v_beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma_b2_grid: Vec<f64>,
    pub sigma_w2_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngConfig {
    pub master_seed: u64,
}

/// The resolved run configuration; flags override file fields before
/// validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    /// Command-specific numeric options (learning rates, step counts, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, serde_json::Value>,
}

pub const COMMANDS: &[&str] = &[
    "kernel",
    "ntk",
    "phase-diagram",
    "gp-predict",
    "train-compare",
    "finite-width",
    "catapult",
    "validate",
];

const STOCHASTIC_COMMANDS: &[&str] = &["train-compare", "validate"];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Validate invariants: known command, referenced files exist, grids are
    /// nonempty, a master seed is present for stochastic commands.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !COMMANDS.contains(&self.command.as_str()) {
            return Err(invalid(
                "$.command",
                format!("unknown command '{}' (expected one of {COMMANDS:?})", self.command),
            ));
        }
        if let Some(arch) = &self.arch {
            arch_spec_of(arch).map_err(|e| invalid("$.arch", e.to_string()))?;
        }
        if let Some(widths) = &self.widths {
            if widths.is_empty() || widths.iter().any(|&w| w == 0) {
                return Err(invalid("$.widths", "widths must be nonempty and positive"));
            }
        }
        if let Some(ds) = &self.dataset {
            if !ds.exists() {
                return Err(invalid("$.dataset", format!("file {} does not exist", ds.display())));
            }
        }
        if let Some(q) = &self.query {
            if !q.exists() {
                return Err(invalid("$.query", format!("file {} does not exist", q.display())));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.sigma_b2_grid.is_empty() {
                return Err(invalid("$.sweep.sigma_b2_grid", "grid must be nonempty"));
            }
            if sweep.sigma_w2_grid.is_empty() {
                return Err(invalid("$.sweep.sigma_w2_grid", "grid must be nonempty"));
            }
            if sweep.sigma_w2_grid.iter().any(|&v| v <= 0.0) {
                return Err(invalid("$.sweep.sigma_w2_grid", "sigma_w2 must be positive"));
            }
        }
        let needs_seed = STOCHASTIC_COMMANDS.contains(&self.command.as_str())
            || matches!(self.command.as_str(), "kernel" | "ntk") && false;
        if needs_seed && self.rng.is_none() {
            return Err(invalid(
                "$.rng.master_seed",
                "a master seed is required for stochastic commands",
            ));
        }
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.rng.as_ref().map(|r| r.master_seed).unwrap_or(0)
    }

    pub fn option_f64(&self, key: &str, default: f64) -> f64 {
        self.options
            .get(key)
            .and_then(|v| v.as_f64())
            .unwrap_or(default)
    }

    pub fn option_usize(&self, key: &str, default: usize) -> usize {
        self.options
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .unwrap_or(default)
    }
}

pub fn phi_of(name: &str) -> Result<Nonlinearity, ConfigError> {
    match name {
        "relu" => Ok(Nonlinearity::Relu),
        "tanh" => Ok(Nonlinearity::Tanh),
        "linear" => Ok(Nonlinearity::Linear),
        other => Err(invalid(
            "$.arch.phi",
            format!("unknown nonlinearity '{other}' (relu | tanh | linear)"),
        )),
    }
}

pub fn arch_spec_of(cfg: &ArchConfig) -> Result<ArchSpec, ConfigError> {
    let phi = phi_of(&cfg.phi)?;
    let kind = match cfg.kind.as_str() {
        "fc" => ArchKind::Fc,
        "residual" => ArchKind::Residual {
            gamma: cfg
                .gamma
                .clone()
                .ok_or_else(|| invalid("$.arch.gamma", "residual kind requires gamma"))?,
        },
        "conv1d" => {
            let conv = cfg
                .conv
                .as_ref()
                .ok_or_else(|| invalid("$.arch.conv", "conv1d kind requires conv geometry"))?;
            ArchKind::Conv1d(ConvGeometry {
                filter_half_width: conv.filter_half_width,
                spatial_d: conv.spatial_d,
                v_beta: conv.v_beta.clone(),
            })
        }
        other => {
            return Err(invalid(
                "$.arch.kind",
                format!("unknown kind '{other}' (fc | residual | conv1d)"),
            ))
        }
    };
    ArchSpec::new(kind, cfg.depth, cfg.input_dim, cfg.sigma_b2, cfg.sigma_w2, phi)
        .map_err(|e| invalid("$.arch", e.to_string()))
}

pub fn width_profile_of(cfg: &RunConfig) -> Result<WidthProfile, ConfigError> {
    let arch = cfg
        .arch
        .as_ref()
        .ok_or_else(|| invalid("$.arch", "architecture section required"))?;
    let widths = cfg
        .widths
        .clone()
        .ok_or_else(|| invalid("$.widths", "widths required for simulated commands"))?;
    if widths.len() != arch.depth {
        return Err(invalid(
            "$.widths",
            format!("{} widths for depth {}", widths.len(), arch.depth),
        ));
    }
    WidthProfile::new(widths, arch.input_dim).map_err(|e| invalid("$.widths", e.to_string()))
}

/// Dataset CSV: header `x_0,...,x_{n0-1},y` (the `y` column is optional for
/// query files); comment lines start with '#'.
pub struct CsvDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
}

pub fn read_dataset(path: &Path) -> Result<CsvDataset, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| invalid("$.dataset", "empty dataset file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_y = cols.last() == Some(&"y");
    let n_x = if has_y { cols.len() - 1 } else { cols.len() };
    for (i, c) in cols.iter().take(n_x).enumerate() {
        if *c != format!("x_{i}") {
            return Err(invalid(
                "$.dataset",
                format!("expected column x_{i}, found '{c}'"),
            ));
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| invalid("$.dataset", format!("row {}: {e}", row + 2)))?;
        if vals.len() != cols.len() {
            return Err(invalid(
                "$.dataset",
                format!("row {}: {} values, expected {}", row + 2, vals.len(), cols.len()),
            ));
        }
        inputs.push(vals[..n_x].to_vec());
        if has_y {
            targets.push(vals[n_x]);
        }
    }
    if inputs.is_empty() {
        return Err(invalid("$.dataset", "dataset has no rows"));
    }
    Ok(CsvDataset {
        inputs,
        targets: has_y.then_some(targets),
    })
}
