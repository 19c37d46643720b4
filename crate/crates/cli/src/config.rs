//! TOML run-configuration documents: one file describes one command
//! invocation, with the same knobs as the command-line flags.

use std::fmt;
use std::path::PathBuf;

use serde::Deserialize;
use seprb_core::ontology::LocalHvSpec;

/// Default number of runs for sampling commands.
pub const DEFAULT_N: u64 = 100_000;
/// Default master seed.
pub const DEFAULT_SEED: u64 = 0;
/// Default settings-grid resolution.
pub const DEFAULT_GRID: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Which command a configuration document requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Exact,
    Chsh,
    Transform,
    Verify,
    Sweep,
    Polytope,
}

impl CommandKind {
    fn parse(s: &str) -> Result<CommandKind, ConfigError> {
        match s {
            "simulate" => Ok(CommandKind::Simulate),
            "exact" => Ok(CommandKind::Exact),
            "chsh" => Ok(CommandKind::Chsh),
            "transform" => Ok(CommandKind::Transform),
            "verify" => Ok(CommandKind::Verify),
            "sweep" => Ok(CommandKind::Sweep),
            "polytope" => Ok(CommandKind::Polytope),
            other => Err(ConfigError(format!(
                "unknown command {other:?}; expected one of simulate, exact, chsh, \
                 transform, verify, sweep, polytope"
            ))),
        }
    }
}

/// A model reference: a built-in name or an inline local hidden-variable
/// spec.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ModelField {
    Name(String),
    Inline(LocalHvSpec),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    command: Option<String>,
    experiment: Option<String>,
    model: Option<ModelField>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    c: Option<u8>,
    theta_in: Option<f64>,
    theta_pol: Option<f64>,
    target: Option<String>,
    n: Option<u64>,
    seed: Option<u64>,
    grid: Option<usize>,
    degrees: Option<bool>,
    output: Option<PathBuf>,
    settings: Option<Vec<f64>>,
    grid_step: Option<f64>,
    optimal: Option<bool>,
    diagram: Option<PathBuf>,
    kind: Option<String>,
    arm: Option<String>,
    postselected: Option<bool>,
    #[serde(rename = "box")]
    box_name: Option<String>,
    weight: Option<f64>,
}

/// A validated run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub experiment: Option<String>,
    pub model: Option<ModelField>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub c: Option<u8>,
    pub theta_in: Option<f64>,
    pub theta_pol: Option<f64>,
    pub target: Option<String>,
    pub n: u64,
    pub seed: u64,
    pub grid: usize,
    pub degrees: bool,
    pub output: Option<PathBuf>,
    pub settings: Option<Vec<f64>>,
    pub grid_step: Option<f64>,
    pub optimal: bool,
    pub diagram: Option<PathBuf>,
    pub kind: Option<String>,
    pub arm: Option<String>,
    pub postselected: bool,
    pub box_name: Option<String>,
    pub weight: Option<f64>,
}

/// Parses a configuration document. Unknown fields, a missing or unknown
/// `command`, and malformed values are all rejected.
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    let doc: ConfigDoc = toml::from_str(document).map_err(|e| ConfigError(e.to_string()))?;
    let command = CommandKind::parse(
        doc.command
            .as_deref()
            .ok_or_else(|| ConfigError("missing required field `command`".into()))?,
    )?;
    if let Some(n) = doc.n {
        if n == 0 {
            return Err(ConfigError("`n` must be positive".into()));
        }
    }
    if let Some(grid) = doc.grid {
        if grid < 2 {
            return Err(ConfigError("`grid` must be at least 2".into()));
        }
    }
    if let Some(c) = doc.c {
        if c > 1 {
            return Err(ConfigError(format!("`c` must be 0 or 1, got {c}")));
        }
    }
    Ok(RunConfig {
        command,
        experiment: doc.experiment,
        model: doc.model,
        alpha: doc.alpha,
        beta: doc.beta,
        gamma: doc.gamma,
        c: doc.c,
        theta_in: doc.theta_in,
        theta_pol: doc.theta_pol,
        target: doc.target,
        n: doc.n.unwrap_or(DEFAULT_N),
        seed: doc.seed.unwrap_or(DEFAULT_SEED),
        grid: doc.grid.unwrap_or(DEFAULT_GRID),
        degrees: doc.degrees.unwrap_or(false),
        output: doc.output,
        settings: doc.settings,
        grid_step: doc.grid_step,
        optimal: doc.optimal.unwrap_or(false),
        diagram: doc.diagram,
        kind: doc.kind,
        arm: doc.arm,
        postselected: doc.postselected.unwrap_or(false),
        box_name: doc.box_name,
        weight: doc.weight,
    })
}
