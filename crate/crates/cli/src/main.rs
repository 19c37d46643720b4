//! `seprb`: exact and simulated polarization-correlation experiments.
//!
//! Subcommands cover Monte Carlo sampling, closed-form probability tables,
//! CHSH evaluation and optimization, spacetime-diagram transforms, model
//! audits, grid sweeps, and local-polytope membership. Output is CSV for
//! tables and TOML for reports; identical inputs and seeds produce
//! byte-identical output at any parallelism degree.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seprb_core::analysis::TargetEvent;
use seprb_core::geometry::{
    canonical_diagram, parse_rational, postselect, SettingMap, SpacetimeDiagram,
};
use seprb_core::model::{Angle, ExperimentKind};
use seprb_core::ontology::BeableModel;

use commands::{
    build_settings, execute, experiment_model, resolve_model, BoxChoice, ChshQuery, CmdError,
    ExactQuery, Invocation, SimulateSpec, SweepSpec,
};
use config::{parse_config, CommandKind, ModelField, RunConfig};

/// Default search resolution for `chsh --optimal`, in radians.
const DEFAULT_GRID_STEP: f64 = std::f64::consts::PI / 64.0;

#[derive(Parser)]
#[command(
    name = "seprb",
    version,
    about = "Exact and simulated polarization-correlation experiments",
    propagate_version = true
)]
struct Cli {
    /// Interpret angle arguments as degrees instead of radians.
    #[arg(long, global = true)]
    degrees: bool,

    /// Worker threads for sampling; results are identical for any count.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimate of an event probability (CSV row).
    Simulate(SimulateArgs),
    /// Closed-form probabilities: joint tables, conditionals, transmitted
    /// intensity, model predictions (TOML).
    Exact(ExactArgs),
    /// CHSH values at a settings quadruple, or search for the quantum
    /// optimum (TOML).
    Chsh(ChshArgs),
    /// Apply the S transform to a diagram and check its invariants (TOML).
    Transform(TransformArgs),
    /// Audit a model: locality, measured vs declared dependence, CHSH bound
    /// compliance (TOML; exit 1 when the audit fails).
    Verify(VerifyArgs),
    /// Tabulate agreement probabilities over a settings grid (CSV).
    Sweep(SweepArgs),
    /// Local-polytope membership certificate for a named box (TOML).
    Polytope(PolytopeArgs),
    /// Execute a TOML run-configuration document.
    Run(RunArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ExperimentArg {
    Eprb,
    Seprb,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(e: ExperimentArg) -> ExperimentKind {
        match e {
            ExperimentArg::Eprb => ExperimentKind::Eprb,
            ExperimentArg::Seprb => ExperimentKind::Seprb,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    /// Outcome agreement: A = B, or B = c.
    Agreement,
    /// Outcome 1 on the B side.
    B1,
    /// Outcome 1 on the A side (two-photon only).
    A1,
}

impl From<TargetArg> for TargetEvent {
    fn from(t: TargetArg) -> TargetEvent {
        match t {
            TargetArg::Agreement => TargetEvent::Agreement,
            TargetArg::B1 => TargetEvent::OutcomeB1,
            TargetArg::A1 => TargetEvent::OutcomeA1,
        }
    }
}

#[derive(Args)]
struct SettingArgs {
    /// Polarizer setting of the A cube (two-photon), in radians.
    #[arg(long)]
    alpha: Option<f64>,
    /// Polarizer setting of the B cube, in radians.
    #[arg(long)]
    beta: Option<f64>,
    /// Injected polarization / C-cube setting (single-photon), in radians.
    #[arg(long)]
    gamma: Option<f64>,
    /// Input choice for the single-photon experiment.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    c: Option<u8>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment to sample with its exact statistics.
    #[arg(long, value_enum, conflicts_with = "model")]
    experiment: Option<ExperimentArg>,
    /// Built-in model to sample instead of the bare experiment.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    settings: SettingArgs,
    /// Event whose probability is estimated.
    #[arg(long, value_enum, default_value_t = TargetArg::Agreement)]
    target: TargetArg,
    /// Number of runs.
    #[arg(long, default_value_t = config::DEFAULT_N)]
    n: u64,
    /// Master seed for the random stream.
    #[arg(long, env = "SEPRB_SEED", default_value_t = config::DEFAULT_SEED)]
    seed: u64,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    /// Model whose prediction to compare against the exact statistics.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    settings: SettingArgs,
    /// Incoming polarization for a transmitted-intensity query, in radians.
    #[arg(long, requires = "theta_pol")]
    theta_in: Option<f64>,
    /// Polarizer orientation for a transmitted-intensity query, in radians.
    #[arg(long, requires = "theta_in")]
    theta_pol: Option<f64>,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ChshArgs {
    /// Setting quadruple a1 a2 b1 b2, in radians.
    #[arg(long, num_args = 4, value_names = ["A1", "A2", "B1", "B2"], conflicts_with = "optimal")]
    settings: Option<Vec<f64>>,
    /// Search the settings grid for the largest quantum |S|.
    #[arg(long)]
    optimal: bool,
    /// Grid resolution for the optimum search, in radians.
    #[arg(long, requires = "optimal")]
    grid_step: Option<f64>,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    /// Diagram file to transform (TOML).
    #[arg(long, conflicts_with_all = ["kind", "alpha", "beta", "gamma", "arm", "postselected"])]
    diagram: Option<PathBuf>,
    /// Build the canonical diagram of this experiment kind instead.
    #[arg(long, value_enum)]
    kind: Option<ExperimentArg>,
    #[command(flatten)]
    settings: SettingArgs,
    /// Arm length of the canonical diagram, as a rational like "3/2".
    #[arg(long, default_value = "1")]
    arm: String,
    /// Post-select the canonical two-photon diagram on A = C.
    #[arg(long)]
    postselected: bool,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Built-in model to audit.
    #[arg(long)]
    model: String,
    /// Settings-grid resolution for the locality audit.
    #[arg(long, default_value_t = config::DEFAULT_GRID)]
    grid: usize,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment whose agreement probability is tabulated.
    #[arg(long, value_enum, required_unless_present = "model")]
    experiment: Option<ExperimentArg>,
    /// Built-in model to tabulate instead of the bare experiment.
    #[arg(long)]
    model: Option<String>,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = config::DEFAULT_GRID)]
    grid: usize,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BoxArg {
    /// The Popescu-Rohrlich box (|S| = 4).
    Pr,
    /// Uniform noise (deep inside the polytope).
    WhiteNoise,
    /// The quantum box at a settings quadruple.
    Quantum,
    /// (1-w) white noise + w PR box.
    PrMix,
}

#[derive(Args)]
struct PolytopeArgs {
    /// Box to test for local-polytope membership.
    #[arg(long, value_enum)]
    r#box: BoxArg,
    /// Setting quadruple a1 a2 b1 b2 for the quantum box, in radians.
    #[arg(long, num_args = 4, value_names = ["A1", "A2", "B1", "B2"])]
    settings: Option<Vec<f64>>,
    /// PR-box fraction for the mixture.
    #[arg(long)]
    weight: Option<f64>,
    /// Write the output here instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run-configuration document (TOML).
    config: PathBuf,
}

fn to_angle(value: f64, degrees: bool, name: &str) -> Result<Angle, CmdError> {
    let radians = if degrees { value.to_radians() } else { value };
    Angle::try_new(radians).ok_or_else(|| CmdError(format!("{name} must be finite, got {value}")))
}

fn opt_angle(value: Option<f64>, degrees: bool, name: &str) -> Result<Option<Angle>, CmdError> {
    value.map(|v| to_angle(v, degrees, name)).transpose()
}

fn quad(values: &[f64], degrees: bool) -> Result<[Angle; 4], CmdError> {
    let names = ["a1", "a2", "b1", "b2"];
    let mut out = [Angle::new(0.0); 4];
    for (i, &v) in values.iter().enumerate() {
        out[i] = to_angle(v, degrees, names[i])?;
    }
    Ok(out)
}

struct ResolvedSettings {
    alpha: Option<Angle>,
    beta: Option<Angle>,
    gamma: Option<Angle>,
    c: Option<bool>,
}

fn resolve_setting_args(s: &SettingArgs, degrees: bool) -> Result<ResolvedSettings, CmdError> {
    Ok(ResolvedSettings {
        alpha: opt_angle(s.alpha, degrees, "--alpha")?,
        beta: opt_angle(s.beta, degrees, "--beta")?,
        gamma: opt_angle(s.gamma, degrees, "--gamma")?,
        c: s.c.map(|v| v == 1),
    })
}

/// Picks the sampling model and CSV label: an explicit model by name, or
/// the exact-statistics model of a bare experiment.
fn model_and_label(
    experiment: Option<ExperimentArg>,
    model: Option<&str>,
) -> Result<(BeableModel, String), CmdError> {
    match (experiment, model) {
        (_, Some(name)) => {
            let m = resolve_model(&ModelField::Name(name.to_string()))?;
            Ok((m, name.to_string()))
        }
        (Some(kind), None) => {
            let kind = ExperimentKind::from(kind);
            Ok((experiment_model(kind), kind.to_string()))
        }
        (None, None) => Err(CmdError("pass --experiment or --model".into())),
    }
}

fn canonical_from_parts(
    kind: ExperimentKind,
    s: &ResolvedSettings,
    arm: &str,
    postselected: bool,
) -> Result<SpacetimeDiagram, CmdError> {
    let beta = s.beta.ok_or_else(|| CmdError("missing --beta".into()))?;
    let map = match kind {
        ExperimentKind::Eprb => {
            let alpha = s.alpha.ok_or_else(|| CmdError("missing --alpha".into()))?;
            SettingMap::eprb(alpha, beta)
        }
        ExperimentKind::Seprb => {
            let gamma = s.gamma.ok_or_else(|| CmdError("missing --gamma".into()))?;
            SettingMap::seprb(gamma, beta)
        }
    };
    let arm = parse_rational(arm).map_err(|e| CmdError(e.to_string()))?;
    let d = canonical_diagram(kind, &map, arm).map_err(|e| CmdError(e.to_string()))?;
    if postselected {
        postselect(&d).map_err(|e| CmdError(e.to_string()))
    } else {
        Ok(d)
    }
}

fn build_invocation(
    command: &Command,
    degrees: bool,
) -> Result<(Invocation, Option<PathBuf>), CmdError> {
    match command {
        Command::Simulate(a) => {
            let s = resolve_setting_args(&a.settings, degrees)?;
            let (model, label) = model_and_label(a.experiment, a.model.as_deref())?;
            let settings =
                build_settings(model.experiment_kind(), s.alpha, s.beta, s.gamma, s.c)?;
            let spec = SimulateSpec {
                model,
                label,
                settings,
                target: a.target.into(),
                n: a.n,
                seed: a.seed,
            };
            Ok((Invocation::Simulate(spec), a.output.clone()))
        }
        Command::Exact(a) => {
            let s = resolve_setting_args(&a.settings, degrees)?;
            let query = match (&a.model, a.theta_in, a.theta_pol) {
                (Some(name), None, None) => {
                    let model = resolve_model(&ModelField::Name(name.clone()))?;
                    let settings =
                        build_settings(model.experiment_kind(), s.alpha, s.beta, s.gamma, s.c)?;
                    ExactQuery::Model { model, settings }
                }
                (None, Some(t_in), Some(t_pol)) => {
                    if s.alpha.is_some() || s.beta.is_some() || s.gamma.is_some() || s.c.is_some()
                    {
                        return Err(CmdError(
                            "a transmitted-intensity query takes only --theta-in/--theta-pol"
                                .into(),
                        ));
                    }
                    ExactQuery::Malus {
                        theta_in: to_angle(t_in, degrees, "--theta-in")?,
                        theta_pol: to_angle(t_pol, degrees, "--theta-pol")?,
                    }
                }
                (None, None, None) => match (s.alpha, s.gamma) {
                    (Some(alpha), None) => {
                        let settings =
                            build_settings(ExperimentKind::Eprb, Some(alpha), s.beta, None, s.c)?;
                        match settings {
                            seprb_core::ontology::Settings::Eprb { alpha, beta } => {
                                ExactQuery::Eprb { alpha, beta }
                            }
                            _ => unreachable!(),
                        }
                    }
                    (None, Some(gamma)) => {
                        let settings = build_settings(
                            ExperimentKind::Seprb,
                            None,
                            s.beta,
                            Some(gamma),
                            s.c,
                        )?;
                        match settings {
                            seprb_core::ontology::Settings::Seprb { gamma, beta, c } => {
                                ExactQuery::Seprb { gamma, beta, c }
                            }
                            _ => unreachable!(),
                        }
                    }
                    _ => {
                        return Err(CmdError(
                            "pass --alpha/--beta, --gamma/--beta, --theta-in/--theta-pol, \
                             or --model with settings"
                                .into(),
                        ))
                    }
                },
                _ => {
                    return Err(CmdError(
                        "--model and --theta-in/--theta-pol are mutually exclusive".into(),
                    ))
                }
            };
            Ok((Invocation::Exact(query), a.output.clone()))
        }
        Command::Chsh(a) => {
            let query = match (&a.settings, a.optimal) {
                (Some(values), false) => ChshQuery::Table(quad(values, degrees)?),
                (None, true) => {
                    let step = match a.grid_step {
                        Some(v) => {
                            let radians = if degrees { v.to_radians() } else { v };
                            if !(radians.is_finite() && radians > 0.0) {
                                return Err(CmdError(format!(
                                    "--grid-step must be positive, got {v}"
                                )));
                            }
                            Angle::new(radians)
                        }
                        None => Angle::new(DEFAULT_GRID_STEP),
                    };
                    ChshQuery::Optimal { grid_step: step }
                }
                _ => return Err(CmdError("pass --settings or --optimal".into())),
            };
            Ok((Invocation::Chsh(query), a.output.clone()))
        }
        Command::Transform(a) => {
            let diagram = match (&a.diagram, a.kind) {
                (Some(path), None) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| CmdError(format!("{}: {e}", path.display())))?;
                    SpacetimeDiagram::from_toml_str(&text).map_err(|e| CmdError(e.to_string()))?
                }
                (None, Some(kind)) => {
                    let s = resolve_setting_args(&a.settings, degrees)?;
                    canonical_from_parts(kind.into(), &s, &a.arm, a.postselected)?
                }
                _ => return Err(CmdError("pass --diagram or --kind with settings".into())),
            };
            Ok((Invocation::Transform(diagram), a.output.clone()))
        }
        Command::Verify(a) => {
            if a.grid < 2 {
                return Err(CmdError("--grid must be at least 2".into()));
            }
            let model = resolve_model(&ModelField::Name(a.model.clone()))?;
            Ok((Invocation::Verify { model, grid: a.grid }, a.output.clone()))
        }
        Command::Sweep(a) => {
            if a.grid < 2 {
                return Err(CmdError("--grid must be at least 2".into()));
            }
            let (kind, model, label) = match (&a.model, a.experiment) {
                (Some(name), _) => {
                    let m = resolve_model(&ModelField::Name(name.clone()))?;
                    (m.experiment_kind(), Some(m), name.clone())
                }
                (None, Some(kind)) => {
                    let kind = ExperimentKind::from(kind);
                    (kind, None, kind.to_string())
                }
                (None, None) => return Err(CmdError("pass --experiment or --model".into())),
            };
            let spec = SweepSpec { kind, model, label, grid: a.grid };
            Ok((Invocation::Sweep(spec), a.output.clone()))
        }
        Command::Polytope(a) => {
            let choice = match a.r#box {
                BoxArg::Pr => BoxChoice::Pr,
                BoxArg::WhiteNoise => BoxChoice::WhiteNoise,
                BoxArg::Quantum => {
                    let values = a.settings.as_ref().ok_or_else(|| {
                        CmdError("the quantum box needs --settings A1 A2 B1 B2".into())
                    })?;
                    BoxChoice::Quantum(quad(values, degrees)?)
                }
                BoxArg::PrMix => {
                    let weight = a
                        .weight
                        .ok_or_else(|| CmdError("the mixture needs --weight".into()))?;
                    if !(weight.is_finite() && (0.0..=1.0).contains(&weight)) {
                        return Err(CmdError(format!(
                            "--weight must lie in [0, 1], got {weight}"
                        )));
                    }
                    BoxChoice::PrMix { weight }
                }
            };
            Ok((Invocation::Polytope(choice), a.output.clone()))
        }
        Command::Run(_) => unreachable!("handled by the caller"),
    }
}

fn invocation_from_config(
    cfg: &RunConfig,
    cli_degrees: bool,
) -> Result<(Invocation, Option<PathBuf>), CmdError> {
    let degrees = cfg.degrees || cli_degrees;
    let s = ResolvedSettings {
        alpha: opt_angle(cfg.alpha, degrees, "alpha")?,
        beta: opt_angle(cfg.beta, degrees, "beta")?,
        gamma: opt_angle(cfg.gamma, degrees, "gamma")?,
        c: cfg.c.map(|v| v == 1),
    };
    let experiment = match cfg.experiment.as_deref() {
        None => None,
        Some("eprb") => Some(ExperimentKind::Eprb),
        Some("seprb") => Some(ExperimentKind::Seprb),
        Some(other) => {
            return Err(CmdError(format!(
                "unknown experiment {other:?}; expected eprb or seprb"
            )))
        }
    };
    let model = cfg.model.as_ref().map(resolve_model).transpose()?;
    let inv = match cfg.command {
        CommandKind::Simulate => {
            let (model, label) = match (model, &cfg.model, experiment) {
                (Some(m), Some(ModelField::Name(name)), _) => (m, name.clone()),
                (Some(m), Some(ModelField::Inline(_)), _) => {
                    let label = m.name().to_string();
                    (m, label)
                }
                (None, _, Some(kind)) => (experiment_model(kind), kind.to_string()),
                (None, _, None) => return Err(CmdError("set `experiment` or `model`".into())),
                (Some(_), None, _) => unreachable!(),
            };
            let settings = build_settings(model.experiment_kind(), s.alpha, s.beta, s.gamma, s.c)?;
            let target = match cfg.target.as_deref() {
                None | Some("agreement") => TargetEvent::Agreement,
                Some("b1") => TargetEvent::OutcomeB1,
                Some("a1") => TargetEvent::OutcomeA1,
                Some(other) => {
                    return Err(CmdError(format!(
                        "unknown target {other:?}; expected agreement, b1, or a1"
                    )))
                }
            };
            Invocation::Simulate(SimulateSpec {
                model,
                label,
                settings,
                target,
                n: cfg.n,
                seed: cfg.seed,
            })
        }
        CommandKind::Exact => match (model, cfg.theta_in, cfg.theta_pol) {
            (Some(model), None, None) => {
                let settings =
                    build_settings(model.experiment_kind(), s.alpha, s.beta, s.gamma, s.c)?;
                Invocation::Exact(ExactQuery::Model { model, settings })
            }
            (None, Some(t_in), Some(t_pol)) => Invocation::Exact(ExactQuery::Malus {
                theta_in: to_angle(t_in, degrees, "theta_in")?,
                theta_pol: to_angle(t_pol, degrees, "theta_pol")?,
            }),
            (None, None, None) => {
                let kind = experiment.or(match (s.alpha, s.gamma) {
                    (Some(_), None) => Some(ExperimentKind::Eprb),
                    (None, Some(_)) => Some(ExperimentKind::Seprb),
                    _ => None,
                });
                let kind = kind.ok_or_else(|| {
                    CmdError("set `experiment`, `model`, or theta fields".into())
                })?;
                match build_settings(kind, s.alpha, s.beta, s.gamma, s.c)? {
                    seprb_core::ontology::Settings::Eprb { alpha, beta } => {
                        Invocation::Exact(ExactQuery::Eprb { alpha, beta })
                    }
                    seprb_core::ontology::Settings::Seprb { gamma, beta, c } => {
                        Invocation::Exact(ExactQuery::Seprb { gamma, beta, c })
                    }
                }
            }
            _ => {
                return Err(CmdError(
                    "`model` and theta fields are mutually exclusive".into(),
                ))
            }
        },
        CommandKind::Chsh => {
            if cfg.optimal {
                let step = match cfg.grid_step {
                    Some(v) => {
                        let radians = if degrees { v.to_radians() } else { v };
                        if !(radians.is_finite() && radians > 0.0) {
                            return Err(CmdError(format!(
                                "grid_step must be positive, got {v}"
                            )));
                        }
                        Angle::new(radians)
                    }
                    None => Angle::new(DEFAULT_GRID_STEP),
                };
                Invocation::Chsh(ChshQuery::Optimal { grid_step: step })
            } else {
                let values = cfg
                    .settings
                    .as_ref()
                    .ok_or_else(|| CmdError("set `settings` or `optimal = true`".into()))?;
                if values.len() != 4 {
                    return Err(CmdError(format!(
                        "`settings` needs exactly 4 angles, got {}",
                        values.len()
                    )));
                }
                Invocation::Chsh(ChshQuery::Table(quad(values, degrees)?))
            }
        }
        CommandKind::Transform => {
            let diagram = match (&cfg.diagram, &cfg.kind) {
                (Some(path), None) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| CmdError(format!("{}: {e}", path.display())))?;
                    SpacetimeDiagram::from_toml_str(&text).map_err(|e| CmdError(e.to_string()))?
                }
                (None, Some(kind)) => {
                    let kind = match kind.as_str() {
                        "eprb" => ExperimentKind::Eprb,
                        "seprb" => ExperimentKind::Seprb,
                        other => {
                            return Err(CmdError(format!(
                                "unknown kind {other:?}; expected eprb or seprb"
                            )))
                        }
                    };
                    let arm = cfg.arm.as_deref().unwrap_or("1");
                    canonical_from_parts(kind, &s, arm, cfg.postselected)?
                }
                _ => return Err(CmdError("set `diagram` or `kind` with settings".into())),
            };
            Invocation::Transform(diagram)
        }
        CommandKind::Verify => {
            let model = model.ok_or_else(|| CmdError("set `model`".into()))?;
            Invocation::Verify { model, grid: cfg.grid }
        }
        CommandKind::Sweep => {
            let (kind, model, label) = match (model, &cfg.model, experiment) {
                (Some(m), Some(ModelField::Name(name)), _) => {
                    (m.experiment_kind(), Some(m), name.clone())
                }
                (Some(m), Some(ModelField::Inline(_)), _) => {
                    let label = m.name().to_string();
                    (m.experiment_kind(), Some(m), label)
                }
                (None, _, Some(kind)) => (kind, None, kind.to_string()),
                (None, _, None) => return Err(CmdError("set `experiment` or `model`".into())),
                (Some(_), None, _) => unreachable!(),
            };
            Invocation::Sweep(SweepSpec { kind, model, label, grid: cfg.grid })
        }
        CommandKind::Polytope => {
            let name = cfg
                .box_name
                .as_deref()
                .ok_or_else(|| CmdError("set `box`".into()))?;
            let choice = match name {
                "pr" => BoxChoice::Pr,
                "white-noise" => BoxChoice::WhiteNoise,
                "quantum" => {
                    let values = cfg.settings.as_ref().ok_or_else(|| {
                        CmdError("the quantum box needs `settings` with 4 angles".into())
                    })?;
                    if values.len() != 4 {
                        return Err(CmdError(format!(
                            "`settings` needs exactly 4 angles, got {}",
                            values.len()
                        )));
                    }
                    BoxChoice::Quantum(quad(values, degrees)?)
                }
                "pr-mix" => {
                    let weight =
                        cfg.weight.ok_or_else(|| CmdError("the mixture needs `weight`".into()))?;
                    if !(weight.is_finite() && (0.0..=1.0).contains(&weight)) {
                        return Err(CmdError(format!(
                            "`weight` must lie in [0, 1], got {weight}"
                        )));
                    }
                    BoxChoice::PrMix { weight }
                }
                other => {
                    return Err(CmdError(format!(
                        "unknown box {other:?}; expected pr, white-noise, quantum, or pr-mix"
                    )))
                }
            };
            Invocation::Polytope(choice)
        }
    };
    Ok((inv, cfg.output.clone()))
}

fn write_output(content: &str, dest: Option<&Path>) -> Result<(), CmdError> {
    match dest {
        Some(path) => fs::write(path, content)
            .map_err(|e| CmdError(format!("{}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, CmdError> {
    let (invocation, output) = match &cli.command {
        Command::Run(a) => {
            let text = fs::read_to_string(&a.config)
                .map_err(|e| CmdError(format!("{}: {e}", a.config.display())))?;
            let cfg = parse_config(&text).map_err(|e| CmdError(e.to_string()))?;
            invocation_from_config(&cfg, cli.degrees)?
        }
        other => build_invocation(other, cli.degrees)?,
    };
    let result = execute(&invocation)?;
    write_output(&result.content, output.as_deref())?;
    Ok(if result.failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
