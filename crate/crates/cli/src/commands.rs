//! Command execution: each invocation produces one machine-readable
//! document (CSV for tables, TOML for reports), independent of how the
//! invocation was assembled (flags or config file).

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};
use std::fmt;

use serde::Serialize;
use seprb_core::analysis::{mc_estimate, TargetEvent};
use seprb_core::bell::{
    chsh, independence_test, locality_check, model_correlation_table, polytope_membership,
    quantum_chsh_optimum, Box22, CorrelationTable, IndependenceMode, CHSH_TOL, LOCAL_BOUND,
};
use seprb_core::geometry::{action_proxy, s_transform, SpacetimeDiagram};
use seprb_core::model::{
    angle_grid, correlation, eprb_joint, malus_intensity, seprb_conditional, Angle,
    ExperimentKind, InputChoice, JointDist,
};
use seprb_core::ontology::{
    builtin_model, make_local_hv, model_joint, BeableModel, Dependence, Settings, BUILTIN_MODELS,
};

use crate::config::ModelField;

/// Tolerance for the informational quantum-agreement check in `verify`.
const QUANTUM_MATCH_TOL: f64 = 1e-9;

/// Fixed setting quadruples for the `verify` bound check.
const BOUND_QUADRUPLES: [[f64; 4]; 3] = [
    [0.0, FRAC_PI_4, FRAC_PI_8, 7.0 * FRAC_PI_8],
    [0.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8],
    [0.3, 1.1, 0.5, 2.0],
];

#[derive(Debug)]
pub struct CmdError(pub String);

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CmdError {}

fn err(msg: impl Into<String>) -> CmdError {
    CmdError(msg.into())
}

/// One executed command: the document it produced and whether a
/// verification check failed (exit 1).
pub struct ExecOutput {
    pub content: String,
    pub failed: bool,
}

impl ExecOutput {
    fn ok(content: String) -> ExecOutput {
        ExecOutput { content, failed: false }
    }
}

/// A fully resolved invocation, ready to execute.
pub enum Invocation {
    Simulate(SimulateSpec),
    Exact(ExactQuery),
    Chsh(ChshQuery),
    Transform(SpacetimeDiagram),
    Verify { model: BeableModel, grid: usize },
    Sweep(SweepSpec),
    Polytope(BoxChoice),
}

pub struct SimulateSpec {
    pub model: BeableModel,
    /// Value of the CSV `experiment` column: the experiment kind, or the
    /// model name when a model was chosen explicitly.
    pub label: String,
    pub settings: Settings,
    pub target: TargetEvent,
    pub n: u64,
    pub seed: u64,
}

pub enum ExactQuery {
    Eprb { alpha: Angle, beta: Angle },
    Seprb { gamma: Angle, beta: Angle, c: InputChoice },
    Malus { theta_in: Angle, theta_pol: Angle },
    Model { model: BeableModel, settings: Settings },
}

pub enum ChshQuery {
    Table([Angle; 4]),
    Optimal { grid_step: Angle },
}

pub struct SweepSpec {
    pub kind: ExperimentKind,
    pub model: Option<BeableModel>,
    pub label: String,
    pub grid: usize,
}

pub enum BoxChoice {
    Pr,
    WhiteNoise,
    Quantum([Angle; 4]),
    PrMix { weight: f64 },
}

pub fn execute(inv: &Invocation) -> Result<ExecOutput, CmdError> {
    match inv {
        Invocation::Simulate(spec) => run_simulate(spec),
        Invocation::Exact(query) => run_exact(query),
        Invocation::Chsh(query) => run_chsh(query),
        Invocation::Transform(diagram) => run_transform(diagram),
        Invocation::Verify { model, grid } => run_verify(model, *grid),
        Invocation::Sweep(spec) => run_sweep(spec),
        Invocation::Polytope(choice) => run_polytope(choice),
    }
}

/// Resolves a model reference: a built-in name or an inline spec.
pub fn resolve_model(field: &ModelField) -> Result<BeableModel, CmdError> {
    match field {
        ModelField::Name(name) => builtin_model(name).ok_or_else(|| {
            err(format!(
                "unknown model {name:?}; built-in models: {}",
                BUILTIN_MODELS.join(", ")
            ))
        }),
        ModelField::Inline(spec) => {
            make_local_hv(spec).map_err(|e| err(format!("invalid inline model: {e}")))
        }
    }
}

/// The sampling model for a bare experiment: the built-in that reproduces
/// its exact statistics.
pub fn experiment_model(kind: ExperimentKind) -> BeableModel {
    let name = match kind {
        ExperimentKind::Eprb => "retro-eprb",
        ExperimentKind::Seprb => "timesym-seprb",
    };
    builtin_model(name).expect("built-in model")
}

/// Assembles settings for the given experiment kind, rejecting missing or
/// extraneous angle arguments.
pub fn build_settings(
    kind: ExperimentKind,
    alpha: Option<Angle>,
    beta: Option<Angle>,
    gamma: Option<Angle>,
    c: Option<bool>,
) -> Result<Settings, CmdError> {
    let beta = beta.ok_or_else(|| err("missing --beta"))?;
    match kind {
        ExperimentKind::Eprb => {
            if gamma.is_some() || c.is_some() {
                return Err(err("--gamma/--c do not apply to the two-photon experiment"));
            }
            let alpha = alpha.ok_or_else(|| err("missing --alpha"))?;
            Ok(Settings::eprb(alpha, beta))
        }
        ExperimentKind::Seprb => {
            if alpha.is_some() {
                return Err(err("--alpha does not apply to the single-photon experiment"));
            }
            let gamma = gamma.ok_or_else(|| err("missing --gamma"))?;
            Ok(Settings::seprb(gamma, beta, InputChoice(c.unwrap_or(true))))
        }
    }
}

pub const CSV_SIMULATE_HEADER: &str = "experiment,settings,estimate,stderr,n,seed";

fn run_simulate(spec: &SimulateSpec) -> Result<ExecOutput, CmdError> {
    let est = mc_estimate(&spec.model, &spec.settings, spec.target, spec.n, spec.seed)
        .map_err(|e| err(e.to_string()))?;
    let content = format!(
        "{CSV_SIMULATE_HEADER}\n{},{},{},{},{},{}\n",
        spec.label, spec.settings, est.value, est.stderr, est.n, spec.seed
    );
    Ok(ExecOutput::ok(content))
}

#[derive(Serialize)]
struct EprbExactReport {
    experiment: &'static str,
    alpha: Angle,
    beta: Angle,
    joint: JointDist,
    summary: EprbSummary,
}

#[derive(Serialize)]
struct EprbSummary {
    pr_equal: f64,
    correlation: f64,
    marginal_a: f64,
    marginal_b: f64,
}

#[derive(Serialize)]
struct SeprbExactReport {
    experiment: &'static str,
    gamma: Angle,
    beta: Angle,
    c: u8,
    conditional: SeprbConditional,
}

#[derive(Serialize)]
struct SeprbConditional {
    p1: f64,
    p0: f64,
    agreement: f64,
}

#[derive(Serialize)]
struct MalusReport {
    theta_in: Angle,
    theta_pol: Angle,
    transmitted: f64,
}

#[derive(Serialize)]
struct ModelExactReport {
    model: String,
    experiment: String,
    settings: String,
    max_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<JointDist>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<JointDist>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction_p1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_p1: Option<f64>,
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, CmdError> {
    toml::to_string(value).map_err(|e| err(format!("report serialization failed: {e}")))
}

fn eprb_exact_report(alpha: Angle, beta: Angle, joint: JointDist) -> EprbExactReport {
    EprbExactReport {
        experiment: "eprb",
        alpha,
        beta,
        summary: EprbSummary {
            pr_equal: joint.pr_equal(),
            correlation: correlation(&joint),
            marginal_a: joint.marginal_a(),
            marginal_b: joint.marginal_b(),
        },
        joint,
    }
}

fn run_exact(query: &ExactQuery) -> Result<ExecOutput, CmdError> {
    let content = match query {
        ExactQuery::Eprb { alpha, beta } => {
            to_toml(&eprb_exact_report(*alpha, *beta, eprb_joint(*alpha, *beta)))?
        }
        ExactQuery::Seprb { gamma, beta, c } => {
            let d = seprb_conditional(*gamma, *beta, *c);
            let agreement = if c.0 { d.p1() } else { d.p0() };
            to_toml(&SeprbExactReport {
                experiment: "seprb",
                gamma: *gamma,
                beta: *beta,
                c: c.0 as u8,
                conditional: SeprbConditional { p1: d.p1(), p0: d.p0(), agreement },
            })?
        }
        ExactQuery::Malus { theta_in, theta_pol } => to_toml(&MalusReport {
            theta_in: *theta_in,
            theta_pol: *theta_pol,
            transmitted: malus_intensity(*theta_in, *theta_pol),
        })?,
        ExactQuery::Model { model, settings } => {
            let pred = model_joint(model, settings).map_err(|e| err(e.to_string()))?;
            match settings {
                Settings::Eprb { alpha, beta } => {
                    let p = pred.joint().expect("two-photon prediction");
                    let q = eprb_joint(*alpha, *beta);
                    let dev = p
                        .entries()
                        .iter()
                        .flatten()
                        .zip(q.entries().iter().flatten())
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    to_toml(&ModelExactReport {
                        model: model.name().to_string(),
                        experiment: "eprb".into(),
                        settings: settings.to_string(),
                        max_deviation: dev,
                        prediction: Some(p),
                        reference: Some(q),
                        prediction_p1: None,
                        reference_p1: None,
                    })?
                }
                Settings::Seprb { gamma, beta, c } => {
                    let p = pred.bernoulli().expect("single-photon prediction").p1();
                    let q = seprb_conditional(*gamma, *beta, *c).p1();
                    to_toml(&ModelExactReport {
                        model: model.name().to_string(),
                        experiment: "seprb".into(),
                        settings: settings.to_string(),
                        max_deviation: (p - q).abs(),
                        prediction: None,
                        reference: None,
                        prediction_p1: Some(p),
                        reference_p1: Some(q),
                    })?
                }
            }
        }
    };
    Ok(ExecOutput::ok(content))
}

#[derive(Serialize)]
struct ChshTableReport {
    mode: &'static str,
    a1: Angle,
    a2: Angle,
    b1: Angle,
    b2: Angle,
    correlations: [[f64; 2]; 2],
    values: Vec<f64>,
    max_abs: f64,
    local_bound: f64,
    tsirelson: f64,
    violated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_value: Option<f64>,
}

fn chsh_table_report(
    mode: &'static str,
    table: &CorrelationTable,
    grid: Option<(f64, f64)>,
) -> ChshTableReport {
    let report = chsh(table);
    let [a1, a2, b1, b2] = table.settings();
    ChshTableReport {
        mode,
        a1,
        a2,
        b1,
        b2,
        correlations: table.e(),
        values: report.values.to_vec(),
        max_abs: report.max_abs,
        local_bound: LOCAL_BOUND,
        tsirelson: 8.0f64.sqrt(),
        violated: report.violated,
        grid_step: grid.map(|g| g.0),
        grid_value: grid.map(|g| g.1),
    }
}

fn run_chsh(query: &ChshQuery) -> Result<ExecOutput, CmdError> {
    let content = match query {
        ChshQuery::Table([a1, a2, b1, b2]) => {
            let table = CorrelationTable::quantum(*a1, *a2, *b1, *b2);
            to_toml(&chsh_table_report("table", &table, None))?
        }
        ChshQuery::Optimal { grid_step } => {
            let opt = quantum_chsh_optimum(*grid_step).map_err(|e| err(e.to_string()))?;
            let [a1, a2, b1, b2] = opt.settings;
            let table = CorrelationTable::quantum(a1, a2, b1, b2);
            to_toml(&chsh_table_report(
                "optimal",
                &table,
                Some((grid_step.radians(), opt.grid_value)),
            ))?
        }
    };
    Ok(ExecOutput::ok(content))
}

fn run_transform(diagram: &SpacetimeDiagram) -> Result<ExecOutput, CmdError> {
    let forward = s_transform(diagram).map_err(|e| err(e.to_string()))?;
    let back = s_transform(&forward).map_err(|e| err(e.to_string()))?;
    let round_trip = back == *diagram;
    let proxy_preserved = action_proxy(diagram).equivalent_up_to_roles(&action_proxy(&forward));
    let body = forward.to_toml_string().map_err(|e| err(e.to_string()))?;
    let verdict = |ok: bool| if ok { "ok" } else { "FAILED" };
    let content = format!(
        "# s-transform: {} -> {}\n# round-trip identity: {}\n# action proxy preserved: {}\n{}",
        diagram.kind(),
        forward.kind(),
        verdict(round_trip),
        verdict(proxy_preserved),
        body
    );
    Ok(ExecOutput { content, failed: !(round_trip && proxy_preserved) })
}

#[derive(Serialize)]
struct VerifyReport {
    model: String,
    experiment: String,
    declared_dependence: String,
    measured_dependence: String,
    overall: &'static str,
    locality: LocalitySection,
    independence: IndependenceSection,
    quantum_agreement: QuantumSection,
    chsh_bound: BoundSection,
}

#[derive(Serialize)]
struct LocalitySection {
    passed: bool,
    max_deviation: f64,
    lambdas_checked: usize,
    comparisons: usize,
    grid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<WitnessSection>,
}

#[derive(Serialize)]
struct WitnessSection {
    wing: String,
    lambda: String,
    own_setting: Angle,
    context_1: String,
    context_2: String,
    p1_in_context_1: f64,
    p1_in_context_2: f64,
}

#[derive(Serialize)]
struct IndependenceSection {
    passed: bool,
    expected: bool,
    consistent_with_declaration: bool,
    max_tv: f64,
    pairs_checked: usize,
}

#[derive(Serialize)]
struct QuantumSection {
    matches: bool,
    max_deviation: f64,
}

#[derive(Serialize)]
struct BoundSection {
    applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_abs: Option<f64>,
}

struct DependenceAudit {
    measured: Dependence,
    max_tv: f64,
    pairs: usize,
}

/// Measures which setting axes the λ law actually depends on, by exact
/// total-variation distance over an 8-point grid per axis.
fn measure_dependence(m: &BeableModel) -> Result<DependenceAudit, CmdError> {
    let g = angle_grid(8);
    let mut max_tv = 0.0f64;
    let mut pairs = 0;
    let mut run = |settings: &[Settings]| -> Result<bool, CmdError> {
        let rep = independence_test(m, settings, IndependenceMode::Exact)
            .map_err(|e| err(e.to_string()))?;
        max_tv = max_tv.max(rep.max_tv);
        pairs += rep.pairs.len();
        Ok(rep.dependent)
    };
    let measured = match m.experiment_kind() {
        ExperimentKind::Eprb => {
            let all: Vec<Settings> = g
                .iter()
                .flat_map(|&a| g.iter().map(move |&b| Settings::eprb(a, b)))
                .collect();
            Dependence { past: false, future: run(&all)? }
        }
        ExperimentKind::Seprb => {
            let mut future = false;
            for &gamma in &g {
                for c in [false, true] {
                    let s: Vec<Settings> = g
                        .iter()
                        .map(|&b| Settings::seprb(gamma, b, InputChoice(c)))
                        .collect();
                    future |= run(&s)?;
                }
            }
            let mut past = false;
            for &beta in &g {
                let s: Vec<Settings> = g
                    .iter()
                    .flat_map(|&gamma| {
                        [false, true]
                            .map(|c| Settings::seprb(gamma, beta, InputChoice(c)))
                    })
                    .collect();
                past |= run(&s)?;
            }
            Dependence { past, future }
        }
    };
    Ok(DependenceAudit { measured, max_tv, pairs })
}

/// Maximum deviation of the model's predictions from the exact quantum
/// statistics over an 8-point settings grid.
fn quantum_deviation(m: &BeableModel) -> Result<f64, CmdError> {
    let g = angle_grid(8);
    let mut dev = 0.0f64;
    match m.experiment_kind() {
        ExperimentKind::Eprb => {
            for &a in &g {
                for &b in &g {
                    let p = model_joint(m, &Settings::eprb(a, b))
                        .map_err(|e| err(e.to_string()))?
                        .joint()
                        .expect("two-photon prediction");
                    let q = eprb_joint(a, b);
                    for (x, y) in p.entries().iter().flatten().zip(q.entries().iter().flatten()) {
                        dev = dev.max((x - y).abs());
                    }
                }
            }
        }
        ExperimentKind::Seprb => {
            for &gamma in &g {
                for &beta in &g {
                    for c in [false, true] {
                        let s = Settings::seprb(gamma, beta, InputChoice(c));
                        let p = model_joint(m, &s)
                            .map_err(|e| err(e.to_string()))?
                            .bernoulli()
                            .expect("single-photon prediction")
                            .p1();
                        let q = seprb_conditional(gamma, beta, InputChoice(c)).p1();
                        dev = dev.max((p - q).abs());
                    }
                }
            }
        }
    }
    Ok(dev)
}

fn run_verify(m: &BeableModel, grid: usize) -> Result<ExecOutput, CmdError> {
    let locality =
        locality_check(m, &angle_grid(grid)).map_err(|e| err(e.to_string()))?;
    let audit = measure_dependence(m)?;
    let declared = m.dependence();
    let consistent = audit.measured == declared;
    let independence_expected = declared.is_independent();
    let quantum_dev = quantum_deviation(m)?;

    let bound = if m.experiment_kind() == ExperimentKind::Eprb && declared.is_independent() {
        let mut max_abs = 0.0f64;
        for q in BOUND_QUADRUPLES {
            let settings = q.map(Angle::new);
            let table =
                model_correlation_table(m, settings).map_err(|e| err(e.to_string()))?;
            max_abs = max_abs.max(chsh(&table).max_abs);
        }
        BoundSection {
            applicable: true,
            passed: Some(max_abs <= LOCAL_BOUND + CHSH_TOL),
            max_abs: Some(max_abs),
        }
    } else {
        BoundSection { applicable: false, passed: None, max_abs: None }
    };

    let bound_ok = bound.passed.unwrap_or(true);
    let passed = locality.passed && consistent && bound_ok;
    let report = VerifyReport {
        model: m.name().to_string(),
        experiment: m.experiment_kind().to_string(),
        declared_dependence: declared.to_string(),
        measured_dependence: audit.measured.to_string(),
        overall: if passed { "pass" } else { "fail" },
        locality: LocalitySection {
            passed: locality.passed,
            max_deviation: locality.max_deviation,
            lambdas_checked: locality.lambdas_checked,
            comparisons: locality.comparisons,
            grid,
            witness: locality.witness.as_ref().map(|w| WitnessSection {
                wing: w.wing.to_string(),
                lambda: w.lambda.to_string(),
                own_setting: w.own_setting,
                context_1: w.context_1.to_string(),
                context_2: w.context_2.to_string(),
                p1_in_context_1: w.p1_in_context_1,
                p1_in_context_2: w.p1_in_context_2,
            }),
        },
        independence: IndependenceSection {
            passed: audit.measured.is_independent(),
            expected: independence_expected,
            consistent_with_declaration: consistent,
            max_tv: audit.max_tv,
            pairs_checked: audit.pairs,
        },
        quantum_agreement: QuantumSection {
            matches: quantum_dev <= QUANTUM_MATCH_TOL,
            max_deviation: quantum_dev,
        },
        chsh_bound: bound,
    };
    Ok(ExecOutput { content: to_toml(&report)?, failed: !passed })
}

fn run_sweep(spec: &SweepSpec) -> Result<ExecOutput, CmdError> {
    let g = angle_grid(spec.grid);
    let mut out = String::new();
    match spec.kind {
        ExperimentKind::Eprb => {
            out.push_str("experiment,alpha,beta,value\n");
            for &a in &g {
                for &b in &g {
                    let value = match &spec.model {
                        None => eprb_joint(a, b).pr_equal(),
                        Some(m) => model_joint(m, &Settings::eprb(a, b))
                            .map_err(|e| err(e.to_string()))?
                            .joint()
                            .expect("two-photon prediction")
                            .pr_equal(),
                    };
                    out.push_str(&format!("{},{},{},{}\n", spec.label, a, b, value));
                }
            }
        }
        ExperimentKind::Seprb => {
            out.push_str("experiment,gamma,beta,value\n");
            for &gamma in &g {
                for &beta in &g {
                    let s = Settings::seprb(gamma, beta, InputChoice(true));
                    let value = match &spec.model {
                        None => seprb_conditional(gamma, beta, InputChoice(true)).p1(),
                        Some(m) => model_joint(m, &s)
                            .map_err(|e| err(e.to_string()))?
                            .bernoulli()
                            .expect("single-photon prediction")
                            .p1(),
                    };
                    out.push_str(&format!("{},{},{},{}\n", spec.label, gamma, beta, value));
                }
            }
        }
    }
    Ok(ExecOutput::ok(out))
}

#[derive(Serialize)]
struct PolytopeReport {
    #[serde(rename = "box")]
    box_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    signalling: f64,
    max_abs: f64,
    local_bound: f64,
    member: bool,
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violated_facet: Option<FacetSection>,
}

#[derive(Serialize)]
struct FacetSection {
    signs: Vec<i8>,
    value: f64,
}

fn run_polytope(choice: &BoxChoice) -> Result<ExecOutput, CmdError> {
    let (name, weight, b) = match choice {
        BoxChoice::Pr => ("pr".to_string(), None, Box22::pr_box()),
        BoxChoice::WhiteNoise => ("white-noise".to_string(), None, Box22::white_noise()),
        BoxChoice::Quantum([a1, a2, b1, b2]) => (
            "quantum".to_string(),
            None,
            Box22::quantum(*a1, *a2, *b1, *b2),
        ),
        BoxChoice::PrMix { weight } => (
            "pr-mix".to_string(),
            Some(*weight),
            Box22::white_noise()
                .mix(&Box22::pr_box(), *weight)
                .map_err(|e| err(e.to_string()))?,
        ),
    };
    let cert = polytope_membership(&b).map_err(|e| err(e.to_string()))?;
    let report = b.chsh_report();
    let content = to_toml(&PolytopeReport {
        box_name: name,
        weight,
        signalling: b.signalling(),
        max_abs: report.max_abs,
        local_bound: LOCAL_BOUND,
        member: cert.member,
        values: report.values.to_vec(),
        weights: cert.weights.map(|w| w.to_vec()),
        violated_facet: cert
            .violated_facet
            .map(|f| FacetSection { signs: f.signs.to_vec(), value: f.value }),
    })?;
    Ok(ExecOutput::ok(content))
}
