//! Pluggable hidden-state ontologies for both experiments.
//!
//! A [`BeableModel`] is a λ law (a distribution over hidden states, possibly
//! conditioned on the settings) together with response functions giving each
//! cube's outcome probabilities. The model declares which setting axes its
//! law depends on; the audits in [`crate::bell`] check the declaration
//! against the model's actual behavior.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{
    self, Angle, Bernoulli, DistributionError, ExperimentKind, InputChoice, JointDist, Outcome,
    ANALYTIC_TOL,
};
use crate::stream::{RandomStream, SeedLineage};

/// Measurement settings for one run of either experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Settings {
    Eprb { alpha: Angle, beta: Angle },
    Seprb { gamma: Angle, beta: Angle, c: InputChoice },
}

impl Settings {
    pub fn eprb(alpha: Angle, beta: Angle) -> Settings {
        Settings::Eprb { alpha, beta }
    }

    pub fn seprb(gamma: Angle, beta: Angle, c: InputChoice) -> Settings {
        Settings::Seprb { gamma, beta, c }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            Settings::Eprb { .. } => ExperimentKind::Eprb,
            Settings::Seprb { .. } => ExperimentKind::Seprb,
        }
    }

    /// The second cube's orientation, present in both layouts.
    pub fn beta(&self) -> Angle {
        match self {
            Settings::Eprb { beta, .. } | Settings::Seprb { beta, .. } => *beta,
        }
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Settings::Eprb { alpha, beta } => write!(f, "alpha={alpha};beta={beta}"),
            Settings::Seprb { gamma, beta, c } => {
                write!(f, "gamma={gamma};beta={beta};c={c}")
            }
        }
    }
}

/// One coordinate of a hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaField {
    /// A carried copy of a device setting.
    Setting(Angle),
    /// A photon polarization.
    Polarization(Angle),
    /// A pre-committed binary value.
    Bit(bool),
}

impl fmt::Display for LambdaField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaField::Setting(a) => write!(f, "setting={a}"),
            LambdaField::Polarization(a) => write!(f, "polarization={a}"),
            LambdaField::Bit(b) => write!(f, "bit={}", *b as u8),
        }
    }
}

/// A hidden-state value: a finite record of fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LambdaValue(pub Vec<LambdaField>);

impl LambdaValue {
    pub fn bit(b: bool) -> LambdaValue {
        LambdaValue(vec![LambdaField::Bit(b)])
    }

    pub fn bits(a: bool, b: bool) -> LambdaValue {
        LambdaValue(vec![LambdaField::Bit(a), LambdaField::Bit(b)])
    }

    pub fn polarization(a: Angle) -> LambdaValue {
        LambdaValue(vec![LambdaField::Polarization(a)])
    }

    fn bit_at(&self, i: usize) -> bool {
        match self.0.get(i) {
            Some(LambdaField::Bit(b)) => *b,
            other => panic!("expected bit field at {i}, found {other:?}"),
        }
    }

    fn first_polarization(&self) -> Option<Angle> {
        self.0.iter().find_map(|f| match f {
            LambdaField::Polarization(a) => Some(*a),
            _ => None,
        })
    }
}

impl fmt::Display for LambdaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, field) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{field}")?;
        }
        write!(f, "]")
    }
}

/// Which setting axes a model's λ law is declared to depend on. "Past" means
/// the settings on the injection side of the diagram (γ and the input choice
/// for SEPRB), "future" the later ones (β, or both cubes for EPRB).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dependence {
    pub past: bool,
    pub future: bool,
}

impl Dependence {
    pub const NONE: Dependence = Dependence { past: false, future: false };
    pub const PAST: Dependence = Dependence { past: true, future: false };
    pub const FUTURE: Dependence = Dependence { past: false, future: true };
    pub const BOTH: Dependence = Dependence { past: true, future: true };

    pub fn is_independent(&self) -> bool {
        !self.past && !self.future
    }
}

impl fmt::Display for Dependence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.past, self.future) {
            (false, false) => write!(f, "none"),
            (true, false) => write!(f, "past"),
            (false, true) => write!(f, "future"),
            (true, true) => write!(f, "past+future"),
        }
    }
}

/// Ontology failures: mismatched settings, invalid laws, or invalid specs.
#[derive(Debug, Clone, PartialEq)]
pub enum OntologyError {
    WrongSettings { expected: ExperimentKind, got: ExperimentKind },
    UnnormalizedLaw { sum: f64 },
    InvalidWeight { value: f64 },
    EmptySupport,
    DuplicateLambda(String),
    MissingPolarization(String),
    InvalidResponse { value: f64 },
    Distribution(DistributionError),
}

impl fmt::Display for OntologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OntologyError::WrongSettings { expected, got } => {
                write!(f, "model expects {expected} settings, got {got}")
            }
            OntologyError::UnnormalizedLaw { sum } => {
                write!(f, "lambda weights sum to {sum}, expected 1")
            }
            OntologyError::InvalidWeight { value } => write!(f, "invalid lambda weight {value}"),
            OntologyError::EmptySupport => write!(f, "lambda law has empty support"),
            OntologyError::DuplicateLambda(l) => write!(f, "duplicate lambda value {l}"),
            OntologyError::MissingPolarization(l) => {
                write!(f, "response rule needs a polarization field in {l}")
            }
            OntologyError::InvalidResponse { value } => {
                write!(f, "response probability out of range: {value}")
            }
            OntologyError::Distribution(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for OntologyError {}

impl From<DistributionError> for OntologyError {
    fn from(e: DistributionError) -> OntologyError {
        OntologyError::Distribution(e)
    }
}

type LawFn = dyn Fn(&Settings) -> Vec<(LambdaValue, f64)> + Send + Sync;
type LocalResponseFn = dyn Fn(Angle, &LambdaValue) -> f64 + Send + Sync;
type FullResponseFn = dyn Fn(&Settings, &LambdaValue) -> f64 + Send + Sync;

#[derive(Clone)]
enum Law {
    Fixed(Vec<(LambdaValue, f64)>),
    PerSettings(Arc<LawFn>),
}

#[derive(Clone)]
enum Response {
    /// Sees only the wing's own setting and λ.
    Local(Arc<LocalResponseFn>),
    /// Sees the full settings record. Only audit fixtures use this; the
    /// locality check exists to catch it.
    Full(Arc<FullResponseFn>),
}

impl Response {
    fn local(f: impl Fn(Angle, &LambdaValue) -> f64 + Send + Sync + 'static) -> Response {
        Response::Local(Arc::new(f))
    }
}

/// A hidden-state model of one of the two experiments.
#[derive(Clone)]
pub struct BeableModel {
    name: String,
    kind: ExperimentKind,
    dependence: Dependence,
    law: Law,
    response_a: Option<Response>,
    response_b: Response,
}

impl fmt::Debug for BeableModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BeableModel")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("dependence", &self.dependence)
            .finish_non_exhaustive()
    }
}

fn validate_law(entries: &[(LambdaValue, f64)]) -> Result<(), OntologyError> {
    if entries.is_empty() {
        return Err(OntologyError::EmptySupport);
    }
    let mut sum = 0.0;
    for (_, w) in entries {
        if !(w.is_finite() && (-ANALYTIC_TOL..=1.0 + ANALYTIC_TOL).contains(w)) {
            return Err(OntologyError::InvalidWeight { value: *w });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > ANALYTIC_TOL {
        return Err(OntologyError::UnnormalizedLaw { sum });
    }
    Ok(())
}

impl BeableModel {
    /// A two-photon model from a settings-conditioned law and per-wing local
    /// response functions.
    pub fn custom_eprb(
        name: impl Into<String>,
        dependence: Dependence,
        law: impl Fn(&Settings) -> Vec<(LambdaValue, f64)> + Send + Sync + 'static,
        response_a: impl Fn(Angle, &LambdaValue) -> f64 + Send + Sync + 'static,
        response_b: impl Fn(Angle, &LambdaValue) -> f64 + Send + Sync + 'static,
    ) -> BeableModel {
        BeableModel {
            name: name.into(),
            kind: ExperimentKind::Eprb,
            dependence,
            law: Law::PerSettings(Arc::new(law)),
            response_a: Some(Response::local(response_a)),
            response_b: Response::local(response_b),
        }
    }

    /// A single-photon model: only cube B produces an outcome.
    pub fn custom_seprb(
        name: impl Into<String>,
        dependence: Dependence,
        law: impl Fn(&Settings) -> Vec<(LambdaValue, f64)> + Send + Sync + 'static,
        response_b: impl Fn(Angle, &LambdaValue) -> f64 + Send + Sync + 'static,
    ) -> BeableModel {
        BeableModel {
            name: name.into(),
            kind: ExperimentKind::Seprb,
            dependence,
            law: Law::PerSettings(Arc::new(law)),
            response_a: None,
            response_b: Response::local(response_b),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn experiment_kind(&self) -> ExperimentKind {
        self.kind
    }

    pub fn dependence(&self) -> Dependence {
        self.dependence
    }

    fn check_settings(&self, s: &Settings) -> Result<(), OntologyError> {
        if s.kind() != self.kind {
            return Err(OntologyError::WrongSettings {
                expected: self.kind,
                got: s.kind(),
            });
        }
        Ok(())
    }

    /// The λ distribution the law assigns at the given settings, validated
    /// to be a probability distribution.
    pub fn lambda_law(&self, s: &Settings) -> Result<Vec<(LambdaValue, f64)>, OntologyError> {
        self.check_settings(s)?;
        let entries = match &self.law {
            Law::Fixed(entries) => entries.clone(),
            Law::PerSettings(f) => f(s),
        };
        validate_law(&entries)?;
        Ok(entries)
    }

    /// P(outcome 1 at cube A | settings, λ). `None` for single-photon models.
    pub fn prob_a1(&self, s: &Settings, lambda: &LambdaValue) -> Option<f64> {
        let response = self.response_a.as_ref()?;
        let Settings::Eprb { alpha, .. } = s else {
            return None;
        };
        Some(match response {
            Response::Local(f) => f(*alpha, lambda),
            Response::Full(f) => f(s, lambda),
        })
    }

    /// P(outcome 1 at cube B | settings, λ).
    pub fn prob_b1(&self, s: &Settings, lambda: &LambdaValue) -> f64 {
        match &self.response_b {
            Response::Local(f) => f(s.beta(), lambda),
            Response::Full(f) => f(s, lambda),
        }
    }
}

/// The exact outcome distribution a model assigns at given settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelPrediction {
    Eprb(JointDist),
    Seprb(Bernoulli),
}

impl ModelPrediction {
    pub fn joint(&self) -> Option<JointDist> {
        match self {
            ModelPrediction::Eprb(d) => Some(*d),
            ModelPrediction::Seprb(_) => None,
        }
    }

    pub fn bernoulli(&self) -> Option<Bernoulli> {
        match self {
            ModelPrediction::Eprb(_) => None,
            ModelPrediction::Seprb(b) => Some(*b),
        }
    }
}

fn clamp_prob(p: f64) -> Result<f64, OntologyError> {
    if !(p.is_finite() && (-ANALYTIC_TOL..=1.0 + ANALYTIC_TOL).contains(&p)) {
        return Err(OntologyError::InvalidResponse { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Marginalizes the λ law against the response functions: the exact outcome
/// distribution the model predicts at `settings`.
pub fn model_joint(m: &BeableModel, settings: &Settings) -> Result<ModelPrediction, OntologyError> {
    let law = m.lambda_law(settings)?;
    match m.kind {
        ExperimentKind::Eprb => {
            let mut p = [[0.0f64; 2]; 2];
            for (lambda, w) in &law {
                let pa = clamp_prob(m.prob_a1(settings, lambda).expect("two-photon model"))?;
                let pb = clamp_prob(m.prob_b1(settings, lambda))?;
                p[1][1] += w * pa * pb;
                p[1][0] += w * pa * (1.0 - pb);
                p[0][1] += w * (1.0 - pa) * pb;
                p[0][0] += w * (1.0 - pa) * (1.0 - pb);
            }
            Ok(ModelPrediction::Eprb(JointDist::new(p)?))
        }
        ExperimentKind::Seprb => {
            let mut p1 = 0.0;
            for (lambda, w) in &law {
                p1 += w * clamp_prob(m.prob_b1(settings, lambda))?;
            }
            Ok(ModelPrediction::Seprb(Bernoulli::new(p1)?))
        }
    }
}

/// One sampled run: the hidden state drawn, the outcomes, and the stream
/// position that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub settings: Settings,
    pub lambda: LambdaValue,
    pub outcome_a: Option<Outcome>,
    pub outcome_b: Outcome,
    pub lineage: SeedLineage,
}

/// A λ law evaluated once and frozen into a cumulative table, so repeated
/// sampling at fixed settings avoids re-deriving the law. Draw-for-draw
/// identical to [`sample_run`].
pub struct PreparedSampler<'m> {
    model: &'m BeableModel,
    settings: Settings,
    lambdas: Vec<LambdaValue>,
    cumulative: Vec<f64>,
}

impl<'m> PreparedSampler<'m> {
    pub fn new(model: &'m BeableModel, settings: &Settings) -> Result<Self, OntologyError> {
        let law = model.lambda_law(settings)?;
        let mut lambdas = Vec::with_capacity(law.len());
        let mut cumulative = Vec::with_capacity(law.len());
        let mut acc = 0.0;
        for (lambda, w) in law {
            acc += w;
            lambdas.push(lambda);
            cumulative.push(acc);
        }
        Ok(PreparedSampler {
            model,
            settings: *settings,
            lambdas,
            cumulative,
        })
    }

    pub fn sample(&self, stream: &mut RandomStream) -> RunRecord {
        let lineage = stream.begin_run();
        let u = stream.uniform();
        let mut idx = self.cumulative.partition_point(|&c| c <= u);
        if idx >= self.lambdas.len() {
            idx = self.lambdas.len() - 1;
        }
        let lambda = &self.lambdas[idx];
        let outcome_a = match self.model.kind {
            ExperimentKind::Eprb => {
                let pa = self
                    .model
                    .prob_a1(&self.settings, lambda)
                    .expect("two-photon model");
                Some(Outcome::from_bit(stream.bernoulli(pa)))
            }
            ExperimentKind::Seprb => None,
        };
        let pb = self.model.prob_b1(&self.settings, lambda);
        let outcome_b = Outcome::from_bit(stream.bernoulli(pb));
        RunRecord {
            settings: self.settings,
            lambda: lambda.clone(),
            outcome_a,
            outcome_b,
            lineage,
        }
    }
}

/// Draws one run of the model: λ from the law, then each outcome from its
/// response function, consuming a fixed number of stream draws per run.
pub fn sample_run(
    m: &BeableModel,
    settings: &Settings,
    stream: &mut RandomStream,
) -> Result<RunRecord, OntologyError> {
    Ok(PreparedSampler::new(m, settings)?.sample(stream))
}

/// How a local hidden-variable entry responds to a cube setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ResponseRule {
    /// Outcome 1 with a fixed probability, ignoring the setting.
    Constant { p1: f64 },
    /// Transmission probability cos²(setting − polarization), reading the
    /// entry's polarization field.
    Malus,
    /// Deterministic cutoff: transmit when cos²(setting − polarization) ≥ 1/2.
    Threshold,
}

impl ResponseRule {
    fn validate(&self, lambda: &LambdaValue) -> Result<(), OntologyError> {
        match self {
            ResponseRule::Constant { p1 } => {
                if !(p1.is_finite() && (0.0..=1.0).contains(p1)) {
                    return Err(OntologyError::InvalidResponse { value: *p1 });
                }
            }
            ResponseRule::Malus | ResponseRule::Threshold => {
                if lambda.first_polarization().is_none() {
                    return Err(OntologyError::MissingPolarization(lambda.to_string()));
                }
            }
        }
        Ok(())
    }

    fn eval(&self, setting: Angle, lambda: &LambdaValue) -> f64 {
        match self {
            ResponseRule::Constant { p1 } => *p1,
            ResponseRule::Malus => {
                let pol = lambda.first_polarization().expect("validated rule");
                model::malus_intensity(pol, setting)
            }
            ResponseRule::Threshold => {
                let pol = lambda.first_polarization().expect("validated rule");
                if model::malus_intensity(pol, setting) >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One support point of a local hidden-variable model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalHvEntry {
    pub lambda: LambdaValue,
    pub weight: f64,
    pub response_a: ResponseRule,
    pub response_b: ResponseRule,
}

/// Declarative description of a settings-independent local hidden-variable
/// model for the two-photon experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalHvSpec {
    pub name: String,
    pub entries: Vec<LocalHvEntry>,
}

/// Builds a [`BeableModel`] from a local hidden-variable spec: a fixed λ law
/// and per-wing responses that see only the wing's own setting.
pub fn make_local_hv(spec: &LocalHvSpec) -> Result<BeableModel, OntologyError> {
    let entries: Vec<(LambdaValue, f64)> = spec
        .entries
        .iter()
        .map(|e| (e.lambda.clone(), e.weight))
        .collect();
    validate_law(&entries)?;
    let mut rules: BTreeMap<LambdaValue, (ResponseRule, ResponseRule)> = BTreeMap::new();
    for e in &spec.entries {
        e.response_a.validate(&e.lambda)?;
        e.response_b.validate(&e.lambda)?;
        if rules
            .insert(e.lambda.clone(), (e.response_a, e.response_b))
            .is_some()
        {
            return Err(OntologyError::DuplicateLambda(e.lambda.to_string()));
        }
    }
    let rules = Arc::new(rules);
    let rules_a = Arc::clone(&rules);
    let rules_b = rules;
    Ok(BeableModel {
        name: spec.name.clone(),
        kind: ExperimentKind::Eprb,
        dependence: Dependence::NONE,
        law: Law::Fixed(entries),
        response_a: Some(Response::local(move |setting, lambda| {
            rules_a
                .get(lambda)
                .unwrap_or_else(|| panic!("lambda {lambda} not in the model's support"))
                .0
                .eval(setting, lambda)
        })),
        response_b: Response::local(move |setting, lambda| {
            rules_b
                .get(lambda)
                .unwrap_or_else(|| panic!("lambda {lambda} not in the model's support"))
                .1
                .eval(setting, lambda)
        }),
    })
}

/// Both wings read out one shared fair coin.
pub fn shared_coin_spec() -> LocalHvSpec {
    LocalHvSpec {
        name: "shared-coin".into(),
        entries: vec![
            LocalHvEntry {
                lambda: LambdaValue::bit(false),
                weight: 0.5,
                response_a: ResponseRule::Constant { p1: 0.0 },
                response_b: ResponseRule::Constant { p1: 0.0 },
            },
            LocalHvEntry {
                lambda: LambdaValue::bit(true),
                weight: 0.5,
                response_a: ResponseRule::Constant { p1: 1.0 },
                response_b: ResponseRule::Constant { p1: 1.0 },
            },
        ],
    }
}

/// Each pair carries one shared polarization, uniform over a grid; each wing
/// transmits deterministically when its cube is within an eighth turn.
pub fn deterministic_polarization_spec(grid_points: usize) -> LocalHvSpec {
    let n = grid_points.max(1);
    let weight = 1.0 / n as f64;
    let entries = model::angle_grid(n)
        .into_iter()
        .map(|pol| LocalHvEntry {
            lambda: LambdaValue::polarization(pol),
            weight,
            response_a: ResponseRule::Threshold,
            response_b: ResponseRule::Threshold,
        })
        .collect();
    LocalHvSpec {
        name: "det-polarization".into(),
        entries,
    }
}

/// Two-photon model whose hidden state is the pair of outcomes itself,
/// committed at the source with the statistics the settings will call for.
/// The λ law reads both future settings; each wing then just announces its
/// pre-committed bit.
pub fn make_retro_eprb() -> BeableModel {
    BeableModel {
        name: "retro-eprb".into(),
        kind: ExperimentKind::Eprb,
        dependence: Dependence::FUTURE,
        law: Law::PerSettings(Arc::new(|s: &Settings| {
            let Settings::Eprb { alpha, beta } = s else {
                unreachable!("settings kind checked before law evaluation");
            };
            let d = model::eprb_joint(*alpha, *beta);
            let mut entries = Vec::with_capacity(4);
            for a in [false, true] {
                for b in [false, true] {
                    let p = d.prob(Outcome::from_bit(a), Outcome::from_bit(b));
                    entries.push((LambdaValue::bits(a, b), p));
                }
            }
            entries
        })),
        response_a: Some(Response::local(|_, lambda| lambda.bit_at(0) as u8 as f64)),
        response_b: Response::local(|_, lambda| lambda.bit_at(1) as u8 as f64),
    }
}

/// Single-photon model whose hidden state is the polarization the photon
/// carries between the cubes, fixed by the first cube's setting and the
/// input choice.
pub fn make_cbeable_seprb() -> BeableModel {
    BeableModel {
        name: "cbeable-seprb".into(),
        kind: ExperimentKind::Seprb,
        dependence: Dependence::PAST,
        law: Law::PerSettings(Arc::new(|s: &Settings| {
            let Settings::Seprb { gamma, c, .. } = s else {
                unreachable!("settings kind checked before law evaluation");
            };
            let pol = if c.bit() { *gamma } else { gamma.perpendicular() };
            vec![(LambdaValue::polarization(pol), 1.0)]
        })),
        response_a: None,
        response_b: Response::local(|beta, lambda| {
            let pol = lambda.first_polarization().expect("polarization beable");
            model::malus_intensity(pol, beta)
        }),
    }
}

/// Single-photon model whose hidden state is the outcome at cube B itself,
/// committed in advance with the statistics fixed jointly by the past and
/// future settings.
pub fn make_timesym_seprb() -> BeableModel {
    BeableModel {
        name: "timesym-seprb".into(),
        kind: ExperimentKind::Seprb,
        dependence: Dependence::BOTH,
        law: Law::PerSettings(Arc::new(|s: &Settings| {
            let Settings::Seprb { gamma, beta, c } = s else {
                unreachable!("settings kind checked before law evaluation");
            };
            let p1 = model::seprb_conditional(*gamma, *beta, *c).p1();
            vec![
                (LambdaValue::bit(true), p1),
                (LambdaValue::bit(false), 1.0 - p1),
            ]
        })),
        response_a: None,
        response_b: Response::local(|_, lambda| lambda.bit_at(0) as u8 as f64),
    }
}

/// Audit fixture: a two-photon model whose B response secretly reads wing
/// A's setting. Its declared dependence is none, so both the locality check
/// and the declaration audit must flag it.
pub fn make_settings_leaking_eprb() -> BeableModel {
    BeableModel {
        name: "settings-leak".into(),
        kind: ExperimentKind::Eprb,
        dependence: Dependence::NONE,
        law: Law::Fixed(vec![
            (LambdaValue::bit(false), 0.5),
            (LambdaValue::bit(true), 0.5),
        ]),
        response_a: Some(Response::local(|_, lambda| lambda.bit_at(0) as u8 as f64)),
        response_b: Response::Full(Arc::new(|s: &Settings, lambda: &LambdaValue| {
            let Settings::Eprb { alpha, .. } = s else {
                unreachable!("settings kind checked before response evaluation");
            };
            let agree = model::malus_intensity(*alpha, Angle::new(0.0));
            if lambda.bit_at(0) {
                agree
            } else {
                1.0 - agree
            }
        })),
    }
}

pub const BUILTIN_MODELS: &[&str] = &[
    "shared-coin",
    "det-polarization",
    "retro-eprb",
    "cbeable-seprb",
    "timesym-seprb",
    "settings-leak",
];

/// Looks up a built-in model by name.
pub fn builtin_model(name: &str) -> Option<BeableModel> {
    match name {
        "shared-coin" => Some(make_local_hv(&shared_coin_spec()).expect("valid spec")),
        "det-polarization" => {
            Some(make_local_hv(&deterministic_polarization_spec(360)).expect("valid spec"))
        }
        "retro-eprb" => Some(make_retro_eprb()),
        "cbeable-seprb" => Some(make_cbeable_seprb()),
        "timesym-seprb" => Some(make_timesym_seprb()),
        "settings-leak" => Some(make_settings_leaking_eprb()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::angle_grid;
    use std::f64::consts::PI;

    fn assert_close(x: f64, y: f64, tol: f64) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }

    #[test]
    fn retro_eprb_reproduces_the_quantum_joint() {
        let m = make_retro_eprb();
        for alpha in angle_grid(16) {
            for beta in angle_grid(16) {
                let s = Settings::eprb(alpha, beta);
                let got = model_joint(&m, &s).unwrap().joint().unwrap();
                let want = model::eprb_joint(alpha, beta);
                for a in [Outcome::Reflection, Outcome::Transmission] {
                    for b in [Outcome::Reflection, Outcome::Transmission] {
                        assert_close(got.prob(a, b), want.prob(a, b), ANALYTIC_TOL);
                    }
                }
            }
        }
    }

    #[test]
    fn cbeable_seprb_reproduces_the_conditional() {
        let m = make_cbeable_seprb();
        for gamma in angle_grid(16) {
            for beta in angle_grid(16) {
                for c in [InputChoice(false), InputChoice(true)] {
                    let s = Settings::seprb(gamma, beta, c);
                    let got = model_joint(&m, &s).unwrap().bernoulli().unwrap();
                    let want = model::seprb_conditional(gamma, beta, c);
                    assert_close(got.p1(), want.p1(), ANALYTIC_TOL);
                }
            }
        }
    }

    #[test]
    fn timesym_seprb_reproduces_the_conditional() {
        let m = make_timesym_seprb();
        for gamma in angle_grid(8) {
            for beta in angle_grid(8) {
                for c in [InputChoice(false), InputChoice(true)] {
                    let s = Settings::seprb(gamma, beta, c);
                    let got = model_joint(&m, &s).unwrap().bernoulli().unwrap();
                    let want = model::seprb_conditional(gamma, beta, c);
                    assert_close(got.p1(), want.p1(), ANALYTIC_TOL);
                }
            }
        }
    }

    #[test]
    fn retro_law_at_aligned_settings_is_half_half() {
        let m = make_retro_eprb();
        let law = m
            .lambda_law(&Settings::eprb(Angle::new(0.0), Angle::new(0.0)))
            .unwrap();
        let weights: BTreeMap<LambdaValue, f64> = law.into_iter().collect();
        assert_eq!(weights[&LambdaValue::bits(false, false)], 0.5);
        assert_eq!(weights[&LambdaValue::bits(true, true)], 0.5);
        assert_eq!(weights[&LambdaValue::bits(false, true)], 0.0);
        assert_eq!(weights[&LambdaValue::bits(true, false)], 0.0);
    }

    #[test]
    fn shared_coin_agrees_always() {
        let m = make_local_hv(&shared_coin_spec()).unwrap();
        let s = Settings::eprb(Angle::new(0.3), Angle::new(1.2));
        let d = model_joint(&m, &s).unwrap().joint().unwrap();
        assert_eq!(d.pr_equal(), 1.0);
        assert_eq!(d.marginal_a(), 0.5);
        assert!(m.dependence().is_independent());
    }

    #[test]
    fn det_polarization_deviates_from_the_quantum_joint() {
        let m = make_local_hv(&deterministic_polarization_spec(360)).unwrap();
        let s = Settings::eprb(Angle::new(0.0), Angle::new(PI / 8.0));
        let d = model_joint(&m, &s).unwrap().joint().unwrap();
        let p11 = d.prob(Outcome::Transmission, Outcome::Transmission);
        let quantum = model::eprb_joint(Angle::new(0.0), Angle::new(PI / 8.0))
            .prob(Outcome::Transmission, Outcome::Transmission);
        assert!((p11 - quantum).abs() > 0.01, "p11={p11} quantum={quantum}");
        // Overlap of the two transmission windows is 3/8 of the half turn;
        // the grid can shift it by at most a few cells of width 1/360.
        assert!((p11 - 0.375).abs() <= 3.0 / 360.0, "p11={p11}");
    }

    #[test]
    fn model_joint_rejects_mismatched_settings() {
        let m = make_retro_eprb();
        let s = Settings::seprb(Angle::new(0.0), Angle::new(0.0), InputChoice(true));
        assert!(matches!(
            model_joint(&m, &s),
            Err(OntologyError::WrongSettings { .. })
        ));
    }

    #[test]
    fn local_hv_spec_validation() {
        let mut spec = shared_coin_spec();
        spec.entries[0].weight = 0.75;
        assert!(matches!(
            make_local_hv(&spec),
            Err(OntologyError::UnnormalizedLaw { .. })
        ));

        let mut spec = shared_coin_spec();
        spec.entries[1].lambda = LambdaValue::bit(false);
        assert!(matches!(
            make_local_hv(&spec),
            Err(OntologyError::DuplicateLambda(_))
        ));

        let mut spec = shared_coin_spec();
        spec.entries[0].response_a = ResponseRule::Malus;
        assert!(matches!(
            make_local_hv(&spec),
            Err(OntologyError::MissingPolarization(_))
        ));

        let mut spec = shared_coin_spec();
        spec.entries[0].response_b = ResponseRule::Constant { p1: 1.5 };
        assert!(matches!(
            make_local_hv(&spec),
            Err(OntologyError::InvalidResponse { .. })
        ));

        let spec = LocalHvSpec { name: "empty".into(), entries: vec![] };
        assert!(matches!(make_local_hv(&spec), Err(OntologyError::EmptySupport)));
    }

    #[test]
    fn sample_run_is_reproducible_and_counts_lineage() {
        let m = make_retro_eprb();
        let s = Settings::eprb(Angle::new(0.0), Angle::new(PI / 8.0));
        let mut s1 = RandomStream::substream(9, 2);
        let mut s2 = RandomStream::substream(9, 2);
        let r1 = sample_run(&m, &s, &mut s1).unwrap();
        let r2 = sample_run(&m, &s, &mut s2).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.lineage.master, 9);
        assert_eq!(r1.lineage.substream, 2);
        assert_eq!(r1.lineage.index, 0);
        let r3 = sample_run(&m, &s, &mut s1).unwrap();
        assert_eq!(r3.lineage.index, 1);
    }

    #[test]
    fn sampled_frequencies_track_the_exact_joint() {
        let m = make_retro_eprb();
        let alpha = Angle::new(0.0);
        let beta = Angle::new(PI / 8.0);
        let s = Settings::eprb(alpha, beta);
        let sampler = PreparedSampler::new(&m, &s).unwrap();
        let mut stream = RandomStream::new(1);
        let n = 20_000;
        let mut agree = 0u32;
        for _ in 0..n {
            let r = sampler.sample(&mut stream);
            if r.outcome_a.unwrap() == r.outcome_b {
                agree += 1;
            }
        }
        let want = model::eprb_joint(alpha, beta).pr_equal();
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert_close(agree as f64 / n as f64, want, 5.0 * se);
    }

    #[test]
    fn seprb_runs_have_no_a_outcome() {
        let m = make_cbeable_seprb();
        let s = Settings::seprb(Angle::new(0.4), Angle::new(1.0), InputChoice(false));
        let mut stream = RandomStream::new(3);
        let r = sample_run(&m, &s, &mut stream).unwrap();
        assert_eq!(r.outcome_a, None);
    }

    #[test]
    fn builtin_registry_resolves_all_names() {
        for name in BUILTIN_MODELS {
            let m = builtin_model(name).unwrap();
            assert_eq!(m.name(), *name);
        }
        assert!(builtin_model("no-such-model").is_none());
    }

    #[test]
    fn settings_leak_fixture_reads_the_remote_setting() {
        let m = make_settings_leaking_eprb();
        let lambda = LambdaValue::bit(true);
        let near = Settings::eprb(Angle::new(0.0), Angle::new(0.5));
        let far = Settings::eprb(Angle::new(PI / 2.0), Angle::new(0.5));
        let p_near = m.prob_b1(&near, &lambda);
        let p_far = m.prob_b1(&far, &lambda);
        assert!((p_near - p_far).abs() > 0.9);
    }
}
