//! CHSH machinery, the local polytope, and the model audits.
//!
//! Everything here works on two settings per wing and two outcomes per cube.
//! The local bound is established by exact enumeration of the 16
//! deterministic strategies; polytope membership is decided by a small
//! linear program over those strategies and cross-checked against the facet
//! criterion, which for this scenario is equivalent.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;

use crate::model::{correlation, eprb_joint, Angle, JointDist};
use crate::ontology::{BeableModel, LambdaValue, OntologyError, Settings};
use crate::simplex;
use crate::stream::RandomStream;
use crate::model::ExperimentKind;
use crate::model::InputChoice;

/// Largest |S| reachable by local models.
pub const LOCAL_BOUND: f64 = 2.0;
/// Tolerance for CHSH and polytope decisions.
pub const CHSH_TOL: f64 = 1e-9;
/// Tolerance for no-signalling marginal agreement.
pub const NS_TOL: f64 = 1e-9;
/// Tolerance for the exact screening-off audit.
pub const LOCALITY_TOL: f64 = 1e-12;

/// The eight CHSH sign patterns: every odd number of minus signs over
/// (E11, E12, E21, E22).
pub const SIGN_VARIANTS: [[i8; 4]; 8] = [
    [-1, 1, 1, 1],
    [1, -1, 1, 1],
    [1, 1, -1, 1],
    [1, 1, 1, -1],
    [1, -1, -1, -1],
    [-1, 1, -1, -1],
    [-1, -1, 1, -1],
    [-1, -1, -1, 1],
];

/// Failures in the Bell machinery.
#[derive(Debug, Clone, PartialEq)]
pub enum BellError {
    InvalidCorrelation { value: f64 },
    NonPositiveGridStep,
    SignallingBox { deviation: f64 },
    TooFewSettings,
    SampleCountTooSmall { n: u64 },
    Ontology(OntologyError),
}

impl fmt::Display for BellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BellError::InvalidCorrelation { value } => {
                write!(f, "correlation out of range: {value}")
            }
            BellError::NonPositiveGridStep => write!(f, "grid step must be positive"),
            BellError::SignallingBox { deviation } => {
                write!(f, "box violates no-signalling by {deviation}")
            }
            BellError::TooFewSettings => write!(f, "need at least two settings"),
            BellError::SampleCountTooSmall { n } => {
                write!(f, "sample count {n} is below the minimum of 1000")
            }
            BellError::Ontology(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BellError {}

impl From<OntologyError> for BellError {
    fn from(e: OntologyError) -> BellError {
        BellError::Ontology(e)
    }
}

/// A 2×2 table of ±1-valued correlators at named settings: `e[i][j]` pairs
/// the i-th A setting with the j-th B setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTable {
    settings: [Angle; 4],
    e: [[f64; 2]; 2],
}

impl CorrelationTable {
    /// `settings` is `[a1, a2, b1, b2]`.
    pub fn new(settings: [Angle; 4], e: [[f64; 2]; 2]) -> Result<CorrelationTable, BellError> {
        let mut clamped = e;
        for row in clamped.iter_mut() {
            for v in row.iter_mut() {
                if !(v.is_finite() && v.abs() <= 1.0 + CHSH_TOL) {
                    return Err(BellError::InvalidCorrelation { value: *v });
                }
                *v = v.clamp(-1.0, 1.0);
            }
        }
        Ok(CorrelationTable {
            settings,
            e: clamped,
        })
    }

    /// The quantum correlators cos 2(aᵢ − bⱼ) at the given settings.
    pub fn quantum(a1: Angle, a2: Angle, b1: Angle, b2: Angle) -> CorrelationTable {
        let e = |a: Angle, b: Angle| correlation(&eprb_joint(a, b));
        CorrelationTable {
            settings: [a1, a2, b1, b2],
            e: [[e(a1, b1), e(a1, b2)], [e(a2, b1), e(a2, b2)]],
        }
    }

    pub fn settings(&self) -> [Angle; 4] {
        self.settings
    }

    pub fn e(&self) -> [[f64; 2]; 2] {
        self.e
    }
}

/// All eight CHSH values of one correlation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshReport {
    pub values: [f64; 8],
    pub max_abs: f64,
    pub violated: bool,
}

pub(crate) fn chsh_from_correlations(e: [[f64; 2]; 2]) -> ChshReport {
    let flat = [e[0][0], e[0][1], e[1][0], e[1][1]];
    let mut values = [0.0; 8];
    let mut max_abs = 0.0f64;
    for (k, signs) in SIGN_VARIANTS.iter().enumerate() {
        let mut s = 0.0;
        for (sign, v) in signs.iter().zip(flat.iter()) {
            s += f64::from(*sign) * v;
        }
        values[k] = s;
        if s.abs() > max_abs {
            max_abs = s.abs();
        }
    }
    ChshReport {
        values,
        max_abs,
        violated: max_abs > LOCAL_BOUND + CHSH_TOL,
    }
}

/// Evaluates all eight CHSH combinations of a correlation table.
pub fn chsh(table: &CorrelationTable) -> ChshReport {
    chsh_from_correlations(table.e)
}

/// One deterministic local strategy: a fixed output for each wing's two
/// settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterministicStrategy {
    pub a: [bool; 2],
    pub b: [bool; 2],
}

impl DeterministicStrategy {
    /// All 16 strategies, in a fixed order (index encodes the four bits).
    pub fn all() -> Vec<DeterministicStrategy> {
        (0..16u8)
            .map(|k| DeterministicStrategy {
                a: [k & 1 != 0, k & 2 != 0],
                b: [k & 4 != 0, k & 8 != 0],
            })
            .collect()
    }

    /// Correlator at setting pair (i, j): +1 when the outputs agree.
    pub fn correlation(&self, i: usize, j: usize) -> i64 {
        if self.a[i] == self.b[j] {
            1
        } else {
            -1
        }
    }

    /// All eight CHSH values, in integer arithmetic.
    pub fn chsh_values(&self) -> [i64; 8] {
        let flat = [
            self.correlation(0, 0),
            self.correlation(0, 1),
            self.correlation(1, 0),
            self.correlation(1, 1),
        ];
        let mut values = [0i64; 8];
        for (k, signs) in SIGN_VARIANTS.iter().enumerate() {
            values[k] = signs
                .iter()
                .zip(flat.iter())
                .map(|(s, v)| i64::from(*s) * v)
                .sum();
        }
        values
    }
}

/// The local deterministic bound on |S|, established by exact enumeration of
/// all 16 strategies in integer arithmetic.
pub fn local_deterministic_bound() -> f64 {
    let max = DeterministicStrategy::all()
        .iter()
        .flat_map(|s| s.chsh_values())
        .map(|v| v.abs())
        .max()
        .expect("non-empty enumeration");
    max as f64
}

/// A two-setting/two-outcome behavior: one joint outcome table per setting
/// pair. `dist(i, j)` pairs the i-th A setting with the j-th B setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box22 {
    dists: [[JointDist; 2]; 2],
}

impl Box22 {
    pub fn new(dists: [[JointDist; 2]; 2]) -> Box22 {
        Box22 { dists }
    }

    pub fn dist(&self, i: usize, j: usize) -> &JointDist {
        &self.dists[i][j]
    }

    /// Largest marginal shift either wing could detect from the far setting.
    pub fn signalling(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            let d = (self.dists[i][0].marginal_a() - self.dists[i][1].marginal_a()).abs();
            worst = worst.max(d);
        }
        for j in 0..2 {
            let d = (self.dists[0][j].marginal_b() - self.dists[1][j].marginal_b()).abs();
            worst = worst.max(d);
        }
        worst
    }

    pub fn is_no_signalling(&self) -> bool {
        self.signalling() <= NS_TOL
    }

    /// The quantum behavior at the given settings.
    pub fn quantum(a1: Angle, a2: Angle, b1: Angle, b2: Angle) -> Box22 {
        let a = [a1, a2];
        let b = [b1, b2];
        let mut dists = [[eprb_joint(a1, b1); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                dists[i][j] = eprb_joint(a[i], b[j]);
            }
        }
        Box22 { dists }
    }

    /// Uniformly random outcomes at every setting pair.
    pub fn white_noise() -> Box22 {
        let quarter = JointDist::new([[0.25, 0.25], [0.25, 0.25]]).expect("valid table");
        Box22 {
            dists: [[quarter; 2]; 2],
        }
    }

    /// The extremal no-signalling box: perfect agreement except perfect
    /// disagreement at the last setting pair. Reaches |S| = 4.
    pub fn pr_box() -> Box22 {
        let agree = JointDist::new([[0.5, 0.0], [0.0, 0.5]]).expect("valid table");
        let disagree = JointDist::new([[0.0, 0.5], [0.5, 0.0]]).expect("valid table");
        Box22 {
            dists: [[agree, agree], [agree, disagree]],
        }
    }

    /// The deterministic box of one local strategy.
    #[allow(clippy::needless_range_loop)]
    pub fn from_strategy(s: &DeterministicStrategy) -> Box22 {
        let mut dists = [[JointDist::new([[1.0, 0.0], [0.0, 0.0]]).expect("valid table"); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut p = [[0.0; 2]; 2];
                p[s.a[i] as usize][s.b[j] as usize] = 1.0;
                dists[i][j] = JointDist::new(p).expect("valid table");
            }
        }
        Box22 { dists }
    }

    /// Entrywise convex mixture `(1-w)·self + w·other`.
    #[allow(clippy::needless_range_loop)]
    pub fn mix(&self, other: &Box22, w: f64) -> Result<Box22, BellError> {
        let mut dists = self.dists;
        for i in 0..2 {
            for j in 0..2 {
                dists[i][j] = self.dists[i][j]
                    .mix(&other.dists[i][j], w)
                    .map_err(OntologyError::Distribution)?;
            }
        }
        Ok(Box22 { dists })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn correlations(&self) -> [[f64; 2]; 2] {
        let mut e = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                e[i][j] = correlation(&self.dists[i][j]);
            }
        }
        e
    }

    pub fn chsh_report(&self) -> ChshReport {
        chsh_from_correlations(self.correlations())
    }
}

/// The CHSH facet a box violates, when it does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetViolation {
    pub signs: [i8; 4],
    pub value: f64,
}

/// Outcome of the polytope membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeCertificate {
    pub member: bool,
    /// Convex weights over [`DeterministicStrategy::all`] when member.
    pub weights: Option<[f64; 16]>,
    /// The largest-|S| facet when not a member.
    pub violated_facet: Option<FacetViolation>,
}

/// Decides whether a no-signalling box lies in the convex hull of the 16
/// deterministic local boxes, by phase-1 simplex over the hull weights. The
/// certificate either carries reconstructing weights or the violated facet;
/// by the facet characterization of this polytope the two cases coincide
/// with |S| ≤ 2 and |S| > 2.
pub fn polytope_membership(b: &Box22) -> Result<PolytopeCertificate, BellError> {
    let signalling = b.signalling();
    if signalling > NS_TOL {
        return Err(BellError::SignallingBox {
            deviation: signalling,
        });
    }
    let strategies = DeterministicStrategy::all();

    // Unknowns: 16 hull weights. Rows: normalization, p(1,1|ij) for the four
    // setting pairs, then each wing's two marginals. Together with
    // no-signalling these pin down the full behavior.
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(9);
    let mut rhs: Vec<f64> = Vec::with_capacity(9);
    a.push(vec![1.0; 16]);
    rhs.push(1.0);
    for i in 0..2 {
        for j in 0..2 {
            a.push(
                strategies
                    .iter()
                    .map(|s| f64::from(s.a[i] && s.b[j]))
                    .collect(),
            );
            rhs.push(b.dist(i, j).entries()[1][1]);
        }
    }
    for i in 0..2 {
        a.push(strategies.iter().map(|s| f64::from(s.a[i])).collect());
        rhs.push(b.dist(i, 0).marginal_a());
    }
    for j in 0..2 {
        a.push(strategies.iter().map(|s| f64::from(s.b[j])).collect());
        rhs.push(b.dist(0, j).marginal_b());
    }

    let solution = simplex::solve_feasibility(&a, &rhs, CHSH_TOL);
    let report = b.chsh_report();
    if solution.feasible {
        let mut weights = [0.0; 16];
        weights.copy_from_slice(&solution.x);
        Ok(PolytopeCertificate {
            member: true,
            weights: Some(weights),
            violated_facet: None,
        })
    } else {
        let (k, value) = report
            .values
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.abs().total_cmp(&y.abs()))
            .map(|(k, v)| (k, *v))
            .expect("eight values");
        Ok(PolytopeCertificate {
            member: false,
            weights: None,
            violated_facet: Some(FacetViolation {
                signs: SIGN_VARIANTS[k],
                value,
            }),
        })
    }
}

/// Result of the grid search plus local refinement for the largest quantum
/// |S|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshOptimum {
    pub settings: [Angle; 4],
    pub value: f64,
    /// Best value on the raw grid, before refinement.
    pub grid_value: f64,
}

fn quantum_max_abs(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    let e = |x: f64, y: f64| (2.0 * (x - y)).cos();
    let flat = [e(a1, b1), e(a1, b2), e(a2, b1), e(a2, b2)];
    let tot: f64 = flat.iter().sum();
    flat.iter()
        .map(|v| (tot - 2.0 * v).abs())
        .fold(0.0, f64::max)
}

/// Searches the settings grid of the given step for the largest quantum |S|,
/// then refines the best grid point by shrinking coordinate steps. Ties on
/// the grid go to the lexicographically smallest quadruple.
#[allow(clippy::needless_range_loop)]
pub fn quantum_chsh_optimum(grid_step: Angle) -> Result<ChshOptimum, BellError> {
    let h = grid_step.radians();
    if h <= 0.0 {
        return Err(BellError::NonPositiveGridStep);
    }
    let n = (PI / h).ceil() as usize;
    let points: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    let mut table = vec![vec![0.0f64; n]; n];
    for (i, &x) in points.iter().enumerate() {
        for (j, &y) in points.iter().enumerate() {
            table[i][j] = (2.0 * (x - y)).cos();
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut arg = [0usize; 4];
    for i1 in 0..n {
        for i2 in 0..n {
            for j1 in 0..n {
                let e11 = table[i1][j1];
                let e21 = table[i2][j1];
                for j2 in 0..n {
                    let e12 = table[i1][j2];
                    let e22 = table[i2][j2];
                    let tot = e11 + e12 + e21 + e22;
                    let v = (tot - 2.0 * e11)
                        .abs()
                        .max((tot - 2.0 * e12).abs())
                        .max((tot - 2.0 * e21).abs())
                        .max((tot - 2.0 * e22).abs());
                    if v > best {
                        best = v;
                        arg = [i1, i2, j1, j2];
                    }
                }
            }
        }
    }

    let grid_value = best;
    let mut x = [
        points[arg[0]],
        points[arg[1]],
        points[arg[2]],
        points[arg[3]],
    ];
    let mut value = grid_value;
    let mut step = h;
    while step > 1e-12 {
        let mut improved = false;
        for k in 0..4 {
            for dir in [-1.0, 1.0] {
                let mut cand = x;
                cand[k] += dir * step;
                let v = quantum_max_abs(cand[0], cand[1], cand[2], cand[3]);
                if v > value {
                    value = v;
                    x = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok(ChshOptimum {
        settings: [
            Angle::new(x[0]),
            Angle::new(x[1]),
            Angle::new(x[2]),
            Angle::new(x[3]),
        ],
        value,
        grid_value,
    })
}

/// Correlation table a model predicts at the settings quadruple
/// `[a1, a2, b1, b2]`.
pub fn model_correlation_table(
    m: &BeableModel,
    settings: [Angle; 4],
) -> Result<CorrelationTable, BellError> {
    let [a1, a2, b1, b2] = settings;
    let a = [a1, a2];
    let b = [b1, b2];
    let mut e = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let s = Settings::eprb(a[i], b[j]);
            let joint = crate::ontology::model_joint(m, &s)?
                .joint()
                .expect("two-photon prediction");
            e[i][j] = correlation(&joint);
        }
    }
    CorrelationTable::new([a1, a2, b1, b2], e)
}

/// Which cube a locality witness points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wing {
    A,
    B,
}

impl fmt::Display for Wing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wing::A => write!(f, "A"),
            Wing::B => write!(f, "B"),
        }
    }
}

/// A concrete screening-off failure: one λ, one own setting, two remote
/// contexts with different conditional outcome probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityWitness {
    pub wing: Wing,
    pub lambda: LambdaValue,
    pub own_setting: Angle,
    pub context_1: Settings,
    pub context_2: Settings,
    pub p1_in_context_1: f64,
    pub p1_in_context_2: f64,
}

impl fmt::Display for LocalityWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wing {} at setting {} with lambda {}: p1 = {} under ({}) but {} under ({})",
            self.wing,
            self.own_setting,
            self.lambda,
            self.p1_in_context_1,
            self.context_1,
            self.p1_in_context_2,
            self.context_2,
        )
    }
}

/// Result of the exact screening-off audit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityReport {
    pub passed: bool,
    pub max_deviation: f64,
    pub witness: Option<LocalityWitness>,
    pub lambdas_checked: usize,
    pub comparisons: usize,
}

struct LocalityScan {
    max_deviation: f64,
    witness: Option<LocalityWitness>,
    lambdas: BTreeSet<LambdaValue>,
    comparisons: usize,
}

impl LocalityScan {
    fn new() -> LocalityScan {
        LocalityScan {
            max_deviation: 0.0,
            witness: None,
            lambdas: BTreeSet::new(),
            comparisons: 0,
        }
    }

    /// Feeds one cell: a fixed (wing, own setting, λ) with the conditional
    /// outcome probability observed in each remote context.
    fn feed(
        &mut self,
        wing: Wing,
        own: Angle,
        lambda: &LambdaValue,
        contexts: &[(Settings, f64)],
    ) {
        self.lambdas.insert(lambda.clone());
        if contexts.len() < 2 {
            return;
        }
        self.comparisons += 1;
        let (lo, hi) = contexts.iter().skip(1).fold(
            (contexts[0], contexts[0]),
            |(lo, hi), &c| {
                (
                    if c.1 < lo.1 { c } else { lo },
                    if c.1 > hi.1 { c } else { hi },
                )
            },
        );
        let deviation = hi.1 - lo.1;
        if deviation > self.max_deviation {
            self.max_deviation = deviation;
            self.witness = Some(LocalityWitness {
                wing,
                lambda: lambda.clone(),
                own_setting: own,
                context_1: lo.0,
                context_2: hi.0,
                p1_in_context_1: lo.1,
                p1_in_context_2: hi.1,
            });
        }
    }

    fn finish(self) -> LocalityReport {
        let passed = self.max_deviation <= LOCALITY_TOL;
        LocalityReport {
            passed,
            max_deviation: self.max_deviation,
            witness: if passed { None } else { self.witness },
            lambdas_checked: self.lambdas.len(),
            comparisons: self.comparisons,
        }
    }
}

/// Exact screening-off audit: for every λ with positive weight and every
/// fixed own setting, the conditional outcome probability must not respond
/// to the remote context. Checked over the full settings grid; any deviation
/// above [`LOCALITY_TOL`] fails the model and is returned as a witness.
///
/// With per-λ product responses this is exactly the factorization of
/// P(a, b | settings, λ) into own-setting conditionals.
pub fn locality_check(m: &BeableModel, grid: &[Angle]) -> Result<LocalityReport, BellError> {
    if grid.len() < 2 {
        return Err(BellError::TooFewSettings);
    }
    let mut scan = LocalityScan::new();
    match m.experiment_kind() {
        ExperimentKind::Eprb => {
            // Wing B: fix its own β, vary the remote α.
            for &beta in grid {
                let mut cells: BTreeMap<LambdaValue, Vec<(Settings, f64)>> = BTreeMap::new();
                for &alpha in grid {
                    let s = Settings::eprb(alpha, beta);
                    for (lambda, w) in m.lambda_law(&s)? {
                        if w > 0.0 {
                            let p = m.prob_b1(&s, &lambda);
                            cells.entry(lambda).or_default().push((s, p));
                        }
                    }
                }
                for (lambda, contexts) in &cells {
                    scan.feed(Wing::B, beta, lambda, contexts);
                }
            }
            // Wing A: fix its own α, vary the remote β.
            for &alpha in grid {
                let mut cells: BTreeMap<LambdaValue, Vec<(Settings, f64)>> = BTreeMap::new();
                for &beta in grid {
                    let s = Settings::eprb(alpha, beta);
                    for (lambda, w) in m.lambda_law(&s)? {
                        if w > 0.0 {
                            let p = m.prob_a1(&s, &lambda).expect("two-photon model");
                            cells.entry(lambda).or_default().push((s, p));
                        }
                    }
                }
                for (lambda, contexts) in &cells {
                    scan.feed(Wing::A, alpha, lambda, contexts);
                }
            }
        }
        ExperimentKind::Seprb => {
            // Only cube B reads out; its remote context is (γ, c).
            for &beta in grid {
                let mut cells: BTreeMap<LambdaValue, Vec<(Settings, f64)>> = BTreeMap::new();
                for &gamma in grid {
                    for c in [InputChoice(false), InputChoice(true)] {
                        let s = Settings::seprb(gamma, beta, c);
                        for (lambda, w) in m.lambda_law(&s)? {
                            if w > 0.0 {
                                let p = m.prob_b1(&s, &lambda);
                                cells.entry(lambda).or_default().push((s, p));
                            }
                        }
                    }
                }
                for (lambda, contexts) in &cells {
                    scan.feed(Wing::B, beta, lambda, contexts);
                }
            }
        }
    }
    Ok(scan.finish())
}

/// How [`independence_test`] compares λ laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndependenceMode {
    /// Exact total-variation distance between the laws.
    Exact,
    /// Empirical frequencies from `n` seeded draws per settings record,
    /// judged against a union-bound threshold at confidence 99%.
    Empirical { n: u64, seed: u64 },
}

/// Total-variation distance for one settings pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependencePair {
    pub settings: (Settings, Settings),
    pub tv: f64,
    pub threshold: f64,
}

/// Result of the λ-law independence audit.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceReport {
    pub mode: IndependenceMode,
    pub pairs: Vec<IndependencePair>,
    pub max_tv: f64,
    /// True when some pair's distance exceeds its threshold.
    pub dependent: bool,
}

fn law_map(law: Vec<(LambdaValue, f64)>) -> BTreeMap<LambdaValue, f64> {
    let mut map = BTreeMap::new();
    for (lambda, w) in law {
        *map.entry(lambda).or_insert(0.0) += w;
    }
    map
}

fn total_variation(p: &BTreeMap<LambdaValue, f64>, q: &BTreeMap<LambdaValue, f64>) -> f64 {
    let mut keys: BTreeSet<&LambdaValue> = p.keys().collect();
    keys.extend(q.keys());
    0.5 * keys
        .into_iter()
        .map(|k| {
            (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
}

fn empirical_law(
    m: &BeableModel,
    s: &Settings,
    n: u64,
    seed: u64,
    substream: u64,
) -> Result<(BTreeMap<LambdaValue, f64>, usize), BellError> {
    let law = m.lambda_law(s)?;
    let mut cumulative = Vec::with_capacity(law.len());
    let mut acc = 0.0;
    for (_, w) in &law {
        acc += w;
        cumulative.push(acc);
    }
    let mut stream = RandomStream::substream(seed, substream);
    let mut counts: BTreeMap<LambdaValue, u64> = BTreeMap::new();
    for _ in 0..n {
        let u = stream.uniform();
        let mut idx = cumulative.partition_point(|&c| c <= u);
        if idx >= law.len() {
            idx = law.len() - 1;
        }
        *counts.entry(law[idx].0.clone()).or_insert(0) += 1;
    }
    let support = law.len();
    let freq = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n as f64))
        .collect();
    Ok((freq, support))
}

/// Compares the model's λ law across the given settings records, pairwise.
///
/// Exact mode flags any total-variation distance above [`LOCALITY_TOL`];
/// empirical mode draws `n` seeded samples per record and flags distances
/// above the Hoeffding union bound 3·sqrt(ln(2K/0.01)/(2n)) for support
/// size K.
pub fn independence_test(
    m: &BeableModel,
    settings: &[Settings],
    mode: IndependenceMode,
) -> Result<IndependenceReport, BellError> {
    if settings.len() < 2 {
        return Err(BellError::TooFewSettings);
    }
    let laws: Vec<(BTreeMap<LambdaValue, f64>, usize)> = match mode {
        IndependenceMode::Exact => settings
            .iter()
            .map(|s| {
                let map = law_map(m.lambda_law(s)?);
                let support = map.len();
                Ok((map, support))
            })
            .collect::<Result<_, BellError>>()?,
        IndependenceMode::Empirical { n, seed } => {
            if n < 1000 {
                return Err(BellError::SampleCountTooSmall { n });
            }
            settings
                .iter()
                .enumerate()
                .map(|(i, s)| empirical_law(m, s, n, seed, i as u64))
                .collect::<Result<_, BellError>>()?
        }
    };

    let mut pairs = Vec::new();
    let mut max_tv = 0.0f64;
    let mut dependent = false;
    for i in 0..settings.len() {
        for j in i + 1..settings.len() {
            let tv = total_variation(&laws[i].0, &laws[j].0);
            let threshold = match mode {
                IndependenceMode::Exact => LOCALITY_TOL,
                IndependenceMode::Empirical { n, .. } => {
                    let k = laws[i].1.max(laws[j].1) as f64;
                    3.0 * ((2.0 * k / 0.01).ln() / (2.0 * n as f64)).sqrt()
                }
            };
            if tv > threshold {
                dependent = true;
            }
            max_tv = max_tv.max(tv);
            pairs.push(IndependencePair {
                settings: (settings[i], settings[j]),
                tv,
                threshold,
            });
        }
    }
    Ok(IndependenceReport {
        mode,
        pairs,
        max_tv,
        dependent,
    })
}
