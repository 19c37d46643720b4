//! Derived analyses: seeded Monte Carlo estimation, operational signalling
//! margins, the post-selected agreement identity, and epistemic kernel scans
//! over a diagram's settings.

use std::fmt;

use rayon::prelude::*;

use crate::geometry::{recognize_canonical, GeometryError, SpacetimeDiagram};
use crate::model::{
    angle_grid, eprb_joint, seprb_conditional, Angle, ExperimentKind, InputChoice, Outcome,
};
use crate::ontology::{BeableModel, OntologyError, PreparedSampler, RunRecord, Settings};
use crate::stream::{RandomStream, CHUNK};

/// Analysis failures: bad sample counts, mismatched targets, or a scan that
/// does not apply to the given diagram.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    SampleCountTooSmall { n: u64 },
    InvalidTarget { kind: ExperimentKind },
    ScanAxisInapplicable { kind: ExperimentKind, axis: ScanAxis },
    Geometry(GeometryError),
    Ontology(OntologyError),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::SampleCountTooSmall { n } => {
                write!(f, "sample count {n} is below the minimum of 100")
            }
            AnalysisError::InvalidTarget { kind } => {
                write!(f, "target event is undefined for a {kind} model")
            }
            AnalysisError::ScanAxisInapplicable { kind, axis } => {
                write!(f, "{axis} scan does not apply to a {kind} diagram")
            }
            AnalysisError::Geometry(e) => write!(f, "{e}"),
            AnalysisError::Ontology(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<GeometryError> for AnalysisError {
    fn from(e: GeometryError) -> AnalysisError {
        AnalysisError::Geometry(e)
    }
}

impl From<OntologyError> for AnalysisError {
    fn from(e: OntologyError) -> AnalysisError {
        AnalysisError::Ontology(e)
    }
}

/// The event a Monte Carlo estimate counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetEvent {
    /// EPRB: A = B. SEPRB: B = c.
    Agreement,
    /// Transmission at cube B.
    OutcomeB1,
    /// Transmission at cube A (two-photon models only).
    OutcomeA1,
}

impl TargetEvent {
    fn hit(self, record: &RunRecord) -> bool {
        match self {
            TargetEvent::Agreement => match record.settings {
                Settings::Eprb { .. } => {
                    record.outcome_a.expect("two-photon run") == record.outcome_b
                }
                Settings::Seprb { c, .. } => record.outcome_b.bit() == c.bit(),
            },
            TargetEvent::OutcomeB1 => record.outcome_b == Outcome::Transmission,
            TargetEvent::OutcomeA1 => {
                record.outcome_a.expect("two-photon run") == Outcome::Transmission
            }
        }
    }
}

impl fmt::Display for TargetEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetEvent::Agreement => write!(f, "agreement"),
            TargetEvent::OutcomeB1 => write!(f, "b1"),
            TargetEvent::OutcomeA1 => write!(f, "a1"),
        }
    }
}

/// A frequency estimate with its binomial standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub ci95: (f64, f64),
}

impl Estimate {
    fn from_counts(hits: u64, n: u64) -> Estimate {
        let value = hits as f64 / n as f64;
        let stderr = (value * (1.0 - value) / n as f64).sqrt();
        let half = 1.96 * stderr;
        Estimate {
            value,
            stderr,
            n,
            ci95: (value - half, value + half),
        }
    }
}

/// Estimates the probability of `target` under the model at fixed settings,
/// from `n` seeded runs.
///
/// Work is split into fixed-size chunks, each drawn from its own substream
/// of `seed`, so the estimate is byte-identical for any number of worker
/// threads. Requires `n >= 100`.
pub fn mc_estimate(
    m: &BeableModel,
    settings: &Settings,
    target: TargetEvent,
    n: u64,
    seed: u64,
) -> Result<Estimate, AnalysisError> {
    if n < 100 {
        return Err(AnalysisError::SampleCountTooSmall { n });
    }
    if target == TargetEvent::OutcomeA1 && m.experiment_kind() == ExperimentKind::Seprb {
        return Err(AnalysisError::InvalidTarget {
            kind: m.experiment_kind(),
        });
    }
    // Surface law/settings mismatches before farming out the chunks.
    PreparedSampler::new(m, settings)?;
    let chunks = n.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let sampler = PreparedSampler::new(m, settings).expect("validated above");
            let mut stream = RandomStream::substream(seed, chunk);
            let len = CHUNK.min(n - chunk * CHUNK);
            let mut hits = 0u64;
            for _ in 0..len {
                if target.hit(&sampler.sample(&mut stream)) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(Estimate::from_counts(hits, n))
}

/// The largest shift the far side's choices could imprint on locally
/// observable statistics at the given settings.
///
/// For the single-photon experiment this is |Pr(B=1 | c=1) − Pr(B=1 | c=0)|,
/// which is 1 at aligned cubes: the input choice is readable at B. For the
/// two-photon experiment it is the largest change any remote setting on a
/// 64-point grid makes to the local marginal, which is exactly zero.
pub fn signalling_margin(settings: &Settings) -> f64 {
    match settings {
        Settings::Seprb { gamma, beta, .. } => {
            let p1 = seprb_conditional(*gamma, *beta, InputChoice(true)).p1();
            let p0 = seprb_conditional(*gamma, *beta, InputChoice(false)).p1();
            (p1 - p0).abs()
        }
        Settings::Eprb { beta, .. } => {
            let grid = angle_grid(64);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for alpha in grid {
                let m = eprb_joint(alpha, *beta).marginal_b();
                lo = lo.min(m);
                hi = hi.max(m);
            }
            hi - lo
        }
    }
}

/// The two agreement probabilities the reflection identifies: the
/// single-photon conditional Pr(B = c) at (γ, β) and the two-photon
/// Pr(A = B) at (α = γ, β). Both equal cos²(β − γ).
pub fn postselected_equivalence(gamma: Angle, beta: Angle) -> (f64, f64) {
    let seprb = seprb_conditional(gamma, beta, InputChoice(true)).p1();
    let eprb = eprb_joint(gamma, beta).pr_equal();
    (seprb, eprb)
}

/// Direction of an epistemic scan across a diagram's two open settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    /// Scan between settings separated in time (the two-photon wings as
    /// seen from the source's future).
    Timeward,
    /// Scan between settings separated across the meeting vertex (the
    /// single-photon cubes on either side of the mirror).
    Sideways,
}

impl fmt::Display for ScanAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScanAxis::Timeward => write!(f, "timeward"),
            ScanAxis::Sideways => write!(f, "sideways"),
        }
    }
}

/// Tolerance for the rank-one (product form) test on kernel grids.
pub const SEPARABILITY_TOL: f64 = 1e-9;

/// An agreement kernel tabulated on a settings grid, with its separability
/// verdict. A separable kernel factors as k(x, y) = f(x)·g(y); the scans of
/// either experiment produce cos²(x − y), which does not.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicKernel {
    axis: ScanAxis,
    grid: Vec<Angle>,
    values: Vec<Vec<f64>>,
    separable: bool,
}

impl EpistemicKernel {
    /// Tabulates `kernel` on `grid` and tests separability. Exposed so
    /// reference kernels (for example explicit product kernels) can be run
    /// through the same verdict.
    pub fn from_fn(
        axis: ScanAxis,
        grid: Vec<Angle>,
        kernel: impl Fn(Angle, Angle) -> f64,
    ) -> EpistemicKernel {
        let values: Vec<Vec<f64>> = grid
            .iter()
            .map(|&x| grid.iter().map(|&y| kernel(x, y)).collect())
            .collect();
        let separable = grid_is_separable(&values);
        EpistemicKernel {
            axis,
            grid,
            values,
            separable,
        }
    }

    pub fn axis(&self) -> ScanAxis {
        self.axis
    }

    pub fn grid(&self) -> &[Angle] {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn separable(&self) -> bool {
        self.separable
    }
}

/// True when every 2×2 minor vanishes within [`SEPARABILITY_TOL`], i.e. the
/// grid has numerical rank one and the kernel factors on it.
fn grid_is_separable(values: &[Vec<f64>]) -> bool {
    let n = values.len();
    for i in 0..n {
        for k in i + 1..n {
            for j in 0..n {
                for l in j + 1..n {
                    let minor = values[i][j] * values[k][l] - values[i][l] * values[k][j];
                    if minor.abs() > SEPARABILITY_TOL {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Scans the agreement probability of a canonical diagram's two open
/// settings along the given axis, on an 8-point grid.
///
/// The single-photon layout admits the sideways scan (its cubes sit on
/// either side of the mirror); the two-photon layout admits the timeward
/// scan. The other two combinations have no agreement observable to
/// tabulate and are rejected.
pub fn epistemic_scan(
    d: &SpacetimeDiagram,
    axis: ScanAxis,
) -> Result<EpistemicKernel, AnalysisError> {
    let info = recognize_canonical(d)?;
    let grid = angle_grid(8);
    match (info.kind, axis) {
        (ExperimentKind::Seprb, ScanAxis::Sideways) => {
            Ok(EpistemicKernel::from_fn(axis, grid, |gamma, beta| {
                seprb_conditional(gamma, beta, InputChoice(true)).p1()
            }))
        }
        (ExperimentKind::Eprb, ScanAxis::Timeward) => {
            Ok(EpistemicKernel::from_fn(axis, grid, |alpha, beta| {
                eprb_joint(alpha, beta).pr_equal()
            }))
        }
        (kind, axis) => Err(AnalysisError::ScanAxisInapplicable { kind, axis }),
    }
}
