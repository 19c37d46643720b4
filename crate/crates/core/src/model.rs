//! Exact predictions for the two polarization experiments and the small
//! probability types the rest of the crate is built on.
//!
//! The EPRB experiment sends one photon of an entangled pair to a polarizing
//! cube on each side; the SEPRB experiment injects a single photon past a
//! mirror so that the same pair of cubes is met one after the other. Both
//! are governed by the same cosine-squared law.

use std::f64::consts::PI;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Round-off budget for closed-form identities.
pub const ANALYTIC_TOL: f64 = 1e-12;

/// Which of the two experiment layouts a model or diagram describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Eprb,
    Seprb,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentKind::Eprb => write!(f, "eprb"),
            ExperimentKind::Seprb => write!(f, "seprb"),
        }
    }
}

/// A polarizer orientation, stored in radians and normalized to `[0, π)`.
///
/// Orientations are π-periodic: `Angle::new(x)` and `Angle::new(x + k·π)`
/// compare equal. The canonical representative makes `Eq`, `Ord`, and `Hash`
/// well defined, so angles can key λ values and sort setting lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(f64);

impl Angle {
    /// Normalizes `radians` into `[0, π)`. Returns `None` for non-finite input.
    pub fn try_new(radians: f64) -> Option<Angle> {
        if !radians.is_finite() {
            return None;
        }
        let mut r = radians.rem_euclid(PI);
        if r >= PI {
            r -= PI;
        }
        if r == 0.0 {
            r = 0.0;
        }
        Some(Angle(r))
    }

    /// Normalizes `radians` into `[0, π)`.
    ///
    /// # Panics
    /// Panics if `radians` is not finite.
    pub fn new(radians: f64) -> Angle {
        match Angle::try_new(radians) {
            Some(a) => a,
            None => panic!("angle must be finite, got {radians}"),
        }
    }

    pub fn from_degrees(degrees: f64) -> Angle {
        Angle::new(degrees.to_radians())
    }

    /// Canonical representative in `[0, π)`.
    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Signed difference of the canonical representatives. The π-periodic
    /// formulas downstream only ever use this inside `cos²`.
    pub fn minus(self, other: Angle) -> f64 {
        self.0 - other.0
    }

    /// Orientation of the perpendicular axis.
    pub fn perpendicular(self) -> Angle {
        Angle::new(self.0 + PI / 2.0)
    }

    pub(crate) fn bits(self) -> u64 {
        self.0.to_bits()
    }
}

impl Eq for Angle {}

impl PartialOrd for Angle {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Angle {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Canonical values are finite and share one zero, so total_cmp
        // agrees with the numeric order.
        self.0.total_cmp(&other.0)
    }
}

impl std::hash::Hash for Angle {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bits().hash(state);
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Angle, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Angle::try_new(v).ok_or_else(|| D::Error::custom(format!("angle must be finite, got {v}")))
    }
}

/// One wing's binary measurement result at a polarizing cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Reflection,
    Transmission,
}

impl Outcome {
    pub fn from_bit(bit: bool) -> Outcome {
        if bit {
            Outcome::Transmission
        } else {
            Outcome::Reflection
        }
    }

    /// 1 for transmission, 0 for reflection.
    pub fn bit(self) -> bool {
        matches!(self, Outcome::Transmission)
    }

    pub(crate) fn index(self) -> usize {
        self.bit() as usize
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit() as u8)
    }
}

/// The experimenter's input bit: which side the single photon is injected
/// from in the SEPRB layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputChoice(pub bool);

impl InputChoice {
    pub fn bit(self) -> bool {
        self.0
    }
}

impl fmt::Display for InputChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 as u8)
    }
}

/// Validation failure for a probability table.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionError {
    EntryOutOfRange { a: usize, b: usize, value: f64 },
    NotNormalized { sum: f64 },
    ProbabilityOutOfRange { value: f64 },
}

impl fmt::Display for DistributionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionError::EntryOutOfRange { a, b, value } => {
                write!(f, "joint entry ({a},{b}) out of range: {value}")
            }
            DistributionError::NotNormalized { sum } => {
                write!(f, "joint entries sum to {sum}, expected 1")
            }
            DistributionError::ProbabilityOutOfRange { value } => {
                write!(f, "probability out of range: {value}")
            }
        }
    }
}

impl std::error::Error for DistributionError {}

/// Joint distribution of a pair of binary outcomes at fixed settings.
///
/// `p[a][b]` is the probability that the first outcome has bit `a` and the
/// second bit `b`. Entries are non-negative and sum to 1 within
/// [`ANALYTIC_TOL`]; constructing the table is the only validation gate, so
/// every downstream consumer can treat it as total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointDistRepr", into = "JointDistRepr")]
pub struct JointDist {
    p: [[f64; 2]; 2],
}

#[derive(Serialize, Deserialize)]
struct JointDistRepr {
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
}

impl TryFrom<JointDistRepr> for JointDist {
    type Error = DistributionError;
    fn try_from(r: JointDistRepr) -> Result<JointDist, DistributionError> {
        JointDist::new([[r.p00, r.p01], [r.p10, r.p11]])
    }
}

impl From<JointDist> for JointDistRepr {
    fn from(d: JointDist) -> JointDistRepr {
        JointDistRepr {
            p00: d.p[0][0],
            p01: d.p[0][1],
            p10: d.p[1][0],
            p11: d.p[1][1],
        }
    }
}

impl JointDist {
    #[allow(clippy::needless_range_loop)]
    pub fn new(p: [[f64; 2]; 2]) -> Result<JointDist, DistributionError> {
        let mut sum = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let v = p[a][b];
                if !(v.is_finite() && (0.0..=1.0 + ANALYTIC_TOL).contains(&v)) {
                    return Err(DistributionError::EntryOutOfRange { a, b, value: v });
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > ANALYTIC_TOL {
            return Err(DistributionError::NotNormalized { sum });
        }
        Ok(JointDist { p })
    }

    pub fn prob(&self, a: Outcome, b: Outcome) -> f64 {
        self.p[a.index()][b.index()]
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.p
    }

    /// Pr(both outcomes equal).
    pub fn pr_equal(&self) -> f64 {
        self.p[0][0] + self.p[1][1]
    }

    /// Pr(first outcome = 1).
    pub fn marginal_a(&self) -> f64 {
        self.p[1][0] + self.p[1][1]
    }

    /// Pr(second outcome = 1).
    pub fn marginal_b(&self) -> f64 {
        self.p[0][1] + self.p[1][1]
    }

    /// Convex mixture `(1-w)·self + w·other`.
    #[allow(clippy::needless_range_loop)]
    pub fn mix(&self, other: &JointDist, w: f64) -> Result<JointDist, DistributionError> {
        if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
            return Err(DistributionError::ProbabilityOutOfRange { value: w });
        }
        let mut p = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                p[a][b] = (1.0 - w) * self.p[a][b] + w * other.p[a][b];
            }
        }
        JointDist::new(p)
    }
}

/// Distribution of a single binary outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BernoulliRepr", into = "BernoulliRepr")]
pub struct Bernoulli {
    p1: f64,
}

#[derive(Serialize, Deserialize)]
struct BernoulliRepr {
    p1: f64,
}

impl TryFrom<BernoulliRepr> for Bernoulli {
    type Error = DistributionError;
    fn try_from(r: BernoulliRepr) -> Result<Bernoulli, DistributionError> {
        Bernoulli::new(r.p1)
    }
}

impl From<Bernoulli> for BernoulliRepr {
    fn from(b: Bernoulli) -> BernoulliRepr {
        BernoulliRepr { p1: b.p1 }
    }
}

impl Bernoulli {
    pub fn new(p1: f64) -> Result<Bernoulli, DistributionError> {
        if !(p1.is_finite() && (-ANALYTIC_TOL..=1.0 + ANALYTIC_TOL).contains(&p1)) {
            return Err(DistributionError::ProbabilityOutOfRange { value: p1 });
        }
        Ok(Bernoulli {
            p1: p1.clamp(0.0, 1.0),
        })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

fn cos_sq(delta: f64) -> f64 {
    let c = delta.cos();
    c * c
}

/// Joint outcome distribution of the two-photon experiment at polarizer
/// orientations `alpha` and `beta`.
///
/// Pr(A = B) = cos²(α − β), and each wing's marginal is exactly 1/2: the
/// off-diagonal entry is computed as `0.5 - diag`, so every row and column
/// sums to 0.5 without round-off.
pub fn eprb_joint(alpha: Angle, beta: Angle) -> JointDist {
    let diag = 0.5 * cos_sq(alpha.minus(beta));
    let off = 0.5 - diag;
    JointDist {
        p: [[diag, off], [off, diag]],
    }
}

/// Distribution of the outcome at the second cube in the single-photon
/// experiment, given the input choice `c` and the cube orientations.
///
/// Pr(B = c) = cos²(β − γ) for both values of `c`: injecting from the other
/// side prepares the perpendicular polarization, which exactly complements
/// the transmission probability.
pub fn seprb_conditional(gamma: Angle, beta: Angle, c: InputChoice) -> Bernoulli {
    let agree = cos_sq(beta.minus(gamma));
    let p1 = if c.bit() { agree } else { 1.0 - agree };
    Bernoulli { p1 }
}

/// Transmitted intensity fraction for a beam polarized along `theta_in`
/// meeting an ideal polarizer at `theta_pol`.
pub fn malus_intensity(theta_in: Angle, theta_pol: Angle) -> f64 {
    cos_sq(theta_in.minus(theta_pol))
}

/// The ±1-valued correlator E = Pr(equal) − Pr(unequal).
///
/// Total on any [`JointDist`]: tables that violate the distribution
/// invariants are rejected at construction.
pub fn correlation(d: &JointDist) -> f64 {
    let p = d.entries();
    p[0][0] + p[1][1] - p[0][1] - p[1][0]
}

/// Evenly spaced orientation grid `k·π/n` for `k` in `0..n`.
pub fn angle_grid(n: usize) -> Vec<Angle> {
    (0..n).map(|k| Angle::new(k as f64 * PI / n as f64)).collect()
}
