//! Spacetime diagrams of the two experiment layouts and the reflection that
//! carries one onto the other.
//!
//! Diagrams live in a 1+1-dimensional plane with exact rational coordinates,
//! so the transform's invariants are checked without tolerances. Photon
//! worldlines are lightlike: every segment satisfies |Δx| = |Δt|.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::model::{Angle, ExperimentKind};

pub type Coord = Rational64;

/// Formats a rational as `n` or `n/d`.
pub fn format_rational(r: Coord) -> String {
    if *r.denom() == 1 {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `n` or `n/d` into a rational.
pub fn parse_rational(s: &str) -> Result<Coord, GeometryError> {
    let bad = || GeometryError::Parse(format!("invalid rational: {s:?}"));
    let mut parts = s.splitn(2, '/');
    let numer: i64 = parts
        .next()
        .ok_or_else(bad)?
        .trim()
        .parse()
        .map_err(|_| bad())?;
    let denom: i64 = match parts.next() {
        Some(d) => d.trim().parse().map_err(|_| bad())?,
        None => 1,
    };
    if denom == 0 {
        return Err(bad());
    }
    Ok(Rational64::new(numer, denom))
}

/// A point in the diagram plane: spatial coordinate `x`, time coordinate `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point {
    pub x: Coord,
    pub t: Coord,
}

impl Point {
    pub fn new(x: Coord, t: Coord) -> Point {
        Point { x, t }
    }

    fn translated(self, dx: Coord, dt: Coord) -> Point {
        Point {
            x: self.x + dx,
            t: self.t + dt,
        }
    }

    /// Point reflection through `center`.
    fn reflected(self, center: Point) -> Point {
        Point {
            x: center.x + center.x - self.x,
            t: center.t + center.t - self.t,
        }
    }

    fn key(self) -> (Coord, Coord) {
        (self.x, self.t)
    }
}

impl PartialOrd for Point {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Point {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", format_rational(self.x), format_rational(self.t))
    }
}

type PointRepr = (String, String);

fn point_to_repr(p: Point) -> PointRepr {
    (format_rational(p.x), format_rational(p.t))
}

fn point_from_repr(r: &PointRepr) -> Result<Point, GeometryError> {
    Ok(Point::new(parse_rational(&r.0)?, parse_rational(&r.1)?))
}

/// The role a vertex plays in the experiment.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    PolarizingCube,
    Mirror,
    Source,
    Detector,
    Injection,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DeviceKind::PolarizingCube => "polarizing-cube",
            DeviceKind::Mirror => "mirror",
            DeviceKind::Source => "source",
            DeviceKind::Detector => "detector",
            DeviceKind::Injection => "injection",
        };
        write!(f, "{name}")
    }
}

/// A device placed at a diagram vertex. Only polarizing cubes carry an
/// orientation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviceRepr", into = "DeviceRepr")]
pub struct Device {
    kind: DeviceKind,
    label: String,
    position: Point,
    setting: Option<Angle>,
}

#[derive(Serialize, Deserialize)]
struct DeviceRepr {
    kind: DeviceKind,
    label: String,
    x: String,
    t: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    setting: Option<Angle>,
}

impl TryFrom<DeviceRepr> for Device {
    type Error = GeometryError;
    fn try_from(r: DeviceRepr) -> Result<Device, GeometryError> {
        let position = Point::new(parse_rational(&r.x)?, parse_rational(&r.t)?);
        Device::new(r.kind, r.label, position, r.setting)
    }
}

impl From<Device> for DeviceRepr {
    fn from(d: Device) -> DeviceRepr {
        DeviceRepr {
            kind: d.kind,
            label: d.label,
            x: format_rational(d.position.x),
            t: format_rational(d.position.t),
            setting: d.setting,
        }
    }
}

impl Device {
    pub fn new(
        kind: DeviceKind,
        label: impl Into<String>,
        position: Point,
        setting: Option<Angle>,
    ) -> Result<Device, GeometryError> {
        let label = label.into();
        match (kind, setting.is_some()) {
            (DeviceKind::PolarizingCube, false) => {
                return Err(GeometryError::CubeNeedsSetting { label })
            }
            (DeviceKind::PolarizingCube, true) => {}
            (_, true) => return Err(GeometryError::SettingOnNonCube { label }),
            (_, false) => {}
        }
        Ok(Device {
            kind,
            label,
            position,
            setting,
        })
    }

    pub fn cube(label: impl Into<String>, position: Point, setting: Angle) -> Device {
        Device {
            kind: DeviceKind::PolarizingCube,
            label: label.into(),
            position,
            setting: Some(setting),
        }
    }

    pub fn kind(&self) -> DeviceKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn position(&self) -> Point {
        self.position
    }

    pub fn setting(&self) -> Option<Angle> {
        self.setting
    }
}

/// A lightlike photon worldline between two device vertices, oriented so that
/// `from.t <= to.t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "SegmentRepr", into = "SegmentRepr")]
pub struct WorldlineSegment {
    from: Point,
    to: Point,
}

#[derive(Serialize, Deserialize)]
struct SegmentRepr {
    from: PointRepr,
    to: PointRepr,
}

impl TryFrom<SegmentRepr> for WorldlineSegment {
    type Error = GeometryError;
    fn try_from(r: SegmentRepr) -> Result<WorldlineSegment, GeometryError> {
        WorldlineSegment::new(point_from_repr(&r.from)?, point_from_repr(&r.to)?)
    }
}

impl From<WorldlineSegment> for SegmentRepr {
    fn from(s: WorldlineSegment) -> SegmentRepr {
        SegmentRepr {
            from: point_to_repr(s.from),
            to: point_to_repr(s.to),
        }
    }
}

impl WorldlineSegment {
    pub fn new(a: Point, b: Point) -> Result<WorldlineSegment, GeometryError> {
        if a == b {
            return Err(GeometryError::ZeroLengthSegment(a));
        }
        let dx = if a.x >= b.x { a.x - b.x } else { b.x - a.x };
        let dt = if a.t >= b.t { a.t - b.t } else { b.t - a.t };
        if dx != dt {
            return Err(GeometryError::NotLightlike { a, b });
        }
        let (from, to) = if a.t <= b.t { (a, b) } else { (b, a) };
        Ok(WorldlineSegment { from, to })
    }

    pub fn from(&self) -> Point {
        self.from
    }

    pub fn to(&self) -> Point {
        self.to
    }

    /// Segment length in diagram units (|Δt|, which equals |Δx|).
    pub fn length(&self) -> Coord {
        self.to.t - self.from.t
    }
}

/// The post-selection rule applied to a diagram's outcome records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Postselection {
    AEqualsC,
}

/// Geometry failures: invalid construction, parse errors, or a diagram that
/// is not in the canonical form an operation requires.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    CubeNeedsSetting { label: String },
    SettingOnNonCube { label: String },
    ZeroLengthSegment(Point),
    NotLightlike { a: Point, b: Point },
    EmptyDiagram,
    DanglingEndpoint(Point),
    Disconnected,
    NonPositiveArm,
    MissingSetting(&'static str),
    NotCanonical(String),
    PostselectionRequired,
    AlreadyPostselected,
    Parse(String),
    Format(String),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::CubeNeedsSetting { label } => {
                write!(f, "polarizing cube {label:?} has no setting")
            }
            GeometryError::SettingOnNonCube { label } => {
                write!(f, "device {label:?} is not a cube but carries a setting")
            }
            GeometryError::ZeroLengthSegment(p) => {
                write!(f, "zero-length segment at {p}")
            }
            GeometryError::NotLightlike { a, b } => {
                write!(f, "segment {a} to {b} is not lightlike")
            }
            GeometryError::EmptyDiagram => write!(f, "diagram has no devices"),
            GeometryError::DanglingEndpoint(p) => {
                write!(f, "segment endpoint {p} touches no device")
            }
            GeometryError::Disconnected => write!(f, "device graph is disconnected"),
            GeometryError::NonPositiveArm => write!(f, "arm length must be positive"),
            GeometryError::MissingSetting(name) => {
                write!(f, "setting map is missing {name}")
            }
            GeometryError::NotCanonical(why) => write!(f, "not a canonical diagram: {why}"),
            GeometryError::PostselectionRequired => {
                write!(f, "transform requires a post-selected diagram")
            }
            GeometryError::AlreadyPostselected => write!(f, "diagram is already post-selected"),
            GeometryError::Parse(msg) => write!(f, "parse error: {msg}"),
            GeometryError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for GeometryError {}

/// A validated spacetime diagram: devices at vertices, lightlike worldline
/// segments between them, and an optional post-selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiagramRepr", into = "DiagramRepr")]
pub struct SpacetimeDiagram {
    kind: ExperimentKind,
    devices: Vec<Device>,
    segments: Vec<WorldlineSegment>,
    postselection: Option<Postselection>,
}

#[derive(Serialize, Deserialize)]
struct DiagramRepr {
    kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    postselection: Option<Postselection>,
    devices: Vec<Device>,
    segments: Vec<WorldlineSegment>,
}

impl TryFrom<DiagramRepr> for SpacetimeDiagram {
    type Error = GeometryError;
    fn try_from(r: DiagramRepr) -> Result<SpacetimeDiagram, GeometryError> {
        SpacetimeDiagram::new(r.kind, r.devices, r.segments, r.postselection)
    }
}

impl From<SpacetimeDiagram> for DiagramRepr {
    fn from(d: SpacetimeDiagram) -> DiagramRepr {
        DiagramRepr {
            kind: d.kind,
            postselection: d.postselection,
            devices: d.devices,
            segments: d.segments,
        }
    }
}

impl SpacetimeDiagram {
    /// Validates and assembles a diagram: devices must be present, every
    /// segment endpoint must land on a device vertex, and the vertex graph
    /// must be connected.
    pub fn new(
        kind: ExperimentKind,
        devices: Vec<Device>,
        segments: Vec<WorldlineSegment>,
        postselection: Option<Postselection>,
    ) -> Result<SpacetimeDiagram, GeometryError> {
        if devices.is_empty() {
            return Err(GeometryError::EmptyDiagram);
        }
        let vertices: BTreeSet<Point> = devices.iter().map(|d| d.position).collect();
        for seg in &segments {
            for p in [seg.from, seg.to] {
                if !vertices.contains(&p) {
                    return Err(GeometryError::DanglingEndpoint(p));
                }
            }
        }
        let mut index: BTreeMap<Point, usize> = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            index.insert(*v, i);
        }
        let mut component: Vec<usize> = (0..vertices.len()).collect();
        fn root(component: &mut [usize], mut i: usize) -> usize {
            while component[i] != i {
                component[i] = component[component[i]];
                i = component[i];
            }
            i
        }
        for seg in &segments {
            let a = root(&mut component, index[&seg.from]);
            let b = root(&mut component, index[&seg.to]);
            component[a] = b;
        }
        let first = root(&mut component, 0);
        for i in 1..vertices.len() {
            if root(&mut component, i) != first {
                return Err(GeometryError::Disconnected);
            }
        }
        Ok(SpacetimeDiagram {
            kind,
            devices,
            segments,
            postselection,
        })
    }

    pub fn kind(&self) -> ExperimentKind {
        self.kind
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn segments(&self) -> &[WorldlineSegment] {
        &self.segments
    }

    pub fn postselection(&self) -> Option<Postselection> {
        self.postselection
    }

    /// The same diagram with every coordinate shifted by `(dx, dt)`.
    pub fn translated(&self, dx: Coord, dt: Coord) -> SpacetimeDiagram {
        let devices = self
            .devices
            .iter()
            .map(|d| Device {
                position: d.position.translated(dx, dt),
                ..d.clone()
            })
            .collect();
        let segments = self
            .segments
            .iter()
            .map(|s| WorldlineSegment {
                from: s.from.translated(dx, dt),
                to: s.to.translated(dx, dt),
            })
            .collect();
        SpacetimeDiagram {
            kind: self.kind,
            devices,
            segments,
            postselection: self.postselection,
        }
    }

    pub fn to_toml_string(&self) -> Result<String, GeometryError> {
        toml::to_string(self).map_err(|e| GeometryError::Format(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<SpacetimeDiagram, GeometryError> {
        toml::from_str(s).map_err(|e| GeometryError::Parse(e.to_string()))
    }
}

/// Named orientation settings for building canonical diagrams.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SettingMap {
    pub alpha: Option<Angle>,
    pub beta: Option<Angle>,
    pub gamma: Option<Angle>,
}

impl SettingMap {
    pub fn eprb(alpha: Angle, beta: Angle) -> SettingMap {
        SettingMap {
            alpha: Some(alpha),
            beta: Some(beta),
            gamma: None,
        }
    }

    pub fn seprb(gamma: Angle, beta: Angle) -> SettingMap {
        SettingMap {
            alpha: None,
            beta: Some(beta),
            gamma: Some(gamma),
        }
    }
}

/// Builds the canonical diagram of either experiment with the meeting vertex
/// at the origin and arms of the given length.
///
/// EPRB: a source at the origin emits two photons reaching cube A at
/// `(-arm, arm)` and cube B at `(arm, arm)`. SEPRB: a photon injected at
/// `(arm, -arm)` passes cube C, reflects off the mirror at the origin, and
/// reaches cube B at `(arm, arm)`.
pub fn canonical_diagram(
    kind: ExperimentKind,
    settings: &SettingMap,
    arm: Coord,
) -> Result<SpacetimeDiagram, GeometryError> {
    if arm <= Rational64::from_integer(0) {
        return Err(GeometryError::NonPositiveArm);
    }
    let beta = settings.beta.ok_or(GeometryError::MissingSetting("beta"))?;
    let origin = Point::new(Rational64::from_integer(0), Rational64::from_integer(0));
    match kind {
        ExperimentKind::Eprb => {
            let alpha = settings.alpha.ok_or(GeometryError::MissingSetting("alpha"))?;
            let left = Point::new(-arm, arm);
            let right = Point::new(arm, arm);
            SpacetimeDiagram::new(
                kind,
                vec![
                    Device::new(DeviceKind::Source, "S", origin, None)?,
                    Device::cube("A", left, alpha),
                    Device::cube("B", right, beta),
                ],
                vec![
                    WorldlineSegment::new(origin, left)?,
                    WorldlineSegment::new(origin, right)?,
                ],
                None,
            )
        }
        ExperimentKind::Seprb => {
            let gamma = settings.gamma.ok_or(GeometryError::MissingSetting("gamma"))?;
            let lower = Point::new(arm, -arm);
            let upper = Point::new(arm, arm);
            SpacetimeDiagram::new(
                kind,
                vec![
                    Device::new(DeviceKind::Mirror, "M", origin, None)?,
                    Device::cube("C", lower, gamma),
                    Device::new(DeviceKind::Injection, "I", lower, None)?,
                    Device::cube("B", upper, beta),
                ],
                vec![
                    WorldlineSegment::new(lower, origin)?,
                    WorldlineSegment::new(origin, upper)?,
                ],
                None,
            )
        }
    }
}

/// Adds the coincidence detector and the A = C post-selection rule to a
/// canonical EPRB diagram.
pub fn postselect(d: &SpacetimeDiagram) -> Result<SpacetimeDiagram, GeometryError> {
    if d.postselection.is_some() {
        return Err(GeometryError::AlreadyPostselected);
    }
    let info = recognize_canonical(d)?;
    if info.kind != ExperimentKind::Eprb {
        return Err(GeometryError::NotCanonical(
            "post-selection applies to the two-photon layout".into(),
        ));
    }
    let left = Point::new(info.vertex.x - info.arm, info.vertex.t + info.arm);
    let mut devices = d.devices.clone();
    devices.push(Device::new(DeviceKind::Detector, "D", left, None)?);
    SpacetimeDiagram::new(
        d.kind,
        devices,
        d.segments.clone(),
        Some(Postselection::AEqualsC),
    )
}

/// What a canonical diagram was recognized as.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalInfo {
    pub kind: ExperimentKind,
    pub arm: Coord,
    /// Mirror (SEPRB) or source (EPRB) position.
    pub vertex: Point,
    /// γ for SEPRB, α for EPRB.
    pub first_setting: Angle,
    pub beta: Angle,
    pub postselected: bool,
}

fn device_counts(d: &SpacetimeDiagram) -> BTreeMap<DeviceKind, usize> {
    let mut counts = BTreeMap::new();
    for dev in &d.devices {
        *counts.entry(dev.kind).or_insert(0) += 1;
    }
    counts
}

fn single(d: &SpacetimeDiagram, kind: DeviceKind) -> Result<&Device, GeometryError> {
    let mut found = None;
    for dev in &d.devices {
        if dev.kind == kind {
            if found.is_some() {
                return Err(GeometryError::NotCanonical(format!("more than one {kind}")));
            }
            found = Some(dev);
        }
    }
    found.ok_or_else(|| GeometryError::NotCanonical(format!("no {kind}")))
}

fn expect_segments(
    d: &SpacetimeDiagram,
    expected: [WorldlineSegment; 2],
) -> Result<(), GeometryError> {
    let mut actual: Vec<WorldlineSegment> = d.segments.to_vec();
    let mut wanted = expected.to_vec();
    actual.sort();
    wanted.sort();
    if actual != wanted {
        return Err(GeometryError::NotCanonical(
            "worldline segments do not match the canonical layout".into(),
        ));
    }
    Ok(())
}

/// Recognizes a (possibly translated) canonical diagram and reports its
/// parameters. Rejects anything structurally different.
pub fn recognize_canonical(d: &SpacetimeDiagram) -> Result<CanonicalInfo, GeometryError> {
    let counts = device_counts(d);
    let cubes: Vec<&Device> = d
        .devices
        .iter()
        .filter(|dev| dev.kind == DeviceKind::PolarizingCube)
        .collect();
    if cubes.len() != 2 {
        return Err(GeometryError::NotCanonical(format!(
            "expected two polarizing cubes, found {}",
            cubes.len()
        )));
    }
    match d.kind {
        ExperimentKind::Seprb => {
            if d.postselection.is_some() {
                return Err(GeometryError::NotCanonical(
                    "single-photon layout carries a post-selection rule".into(),
                ));
            }
            for (kind, want) in [
                (DeviceKind::Mirror, 1),
                (DeviceKind::Injection, 1),
                (DeviceKind::Source, 0),
                (DeviceKind::Detector, 0),
            ] {
                if counts.get(&kind).copied().unwrap_or(0) != want {
                    return Err(GeometryError::NotCanonical(format!(
                        "expected {want} {kind} device(s)"
                    )));
                }
            }
            let mirror = single(d, DeviceKind::Mirror)?;
            let injection = single(d, DeviceKind::Injection)?;
            let v = mirror.position;
            let (lower, upper) = if cubes[0].position.t < v.t {
                (cubes[0], cubes[1])
            } else {
                (cubes[1], cubes[0])
            };
            let arm = upper.position.t - v.t;
            if arm <= Rational64::from_integer(0)
                || upper.position != Point::new(v.x + arm, v.t + arm)
                || lower.position != Point::new(v.x + arm, v.t - arm)
            {
                return Err(GeometryError::NotCanonical(
                    "cubes are not on the canonical lightlike arms".into(),
                ));
            }
            if injection.position != lower.position {
                return Err(GeometryError::NotCanonical(
                    "injection point is not at the first cube".into(),
                ));
            }
            expect_segments(
                d,
                [
                    WorldlineSegment::new(lower.position, v)?,
                    WorldlineSegment::new(v, upper.position)?,
                ],
            )?;
            Ok(CanonicalInfo {
                kind: d.kind,
                arm,
                vertex: v,
                first_setting: lower.setting.expect("cube carries a setting"),
                beta: upper.setting.expect("cube carries a setting"),
                postselected: false,
            })
        }
        ExperimentKind::Eprb => {
            let postselected = d.postselection.is_some();
            let want_detectors = usize::from(postselected);
            for (kind, want) in [
                (DeviceKind::Source, 1),
                (DeviceKind::Detector, want_detectors),
                (DeviceKind::Mirror, 0),
                (DeviceKind::Injection, 0),
            ] {
                if counts.get(&kind).copied().unwrap_or(0) != want {
                    return Err(GeometryError::NotCanonical(format!(
                        "expected {want} {kind} device(s)"
                    )));
                }
            }
            let source = single(d, DeviceKind::Source)?;
            let v = source.position;
            let (left, right) = if cubes[0].position.x < v.x {
                (cubes[0], cubes[1])
            } else {
                (cubes[1], cubes[0])
            };
            let arm = right.position.x - v.x;
            if arm <= Rational64::from_integer(0)
                || right.position != Point::new(v.x + arm, v.t + arm)
                || left.position != Point::new(v.x - arm, v.t + arm)
            {
                return Err(GeometryError::NotCanonical(
                    "cubes are not on the canonical lightlike arms".into(),
                ));
            }
            if postselected {
                let detector = single(d, DeviceKind::Detector)?;
                if detector.position != left.position {
                    return Err(GeometryError::NotCanonical(
                        "coincidence detector is not at cube A".into(),
                    ));
                }
            }
            expect_segments(
                d,
                [
                    WorldlineSegment::new(v, left.position)?,
                    WorldlineSegment::new(v, right.position)?,
                ],
            )?;
            Ok(CanonicalInfo {
                kind: d.kind,
                arm,
                vertex: v,
                first_setting: left.setting.expect("cube carries a setting"),
                beta: right.setting.expect("cube carries a setting"),
                postselected,
            })
        }
    }
}

/// Applies the S transform: flip the diagram region on the far side of the
/// meeting vertex left-to-right and then future-to-past, which is a point
/// reflection through that vertex, and exchange the device roles it pivots
/// on (mirror with source, injection with detector).
///
/// A canonical SEPRB diagram maps to the canonical post-selected EPRB
/// diagram and vice versa; applying the transform twice returns the original
/// diagram exactly. The EPRB direction requires the post-selected form,
/// since the inverse image of the injection point is the coincidence
/// detector.
pub fn s_transform(d: &SpacetimeDiagram) -> Result<SpacetimeDiagram, GeometryError> {
    let info = recognize_canonical(d)?;
    let v = info.vertex;
    match info.kind {
        ExperimentKind::Seprb => {
            let in_region = |p: Point| p.t <= v.t;
            let devices = d
                .devices
                .iter()
                .map(|dev| {
                    let flip = in_region(dev.position);
                    let position = if flip {
                        dev.position.reflected(v)
                    } else {
                        dev.position
                    };
                    let (kind, label) = match dev.kind {
                        DeviceKind::Mirror => (DeviceKind::Source, "S".to_string()),
                        DeviceKind::Injection => (DeviceKind::Detector, "D".to_string()),
                        DeviceKind::PolarizingCube if flip => {
                            (DeviceKind::PolarizingCube, "A".to_string())
                        }
                        other => (other, dev.label.clone()),
                    };
                    Device {
                        kind,
                        label,
                        position,
                        setting: dev.setting,
                    }
                })
                .collect();
            let segments = reflect_segments(&d.segments, v, in_region)?;
            SpacetimeDiagram::new(
                ExperimentKind::Eprb,
                devices,
                segments,
                Some(Postselection::AEqualsC),
            )
        }
        ExperimentKind::Eprb => {
            if !info.postselected {
                return Err(GeometryError::PostselectionRequired);
            }
            let in_region = |p: Point| p.x <= v.x;
            let devices = d
                .devices
                .iter()
                .map(|dev| {
                    let flip = in_region(dev.position);
                    let position = if flip {
                        dev.position.reflected(v)
                    } else {
                        dev.position
                    };
                    let (kind, label) = match dev.kind {
                        DeviceKind::Source => (DeviceKind::Mirror, "M".to_string()),
                        DeviceKind::Detector => (DeviceKind::Injection, "I".to_string()),
                        DeviceKind::PolarizingCube if flip => {
                            (DeviceKind::PolarizingCube, "C".to_string())
                        }
                        other => (other, dev.label.clone()),
                    };
                    Device {
                        kind,
                        label,
                        position,
                        setting: dev.setting,
                    }
                })
                .collect();
            let segments = reflect_segments(&d.segments, v, in_region)?;
            SpacetimeDiagram::new(ExperimentKind::Seprb, devices, segments, None)
        }
    }
}

fn reflect_segments(
    segments: &[WorldlineSegment],
    v: Point,
    in_region: impl Fn(Point) -> bool,
) -> Result<Vec<WorldlineSegment>, GeometryError> {
    segments
        .iter()
        .map(|s| {
            let map = |p: Point| if in_region(p) { p.reflected(v) } else { p };
            WorldlineSegment::new(map(s.from), map(s.to))
        })
        .collect()
}

type DeviceKey = (Coord, Coord, DeviceKind, Option<u64>);
type SegmentKey = ((Coord, Coord), (Coord, Coord));

fn canonical_key(d: &SpacetimeDiagram) -> (Vec<DeviceKey>, Vec<SegmentKey>) {
    let anchor = d
        .devices
        .iter()
        .map(|dev| dev.position)
        .min()
        .expect("validated diagrams have devices");
    let mut devices: Vec<_> = d
        .devices
        .iter()
        .map(|dev| {
            let p = dev.position;
            (
                p.x - anchor.x,
                p.t - anchor.t,
                dev.kind,
                dev.setting.map(|a| a.bits()),
            )
        })
        .collect();
    devices.sort();
    let mut segments: Vec<_> = d
        .segments
        .iter()
        .map(|s| {
            (
                (s.from.x - anchor.x, s.from.t - anchor.t),
                (s.to.x - anchor.x, s.to.t - anchor.t),
            )
        })
        .collect();
    segments.sort();
    (devices, segments)
}

/// Equality of diagrams up to a global translation. Device labels are
/// excluded; kinds, settings, relative geometry, and the post-selection rule
/// all count.
pub fn isomorphic(d1: &SpacetimeDiagram, d2: &SpacetimeDiagram) -> bool {
    d1.kind == d2.kind
        && d1.postselection == d2.postselection
        && canonical_key(d1) == canonical_key(d2)
}

/// The coordinate-free summary the transform must preserve: the multiset of
/// segment lengths, the multiset of device kinds, and the multiset of
/// polarizer settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionProxy {
    segment_lengths: Vec<Coord>,
    vertex_types: Vec<DeviceKind>,
    polarizer_settings: Vec<Angle>,
}

impl ActionProxy {
    pub fn segment_lengths(&self) -> &[Coord] {
        &self.segment_lengths
    }

    pub fn vertex_types(&self) -> &[DeviceKind] {
        &self.vertex_types
    }

    pub fn polarizer_settings(&self) -> &[Angle] {
        &self.polarizer_settings
    }

    /// Equality up to the role exchange the transform performs at the
    /// meeting vertex: mirror ↔ source and injection ↔ detector. Segment
    /// lengths and polarizer settings must match exactly.
    pub fn equivalent_up_to_roles(&self, other: &ActionProxy) -> bool {
        fn role(kind: DeviceKind) -> u8 {
            match kind {
                DeviceKind::PolarizingCube => 0,
                DeviceKind::Mirror | DeviceKind::Source => 1,
                DeviceKind::Injection | DeviceKind::Detector => 2,
            }
        }
        let mut a: Vec<u8> = self.vertex_types.iter().map(|&k| role(k)).collect();
        let mut b: Vec<u8> = other.vertex_types.iter().map(|&k| role(k)).collect();
        a.sort_unstable();
        b.sort_unstable();
        self.segment_lengths == other.segment_lengths
            && self.polarizer_settings == other.polarizer_settings
            && a == b
    }
}

/// Computes the action proxy of a diagram.
pub fn action_proxy(d: &SpacetimeDiagram) -> ActionProxy {
    let mut segment_lengths: Vec<Coord> = d.segments.iter().map(|s| s.length()).collect();
    segment_lengths.sort();
    let mut vertex_types: Vec<DeviceKind> = d.devices.iter().map(|dev| dev.kind).collect();
    vertex_types.sort();
    let mut polarizer_settings: Vec<Angle> =
        d.devices.iter().filter_map(|dev| dev.setting).collect();
    polarizer_settings.sort();
    ActionProxy {
        segment_lengths,
        vertex_types,
        polarizer_settings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> Coord {
        Rational64::new(n, d)
    }

    fn int(n: i64) -> Coord {
        Rational64::from_integer(n)
    }

    fn canonical_seprb(gamma: f64, beta: f64, arm: Coord) -> SpacetimeDiagram {
        canonical_diagram(
            ExperimentKind::Seprb,
            &SettingMap::seprb(Angle::new(gamma), Angle::new(beta)),
            arm,
        )
        .unwrap()
    }

    fn canonical_eprb(alpha: f64, beta: f64, arm: Coord) -> SpacetimeDiagram {
        canonical_diagram(
            ExperimentKind::Eprb,
            &SettingMap::eprb(Angle::new(alpha), Angle::new(beta)),
            arm,
        )
        .unwrap()
    }

    #[test]
    fn canonical_seprb_has_expected_devices() {
        let d = canonical_seprb(0.2, 0.7, int(1));
        assert_eq!(d.devices().len(), 4);
        assert_eq!(d.segments().len(), 2);
        let counts = device_counts(&d);
        assert_eq!(counts[&DeviceKind::PolarizingCube], 2);
        assert_eq!(counts[&DeviceKind::Mirror], 1);
        assert_eq!(counts[&DeviceKind::Injection], 1);
        assert_eq!(d.postselection(), None);
    }

    #[test]
    fn canonical_eprb_has_three_devices() {
        let d = canonical_eprb(0.0, 0.5, int(2));
        assert_eq!(d.devices().len(), 3);
        let counts = device_counts(&d);
        assert_eq!(counts[&DeviceKind::Source], 1);
        assert_eq!(counts[&DeviceKind::PolarizingCube], 2);
    }

    #[test]
    fn canonical_diagram_rejects_bad_inputs() {
        let e = canonical_diagram(
            ExperimentKind::Seprb,
            &SettingMap::eprb(Angle::new(0.1), Angle::new(0.2)),
            int(1),
        );
        assert_eq!(e.unwrap_err(), GeometryError::MissingSetting("gamma"));
        let e = canonical_diagram(
            ExperimentKind::Eprb,
            &SettingMap::eprb(Angle::new(0.1), Angle::new(0.2)),
            int(0),
        );
        assert_eq!(e.unwrap_err(), GeometryError::NonPositiveArm);
    }

    #[test]
    fn segments_must_be_lightlike() {
        let a = Point::new(int(0), int(0));
        let b = Point::new(int(1), int(2));
        assert!(matches!(
            WorldlineSegment::new(a, b),
            Err(GeometryError::NotLightlike { .. })
        ));
        assert!(matches!(
            WorldlineSegment::new(a, a),
            Err(GeometryError::ZeroLengthSegment(_))
        ));
    }

    #[test]
    fn segment_orients_by_time() {
        let a = Point::new(int(1), int(1));
        let b = Point::new(int(0), int(0));
        let s = WorldlineSegment::new(a, b).unwrap();
        assert_eq!(s.from(), b);
        assert_eq!(s.to(), a);
        assert_eq!(s.length(), int(1));
    }

    #[test]
    fn diagram_rejects_dangling_and_disconnected() {
        let origin = Point::new(int(0), int(0));
        let up = Point::new(int(1), int(1));
        let far = Point::new(int(10), int(10));
        let source = Device::new(DeviceKind::Source, "S", origin, None).unwrap();
        let cube = Device::cube("B", up, Angle::new(0.3));
        let seg = WorldlineSegment::new(origin, up).unwrap();

        let e = SpacetimeDiagram::new(
            ExperimentKind::Eprb,
            vec![source.clone()],
            vec![seg],
            None,
        );
        assert!(matches!(e, Err(GeometryError::DanglingEndpoint(_))));

        let lonely = Device::cube("X", far, Angle::new(0.1));
        let e = SpacetimeDiagram::new(
            ExperimentKind::Eprb,
            vec![source, cube, lonely],
            vec![seg],
            None,
        );
        assert_eq!(e.unwrap_err(), GeometryError::Disconnected);
    }

    #[test]
    fn cube_requires_setting_and_others_reject_one() {
        let p = Point::new(int(0), int(0));
        assert!(matches!(
            Device::new(DeviceKind::PolarizingCube, "A", p, None),
            Err(GeometryError::CubeNeedsSetting { .. })
        ));
        assert!(matches!(
            Device::new(DeviceKind::Mirror, "M", p, Some(Angle::new(0.1))),
            Err(GeometryError::SettingOnNonCube { .. })
        ));
    }

    #[test]
    fn transform_maps_seprb_to_postselected_eprb() {
        let d = canonical_seprb(0.2, 0.7, int(1));
        let t = s_transform(&d).unwrap();
        assert_eq!(t.kind(), ExperimentKind::Eprb);
        assert_eq!(t.postselection(), Some(Postselection::AEqualsC));
        let expected = postselect(&canonical_eprb(0.2, 0.7, int(1))).unwrap();
        assert!(isomorphic(&t, &expected));
        let info = recognize_canonical(&t).unwrap();
        assert_eq!(info.first_setting, Angle::new(0.2));
        assert_eq!(info.beta, Angle::new(0.7));
    }

    #[test]
    fn transform_round_trip_is_identity() {
        let d = canonical_seprb(0.2, 0.7, rat(3, 2));
        let back = s_transform(&s_transform(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn transform_requires_postselection_on_eprb() {
        let d = canonical_eprb(0.2, 0.7, int(1));
        assert_eq!(
            s_transform(&d).unwrap_err(),
            GeometryError::PostselectionRequired
        );
        let p = postselect(&d).unwrap();
        let t = s_transform(&p).unwrap();
        assert_eq!(t.kind(), ExperimentKind::Seprb);
        assert!(isomorphic(&t, &canonical_seprb(0.2, 0.7, int(1))));
    }

    #[test]
    fn transform_preserves_action_proxy_up_to_roles() {
        let d = canonical_seprb(0.4, 1.1, rat(5, 3));
        let t = s_transform(&d).unwrap();
        let before = action_proxy(&d);
        let after = action_proxy(&t);
        assert!(before.equivalent_up_to_roles(&after));
        assert_eq!(before.segment_lengths(), after.segment_lengths());
        assert_eq!(before.polarizer_settings(), after.polarizer_settings());
        assert_ne!(before.vertex_types(), after.vertex_types());
    }

    #[test]
    fn transform_works_on_translated_diagrams() {
        let d = canonical_seprb(0.2, 0.7, int(1)).translated(rat(7, 2), int(-4));
        let t = s_transform(&d).unwrap();
        let expected = postselect(&canonical_eprb(0.2, 0.7, int(1))).unwrap();
        assert!(isomorphic(&t, &expected));
        assert_eq!(s_transform(&t).unwrap(), d);
    }

    #[test]
    fn isomorphic_ignores_translation_and_labels_only() {
        let d = canonical_seprb(0.2, 0.7, int(1));
        assert!(isomorphic(&d, &d.translated(int(3), int(-1))));
        assert!(!isomorphic(&d, &canonical_seprb(0.2, 0.8, int(1))));
        assert!(!isomorphic(&d, &canonical_seprb(0.2, 0.7, int(2))));
        let relabeled = SpacetimeDiagram::new(
            d.kind(),
            d.devices()
                .iter()
                .map(|dev| {
                    Device::new(dev.kind(), "Z", dev.position(), dev.setting()).unwrap()
                })
                .collect(),
            d.segments().to_vec(),
            d.postselection(),
        )
        .unwrap();
        assert!(isomorphic(&d, &relabeled));
    }

    #[test]
    fn isomorphic_distinguishes_postselection() {
        let d = canonical_eprb(0.2, 0.7, int(1));
        let p = postselect(&d).unwrap();
        assert!(!isomorphic(&d, &p));
    }

    #[test]
    fn action_proxy_reports_sorted_multisets() {
        let d = canonical_seprb(0.9, 0.1, int(2));
        let proxy = action_proxy(&d);
        assert_eq!(proxy.segment_lengths(), &[int(2), int(2)]);
        assert_eq!(
            proxy.polarizer_settings(),
            &[Angle::new(0.1), Angle::new(0.9)]
        );
        assert_eq!(
            proxy.vertex_types(),
            &[
                DeviceKind::PolarizingCube,
                DeviceKind::PolarizingCube,
                DeviceKind::Mirror,
                DeviceKind::Injection,
            ]
        );
    }

    #[test]
    fn toml_round_trip_preserves_diagram() {
        let d = postselect(&canonical_eprb(0.25, 1.3, rat(7, 3))).unwrap();
        let text = d.to_toml_string().unwrap();
        let back = SpacetimeDiagram::from_toml_str(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn toml_parse_rejects_invalid_diagrams() {
        let d = canonical_seprb(0.2, 0.7, int(1));
        let text = d.to_toml_string().unwrap();
        let broken = text.replace("t = \"-1\"", "t = \"-2\"");
        assert!(SpacetimeDiagram::from_toml_str(&broken).is_err());
    }

    #[test]
    fn rational_strings_round_trip() {
        for (s, r) in [("3", int(3)), ("-4/6", rat(-2, 3)), ("0", int(0))] {
            assert_eq!(parse_rational(s).unwrap(), r);
            assert_eq!(parse_rational(&format_rational(r)).unwrap(), r);
        }
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn recognize_rejects_non_canonical_shapes() {
        let d = canonical_seprb(0.2, 0.7, int(1));
        let mut devices = d.devices().to_vec();
        devices.push(
            Device::new(DeviceKind::Mirror, "M2", Point::new(int(0), int(0)), None).unwrap(),
        );
        let bad =
            SpacetimeDiagram::new(d.kind(), devices, d.segments().to_vec(), None).unwrap();
        assert!(matches!(
            recognize_canonical(&bad),
            Err(GeometryError::NotCanonical(_))
        ));
    }
}
