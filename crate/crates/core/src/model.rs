//! Domain types shared by every pipeline stage.
//!
//! Three levels describe one vessel track: the raw [`PositionSequence`], its
//! partition into behavior-labelled [`SubTrajectory`] slices, and the sparse
//! [`LabelSequence`] of port-matched status points.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Vessel category as reported in AIS static data.
///
/// Unknown names and type codes map to [`VesselType::Other`] so ingestion
/// never fails on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselType {
    Cargo,
    Container,
    Fishing,
    Passenger,
    Tanker,
    Tug,
    Other,
}

impl VesselType {
    pub const ALL: [VesselType; 7] = [
        VesselType::Cargo,
        VesselType::Container,
        VesselType::Fishing,
        VesselType::Passenger,
        VesselType::Tanker,
        VesselType::Tug,
        VesselType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VesselType::Cargo => "cargo",
            VesselType::Container => "container",
            VesselType::Fishing => "fishing",
            VesselType::Passenger => "passenger",
            VesselType::Tanker => "tanker",
            VesselType::Tug => "tug",
            VesselType::Other => "other",
        }
    }

    /// Parses either a textual name or a numeric AIS ship-type code.
    pub fn parse_lenient(raw: &str) -> VesselType {
        let s = raw.trim().to_ascii_lowercase();
        if let Ok(code) = s.parse::<u32>() {
            return match code {
                30 => VesselType::Fishing,
                31 | 32 | 52 => VesselType::Tug,
                60..=69 => VesselType::Passenger,
                70..=79 => VesselType::Cargo,
                80..=89 => VesselType::Tanker,
                _ => VesselType::Other,
            };
        }
        match s.as_str() {
            "cargo" => VesselType::Cargo,
            "container" | "container ship" => VesselType::Container,
            "fishing" => VesselType::Fishing,
            "passenger" | "ferry" => VesselType::Passenger,
            "tanker" | "oil tanker" => VesselType::Tanker,
            "tug" | "towing" => VesselType::Tug,
            _ => VesselType::Other,
        }
    }
}

impl fmt::Display for VesselType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One AIS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPoint {
    pub mmsi: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Knots.
    pub sog: f64,
    /// Degrees clockwise from north, in `[0, 360)`.
    pub cog: f64,
    pub vessel_type: VesselType,
}

/// Wraps a course into `[0, 360)`.
pub fn wrap_course(cog: f64) -> f64 {
    let c = cog.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if c >= 360.0 {
        0.0
    } else {
        c
    }
}

/// Wraps an angular difference into `(-180, 180]`.
pub fn wrap_delta(delta: f64) -> f64 {
    let d = (delta + 180.0).rem_euclid(360.0) - 180.0;
    if d <= -180.0 {
        d + 360.0
    } else {
        d
    }
}

/// A single invariant breach found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LatOutOfRange { index: usize, lat: f64 },
    LonOutOfRange { index: usize, lon: f64 },
    InvalidSog { index: usize, sog: f64 },
    InvalidCog { index: usize, cog: f64 },
    NonIncreasingTimestamp { index: usize, prev: i64, current: i64 },
    MmsiMismatch { index: usize, found: String },
}

impl PositionPoint {
    /// Bounds checks on a single point; `index` is reported back in violations.
    pub fn violations(&self, index: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            out.push(Violation::LatOutOfRange { index, lat: self.lat });
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            out.push(Violation::LonOutOfRange { index, lon: self.lon });
        }
        if !(self.sog.is_finite() && self.sog >= 0.0) {
            out.push(Violation::InvalidSog { index, sog: self.sog });
        }
        if !(self.cog.is_finite() && (0.0..360.0).contains(&self.cog)) {
            out.push(Violation::InvalidCog { index, cog: self.cog });
        }
        out
    }
}

/// Time-ordered fixes of a single vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSequence {
    pub mmsi: String,
    pub vessel_type: VesselType,
    pub points: Vec<PositionPoint>,
}

impl PositionSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sogs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sog).collect()
    }
}

/// Checks every type invariant of a sequence and reports all breaches.
pub fn validate(sequence: &PositionSequence) -> Vec<Violation> {
    let mut report = Vec::new();
    for (i, p) in sequence.points.iter().enumerate() {
        report.extend(p.violations(i));
        if p.mmsi != sequence.mmsi {
            report.push(Violation::MmsiMismatch { index: i, found: p.mmsi.clone() });
        }
        if i > 0 {
            let prev = sequence.points[i - 1].timestamp;
            if p.timestamp <= prev {
                report.push(Violation::NonIncreasingTimestamp { index: i, prev, current: p.timestamp });
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedStatus {
    Accelerating,
    Decelerating,
    Uniform,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnStatus {
    Left,
    Right,
    Straight,
    None,
}

/// One of the ten legal speed/turn combinations.
///
/// Stopped segments carry no turn status; every moving status pairs with
/// exactly one of left, right or straight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BehaviorLabel {
    speed: SpeedStatus,
    turn: TurnStatus,
}

pub const NUM_BEHAVIORS: usize = 10;

const MOVING_SPEEDS: [SpeedStatus; 3] =
    [SpeedStatus::Accelerating, SpeedStatus::Decelerating, SpeedStatus::Uniform];
const MOVING_TURNS: [TurnStatus; 3] = [TurnStatus::Left, TurnStatus::Right, TurnStatus::Straight];

impl BehaviorLabel {
    pub const STOPPED: BehaviorLabel = BehaviorLabel { speed: SpeedStatus::Stopped, turn: TurnStatus::None };

    pub fn new(speed: SpeedStatus, turn: TurnStatus) -> Result<Self, Error> {
        let stopped = speed == SpeedStatus::Stopped;
        let none = turn == TurnStatus::None;
        if stopped != none {
            return Err(Error::Contract(format!(
                "illegal behavior {speed:?}/{turn:?}: turn status is none exactly when stopped"
            )));
        }
        Ok(BehaviorLabel { speed, turn })
    }

    pub fn speed(self) -> SpeedStatus {
        self.speed
    }

    pub fn turn(self) -> TurnStatus {
        self.turn
    }

    /// Dense code in `0..10`; stopped is 9.
    pub fn code(self) -> usize {
        match self.speed {
            SpeedStatus::Stopped => 9,
            s => {
                let si = MOVING_SPEEDS.iter().position(|&m| m == s).unwrap();
                let ti = MOVING_TURNS.iter().position(|&m| m == self.turn).unwrap();
                si * 3 + ti
            }
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        match code {
            9 => Some(Self::STOPPED),
            0..=8 => Some(BehaviorLabel { speed: MOVING_SPEEDS[code / 3], turn: MOVING_TURNS[code % 3] }),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = BehaviorLabel> {
        (0..NUM_BEHAVIORS).map(|c| Self::from_code(c).unwrap())
    }

    pub fn name(self) -> String {
        let speed = match self.speed {
            SpeedStatus::Accelerating => "accelerating",
            SpeedStatus::Decelerating => "decelerating",
            SpeedStatus::Uniform => "uniform",
            SpeedStatus::Stopped => return "stopped".to_string(),
        };
        let turn = match self.turn {
            TurnStatus::Left => "left",
            TurnStatus::Right => "right",
            TurnStatus::Straight => "straight",
            TurnStatus::None => unreachable!("moving label without turn status"),
        };
        format!("{speed}_{turn}")
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for BehaviorLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorLabel::all()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown behavior `{s}`")))
    }
}

impl Serialize for BehaviorLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for BehaviorLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A contiguous slice `[start_index, end_index]` (inclusive) of a parent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTrajectory {
    pub parent_mmsi: String,
    pub start_index: usize,
    pub end_index: usize,
    pub points: Vec<PositionPoint>,
    pub behavior: Option<BehaviorLabel>,
}

impl SubTrajectory {
    pub fn from_parent(parent: &PositionSequence, start_index: usize, end_index: usize) -> Self {
        assert!(start_index <= end_index && end_index < parent.len());
        SubTrajectory {
            parent_mmsi: parent.mmsi.clone(),
            start_index,
            end_index,
            points: parent.points[start_index..=end_index].to_vec(),
            behavior: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Geographic coordinate pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Category assigned to a berth: the dominant vessel type that moors there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BerthCategory {
    Unassigned,
    Type(VesselType),
}

impl BerthCategory {
    pub fn name(self) -> &'static str {
        match self {
            BerthCategory::Unassigned => "unassigned",
            BerthCategory::Type(t) => t.as_str(),
        }
    }

    pub fn parse(s: &str) -> BerthCategory {
        if s == "unassigned" {
            BerthCategory::Unassigned
        } else {
            BerthCategory::Type(VesselType::parse_lenient(s))
        }
    }
}

impl fmt::Display for BerthCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Port {
    pub id: String,
    pub position: LatLon,
    pub category: BerthCategory,
}

/// A status point: one matched behavior segment mapped to a port.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPoint {
    pub source_segment: usize,
    pub position: LatLon,
    pub timestamp: i64,
    pub port_id: String,
    pub port_label: BerthCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub mmsi: String,
    pub vessel_type: VesselType,
    pub label_points: Vec<LabelPoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(t: i64, lat: f64) -> PositionPoint {
        PositionPoint {
            mmsi: "1".into(),
            timestamp: t,
            lat,
            lon: 122.0,
            sog: 10.0,
            cog: 90.0,
            vessel_type: VesselType::Container,
        }
    }

    fn seq(points: Vec<PositionPoint>) -> PositionSequence {
        PositionSequence { mmsi: "1".into(), vessel_type: VesselType::Container, points }
    }

    #[test]
    fn lat_out_of_bounds_reports_one_violation() {
        let report = validate(&seq(vec![point(0, 30.0), point(10, 91.0), point(20, 30.0)]));
        assert_eq!(report, vec![Violation::LatOutOfRange { index: 1, lat: 91.0 }]);
    }

    #[test]
    fn well_formed_sequence_is_clean() {
        assert!(validate(&seq(vec![point(0, 30.0), point(10, 30.1), point(20, 30.2)])).is_empty());
    }

    #[test]
    fn duplicated_timestamp_breaks_monotonicity() {
        let report = validate(&seq(vec![point(0, 30.0), point(0, 30.1)]));
        assert!(matches!(report.as_slice(), [Violation::NonIncreasingTimestamp { index: 1, .. }]));
    }

    #[test]
    fn behavior_codes_are_bijective() {
        let codes: Vec<usize> = BehaviorLabel::all().map(|b| b.code()).collect();
        assert_eq!(codes, (0..10).collect::<Vec<_>>());
        for b in BehaviorLabel::all() {
            assert_eq!(BehaviorLabel::from_code(b.code()), Some(b));
            assert_eq!(b.name().parse::<BehaviorLabel>().unwrap(), b);
        }
        assert_eq!(BehaviorLabel::from_code(10), None);
    }

    #[test]
    fn stopped_cannot_turn() {
        assert!(BehaviorLabel::new(SpeedStatus::Stopped, TurnStatus::Left).is_err());
        assert!(BehaviorLabel::new(SpeedStatus::Uniform, TurnStatus::None).is_err());
        assert!(BehaviorLabel::new(SpeedStatus::Stopped, TurnStatus::None).is_ok());
    }

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_course(360.0), 0.0);
        assert_eq!(wrap_course(-10.0), 350.0);
        assert_eq!(wrap_delta(10.0 - 350.0), 20.0);
        assert_eq!(wrap_delta(180.0), 180.0);
        assert_eq!(wrap_delta(-180.0), 180.0);
        assert!(wrap_course(-1e-18) < 360.0);
    }

    #[test]
    fn unknown_vessel_type_is_other() {
        assert_eq!(VesselType::parse_lenient("hovercraft"), VesselType::Other);
        assert_eq!(VesselType::parse_lenient("84"), VesselType::Tanker);
        assert_eq!(VesselType::parse_lenient("Container"), VesselType::Container);
    }
}
