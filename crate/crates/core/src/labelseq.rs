//! Mapping behavior slices onto ports to form label sequences.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::model::{
    BehaviorLabel, BerthCategory, LabelPoint, LabelSequence, LatLon, Port, PositionPoint, PositionSequence,
    SpeedStatus, SubTrajectory, TurnStatus, VesselType,
};

pub const DEFAULT_SIGMA_M: f64 = 2000.0;

/// Known ports and the matching radius in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct PortRegistry {
    ports: Vec<Port>,
    sigma: f64,
}

impl PortRegistry {
    /// A zero radius is accepted and matches nothing.
    pub fn new(ports: Vec<Port>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("matching radius must be finite and non-negative, got {sigma}")));
        }
        let mut seen = HashSet::new();
        for p in &ports {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Data(format!("duplicate port id `{}`", p.id)));
            }
            if !(-90.0..=90.0).contains(&p.position.lat) || !(-180.0..=180.0).contains(&p.position.lon) {
                return Err(Error::Data(format!("port `{}` outside coordinate bounds", p.id)));
            }
        }
        Ok(PortRegistry { ports, sigma })
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        PortRegistry::new(self.ports.clone(), sigma)
    }

    pub fn get(&self, id: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.id == id)
    }
}

/// Which behavior slices become label points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorFilter {
    Any,
    Exact(BehaviorLabel),
    Speed(SpeedStatus),
    Turn(TurnStatus),
}

impl Default for BehaviorFilter {
    fn default() -> Self {
        BehaviorFilter::Speed(SpeedStatus::Stopped)
    }
}

impl BehaviorFilter {
    pub fn matches(self, label: BehaviorLabel) -> bool {
        match self {
            BehaviorFilter::Any => true,
            BehaviorFilter::Exact(b) => b == label,
            BehaviorFilter::Speed(s) => label.speed() == s,
            BehaviorFilter::Turn(t) => label.turn() == t,
        }
    }
}

impl FromStr for BehaviorFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "any" => BehaviorFilter::Any,
            "stopped" => BehaviorFilter::Speed(SpeedStatus::Stopped),
            "accelerating" => BehaviorFilter::Speed(SpeedStatus::Accelerating),
            "decelerating" => BehaviorFilter::Speed(SpeedStatus::Decelerating),
            "uniform" => BehaviorFilter::Speed(SpeedStatus::Uniform),
            "left" => BehaviorFilter::Turn(TurnStatus::Left),
            "right" => BehaviorFilter::Turn(TurnStatus::Right),
            "straight" => BehaviorFilter::Turn(TurnStatus::Straight),
            other => BehaviorFilter::Exact(other.parse()?),
        })
    }
}

/// Labelled slices matching `filter`, in their original order.
pub fn filter_behavior<'a>(segments: &'a [SubTrajectory], filter: BehaviorFilter) -> Vec<&'a SubTrajectory> {
    segments.iter().filter(|s| s.behavior.is_some_and(|b| filter.matches(b))).collect()
}

/// Degree of match between a point and a port: great-circle distance in metres.
pub fn match_distance(point: LatLon, port: &Port) -> f64 {
    haversine_m(point.lat, point.lon, port.position.lat, port.position.lon)
}

fn latlon(p: &PositionPoint) -> LatLon {
    LatLon { lat: p.lat, lon: p.lon }
}

/// Picks the status point of one slice.
///
/// Points closer than the radius are gathered per port. With one matching
/// port the label point is its first in-radius point. With several, each
/// port is judged by its middle in-radius point and the closest port wins;
/// the label point is again that port's first in-radius point.
pub fn select_label_point(segment: &SubTrajectory, source_segment: usize, registry: &PortRegistry) -> Option<LabelPoint> {
    let mut best: Option<(f64, &Port, &PositionPoint)> = None;
    for port in registry.ports() {
        let inside: Vec<&PositionPoint> =
            segment.points.iter().filter(|p| match_distance(latlon(p), port) < registry.sigma()).collect();
        if inside.is_empty() {
            continue;
        }
        let mid = inside[inside.len() / 2];
        let d = match_distance(latlon(mid), port);
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, port, inside[0]));
        }
    }
    best.map(|(_, port, first)| LabelPoint {
        source_segment,
        position: latlon(first),
        timestamp: first.timestamp,
        port_id: port.id.clone(),
        port_label: port.category,
    })
}

/// Matched status points of one trajectory before berth categorization.
#[derive(Debug, Clone, PartialEq)]
pub struct Moorings {
    pub mmsi: String,
    pub vessel_type: VesselType,
    pub points: Vec<LabelPoint>,
}

pub fn match_trajectory(
    sequence: &PositionSequence,
    segments: &[SubTrajectory],
    registry: &PortRegistry,
    filter: BehaviorFilter,
) -> Moorings {
    let points = segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.behavior.is_some_and(|b| filter.matches(b)))
        .filter_map(|(i, s)| select_label_point(s, i, registry))
        .collect();
    Moorings { mmsi: sequence.mmsi.clone(), vessel_type: sequence.vessel_type, points }
}

/// Sets every port's category to the vessel type with the most moorings
/// there. Ties go to the lexicographically smallest type name; ports without
/// moorings become unassigned.
pub fn categorize_berths(moorings: &[Moorings], registry: &PortRegistry) -> PortRegistry {
    let mut counts: BTreeMap<&str, BTreeMap<&'static str, (usize, VesselType)>> = BTreeMap::new();
    for m in moorings {
        for lp in &m.points {
            let entry = counts.entry(lp.port_id.as_str()).or_default();
            entry.entry(m.vessel_type.as_str()).or_insert((0, m.vessel_type)).0 += 1;
        }
    }
    let mut out = registry.clone();
    for port in &mut out.ports {
        port.category = match counts.get(port.id.as_str()) {
            None => BerthCategory::Unassigned,
            Some(by_type) => {
                // BTreeMap iterates names ascending; keep the first maximum
                let mut best: Option<(usize, VesselType)> = None;
                for &(n, t) in by_type.values() {
                    if best.is_none_or(|(bn, _)| n > bn) {
                        best = Some((n, t));
                    }
                }
                BerthCategory::Type(best.unwrap().1)
            }
        };
    }
    out
}

/// Builds label sequences for all trajectories.
///
/// Returns the sequences sorted by (mmsi, first timestamp), skipping
/// trajectories without label points, and the categorized registry.
pub fn build_label_sequences(
    trajectories: &[(PositionSequence, Vec<SubTrajectory>)],
    registry: &PortRegistry,
    filter: BehaviorFilter,
) -> (Vec<LabelSequence>, PortRegistry) {
    let moorings: Vec<Moorings> =
        trajectories.iter().map(|(seq, segs)| match_trajectory(seq, segs, registry, filter)).collect();
    let categorized = categorize_berths(&moorings, registry);
    let mut out: Vec<LabelSequence> = moorings
        .into_iter()
        .filter(|m| !m.points.is_empty())
        .map(|m| {
            let label_points = m
                .points
                .into_iter()
                .map(|mut lp| {
                    lp.port_label = categorized.get(&lp.port_id).expect("matched port exists").category;
                    lp
                })
                .collect();
            LabelSequence { mmsi: m.mmsi, vessel_type: m.vessel_type, label_points }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.mmsi.as_str(), a.label_points[0].timestamp).cmp(&(b.mmsi.as_str(), b.label_points[0].timestamp))
    });
    (out, categorized)
}

#[derive(Debug, Deserialize)]
struct PortRow {
    port_id: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    category: Option<String>,
}

/// Reads `port_id,lat,lon[,category]`.
pub fn read_ports_csv<R: Read>(input: R, sigma: f64) -> Result<PortRegistry> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut ports = Vec::new();
    for row in reader.deserialize::<PortRow>() {
        let row = row?;
        ports.push(Port {
            id: row.port_id,
            position: LatLon { lat: row.lat, lon: row.lon },
            category: row.category.as_deref().map_or(BerthCategory::Unassigned, BerthCategory::parse),
        });
    }
    PortRegistry::new(ports, sigma)
}

pub fn write_ports_csv<W: Write>(out: W, registry: &PortRegistry) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["port_id", "lat", "lon", "category"])?;
    for p in registry.ports() {
        w.write_record([p.id.clone(), p.position.lat.to_string(), p.position.lon.to_string(), p.category.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// JSONL wire form of a [`LabelSequence`]; each label is
/// `[t, lat, lon, port_id, category]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub mmsi: String,
    pub labels: Vec<(i64, f64, f64, String, String)>,
    pub vessel_type: VesselType,
}

impl From<&LabelSequence> for LabelRecord {
    fn from(s: &LabelSequence) -> Self {
        LabelRecord {
            mmsi: s.mmsi.clone(),
            labels: s
                .label_points
                .iter()
                .map(|lp| (lp.timestamp, lp.position.lat, lp.position.lon, lp.port_id.clone(), lp.port_label.to_string()))
                .collect(),
            vessel_type: s.vessel_type,
        }
    }
}

impl From<LabelRecord> for LabelSequence {
    fn from(r: LabelRecord) -> Self {
        LabelSequence {
            mmsi: r.mmsi,
            vessel_type: r.vessel_type,
            label_points: r
                .labels
                .into_iter()
                .enumerate()
                .map(|(i, (timestamp, lat, lon, port_id, category))| LabelPoint {
                    source_segment: i,
                    position: LatLon { lat, lon },
                    timestamp,
                    port_id,
                    port_label: BerthCategory::parse(&category),
                })
                .collect(),
        }
    }
}

pub fn write_label_jsonl<W: Write>(mut out: W, sequences: &[LabelSequence]) -> Result<()> {
    for s in sequences {
        serde_json::to_writer(&mut out, &LabelRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Source segment indices are not part of the wire format and come back as ordinals.
pub fn read_label_jsonl<R: BufRead>(input: R) -> Result<Vec<LabelSequence>> {
    crate::io::read_jsonl::<LabelRecord, _>(input).map(|v| v.into_iter().map(Into::into).collect())
}
