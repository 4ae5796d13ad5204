//! AIS CSV ingestion and track cleaning.
//!
//! The cleaning pipeline is: bounds check while parsing, grouping per vessel,
//! median repair of kinematic outliers, splitting at temporal gaps and a
//! minimum-length filter.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDateTime};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::model::{wrap_course, PositionPoint, PositionSequence, VesselType};

/// Default gap threshold: half an hour.
pub const DEFAULT_MAX_GAP_S: i64 = 1800;

const KNOTS_PER_MPS: f64 = 1.0 / 0.514_444;

/// Column names for the seven required fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub mmsi: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub sog: String,
    pub cog: String,
    pub vessel_type: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            mmsi: "mmsi".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            sog: "sog".into(),
            cog: "cog".into(),
            vessel_type: "vessel_type".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseStats {
    pub rows_read: usize,
    /// Rows with a missing or unparseable cell.
    pub malformed: usize,
    /// Rows that parsed but broke a coordinate/speed bound.
    pub out_of_bounds: usize,
}

impl ParseStats {
    pub fn dropped(&self) -> usize {
        self.malformed + self.out_of_bounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeFormat {
    Epoch,
    Iso8601,
}

fn detect_time_format(cell: &str) -> TimeFormat {
    if cell.trim().parse::<f64>().is_ok() {
        TimeFormat::Epoch
    } else {
        TimeFormat::Iso8601
    }
}

fn parse_time(cell: &str, format: TimeFormat) -> Option<i64> {
    let s = cell.trim();
    match format {
        TimeFormat::Epoch => {
            if let Ok(t) = s.parse::<i64>() {
                return Some(t);
            }
            s.parse::<f64>().ok().filter(|t| t.is_finite()).map(|t| t.floor() as i64)
        }
        TimeFormat::Iso8601 => {
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Some(dt.timestamp());
            }
            ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
                .map(|dt| dt.and_utc().timestamp())
        }
    }
}

/// Parses decoded AIS rows. Malformed rows are skipped and counted.
///
/// The timestamp format (epoch seconds or ISO-8601) is detected once from
/// the first data row and applied to the whole file.
pub fn parse_ais_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<(Vec<PositionPoint>, ParseStats)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Schema(format!("unreadable header: {e}")))?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let idx = [
        column(&schema.mmsi)?,
        column(&schema.timestamp)?,
        column(&schema.lat)?,
        column(&schema.lon)?,
        column(&schema.sog)?,
        column(&schema.cog)?,
        column(&schema.vessel_type)?,
    ];

    let mut stats = ParseStats::default();
    let mut format = None;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        stats.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                debug!("row {}: {e}", row + 1);
                stats.malformed += 1;
                continue;
            }
        };
        let cell = |i: usize| record.get(idx[i]).unwrap_or("");
        let format = *format.get_or_insert_with(|| detect_time_format(cell(1)));
        let num = |i: usize| cell(i).parse::<f64>().ok().filter(|v| v.is_finite());
        let parsed = (|| {
            let mmsi = cell(0);
            if mmsi.is_empty() {
                return None;
            }
            Some(PositionPoint {
                mmsi: mmsi.to_string(),
                timestamp: parse_time(cell(1), format)?,
                lat: num(2)?,
                lon: num(3)?,
                sog: num(4)?,
                cog: num(5)?,
                vessel_type: VesselType::parse_lenient(cell(6)),
            })
        })();
        let Some(mut point) = parsed else {
            debug!("row {}: unparseable cell", row + 1);
            stats.malformed += 1;
            continue;
        };
        point.cog = wrap_course(point.cog);
        if !point.violations(0).is_empty() {
            debug!("row {}: out of bounds", row + 1);
            stats.out_of_bounds += 1;
            continue;
        }
        points.push(point);
    }
    Ok((points, stats))
}

/// Groups points into per-vessel sequences ordered by mmsi, each sorted by
/// time. Duplicate timestamps keep the first occurrence.
pub fn group_by_vessel(points: Vec<PositionPoint>) -> Vec<PositionSequence> {
    let mut groups: BTreeMap<String, Vec<PositionPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(p.mmsi.clone()).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(mmsi, mut pts)| {
            pts.sort_by_key(|p| p.timestamp);
            pts.dedup_by_key(|p| p.timestamp);
            let vessel_type = pts[0].vessel_type;
            PositionSequence { mmsi, vessel_type, points: pts }
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Largest acceleration (knots/s) implied between two fixes, either by their
/// reported speeds or by the speed their displacement implies.
fn implied_acceleration(a: &PositionPoint, b: &PositionPoint) -> f64 {
    let dt = (b.timestamp - a.timestamp).unsigned_abs().max(1) as f64;
    let by_sog = (b.sog - a.sog).abs() / dt;
    let travelled = haversine_m(a.lat, a.lon, b.lat, b.lon) / dt * KNOTS_PER_MPS;
    let by_position = (travelled - 0.5 * (a.sog + b.sog)).abs() / dt;
    by_sog.max(by_position)
}

/// Replaces kinematic outliers by the median of the `window` points centred on
/// them (lat, lon and sog independently). Timestamps and course are kept.
///
/// A point is an outlier when the acceleration implied towards each of its
/// neighbours exceeds `speed_jump_limit` (knots per second). An end point has
/// one neighbour and is flagged only if that neighbour is itself consistent
/// with the rest of the track.
pub fn smooth(sequence: &PositionSequence, window: usize, speed_jump_limit: f64) -> Result<PositionSequence> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Parameter(format!("smoothing window must be odd and positive, got {window}")));
    }
    if !(speed_jump_limit > 0.0) {
        return Err(Error::Parameter(format!("speed jump limit must be positive, got {speed_jump_limit}")));
    }
    let pts = &sequence.points;
    let n = pts.len();
    let mut out = sequence.clone();
    if n < 2 || window == 1 {
        return Ok(out);
    }
    let jump: Vec<bool> = pts.windows(2).map(|w| implied_acceleration(&w[0], &w[1]) > speed_jump_limit).collect();
    let half = window / 2;
    for i in 0..n {
        let outlier = if i == 0 {
            jump[0] && (n < 3 || !jump[1])
        } else if i == n - 1 {
            jump[n - 2] && (n < 3 || !jump[n - 3])
        } else {
            jump[i - 1] && jump[i]
        };
        if !outlier {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let win = &pts[lo..=hi];
        let mut lat: Vec<f64> = win.iter().map(|p| p.lat).collect();
        let mut lon: Vec<f64> = win.iter().map(|p| p.lon).collect();
        let mut sog: Vec<f64> = win.iter().map(|p| p.sog).collect();
        out.points[i].lat = median(&mut lat);
        out.points[i].lon = median(&mut lon);
        out.points[i].sog = median(&mut sog);
    }
    Ok(out)
}

/// Splits a sequence wherever consecutive fixes are more than `max_gap` seconds apart.
pub fn slice(sequence: &PositionSequence, max_gap: i64) -> Vec<PositionSequence> {
    let mut out = Vec::new();
    let mut current: Vec<PositionPoint> = Vec::new();
    for p in &sequence.points {
        if let Some(last) = current.last() {
            if p.timestamp - last.timestamp > max_gap {
                out.push(std::mem::take(&mut current));
            }
        }
        current.push(p.clone());
    }
    if !current.is_empty() {
        out.push(current);
    }
    out.into_iter()
        .map(|points| PositionSequence { mmsi: sequence.mmsi.clone(), vessel_type: sequence.vessel_type, points })
        .collect()
}

pub fn filter_min_length(sequences: Vec<PositionSequence>, min_points: usize) -> Vec<PositionSequence> {
    sequences.into_iter().filter(|s| s.len() >= min_points).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub schema: CsvSchema,
    pub max_gap: i64,
    pub min_points: usize,
    pub smooth_window: usize,
    /// Knots per second.
    pub speed_jump_limit: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            schema: CsvSchema::default(),
            max_gap: DEFAULT_MAX_GAP_S,
            min_points: 3000,
            smooth_window: 3,
            speed_jump_limit: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestSummary {
    pub parse: ParseStats,
    pub vessels: usize,
    pub slices: usize,
    pub emitted: usize,
}

/// Full cleaning pipeline from CSV bytes to filtered sequences.
pub fn ingest<R: Read>(input: R, config: &IngestConfig) -> Result<(Vec<PositionSequence>, IngestSummary)> {
    if config.max_gap <= 0 {
        return Err(Error::Parameter("max_gap must be positive".into()));
    }
    if config.min_points == 0 {
        return Err(Error::Parameter("min_points must be at least 1".into()));
    }
    let (points, parse) = parse_ais_csv(input, &config.schema)?;
    let groups = group_by_vessel(points);
    let vessels = groups.len();
    let mut slices = Vec::new();
    for g in &groups {
        let smoothed = smooth(g, config.smooth_window, config.speed_jump_limit)?;
        slices.extend(slice(&smoothed, config.max_gap));
    }
    let n_slices = slices.len();
    let kept = filter_min_length(slices, config.min_points);
    if kept.is_empty() && n_slices > 0 {
        warn!("no sequence reaches {} points", config.min_points);
    }
    let summary = IngestSummary { parse, vessels, slices: n_slices, emitted: kept.len() };
    Ok((kept, summary))
}

/// JSONL wire form of a [`PositionSequence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub mmsi: String,
    pub points: Vec<(i64, f64, f64, f64, f64)>,
    pub vessel_type: VesselType,
}

impl From<&PositionSequence> for SequenceRecord {
    fn from(s: &PositionSequence) -> Self {
        SequenceRecord {
            mmsi: s.mmsi.clone(),
            points: s.points.iter().map(|p| (p.timestamp, p.lat, p.lon, p.sog, p.cog)).collect(),
            vessel_type: s.vessel_type,
        }
    }
}

impl From<SequenceRecord> for PositionSequence {
    fn from(r: SequenceRecord) -> Self {
        let points = r
            .points
            .into_iter()
            .map(|(timestamp, lat, lon, sog, cog)| PositionPoint {
                mmsi: r.mmsi.clone(),
                timestamp,
                lat,
                lon,
                sog,
                cog,
                vessel_type: r.vessel_type,
            })
            .collect();
        PositionSequence { mmsi: r.mmsi, vessel_type: r.vessel_type, points }
    }
}

pub fn write_sequences_jsonl<W: Write>(mut out: W, sequences: &[PositionSequence]) -> Result<()> {
    for s in sequences {
        serde_json::to_writer(&mut out, &SequenceRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sequences_jsonl<R: BufRead>(input: R) -> Result<Vec<PositionSequence>> {
    crate::io::read_jsonl::<SequenceRecord, _>(input).map(|v| v.into_iter().map(Into::into).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "mmsi,timestamp,lat,lon,sog,cog,vessel_type\n";

    fn track(n: usize, sog: f64) -> PositionSequence {
        // due north at constant speed, 10 s cadence
        let step_deg = sog * 0.514_444 * 10.0 / 111_195.0;
        let points = (0..n)
            .map(|i| PositionPoint {
                mmsi: "9".into(),
                timestamp: 1_000 + 10 * i as i64,
                lat: 30.0 + step_deg * i as f64,
                lon: 122.0,
                sog,
                cog: 0.0,
                vessel_type: VesselType::Tanker,
            })
            .collect();
        PositionSequence { mmsi: "9".into(), vessel_type: VesselType::Tanker, points }
    }

    #[test]
    fn parses_a_row_directly() {
        let csv = format!("{HEADER}123456789,1425168000,29.95,122.10,12.4,87.0,container\n");
        let (points, stats) = parse_ais_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(stats, ParseStats { rows_read: 1, malformed: 0, out_of_bounds: 0 });
        assert_eq!(
            points,
            vec![PositionPoint {
                mmsi: "123456789".into(),
                timestamp: 1_425_168_000,
                lat: 29.95,
                lon: 122.10,
                sog: 12.4,
                cog: 87.0,
                vessel_type: VesselType::Container,
            }]
        );
    }

    #[test]
    fn out_of_bounds_lon_is_counted() {
        let csv = format!("{HEADER}1,0,29.95,190,12.4,87.0,container\n1,10,29.95,122,12.4,87.0,container\n");
        let (points, stats) = parse_ais_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(stats.out_of_bounds, 1);
    }

    #[test]
    fn header_only_is_empty() {
        let (points, stats) = parse_ais_csv(HEADER.as_bytes(), &CsvSchema::default()).unwrap();
        assert!(points.is_empty());
        assert_eq!(stats, ParseStats::default());
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = parse_ais_csv("mmsi,timestamp,lat,lon,sog,cog\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("vessel_type")));
    }

    #[test]
    fn custom_schema_and_iso_timestamps() {
        let schema = CsvSchema { mmsi: "MMSI".into(), timestamp: "BaseDateTime".into(), ..CsvSchema::default() };
        let csv = "MMSI,BaseDateTime,lat,lon,sog,cog,vessel_type\n\
                   7,2015-03-01T00:00:00,29.9,122.1,10,360,70\n\
                   7,2015-03-01 00:00:10.7,29.9,122.1,10,-90,70\n\
                   7,garbage,29.9,122.1,10,0,70\n";
        let (points, stats) = parse_ais_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(stats.malformed, 1);
        assert_eq!(points[0].timestamp, 1_425_168_000);
        assert_eq!(points[1].timestamp, 1_425_168_010);
        assert_eq!(points[0].cog, 0.0);
        assert_eq!(points[1].cog, 270.0);
        assert_eq!(points[0].vessel_type, VesselType::Cargo);
    }

    #[test]
    fn grouping_sorts_and_dedups() {
        let mk = |m: &str, t: i64, lat: f64| PositionPoint {
            mmsi: m.into(),
            timestamp: t,
            lat,
            lon: 0.0,
            sog: 1.0,
            cog: 0.0,
            vessel_type: VesselType::Other,
        };
        let seqs = group_by_vessel(vec![mk("b", 20, 1.0), mk("a", 5, 0.0), mk("b", 10, 2.0), mk("b", 10, 3.0)]);
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].mmsi, "a");
        assert_eq!(seqs[0].len(), 1);
        let b: Vec<(i64, f64)> = seqs[1].points.iter().map(|p| (p.timestamp, p.lat)).collect();
        assert_eq!(b, vec![(10, 2.0), (20, 1.0)]);
    }

    #[test]
    fn smoothing_constant_track_is_identity() {
        let t = track(9, 10.0);
        assert_eq!(smooth(&t, 3, 1.0).unwrap(), t);
    }

    #[test]
    fn smoothing_removes_speed_spike() {
        let mut t = track(9, 10.0);
        t.points[4].sog = 50.0;
        let s = smooth(&t, 3, 1.0).unwrap();
        assert_eq!(s.points[4].sog, 10.0);
        assert_eq!(s.points[..4], t.points[..4]);
        assert_eq!(s.points[5..], t.points[5..]);
    }

    #[test]
    fn smoothing_repairs_two_gps_spikes_only() {
        let clean = track(20, 10.0);
        let mut t = clean.clone();
        t.points[5].lat += 0.02;
        t.points[13].lon -= 0.03;
        let s = smooth(&t, 3, 1.0).unwrap();
        let step = clean.points[1].lat - clean.points[0].lat;
        for i in 0..20 {
            if i == 5 || i == 13 {
                assert!((s.points[i].lat - clean.points[i].lat).abs() <= step + 1e-12, "point {i} not repaired");
                assert!((s.points[i].lon - clean.points[i].lon).abs() < 1e-12);
            } else {
                assert_eq!(s.points[i], t.points[i], "point {i} changed");
            }
        }
    }

    #[test]
    fn smoothing_rejects_even_window() {
        assert!(matches!(smooth(&track(3, 1.0), 2, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(smooth(&track(3, 1.0), 0, 1.0), Err(Error::Parameter(_))));
    }

    fn with_gaps(gaps: &[i64]) -> PositionSequence {
        let mut t = track(gaps.len() + 1, 10.0);
        let mut ts = 0;
        for (i, p) in t.points.iter_mut().enumerate() {
            if i > 0 {
                ts += gaps[i - 1];
            }
            p.timestamp = ts;
        }
        t
    }

    #[test]
    fn slicing_at_gaps() {
        let t = with_gaps(&[60; 9]);
        assert_eq!(slice(&t, 1800), vec![t.clone()]);
        let t = with_gaps(&[60, 60, 3600, 60, 60]);
        let parts = slice(&t, 1800);
        assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![3, 3]);
        let t = with_gaps(&[3600; 3]);
        assert_eq!(slice(&t, 1800).len(), 4);
    }

    #[test]
    fn min_length_filter() {
        let seqs: Vec<_> = [2999, 3000, 3001].iter().map(|&n| track(n, 10.0)).collect();
        assert_eq!(filter_min_length(seqs.clone(), 3000).len(), 2);
        assert_eq!(filter_min_length(seqs.clone(), 1), seqs);
        assert!(filter_min_length(vec![], 5).is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let seqs = vec![track(4, 10.0), track(2, 3.0)];
        let mut buf = Vec::new();
        write_sequences_jsonl(&mut buf, &seqs).unwrap();
        let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(line.starts_with(r#"{"mmsi":"9","points":[[1000,30.0,122.0,10.0,0.0]"#));
        assert_eq!(read_sequences_jsonl(buf.as_slice()).unwrap(), seqs);
    }
}
