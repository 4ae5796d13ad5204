//! Deterministic synthetic tracks and fleets with planted ground truth.
//!
//! Positions are dead-reckoned from speed and course at a fixed 10 s
//! cadence. Every vessel draws from its own ChaCha stream, so a fleet is
//! reproducible vessel by vessel.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{bearing_deg, dead_reckon, haversine_m};
use crate::model::{
    wrap_course, BehaviorLabel, BerthCategory, LatLon, Port, PositionPoint, PositionSequence, SpeedStatus, TurnStatus,
    VesselType,
};

pub const CADENCE_S: i64 = 10;
pub const MPS_PER_KNOT: f64 = 0.514_444;
/// Speed change per fix in accelerating/decelerating regimes, knots.
pub const SPEED_RAMP_KN: f64 = 0.1;
/// Course change per fix in turning regimes, degrees.
pub const TURN_RATE_DEG: f64 = 1.0;
const START_TIME: i64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub behavior: BehaviorLabel,
    pub duration: usize,
    pub base_sog: f64,
    pub base_cog: f64,
}

impl Regime {
    /// Canonical speeds for a behavior: 0.3 kn stopped, 12/20 kn at the start
    /// of a speed-up/slow-down, 15 kn otherwise.
    pub fn canonical(behavior: BehaviorLabel, duration: usize, base_cog: f64) -> Self {
        let base_sog = match behavior.speed() {
            SpeedStatus::Stopped => 0.3,
            SpeedStatus::Accelerating => 12.0,
            SpeedStatus::Decelerating => 20.0,
            SpeedStatus::Uniform => 15.0,
        };
        Regime { behavior, duration, base_sog, base_cog }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackNoise {
    /// Gaussian noise on speed, knots.
    pub sog_std: f64,
    /// Gaussian noise on course, degrees.
    pub cog_std: f64,
}

impl Default for TrackNoise {
    fn default() -> Self {
        TrackNoise { sog_std: 0.3, cog_std: 0.5 }
    }
}

/// A generated track with its planted regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTrack {
    pub sequence: PositionSequence,
    /// First index of every regime after the first.
    pub boundaries: Vec<usize>,
    pub labels: Vec<BehaviorLabel>,
    /// Inclusive index range of each regime.
    pub spans: Vec<(usize, usize)>,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std.max(0.0)).expect("finite standard deviation")
}

/// Generates one track by concatenating regimes.
pub fn gen_regime_track(mmsi: &str, regimes: &[Regime], noise: TrackNoise, seed: u64) -> Result<PlantedTrack> {
    if regimes.is_empty() {
        return Err(Error::Parameter("at least one regime is required".into()));
    }
    if let Some(r) = regimes.iter().find(|r| r.duration < 2) {
        return Err(Error::Parameter(format!("regime {} lasts {} points; need at least 2", r.behavior, r.duration)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sog_noise = normal(noise.sog_std);
    let cog_noise = normal(noise.cog_std);
    let (mut lat, mut lon) = (30.0, 122.0);
    let mut points = Vec::new();
    let mut boundaries = Vec::new();
    let mut spans = Vec::new();
    for (ri, r) in regimes.iter().enumerate() {
        if ri > 0 {
            boundaries.push(points.len());
        }
        let start = points.len();
        for i in 0..r.duration {
            let x = i as f64;
            let sog = match r.behavior.speed() {
                SpeedStatus::Accelerating => r.base_sog + SPEED_RAMP_KN * x,
                SpeedStatus::Decelerating => r.base_sog - SPEED_RAMP_KN * x,
                _ => r.base_sog,
            };
            let cog = match r.behavior.turn() {
                TurnStatus::Left => r.base_cog - TURN_RATE_DEG * x,
                TurnStatus::Right => r.base_cog + TURN_RATE_DEG * x,
                _ => r.base_cog,
            };
            let sog = (sog + sog_noise.sample(&mut rng)).max(0.0);
            let cog = wrap_course(cog + cog_noise.sample(&mut rng));
            points.push(PositionPoint {
                mmsi: mmsi.to_string(),
                timestamp: START_TIME + CADENCE_S * points.len() as i64,
                lat,
                lon,
                sog,
                cog,
                vessel_type: VesselType::Other,
            });
            (lat, lon) = dead_reckon(lat, lon, cog, sog * MPS_PER_KNOT * CADENCE_S as f64);
        }
        spans.push((start, points.len() - 1));
    }
    Ok(PlantedTrack {
        sequence: PositionSequence { mmsi: mmsi.to_string(), vessel_type: VesselType::Other, points },
        boundaries,
        labels: regimes.iter().map(|r| r.behavior).collect(),
        spans,
    })
}

/// Voyage pattern of a synthetic vessel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// Shuttles between two fixed ports.
    Ferry,
    /// Fixed rotation over several ports.
    Liner,
    /// Random port calls with long stays.
    Tramp,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Ferry, Archetype::Liner, Archetype::Tramp];

    pub fn vessel_type(self) -> VesselType {
        match self {
            Archetype::Ferry => VesselType::Passenger,
            Archetype::Liner => VesselType::Container,
            Archetype::Tramp => VesselType::Tanker,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Ferry => "ferry",
            Archetype::Liner => "liner",
            Archetype::Tramp => "tramp",
        }
    }
}

/// Ports of a synthetic sea area and which archetype calls at which.
#[derive(Debug, Clone, PartialEq)]
pub struct PortPlan {
    pub ports: Vec<Port>,
    /// Indices into `ports`.
    pub ferry: Vec<usize>,
    pub liner: Vec<usize>,
    pub tramp: Vec<usize>,
}

impl PortPlan {
    /// A 3×3 grid with 6 km spacing: two passenger berths, three container
    /// berths and three tanker berths. Categories start unassigned.
    pub fn grid() -> Self {
        let origin = (30.0, 122.0);
        let spacing = 6_000.0;
        let at = |row: usize, col: usize| {
            let (lat, _) = dead_reckon(origin.0, origin.1, 0.0, spacing * row as f64);
            let (lat, lon) = dead_reckon(lat, origin.1, 90.0, spacing * col as f64);
            LatLon { lat, lon }
        };
        let mut ports = Vec::new();
        let mut add = |id: &str, row, col| {
            ports.push(Port { id: id.to_string(), position: at(row, col), category: BerthCategory::Unassigned });
            ports.len() - 1
        };
        let ferry = vec![add("P0", 0, 0), add("P1", 0, 1)];
        let liner = vec![add("C0", 1, 0), add("C1", 1, 1), add("C2", 1, 2)];
        let tramp = vec![add("T0", 2, 0), add("T1", 2, 1), add("T2", 2, 2)];
        PortPlan { ports, ferry, liner, tramp }
    }

    fn calls(&self, archetype: Archetype) -> &[usize] {
        match archetype {
            Archetype::Ferry => &self.ferry,
            Archetype::Liner => &self.liner,
            Archetype::Tramp => &self.tramp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in Archetype::ALL {
            let calls = self.calls(a);
            if calls.len() < 2 {
                return Err(Error::Parameter(format!("{} archetype needs at least 2 ports, got {}", a.name(), calls.len())));
            }
            if let Some(&i) = calls.iter().find(|&&i| i >= self.ports.len()) {
                return Err(Error::Parameter(format!("port index {i} out of range")));
            }
        }
        if self.ferry.len() != 2 {
            return Err(Error::Parameter("ferries shuttle between exactly 2 ports".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    /// Vessels per archetype: ferry, liner, tramp.
    pub counts: [usize; 3],
    /// Extra vessels that change archetype half way, cycling through the
    /// ordered archetype pairs.
    pub switching: usize,
    pub min_points: usize,
    pub max_points: usize,
    /// Cruise speed range, knots.
    pub cruise_sog: (f64, f64),
    pub dwell_sog: f64,
    pub sog_noise: f64,
    pub cog_noise: f64,
    /// Inclusive dwell-length ranges in fixes.
    pub ferry_dwell: (usize, usize),
    pub liner_dwell: (usize, usize),
    pub tramp_dwell: (usize, usize),
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            counts: [10, 10, 10],
            switching: 0,
            min_points: 200,
            max_points: 400,
            cruise_sog: (14.0, 16.0),
            dwell_sog: 0.3,
            sog_noise: 0.3,
            cog_noise: 0.5,
            ferry_dwell: (65, 75),
            liner_dwell: (70, 90),
            tramp_dwell: (110, 150),
            seed: 0,
        }
    }
}

impl FleetConfig {
    fn dwell(&self, archetype: Archetype) -> (usize, usize) {
        match archetype {
            Archetype::Ferry => self.ferry_dwell,
            Archetype::Liner => self.liner_dwell,
            Archetype::Tramp => self.tramp_dwell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_points > self.max_points {
            return Err(Error::Parameter("min_points exceeds max_points".into()));
        }
        for a in Archetype::ALL {
            let (lo, hi) = self.dwell(a);
            if lo < 2 || lo > hi {
                return Err(Error::Parameter(format!("bad dwell range for {}", a.name())));
            }
        }
        if !(self.cruise_sog.0 > 0.0 && self.cruise_sog.0 <= self.cruise_sog.1) {
            return Err(Error::Parameter("bad cruise speed range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVessel {
    pub archetype: Archetype,
    pub sequence: PositionSequence,
    /// Port ids in call order.
    pub schedule: Vec<String>,
    /// Inclusive index range of every planted mooring.
    pub dwells: Vec<(usize, usize)>,
    /// Second archetype and the index of its first fix, for switching vessels.
    pub switch: Option<(Archetype, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub plan: PortPlan,
    pub vessels: Vec<SynthVessel>,
}

struct Voyage<'a> {
    cfg: &'a FleetConfig,
    plan: &'a PortPlan,
    rng: ChaCha8Rng,
    mmsi: String,
    vessel_type: VesselType,
    lat: f64,
    lon: f64,
    /// Heading held during the current stay.
    heading: f64,
    t: i64,
    points: Vec<PositionPoint>,
    schedule: Vec<String>,
    dwells: Vec<(usize, usize)>,
}

impl Voyage<'_> {
    fn push(&mut self, sog: f64, cog: f64) {
        self.points.push(PositionPoint {
            mmsi: self.mmsi.clone(),
            timestamp: self.t,
            lat: self.lat,
            lon: self.lon,
            sog,
            cog,
            vessel_type: self.vessel_type,
        });
        (self.lat, self.lon) = dead_reckon(self.lat, self.lon, cog, sog * MPS_PER_KNOT * CADENCE_S as f64);
        self.t += CADENCE_S;
    }

    fn stay(&mut self, length: usize, heading: f64) {
        let sog_noise = normal(self.cfg.sog_noise);
        let cog_noise = normal(2.0);
        for _ in 0..length {
            let sog = (self.cfg.dwell_sog + sog_noise.sample(&mut self.rng)).max(0.0);
            let cog = wrap_course(heading + cog_noise.sample(&mut self.rng));
            self.push(sog, cog);
        }
    }

    fn dwell(&mut self, port: usize, length: usize) {
        let start = self.points.len();
        self.heading = self.rng.random_range(0.0..360.0);
        self.stay(length, self.heading);
        self.schedule.push(self.plan.ports[port].id.clone());
        self.dwells.push((start, self.points.len() - 1));
    }

    /// Fixes needed to reach `port` at the mean cruise speed.
    fn transit_estimate(&self, port: usize) -> usize {
        let p = &self.plan.ports[port].position;
        let speed = 0.5 * (self.cfg.cruise_sog.0 + self.cfg.cruise_sog.1) * MPS_PER_KNOT * CADENCE_S as f64;
        (haversine_m(self.lat, self.lon, p.lat, p.lon) / speed).ceil() as usize + 1
    }

    fn transit(&mut self, port: usize) {
        let target = self.plan.ports[port].position;
        let cruise = self.rng.random_range(self.cfg.cruise_sog.0..=self.cfg.cruise_sog.1);
        let sog_noise = normal(self.cfg.sog_noise);
        let cog_noise = normal(self.cfg.cog_noise);
        loop {
            let remaining = haversine_m(self.lat, self.lon, target.lat, target.lon);
            let sog = (cruise + sog_noise.sample(&mut self.rng)).max(0.0);
            if remaining < sog * MPS_PER_KNOT * CADENCE_S as f64 {
                break;
            }
            let cog = wrap_course(bearing_deg(self.lat, self.lon, target.lat, target.lon) + cog_noise.sample(&mut self.rng));
            self.push(sog, cog);
        }
    }

    /// Calls at ports chosen by `archetype` until the next call would exceed
    /// `budget` fixes or `max_calls` calls have been made.
    fn sail(&mut self, archetype: Archetype, start_port: Option<usize>, budget: usize, max_calls: usize) {
        let calls = self.plan.calls(archetype).to_vec();
        let (lo, hi) = self.cfg.dwell(archetype);
        let base = self.points.len();
        let mut phase = self.rng.random_range(0..calls.len());
        let mut current = match start_port {
            Some(p) => p,
            None => {
                // arrive at the first port of this pattern
                let p = calls[phase];
                self.transit(p);
                p
            }
        };
        if start_port.is_some() {
            phase = calls.iter().position(|&c| c == current).unwrap_or(0);
        }
        let first = self.rng.random_range(lo..=hi);
        self.dwell(current, first);
        let mut made = 1;
        while made < max_calls {
            let next = match archetype {
                Archetype::Ferry | Archetype::Liner => {
                    phase = (phase + 1) % calls.len();
                    calls[phase]
                }
                Archetype::Tramp => {
                    let others: Vec<usize> = calls.iter().copied().filter(|&c| c != current).collect();
                    others[self.rng.random_range(0..others.len())]
                }
            };
            let stay = self.rng.random_range(lo..=hi);
            if self.points.len() - base + self.transit_estimate(next) + stay > budget {
                break;
            }
            self.transit(next);
            self.dwell(next, stay);
            current = next;
            made += 1;
        }
        let used = self.points.len() - base;
        if used < self.cfg.min_points {
            // lengthen the final stay
            self.stay(self.cfg.min_points - used, self.heading);
            self.dwells.last_mut().unwrap().1 = self.points.len() - 1;
        }
    }

    fn finish(self, archetype: Archetype) -> SynthVessel {
        SynthVessel {
            archetype,
            sequence: PositionSequence { mmsi: self.mmsi, vessel_type: self.vessel_type, points: self.points },
            schedule: self.schedule,
            dwells: self.dwells,
            switch: None,
        }
    }
}

fn vessel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn start_voyage<'a>(cfg: &'a FleetConfig, plan: &'a PortPlan, mmsi: String, vessel_type: VesselType, index: u64) -> Voyage<'a> {
    let mut rng = vessel_rng(cfg.seed, index);
    let t = START_TIME + rng.random_range(0..86_400);
    Voyage {
        cfg,
        plan,
        rng,
        mmsi,
        vessel_type,
        lat: 0.0,
        lon: 0.0,
        heading: 0.0,
        t,
        points: Vec::new(),
        schedule: Vec::new(),
        dwells: Vec::new(),
    }
}

fn place_at(v: &mut Voyage<'_>, port: usize) {
    let p = v.plan.ports[port].position;
    let bearing = v.rng.random_range(0.0..360.0);
    let offset = v.rng.random_range(0.0..150.0);
    (v.lat, v.lon) = dead_reckon(p.lat, p.lon, bearing, offset);
}

/// Mmsi of the `index`-th generated vessel.
pub fn synth_mmsi(index: usize) -> String {
    format!("{}", 412_000_000 + index)
}

pub fn gen_vessel(cfg: &FleetConfig, plan: &PortPlan, archetype: Archetype, index: usize) -> Result<SynthVessel> {
    let mut v = start_voyage(cfg, plan, synth_mmsi(index), archetype.vessel_type(), index as u64);
    let calls = plan.calls(archetype);
    let start = calls[v.rng.random_range(0..calls.len())];
    place_at(&mut v, start);
    v.sail(archetype, Some(start), cfg.max_points, usize::MAX);
    Ok(v.finish(archetype))
}

/// Vessel that follows `first` for one budget of fixes, then `second` for
/// as many port calls. Returns the vessel and the index of its first fix
/// under `second`.
pub fn gen_switching_vessel(
    cfg: &FleetConfig,
    plan: &PortPlan,
    first: Archetype,
    second: Archetype,
    index: usize,
) -> Result<(SynthVessel, usize)> {
    cfg.validate()?;
    plan.validate()?;
    let mut v = start_voyage(cfg, plan, synth_mmsi(index), first.vessel_type(), index as u64);
    let calls = plan.calls(first);
    let start = calls[v.rng.random_range(0..calls.len())];
    place_at(&mut v, start);
    v.sail(first, Some(start), cfg.max_points, usize::MAX);
    let switch = v.points.len();
    let calls = v.schedule.len();
    v.sail(second, None, usize::MAX, calls);
    let mut vessel = v.finish(first);
    vessel.switch = Some((second, switch));
    Ok((vessel, switch))
}

/// Ordered pairs of distinct archetypes.
pub fn switch_pairs() -> Vec<(Archetype, Archetype)> {
    let mut out = Vec::new();
    for a in Archetype::ALL {
        for b in Archetype::ALL {
            if a != b {
                out.push((a, b));
            }
        }
    }
    out
}

/// Generates `counts` vessels per archetype, ferries first, then the
/// switching vessels.
pub fn gen_fleet(cfg: &FleetConfig, plan: &PortPlan) -> Result<Fleet> {
    cfg.validate()?;
    plan.validate()?;
    let mut vessels = Vec::new();
    for (a, &n) in Archetype::ALL.iter().zip(&cfg.counts) {
        for _ in 0..n {
            vessels.push(gen_vessel(cfg, plan, *a, vessels.len())?);
        }
    }
    let pairs = switch_pairs();
    for i in 0..cfg.switching {
        let (first, second) = pairs[i % pairs.len()];
        vessels.push(gen_switching_vessel(cfg, plan, first, second, vessels.len())?.0);
    }
    Ok(Fleet { plan: plan.clone(), vessels })
}

/// Writes fixes in the default ingestion schema.
pub fn write_ais_csv<W: Write>(out: W, sequences: &[PositionSequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mmsi", "timestamp", "lat", "lon", "sog", "cog", "vessel_type"])?;
    for s in sequences {
        for p in &s.points {
            w.write_record([
                p.mmsi.clone(),
                p.timestamp.to_string(),
                p.lat.to_string(),
                p.lon.to_string(),
                p.sog.to_string(),
                p.cog.to_string(),
                p.vessel_type.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
