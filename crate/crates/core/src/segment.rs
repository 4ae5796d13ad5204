//! Change-point segmentation of a position sequence into behavior slices.
//!
//! Candidates sit every `stride` points. Each candidate is scored by the
//! distance between kinematic features of the `lambda * stride` points on its
//! left and on its right; candidates scoring above `delta` become cuts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_delta, BehaviorLabel, PositionPoint, PositionSequence, SpeedStatus, SubTrajectory, TurnStatus};

pub const NUM_WINDOW_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Points per pre-segment (`u`).
    pub stride: usize,
    /// Window radius in pre-segments (`λ`).
    pub lambda: usize,
    /// Score threshold on normalized features (`δ`).
    pub delta: f64,
    pub speed_sign_fraction: f64,
    /// Knots; segments with a lower mean speed are stopped.
    pub stop_speed: f64,
    /// Knots squared.
    pub speed_var_threshold: f64,
    /// Degrees (`θ`).
    pub turn_threshold: f64,
    /// Keep only candidates whose score is maximal within this many
    /// neighbouring candidates on each side. Zero keeps every candidate.
    pub peak_radius: usize,
    /// Lower bound on the per-feature normalization scale
    /// (mean sog kn, std sog kn, net course deg, mean |course step| deg).
    pub scale_floor: [f64; NUM_WINDOW_FEATURES],
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            stride: 20,
            lambda: 2,
            delta: 1.0,
            speed_sign_fraction: 0.8,
            stop_speed: 10.0,
            speed_var_threshold: 1.0,
            turn_threshold: 15.0,
            peak_radius: 2,
            scale_floor: [1.0, 0.5, 10.0, 1.0],
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.stride < 2 {
            return fail("stride must be at least 2");
        }
        if self.lambda < 1 {
            return fail("lambda must be at least 1");
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return fail("delta must be non-negative");
        }
        if !(self.speed_sign_fraction > 0.5 && self.speed_sign_fraction <= 1.0) {
            return fail("speed_sign_fraction must be in (0.5, 1]");
        }
        if !(self.stop_speed > 0.0 && self.speed_var_threshold > 0.0 && self.turn_threshold > 0.0) {
            return fail("speed and turn thresholds must be positive");
        }
        if self.scale_floor.iter().any(|s| !(*s > 0.0)) {
            return fail("scale floors must be positive");
        }
        Ok(())
    }

    fn half_window(&self) -> usize {
        self.lambda * self.stride
    }
}

/// Interior multiples of `stride`: `stride, 2*stride, ..., stride*(n/stride - 1)`.
pub fn pre_change_points(n: usize, stride: usize) -> Vec<usize> {
    if stride == 0 || n < 2 * stride {
        return Vec::new();
    }
    (1..n / stride).map(|k| k * stride).collect()
}

/// Kinematic summary of a window: mean sog, population std of sog, net
/// course change wrapped to `(-180, 180]`, and mean absolute course step.
pub fn window_features(points: &[PositionPoint]) -> Result<[f64; NUM_WINDOW_FEATURES]> {
    if points.len() < 2 {
        return Err(Error::Degenerate { needed: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.sog).sum::<f64>() / n;
    let var = points.iter().map(|p| (p.sog - mean).powi(2)).sum::<f64>() / n;
    let net = wrap_delta(points[points.len() - 1].cog - points[0].cog);
    let turning = points.windows(2).map(|w| wrap_delta(w[1].cog - w[0].cog).abs()).sum::<f64>() / (n - 1.0);
    Ok([mean, var.sqrt(), net, turning])
}

/// Score of every candidate whose two windows fit inside the sequence, in
/// index order. Course features of windows slower than `stop_speed` are
/// zeroed. Features are z-normalized with statistics pooled over all scored
/// windows; each scale is bounded below by `scale_floor`.
pub fn change_point_scores(sequence: &PositionSequence, config: &SegmenterConfig) -> Vec<(usize, f64)> {
    let pts = &sequence.points;
    let half = config.half_window();
    let candidates: Vec<usize> = pre_change_points(pts.len(), config.stride)
        .into_iter()
        .filter(|&p| p >= half && p + half < pts.len())
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let features = |w: &[PositionPoint]| {
        let mut f = window_features(w).expect("window has lambda*stride+1 points");
        if f[0] < config.stop_speed {
            // course is meaningless at rest
            f[2] = 0.0;
            f[3] = 0.0;
        }
        f
    };
    let windows: Vec<([f64; 4], [f64; 4])> =
        candidates.iter().map(|&p| (features(&pts[p - half..=p]), features(&pts[p..=p + half]))).collect();
    let scale = pooled_scale(&windows, &config.scale_floor);
    candidates
        .into_iter()
        .zip(&windows)
        .map(|(p, (l, r))| {
            let d2: f64 = (0..NUM_WINDOW_FEATURES).map(|f| ((l[f] - r[f]) / scale[f]).powi(2)).sum();
            (p, d2.sqrt())
        })
        .collect()
}

fn pooled_scale(windows: &[([f64; 4], [f64; 4])], floor: &[f64; 4]) -> [f64; 4] {
    let count = (2 * windows.len()) as f64;
    let mut scale = [0.0; NUM_WINDOW_FEATURES];
    for f in 0..NUM_WINDOW_FEATURES {
        let values = windows.iter().flat_map(|(l, r)| [l[f], r[f]]);
        let mean = values.clone().sum::<f64>() / count;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        scale[f] = var.sqrt().max(floor[f]);
    }
    scale
}

/// Score of a single candidate, or `None` if its windows leave the sequence.
pub fn change_point_score(sequence: &PositionSequence, candidate: usize, config: &SegmenterConfig) -> Option<f64> {
    change_point_scores(sequence, config).into_iter().find(|&(p, _)| p == candidate).map(|(_, s)| s)
}

/// Strategy producing the cut indices of a sequence. Each cut starts a new slice.
pub trait Segmenter {
    fn cut_points(&self, sequence: &PositionSequence) -> Vec<usize>;
}

/// Windowed change-point segmenter.
#[derive(Debug, Clone, Default)]
pub struct WindowSegmenter {
    pub config: SegmenterConfig,
}

impl Segmenter for WindowSegmenter {
    fn cut_points(&self, sequence: &PositionSequence) -> Vec<usize> {
        let scores = change_point_scores(sequence, &self.config);
        let radius = self.config.peak_radius;
        (0..scores.len())
            .filter(|&i| {
                let (_, s) = scores[i];
                if !(s > self.config.delta) {
                    return false;
                }
                if radius == 0 {
                    return true;
                }
                // plateaus resolve to their first candidate
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(scores.len() - 1);
                scores[lo..i].iter().all(|&(_, o)| s > o) && scores[i + 1..=hi].iter().all(|&(_, o)| s >= o)
            })
            .map(|i| scores[i].0)
            .collect()
    }
}

/// Splits a sequence at the given cut indices into exclusive, exhaustive slices.
pub fn split_at_cuts(sequence: &PositionSequence, cuts: &[usize]) -> Vec<SubTrajectory> {
    if sequence.is_empty() {
        return Vec::new();
    }
    let mut bounds: Vec<usize> = cuts.iter().copied().filter(|&c| c > 0 && c < sequence.len()).collect();
    bounds.sort_unstable();
    bounds.dedup();
    let mut out = Vec::with_capacity(bounds.len() + 1);
    let mut start = 0;
    for &c in &bounds {
        out.push(SubTrajectory::from_parent(sequence, start, c - 1));
        start = c;
    }
    out.push(SubTrajectory::from_parent(sequence, start, sequence.len() - 1));
    out
}

/// Cuts a sequence with the windowed segmenter. Slices are unlabeled.
pub fn segment(sequence: &PositionSequence, config: &SegmenterConfig) -> Vec<SubTrajectory> {
    segment_with(sequence, &WindowSegmenter { config: config.clone() })
}

pub fn segment_with<S: Segmenter + ?Sized>(sequence: &PositionSequence, segmenter: &S) -> Vec<SubTrajectory> {
    split_at_cuts(sequence, &segmenter.cut_points(sequence))
}

/// Speed decision ladder: stop test, sign-consistency test, variance test,
/// then the sign of the end-to-end speed change.
pub fn classify_speed(points: &[PositionPoint], config: &SegmenterConfig) -> Result<SpeedStatus> {
    if points.len() < 2 {
        return Err(Error::Degenerate { needed: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.sog).sum::<f64>() / n;
    if mean < config.stop_speed {
        return Ok(SpeedStatus::Stopped);
    }
    let steps = (points.len() - 1) as f64;
    let rising = points.windows(2).filter(|w| w[1].sog > w[0].sog).count() as f64;
    let falling = points.windows(2).filter(|w| w[1].sog < w[0].sog).count() as f64;
    if rising / steps >= config.speed_sign_fraction {
        return Ok(SpeedStatus::Accelerating);
    }
    if falling / steps >= config.speed_sign_fraction {
        return Ok(SpeedStatus::Decelerating);
    }
    let var = points.iter().map(|p| (p.sog - mean).powi(2)).sum::<f64>() / n;
    if var < config.speed_var_threshold {
        return Ok(SpeedStatus::Uniform);
    }
    let change = points[points.len() - 1].sog - points[0].sog;
    Ok(if change > 0.0 {
        SpeedStatus::Accelerating
    } else if change < 0.0 {
        SpeedStatus::Decelerating
    } else {
        SpeedStatus::Uniform
    })
}

/// Turn status from the net course change; `|Δ| == θ` is straight.
pub fn classify_turn(points: &[PositionPoint], speed: SpeedStatus, config: &SegmenterConfig) -> Result<TurnStatus> {
    if speed == SpeedStatus::Stopped {
        return Err(Error::Contract("turn status is undefined for a stopped segment".into()));
    }
    if points.len() < 2 {
        return Err(Error::Degenerate { needed: 2, got: points.len() });
    }
    let delta = wrap_delta(points[points.len() - 1].cog - points[0].cog);
    Ok(if delta > config.turn_threshold {
        TurnStatus::Right
    } else if delta < -config.turn_threshold {
        TurnStatus::Left
    } else {
        TurnStatus::Straight
    })
}

pub fn classify(points: &[PositionPoint], config: &SegmenterConfig) -> Result<BehaviorLabel> {
    let speed = classify_speed(points, config)?;
    if speed == SpeedStatus::Stopped {
        return Ok(BehaviorLabel::STOPPED);
    }
    let turn = classify_turn(points, speed, config)?;
    BehaviorLabel::new(speed, turn)
}

/// Attaches a behavior label to every slice.
pub fn label(mut segments: Vec<SubTrajectory>, config: &SegmenterConfig) -> Result<Vec<SubTrajectory>> {
    for s in &mut segments {
        s.behavior = Some(classify(&s.points, config)?);
    }
    Ok(segments)
}

/// Segments and labels one sequence. Sequences shorter than two points are
/// rejected as degenerate.
pub fn represent(sequence: &PositionSequence, config: &SegmenterConfig) -> Result<Vec<SubTrajectory>> {
    config.validate()?;
    label(segment(sequence, config), config)
}

/// JSONL wire form of a labelled slice. `seq` is the ordinal of the parent
/// sequence in its input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub mmsi: String,
    pub seq: usize,
    pub start: usize,
    pub end: usize,
    pub behavior: BehaviorLabel,
    pub start_time: i64,
    pub end_time: i64,
}

impl SegmentRecord {
    pub fn new(seq: usize, s: &SubTrajectory) -> Self {
        SegmentRecord {
            mmsi: s.parent_mmsi.clone(),
            seq,
            start: s.start_index,
            end: s.end_index,
            behavior: s.behavior.expect("labelled segment"),
            start_time: s.points[0].timestamp,
            end_time: s.points[s.points.len() - 1].timestamp,
        }
    }
}

/// Rebuilds labelled slices from records against their parent sequences.
pub fn attach_segments(sequences: &[PositionSequence], records: &[SegmentRecord]) -> Result<Vec<Vec<SubTrajectory>>> {
    let mut out: Vec<Vec<SubTrajectory>> = vec![Vec::new(); sequences.len()];
    for r in records {
        let parent = sequences
            .get(r.seq)
            .ok_or_else(|| Error::Data(format!("segment refers to missing sequence {}", r.seq)))?;
        if parent.mmsi != r.mmsi || r.start > r.end || r.end >= parent.len() {
            return Err(Error::Data(format!("segment {}..{} does not fit sequence {} ({})", r.start, r.end, r.seq, r.mmsi)));
        }
        let mut s = SubTrajectory::from_parent(parent, r.start, r.end);
        s.behavior = Some(r.behavior);
        out[r.seq].push(s);
    }
    for (segs, parent) in out.iter_mut().zip(sequences) {
        segs.sort_by_key(|s| s.start_index);
        let covered = segs.iter().map(|s| s.len()).sum::<usize>();
        let contiguous = segs.windows(2).all(|w| w[0].end_index + 1 == w[1].start_index);
        if !segs.is_empty() && (covered != parent.len() || !contiguous || segs[0].start_index != 0) {
            return Err(Error::Data(format!("segments of {} do not partition the sequence", parent.mmsi)));
        }
    }
    Ok(out)
}
