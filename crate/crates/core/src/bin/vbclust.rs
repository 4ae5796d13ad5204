use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;

use vbclust::cluster::{fit, Checkpoint, ClusterModel, Dataset, ModelConfig, TrainConfig};
use vbclust::encoder::Featurizer;
use vbclust::ingest::{ingest, read_sequences_jsonl, write_sequences_jsonl, IngestConfig};
use vbclust::io::read_jsonl;
use vbclust::labelseq::{build_label_sequences, read_label_jsonl, read_ports_csv, write_label_jsonl, write_ports_csv, BehaviorFilter};
use vbclust::metrics::{parse_k_range, score, sweep_k, write_sweep_csv, Scores, SweepRow};
use vbclust::model::{PositionSequence, SubTrajectory};
use vbclust::plot::trace_svg;
use vbclust::segment::{attach_segments, represent, SegmentRecord, SegmenterConfig};
use vbclust::synth::{gen_fleet, gen_regime_track, write_ais_csv, FleetConfig, PortPlan, Regime, TrackNoise};
use vbclust::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Behavior-aware clustering of AIS vessel trajectories.
#[derive(Debug, Parser)]
#[command(name = "vbclust", version)]
struct Cli {
    /// TOML file with one table per command; flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean raw AIS CSV into per-vessel position sequences (JSONL).
    Ingest(IngestArgs),
    /// Cut sequences into behavior-labelled slices (JSONL).
    Segment(SegmentArgs),
    /// Match mooring slices to ports and emit label sequences (JSONL).
    Label(LabelArgs),
    /// Train a predictive clustering model and write a checkpoint.
    Train(TrainArgs),
    /// Score trajectory clusters against ground truth, optionally over a K range.
    Evaluate(EvaluateArgs),
    /// Per-step cluster history of one vessel, with an optional SVG timeline.
    Trace(TraceArgs),
    /// Generate a synthetic fleet or planted regime tracks.
    Synth(SynthArgs),
}

/// Fills unset fields from a lower-priority layer.
trait Layer: Sized {
    fn fill(&mut self, lower: Self);
}

macro_rules! layered {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl Layer for $t {
            fn fill(&mut self, lower: Self) {
                $( if self.$f.is_none() { self.$f = lower.$f; } )*
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Level {
    Subtraj,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SynthKind {
    Fleet,
    Regimes,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct IngestArgs {
    /// Raw AIS CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seconds; larger gaps split a track.
    #[arg(long)]
    max_gap: Option<i64>,
    #[arg(long)]
    min_points: Option<usize>,
    /// Odd median window for outlier repair.
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Knots per second above which a speed sample is repaired.
    #[arg(long)]
    speed_jump_limit: Option<f64>,
}
layered!(IngestArgs { input, out, max_gap, min_points, smooth_window, speed_jump_limit });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct SegmentArgs {
    /// Position sequences JSONL.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Points per pre-segment.
    #[arg(long)]
    u: Option<usize>,
    /// Window radius in pre-segments.
    #[arg(long)]
    lambda: Option<usize>,
    /// Change-point score threshold (accepts `inf`).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    speed_sign_fraction: Option<f64>,
    /// Knots.
    #[arg(long)]
    stop_speed: Option<f64>,
    /// Knots squared.
    #[arg(long)]
    speed_var_threshold: Option<f64>,
    /// Degrees.
    #[arg(long)]
    turn_threshold: Option<f64>,
    #[arg(long)]
    peak_radius: Option<usize>,
}
layered!(SegmentArgs {
    input,
    out,
    u,
    lambda,
    delta,
    speed_sign_fraction,
    stop_speed,
    speed_var_threshold,
    turn_threshold,
    peak_radius
});

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct LabelArgs {
    /// Position sequences JSONL (the input of `segment`).
    #[arg(long)]
    sequences: Option<PathBuf>,
    /// Segment JSONL produced by `segment`.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Ports CSV `port_id,lat,lon`.
    #[arg(long)]
    ports: Option<PathBuf>,
    /// Matching radius in metres.
    #[arg(long)]
    sigma: Option<f64>,
    /// Behavior selecting label slices: `stopped`, `any`, a speed or turn
    /// status, or a full code such as `accelerating_left`.
    #[arg(long)]
    behavior: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the categorized port table here.
    #[arg(long)]
    ports_out: Option<PathBuf>,
}
layered!(LabelArgs { sequences, segments, ports, sigma, behavior, out, ports_out });

/// Inputs of the model commands. Label level reads `--labels`; sub-trajectory
/// level reads `--sequences` and `--segments`.
struct DataArgs {
    labels: Option<PathBuf>,
    sequences: Option<PathBuf>,
    segments: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct TrainArgs {
    #[arg(long, value_enum)]
    level: Option<Level>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    sequences: Option<PathBuf>,
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    assigner_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the KL term.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// LSTM hidden size.
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden units of the assigner and predictor.
    #[arg(long)]
    mlp_hidden: Option<usize>,
    /// Dropout keep probability.
    #[arg(long)]
    keep: Option<f64>,
    /// Let the KL gradient reach the assigner.
    #[arg(long)]
    kl_to_assigner: Option<bool>,
    /// Let the KL gradient reach the predictor.
    #[arg(long)]
    kl_to_predictor: Option<bool>,
    /// Label-level virtual clock in seconds.
    #[arg(long)]
    grid_step: Option<i64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint (JSON).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}
layered!(TrainArgs {
    level,
    labels,
    sequences,
    segments,
    k,
    epochs,
    pretrain_epochs,
    assigner_epochs,
    lr,
    alpha,
    batch_size,
    hidden,
    mlp_hidden,
    keep,
    kl_to_assigner,
    kl_to_predictor,
    grid_step,
    seed,
    checkpoint,
    history
});

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    sequences: Option<PathBuf>,
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Ground-truth column: `vessel_type` from the inputs, or a column of `--truth-file`.
    #[arg(long)]
    truth: Option<String>,
    /// CSV keyed by `mmsi` holding the truth column.
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Retrain for every K in the inclusive range `a..b`.
    #[arg(long)]
    sweep_k: Option<String>,
    /// Score CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes `mmsi,cluster` per trajectory.
    #[arg(long)]
    assignments: Option<PathBuf>,
}
layered!(EvaluateArgs { checkpoint, labels, sequences, segments, truth, truth_file, sweep_k, out, assignments });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    sequences: Option<PathBuf>,
    #[arg(long)]
    segments: Option<PathBuf>,
    #[arg(long)]
    mmsi: Option<String>,
    /// Trace JSONL; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG timeline of cluster against relative time.
    #[arg(long)]
    plot: Option<PathBuf>,
}
layered!(TraceArgs { checkpoint, labels, sequences, segments, mmsi, out, plot });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Option<SynthKind>,
    /// Directory receiving `ais.csv`, `ports.csv` and `truth.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    ferries: Option<usize>,
    #[arg(long)]
    liners: Option<usize>,
    #[arg(long)]
    tramps: Option<usize>,
    /// Vessels that change archetype half way.
    #[arg(long)]
    switching: Option<usize>,
    /// Planted regime tracks (`--kind regimes`).
    #[arg(long)]
    tracks: Option<usize>,
    /// Knots.
    #[arg(long)]
    sog_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}
layered!(SynthArgs { kind, out_dir, ferries, liners, tramps, switching, tracks, sog_noise, seed });

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    ingest: IngestArgs,
    segment: SegmentArgs,
    label: LabelArgs,
    train: TrainArgs,
    evaluate: EvaluateArgs,
    trace: TraceArgs,
    synth: SynthArgs,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Parameter(format!("config {}: {e}", p.display())))
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Parameter(format!("missing required option --{flag}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?))
}

/// File when given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_ingest(a: IngestArgs) -> Result<()> {
    let defaults = IngestConfig::default();
    let config = IngestConfig {
        schema: defaults.schema,
        max_gap: a.max_gap.unwrap_or(defaults.max_gap),
        min_points: a.min_points.unwrap_or(defaults.min_points),
        smooth_window: a.smooth_window.unwrap_or(defaults.smooth_window),
        speed_jump_limit: a.speed_jump_limit.unwrap_or(defaults.speed_jump_limit),
    };
    let input = required(a.input, "input")?;
    let (sequences, summary) = ingest(open(&input)?, &config)?;
    let mut out = sink(a.out.as_deref())?;
    write_sequences_jsonl(&mut out, &sequences)?;
    out.flush()?;
    info!(
        "rows read {}, dropped {} (malformed {}, out of bounds {}), vessels {}, slices {}, sequences emitted {}",
        summary.parse.rows_read,
        summary.parse.dropped(),
        summary.parse.malformed,
        summary.parse.out_of_bounds,
        summary.vessels,
        summary.slices,
        summary.emitted
    );
    if sequences.is_empty() {
        warn!("no sequences emitted");
    }
    Ok(())
}

fn segmenter_config(a: &SegmentArgs) -> Result<SegmenterConfig> {
    let d = SegmenterConfig::default();
    let cfg = SegmenterConfig {
        stride: a.u.unwrap_or(d.stride),
        lambda: a.lambda.unwrap_or(d.lambda),
        delta: a.delta.unwrap_or(d.delta),
        speed_sign_fraction: a.speed_sign_fraction.unwrap_or(d.speed_sign_fraction),
        stop_speed: a.stop_speed.unwrap_or(d.stop_speed),
        speed_var_threshold: a.speed_var_threshold.unwrap_or(d.speed_var_threshold),
        turn_threshold: a.turn_threshold.unwrap_or(d.turn_threshold),
        peak_radius: a.peak_radius.unwrap_or(d.peak_radius),
        scale_floor: d.scale_floor,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_segment(a: SegmentArgs) -> Result<()> {
    let cfg = segmenter_config(&a)?;
    let sequences = read_sequences_jsonl(open(&required(a.input, "input")?)?)?;
    let mut out = sink(a.out.as_deref())?;
    let mut total = 0;
    for (i, seq) in sequences.iter().enumerate() {
        for s in represent(seq, &cfg)? {
            serde_json::to_writer(&mut out, &SegmentRecord::new(i, &s))?;
            out.write_all(b"\n")?;
            total += 1;
        }
    }
    out.flush()?;
    info!("{} sequences, {total} segments", sequences.len());
    if total == 0 {
        warn!("no segments emitted");
    }
    Ok(())
}

fn load_segmented(sequences: &Path, segments: &Path) -> Result<Vec<(PositionSequence, Vec<SubTrajectory>)>> {
    let seqs = read_sequences_jsonl(open(sequences)?)?;
    let records: Vec<SegmentRecord> = read_jsonl(open(segments)?)?;
    let segs = attach_segments(&seqs, &records)?;
    Ok(seqs.into_iter().zip(segs).collect())
}

fn run_label(a: LabelArgs) -> Result<()> {
    let sigma = a.sigma.unwrap_or(vbclust::labelseq::DEFAULT_SIGMA_M);
    let filter: BehaviorFilter = a.behavior.as_deref().unwrap_or("stopped").parse()?;
    let registry = read_ports_csv(open(&required(a.ports, "ports")?)?, sigma)?;
    let items = load_segmented(&required(a.sequences, "sequences")?, &required(a.segments, "segments")?)?;
    let (labels, categorized) = build_label_sequences(&items, &registry, filter);
    let mut out = sink(a.out.as_deref())?;
    write_label_jsonl(&mut out, &labels)?;
    out.flush()?;
    if let Some(p) = a.ports_out {
        let mut w = create(&p)?;
        write_ports_csv(&mut w, &categorized)?;
        w.flush()?;
    }
    let points: usize = labels.iter().map(|l| l.label_points.len()).sum();
    info!("{} trajectories, {} label sequences, {points} label points", items.len(), labels.len());
    if labels.is_empty() {
        warn!("no slice matched a port within {sigma} m");
    }
    Ok(())
}

fn data_args(labels: Option<PathBuf>, sequences: Option<PathBuf>, segments: Option<PathBuf>) -> DataArgs {
    DataArgs { labels, sequences, segments }
}

enum Source<'a> {
    /// Categories taken from the data.
    Fresh { grid_step: Option<i64> },
    /// Featurization of a trained model.
    Model(&'a Featurizer),
}

fn load_dataset(level: Level, d: &DataArgs, source: Source<'_>) -> Result<Dataset> {
    let data = match level {
        Level::Label => {
            let path = d.labels.as_deref().ok_or_else(|| Error::Parameter("label level needs --labels".into()))?;
            let labels = read_label_jsonl(open(path)?)?;
            let (categories, grid_step) = match source {
                Source::Model(Featurizer::Label { categories, grid_step }) => (Some(categories.clone()), *grid_step),
                Source::Model(Featurizer::SubTrajectory) => (None, None),
                Source::Fresh { grid_step } => (None, grid_step),
            };
            Dataset::from_labels(&labels, categories, grid_step)?
        }
        Level::Subtraj => {
            let (Some(seqs), Some(segs)) = (&d.sequences, &d.segments) else {
                return Err(Error::Parameter("sub-trajectory level needs --sequences and --segments".into()));
            };
            Dataset::from_subtraj(&load_segmented(seqs, segs)?)?
        }
    };
    if data.samples.is_empty() {
        return Err(Error::Data("no input sequences".into()));
    }
    Ok(data)
}

fn level_of(f: &Featurizer) -> Level {
    match f {
        Featurizer::SubTrajectory => Level::Subtraj,
        Featurizer::Label { .. } => Level::Label,
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let level = a.level.unwrap_or(Level::Label);
    let k = required(a.k, "k")?;
    let td = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(td.learning_rate),
        epochs: a.epochs.unwrap_or(td.epochs),
        pretrain_epochs: a.pretrain_epochs.unwrap_or(td.pretrain_epochs),
        assigner_epochs: a.assigner_epochs.unwrap_or(td.assigner_epochs),
        batch_size: a.batch_size.unwrap_or(td.batch_size),
        kl_weight: a.alpha.unwrap_or(td.kl_weight),
        kl_to_assigner: a.kl_to_assigner.unwrap_or(td.kl_to_assigner),
        kl_to_predictor: a.kl_to_predictor.unwrap_or(td.kl_to_predictor),
        seed: a.seed.unwrap_or(td.seed),
        ..td
    };
    cfg.validate()?;
    let md = ModelConfig::default();
    let model_cfg = ModelConfig {
        num_clusters: k,
        hidden_dim: a.hidden.unwrap_or(md.hidden_dim),
        mlp_hidden: a.mlp_hidden.unwrap_or(md.mlp_hidden),
        dropout_keep: a.keep.unwrap_or(md.dropout_keep),
    };
    model_cfg.validate()?;
    let checkpoint = required(a.checkpoint, "checkpoint")?;
    let data = load_dataset(level, &data_args(a.labels, a.sequences, a.segments), Source::Fresh { grid_step: a.grid_step })?;
    info!("training K={k} on {} sequences, {} steps ({} level)", data.samples.len(), data.num_steps(), data.featurizer.level_name());
    let (model, report) = fit(&data, &model_cfg, &cfg)?;
    if let Some(p) = &a.history {
        let mut w = create(p)?;
        writeln!(w, "epoch,train_total,l1,l2,kl,total")?;
        for e in &report.history {
            writeln!(w, "{},{},{},{},{},{}", e.epoch, e.train_total, e.eval.l1, e.eval.l2, e.eval.kl, e.eval.total)?;
        }
        w.flush()?;
    }
    if let (Some(first), Some(last)) = (report.history.first(), report.history.last()) {
        info!("total loss {:.6} -> {:.6} over {} epochs", first.eval.total, last.eval.total, report.history.len());
    }
    let clusters = model.cluster_samples(&data)?;
    let truth: Vec<_> = data.samples.iter().map(|s| s.vessel_type).collect();
    if let Ok(s) = score(&clusters, &truth) {
        info!("training fit vs vessel type: purity {:.4}, nmi {:.4}, ari {:.4}", s.purity, s.nmi, s.ari);
    }
    Checkpoint::new(model, Some(cfg), Some(report)).save(&checkpoint)?;
    info!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn load_checkpoint(path: Option<PathBuf>) -> Result<Checkpoint> {
    let path = required(path, "checkpoint")?;
    Checkpoint::load(&path).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn model_dataset(model: &ClusterModel, d: &DataArgs) -> Result<Dataset> {
    load_dataset(level_of(&model.featurizer), d, Source::Model(&model.featurizer))
}

/// Ground truth per sample, from the inputs or from a CSV keyed by mmsi.
fn truth_labels(data: &Dataset, column: &str, file: Option<&Path>) -> Result<Vec<String>> {
    let Some(path) = file else {
        if column != "vessel_type" {
            return Err(Error::Parameter(format!("truth column `{column}` needs --truth-file")));
        }
        return Ok(data.samples.iter().map(|s| s.vessel_type.to_string()).collect());
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} has no `{name}` column", path.display())))
    };
    let (key, col) = (find("mmsi")?, find(column)?);
    let mut by_mmsi = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        by_mmsi.insert(row[key].to_string(), row[col].to_string());
    }
    data.samples
        .iter()
        .map(|s| {
            by_mmsi
                .get(&s.mmsi)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no truth for mmsi {} in {}", s.mmsi, path.display())))
        })
        .collect()
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(a.checkpoint)?;
    let data = model_dataset(&ck.model, &data_args(a.labels, a.sequences, a.segments))?;
    let truth = truth_labels(&data, a.truth.as_deref().unwrap_or("vessel_type"), a.truth_file.as_deref())?;
    let rows = match &a.sweep_k {
        Some(range) => {
            let ks = parse_k_range(range)?;
            let train_cfg = ck
                .train_config
                .clone()
                .ok_or_else(|| Error::Data("checkpoint carries no training configuration to sweep with".into()))?;
            sweep_k(&data, &ks, &ck.model.model_config(), &train_cfg, &truth)?
        }
        None => {
            let clusters = ck.model.cluster_samples(&data)?;
            if let Some(p) = &a.assignments {
                let mut w = create(p)?;
                writeln!(w, "mmsi,cluster")?;
                for (s, c) in data.samples.iter().zip(&clusters) {
                    writeln!(w, "{},{c}", s.mmsi)?;
                }
                w.flush()?;
            }
            let scores: Scores = score(&clusters, &truth)?;
            vec![SweepRow { k: ck.model.num_clusters(), scores: Some(scores) }]
        }
    };
    let mut out = sink(a.out.as_deref())?;
    write_sweep_csv(&rows, &mut out)?;
    out.flush()?;
    if rows.iter().all(|r| r.scores.is_none()) {
        return Err(Error::Numeric("every K in the sweep failed".into()));
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct TraceLine<'a> {
    mmsi: &'a str,
    seq: usize,
    step: usize,
    #[serde(flatten)]
    inner: &'a vbclust::cluster::TraceStep,
}

fn run_trace(a: TraceArgs) -> Result<()> {
    let ck = load_checkpoint(a.checkpoint)?;
    let mmsi = required(a.mmsi, "mmsi")?;
    let data = model_dataset(&ck.model, &data_args(a.labels, a.sequences, a.segments))?;
    let traces = data
        .samples
        .iter()
        .filter(|s| s.mmsi == mmsi)
        .map(|s| ck.model.trace(&s.mmsi, &s.steps))
        .collect::<Result<Vec<_>>>()?;
    if traces.is_empty() {
        return Err(Error::Data(format!("mmsi {mmsi} not found in the inputs")));
    }
    let mut out = sink(a.out.as_deref())?;
    for (seq, t) in traces.iter().enumerate() {
        for (step, inner) in t.steps.iter().enumerate() {
            serde_json::to_writer(&mut out, &TraceLine { mmsi: &t.mmsi, seq, step, inner })?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    if let Some(p) = a.plot {
        if traces.len() > 1 {
            warn!("{mmsi} has {} sequences; plotting the first", traces.len());
        }
        std::fs::write(&p, trace_svg(&traces[0], ck.model.num_clusters()))?;
    }
    for t in &traces {
        info!("{}: {} steps, clusters {:?}", t.mmsi, t.steps.len(), t.clusters());
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let dir = required(a.out_dir, "out-dir")?;
    std::fs::create_dir_all(&dir)?;
    let seed = a.seed.unwrap_or(0);
    let sog_noise = a.sog_noise.unwrap_or(0.3);
    match a.kind.unwrap_or(SynthKind::Fleet) {
        SynthKind::Fleet => {
            let d = FleetConfig::default();
            let cfg = FleetConfig {
                counts: [a.ferries.unwrap_or(d.counts[0]), a.liners.unwrap_or(d.counts[1]), a.tramps.unwrap_or(d.counts[2])],
                switching: a.switching.unwrap_or(0),
                sog_noise,
                seed,
                ..d
            };
            let plan = PortPlan::grid();
            let fleet = gen_fleet(&cfg, &plan)?;
            let seqs: Vec<PositionSequence> = fleet.vessels.iter().map(|v| v.sequence.clone()).collect();
            let mut w = create(&dir.join("ais.csv"))?;
            write_ais_csv(&mut w, &seqs)?;
            w.flush()?;
            let registry = vbclust::labelseq::PortRegistry::new(plan.ports.clone(), vbclust::labelseq::DEFAULT_SIGMA_M)?;
            let mut w = create(&dir.join("ports.csv"))?;
            write_ports_csv(&mut w, &registry)?;
            w.flush()?;
            let mut w = csv::Writer::from_writer(create(&dir.join("truth.csv"))?);
            w.write_record(["mmsi", "archetype", "vessel_type", "schedule", "second_archetype", "switch_index"])?;
            for v in &fleet.vessels {
                let (second, at) = match v.switch {
                    Some((b, i)) => (b.name().to_string(), i.to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    v.sequence.mmsi.as_str(),
                    v.archetype.name(),
                    v.sequence.vessel_type.as_str(),
                    &v.schedule.join(";"),
                    &second,
                    &at,
                ])?;
            }
            w.flush()?;
            info!("{} vessels, {} fixes written to {}", fleet.vessels.len(), seqs.iter().map(|s| s.len()).sum::<usize>(), dir.display());
        }
        SynthKind::Regimes => {
            use rand::{Rng, SeedableRng};
            let n = a.tracks.unwrap_or(20);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut seqs = Vec::new();
            let mut w = csv::Writer::from_writer(create(&dir.join("truth.csv"))?);
            w.write_record(["mmsi", "boundaries", "labels"])?;
            for i in 0..n {
                let straight = vbclust::model::BehaviorLabel::from_code(8).expect("uniform straight");
                let right = vbclust::model::BehaviorLabel::from_code(7).expect("uniform right");
                let regimes = [
                    Regime::canonical(straight, rng.random_range(100..=150), 90.0),
                    Regime::canonical(right, rng.random_range(100..=150), 90.0),
                    Regime::canonical(vbclust::model::BehaviorLabel::STOPPED, rng.random_range(100..=150), 180.0),
                ];
                let mmsi = vbclust::synth::synth_mmsi(i);
                let t = gen_regime_track(&mmsi, &regimes, TrackNoise { sog_std: sog_noise, ..TrackNoise::default() }, rng.random())?;
                let bounds: Vec<String> = t.boundaries.iter().map(|b| b.to_string()).collect();
                let labels: Vec<String> = t.labels.iter().map(|l| l.name()).collect();
                w.write_record([mmsi.as_str(), &bounds.join(";"), &labels.join(";")])?;
                seqs.push(t.sequence);
            }
            w.flush()?;
            let mut out = create(&dir.join("ais.csv"))?;
            write_ais_csv(&mut out, &seqs)?;
            out.flush()?;
            info!("{n} planted regime tracks written to {}", dir.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(mut a) => {
            a.fill(std::mem::take(&mut file.ingest));
            run_ingest(a)
        }
        Command::Segment(mut a) => {
            a.fill(std::mem::take(&mut file.segment));
            run_segment(a)
        }
        Command::Label(mut a) => {
            a.fill(std::mem::take(&mut file.label));
            run_label(a)
        }
        Command::Train(mut a) => {
            a.fill(std::mem::take(&mut file.train));
            run_train(a)
        }
        Command::Evaluate(mut a) => {
            a.fill(std::mem::take(&mut file.evaluate));
            run_evaluate(a)
        }
        Command::Trace(mut a) => {
            a.fill(std::mem::take(&mut file.trace));
            run_trace(a)
        }
        Command::Synth(mut a) => {
            a.fill(std::mem::take(&mut file.synth));
            run_synth(a)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
