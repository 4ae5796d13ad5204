//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each, with its runtime against the budget.
//! Exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbclust::cluster::{fit, kl_floor, Checkpoint, ClusterModel, Dataset, Example, ModelConfig, Objective, TrainConfig};
use vbclust::encoder::{featurize_label_seq, Featurizer, Normalizer, DEFAULT_DROPOUT_KEEP, DEFAULT_HIDDEN_DIM};
use vbclust::ingest::{ingest, IngestConfig};
use vbclust::labelseq::{build_label_sequences, BehaviorFilter, PortRegistry, DEFAULT_SIGMA_M};
use vbclust::metrics::{ari, nmi, purity, score, sweep_k, SWEEP_HEADER};
use vbclust::model::{
    BehaviorLabel, BerthCategory, LabelSequence, PositionPoint, PositionSequence, SpeedStatus, SubTrajectory, TurnStatus,
    VesselType, NUM_BEHAVIORS,
};
use vbclust::segment::{represent, segment, Segmenter, SegmenterConfig, WindowSegmenter};
use vbclust::synth::{
    gen_fleet, gen_regime_track, gen_switching_vessel, write_ais_csv, Archetype, Fleet, FleetConfig, PortPlan, Regime,
    TrackNoise,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fmt_err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- metrics

/// Adjusted Rand index from the four pair counts, looping over all pairs.
fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (ss * dd - sd * ds) / denom
}

fn plogp_sum(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// NMI through H(A) + H(B) - H(A, B), with joint counts from a dense table.
fn nmi_entropies(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let (mut ca, mut cb) = (vec![0usize; ka], vec![0usize; kb]);
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let (ha, hb) = (plogp_sum(ca.into_iter(), n), plogp_sum(cb.into_iter(), n));
    let mi = ha + hb - plogp_sum(joint.into_iter(), n);
    if ha + hb == 0.0 {
        return 1.0;
    }
    2.0 * mi / (ha + hb)
}

fn purity_brute(a: &[usize], b: &[usize]) -> f64 {
    let clusters: std::collections::BTreeSet<usize> = a.iter().copied().collect();
    let hit: usize = clusters
        .iter()
        .map(|&c| {
            let members: Vec<usize> = a.iter().zip(b).filter(|(x, _)| **x == c).map(|(_, y)| *y).collect();
            members.iter().map(|m| members.iter().filter(|o| *o == m).count()).max().unwrap()
        })
        .sum();
    hit as f64 / a.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(1..=4);
        let c = rng.random_range(1..=4);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        for (name, got, want) in [
            ("purity", purity(&a, &b).map_err(fmt_err)?, purity_brute(&a, &b)),
            ("ari", ari(&a, &b).map_err(fmt_err)?, ari_pairs(&a, &b)),
            ("nmi", nmi(&a, &b).map_err(fmt_err)?, nmi_entropies(&a, &b)),
        ] {
            let err = (got - want).abs();
            ensure!(err <= 1e-12, "case {case}: {name} {got} vs oracle {want}");
            worst = worst.max(err);
        }
        if a.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2 {
            let relabelled: Vec<usize> = a.iter().map(|x| 10 + 3 * x).collect();
            for (name, v) in [("purity", purity(&a, &relabelled)), ("ari", ari(&a, &relabelled)), ("nmi", nmi(&a, &relabelled))] {
                ensure!(v.map_err(fmt_err)? == 1.0, "case {case}: {name} of identical partitions is not 1");
            }
        }
    }
    let fixed: Vec<usize> = (0..60).map(|i| i % 4).collect();
    let mut shuffled = fixed.clone();
    let mut total = 0.0;
    for _ in 0..1000 {
        shuffled.shuffle(&mut rng);
        total += ari(&fixed, &shuffled).map_err(fmt_err)?;
    }
    let mean = total / 1000.0;
    ensure!(mean > -0.05 && mean < 0.05, "mean ARI over shuffles {mean}");
    Ok(format!("max oracle error {worst:.1e}, shuffled mean ARI {mean:+.4}"))
}

// ---------------------------------------------------------------- losses

fn micro_model(k: usize, labels: usize, seed: u64) -> ClusterModel {
    let featurizer = Featurizer::Label { categories: (0..labels).map(|i| format!("c{i}")).collect(), grid_step: None };
    let width = featurizer.input_dim();
    let cfg = ModelConfig { num_clusters: k, hidden_dim: 8, mlp_hidden: 5, dropout_keep: 0.7 };
    ClusterModel::new(featurizer, Normalizer::identity(width), &cfg, seed).unwrap()
}

fn micro_batch(model: &ClusterModel, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| Example {
            inputs: (0..6).map(|_| (0..model.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
            targets: (0..6).map(|_| rng.random_range(0..model.num_labels())).collect(),
        })
        .collect()
}

/// Cross-entropy of a one-hot target against `p`: `-Σ_i y_i log p_i`.
fn cross_entropy(y: usize, p: &[f64]) -> f64 {
    -(0..p.len()).map(|i| if i == y { p[i].ln() } else { 0.0 }).sum::<f64>()
}

fn loss_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in [2usize, 3] {
        for seed in 0..10u64 {
            let m = micro_model(k, 4, 100 * k as u64 + seed);
            let batch = micro_batch(&m, 7 + seed);
            let gbar = m.centroid_predictions();
            let (mut l1, mut l2, mut kl) = (0.0, 0.0, 0.0);
            let steps: usize = batch.iter().map(|e| e.targets.len()).sum();
            for ex in &batch {
                for (z, &y) in m.latents(&ex.inputs).iter().zip(&ex.targets) {
                    let f = m.assign(z);
                    let yhat = m.predict(z);
                    for kk in 0..k {
                        l1 += cross_entropy(y, &yhat) * f[kk];
                        l2 += f[kk] * cross_entropy(y, &gbar[kk]);
                    }
                    let ybar: Vec<f64> = (0..yhat.len()).map(|c| (0..k).map(|kk| f[kk] * gbar[kk][c]).sum()).collect();
                    kl += yhat.iter().zip(&ybar).map(|(&p, &q)| p * (p.max(1e-12).ln() - q.max(1e-12).ln())).sum::<f64>();
                }
            }
            let (l1, l2, kl) = (l1 / batch.len() as f64, l2 / batch.len() as f64, kl / steps as f64);
            let got = m.losses(&batch, &Objective::joint(1.0)).map_err(fmt_err)?;
            for (name, g, w) in [("L1", got.l1, l1), ("L2", got.l2, l2), ("KL", got.kl, kl)] {
                ensure!((g - w).abs() <= 1e-12, "K={k} seed {seed}: {name} {g} vs literal {w}");
                worst = worst.max((g - w).abs());
            }
            ensure!(kl_floor(&gbar[0], &gbar[0]) == 0.0, "KL(p||p) is not zero");
            cases += 1;
        }
    }
    Ok(format!("{cases} instances, max deviation {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let m = micro_model(3, 3, 31);
    let batch = micro_batch(&m, 32);
    let obj = Objective::joint(0.7);
    let (_, grad) = m.gradient(&batch, &obj).map_err(fmt_err)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let names: Vec<&str> = m.tensors().iter().map(|(n, _)| *n).collect();
    for (ti, name) in names.iter().enumerate() {
        for i in 0..m.tensors()[ti].1.data.len() {
            let bump = |d: f64| {
                let mut p = m.clone();
                p.tensors_mut()[ti].1.data[i] += d;
                p.losses(&batch, &obj).unwrap().total
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = grad.tensors()[ti].1.data[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
            ensure!(rel < 1e-4, "{name}[{i}]: numeric {numeric:e} analytic {analytic:e} rel {rel:e}");
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(format!("{checked} parameters, max rel. error {worst:.1e}"))
}

// ---------------------------------------------------------------- segmentation

fn random_sequence(rng: &mut ChaCha8Rng) -> PositionSequence {
    let n = rng.random_range(0..400);
    let blocky = rng.random_bool(0.5);
    let (mut sog, mut cog) = (10.0, 90.0);
    let points = (0..n)
        .map(|i| {
            if !blocky || rng.random_bool(0.02) {
                sog = rng.random_range(0.0..25.0);
                cog = rng.random_range(0.0..360.0);
            }
            PositionPoint {
                mmsi: "r".into(),
                timestamp: 10 * i as i64,
                lat: 30.0,
                lon: 122.0 + 1e-4 * i as f64,
                sog,
                cog,
                vessel_type: VesselType::Other,
            }
        })
        .collect();
    PositionSequence { mmsi: "r".into(), vessel_type: VesselType::Other, points }
}

fn segmentation_recovery() -> Outcome {
    let cfg = SegmenterConfig::default();
    let tolerance = (cfg.lambda * cfg.stride) as i64;
    let segmenter = WindowSegmenter { config: cfg.clone() };
    let (mut hit, mut total) = (0, 0);
    for s in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let regimes = [
            Regime::canonical(BehaviorLabel::from_code(8).unwrap(), rng.random_range(100..=150), 90.0),
            Regime::canonical(BehaviorLabel::from_code(7).unwrap(), rng.random_range(100..=150), 90.0),
            Regime::canonical(BehaviorLabel::STOPPED, rng.random_range(100..=150), 180.0),
        ];
        let t = gen_regime_track("1", &regimes, TrackNoise { sog_std: 0.3, cog_std: 0.5 }, s).map_err(fmt_err)?;
        let cuts = segmenter.cut_points(&t.sequence);
        for &b in &t.boundaries {
            total += 1;
            if cuts.iter().any(|&c| (c as i64 - b as i64).abs() <= tolerance) {
                hit += 1;
            }
        }
    }
    let rate = hit as f64 / total as f64;
    ensure!(rate >= 0.95, "recovered {hit}/{total} boundaries");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..1000 {
        let seq = random_sequence(&mut rng);
        let segs = segment(&seq, &cfg);
        let joined: Vec<&PositionPoint> = segs.iter().flat_map(|s| &s.points).collect();
        ensure!(joined.len() == seq.len() && joined.iter().zip(&seq.points).all(|(a, b)| *a == b), "case {case}: concatenation differs");
        let mut next = 0;
        for s in &segs {
            ensure!(s.start_index == next && !s.is_empty(), "case {case}: segments not contiguous");
            next = s.end_index + 1;
        }
    }
    Ok(format!("recovered {hit}/{total} boundaries within {tolerance} fixes, 1000 concatenations exact"))
}

fn behavior_taxonomy() -> Outcome {
    let cfg = SegmenterConfig::default();
    let mut seen = 0;
    for (i, behavior) in BehaviorLabel::all().enumerate() {
        let t = gen_regime_track("b", &[Regime::canonical(behavior, 120, 45.0)], TrackNoise::default(), 500 + i as u64)
            .map_err(fmt_err)?;
        let got = vbclust::segment::classify(&t.sequence.points, &cfg).map_err(fmt_err)?;
        ensure!(got == behavior, "planted {} labelled {}", behavior.name(), got.name());
        seen += 1;
    }
    ensure!(seen == NUM_BEHAVIORS, "swept {seen} behaviors");
    // mixed tracks through the full segmenter: stops never turn
    let mut stopped = 0;
    for s in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let regimes: Vec<Regime> = (0..4)
            .map(|_| {
                let b = BehaviorLabel::from_code(rng.random_range(0..NUM_BEHAVIORS)).unwrap();
                Regime::canonical(b, rng.random_range(60..=120), rng.random_range(0.0..360.0))
            })
            .collect();
        let t = gen_regime_track("m", &regimes, TrackNoise::default(), s).map_err(fmt_err)?;
        for seg in represent(&t.sequence, &cfg).map_err(fmt_err)? {
            let b = seg.behavior.unwrap();
            if b.speed() == SpeedStatus::Stopped {
                stopped += 1;
                ensure!(b.turn() == TurnStatus::None, "stopped segment carries {:?}", b.turn());
            } else {
                ensure!(b.turn() != TurnStatus::None, "moving segment without turn status");
            }
        }
    }
    Ok(format!("{seen}/10 behaviors, {stopped} stopped segments without turn status"))
}

// ---------------------------------------------------------------- label sequences

fn represented(fleet: &Fleet) -> Result<Vec<(PositionSequence, Vec<SubTrajectory>)>, String> {
    let cfg = SegmenterConfig::default();
    fleet.vessels.iter().map(|v| Ok((v.sequence.clone(), represent(&v.sequence, &cfg).map_err(fmt_err)?))).collect()
}

fn label_sequences() -> Outcome {
    let plan = PortPlan::grid();
    let ferries = gen_fleet(&FleetConfig { counts: [10, 0, 0], ..FleetConfig::default() }, &plan).map_err(fmt_err)?;
    let items = represented(&ferries)?;
    let registry = PortRegistry::new(plan.ports.clone(), DEFAULT_SIGMA_M).map_err(fmt_err)?;
    let (labels, _) = build_label_sequences(&items, &registry, BehaviorFilter::default());
    ensure!(labels.len() == 10, "{} ferry label sequences", labels.len());
    let mut mismatches = 0;
    for (v, l) in ferries.vessels.iter().zip(&labels) {
        let ports: Vec<&str> = l.label_points.iter().map(|p| p.port_id.as_str()).collect();
        let alternating = ports.len() >= 2 && ports.windows(2).all(|w| w[0] != w[1]);
        let two_ports = ports.iter().all(|p| *p == "P0" || *p == "P1");
        if !alternating || !two_ports || ports != v.schedule {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} ferries with mismatching label sequences");

    let fleet = gen_fleet(&FleetConfig::default(), &plan).map_err(fmt_err)?;
    let items = represented(&fleet)?;
    let (_, categorized) = build_label_sequences(&items, &registry, BehaviorFilter::default());
    for a in Archetype::ALL {
        let ids = match a {
            Archetype::Ferry => &plan.ferry,
            Archetype::Liner => &plan.liner,
            Archetype::Tramp => &plan.tramp,
        };
        for &i in ids {
            let id = &plan.ports[i].id;
            let got = categorized.get(id).unwrap().category;
            ensure!(got == BerthCategory::Type(a.vessel_type()), "port {id} categorized {got:?}");
        }
    }

    let mut counts = Vec::new();
    for sigma in [0.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0] {
        let reg = registry.with_sigma(sigma).map_err(fmt_err)?;
        let (seqs, _) = build_label_sequences(&items, &reg, BehaviorFilter::default());
        counts.push(seqs.iter().map(|s| s.label_points.len()).sum::<usize>());
    }
    ensure!(counts.windows(2).all(|w| w[0] <= w[1]), "label point counts not monotone in sigma: {counts:?}");
    ensure!(counts[0] == 0, "sigma 0 matched {} points", counts[0]);
    Ok(format!("0 mismatches over 10 ferries, 9 ports categorized, counts by sigma {counts:?}"))
}

// ---------------------------------------------------------------- end to end

fn vbclust(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vbclust"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(fmt_err)?;
    if !out.status.success() {
        return Err(format!("vbclust {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fmt_err)?;
    let d = tmp.path();
    vbclust(d, &["synth", "--out-dir", "fleet", "--seed", "0"])?;
    vbclust(d, &["ingest", "--input", "fleet/ais.csv", "--out", "seqs.jsonl", "--min-points", "100"])?;
    vbclust(d, &["segment", "--input", "seqs.jsonl", "--out", "segs.jsonl"])?;
    vbclust(d, &["label", "--sequences", "seqs.jsonl", "--segments", "segs.jsonl", "--ports", "fleet/ports.csv", "--out", "labels.jsonl"])?;
    vbclust(d, &["train", "--labels", "labels.jsonl", "--k", "3", "--checkpoint", "model.json"])?;
    let truth = ["--truth", "archetype", "--truth-file", "fleet/truth.csv"];
    let mut args = vec!["evaluate", "--checkpoint", "model.json", "--labels", "labels.jsonl"];
    args.extend_from_slice(&truth);
    let csv = vbclust(d, &args)?;
    let mut lines = csv.lines();
    ensure!(lines.next() == Some(SWEEP_HEADER), "unexpected header in {csv}");
    let row: Vec<f64> = lines.next().ok_or("no score row")?.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect();
    let (p, a) = (row[1], row[3]);
    ensure!(p >= 0.9 && a >= 0.7, "purity {p:.3}, ARI {a:.3}");

    args.extend_from_slice(&["--sweep-k", "2..5"]);
    let sweep = vbclust(d, &args)?;
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    ensure!(rows.len() == 4, "sweep emitted {} rows", rows.len());
    ensure!(rows.iter().all(|r| !r.contains("NaN")), "failed sweep rows: {rows:?}");
    Ok(format!("purity {p:.3}, NMI {:.3}, ARI {a:.3}; sweep 2..5 gave {} rows", row[2], rows.len()))
}

// ---------------------------------------------------------------- evolution trace

fn evolution_trace() -> Outcome {
    let plan = PortPlan::grid();
    let fcfg = FleetConfig { switching: 6, ..FleetConfig::default() };
    let fleet = gen_fleet(&fcfg, &plan).map_err(fmt_err)?;
    let (switcher, switch) = gen_switching_vessel(&fcfg, &plan, Archetype::Ferry, Archetype::Tramp, 99).map_err(fmt_err)?;
    let mut items = represented(&fleet)?;
    let held_out = switcher.sequence.mmsi.clone();
    items.push((switcher.sequence.clone(), represent(&switcher.sequence, &SegmenterConfig::default()).map_err(fmt_err)?));
    let registry = PortRegistry::new(plan.ports.clone(), DEFAULT_SIGMA_M).map_err(fmt_err)?;
    let (labels, _) = build_label_sequences(&items, &registry, BehaviorFilter::default());
    let (train, traced): (Vec<LabelSequence>, Vec<LabelSequence>) = labels.into_iter().partition(|l| l.mmsi != held_out);
    let traced = traced.first().ok_or("switching vessel has no label points")?;

    let data = Dataset::from_labels(&train, None, None).map_err(fmt_err)?;
    let (model, _) = fit(&data, &ModelConfig { num_clusters: 3, ..ModelConfig::default() }, &TrainConfig::default()).map_err(fmt_err)?;
    let (steps, _) = featurize_label_seq(traced, &model.featurizer.label_names(), None).map_err(fmt_err)?;
    let trace = model.trace(&traced.mmsi, &steps).map_err(fmt_err)?;
    let clusters = trace.clusters();
    let half = clusters.len() / 2;
    let first = vbclust::cluster::majority_vote(&clusters[..half]);
    let second = vbclust::cluster::majority_vote(&clusters[half..]);
    ensure!(first.is_some() && first != second, "halves share majority cluster {first:?}: {clusters:?}");
    Ok(format!("ferry->tramp at fix {switch}: clusters {clusters:?}"))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let run = || -> Result<Vec<String>, String> {
        let plan = PortPlan::grid();
        let fleet = gen_fleet(&FleetConfig { counts: [4, 4, 4], switching: 2, seed: 5, ..FleetConfig::default() }, &plan)
            .map_err(fmt_err)?;
        let mut csv = Vec::new();
        let sequences: Vec<PositionSequence> = fleet.vessels.iter().map(|v| v.sequence.clone()).collect();
        write_ais_csv(&mut csv, &sequences).map_err(fmt_err)?;
        let (ingested, _) = ingest(csv.as_slice(), &IngestConfig { min_points: 100, ..IngestConfig::default() }).map_err(fmt_err)?;
        let cfg = SegmenterConfig::default();
        let items: Vec<(PositionSequence, Vec<SubTrajectory>)> = ingested
            .iter()
            .map(|s| Ok((s.clone(), represent(s, &cfg).map_err(fmt_err)?)))
            .collect::<Result<_, String>>()?;
        let registry = PortRegistry::new(plan.ports.clone(), DEFAULT_SIGMA_M).map_err(fmt_err)?;
        let (labels, categorized) = build_label_sequences(&items, &registry, BehaviorFilter::default());
        let data = Dataset::from_labels(&labels, None, None).map_err(fmt_err)?;
        let mcfg = ModelConfig { num_clusters: 3, hidden_dim: 24, mlp_hidden: 12, ..ModelConfig::default() };
        let tcfg = TrainConfig { epochs: 5, pretrain_epochs: 3, assigner_epochs: 3, seed: 9, ..TrainConfig::default() };
        let (model, report) = fit(&data, &mcfg, &tcfg).map_err(fmt_err)?;
        let clusters = model.cluster_samples(&data).map_err(fmt_err)?;
        let truth: Vec<VesselType> = data.samples.iter().map(|s| s.vessel_type).collect();
        let traces: Vec<_> = data.samples.iter().map(|s| model.trace(&s.mmsi, &s.steps)).collect::<Result<_, _>>().map_err(fmt_err)?;
        let sweep = sweep_k(&data, &[2, 3], &mcfg, &tcfg, &truth).map_err(fmt_err)?;
        let sub = Dataset::from_subtraj(&items[..4]).map_err(fmt_err)?;
        let (sub_model, _) = fit(&sub, &ModelConfig { num_clusters: 2, hidden_dim: 8, mlp_hidden: 6, ..ModelConfig::default() }, &TrainConfig {
            epochs: 1,
            pretrain_epochs: 1,
            assigner_epochs: 1,
            ..tcfg.clone()
        })
        .map_err(fmt_err)?;
        Ok(vec![
            format!("{:?}", fleet.vessels),
            String::from_utf8(csv).unwrap(),
            format!("{ingested:?}"),
            format!("{items:?}"),
            format!("{labels:?} {:?}", categorized.ports()),
            Checkpoint::new(model, Some(tcfg), Some(report)).to_json().map_err(fmt_err)?,
            format!("{clusters:?} {:?}", score(&clusters, &truth).map_err(fmt_err)?),
            format!("{traces:?}"),
            format!("{sweep:?}"),
            Checkpoint::new(sub_model, None, None).to_json().map_err(fmt_err)?,
        ])
    };
    let (a, b) = (run()?, run()?);
    let stages = ["synth", "csv", "ingest", "segment", "label", "train", "cluster", "trace", "sweep", "subtraj train"];
    for ((x, y), stage) in a.iter().zip(&b).zip(stages) {
        ensure!(x == y, "{stage} differs between runs");
    }
    Ok(format!("{} stages bit-identical", stages.len()))
}

// ---------------------------------------------------------------- protocol

fn protocol() -> Outcome {
    let m = ModelConfig::default();
    let t = TrainConfig::default();
    ensure!(DEFAULT_HIDDEN_DIM == 150 && m.hidden_dim == 150, "encoder hidden size {}", m.hidden_dim);
    ensure!(m.mlp_hidden == 50, "MLP hidden size {}", m.mlp_hidden);
    ensure!(DEFAULT_DROPOUT_KEEP == 0.7 && m.dropout_keep == 0.7, "dropout {}", m.dropout_keep);
    ensure!(t.learning_rate == 1e-3 && t.beta1 == 0.9 && t.beta2 == 0.999, "Adam settings {t:?}");
    ensure!(BehaviorLabel::all().count() == 10, "behavior count");
    ensure!(SWEEP_HEADER == "K,purity,nmi,ari", "sweep header {SWEEP_HEADER}");
    Ok("published scores need the original AIS data; settings, metrics and K sweep reproduced".into())
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("protocol reproduced structurally", Duration::from_secs(1), protocol),
        ("metric oracles", Duration::from_secs(10), metric_oracles),
        ("loss double-sum oracles", Duration::from_secs(5), loss_oracles),
        ("gradient check", Duration::from_secs(60), gradient_check),
        ("segmentation recovery", Duration::from_secs(30), segmentation_recovery),
        ("behavior taxonomy", Duration::from_secs(5), behavior_taxonomy),
        ("label-sequence correctness", Duration::from_secs(10), label_sequences),
        ("end-to-end clustering", Duration::from_secs(600), end_to_end),
        ("evolution trace", Duration::from_secs(120), evolution_trace),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name} [{:.2}s / {}s]: {detail}", elapsed.as_secs_f64(), budget.as_secs()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{:.2}s / {}s]: {why}", elapsed.as_secs_f64(), budget.as_secs());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
