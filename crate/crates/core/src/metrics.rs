//! External clustering scores: purity, adjusted Rand index, normalized
//! mutual information. Natural logarithms throughout.

use std::collections::BTreeMap;

use log::warn;

use crate::cluster::{fit, Dataset, ModelConfig, TrainConfig};
use crate::error::{Error, Result};

/// Cluster-by-class contingency table with its marginals.
#[derive(Debug, Clone)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl Contingency {
    pub fn new<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<Self> {
        if assignments.len() != truth.len() {
            return Err(Error::Data(format!(
                "assignments and truth differ in length ({} vs {})",
                assignments.len(),
                truth.len()
            )));
        }
        if assignments.is_empty() {
            return Err(Error::Data("cannot score an empty partition".into()));
        }
        let rows = index_of(assignments);
        let cols = index_of(truth);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (a, b) in assignments.iter().zip(truth) {
            counts[rows[a]][cols[b]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Contingency { counts, row_sums, col_sums, total: assignments.len() as u64 })
    }
}

fn index_of<T: Ord>(items: &[T]) -> BTreeMap<&T, usize> {
    let mut map = BTreeMap::new();
    for it in items {
        let next = map.len();
        map.entry(it).or_insert(next);
    }
    map
}

pub fn purity<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<f64> {
    let c = Contingency::new(assignments, truth)?;
    let hit: u64 = c.counts.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    Ok(hit as f64 / c.total as f64)
}

fn choose2(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

pub fn ari<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<f64> {
    let c = Contingency::new(assignments, truth)?;
    if c.total < 2 {
        return Err(Error::Data("adjusted Rand index needs at least 2 items".into()));
    }
    let index: f64 = c.counts.iter().flatten().map(|&n| choose2(n)).sum();
    let sum_a: f64 = c.row_sums.iter().map(|&n| choose2(n)).sum();
    let sum_b: f64 = c.col_sums.iter().map(|&n| choose2(n)).sum();
    let expected = sum_a * sum_b / choose2(c.total);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions are all-singletons or both a single block
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn entropy(sums: &[u64], total: u64) -> f64 {
    let n = total as f64;
    sums.iter().filter(|&&s| s > 0).map(|&s| {
        let p = s as f64 / n;
        -p * p.ln()
    }).sum()
}

/// Mutual information between the two partitions (nats).
pub fn mutual_information<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<f64> {
    let c = Contingency::new(assignments, truth)?;
    Ok(mi_of(&c))
}

fn mi_of(c: &Contingency) -> f64 {
    let n = c.total as f64;
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.row_sums[i] as f64 * c.col_sums[j] as f64)).ln();
            }
        }
    }
    mi
}

/// `2·MI / (H(clusters) + H(classes))`; 1 when both partitions are a single block.
pub fn nmi<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<f64> {
    let c = Contingency::new(assignments, truth)?;
    let h = entropy(&c.row_sums, c.total) + entropy(&c.col_sums, c.total);
    if h == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * mi_of(&c) / h).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub purity: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score<A: Ord, B: Ord>(assignments: &[A], truth: &[B]) -> Result<Scores> {
    Ok(Scores { purity: purity(assignments, truth)?, nmi: nmi(assignments, truth)?, ari: ari(assignments, truth)? })
}

/// One line of a K sweep; `scores` is `None` when training failed for that K.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub scores: Option<Scores>,
}

pub const SWEEP_HEADER: &str = "K,purity,nmi,ari";

/// Writes `K,purity,nmi,ari`; failed rows carry `NaN`.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        match r.scores {
            Some(s) => writeln!(out, "{},{},{},{}", r.k, s.purity, s.nmi, s.ari)?,
            None => writeln!(out, "{},NaN,NaN,NaN", r.k)?,
        }
    }
    Ok(())
}

/// Parses an inclusive range `a..b` (or a single `k`).
pub fn parse_k_range(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Parameter(format!("bad K range `{text}`, expected a..b"));
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse::<usize>().map_err(|_| bad())?, b.trim().parse::<usize>().map_err(|_| bad())?),
        None => {
            let k = text.trim().parse::<usize>().map_err(|_| bad())?;
            (k, k)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

/// Trains one model per K with the same seeds and scores its trajectory
/// clusters against `truth`. A failing K yields an empty row.
pub fn sweep_k<T: Ord>(
    data: &Dataset,
    ks: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    truth: &[T],
) -> Result<Vec<SweepRow>> {
    if truth.len() != data.samples.len() {
        return Err(Error::Data(format!("{} truth labels for {} sequences", truth.len(), data.samples.len())));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let cfg = ModelConfig { num_clusters: k, ..model_cfg.clone() };
            let scores = fit(data, &cfg, train_cfg)
                .and_then(|(model, _)| model.cluster_samples(data))
                .and_then(|clusters| score(&clusters, truth));
            match scores {
                Ok(s) => SweepRow { k, scores: Some(s) },
                Err(e) => {
                    warn!("K={k}: {e}");
                    SweepRow { k, scores: None }
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_hand_cases() {
        assert_eq!(purity(&['a', 'a', 'b'], &['x', 'y', 'y']).unwrap(), 2.0 / 3.0);
        assert_eq!(purity(&[0; 8], &[0, 0, 0, 0, 1, 1, 1, 1]).unwrap(), 0.5);
        assert_eq!(purity(&[5, 5, 7, 7], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn identical_partitions_score_one() {
        let a = [0, 0, 1, 2, 2, 2];
        let b = ["p", "p", "q", "r", "r", "r"];
        let s = score(&a, &b).unwrap();
        assert_eq!((s.purity, s.nmi, s.ari), (1.0, 1.0, 1.0));
    }

    #[test]
    fn independent_product_grid_has_zero_nmi() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..3 {
            for j in 0..4 {
                for _ in 0..2 {
                    a.push(i);
                    b.push(j);
                }
            }
        }
        assert_eq!(mutual_information(&a, &b).unwrap().abs(), 0.0);
        assert!(nmi(&a, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn single_block_partitions() {
        assert_eq!(nmi(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(purity(&[1, 2], &[1]).is_err());
        assert!(purity::<u8, u8>(&[], &[]).is_err());
        assert!(ari(&[1], &[1]).is_err());
        assert!(nmi(&[1, 2, 3], &[1, 2]).is_err());
    }

    fn planted_two_groups() -> (Dataset, Vec<usize>) {
        use crate::cluster::Sample;
        use crate::encoder::{FeatureStep, Featurizer};
        use crate::model::VesselType;
        let mut samples = Vec::new();
        let mut truth = Vec::new();
        for i in 0..12 {
            let g = i % 2;
            let jitter = 0.01 * i as f64;
            let steps = (0..5)
                .map(|j| {
                    let mut features = vec![g as f64 + jitter, 1.0 - g as f64, 0.0, 0.0];
                    features[2 + g] = 1.0;
                    FeatureStep { relative_time: 600 * j, features }
                })
                .collect();
            samples.push(Sample { mmsi: format!("{i}"), vessel_type: VesselType::Other, steps, targets: vec![g; 5] });
            truth.push(g);
        }
        let featurizer = Featurizer::Label { categories: vec!["a".into(), "b".into()], grid_step: None };
        (Dataset { featurizer, samples }, truth)
    }

    #[test]
    fn sweep_rows_follow_the_range() {
        let (data, truth) = planted_two_groups();
        let model = ModelConfig { num_clusters: 2, hidden_dim: 8, mlp_hidden: 6, dropout_keep: 1.0 };
        let train = TrainConfig { epochs: 10, pretrain_epochs: 10, assigner_epochs: 10, seed: 3, ..TrainConfig::default() };
        let rows = sweep_k(&data, &[2], &model, &train, &truth).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].scores.unwrap().purity >= 0.9, "{rows:?}");
        let rows = sweep_k(&data, &[1, 2, 3], &model, &train, &truth).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(rows, sweep_k(&data, &[1, 2, 3], &model, &train, &truth).unwrap());
        assert!(sweep_k(&data, &[2], &model, &train, &truth[1..]).is_err());
        // more clusters than latent points: the row fails, the sweep goes on
        let rows = sweep_k(&data, &[100, 2], &model, &train, &truth).unwrap();
        assert!(rows[0].scores.is_none() && rows[1].scores.is_some());
    }

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_k_range("3").unwrap(), vec![3]);
        assert!(parse_k_range("0..2").is_err());
        assert!(parse_k_range("4..2").is_err());
        assert!(parse_k_range("a..b").is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![
            SweepRow { k: 2, scores: Some(Scores { purity: 1.0, nmi: 0.5, ari: 0.25 }) },
            SweepRow { k: 3, scores: None },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "K,purity,nmi,ari\n2,1,0.5,0.25\n3,NaN,NaN,NaN\n");
    }
}
