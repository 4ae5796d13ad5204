//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Number of bitwise-distinct vectors.
pub fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// k-means++ seeding: the first centre uniformly, then each next centre with
/// probability proportional to its squared distance from the chosen ones.
pub fn plus_plus_seeds<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Fails when there are fewer distinct
/// points than clusters.
pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(Error::Parameter(format!("only {distinct} distinct points for {k} clusters; choose a smaller K")));
    }
    let dim = points[0].len();
    let mut centroids = plus_plus_seeds(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (best, _) = nearest(p, &centroids);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the point farthest from its centre
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = sq_dist(&points[i], &centroids[assignments[i]]);
                        let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                assignments[far] = c;
                changed = true;
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    Ok(KMeans { centroids, assignments, inertia, iterations })
}

/// Best of `restarts` seeded runs by inertia; ties keep the earlier run.
pub fn kmeans_restarts<R: Rng>(points: &[Vec<f64>], k: usize, max_iter: usize, restarts: usize, rng: &mut R) -> Result<KMeans> {
    let mut best = kmeans(points, k, max_iter, rng)?;
    for _ in 1..restarts {
        let run = kmeans(points, k, max_iter, rng)?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ari;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centres = [[0.0, 0.0, 0.0], [10.0, 0.0, 5.0], [0.0, 10.0, -5.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..30 {
                pts.push(centre.iter().map(|v| v + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn recovers_separable_blobs() {
        let (pts, truth) = blobs(4);
        let km = kmeans(&pts, 3, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(ari(&km.assignments, &truth).unwrap(), 1.0);
    }

    #[test]
    fn centroids_stay_in_bounding_box() {
        let (pts, _) = blobs(5);
        let km = kmeans(&pts, 4, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for c in &km.centroids {
            for d in 0..3 {
                let lo = pts.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(c[d] >= lo && c[d] <= hi);
            }
        }
    }

    #[test]
    fn same_seed_same_result() {
        let (pts, _) = blobs(6);
        let a = kmeans(&pts, 3, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = kmeans(&pts, 3, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restarts_never_raise_inertia() {
        let (pts, _) = blobs(8);
        for seed in 0..5 {
            let single = kmeans(&pts, 5, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let best = kmeans_restarts(&pts, 5, 100, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(best.inertia <= single.inertia);
        }
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0, 1.0]; 10];
        assert!(matches!(kmeans(&pts, 2, 10, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Parameter(_))));
        assert_eq!(kmeans(&pts, 1, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().inertia, 0.0);
    }
}
