//! Picking N representative frames out of a recording.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{is_valid_frame, CalibrationMap, Error, HandMask, Recording, Result, TactileFrame};

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Uniform sampling without replacement.
    Random { seed: u64 },
    /// k-means (k = n) over masked taxels, keeping the frame nearest each centroid.
    Cluster { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub n: usize,
    pub strategy: SelectionStrategy,
    pub min_supra_taxels: usize,
}

impl SelectionConfig {
    pub fn new(n: usize, strategy: SelectionStrategy) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(SelectionConfig { n, strategy, min_supra_taxels: 1 })
    }

    pub fn with_min_supra_taxels(mut self, k: usize) -> Self {
        self.min_supra_taxels = k;
        self
    }
}

/// Frames of `rec` that show contact, in recording order.
pub fn valid_frames<'a>(rec: &'a Recording, calib: &CalibrationMap, k: usize) -> Vec<&'a TactileFrame> {
    rec.frames().iter().filter(|f| is_valid_frame(f, calib, k)).collect()
}

pub fn select_frames(
    rec: &Recording,
    calib: &CalibrationMap,
    mask: &HandMask,
    cfg: &SelectionConfig,
) -> Result<Vec<TactileFrame>> {
    if cfg.n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let valid = valid_frames(rec, calib, cfg.min_supra_taxels);
    if valid.len() < cfg.n {
        return Err(Error::NotEnoughValidFrames { available: valid.len(), requested: cfg.n });
    }
    match cfg.strategy {
        SelectionStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, valid.len(), cfg.n).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| valid[i].clone()).collect())
        }
        SelectionStrategy::Cluster { seed } => {
            let taxels = mask.indices();
            let points: Vec<Vec<f32>> =
                valid.iter().map(|f| taxels.iter().map(|&i| f.values()[i] as f32).collect()).collect();
            let km = kmeans(&points, cfg.n, seed);
            let mut taken = vec![false; points.len()];
            let mut out = Vec::with_capacity(cfg.n);
            for c in &km.centroids {
                let best = (0..points.len())
                    .filter(|&i| !taken[i])
                    .min_by(|&a, &b| sq_dist(&points[a], c).total_cmp(&sq_dist(&points[b], c)))
                    .expect("at least n points");
                taken[best] = true;
                out.push(valid[best].clone());
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f32>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

fn nearest(p: &[f32], centroids: &[Vec<f32>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("k >= 1")
}

/// Lloyd's algorithm with k-means++ seeding, squared Euclidean distance and
/// at most 100 iterations. Deterministic for a given seed.
pub fn kmeans(points: &[Vec<f32>], k: usize, seed: u64) -> KMeans {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centroids);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // re-seed an empty cluster at the point worst served
                let far = (0..points.len())
                    .max_by(|&a, &b| nearest(&points[a], &centroids).1.total_cmp(&nearest(&points[b], &centroids).1))
                    .unwrap();
                centroids[j] = points[far].clone();
            } else {
                centroids[j] = sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect();
            }
        }
    }
    KMeans { centroids, assignment, iterations }
}
