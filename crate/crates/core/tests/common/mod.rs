#![allow(dead_code)]

use candle_core::{DType, Device};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vreid::distance::FeatureMatrix;
use vreid::eval::ItemLabel;
use vreid::losses::BatchFeatures;

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}

pub fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows, DType::F64, &Device::Cpu).unwrap()
}

pub fn batch(reid: &[Vec<f64>], attr: &[Vec<f64>], p: usize, k: usize) -> BatchFeatures {
    BatchFeatures::new(fm(reid), fm(attr), p, k).unwrap()
}

/// Plain-loop cosine distance, independent of the tensor kernels.
pub fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

pub fn naive_dist(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| naive_cos(a, b)).collect())
        .collect()
}

/// Exhaustive search over every ordered (negative, positive) pair of
/// same-identity rows for the pair maximizing `d(a, n) - d(a, p)`. Ties go to
/// the lexicographically smallest pair.
pub fn enumerate_intra(dist: &[Vec<f64>], person: &[usize], a: usize) -> Option<(usize, usize)> {
    let same: Vec<usize> = (0..person.len()).filter(|&j| j != a && person[j] == person[a]).collect();
    let mut best: Option<((usize, usize), f64)> = None;
    for &n in &same {
        for &p in &same {
            let v = dist[a][n] - dist[a][p];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some(((n, p), v));
            }
        }
    }
    best.map(|(pair, _)| pair)
}

/// Exhaustive batch-hard pair: maximize `d(a, p) - d(a, n)` over same-identity
/// positives and other-identity negatives.
pub fn enumerate_batch_hard(dist: &[Vec<f64>], person: &[usize], a: usize) -> Option<(usize, usize)> {
    let n = person.len();
    let mut best: Option<((usize, usize), f64)> = None;
    for p in (0..n).filter(|&j| j != a && person[j] == person[a]) {
        for q in (0..n).filter(|&j| person[j] != person[a]) {
            let v = dist[a][p] - dist[a][q];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some(((p, q), v));
            }
        }
    }
    best.map(|(pair, _)| pair)
}

pub struct RetrievalCase {
    pub query: Vec<Vec<f64>>,
    pub query_labels: Vec<ItemLabel>,
    pub gallery: Vec<Vec<f64>>,
    pub gallery_labels: Vec<ItemLabel>,
}

pub fn random_retrieval(rng: &mut ChaCha8Rng, nq: usize, ng: usize, dim: usize, ids: u32) -> RetrievalCase {
    let lab = |rng: &mut ChaCha8Rng| ItemLabel {
        person_id: rng.random_range(0..ids),
        camera_id: rng.random_range(0..3),
    };
    let query_labels: Vec<ItemLabel> = (0..nq).map(|_| lab(rng)).collect();
    let mut gallery_labels: Vec<ItemLabel> = (0..ng).map(|_| lab(rng)).collect();
    // Guarantee at least one valid match per query.
    for (i, q) in query_labels.iter().enumerate() {
        gallery_labels[i % ng] = ItemLabel {
            person_id: q.person_id,
            camera_id: (q.camera_id + 1) % 3,
        };
    }
    RetrievalCase {
        query: gaussian_rows(rng, nq, dim),
        query_labels,
        gallery: gaussian_rows(rng, ng, dim),
        gallery_labels,
    }
}

/// Naive per-query evaluation: `(rank-k hits per k, mean AP, skipped)`.
pub fn naive_cmc_map(c: &RetrievalCase, ks: &[usize]) -> (Vec<f64>, f64, usize) {
    let mut hits = vec![0usize; ks.len()];
    let mut aps = Vec::new();
    for (q, ql) in c.query.iter().zip(&c.query_labels) {
        let mut order: Vec<(f64, usize)> = c.gallery.iter().enumerate().map(|(j, g)| (naive_cos(q, g), j)).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let kept: Vec<bool> = order
            .iter()
            .filter(|(_, j)| {
                let g = c.gallery_labels[*j];
                !(g.person_id == ql.person_id && g.camera_id == ql.camera_id)
            })
            .map(|(_, j)| c.gallery_labels[*j].person_id == ql.person_id)
            .collect();
        let relevant = kept.iter().filter(|&&m| m).count();
        if relevant == 0 {
            continue;
        }
        let mut found = 0;
        let mut ap = 0.0;
        for (pos, &m) in kept.iter().enumerate() {
            if m {
                found += 1;
                ap += found as f64 / (pos + 1) as f64;
            }
        }
        aps.push(ap / relevant as f64);
        let first = kept.iter().position(|&m| m).unwrap();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first < k {
                *h += 1;
            }
        }
    }
    let n = aps.len() as f64;
    (
        hits.iter().map(|&h| h as f64 / n).collect(),
        aps.iter().sum::<f64>() / n,
        c.query.len() - aps.len(),
    )
}
