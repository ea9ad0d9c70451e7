//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use poseface::geometry::{project_template, render_heatmaps, LandmarkSet, CANONICAL_TEMPLATE_3D, FACE_FRAME};
use poseface::landmark_ae::{pretrain, AutoEncoderConfig, AutoEncoderModel, PretrainConfig};
use poseface::losses::{BatchLabels, TrainBatch};
use poseface::metrics::{Probe, ScoreSet};
use poseface::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Sum over all column pairs of the squared cosine, square-rooted.
pub fn brute_orth(a: &Tensor, b: &Tensor) -> f64 {
    let col = |t: &Tensor, j: usize| (0..t.rows()).map(|i| t.get(i, j)).collect::<Vec<f64>>();
    let mut s = 0.0;
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            let (u, v) = (col(a, i), col(b, j));
            let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            s += (dot / (nu * nv)).powi(2);
        }
    }
    s.sqrt()
}

/// Scores on a coarse grid (so ties happen) with genuine pairs shifted up.
pub fn random_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let n = rng.gen_range(4..=500);
    let grid = [0.01, 0.05, 0.2][rng.gen_range(0..3)];
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&g| {
            let raw: f64 = rng.gen::<f64>() + if g { 0.3 } else { 0.0 };
            (raw / grid).round() * grid
        })
        .collect();
    ScoreSet::new(scores, labels).unwrap()
}

/// `(far, tar)` at every distinct score, counted from scratch, after a
/// leading `(0, 0)`.
pub fn curve(set: &ScoreSet) -> Vec<(f64, f64)> {
    let g = set.labels.iter().filter(|&&l| l).count() as f64;
    let i = set.labels.len() as f64 - g;
    let mut ts = set.scores.clone();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in ts {
        let acc = |want: bool| set.scores.iter().zip(&set.labels).filter(|&(&s, &l)| l == want && s >= t).count() as f64;
        pts.push((acc(false) / i, acc(true) / g));
    }
    pts
}

pub fn oracle_auc(set: &ScoreSet) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for (a, &la) in set.scores.iter().zip(&set.labels) {
        if !la {
            continue;
        }
        for (b, &lb) in set.scores.iter().zip(&set.labels) {
            if lb {
                continue;
            }
            pairs += 1.0;
            sum += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    sum / pairs
}

pub fn oracle_eer(set: &ScoreSet) -> f64 {
    let pts = curve(set);
    for k in 0..pts.len() - 1 {
        let (f0, t0) = pts[k];
        let (f1, t1) = pts[k + 1];
        let d0 = f0 - (1.0 - t0);
        let d1 = f1 - (1.0 - t1);
        if d0 == 0.0 {
            return f0;
        }
        if d0 < 0.0 && d1 >= 0.0 {
            return f0 + (-d0 / (d1 - d0)) * (f1 - f0);
        }
    }
    panic!("no crossing")
}

pub fn oracle_tar(set: &ScoreSet, far: f64) -> (f64, bool) {
    let impostors = set.labels.iter().filter(|&&l| !l).count() as f64;
    let pts = curve(set);
    let mut a = 0;
    for (k, p) in pts.iter().enumerate() {
        if p.0 <= far {
            a = k;
        }
    }
    let saturated = far * impostors < 1.0;
    if saturated || a + 1 == pts.len() || pts[a].0 == far {
        return (pts[a].1, saturated);
    }
    let (p, q) = (pts[a], pts[a + 1]);
    (p.1 + (far - p.0) / (q.0 - p.0) * (q.1 - p.1), saturated)
}

pub fn oracle_kfold(set: &ScoreSet, folds: &[usize], k: usize) -> Vec<f64> {
    (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..set.len()).filter(|&j| folds[j] != f).collect();
            let test: Vec<usize> = (0..set.len()).filter(|&j| folds[j] == f).collect();
            let acc = |idx: &[usize], t: f64| {
                idx.iter().filter(|&&j| (set.scores[j] > t) == set.labels[j]).count() as f64 / idx.len() as f64
            };
            let mut vals: Vec<f64> = train.iter().map(|&j| set.scores[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            let mut cands = vec![vals[0] - 1.0];
            for w in vals.windows(2) {
                cands.push((w[0] + w[1]) / 2.0);
            }
            cands.push(*vals.last().unwrap());
            let best = cands.iter().map(|&t| acc(&train, t)).fold(f64::NEG_INFINITY, f64::max);
            let t = *cands.iter().find(|&&t| acc(&train, t) == best).unwrap();
            acc(&test, t)
        })
        .collect()
}

pub fn tiny_ae() -> AutoEncoderModel {
    let cfg = AutoEncoderConfig {
        height: 8,
        width: 8,
        hidden: vec![16],
        code_dim: 4,
        ..AutoEncoderConfig::default()
    };
    let stacks: Vec<_> = (0..6)
        .map(|k| {
            let yaw = -75.0 + 30.0 * k as f64;
            let lm = LandmarkSet::new(project_template(&CANONICAL_TEMPLATE_3D, yaw), FACE_FRAME, yaw, 0.0, 0.0).unwrap();
            render_heatmaps(&lm, 8, 8, 1.0).unwrap()
        })
        .collect();
    let model = AutoEncoderModel::new(&cfg, 3).unwrap();
    let pc = PretrainConfig { epochs: 1, ..PretrainConfig::default() };
    pretrain(model, &cfg, &stacks, &[], &pc).unwrap().0
}

pub fn toy_batch(rng: &mut ChaCha8Rng, ae: &AutoEncoderModel, d_in: usize) -> TrainBatch {
    let n = 8;
    let yaws: Vec<f64> = (0..n).map(|_| rng.gen_range(-90.0..90.0)).collect();
    let heatmaps = yaws
        .iter()
        .map(|&y| {
            let lm = LandmarkSet::new(project_template(&CANONICAL_TEMPLATE_3D, y), FACE_FRAME, y, 0.0, 0.0).unwrap();
            render_heatmaps(&lm, ae.frame().0, ae.frame().1, 1.0).unwrap()
        })
        .collect();
    TrainBatch {
        observations: random(rng, n, d_in),
        labels: BatchLabels::new((0..n).map(|i| i % 4).collect(), yaws.iter().map(|&y| poseface::geometry::adaptive_ratio(y)).collect())
            .unwrap(),
        heatmaps,
    }
}


/// Nearest gallery identity by cosine for each probe, ties to the lower id.
pub fn oracle_rank1(gallery: &[(u32, Vec<f64>)], probes: &[Probe]) -> Vec<u32> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    probes
        .iter()
        .map(|p| {
            let q = unit(&p.embedding);
            let mut best = (f64::NEG_INFINITY, u32::MAX);
            for (id, g) in gallery {
                let c: f64 = q.iter().zip(unit(g)).map(|(a, b)| a * b).sum();
                if c > best.0 || (c == best.0 && *id < best.1) {
                    best = (c, *id);
                }
            }
            best.1
        })
        .collect()
}

pub fn random_probes(rng: &mut ChaCha8Rng) -> (Vec<(u32, Vec<f64>)>, Vec<Probe>) {
    let n_ids = rng.gen_range(2..20u32);
    let dim = rng.gen_range(2..8);
    let vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let gallery: Vec<(u32, Vec<f64>)> = (0..n_ids).map(|k| (k, vec(rng))).collect();
    let probes = (0..rng.gen_range(1..500))
        .map(|_| Probe {
            identity: rng.gen_range(0..n_ids),
            yaw: rng.gen_range(-90.0..90.0),
            embedding: vec(rng),
        })
        .collect();
    (gallery, probes)
}
