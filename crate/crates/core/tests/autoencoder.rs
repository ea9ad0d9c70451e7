//! Landmark autoencoder: overfitting, pose separation and the frozen
//! contract, on heatmaps drawn from the synthetic generator.

use std::sync::OnceLock;

use poseface::geometry::{HeatmapStack, LandmarkSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use poseface::landmark_ae::{pretrain, AutoEncoderConfig, AutoEncoderModel, PretrainConfig};
use poseface::synthdata::{DatasetSpec, Generator};
use poseface::tensor::{Sgd, SgdConfig};
use poseface::Error;

fn cfg() -> AutoEncoderConfig {
    AutoEncoderConfig {
        hidden: vec![64],
        code_dim: 16,
        ..AutoEncoderConfig::default()
    }
}

fn generator() -> &'static Generator {
    static G: OnceLock<Generator> = OnceLock::new();
    G.get_or_init(|| Generator::new(&DatasetSpec::default()).unwrap())
}

fn stack(identity: u32, yaw: f64) -> HeatmapStack {
    cfg().render(&generator().landmarks(identity, yaw).unwrap()).unwrap()
}

fn stacks(n: usize, salt: u32) -> Vec<HeatmapStack> {
    (0..n)
        .map(|i| {
            let k = (i as u32 * 7 + salt) % 64;
            let yaw = -90.0 + 180.0 * ((i * 37 + salt as usize) % 101) as f64 / 100.0;
            stack(k, yaw)
        })
        .collect()
}

fn trained() -> &'static (AutoEncoderModel, f64, f64) {
    static M: OnceLock<(AutoEncoderModel, f64, f64)> = OnceLock::new();
    M.get_or_init(|| {
        let pc = PretrainConfig {
            epochs: 12,
            ..PretrainConfig::default()
        };
        let (m, r) = pretrain(AutoEncoderModel::new(&cfg(), 1).unwrap(), &cfg(), &stacks(256, 0), &stacks(64, 3), &pc).unwrap();
        (m, r.initial_holdout, r.final_holdout)
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn overfits_one_sample() {
    let c = cfg();
    let mut m = AutoEncoderModel::new(&c, 2).unwrap();
    let h = stack(0, 20.0);
    let initial = m.mean_loss(&[&h], c.lambda_h).unwrap();
    let mut sgd = Sgd::new(SgdConfig {
        learning_rate: 1e-3,
        momentum: 0.9,
        weight_decay: 0.0,
        schedule: vec![],
    })
    .unwrap();
    for _ in 0..500 {
        m.train_step(&[&h], c.lambda_h, &mut sgd, 0).unwrap();
    }
    let last = m.mean_loss(&[&h], c.lambda_h).unwrap();
    assert!(last < 0.05 * initial, "{initial} -> {last}");
}

#[test]
fn holdout_loss_falls() {
    let (_, initial, last) = trained();
    assert!(last < initial);
}

/// Same identity and yaw, every landmark nudged by a fraction of a pixel.
fn jittered(identity: u32, yaw: f64, rng: &mut ChaCha8Rng) -> HeatmapStack {
    let lm = generator().landmarks(identity, yaw).unwrap();
    let step = lm.frame() / cfg().width as f64;
    let mut pts = *lm.points();
    for p in &mut pts {
        for v in p.iter_mut() {
            *v = (*v + rng.gen_range(-0.4..0.4) * step).clamp(0.0, lm.frame() - 1e-9);
        }
    }
    cfg().render(&LandmarkSet::new(pts, lm.frame(), yaw, 0.0, 0.0).unwrap()).unwrap()
}

#[test]
fn codes_separate_frontal_from_profile() {
    let (m, ..) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut same: Vec<f64> = (0..64u32)
        .map(|k| {
            let y = -85.0 + 170.0 * k as f64 / 63.0;
            dist(&m.encode(&stack(k, y)).unwrap(), &m.encode(&jittered(k, y, &mut rng)).unwrap())
        })
        .collect();
    same.sort_by(f64::total_cmp);
    let median = same[same.len() / 2];
    for k in 0..32u32 {
        let d = dist(&m.encode(&stack(k, 0.0)).unwrap(), &m.encode(&stack(k, 90.0)).unwrap());
        assert!(d > median, "identity {k}: {d} vs median {median}");
    }
}

#[test]
fn decoding_is_bounded_and_deterministic() {
    let (m, ..) = trained();
    let zero = vec![0.0; m.code_dim()];
    let a = m.decode(&zero).unwrap();
    assert_eq!(a, m.decode(&zero).unwrap());
    for h in stacks(8, 5) {
        let out = m.reconstruct(&h).unwrap();
        assert!(out.values().iter().all(|&v| v > 0.0 && v < 1.0));
        let c = m.encode(&h).unwrap();
        assert!((c.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn pretrained_weights_are_frozen() {
    let (m, ..) = trained();
    let before = m.to_bytes().unwrap();
    let h = stack(3, -45.0);
    let a = m.encode(&h).unwrap();
    let b = m.encode(&h).unwrap();
    assert_eq!(a, b);
    assert_eq!(m.to_bytes().unwrap(), before);
    let mut copy = m.clone();
    let mut sgd = Sgd::new(SgdConfig::default()).unwrap();
    assert!(matches!(copy.train_step(&[&h], 1.0, &mut sgd, 0), Err(Error::Frozen)));
    assert!(m.pseudo_labels(&[&h]).is_ok());
    assert!(matches!(
        AutoEncoderModel::new(&cfg(), 0).unwrap().pseudo_labels(&[&h]),
        Err(Error::NotPretrained)
    ));
}
