//! Acceptance suite: one PASS/FAIL line per criterion. Built without the
//! libtest harness so the lines always reach stdout; exits non-zero if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use poseface::config::RunConfig;
use poseface::gradcheck::run_gradcheck;
use poseface::landmark_ae::{AutoEncoderModel, PretrainReport};
use poseface::losses::{arcface_loss, paa_loss, poseface_loss, BatchLabels, LossWeights};
use poseface::metrics::{auc, eer, kfold_accuracy, rank1, split_folds, tar_at_far, IdentificationProtocol};
use poseface::model::{orth_penalty_value, MarginClassifier, ModelConfig, PoseFaceModel};
use poseface::pipeline::{generate_data, pretrain_autoencoder, run, sweep, RunReport};
use poseface::synthdata::Dataset;
use poseface::tensor::Tensor;
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: poseface::Error) -> String {
    e.to_string()
}

struct Bench {
    cfg: RunConfig,
    data: Dataset,
    ae: AutoEncoderModel,
    ae_report: PretrainReport,
}

fn bench() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = RunConfig::default();
        let data = generate_data(&cfg).expect("default benchmark generates");
        let (ae, ae_report) = pretrain_autoencoder(&cfg, &data).expect("autoencoder pretrains");
        Bench {
            cfg,
            data,
            ae,
            ae_report,
        }
    })
}

fn timed_run(cfg: &RunConfig, data: &Dataset, ae: &AutoEncoderModel) -> std::result::Result<(RunReport, Duration), String> {
    let t = Instant::now();
    let (_, report) = run(cfg, data, Some(ae)).map_err(err)?;
    Ok((report, t.elapsed()))
}

fn profile(r: &RunReport) -> f64 {
    r.eval.rank1.profile_accuracy().unwrap_or(f64::NAN)
}

fn gradients() -> Check {
    let t = Instant::now();
    let rows = run_gradcheck(&[], 0).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let names: Vec<&str> = rows.iter().map(|r| r.case).collect();
    let all = ["paa_loss", "pose_loss", "orth_penalty", "ae_loss", "poseface_loss"]
        .iter()
        .all(|n| names.contains(n));
    ensure(
        all && worst < 1e-4 && secs < 10.0,
        format!("{} cases, worst rel error {worst:.2e}, {secs:.2}s", rows.len()),
    )
}

fn degenerate_reductions() -> Check {
    let mut rng = seeded(23);
    let mut mismatches = 0;
    for _ in 0..20 {
        let f = random(&mut rng, 8, 5);
        let c = MarginClassifier {
            weight: random(&mut rng, 5, 4),
            s: 64.0,
            m_b: 0.5,
            delta_m: 0.0,
        };
        let labels = BatchLabels::new((0..8).map(|i| i % 4).collect(), (0..8).map(|_| rng.gen()).collect()).map_err(err)?;
        let a = paa_loss(&f, &c, &labels).map_err(err)?;
        let b = arcface_loss(&f, &c, &labels.classes, 0.5).map_err(err)?;
        mismatches += usize::from(a.to_bits() != b.to_bits());
    }
    let ae = tiny_ae();
    let cfg = ModelConfig {
        d_in: 10,
        backbone_hidden: vec![12],
        d_b: 12,
        d: 6,
        d_o: 6,
        d_p: 4,
        n_classes: 4,
        delta_m: 0.0,
        ..ModelConfig::default()
    };
    let mut full_mismatches = 0;
    for seed in 0..5 {
        let model = PoseFaceModel::new(&cfg, seed).map_err(err)?;
        let batch = toy_batch(&mut rng, &ae, cfg.d_in);
        let full = poseface_loss(&model, &ae, &batch, LossWeights { lambda1: 0.0, lambda2: 0.0 }).map_err(err)?;
        let emb = model.embed(&batch.observations).map_err(err)?;
        let base = arcface_loss(&emb, &model.classifier, &batch.labels.classes, 0.5).map_err(err)?;
        full_mismatches += usize::from(full.total.to_bits() != base.to_bits());
    }
    ensure(
        mismatches == 0 && full_mismatches == 0,
        format!("margin mismatches {mismatches}/20, objective mismatches {full_mismatches}/5"),
    )
}

fn orthogonality() -> Check {
    let mut rng = seeded(22);
    let mut a = Tensor::zeros(&[6, 3]);
    let mut b = Tensor::zeros(&[6, 3]);
    for j in 0..3 {
        for i in 0..3 {
            a.set(i, j, rng.gen_range(-1.0..1.0));
            b.set(i + 3, j, rng.gen_range(-1.0..1.0));
        }
    }
    let mut rot = Tensor::identity(6);
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    rot.set(1, 1, c);
    rot.set(1, 5, -s);
    rot.set(5, 1, s);
    rot.set(5, 5, c);
    let zero = orth_penalty_value(&a, &b)
        .map_err(err)?
        .max(orth_penalty_value(&rot.matmul(&a).map_err(err)?, &rot.matmul(&b).map_err(err)?).map_err(err)?);

    let (mut scale_dev, mut oracle_dev) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let rows = rng.gen_range(2..20);
        let (ca, cb) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let a = random(&mut rng, rows, ca);
        let b = random(&mut rng, rows, cb);
        let p = orth_penalty_value(&a, &b).map_err(err)?;
        oracle_dev = oracle_dev.max((p - brute_orth(&a, &b)).abs());
        let mut a2 = a.clone();
        for j in 0..ca {
            let k: f64 = rng.gen_range(1e-3..1e3);
            for i in 0..rows {
                a2.set(i, j, a.get(i, j) * k);
            }
        }
        scale_dev = scale_dev.max((orth_penalty_value(&a2, &b).map_err(err)? - p).abs());
    }
    ensure(
        zero < 1e-12 && scale_dev < 1e-12 && oracle_dev < 1e-10,
        format!("orthogonal {zero:.1e}, rescale dev {scale_dev:.1e}, oracle dev {oracle_dev:.1e}"),
    )
}

fn orth_probe() -> Check {
    let b = bench();
    let (full, t_full) = timed_run(&b.cfg, &b.data, &b.ae)?;
    let mut base_cfg = b.cfg.clone();
    base_cfg.use_orth = false;
    base_cfg.use_paa = false;
    let (base, t_base) = timed_run(&base_cfg, &b.data, &b.ae)?;
    let ratio = base.eval.orth_max / full.eval.orth_max;
    let slowest = t_full.max(t_base).as_secs_f64();
    ensure(
        ratio >= 1e3 && slowest < 60.0,
        format!(
            "max |<F_i,F_p>| {:.3e} -> {:.3e} (x{ratio:.1e}), slowest run {slowest:.1}s",
            base.eval.orth_max, full.eval.orth_max
        ),
    )
}

/// Profile rank-1 per variant for every seed at 5% profile training data.
struct Ablation {
    per_variant: BTreeMap<&'static str, Vec<f64>>,
    table_secs: f64,
}

const VARIANTS: [(&str, bool, bool, &str); 5] = [
    ("baseline", false, false, "landmark_module"),
    ("paa", true, false, "landmark_module"),
    ("orth", false, true, "landmark_module"),
    ("orth+paa", true, true, "landmark_module"),
    ("points+orth+paa", true, true, "landmark_points"),
];

fn ablation() -> &'static std::result::Result<Ablation, String> {
    static A: OnceLock<std::result::Result<Ablation, String>> = OnceLock::new();
    A.get_or_init(|| {
        let mut per_variant: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        let mut table = Duration::ZERO;
        for seed in 0..5 {
            let t = Instant::now();
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.data.p_profile = 0.05;
            let data = generate_data(&cfg).map_err(err)?;
            let (ae, _) = pretrain_autoencoder(&cfg, &data).map_err(err)?;
            table += t.elapsed();
            for (name, paa, orth, sup) in VARIANTS {
                let mut c = cfg.clone();
                c.use_paa = paa;
                c.use_orth = orth;
                c.pose_supervision = sup.into();
                let (r, dt) = timed_run(&c, &data, &ae)?;
                if sup == "landmark_module" {
                    table += dt;
                }
                per_variant.entry(name).or_default().push(profile(&r));
            }
        }
        Ok(Ablation {
            per_variant,
            table_secs: table.as_secs_f64(),
        })
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation_trend() -> Check {
    let a = ablation().as_ref().map_err(Clone::clone)?;
    let m = |k: &str| mean(&a.per_variant[k]);
    let (base, paa, orth, both) = (m("baseline"), m("paa"), m("orth"), m("orth+paa"));
    let gap = 0.02;
    ensure(
        both - orth > gap && orth - base > gap && paa - base > gap && a.table_secs < 600.0,
        format!(
            "profile rank-1 baseline {base:.4}, paa {paa:.4}, orth {orth:.4}, orth+paa {both:.4}; {:.0}s",
            a.table_secs
        ),
    )
}

fn supervision_trend() -> Check {
    let a = ablation().as_ref().map_err(Clone::clone)?;
    let module = mean(&a.per_variant["orth+paa"]);
    let points = mean(&a.per_variant["points+orth+paa"]);
    ensure(
        module > points,
        format!("profile rank-1 landmark_module {module:.4} vs landmark_points {points:.4}"),
    )
}

fn metric_oracles() -> Check {
    let mut rng = seeded(77);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..50 {
        let s = random_set(&mut rng);
        worst = worst.max((auc(&s).map_err(err)? - oracle_auc(&s)).abs());
        worst = worst.max((eer(&s).map_err(err)? - oracle_eer(&s)).abs());
        for far in [1e-3, 1e-2, 0.1, rng.gen::<f64>()] {
            let got = tar_at_far(&s, far).map_err(err)?;
            let (tar, sat) = oracle_tar(&s, far);
            worst = worst.max((got.tar - tar).abs());
            exact &= got.saturated == sat;
        }
        let k = rng.gen_range(2..=10);
        let folds = split_folds(s.len(), k);
        if let Ok(got) = kfold_accuracy(&s, &folds, k) {
            for (a, b) in got.per_fold.iter().zip(oracle_kfold(&s, &folds, k)) {
                worst = worst.max((a - b).abs());
            }
        }
        let (gallery, probes) = random_probes(&mut rng);
        let report = rank1(&IdentificationProtocol {
            gallery: gallery.clone(),
            probes: probes.clone(),
        })
        .map_err(err)?;
        exact &= report.predictions == oracle_rank1(&gallery, &probes);
    }
    ensure(worst < 1e-9 && exact, format!("50 instances, worst deviation {worst:.1e}"))
}

fn autoencoder_contract() -> Check {
    let b = bench();
    let r = &b.ae_report;
    let ratio = r.final_holdout / r.initial_holdout;
    let before = b.ae.to_bytes().map_err(err)?;
    let mut norm_dev = 0.0f64;
    let mut stable = true;
    for s in b.data.test.iter().take(200) {
        let h = b.cfg.autoencoder.render(&s.landmarks).map_err(err)?;
        let c = b.ae.encode(&h).map_err(err)?;
        norm_dev = norm_dev.max((c.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
        stable &= b.ae.encode(&h).map_err(err)? == c;
    }
    stable &= b.ae.to_bytes().map_err(err)? == before;
    ensure(
        ratio < 0.2 && norm_dev < 1e-10 && stable,
        format!(
            "holdout {:.2} -> {:.2} (x{ratio:.3}), code norm dev {norm_dev:.1e}, frozen {stable}",
            r.initial_holdout, r.final_holdout
        ),
    )
}

fn lambda2_sweep() -> Check {
    let b = bench();
    let mut cfg = b.cfg.clone();
    cfg.sweep.param = "lambda2".into();
    cfg.sweep.values = vec![0.0, 1e3, 1e5];
    let rep = sweep(&cfg, &b.data, Some(&b.ae)).map_err(err)?;
    let orth: Vec<f64> = rep.rows.iter().map(|r| r.report.eval.orth_max).collect();
    let prof: Vec<f64> = rep.rows.iter().map(|r| profile(&r.report)).collect();
    let decreasing = orth.windows(2).all(|w| w[1] < w[0]);
    let rising = prof.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        decreasing && rising,
        format!(
            "orth max [{}], profile rank-1 {prof:.4?}",
            orth.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn determinism() -> Check {
    let b = bench();
    let (x, _) = timed_run(&b.cfg, &b.data, &b.ae)?;
    let (y, _) = timed_run(&b.cfg, &b.data, &b.ae)?;
    let again = generate_data(&b.cfg).map_err(err)?;
    let same_data = again == b.data;
    ensure(
        x == y && x.to_text() == y.to_text() && x.epochs_csv() == y.epochs_csv() && same_data,
        format!("reports identical {}, dataset identical {same_data}", x == y),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient correctness", gradients),
        ("degenerate reductions", degenerate_reductions),
        ("orthogonality identities", orthogonality),
        ("orth probe reduction", orth_probe),
        ("ablation trend", ablation_trend),
        ("pose supervision trend", supervision_trend),
        ("metric oracles", metric_oracles),
        ("autoencoder contract", autoencoder_contract),
        ("lambda2 sweep", lambda2_sweep),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
