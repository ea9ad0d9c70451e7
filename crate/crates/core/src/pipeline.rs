//! Data → autoencoder → training → evaluation, and the report those
//! stages produce.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::HeatmapStack;
use crate::landmark_ae::{pretrain, AutoEncoderModel, PretrainReport};
use crate::losses::{poseface_objective, LossBreakdown};
use crate::metrics::{
    auc, class_geometry, eer, kfold_accuracy, orth_probe, rank1, tar_at_far, ClassGeometry, FoldAccuracy,
    IdentificationProtocol, Probe, Rank1Report, ScoreSet, TarAtFar,
};
use crate::model::PoseFaceModel;
use crate::registry::{margin_policies, pose_supervisions, PoseContext};
use crate::synthdata::{generate, Dataset, Sample};
use crate::tensor::{Sgd, Tape, Tensor};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const PAIR_STREAM: u64 = 0x5041_4952;

pub fn observations(samples: &[&Sample]) -> Result<Tensor> {
    let d = samples.first().map_or(0, |s| s.observation.len());
    let data = samples.iter().flat_map(|s| s.observation.iter().copied()).collect();
    Tensor::matrix(samples.len(), d, data)
}

pub fn generate_data(cfg: &RunConfig) -> Result<Dataset> {
    generate(&cfg.dataset_spec())
}

/// Pretrains the landmark autoencoder on heatmaps of up to
/// `ae_train_samples` evenly spaced training samples, holding out every
/// tenth one.
pub fn pretrain_autoencoder(cfg: &RunConfig, data: &Dataset) -> Result<(AutoEncoderModel, PretrainReport)> {
    let n = data.train.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = cfg.ae_train_samples.min(n);
    let stacks = (0..k)
        .map(|j| cfg.autoencoder.render(&data.train[j * n / k].landmarks))
        .collect::<Result<Vec<HeatmapStack>>>()?;
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (i, h) in stacks.into_iter().enumerate() {
        if i % 10 == 9 {
            holdout.push(h);
        } else {
            train.push(h);
        }
    }
    let model = AutoEncoderModel::new(&cfg.autoencoder, cfg.seed)?;
    pretrain(model, &cfg.autoencoder, &train, &holdout, &cfg.pretrain_config())
}

/// Pose targets for `samples` under the configured supervision.
pub fn pose_targets(cfg: &RunConfig, samples: &[&Sample], ae: Option<&AutoEncoderModel>) -> Result<Option<Tensor>> {
    let sup = pose_supervisions().create(&cfg.pose_supervision)?;
    if !cfg.use_orth {
        return Ok(None);
    }
    let ctx = PoseContext {
        autoencoder: ae,
        heatmap_radius: cfg.autoencoder.radius,
    };
    let lms: Vec<_> = samples.iter().map(|s| &s.landmarks).collect();
    sup.targets(&lms, &ctx)
}

/// Whether the configuration needs a frozen autoencoder.
pub fn needs_autoencoder(cfg: &RunConfig) -> Result<bool> {
    Ok(cfg.use_orth && pose_supervisions().create(&cfg.pose_supervision)?.needs_autoencoder())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Batch means of each weighted component.
    pub loss: LossBreakdown,
    /// Orthogonality penalty after the epoch.
    pub orth_penalty: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PoseFaceModel,
    pub epochs: Vec<EpochLog>,
}

/// Mini-batch SGD over the PoseFace objective with the configured
/// ablation switches. Deterministic for a given config.
pub fn train_model(cfg: &RunConfig, data: &Dataset, ae: Option<&AutoEncoderModel>) -> Result<TrainOutcome> {
    let steps = cfg.train.epochs * data.train.len().div_ceil(cfg.train.batch_size);
    train_steps(cfg, data, ae, steps)
}

/// Like [`train_model`] but stops after `max_steps` updates.
pub fn train_steps(
    cfg: &RunConfig,
    data: &Dataset,
    ae: Option<&AutoEncoderModel>,
    max_steps: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mcfg = cfg.model_config()?;
    let mut model = PoseFaceModel::new(&mcfg, cfg.seed)?;
    let policy = margin_policies().create(cfg.margin_policy_name())?;
    let weights = cfg.effective_weights();
    let samples: Vec<&Sample> = data.train.iter().collect();
    if let Some(bad) = samples.iter().find(|s| s.identity as usize >= mcfg.n_classes) {
        return Err(Error::Shape(format!("training identity {} ≥ {} classes", bad.identity, mcfg.n_classes)));
    }
    let all_x = observations(&samples)?;
    let targets = pose_targets(cfg, &samples, ae)?;
    if let Some(t) = &targets {
        if t.cols() != mcfg.d_p {
            return Err(Error::Shape(format!("pose targets have {} columns, d_p = {}", t.cols(), mcfg.d_p)));
        }
    }
    let mut decay = vec![true; model.params().len()];
    let mut lr_scale = vec![1.0; decay.len()];
    for i in model.projection_param_indices() {
        decay[i] = cfg.train.decay_projections;
        lr_scale[i] = cfg.train.projection_lr_scale;
    }
    let mut sgd = Sgd::new(cfg.train.sgd.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.train.epochs);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.train.batch_size) {
            if step == max_steps {
                break 'epochs;
            }
            let mut tape = Tape::unchecked();
            let vars = model.record(&mut tape, true)?;
            let xb = gather_rows(&all_x, chunk)?;
            let x = tape.constant(xb)?;
            let t = match &targets {
                Some(t) => Some(tape.constant(gather_rows(t, chunk)?)?),
                None => None,
            };
            let classes: Vec<usize> = chunk.iter().map(|&i| samples[i].identity as usize).collect();
            let yaws: Vec<f64> = chunk.iter().map(|&i| samples[i].yaw).collect();
            let margins = policy.margins(&yaws, mcfg.m_b, mcfg.delta_m);
            let lv = poseface_objective(&mut tape, &model, &vars, x, &classes, &margins, t, weights, cfg.pose_loss)?;
            let b = lv.values(&tape, weights);
            if !b.total.is_finite() {
                return Err(Error::Numeric(format!("loss became non-finite at epoch {epoch}")));
            }
            let grads = tape.backward(lv.total)?;
            let vs = vars.all();
            {
                let mut params = model.params_mut();
                for (p, v) in params.iter_mut().zip(&vs) {
                    p.zero_grad();
                    grads.accumulate_into(*v, p)?;
                }
                if cfg.train.clip_norm > 0.0 {
                    clip_grads(&mut params, cfg.train.clip_norm);
                }
                sgd.step_groups(&mut params, &decay, &lr_scale, epoch)?;
            }
            step += 1;
            acc.total += b.total;
            acc.paa += b.paa;
            acc.pose += b.pose;
            acc.orth += b.orth;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        logs.push(EpochLog {
            epoch,
            learning_rate: cfg.train.sgd.lr_at(epoch),
            loss: LossBreakdown {
                total: acc.total / n,
                paa: acc.paa / n,
                pose: acc.pose / n,
                orth: acc.orth / n,
            },
            orth_penalty: model.orth_penalty()?,
        });
    }
    model.zero_grad();
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(TrainOutcome { model, epochs: logs })
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Tensor::matrix(rows.len(), t.cols(), data)
}

fn clip_grads(params: &mut [&mut Tensor], max_norm: f64) {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * k).collect();
                p.zero_grad();
                p.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rank1: Rank1Report,
    pub verification: FoldAccuracy,
    pub eer: f64,
    pub auc: f64,
    pub tar: Vec<TarAtFar>,
    pub orth_max: f64,
    pub orth_min: f64,
    pub orth_penalty: f64,
    pub geometry: ClassGeometry,
}

/// Gallery: the test sample with the smallest |yaw| per identity (lowest
/// index on ties). Probes: every other test sample.
pub fn identification_protocol(test: &[Sample], embeddings: &Tensor) -> Result<IdentificationProtocol> {
    let mut best: std::collections::BTreeMap<u32, usize> = Default::default();
    for (i, s) in test.iter().enumerate() {
        let e = best.entry(s.identity).or_insert(i);
        if s.yaw.abs() < test[*e].yaw.abs() {
            *e = i;
        }
    }
    let gallery_rows: std::collections::BTreeSet<usize> = best.values().copied().collect();
    Ok(IdentificationProtocol {
        gallery: best.iter().map(|(&id, &i)| (id, embeddings.row(i).to_vec())).collect(),
        probes: test
            .iter()
            .enumerate()
            .filter(|(i, _)| !gallery_rows.contains(i))
            .map(|(i, s)| Probe {
                identity: s.identity,
                yaw: s.yaw,
                embedding: embeddings.row(i).to_vec(),
            })
            .collect(),
    })
}

/// Frontal–profile verification pairs over the held-out identities (all
/// test identities when none are held out): half genuine, half impostor
/// per fold. Returns `(a, b, genuine)` test indices.
pub fn verification_pairs(cfg: &RunConfig, test: &[Sample]) -> Result<Vec<(usize, usize, bool)>> {
    let first_heldout = cfg.data.n_identities as u32;
    let pool: Vec<usize> = if cfg.data.heldout_identities > 0 {
        (0..test.len()).filter(|&i| test[i].identity >= first_heldout).collect()
    } else {
        (0..test.len()).collect()
    };
    let mut ids: Vec<u32> = pool.iter().map(|&i| test[i].identity).collect();
    ids.sort_unstable();
    ids.dedup();
    let by_id = |id: u32, profile: bool| -> Vec<usize> {
        pool.iter()
            .copied()
            .filter(|&i| test[i].identity == id && test[i].is_profile == profile)
            .collect()
    };
    let frontal: Vec<Vec<usize>> = ids.iter().map(|&id| by_id(id, false)).collect();
    let profile: Vec<Vec<usize>> = ids.iter().map(|&id| by_id(id, true)).collect();
    let usable: Vec<usize> = (0..ids.len())
        .filter(|&k| !frontal[k].is_empty() && !profile[k].is_empty())
        .collect();
    if usable.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PAIR_STREAM);
    let total = cfg.eval.folds * cfg.eval.pairs_per_fold;
    let mut pairs = Vec::with_capacity(total);
    for j in 0..total {
        let genuine = j % cfg.eval.pairs_per_fold < cfg.eval.pairs_per_fold / 2;
        let ka = usable[rng.gen_range(0..usable.len())];
        let kb = if genuine {
            ka
        } else {
            loop {
                let k = usable[rng.gen_range(0..usable.len())];
                if k != ka {
                    break k;
                }
            }
        };
        let a = frontal[ka][rng.gen_range(0..frontal[ka].len())];
        let b = profile[kb][rng.gen_range(0..profile[kb].len())];
        pairs.push((a, b, genuine));
    }
    Ok(pairs)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

pub fn evaluate(cfg: &RunConfig, model: &PoseFaceModel, data: &Dataset) -> Result<EvalReport> {
    if data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let test: Vec<&Sample> = data.test.iter().collect();
    let x = observations(&test)?;
    let emb = model.embed(&x)?;
    let rank1 = rank1(&identification_protocol(&data.test, &emb)?)?;

    let pairs = verification_pairs(cfg, &data.test)?;
    let scores = ScoreSet::new(
        pairs.iter().map(|&(a, b, _)| cosine(emb.row(a), emb.row(b))).collect(),
        pairs.iter().map(|p| p.2).collect(),
    )?;
    let folds: Vec<usize> = (0..pairs.len()).map(|j| j / cfg.eval.pairs_per_fold).collect();
    let verification = kfold_accuracy(&scores, &folds, cfg.eval.folds)?;
    let tar = cfg
        .eval
        .far_targets
        .iter()
        .map(|&f| tar_at_far(&scores, f))
        .collect::<Result<Vec<_>>>()?;

    let n_probe = cfg.eval.probe_samples.min(test.len());
    let probe = orth_probe(model, &gather_rows(&x, &(0..n_probe).collect::<Vec<_>>())?)?;

    let normed: Vec<f64> = (0..emb.rows())
        .flat_map(|i| {
            let r = emb.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(move |v| v / n).collect::<Vec<_>>()
        })
        .collect();
    let normed = Tensor::matrix(emb.rows(), emb.cols(), normed)?;
    let labels: Vec<u32> = test.iter().map(|s| s.identity).collect();
    let geometry = class_geometry(&normed, &labels)?;

    Ok(EvalReport {
        rank1,
        eer: eer(&scores)?,
        auc: auc(&scores)?,
        verification,
        tar,
        orth_max: probe.max,
        orth_min: probe.min,
        orth_penalty: model.orth_penalty()?,
        geometry,
    })
}

/// Everything a training run reports. Holds no wall-clock data, so equal
/// configs give byte-identical reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub autoencoder: Option<PretrainReport>,
    pub epochs: Vec<EpochLog>,
    pub eval: EvalReport,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

impl EvalReport {
    /// `(name, value)` rows shared by the text and CSV renderings.
    pub fn metric_rows(&self) -> Vec<(String, String)> {
        let mut rows = Vec::new();
        for (&b, &(c, t)) in &self.rank1.buckets {
            rows.push((format!("rank1_yaw_{b}"), format!("{:.6}", c as f64 / t as f64)));
        }
        rows.push(("rank1_profile".into(), opt(self.rank1.profile_accuracy())));
        rows.push(("rank1_overall".into(), opt(self.rank1.overall_accuracy())));
        rows.push(("verification_mean".into(), format!("{:.6}", self.verification.mean)));
        rows.push(("verification_sd".into(), format!("{:.6}", self.verification.sd)));
        rows.push(("eer".into(), format!("{:.6}", self.eer)));
        rows.push(("auc".into(), format!("{:.6}", self.auc)));
        for t in &self.tar {
            let flag = if t.saturated { " (saturated)" } else { "" };
            rows.push((format!("tar_at_far_{:e}", t.requested_far), format!("{:.6}{flag}", t.tar)));
        }
        rows.push(("orth_probe_max".into(), format!("{:e}", self.orth_max)));
        rows.push(("orth_probe_min".into(), format!("{:e}", self.orth_min)));
        rows.push(("orth_penalty".into(), format!("{:e}", self.orth_penalty)));
        rows.push(("intra_class_distance".into(), format!("{:.6}", self.geometry.intra)));
        rows.push(("inter_class_distance".into(), format!("{:.6}", self.geometry.inter)));
        rows
    }
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "run: seed {} | margin {} | orth {} | pose supervision {} | λ1 {} | λ2 {}",
            c.seed,
            c.margin_policy_name(),
            c.use_orth,
            c.pose_supervision,
            c.weights.lambda1,
            c.weights.lambda2
        );
        if let Some(ae) = &self.autoencoder {
            let _ = writeln!(
                s,
                "autoencoder holdout loss: {:.6} -> {:.6}",
                ae.initial_holdout, ae.final_holdout
            );
        }
        let _ = writeln!(s, "\n{:>5} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}", "epoch", "lr", "total", "paa", "pose", "orth", "penalty");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{:>5} {:>10.2e} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.4e}",
                e.epoch, e.learning_rate, e.loss.total, e.loss.paa, e.loss.pose, e.loss.orth, e.orth_penalty
            );
        }
        s.push('\n');
        let rows = self.eval.metric_rows();
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<w$}  {v}");
        }
        s.push_str("\n# config\n");
        s.push_str(&c.to_text());
        s
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.eval.metric_rows() {
            let _ = writeln!(s, "{k},{}", v.replace(" (saturated)", ""));
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,total,paa,pose,orth,orth_penalty\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                e.epoch, e.learning_rate, e.loss.total, e.loss.paa, e.loss.pose, e.loss.orth, e.orth_penalty
            );
        }
        s
    }
}

/// Generates data, pretrains the autoencoder when the config needs one,
/// trains and evaluates. `ae` reuses an already-frozen autoencoder.
pub fn run(cfg: &RunConfig, data: &Dataset, ae: Option<&AutoEncoderModel>) -> Result<(PoseFaceModel, RunReport)> {
    let mut ae_report = None;
    let owned;
    let ae = match (needs_autoencoder(cfg)?, ae) {
        (false, _) => None,
        (true, Some(a)) => Some(a),
        (true, None) => {
            let (a, r) = pretrain_autoencoder(cfg, data)?;
            ae_report = Some(r);
            owned = a;
            Some(&owned)
        }
    };
    let out = train_model(cfg, data, ae)?;
    let eval = evaluate(cfg, &out.model, data)?;
    let report = RunReport {
        config: cfg.clone(),
        autoencoder: ae_report,
        epochs: out.epochs,
        eval,
    };
    Ok((out.model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub param: String,
    /// Ascending by value.
    pub rows: Vec<SweepRow>,
}

/// One full run per value of `cfg.sweep.param`, all on the same data and
/// the same frozen autoencoder.
pub fn sweep(cfg: &RunConfig, data: &Dataset, ae: Option<&AutoEncoderModel>) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.sweep.values.is_empty() {
        return Err(Error::Config("sweep.values is empty".into()));
    }
    let mut values = cfg.sweep.values.clone();
    values.sort_by(f64::total_cmp);
    let owned;
    let ae = match (needs_autoencoder(cfg)?, ae) {
        (true, None) => {
            owned = pretrain_autoencoder(cfg, data)?.0;
            Some(&owned)
        }
        (_, a) => a,
    };
    let rows = values
        .into_iter()
        .map(|value| {
            let mut c = cfg.clone();
            c.set(&format!("loss.{}", cfg.sweep.param), &value.to_string())?;
            let (_, report) = run(&c, data, ae)?;
            Ok(SweepRow { value, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        param: cfg.sweep.param.clone(),
        rows,
    })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},rank1_profile,rank1_overall,verification_mean,eer,auc,orth_probe_max,orth_penalty\n",
            self.param
        );
        for r in &self.rows {
            let e = &r.report.eval;
            let _ = writeln!(
                s,
                "{:e},{},{},{:.6},{:.6},{:.6},{:e},{:e}",
                r.value,
                opt(e.rank1.profile_accuracy()),
                opt(e.rank1.overall_accuracy()),
                e.verification.mean,
                e.eer,
                e.auc,
                e.orth_max,
                e.orth_penalty
            );
        }
        s
    }
}
