//! Run configuration: line-oriented `key = value` text with `#` comments.
//! Unknown keys are errors.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::landmark_ae::{AutoEncoderConfig, PretrainConfig};
use crate::losses::{LossWeights, PoseLossMode};
use crate::model::ModelConfig;
use crate::registry::{margin_policies, pose_supervisions, PoseContext};
use crate::synthdata::DatasetSpec;
use crate::tensor::SgdConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Apply weight decay to `W_I` and `W_P`.
    pub decay_projections: bool,
    /// Rescale the full gradient to at most this global norm (0 = off).
    pub clip_norm: f64,
    /// Learning-rate multiplier for `W_I` and `W_P`.
    pub projection_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            sgd: SgdConfig {
                learning_rate: 1e-3,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: vec![(15, 1e-4), (25, 1e-5)],
            },
            decay_projections: false,
            clip_norm: 0.0,
            projection_lr_scale: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub folds: usize,
    pub pairs_per_fold: usize,
    pub probe_samples: usize,
    pub far_targets: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            pairs_per_fold: 60,
            probe_samples: 64,
            far_targets: vec![1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// `lambda1` or `lambda2`.
    pub param: String,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: "lambda2".into(),
            values: vec![0.0, 1e3, 1e5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Drives data generation, initialisation and shuffling.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DatasetSpec,
    pub autoencoder: AutoEncoderConfig,
    pub pretrain: PretrainConfig,
    /// Training-split samples whose heatmaps pretrain the autoencoder,
    /// spread evenly over the split.
    pub ae_train_samples: usize,
    /// `d_in`, `n_classes` and `d_p` are filled in by [`RunConfig::model_config`].
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub pose_loss: PoseLossMode,
    pub train: TrainConfig,
    pub use_paa: bool,
    pub use_orth: bool,
    pub pose_supervision: String,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DatasetSpec::default(),
            autoencoder: AutoEncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            ae_train_samples: 768,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            pose_loss: PoseLossMode::Norm,
            train: TrainConfig::default(),
            use_paa: true,
            use_orth: true,
            pose_supervision: "landmark_module".into(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn schedule_text(s: &[(usize, f64)]) -> String {
    s.iter().map(|(e, lr)| format!("{e}:{lr}")).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn parse_schedule(key: &str, v: &str) -> Result<Vec<(usize, f64)>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (e, lr) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("{key}: expected epoch:lr, got {item:?}")))?;
            Ok((parse_num(key, e.trim())?, parse_num(key, lr.trim())?))
        })
        .collect()
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let a = &self.autoencoder;
        let p = &self.pretrain;
        let m = &self.model;
        let t = &self.train;
        vec![
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("data.n_identities", d.n_identities.to_string()),
            ("data.samples_per_identity", d.samples_per_identity.to_string()),
            ("data.p_profile", d.p_profile.to_string()),
            ("data.noise_sigma", d.noise_sigma.to_string()),
            ("data.d_in", d.d_in.to_string()),
            ("data.split", d.split.to_string()),
            ("data.heldout_identities", d.heldout_identities.to_string()),
            ("data.test_p_profile", d.test_p_profile.to_string()),
            ("data.identity_gain", d.identity_gain.to_string()),
            ("data.pose_gain", d.pose_gain.to_string()),
            ("data.shape_jitter", d.shape_jitter.to_string()),
            ("ae.height", a.height.to_string()),
            ("ae.width", a.width.to_string()),
            ("ae.hidden", list(&a.hidden)),
            ("ae.code_dim", a.code_dim.to_string()),
            ("ae.radius", a.radius.to_string()),
            ("ae.lambda_h", a.lambda_h.to_string()),
            ("ae.train_samples", self.ae_train_samples.to_string()),
            ("ae.epochs", p.epochs.to_string()),
            ("ae.batch_size", p.batch_size.to_string()),
            ("ae.learning_rate", p.sgd.learning_rate.to_string()),
            ("ae.momentum", p.sgd.momentum.to_string()),
            ("ae.schedule", schedule_text(&p.sgd.schedule)),
            ("model.backbone_hidden", list(&m.backbone_hidden)),
            ("model.d_b", m.d_b.to_string()),
            ("model.d", m.d.to_string()),
            ("model.d_o", m.d_o.to_string()),
            ("model.s", m.s.to_string()),
            ("model.m_b", m.m_b.to_string()),
            ("model.delta_m", m.delta_m.to_string()),
            ("loss.lambda1", self.weights.lambda1.to_string()),
            ("loss.lambda2", self.weights.lambda2.to_string()),
            ("loss.pose_mode", self.pose_loss.name().to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.sgd.learning_rate.to_string()),
            ("train.momentum", t.sgd.momentum.to_string()),
            ("train.weight_decay", t.sgd.weight_decay.to_string()),
            ("train.schedule", schedule_text(&t.sgd.schedule)),
            ("train.decay_projections", t.decay_projections.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.projection_lr_scale", t.projection_lr_scale.to_string()),
            ("ablation.use_paa", self.use_paa.to_string()),
            ("ablation.use_orth", self.use_orth.to_string()),
            ("ablation.pose_supervision", self.pose_supervision.clone()),
            ("eval.folds", self.eval.folds.to_string()),
            ("eval.pairs_per_fold", self.eval.pairs_per_fold.to_string()),
            ("eval.probe_samples", self.eval.probe_samples.to_string()),
            ("eval.far_targets", list(&self.eval.far_targets)),
            ("sweep.param", self.sweep.param.clone()),
            ("sweep.values", list(&self.sweep.values)),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let k = key;
        match key {
            "seed" => self.seed = parse_num(k, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data.n_identities" => self.data.n_identities = parse_num(k, v)?,
            "data.samples_per_identity" => self.data.samples_per_identity = parse_num(k, v)?,
            "data.p_profile" => self.data.p_profile = parse_num(k, v)?,
            "data.noise_sigma" => self.data.noise_sigma = parse_num(k, v)?,
            "data.d_in" => self.data.d_in = parse_num(k, v)?,
            "data.split" => self.data.split = parse_num(k, v)?,
            "data.heldout_identities" => self.data.heldout_identities = parse_num(k, v)?,
            "data.test_p_profile" => self.data.test_p_profile = parse_num(k, v)?,
            "data.identity_gain" => self.data.identity_gain = parse_num(k, v)?,
            "data.pose_gain" => self.data.pose_gain = parse_num(k, v)?,
            "data.shape_jitter" => self.data.shape_jitter = parse_num(k, v)?,
            "ae.height" => self.autoencoder.height = parse_num(k, v)?,
            "ae.width" => self.autoencoder.width = parse_num(k, v)?,
            "ae.hidden" => self.autoencoder.hidden = parse_list(k, v)?,
            "ae.code_dim" => self.autoencoder.code_dim = parse_num(k, v)?,
            "ae.radius" => self.autoencoder.radius = parse_num(k, v)?,
            "ae.lambda_h" => self.autoencoder.lambda_h = parse_num(k, v)?,
            "ae.train_samples" => self.ae_train_samples = parse_num(k, v)?,
            "ae.epochs" => self.pretrain.epochs = parse_num(k, v)?,
            "ae.batch_size" => self.pretrain.batch_size = parse_num(k, v)?,
            "ae.learning_rate" => self.pretrain.sgd.learning_rate = parse_num(k, v)?,
            "ae.momentum" => self.pretrain.sgd.momentum = parse_num(k, v)?,
            "ae.schedule" => self.pretrain.sgd.schedule = parse_schedule(k, v)?,
            "model.backbone_hidden" => self.model.backbone_hidden = parse_list(k, v)?,
            "model.d_b" => self.model.d_b = parse_num(k, v)?,
            "model.d" => self.model.d = parse_num(k, v)?,
            "model.d_o" => self.model.d_o = parse_num(k, v)?,
            "model.s" => self.model.s = parse_num(k, v)?,
            "model.m_b" => self.model.m_b = parse_num(k, v)?,
            "model.delta_m" => self.model.delta_m = parse_num(k, v)?,
            "loss.lambda1" => self.weights.lambda1 = parse_num(k, v)?,
            "loss.lambda2" => self.weights.lambda2 = parse_num(k, v)?,
            "loss.pose_mode" => self.pose_loss = PoseLossMode::parse(v)?,
            "train.epochs" => self.train.epochs = parse_num(k, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(k, v)?,
            "train.learning_rate" => self.train.sgd.learning_rate = parse_num(k, v)?,
            "train.momentum" => self.train.sgd.momentum = parse_num(k, v)?,
            "train.weight_decay" => self.train.sgd.weight_decay = parse_num(k, v)?,
            "train.schedule" => self.train.sgd.schedule = parse_schedule(k, v)?,
            "train.decay_projections" => self.train.decay_projections = parse_bool(k, v)?,
            "train.clip_norm" => self.train.clip_norm = parse_num(k, v)?,
            "train.projection_lr_scale" => self.train.projection_lr_scale = parse_num(k, v)?,
            "ablation.use_paa" => self.use_paa = parse_bool(k, v)?,
            "ablation.use_orth" => self.use_orth = parse_bool(k, v)?,
            "ablation.pose_supervision" => self.pose_supervision = v.to_string(),
            "eval.folds" => self.eval.folds = parse_num(k, v)?,
            "eval.pairs_per_fold" => self.eval.pairs_per_fold = parse_num(k, v)?,
            "eval.probe_samples" => self.eval.probe_samples = parse_num(k, v)?,
            "eval.far_targets" => self.eval.far_targets = parse_list(k, v)?,
            "sweep.param" => self.sweep.param = v.to_string(),
            "sweep.values" => self.sweep.values = parse_list(k, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# d_b = 64, d = d_o = 32 is the desk-scale setting; the full-size one uses 512.\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn margin_policy_name(&self) -> &'static str {
        if self.use_paa {
            "pose_adaptive"
        } else {
            "arcface"
        }
    }

    /// λ₁ and λ₂ with the orthogonal branch switched on or off.
    pub fn effective_weights(&self) -> LossWeights {
        if self.use_orth {
            self.weights
        } else {
            LossWeights {
                lambda1: 0.0,
                lambda2: 0.0,
            }
        }
    }

    /// Pose-branch width: the autoencoder code size, or 28 landmark
    /// coordinates in `landmark_points` mode.
    pub fn d_p(&self) -> Result<usize> {
        let sup = pose_supervisions().create(&self.pose_supervision)?;
        Ok(match sup.name() {
            "landmark_points" => {
                let ctx = PoseContext {
                    autoencoder: None,
                    heatmap_radius: self.autoencoder.radius,
                };
                sup.target_dim(&ctx)?.unwrap_or(self.autoencoder.code_dim)
            }
            _ => self.autoencoder.code_dim,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            d_in: self.data.d_in,
            n_classes: self.data.n_identities,
            d_p: self.d_p()?,
            ..self.model.clone()
        })
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            ..self.data.clone()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    /// Cross-field checks; all failures are config errors.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(strip(e));
        self.data.validate().map_err(cfg)?;
        self.autoencoder.validate().map_err(cfg)?;
        self.pretrain.sgd.validate().map_err(cfg)?;
        self.train.sgd.validate().map_err(cfg)?;
        self.weights.validate()?;
        margin_policies().create(self.margin_policy_name()).map_err(cfg)?;
        pose_supervisions().create(&self.pose_supervision).map_err(cfg)?;
        self.model_config()?.validate()?;
        if self.model.m_b + self.model.delta_m >= FRAC_PI_2 {
            return Err(Error::Config("m_b + δ_m must stay below π/2".into()));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || self.pretrain.batch_size == 0 || self.ae_train_samples < 2 {
            return Err(Error::Config("epochs and batch sizes must be positive, ae.train_samples at least 2".into()));
        }
        if !(self.train.clip_norm >= 0.0) || !(self.train.projection_lr_scale >= 0.0) {
            return Err(Error::Config("train.clip_norm and train.projection_lr_scale must be non-negative".into()));
        }
        if self.eval.folds < 2 || self.eval.pairs_per_fold < 2 || self.eval.probe_samples < 2 {
            return Err(Error::Config("eval.folds, eval.pairs_per_fold and eval.probe_samples must be ≥ 2".into()));
        }
        if self.eval.far_targets.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("eval.far_targets must lie in [0, 1]".into()));
        }
        if !matches!(self.sweep.param.as_str(), "lambda1" | "lambda2") {
            return Err(Error::Config(format!("sweep.param must be lambda1 or lambda2, got {:?}", self.sweep.param)));
        }
        if self.sweep.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("sweep.values must be non-negative".into()));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
