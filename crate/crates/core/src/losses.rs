//! Angular-margin logits, the pose-adaptive ArcFace loss, the pose-feature
//! loss and the combined PoseFace objective.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::HeatmapStack;
use crate::landmark_ae::AutoEncoderModel;
use crate::model::{orth_penalty, MarginClassifier, ModelVars, PoseFaceModel};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLabels {
    pub classes: Vec<usize>,
    /// Adaptive ratios `r_i ∈ [0, 1]`.
    pub ratios: Vec<f64>,
}

impl BatchLabels {
    pub fn new(classes: Vec<usize>, ratios: Vec<f64>) -> Result<Self> {
        if classes.len() != ratios.len() {
            return Err(Error::Shape(format!(
                "{} classes but {} ratios",
                classes.len(),
                ratios.len()
            )));
        }
        if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Numeric(format!("adaptive ratio {r} outside [0, 1]")));
        }
        Ok(Self { classes, ratios })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// `m_i = m_b + r_i·δ_m`
    pub fn margins(&self, m_b: f64, delta_m: f64) -> Vec<f64> {
        self.ratios.iter().map(|r| m_b + r * delta_m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 3.0,
            lambda2: 1e5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got λ1 = {}, λ2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseLossMode {
    /// Mean Euclidean norm of the residual.
    #[default]
    Norm,
    /// Mean squared Euclidean norm.
    Squared,
}

impl PoseLossMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Norm => "norm",
            Self::Squared => "squared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(Self::Norm),
            "squared" => Ok(Self::Squared),
            _ => Err(Error::Config(format!("pose loss mode must be norm or squared, got {s:?}"))),
        }
    }
}

fn check_margins(margins: &[f64]) -> Result<()> {
    match margins.iter().find(|m| !(0.0..PI / 2.0).contains(*m)) {
        Some(m) => Err(Error::Numeric(format!("margin {m} outside [0, π/2)"))),
        None => Ok(()),
    }
}

/// `N × n` logits. The target entry is `s·cos(θ_y + m)` while
/// `θ_y ≤ π − m` and `s·(cos θ_y − (1 − cos m))` past that point, which
/// meets the main branch at `θ_y = π − m` and keeps decreasing in `θ_y`.
/// Rows with `m = 0` are left as `s·cos θ_y` exactly.
pub fn margin_logits_on(
    tape: &mut Tape,
    f_o: Var,
    weight: Var,
    classes: &[usize],
    margins: &[f64],
    s: f64,
) -> Result<Var> {
    let n_rows = tape.value(f_o).rows();
    let n_classes = tape.value(weight).cols();
    if classes.len() != n_rows || margins.len() != n_rows {
        return Err(Error::Shape(format!(
            "{n_rows} embeddings, {} labels, {} margins",
            classes.len(),
            margins.len()
        )));
    }
    check_margins(margins)?;
    let e = tape.row_normalize(f_o)?;
    let w = tape.col_normalize(weight)?;
    let cos = tape.matmul(e, w)?;
    let c_y = tape.gather_cols(cos, classes)?;

    let mut main_mask = vec![0.0; n_rows];
    let mut ext_offset = vec![0.0; n_rows];
    for (i, &m) in margins.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let theta = tape.value(c_y).data()[i].clamp(-1.0, 1.0).acos();
        if theta <= PI - m {
            main_mask[i] = 1.0;
        } else {
            ext_offset[i] = -(1.0 - m.cos());
        }
    }
    let theta = tape.arccos(c_y)?;
    let m = tape.constant(Tensor::matrix(n_rows, 1, margins.to_vec())?)?;
    let shifted = tape.add(theta, m)?;
    let main = tape.cos(shifted)?;
    let main_delta = tape.sub(main, c_y)?;
    let mask = tape.constant(Tensor::matrix(n_rows, 1, main_mask)?)?;
    let main_delta = tape.mul(mask, main_delta)?;
    let offset = tape.constant(Tensor::matrix(n_rows, 1, ext_offset)?)?;
    let delta = tape.add(main_delta, offset)?;

    let spread = tape.broadcast_col(delta, n_classes)?;
    let mut onehot = Tensor::zeros(&[n_rows, n_classes]);
    for (i, &y) in classes.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let onehot = tape.constant(onehot)?;
    let target_shift = tape.mul(onehot, spread)?;
    let adjusted = tape.add(cos, target_shift)?;
    tape.scale(adjusted, s)
}

/// Batch-mean cross-entropy over margin logits.
pub fn margin_loss_on(
    tape: &mut Tape,
    f_o: Var,
    weight: Var,
    classes: &[usize],
    margins: &[f64],
    s: f64,
) -> Result<Var> {
    let logits = margin_logits_on(tape, f_o, weight, classes, margins, s)?;
    let lse = tape.log_sum_exp_rows(logits)?;
    let target = tape.gather_cols(logits, classes)?;
    let ce = tape.sub(lse, target)?;
    tape.mean(ce)
}

/// Pose-adaptive ArcFace loss with the classifier's `m_b` and `δ_m`.
pub fn paa_loss_on(
    tape: &mut Tape,
    f_o: Var,
    weight: Var,
    classifier: &MarginClassifier,
    labels: &BatchLabels,
) -> Result<Var> {
    let margins = labels.margins(classifier.m_b, classifier.delta_m);
    margin_loss_on(tape, f_o, weight, &labels.classes, &margins, classifier.s)
}

/// Batch-mean `‖F_p^L − F_p‖₂` (or its square).
pub fn pose_loss_on(tape: &mut Tape, f_p: Var, target: Var, mode: PoseLossMode) -> Result<Var> {
    let diff = tape.sub(target, f_p)?;
    let per_row = match mode {
        PoseLossMode::Norm => tape.row_norms(diff)?,
        PoseLossMode::Squared => {
            let sq = tape.mul(diff, diff)?;
            tape.sum_rows(sq)?
        }
    };
    tape.mean(per_row)
}

fn run<T>(f: impl FnOnce(&mut Tape) -> Result<(Var, T)>) -> Result<f64> {
    let mut tape = Tape::new();
    let (v, _) = f(&mut tape)?;
    Ok(tape.value(v).item())
}

pub fn margin_logits(
    f_o: &Tensor,
    classifier: &MarginClassifier,
    classes: &[usize],
    margins: &[f64],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(f_o.clone())?;
    let w = tape.constant(classifier.weight.clone())?;
    let l = margin_logits_on(&mut tape, x, w, classes, margins, classifier.s)?;
    Ok(tape.value(l).clone())
}

pub fn paa_loss(f_o: &Tensor, classifier: &MarginClassifier, labels: &BatchLabels) -> Result<f64> {
    run(|tape| {
        let x = tape.constant(f_o.clone())?;
        let w = tape.constant(classifier.weight.clone())?;
        Ok((paa_loss_on(tape, x, w, classifier, labels)?, ()))
    })
}

/// ArcFace with one fixed margin for every sample.
pub fn arcface_loss(f_o: &Tensor, classifier: &MarginClassifier, classes: &[usize], margin: f64) -> Result<f64> {
    run(|tape| {
        let x = tape.constant(f_o.clone())?;
        let w = tape.constant(classifier.weight.clone())?;
        let m = vec![margin; classes.len()];
        Ok((margin_loss_on(tape, x, w, classes, &m, classifier.s)?, ()))
    })
}

pub fn pose_loss(f_p: &Tensor, target: &Tensor) -> Result<f64> {
    pose_loss_with(f_p, target, PoseLossMode::Norm)
}

pub fn pose_loss_with(f_p: &Tensor, target: &Tensor, mode: PoseLossMode) -> Result<f64> {
    if f_p.shape() != target.shape() {
        return Err(Error::Shape(format!("F_p {:?} vs target {:?}", f_p.shape(), target.shape())));
    }
    run(|tape| {
        let a = tape.constant(f_p.clone())?;
        let b = tape.constant(target.clone())?;
        Ok((pose_loss_on(tape, a, b, mode)?, ()))
    })
}

/// Loss vars recorded on a tape. `pose` and `orth` are unweighted.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub paa: Var,
    pub pose: Option<Var>,
    pub orth: Var,
}

/// Plain values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub paa: f64,
    /// `λ₁ · pose_loss`
    pub pose: f64,
    /// `λ₂ · orth_penalty`
    pub orth: f64,
}

impl LossVars {
    pub fn values(&self, tape: &Tape, weights: LossWeights) -> LossBreakdown {
        LossBreakdown {
            total: tape.value(self.total).item(),
            paa: tape.value(self.paa).item(),
            pose: self.pose.map_or(0.0, |p| weights.lambda1 * tape.value(p).item()),
            orth: weights.lambda2 * tape.value(self.orth).item(),
        }
    }
}

/// `L_cls + λ₁·pose_loss(F_p, target) + λ₂·‖W̃_Iᵀ W̃_P‖_F` on an
/// already-recorded model. Without a pose target the pose term is dropped.
#[allow(clippy::too_many_arguments)]
pub fn poseface_objective(
    tape: &mut Tape,
    model: &PoseFaceModel,
    vars: &ModelVars,
    observations: Var,
    classes: &[usize],
    margins: &[f64],
    pose_target: Option<Var>,
    weights: LossWeights,
    mode: PoseLossMode,
) -> Result<LossVars> {
    weights.validate()?;
    let f = model.forward(tape, vars, observations)?;
    let paa = margin_loss_on(tape, f.f_o, vars.classifier, classes, margins, model.classifier.s)?;
    let orth = orth_penalty(tape, vars.w_i, vars.w_p)?;
    let mut total = paa;
    let pose = match pose_target {
        Some(t) => {
            let p = pose_loss_on(tape, f.f_p, t, mode)?;
            let w = tape.scale(p, weights.lambda1)?;
            total = tape.add(total, w)?;
            Some(p)
        }
        None => None,
    };
    let w = tape.scale(orth, weights.lambda2)?;
    total = tape.add(total, w)?;
    Ok(LossVars { total, paa, pose, orth })
}

/// A mini-batch with everything the full objective needs.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub observations: Tensor,
    pub labels: BatchLabels,
    pub heatmaps: Vec<HeatmapStack>,
}

/// Full PoseFace loss with pose targets taken from the frozen autoencoder.
pub fn poseface_loss(
    model: &PoseFaceModel,
    ae: &AutoEncoderModel,
    batch: &TrainBatch,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    if batch.heatmaps.len() != batch.labels.len() || batch.observations.rows() != batch.labels.len() {
        return Err(Error::Shape("batch fields disagree in length".into()));
    }
    let stacks: Vec<&HeatmapStack> = batch.heatmaps.iter().collect();
    let target = ae.pseudo_labels(&stacks)?;
    let margins = batch.labels.margins(model.classifier.m_b, model.classifier.delta_m);
    let mut tape = Tape::new();
    let vars = model.record(&mut tape, false)?;
    let x = tape.constant(batch.observations.clone())?;
    let t = tape.constant(target)?;
    let lv = poseface_objective(
        &mut tape,
        model,
        &vars,
        x,
        &batch.labels.classes,
        &margins,
        Some(t),
        weights,
        PoseLossMode::Norm,
    )?;
    Ok(lv.values(&tape, weights))
}
