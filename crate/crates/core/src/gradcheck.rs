//! Finite-difference checks of every loss the trainer differentiates, run
//! on small random 4-class batches. Cases are registered by name so the
//! CLI can run one or all of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::landmark_ae::{ae_loss_on, AutoEncoderConfig, AutoEncoderModel};
use crate::losses::{margin_loss_on, pose_loss_on, poseface_objective, LossWeights, PoseLossMode};
use crate::model::{orth_penalty, ModelConfig, PoseFaceModel};
use crate::registry::Registry;
use crate::tensor::{grad_check, Tape, Tensor, Var};

pub const TOY_CLASSES: usize = 4;
pub const TOY_BATCH: usize = 8;
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub case: &'static str,
    /// Worst over all checked tensors.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

pub trait GradCase: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, seed: u64) -> Result<GradCheckRow>;
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Result<Tensor> {
    let data = (0..rows * cols)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut *rng);
            scale * g
        })
        .collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, data)
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let mut t = gaussian(rng, rows, cols, 1.0)?;
    for i in 0..rows {
        let n = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..cols {
            t.set(i, j, t.get(i, j) / n);
        }
    }
    Ok(t)
}

/// Checks `loss` against each tensor of `params` in turn, holding the
/// others fixed as constants.
pub fn check_params<F>(params: &[Tensor], loss: F) -> Result<(f64, usize)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut worst = 0.0f64;
    let mut coords = 0;
    for k in 0..params.len() {
        let err = grad_check(
            |tape, x| {
                let vars = params
                    .iter()
                    .enumerate()
                    .map(|(j, p)| if j == k { Ok(x) } else { tape.constant(p.clone()) })
                    .collect::<Result<Vec<_>>>()?;
                loss(tape, &vars)
            },
            &params[k],
            FD_STEP,
        )?;
        worst = worst.max(err);
        coords += params[k].numel();
    }
    Ok((worst, coords))
}

fn toy_labels(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let classes = (0..TOY_BATCH).map(|i| i % TOY_CLASSES).collect();
    let yaws = (0..TOY_BATCH).map(|_| rng.gen_range(-90.0..90.0)).collect();
    (classes, yaws)
}

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        d_in: 6,
        backbone_hidden: vec![10],
        d_b: 8,
        d: 3,
        d_o: 3,
        d_p: 3,
        n_classes: TOY_CLASSES,
        ..ModelConfig::default()
    }
}

fn toy_ae_config() -> AutoEncoderConfig {
    AutoEncoderConfig {
        height: 2,
        width: 2,
        hidden: vec![6],
        code_dim: 3,
        ..AutoEncoderConfig::default()
    }
}

#[derive(Debug, Default)]
pub struct PaaCase;

impl GradCase for PaaCase {
    fn name(&self) -> &'static str {
        "paa_loss"
    }

    fn run(&self, seed: u64) -> Result<GradCheckRow> {
        let mut rng = rng(seed, 1);
        let cfg = toy_model_config();
        let f_o = gaussian(&mut rng, TOY_BATCH, cfg.d_o, 1.0)?;
        let weight = gaussian(&mut rng, cfg.d_o, TOY_CLASSES, 1.0)?;
        let (classes, yaws) = toy_labels(&mut rng);
        let margins: Vec<f64> = yaws
            .iter()
            .map(|y| cfg.m_b + crate::geometry::adaptive_ratio(*y) * cfg.delta_m)
            .collect();
        let (err, coords) = check_params(&[f_o, weight], |tape, v| {
            margin_loss_on(tape, v[0], v[1], &classes, &margins, cfg.s)
        })?;
        Ok(GradCheckRow {
            case: self.name(),
            max_rel_error: err,
            coordinates: coords,
        })
    }
}

#[derive(Debug, Default)]
pub struct PoseCase;

impl GradCase for PoseCase {
    fn name(&self) -> &'static str {
        "pose_loss"
    }

    fn run(&self, seed: u64) -> Result<GradCheckRow> {
        let mut rng = rng(seed, 2);
        let f_p = gaussian(&mut rng, TOY_BATCH, 3, 1.0)?;
        let target = unit_rows(&mut rng, TOY_BATCH, 3)?;
        let mut worst = 0.0f64;
        let mut coords = 0;
        for mode in [PoseLossMode::Norm, PoseLossMode::Squared] {
            let (e, c) = check_params(&[f_p.clone(), target.clone()], |tape, v| pose_loss_on(tape, v[0], v[1], mode))?;
            worst = worst.max(e);
            coords += c;
        }
        Ok(GradCheckRow {
            case: self.name(),
            max_rel_error: worst,
            coordinates: coords,
        })
    }
}

#[derive(Debug, Default)]
pub struct OrthCase;

impl GradCase for OrthCase {
    fn name(&self) -> &'static str {
        "orth_penalty"
    }

    fn run(&self, seed: u64) -> Result<GradCheckRow> {
        let mut rng = rng(seed, 3);
        let w_i = gaussian(&mut rng, 8, 3, 1.0)?;
        let w_p = gaussian(&mut rng, 8, 4, 0.3)?;
        let (err, coords) = check_params(&[w_i, w_p], |tape, v| orth_penalty(tape, v[0], v[1]))?;
        Ok(GradCheckRow {
            case: self.name(),
            max_rel_error: err,
            coordinates: coords,
        })
    }
}

#[derive(Debug, Default)]
pub struct AeCase;

impl GradCase for AeCase {
    fn name(&self) -> &'static str {
        "ae_loss"
    }

    fn run(&self, seed: u64) -> Result<GradCheckRow> {
        let mut rng = rng(seed, 4);
        let cfg = toy_ae_config();
        let ae = AutoEncoderModel::new(&cfg, seed)?;
        let input: Vec<f64> = (0..TOY_BATCH * cfg.input_dim()).map(|_| rng.gen::<f64>()).collect();
        let input = Tensor::matrix(TOY_BATCH, cfg.input_dim(), input)?;
        let params: Vec<Tensor> = ae.layers().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect();
        let (err, coords) = check_params(&params, |tape, v| {
            let x = tape.constant(input.clone())?;
            let code = ae.encode_on(tape, v, x)?;
            let out = ae.decode_on(tape, v, code)?;
            ae_loss_on(tape, x, out, cfg.lambda_h)
        })?;
        Ok(GradCheckRow {
            case: self.name(),
            max_rel_error: err,
            coordinates: coords,
        })
    }
}

/// The whole objective with every term switched on, checked against every
/// model tensor; pose targets come from a toy autoencoder.
#[derive(Debug, Default)]
pub struct PoseFaceCase;

impl GradCase for PoseFaceCase {
    fn name(&self) -> &'static str {
        "poseface_loss"
    }

    fn run(&self, seed: u64) -> Result<GradCheckRow> {
        let mut rng = rng(seed, 5);
        let cfg = toy_model_config();
        let model = PoseFaceModel::new(&cfg, seed)?;
        let ae_cfg = toy_ae_config();
        let ae = AutoEncoderModel::new(&ae_cfg, seed ^ 1)?;
        let heat: Vec<f64> = (0..TOY_BATCH * ae_cfg.input_dim()).map(|_| rng.gen::<f64>()).collect();
        let heat = Tensor::matrix(TOY_BATCH, ae_cfg.input_dim(), heat)?;
        let target = {
            let mut tape = Tape::new();
            let p = ae.record_params(&mut tape, false)?;
            let x = tape.constant(heat)?;
            let c = ae.encode_on(&mut tape, &p, x)?;
            tape.value(c).clone()
        };
        let obs = gaussian(&mut rng, TOY_BATCH, cfg.d_in, 1.0)?;
        let (classes, yaws) = toy_labels(&mut rng);
        let margins: Vec<f64> = yaws
            .iter()
            .map(|y| cfg.m_b + crate::geometry::adaptive_ratio(*y) * cfg.delta_m)
            .collect();
        let weights = LossWeights {
            lambda1: 2.0,
            lambda2: 3.0,
        };
        let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
        let n_layers = model.backbone.layers.len();
        let (err, coords) = check_params(&params, |tape, v| {
            let vars = crate::model::ModelVars {
                backbone: v[..2 * n_layers].chunks(2).map(|c| (c[0], c[1])).collect(),
                w_i: v[2 * n_layers],
                w_p: v[2 * n_layers + 1],
                feature: (v[2 * n_layers + 2], v[2 * n_layers + 3]),
                classifier: v[2 * n_layers + 4],
            };
            let x = tape.constant(obs.clone())?;
            let t = tape.constant(target.clone())?;
            let lv = poseface_objective(
                tape,
                &model,
                &vars,
                x,
                &classes,
                &margins,
                Some(t),
                weights,
                PoseLossMode::Norm,
            )?;
            Ok(lv.total)
        })?;
        Ok(GradCheckRow {
            case: self.name(),
            max_rel_error: err,
            coordinates: coords,
        })
    }
}

pub fn grad_cases() -> Registry<dyn GradCase> {
    let mut r = Registry::<dyn GradCase>::new("gradcheck case");
    r.register("paa_loss", || Box::new(PaaCase));
    r.register("pose_loss", || Box::new(PoseCase));
    r.register("orth_penalty", || Box::new(OrthCase));
    r.register("ae_loss", || Box::new(AeCase));
    r.register("poseface_loss", || Box::new(PoseFaceCase));
    r
}

/// Runs the named cases, or all of them when `names` is empty.
pub fn run_gradcheck(names: &[&str], seed: u64) -> Result<Vec<GradCheckRow>> {
    let reg = grad_cases();
    let names: Vec<&str> = if names.is_empty() { reg.names() } else { names.to_vec() };
    names.iter().map(|n| reg.create(n)?.run(seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        for row in run_gradcheck(&[], 7).unwrap() {
            assert!(row.max_rel_error < 1e-4, "{row:?}");
            assert!(row.coordinates > 0);
        }
    }
}
