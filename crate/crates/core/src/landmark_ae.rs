//! Landmark autoencoder: binary heatmap stacks in, unit-norm pose codes out.
//!
//! The encoder is a stack of fully connected relu layers ending in a linear
//! layer and row L2 normalization; the decoder mirrors it and ends in a
//! sigmoid. Training minimises the mask-weighted reconstruction loss
//!
//! ```text
//! λ_h·‖H_i ∘ (H_i − H_o)‖_F + ‖(1 − H_i) ∘ (H_i − H_o)‖_F
//! ```
//!
//! averaged over the batch. After [`pretrain`] the model is frozen: any
//! further training call fails, and only frozen models can be saved.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{render_heatmaps, HeatmapStack, LandmarkSet, NUM_LANDMARKS};
use crate::nn::{glorot_uniform, Dense};
use crate::tensor::{Sgd, SgdConfig, Tape, Tensor, Var};

pub const AE_MAGIC: &[u8; 8] = b"POSEAE01";

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderConfig {
    pub height: usize,
    pub width: usize,
    /// Hidden encoder widths between the flattened input and the code.
    pub hidden: Vec<usize>,
    pub code_dim: usize,
    pub radius: f64,
    pub lambda_h: f64,
}

impl Default for AutoEncoderConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            hidden: vec![256, 64],
            code_dim: 32,
            radius: 1.0,
            lambda_h: 100.0,
        }
    }
}

impl AutoEncoderConfig {
    pub fn input_dim(&self) -> usize {
        NUM_LANDMARKS * self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.code_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("autoencoder dimensions must be positive".into()));
        }
        if !(self.lambda_h > 0.0 && self.lambda_h.is_finite()) {
            return Err(Error::Config(format!("lambda_h must be positive, got {}", self.lambda_h)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be non-negative, got {}", self.radius)));
        }
        Ok(())
    }

    pub fn render(&self, lm: &LandmarkSet) -> Result<HeatmapStack> {
        render_heatmaps(lm, self.height, self.width, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderModel {
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    height: usize,
    width: usize,
    pretrained: bool,
}

impl AutoEncoderModel {
    pub fn new(config: &AutoEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.input_dim()];
        dims.extend(&config.hidden);
        dims.push(config.code_dim);
        let encoder = dims
            .windows(2)
            .map(|w| Dense::new(glorot_uniform(w[0], w[1], &mut rng), Tensor::zeros(&[1, w[1]])))
            .collect::<Result<Vec<_>>>()?;
        let decoder = dims
            .iter()
            .rev()
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| Dense::new(glorot_uniform(*w[0], *w[1], &mut rng), Tensor::zeros(&[1, *w[1]])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            decoder,
            height: config.height,
            width: config.width,
            pretrained: false,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.last().map_or(0, Dense::out_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn frame(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.decoder)
    }

    fn check_stack(&self, h: &HeatmapStack) -> Result<()> {
        if h.height() != self.height || h.width() != self.width {
            return Err(Error::Shape(format!(
                "heatmap {}x{} for a {}x{} autoencoder",
                h.height(),
                h.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// Records the encoder on `tape` for a batch `x` (N × input_dim).
    pub fn encode_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.encoder.len() - 1;
        for (i, chunk) in params[..2 * self.encoder.len()].chunks(2).enumerate() {
            h = tape.linear(h, chunk[0], Some(chunk[1]))?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        tape.row_normalize(h)
    }

    pub fn decode_on(&self, tape: &mut Tape, params: &[Var], code: Var) -> Result<Var> {
        let mut h = code;
        let dec = &params[2 * self.encoder.len()..];
        let last = self.decoder.len() - 1;
        for (i, chunk) in dec.chunks(2).enumerate() {
            h = tape.linear(h, chunk[0], Some(chunk[1]))?;
            h = if i < last { tape.relu(h)? } else { tape.sigmoid(h)? };
        }
        Ok(h)
    }

    /// Records every weight and bias on `tape`, encoder first.
    pub fn record_params(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        let mut vars = Vec::new();
        for layer in self.layers() {
            for t in [&layer.weight, &layer.bias] {
                vars.push(if trainable { tape.param(t)? } else { tape.constant(t.clone())? });
            }
        }
        Ok(vars)
    }

    fn stack_batch(&self, stacks: &[&HeatmapStack]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(stacks.len() * self.input_dim());
        for h in stacks {
            self.check_stack(h)?;
            data.extend_from_slice(h.values());
        }
        Tensor::matrix(stacks.len(), self.input_dim(), data)
    }

    /// Unit-norm code for each stack, one row per stack.
    pub fn encode_batch(&self, stacks: &[&HeatmapStack]) -> Result<Tensor> {
        if stacks.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false)?;
        let x = tape.constant(self.stack_batch(stacks)?)?;
        let code = self.encode_on(&mut tape, &params, x)?;
        Ok(tape.value(code).clone())
    }

    pub fn encode(&self, h: &HeatmapStack) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[h])?.into_data())
    }

    /// Pose pseudo-labels; refuses a model that has not been pretrained.
    pub fn pseudo_labels(&self, stacks: &[&HeatmapStack]) -> Result<Tensor> {
        if !self.pretrained {
            return Err(Error::NotPretrained);
        }
        self.encode_batch(stacks)
    }

    pub fn decode(&self, code: &[f64]) -> Result<HeatmapStack> {
        if code.len() != self.code_dim() {
            return Err(Error::Shape(format!(
                "code of length {} for code dimension {}",
                code.len(),
                self.code_dim()
            )));
        }
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false)?;
        let c = tape.constant(Tensor::matrix(1, code.len(), code.to_vec())?)?;
        let out = self.decode_on(&mut tape, &params, c)?;
        HeatmapStack::new(self.height, self.width, tape.value(out).data().to_vec())
    }

    pub fn reconstruct(&self, h: &HeatmapStack) -> Result<HeatmapStack> {
        self.decode(&self.encode(h)?)
    }

    /// Mean reconstruction loss over `stacks`.
    pub fn mean_loss(&self, stacks: &[&HeatmapStack], lambda_h: f64) -> Result<f64> {
        if stacks.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false)?;
        let x = tape.constant(self.stack_batch(stacks)?)?;
        let code = self.encode_on(&mut tape, &params, x)?;
        let out = self.decode_on(&mut tape, &params, code)?;
        let loss = ae_loss_on(&mut tape, x, out, lambda_h)?;
        Ok(tape.value(loss).item())
    }

    /// One SGD step on a batch; returns the batch loss before the update.
    pub fn train_step(&mut self, stacks: &[&HeatmapStack], lambda_h: f64, sgd: &mut Sgd, epoch: usize) -> Result<f64> {
        if self.pretrained {
            return Err(Error::Frozen);
        }
        let mut tape = Tape::unchecked();
        let params = self.record_params(&mut tape, true)?;
        let x = tape.constant(self.stack_batch(stacks)?)?;
        let code = self.encode_on(&mut tape, &params, x)?;
        let out = self.decode_on(&mut tape, &params, code)?;
        let loss = ae_loss_on(&mut tape, x, out, lambda_h)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric("autoencoder loss diverged".into()));
        }
        let grads = tape.backward(loss)?;
        let mut tensors: Vec<&mut Tensor> = self
            .encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        for (t, v) in tensors.iter_mut().zip(&params) {
            t.zero_grad();
            grads.accumulate_into(*v, t)?;
        }
        sgd.step(&mut tensors, epoch)?;
        Ok(value)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.pretrained {
            return Err(Error::NotPretrained);
        }
        let mut w = ByteWriter::new();
        w.bytes(AE_MAGIC);
        let layers: Vec<&Dense> = self.layers().collect();
        w.len_u32(layers.len())?;
        for l in layers {
            l.write(&mut w)?;
        }
        Ok(w.finish())
    }

    /// Loads a frozen model. The decoder mirrors the encoder, so the first
    /// half of the layers is the encoder.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(AE_MAGIC)?;
        let at = r.offset();
        let n = r.u32()? as usize;
        if n < 2 || n % 2 != 0 {
            return Err(Error::format(at, format!("layer count {n} is not an even number ≥ 2")));
        }
        let mut layers = (0..n).map(|_| Dense::read(&mut r)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::format(at, format!("layer {i} output does not feed layer {}", i + 1)));
            }
        }
        let input = layers[0].in_dim();
        if layers[n - 1].out_dim() != input || input % NUM_LANDMARKS != 0 {
            return Err(Error::format(at, "decoder output does not match encoder input"));
        }
        let plane = input / NUM_LANDMARKS;
        let side = (plane as f64).sqrt().round() as usize;
        if side * side != plane {
            return Err(Error::format(at, "heatmap frame is not square"));
        }
        let decoder = layers.split_off(n / 2);
        Ok(Self {
            encoder: layers,
            decoder,
            height: side,
            width: side,
            pretrained: true,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Batch-mean mask-weighted reconstruction loss on the tape. `target` must
/// be binary; each row is one flattened heatmap stack.
pub fn ae_loss_on(tape: &mut Tape, target: Var, output: Var, lambda_h: f64) -> Result<Var> {
    let mask = tape.value(target).clone();
    let inv = Tensor::new(mask.shape(), mask.data().iter().map(|m| 1.0 - m).collect())?;
    let diff = tape.sub(target, output)?;
    let mask = tape.constant(mask)?;
    let inv = tape.constant(inv)?;
    let pos = tape.mul(mask, diff)?;
    let neg = tape.mul(inv, diff)?;
    let pos = tape.row_norms(pos)?;
    let neg = tape.row_norms(neg)?;
    let pos = tape.scale(pos, lambda_h)?;
    let per_sample = tape.add(pos, neg)?;
    tape.mean(per_sample)
}

/// Reconstruction loss of one stack against a candidate output.
pub fn ae_loss(input: &HeatmapStack, output: &HeatmapStack, lambda_h: f64) -> Result<f64> {
    if input.len() != output.len() || input.height() != output.height() {
        return Err(Error::Shape("heatmap stacks differ in shape".into()));
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    for (&hi, &ho) in input.values().iter().zip(output.values()) {
        let d = hi - ho;
        pos += (hi * d).powi(2);
        neg += ((1.0 - hi) * d).powi(2);
    }
    Ok(lambda_h * pos.sqrt() + neg.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            sgd: SgdConfig {
                learning_rate: 0.001,
                momentum: 0.9,
                weight_decay: 0.0,
                schedule: vec![(8, 0.0001)],
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub initial_holdout: f64,
    pub final_holdout: f64,
    /// Final epoch mean below first epoch mean.
    pub trend_ok: bool,
}

/// Trains `model` on `train` and freezes it.
pub fn pretrain(
    mut model: AutoEncoderModel,
    ae: &AutoEncoderConfig,
    train: &[HeatmapStack],
    holdout: &[HeatmapStack],
    config: &PretrainConfig,
) -> Result<(AutoEncoderModel, PretrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let holdout_refs: Vec<&HeatmapStack> = if holdout.is_empty() { train.iter().collect() } else { holdout.iter().collect() };
    let initial_holdout = model.mean_loss(&holdout_refs, ae.lambda_h)?;
    let mut sgd = Sgd::new(config.sgd.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&HeatmapStack> = chunk.iter().map(|&i| &train[i]).collect();
            total += model.train_step(&batch, ae.lambda_h, &mut sgd, epoch)? * batch.len() as f64;
            count += batch.len();
        }
        epoch_losses.push(total / count as f64);
    }
    for l in model.encoder.iter_mut().chain(&mut model.decoder) {
        l.weight.zero_grad();
        l.bias.zero_grad();
    }
    model.pretrained = true;
    let final_holdout = model.mean_loss(&holdout_refs, ae.lambda_h)?;
    let trend_ok = match (epoch_losses.first(), epoch_losses.last()) {
        (Some(first), Some(last)) => last < first,
        _ => false,
    };
    Ok((
        model,
        PretrainReport {
            epoch_losses,
            initial_holdout,
            final_holdout,
            trend_ok,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack_with(hot: &[usize], h: usize, w: usize) -> HeatmapStack {
        let mut v = vec![0.0; NUM_LANDMARKS * h * w];
        for &i in hot {
            v[i] = 1.0;
        }
        HeatmapStack::new(h, w, v).unwrap()
    }

    #[test]
    fn loss_zero_on_perfect_reconstruction() {
        let h = stack_with(&[3, 40, 77], 4, 4);
        assert_eq!(ae_loss(&h, &h, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn background_term_only() {
        // Single 2×2 channel of zeros against all ones: ‖−1‖_F over 4 pixels.
        let zeros = [0.0; 4];
        let ones = [1.0; 4];
        let d: f64 = zeros.iter().zip(&ones).map(|(a, b)| (a - b) * (a - b)).sum();
        assert_eq!(d.sqrt(), 2.0);
        let hi = HeatmapStack::new(2, 2, vec![0.0; NUM_LANDMARKS * 4]).unwrap();
        let mut ho_vals = vec![0.0; NUM_LANDMARKS * 4];
        ho_vals[..4].copy_from_slice(&ones);
        let ho = HeatmapStack::new(2, 2, ho_vals).unwrap();
        assert_eq!(ae_loss(&hi, &ho, 100.0).unwrap(), 2.0);
    }

    #[test]
    fn one_hot_pixel_weighted() {
        let hi = stack_with(&[5], 4, 4);
        let ho = stack_with(&[], 4, 4);
        assert_eq!(ae_loss(&hi, &ho, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn codes_unit_norm_and_decodes_bounded() {
        let cfg = AutoEncoderConfig {
            height: 4,
            width: 4,
            hidden: vec![8],
            code_dim: 3,
            ..AutoEncoderConfig::default()
        };
        let m = AutoEncoderModel::new(&cfg, 1).unwrap();
        let h = stack_with(&[1, 17, 200], 4, 4);
        let code = m.encode(&h).unwrap();
        let n: f64 = code.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(code, m.encode(&h).unwrap());
        let out = m.decode(&[0.0; 3]).unwrap();
        assert!(out.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out, m.decode(&[0.0; 3]).unwrap());
        assert!(matches!(m.decode(&[0.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn untrained_model_refuses_pseudo_labels_and_save() {
        let cfg = AutoEncoderConfig {
            height: 4,
            width: 4,
            hidden: vec![8],
            code_dim: 3,
            ..AutoEncoderConfig::default()
        };
        let m = AutoEncoderModel::new(&cfg, 1).unwrap();
        let h = stack_with(&[1], 4, 4);
        assert!(matches!(m.pseudo_labels(&[&h]), Err(Error::NotPretrained)));
        assert!(matches!(m.to_bytes(), Err(Error::NotPretrained)));
    }

    #[test]
    fn pretrain_rejects_empty_and_freezes() {
        let cfg = AutoEncoderConfig {
            height: 4,
            width: 4,
            hidden: vec![8],
            code_dim: 3,
            ..AutoEncoderConfig::default()
        };
        let m = AutoEncoderModel::new(&cfg, 1).unwrap();
        let pc = PretrainConfig {
            epochs: 1,
            ..PretrainConfig::default()
        };
        assert!(matches!(pretrain(m.clone(), &cfg, &[], &[], &pc), Err(Error::EmptyDataset)));
        let data = vec![stack_with(&[1, 30], 4, 4)];
        let (mut frozen, _) = pretrain(m, &cfg, &data, &[], &pc).unwrap();
        let mut sgd = Sgd::new(pc.sgd.clone()).unwrap();
        assert!(matches!(frozen.train_step(&[&data[0]], 100.0, &mut sgd, 0), Err(Error::Frozen)));
        let bytes = frozen.to_bytes().unwrap();
        assert_eq!(AutoEncoderModel::from_bytes(&bytes).unwrap(), frozen);
    }
}
