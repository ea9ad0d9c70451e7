//! Backbone, identity/pose projection heads, feature layer and the
//! angular classifier.
//!
//! ```text
//! observation ──backbone──▶ F_b ──W_Iᵀ──▶ F_i ──feature layer──▶ F_o ──▶ classifier
//!                            └───W_Pᵀ──▶ F_p   (matched to the frozen landmark code)
//! ```
//!
//! Projections use the raw `W_I`, `W_P`; the orthogonality penalty uses
//! their column-normalised versions.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Dense};
use crate::tensor::{Tape, Tensor, Var};

pub const MODEL_MAGIC: &[u8; 9] = b"POSEFACE1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    /// Hidden backbone widths between `d_in` and `d_b`.
    pub backbone_hidden: Vec<usize>,
    pub d_b: usize,
    /// Identity feature width (512 in the full-size setting).
    pub d: usize,
    pub d_o: usize,
    pub d_p: usize,
    pub n_classes: usize,
    pub s: f64,
    pub m_b: f64,
    pub delta_m: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 64,
            backbone_hidden: vec![128],
            d_b: 64,
            d: 32,
            d_o: 32,
            d_p: 32,
            n_classes: 64,
            s: 64.0,
            m_b: 0.5,
            delta_m: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_in, self.d_b, self.d, self.d_o, self.d_p, self.n_classes];
        if dims.contains(&0) || self.backbone_hidden.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d + self.d_p > self.d_b {
            return Err(Error::Config(format!(
                "d + d_p = {} exceeds d_b = {}: orthogonal subspaces cannot fit",
                self.d + self.d_p,
                self.d_b
            )));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Config(format!("scale s must be positive, got {}", self.s)));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(0.0..half_pi).contains(&self.m_b) || !(self.delta_m >= 0.0) || self.m_b + self.delta_m >= half_pi {
            return Err(Error::Config(format!(
                "margins need 0 ≤ m_b, 0 ≤ δ_m, m_b + δ_m < π/2; got m_b = {}, δ_m = {}",
                self.m_b, self.delta_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub layers: Vec<Dense>,
}

impl Backbone {
    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::in_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    /// `d_b × d`
    pub w_i: Tensor,
    /// `d_b × d_p`
    pub w_p: Tensor,
    /// `d × d_o` with bias, no activation.
    pub feature: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginClassifier {
    /// `d_o × n`; columns are normalised before use.
    pub weight: Tensor,
    pub s: f64,
    pub m_b: f64,
    pub delta_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFaceModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub heads: ProjectionHeads,
    pub classifier: MarginClassifier,
}

/// Vars for every parameter of a [`PoseFaceModel`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub backbone: Vec<(Var, Var)>,
    pub w_i: Var,
    pub w_p: Var,
    pub feature: (Var, Var),
    pub classifier: Var,
}

impl ModelVars {
    /// Same order as [`PoseFaceModel::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.backbone.iter().flat_map(|&(w, b)| [w, b]).collect();
        v.extend([self.w_i, self.w_p, self.feature.0, self.feature.1, self.classifier]);
        v
    }
}

/// Every intermediate feature of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub f_b: Var,
    pub f_i: Var,
    pub f_p: Var,
    pub f_o: Var,
}

impl PoseFaceModel {
    /// Uniform init bounded by `√(6/(fan_in+fan_out))` for backbone and
    /// heads; random unit columns for the classifier.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.d_in];
        dims.extend(&config.backbone_hidden);
        dims.push(config.d_b);
        let layers = dims
            .windows(2)
            .map(|w| Dense::new(glorot_uniform(w[0], w[1], &mut rng), Tensor::zeros(&[1, w[1]])))
            .collect::<Result<Vec<_>>>()?;
        let w_i = glorot_uniform(config.d_b, config.d, &mut rng);
        let w_p = glorot_uniform(config.d_b, config.d_p, &mut rng);
        let feature = Dense::new(
            glorot_uniform(config.d, config.d_o, &mut rng),
            Tensor::zeros(&[1, config.d_o]),
        )?;
        let mut cls: Vec<f64> = (0..config.d_o * config.n_classes)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for j in 0..config.n_classes {
            let n = (0..config.d_o)
                .map(|i| cls[i * config.n_classes + j].powi(2))
                .sum::<f64>()
                .sqrt();
            for i in 0..config.d_o {
                cls[i * config.n_classes + j] /= n;
            }
        }
        Ok(Self {
            config: config.clone(),
            backbone: Backbone { layers },
            heads: ProjectionHeads { w_i, w_p, feature },
            classifier: MarginClassifier {
                weight: Tensor::matrix(config.d_o, config.n_classes, cls)?,
                s: config.s,
                m_b: config.m_b,
                delta_m: config.delta_m,
            },
        })
    }

    /// Parameters in a fixed order: backbone (w, b)…, W_I, W_P, feature
    /// (w, b), classifier.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.backbone.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        v.extend([
            &self.heads.w_i,
            &self.heads.w_p,
            &self.heads.feature.weight,
            &self.heads.feature.bias,
            &self.classifier.weight,
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self
            .backbone
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        v.extend([
            &mut self.heads.w_i,
            &mut self.heads.w_p,
            &mut self.heads.feature.weight,
            &mut self.heads.feature.bias,
            &mut self.classifier.weight,
        ]);
        v
    }

    /// Indices into [`params`](Self::params) of `W_I` and `W_P`.
    pub fn projection_param_indices(&self) -> [usize; 2] {
        let b = 2 * self.backbone.layers.len();
        [b, b + 1]
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars> {
        let mut rec = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t.clone()) };
        let backbone = self
            .backbone
            .layers
            .iter()
            .map(|l| Ok((rec(&l.weight)?, rec(&l.bias)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelVars {
            backbone,
            w_i: rec(&self.heads.w_i)?,
            w_p: rec(&self.heads.w_p)?,
            feature: (rec(&self.heads.feature.weight)?, rec(&self.heads.feature.bias)?),
            classifier: rec(&self.classifier.weight)?,
        })
    }

    /// Full forward pass for a batch of observations (N × d_in).
    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Features> {
        let f_b = backbone_forward(tape, &vars.backbone, x)?;
        let (f_i, f_p) = project(tape, vars.w_i, vars.w_p, f_b)?;
        let f_o = feature_layer_forward(tape, vars.feature, f_i)?;
        Ok(Features { f_b, f_i, f_p, f_o })
    }

    /// Plain-value features for a batch: `(F_b, F_i, F_p, F_o)`.
    pub fn features(&self, observations: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false)?;
        let x = tape.constant(observations.clone())?;
        let f = self.forward(&mut tape, &vars, x)?;
        Ok((
            tape.value(f.f_b).clone(),
            tape.value(f.f_i).clone(),
            tape.value(f.f_p).clone(),
            tape.value(f.f_o).clone(),
        ))
    }

    /// Recognition embeddings `F_o`.
    pub fn embed(&self, observations: &Tensor) -> Result<Tensor> {
        Ok(self.features(observations)?.3)
    }

    pub fn orth_penalty(&self) -> Result<f64> {
        orth_penalty_value(&self.heads.w_i, &self.heads.w_p)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }
}

/// Relu between layers, linear output.
pub fn backbone_forward(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.linear(h, w, Some(b))?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Row-batched `F_i = W_Iᵀ F_b`, `F_p = W_Pᵀ F_b`, i.e. `F_b·W_I`, `F_b·W_P`.
pub fn project(tape: &mut Tape, w_i: Var, w_p: Var, f_b: Var) -> Result<(Var, Var)> {
    Ok((tape.matmul(f_b, w_i)?, tape.matmul(f_b, w_p)?))
}

pub fn feature_layer_forward(tape: &mut Tape, feature: (Var, Var), f_i: Var) -> Result<Var> {
    tape.linear(f_i, feature.0, Some(feature.1))
}

/// `‖W̃_Iᵀ W̃_P‖_F` on the tape.
pub fn orth_penalty(tape: &mut Tape, w_i: Var, w_p: Var) -> Result<Var> {
    let ni = tape.col_normalize(w_i)?;
    let np = tape.col_normalize(w_p)?;
    let nit = tape.transpose(ni)?;
    let m = tape.matmul(nit, np)?;
    tape.frobenius_norm(m)
}

/// Unit-norm columns; columns with norm ≤ 1e-12 are rejected.
pub fn column_normalize(w: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(w.clone())?;
    let n = tape.col_normalize(v)?;
    Ok(tape.value(n).clone())
}

pub fn orth_penalty_value(w_i: &Tensor, w_p: &Tensor) -> Result<f64> {
    if w_i.rows() != w_p.rows() {
        return Err(Error::Shape(format!(
            "W_I has {} rows, W_P has {}",
            w_i.rows(),
            w_p.rows()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(w_i.clone())?;
    let b = tape.constant(w_p.clone())?;
    let p = orth_penalty(&mut tape, a, b)?;
    Ok(tape.value(p).item())
}

/// Scalar hyper-parameters recorded alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointManifest {
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
}

/// `POSEFACE1`, then the manifest (u32 d_in, d_b, d, d_o, d_p, n; f64 s,
/// m_b, δ_m, λ₁, λ₂; u64 seed), then u32 layer count and the layer table
/// (backbone layers, `W_I`, `W_P`, feature layer, classifier). Bias-free
/// matrices are stored with an all-zero bias row so every entry shares the
/// layout of the autoencoder checkpoint.
pub fn encode_checkpoint(model: &PoseFaceModel, manifest: &CheckpointManifest) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut w = ByteWriter::new();
    w.bytes(MODEL_MAGIC);
    for d in [c.d_in, c.d_b, c.d, c.d_o, c.d_p, c.n_classes] {
        w.len_u32(d)?;
    }
    w.f64(c.s).f64(c.m_b).f64(c.delta_m).f64(manifest.lambda1).f64(manifest.lambda2);
    w.u64(manifest.seed);
    let mut layers: Vec<Dense> = model.backbone.layers.clone();
    for m in [&model.heads.w_i, &model.heads.w_p] {
        layers.push(Dense::new(m.clone(), Tensor::zeros(&[1, m.cols()]))?);
    }
    layers.push(model.heads.feature.clone());
    let cw = &model.classifier.weight;
    layers.push(Dense::new(cw.clone(), Tensor::zeros(&[1, cw.cols()]))?);
    w.len_u32(layers.len())?;
    for l in &layers {
        let mut l = l.clone();
        l.weight.zero_grad();
        l.bias.zero_grad();
        l.write(&mut w)?;
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PoseFaceModel, CheckpointManifest)> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let at = r.offset();
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let (s, m_b, delta_m, lambda1, lambda2) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let seed = r.u64()?;
    let table_at = r.offset();
    let n = r.u32()? as usize;
    if n < 5 {
        return Err(Error::format(table_at, format!("layer count {n} < 5")));
    }
    let mut layers = (0..n).map(|_| Dense::read(&mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let classifier = layers.pop().expect("n ≥ 5");
    let feature = layers.pop().expect("n ≥ 5");
    let w_p = layers.pop().expect("n ≥ 5").weight;
    let w_i = layers.pop().expect("n ≥ 5").weight;
    let backbone_hidden = layers.iter().skip(1).map(Dense::in_dim).collect();
    let config = ModelConfig {
        d_in: dims[0],
        backbone_hidden,
        d_b: dims[1],
        d: dims[2],
        d_o: dims[3],
        d_p: dims[4],
        n_classes: dims[5],
        s,
        m_b,
        delta_m,
    };
    config
        .validate()
        .map_err(|e| Error::format(at, format!("invalid manifest: {e}")))?;
    let shapes_ok = layers.first().map(Dense::in_dim) == Some(config.d_in)
        && layers.last().map(Dense::out_dim) == Some(config.d_b)
        && layers.windows(2).all(|p| p[0].out_dim() == p[1].in_dim())
        && w_i.shape() == [config.d_b, config.d]
        && w_p.shape() == [config.d_b, config.d_p]
        && feature.weight.shape() == [config.d, config.d_o]
        && classifier.weight.shape() == [config.d_o, config.n_classes];
    if !shapes_ok {
        return Err(Error::format(table_at, "layer table disagrees with the manifest"));
    }
    let model = PoseFaceModel {
        backbone: Backbone { layers },
        heads: ProjectionHeads { w_i, w_p, feature },
        classifier: MarginClassifier {
            weight: classifier.weight,
            s,
            m_b,
            delta_m,
        },
        config,
    };
    Ok((model, CheckpointManifest { lambda1, lambda2, seed }))
}

pub fn save_checkpoint(model: &PoseFaceModel, manifest: &CheckpointManifest, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PoseFaceModel, CheckpointManifest)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_in: 6,
            backbone_hidden: vec![5],
            d_b: 8,
            d: 4,
            d_o: 3,
            d_p: 3,
            n_classes: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rejects_oversized_subspaces() {
        let c = ModelConfig { d: 6, ..small() };
        assert!(matches!(PoseFaceModel::new(&c, 0), Err(Error::Config(_))));
        let c = ModelConfig { m_b: 1.0, delta_m: 0.6, ..small() };
        assert!(matches!(PoseFaceModel::new(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut m = PoseFaceModel::new(&small(), 0).unwrap();
        for l in &mut m.backbone.layers {
            l.weight.data_mut().fill(0.0);
        }
        let last = m.backbone.layers.last_mut().unwrap();
        last.bias.data_mut().copy_from_slice(&[1., 2., 3., 4., 5., 6., 7., 8.]);
        let x = Tensor::matrix(2, 6, vec![0.3; 12]).unwrap();
        let (f_b, ..) = m.features(&x).unwrap();
        assert_eq!(f_b.row(0), &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(f_b.row(1), f_b.row(0));
    }

    #[test]
    fn projection_identity_block_and_zero() {
        let mut m = PoseFaceModel::new(&small(), 1).unwrap();
        let mut w_i = Tensor::zeros(&[8, 4]);
        for k in 0..4 {
            w_i.set(k, k, 1.0);
        }
        m.heads.w_i = w_i;
        m.heads.w_p = Tensor::zeros(&[8, 3]);
        let x = Tensor::matrix(1, 6, vec![0.1, -0.2, 0.3, 0.5, -0.7, 0.9]).unwrap();
        let (f_b, f_i, f_p, _) = m.features(&x).unwrap();
        assert_eq!(f_i.data(), &f_b.data()[..4]);
        assert!(f_p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_layer_identity() {
        let mut m = PoseFaceModel::new(&small(), 2).unwrap();
        m.config.d_o = 4;
        m.heads.feature = Dense::new(Tensor::identity(4), Tensor::zeros(&[1, 4])).unwrap();
        let x = Tensor::matrix(1, 6, vec![1.0; 6]).unwrap();
        let (_, f_i, _, f_o) = m.features(&x).unwrap();
        assert_eq!(f_i, f_o);
    }

    #[test]
    fn column_normalize_examples() {
        let w = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(column_normalize(&w).unwrap().data(), &[0.6, 0.8]);
        let unit = Tensor::identity(3);
        assert_eq!(column_normalize(&unit).unwrap(), unit);
        let zero = Tensor::zeros(&[3, 2]);
        assert!(matches!(column_normalize(&zero), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn orth_penalty_examples() {
        let mut w_i = Tensor::zeros(&[4, 2]);
        w_i.set(0, 0, 1.0);
        w_i.set(1, 1, 1.0);
        let mut w_p = Tensor::zeros(&[4, 1]);
        w_p.set(2, 0, 1.0);
        assert_eq!(orth_penalty_value(&w_i, &w_p).unwrap(), 0.0);
        let e = Tensor::matrix(4, 1, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!((orth_penalty_value(&e, &e).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PoseFaceModel::new(&small(), 3).unwrap();
        let man = CheckpointManifest {
            lambda1: 200.0,
            lambda2: 1e5,
            seed: 3,
        };
        let bytes = encode_checkpoint(&m, &man).unwrap();
        assert_eq!(&bytes[..9], MODEL_MAGIC);
        let (back, man2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(man2, man);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 8]), Err(Error::Format { .. })));
    }
}
