//! Procedural face-like data with known identity and pose factors.
//!
//! Every identity `k` owns a latent `z_k` on the unit sphere and a 3-D
//! landmark template (canonical layout plus a shape offset driven by
//! `z_k`). A sample at yaw `ψ` observes
//!
//! ```text
//! o = A·z_k + B·φ(ψ) + ε,   φ(ψ) = (sin ψ, cos ψ, sin 2ψ, cos 2ψ, …, sin 4ψ, cos 4ψ)
//! ```
//!
//! with seeded mixing matrices `A`, `B`, and its landmarks are the template
//! rotated by `ψ` about the vertical axis and projected orthographically.
//! Identity and pose are drawn independently.
//!
//! Random streams are keyed by `(seed, purpose, index)` so any sample can
//! be regenerated on its own.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{project_template, LandmarkSet, CANONICAL_TEMPLATE_3D, FACE_FRAME, NUM_LANDMARKS};

pub const DATASET_MAGIC: &[u8; 8] = b"POSEDS01";

/// |yaw| above this is "profile".
pub const PROFILE_YAW: f64 = 60.0;

/// Length of the pose feature map φ.
pub const POSE_HARMONICS: usize = 8;

/// Fraction of profile faces measured on a large in-the-wild training set.
pub const IN_THE_WILD_PROFILE_RATE: f64 = 0.0019;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    /// Probability that a training sample is profile.
    pub p_profile: f64,
    pub noise_sigma: f64,
    pub d_in: usize,
    pub seed: u64,
    /// Fraction of each identity's samples placed in the training split.
    pub split: f64,
    /// Identities that only appear in the test split (verification pairs).
    pub heldout_identities: usize,
    /// Profile probability for test-split samples.
    pub test_p_profile: f64,
    /// Scale of the identity mixing `A`.
    pub identity_gain: f64,
    /// Scale of the pose mixing `B`.
    pub pose_gain: f64,
    /// Std-dev of identity-driven template offsets, in template units.
    pub shape_jitter: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_identities: 64,
            samples_per_identity: 80,
            p_profile: IN_THE_WILD_PROFILE_RATE,
            noise_sigma: 0.05,
            d_in: 64,
            seed: 0,
            split: 0.75,
            heldout_identities: 16,
            test_p_profile: 0.5,
            identity_gain: 1.0,
            pose_gain: 3.0,
            shape_jitter: 0.04,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.n_identities < 2 {
            return err(format!("n_identities must be at least 2, got {}", self.n_identities));
        }
        if self.samples_per_identity < 2 {
            return err(format!(
                "samples_per_identity must be at least 2, got {}",
                self.samples_per_identity
            ));
        }
        for (name, p) in [("p_profile", self.p_profile), ("test_p_profile", self.test_p_profile)] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("identity_gain", self.identity_gain),
            ("pose_gain", self.pose_gain),
            ("shape_jitter", self.shape_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.d_in < 2 || self.d_in % 2 != 0 {
            return err(format!("d_in must be even and at least 2, got {}", self.d_in));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return err(format!("split must lie in (0, 1), got {}", self.split));
        }
        let n_train = self.train_per_identity();
        if n_train == 0 || n_train == self.samples_per_identity {
            return err("split leaves one side empty".into());
        }
        Ok(())
    }

    pub fn d_z(&self) -> usize {
        self.d_in / 2
    }

    pub fn train_per_identity(&self) -> usize {
        (self.split * self.samples_per_identity as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Vec<f64>,
    pub landmarks: LandmarkSet,
    pub identity: u32,
    pub yaw: f64,
    pub is_profile: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// All samples, train first; the position is the sample id.
    pub fn iter_all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(sin kψ, cos kψ)` for `k = 1..=4`.
pub fn pose_features(yaw_deg: f64) -> [f64; POSE_HARMONICS] {
    let y = yaw_deg.to_radians();
    let mut out = [0.0; POSE_HARMONICS];
    for k in 0..POSE_HARMONICS / 2 {
        let (s, c) = ((k + 1) as f64 * y).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
    out
}

const STREAM_MIXING: u64 = 1;
const STREAM_IDENTITY: u64 = 2 << 32;
const STREAM_SAMPLE: u64 = 3 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fixed parts of the generative model: mixing matrices and per-identity
/// latents and templates.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: DatasetSpec,
    identity_mix: Vec<f64>,
    pose_mix: Vec<f64>,
    latents: Vec<Vec<f64>>,
    templates: Vec<[[f64; 3]; NUM_LANDMARKS]>,
}

impl Generator {
    pub fn new(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let (d_in, d_z) = (spec.d_in, spec.d_z());
        let mut rng = stream(spec.seed, STREAM_MIXING);
        let s = (d_in as f64).sqrt();
        let identity_mix = (0..d_in * d_z).map(|_| spec.identity_gain * gaussian(&mut rng) / s).collect();
        let pose_mix = (0..d_in * POSE_HARMONICS)
            .map(|_| spec.pose_gain * gaussian(&mut rng) / s)
            .collect();
        // Template offsets are a fixed linear function of the latent, so
        // landmark shape carries identity information.
        let shape_dims = NUM_LANDMARKS * 3;
        let shape_mix: Vec<f64> = (0..shape_dims * d_z)
            .map(|_| spec.shape_jitter * gaussian(&mut rng))
            .collect();

        let total = spec.n_identities + spec.heldout_identities;
        let mut latents = Vec::with_capacity(total);
        let mut templates = Vec::with_capacity(total);
        for k in 0..total {
            let mut rng = stream(spec.seed, STREAM_IDENTITY + k as u64);
            let mut z: Vec<f64> = (0..d_z).map(|_| gaussian(&mut rng)).collect();
            let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            z.iter_mut().for_each(|v| *v /= n);
            let mut t = CANONICAL_TEMPLATE_3D;
            for (i, p) in t.iter_mut().enumerate() {
                for (a, coord) in p.iter_mut().enumerate() {
                    let row = &shape_mix[(i * 3 + a) * d_z..(i * 3 + a + 1) * d_z];
                    *coord += row.iter().zip(&z).map(|(m, v)| m * v).sum::<f64>();
                }
            }
            latents.push(z);
            templates.push(t);
        }
        Ok(Self {
            spec: spec.clone(),
            identity_mix,
            pose_mix,
            latents,
            templates,
        })
    }

    pub fn latent(&self, identity: u32) -> &[f64] {
        &self.latents[identity as usize]
    }

    pub fn template(&self, identity: u32) -> &[[f64; 3]; NUM_LANDMARKS] {
        &self.templates[identity as usize]
    }

    /// Landmarks of `identity` seen at `yaw`; pitch and roll are zero.
    pub fn landmarks(&self, identity: u32, yaw: f64) -> Result<LandmarkSet> {
        let pts = project_template(self.template(identity), yaw);
        LandmarkSet::new(pts, FACE_FRAME, yaw, 0.0, 0.0)
            .map_err(|e| Error::Spec(format!("identity {identity} leaves the face frame at yaw {yaw}: {e}")))
    }

    /// Noise-free observation `A·z + B·φ(yaw)`.
    pub fn clean_observation(&self, identity: u32, yaw: f64) -> Vec<f64> {
        let (d_in, d_z) = (self.spec.d_in, self.spec.d_z());
        let z = self.latent(identity);
        let phi = pose_features(yaw);
        (0..d_in)
            .map(|r| {
                let a: f64 = self.identity_mix[r * d_z..(r + 1) * d_z].iter().zip(z).map(|(m, v)| m * v).sum();
                let b: f64 = self.pose_mix[r * POSE_HARMONICS..(r + 1) * POSE_HARMONICS]
                    .iter()
                    .zip(&phi)
                    .map(|(m, v)| m * v)
                    .sum();
                a + b
            })
            .collect()
    }

    /// Sample number `index` for `identity`, drawing yaw with profile
    /// probability `p_profile`.
    pub fn sample(&self, identity: u32, index: u64, p_profile: f64) -> Result<Sample> {
        let mut rng = stream(self.spec.seed, STREAM_SAMPLE + index);
        let profile = rng.gen::<f64>() < p_profile;
        let u: f64 = rng.gen();
        let magnitude = if profile { 90.0 - 30.0 * u } else { PROFILE_YAW * u };
        let yaw = if rng.gen::<bool>() { magnitude } else { -magnitude };
        let mut observation = self.clean_observation(identity, yaw);
        if self.spec.noise_sigma > 0.0 {
            for o in &mut observation {
                *o += self.spec.noise_sigma * gaussian(&mut rng);
            }
        }
        Ok(Sample {
            observation,
            landmarks: self.landmarks(identity, yaw)?,
            identity,
            yaw,
            is_profile: yaw.abs() > PROFILE_YAW,
        })
    }
}

/// Builds the train/test split. Trained identities contribute
/// `train_per_identity` samples to train and the rest to test; held-out
/// identities appear only in test.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let gen = Generator::new(spec)?;
    let spi = spec.samples_per_identity;
    let n_train = spec.train_per_identity();
    let mut train = Vec::with_capacity(spec.n_identities * n_train);
    let mut test = Vec::new();
    let total = spec.n_identities + spec.heldout_identities;
    for k in 0..total {
        for j in 0..spi {
            let index = (k * spi + j) as u64;
            let in_train = k < spec.n_identities && j < n_train;
            let p = if in_train { spec.p_profile } else { spec.test_p_profile };
            let s = gen.sample(k as u32, index, p)?;
            if in_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
    })
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let s = &ds.spec;
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.len_u32(s.n_identities)?
        .len_u32(s.samples_per_identity)?
        .len_u32(s.heldout_identities)?;
    w.f64(s.p_profile).f64(s.test_p_profile).f64(s.noise_sigma);
    w.len_u32(s.d_in)?;
    w.u64(s.seed)
        .f64(s.split)
        .f64(s.identity_gain)
        .f64(s.pose_gain)
        .f64(s.shape_jitter);
    w.len_u32(ds.train.len())?.len_u32(ds.test.len())?;
    for smp in ds.iter_all() {
        if smp.observation.len() != s.d_in {
            return Err(Error::Shape("observation length differs from d_in".into()));
        }
        w.u32(smp.identity).f64(smp.yaw).f64s(&smp.landmarks.flat()).f64s(&smp.observation);
    }
    Ok(w.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let spec_at = r.offset();
    let spec = DatasetSpec {
        n_identities: r.u32()? as usize,
        samples_per_identity: r.u32()? as usize,
        heldout_identities: r.u32()? as usize,
        p_profile: r.f64()?,
        test_p_profile: r.f64()?,
        noise_sigma: r.f64()?,
        d_in: r.u32()? as usize,
        seed: r.u64()?,
        split: r.f64()?,
        identity_gain: r.f64()?,
        pose_gain: r.f64()?,
        shape_jitter: r.f64()?,
    };
    spec.validate()
        .map_err(|e| Error::format(spec_at, format!("invalid header: {e}")))?;
    let n_train = r.u32()? as usize;
    let n_test = r.u32()? as usize;
    let mut samples = Vec::with_capacity(n_train + n_test);
    for _ in 0..n_train + n_test {
        let at = r.offset();
        let identity = r.u32()?;
        let yaw = r.f64()?;
        let coords = r.f64s(2 * NUM_LANDMARKS)?;
        let observation = r.f64s(spec.d_in)?;
        let landmarks = LandmarkSet::from_flat(&coords, FACE_FRAME, yaw, 0.0, 0.0)
            .map_err(|e| Error::format(at, e.to_string()))?;
        samples.push(Sample {
            observation,
            landmarks,
            identity,
            yaw,
            is_profile: yaw.abs() > PROFILE_YAW,
        });
    }
    r.finish()?;
    let test = samples.split_off(n_train);
    Ok(Dataset {
        spec,
        train: samples,
        test,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_dataset(&std::fs::read(path)?)
}
