//! Named strategies: how per-sample margins are chosen and where the pose
//! branch gets its targets. Both are picked by name from the run config.

use crate::error::{Error, Result};
use crate::geometry::{adaptive_ratio, HeatmapStack, LandmarkSet};
use crate::landmark_ae::AutoEncoderModel;
use crate::tensor::Tensor;

/// A name → constructor table.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, fn() -> Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Re-registering a name replaces the earlier constructor.
    pub fn register(&mut self, name: &'static str, make: fn() -> Box<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = make,
            None => self.entries.push((name, make)),
        }
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, make)| make())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}

pub trait MarginPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn margin(&self, yaw: f64, m_b: f64, delta_m: f64) -> f64;

    fn margins(&self, yaws: &[f64], m_b: f64, delta_m: f64) -> Vec<f64> {
        yaws.iter().map(|&y| self.margin(y, m_b, delta_m)).collect()
    }
}

/// Plain ArcFace: every sample gets `m_b`.
#[derive(Debug, Default)]
pub struct FixedMargin;

impl MarginPolicy for FixedMargin {
    fn name(&self) -> &'static str {
        "arcface"
    }

    fn margin(&self, _yaw: f64, m_b: f64, _delta_m: f64) -> f64 {
        m_b
    }
}

/// `m_b + r·δ_m` with `r = min(|yaw|, 90)/90`.
#[derive(Debug, Default)]
pub struct PoseAdaptiveMargin;

impl MarginPolicy for PoseAdaptiveMargin {
    fn name(&self) -> &'static str {
        "pose_adaptive"
    }

    fn margin(&self, yaw: f64, m_b: f64, delta_m: f64) -> f64 {
        m_b + adaptive_ratio(yaw) * delta_m
    }
}

pub fn margin_policies() -> Registry<dyn MarginPolicy> {
    let mut r = Registry::<dyn MarginPolicy>::new("margin policy");
    r.register("arcface", || Box::new(FixedMargin));
    r.register("pose_adaptive", || Box::new(PoseAdaptiveMargin));
    r
}

/// What the pose branch needs to build targets.
#[derive(Debug, Clone, Copy)]
pub struct PoseContext<'a> {
    pub autoencoder: Option<&'a AutoEncoderModel>,
    pub heatmap_radius: f64,
}

pub trait PoseSupervision: Send + Sync {
    fn name(&self) -> &'static str;
    fn needs_autoencoder(&self) -> bool;
    /// Target width, or `None` when the pose branch is unsupervised.
    fn target_dim(&self, ctx: &PoseContext<'_>) -> Result<Option<usize>>;
    /// One target row per landmark set.
    fn targets(&self, landmarks: &[&LandmarkSet], ctx: &PoseContext<'_>) -> Result<Option<Tensor>>;
}

fn require_ae<'a>(ctx: &PoseContext<'a>) -> Result<&'a AutoEncoderModel> {
    let ae = ctx.autoencoder.ok_or(Error::NotPretrained)?;
    if !ae.is_pretrained() {
        return Err(Error::NotPretrained);
    }
    Ok(ae)
}

/// Codes of the frozen landmark autoencoder.
#[derive(Debug, Default)]
pub struct LandmarkModule;

impl PoseSupervision for LandmarkModule {
    fn name(&self) -> &'static str {
        "landmark_module"
    }

    fn needs_autoencoder(&self) -> bool {
        true
    }

    fn target_dim(&self, ctx: &PoseContext<'_>) -> Result<Option<usize>> {
        Ok(Some(require_ae(ctx)?.code_dim()))
    }

    fn targets(&self, landmarks: &[&LandmarkSet], ctx: &PoseContext<'_>) -> Result<Option<Tensor>> {
        let ae = require_ae(ctx)?;
        let (h, w) = ae.frame();
        let stacks = landmarks
            .iter()
            .map(|lm| crate::geometry::render_heatmaps(lm, h, w, ctx.heatmap_radius))
            .collect::<Result<Vec<HeatmapStack>>>()?;
        let refs: Vec<&HeatmapStack> = stacks.iter().collect();
        Ok(Some(ae.pseudo_labels(&refs)?))
    }
}

/// Centred, unit-norm flattened landmark coordinates.
#[derive(Debug, Default)]
pub struct LandmarkPoints;

impl PoseSupervision for LandmarkPoints {
    fn name(&self) -> &'static str {
        "landmark_points"
    }

    fn needs_autoencoder(&self) -> bool {
        false
    }

    fn target_dim(&self, _ctx: &PoseContext<'_>) -> Result<Option<usize>> {
        Ok(Some(2 * crate::geometry::NUM_LANDMARKS))
    }

    fn targets(&self, landmarks: &[&LandmarkSet], _ctx: &PoseContext<'_>) -> Result<Option<Tensor>> {
        let dim = 2 * crate::geometry::NUM_LANDMARKS;
        let data: Vec<f64> = landmarks.iter().flat_map(|lm| lm.normalized_flat()).collect();
        Ok(Some(Tensor::matrix(landmarks.len(), dim, data)?))
    }
}

/// No pose targets; the pose loss term is dropped.
#[derive(Debug, Default)]
pub struct NoPoseSupervision;

impl PoseSupervision for NoPoseSupervision {
    fn name(&self) -> &'static str {
        "none"
    }

    fn needs_autoencoder(&self) -> bool {
        false
    }

    fn target_dim(&self, _ctx: &PoseContext<'_>) -> Result<Option<usize>> {
        Ok(None)
    }

    fn targets(&self, _landmarks: &[&LandmarkSet], _ctx: &PoseContext<'_>) -> Result<Option<Tensor>> {
        Ok(None)
    }
}

pub fn pose_supervisions() -> Registry<dyn PoseSupervision> {
    let mut r = Registry::<dyn PoseSupervision>::new("pose supervision");
    r.register("landmark_module", || Box::new(LandmarkModule));
    r.register("landmark_points", || Box::new(LandmarkPoints));
    r.register("none", || Box::new(NoPoseSupervision));
    r
}
