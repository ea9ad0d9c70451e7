//! Landmarks, binary heatmaps, affine alignment and the pose ratio.

mod affine;
mod heatmap;
mod landmarks;

pub use affine::{apply_affine, estimate_affine, AffineTransform};
pub use heatmap::{render_heatmaps, HeatmapStack};
pub use landmarks::{
    adaptive_ratio, canonical_template_2d, format_landmark_line, format_landmark_text, heuristic_yaw,
    parse_landmark_line, parse_landmark_text, project_template, LandmarkRecord, LandmarkSet,
    CANONICAL_TEMPLATE_3D, FACE_FRAME, LANDMARK_NAMES, NUM_LANDMARKS, TEMPLATE_SCALE,
};

/// Aligns a landmark set onto the canonical frontal template.
pub fn align_to_template(points: &[[f64; 2]]) -> crate::Result<(AffineTransform, Vec<[f64; 2]>)> {
    let template = canonical_template_2d();
    let t = estimate_affine(points, &template)?;
    let aligned = apply_affine(&t, points);
    Ok((t, aligned))
}
