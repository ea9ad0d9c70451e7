use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 14;

/// Side length of the aligned face frame that landmark coordinates live in.
pub const FACE_FRAME: f64 = 108.0;

/// Pixels per template unit when projecting into [`FACE_FRAME`].
pub const TEMPLATE_SCALE: f64 = 40.0;

pub const LANDMARK_NAMES: [&str; NUM_LANDMARKS] = [
    "left_brow_outer",
    "left_brow_inner",
    "right_brow_inner",
    "right_brow_outer",
    "left_eye_outer",
    "left_eye_inner",
    "right_eye_inner",
    "right_eye_outer",
    "nose_tip",
    "left_nostril",
    "right_nostril",
    "left_mouth_corner",
    "right_mouth_corner",
    "chin",
];

/// Canonical 3-D face template in template units: x to the right, y down,
/// z towards the camera. Not a reconstruction of any particular 68-point
/// subset; it is a plausible frontal layout for the synthetic generator.
pub const CANONICAL_TEMPLATE_3D: [[f64; 3]; NUM_LANDMARKS] = [
    [-0.70, -0.55, 0.10],
    [-0.22, -0.60, 0.30],
    [0.22, -0.60, 0.30],
    [0.70, -0.55, 0.10],
    [-0.60, -0.35, 0.15],
    [-0.22, -0.33, 0.25],
    [0.22, -0.33, 0.25],
    [0.60, -0.35, 0.15],
    [0.00, 0.05, 0.70],
    [-0.15, 0.15, 0.45],
    [0.15, 0.15, 0.45],
    [-0.38, 0.45, 0.25],
    [0.38, 0.45, 0.25],
    [0.00, 0.85, 0.30],
];

/// Rotates 3-D template points about the vertical axis by `yaw_deg` and
/// projects them orthographically into the [`FACE_FRAME`].
pub fn project_template(template: &[[f64; 3]; NUM_LANDMARKS], yaw_deg: f64) -> [[f64; 2]; NUM_LANDMARKS] {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let center = FACE_FRAME / 2.0;
    let mut out = [[0.0; 2]; NUM_LANDMARKS];
    for (o, p) in out.iter_mut().zip(template) {
        let x = p[0] * c + p[2] * s;
        *o = [center + TEMPLATE_SCALE * x, center + TEMPLATE_SCALE * p[1]];
    }
    out
}

/// The frontal 2-D template used as the alignment target.
pub fn canonical_template_2d() -> [[f64; 2]; NUM_LANDMARKS] {
    project_template(&CANONICAL_TEMPLATE_3D, 0.0)
}

/// Fourteen 2-D landmarks plus head-pose angles (degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: [[f64; 2]; NUM_LANDMARKS],
    frame: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl LandmarkSet {
    /// Checks that every point lies in `[0, frame)²` and yaw in `[-90, 90]`.
    pub fn new(points: [[f64; 2]; NUM_LANDMARKS], frame: f64, yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        if !(frame > 0.0 && frame.is_finite()) {
            return Err(Error::Shape(format!("invalid frame side {frame}")));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite() && (0.0..frame).contains(v)) {
                return Err(Error::Shape(format!(
                    "landmark {i} at ({}, {}) outside [0, {frame})²",
                    p[0], p[1]
                )));
            }
        }
        if !(-90.0..=90.0).contains(&yaw) || !pitch.is_finite() || !roll.is_finite() {
            return Err(Error::Shape(format!("invalid pose angles ({yaw}, {pitch}, {roll})")));
        }
        Ok(Self {
            points,
            frame,
            yaw,
            pitch,
            roll,
        })
    }

    pub fn from_flat(coords: &[f64], frame: f64, yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        if coords.len() != 2 * NUM_LANDMARKS {
            return Err(Error::Shape(format!(
                "expected {} coordinates, got {}",
                2 * NUM_LANDMARKS,
                coords.len()
            )));
        }
        let mut points = [[0.0; 2]; NUM_LANDMARKS];
        for (p, xy) in points.iter_mut().zip(coords.chunks_exact(2)) {
            *p = [xy[0], xy[1]];
        }
        Self::new(points, frame, yaw, pitch, roll)
    }

    pub fn points(&self) -> &[[f64; 2]; NUM_LANDMARKS] {
        &self.points
    }

    pub fn frame(&self) -> f64 {
        self.frame
    }

    /// `x₁, y₁, …, x₁₄, y₁₄`
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Flattened coordinates centred on the frame and scaled to unit L2
    /// norm; the regression target of the landmark-points ablation.
    pub fn normalized_flat(&self) -> Vec<f64> {
        let half = self.frame / 2.0;
        let mut v: Vec<f64> = self.flat().iter().map(|c| c - half).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

/// `min(|yaw|, 90) / 90`; pitch and roll do not enter.
pub fn adaptive_ratio(yaw_deg: f64) -> f64 {
    if yaw_deg.is_nan() {
        return 0.0;
    }
    yaw_deg.abs().min(90.0) / 90.0
}

/// Rough yaw from nose offset against the outer eye corners.
///
/// Diagnostic only: it inverts the projection of the canonical template
/// and knows nothing about real faces. Synthetic data carries exact yaw.
pub fn heuristic_yaw(lm: &LandmarkSet) -> f64 {
    let p = lm.points();
    let (left, right, nose) = (p[4], p[7], p[8]);
    let mid = (left[0] + right[0]) / 2.0;
    let half_span = ((right[0] - left[0]) / 2.0).abs();
    let t = &CANONICAL_TEMPLATE_3D;
    // nose_x − mid = (z_nose − z_eye)·sin ψ, half_span = x_eye·cos ψ
    let gain = (t[8][2] - t[7][2]) / t[7][0];
    if half_span < 1e-9 {
        return if nose[0] >= mid { 90.0 } else { -90.0 };
    }
    ((nose[0] - mid) / half_span / gain).atan().to_degrees()
}

/// One text record: `sample_id, identity_id, yaw, pitch, roll, x₁, y₁, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub sample_id: u64,
    pub identity: u32,
    pub landmarks: LandmarkSet,
}

pub fn format_landmark_line(rec: &LandmarkRecord) -> String {
    let lm = &rec.landmarks;
    let mut s = format!(
        "{},{},{},{},{}",
        rec.sample_id, rec.identity, lm.yaw, lm.pitch, lm.roll
    );
    for v in lm.flat() {
        let _ = write!(s, ",{v}");
    }
    s
}

pub fn parse_landmark_line(line: &str, frame: f64) -> Result<LandmarkRecord> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').map(str::trim).collect();
    let expected = 5 + 2 * NUM_LANDMARKS;
    if fields.len() != expected {
        return Err(Error::format(0, format!("expected {expected} fields, got {}", fields.len())));
    }
    let sample_id = fields[0]
        .parse()
        .map_err(|_| Error::format(0, format!("bad sample id `{}`", fields[0])))?;
    let identity = fields[1]
        .parse()
        .map_err(|_| Error::format(0, format!("bad identity `{}`", fields[1])))?;
    let reals = fields[2..]
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| Error::format(0, format!("bad number `{f}`"))))
        .collect::<Result<Vec<_>>>()?;
    let landmarks = LandmarkSet::from_flat(&reals[3..], frame, reals[0], reals[1], reals[2])?;
    Ok(LandmarkRecord {
        sample_id,
        identity,
        landmarks,
    })
}

/// Parses a whole file; errors carry the byte offset of the failing line.
pub fn parse_landmark_text(text: &str, frame: f64) -> Result<Vec<LandmarkRecord>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            let rec = parse_landmark_line(line, frame).map_err(|e| match e {
                Error::Format { message, .. } => Error::Format { offset, message },
                other => Error::Format {
                    offset,
                    message: other.to_string(),
                },
            })?;
            out.push(rec);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn format_landmark_text(records: &[LandmarkRecord]) -> String {
    records.iter().map(|r| format_landmark_line(r) + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(adaptive_ratio(90.0), 1.0);
        assert_eq!(adaptive_ratio(0.0), 0.0);
        assert_eq!(adaptive_ratio(-45.0), 0.5);
        assert_eq!(adaptive_ratio(120.0), 1.0);
    }

    #[test]
    fn template_fits_frame_at_all_yaws() {
        for yaw in -90..=90 {
            let pts = project_template(&CANONICAL_TEMPLATE_3D, yaw as f64);
            LandmarkSet::new(pts, FACE_FRAME, yaw as f64, 0.0, 0.0).unwrap();
        }
    }

    #[test]
    fn heuristic_yaw_inverts_template_projection() {
        for yaw in [-60.0, -20.0, 0.0, 33.0, 70.0] {
            let lm = LandmarkSet::new(project_template(&CANONICAL_TEMPLATE_3D, yaw), FACE_FRAME, yaw, 0.0, 0.0).unwrap();
            assert!((heuristic_yaw(&lm) - yaw).abs() < 1e-9, "yaw {yaw}");
        }
    }

    #[test]
    fn rejects_points_outside_frame() {
        let mut pts = canonical_template_2d();
        pts[3][0] = FACE_FRAME;
        assert!(LandmarkSet::new(pts, FACE_FRAME, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn text_line_round_trip() {
        let lm = LandmarkSet::new(project_template(&CANONICAL_TEMPLATE_3D, 17.25), FACE_FRAME, 17.25, 0.0, 0.0).unwrap();
        let rec = LandmarkRecord {
            sample_id: 42,
            identity: 7,
            landmarks: lm,
        };
        let line = format_landmark_line(&rec);
        assert_eq!(parse_landmark_line(&line, FACE_FRAME).unwrap(), rec);
    }

    #[test]
    fn parse_error_reports_offset() {
        let good = format_landmark_line(&LandmarkRecord {
            sample_id: 1,
            identity: 0,
            landmarks: LandmarkSet::new(canonical_template_2d(), FACE_FRAME, 0.0, 0.0, 0.0).unwrap(),
        });
        let text = format!("{good}\n1,2,3\n");
        match parse_landmark_text(&text, FACE_FRAME) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, good.len() as u64 + 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
