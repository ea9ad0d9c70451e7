use super::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::error::{Error, Result};

/// One binary channel per landmark, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != NUM_LANDMARKS * height * width {
            return Err(Error::Shape(format!(
                "heatmap stack {NUM_LANDMARKS}x{height}x{width} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("heatmap values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn channels(&self) -> usize {
        NUM_LANDMARKS
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[(channel * self.height + row) * self.width + col]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[channel * n..(channel + 1) * n]
    }
}

/// Round half up.
fn to_pixel(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Marks every pixel within Euclidean distance `radius` of each rounded
/// landmark position. Coordinates are scaled from the landmark frame to the
/// `height × width` grid first.
pub fn render_heatmaps(lm: &LandmarkSet, height: usize, width: usize, radius: f64) -> Result<HeatmapStack> {
    if height == 0 || width == 0 || !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Shape(format!("invalid heatmap frame {height}x{width}, radius {radius}")));
    }
    let (sx, sy) = (width as f64 / lm.frame(), height as f64 / lm.frame());
    let reach = radius.floor() as i64;
    let r2 = radius * radius;
    let plane = height * width;
    let mut values = vec![0.0; NUM_LANDMARKS * plane];
    for (k, p) in lm.points().iter().enumerate() {
        let (x, y) = (p[0] * sx, p[1] * sy);
        let (col, row) = (to_pixel(x), to_pixel(y));
        if col < 0 || row < 0 || col >= width as i64 || row >= height as i64 {
            return Err(Error::OutOfFrame {
                index: k,
                x,
                y,
                width,
                height,
            });
        }
        let channel = &mut values[k * plane..(k + 1) * plane];
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
                    continue;
                }
                if ((dr * dr + dc * dc) as f64) <= r2 {
                    channel[r as usize * width + c as usize] = 1.0;
                }
            }
        }
    }
    HeatmapStack::new(height, width, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::landmarks::{canonical_template_2d, FACE_FRAME};

    fn all_at(x: f64, y: f64, frame: f64) -> LandmarkSet {
        LandmarkSet::new([[x, y]; NUM_LANDMARKS], frame, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn radius_zero_single_pixel() {
        let h = render_heatmaps(&all_at(5.0, 5.0, 16.0), 16, 16, 0.0).unwrap();
        let ch = h.channel(0);
        assert_eq!(ch.iter().sum::<f64>(), 1.0);
        assert_eq!(h.at(0, 5, 5), 1.0);
    }

    #[test]
    fn radius_one_is_plus_shape() {
        let h = render_heatmaps(&all_at(5.0, 5.0, 16.0), 16, 16, 1.0).unwrap();
        assert_eq!(h.channel(0).iter().sum::<f64>(), 5.0);
        for (r, c) in [(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)] {
            assert_eq!(h.at(0, r, c), 1.0);
        }
    }

    #[test]
    fn distinct_landmarks_sum_to_fourteen() {
        let lm = LandmarkSet::new(canonical_template_2d(), FACE_FRAME, 0.0, 0.0, 0.0).unwrap();
        let h = render_heatmaps(&lm, 108, 108, 0.0).unwrap();
        assert_eq!(h.values().iter().sum::<f64>(), 14.0);
    }

    #[test]
    fn rounds_half_up() {
        let h = render_heatmaps(&all_at(2.5, 3.5, 16.0), 16, 16, 0.0).unwrap();
        assert_eq!(h.at(0, 4, 3), 1.0);
    }

    #[test]
    fn out_of_frame_after_rounding() {
        let lm = all_at(15.7, 3.0, 16.0);
        assert!(matches!(
            render_heatmaps(&lm, 16, 16, 0.0),
            Err(Error::OutOfFrame { index: 0, .. })
        ));
    }
}
