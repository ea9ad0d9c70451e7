use crate::error::{Error, Result};

/// `p ↦ A·p + t`, stored as the 2×3 matrix `[A | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        let (a, b) = (&self.m, &inner.m);
        let mut m = [[0.0; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
            m[i][2] += a[i][2];
        }
        AffineTransform { m }
    }

    /// Σ ‖A·srcᵢ + t − dstᵢ‖²
    pub fn residual(&self, src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(s, d)| {
                let p = self.apply_point(*s);
                (p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)
            })
            .sum()
    }
}

pub fn apply_affine(t: &AffineTransform, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points.iter().map(|&p| t.apply_point(p)).collect()
}

/// Least-squares affine map from `src` to `dst`.
///
/// The six parameters split into two independent 3-parameter problems (one
/// per output coordinate) sharing the normal matrix `Σ [x y 1]ᵀ[x y 1]`.
pub fn estimate_affine(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<AffineTransform> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!(
            "{} source points vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", src.len())));
    }
    // Collinearity test on the centred scatter matrix.
    let n = src.len() as f64;
    let (mx, my) = src.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in src {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy).powi(2);
    if scale == 0.0 || det <= 1e-12 * scale {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }

    let mut normal = [[0.0; 3]; 3];
    let mut rhs = [[0.0; 3]; 2];
    for (s, d) in src.iter().zip(dst) {
        let row = [s[0] - mx, s[1] - my, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                normal[i][j] += row[i] * row[j];
            }
            rhs[0][i] += row[i] * d[0];
            rhs[1][i] += row[i] * d[1];
        }
    }
    let mut m = [[0.0; 3]; 2];
    for (k, b) in rhs.iter().enumerate() {
        let sol = solve3(normal, *b)?;
        // Undo the centring: a·(x − mx) + b·(y − my) + c.
        m[k] = [sol[0], sol[1], sol[2] - sol[0] * mx - sol[1] * my];
    }
    Ok(AffineTransform { m })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Degenerate("singular normal equations".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let tail: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    #[test]
    fn identity_correspondence() {
        let t = estimate_affine(&SQUARE, &SQUARE).unwrap();
        assert!(t.residual(&SQUARE, &SQUARE) < 1e-24);
        for (i, row) in t.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_on_origin() {
        assert_eq!(AffineTransform::translation(1.0, 2.0).apply_point([0.0, 0.0]), [1.0, 2.0]);
        assert_eq!(apply_affine(&AffineTransform::identity(), &SQUARE), SQUARE.to_vec());
    }

    #[test]
    fn collinear_rejected() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(matches!(estimate_affine(&line, &line), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_affine(&SQUARE[..2], &SQUARE[..2]), Err(Error::Degenerate(_))));
    }
}
