use nalgebra::{DMatrix, DVector};
use poseface::geometry::{adaptive_ratio, align_to_template, apply_affine, canonical_template_2d, estimate_affine, AffineTransform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Six-parameter least squares through nalgebra's SVD solver.
fn oracle(src: &[[f64; 2]], dst: &[[f64; 2]]) -> [f64; 6] {
    let n = src.len();
    let mut a = DMatrix::zeros(2 * n, 6);
    let mut b = DVector::zeros(2 * n);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        a[(2 * i, 0)] = p[0];
        a[(2 * i, 1)] = p[1];
        a[(2 * i, 2)] = 1.0;
        a[(2 * i + 1, 3)] = p[0];
        a[(2 * i + 1, 4)] = p[1];
        a[(2 * i + 1, 5)] = 1.0;
        b[2 * i] = q[0];
        b[2 * i + 1] = q[1];
    }
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    [x[0], x[1], x[2], x[3], x[4], x[5]]
}

#[test]
fn affine_matches_svd_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.gen_range(3..30);
        let src: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)]).collect();
        let dst: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)]).collect();
        let got = estimate_affine(&src, &dst).unwrap();
        let want = oracle(&src, &dst);
        let flat = [got.m[0][0], got.m[0][1], got.m[0][2], got.m[1][0], got.m[1][1], got.m[1][2]];
        for (g, w) in flat.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8 * (1.0 + w.abs()), "{flat:?} vs {want:?}");
        }
    }
}

#[test]
fn template_aligns_to_itself() {
    let t = canonical_template_2d();
    let (m, aligned) = align_to_template(&t).unwrap();
    for (a, b) in aligned.iter().zip(&t) {
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }
    assert!((m.determinant() - 1.0).abs() < 1e-9);
}

#[test]
fn collinear_points_are_rejected() {
    let src = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
    assert!(estimate_affine(&src, &src).is_err());
}

proptest! {
    #[test]
    fn exact_affine_maps_are_recovered(
        a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0,
        tx in -50.0f64..50.0, ty in -50.0f64..50.0,
    ) {
        prop_assume!((a * d - b * c).abs() > 0.1);
        let t = AffineTransform { m: [[a, b, tx], [c, d, ty]] };
        let src = canonical_template_2d();
        let dst = apply_affine(&t, &src);
        let got = estimate_affine(&src, &dst).unwrap();
        for r in 0..2 {
            for k in 0..3 {
                prop_assert!((got.m[r][k] - t.m[r][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn ratio_is_symmetric_and_bounded(yaw in -400.0f64..400.0) {
        let r = adaptive_ratio(yaw);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r, adaptive_ratio(-yaw));
    }
}
