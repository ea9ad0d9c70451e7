use std::collections::BTreeMap;

use super::{dot, unit};
use crate::error::{Error, Result};
use crate::model::PoseFaceModel;
use crate::tensor::Tensor;

/// `|cos|` between every row of `a` and every row of `b`; a zero row gives
/// zeros.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!("{} vs {} columns", a.cols(), b.cols())));
    }
    let ua: Vec<Option<Vec<f64>>> = (0..a.rows()).map(|i| unit(a.row(i))).collect();
    let ub: Vec<Option<Vec<f64>>> = (0..b.rows()).map(|i| unit(b.row(i))).collect();
    let rows = super::par_map(ua.len(), |i| {
        ub.iter()
            .map(|v| match (&ua[i], v) {
                (Some(x), Some(y)) => dot(x, y).abs(),
                _ => 0.0,
            })
            .collect::<Vec<f64>>()
    });
    Tensor::matrix(a.rows(), b.rows(), rows.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthProbe {
    pub max: f64,
    pub min: f64,
    /// `N × N`: entry `(a, b)` compares sample `a`'s identity feature with
    /// sample `b`'s pose feature.
    pub matrix: Tensor,
}

/// Identity and pose features live in different coordinates, so both are
/// mapped back into the backbone space before comparing:
/// `u = W_I F_i` and `v = W_P F_p`. Then `⟨u, v⟩ = F_iᵀ (W_Iᵀ W_P) F_p`,
/// which vanishes for every pair exactly when the two column spaces are
/// orthogonal.
pub fn orth_probe(model: &PoseFaceModel, observations: &Tensor) -> Result<OrthProbe> {
    if observations.rows() < 2 {
        return Err(Error::Shape("the probe needs at least two samples".into()));
    }
    let (_, f_i, f_p, _) = model.features(observations)?;
    let u = f_i.matmul(&model.heads.w_i.transpose())?;
    let v = f_p.matmul(&model.heads.w_p.transpose())?;
    let matrix = cosine_matrix(&u, &v)?;
    let max = matrix.data().iter().copied().fold(0.0, f64::max);
    let min = matrix.data().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OrthProbe { max, min, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGeometry {
    /// Mean Euclidean distance over all same-class pairs, pooled across
    /// classes. Singleton classes contribute no pairs.
    pub intra: f64,
    /// Mean Euclidean distance between class centroids.
    pub inter: f64,
    pub n_classes: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn class_geometry(embeddings: &Tensor, labels: &[u32]) -> Result<ClassGeometry> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), embeddings.rows())));
    }
    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::Shape("class geometry needs at least two classes".into()));
    }
    let (mut sum, mut pairs) = (0.0, 0usize);
    for members in classes.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                sum += dist(embeddings.row(a), embeddings.row(b));
                pairs += 1;
            }
        }
    }
    let centroids: Vec<Vec<f64>> = classes
        .values()
        .map(|m| {
            let mut c = vec![0.0; embeddings.cols()];
            for &i in m {
                c.iter_mut().zip(embeddings.row(i)).for_each(|(c, v)| *c += v);
            }
            c.iter().map(|v| v / m.len() as f64).collect()
        })
        .collect();
    let (mut csum, mut cpairs) = (0.0, 0usize);
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            csum += dist(&centroids[a], &centroids[b]);
            cpairs += 1;
        }
    }
    Ok(ClassGeometry {
        intra: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        inter: csum / cpairs as f64,
        n_classes: classes.len(),
    })
}

/// Projection of the centred rows onto the two leading principal axes.
/// Each axis is signed so its largest-magnitude entry is positive.
pub fn pca_top2(x: &Tensor) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += r[a] * r[b];
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + j as f64 / d as f64).collect();
        for _ in 0..1000 {
            let mut w: Vec<f64> = (0..d).map(|a| dot(&cov[a], &v)).collect();
            for ax in &axes {
                let p = dot(ax, &w);
                w.iter_mut().zip(ax).for_each(|(w, a)| *w -= p * a);
            }
            let Some(u) = unit(&w) else { break };
            let delta = dist(&u, &v);
            v = u;
            if delta < 1e-13 {
                break;
            }
        }
        let v = unit(&v).unwrap_or_else(|| vec![0.0; d]);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        axes.push(if lead < 0.0 { v.iter().map(|x| -x).collect() } else { v });
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    let data = centred.iter().flat_map(|r| [dot(r, &axes[0]), dot(r, &axes[1])]).collect();
    Tensor::matrix(n, 2, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_examples() {
        let e = Tensor::matrix(4, 2, vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0]).unwrap();
        let g = class_geometry(&e, &[0, 0, 1, 1]).unwrap();
        assert_eq!(g.intra, 0.0);
        assert_eq!(g.inter, 2.0);
        assert!(class_geometry(&e, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn pca_finds_the_long_axis() {
        let e = Tensor::matrix(3, 2, vec![-2.0, 0.1, 0.0, 0.0, 2.0, -0.1]).unwrap();
        let p = pca_top2(&e).unwrap();
        assert!(p.get(2, 0) > 1.9);
        assert!(p.get(1, 0).abs() < 1e-12);
    }
}
