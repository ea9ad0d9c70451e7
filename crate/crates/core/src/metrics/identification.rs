use std::collections::BTreeMap;

use super::{dot, par_map, unit};
use crate::error::{Error, Result};
use crate::synthdata::PROFILE_YAW;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub identity: u32,
    pub yaw: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationProtocol {
    /// One `(identity, embedding)` per identity.
    pub gallery: Vec<(u32, Vec<f64>)>,
    pub probes: Vec<Probe>,
}

/// Upper edge of the 15° bucket holding `|yaw|`: (0, 15] → 15, …,
/// (75, 90] → 90. Exact zero joins the 15° bucket.
pub fn yaw_bucket(yaw: f64) -> u32 {
    ((yaw.abs() / 15.0).ceil() as u32 * 15).clamp(15, 90)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rank1Report {
    /// bucket edge → (correct, total). Empty buckets are absent.
    pub buckets: BTreeMap<u32, (usize, usize)>,
    /// (correct, total) over probes with |yaw| > 60°.
    pub profile: (usize, usize),
    pub overall: (usize, usize),
    /// Predicted identity per probe, in probe order.
    pub predictions: Vec<u32>,
}

fn rate((c, t): (usize, usize)) -> Option<f64> {
    (t > 0).then(|| c as f64 / t as f64)
}

impl Rank1Report {
    pub fn bucket_accuracy(&self, bucket: u32) -> Option<f64> {
        self.buckets.get(&bucket).copied().and_then(rate)
    }

    pub fn profile_accuracy(&self) -> Option<f64> {
        rate(self.profile)
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        rate(self.overall)
    }
}

/// Nearest gallery entry by cosine for every probe. Ties go to the lowest
/// identity.
pub fn rank1(protocol: &IdentificationProtocol) -> Result<Rank1Report> {
    if protocol.gallery.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut gallery = protocol.gallery.clone();
    gallery.sort_by_key(|g| g.0);
    if gallery.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Config("gallery identities must be unique".into()));
    }
    let gallery: Vec<(u32, Vec<f64>)> = gallery
        .into_iter()
        .enumerate()
        .map(|(row, (id, e))| unit(&e).map(|u| (id, u)).ok_or(Error::DegenerateEmbedding { row }))
        .collect::<Result<_>>()?;
    let dim = gallery[0].1.len();
    for (row, p) in protocol.probes.iter().enumerate() {
        if p.embedding.len() != dim {
            return Err(Error::Shape(format!("probe {row} has dim {}, gallery {dim}", p.embedding.len())));
        }
        if unit(&p.embedding).is_none() {
            return Err(Error::DegenerateEmbedding { row });
        }
    }
    let predictions = par_map(protocol.probes.len(), |i| {
        let q = unit(&protocol.probes[i].embedding).expect("checked above");
        let mut best = (f64::NEG_INFINITY, gallery[0].0);
        for (id, g) in &gallery {
            let c = dot(&q, g);
            if c > best.0 {
                best = (c, *id);
            }
        }
        best.1
    });
    let mut report = Rank1Report {
        predictions,
        ..Default::default()
    };
    for (p, &pred) in protocol.probes.iter().zip(&report.predictions) {
        let hit = usize::from(pred == p.identity);
        let b = report.buckets.entry(yaw_bucket(p.yaw)).or_default();
        b.0 += hit;
        b.1 += 1;
        if p.yaw.abs() > PROFILE_YAW {
            report.profile.0 += hit;
            report.profile.1 += 1;
        }
        report.overall.0 += hit;
        report.overall.1 += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        assert_eq!(yaw_bucket(0.0), 15);
        assert_eq!(yaw_bucket(15.0), 15);
        assert_eq!(yaw_bucket(-15.1), 30);
        assert_eq!(yaw_bucket(61.0), 75);
        assert_eq!(yaw_bucket(90.0), 90);
    }

    #[test]
    fn one_hot_gallery_is_perfect() {
        let e = |k: usize| (0..3).map(|j| f64::from(u8::from(j == k))).collect::<Vec<_>>();
        let proto = IdentificationProtocol {
            gallery: (0..3).map(|k| (k as u32, e(k))).collect(),
            probes: (0..3)
                .map(|k| Probe {
                    identity: k as u32,
                    yaw: 80.0,
                    embedding: e(k).iter().map(|v| v * 3.0).collect(),
                })
                .collect(),
        };
        let r = rank1(&proto).unwrap();
        assert_eq!(r.profile_accuracy(), Some(1.0));
        assert_eq!(r.bucket_accuracy(90), Some(1.0));
        assert_eq!(r.bucket_accuracy(15), None);
    }

    #[test]
    fn ties_go_to_lowest_identity() {
        let proto = IdentificationProtocol {
            gallery: vec![(7, vec![1.0, 0.0]), (2, vec![1.0, 0.0])],
            probes: vec![Probe {
                identity: 7,
                yaw: 0.0,
                embedding: vec![1.0, 0.0],
            }],
        };
        assert_eq!(rank1(&proto).unwrap().predictions, vec![2]);
    }
}
