use crate::error::{Error, Result};

/// Similarity scores with genuine (`true`) / impostor (`false`) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DegenerateScore(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateScore("non-finite score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn genuine(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn impostors(&self) -> usize {
        self.len() - self.genuine()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (g, i) = (self.genuine(), self.impostors());
        if g == 0 || i == 0 {
            return Err(Error::DegenerateScore(format!("{g} genuine and {i} impostor scores")));
        }
        Ok((g, i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Scores `≥ threshold` are accepted.
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// One point per distinct score, from the strictest threshold down, after
/// a leading `(+∞, 0, 0)`. FAR and TAR are non-decreasing along the curve.
pub fn roc(set: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (g, i) = set.require_both()?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = set.scores[order[k]];
        while k < order.len() && set.scores[order[k]] == t {
            if set.labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push(RocPoint {
            threshold: t,
            far: fp as f64 / i as f64,
            tar: tp as f64 / g as f64,
        });
    }
    Ok(out)
}

/// Trapezoid area under the ROC curve.
pub fn auc(set: &ScoreSet) -> Result<f64> {
    let pts = roc(set)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tar + w[0].tar) / 2.0)
        .sum())
}

/// Rate at which FAR equals FRR = 1 − TAR, interpolated linearly along the
/// first ROC segment where FAR − FRR changes sign.
pub fn eer(set: &ScoreSet) -> Result<f64> {
    let pts = roc(set)?;
    let d = |p: &RocPoint| p.far - (1.0 - p.tar);
    for w in pts.windows(2) {
        let (a, b) = (d(&w[0]), d(&w[1]));
        if a == 0.0 {
            return Ok(w[0].far);
        }
        if a < 0.0 && b >= 0.0 {
            let t = -a / (b - a);
            return Ok(w[0].far + t * (w[1].far - w[0].far));
        }
    }
    // The last point is (1, 1), where FAR − FRR = 1 > 0.
    unreachable!("ROC ends at FAR = TAR = 1")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TarAtFar {
    pub requested_far: f64,
    pub tar: f64,
    /// FAR the reported TAR was actually measured at.
    pub achieved_far: f64,
    /// Requested FAR is below `1 / #impostors`; `tar` is the TAR at FAR 0.
    pub saturated: bool,
}

/// TAR at `far`, interpolated between the bracketing ROC points.
pub fn tar_at_far(set: &ScoreSet, far: f64) -> Result<TarAtFar> {
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::DegenerateScore(format!("FAR {far} outside [0, 1]")));
    }
    let (_, i) = set.require_both()?;
    let pts = roc(set)?;
    // Last point with FAR ≤ requested: highest TAR at that FAR.
    let a = pts.iter().rposition(|p| p.far <= far).expect("first point has FAR 0");
    let saturated = far < 1.0 / i as f64;
    if saturated || a + 1 == pts.len() || pts[a].far == far {
        return Ok(TarAtFar {
            requested_far: far,
            tar: pts[a].tar,
            achieved_far: pts[a].far,
            saturated,
        });
    }
    let (p, q) = (pts[a], pts[a + 1]);
    let t = (far - p.far) / (q.far - p.far);
    Ok(TarAtFar {
        requested_far: far,
        tar: p.tar + t * (q.tar - p.tar),
        achieved_far: far,
        saturated,
    })
}

/// Contiguous assignment of `n` items to `k` folds.
pub fn split_folds(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i * k / n.max(1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAccuracy {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub sd: f64,
    pub per_fold: Vec<f64>,
    pub thresholds: Vec<f64>,
}

fn accuracy(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let hits = scores.iter().zip(labels).filter(|&(&s, &l)| (s > t) == l).count();
    hits as f64 / scores.len() as f64
}

/// Candidate thresholds: below the minimum, midpoints between consecutive
/// distinct scores, and the maximum. A pair is accepted when its score
/// exceeds the threshold.
fn best_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut cands = vec![u[0] - 1.0];
    cands.extend(u.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cands.push(u[u.len() - 1]);
    let mut best = (f64::NEG_INFINITY, cands[0]);
    for t in cands {
        let a = accuracy(scores, labels, t);
        if a > best.0 {
            best = (a, t);
        }
    }
    best.1
}

/// Per fold: choose the accuracy-maximising threshold on the other folds
/// (lowest on ties) and score the held-out fold with it.
pub fn kfold_accuracy(set: &ScoreSet, folds: &[usize], k: usize) -> Result<FoldAccuracy> {
    if k < 2 {
        return Err(Error::Fold {
            fold: 0,
            message: format!("need at least 2 folds, got {k}"),
        });
    }
    if folds.len() != set.len() {
        return Err(Error::Fold {
            fold: 0,
            message: format!("{} fold ids for {} scores", folds.len(), set.len()),
        });
    }
    for f in 0..k {
        let labels: Vec<bool> = (0..set.len()).filter(|&j| folds[j] == f).map(|j| set.labels[j]).collect();
        if labels.is_empty() {
            return Err(Error::Fold {
                fold: f,
                message: "empty fold".into(),
            });
        }
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            return Err(Error::Fold {
                fold: f,
                message: "fold holds a single class".into(),
            });
        }
    }
    if let Some(&bad) = folds.iter().find(|&&f| f >= k) {
        return Err(Error::Fold {
            fold: bad,
            message: format!("fold id {bad} ≥ k = {k}"),
        });
    }
    let per: Vec<(f64, f64)> = super::par_map(k, |f| {
        let (mut ts, mut tl, mut hs, mut hl) = (vec![], vec![], vec![], vec![]);
        for j in 0..set.len() {
            if folds[j] == f {
                hs.push(set.scores[j]);
                hl.push(set.labels[j]);
            } else {
                ts.push(set.scores[j]);
                tl.push(set.labels[j]);
            }
        }
        let t = best_threshold(&ts, &tl);
        (accuracy(&hs, &hl, t), t)
    });
    let per_fold: Vec<f64> = per.iter().map(|p| p.0).collect();
    let mean = per_fold.iter().sum::<f64>() / k as f64;
    let sd = (per_fold.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(FoldAccuracy {
        mean,
        sd,
        per_fold,
        thresholds: per.iter().map(|p| p.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &[f64], l: &[bool]) -> ScoreSet {
        ScoreSet::new(s.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn separated_scores() {
        let s = set(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]);
        assert_eq!(eer(&s).unwrap(), 0.0);
        assert_eq!(auc(&s).unwrap(), 1.0);
        let t = tar_at_far(&s, 1e-6).unwrap();
        assert_eq!(t.tar, 1.0);
        assert!(t.saturated);
    }

    #[test]
    fn identical_scores_are_chance() {
        let s = set(&[0.5; 6], &[true, false, true, false, true, false]);
        assert_eq!(auc(&s).unwrap(), 0.5);
        assert_eq!(eer(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let s = set(&[0.1, 0.2], &[true, true]);
        assert!(matches!(auc(&s), Err(Error::DegenerateScore(_))));
    }

    #[test]
    fn interpolated_tar() {
        // impostors 0.9, 0.1; genuine 0.8, 0.7
        let s = set(&[0.9, 0.8, 0.7, 0.1], &[false, true, true, false]);
        let t = tar_at_far(&s, 0.25).unwrap();
        // two impostors: anything below FAR 0.5 is out of reach
        assert!(t.saturated);
        assert_eq!(t.tar, 0.0);
        assert_eq!(tar_at_far(&s, 0.5).unwrap().tar, 1.0);
        // (0.5, 1) → (1, 1)
        let t = tar_at_far(&s, 0.75).unwrap();
        assert!(!t.saturated);
        assert_eq!(t.tar, 1.0);
    }

    #[test]
    fn two_fold_hand_case() {
        // fold 0: (0.9 g, 0.3 i); fold 1: (0.6 g, 0.5 i)
        let s = set(&[0.9, 0.3, 0.6, 0.5], &[true, false, true, false]);
        let r = kfold_accuracy(&s, &[0, 0, 1, 1], 2).unwrap();
        // fold 0 held out: train on {0.6 g, 0.5 i}, cands 0.5-1, 0.55, 0.6 → 0.55 is best
        // fold 1 held out: train on {0.9 g, 0.3 i}, cands -0.7, 0.6, 0.9 → 0.6, which rejects 0.6 g
        assert_eq!(r.thresholds, vec![0.55, 0.6]);
        assert_eq!(r.per_fold, vec![1.0, 0.5]);
        assert_eq!(r.mean, 0.75);
        assert_eq!(r.sd, 0.25);
    }

    #[test]
    fn one_class_fold_rejected() {
        let s = set(&[0.9, 0.3, 0.6, 0.5], &[true, true, false, false]);
        assert!(matches!(kfold_accuracy(&s, &[0, 0, 1, 1], 2), Err(Error::Fold { fold: 0, .. })));
    }
}
