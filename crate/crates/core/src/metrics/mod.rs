//! Evaluation protocols: verification scores, identification by yaw
//! bucket, and feature-geometry probes.

mod exchange;
mod identification;
mod probes;
mod verification;

pub use exchange::{
    decode_embeddings, encode_embeddings, format_pairs, parse_pairs, read_embeddings, write_embeddings, EmbeddingRecord,
    PairRecord, EMBEDDING_MAGIC,
};
pub use identification::{rank1, yaw_bucket, IdentificationProtocol, Probe, Rank1Report};
pub use probes::{class_geometry, cosine_matrix, orth_probe, pca_top2, ClassGeometry, OrthProbe};
pub use verification::{
    auc, eer, kfold_accuracy, roc, split_folds, tar_at_far, FoldAccuracy, RocPoint, ScoreSet, TarAtFar,
};

/// Worker count for metric computations: `POSEFACE_THREADS` if set to a
/// positive integer, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("POSEFACE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Ordered parallel map over `0..n`; the result does not depend on the
/// thread count.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = worker_threads().min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("metric worker panicked"))
            .collect()
    })
}

pub(crate) fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
