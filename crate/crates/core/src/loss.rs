//! Contrastive objective against the centroid bank.
//!
//! Hard targets pull each sample toward its assigned centroid; soft
//! targets spread the pull over the whole probability row. Both report
//! the mean cross-entropy over the batch and its analytic gradient with
//! respect to the batch embeddings, with centroids held constant inside
//! the iteration. Log-sum-exp uses max subtraction since small
//! temperatures push logits to +-20.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::membank::MemoryBank;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("assigned cluster {0} out of range for {1} clusters")]
    InvalidCluster(usize, usize),
    #[error("target row {row} sums to {sum}, not a distribution")]
    BadTarget { row: usize, sum: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Scalar loss, per-sample terms and the embedding-space gradient.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// Mean of the per-sample cross-entropy terms.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Gradient of the mean loss w.r.t. the batch embedding matrix.
    pub grad_embeddings: Array2<f64>,
}

fn log_softmax_row(logits: ndarray::ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shifted = logits.mapv(|v| v - max);
    let lse = shifted.mapv(f64::exp).sum().ln();
    let log_probs = shifted.mapv(|v| v - lse);
    let probs = log_probs.mapv(f64::exp);
    (log_probs, probs)
}

/// InfoNCE with one-hot targets: `-log softmax(logits_i)[assigned_i]`.
pub fn infonce_hard(
    logits: &Array2<f64>,
    assigned: &[usize],
    bank: &MemoryBank,
    tau: f64,
) -> Result<LossReport, LossError> {
    let c = logits.ncols();
    for &a in assigned {
        if a >= c {
            return Err(LossError::InvalidCluster(a, c));
        }
    }
    let mut targets = Array2::zeros(logits.dim());
    for (i, &a) in assigned.iter().enumerate() {
        targets[[i, a]] = 1.0;
    }
    soft_cross_entropy(logits, &targets, bank, tau)
}

/// InfoNCE with soft target rows: `-sum_j y[j] * log softmax(logits_i)[j]`.
pub fn infonce_soft(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    bank: &MemoryBank,
    tau: f64,
) -> Result<LossReport, LossError> {
    if targets.dim() != logits.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "targets {:?} vs logits {:?}",
            targets.dim(),
            logits.dim()
        )));
    }
    for (i, row) in targets.outer_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(LossError::BadTarget { row: i, sum });
        }
    }
    soft_cross_entropy(logits, targets, bank, tau)
}

fn soft_cross_entropy(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    bank: &MemoryBank,
    tau: f64,
) -> Result<LossReport, LossError> {
    let n = logits.nrows();
    if bank.num_clusters() != logits.ncols() {
        return Err(LossError::ShapeMismatch(format!(
            "bank has {} centroids, logits have {} columns",
            bank.num_clusters(),
            logits.ncols()
        )));
    }
    let mut per_sample = Vec::with_capacity(n);
    // dL/dlogits for the mean loss, row i: (softmax_i - target_i) / n.
    let mut grad_logits = Array2::zeros(logits.dim());
    for i in 0..n {
        let (log_probs, probs) = log_softmax_row(logits.row(i));
        let term = -targets.row(i).dot(&log_probs);
        per_sample.push(term);
        let g = (&probs - &targets.row(i)) / n as f64;
        grad_logits.row_mut(i).assign(&g);
    }
    // Chain through logits = F M^T / tau with M constant.
    let grad_embeddings = grad_logits.dot(bank.centroids()) / tau;
    let loss = per_sample.iter().sum::<f64>() / n as f64;
    Ok(LossReport {
        loss,
        per_sample,
        grad_embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{ClusterAssignment, Label};
    use crate::encoder::EmbeddingMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank_with_centroids(rows: Vec<Vec<f64>>) -> MemoryBank {
        let n = rows.len();
        let d = rows[0].len();
        let mut m = Array2::zeros((n, d));
        for (i, r) in rows.iter().enumerate() {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, v) in r.iter().enumerate() {
                m[[i, j]] = v / norm;
            }
        }
        let f = EmbeddingMatrix::new(m).unwrap();
        let labels = (0..n).map(Label::Cluster).collect();
        let a = ClusterAssignment::new(labels, n, 0.5);
        MemoryBank::init_average(&f, &a).unwrap()
    }

    fn random_unit_features(seed: u64, n: usize, d: usize) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::zeros((n, d));
        for i in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, v) in row.iter().enumerate() {
                m[[i, j]] = v / norm;
            }
        }
        EmbeddingMatrix::new(m).unwrap()
    }

    #[test]
    fn single_cluster_loss_is_zero() {
        let bank = bank_with_centroids(vec![vec![1.0, 0.0]]);
        let f = random_unit_features(1, 3, 2);
        let logits = bank.similarity_logits(&f, 0.05).unwrap();
        let report = infonce_hard(&logits, &[0, 0, 0], &bank, 0.05).unwrap();
        assert!(report.loss.abs() < 1e-12);
        assert!(report.per_sample.iter().all(|&t| t.abs() < 1e-12));
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let logits = Array2::zeros((2, 3));
        let report = infonce_hard(&logits, &[0, 2], &bank, 0.05).unwrap();
        for &t in &report.per_sample {
            assert!((t - 3.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_loss_matches_log_sum_exp_oracle() {
        // 2 samples x 3 centroids with hand-set logits; direct per-element
        // recomputation without the max-subtraction trick.
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let logits =
            Array2::from_shape_vec((2, 3), vec![2.0, -1.0, 0.5, -0.25, 1.25, 3.5]).unwrap();
        let assigned = [0usize, 2];
        let report = infonce_hard(&logits, &assigned, &bank, 1.0).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = logits.row(i).to_vec();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let oracle = -(row[assigned[i]].exp() / z).ln();
            assert!((report.per_sample[i] - oracle).abs() < 1e-10);
        }
        let mean = report.per_sample.iter().sum::<f64>() / 2.0;
        assert!((report.loss - mean).abs() < 1e-12);
    }

    #[test]
    fn hard_rejects_invalid_cluster_id() {
        let bank = bank_with_centroids(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let logits = Array2::zeros((1, 2));
        assert!(matches!(
            infonce_hard(&logits, &[2], &bank, 0.05),
            Err(LossError::InvalidCluster(2, 2))
        ));
    }

    #[test]
    fn soft_with_one_hot_target_equals_hard() {
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let f = random_unit_features(3, 2, 3);
        let logits = bank.similarity_logits(&f, 0.05).unwrap();
        let assigned = [1usize, 2];
        let hard = infonce_hard(&logits, &assigned, &bank, 0.05).unwrap();
        let mut targets = Array2::zeros((2, 3));
        targets[[0, 1]] = 1.0;
        targets[[1, 2]] = 1.0;
        let soft = infonce_soft(&logits, &targets, &bank, 0.05).unwrap();
        assert_eq!(hard.loss, soft.loss);
        assert_eq!(hard.grad_embeddings, soft.grad_embeddings);
    }

    #[test]
    fn soft_at_softmax_target_hits_entropy_with_zero_gradient() {
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let logits =
            Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 1.1, 2.0, 0.0, -1.0]).unwrap();
        let mut targets = Array2::zeros((2, 3));
        for i in 0..2 {
            let row: Vec<f64> = logits.row(i).to_vec();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                targets[[i, j]] = row[j].exp() / z;
            }
        }
        let report = infonce_soft(&logits, &targets, &bank, 1.0).unwrap();
        for i in 0..2 {
            let entropy: f64 = -(0..3)
                .map(|j| targets[[i, j]] * targets[[i, j]].ln())
                .sum::<f64>();
            assert!((report.per_sample[i] - entropy).abs() < 1e-10);
        }
        for &g in report.grad_embeddings.iter() {
            assert!(g.abs() < 1e-10);
        }
    }

    #[test]
    fn soft_matches_cross_entropy_oracle_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let logits = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-2.0..2.0));
        let mut targets = Array2::zeros((2, 3));
        for i in 0..2 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for j in 0..3 {
                targets[[i, j]] = raw[j] / sum;
            }
        }
        let report = infonce_soft(&logits, &targets, &bank, 1.0).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = logits.row(i).to_vec();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let oracle: f64 = -(0..3)
                .map(|j| targets[[i, j]] * (row[j].exp() / z).ln())
                .sum::<f64>();
            assert!((report.per_sample[i] - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn soft_rejects_non_distribution_target() {
        let bank = bank_with_centroids(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let logits = Array2::zeros((1, 2));
        let targets = Array2::from_shape_vec((1, 2), vec![0.7, 0.7]).unwrap();
        assert!(matches!(
            infonce_soft(&logits, &targets, &bank, 0.05),
            Err(LossError::BadTarget { .. })
        ));
    }

    #[test]
    fn gibbs_inequality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        for _ in 0..50 {
            let logits = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-3.0..3.0));
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let targets =
                Array2::from_shape_vec((1, 4), raw.iter().map(|v| v / sum).collect()).unwrap();
            let report = infonce_soft(&logits, &targets, &bank, 1.0).unwrap();
            let entropy: f64 = -targets.iter().map(|&p| p * p.ln()).sum::<f64>();
            assert!(report.per_sample[0] >= entropy - 1e-12);
        }
    }

    /// Central finite differences of the scalar loss w.r.t. raw embedding
    /// entries, re-deriving logits per probe.
    fn fd_embedding_grad(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.3, 0.0],
            vec![-0.2, 1.0, 0.4],
            vec![0.0, -0.5, 1.0],
        ]);
        let tau = 0.5;
        let f = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let targets = {
            let mut t = Array2::zeros((2, 3));
            for i in 0..2 {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                for j in 0..3 {
                    t[[i, j]] = raw[j] / sum;
                }
            }
            t
        };
        let loss_of = |f: &Array2<f64>| {
            let logits = f.dot(&bank.centroids().t()) / tau;
            infonce_soft(&logits, &targets, &bank, tau).unwrap().loss
        };
        let logits = f.dot(&bank.centroids().t()) / tau;
        let report = infonce_soft(&logits, &targets, &bank, tau).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = f.clone();
                plus[[i, j]] += h;
                let mut minus = f.clone();
                minus[[i, j]] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = report.grad_embeddings[[i, j]];
                let denom = fd.abs().max(analytic.abs()).max(1e-4);
                worst = worst.max((fd - analytic).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let worst = fd_embedding_grad(seed);
            assert!(worst < 1e-3, "seed {seed}: worst {worst}");
        }
    }

    #[test]
    fn temperature_rescaling_keeps_softmax_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = random_unit_features(18, 4, 3);
        let bank = bank_with_centroids(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let _ = rng.gen::<f64>();
        let l1 = bank.similarity_logits(&f, 0.05).unwrap();
        let l2 = bank.similarity_logits(&f, 0.7).unwrap();
        for i in 0..4 {
            let argmax = |row: ndarray::ArrayView1<f64>| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(l1.row(i)), argmax(l2.row(i)));
        }
    }
}
