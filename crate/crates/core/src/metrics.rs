//! Clustering and retrieval evaluation against synthetic ground truth.
//!
//! Pairwise F1 counts unordered same-cluster pairs; noise samples predict
//! no pairs and so act as singletons, while recall is always taken over
//! every same-identity pair. Centroid error matches each predicted
//! cluster to its plurality identity and averages squared distances to
//! that identity's reference centroid. Rank-1 is nearest-gallery-by-cosine
//! retrieval.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::clustering::{ClusterAssignment, Label};
use crate::encoder::EmbeddingMatrix;
use crate::membank::MemoryBank;
use crate::synthgen::GroundTruth;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no matchable clusters for centroid error")]
    NoMatchableClusters,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("sample counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// One epoch's evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairwise_f1: f64,
    /// NaN when no cluster matched any identity.
    pub centroid_mse: f64,
    pub rank1: f64,
    pub label_accuracy: f64,
    pub noise_fraction: f64,
}

/// Pair-counting F1 between a cluster assignment and the true identities.
///
/// Precision is over predicted same-cluster pairs, recall over all
/// same-identity pairs; zero when no pairs are predicted.
pub fn pairwise_f1(assignment: &ClusterAssignment, truth: &GroundTruth) -> f64 {
    let n = assignment.num_samples();
    debug_assert_eq!(n, truth.identities.len());
    let mut predicted = 0u64;
    let mut true_pairs = 0u64;
    let mut hits = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let same_cluster = match (assignment.label(i), assignment.label(j)) {
                (Label::Cluster(a), Label::Cluster(b)) => a == b,
                _ => false,
            };
            let same_identity = truth.identities[i] == truth.identities[j];
            predicted += same_cluster as u64;
            true_pairs += same_identity as u64;
            hits += (same_cluster && same_identity) as u64;
        }
    }
    if predicted == 0 || true_pairs == 0 {
        return 0.0;
    }
    let precision = hits as f64 / predicted as f64;
    let recall = hits as f64 / true_pairs as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Plurality identity per cluster, ties toward the smaller identity id.
pub fn cluster_majorities(assignment: &ClusterAssignment, truth: &GroundTruth) -> Vec<Option<usize>> {
    let members = assignment.members();
    members
        .iter()
        .map(|cluster| {
            if cluster.is_empty() {
                return None;
            }
            let mut counts = std::collections::BTreeMap::new();
            for &i in cluster {
                *counts.entry(truth.identities[i]).or_insert(0usize) += 1;
            }
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(id, _)| id)
        })
        .collect()
}

/// Mean squared distance from each matched bank centroid to its identity's
/// reference centroid.
pub fn centroid_mse(
    bank: &MemoryBank,
    assignment: &ClusterAssignment,
    truth: &GroundTruth,
) -> Result<f64, MetricsError> {
    let majorities = cluster_majorities(assignment, truth);
    let mut total = 0.0;
    let mut matched = 0usize;
    for (cluster, majority) in majorities.iter().enumerate() {
        let Some(id) = majority else { continue };
        let Some(reference) = truth.true_centroids.get(*id).and_then(|c| c.as_ref()) else {
            continue;
        };
        let diff = &bank.centroid(cluster).to_owned() - reference;
        total += diff.dot(&diff);
        matched += 1;
    }
    if matched == 0 {
        return Err(MetricsError::NoMatchableClusters);
    }
    Ok(total / matched as f64)
}

/// Reference centroids under the correctly-clustered definition: per
/// identity, the normalized mean feature of its samples that sit in a
/// cluster whose plurality identity matches.
pub fn true_centroids_from_clustering(
    features: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    truth: &GroundTruth,
) -> Vec<Option<Array1<f64>>> {
    let majorities = cluster_majorities(assignment, truth);
    let num_identities = truth.num_identities();
    let mut sums: Vec<Array1<f64>> = vec![Array1::zeros(features.dim()); num_identities];
    let mut counts = vec![0usize; num_identities];
    for i in 0..assignment.num_samples() {
        let Some(cluster) = assignment.label(i).cluster() else {
            continue;
        };
        let id = truth.identities[i];
        if majorities[cluster] == Some(id) {
            sums[id] = &sums[id] + &features.row(i);
            counts[id] += 1;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, count)| {
            if count == 0 {
                return None;
            }
            let mean = sum / count as f64;
            let norm = mean.dot(&mean).sqrt();
            if norm <= 1e-12 {
                None
            } else {
                Some(mean / norm)
            }
        })
        .collect()
}

/// Fraction of probes whose nearest gallery row (cosine distance, ties to
/// the lower gallery index) shares the probe's identity.
pub fn rank1(
    gallery: &EmbeddingMatrix,
    gallery_ids: &[usize],
    probe: &EmbeddingMatrix,
    probe_ids: &[usize],
) -> Result<f64, MetricsError> {
    if gallery.num_rows() == 0 {
        return Err(MetricsError::EmptyGallery);
    }
    if gallery.num_rows() != gallery_ids.len() {
        return Err(MetricsError::LengthMismatch(
            gallery.num_rows(),
            gallery_ids.len(),
        ));
    }
    if probe.num_rows() != probe_ids.len() {
        return Err(MetricsError::LengthMismatch(
            probe.num_rows(),
            probe_ids.len(),
        ));
    }
    let mut correct = 0usize;
    for (i, &probe_id) in probe_ids.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..gallery.num_rows() {
            let d = 1.0 - probe.row(i).dot(&gallery.row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        correct += (gallery_ids[best.1] == probe_id) as usize;
    }
    Ok(correct as f64 / probe_ids.len().max(1) as f64)
}

/// Fraction of clustered samples whose cluster plurality identity matches
/// their own. Zero when everything is noise.
pub fn label_accuracy(assignment: &ClusterAssignment, truth: &GroundTruth) -> f64 {
    let majorities = cluster_majorities(assignment, truth);
    let mut clustered = 0usize;
    let mut correct = 0usize;
    for i in 0..assignment.num_samples() {
        if let Some(c) = assignment.label(i).cluster() {
            clustered += 1;
            correct += (majorities[c] == Some(truth.identities[i])) as usize;
        }
    }
    if clustered == 0 {
        0.0
    } else {
        correct as f64 / clustered as f64
    }
}

pub fn noise_fraction(assignment: &ClusterAssignment) -> f64 {
    if assignment.num_samples() == 0 {
        0.0
    } else {
        assignment.noise_count() as f64 / assignment.num_samples() as f64
    }
}

/// Reassign a fraction of clustered samples to a uniformly-drawn wrong
/// cluster. Measurement-only: used to study centroid robustness. A no-op
/// when fewer than two clusters exist.
pub fn inject_label_noise<R: Rng>(
    assignment: &ClusterAssignment,
    fraction: f64,
    rng: &mut R,
) -> ClusterAssignment {
    let c = assignment.num_clusters();
    if c < 2 || fraction <= 0.0 {
        return assignment.clone();
    }
    let clustered: Vec<usize> = (0..assignment.num_samples())
        .filter(|&i| !assignment.label(i).is_noise())
        .collect();
    let flip_count = ((clustered.len() as f64) * fraction).floor() as usize;
    let mut pool = clustered;
    pool.shuffle(rng);
    pool.truncate(flip_count);
    let mut labels = assignment.labels().to_vec();
    for i in pool {
        let current = labels[i].cluster().unwrap();
        let mut wrong = rng.gen_range(0..c - 1);
        if wrong >= current {
            wrong += 1;
        }
        labels[i] = Label::Cluster(wrong);
    }
    // Renumbering is unnecessary: every original cluster keeps at least
    // one slot in [0, C) and ids stay contiguous references into the bank.
    ClusterAssignment::new(labels, c, assignment.epsilon_used)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Label;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth(identities: Vec<usize>) -> GroundTruth {
        let n = identities.iter().max().map_or(0, |m| m + 1);
        GroundTruth {
            identities,
            clothing: vec![],
            true_centroids: vec![None; n],
        }
    }

    fn assignment(labels: Vec<i64>, c: usize) -> ClusterAssignment {
        let labels = labels
            .into_iter()
            .map(|l| {
                if l < 0 {
                    Label::Noise
                } else {
                    Label::Cluster(l as usize)
                }
            })
            .collect();
        ClusterAssignment::new(labels, c, 0.5)
    }

    fn unit_features(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let n = rows.len();
        let d = rows[0].len();
        let mut m = Array2::zeros((n, d));
        for (i, r) in rows.iter().enumerate() {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, v) in r.iter().enumerate() {
                m[[i, j]] = v / norm;
            }
        }
        EmbeddingMatrix::new(m).unwrap()
    }

    #[test]
    fn perfect_assignment_scores_one() {
        let t = truth(vec![0, 0, 0, 1, 1, 1]);
        let a = assignment(vec![0, 0, 0, 1, 1, 1], 2);
        assert_eq!(pairwise_f1(&a, &t), 1.0);
    }

    #[test]
    fn all_singletons_score_zero() {
        let t = truth(vec![0, 0, 1, 1]);
        let a = assignment(vec![0, 1, 2, 3], 4);
        assert_eq!(pairwise_f1(&a, &t), 0.0);
    }

    #[test]
    fn pairwise_f1_matches_exhaustive_pair_oracle() {
        // Truth AAABBB; predicted clusters {0,1} and {2,3,4,5}. All 15
        // pairs enumerated by the scripted oracle: 7 predicted, 6 true,
        // 4 hits -> precision 4/7, recall 2/3, F1 = 0.6153846153846153.
        let t = truth(vec![0, 0, 0, 1, 1, 1]);
        let a = assignment(vec![0, 0, 1, 1, 1, 1], 2);
        let f1 = pairwise_f1(&a, &t);
        assert!((f1 - 0.6153846153846153).abs() < 1e-15);
    }

    #[test]
    fn noise_lowers_recall_but_not_precision() {
        let t = truth(vec![0, 0, 0, 1, 1, 1]);
        // Perfect clusters but one sample of identity 0 marked noise:
        // predicted pairs = 1 + 3, all correct; recall = 4/6.
        let a = assignment(vec![0, 0, -1, 1, 1, 1], 2);
        let f1 = pairwise_f1(&a, &t);
        let precision = 1.0;
        let recall = 4.0 / 6.0;
        let expect = 2.0 * precision * recall / (precision + recall);
        assert!((f1 - expect).abs() < 1e-12);
    }

    #[test]
    fn f1_invariant_under_cluster_relabeling_and_reordering() {
        let t = truth(vec![0, 0, 1, 1, 2, 2]);
        let a = assignment(vec![0, 0, 1, 1, 2, -1], 3);
        let base = pairwise_f1(&a, &t);
        // Swap cluster ids 0 and 2.
        let b = assignment(vec![2, 2, 1, 1, 0, -1], 3);
        assert_eq!(pairwise_f1(&b, &t), base);
        // Reorder samples consistently.
        let t2 = truth(vec![2, 2, 1, 1, 0, 0]);
        let c = assignment(vec![-1, 2, 1, 1, 0, 0], 3);
        assert_eq!(pairwise_f1(&c, &t2), base);
    }

    #[test]
    fn majority_ties_break_to_smaller_identity() {
        let t = truth(vec![1, 0, 0, 1]);
        let a = assignment(vec![0, 0, 0, 0], 1);
        assert_eq!(cluster_majorities(&a, &t), vec![Some(0)]);
    }

    #[test]
    fn centroid_mse_zero_for_exact_match() {
        let f = unit_features(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = assignment(vec![0, 0, 1], 2);
        let mut t = truth(vec![0, 0, 1]);
        t.true_centroids = vec![
            Some(Array1::from_vec(vec![1.0, 0.0])),
            Some(Array1::from_vec(vec![0.0, 1.0])),
        ];
        let bank = MemoryBank::init_average(&f, &a).unwrap();
        let mse = centroid_mse(&bank, &a, &t).unwrap();
        assert!(mse < 1e-24);
    }

    #[test]
    fn centroid_mse_single_cluster_is_squared_displacement() {
        let f = unit_features(vec![vec![1.0, 0.0]]);
        let a = assignment(vec![0], 1);
        let mut t = truth(vec![0]);
        // Reference displaced by a known delta from the bank centroid.
        let reference = Array1::from_vec(vec![0.6, 0.8]);
        t.true_centroids = vec![Some(reference.clone())];
        let bank = MemoryBank::init_average(&f, &a).unwrap();
        let mse = centroid_mse(&bank, &a, &t).unwrap();
        let delta = &Array1::from_vec(vec![1.0, 0.0]) - &reference;
        assert!((mse - delta.dot(&delta)).abs() < 1e-12);
    }

    #[test]
    fn centroid_mse_errors_without_matchable_clusters() {
        let f = unit_features(vec![vec![1.0, 0.0]]);
        let a = assignment(vec![0], 1);
        let t = truth(vec![0]); // centroids all None
        let bank = MemoryBank::init_average(&f, &a).unwrap();
        assert!(matches!(
            centroid_mse(&bank, &a, &t),
            Err(MetricsError::NoMatchableClusters)
        ));
    }

    /// Closed-form 2-cluster construction: one wrong-identity member pulls
    /// the average centroid away; density weighting pulls it back.
    #[test]
    fn weighted_centroid_beats_average_under_injected_member() {
        // Identity 0 near e1, identity 1 near e2. One identity-1 sample is
        // assigned to cluster 0.
        let f = unit_features(vec![
            vec![1.0, 0.02],
            vec![1.0, -0.02],
            vec![0.99, 0.05],
            vec![0.0, 1.0], // wrong member in cluster 0
            vec![0.02, 1.0],
            vec![-0.02, 1.0],
        ]);
        let a = assignment(vec![0, 0, 0, 0, 1, 1], 2);
        let t_ids = vec![0, 0, 0, 1, 1, 1];
        let mut t = truth(t_ids);
        t.true_centroids =
            crate::synthgen::centroids_by_identity(&f, &t.identities, 2);

        let d = crate::clustering::pairwise_distance(&f).unwrap();
        let dw = crate::clustering::cluster_weights(
            crate::clustering::density_distance(&d, &a).unwrap(),
        );
        let avg = MemoryBank::init_average(&f, &a).unwrap();
        let wtd = MemoryBank::init_weighted(&f, &dw, &a).unwrap();
        let mse_avg = centroid_mse(&avg, &a, &t).unwrap();
        let mse_wtd = centroid_mse(&wtd, &a, &t).unwrap();
        assert!(
            mse_wtd < mse_avg,
            "weighted {mse_wtd} should beat average {mse_avg}"
        );
    }

    #[test]
    fn rank1_perfect_when_probe_equals_gallery_feature() {
        let g = unit_features(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = unit_features(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let r = rank1(&g, &[0, 1], &p, &[1, 0]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn rank1_orthogonal_anchors_survive_permutation() {
        let g = unit_features(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let p = unit_features(vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let r = rank1(&g, &[5, 9, 7], &p, &[7, 5, 9]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn rank1_matches_brute_force_nearest_neighbor_table() {
        // 4 probes x 6 gallery rows with hand-set geometry in the plane.
        let angle = |deg: f64| {
            let r = deg.to_radians();
            vec![r.cos(), r.sin()]
        };
        let g = unit_features(vec![
            angle(0.0),
            angle(30.0),
            angle(60.0),
            angle(90.0),
            angle(180.0),
            angle(270.0),
        ]);
        let g_ids = [0, 0, 1, 1, 2, 2];
        let p = unit_features(vec![angle(5.0), angle(85.0), angle(170.0), angle(300.0)]);
        let p_ids = [0, 1, 2, 0];
        // Nearest gallery rows by hand: 0 deg, 90 deg, 180 deg, 270 deg ->
        // identities 0, 1, 2, 2. Probe identities 0, 1, 2, 0 -> 3/4 correct.
        let r = rank1(&g, &g_ids, &p, &p_ids).unwrap();
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rank1_invariant_under_joint_rotation() {
        // Rotating probe and gallery by the same planar rotation preserves
        // every cosine distance.
        let g = unit_features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let p = unit_features(vec![vec![0.9, 0.43589], vec![-0.8, 0.6]]);
        let base = rank1(&g, &[0, 1, 2], &p, &[0, 2]).unwrap();
        let theta: f64 = 0.7;
        let rotate = |m: &EmbeddingMatrix| {
            let mut out = m.data().clone();
            for mut row in out.outer_iter_mut() {
                let (x, y) = (row[0], row[1]);
                row[0] = x * theta.cos() - y * theta.sin();
                row[1] = x * theta.sin() + y * theta.cos();
            }
            EmbeddingMatrix::new(out).unwrap()
        };
        let r = rank1(&rotate(&g), &[0, 1, 2], &rotate(&p), &[0, 2]).unwrap();
        assert_eq!(r, base);
    }

    #[test]
    fn rank1_rejects_empty_gallery() {
        let p = unit_features(vec![vec![1.0, 0.0]]);
        let g = EmbeddingMatrix::new(Array2::zeros((0, 2))).unwrap();
        assert!(matches!(
            rank1(&g, &[], &p, &[0]),
            Err(MetricsError::EmptyGallery)
        ));
    }

    #[test]
    fn label_accuracy_counts_majority_matches() {
        let t = truth(vec![0, 0, 0, 1, 1]);
        // Cluster 0 holds two id-0 samples and one id-1: majority 0.
        let a = assignment(vec![0, 0, 0, 0, -1], 1);
        let acc = label_accuracy(&a, &t);
        assert!((acc - 0.75).abs() < 1e-12);
        assert!((noise_fraction(&a) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn injected_noise_preserves_cluster_count_and_flip_budget() {
        let labels: Vec<i64> = (0..40).map(|i| (i % 4) as i64).collect();
        let a = assignment(labels, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = inject_label_noise(&a, 0.1, &mut rng);
        assert_eq!(noisy.num_clusters(), 4);
        let flipped = (0..40)
            .filter(|&i| noisy.label(i) != a.label(i))
            .count();
        assert_eq!(flipped, 4);
        // Deterministic under the same seed.
        let again = inject_label_noise(&a, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(noisy, again);
    }
}
