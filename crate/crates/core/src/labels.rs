//! Pseudo-label refinement.
//!
//! Three stages soften a one-hot cluster label: a per-sample confidence
//! row over all centroids (sigmoid of negated cosine distance, row
//! normalized), a convex mix of that row with the one-hot label, and a
//! teacher-guided redistribution over the k clusters nearest to the
//! augmented sample's teacher feature. Every stage stays a probability
//! vector.

use ndarray::ArrayView1;
use thiserror::Error;

use crate::clustering::sigmoid;
use crate::encoder::EmbeddingMatrix;
use crate::membank::MemoryBank;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("vector length {got} does not match cluster count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("mixing coefficient {0} outside [0, 1]")]
    BadMix(f64),
    #[error("empty memory bank")]
    EmptyBank,
    #[error("probability vector must sum to 1 (sum = {0})")]
    NotADistribution(f64),
}

/// Which refinement stage produced a soft label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    OneHot,
    Refined,
    Fused,
}

/// A per-sample probability vector over clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f64>,
    pub stage: Stage,
}

impl SoftLabel {
    pub fn one_hot(cluster: usize, num_clusters: usize) -> Self {
        let mut probs = vec![0.0; num_clusters];
        probs[cluster] = 1.0;
        Self {
            probs,
            stage: Stage::OneHot,
        }
    }

    /// Wrap an existing probability row under a known stage tag.
    pub fn with_stage(probs: Vec<f64>, stage: Stage) -> Self {
        Self { probs, stage }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn check_distribution(&self) -> Result<(), LabelError> {
        let sum = self.sum();
        if (sum - 1.0).abs() > 1e-9 || self.probs.iter().any(|&p| p < 0.0) {
            return Err(LabelError::NotADistribution(sum));
        }
        Ok(())
    }
}

/// Per-sample confidence rows over all clusters, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    rows: Vec<Vec<f64>>,
}

impl ConfidenceMatrix {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Row-normalized sigmoid of negated sample-to-centroid cosine distances.
pub fn confidence_matrix(features: &EmbeddingMatrix, bank: &MemoryBank) -> ConfidenceMatrix {
    let rows = (0..features.num_rows())
        .map(|i| {
            let mut row: Vec<f64> = (0..bank.num_clusters())
                .map(|j| {
                    let d = 1.0 - features.row(i).dot(&bank.centroid(j));
                    sigmoid(-d)
                })
                .collect();
            let total: f64 = row.iter().sum();
            for p in &mut row {
                *p /= total;
            }
            row
        })
        .collect();
    ConfidenceMatrix { rows }
}

/// Convex mix of a one-hot label with its confidence row:
/// `alpha * y + (1 - alpha) * F`.
pub fn refine_cpr(
    one_hot: &SoftLabel,
    confidence_row: &[f64],
    alpha: f64,
) -> Result<SoftLabel, LabelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LabelError::BadMix(alpha));
    }
    if one_hot.len() != confidence_row.len() {
        return Err(LabelError::LengthMismatch {
            got: confidence_row.len(),
            want: one_hot.len(),
        });
    }
    let probs = one_hot
        .probs
        .iter()
        .zip(confidence_row)
        .map(|(y, f)| alpha * y + (1.0 - alpha) * f)
        .collect();
    Ok(SoftLabel {
        probs,
        stage: Stage::Refined,
    })
}

/// The k clusters nearest to one teacher feature, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClusterEntry {
    /// Distinct cluster ids ordered by distance; ties to the lower id.
    pub ids: Vec<usize>,
    /// Matching cosine distances, non-decreasing.
    pub distances: Vec<f64>,
}

/// Find the `min(k, C)` clusters closest to a teacher feature.
pub fn latent_cluster_set(
    teacher_feature: ArrayView1<'_, f64>,
    bank: &MemoryBank,
    k: usize,
) -> Result<LatentClusterEntry, LabelError> {
    assert!(k >= 1, "k must be at least 1");
    let c = bank.num_clusters();
    if c == 0 {
        return Err(LabelError::EmptyBank);
    }
    let mut ranked: Vec<(f64, usize)> = (0..c)
        .map(|j| (1.0 - teacher_feature.dot(&bank.centroid(j)), j))
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    ranked.truncate(k.min(c));
    Ok(LatentClusterEntry {
        ids: ranked.iter().map(|&(_, j)| j).collect(),
        distances: ranked.iter().map(|&(d, _)| d).collect(),
    })
}

/// Spread probability over the latent cluster set: each member gets
/// `sigmoid(-d) / sum over the set`, every other cluster gets zero.
pub fn ctm_probabilities(entry: &LatentClusterEntry, num_clusters: usize) -> SoftLabel {
    assert!(!entry.ids.is_empty(), "latent cluster set is empty");
    let scores: Vec<f64> = entry.distances.iter().map(|&d| sigmoid(-d)).collect();
    let total: f64 = scores.iter().sum();
    let mut probs = vec![0.0; num_clusters];
    for (&id, &s) in entry.ids.iter().zip(&scores) {
        probs[id] = s / total;
    }
    SoftLabel {
        probs,
        stage: Stage::Fused,
    }
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::OneHot => "one_hot",
            Stage::Refined => "refined",
            Stage::Fused => "fused",
        }
    }
}

/// CSV rows `sample_id,stage,probabilities` with the dense row space
/// separated inside the last field.
pub fn soft_labels_csv(entries: &[(String, SoftLabel)]) -> String {
    let mut out = String::from("sample_id,stage,probabilities\n");
    for (sample_id, label) in entries {
        let row: Vec<String> = label.probs().iter().map(|p| format!("{p}")).collect();
        out.push_str(&format!(
            "{sample_id},{},{}\n",
            label.stage.name(),
            row.join(" ")
        ));
    }
    out
}

/// Final soft target: `beta * P + (1 - beta) * refined`.
pub fn fuse(p: &SoftLabel, refined: &SoftLabel, beta: f64) -> Result<SoftLabel, LabelError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(LabelError::BadMix(beta));
    }
    if p.len() != refined.len() {
        return Err(LabelError::LengthMismatch {
            got: p.len(),
            want: refined.len(),
        });
    }
    p.check_distribution()?;
    refined.check_distribution()?;
    let probs = p
        .probs
        .iter()
        .zip(&refined.probs)
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect();
    Ok(SoftLabel {
        probs,
        stage: Stage::Fused,
    })
}
