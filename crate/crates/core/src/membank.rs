//! Cluster-centroid memory bank.
//!
//! One unit-norm centroid per cluster. Initialization is either the plain
//! per-cluster mean or the density-weighted sum; during training each
//! query sample folds its feature into its centroid with momentum. The
//! centroid is renormalized after every write so dot products stay cosine
//! similarities.

use ndarray::{Array1, Array2};
use std::path::Path;
use thiserror::Error;

use crate::clustering::{ClusterAssignment, ClusteringError, DensityWeights};
use crate::encoder::EmbeddingMatrix;
use crate::tensorfile::{TensorFile, TensorFileError};

#[derive(Debug, Error)]
pub enum MemBankError {
    #[error("assignment has no clusters")]
    NoClusters,
    #[error("unknown cluster id {0}")]
    UnknownCluster(usize),
    #[error("degenerate zero-norm centroid for cluster {0}")]
    DegenerateCentroid(usize),
    #[error("temperature {0} must be positive")]
    BadTemperature(f64),
    #[error("weights missing: {0}")]
    Weights(#[from] ClusteringError),
    #[error("feature dim {got} does not match bank dim {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("snapshot error: {0}")]
    Snapshot(#[from] TensorFileError),
}

/// Unit-norm centroids plus the momentum used for in-iteration updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    centroids: Array2<f64>,
    pub momentum: f64,
}

impl MemoryBank {
    /// Plain averages: `normalize(mean of member features)` per cluster.
    pub fn init_average(
        features: &EmbeddingMatrix,
        assignment: &ClusterAssignment,
    ) -> Result<Self, MemBankError> {
        // Uniform weights keep this bit-identical to the weighted path.
        let members = assignment.members();
        if members.is_empty() {
            return Err(MemBankError::NoClusters);
        }
        let mut centroids = Array2::zeros((members.len(), features.dim()));
        for (c, cluster) in members.iter().enumerate() {
            let w = 1.0 / cluster.len() as f64;
            let mut sum = Array1::<f64>::zeros(features.dim());
            for &i in cluster {
                sum.scaled_add(w, &features.row(i));
            }
            normalize_into(&mut sum, c)?;
            centroids.row_mut(c).assign(&sum);
        }
        Ok(Self {
            centroids,
            momentum: 0.2,
        })
    }

    /// Density-weighted sums: `normalize(sum of w_i * f_i)` per cluster.
    pub fn init_weighted(
        features: &EmbeddingMatrix,
        weights: &DensityWeights,
        assignment: &ClusterAssignment,
    ) -> Result<Self, MemBankError> {
        let members = assignment.members();
        if members.is_empty() {
            return Err(MemBankError::NoClusters);
        }
        let mut centroids = Array2::zeros((members.len(), features.dim()));
        for (c, cluster) in members.iter().enumerate() {
            let mut sum = Array1::<f64>::zeros(features.dim());
            for &i in cluster {
                sum.scaled_add(weights.weight(i)?, &features.row(i));
            }
            normalize_into(&mut sum, c)?;
            centroids.row_mut(c).assign(&sum);
        }
        Ok(Self {
            centroids,
            momentum: 0.2,
        })
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        assert!((0.0..=1.0).contains(&momentum));
        self.momentum = momentum;
        self
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroid(&self, cluster: usize) -> ndarray::ArrayView1<'_, f64> {
        self.centroids.row(cluster)
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    /// Fold one query feature into its centroid:
    /// `m <- normalize(mu * m + (1 - mu) * f)`.
    pub fn momentum_update(
        &mut self,
        cluster: usize,
        feature: ndarray::ArrayView1<'_, f64>,
    ) -> Result<(), MemBankError> {
        if cluster >= self.num_clusters() {
            return Err(MemBankError::UnknownCluster(cluster));
        }
        if feature.len() != self.dim() {
            return Err(MemBankError::DimMismatch {
                got: feature.len(),
                want: self.dim(),
            });
        }
        let mu = self.momentum;
        let mut updated = self.centroids.row(cluster).to_owned() * mu + &(&feature * (1.0 - mu));
        normalize_into(&mut updated, cluster)?;
        self.centroids.row_mut(cluster).assign(&updated);
        Ok(())
    }

    /// Temperature-scaled similarity logits `(f_i . m_j) / tau`.
    pub fn similarity_logits(
        &self,
        features: &EmbeddingMatrix,
        tau: f64,
    ) -> Result<Array2<f64>, MemBankError> {
        if tau <= 0.0 {
            return Err(MemBankError::BadTemperature(tau));
        }
        if features.dim() != self.dim() {
            return Err(MemBankError::DimMismatch {
                got: features.dim(),
                want: self.dim(),
            });
        }
        Ok(features.data().dot(&self.centroids.t()) / tau)
    }

    /// Snapshot in the shared checkpoint layout.
    pub fn save(&self, path: &Path) -> Result<(), MemBankError> {
        let mut tf = TensorFile::new();
        tf.insert(
            "centroids",
            vec![self.centroids.nrows(), self.centroids.ncols()],
            self.centroids.iter().cloned().collect(),
        );
        tf.insert("momentum", vec![1], vec![self.momentum]);
        tf.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemBankError> {
        let tf = TensorFile::load(path)?;
        let entry = tf.get("centroids")?;
        let (c, d) = (entry.shape[0], entry.shape[1]);
        let centroids = Array2::from_shape_vec((c, d), entry.data.clone())
            .map_err(|_| MemBankError::NoClusters)?;
        let momentum = tf.get_shaped("momentum", &[1])?.data[0];
        Ok(Self {
            centroids,
            momentum,
        })
    }
}

fn normalize_into(v: &mut Array1<f64>, cluster: usize) -> Result<(), MemBankError> {
    let norm = v.dot(v).sqrt();
    if norm <= 1e-12 {
        return Err(MemBankError::DegenerateCentroid(cluster));
    }
    v.mapv_inplace(|x| x / norm);
    Ok(())
}
