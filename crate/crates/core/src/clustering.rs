//! Density-based pseudo-label generation.
//!
//! Cosine distances over unit embeddings feed a from-scratch DBSCAN whose
//! radius follows a per-epoch decay schedule. Each clustered sample then
//! gets a density distance (sigmoid of its negated mean intra-cluster
//! distance) and a per-cluster normalized weight, so edge samples count
//! less when centroids are formed.

use ndarray::Array2;
use thiserror::Error;

use crate::encoder::EmbeddingMatrix;

/// Marker for samples left outside every cluster. Exported as -1 in CSV.
pub const NOISE: i64 = -1;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("embedding row {row} is not unit-norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },
    #[error("sample {0} is noise and has no density distance")]
    NoiseSample(usize),
    #[error("assignment and feature sample counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Per-sample pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Cluster(usize),
    Noise,
}

impl Label {
    pub fn as_i64(self) -> i64 {
        match self {
            Label::Cluster(c) => c as i64,
            Label::Noise => NOISE,
        }
    }

    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Label::Noise)
    }
}

/// Pseudo-labels for one epoch: contiguous cluster ids plus noise markers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    labels: Vec<Label>,
    num_clusters: usize,
    pub epsilon_used: f64,
}

impl ClusterAssignment {
    /// Build from raw labels; cluster ids must already be contiguous.
    pub fn new(labels: Vec<Label>, num_clusters: usize, epsilon_used: f64) -> Self {
        debug_assert!(labels
            .iter()
            .filter_map(|l| l.cluster())
            .all(|c| c < num_clusters));
        Self {
            labels,
            num_clusters,
            epsilon_used,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, sample: usize) -> Label {
        self.labels[sample]
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_noise()).count()
    }

    /// Member indices per cluster, in sample order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l.cluster() {
                members[c].push(i);
            }
        }
        members
    }

    /// CSV rows `sample_id,label,epsilon_used` with noise exported as -1.
    pub fn to_csv(&self, sample_ids: &[String]) -> String {
        let mut out = String::from("sample_id,label,epsilon_used\n");
        for (id, label) in sample_ids.iter().zip(&self.labels) {
            out.push_str(&format!("{id},{},{}\n", label.as_i64(), self.epsilon_used));
        }
        out
    }
}

/// Per-epoch decay shape for the clustering radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    Exponential,
    Linear,
    Square,
}

impl DecayMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exponential" => Some(Self::Exponential),
            "linear" => Some(Self::Linear),
            "square" => Some(Self::Square),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Linear => "linear",
            Self::Square => "square",
        }
    }
}

/// Clustering-radius schedule: `eps0 * eta^epoch` in exponential mode.
///
/// Linear and square modes interpolate from `eps0` to the exponential
/// schedule's final-epoch value, so all three modes share both endpoints
/// over `total_epochs` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct DcpSchedule {
    pub eps0: f64,
    pub eta: f64,
    pub mode: DecayMode,
    pub total_epochs: usize,
}

impl DcpSchedule {
    pub fn new(eps0: f64, eta: f64, mode: DecayMode, total_epochs: usize) -> Self {
        assert!(eps0 > 0.0 && eps0 <= 2.0, "eps0 {eps0} outside (0, 2]");
        assert!(eta > 0.0 && eta <= 1.0, "eta {eta} outside (0, 1]");
        Self {
            eps0,
            eta,
            mode,
            total_epochs,
        }
    }

    /// Radius for a 0-based epoch index.
    pub fn eps_at(&self, epoch: usize) -> f64 {
        match self.mode {
            DecayMode::Exponential => self.eps0 * self.eta.powi(epoch as i32),
            DecayMode::Linear => self.calibrated(epoch, |t| t),
            DecayMode::Square => self.calibrated(epoch, |t| t * t),
        }
    }

    fn calibrated(&self, epoch: usize, shape: impl Fn(f64) -> f64) -> f64 {
        if self.total_epochs <= 1 {
            return self.eps0;
        }
        let last = (self.total_epochs - 1) as f64;
        let eps_end = self.eps0 * self.eta.powi(self.total_epochs as i32 - 1);
        let t = (epoch as f64 / last).min(1.0);
        self.eps0 + (eps_end - self.eps0) * shape(t)
    }
}

/// Cosine distance matrix `1 - f_i . f_j` over unit-norm rows.
///
/// Symmetric with an exactly zero diagonal; entries clamped into `[0, 2]`
/// against round-off.
pub fn pairwise_distance(features: &EmbeddingMatrix) -> Result<Array2<f64>, ClusteringError> {
    let n = features.num_rows();
    for (i, row) in features.data().outer_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ClusteringError::NonUnitRow { row: i, norm });
        }
    }
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (1.0 - features.row(i).dot(&features.row(j))).clamp(0.0, 2.0);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    Ok(dist)
}

/// Density-based clustering over a precomputed distance matrix.
///
/// A sample is core when at least `min_samples` samples (itself included)
/// lie within `eps`. Clusters are the connected components of core samples;
/// each remaining sample within `eps` of a core joins its nearest core's
/// cluster (ties to the lower core index), everything else is noise.
/// Cluster ids are renumbered by first appearance in sample order.
pub fn dbscan(distances: &Array2<f64>, eps: f64, min_samples: usize) -> ClusterAssignment {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_samples >= 1, "min_samples must be at least 1");
    let n = distances.nrows();
    assert_eq!(n, distances.ncols(), "distance matrix must be square");

    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| distances[[i, j]] <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    // Breadth-first expansion over core points only.
    let mut raw = vec![None; n];
    let mut next_cluster = 0;
    for start in 0..n {
        if !is_core[start] || raw[start].is_some() {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        raw[start] = Some(cluster);
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if is_core[q] && raw[q].is_none() {
                    raw[q] = Some(cluster);
                    queue.push(q);
                }
            }
        }
    }

    // Border points: nearest core within eps, ties to the lower core index.
    let mut labels: Vec<Label> = raw
        .iter()
        .map(|r| r.map(Label::Cluster).unwrap_or(Label::Noise))
        .collect();
    for i in 0..n {
        if is_core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &j in &neighbors[i] {
            if !is_core[j] {
                continue;
            }
            let d = distances[[i, j]];
            let better = match best {
                None => true,
                Some((bd, bj)) => d < bd || (d == bd && j < bj),
            };
            if better {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            labels[i] = Label::Cluster(raw[j].unwrap());
        }
    }

    // Renumber contiguously by first appearance.
    let mut remap = vec![None; next_cluster];
    let mut count = 0;
    for l in &mut labels {
        if let Label::Cluster(c) = *l {
            let id = *remap[c].get_or_insert_with(|| {
                let id = count;
                count += 1;
                id
            });
            *l = Label::Cluster(id);
        }
    }
    ClusterAssignment::new(labels, count, eps)
}

/// Density distances and per-cluster weights for clustered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityWeights {
    members: Vec<Vec<usize>>,
    density: Vec<Option<f64>>,
    weight: Vec<Option<f64>>,
}

impl DensityWeights {
    /// `D_i` for a clustered sample; noise samples have none.
    pub fn density(&self, sample: usize) -> Result<f64, ClusteringError> {
        self.density[sample].ok_or(ClusteringError::NoiseSample(sample))
    }

    /// Normalized weight `w_i`; requires [`cluster_weights`] to have run.
    pub fn weight(&self, sample: usize) -> Result<f64, ClusteringError> {
        self.weight[sample].ok_or(ClusteringError::NoiseSample(sample))
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn has_weights(&self) -> bool {
        self.members
            .iter()
            .flatten()
            .all(|&i| self.weight[i].is_some())
    }
}

/// Hand-built weights for cross-module unit tests.
#[cfg(test)]
pub(crate) fn test_weights(weight: Vec<Option<f64>>, members: Vec<Vec<usize>>) -> DensityWeights {
    let density = weight.clone();
    DensityWeights {
        members,
        density,
        weight,
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Density distance per clustered sample: sigmoid of the negated mean
/// distance to all members of its own cluster (self term included, so the
/// divisor is the full cluster size).
pub fn density_distance(
    distances: &Array2<f64>,
    assignment: &ClusterAssignment,
) -> Result<DensityWeights, ClusteringError> {
    let n = assignment.num_samples();
    if distances.nrows() != n {
        return Err(ClusteringError::LengthMismatch(distances.nrows(), n));
    }
    let members = assignment.members();
    let mut density = vec![None; n];
    for cluster in &members {
        for &i in cluster {
            let mean =
                cluster.iter().map(|&j| distances[[i, j]]).sum::<f64>() / cluster.len() as f64;
            density[i] = Some(sigmoid(-mean));
        }
    }
    Ok(DensityWeights {
        members,
        density,
        weight: vec![None; n],
    })
}

/// Normalize density distances into per-cluster weights summing to one.
pub fn cluster_weights(mut dw: DensityWeights) -> DensityWeights {
    for cluster in &dw.members {
        let total: f64 = cluster.iter().map(|&i| dw.density[i].unwrap()).sum();
        for &i in cluster {
            dw.weight[i] = Some(dw.density[i].unwrap() / total);
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn unit_matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
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
    fn cosine_distance_extremes() {
        let features = unit_matrix(vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ]);
        let d = pairwise_distance(&features).unwrap();
        assert_eq!(d[[0, 1]], 0.0);
        assert!((d[[0, 2]] - 1.0).abs() < 1e-12);
        assert!((d[[0, 3]] - 2.0).abs() < 1e-12);
        for i in 0..4 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..4 {
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
    }

    #[test]
    fn pairwise_distance_rejects_non_unit_rows() {
        let m = arr2(&[[2.0, 0.0], [0.0, 1.0]]);
        let features = EmbeddingMatrix::new(m);
        assert!(features.is_err());
    }

    #[test]
    fn eps_schedule_exponential_values() {
        let s = DcpSchedule::new(0.8, 0.97, DecayMode::Exponential, 25);
        assert!((s.eps_at(0) - 0.8).abs() < 1e-15);
        assert!((s.eps_at(1) - 0.776).abs() < 1e-9);
        let fixed = DcpSchedule::new(0.8, 1.0, DecayMode::Exponential, 25);
        for e in 0..30 {
            assert_eq!(fixed.eps_at(e), 0.8);
        }
    }

    #[test]
    fn eps_schedule_strictly_decreasing_when_eta_below_one() {
        let s = DcpSchedule::new(0.8, 0.97, DecayMode::Exponential, 25);
        for e in 0..24 {
            assert!(s.eps_at(e + 1) < s.eps_at(e));
        }
    }

    #[test]
    fn linear_and_square_modes_share_endpoints_with_exponential() {
        let epochs = 10;
        let exp = DcpSchedule::new(0.8, 0.97, DecayMode::Exponential, epochs);
        for mode in [DecayMode::Linear, DecayMode::Square] {
            let s = DcpSchedule::new(0.8, 0.97, mode, epochs);
            assert!((s.eps_at(0) - exp.eps_at(0)).abs() < 1e-12);
            assert!((s.eps_at(epochs - 1) - exp.eps_at(epochs - 1)).abs() < 1e-12);
            for e in 0..epochs - 1 {
                assert!(s.eps_at(e + 1) < s.eps_at(e), "{mode:?} not decreasing");
            }
        }
        // Square lags linear early on (decays slower at the start).
        let lin = DcpSchedule::new(0.8, 0.97, DecayMode::Linear, epochs);
        let sq = DcpSchedule::new(0.8, 0.97, DecayMode::Square, epochs);
        assert!(sq.eps_at(2) > lin.eps_at(2));
    }

    fn dist_from_points(points: &[(f64, f64)]) -> Array2<f64> {
        let n = points.len();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                d[[i, j]] = (dx * dx + dy * dy).sqrt();
            }
        }
        d
    }

    #[test]
    fn dbscan_single_tight_cluster() {
        let points: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.01, 0.0)).collect();
        let d = dist_from_points(&points);
        let a = dbscan(&d, 0.5, 4);
        assert_eq!(a.num_clusters(), 1);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn dbscan_all_points_isolated() {
        let points: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 10.0, 0.0)).collect();
        let d = dist_from_points(&points);
        let a = dbscan(&d, 0.5, 2);
        assert_eq!(a.num_clusters(), 0);
        assert_eq!(a.noise_count(), 5);
        assert!(a.labels().iter().all(|l| l.is_noise()));
    }

    #[test]
    fn dbscan_two_blobs_and_an_outlier() {
        // Two tight 2-D blobs of 6 points each plus 1 far outlier; eps sits
        // between blob radius (~0.2) and blob separation (10).
        let mut points = Vec::new();
        for i in 0..6 {
            points.push((0.1 * (i % 3) as f64, 0.1 * (i / 3) as f64));
        }
        for i in 0..6 {
            points.push((10.0 + 0.1 * (i % 3) as f64, 0.1 * (i / 3) as f64));
        }
        points.push((50.0, 50.0));
        let d = dist_from_points(&points);
        let a = dbscan(&d, 1.0, 4);
        assert_eq!(a.num_clusters(), 2);
        assert_eq!(a.noise_count(), 1);
        assert!(a.label(12).is_noise());
        for i in 0..6 {
            assert_eq!(a.label(i), Label::Cluster(0));
            assert_eq!(a.label(6 + i), Label::Cluster(1));
        }
    }

    #[test]
    fn dbscan_respects_min_samples_via_self_count() {
        // Two points within eps of each other: with min_samples 2 they are
        // both core (self + neighbor); with 3 they are noise.
        let d = dist_from_points(&[(0.0, 0.0), (0.1, 0.0)]);
        let a2 = dbscan(&d, 0.5, 2);
        assert_eq!(a2.num_clusters(), 1);
        let a3 = dbscan(&d, 0.5, 3);
        assert_eq!(a3.num_clusters(), 0);
    }

    #[test]
    fn dbscan_distant_noise_point_leaves_cluster_unchanged() {
        let base: Vec<(f64, f64)> = (0..6).map(|i| (0.05 * i as f64, 0.0)).collect();
        let d = dist_from_points(&base);
        let a = dbscan(&d, 0.5, 4);
        let mut extended = base.clone();
        extended.push((100.0, 100.0));
        let d2 = dist_from_points(&extended);
        let b = dbscan(&d2, 0.5, 4);
        assert_eq!(b.num_clusters(), a.num_clusters());
        for i in 0..base.len() {
            assert_eq!(b.label(i), a.label(i));
        }
        assert!(b.label(base.len()).is_noise());
    }

    #[test]
    fn density_distance_degenerate_cases() {
        // Singleton cluster at min_samples = 1: mean distance 0, D = 0.5.
        let d = dist_from_points(&[(0.0, 0.0), (10.0, 0.0)]);
        let a = dbscan(&d, 0.5, 1);
        assert_eq!(a.num_clusters(), 2);
        let dw = density_distance(&d, &a).unwrap();
        assert!((dw.density(0).unwrap() - 0.5).abs() < 1e-12);
        assert!((dw.density(1).unwrap() - 0.5).abs() < 1e-12);

        // Two coincident points in one cluster: all distances zero.
        let d = dist_from_points(&[(1.0, 1.0), (1.0, 1.0)]);
        let a = dbscan(&d, 0.5, 2);
        let dw = density_distance(&d, &a).unwrap();
        assert!((dw.density(0).unwrap() - 0.5).abs() < 1e-12);
        assert!((dw.density(1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_distance_matches_scalar_sigmoid_oracle() {
        // 3-point cluster with hand-set distances {0, 0.2, 0.4} from point 0:
        // mean = 0.2, D_0 = sigmoid(-0.2).
        let mut d = Array2::zeros((3, 3));
        d[[0, 1]] = 0.2;
        d[[1, 0]] = 0.2;
        d[[0, 2]] = 0.4;
        d[[2, 0]] = 0.4;
        d[[1, 2]] = 0.3;
        d[[2, 1]] = 0.3;
        let a = ClusterAssignment::new(vec![Label::Cluster(0); 3], 1, 0.5);
        let dw = density_distance(&d, &a).unwrap();
        let oracle = 1.0 / (1.0 + (0.2f64).exp());
        assert!((dw.density(0).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.45016600268752216).abs() < 1e-12);
    }

    #[test]
    fn noise_samples_have_no_density() {
        let d = dist_from_points(&[(0.0, 0.0), (0.1, 0.0), (50.0, 0.0)]);
        let a = dbscan(&d, 0.5, 2);
        let dw = density_distance(&d, &a).unwrap();
        assert!(matches!(
            dw.density(2),
            Err(ClusteringError::NoiseSample(2))
        ));
    }

    #[test]
    fn weights_normalize_per_cluster() {
        let d = dist_from_points(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)]);
        let a = dbscan(&d, 1.0, 3);
        let dw = cluster_weights(density_distance(&d, &a).unwrap());
        let total: f64 = (0..3).map(|i| dw.weight(i).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Middle point has the smallest mean distance, so the largest weight.
        assert!(dw.weight(1).unwrap() > dw.weight(0).unwrap());
        assert!(dw.weight(1).unwrap() > dw.weight(2).unwrap());
    }

    #[test]
    fn weight_of_singleton_cluster_is_one() {
        let d = dist_from_points(&[(0.0, 0.0)]);
        let a = dbscan(&d, 0.5, 1);
        let dw = cluster_weights(density_distance(&d, &a).unwrap());
        assert!((dw.weight(0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_densities_give_equal_weights() {
        // Equilateral triangle: symmetric, each weight 1/3.
        let points = [(0.0, 0.0), (1.0, 0.0), (0.5, 0.75f64.sqrt())];
        let d = dist_from_points(&points);
        let a = dbscan(&d, 2.0, 3);
        let dw = cluster_weights(density_distance(&d, &a).unwrap());
        for i in 0..3 {
            assert!((dw.weight(i).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_term_weight_normalization_oracle() {
        // D = {0.5, 0.45} -> w = {0.5/0.95, 0.45/0.95}.
        let dw = DensityWeights {
            members: vec![vec![0, 1]],
            density: vec![Some(0.5), Some(0.45)],
            weight: vec![None, None],
        };
        let dw = cluster_weights(dw);
        assert!((dw.weight(0).unwrap() - 0.5 / 0.95).abs() < 1e-12);
        assert!((dw.weight(1).unwrap() - 0.45 / 0.95).abs() < 1e-12);
        assert!((dw.weight(0).unwrap() - 0.5263157894736842).abs() < 1e-12);
        assert!((dw.weight(1).unwrap() - 0.4736842105263158).abs() < 1e-12);
    }

    #[test]
    fn assignment_csv_marks_noise_as_minus_one() {
        let a = ClusterAssignment::new(
            vec![Label::Cluster(0), Label::Noise, Label::Cluster(1)],
            2,
            0.25,
        );
        let csv = a.to_csv(&["a".into(), "b".into(), "c".into()]);
        assert_eq!(
            csv,
            "sample_id,label,epsilon_used\na,0,0.25\nb,-1,0.25\nc,1,0.25\n"
        );
    }
}
