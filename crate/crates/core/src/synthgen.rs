//! Ground-truth synthetic domains.
//!
//! Identities are clusters with controlled geometry: an anchor per
//! identity, angular noise per sample, and a fixed per-identity offset
//! for every non-base clothing mode, so appearance changes are systematic
//! rather than i.i.d. The same identities can be rendered two ways: as
//! unit-embedding clouds for clustering-stage tests, and as stick-figure
//! silhouette sequences for the end-to-end loop. Both renderings derive
//! per-identity randomness from the same seed split, so experiments can
//! cross-reference samples.
//!
//! Perturbation scales (`intra_spread`, `clothing_shift`) are approximate
//! Euclidean magnitudes: Gaussian draws are divided by sqrt(dim) before
//! scaling.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::encoder::EmbeddingMatrix;
use crate::silhouette::{self, SilhouetteFrame, SilhouetteSequence};
use crate::tensorfile::{TensorFile, TensorFileError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("malformed manifest line {0:?}")]
    MalformedManifest(String),
    #[error("dataset error: {0}")]
    Tensor(#[from] TensorFileError),
    #[error("silhouette error: {0}")]
    Silhouette(#[from] silhouette::SilhouetteError),
}

/// Shape of a synthetic domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_identities: usize,
    pub sequences_per_identity: usize,
    /// Appearance modes per identity, base mode included.
    pub clothing_conditions: usize,
    /// Within-identity perturbation magnitude.
    pub intra_spread: f64,
    /// Extra offset magnitude for non-base clothing modes.
    pub clothing_shift: f64,
    /// Dimension of generated embedding clouds.
    pub embed_dim: usize,
    /// Frames per generated silhouette sequence.
    pub frames_per_sequence: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_identities: 10,
            sequences_per_identity: 8,
            clothing_conditions: 2,
            intra_spread: 0.05,
            clothing_shift: 0.3,
            embed_dim: 16,
            frames_per_sequence: 30,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_identities < 2 {
            return Err(SynthError::InvalidSpec("need at least 2 identities".into()));
        }
        if self.sequences_per_identity == 0 || self.clothing_conditions == 0 {
            return Err(SynthError::InvalidSpec(
                "sequences and clothing conditions must be positive".into(),
            ));
        }
        if self.intra_spread < 0.0 || self.clothing_shift < 0.0 {
            return Err(SynthError::InvalidSpec(
                "perturbation scales must be non-negative".into(),
            ));
        }
        if self.embed_dim < 2 || self.frames_per_sequence == 0 {
            return Err(SynthError::InvalidSpec(
                "embed_dim must be >= 2 and frames_per_sequence positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_identities * self.sequences_per_identity
    }
}

/// Per-sample truth plus per-identity reference centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub identities: Vec<usize>,
    pub clothing: Vec<usize>,
    /// Normalized mean feature per identity; None until computed.
    pub true_centroids: Vec<Option<Array1<f64>>>,
}

impl GroundTruth {
    pub fn num_identities(&self) -> usize {
        self.true_centroids.len()
    }

    pub fn num_samples(&self) -> usize {
        self.identities.len()
    }
}

/// Split one seed into a per-identity stream shared by both renderings.
fn identity_rng(seed: u64, identity: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(identity as u64 + 1);
    rng
}

fn gaussian_direction<R: Rng>(rng: &mut R, dim: usize) -> Array1<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    Array1::from_shape_fn(dim, |_| {
        let g: f64 = rng.sample(StandardNormal);
        g * scale
    })
}

fn normalize(mut v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}

/// Clothing mode for sequence `s`: every fourth sequence wears a non-base
/// mode (cycling through them), matching the minority share clothing
/// conditions have in real capture sessions.
pub fn clothing_mode_for(s: usize, clothing_conditions: usize) -> usize {
    if clothing_conditions <= 1 || s % 4 != 3 {
        0
    } else {
        1 + (s / 4) % (clothing_conditions - 1)
    }
}

/// Generate a unit-embedding cloud with ground truth.
///
/// Sample order is identity-major; every fourth sample of an identity
/// carries a non-base clothing mode.
pub fn gen_embeddings(spec: &SynthSpec) -> Result<(EmbeddingMatrix, GroundTruth), SynthError> {
    spec.validate()?;
    let n = spec.total_samples();
    let mut rows = Array2::zeros((n, spec.embed_dim));
    let mut identities = Vec::with_capacity(n);
    let mut clothing = Vec::with_capacity(n);
    let mut sample = 0;
    for id in 0..spec.num_identities {
        let mut rng = identity_rng(spec.seed, id);
        let anchor = normalize(gaussian_direction(&mut rng, spec.embed_dim));
        let offsets: Vec<Array1<f64>> = (0..spec.clothing_conditions)
            .map(|m| {
                if m == 0 {
                    Array1::zeros(spec.embed_dim)
                } else {
                    gaussian_direction(&mut rng, spec.embed_dim) * spec.clothing_shift
                }
            })
            .collect();
        for s in 0..spec.sequences_per_identity {
            let mode = clothing_mode_for(s, spec.clothing_conditions);
            let noise = gaussian_direction(&mut rng, spec.embed_dim) * spec.intra_spread;
            let feature = normalize(&anchor + &offsets[mode] + noise);
            rows.row_mut(sample).assign(&feature);
            identities.push(id);
            clothing.push(mode);
            sample += 1;
        }
    }
    let features = EmbeddingMatrix::new(rows).expect("generated rows are normalized");
    let true_centroids = centroids_by_identity(&features, &identities, spec.num_identities);
    Ok((
        features,
        GroundTruth {
            identities,
            clothing,
            true_centroids,
        },
    ))
}

/// Normalized per-identity mean of the given features.
pub(crate) fn centroids_by_identity(
    features: &EmbeddingMatrix,
    identities: &[usize],
    num_identities: usize,
) -> Vec<Option<Array1<f64>>> {
    let mut sums: Vec<Array1<f64>> = vec![Array1::zeros(features.dim()); num_identities];
    let mut counts = vec![0usize; num_identities];
    for (i, &id) in identities.iter().enumerate() {
        sums[id] = &sums[id] + &features.row(i);
        counts[id] += 1;
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

// ---------------------------------------------------------------------------
// Silhouette rendering: a parametric stick figure on the 64x44 canvas.
// ---------------------------------------------------------------------------

const CANVAS_H: usize = 64;
const CANVAS_W: usize = 44;

/// Identity-specific body geometry.
#[derive(Debug, Clone)]
struct BodyParams {
    torso_half_width: f64,
    torso_taper: f64,
    head_rx: f64,
    head_ry: f64,
    head_row: f64,
    center_col: f64,
    shoulder_half_width: f64,
    arm_reach: f64,
    stance: f64,
    leg_swing: f64,
    leg_thickness: f64,
    stride_period: f64,
    limb_thickness: f64,
    shoe_radius: f64,
    hair_height: f64,
}

// Parameter box: (low, high, visual weight). Weights reflect how many
// silhouette pixels the axis moves, so the separation metric below tracks
// how distinct two bodies look rather than raw parameter deltas.
const BODY_AXES: [(f64, f64, f64); 15] = [
    (3.5, 5.0, 1.0),  // torso half width (kept narrow: coats mask it)
    (-1.0, 1.0, 0.5), // torso taper
    (2.5, 6.5, 2.0),  // head rx
    (2.5, 7.0, 2.0),  // head ry
    (5.5, 11.0, 1.0), // head row
    (13.0, 31.0, 3.0),// center col
    (4.0, 9.0, 1.5),  // shoulder half width
    (5.0, 12.0, 0.5), // arm reach
    (0.5, 5.0, 2.5),  // stance
    (3.0, 11.0, 2.0), // leg swing
    (0.8, 2.8, 1.5),  // leg thickness
    (12.0, 26.0, 0.5),// stride period
    (0.8, 2.4, 0.5),  // limb thickness
    (1.0, 3.2, 2.0),  // shoe radius
    (0.0, 3.5, 2.0),  // hair height
];

impl BodyParams {
    fn from_raw(raw: &[f64; 15]) -> Self {
        Self {
            torso_half_width: raw[0],
            torso_taper: raw[1],
            head_rx: raw[2],
            head_ry: raw[3],
            head_row: raw[4],
            center_col: raw[5],
            shoulder_half_width: raw[6],
            arm_reach: raw[7],
            stance: raw[8],
            leg_swing: raw[9],
            leg_thickness: raw[10],
            stride_period: raw[11],
            limb_thickness: raw[12],
            shoe_radius: raw[13],
            hair_height: raw[14],
        }
    }
}

fn raw_body_draw<R: Rng>(rng: &mut R) -> [f64; 15] {
    let mut raw = [0.0; 15];
    for (slot, (lo, hi, _)) in raw.iter_mut().zip(BODY_AXES) {
        *slot = rng.gen_range(lo..hi);
    }
    raw
}

fn body_separation(a: &[f64; 15], b: &[f64; 15]) -> f64 {
    BODY_AXES
        .iter()
        .zip(a.iter().zip(b))
        .map(|((lo, hi, w), (x, y))| {
            let d = (x - y) / (hi - lo);
            w * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Greedy max-min placement: each identity draws candidates from its own
/// stream and keeps the first one far enough from every earlier identity
/// (or the farthest seen when the budget runs out). Deterministic per
/// seed, and any two identities stay visually distinct.
fn derive_body(identity: usize, seed: u64, accepted: &[[f64; 15]]) -> ([f64; 15], ChaCha8Rng) {
    const SEPARATION_FLOOR: f64 = 0.85;
    const CANDIDATES: usize = 64;
    let mut rng = identity_rng(seed, identity);
    let mut best: Option<([f64; 15], f64)> = None;
    for _ in 0..CANDIDATES {
        let raw = raw_body_draw(&mut rng);
        let min_sep = accepted
            .iter()
            .map(|other| body_separation(&raw, other))
            .fold(f64::INFINITY, f64::min);
        if min_sep >= SEPARATION_FLOOR {
            return (raw, rng);
        }
        if best.as_ref().is_none_or(|(_, s)| min_sep > *s) {
            best = Some((raw, min_sep));
        }
    }
    (best.expect("at least one candidate").0, rng)
}

/// Torso half-width change per clothing mode: odd modes thicken (coat),
/// even non-base modes thin.
fn clothing_delta(mode: usize) -> f64 {
    if mode == 0 {
        0.0
    } else if mode % 2 == 1 {
        2.0 + ((mode + 1) / 2) as f64 * 0.5
    } else {
        -(1.0 + (mode / 2) as f64 * 0.5)
    }
}

/// Coats also bulk up the arms; thinning modes leave them alone.
fn clothing_arm_delta(mode: usize) -> f64 {
    if mode % 2 == 1 {
        1.0
    } else {
        0.0
    }
}

fn set_disc(frame: &mut SilhouetteFrame, row: f64, col: f64, radius: f64) {
    set_ellipse(frame, row, col, radius, radius);
}

fn set_ellipse(frame: &mut SilhouetteFrame, row: f64, col: f64, ry: f64, rx: f64) {
    let r0 = ((row - ry).floor().max(0.0)) as usize;
    let r1 = ((row + ry).ceil().min((CANVAS_H - 1) as f64)) as usize;
    let c0 = ((col - rx).floor().max(0.0)) as usize;
    let c1 = ((col + rx).ceil().min((CANVAS_W - 1) as f64)) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dr = (r as f64 - row) / ry;
            let dc = (c as f64 - col) / rx;
            if dr * dr + dc * dc <= 1.0 {
                frame.set(r, c, 1);
            }
        }
    }
}

fn draw_limb(frame: &mut SilhouetteFrame, from: (f64, f64), to: (f64, f64), thickness: f64) {
    let steps = 40;
    for t in 0..=steps {
        let a = t as f64 / steps as f64;
        let row = from.0 + (to.0 - from.0) * a;
        let col = from.1 + (to.1 - from.1) * a;
        set_disc(frame, row, col, thickness);
    }
}

fn render_frame(body: &BodyParams, mode: usize, phase: f64, frame_idx: usize) -> SilhouetteFrame {
    let mut frame = SilhouetteFrame::zeros(CANVAS_H, CANVAS_W);
    let theta = phase + 2.0 * std::f64::consts::PI * frame_idx as f64 / body.stride_period;
    let swing = theta.sin();

    // Head and hair: ellipses, untouched by clothing.
    set_ellipse(
        &mut frame,
        body.head_row,
        body.center_col,
        body.head_ry,
        body.head_rx,
    );
    if body.hair_height > 0.5 {
        set_ellipse(
            &mut frame,
            (body.head_row - body.head_ry).max(1.5),
            body.center_col,
            body.hair_height,
            body.head_rx * 0.8,
        );
    }

    // Tapered torso column band; the clothing delta applies only inside
    // body rows [16, 48) so head and legs stay bit-identical across modes.
    let delta = clothing_delta(mode);
    let coat = mode % 2 == 1;
    for row in 12..48usize {
        let taper = body.torso_taper * (row as f64 - 12.0) / 35.0;
        let mut hw = (body.torso_half_width + taper).max(1.0);
        if (16..48).contains(&row) {
            // A coat hangs straight, hiding the taper inside the band.
            if coat {
                hw = (body.torso_half_width + taper.max(0.0)).max(1.0);
            }
            hw = (hw + delta).max(1.0);
        }
        let c0 = ((body.center_col - hw).round().max(0.0)) as usize;
        let c1 = ((body.center_col + hw).round().min((CANVAS_W - 1) as f64)) as usize;
        for c in c0..=c1 {
            frame.set(row, c, 1);
        }
    }

    // Arms swing in anti-phase, staying inside rows [18, 46).
    let arm_thickness = body.limb_thickness + clothing_arm_delta(mode);
    for (side, dir) in [(-1.0, 1.0), (1.0, -1.0)] {
        let shoulder = (19.0, body.center_col + side * body.shoulder_half_width);
        let hand = (
            42.0,
            shoulder.1 + dir * swing * body.arm_reach * 0.6 + side * 1.5,
        );
        draw_limb(&mut frame, shoulder, hand, arm_thickness);
    }

    // Legs swing in anti-phase from the hip line, rows [48, 63], with a
    // shoe at each foot. All of it clothing-invariant.
    for (side, dir) in [(-1.0, 1.0), (1.0, -1.0)] {
        let hip = (48.0, body.center_col + side * body.stance);
        let foot = (61.0, hip.1 + dir * swing * body.leg_swing);
        draw_limb(&mut frame, hip, foot, body.leg_thickness);
        set_ellipse(&mut frame, foot.0 + 1.2, foot.1, body.shoe_radius * 0.6, body.shoe_radius);
    }
    frame
}

/// Generate silhouette sequences with ground truth. A non-base sequence
/// reuses the stride phase of the preceding base sequence, so matched
/// clothing pairs are directly comparable.
pub fn gen_silhouettes(
    spec: &SynthSpec,
) -> Result<(Vec<SilhouetteSequence>, GroundTruth), SynthError> {
    spec.validate()?;
    let mut sequences = Vec::with_capacity(spec.total_samples());
    let mut identities = Vec::new();
    let mut clothing = Vec::new();
    let mut accepted: Vec<[f64; 15]> = Vec::with_capacity(spec.num_identities);
    for id in 0..spec.num_identities {
        let (raw, mut rng) = derive_body(id, spec.seed, &accepted);
        accepted.push(raw);
        let body = BodyParams::from_raw(&raw);
        let mut group_phase = 0.0;
        for s in 0..spec.sequences_per_identity {
            let mode = clothing_mode_for(s, spec.clothing_conditions);
            if mode == 0 {
                group_phase = rng.gen_range(0.0..std::f64::consts::TAU);
            }
            let frames: Vec<SilhouetteFrame> = (0..spec.frames_per_sequence)
                .map(|f| render_frame(&body, mode, group_phase, f))
                .collect();
            let sample_id = format!("id{id:03}_seq{s:03}_c{mode}");
            sequences.push(SilhouetteSequence::new(&sample_id, frames)?);
            identities.push(id);
            clothing.push(mode);
        }
    }
    let true_centroids = vec![None; spec.num_identities];
    Ok((
        sequences,
        GroundTruth {
            identities,
            clothing,
            true_centroids,
        },
    ))
}

// ---------------------------------------------------------------------------
// Dataset persistence: manifest CSV plus either an embedding archive or
// silhouette sequence directories.
// ---------------------------------------------------------------------------

const MANIFEST: &str = "manifest.csv";
const EMBEDDINGS: &str = "embeddings.bin";

/// An embedding cloud with its manifest, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub sample_ids: Vec<String>,
    pub features: EmbeddingMatrix,
    pub truth: GroundTruth,
}

/// Silhouette sequences with their manifest, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteDataset {
    pub sequences: Vec<SilhouetteSequence>,
    pub truth: GroundTruth,
}

impl SilhouetteDataset {
    pub fn sample_ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.sample_id.clone()).collect()
    }

    /// Row subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            truth: GroundTruth {
                identities: indices.iter().map(|&i| self.truth.identities[i]).collect(),
                clothing: indices.iter().map(|&i| self.truth.clothing[i]).collect(),
                true_centroids: self.truth.true_centroids.clone(),
            },
        }
    }

    /// Hold out the last `holdout_per_identity` samples of every identity;
    /// the rest stay in the training split.
    pub fn split_train_holdout(&self, holdout_per_identity: usize) -> (Self, Self) {
        let n_ids = self.truth.num_identities();
        let mut by_identity: Vec<Vec<usize>> = vec![Vec::new(); n_ids];
        for (i, &id) in self.truth.identities.iter().enumerate() {
            by_identity[id].push(i);
        }
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for members in by_identity {
            let keep = members.len().saturating_sub(holdout_per_identity);
            train.extend_from_slice(&members[..keep]);
            holdout.extend_from_slice(&members[keep..]);
        }
        train.sort_unstable();
        holdout.sort_unstable();
        (self.subset(&train), self.subset(&holdout))
    }
}

fn manifest_csv(sample_ids: &[String], truth: &GroundTruth) -> String {
    let mut out = String::from("sample_id,identity,clothing\n");
    for i in 0..sample_ids.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            sample_ids[i], truth.identities[i], truth.clothing[i]
        ));
    }
    out
}

fn parse_manifest(text: &str) -> Result<(Vec<String>, Vec<usize>, Vec<usize>), SynthError> {
    let mut ids = Vec::new();
    let mut identities = Vec::new();
    let mut clothing = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(SynthError::MalformedManifest(line.to_string()));
        }
        ids.push(fields[0].to_string());
        identities.push(
            fields[1]
                .parse()
                .map_err(|_| SynthError::MalformedManifest(line.to_string()))?,
        );
        clothing.push(
            fields[2]
                .parse()
                .map_err(|_| SynthError::MalformedManifest(line.to_string()))?,
        );
    }
    Ok((ids, identities, clothing))
}

pub fn save_embedding_dataset(ds: &EmbeddingDataset, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), manifest_csv(&ds.sample_ids, &ds.truth))?;
    let mut tf = TensorFile::new();
    tf.insert(
        "embeddings",
        vec![ds.features.num_rows(), ds.features.dim()],
        ds.features.data().iter().cloned().collect(),
    );
    tf.save(&dir.join(EMBEDDINGS))?;
    Ok(())
}

pub fn load_embedding_dataset(dir: &Path) -> Result<EmbeddingDataset, SynthError> {
    let (sample_ids, identities, clothing) =
        parse_manifest(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let tf = TensorFile::load(&dir.join(EMBEDDINGS))?;
    let entry = tf.get("embeddings")?;
    let rows = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), entry.data.clone())
        .map_err(|e| SynthError::MalformedManifest(e.to_string()))?;
    let features = EmbeddingMatrix::new(rows)
        .map_err(|e| SynthError::MalformedManifest(format!("stored embeddings: {e}")))?;
    let num_identities = identities.iter().max().map_or(0, |m| m + 1);
    let true_centroids = centroids_by_identity(&features, &identities, num_identities);
    Ok(EmbeddingDataset {
        sample_ids,
        features,
        truth: GroundTruth {
            identities,
            clothing,
            true_centroids,
        },
    })
}

pub fn save_silhouette_dataset(ds: &SilhouetteDataset, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    let ids = ds.sample_ids();
    fs::write(dir.join(MANIFEST), manifest_csv(&ids, &ds.truth))?;
    for seq in &ds.sequences {
        silhouette::write_sequence(seq, &dir.join(&seq.sample_id))?;
    }
    Ok(())
}

pub fn load_silhouette_dataset(dir: &Path) -> Result<SilhouetteDataset, SynthError> {
    let (sample_ids, identities, clothing) =
        parse_manifest(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut sequences = Vec::with_capacity(sample_ids.len());
    for id in &sample_ids {
        sequences.push(silhouette::read_sequence(&dir.join(id))?);
    }
    let num_identities = identities.iter().max().map_or(0, |m| m + 1);
    Ok(SilhouetteDataset {
        sequences,
        truth: GroundTruth {
            identities,
            clothing,
            true_centroids: vec![None; num_identities],
        },
    })
}

/// True when the directory holds an embedding dataset (vs silhouettes).
pub fn is_embedding_dataset(dir: &Path) -> bool {
    dir.join(EMBEDDINGS).exists()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{dbscan, pairwise_distance};
    use crate::silhouette::partition_rows;

    fn tight_spec() -> SynthSpec {
        SynthSpec {
            num_identities: 5,
            sequences_per_identity: 10,
            clothing_conditions: 1,
            intra_spread: 0.05,
            clothing_shift: 0.0,
            embed_dim: 16,
            frames_per_sequence: 8,
            seed: 42,
        }
    }

    #[test]
    fn zero_noise_samples_equal_their_anchor() {
        let spec = SynthSpec {
            intra_spread: 0.0,
            clothing_shift: 0.0,
            ..tight_spec()
        };
        let (features, truth) = gen_embeddings(&spec).unwrap();
        for id in 0..spec.num_identities {
            let members: Vec<usize> = (0..truth.num_samples())
                .filter(|&i| truth.identities[i] == id)
                .collect();
            let first = features.row(members[0]);
            for &m in &members[1..] {
                for (a, b) in features.row(m).iter().zip(first.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn embeddings_are_seed_deterministic() {
        let spec = tight_spec();
        let (f1, t1) = gen_embeddings(&spec).unwrap();
        let (f2, t2) = gen_embeddings(&spec).unwrap();
        assert_eq!(f1.data(), f2.data());
        assert_eq!(t1, t2);
    }

    #[test]
    fn separable_cloud_is_recovered_exactly_by_dbscan() {
        let spec = tight_spec();
        let (features, truth) = gen_embeddings(&spec).unwrap();
        let d = pairwise_distance(&features).unwrap();

        // The instance is separable by construction: intra distances well
        // under eps, inter distances well over it.
        let mut max_intra: f64 = 0.0;
        let mut min_inter = f64::INFINITY;
        for i in 0..truth.num_samples() {
            for j in (i + 1)..truth.num_samples() {
                if truth.identities[i] == truth.identities[j] {
                    max_intra = max_intra.max(d[[i, j]]);
                } else {
                    min_inter = min_inter.min(d[[i, j]]);
                }
            }
        }
        assert!(
            max_intra < 0.3 && min_inter > 0.3,
            "instance not separable at eps 0.3: intra {max_intra}, inter {min_inter}"
        );

        let a = dbscan(&d, 0.3, 4);
        assert_eq!(a.num_clusters(), 5);
        assert_eq!(a.noise_count(), 0);
        let f1 = crate::metrics::pairwise_f1(&a, &truth);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn large_shift_splits_an_identity_under_fixed_eps() {
        let spec = SynthSpec {
            clothing_conditions: 2,
            sequences_per_identity: 16,
            intra_spread: 0.02,
            clothing_shift: 0.9,
            ..tight_spec()
        };
        let (features, truth) = gen_embeddings(&spec).unwrap();
        let d = pairwise_distance(&features).unwrap();
        let a = dbscan(&d, 0.25, 3);
        // At least one identity must land in two or more clusters.
        let mut split = false;
        for id in 0..spec.num_identities {
            let clusters: std::collections::BTreeSet<usize> = (0..truth.num_samples())
                .filter(|&i| truth.identities[i] == id)
                .filter_map(|i| a.label(i).cluster())
                .collect();
            if clusters.len() >= 2 {
                split = true;
            }
        }
        assert!(split, "expected the clothing shift to split an identity");
    }

    #[test]
    fn true_centroids_approach_anchors_with_many_samples() {
        let spec = SynthSpec {
            num_identities: 3,
            sequences_per_identity: 120,
            clothing_conditions: 1,
            intra_spread: 0.05,
            clothing_shift: 0.0,
            embed_dim: 16,
            frames_per_sequence: 4,
            seed: 9,
        };
        let (_, truth) = gen_embeddings(&spec).unwrap();
        // Anchors are re-derived from the same identity streams.
        for id in 0..3 {
            let mut rng = identity_rng(spec.seed, id);
            let anchor = normalize(gaussian_direction(&mut rng, spec.embed_dim));
            let centroid = truth.true_centroids[id].as_ref().unwrap();
            let cos = anchor.dot(centroid);
            assert!(cos > 0.995, "identity {id}: cos(anchor, centroid) = {cos}");
        }
    }

    #[test]
    fn silhouettes_are_seed_deterministic() {
        let spec = SynthSpec {
            num_identities: 2,
            sequences_per_identity: 2,
            frames_per_sequence: 4,
            ..tight_spec()
        };
        let (s1, _) = gen_silhouettes(&spec).unwrap();
        let (s2, _) = gen_silhouettes(&spec).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn base_mode_sequences_differ_only_by_phase() {
        let spec = SynthSpec {
            num_identities: 2,
            sequences_per_identity: 3,
            clothing_conditions: 1,
            frames_per_sequence: 6,
            ..tight_spec()
        };
        let (seqs, truth) = gen_silhouettes(&spec).unwrap();
        assert!(truth.clothing.iter().all(|&c| c == 0));
        // Same canvas, same identity geometry: total foreground per frame
        // stays in a narrow band across sequences of one identity.
        let counts: Vec<usize> = seqs[0]
            .frames()
            .iter()
            .map(|f| f.foreground_count())
            .collect();
        assert!(counts.iter().all(|&c| c > 100));
    }

    #[test]
    fn thickened_mode_adds_body_pixels_only() {
        let spec = SynthSpec {
            num_identities: 2,
            sequences_per_identity: 4,
            clothing_conditions: 2,
            frames_per_sequence: 5,
            ..tight_spec()
        };
        let (seqs, truth) = gen_silhouettes(&spec).unwrap();
        // Sequence 3 wears the thickened mode and reuses sequence 2's
        // stride phase, so the pair is directly comparable.
        assert_eq!(truth.clothing[2], 0);
        assert_eq!(truth.clothing[3], 1);
        let p = partition_rows(CANVAS_H);
        for (base, thick) in seqs[2].frames().iter().zip(seqs[3].frames()) {
            let body_base = base.foreground_count_rows(p.body_rows.clone());
            let body_thick = thick.foreground_count_rows(p.body_rows.clone());
            assert!(body_thick > body_base);
            for r in p.head_rows.clone().chain(p.legs_rows.clone()) {
                for c in 0..CANVAS_W {
                    assert_eq!(base.get(r, c), thick.get(r, c), "row {r} col {c}");
                }
            }
        }
    }

    #[test]
    fn embedding_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tight_spec();
        let (features, truth) = gen_embeddings(&spec).unwrap();
        let sample_ids: Vec<String> = (0..truth.num_samples()).map(|i| format!("s{i}")).collect();
        let ds = EmbeddingDataset {
            sample_ids,
            features,
            truth,
        };
        let path = dir.path().join("data");
        save_embedding_dataset(&ds, &path).unwrap();
        assert!(is_embedding_dataset(&path));
        let back = load_embedding_dataset(&path).unwrap();
        assert_eq!(back.sample_ids, ds.sample_ids);
        assert_eq!(back.features.data(), ds.features.data());
        assert_eq!(back.truth.identities, ds.truth.identities);
    }

    #[test]
    fn silhouette_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            num_identities: 2,
            sequences_per_identity: 2,
            frames_per_sequence: 3,
            ..tight_spec()
        };
        let (sequences, truth) = gen_silhouettes(&spec).unwrap();
        let ds = SilhouetteDataset { sequences, truth };
        let path = dir.path().join("data");
        save_silhouette_dataset(&ds, &path).unwrap();
        assert!(!is_embedding_dataset(&path));
        let back = load_silhouette_dataset(&path).unwrap();
        assert_eq!(back.sequences, ds.sequences);
        assert_eq!(back.truth.identities, ds.truth.identities);
        assert_eq!(back.truth.clothing, ds.truth.clothing);
    }
}
