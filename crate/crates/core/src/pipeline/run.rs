//! The training loop: supervised pre-training stand-in, the fine-tuning
//! loop, and the ablation harness.
//!
//! Each fine-tuning epoch re-extracts all features with the student,
//! clusters them at the scheduled radius, builds the centroid bank
//! (weighted or plain), then runs identity-balanced batches: student
//! forward, label refinement, teacher guidance, soft InfoNCE, Adam step,
//! teacher EMA, and per-sample bank momentum updates, in that order.
//! Noise-labeled samples never enter batches. Everything is driven by
//! seed-split ChaCha streams, so a (config, seed) pair maps to one
//! bit-exact trajectory.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clustering::{
    cluster_weights, dbscan, density_distance, pairwise_distance, ClusterAssignment,
    ClusteringError, DcpSchedule,
};
use crate::encoder::{
    adam_step, backward, ema_update, forward, gei, AdamState, EmbeddingMatrix, EncoderError,
    EncoderParams, GaitEnergyInput,
};
use crate::labels::{
    confidence_matrix, ctm_probabilities, fuse, latent_cluster_set, refine_cpr, LabelError,
    SoftLabel,
};
use crate::loss::{infonce_hard, infonce_soft, LossError};
use crate::membank::{MemBankError, MemoryBank};
use crate::metrics::{
    centroid_mse, inject_label_noise, label_accuracy, noise_fraction, pairwise_f1, rank1,
    true_centroids_from_clustering, EvalReport, MetricsError,
};
use crate::pipeline::config::{ConfigError, RunConfig, Toggles};
use crate::silhouette::{augment_sequence_with, AugmentMode, SilhouetteError};
use crate::synthgen::{GroundTruth, SilhouetteDataset, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("encoder: {0}")]
    Encoder(#[from] EncoderError),
    #[error("clustering: {0}")]
    Clustering(#[from] ClusteringError),
    #[error("memory bank: {0}")]
    Bank(#[from] MemBankError),
    #[error("labels: {0}")]
    Labels(#[from] LabelError),
    #[error("loss: {0}")]
    Loss(#[from] LossError),
    #[error("synthetic data: {0}")]
    Synth(#[from] SynthError),
    #[error("silhouettes: {0}")]
    Silhouette(#[from] SilhouetteError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error("encoder input width {params} does not match frame size {data}")]
    InputMismatch { params: usize, data: usize },
}

// Seed-split stream tags.
const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_AUGMENT: u64 = 4;
const STREAM_PROBE: u64 = 5;

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gait-energy inputs for every sequence, with the two augmented variants
/// cached when the teacher branch needs them. A mode draw plus a cache
/// lookup is exactly equivalent to augmenting and re-averaging, because
/// the morphology pass is deterministic given the mode.
struct PreparedData {
    geis: Vec<GaitEnergyInput>,
    dilated: Vec<GaitEnergyInput>,
    eroded: Vec<GaitEnergyInput>,
}

fn prepare(data: &SilhouetteDataset, need_augmented: bool) -> Result<PreparedData, PipelineError> {
    if data.sequences.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let geis = data
        .sequences
        .iter()
        .map(gei)
        .collect::<Result<Vec<_>, _>>()?;
    let (mut dilated, mut eroded) = (Vec::new(), Vec::new());
    if need_augmented {
        for seq in &data.sequences {
            dilated.push(gei(&augment_sequence_with(seq, AugmentMode::Dilate))?);
            eroded.push(gei(&augment_sequence_with(seq, AugmentMode::Erode))?);
        }
    }
    Ok(PreparedData {
        geis,
        dilated,
        eroded,
    })
}

/// Run the encoder over a full input list in fixed-size chunks.
pub fn extract_features(
    params: &EncoderParams,
    inputs: &[GaitEnergyInput],
) -> Result<EmbeddingMatrix, PipelineError> {
    let n = inputs.len();
    let mut rows = Array2::zeros((n, params.embed_dim()));
    let chunk = 256;
    let mut offset = 0;
    while offset < n {
        let end = (offset + chunk).min(n);
        let (emb, _) = forward(params, &inputs[offset..end])?;
        rows.slice_mut(s![offset..end, ..]).assign(emb.data());
        offset = end;
    }
    Ok(EmbeddingMatrix::new(rows)?)
}

/// Deterministic per-identity split: first ceil(n/2) samples of each
/// identity form the gallery, the rest the probes.
pub fn probe_gallery_split(truth: &GroundTruth) -> (Vec<usize>, Vec<usize>) {
    let mut by_identity: Vec<Vec<usize>> = vec![Vec::new(); truth.num_identities()];
    for (i, &id) in truth.identities.iter().enumerate() {
        by_identity[id].push(i);
    }
    let mut gallery = Vec::new();
    let mut probe = Vec::new();
    for members in by_identity {
        let half = members.len().div_ceil(2);
        gallery.extend_from_slice(&members[..half]);
        probe.extend_from_slice(&members[half..]);
    }
    (gallery, probe)
}

/// Identity-balanced batch: up to `p` distinct non-empty clusters, `k`
/// samples each (with replacement when a cluster is smaller than `k`).
fn sample_batch<R: Rng>(
    members: &[Vec<usize>],
    p: usize,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let nonempty: Vec<usize> = (0..members.len())
        .filter(|&c| !members[c].is_empty())
        .collect();
    let take = p.min(nonempty.len());
    let mut cluster_pool = nonempty;
    cluster_pool.shuffle(rng);
    cluster_pool.truncate(take);
    let mut batch = Vec::with_capacity(take * k);
    for &c in &cluster_pool {
        let m = &members[c];
        if m.len() >= k {
            let mut pool = m.clone();
            pool.shuffle(rng);
            batch.extend_from_slice(&pool[..k]);
        } else {
            for _ in 0..k {
                batch.push(m[rng.gen_range(0..m.len())]);
            }
        }
    }
    batch
}

/// One epoch's log entry.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub num_clusters: usize,
    pub report: EvalReport,
    /// Mean iteration loss; NaN when the epoch was skipped.
    pub mean_loss: f64,
    /// Centroid error of density-weighted init under the measurement-only
    /// noise probe. NaN when not computable.
    pub mse_weighted_probe: f64,
    /// Same probe with plain-average init.
    pub mse_average_probe: f64,
    pub trained: bool,
    pub assignment: ClusterAssignment,
}

/// Everything a fine-tuning run produces besides the parameters.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub config_echo: String,
    pub epochs: Vec<EpochRecord>,
    /// (epoch, iteration, loss) for every optimizer step.
    pub losses: Vec<(usize, usize, f64)>,
    pub wall_ms: u128,
    pub trace: Option<Trace>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

impl RunLog {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "epoch,epsilon,clusters,noise_fraction,pairwise_f1,centroid_mse,rank1,\
             label_accuracy,mean_loss,mse_weighted_probe,mse_average_probe,trained\n",
        );
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                fmt_f64(e.epsilon),
                e.num_clusters,
                fmt_f64(e.report.noise_fraction),
                fmt_f64(e.report.pairwise_f1),
                fmt_f64(e.report.centroid_mse),
                fmt_f64(e.report.rank1),
                fmt_f64(e.report.label_accuracy),
                fmt_f64(e.mean_loss),
                fmt_f64(e.mse_weighted_probe),
                fmt_f64(e.mse_average_probe),
                e.trained as u8,
            );
        }
        out
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,iteration,loss\n");
        for (epoch, iter, loss) in &self.losses {
            let _ = writeln!(out, "{epoch},{iter},{}", fmt_f64(*loss));
        }
        out
    }

    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Mean of the per-epoch active-bank centroid errors, ignoring NaN.
    pub fn mean_centroid_mse(&self) -> f64 {
        let finite: Vec<f64> = self
            .epochs
            .iter()
            .map(|e| e.report.centroid_mse)
            .filter(|v| v.is_finite())
            .collect();
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        }
    }
}

/// Transcript hooks for equivalence checks against standalone formula
/// implementations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Off,
    Full,
}

#[derive(Debug, Clone)]
pub struct TraceEpoch {
    pub epoch: usize,
    pub features: Array2<f64>,
    pub assignment: ClusterAssignment,
    pub init_centroids: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TraceIteration {
    pub epoch: usize,
    pub iteration: usize,
    pub batch: Vec<usize>,
    pub student_features: Array2<f64>,
    /// The soft targets actually fed to the loss.
    pub targets: Array2<f64>,
    pub loss: f64,
    pub bank_after: Array2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub epochs: Vec<TraceEpoch>,
    pub iterations: Vec<TraceIteration>,
}

/// Final parameters plus the log and the last epoch's bank.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub student: EncoderParams,
    pub teacher: EncoderParams,
    pub log: RunLog,
    pub bank: Option<MemoryBank>,
}

/// Supervised pre-training stand-in: hard InfoNCE against true-label
/// centroids for a fixed budget. Returns the parameters used to seed both
/// student and teacher, plus the per-iteration losses.
pub fn pretrain(
    data: &SilhouetteDataset,
    cfg: &RunConfig,
) -> Result<(EncoderParams, Vec<(usize, usize, f64)>), PipelineError> {
    cfg.validate()?;
    if data.sequences.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let (h, w) = data.sequences[0].frame_size();
    let mut init_rng = sub_rng(cfg.seed, STREAM_INIT);
    let mut params = EncoderParams::init(h * w, cfg.hidden_dim, cfg.embed_dim, &mut init_rng);
    if cfg.pretrain_epochs == 0 || cfg.pretrain_iterations == 0 {
        return Ok((params, Vec::new()));
    }
    let prepared = prepare(data, false)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); data.truth.num_identities()];
    for (i, &id) in data.truth.identities.iter().enumerate() {
        members[id].push(i);
    }
    let perfect = ClusterAssignment::new(
        data.truth
            .identities
            .iter()
            .map(|&id| crate::clustering::Label::Cluster(id))
            .collect(),
        data.truth.num_identities(),
        0.0,
    );
    let mut adam = AdamState::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut batch_rng = sub_rng(cfg.seed, STREAM_PRETRAIN);
    let mut losses = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let features = extract_features(&params, &prepared.geis)?;
        let mut bank = MemoryBank::init_average(&features, &perfect)?.with_momentum(cfg.mu);
        for iter in 0..cfg.pretrain_iterations {
            let batch = sample_batch(&members, cfg.batch_p, cfg.batch_k, &mut batch_rng);
            let batch_geis: Vec<GaitEnergyInput> =
                batch.iter().map(|&i| prepared.geis[i].clone()).collect();
            let (f_s, cache) = forward(&params, &batch_geis)?;
            let assigned: Vec<usize> = batch.iter().map(|&i| data.truth.identities[i]).collect();
            let logits = bank.similarity_logits(&f_s, cfg.tau)?;
            let report = infonce_hard(&logits, &assigned, &bank, cfg.tau)?;
            // Uniformity pressure: unlike the temperature-scaled softmax,
            // plain pairwise repulsion between different identities never
            // saturates, so embeddings keep spreading over the sphere.
            let grad_embeddings =
                report.grad_embeddings + uniformity_gradient(&f_s, &assigned, PRETRAIN_UNIFORMITY);
            let grads = backward(&params, &cache, &grad_embeddings)?;
            adam_step(&mut params, &grads, &mut adam)?;
            for (b, &id) in assigned.iter().enumerate() {
                bank.momentum_update(id, f_s.row(b))?;
            }
            losses.push((epoch, iter, report.loss));
        }
    }
    Ok((params, losses))
}

const PRETRAIN_UNIFORMITY: f64 = 0.5;

/// Gradient of `weight * mean cosine similarity over different-identity
/// batch pairs` with respect to the batch embeddings.
fn uniformity_gradient(f_s: &EmbeddingMatrix, assigned: &[usize], weight: f64) -> Array2<f64> {
    let n = f_s.num_rows();
    let mut grad = Array2::zeros((n, f_s.dim()));
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && assigned[i] != assigned[j] {
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return grad;
    }
    let scale = weight / pairs as f64;
    for i in 0..n {
        let mut sum = ndarray::Array1::zeros(f_s.dim());
        for j in 0..n {
            if i != j && assigned[i] != assigned[j] {
                sum = sum + f_s.row(j);
            }
        }
        grad.row_mut(i).assign(&(sum * (2.0 * scale)));
    }
    grad
}

/// The fine-tuning loop over an unlabeled target (labels are read only by
/// the metrics).
pub fn finetune(
    data: &SilhouetteDataset,
    init: &EncoderParams,
    cfg: &RunConfig,
    trace_mode: TraceMode,
) -> Result<FinetuneOutcome, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    if data.sequences.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let (h, w) = data.sequences[0].frame_size();
    if init.input_dim() != h * w {
        return Err(PipelineError::InputMismatch {
            params: init.input_dim(),
            data: h * w,
        });
    }
    let need_aug = cfg.toggles.teacher_labels && cfg.toggles.teacher_augment;
    let prepared = prepare(data, need_aug)?;

    let mut student = init.clone();
    let mut teacher = init.clone();
    let mut adam = AdamState::new(&student, cfg.learning_rate, cfg.weight_decay)
        .with_milestones(cfg.milestones.clone());
    let eta = if cfg.toggles.dynamic_eps { cfg.eta } else { 1.0 };
    let schedule = DcpSchedule::new(cfg.eps0, eta, cfg.decay_mode, cfg.epochs);

    let mut batch_rng = sub_rng(cfg.seed, STREAM_BATCH);
    let mut aug_rng = sub_rng(cfg.seed, STREAM_AUGMENT);
    let mut probe_rng = sub_rng(cfg.seed, STREAM_PROBE);

    let (gallery_idx, probe_idx) = probe_gallery_split(&data.truth);
    let gallery_ids: Vec<usize> = gallery_idx.iter().map(|&i| data.truth.identities[i]).collect();
    let probe_ids: Vec<usize> = probe_idx.iter().map(|&i| data.truth.identities[i]).collect();

    let mut log = RunLog {
        config_echo: cfg.to_config_string(),
        epochs: Vec::new(),
        losses: Vec::new(),
        wall_ms: 0,
        trace: match trace_mode {
            TraceMode::Off => None,
            TraceMode::Full => Some(Trace::default()),
        },
    };
    let mut final_bank: Option<MemoryBank> = None;

    for epoch in 0..cfg.epochs {
        // Clustering stage.
        let features = extract_features(&student, &prepared.geis)?;
        let eps = schedule.eps_at(epoch);
        let distances = pairwise_distance(&features)?;
        let assignment = dbscan(&distances, eps, cfg.min_samples);

        let mut epoch_truth = data.truth.clone();
        epoch_truth.true_centroids =
            true_centroids_from_clustering(&features, &assignment, &data.truth);

        let f1 = pairwise_f1(&assignment, &data.truth);
        let rank = if probe_idx.is_empty() {
            0.0
        } else {
            rank1(
                &features.select(&gallery_idx),
                &gallery_ids,
                &features.select(&probe_idx),
                &probe_ids,
            )?
        };
        let base_report = EvalReport {
            pairwise_f1: f1,
            centroid_mse: f64::NAN,
            rank1: rank,
            label_accuracy: label_accuracy(&assignment, &data.truth),
            noise_fraction: noise_fraction(&assignment),
        };

        if assignment.num_clusters() == 0 {
            // Nothing to train on this epoch; log and move on.
            log.epochs.push(EpochRecord {
                epoch,
                epsilon: eps,
                num_clusters: 0,
                report: base_report,
                mean_loss: f64::NAN,
                mse_weighted_probe: f64::NAN,
                mse_average_probe: f64::NAN,
                trained: false,
                assignment,
            });
            continue;
        }

        let weights = cluster_weights(density_distance(&distances, &assignment)?);
        let bank_weighted = MemoryBank::init_weighted(&features, &weights, &assignment)?;
        let bank_average = MemoryBank::init_average(&features, &assignment)?;

        // Measurement-only probe: centroid error of both init styles under
        // injected label noise, against the correctly-clustered reference.
        let probe_assignment =
            inject_label_noise(&assignment, cfg.mse_probe_noise, &mut probe_rng);
        let (mse_weighted_probe, mse_average_probe) =
            probe_centroid_errors(&features, &distances, &probe_assignment, &epoch_truth);

        let mut bank = if cfg.toggles.weighted_centroids {
            bank_weighted
        } else {
            bank_average
        }
        .with_momentum(cfg.mu);

        let report = EvalReport {
            centroid_mse: centroid_mse(&bank, &assignment, &epoch_truth).unwrap_or(f64::NAN),
            ..base_report
        };

        if let Some(trace) = log.trace.as_mut() {
            trace.epochs.push(TraceEpoch {
                epoch,
                features: features.data().clone(),
                assignment: assignment.clone(),
                init_centroids: bank.centroids().clone(),
            });
        }

        // Training stage.
        let members = assignment.members();
        let num_clusters = assignment.num_clusters();
        let mut epoch_losses = Vec::with_capacity(cfg.iterations);
        for iteration in 0..cfg.iterations {
            let batch = sample_batch(&members, cfg.batch_p, cfg.batch_k, &mut batch_rng);
            let batch_geis: Vec<GaitEnergyInput> =
                batch.iter().map(|&i| prepared.geis[i].clone()).collect();
            let (f_s, cache) = forward(&student, &batch_geis)?;
            let assigned: Vec<usize> = batch
                .iter()
                .map(|&i| assignment.label(i).cluster().unwrap())
                .collect();

            // Label refinement on the student branch.
            let confidence = if cfg.toggles.confidence_refine {
                Some(confidence_matrix(&f_s, &bank))
            } else {
                None
            };

            // Teacher branch on (augmented) inputs.
            let teacher_features = if cfg.toggles.teacher_labels {
                let teacher_inputs: Vec<GaitEnergyInput> = batch
                    .iter()
                    .map(|&i| {
                        if need_aug {
                            if aug_rng.gen::<bool>() {
                                prepared.dilated[i].clone()
                            } else {
                                prepared.eroded[i].clone()
                            }
                        } else {
                            prepared.geis[i].clone()
                        }
                    })
                    .collect();
                let (f_t, _) = forward(&teacher, &teacher_inputs)?;
                Some(f_t)
            } else {
                None
            };

            let mut targets = Array2::zeros((batch.len(), num_clusters));
            for b in 0..batch.len() {
                let mut label = SoftLabel::one_hot(assigned[b], num_clusters);
                if let Some(cm) = &confidence {
                    label = refine_cpr(&label, cm.row(b), cfg.alpha)?;
                }
                if let Some(f_t) = &teacher_features {
                    let entry = latent_cluster_set(f_t.row(b), &bank, cfg.k)?;
                    let p = ctm_probabilities(&entry, num_clusters);
                    label = fuse(&p, &label, cfg.beta)?;
                }
                for (j, &v) in label.probs().iter().enumerate() {
                    targets[[b, j]] = v;
                }
            }

            let logits = bank.similarity_logits(&f_s, cfg.tau)?;
            let report = infonce_soft(&logits, &targets, &bank, cfg.tau)?;
            let grads = backward(&student, &cache, &report.grad_embeddings)?;
            adam_step(&mut student, &grads, &mut adam)?;
            teacher = ema_update(&student, &teacher, cfg.gamma)?;
            for (b, &cluster) in assigned.iter().enumerate() {
                bank.momentum_update(cluster, f_s.row(b))?;
            }

            log.losses.push((epoch, iteration, report.loss));
            epoch_losses.push(report.loss);
            if let Some(trace) = log.trace.as_mut() {
                trace.iterations.push(TraceIteration {
                    epoch,
                    iteration,
                    batch: batch.clone(),
                    student_features: f_s.data().clone(),
                    targets: targets.clone(),
                    loss: report.loss,
                    bank_after: bank.centroids().clone(),
                });
            }
        }

        let mean_loss = if epoch_losses.is_empty() {
            f64::NAN
        } else {
            epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
        };
        log.epochs.push(EpochRecord {
            epoch,
            epsilon: eps,
            num_clusters,
            report,
            mean_loss,
            mse_weighted_probe,
            mse_average_probe,
            trained: !epoch_losses.is_empty(),
            assignment,
        });
        final_bank = Some(bank);
    }

    log.wall_ms = started.elapsed().as_millis();
    Ok(FinetuneOutcome {
        student,
        teacher,
        log,
        bank: final_bank,
    })
}

fn probe_centroid_errors(
    features: &EmbeddingMatrix,
    distances: &Array2<f64>,
    probe_assignment: &ClusterAssignment,
    truth: &GroundTruth,
) -> (f64, f64) {
    let weighted = density_distance(distances, probe_assignment)
        .map(cluster_weights)
        .ok()
        .and_then(|dw| MemoryBank::init_weighted(features, &dw, probe_assignment).ok())
        .and_then(|bank| centroid_mse(&bank, probe_assignment, truth).ok())
        .unwrap_or(f64::NAN);
    let average = MemoryBank::init_average(features, probe_assignment)
        .ok()
        .and_then(|bank| centroid_mse(&bank, probe_assignment, truth).ok())
        .unwrap_or(f64::NAN);
    (weighted, average)
}

/// Rank-1 of a trained encoder on a held-out dataset under the standard
/// per-identity probe/gallery split.
pub fn holdout_rank1(
    params: &EncoderParams,
    eval: &SilhouetteDataset,
) -> Result<f64, PipelineError> {
    let prepared = prepare(eval, false)?;
    let features = extract_features(params, &prepared.geis)?;
    let (gallery_idx, probe_idx) = probe_gallery_split(&eval.truth);
    if probe_idx.is_empty() {
        return Ok(0.0);
    }
    let gallery_ids: Vec<usize> = gallery_idx.iter().map(|&i| eval.truth.identities[i]).collect();
    let probe_ids: Vec<usize> = probe_idx.iter().map(|&i| eval.truth.identities[i]).collect();
    Ok(rank1(
        &features.select(&gallery_idx),
        &gallery_ids,
        &features.select(&probe_idx),
        &probe_ids,
    )?)
}

/// Rank-1 with non-base clothing samples as probes and base-clothing
/// samples as the gallery, the condition-split retrieval protocol.
pub fn clothing_probe_rank1(
    params: &EncoderParams,
    eval: &SilhouetteDataset,
) -> Result<f64, PipelineError> {
    let prepared = prepare(eval, false)?;
    let features = extract_features(params, &prepared.geis)?;
    let probe_idx: Vec<usize> = (0..eval.truth.num_samples())
        .filter(|&i| eval.truth.clothing[i] != 0)
        .collect();
    let gallery_idx: Vec<usize> = (0..eval.truth.num_samples())
        .filter(|&i| eval.truth.clothing[i] == 0)
        .collect();
    if probe_idx.is_empty() {
        return Ok(0.0);
    }
    let gallery_ids: Vec<usize> = gallery_idx.iter().map(|&i| eval.truth.identities[i]).collect();
    let probe_ids: Vec<usize> = probe_idx.iter().map(|&i| eval.truth.identities[i]).collect();
    Ok(rank1(
        &features.select(&gallery_idx),
        &gallery_ids,
        &features.select(&probe_idx),
        &probe_ids,
    )?)
}

/// One ablation row: a named toggle set plus an optional k override.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub name: String,
    pub toggles: Toggles,
    pub k: Option<usize>,
}

/// Component grid shaped like the incremental-component study.
pub fn components_grid() -> Vec<AblationSpec> {
    let mk = |name: &str,
              dynamic_eps: bool,
              weighted_centroids: bool,
              confidence_refine: bool,
              teacher_labels: bool,
              teacher_augment: bool| AblationSpec {
        name: name.to_string(),
        toggles: Toggles {
            dynamic_eps,
            weighted_centroids,
            confidence_refine,
            teacher_labels,
            teacher_augment,
        },
        k: None,
    };
    vec![
        mk("baseline", false, false, false, false, false),
        mk("dynamic_eps", true, false, false, false, false),
        mk("weighted_centroids", false, true, false, false, false),
        mk("clustering_both", true, true, false, false, false),
        mk("confidence_refine", false, false, true, false, false),
        mk("teacher", false, false, false, true, true),
        mk("refine_plus_teacher", false, false, true, true, true),
        mk("all_without_augment", true, true, true, true, false),
        mk("all", true, true, true, true, true),
    ]
}

/// k-sweep grid with every component on.
pub fn k_sweep_grid(ks: &[usize]) -> Vec<AblationSpec> {
    ks.iter()
        .map(|&k| AblationSpec {
            name: format!("k{k}"),
            toggles: Toggles::all_on(),
            k: Some(k),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub k: usize,
    pub final_f1: f64,
    pub final_rank1: f64,
    pub final_label_accuracy: f64,
    pub final_noise_fraction: f64,
    pub mean_centroid_mse: f64,
    pub holdout_rank1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "name,dynamic_eps,weighted_centroids,confidence_refine,teacher_labels,\
             teacher_augment,k,final_f1,final_rank1,final_label_accuracy,\
             final_noise_fraction,mean_centroid_mse,holdout_rank1\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.toggles.dynamic_eps as u8,
                r.toggles.weighted_centroids as u8,
                r.toggles.confidence_refine as u8,
                r.toggles.teacher_labels as u8,
                r.toggles.teacher_augment as u8,
                r.k,
                fmt_f64(r.final_f1),
                fmt_f64(r.final_rank1),
                fmt_f64(r.final_label_accuracy),
                fmt_f64(r.final_noise_fraction),
                fmt_f64(r.mean_centroid_mse),
                r.holdout_rank1.map(fmt_f64).unwrap_or_default(),
            );
        }
        out
    }
}

/// Run one fine-tune per grid row with shared data, seed and
/// initialization; optionally score each run on a held-out dataset.
pub fn ablate(
    data: &SilhouetteDataset,
    eval: Option<&SilhouetteDataset>,
    init: &EncoderParams,
    base: &RunConfig,
    grid: &[AblationSpec],
) -> Result<AblationTable, PipelineError> {
    let mut rows = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut cfg = base.clone();
        cfg.toggles = spec.toggles;
        if let Some(k) = spec.k {
            cfg.k = k;
        }
        let outcome = finetune(data, init, &cfg, TraceMode::Off)?;
        let last = outcome
            .log
            .final_epoch()
            .expect("epochs >= 1 validated");
        let holdout = match eval {
            Some(eval_ds) => Some(holdout_rank1(&outcome.student, eval_ds)?),
            None => None,
        };
        rows.push(AblationRow {
            name: spec.name.clone(),
            toggles: spec.toggles,
            k: cfg.k,
            final_f1: last.report.pairwise_f1,
            final_rank1: last.report.rank1,
            final_label_accuracy: last.report.label_accuracy,
            final_noise_fraction: last.report.noise_fraction,
            mean_centroid_mse: outcome.log.mean_centroid_mse(),
            holdout_rank1: holdout,
        });
    }
    Ok(AblationTable { rows })
}
