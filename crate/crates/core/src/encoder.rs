//! A small trainable embedding network over gait-energy inputs.
//!
//! Two affine layers with a relu in between, followed by L2 row
//! normalization. Gradients are analytic; training state is a plain Adam
//! optimizer with decoupled weight decay and milestone learning-rate
//! decay. The teacher copy shares shapes with the student and moves only
//! through [`ema_update`].

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use std::path::Path;
use thiserror::Error;

use crate::silhouette::SilhouetteSequence;
use crate::tensorfile::{TensorFile, TensorFileError};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty sequence has no gait-energy input")]
    EmptySequence,
    #[error("input length {got} does not match encoder input width {want}")]
    InputWidthMismatch { got: usize, want: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0} (divergence)")]
    NonFinite(&'static str),
    #[error("zero-norm embedding cannot be normalized")]
    ZeroNorm,
    #[error("momentum {0} outside [0, 1]")]
    BadMomentum(f64),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] TensorFileError),
    #[error("embedding rows must be unit-norm (row {row} has norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },
}

/// Flattened mean-over-frames silhouette, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitEnergyInput {
    pub values: Vec<f64>,
}

/// Mean occupancy per pixel over all frames of a sequence.
pub fn gei(seq: &SilhouetteSequence) -> Result<GaitEnergyInput, EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let (h, w) = seq.frame_size();
    let mut values = vec![0.0; h * w];
    for frame in seq.frames() {
        for (acc, &p) in values.iter_mut().zip(frame.pixels()) {
            *acc += p as f64;
        }
    }
    let n = seq.len() as f64;
    for v in &mut values {
        *v /= n;
    }
    Ok(GaitEnergyInput { values })
}

/// Per-sample unit-length feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Wrap a matrix, checking every row is unit-norm within 1e-6.
    pub fn new(rows: Array2<f64>) -> Result<Self, EncoderError> {
        for (i, row) in rows.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(EncoderError::NonUnitRow { row: i, norm });
            }
        }
        Ok(Self { rows })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    /// Select a subset of rows by index (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: self.rows.select(Axis(0), indices),
        }
    }
}

/// Student or teacher parameters: two affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// input -> hidden weights, shape (input, hidden)
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// hidden -> embedding weights, shape (hidden, embed)
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EncoderParams {
    /// Seeded uniform init in +-1/sqrt(fan_in) per layer.
    pub fn init<R: Rng>(input: usize, hidden: usize, embed: usize, rng: &mut R) -> Self {
        let lim1 = 1.0 / (input as f64).sqrt();
        let lim2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Array2::from_shape_fn((input, hidden), |_| rng.gen_range(-lim1..lim1));
        let b1 = Array1::from_shape_fn(hidden, |_| rng.gen_range(-lim1..lim1));
        let w2 = Array2::from_shape_fn((hidden, embed), |_| rng.gen_range(-lim2..lim2));
        let b2 = Array1::from_shape_fn(embed, |_| rng.gen_range(-lim2..lim2));
        Self { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.b1.dim() == other.b1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.b2.dim() == other.b2.dim()
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        self.to_tensorfile().save(path)?;
        Ok(())
    }

    pub fn to_tensorfile(&self) -> TensorFile {
        let mut tf = TensorFile::new();
        tf.insert(
            "w1",
            vec![self.w1.nrows(), self.w1.ncols()],
            self.w1.iter().cloned().collect(),
        );
        tf.insert("b1", vec![self.b1.len()], self.b1.to_vec());
        tf.insert(
            "w2",
            vec![self.w2.nrows(), self.w2.ncols()],
            self.w2.iter().cloned().collect(),
        );
        tf.insert("b2", vec![self.b2.len()], self.b2.to_vec());
        tf
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let tf = TensorFile::load(path)?;
        Self::from_tensorfile(&tf)
    }

    pub fn from_tensorfile(tf: &TensorFile) -> Result<Self, EncoderError> {
        let w1e = tf.get("w1")?;
        if w1e.shape.len() != 2 {
            return Err(EncoderError::ShapeMismatch("w1 must be 2-d".into()));
        }
        let (input, hidden) = (w1e.shape[0], w1e.shape[1]);
        let w1 = Array2::from_shape_vec((input, hidden), w1e.data.clone())
            .map_err(|e| EncoderError::ShapeMismatch(e.to_string()))?;
        let b1 = Array1::from_vec(tf.get_shaped("b1", &[hidden])?.data.clone());
        let w2e = tf.get("w2")?;
        if w2e.shape.len() != 2 || w2e.shape[0] != hidden {
            return Err(EncoderError::ShapeMismatch(format!(
                "w2 shape {:?} does not chain after hidden width {hidden}",
                w2e.shape
            )));
        }
        let embed = w2e.shape[1];
        let w2 = Array2::from_shape_vec((hidden, embed), w2e.data.clone())
            .map_err(|e| EncoderError::ShapeMismatch(e.to_string()))?;
        let b2 = Array1::from_vec(tf.get_shaped("b2", &[embed])?.data.clone());
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Text digest of the checkpoint for diffing.
    pub fn digest(&self) -> String {
        self.to_tensorfile().digest()
    }
}

/// Pre-normalization activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    raw_out: Array2<f64>,
    norms: Array1<f64>,
}

/// Parameter gradients with the same shapes as [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            w1: Array2::zeros(params.w1.dim()),
            b1: Array1::zeros(params.b1.dim()),
            w2: Array2::zeros(params.w2.dim()),
            b2: Array1::zeros(params.b2.dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }
}

/// Embed a batch: `normalize(w2 . relu(w1 . x + b1) + b2)` per row.
pub fn forward(
    params: &EncoderParams,
    batch: &[GaitEnergyInput],
) -> Result<(EmbeddingMatrix, ForwardCache), EncoderError> {
    let input_dim = params.input_dim();
    for x in batch {
        if x.values.len() != input_dim {
            return Err(EncoderError::InputWidthMismatch {
                got: x.values.len(),
                want: input_dim,
            });
        }
    }
    let n = batch.len();
    let mut inputs = Array2::zeros((n, input_dim));
    for (i, x) in batch.iter().enumerate() {
        inputs.row_mut(i).assign(&Array1::from_vec(x.values.clone()));
    }
    let hidden_pre = inputs.dot(&params.w1) + &params.b1;
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let raw_out = hidden.dot(&params.w2) + &params.b2;

    let mut rows = raw_out.clone();
    let mut norms = Array1::zeros(n);
    for (i, mut row) in rows.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(EncoderError::NonFinite("forward output"));
        }
        if norm == 0.0 {
            return Err(EncoderError::ZeroNorm);
        }
        row.mapv_inplace(|v| v / norm);
        norms[i] = norm;
    }
    let embeddings = EmbeddingMatrix { rows };
    let cache = ForwardCache {
        inputs,
        hidden_pre,
        hidden,
        raw_out,
        norms,
    };
    Ok((embeddings, cache))
}

/// Exact gradients through normalization, both affine layers and the relu.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_embeddings: &Array2<f64>,
) -> Result<EncoderGrads, EncoderError> {
    let n = cache.inputs.nrows();
    if grad_embeddings.dim() != (n, params.embed_dim()) {
        return Err(EncoderError::ShapeMismatch(format!(
            "upstream gradient is {:?}, expected ({n}, {})",
            grad_embeddings.dim(),
            params.embed_dim()
        )));
    }
    // d(z/|z|)/dz applied to upstream g: (g - (g.f) f) / |z| with f = z/|z|.
    let mut grad_raw = Array2::zeros(cache.raw_out.dim());
    for i in 0..n {
        let z = cache.raw_out.row(i);
        let norm = cache.norms[i];
        let f = z.mapv(|v| v / norm);
        let g = grad_embeddings.row(i);
        let dot = g.dot(&f);
        let gr = (&g - &(&f * dot)) / norm;
        grad_raw.row_mut(i).assign(&gr);
    }
    let grad_w2 = cache.hidden.t().dot(&grad_raw);
    let grad_b2 = grad_raw.sum_axis(Axis(0));
    let grad_hidden = grad_raw.dot(&params.w2.t());
    let relu_mask = cache.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let grad_hidden_pre = grad_hidden * relu_mask;
    let grad_w1 = cache.inputs.t().dot(&grad_hidden_pre);
    let grad_b1 = grad_hidden_pre.sum_axis(Axis(0));
    Ok(EncoderGrads {
        w1: grad_w1,
        b1: grad_b1,
        w2: grad_w2,
        b2: grad_b2,
    })
}

/// Adam moments plus the step schedule.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step counts at which the learning rate is multiplied by 0.1.
    pub milestones: Vec<usize>,
    pub step: usize,
    m: EncoderGrads,
    v: EncoderGrads,
}

impl AdamState {
    pub fn new(params: &EncoderParams, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            milestones: Vec::new(),
            step: 0,
            m: EncoderGrads::zeros_like(params),
            v: EncoderGrads::zeros_like(params),
        }
    }

    pub fn with_milestones(mut self, milestones: Vec<usize>) -> Self {
        self.milestones = milestones;
        self
    }

    /// Learning rate in effect for 1-based step `step`: decayed by 0.1 at
    /// each milestone already reached.
    pub fn effective_lr(&self, step: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| step >= m).count();
        self.learning_rate * 0.1f64.powi(hits as i32)
    }
}

/// One Adam step with decoupled weight decay. Mutates params and state.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut AdamState,
) -> Result<(), EncoderError> {
    if !grads.is_finite() {
        return Err(EncoderError::NonFinite("gradient"));
    }
    if grads.w1.dim() != params.w1.dim()
        || grads.b1.dim() != params.b1.dim()
        || grads.w2.dim() != params.w2.dim()
        || grads.b2.dim() != params.b2.dim()
    {
        return Err(EncoderError::ShapeMismatch(
            "gradient shapes do not mirror parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step;
    let lr = state.effective_lr(t);
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    let update = |p: &mut Array2<f64>, g: &Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>| {
        azip_update(
            p.as_slice_mut().unwrap(),
            g.as_slice().unwrap(),
            m.as_slice_mut().unwrap(),
            v.as_slice_mut().unwrap(),
            state.beta1,
            state.beta2,
            bc1,
            bc2,
            lr,
            state.weight_decay,
            state.epsilon,
        );
    };
    update(&mut params.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1);
    update(&mut params.w2, &grads.w2, &mut state.m.w2, &mut state.v.w2);
    azip_update(
        params.b1.as_slice_mut().unwrap(),
        grads.b1.as_slice().unwrap(),
        state.m.b1.as_slice_mut().unwrap(),
        state.v.b1.as_slice_mut().unwrap(),
        state.beta1,
        state.beta2,
        bc1,
        bc2,
        lr,
        state.weight_decay,
        state.epsilon,
    );
    azip_update(
        params.b2.as_slice_mut().unwrap(),
        grads.b2.as_slice().unwrap(),
        state.m.b2.as_slice_mut().unwrap(),
        state.v.b2.as_slice_mut().unwrap(),
        state.beta1,
        state.beta2,
        bc1,
        bc2,
        lr,
        state.weight_decay,
        state.epsilon,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    weight_decay: f64,
    epsilon: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * p[i]);
    }
}

/// Move the teacher toward the student: `t <- gamma * t + (1 - gamma) * s`.
pub fn ema_update(
    student: &EncoderParams,
    teacher: &EncoderParams,
    gamma: f64,
) -> Result<EncoderParams, EncoderError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(EncoderError::BadMomentum(gamma));
    }
    if !student.same_shape(teacher) {
        return Err(EncoderError::ShapeMismatch(
            "student and teacher shapes differ".into(),
        ));
    }
    Ok(EncoderParams {
        w1: gamma * &teacher.w1 + (1.0 - gamma) * &student.w1,
        b1: gamma * &teacher.b1 + (1.0 - gamma) * &student.b1,
        w2: gamma * &teacher.w2 + (1.0 - gamma) * &student.w2,
        b2: gamma * &teacher.b2 + (1.0 - gamma) * &student.b2,
    })
}
