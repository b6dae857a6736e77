//! Autoregressive generator of visit-sequence matrices: a causal
//! transformer over visit rows combined with a masked code-level head, so
//! each code's probability conditions on the full visit history plus the
//! earlier codes of its own row.

mod checkpoint;
mod sample;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use sample::sample_records;
pub use train::{train, write_trace_csv, TraceRow, TrainReport};

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, RecordMatrix};
use crate::error::{Error, Result};
use crate::fairness::objective_from_name;
use crate::nn::math;
use crate::nn::tape::Tensor;
use crate::nn::{DecoderBlock, Linear};

pub(crate) const PROB_EPS: f64 = 1e-7;
const INIT_STD: f64 = 0.02;

/// Generator hyperparameters and training settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// Hard cap on matrix rows (visits plus the two marker rows).
    pub t_max: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Records sampled per feedback probe.
    pub sample_batch_size: usize,
    /// Weight of the fairness arm; zero trains on cross-entropy alone.
    pub lambda: f64,
    pub fairness_objective: String,
    /// Refresh the downstream feedback scalar every this many epochs;
    /// zero disables feedback.
    pub feedback_period: usize,
    pub epochs: usize,
    pub sensitive_attribute: String,
    /// When set, a positive feedback scalar replaces the surrogate term
    /// verbatim in the optimized loss instead of rescaling it, so the
    /// fairness arm contributes no gradient while feedback is active.
    pub literal_feedback: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_layers: 2,
            n_heads: 4,
            embed_dim: 128,
            t_max: 24,
            learning_rate: 1e-4,
            batch_size: 10,
            sample_batch_size: 25,
            lambda: 1.2,
            fairness_objective: "di".to_string(),
            feedback_period: 0,
            epochs: 1,
            sensitive_attribute: "ethnicity".to_string(),
            literal_feedback: false,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.batch_size == 0
            || self.sample_batch_size == 0
            || self.epochs == 0
        {
            return Err(Error::Config("generator sizes must be positive".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be non-negative".into()));
        }
        if self.t_max < 3 {
            return Err(Error::Config("t_max must allow at least one visit".into()));
        }
        objective_from_name(&self.fairness_objective)?;
        Ok(())
    }
}

/// Masked two-layer code head. Hidden-unit degrees cycle over `1..C`, the
/// input mask admits code `k` into units of degree above `k`, and the
/// output mask lets code `j`'s logit read only units of degree at most
/// `j` — together logits respect the vocabulary-index code ordering.
pub(crate) struct MadeHead {
    pub w1: Tensor,
    pub u1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub u2: Tensor,
    pub b2: Tensor,
    pub mask1: Array2<f64>,
    pub mask2: Array2<f64>,
    pub hidden: usize,
}

impl MadeHead {
    fn new(c_total: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        assert!(c_total >= 2);
        let hidden = embed_dim.max(c_total);
        let degrees: Vec<usize> = (0..hidden).map(|u| (u % (c_total - 1)) + 1).collect();
        let mask1 = Array2::from_shape_fn((c_total, hidden), |(k, u)| {
            (degrees[u] >= k + 1) as usize as f64
        });
        let mask2 = Array2::from_shape_fn((hidden, c_total), |(u, j)| {
            (degrees[u] <= j) as usize as f64
        });
        let dist = rand_distr::Normal::new(0.0, INIT_STD).unwrap();
        MadeHead {
            w1: Tensor::param(Array2::from_shape_fn((c_total, hidden), |_| dist.sample(rng))),
            u1: Tensor::param(Array2::from_shape_fn((embed_dim, hidden), |_| dist.sample(rng))),
            b1: Tensor::param(Array2::zeros((1, hidden))),
            w2: Tensor::param(Array2::zeros((hidden, c_total))),
            u2: Tensor::param(Array2::zeros((embed_dim, c_total))),
            b2: Tensor::param(Array2::zeros((1, c_total))),
            mask1,
            mask2,
            hidden,
        }
    }

    fn forward(&self, h: &Tensor, x_next: &Tensor) -> Tensor {
        let w1m = self.w1.mul(&Tensor::constant(self.mask1.clone()));
        let w2m = self.w2.mul(&Tensor::constant(self.mask2.clone()));
        let hidden = x_next
            .matmul(&w1m)
            .add(&h.matmul(&self.u1))
            .add_row(&self.b1)
            .relu();
        hidden.matmul(&w2m).add(&h.matmul(&self.u2)).add_row(&self.b2)
    }

    fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.u1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.u2.clone(),
            self.b2.clone(),
        ]
    }
}

/// The trained generator: visit embedding, learned positions, causal
/// decoder stack, and the masked code head, plus the empirical row-0 pool
/// gathered during training for sampling bootstraps.
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub vocab_hash: String,
    pub(crate) c_total: usize,
    pub(crate) visit_embedding: Linear,
    pub(crate) pos_embedding: Tensor,
    pub(crate) blocks: Vec<DecoderBlock>,
    pub(crate) head: MadeHead,
    /// (group value, row-0 set bits) per training record.
    pub(crate) row0_pool: Vec<(String, BTreeSet<usize>)>,
}

impl GeneratorModel {
    pub fn new(vocab: &CodeVocabulary, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::with_dimensions(vocab.hash(), vocab.len(), config))
    }

    pub(crate) fn with_dimensions(
        vocab_hash: String,
        c_total: usize,
        config: GeneratorConfig,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let e = config.embed_dim;
        let dist = rand_distr::Normal::new(0.0, INIT_STD).unwrap();
        let visit_embedding = Linear::new(c_total, e, INIT_STD, &mut rng);
        let pos_embedding =
            Tensor::param(Array2::from_shape_fn((config.t_max, e), |_| dist.sample(&mut rng)));
        let blocks = (0..config.n_layers)
            .map(|_| DecoderBlock::new(e, config.n_heads, true, INIT_STD, &mut rng))
            .collect();
        let head = MadeHead::new(c_total, e, &mut rng);
        GeneratorModel {
            config,
            vocab_hash,
            c_total,
            visit_embedding,
            pos_embedding,
            blocks,
            head,
            row0_pool: Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut params = self.visit_embedding.params();
        params.push(self.pos_embedding.clone());
        for b in &self.blocks {
            params.extend(b.params());
        }
        params.extend(self.head.params());
        params
    }

    /// Named parameter tensors, stable across runs, for checkpointing.
    pub(crate) fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), self.visit_embedding.params()[0].clone()),
            ("embed.b".to_string(), self.visit_embedding.params()[1].clone()),
            ("pos".to_string(), self.pos_embedding.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, p) in b.params().into_iter().enumerate() {
                out.push((format!("block{i}.p{j}"), p));
            }
        }
        for (name, p) in ["head.w1", "head.u1", "head.b1", "head.w2", "head.u2", "head.b2"]
            .iter()
            .zip(self.head.params())
        {
            out.push((name.to_string(), p));
        }
        out
    }

    /// Per-row next-row code probabilities on the tape. Row `t` of the
    /// result predicts input row `t+1` from rows up to `t` plus the true
    /// codes of row `t+1` at indices below each predicted code.
    pub fn forward(&self, matrix: &RecordMatrix) -> Result<Tensor> {
        let t = matrix.values.nrows();
        if t > self.config.t_max {
            return Err(Error::HorizonExceeded {
                id: matrix.patient_id.clone(),
                n_visits: t.saturating_sub(2),
                max: self.config.t_max.saturating_sub(2),
            });
        }
        if matrix.values.ncols() != self.c_total {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} columns, model expects {}",
                matrix.values.ncols(),
                self.c_total
            )));
        }
        let ctx = Tensor::constant(matrix.values.slice(ndarray::s![..t - 1, ..]).to_owned());
        let x_next = Tensor::constant(matrix.values.slice(ndarray::s![1.., ..]).to_owned());
        let mut h = self
            .visit_embedding
            .forward(&ctx)
            .add(&self.pos_embedding.slice_rows(0, t - 1));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        Ok(self.head.forward(&h, &x_next).sigmoid())
    }

    /// Transformer states for the given context rows, without a tape.
    pub(crate) fn context_states_plain(&self, rows: &Array2<f64>) -> Array2<f64> {
        let t = rows.nrows();
        let pos = self.pos_embedding.value();
        let mut h = self.visit_embedding.forward_plain(rows)
            + pos.slice(ndarray::s![..t, ..]).to_owned();
        for b in &self.blocks {
            h = b.forward_plain(&h);
        }
        h
    }
}

/// Causally masked scaled dot-product attention over one head: row `i` of
/// the output mixes value rows `0..=i` only.
pub fn masked_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<Array2<f64>> {
    let t = q.nrows();
    let d_k = q.ncols();
    if k.dim() != (t, d_k) || v.nrows() != t {
        return Err(Error::ShapeMismatch(format!(
            "attention inputs disagree: Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let scores = q.dot(&k.t()) / (d_k as f64).sqrt();
    let weights = math::causal_softmax(&scores);
    Ok(weights.dot(v))
}

/// Shifted training targets: values and mask rows `1..`, aligned with the
/// forward pass's prediction rows.
pub fn shifted_targets(matrix: &RecordMatrix) -> (Array2<f64>, Array2<f64>) {
    (
        matrix.values.slice(ndarray::s![1.., ..]).to_owned(),
        matrix.mask.slice(ndarray::s![1.., ..]).to_owned(),
    )
}

/// Mean binary cross-entropy over the masked positions, on the tape.
/// Probabilities are clamped away from 0 and 1 before the logarithms.
pub fn bce_loss(p: &Tensor, targets: &Array2<f64>, mask: &Array2<f64>) -> Tensor {
    assert_eq!(p.shape(), targets.dim(), "probability/target shapes differ");
    assert_eq!(targets.dim(), mask.dim(), "target/mask shapes differ");
    let mask_sum = mask.sum().max(1.0);
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let y = Tensor::constant(targets.clone());
    let one_minus_y = Tensor::constant(targets.mapv(|v| 1.0 - v));
    let pos = pc.ln().mul(&y);
    let neg = pc.scale(-1.0).add_scalar(1.0).ln().mul(&one_minus_y);
    pos.add(&neg)
        .mul(&Tensor::constant(mask.clone()))
        .sum_all()
        .scale(-1.0 / mask_sum)
}

/// The same quantity as a pure function, for evaluation and as an oracle.
pub fn bce_value(p: &Array2<f64>, targets: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if mask[[i, j]] == 0.0 {
                continue;
            }
            let pc = p[[i, j]].clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y = targets[[i, j]];
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            count += mask[[i, j]];
        }
    }
    total / count.max(1.0)
}

/// The composite loss exactly as reported: cross-entropy plus the weighted
/// feedback scalar when feedback is positive, otherwise plus the weighted
/// surrogate.
pub fn total_loss(l_bce: f64, l_f: f64, l_df: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    Ok(if l_df > 0.0 {
        l_bce + lambda * l_df
    } else {
        l_bce + lambda * l_f
    })
}
