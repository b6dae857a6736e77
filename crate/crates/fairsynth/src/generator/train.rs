//! Generator training: composite loss over shuffled record batches, with
//! optional downstream feedback refreshed at epoch boundaries.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_record, Cohort, RecordMatrix};
use crate::downstream::PredictorConfig;
use crate::error::{Error, Result};
use crate::fairness::{
    aggregate_record_probs, di_loss_soft, downstream_feedback, wtpr_surrogate, FairnessObjective,
    FeedbackMetric, GroupLabeling, ObjectiveKind,
};
use crate::nn::tape::{backward, concat_rows};
use crate::nn::Adam;

use super::{bce_loss, sample_records, shifted_targets, total_loss, GeneratorConfig, GeneratorModel};

/// One optimizer step's loss components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_bce: f64,
    pub l_f: f64,
    pub l_df: f64,
    pub l_total: f64,
}

/// Outcome of a training run. `diverged_at` marks the step whose loss went
/// non-finite; the model keeps the last finite parameters and the trace
/// ends just before that step.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub diverged_at: Option<usize>,
}

/// Trains the generator in place and returns the per-step loss trace.
///
/// The optimized objective is the cross-entropy plus `lambda` times the
/// fairness surrogate; while a positive feedback scalar is active the
/// surrogate's weight is rescaled by `1 + l_df` (or, with
/// `literal_feedback`, the surrogate arm is dropped so the feedback term
/// alone is reported). A zero `lambda` never builds the fairness arm, so
/// those runs match a pure cross-entropy run bit for bit.
pub fn train(
    model: &mut GeneratorModel,
    cohort: &Cohort,
    config: &GeneratorConfig,
    objective: &FairnessObjective,
) -> Result<TrainReport> {
    config.validate()?;
    for (field, ours, theirs) in [
        ("n_layers", model.config.n_layers, config.n_layers),
        ("n_heads", model.config.n_heads, config.n_heads),
        ("embed_dim", model.config.embed_dim, config.embed_dim),
        ("t_max", model.config.t_max, config.t_max),
    ] {
        if ours != theirs {
            return Err(Error::Config(format!(
                "config {field} {theirs} does not match the model's {ours}"
            )));
        }
    }
    if cohort.vocabulary.hash() != model.vocab_hash {
        return Err(Error::VocabularyMismatch(
            "training cohort vocabulary differs from the model's".into(),
        ));
    }
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty cohort".into()));
    }
    model.config = config.clone();

    let vocab = &cohort.vocabulary;
    let mats: Vec<RecordMatrix> = cohort
        .records
        .iter()
        .map(|r| encode_record(r, vocab, config.t_max))
        .collect::<Result<_>>()?;

    model.row0_pool = cohort
        .records
        .iter()
        .zip(&mats)
        .map(|(r, m)| {
            let set: BTreeSet<usize> = m
                .values
                .row(0)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.5)
                .map(|(j, _)| j)
                .collect();
            Ok((r.group(&config.sensitive_attribute)?.to_string(), set))
        })
        .collect::<Result<_>>()?;

    let fairness_on = config.lambda > 0.0;
    let (group_idx, k, code_presence) = if fairness_on {
        let labeling = GroupLabeling::from_cohort(&config.sensitive_attribute, cohort)?;
        let presence: Vec<Array2<f64>> = mats
            .iter()
            .map(|m| {
                let c = m.values.ncols();
                let mut row = Array2::zeros((1, c));
                for t in 1..m.values.nrows() {
                    for j in 0..c {
                        if m.values[[t, j]] > 0.5 {
                            row[[0, j]] = 1.0;
                        }
                    }
                }
                row
            })
            .collect();
        (labeling.indices(cohort)?, labeling.k(), presence)
    } else {
        (Vec::new(), 0, Vec::new())
    };

    let params = model.params();
    let mut opt = Adam::new(&params, config.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0bd6_5c8d);
    let mut report = TrainReport::default();
    let mut l_df = 0.0;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        if fairness_on
            && config.feedback_period > 0
            && epoch > 0
            && epoch % config.feedback_period == 0
        {
            l_df = refresh_feedback(model, cohort, config, objective, epoch as u64);
            log::info!("epoch {epoch}: downstream feedback {l_df:.4}");
        }
        let mut order: Vec<usize> = (0..cohort.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let mut bces = Vec::with_capacity(chunk.len());
            let mut aggs = Vec::with_capacity(chunk.len());
            let mut batch_groups = Vec::with_capacity(chunk.len());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = model.forward(&mats[i])?;
                let (targets, mask) = shifted_targets(&mats[i]);
                bces.push(bce_loss(&p, &targets, &mask));
                if fairness_on {
                    let n_visits = cohort.records[i].visits.len();
                    aggs.push(aggregate_record_probs(&p, n_visits, objective.aggregation));
                    batch_groups.push(group_idx[i]);
                    batch_labels.push(code_presence[i].clone());
                }
            }
            let l_bce_t = concat_rows(&bces)
                .sum_all()
                .scale(1.0 / chunk.len() as f64);
            let l_bce = l_bce_t.scalar();

            let (loss, l_f) = if fairness_on {
                let stacked = concat_rows(&aggs);
                let fo = match objective.kind {
                    ObjectiveKind::Di => di_loss_soft(
                        &stacked,
                        &batch_groups,
                        k,
                        objective.temperature,
                        objective.reference_group,
                    ),
                    ObjectiveKind::Wtpr => {
                        let labels = stack_arrays(&batch_labels);
                        wtpr_surrogate(&stacked, &labels, &batch_groups, k, objective.temperature)?
                    }
                };
                let l_f = fo.scalar();
                let weight = if l_df > 0.0 {
                    if config.literal_feedback {
                        0.0
                    } else {
                        config.lambda * (1.0 + l_df)
                    }
                } else {
                    config.lambda
                };
                (l_bce_t.add(&fo.scale(weight)), l_f)
            } else {
                (l_bce_t, 0.0)
            };

            let l_total = total_loss(l_bce, l_f, l_df, config.lambda)?;
            if !l_total.is_finite() {
                log::error!("training diverged at step {step}: non-finite loss");
                report.diverged_at = Some(step);
                return Ok(report);
            }
            backward(&loss);
            opt.step(&params);
            report.trace.push(TraceRow { step, l_bce, l_f, l_df, l_total });
            step += 1;
        }
    }
    Ok(report)
}

fn stack_arrays(rows: &[Array2<f64>]) -> Array2<f64> {
    let c = rows[0].ncols();
    let mut out = Array2::zeros((rows.len(), c));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&r.row(0));
    }
    out
}

/// Samples a fresh batch, trains a small probe predictor on it merged with
/// a fifth of the real cohort, and returns the resulting unfairness
/// scalar. Any failure logs a warning and yields zero.
fn refresh_feedback(
    model: &GeneratorModel,
    cohort: &Cohort,
    config: &GeneratorConfig,
    objective: &FairnessObjective,
    epoch: u64,
) -> f64 {
    let sample_seed = config
        .seed
        .wrapping_add(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let synth = match sample_records(
        model,
        config.sample_batch_size,
        &cohort.vocabulary,
        None,
        sample_seed,
    ) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("feedback sampling failed ({e}); using zero feedback");
            return 0.0;
        }
    };

    let mut idx: Vec<usize> = (0..cohort.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x00fe_edba));
    let n_probe = ((cohort.len() as f64 * 0.2).ceil() as usize)
        .max(4)
        .min(cohort.len());
    let records = idx[..n_probe]
        .iter()
        .map(|&i| cohort.records[i].clone())
        .collect();
    let probe_pool = Cohort::new(records, cohort.vocabulary.clone(), cohort.provenance);

    let probe_config = PredictorConfig {
        embed_dim: 16,
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 2,
        n_heads: 2,
        n_layers: 1,
        seed: sample_seed ^ 0x5eed,
        sensitive_attribute: config.sensitive_attribute.clone(),
    };
    let metric = match objective.kind {
        ObjectiveKind::Di => FeedbackMetric::Di,
        ObjectiveKind::Wtpr => FeedbackMetric::Wtpr,
    };
    downstream_feedback(&synth, &probe_pool, &probe_config, metric)
}

/// Writes the loss trace as CSV with a `step,l_bce,l_f,l_df,l_total` header.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,l_bce,l_f,l_df,l_total\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.l_bce, row.l_f, row.l_df, row.l_total
        ));
    }
    std::fs::write(path, out).map_err(Error::Io)?;
    Ok(())
}
