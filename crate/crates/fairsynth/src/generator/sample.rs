//! Ancestral sampling: bootstrap a demographic row from the training pool,
//! then draw visit rows code by code through the masked head until the
//! end-of-record bit fires or the horizon runs out.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{decode_matrix, CodeVocabulary, Cohort, PatientRecord, Provenance, RecordMatrix};
use crate::error::{Error, Result};
use crate::nn::math;

use super::{GeneratorModel, MadeHead};

/// Splits one base seed into independent per-record streams.
fn substream(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws `n` synthetic records from a trained generator.
///
/// Each record copies one row-0 profile (demographics, phenotype labels,
/// outcome marker) from the model's training pool, jointly, then samples
/// visit rows autoregressively. `group_conditioning` reweights which group
/// the profile is drawn from; without it the pool is sampled uniformly, so
/// profiles follow their empirical joint distribution. Records that end
/// before producing any visit are dropped with a warning.
pub fn sample_records(
    model: &GeneratorModel,
    n: usize,
    vocab: &Arc<CodeVocabulary>,
    group_conditioning: Option<&BTreeMap<String, f64>>,
    seed: u64,
) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if vocab.hash() != model.vocab_hash {
        return Err(Error::VocabularyMismatch(
            "sampling vocabulary differs from the model's".into(),
        ));
    }
    if model.row0_pool.is_empty() {
        return Err(Error::InvalidArgument(
            "model has no bootstrap pool; train it before sampling".into(),
        ));
    }

    let groups: Option<(Vec<&str>, Vec<f64>, BTreeMap<&str, Vec<usize>>)> =
        match group_conditioning {
            None => None,
            Some(weights) => {
                let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, (g, _)) in model.row0_pool.iter().enumerate() {
                    by_group.entry(g.as_str()).or_default().push(i);
                }
                let mut names = Vec::new();
                let mut cum = Vec::new();
                let mut total = 0.0;
                for (g, w) in weights {
                    if !w.is_finite() || *w < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "conditioning weight for '{g}' must be finite and non-negative"
                        )));
                    }
                    if *w == 0.0 {
                        continue;
                    }
                    if !by_group.contains_key(g.as_str()) {
                        return Err(Error::UnknownGroup(g.clone()));
                    }
                    total += w;
                    names.push(g.as_str());
                    cum.push(total);
                }
                if total <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "conditioning weights must sum to a positive value".into(),
                    ));
                }
                for v in &mut cum {
                    *v /= total;
                }
                Some((names, cum, by_group))
            }
        };

    let c = model.c_total;
    let t_max = model.config.t_max;
    let end_record = vocab.end_record_idx();
    let (vs, ve) = vocab.visit_code_range();
    let mut allowed = vec![false; c];
    for j in vs..ve {
        allowed[j] = true;
    }
    allowed[vocab.end_visit_idx()] = true;
    allowed[end_record] = true;

    let mut records = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, i as u64));
        let pool_idx = match &groups {
            None => rng.gen_range(0..model.row0_pool.len()),
            Some((names, cum, by_group)) => {
                let r: f64 = rng.gen();
                let pos = cum.partition_point(|&edge| edge < r).min(names.len() - 1);
                let members = &by_group[names[pos]];
                members[rng.gen_range(0..members.len())]
            }
        };
        let profile = &model.row0_pool[pool_idx].1;

        let mut values = Array2::zeros((1, c));
        for &j in profile {
            values[[0, j]] = 1.0;
        }
        let mut ended = false;
        while !ended && values.nrows() < t_max {
            let h = model.context_states_plain(&values);
            let h_last: Vec<f64> = h.row(h.nrows() - 1).to_vec();
            let row = sample_row(&model.head, &h_last, &allowed, &mut rng);
            ended = row[end_record] > 0.5;
            let mut grown = Array2::zeros((values.nrows() + 1, c));
            grown.slice_mut(ndarray::s![..values.nrows(), ..]).assign(&values);
            for (j, v) in row.iter().enumerate() {
                grown[[values.nrows(), j]] = *v;
            }
            values = grown;
        }

        let matrix = RecordMatrix {
            patient_id: format!("synth_{i:05}"),
            mask: Array2::zeros(values.dim()),
            values,
        };
        let mut record: PatientRecord = decode_matrix(&matrix, vocab)?;
        record.provenance = Provenance::Synthetic;
        if record.visits.is_empty() {
            dropped += 1;
            continue;
        }
        records.push(record);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} sampled records with no visits");
    }
    Ok(Cohort::new(records, Arc::clone(vocab), Provenance::Synthetic))
}

/// Samples one row through the masked head, maintaining hidden
/// pre-activations incrementally so each accepted code costs one pass over
/// the hidden units.
fn sample_row(
    head: &MadeHead,
    h_last: &[f64],
    allowed: &[bool],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let c = allowed.len();
    let hdim = head.hidden;
    let w1 = head.w1.value();
    let u1 = head.u1.value();
    let b1 = head.b1.value();
    let w2 = head.w2.value();
    let u2 = head.u2.value();
    let b2 = head.b2.value();

    let mut pre: Vec<f64> = (0..hdim)
        .map(|u| b1[[0, u]] + h_last.iter().enumerate().map(|(e, h)| h * u1[[e, u]]).sum::<f64>())
        .collect();
    let mut row = vec![0.0; c];
    for j in 0..c {
        if !allowed[j] {
            continue;
        }
        let mut logit =
            b2[[0, j]] + h_last.iter().enumerate().map(|(e, h)| h * u2[[e, j]]).sum::<f64>();
        for u in 0..hdim {
            if head.mask2[[u, j]] > 0.0 && pre[u] > 0.0 {
                logit += pre[u] * w2[[u, j]];
            }
        }
        if rng.gen_bool(math::sigmoid(logit)) {
            row[j] = 1.0;
            for u in 0..hdim {
                pre[u] += w1[[j, u]] * head.mask1[[j, u]];
            }
        }
    }
    row
}
