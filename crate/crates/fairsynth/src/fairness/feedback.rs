//! Scalar fairness feedback from a downstream probe predictor.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Provenance};
use crate::downstream::{evaluate, predict, train_predictor, PredictorConfig};
use crate::error::Error;

/// Which downstream metric drives the feedback scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMetric {
    Di,
    Wtpr,
}

fn probe(
    synth: &Cohort,
    real_val: &Cohort,
    config: &PredictorConfig,
    metric: FeedbackMetric,
) -> crate::error::Result<f64> {
    if synth.is_empty() || real_val.is_empty() {
        return Err(Error::InvalidArgument(
            "feedback probe needs non-empty cohorts".into(),
        ));
    }
    if synth.vocabulary.hash() != real_val.vocabulary.hash() {
        return Err(Error::VocabularyMismatch(
            "feedback cohorts use different vocabularies".into(),
        ));
    }

    // Deterministic half split of the real validation pool: even positions
    // train the probe alongside the synthetic records, odd positions are
    // held out for scoring.
    let mut order: Vec<usize> = (0..real_val.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f00d);
    order.shuffle(&mut rng);
    let (even, odd): (Vec<_>, Vec<_>) = order.iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let probe_train_idx: Vec<usize> = even.into_iter().map(|(_, &i)| i).collect();
    let holdout_idx: Vec<usize> = odd.into_iter().map(|(_, &i)| i).collect();
    if probe_train_idx.is_empty() || holdout_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "real validation pool too small to split for the probe".into(),
        ));
    }

    let mut train_records = real_val.subset(&probe_train_idx).records;
    // Synthetic ids could collide with real ones; the probe requires
    // disjoint ids only across its own train/holdout split, so prefix them.
    for (i, r) in synth.records.iter().enumerate() {
        let mut r = r.clone();
        r.patient_id = format!("synth_probe_{i}_{}", r.patient_id);
        train_records.push(r);
    }
    let probe_train = Cohort {
        records: train_records,
        vocabulary: Arc::clone(&real_val.vocabulary),
        provenance: Provenance::Merged,
    };
    let holdout = real_val.subset(&holdout_idx);

    let model = train_predictor(&probe_train, &holdout, config)?;
    let results = predict(&model, &holdout)?;
    let report = evaluate(&results, 1)?;
    Ok(match metric {
        FeedbackMetric::Di => {
            let di = report.fairness.disparate_impact;
            if di.is_nan() {
                return Err(Error::InvalidArgument(
                    "probe disparate impact undefined".into(),
                ));
            }
            (1.0 - di).abs()
        }
        FeedbackMetric::Wtpr => match report.fairness.worst_tpr {
            Some(w) => 1.0 - w,
            None => {
                return Err(Error::NoEligibleGroup { min_positives: 1 });
            }
        },
    })
}

/// Trains a small probe predictor on the synthetic records plus half of the
/// real validation pool and scores its fairness on the held-out half.
/// Returns `|1 - DI|` or `1 - WTPR`; any probe failure logs a warning and
/// fails open to zero.
pub fn downstream_feedback(
    synth: &Cohort,
    real_val: &Cohort,
    config: &PredictorConfig,
    metric: FeedbackMetric,
) -> f64 {
    match probe(synth, real_val, config, metric) {
        Ok(l_df) => l_df.max(0.0),
        Err(e) => {
            log::warn!("feedback probe failed ({e}); using zero feedback");
            0.0
        }
    }
}
