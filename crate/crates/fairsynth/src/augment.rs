//! Curated training datasets: a real-only baseline plus three augmentation
//! strategies, built from a real pool and frozen generators.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, PatientRecord, Provenance};
use crate::error::{Error, Result};
use crate::fairness::GroupLabeling;
use crate::generator::{sample_records, GeneratorModel};

const DEFAULT_REPLICATION_CAP: usize = 20;
const PROPORTION_TOLERANCE: f64 = 0.01;

/// The four dataset curation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurationStrategy {
    RealOnly,
    RealOversample,
    RealSynth,
    RealFairsynth,
}

impl std::fmt::Display for CurationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CurationStrategy::RealOnly => "REAL_ONLY",
            CurationStrategy::RealOversample => "REAL_OVERSAMPLE",
            CurationStrategy::RealSynth => "REAL_SYNTH",
            CurationStrategy::RealFairsynth => "REAL_FAIRSYNTH",
        };
        f.write_str(name)
    }
}

/// What to build: a strategy plus the real and synthetic record counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationSpec {
    pub strategy: CurationStrategy,
    pub n_real: usize,
    pub n_synth: usize,
    pub seed: u64,
    #[serde(default = "default_attribute")]
    pub sensitive_attribute: String,
    /// Oversampling targets per group; omitted means parity across the
    /// groups observed in the sampled subset.
    #[serde(default)]
    pub oversample_targets: Option<BTreeMap<String, f64>>,
}

fn default_attribute() -> String {
    "ethnicity".to_string()
}

impl CurationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 {
            return Err(Error::InvalidArgument("n_real must be positive".into()));
        }
        if self.strategy == CurationStrategy::RealOnly && self.n_synth != 0 {
            return Err(Error::InvalidArgument(
                "REAL_ONLY takes no synthetic records".into(),
            ));
        }
        Ok(())
    }
}

/// Concatenates two cohorts sharing a vocabulary, real records first.
/// Per-record provenance tags are preserved.
pub fn merge(real: &Cohort, synth: &Cohort) -> Result<Cohort> {
    if real.vocabulary.hash() != synth.vocabulary.hash() {
        return Err(Error::VocabularyMismatch(
            "merged cohorts must share a vocabulary".into(),
        ));
    }
    let mut records = real.records.clone();
    records.extend(synth.records.iter().cloned());
    Ok(Cohort::new(
        records,
        real.vocabulary.clone(),
        Provenance::Merged,
    ))
}

/// Replicates under-represented groups round-robin until every group's
/// share reaches its target, each group capped at twenty times its
/// original count. Originals are kept untouched and in order; replicas are
/// appended with `Oversampled` provenance.
pub fn dp_oversample(
    cohort: &Cohort,
    groups: &GroupLabeling,
    target: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<Cohort> {
    let total_target: f64 = target.values().sum();
    if (total_target - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "target proportions sum to {total_target}, expected 1"
        )));
    }
    if target.values().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "target proportions must be finite and non-negative".into(),
        ));
    }
    let record_groups = groups.indices(cohort)?;
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in record_groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    let mut targets_by_idx: BTreeMap<usize, f64> = BTreeMap::new();
    for (name, share) in target {
        let idx = groups.index_of(name)?;
        if *share > 0.0 && !members.contains_key(&idx) {
            return Err(Error::UnknownGroup(name.clone()));
        }
        targets_by_idx.insert(idx, *share);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursors: BTreeMap<usize, (Vec<usize>, usize)> = members
        .iter()
        .map(|(&g, list)| {
            let mut order = list.clone();
            order.shuffle(&mut rng);
            (g, (order, 0usize))
        })
        .collect();

    let originals: BTreeMap<usize, usize> =
        members.iter().map(|(&g, list)| (g, list.len())).collect();
    let mut counts = originals.clone();
    let mut total = cohort.len();
    let mut replicas: Vec<PatientRecord> = Vec::new();
    let mut capped_warned = false;

    let iteration_limit = cohort.len() * DEFAULT_REPLICATION_CAP + 1;
    for _ in 0..iteration_limit {
        let mut worst: Option<(usize, f64)> = None;
        for (&g, &share) in &targets_by_idx {
            let current = counts.get(&g).copied().unwrap_or(0) as f64 / total as f64;
            let deficit = share - current;
            if deficit > 1e-9 {
                let capped =
                    counts[&g] >= originals[&g].saturating_mul(DEFAULT_REPLICATION_CAP);
                if capped {
                    if deficit > PROPORTION_TOLERANCE && !capped_warned {
                        log::warn!(
                            "group '{}' hit the {DEFAULT_REPLICATION_CAP}x replication cap \
                             short of its target",
                            groups.groups[g]
                        );
                        capped_warned = true;
                    }
                    continue;
                }
                if worst.map_or(true, |(_, d)| deficit > d) {
                    worst = Some((g, deficit));
                }
            }
        }
        let Some((g, _)) = worst else { break };
        let (order, pos) = cursors.get_mut(&g).expect("group has members");
        let src = order[*pos % order.len()];
        *pos += 1;
        let mut replica = cohort.records[src].clone();
        replica.provenance = Provenance::Oversampled;
        replicas.push(replica);
        *counts.get_mut(&g).unwrap() += 1;
        total += 1;
    }

    let mut records = cohort.records.clone();
    records.extend(replicas);
    Ok(Cohort::new(
        records,
        cohort.vocabulary.clone(),
        Provenance::Oversampled,
    ))
}

/// Samples exactly `n` synthetic records, retrying past dropped empties,
/// and reassigns sequential ids so batches never collide.
fn sample_exact(
    model: &GeneratorModel,
    n: usize,
    cohort: &Cohort,
    seed: u64,
) -> Result<Vec<PatientRecord>> {
    let mut out: Vec<PatientRecord> = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        if attempt >= 20 {
            return Err(Error::InvalidArgument(
                "generator keeps producing visit-free records".into(),
            ));
        }
        let need = n - out.len();
        let batch = sample_records(
            model,
            need + need / 4 + 1,
            &cohort.vocabulary,
            None,
            seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        )?;
        out.extend(batch.records);
        attempt += 1;
    }
    out.truncate(n);
    for (i, r) in out.iter_mut().enumerate() {
        r.patient_id = format!("synth_{i:05}");
    }
    Ok(out)
}

/// Builds one curated dataset from the real pool and whichever generator
/// the strategy calls for. Real records are drawn without replacement in
/// seeded order; synthetic records are appended after them.
pub fn curate(
    spec: &CurationSpec,
    real_pool: &Cohort,
    generator_plain: Option<&GeneratorModel>,
    generator_fair: Option<&GeneratorModel>,
) -> Result<Cohort> {
    spec.validate()?;
    if real_pool.len() < spec.n_real {
        return Err(Error::InvalidArgument(format!(
            "real pool holds {} records, fewer than the {} requested",
            real_pool.len(),
            spec.n_real
        )));
    }
    let mut idx: Vec<usize> = (0..real_pool.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut chosen = idx[..spec.n_real].to_vec();
    chosen.sort_unstable();
    let records: Vec<PatientRecord> = chosen
        .iter()
        .map(|&i| real_pool.records[i].clone())
        .collect();
    let real = Cohort::new(records, real_pool.vocabulary.clone(), Provenance::Real);

    match spec.strategy {
        CurationStrategy::RealOnly => Ok(real),
        CurationStrategy::RealOversample => {
            let labeling = GroupLabeling::from_cohort(&spec.sensitive_attribute, &real)?;
            let targets = match &spec.oversample_targets {
                Some(t) => t.clone(),
                None => {
                    let share = 1.0 / labeling.k() as f64;
                    labeling
                        .groups
                        .iter()
                        .map(|g| (g.clone(), share))
                        .collect()
                }
            };
            dp_oversample(&real, &labeling, &targets, spec.seed ^ 0x0f5a)
        }
        CurationStrategy::RealSynth | CurationStrategy::RealFairsynth => {
            let model = if spec.strategy == CurationStrategy::RealSynth {
                generator_plain.ok_or_else(|| {
                    Error::InvalidArgument(
                        "REAL_SYNTH requires the plain generator".into(),
                    )
                })?
            } else {
                generator_fair.ok_or_else(|| {
                    Error::InvalidArgument(
                        "REAL_FAIRSYNTH requires the fairness-trained generator".into(),
                    )
                })?
            };
            let synth_records = if spec.n_synth > 0 {
                sample_exact(model, spec.n_synth, &real, spec.seed ^ 0x51f7)?
            } else {
                Vec::new()
            };
            let synth = Cohort::new(
                synth_records,
                real.vocabulary.clone(),
                Provenance::Synthetic,
            );
            merge(&real, &synth)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocabulary, encode_record, RawRecord};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn cohort_with_groups(spec: &[(&str, usize)], seed: u64) -> Cohort {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raws = Vec::new();
        for (group, n) in spec {
            for i in 0..*n {
                raws.push(RawRecord {
                    patient_id: format!("{group}_{i}"),
                    static_attrs: BTreeMap::from([(
                        "ethnicity".to_string(),
                        group.to_string(),
                    )]),
                    labels: BTreeSet::new(),
                    visits: vec![vec![
                        if rng.gen_bool(0.5) { "flu" } else { "cold" }.to_string(),
                    ]],
                    outcome: rng.gen_bool(0.3) as u8,
                    provenance: Provenance::Real,
                });
            }
        }
        let vocab = Arc::new(build_vocabulary(&raws, 1));
        let records = raws.iter().map(|r| r.resolve(&vocab).unwrap()).collect();
        Cohort::new(records, vocab, Provenance::Real)
    }

    fn labeling_for(cohort: &Cohort) -> GroupLabeling {
        GroupLabeling::from_cohort("ethnicity", cohort).unwrap()
    }

    fn shares(cohort: &Cohort) -> BTreeMap<String, f64> {
        let counts = cohort.group_counts("ethnicity").unwrap();
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| (g, c as f64 / total as f64))
            .collect()
    }

    #[test]
    fn merging_with_an_empty_cohort_is_identity_on_records() {
        let real = cohort_with_groups(&[("a", 5), ("b", 3)], 1);
        let empty = Cohort::new(Vec::new(), real.vocabulary.clone(), Provenance::Synthetic);
        let merged = merge(&real, &empty).unwrap();
        assert_eq!(merged.records, real.records);
        assert_eq!(merged.provenance, Provenance::Merged);
    }

    #[test]
    fn merge_concatenates_real_then_synthetic() {
        let real = cohort_with_groups(&[("a", 4)], 2);
        let mut synth = cohort_with_groups(&[("b", 3)], 3);
        // Same token set, hence same vocabulary hash, is required; rebuild
        // the synthetic cohort over the real vocabulary.
        synth = Cohort::new(
            synth
                .records
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.provenance = Provenance::Synthetic;
                    r
                })
                .collect(),
            real.vocabulary.clone(),
            Provenance::Synthetic,
        );
        let merged = merge(&real, &synth).unwrap();
        assert_eq!(merged.len(), 7);
        assert_eq!(merged.records[..4], real.records[..]);
        assert!(merged.records[4..]
            .iter()
            .all(|r| r.provenance == Provenance::Synthetic));

        let counts = merged.group_counts("ethnicity").unwrap();
        assert_eq!(counts["a"], 4);
        assert_eq!(counts["b"], 3);
    }

    #[test]
    fn merge_rejects_different_vocabularies() {
        let a = cohort_with_groups(&[("a", 2)], 4);
        let b = cohort_with_groups(&[("b", 2)], 5);
        if a.vocabulary.hash() != b.vocabulary.hash() {
            assert!(matches!(
                merge(&a, &b),
                Err(Error::VocabularyMismatch(_))
            ));
        }
    }

    #[test]
    fn oversampling_at_target_changes_nothing() {
        let cohort = cohort_with_groups(&[("a", 10), ("b", 10)], 6);
        let labeling = labeling_for(&cohort);
        let target = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let out = dp_oversample(&cohort, &labeling, &target, 7).unwrap();
        assert_eq!(out.records, cohort.records);
    }

    #[test]
    fn parity_from_ten_ninety_replicates_minority_to_ninety() {
        let cohort = cohort_with_groups(&[("a", 10), ("b", 90)], 8);
        let labeling = labeling_for(&cohort);
        let target = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let out = dp_oversample(&cohort, &labeling, &target, 9).unwrap();
        let counts = out.group_counts("ethnicity").unwrap();
        assert_eq!(counts["a"], 90);
        assert_eq!(counts["b"], 90);
        assert_eq!(out.len(), 180);
        assert_eq!(out.records[..100], cohort.records[..]);
        assert!(out.records[100..]
            .iter()
            .all(|r| r.provenance == Provenance::Oversampled));
    }

    #[test]
    fn oversampling_only_duplicates_existing_records() {
        let cohort = cohort_with_groups(&[("a", 7), ("b", 40), ("c", 23)], 10);
        let labeling = labeling_for(&cohort);
        let target = BTreeMap::from([
            ("a".to_string(), 0.3),
            ("b".to_string(), 0.4),
            ("c".to_string(), 0.3),
        ]);
        let out = dp_oversample(&cohort, &labeling, &target, 11).unwrap();

        let original_ids: BTreeSet<&str> =
            cohort.records.iter().map(|r| r.patient_id.as_str()).collect();
        let out_ids: BTreeSet<&str> =
            out.records.iter().map(|r| r.patient_id.as_str()).collect();
        assert_eq!(original_ids, out_ids);

        for replica in &out.records[cohort.len()..] {
            let original = cohort
                .records
                .iter()
                .find(|r| r.patient_id == replica.patient_id)
                .expect("replica of a known record");
            assert_eq!(replica.visits, original.visits);
            assert_eq!(replica.static_attrs, original.static_attrs);
            assert_eq!(replica.outcome, original.outcome);
        }
    }

    #[test]
    fn random_targets_end_within_tolerance() {
        // Duplication can only add mass, so groups that start over-
        // represented may stay above target; every group must end no more
        // than a replica's granularity below its target, and replicated
        // groups must not overshoot.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..10 {
            let na = rng.gen_range(100..300);
            let nb = rng.gen_range(100..300);
            let nc = rng.gen_range(100..300);
            let cohort =
                cohort_with_groups(&[("a", na), ("b", nb), ("c", nc)], 13 + trial);
            let labeling = labeling_for(&cohort);
            let wa: f64 = rng.gen_range(0.1..0.5);
            let wb: f64 = rng.gen_range(0.1..(1.0 - wa - 0.15));
            let wc = 1.0 - wa - wb;
            let target = BTreeMap::from([
                ("a".to_string(), wa),
                ("b".to_string(), wb),
                ("c".to_string(), wc),
            ]);
            let out = dp_oversample(&cohort, &labeling, &target, 14 + trial).unwrap();
            let counts_orig = cohort.group_counts("ethnicity").unwrap();
            let counts_out = out.group_counts("ethnicity").unwrap();
            let total = out.len() as f64;
            let slack = PROPORTION_TOLERANCE + 1.0 / total;
            for (g, t) in &target {
                let share = counts_out[g] as f64 / total;
                assert!(
                    share >= t - slack,
                    "trial {trial}: group {g} share {share} fell below target {t}"
                );
                if counts_out[g] > counts_orig[g] {
                    assert!(
                        share <= t + slack,
                        "trial {trial}: group {g} share {share} overshot target {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn oversampling_is_deterministic_under_seed() {
        let cohort = cohort_with_groups(&[("a", 9), ("b", 33)], 15);
        let labeling = labeling_for(&cohort);
        let target = BTreeMap::from([("a".to_string(), 0.45), ("b".to_string(), 0.55)]);
        let x = dp_oversample(&cohort, &labeling, &target, 16).unwrap();
        let y = dp_oversample(&cohort, &labeling, &target, 16).unwrap();
        assert_eq!(x.records, y.records);
    }

    #[test]
    fn missing_target_group_errors_with_its_name() {
        let cohort = cohort_with_groups(&[("a", 5)], 17);
        let labeling = GroupLabeling {
            attribute: "ethnicity".to_string(),
            groups: vec!["a".to_string(), "ghost".to_string()],
        };
        let target =
            BTreeMap::from([("a".to_string(), 0.5), ("ghost".to_string(), 0.5)]);
        match dp_oversample(&cohort, &labeling, &target, 18) {
            Err(Error::UnknownGroup(g)) => assert_eq!(g, "ghost"),
            other => panic!("expected a named group error, got {other:?}"),
        }
    }

    #[test]
    fn replication_stops_at_the_cap() {
        let cohort = cohort_with_groups(&[("a", 1), ("b", 99)], 19);
        let labeling = labeling_for(&cohort);
        let target = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let out = dp_oversample(&cohort, &labeling, &target, 20).unwrap();
        let counts = out.group_counts("ethnicity").unwrap();
        assert_eq!(counts["a"], 20, "capped at twenty times one original");
        assert_eq!(counts["b"], 99);
    }

    mod curation {
        use super::*;
        use crate::generator::{GeneratorConfig, GeneratorModel};

        fn pool(seed: u64) -> Cohort {
            cohort_with_groups(&[("a", 30), ("b", 10)], seed)
        }

        fn forced_generator(pool: &Cohort, favored_token: &str, seed: u64) -> GeneratorModel {
            let config = GeneratorConfig {
                n_layers: 1,
                n_heads: 2,
                embed_dim: 8,
                t_max: 6,
                seed,
                ..GeneratorConfig::default()
            };
            let mut model = GeneratorModel::new(&pool.vocabulary, config).unwrap();
            model.row0_pool = pool
                .records
                .iter()
                .map(|r| {
                    let m = encode_record(r, &pool.vocabulary, 6).unwrap();
                    let set = m
                        .values
                        .row(0)
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v > 0.5)
                        .map(|(j, _)| j)
                        .collect();
                    (r.group("ethnicity").unwrap().to_string(), set)
                })
                .collect();
            let favored = pool.vocabulary.index_of(favored_token).unwrap();
            let end = pool.vocabulary.end_record_idx();
            model.head.b2.update_value(|v| {
                v.fill(-50.0);
                v[[0, favored]] = 50.0;
                v[[0, end]] = 0.0;
            });
            model
        }

        #[test]
        fn real_only_returns_exactly_the_requested_subset() {
            let pool = pool(21);
            let spec = CurationSpec {
                strategy: CurationStrategy::RealOnly,
                n_real: 25,
                n_synth: 0,
                seed: 22,
                sensitive_attribute: "ethnicity".to_string(),
                oversample_targets: None,
            };
            let out = curate(&spec, &pool, None, None).unwrap();
            assert_eq!(out.len(), 25);
            assert!(out.records.iter().all(|r| r.provenance == Provenance::Real));

            let again = curate(&spec, &pool, None, None).unwrap();
            let ids = |c: &Cohort| {
                c.records
                    .iter()
                    .map(|r| r.patient_id.clone())
                    .collect::<Vec<_>>()
            };
            assert_eq!(ids(&out), ids(&again));
        }

        #[test]
        fn synth_strategies_append_the_requested_synthetic_count() {
            let pool = pool(23);
            let plain = forced_generator(&pool, "flu", 24);
            let fair = forced_generator(&pool, "cold", 25);
            let spec = CurationSpec {
                strategy: CurationStrategy::RealSynth,
                n_real: 20,
                n_synth: 8,
                seed: 26,
                sensitive_attribute: "ethnicity".to_string(),
                oversample_targets: None,
            };
            let out = curate(&spec, &pool, Some(&plain), Some(&fair)).unwrap();
            assert_eq!(out.len(), 28);
            let synth: Vec<_> = out
                .records
                .iter()
                .filter(|r| r.provenance == Provenance::Synthetic)
                .collect();
            assert_eq!(synth.len(), 8);
            let flu = pool.vocabulary.index_of("flu").unwrap();
            assert!(synth
                .iter()
                .all(|r| r.visits.iter().all(|v| v.codes.contains(&flu))));

            let fair_spec = CurationSpec {
                strategy: CurationStrategy::RealFairsynth,
                ..spec.clone()
            };
            let out_fair = curate(&fair_spec, &pool, Some(&plain), Some(&fair)).unwrap();
            let cold = pool.vocabulary.index_of("cold").unwrap();
            let synth_fair: Vec<_> = out_fair
                .records
                .iter()
                .filter(|r| r.provenance == Provenance::Synthetic)
                .collect();
            assert_eq!(synth_fair.len(), 8);
            assert!(synth_fair
                .iter()
                .all(|r| r.visits.iter().all(|v| v.codes.contains(&cold))));
        }

        #[test]
        fn oversample_strategy_balances_the_subset() {
            let pool = pool(27);
            let spec = CurationSpec {
                strategy: CurationStrategy::RealOversample,
                n_real: 40,
                n_synth: 0,
                seed: 28,
                sensitive_attribute: "ethnicity".to_string(),
                oversample_targets: None,
            };
            let out = curate(&spec, &pool, None, None).unwrap();
            let shares = shares(&out);
            for (g, s) in shares {
                assert!(
                    (s - 0.5).abs() <= PROPORTION_TOLERANCE + 1.0 / out.len() as f64,
                    "group {g} share {s}"
                );
            }
        }

        #[test]
        fn missing_prerequisites_are_rejected() {
            let pool = pool(29);
            let mut spec = CurationSpec {
                strategy: CurationStrategy::RealSynth,
                n_real: 10,
                n_synth: 5,
                seed: 30,
                sensitive_attribute: "ethnicity".to_string(),
                oversample_targets: None,
            };
            assert!(curate(&spec, &pool, None, None).is_err());
            spec.strategy = CurationStrategy::RealFairsynth;
            assert!(curate(&spec, &pool, None, None).is_err());

            spec.n_real = 1_000;
            let fair = forced_generator(&pool, "flu", 31);
            assert!(curate(&spec, &pool, None, Some(&fair)).is_err());

            let bad = CurationSpec {
                strategy: CurationStrategy::RealOnly,
                n_real: 5,
                n_synth: 3,
                seed: 32,
                sensitive_attribute: "ethnicity".to_string(),
                oversample_targets: None,
            };
            assert!(bad.validate().is_err());
        }

        #[test]
        fn strategy_names_serialize_screaming_snake() {
            let json = serde_json::to_string(&CurationStrategy::RealFairsynth).unwrap();
            assert_eq!(json, "\"REAL_FAIRSYNTH\"");
            let back: CurationStrategy = serde_json::from_str("\"REAL_OVERSAMPLE\"").unwrap();
            assert_eq!(back, CurationStrategy::RealOversample);
        }
    }
}
