//! Raw event tables to cohort: filtering, lab discretization, imputation,
//! and static-attribute canonicalization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{build_vocabulary, Cohort, PatientRecord, Provenance, RawRecord, LAB_PREFIX};
use crate::error::{Error, Result};

/// How missing lab measurements are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImputationPolicy {
    ForwardFill,
    CohortMedian,
    Drop,
}

impl Default for ImputationPolicy {
    fn default() -> Self {
        ImputationPolicy::ForwardFill
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterOp {
    Eq,
    Ne,
    Ge,
    Le,
    Gt,
    Lt,
}

/// One predicate over a static attribute or the derived `visits` count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FilterPredicate {
    pub attribute: String,
    pub operator: FilterOp,
    pub value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessConfig {
    pub n_lab_bins: usize,
    #[serde(default)]
    pub imputation_policy: ImputationPolicy,
    #[serde(default)]
    pub filters: Vec<FilterPredicate>,
    /// Exact raw-string overrides; anything not listed falls back to the
    /// built-in keyword grouping.
    #[serde(default)]
    pub ethnicity_grouping: BTreeMap<String, String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            n_lab_bins: 10,
            imputation_policy: ImputationPolicy::ForwardFill,
            filters: Vec::new(),
            ethnicity_grouping: BTreeMap::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lab_bins < 2 {
            return Err(Error::Config("n_lab_bins must be at least 2".into()));
        }
        if self.ethnicity_grouping.values().any(|v| v.is_empty()) {
            return Err(Error::Config("canonical ethnicity groups must be non-empty".into()));
        }
        Ok(())
    }
}

/// What one raw event row carries.
#[derive(Debug, Clone, PartialEq)]
pub enum EventValue {
    /// A medical code present at the visit.
    Code,
    /// A lab measurement; NaN marks a missing value awaiting imputation.
    Lab(f64),
}

/// One row of the raw event table.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub patient_id: String,
    /// Visit ordinal; rows sharing (patient, visit) form one visit.
    pub visit: u64,
    pub variable: String,
    pub value: EventValue,
}

/// Interior quantile edges (linear-interpolation quantiles over the sorted
/// sequence). With fewer distinct values than bins, the edges fall back to
/// midpoints between consecutive distinct values, with a warning.
pub fn build_bin_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    assert!(n_bins >= 1, "need at least one bin");
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.is_empty() {
        log::warn!("no finite values to fit bins on; returning a single bin");
        return Vec::new();
    }
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n_bins {
        log::warn!(
            "only {} distinct values for {} bins; falling back to distinct-value bins",
            distinct.len(),
            n_bins
        );
        return distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    }
    let n = sorted.len();
    (1..n_bins)
        .map(|q| {
            let h = (n - 1) as f64 * q as f64 / n_bins as f64;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if lo + 1 < n {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            } else {
                sorted[lo]
            }
        })
        .collect()
}

/// Left-inclusive bin lookup: the bin index is the number of edges at or
/// below the value, so a value equal to an edge lands in the higher bin.
/// NaN signals a missing measurement and must be imputed first.
pub fn discretize_lab(value: f64, edges: &[f64]) -> Option<usize> {
    if value.is_nan() {
        return None;
    }
    Some(edges.iter().filter(|&&e| e <= value).count())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Cohort median per lab variable, over observed (non-NaN) values.
pub fn lab_medians(events: &[RawEvent]) -> BTreeMap<String, f64> {
    let mut per_var: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in events {
        if let EventValue::Lab(v) = e.value {
            if v.is_finite() {
                per_var.entry(&e.variable).or_default().push(v);
            }
        }
    }
    per_var
        .into_iter()
        .map(|(k, mut vs)| {
            vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (k.to_string(), median(&vs))
        })
        .collect()
}

/// Resolves missing lab values. Forward fill carries the last observed
/// value per (patient, variable) in visit order, with the cohort median
/// standing in for leading gaps; the median policy substitutes it
/// everywhere; drop removes the event. Variables never observed anywhere
/// cannot be imputed and their missing events are dropped with a warning.
pub fn impute_missing(mut events: Vec<RawEvent>, policy: ImputationPolicy) -> Vec<RawEvent> {
    if policy == ImputationPolicy::Drop {
        events.retain(|e| !matches!(e.value, EventValue::Lab(v) if v.is_nan()));
        return events;
    }
    let medians = lab_medians(&events);

    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        let ea = &events[a];
        let eb = &events[b];
        (&ea.patient_id, ea.visit, a).cmp(&(&eb.patient_id, eb.visit, b))
    });

    let mut last_seen: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut drop_flags = vec![false; events.len()];
    for idx in order {
        let (patient, variable, value) = {
            let e = &events[idx];
            (e.patient_id.clone(), e.variable.clone(), match e.value {
                EventValue::Lab(v) => v,
                EventValue::Code => continue,
            })
        };
        let key = (patient, variable);
        if value.is_nan() {
            let fill = match policy {
                ImputationPolicy::ForwardFill => last_seen
                    .get(&key)
                    .copied()
                    .or_else(|| medians.get(&key.1).copied()),
                ImputationPolicy::CohortMedian => medians.get(&key.1).copied(),
                ImputationPolicy::Drop => unreachable!(),
            };
            match fill {
                Some(v) => events[idx].value = EventValue::Lab(v),
                None => {
                    dropped += 1;
                    drop_flags[idx] = true;
                }
            }
        } else if policy == ImputationPolicy::ForwardFill {
            last_seen.insert(key, value);
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} missing lab events had no observed value anywhere; dropped");
        let mut i = 0;
        events.retain(|_| {
            let keep = !drop_flags[i];
            i += 1;
            keep
        });
    }
    events
}

fn compare(lhs: &str, op: FilterOp, rhs: &str) -> bool {
    if let (Ok(a), Ok(b)) = (lhs.parse::<f64>(), rhs.parse::<f64>()) {
        return match op {
            FilterOp::Eq => a == b,
            FilterOp::Ne => a != b,
            FilterOp::Ge => a >= b,
            FilterOp::Le => a <= b,
            FilterOp::Gt => a > b,
            FilterOp::Lt => a < b,
        };
    }
    match op {
        FilterOp::Eq => lhs == rhs,
        FilterOp::Ne => lhs != rhs,
        FilterOp::Ge => lhs >= rhs,
        FilterOp::Le => lhs <= rhs,
        FilterOp::Gt => lhs > rhs,
        FilterOp::Lt => lhs < rhs,
    }
}

fn record_field(record: &PatientRecord, attribute: &str) -> Result<String> {
    if attribute == "visits" {
        return Ok(record.visits.len().to_string());
    }
    record
        .static_attrs
        .get(attribute)
        .cloned()
        .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))
}

/// Keeps the records satisfying every predicate, preserving order.
/// Predicates may reference static attributes or the derived `visits`
/// count; an attribute absent from any surviving candidate is an error.
pub fn filter_cohort(cohort: &Cohort, filters: &[FilterPredicate]) -> Result<Cohort> {
    let mut keep = Vec::new();
    for (i, record) in cohort.records.iter().enumerate() {
        let mut ok = true;
        for f in filters {
            let lhs = record_field(record, &f.attribute)?;
            if !compare(&lhs, f.operator, &f.value) {
                ok = false;
                break;
            }
        }
        if ok {
            keep.push(i);
        }
    }
    Ok(cohort.subset(&keep))
}

const DEFAULT_GROUPS: [(&str, &[&str]); 4] = [
    ("White", &["white"]),
    ("Black", &["black", "african"]),
    ("Hispanic", &["hispanic", "latino"]),
    ("Asian", &["asian"]),
];

/// Maps a raw ethnicity string to its canonical group: exact overrides
/// first, then case-insensitive keyword matching, then "Others".
pub fn canonical_ethnicity(raw: &str, overrides: &BTreeMap<String, String>) -> String {
    if let Some(canonical) = overrides.get(raw) {
        return canonical.clone();
    }
    let lower = raw.to_lowercase();
    for (canonical, keywords) in DEFAULT_GROUPS {
        if keywords.iter().any(|k| lower.contains(k)) {
            return canonical.to_string();
        }
    }
    "Others".to_string()
}

/// Reads the raw event table: columns patient_id, timestamp, variable,
/// value. An empty value marks a medical code; anything else must parse as
/// a float, with NaN for a missing measurement.
pub fn read_events_csv(path: &Path) -> Result<Vec<RawEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("events row {}: {e}", i + 2)))?;
        if row.len() != 4 {
            return Err(Error::Config(format!(
                "events row {}: expected 4 columns, got {}",
                i + 2,
                row.len()
            )));
        }
        let visit: u64 = row[1]
            .parse()
            .map_err(|_| Error::Config(format!("events row {}: bad timestamp {:?}", i + 2, &row[1])))?;
        let value = if row[3].is_empty() {
            EventValue::Code
        } else {
            EventValue::Lab(row[3].parse::<f64>().map_err(|_| {
                Error::Config(format!("events row {}: bad value {:?}", i + 2, &row[3]))
            })?)
        };
        events.push(RawEvent {
            patient_id: row[0].to_string(),
            visit,
            variable: row[2].to_string(),
            value,
        });
    }
    Ok(events)
}

/// Reads the long-format static table: columns patient_id, attribute,
/// value. The attributes `label` (repeatable) and `outcome` (0/1) are
/// lifted to the record's label set and outcome flag.
pub fn read_statics_csv(path: &Path) -> Result<Vec<(String, String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("statics row {}: {e}", i + 2)))?;
        if row.len() != 3 {
            return Err(Error::Config(format!(
                "statics row {}: expected 3 columns, got {}",
                i + 2,
                row.len()
            )));
        }
        rows.push((row[0].to_string(), row[1].to_string(), row[2].to_string()));
    }
    Ok(rows)
}

/// Name of the discretized lab token for a variable/bin pair.
pub fn lab_token(variable: &str, bin: usize) -> String {
    format!("{LAB_PREFIX}{variable}:q{bin}")
}

/// Full pipeline: impute, fit bin edges, tokenize events into visit code
/// sets, attach canonicalized statics, filter, and build the vocabulary.
pub fn preprocess(
    events: Vec<RawEvent>,
    statics: Vec<(String, String, String)>,
    config: &PreprocessConfig,
    min_code_count: usize,
) -> Result<Cohort> {
    config.validate()?;
    let events = impute_missing(events, config.imputation_policy);

    let mut per_var: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in &events {
        if let EventValue::Lab(v) = e.value {
            per_var.entry(&e.variable).or_default().push(v);
        }
    }
    let edges: BTreeMap<String, Vec<f64>> = per_var
        .into_iter()
        .map(|(var, vals)| (var.to_string(), build_bin_edges(&vals, config.n_lab_bins)))
        .collect();

    // Group events into per-patient visits keyed by distinct timestamps.
    let mut per_patient: BTreeMap<&str, BTreeMap<u64, BTreeSet<String>>> = BTreeMap::new();
    for e in &events {
        let token = match e.value {
            EventValue::Code => e.variable.clone(),
            EventValue::Lab(v) => {
                let bin = discretize_lab(v, &edges[&e.variable])
                    .expect("imputation leaves no missing values");
                lab_token(&e.variable, bin)
            }
        };
        per_patient
            .entry(&e.patient_id)
            .or_default()
            .entry(e.visit)
            .or_default()
            .insert(token);
    }

    let mut attrs: BTreeMap<&str, BTreeMap<String, String>> = BTreeMap::new();
    let mut labels: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut outcomes: BTreeMap<&str, u8> = BTreeMap::new();
    for (patient, attribute, value) in &statics {
        match attribute.as_str() {
            "label" => {
                labels.entry(patient).or_default().insert(value.clone());
            }
            "outcome" => {
                let flag = match value.as_str() {
                    "1" | "true" => 1,
                    "0" | "false" => 0,
                    other => {
                        return Err(Error::Config(format!(
                            "outcome for patient {patient} must be 0/1, got {other:?}"
                        )))
                    }
                };
                outcomes.insert(patient, flag);
            }
            "ethnicity" => {
                attrs.entry(patient).or_default().insert(
                    "ethnicity".to_string(),
                    canonical_ethnicity(value, &config.ethnicity_grouping),
                );
            }
            _ => {
                attrs
                    .entry(patient)
                    .or_default()
                    .insert(attribute.clone(), value.clone());
            }
        }
    }

    let mut patient_ids: BTreeSet<&str> = per_patient.keys().copied().collect();
    patient_ids.extend(attrs.keys().copied());
    patient_ids.extend(labels.keys().copied());
    patient_ids.extend(outcomes.keys().copied());

    let raws: Vec<RawRecord> = patient_ids
        .into_iter()
        .map(|pid| RawRecord {
            patient_id: pid.to_string(),
            static_attrs: attrs.get(pid).cloned().unwrap_or_default(),
            labels: labels.get(pid).cloned().unwrap_or_default(),
            visits: per_patient
                .get(pid)
                .map(|vs| vs.values().map(|codes| codes.iter().cloned().collect()).collect())
                .unwrap_or_default(),
            outcome: outcomes.get(pid).copied().unwrap_or(0),
            provenance: Provenance::Real,
        })
        .collect();

    let vocabulary = Arc::new(build_vocabulary(&raws, min_code_count));
    let records: Vec<PatientRecord> = raws
        .iter()
        .map(|r| r.resolve(&vocabulary))
        .collect::<Result<_>>()?;
    let cohort = Cohort {
        records,
        vocabulary,
        provenance: Provenance::Real,
    };
    filter_cohort(&cohort, &config.filters)
}
