//! Cohort data model: records, vocabularies, and binary visit matrices.
//!
//! A patient record is an ordered list of visits (sets of code indices) plus
//! static attributes, phenotype labels, and a mortality outcome. Records are
//! encoded into binary matrices whose row 0 is a conditioning row carrying
//! the start marker, static tokens, and labels; rows `1..=k` are visits; the
//! final row is an end-of-record marker.

mod encode;
mod io;
mod vocab;

pub use encode::{decode_matrix, encode_record, RecordMatrix};
pub use io::{read_cohort, read_vocabulary, write_cohort, write_vocabulary, vocab_path_for};
pub use vocab::{build_vocabulary, CodeVocabulary, LAB_PREFIX, RARE_LAB, RARE_MEDICAL};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
    Oversampled,
    Merged,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::Real
    }
}

/// One visit: the set of vocabulary indices observed, restricted to the
/// medical-code and lab sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub codes: BTreeSet<usize>,
}

impl Visit {
    pub fn new(codes: impl IntoIterator<Item = usize>) -> Self {
        Visit { codes: codes.into_iter().collect() }
    }
}

/// A patient: ordered visits plus static context and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub static_attrs: BTreeMap<String, String>,
    pub labels: BTreeSet<String>,
    pub visits: Vec<Visit>,
    /// Binary mortality flag; expired = 1.
    pub outcome: u8,
    pub provenance: Provenance,
    /// Set when the record was cut off at the horizon during decoding.
    pub truncated: bool,
}

impl PatientRecord {
    pub fn group<'a>(&'a self, attribute: &str) -> Result<&'a str> {
        self.static_attrs
            .get(attribute)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!(
                "record '{}' is missing the sensitive attribute '{attribute}'",
                self.patient_id
            )))
    }
}

/// On-disk record shape: codes as strings, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawRecord {
    pub patient_id: String,
    #[serde(rename = "static")]
    pub static_attrs: BTreeMap<String, String>,
    pub labels: BTreeSet<String>,
    pub visits: Vec<Vec<String>>,
    pub outcome: u8,
    #[serde(default, skip_serializing_if = "is_real")]
    pub provenance: Provenance,
}

fn is_real(p: &Provenance) -> bool {
    *p == Provenance::Real
}

impl RawRecord {
    /// Maps code strings to vocabulary indices. Codes absent from the
    /// vocabulary but recorded as pooled resolve to their section's RARE
    /// token; anything else is an error naming the code.
    pub fn resolve(&self, vocab: &CodeVocabulary) -> Result<PatientRecord> {
        let mut visits = Vec::with_capacity(self.visits.len());
        for raw in &self.visits {
            let mut codes = BTreeSet::new();
            for code in raw {
                codes.insert(vocab.resolve_code(code)?);
            }
            visits.push(Visit { codes });
        }
        Ok(PatientRecord {
            patient_id: self.patient_id.clone(),
            static_attrs: self.static_attrs.clone(),
            labels: self.labels.clone(),
            visits,
            outcome: self.outcome,
            provenance: self.provenance,
            truncated: false,
        })
    }

    pub fn from_record(record: &PatientRecord, vocab: &CodeVocabulary) -> Self {
        let visits = record
            .visits
            .iter()
            .map(|v| v.codes.iter().map(|&i| vocab.token(i).to_string()).collect())
            .collect();
        RawRecord {
            patient_id: record.patient_id.clone(),
            static_attrs: record.static_attrs.clone(),
            labels: record.labels.clone(),
            visits,
            outcome: record.outcome,
            provenance: record.provenance,
        }
    }
}

/// A set of records sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub vocabulary: Arc<CodeVocabulary>,
    pub provenance: Provenance,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>, vocabulary: Arc<CodeVocabulary>, provenance: Provenance) -> Self {
        Cohort { records, vocabulary, provenance }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts records per value of a static attribute.
    pub fn group_counts(&self, attribute: &str) -> Result<BTreeMap<String, usize>> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.group(attribute)?.to_string()).or_insert(0) += 1;
        }
        Ok(counts)
    }

    /// A cohort with the same vocabulary and a subset of records.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            vocabulary: Arc::clone(&self.vocabulary),
            provenance: self.provenance,
        }
    }

    /// Verifies every record carries the sensitive attribute and, when a
    /// group set is given, that its value is one of the allowed groups.
    pub fn validate_groups(&self, attribute: &str, allowed: Option<&[String]>) -> Result<()> {
        for r in &self.records {
            let g = r.group(attribute)?;
            if let Some(allowed) = allowed {
                if !allowed.iter().any(|a| a == g) {
                    return Err(Error::UnknownGroup(g.to_string()));
                }
            }
        }
        Ok(())
    }
}
