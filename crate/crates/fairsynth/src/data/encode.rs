//! Record/matrix conversion.

use ndarray::Array2;

use super::vocab::{CodeVocabulary, EXPIRED_TOKEN, SEC_LAB, SEC_MEDICAL, SEC_PHENOTYPE, SEC_STATIC};
use super::{PatientRecord, Provenance, Visit};
use crate::error::{Error, Result};

/// Binary visit matrix plus its loss mask.
///
/// Row 0 conditions generation: the start marker, static tokens (including
/// the expired flag when the outcome is positive), and phenotype labels.
/// Rows `1..=k` are visits with the end-of-visit marker set; row `k+1`
/// carries only the end-of-record marker. The mask selects positions scored
/// by the reconstruction loss: all of rows `1..=k`, and only the
/// end-of-record cell in the final row.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMatrix {
    pub patient_id: String,
    pub values: Array2<f64>,
    pub mask: Array2<f64>,
}

impl RecordMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Encodes a record into its binary matrix. The record must fit the horizon:
/// `|visits| <= t_max - 2`.
pub fn encode_record(
    record: &PatientRecord,
    vocab: &CodeVocabulary,
    t_max: usize,
) -> Result<RecordMatrix> {
    let k = record.visits.len();
    if k + 2 > t_max {
        return Err(Error::HorizonExceeded {
            id: record.patient_id.clone(),
            n_visits: k,
            max: t_max.saturating_sub(2),
        });
    }
    let c = vocab.len();
    let t = k + 2;
    let mut values = Array2::zeros((t, c));
    let mut mask = Array2::zeros((t, c));

    values[[0, vocab.start_idx()]] = 1.0;
    for (attr, val) in &record.static_attrs {
        let token = format!("{attr}={val}");
        let idx = vocab
            .index_of(&token)
            .ok_or_else(|| Error::UnknownCode(token.clone()))?;
        values[[0, idx]] = 1.0;
    }
    if record.outcome == 1 {
        let idx = vocab
            .index_of(EXPIRED_TOKEN)
            .ok_or_else(|| Error::UnknownCode(EXPIRED_TOKEN.to_string()))?;
        values[[0, idx]] = 1.0;
    }
    for label in &record.labels {
        let idx = vocab
            .index_of(label)
            .ok_or_else(|| Error::UnknownCode(label.clone()))?;
        values[[0, idx]] = 1.0;
    }

    let (code_start, code_end) = vocab.visit_code_range();
    for (v, visit) in record.visits.iter().enumerate() {
        let row = v + 1;
        for &idx in &visit.codes {
            if idx < code_start || idx >= code_end {
                return Err(Error::InvalidArgument(format!(
                    "visit code index {idx} outside the medical/lab sections"
                )));
            }
            values[[row, idx]] = 1.0;
        }
        values[[row, vocab.end_visit_idx()]] = 1.0;
        for j in 0..c {
            mask[[row, j]] = 1.0;
        }
    }

    let last = t - 1;
    values[[last, vocab.end_record_idx()]] = 1.0;
    mask[[last, vocab.end_record_idx()]] = 1.0;

    Ok(RecordMatrix {
        patient_id: record.patient_id.clone(),
        values,
        mask,
    })
}

/// Reconstructs a record from a binary matrix (cells are read as set when
/// greater than one half).
///
/// Visits are taken in row order up to the first end-of-record row; rows
/// with no medical or lab code are dropped. A matrix with no end-of-record
/// marker is decoded to the last row and flagged as truncated.
pub fn decode_matrix(matrix: &RecordMatrix, vocab: &CodeVocabulary) -> Result<PatientRecord> {
    let c = vocab.len();
    if matrix.values.ncols() != c {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} columns, vocabulary has {c}",
            matrix.values.ncols()
        )));
    }
    let set = |row: usize, col: usize| matrix.values[[row, col]] > 0.5;

    let mut static_attrs = std::collections::BTreeMap::new();
    let mut labels = std::collections::BTreeSet::new();
    let mut outcome = 0u8;
    let (st_s, st_e) = vocab.section(SEC_STATIC);
    for idx in st_s..st_e {
        if set(0, idx) {
            let token = vocab.token(idx);
            if token == EXPIRED_TOKEN {
                outcome = 1;
            } else if let Some(eq) = token.find('=') {
                static_attrs.insert(token[..eq].to_string(), token[eq + 1..].to_string());
            }
        }
    }
    let (ph_s, ph_e) = vocab.section(SEC_PHENOTYPE);
    for idx in ph_s..ph_e {
        if set(0, idx) {
            labels.insert(vocab.token(idx).to_string());
        }
    }

    let (med_s, med_e) = vocab.section(SEC_MEDICAL);
    let (lab_s, lab_e) = vocab.section(SEC_LAB);
    let mut visits = Vec::new();
    let mut truncated = true;
    for row in 1..matrix.values.nrows() {
        if set(row, vocab.end_record_idx()) {
            truncated = false;
            break;
        }
        let mut codes = std::collections::BTreeSet::new();
        for idx in (med_s..med_e).chain(lab_s..lab_e) {
            if set(row, idx) {
                codes.insert(idx);
            }
        }
        if !codes.is_empty() {
            visits.push(Visit { codes });
        }
    }

    Ok(PatientRecord {
        patient_id: matrix.patient_id.clone(),
        static_attrs,
        labels,
        visits,
        outcome,
        provenance: Provenance::Real,
        truncated,
    })
}
