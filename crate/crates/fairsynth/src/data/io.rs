//! Cohort and vocabulary files.
//!
//! Cohorts are UTF-8 JSON lines, one record per line, with keys
//! `patient_id`, `static`, `labels`, `visits` (arrays of code strings),
//! `outcome`, and an optional `provenance` for non-real records. The
//! vocabulary travels in a sidecar JSON file next to the cohort, derived by
//! [`vocab_path_for`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::vocab::CodeVocabulary;
use super::{Cohort, Provenance, RawRecord};
use crate::error::{Error, Result};

/// Sidecar vocabulary path for a cohort file: the extension is replaced by
/// `vocab.json` (`cohort.jsonl` -> `cohort.vocab.json`).
pub fn vocab_path_for(cohort_path: &Path) -> PathBuf {
    cohort_path.with_extension("vocab.json")
}

pub fn write_vocabulary(vocab: &CodeVocabulary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&vocab.to_file())?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<CodeVocabulary> {
    let text = fs::read_to_string(path)?;
    CodeVocabulary::from_json(&text)
}

/// Writes the records and the sidecar vocabulary.
pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut out = String::new();
    for record in &cohort.records {
        let raw = RawRecord::from_record(record, &cohort.vocabulary);
        out.push_str(&serde_json::to_string(&raw)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    write_vocabulary(&cohort.vocabulary, &vocab_path_for(path))
}

/// Reads a cohort and its sidecar vocabulary. A malformed line is reported
/// with its 1-based line number; codes missing from the vocabulary are
/// errors naming the code.
pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let vocab = Arc::new(read_vocabulary(&vocab_path_for(path))?);
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|source| Error::MalformedLine { line: i + 1, source })?;
        records.push(raw.resolve(&vocab)?);
    }
    let provenance = if records.iter().all(|r| r.provenance == Provenance::Real) {
        Provenance::Real
    } else {
        Provenance::Merged
    };
    Ok(Cohort { records, vocabulary: vocab, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocabulary, PatientRecord};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn toy_cohort(n: usize, seed: u64) -> Cohort {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code_names: Vec<String> = (0..15).map(|i| format!("c{i:02}")).collect();
        let labs: Vec<String> = (0..4).map(|i| format!("lab:alb:bin{i}")).collect();
        let mut raws = Vec::new();
        for i in 0..n {
            let mut static_attrs = BTreeMap::new();
            static_attrs.insert("ethnicity".into(), if i % 3 == 0 { "g1" } else { "g2" }.into());
            let mut labels = BTreeSet::new();
            if rng.gen_bool(0.4) {
                labels.insert("phen:a".to_string());
            }
            let visits: Vec<Vec<String>> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let mut v: Vec<String> = (0..rng.gen_range(1..=3))
                        .map(|_| code_names[rng.gen_range(0..code_names.len())].clone())
                        .collect();
                    if rng.gen_bool(0.5) {
                        v.push(labs[rng.gen_range(0..labs.len())].clone());
                    }
                    v
                })
                .collect();
            raws.push(RawRecord {
                patient_id: format!("p{i:04}"),
                static_attrs,
                labels,
                visits,
                outcome: rng.gen_bool(0.2) as u8,
                provenance: Default::default(),
            });
        }
        let vocab = Arc::new(build_vocabulary(&raws, 1));
        let records: Vec<PatientRecord> =
            raws.iter().map(|r| r.resolve(&vocab).unwrap()).collect();
        Cohort::new(records, vocab, Provenance::Real)
    }

    #[test]
    fn write_then_read_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let cohort = toy_cohort(10, 5);
        write_cohort(&cohort, &path).unwrap();
        let back = read_cohort(&path).unwrap();
        assert_eq!(back.records, cohort.records);
        assert_eq!(*back.vocabulary, *cohort.vocabulary);
    }

    #[test]
    fn malformed_line_errors_with_its_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let cohort = toy_cohort(4, 6);
        write_cohort(&cohort, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[2] = "{not json".to_string();
        text = broken.join("\n");
        fs::write(&path, text).unwrap();
        match read_cohort(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_code_errors_naming_the_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let cohort = toy_cohort(2, 7);
        write_cohort(&cohort, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let patched = text.replacen("c0", "zz-bogus", 1);
        assert_ne!(text, patched, "fixture should contain a c0x code");
        fs::write(&path, patched).unwrap();
        match read_cohort(&path) {
            Err(Error::UnknownCode(code)) => assert!(code.starts_with("zz-bogus")),
            other => panic!("expected an unknown-code error, got {other:?}"),
        }
    }

    #[test]
    fn serialization_is_byte_stable_across_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path1 = dir.path().join("one.jsonl");
        let path2 = dir.path().join("two.jsonl");
        let cohort = toy_cohort(1000, 8);
        write_cohort(&cohort, &path1).unwrap();
        let back = read_cohort(&path1).unwrap();
        write_cohort(&back, &path2).unwrap();
        let b1 = fs::read(&path1).unwrap();
        let b2 = fs::read(&path2).unwrap();
        assert_eq!(b1, b2, "re-serialization changed bytes");
    }
}
