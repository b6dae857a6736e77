//! Vocabulary construction: sectioned, frequency-ordered, deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RawRecord;
use crate::error::{Error, Result};

/// Prefix marking a visit token as a discretized lab value.
pub const LAB_PREFIX: &str = "lab:";
/// Pool token for medical codes below the frequency cutoff.
pub const RARE_MEDICAL: &str = "<RARE:medical>";
/// Pool token for lab tokens below the frequency cutoff.
pub const RARE_LAB: &str = "<RARE:lab>";
/// Static token recording a positive mortality outcome.
pub const EXPIRED_TOKEN: &str = "expired";

pub const SEC_MEDICAL: &str = "medical";
pub const SEC_LAB: &str = "lab";
pub const SEC_PHENOTYPE: &str = "phenotype";
pub const SEC_STATIC: &str = "static";
pub const SEC_SPECIAL: &str = "special";

const SPECIAL_TOKENS: [&str; 4] = ["<START>", "<LABEL_VISIT>", "<END_VISIT>", "<END_RECORD>"];

/// Immutable token table with disjoint sections for medical codes, lab
/// tokens, phenotype labels, static tokens, and the four special markers.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVocabulary {
    codes: Vec<String>,
    index: HashMap<String, usize>,
    sections: BTreeMap<String, (usize, usize)>,
    pooled: BTreeSet<String>,
    start: usize,
    label_visit: usize,
    end_visit: usize,
    end_record: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    codes: Vec<String>,
    sections: BTreeMap<String, (usize, usize)>,
    #[serde(default)]
    pooled: BTreeSet<String>,
}

impl CodeVocabulary {
    fn from_parts(
        codes: Vec<String>,
        sections: BTreeMap<String, (usize, usize)>,
        pooled: BTreeSet<String>,
    ) -> Result<Self> {
        let index: HashMap<String, usize> =
            codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        if index.len() != codes.len() {
            return Err(Error::VocabularyMismatch("duplicate token in vocabulary".into()));
        }
        let find = |tok: &str| {
            index
                .get(tok)
                .copied()
                .ok_or_else(|| Error::VocabularyMismatch(format!("missing special token {tok}")))
        };
        Ok(CodeVocabulary {
            start: find(SPECIAL_TOKENS[0])?,
            label_visit: find(SPECIAL_TOKENS[1])?,
            end_visit: find(SPECIAL_TOKENS[2])?,
            end_record: find(SPECIAL_TOKENS[3])?,
            codes,
            index,
            sections,
            pooled,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.codes[idx]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index for a code string, mapping pooled codes to their section's RARE
    /// token. Unknown codes are an error naming the code.
    pub fn resolve_code(&self, code: &str) -> Result<usize> {
        if let Some(i) = self.index_of(code) {
            return Ok(i);
        }
        if self.pooled.contains(code) {
            let rare = if code.starts_with(LAB_PREFIX) { RARE_LAB } else { RARE_MEDICAL };
            return self
                .index_of(rare)
                .ok_or_else(|| Error::UnknownCode(code.to_string()));
        }
        Err(Error::UnknownCode(code.to_string()))
    }

    pub fn section(&self, name: &str) -> (usize, usize) {
        self.sections.get(name).copied().unwrap_or((0, 0))
    }

    pub fn sections(&self) -> &BTreeMap<String, (usize, usize)> {
        &self.sections
    }

    pub fn in_section(&self, idx: usize, name: &str) -> bool {
        let (s, e) = self.section(name);
        idx >= s && idx < e
    }

    /// Contiguous range covering medical codes and lab tokens.
    pub fn visit_code_range(&self) -> (usize, usize) {
        let (ms, me) = self.section(SEC_MEDICAL);
        let (ls, le) = self.section(SEC_LAB);
        if le > ls {
            debug_assert_eq!(me, ls);
            (ms, le)
        } else {
            (ms, me)
        }
    }

    pub fn start_idx(&self) -> usize {
        self.start
    }

    pub fn label_visit_idx(&self) -> usize {
        self.label_visit
    }

    pub fn end_visit_idx(&self) -> usize {
        self.end_visit
    }

    pub fn end_record_idx(&self) -> usize {
        self.end_record
    }

    /// Content hash used to check cohort compatibility before merges.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for c in &self.codes {
            hasher.update(c.as_bytes());
            hasher.update([0u8]);
        }
        for (name, (s, e)) in &self.sections {
            hasher.update(name.as_bytes());
            hasher.update(s.to_le_bytes());
            hasher.update(e.to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    pub(crate) fn to_file(&self) -> impl Serialize {
        VocabFile {
            codes: self.codes.clone(),
            sections: self.sections.clone(),
            pooled: self.pooled.clone(),
        }
    }

    pub(crate) fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        CodeVocabulary::from_parts(file.codes, file.sections, file.pooled)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the token table from raw records.
///
/// Medical codes and lab tokens occurring fewer than `min_code_count` times
/// (counting one occurrence per visit) are pooled into their section's RARE
/// token. Within a section, tokens are ordered by descending frequency, ties
/// broken lexicographically. Phenotype and static tokens are never pooled.
pub fn build_vocabulary(records: &[RawRecord], min_code_count: usize) -> CodeVocabulary {
    let mut medical: BTreeMap<String, usize> = BTreeMap::new();
    let mut lab: BTreeMap<String, usize> = BTreeMap::new();
    let mut phenotype: BTreeMap<String, usize> = BTreeMap::new();
    let mut statics: BTreeMap<String, usize> = BTreeMap::new();
    let mut expired_count = 0usize;

    for r in records {
        for visit in &r.visits {
            let unique: BTreeSet<&String> = visit.iter().collect();
            for code in unique {
                if code.starts_with(LAB_PREFIX) {
                    *lab.entry(code.clone()).or_insert(0) += 1;
                } else {
                    *medical.entry(code.clone()).or_insert(0) += 1;
                }
            }
        }
        for l in &r.labels {
            *phenotype.entry(l.clone()).or_insert(0) += 1;
        }
        for (k, v) in &r.static_attrs {
            *statics.entry(format!("{k}={v}")).or_insert(0) += 1;
        }
        if r.outcome == 1 {
            expired_count += 1;
        }
    }
    statics.insert(EXPIRED_TOKEN.to_string(), expired_count);

    let by_freq = |counts: &BTreeMap<String, usize>| -> Vec<String> {
        let mut items: Vec<(&String, &usize)> = counts.iter().collect();
        items.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        items.into_iter().map(|(k, _)| k.clone()).collect()
    };

    let mut pooled = BTreeSet::new();
    let split_pooled = |counts: &BTreeMap<String, usize>, pooled: &mut BTreeSet<String>| {
        let mut kept: BTreeMap<String, usize> = BTreeMap::new();
        for (code, &n) in counts {
            if n >= min_code_count {
                kept.insert(code.clone(), n);
            } else {
                pooled.insert(code.clone());
            }
        }
        kept
    };
    let medical_kept = split_pooled(&medical, &mut pooled);
    let lab_kept = split_pooled(&lab, &mut pooled);

    let mut codes = Vec::new();
    let mut sections = BTreeMap::new();

    let med_start = codes.len();
    codes.extend(by_freq(&medical_kept));
    codes.push(RARE_MEDICAL.to_string());
    sections.insert(SEC_MEDICAL.to_string(), (med_start, codes.len()));

    let lab_start = codes.len();
    codes.extend(by_freq(&lab_kept));
    if !lab.is_empty() {
        codes.push(RARE_LAB.to_string());
    }
    sections.insert(SEC_LAB.to_string(), (lab_start, codes.len()));

    let ph_start = codes.len();
    codes.extend(by_freq(&phenotype));
    sections.insert(SEC_PHENOTYPE.to_string(), (ph_start, codes.len()));

    let st_start = codes.len();
    codes.extend(by_freq(&statics));
    sections.insert(SEC_STATIC.to_string(), (st_start, codes.len()));

    let sp_start = codes.len();
    codes.extend(SPECIAL_TOKENS.iter().map(|s| s.to_string()));
    sections.insert(SEC_SPECIAL.to_string(), (sp_start, codes.len()));

    CodeVocabulary::from_parts(codes, sections, pooled)
        .expect("constructed vocabulary is well-formed")
}
