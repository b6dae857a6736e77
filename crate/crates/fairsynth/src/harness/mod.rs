//! Experiment plumbing: a biased toy-cohort simulator standing in for
//! restricted hospital data, stratified splitting, and seeded grid runs.

mod experiment;

pub use experiment::{
    lambda_sweep, run_experiment, validate_report_json, CellStat, DataSource, ExperimentConfig,
    LambdaRow, MetricsReport, ReportCell, SweepReport,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, WeightedIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{build_vocabulary, Cohort, Provenance, RawRecord};
use crate::error::{Error, Result};

/// Derives an independent sub-seed from a base seed and a purpose string,
/// so every stage of a run draws from its own stream.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Simulator settings for a group-biased synthetic-benchmark cohort.
///
/// Defaults follow an ICU population with five ethnicity groups of very
/// different sizes and group-specific mortality rates. `bias_strength`
/// shifts both code prevalence and how reliably mortality is signaled per
/// group: at zero all groups share one code distribution and one signal
/// strength; as it grows, smaller groups' outcomes become harder to read
/// from their records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyCohortConfig {
    pub n_patients: usize,
    pub group_proportions: BTreeMap<String, f64>,
    pub base_mortality: BTreeMap<String, f64>,
    pub bias_strength: f64,
    pub mean_visits: f64,
    /// Hard cap on visits per record; keep below the generator horizon.
    pub max_visits: usize,
    pub n_codes: usize,
    pub seed: u64,
}

impl Default for ToyCohortConfig {
    fn default() -> Self {
        let groups = [
            ("White", 0.6928, 0.1036),
            ("Black", 0.0974, 0.0554),
            ("Hispanic", 0.0372, 0.0591),
            ("Asian", 0.0330, 0.0545),
            ("Others", 0.1396, 0.1189),
        ];
        ToyCohortConfig {
            n_patients: 5000,
            group_proportions: groups
                .iter()
                .map(|(g, p, _)| (g.to_string(), *p))
                .collect(),
            base_mortality: groups
                .iter()
                .map(|(g, _, m)| (g.to_string(), *m))
                .collect(),
            bias_strength: 0.5,
            mean_visits: 3.0,
            max_visits: 8,
            n_codes: 40,
            seed: 0,
        }
    }
}

impl ToyCohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        if self.group_proportions.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        let total: f64 = self.group_proportions.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "group proportions sum to {total}, expected 1"
            )));
        }
        if self.group_proportions.values().any(|p| *p <= 0.0) {
            return Err(Error::Config("group proportions must be positive".into()));
        }
        for (g, rate) in &self.base_mortality {
            if !(0.0..=1.0).contains(rate) {
                return Err(Error::Config(format!(
                    "mortality rate for '{g}' is {rate}, outside [0, 1]"
                )));
            }
        }
        for g in self.group_proportions.keys() {
            if !self.base_mortality.contains_key(g) {
                return Err(Error::Config(format!("group '{g}' has no mortality rate")));
            }
        }
        if self.bias_strength < 0.0 {
            return Err(Error::Config("bias strength must be non-negative".into()));
        }
        if self.mean_visits < 1.0 || self.max_visits == 0 {
            return Err(Error::Config("visit counts must be at least one".into()));
        }
        if self.n_codes < 10 {
            return Err(Error::Config("at least ten codes are required".into()));
        }
        Ok(())
    }

    fn n_signal(&self) -> usize {
        (self.n_codes / 10).max(2)
    }

    /// Per-group probability that an expired patient's record carries the
    /// mortality signal. Groups ranked by size; the largest keeps full
    /// strength, smaller ones lose up to `bias_strength` of it.
    pub fn signal_strengths(&self) -> BTreeMap<String, f64> {
        let mut by_size: Vec<(&String, &f64)> = self.group_proportions.iter().collect();
        by_size.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap().then(a.0.cmp(b.0)));
        let k = by_size.len();
        by_size
            .iter()
            .enumerate()
            .map(|(pos, (g, _))| {
                let rank = if k > 1 { pos as f64 / (k - 1) as f64 } else { 0.0 };
                let strength = 0.9 * (1.0 - self.bias_strength * rank);
                ((*g).clone(), strength.clamp(0.05, 0.95))
            })
            .collect()
    }
}

/// Probability that a survivor's record spuriously carries the signal.
const SIGNAL_NOISE: f64 = 0.05;

/// Simulates a cohort whose mortality is predictable from a small set of
/// signal codes, with group-dependent reliability and code prevalence.
pub fn generate_toy_cohort(config: &ToyCohortConfig) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let groups: Vec<&String> = config.group_proportions.keys().collect();
    let weights: Vec<f64> = groups
        .iter()
        .map(|g| config.group_proportions[*g])
        .collect();
    let group_dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("invalid group proportions: {e}")))?;
    let strengths = config.signal_strengths();

    let n_signal = config.n_signal();
    let n_bg = config.n_codes - n_signal;
    let signal_codes: Vec<String> = (0..n_signal).map(|i| format!("sig{i:02}")).collect();
    let bg_codes: Vec<String> = (0..n_bg).map(|i| format!("bg{i:03}")).collect();

    // Group-tilted background popularity: the ranking is rotated per group
    // by an offset proportional to the bias strength.
    let bg_dists: Vec<WeightedIndex<f64>> = (0..groups.len())
        .map(|g_idx| {
            let shift =
                ((config.bias_strength * n_bg as f64 / 4.0).round() as usize) * g_idx;
            let w: Vec<f64> = (0..n_bg)
                .map(|j| 1.0 / (1.0 + ((j + shift) % n_bg) as f64))
                .collect();
            WeightedIndex::new(&w).expect("positive weights")
        })
        .collect();

    let visit_dist = Poisson::new(config.mean_visits)
        .map_err(|e| Error::Config(format!("invalid mean visit count: {e}")))?;

    let mut raws = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let g_idx = group_dist.sample(&mut rng);
        let group = groups[g_idx].clone();
        let outcome = rng.gen_bool(config.base_mortality[&group]) as u8;

        let n_visits = (visit_dist.sample(&mut rng) as usize).clamp(1, config.max_visits);
        let mut visits: Vec<Vec<String>> = (0..n_visits)
            .map(|_| {
                let n_codes_here = rng.gen_range(1..=4);
                let mut codes = std::collections::BTreeSet::new();
                for _ in 0..n_codes_here {
                    codes.insert(bg_codes[bg_dists[g_idx].sample(&mut rng)].clone());
                }
                codes.into_iter().collect()
            })
            .collect();

        let signaled = if outcome == 1 {
            rng.gen_bool(strengths[&group])
        } else {
            rng.gen_bool(SIGNAL_NOISE)
        };
        if signaled {
            let code = signal_codes[rng.gen_range(0..n_signal)].clone();
            let last = visits.last_mut().expect("at least one visit");
            if !last.contains(&code) {
                last.push(code);
            }
        }

        raws.push(RawRecord {
            patient_id: format!("toy_{i:06}"),
            static_attrs: BTreeMap::from([("ethnicity".to_string(), group)]),
            labels: std::collections::BTreeSet::new(),
            visits,
            outcome,
            provenance: Provenance::Real,
        });
    }

    let vocab = Arc::new(build_vocabulary(&raws, 1));
    let records = raws
        .iter()
        .map(|r| r.resolve(&vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort::new(records, vocab, Provenance::Real))
}

/// Splits a cohort into train/validation/test, stratified by the given
/// attribute with largest-remainder rounding per group. Groups smaller
/// than three records go wholly to train with a warning.
pub fn split(
    cohort: &Cohort,
    ratios: [f64; 3],
    attribute: &str,
    seed: u64,
) -> Result<(Cohort, Cohort, Cohort)> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios sum to {total}, expected 1"
        )));
    }
    if ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidArgument("split ratios must be non-negative".into()));
    }

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.records.iter().enumerate() {
        members.entry(r.group(attribute)?).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (group, mut idx) in members {
        if idx.len() < 3 {
            log::warn!("group '{group}' has {} records; keeping it in train", idx.len());
            parts[0].extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut leftover = n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &slot in &order {
            if leftover == 0 {
                break;
            }
            sizes[slot] += 1;
            leftover -= 1;
        }
        let mut cursor = 0;
        for (slot, &size) in sizes.iter().enumerate() {
            parts[slot].extend(&idx[cursor..cursor + size]);
            cursor += size;
        }
    }

    let build = |indices: &mut Vec<usize>| {
        indices.sort_unstable();
        Cohort::new(
            indices.iter().map(|&i| cohort.records[i].clone()).collect(),
            cohort.vocabulary.clone(),
            cohort.provenance,
        )
    };
    let [mut a, mut b, mut c] = parts;
    Ok((build(&mut a), build(&mut b), build(&mut c)))
}
