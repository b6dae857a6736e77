//! Group-fairness metrics and their differentiable surrogates.
//!
//! Hard metrics (disparate impact, worst-case TPR, the disparate-impact
//! loss) are pure counting functions used for evaluation and as test
//! oracles. Each has a soft counterpart built on the tape for use inside
//! training objectives: indicators become steep sigmoids around the 0.5
//! threshold and the minimum over groups becomes a softened minimum.

mod feedback;

pub use feedback::{downstream_feedback, FeedbackMetric};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::nn::tape::{concat_rows, softmin, Tensor};

/// Default steepness for sigmoid-relaxed indicators and the softened
/// minimum.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
/// Default minimum positive count for a group to enter worst-case TPR.
pub const DEFAULT_MIN_POSITIVES: usize = 5;

/// How a sensitive attribute maps records to a canonical group set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupLabeling {
    pub attribute: String,
    pub groups: Vec<String>,
}

impl GroupLabeling {
    /// Groups are the sorted distinct values of the attribute in the cohort.
    pub fn from_cohort(attribute: &str, cohort: &Cohort) -> Result<Self> {
        let counts = cohort.group_counts(attribute)?;
        Ok(GroupLabeling {
            attribute: attribute.to_string(),
            groups: counts.into_keys().collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::UnknownGroup(name.to_string()))
    }

    /// Group index per record, in record order.
    pub fn indices(&self, cohort: &Cohort) -> Result<Vec<usize>> {
        cohort
            .records
            .iter()
            .map(|r| self.index_of(r.group(&self.attribute)?))
            .collect()
    }

    /// Record counts per group.
    pub fn sizes(&self, groups: &[usize]) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k()];
        for &g in groups {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Fairness objective selected for generator training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Di,
    Wtpr,
}

/// Resolves an objective by name; unknown names list what is registered.
pub fn objective_from_name(name: &str) -> Result<ObjectiveKind> {
    match name {
        "di" => Ok(ObjectiveKind::Di),
        "wtpr" => Ok(ObjectiveKind::Wtpr),
        other => Err(Error::UnknownObjective {
            name: other.to_string(),
            known: "di, wtpr".to_string(),
        }),
    }
}

/// How per-visit probabilities collapse into one row per patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MaskedSum,
    MaskedMean,
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::MaskedSum
    }
}

/// A fully configured fairness objective.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FairnessObjective {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub aggregation: Aggregation,
    pub temperature: f64,
    pub reference_group: Option<usize>,
}

impl Default for FairnessObjective {
    fn default() -> Self {
        FairnessObjective {
            kind: ObjectiveKind::Di,
            aggregation: Aggregation::MaskedSum,
            temperature: DEFAULT_TEMPERATURE,
            reference_group: None,
        }
    }
}

/// Per-group rates and metrics attached to an evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessReport {
    pub groups: Vec<String>,
    pub sizes: Vec<usize>,
    pub selection_rates: Vec<f64>,
    pub tprs: Vec<Option<f64>>,
    pub reference_group: String,
    pub disparate_impact: f64,
    pub worst_tpr: Option<f64>,
    pub excluded_groups: Vec<String>,
}

fn group_sizes(groups: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    for &g in groups {
        debug_assert!(g < k, "group index out of range");
        sizes[g] += 1;
    }
    sizes
}

/// Largest group, ties broken toward the lower index.
fn default_reference(sizes: &[usize]) -> usize {
    let mut best = 0;
    for (g, &n) in sizes.iter().enumerate() {
        if n > sizes[best] {
            best = g;
        }
    }
    best
}

pub(crate) fn resolve_reference(sizes: &[usize], reference: Option<usize>) -> usize {
    match reference {
        Some(r) => r,
        None => default_reference(sizes),
    }
}

/// Disparate impact over binary decisions: the minimum, across non-reference
/// groups, of that group's selection rate divided by the reference group's.
/// A zero reference rate yields NaN with a warning.
pub fn disparate_impact(
    decisions: &[u8],
    groups: &[usize],
    k: usize,
    reference: Option<usize>,
) -> (f64, Vec<f64>, usize) {
    assert_eq!(decisions.len(), groups.len());
    let sizes = group_sizes(groups, k);
    let reference = resolve_reference(&sizes, reference);
    let mut favorable = vec![0usize; k];
    for (&d, &g) in decisions.iter().zip(groups) {
        if d == 1 {
            favorable[g] += 1;
        }
    }
    let rates: Vec<f64> = favorable
        .iter()
        .zip(&sizes)
        .map(|(&f, &n)| if n == 0 { f64::NAN } else { f as f64 / n as f64 })
        .collect();
    if sizes[reference] == 0 || rates[reference] == 0.0 {
        log::warn!("reference group has zero selection rate; disparate impact undefined");
        return (f64::NAN, rates, reference);
    }
    let mut di = f64::INFINITY;
    for g in 0..k {
        if g == reference || sizes[g] == 0 {
            continue;
        }
        di = di.min(rates[g] / rates[reference]);
    }
    if !di.is_finite() {
        // Single populated group: no pair to compare.
        return (f64::NAN, rates, reference);
    }
    (di, rates, reference)
}

/// Worst-case true positive rate across groups holding at least
/// `min_positives` positive labels. Returns the worst value, per-group TPRs
/// (None when a group has no positives), and the excluded group indices.
pub fn worst_tpr(
    decisions: &[u8],
    labels: &[u8],
    groups: &[usize],
    k: usize,
    min_positives: usize,
) -> Result<(f64, Vec<Option<f64>>, Vec<usize>)> {
    assert_eq!(decisions.len(), labels.len());
    assert_eq!(decisions.len(), groups.len());
    let mut tp = vec![0usize; k];
    let mut pos = vec![0usize; k];
    for ((&d, &y), &g) in decisions.iter().zip(labels).zip(groups) {
        if y == 1 {
            pos[g] += 1;
            if d == 1 {
                tp[g] += 1;
            }
        }
    }
    let tprs: Vec<Option<f64>> = tp
        .iter()
        .zip(&pos)
        .map(|(&t, &p)| if p == 0 { None } else { Some(t as f64 / p as f64) })
        .collect();
    let mut excluded = Vec::new();
    let mut worst = f64::INFINITY;
    let mut any = false;
    for g in 0..k {
        if pos[g] < min_positives {
            excluded.push(g);
            continue;
        }
        let tpr = tprs[g].expect("positives imply a defined TPR");
        if tpr < worst {
            worst = tpr;
        }
        any = true;
    }
    if !any {
        return Err(Error::NoEligibleGroup { min_positives });
    }
    Ok((worst, tprs, excluded))
}

/// Binary F1 over decisions; zero when no true positive exists.
pub fn f1_score(decisions: &[u8], labels: &[u8]) -> f64 {
    assert_eq!(decisions.len(), labels.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&d, &y) in decisions.iter().zip(labels) {
        match (d, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Hard disparate-impact loss over per-patient probability rows.
///
/// Per patient, positive predictions are counted with the indicator
/// `P > 0.5`; group rates are the per-group mean counts; the loss is
/// `|1 - DI|` with DI the minimum non-reference/reference rate ratio.
/// Fewer than two groups yield zero; a zero reference rate caps the loss at
/// one with a warning.
pub fn di_loss_hard(p: &Array2<f64>, groups: &[usize], k: usize, reference: Option<usize>) -> f64 {
    assert_eq!(p.nrows(), groups.len());
    if k < 2 {
        log::warn!("disparate-impact loss over fewer than two groups is zero");
        return 0.0;
    }
    let sizes = group_sizes(groups, k);
    let reference = resolve_reference(&sizes, reference);
    let mut sums = vec![0.0f64; k];
    for (i, &g) in groups.iter().enumerate() {
        let count = p.row(i).iter().filter(|&&v| v > 0.5).count();
        sums[g] += count as f64;
    }
    let rate = |g: usize| sums[g] / sizes[g] as f64;
    if sizes[reference] == 0 || rate(reference) == 0.0 {
        log::warn!("reference group rate is zero; disparate-impact loss capped at 1");
        return 1.0;
    }
    let mut di = f64::INFINITY;
    for g in 0..k {
        if g == reference || sizes[g] == 0 {
            continue;
        }
        di = di.min(rate(g) / rate(reference));
    }
    if !di.is_finite() {
        return 0.0;
    }
    (1.0 - di).abs()
}

/// Soft, trainable disparate-impact loss: the indicator is relaxed to a
/// steep sigmoid at the 0.5 threshold. The group attaining the minimum
/// ratio is chosen on values, so the loss is differentiable almost
/// everywhere.
pub fn di_loss_soft(
    p: &Tensor,
    groups: &[usize],
    k: usize,
    temperature: f64,
    reference: Option<usize>,
) -> Tensor {
    let (n, _) = p.shape();
    assert_eq!(n, groups.len());
    if k < 2 {
        return Tensor::constant(Array2::zeros((1, 1)));
    }
    let sizes = group_sizes(groups, k);
    let reference = resolve_reference(&sizes, reference);

    let soft = p.add_scalar(-0.5).scale(1.0 / temperature).sigmoid();
    let counts = soft.sum_axis1(); // n x 1
    let mut indicator = Array2::zeros((k, n));
    for (i, &g) in groups.iter().enumerate() {
        indicator[[g, i]] = 1.0;
    }
    let group_sums = Tensor::constant(indicator).matmul(&counts); // k x 1
    let size_col =
        Tensor::constant(Array2::from_shape_fn((k, 1), |(g, _)| (sizes[g].max(1)) as f64));
    let rates = group_sums.div(&size_col);

    let ref_rate_value = rates.value()[[reference, 0]];
    if sizes[reference] == 0 || ref_rate_value <= 1e-12 {
        log::warn!("reference group rate is zero; disparate-impact loss capped at 1");
        return Tensor::constant(Array2::from_elem((1, 1), 1.0));
    }

    let mut best: Option<(usize, f64)> = None;
    for g in 0..k {
        if g == reference || sizes[g] == 0 {
            continue;
        }
        let ratio = rates.value()[[g, 0]] / ref_rate_value;
        if best.map_or(true, |(_, r)| ratio < r) {
            best = Some((g, ratio));
        }
    }
    let (g_min, _) = match best {
        Some(b) => b,
        None => return Tensor::constant(Array2::zeros((1, 1))),
    };
    let ratio = rates.select(g_min, 0).div(&rates.select(reference, 0));
    ratio.add_scalar(-1.0).abs()
}

/// Soft worst-case-TPR surrogate: `1 - softmin_g(soft-TPR_g)`, where the
/// per-group soft TPR averages sigmoid-thresholded probabilities over the
/// positions whose label is positive. Groups without positive labels are
/// excluded; having none at all is an error.
pub fn wtpr_surrogate(
    p: &Tensor,
    labels: &Array2<f64>,
    groups: &[usize],
    k: usize,
    temperature: f64,
) -> Result<Tensor> {
    let (n, m) = p.shape();
    assert_eq!(labels.dim(), (n, m), "labels must align with probabilities");
    assert_eq!(n, groups.len());

    let mut pos_per_group = vec![0.0f64; k];
    for (i, &g) in groups.iter().enumerate() {
        pos_per_group[g] += labels.row(i).sum();
    }
    let eligible: Vec<usize> = (0..k).filter(|&g| pos_per_group[g] > 0.0).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleGroup { min_positives: 1 });
    }

    let soft = p.add_scalar(-0.5).scale(1.0 / temperature).sigmoid();
    let hits = soft.mul(&Tensor::constant(labels.clone())).sum_axis1(); // n x 1
    let mut indicator = Array2::zeros((eligible.len(), n));
    for (row, &g) in eligible.iter().enumerate() {
        for (i, &gi) in groups.iter().enumerate() {
            if gi == g {
                indicator[[row, i]] = 1.0;
            }
        }
    }
    let group_hits = Tensor::constant(indicator).matmul(&hits);
    let denom = Tensor::constant(Array2::from_shape_fn((eligible.len(), 1), |(row, _)| {
        pos_per_group[eligible[row]]
    }));
    let soft_tprs = group_hits.div(&denom);
    let worst = softmin(&soft_tprs, temperature);
    Ok(worst.scale(-1.0).add_scalar(1.0))
}

/// Collapses per-visit probability rows into a single row per patient.
/// `p` holds predictions for rows `1..` of a record matrix; `n_visits` of
/// those rows are visits and enter the aggregate.
pub fn aggregate_record_probs(p: &Tensor, n_visits: usize, aggregation: Aggregation) -> Tensor {
    let slice = p.slice_rows(0, n_visits);
    let sum = slice.sum_axis0();
    match aggregation {
        Aggregation::MaskedSum => sum,
        Aggregation::MaskedMean => sum.scale(1.0 / n_visits.max(1) as f64),
    }
}

/// Dispatches the configured fairness objective over aggregated per-patient
/// probabilities. A single group yields a constant zero with a warning.
pub fn fo_loss(
    p: &Tensor,
    targets: &Array2<f64>,
    groups: &[usize],
    k: usize,
    objective: &FairnessObjective,
) -> Result<Tensor> {
    if k <= 1 {
        log::warn!("fairness objective over a single group is zero");
        return Ok(Tensor::constant(Array2::zeros((1, 1))));
    }
    match objective.kind {
        ObjectiveKind::Di => Ok(di_loss_soft(
            p,
            groups,
            k,
            objective.temperature,
            objective.reference_group,
        )),
        ObjectiveKind::Wtpr => {
            wtpr_surrogate(p, targets, groups, k, objective.temperature)
        }
    }
}

/// Stacks per-record aggregated rows (1 x C each) into an N x C tensor.
pub fn stack_patient_rows(rows: &[Tensor]) -> Tensor {
    concat_rows(rows)
}
