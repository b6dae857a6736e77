//! Seeded grid runs over curation strategies and generator fairness-weight
//! sweeps, with per-cell artifacts so interrupted runs resume where they
//! stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{derive_seed, generate_toy_cohort, split, ToyCohortConfig};
use crate::augment::{curate, CurationSpec, CurationStrategy};
use crate::config::PipelineConfig;
use crate::data::{read_cohort, Cohort};
use crate::downstream::{evaluate, predict, train_predictor, PredictorConfig};
use crate::error::{Error, Result};
use crate::fairness::{objective_from_name, FairnessObjective};
use crate::generator::{load_checkpoint, save_checkpoint, train, GeneratorConfig, GeneratorModel};

/// Where the experiment cohort comes from: a cohort file on disk or the
/// built-in simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    CohortFile(PathBuf),
    Toy(ToyCohortConfig),
}

pub fn load_source(source: &DataSource) -> Result<Cohort> {
    match source {
        DataSource::CohortFile(path) => read_cohort(path),
        DataSource::Toy(config) => generate_toy_cohort(config),
    }
}

/// Grid settings: which (n_real, n_synth) cells to run, under which
/// curation strategies, over how many seeded repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_grid")]
    pub grid: Vec<(usize, usize)>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<CurationStrategy>,
    /// Fairness weight used when training the fairness-optimized generator.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Which downstream metric the generator's fairness arm targets.
    #[serde(default = "default_metric")]
    pub feedback_metric: String,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    /// Groups with fewer positives than this are excluded from worst-case
    /// recall.
    #[serde(default = "default_min_positives")]
    pub min_positives: usize,
}

fn default_grid() -> Vec<(usize, usize)> {
    vec![(500, 500)]
}

fn default_strategies() -> Vec<CurationStrategy> {
    vec![
        CurationStrategy::RealOnly,
        CurationStrategy::RealOversample,
        CurationStrategy::RealSynth,
        CurationStrategy::RealFairsynth,
    ]
}

fn default_lambda() -> f64 {
    1.2
}

fn default_metric() -> String {
    "di".to_string()
}

fn default_n_seeds() -> usize {
    5
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_min_positives() -> usize {
    3
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: default_grid(),
            strategies: default_strategies(),
            lambda: default_lambda(),
            feedback_metric: default_metric(),
            n_seeds: default_n_seeds(),
            split_ratios: default_ratios(),
            seed: 0,
            min_positives: default_min_positives(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        if self.grid.iter().any(|&(n_real, _)| n_real == 0) {
            return Err(Error::Config("every grid cell needs n_real > 0".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no curation strategies selected".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        let total: f64 = self.split_ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios sum to {total}, expected 1"
            )));
        }
        if self.min_positives == 0 {
            return Err(Error::Config("min_positives must be at least 1".into()));
        }
        objective_from_name(&self.feedback_metric)?;
        Ok(())
    }
}

/// Mean and spread of one metric over the seeds that produced it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellStat {
    pub mean: f64,
    pub sd: f64,
    /// How many runs carried a usable value.
    pub n: usize,
}

fn stat(values: &[f64]) -> Option<CellStat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(CellStat { mean, sd: var.sqrt(), n: values.len() })
}

/// One grid cell's aggregated metrics. A `None` stat means no run of the
/// cell produced a usable value for that metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCell {
    pub strategy: CurationStrategy,
    pub n_real: usize,
    pub n_synth: usize,
    /// Seeds whose runs succeeded and entered the aggregates.
    pub seeds: Vec<u64>,
    pub f1: Option<CellStat>,
    pub di: Option<CellStat>,
    pub wtpr: Option<CellStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub strategy: CurationStrategy,
    pub n_real: usize,
    pub n_synth: usize,
    pub seed: u64,
    pub message: String,
}

/// Full grid-run output: one row per cell plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<ReportCell>,
    pub failures: Vec<CellFailure>,
    /// Content hashes of every file the run wrote, keyed by relative path.
    pub artifacts: BTreeMap<String, String>,
}

/// One fairness-weight setting's aggregated metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub n_real: usize,
    pub n_synth: usize,
    pub seeds: Vec<u64>,
    pub f1: Option<CellStat>,
    pub di: Option<CellStat>,
    pub wtpr: Option<CellStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepFailure {
    pub lambda: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<LambdaRow>,
    pub failures: Vec<SweepFailure>,
    pub artifacts: BTreeMap<String, String>,
}

/// One completed (cell, seed) run, persisted as its resume artifact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct CellRun {
    strategy: CurationStrategy,
    n_real: usize,
    n_synth: usize,
    seed: u64,
    f1: f64,
    di: Option<f64>,
    wtpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Task {
    strategy: CurationStrategy,
    n_real: usize,
    n_synth: usize,
    seed_index: usize,
    seed: u64,
}

impl Task {
    fn cell_file(&self) -> String {
        format!(
            "{}_{}_{}_s{}.json",
            self.strategy, self.n_real, self.n_synth, self.seed_index
        )
    }
}

/// Neither of these strategies consumes synthetic records.
fn effective_n_synth(strategy: CurationStrategy, n_synth: usize) -> usize {
    match strategy {
        CurationStrategy::RealOnly | CurationStrategy::RealOversample => 0,
        _ => n_synth,
    }
}

fn run_seeds(exp: &ExperimentConfig) -> Vec<u64> {
    (0..exp.n_seeds)
        .map(|i| derive_seed(exp.seed, &format!("run{i}")))
        .collect()
}

/// Trains a generator on the training split, or reuses a cached checkpoint
/// whose configuration and vocabulary match.
fn train_or_load_generator(
    pipeline: &PipelineConfig,
    train_pool: &Cohort,
    lambda: f64,
    out_dir: &Path,
    resume: bool,
    tag: &str,
) -> Result<GeneratorModel> {
    let path = out_dir.join("generators").join(format!("{tag}.json"));
    let exp = &pipeline.experiment;
    let config = GeneratorConfig {
        lambda,
        fairness_objective: exp.feedback_metric.clone(),
        seed: derive_seed(exp.seed, "generator"),
        ..pipeline.generator.clone()
    };
    if resume && path.exists() {
        match load_checkpoint(&path) {
            Ok(model)
                if model.config == config
                    && model.vocab_hash == train_pool.vocabulary.hash() =>
            {
                log::info!("reusing cached generator {}", path.display());
                return Ok(model);
            }
            Ok(_) => log::warn!(
                "cached generator {} does not match this run; retraining",
                path.display()
            ),
            Err(e) => log::warn!(
                "cannot load cached generator {}: {e}; retraining",
                path.display()
            ),
        }
    }
    let objective = FairnessObjective {
        kind: objective_from_name(&config.fairness_objective)?,
        ..pipeline.fairness.clone()
    };
    let mut model = GeneratorModel::new(&train_pool.vocabulary, config.clone())?;
    let report = train(&mut model, train_pool, &config, &objective)?;
    if let Some(step) = report.diverged_at {
        log::warn!("generator '{tag}' diverged at step {step}; continuing with its last finite state");
    }
    save_checkpoint(&model, &path)?;
    Ok(model)
}

/// Runs one curated pool through predictor training and evaluation.
fn score_pool(
    pipeline: &PipelineConfig,
    curated: &Cohort,
    val: &Cohort,
    test: &Cohort,
    run_seed: u64,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    let predictor_config = PredictorConfig {
        seed: derive_seed(run_seed, "predictor"),
        sensitive_attribute: pipeline.generator.sensitive_attribute.clone(),
        ..pipeline.predictor.clone()
    };
    let model = train_predictor(curated, val, &predictor_config)?;
    let results = predict(&model, test)?;
    let report = evaluate(&results, pipeline.experiment.min_positives)?;
    let di = Some(report.fairness.disparate_impact).filter(|d| d.is_finite());
    let wtpr = report.fairness.worst_tpr.filter(|w| w.is_finite());
    Ok((report.f1, di, wtpr))
}

fn read_cached_run(path: &Path, task: &Task) -> Option<CellRun> {
    let text = std::fs::read_to_string(path).ok()?;
    let run: CellRun = serde_json::from_str(&text).ok()?;
    let matches = run.strategy == task.strategy
        && run.n_real == task.n_real
        && run.n_synth == task.n_synth
        && run.seed == task.seed;
    matches.then_some(run)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn aggregate(runs: &[CellRun]) -> (Vec<u64>, Option<CellStat>, Option<CellStat>, Option<CellStat>) {
    let seeds = runs.iter().map(|r| r.seed).collect();
    let f1: Vec<f64> = runs.iter().map(|r| r.f1).collect();
    let di: Vec<f64> = runs.iter().filter_map(|r| r.di).collect();
    let wtpr: Vec<f64> = runs.iter().filter_map(|r| r.wtpr).collect();
    (seeds, stat(&f1), stat(&di), stat(&wtpr))
}

/// Runs the full strategy grid: split once, train the generators once, then
/// curate + train + evaluate each (strategy, cell, seed) combination. Cells
/// already on disk are reused when `resume` is set; per-run failures are
/// recorded and the rest of the grid continues.
pub fn run_experiment(
    pipeline: &PipelineConfig,
    source: &DataSource,
    out_dir: &Path,
    resume: bool,
) -> Result<MetricsReport> {
    pipeline.validate()?;
    let exp = &pipeline.experiment;
    let attribute = &pipeline.generator.sensitive_attribute;

    let cohort = load_source(source)?;
    let (train_pool, val, test) = split(
        &cohort,
        exp.split_ratios,
        attribute,
        derive_seed(exp.seed, "split"),
    )?;
    log::info!(
        "split {} records into {}/{}/{}",
        cohort.len(),
        train_pool.len(),
        val.len(),
        test.len()
    );

    std::fs::create_dir_all(out_dir.join("cells"))?;
    std::fs::create_dir_all(out_dir.join("generators"))?;

    let generator_plain = if exp.strategies.contains(&CurationStrategy::RealSynth) {
        Some(train_or_load_generator(pipeline, &train_pool, 0.0, out_dir, resume, "plain")?)
    } else {
        None
    };
    let generator_fair = if exp.strategies.contains(&CurationStrategy::RealFairsynth) {
        Some(train_or_load_generator(pipeline, &train_pool, exp.lambda, out_dir, resume, "fair")?)
    } else {
        None
    };

    let seeds = run_seeds(exp);
    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for &strategy in &exp.strategies {
        for &(n_real, n_synth) in &exp.grid {
            let n_synth = effective_n_synth(strategy, n_synth);
            if !seen.insert((strategy, n_real, n_synth)) {
                continue;
            }
            for (seed_index, &seed) in seeds.iter().enumerate() {
                tasks.push(Task { strategy, n_real, n_synth, seed_index, seed });
            }
        }
    }

    let mut runs: BTreeMap<String, CellRun> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut pending: Vec<(Task, Cohort)> = Vec::new();
    for task in tasks {
        let path = out_dir.join("cells").join(task.cell_file());
        if resume {
            if let Some(run) = read_cached_run(&path, &task) {
                runs.insert(task.cell_file(), run);
                continue;
            }
        }
        let spec = CurationSpec {
            strategy: task.strategy,
            n_real: task.n_real,
            n_synth: task.n_synth,
            seed: derive_seed(task.seed, &format!("curate_{}_{}", task.n_real, task.n_synth)),
            sensitive_attribute: attribute.clone(),
            oversample_targets: None,
        };
        match curate(&spec, &train_pool, generator_plain.as_ref(), generator_fair.as_ref()) {
            Ok(pool) => pending.push((task, pool)),
            Err(e) => failures.push(CellFailure {
                strategy: task.strategy,
                n_real: task.n_real,
                n_synth: task.n_synth,
                seed: task.seed,
                message: e.to_string(),
            }),
        }
    }

    let scored: Vec<(Task, Result<CellRun>)> = pending
        .into_par_iter()
        .map(|(task, pool)| {
            let outcome =
                score_pool(pipeline, &pool, &val, &test, task.seed).map(|(f1, di, wtpr)| CellRun {
                    strategy: task.strategy,
                    n_real: task.n_real,
                    n_synth: task.n_synth,
                    seed: task.seed,
                    f1,
                    di,
                    wtpr,
                });
            (task, outcome)
        })
        .collect();
    for (task, outcome) in scored {
        match outcome {
            Ok(run) => {
                write_json(&run, &out_dir.join("cells").join(task.cell_file()))?;
                runs.insert(task.cell_file(), run);
            }
            Err(e) => failures.push(CellFailure {
                strategy: task.strategy,
                n_real: task.n_real,
                n_synth: task.n_synth,
                seed: task.seed,
                message: e.to_string(),
            }),
        }
    }

    let mut cells = Vec::new();
    let mut seen = BTreeSet::new();
    for &strategy in &exp.strategies {
        for &(n_real, grid_synth) in &exp.grid {
            let n_synth = effective_n_synth(strategy, grid_synth);
            if !seen.insert((strategy, n_real, n_synth)) {
                continue;
            }
            let cell_runs: Vec<CellRun> = runs
                .values()
                .filter(|r| {
                    r.strategy == strategy && r.n_real == n_real && r.n_synth == n_synth
                })
                .cloned()
                .collect();
            let (cell_seeds, f1, di, wtpr) = aggregate(&cell_runs);
            cells.push(ReportCell {
                strategy,
                n_real,
                n_synth,
                seeds: cell_seeds,
                f1,
                di,
                wtpr,
            });
        }
    }

    write_grid_csv(&cells, &out_dir.join("report.csv"))?;
    let mut artifacts = BTreeMap::new();
    for name in runs.keys() {
        artifacts.insert(format!("cells/{name}"), hash_file(&out_dir.join("cells").join(name))?);
    }
    for tag in ["plain", "fair"] {
        let path = out_dir.join("generators").join(format!("{tag}.json"));
        if path.exists() {
            artifacts.insert(format!("generators/{tag}.json"), hash_file(&path)?);
        }
    }
    artifacts.insert("report.csv".to_string(), hash_file(&out_dir.join("report.csv"))?);

    let report = MetricsReport {
        config_hash: pipeline.hash(),
        seeds,
        cells,
        failures,
        artifacts,
    };
    write_json(&report, &out_dir.join("report.json"))?;
    Ok(report)
}

/// Retrains the fairness-optimized generator at each weight and scores the
/// synthetic-augmentation strategy on the first grid cell, emitting one
/// trade-off row per weight.
pub fn lambda_sweep(
    pipeline: &PipelineConfig,
    lambda_values: &[f64],
    source: &DataSource,
    out_dir: &Path,
    resume: bool,
) -> Result<SweepReport> {
    pipeline.validate()?;
    if lambda_values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one lambda".into()));
    }
    if lambda_values.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidArgument(
            "sweep lambdas must be finite and non-negative".into(),
        ));
    }
    let exp = &pipeline.experiment;
    let attribute = &pipeline.generator.sensitive_attribute;
    let (n_real, n_synth) = exp.grid[0];

    let cohort = load_source(source)?;
    let (train_pool, val, test) = split(
        &cohort,
        exp.split_ratios,
        attribute,
        derive_seed(exp.seed, "split"),
    )?;

    std::fs::create_dir_all(out_dir.join("cells"))?;
    std::fs::create_dir_all(out_dir.join("generators"))?;

    let seeds = run_seeds(exp);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut cell_files = Vec::new();
    let mut generator_files = Vec::new();

    for &lambda in lambda_values {
        let tag = format!("sweep_{lambda}");
        let generator = match train_or_load_generator(
            pipeline, &train_pool, lambda, out_dir, resume, &tag,
        ) {
            Ok(model) => {
                generator_files.push(format!("generators/{tag}.json"));
                model
            }
            Err(e) => {
                for &seed in &seeds {
                    failures.push(SweepFailure { lambda, seed, message: e.to_string() });
                }
                rows.push(LambdaRow {
                    lambda,
                    n_real,
                    n_synth,
                    seeds: Vec::new(),
                    f1: None,
                    di: None,
                    wtpr: None,
                });
                continue;
            }
        };

        let mut cached = Vec::new();
        let mut pending = Vec::new();
        for (seed_index, &seed) in seeds.iter().enumerate() {
            let task = Task {
                strategy: CurationStrategy::RealFairsynth,
                n_real,
                n_synth,
                seed_index,
                seed,
            };
            let file = format!("sweep_{lambda}_s{seed_index}.json");
            let path = out_dir.join("cells").join(&file);
            if resume {
                if let Some(run) = read_cached_run(&path, &task) {
                    cached.push((file, run));
                    continue;
                }
            }
            let spec = CurationSpec {
                strategy: CurationStrategy::RealFairsynth,
                n_real,
                n_synth,
                seed: derive_seed(seed, &format!("curate_{n_real}_{n_synth}")),
                sensitive_attribute: attribute.clone(),
                oversample_targets: None,
            };
            match curate(&spec, &train_pool, None, Some(&generator)) {
                Ok(pool) => pending.push((file, seed, pool)),
                Err(e) => {
                    failures.push(SweepFailure { lambda, seed, message: e.to_string() })
                }
            }
        }

        let scored: Vec<(String, u64, Result<CellRun>)> = pending
            .into_par_iter()
            .map(|(file, seed, pool)| {
                let outcome = score_pool(pipeline, &pool, &val, &test, seed).map(
                    |(f1, di, wtpr)| CellRun {
                        strategy: CurationStrategy::RealFairsynth,
                        n_real,
                        n_synth,
                        seed,
                        f1,
                        di,
                        wtpr,
                    },
                );
                (file, seed, outcome)
            })
            .collect();

        let mut lambda_runs: Vec<CellRun> = cached.iter().map(|(_, r)| r.clone()).collect();
        cell_files.extend(cached.into_iter().map(|(f, _)| f));
        for (file, seed, outcome) in scored {
            match outcome {
                Ok(run) => {
                    write_json(&run, &out_dir.join("cells").join(&file))?;
                    cell_files.push(file);
                    lambda_runs.push(run);
                }
                Err(e) => failures.push(SweepFailure { lambda, seed, message: e.to_string() }),
            }
        }
        lambda_runs.sort_by_key(|r| seeds.iter().position(|&s| s == r.seed));
        let (row_seeds, f1, di, wtpr) = aggregate(&lambda_runs);
        rows.push(LambdaRow { lambda, n_real, n_synth, seeds: row_seeds, f1, di, wtpr });
    }

    write_sweep_csv(&rows, &out_dir.join("sweep.csv"))?;
    let mut artifacts = BTreeMap::new();
    cell_files.sort();
    for name in &cell_files {
        artifacts.insert(format!("cells/{name}"), hash_file(&out_dir.join("cells").join(name))?);
    }
    for name in &generator_files {
        artifacts.insert(name.clone(), hash_file(&out_dir.join(name))?);
    }
    artifacts.insert("sweep.csv".to_string(), hash_file(&out_dir.join("sweep.csv"))?);

    let report = SweepReport {
        config_hash: pipeline.hash(),
        seeds,
        rows,
        failures,
        artifacts,
    };
    write_json(&report, &out_dir.join("sweep.json"))?;
    Ok(report)
}

fn csv_metric_rows(f1: &Option<CellStat>, di: &Option<CellStat>, wtpr: &Option<CellStat>) -> Vec<(&'static str, CellStat)> {
    [("f1", f1), ("di", di), ("wtpr", wtpr)]
        .into_iter()
        .filter_map(|(name, s)| s.clone().map(|s| (name, s)))
        .collect()
}

fn write_grid_csv(cells: &[ReportCell], path: &Path) -> Result<()> {
    let mut out = String::from("strategy,n_real,n_synth,metric,mean,sd\n");
    for cell in cells {
        for (metric, s) in csv_metric_rows(&cell.f1, &cell.di, &cell.wtpr) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.strategy, cell.n_real, cell.n_synth, metric, s.mean, s.sd
            ));
        }
    }
    std::fs::write(path, out).map_err(Error::Io)?;
    Ok(())
}

fn write_sweep_csv(rows: &[LambdaRow], path: &Path) -> Result<()> {
    let mut out = String::from("lambda,n_real,n_synth,metric,mean,sd\n");
    for row in rows {
        for (metric, s) in csv_metric_rows(&row.f1, &row.di, &row.wtpr) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.lambda, row.n_real, row.n_synth, metric, s.mean, s.sd
            ));
        }
    }
    std::fs::write(path, out).map_err(Error::Io)?;
    Ok(())
}

fn schema_err(message: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("report schema violation: {}", message.into()))
}

fn check_stat(value: &Value, context: &str) -> Result<()> {
    if value.is_null() {
        return Ok(());
    }
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err(format!("{context} must be null or an object")))?;
    let mean = obj.get("mean").and_then(Value::as_f64);
    let sd = obj.get("sd").and_then(Value::as_f64);
    let n = obj.get("n").and_then(Value::as_u64);
    if mean.is_none() || sd.is_none() || n.is_none() {
        return Err(schema_err(format!("{context} needs numeric mean, sd, and n")));
    }
    if sd.unwrap() < 0.0 {
        return Err(schema_err(format!("{context} has negative sd")));
    }
    if n.unwrap() == 0 {
        return Err(schema_err(format!("{context} aggregates zero runs")));
    }
    Ok(())
}

fn check_seed_list(value: Option<&Value>, context: &str) -> Result<()> {
    let seeds = value
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err(format!("{context} must carry a seeds array")))?;
    if seeds.iter().any(|s| s.as_u64().is_none()) {
        return Err(schema_err(format!("{context} seeds must be unsigned integers")));
    }
    Ok(())
}

const STRATEGY_NAMES: [&str; 4] =
    ["REAL_ONLY", "REAL_OVERSAMPLE", "REAL_SYNTH", "REAL_FAIRSYNTH"];

/// Checks a serialized grid or sweep report against the published report
/// schema: required provenance keys, typed cells or rows, and stat shape.
pub fn validate_report_json(value: &Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err("report must be a JSON object"))?;
    if obj.get("config_hash").and_then(Value::as_str).is_none() {
        return Err(schema_err("config_hash must be a string"));
    }
    check_seed_list(obj.get("seeds"), "report")?;
    let artifacts = obj
        .get("artifacts")
        .and_then(Value::as_object)
        .ok_or_else(|| schema_err("artifacts must be an object"))?;
    if artifacts.values().any(|v| v.as_str().is_none()) {
        return Err(schema_err("artifact hashes must be strings"));
    }
    let failures = obj
        .get("failures")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("failures must be an array"))?;
    for f in failures {
        let f = f
            .as_object()
            .ok_or_else(|| schema_err("each failure must be an object"))?;
        if f.get("message").and_then(Value::as_str).is_none()
            || f.get("seed").and_then(Value::as_u64).is_none()
        {
            return Err(schema_err("each failure needs a message and a seed"));
        }
    }

    let entries = match (obj.get("cells"), obj.get("rows")) {
        (Some(cells), None) => ("cell", cells),
        (None, Some(rows)) => ("row", rows),
        _ => return Err(schema_err("report must carry exactly one of cells or rows")),
    };
    let (kind, list) = entries;
    let list = list
        .as_array()
        .ok_or_else(|| schema_err(format!("{kind}s must be an array")))?;
    for entry in list {
        let e = entry
            .as_object()
            .ok_or_else(|| schema_err(format!("each {kind} must be an object")))?;
        if kind == "cell" {
            let strategy = e.get("strategy").and_then(Value::as_str);
            if !strategy.is_some_and(|s| STRATEGY_NAMES.contains(&s)) {
                return Err(schema_err("cell strategy must be a known strategy name"));
            }
        } else {
            let lambda = e.get("lambda").and_then(Value::as_f64);
            if !lambda.is_some_and(|l| l >= 0.0) {
                return Err(schema_err("row lambda must be a non-negative number"));
            }
        }
        for key in ["n_real", "n_synth"] {
            if e.get(key).and_then(Value::as_u64).is_none() {
                return Err(schema_err(format!("{kind} {key} must be an unsigned integer")));
            }
        }
        check_seed_list(e.get("seeds"), kind)?;
        for metric in ["f1", "di", "wtpr"] {
            let stat = e
                .get(metric)
                .ok_or_else(|| schema_err(format!("{kind} is missing {metric}")))?;
            check_stat(stat, &format!("{kind} {metric}"))?;
        }
    }
    Ok(())
}
