//! Command-line front end: each subcommand wraps one library pipeline
//! stage. Relative input paths resolve against FAIRSYNTH_DATA_DIR when it
//! is set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fairsynth::augment::curate;
use fairsynth::config::PipelineConfig;
use fairsynth::data::{read_cohort, read_vocabulary, write_cohort};
use fairsynth::downstream::{
    evaluate, predict, read_predictions_csv, train_predictor, write_predictions_csv,
};
use fairsynth::fairness::{objective_from_name, FairnessObjective};
use fairsynth::generator::{
    load_checkpoint, sample_records, save_checkpoint, train, write_trace_csv, GeneratorModel,
};
use fairsynth::harness::{
    derive_seed, generate_toy_cohort, lambda_sweep, run_experiment, DataSource, ToyCohortConfig,
};
use fairsynth::preprocess::{preprocess, read_events_csv, read_statics_csv};

#[derive(Parser)]
#[command(name = "fairsynth", version, about = "Fairness-optimized synthetic EHR pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(path) => PipelineConfig::from_path(&data_path(path))
                .with_context(|| format!("loading {}", path.display())),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Cohort file to run on.
    #[arg(long, conflicts_with = "toy")]
    data: Option<PathBuf>,
    /// Run on a freshly simulated toy cohort instead of a file.
    #[arg(long)]
    toy: bool,
}

impl SourceArgs {
    fn resolve(&self, experiment_seed: u64) -> Result<DataSource> {
        match (&self.data, self.toy) {
            (Some(path), false) => Ok(DataSource::CohortFile(data_path(path))),
            (None, true) => Ok(DataSource::Toy(ToyCohortConfig {
                seed: derive_seed(experiment_seed, "toy"),
                ..ToyCohortConfig::default()
            })),
            _ => bail!("pass exactly one of --data <path> or --toy"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a cohort file from raw event and static CSV tables.
    Preprocess {
        /// Event rows: patient_id, visit, variable, value.
        #[arg(long)]
        events: PathBuf,
        /// Static rows: patient_id, attribute, value.
        #[arg(long)]
        statics: PathBuf,
        /// Cohort file to write (vocabulary lands in its sidecar).
        #[arg(long)]
        out: PathBuf,
        /// Codes rarer than this pool into their section's RARE token.
        #[arg(long, default_value_t = 5)]
        min_code_count: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Simulate a group-biased toy cohort.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_patients: Option<usize>,
        /// Group-bias strength; zero removes all group differences.
        #[arg(long)]
        bias: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a generator on a cohort file and checkpoint it.
    TrainGenerator {
        #[arg(long)]
        data: PathBuf,
        /// Directory for generator.json and trace.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured fairness weight.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Sample synthetic records from a trained generator.
    Sample {
        /// Generator checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Vocabulary sidecar the generator was trained with.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        n: usize,
        /// Cohort file to write.
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap-pool weights as group=weight pairs; may repeat.
        #[arg(long = "group-weight", value_parser = parse_group_weight)]
        group_weights: Vec<(String, f64)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Assemble a curated training pool from real and synthetic sources.
    Curate {
        /// Real cohort file.
        #[arg(long)]
        real: PathBuf,
        /// Plain generator checkpoint, for the synthetic strategy.
        #[arg(long)]
        plain_model: Option<PathBuf>,
        /// Fairness-optimized generator checkpoint.
        #[arg(long)]
        fair_model: Option<PathBuf>,
        /// Cohort file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the mortality predictor and write test predictions.
    TrainPredictor {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Directory for predictions.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compute F1 and group-fairness metrics from a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Metrics JSON file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Groups with fewer positives are excluded from worst-case recall.
        #[arg(long, default_value_t = 3)]
        min_positives: usize,
    },
    /// Run the full strategy-by-size experiment grid.
    Experiment {
        #[command(flatten)]
        source: SourceArgs,
        /// Output directory for cells, generators, and reports.
        #[arg(long)]
        out: PathBuf,
        /// Reuse completed cells and cached generators found in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Sweep the generator fairness weight and tabulate the trade-off.
    Sweep {
        /// Comma-separated fairness weights, e.g. 0,0.5,1.2.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn parse_group_weight(raw: &str) -> std::result::Result<(String, f64), String> {
    let (group, weight) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected group=weight, found {raw:?}"))?;
    let weight: f64 = weight
        .parse()
        .map_err(|_| format!("bad weight in {raw:?}"))?;
    Ok((group.to_string(), weight))
}

/// Resolves a relative input path against FAIRSYNTH_DATA_DIR when set.
fn data_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(root) = std::env::var_os("FAIRSYNTH_DATA_DIR") {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

fn objective_for(pipeline: &PipelineConfig, kind_name: &str) -> Result<FairnessObjective> {
    Ok(FairnessObjective {
        kind: objective_from_name(kind_name)?,
        ..pipeline.fairness.clone()
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess { events, statics, out, min_code_count, config } => {
            let pipeline = config.load()?;
            let events = read_events_csv(&data_path(&events))?;
            let statics = read_statics_csv(&data_path(&statics))?;
            let cohort = preprocess(events, statics, &pipeline.preprocess, min_code_count)?;
            write_cohort(&cohort, &out)?;
            println!(
                "wrote {} records with {} vocabulary entries to {}",
                cohort.len(),
                cohort.vocabulary.len(),
                out.display()
            );
        }
        Command::Simulate { out, n_patients, bias, seed } => {
            let mut config = ToyCohortConfig::default();
            if let Some(n) = n_patients {
                config.n_patients = n;
            }
            if let Some(delta) = bias {
                config.bias_strength = delta;
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let cohort = generate_toy_cohort(&config)?;
            write_cohort(&cohort, &out)?;
            println!("simulated {} records to {}", cohort.len(), out.display());
        }
        Command::TrainGenerator { data, out, lambda, seed, config } => {
            let pipeline = config.load()?;
            let cohort = read_cohort(&data_path(&data))?;
            let mut generator_config = pipeline.generator.clone();
            if let Some(lambda) = lambda {
                generator_config.lambda = lambda;
            }
            if let Some(seed) = seed {
                generator_config.seed = seed;
            }
            let objective = objective_for(&pipeline, &generator_config.fairness_objective)?;
            let mut model = GeneratorModel::new(&cohort.vocabulary, generator_config.clone())?;
            let report = train(&mut model, &cohort, &generator_config, &objective)?;
            std::fs::create_dir_all(&out)?;
            save_checkpoint(&model, &out.join("generator.json"))?;
            write_trace_csv(&out.join("trace.csv"), &report.trace)?;
            match report.diverged_at {
                Some(step) => println!(
                    "training diverged at step {step}; checkpoint holds the last finite state"
                ),
                None => match report.trace.last() {
                    Some(last) => println!(
                        "trained {} steps; final loss {:.6} (bce {:.6})",
                        report.trace.len(),
                        last.l_total,
                        last.l_bce
                    ),
                    None => println!("trained 0 steps"),
                },
            }
        }
        Command::Sample { model, vocab, n, out, group_weights, seed } => {
            let model = load_checkpoint(&data_path(&model))?;
            let vocab = Arc::new(read_vocabulary(&data_path(&vocab))?);
            let conditioning: Option<BTreeMap<String, f64>> = if group_weights.is_empty() {
                None
            } else {
                Some(group_weights.into_iter().collect())
            };
            let cohort = sample_records(&model, n, &vocab, conditioning.as_ref(), seed)?;
            write_cohort(&cohort, &out)?;
            println!("sampled {} records to {}", cohort.len(), out.display());
        }
        Command::Curate { real, plain_model, fair_model, out, seed, config } => {
            let pipeline = config.load()?;
            let mut spec = pipeline
                .curation
                .clone()
                .context("the configuration has no curation section")?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let real_pool = read_cohort(&data_path(&real))?;
            let plain = plain_model
                .map(|p| load_checkpoint(&data_path(&p)))
                .transpose()?;
            let fair = fair_model
                .map(|p| load_checkpoint(&data_path(&p)))
                .transpose()?;
            let curated = curate(&spec, &real_pool, plain.as_ref(), fair.as_ref())?;
            write_cohort(&curated, &out)?;
            println!(
                "curated {} records ({}) to {}",
                curated.len(),
                spec.strategy,
                out.display()
            );
        }
        Command::TrainPredictor { train: train_path, val, test, out, seed, config } => {
            let pipeline = config.load()?;
            let mut predictor_config = pipeline.predictor.clone();
            if let Some(seed) = seed {
                predictor_config.seed = seed;
            }
            let train_pool = read_cohort(&data_path(&train_path))?;
            let val_pool = read_cohort(&data_path(&val))?;
            let test_pool = read_cohort(&data_path(&test))?;
            let model = train_predictor(&train_pool, &val_pool, &predictor_config)?;
            let results = predict(&model, &test_pool)?;
            std::fs::create_dir_all(&out)?;
            write_predictions_csv(&out.join("predictions.csv"), &results)?;
            println!(
                "trained on {} records; wrote {} predictions to {}",
                train_pool.len(),
                results.len(),
                out.join("predictions.csv").display()
            );
        }
        Command::Evaluate { predictions, out, min_positives } => {
            let results = read_predictions_csv(&data_path(&predictions))?;
            let report = evaluate(&results, min_positives)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, format!("{text}\n"))?;
                    println!("wrote metrics to {}", path.display());
                }
                None => println!("{text}"),
            }
        }
        Command::Experiment { source, out, resume, seed, config } => {
            let mut pipeline = config.load()?;
            if let Some(seed) = seed {
                pipeline.experiment.seed = seed;
            }
            let source = source.resolve(pipeline.experiment.seed)?;
            let report = run_experiment(&pipeline, &source, &out, resume)?;
            println!("strategy          n_real  n_synth  f1      di      wtpr");
            for cell in &report.cells {
                let fmt = |s: &Option<fairsynth::harness::CellStat>| match s {
                    Some(s) => format!("{:.3}", s.mean),
                    None => "-".to_string(),
                };
                println!(
                    "{:<17} {:>6}  {:>7}  {:<6}  {:<6}  {:<6}",
                    cell.strategy.to_string(),
                    cell.n_real,
                    cell.n_synth,
                    fmt(&cell.f1),
                    fmt(&cell.di),
                    fmt(&cell.wtpr)
                );
            }
            if !report.failures.is_empty() {
                println!("{} cell runs failed; see report.json", report.failures.len());
            }
            println!("report written to {}", out.join("report.json").display());
        }
        Command::Sweep { lambdas, source, out, resume, seed, config } => {
            let mut pipeline = config.load()?;
            if let Some(seed) = seed {
                pipeline.experiment.seed = seed;
            }
            let source = source.resolve(pipeline.experiment.seed)?;
            let report = lambda_sweep(&pipeline, &lambdas, &source, &out, resume)?;
            println!("lambda  f1      di      wtpr");
            for row in &report.rows {
                let fmt = |s: &Option<fairsynth::harness::CellStat>| match s {
                    Some(s) => format!("{:.3}", s.mean),
                    None => "-".to_string(),
                };
                println!(
                    "{:<6}  {:<6}  {:<6}  {:<6}",
                    row.lambda,
                    fmt(&row.f1),
                    fmt(&row.di),
                    fmt(&row.wtpr)
                );
            }
            if !report.failures.is_empty() {
                println!("{} sweep runs failed; see sweep.json", report.failures.len());
            }
            println!("report written to {}", out.join("sweep.json").display());
        }
    }
    Ok(())
}
