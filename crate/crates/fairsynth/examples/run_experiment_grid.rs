//! Runs a small augmentation grid end to end: simulate, train generators,
//! curate pools, score predictors over seeds, and aggregate into a report.

use std::time::Instant;

use fairsynth::augment::CurationStrategy;
use fairsynth::config::PipelineConfig;
use fairsynth::generator::GeneratorConfig;
use fairsynth::harness::{run_experiment, DataSource, ToyCohortConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();

    let mut pipeline = PipelineConfig::default();
    pipeline.generator = GeneratorConfig {
        n_layers: 1,
        n_heads: 2,
        embed_dim: 16,
        t_max: 10,
        learning_rate: 0.01,
        batch_size: 16,
        sample_batch_size: 32,
        epochs: 2,
        ..pipeline.generator
    };
    pipeline.predictor.embed_dim = 24;
    pipeline.predictor.batch_size = 32;
    pipeline.predictor.epochs = 6;
    pipeline.predictor.learning_rate = 0.01;
    pipeline.experiment.grid = vec![(500, 300)];
    pipeline.experiment.strategies =
        vec![CurationStrategy::RealOnly, CurationStrategy::RealFairsynth];
    pipeline.experiment.n_seeds = 2;
    pipeline.experiment.lambda = 1.2;
    pipeline.experiment.split_ratios = [0.7, 0.1, 0.2];
    pipeline.experiment.seed = 91;

    let source = DataSource::Toy(ToyCohortConfig {
        n_patients: 1200,
        group_proportions: [("a", 0.6), ("b", 0.25), ("c", 0.15)]
            .into_iter()
            .map(|(g, p)| (g.to_string(), p))
            .collect(),
        base_mortality: [("a", 0.30), ("b", 0.25), ("c", 0.20)]
            .into_iter()
            .map(|(g, p)| (g.to_string(), p))
            .collect(),
        bias_strength: 0.5,
        n_codes: 20,
        seed: 92,
        ..ToyCohortConfig::default()
    });

    let out = std::env::temp_dir().join("fairsynth_grid_demo");
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }

    let started = Instant::now();
    let report = run_experiment(&pipeline, &source, &out, false)?;
    let first_run = started.elapsed();

    let show = |s: &Option<fairsynth::harness::CellStat>| match s {
        Some(s) => format!("{:.4} ±{:.4}", s.mean, s.sd),
        None => "-".to_string(),
    };
    println!("strategy          n_real  n_synth  f1               di               wtpr");
    for cell in &report.cells {
        println!(
            "{:<17} {:<7} {:<8} {:<16} {:<16} {}",
            cell.strategy.to_string(),
            cell.n_real,
            cell.n_synth,
            show(&cell.f1),
            show(&cell.di),
            show(&cell.wtpr)
        );
    }
    println!("\nseeds: {:?}", report.seeds);
    println!("artifacts written: {} (cell runs, generator checkpoints, report.csv)", report.artifacts.len());
    println!("failures: {}", report.failures.len());

    let resumed_at = Instant::now();
    let rerun = run_experiment(&pipeline, &source, &out, true)?;
    let resume_run = resumed_at.elapsed();
    assert_eq!(
        serde_json::to_string(&report)?,
        serde_json::to_string(&rerun)?,
        "resume must reproduce the report exactly"
    );
    println!(
        "\nresume reused every cached cell: {:.1?} fresh vs {:.1?} resumed, identical report",
        first_run, resume_run
    );
    println!("report at {}", out.join("report.json").display());
    Ok(())
}
