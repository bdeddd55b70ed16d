//! Per-step cost comparison of the hypergradient methods.
//!
//! Timing runs strictly serially — one method at a time, one step at a
//! time — so the rows are comparable on a single desk machine. This is the
//! only code path that reads the wall clock; everything under `run` is
//! deterministic.

use std::fs;
use std::path::Path;
use std::time::Instant;

use brcgan_core::bilevel::{Method, TrainState, Trainer};
use brcgan_core::models::init_params;
use brcgan_core::objectives::GanObjective;
use brcgan_core::rng;
use brcgan_core::synthdata::MogBatchSource;

use crate::config::{ExperimentConfig, Result};
use crate::harness::StdClock;

pub const BENCH_HEADER: &str =
    "method,median_step_ms,mean_step_ms,peak_workspace_bytes,steps_timed";

/// One method's measured step cost.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: String,
    pub median_step_ms: f64,
    pub mean_step_ms: f64,
    pub peak_workspace_bytes: usize,
    pub steps_timed: usize,
}

/// Number of untimed steps before measurement starts (first iterations pay
/// one-off allocation and cache-warming costs).
pub const WARMUP_STEPS: usize = 3;
pub const DEFAULT_TIMED_STEPS: usize = 50;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `steps` outer iterations of one method on a fresh run seeded from
/// the experiment's first seed.
pub fn bench_one(cfg: &ExperimentConfig, method: Method, steps: usize) -> Result<BenchRow> {
    let seed = cfg.experiment.seeds[0];
    let spec = cfg.spec()?;
    let gen_net = cfg.generator(spec.dim());
    let objective = GanObjective::new(gen_net, cfg.flavor())?;
    let batches = MogBatchSource::new(
        spec.clone(),
        cfg.train.batch_size,
        cfg.model.latent_dim,
        seed,
    )?;
    let state = TrainState::new(
        init_params(objective.gen.layout(), seed, rng::purpose::INIT_GEN),
        init_params(objective.disc.layout(), seed, rng::purpose::INIT_DISC),
    );
    let clock = StdClock::new();
    let mut trainer = Trainer::new(
        &objective,
        &batches,
        method,
        cfg.train_config(),
        state,
        &clock,
    )?;

    for _ in 0..WARMUP_STEPS {
        trainer.step()?;
    }
    trainer.meter.reset();
    let mut samples = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t0 = Instant::now();
        trainer.step()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    Ok(BenchRow {
        method: trainer.method.name().to_string(),
        median_step_ms: median(&sorted),
        mean_step_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        peak_workspace_bytes: trainer.meter.peak_bytes(),
        steps_timed: steps,
    })
}

/// Benchmarks the three hypergradient methods (the alternating baseline has
/// no response step to measure) with the experiment's model, batch, and
/// solver settings.
pub fn bench_methods(cfg: &ExperimentConfig, steps: usize) -> Result<Vec<BenchRow>> {
    let methods = [
        Method::Iga,
        Method::Cg {
            iters: cfg.train.cg_iters,
            tol: cfg.train.cg_tol,
        },
        Method::Neumann {
            iters: cfg.train.neumann_iters,
            scale: cfg.train.neumann_scale,
        },
    ];
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        rows.push(bench_one(cfg, method, steps)?);
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.method, r.median_step_ms, r.mean_step_ms, r.peak_workspace_bytes, r.steps_timed
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even_lengths() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 10.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), 2.5);
    }

    #[test]
    fn bench_rows_cover_the_three_hypergradient_methods() {
        let cfg = ExperimentConfig::from_toml_str(
            "[model]\nlatent_dim = 3\nhidden_width = 8\nhidden_layers = 1\n\
             [train]\nbatch_size = 8\ninner_steps = 1\ncg_iters = 3\nneumann_iters = 3\n\
             [metrics]\neval_samples = 8\n",
        )
        .unwrap();
        let rows = bench_methods(&cfg, 2).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["iga", "cg", "neumann"]);
        for r in &rows {
            assert!(r.median_step_ms > 0.0 && r.median_step_ms.is_finite());
            assert!(r.mean_step_ms > 0.0 && r.mean_step_ms.is_finite());
            assert!(r.peak_workspace_bytes > 0);
            assert_eq!(r.steps_timed, 2);
        }
        assert!(rows[0].peak_workspace_bytes < rows[1].peak_workspace_bytes);
        assert!(rows[0].peak_workspace_bytes < rows[2].peak_workspace_bytes);
    }
}

/// The `bench` subcommand: measure, write `bench.csv`, print a table.
pub fn run_bench(cfg: &ExperimentConfig, out_dir: &Path, steps: usize) -> Result<Vec<BenchRow>> {
    fs::create_dir_all(out_dir)?;
    println!(
        "benchmarking on {} (width {}, latent {}, batch {}; {} warmup + {} timed steps per method)",
        cfg.experiment.dataset,
        cfg.model.hidden_width,
        cfg.model.latent_dim,
        cfg.train.batch_size,
        WARMUP_STEPS,
        steps,
    );
    let rows = bench_methods(cfg, steps)?;
    write_bench_csv(&out_dir.join("bench.csv"), &rows)?;
    println!(
        "{:<12} {:>14} {:>14} {:>20}",
        "method", "median ms/step", "mean ms/step", "peak workspace (B)"
    );
    for r in &rows {
        println!(
            "{:<12} {:>14.3} {:>14.3} {:>20}",
            r.method, r.median_step_ms, r.mean_step_ms, r.peak_workspace_bytes
        );
    }
    Ok(rows)
}
