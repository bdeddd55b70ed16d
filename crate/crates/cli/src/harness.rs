//! Seeded multi-run experiment execution: training, periodic evaluation,
//! CSV emission, checkpointing, and cross-seed aggregation.
//!
//! All run artifacts are deterministic functions of (config, seed): training
//! rows use the null clock so the wall_ms column is identically zero, and
//! measured wall time is only reported on the console. Rerunning a config
//! therefore reproduces every output file byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use brcgan_core::bilevel::{Clock, NullClock, TrainState, Trainer, TrajPoint};
use brcgan_core::metrics::{
    default_grid, default_min_frac, fid_data_space, grid_for, js_divergence, mode_coverage,
    GridSpec, MetricReport,
};
use brcgan_core::models::{generator_forward, init_params, MlpNet, OutputActivation};
use brcgan_core::objectives::GanObjective;
use brcgan_core::params::ParamVector;
use brcgan_core::rng;
use brcgan_core::synthdata::{latents_seeded, sample_seeded, MogBatchSource, MogSpec};

use crate::config::{CliError, ExperimentConfig, Result};

/// Wall clock anchored at construction; used by `bench`, never by `run`.
pub struct StdClock {
    origin: Instant,
}

impl StdClock {
    pub fn new() -> StdClock {
        StdClock {
            origin: Instant::now(),
        }
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Everything one seed's training produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: u64,
    /// `(iteration, report)` pairs in strictly increasing iteration order.
    pub reports: Vec<(u64, MetricReport)>,
    pub checkpoint_gen: PathBuf,
    pub checkpoint_disc: PathBuf,
    pub total_wall_ms: f64,
    /// Set when training aborted; the partial series above is still valid.
    pub failure: Option<String>,
}

/// Metric evaluation settings resolved from the config against a concrete
/// mixture (grid bounds depend on the dataset geometry).
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub grid: GridSpec,
    pub dist_mult: f64,
    pub min_frac: f64,
    pub eval_samples: usize,
}

impl EvalSettings {
    pub fn resolve(cfg: &ExperimentConfig, spec: &MogSpec) -> Result<EvalSettings> {
        let grid = if cfg.metrics.bins == 0 {
            default_grid(spec)?
        } else {
            grid_for(spec, cfg.metrics.bins, cfg.metrics.pad_stds)?
        };
        let min_frac = if cfg.metrics.min_frac == 0.0 {
            default_min_frac(spec.modes())
        } else {
            cfg.metrics.min_frac
        };
        Ok(EvalSettings {
            grid,
            dist_mult: cfg.metrics.dist_mult,
            min_frac,
            eval_samples: cfg.metrics.eval_samples,
        })
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.9e}")
}

/// Rounds a report to CSV precision. Records keep the rounded values so the
/// summary computed after a run is byte-identical to one rebuilt later from
/// the metrics files.
fn as_recorded(r: &MetricReport) -> MetricReport {
    let round = |x: f64| fmt_f(x).parse().expect("own format parses");
    MetricReport {
        fid: round(r.fid),
        js_bits: round(r.js_bits),
        clip_fraction: round(r.clip_fraction),
        ..r.clone()
    }
}

pub const TRAJECTORY_HEADER: &str =
    "iteration,F_value,f_value,grad_norm_G,grad_norm_D,brc_scalar,wall_ms";
pub const METRICS_HEADER: &str = "run_id,iteration,fid,js_bits,modes,n_samples,clip_fraction";
pub const SUMMARY_HEADER: &str =
    "group,n_runs,fid_mean,fid_std,js_mean,js_std,modes_mean,modes_std";

pub fn trajectory_row(p: &TrajPoint) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        p.iteration,
        fmt_f(p.leader),
        fmt_f(p.follower),
        fmt_f(p.grad_norm_g),
        fmt_f(p.grad_norm_d),
        fmt_f(p.brc_scalar),
        fmt_f(p.wall_ms),
    )
}

pub fn metrics_row(run_id: &str, iteration: u64, r: &MetricReport) -> String {
    format!(
        "{run_id},{iteration},{},{},{},{},{}",
        fmt_f(r.fid),
        fmt_f(r.js_bits),
        r.modes_captured,
        r.n_samples,
        fmt_f(r.clip_fraction),
    )
}

/// Draws a fresh evaluation batch (real and generated) for `iteration` and
/// computes all metrics. Evaluation streams are separate from training
/// streams, so evaluating never perturbs the training draws.
pub fn evaluate_generator(
    net: &MlpNet,
    params: &ParamVector,
    spec: &MogSpec,
    spec_id: &str,
    settings: &EvalSettings,
    seed: u64,
    iteration: u64,
) -> Result<MetricReport> {
    let real = sample_seeded(
        spec,
        settings.eval_samples,
        seed,
        rng::purpose::EVAL_REAL,
        iteration,
        0,
    );
    let latents = latents_seeded(
        settings.eval_samples,
        net.input_dim,
        seed,
        rng::purpose::EVAL_LATENT,
        iteration,
        0,
    );
    let fake = generator_forward(net, params, &latents)?;
    let js = js_divergence(&real, &fake, &settings.grid)?;
    let fid = fid_data_space(&real, &fake)?;
    let modes_captured = mode_coverage(&fake, spec, settings.dist_mult, settings.min_frac)?;
    Ok(MetricReport {
        fid,
        js_bits: js.js_bits,
        modes_captured,
        n_samples: settings.eval_samples,
        clip_fraction: js.clip_fraction,
        spec_id: spec_id.into(),
    })
}

/// Trains one seed to completion (or abort), streaming trajectory and
/// metric rows to disk as they are produced.
fn run_one_seed(cfg: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<RunRecord> {
    let run_id = cfg.run_id(seed);
    let spec = cfg.spec()?;
    let spec_id = cfg.experiment.dataset.clone();
    let settings = EvalSettings::resolve(cfg, &spec)?;
    let gen_net = cfg.generator(spec.dim());
    let objective = GanObjective::new(gen_net.clone(), cfg.flavor())?;
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
    let clock = NullClock;
    let mut trainer = Trainer::new(
        &objective,
        &batches,
        cfg.method(),
        cfg.train_config(),
        state,
        &clock,
    )?;

    let traj_path = out_dir.join(format!("trajectory_{run_id}.csv"));
    let metrics_path = out_dir.join(format!("metrics_{run_id}.csv"));
    let mut traj = BufWriter::new(fs::File::create(&traj_path)?);
    let mut metrics = BufWriter::new(fs::File::create(&metrics_path)?);
    writeln!(traj, "{TRAJECTORY_HEADER}")?;
    writeln!(metrics, "{METRICS_HEADER}")?;

    let wall = Instant::now();
    let mut reports: Vec<(u64, MetricReport)> = Vec::new();
    let mut failure: Option<String> = None;
    let total = cfg.experiment.total_iters;
    let every = cfg.experiment.eval_every;
    for it in 0..total {
        match trainer.step() {
            Ok(p) => writeln!(traj, "{}", trajectory_row(&p))?,
            Err(e) => {
                failure = Some(format!("training: {e}"));
                break;
            }
        }
        let done = it + 1;
        if done % every == 0 || done == total {
            match evaluate_generator(
                &gen_net,
                &trainer.state.gen,
                &spec,
                &spec_id,
                &settings,
                seed,
                done,
            ) {
                Ok(report) => {
                    writeln!(metrics, "{}", metrics_row(&run_id, done, &report))?;
                    reports.push((done, as_recorded(&report)));
                }
                Err(e) => {
                    failure = Some(format!("evaluation at iteration {done}: {e}"));
                    break;
                }
            }
        }
    }
    traj.flush()?;
    metrics.flush()?;

    if let Some(msg) = &failure {
        fs::write(
            out_dir.join(format!("FAILED_{run_id}.txt")),
            format!("{msg}\n"),
        )?;
        eprintln!("run {run_id} aborted: {msg}");
    }

    let checkpoint_gen = out_dir.join(format!("checkpoint_{run_id}.gen.txt"));
    let checkpoint_disc = out_dir.join(format!("checkpoint_{run_id}.disc.txt"));
    fs::write(&checkpoint_gen, trainer.state.gen.encode())?;
    fs::write(&checkpoint_disc, trainer.state.disc.encode())?;

    let total_wall_ms = wall.elapsed().as_secs_f64() * 1e3;
    println!(
        "run {run_id}: {} iterations, {} evaluations, {:.1} s{}",
        trainer.state.iteration,
        reports.len(),
        total_wall_ms / 1e3,
        if failure.is_some() { " (FAILED)" } else { "" },
    );
    Ok(RunRecord {
        run_id,
        config_hash: cfg.content_hash(),
        reports,
        checkpoint_gen,
        checkpoint_disc,
        total_wall_ms,
        failure,
    })
}

/// Runs every seed of the experiment serially and writes the cross-seed
/// summary. A training abort marks that seed's record and the remaining
/// seeds still run; only I/O failures abort the whole experiment.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunRecord>> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("config.effective.toml"),
        cfg.to_effective_toml(),
    )?;
    println!(
        "experiment {} ({} seeds, {} iterations, config hash {:016x})",
        cfg.group_id(),
        cfg.experiment.seeds.len(),
        cfg.experiment.total_iters,
        cfg.content_hash(),
    );
    let mut records = Vec::new();
    for &seed in &cfg.experiment.seeds {
        records.push(run_one_seed(cfg, out_dir, seed)?);
    }
    let rows = aggregate(&records);
    write_summary(&out_dir.join("summary.csv"), &rows)?;
    Ok(records)
}

/// One line of the cross-seed summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub n_runs: usize,
    pub fid_mean: f64,
    pub fid_std: f64,
    pub js_mean: f64,
    pub js_std: f64,
    pub modes_mean: f64,
    pub modes_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// The group of a run is its id with the seed suffix removed.
pub fn group_of(run_id: &str) -> String {
    match run_id.rfind("-s") {
        Some(pos) if run_id[pos + 2..].chars().all(|c| c.is_ascii_digit()) => {
            run_id[..pos].to_string()
        }
        _ => run_id.to_string(),
    }
}

/// Final-evaluation statistics per group. Failed runs are skipped entirely —
/// their last recorded evaluation is not a final one, and mixing it into the
/// group would distort cross-method comparisons. Record order never affects
/// the output.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut finals: Vec<(String, f64, f64, f64)> = Vec::new();
    for rec in records {
        if rec.failure.is_some() {
            continue;
        }
        if let Some((_, report)) = rec.reports.last() {
            finals.push((
                group_of(&rec.run_id),
                report.fid,
                report.js_bits,
                report.modes_captured as f64,
            ));
        }
    }
    let mut groups: Vec<String> = finals.iter().map(|f| f.0.clone()).collect();
    groups.sort();
    groups.dedup();
    groups
        .iter()
        .map(|g| {
            let fids: Vec<f64> = finals.iter().filter(|f| &f.0 == g).map(|f| f.1).collect();
            let jss: Vec<f64> = finals.iter().filter(|f| &f.0 == g).map(|f| f.2).collect();
            let modes: Vec<f64> = finals.iter().filter(|f| &f.0 == g).map(|f| f.3).collect();
            let (fid_mean, fid_std) = mean_std(&fids);
            let (js_mean, js_std) = mean_std(&jss);
            let (modes_mean, modes_std) = mean_std(&modes);
            SummaryRow {
                group: g.clone(),
                n_runs: fids.len(),
                fid_mean,
                fid_std,
                js_mean,
                js_std,
                modes_mean,
                modes_std,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.group,
            r.n_runs,
            fmt_f(r.fid_mean),
            fmt_f(r.fid_std),
            fmt_f(r.js_mean),
            fmt_f(r.js_std),
            fmt_f(r.modes_mean),
            fmt_f(r.modes_std),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Rebuilds summary rows from the metrics CSVs in a directory (the final
/// row of each run), mirroring [`aggregate`] for on-disk artifacts.
pub fn summarize_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        CliError::Config(format!("cannot read directory '{}': {e}", dir.display()))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "no metrics_*.csv files in '{}'",
            dir.display()
        )));
    }
    let mut records = Vec::new();
    for path in &files {
        let text = fs::read_to_string(path)?;
        if let Some(mut rec) = parse_metrics_csv(&text, path)? {
            // A marker file next to the metrics identifies aborted runs.
            let marker = dir.join(format!("FAILED_{}.txt", rec.run_id));
            if marker.exists() {
                rec.failure = Some(format!("marked by {}", marker.display()));
            }
            records.push(rec);
        }
    }
    let rows = aggregate(&records);
    write_summary(&dir.join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Parses one run's metrics CSV into a minimal record carrying the final
/// evaluation; `None` when the file has a header but no rows yet.
fn parse_metrics_csv(text: &str, path: &Path) -> Result<Option<RunRecord>> {
    let bad = |line: usize, why: &str| {
        CliError::Config(format!("{}:{line}: {why}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(bad(1, "missing metrics header")),
    }
    let mut run_id = String::new();
    let mut last: Option<(u64, MetricReport)> = None;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad(i + 1, "expected 7 columns"));
        }
        run_id = cols[0].to_string();
        let iteration: u64 = cols[1].parse().map_err(|_| bad(i + 1, "bad iteration"))?;
        let report = MetricReport {
            fid: cols[2].parse().map_err(|_| bad(i + 1, "bad fid"))?,
            js_bits: cols[3].parse().map_err(|_| bad(i + 1, "bad js_bits"))?,
            modes_captured: cols[4].parse().map_err(|_| bad(i + 1, "bad modes"))?,
            n_samples: cols[5].parse().map_err(|_| bad(i + 1, "bad n_samples"))?,
            clip_fraction: cols[6].parse().map_err(|_| bad(i + 1, "bad clip_fraction"))?,
            spec_id: String::new(),
        };
        if let Some((prev, _)) = &last {
            if iteration <= *prev {
                return Err(bad(i + 1, "iterations must increase"));
            }
        }
        last = Some((iteration, report));
    }
    Ok(last.map(|pair| RunRecord {
        run_id,
        config_hash: 0,
        reports: vec![pair],
        checkpoint_gen: PathBuf::new(),
        checkpoint_disc: PathBuf::new(),
        total_wall_ms: 0.0,
        failure: None,
    }))
}

/// Reconstructs a generator architecture from a checkpoint's layout: affine
/// pairs `w0/b0, w1/b1, …` give the dimensions; the leak is not stored and
/// must be supplied.
pub fn generator_from_checkpoint(params: &ParamVector, leak: f64) -> Result<MlpNet> {
    let mats: Vec<(usize, usize)> = params
        .layout
        .entries()
        .iter()
        .filter(|e| e.dims.len() == 2)
        .map(|e| e.shape2())
        .collect();
    if mats.len() < 2 {
        return Err(CliError::Config(
            "checkpoint layout has fewer than two affine layers; not a generator".into(),
        ));
    }
    let net = MlpNet {
        input_dim: mats[0].0,
        output_dim: mats[mats.len() - 1].1,
        hidden_width: mats[0].1,
        hidden_layers: mats.len() - 1,
        leak,
        output_activation: OutputActivation::Identity,
    };
    net.validate()?;
    Ok(net)
}

/// The `eval` subcommand: score a saved generator against a dataset with
/// default metric settings and return the report.
pub fn eval_checkpoint(
    checkpoint: &Path,
    dataset: &str,
    seed: u64,
    samples: usize,
    leak: f64,
) -> Result<MetricReport> {
    let text = fs::read_to_string(checkpoint).map_err(|e| {
        CliError::Config(format!(
            "cannot read checkpoint '{}': {e}",
            checkpoint.display()
        ))
    })?;
    let params = ParamVector::decode(&text)?;
    let net = generator_from_checkpoint(&params, leak)?;
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "[experiment]\ndataset = \"{dataset}\"\n"
    ))?;
    let spec = cfg.spec()?;
    if spec.dim() != net.output_dim {
        return Err(CliError::Config(format!(
            "checkpoint generates {}-dimensional samples but '{dataset}' is {}-dimensional",
            net.output_dim,
            spec.dim()
        )));
    }
    let mut settings = EvalSettings::resolve(&cfg, &spec)?;
    settings.eval_samples = samples;
    evaluate_generator(&net, &params, &spec, dataset, &settings, seed, 0)
}
