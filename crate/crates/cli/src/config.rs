//! Experiment configuration: TOML with section headers, every key optional,
//! defaults filled in to produce an *effective* config that is echoed next
//! to the outputs so a run is reproducible from its artifacts alone.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use brcgan_core::bilevel::{
    Method, TrainConfig, DEFAULT_CG_ITERS, DEFAULT_CG_TOL, DEFAULT_DAMPING, DEFAULT_INNER_STEPS,
    DEFAULT_LR_D, DEFAULT_LR_G, DEFAULT_NEUMANN_ITERS, DEFAULT_NEUMANN_SCALE,
};
use brcgan_core::metrics::{DEFAULT_DIST_MULT, DEFAULT_PAD_STDS};
use brcgan_core::models::{MlpNet, OutputActivation};
use brcgan_core::objectives::Flavor;
use brcgan_core::synthdata::{cube3d, ring2d, MogSpec, DEFAULT_HALF_EXTENT, DEFAULT_RADIUS,
    DEFAULT_VARIANCE};

#[derive(Debug)]
pub enum CliError {
    /// Bad user input: missing file, unparsable config, invalid value.
    /// These exit with code 2.
    Config(String),
    /// Everything that goes wrong after validation passes; exit code 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    /// Process exit code: 2 for usage/config problems, 1 for runtime
    /// failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<brcgan_core::error::Error> for CliError {
    fn from(e: brcgan_core::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------- sections

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub dataset: String,
    pub method: String,
    pub flavor: String,
    pub seeds: Vec<u64>,
    pub total_iters: u64,
    pub eval_every: u64,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub leak: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub inner_steps: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub damping: f64,
    pub fresh_outer_batch: bool,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub neumann_iters: usize,
    pub neumann_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub variance: f64,
    pub ring_radius: f64,
    pub cube_half_extent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSection {
    pub eval_samples: usize,
    /// 0 selects the per-dimension default (64 bins in 2D, 16 in 3D).
    pub bins: usize,
    pub pad_stds: f64,
    pub dist_mult: f64,
    /// 0 selects the default fraction, a quarter of the uniform share.
    pub min_frac: f64,
}

/// Fully resolved configuration; serializing it yields the effective-config
/// echo written into the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub metrics: MetricsSection,
}

// Raw mirror with everything optional, so partial files parse.
#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    experiment: Option<RawExperiment>,
    model: Option<RawModel>,
    train: Option<RawTrain>,
    data: Option<RawData>,
    metrics: Option<RawMetrics>,
}

#[derive(Debug, Default, Deserialize)]
struct RawExperiment {
    dataset: Option<String>,
    method: Option<String>,
    flavor: Option<String>,
    seeds: Option<Vec<u64>>,
    total_iters: Option<u64>,
    eval_every: Option<u64>,
    out_dir: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct RawModel {
    latent_dim: Option<usize>,
    hidden_width: Option<usize>,
    hidden_layers: Option<usize>,
    leak: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawTrain {
    batch_size: Option<usize>,
    inner_steps: Option<usize>,
    lr_g: Option<f64>,
    lr_d: Option<f64>,
    damping: Option<f64>,
    fresh_outer_batch: Option<bool>,
    cg_iters: Option<usize>,
    cg_tol: Option<f64>,
    neumann_iters: Option<usize>,
    neumann_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawData {
    variance: Option<f64>,
    ring_radius: Option<f64>,
    cube_half_extent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawMetrics {
    eval_samples: Option<usize>,
    bins: Option<usize>,
    pad_stds: Option<f64>,
    dist_mult: Option<f64>,
    min_frac: Option<f64>,
}

pub const DATASETS: [&str; 3] = ["ring5", "ring8", "cube27"];
pub const METHODS: [&str; 4] = ["alternating", "iga", "cg", "neumann"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            cfg_err(format!("cannot read config file '{}': {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| cfg_err(format!("in config file '{}': {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| cfg_err(format!("config parse error: {e}")))?;
        let e = raw.experiment.unwrap_or_default();
        let m = raw.model.unwrap_or_default();
        let t = raw.train.unwrap_or_default();
        let d = raw.data.unwrap_or_default();
        let me = raw.metrics.unwrap_or_default();
        let cfg = ExperimentConfig {
            experiment: ExperimentSection {
                dataset: e.dataset.unwrap_or_else(|| "ring5".into()),
                method: e.method.unwrap_or_else(|| "iga".into()),
                flavor: e.flavor.unwrap_or_else(|| Flavor::VanillaNonsat.as_str().into()),
                seeds: e.seeds.unwrap_or_else(|| vec![0]),
                total_iters: e.total_iters.unwrap_or(20_000),
                eval_every: e.eval_every.unwrap_or(500),
                out_dir: e.out_dir.unwrap_or_else(|| "runs".into()),
            },
            model: ModelSection {
                latent_dim: m.latent_dim.unwrap_or(32),
                hidden_width: m.hidden_width.unwrap_or(256),
                hidden_layers: m.hidden_layers.unwrap_or(3),
                leak: m.leak.unwrap_or(0.2),
            },
            train: TrainSection {
                batch_size: t.batch_size.unwrap_or(512),
                inner_steps: t.inner_steps.unwrap_or(DEFAULT_INNER_STEPS),
                lr_g: t.lr_g.unwrap_or(DEFAULT_LR_G),
                lr_d: t.lr_d.unwrap_or(DEFAULT_LR_D),
                damping: t.damping.unwrap_or(DEFAULT_DAMPING),
                fresh_outer_batch: t.fresh_outer_batch.unwrap_or(true),
                cg_iters: t.cg_iters.unwrap_or(DEFAULT_CG_ITERS),
                cg_tol: t.cg_tol.unwrap_or(DEFAULT_CG_TOL),
                neumann_iters: t.neumann_iters.unwrap_or(DEFAULT_NEUMANN_ITERS),
                neumann_scale: t.neumann_scale.unwrap_or(DEFAULT_NEUMANN_SCALE),
            },
            data: DataSection {
                variance: d.variance.unwrap_or(DEFAULT_VARIANCE),
                ring_radius: d.ring_radius.unwrap_or(DEFAULT_RADIUS),
                cube_half_extent: d.cube_half_extent.unwrap_or(DEFAULT_HALF_EXTENT),
            },
            metrics: MetricsSection {
                eval_samples: me.eval_samples.unwrap_or(512),
                bins: me.bins.unwrap_or(0),
                pad_stds: me.pad_stds.unwrap_or(DEFAULT_PAD_STDS),
                dist_mult: me.dist_mult.unwrap_or(DEFAULT_DIST_MULT),
                min_frac: me.min_frac.unwrap_or(0.0),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !DATASETS.contains(&e.dataset.as_str()) {
            return Err(cfg_err(format!(
                "unknown dataset '{}' (expected one of {})",
                e.dataset,
                DATASETS.join(", ")
            )));
        }
        if !METHODS.contains(&e.method.as_str()) {
            return Err(cfg_err(format!(
                "unknown method '{}' (expected one of {})",
                e.method,
                METHODS.join(", ")
            )));
        }
        Flavor::parse(&e.flavor)
            .map_err(|_| cfg_err(format!("unknown flavor '{}'", e.flavor)))?;
        if e.seeds.is_empty() {
            return Err(cfg_err("seeds must be nonempty"));
        }
        if e.eval_every < 1 || e.total_iters < e.eval_every {
            return Err(cfg_err(format!(
                "need total_iters ≥ eval_every ≥ 1, got {} and {}",
                e.total_iters, e.eval_every
            )));
        }
        let m = &self.model;
        if m.latent_dim == 0 || m.hidden_width == 0 || m.hidden_layers == 0 {
            return Err(cfg_err("model dims must be positive"));
        }
        if !(m.leak > 0.0 && m.leak < 1.0) {
            return Err(cfg_err(format!("leak must lie in (0,1), got {}", m.leak)));
        }
        let t = &self.train;
        if t.batch_size < 2 {
            return Err(cfg_err("batch_size must be at least 2"));
        }
        if !(t.lr_g > 0.0) || !(t.lr_d > 0.0) {
            return Err(cfg_err("learning rates must be positive"));
        }
        if !(t.damping >= 0.0) {
            return Err(cfg_err("damping must be nonnegative"));
        }
        if t.cg_iters == 0 || t.neumann_iters == 0 {
            return Err(cfg_err("solver iteration counts must be positive"));
        }
        if !(t.cg_tol > 0.0) {
            return Err(cfg_err("cg_tol must be positive"));
        }
        if e.method == "neumann" && !(t.neumann_scale < 0.0) {
            return Err(cfg_err(
                "neumann_scale must be negative for a convergent series",
            ));
        }
        self.train_config().validate()?;
        let me = &self.metrics;
        if me.eval_samples < 2 {
            return Err(cfg_err("eval_samples must be at least 2"));
        }
        if me.bins == 1 {
            return Err(cfg_err("bins must be 0 (default) or at least 2"));
        }
        if !(me.dist_mult > 0.0) {
            return Err(cfg_err("dist_mult must be positive"));
        }
        if !(me.min_frac >= 0.0 && me.min_frac < 1.0) {
            return Err(cfg_err("min_frac must lie in [0,1)"));
        }
        if !(self.data.variance >= 0.0) {
            return Err(cfg_err("variance must be nonnegative"));
        }
        if !(self.data.ring_radius > 0.0) || !(self.data.cube_half_extent > 0.0) {
            return Err(cfg_err("dataset geometry must be positive"));
        }
        Ok(())
    }

    /// The mixture this experiment trains against.
    pub fn spec(&self) -> Result<MogSpec> {
        let base = match self.experiment.dataset.as_str() {
            "ring5" => ring2d(5, self.data.ring_radius)?,
            "ring8" => ring2d(8, self.data.ring_radius)?,
            "cube27" => cube3d(self.data.cube_half_extent)?,
            other => return Err(cfg_err(format!("unknown dataset '{other}'"))),
        };
        Ok(MogSpec::new(base.centers, self.data.variance)?)
    }

    pub fn flavor(&self) -> Flavor {
        Flavor::parse(&self.experiment.flavor).expect("validated")
    }

    pub fn method(&self) -> Method {
        match self.experiment.method.as_str() {
            "alternating" => Method::Alternating,
            "iga" => Method::Iga,
            "cg" => Method::Cg {
                iters: self.train.cg_iters,
                tol: self.train.cg_tol,
            },
            "neumann" => Method::Neumann {
                iters: self.train.neumann_iters,
                scale: self.train.neumann_scale,
            },
            _ => unreachable!("validated"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            inner_steps: self.train.inner_steps,
            lr_g: self.train.lr_g,
            lr_d: self.train.lr_d,
            damping: self.train.damping,
            fresh_outer_batch: self.train.fresh_outer_batch,
        }
    }

    /// Generator architecture; output dimension follows the dataset.
    pub fn generator(&self, data_dim: usize) -> MlpNet {
        MlpNet {
            input_dim: self.model.latent_dim,
            output_dim: data_dim,
            hidden_width: self.model.hidden_width,
            hidden_layers: self.model.hidden_layers,
            leak: self.model.leak,
            output_activation: OutputActivation::Identity,
        }
    }

    /// Stable identifier shared by all seeds of this experiment; the seed
    /// suffix `-s{seed}` completes a run id.
    pub fn group_id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.experiment.dataset, self.experiment.method, self.experiment.flavor
        )
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-s{seed}", self.group_id())
    }

    pub fn to_effective_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a over the effective TOML text: cheap, stable content hash for
    /// tagging artifacts.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_effective_toml().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_all_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.experiment.dataset, "ring5");
        assert_eq!(cfg.experiment.method, "iga");
        assert_eq!(cfg.experiment.seeds, vec![0]);
        assert_eq!(cfg.experiment.total_iters, 20_000);
        assert_eq!(cfg.experiment.eval_every, 500);
        assert_eq!(cfg.model.hidden_width, 256);
        assert_eq!(cfg.train.batch_size, 512);
        assert_eq!(cfg.train.inner_steps, 5);
        assert_eq!(cfg.metrics.eval_samples, 512);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[experiment]\ndataset = \"cube27\"\nseeds = [7, 8]\n\n[train]\nlr_g = 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.dataset, "cube27");
        assert_eq!(cfg.experiment.seeds, vec![7, 8]);
        assert_eq!(cfg.train.lr_g, 0.01);
        assert_eq!(cfg.train.lr_d, DEFAULT_LR_D);
        assert_eq!(cfg.spec().unwrap().dim(), 3);
        assert_eq!(cfg.spec().unwrap().modes(), 27);
    }

    #[test]
    fn invalid_values_are_rejected_with_context() {
        for (toml, needle) in [
            ("[experiment]\ndataset = \"ring9\"", "ring9"),
            ("[experiment]\nmethod = \"sgd\"", "sgd"),
            ("[experiment]\nflavor = \"hinge\"", "hinge"),
            ("[experiment]\nseeds = []", "seeds"),
            ("[experiment]\ntotal_iters = 10\neval_every = 20", "eval_every"),
            ("[train]\nlr_g = 0.0", "learning rates"),
            ("[train]\nbatch_size = 1", "batch_size"),
            (
                "[experiment]\nmethod = \"neumann\"\n[train]\nneumann_scale = 0.01",
                "negative",
            ),
            ("[model]\nleak = 1.5", "leak"),
            ("not valid toml [", "parse"),
        ] {
            let err = ExperimentConfig::from_toml_str(toml).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains(needle),
                "error for {toml:?} should mention {needle:?}, got: {msg}"
            );
            assert!(matches!(err, CliError::Config(_)));
        }
    }

    #[test]
    fn effective_echo_round_trips() {
        let cfg = ExperimentConfig::from_toml_str("[experiment]\nmethod = \"cg\"\n").unwrap();
        let echo = cfg.to_effective_toml();
        let back = ExperimentConfig::from_toml_str(&echo).unwrap();
        assert_eq!(back.to_effective_toml(), echo);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn run_ids_embed_dataset_method_flavor_and_seed() {
        let cfg = ExperimentConfig::from_toml_str(
            "[experiment]\ndataset = \"ring8\"\nmethod = \"neumann\"\nflavor = \"wgan\"\n",
        )
        .unwrap();
        assert_eq!(cfg.group_id(), "ring8-neumann-wgan");
        assert_eq!(cfg.run_id(3), "ring8-neumann-wgan-s3");
    }

    #[test]
    fn method_resolution_carries_solver_settings() {
        let cfg = ExperimentConfig::from_toml_str(
            "[experiment]\nmethod = \"cg\"\n[train]\ncg_iters = 7\ncg_tol = 1e-3\n",
        )
        .unwrap();
        assert_eq!(cfg.method(), Method::Cg { iters: 7, tol: 1e-3 });
    }

    #[test]
    fn missing_file_error_names_the_file() {
        let err = ExperimentConfig::load(Path::new("no/such/file.toml")).unwrap_err();
        assert!(err.to_string().contains("no/such/file.toml"));
        assert!(matches!(err, CliError::Config(_)));
    }
}
