//! Run configuration: one flat key-value TOML file mirroring the model and
//! training knobs plus data paths. Resolution order is defaults, then the
//! config file, then command-line flags; the fully resolved result is echoed
//! into the output directory so any run can be reproduced from that file
//! alone.

use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tsat::data::SynthConfig;
use tsat::graph::SiftParams;
use tsat::model::{ImfActivation, TsatConfig};
use tsat::train::TrainConfig;
use tsat::{Result, TsatError};

pub const OUT_DIR_ENV: &str = "TSAT_OUT_DIR";

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<String>,
    pub checkpoint: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub backcast_len: usize,
    pub forecast_len: usize,
    pub stride: usize,
    pub k_max: usize,
    pub num_imfs: usize,
    pub model_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub ffn_width: usize,
    pub dropout_p: f64,
    pub imf_activation: String,
    pub use_edge: bool,
    pub use_adjacency: bool,
    pub threshold: f64,
    pub sd_threshold: f64,
    pub max_sift_iter: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub decay_gamma: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub synth_series: usize,
    pub synth_steps: usize,
    pub synth_groups: usize,
    pub synth_noise_std: f64,
    pub synth_phase_spread: f64,
    pub synth_coupling: f64,
    pub synth_lag: usize,
    pub archive: bool,
    pub dump_grad_norms: bool,
}

/// The same fields, all optional, as read from a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    input: Option<String>,
    checkpoint: Option<String>,
    out_dir: Option<String>,
    seed: Option<u64>,
    backcast_len: Option<usize>,
    forecast_len: Option<usize>,
    stride: Option<usize>,
    k_max: Option<usize>,
    num_imfs: Option<usize>,
    model_dim: Option<usize>,
    key_dim: Option<usize>,
    value_dim: Option<usize>,
    num_heads: Option<usize>,
    num_blocks: Option<usize>,
    ffn_width: Option<usize>,
    dropout_p: Option<f64>,
    imf_activation: Option<String>,
    use_edge: Option<bool>,
    use_adjacency: Option<bool>,
    threshold: Option<f64>,
    sd_threshold: Option<f64>,
    max_sift_iter: Option<usize>,
    batch_size: Option<usize>,
    initial_lr: Option<f64>,
    decay_gamma: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    synth_series: Option<usize>,
    synth_steps: Option<usize>,
    synth_groups: Option<usize>,
    synth_noise_std: Option<f64>,
    synth_phase_spread: Option<f64>,
    synth_coupling: Option<f64>,
    synth_lag: Option<usize>,
    archive: Option<bool>,
    dump_grad_norms: Option<bool>,
}

/// Command-line overrides shared by every subcommand; any config file field
/// can be pinned from the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Key-value TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (header row of series names, optional timestamp column).
    #[arg(long)]
    pub input: Option<String>,
    /// Parameter checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Output directory (also via TSAT_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<String>,
    /// Master seed; all component seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backcast_len: Option<usize>,
    #[arg(long)]
    pub forecast_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Maximum IMFs extracted by the decompose command.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// IMF slots per edge tensor (graphs and model).
    #[arg(long)]
    pub num_imfs: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub key_dim: Option<usize>,
    #[arg(long)]
    pub value_dim: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub ffn_width: Option<usize>,
    #[arg(long)]
    pub dropout_p: Option<f64>,
    /// softmax | exp | none
    #[arg(long)]
    pub imf_activation: Option<String>,
    #[arg(long)]
    pub use_edge: Option<bool>,
    #[arg(long)]
    pub use_adjacency: Option<bool>,
    /// Adjacency threshold c in [0, 1].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub sd_threshold: Option<f64>,
    #[arg(long)]
    pub max_sift_iter: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub initial_lr: Option<f64>,
    #[arg(long)]
    pub decay_gamma: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub synth_series: Option<usize>,
    #[arg(long)]
    pub synth_steps: Option<usize>,
    #[arg(long)]
    pub synth_groups: Option<usize>,
    #[arg(long)]
    pub synth_noise_std: Option<f64>,
    #[arg(long)]
    pub synth_phase_spread: Option<f64>,
    #[arg(long)]
    pub synth_coupling: Option<f64>,
    #[arg(long)]
    pub synth_lag: Option<usize>,
    /// Write one concatenated graph archive instead of per-window files.
    #[arg(long)]
    pub archive: Option<bool>,
    /// Dump per-node gradient norms of one initial training step.
    #[arg(long)]
    pub dump_grad_norms: Option<bool>,
}

impl RunConfig {
    pub fn resolve(command: &str, overrides: &Overrides) -> Result<RunConfig> {
        let file = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| TsatError::io(path.display().to_string(), e))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| TsatError::Config(format!(
                    "bad config file {}: {}",
                    path.display(),
                    e
                )))?
            }
            None => FileConfig::default(),
        };
        let o = overrides.clone();
        let out_dir = o
            .out_dir
            .or(file.out_dir)
            .or_else(|| std::env::var(OUT_DIR_ENV).ok())
            .unwrap_or_else(|| "tsat-out".to_string());
        let model_dim = o.model_dim.or(file.model_dim).unwrap_or(16);
        Ok(RunConfig {
            command: command.to_string(),
            input: o.input.or(file.input),
            checkpoint: o.checkpoint.or(file.checkpoint),
            out_dir,
            seed: o.seed.or(file.seed).unwrap_or(0),
            backcast_len: o.backcast_len.or(file.backcast_len).unwrap_or(48),
            forecast_len: o.forecast_len.or(file.forecast_len).unwrap_or(12),
            stride: o.stride.or(file.stride).unwrap_or(1),
            k_max: o.k_max.or(file.k_max).unwrap_or(4),
            num_imfs: o.num_imfs.or(file.num_imfs).unwrap_or(4),
            model_dim,
            key_dim: o.key_dim.or(file.key_dim).unwrap_or(model_dim / 2),
            value_dim: o.value_dim.or(file.value_dim).unwrap_or(model_dim / 2),
            num_heads: o.num_heads.or(file.num_heads).unwrap_or(4),
            num_blocks: o.num_blocks.or(file.num_blocks).unwrap_or(1),
            ffn_width: o.ffn_width.or(file.ffn_width).unwrap_or(4 * model_dim),
            dropout_p: o.dropout_p.or(file.dropout_p).unwrap_or(0.1),
            imf_activation: o
                .imf_activation
                .or(file.imf_activation)
                .unwrap_or_else(|| "softmax".to_string()),
            use_edge: o.use_edge.or(file.use_edge).unwrap_or(true),
            use_adjacency: o.use_adjacency.or(file.use_adjacency).unwrap_or(true),
            threshold: o.threshold.or(file.threshold).unwrap_or(0.5),
            sd_threshold: o.sd_threshold.or(file.sd_threshold).unwrap_or(0.2),
            max_sift_iter: o.max_sift_iter.or(file.max_sift_iter).unwrap_or(100),
            batch_size: o.batch_size.or(file.batch_size).unwrap_or(64),
            initial_lr: o.initial_lr.or(file.initial_lr).unwrap_or(1e-4),
            decay_gamma: o.decay_gamma.or(file.decay_gamma).unwrap_or(5e-3),
            max_epochs: o.max_epochs.or(file.max_epochs).unwrap_or(2000),
            patience: o.patience.or(file.patience).unwrap_or(20),
            synth_series: o.synth_series.or(file.synth_series).unwrap_or(6),
            synth_steps: o.synth_steps.or(file.synth_steps).unwrap_or(4096),
            synth_groups: o.synth_groups.or(file.synth_groups).unwrap_or(2),
            synth_noise_std: o.synth_noise_std.or(file.synth_noise_std).unwrap_or(0.1),
            synth_phase_spread: o.synth_phase_spread.or(file.synth_phase_spread).unwrap_or(0.7),
            synth_coupling: o.synth_coupling.or(file.synth_coupling).unwrap_or(0.3),
            synth_lag: o.synth_lag.or(file.synth_lag).unwrap_or(4),
            archive: o.archive.or(file.archive).unwrap_or(false),
            dump_grad_norms: o.dump_grad_norms.or(file.dump_grad_norms).unwrap_or(false),
        })
    }

    pub fn require_input(&self) -> Result<&str> {
        self.input
            .as_deref()
            .ok_or_else(|| TsatError::Config("no input CSV given (use --input or the config file)".to_string()))
    }

    pub fn require_checkpoint(&self) -> Result<&str> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| TsatError::Config("no checkpoint given (use --checkpoint or the config file)".to_string()))
    }

    /// Model configuration for a dataset with `num_series` series.
    pub fn tsat_config(&self, num_series: usize) -> Result<TsatConfig> {
        let config = TsatConfig {
            num_series,
            backcast_len: self.backcast_len,
            forecast_len: self.forecast_len,
            num_imfs: self.num_imfs,
            model_dim: self.model_dim,
            key_dim: self.key_dim,
            value_dim: self.value_dim,
            num_heads: self.num_heads,
            num_blocks: self.num_blocks,
            ffn_width: self.ffn_width,
            dropout_p: self.dropout_p,
            imf_activation: self.imf_activation.parse::<ImfActivation>()?,
            use_edge: self.use_edge,
            use_adjacency: self.use_adjacency,
            threshold: self.threshold,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            decay_gamma: self.decay_gamma,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn sift_params(&self) -> SiftParams {
        SiftParams {
            sd_threshold: self.sd_threshold,
            max_iter: self.max_sift_iter,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut cfg = SynthConfig::new(
            self.synth_series,
            self.synth_steps,
            self.synth_groups,
            self.synth_noise_std,
            self.seed,
        );
        cfg.phase_spread = self.synth_phase_spread;
        cfg.coupling = self.synth_coupling;
        cfg.lag = self.synth_lag;
        cfg
    }

    /// Write the resolved configuration into the output directory.
    pub fn echo(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| TsatError::Config(format!("config echo failed: {}", e)))?;
        let path = out_dir.join("resolved_config.toml");
        std::fs::write(&path, text).map_err(|e| TsatError::io(path.display().to_string(), e))
    }
}
