//! Run configuration: a flat UTF-8 `key=value` file plus CLI flag overrides.
//! Unknown keys are hard errors. Every command output embeds the hash of the
//! resolved configuration so results are attributable to exact settings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::GridSpec;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::SampleMode;
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::schedule::{BaseSchedule, SchedulerKind, StepGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sr,
    Denoise,
    Translate,
    CustomDir,
}

impl Task {
    pub fn label(&self) -> &'static str {
        match self {
            Task::Sr => "sr",
            Task::Denoise => "denoise",
            Task::Translate => "translate",
            Task::CustomDir => "custom-dir",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Task::Sr),
            "denoise" => Ok(Task::Denoise),
            "translate" => Ok(Task::Translate),
            "custom-dir" => Ok(Task::CustomDir),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (sr | denoise | translate | custom-dir)"
            ))),
        }
    }
}

/// Resolved settings for one command invocation. See the README for the key
/// reference; defaults are desk-scale (32×32 images, batch 8).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub image_size: usize,
    pub t_base: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub s_steps: usize,
    pub scheduler_uniform: bool,
    pub boundary_index: Option<usize>,
    pub late_fraction: f64,
    pub base_width: usize,
    pub levels: usize,
    pub time_embed_dim: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dose_fraction: f64,
    pub cond_channels: usize,
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub sample_ancestral: bool,
    pub emit_trajectory: bool,
    pub eval_count: usize,
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Denoise,
            image_size: 32,
            t_base: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            s_steps: 10,
            scheduler_uniform: true,
            boundary_index: None,
            late_fraction: 0.6,
            base_width: 32,
            levels: 3,
            time_embed_dim: 64,
            lr: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            iterations: 20_000,
            batch_size: 8,
            seed: 42,
            n_train: 192,
            n_test: 32,
            dose_fraction: 0.1,
            cond_channels: 1,
            dataset_dir: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            checkpoint_every: 0,
            sample_ancestral: false,
            emit_trajectory: false,
            eval_count: 0,
            log_every: 100,
        }
    }
}

impl RunConfig {
    /// Parse a config file into the defaults; later lines win.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "task" => self.task = Task::parse(value)?,
            "image_size" => self.image_size = num(key, value)?,
            "t_base" => self.t_base = num(key, value)?,
            "beta_start" => self.beta_start = num(key, value)?,
            "beta_end" => self.beta_end = num(key, value)?,
            "s_steps" => self.s_steps = num(key, value)?,
            "scheduler" => self.set_scheduler(value)?,
            "boundary_index" => self.boundary_index = Some(num(key, value)?),
            "late_fraction" => self.late_fraction = num(key, value)?,
            "base_width" => self.base_width = num(key, value)?,
            "levels" => self.levels = num(key, value)?,
            "time_embed_dim" => self.time_embed_dim = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "n_train" => self.n_train = num(key, value)?,
            "n_test" => self.n_test = num(key, value)?,
            "dose_fraction" => self.dose_fraction = num(key, value)?,
            "cond_channels" => self.cond_channels = num(key, value)?,
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "sample_mode" => match value {
                "deterministic" => self.sample_ancestral = false,
                "ancestral" => self.sample_ancestral = true,
                _ => {
                    return Err(Error::Config(format!(
                        "bad sample_mode {value:?} (deterministic | ancestral)"
                    )))
                }
            },
            "emit_trajectory" => self.emit_trajectory = num::<bool>(key, value)?,
            "eval_count" => self.eval_count = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn set_scheduler(&mut self, value: &str) -> Result<()> {
        match value {
            "uniform" => self.scheduler_uniform = true,
            "nonuniform" => self.scheduler_uniform = false,
            _ => {
                return Err(Error::Config(format!(
                    "bad scheduler {value:?} (uniform | nonuniform)"
                )))
            }
        }
        Ok(())
    }

    pub fn scheduler_kind(&self) -> SchedulerKind {
        if self.scheduler_uniform {
            SchedulerKind::Uniform
        } else {
            match self.boundary_index {
                Some(b) => SchedulerKind::NonUniform {
                    boundary_index: b,
                    late_fraction: self.late_fraction,
                },
                None => {
                    let mut k = SchedulerKind::non_uniform_default(self.t_base);
                    if let SchedulerKind::NonUniform { late_fraction, .. } = &mut k {
                        *late_fraction = self.late_fraction;
                    }
                    k
                }
            }
        }
    }

    /// Condition channels implied by the task (2 for neighbor-slice SR,
    /// `cond_channels` for custom directories, 1 otherwise).
    pub fn effective_cond_channels(&self) -> usize {
        match self.task {
            Task::Sr => 2,
            Task::CustomDir => self.cond_channels,
            _ => 1,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            target_channels: 1,
            cond_channels: self.effective_cond_channels(),
            base_width: self.base_width,
            levels: self.levels,
            time_embed_dim: self.time_embed_dim,
            image_size: self.image_size,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            t_base: self.t_base,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            s_steps: self.s_steps,
            kind: self.scheduler_kind(),
        }
    }

    pub fn schedule(&self) -> Result<(BaseSchedule, StepGrid)> {
        self.grid_spec().build()
    }

    pub fn sample_mode(&self) -> SampleMode {
        if self.sample_ancestral {
            SampleMode::Ancestral
        } else {
            SampleMode::Deterministic
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser_config().validate()?;
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if self.task == Task::CustomDir && self.dataset_dir.is_none() {
            return Err(Error::Config(
                "task custom-dir needs dataset_dir".to_string(),
            ));
        }
        if let Some(dir) = &self.dataset_dir {
            if self.task == Task::CustomDir && !dir.is_dir() {
                return Err(Error::Config(format!(
                    "dataset_dir {} is not a directory",
                    dir.display()
                )));
            }
        }
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dose_fraction must be in (0, 1], got {}",
                self.dose_fraction
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "n_train and n_test must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Canonical resolved listing, one key per line, fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let kind = self.scheduler_kind();
        let (bnd, late) = match kind {
            SchedulerKind::Uniform => (0, 0.0),
            SchedulerKind::NonUniform {
                boundary_index,
                late_fraction,
            } => (boundary_index, late_fraction),
        };
        let path_str = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let _ = write!(
            s,
            "task={}\nimage_size={}\nt_base={}\nbeta_start={:e}\nbeta_end={:e}\n\
             s_steps={}\nscheduler={}\nboundary_index={}\nlate_fraction={}\n\
             base_width={}\nlevels={}\ntime_embed_dim={}\nlr={:e}\n\
             adam_beta1={}\nadam_beta2={}\nadam_eps={:e}\niterations={}\n\
             batch_size={}\nseed={}\nn_train={}\nn_test={}\ndose_fraction={}\n\
             cond_channels={}\ndataset_dir={}\nout_dir={}\ncheckpoint={}\n\
             checkpoint_every={}\nsample_mode={}\nemit_trajectory={}\n\
             eval_count={}\nlog_every={}\n",
            self.task.label(),
            self.image_size,
            self.t_base,
            self.beta_start,
            self.beta_end,
            self.s_steps,
            if self.scheduler_uniform { "uniform" } else { "nonuniform" },
            bnd,
            late,
            self.base_width,
            self.levels,
            self.time_embed_dim,
            self.lr,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.iterations,
            self.batch_size,
            self.seed,
            self.n_train,
            self.n_test,
            self.dose_fraction,
            self.effective_cond_channels(),
            path_str(&self.dataset_dir),
            self.out_dir.display(),
            path_str(&self.checkpoint),
            self.checkpoint_every,
            self.sample_mode().label(),
            self.emit_trajectory,
            self.eval_count,
            self.log_every,
        );
        s
    }

    /// First 16 hex chars of sha256 over the canonical listing.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
