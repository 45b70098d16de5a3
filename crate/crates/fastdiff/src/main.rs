use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fastdiff::commands;
use fastdiff::config::RunConfig;

/// Few-step conditional diffusion engine: schedules, training, sampling,
/// evaluation, and oracle audits.
#[derive(Parser)]
#[command(name = "fastdiff", version, about)]
struct Cli {
    /// Path to a key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Checkpoint to resume from (train) or sample/evaluate with.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Override the number of grid steps S (bench-steps takes a comma list).
    #[arg(long)]
    steps: Option<String>,

    /// Override the scheduler kind.
    #[arg(long, value_parser = ["uniform", "nonuniform"])]
    scheduler: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the configured step grid as CSV.
    Schedule,
    /// Train the denoiser on the configured task.
    Train,
    /// Sample images for the test conditions from a checkpoint.
    Sample,
    /// Sample and score the test set (PSNR/SSIM report).
    Eval,
    /// Train/evaluate across a list of step counts (--steps "3,10,100").
    BenchSteps,
    /// Train/evaluate the uniform and non-uniform schedulers side by side.
    BenchScheduler,
    /// Training-free schedule and sampler audits; fails on any red check.
    Oracle,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(ckpt) = &cli.checkpoint {
        cfg.checkpoint = Some(ckpt.clone());
    }
    if let Some(sched) = &cli.scheduler {
        cfg.set_scheduler(sched)?;
    }
    if let Some(steps) = &cli.steps {
        if !matches!(cli.command, Command::BenchSteps) {
            cfg.s_steps = steps
                .parse()
                .with_context(|| format!("bad --steps value {steps:?}"))?;
        }
    }
    Ok(cfg)
}

fn parse_steps_list(cli: &Cli) -> Result<Vec<usize>> {
    let raw = cli.steps.as_deref().unwrap_or("3,10,100");
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad steps entry {s:?}"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve_config(&cli)?;
    println!("config_hash={}", cfg.hash());
    match cli.command {
        Command::Schedule => {
            let path = commands::cmd_schedule(&cfg)?;
            println!("schedule written to {}", path.display());
        }
        Command::Train => {
            let out = commands::cmd_train(&cfg)?;
            println!(
                "trained {} iterations in {:.1}s, final loss {:.5}",
                out.iterations_run, out.train_seconds, out.final_loss
            );
            println!("checkpoint: {}", out.checkpoint_path.display());
            println!("loss curve: {}", out.loss_csv.display());
        }
        Command::Sample => {
            let out = commands::cmd_sample(&cfg)?;
            let mean = out.per_image_seconds.iter().sum::<f64>()
                / out.per_image_seconds.len().max(1) as f64;
            println!(
                "{} images in {} ({:.3}s per image)",
                out.per_image_seconds.len(),
                out.image_dir.display(),
                mean
            );
        }
        Command::Eval => {
            let out = commands::cmd_eval(&cfg)?;
            println!(
                "psnr {:.3} ± {:.3} dB, ssim {:.4} ± {:.4} ({} images)",
                out.report.mean_psnr(),
                out.report.std_psnr(),
                out.report.mean_ssim(),
                out.report.std_ssim(),
                out.report.rows.len()
            );
            println!("report: {}", out.eval_csv.display());
        }
        Command::BenchSteps => {
            let steps = parse_steps_list(&cli)?;
            let rows = commands::cmd_bench_steps(&cfg, &steps)?;
            for r in &rows {
                println!(
                    "S={:4}  psnr {:.3}  ssim {:.4}  train {:.1}s  sample {:.3}s/img",
                    r.s_steps, r.psnr, r.ssim, r.train_seconds, r.sample_seconds_per_image
                );
            }
        }
        Command::BenchScheduler => {
            let rows = commands::cmd_bench_scheduler(&cfg)?;
            for r in &rows {
                println!(
                    "{:10}  psnr {:.3} (baseline {:.3})  ssim {:.4} (baseline {:.4})",
                    r.scheduler, r.psnr, r.baseline_psnr, r.ssim, r.baseline_ssim
                );
            }
        }
        Command::Oracle => {
            let checks = commands::cmd_oracle(&cfg)?;
            let mut all_ok = true;
            for c in &checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", c.name, c.detail);
                all_ok &= c.pass;
            }
            return Ok(all_ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    commands::init_thread_pool_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
