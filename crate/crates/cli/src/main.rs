//! `satmc`: command-line front end for graph domain adaptation experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satmc_core::experiment::{
    emit_tables, evaluate_run_dir, find_experiments, run_diffuse, run_experiment, run_pretrain,
    write_synthetic_pair, ExperimentConfig, SyntheticSpec, RESULTS_FILE,
};
use satmc_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "satmc",
    version,
    about = "Unsupervised node classification across graph domains"
)]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write each run's diffusion matrices as `diffusion.tsv`.
    #[arg(long, global = true)]
    dump_diffusion: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic source/target pair as dataset directories.
    Synth,
    /// Dump the diffusion matrices of both graphs.
    Diffuse,
    /// Pretrain the private encoders only.
    Pretrain,
    /// Train and evaluate every configured seed.
    Train,
    /// Re-evaluate finished runs from their artifacts.
    Eval,
    /// Build result tables and plot series from finished experiments.
    Tables,
}

impl Cli {
    fn load_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let mut config = ExperimentConfig::from_path(path)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.dump_diffusion {
            config.dump_diffusion = true;
        }
        Ok(config)
    }

    fn out_dir(&self, config: Option<&ExperimentConfig>) -> Result<PathBuf> {
        self.out
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))
    }
}

fn run(cli: &Cli) -> Result<Value> {
    match cli.command {
        Command::Synth => {
            let mut spec = match &cli.config {
                Some(_) => cli
                    .load_config()?
                    .synthetic
                    .ok_or_else(|| Error::Config("config has no synthetic block".into()))?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.generator.seed = seed;
            }
            let out = cli.out_dir(None)?;
            write_synthetic_pair(&spec, &out)?;
            Ok(json!({
                "source": out.join("source"),
                "target": out.join("target"),
            }))
        }
        Command::Diffuse => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config))?;
            run_diffuse(&config, &out)?;
            Ok(json!({ "out": out }))
        }
        Command::Pretrain => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config))?;
            let (s, t) = run_pretrain(&config, &out)?;
            Ok(json!({
                "out": out,
                "final_loss_source": s.last(),
                "final_loss_target": t.last(),
            }))
        }
        Command::Train => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config))?;
            let (results, _) = run_experiment(&config, &out, cli.jobs.max(1))?;
            Ok(json!({
                "out": out,
                "name": results.name,
                "mean_target_accuracy": results.mean_target_accuracy,
                "std_target_accuracy": results.std_target_accuracy,
            }))
        }
        Command::Eval => {
            let out = cli.out_dir(None)?;
            let dirs = run_dirs(&out)?;
            let mut reports = Vec::new();
            for dir in dirs {
                let report = evaluate_run_dir(&dir)?;
                reports.push(json!({
                    "run_dir": dir,
                    "target_accuracy": report.target_accuracy,
                    "mmd": report.mmd,
                }));
            }
            Ok(Value::Array(reports))
        }
        Command::Tables => {
            let out = cli.out_dir(None)?;
            let set = emit_tables(&out)?;
            Ok(json!({
                "tables": out.join("tables"),
                "series_files": set.series.len(),
            }))
        }
    }
}

/// A run directory itself, or every run listed by the experiments under `out`.
fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let results = out.join(RESULTS_FILE);
    if results.is_file() {
        let value: Value = serde_json::from_str(
            &std::fs::read_to_string(&results).map_err(|e| Error::io(&results, e))?,
        )?;
        if value.get("runs").is_none() {
            return Ok(vec![out.to_path_buf()]);
        }
    }
    Ok(find_experiments(out)?
        .into_iter()
        .flat_map(|(dir, r)| r.runs.into_iter().map(move |run| dir.join(run.run_dir)))
        .collect())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let block = json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{block}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "ok": summary })).unwrap()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let block = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{block}");
            ExitCode::FAILURE
        }
    }
}
