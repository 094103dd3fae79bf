use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::biasgen::{load_bundle, save_bundle, DataBundle, Scenario};
use crate::cobum::component_scores;
use crate::eval::{b_block_mass, evaluate, saliency_batch, EvalReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::unlearn::{SolverReport, Strategy, StrategyConfig, UnlearnData};

use super::pipeline::{unlearn_with, write_step_log};
use super::{
    prepare_bundle, prepare_output_dir, resolve_output_dir, run_experiment, train_baseline, train_gold,
    ExperimentConfig, HarnessError, Result,
};

#[derive(Debug, Parser)]
#[command(name = "biaslab", version, about = "Bias-aware machine unlearning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; omitted keys take the scenario defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario to use when no config file is given.
    #[arg(long, default_value = "patch")]
    pub scenario: Scenario,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config; must be absent or empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the scenario's data bundle.
    Generate(Common),
    /// Train the baseline model.
    Train(Common),
    /// Run one unlearning strategy.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// hard, gradient_ascent, lora, scrub or fmd.
        #[arg(long)]
        strategy: Strategy,
        /// Baseline checkpoint; trained from the config when omitted.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Gold checkpoint (SCRUB teacher); retrained when omitted.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Bundle directory; regenerated from the config when omitted.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Evaluate checkpoints on the bundle.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Baseline checkpoint for the DP/EO drop percentages.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Seconds recorded in each report, one per model, in order.
        #[arg(long = "time")]
        times: Vec<f64>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Co-BUM from three evaluation reports.
    Cobum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        unlearned: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
    /// Full pipeline: data, baseline, gold, strategies, reports.
    Run(Common),
    /// Per-sample input-gradient attributions for one checkpoint.
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// train, val, test or forget.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                if !path.exists() {
                    return Err(HarnessError::Input {
                        path: path.clone(),
                        message: "config file not found".into(),
                    });
                }
                ExperimentConfig::load(path)?
            }
            None => ExperimentConfig::default_for(self.scenario),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = resolve_output_dir(&cfg.output_dir);
    prepare_output_dir(&dir)?;
    Ok(dir)
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn load_model(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).map_err(|e| input_error(path, e))
}

fn bundle_for(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<DataBundle> {
    match dir {
        Some(d) => load_bundle(d).map_err(|e| input_error(d, e)),
        None => prepare_bundle(cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| input_error(path, e))
}

#[derive(Serialize)]
struct UnlearnSummary {
    strategy: Strategy,
    config: StrategyConfig,
    wall_time_seconds: f64,
    flops: u64,
    reported_seconds: f64,
    truncated: bool,
    solver: Option<SolverReport>,
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(common) => {
            let cfg = common.config()?;
            let dir = out_dir(&cfg)?;
            let bundle = prepare_bundle(&cfg)?;
            save_bundle(&bundle, &dir.join("bundle"))?;
            println!(
                "wrote {} ({} train, {} forget)",
                dir.join("bundle").display(),
                bundle.train.len(),
                bundle.forget.len()
            );
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            let dir = out_dir(&cfg)?;
            let bundle = prepare_bundle(&cfg)?;
            save_bundle(&bundle, &dir.join("bundle"))?;
            let out = train_baseline(&cfg, &bundle)?;
            save_checkpoint(&out.model, &dir.join("baseline.ckpt"))?;
            println!(
                "wrote {} (final epoch loss {:.4})",
                dir.join("baseline.ckpt").display(),
                out.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Unlearn {
            common,
            strategy,
            baseline,
            gold,
            bundle,
        } => {
            let cfg = common.config()?;
            let dir = out_dir(&cfg)?;
            let bundle = bundle_for(&cfg, bundle.as_deref())?;
            let data = UnlearnData::from_bundle(&bundle);
            let base = match &baseline {
                Some(p) => load_model(p)?,
                None => train_baseline(&cfg, &bundle)?.model,
            };
            let teacher = match (&gold, strategy) {
                (Some(p), _) => Some(load_model(p)?),
                (None, Strategy::Scrub) => Some(train_gold(&cfg, &bundle, &data)?.model),
                _ => None,
            };
            let scfg = cfg
                .strategies
                .iter()
                .find(|s| s.strategy == strategy)
                .cloned()
                .unwrap_or_else(|| StrategyConfig::new(strategy));
            let out = unlearn_with(&cfg, &scfg, &base, teacher.as_ref(), &data)?;
            let stem = strategy.label().to_ascii_lowercase();
            save_checkpoint(&out.model, &dir.join(format!("{stem}.ckpt")))?;
            write_step_log(&out, &dir.join(format!("{stem}.steps.csv")))?;
            write_json(
                &dir.join(format!("{stem}.json")),
                &UnlearnSummary {
                    strategy,
                    config: cfg.seeded_strategy(&scfg),
                    wall_time_seconds: out.wall_time_seconds,
                    flops: out.flops,
                    reported_seconds: cfg.reported_seconds(out.flops, out.wall_time_seconds),
                    truncated: out.truncated,
                    solver: out.solver,
                },
            )?;
            println!("wrote {} ({} steps)", dir.join(format!("{stem}.ckpt")).display(), out.step_log.len());
        }
        Command::Eval {
            common,
            models,
            baseline,
            times,
            bundle,
        } => {
            let cfg = common.config()?;
            if !times.is_empty() && times.len() != models.len() {
                return Err(HarnessError::Config(format!(
                    "{} --time values for {} models",
                    times.len(),
                    models.len()
                )));
            }
            let dir = out_dir(&cfg)?;
            let bundle = bundle_for(&cfg, bundle.as_deref())?;
            let base_report = match &baseline {
                Some(p) => Some(evaluate(&load_model(p)?, &bundle, 0.0)?),
                None => None,
            };
            for (i, path) in models.iter().enumerate() {
                let model = load_model(path)?;
                let mut rep = evaluate(&model, &bundle, times.get(i).copied().unwrap_or(0.0))?;
                if let Some(b) = &base_report {
                    rep.attach_baseline(b);
                }
                let stem = path.file_stem().map_or_else(|| format!("model{i}"), |s| s.to_string_lossy().into_owned());
                let target = dir.join(format!("{stem}.report.json"));
                write_json(&target, &rep)?;
                println!(
                    "{stem}: FA {:.4} RA {:.4} TA {:.4} DP gap {:.4} EO gap {:.4} MIA {:.4}",
                    rep.fa, rep.ra, rep.ta, rep.dp_gap, rep.eo_gap, rep.mia_auc
                );
            }
        }
        Command::Cobum {
            common,
            unlearned,
            gold,
            baseline,
        } => {
            let cfg = common.config()?;
            let u = read_report(&unlearned)?;
            let g = read_report(&gold)?;
            let b = read_report(&baseline)?;
            let s = component_scores(&u, &g, &b, &cfg.cobum)?;
            println!(
                "U={:.4} F={:.4} Q={:.4} P={:.4} E={:.4} Co-BUM={:.4}",
                s.u, s.f, s.q, s.p, s.e, s.composite
            );
            if common.out.is_some() || common.config.is_some() {
                let dir = out_dir(&cfg)?;
                write_json(&dir.join("cobum.json"), &s)?;
            }
        }
        Command::Run(common) => {
            let cfg = common.config()?;
            let outcome = run_experiment(&cfg)?;
            for (name, msg) in &outcome.manifest.strategy_failures {
                eprintln!("warning: {name} failed: {msg}");
            }
            println!("wrote {}", outcome.dir.join("manifest.json").display());
        }
        Command::Saliency {
            common,
            model,
            split,
            bundle,
        } => {
            let cfg = common.config()?;
            let dir = out_dir(&cfg)?;
            let bundle = bundle_for(&cfg, bundle.as_deref())?;
            let data = match split.as_str() {
                "train" => bundle.train_set(),
                "val" => bundle.val_set(),
                "test" => bundle.test_set(),
                "forget" => bundle.forget_set(),
                other => return Err(HarnessError::Config(format!("unknown split `{other}`"))),
            };
            let m = load_model(&model)?;
            let sal = saliency_batch(&m, &data)?;
            let mut text = String::from("index,label,b_mass");
            for j in 0..data.width() {
                text.push_str(&format!(",x{j}"));
            }
            text.push('\n');
            let mut total = 0.0;
            for (i, row) in sal.iter().enumerate() {
                let mass = b_block_mass(row, bundle.d_s);
                total += mass;
                text.push_str(&format!("{i},{},{mass:.6}", data.labels()[i]));
                for v in row {
                    text.push_str(&format!(",{v:.6}"));
                }
                text.push('\n');
            }
            std::fs::write(dir.join("saliency.csv"), text)?;
            println!(
                "mean bias-block mass {:.4} (width share {:.4})",
                total / sal.len().max(1) as f64,
                bundle.d_b as f64 / bundle.width() as f64
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 user error, 2 internal error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_subcommand_is_a_user_error() {
        assert_eq!(run_cli(["biaslab", "frobnicate"]), 1);
        assert_eq!(run_cli(["biaslab", "run", "--bogus"]), 1);
    }

    #[test]
    fn missing_config_is_a_user_error() {
        assert_eq!(run_cli(["biaslab", "generate", "--config", "/nonexistent/cfg.toml"]), 1);
    }
}
