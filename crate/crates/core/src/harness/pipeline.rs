use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::biasgen::{save_bundle, DataBundle, Scenario};
use crate::cobum::component_scores;
use crate::eval::{evaluate, EvalReport};
use crate::model::{load_checkpoint, save_checkpoint, train, ModelParams, TrainOutcome};
use crate::unlearn::{hard_unlearn, run_strategy, StrategyConfig, StrategyInputs, UnlearnData, UnlearnResult};

use super::config::seeds;
use super::report::{emit_table, Format, ReportRow, RowKind};
use super::{prepare_output_dir, ExperimentConfig, HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_seconds: f64,
    /// Counted floating-point work (zero for stages without graph work).
    pub flops: u64,
}

/// Paths are relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
    pub config: PathBuf,
    pub bundle: Option<PathBuf>,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub step_logs: BTreeMap<String, PathBuf>,
    pub reports: BTreeMap<String, PathBuf>,
    /// Strategies that failed without stopping the run.
    pub strategy_failures: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash()?,
            scenario: cfg.scenario,
            seed: cfg.seed,
            status: RunStatus::Ok,
            failed_stage: None,
            error: None,
            stages: Vec::new(),
            config: PathBuf::from("config.toml"),
            bundle: None,
            checkpoints: BTreeMap::new(),
            step_logs: BTreeMap::new(),
            reports: BTreeMap::new(),
            strategy_failures: BTreeMap::new(),
            notes: Vec::new(),
        })
    }

    /// Every path listed in the manifest, relative to the run directory.
    pub fn listed_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.config];
        out.extend(self.bundle.as_deref());
        out.extend(self.checkpoints.values().map(PathBuf::as_path));
        out.extend(self.step_logs.values().map(PathBuf::as_path));
        out.extend(self.reports.values().map(PathBuf::as_path));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub rows: Vec<ReportRow>,
}

/// Generates the scenario's bundle and attaches its counterfactual set.
pub fn prepare_bundle(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let bundle = cfg.generator.generate(cfg.seed + seeds::DATA)?;
    Ok(bundle.with_counterfactual(cfg.seed + seeds::COUNTERFACTUAL)?)
}

pub fn train_baseline(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<TrainOutcome> {
    let arch = cfg.architecture(bundle.width(), bundle.num_classes);
    let init = arch.init(cfg.seed + seeds::BASELINE_INIT)?;
    Ok(train(&init, &bundle.train_set(), &cfg.baseline_train())?)
}

pub fn train_gold(cfg: &ExperimentConfig, bundle: &DataBundle, data: &UnlearnData) -> Result<UnlearnResult> {
    let arch = cfg.architecture(bundle.width(), bundle.num_classes);
    Ok(hard_unlearn(&arch, cfg.seed + seeds::GOLD_INIT, data, &cfg.gold_train())?)
}

/// Runs one configured strategy (seeded from the master seed).
pub fn unlearn_with(
    cfg: &ExperimentConfig,
    strategy: &StrategyConfig,
    baseline: &ModelParams,
    gold: Option<&ModelParams>,
    data: &UnlearnData,
) -> Result<UnlearnResult> {
    let train_config = cfg.gold_train();
    Ok(run_strategy(
        &cfg.seeded_strategy(strategy),
        &StrategyInputs {
            baseline,
            data,
            gold,
            train_config: &train_config,
            init_seed: cfg.seed + seeds::GOLD_INIT,
        },
    )?)
}

pub fn write_step_log(result: &UnlearnResult, path: &Path) -> Result<()> {
    result.step_log.write_table(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase()
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    manifest: RunManifest,
}

impl Runner<'_> {
    /// Runs a stage, recording its wall time; on error the manifest is
    /// written with the failed stage before the error propagates.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let flops = crate::autodiff::flop_count();
        let out = f(self);
        let wall = start.elapsed().as_secs_f64();
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            wall_seconds: wall,
            flops: crate::autodiff::flop_count() - flops,
        });
        match out {
            Ok(v) => Ok(v),
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.failed_stage = Some(name.to_string());
                self.manifest.error = Some(e.to_string());
                // The original error matters more than a manifest write failure.
                let _ = self.manifest.write(self.dir);
                Err(match e {
                    e @ (HarnessError::Config(_) | HarnessError::OutputExists(_) | HarnessError::Input { .. }) => e,
                    other => HarnessError::Stage {
                        stage: name.to_string(),
                        message: other.to_string(),
                    },
                })
            }
        }
    }

    fn save_model(&mut self, label: &str, model: &ModelParams) -> Result<()> {
        let rel = PathBuf::from("checkpoints").join(format!("{}.ckpt", slug(label)));
        save_checkpoint(model, &self.dir.join(&rel))?;
        self.manifest.checkpoints.insert(label.to_string(), rel);
        Ok(())
    }

    fn save_log(&mut self, label: &str, result: &UnlearnResult) -> Result<()> {
        let rel = PathBuf::from("logs").join(format!("{}.steps.csv", slug(label)));
        write_step_log(result, &self.dir.join(&rel))?;
        self.manifest.step_logs.insert(label.to_string(), rel);
        Ok(())
    }
}

struct Trained {
    label: String,
    kind: RowKind,
    model: ModelParams,
    seconds: f64,
}

/// Generate, train the baseline, retrain the gold model, run each
/// configured strategy from the persisted baseline, evaluate everything,
/// score Co-BUM against the run's own baseline and gold, and emit the
/// tables and manifest into the output directory.
///
/// A failing strategy becomes a "failed" row; any other failure stops the
/// run with the manifest naming the stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = super::resolve_output_dir(&cfg.output_dir);
    prepare_output_dir(&dir)?;
    for sub in ["checkpoints", "logs", "reports"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut run = Runner {
        cfg,
        dir: &dir,
        manifest: RunManifest::new(cfg)?,
    };

    let bundle = run.stage("generate", |r| {
        let b = prepare_bundle(r.cfg)?;
        save_bundle(&b, &r.dir.join("bundle"))?;
        r.manifest.bundle = Some(PathBuf::from("bundle"));
        Ok(b)
    })?;
    let data = UnlearnData::from_bundle(&bundle);

    let mut trained: Vec<Trained> = Vec::new();
    run.stage("baseline", |r| {
        let out = train_baseline(r.cfg, &bundle)?;
        r.save_model("Baseline", &out.model)?;
        trained.push(Trained {
            label: "Baseline".into(),
            kind: RowKind::Baseline,
            seconds: r.cfg.reported_seconds(out.flops, out.wall_time_seconds),
            model: out.model,
        });
        Ok(())
    })?;
    // Strategies start from the persisted checkpoint, never from a model
    // another stage could have touched.
    let baseline_path = dir.join(&run.manifest.checkpoints["Baseline"]);
    let baseline = run.stage("reload", |_| Ok(load_checkpoint(&baseline_path)?))?;

    let gold = run.stage("hard", |r| {
        let out = train_gold(r.cfg, &bundle, &data)?;
        r.save_model("Hard", &out.model)?;
        r.save_log("Hard", &out)?;
        trained.push(Trained {
            label: "Hard".into(),
            kind: RowKind::Gold,
            seconds: r.cfg.reported_seconds(out.flops, out.wall_time_seconds),
            model: out.model.clone(),
        });
        Ok(out.model)
    })?;

    let mut failed: Vec<String> = Vec::new();
    for s in &cfg.strategies {
        let label = s.strategy.label().to_string();
        let start = Instant::now();
        let flops = crate::autodiff::flop_count();
        let outcome = unlearn_with(cfg, s, &baseline, Some(&gold), &data).and_then(|out| {
            run.save_model(&label, &out.model)?;
            run.save_log(&label, &out)?;
            Ok(out)
        });
        run.manifest.stages.push(StageRecord {
            name: label.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
            flops: crate::autodiff::flop_count() - flops,
        });
        match outcome {
            Ok(out) => {
                if out.truncated {
                    run.manifest.notes.push(format!("{label}: divergence guard stopped the run early"));
                }
                trained.push(Trained {
                    label,
                    kind: RowKind::Method,
                    seconds: cfg.reported_seconds(out.flops, out.wall_time_seconds),
                    model: out.model,
                });
            }
            Err(e) => {
                run.manifest.strategy_failures.insert(label.clone(), e.to_string());
                failed.push(label);
            }
        }
    }

    let mut rows = run.stage("evaluate", |r| {
        let mut rows = Vec::with_capacity(trained.len() + failed.len());
        let mut base_report: Option<EvalReport> = None;
        for t in &trained {
            let mut rep = evaluate(&t.model, &bundle, t.seconds)?;
            let reference = base_report.clone().unwrap_or_else(|| rep.clone());
            rep.attach_baseline(&reference);
            if t.kind == RowKind::Baseline {
                base_report = Some(rep.clone());
            }
            rows.push(ReportRow {
                scenario: r.cfg.scenario,
                method: t.label.clone(),
                kind: t.kind,
                report: Some(rep),
                time_seconds: t.seconds,
                cobum: None,
                error: None,
            });
        }
        for label in &failed {
            rows.push(ReportRow {
                scenario: r.cfg.scenario,
                method: label.clone(),
                kind: RowKind::Method,
                report: None,
                time_seconds: f64::NAN,
                cobum: None,
                error: r.manifest.strategy_failures.get(label).cloned(),
            });
        }
        Ok(rows)
    })?;
    // Keep the configured strategy order, failed ones included.
    let order: Vec<String> = ["Baseline".to_string(), "Hard".to_string()]
        .into_iter()
        .chain(cfg.strategies.iter().map(|s| s.strategy.label().to_string()))
        .collect();
    rows.sort_by_key(|r| order.iter().position(|m| *m == r.method));

    run.stage("cobum", |r| {
        let base = rows.iter().find(|x| x.kind == RowKind::Baseline).and_then(|x| x.report.clone());
        let gold = rows.iter().find(|x| x.kind == RowKind::Gold).and_then(|x| x.report.clone());
        let (Some(base), Some(gold)) = (base, gold) else {
            return Ok(());
        };
        for row in rows.iter_mut().filter(|x| x.kind == RowKind::Method) {
            let Some(rep) = &row.report else { continue };
            match component_scores(rep, &gold, &base, &r.cfg.cobum) {
                Ok(s) => row.cobum = Some(s),
                Err(e) => r.manifest.notes.push(format!("{}: Co-BUM undefined ({e})", row.method)),
            }
        }
        Ok(())
    })?;

    run.stage("report", |r| {
        for format in [Format::Csv, Format::Json, Format::Markdown] {
            let rel = PathBuf::from("reports").join(format!("table.{}", format.extension()));
            emit_table(&rows, format, &r.dir.join(&rel))?;
            r.manifest.reports.insert(format!("table_{}", format.extension()), rel);
        }
        let rel = PathBuf::from("reports").join("reports.json");
        let mut text = serde_json::to_string_pretty(&rows)?;
        text.push('\n');
        std::fs::write(r.dir.join(&rel), text)?;
        r.manifest.reports.insert("raw".into(), rel);
        Ok(())
    })?;

    run.manifest.write(&dir)?;
    let manifest = run.manifest;
    Ok(RunOutcome {
        dir,
        manifest,
        rows,
    })
}
