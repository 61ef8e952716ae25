mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ppg_sleep::dsp::DspError;
use ppg_sleep::metrics::{measure_agreement, sleep_measures, MetricsError, MetricsReport, PatientResult};
use ppg_sleep::models::{ModelConfig, ModelError};
use ppg_sleep::neural::{read_checkpoint, write_checkpoint, NeuralError};
use ppg_sleep::protocol::{
    cache_path, generate_synthetic_domain, leave_one_out, predict_dataset, prepare_dataset, summary_table,
    Dataset, FoldOutcome, InputKind, ProtocolError, SynthDomainSpec, TrainPlan, Trainer,
};
use ppg_sleep::records::{load_manifest, RecordError};
use ppg_sleep::staging::Task;

const EXIT_USAGE: u8 = 64;
const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ppg-sleep", version, about = "Sleep staging from photoplethysmography")]
struct Cli {
    /// Overrides the seed of the spec or plan.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-record stages and folds.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Four,
    Three,
    Two,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Four => Task::Four,
            TaskArg::Three => Task::Three,
            TaskArg::Two => Task::Two,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase", tag = "command")]
enum Command {
    /// Generate synthetic domains from a JSON spec (one spec or a list).
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to --out-dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preprocess every record of a manifest into the epoch cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory; defaults to --out-dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pulse-rate input for the DTS benchmark instead of PPG epochs.
        #[arg(long)]
        dts: bool,
    },
    /// Train on the source datasets of a plan.
    Train {
        #[arg(long)]
        plan: PathBuf,
        /// Manifests of the datasets the plan names.
        #[arg(long = "manifest", num_args = 1.., required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Continue from the state saved in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Leave-one-domain-out training and evaluation.
    Loo {
        #[arg(long, num_args = 2.., required = true)]
        domains: Vec<PathBuf>,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = TaskArg::Four)]
        task: TaskArg,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Combine metrics reports or leave-one-out results into tables and plots.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
    },
}

struct Log(LogLevel);

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.0 >= LogLevel::Info {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        if self.0 >= LogLevel::Warn {
            eprintln!("warning: {}", msg.as_ref());
        }
    }
}

#[derive(Serialize)]
struct RunConfig<'a> {
    tool: &'static str,
    version: &'static str,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: &'a Path,
    #[serde(flatten)]
    command: &'a Command,
    /// Values resolved from files (plan, specs).
    resolved: serde_json::Value,
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn echo(cli: &Cli, resolved: serde_json::Value) -> Result<()> {
    write_json(
        cli.out_dir.join("run_config.json"),
        &RunConfig {
            tool: "ppg-sleep",
            version: env!("CARGO_PKG_VERSION"),
            seed: cli.seed,
            threads: cli.threads,
            out_dir: &cli.out_dir,
            command: &cli.command,
            resolved,
        },
    )
}

fn load_plan(cli: &Cli, path: &Path) -> Result<TrainPlan> {
    let mut plan: TrainPlan = read_json(path)?;
    if let Some(seed) = cli.seed {
        plan.seed = seed;
    }
    Ok(plan)
}

fn load_datasets(paths: &[PathBuf], kind: InputKind, cache: Option<&Path>, log: &Log) -> Result<Vec<Dataset>> {
    paths
        .iter()
        .map(|p| {
            let manifest = load_manifest(p)?;
            log.info(format!("loading {} ({} records)", manifest.name, manifest.records.len()));
            Ok(prepare_dataset(&manifest, kind, cache)?)
        })
        .collect()
}

fn kind_of(plan: &TrainPlan) -> Result<InputKind> {
    Ok(InputKind::of(&plan.model_config()?))
}

fn cmd_synth(cli: &Cli, spec_path: &Path, out: Option<&Path>, log: &Log) -> Result<()> {
    let value: serde_json::Value = read_json(spec_path)?;
    let specs: Vec<SynthDomainSpec> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    let out = out.unwrap_or(&cli.out_dir);
    let seed = cli.seed.unwrap_or(0);
    for (i, spec) in specs.iter().enumerate() {
        let path = generate_synthetic_domain(spec, seed + i as u64, out)?;
        log.info(format!("wrote {}", path.display()));
    }
    echo(cli, serde_json::json!({ "specs": specs, "seed": seed }))
}

fn cmd_preprocess(cli: &Cli, manifest: &Path, out: Option<&Path>, dts: bool, log: &Log) -> Result<()> {
    let manifest = load_manifest(manifest)?;
    let kind = if dts { InputKind::PulseRate } else { InputKind::Ppg };
    let cache = out.unwrap_or(&cli.out_dir);
    let data = prepare_dataset(&manifest, kind, Some(cache))?;
    let summary: Vec<serde_json::Value> = data
        .records
        .iter()
        .map(|r| {
            serde_json::json!({
                "record_id": r.record_id,
                "epochs": r.epochs.n_epochs(),
                "valid_epochs": r.hypnogram.n_valid(),
                "cache": cache_path(cache, &data.name, &r.record_id, kind),
            })
        })
        .collect();
    log.info(format!("cached {} records of {}", summary.len(), data.name));
    write_json(cli.out_dir.join("preprocess_summary.json"), &summary)?;
    echo(cli, serde_json::json!({ "input": kind }))
}

fn jsonl<T: Serialize>(lines: &[T]) -> Result<String> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

fn cmd_train(cli: &Cli, plan_path: &Path, manifests: &[PathBuf], cache: Option<&Path>, resume: bool, log: &Log) -> Result<()> {
    let plan = load_plan(cli, plan_path)?;
    plan.validate()?;
    let data = load_datasets(manifests, kind_of(&plan)?, cache, log)?;
    let state_dir = cli.out_dir.join("state");
    let fold = plan.target.clone().unwrap_or_else(|| "train".into());
    let mut trainer = if resume && state_dir.join("state.json").is_file() {
        log.info("resuming from saved state");
        Trainer::resume(&plan, &state_dir, &data)?
    } else {
        Trainer::new(&plan, &fold, &data)?
    };
    echo(cli, serde_json::to_value(&plan)?)?;
    while !trainer.finished() {
        let line = trainer.run_epoch()?.clone();
        log.info(serde_json::to_string(&line)?);
        trainer.save_state(&state_dir)?;
        write(cli.out_dir.join("train_log.jsonl"), jsonl(trainer.log())?)?;
    }
    let outcome = trainer.into_outcome();
    write_checkpoint(cli.out_dir.join("best.spw"), &outcome.best)?;
    write_json(cli.out_dir.join("audit.json"), &outcome.audit)?;
    write_json(
        cli.out_dir.join("train_summary.json"),
        &serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "best_val_kappa": outcome.best_val_kappa,
        }),
    )
}

fn kappa_csv(report: &MetricsReport) -> String {
    let mut s = String::from("record_id,kappa,n_epochs\n");
    for k in &report.kappa_per_patient {
        s.push_str(&format!("{},{:.6},{}\n", k.record_id, k.kappa, k.n_epochs));
    }
    s
}

fn write_report_files(dir: &Path, report: &MetricsReport, suffix: &str) -> Result<()> {
    let names = report.task.class_names();
    write_json(dir.join(format!("report{suffix}.json")), report)?;
    write(dir.join(format!("kappa_per_patient{suffix}.csv")), kappa_csv(report))?;
    write(dir.join(format!("confusion{suffix}.csv")), report.confusion.to_csv(names))?;
    write(
        dir.join(format!("confusion{suffix}.svg")),
        svg::confusion(&format!("confusion ({:?})", report.task).to_lowercase(), names, &report.confusion.counts),
    )
}

/// Per-night sleep measures of prediction and reference as CSV plus a
/// Bland-Altman plot of total sleep time.
fn write_sleep_measures(dir: &Path, patients: &[PatientResult]) -> Result<()> {
    let mut csv = String::from("record_id,tst_ref,tst_pred,se_ref,se_pred,fr_light_ref,fr_light_pred,fr_deep_ref,fr_deep_pred,fr_rem_ref,fr_rem_pred\n");
    let mut pairs = Vec::new();
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for p in patients {
        let mask: Vec<bool> = p.reference.valid.iter().zip(&p.prediction.valid).map(|(a, b)| *a && *b).collect();
        if !mask.iter().any(|m| *m) {
            continue;
        }
        let r = sleep_measures(&ppg_sleep::staging::Hypnogram::new(p.reference.stages.clone(), mask.clone()))?;
        let q = sleep_measures(&ppg_sleep::staging::Hypnogram::new(p.prediction.stages.clone(), mask))?;
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{}\n",
            p.record_id,
            r.tst_min,
            q.tst_min,
            r.se_pct,
            q.se_pct,
            opt(r.fr_light_pct),
            opt(q.fr_light_pct),
            opt(r.fr_deep_pct),
            opt(q.fr_deep_pct),
            opt(r.fr_rem_pct),
            opt(q.fr_rem_pct)
        ));
        pairs.push((q.tst_min, r.tst_min));
    }
    write(dir.join("sleep_measures.csv"), csv)?;
    if pairs.len() >= 2 {
        let (p, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let a = measure_agreement(&p, &r)?;
        write(
            dir.join("bland_altman_tst.svg"),
            svg::bland_altman("total sleep time (min)", &pairs, a.mean_diff, (a.loa_low, a.loa_high)),
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LooSummary {
    model: String,
    folds: Vec<FoldOutcome>,
}

fn cmd_loo(cli: &Cli, domains: &[PathBuf], plan_path: &Path, cache: Option<&Path>, log: &Log) -> Result<bool> {
    let plan = load_plan(cli, plan_path)?;
    let data = load_datasets(domains, kind_of(&plan)?, cache, log)?;
    echo(cli, serde_json::to_value(&plan)?)?;
    let folds = leave_one_out(&data, &plan)?;
    let mut all_logs = Vec::new();
    let mut rows = Vec::new();
    let mut failed = false;
    for fold in &folds {
        let dir = cli.out_dir.join("folds").join(&fold.target);
        all_logs.extend(fold.log.iter().cloned());
        match &fold.result {
            Ok(report) => {
                for r in &report.reports {
                    let suffix = format!("_{}", format!("{:?}", r.task).to_lowercase());
                    write_report_files(&dir, r, &suffix)?;
                }
                write_json(dir.join("audit.json"), &report.audit)?;
                if let Some(best) = &fold.best {
                    write_checkpoint(dir.join("best.spw"), best)?;
                    let target = data.iter().find(|d| d.name == fold.target).expect("fold target");
                    write_sleep_measures(&dir, &predict_dataset(best, target)?)?;
                }
                log.info(format!(
                    "fold {}: median kappa {:.3}, pooled kappa {:.3}",
                    fold.target,
                    report.reports[0].kappa_median,
                    report.reports[0].kappa_overall
                ));
                rows.push((fold.target.clone(), report.reports.clone()));
            }
            Err(e) => {
                failed = true;
                log.warn(format!("fold {} failed: {e}", fold.target));
            }
        }
    }
    write(cli.out_dir.join("train_log.jsonl"), jsonl(&all_logs)?)?;
    for task in [Task::Four, Task::Three, Task::Two] {
        let cols: Vec<(String, MetricsReport)> = rows
            .iter()
            .filter_map(|(t, reps)| reps.iter().find(|r| r.task == task).map(|r| (t.clone(), r.clone())))
            .collect();
        let name = format!("summary_{}.csv", format!("{task:?}").to_lowercase());
        write(cli.out_dir.join(name), summary_table(&[(plan.model.clone(), cols)]))?;
    }
    write_json(
        cli.out_dir.join("loo.json"),
        &LooSummary {
            model: plan.model.clone(),
            folds,
        },
    )?;
    Ok(failed)
}

fn cmd_evaluate(cli: &Cli, checkpoint: &Path, manifest: &Path, task: Task, cache: Option<&Path>, log: &Log) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let config: ModelConfig = serde_json::from_str(&ckpt.config).context("checkpoint configuration")?;
    let manifest = load_manifest(manifest)?;
    let data = prepare_dataset(&manifest, InputKind::of(&config), cache)?;
    let patients = predict_dataset(&ckpt, &data)?;
    let report = ppg_sleep::metrics::evaluate_dataset(&patients, task)?;
    log.info(format!(
        "{}: median kappa {:.3} (IQR {:.3}-{:.3}), pooled kappa {:.3}, accuracy {:.3}",
        data.name, report.kappa_median, report.kappa_q1, report.kappa_q3, report.kappa_overall, report.accuracy
    ));
    echo(cli, serde_json::json!({ "model": config, "dataset": data.name }))?;
    write_report_files(&cli.out_dir, &report, "")?;
    write_sleep_measures(&cli.out_dir, &patients)
}

fn cmd_report(cli: &Cli, inputs: &[PathBuf], log: &Log) -> Result<()> {
    // (row label, column label, report)
    let mut entries: Vec<(String, String, MetricsReport)> = Vec::new();
    for path in inputs {
        let value: serde_json::Value = read_json(path)?;
        if value.get("folds").is_some() {
            let loo: LooSummary = serde_json::from_value(value).with_context(|| path.display().to_string())?;
            for fold in loo.folds {
                match fold.result {
                    Ok(r) => entries.extend(r.reports.into_iter().map(|m| (loo.model.clone(), fold.target.clone(), m))),
                    Err(e) => log.warn(format!("{}: fold {} has no report ({e})", path.display(), fold.target)),
                }
            }
        } else {
            let report: MetricsReport = serde_json::from_value(value).with_context(|| path.display().to_string())?;
            let label = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            entries.push(("report".into(), label, report));
        }
    }
    if entries.is_empty() {
        bail!("no reports to combine");
    }
    let mut csv = String::from("model,dataset,task,n_patients,kappa_median,kappa_q1,kappa_q3,kappa_overall,kappa_mean_per_patient,accuracy\n");
    for (model, dataset, r) in &entries {
        csv.push_str(&format!(
            "{model},{dataset},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            format!("{:?}", r.task).to_lowercase(),
            r.kappa_per_patient.len(),
            r.kappa_median,
            r.kappa_q1,
            r.kappa_q3,
            r.kappa_overall,
            r.kappa_mean_per_patient,
            r.accuracy
        ));
    }
    write(cli.out_dir.join("combined.csv"), csv)?;
    let json: Vec<serde_json::Value> = entries
        .iter()
        .map(|(m, d, r)| serde_json::json!({ "model": m, "dataset": d, "report": r }))
        .collect();
    write_json(cli.out_dir.join("combined.json"), &json)?;
    for task in [Task::Four, Task::Three, Task::Two] {
        let mut models: Vec<String> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        for (m, d, r) in &entries {
            if r.task == task {
                if !models.contains(m) {
                    models.push(m.clone());
                }
                if !datasets.contains(d) {
                    datasets.push(d.clone());
                }
            }
        }
        if models.is_empty() {
            continue;
        }
        let rows: Vec<(String, Vec<(String, MetricsReport)>)> = models
            .iter()
            .map(|m| {
                let cols = entries
                    .iter()
                    .filter(|(mm, _, r)| mm == m && r.task == task)
                    .map(|(_, d, r)| (d.clone(), r.clone()))
                    .collect();
                (m.clone(), cols)
            })
            .collect();
        let name = format!("{task:?}").to_lowercase();
        write(cli.out_dir.join(format!("table_{name}.csv")), summary_table(&rows))?;
        let series: Vec<(String, Vec<Option<f64>>)> = rows
            .iter()
            .map(|(m, cols)| {
                let vals = datasets
                    .iter()
                    .map(|d| cols.iter().find(|(n, _)| n == d).map(|(_, r)| r.kappa_median))
                    .collect();
                (m.clone(), vals)
            })
            .collect();
        write(
            cli.out_dir.join(format!("kappa_{name}.svg")),
            svg::bars(&format!("median per-patient kappa ({name})"), &datasets, &series),
        )?;
    }
    log.info(format!("combined {} reports", entries.len()));
    echo(cli, serde_json::Value::Null)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<ProtocolError>() {
            return match p {
                ProtocolError::Plan(_) => "plan",
                ProtocolError::Data(_) => "data",
                ProtocolError::Synth(_) => "synth",
                ProtocolError::Io(_) => "io",
                ProtocolError::Record(_) => "record",
                ProtocolError::Dsp { .. } => "signal",
                ProtocolError::Model(_) => "model",
                ProtocolError::Neural(_) => "neural",
                ProtocolError::Metrics(_) => "metrics",
            };
        }
        if cause.is::<RecordError>() {
            return "record";
        }
        if cause.is::<DspError>() {
            return "signal";
        }
        if cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<NeuralError>() {
            return "neural";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<serde_json::Error>() {
            return "parse";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let log = Log(cli.log_level);
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Synth { spec, out } => cmd_synth(cli, spec, out.as_deref(), &log)?,
        Command::Preprocess { manifest, out, dts } => cmd_preprocess(cli, manifest, out.as_deref(), *dts, &log)?,
        Command::Train {
            plan,
            manifests,
            cache,
            resume,
        } => cmd_train(cli, plan, manifests, cache.as_deref(), *resume, &log)?,
        Command::Loo { domains, plan, cache } => return cmd_loo(cli, domains, plan, cache.as_deref(), &log),
        Command::Evaluate {
            checkpoint,
            manifest,
            task,
            cache,
        } => cmd_evaluate(cli, checkpoint, manifest, (*task).into(), cache.as_deref(), &log)?,
        Command::Report { reports } => cmd_report(cli, reports, &log)?,
    }
    Ok(false)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            let body = serde_json::json!({
                "error": error_kind(&e),
                "message": format!("{e:#}"),
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn task_flag_maps_to_task() {
        assert_eq!(Task::from(TaskArg::Two), Task::Two);
    }
}
