//! Training and evaluation protocols: single- and multi-source training,
//! leave-one-domain-out folds, and synthetic domains to run them on.

pub mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{preprocess_ipr, preprocess_ppg, DspError, EpochTensor, FilterSpec};
use crate::metrics::{evaluate_dataset, quantile, ConfusionMatrix, MetricsError, MetricsReport, PatientResult};
use crate::models::{predict_stages, ModelConfig, ModelError, SleepStager};
use crate::neural::{masked_cross_entropy, read_checkpoint, write_checkpoint, Adam, Checkpoint, Mode, NeuralError, Tensor};
use crate::records::{load_entry, DatasetManifest, PatientMeta, RecordError};
use crate::staging::{Hypnogram, Task};

pub use synth::{generate_synthetic_domain, synth_night, DomainShift, SynthDomainSpec, SynthNight};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("data: {0}")]
    Data(String),
    #[error("synthetic domain: {0}")]
    Synth(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{record_id}: {source}")]
    Dsp { record_id: String, source: DspError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::Io(format!("{}: {e}", path.display()))
}

/// One preprocessed night ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub record_id: String,
    pub epochs: EpochTensor,
    /// Valid where both the label and the signal are usable.
    pub hypnogram: Hypnogram,
    pub meta: PatientMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<PreparedRecord>,
}

/// Input representation a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Ppg,
    PulseRate,
}

impl InputKind {
    pub fn of(config: &ModelConfig) -> InputKind {
        if config.uses_pulse_rate() {
            InputKind::PulseRate
        } else {
            InputKind::Ppg
        }
    }

    fn extension(self) -> &'static str {
        match self {
            InputKind::Ppg => "spg",
            InputKind::PulseRate => "spi",
        }
    }
}

/// Cache file of one record: `<cache>/<dataset>/<record_id>.<spg|spi>`.
pub fn cache_path(cache_dir: &Path, dataset: &str, record_id: &str, kind: InputKind) -> PathBuf {
    cache_dir.join(dataset).join(format!("{record_id}.{}", kind.extension()))
}

/// Loads and preprocesses every record of a manifest, reading and writing
/// the epoch cache when `cache_dir` is given. Records are processed in
/// parallel; order follows the manifest.
pub fn prepare_dataset(manifest: &DatasetManifest, kind: InputKind, cache_dir: Option<&Path>) -> Result<Dataset> {
    let spec = FilterSpec::default();
    let records = manifest
        .records
        .par_iter()
        .map(|entry| {
            let (record, labels) = load_entry(manifest, entry)?;
            let cached = cache_dir.map(|d| cache_path(d, &manifest.name, &entry.record_id, kind));
            let dsp_err = |source| ProtocolError::Dsp {
                record_id: entry.record_id.clone(),
                source,
            };
            let epochs = match cached.as_ref().filter(|p| p.is_file()) {
                Some(p) => EpochTensor::load(p).map_err(dsp_err)?,
                None => {
                    let (mut epochs, _) = match kind {
                        InputKind::Ppg => preprocess_ppg(&record, &labels, &spec),
                        InputKind::PulseRate => preprocess_ipr(&record, &labels),
                    }
                    .map_err(dsp_err)?;
                    // match the cache precision so cached and fresh runs agree
                    epochs.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
                    if let Some(p) = &cached {
                        if let Some(parent) = p.parent() {
                            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                        }
                        epochs.save(p).map_err(dsp_err)?;
                    }
                    epochs
                }
            };
            let mut hypnogram = labels.harmonize();
            hypnogram.mask_spans(&record.gaps);
            let n = epochs.n_epochs();
            if hypnogram.len() < n {
                return Err(ProtocolError::Data(format!(
                    "{}: cache holds {n} epochs but labels only {}",
                    entry.record_id,
                    hypnogram.len()
                )));
            }
            hypnogram.stages.truncate(n);
            hypnogram.valid.truncate(n);
            for (v, e) in hypnogram.valid.iter_mut().zip(&epochs.valid) {
                *v &= *e;
            }
            Ok(PreparedRecord {
                record_id: entry.record_id.clone(),
                epochs,
                hypnogram,
                meta: entry.meta.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: manifest.name.clone(),
        records,
    })
}

fn default_crop() -> usize {
    16
}

fn default_steps() -> usize {
    20
}

fn default_val_fraction() -> f64 {
    0.1
}

/// Which datasets to train on and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Preset name; see [`ModelConfig::preset`].
    pub model: String,
    /// Overrides the preset when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<ModelConfig>,
    /// Consecutive epochs per training sequence.
    #[serde(default = "default_crop")]
    pub crop_epochs: usize,
    /// Optimizer steps per training epoch.
    #[serde(default = "default_steps")]
    pub steps_per_epoch: usize,
    /// Fraction of pooled source records held out for model selection.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

impl TrainPlan {
    pub fn model_config(&self) -> Result<ModelConfig> {
        match &self.model_config {
            Some(c) => Ok(c.clone()),
            None => ModelConfig::preset(&self.model)
                .ok_or_else(|| ProtocolError::Plan(format!("unknown model {:?}", self.model))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProtocolError::Plan(m));
        if self.sources.is_empty() {
            return bad("no source datasets".into());
        }
        let distinct: BTreeSet<&String> = self.sources.iter().collect();
        if distinct.len() != self.sources.len() {
            return bad("duplicate source dataset".into());
        }
        if let Some(t) = &self.target {
            if distinct.contains(t) {
                return bad(format!("target {t:?} is also a source"));
            }
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.crop_epochs == 0 || self.batch_size == 0 {
            return bad("epochs, steps, crop length and batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must be in [0, 1)".into());
        }
        if matches!(self.model_config()?, ModelConfig::SleepPpgNet2(_)) && self.batch_size < 2 {
            return bad("the DSU insert needs batches of at least 2".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_kappa: Option<f64>,
    pub wall_ms: u64,
}

/// Which records a fold touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub fold: String,
    pub sources: Vec<String>,
    pub target: Option<String>,
    /// `dataset/record_id` of every record that fed a gradient step.
    pub train_records: Vec<String>,
    pub val_records: Vec<String>,
}

impl Audit {
    /// Record ids of `target` that leaked into training or validation.
    pub fn leaks(&self, target: &Dataset) -> Vec<String> {
        let used: BTreeSet<&String> = self.train_records.iter().chain(&self.val_records).collect();
        target
            .records
            .iter()
            .map(|r| format!("{}/{}", target.name, r.record_id))
            .filter(|id| used.contains(id))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    plan: TrainPlan,
    fold: String,
    epoch: usize,
    rng: ChaCha8Rng,
    best_val: Option<f64>,
    best_epoch: usize,
    log: Vec<EpochLog>,
}

const STATE_FILE: &str = "state.json";
const LAST_FILE: &str = "last.spw";
const BEST_FILE: &str = "best.spw";

/// Resumable training loop over a pooled set of source records.
pub struct Trainer<'a> {
    plan: TrainPlan,
    fold: String,
    model: SleepStager,
    adam: Adam,
    rng: ChaCha8Rng,
    train: Vec<(&'a str, &'a PreparedRecord)>,
    val: Vec<(&'a str, &'a PreparedRecord)>,
    crop: usize,
    epoch: usize,
    best_val: Option<f64>,
    best_epoch: usize,
    best: Option<Checkpoint>,
    log: Vec<EpochLog>,
}

/// What a finished training produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch (the last epoch without validation).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_kappa: Option<f64>,
    pub log: Vec<EpochLog>,
    pub audit: Audit,
}

fn find<'a>(datasets: &'a [Dataset], name: &str) -> Result<&'a Dataset> {
    datasets
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| ProtocolError::Plan(format!("dataset {name:?} not loaded")))
}

impl<'a> Trainer<'a> {
    pub fn new(plan: &TrainPlan, fold: &str, datasets: &'a [Dataset]) -> Result<Trainer<'a>> {
        plan.validate()?;
        let config = plan.model_config()?;
        let mut pool = Vec::new();
        for name in &plan.sources {
            let ds = find(datasets, name)?;
            for r in &ds.records {
                if r.epochs.samples_per_epoch != config.samples_per_epoch() {
                    return Err(ProtocolError::Data(format!(
                        "{}: {} samples per epoch, model expects {}",
                        r.record_id,
                        r.epochs.samples_per_epoch,
                        config.samples_per_epoch()
                    )));
                }
                if r.hypnogram.n_valid() > 0 {
                    pool.push((ds.name.as_str(), r));
                }
            }
        }
        if pool.is_empty() {
            return Err(ProtocolError::Data("no source record has a valid epoch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        // Fisher-Yates; deterministic in the seed
        for i in (1..pool.len()).rev() {
            pool.swap(i, rng.random_range(0..=i));
        }
        let n_val = if plan.val_fraction > 0.0 && pool.len() >= 2 {
            ((pool.len() as f64 * plan.val_fraction).ceil() as usize).clamp(1, pool.len() - 1)
        } else {
            0
        };
        let val = pool[..n_val].to_vec();
        let train = pool[n_val..].to_vec();
        let crop = train
            .iter()
            .map(|(_, r)| r.epochs.n_epochs())
            .min()
            .unwrap()
            .min(plan.crop_epochs);
        if crop == 0 {
            return Err(ProtocolError::Data("empty training record".into()));
        }
        let mut model = SleepStager::build(&config, plan.seed)?;
        model.set_mode(Mode::Train);
        Ok(Trainer {
            plan: plan.clone(),
            fold: fold.to_string(),
            model,
            adam: Adam::new(plan.lr),
            rng,
            train,
            val,
            crop,
            epoch: 0,
            best_val: None,
            best_epoch: 0,
            best: None,
            log: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.plan.epochs
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn model(&mut self) -> &mut SleepStager {
        &mut self.model
    }

    fn draw_batch(&mut self) -> Result<(Tensor, Vec<usize>, Vec<bool>)> {
        let (b, t) = (self.plan.batch_size, self.crop);
        let s = self.model.samples_per_epoch();
        for _ in 0..100 {
            let mut data = Vec::with_capacity(b * t * s);
            let mut labels = Vec::with_capacity(b * t);
            let mut mask = Vec::with_capacity(b * t);
            for _ in 0..b {
                let (_, rec) = self.train[self.rng.random_range(0..self.train.len())];
                let start = self.rng.random_range(0..=rec.epochs.n_epochs() - t);
                data.extend_from_slice(&rec.epochs.data[start * s..(start + t) * s]);
                labels.extend(rec.hypnogram.stages[start..start + t].iter().map(|st| st.index()));
                mask.extend_from_slice(&rec.hypnogram.valid[start..start + t]);
            }
            if mask.iter().any(|m| *m) {
                return Ok((Tensor::from_vec([b, 1, t * s], data)?, labels, mask));
            }
        }
        Err(ProtocolError::Data("could not draw a batch with a valid epoch".into()))
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let (x, labels, mask) = self.draw_batch()?;
        self.model.zero_grad();
        let logits = self.model.forward(&x, &mut self.rng)?;
        let (loss, grad) = masked_cross_entropy(&logits, &labels, &mask)?;
        self.model.backward(&grad)?;
        self.adam.begin_step();
        let mut slot = 0;
        let adam = &mut self.adam;
        self.model.visit_params(&mut |p| {
            adam.update(slot, p);
            slot += 1;
        });
        self.model.clear_tape();
        Ok(loss)
    }

    /// Median per-record kappa on the validation records.
    pub fn validate(&mut self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        self.model.set_mode(Mode::Eval);
        let mut kappas = Vec::new();
        for (_, rec) in &self.val {
            let pred = predict_stages(&mut self.model, &rec.epochs)?;
            let cm = ConfusionMatrix::from_hypnograms(&rec.hypnogram, &pred.hypnogram, Task::Four)?;
            if cm.total() > 0 {
                kappas.push(cm.kappa()?);
            }
        }
        self.model.set_mode(Mode::Train);
        Ok(quantile(&kappas, 0.5))
    }

    /// Runs one training epoch and the validation pass after it.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let start = Instant::now();
        let mut total = 0.0;
        for _ in 0..self.plan.steps_per_epoch {
            total += self.step()?;
        }
        let val_kappa = self.validate()?;
        self.epoch += 1;
        let improved = match (val_kappa, self.best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => self.val.is_empty(),
        };
        if improved || self.best.is_none() {
            self.best_val = val_kappa;
            self.best_epoch = self.epoch;
            self.best = Some(self.model.to_checkpoint(None));
        }
        self.log.push(EpochLog {
            fold: self.fold.clone(),
            epoch: self.epoch,
            loss: total / self.plan.steps_per_epoch as f64,
            val_kappa,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        Ok(self.log.last().unwrap())
    }

    pub fn audit(&self) -> Audit {
        let ids = |v: &[(&str, &PreparedRecord)]| {
            let mut ids: Vec<String> = v.iter().map(|(d, r)| format!("{d}/{}", r.record_id)).collect();
            ids.sort();
            ids
        };
        Audit {
            fold: self.fold.clone(),
            sources: self.plan.sources.clone(),
            target: self.plan.target.clone(),
            train_records: ids(&self.train),
            val_records: ids(&self.val),
        }
    }

    /// Writes everything needed to continue: weights with optimizer state,
    /// the best weights so far and the generator state.
    pub fn save_state(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_checkpoint(dir.join(LAST_FILE), &self.model.to_checkpoint(Some(&self.adam)))?;
        if let Some(best) = &self.best {
            write_checkpoint(dir.join(BEST_FILE), best)?;
        }
        let state = TrainerState {
            plan: self.plan.clone(),
            fold: self.fold.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            best_val: self.best_val,
            best_epoch: self.best_epoch,
            log: self.log.clone(),
        };
        let path = dir.join(STATE_FILE);
        let json = serde_json::to_string_pretty(&state).expect("state serializes");
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))
    }

    /// Continues a run saved by [`Trainer::save_state`]. The plan must match
    /// apart from the epoch count, which may be raised to extend a run.
    pub fn resume(plan: &TrainPlan, dir: &Path, datasets: &'a [Dataset]) -> Result<Trainer<'a>> {
        let path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        let same = TrainPlan {
            epochs: plan.epochs,
            ..state.plan.clone()
        };
        if &same != plan || plan.epochs < state.epoch {
            return Err(ProtocolError::Plan("saved state belongs to a different plan".into()));
        }
        let mut t = Trainer::new(plan, &state.fold, datasets)?;
        let last = read_checkpoint(dir.join(LAST_FILE))?;
        t.model.load_params(&last)?;
        t.adam = last
            .adam
            .ok_or_else(|| ProtocolError::Data("saved weights carry no optimizer state".into()))?;
        let best = dir.join(BEST_FILE);
        t.best = if best.is_file() { Some(read_checkpoint(best)?) } else { None };
        t.rng = state.rng;
        t.epoch = state.epoch;
        t.best_val = state.best_val;
        t.best_epoch = state.best_epoch;
        t.log = state.log;
        Ok(t)
    }

    pub fn into_outcome(mut self) -> TrainOutcome {
        let audit = self.audit();
        let best = self.best.take().unwrap_or_else(|| self.model.to_checkpoint(None));
        TrainOutcome {
            best,
            best_epoch: self.best_epoch,
            best_val_kappa: self.best_val,
            log: self.log,
            audit,
        }
    }
}

/// Trains `plan` to completion. `on_epoch` sees every log line as it is
/// produced.
pub fn train(
    plan: &TrainPlan,
    fold: &str,
    datasets: &[Dataset],
    on_epoch: &(dyn Fn(&EpochLog) + Sync),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(plan, fold, datasets)?;
    while !trainer.finished() {
        on_epoch(trainer.run_epoch()?);
    }
    Ok(trainer.into_outcome())
}

/// Predicts every record of `dataset` with the weights of `ckpt`.
pub fn predict_dataset(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Vec<PatientResult>> {
    let mut model = SleepStager::from_checkpoint(ckpt)?;
    model.set_mode(Mode::Eval);
    dataset
        .records
        .iter()
        .map(|r| {
            let pred = predict_stages(&mut model, &r.epochs)?;
            Ok(PatientResult {
                record_id: r.record_id.clone(),
                reference: r.hypnogram.clone(),
                prediction: pred.hypnogram,
            })
        })
        .collect()
}

/// Results of one leave-one-out fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub target: String,
    pub sources: Vec<String>,
    pub best_epoch: usize,
    pub best_val_kappa: Option<f64>,
    /// Four-, three- and two-class reports on the target.
    pub reports: Vec<MetricsReport>,
    pub audit: Audit,
}

impl FoldReport {
    pub fn report(&self, task: Task) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.task == task)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub target: String,
    pub result: std::result::Result<FoldReport, String>,
    #[serde(skip)]
    pub best: Option<Checkpoint>,
    #[serde(skip)]
    pub log: Vec<EpochLog>,
}

/// Evaluates trained weights on a held-out dataset for every task.
pub fn evaluate_target(ckpt: &Checkpoint, target: &Dataset) -> Result<Vec<MetricsReport>> {
    let patients = predict_dataset(ckpt, target)?;
    [Task::Four, Task::Three, Task::Two]
        .into_iter()
        .map(|task| Ok(evaluate_dataset(&patients, task)?))
        .collect()
}

fn run_fold(base: &TrainPlan, datasets: &[Dataset], target: &str) -> Result<(FoldReport, Checkpoint, Vec<EpochLog>)> {
    let plan = TrainPlan {
        sources: datasets.iter().map(|d| d.name.clone()).filter(|n| n != target).collect(),
        target: Some(target.to_string()),
        ..base.clone()
    };
    let tgt = find(datasets, target)?;
    let outcome = train(&plan, target, datasets, &|_| {})?;
    let leaks = outcome.audit.leaks(tgt);
    if !leaks.is_empty() {
        return Err(ProtocolError::Data(format!("target records used in training: {leaks:?}")));
    }
    let reports = evaluate_target(&outcome.best, tgt)?;
    Ok((
        FoldReport {
            target: target.to_string(),
            sources: plan.sources.clone(),
            best_epoch: outcome.best_epoch,
            best_val_kappa: outcome.best_val_kappa,
            reports,
            audit: outcome.audit,
        },
        outcome.best,
        outcome.log,
    ))
}

/// Trains on all other datasets and evaluates on each one in turn. Folds
/// run in parallel; a failed fold is reported and the others continue.
pub fn leave_one_out(datasets: &[Dataset], base: &TrainPlan) -> Result<Vec<FoldOutcome>> {
    if datasets.len() < 2 {
        return Err(ProtocolError::Plan("leave-one-out needs at least two datasets".into()));
    }
    let names: BTreeSet<&String> = datasets.iter().map(|d| &d.name).collect();
    if names.len() != datasets.len() {
        return Err(ProtocolError::Plan("dataset names must be unique".into()));
    }
    Ok(datasets
        .par_iter()
        .map(|d| match run_fold(base, datasets, &d.name) {
            Ok((report, best, log)) => FoldOutcome {
                target: d.name.clone(),
                result: Ok(report),
                best: Some(best),
                log,
            },
            Err(e) => FoldOutcome {
                target: d.name.clone(),
                result: Err(e.to_string()),
                best: None,
                log: Vec::new(),
            },
        })
        .collect())
}

/// Results table: one row per model, columns per dataset with median
/// per-patient kappa, pooled kappa and accuracy.
pub fn summary_table(rows: &[(String, Vec<(String, MetricsReport)>)]) -> String {
    let mut datasets: Vec<&String> = Vec::new();
    for (_, cols) in rows {
        for (d, _) in cols {
            if !datasets.contains(&d) {
                datasets.push(d);
            }
        }
    }
    let mut out = String::from("model");
    for d in &datasets {
        out.push_str(&format!(",{d} kappa_p,{d} kappa_c,{d} acc"));
    }
    out.push('\n');
    for (model, cols) in rows {
        out.push_str(model);
        for d in &datasets {
            match cols.iter().find(|(n, _)| n == *d) {
                Some((_, r)) => {
                    out.push_str(&format!(",{:.4},{:.4},{:.4}", r.kappa_median, r.kappa_overall, r.accuracy))
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}
