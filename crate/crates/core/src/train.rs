//! Training loop with per-epoch logging, best/final checkpoints and resume.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::icasc::{icasc_objective, IcascConfig};
use crate::metrics::{predict, topk_accuracy};
use crate::nn::{build_model, forward, lr_schedule, save_checkpoint, Checkpoint, ModelConfig, Params, Schedule, Sgd, SgdConfig, TrainState};

pub const LOG_FILE: &str = "log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

const LOG_COLUMNS: [&str; 10] = [
    "epoch", "lr", "l_c", "l_as_in", "l_as_la", "l_ac", "total", "train_acc", "test_acc", "skip_rate",
];

/// Keeps the shuffle stream apart from the initialisation stream of the same seed.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Input size, channels and class count are taken from the dataset.
    pub model: ModelConfig,
    pub icasc: IcascConfig,
    pub sgd: SgdConfig,
    pub lr: f64,
    pub schedule: Schedule,
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train with the classification loss only.
    pub baseline: bool,
    /// Epochs trained with the classification loss only before the attention
    /// terms switch on.
    pub attention_warmup: usize,
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            icasc: IcascConfig::default(),
            sgd: SgdConfig::default(),
            lr: 0.05,
            schedule: Schedule::Cosine,
            milestones: vec![],
            epochs: 10,
            batch_size: 32,
            seed: 0,
            baseline: false,
            attention_warmup: 0,
            flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.icasc.validate()?;
        self.model.validate()
    }

    /// Copies the dataset geometry into the model config.
    pub fn fit_to(&mut self, dataset: &Dataset) {
        self.model.input_size = (dataset.height, dataset.width);
        self.model.input_channels = dataset.channels;
        self.model.classes = dataset.classes;
        self.model.multi_label = dataset.multi_label;
    }

    fn check_dataset(&self, dataset: &Dataset, role: &str) -> Result<()> {
        let m = &self.model;
        let geometry = (dataset.channels, dataset.height, dataset.width, dataset.classes);
        if geometry != (m.input_channels, m.input_size.0, m.input_size.1, m.classes) {
            return Err(Error::Data(format!(
                "{role} set is {}x{}x{} with {} classes, model expects {}x{}x{} with {}",
                dataset.channels, dataset.height, dataset.width, dataset.classes,
                m.input_channels, m.input_size.0, m.input_size.1, m.classes
            )));
        }
        if dataset.multi_label != m.multi_label {
            return Err(Error::Data(format!("{role} set label mode does not match the model")));
        }
        if dataset.is_empty() {
            return Err(Error::Data(format!("{role} set is empty")));
        }
        Ok(())
    }
}

/// One row of the training log. Loss columns are sample-weighted epoch means.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub classification: f64,
    pub separation_inner: f64,
    pub separation_last: f64,
    pub consistency: f64,
    pub total: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub skip_rate: f64,
}

impl EpochRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.lr.to_string(),
            self.classification.to_string(),
            self.separation_inner.to_string(),
            self.separation_last.to_string(),
            self.consistency.to_string(),
            self.total.to_string(),
            self.train_accuracy.to_string(),
            self.test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            self.skip_rate.to_string(),
        ]
    }

    /// Accuracy used to pick the best checkpoint.
    fn selection_accuracy(&self) -> f64 {
        self.test_accuracy.unwrap_or(self.train_accuracy)
    }
}

/// Parameters plus optimiser state between epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    params: Params,
    sgd: Sgd,
    epochs_done: usize,
    best_accuracy: f64,
}

impl Trainer {
    /// Fresh weights from `config.seed`; baseline and attention runs with the
    /// same seed start from identical parameters.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = build_model(&config.model, config.seed)?;
        let sgd = Sgd::new(config.sgd, &params);
        Ok(Self {
            config,
            params,
            sgd,
            epochs_done: 0,
            best_accuracy: f64::NEG_INFINITY,
        })
    }

    pub fn resume(config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        if checkpoint.params.config != config.model {
            return Err(Error::Config("checkpoint model does not match the configured model".into()));
        }
        let state = checkpoint
            .state
            .ok_or_else(|| Error::Config("checkpoint has no training state to resume from".into()))?;
        if state.epochs_done >= config.epochs {
            return Err(Error::Config(format!(
                "checkpoint already completed {} of {} epochs",
                state.epochs_done, config.epochs
            )));
        }
        Ok(Self {
            sgd: Sgd::with_velocity(config.sgd, state.velocity),
            config,
            params: checkpoint.params,
            epochs_done: state.epochs_done,
            best_accuracy: state.best_accuracy,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            state: Some(TrainState {
                epochs_done: self.epochs_done,
                best_accuracy: self.best_accuracy,
                velocity: self.sgd.velocity().to_vec(),
            }),
        }
    }

    /// Runs the next epoch. Returns its log row and whether it improved on the
    /// best accuracy so far.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<(EpochRow, bool)> {
        let cfg = &self.config;
        if self.is_finished() {
            return Err(Error::Config(format!("all {} epochs already ran", cfg.epochs)));
        }
        cfg.check_dataset(train, "train")?;
        if let Some(t) = test {
            cfg.check_dataset(t, "test")?;
        }
        let epoch = self.epochs_done;
        let lr = lr_schedule(cfg.schedule, epoch, cfg.epochs, cfg.lr, &cfg.milestones)?;
        let batches = batch_iter(train, cfg.batch_size, Some(cfg.seed ^ SHUFFLE_SALT), epoch as u64, cfg.flip)?;
        let attention = !cfg.baseline && epoch >= cfg.attention_warmup;
        let mut sums = [0.0; 5];
        let (mut correct, mut skipped) = (0.0, 0usize);
        for batch in &batches {
            let tape = Tape::new();
            let rec = forward(&tape, &self.params, &batch.images)?;
            let obj = icasc_objective(&tape, &rec, &batch.labels, &cfg.icasc, attention, None)?;
            let wrt: Vec<&_> = rec.params.iter().collect();
            let grads = tape.backward(&obj.total, &wrt, false)?;
            let n = batch.labels.len() as f64;
            let b = &obj.breakdown;
            for (s, v) in sums.iter_mut().zip([b.classification, b.separation_inner, b.separation_last, b.consistency, b.total]) {
                *s += v * n;
            }
            skipped += b.skipped.iter().filter(|&&s| s).count();
            correct += topk_accuracy(&rec.probabilities, rec.classes, &batch.labels, 1)? * n;
            self.sgd.step(&mut self.params, &grads, lr)?;
        }
        let total = train.len() as f64;
        let test_accuracy = match test {
            Some(t) => {
                let pred = predict(&self.params, t, cfg.batch_size)?;
                Some(topk_accuracy(&pred.probabilities, pred.classes, &pred.labels, 1)?)
            }
            None => None,
        };
        let row = EpochRow {
            epoch,
            lr,
            classification: sums[0] / total,
            separation_inner: sums[1] / total,
            separation_last: sums[2] / total,
            consistency: sums[3] / total,
            total: sums[4] / total,
            train_accuracy: correct / total,
            test_accuracy,
            skip_rate: skipped as f64 / total,
        };
        self.epochs_done += 1;
        let improved = row.selection_accuracy() > self.best_accuracy;
        if improved {
            self.best_accuracy = row.selection_accuracy();
        }
        Ok((row, improved))
    }
}

/// Files written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub params: Params,
    pub log: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Trains to completion, writing the log after every epoch plus final and
/// best checkpoints into `out`. A resumed run logs only the epochs it runs.
pub fn train_to_dir(mut trainer: Trainer, train: &Dataset, test: Option<&Dataset>, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log = out.join(LOG_FILE);
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    let best_checkpoint = out.join(BEST_CHECKPOINT);
    let mut file = File::create(&log).map_err(|e| Error::io(&log, e))?;
    writeln!(
        file,
        "# seed={} mode={} start_epoch={}",
        trainer.config.seed,
        if trainer.config.baseline { "baseline".to_string() } else { trainer.config.icasc.mechanism.to_string() },
        trainer.epochs_done
    )
    .map_err(|e| Error::io(&log, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(LOG_COLUMNS).map_err(|e| csv_err(&log, e))?;
    let mut rows = Vec::new();
    while !trainer.is_finished() {
        let (row, improved) = trainer.run_epoch(train, test)?;
        writer.write_record(row.to_record()).map_err(|e| csv_err(&log, e))?;
        writer.flush().map_err(|e| Error::io(&log, e))?;
        let ck = trainer.checkpoint();
        save_checkpoint(&final_checkpoint, &ck)?;
        if improved {
            save_checkpoint(&best_checkpoint, &ck)?;
        }
        rows.push(row);
    }
    Ok(TrainOutcome {
        rows,
        params: trainer.params,
        log,
        final_checkpoint,
        best_checkpoint,
    })
}
