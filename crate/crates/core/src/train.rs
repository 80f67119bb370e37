//! The training loop.
//!
//! Sample order and augmentation are pure functions of `(seed, position)`:
//! position `p` in the sample stream belongs to epoch `p / n`, whose order is
//! a permutation seeded by the epoch number, and its augmentation draw uses
//! its own RNG stream. A run resumed from a checkpoint therefore sees the
//! same samples and transforms as an uninterrupted one.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape};
use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::data::{augment, load_dataset, Dataset, SamplePair, Split};
use crate::error::{Error, Result};
use crate::loss::{report, total_objective, LossReport, SupervisionWeights};
use crate::model::Model;
use crate::optim::SgdState;
use crate::parallel;

pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.dsnc";

const ORDER_STREAM: u64 = 1 << 40;
const AUGMENT_STREAM: u64 = 2 << 40;

/// Losses of one optimizer step, averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Number of completed steps after this one.
    pub step: u64,
    pub lr: f64,
    pub losses: LossReport,
}

pub fn csv_header(heads: usize) -> String {
    let mut h = String::from("step,lr,total,main");
    for i in 1..=heads {
        h.push_str(&format!(",head{i}"));
    }
    h
}

pub fn csv_line(r: &StepRecord) -> String {
    let mut line = format!("{},{},{},{}", r.step, r.lr, r.losses.total, r.losses.main);
    for l in &r.losses.head_losses {
        line.push_str(&format!(",{l}"));
    }
    line
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub optimizer: SgdState,
    weights: SupervisionWeights,
    data: Dataset,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(config: RunConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model, config.in_channels, config.base_channels, config.seed)?;
        Self::with_model(config, data, model)
    }

    pub fn with_model(config: RunConfig, data: Dataset, model: Model) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        for s in &data.samples {
            model.net.check_input(s.image.shape())?;
        }
        let weights = config.supervision()?;
        let optimizer = SgdState::new(config.sgd, &model.params)?;
        Ok(Trainer {
            config,
            model,
            optimizer,
            weights,
            data,
            order: None,
        })
    }

    /// Continues from a checkpoint written by an earlier run of `config`.
    pub fn resume(config: RunConfig, data: Dataset, ckpt: Checkpoint) -> Result<Self> {
        let net = &ckpt.model.net;
        if (net.kind, net.in_ch, net.base_ch) != (config.model, config.in_channels, config.base_channels) {
            return Err(Error::Format(format!(
                "checkpoint holds {} (in {}, base {}), config asks for {} (in {}, base {})",
                net.kind, net.in_ch, net.base_ch, config.model, config.in_channels, config.base_channels
            )));
        }
        let mut t = Self::with_model(config, data, ckpt.model)?;
        if let Some(opt) = ckpt.optimizer {
            opt.restore_into(&mut t.optimizer)?;
        }
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    pub fn head_count(&self) -> usize {
        self.weights.heads()
    }

    fn sample_at(&mut self, position: u64) -> Result<SamplePair> {
        let n = self.data.len() as u64;
        let epoch = position / n;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(ORDER_STREAM + epoch);
            let mut perm: Vec<usize> = (0..self.data.len()).collect();
            perm.shuffle(&mut rng);
            self.order = Some((epoch, perm));
        }
        let idx = self.order.as_ref().expect("just set").1[(position % n) as usize];
        let sample = &self.data.samples[idx];
        if !self.config.augment {
            return Ok(sample.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(AUGMENT_STREAM + position);
        augment(sample, &self.config.aug, &mut rng)
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.optimizer.step;
        let b = self.config.batch_size;
        let batch = (0..b as u64)
            .map(|i| self.sample_at(t * b as u64 + i))
            .collect::<Result<Vec<_>>>()?;
        let (model, weights) = (&self.model, &self.weights);
        let results = parallel::map_slice(&batch, |s| sample_gradients(model, s, weights, b));
        let mut reports = Vec::with_capacity(b);
        self.model.params.zero_grad();
        for r in results {
            let (grads, rep) = r?;
            self.model.params.accumulate(&grads)?;
            reports.push(rep);
        }
        let losses = mean_report(reports, weights)?;
        if !losses.total.is_finite() {
            return Err(Error::numeric(
                format!("training step {}", t + 1),
                format!("loss is {}", losses.total),
            ));
        }
        let lr = self.optimizer.lr();
        self.optimizer.step(&mut self.model.params)?;
        self.model.params.zero_grad();
        Ok(StepRecord {
            step: self.optimizer.step,
            lr,
            losses,
        })
    }

    /// Steps until `total` steps are complete, calling `after` each time.
    pub fn run_until(&mut self, total: u64, mut after: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        while self.optimizer.step < total {
            let rec = self.step()?;
            after(self, &rec)?;
        }
        Ok(())
    }
}

fn sample_gradients(model: &Model, s: &SamplePair, weights: &SupervisionWeights, batch: usize) -> Result<(Gradients, LossReport)> {
    let mut tape = Tape::with_params(&model.params);
    let x = tape.leaf(s.image.clone(), false);
    let y = tape.leaf(s.mask.clone(), false);
    let out = model.net.forward(&mut tape, x)?;
    let vars = total_objective(&mut tape, out.main, &out.heads, y, weights)?;
    let rep = report(&tape, &vars, weights)?;
    let loss = if batch > 1 {
        tape.scale(vars.total, 1.0 / batch as f64)
    } else {
        vars.total
    };
    Ok((tape.backward(loss)?, rep))
}

fn mean_report(reports: Vec<LossReport>, weights: &SupervisionWeights) -> Result<LossReport> {
    if reports.len() == 1 {
        return Ok(reports.into_iter().next().expect("one report"));
    }
    let n = reports.len() as f64;
    let m = weights.heads();
    let heads = (0..m).map(|i| reports.iter().map(|r| r.head_losses[i]).sum::<f64>() / n).collect();
    let main = reports.iter().map(|r| r.main).sum::<f64>() / n;
    LossReport::compose(heads, main, weights)
}

/// Training set selected by `config`: the train part of the split file if
/// one is given, else every sample under `config.data`.
pub fn load_training_set(config: &RunConfig) -> Result<Dataset> {
    let root = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset root (key `data`)".into()))?;
    let all = load_dataset(root)?;
    match &config.split {
        Some(p) => Ok(all.apply_split(&Split::read(p)?).0),
        None => Ok(all),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub last: Option<StepRecord>,
    pub checkpoint: PathBuf,
}

/// Trains into `run_dir`: echoes the config, appends CSV log lines and
/// writes the checkpoint every `checkpoint_every` steps and at the end.
/// With `resume`, continues from the checkpoint already in `run_dir`.
pub fn run_training(config: &RunConfig, run_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(run_dir)?;
    let data = load_training_set(config)?;
    let ckpt_path = run_dir.join(CHECKPOINT_FILE);
    let log_path = run_dir.join(LOG_FILE);
    let mut trainer = if resume {
        Trainer::resume(config.clone(), data, checkpoint::load(&ckpt_path)?)?
    } else {
        Trainer::new(config.clone(), data)?
    };
    fs::write(run_dir.join(CONFIG_FILE), config.render())?;

    let header = csv_header(trainer.head_count());
    let mut log = if resume && log_path.exists() {
        // Drop lines logged after the checkpoint was taken.
        let done = trainer.step_count();
        let kept: Vec<String> = fs::read_to_string(&log_path)?
            .lines()
            .enumerate()
            .filter(|(i, l)| *i == 0 || l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= done))
            .map(|(_, l)| l.to_string())
            .collect();
        fs::write(&log_path, kept.join("\n") + "\n")?;
        OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "{header}")?;
        f
    };

    let every = config.checkpoint_every;
    let mut last = None;
    trainer.run_until(config.steps, |t, rec| {
        writeln!(log, "{}", csv_line(rec))?;
        if every > 0 && rec.step % every == 0 {
            checkpoint::save(&ckpt_path, &t.model, Some(&t.optimizer))?;
        }
        last = Some(rec.clone());
        Ok(())
    })?;
    log.flush()?;
    checkpoint::save(&ckpt_path, &trainer.model, Some(&trainer.optimizer))?;
    Ok(TrainOutcome {
        steps: trainer.step_count(),
        last,
        checkpoint: ckpt_path,
    })
}
