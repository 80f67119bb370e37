//! Run configuration as a flat `key = value` text file.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown or repeated keys are rejected. [`RunConfig::render`]
//! writes every key, so a rendered file reproduces the run exactly.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `model` | `dscnn` | `dscnn` or `unet` |
//! | `in_channels` | 1 | image channels |
//! | `base_channels` | 16 | first-stage width (64 in the `paper` preset) |
//! | `alpha` | `1` | head weights; one value is broadcast to every head |
//! | `main_weight` | 1 | weight of the main-output loss |
//! | `lr` | 0.001 | initial learning rate |
//! | `momentum` | 0.9 | |
//! | `weight_decay` | 0.0005 | L2 coefficient |
//! | `schedule` | `step` | `step` or `constant` |
//! | `lr_gamma` | 0.5 | step-decay factor |
//! | `lr_every` | 2000 | step-decay period in steps |
//! | `steps` | 2000 | optimizer steps |
//! | `batch_size` | 1 | samples per step |
//! | `augment` | `true` | random affine augmentation |
//! | `aug_translate` | 0.1 | max shift, fraction of width |
//! | `aug_rotate` | 15 | max rotation, degrees |
//! | `aug_zoom_min`, `aug_zoom_max` | 0.9, 1.1 | zoom interval |
//! | `seed` | 0 | |
//! | `data` | (empty) | dataset root |
//! | `split` | (empty) | split file; empty trains on every sample |
//! | `checkpoint_every` | 0 | steps between checkpoints, 0 = only at the end |

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::AugmentSpec;
use crate::error::{Error, Result};
use crate::loss::SupervisionWeights;
use crate::model::{HeadPlacement, ModelKind};
use crate::optim::{LrSchedule, SgdConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub in_channels: usize,
    pub base_channels: usize,
    pub alpha: Vec<f64>,
    pub main_weight: f64,
    pub sgd: SgdConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub augment: bool,
    pub aug: AugmentSpec,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Dscnn,
            in_channels: 1,
            base_channels: 16,
            alpha: vec![1.0],
            main_weight: 1.0,
            sgd: SgdConfig::default(),
            steps: 2000,
            batch_size: 1,
            augment: true,
            aug: AugmentSpec::default(),
            seed: 0,
            data: None,
            split: None,
            checkpoint_every: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Named presets. `paper`: lr 0.001, momentum 0.9, batch 1, 64 base
    /// channels, augmentation on; the remaining values are the defaults.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "paper" => Ok(RunConfig {
                base_channels: 64,
                batch_size: 1,
                augment: true,
                sgd: SgdConfig {
                    lr: 1e-3,
                    momentum: 0.9,
                    ..SgdConfig::default()
                },
                ..Self::default()
            }),
            other => Err(Error::Config(format!("unknown preset {other:?} (default|paper)"))),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "model" => self.model = value.parse()?,
            "in_channels" => self.in_channels = parse_num(key, value)?,
            "base_channels" => self.base_channels = parse_num(key, value)?,
            "alpha" => {
                self.alpha = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "main_weight" => self.main_weight = parse_num(key, value)?,
            "lr" => self.sgd.lr = parse_num(key, value)?,
            "momentum" => self.sgd.momentum = parse_num(key, value)?,
            "weight_decay" => self.sgd.weight_decay = parse_num(key, value)?,
            "schedule" => {
                self.sgd.schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "step" => match self.sgd.schedule {
                        s @ LrSchedule::StepDecay { .. } => s,
                        LrSchedule::Constant => LrSchedule::default(),
                    },
                    other => return Err(Error::Config(format!("schedule: unknown value {other:?}"))),
                }
            }
            "lr_gamma" | "lr_every" => {
                let (mut gamma, mut every) = match self.sgd.schedule {
                    LrSchedule::StepDecay { gamma, every } => (gamma, every),
                    LrSchedule::Constant => match LrSchedule::default() {
                        LrSchedule::StepDecay { gamma, every } => (gamma, every),
                        LrSchedule::Constant => unreachable!(),
                    },
                };
                if key == "lr_gamma" {
                    gamma = parse_num(key, value)?;
                } else {
                    every = parse_num(key, value)?;
                }
                // Only stored while the step schedule is active.
                if matches!(self.sgd.schedule, LrSchedule::StepDecay { .. }) {
                    self.sgd.schedule = LrSchedule::StepDecay { gamma, every };
                }
            }
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "augment" => {
                self.augment = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    other => return Err(Error::Config(format!("augment: expected true/false, got {other:?}"))),
                }
            }
            "aug_translate" => self.aug.translate = parse_num(key, value)?,
            "aug_rotate" => self.aug.rotate_deg = parse_num(key, value)?,
            "aug_zoom_min" => self.aug.zoom_min = parse_num(key, value)?,
            "aug_zoom_max" => self.aug.zoom_max = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "data" => self.data = opt_path(value),
            "split" => self.split = opt_path(value),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key {key:?} repeated", no + 1)));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        let (schedule, gamma, every) = match self.sgd.schedule {
            LrSchedule::Constant => ("constant", 0.5, 2000),
            LrSchedule::StepDecay { gamma, every } => ("step", gamma, every),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let alpha: Vec<String> = self.alpha.iter().map(|a| a.to_string()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("model", self.model.to_string());
        kv("in_channels", self.in_channels.to_string());
        kv("base_channels", self.base_channels.to_string());
        kv("alpha", alpha.join(","));
        kv("main_weight", self.main_weight.to_string());
        kv("lr", self.sgd.lr.to_string());
        kv("momentum", self.sgd.momentum.to_string());
        kv("weight_decay", self.sgd.weight_decay.to_string());
        kv("schedule", schedule.to_string());
        if schedule == "step" {
            kv("lr_gamma", gamma.to_string());
            kv("lr_every", every.to_string());
        }
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("augment", self.augment.to_string());
        kv("aug_translate", self.aug.translate.to_string());
        kv("aug_rotate", self.aug.rotate_deg.to_string());
        kv("aug_zoom_min", self.aug.zoom_min.to_string());
        kv("aug_zoom_max", self.aug.zoom_max.to_string());
        kv("seed", self.seed.to_string());
        kv("data", path(&self.data));
        kv("split", path(&self.split));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        out
    }

    /// Head weights expanded to the model's head count.
    pub fn supervision(&self) -> Result<SupervisionWeights> {
        let heads = match self.model {
            ModelKind::Unet => 0,
            ModelKind::Dscnn => HeadPlacement::default().stages.len(),
        };
        let alpha = match (heads, self.alpha.len()) {
            (0, _) => Vec::new(),
            (_, 1) => vec![self.alpha[0]; heads],
            (h, n) if h == n => self.alpha.clone(),
            (h, n) => return Err(Error::Config(format!("alpha has {n} values, model has {h} heads"))),
        };
        SupervisionWeights::new(alpha, self.main_weight).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.sgd.validate()?;
        self.aug.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.supervision()?;
        Ok(())
    }
}
