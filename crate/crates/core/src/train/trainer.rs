use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::audio::{Manifest, MixtureSample, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::pit_loss_node;
use crate::model::SeparationModel;
use crate::params::{substream, ParamStore};
use crate::train::checkpoint::Checkpoint;
use crate::train::config::RunConfig;
use crate::train::optim::{clip_grad_norm, Optimizer, OptimizerRegistry};

/// Diagnostics of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Batch mean of the negative uSDR.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Pyramid branch weights of every processed chunk (empty for other variants).
    pub branch_weights: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct Trainer {
    cfg: RunConfig,
    model: SeparationModel,
    params: ParamStore,
    optimizer: Box<dyn Optimizer>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = SeparationModel::new(cfg.frontend, &cfg.separator)?;
        let params = model.init_params(cfg.seed);
        let optimizer = OptimizerRegistry::builtin().build(&cfg.optimizer)?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            params,
            optimizer,
            rng: substream(cfg.seed, "data"),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(&ck.config)?;
        t.params = ck.params.clone();
        t.optimizer.load_state(ck.optimizer.clone())?;
        t.rng = ck.rng.clone();
        t.order = ck.data_order.clone();
        t.cursor = ck.data_cursor;
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.cfg.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.state(),
            rng: self.rng.clone(),
            data_order: self.order.clone(),
            data_cursor: self.cursor,
        }
    }

    pub fn model(&self) -> &SeparationModel {
        &self.model
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Next `batch_size` indices into a dataset of `n` items, reshuffling at
    /// every epoch boundary.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| {
                if self.cursor >= self.order.len() || self.order.len() != n {
                    self.order = (0..n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One update on `batch`: segment-wise forward, uSDR on the reassembled
    /// utterances, batch-averaged gradients, clipping, optimizer step.
    pub fn train_step(&mut self, batch: &[&MixtureSample]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let seg = Some(self.cfg.segment_samples());
        let scale = 1.0 / batch.len() as f64;
        let mut grads = std::collections::BTreeMap::new();
        let mut loss = 0.0;
        let mut branch_weights = Vec::new();
        for sample in batch {
            let mut g = Graph::new();
            let out = self.model.forward(&mut g, &self.params, sample.mixture.samples(), seg)?;
            let targets: Vec<&[f64]> = sample.sources.iter().map(|s| s.samples()).collect();
            let (l, _) = pit_loss_node(&mut g, &out.sources, &targets)?;
            let value = g.scalar(l);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step as usize + 1, detail: format!("loss {value}") });
            }
            loss += value * scale;
            branch_weights.extend(out.branch_weights.iter().map(|&w| g.row(w)));
            for (name, gr) in g.backward(l).params(&self.params) {
                grads
                    .entry(name)
                    .and_modify(|acc: &mut crate::graph::Tensor| acc.scaled_add(scale, &gr))
                    .or_insert_with(|| gr * scale);
            }
        }
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.optimizer.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step as usize + 1, detail: "non-finite gradient".into() });
        }
        self.optimizer.step(&mut self.params, &grads)?;
        self.step += 1;
        Ok(StepStats { step: self.step, loss, grad_norm, branch_weights })
    }

    /// Trains until `max_steps`, appending `step loss` lines to
    /// `out_dir/loss.log` and writing `ckpt_<step>.bin` every
    /// `checkpoint_interval` steps and at the end.
    pub fn run(&mut self, data: &[MixtureSample], out_dir: &Path) -> Result<TrainOutcome> {
        if data.is_empty() {
            return Err(Error::Precondition("training split is empty".into()));
        }
        fs::create_dir_all(out_dir)?;
        let mut log = OpenOptions::new().create(true).append(true).open(out_dir.join("loss.log"))?;
        let mut losses = Vec::new();
        let mut checkpoints = Vec::new();
        while self.step < self.cfg.max_steps as u64 {
            let idx = self.next_batch(data.len());
            let batch: Vec<&MixtureSample> = idx.iter().map(|&i| &data[i]).collect();
            let stats = self.train_step(&batch)?;
            writeln!(log, "{} {}", stats.step, stats.loss)?;
            log::debug!("step {} loss {:.3} grad {:.3}", stats.step, stats.loss, stats.grad_norm);
            losses.push(stats.loss);
            let last = self.step == self.cfg.max_steps as u64;
            if self.step.is_multiple_of(self.cfg.checkpoint_interval as u64) || last {
                let path = out_dir.join(format!("ckpt_{}.bin", self.step));
                self.checkpoint().save(&path)?;
                checkpoints.push(path);
            }
        }
        log.flush()?;
        Ok(TrainOutcome { losses, checkpoints, last: self.checkpoint() })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Per-step losses of this run.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub last: Checkpoint,
}

/// Trains a fresh model on the manifest's training split.
pub fn train(cfg: &RunConfig, manifest: &Manifest, out_dir: &Path) -> Result<TrainOutcome> {
    if manifest.split(Split::Train).is_empty() {
        return Err(Error::Precondition("manifest has no train entries".into()));
    }
    let data: Vec<MixtureSample> = manifest
        .load_samples(Split::Train, cfg.sample_rate)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    Trainer::new(cfg)?.run(&data, out_dir)
}

/// Parses a `loss.log` written by [`Trainer::run`].
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut parts = line.split_whitespace();
            let bad = || Error::Precondition(format!("malformed loss line `{line}`"));
            let step = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let loss = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok((step, loss))
        })
        .collect()
}
