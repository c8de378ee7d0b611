//! The end-to-end training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{epoch_batches, make_batch, Batch, Scene};
use super::losses::joint_loss;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, WNet};
use crate::tensor::Mode;

/// Mean losses over one epoch's steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub bce: Option<f64>,
}

/// Per-step losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub mse: f64,
    pub bce: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: WNet<f32>,
    pub optimizer: Adam<f32>,
    pub config: TrainConfig,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub curve: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(model: WNet<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Adam::new(config.lr, config.weight_decay, config.adam),
            model,
            config,
            step: 0,
            epoch: 0,
            curve: Vec::new(),
        })
    }

    /// Continues from a checkpoint, optimizer moments included when present.
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = WNet::from_checkpoint(ckpt)?;
        let mut trainer = Trainer::new(model, config)?;
        if let Some(state) = &ckpt.optimizer {
            trainer.optimizer.load_state(&trainer.model, state)?;
        }
        trainer.step = ckpt.step;
        trainer.epoch = ckpt.epoch;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            optimizer: Some(self.optimizer.state()),
            ..self.model.to_checkpoint(self.step)
        }
    }

    /// Random stream of epoch `epoch` (0-based). Keyed by epoch so that a
    /// resumed run draws the same crops as an uninterrupted one.
    pub fn epoch_rng(&self, epoch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch);
        rng
    }

    /// Forward, loss, backward and one optimizer update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLoss> {
        self.model.set_mode(Mode::Train);
        let out = self.model.forward(batch.images.clone())?;
        let reinforcement = out.reinforcement.as_ref().map(|r| (r, &batch.reinforcement));
        let loss = joint_loss(&out.density, &batch.density, reinforcement, &self.config.loss_weights())?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        self.model.zero_grad();
        self.model.backward(&loss.grad_density, loss.grad_reinforcement.as_ref(), false)?;
        self.optimizer.step(&mut self.model)?;
        self.step += 1;
        Ok(StepLoss {
            total: loss.total,
            mse: loss.mse,
            bce: loss.bce,
        })
    }

    /// One pass over `scenes` in a shuffled order, one random crop each.
    pub fn train_epoch(&mut self, scenes: &[Scene]) -> Result<EpochStats> {
        if scenes.is_empty() {
            return Err(Error::EmptyBatch { op: "train_epoch" });
        }
        let mut rng = self.epoch_rng(self.epoch);
        let batches = epoch_batches(scenes.len(), self.config.batch_size, &mut rng);
        let (mut total, mut mse, mut bce) = (0.0, 0.0, None::<f64>);
        for indices in &batches {
            let batch = make_batch(scenes, indices, &self.config, &mut rng)?;
            let l = self.train_step(&batch)?;
            total += l.total;
            mse += l.mse;
            if let Some(b) = l.bce {
                *bce.get_or_insert(0.0) += b;
            }
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        let stats = EpochStats {
            epoch: self.epoch as usize,
            loss: total / n,
            mse: mse / n,
            bce: bce.map(|b| b / n),
        };
        self.curve.push(stats);
        Ok(stats)
    }

    /// Runs until `config.epochs` epochs are complete. `on_epoch` sees the
    /// trainer after every epoch, e.g. to write checkpoints.
    pub fn fit(
        &mut self,
        scenes: &[Scene],
        mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>,
    ) -> Result<Vec<EpochStats>> {
        while (self.epoch as usize) < self.config.epochs {
            let stats = self.train_epoch(scenes)?;
            on_epoch(self, &stats)?;
        }
        Ok(self.curve.clone())
    }
}

/// `epoch,loss` lines with a header.
pub fn format_loss_curve(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss\n");
    for s in curve {
        out.push_str(&format!("{},{}\n", s.epoch, s.loss));
    }
    out
}

/// Parses [`format_loss_curve`] output.
pub fn parse_loss_curve(text: &str) -> Result<Vec<(usize, f64)>> {
    let bad = |line: usize, reason: &str| -> Error {
        crate::error::FormatError::Parse {
            format: "loss curve",
            line,
            reason: reason.into(),
        }
        .into()
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch,loss")) => {}
        _ => return Err(bad(1, "missing `epoch,loss` header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (e, v) = l.split_once(',').ok_or_else(|| bad(i + 1, "expected `epoch,loss`"))?;
            let e = e.trim().parse().map_err(|_| bad(i + 1, "bad epoch"))?;
            let v = v.trim().parse().map_err(|_| bad(i + 1, "bad loss"))?;
            Ok((e, v))
        })
        .collect()
}
