use goalshape_diff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_node, LossConfig, LossTarget};
use super::{forward_node, prepare_pair, ModelParams, Prepared};
use crate::cloud::{chamfer, PointCloud};
use crate::demo::Demonstration;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            loss: LossConfig::default(),
            seed: 0,
            n: crate::demo::DEFAULT_N,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n == 0 || !(self.lr > 0.0) {
            return Err(Error::invalid(format!("bad training configuration {self:?}")));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean Chamfer of the predictions seen during the epoch, m².
    pub mean_chamfer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters after the epoch with the lowest mean loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub log: TrainLog,
}

struct Sample {
    current: Prepared,
    context: Prepared,
    target: LossTarget,
}

fn prepare(demo: &Demonstration, config: &TrainConfig) -> Result<Sample> {
    for (what, c) in [
        ("current", &demo.current),
        ("context", &demo.context),
        ("goal", &demo.goal),
    ] {
        if c.len() != config.n {
            return Err(Error::invalid(format!(
                "seed {}: {what} cloud has {} points, training expects {}",
                demo.scene.rng_seed,
                c.len(),
                config.n
            )));
        }
    }
    let (centre, current, context) = prepare_pair(&demo.current, &demo.context)?;
    let goal = demo.goal.translated(&-centre);
    Ok(Sample {
        current,
        context,
        target: LossTarget::new(goal, &config.loss)?,
    })
}

/// Mini-batch Adam on `λ_c·chamfer + λ_e·transport` between predicted and
/// demonstrated goals. Shuffling and initialization follow `config.seed`.
pub fn train(demos: &[Demonstration], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if demos.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let samples = demos.iter().map(|d| prepare(d, config)).collect::<Result<Vec<_>>>()?;
    let mut params = ModelParams::init(config.n, config.seed)?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11_0b5e_55ed_0000);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, params.clone(), 0);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut chamfer_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let leaves = params.leaves(&mut tape, true);
            let mut total = None;
            for &i in batch {
                let s = &samples[i];
                let pred = forward_node(&mut tape, &leaves, &s.current, &s.context)?;
                let l = loss_node(&mut tape, pred, &s.target, &config.loss)?;
                loss_sum += tape.value(l).item();
                chamfer_sum += chamfer(&PointCloud::from_flat(tape.value(pred).data())?, &s.target.cloud);
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
            let total = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64);
            let mut grads = tape.backward(total)?;
            let grads: Vec<Tensor> = leaves
                .iter()
                .zip(&params.tensors)
                .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            adam_step(&mut params.tensors, &grads, &mut state)?;
            params.quantize();
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            mean_chamfer: chamfer_sum / samples.len() as f64,
        };
        if !entry.mean_loss.is_finite() {
            return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
        }
        if entry.mean_loss < best.0 {
            best = (entry.mean_loss, params.clone(), epoch);
        }
        if epoch == 1 || epoch % 10 == 0 || epoch == config.epochs {
            info!(
                "epoch {epoch}: loss {:.4e} chamfer {:.4e}",
                entry.mean_loss, entry.mean_chamfer
            );
        }
        log.epochs.push(entry);
    }
    Ok(TrainOutcome {
        params,
        best: best.1,
        best_epoch: best.2,
        log,
    })
}
