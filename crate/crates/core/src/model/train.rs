use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{LayerKnowledge, Model};
use super::params::Parameters;
use super::ModelConfig;
use crate::corpus::EncodedPair;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub pair: EncodedPair,
    pub knowledge: LayerKnowledge,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean example loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Parameters,
    v: Parameters,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Parameters, config: &ModelConfig) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let g = grads.named();
        let p = params.named_mut();
        let m = self.m.named_mut();
        let v = self.v.named_mut();
        for (((mut p, mut m), mut v), g) in p
            .into_iter()
            .map(|x| x.1)
            .zip(m.into_iter().map(|x| x.1))
            .zip(v.into_iter().map(|x| x.1))
            .zip(g.into_iter().map(|x| x.1))
        {
            Zip::from(&mut p)
                .and(&mut m)
                .and(&mut v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

pub fn train(examples: &[TrainingExample], config: &ModelConfig) -> Result<(Model, TrainingLog)> {
    train_with(examples, config, |_, _| {})
}

/// Mini-batch Adam over shuffled examples. `on_epoch` receives the 1-based
/// epoch and its mean loss. Fully deterministic given `config.rng_seed`.
pub fn train_with(
    examples: &[TrainingExample],
    config: &ModelConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, TrainingLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let params = Parameters::init(config, &mut rng);
    let mut model = Model::new(config.clone(), params)?;
    let mut adam = Adam::new(&model.params, config);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let (loss, g) =
                    model.loss_and_gradients(&ex.pair, &ex.knowledge, config.copy_loss_weight)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                total += loss;
                grads.add_scaled(&g, scale);
            }
            adam.update(&mut model.params, &grads);
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() || !model.params.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        on_epoch(epoch, mean);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

/// Teacher-forced token accuracy over a set of examples.
pub fn teacher_forced_accuracy(model: &Model, examples: &[TrainingExample]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for ex in examples {
        let (c, t) = model.teacher_forced_hits(&ex.pair, &ex.knowledge)?;
        correct += c;
        total += t;
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}
