use serde::{Deserialize, Serialize};

use super::{Condition, ModelConfig, PastContext, Pcmdm};
use crate::data::{make_pairs, LabeledStream, Normalizer};
use crate::diffusion::q_sample;
use crate::error::{Error, Result};
use crate::ndcore::{adamw_step, AdamWConfig, AdamWState, Matrix, SeedStream, Tape};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Probability of replacing the label with the unconditional token.
    pub p_drop: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            steps: 2000,
            p_drop: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::config("train.p_drop", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One clean segment with its label and (possibly empty) history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub frames: Matrix,
    pub label: usize,
    pub past: PastContext,
}

/// Two examples per adjacent pair: the first segment without history and the
/// second with the first's last `h` frames.
pub fn examples_from_streams(streams: &[LabeledStream], h: usize) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for s in streams {
        for p in make_pairs(s, h) {
            out.push(TrainingExample {
                frames: p.first,
                label: p.first_label,
                past: PastContext::none(),
            });
            out.push(TrainingExample {
                frames: p.second,
                label: p.second_label,
                past: if h == 0 { PastContext::none() } else { PastContext::new(p.tail) },
            });
        }
    }
    out
}

/// Per-step mean batch losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `window` losses (all of them if fewer).
    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        let n = self.losses.len().min(window);
        (n > 0).then(|| self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64)
    }

    /// Mean of the first `window` losses.
    pub fn head_mean(&self, window: usize) -> Option<f64> {
        let n = self.losses.len().min(window);
        (n > 0).then(|| self.losses[..n].iter().sum::<f64>() / n as f64)
    }
}

/// Loss and parameter gradients for one example at a fixed `(t, ε, condition)`.
pub fn example_loss_and_grads(
    model: &Pcmdm,
    ex: &TrainingExample,
    t: usize,
    eps: &Matrix,
    cond: Condition,
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<Matrix>)> {
    let x_t = q_sample(&ex.frames, t, eps, schedule)?;
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, &x_t, t, cond, &ex.past)?;
    let target = tape.constant(ex.frames.clone());
    let loss = tape.mse(pred, target);
    let value = tape.value(loss).as_slice()[0];
    Ok((value, tape.backward(loss)?.params))
}

/// Runs `cfg.steps` AdamW updates on `model`; `on_step(step, loss)` sees every
/// batch loss (1-based step).
pub fn train(
    model: &mut Pcmdm,
    state: &mut AdamWState,
    examples: &[TrainingExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut SeedStream,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let opt = cfg.optimizer();
    let mut report = TrainReport::default();
    let inv_batch = 1.0 / cfg.batch_size as f64;
    for step in 1..=cfg.steps {
        let mut total = 0.0;
        let mut grads: Vec<Matrix> = model.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        for _ in 0..cfg.batch_size {
            let ex = &examples[rng.below(examples.len())];
            let t = rng.int_inclusive(1, schedule.steps());
            let eps = rng.gaussian(ex.frames.rows(), ex.frames.cols());
            let cond = if rng.bernoulli(cfg.p_drop) {
                Condition::Unconditional
            } else {
                Condition::Label(ex.label)
            };
            let (loss, g) = example_loss_and_grads(model, ex, t, &eps, cond, schedule)?;
            total += loss;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.axpy(inv_batch, gi);
            }
        }
        let loss = total * inv_batch;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss} at step {step}")));
        }
        adamw_step(model.params_mut(), &grads, state, &opt)?;
        report.losses.push(loss);
        on_step(step, loss);
    }
    Ok(report)
}

/// Fits a normalizer on `streams`, initializes a model from `seed` and trains
/// it in normalized space. The returned model carries the normalizer.
pub fn fit_model(
    config: ModelConfig,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    streams: &[LabeledStream],
    seed: u64,
    on_step: impl FnMut(usize, f64),
) -> Result<(Pcmdm, TrainReport)> {
    let normalizer = Normalizer::fit(streams)?;
    let examples = examples_from_streams(&normalizer.normalize_streams(streams)?, config.past_frames);
    let root = SeedStream::new(seed);
    let mut model = Pcmdm::init(config, &mut root.derive(0))?;
    let mut state = AdamWState::new(model.params());
    let report = train(&mut model, &mut state, &examples, schedule, cfg, &mut root.derive(1), on_step)?;
    Ok((model.with_normalizer(normalizer)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ModelConfig;
    use crate::schedule::cosine_schedule;

    fn tiny_model(h: usize) -> Pcmdm {
        let cfg = ModelConfig {
            frame_dim: 4,
            token_dim: 16,
            blocks: 2,
            heads: 2,
            ff_dim: 32,
            past_frames: h,
            num_labels: 2,
        };
        Pcmdm::init(cfg, &mut SeedStream::new(3)).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mut tape = Tape::new();
        let y = SeedStream::new(1).gaussian(5, 4);
        let a = tape.constant(y.clone());
        let b = tape.constant(y);
        let l = tape.mse(a, b);
        assert_eq!(tape.value(l).as_slice()[0], 0.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut model = tiny_model(0);
        let mut state = AdamWState::new(model.params());
        let s = cosine_schedule(10).unwrap();
        let err = train(
            &mut model,
            &mut state,
            &[],
            &s,
            &TrainConfig::default(),
            &mut SeedStream::new(0),
            |_, _| {},
        );
        assert!(err.is_err());
    }

    #[test]
    fn overfits_a_single_batch() {
        let s = cosine_schedule(10).unwrap();
        let mut rng = SeedStream::new(8);
        let examples = vec![
            TrainingExample {
                frames: rng.gaussian(6, 4).scale(0.5),
                label: 0,
                past: PastContext::none(),
            },
            TrainingExample {
                frames: rng.gaussian(6, 4).scale(0.5),
                label: 1,
                past: PastContext::new(rng.gaussian(2, 4)),
            },
        ];
        let mut model = tiny_model(2);
        let mut state = AdamWState::new(model.params());
        // Fixed (t, ε) per example so the target is a deterministic map.
        let fixed: Vec<(usize, Matrix)> = examples.iter().map(|e| (5, rng.gaussian(e.frames.rows(), 4))).collect();
        let opt = AdamWConfig {
            lr: 3e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let mut grads: Vec<Matrix> = model.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            let mut total = 0.0;
            for (ex, (t, eps)) in examples.iter().zip(&fixed) {
                let (l, g) = example_loss_and_grads(&model, ex, *t, eps, Condition::Label(ex.label), &s).unwrap();
                total += l / 2.0;
                for (a, gi) in grads.iter_mut().zip(&g) {
                    a.axpy(0.5, gi);
                }
            }
            last = total;
            adamw_step(model.params_mut(), &grads, &mut state, &opt).unwrap();
        }
        assert!(last < 1e-3, "final loss {last}");
    }

    #[test]
    fn loss_decreases_on_toy_data() {
        let data = crate::data::gen_dataset(&crate::data::DataConfig {
            num_streams: 40,
            test_streams: 0,
            ..Default::default()
        })
        .unwrap();
        let examples = examples_from_streams(&data, 2);
        let s = cosine_schedule(20).unwrap();
        let mut model = Pcmdm::init(
            ModelConfig {
                token_dim: 16,
                ff_dim: 32,
                heads: 2,
                ..ModelConfig::default()
            },
            &mut SeedStream::new(4),
        )
        .unwrap();
        let mut state = AdamWState::new(model.params());
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let report = train(&mut model, &mut state, &examples, &s, &cfg, &mut SeedStream::new(5), |_, _| seen += 1).unwrap();
        assert_eq!(seen, 300);
        let (head, tail) = (report.head_mean(50).unwrap(), report.tail_mean(50).unwrap());
        assert!(tail < head, "head {head} tail {tail}");
    }
}
