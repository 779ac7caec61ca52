use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flow::{draw_normal, FlowModel};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::objective::{LossBreakdown, Objective, ObjectiveGraph};
use super::TrainError;

/// Linear ramp of β from `start` to the configured value over `steps` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaAnneal {
    pub start: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Latent samples per step.
    pub batch: usize,
    /// Optimizer steps, each on a fresh latent batch.
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Entropy weight.
    pub beta: f64,
    pub seed: u64,
    /// Checkpoint callback cadence in steps; 0 disables it.
    pub checkpoint_every: usize,
    pub anneal: Option<BetaAnneal>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            epochs: 20_000,
            adam: AdamConfig::default(),
            beta: 1.0,
            seed: 0,
            checkpoint_every: 0,
            anneal: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("Adam moment decays must lie in [0, 1)");
        }
        if !(a.eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if matches!(a.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        if let Some(an) = self.anneal {
            if !(an.start >= 0.0 && an.start.is_finite()) || an.steps == 0 {
                return bad("anneal needs a non-negative start and at least one step");
            }
        }
        Ok(())
    }

    /// β used at optimizer step `step` (0-based).
    pub fn beta_at(&self, step: usize) -> f64 {
        match self.anneal {
            Some(a) if step < a.steps => a.start + (self.beta - a.start) * step as f64 / a.steps as f64,
            _ => self.beta,
        }
    }
}

/// Where and why a run stopped early.
#[derive(Debug)]
pub struct TrainAbort {
    pub step: usize,
    pub error: TrainError,
}

pub struct TrainOutcome {
    /// Final model, or the last finite one when the run aborted.
    pub model: FlowModel,
    /// One entry per completed step, taken before that step's update.
    pub history: Vec<LossBreakdown>,
    pub abort: Option<TrainAbort>,
}

pub fn train(model: FlowModel, objective: &Objective, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, objective, config, |_, _| Ok(()))
}

/// Runs the optimization, calling `on_checkpoint(step, model)` every
/// `checkpoint_every` steps. A non-finite loss or gradient stops the run and
/// is reported in [`TrainOutcome::abort`] with the pre-step model.
pub fn train_with<F>(
    mut model: FlowModel,
    objective: &Objective,
    config: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(usize, &FlowModel) -> Result<(), String>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = model.dim();
    let mut z = draw_normal(config.batch, dim, &mut rng);
    model.initialize_actnorm(&z)?;
    let mut og = ObjectiveGraph::new(&model, objective, config.beta_at(0))?;
    let mut state = AdamState::default();
    let mut history = Vec::with_capacity(config.epochs);

    for step in 0..config.epochs {
        if step > 0 {
            z = draw_normal(config.batch, dim, &mut rng);
        }
        og.set_beta(config.beta_at(step));
        let result = og.value_and_grad(&z).and_then(|(loss, grads)| {
            if grads.iter().flatten().all(|g| g.is_finite()) {
                Ok((loss, grads))
            } else {
                Err(TrainError::NonFinite {
                    sample: None,
                    detail: "gradient".into(),
                })
            }
        });
        let (loss, mut grads) = match result {
            Ok(v) => v,
            Err(error) => {
                og.copy_params_into(&mut model);
                return Ok(TrainOutcome {
                    model,
                    history,
                    abort: Some(TrainAbort { step, error }),
                });
            }
        };
        history.push(loss);
        let mut params = og.params_mut();
        adam_step(&mut params, &mut grads, &mut state, &config.adam);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            og.copy_params_into(&mut model);
            on_checkpoint(step + 1, &model).map_err(TrainError::Checkpoint)?;
        }
    }
    og.copy_params_into(&mut model);
    Ok(TrainOutcome {
        model,
        history,
        abort: None,
    })
}
