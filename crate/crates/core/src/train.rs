//! The batch training loop: draw a batch, drop out contexts, diffuse,
//! take an Adam step at the scheduled rate, and update the EMA shadow.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::context::{encode, ContextError, CpdSettings, ToyEncoder};
use crate::data::{DataError, ModelCheckpoint, ToyIdentityDataset, CHECKPOINT_FORMAT_VERSION};
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserError};
use crate::diffusion::{training_loss, DiffusionError, TrainBatch};
use crate::numerics::Tensor;
use crate::optim::{adam_step, lr_at, AdamState, EmaState, LrSchedule, OptimError};
use crate::schedule::{ScheduleConfig, ScheduleError, VarianceSchedule};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training aborted at step {step}: {reason}")]
    NumericalAbort { step: u64, reason: String },
    #[error("invalid training setup: {0}")]
    BadSetup(String),
}

/// Everything that defines a training run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub schedule: ScheduleConfig,
    pub model: DenoiserConfig,
    pub cpd: CpdSettings,
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub first_phase_len: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub ema_power: f64,
    pub init_seed: u64,
    pub train_seed: u64,
}

/// Training inputs: sample rows plus, for conditional models, the matching
/// unit-norm context rows.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub samples: Tensor,
    pub contexts: Option<Tensor>,
}

impl TrainData {
    /// Encode every dataset row through the frozen toy encoder.
    pub fn from_dataset(
        dataset: &ToyIdentityDataset,
        encoder: &ToyEncoder,
    ) -> Result<Self, TrainError> {
        Self::from_rows(&dataset.samples, encoder)
    }

    /// Encode arbitrary labeled rows (e.g. a reloaded dataset CSV).
    pub fn from_rows(samples: &Tensor, encoder: &ToyEncoder) -> Result<Self, TrainError> {
        let rows = samples.shape()[0];
        let mut contexts = Vec::with_capacity(rows);
        for i in 0..rows {
            let x = Tensor::from_vec(samples.row(i).map_err(DiffusionError::from)?.to_vec())
                .map_err(DiffusionError::from)?;
            contexts.push(encode(encoder, &x)?.embedding().data().to_vec());
        }
        Ok(TrainData {
            samples: samples.clone(),
            contexts: Some(Tensor::from_rows(&contexts).map_err(DiffusionError::from)?),
        })
    }

    /// Plain samples for unconditional training.
    pub fn unconditional(samples: Tensor) -> Self {
        TrainData {
            samples,
            contexts: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.samples.shape()[0]
    }
}

/// Per-step log record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub ema_decay: f64,
}

pub struct Trainer {
    settings: TrainSettings,
    schedule: VarianceSchedule,
    lr_schedule: LrSchedule,
    denoiser: Denoiser,
    adam: AdamState,
    ema: EmaState,
    data: TrainData,
    rng: ChaCha12Rng,
    step: u64,
}

impl Trainer {
    pub fn new(data: TrainData, settings: TrainSettings) -> Result<Self, TrainError> {
        if settings.batch_size == 0 {
            return Err(TrainError::BadSetup("batch_size must be >= 1".into()));
        }
        if data.rows() == 0 {
            return Err(TrainError::BadSetup("no training rows".into()));
        }
        if settings.model.conditioning.is_conditional() && data.contexts.is_none() {
            return Err(TrainError::BadSetup(
                "conditional model needs contexts".into(),
            ));
        }
        let schedule = VarianceSchedule::new(settings.schedule.clone())?;
        let lr_schedule = LrSchedule::new(
            settings.gamma_max,
            settings.gamma_min,
            settings.first_phase_len,
        )?;
        let denoiser = Denoiser::init(settings.model.clone(), settings.init_seed)?;
        let adam = AdamState::new(denoiser.params());
        let ema = EmaState::new(denoiser.params(), settings.ema_power);
        let rng = ChaCha12Rng::seed_from_u64(settings.train_seed);
        Ok(Trainer {
            settings,
            schedule,
            lr_schedule,
            denoiser,
            adam,
            ema,
            data,
            rng,
            step: 0,
        })
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    /// The EMA shadow wrapped as a usable model.
    pub fn ema_denoiser(&self) -> Result<Denoiser, TrainError> {
        Ok(self.denoiser.with_params(self.ema.shadow.clone())?)
    }

    /// One optimization step. Any non-finite loss or gradient aborts with
    /// the failing step number.
    pub fn step(&mut self) -> Result<StepStats, TrainError> {
        let step = self.step;
        let indices: Vec<usize> = (0..self.settings.batch_size)
            .map(|_| self.rng.random_range(0..self.data.rows()))
            .collect();
        let batch = TrainBatch::draw(
            &self.data.samples,
            self.data.contexts.as_ref(),
            &indices,
            &self.schedule,
            &mut self.rng,
        )?;
        let lr = lr_at(&self.lr_schedule, step);
        let (loss, grads) = training_loss(
            &self.denoiser,
            &batch,
            &self.schedule,
            &self.settings.cpd,
            &mut self.rng,
        )
        .map_err(|e| numerical_abort(step, e))?;
        if !loss.is_finite() {
            return Err(TrainError::NumericalAbort {
                step,
                reason: format!("loss = {loss}"),
            });
        }
        let ema_decay = self.ema.next_decay();
        adam_step(self.denoiser.params_mut(), &grads, &mut self.adam, lr)
            .map_err(|e| numerical_abort(step, e))?;
        crate::optim::ema_update(&mut self.ema, self.denoiser.params())?;
        self.step += 1;
        Ok(StepStats {
            step,
            lr,
            loss,
            ema_decay,
        })
    }

    /// Snapshot the full training state.
    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            denoiser_config: self.settings.model.clone(),
            params: self.denoiser.params().clone(),
            ema: self.ema.clone(),
            adam: self.adam.clone(),
            schedule: self.settings.schedule.clone(),
            cpd_p: self.settings.cpd.p,
            cpd_rescale: self.settings.cpd.rescale,
            global_step: self.step,
            init_seed: self.settings.init_seed,
            train_seed: self.settings.train_seed,
        }
    }
}

fn numerical_abort(step: u64, e: impl std::fmt::Display) -> TrainError {
    TrainError::NumericalAbort {
        step,
        reason: e.to_string(),
    }
}

/// Rebuild the sampling-side model from a checkpoint: EMA shadow weights by
/// default (`use_ema`), or the live parameters.
pub fn denoiser_from_checkpoint(
    ck: &ModelCheckpoint,
    use_ema: bool,
) -> Result<Denoiser, TrainError> {
    let params = if use_ema {
        ck.ema.shadow.clone()
    } else {
        ck.params.clone()
    };
    Ok(Denoiser::from_parts(ck.denoiser_config.clone(), params)?)
}
