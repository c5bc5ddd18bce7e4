//! The trainable/checkpointable model unit: schedule, denoiser, optional
//! encoder and first stage, EMA shadow, and resumable optimizer state.

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::models::{DenoiserNet, FirstStage, ReprEncoder};
use crate::rng::RngState;
use crate::schedule::Schedule;
use crate::trainer::optim::{AdamState, EmaState};
use crate::trainer::TrainConfig;

/// Endpoints and length of a linear schedule; enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub t_count: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    pub fn new(t_count: usize, beta_start: f64, beta_end: f64) -> Self {
        ScheduleSpec {
            t_count,
            beta_start,
            beta_end,
        }
    }

    /// Noise-budget-preserving defaults for this step count.
    pub fn default_for(t_count: usize) -> Self {
        let (b1, bt) = crate::schedule::default_endpoints(t_count);
        ScheduleSpec::new(t_count, b1, bt)
    }

    pub fn build(&self) -> Result<Schedule> {
        Schedule::linear(self.t_count, self.beta_start, self.beta_end)
    }
}

/// Mid-run optimizer and generator state; present on bundles that can
/// resume training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: AdamState,
    pub rng: RngState,
    pub step: usize,
}

/// Everything one experiment trains and persists.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub schedule_spec: ScheduleSpec,
    pub schedule: Schedule,
    pub denoiser: DenoiserNet,
    pub encoder: Option<ReprEncoder>,
    pub first_stage: FirstStage,
    /// Shadow of the denoiser parameters only; the representation encoder
    /// is deliberately excluded from averaging.
    pub ema: Option<EmaState>,
    pub train_state: Option<TrainState>,
    pub config: TrainConfig,
}

impl ModelBundle {
    pub fn new(
        schedule_spec: ScheduleSpec,
        denoiser: DenoiserNet,
        encoder: Option<ReprEncoder>,
        first_stage: FirstStage,
        config: TrainConfig,
    ) -> Result<Self> {
        let schedule = schedule_spec.build()?;
        Ok(ModelBundle {
            schedule_spec,
            schedule,
            denoiser,
            encoder,
            first_stage,
            ema: None,
            train_state: None,
            config,
        })
    }

    /// The denoiser to evaluate with: the EMA shadow when present,
    /// otherwise the live parameters.
    pub fn eval_denoiser(&self) -> DenoiserNet {
        let mut net = self.denoiser.clone();
        if let Some(ema) = &self.ema {
            ema.copy_into(&mut net.params_mut());
        }
        net
    }

    /// Parameter tensors in the canonical checkpoint order: denoiser, then
    /// encoder, then first stage.
    pub fn live_params(&self) -> Vec<&Tensor> {
        let mut p = self.denoiser.params();
        if let Some(enc) = &self.encoder {
            p.extend(enc.params());
        }
        if let FirstStage::Net(fs) = &self.first_stage {
            p.extend(fs.params());
        }
        p
    }
}
