//! Training configuration.

use crate::error::{Error, Result};
use crate::schedule::{Parameterization, Weighting};

/// Which objective a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Plain diffusion loss, no encoder.
    Dm,
    /// Representation-conditional diffusion (image form) plus KL.
    Lrdm,
    /// As Lrdm with a timestep-conditional encoder.
    TLrdm,
    /// The Lrdm objective pinned to the terminal timestep.
    Lvae,
}

impl TrainMode {
    pub fn uses_encoder(&self) -> bool {
        !matches!(self, TrainMode::Dm)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Dm => "dm",
            TrainMode::Lrdm => "lrdm",
            TrainMode::TLrdm => "tlrdm",
            TrainMode::Lvae => "lvae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dm" => Ok(TrainMode::Dm),
            "lrdm" => Ok(TrainMode::Lrdm),
            "tlrdm" => Ok(TrainMode::TLrdm),
            "lvae" => Ok(TrainMode::Lvae),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// Timestep-window curriculum: sampling starts restricted to the terminal
/// window `[T - initial_width, T]` and expands linearly to `[1, T]` over
/// `expand_steps` optimizer steps. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumConfig {
    pub initial_width: usize,
    pub expand_steps: usize,
}

impl CurriculumConfig {
    /// Inclusive window for a 0-based optimizer step.
    pub fn window(&self, step: usize, t_count: usize) -> (usize, usize) {
        let start_lo = t_count.saturating_sub(self.initial_width).max(1);
        if self.expand_steps == 0 {
            return (1, t_count);
        }
        let frac = (step as f64 / self.expand_steps as f64).min(1.0);
        let lo = start_lo as f64 - frac * (start_lo as f64 - 1.0);
        (lo.round().max(1.0) as usize, t_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub parameterization: Parameterization,
    pub weighting: Weighting,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub ema_decay: f64,
    pub curriculum: Option<CurriculumConfig>,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            parameterization: match mode {
                TrainMode::Dm => Parameterization::Noise,
                _ => Parameterization::Image,
            },
            weighting: Weighting::Simple,
            lambda: match mode {
                TrainMode::Dm => 0.0,
                _ => 1e-3,
            },
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 20_000,
            seed: 0,
            ema_decay: 0.9999,
            curriculum: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument(
                "batch size and step count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidArgument(format!(
                "ema decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kl weight must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.mode == TrainMode::Dm && self.lambda != 0.0 {
            return Err(Error::InvalidArgument(
                "the plain diffusion mode has no kl term; set lambda to 0".into(),
            ));
        }
        Ok(())
    }
}
