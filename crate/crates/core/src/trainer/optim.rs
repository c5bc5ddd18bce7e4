//! Adaptive-moment parameter updates and EMA shadow parameters.

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment update on a flat parameter array.
///
/// `step` is the 1-based update count used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    values: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: usize,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..values.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    /// Rebuilds a state from persisted moments.
    pub fn from_parts(m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: usize, config: AdamConfig) -> Self {
        AdamState { config, m, v, step }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update using each tensor's accumulated gradient
    /// (absent gradients count as zero).
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer state shape drifted");
        self.step += 1;
        let cfg = self.config;
        for (i, p) in params.iter_mut().enumerate() {
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.len()],
            };
            adam_update(
                p.values_mut(),
                &grad,
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                lr,
                &cfg,
            );
        }
    }
}

/// Exponential moving average of a parameter set.
///
/// The shadow copies mirror the live parameter shapes exactly and are the
/// weights used for evaluation-time stability.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub shadow: Vec<Tensor>,
    pub decay: f64,
}

impl EmaState {
    /// Starts the shadow at the current parameter values.
    pub fn new(params: &[&Tensor], decay: f64) -> Self {
        EmaState {
            shadow: params.iter().map(|&p| p.clone()).collect(),
            decay,
        }
    }

    pub fn with_shadow(shadow: Vec<Tensor>, decay: f64) -> Self {
        EmaState { shadow, decay }
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`
    pub fn update(&mut self, params: &[&Tensor]) {
        assert_eq!(params.len(), self.shadow.len(), "ema shadow shape drifted");
        for (s, p) in self.shadow.iter_mut().zip(params) {
            debug_assert_eq!(s.shape(), p.shape());
            for (sv, &pv) in s.values_mut().iter_mut().zip(p.values()) {
                *sv = self.decay * *sv + (1.0 - self.decay) * pv;
            }
        }
    }

    /// Overwrites the live parameters with the shadow values.
    pub fn copy_into(&self, params: &mut [&mut Tensor]) {
        assert_eq!(params.len(), self.shadow.len());
        for (p, s) in params.iter_mut().zip(&self.shadow) {
            p.values_mut().copy_from_slice(s.values());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.shadow.iter().all(Tensor::all_finite)
    }
}
