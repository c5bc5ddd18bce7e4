//! Linear variance schedule and every coefficient derived from it.

use crate::error::{Error, Result};

/// Which quantity the denoiser predicts at each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Predict the injected noise.
    Noise,
    /// Predict the clean datum directly.
    Image,
    /// Predict the reverse-transition mean.
    Mean,
}

impl Parameterization {
    pub const ALL: [Parameterization; 3] = [
        Parameterization::Noise,
        Parameterization::Image,
        Parameterization::Mean,
    ];
}

/// Per-timestep weighting applied to the squared-error objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Unit weight for every timestep and parameterization.
    Simple,
    /// The variational-bound prefactors.
    Vlb,
}

/// Precomputed timestep coefficients for a fixed step count `T`.
///
/// All accessors take 1-based timesteps `t in 1..=T`; `alpha_bar(0)` is
/// defined as 1 so that `beta_tilde(1) = 0` and `t = 0` denotes clean data.
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    t_count: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
    sigma2: Vec<f64>,
    snr: Vec<f64>,
}

/// Reference endpoints of the 1000-step linear schedule.
pub const BETA_START_REF: f64 = 1e-4;
pub const BETA_END_REF: f64 = 0.02;
pub const T_REF: usize = 1000;

/// Endpoints for a `t_count`-step linear schedule that keep the cumulative
/// noise budget of the 1000-step reference, so `alpha_bar(T)` stays far
/// below 1 for short desk-scale schedules.
pub fn default_endpoints(t_count: usize) -> (f64, f64) {
    let scale = T_REF as f64 / t_count as f64;
    let end = (BETA_END_REF * scale).min(0.999);
    let start = (BETA_START_REF * scale).min(end);
    (start, end)
}

impl Schedule {
    /// Linear schedule `beta_t = ((T-t) beta1 + (t-1) betaT) / (T-1)`.
    pub fn linear(t_count: usize, beta1: f64, beta_t: f64) -> Result<Self> {
        if t_count < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 timesteps, got {t_count}"
            )));
        }
        if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "endpoints must satisfy 0 < beta1 <= betaT < 1, got ({beta1}, {beta_t})"
            )));
        }
        let n = t_count as f64;
        let beta: Vec<f64> = (1..=t_count)
            .map(|t| ((n - t as f64) * beta1 + (t as f64 - 1.0) * beta_t) / (n - 1.0))
            .collect();
        Ok(Self::from_betas(beta))
    }

    /// Linear schedule with noise-budget-preserving default endpoints.
    pub fn default_linear(t_count: usize) -> Result<Self> {
        let (b1, bt) = default_endpoints(t_count);
        Schedule::linear(t_count, b1, bt)
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let t_count = beta.len();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_count);
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut beta_tilde = Vec::with_capacity(t_count);
        for t in 1..=t_count {
            let prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
            beta_tilde.push((1.0 - prev) * beta[t - 1] / (1.0 - alpha_bar[t - 1]));
        }
        let sigma2 = beta.clone();
        let snr = alpha_bar.iter().map(|&a| a / (1.0 - a)).collect();
        Schedule {
            t_count,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
            sigma2,
            snr,
        }
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_count {
            Err(Error::TimestepOutOfRange {
                t,
                t_count: self.t_count,
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance of the forward process conditioned on clean data.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    /// Reverse-process variance, fixed to `beta_t`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)`.
    pub fn snr(&self, t: usize) -> f64 {
        self.snr[t - 1]
    }

    /// Multiplicative weight on the squared error for timestep `t` under
    /// the given parameterization and weighting scheme.
    pub fn loss_weight(&self, t: usize, p: Parameterization, w: Weighting) -> Result<f64> {
        self.check_t(t)?;
        Ok(match w {
            Weighting::Simple => 1.0,
            Weighting::Vlb => match p {
                Parameterization::Mean => 1.0 / (2.0 * self.sigma2(t)),
                Parameterization::Noise => self.vlb_noise_weight(t),
                // The image weight is the noise weight times the Jacobian
                // of the noise-to-image substitution.
                Parameterization::Image => self.vlb_noise_weight(t) * self.snr(t),
            },
        })
    }

    fn vlb_noise_weight(&self, t: usize) -> f64 {
        let beta = self.beta(t);
        beta * beta / (2.0 * self.sigma2(t) * self.alpha(t) * (1.0 - self.alpha_bar(t)))
    }

    /// One row per timestep with every derived coefficient, CSV-serializable.
    pub fn rows(&self) -> Vec<ScheduleRow> {
        (1..=self.t_count)
            .map(|t| ScheduleRow {
                t,
                beta: self.beta(t),
                alpha_bar: self.alpha_bar(t),
                beta_tilde: self.beta_tilde(t),
                snr: self.snr(t),
                w_vlb_noise: self.loss_weight(t, Parameterization::Noise, Weighting::Vlb).unwrap(),
                w_vlb_image: self.loss_weight(t, Parameterization::Image, Weighting::Vlb).unwrap(),
                w_vlb_mean: self.loss_weight(t, Parameterization::Mean, Weighting::Vlb).unwrap(),
            })
            .collect()
    }

    /// Full-precision CSV dump of [`Schedule::rows`].
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("t,beta,alpha_bar,beta_tilde,snr,w_vlb_noise,w_vlb_image,w_vlb_mean\n");
        for r in self.rows() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t, r.beta, r.alpha_bar, r.beta_tilde, r.snr, r.w_vlb_noise, r.w_vlb_image,
                r.w_vlb_mean
            ));
        }
        out
    }
}

/// One timestep's coefficients as emitted by the CSV dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub t: usize,
    pub beta: f64,
    pub alpha_bar: f64,
    pub beta_tilde: f64,
    pub snr: f64,
    pub w_vlb_noise: f64,
    pub w_vlb_image: f64,
    pub w_vlb_mean: f64,
}
