//! Closed-form forward-process sampling, posteriors, and the algebraic
//! conversions between reverse-process parameterizations.
//!
//! Everything here is pure math over an immutable [`Schedule`]; predictions
//! only flow through the differentiation engine when these formulas are
//! mirrored inside the training objectives.

use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// A clean data- or latent-space point, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x0: Vec<f64>,
    pub label: Option<usize>,
}

/// A forward-process sample `x_t` with the noise that created it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x_t: Vec<f64>,
    pub t: usize,
    /// The noise used to create `x_t`, when known.
    pub eps: Vec<f64>,
}

fn check_dims(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

/// Jump directly to timestep `t`: `x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps`.
pub fn q_sample(s: &Schedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<NoisySample> {
    s.check_t(t)?;
    check_dims("q_sample", x0, eps)?;
    let signal = s.alpha_bar(t).sqrt();
    let noise = (1.0 - s.alpha_bar(t)).sqrt();
    let x_t = x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Ok(NoisySample {
        x_t,
        t,
        eps: eps.to_vec(),
    })
}

/// Coefficients `(on_x0, on_xt)` of the forward-process posterior mean.
pub fn posterior_coefficients(s: &Schedule, t: usize) -> (f64, f64) {
    let denom = 1.0 - s.alpha_bar(t);
    let on_x0 = s.alpha_bar(t - 1).sqrt() * s.beta(t) / denom;
    let on_xt = s.alpha(t).sqrt() * (1.0 - s.alpha_bar(t - 1)) / denom;
    (on_x0, on_xt)
}

/// Mean and variance of `q(x_{t-1} | x_t, x0)`.
///
/// At `t = 1` the `alpha_bar(0) = 1` convention makes the mean collapse to
/// `x0` with zero variance. The variance never depends on `x_t` or `x0`.
pub fn q_posterior(s: &Schedule, x_t: &[f64], x0: &[f64], t: usize) -> Result<(Vec<f64>, f64)> {
    s.check_t(t)?;
    check_dims("q_posterior", x_t, x0)?;
    let (c0, ct) = posterior_coefficients(s, t);
    let mean = x0
        .iter()
        .zip(x_t)
        .map(|(&x, &y)| c0 * x + ct * y)
        .collect();
    Ok((mean, s.beta_tilde(t)))
}

/// Recovers the clean datum implied by a noise prediction.
pub fn eps_to_x0(s: &Schedule, x_t: &[f64], eps_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_dims("eps_to_x0", x_t, eps_hat)?;
    let signal = s.alpha_bar(t).sqrt();
    let noise = (1.0 - s.alpha_bar(t)).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(&x, &e)| (x - noise * e) / signal)
        .collect())
}

/// Recovers the noise implied by a clean-datum prediction; exact inverse of
/// [`eps_to_x0`].
pub fn x0_to_eps(s: &Schedule, x_t: &[f64], x0_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_dims("x0_to_eps", x_t, x0_hat)?;
    let signal = s.alpha_bar(t).sqrt();
    let noise = (1.0 - s.alpha_bar(t)).sqrt();
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .map(|(&x, &x0)| (x - signal * x0) / noise)
        .collect())
}

/// Reverse-transition mean from a clean-datum prediction (the posterior
/// mean with `x0` replaced by the prediction).
pub fn x0_to_mu(s: &Schedule, x_t: &[f64], x0_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_dims("x0_to_mu", x_t, x0_hat)?;
    let (c0, ct) = posterior_coefficients(s, t);
    Ok(x0_hat
        .iter()
        .zip(x_t)
        .map(|(&x0, &x)| c0 * x0 + ct * x)
        .collect())
}

/// Reverse-transition mean from a noise prediction:
/// `mu = (x_t - beta_t / sqrt(1-abar_t) * eps) / sqrt(alpha_t)`.
pub fn eps_to_mu(s: &Schedule, x_t: &[f64], eps_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_dims("eps_to_mu", x_t, eps_hat)?;
    let scale = 1.0 / s.alpha(t).sqrt();
    let coeff = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(&x, &e)| scale * (x - coeff * e))
        .collect())
}

/// Noise prediction implied by a reverse-transition-mean prediction; exact
/// inverse of [`eps_to_mu`].
pub fn mu_to_eps(s: &Schedule, x_t: &[f64], mu_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_dims("mu_to_eps", x_t, mu_hat)?;
    let root_alpha = s.alpha(t).sqrt();
    let coeff = (1.0 - s.alpha_bar(t)).sqrt() / s.beta(t);
    Ok(x_t
        .iter()
        .zip(mu_hat)
        .map(|(&x, &m)| (x - root_alpha * m) * coeff)
        .collect())
}

/// Clean-datum prediction implied by a reverse-transition-mean prediction.
pub fn mu_to_x0(s: &Schedule, x_t: &[f64], mu_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    let eps = mu_to_eps(s, x_t, mu_hat, t)?;
    eps_to_x0(s, x_t, &eps, t)
}
