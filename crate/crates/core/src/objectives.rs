//! Training losses: the diffusion losses under every parameterization and
//! weighting, the representation-conditional (LRDM / t-LRDM) objectives,
//! the LVAE degenerate case, the per-term variational bound, and the
//! Gaussian KL.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::models::{reparameterize, Binding, DenoiserNet, ReprEncoder};
use crate::process::{q_posterior, q_sample, x0_to_mu};
use crate::rng::Rng;
use crate::samplers::Predictor;
use crate::schedule::{Parameterization, Schedule, Weighting};

/// Scalar decomposition of one objective evaluation.
///
/// `total = weight_applied * diffusion + lambda * kl` holds exactly: when a
/// batch mixes per-example weights they are folded into `diffusion` and
/// `weight_applied` is 1. `t` is set when every batch element shared one
/// timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub diffusion: f64,
    pub kl: f64,
    pub t: Option<usize>,
    pub weight_applied: f64,
    pub lambda: f64,
}

/// KL regularization strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationConfig {
    pub lambda: f64,
}

impl RegularizationConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kl weight must be nonnegative, got {lambda}"
            )));
        }
        Ok(RegularizationConfig { lambda })
    }
}

/// A built loss graph: the tape holding the forward pass, the scalar loss
/// node, and the parameter bindings needed to route gradients back.
pub struct Objective {
    pub tape: Tape,
    pub loss: ValueId,
    pub net_binding: Binding,
    pub encoder_binding: Option<Binding>,
    pub breakdown: LossBreakdown,
}

impl Objective {
    /// Runs backward and accumulates gradients onto the given parameter
    /// lists (encoder list may be empty).
    pub fn backprop(
        &mut self,
        net_params: &mut [&mut Tensor],
        encoder_params: &mut [&mut Tensor],
    ) -> Result<()> {
        self.tape.backward(self.loss)?;
        self.net_binding.accumulate_into(&self.tape, net_params);
        if let Some(b) = &self.encoder_binding {
            b.accumulate_into(&self.tape, encoder_params);
        }
        Ok(())
    }
}

/// The per-batch random draws an objective consumes: one timestep and one
/// noise vector per element, plus reparameterization noise when an encoder
/// is present. Sampling order is timesteps, then noise, then encoder noise.
#[derive(Debug, Clone)]
pub struct BatchDraws {
    pub ts: Vec<usize>,
    pub eps: Tensor,
    pub repr_noise: Option<Tensor>,
}

impl BatchDraws {
    pub fn sample(
        n: usize,
        dim: usize,
        repr_dim: Option<usize>,
        window: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let ts = (0..n).map(|_| rng.uniform_int(window.0, window.1)).collect();
        let eps = Tensor::new(vec![n, dim], rng.normal_vec(n * dim)).unwrap();
        let repr_noise =
            repr_dim.map(|r| Tensor::new(vec![n, r], rng.normal_vec(n * r)).unwrap());
        BatchDraws {
            ts,
            eps,
            repr_noise,
        }
    }
}

/// Knobs shared by the loss constructors.
#[derive(Default)]
pub struct LossOptions<'a> {
    /// Reuse fixed draws instead of sampling from the rng.
    pub draws: Option<&'a BatchDraws>,
    /// Inclusive timestep window to sample from (the curriculum hook);
    /// defaults to `(1, T)`.
    pub t_window: Option<(usize, usize)>,
    /// Draw dropout masks (training mode).
    pub train_dropout: bool,
}

fn validate_window(s: &Schedule, window: (usize, usize)) -> Result<()> {
    let (lo, hi) = window;
    if lo == 0 || hi > s.t_count() || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "timestep window must satisfy 1 <= lo <= hi <= {}, got ({lo}, {hi})",
            s.t_count()
        )));
    }
    Ok(())
}

fn batch_dims(x0: &Tensor) -> Result<(usize, usize)> {
    if x0.shape().len() != 2 || x0.shape()[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "batch must be a nonempty [n, d] tensor, got {:?}",
            x0.shape()
        )));
    }
    Ok((x0.shape()[0], x0.shape()[1]))
}

/// On-tape KL from `N(mu, exp(logvar) I)` to the standard normal, summed
/// over dims and averaged over the leading (batch) axis:
/// `mean_rows( sum_i 0.5 (mu_i^2 + exp(lv_i) - 1 - lv_i) )`.
pub fn kl_standard_normal(tape: &mut Tape, mu: ValueId, logvar: ValueId) -> Result<ValueId> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::ShapeMismatch {
            op: "kl_standard_normal",
            lhs: tape.shape(mu).to_vec(),
            rhs: tape.shape(logvar).to_vec(),
        });
    }
    let rows = if tape.shape(mu).len() == 2 {
        tape.shape(mu)[0]
    } else {
        1
    };
    let musq = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(musq, var)?;
    let b = tape.add_scalar(a, -1.0);
    let c = tape.sub(b, logvar)?;
    let half = tape.scale(c, 0.5);
    let total = tape.sum(half);
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// Closed-form KL for one example, summed over dims.
pub fn kl_standard_normal_value(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Assembles the noisy batch and per-row targets for a parameterization.
fn noisy_batch_and_targets(
    s: &Schedule,
    x0: &Tensor,
    draws: &BatchDraws,
    p: Parameterization,
) -> Result<(Tensor, Tensor)> {
    let n = x0.shape()[0];
    let mut xt_rows = Vec::with_capacity(n);
    let mut target_rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = draws.ts[i];
        let noisy = q_sample(s, x0.row(i), t, draws.eps.row(i))?;
        let target = match p {
            Parameterization::Noise => draws.eps.row(i).to_vec(),
            Parameterization::Image => x0.row(i).to_vec(),
            Parameterization::Mean => x0_to_mu(s, &noisy.x_t, x0.row(i), t)?,
        };
        xt_rows.push(noisy.x_t);
        target_rows.push(target);
    }
    Ok((Tensor::from_rows(&xt_rows)?, Tensor::from_rows(&target_rows)?))
}

fn shared_t(ts: &[usize]) -> Option<usize> {
    let first = ts[0];
    ts.iter().all(|&t| t == first).then_some(first)
}

/// Builds the weighted squared-error loss node from a prediction and its
/// target; returns `(loss, diffusion, weight_applied)`.
fn weighted_mse(
    tape: &mut Tape,
    s: &Schedule,
    pred: ValueId,
    target: ValueId,
    ts: &[usize],
    p: Parameterization,
    w: Weighting,
) -> Result<(ValueId, f64, f64)> {
    let n = ts.len();
    let weights: Vec<f64> = ts
        .iter()
        .map(|&t| s.loss_weight(t, p, w))
        .collect::<Result<_>>()?;
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let homogeneous = weights.windows(2).all(|pair| pair[0] == pair[1]);
    if homogeneous {
        let total = tape.sum(sq);
        let base = tape.scale(total, 1.0 / n as f64);
        let loss = tape.scale(base, weights[0]);
        Ok((loss, tape.item(base), weights[0]))
    } else {
        let d = tape.shape(sq)[1];
        let mut wmat = Vec::with_capacity(n * d);
        for &wi in &weights {
            wmat.extend(std::iter::repeat(wi).take(d));
        }
        let w_id = tape.input_from(vec![n, d], wmat)?;
        let weighted = tape.mul(sq, w_id)?;
        let total = tape.sum(weighted);
        let loss = tape.scale(total, 1.0 / n as f64);
        Ok((loss, tape.item(loss), 1.0))
    }
}

/// Plain diffusion loss: per element, sample `t` and noise, noise the
/// datum, and score the prediction against the target the parameterization
/// implies, weighted per the scheme and averaged over the batch.
#[allow(clippy::too_many_arguments)]
pub fn dm_loss(
    s: &Schedule,
    net: &DenoiserNet,
    x0: &Tensor,
    labels: Option<&[usize]>,
    p: Parameterization,
    w: Weighting,
    rng: &mut Rng,
    opts: &LossOptions,
) -> Result<Objective> {
    if net.config.conditioning.repr_dim().is_some() {
        return Err(Error::ConditioningMismatch {
            expected: "an unconditional (or class-only) denoiser for the plain diffusion loss",
            given: "a representation-conditioned denoiser",
        });
    }
    let (n, d) = batch_dims(x0)?;
    let window = opts.t_window.unwrap_or((1, s.t_count()));
    validate_window(s, window)?;
    let owned;
    let draws = match opts.draws {
        Some(dr) => dr,
        None => {
            owned = BatchDraws::sample(n, d, None, window, rng);
            &owned
        }
    };
    let (x_t, target) = noisy_batch_and_targets(s, x0, draws, p)?;

    let mut tape = Tape::new();
    let x_t_id = tape.input(&x_t);
    let target_id = tape.input(&target);
    let mut binding = Binding::default();
    let train_rng = opts.train_dropout.then_some(&mut *rng);
    let pred = net.forward(
        &mut tape,
        x_t_id,
        &draws.ts,
        s.t_count(),
        None,
        labels,
        train_rng,
        &mut binding,
    )?;
    let (loss, diffusion, weight_applied) =
        weighted_mse(&mut tape, s, pred, target_id, &draws.ts, p, w)?;
    let breakdown = LossBreakdown {
        total: tape.item(loss),
        diffusion,
        kl: 0.0,
        t: shared_t(&draws.ts),
        weight_applied,
        lambda: 0.0,
    };
    Ok(Objective {
        tape,
        loss,
        net_binding: binding,
        encoder_binding: None,
        breakdown,
    })
}

#[allow(clippy::too_many_arguments)]
fn repr_loss(
    s: &Schedule,
    net: &DenoiserNet,
    enc: &ReprEncoder,
    x0: &Tensor,
    labels: Option<&[usize]>,
    lambda: f64,
    rng: &mut Rng,
    opts: &LossOptions,
    timestep_conditional: bool,
) -> Result<Objective> {
    let repr_dim = net.config.conditioning.repr_dim().ok_or(Error::ConditioningMismatch {
        expected: "a representation-conditioned denoiser",
        given: "a denoiser without a representation input",
    })?;
    if repr_dim != enc.config.repr_dim {
        return Err(Error::InvalidArgument(format!(
            "denoiser expects representation dim {repr_dim} but encoder outputs {}",
            enc.config.repr_dim
        )));
    }
    if enc.config.timestep_conditional != timestep_conditional {
        return Err(Error::ConditioningMismatch {
            expected: if timestep_conditional {
                "a timestep-conditional encoder"
            } else {
                "a timestep-free encoder"
            },
            given: if enc.config.timestep_conditional {
                "a timestep-conditional encoder"
            } else {
                "a timestep-free encoder"
            },
        });
    }
    RegularizationConfig::new(lambda)?;
    let (n, d) = batch_dims(x0)?;
    let window = opts.t_window.unwrap_or((1, s.t_count()));
    validate_window(s, window)?;
    let owned;
    let draws = match opts.draws {
        Some(dr) => dr,
        None => {
            owned = BatchDraws::sample(n, d, Some(repr_dim), window, rng);
            &owned
        }
    };
    let repr_noise = draws.repr_noise.as_ref().ok_or_else(|| {
        Error::InvalidArgument("draws lack reparameterization noise for the encoder".into())
    })?;
    // the objective is the unit-weighted image-form error by construction
    let (x_t, _) = noisy_batch_and_targets(s, x0, draws, Parameterization::Image)?;

    let mut tape = Tape::new();
    let z0_id = tape.input(x0);
    let mut enc_binding = Binding::default();
    let enc_labels = if enc.config.class_conditional.is_some() {
        labels
    } else {
        None
    };
    let (mu, logvar) = enc.forward(
        &mut tape,
        z0_id,
        timestep_conditional.then_some(&draws.ts[..]),
        s.t_count(),
        enc_labels,
        &mut enc_binding,
    )?;
    let r = reparameterize(&mut tape, mu, logvar, repr_noise)?;

    let x_t_id = tape.input(&x_t);
    let mut net_binding = Binding::default();
    let net_labels = if net.config.conditioning.num_classes().is_some() {
        labels
    } else {
        None
    };
    let train_rng = opts.train_dropout.then_some(&mut *rng);
    let pred = net.forward(
        &mut tape,
        x_t_id,
        &draws.ts,
        s.t_count(),
        Some(r),
        net_labels,
        train_rng,
        &mut net_binding,
    )?;

    let diff = tape.sub(pred, z0_id)?;
    let sq = tape.square(diff);
    let total_sq = tape.sum(sq);
    let diffusion_node = tape.scale(total_sq, 1.0 / n as f64);
    let kl_node = kl_standard_normal(&mut tape, mu, logvar)?;
    let kl_scaled = tape.scale(kl_node, lambda);
    let loss = tape.add(diffusion_node, kl_scaled)?;

    let breakdown = LossBreakdown {
        total: tape.item(loss),
        diffusion: tape.item(diffusion_node),
        kl: tape.item(kl_node),
        t: shared_t(&draws.ts),
        weight_applied: 1.0,
        lambda,
    };
    Ok(Objective {
        tape,
        loss,
        net_binding,
        encoder_binding: Some(enc_binding),
        breakdown,
    })
}

/// Representation-conditional diffusion loss: unit-weighted image-form
/// error of a denoiser conditioned on the reparameterized encoder output,
/// plus `lambda` times the posterior-to-prior KL.
#[allow(clippy::too_many_arguments)]
pub fn lrdm_loss(
    s: &Schedule,
    net: &DenoiserNet,
    enc: &ReprEncoder,
    x0: &Tensor,
    labels: Option<&[usize]>,
    lambda: f64,
    rng: &mut Rng,
    opts: &LossOptions,
) -> Result<Objective> {
    repr_loss(s, net, enc, x0, labels, lambda, rng, opts, false)
}

/// As [`lrdm_loss`] but with a separate representation per timestep: the
/// encoder sees the sampled `t` and the KL applies to that posterior.
#[allow(clippy::too_many_arguments)]
pub fn t_lrdm_loss(
    s: &Schedule,
    net: &DenoiserNet,
    enc_t: &ReprEncoder,
    x0: &Tensor,
    labels: Option<&[usize]>,
    lambda: f64,
    rng: &mut Rng,
    opts: &LossOptions,
) -> Result<Objective> {
    repr_loss(s, net, enc_t, x0, labels, lambda, rng, opts, true)
}

/// The representation objective restricted to the terminal timestep, where
/// the noisy input carries no signal and the loss reduces to an
/// unconditional VAE.
#[allow(clippy::too_many_arguments)]
pub fn lvae_loss(
    s: &Schedule,
    net: &DenoiserNet,
    enc: &ReprEncoder,
    x0: &Tensor,
    labels: Option<&[usize]>,
    lambda: f64,
    rng: &mut Rng,
    opts: &LossOptions,
) -> Result<Objective> {
    let t = s.t_count();
    let opts = LossOptions {
        draws: opts.draws,
        t_window: Some((t, t)),
        train_dropout: opts.train_dropout,
    };
    repr_loss(s, net, enc, x0, labels, lambda, rng, &opts, false)
}

/// Which variance the reverse transitions use when evaluating the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseVariance {
    /// The forward-process variance `beta_t` (the default everywhere).
    FixedBeta,
    /// The posterior variance `beta_tilde_t` (`beta_1` at `t = 1`, where
    /// the posterior variance vanishes).
    FixedBetaTilde,
}

impl ReverseVariance {
    fn value(&self, s: &Schedule, t: usize) -> f64 {
        match self {
            ReverseVariance::FixedBeta => s.sigma2(t),
            ReverseVariance::FixedBetaTilde => {
                if t == 1 {
                    s.sigma2(1)
                } else {
                    s.beta_tilde(t)
                }
            }
        }
    }
}

/// Per-term decomposition of the variational bound for one data point.
#[derive(Debug, Clone)]
pub struct VlbTerms {
    /// `KL(q(x_T | x0) || N(0, I))`, in closed form.
    pub l_terminal: f64,
    /// One entry per `t = 1..=T`: for `t >= 2` the Gaussian KL between the
    /// forward posterior and the reverse transition (Monte Carlo over
    /// `x_t`); at `t = 1` the expected negative log-density of the datum
    /// under the final transition.
    pub terms: Vec<(usize, f64)>,
}

impl VlbTerms {
    pub fn total(&self) -> f64 {
        self.l_terminal + self.terms.iter().map(|(_, v)| v).sum::<f64>()
    }
}

/// Estimates every term of the variational bound for one point, drawing
/// `n_mc` states per timestep; all Gaussian KLs are analytic.
pub fn vlb_terms(
    s: &Schedule,
    pred: &dyn Predictor,
    x0: &[f64],
    rv: ReverseVariance,
    rng: &mut Rng,
    n_mc: usize,
) -> Result<VlbTerms> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("need at least one draw per term".into()));
    }
    let d = x0.len();
    let t_count = s.t_count();

    let abar_t = s.alpha_bar(t_count);
    let x0_sq: f64 = x0.iter().map(|v| v * v).sum();
    let var_t = 1.0 - abar_t;
    let l_terminal = 0.5 * (d as f64 * (var_t - 1.0 - var_t.ln()) + abar_t * x0_sq);

    let mut terms = Vec::with_capacity(t_count);
    for t in 1..=t_count {
        let sigma2 = rv.value(s, t);
        let mut acc = 0.0;
        // batch the Monte Carlo draws at this timestep
        let mut rows = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            rows.push(q_sample(s, x0, t, &rng.normal_vec(d))?.x_t);
        }
        let x_t = Tensor::from_rows(&rows)?;
        let out = pred.predict(&x_t, &vec![t; n_mc])?;
        for i in 0..n_mc {
            let mu_theta = prediction_to_mu(s, pred.parameterization(), x_t.row(i), out.row(i), t)?;
            if t == 1 {
                // expected negative log-density of x0 under the final
                // reverse transition
                let dist: f64 = x0
                    .iter()
                    .zip(&mu_theta)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                acc += 0.5
                    * (d as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + dist / sigma2);
            } else {
                let (mu_tilde, var_tilde) = q_posterior(s, x_t.row(i), x0, t)?;
                let dist: f64 = mu_tilde
                    .iter()
                    .zip(&mu_theta)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                let ratio = var_tilde / sigma2;
                acc += 0.5 * (d as f64 * (ratio - 1.0 - ratio.ln()) + dist / sigma2);
            }
        }
        terms.push((t, acc / n_mc as f64));
    }
    Ok(VlbTerms { l_terminal, terms })
}

fn prediction_to_mu(
    s: &Schedule,
    p: Parameterization,
    x_t: &[f64],
    pred: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    match p {
        Parameterization::Mean => Ok(pred.to_vec()),
        Parameterization::Image => x0_to_mu(s, x_t, pred, t),
        Parameterization::Noise => crate::process::eps_to_mu(s, x_t, pred, t),
    }
}
