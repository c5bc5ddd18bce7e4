//! Ancestral and deterministic reverse-process sampling, DDIM inversion,
//! and trace recording.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{DenoiserNet, ReprEncoder};
use crate::process::{eps_to_mu, eps_to_x0, mu_to_eps, mu_to_x0, x0_to_eps, x0_to_mu};
use crate::rng::Rng;
use crate::schedule::{Parameterization, Schedule};

/// A reverse-process estimator: predicts noise, image, or mean for a batch
/// of states at per-row timesteps. Implemented by network wrappers and by
/// closed-form oracles in tests.
pub trait Predictor {
    fn predict(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor>;
    fn parameterization(&self) -> Parameterization;
}

/// Wraps a closure as a [`Predictor`].
pub struct FnPredictor<F>
where
    F: Fn(&Tensor, &[usize]) -> Tensor,
{
    f: F,
    parameterization: Parameterization,
}

impl<F> FnPredictor<F>
where
    F: Fn(&Tensor, &[usize]) -> Tensor,
{
    pub fn new(parameterization: Parameterization, f: F) -> Self {
        FnPredictor {
            f,
            parameterization,
        }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Tensor, &[usize]) -> Tensor,
{
    fn predict(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor> {
        Ok((self.f)(x_t, ts))
    }

    fn parameterization(&self) -> Parameterization {
        self.parameterization
    }
}

/// Where the representation conditioning comes from during sampling.
pub enum ReprSource<'a> {
    None,
    /// One `[n, r]` representation, held constant across the trajectory.
    Fixed(&'a Tensor),
    /// Timestep-conditional encoding of a source point, recomputed at every
    /// step (the reconstruction mode of the timestep-conditional model).
    PerStep {
        encoder: &'a ReprEncoder,
        z0: &'a Tensor,
    },
    /// A fresh prior draw at every step (unconditional sampling with a
    /// timestep-conditional model).
    PriorPerStep {
        dim: usize,
        rng: std::cell::RefCell<Rng>,
    },
}

/// A denoiser network plus everything needed to query it during sampling.
pub struct NetPredictor<'a> {
    pub net: &'a DenoiserNet,
    pub t_count: usize,
    pub parameterization: Parameterization,
    pub repr: ReprSource<'a>,
    pub classes: Option<Vec<usize>>,
}

impl<'a> NetPredictor<'a> {
    pub fn unconditional(
        net: &'a DenoiserNet,
        s: &Schedule,
        parameterization: Parameterization,
    ) -> Self {
        NetPredictor {
            net,
            t_count: s.t_count(),
            parameterization,
            repr: ReprSource::None,
            classes: None,
        }
    }

    pub fn with_repr(mut self, repr: ReprSource<'a>) -> Self {
        self.repr = repr;
        self
    }

    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.classes = Some(classes);
        self
    }
}

impl Predictor for NetPredictor<'_> {
    fn predict(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let repr_tensor;
        let repr = match &self.repr {
            ReprSource::None => None,
            ReprSource::Fixed(r) => Some(*r),
            ReprSource::PerStep { encoder, z0 } => {
                repr_tensor = encoder.encode_mode(z0, Some(ts), self.t_count, self.classes.as_deref())?;
                Some(&repr_tensor)
            }
            ReprSource::PriorPerStep { dim, rng } => {
                let n = x_t.shape()[0];
                repr_tensor = Tensor::new(vec![n, *dim], rng.borrow_mut().normal_vec(n * dim))?;
                Some(&repr_tensor)
            }
        };
        self.net
            .predict(x_t, ts, self.t_count, repr, self.classes.as_deref())
    }

    fn parameterization(&self) -> Parameterization {
        self.parameterization
    }
}

/// Which sampler a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ancestral,
    Ddim,
}

/// Step subsequence and sampler choice for a reverse-process run.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Strictly increasing timesteps ending at `T`. The reverse run visits
    /// them from the back; the step to `t = 0` injects no noise.
    pub steps: Vec<usize>,
}

impl SamplerConfig {
    /// Every timestep `1..=T`.
    pub fn full(kind: SamplerKind, t_count: usize) -> Self {
        SamplerConfig {
            kind,
            steps: (1..=t_count).collect(),
        }
    }

    /// `n_steps` uniformly strided timesteps ending at `T` (deterministic
    /// sampling only).
    pub fn strided(kind: SamplerKind, t_count: usize, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > t_count {
            return Err(Error::InvalidArgument(format!(
                "need 1..=T strided steps, got {n_steps} of {t_count}"
            )));
        }
        let mut steps: Vec<usize> = (1..=n_steps)
            .map(|i| (i * t_count + n_steps - 1) / n_steps)
            .collect();
        steps.dedup();
        debug_assert_eq!(*steps.last().unwrap(), t_count);
        Ok(SamplerConfig { kind, steps })
    }

    fn validate(&self, s: &Schedule) -> Result<()> {
        if self.steps.is_empty()
            || self.steps.windows(2).any(|w| w[0] >= w[1])
            || *self.steps.last().unwrap() != s.t_count()
            || self.steps[0] == 0
        {
            return Err(Error::InvalidArgument(format!(
                "sampler steps must be strictly increasing in 1..=T and end at T, got {:?}",
                self.steps
            )));
        }
        if self.kind == SamplerKind::Ancestral && self.steps.len() != s.t_count() {
            return Err(Error::InvalidArgument(
                "ancestral sampling visits every timestep; use the ddim sampler for strides"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Per-step record of a reverse-process run for one chain.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    /// Strictly decreasing in `t`; the last entry has `t = 0` and holds the
    /// final sample in both fields.
    pub steps: Vec<TracePoint>,
}

#[derive(Debug, Clone)]
pub struct TracePoint {
    pub t: usize,
    pub x_t: Vec<f64>,
    /// The clean-datum estimate implied by the prediction at this state.
    pub x0_hat: Vec<f64>,
}

impl SampleTrace {
    pub fn final_sample(&self) -> &[f64] {
        &self.steps.last().expect("trace never empty").x_t
    }

    /// CSV rows `step_index,t,x_t...,x0_hat...` at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.steps.iter().enumerate() {
            out.push_str(&format!("{},{}", i, p.t));
            for v in &p.x_t {
                out.push_str(&format!(",{v}"));
            }
            for v in &p.x0_hat {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn prediction_to_x0(
    s: &Schedule,
    p: Parameterization,
    x_t: &[f64],
    pred: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    match p {
        Parameterization::Image => Ok(pred.to_vec()),
        Parameterization::Noise => eps_to_x0(s, x_t, pred, t),
        Parameterization::Mean => mu_to_x0(s, x_t, pred, t),
    }
}

fn prediction_to_eps(
    s: &Schedule,
    p: Parameterization,
    x_t: &[f64],
    pred: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    match p {
        Parameterization::Noise => Ok(pred.to_vec()),
        Parameterization::Image => x0_to_eps(s, x_t, pred, t),
        Parameterization::Mean => mu_to_eps(s, x_t, pred, t),
    }
}

/// One ancestral reverse transition on a batch: the reverse mean implied by
/// the prediction plus `sigma_t z`. The caller supplies `z` and must pass
/// zeros at `t = 1`.
pub fn ancestral_step(
    s: &Schedule,
    pred: &dyn Predictor,
    x_t: &Tensor,
    t: usize,
    z: &Tensor,
) -> Result<Tensor> {
    s.check_t(t)?;
    let n = x_t.shape()[0];
    let ts = vec![t; n];
    let out = pred.predict(x_t, &ts)?;
    let sigma = s.sigma2(t).sqrt();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (xrow, prow, zrow) = (x_t.row(i), out.row(i), z.row(i));
        let mean = match pred.parameterization() {
            Parameterization::Noise => eps_to_mu(s, xrow, prow, t)?,
            Parameterization::Image => x0_to_mu(s, xrow, prow, t)?,
            Parameterization::Mean => prow.to_vec(),
        };
        rows.push(
            mean.iter()
                .zip(zrow)
                .map(|(&m, &zv)| m + sigma * zv)
                .collect::<Vec<f64>>(),
        );
    }
    Tensor::from_rows(&rows)
}

/// One deterministic reverse step from `t` to `t_prev < t`:
/// re-noises the implied clean datum to the target signal level.
pub fn ddim_step(
    s: &Schedule,
    pred: &dyn Predictor,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
) -> Result<Tensor> {
    s.check_t(t)?;
    if t_prev > t {
        return Err(Error::InvalidArgument(format!(
            "ddim step must not ascend: t={t}, t_prev={t_prev}"
        )));
    }
    let n = x_t.shape()[0];
    let out = pred.predict(x_t, &vec![t; n])?;
    let signal_prev = s.alpha_bar(t_prev).sqrt();
    let noise_prev = (1.0 - s.alpha_bar(t_prev)).sqrt();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let eps = prediction_to_eps(s, pred.parameterization(), x_t.row(i), out.row(i), t)?;
        let x0 = eps_to_x0(s, x_t.row(i), &eps, t)?;
        rows.push(
            x0.iter()
                .zip(&eps)
                .map(|(&x, &e)| signal_prev * x + noise_prev * e)
                .collect::<Vec<f64>>(),
        );
    }
    Tensor::from_rows(&rows)
}

/// Runs the deterministic recursion with ascending timesteps, mapping clean
/// data onto terminal noise. `steps` follows [`SamplerConfig`] conventions
/// (strictly increasing, ending at `T`).
pub fn ddim_invert(
    s: &Schedule,
    pred: &dyn Predictor,
    x0: &Tensor,
    steps: &[usize],
) -> Result<Tensor> {
    SamplerConfig {
        kind: SamplerKind::Ddim,
        steps: steps.to_vec(),
    }
    .validate(s)?;
    let n = x0.shape()[0];
    let mut x = x0.clone();
    let mut t_src = 0usize;
    for &t_dst in steps {
        // the algebra uses the true source level; the net is queried at
        // t >= 1 since t = 0 is outside its domain
        let t_eval = t_src.max(1);
        let out = pred.predict(&x, &vec![t_eval; n])?;
        let signal_dst = s.alpha_bar(t_dst).sqrt();
        let noise_dst = (1.0 - s.alpha_bar(t_dst)).sqrt();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let (x0_hat, eps_hat) = decompose_at(s, pred.parameterization(), x.row(i), out.row(i), t_src, t_eval)?;
            rows.push(
                x0_hat
                    .iter()
                    .zip(&eps_hat)
                    .map(|(&xv, &ev)| signal_dst * xv + noise_dst * ev)
                    .collect::<Vec<f64>>(),
            );
        }
        x = Tensor::from_rows(&rows)?;
        t_src = t_dst;
    }
    Ok(x)
}

/// Splits a state into its implied `(x0, eps)` pair, using the source
/// signal level `t_src` (with `alpha_bar(0) = 1`) for the algebra while the
/// prediction was made at `t_eval`.
fn decompose_at(
    s: &Schedule,
    p: Parameterization,
    x: &[f64],
    pred: &[f64],
    t_src: usize,
    t_eval: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eps = prediction_to_eps(s, p, x, pred, t_eval)?;
    if t_src == 0 {
        // clean source: the state itself is x0
        return Ok((x.to_vec(), eps));
    }
    let signal = s.alpha_bar(t_src).sqrt();
    let noise = (1.0 - s.alpha_bar(t_src)).sqrt();
    let x0 = x
        .iter()
        .zip(&eps)
        .map(|(&xv, &ev)| (xv - noise * ev) / signal)
        .collect();
    Ok((x0, eps))
}

/// Output of a reverse-process run over a batch of chains.
pub struct SampleRun {
    /// `[n, d]` final samples.
    pub finals: Tensor,
    /// One trace per chain when recording was requested.
    pub traces: Option<Vec<SampleTrace>>,
}

/// Runs `n` reverse chains from seeded terminal noise.
///
/// A fixed representation is held constant across the whole trajectory (the
/// recorder asserts this); a per-step source recomputes it at each visited
/// timestep. With `record` the trace stores `x_t` and the implied clean
/// estimate at every step, ending with the final sample at `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn sample_loop(
    s: &Schedule,
    pred: &dyn Predictor,
    cfg: &SamplerConfig,
    n: usize,
    dim: usize,
    rng: &mut Rng,
    record: bool,
) -> Result<SampleRun> {
    cfg.validate(s)?;
    let x_init = Tensor::new(vec![n, dim], rng.normal_vec(n * dim))?;
    sample_loop_from(s, pred, cfg, x_init, rng, record)
}

/// As [`sample_loop`] but starting from caller-supplied terminal states.
pub fn sample_loop_from(
    s: &Schedule,
    pred: &dyn Predictor,
    cfg: &SamplerConfig,
    x_init: Tensor,
    rng: &mut Rng,
    record: bool,
) -> Result<SampleRun> {
    cfg.validate(s)?;
    let n = x_init.shape()[0];
    let dim = x_init.shape()[1];
    let mut traces: Option<Vec<SampleTrace>> =
        record.then(|| (0..n).map(|_| SampleTrace { steps: Vec::new() }).collect());

    let mut x = x_init;
    let record_state = |x: &Tensor, t: usize, traces: &mut Option<Vec<SampleTrace>>| -> Result<()> {
        if let Some(traces) = traces {
            let ts = vec![t.max(1); n];
            let out = pred.predict(x, &ts)?;
            for (i, trace) in traces.iter_mut().enumerate() {
                let x0_hat = if t == 0 {
                    x.row(i).to_vec()
                } else {
                    prediction_to_x0(s, pred.parameterization(), x.row(i), out.row(i), t)?
                };
                trace.steps.push(TracePoint {
                    t,
                    x_t: x.row(i).to_vec(),
                    x0_hat,
                });
            }
        }
        Ok(())
    };

    let mut rev = cfg.steps.clone();
    rev.reverse();
    for (j, &t) in rev.iter().enumerate() {
        record_state(&x, t, &mut traces)?;
        let t_prev = rev.get(j + 1).copied().unwrap_or(0);
        x = match cfg.kind {
            SamplerKind::Ancestral => {
                // no noise on the final transition
                let z = if t == 1 {
                    Tensor::zeros(vec![n, dim])
                } else {
                    Tensor::new(vec![n, dim], rng.normal_vec(n * dim))?
                };
                ancestral_step(s, pred, &x, t, &z)?
            }
            SamplerKind::Ddim => ddim_step(s, pred, &x, t, t_prev)?,
        };
    }
    record_state(&x, 0, &mut traces)?;

    if let Some(traces) = &traces {
        for trace in traces {
            debug_assert!(trace.steps.windows(2).all(|w| w[0].t > w[1].t));
            debug_assert_eq!(trace.steps.last().unwrap().t, 0);
        }
    }
    Ok(SampleRun { finals: x, traces })
}
