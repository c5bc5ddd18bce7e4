//! The optimization loop.

use crate::bundle::{ModelBundle, TrainState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objectives::{dm_loss, lrdm_loss, lvae_loss, t_lrdm_loss, LossOptions, Objective};
use crate::rng::Rng;
use crate::trainer::optim::{AdamConfig, AdamState, EmaState};
use crate::trainer::TrainMode;

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_diffusion: f64,
    pub loss_kl: f64,
    pub t_window: (usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
}

impl TrainReport {
    /// CSV with the header
    /// `step,loss_total,loss_diffusion,loss_kl,t_window_lo,t_window_hi`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,loss_total,loss_diffusion,loss_kl,t_window_lo,t_window_hi\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.loss_total, r.loss_diffusion, r.loss_kl, r.t_window.0, r.t_window.1
            ));
        }
        out
    }
}

/// Trains the bundle on the dataset until `config.steps`, resuming from the
/// bundle's train state when present.
///
/// Per step: draw a batch (uniform with replacement), build the mode's
/// objective on a fresh tape, backpropagate, take one adaptive-moment step
/// over denoiser-then-encoder parameters, and fold the denoiser into the
/// EMA shadow. Every step is logged. A non-finite loss aborts with the
/// step's diagnostics. `on_checkpoint` fires every `checkpoint_every` steps
/// and after the final one.
pub fn train(
    bundle: &mut ModelBundle,
    dataset: &Dataset,
    checkpoint_every: Option<usize>,
    mut on_checkpoint: Option<&mut dyn FnMut(usize, &ModelBundle) -> Result<()>>,
) -> Result<TrainReport> {
    let config = bundle.config.clone();
    config.validate()?;
    if config.mode.uses_encoder() && bundle.encoder.is_none() {
        return Err(Error::ConditioningMismatch {
            expected: "an encoder in the bundle for representation training",
            given: "no encoder",
        });
    }

    // encode the dataset once; the first stage is frozen during
    // diffusion training
    let z0_all = bundle.first_stage.encode(dataset.points())?;
    let n_data = dataset.len();

    let mut trainable: Vec<usize> = Vec::new(); // per-param lengths, for sanity
    {
        let mut params = bundle.denoiser.params();
        if let Some(enc) = &bundle.encoder {
            if config.mode.uses_encoder() {
                params.extend(enc.params());
            }
        }
        trainable.extend(params.iter().map(|p| p.len()));
    }

    let (mut rng, mut adam, start_step) = match bundle.train_state.take() {
        Some(state) => (Rng::restore(&state.rng), state.adam, state.step),
        None => {
            let mut params = bundle.denoiser.params();
            if config.mode.uses_encoder() {
                params.extend(bundle.encoder.as_ref().unwrap().params());
            }
            (
                Rng::from_seed(config.seed),
                AdamState::new(&params, AdamConfig::default()),
                0,
            )
        }
    };
    if bundle.ema.is_none() {
        bundle.ema = Some(EmaState::new(&bundle.denoiser.params(), config.ema_decay));
    }

    let labels_all = dataset.labels();
    let wants_labels = bundle.denoiser.config.conditioning.num_classes().is_some()
        || bundle
            .encoder
            .as_ref()
            .is_some_and(|e| e.config.class_conditional.is_some());
    if wants_labels && labels_all.is_none() {
        return Err(Error::ConditioningMismatch {
            expected: "a labeled dataset for class-conditional training",
            given: "an unlabeled dataset",
        });
    }

    let mut report = TrainReport::default();
    for step in start_step..config.steps {
        let window = config
            .curriculum
            .map(|c| c.window(step, bundle.schedule.t_count()))
            .unwrap_or((1, bundle.schedule.t_count()));

        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.uniform_int(0, n_data - 1))
            .collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| z0_all.row(i).to_vec()).collect();
        let x0 = crate::autodiff::Tensor::from_rows(&rows)?;
        let batch_labels: Option<Vec<usize>> =
            labels_all.map(|l| idx.iter().map(|&i| l[i]).collect());
        let labels = if wants_labels {
            batch_labels.as_deref()
        } else {
            None
        };

        let opts = LossOptions {
            draws: None,
            t_window: Some(window),
            train_dropout: true,
        };
        let mut obj: Objective = match config.mode {
            TrainMode::Dm => dm_loss(
                &bundle.schedule,
                &bundle.denoiser,
                &x0,
                labels,
                config.parameterization,
                config.weighting,
                &mut rng,
                &opts,
            )?,
            TrainMode::Lrdm => lrdm_loss(
                &bundle.schedule,
                &bundle.denoiser,
                bundle.encoder.as_ref().unwrap(),
                &x0,
                labels,
                config.lambda,
                &mut rng,
                &opts,
            )?,
            TrainMode::TLrdm => t_lrdm_loss(
                &bundle.schedule,
                &bundle.denoiser,
                bundle.encoder.as_ref().unwrap(),
                &x0,
                labels,
                config.lambda,
                &mut rng,
                &opts,
            )?,
            TrainMode::Lvae => lvae_loss(
                &bundle.schedule,
                &bundle.denoiser,
                bundle.encoder.as_ref().unwrap(),
                &x0,
                labels,
                config.lambda,
                &mut rng,
                &opts,
            )?,
        };
        let b = obj.breakdown;
        if !b.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                t: b.t,
                total: b.total,
                diffusion: b.diffusion,
                kl: b.kl,
            });
        }

        {
            let mut net_params = bundle.denoiser.params_mut();
            let mut enc_params = match (&mut bundle.encoder, config.mode.uses_encoder()) {
                (Some(enc), true) => enc.params_mut(),
                _ => Vec::new(),
            };
            obj.backprop(&mut net_params, &mut enc_params)?;

            let mut all: Vec<&mut crate::autodiff::Tensor> = net_params;
            all.extend(enc_params);
            adam.step(&mut all, config.learning_rate);
            for p in all {
                p.zero_grad();
            }
        }
        bundle
            .ema
            .as_mut()
            .unwrap()
            .update(&bundle.denoiser.params());

        report.rows.push(MetricsRow {
            step,
            loss_total: b.total,
            loss_diffusion: b.diffusion,
            loss_kl: b.kl,
            t_window: window,
        });

        let done = step + 1 == config.steps;
        let at_interval = checkpoint_every.is_some_and(|k| k > 0 && (step + 1) % k == 0);
        if done || at_interval {
            bundle.train_state = Some(TrainState {
                adam: adam.clone(),
                rng: rng.state(),
                step: step + 1,
            });
            if let Some(cb) = on_checkpoint.as_deref_mut() {
                cb(step + 1, bundle)?;
            }
        }
    }
    if bundle.train_state.is_none() {
        bundle.train_state = Some(TrainState {
            adam,
            rng: rng.state(),
            step: config.steps,
        });
    }
    let _ = trainable;
    Ok(report)
}
