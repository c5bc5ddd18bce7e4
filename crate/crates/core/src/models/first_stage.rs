//! Toy first-stage autoencoder mapping data space to a diffusion latent
//! space, with post-training latent rescaling to unit variance.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::rng::Rng;
use crate::trainer::optim::{AdamConfig, AdamState, EmaState};
use crate::trainer::welford::Welford;

use super::mlp::{Activation, Mlp};
use super::Binding;

#[derive(Debug, Clone)]
pub struct FirstStageConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl FirstStageConfig {
    pub fn new(data_dim: usize, latent_dim: usize) -> Self {
        FirstStageConfig {
            data_dim,
            latent_dim,
            hidden: vec![32, 32],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FirstStageTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    /// Batches used to estimate the latent rescale factor after training.
    pub rescale_batches: usize,
}

impl Default for FirstStageTrainConfig {
    fn default() -> Self {
        FirstStageTrainConfig {
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            ema_decay: 0.999,
            rescale_batches: 100,
        }
    }
}

/// Data-to-latent autoencoder, or the identity passthrough used when the
/// diffusion model runs directly in data space.
#[derive(Debug, Clone)]
pub enum FirstStage {
    /// `z = x` exactly; no parameters, no rescaling.
    Identity,
    Net(FirstStageNet),
}

impl FirstStage {
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            FirstStage::Identity => Ok(x.clone()),
            FirstStage::Net(net) => net.encode(x),
        }
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            FirstStage::Identity => Ok(z.clone()),
            FirstStage::Net(net) => net.decode(z),
        }
    }

    pub fn latent_dim(&self, data_dim: usize) -> usize {
        match self {
            FirstStage::Identity => data_dim,
            FirstStage::Net(net) => net.config.latent_dim,
        }
    }
}

/// Dense encoder/decoder pair with a scalar latent rescale factor
/// estimated after training.
#[derive(Debug, Clone)]
pub struct FirstStageNet {
    pub config: FirstStageConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Estimated latent standard deviation; encodes divide by it so the
    /// diffusion model sees unit-variance latents.
    pub rescale: Option<f64>,
}

impl FirstStageNet {
    pub fn new(config: FirstStageConfig, rng: &mut Rng) -> Self {
        let mut enc_dims = vec![config.data_dim];
        enc_dims.extend_from_slice(&config.hidden);
        enc_dims.push(config.latent_dim);
        let mut dec_dims = vec![config.latent_dim];
        dec_dims.extend(config.hidden.iter().rev());
        dec_dims.push(config.data_dim);
        FirstStageNet {
            encoder: Mlp::new(&enc_dims, Activation::Silu, 0.0, false, rng),
            decoder: Mlp::new(&dec_dims, Activation::Silu, 0.0, false, rng),
            config,
            rescale: None,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    fn run(&self, mlp: &Mlp, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(input);
        let mut binding = Binding::default();
        let out = mlp.forward(&mut tape, x, None, &mut binding)?;
        Tensor::new(tape.shape(out).to_vec(), tape.values(out).to_vec())
    }

    /// Encodes a `[n, data_dim]` batch; applies the rescale when set.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = self.run(&self.encoder, x)?;
        if let Some(s) = self.rescale {
            for v in z.values_mut() {
                *v /= s;
            }
        }
        Ok(z)
    }

    /// Decodes a `[n, latent_dim]` batch of (rescaled) latents.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let input = match self.rescale {
            Some(s) => {
                let mut raw = z.clone();
                for v in raw.values_mut() {
                    *v *= s;
                }
                raw
            }
            None => z.clone(),
        };
        self.run(&self.decoder, &input)
    }

    /// Trains on plain reconstruction MSE, then freezes the latent rescale
    /// factor from a streaming variance estimate over the first
    /// `rescale_batches` batches of encoded latents.
    pub fn train(
        &mut self,
        data: &Tensor,
        cfg: &FirstStageTrainConfig,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let n = data.shape()[0];
        let d = self.config.data_dim;
        let mut adam = AdamState::new(&self.params(), AdamConfig::default());
        let mut ema = EmaState::new(&self.params(), cfg.ema_decay);
        let mut losses = Vec::with_capacity(cfg.steps);

        for _ in 0..cfg.steps {
            let rows: Vec<Vec<f64>> = (0..cfg.batch_size)
                .map(|_| data.row(rng.uniform_int(0, n - 1)).to_vec())
                .collect();
            let batch = Tensor::from_rows(&rows)?;

            let mut tape = Tape::new();
            let x = tape.input(&batch);
            let mut binding = Binding::default();
            let z = self.encoder.forward(&mut tape, x, None, &mut binding)?;
            let xhat = self.decoder.forward(&mut tape, z, None, &mut binding)?;
            let diff = tape.sub(xhat, x)?;
            let sq = tape.square(diff);
            let total = tape.sum(sq);
            let loss = tape.scale(total, 1.0 / (cfg.batch_size * d) as f64);
            tape.backward(loss)?;
            losses.push(tape.item(loss));

            binding.accumulate_into(&tape, &mut self.params_mut());
            adam.step(&mut self.params_mut(), cfg.learning_rate);
            for p in self.params_mut() {
                p.zero_grad();
            }
            ema.update(&self.params());
        }
        ema.copy_into(&mut self.params_mut());

        // latent spread from the first batches of the (trained) encoder
        let mut welford = Welford::new();
        for _ in 0..cfg.rescale_batches {
            let rows: Vec<Vec<f64>> = (0..cfg.batch_size)
                .map(|_| data.row(rng.uniform_int(0, n - 1)).to_vec())
                .collect();
            let z = self.run(&self.encoder, &Tensor::from_rows(&rows)?)?;
            for &v in z.values() {
                welford.push(v);
            }
        }
        let (_, std) = welford.finalize()?;
        self.rescale = Some(std);
        Ok(losses)
    }
}
