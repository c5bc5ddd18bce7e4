//! Gaussian posterior encoder for the representation.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::embedding::timestep_embedding_rows;
use super::mlp::{Activation, Linear, Mlp};
use super::Binding;

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    pub timestep_conditional: bool,
    /// Number of classes when the encoder also sees the label.
    pub class_conditional: Option<usize>,
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn new(data_dim: usize, repr_dim: usize) -> Self {
        EncoderConfig {
            data_dim,
            hidden: vec![64, 64],
            repr_dim,
            timestep_conditional: false,
            class_conditional: None,
            embed_dim: 32,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn timestep_conditional(mut self) -> Self {
        self.timestep_conditional = true;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.class_conditional = Some(num_classes);
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    fn has_context(&self) -> bool {
        self.timestep_conditional || self.class_conditional.is_some()
    }

    fn input_dim(&self) -> usize {
        self.data_dim + if self.has_context() { self.embed_dim } else { 0 }
    }
}

/// Encoder with two heads `(mu, logvar)` over a shared trunk, defining the
/// Gaussian posterior `N(mu, exp(logvar) I)` of the representation.
///
/// The log-variance head starts at zero (unit posterior variance) while the
/// mean head gets a standard init so gradient reaches the trunk from the
/// first step. Timestep and class conditioning enter through an embedding
/// slot concatenated to the input.
#[derive(Debug, Clone)]
pub struct ReprEncoder {
    pub config: EncoderConfig,
    pub(crate) trunk: Mlp,
    pub(crate) mu_head: Linear,
    pub(crate) logvar_head: Linear,
    class_embed: Option<Tensor>,
}

impl ReprEncoder {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Self {
        let mut dims = vec![config.input_dim()];
        dims.extend_from_slice(&config.hidden);
        let trunk = Mlp::new(&dims, Activation::Silu, 0.0, false, rng);
        let width = *config.hidden.last().expect("encoder needs a hidden layer");
        let mu_head = Linear::new(width, config.repr_dim, rng);
        let logvar_head = Linear::zeros(width, config.repr_dim);
        let class_embed = config.class_conditional.map(|n| {
            let scale = (1.0 / config.embed_dim as f64).sqrt();
            Tensor::new(
                vec![n, config.embed_dim],
                (0..n * config.embed_dim).map(|_| scale * rng.normal()).collect(),
            )
            .unwrap()
        });
        ReprEncoder {
            config,
            trunk,
            mu_head,
            logvar_head,
            class_embed,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.extend(self.mu_head.params());
        p.extend(self.logvar_head.params());
        if let Some(e) = &self.class_embed {
            p.push(e);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.mu_head.params_mut());
        p.extend(self.logvar_head.params_mut());
        if let Some(e) = &mut self.class_embed {
            p.push(e);
        }
        p
    }

    fn check_conditioning(&self, ts: Option<&[usize]>, classes: Option<&[usize]>) -> Result<()> {
        if self.config.timestep_conditional != ts.is_some() {
            return Err(Error::ConditioningMismatch {
                expected: if self.config.timestep_conditional {
                    "timesteps"
                } else {
                    "no timesteps"
                },
                given: if ts.is_some() { "timesteps" } else { "no timesteps" },
            });
        }
        if self.config.class_conditional.is_some() != classes.is_some() {
            return Err(Error::ConditioningMismatch {
                expected: if self.config.class_conditional.is_some() {
                    "class labels"
                } else {
                    "no class labels"
                },
                given: if classes.is_some() { "class labels" } else { "no class labels" },
            });
        }
        Ok(())
    }

    /// Tape forward over a `[n, data_dim]` batch, returning the two
    /// `[n, repr_dim]` posterior heads.
    pub fn forward(
        &self,
        tape: &mut Tape,
        z0: ValueId,
        ts: Option<&[usize]>,
        t_count: usize,
        classes: Option<&[usize]>,
        binding: &mut Binding,
    ) -> Result<(ValueId, ValueId)> {
        self.check_conditioning(ts, classes)?;
        let n = tape.shape(z0)[0];
        let mut input = z0;
        // the table is bound after the heads to match the params() order
        let mut class_table = None;
        if self.config.has_context() {
            let e = self.config.embed_dim;
            let base = match ts {
                Some(ts) => timestep_embedding_rows(ts, e, t_count)?,
                None => vec![0.0; n * e],
            };
            let mut context = tape.input_from(vec![n, e], base)?;
            if let (Some(table), Some(cls)) = (&self.class_embed, classes) {
                let table_id = tape.input(table);
                class_table = Some(table_id);
                let rows = tape.gather_rows(table_id, cls)?;
                context = tape.add(context, rows)?;
            }
            input = tape.concat_last(&[z0, context])?;
        }
        let h = self.trunk.forward(tape, input, None, binding)?;
        // the trunk output feeds two linear heads, so it needs its own
        // nonlinearity
        let h = tape.silu(h);
        let mu = self.mu_head.forward(tape, h, binding)?;
        let logvar = self.logvar_head.forward(tape, h, binding)?;
        if let Some(id) = class_table {
            binding.push(id);
        }
        Ok((mu, logvar))
    }

    /// Evaluation-only posterior parameters on plain values.
    pub fn encode(
        &self,
        z0: &Tensor,
        ts: Option<&[usize]>,
        t_count: usize,
        classes: Option<&[usize]>,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let z = tape.input(z0);
        let mut binding = Binding::default();
        let (mu, logvar) = self.forward(&mut tape, z, ts, t_count, classes, &mut binding)?;
        Ok((
            Tensor::new(tape.shape(mu).to_vec(), tape.values(mu).to_vec())?,
            Tensor::new(tape.shape(logvar).to_vec(), tape.values(logvar).to_vec())?,
        ))
    }

    /// Posterior mode `mu(z0)`: the zero-noise representation used for
    /// reconstruction.
    pub fn encode_mode(
        &self,
        z0: &Tensor,
        ts: Option<&[usize]>,
        t_count: usize,
        classes: Option<&[usize]>,
    ) -> Result<Tensor> {
        Ok(self.encode(z0, ts, t_count, classes)?.0)
    }
}

/// `r = mu + exp(logvar / 2) * noise`; gradients flow into both heads.
pub fn reparameterize(
    tape: &mut Tape,
    mu: ValueId,
    logvar: ValueId,
    noise: &Tensor,
) -> Result<ValueId> {
    if tape.shape(mu) != noise.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            lhs: tape.shape(mu).to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let n = tape.input(noise);
    let scaled = tape.mul(sigma, n)?;
    tape.add(mu, scaled)
}
