//! The dense denoiser network.
//!
//! A flattened stand-in for the usual convolutional denoiser: the noisy
//! input, the sinusoidal timestep embedding, and any representation
//! conditioning are concatenated at the input layer. Class conditioning is
//! a learned embedding added onto the timestep embedding.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::embedding::timestep_embedding_rows;
use super::mlp::{Activation, Mlp};
use super::Binding;

/// Which extra inputs the denoiser is wired for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    #[default]
    None,
    Repr {
        dim: usize,
    },
    Class {
        num_classes: usize,
    },
    ReprClass {
        dim: usize,
        num_classes: usize,
    },
}

impl Conditioning {
    pub fn repr_dim(&self) -> Option<usize> {
        match *self {
            Conditioning::Repr { dim } | Conditioning::ReprClass { dim, .. } => Some(dim),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match *self {
            Conditioning::Class { num_classes }
            | Conditioning::ReprClass { num_classes, .. } => Some(num_classes),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub conditioning: Conditioning,
    pub dropout: f64,
}

impl DenoiserConfig {
    pub fn new(data_dim: usize) -> Self {
        DenoiserConfig {
            data_dim,
            hidden: vec![128, 128, 128],
            embed_dim: 32,
            conditioning: Conditioning::None,
            dropout: 0.0,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_conditioning(mut self, c: Conditioning) -> Self {
        self.conditioning = c;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    /// Input width: data + timestep embedding + representation (if any).
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.embed_dim + self.conditioning.repr_dim().unwrap_or(0)
    }
}

/// Dense noise / image / mean predictor with timestep embedding and
/// optional conditioning inputs. Output dimension equals the data dimension
/// and the final layer starts at zero.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub config: DenoiserConfig,
    trunk: Mlp,
    class_embed: Option<Tensor>,
}

impl DenoiserNet {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Self {
        let mut dims = vec![config.input_dim()];
        dims.extend_from_slice(&config.hidden);
        dims.push(config.data_dim);
        let trunk = Mlp::new(&dims, Activation::Silu, config.dropout, true, rng);
        let class_embed = config.conditioning.num_classes().map(|n| {
            let scale = (1.0 / config.embed_dim as f64).sqrt();
            Tensor::new(
                vec![n, config.embed_dim],
                (0..n * config.embed_dim).map(|_| scale * rng.normal()).collect(),
            )
            .unwrap()
        });
        DenoiserNet {
            config,
            trunk,
            class_embed,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        if let Some(e) = &self.class_embed {
            p.push(e);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        if let Some(e) = &mut self.class_embed {
            p.push(e);
        }
        p
    }

    fn check_conditioning(
        &self,
        repr: Option<ValueId>,
        classes: Option<&[usize]>,
    ) -> Result<()> {
        let wants_repr = self.config.conditioning.repr_dim().is_some();
        if wants_repr != repr.is_some() {
            return Err(Error::ConditioningMismatch {
                expected: if wants_repr {
                    "a representation input"
                } else {
                    "no representation input"
                },
                given: if repr.is_some() {
                    "a representation input"
                } else {
                    "no representation input"
                },
            });
        }
        let wants_class = self.config.conditioning.num_classes().is_some();
        if wants_class != classes.is_some() {
            return Err(Error::ConditioningMismatch {
                expected: if wants_class { "class labels" } else { "no class labels" },
                given: if classes.is_some() { "class labels" } else { "no class labels" },
            });
        }
        Ok(())
    }

    /// Tape forward over a `[n, data_dim]` batch with per-row timesteps.
    ///
    /// `repr` must be a `[n, repr_dim]` tape value when the net is wired
    /// for representation conditioning; gradients flow through it.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_t: ValueId,
        ts: &[usize],
        t_count: usize,
        repr: Option<ValueId>,
        classes: Option<&[usize]>,
        train_rng: Option<&mut Rng>,
        binding: &mut Binding,
    ) -> Result<ValueId> {
        self.check_conditioning(repr, classes)?;
        let n = ts.len();
        let emb_values = timestep_embedding_rows(ts, self.config.embed_dim, t_count)?;
        let mut emb = tape.input_from(vec![n, self.config.embed_dim], emb_values)?;
        // the table is bound after the trunk to match the params() order
        let mut class_table = None;
        if let (Some(table), Some(cls)) = (&self.class_embed, classes) {
            let table_id = tape.input(table);
            class_table = Some(table_id);
            let rows = tape.gather_rows(table_id, cls)?;
            emb = tape.add(emb, rows)?;
        }
        let mut parts = vec![x_t, emb];
        if let Some(r) = repr {
            parts.push(r);
        }
        let input = tape.concat_last(&parts)?;
        let out = self.trunk.forward(tape, input, train_rng, binding)?;
        if let Some(id) = class_table {
            binding.push(id);
        }
        Ok(out)
    }

    /// Evaluation-only forward on plain values; builds a throwaway tape.
    pub fn predict(
        &self,
        x_t: &Tensor,
        ts: &[usize],
        t_count: usize,
        repr: Option<&Tensor>,
        classes: Option<&[usize]>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(x_t);
        let r = repr.map(|r| tape.input(r));
        let mut binding = Binding::default();
        let out = self.forward(&mut tape, x, ts, t_count, r, classes, None, &mut binding)?;
        Tensor::new(tape.shape(out).to_vec(), tape.values(out).to_vec())
    }
}
