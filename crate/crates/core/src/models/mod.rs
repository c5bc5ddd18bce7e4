//! Denoiser network, representation encoders, and the first-stage
//! autoencoder.

mod denoiser;
mod embedding;
mod encoder;
mod first_stage;
mod mlp;

pub use denoiser::{Conditioning, DenoiserConfig, DenoiserNet};
pub use embedding::{timestep_embedding, timestep_embedding_rows};
pub use encoder::{reparameterize, EncoderConfig, ReprEncoder};
pub use first_stage::{FirstStage, FirstStageConfig, FirstStageNet, FirstStageTrainConfig};
pub use mlp::{apply_dropout, Activation, Linear, Mlp};

use crate::autodiff::{Tape, Tensor, ValueId};

/// Tape handles of a network's parameters, in the same canonical order as
/// `params()` / `params_mut()`. A forward pass fills one of these; after
/// backward, the recorded gradients map straight back onto the parameters.
#[derive(Debug, Default, Clone)]
pub struct Binding {
    ids: Vec<ValueId>,
}

impl Binding {
    pub fn push(&mut self, id: ValueId) {
        self.ids.push(id);
    }

    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }

    /// Adds the tape gradients onto the bound parameters' gradients.
    pub fn accumulate_into(&self, tape: &Tape, params: &mut [&mut Tensor]) {
        assert_eq!(
            self.ids.len(),
            params.len(),
            "binding and parameter list diverged"
        );
        for (id, p) in self.ids.iter().zip(params.iter_mut()) {
            p.accumulate_grad(tape.grad(*id));
        }
    }
}
