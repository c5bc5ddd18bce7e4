//! Sinusoidal timestep embedding.

use crate::error::{Error, Result};

/// Sinusoidal positional embedding of a timestep.
///
/// Concatenates `sin(t * w_k)` and `cos(t * w_k)` over `dim/2` geometric
/// frequencies `w_k = 10000^(-2k/dim)`. Every entry lies in `[-1, 1]` and
/// `t = 0` maps to all-zero sines and all-one cosines.
pub fn timestep_embedding(t: usize, dim: usize, t_count: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    if t > t_count {
        return Err(Error::TimestepOutOfRange { t, t_count });
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let angles: Vec<f64> = (0..half)
        .map(|k| t as f64 * 10000f64.powf(-2.0 * k as f64 / dim as f64))
        .collect();
    out.extend(angles.iter().map(|a| a.sin()));
    out.extend(angles.iter().map(|a| a.cos()));
    Ok(out)
}

/// Embeddings for a batch of timesteps, flattened row-major.
pub fn timestep_embedding_rows(ts: &[usize], dim: usize, t_count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        out.extend(timestep_embedding(t, dim, t_count)?);
    }
    Ok(out)
}
