//! Diagnostics and representation-space tools: distortion curves,
//! per-timestep KL, spherical interpolation, PCA grids, the reconstruction
//! pipeline, and two-sample distribution distances.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::bundle::ModelBundle;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ReprEncoder;
use crate::objectives::kl_standard_normal_value;
use crate::process::{eps_to_x0, mu_to_x0, q_sample};
use crate::rng::Rng;
use crate::samplers::{
    ddim_invert, sample_loop_from, NetPredictor, Predictor, ReprSource, SamplerConfig,
    SamplerKind,
};
use crate::schedule::{Parameterization, Schedule};

/// Per-timestep reconstruction error of the implied clean estimate.
#[derive(Debug, Clone)]
pub struct DistortionCurve {
    pub t_grid: Vec<usize>,
    /// `sqrt(mean ||z0 - z0_hat||^2)` in the diffusion (latent) space.
    pub latent_rmse: Vec<f64>,
    /// The same error decoded through the first stage, when one exists.
    pub data_rmse: Option<Vec<f64>>,
    pub samples_per_t: usize,
}

impl DistortionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(match &self.data_rmse {
            Some(_) => "t,latent_rmse,data_rmse\n",
            None => "t,latent_rmse\n",
        });
        for (i, &t) in self.t_grid.iter().enumerate() {
            match &self.data_rmse {
                Some(d) => out.push_str(&format!("{t},{},{}\n", self.latent_rmse[i], d[i])),
                None => out.push_str(&format!("{t},{}\n", self.latent_rmse[i])),
            }
        }
        out
    }
}

/// Distortion of a predictor over explicit latents (and optionally their
/// data-space originals for decoding through a first stage).
#[allow(clippy::too_many_arguments)]
pub fn distortion_curve_with(
    s: &Schedule,
    pred: &dyn Predictor,
    z0: &Tensor,
    decode_against: Option<(&crate::models::FirstStage, &Tensor)>,
    t_grid: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<DistortionCurve> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("need at least one noise draw".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let n = z0.shape()[0];
    let d = z0.shape()[1];
    let mut latent_rmse = Vec::with_capacity(t_grid.len());
    let mut data_rmse = decode_against.map(|_| Vec::with_capacity(t_grid.len()));

    for &t in t_grid {
        s.check_t(t)?;
        let mut latent_acc = 0.0;
        let mut data_acc = 0.0;
        for _ in 0..n_mc {
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                rows.push(q_sample(s, z0.row(i), t, &rng.normal_vec(d))?.x_t);
            }
            let x_t = Tensor::from_rows(&rows)?;
            let out = pred.predict(&x_t, &vec![t; n])?;
            let mut z0_hat_rows = Vec::with_capacity(n);
            for i in 0..n {
                let z0_hat = match pred.parameterization() {
                    Parameterization::Image => out.row(i).to_vec(),
                    Parameterization::Noise => eps_to_x0(s, x_t.row(i), out.row(i), t)?,
                    Parameterization::Mean => mu_to_x0(s, x_t.row(i), out.row(i), t)?,
                };
                latent_acc += z0
                    .row(i)
                    .iter()
                    .zip(&z0_hat)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>();
                z0_hat_rows.push(z0_hat);
            }
            if let Some((fs, x_data)) = decode_against {
                let decoded = fs.decode(&Tensor::from_rows(&z0_hat_rows)?)?;
                for i in 0..n {
                    data_acc += x_data
                        .row(i)
                        .iter()
                        .zip(decoded.row(i))
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
            }
        }
        latent_rmse.push((latent_acc / (n * n_mc) as f64).sqrt());
        if let Some(dr) = &mut data_rmse {
            dr.push((data_acc / (n * n_mc) as f64).sqrt());
        }
    }
    Ok(DistortionCurve {
        t_grid: t_grid.to_vec(),
        latent_rmse,
        data_rmse,
        samples_per_t: n * n_mc,
    })
}

/// Distortion curve of a trained bundle over a dataset. Representation
/// conditioning uses the posterior mode; noise predictions are inverted to
/// clean estimates before scoring.
pub fn distortion_curve(
    bundle: &ModelBundle,
    dataset: &Dataset,
    t_grid: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<DistortionCurve> {
    let net = bundle.eval_denoiser();
    let z0 = bundle.first_stage.encode(dataset.points())?;
    let labels = conditioning_labels(bundle, dataset)?;

    let repr_fixed;
    let repr = match &bundle.encoder {
        None => ReprSource::None,
        Some(enc) if enc.config.timestep_conditional => ReprSource::PerStep { encoder: enc, z0: &z0 },
        Some(enc) => {
            repr_fixed = enc.encode_mode(&z0, None, bundle.schedule.t_count(), labels.as_deref())?;
            ReprSource::Fixed(&repr_fixed)
        }
    };
    let mut pred = NetPredictor::unconditional(&net, &bundle.schedule, bundle.config.parameterization)
        .with_repr(repr);
    if let Some(l) = labels.clone() {
        pred = pred.with_classes(l);
    }

    let decode_against = match &bundle.first_stage {
        crate::models::FirstStage::Identity => None,
        fs @ crate::models::FirstStage::Net(_) => Some((fs, dataset.points())),
    };
    distortion_curve_with(&bundle.schedule, &pred, &z0, decode_against, t_grid, n_mc, seed)
}

fn conditioning_labels(bundle: &ModelBundle, dataset: &Dataset) -> Result<Option<Vec<usize>>> {
    let wants = bundle.denoiser.config.conditioning.num_classes().is_some()
        || bundle
            .encoder
            .as_ref()
            .is_some_and(|e| e.config.class_conditional.is_some());
    if !wants {
        return Ok(None);
    }
    dataset
        .labels()
        .map(|l| Some(l.to_vec()))
        .ok_or(Error::ConditioningMismatch {
            expected: "a labeled dataset for a class-conditional model",
            given: "an unlabeled dataset",
        })
}

/// Mean posterior-to-prior KL per timestep over an evaluation set.
#[derive(Debug, Clone)]
pub struct KlCurve {
    pub t_grid: Vec<usize>,
    /// Mean over the set of the dim-summed KL.
    pub mean_kl: Vec<f64>,
    /// `mean_kl` divided by the representation width.
    pub per_dim: Vec<f64>,
}

impl KlCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_kl,per_dim_kl\n");
        for (i, &t) in self.t_grid.iter().enumerate() {
            out.push_str(&format!("{t},{},{}\n", self.mean_kl[i], self.per_dim[i]));
        }
        out
    }
}

/// Per-timestep KL of a timestep-conditional encoder over latents.
pub fn kl_curve(
    enc: &ReprEncoder,
    z0: &Tensor,
    labels: Option<&[usize]>,
    t_grid: &[usize],
    t_count: usize,
) -> Result<KlCurve> {
    if !enc.config.timestep_conditional {
        return Err(Error::ConditioningMismatch {
            expected: "a timestep-conditional encoder",
            given: "a timestep-free encoder",
        });
    }
    let n = z0.shape()[0];
    let r = enc.config.repr_dim;
    let mut mean_kl = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let ts = vec![t; n];
        let (mu, logvar) = enc.encode(z0, Some(&ts), t_count, labels)?;
        let kl = (0..n)
            .map(|i| kl_standard_normal_value(mu.row(i), logvar.row(i)))
            .sum::<f64>()
            / n as f64;
        mean_kl.push(kl);
    }
    let per_dim = mean_kl.iter().map(|&k| k / r as f64).collect();
    Ok(KlCurve {
        t_grid: t_grid.to_vec(),
        mean_kl,
        per_dim,
    })
}

/// Spherical linear interpolation along the great arc between two vectors,
/// with a linear fallback when they are nearly parallel.
pub fn slerp(a: &[f64], b: &[f64], tau: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "slerp",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument(
            "slerp endpoints must be nonzero vectors".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let omega = (dot / (na * nb)).clamp(-1.0, 1.0).acos();
    if omega < 1e-6 {
        return Ok(a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (1.0 - tau) * x + tau * y)
            .collect());
    }
    let sin_omega = omega.sin();
    let ca = (((1.0 - tau) * omega).sin()) / sin_omega;
    let cb = ((tau * omega).sin()) / sin_omega;
    Ok(a.iter().zip(b).map(|(&x, &y)| ca * x + cb * y).collect())
}

/// How the reconstruction pipeline obtains terminal noise and decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    /// Deterministic: terminal noise from the inverse recursion, decoded
    /// with the deterministic sampler.
    DdimInverted,
    /// Terminal noise from the prior, decoded deterministically; the
    /// reconstruction then depends on the inputs only through the
    /// representation (the evaluation-metrics path).
    DdimPrior,
    /// Terminal noise from the prior with stochastic decoding.
    Ancestral,
}

/// Encode, condition, and decode a batch of points back through the
/// reverse process.
pub fn reconstruct(
    bundle: &ModelBundle,
    x: &Tensor,
    labels: Option<&[usize]>,
    mode: ReconMode,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = Rng::from_seed(seed);
    reconstruct_with_rng(bundle, x, labels, mode, &mut rng, false)
}

/// As [`reconstruct`] but drawing the representation from the posterior
/// instead of taking its mode.
fn reconstruct_with_rng(
    bundle: &ModelBundle,
    x: &Tensor,
    labels: Option<&[usize]>,
    mode: ReconMode,
    rng: &mut Rng,
    sample_repr: bool,
) -> Result<Tensor> {
    let s = &bundle.schedule;
    let net = bundle.eval_denoiser();
    let z0 = bundle.first_stage.encode(x)?;
    let (n, d) = (z0.shape()[0], z0.shape()[1]);

    let repr_owned;
    let repr = match &bundle.encoder {
        None => ReprSource::None,
        Some(enc) if enc.config.timestep_conditional => {
            ReprSource::PerStep { encoder: enc, z0: &z0 }
        }
        Some(enc) => {
            let (mu, logvar) = enc.encode(&z0, None, s.t_count(), labels)?;
            repr_owned = if sample_repr {
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    rows.push(
                        mu.row(i)
                            .iter()
                            .zip(logvar.row(i))
                            .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.normal())
                            .collect::<Vec<f64>>(),
                    );
                }
                Tensor::from_rows(&rows)?
            } else {
                mu
            };
            ReprSource::Fixed(&repr_owned)
        }
    };
    let mut pred =
        NetPredictor::unconditional(&net, s, bundle.config.parameterization).with_repr(repr);
    if let Some(l) = labels {
        if bundle.denoiser.config.conditioning.num_classes().is_some() {
            pred = pred.with_classes(l.to_vec());
        }
    }

    let steps: Vec<usize> = (1..=s.t_count()).collect();
    let (kind, x_terminal) = match mode {
        ReconMode::DdimInverted => (SamplerKind::Ddim, ddim_invert(s, &pred, &z0, &steps)?),
        ReconMode::DdimPrior => (
            SamplerKind::Ddim,
            Tensor::new(vec![n, d], rng.normal_vec(n * d))?,
        ),
        ReconMode::Ancestral => (
            SamplerKind::Ancestral,
            Tensor::new(vec![n, d], rng.normal_vec(n * d))?,
        ),
    };
    let cfg = SamplerConfig { kind, steps };
    let run = sample_loop_from(s, &pred, &cfg, x_terminal, rng, false)?;
    bundle.first_stage.decode(&run.finals)
}

/// Reconstruction quality metrics in data space: squared error, its root,
/// and the spread of reconstructions under re-sampled representations.
#[derive(Debug, Clone, Copy)]
pub struct ReconstructionStats {
    pub mse: f64,
    pub rmse: f64,
    pub variance: f64,
}

/// Evaluates the bundle's reconstructions of `x` from the posterior mode
/// (prior terminal noise, deterministic decoding), plus the reconstruction
/// variance over `n_variance_draws` posterior re-samplings.
pub fn reconstruction_stats(
    bundle: &ModelBundle,
    x: &Tensor,
    labels: Option<&[usize]>,
    n_variance_draws: usize,
    seed: u64,
) -> Result<ReconstructionStats> {
    let mut rng = Rng::from_seed(seed);
    let n = x.shape()[0];
    let recon = reconstruct_with_rng(bundle, x, labels, ReconMode::DdimPrior, &mut rng, false)?;
    let mse = x
        .values()
        .iter()
        .zip(recon.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64;

    let mut variance = 0.0;
    if n_variance_draws >= 2 {
        let mut draws = Vec::with_capacity(n_variance_draws);
        for _ in 0..n_variance_draws {
            draws.push(reconstruct_with_rng(
                bundle,
                x,
                labels,
                ReconMode::DdimPrior,
                &mut rng,
                true,
            )?);
        }
        let d = x.shape()[1];
        for i in 0..n {
            for j in 0..d {
                let mean: f64 =
                    draws.iter().map(|t| t.row(i)[j]).sum::<f64>() / n_variance_draws as f64;
                variance += draws
                    .iter()
                    .map(|t| (t.row(i)[j] - mean) * (t.row(i)[j] - mean))
                    .sum::<f64>()
                    / (n_variance_draws - 1) as f64;
            }
        }
        variance /= n as f64;
    }
    Ok(ReconstructionStats {
        mse,
        rmse: mse.sqrt(),
        variance,
    })
}

/// Decoded samples along the joint spherical path between two inputs.
///
/// Both the representation and (in the deterministic mode) the inverted
/// terminal noise are interpolated; the stochastic mode draws fresh
/// terminal noise per point.
pub fn interpolate_pair(
    bundle: &ModelBundle,
    xa: &[f64],
    xb: &[f64],
    label: Option<usize>,
    n_points: usize,
    mode: ReconMode,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(
            "interpolation needs at least the two endpoints".into(),
        ));
    }
    let enc = bundle.encoder.as_ref().ok_or(Error::ConditioningMismatch {
        expected: "a bundle with a representation encoder",
        given: "a plain diffusion bundle",
    })?;
    if enc.config.timestep_conditional {
        return Err(Error::InvalidArgument(
            "interpolation uses a fixed representation; the timestep-conditional model has none"
                .into(),
        ));
    }
    let s = &bundle.schedule;
    let net = bundle.eval_denoiser();
    let mut rng = Rng::from_seed(seed);

    let pair = Tensor::from_rows(&[xa.to_vec(), xb.to_vec()])?;
    let z0 = bundle.first_stage.encode(&pair)?;
    let d = z0.shape()[1];
    let labels_vec = label.map(|l| vec![l, l]);
    let mus = enc.encode_mode(&z0, None, s.t_count(), labels_vec.as_deref())?;

    let steps: Vec<usize> = (1..=s.t_count()).collect();
    let terminal = match mode {
        ReconMode::DdimInverted | ReconMode::DdimPrior => {
            let pred = NetPredictor::unconditional(&net, s, bundle.config.parameterization)
                .with_repr(ReprSource::Fixed(&mus));
            let pred = match (label, bundle.denoiser.config.conditioning.num_classes()) {
                (Some(l), Some(_)) => pred.with_classes(vec![l, l]),
                _ => pred,
            };
            Some(ddim_invert(s, &pred, &z0, &steps)?)
        }
        ReconMode::Ancestral => None,
    };

    let taus: Vec<f64> = (0..n_points)
        .map(|i| i as f64 / (n_points - 1) as f64)
        .collect();
    let mut out = Vec::with_capacity(n_points);
    for &tau in &taus {
        let r = slerp(mus.row(0), mus.row(1), tau)?;
        let r_tensor = Tensor::matrix(1, r.len(), r)?;
        let x_terminal = match &terminal {
            Some(t) => Tensor::matrix(1, d, slerp(t.row(0), t.row(1), tau)?)?,
            None => Tensor::new(vec![1, d], rng.normal_vec(d))?,
        };
        let pred = NetPredictor::unconditional(&net, s, bundle.config.parameterization)
            .with_repr(ReprSource::Fixed(&r_tensor));
        let pred = match (label, bundle.denoiser.config.conditioning.num_classes()) {
            (Some(l), Some(_)) => pred.with_classes(vec![l]),
            _ => pred,
        };
        let kind = match mode {
            ReconMode::Ancestral => SamplerKind::Ancestral,
            _ => SamplerKind::Ddim,
        };
        let cfg = SamplerConfig {
            kind,
            steps: steps.clone(),
        };
        let run = sample_loop_from(s, &pred, &cfg, x_terminal, &mut rng, false)?;
        let decoded = bundle.first_stage.decode(&run.finals)?;
        out.push(decoded.row(0).to_vec());
    }
    Ok(out)
}

/// Grid points on the plane of the two highest-variance directions of a
/// point set, centered at the mean, with `extent` in units of the standard
/// deviation along each direction.
pub fn pca_grid(points: &Tensor, grid_n: usize, extent: f64) -> Result<Vec<Vec<f64>>> {
    let (n, d) = (points.shape()[0], points.shape()[1]);
    if n < d.max(2) {
        return Err(Error::InvalidArgument(format!(
            "need at least {} points for a {d}-dimensional PCA, got {n}",
            d.max(2)
        )));
    }
    if grid_n == 0 {
        return Err(Error::InvalidArgument("grid must have at least one point".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += points.row(i)[j] / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] +=
                    (points.row(i)[a] - mean[a]) * (points.row(i)[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let evs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| evs[b].partial_cmp(&evs[a]).unwrap());
    let max_ev = evs[order[0]].max(0.0);
    let rank = (0..d).filter(|&i| evs[i] > max_ev * 1e-9 && evs[i] > 0.0).count();
    if rank < 2 {
        return Err(Error::DegenerateCovariance { rank });
    }
    let (i1, i2) = (order[0], order[1]);
    let s1 = evs[i1].sqrt();
    let s2 = evs[i2].sqrt();
    let u1: Vec<f64> = (0..d).map(|j| eig.eigenvectors[(j, i1)]).collect();
    let u2: Vec<f64> = (0..d).map(|j| eig.eigenvectors[(j, i2)]).collect();

    let coords: Vec<f64> = if grid_n == 1 {
        vec![0.0]
    } else {
        (0..grid_n)
            .map(|i| -1.0 + 2.0 * i as f64 / (grid_n - 1) as f64)
            .collect()
    };
    let mut out = Vec::with_capacity(grid_n * grid_n);
    for &a in &coords {
        for &b in &coords {
            out.push(
                (0..d)
                    .map(|j| mean[j] + extent * (a * s1 * u1[j] + b * s2 * u2[j]))
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Principal directions of a point set (unit vectors, descending variance).
pub fn principal_directions(points: &Tensor) -> Result<Vec<(f64, Vec<f64>)>> {
    let (n, d) = (points.shape()[0], points.shape()[1]);
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += points.row(i)[j] / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] +=
                    (points.row(i)[a] - mean[a]) * (points.row(i)[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let evs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| (evs[i], (0..d).map(|j| eig.eigenvectors[(j, i)]).collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Ok(pairs)
}

const ENERGY_SUBSAMPLE_CAP: usize = 5000;
const ENERGY_SUBSAMPLE_SEED: u64 = 0x5eed;

/// Energy distance `2 E||a-b|| - E||a-a'|| - E||b-b'||` between two point
/// sets, estimated with all pairs (the V-statistic, so identical sets score
/// exactly zero). Sets above 5000 points are subsampled with a fixed seed;
/// the subsample depends only on the set itself, keeping the distance
/// symmetric in its arguments.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "energy_distance",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.shape()[0] == 0 || b.shape()[0] == 0 {
        return Err(Error::InvalidArgument("energy distance needs nonempty sets".into()));
    }
    // summation order must not depend on argument position, so the sets are
    // put into a canonical order first
    let (x, y) = if canonical_order_swaps(a, b) { (b, a) } else { (a, b) };
    let sub_x = subsample(x, ENERGY_SUBSAMPLE_CAP, ENERGY_SUBSAMPLE_SEED);
    let sub_y = subsample(y, ENERGY_SUBSAMPLE_CAP, ENERGY_SUBSAMPLE_SEED);
    let xx = mean_pairwise(&sub_x, &sub_x);
    let yy = mean_pairwise(&sub_y, &sub_y);
    let xy = mean_pairwise(&sub_x, &sub_y);
    Ok(2.0 * xy - xx - yy)
}

fn canonical_order_swaps(a: &Tensor, b: &Tensor) -> bool {
    match a.shape()[0].cmp(&b.shape()[0]) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => {
            for (x, y) in a.values().iter().zip(b.values()) {
                match x.partial_cmp(y) {
                    Some(std::cmp::Ordering::Less) => return false,
                    Some(std::cmp::Ordering::Greater) => return true,
                    _ => {}
                }
            }
            false
        }
    }
}

fn subsample(t: &Tensor, cap: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    if n <= cap {
        return (0..n).map(|i| t.row(i).to_vec()).collect();
    }
    let mut rng = Rng::from_seed(seed);
    (0..cap)
        .map(|_| t.row(rng.uniform_int(0, n - 1)).to_vec())
        .collect()
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        for y in b {
            acc += x
                .iter()
                .zip(y)
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
        }
    }
    acc / (a.len() * b.len()) as f64
}

/// Median energy distance between disjoint halves of the set itself: the
/// statistical noise floor against which model samples are judged.
pub fn energy_null_median(data: &Tensor, resamples: usize, seed: u64) -> Result<f64> {
    let n = data.shape()[0];
    if n < 4 || resamples == 0 {
        return Err(Error::InvalidArgument(
            "null calibration needs at least 4 points and 1 resample".into(),
        ));
    }
    let mut rng = Rng::from_seed(seed);
    let mut nulls = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.uniform_int(0, i);
            idx.swap(i, j);
        }
        let half = n / 2;
        let a = Tensor::from_rows(&idx[..half].iter().map(|&i| data.row(i).to_vec()).collect::<Vec<_>>())?;
        let b = Tensor::from_rows(
            &idx[half..2 * half].iter().map(|&i| data.row(i).to_vec()).collect::<Vec<_>>(),
        )?;
        nulls.push(energy_distance(&a, &b)?);
    }
    Ok(median(&mut nulls))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
