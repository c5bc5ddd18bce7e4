//! Run configuration: a TOML file with documented defaults for every field
//! and rejection of unknown keys. Command-line flags override file values.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::Path;

use lrdm_core::bundle::{ModelBundle, ScheduleSpec};
use lrdm_core::data::{load_csv_dataset, make_mixture, Dataset};
use lrdm_core::models::{
    Conditioning, DenoiserConfig, DenoiserNet, EncoderConfig, FirstStage, FirstStageConfig,
    FirstStageNet, FirstStageTrainConfig, ReprEncoder,
};
use lrdm_core::rng::Rng;
use lrdm_core::schedule::{Parameterization, Weighting};
use lrdm_core::trainer::{CurriculumConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub first_stage: FirstStageSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Timestep count of the desk-scale schedule.
    #[serde(default = "d_t_count")]
    pub t_count: usize,
    /// Linear-schedule endpoints; when omitted they scale with `1000 / T`
    /// to keep the terminal signal level negligible.
    #[serde(default)]
    pub beta_start: Option<f64>,
    #[serde(default)]
    pub beta_end: Option<f64>,
}

fn d_t_count() -> usize { 100 }

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            t_count: d_t_count(),
            beta_start: None,
            beta_end: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    /// Defaults to 0.2 for plain diffusion runs and 0 otherwise.
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default = "d_repr_dim")]
    pub repr_dim: usize,
    #[serde(default = "d_encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    /// Condition the denoiser (and encoder, when present) on class labels.
    #[serde(default)]
    pub class_conditional: bool,
}

fn d_hidden() -> Vec<usize> { vec![128, 128, 128] }
fn d_embed_dim() -> usize { 32 }
fn d_repr_dim() -> usize { 8 }
fn d_encoder_hidden() -> Vec<usize> { vec![64, 64] }

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: d_hidden(),
            embed_dim: d_embed_dim(),
            dropout: None,
            repr_dim: d_repr_dim(),
            encoder_hidden: d_encoder_hidden(),
            class_conditional: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    /// One of `dm`, `lrdm`, `tlrdm`, `lvae`.
    #[serde(default = "d_mode")]
    pub mode: String,
    /// `noise`, `image`, or `mean`; the representation modes are
    /// image-parameterized by construction.
    #[serde(default)]
    pub parameterization: Option<String>,
    /// `simple` or `vlb`.
    #[serde(default = "d_weighting")]
    pub weighting: String,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_ema_decay")]
    pub ema_decay: f64,
    /// 0 writes the checkpoint only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub curriculum: Option<CurriculumSection>,
}

fn d_mode() -> String { "dm".into() }
fn d_weighting() -> String { "simple".into() }
fn d_lambda() -> f64 { 1e-3 }
fn d_learning_rate() -> f64 { 1e-3 }
fn d_batch_size() -> usize { 64 }
fn d_steps() -> usize { 20_000 }
fn d_ema_decay() -> f64 { 0.9999 }

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            mode: d_mode(),
            parameterization: None,
            weighting: d_weighting(),
            lambda: d_lambda(),
            learning_rate: d_learning_rate(),
            batch_size: d_batch_size(),
            steps: d_steps(),
            seed: 0,
            ema_decay: d_ema_decay(),
            checkpoint_every: 0,
            curriculum: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSection {
    pub initial_width: usize,
    pub expand_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `mixture` or `csv`.
    #[serde(default = "d_data_kind")]
    pub kind: String,
    #[serde(default = "d_data_n")]
    pub n: usize,
    #[serde(default = "d_modes")]
    pub modes: usize,
    #[serde(default = "d_radius")]
    pub radius: f64,
    #[serde(default = "d_std")]
    pub std: f64,
    #[serde(default = "d_data_seed")]
    pub seed: u64,
    #[serde(default)]
    pub labeled: bool,
    /// Held-out set size for mixtures (drawn with `seed + 1`).
    #[serde(default = "d_data_n")]
    pub heldout_n: usize,
    #[serde(default)]
    pub path: String,
    #[serde(default)]
    pub has_labels: bool,
    #[serde(default)]
    pub heldout_path: String,
}

fn d_data_kind() -> String { "mixture".into() }
fn d_data_n() -> usize { 4096 }
fn d_modes() -> usize { 8 }
fn d_radius() -> f64 { 2.0 }
fn d_std() -> f64 { 0.2 }
fn d_data_seed() -> u64 { 1 }

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: d_data_kind(),
            n: d_data_n(),
            modes: d_modes(),
            radius: d_radius(),
            std: d_std(),
            seed: d_data_seed(),
            labeled: false,
            heldout_n: d_data_n(),
            path: String::new(),
            has_labels: false,
            heldout_path: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstStageSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "d_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "d_fs_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_fs_steps")]
    pub steps: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
}

fn d_latent_dim() -> usize { 2 }
fn d_fs_hidden() -> Vec<usize> { vec![32, 32] }
fn d_fs_steps() -> usize { 2000 }

impl Default for FirstStageSection {
    fn default() -> Self {
        FirstStageSection {
            enabled: false,
            latent_dim: d_latent_dim(),
            hidden: d_fs_hidden(),
            steps: d_fs_steps(),
            batch_size: d_batch_size(),
            learning_rate: d_learning_rate(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// `ancestral` or `ddim`.
    #[serde(default = "d_sampler_kind")]
    pub kind: String,
    /// 0 runs every timestep; otherwise a uniform stride (deterministic
    /// sampler only).
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "d_sample_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_sampler_kind() -> String { "ancestral".into() }
fn d_sample_n() -> usize { 1000 }

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            kind: d_sampler_kind(),
            steps: 0,
            n: d_sample_n(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Held-out points used for distortion and reconstruction metrics.
    #[serde(default = "d_eval_points")]
    pub eval_points: usize,
    /// Distortion/KL curves are evaluated every this many timesteps.
    #[serde(default = "d_t_grid_stride")]
    pub t_grid_stride: usize,
    /// Noise draws per point and timestep in the distortion curve.
    #[serde(default = "d_n_mc")]
    pub n_mc: usize,
    /// Model samples drawn for the two-sample distance.
    #[serde(default = "d_energy_samples")]
    pub energy_samples: usize,
    /// Held-out resamples calibrating the distance noise floor.
    #[serde(default = "d_null_resamples")]
    pub null_resamples: usize,
    /// Posterior re-samplings for the reconstruction variance.
    #[serde(default = "d_variance_draws")]
    pub variance_draws: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_eval_points() -> usize { 512 }
fn d_t_grid_stride() -> usize { 5 }
fn d_n_mc() -> usize { 4 }
fn d_energy_samples() -> usize { 5000 }
fn d_null_resamples() -> usize { 20 }
fn d_variance_draws() -> usize { 8 }

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            eval_points: d_eval_points(),
            t_grid_stride: d_t_grid_stride(),
            n_mc: d_n_mc(),
            energy_samples: d_energy_samples(),
            null_resamples: d_null_resamples(),
            variance_draws: d_variance_draws(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn train_mode(&self) -> anyhow::Result<TrainMode> {
        Ok(TrainMode::parse(&self.trainer.mode)?)
    }

    pub fn parameterization(&self) -> anyhow::Result<Parameterization> {
        let mode = self.train_mode()?;
        match (&self.trainer.parameterization, mode) {
            (None, TrainMode::Dm) => Ok(Parameterization::Noise),
            (None, _) => Ok(Parameterization::Image),
            (Some(p), m) => {
                let p = match p.as_str() {
                    "noise" => Parameterization::Noise,
                    "image" => Parameterization::Image,
                    "mean" => Parameterization::Mean,
                    other => bail!("unknown parameterization {other:?}"),
                };
                if m.uses_encoder() && p != Parameterization::Image {
                    bail!("the representation objectives are image-parameterized; remove the parameterization override or set it to \"image\"");
                }
                Ok(p)
            }
        }
    }

    pub fn weighting(&self) -> anyhow::Result<Weighting> {
        match self.trainer.weighting.as_str() {
            "simple" => Ok(Weighting::Simple),
            "vlb" => Ok(Weighting::Vlb),
            other => bail!("unknown weighting {other:?}"),
        }
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        let defaults = lrdm_core::schedule::default_endpoints(self.schedule.t_count);
        ScheduleSpec::new(
            self.schedule.t_count,
            self.schedule.beta_start.unwrap_or(defaults.0),
            self.schedule.beta_end.unwrap_or(defaults.1),
        )
    }

    pub fn train_dataset(&self) -> anyhow::Result<Dataset> {
        match self.data.kind.as_str() {
            "mixture" => Ok(make_mixture(
                self.data.n,
                self.data.modes,
                self.data.radius,
                self.data.std,
                self.data.seed,
                self.data.labeled,
            )?),
            "csv" => {
                if self.data.path.is_empty() {
                    bail!("data.kind = \"csv\" needs data.path");
                }
                Ok(load_csv_dataset(Path::new(&self.data.path), self.data.has_labels)?)
            }
            other => bail!("unknown data kind {other:?}"),
        }
    }

    pub fn heldout_dataset(&self) -> anyhow::Result<Dataset> {
        match self.data.kind.as_str() {
            "mixture" => Ok(make_mixture(
                self.data.heldout_n,
                self.data.modes,
                self.data.radius,
                self.data.std,
                self.data.seed + 1,
                self.data.labeled,
            )?),
            "csv" => {
                if self.data.heldout_path.is_empty() {
                    bail!("evaluation on csv data needs data.heldout_path");
                }
                Ok(load_csv_dataset(
                    Path::new(&self.data.heldout_path),
                    self.data.has_labels,
                )?)
            }
            other => bail!("unknown data kind {other:?}"),
        }
    }

    /// Builds the untrained bundle this config describes, training the
    /// first stage when one is enabled.
    pub fn build_bundle(&self, dataset: &Dataset) -> anyhow::Result<ModelBundle> {
        let mode = self.train_mode()?;
        let spec = self.schedule_spec();
        let mut rng = Rng::from_seed(self.trainer.seed ^ 0x6d6f646c);

        let num_classes = if self.model.class_conditional {
            Some(dataset.num_classes().ok_or_else(|| {
                anyhow::anyhow!("class-conditional model needs a labeled dataset")
            })?)
        } else {
            None
        };

        let first_stage = if self.first_stage.enabled {
            let mut fs = FirstStageNet::new(
                FirstStageConfig {
                    data_dim: dataset.dim(),
                    latent_dim: self.first_stage.latent_dim,
                    hidden: self.first_stage.hidden.clone(),
                },
                &mut rng,
            );
            fs.train(
                dataset.points(),
                &FirstStageTrainConfig {
                    steps: self.first_stage.steps,
                    batch_size: self.first_stage.batch_size,
                    learning_rate: self.first_stage.learning_rate,
                    ..Default::default()
                },
                &mut rng,
            )?;
            FirstStage::Net(fs)
        } else {
            FirstStage::Identity
        };
        let latent_dim = first_stage.latent_dim(dataset.dim());

        let conditioning = match (mode.uses_encoder(), num_classes) {
            (false, None) => Conditioning::None,
            (false, Some(k)) => Conditioning::Class { num_classes: k },
            (true, None) => Conditioning::Repr {
                dim: self.model.repr_dim,
            },
            (true, Some(k)) => Conditioning::ReprClass {
                dim: self.model.repr_dim,
                num_classes: k,
            },
        };
        let dropout = self.model.dropout.unwrap_or(match mode {
            TrainMode::Dm => 0.2,
            _ => 0.0,
        });
        let denoiser = DenoiserNet::new(
            DenoiserConfig {
                data_dim: latent_dim,
                hidden: self.model.hidden.clone(),
                embed_dim: self.model.embed_dim,
                conditioning,
                dropout,
            },
            &mut rng,
        );

        let encoder = if mode.uses_encoder() {
            let mut cfg = EncoderConfig {
                data_dim: latent_dim,
                hidden: self.model.encoder_hidden.clone(),
                repr_dim: self.model.repr_dim,
                timestep_conditional: mode == TrainMode::TLrdm,
                class_conditional: num_classes,
                embed_dim: self.model.embed_dim,
            };
            cfg.timestep_conditional = mode == TrainMode::TLrdm;
            Some(ReprEncoder::new(cfg, &mut rng))
        } else {
            None
        };

        let train_config = TrainConfig {
            mode,
            parameterization: self.parameterization()?,
            weighting: self.weighting()?,
            lambda: if mode == TrainMode::Dm { 0.0 } else { self.trainer.lambda },
            learning_rate: self.trainer.learning_rate,
            batch_size: self.trainer.batch_size,
            steps: self.trainer.steps,
            seed: self.trainer.seed,
            ema_decay: self.trainer.ema_decay,
            curriculum: self.trainer.curriculum.as_ref().map(|c| CurriculumConfig {
                initial_width: c.initial_width,
                expand_steps: c.expand_steps,
            }),
        };
        train_config.validate()?;
        Ok(ModelBundle::new(spec, denoiser, encoder, first_stage, train_config)?)
    }
}
