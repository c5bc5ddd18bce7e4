//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use lrdm_core::analysis::{
    distortion_curve, energy_distance, energy_null_median, interpolate_pair, kl_curve,
    reconstruct, reconstruction_stats, ReconMode,
};
use lrdm_core::autodiff::Tensor;
use lrdm_core::bundle::ModelBundle;
use lrdm_core::data::{load_checkpoint, save_checkpoint, Dataset};
use lrdm_core::models::FirstStage;
use lrdm_core::objectives::kl_standard_normal_value;
use lrdm_core::rng::Rng;
use lrdm_core::samplers::{sample_loop, NetPredictor, ReprSource, SamplerConfig, SamplerKind};
use lrdm_core::schedule::Schedule;
use lrdm_core::trainer::train;

use crate::config::RunConfig;

/// Errors are split so the process can distinguish bad invocations (exit 1)
/// from failures during the run (exit 2).
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(e: impl Into<anyhow::Error>) -> CliResult<T> {
    Err(CliError::Usage(e.into()))
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Resolves an output directory under the `LRDM_OUT` root (when set),
/// refusing to reuse a non-empty directory without `--force`.
pub fn prepare_out_dir(out: Option<PathBuf>, default_name: &str, force: bool) -> CliResult<PathBuf> {
    let requested = out.unwrap_or_else(|| PathBuf::from(default_name));
    let resolved = if requested.is_absolute() {
        requested
    } else {
        match std::env::var_os("LRDM_OUT") {
            Some(root) => PathBuf::from(root).join(requested),
            None => requested,
        }
    };
    if resolved.exists() {
        let non_empty = std::fs::read_dir(&resolved)
            .map_err(runtime)?
            .next()
            .is_some();
        if non_empty && !force {
            return usage(anyhow!(
                "output directory {} is not empty; pass --force to overwrite",
                resolved.display()
            ));
        }
    }
    std::fs::create_dir_all(&resolved).map_err(runtime)?;
    Ok(resolved)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn points_csv(points: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..points.shape()[0] {
        let mut first = true;
        for v in points.row(i) {
            if !first {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn load_bundle(path: &Path) -> CliResult<ModelBundle> {
    load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(runtime)
}

// ---- train -----------------------------------------------------------------

pub struct TrainArgs {
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn run_train(args: TrainArgs) -> CliResult<()> {
    let cfg = args.config;
    let dataset = cfg.train_dataset().map_err(CliError::Usage)?;
    let mut bundle = cfg.build_bundle(&dataset).map_err(CliError::Usage)?;

    let checkpoint_path = args.out.join("checkpoint.lrdm");
    let every = (cfg.trainer.checkpoint_every > 0).then_some(cfg.trainer.checkpoint_every);
    let mut save = |_step: usize, b: &ModelBundle| save_checkpoint(&checkpoint_path, b);
    let report = train(&mut bundle, &dataset, every, Some(&mut save)).map_err(runtime)?;

    write_file(&args.out.join("metrics.csv"), &report.to_csv())?;
    write_file(&args.out.join("config.toml"), &cfg.to_toml())?;
    if !checkpoint_path.exists() {
        save_checkpoint(&checkpoint_path, &bundle).map_err(runtime)?;
    }
    let last = report.rows.last().expect("training ran");
    println!(
        "trained {} for {} steps (final loss {:.6}) -> {}",
        bundle.config.mode.as_str(),
        last.step + 1,
        last.loss_total,
        args.out.display()
    );
    Ok(())
}

// ---- sampling ---------------------------------------------------------------

fn sampler_config(s: &Schedule, kind: &str, steps: usize) -> CliResult<SamplerConfig> {
    let kind = match kind {
        "ancestral" => SamplerKind::Ancestral,
        "ddim" => SamplerKind::Ddim,
        other => return usage(anyhow!("unknown sampler {other:?}")),
    };
    if steps == 0 || steps == s.t_count() {
        Ok(SamplerConfig::full(kind, s.t_count()))
    } else {
        SamplerConfig::strided(kind, s.t_count(), steps).map_err(runtime)
    }
}

/// Draws `n` unconditional samples in data space; shards run on `jobs`
/// threads with generators derived per shard.
pub fn draw_samples(
    bundle: &ModelBundle,
    n: usize,
    cfg: &SamplerConfig,
    class: Option<usize>,
    seed: u64,
    jobs: usize,
) -> CliResult<Tensor> {
    let jobs = jobs.max(1).min(n.max(1));
    let net = bundle.eval_denoiser();
    let s = &bundle.schedule;
    let dim = bundle.first_stage.latent_dim(match &bundle.first_stage {
        FirstStage::Identity => bundle.denoiser.config.data_dim,
        FirstStage::Net(fs) => fs.config.data_dim,
    });
    if bundle.denoiser.config.conditioning.num_classes().is_some() != class.is_some() {
        return usage(anyhow!(
            "this checkpoint {} class conditioning but --class was {}",
            if class.is_some() { "lacks" } else { "has" },
            if class.is_some() { "given" } else { "not given" },
        ));
    }

    let root = Rng::from_seed(seed);
    let shard_sizes: Vec<usize> = {
        let base = n / jobs;
        let extra = n % jobs;
        (0..jobs).map(|i| base + usize::from(i < extra)).filter(|&s| s > 0).collect()
    };

    let chunks: Vec<Result<Tensor, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shard_sizes
            .iter()
            .enumerate()
            .map(|(i, &shard_n)| {
                let net = &net;
                let mut rng = root.derive(i as u64);
                let cfg = cfg.clone();
                scope.spawn(move || -> Result<Tensor, String> {
                    let repr_owned;
                    let repr = match &bundle.encoder {
                        None => ReprSource::None,
                        Some(enc) if enc.config.timestep_conditional => ReprSource::PriorPerStep {
                            dim: enc.config.repr_dim,
                            rng: std::cell::RefCell::new(rng.derive(u64::MAX)),
                        },
                        Some(enc) => {
                            let r = enc.config.repr_dim;
                            repr_owned =
                                Tensor::new(vec![shard_n, r], rng.normal_vec(shard_n * r))
                                    .map_err(|e| e.to_string())?;
                            ReprSource::Fixed(&repr_owned)
                        }
                    };
                    let mut pred =
                        NetPredictor::unconditional(net, s, bundle.config.parameterization)
                            .with_repr(repr);
                    if let Some(c) = class {
                        pred = pred.with_classes(vec![c; shard_n]);
                    }
                    let run = sample_loop(s, &pred, &cfg, shard_n, dim, &mut rng, false)
                        .map_err(|e| e.to_string())?;
                    bundle.first_stage.decode(&run.finals).map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampler thread")).collect()
    });

    let mut rows = Vec::with_capacity(n);
    for chunk in chunks {
        let t = chunk.map_err(|e| runtime(anyhow!(e)))?;
        for i in 0..t.shape()[0] {
            rows.push(t.row(i).to_vec());
        }
    }
    Tensor::from_rows(&rows).map_err(runtime)
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub n: usize,
    pub sampler: String,
    pub steps: usize,
    pub seed: u64,
    pub class: Option<usize>,
    pub jobs: usize,
    pub out: PathBuf,
    pub trace: bool,
}

pub fn run_sample(args: SampleArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let cfg = sampler_config(&bundle.schedule, &args.sampler, args.steps)?;
    let samples = draw_samples(&bundle, args.n, &cfg, args.class, args.seed, args.jobs)?;
    write_file(&args.out.join("samples.csv"), &points_csv(&samples))?;

    if args.trace {
        // one recorded chain for the sampling-progression diagnostics
        let net = bundle.eval_denoiser();
        let mut rng = Rng::from_seed(args.seed ^ 0x7f4a7c15);
        let dim = samples.shape()[1];
        let repr_owned;
        let repr = match &bundle.encoder {
            None => ReprSource::None,
            Some(enc) if enc.config.timestep_conditional => ReprSource::PriorPerStep {
                dim: enc.config.repr_dim,
                rng: std::cell::RefCell::new(rng.derive(1)),
            },
            Some(enc) => {
                let r = enc.config.repr_dim;
                repr_owned = Tensor::new(vec![1, r], rng.normal_vec(r)).map_err(runtime)?;
                ReprSource::Fixed(&repr_owned)
            }
        };
        let mut pred = NetPredictor::unconditional(&net, &bundle.schedule, bundle.config.parameterization)
            .with_repr(repr);
        if let Some(c) = args.class {
            pred = pred.with_classes(vec![c]);
        }
        let latent_dim = bundle.first_stage.latent_dim(dim);
        let run = sample_loop(&bundle.schedule, &pred, &cfg, 1, latent_dim, &mut rng, true)
            .map_err(runtime)?;
        let trace = &run.traces.expect("recording requested")[0];
        write_file(&args.out.join("trace.csv"), &trace.to_csv())?;
    }
    println!("wrote {} samples -> {}", args.n, args.out.display());
    Ok(())
}

// ---- reconstruct / interpolate -----------------------------------------------

fn recon_mode(name: &str) -> CliResult<ReconMode> {
    match name {
        "ddim" => Ok(ReconMode::DdimInverted),
        "ancestral" => Ok(ReconMode::Ancestral),
        other => usage(anyhow!("unknown reconstruction mode {other:?} (ddim|ancestral)")),
    }
}

fn eval_subset(dataset: &Dataset, k: usize) -> CliResult<(Tensor, Option<Vec<usize>>)> {
    let k = k.min(dataset.len());
    let idx: Vec<usize> = (0..k).collect();
    dataset.gather(&idx).map_err(runtime)
}

pub struct ReconstructArgs {
    pub checkpoint: PathBuf,
    pub config: RunConfig,
    pub mode: String,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_reconstruct(args: ReconstructArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let heldout = args.config.heldout_dataset().map_err(CliError::Usage)?;
    let (x, labels) = eval_subset(&heldout, args.n)?;
    let mode = recon_mode(&args.mode)?;
    let recon =
        reconstruct(&bundle, &x, labels.as_deref(), mode, args.seed).map_err(runtime)?;

    let mut csv = String::new();
    let d = x.shape()[1];
    for i in 0..x.shape()[0] {
        for j in 0..d {
            write!(csv, "{},", x.row(i)[j]).unwrap();
        }
        for j in 0..d {
            write!(csv, "{}", recon.row(i)[j]).unwrap();
            if j + 1 < d {
                csv.push(',');
            }
        }
        csv.push('\n');
    }
    write_file(&args.out.join("reconstructions.csv"), &csv)?;
    let mse = x
        .values()
        .iter()
        .zip(recon.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.shape()[0] as f64;
    write_file(
        &args.out.join("reconstruction_summary.txt"),
        &format!("points = {}\nmode = {}\nmse = {mse}\nrmse = {}\n", x.shape()[0], args.mode, mse.sqrt()),
    )?;
    println!("reconstructed {} points -> {}", x.shape()[0], args.out.display());
    Ok(())
}

pub struct InterpolateArgs {
    pub checkpoint: PathBuf,
    pub config: RunConfig,
    pub points: usize,
    pub index_a: usize,
    pub index_b: usize,
    pub mode: String,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_interpolate(args: InterpolateArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let heldout = args.config.heldout_dataset().map_err(CliError::Usage)?;
    if args.index_a >= heldout.len() || args.index_b >= heldout.len() {
        return usage(anyhow!(
            "interpolation endpoints {}..{} outside the held-out set of {} points",
            args.index_a,
            args.index_b,
            heldout.len()
        ));
    }
    let a = heldout.point(args.index_a);
    let b = heldout.point(args.index_b);
    let mode = recon_mode(&args.mode)?;
    let path = interpolate_pair(
        &bundle,
        &a.x0,
        &b.x0,
        a.label,
        args.points,
        mode,
        args.seed,
    )
    .map_err(runtime)?;
    let mut csv = String::new();
    for p in &path {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&args.out.join("interpolation.csv"), &csv)?;
    println!("wrote {} interpolation points -> {}", path.len(), args.out.display());
    Ok(())
}

// ---- eval --------------------------------------------------------------------

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: RunConfig,
    /// Overrides the analysis seed when given.
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: PathBuf,
}

pub fn run_eval(args: EvalArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.checkpoint)?;
    let heldout = args.config.heldout_dataset().map_err(CliError::Usage)?;
    let mut a = args.config.analysis.clone();
    if let Some(s) = args.seed {
        a.seed = s;
    }
    let a = &a;
    let mut summary = String::new();

    // distortion curve over a strided timestep grid
    let t_grid: Vec<usize> = (1..=bundle.schedule.t_count())
        .step_by(a.t_grid_stride.max(1))
        .collect();
    let (eval_points, eval_labels) = eval_subset(&heldout, a.eval_points)?;
    let eval_ds = Dataset::new(
        eval_points.clone(),
        eval_labels.clone(),
        lrdm_core::data::Split::Heldout,
        "eval subset".into(),
    )
    .map_err(runtime)?;
    let curve = distortion_curve(&bundle, &eval_ds, &t_grid, a.n_mc, a.seed).map_err(runtime)?;
    write_file(&args.out.join("distortion.csv"), &curve.to_csv())?;

    // unconditional sampling quality against the held-out set
    let sampler_cfg = SamplerConfig::full(SamplerKind::Ancestral, bundle.schedule.t_count());
    let samples = draw_samples(
        &bundle,
        a.energy_samples,
        &sampler_cfg,
        None,
        a.seed ^ 0x5a5a,
        args.jobs,
    );
    match samples {
        Ok(samples) => {
            write_file(&args.out.join("samples.csv"), &points_csv(&samples))?;
            let ed = energy_distance(&samples, heldout.points()).map_err(runtime)?;
            let null =
                energy_null_median(heldout.points(), a.null_resamples, a.seed ^ 0xa5a5)
                    .map_err(runtime)?;
            writeln!(summary, "energy_distance = {ed}").unwrap();
            writeln!(summary, "energy_null_median = {null}").unwrap();
            writeln!(summary, "energy_ratio_vs_null = {}", ed / null).unwrap();
        }
        Err(CliError::Usage(_)) => {
            // class-conditional checkpoints have no unconditional sampler
            writeln!(summary, "energy_distance = n/a (class-conditional model)").unwrap();
        }
        Err(e) => return Err(e),
    }

    // reconstruction metrics and encoder diagnostics
    if bundle.encoder.is_some() {
        let stats = reconstruction_stats(
            &bundle,
            &eval_points,
            eval_labels.as_deref(),
            a.variance_draws,
            a.seed ^ 0x51ed,
        )
        .map_err(runtime)?;
        writeln!(summary, "reconstruction_mse = {}", stats.mse).unwrap();
        writeln!(summary, "reconstruction_rmse = {}", stats.rmse).unwrap();
        writeln!(summary, "reconstruction_variance = {}", stats.variance).unwrap();

        let enc = bundle.encoder.as_ref().unwrap();
        let z0 = bundle.first_stage.encode(&eval_points).map_err(runtime)?;
        if enc.config.timestep_conditional {
            let klc = kl_curve(
                enc,
                &z0,
                eval_labels.as_deref(),
                &t_grid,
                bundle.schedule.t_count(),
            )
            .map_err(runtime)?;
            write_file(&args.out.join("kl_curve.csv"), &klc.to_csv())?;
            let mean: f64 = klc.per_dim.iter().sum::<f64>() / klc.per_dim.len() as f64;
            writeln!(summary, "encoder_kl_per_dim = {mean}").unwrap();
        } else {
            let (mu, logvar) = enc
                .encode(&z0, None, bundle.schedule.t_count(), eval_labels.as_deref())
                .map_err(runtime)?;
            let n = mu.shape()[0];
            let kl: f64 = (0..n)
                .map(|i| kl_standard_normal_value(mu.row(i), logvar.row(i)))
                .sum::<f64>()
                / n as f64;
            writeln!(summary, "encoder_kl = {kl}").unwrap();
            writeln!(summary, "encoder_kl_per_dim = {}", kl / enc.config.repr_dim as f64)
                .unwrap();
        }
    }

    write_file(&args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("eval artifacts -> {}", args.out.display());
    Ok(())
}

// ---- schedule dump -------------------------------------------------------------

pub struct ScheduleDumpArgs {
    pub t_count: usize,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub out: PathBuf,
}

pub fn run_schedule_dump(args: ScheduleDumpArgs) -> CliResult<()> {
    let defaults = lrdm_core::schedule::default_endpoints(args.t_count);
    let schedule = Schedule::linear(
        args.t_count,
        args.beta_start.unwrap_or(defaults.0),
        args.beta_end.unwrap_or(defaults.1),
    )
    .map_err(|e| CliError::Usage(e.into()))?;
    write_file(&args.out.join("schedule.csv"), &schedule.to_csv())?;
    println!("wrote {} schedule rows -> {}", args.t_count, args.out.display());
    Ok(())
}
