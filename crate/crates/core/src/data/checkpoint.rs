//! Checkpoint persistence.
//!
//! Layout: the magic line `LRDM1`, a human-readable `key = value` header
//! that fully describes every model shape, a blank line, then length-
//! prefixed little-endian 64-bit-float parameter blobs in canonical order:
//! denoiser, encoder, first stage, EMA shadow, optimizer first moments,
//! optimizer second moments. Save/load round-trips are byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::bundle::{ModelBundle, ScheduleSpec, TrainState};
use crate::error::{Error, Result};
use crate::models::{
    Conditioning, DenoiserConfig, DenoiserNet, EncoderConfig, FirstStage, FirstStageConfig,
    FirstStageNet, ReprEncoder,
};
use crate::rng::{Rng, RngState};
use crate::trainer::optim::{AdamConfig, AdamState, EmaState};
use crate::trainer::{CurriculumConfig, TrainConfig, TrainMode};
use crate::schedule::{Parameterization, Weighting};

const MAGIC: &str = "LRDM1";
const VERSION: u32 = 1;

fn usize_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::CheckpointHeader(format!("bad integer list entry {c:?}")))
        })
        .collect()
}

fn header_text(bundle: &ModelBundle) -> String {
    let c = &bundle.config;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));

    kv("version", VERSION.to_string());
    kv("mode", c.mode.as_str().to_string());
    kv(
        "parameterization",
        match c.parameterization {
            Parameterization::Noise => "noise",
            Parameterization::Image => "image",
            Parameterization::Mean => "mean",
        }
        .to_string(),
    );
    kv(
        "weighting",
        match c.weighting {
            Weighting::Simple => "simple",
            Weighting::Vlb => "vlb",
        }
        .to_string(),
    );
    kv("lambda", c.lambda.to_string());
    kv("learning_rate", c.learning_rate.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("steps", c.steps.to_string());
    kv("seed", c.seed.to_string());
    kv("ema_decay", c.ema_decay.to_string());
    kv(
        "curriculum",
        match c.curriculum {
            None => "none".to_string(),
            Some(cc) => format!("{},{}", cc.initial_width, cc.expand_steps),
        },
    );
    kv("schedule.t_count", bundle.schedule_spec.t_count.to_string());
    kv("schedule.beta_start", bundle.schedule_spec.beta_start.to_string());
    kv("schedule.beta_end", bundle.schedule_spec.beta_end.to_string());

    let d = &bundle.denoiser.config;
    kv("denoiser.data_dim", d.data_dim.to_string());
    kv("denoiser.hidden", usize_list(&d.hidden));
    kv("denoiser.embed_dim", d.embed_dim.to_string());
    kv("denoiser.dropout", d.dropout.to_string());
    kv(
        "denoiser.conditioning",
        match d.conditioning {
            Conditioning::None => "none".to_string(),
            Conditioning::Repr { dim } => format!("repr:{dim}"),
            Conditioning::Class { num_classes } => format!("class:{num_classes}"),
            Conditioning::ReprClass { dim, num_classes } => {
                format!("repr_class:{dim},{num_classes}")
            }
        },
    );

    match &bundle.encoder {
        None => kv("encoder", "none".to_string()),
        Some(enc) => {
            let e = &enc.config;
            kv("encoder", "present".to_string());
            kv("encoder.data_dim", e.data_dim.to_string());
            kv("encoder.hidden", usize_list(&e.hidden));
            kv("encoder.repr_dim", e.repr_dim.to_string());
            kv(
                "encoder.timestep_conditional",
                e.timestep_conditional.to_string(),
            );
            kv(
                "encoder.class_conditional",
                e.class_conditional.map_or("none".to_string(), |k| k.to_string()),
            );
            kv("encoder.embed_dim", e.embed_dim.to_string());
        }
    }

    match &bundle.first_stage {
        FirstStage::Identity => kv("first_stage", "identity".to_string()),
        FirstStage::Net(fs) => {
            kv("first_stage", "net".to_string());
            kv("first_stage.data_dim", fs.config.data_dim.to_string());
            kv("first_stage.latent_dim", fs.config.latent_dim.to_string());
            kv("first_stage.hidden", usize_list(&fs.config.hidden));
            kv(
                "first_stage.rescale",
                fs.rescale.map_or("none".to_string(), |s| s.to_string()),
            );
        }
    }

    kv("ema", bundle.ema.is_some().then_some("present").unwrap_or("none").to_string());
    match &bundle.train_state {
        None => kv("train_state", "none".to_string()),
        Some(ts) => {
            kv("train_state", "present".to_string());
            kv("train_step", ts.step.to_string());
            kv("adam.step", ts.adam.step_count().to_string());
            let seed_hex: String = ts.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
            kv("rng.seed", seed_hex);
            kv("rng.stream", ts.rng.stream.to_string());
            kv("rng.word_pos", ts.rng.word_pos.to_string());
        }
    }
    out
}

fn write_blob(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_blob(reader: &mut impl Read, section: &str, expected: usize) -> Result<Vec<f64>> {
    let mut len_buf = [0u8; 8];
    reader.read_exact(&mut len_buf).map_err(|_| Error::CheckpointTruncated {
        section: section.to_string(),
    })?;
    let len = u64::from_le_bytes(len_buf) as usize;
    if len != expected {
        return Err(Error::CheckpointShape {
            section: section.to_string(),
            found: len,
            expected,
        });
    }
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        reader.read_exact(&mut buf).map_err(|_| Error::CheckpointTruncated {
            section: section.to_string(),
        })?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Serializes the bundle to its on-disk byte layout.
pub fn checkpoint_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(header_text(bundle).as_bytes());
    out.push(b'\n');

    for p in bundle.live_params() {
        write_blob(&mut out, p.values());
    }
    if let Some(ema) = &bundle.ema {
        for s in &ema.shadow {
            write_blob(&mut out, s.values());
        }
    }
    if let Some(ts) = &bundle.train_state {
        let (m, v) = ts.adam.moments();
        for blob in m.iter().chain(v.iter()) {
            write_blob(&mut out, blob);
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let bytes = checkpoint_bytes(bundle);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Header {
    map: BTreeMap<String, String>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CheckpointHeader(format!("missing key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::CheckpointHeader(format!("bad value for {key:?}")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    // split the text head (magic + header + blank line) from the blobs
    let header_end = find_blank_line(bytes).ok_or_else(|| Error::CheckpointTruncated {
        section: "header".to_string(),
    })?;
    let text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::CheckpointHeader("header is not utf-8".to_string()))?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(Error::CheckpointVersion {
            found: magic.chars().take(16).collect(),
            expected: MAGIC.to_string(),
        });
    }
    let mut map = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| {
            Error::CheckpointHeader(format!("malformed line {line:?}"))
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    let h = Header { map };

    let version: u32 = h.parse("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version.to_string(),
            expected: VERSION.to_string(),
        });
    }

    let mode = TrainMode::parse(h.get("mode")?)?;
    let parameterization = match h.get("parameterization")? {
        "noise" => Parameterization::Noise,
        "image" => Parameterization::Image,
        "mean" => Parameterization::Mean,
        other => {
            return Err(Error::CheckpointHeader(format!(
                "unknown parameterization {other:?}"
            )))
        }
    };
    let weighting = match h.get("weighting")? {
        "simple" => Weighting::Simple,
        "vlb" => Weighting::Vlb,
        other => return Err(Error::CheckpointHeader(format!("unknown weighting {other:?}"))),
    };
    let curriculum = match h.get("curriculum")? {
        "none" => None,
        spec => {
            let parts = parse_usize_list(spec)?;
            if parts.len() != 2 {
                return Err(Error::CheckpointHeader(format!("bad curriculum {spec:?}")));
            }
            Some(CurriculumConfig {
                initial_width: parts[0],
                expand_steps: parts[1],
            })
        }
    };
    let config = TrainConfig {
        mode,
        parameterization,
        weighting,
        lambda: h.parse("lambda")?,
        learning_rate: h.parse("learning_rate")?,
        batch_size: h.parse("batch_size")?,
        steps: h.parse("steps")?,
        seed: h.parse("seed")?,
        ema_decay: h.parse("ema_decay")?,
        curriculum,
    };

    let spec = ScheduleSpec::new(
        h.parse("schedule.t_count")?,
        h.parse("schedule.beta_start")?,
        h.parse("schedule.beta_end")?,
    );

    let conditioning = match h.get("denoiser.conditioning")? {
        "none" => Conditioning::None,
        other => {
            let (kind, args) = other.split_once(':').ok_or_else(|| {
                Error::CheckpointHeader(format!("bad conditioning {other:?}"))
            })?;
            let nums = parse_usize_list(args)?;
            match (kind, nums.as_slice()) {
                ("repr", [dim]) => Conditioning::Repr { dim: *dim },
                ("class", [k]) => Conditioning::Class { num_classes: *k },
                ("repr_class", [dim, k]) => Conditioning::ReprClass {
                    dim: *dim,
                    num_classes: *k,
                },
                _ => {
                    return Err(Error::CheckpointHeader(format!(
                        "bad conditioning {other:?}"
                    )))
                }
            }
        }
    };
    let denoiser_config = DenoiserConfig {
        data_dim: h.parse("denoiser.data_dim")?,
        hidden: parse_usize_list(h.get("denoiser.hidden")?)?,
        embed_dim: h.parse("denoiser.embed_dim")?,
        conditioning,
        dropout: h.parse("denoiser.dropout")?,
    };

    // construction seeds are irrelevant: every parameter is overwritten
    let mut init_rng = Rng::from_seed(0);
    let mut denoiser = DenoiserNet::new(denoiser_config, &mut init_rng);

    let mut encoder = match h.get("encoder")? {
        "none" => None,
        "present" => {
            let class_conditional = match h.get("encoder.class_conditional")? {
                "none" => None,
                k => Some(k.parse().map_err(|_| {
                    Error::CheckpointHeader("bad encoder.class_conditional".to_string())
                })?),
            };
            let cfg = EncoderConfig {
                data_dim: h.parse("encoder.data_dim")?,
                hidden: parse_usize_list(h.get("encoder.hidden")?)?,
                repr_dim: h.parse("encoder.repr_dim")?,
                timestep_conditional: h.parse("encoder.timestep_conditional")?,
                class_conditional,
                embed_dim: h.parse("encoder.embed_dim")?,
            };
            Some(ReprEncoder::new(cfg, &mut init_rng))
        }
        other => return Err(Error::CheckpointHeader(format!("bad encoder tag {other:?}"))),
    };

    let mut first_stage = match h.get("first_stage")? {
        "identity" => FirstStage::Identity,
        "net" => {
            let cfg = FirstStageConfig {
                data_dim: h.parse("first_stage.data_dim")?,
                latent_dim: h.parse("first_stage.latent_dim")?,
                hidden: parse_usize_list(h.get("first_stage.hidden")?)?,
            };
            let mut fs = FirstStageNet::new(cfg, &mut init_rng);
            fs.rescale = match h.get("first_stage.rescale")? {
                "none" => None,
                v => Some(v.parse().map_err(|_| {
                    Error::CheckpointHeader("bad first_stage.rescale".to_string())
                })?),
            };
            FirstStage::Net(fs)
        }
        other => {
            return Err(Error::CheckpointHeader(format!(
                "bad first_stage tag {other:?}"
            )))
        }
    };

    // blobs, in canonical order
    let mut reader = &bytes[header_end..];
    {
        let mut params = denoiser.params_mut();
        if let Some(enc) = &mut encoder {
            params.extend(enc.params_mut());
        }
        if let FirstStage::Net(fs) = &mut first_stage {
            params.extend(fs.params_mut());
        }
        for (i, p) in params.iter_mut().enumerate() {
            let blob = read_blob(&mut reader, &format!("parameter {i}"), p.len())?;
            p.values_mut().copy_from_slice(&blob);
        }
    }

    let ema = match h.get("ema")? {
        "none" => None,
        "present" => {
            let mut shadow = Vec::new();
            for (i, p) in denoiser.params().iter().enumerate() {
                let blob = read_blob(&mut reader, &format!("ema shadow {i}"), p.len())?;
                shadow.push(Tensor::new(p.shape().to_vec(), blob)?);
            }
            Some(EmaState::with_shadow(shadow, config.ema_decay))
        }
        other => return Err(Error::CheckpointHeader(format!("bad ema tag {other:?}"))),
    };

    let train_state = match h.get("train_state")? {
        "none" => None,
        "present" => {
            let step: usize = h.parse("train_step")?;
            let adam_step: usize = h.parse("adam.step")?;
            let seed_hex = h.get("rng.seed")?;
            if seed_hex.len() != 64 {
                return Err(Error::CheckpointHeader("bad rng.seed length".to_string()));
            }
            let mut seed = [0u8; 32];
            for (i, chunk) in seed_hex.as_bytes().chunks(2).enumerate() {
                let s = std::str::from_utf8(chunk)
                    .map_err(|_| Error::CheckpointHeader("bad rng.seed".to_string()))?;
                seed[i] = u8::from_str_radix(s, 16)
                    .map_err(|_| Error::CheckpointHeader("bad rng.seed".to_string()))?;
            }
            let rng_state = RngState {
                seed,
                stream: h.parse("rng.stream")?,
                word_pos: h.parse("rng.word_pos")?,
            };
            // the trainable set is denoiser plus encoder (when the mode
            // uses one), matching the trainer's optimizer ordering
            let mut sizes: Vec<usize> = denoiser.params().iter().map(|p| p.len()).collect();
            if config.mode.uses_encoder() {
                if let Some(enc) = &encoder {
                    sizes.extend(enc.params().iter().map(|p| p.len()));
                }
            }
            let mut m = Vec::new();
            for (i, &len) in sizes.iter().enumerate() {
                m.push(read_blob(&mut reader, &format!("adam m {i}"), len)?);
            }
            let mut v = Vec::new();
            for (i, &len) in sizes.iter().enumerate() {
                v.push(read_blob(&mut reader, &format!("adam v {i}"), len)?);
            }
            Some(TrainState {
                adam: AdamState::from_parts(m, v, adam_step, AdamConfig::default()),
                rng: rng_state,
                step,
            })
        }
        other => {
            return Err(Error::CheckpointHeader(format!(
                "bad train_state tag {other:?}"
            )))
        }
    };

    if !reader.is_empty() {
        return Err(Error::CheckpointHeader(format!(
            "{} unexpected trailing bytes",
            reader.len()
        )));
    }

    let mut bundle = ModelBundle::new(spec, denoiser, encoder, first_stage, config)?;
    bundle.ema = ema;
    bundle.train_state = train_state;
    Ok(bundle)
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n").map(|i| i + 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_mixture;
    use crate::trainer::train;

    fn trained_bundle(steps: usize) -> ModelBundle {
        let mut rng = Rng::from_seed(1);
        let spec = ScheduleSpec::default_for(10);
        let net = DenoiserNet::new(
            DenoiserConfig::new(2).with_hidden(vec![12]).with_embed_dim(6),
            &mut rng,
        );
        let mut config = TrainConfig::new(TrainMode::Dm);
        config.steps = steps;
        config.batch_size = 8;
        let mut bundle =
            ModelBundle::new(spec, net, None, FirstStage::Identity, config).unwrap();
        let data = make_mixture(128, 4, 1.5, 0.2, 2, false).unwrap();
        train(&mut bundle, &data, None, None).unwrap();
        bundle
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let bundle = trained_bundle(12);
        let bytes = checkpoint_bytes(&bundle);
        let loaded = load_checkpoint_bytes(&bytes).unwrap();
        let again = checkpoint_bytes(&loaded);
        assert_eq!(bytes, again);
        for (a, b) in bundle.live_params().iter().zip(loaded.live_params()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn golden_header_pins_canonical_layout() {
        let mut rng = Rng::from_seed(0);
        let spec = ScheduleSpec::new(10, 0.001, 0.2);
        let net = DenoiserNet::new(
            DenoiserConfig::new(2).with_hidden(vec![8]).with_embed_dim(4),
            &mut rng,
        );
        let config = TrainConfig::new(TrainMode::Dm);
        let bundle = ModelBundle::new(spec, net, None, FirstStage::Identity, config).unwrap();
        let expected = "\
version = 1
mode = dm
parameterization = noise
weighting = simple
lambda = 0
learning_rate = 0.001
batch_size = 64
steps = 20000
seed = 0
ema_decay = 0.9999
curriculum = none
schedule.t_count = 10
schedule.beta_start = 0.001
schedule.beta_end = 0.2
denoiser.data_dim = 2
denoiser.hidden = 8
denoiser.embed_dim = 4
denoiser.dropout = 0
denoiser.conditioning = none
encoder = none
first_stage = identity
ema = none
train_state = none
";
        assert_eq!(header_text(&bundle), expected);
    }

    #[test]
    fn version_mismatch_is_a_distinct_error() {
        let bundle = trained_bundle(3);
        let mut bytes = checkpoint_bytes(&bundle);
        bytes[4] = b'9'; // LRDM9
        assert!(matches!(
            load_checkpoint_bytes(&bytes),
            Err(Error::CheckpointVersion { .. })
        ));
    }

    #[test]
    fn corrupted_length_prefix_is_truncation_or_shape_error() {
        let bundle = trained_bundle(3);
        let bytes = checkpoint_bytes(&bundle);
        let header_end = find_blank_line(&bytes).unwrap();
        let mut corrupted = bytes.clone();
        // inflate the first blob length so the reader runs off the end
        corrupted[header_end..header_end + 8]
            .copy_from_slice(&(u64::MAX / 2).to_le_bytes());
        match load_checkpoint_bytes(&corrupted) {
            Err(Error::CheckpointShape { .. }) | Err(Error::CheckpointTruncated { .. }) => {}
            other => panic!("expected shape/truncation error, got {other:?}"),
        }
        // drop the tail entirely
        let short = &bytes[..bytes.len() - 9];
        assert!(matches!(
            load_checkpoint_bytes(short),
            Err(Error::CheckpointTruncated { .. })
        ));
    }

    #[test]
    fn resume_from_file_matches_uninterrupted_run() {
        let data = make_mixture(128, 4, 1.5, 0.2, 2, false).unwrap();
        let full = trained_bundle(40);

        let mut half = trained_bundle(20);
        let bytes = checkpoint_bytes(&half);
        let mut resumed = load_checkpoint_bytes(&bytes).unwrap();
        resumed.config.steps = 40;
        train(&mut resumed, &data, None, None).unwrap();

        for (a, b) in full.denoiser.params().iter().zip(resumed.denoiser.params()) {
            assert_eq!(a.values(), b.values());
        }
        let _ = &mut half;
    }

    #[test]
    fn checkpoint_with_encoder_and_first_stage_roundtrips() {
        let mut rng = Rng::from_seed(5);
        let spec = ScheduleSpec::default_for(10);
        let net = DenoiserNet::new(
            DenoiserConfig::new(2)
                .with_hidden(vec![8])
                .with_embed_dim(4)
                .with_conditioning(Conditioning::ReprClass {
                    dim: 3,
                    num_classes: 4,
                }),
            &mut rng,
        );
        let enc = ReprEncoder::new(
            EncoderConfig::new(2, 3)
                .with_hidden(vec![6])
                .timestep_conditional()
                .with_classes(4)
                .with_embed_dim(4),
            &mut rng,
        );
        let mut fs = FirstStageNet::new(FirstStageConfig::new(2, 2), &mut rng);
        fs.rescale = Some(1.37);
        let mut config = TrainConfig::new(TrainMode::TLrdm);
        config.steps = 5;
        config.batch_size = 4;
        let mut bundle = ModelBundle::new(
            spec,
            net,
            Some(enc),
            FirstStage::Net(fs),
            config,
        )
        .unwrap();
        let data = make_mixture(64, 4, 1.5, 0.2, 6, true).unwrap();
        train(&mut bundle, &data, None, None).unwrap();

        let bytes = checkpoint_bytes(&bundle);
        let loaded = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&loaded), bytes);
        match &loaded.first_stage {
            FirstStage::Net(fs) => assert_eq!(fs.rescale, Some(1.37)),
            _ => panic!("first stage lost"),
        }
        assert!(loaded.encoder.is_some());
        assert_eq!(loaded.config.mode, TrainMode::TLrdm);
    }
}
