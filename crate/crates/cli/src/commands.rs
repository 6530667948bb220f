use std::fs;
use std::path::{Path, PathBuf};

use accomp_core::bottleneck::{train_vqvae_from, VqStepLog, VqTrainState, VqVaeModel};
use accomp_core::checkpoint::Checkpoint;
use accomp_core::dsp::{
    chromagram, load_wav, mel_spectrogram, resample_linear, save_wav, Chromagram, TimbreSpec, Waveform, N_MELS,
    SAMPLE_RATE,
};
use accomp_core::flow::{
    build_condition, generate_accompaniment, noise_snr_for_clip, train_fm_from, ConditioningMode, FmModel, FmPair,
    FmStepLog, FmTrainState, Teacher,
};
use accomp_core::metrics::{embed_clips, frechet_distance, Embedder, MelStatsEmbedder};
use accomp_core::repr_eval::{build_controlled_set, representation_report, scatter_svg, ProjectionReport};
use accomp_core::rng::{derive_rng, derive_seed};
use accomp_core::synthetic::{accompaniment_for, accompaniment_timbre, random_melody, render_clip};
use anyhow::{bail, Context};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{Manifest, ManifestRecord, Role};
use crate::workspace::{create_parent, wav_files, Layout, LossLog};

fn load_clip(path: &Path) -> anyhow::Result<Waveform> {
    let w = load_wav(path).with_context(|| format!("loading {}", path.display()))?;
    if w.sample_rate() == SAMPLE_RATE {
        return Ok(w);
    }
    Ok(resample_linear(&w, SAMPLE_RATE)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn timbres(count: usize) -> anyhow::Result<Vec<TimbreSpec>> {
    let presets = TimbreSpec::presets();
    if count > presets.len() {
        bail!("recipe asks for {count} timbres; {} are available", presets.len());
    }
    Ok(presets.into_iter().take(count).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub manifest: PathBuf,
    pub vocal_clips: usize,
    pub accompaniment_clips: usize,
}

/// Renders the synthetic paired corpus and its manifest.
pub fn prepare_data(config: &RunConfig) -> anyhow::Result<PrepareSummary> {
    let layout = Layout::new(&config.output_dir);
    let recipe = &config.data;
    let timbres = timbres(recipe.timbres)?;
    let (vocal_dir, acc_dir) = (layout.vocal_dir(), layout.accompaniment_dir());
    for d in [&vocal_dir, &acc_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let relative = |p: &Path| p.strip_prefix(layout.root()).expect("inside output dir").to_path_buf();
    let mut manifest = Manifest::default();
    for m in 0..recipe.melodies {
        let mut rng = derive_rng(config.seed, "data.melody", m as u64);
        let melody = random_melody(&mut rng, recipe.duration_s)?;
        let accompaniment = render_clip(&accompaniment_for(&melody)?, &accompaniment_timbre(), recipe.duration_s)?;
        for (t, timbre) in timbres.iter().enumerate() {
            let pair_id = (m * timbres.len() + t) as u64;
            let vocal = render_clip(&melody, timbre, recipe.duration_s)?;
            let name = format!("pair_{pair_id:04}.wav");
            for (dir, wave, role, timbre_name) in [
                (&vocal_dir, &vocal, Role::Vocal, timbre.name.clone()),
                (&acc_dir, &accompaniment, Role::Accompaniment, accompaniment_timbre().name),
            ] {
                let path = dir.join(&name);
                save_wav(&path, wave)?;
                manifest.records.push(ManifestRecord {
                    clip_path: relative(&path),
                    role,
                    pair_id,
                    duration_s: wave.duration_s(),
                    melody_label: Some(format!("melody-{m:03}")),
                    timbre_label: Some(timbre_name),
                });
            }
        }
    }
    let path = layout.manifest();
    manifest.write(&path)?;
    let count = |r: Role| manifest.records.iter().filter(|x| x.role == r).count();
    Ok(PrepareSummary {
        manifest: path,
        vocal_clips: count(Role::Vocal),
        accompaniment_clips: count(Role::Accompaniment),
    })
}

fn read_manifest(layout: &Layout) -> anyhow::Result<(Manifest, PathBuf)> {
    let path = layout.manifest();
    if !path.is_file() {
        bail!("no manifest at {}; run prepare-data first", path.display());
    }
    let m = Manifest::read(&path)?;
    Ok((m, path.parent().unwrap_or(Path::new(".")).to_path_buf()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub first_step: u64,
    pub final_step: u64,
    pub final_loss: Option<f64>,
}

fn save_with_loss(mut ck: Checkpoint, final_loss: Option<f64>, extra: &[(&str, serde_json::Value)], path: &Path) -> anyhow::Result<()> {
    if let serde_json::Value::Object(map) = &mut ck.metadata {
        if let Some(loss) = final_loss {
            map.insert("final_loss".into(), loss.into());
        }
        for (k, v) in extra {
            map.insert((*k).into(), v.clone());
        }
    }
    create_parent(path)?;
    ck.save(path)?;
    Ok(())
}

fn previous_loss(path: &Path) -> Option<f64> {
    Checkpoint::load(path).ok()?.metadata.get("final_loss")?.as_f64()
}

fn should_log(step: u64, every: u64, last: u64) -> bool {
    step % every == 0 || step == last || step == 1
}

pub fn train_vqvae(config: &RunConfig, resume: bool) -> anyhow::Result<TrainSummary> {
    let layout = Layout::new(&config.output_dir);
    let (manifest, base) = read_manifest(&layout)?;
    let chroma: Vec<Chromagram> = manifest
        .melody_clips()
        .map(|r| Ok(chromagram(&load_clip(&base.join(&r.clip_path))?)?))
        .collect::<anyhow::Result<_>>()?;
    let (ckpt, log_path) = (layout.vqvae_checkpoint(), layout.vqvae_log());
    let mut state = if resume {
        VqTrainState::load(&ckpt, &config.vqvae).with_context(|| format!("resuming from {}", ckpt.display()))?
    } else {
        VqTrainState::init(&chroma, &config.vqvae, config.seed)?
    };
    let first_step = state.step;
    let mut final_loss = if resume { previous_loss(&ckpt) } else { None };
    let mut log = LossLog::open(&log_path, resume.then_some(state.step))?;
    let target = config.vqvae.steps;
    let mut chunk = config.vqvae.clone();
    while state.step < target {
        chunk.steps = (state.step / config.checkpoint_every + 1) * config.checkpoint_every;
        chunk.steps = chunk.steps.min(target);
        let out = train_vqvae_from(state, &chroma, &chunk, |_: &VqStepLog| {})?;
        for l in out.log.iter().filter(|l| should_log(l.step, config.log_every, target)) {
            log.append(l)?;
        }
        final_loss = out.log.last().map(|l| l.total).or(final_loss);
        state = out.state;
        save_with_loss(state.to_checkpoint(), final_loss, &[], &ckpt)?;
        log::info!("vqvae step {}/{target} loss {:?}", state.step, final_loss);
    }
    if !ckpt.exists() {
        save_with_loss(state.to_checkpoint(), final_loss, &[], &ckpt)?;
    }
    Ok(TrainSummary {
        checkpoint: ckpt,
        log: log_path,
        first_step,
        final_step: state.step,
        final_loss,
    })
}

fn load_vqvae(config: &RunConfig, layout: &Layout) -> anyhow::Result<VqVaeModel> {
    let path = layout.vqvae_checkpoint();
    if !path.is_file() {
        bail!("no vqvae checkpoint at {}; run train-vqvae first", path.display());
    }
    VqVaeModel::load(&path, Some(&config.vqvae.model)).with_context(|| format!("loading {}", path.display()))
}

fn vq_for_mode(config: &RunConfig, layout: &Layout) -> anyhow::Result<Option<VqVaeModel>> {
    match config.conditioning_mode {
        ConditioningMode::Codes => Ok(Some(load_vqvae(config, layout)?)),
        _ => Ok(None),
    }
}

pub fn train_fm(config: &RunConfig, resume: bool) -> anyhow::Result<TrainSummary> {
    let layout = Layout::new(&config.output_dir);
    let (manifest, base) = read_manifest(&layout)?;
    let mode = config.conditioning_mode;
    let vq = vq_for_mode(config, &layout)?;
    let pairs: Vec<FmPair> = manifest
        .pairs()
        .iter()
        .map(|p| {
            let vocal = load_clip(&base.join(&p.vocal.clip_path))?;
            let acc = load_clip(&base.join(&p.accompaniment.clip_path))?;
            let noise = (mode == ConditioningMode::MelNoisy).then(|| {
                let id = p.vocal.pair_id;
                (
                    noise_snr_for_clip(config.seed, id, config.dsp.noise_snr_db),
                    derive_seed(config.seed, "fm.noise", id),
                )
            });
            Ok(FmPair {
                mel: mel_spectrogram(&acc)?,
                condition: build_condition(mode, vq.as_ref(), &vocal, noise)?,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    if pairs.is_empty() {
        bail!("manifest has no vocal/accompaniment pairs");
    }
    let (ckpt, log_path) = (layout.fm_checkpoint(mode), layout.fm_log(mode));
    let vq_hash: serde_json::Value = vq.as_ref().map(|m| m.config_hash().into()).unwrap_or_default();
    let mut state = if resume {
        let ck = Checkpoint::load(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        check_vq_reference(&ck, &vq_hash)?;
        FmTrainState::from_checkpoint(&ck, &config.fm)?
    } else {
        FmTrainState::init(&pairs, &config.fm, config.seed)?
    };
    let first_step = state.step;
    let mut final_loss = if resume { previous_loss(&ckpt) } else { None };
    let mut log = LossLog::open(&log_path, resume.then_some(state.step))?;
    let target = config.fm.steps;
    let mut chunk = config.fm.clone();
    let extra = [("vqvae_config_hash", vq_hash.clone())];
    while state.step < target {
        chunk.steps = ((state.step / config.checkpoint_every + 1) * config.checkpoint_every).min(target);
        let out = train_fm_from(state, &pairs, &chunk, |_: &FmStepLog| {})?;
        for l in out.log.iter().filter(|l| should_log(l.step, config.log_every, target)) {
            log.append(l)?;
        }
        final_loss = out.log.last().map(|l| l.total).or(final_loss);
        state = out.state;
        save_with_loss(state.to_checkpoint(), final_loss, &extra, &ckpt)?;
        log::info!("fm ({mode}) step {}/{target} loss {:?}", state.step, final_loss);
    }
    if !ckpt.exists() {
        save_with_loss(state.to_checkpoint(), final_loss, &extra, &ckpt)?;
    }
    Ok(TrainSummary {
        checkpoint: ckpt,
        log: log_path,
        first_step,
        final_step: state.step,
        final_loss,
    })
}

fn check_vq_reference(ck: &Checkpoint, vq_hash: &serde_json::Value) -> anyhow::Result<()> {
    let recorded = ck.metadata.get("vqvae_config_hash").cloned().unwrap_or_default();
    if &recorded != vq_hash {
        bail!("flow-matching checkpoint was trained against vqvae config {recorded}, but the loaded vqvae has {vq_hash}");
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub output: PathBuf,
    pub input_samples: usize,
    pub output_samples: usize,
}

pub fn generate(config: &RunConfig, input: &Path, output: &Path) -> anyhow::Result<GenerateSummary> {
    let layout = Layout::new(&config.output_dir);
    let mode = config.conditioning_mode;
    let vq = vq_for_mode(config, &layout)?;
    let path = layout.fm_checkpoint(mode);
    if !path.is_file() {
        bail!("no {mode} flow-matching checkpoint at {}; run train-fm first", path.display());
    }
    let ck = Checkpoint::load(&path)?;
    let vq_hash = vq.as_ref().map(|m| m.config_hash().into()).unwrap_or_default();
    check_vq_reference(&ck, &vq_hash)?;
    let fm = FmModel::from_checkpoint(&ck, Some(&config.fm.model)).with_context(|| format!("loading {}", path.display()))?;
    let vocal = load_clip(input)?;
    let audio = generate_accompaniment(vq.as_ref(), &fm, &vocal, &config.sampler, config.dsp.griffin_lim_iterations)?;
    create_parent(output)?;
    save_wav(output, &audio)?;
    Ok(GenerateSummary {
        output: output.to_path_buf(),
        input_samples: vocal.len(),
        output_samples: audio.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetSummary {
    pub dir: PathBuf,
    pub clips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub embedder: String,
    pub embedding_dim: usize,
    pub config_hash: String,
    pub generated: SetSummary,
    pub reference: SetSummary,
    pub fad: f64,
}

pub fn evaluate(
    config: &RunConfig,
    generated: Option<&Path>,
    reference: Option<&Path>,
    report: Option<&Path>,
) -> anyhow::Result<(EvaluationReport, PathBuf)> {
    let layout = Layout::new(&config.output_dir);
    let generated = generated.map(Path::to_path_buf).unwrap_or_else(|| layout.generated_dir());
    let reference = reference.map(Path::to_path_buf).unwrap_or_else(|| layout.accompaniment_dir());
    let embedder = MelStatsEmbedder;
    let mut sets = Vec::new();
    for dir in [&generated, &reference] {
        let files = wav_files(dir)?;
        if files.is_empty() {
            bail!("{} contains no WAV files", dir.display());
        }
        let clips: Vec<Waveform> = files.iter().map(|f| load_clip(f)).collect::<anyhow::Result<_>>()?;
        let stats = embed_clips(&clips, &embedder).with_context(|| format!("embedding {}", dir.display()))?;
        sets.push((SetSummary { dir: dir.clone(), clips: clips.len() }, stats));
    }
    let fad = frechet_distance(&sets[0].1, &sets[1].1)?;
    let mut sets = sets.into_iter().map(|(s, _)| s);
    let out = EvaluationReport {
        embedder: embedder.id().to_string(),
        embedding_dim: embedder.dim(),
        config_hash: config.hash(),
        generated: sets.next().unwrap(),
        reference: sets.next().unwrap(),
        fad,
    };
    let path = report.map(Path::to_path_buf).unwrap_or_else(|| layout.reports_dir().join("evaluation.json"));
    write_json(&path, &out)?;
    Ok((out, path))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepresentationDocument {
    pub config_hash: String,
    pub vqvae_config_hash: String,
    pub pca_preprocessing: String,
    pub melodies: usize,
    pub timbres: Vec<String>,
    pub records: Vec<ProjectionReport>,
}

pub fn visualize(config: &RunConfig) -> anyhow::Result<(RepresentationDocument, Vec<PathBuf>)> {
    let layout = Layout::new(&config.output_dir);
    let vq = load_vqvae(config, &layout)?;
    let recipe = &config.visualize;
    let timbres = timbres(recipe.timbres)?;
    let melodies = (0..recipe.melodies)
        .map(|m| random_melody(&mut derive_rng(config.seed, "visualize.melody", m as u64), recipe.duration_s))
        .collect::<accomp_core::Result<Vec<_>>>()?;
    let clips = build_controlled_set(&melodies, &timbres)?;
    let teacher = Teacher::new(N_MELS, config.fm.model.teacher_dim);
    let records = representation_report(&clips, &vq, &teacher)?;
    let dir = layout.reports_dir();
    let mut written = Vec::new();
    for r in &records {
        let path = dir.join(format!("{}.svg", r.representation.name()));
        create_parent(&path)?;
        fs::write(&path, scatter_svg(r)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    let doc = RepresentationDocument {
        config_hash: config.hash(),
        vqvae_config_hash: vq.config_hash(),
        pca_preprocessing: "mean-centred, unscaled".into(),
        melodies: recipe.melodies,
        timbres: timbres.iter().map(|t| t.name.clone()).collect(),
        records,
    };
    let path = dir.join("representations.json");
    write_json(&path, &doc)?;
    written.insert(0, path);
    Ok((doc, written))
}
