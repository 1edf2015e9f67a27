use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bcpredict::analysis;
use bcpredict::corpus::{self, AnnotateConfig, Channel, Instance, SynthConfig};
use bcpredict::dataset::{self, Dataset, FeatureStore};
use bcpredict::features::{self, write_atomic, PcmAudio};
use bcpredict::model::load_checkpoint;
use bcpredict::provenance::{derive_seed, with_worker_pool, Provenance};
use bcpredict::training;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CliConfig, ConfigError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: bcpredict::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core { source, .. } => source.kind(),
        }
    }
}

/// Attaches a short description of the failed step to library errors.
trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T, E: Into<bcpredict::Error>> Context<T> for Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::Core {
            context: what(),
            source: e.into(),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomic(path, body).map_err(io_err(path))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    config: &'a CliConfig,
}

/// Writes `run.json` with the resolved config and returns the provenance
/// stamped on every artifact of the command.
fn start(cfg: &CliConfig, command: &str) -> Result<Provenance, CliError> {
    let prov = Provenance::new(cfg, cfg.seed());
    let record = RunRecord {
        command,
        config_hash: &prov.config_hash,
        seed: prov.seed,
        config: cfg,
    };
    let mut body = serde_json::to_string_pretty(&record).expect("run record serializes");
    body.push('\n');
    write_file(&cfg.out.join("run.json"), body.as_bytes())?;
    Ok(prov)
}

fn read_instances(cfg: &CliConfig) -> Result<Vec<Instance>, CliError> {
    let path = cfg.manifest_path();
    corpus::read_manifest(&path).context(|| format!("reading manifest {}", path.display()))
}

fn load_store(cfg: &CliConfig, instances: &[Instance]) -> Result<FeatureStore, CliError> {
    let dir = cfg.cache_path();
    FeatureStore::from_cache(instances, &dir).context(|| format!("loading feature caches from {}", dir.display()))
}

pub fn features(cfg: &CliConfig) -> Result<(), CliError> {
    let audio_dir = cfg.require(&cfg.audio_dir, "audio_dir")?;
    let cache_dir = cfg.cache_dir.clone().unwrap_or_else(|| cfg.out.join("features"));
    let prov = start(cfg, "features")?;
    let mut inputs: Vec<(PathBuf, String, Channel)> = Vec::new();
    for entry in std::fs::read_dir(audio_dir).map_err(io_err(audio_dir))? {
        let path = entry.map_err(io_err(audio_dir))?.path();
        if path.extension().is_none_or(|e| e != "wav") {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let parsed = stem
            .rsplit_once('_')
            .and_then(|(dialog, ch)| Some((dialog.to_string(), ch.parse::<Channel>().ok()?)));
        match parsed {
            Some((dialog, ch)) => inputs.push((path, dialog, ch)),
            None => log::warn!("skipping {}: expected <dialog>_<A|B>.wav", path.display()),
        }
    }
    inputs.sort();
    std::fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
    let rows: Vec<Result<(String, Channel, usize, u32), CliError>> = with_worker_pool(|| {
        inputs
            .par_iter()
            .map(|(path, dialog, ch)| {
                let audio = PcmAudio::read_wav(path, &ch.to_string()).context(|| format!("reading {}", path.display()))?;
                let seq = features::mfcc(&audio).context(|| format!("extracting {}", path.display()))?;
                let dst = corpus::feature_cache_path(&cache_dir, dialog, *ch);
                features::cache_write(&dst, &seq.values).context(|| format!("writing {}", dst.display()))?;
                Ok((dialog.clone(), *ch, seq.n_frames(), audio.sample_rate))
            })
            .collect()
    });
    let mut index = prov.csv_comment();
    index.push_str("dialog_id,channel,n_frames,sample_rate\n");
    for row in rows {
        let (dialog, ch, n, rate) = row?;
        let _ = writeln!(index, "{dialog},{ch},{n},{rate}");
    }
    write_file(&cfg.out.join("features.csv"), index.as_bytes())?;
    log::info!("wrote {} feature caches to {}", inputs.len(), cache_dir.display());
    Ok(())
}

fn transcript_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err(path))? {
        let p = entry.map_err(io_err(path))?.path();
        if p.extension().is_some_and(|e| e == "tsv") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn annotate(cfg: &CliConfig) -> Result<(), CliError> {
    let transcripts = cfg.require(&cfg.transcripts, "transcripts")?;
    let lexicon = cfg.lexicon().context(|| "loading lexicons".to_string())?;
    let ann_cfg = AnnotateConfig {
        style: cfg.style(),
        negatives: cfg.negatives(),
        split_sizes: cfg.split_sizes()?,
        audio_dir: cfg.audio_dir.clone().unwrap_or_else(|| PathBuf::from("audio")),
        seed: derive_seed(cfg.seed(), "annotate"),
    };
    let prov = start(cfg, "annotate")?;
    let mut utterances = Vec::new();
    for file in transcript_files(transcripts)? {
        utterances.extend(corpus::parse_transcript(&file).context(|| format!("parsing {}", file.display()))?);
    }
    let ann = corpus::annotate(&utterances, &lexicon, &ann_cfg).context(|| "annotating".to_string())?;

    let manifest = cfg.manifest_path();
    if let Some(dir) = manifest.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    corpus::write_manifest(&manifest, &ann.instances).context(|| format!("writing {}", manifest.display()))?;

    let stats = format!("{}{}", prov.csv_comment(), ann.stats.to_csv());
    write_file(&cfg.out.join("stats.csv"), stats.as_bytes())?;

    let mut rej = prov.csv_comment();
    rej.push_str("dialog_id,channel,t_ms,reason,text\n");
    for r in &ann.rejections {
        let _ = writeln!(rej, "{},{},{},{},{}", r.dialog_id, r.channel, r.t_ms, r.reason, csv_field(&r.text));
        log::info!("rejected {} {} @{} ms: {} ({:?})", r.dialog_id, r.channel, r.t_ms, r.reason, r.text);
    }
    write_file(&cfg.out.join("rejections.csv"), rej.as_bytes())?;

    let mut ids = prov.csv_comment();
    ids.push_str("dialog_id,channel,interlocutor_id,filled\n");
    for ((dialog, ch), id) in &ann.ids.map {
        let filled = ann.ids.filled.contains(&(dialog.clone(), *ch));
        let _ = writeln!(ids, "{dialog},{ch},{id},{filled}");
    }
    write_file(&cfg.out.join("interlocutors.csv"), ids.as_bytes())?;

    log::info!(
        "{} instances ({} rejected) from {} utterances",
        ann.instances.len(),
        ann.rejections.len(),
        utterances.len()
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn synth(cfg: &CliConfig) -> Result<(), CliError> {
    let synth_cfg = SynthConfig {
        rule: cfg.synth_rule,
        balance: cfg.synth_balance,
        n_listeners: cfg.synth_listeners,
        n_speakers: cfg.synth_speakers,
        n_train: cfg.synth_train,
        n_dev: cfg.synth_dev,
        n_test: cfg.synth_test,
        instances_per_dialog: cfg.synth_per_dialog,
        n_frames: cfg.train.n_frames,
        noise: cfg.synth_noise,
        seed: derive_seed(cfg.seed(), "synth"),
    };
    let prov = start(cfg, "synth")?;
    let corpus = corpus::synth_corpus(&synth_cfg).context(|| "generating synthetic corpus".to_string())?;
    let manifest = cfg.manifest_path();
    let cache = cfg.cache_path();
    corpus
        .write(&manifest, &cache)
        .map_err(|e| CliError::Core {
            context: format!("writing {}", manifest.display()),
            source: e,
        })?;
    let stats = corpus::CorpusStats::from_instances(&corpus.instances);
    write_file(&cfg.out.join("stats.csv"), format!("{}{}", prov.csv_comment(), stats.to_csv()).as_bytes())?;
    log::info!("wrote {} synthetic instances to {}", corpus.instances.len(), manifest.display());
    Ok(())
}

pub fn train(cfg: &CliConfig) -> Result<(), CliError> {
    cfg.train.validate().context(|| "training config".to_string())?;
    let prov = start(cfg, "train")?;
    let instances = read_instances(cfg)?;
    let store = load_store(cfg, &instances)?;
    let data = Dataset::build(&instances, &store, cfg.train.n_frames).context(|| "building dataset".to_string())?;
    let outcome = with_worker_pool(|| training::train(&cfg.train, &data, dataset::vocabulary(&instances)))
        .context(|| format!("training {}", cfg.train.variant))?;
    let path = cfg.out.join("model.bcck");
    outcome.save(&cfg.train, &path).context(|| format!("writing {}", path.display()))?;
    write_file(&cfg.out.join("history.csv"), outcome.history.to_csv(&prov).as_bytes())?;
    let best = outcome.history.best();
    log::info!(
        "best epoch {} of {}: dev macro-F1 {:.4}, accuracy {:.4}",
        best.epoch,
        outcome.history.epochs.len(),
        best.dev_macro_f1,
        best.dev_accuracy
    );
    Ok(())
}

pub fn grid(cfg: &CliConfig) -> Result<(), CliError> {
    let grid = cfg.grid();
    let prov = start(cfg, "grid")?;
    let instances = read_instances(cfg)?;
    let store = load_store(cfg, &instances)?;
    log::info!("grid of {} configurations", grid.len());
    let runs_dir = cfg.out.join("runs");
    let result = training::grid_search(&grid, &cfg.train, &instances, &store, Some(&runs_dir))
        .context(|| "grid search".to_string())?;
    write_file(&cfg.out.join("grid.csv"), training::grid_csv(&result.ranked, &prov).as_bytes())?;
    if let Some(best) = result.ranked[0].checkpoint.as_ref() {
        let dst = cfg.out.join("best.bcck");
        std::fs::copy(best, &dst).map_err(io_err(&dst))?;
    }
    let top = &result.ranked[0];
    log::info!("best run {}: dev macro-F1 {:.4}", top.index, top.dev.macro_f1);
    Ok(())
}

/// The checkpoint and the examples of the configured split.
fn load_for_eval(cfg: &CliConfig) -> Result<(bcpredict::model::Model, Vec<Instance>, Vec<dataset::Example>), CliError> {
    let default_model = cfg.out.join("model.bcck");
    let model_path = cfg.model.clone().unwrap_or(default_model);
    let (model, meta) = load_checkpoint(&model_path).context(|| format!("loading {}", model_path.display()))?;
    log::info!(
        "checkpoint {}: {} over {} frames, trained with config {}",
        model_path.display(),
        model.variant(),
        model.config.n_frames,
        meta.config_hash
    );
    let instances = read_instances(cfg)?;
    let selected: Vec<Instance> = instances.iter().filter(|i| i.split == cfg.eval_split).cloned().collect();
    let store = load_store(cfg, &selected)?;
    let n = model.config.n_frames;
    let examples = selected
        .iter()
        .map(|inst| dataset::example(inst, &store, n))
        .collect::<bcpredict::Result<Vec<_>>>()
        .context(|| format!("building {} examples", cfg.eval_split))?;
    Ok((model, instances, examples))
}

pub fn eval(cfg: &CliConfig) -> Result<(), CliError> {
    let prov = start(cfg, "eval")?;
    let (model, _, examples) = load_for_eval(cfg)?;
    let report = with_worker_pool(|| analysis::evaluate(&model, &examples))
        .context(|| format!("evaluating on {}", cfg.eval_split))?;
    analysis::emit_eval_report(&report, &cfg.out, &prov).context(|| "writing eval report".to_string())?;
    log::info!(
        "{} on {}: accuracy {:.4}, macro-F1 {:.4}",
        model.variant(),
        cfg.eval_split,
        report.accuracy,
        report.macro_f1
    );
    Ok(())
}

pub fn embeddings(cfg: &CliConfig) -> Result<(), CliError> {
    let prov = start(cfg, "embeddings")?;
    let (model, instances, examples) = load_for_eval(cfg)?;
    let listeners = dataset::listener_ids(&instances);
    let a = with_worker_pool(|| analysis::analyze_embeddings(&model, &examples, &listeners))
        .context(|| "listener analysis".to_string())?;
    analysis::emit_embedding_report(&a, &cfg.out, &prov).context(|| "writing embedding report".to_string())?;
    log::info!(
        "{} listeners, mean macro-F1 {:.4}",
        listeners.len(),
        a.histogram.mean.unwrap_or(f64::NAN)
    );
    Ok(())
}
