//! Flat `key = value` run configuration.
//!
//! Values are resolved in this order, later sources winning: built-in
//! defaults, the `--config` file, `--set key=value` pairs, then the
//! dedicated flags (`--seed`, `--variant`, `--sli`, `--frames`, paths).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use bcpredict::corpus::{
    AnnotationStyle, ClassBalance, LexiconFiles, NegativeSampling, Split, SplitSizes, SynthRule, TokenLexicon,
};
use bcpredict::model::{Activation, Variant};
use bcpredict::training::{Grid, TrainConfig};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    English,
    German,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// Every value range of the standard search.
    Full,
    /// Only the base configuration.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliConfig {
    #[serde(flatten)]
    pub train: TrainConfig,

    pub audio_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,

    pub annotation_style: &'static str,
    pub language: Language,
    pub lexicon_yeah: Option<PathBuf>,
    pub lexicon_uhhuh: Option<PathBuf>,
    pub lexicon_exclusion: Option<PathBuf>,
    pub lexicon_multiword: Option<PathBuf>,
    pub lexicon_intensifiers: Option<PathBuf>,
    pub negative_offset_ms: u64,
    pub negative_window_ms: u64,
    pub split_train: Option<usize>,
    pub split_dev: Option<usize>,
    pub split_test: Option<usize>,

    pub synth_rule: SynthRule,
    pub synth_balance: ClassBalance,
    pub synth_listeners: usize,
    pub synth_speakers: usize,
    pub synth_train: usize,
    pub synth_dev: usize,
    pub synth_test: usize,
    pub synth_per_dialog: usize,
    pub synth_noise: f64,

    pub eval_split: Split,

    pub grid: GridPreset,
    pub grid_filter_widths: Option<Vec<usize>>,
    pub grid_n_filters: Option<Vec<usize>>,
    pub grid_dropouts: Option<Vec<f64>>,
    pub grid_n_frames: Option<Vec<usize>>,
    pub grid_batch_sizes: Option<Vec<usize>>,
    pub grid_learning_rates: Option<Vec<f64>>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let synth = bcpredict::corpus::SynthConfig::default();
        let neg = NegativeSampling::default();
        Self {
            train: TrainConfig::default(),
            audio_dir: None,
            cache_dir: None,
            transcripts: None,
            manifest: None,
            model: None,
            out: PathBuf::from("out"),
            annotation_style: "swda",
            language: Language::English,
            lexicon_yeah: None,
            lexicon_uhhuh: None,
            lexicon_exclusion: None,
            lexicon_multiword: None,
            lexicon_intensifiers: None,
            negative_offset_ms: neg.offset_ms,
            negative_window_ms: neg.window_ms,
            split_train: None,
            split_dev: None,
            split_test: None,
            synth_rule: synth.rule,
            synth_balance: synth.balance,
            synth_listeners: synth.n_listeners,
            synth_speakers: synth.n_speakers,
            synth_train: synth.n_train,
            synth_dev: synth.n_dev,
            synth_test: synth.n_test,
            synth_per_dialog: synth.instances_per_dialog,
            synth_noise: synth.noise,
            eval_split: Split::Test,
            grid: GridPreset::Full,
            grid_filter_widths: None,
            grid_n_filters: None,
            grid_dropouts: None,
            grid_n_frames: None,
            grid_batch_sizes: None,
            grid_learning_rates: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            ConfigError(format!("bad value {value:?} for {key}; expected one of {}", names.join(", ")))
        })
}

impl CliConfig {
    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "variant" => t.variant = parse(key, value)?,
            "sli" => {
                t.variant = Variant::from_sli_name(value)
                    .ok_or_else(|| ConfigError(format!("bad value {value:?} for sli; expected sum, bilinear or ntn")))?
            }
            "frames" | "n_frames" => t.n_frames = parse(key, value)?,
            "filter_width" => t.filter_width = parse(key, value)?,
            "n_filters" => t.n_filters = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "pool_rows" => t.pool_rows = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "embedding_len" => t.embedding_len = parse(key, value)?,
            "ffn_hidden" => t.ffn_hidden = parse(key, value)?,
            "ffn_activation" => {
                t.ffn_activation = choice(key, value, &[("tanh", Activation::Tanh), ("identity", Activation::Identity)])?
            }
            "sli_slices" => t.sli_slices = parse(key, value)?,
            "ntn_out" => t.ntn_out = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,

            "audio_dir" => self.audio_dir = path(value),
            "cache_dir" => self.cache_dir = path(value),
            "transcripts" => self.transcripts = path(value),
            "manifest" => self.manifest = path(value),
            "model" => self.model = path(value),
            "out" => self.out = PathBuf::from(value),

            "annotation_style" => self.annotation_style = choice(key, value, &[("swda", "swda"), ("geco", "geco")])?,
            "language" => {
                self.language = match value {
                    "english" => Language::English,
                    "german" => Language::German,
                    _ => return Err(ConfigError(format!("bad value {value:?} for language"))),
                }
            }
            "lexicon_yeah" => self.lexicon_yeah = path(value),
            "lexicon_uhhuh" => self.lexicon_uhhuh = path(value),
            "lexicon_exclusion" => self.lexicon_exclusion = path(value),
            "lexicon_multiword" => self.lexicon_multiword = path(value),
            "lexicon_intensifiers" => self.lexicon_intensifiers = path(value),
            "negative_offset_ms" => self.negative_offset_ms = parse(key, value)?,
            "negative_window_ms" => self.negative_window_ms = parse(key, value)?,
            "split_train" => self.split_train = Some(parse(key, value)?),
            "split_dev" => self.split_dev = Some(parse(key, value)?),
            "split_test" => self.split_test = Some(parse(key, value)?),

            "synth_rule" => {
                self.synth_rule = choice(
                    key,
                    value,
                    &[
                        ("audio_only", SynthRule::AudioOnly),
                        ("audio_plus_listener", SynthRule::AudioPlusListener),
                    ],
                )?
            }
            "synth_balance" => {
                self.synth_balance = choice(
                    key,
                    value,
                    &[("uniform", ClassBalance::Uniform), ("half_negative", ClassBalance::HalfNegative)],
                )?
            }
            "synth_listeners" => self.synth_listeners = parse(key, value)?,
            "synth_speakers" => self.synth_speakers = parse(key, value)?,
            "synth_train" => self.synth_train = parse(key, value)?,
            "synth_dev" => self.synth_dev = parse(key, value)?,
            "synth_test" => self.synth_test = parse(key, value)?,
            "synth_per_dialog" => self.synth_per_dialog = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,

            "eval_split" => self.eval_split = parse(key, value)?,

            "grid" => self.grid = choice(key, value, &[("full", GridPreset::Full), ("base", GridPreset::Base)])?,
            "grid_filter_widths" => self.grid_filter_widths = Some(parse_list(key, value)?),
            "grid_n_filters" => self.grid_n_filters = Some(parse_list(key, value)?),
            "grid_dropouts" => self.grid_dropouts = Some(parse_list(key, value)?),
            "grid_n_frames" => self.grid_n_frames = Some(parse_list(key, value)?),
            "grid_batch_sizes" => self.grid_batch_sizes = Some(parse_list(key, value)?),
            "grid_learning_rates" => self.grid_learning_rates = Some(parse_list(key, value)?),
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
        value
            .as_deref()
            .ok_or_else(|| ConfigError(format!("{key} is required (flag or config key)")))
    }

    /// The manifest to read, defaulting to the one `synth` or `annotate`
    /// writes under `out`.
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("manifest.jsonl"))
    }

    /// Feature caches default to `features/` next to the manifest.
    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| {
            self.manifest_path()
                .parent()
                .map(|p| p.join("features"))
                .unwrap_or_else(|| PathBuf::from("features"))
        })
    }

    pub fn style(&self) -> AnnotationStyle {
        if self.annotation_style == "geco" {
            AnnotationStyle::Geco
        } else {
            AnnotationStyle::Swda
        }
    }

    pub fn lexicon(&self) -> Result<TokenLexicon, bcpredict::corpus::CorpusError> {
        let base = match self.language {
            Language::English => TokenLexicon::english(),
            Language::German => TokenLexicon::german(),
        };
        base.with_files(&LexiconFiles {
            yeah: self.lexicon_yeah.clone(),
            uhhuh: self.lexicon_uhhuh.clone(),
            exclusion: self.lexicon_exclusion.clone(),
            multiword: self.lexicon_multiword.clone(),
            intensifiers: self.lexicon_intensifiers.clone(),
        })
    }

    pub fn negatives(&self) -> NegativeSampling {
        NegativeSampling {
            offset_ms: self.negative_offset_ms,
            window_ms: self.negative_window_ms,
        }
    }

    /// Conversation split sizes, all three or none.
    pub fn split_sizes(&self) -> Result<Option<SplitSizes>, ConfigError> {
        match (self.split_train, self.split_dev, self.split_test) {
            (None, None, None) => Ok(None),
            (Some(train), Some(dev), Some(test)) => Ok(Some(SplitSizes { train, dev, test })),
            _ => Err(ConfigError("split_train, split_dev and split_test go together".into())),
        }
    }

    pub fn grid(&self) -> Grid {
        let mut g = match self.grid {
            GridPreset::Full => Grid {
                learning_rates: vec![self.train.learning_rate],
                ..Grid::full()
            },
            GridPreset::Base => Grid::singleton(&self.train),
        };
        let pick = |dst: &mut Vec<usize>, src: &Option<Vec<usize>>| {
            if let Some(v) = src {
                dst.clone_from(v);
            }
        };
        pick(&mut g.filter_widths, &self.grid_filter_widths);
        pick(&mut g.n_filters, &self.grid_n_filters);
        pick(&mut g.n_frames, &self.grid_n_frames);
        pick(&mut g.batch_sizes, &self.grid_batch_sizes);
        if let Some(v) = &self.grid_dropouts {
            g.dropouts.clone_from(v);
        }
        if let Some(v) = &self.grid_learning_rates {
            g.learning_rates.clone_from(v);
        }
        g
    }
}
