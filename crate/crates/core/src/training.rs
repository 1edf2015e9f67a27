//! Mini-batch SGD with momentum and early stopping on dev macro-F1, and
//! grid search over the hyperparameter ranges.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, EvalReport};
use crate::corpus::{Instance, Split};
use crate::dataset::{self, Dataset, Example, FeatureStore};
use crate::model::{
    save_checkpoint, Activation, CheckpointMeta, Model, ModelConfig, ModelError, ModelParams, Variant, Vocabulary,
};
use crate::numerics::Mode;
use crate::provenance::{config_hash, derive_seed, fmt_g, with_worker_pool, Provenance};

pub const FILTER_WIDTHS: [usize; 3] = [10, 11, 12];
pub const N_FILTERS: [usize; 4] = [16, 32, 64, 128];
pub const DROPOUTS: [f64; 3] = [0.1, 0.3, 0.5];
pub const N_FRAMES: [usize; 4] = [48, 98, 148, 198];
pub const BATCH_SIZES: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("loss diverged at epoch {epoch}, batch {batch}: {detail}")]
    DivergedLoss { epoch: usize, batch: usize, detail: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Data(Box<crate::Error>),
}

impl TrainError {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainError::EmptySplit(_) => "empty_split",
            TrainError::DivergedLoss { .. } => "diverged_loss",
            TrainError::InvalidConfig(_) | TrainError::InvalidGrid(_) => "config",
            TrainError::Model(_) => "model",
            TrainError::Analysis(e) => e.kind(),
            TrainError::Data(e) => e.kind(),
        }
    }
}

impl From<crate::Error> for TrainError {
    fn from(e: crate::Error) -> Self {
        TrainError::Data(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub filter_width: usize,
    pub n_filters: usize,
    pub dropout: f64,
    pub pool_rows: usize,
    pub n_frames: usize,
    pub batch_size: usize,
    pub embedding_len: usize,
    pub ffn_hidden: usize,
    pub ffn_activation: Activation,
    pub sli_slices: usize,
    pub ntn_out: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            variant: m.variant,
            filter_width: m.filter_width,
            n_filters: m.n_filters,
            dropout: m.dropout,
            pool_rows: m.pool_rows,
            n_frames: m.n_frames,
            batch_size: 32,
            embedding_len: m.embedding_len,
            ffn_hidden: m.ffn_hidden,
            ffn_activation: m.ffn_activation,
            sli_slices: m.sli_slices,
            ntn_out: m.ntn_out,
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            n_frames: self.n_frames,
            filter_width: self.filter_width,
            n_filters: self.n_filters,
            pool_rows: self.pool_rows,
            embedding_len: self.embedding_len,
            ffn_hidden: self.ffn_hidden,
            ffn_activation: self.ffn_activation,
            sli_slices: self.sli_slices,
            ntn_out: self.ntn_out,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_csv(&self, prov: &Provenance) -> String {
        let mut s = prov.csv_comment();
        s.push_str("epoch,train_loss,dev_accuracy,dev_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                e.epoch,
                fmt_g(e.train_loss),
                fmt_g(e.dev_accuracy),
                fmt_g(e.dev_macro_f1)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
}

impl TrainOutcome {
    pub fn checkpoint_meta(&self, config: &TrainConfig) -> CheckpointMeta {
        CheckpointMeta {
            seed: config.seed,
            config_hash: config_hash(config),
            run_config: serde_json::to_value(config).expect("config serializes"),
        }
    }

    pub fn save(&self, config: &TrainConfig, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, &self.checkpoint_meta(config))?;
        Ok(())
    }
}

/// Table rows of the speaker and listener of every example.
fn resolve_all(model: &Model, examples: &[Example]) -> Result<Vec<(Option<usize>, Option<usize>)>> {
    examples
        .iter()
        .map(|e| Ok(model.resolve_ids(Some(&e.speaker_id), Some(&e.listener_id))?))
        .collect()
}

/// Trains from the seeded initialization, keeping the parameters of the
/// epoch with the best dev macro-F1 (earliest on ties).
pub fn train(config: &TrainConfig, data: &Dataset, vocab: Vocabulary) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if data.dev.is_empty() {
        return Err(TrainError::EmptySplit(Split::Dev));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout"));
    let mut model = Model::new(config.model_config(), vocab, &mut init_rng)?;
    let ids = resolve_all(&model, &data.train)?;
    resolve_all(&model, &data.dev)?;

    let mut velocity = model.params.zeros_like();
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            for (_, g) in grads.tensors_mut() {
                g.fill(0.0);
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &data.train[i];
                let (s, l) = ids[i];
                let trace = model.trace(&ex.window, s, l, Mode::Train, &mut dropout_rng)?;
                batch_loss += model.backward(&ex.window, &trace, ex.label, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {batch_loss} over {} instances", batch.len()),
                });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let lr = config.learning_rate;
            let mu = config.momentum;
            for (((_, p), (_, v)), (_, g)) in model
                .params
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .zip(grads.tensors())
            {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = mu * *v - lr * g * scale;
                    *p += *v;
                }
            }
        }
        let dev = analysis::evaluate(&model, &data.dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            dev_accuracy: dev.accuracy,
            dev_macro_f1: dev.macro_f1,
        };
        log::debug!(
            "epoch {epoch}: loss {} dev acc {} dev F1 {}",
            fmt_g(record.train_loss),
            fmt_g(dev.accuracy),
            fmt_g(dev.macro_f1)
        );
        epochs.push(record);
        let improved = best.as_ref().is_none_or(|(f1, _, _)| dev.macro_f1 > *f1);
        if improved {
            best = Some((dev.macro_f1, epoch, model.params.clone()));
        } else if epoch - best.as_ref().unwrap().1 >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history: TrainHistory {
            epochs,
            best_epoch,
            stop_reason,
        },
    })
}

/// Value lists crossed into training configurations; a single filter width
/// per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub filter_widths: Vec<usize>,
    pub n_filters: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub n_frames: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Grid {
    /// The full published ranges at the default learning rate.
    pub fn full() -> Self {
        Self {
            filter_widths: FILTER_WIDTHS.to_vec(),
            n_filters: N_FILTERS.to_vec(),
            dropouts: DROPOUTS.to_vec(),
            n_frames: N_FRAMES.to_vec(),
            batch_sizes: BATCH_SIZES.to_vec(),
            learning_rates: vec![TrainConfig::default().learning_rate],
        }
    }

    /// The grid containing only `base`.
    pub fn singleton(base: &TrainConfig) -> Self {
        Self {
            filter_widths: vec![base.filter_width],
            n_filters: vec![base.n_filters],
            dropouts: vec![base.dropout],
            n_frames: vec![base.n_frames],
            batch_sizes: vec![base.batch_size],
            learning_rates: vec![base.learning_rate],
        }
    }

    pub fn len(&self) -> usize {
        self.filter_widths.len()
            * self.n_filters.len()
            * self.dropouts.len()
            * self.n_frames.len()
            * self.batch_sizes.len()
            * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every listed value must come from the published ranges; learning
    /// rates are free.
    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialEq + std::fmt::Debug>(name: &str, values: &[T], allowed: &[T]) -> Result<()> {
            if values.is_empty() {
                return Err(TrainError::InvalidGrid(format!("{name} is empty")));
            }
            if let Some(v) = values.iter().find(|v| !allowed.contains(v)) {
                return Err(TrainError::InvalidGrid(format!("{name} value {v:?} not in {allowed:?}")));
            }
            for (i, v) in values.iter().enumerate() {
                if values[..i].contains(v) {
                    return Err(TrainError::InvalidGrid(format!("{name} lists {v:?} twice")));
                }
            }
            Ok(())
        }
        check("filter_widths", &self.filter_widths, &FILTER_WIDTHS)?;
        check("n_filters", &self.n_filters, &N_FILTERS)?;
        check("dropouts", &self.dropouts, &DROPOUTS)?;
        check("n_frames", &self.n_frames, &N_FRAMES)?;
        check("batch_sizes", &self.batch_sizes, &BATCH_SIZES)?;
        if self.learning_rates.is_empty() {
            return Err(TrainError::InvalidGrid("learning_rates is empty".into()));
        }
        Ok(())
    }

    /// The cross-product in enumeration order: filter width outermost,
    /// learning rate innermost.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &filter_width in &self.filter_widths {
            for &n_filters in &self.n_filters {
                for &dropout in &self.dropouts {
                    for &n_frames in &self.n_frames {
                        for &batch_size in &self.batch_sizes {
                            for &learning_rate in &self.learning_rates {
                                out.push(TrainConfig {
                                    filter_width,
                                    n_filters,
                                    dropout,
                                    n_frames,
                                    batch_size,
                                    learning_rate,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridRun {
    /// Position in enumeration order.
    pub index: usize,
    pub config: TrainConfig,
    pub history: TrainHistory,
    pub dev: EvalReport,
    pub test: Option<EvalReport>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Runs best first.
    pub ranked: Vec<GridRun>,
    pub best_model: Model,
}

/// Dev macro-F1 descending, then dev accuracy descending, then enumeration
/// order.
pub fn rank_runs(runs: &mut [GridRun]) {
    runs.sort_by(|a, b| {
        b.dev
            .macro_f1
            .total_cmp(&a.dev.macro_f1)
            .then(b.dev.accuracy.total_cmp(&a.dev.accuracy))
            .then(a.index.cmp(&b.index))
    });
}

/// Trains every grid configuration, in parallel worker slots, and ranks
/// the results. With `checkpoint_dir`, each run is saved as
/// `run_NNN.bcck`.
pub fn grid_search(
    grid: &Grid,
    base: &TrainConfig,
    instances: &[Instance],
    store: &FeatureStore,
    checkpoint_dir: Option<&Path>,
) -> Result<GridResult> {
    grid.validate()?;
    let configs = grid.configs(base);
    let vocab = dataset::vocabulary(instances);
    let mut datasets = BTreeMap::new();
    for &n in &grid.n_frames {
        datasets.insert(n, Dataset::build(instances, store, n)?);
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(crate::Error::from)?;
    }
    let results: Vec<Result<(GridRun, Model)>> = with_worker_pool(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(index, cfg)| {
                let data = &datasets[&cfg.n_frames];
                let outcome = train(cfg, data, vocab.clone())?;
                let dev = analysis::evaluate(&outcome.model, &data.dev)?;
                let test = if data.test.is_empty() {
                    None
                } else {
                    Some(analysis::evaluate(&outcome.model, &data.test)?)
                };
                let checkpoint = match checkpoint_dir {
                    Some(dir) => {
                        let path = dir.join(format!("run_{index:03}.bcck"));
                        outcome.save(cfg, &path)?;
                        Some(path)
                    }
                    None => None,
                };
                log::info!("grid run {index}: dev F1 {}", fmt_g(dev.macro_f1));
                Ok((
                    GridRun {
                        index,
                        config: cfg.clone(),
                        history: outcome.history,
                        dev,
                        test,
                        checkpoint,
                    },
                    outcome.model,
                ))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    for r in results {
        let (run, model) = r?;
        runs.push(run);
        models.push(model);
    }
    rank_runs(&mut runs);
    let best_model = models.swap_remove(runs[0].index);
    Ok(GridResult {
        ranked: runs,
        best_model,
    })
}

/// One row per run in rank order with its hyperparameters, dev/test
/// metrics and checkpoint path.
pub fn grid_csv(runs: &[GridRun], prov: &Provenance) -> String {
    let mut s = prov.csv_comment();
    s.push_str(
        "rank,run,variant,filter_width,n_filters,dropout,n_frames,batch_size,learning_rate,best_epoch,\
         dev_accuracy,dev_macro_f1,test_accuracy,test_macro_f1,checkpoint\n",
    );
    for (rank, r) in runs.iter().enumerate() {
        let c = &r.config;
        let (ta, tf) = match &r.test {
            Some(t) => (fmt_g(t.accuracy), fmt_g(t.macro_f1)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            r.index,
            c.variant,
            c.filter_width,
            c.n_filters,
            fmt_g(c.dropout),
            c.n_frames,
            c.batch_size,
            fmt_g(c.learning_rate),
            r.history.best_epoch,
            fmt_g(r.dev.accuracy),
            fmt_g(r.dev.macro_f1),
            ta,
            tf,
            r.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );
    }
    s
}
