#![allow(dead_code)]

use bcpredict::corpus::{synth_corpus, ClassBalance, SynthConfig, SynthCorpus, SynthRule};
use bcpredict::dataset::{self, Dataset, FeatureStore};
use bcpredict::model::{Activation, Model, ModelConfig, ModelParams, Variant, Vocabulary, N_CLASSES};
use bcpredict::corpus::Label;
use bcpredict::numerics::{cross_entropy, grad_check, GradCheckReport, Mode, Tensor2D, DEFAULT_GRAD_EPS};
use bcpredict::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SYNTH_FRAMES: usize = 48;

pub fn synth(rule: SynthRule, seed: u64) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        rule,
        balance: ClassBalance::Uniform,
        n_frames: SYNTH_FRAMES,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn synth_small(rule: SynthRule, seed: u64, n_train: usize, n_eval: usize) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        rule,
        balance: ClassBalance::Uniform,
        n_frames: SYNTH_FRAMES,
        n_train,
        n_dev: n_eval,
        n_test: n_eval,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn dataset_of(corpus: &SynthCorpus) -> (Dataset, Vocabulary) {
    let store = FeatureStore::from_map(corpus.features.clone());
    let data = Dataset::build(&corpus.instances, &store, SYNTH_FRAMES).unwrap();
    (data, dataset::vocabulary(&corpus.instances))
}

/// The small configuration used for runs on the synthetic corpora.
pub fn synth_train_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        n_frames: SYNTH_FRAMES,
        filter_width: 10,
        n_filters: 16,
        batch_size: 32,
        dropout: 0.1,
        max_epochs: 50,
        patience: 5,
        seed,
        ..TrainConfig::default()
    }
}

pub fn random_window(rng: &mut ChaCha8Rng, rows: usize) -> Tensor2D {
    Tensor2D::from_fn(rows, 13, |_, _| rng.random_range(-1.0..1.0))
}

pub fn small_model(variant: Variant, seed: u64) -> Model {
    let cfg = ModelConfig {
        variant,
        n_frames: 24,
        filter_width: 10,
        n_filters: 3,
        pool_rows: 5,
        dropout: 0.3,
        ffn_activation: Activation::Tanh,
        ..ModelConfig::default()
    };
    let vocab = Vocabulary::new(["p", "q", "r", "s"].map(String::from));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(cfg, vocab, &mut rng).unwrap();
    // nonzero biases so every bias path is exercised
    for (name, t) in model.params.tensors_mut() {
        if name.ends_with("bias") || name == "sli.b" {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    model
}

/// Central-difference check of the full model loss over every parameter,
/// with a fixed dropout mask.
pub fn model_grad_check(variant: Variant, seed: u64) -> GradCheckReport {
    let model = small_model(variant, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let window = random_window(&mut rng, model.config.n_frames);
    let gold = Label::from_index(rng.random_range(0..N_CLASSES)).unwrap();
    let (s, l) = model.resolve_ids(Some("q"), Some("s")).unwrap();
    let mask_seed = seed + 200;

    let trace = model
        .trace(&window, s, l, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
        .unwrap();
    let mut grads: ModelParams = model.params.zeros_like();
    model.backward(&window, &trace, gold, &mut grads).unwrap();

    let theta = model.params.flatten();
    let mut probe = model.clone();
    grad_check(variant.as_str(), &theta, &grads.flatten(), DEFAULT_GRAD_EPS, |t| {
        probe.params.assign_flat(t);
        let tr = probe
            .trace(&window, s, l, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
            .unwrap();
        vec![cross_entropy(&tr.probs, gold.index()).unwrap()]
    })
    .unwrap()
}
