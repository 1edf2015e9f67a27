//! Model-ready examples: manifest instances joined with their feature
//! windows.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{feature_cache_path, ChannelKey, Instance, Label, Split};
use crate::features::{self, FeatureSequence};
use crate::model::Vocabulary;
use crate::numerics::Tensor2D;
use crate::Result;

/// Per-channel feature sequences, keyed by dialog and channel.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    sequences: BTreeMap<ChannelKey, FeatureSequence>,
}

impl FeatureStore {
    pub fn from_map(sequences: BTreeMap<ChannelKey, FeatureSequence>) -> Self {
        Self { sequences }
    }

    /// Reads the cache file of every channel the instances refer to.
    pub fn from_cache(instances: &[Instance], cache_dir: &Path) -> Result<Self> {
        let mut sequences = BTreeMap::new();
        for inst in instances {
            let key = (inst.dialog_id.clone(), inst.channel);
            if let std::collections::btree_map::Entry::Vacant(slot) = sequences.entry(key) {
                let path = feature_cache_path(cache_dir, &inst.dialog_id, inst.channel);
                slot.insert(features::cache_read(&path)?);
            }
        }
        Ok(Self { sequences })
    }

    pub fn get(&self, key: &ChannelKey) -> Option<&FeatureSequence> {
        self.sequences.get(key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub instance_id: String,
    pub window: Tensor2D,
    pub speaker_id: String,
    pub listener_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn build(instances: &[Instance], store: &FeatureStore, n_frames: usize) -> Result<Self> {
        let mut ds = Dataset::default();
        for inst in instances {
            let ex = example(inst, store, n_frames)?;
            match inst.split {
                Split::Train => ds.train.push(ex),
                Split::Dev => ds.dev.push(ex),
                Split::Test => ds.test.push(ex),
            }
        }
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn example(inst: &Instance, store: &FeatureStore, n_frames: usize) -> Result<Example> {
    let key = (inst.dialog_id.clone(), inst.channel);
    let seq = store.get(&key).ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no features for {} channel {}", inst.dialog_id, inst.channel),
        )
    })?;
    let window = features::extract_window(seq, inst.t_ms, n_frames)?;
    Ok(Example {
        instance_id: inst.instance_id.clone(),
        window: window.values,
        speaker_id: inst.speaker_id.clone(),
        listener_id: inst.listener_id.clone(),
        label: inst.label,
    })
}

/// Every speaker and listener ID in the manifest.
pub fn vocabulary(instances: &[Instance]) -> Vocabulary {
    Vocabulary::new(
        instances
            .iter()
            .flat_map(|i| [i.speaker_id.clone(), i.listener_id.clone()]),
    )
}

/// Sorted distinct listener IDs.
pub fn listener_ids(instances: &[Instance]) -> Vec<String> {
    let mut ids: Vec<String> = instances.iter().map(|i| i.listener_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}
