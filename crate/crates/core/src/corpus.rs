//! Corpus annotation and bookkeeping: backchannel token categories,
//! negative sampling, interlocutor IDs, conversation splits, the JSONL
//! manifest, and a synthetic corpus for desk-scale verification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureSequence, N_COEFFS};
use crate::numerics::Tensor2D;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no known interlocutor to draw from for {0}")]
    EmptyPool(String),
    #[error("split sizes sum to {got}, but there are {expected} conversations")]
    SizeMismatch { expected: usize, got: usize },
    #[error("conversation {0} listed twice")]
    DuplicateDialog(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("lexicon categories overlap on {0:?}")]
    OverlappingLexicon(Vec<String>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    NoBc,
    Yeah,
    UhHuh,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::NoBc, Label::Yeah, Label::UhHuh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Label::NoBc => "No-BC",
            Label::Yeah => "Yeah",
            Label::UhHuh => "Uh-huh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn other(self) -> Channel {
        match self {
            Channel::A => Channel::B,
            Channel::B => Channel::A,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::A => "A",
            Channel::B => "B",
        })
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Channel::A),
            "B" | "b" => Ok(Channel::B),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

/// One labelled prediction point. `channel` is the speaker's channel, the
/// audio the model listens to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub instance_id: String,
    pub dialog_id: String,
    pub channel: Channel,
    pub speaker_id: String,
    pub listener_id: String,
    pub t_ms: u64,
    pub label: Label,
    pub split: Split,
    pub audio_path: String,
}

impl Instance {
    pub fn validate(&self, min_t_ms: u64) -> Result<()> {
        let bad = |reason: String| CorpusError::InvalidInstance {
            id: self.instance_id.clone(),
            reason,
        };
        if self.speaker_id == self.listener_id {
            return Err(bad(format!("speaker and listener are both {}", self.speaker_id)));
        }
        if self.t_ms < min_t_ms {
            return Err(bad(format!("t_ms {} < {} ms of required context", self.t_ms, min_t_ms)));
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instances serialize"));
        out.push('\n');
    }
    features::write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<Instance>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Where the per-channel feature cache of a dialog lives.
pub fn feature_cache_path(cache_dir: &Path, dialog_id: &str, channel: Channel) -> PathBuf {
    cache_dir.join(format!("{dialog_id}_{channel}.bcmf"))
}

/// Lowercases, drops punctuation other than hyphens, collapses whitespace.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Surface forms that count as backchannels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenLexicon {
    pub yeah_tokens: BTreeSet<String>,
    pub uhhuh_tokens: BTreeSet<String>,
    /// Matched case-insensitively against the raw utterance, e.g. `[laughter]`.
    pub exclusion_markers: BTreeSet<String>,
    /// Backchannel expressions outside the two categories, mostly multi-word.
    pub multiword_bc: BTreeSet<String>,
    pub intensifiers: BTreeSet<String>,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| normalize(s)).collect()
}

impl TokenLexicon {
    pub fn english() -> Self {
        Self {
            yeah_tokens: set(&["yeah", "yes", "yep"]),
            uhhuh_tokens: set(&["uh-huh", "um-hum"]),
            exclusion_markers: ["[laughter]".to_string()].into(),
            multiword_bc: BTreeSet::new(),
            intensifiers: BTreeSet::new(),
        }
    }

    pub fn german() -> Self {
        Self {
            yeah_tokens: set(&["ja"]),
            uhhuh_tokens: set(&["hm hm", "mh mh", "mhm mhm"]),
            exclusion_markers: ["[laughter]".to_string()].into(),
            multiword_bc: set(&["hm", "oh mein gott", "cool"]),
            intensifiers: set(&["voll"]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let overlap: Vec<String> = self.yeah_tokens.intersection(&self.uhhuh_tokens).cloned().collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::OverlappingLexicon(overlap))
        }
    }

    /// Every entry across all sets, as word sequences.
    fn phrases(&self) -> Vec<Vec<String>> {
        self.yeah_tokens
            .iter()
            .chain(&self.uhhuh_tokens)
            .chain(&self.multiword_bc)
            .chain(&self.intensifiers)
            .map(|p| p.split(' ').map(str::to_string).collect())
            .collect()
    }
}

/// Reads one surface form per line; `#` starts a comment.
pub fn read_lexicon_file(path: &Path, normalize_entries: bool) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| if normalize_entries { normalize(l) } else { l.to_lowercase() })
        .collect())
}

/// Paths of user lexicon files; absent entries keep the defaults.
#[derive(Debug, Clone, Default)]
pub struct LexiconFiles {
    pub yeah: Option<PathBuf>,
    pub uhhuh: Option<PathBuf>,
    pub exclusion: Option<PathBuf>,
    pub multiword: Option<PathBuf>,
    pub intensifiers: Option<PathBuf>,
}

impl TokenLexicon {
    pub fn with_files(mut self, files: &LexiconFiles) -> Result<Self> {
        if let Some(p) = &files.yeah {
            self.yeah_tokens = read_lexicon_file(p, true)?;
        }
        if let Some(p) = &files.uhhuh {
            self.uhhuh_tokens = read_lexicon_file(p, true)?;
        }
        if let Some(p) = &files.exclusion {
            self.exclusion_markers = read_lexicon_file(p, false)?;
        }
        if let Some(p) = &files.multiword {
            self.multiword_bc = read_lexicon_file(p, true)?;
        }
        if let Some(p) = &files.intensifiers {
            self.intensifiers = read_lexicon_file(p, true)?;
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcCategory {
    Yeah,
    UhHuh,
    Reject,
}

pub fn categorize_bc(utterance: &str, lexicon: &TokenLexicon) -> BcCategory {
    let lowered = utterance.to_lowercase();
    if lexicon.exclusion_markers.iter().any(|m| lowered.contains(m.as_str())) {
        return BcCategory::Reject;
    }
    let norm = normalize(utterance);
    if lexicon.yeah_tokens.contains(&norm) {
        BcCategory::Yeah
    } else if lexicon.uhhuh_tokens.contains(&norm) {
        BcCategory::UhHuh
    } else {
        BcCategory::Reject
    }
}

/// Duration rule (< 1 s) or full lexical coverage by lexicon entries.
pub fn geco_is_bc(utterance: &str, duration_ms: u64, lexicon: &TokenLexicon) -> bool {
    if duration_ms < 1000 {
        return true;
    }
    let norm = normalize(utterance);
    let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return false;
    }
    let phrases = lexicon.phrases();
    // covered[i]: words[..i] segments into lexicon entries
    let mut covered = vec![false; words.len() + 1];
    covered[0] = true;
    for i in 0..words.len() {
        if !covered[i] {
            continue;
        }
        for p in &phrases {
            let end = i + p.len();
            if end <= words.len() && words[i..end].iter().zip(p).all(|(w, q)| *w == q) {
                covered[end] = true;
            }
        }
    }
    covered[words.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSampling {
    pub offset_ms: u64,
    pub window_ms: u64,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        Self {
            offset_ms: 3000,
            window_ms: 2000,
        }
    }
}

/// A backchannel onset that blocks negative windows for its listener.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BcMark {
    pub listener_id: String,
    pub t_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeSample {
    pub negatives: Vec<Instance>,
    /// For each positive, the index of its negative in `negatives`.
    pub pairing: Vec<Option<usize>>,
    pub skipped_boundary: usize,
    pub skipped_overlap: usize,
}

/// One NO_BC candidate `offset_ms` before each positive, kept when its
/// window lies inside `[0, recording_ms]` and contains no backchannel of
/// the same listener. `extra_marks` adds annotated backchannels that are not
/// themselves positives (e.g. rejected realizations).
pub fn sample_negatives(
    positives: &[Instance],
    extra_marks: &[BcMark],
    recording_ms: u64,
    cfg: NegativeSampling,
) -> NegativeSample {
    let marks: Vec<BcMark> = positives
        .iter()
        .map(|p| BcMark {
            listener_id: p.listener_id.clone(),
            t_ms: p.t_ms,
        })
        .chain(extra_marks.iter().cloned())
        .collect();
    let mut out = NegativeSample::default();
    for pos in positives {
        let Some(start) = pos.t_ms.checked_sub(cfg.offset_ms + cfg.window_ms) else {
            out.skipped_boundary += 1;
            out.pairing.push(None);
            continue;
        };
        let end = pos.t_ms - cfg.offset_ms;
        if end > recording_ms {
            out.skipped_boundary += 1;
            out.pairing.push(None);
            continue;
        }
        let blocked = marks
            .iter()
            .any(|m| m.listener_id == pos.listener_id && m.t_ms >= start && m.t_ms <= end);
        if blocked {
            out.skipped_overlap += 1;
            out.pairing.push(None);
            continue;
        }
        out.pairing.push(Some(out.negatives.len()));
        out.negatives.push(Instance {
            instance_id: format!("{}-neg", pos.instance_id),
            t_ms: end,
            label: Label::NoBc,
            ..pos.clone()
        });
    }
    out
}

pub type ChannelKey = (String, Channel);

#[derive(Debug, Clone, PartialEq)]
pub struct IdAssignment {
    pub map: BTreeMap<ChannelKey, String>,
    pub filled: Vec<ChannelKey>,
    pub unique_ids: usize,
}

/// Fills channels lacking a speaker ID with a seeded uniform draw from the
/// known IDs, excluding the interlocutor on the other side of the dialog.
pub fn assign_interlocutor_ids(
    channels: &BTreeMap<ChannelKey, Option<String>>,
    seed: u64,
) -> Result<IdAssignment> {
    let pool: Vec<&String> = channels
        .values()
        .flatten()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    let mut filled = Vec::new();
    for (key, id) in channels {
        let id = match id {
            Some(id) => id.clone(),
            None => {
                let other = channels
                    .get(&(key.0.clone(), key.1.other()))
                    .cloned()
                    .flatten()
                    .or_else(|| map.get(&(key.0.clone(), key.1.other())).cloned());
                let candidates: Vec<&&String> =
                    pool.iter().filter(|p| Some(p.as_str()) != other.as_deref()).collect();
                if candidates.is_empty() {
                    return Err(CorpusError::EmptyPool(format!("{} channel {}", key.0, key.1)));
                }
                filled.push(key.clone());
                (**candidates[rng.random_range(0..candidates.len())]).clone()
            }
        };
        map.insert(key.clone(), id);
    }
    let unique_ids = map.values().collect::<BTreeSet<_>>().len();
    Ok(IdAssignment {
        map,
        filled,
        unique_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Sizes in the 2000/200/238 proportion of the Switchboard split.
    pub fn proportional(n: usize) -> Self {
        let dev = (n as f64 * 200.0 / 2438.0).round() as usize;
        let test = (n as f64 * 238.0 / 2438.0).round() as usize;
        Self {
            train: n - dev - test,
            dev,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// Assigns the first `train` dialogs (in the given order) to train, the
/// next `dev` to dev and the rest to test.
pub fn split_conversations(dialogs: &[String], sizes: SplitSizes) -> Result<BTreeMap<String, Split>> {
    if sizes.total() != dialogs.len() {
        return Err(CorpusError::SizeMismatch {
            expected: dialogs.len(),
            got: sizes.total(),
        });
    }
    let mut out = BTreeMap::new();
    for (i, d) in dialogs.iter().enumerate() {
        let split = if i < sizes.train {
            Split::Train
        } else if i < sizes.train + sizes.dev {
            Split::Dev
        } else {
            Split::Test
        };
        if out.insert(d.clone(), split).is_some() {
            return Err(CorpusError::DuplicateDialog(d.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub counts: [usize; 3],
    pub conversations: usize,
    pub interlocutors: usize,
}

impl CorpusStats {
    pub fn from_instances(instances: &[Instance]) -> Self {
        let mut counts = [0; 3];
        let mut dialogs = BTreeSet::new();
        let mut people = BTreeSet::new();
        for i in instances {
            counts[i.label.index()] += 1;
            dialogs.insert(&i.dialog_id);
            people.insert(&i.speaker_id);
            people.insert(&i.listener_id);
        }
        Self {
            counts,
            conversations: dialogs.len(),
            interlocutors: people.len(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Class counts and shares, then conversation and interlocutor counts.
    pub fn to_csv(&self) -> String {
        let total = self.total().max(1) as f64;
        let mut s = String::from("class,count,percent\n");
        for label in [Label::Yeah, Label::UhHuh, Label::NoBc] {
            let c = self.counts[label.index()];
            s.push_str(&format!("{},{},{:.1}\n", label.display_name(), c, 100.0 * c as f64 / total));
        }
        s.push_str(&format!("Conversations,{},--\n", self.conversations));
        s.push_str(&format!("Interlocutors,{},--\n", self.interlocutors));
        s
    }
}

/// One transcribed utterance. `speaker_id` is `None` when the corpus does
/// not name the interlocutor of that channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub dialog_id: String,
    pub channel: Channel,
    pub speaker_id: Option<String>,
    pub start_ms: u64,
    pub end_ms: u64,
    pub da_tag: String,
    pub text: String,
}

/// Parses tab-separated transcripts with columns
/// `dialog_id channel speaker_id start_ms end_ms da_tag text`.
/// Blank lines, `#` comments and a `dialog_id` header row are skipped; an
/// empty or `-` speaker_id means unknown.
pub fn parse_transcript(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("dialog_id\t") {
            continue;
        }
        let err = |msg: String| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.splitn(7, '\t').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 tab-separated columns, found {}", cols.len())));
        }
        let num = |s: &str| s.trim().parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
        let speaker = cols[2].trim();
        let start_ms = num(cols[3])?;
        let end_ms = num(cols[4])?;
        if end_ms < start_ms {
            return Err(err("end_ms before start_ms".into()));
        }
        out.push(Utterance {
            dialog_id: cols[0].trim().to_string(),
            channel: cols[1].trim().parse().map_err(err)?,
            speaker_id: (!speaker.is_empty() && speaker != "-").then(|| speaker.to_string()),
            start_ms,
            end_ms,
            da_tag: cols[5].trim().to_string(),
            text: cols[6].trim().to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStyle {
    /// Utterances carrying the backchannel dialog-act tag `b`.
    Swda,
    /// Utterances produced during the other channel's turn that pass
    /// [`geco_is_bc`].
    Geco,
}

#[derive(Debug, Clone)]
pub struct AnnotateConfig {
    pub style: AnnotationStyle,
    pub negatives: NegativeSampling,
    pub split_sizes: Option<SplitSizes>,
    pub audio_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub dialog_id: String,
    pub channel: Channel,
    pub t_ms: u64,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub instances: Vec<Instance>,
    pub stats: CorpusStats,
    pub rejections: Vec<Rejection>,
    pub ids: IdAssignment,
}

pub fn audio_path_for(audio_dir: &Path, dialog_id: &str, channel: Channel) -> String {
    audio_dir.join(format!("{dialog_id}_{channel}.wav")).display().to_string()
}

/// Builds positives from transcripts, pairs each with a NO_BC negative
/// (positives without a valid negative are dropped so classes stay 50/50),
/// fills missing interlocutor IDs and assigns conversation splits.
pub fn annotate(utterances: &[Utterance], lexicon: &TokenLexicon, cfg: &AnnotateConfig) -> Result<Annotation> {
    lexicon.validate()?;
    let mut by_dialog: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    let mut channel_ids: BTreeMap<ChannelKey, Option<String>> = BTreeMap::new();
    let mut dialog_order: Vec<String> = Vec::new();
    for u in utterances {
        if !by_dialog.contains_key(u.dialog_id.as_str()) {
            dialog_order.push(u.dialog_id.clone());
        }
        by_dialog.entry(&u.dialog_id).or_default().push(u);
        for ch in [Channel::A, Channel::B] {
            channel_ids.entry((u.dialog_id.clone(), ch)).or_insert(None);
        }
        if let Some(id) = &u.speaker_id {
            let slot = channel_ids.get_mut(&(u.dialog_id.clone(), u.channel)).unwrap();
            if slot.is_none() {
                *slot = Some(id.clone());
            }
        }
    }
    let ids = assign_interlocutor_ids(&channel_ids, cfg.seed)?;
    let sizes = cfg.split_sizes.unwrap_or_else(|| SplitSizes::proportional(dialog_order.len()));
    let splits = split_conversations(&dialog_order, sizes)?;

    let mut instances = Vec::new();
    let mut rejections = Vec::new();
    for dialog in &dialog_order {
        let utts = &by_dialog[dialog.as_str()];
        let recording_ms = utts.iter().map(|u| u.end_ms).max().unwrap_or(0);
        let mut positives = Vec::new();
        let mut blockers = Vec::new();
        for u in utts {
            let candidate = match cfg.style {
                AnnotationStyle::Swda => u.da_tag == "b",
                AnnotationStyle::Geco => {
                    let during_other_turn = utts.iter().any(|o| {
                        o.channel != u.channel && o.start_ms <= u.start_ms && u.start_ms < o.end_ms
                    });
                    during_other_turn && geco_is_bc(&u.text, u.end_ms - u.start_ms, lexicon)
                }
            };
            if !candidate {
                continue;
            }
            let listener_id = ids.map[&(dialog.clone(), u.channel)].clone();
            let reject = |reason: &str| Rejection {
                dialog_id: dialog.clone(),
                channel: u.channel,
                t_ms: u.start_ms,
                text: u.text.clone(),
                reason: reason.to_string(),
            };
            let label = match categorize_bc(&u.text, lexicon) {
                BcCategory::Yeah => Label::Yeah,
                BcCategory::UhHuh => Label::UhHuh,
                BcCategory::Reject => {
                    blockers.push(BcMark {
                        listener_id,
                        t_ms: u.start_ms,
                    });
                    rejections.push(reject("not a canonical realization"));
                    continue;
                }
            };
            if u.start_ms < cfg.negatives.window_ms {
                rejections.push(reject("insufficient context before onset"));
                continue;
            }
            let speaker_channel = u.channel.other();
            positives.push(Instance {
                instance_id: format!("{dialog}:{}:{}", u.channel, u.start_ms),
                dialog_id: dialog.clone(),
                channel: speaker_channel,
                speaker_id: ids.map[&(dialog.clone(), speaker_channel)].clone(),
                listener_id,
                t_ms: u.start_ms,
                label,
                split: splits[dialog],
                audio_path: audio_path_for(&cfg.audio_dir, dialog, speaker_channel),
            });
        }
        let sampled = sample_negatives(&positives, &blockers, recording_ms, cfg.negatives);
        for (pos, pair) in positives.into_iter().zip(&sampled.pairing) {
            match pair {
                Some(j) => {
                    instances.push(pos);
                    instances.push(sampled.negatives[*j].clone());
                }
                None => rejections.push(Rejection {
                    dialog_id: pos.dialog_id.clone(),
                    channel: pos.channel.other(),
                    t_ms: pos.t_ms,
                    text: String::new(),
                    reason: "no valid negative window".into(),
                }),
            }
        }
    }
    let stats = CorpusStats::from_instances(&instances);
    Ok(Annotation {
        instances,
        stats,
        rejections,
        ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthRule {
    /// The label is the class of the acoustic prototype.
    AudioOnly,
    /// Each listener relabels prototypes through a fixed cyclic permutation.
    AudioPlusListener,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBalance {
    /// One third per class.
    Uniform,
    /// Half NO_BC, a quarter each for the two backchannel classes.
    HalfNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rule: SynthRule,
    pub balance: ClassBalance,
    pub n_listeners: usize,
    pub n_speakers: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub instances_per_dialog: usize,
    pub n_frames: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rule: SynthRule::AudioPlusListener,
            balance: ClassBalance::Uniform,
            n_listeners: 3,
            n_speakers: 3,
            n_train: 3000,
            n_dev: 600,
            n_test: 600,
            instances_per_dialog: 20,
            n_frames: 48,
            noise: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub instances: Vec<Instance>,
    pub features: BTreeMap<ChannelKey, FeatureSequence>,
    pub prototypes: Vec<Tensor2D>,
}

pub fn synth_listener_id(i: usize) -> String {
    format!("L{i:03}")
}

pub fn synth_speaker_id(i: usize) -> String {
    format!("S{i:03}")
}

/// Label produced when listener `listener` hears prototype class `proto`.
pub fn synth_label(rule: SynthRule, listener: usize, proto: usize) -> Label {
    match rule {
        SynthRule::AudioOnly => Label::ALL[proto],
        SynthRule::AudioPlusListener => Label::ALL[(proto + listener) % 3],
    }
}

fn synth_prototype_for(rule: SynthRule, listener: usize, label: Label) -> usize {
    match rule {
        SynthRule::AudioOnly => label.index(),
        SynthRule::AudioPlusListener => (label.index() + 3 - listener % 3) % 3,
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let total = cfg.n_train + cfg.n_dev + cfg.n_test;
    let invalid = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
    if total < 30 {
        return invalid("at least 30 instances required");
    }
    if cfg.n_listeners == 0 || cfg.n_speakers == 0 || cfg.instances_per_dialog == 0 || cfg.n_frames == 0 {
        return invalid("listener, speaker, per-dialog and frame counts must be positive");
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return invalid("noise must be a finite non-negative number");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes: Vec<Tensor2D> = (0..3)
        .map(|_| Tensor2D::from_fn(cfg.n_frames, N_COEFFS, |_, _| rng.sample(StandardNormal)))
        .collect();

    let frame_span = cfg.n_frames as u64 * features::FRAME_SHIFT_MS;
    let first_t = features::min_context_ms(cfg.n_frames);
    let mut instances = Vec::with_capacity(total);
    let mut feats = BTreeMap::new();
    let mut dialog_counter = 0usize;
    for (split, n) in [(Split::Train, cfg.n_train), (Split::Dev, cfg.n_dev), (Split::Test, cfg.n_test)] {
        let mut labels: Vec<Label> = (0..n)
            .map(|i| match cfg.balance {
                ClassBalance::Uniform => Label::ALL[i % 3],
                ClassBalance::HalfNegative => [Label::NoBc, Label::Yeah, Label::NoBc, Label::UhHuh][i % 4],
            })
            .collect();
        labels.shuffle(&mut rng);
        for (d, chunk) in labels.chunks(cfg.instances_per_dialog).enumerate() {
            let dialog_id = format!("synth{dialog_counter:05}");
            dialog_counter += 1;
            let listener = d % cfg.n_listeners;
            let speaker = rng.random_range(0..cfg.n_speakers);
            let mut data = Vec::with_capacity(chunk.len() * cfg.n_frames * N_COEFFS);
            for (k, &label) in chunk.iter().enumerate() {
                let proto = &prototypes[synth_prototype_for(cfg.rule, listener, label)];
                for &v in proto.as_slice() {
                    let e: f64 = rng.sample(StandardNormal);
                    data.push(v + cfg.noise * e);
                }
                instances.push(Instance {
                    instance_id: format!("{dialog_id}:{k:03}"),
                    dialog_id: dialog_id.clone(),
                    channel: Channel::A,
                    speaker_id: synth_speaker_id(speaker),
                    listener_id: synth_listener_id(listener),
                    t_ms: first_t + k as u64 * frame_span,
                    label,
                    split,
                    audio_path: String::new(),
                });
            }
            let values = Tensor2D::new(chunk.len() * cfg.n_frames, N_COEFFS, data).expect("sized");
            feats.insert((dialog_id, Channel::A), FeatureSequence { values });
        }
    }
    Ok(SynthCorpus {
        instances,
        features: feats,
        prototypes,
    })
}

impl SynthCorpus {
    /// Writes the manifest and one feature cache per dialog channel.
    pub fn write(&self, manifest: &Path, cache_dir: &Path) -> std::result::Result<(), crate::Error> {
        fs::create_dir_all(cache_dir)?;
        write_manifest(manifest, &self.instances)?;
        for ((dialog, ch), seq) in &self.features {
            features::cache_write(&feature_cache_path(cache_dir, dialog, *ch), &seq.values)?;
        }
        Ok(())
    }
}
