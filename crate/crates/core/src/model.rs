//! The backchannel classifier: a convolutional acoustic component, speaker
//! and listener behavior embeddings, three speaker-listener interaction
//! (SLI) encoders, and a softmax output layer over the concatenation
//! selected by the model variant.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::{self, N_COEFFS};
use crate::numerics::{
    self, conv_valid, conv_valid_backward, relu_maxpool_backward, relu_maxpool_indexed, softmax,
    softmax_cross_entropy_grad, tanh_backward, Affine, ConvFilter, Mode, NumericsError, Pooled,
    Tensor2D,
};

pub const EMBEDDING_LEN: usize = 5;
pub const N_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown interlocutor {0:?}")]
    UnknownInterlocutor(String),
    #[error("variant {variant} requires a {what} id")]
    MissingInput { variant: Variant, what: &'static str },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "AC_S")]
    AcS,
    #[serde(rename = "AC_L")]
    AcL,
    #[serde(rename = "AC_S_L")]
    AcSL,
    #[serde(rename = "AC_SLI_SUM")]
    AcSliSum,
    #[serde(rename = "AC_SLI_BILINEAR")]
    AcSliBilinear,
    #[serde(rename = "AC_SLI_NTN")]
    AcSliNtn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliKind {
    Sum,
    Bilinear,
    Ntn,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Ac,
        Variant::AcS,
        Variant::AcL,
        Variant::AcSL,
        Variant::AcSliSum,
        Variant::AcSliBilinear,
        Variant::AcSliNtn,
    ];

    pub fn uses_speaker(self) -> bool {
        !matches!(self, Variant::Ac | Variant::AcL)
    }

    pub fn uses_listener(self) -> bool {
        !matches!(self, Variant::Ac | Variant::AcS)
    }

    pub fn sli(self) -> Option<SliKind> {
        match self {
            Variant::AcSliSum => Some(SliKind::Sum),
            Variant::AcSliBilinear => Some(SliKind::Bilinear),
            Variant::AcSliNtn => Some(SliKind::Ntn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ac => "AC",
            Variant::AcS => "AC_S",
            Variant::AcL => "AC_L",
            Variant::AcSL => "AC_S_L",
            Variant::AcSliSum => "AC_SLI_SUM",
            Variant::AcSliBilinear => "AC_SLI_BILINEAR",
            Variant::AcSliNtn => "AC_SLI_NTN",
        }
    }

    /// The SLI variant for a short encoder name (`sum`, `bilinear`, `ntn`).
    pub fn from_sli_name(name: &str) -> Option<Variant> {
        match name {
            "sum" => Some(Variant::AcSliSum),
            "bilinear" => Some(Variant::AcSliBilinear),
            "ntn" => Some(Variant::AcSliNtn),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: Vec<f64>) -> Vec<f64> {
        match self {
            Activation::Tanh => numerics::tanh(&x),
            Activation::Identity => x,
        }
    }

    fn backward(self, y: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Activation::Tanh => tanh_backward(y, grad),
            Activation::Identity => grad.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_frames: usize,
    pub filter_width: usize,
    pub n_filters: usize,
    pub pool_rows: usize,
    pub embedding_len: usize,
    pub ffn_hidden: usize,
    pub ffn_activation: Activation,
    /// Bilinear slice count `k`.
    pub sli_slices: usize,
    /// NTN output length `m`; 1 gives the scalar score form.
    pub ntn_out: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ac,
            n_frames: 198,
            filter_width: 10,
            n_filters: 32,
            pool_rows: 10,
            embedding_len: EMBEDDING_LEN,
            ffn_hidden: 5,
            ffn_activation: Activation::Tanh,
            sli_slices: 5,
            ntn_out: 5,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.filter_width == 0 || self.filter_width > self.n_frames {
            return bad(format!("filter width {} vs {} frames", self.filter_width, self.n_frames));
        }
        if self.n_filters == 0 || self.pool_rows == 0 {
            return bad("n_filters and pool_rows must be positive".into());
        }
        if self.feature_map_len() == 0 {
            return bad("pooling leaves no acoustic features".into());
        }
        if self.embedding_len == 0 || self.ffn_hidden == 0 || self.sli_slices == 0 || self.ntn_out == 0 {
            return bad("embedding, hidden, slice and NTN sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn pooled_rows(&self) -> usize {
        (self.n_frames.saturating_sub(self.filter_width) + 1) / self.pool_rows
    }

    pub fn feature_map_len(&self) -> usize {
        self.n_filters * self.pooled_rows()
    }

    /// Length of the behavior part of the concatenation.
    pub fn behavior_len(&self) -> usize {
        let e = self.embedding_len;
        match self.variant {
            Variant::Ac => 0,
            Variant::AcS | Variant::AcL | Variant::AcSliSum => e,
            Variant::AcSL => 2 * e,
            Variant::AcSliBilinear => self.sli_slices,
            Variant::AcSliNtn => self.ntn_out,
        }
    }

    pub fn concat_len(&self) -> usize {
        self.feature_map_len() + self.behavior_len()
    }

    pub fn min_context_ms(&self) -> u64 {
        features::min_context_ms(self.n_frames)
    }
}

/// Sorted interlocutor IDs; the row index of each ID in every embedding table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.sort();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ModelError::UnknownInterlocutor(id.to_string()))
    }
}

/// Embedding table followed by two activated feed-forward layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEmbedding {
    pub table: Tensor2D,
    pub ffn1: Affine,
    pub ffn2: Affine,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct BehaviorTrace {
    index: usize,
    row: Vec<f64>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl BehaviorEmbedding {
    pub fn zeros(n_ids: usize, emb_len: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            table: Tensor2D::zeros(n_ids, emb_len),
            ffn1: Affine::zeros(emb_len, hidden),
            ffn2: Affine::zeros(hidden, emb_len),
            activation,
        }
    }

    pub fn trace(&self, index: usize) -> Result<BehaviorTrace> {
        if index >= self.table.rows() {
            return Err(ModelError::UnknownInterlocutor(format!("row {index}")));
        }
        let row = self.table.row(index).to_vec();
        let hidden = self.activation.apply(self.ffn1.forward(&row)?);
        let output = self.activation.apply(self.ffn2.forward(&hidden)?);
        Ok(BehaviorTrace {
            index,
            row,
            hidden,
            output,
        })
    }

    pub fn encode(&self, index: usize) -> Result<Vec<f64>> {
        Ok(self.trace(index)?.output)
    }

    pub fn backward(&self, trace: &BehaviorTrace, grad_out: &[f64], grads: &mut BehaviorEmbedding) -> Result<()> {
        let g = self.activation.backward(&trace.output, grad_out);
        let g = self.ffn2.backward(&trace.hidden, &g, &mut grads.ffn2)?;
        let g = self.activation.backward(&trace.hidden, &g);
        let g_row = self.ffn1.backward(&trace.row, &g, &mut grads.ffn1)?;
        let cols = self.table.cols();
        let dst = &mut grads.table.as_mut_slice()[trace.index * cols..(trace.index + 1) * cols];
        for (d, g) in dst.iter_mut().zip(&g_row) {
            *d += g;
        }
        Ok(())
    }
}

/// Table lookup then both feed-forward layers.
pub fn behavior_encode(id: &str, vocab: &Vocabulary, emb: &BehaviorEmbedding) -> Result<Vec<f64>> {
    emb.encode(vocab.lookup(id)?)
}

/// Parameters of the bilinear and NTN encoders.
///
/// `w[j*n*n + a*n + c]` is entry `(a, c)` of slice `j`; `v` is `k × 2n` and
/// `u` is `k × m`, both row-major. The bilinear encoder uses `w` and a
/// `k`-long `b`; NTN uses everything with an `m`-long `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl SliParams {
    pub fn bilinear_zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            m: k,
            w: vec![0.0; k * n * n],
            v: Vec::new(),
            u: Vec::new(),
            b: vec![0.0; k],
        }
    }

    pub fn ntn_zeros(n: usize, k: usize, m: usize) -> Self {
        Self {
            n,
            k,
            m,
            w: vec![0.0; k * n * n],
            v: vec![0.0; k * 2 * n],
            u: vec![0.0; k * m],
            b: vec![0.0; m],
        }
    }
}

fn check_pair(s: &[f64], l: &[f64], n: usize) -> Result<()> {
    for x in [s, l] {
        if x.len() != n {
            return Err(NumericsError::DimensionMismatch {
                expected: n,
                got: x.len(),
            }
            .into());
        }
    }
    Ok(())
}

pub fn sli_sum(s: &[f64], l: &[f64]) -> Result<Vec<f64>> {
    check_pair(s, l, s.len())?;
    Ok(s.iter().zip(l).map(|(a, b)| a + b).collect())
}

/// `s^T W_j l` for every slice `j`, without bias.
fn bilinear_core(s: &[f64], l: &[f64], p: &SliParams) -> Vec<f64> {
    let n = p.n;
    p.w.chunks_exact(n * n)
        .map(|slice| {
            s.iter()
                .enumerate()
                .map(|(a, sa)| sa * slice[a * n..(a + 1) * n].iter().zip(l).map(|(w, lc)| w * lc).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Accumulates slice gradients for upstream `g` and returns `(ds, dl)`.
fn bilinear_core_backward(s: &[f64], l: &[f64], p: &SliParams, g: &[f64], gw: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.n;
    let mut ds = vec![0.0; n];
    let mut dl = vec![0.0; n];
    for (j, &gj) in g.iter().enumerate() {
        if gj == 0.0 {
            continue;
        }
        let slice = &p.w[j * n * n..(j + 1) * n * n];
        let gslice = &mut gw[j * n * n..(j + 1) * n * n];
        for a in 0..n {
            for c in 0..n {
                let w = slice[a * n + c];
                gslice[a * n + c] += gj * s[a] * l[c];
                ds[a] += gj * w * l[c];
                dl[c] += gj * s[a] * w;
            }
        }
    }
    (ds, dl)
}

/// Component `j` is `s^T W_j l + b_j`.
pub fn sli_bilinear(s: &[f64], l: &[f64], p: &SliParams) -> Result<Vec<f64>> {
    check_pair(s, l, p.n)?;
    Ok(bilinear_core(s, l, p).into_iter().zip(&p.b).map(|(z, b)| z + b).collect())
}

pub fn sli_bilinear_backward(
    s: &[f64],
    l: &[f64],
    p: &SliParams,
    grad_out: &[f64],
    grads: &mut SliParams,
) -> (Vec<f64>, Vec<f64>) {
    for (gb, g) in grads.b.iter_mut().zip(grad_out) {
        *gb += g;
    }
    bilinear_core_backward(s, l, p, grad_out, &mut grads.w)
}

fn ntn_hidden(s: &[f64], l: &[f64], p: &SliParams) -> Vec<f64> {
    let x: Vec<f64> = s.iter().chain(l).copied().collect();
    bilinear_core(s, l, p)
        .into_iter()
        .zip(p.v.chunks_exact(2 * p.n))
        .map(|(z, vrow)| (z + vrow.iter().zip(&x).map(|(v, xi)| v * xi).sum::<f64>()).tanh())
        .collect()
}

/// `U^T tanh(s^T W^[1:k] l + V [s; l]) + b`.
pub fn sli_ntn(s: &[f64], l: &[f64], p: &SliParams) -> Result<Vec<f64>> {
    check_pair(s, l, p.n)?;
    let h = ntn_hidden(s, l, p);
    Ok(ntn_project(&h, p))
}

fn ntn_project(h: &[f64], p: &SliParams) -> Vec<f64> {
    let mut out = p.b.clone();
    for (j, hj) in h.iter().enumerate() {
        for (q, o) in out.iter_mut().enumerate() {
            *o += p.u[j * p.m + q] * hj;
        }
    }
    out
}

pub fn sli_ntn_backward(
    s: &[f64],
    l: &[f64],
    p: &SliParams,
    grad_out: &[f64],
    grads: &mut SliParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = p.n;
    let h = ntn_hidden(s, l, p);
    for (gb, g) in grads.b.iter_mut().zip(grad_out) {
        *gb += g;
    }
    let mut dh = vec![0.0; p.k];
    for j in 0..p.k {
        for q in 0..p.m {
            grads.u[j * p.m + q] += h[j] * grad_out[q];
            dh[j] += p.u[j * p.m + q] * grad_out[q];
        }
    }
    let dz = tanh_backward(&h, &dh);
    let (mut ds, mut dl) = bilinear_core_backward(s, l, p, &dz, &mut grads.w);
    let x: Vec<f64> = s.iter().chain(l).copied().collect();
    for (j, &dzj) in dz.iter().enumerate() {
        let vrow = &p.v[j * 2 * n..(j + 1) * 2 * n];
        let gv = &mut grads.v[j * 2 * n..(j + 1) * 2 * n];
        for i in 0..2 * n {
            gv[i] += dzj * x[i];
            if i < n {
                ds[i] += vrow[i] * dzj;
            } else {
                dl[i - n] += vrow[i] * dzj;
            }
        }
    }
    (ds, dl)
}

/// Every trainable tensor of one variant. Components a variant does not
/// use are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub filters: Vec<ConvFilter>,
    pub speaker: Option<BehaviorEmbedding>,
    pub listener: Option<BehaviorEmbedding>,
    pub sli: Option<SliParams>,
    pub output: Affine,
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..=limit);
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig, n_ids: usize) -> Self {
        let e = cfg.embedding_len;
        let behavior = || BehaviorEmbedding::zeros(n_ids, e, cfg.ffn_hidden, cfg.ffn_activation);
        let sli = match cfg.variant.sli() {
            Some(SliKind::Bilinear) => Some(SliParams::bilinear_zeros(e, cfg.sli_slices)),
            Some(SliKind::Ntn) => Some(SliParams::ntn_zeros(e, cfg.sli_slices, cfg.ntn_out)),
            _ => None,
        };
        Self {
            filters: (0..cfg.n_filters)
                .map(|_| ConvFilter::zeros(cfg.filter_width, N_COEFFS))
                .collect(),
            speaker: cfg.variant.uses_speaker().then(behavior),
            listener: cfg.variant.uses_listener().then(behavior),
            sli,
            output: Affine::zeros(cfg.concat_len(), N_CLASSES),
        }
    }

    /// Glorot-uniform weights, zero biases, embedding rows uniform in ±0.1.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, n_ids: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg, n_ids);
        let fan_in = cfg.filter_width * N_COEFFS;
        for f in &mut p.filters {
            glorot(rng, fan_in, cfg.n_filters, &mut f.weights);
        }
        for emb in [&mut p.speaker, &mut p.listener].into_iter().flatten() {
            for v in emb.table.as_mut_slice() {
                *v = rng.random_range(-0.1..=0.1);
            }
            glorot(rng, emb.ffn1.in_dim, emb.ffn1.out_dim, &mut emb.ffn1.weight);
            glorot(rng, emb.ffn2.in_dim, emb.ffn2.out_dim, &mut emb.ffn2.weight);
        }
        if let Some(s) = &mut p.sli {
            glorot(rng, s.n * s.n, s.k, &mut s.w);
            glorot(rng, 2 * s.n, s.k, &mut s.v);
            glorot(rng, s.k, s.m, &mut s.u);
        }
        glorot(rng, p.output.in_dim, p.output.out_dim, &mut p.output.weight);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named views of every tensor in canonical order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, f) in self.filters.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), &f.weights));
            out.push((format!("conv.{i}.bias"), std::slice::from_ref(&f.bias)));
        }
        for (name, emb) in [("speaker", &self.speaker), ("listener", &self.listener)] {
            if let Some(e) = emb {
                out.push((format!("{name}.table"), e.table.as_slice()));
                out.push((format!("{name}.ffn1.weight"), &e.ffn1.weight));
                out.push((format!("{name}.ffn1.bias"), &e.ffn1.bias));
                out.push((format!("{name}.ffn2.weight"), &e.ffn2.weight));
                out.push((format!("{name}.ffn2.bias"), &e.ffn2.bias));
            }
        }
        if let Some(s) = &self.sli {
            for (name, t) in [("sli.w", &s.w), ("sli.v", &s.v), ("sli.u", &s.u), ("sli.b", &s.b)] {
                if !t.is_empty() {
                    out.push((name.to_string(), t));
                }
            }
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, f) in self.filters.iter_mut().enumerate() {
            out.push((format!("conv.{i}.weight"), &mut f.weights));
            out.push((format!("conv.{i}.bias"), std::slice::from_mut(&mut f.bias)));
        }
        for (name, emb) in [("speaker", &mut self.speaker), ("listener", &mut self.listener)] {
            if let Some(e) = emb {
                out.push((format!("{name}.table"), e.table.as_mut_slice()));
                out.push((format!("{name}.ffn1.weight"), &mut e.ffn1.weight));
                out.push((format!("{name}.ffn1.bias"), &mut e.ffn1.bias));
                out.push((format!("{name}.ffn2.weight"), &mut e.ffn2.weight));
                out.push((format!("{name}.ffn2.bias"), &mut e.ffn2.bias));
            }
        }
        if let Some(s) = &mut self.sli {
            for (name, t) in [("sli.w", &mut s.w), ("sli.v", &mut s.v), ("sli.u", &mut s.u), ("sli.b", &mut s.b)] {
                if !t.is_empty() {
                    out.push((name.to_string(), t));
                }
            }
        }
        out.push(("output.weight".into(), &mut self.output.weight));
        out.push(("output.bias".into(), &mut self.output.bias));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        assert_eq!(at, flat.len(), "flat parameter length");
    }
}

/// Intermediate values of one forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pooled: Pooled,
    speaker: Option<BehaviorTrace>,
    listener: Option<BehaviorTrace>,
    concat: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

/// Flattened, ReLU-activated, max-pooled convolution maps of a window.
pub fn acoustic_component(window: &Tensor2D, filters: &[ConvFilter], pool_rows: usize) -> Result<Vec<f64>> {
    let map = conv_valid(window, filters)?;
    Ok(numerics::relu_maxpool(&map, pool_rows)?)
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, vocab.len(), rng);
        Ok(Self { config, vocab, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Resolves the IDs the variant needs into table rows.
    pub fn resolve_ids(&self, speaker_id: Option<&str>, listener_id: Option<&str>) -> Result<(Option<usize>, Option<usize>)> {
        let v = self.config.variant;
        let speaker = if v.uses_speaker() {
            let id = speaker_id.ok_or(ModelError::MissingInput { variant: v, what: "speaker" })?;
            Some(self.vocab.lookup(id)?)
        } else {
            None
        };
        let listener = if v.uses_listener() {
            let id = listener_id.ok_or(ModelError::MissingInput { variant: v, what: "listener" })?;
            Some(self.vocab.lookup(id)?)
        } else {
            None
        };
        Ok((speaker, listener))
    }

    pub fn trace<R: Rng + ?Sized>(
        &self,
        window: &Tensor2D,
        speaker: Option<usize>,
        listener: Option<usize>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let p = &self.params;
        if window.cols() != N_COEFFS || window.rows() != cfg.n_frames {
            return Err(NumericsError::DimensionMismatch {
                expected: cfg.n_frames * N_COEFFS,
                got: window.rows() * window.cols(),
            }
            .into());
        }
        let map = conv_valid(window, &p.filters)?;
        let pooled = relu_maxpool_indexed(&map, cfg.pool_rows)?;
        let variant = cfg.variant;
        let speaker = match (&p.speaker, speaker) {
            (Some(e), Some(i)) => Some(e.trace(i)?),
            (Some(_), None) => return Err(ModelError::MissingInput { variant, what: "speaker" }),
            _ => None,
        };
        let listener = match (&p.listener, listener) {
            (Some(e), Some(i)) => Some(e.trace(i)?),
            (Some(_), None) => return Err(ModelError::MissingInput { variant, what: "listener" }),
            _ => None,
        };
        let mut concat = pooled.values.clone();
        match (variant.sli(), &speaker, &listener) {
            (None, s, l) => {
                for t in [s, l].into_iter().flatten() {
                    concat.extend_from_slice(&t.output);
                }
            }
            (Some(kind), Some(s), Some(l)) => {
                let sl = match kind {
                    SliKind::Sum => sli_sum(&s.output, &l.output)?,
                    SliKind::Bilinear => sli_bilinear(&s.output, &l.output, p.sli.as_ref().unwrap())?,
                    SliKind::Ntn => sli_ntn(&s.output, &l.output, p.sli.as_ref().unwrap())?,
                };
                concat.extend_from_slice(&sl);
            }
            _ => unreachable!("SLI variants carry both embeddings"),
        }
        let mask = numerics::dropout_mask(concat.len(), cfg.dropout, mode, rng)?;
        let dropped: Vec<f64> = concat.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let probs = softmax(&p.output.forward(&dropped)?);
        Ok(ForwardTrace {
            pooled,
            speaker,
            listener,
            concat,
            mask,
            dropped,
            probs,
        })
    }

    /// Class probabilities for one window.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        window: &Tensor2D,
        speaker_id: Option<&str>,
        listener_id: Option<&str>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (s, l) = self.resolve_ids(speaker_id, listener_id)?;
        Ok(self.trace(window, s, l, mode, rng)?.probs)
    }

    /// Eval-mode probabilities from pre-resolved rows.
    pub fn predict_proba(&self, window: &Tensor2D, speaker: Option<usize>, listener: Option<usize>) -> Result<Vec<f64>> {
        // eval mode never draws from the generator
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.trace(window, speaker, listener, Mode::Eval, &mut unused)?.probs)
    }

    /// Accumulates the gradient of `-ln p(gold)` into `grads`; returns the loss.
    pub fn backward(&self, window: &Tensor2D, trace: &ForwardTrace, gold: Label, grads: &mut ModelParams) -> Result<f64> {
        let p = &self.params;
        let loss = numerics::cross_entropy(&trace.probs, gold.index())?;
        let g_logits = softmax_cross_entropy_grad(&trace.probs, gold.index())?;
        let g_dropped = p.output.backward(&trace.dropped, &g_logits, &mut grads.output)?;
        let g_concat: Vec<f64> = g_dropped.iter().zip(&trace.mask).map(|(g, m)| g * m).collect();
        let fmap_len = trace.pooled.values.len();
        let (g_fmap, g_behavior) = g_concat.split_at(fmap_len);

        let g_map = relu_maxpool_backward(&trace.pooled, g_fmap)?;
        conv_valid_backward(window, &p.filters, &g_map, &mut grads.filters)?;

        let e = self.config.embedding_len;
        let (g_s, g_l): (Option<Vec<f64>>, Option<Vec<f64>>) = match self.config.variant {
            Variant::Ac => (None, None),
            Variant::AcS => (Some(g_behavior.to_vec()), None),
            Variant::AcL => (None, Some(g_behavior.to_vec())),
            Variant::AcSL => (Some(g_behavior[..e].to_vec()), Some(g_behavior[e..].to_vec())),
            Variant::AcSliSum => (Some(g_behavior.to_vec()), Some(g_behavior.to_vec())),
            Variant::AcSliBilinear | Variant::AcSliNtn => {
                let s = &trace.speaker.as_ref().unwrap().output;
                let l = &trace.listener.as_ref().unwrap().output;
                let sp = p.sli.as_ref().unwrap();
                let gs = grads.sli.as_mut().unwrap();
                let (ds, dl) = if self.config.variant == Variant::AcSliBilinear {
                    sli_bilinear_backward(s, l, sp, g_behavior, gs)
                } else {
                    sli_ntn_backward(s, l, sp, g_behavior, gs)
                };
                (Some(ds), Some(dl))
            }
        };
        if let (Some(g), Some(t), Some(e), Some(ge)) = (g_s, &trace.speaker, &p.speaker, &mut grads.speaker) {
            e.backward(t, &g, ge)?;
        }
        if let (Some(g), Some(t), Some(e), Some(ge)) = (g_l, &trace.listener, &p.listener, &mut grads.listener) {
            e.backward(t, &g, ge)?;
        }
        debug_assert_eq!(trace.concat.len(), self.config.concat_len());
        Ok(loss)
    }
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Run metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
    /// The full resolved run configuration.
    pub run_config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    variant: Variant,
    model: ModelConfig,
    vocabulary: Vec<String>,
    meta: CheckpointMeta,
    tensors: Vec<TensorHeader>,
}

fn tensor_shape(cfg: &ModelConfig, n_ids: usize, name: &str, len: usize) -> Vec<usize> {
    let e = cfg.embedding_len;
    let h = cfg.ffn_hidden;
    match name.rsplit_once('.') {
        Some((head, "weight")) if head.starts_with("conv.") => vec![cfg.filter_width, N_COEFFS],
        Some((_, "table")) => vec![n_ids, e],
        Some((head, "weight")) if head.ends_with("ffn1") => vec![h, e],
        Some((head, "weight")) if head.ends_with("ffn2") => vec![e, h],
        Some(("sli", "w")) => vec![cfg.sli_slices, e, e],
        Some(("sli", "v")) => vec![cfg.sli_slices, 2 * e],
        Some(("sli", "u")) => vec![cfg.sli_slices, cfg.ntn_out],
        Some(("output", "weight")) => vec![N_CLASSES, cfg.concat_len()],
        _ => vec![len],
    }
}

/// Container layout: magic `BCCK`, u16 version, u32 header length, JSON
/// header (config, variant, vocabulary, metadata, tensor shapes), then
/// every tensor as little-endian f64 in header order.
pub fn encode_checkpoint(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let tensors = model.params.tensors();
    let header = CheckpointHeader {
        variant: model.config.variant,
        model: model.config.clone(),
        vocabulary: model.vocab.ids().to_vec(),
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorHeader {
                name: name.clone(),
                shape: tensor_shape(&model.config, model.vocab.len(), name, t.len()),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body_at = 10 + hlen;
    if bytes.len() < body_at {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[10..body_at]).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.variant != header.model.variant {
        return Err(bad("variant tag disagrees with config"));
    }
    header.model.validate()?;
    let vocab = Vocabulary::new(header.vocabulary);
    let mut params = ModelParams::zeros(&header.model, vocab.len());
    let mut at = body_at;
    {
        let slots = params.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(bad("tensor count mismatch"));
        }
        for ((name, slot), th) in slots.into_iter().zip(&header.tensors) {
            if name != th.name || th.shape.iter().product::<usize>() != slot.len() {
                return Err(ModelError::Checkpoint(format!("tensor {} does not match {name}", th.name)));
            }
            let end = at + 8 * slot.len();
            if bytes.len() < end {
                return Err(bad("truncated tensor data"));
            }
            for (v, chunk) in slot.iter_mut().zip(bytes[at..end].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            at = end;
        }
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((
        Model {
            config: header.model,
            vocab,
            params,
        },
        header.meta,
    ))
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    features::write_atomic(path, &encode_checkpoint(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    decode_checkpoint(&fs::read(path)?)
}
