//! MFCC extraction, 2-second window slicing, and the binary feature cache.
//!
//! Extraction parameters:
//!
//! * 25 ms frames, 10 ms hop, no padding: `floor((ms - 25) / 10) + 1` frames
//! * per-frame pre-emphasis 0.97 (first sample scaled by 0.03), Hamming window
//! * power spectrum from a zero-padded FFT of the next power of two
//! * 26 triangular filters on the HTK mel scale from 0 Hz to Nyquist
//! * natural log with a 1e-10 floor, orthonormal-scaled DCT-II, c0..c12

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::numerics::Tensor2D;

pub const N_COEFFS: usize = 13;
pub const N_MEL_FILTERS: usize = 26;
pub const FRAME_LEN_MS: u64 = 25;
pub const FRAME_SHIFT_MS: u64 = 10;
pub const PRE_EMPHASIS: f64 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;
pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

/// Window lengths (in frames) the model accepts.
pub const MODEL_FRAME_COUNTS: [usize; 4] = [48, 98, 148, 198];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unsupported sample rate {0} Hz (expected 8000 or 16000)")]
    UnsupportedSampleRate(u32),
    #[error("audio has {samples} samples, one frame needs {needed}")]
    AudioTooShort { samples: usize, needed: usize },
    #[error("only {available} frames end by {t_ms} ms, {needed} requested")]
    InsufficientContext {
        t_ms: u64,
        needed: usize,
        available: usize,
    },
    #[error("bad magic bytes in feature cache")]
    BadMagic,
    #[error("feature cache version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("feature cache truncated")]
    TruncatedFile,
    #[error("wav: {0}")]
    Wav(String),
    #[error("audio must be mono, found {0} channels")]
    NotMono(u16),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub channel_id: String,
}

impl PcmAudio {
    /// Reads a mono 16-bit PCM WAV file.
    pub fn read_wav(path: &Path, channel_id: &str) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| FeatureError::Wav(e.to_string()))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(FeatureError::NotMono(spec.channels));
        }
        if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(FeatureError::Wav(format!(
                "expected PCM-16, found {} bit {:?}",
                spec.bits_per_sample, spec.sample_format
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FeatureError::Wav(e.to_string()))?;
        Ok(Self {
            samples,
            sample_rate: spec.sample_rate,
            channel_id: channel_id.to_string(),
        })
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(|e| FeatureError::Wav(e.to_string()))?;
        for &s in &self.samples {
            w.write_sample(s).map_err(|e| FeatureError::Wav(e.to_string()))?;
        }
        w.finalize().map_err(|e| FeatureError::Wav(e.to_string()))
    }

    pub fn duration_ms(&self) -> u64 {
        self.samples.len() as u64 * 1000 / self.sample_rate as u64
    }
}

/// Per-frame features, one row per 10 ms hop; frame `i` starts at `10 i` ms.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Tensor2D,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }
}

/// The model input: `n_frames × 13` MFCCs right-aligned at `end_time_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub values: Tensor2D,
    pub end_time_ms: u64,
}

impl FeatureWindow {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }
}

pub fn samples_per_frame(sample_rate: u32) -> usize {
    (sample_rate as u64 * FRAME_LEN_MS / 1000) as usize
}

pub fn samples_per_hop(sample_rate: u32) -> usize {
    (sample_rate as u64 * FRAME_SHIFT_MS / 1000) as usize
}

/// Number of whole frames in `n_samples`; zero when shorter than a frame.
pub fn frame_count(n_samples: usize, sample_rate: u32) -> usize {
    let len = samples_per_frame(sample_rate);
    if n_samples < len {
        0
    } else {
        (n_samples - len) / samples_per_hop(sample_rate) + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed state for one sample rate.
pub struct MfccExtractor {
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    fft_size: usize,
    window: Vec<f64>,
    /// `N_MEL_FILTERS` rows over `fft_size / 2 + 1` bins.
    filterbank: Vec<Vec<f64>>,
    /// `N_COEFFS` rows over `N_MEL_FILTERS` log energies.
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(sample_rate: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(FeatureError::UnsupportedSampleRate(sample_rate));
        }
        let frame_len = samples_per_frame(sample_rate);
        let fft_size = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(Self {
            sample_rate,
            frame_len,
            hop: samples_per_hop(sample_rate),
            fft_size,
            window,
            filterbank: mel_filterbank(sample_rate, fft_size),
            dct: dct_matrix(),
            fft,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    /// Pre-emphasis and Hamming window applied to one raw frame.
    pub fn prepare_frame(&self, raw: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw.len(), self.frame_len);
        let mut out = Vec::with_capacity(raw.len());
        let mut prev = raw[0];
        for (n, &x) in raw.iter().enumerate() {
            out.push((x - PRE_EMPHASIS * prev) * self.window[n]);
            prev = x;
        }
        out
    }

    /// `|X_k|^2` for `k = 0..=fft_size/2` of the zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.fft_size)
            .collect();
        self.fft.process(&mut buf);
        buf[..=self.fft_size / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    fn coefficients(&self, spectrum: &[f64]) -> [f64; N_COEFFS] {
        let log_energies: Vec<f64> = self
            .filterbank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(spectrum).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        let mut c = [0.0; N_COEFFS];
        for (k, basis) in self.dct.iter().enumerate() {
            c[k] = basis.iter().zip(&log_energies).map(|(b, m)| b * m).sum();
        }
        c
    }

    /// MFCCs of real-valued samples (PCM scale is irrelevant beyond c0).
    pub fn extract(&self, samples: &[f64]) -> Result<FeatureSequence> {
        if samples.len() < self.frame_len {
            return Err(FeatureError::AudioTooShort {
                samples: samples.len(),
                needed: self.frame_len,
            });
        }
        let n = frame_count(samples.len(), self.sample_rate);
        let mut data = Vec::with_capacity(n * N_COEFFS);
        for i in 0..n {
            let raw = &samples[i * self.hop..i * self.hop + self.frame_len];
            let spectrum = self.power_spectrum(&self.prepare_frame(raw));
            data.extend_from_slice(&self.coefficients(&spectrum));
        }
        Ok(FeatureSequence {
            values: Tensor2D::new(n, N_COEFFS, data).expect("row count matches"),
        })
    }
}

fn mel_filterbank(sample_rate: u32, fft_size: usize) -> Vec<Vec<f64>> {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MEL_FILTERS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MEL_FILTERS + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    (0..N_MEL_FILTERS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn dct_matrix() -> Vec<Vec<f64>> {
    let n = N_MEL_FILTERS as f64;
    let scale = (2.0 / n).sqrt();
    (0..N_COEFFS)
        .map(|k| {
            (0..N_MEL_FILTERS)
                .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / n).cos())
                .collect()
        })
        .collect()
}

pub fn mfcc(audio: &PcmAudio) -> Result<FeatureSequence> {
    let extractor = MfccExtractor::new(audio.sample_rate)?;
    let samples: Vec<f64> = audio.samples.iter().map(|&s| s as f64).collect();
    extractor.extract(&samples)
}

/// Index of the last frame ending at or before `t_ms`, if any.
pub fn last_frame_ending_by(t_ms: u64) -> Option<usize> {
    t_ms.checked_sub(FRAME_LEN_MS)
        .map(|s| (s / FRAME_SHIFT_MS) as usize)
}

/// Shortest prediction time with `n_frames` complete frames of context.
pub fn min_context_ms(n_frames: usize) -> u64 {
    (n_frames as u64).saturating_sub(1) * FRAME_SHIFT_MS + FRAME_LEN_MS
}

/// The `n_frames` latest frames whose end is at or before `t_ms`.
pub fn extract_window(features: &FeatureSequence, t_ms: u64, n_frames: usize) -> Result<FeatureWindow> {
    let available = match last_frame_ending_by(t_ms) {
        Some(last) => (last + 1).min(features.n_frames()),
        None => 0,
    };
    if n_frames == 0 || available < n_frames {
        return Err(FeatureError::InsufficientContext {
            t_ms,
            needed: n_frames,
            available,
        });
    }
    Ok(FeatureWindow {
        values: features.values.slice_rows(available - n_frames, available),
        end_time_ms: t_ms,
    })
}

pub const CACHE_MAGIC: &[u8; 4] = b"BCMF";
pub const CACHE_VERSION: u16 = 1;
const CACHE_HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// Serializes a feature matrix: magic, u16 version, u32 rows, u32 cols,
/// then row-major little-endian f32.
pub fn encode_cache(values: &Tensor2D) -> Vec<u8> {
    let mut out = Vec::with_capacity(CACHE_HEADER_LEN + 4 * values.as_slice().len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(values.cols() as u32).to_le_bytes());
    for &v in values.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < 4 {
        return Err(FeatureError::TruncatedFile);
    }
    if &bytes[..4] != CACHE_MAGIC {
        return Err(FeatureError::BadMagic);
    }
    if bytes.len() < CACHE_HEADER_LEN {
        return Err(FeatureError::TruncatedFile);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CACHE_VERSION {
        return Err(FeatureError::VersionMismatch {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let body = &bytes[CACHE_HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(FeatureError::TruncatedFile);
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureSequence {
        values: Tensor2D::new(rows, cols, data).expect("length checked"),
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)
}

pub fn cache_write(path: &Path, values: &Tensor2D) -> Result<()> {
    Ok(write_atomic(path, &encode_cache(values))?)
}

pub fn cache_read(path: &Path) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_cache(&bytes)
}
