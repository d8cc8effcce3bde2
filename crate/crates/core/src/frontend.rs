//! Log-mel filterbank features.
//!
//! Per frame: Hann window, zero-padded FFT of size `next_pow2(window)`,
//! power spectrum, triangular HTK-mel filters, then `ln(max(energy, floor))`.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 80,
            window_ms: 25.0,
            shift_ms: 10.0,
            sample_rate: 16_000,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be at least 1".into()));
        }
        if !(self.shift_ms > 0.0 && self.shift_ms <= self.window_ms) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < shift_ms ({}) <= window_ms ({})",
                self.shift_ms, self.window_ms
            )));
        }
        if self.sample_rate == 0 || !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "sample_rate and log_floor must be positive".into(),
            ));
        }
        if self.win_samples() < 2 {
            return Err(Error::InvalidConfig(
                "window shorter than two samples".into(),
            ));
        }
        Ok(())
    }

    pub fn win_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        ((self.sample_rate as f64 * self.shift_ms / 1000.0).round() as usize).max(1)
    }

    pub fn fft_size(&self) -> usize {
        self.win_samples().next_power_of_two()
    }
}

pub fn frame_count(n_samples: usize, cfg: &FeatureConfig) -> Result<usize> {
    let win = cfg.win_samples();
    if n_samples < win {
        return Err(Error::AudioTooShort {
            samples: n_samples,
            window: win,
        });
    }
    Ok((n_samples - win) / cfg.hop_samples() + 1)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters between 0 Hz and Nyquist, equally spaced in mel.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_fft = cfg.fft_size();
        let n_bins = n_fft / 2 + 1;
        let sr = cfg.sample_rate as f64;
        let top = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = sr / n_fft as f64;
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(bin);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        MelFilterbank {
            filters,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(start, w)| w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log-mel features, `frame_count(pcm.len()) × n_mels`.
pub fn extract_logmel(pcm: &[f64], cfg: &FeatureConfig) -> Result<Tensor> {
    cfg.validate()?;
    let frames = frame_count(pcm.len(), cfg)?;
    let (win, hop, n_fft) = (cfg.win_samples(), cfg.hop_samples(), cfg.fft_size());
    let window = hann(win);
    let bank = MelFilterbank::new(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let floor_ln = cfg.log_floor.ln();
    let mut out = Tensor::zeros(frames, cfg.n_mels);
    for t in 0..frames {
        let chunk = &pcm[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < win { chunk[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        let row = out.row_mut(t);
        for (o, e) in row.iter_mut().zip(bank.apply(&power)) {
            *o = if e > cfg.log_floor { e.ln() } else { floor_ln };
        }
    }
    Ok(out)
}

/// PCM16 mono WAV, scaled to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?}, expected PCM16",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok((samples, spec.sample_rate))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// PCM16 mono WAV writer (used to build synthetic corpora and fixtures).
pub fn write_wav(path: impl AsRef<Path>, pcm: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in pcm {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

const CACHE_MAGIC: &[u8; 4] = b"STFM";
const CACHE_VERSION: u32 = 1;

/// Feature cache: `STFM`, then u32 version, u32 frames, u32 n_mels (all
/// little-endian), then row-major f32 values.
pub fn write_features(path: impl AsRef<Path>, feats: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + 4 * feats.len());
    bytes.extend_from_slice(CACHE_MAGIC);
    for v in [CACHE_VERSION, feats.rows() as u32, feats.cols() as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &x in feats.data() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::UnsupportedFormat(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("not a feature cache"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    if word(1) != CACHE_VERSION as usize {
        return Err(bad("unsupported feature cache version"));
    }
    let (rows, cols) = (word(2), word(3));
    if bytes.len() != 16 + 4 * rows * cols {
        return Err(bad("truncated feature cache"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Loads features for an audio path: `.wav` is extracted, anything else is
/// read as a feature cache.
pub fn load_features(path: impl AsRef<Path>, cfg: &FeatureConfig) -> Result<Tensor> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
    {
        let (pcm, sr) = read_wav(path)?;
        if sr != cfg.sample_rate {
            return Err(Error::UnsupportedFormat(format!(
                "{}: sample rate {sr}, expected {}",
                path.display(),
                cfg.sample_rate
            )));
        }
        extract_logmel(&pcm, cfg)
    } else {
        read_features(path)
    }
}
