//! Audio clips, RIFF/WAVE decoding, and frame-energy voice activity detection.

use std::io::Cursor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sample rates accepted on the wire.
pub const SUPPORTED_SAMPLE_RATES: [u32; 5] = [8_000, 16_000, 22_050, 44_100, 48_000];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed audio file: {0}")]
    MalformedFile(String),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
}

/// Mono PCM audio with samples normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, clamping samples into `[-1, 1]`.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip("non-finite sample".into()));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(duration: f64, sample_rate: u32) -> Self {
        let n = (duration * sample_rate as f64).round() as usize;
        Self { samples: vec![0.0; n], sample_rate }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stable content hash over the 16-bit quantized samples and the rate.
    ///
    /// Clips that encode to the same wire bytes share a fingerprint, so a
    /// decoded upload and the clip it was encoded from look identical to the
    /// stub model tables.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.sample_rate.to_le_bytes());
        for s in &self.samples {
            hasher.update(quantize(*s).to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    /// Encodes as 16-bit mono RIFF/WAVE.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut writer =
                hound::WavWriter::new(&mut buf, spec).expect("in-memory writer cannot fail");
            for s in &self.samples {
                writer.write_sample(quantize(*s)).expect("in-memory write cannot fail");
            }
            writer.finalize().expect("in-memory finalize cannot fail");
        }
        buf.into_inner()
    }
}

fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

/// Decodes a linear-PCM RIFF/WAVE file, downmixing to mono by channel averaging.
pub fn decode_clip(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::UnsupportedEncoding("floating-point samples".into()));
    }
    if !SUPPORTED_SAMPLE_RATES.contains(&spec.sample_rate) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "sample rate {} Hz",
            spec.sample_rate
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::MalformedFile("zero channels".into()));
    }
    let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
    let raw: Vec<i32> = reader
        .into_samples::<i32>()
        .collect::<Result<_, _>>()
        .map_err(map_hound)?;
    if !raw.len().is_multiple_of(channels) {
        return Err(AudioError::MalformedFile("truncated sample frame".into()));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&v| v as f64 / scale).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("non-linear-PCM format".into()),
        hound::Error::FormatError(msg) => AudioError::MalformedFile(msg.to_string()),
        hound::Error::IoError(e) => AudioError::MalformedFile(e.to_string()),
        other => AudioError::MalformedFile(other.to_string()),
    }
}

/// A detected speech interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub start: f64,
    pub end: f64,
}

impl SpeechSegment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Sorted, disjoint speech segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    segments: Vec<SpeechSegment>,
}

impl SegmentList {
    /// Validates ordering and positive gaps.
    pub fn new(segments: Vec<SpeechSegment>) -> Result<Self, AudioError> {
        for s in &segments {
            if !(s.start >= 0.0 && s.start < s.end) {
                return Err(AudioError::InvalidClip(format!(
                    "segment ({}, {}) is empty or negative",
                    s.start, s.end
                )));
            }
        }
        for w in segments.windows(2) {
            if w[1].start <= w[0].end {
                return Err(AudioError::InvalidClip(format!(
                    "segments ({}, {}) and ({}, {}) overlap or touch",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[SpeechSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_speech(&self) -> f64 {
        self.segments.iter().map(SpeechSegment::len).sum()
    }
}

/// Frame-energy VAD parameters. Times are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadConfig {
    pub frame_len: f64,
    pub hop_len: f64,
    pub energy_threshold: f64,
    pub min_gap_len: f64,
    pub min_speech_len: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_len: 0.030,
            hop_len: 0.010,
            energy_threshold: 0.01,
            min_gap_len: 0.2,
            min_speech_len: 0.1,
        }
    }
}

/// Locates speech by thresholding per-frame RMS energy.
///
/// Frames are `frame_len` wide, spaced `hop_len` apart. A run of speech
/// frames becomes a segment spanning the centers of its first and last
/// frames; a run touching the clip edge extends to that edge. Runs separated
/// by less than `min_gap_len` are merged, then segments shorter than
/// `min_speech_len` are dropped.
pub fn detect_speech(clip: &AudioClip, config: &VadConfig) -> SegmentList {
    let sr = clip.sample_rate() as f64;
    let samples = clip.samples();
    let n = samples.len();
    if n == 0 {
        return SegmentList::empty();
    }
    let frame = ((config.frame_len * sr).round() as usize).clamp(1, n);
    let hop = ((config.hop_len * sr).round() as usize).max(1);
    let duration = clip.duration();

    // Prefix sums of squared amplitude for O(1) window energy.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0f64;
    for &s in samples {
        acc += (s as f64) * (s as f64);
        prefix.push(acc);
    }
    let frame_count = (n - frame) / hop + 1;
    let threshold_sq = config.energy_threshold * config.energy_threshold;
    let is_speech: Vec<bool> = (0..frame_count)
        .map(|k| {
            let start = k * hop;
            let energy = (prefix[start + frame] - prefix[start]) / frame as f64;
            energy >= threshold_sq
        })
        .collect();

    let center = |k: usize| (k * hop) as f64 / sr + frame as f64 / (2.0 * sr);
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < frame_count {
        if !is_speech[k] {
            k += 1;
            continue;
        }
        let first = k;
        while k + 1 < frame_count && is_speech[k + 1] {
            k += 1;
        }
        let last = k;
        let start = if first == 0 { 0.0 } else { center(first) };
        let end = if last == frame_count - 1 { duration } else { center(last) };
        runs.push((start, end.min(duration)));
        k += 1;
    }

    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(runs.len());
    for (start, end) in runs {
        match merged.last_mut() {
            Some(prev) if start - prev.1 < config.min_gap_len => prev.1 = prev.1.max(end),
            _ => merged.push((start, end)),
        }
    }
    let segments = merged
        .into_iter()
        .filter(|(s, e)| e > s && e - s >= config.min_speech_len)
        .map(|(start, end)| SpeechSegment { start, end })
        .collect();
    SegmentList { segments }
}

/// Zeroes every sample outside the given segments.
pub fn keep_only_speech(clip: &AudioClip, segments: &SegmentList) -> AudioClip {
    let sr = clip.sample_rate() as f64;
    let mut out = vec![0.0f32; clip.samples().len()];
    for seg in segments.segments() {
        let a = ((seg.start * sr).floor() as usize).min(out.len());
        let b = ((seg.end * sr).ceil() as usize).min(out.len());
        out[a..b].copy_from_slice(&clip.samples()[a..b]);
    }
    AudioClip { samples: out, sample_rate: clip.sample_rate() }
}

/// Synthesizes a sine tone over each `(start, end)` interval, silence elsewhere.
pub fn synth_tone_layout(
    duration: f64,
    sample_rate: u32,
    intervals: &[(f64, f64)],
    freq: f64,
    amplitude: f32,
) -> AudioClip {
    let n = (duration * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut samples = vec![0.0f32; n];
    for &(start, end) in intervals {
        let a = ((start * sr).round() as usize).min(n);
        let b = ((end * sr).round() as usize).min(n);
        for (i, s) in samples.iter_mut().enumerate().take(b).skip(a) {
            *s = amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin() as f32;
        }
    }
    AudioClip { samples, sample_rate }
}
