//! Pause statistics over VAD output and the Pauses/Neutral threshold rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::SegmentList;

#[derive(Debug, Error, PartialEq)]
pub enum PauseError {
    #[error("clip duration must be positive")]
    ZeroDuration,
    #[error("segment ({start}, {end}) lies outside the clip [0, {duration}]")]
    SegmentOutOfRange { start: f64, end: f64, duration: f64 },
    #[error("threshold must be a non-negative number, got {0}")]
    InvalidThreshold(f64),
}

/// Per-clip pause statistics. All times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauseProfile {
    pub silence_ratio: f64,
    pub pause_rate: f64,
    pub avg_pause_length: f64,
    pub pause_count: usize,
    pub clip_duration: f64,
}

impl PauseProfile {
    pub fn metric(&self, metric: PauseMetric) -> f64 {
        match metric {
            PauseMetric::SilenceRatio => self.silence_ratio,
            PauseMetric::PauseRate => self.pause_rate,
            PauseMetric::AvgPauseLength => self.avg_pause_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseMetric {
    SilenceRatio,
    PauseRate,
    AvgPauseLength,
}

impl PauseMetric {
    pub const ALL: [PauseMetric; 3] =
        [PauseMetric::SilenceRatio, PauseMetric::PauseRate, PauseMetric::AvgPauseLength];

    pub fn name(self) -> &'static str {
        match self {
            PauseMetric::SilenceRatio => "silence_ratio",
            PauseMetric::PauseRate => "pause_rate",
            PauseMetric::AvgPauseLength => "avg_pause_length",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDirection {
    AtOrAboveIsPauses,
    BelowIsPauses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauseThresholdConfig {
    pub metric: PauseMetric,
    pub threshold: f64,
    pub direction: ThresholdDirection,
}

impl PauseThresholdConfig {
    pub fn new(
        metric: PauseMetric,
        threshold: f64,
        direction: ThresholdDirection,
    ) -> Result<Self, PauseError> {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(PauseError::InvalidThreshold(threshold));
        }
        Ok(Self { metric, threshold, direction })
    }
}

impl Default for PauseThresholdConfig {
    fn default() -> Self {
        Self {
            metric: PauseMetric::AvgPauseLength,
            threshold: 0.5,
            direction: ThresholdDirection::AtOrAboveIsPauses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauseClass {
    Pauses,
    Neutral,
}

/// Computes silence ratio, pause rate and average pause length.
///
/// Pauses are the gaps between consecutive speech segments. Leading and
/// trailing silence counts toward the silence ratio only.
pub fn compute_pause_profile(
    clip_duration: f64,
    segments: &SegmentList,
) -> Result<PauseProfile, PauseError> {
    if !(clip_duration > 0.0) {
        return Err(PauseError::ZeroDuration);
    }
    // Allow float noise from frame-time arithmetic at the clip edge.
    let slack = 1e-9 * clip_duration.max(1.0);
    for s in segments.segments() {
        if s.start < -slack || s.end > clip_duration + slack {
            return Err(PauseError::SegmentOutOfRange {
                start: s.start,
                end: s.end,
                duration: clip_duration,
            });
        }
    }
    let total_speech = segments.total_speech();
    let silence_total = (clip_duration - total_speech).max(0.0);
    let gaps: Vec<f64> = segments
        .segments()
        .windows(2)
        .map(|w| w[1].start - w[0].end)
        .collect();
    let pause_count = gaps.len();
    let avg_pause_length = if pause_count == 0 {
        0.0
    } else {
        gaps.iter().sum::<f64>() / pause_count as f64
    };
    Ok(PauseProfile {
        silence_ratio: silence_total / clip_duration,
        pause_rate: pause_count as f64 / clip_duration,
        avg_pause_length,
        pause_count,
        clip_duration,
    })
}

pub fn classify_pauses(profile: &PauseProfile, config: &PauseThresholdConfig) -> PauseClass {
    let value = profile.metric(config.metric);
    let pauses = match config.direction {
        ThresholdDirection::AtOrAboveIsPauses => value >= config.threshold,
        ThresholdDirection::BelowIsPauses => value < config.threshold,
    };
    if pauses {
        PauseClass::Pauses
    } else {
        PauseClass::Neutral
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SpeechSegment;
    use proptest::prelude::*;

    fn segs(v: &[(f64, f64)]) -> SegmentList {
        SegmentList::new(v.iter().map(|&(start, end)| SpeechSegment { start, end }).collect())
            .unwrap()
    }

    fn profile_with_apl(apl: f64) -> PauseProfile {
        PauseProfile {
            silence_ratio: 0.3,
            pause_rate: 0.2,
            avg_pause_length: apl,
            pause_count: 2,
            clip_duration: 10.0,
        }
    }

    #[test]
    fn single_gap_case() {
        let p = compute_pause_profile(10.0, &segs(&[(1.0, 4.0), (5.0, 9.0)])).unwrap();
        assert!((p.silence_ratio - 0.3).abs() < 1e-12);
        assert_eq!(p.pause_count, 1);
        assert!((p.pause_rate - 0.1).abs() < 1e-12);
        assert!((p.avg_pause_length - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_speech_has_no_pauses() {
        let p = compute_pause_profile(5.0, &segs(&[(0.0, 5.0)])).unwrap();
        assert_eq!(p.silence_ratio, 0.0);
        assert_eq!(p.pause_rate, 0.0);
        assert_eq!(p.avg_pause_length, 0.0);
    }

    #[test]
    fn two_gap_case() {
        let p = compute_pause_profile(12.0, &segs(&[(0.0, 2.0), (3.0, 5.0), (8.0, 12.0)])).unwrap();
        assert!((p.silence_ratio - 4.0 / 12.0).abs() < 1e-12);
        assert!((p.pause_rate - 2.0 / 12.0).abs() < 1e-12);
        assert!((p.avg_pause_length - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_rejected() {
        assert_eq!(compute_pause_profile(0.0, &SegmentList::empty()), Err(PauseError::ZeroDuration));
    }

    #[test]
    fn empty_segments_are_all_silence() {
        let p = compute_pause_profile(3.0, &SegmentList::empty()).unwrap();
        assert_eq!(p.silence_ratio, 1.0);
        assert_eq!(p.pause_count, 0);
    }

    #[test]
    fn out_of_range_segment_rejected() {
        let err = compute_pause_profile(2.0, &segs(&[(0.5, 3.0)])).unwrap_err();
        assert!(matches!(err, PauseError::SegmentOutOfRange { .. }));
    }

    #[test]
    fn default_threshold_classification() {
        let cfg = PauseThresholdConfig::default();
        assert_eq!(classify_pauses(&profile_with_apl(0.68), &cfg), PauseClass::Pauses);
        assert_eq!(classify_pauses(&profile_with_apl(0.49), &cfg), PauseClass::Neutral);
        assert_eq!(classify_pauses(&profile_with_apl(0.5), &cfg), PauseClass::Pauses);
    }

    #[test]
    fn below_direction_flips() {
        let cfg = PauseThresholdConfig {
            direction: ThresholdDirection::BelowIsPauses,
            ..PauseThresholdConfig::default()
        };
        assert_eq!(classify_pauses(&profile_with_apl(0.49), &cfg), PauseClass::Pauses);
        assert_eq!(classify_pauses(&profile_with_apl(0.5), &cfg), PauseClass::Neutral);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(PauseThresholdConfig::new(
            PauseMetric::PauseRate,
            -0.1,
            ThresholdDirection::AtOrAboveIsPauses
        )
        .is_err());
    }

    fn layout() -> impl Strategy<Value = (f64, Vec<(f64, f64)>)> {
        prop::collection::vec((0.05f64..2.0, 0.05f64..2.0), 0..8).prop_flat_map(|pairs| {
            (0.0f64..1.0, 0.0f64..1.0).prop_map(move |(lead, tail)| {
                let mut t = lead;
                let mut out = Vec::new();
                for &(gap, len) in &pairs {
                    if !out.is_empty() {
                        t += gap;
                    }
                    out.push((t, t + len));
                    t += len;
                }
                (t + tail + 0.01, out)
            })
        })
    }

    proptest! {
        #[test]
        fn ratio_complements_speech((duration, layout) in layout()) {
            let list = segs(&layout);
            let p = compute_pause_profile(duration, &list).unwrap();
            let speech = list.total_speech() / duration;
            prop_assert!((p.silence_ratio + speech - 1.0).abs() < 1e-12);
            prop_assert_eq!(p.pause_count, layout.len().saturating_sub(1));
            prop_assert!((0.0..=1.0).contains(&p.silence_ratio));
            if p.pause_count == 0 {
                prop_assert_eq!(p.avg_pause_length, 0.0);
                prop_assert_eq!(p.pause_rate, 0.0);
            }
        }

        #[test]
        fn inserting_into_gap_adds_one_pause((duration, layout) in layout(), pick in 0usize..8, frac in 0.2f64..0.6) {
            prop_assume!(layout.len() >= 2);
            let i = pick % (layout.len() - 1);
            let (gap_start, gap_end) = (layout[i].1, layout[i + 1].0);
            let gap = gap_end - gap_start;
            let ins = (gap_start + gap * 0.2, gap_start + gap * 0.2 + gap * frac * 0.5);
            let mut with = layout.clone();
            with.insert(i + 1, ins);
            let before = compute_pause_profile(duration, &segs(&layout)).unwrap();
            let after = compute_pause_profile(duration, &segs(&with)).unwrap();
            prop_assert_eq!(after.pause_count, before.pause_count + 1);
            let inserted = ins.1 - ins.0;
            let drop = (before.silence_ratio - after.silence_ratio) * duration;
            prop_assert!((drop - inserted).abs() < 1e-9);
        }

        #[test]
        fn above_rule_is_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0, t in 0.0f64..3.0) {
            let cfg = PauseThresholdConfig::new(PauseMetric::AvgPauseLength, t, ThresholdDirection::AtOrAboveIsPauses).unwrap();
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            if classify_pauses(&profile_with_apl(lo), &cfg) == PauseClass::Pauses {
                prop_assert_eq!(classify_pauses(&profile_with_apl(hi), &cfg), PauseClass::Pauses);
            }
        }
    }
}
