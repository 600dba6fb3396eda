//! Negative-affect scoring from emotion probabilities and the per-turn distress decision.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pause::{classify_pauses, PauseClass, PauseProfile, PauseThresholdConfig};

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum AffectError {
    #[error("emotion label {0:?} missing from distribution")]
    MissingLabel(EmotionLabel),
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("probability for {label} is {value}, outside [0, 1]")]
    OutOfRange { label: EmotionLabel, value: f64 },
    #[error("distribution has no probability mass")]
    ZeroMass,
    #[error("setup must include at least one label")]
    EmptySetup,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Calm,
    Disgust,
    Fearful,
    Happy,
    Neutral,
    Sad,
    Surprised,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Angry,
        EmotionLabel::Calm,
        EmotionLabel::Disgust,
        EmotionLabel::Fearful,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
        EmotionLabel::Surprised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Calm => "calm",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fearful => "fearful",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprised => "surprised",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AffectError> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AffectError::UnknownLabel(s.to_string()))
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Eight-way emotion probabilities summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct EmotionDistribution {
    probs: [f64; 8],
}

impl EmotionDistribution {
    /// Validates a full label → probability map.
    ///
    /// A map whose mass is off from one by more than `1e-6` is rescaled and a
    /// warning is logged; the second value reports whether that happened.
    pub fn from_map(map: &BTreeMap<EmotionLabel, f64>) -> Result<(Self, bool), AffectError> {
        let mut probs = [0.0; 8];
        for label in EmotionLabel::ALL {
            let value = *map.get(&label).ok_or(AffectError::MissingLabel(label))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(AffectError::OutOfRange { label, value });
            }
            probs[label.index()] = value;
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(AffectError::ZeroMass);
        }
        let renormalized = (total - 1.0).abs() > SUM_TOLERANCE;
        if renormalized {
            tracing::warn!(total, "emotion distribution does not sum to 1; renormalizing");
            for p in &mut probs {
                *p /= total;
            }
        }
        Ok((Self { probs }, renormalized))
    }

    /// Convenience constructor from `(label, prob)` pairs; absent labels are zero.
    pub fn from_pairs(pairs: &[(EmotionLabel, f64)]) -> Result<Self, AffectError> {
        let mut map: BTreeMap<EmotionLabel, f64> =
            EmotionLabel::ALL.into_iter().map(|l| (l, 0.0)).collect();
        for &(label, p) in pairs {
            map.insert(label, p);
        }
        Self::from_map(&map).map(|(d, _)| d)
    }

    pub fn uniform() -> Self {
        Self { probs: [0.125; 8] }
    }

    pub fn get(&self, label: EmotionLabel) -> f64 {
        self.probs[label.index()]
    }

    pub fn to_map(&self) -> BTreeMap<EmotionLabel, f64> {
        EmotionLabel::ALL.into_iter().map(|l| (l, self.get(l))).collect()
    }
}

impl TryFrom<BTreeMap<String, f64>> for EmotionDistribution {
    type Error = AffectError;

    fn try_from(raw: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            map.insert(EmotionLabel::parse(&k)?, v);
        }
        Self::from_map(&map).map(|(d, _)| d)
    }
}

impl From<EmotionDistribution> for BTreeMap<String, f64> {
    fn from(d: EmotionDistribution) -> Self {
        EmotionLabel::ALL.into_iter().map(|l| (l.name().to_string(), d.get(l))).collect()
    }
}

/// A subset of labels summed into a negativity score, plus its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSetup {
    pub name: String,
    pub labels: Vec<EmotionLabel>,
    pub threshold: f64,
}

impl AggregationSetup {
    pub fn new(
        name: impl Into<String>,
        labels: &[EmotionLabel],
        threshold: f64,
    ) -> Result<Self, AffectError> {
        if labels.is_empty() {
            return Err(AffectError::EmptySetup);
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(AffectError::InvalidThreshold(threshold));
        }
        let mut labels = labels.to_vec();
        labels.sort();
        labels.dedup();
        Ok(Self { name: name.into(), labels, threshold })
    }

    /// The six label combinations evaluated by the harness, at the given threshold.
    pub fn presets(threshold: f64) -> Vec<AggregationSetup> {
        use EmotionLabel::*;
        let table: [(&str, &[EmotionLabel]); 6] = [
            ("ADFS", &[Angry, Disgust, Fearful, Sad]),
            ("ADF", &[Angry, Disgust, Fearful]),
            ("AD", &[Angry, Disgust]),
            ("AF", &[Angry, Fearful]),
            ("DF", &[Disgust, Fearful]),
            ("A", &[Angry]),
        ];
        table
            .into_iter()
            .map(|(name, labels)| {
                AggregationSetup::new(name, labels, threshold).expect("preset is valid")
            })
            .collect()
    }

    pub fn preset(name: &str, threshold: f64) -> Option<AggregationSetup> {
        Self::presets(threshold).into_iter().find(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, AffectError> {
        Self::new(self.name.clone(), &self.labels, threshold)
    }
}

impl Default for AggregationSetup {
    fn default() -> Self {
        Self::preset("A", 0.4).expect("anger preset exists")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NegativeClass {
    Negative,
    NotNegative,
}

pub fn aggregate_negative(dist: &EmotionDistribution, setup: &AggregationSetup) -> f64 {
    let score: f64 = setup.labels.iter().map(|&l| dist.get(l)).sum();
    score.clamp(0.0, 1.0)
}

pub fn classify_negative(score: f64, threshold: f64) -> NegativeClass {
    if score >= threshold {
        NegativeClass::Negative
    } else {
        NegativeClass::NotNegative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistressDecision {
    pub negative_affect: bool,
    pub pauses: bool,
    pub distressed: bool,
    pub negative_score: f64,
}

impl DistressDecision {
    pub fn calm() -> Self {
        Self { negative_affect: false, pauses: false, distressed: false, negative_score: 0.0 }
    }
}

/// Distress is negative affect OR prolonged pauses.
pub fn decide_distress(
    dist: &EmotionDistribution,
    profile: &PauseProfile,
    setup: &AggregationSetup,
    pause_config: &PauseThresholdConfig,
) -> DistressDecision {
    let negative_score = aggregate_negative(dist, setup);
    let negative_affect = classify_negative(negative_score, setup.threshold) == NegativeClass::Negative;
    let pauses = classify_pauses(profile, pause_config) == PauseClass::Pauses;
    DistressDecision { negative_affect, pauses, distressed: negative_affect || pauses, negative_score }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn profile(apl: f64) -> PauseProfile {
        PauseProfile {
            silence_ratio: 0.2,
            pause_rate: if apl > 0.0 { 0.3 } else { 0.0 },
            avg_pause_length: apl,
            pause_count: usize::from(apl > 0.0),
            clip_duration: 4.0,
        }
    }

    #[test]
    fn single_label_mass() {
        let d = EmotionDistribution::from_pairs(&[(Angry, 1.0)]).unwrap();
        assert_eq!(aggregate_negative(&d, &AggregationSetup::default()), 1.0);
    }

    #[test]
    fn adfs_and_anger_sums() {
        let d = EmotionDistribution::from_pairs(&[
            (Angry, 0.3),
            (Disgust, 0.2),
            (Fearful, 0.1),
            (Sad, 0.1),
            (Neutral, 0.3),
        ])
        .unwrap();
        let adfs = AggregationSetup::preset("ADFS", 0.4).unwrap();
        assert!((aggregate_negative(&d, &adfs) - 0.7).abs() < 1e-12);
        let a = AggregationSetup::preset("A", 0.4).unwrap();
        assert!((aggregate_negative(&d, &a) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        assert_eq!(classify_negative(0.45, 0.4), NegativeClass::Negative);
        assert_eq!(classify_negative(0.0, 0.4), NegativeClass::NotNegative);
        assert_eq!(classify_negative(0.4, 0.4), NegativeClass::Negative);
    }

    #[test]
    fn distress_composition() {
        let setup = AggregationSetup::default();
        let pauses = PauseThresholdConfig::default();
        let angry = EmotionDistribution::from_pairs(&[(Angry, 0.5), (Neutral, 0.5)]).unwrap();
        let d = decide_distress(&angry, &profile(0.1), &setup, &pauses);
        assert!(d.distressed && d.negative_affect && !d.pauses);

        let neutral = EmotionDistribution::from_pairs(&[(Neutral, 1.0)]).unwrap();
        let d = decide_distress(&neutral, &profile(0.8), &setup, &pauses);
        assert!(d.distressed && !d.negative_affect && d.pauses);

        let d = decide_distress(&neutral, &profile(0.0), &setup, &pauses);
        assert!(!d.distressed);
        assert_eq!(d.negative_score, 0.0);
    }

    #[test]
    fn rounded_distribution_renormalized() {
        let mut map: BTreeMap<EmotionLabel, f64> = EmotionLabel::ALL.into_iter().map(|l| (l, 0.0)).collect();
        map.insert(Angry, 0.899);
        map.insert(Neutral, 0.1);
        let (d, renorm) = EmotionDistribution::from_map(&map).unwrap();
        assert!(renorm);
        assert!((d.get(Angry) - 0.899 / 0.999).abs() < 1e-12);
        let total: f64 = d.to_map().values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_distributions_rejected() {
        let mut map: BTreeMap<EmotionLabel, f64> = EmotionLabel::ALL.into_iter().map(|l| (l, 0.125)).collect();
        map.remove(&Calm);
        assert_eq!(EmotionDistribution::from_map(&map).unwrap_err(), AffectError::MissingLabel(Calm));
        map.insert(Calm, 1.5);
        assert!(matches!(EmotionDistribution::from_map(&map), Err(AffectError::OutOfRange { .. })));
        let zeros: BTreeMap<EmotionLabel, f64> = EmotionLabel::ALL.into_iter().map(|l| (l, 0.0)).collect();
        assert_eq!(EmotionDistribution::from_map(&zeros).unwrap_err(), AffectError::ZeroMass);
    }

    #[test]
    fn json_shape_uses_label_names() {
        let d = EmotionDistribution::from_pairs(&[(Angry, 0.9), (Sad, 0.1)]).unwrap();
        let json = serde_json::to_value(d).unwrap();
        assert_eq!(json["angry"], 0.9);
        assert_eq!(json["surprised"], 0.0);
        let back: EmotionDistribution = serde_json::from_value(json).unwrap();
        assert_eq!(back, d);
        let bad = serde_json::json!({"angry": 1.0, "grumpy": 0.0});
        assert!(serde_json::from_value::<EmotionDistribution>(bad).is_err());
    }

    #[test]
    fn setup_validation() {
        assert_eq!(AggregationSetup::new("x", &[], 0.4).unwrap_err(), AffectError::EmptySetup);
        assert!(AggregationSetup::new("x", &[Angry], 1.2).is_err());
        assert_eq!(AggregationSetup::presets(0.5).len(), 6);
    }
}
