//! The twelve acoustic features and the nine-component classifier input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{qc_check, AnnotationTier, Interval, PhonemeClass, PhonemeClassMap};
use crate::audio::Waveform;
use crate::dsp::{
    self, f0_contour, formant_tracks, intensity_contour, spectral_centroid, Contour, DspError,
    FormantConfig, IntensityConfig, PitchConfig,
};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("{feature}: insufficient data ({reason})")]
    InsufficientData {
        feature: &'static str,
        reason: String,
    },
    #[error("{feature}: {source}")]
    Signal {
        feature: &'static str,
        source: DspError,
    },
    #[error("{0}")]
    Contract(String),
}

fn insufficient(feature: &'static str, reason: impl Into<String>) -> FeatureError {
    FeatureError::InsufficientData {
        feature,
        reason: reason.into(),
    }
}

/// Column names, in table order, with unit suffixes.
pub const FEATURE_COLUMNS: [&str; 12] = [
    "speech_duration_s",
    "silence_to_speech_ratio",
    "vowel_to_speech_ratio",
    "csi_vowel_duration",
    "csi_f0_st_per_s",
    "f0_quantile_diff_st",
    "unvoiced_stop_mean_ms",
    "csi_intensity_db_per_s",
    "s_centroid_sd_hz",
    "f1_sd_hz",
    "f2_sd_hz",
    "f3_sd_hz",
];

/// The seven features that enter the classifier, in model-vector order.
pub const VALIDATED_FEATURES: [&str; 7] = [
    "speech_duration_s",
    "vowel_to_speech_ratio",
    "csi_vowel_duration",
    "f0_quantile_diff_st",
    "unvoiced_stop_mean_ms",
    "csi_intensity_db_per_s",
    "s_centroid_sd_hz",
];

pub const MODEL_VECTOR_COLUMNS: [&str; 9] = [
    "speech_duration_s",
    "vowel_to_speech_ratio",
    "csi_vowel_duration",
    "f0_quantile_diff_st",
    "unvoiced_stop_mean_ms",
    "csi_intensity_db_per_s",
    "s_centroid_sd_hz",
    "age_years",
    "gender_code",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub speech_duration_s: f64,
    pub silence_to_speech_ratio: f64,
    pub vowel_to_speech_ratio: f64,
    pub csi_vowel_duration: f64,
    pub csi_f0: f64,
    pub f0_quantile_diff: f64,
    pub unvoiced_stop_mean_ms: f64,
    pub csi_intensity: f64,
    pub s_centroid_sd_hz: f64,
    pub f1_sd_hz: f64,
    pub f2_sd_hz: f64,
    pub f3_sd_hz: f64,
}

impl FeatureSet {
    /// Values in [`FEATURE_COLUMNS`] order.
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.speech_duration_s,
            self.silence_to_speech_ratio,
            self.vowel_to_speech_ratio,
            self.csi_vowel_duration,
            self.csi_f0,
            self.f0_quantile_diff,
            self.unvoiced_stop_mean_ms,
            self.csi_intensity,
            self.s_centroid_sd_hz,
            self.f1_sd_hz,
            self.f2_sd_hz,
            self.f3_sd_hz,
        ]
    }

    pub fn from_array(v: [f64; 12]) -> Self {
        Self {
            speech_duration_s: v[0],
            silence_to_speech_ratio: v[1],
            vowel_to_speech_ratio: v[2],
            csi_vowel_duration: v[3],
            csi_f0: v[4],
            f0_quantile_diff: v[5],
            unvoiced_stop_mean_ms: v[6],
            csi_intensity: v[7],
            s_centroid_sd_hz: v[8],
            f1_sd_hz: v[9],
            f2_sd_hz: v[10],
            f3_sd_hz: v[11],
        }
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        FEATURE_COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| self.to_array()[i])
    }
}

/// Classifier input: seven validated features, age, gender (female 0, male 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVector(pub [f64; 9]);

impl ModelVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn build_model_vector(
    fs: &FeatureSet,
    age_years: f64,
    gender_code: u8,
) -> Result<ModelVector, FeatureError> {
    if gender_code > 1 {
        return Err(FeatureError::Contract(format!(
            "gender code must be 0 (female) or 1 (male), got {gender_code}"
        )));
    }
    if !(age_years > 0.0 && age_years.is_finite()) {
        return Err(FeatureError::Contract(format!("age must be positive, got {age_years}")));
    }
    let mut v = [0.0; 9];
    for (slot, name) in v.iter_mut().zip(VALIDATED_FEATURES) {
        let x = fs.get(name).expect("validated features are feature columns");
        if !x.is_finite() {
            return Err(FeatureError::Contract(format!("{name} is not finite ({x})")));
        }
        *slot = x;
    }
    v[7] = age_years;
    v[8] = gender_code as f64;
    Ok(ModelVector(v))
}

/// Cumulative slope index: `Σ |x[n+1] - x[n]|` divided by `normalizer_s`.
pub fn csi(x: &[f64], normalizer_s: f64) -> Result<f64, FeatureError> {
    if x.len() < 2 {
        return Err(insufficient("csi", format!("{} values, need at least 2", x.len())));
    }
    if !(normalizer_s > 0.0) {
        return Err(FeatureError::Contract(format!(
            "csi normalizer must be positive, got {normalizer_s}"
        )));
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / normalizer_s)
}

/// CSI over a contour. Differences are only taken between adjacent defined
/// frames; unvoiced gaps contribute nothing.
pub fn csi_gapped(c: &Contour, normalizer_s: f64) -> Result<f64, FeatureError> {
    if c.n_defined() < 2 {
        return Err(insufficient("csi", format!("{} defined frames", c.n_defined())));
    }
    if !(normalizer_s > 0.0) {
        return Err(FeatureError::Contract(format!(
            "csi normalizer must be positive, got {normalizer_s}"
        )));
    }
    let total: f64 = c
        .values
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some((b - a).abs()),
            _ => None,
        })
        .sum();
    Ok(total / normalizer_s)
}

/// Quantile by linear interpolation at position `(n - 1) p` of the sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn of_class<'a>(
    tier: &'a AnnotationTier,
    classmap: &'a PhonemeClassMap,
    class: PhonemeClass,
) -> impl Iterator<Item = &'a Interval> {
    tier.intervals()
        .iter()
        .filter(move |iv| classmap.class_of(&iv.label) == class)
}

/// `(start of first, end of last)` non-silence interval.
pub fn speech_window(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<(f64, f64), FeatureError> {
    let mut speech = tier
        .intervals()
        .iter()
        .filter(|iv| !classmap.is_silence(&iv.label));
    let first = speech
        .next()
        .ok_or_else(|| insufficient("speech_duration_s", "annotation has no non-silence interval"))?;
    let last = speech.next_back().unwrap_or(first);
    Ok((first.t_start_s, last.t_end_s))
}

pub fn speech_duration(tier: &AnnotationTier, classmap: &PhonemeClassMap) -> Result<f64, FeatureError> {
    let (a, b) = speech_window(tier, classmap)?;
    Ok(b - a)
}

pub fn silence_to_speech_ratio(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<f64, FeatureError> {
    let (a, b) = speech_window(tier, classmap)?;
    let silent: f64 = of_class(tier, classmap, PhonemeClass::Silence)
        .filter(|iv| iv.t_start_s >= a && iv.t_end_s <= b)
        .map(Interval::duration_s)
        .sum();
    Ok(silent / (b - a))
}

pub fn vowel_to_speech_ratio(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<f64, FeatureError> {
    let total = speech_duration(tier, classmap)?;
    let vowels: f64 = of_class(tier, classmap, PhonemeClass::Vowel)
        .map(Interval::duration_s)
        .sum();
    Ok(vowels / total)
}

pub fn csi_vowel_duration(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<f64, FeatureError> {
    let total = speech_duration(tier, classmap)?;
    let durations: Vec<f64> = of_class(tier, classmap, PhonemeClass::Vowel)
        .map(Interval::duration_s)
        .collect();
    if durations.len() < 2 {
        return Err(insufficient(
            "csi_vowel_duration",
            format!("{} vowels, need at least 2", durations.len()),
        ));
    }
    csi(&durations, total)
}

pub fn f0_quantile_diff(f0: &Contour) -> Result<f64, FeatureError> {
    let mut v: Vec<f64> = f0.defined().collect();
    if v.len() < 4 {
        return Err(insufficient(
            "f0_quantile_diff_st",
            format!("{} voiced frames, need at least 4", v.len()),
        ));
    }
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25))
}

pub fn unvoiced_stop_mean_duration(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<f64, FeatureError> {
    let d: Vec<f64> = of_class(tier, classmap, PhonemeClass::UnvoicedStop)
        .map(Interval::duration_s)
        .collect();
    if d.is_empty() {
        return Err(insufficient("unvoiced_stop_mean_ms", "no unvoiced stops annotated"));
    }
    Ok(1000.0 * d.iter().sum::<f64>() / d.len() as f64)
}

fn named(feature: &'static str, e: FeatureError) -> FeatureError {
    match e {
        FeatureError::InsufficientData { reason, .. } => FeatureError::InsufficientData { feature, reason },
        other => other,
    }
}

pub fn csi_f0(f0: &Contour, speech_dur_s: f64) -> Result<f64, FeatureError> {
    csi_gapped(f0, speech_dur_s).map_err(|e| named("csi_f0_st_per_s", e))
}

pub fn csi_intensity(intensity: &Contour, speech_dur_s: f64) -> Result<f64, FeatureError> {
    csi_gapped(intensity, speech_dur_s).map_err(|e| named("csi_intensity_db_per_s", e))
}

pub fn s_centroid_sd(
    w: &Waveform,
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
) -> Result<f64, FeatureError> {
    let centroids = of_class(tier, classmap, PhonemeClass::SibilantS)
        .map(|iv| spectral_centroid(w, iv.t_start_s, iv.t_end_s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| FeatureError::Signal {
            feature: "s_centroid_sd_hz",
            source,
        })?;
    if centroids.len() < 2 {
        return Err(insufficient(
            "s_centroid_sd_hz",
            format!("{} /s/ intervals, need at least 2", centroids.len()),
        ));
    }
    Ok(sample_sd(&centroids))
}

/// SD of each of F1-F3 over frames whose centre falls inside a vowel.
pub fn formant_sds(
    w: &Waveform,
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
    cfg: &FormantConfig,
) -> Result<(f64, f64, f64), FeatureError> {
    let vowels: Vec<&Interval> = of_class(tier, classmap, PhonemeClass::Vowel).collect();
    if vowels.len() < 2 {
        return Err(insufficient(
            "f1_sd_hz",
            format!("{} vowels, need at least 2", vowels.len()),
        ));
    }
    let (a, b) = (vowels[0].t_start_s, vowels[vowels.len() - 1].t_end_s);
    let seg = dsp::slice(w, a, b.min(w.duration_s())).map_err(|source| FeatureError::Signal {
        feature: "f1_sd_hz",
        source,
    })?;
    // slice start rounds to a sample; frame times are relative to it
    let offset = dsp::time_to_sample(a, w.sample_rate_hz()) as f64 / w.sample_rate_hz() as f64;
    let frames = formant_tracks(&seg, cfg).map_err(|source| FeatureError::Signal {
        feature: "f1_sd_hz",
        source,
    })?;
    let mut tracks: [Vec<f64>; 3] = Default::default();
    let mut vi = 0;
    for f in &frames {
        let t = f.t_s + offset;
        while vi < vowels.len() && vowels[vi].t_end_s < t {
            vi += 1;
        }
        if vi < vowels.len() && vowels[vi].t_start_s <= t {
            for (track, v) in tracks.iter_mut().zip([f.f1_hz, f.f2_hz, f.f3_hz]) {
                track.extend(v);
            }
        }
    }
    let mut sds = [0.0; 3];
    for (k, (track, name)) in tracks
        .iter()
        .zip(["f1_sd_hz", "f2_sd_hz", "f3_sd_hz"])
        .enumerate()
    {
        if track.len() < 2 {
            return Err(insufficient(
                name,
                format!("{} defined formant frames inside vowels", track.len()),
            ));
        }
        sds[k] = sample_sd(track);
    }
    Ok((sds[0], sds[1], sds[2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub pitch: PitchConfig,
    pub formant: FormantConfig,
    pub intensity: IntensityConfig,
}

/// Computes all twelve features. Pitch and intensity contours are computed
/// on the speech window only.
pub fn extract_all(
    w: &Waveform,
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
    cfg: &ExtractionConfig,
) -> Result<FeatureSet, FeatureError> {
    let qc = qc_check(tier, classmap, w.duration_s());
    if let Some(f) = qc
        .findings
        .iter()
        .find(|f| f.severity == crate::annotation::Severity::Error)
    {
        return Err(FeatureError::Contract(format!("annotation failed QC: {}", f.message)));
    }
    let (a, b) = speech_window(tier, classmap)?;
    let speech_dur = b - a;
    let window = dsp::slice(w, a, b.min(w.duration_s())).map_err(|source| FeatureError::Signal {
        feature: "speech_duration_s",
        source,
    })?;
    let f0 = f0_contour(&window, &cfg.pitch).map_err(|source| FeatureError::Signal {
        feature: "f0_quantile_diff_st",
        source,
    })?;
    let intensity = intensity_contour(&window, &cfg.intensity).map_err(|source| FeatureError::Signal {
        feature: "csi_intensity_db_per_s",
        source,
    })?;
    let (f1, f2, f3) = formant_sds(w, tier, classmap, &cfg.formant)?;
    Ok(FeatureSet {
        speech_duration_s: speech_dur,
        silence_to_speech_ratio: silence_to_speech_ratio(tier, classmap)?,
        vowel_to_speech_ratio: vowel_to_speech_ratio(tier, classmap)?,
        csi_vowel_duration: csi_vowel_duration(tier, classmap)?,
        csi_f0: csi_f0(&f0, speech_dur)?,
        f0_quantile_diff: f0_quantile_diff(&f0)?,
        unvoiced_stop_mean_ms: unvoiced_stop_mean_duration(tier, classmap)?,
        csi_intensity: csi_intensity(&intensity, speech_dur)?,
        s_centroid_sd_hz: s_centroid_sd(w, tier, classmap)?,
        f1_sd_hz: f1,
        f2_sd_hz: f2,
        f3_sd_hz: f3,
    })
}
