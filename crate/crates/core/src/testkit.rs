//! Synthetic audio and annotations with controllable dysarthria-like effects.
//!
//! A reading is a fixed cycle of phoneme slots (unvoiced stop, vowel, /s/,
//! vowel) grouped into words, with optional pauses between words. The
//! annotation is written from the same sample boundaries used for synthesis.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{emit_textgrid, AnnotationTier, Interval};
use crate::audio::{write_wav, AudioError, Waveform};
use crate::rng;

#[derive(Debug, Error)]
pub enum TestkitError {
    #[error("{0}")]
    Contract(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("annotation: {0}")]
    Annotation(String),
}

const RAMP_S: f64 = 0.010;

/// Sine with 10 ms raised-cosine onset and offset ramps.
pub fn synth_tone(
    freq_hz: f64,
    duration_s: f64,
    rate_hz: u32,
    amplitude: f64,
) -> Result<Waveform, TestkitError> {
    let fs = rate_hz as f64;
    if !(freq_hz > 0.0 && freq_hz < fs / 2.0) {
        return Err(TestkitError::Contract(format!(
            "tone at {freq_hz} Hz aliases at {rate_hz} Hz sampling"
        )));
    }
    if !(duration_s > 0.0) || !(0.0..=1.0).contains(&amplitude) {
        return Err(TestkitError::Contract(
            "tone needs positive duration and amplitude in [0, 1]".into(),
        ));
    }
    let n = (duration_s * fs).round() as usize;
    let ramp = ((RAMP_S * fs).round() as usize).min(n / 2);
    let samples = (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            let gain = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            amplitude * gain * (2.0 * PI * freq_hz * i as f64 / fs).sin()
        })
        .collect();
    Ok(Waveform::new(samples, rate_hz)?)
}

/// Two-pole resonator with unit gain at DC.
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq_hz: f64, bandwidth_hz: f64, fs: f64) -> Self {
        let c = -(-2.0 * PI * bandwidth_hz / fs).exp();
        let b = 2.0 * (-PI * bandwidth_hz / fs).exp() * (2.0 * PI * freq_hz / fs).cos();
        Self {
            a: 1.0 - b - c,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn check_formants(formants: &[(f64, f64)], fs: f64) -> Result<(), TestkitError> {
    let ascending = formants.windows(2).all(|w| w[0].0 < w[1].0);
    let in_band = formants
        .iter()
        .all(|&(f, bw)| f > 0.0 && f < fs / 2.0 && bw > 0.0);
    if !ascending || !in_band {
        return Err(TestkitError::Contract(format!(
            "formants must be ascending with positive bandwidths below Nyquist, got {formants:?}"
        )));
    }
    Ok(())
}

/// Impulse train with f0 gliding linearly from `f0_start` to `f0_end`,
/// filtered by cascaded resonators. Unnormalized.
fn source_filter(
    f0_start: f64,
    f0_end: f64,
    formants: &[(f64, f64)],
    n: usize,
    fs: f64,
) -> Vec<f64> {
    let mut res: Vec<Resonator> = formants
        .iter()
        .map(|&(f, bw)| Resonator::new(f, bw, fs))
        .collect();
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let f0 = f0_start + (f0_end - f0_start) * i as f64 / n.max(1) as f64;
            let mut x = 0.0;
            phase += f0 / fs;
            if phase >= 1.0 || i == 0 {
                phase -= phase.floor();
                x = 1.0;
            }
            res.iter_mut().fold(x, |acc, r| r.step(acc))
        })
        .collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Impulse train at `f0_hz` through cascaded two-pole resonators, peak 0.5.
pub fn synth_vowel(
    f0_hz: f64,
    formants: &[(f64, f64); 3],
    duration_s: f64,
    rate_hz: u32,
) -> Result<Waveform, TestkitError> {
    let fs = rate_hz as f64;
    check_formants(formants, fs)?;
    if !(f0_hz > 0.0 && f0_hz < fs / 2.0) || !(duration_s > 0.0) {
        return Err(TestkitError::Contract("vowel needs positive f0 and duration".into()));
    }
    let n = (duration_s * fs).round() as usize;
    let mut x = source_filter(f0_hz, f0_hz, formants, n, fs);
    normalize_peak(&mut x, 0.5);
    Ok(Waveform::new(x, rate_hz)?)
}

/// White noise restricted to `[center - bw/2, center + bw/2]` in the
/// frequency domain. Unit RMS before scaling.
fn band_noise(center_hz: f64, bandwidth_hz: f64, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let nfft = n.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..nfft)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    let lo = center_hz - bandwidth_hz / 2.0;
    let hi = center_hz + bandwidth_hz / 2.0;
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(nfft - k) as f64 * fs / nfft as f64;
        if f < lo || f > hi {
            *b = Complex::default();
        }
    }
    planner.plan_fft_inverse(nfft).process(&mut buf);
    let mut out: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Seeded band-limited noise around `center_hz`, peak 0.5.
pub fn synth_sibilant(
    center_hz: f64,
    bandwidth_hz: f64,
    duration_s: f64,
    rate_hz: u32,
    seed: u64,
) -> Result<Waveform, TestkitError> {
    let fs = rate_hz as f64;
    if !(bandwidth_hz > 0.0
        && center_hz - bandwidth_hz / 2.0 > 0.0
        && center_hz + bandwidth_hz / 2.0 < fs / 2.0)
    {
        return Err(TestkitError::Contract(format!(
            "band {center_hz} ± {} Hz is not inside (0, {})",
            bandwidth_hz / 2.0,
            fs / 2.0
        )));
    }
    if !(duration_s > 0.0) {
        return Err(TestkitError::Contract("sibilant needs positive duration".into()));
    }
    let n = (duration_s * fs).round() as usize;
    let mut rng = rng::stream(seed, &[rng::tag("sibilant")]);
    let mut x = band_noise(center_hz, bandwidth_hz, n, fs, &mut rng);
    normalize_peak(&mut x, 0.5);
    Ok(Waveform::new(x, rate_hz)?)
}

// ---------------------------------------------------------------------------
// Readings

/// A mean with a per-occurrence standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jittered {
    pub mean: f64,
    pub jitter: f64,
}

impl Jittered {
    pub const fn new(mean: f64, jitter: f64) -> Self {
        Self { mean, jitter }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, min: f64) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.mean + self.jitter * z).max(min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerProfile {
    pub base_f0_hz: f64,
    /// Spread of per-vowel pitch targets around the base.
    pub f0_range_semitones: f64,
    pub vowel_duration_s: Jittered,
    pub stop_closure_s: Jittered,
    pub s_centroid_hz: Jittered,
    pub pause_probability: f64,
    /// Standard deviation of vowel level targets, drawn every 20 ms.
    pub intensity_wobble_db: f64,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
}

fn default_rate() -> u32 {
    24000
}

impl SpeakerProfile {
    pub fn control() -> Self {
        Self {
            base_f0_hz: 120.0,
            f0_range_semitones: 5.0,
            vowel_duration_s: Jittered::new(0.085, 0.018),
            stop_closure_s: Jittered::new(0.065, 0.012),
            s_centroid_hz: Jittered::new(6000.0, 150.0),
            pause_probability: 0.15,
            intensity_wobble_db: 1.5,
            seed: 1,
            sample_rate_hz: default_rate(),
        }
    }

    pub fn case() -> Self {
        Self {
            base_f0_hz: 120.0,
            f0_range_semitones: 3.8,
            vowel_duration_s: Jittered::new(0.092, 0.024),
            stop_closure_s: Jittered::new(0.076, 0.015),
            s_centroid_hz: Jittered::new(6000.0, 200.0),
            pause_probability: 0.2,
            intensity_wobble_db: 6.0,
            seed: 1,
            sample_rate_hz: default_rate(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TestkitError> {
        let fs = self.sample_rate_hz as f64;
        let ok = self.base_f0_hz > 0.0
            && self.f0_range_semitones >= 0.0
            && self.vowel_duration_s.mean > 0.0
            && self.vowel_duration_s.jitter >= 0.0
            && self.stop_closure_s.mean > 0.0
            && self.stop_closure_s.jitter >= 0.0
            && self.s_centroid_hz.mean > 0.0
            && self.s_centroid_hz.jitter >= 0.0
            && (0.0..=1.0).contains(&self.pause_probability)
            && self.intensity_wobble_db >= 0.0
            && self.sample_rate_hz >= 16000
            && self.s_centroid_hz.mean + SIBILANT_BANDWIDTH_HZ < fs / 2.0;
        if ok {
            Ok(())
        } else {
            Err(TestkitError::Contract(format!("invalid speaker profile {self:?}")))
        }
    }
}

impl Default for SpeakerProfile {
    fn default() -> Self {
        Self::control()
    }
}

pub const SIBILANT_BANDWIDTH_HZ: f64 = 2000.0;
const WORDS: usize = 15;
const EDGE_SILENCE_S: f64 = 0.3;
const NOISE_FLOOR_RMS: f64 = 2e-4;
const BURST_S: f64 = 0.012;
/// Spacing of the random vowel level targets.
const LEVEL_KNOT_S: f64 = 0.02;
const VOWEL_PEAK: f64 = 0.35;
const SIBILANT_RMS: f64 = 0.04;
const VOWELS: [(&str, [f64; 3]); 5] = [
    ("a", [750.0, 1300.0, 2500.0]),
    ("e", [550.0, 1800.0, 2550.0]),
    ("i", [350.0, 2200.0, 2950.0]),
    ("o", [500.0, 900.0, 2450.0]),
    ("u", [350.0, 750.0, 2300.0]),
];
const FORMANT_BANDWIDTHS: [f64; 3] = [80.0, 90.0, 120.0];
const STOPS: [&str; 4] = ["p", "t", "k", "c"];

struct Builder {
    fs: f64,
    samples: Vec<f64>,
    intervals: Vec<Interval>,
}

impl Builder {
    fn push(&mut self, label: &str, seg: Vec<f64>) {
        if seg.is_empty() {
            return;
        }
        let start = self.samples.len();
        self.samples.extend(seg);
        self.intervals.push(Interval::new(
            label,
            start as f64 / self.fs,
            self.samples.len() as f64 / self.fs,
        ));
    }

    fn n(&self, dur_s: f64) -> usize {
        (dur_s * self.fs).round().max(1.0) as usize
    }
}

/// Synthesizes a reading and its phoneme annotation.
pub fn synth_reading(profile: &SpeakerProfile) -> Result<(Waveform, AnnotationTier), TestkitError> {
    profile.validate()?;
    let fs = profile.sample_rate_hz as f64;
    let mut rng = rng::stream(profile.seed, &[rng::tag("reading")]);
    let mut b = Builder {
        fs,
        samples: Vec::new(),
        intervals: Vec::new(),
    };
    let edge = b.n(EDGE_SILENCE_S);
    b.push("", vec![0.0; edge]);
    let level = Normal::new(0.0, profile.intensity_wobble_db.max(1e-12)).expect("finite sd");
    let mut vowel_index = 0usize;
    for word in 0..WORDS {
        for slot in 0..4 {
            match slot {
                0 => {
                    let label = STOPS[(word + vowel_index) % STOPS.len()];
                    let closure = b.n(profile.stop_closure_s.draw(&mut rng, 0.02));
                    let burst = b.n(BURST_S);
                    let mut seg = vec![0.0; closure];
                    let noise = band_noise(3000.0, 4000.0, burst, fs, &mut rng);
                    seg.extend(noise.iter().enumerate().map(|(i, v)| {
                        0.03 * v * (1.0 - i as f64 / burst as f64)
                    }));
                    b.push(label, seg);
                }
                1 | 3 => {
                    let (label, formants) = VOWELS[vowel_index % VOWELS.len()];
                    vowel_index += 1;
                    let n = b.n(profile.vowel_duration_s.draw(&mut rng, 0.03));
                    let u: f64 = rng.random_range(-0.5..0.5);
                    let f0 = profile.base_f0_hz * 2f64.powf(profile.f0_range_semitones * u / 12.0);
                    let fmts: Vec<(f64, f64)> = formants
                        .iter()
                        .zip(FORMANT_BANDWIDTHS)
                        .map(|(&f, bw)| (f, bw))
                        .collect();
                    let mut seg = source_filter(f0, f0 * 0.98, &fmts, n, fs);
                    let n_knots = (n as f64 / (LEVEL_KNOT_S * fs)).ceil() as usize + 1;
                    let knots: Vec<f64> = (0..n_knots).map(|_| level.sample(&mut rng)).collect();
                    normalize_peak(&mut seg, VOWEL_PEAK);
                    let ramp = ((0.008 * fs) as usize).min(n / 2);
                    for (i, v) in seg.iter_mut().enumerate() {
                        let pos = i as f64 / (LEVEL_KNOT_S * fs);
                        let k = (pos as usize).min(n_knots - 2);
                        let frac = pos - k as f64;
                        let db = knots[k] + (knots[k + 1] - knots[k]) * frac;
                        let edge = i.min(n - 1 - i);
                        let fade = if edge < ramp {
                            0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
                        } else {
                            1.0
                        };
                        *v *= 10f64.powf(db / 20.0) * fade;
                    }
                    b.push(label, seg);
                }
                _ => {
                    let n = b.n(Jittered::new(0.09, 0.012).draw(&mut rng, 0.04));
                    let center = profile.s_centroid_hz.draw(&mut rng, 2000.0);
                    let center = center.min(fs / 2.0 - SIBILANT_BANDWIDTH_HZ / 2.0 - 100.0);
                    let mut seg = band_noise(center, SIBILANT_BANDWIDTH_HZ, n, fs, &mut rng);
                    seg.iter_mut().for_each(|v| *v *= SIBILANT_RMS);
                    b.push("s", seg);
                }
            }
        }
        if word + 1 < WORDS && rng.random_bool(profile.pause_probability) {
            let n = b.n(Jittered::new(0.35, 0.08).draw(&mut rng, 0.12));
            b.push("sil", vec![0.0; n]);
        }
    }
    b.push("", vec![0.0; edge]);

    let mut floor_rng = rng::stream(profile.seed, &[rng::tag("noise-floor")]);
    let samples: Vec<f64> = b
        .samples
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut floor_rng);
            (v + NOISE_FLOOR_RMS * z).clamp(-1.0, 1.0)
        })
        .collect();
    let tier = AnnotationTier::new(b.intervals)
        .map_err(|e| TestkitError::Annotation(e.to_string()))?;
    Ok((Waveform::new(samples, profile.sample_rate_hz)?, tier))
}

// ---------------------------------------------------------------------------
// Cohorts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeGender {
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_fraction: f64,
}

impl Default for AgeGender {
    fn default() -> Self {
        Self {
            age_mean: 44.7,
            age_sd: 10.8,
            male_fraction: 0.37,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_cases: usize,
    pub n_controls: usize,
    pub control_profile: SpeakerProfile,
    pub case_profile: SpeakerProfile,
    pub demographics: AgeGender,
    /// Coefficient of variation of per-subject parameters around the group profile.
    pub subject_variability: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_cases: 60,
            n_controls: 60,
            control_profile: SpeakerProfile::control(),
            case_profile: SpeakerProfile::case(),
            demographics: AgeGender::default(),
            subject_variability: 0.12,
            seed: 1,
        }
    }
}

impl CohortSpec {
    pub fn new(n_cases: usize, n_controls: usize, seed: u64) -> Self {
        Self {
            n_cases,
            n_controls,
            seed,
            ..Default::default()
        }
    }

    /// Case profile equal to the control profile.
    pub fn null(n_cases: usize, n_controls: usize, seed: u64) -> Self {
        let spec = Self::new(n_cases, n_controls, seed);
        Self {
            case_profile: spec.control_profile.clone(),
            ..spec
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Case,
    Control,
}

impl Cohort {
    pub fn as_str(&self) -> &'static str {
        match self {
            Cohort::Case => "case",
            Cohort::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "case" | "ms" | "1" => Some(Cohort::Case),
            "control" | "hc" | "0" => Some(Cohort::Control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDraw {
    pub subject_id: String,
    pub cohort: Cohort,
    pub age_years: f64,
    pub gender_code: u8,
    pub profile: SpeakerProfile,
}

pub const MANIFEST_HEADER: [&str; 6] = [
    "subject_id",
    "cohort",
    "age_years",
    "gender_code",
    "wav_path",
    "annotation_path",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub cohort: Cohort,
    pub age_years: f64,
    pub gender_code: u8,
    pub wav_path: String,
    pub annotation_path: String,
}

fn lognormal_scale(rng: &mut ChaCha8Rng, cv: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (cv * z).exp()
}

/// Draws the per-subject profiles and demographics. Deterministic in the spec seed.
pub fn draw_subjects(spec: &CohortSpec) -> Result<Vec<SubjectDraw>, TestkitError> {
    if spec.n_cases < 2 || spec.n_controls < 2 {
        return Err(TestkitError::Contract(format!(
            "cohorts need at least 2 subjects each, got {} cases and {} controls",
            spec.n_cases, spec.n_controls
        )));
    }
    spec.control_profile.validate()?;
    spec.case_profile.validate()?;
    let cv = spec.subject_variability.max(0.0);
    let groups = [
        (Cohort::Control, spec.n_controls, &spec.control_profile),
        (Cohort::Case, spec.n_cases, &spec.case_profile),
    ];
    let mut out = Vec::new();
    for (cohort, n, base) in groups {
        for i in 0..n {
            let mut r = rng::stream(spec.seed, &[rng::tag(cohort.as_str()), i as u64]);
            let z: f64 = StandardNormal.sample(&mut r);
            let age = (spec.demographics.age_mean + spec.demographics.age_sd * z)
                .clamp(18.0, 85.0)
                .round();
            let male = r.random_bool(spec.demographics.male_fraction.clamp(0.0, 1.0));
            let mut p = base.clone();
            let base_f0 = if male { 115.0 } else { 205.0 };
            p.base_f0_hz = base_f0 * base.base_f0_hz / 120.0 * lognormal_scale(&mut r, 0.08);
            p.f0_range_semitones *= lognormal_scale(&mut r, cv);
            p.vowel_duration_s.mean *= lognormal_scale(&mut r, cv);
            p.vowel_duration_s.jitter *= lognormal_scale(&mut r, cv);
            p.stop_closure_s.mean *= lognormal_scale(&mut r, cv);
            p.s_centroid_hz.mean *= lognormal_scale(&mut r, 0.04);
            p.s_centroid_hz.jitter *= lognormal_scale(&mut r, cv);
            p.pause_probability = (p.pause_probability * lognormal_scale(&mut r, cv)).clamp(0.0, 1.0);
            p.intensity_wobble_db *= lognormal_scale(&mut r, cv);
            p.seed = rng::derive_seed(spec.seed, &[rng::tag(cohort.as_str()), i as u64, 1]);
            out.push(SubjectDraw {
                subject_id: format!("{}_{i:03}", cohort.as_str()),
                cohort,
                age_years: age,
                gender_code: male as u8,
                profile: p,
            });
        }
    }
    Ok(out)
}

/// Writes `wav/`, `textgrid/` and `manifest.csv` under `out_dir`. Paths in
/// the manifest are relative to `out_dir`. Returns the manifest path.
pub fn synth_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<PathBuf, TestkitError> {
    use rayon::prelude::*;

    let subjects = draw_subjects(spec)?;
    fs::create_dir_all(out_dir.join("wav"))?;
    fs::create_dir_all(out_dir.join("textgrid"))?;
    let rows: Vec<ManifestRow> = subjects
        .par_iter()
        .map(|s| -> Result<ManifestRow, TestkitError> {
            let (w, tier) = synth_reading(&s.profile)?;
            let wav_rel = format!("wav/{}.wav", s.subject_id);
            let tg_rel = format!("textgrid/{}.TextGrid", s.subject_id);
            write_wav(&w, out_dir.join(&wav_rel))?;
            let tg = emit_textgrid(&[("phones".to_string(), tier)], w.duration_s())
                .map_err(|e| TestkitError::Annotation(e.to_string()))?;
            fs::write(out_dir.join(&tg_rel), tg)?;
            Ok(ManifestRow {
                subject_id: s.subject_id.clone(),
                cohort: s.cohort,
                age_years: s.age_years,
                gender_code: s.gender_code,
                wav_path: wav_rel,
                annotation_path: tg_rel,
            })
        })
        .collect::<Result<_, _>>()?;
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&rows, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<(), TestkitError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io::Error::other(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, TestkitError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io::Error::other(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| io::Error::other(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(TestkitError::Contract(format!(
            "manifest header must be '{}'",
            MANIFEST_HEADER.join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| TestkitError::Contract(format!("manifest: {e}"))))
        .collect()
}
