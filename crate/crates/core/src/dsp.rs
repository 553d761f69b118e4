//! Signal-level primitives: pitch, intensity, spectral centroid and formants.
//!
//! All analyses use integer hop sizes with frames starting at sample
//! `i * hop`, so delaying a signal by a whole number of hops shifts the
//! contour index without changing its values.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("{0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Uniformly stepped scalar track. `None` marks unvoiced or undefined frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub t0_s: f64,
    pub dt_s: f64,
    pub values: Vec<Option<f64>>,
}

impl Contour {
    pub fn time_of(&self, index: usize) -> f64 {
        self.t0_s + index as f64 * self.dt_s
    }

    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn n_defined(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Runs of consecutive defined frames.
    pub fn voiced_runs(&self) -> Vec<Vec<f64>> {
        let mut runs = Vec::new();
        let mut cur = Vec::new();
        for v in &self.values {
            match v {
                Some(x) => cur.push(*x),
                None if !cur.is_empty() => runs.push(std::mem::take(&mut cur)),
                None => {}
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        runs
    }

    /// Frames whose centre lies in `[t_start_s, t_end_s]`.
    pub fn restrict(&self, t_start_s: f64, t_end_s: f64) -> Contour {
        let mut first = None;
        let mut values = Vec::new();
        for (i, v) in self.values.iter().enumerate() {
            let t = self.time_of(i);
            if t >= t_start_s && t <= t_end_s {
                first.get_or_insert(i);
                values.push(*v);
            }
        }
        Contour {
            t0_s: first.map_or(t_start_s, |i| self.time_of(i)),
            dt_s: self.dt_s,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchConfig {
    pub floor_hz: f64,
    pub ceiling_hz: f64,
    /// Defaults to `0.75 / floor_hz` when `None`.
    pub time_step_s: Option<f64>,
    pub voicing_threshold: f64,
    /// Frames whose peak amplitude is below this fraction of the global peak are unvoiced.
    pub silence_threshold: f64,
    /// Per-octave penalty favouring shorter lags among near-equal peaks.
    pub octave_cost: f64,
    pub periods_per_window: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            floor_hz: 75.0,
            ceiling_hz: 600.0,
            time_step_s: None,
            voicing_threshold: 0.45,
            silence_threshold: 0.03,
            octave_cost: 0.01,
            periods_per_window: 3.0,
        }
    }
}

impl PitchConfig {
    pub fn time_step(&self) -> f64 {
        self.time_step_s.unwrap_or(0.75 / self.floor_hz)
    }

    fn validate(&self, sample_rate: f64) -> Result<(), DspError> {
        if !(self.floor_hz > 0.0 && self.floor_hz < self.ceiling_hz && self.ceiling_hz < sample_rate / 2.0)
        {
            return Err(DspError::Contract(format!(
                "pitch range must satisfy 0 < floor ({}) < ceiling ({}) < Nyquist ({})",
                self.floor_hz,
                self.ceiling_hz,
                sample_rate / 2.0
            )));
        }
        if !(self.time_step() > 0.0) || !(self.periods_per_window > 0.0) {
            return Err(DspError::Contract("pitch time step and window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormantConfig {
    pub max_formant_hz: f64,
    pub n_formants: usize,
    /// Defaults to `2 * n_formants` when `None`.
    pub lpc_order: Option<usize>,
    /// Effective window length; the Gaussian window spans twice this.
    pub window_s: f64,
    pub time_step_s: f64,
    pub preemphasis_from_hz: f64,
    pub max_bandwidth_hz: f64,
}

impl Default for FormantConfig {
    fn default() -> Self {
        Self {
            max_formant_hz: 5500.0,
            n_formants: 5,
            lpc_order: None,
            window_s: 0.025,
            time_step_s: 0.00625,
            preemphasis_from_hz: 50.0,
            max_bandwidth_hz: 400.0,
        }
    }
}

impl FormantConfig {
    pub fn order(&self) -> usize {
        self.lpc_order.unwrap_or(2 * self.n_formants)
    }

    fn validate(&self) -> Result<(), DspError> {
        let order = self.order();
        if !order.is_multiple_of(2) || order < 2 * self.n_formants || order == 0 {
            return Err(DspError::Contract(format!(
                "lpc order {order} must be even and at least 2 * n_formants ({})",
                2 * self.n_formants
            )));
        }
        if !(self.window_s > self.time_step_s && self.time_step_s > 0.0) {
            return Err(DspError::Contract(format!(
                "formant window ({}) must exceed time step ({}) > 0",
                self.window_s, self.time_step_s
            )));
        }
        if !(self.max_formant_hz > 0.0) {
            return Err(DspError::Contract("max formant must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormantFrame {
    pub t_s: f64,
    pub f1_hz: Option<f64>,
    pub f2_hz: Option<f64>,
    pub f3_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityConfig {
    pub window_s: f64,
    pub time_step_s: f64,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            window_s: 0.032,
            time_step_s: 0.008,
        }
    }
}

/// Squared reference amplitude (20 µPa mapped to digital full scale).
pub const INTENSITY_REFERENCE_POWER: f64 = 4.0e-10;
pub const SEMITONE_REFERENCE_HZ: f64 = 100.0;
pub const CENTROID_FRAME_S: f64 = 0.02;

pub fn hz_to_semitones(f_hz: f64, ref_hz: f64) -> Result<f64, DspError> {
    if !(f_hz > 0.0 && f_hz.is_finite()) || !(ref_hz > 0.0 && ref_hz.is_finite()) {
        return Err(DspError::Domain(format!(
            "frequencies must be positive, got {f_hz} re {ref_hz}"
        )));
    }
    Ok(12.0 * (f_hz / ref_hz).log2())
}

/// Nearest sample index; exact halves go to the earlier sample.
pub fn time_to_sample(t_s: f64, sample_rate_hz: u32) -> usize {
    let x = t_s * sample_rate_hz as f64;
    let f = x.floor();
    let idx = if x - f > 0.5 { f + 1.0 } else { f };
    idx.max(0.0) as usize
}

pub fn slice(w: &Waveform, t_start_s: f64, t_end_s: f64) -> Result<Waveform, DspError> {
    let dur = w.duration_s();
    if !(t_start_s >= 0.0 && t_start_s < t_end_s && t_end_s <= dur + 1e-9) {
        return Err(DspError::Contract(format!(
            "slice [{t_start_s}, {t_end_s}] outside waveform of {dur} s"
        )));
    }
    let a = time_to_sample(t_start_s, w.sample_rate_hz()).min(w.len());
    let b = time_to_sample(t_end_s, w.sample_rate_hz()).min(w.len());
    Ok(Waveform::new(w.samples()[a..b].to_vec(), w.sample_rate_hz())
        .expect("sub-slice of a valid waveform is valid"))
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len >= win {
        (len - win) / hop + 1
    } else {
        1
    }
}

fn copy_frame(samples: &[f64], start: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = samples.get(start + i).copied().unwrap_or(0.0);
    }
}

// ---------------------------------------------------------------------------
// Pitch

struct Autocorrelator {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    nfft: usize,
    buf: Vec<Complex<f64>>,
}

impl Autocorrelator {
    fn new(frame_len: usize) -> Self {
        let nfft = (2 * frame_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            fft: planner.plan_fft_forward(nfft),
            ifft: planner.plan_fft_inverse(nfft),
            nfft,
            buf: vec![Complex::default(); nfft],
        }
    }

    /// Linear autocorrelation for lags `0..=max_lag`.
    fn run(&mut self, x: &[f64], max_lag: usize) -> Vec<f64> {
        for (i, b) in self.buf.iter_mut().enumerate() {
            *b = Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0);
        }
        self.fft.process(&mut self.buf);
        for b in self.buf.iter_mut() {
            *b = Complex::new(b.norm_sqr(), 0.0);
        }
        self.ifft.process(&mut self.buf);
        let scale = 1.0 / self.nfft as f64;
        self.buf[..=max_lag].iter().map(|c| c.re * scale).collect()
    }
}

/// Vertex of the parabola through three equally spaced points.
fn parabolic_peak(left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-300 {
        return (0.0, mid);
    }
    let offset = (0.5 * (left - right) / denom).clamp(-1.0, 1.0);
    (offset, mid - 0.25 * (left - right) * offset)
}

/// f0 contour in semitones re 100 Hz, by Hann-windowed autocorrelation
/// normalized by the window's own autocorrelation.
pub fn f0_contour(w: &Waveform, cfg: &PitchConfig) -> Result<Contour, DspError> {
    let fs = w.sample_rate_hz() as f64;
    cfg.validate(fs)?;
    if w.duration_s() < 2.0 / cfg.floor_hz {
        return Err(DspError::Contract(format!(
            "signal of {:.4} s is shorter than two pitch periods at the floor ({:.4} s)",
            w.duration_s(),
            2.0 / cfg.floor_hz
        )));
    }
    let win = ((cfg.periods_per_window / cfg.floor_hz) * fs).round() as usize;
    let hop = ((cfg.time_step() * fs).round() as usize).max(1);
    let min_lag = ((fs / cfg.ceiling_hz).floor() as usize).max(2);
    let max_lag = ((fs / cfg.floor_hz).ceil() as usize).min(win - 2);
    if min_lag + 1 >= max_lag {
        return Err(DspError::Contract("pitch lag range is empty at this sample rate".into()));
    }
    let samples = w.samples();
    let global_peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));

    let window = hann(win);
    let mut ac = Autocorrelator::new(win);
    let window_ac = ac.run(&window, max_lag + 1);
    let n_frames = frame_count(samples.len(), win, hop);
    let mut frame = vec![0.0; win];
    let mut values = Vec::with_capacity(n_frames);

    for i in 0..n_frames {
        let start = i * hop;
        copy_frame(samples, start, &mut frame);
        let local_peak = frame.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if global_peak == 0.0 || local_peak < cfg.silence_threshold * global_peak {
            values.push(None);
            continue;
        }
        let mean = frame.iter().sum::<f64>() / win as f64;
        for (x, wv) in frame.iter_mut().zip(&window) {
            *x = (*x - mean) * wv;
        }
        let r = ac.run(&frame, max_lag + 1);
        if !(r[0] > 0.0) {
            values.push(None);
            continue;
        }
        let norm: Vec<f64> = (0..=max_lag + 1)
            .map(|lag| (r[lag] / r[0]) / (window_ac[lag] / window_ac[0]))
            .collect();
        let mut best: Option<(f64, f64, f64)> = None; // (strength, lag, r)
        for lag in min_lag..=max_lag {
            if norm[lag] > norm[lag - 1] && norm[lag] >= norm[lag + 1] {
                let (offset, peak) = parabolic_peak(norm[lag - 1], norm[lag], norm[lag + 1]);
                let lag_f = lag as f64 + offset;
                let strength = peak - cfg.octave_cost * (cfg.floor_hz * lag_f / fs).log2();
                if best.is_none_or(|(s, _, _)| strength > s) {
                    best = Some((strength, lag_f, peak));
                }
            }
        }
        values.push(match best {
            Some((_, lag, peak)) if peak >= cfg.voicing_threshold => {
                let f0 = fs / lag;
                if f0 >= cfg.floor_hz && f0 <= cfg.ceiling_hz {
                    Some(12.0 * (f0 / SEMITONE_REFERENCE_HZ).log2())
                } else {
                    None
                }
            }
            _ => None,
        });
    }
    Ok(Contour {
        t0_s: win as f64 / 2.0 / fs,
        dt_s: hop as f64 / fs,
        values,
    })
}

// ---------------------------------------------------------------------------
// Intensity

/// Intensity contour in dB. Frames of exact digital silence are undefined.
pub fn intensity_contour(w: &Waveform, cfg: &IntensityConfig) -> Result<Contour, DspError> {
    if !(cfg.window_s > 0.0 && cfg.time_step_s > 0.0) {
        return Err(DspError::Contract("intensity window and step must be positive".into()));
    }
    if w.duration_s() < cfg.window_s {
        return Err(DspError::Contract(format!(
            "signal of {:.4} s is shorter than the intensity window ({} s)",
            w.duration_s(),
            cfg.window_s
        )));
    }
    let fs = w.sample_rate_hz() as f64;
    let win = ((cfg.window_s * fs).round() as usize).max(1);
    let hop = ((cfg.time_step_s * fs).round() as usize).max(1);
    let window = hann(win);
    let wsum: f64 = window.iter().map(|v| v * v).sum();
    let samples = w.samples();
    let n_frames = frame_count(samples.len(), win, hop);
    let values = (0..n_frames)
        .map(|i| {
            let frame = &samples[i * hop..i * hop + win];
            let power = frame
                .iter()
                .zip(&window)
                .map(|(x, wv)| (x * wv) * (x * wv))
                .sum::<f64>()
                / wsum;
            (power > 0.0).then(|| 10.0 * (power / INTENSITY_REFERENCE_POWER).log10())
        })
        .collect();
    Ok(Contour {
        t0_s: win as f64 / 2.0 / fs,
        dt_s: hop as f64 / fs,
        values,
    })
}

// ---------------------------------------------------------------------------
// Spectral centroid

/// Centroid of the mean magnitude spectrum over 50%-overlapped Hann frames
/// inside the interval. The DC bin is excluded.
pub fn spectral_centroid(w: &Waveform, t_start_s: f64, t_end_s: f64) -> Result<f64, DspError> {
    if !(t_end_s - t_start_s >= 0.01 - 1e-12) {
        return Err(DspError::Contract(format!(
            "centroid interval [{t_start_s}, {t_end_s}] is shorter than 10 ms"
        )));
    }
    let seg = slice(w, t_start_s, t_end_s)?;
    let fs = w.sample_rate_hz() as f64;
    let win = (CENTROID_FRAME_S * fs).round() as usize;
    let hop = (win / 2).max(1);
    let nfft = win.next_power_of_two();
    let window = hann(win);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let samples = seg.samples();
    let n_frames = frame_count(samples.len(), win, hop);
    let mut spectrum = vec![0.0; nfft / 2 + 1];
    let mut buf = vec![Complex::default(); nfft];
    let mut frame = vec![0.0; win];
    for i in 0..n_frames {
        copy_frame(samples, i * hop, &mut frame);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < win {
                Complex::new(frame[k] * window[k], 0.0)
            } else {
                Complex::default()
            };
        }
        fft.process(&mut buf);
        for (s, b) in spectrum.iter_mut().zip(&buf) {
            *s += b.norm();
        }
    }
    let bin_hz = fs / nfft as f64;
    let (num, den) = spectrum
        .iter()
        .enumerate()
        .skip(1)
        .fold((0.0, 0.0), |(n, d), (k, &m)| (n + k as f64 * bin_hz * m, d + m));
    if !(den > 0.0) {
        return Err(DspError::Domain(format!(
            "zero spectrum in [{t_start_s}, {t_end_s}]"
        )));
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Formants

const RESAMPLE_ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(samples: &[f64], from_hz: f64, to_hz: f64) -> Vec<f64> {
    if (from_hz - to_hz).abs() < 1e-9 {
        return samples.to_vec();
    }
    let ratio = to_hz / from_hz;
    let cutoff = ratio.min(1.0);
    let half_width = RESAMPLE_ZERO_CROSSINGS / cutoff;
    let out_len = (samples.len() as f64 * ratio).floor() as usize;
    let kernel = |d: f64| {
        let arg = PI * cutoff * d;
        let sinc = if d.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        cutoff * sinc * (0.5 + 0.5 * (PI * d / half_width).cos())
    };
    // Output position j sits at input time j * from / to. For integer rates
    // the fractional part cycles with period to / gcd, so the taps can be
    // tabulated once per phase.
    let period = integer_rates(from_hz, to_hz).map(|(f, t)| t / gcd(f, t));
    let taps = |t: f64| {
        let lo = (t - half_width).ceil() as i64;
        let hi = (t + half_width).floor() as i64;
        (lo, (lo..=hi).map(|n| kernel(t - n as f64)).collect::<Vec<f64>>())
    };
    let table: Option<Vec<(i64, Vec<f64>)>> = period
        .filter(|&p| p <= 4096)
        .map(|p| (0..p).map(|j| {
            let t = j as f64 / ratio;
            let (lo, k) = taps(t);
            (lo, k)
        }).collect());
    (0..out_len)
        .map(|j| {
            let (lo, k) = match (&table, period) {
                (Some(tab), Some(p)) => {
                    let (lo, k) = &tab[(j as u64 % p) as usize];
                    // whole input samples advanced per period
                    let shift = (j as u64 / p) as i64 * (p as f64 / ratio).round() as i64;
                    (lo + shift, std::borrow::Cow::Borrowed(k))
                }
                _ => {
                    let (lo, k) = taps(j as f64 / ratio);
                    (lo, std::borrow::Cow::Owned(k))
                }
            };
            k.iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let n = lo + i as i64;
                    (n >= 0 && (n as usize) < samples.len()).then(|| w * samples[n as usize])
                })
                .sum()
        })
        .collect()
}

fn integer_rates(a: f64, b: f64) -> Option<(u64, u64)> {
    let ok = |x: f64| x > 0.0 && x.fract() == 0.0 && x < 1e12;
    (ok(a) && ok(b)).then_some((a as u64, b as u64))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Burg's method. Returns predictor coefficients `d` with
/// `x[n] ≈ Σ_k d[k] x[n-1-k]`, or `None` for a degenerate frame.
pub fn burg(x: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if order == 0 || n <= order {
        return None;
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return None;
    }
    let mut d = vec![0.0; order + 1];
    let mut prev = vec![0.0; order + 1];
    let mut fwd: Vec<f64> = x[..n - 1].to_vec();
    let mut bwd: Vec<f64> = x[1..].to_vec();
    for k in 1..=order {
        let m = n - k;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..m {
            num += fwd[j] * bwd[j];
            den += fwd[j] * fwd[j] + bwd[j] * bwd[j];
        }
        if !(den > 0.0) {
            return None;
        }
        d[k] = 2.0 * num / den;
        for i in 1..k {
            d[i] = prev[i] - d[k] * prev[k - i];
        }
        if k == order {
            break;
        }
        prev[1..=k].copy_from_slice(&d[1..=k]);
        for j in 0..m - 1 {
            fwd[j] -= prev[k] * bwd[j];
            bwd[j] = bwd[j + 1] - prev[k] * fwd[j + 1];
        }
    }
    let coeffs = d[1..].to_vec();
    coeffs.iter().all(|c| c.is_finite()).then_some(coeffs)
}

/// Roots of `z^p - d1 z^{p-1} - ... - dp` via the companion matrix.
fn predictor_roots(d: &[f64]) -> Vec<Complex<f64>> {
    let p = d.len();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (j, &c) in d.iter().enumerate() {
        m[(0, j)] = c;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    match nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 1000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|c| Complex::new(c.re, c.im))
            .collect(),
        None => aberth_roots(d),
    }
}

/// Simultaneous root iteration on the monic predictor polynomial, for the
/// rare frames where the QR iteration stalls.
fn aberth_roots(d: &[f64]) -> Vec<Complex<f64>> {
    let p = d.len();
    // coefficients of z^p, z^{p-1}, ..., z^0
    let coef: Vec<f64> = std::iter::once(1.0).chain(d.iter().map(|c| -c)).collect();
    let eval = |z: Complex<f64>| {
        let mut v = Complex::new(0.0, 0.0);
        let mut dv = Complex::new(0.0, 0.0);
        for &c in &coef {
            dv = dv * z + v;
            v = v * z + c;
        }
        (v, dv)
    };
    let radius = 1.0 + d.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex<f64>> = (0..p)
        .map(|k| Complex::from_polar(radius * 0.5, 2.0 * PI * (k as f64 + 0.25) / p as f64))
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for k in 0..p {
            let (v, dv) = eval(z[k]);
            let ratio = v / dv;
            let repulsion: Complex<f64> = (0..p)
                .filter(|&j| j != k)
                .map(|j| Complex::new(1.0, 0.0) / (z[k] - z[j]))
                .sum();
            let step = ratio / (Complex::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[k] -= step;
                moved = moved.max(step.norm());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    z
}

fn gaussian_window(n: usize) -> Vec<f64> {
    let edge = (-12.0f64).exp();
    let mid = 0.5 * (n as f64 + 1.0);
    (0..n)
        .map(|i| {
            let x = (i as f64 + 1.0 - mid) / (n as f64 + 1.0);
            ((-48.0 * x * x).exp() - edge) / (1.0 - edge)
        })
        .collect()
}

/// Candidate resonances `(frequency, bandwidth)` of one LPC frame, ascending.
pub fn lpc_resonances(d: &[f64], fs: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = predictor_roots(d)
        .into_iter()
        .filter(|z| z.im > 0.0 && z.re.is_finite() && z.im.is_finite())
        .map(|z| {
            let r = z.norm();
            // reflect unstable roots inside the unit circle
            let r = if r > 1.0 { 1.0 / r } else { r };
            let f = z.im.atan2(z.re) * fs / (2.0 * PI);
            let bw = -r.ln() * fs / PI;
            (f, bw)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn formant_tracks(w: &Waveform, cfg: &FormantConfig) -> Result<Vec<FormantFrame>, DspError> {
    cfg.validate()?;
    if w.duration_s() < cfg.window_s {
        return Err(DspError::Contract(format!(
            "signal of {:.4} s is shorter than the formant window ({} s)",
            w.duration_s(),
            cfg.window_s
        )));
    }
    let src_fs = w.sample_rate_hz() as f64;
    let target_fs = 2.0 * cfg.max_formant_hz;
    let (mut x, fs) = if src_fs > target_fs {
        (resample(w.samples(), src_fs, target_fs), target_fs)
    } else {
        (w.samples().to_vec(), src_fs)
    };
    let alpha = (-2.0 * PI * cfg.preemphasis_from_hz / fs).exp();
    for i in (1..x.len()).rev() {
        x[i] -= alpha * x[i - 1];
    }
    let upper = cfg.max_formant_hz.min(fs / 2.0 - 50.0);
    let win = ((2.0 * cfg.window_s * fs).round() as usize).max(cfg.order() + 2);
    let hop = ((cfg.time_step_s * fs).round() as usize).max(1);
    let window = gaussian_window(win);
    let n_frames = frame_count(x.len(), win, hop);
    let mut frame = vec![0.0; win];
    let mut out = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * hop;
        copy_frame(&x, start, &mut frame);
        for (v, wv) in frame.iter_mut().zip(&window) {
            *v *= wv;
        }
        let t_s = (start as f64 + win as f64 / 2.0) / fs;
        let formants: Vec<f64> = burg(&frame, cfg.order())
            .map(|d| {
                let mut fs_: Vec<f64> = lpc_resonances(&d, fs)
                    .into_iter()
                    .filter(|&(f, bw)| f > 50.0 && f < upper && bw < cfg.max_bandwidth_hz)
                    .map(|(f, _)| f)
                    .collect();
                fs_.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
                fs_
            })
            .unwrap_or_default();
        out.push(FormantFrame {
            t_s,
            f1_hz: formants.first().copied(),
            f2_hz: formants.get(1).copied(),
            f3_hz: formants.get(2).copied(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, dur: f64, fs: u32, amp: f64) -> Waveform {
        let n = (dur * fs as f64).round() as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / fs as f64).sin())
                .collect(),
            fs,
        )
        .unwrap()
    }

    #[test]
    fn semitone_reference_points() {
        assert_eq!(hz_to_semitones(100.0, 100.0).unwrap(), 0.0);
        assert!((hz_to_semitones(200.0, 100.0).unwrap() - 12.0).abs() < 1e-12);
        assert!((hz_to_semitones(50.0, 100.0).unwrap() + 12.0).abs() < 1e-12);
        assert!(hz_to_semitones(0.0, 100.0).is_err());
        assert!(hz_to_semitones(-5.0, 100.0).is_err());
    }

    #[test]
    fn slice_identity_and_partition() {
        let w = sine(100.0, 1.0, 48000, 0.5);
        assert_eq!(slice(&w, 0.0, 1.0).unwrap(), w);
        let a = slice(&w, 0.0, 0.3333).unwrap();
        let b = slice(&w, 0.3333, 1.0).unwrap();
        let joined: Vec<f64> = a.samples().iter().chain(b.samples()).copied().collect();
        assert_eq!(joined, w.samples());
        assert!(slice(&w, 0.5, 0.4).is_err());
        assert!(slice(&w, 0.0, 1.5).is_err());
        let long = sine(100.0, 2.0, 48000, 0.5);
        let one = slice(&long, 0.25, 1.25).unwrap();
        assert!((one.len() as i64 - 48000).abs() <= 1);
    }

    #[test]
    fn rounding_ties_go_to_earlier_sample() {
        // 0.5 samples at 2 Hz
        assert_eq!(time_to_sample(0.25, 2), 0);
        assert_eq!(time_to_sample(0.26, 2), 1);
        assert_eq!(time_to_sample(0.75, 2), 1);
    }

    #[test]
    fn silence_is_unvoiced_and_undefined() {
        let w = Waveform::new(vec![0.0; 96000], 48000).unwrap();
        let f0 = f0_contour(&w, &PitchConfig::default()).unwrap();
        assert!(!f0.values.is_empty());
        assert_eq!(f0.n_defined(), 0);
        let int = intensity_contour(&w, &IntensityConfig::default()).unwrap();
        assert_eq!(int.n_defined(), 0);
        let frames = formant_tracks(&w, &FormantConfig::default()).unwrap();
        assert!(frames
            .iter()
            .all(|f| f.f1_hz.is_none() && f.f2_hz.is_none() && f.f3_hz.is_none()));
    }

    #[test]
    fn too_short_signals_are_rejected() {
        let w = sine(200.0, 0.02, 48000, 0.5);
        assert!(matches!(f0_contour(&w, &PitchConfig::default()), Err(DspError::Contract(_))));
        assert!(matches!(
            intensity_contour(&w, &IntensityConfig::default()),
            Err(DspError::Contract(_))
        ));
        assert!(matches!(
            formant_tracks(&sine(200.0, 0.01, 48000, 0.5), &FormantConfig::default()),
            Err(DspError::Contract(_))
        ));
        assert!(spectral_centroid(&w, 0.0, 0.005).is_err());
    }

    #[test]
    fn intensity_halving_drops_six_db() {
        let a = intensity_contour(&sine(440.0, 1.0, 48000, 0.8), &IntensityConfig::default()).unwrap();
        let b = intensity_contour(&sine(440.0, 1.0, 48000, 0.4), &IntensityConfig::default()).unwrap();
        let expect = 20.0 * 2f64.log10();
        for (x, y) in a.values.iter().zip(&b.values) {
            let d = x.unwrap() - y.unwrap();
            assert!((d - expect).abs() < 0.05, "{d}");
        }
        // a full-scale sine sits near 91 dB
        let full = intensity_contour(&sine(440.0, 1.0, 48000, 1.0), &IntensityConfig::default()).unwrap();
        let mid = full.values[full.values.len() / 2].unwrap();
        assert!((mid - 90.97).abs() < 0.05, "{mid}");
    }

    #[test]
    fn aberth_matches_known_roots() {
        // (z - 0.5)(z + 0.3)(z^2 - z + 0.5) = z^4 - 1.2 z^3 + 0.55 z^2 + 0.05 z - 0.075
        let d = [1.2, -0.55, -0.05, 0.075];
        let got = aberth_roots(&d);
        assert_eq!(got.len(), 4);
        for (re, im) in [(-0.3, 0.0), (0.5, -0.5), (0.5, 0.0), (0.5, 0.5)] {
            let w = Complex::new(re, im);
            assert!(got.iter().any(|z| (z - w).norm() < 1e-9), "{got:?}");
        }
    }

    #[test]
    fn burg_recovers_ar2() {
        // x[n] = 1.5 x[n-1] - 0.8 x[n-2] + e[n]
        let mut state = 12345u64;
        let mut noise = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut x = vec![0.0; 20000];
        for n in 2..x.len() {
            x[n] = 1.5 * x[n - 1] - 0.8 * x[n - 2] + noise();
        }
        let d = burg(&x, 2).unwrap();
        assert!((d[0] - 1.5).abs() < 0.02, "{d:?}");
        assert!((d[1] + 0.8).abs() < 0.02, "{d:?}");
        assert!(burg(&[0.0; 64], 4).is_none());
    }

    #[test]
    fn resonance_from_known_pole_pair() {
        let fs = 10000.0;
        let (f, bw) = (1000.0, 100.0);
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * f / fs;
        let d = [2.0 * r * theta.cos(), -r * r];
        let res = lpc_resonances(&d, fs);
        assert_eq!(res.len(), 1);
        assert!((res[0].0 - f).abs() < 1e-6);
        assert!((res[0].1 - bw).abs() < 1e-6);
    }

    #[test]
    fn tabulated_resampling_matches_direct_sum() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 211) as f64 / 211.0 - 0.5).collect();
        let y = resample(&x, 24000.0, 11000.0);
        let (ratio, hw) = (11000.0 / 24000.0, RESAMPLE_ZERO_CROSSINGS / (11000.0 / 24000.0));
        for j in [0usize, 1, 10, 11, 12, 500, y.len() - 1] {
            let t = j as f64 / ratio;
            let mut want = 0.0;
            for (n, v) in x.iter().enumerate() {
                let d = t - n as f64;
                if d.abs() > hw {
                    continue;
                }
                let arg = PI * ratio * d;
                let sinc = if d.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                want += v * ratio * sinc * (0.5 + 0.5 * (PI * d / hw).cos());
            }
            assert!((y[j] - want).abs() < 1e-12, "{j}: {} vs {want}", y[j]);
        }
    }

    #[test]
    fn resample_preserves_low_tone() {
        let w = sine(300.0, 0.5, 48000, 0.5);
        let y = resample(w.samples(), 48000.0, 11000.0);
        assert_eq!(y.len(), 5500);
        for (j, &v) in y.iter().enumerate().skip(200).take(5000) {
            let expect = 0.5 * (2.0 * PI * 300.0 * j as f64 / 11000.0).sin();
            assert!((v - expect).abs() < 2e-3, "{j}: {v} vs {expect}");
        }
    }

    #[test]
    fn config_validation() {
        let w = sine(200.0, 1.0, 16000, 0.5);
        let bad = PitchConfig {
            ceiling_hz: 9000.0,
            ..Default::default()
        };
        assert!(f0_contour(&w, &bad).is_err());
        let odd = FormantConfig {
            lpc_order: Some(9),
            ..Default::default()
        };
        assert!(formant_tracks(&w, &odd).is_err());
        let step = FormantConfig {
            time_step_s: 0.05,
            ..Default::default()
        };
        assert!(formant_tracks(&w, &step).is_err());
    }

    #[test]
    fn contour_runs_and_restrict() {
        let c = Contour {
            t0_s: 0.0,
            dt_s: 0.1,
            values: vec![Some(1.0), Some(2.0), None, Some(3.0), None, None, Some(4.0)],
        };
        assert_eq!(c.voiced_runs(), vec![vec![1.0, 2.0], vec![3.0], vec![4.0]]);
        let r = c.restrict(0.15, 0.35);
        assert_eq!(r.values, vec![None, Some(3.0)]);
        assert!((r.t0_s - 0.2).abs() < 1e-12);
    }
}
