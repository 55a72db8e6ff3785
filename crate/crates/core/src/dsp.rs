//! Pulse-compression chain turning recorded chirp echoes into transient histograms:
//! background subtraction, group-delay correction, analytic-signal matched
//! filtering and lag-to-range binning.

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::render::{RangeBins, TransientHistogram};

/// Speed of sound in air, m/s.
pub const SPEED_OF_SOUND_AIR: f64 = 343.0;
/// Typical speed of sound in water, m/s.
pub const SPEED_OF_SOUND_WATER: f64 = 1500.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    /// Sample rate in Hz.
    pub fs: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(format!("sample rate must be positive, got {fs}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples, fs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|v| v * a).collect(),
            fs: self.fs,
        }
    }

    /// Adds `other` starting at sample `offset`, truncating at the end of `self`.
    pub fn add_at(&mut self, other: &Waveform, offset: usize, gain: f64) {
        for (dst, src) in self.samples.iter_mut().skip(offset).zip(&other.samples) {
            *dst += gain * src;
        }
    }
}

/// Linear FM chirp `sin(2π(f0·t + (f1 − f0)·t²/(2·duration)))`, `round(duration·fs)` samples.
pub fn synth_chirp(f0: f64, f1: f64, duration: f64, fs: f64) -> Result<Waveform> {
    if !(fs > 0.0) || !(duration > 0.0) {
        return Err(Error::invalid("duration and sample rate must be positive"));
    }
    let nyquist = fs / 2.0;
    if !(f0 > 0.0 && f1 > 0.0 && f0 < nyquist && f1 < nyquist) {
        return Err(Error::invalid(format!(
            "chirp band [{f0}, {f1}] Hz must lie inside (0, {nyquist}) Hz"
        )));
    }
    let n = (duration * fs).round() as usize;
    let k = (f1 - f0) / duration;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * k * t * t)).sin()
        })
        .collect();
    Waveform::new(samples, fs)
}

fn fft(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    plan.process(data);
    if inverse {
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Zeroes negative frequencies and doubles positive ones of a full spectrum, in place.
fn analytic_spectrum(spec: &mut [Complex64]) {
    let n = spec.len();
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate().skip(1) {
        if n % 2 == 0 && k == half {
            continue;
        }
        if k <= (n - 1) / 2 {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// FFT-based analytic signal; its real part reproduces the input.
pub fn hilbert_analytic(x: &Waveform) -> Result<Vec<Complex64>> {
    if x.len() < 2 {
        return Err(Error::invalid("analytic signal needs at least two samples"));
    }
    let mut buf: Vec<Complex64> = x.samples.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft(&mut buf, false);
    analytic_spectrum(&mut buf);
    fft(&mut buf, true);
    Ok(buf)
}

/// `|Σ_n a_rx[n + k]·conj(a_tpl[n])|` for lags `k = 0..rx.len()`, computed in the frequency domain.
pub fn matched_filter(rx: &Waveform, template: &Waveform) -> Result<Vec<f64>> {
    if rx.fs != template.fs {
        return Err(Error::invalid(format!(
            "sample rates differ ({} vs {} Hz)",
            rx.fs, template.fs
        )));
    }
    let a = hilbert_analytic(rx)?;
    let b = hilbert_analytic(template)?;
    let n = (a.len() + b.len()).next_power_of_two();
    let mut fa = vec![Complex64::new(0.0, 0.0); n];
    let mut fb = fa.clone();
    fa[..a.len()].copy_from_slice(&a);
    fb[..b.len()].copy_from_slice(&b);
    fft(&mut fa, false);
    fft(&mut fb, false);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    fft(&mut fa, true);
    Ok(fa[..rx.len()].iter().map(|c| c.norm()).collect())
}

pub fn background_subtract(rx: &Waveform, bg: &Waveform) -> Result<Waveform> {
    if rx.len() != bg.len() {
        return Err(Error::shape(rx.len(), bg.len()));
    }
    if rx.fs != bg.fs {
        return Err(Error::invalid("background sample rate differs"));
    }
    Waveform::new(
        rx.samples.iter().zip(&bg.samples).map(|(a, b)| a - b).collect(),
        rx.fs,
    )
}

/// Shifts `x` later by `delay` seconds with a frequency-domain linear phase.
/// Negative delays advance the signal. Zero padding keeps the shift from wrapping.
pub fn apply_delay(x: &Waveform, delay: f64) -> Result<Waveform> {
    if !delay.is_finite() {
        return Err(Error::invalid("delay must be finite"));
    }
    if delay == 0.0 || x.is_empty() {
        return Ok(x.clone());
    }
    let shift = (delay * x.fs).abs().ceil() as usize;
    let n = (x.len() + shift + 1).next_power_of_two();
    let pad = if delay < 0.0 { shift } else { 0 };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, v) in x.samples.iter().enumerate() {
        buf[pad + i] = Complex64::new(*v, 0.0);
    }
    fft(&mut buf, false);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } / n as f64 * x.fs;
        if n % 2 == 0 && k == n / 2 {
            // The Nyquist bin has no sign; a real shift keeps only its cosine part.
            *v *= (2.0 * std::f64::consts::PI * f * delay).cos();
            continue;
        }
        *v *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * delay);
    }
    fft(&mut buf, true);
    Waveform::new(buf[pad..pad + x.len()].iter().map(|c| c.re).collect(), x.fs)
}

/// Processing parameters for [`echo_to_histogram`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EchoConfig {
    pub bins: RangeBins,
    /// m/s.
    pub speed_of_sound: f64,
    /// Device latency removed before matched filtering, in seconds.
    pub group_delay: f64,
}

/// Range of lag `k` samples: half the round-trip distance.
pub fn lag_to_range(k: usize, fs: f64, speed_of_sound: f64) -> f64 {
    speed_of_sound * (k as f64 / fs) / 2.0
}

/// Background subtraction, group-delay correction and matched filtering,
/// with the per-lag magnitudes summed into range bins.
pub fn echo_to_histogram(
    rx: &Waveform,
    bg: Option<&Waveform>,
    template: &Waveform,
    cfg: &EchoConfig,
) -> Result<TransientHistogram> {
    if !(cfg.speed_of_sound > 0.0) {
        return Err(Error::invalid("speed of sound must be positive"));
    }
    let clean = match bg {
        Some(b) => background_subtract(rx, b)?,
        None => rx.clone(),
    };
    let aligned = apply_delay(&clean, -cfg.group_delay)?;
    let mag = matched_filter(&aligned, template)?;
    let mut h = TransientHistogram::zeros(cfg.bins);
    for (k, m) in mag.iter().enumerate() {
        if let Some(i) = cfg.bins.index_of(lag_to_range(k, rx.fs, cfg.speed_of_sound)) {
            h.values[i] += m;
        }
    }
    Ok(h)
}

/// Reads a mono WAV file (float or integer PCM, scaled to [-1, 1]); multi-channel files keep channel 0.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = r.spec();
    let ch = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .step_by(ch)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .step_by(ch)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    Waveform::new(samples, spec.sample_rate as f64)
}

/// Writes a mono 32-bit float WAV; the sample rate is rounded to whole Hz.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.fs.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut out = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for s in &w.samples {
        out.write_sample(*s as f32)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    out.finalize().map_err(|e| Error::format(path, e.to_string()))
}
