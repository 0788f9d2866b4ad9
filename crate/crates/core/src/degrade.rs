//! Audio degradations and the random combination policy.
//!
//! The menu is noise, pitch shift, speed change, tempo change, a 2 kHz
//! high-pass, a 300 Hz low-pass and a two-tap echo for training, plus an
//! equalizer reserved for test queries. Each entry is selected independently
//! with probability 0.30 and selected entries are applied in that order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::audio::{AudioBuffer, Resampler};
use crate::fft::{hann, wrap_phase, Fft};
use crate::{rng, Error, Result};

pub const SELECTION_PROBABILITY: f64 = 0.30;
pub const NOISE_RANGE: (f64, f64) = (0.0, 0.08);
pub const PITCH_RANGE: (f64, f64) = (-5.0, 5.0);
pub const SPEED_RANGE: (f64, f64) = (0.8, 1.2);
pub const TEMPO_RANGE: (f64, f64) = (0.8, 1.2);
pub const HIGHPASS_HZ: f64 = 2000.0;
pub const LOWPASS_HZ: f64 = 300.0;
/// (delay in ms, decay), applied one after the other.
pub const ECHO_TAPS: [(f64, f64); 2] = [(0.8, 0.88), (60.0, 0.4)];
/// Equalizer band centers, one octave apart.
pub const EQ_CENTERS_HZ: [f64; 10] = [
    31.25, 62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0,
];
pub const EQ_GAINS_DB: [f64; 10] = [6.0, -6.0, 6.0, -6.0, 6.0, -6.0, 6.0, -6.0, 6.0, -6.0];

/// Largest duration shrink any spec can cause (max speed times max tempo).
pub const MAX_SHRINK: f64 = SPEED_RANGE.1 * TEMPO_RANGE.1;

const STREAM_SPEC: u64 = 0xDE6;
const STREAM_NOISE: u64 = 0x1015E;

/// A concrete combination of degradations. Absent entries are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DegradationSpec {
    /// Peak amplitude of additive uniform white noise.
    pub noise_intensity: Option<f64>,
    pub pitch_semitones: Option<f64>,
    pub speed_factor: Option<f64>,
    pub tempo_factor: Option<f64>,
    pub highpass_hz: Option<f64>,
    pub lowpass_hz: Option<f64>,
    /// Applies [`ECHO_TAPS`].
    pub echo: bool,
    /// Test-only equalizer.
    pub eq: bool,
    /// Test-only external codec, see [`ExternalAttack`].
    pub external: bool,
}

/// How [`sample_spec_with`] draws a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationPolicy {
    pub probability: f64,
    pub include_test_only: bool,
    /// Also draws the external codec slot (needs a hook at apply time).
    pub include_external: bool,
}

impl DegradationPolicy {
    pub fn train() -> Self {
        Self {
            probability: SELECTION_PROBABILITY,
            include_test_only: false,
            include_external: false,
        }
    }

    pub fn test() -> Self {
        Self {
            include_test_only: true,
            ..Self::train()
        }
    }

    pub fn disabled() -> Self {
        Self {
            probability: 0.0,
            ..Self::train()
        }
    }
}

impl DegradationSpec {
    pub fn is_identity(&self) -> bool {
        self.labels().is_empty()
    }

    /// Names of the selected degradations, in application order.
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let flags = [
            ("noise", self.noise_intensity.is_some()),
            ("pitch", self.pitch_semitones.is_some()),
            ("speed", self.speed_factor.is_some()),
            ("tempo", self.tempo_factor.is_some()),
            ("highpass", self.highpass_hz.is_some()),
            ("lowpass", self.lowpass_hz.is_some()),
            ("echo", self.echo),
            ("eq", self.eq),
            ("external", self.external),
        ];
        for (name, on) in flags {
            if on {
                out.push(name);
            }
        }
        out
    }

    /// Expected duration ratio output/input.
    pub fn duration_ratio(&self) -> f64 {
        1.0 / (self.speed_factor.unwrap_or(1.0) * self.tempo_factor.unwrap_or(1.0))
    }

    /// Checks every present parameter against its allowed range.
    pub fn validate(&self) -> Result<()> {
        fn check(name: &str, v: Option<f64>, (lo, hi): (f64, f64)) -> Result<()> {
            match v {
                Some(x) if !(x >= lo && x <= hi) => {
                    Err(Error::Input(format!("{name}={x} outside [{lo}, {hi}]")))
                }
                _ => Ok(()),
            }
        }
        check("noise", self.noise_intensity, NOISE_RANGE)?;
        check("pitch", self.pitch_semitones, PITCH_RANGE)?;
        check("speed", self.speed_factor, SPEED_RANGE)?;
        check("tempo", self.tempo_factor, TEMPO_RANGE)?;
        check("highpass", self.highpass_hz, (HIGHPASS_HZ, HIGHPASS_HZ))?;
        check("lowpass", self.lowpass_hz, (LOWPASS_HZ, LOWPASS_HZ))?;
        Ok(())
    }
}

/// `key=value` pairs separated by spaces, or `none` for the empty spec.
impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        let mut num = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                parts.push(format!("{k}={v}"));
            }
        };
        num("noise", self.noise_intensity);
        num("pitch", self.pitch_semitones);
        num("speed", self.speed_factor);
        num("tempo", self.tempo_factor);
        num("highpass", self.highpass_hz);
        num("lowpass", self.lowpass_hz);
        for (k, on) in [
            ("echo", self.echo),
            ("eq", self.eq),
            ("external", self.external),
        ] {
            if on {
                parts.push(format!("{k}=1"));
            }
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(" "))
        }
    }
}

impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        let s = s.trim();
        if s == "none" || s.is_empty() {
            return Ok(spec);
        }
        for part in s.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("expected key=value, got {part:?}")))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad number for {k}: {v:?}")))
            };
            let flag = || match v {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                _ => Err(Error::Input(format!("bad flag for {k}: {v:?}"))),
            };
            match k {
                "noise" => spec.noise_intensity = Some(num()?),
                "pitch" => spec.pitch_semitones = Some(num()?),
                "speed" => spec.speed_factor = Some(num()?),
                "tempo" => spec.tempo_factor = Some(num()?),
                "highpass" => spec.highpass_hz = Some(num()?),
                "lowpass" => spec.lowpass_hz = Some(num()?),
                "echo" => spec.echo = flag()?,
                "eq" => spec.eq = flag()?,
                "external" => spec.external = flag()?,
                _ => return Err(Error::Input(format!("unknown degradation {k:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws a spec under the standard 30% rule.
pub fn sample_spec(seed: u64, include_test_only: bool) -> DegradationSpec {
    let policy = DegradationPolicy {
        include_test_only,
        ..DegradationPolicy::train()
    };
    sample_spec_with(seed, &policy)
}

pub fn sample_spec_with(seed: u64, policy: &DegradationPolicy) -> DegradationSpec {
    let mut rng = rng::seeded(seed, STREAM_SPEC, 0);
    let p = policy.probability;
    // Every slot consumes the same draws whether or not it is selected.
    let mut slot = |range: (f64, f64)| -> Option<f64> {
        let hit = rng.gen::<f64>() < p;
        let v = range.0 + (range.1 - range.0) * rng.gen::<f64>();
        hit.then_some(v)
    };
    let noise_intensity = slot(NOISE_RANGE);
    let pitch_semitones = slot(PITCH_RANGE);
    let speed_factor = slot(SPEED_RANGE);
    let tempo_factor = slot(TEMPO_RANGE);
    let highpass_hz = slot((HIGHPASS_HZ, HIGHPASS_HZ));
    let lowpass_hz = slot((LOWPASS_HZ, LOWPASS_HZ));
    let echo = slot((0.0, 0.0)).is_some();
    let eq = slot((0.0, 0.0)).is_some() && policy.include_test_only;
    let external = slot((0.0, 0.0)).is_some() && policy.include_external;
    DegradationSpec {
        noise_intensity,
        pitch_semitones,
        speed_factor,
        tempo_factor,
        highpass_hz,
        lowpass_hz,
        echo,
        eq,
        external,
    }
}

/// Operator-supplied transformation, e.g. a lossy codec round trip.
pub trait ExternalAttack {
    fn attack(&self, a: &AudioBuffer) -> Result<AudioBuffer>;
}

/// Applies every selected degradation in menu order and clamps to [-1, 1].
pub fn apply(a: &AudioBuffer, spec: &DegradationSpec, seed: u64) -> AudioBuffer {
    apply_with(a, spec, seed, None).expect("no external attack requested")
}

/// Like [`apply`], running `external` last when the spec selects it.
pub fn apply_with(
    a: &AudioBuffer,
    spec: &DegradationSpec,
    seed: u64,
    external: Option<&dyn ExternalAttack>,
) -> Result<AudioBuffer> {
    if spec.is_identity() {
        return Ok(clamp(a.clone()));
    }
    let mut x = a.clone();
    if let Some(level) = spec.noise_intensity {
        x = add_noise(&x, level, seed);
    }
    if let Some(s) = spec.pitch_semitones {
        x = pitch_shift(&x, s);
    }
    if let Some(f) = spec.speed_factor {
        x = speed_change(&x, f);
    }
    if let Some(f) = spec.tempo_factor {
        x = time_stretch(&x, f);
    }
    if let Some(fc) = spec.highpass_hz {
        x = biquad_filter(&x, FilterMode::Highpass, fc);
    }
    if let Some(fc) = spec.lowpass_hz {
        x = biquad_filter(&x, FilterMode::Lowpass, fc);
    }
    if spec.echo {
        x = add_echo(&x, &ECHO_TAPS);
    }
    if spec.eq {
        x = apply_eq(&x);
    }
    if spec.external {
        let hook = external.ok_or_else(|| {
            Error::State("spec selects an external attack but no hook was supplied".into())
        })?;
        x = hook.attack(&x)?;
    }
    Ok(clamp(x))
}

fn clamp(a: AudioBuffer) -> AudioBuffer {
    let rate = a.sample_rate();
    let samples = a
        .into_samples()
        .into_iter()
        .map(|s| {
            if s.is_finite() {
                s.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::from_trusted(samples, rate)
}

/// Adds uniform noise in `[-level, level]`.
pub fn add_noise(a: &AudioBuffer, level: f64, seed: u64) -> AudioBuffer {
    let mut rng = rng::seeded(seed, STREAM_NOISE, 0);
    let samples = a
        .samples()
        .iter()
        .map(|&s| s + (level * rng.gen_range(-1.0..=1.0)) as f32)
        .collect();
    AudioBuffer::from_trusted(samples, a.sample_rate())
}

/// Changes pitch by `semitones` keeping the duration: stretch the duration
/// by `2^(s/12)` with the phase vocoder, then play back `2^(s/12)` times
/// faster.
pub fn pitch_shift(a: &AudioBuffer, semitones: f64) -> AudioBuffer {
    if semitones == 0.0 || a.is_empty() {
        return a.clone();
    }
    let ratio = (semitones / 12.0).exp2();
    let stretched = time_stretch(a, 1.0 / ratio);
    let mut out = Resampler::default().resample_step(stretched.samples(), ratio);
    out.resize(a.len(), 0.0);
    AudioBuffer::from_trusted(out, a.sample_rate())
}

/// Playback-rate change: duration divided by `speed_factor`, pitch multiplied.
pub fn speed_change(a: &AudioBuffer, speed_factor: f64) -> AudioBuffer {
    assert!(
        speed_factor > 0.0 && speed_factor.is_finite(),
        "speed factor must be positive"
    );
    if speed_factor == 1.0 {
        return a.clone();
    }
    let out = Resampler::default().resample_step(a.samples(), speed_factor);
    AudioBuffer::from_trusted(out, a.sample_rate())
}

pub const VOCODER_FRAME: usize = 1024;
pub const VOCODER_HOP: usize = 256;

/// Tempo change without pitch change: output length is
/// `round(len / tempo_factor)`.
///
/// Phase vocoder with identity phase locking: spectral peaks advance their
/// phase by their instantaneous frequency, and every other bin keeps its
/// analysis phase offset relative to the peak whose region it falls in.
pub fn time_stretch(a: &AudioBuffer, tempo_factor: f64) -> AudioBuffer {
    assert!(
        tempo_factor > 0.0 && tempo_factor.is_finite(),
        "tempo factor must be positive"
    );
    if tempo_factor == 1.0 || a.is_empty() {
        return a.clone();
    }
    let n = VOCODER_FRAME;
    let half = n / 2;
    let bins = half + 1;
    let hs = VOCODER_HOP;
    let ha = hs as f64 * tempo_factor;
    let x = a.samples();
    let target = (x.len() as f64 / tempo_factor).round() as usize;
    let frames = target.div_ceil(hs) + 1;

    let plan = Fft::new(n);
    let window = hann(n);
    let mut out = vec![0.0f64; frames * hs + n];
    let mut norm = vec![0.0f64; frames * hs + n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut mag2 = vec![0.0f64; bins];
    // previous analysis and synthesis spectra; phases are only needed at
    // peaks, so they are taken from these on demand
    let mut prev_x = vec![Complex64::new(0.0, 0.0); bins];
    let mut prev_y = vec![Complex64::new(0.0, 0.0); bins];
    let mut peaks: Vec<usize> = Vec::with_capacity(bins);
    let mut prev_start = 0isize;

    for k in 0..frames {
        // frame centers: k * ha in the input, k * hs in the output
        let start = (k as f64 * ha).round() as isize - half as isize;
        for (i, c) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize] as f64
            } else {
                0.0
            };
            *c = Complex64::new(v * window[i], 0.0);
        }
        plan.forward(&mut buf);
        for b in 0..bins {
            mag2[b] = buf[b].norm_sqr();
        }
        if k > 0 {
            let hop_a = (start - prev_start) as f64;
            // synthesis phase of bin b from this and the previous frame
            let advance = |b: usize, x: Complex64, px: Complex64, py: Complex64| -> f64 {
                let omega = 2.0 * PI * b as f64 / n as f64;
                let dev = wrap_phase(x.arg() - px.arg() - omega * hop_a);
                py.arg() + (omega + dev / hop_a) * hs as f64
            };
            peaks.clear();
            for b in 0..bins {
                let m = mag2[b];
                let left = (b.saturating_sub(2)..b).all(|j| mag2[j] < m);
                let right = (b + 1..(b + 3).min(bins)).all(|j| mag2[j] <= m);
                if m > 0.0 && left && right {
                    peaks.push(b);
                }
            }
            if peaks.is_empty() {
                for b in 0..bins {
                    let xb = buf[b];
                    buf[b] = Complex64::from_polar(xb.norm(), advance(b, xb, prev_x[b], prev_y[b]));
                    prev_x[b] = xb;
                }
            } else {
                // each bin is rotated like the peak of its region, with
                // region boundaries halfway between neighbouring peaks
                let rotations: Vec<Complex64> = peaks
                    .iter()
                    .map(|&p| {
                        let xp = buf[p];
                        Complex64::from_polar(1.0, advance(p, xp, prev_x[p], prev_y[p])) * xp.conj()
                            / xp.norm()
                    })
                    .collect();
                let mut region = 0usize;
                for b in 0..bins {
                    while region + 1 < peaks.len() && b * 2 > peaks[region] + peaks[region + 1] {
                        region += 1;
                    }
                    prev_x[b] = buf[b];
                    buf[b] *= rotations[region];
                }
            }
        } else {
            prev_x.copy_from_slice(&buf[..bins]);
        }
        prev_y.copy_from_slice(&buf[..bins]);
        prev_start = start;

        for b in 1..half {
            buf[n - b] = buf[b].conj();
        }
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        plan.inverse(&mut buf);
        // synthesis frame starts half a frame before its center
        let base = k as isize * hs as isize - half as isize;
        for i in 0..n {
            let pos = base + i as isize + half as isize;
            let w = window[i];
            out[pos as usize] += buf[i].re / n as f64 * w;
            norm[pos as usize] += w * w;
        }
    }
    // `out` is offset by half a frame so negative synthesis positions fit
    let samples = (0..target)
        .map(|i| {
            let j = i + half;
            let w = norm[j];
            let v = if w > 1e-3 { out[j] / w } else { 0.0 };
            v as f32
        })
        .collect();
    AudioBuffer::from_trusted(samples, a.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMode {
    Lowpass,
    Highpass,
    /// Constant 0 dB peak gain band-pass.
    Bandpass {
        q: f64,
    },
}

/// Second-order IIR section (transposed direct form II).
#[derive(Debug, Clone)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/sqrt 2) low/high-pass or band-pass by the bilinear
    /// transform with frequency prewarping.
    pub fn design(mode: FilterMode, cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = (w0.sin(), w0.cos());
        let q = match mode {
            FilterMode::Bandpass { q } => q,
            _ => 1.0 / SQRT_2,
        };
        let alpha = sin / (2.0 * q);
        let (b0, b1, b2) = match mode {
            FilterMode::Lowpass => ((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0),
            FilterMode::Highpass => ((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0),
            FilterMode::Bandpass { .. } => (alpha, 0.0, -alpha),
        };
        let a0 = 1.0 + alpha;
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// Second-order Butterworth high- or low-pass.
pub fn biquad_filter(a: &AudioBuffer, mode: FilterMode, cutoff_hz: f64) -> AudioBuffer {
    let mut f = Biquad::design(mode, cutoff_hz, a.sample_rate() as f64);
    let samples = a
        .samples()
        .iter()
        .map(|&s| f.process(s as f64) as f32)
        .collect();
    AudioBuffer::from_trusted(samples, a.sample_rate())
}

/// Feed-forward echoes applied in sequence: `y[n] = x[n] + decay * x[n - d]`,
/// each tap acting on the previous tap's output. Length is preserved.
pub fn add_echo(a: &AudioBuffer, taps: &[(f64, f64)]) -> AudioBuffer {
    if taps.is_empty() {
        return a.clone();
    }
    let mut x: Vec<f64> = a.samples().iter().map(|&s| s as f64).collect();
    for &(delay_ms, decay) in taps {
        let d = (delay_ms * a.sample_rate() as f64 / 1000.0).round() as usize;
        for n in (d..x.len()).rev() {
            x[n] += decay * x[n - d];
        }
    }
    let samples = x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    AudioBuffer::from_trusted(samples, a.sample_rate())
}

/// Gain in dB the equalizer applies at `freq_hz`: each octave band
/// `[c / sqrt 2, c * sqrt 2)` takes its center's gain.
pub fn eq_gain_db(freq_hz: f64) -> f64 {
    let k = if freq_hz <= 0.0 {
        0
    } else {
        (freq_hz / EQ_CENTERS_HZ[0]).log2().round().clamp(0.0, 9.0) as usize
    };
    EQ_GAINS_DB[k]
}

/// Ten-band octave equalizer with alternating +6/-6 dB gains, applied as a
/// zero-phase filter in the frequency domain.
pub fn apply_eq(a: &AudioBuffer) -> AudioBuffer {
    if a.is_empty() {
        return a.clone();
    }
    let n = (2 * a.len()).next_power_of_two();
    let plan = Fft::new(n);
    let mut buf: Vec<Complex64> = a
        .samples()
        .iter()
        .map(|&s| Complex64::new(s as f64, 0.0))
        .chain(core::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    plan.forward(&mut buf);
    let fs = a.sample_rate() as f64;
    for k in 0..=n / 2 {
        let g = (eq_gain_db(k as f64 * fs / n as f64) / 20.0 * core::f64::consts::LN_10).exp();
        buf[k] *= g;
        if k > 0 && k < n / 2 {
            buf[n - k] *= g;
        }
    }
    plan.inverse(&mut buf);
    let samples = buf[..a.len()]
        .iter()
        .map(|c| (c.re / n as f64) as f32)
        .collect();
    AudioBuffer::from_trusted(samples, a.sample_rate())
}
