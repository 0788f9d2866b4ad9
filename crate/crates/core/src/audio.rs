//! Mono sample buffers, band-limited resampling and the synthetic corpus.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::degrade::{Biquad, FilterMode};
use crate::{rng, Error, Result};

/// Working sample rate of every model-facing operation.
pub const TARGET_RATE: u32 = 16_000;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Mixes interleaved frames down to mono as the mean of the channels.
    pub fn from_interleaved(data: &[f32], channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Input("channel count must be positive".into()));
        }
        if data.len() % channels != 0 {
            return Err(Error::Input(format!(
                "{} interleaved samples do not divide into {channels} channels",
                data.len()
            )));
        }
        let scale = 1.0 / channels as f32;
        let mono = data
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() * scale)
            .collect();
        Self::new(mono, sample_rate)
    }

    /// Silence of the given length.
    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub(crate) fn from_trusted(samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `len` samples starting at `start`, clipped to the buffer end.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let start = start.min(self.samples.len());
        let end = start.saturating_add(len).min(self.samples.len());
        Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Resamples to 16 kHz. Buffers already at 16 kHz come back unchanged.
pub fn to_mono_16k(a: &AudioBuffer) -> AudioBuffer {
    if a.sample_rate == TARGET_RATE {
        return a.clone();
    }
    let out = Resampler::ingest().resample_rates(&a.samples, a.sample_rate, TARGET_RATE);
    AudioBuffer::from_trusted(out, TARGET_RATE)
}

/// Kaiser-windowed sinc interpolator.
///
/// The kernel is laid out in units of the lower of the two sample rates, so
/// its cutoff sits at `cutoff` times that rate and it spans `half_width` zero
/// crossings on either side of the output instant.
#[derive(Debug, Clone)]
pub struct Resampler {
    half_width: usize,
    cutoff: f64,
    table: Vec<f64>,
}

const TABLE_OVERSAMPLE: usize = 512;

/// 32-tap kernel used inside the speed and pitch degradations.
impl Default for Resampler {
    fn default() -> Self {
        Self::new(16, 0.45, 8.0)
    }
}

impl Resampler {
    /// Long kernel for file ingestion: passband flat to within 1% up to
    /// 7 kHz when converting to 16 kHz.
    pub fn ingest() -> Self {
        Self::new(96, 0.45, 10.0)
    }

    pub fn new(half_width: usize, cutoff: f64, beta: f64) -> Self {
        assert!(half_width > 0 && cutoff > 0.0 && cutoff <= 0.5);
        let n = half_width * TABLE_OVERSAMPLE + 2;
        let i0_beta = bessel_i0(beta);
        let table = (0..n)
            .map(|i| {
                let u = i as f64 / TABLE_OVERSAMPLE as f64;
                let r = u / half_width as f64;
                if r >= 1.0 {
                    return 0.0;
                }
                let w = bessel_i0(beta * (1.0 - r * r).sqrt()) / i0_beta;
                2.0 * cutoff * sinc(2.0 * cutoff * u) * w
            })
            .collect();
        Self {
            half_width,
            cutoff,
            table,
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn kernel(&self, u: f64) -> f64 {
        let x = u.abs() * TABLE_OVERSAMPLE as f64;
        let i = x as usize;
        if i + 1 >= self.table.len() {
            return 0.0;
        }
        let f = x - i as f64;
        self.table[i] * (1.0 - f) + self.table[i + 1] * f
    }

    /// Resamples between two integer rates. Output length is
    /// `round(len * rate_out / rate_in)`.
    pub fn resample_rates(&self, x: &[f32], rate_in: u32, rate_out: u32) -> Vec<f32> {
        let out_len =
            ((x.len() as u64 * rate_out as u64 + rate_in as u64 / 2) / rate_in as u64) as usize;
        let step = rate_in as f64 / rate_out as f64;
        self.resample_with(x, out_len, step)
    }

    /// Reads the input at instants `n * step` for `n in 0..round(len / step)`.
    /// `step > 1` plays faster (shorter, higher), `step < 1` slower.
    pub fn resample_step(&self, x: &[f32], step: f64) -> Vec<f32> {
        assert!(step > 0.0 && step.is_finite());
        let out_len = (x.len() as f64 / step).round() as usize;
        self.resample_with(x, out_len, step)
    }

    fn resample_with(&self, x: &[f32], out_len: usize, step: f64) -> Vec<f32> {
        // kernel coordinates are in units of the lower rate
        let scale = (1.0 / step).min(1.0);
        let reach = self.half_width as f64 / scale;
        let n_in = x.len() as isize;
        (0..out_len)
            .map(|n| {
                let t = n as f64 * step;
                let lo = ((t - reach).floor() as isize + 1).max(0);
                let hi = ((t + reach).ceil() as isize - 1).min(n_in - 1);
                let mut acc = 0.0f64;
                let mut k = lo;
                while k <= hi {
                    acc += x[k as usize] as f64 * self.kernel((t - k as f64) * scale);
                    k += 1;
                }
                (acc * scale) as f32
            })
            .collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= (half / k) * (half / k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Families of synthetic tracks used in place of a real corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackKind {
    /// Five amplitude-modulated partials.
    ToneMixture,
    /// Repeating linear frequency sweeps with a second harmonic.
    Chirp,
    /// Band-pass filtered noise gated by a rhythmic envelope.
    FilteredNoise,
}

impl TrackKind {
    pub const ALL: [TrackKind; 3] = [
        TrackKind::ToneMixture,
        TrackKind::Chirp,
        TrackKind::FilteredNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackKind::ToneMixture => "tone-mixture",
            TrackKind::Chirp => "chirp",
            TrackKind::FilteredNoise => "filtered-noise",
        }
    }

    /// Kind used for the `i`-th track of a synthesized corpus.
    pub fn for_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }
}

impl fmt::Display for TrackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown track kind {s:?}")))
    }
}

const SYNTH_PEAK: f32 = 0.5;

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Deterministic synthetic track at 16 kHz, peak-normalized to 0.5.
pub fn synth_track(kind: TrackKind, seed: u64, duration_s: f64) -> Result<AudioBuffer> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Input(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let len = (duration_s * TARGET_RATE as f64).round() as usize;
    let fs = TARGET_RATE as f64;
    let mut rng = rng::seeded(seed, 0x5157, kind as u64);
    let mut x = vec![0.0f64; len];
    match kind {
        TrackKind::ToneMixture => {
            for _ in 0..5 {
                let f = log_uniform(&mut rng, 150.0, 4000.0);
                let amp = rng.gen_range(0.3..1.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let am_rate = rng.gen_range(0.3..3.0);
                let am_phase = rng.gen_range(0.0..2.0 * PI);
                let am_depth = rng.gen_range(0.3..0.9);
                for (n, v) in x.iter_mut().enumerate() {
                    let t = n as f64 / fs;
                    let env =
                        1.0 - am_depth * (0.5 + 0.5 * (2.0 * PI * am_rate * t + am_phase).sin());
                    *v += amp * env * (2.0 * PI * f * t + phase).sin();
                }
            }
        }
        TrackKind::Chirp => {
            let f0 = log_uniform(&mut rng, 200.0, 3500.0);
            let mut f1 = log_uniform(&mut rng, 200.0, 3500.0);
            if (f1 / f0).ln().abs() < 0.4 {
                f1 = if f0 < 900.0 { f0 * 2.5 } else { f0 / 2.5 };
            }
            let period = rng.gen_range(0.7..2.5);
            let second = rng.gen_range(0.1..0.5);
            let mut phase = rng.gen_range(0.0..2.0 * PI);
            for (n, v) in x.iter_mut().enumerate() {
                let t = n as f64 / fs;
                let frac = t / period - (t / period).floor();
                let f = f0 + (f1 - f0) * frac;
                phase += 2.0 * PI * f / fs;
                *v = phase.sin() + second * (2.0 * phase).sin();
            }
        }
        TrackKind::FilteredNoise => {
            let center = log_uniform(&mut rng, 300.0, 3500.0);
            let q = rng.gen_range(2.0..6.0);
            let pulse_rate = rng.gen_range(1.0..4.0);
            let duty = rng.gen_range(0.3..0.7);
            let pulse_phase = rng.gen_range(0.0..1.0);
            let mut bp = Biquad::design(FilterMode::Bandpass { q }, center, fs);
            let mut env = 0.0f64;
            for (n, v) in x.iter_mut().enumerate() {
                let t = n as f64 / fs;
                let cycle = t * pulse_rate + pulse_phase;
                let target = if cycle - cycle.floor() < duty {
                    1.0
                } else {
                    0.1
                };
                env += (target - env) * 0.002;
                let w: f64 = rng.gen_range(-1.0..1.0);
                *v = env * bp.process(w);
            }
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 {
        SYNTH_PEAK as f64 / peak
    } else {
        0.0
    };
    Ok(AudioBuffer::from_trusted(
        x.into_iter().map(|v| (v * gain) as f32).collect(),
        TARGET_RATE,
    ))
}

/// Seed of track `i` in a corpus generated from `seed`.
pub fn corpus_track_seed(seed: u64, i: usize) -> u64 {
    rng::mix(seed, i as u64)
}

/// `n` tracks cycling through the families, each with its own derived seed.
pub fn synth_corpus(n: usize, duration_s: f64, seed: u64) -> Result<Vec<AudioBuffer>> {
    if n == 0 {
        return Err(Error::Input("need at least one track".into()));
    }
    (0..n)
        .map(|i| {
            synth_track(
                TrackKind::for_index(i),
                corpus_track_seed(seed, i),
                duration_s,
            )
        })
        .collect()
}
