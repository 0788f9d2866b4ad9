//! STFT and log-Mel front-end.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::audio::{AudioBuffer, TARGET_RATE};
use crate::fft::{hann, Fft};
use crate::{Error, Result};

pub const FRAME_LEN: usize = 1024;
/// 200 frames per 2.5 s snippet.
pub const HOP: usize = 200;
pub const N_MELS: usize = 128;
pub const N_BINS: usize = FRAME_LEN / 2 + 1;
/// 2.5 s at 16 kHz.
pub const SNIPPET_LEN: usize = 40_000;
pub const SNIPPET_FRAMES: usize = SNIPPET_LEN / HOP;
pub const LOG_FLOOR: f64 = 1e-10;

/// One-sided short-time spectrum, `bins` rows by `frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Stft {
    pub bins: usize,
    pub frames: usize,
    /// Frame-major: `data[frame * bins + bin]`.
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }
}

/// Hann-windowed STFT. Frames start at multiples of `hop`; the input is
/// zero-padded by `frame_len - hop` at the end, giving `floor(len / hop)`
/// frames.
pub fn stft(x: &[f32], frame_len: usize, hop: usize) -> Result<Stft> {
    if hop == 0 || !frame_len.is_power_of_two() {
        return Err(Error::Config(format!(
            "invalid frame {frame_len} / hop {hop}"
        )));
    }
    if x.len() < frame_len {
        return Err(Error::Size(format!(
            "input of {} samples is shorter than one {frame_len}-sample frame",
            x.len()
        )));
    }
    let frames = x.len() / hop;
    let bins = frame_len / 2 + 1;
    let plan = Fft::new(frame_len);
    let window = hann(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let v = x.get(start + i).copied().unwrap_or(0.0) as f64;
            *c = Complex64::new(v * window[i], 0.0);
        }
        plan.forward(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { bins, frames, data })
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - min_log_mel) * logstep).exp()
    }
}

/// Triangular filters with unit peak, evenly spaced on the mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Band edges in Hz, `n_mels + 2` points.
    pub edges_hz: Vec<f64>,
    /// Per band: first FFT bin and its weights.
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Self {
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let bands = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |w| w.0);
                (first, weights.into_iter().map(|w| w.1).collect())
            })
            .collect();
        Self { edges_hz, bands }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    /// Weight of band `m` on FFT bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, ref w) = self.bands[m];
        if k < first {
            0.0
        } else {
            w.get(k - first).copied().unwrap_or(0.0)
        }
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-Mel spectrogram, `n_mels` rows by `n_frames` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    /// Little-endian float32 dump, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Shared front-end: precomputes the window, FFT plan and filterbank.
#[derive(Debug, Clone)]
pub struct MelFrontEnd {
    plan: Fft,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl Default for MelFrontEnd {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontEnd {
    pub fn new() -> Self {
        Self {
            plan: Fft::new(FRAME_LEN),
            window: hann(FRAME_LEN),
            bank: MelFilterbank::new(
                N_MELS,
                FRAME_LEN,
                TARGET_RATE as f64,
                0.0,
                TARGET_RATE as f64 / 2.0,
            ),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// 128 x 200 log-Mel spectrogram of a 2.5 s, 16 kHz snippet.
    pub fn compute(&self, a: &AudioBuffer) -> Result<MelSpectrogram> {
        if a.sample_rate() != TARGET_RATE {
            return Err(Error::Input(format!(
                "expected {TARGET_RATE} Hz audio, got {}",
                a.sample_rate()
            )));
        }
        if a.len() != SNIPPET_LEN {
            return Err(Error::Size(format!(
                "expected {SNIPPET_LEN} samples, got {}",
                a.len()
            )));
        }
        Ok(self.compute_unchecked(a.samples()))
    }

    fn compute_unchecked(&self, x: &[f32]) -> MelSpectrogram {
        let frames = x.len() / HOP;
        let mut values = vec![0.0f32; N_MELS * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
        let mut power = vec![0.0f64; N_BINS];
        let mut mel = vec![0.0f64; N_MELS];
        for f in 0..frames {
            let start = f * HOP;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = x.get(start + i).copied().unwrap_or(0.0) as f64;
                *c = Complex64::new(v * self.window[i], 0.0);
            }
            self.plan.forward(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.bank.apply(&power, &mut mel);
            for (m, &e) in mel.iter().enumerate() {
                values[m * frames + f] = e.max(LOG_FLOOR).ln() as f32;
            }
        }
        MelSpectrogram {
            n_mels: N_MELS,
            n_frames: frames,
            values,
        }
    }
}

/// Convenience wrapper building a fresh front-end.
pub fn mel_spectrogram(a: &AudioBuffer) -> Result<MelSpectrogram> {
    MelFrontEnd::new().compute(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn tone(freq: f64, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..SNIPPET_LEN)
                .map(|n| (amp * (2.0 * PI * freq * n as f64 / 16000.0).sin()) as f32)
                .collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn frame_count() {
        let s = stft(&vec![0.0; SNIPPET_LEN], FRAME_LEN, HOP).unwrap();
        assert_eq!((s.bins, s.frames), (513, 200));
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(
            stft(&[0.0; 100], FRAME_LEN, HOP),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn sine_peaks_at_bin_64() {
        let s = stft(tone(1000.0, 0.5).samples(), FRAME_LEN, HOP).unwrap();
        for f in [0, 50, 150] {
            let k = (0..s.bins)
                .max_by(|&a, &b| s.at(a, f).norm().total_cmp(&s.at(b, f).norm()))
                .unwrap();
            assert_eq!(k, 64);
        }
    }

    #[test]
    fn silence_hits_floor() {
        let m = mel_spectrogram(&AudioBuffer::silence(SNIPPET_LEN, 16000)).unwrap();
        assert_eq!((m.n_mels, m.n_frames), (128, 200));
        let floor = LOG_FLOOR.ln() as f32;
        assert!(m.values.iter().all(|&v| v == floor));
        assert!((floor + 23.02585).abs() < 1e-4);
    }

    #[test]
    fn wrong_length_is_size_error() {
        let a = AudioBuffer::silence(SNIPPET_LEN - 1, 16000);
        assert!(matches!(mel_spectrogram(&a), Err(Error::Size(_))));
    }

    #[test]
    fn filterbank_covers_spectrum() {
        let fe = MelFrontEnd::new();
        let bank = fe.filterbank();
        for k in 1..512 {
            let total: f64 = (0..N_MELS).map(|m| bank.weight(m, k)).sum();
            assert!(total > 0.0, "bin {k} uncovered");
        }
        for m in 0..N_MELS {
            assert!((0..N_BINS).all(|k| bank.weight(m, k) >= 0.0));
            assert!(
                (0..N_BINS).any(|k| bank.weight(m, k) > 0.0),
                "band {m} empty"
            );
        }
    }

    #[test]
    fn mel_scale_inverts() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn sine_lands_in_its_band() {
        let fe = MelFrontEnd::new();
        let m = fe.compute(&tone(440.0, 0.5)).unwrap();
        let edges = &fe.filterbank().edges_hz;
        for f in 0..m.n_frames {
            let best = (0..N_MELS)
                .max_by(|&a, &b| m.at(a, f).total_cmp(&m.at(b, f)))
                .unwrap();
            assert!(
                edges[best] < 440.0 && 440.0 < edges[best + 2],
                "frame {f}: band {best}"
            );
        }
    }

    #[test]
    fn scale_covariance() {
        let fe = MelFrontEnd::new();
        let a = fe.compute(&tone(1234.0, 0.1)).unwrap();
        let b = fe.compute(&tone(1234.0, 0.4)).unwrap();
        let shift = 2.0 * 4f64.ln();
        let floor = LOG_FLOOR.ln() as f32;
        for (x, y) in a.values.iter().zip(&b.values) {
            if *x > floor + 1.0 {
                // f32 storage limits the comparison
                assert!(
                    ((y - x) as f64 - shift).abs() < 1e-5 * (1.0 + x.abs() as f64),
                    "{x} {y}"
                );
            }
        }
    }
}
