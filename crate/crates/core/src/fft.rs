//! Iterative radix-2 complex FFT.

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
use num_traits::Float;

/// Precomputed plan for a power-of-two transform size.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(
            n.is_power_of_two() && n >= 2,
            "FFT size must be a power of two >= 2, got {n}"
        );
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| i.reverse_bits() >> (32 - bits))
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self {
            n,
            twiddles,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward transform in place: `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Unnormalized inverse transform in place (divide by `len()` yourself).
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n, "buffer length does not match FFT plan");
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Wraps a phase into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Frequency in Hz of the strongest spectral peak of `x`, Hann-windowed and
/// zero-padded to a power of two, refined by parabolic interpolation.
pub fn peak_frequency(x: &[f32], sample_rate: u32) -> f64 {
    let n = x.len().next_power_of_two().max(2);
    let plan = Fft::new(n);
    let win = hann(x.len().max(1));
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| {
            let v = if i < x.len() {
                x[i] as f64 * win[i]
            } else {
                0.0
            };
            Complex64::new(v, 0.0)
        })
        .collect();
    plan.forward(&mut buf);
    let mags: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
    let (k, _) =
        mags.iter()
            .enumerate()
            .skip(1)
            .fold((0usize, f64::neg_infinity()), |acc, (i, &m)| {
                if m > acc.1 {
                    (i, m)
                } else {
                    acc
                }
            });
    // parabolic interpolation on log magnitude
    let refine = if k > 0 && k + 1 < mags.len() {
        let (a, b, c) = (
            mags[k - 1].max(1e-300).ln(),
            mags[k].max(1e-300).ln(),
            mags[k + 1].max(1e-300).ln(),
        );
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            0.5 * (a - c) / denom
        } else {
            0.0
        }
    } else {
        0.0
    };
    (k as f64 + refine) * sample_rate as f64 / n as f64
}
