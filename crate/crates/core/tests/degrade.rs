//! Degradation menu: sampling statistics, duration law, range safety and the
//! equalizer's measured band response.

use contrafp_core::audio::{synth_track, TrackKind};
use contrafp_core::degrade::*;
use contrafp_core::AudioBuffer;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

#[test]
fn selection_rate_is_thirty_percent() {
    let n = 100_000;
    let mut counts = [0usize; 8];
    for seed in 0..n as u64 {
        let s = sample_spec(seed, true);
        let flags = [
            s.noise_intensity.is_some(),
            s.pitch_semitones.is_some(),
            s.speed_factor.is_some(),
            s.tempo_factor.is_some(),
            s.highpass_hz.is_some(),
            s.lowpass_hz.is_some(),
            s.echo,
            s.eq,
        ];
        for (c, f) in counts.iter_mut().zip(flags) {
            *c += usize::from(f);
        }
        assert!(!s.external);
        s.validate().unwrap();
        if let Some(v) = s.noise_intensity {
            assert!((0.0..=0.08).contains(&v));
        }
        if let Some(v) = s.pitch_semitones {
            assert!((-5.0..=5.0).contains(&v));
        }
        for v in [s.speed_factor, s.tempo_factor].into_iter().flatten() {
            assert!((0.8..=1.2).contains(&v));
        }
        assert!(s.highpass_hz.is_none_or(|f| f == 2000.0));
        assert!(s.lowpass_hz.is_none_or(|f| f == 300.0));
    }
    for (i, c) in counts.iter().enumerate() {
        let rate = *c as f64 / n as f64;
        assert!((0.29..=0.31).contains(&rate), "slot {i}: {rate}");
    }
    // without the test flag EQ never appears
    assert!((0..2000).all(|s| !sample_spec(s, false).eq));
}

fn noise(len: usize, seed: u64) -> AudioBuffer {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..len).map(|_| r.gen_range(-0.2f32..0.2)).collect(), 16000).unwrap()
}

/// Mean power of `x` in `[lo, hi)` Hz from a plain FFT periodogram.
fn band_power(x: &[f32], lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut sum, mut count) = (0.0, 0);
    for (k, c) in buf.iter().enumerate().take(n / 2) {
        let f = k as f64 * 16000.0 / n as f64;
        if f >= lo && f < hi {
            sum += c.norm_sqr();
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn eq_alternates_by_twelve_db_on_white_noise() {
    let x = noise(1 << 16, 5);
    let once = apply_eq(&x);
    let twice = apply_eq(&once);
    // bands whose full octave lies inside the 8 kHz spectrum, trimmed away
    // from the edges where neighbouring bands meet
    let centers = &EQ_CENTERS_HZ[2..9];
    let gain = |y: &AudioBuffer, c: f64| {
        let (lo, hi) = (c / 1.3, c * 1.3);
        10.0 * (band_power(y.samples(), lo, hi) / band_power(x.samples(), lo, hi)).log10()
    };
    for pair in centers.windows(2) {
        let d1 = gain(&once, pair[0]) - gain(&once, pair[1]);
        let d2 = gain(&twice, pair[0]) - gain(&twice, pair[1]);
        assert!((d1.abs() - 12.0).abs() < 3.0, "{pair:?}: {d1}");
        assert!((d2 - 2.0 * d1).abs() < 3.0, "{pair:?}: {d2} vs {d1}");
    }
    let level = 10.0 * (once.rms() / x.rms()).powi(2).log10();
    assert!(level.abs() <= 8.0, "{level}");
}

#[test]
fn two_tap_echo_on_an_impulse() {
    let mut x = vec![0.0f32; 2000];
    x[0] = 1.0;
    let y = add_echo(&AudioBuffer::new(x, 16000).unwrap(), &ECHO_TAPS);
    // (1 + 0.88 z^-d1)(1 + 0.4 z^-d2) with d1 = 0.8 ms and d2 = 60 ms
    let d1 = (0.8e-3f64 * 16000.0).round() as usize;
    let d2 = 960;
    let mut want = vec![0.0f64; 2000];
    want[0] += 1.0;
    want[d1] += 0.88;
    want[d2] += 0.4;
    want[d1 + d2] += 0.88 * 0.4;
    for (n, (&g, &w)) in y.samples().iter().zip(&want).enumerate() {
        assert!((g as f64 - w).abs() < 1e-6, "n={n}: {g} vs {w}");
    }
}

#[test]
fn pitch_and_tempo_commute_on_a_sine() {
    let fs = 16000.0;
    let x = AudioBuffer::new(
        (0..48_000)
            .map(|n| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / fs).sin()) as f32)
            .collect(),
        16000,
    )
    .unwrap();
    let a = time_stretch(&pitch_shift(&x, 3.0), 0.9);
    let b = pitch_shift(&time_stretch(&x, 0.9), 3.0);
    let peak = |y: &AudioBuffer| {
        let n = y.len().next_power_of_two();
        let mut buf: Vec<Complex<f64>> = y
            .samples()
            .iter()
            .map(|&v| Complex::new(v as f64, 0.0))
            .collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&i, &j| buf[i].norm().total_cmp(&buf[j].norm()))
            .unwrap();
        k as f64 * fs / n as f64
    };
    let (fa, fb) = (peak(&a), peak(&b));
    assert!((fa / fb - 1.0).abs() < 0.03, "{fa} vs {fb}");
    assert!(
        (fa / (440.0 * 2f64.powf(3.0 / 12.0)) - 1.0).abs() < 0.03,
        "{fa}"
    );
    assert!((a.len() as f64 / b.len() as f64 - 1.0).abs() < 0.03);
}

fn track() -> AudioBuffer {
    synth_track(TrackKind::ToneMixture, 4, 3.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn duration_follows_speed_and_tempo(seed in any::<u64>()) {
        let spec = sample_spec(seed, true);
        let x = track();
        let y = apply(&x, &spec, seed);
        let want = x.len() as f64 * spec.duration_ratio();
        prop_assert!((y.len() as f64 / want - 1.0).abs() < 0.01, "{} vs {want} for {spec}", y.len());
    }

    #[test]
    fn outputs_stay_in_range(seed in any::<u64>(), gain in 0.5f32..2.5) {
        let spec = sample_spec(seed, true);
        let x = AudioBuffer::new(track().samples().iter().map(|s| s * gain).collect(), 16000).unwrap();
        let y = apply(&x, &spec, seed);
        prop_assert!(y.samples().iter().all(|s| s.is_finite() && (-1.0..=1.0).contains(s)));
        let again = apply(&x, &spec, seed);
        prop_assert_eq!(again.samples(), y.samples());
    }

    #[test]
    fn spec_lines_parse_back(seed in any::<u64>()) {
        let spec = sample_spec(seed, true);
        prop_assert_eq!(spec.to_string().parse::<DegradationSpec>().unwrap(), spec);
    }
}
