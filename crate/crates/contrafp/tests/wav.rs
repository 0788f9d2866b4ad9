use contrafp::wav::{read_wav, write_wav};
use contrafp::Error;
use contrafp_core::AudioBuffer;
use hound::{SampleFormat, WavSpec, WavWriter};

fn spec(channels: u16, rate: u32, bits: u16, fmt: SampleFormat) -> WavSpec {
    WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: fmt,
    }
}

#[test]
fn stereo_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    let mut w = WavWriter::create(&p, spec(2, 16000, 16, SampleFormat::Int)).unwrap();
    for _ in 0..100 {
        w.write_sample(16384i16).unwrap();
        w.write_sample(16384i16).unwrap();
    }
    w.finalize().unwrap();
    let a = read_wav(&p).unwrap();
    assert_eq!(a.len(), 100);
    assert!(a.samples().iter().all(|&s| s == 0.5));
}

#[test]
fn silence_keeps_native_rate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.wav");
    let mut w = WavWriter::create(&p, spec(1, 44100, 16, SampleFormat::Int)).unwrap();
    for _ in 0..44100 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let a = read_wav(&p).unwrap();
    assert_eq!((a.len(), a.sample_rate()), (44100, 44100));
    assert!(a.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn ramp_24_bit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.wav");
    let n = 5000i32;
    let full = 1i32 << 23;
    let values: Vec<i32> = (0..n)
        .map(|i| -full + (i64::from(i) * (2 * i64::from(full) - 1) / i64::from(n - 1)) as i32)
        .collect();
    let mut w = WavWriter::create(&p, spec(1, 22050, 24, SampleFormat::Int)).unwrap();
    for &v in &values {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    let a = read_wav(&p).unwrap();
    for (&got, &v) in a.samples().iter().zip(&values) {
        let want = v as f64 / full as f64;
        assert!(
            (got as f64 - want).abs() <= 2f64.powi(-23),
            "{got} vs {want}"
        );
    }
}

#[test]
fn float_and_8_bit_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.wav");
    let mut w = WavWriter::create(&p, spec(1, 8000, 32, SampleFormat::Float)).unwrap();
    w.write_sample(-0.25f32).unwrap();
    w.write_sample(0.75f32).unwrap();
    w.finalize().unwrap();
    assert_eq!(read_wav(&p).unwrap().samples(), &[-0.25, 0.75]);

    let p8 = dir.path().join("b.wav");
    let mut w = WavWriter::create(&p8, spec(1, 8000, 8, SampleFormat::Int)).unwrap();
    w.write_sample(64i8).unwrap();
    w.finalize().unwrap();
    assert_eq!(read_wav(&p8).unwrap().samples(), &[0.5]);
}

#[test]
fn unsupported_and_malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c3.wav");
    let mut w = WavWriter::create(&p, spec(3, 8000, 16, SampleFormat::Int)).unwrap();
    for _ in 0..3 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    assert!(matches!(read_wav(&p), Err(Error::Unsupported { .. })));

    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"RIFF\x10\x00\x00\x00WAVEnope").unwrap();
    let e = read_wav(&junk).unwrap_err();
    assert!(matches!(e, Error::Malformed { .. }), "{e:?}");

    let missing = dir.path().join("missing.wav");
    let e = read_wav(&missing).unwrap_err();
    assert!(e.to_string().contains("missing.wav"), "{e}");
}

#[test]
fn written_files_read_back_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.wav");
    let x: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.01).sin() * 0.9).collect();
    write_wav(&p, &AudioBuffer::new(x.clone(), 16000).unwrap()).unwrap();
    let a = read_wav(&p).unwrap();
    assert_eq!(a.sample_rate(), 16000);
    for (g, w) in a.samples().iter().zip(&x) {
        assert!((g - w).abs() <= 0.5 / 32768.0 + 1e-7);
    }
    // only the final file is left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
