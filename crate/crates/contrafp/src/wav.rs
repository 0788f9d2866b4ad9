//! WAV reading (8/16/24/32-bit integer or 32-bit float PCM, mono or stereo)
//! and 16-bit mono writing.

use std::io::{Read, Seek};
use std::path::Path;

use contrafp_core::AudioBuffer;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

fn map_err(e: hound::Error, path: &Path) -> Error {
    match e {
        // the file itself opened fine, so a read failure inside the parser
        // means the data ran out early
        hound::Error::IoError(io) => Error::Malformed {
            what: "WAV file",
            msg: format!("{}: {io}", path.display()),
        },
        hound::Error::FormatError(msg) => Error::Malformed {
            what: "WAV file",
            msg: msg.into(),
        },
        hound::Error::UnfinishedSample => Error::Malformed {
            what: "WAV file",
            msg: "data ends inside a sample".into(),
        },
        other => Error::Unsupported {
            what: "WAV encoding",
            msg: other.to_string(),
        },
    }
}

fn write_err(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => map_err(other, path),
    }
}

/// Reads a WAV file into a mono buffer at the file's own rate. Stereo is
/// mixed as the mean of both channels; integer samples are scaled so that
/// full scale maps to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| map_err(e, path))?;
    decode(reader, path)
}

fn decode<R: Read + Seek>(reader: WavReader<R>, path: &Path) -> Result<AudioBuffer> {
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Unsupported {
            what: "WAV layout",
            msg: format!("{} channels", spec.channels),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_err(e, path))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_err(e, path))?,
        (fmt, bits) => {
            return Err(Error::Unsupported {
                what: "WAV encoding",
                msg: format!("{bits}-bit {fmt:?}"),
            });
        }
    };
    Ok(AudioBuffer::from_interleaved(
        &interleaved,
        spec.channels as usize,
        spec.sample_rate,
    )?)
}

/// Quantizes to 16-bit PCM: `round(x * 32768)` clamped to the i16 range.
pub fn quantize16(x: f32) -> i16 {
    (x as f64 * 32768.0)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a 16-bit PCM mono file. The file appears complete or not at all.
pub fn write_wav(path: impl AsRef<Path>, a: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: a.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    crate::atomic_write(path, |file| {
        let mut w =
            WavWriter::new(std::io::BufWriter::new(file), spec).map_err(|e| write_err(e, path))?;
        for &s in a.samples() {
            w.write_sample(quantize16(s))
                .map_err(|e| write_err(e, path))?;
        }
        w.finalize().map_err(|e| write_err(e, path))
    })
}
