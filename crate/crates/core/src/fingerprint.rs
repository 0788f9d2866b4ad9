//! Segmenting audio and embedding each segment into a sub-fingerprint.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::audio::{to_mono_16k, AudioBuffer, TARGET_RATE};
use crate::features::{MelFrontEnd, SNIPPET_LEN};
use crate::nn::{self, ParamSet};
use crate::{Error, Result};

/// Segments overlap by 15% of their 2.5 s length.
pub const SEGMENT_HOP: usize = SNIPPET_LEN * 85 / 100;
/// float32 storage of one 256-d sub-fingerprint.
pub const SUB_FINGERPRINT_BYTES: usize = nn::EMBED_DIM * 4;

const ENCODE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SubFingerprint {
    pub vector: Vec<f32>,
    /// Segment start in seconds.
    pub offset_s: f64,
}

impl SubFingerprint {
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.vector.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub track_ref: String,
    pub subs: Vec<SubFingerprint>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }
}

/// Number of whole segments in `len` samples.
pub fn segment_count(len: usize) -> usize {
    if len < SNIPPET_LEN {
        0
    } else {
        (len - SNIPPET_LEN) / SEGMENT_HOP + 1
    }
}

/// 2.5 s segments starting every 2.125 s; a tail that cannot fill a whole
/// segment is dropped.
pub fn segment(a: &AudioBuffer) -> Result<Vec<(f64, AudioBuffer)>> {
    if a.sample_rate() != TARGET_RATE {
        return Err(Error::Input(format!(
            "segmenting needs {TARGET_RATE} Hz audio, got {}",
            a.sample_rate()
        )));
    }
    if a.len() < SNIPPET_LEN {
        return Err(Error::Input(format!(
            "audio too short: {:.3} s, a fingerprint needs at least 2.5 s",
            a.duration_s()
        )));
    }
    Ok((0..segment_count(a.len()))
        .map(|k| {
            let start = k * SEGMENT_HOP;
            (
                start as f64 / TARGET_RATE as f64,
                a.slice(start, SNIPPET_LEN),
            )
        })
        .collect())
}

/// Query encoder plus front-end, ready to fingerprint audio.
#[derive(Debug, Clone)]
pub struct Extractor {
    params: ParamSet<f32>,
    frontend: MelFrontEnd,
}

impl Extractor {
    pub fn new(params: ParamSet<f32>) -> Self {
        Self {
            params,
            frontend: MelFrontEnd::new(),
        }
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    /// Converts to 16 kHz, segments and embeds every segment.
    pub fn extract(&self, a: &AudioBuffer, track_ref: &str) -> Result<Fingerprint> {
        let a = to_mono_16k(a);
        let segments = segment(&a)?;
        let mut subs = Vec::with_capacity(segments.len());
        for chunk in segments.chunks(ENCODE_BATCH) {
            let mels = chunk
                .iter()
                .map(|(_, s)| self.frontend.compute(s))
                .collect::<Result<Vec<_>>>()?;
            let e = nn::forward(&self.params, &mels)?;
            for (i, (offset, _)) in chunk.iter().enumerate() {
                subs.push(SubFingerprint {
                    vector: e.row(i).to_vec(),
                    offset_s: *offset,
                });
            }
        }
        Ok(Fingerprint {
            track_ref: track_ref.into(),
            subs,
        })
    }
}

/// One-off extraction with the given query encoder.
pub fn extract(a: &AudioBuffer, encoder: &ParamSet<f32>) -> Result<Fingerprint> {
    Extractor::new(encoder.clone()).extract(a, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_seconds_gives_four_segments() {
        let s = segment(&AudioBuffer::silence(160_000, 16000)).unwrap();
        let offsets: Vec<f64> = s.iter().map(|(o, _)| *o).collect();
        assert_eq!(offsets, [0.0, 2.125, 4.25, 6.375]);
        assert!(s.iter().all(|(_, a)| a.len() == SNIPPET_LEN));
    }

    #[test]
    fn counts() {
        assert_eq!(SEGMENT_HOP, 34_000);
        assert_eq!(
            segment(&AudioBuffer::silence(40_000, 16000)).unwrap().len(),
            1
        );
        assert_eq!(segment_count(180 * 16000), 84);
        assert!(segment(&AudioBuffer::silence(39_999, 16000)).is_err());
        assert!(segment(&AudioBuffer::silence(80_000, 8000)).is_err());
    }

    #[test]
    fn sub_fingerprint_is_1024_bytes() {
        let s = SubFingerprint {
            vector: alloc::vec![0.0; 256],
            offset_s: 0.0,
        };
        assert_eq!(s.to_le_bytes().len(), SUB_FINGERPRINT_BYTES);
        assert_eq!(SUB_FINGERPRINT_BYTES, 1024);
    }
}
