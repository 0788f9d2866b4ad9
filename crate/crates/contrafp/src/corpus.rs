//! Directories of WAV tracks.

use std::path::{Path, PathBuf};

use contrafp_core::audio::{synth_corpus, to_mono_16k};
use contrafp_core::AudioBuffer;

use crate::error::{Error, Result};
use crate::wav;

pub fn track_file_name(seed: u64, i: usize) -> String {
    format!("track_{seed}_{i}.wav")
}

/// Writes `n` synthetic tracks into `dir`, creating it if needed. On failure
/// every file written so far is removed again.
pub fn write_synthetic(dir: &Path, n: usize, duration_s: f64, seed: u64) -> Result<Vec<PathBuf>> {
    let tracks = synth_corpus(n, duration_s, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(n);
    for (i, t) in tracks.iter().enumerate() {
        let path = dir.join(track_file_name(seed, i));
        if let Err(e) = wav::write_wav(&path, t) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

/// Every `.wav` file directly inside `dir`, sorted by name, as
/// `(file stem, mono 16 kHz audio)`.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, AudioBuffer)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Usage(format!(
            "{}: no .wav files found",
            dir.display()
        )));
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, to_mono_16k(&wav::read_wav(p)?)))
        })
        .collect()
}
