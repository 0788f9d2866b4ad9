//! Contrastive audio fingerprinting core.
//!
//! Fingerprints are learned with momentum contrast: two randomly degraded
//! views of the same audio excerpt form a positive pair, a FIFO dictionary of
//! past key embeddings supplies the negatives, and an InfoNCE objective trains
//! the query encoder while the key encoder follows it as a moving average.
//! After training, audio is cut into 2.5 s segments, each segment becomes a
//! 256-d unit-norm sub-fingerprint, and a query is identified by majority vote
//! over cosine nearest neighbours in the reference database.
//!
//! The crate is `no_std` (with `alloc`). File formats, WAV IO and the command
//! line live in the `contrafp` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audio;
pub mod degrade;
mod error;
pub mod features;
pub mod fft;
pub mod fingerprint;
pub mod gradcheck;
pub mod matchdb;
pub mod moco;
pub mod nn;
pub mod rng;

pub use audio::{AudioBuffer, TrackKind, TARGET_RATE};
pub use degrade::{DegradationPolicy, DegradationSpec};
pub use error::{Error, Result};
pub use features::{MelSpectrogram, N_MELS, SNIPPET_LEN};
pub use fingerprint::{Extractor, Fingerprint, SubFingerprint};
pub use matchdb::{FingerprintDb, MatchResult, TrackEntry};
pub use moco::{DictionaryQueue, Hyper, StepMetrics, TrainState};

pub use nn::{EncoderConfig, ParamSet, Tensor};
