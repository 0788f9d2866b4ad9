//! Reference-database construction and hit-rate evaluation.
//!
//! A query picks a random reference track, cuts a random 10 s clip from it,
//! degrades the clip with a freshly sampled spec and identifies it against
//! the database. A hit is a correct top-1 answer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::process::Command;

use contrafp_core::audio::{to_mono_16k, TARGET_RATE};
use contrafp_core::degrade::{
    apply_with, sample_spec_with, DegradationPolicy, DegradationSpec, ExternalAttack,
};
use contrafp_core::fingerprint::Extractor;
use contrafp_core::nn::EMBED_DIM;
use contrafp_core::{rng, AudioBuffer, FingerprintDb};
use rand::Rng;

use crate::error::{Error, Result};
use crate::wav;

pub const CLIP_SECONDS: f64 = 10.0;
const STREAM_QUERY: u64 = 0xE7A1;

/// Runs `f` over `0..n` on up to `threads` threads, returning results in
/// index order regardless of scheduling.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(n))
                        .map(f)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Fingerprints every track and adds them in the given order, so track `i`
/// gets id `i` in a fresh database.
pub fn build_db(
    extractor: &Extractor,
    tracks: &[(String, AudioBuffer)],
    threads: usize,
) -> Result<FingerprintDb> {
    let fps = parallel_map(tracks.len(), threads, |i| {
        extractor.extract(&tracks[i].1, &tracks[i].0)
    });
    let mut db = FingerprintDb::new(EMBED_DIM);
    for ((name, _), fp) in tracks.iter().zip(fps) {
        db.add_track(&fp?, name)?;
    }
    Ok(db)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub n_queries: usize,
    pub seed: u64,
    pub policy: DegradationPolicy,
    pub threads: usize,
}

impl EvalOptions {
    pub fn new(n_queries: usize, seed: u64) -> Self {
        Self {
            n_queries,
            seed,
            policy: DegradationPolicy::test(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    /// Index of the source track in the reference list.
    pub source: usize,
    pub clip_start_s: f64,
    pub spec: DegradationSpec,
    /// Top-1 track id; `None` when the degraded clip was too short to
    /// fingerprint.
    pub predicted: Option<u32>,
    pub votes: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub queries: usize,
    pub hits: usize,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.hits as f64 / self.queries as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_queries: usize,
    pub hits: usize,
    pub hit_rate: f64,
    /// One bucket per query, keyed by its full degradation combination
    /// ("none" when clean); counts sum to `n_queries`.
    pub by_combination: BTreeMap<String, Tally>,
    /// Each query counted under every degradation it contains.
    pub by_degradation: BTreeMap<String, Tally>,
    pub mean_winner_votes: f64,
    pub outcomes: Vec<QueryOutcome>,
}

impl EvalReport {
    fn from_outcomes(outcomes: Vec<QueryOutcome>) -> Self {
        let n = outcomes.len();
        let hits = outcomes.iter().filter(|o| o.hit).count();
        let mut by_combination: BTreeMap<String, Tally> = BTreeMap::new();
        let mut by_degradation: BTreeMap<String, Tally> = BTreeMap::new();
        for o in &outcomes {
            let labels = o.spec.labels();
            let combo = if labels.is_empty() {
                "none".to_string()
            } else {
                labels.join("+")
            };
            let bump = |map: &mut BTreeMap<String, Tally>, key: String| {
                let t = map.entry(key).or_default();
                t.queries += 1;
                t.hits += usize::from(o.hit);
            };
            bump(&mut by_combination, combo);
            if labels.is_empty() {
                bump(&mut by_degradation, "none".into());
            }
            for l in labels {
                bump(&mut by_degradation, l.into());
            }
        }
        let mean_winner_votes = if n == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| o.votes).sum::<usize>() as f64 / n as f64
        };
        Self {
            n_queries: n,
            hits,
            hit_rate: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            by_combination,
            by_degradation,
            mean_winner_votes,
            outcomes,
        }
    }

    /// Tab-separated records for scripts: `eval`, `degradation` and
    /// `combination` lines.
    pub fn machine_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("eval\tn_queries\t{}", self.n_queries),
            format!("eval\thits\t{}", self.hits),
            format!("eval\thit_rate\t{:.6}", self.hit_rate),
            format!("eval\tmean_winner_votes\t{:.6}", self.mean_winner_votes),
        ];
        for (k, t) in &self.by_degradation {
            out.push(format!(
                "degradation\t{k}\t{}\t{}\t{:.6}",
                t.queries,
                t.hits,
                t.rate()
            ));
        }
        for (k, t) in &self.by_combination {
            out.push(format!(
                "combination\t{k}\t{}\t{}\t{:.6}",
                t.queries,
                t.hits,
                t.rate()
            ));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "hit rate {:.4} ({} of {} queries)",
            self.hit_rate, self.hits, self.n_queries
        )?;
        writeln!(f, "mean votes of the winner {:.2}", self.mean_winner_votes)?;
        writeln!(f, "by degradation:")?;
        for (k, t) in &self.by_degradation {
            writeln!(
                f,
                "  {k:<10} {:>4}/{:<4} {:.3}",
                t.hits,
                t.queries,
                t.rate()
            )?;
        }
        Ok(())
    }
}

/// Runs `opts.n_queries` queries drawn from `refs` against `db`. Reference
/// `i` must be track id `i` of the database (see [`build_db`]).
pub fn evaluate(
    extractor: &Extractor,
    db: &FingerprintDb,
    refs: &[(String, AudioBuffer)],
    opts: &EvalOptions,
    external: Option<&(dyn ExternalAttack + Sync)>,
) -> Result<EvalReport> {
    if refs.is_empty() {
        return Err(Error::Usage("no reference tracks to query".into()));
    }
    if db.tracks().len() != refs.len() {
        return Err(Error::Usage(format!(
            "database has {} tracks, {} references given",
            db.tracks().len(),
            refs.len()
        )));
    }
    if opts.policy.include_external && external.is_none() {
        return Err(Error::Usage(
            "the external attack is enabled but no codec command was given".into(),
        ));
    }
    let results = parallel_map(opts.n_queries, opts.threads, |q| -> Result<QueryOutcome> {
        let mut r = rng::seeded(opts.seed, STREAM_QUERY, q as u64);
        let source = r.gen_range(0..refs.len());
        let track = &refs[source].1;
        let clip_len = ((CLIP_SECONDS * TARGET_RATE as f64) as usize).min(track.len());
        let start = r.gen_range(0..=track.len() - clip_len);
        let clip = track.slice(start, clip_len);
        let spec_seed = r.gen();
        let spec = sample_spec_with(spec_seed, &opts.policy);
        let degraded = apply_with(
            &clip,
            &spec,
            rng::mix(spec_seed, 1),
            external.map(|e| e as &dyn ExternalAttack),
        )?;
        let (predicted, votes) = match extractor.extract(&degraded, "") {
            Ok(fp) => {
                let best = db
                    .identify(&fp)?
                    .into_iter()
                    .next()
                    .expect("nonempty query has a winner");
                (Some(best.track_id), best.votes)
            }
            // too short to fingerprint after a strong speed-up: a miss
            Err(contrafp_core::Error::Input(_)) if degraded.len() < contrafp_core::SNIPPET_LEN => {
                (None, 0)
            }
            Err(e) => return Err(e.into()),
        };
        let hit = predicted == Some(db.tracks()[source].id);
        Ok(QueryOutcome {
            source,
            clip_start_s: start as f64 / TARGET_RATE as f64,
            spec,
            predicted,
            votes,
            hit,
        })
    });
    Ok(EvalReport::from_outcomes(
        results.into_iter().collect::<Result<_>>()?,
    ))
}

/// External attack run by a shell command, e.g. an MP3 round trip through
/// an encoder. `{in}` and `{out}` in the command are replaced by WAV paths.
#[derive(Debug, Clone)]
pub struct CommandAttack {
    pub command: String,
}

impl CommandAttack {
    pub fn new(command: impl Into<String>) -> Result<Self> {
        let command = command.into();
        if !command.contains("{in}") || !command.contains("{out}") {
            return Err(Error::Usage(format!(
                "codec command must mention {{in}} and {{out}}: {command:?}"
            )));
        }
        Ok(Self { command })
    }

    fn run(&self, a: &AudioBuffer) -> Result<AudioBuffer> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input: PathBuf = dir.path().join("in.wav");
        let output: PathBuf = dir.path().join("out.wav");
        wav::write_wav(&input, a)?;
        let cmd = self
            .command
            .replace("{in}", &input.to_string_lossy())
            .replace("{out}", &output.to_string_lossy());
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::io("sh", e))?;
        if !status.success() {
            return Err(Error::Usage(format!(
                "codec command failed ({status}): {cmd}"
            )));
        }
        let out = to_mono_16k(&wav::read_wav(&output)?);
        // codecs pad; keep the original length so later stages line up
        let mut samples = out.into_samples();
        samples.resize(a.len(), 0.0);
        Ok(AudioBuffer::new(samples, a.sample_rate())?)
    }
}

impl ExternalAttack for CommandAttack {
    fn attack(&self, a: &AudioBuffer) -> contrafp_core::Result<AudioBuffer> {
        self.run(a)
            .map_err(|e| contrafp_core::Error::State(format!("external attack: {e}")))
    }
}
