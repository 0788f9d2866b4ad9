use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use contrafp::config::{TrainConfig, CONFIG_ENV};
use contrafp::eval::{self, CommandAttack, EvalOptions};
use contrafp::{atomic_write, corpus, formats, wav};
use contrafp_core::degrade::{self, DegradationPolicy, ExternalAttack};
use contrafp_core::moco::{self, StepMetrics};
use contrafp_core::nn::{EncoderConfig, ParamSet};
use contrafp_core::{gradcheck, Extractor};

#[derive(Parser, Debug)]
#[command(name = "contrafp", version, about = "Contrastive audio fingerprinting")]
struct Cli {
    /// Seed for every random choice (default 0; `train` falls back to the
    /// config file's seed first)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training config file
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for fingerprinting and evaluation
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write deterministic synthetic tracks as 16-bit WAV files
    Synth {
        /// Number of tracks
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Seconds per track
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Output directory, created if missing
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder on a directory of WAV tracks
    Train {
        /// Corpus directory (overrides the config file's `corpus`)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
        /// Per-step metrics as tab-separated values
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override the number of steps
        #[arg(long)]
        steps: Option<usize>,
        /// Print a progress line every this many steps
        #[arg(long, default_value_t = 50)]
        every: usize,
    },
    /// Apply a random degradation to a WAV file
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        /// Degraded 16 kHz mono output
        #[arg(long)]
        out: PathBuf,
        /// Also allow the attacks reserved for testing (EQ)
        #[arg(long)]
        test: bool,
    },
    /// Fingerprint a directory of reference tracks into a database
    DbBuild {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory of reference WAV tracks
        #[arg(long)]
        refs: PathBuf,
        /// Output database
        #[arg(long)]
        out: PathBuf,
    },
    /// Add one track to an existing database
    DbAdd {
        #[command(flatten)]
        model: ModelArgs,
        /// Database to extend in place
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Track name (defaults to the file stem)
        #[arg(long)]
        name: Option<String>,
    },
    /// Identify a WAV clip against a database
    Identify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        db: PathBuf,
        /// Query clip
        #[arg(long)]
        wav: PathBuf,
        /// Number of ranked candidates to print
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Hit rate of degraded random clips against a reference directory
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory of reference WAV tracks; queries are cut from them
        #[arg(long)]
        refs: PathBuf,
        /// Number of queries
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Query with undistorted clips
        #[arg(long)]
        no_degrade: bool,
        /// Shell command for the external codec attack, with `{in}` and
        /// `{out}` standing for WAV paths
        #[arg(long)]
        codec: Option<String>,
        /// Print tab-separated records instead of the summary
        #[arg(long)]
        machine: bool,
    },
    /// Compare analytic gradients with finite differences
    Gradcheck,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Encoder checkpoint
    #[arg(long, required_unless_present = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialised encoder seeded by --seed instead
    #[arg(long, conflicts_with = "checkpoint")]
    random_init: bool,
}

impl ModelArgs {
    fn load(&self, seed: u64) -> Result<ParamSet<f32>> {
        match &self.checkpoint {
            Some(p) => Ok(formats::load_checkpoint(p)?),
            None => Ok(ParamSet::init(&EncoderConfig::default(), seed)?),
        }
    }
}

fn threads(cli: &Cli) -> usize {
    cli.threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn metrics_tsv(metrics: &[StepMetrics]) -> String {
    let mut s = String::from("step\tlr\tloss\tpos_sim\tqueue_fill\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{}\t{:.8}\t{:.6}\t{:.6}\t{}",
            m.step, m.lr, m.loss, m.pos_sim, m.queue_fill
        );
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |mut f| {
        f.write_all(text.as_bytes())
            .map_err(|e| contrafp::Error::io(path, e))
    })?;
    Ok(())
}

fn train(
    cli: &Cli,
    corpus_dir: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    steps: Option<usize>,
    every: usize,
) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = steps {
        config.hyper.total_steps = s;
    }
    let dir = corpus_dir
        .map(Path::to_path_buf)
        .or(config.corpus.clone())
        .context("no corpus: pass --corpus or set `corpus` in the config file")?;
    let tracks: Vec<_> = corpus::load_dir(&dir)?
        .into_iter()
        .map(|(_, a)| a)
        .collect();
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    eprintln!(
        "training on {} tracks from {} for {} steps (seed {seed})",
        tracks.len(),
        dir.display(),
        config.hyper.total_steps
    );
    let every = every.max(1);
    let outcome = moco::train(
        &tracks,
        &EncoderConfig::default(),
        &config.hyper,
        seed,
        |m| {
            if m.step % every == 0 || m.step + 1 == config.hyper.total_steps {
                eprintln!(
                    "step {:>5}  lr {:.5}  loss {:.4}  pos_sim {:.4}",
                    m.step, m.lr, m.loss, m.pos_sim
                );
            }
        },
    )?;
    formats::save_checkpoint(out, &outcome.state.theta_q)?;
    if let Some(log) = log {
        if let Err(e) = write_text(log, &metrics_tsv(&outcome.metrics)) {
            let _ = std::fs::remove_file(out);
            return Err(e);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Synth { n, duration, out } => {
            let files = corpus::write_synthetic(out, *n, *duration, seed)?;
            println!("wrote {} tracks to {}", files.len(), out.display());
        }
        Cmd::Train {
            corpus,
            out,
            log,
            steps,
            every,
        } => {
            train(cli, corpus.as_deref(), out, log.as_deref(), *steps, *every)?;
        }
        Cmd::Degrade { input, out, test } => {
            let a = contrafp_core::audio::to_mono_16k(&wav::read_wav(input)?);
            let policy = if *test {
                DegradationPolicy::test()
            } else {
                DegradationPolicy::train()
            };
            let spec = degrade::sample_spec_with(seed, &policy);
            let d = degrade::apply(&a, &spec, contrafp_core::rng::mix(seed, 1));
            wav::write_wav(out, &d)?;
            println!("{spec}");
        }
        Cmd::DbBuild { model, refs, out } => {
            let extractor = Extractor::new(model.load(seed)?);
            let tracks = corpus::load_dir(refs)?;
            let db = eval::build_db(&extractor, &tracks, threads(cli))?;
            formats::save_db(out, &db)?;
            println!(
                "{} tracks, {} sub-fingerprints",
                db.tracks().len(),
                db.num_rows()
            );
        }
        Cmd::DbAdd {
            model,
            db: db_path,
            wav: wav_path,
            name,
        } => {
            let extractor = Extractor::new(model.load(seed)?);
            let mut db = formats::load_db(db_path)?;
            let name = match name {
                Some(n) => n.clone(),
                None => wav_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            let fp = extractor.extract(&wav::read_wav(wav_path)?, &name)?;
            let id = db.add_track(&fp, &name)?;
            formats::save_db(db_path, &db)?;
            println!("added {name} as track {id}");
        }
        Cmd::Identify {
            model,
            db,
            wav: wav_path,
            top,
        } => {
            let extractor = Extractor::new(model.load(seed)?);
            let db = formats::load_db(db)?;
            let fp = extractor.extract(&wav::read_wav(wav_path)?, "query")?;
            println!("rank\ttrack_id\tname\tvotes\ttotal_similarity");
            for (rank, r) in db.identify(&fp)?.iter().take(*top).enumerate() {
                let name = db.track(r.track_id).map_or("?", |t| t.name.as_str());
                println!(
                    "{}\t{}\t{name}\t{}\t{:.6}",
                    rank + 1,
                    r.track_id,
                    r.votes,
                    r.total_similarity
                );
            }
        }
        Cmd::Eval {
            model,
            refs,
            queries,
            no_degrade,
            codec,
            machine,
        } => {
            let extractor = Extractor::new(model.load(seed)?);
            let tracks = corpus::load_dir(refs)?;
            let db = eval::build_db(&extractor, &tracks, threads(cli))?;
            let attack = codec.as_ref().map(CommandAttack::new).transpose()?;
            let mut policy = if *no_degrade {
                DegradationPolicy::disabled()
            } else {
                DegradationPolicy::test()
            };
            policy.include_external = attack.is_some() && !*no_degrade;
            let opts = EvalOptions {
                n_queries: *queries,
                seed,
                policy,
                threads: threads(cli),
            };
            let report = eval::evaluate(
                &extractor,
                &db,
                &tracks,
                &opts,
                attack.as_ref().map(|a| a as &(dyn ExternalAttack + Sync)),
            )?;
            if *machine {
                for line in report.machine_lines() {
                    println!("{line}");
                }
            } else {
                print!("{report}");
            }
        }
        Cmd::Gradcheck => {
            let report = gradcheck::run(seed)?;
            print!("{report}");
            if !report.passed() {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
