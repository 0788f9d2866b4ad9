//! Training configuration files: one `key = value` per line, `#` starts a
//! comment. Unknown keys are rejected so that typos do not silently fall
//! back to defaults.
//!
//! ```text
//! # desk-scale run
//! corpus = data/corpus
//! steps = 1000
//! tau = 0.07
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use contrafp_core::moco::Hyper;

use crate::error::{Error, Result};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "CONTRAFP_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: Hyper,
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: Hyper::default(),
            seed: None,
            corpus: None,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        msg: format!("cannot parse {key} = {v:?}"),
    })
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config {
                    line,
                    msg: format!("expected key = value, got {body:?}"),
                })?;
            let h = &mut c.hyper;
            match key {
                "tau" => h.tau = parse(line, key, value)?,
                "m" => h.key_momentum = parse(line, key, value)?,
                "batch" => h.batch = parse(line, key, value)?,
                "queue_k" => h.queue_k = parse(line, key, value)?,
                "steps" => h.total_steps = parse(line, key, value)?,
                "lr0" => h.lr0 = parse(line, key, value)?,
                "sgd_momentum" => h.sgd_momentum = parse(line, key, value)?,
                "weight_decay" => h.weight_decay = parse(line, key, value)?,
                "degrade_probability" => h.degrade_probability = parse(line, key, value)?,
                "seed" => c.seed = Some(parse(line, key, value)?),
                "corpus" => c.corpus = Some(PathBuf::from(value)),
                _ => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        c.hyper.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text)?;
        // a relative corpus path is relative to the config file
        if let (Some(corpus), Some(dir)) = (&c.corpus, path.parent()) {
            if corpus.is_relative() {
                c.corpus = Some(dir.join(corpus));
            }
        }
        Ok(c)
    }
}
