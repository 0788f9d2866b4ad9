//! Momentum-contrast training.
//!
//! Per step, each track in the batch yields two independently degraded 2.5 s
//! views. The query encoder embeds one view, the key encoder the other, and
//! each query is scored against its own key (the positive) and every key in
//! the dictionary queue (the negatives) with a temperature-scaled InfoNCE
//! loss. Only the query encoder receives gradients; the key encoder trails it
//! as an exponential moving average, and the batch's keys are enqueued,
//! evicting the oldest ones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::AudioBuffer;
use crate::degrade::{self, DegradationPolicy, MAX_SHRINK};
use crate::features::{MelFrontEnd, MelSpectrogram, SNIPPET_LEN};
use crate::nn::{self, EncoderConfig, ParamSet, Real, Tape, Tensor};
use crate::{rng, Error, Result};

pub const TAU: f64 = 0.07;
pub const KEY_MOMENTUM: f64 = 0.999;
/// Tolerance on the unit norm of embeddings handed to the loss.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Shortest track that still covers a snippet after the largest speed and
/// tempo shrink.
pub const MIN_VIEW_SOURCE: usize = (SNIPPET_LEN as f64 * MAX_SHRINK) as usize + 1;
/// Excerpt length cut from corpus tracks for each view pair; the margin keeps
/// filter and vocoder edge effects out of the snippet.
pub const EXCERPT_LEN: usize = MIN_VIEW_SOURCE + VIEW_MARGIN;
const VIEW_MARGIN: usize = 4096;

const STREAM_VIEWS: u64 = 0x71E5;
const STREAM_SHUFFLE: u64 = 0x5AFF;
const STREAM_EXCERPT: u64 = 0xE8C7;
const STREAM_WARMUP: u64 = 0x3A73;

/// FIFO dictionary of unit-norm key embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryQueue {
    dim: usize,
    capacity: usize,
    keys: Vec<f32>,
    serials: Vec<u64>,
    head: usize,
    filled: usize,
    next_serial: u64,
}

impl DictionaryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "queue needs positive capacity and dim, got {capacity} x {dim}"
            )));
        }
        Ok(Self {
            dim,
            capacity,
            keys: vec![0.0; capacity * dim],
            serials: vec![0; capacity],
            head: 0,
            filled: 0,
            next_serial: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.capacity
    }

    /// Stored rows in slot order (all slots once full).
    pub fn keys(&self) -> &[f32] {
        &self.keys[..self.filled * self.dim]
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    /// Insertion number of the row in slot `i` (0 for the first key ever).
    pub fn serial(&self, i: usize) -> u64 {
        self.serials[i]
    }

    /// Slot indices from oldest to newest.
    pub fn oldest_first(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.is_full() { self.head } else { 0 };
        (0..self.filled).map(move |i| (start + i) % self.capacity)
    }

    /// Appends `rows` (n x dim, unit norm), evicting the n oldest once full.
    pub fn enqueue(&mut self, rows: &[f32]) -> Result<()> {
        if rows.len() % self.dim != 0 {
            return Err(Error::Size(format!(
                "{} values are not whole rows of {}",
                rows.len(),
                self.dim
            )));
        }
        let n = rows.len() / self.dim;
        if n > self.capacity {
            return Err(Error::Config(format!(
                "batch of {n} keys exceeds queue capacity {}",
                self.capacity
            )));
        }
        for (i, r) in rows.chunks_exact(self.dim).enumerate() {
            let norm = r
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if !((norm - 1.0).abs() <= 1e-5) {
                return Err(Error::Numeric(format!(
                    "key {i} has norm {norm}, expected 1"
                )));
            }
        }
        for r in rows.chunks_exact(self.dim) {
            let slot = self.head;
            self.keys[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(r);
            self.serials[slot] = self.next_serial;
            self.next_serial += 1;
            self.head = (self.head + 1) % self.capacity;
            self.filled = (self.filled + 1).min(self.capacity);
        }
        Ok(())
    }
}

fn dot<A: Real, B: Real>(a: &[A], b: &[B]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

fn check_unit<T: Real>(what: &str, v: &[T]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what} has a non-finite entry at {i}"
        )));
    }
    let n = dot(v, v).sqrt();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(Error::Numeric(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

/// InfoNCE loss of one query against its positive key and `M` negatives
/// (`negatives` is M x dim, row-major), with the gradient of the loss with
/// respect to the query. Keys are constants.
///
/// `loss = -log(exp(q.k+ / tau) / (exp(q.k+ / tau) + sum exp(q.k- / tau)))`,
/// evaluated with the largest logit subtracted.
pub fn info_nce<T: Real, K: Real>(
    q: &[T],
    k_pos: &[K],
    negatives: &[K],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let dim = q.len();
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Numeric(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if k_pos.len() != dim || dim == 0 || negatives.len() % dim != 0 {
        return Err(Error::Size(format!(
            "query dim {dim}, positive dim {}, {} negative values",
            k_pos.len(),
            negatives.len()
        )));
    }
    let m = negatives.len() / dim;
    if m == 0 {
        return Err(Error::Size("need at least one negative".into()));
    }
    check_unit("query", q)?;
    check_unit("positive key", k_pos)?;
    for (j, k) in negatives.chunks_exact(dim).enumerate() {
        check_unit(&format!("negative {j}"), k)?;
    }

    let mut logits = Vec::with_capacity(m + 1);
    logits.push(dot(q, k_pos) / tau);
    logits.extend(negatives.chunks_exact(dim).map(|k| dot(q, k) / tau));
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let loss = sum.ln() - (logits[0] - max);

    // d loss / d q = (sum_j p_j k_j - k+) / tau, with p the softmax
    let mut grad: Vec<f64> = k_pos
        .iter()
        .map(|k| (weights[0] / sum - 1.0) * k.as_f64() / tau)
        .collect();
    for (k, w) in negatives.chunks_exact(dim).zip(&weights[1..]) {
        let p = w / sum / tau;
        for (g, kv) in grad.iter_mut().zip(k) {
            *g += p * kv.as_f64();
        }
    }
    Ok((loss, grad))
}

/// `theta_k = m * theta_k + (1 - m) * theta_q`, element-wise.
pub fn momentum_update<T: Real>(
    theta_k: &mut ParamSet<T>,
    theta_q: &ParamSet<T>,
    m: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!(
            "momentum must lie in [0, 1], got {m}"
        )));
    }
    theta_k.zip_apply(theta_q, |k, q| {
        T::from_f64_lossy(m * k.as_f64() + (1.0 - m) * q.as_f64())
    })
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub tau: f64,
    pub key_momentum: f64,
    pub batch: usize,
    pub queue_k: usize,
    pub lr0: f64,
    pub total_steps: usize,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// Selection probability of each degradation when building views.
    pub degrade_probability: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            tau: TAU,
            key_momentum: KEY_MOMENTUM,
            batch: 16,
            queue_k: 512,
            lr0: nn::BASE_LR,
            total_steps: 1000,
            sgd_momentum: nn::SGD_MOMENTUM,
            weight_decay: nn::WEIGHT_DECAY,
            degrade_probability: degrade::SELECTION_PROBABILITY,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            return Err(Error::Config(format!(
                "m must lie in [0, 1], got {}",
                self.key_momentum
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.queue_k < self.batch {
            return Err(Error::Config(format!(
                "queue ({}) must hold at least one batch ({})",
                self.queue_k, self.batch
            )));
        }
        if !(0.0..=1.0).contains(&self.degrade_probability) {
            return Err(Error::Config(format!(
                "degradation probability {} outside [0, 1]",
                self.degrade_probability
            )));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::Config(format!(
                "lr0 must be nonnegative, got {}",
                self.lr0
            )));
        }
        Ok(())
    }

    pub fn policy(&self) -> DegradationPolicy {
        DegradationPolicy {
            probability: self.degrade_probability,
            ..DegradationPolicy::train()
        }
    }
}

/// Per-step training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Mean cosine similarity of aligned query/key pairs.
    pub pos_sim: f64,
    pub queue_fill: usize,
}

/// Two degraded views of every track: snippets cut from the start of two
/// independently degraded copies. Entry `i` of both lists comes from track `i`.
pub fn make_views(
    tracks: &[AudioBuffer],
    seed: u64,
    policy: &DegradationPolicy,
) -> Result<(Vec<AudioBuffer>, Vec<AudioBuffer>)> {
    let mut queries = Vec::with_capacity(tracks.len());
    let mut keys = Vec::with_capacity(tracks.len());
    for (i, t) in tracks.iter().enumerate() {
        if t.len() < MIN_VIEW_SOURCE {
            return Err(Error::Input(format!(
                "track {i} has {} samples; views need at least {MIN_VIEW_SOURCE}",
                t.len()
            )));
        }
        for (side, out) in [(0u64, &mut queries), (1, &mut keys)] {
            let view_seed = rng::mix(seed, 2 * i as u64 + side);
            let spec = degrade::sample_spec_with(view_seed, policy);
            // only as much source as this spec needs to fill a snippet
            let need = (SNIPPET_LEN as f64 / spec.duration_ratio()).ceil() as usize + VIEW_MARGIN;
            let source = t.slice(0, need.min(EXCERPT_LEN));
            let mut v = degrade::apply(&source, &spec, view_seed).into_samples();
            v.resize(SNIPPET_LEN, 0.0);
            out.push(AudioBuffer::new(v, source.sample_rate())?);
        }
    }
    Ok((queries, keys))
}

/// Complete state of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub theta_q: ParamSet<f32>,
    pub theta_k: ParamSet<f32>,
    pub velocity: ParamSet<f32>,
    pub queue: DictionaryQueue,
    pub step: usize,
    pub seed: u64,
    pub hyper: Hyper,
    frontend: MelFrontEnd,
}

impl TrainState {
    /// Fresh state: seeded query encoder, key encoder copied from it, empty
    /// queue.
    pub fn new(config: &EncoderConfig, hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let theta_q = ParamSet::init(config, seed)?;
        Ok(Self {
            theta_k: theta_q.clone(),
            velocity: theta_q.zeros_like(),
            theta_q,
            queue: DictionaryQueue::new(hyper.queue_k, config.embed_dim)?,
            step: 0,
            seed,
            hyper,
            frontend: MelFrontEnd::new(),
        })
    }

    pub fn spectrograms(&self, views: &[AudioBuffer]) -> Result<Vec<MelSpectrogram>> {
        views.iter().map(|v| self.frontend.compute(v)).collect()
    }

    /// Fills the queue with key embeddings of degraded excerpts under the
    /// current key encoder, so the first step already has a full set of
    /// negatives.
    pub fn warm_up(&mut self, corpus: &[AudioBuffer]) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::Config("empty corpus".into()));
        }
        let n = self.hyper.batch;
        let mut round = 0u64;
        while !self.queue.is_full() {
            let mut rng = rng::seeded(self.seed, STREAM_WARMUP, round);
            let want = n.min(self.queue.capacity() - self.queue.len());
            let tracks: Vec<AudioBuffer> = (0..want)
                .map(|j| excerpt(&corpus[(round as usize * n + j) % corpus.len()], &mut rng))
                .collect::<Result<_>>()?;
            let (_, keys) = make_views(
                &tracks,
                rng::mix(self.seed ^ STREAM_WARMUP, round),
                &self.hyper.policy(),
            )?;
            let k = nn::forward(&self.theta_k, &self.spectrograms(&keys)?)?;
            self.queue.enqueue(k.data())?;
            round += 1;
        }
        Ok(())
    }

    /// One optimization step on a batch of (pre-cut) tracks.
    pub fn train_step(&mut self, tracks: &[AudioBuffer]) -> Result<StepMetrics> {
        let n = tracks.len();
        if n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if n > self.queue.capacity() {
            return Err(Error::Config(format!(
                "batch {n} exceeds queue capacity {}",
                self.queue.capacity()
            )));
        }
        if self.queue.is_empty() {
            return Err(Error::State(
                "dictionary queue is empty; warm it up before training".into(),
            ));
        }
        let (qv, kv) = make_views(
            tracks,
            rng::mix(self.seed ^ STREAM_VIEWS, self.step as u64),
            &self.hyper.policy(),
        )?;
        let xq = self.spectrograms(&qv)?;
        let xk = self.spectrograms(&kv)?;

        let mut tape = Tape::new();
        let q = tape.forward(&self.theta_q, &xq)?;
        let k = nn::forward(&self.theta_k, &xk)?;

        let dim = q.shape()[1];
        let mut upstream = Tensor::<f32>::zeros(&[n, dim]);
        let mut loss = 0.0;
        let mut pos_sim = 0.0;
        for i in 0..n {
            let (l, g) = info_nce(q.row(i), k.row(i), self.queue.keys(), self.hyper.tau)?;
            loss += l;
            pos_sim += dot(q.row(i), k.row(i));
            for (u, gv) in upstream.data_mut()[i * dim..(i + 1) * dim]
                .iter_mut()
                .zip(&g)
            {
                *u = (gv / n as f64) as f32;
            }
        }
        let grads = tape.backward(&self.theta_q, &upstream)?;
        // The key encoder follows the query encoder as it was when this
        // step's views were embedded, before the gradient update.
        momentum_update(&mut self.theta_k, &self.theta_q, self.hyper.key_momentum)?;
        let lr = nn::cosine_lr(self.step, self.hyper.total_steps, self.hyper.lr0);
        nn::sgd_step(
            &mut self.theta_q,
            &grads,
            &mut self.velocity,
            lr,
            self.hyper.sgd_momentum,
            self.hyper.weight_decay,
        )?;
        if !self.theta_q.all_finite() {
            return Err(Error::Numeric(format!(
                "query encoder diverged at step {}",
                self.step
            )));
        }
        self.queue.enqueue(k.data())?;

        let metrics = StepMetrics {
            step: self.step,
            lr,
            loss: loss / n as f64,
            pos_sim: pos_sim / n as f64,
            queue_fill: self.queue.len(),
        };
        self.step += 1;
        Ok(metrics)
    }
}

/// Random excerpt of [`EXCERPT_LEN`] samples (the whole track when shorter).
fn excerpt<R: Rng>(track: &AudioBuffer, rng: &mut R) -> Result<AudioBuffer> {
    if track.len() < MIN_VIEW_SOURCE {
        return Err(Error::Input(format!(
            "corpus track of {} samples is shorter than the {MIN_VIEW_SOURCE} needed",
            track.len()
        )));
    }
    let slack = track.len().saturating_sub(EXCERPT_LEN);
    let start = if slack == 0 {
        0
    } else {
        rng.gen_range(0..=slack)
    };
    Ok(track.slice(start, EXCERPT_LEN))
}

/// Draws shuffled batches of distinct tracks, reshuffling once a pass over
/// the corpus cannot fill another batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchSampler {
    pub fn new(corpus_len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..corpus_len).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = rng::seeded(self.seed, STREAM_SHUFFLE, self.epoch);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self, n: usize) -> &[usize] {
        if self.cursor + n > self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let b = &self.order[self.cursor..self.cursor + n];
        self.cursor += n;
        b
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
}

/// Full training run: warm-up, then `total_steps` steps over shuffled batches
/// of random excerpts. `observe` sees every step's metrics as it completes.
pub fn train(
    corpus: &[AudioBuffer],
    config: &EncoderConfig,
    hyper: &Hyper,
    seed: u64,
    mut observe: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    if corpus.len() < hyper.batch {
        return Err(Error::Config(format!(
            "corpus of {} tracks is smaller than the batch size {}",
            corpus.len(),
            hyper.batch
        )));
    }
    let mut state = TrainState::new(config, hyper.clone(), seed)?;
    state.warm_up(corpus)?;
    let mut sampler = BatchSampler::new(corpus.len(), seed);
    let mut metrics = Vec::with_capacity(hyper.total_steps);
    for step in 0..hyper.total_steps {
        let mut rng = rng::seeded(seed, STREAM_EXCERPT, step as u64);
        let batch: Vec<AudioBuffer> = sampler
            .next_batch(hyper.batch)
            .iter()
            .map(|&i| excerpt(&corpus[i], &mut rng))
            .collect::<Result<_>>()?;
        let m = state.train_step(&batch)?;
        observe(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { state, metrics })
}
