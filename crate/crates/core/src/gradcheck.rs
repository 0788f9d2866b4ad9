//! Finite-difference verification of the analytic gradients.
//!
//! Every probe exposes a scalar function of a flat variable vector (layer
//! parameters and/or inputs). The analytic gradient is computed in the
//! requested precision and compared against a fourth-order central
//! difference evaluated in float64 at the same point. Points are rounded to
//! float32 first so both precisions see identical variables.
//!
//! ReLU and max-pool make the network piecewise smooth. A probe also reports
//! its activation pattern, and a variable whose difference stencil changes
//! the pattern is skipped in favour of another: a finite difference across a
//! kink measures the kink, not the derivative.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::MelSpectrogram;
use crate::moco::info_nce;
use crate::nn::layers::*;
use crate::nn::{EncoderConfig, ParamSet, Real, Tape, Tensor};
use crate::{rng, Error, Result};

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;
/// Variables sampled from each group (all of them when a group is smaller).
pub const PER_GROUP: usize = 20;
/// Difference step relative to the variable's magnitude.
pub const REL_STEP: f64 = 1e-3;
/// Magnitude below which the step stops shrinking.
const MIN_SCALE: f64 = 0.1;
/// Gradients are compared relative to this fraction of the largest checked
/// gradient magnitude of the probe at least, so that entries that are zero
/// up to rounding do not produce meaningless ratios.
const REL_FLOOR: f64 = 1e-4;

const STREAM_GRADCHECK: u64 = 0x62AD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => TOL_F32,
            Precision::F64 => TOL_F64,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub probe: String,
    pub precision: Precision,
    /// Variables compared, per group name.
    pub checked: Vec<(String, usize)>,
    /// Variables passed over because every stencil crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn total_checked(&self) -> usize {
        self.checked.iter().map(|(_, n)| n).sum()
    }
}

impl fmt::Display for GradCheckEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} {}  vars={:<4} skipped={:<3} max_rel_err={:.3e}  tol={:.0e}  {}",
            self.probe,
            self.precision,
            self.total_checked(),
            self.skipped,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

/// A scalar function with an analytic gradient.
trait Probe {
    fn name(&self) -> &str;
    fn point(&self) -> Vec<f64>;
    /// Named, disjoint index ranges of the variables to sample from.
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)>;
    /// float64 value and activation pattern.
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)>;
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>>;
}

/// Runs every probe in both precisions.
pub fn run(seed: u64) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    let mut go = |p: &dyn Fn(Precision) -> Result<GradCheckEntry>| -> Result<()> {
        entries.push(p(Precision::F32)?);
        entries.push(p(Precision::F64)?);
        Ok(())
    };
    let conv = ConvProbe::new(seed);
    go(&|pr| check(&conv, pr, seed))?;
    let pool = PoolProbe::new(seed);
    go(&|pr| check(&pool, pr, seed))?;
    let relu = ReluProbe::new(seed);
    go(&|pr| check(&relu, pr, seed))?;
    let gap = GapProbe::new(seed);
    go(&|pr| check(&gap, pr, seed))?;
    let fc = LinearProbe::new(seed);
    go(&|pr| check(&fc, pr, seed))?;
    let l2 = NormalizeProbe::new(seed);
    go(&|pr| check(&l2, pr, seed))?;
    let enc = EncoderProbe::new(seed, false)?;
    go(&|pr| check(&enc, pr, seed))?;
    let nce = EncoderProbe::new(seed, true)?;
    go(&|pr| check(&nce, pr, seed))?;
    Ok(GradCheckReport { entries })
}

fn check<P: Probe>(probe: &P, precision: Precision, seed: u64) -> Result<GradCheckEntry> {
    let x = probe.point();
    let analytic = match precision {
        Precision::F32 => probe.gradient(&x.iter().map(|&v| v as f32).collect::<Vec<_>>())?,
        Precision::F64 => probe.gradient(&x)?,
    };
    if analytic.len() != x.len() {
        return Err(Error::Size(format!(
            "{}: gradient has {} entries for {} variables",
            probe.name(),
            analytic.len(),
            x.len()
        )));
    }
    let (_, base_pattern) = probe.value(&x)?;
    let stream = probe
        .name()
        .bytes()
        .fold(0u64, |h, b| rng::mix(h, b as u64));
    let mut rng = rng::seeded(seed, STREAM_GRADCHECK, stream);
    let mut pairs = Vec::new();
    let mut checked = Vec::new();
    let mut skipped = 0;
    for (group, range) in probe.groups() {
        let mut order: Vec<usize> = range.collect();
        order.shuffle(&mut rng);
        let want = PER_GROUP.min(order.len());
        let mut n = 0;
        for &i in &order {
            if n == want {
                break;
            }
            match numeric(probe, &x, i, &base_pattern)? {
                Some(d) => {
                    pairs.push((analytic[i], d));
                    n += 1;
                }
                None => skipped += 1,
            }
        }
        // a group that cannot be sampled enough is a failed check, not a pass
        if n < want {
            return Err(Error::Numeric(format!(
                "{}: only {n} of {want} variables in {group} are away from kinks",
                probe.name()
            )));
        }
        checked.push((group, n));
    }
    let scale = pairs
        .iter()
        .fold(0.0f64, |m, &(a, n)| m.max(a.abs()).max(n.abs()));
    let floor = REL_FLOOR * scale;
    let max_rel_err = pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(GradCheckEntry {
        probe: probe.name().into(),
        precision,
        checked,
        skipped,
        max_rel_err,
        tolerance: precision.tolerance(),
    })
}

/// Fourth-order central difference in variable `i`. When a stencil leaves
/// the activation pattern of `x` the step is shrunk a few times; `None` if
/// it never fits between the kinks.
fn numeric<P: Probe>(probe: &P, x: &[f64], i: usize, pattern: &[u32]) -> Result<Option<f64>> {
    let mut h = REL_STEP * x[i].abs().max(MIN_SCALE);
    let mut y = x.to_vec();
    'shrink: for _ in 0..3 {
        let mut f = [0.0; 4];
        for (slot, k) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            y[i] = x[i] + k * h;
            let (v, p) = probe.value(&y)?;
            if p != pattern {
                h /= 8.0;
                continue 'shrink;
            }
            f[slot] = v;
        }
        return Ok(Some((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)));
    }
    Ok(None)
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| round32(rng.gen_range(lo..hi))).collect()
}

fn cast<T: Real>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::from_f64_lossy(v)).collect()
}

fn weighted_sum<T: Real>(y: &[T], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| a.as_f64() * b).sum()
}

/// 3x3 convolution: weights, bias and input.
struct ConvProbe {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl ConvProbe {
    fn new(seed: u64) -> Self {
        let (cin, cout, h, w) = (3, 4, 6, 7);
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 1);
        let x = uniform(&mut r, cout * cin * 9 + cout + cin * h * w, -1.0, 1.0);
        let coef = uniform(&mut r, cout * h * w, -1.0, 1.0);
        Self {
            cin,
            cout,
            h,
            w,
            x,
            coef,
        }
    }

    fn split<'a, T>(&self, x: &'a [T]) -> (&'a [T], &'a [T], &'a [T]) {
        let nw = self.cout * self.cin * 9;
        (&x[..nw], &x[nw..nw + self.cout], &x[nw + self.cout..])
    }
}

impl Probe for ConvProbe {
    fn name(&self) -> &str {
        "conv3x3"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        let nw = self.cout * self.cin * 9;
        vec![
            ("weight".into(), 0..nw),
            ("bias".into(), nw..nw + self.cout),
            ("input".into(), nw + self.cout..self.x.len()),
        ]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let (w, b, inp) = self.split(x);
        let y = conv3x3_forward(
            inp,
            self.cin,
            self.h,
            self.w,
            w,
            b,
            self.cout,
            &mut Vec::new(),
        );
        Ok((weighted_sum(&y, &self.coef), Vec::new()))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let (w, _, inp) = self.split(x);
        let mut cols = Vec::new();
        im2col3x3(inp, self.cin, self.h, self.w, &mut cols);
        let g: Vec<T> = cast(&self.coef);
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); self.cout];
        let mut gi = vec![T::zero(); inp.len()];
        conv3x3_backward(
            &cols,
            self.cin,
            self.h,
            self.w,
            w,
            self.cout,
            &g,
            &mut gw,
            &mut gb,
            Some(&mut gi),
            &mut Vec::new(),
        );
        Ok(gw
            .iter()
            .chain(&gb)
            .chain(&gi)
            .map(|v| v.as_f64())
            .collect())
    }
}

/// 2x2 max-pool on an input with well-separated values.
struct PoolProbe {
    c: usize,
    h: usize,
    w: usize,
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl PoolProbe {
    fn new(seed: u64) -> Self {
        let (c, h, w) = (2, 6, 8);
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 2);
        // a shuffled grid of values 0.05 apart keeps every window free of
        // near-ties
        let mut x: Vec<f64> = (0..c * h * w)
            .map(|i| round32(i as f64 * 0.05 - 1.0))
            .collect();
        x.shuffle(&mut r);
        let coef = uniform(&mut r, c * (h / 2) * (w / 2), -1.0, 1.0);
        Self { c, h, w, x, coef }
    }
}

impl Probe for PoolProbe {
    fn name(&self) -> &str {
        "maxpool2x2"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        vec![("input".into(), 0..self.x.len())]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let (y, arg) = maxpool2x2_forward(x, self.c, self.h, self.w);
        Ok((weighted_sum(&y, &self.coef), arg))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let (_, arg) = maxpool2x2_forward(x, self.c, self.h, self.w);
        let mut g = vec![T::zero(); x.len()];
        maxpool2x2_backward(&arg, &cast::<T>(&self.coef), &mut g);
        Ok(g.iter().map(|v| v.as_f64()).collect())
    }
}

/// ReLU on inputs kept at least 0.05 away from zero.
struct ReluProbe {
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl ReluProbe {
    fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 3);
        let x = (0..48)
            .map(|_| {
                let m = r.gen_range(0.05..1.0);
                round32(if r.gen_bool(0.5) { m } else { -m })
            })
            .collect();
        let coef = uniform(&mut r, 48, -1.0, 1.0);
        Self { x, coef }
    }
}

impl Probe for ReluProbe {
    fn name(&self) -> &str {
        "relu"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        vec![("input".into(), 0..self.x.len())]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let mut y = x.to_vec();
        relu_forward(&mut y);
        Ok((
            weighted_sum(&y, &self.coef),
            x.iter().map(|&v| u32::from(v > 0.0)).collect(),
        ))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        relu_forward(&mut y);
        let mut g: Vec<T> = cast(&self.coef);
        relu_backward(&y, &mut g);
        Ok(g.iter().map(|v| v.as_f64()).collect())
    }
}

/// Global average pooling.
struct GapProbe {
    c: usize,
    hw: usize,
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl GapProbe {
    fn new(seed: u64) -> Self {
        let (c, hw) = (4, 15);
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 4);
        let x = uniform(&mut r, c * hw, -1.0, 1.0);
        let coef = uniform(&mut r, c, -1.0, 1.0);
        Self { c, hw, x, coef }
    }
}

impl Probe for GapProbe {
    fn name(&self) -> &str {
        "global-avg-pool"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        vec![("input".into(), 0..self.x.len())]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        Ok((
            weighted_sum(&gap_forward(x, self.c, self.hw), &self.coef),
            Vec::new(),
        ))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let mut g = vec![T::zero(); x.len()];
        gap_backward(&cast::<T>(&self.coef), self.hw, &mut g);
        Ok(g.iter().map(|v| v.as_f64()).collect())
    }
}

/// Fully connected layer: weight, bias and input.
struct LinearProbe {
    n_in: usize,
    n_out: usize,
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl LinearProbe {
    fn new(seed: u64) -> Self {
        let (n_in, n_out) = (12, 10);
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 5);
        let x = uniform(&mut r, n_out * n_in + n_out + n_in, -1.0, 1.0);
        let coef = uniform(&mut r, n_out, -1.0, 1.0);
        Self {
            n_in,
            n_out,
            x,
            coef,
        }
    }
}

impl Probe for LinearProbe {
    fn name(&self) -> &str {
        "fully-connected"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        let nw = self.n_in * self.n_out;
        vec![
            ("weight".into(), 0..nw),
            ("bias".into(), nw..nw + self.n_out),
            ("input".into(), nw + self.n_out..self.x.len()),
        ]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let nw = self.n_in * self.n_out;
        let y = linear_forward(&x[nw + self.n_out..], &x[..nw], &x[nw..nw + self.n_out]);
        Ok((weighted_sum(&y, &self.coef), Vec::new()))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let nw = self.n_in * self.n_out;
        let mut gw = vec![T::zero(); nw];
        let mut gb = vec![T::zero(); self.n_out];
        let mut gx = vec![T::zero(); self.n_in];
        let g: Vec<T> = cast(&self.coef);
        linear_backward(
            &x[nw + self.n_out..],
            &x[..nw],
            &g,
            &mut gw,
            &mut gb,
            Some(&mut gx),
        );
        Ok(gw
            .iter()
            .chain(&gb)
            .chain(&gx)
            .map(|v| v.as_f64())
            .collect())
    }
}

/// L2 normalization.
struct NormalizeProbe {
    x: Vec<f64>,
    coef: Vec<f64>,
}

impl NormalizeProbe {
    fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 6);
        let x = uniform(&mut r, 32, -1.0, 1.0);
        let coef = uniform(&mut r, 32, -1.0, 1.0);
        Self { x, coef }
    }
}

impl Probe for NormalizeProbe {
    fn name(&self) -> &str {
        "l2-normalize"
    }
    fn point(&self) -> Vec<f64> {
        self.x.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        vec![("input".into(), 0..self.x.len())]
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let (e, _) = l2_normalize_forward(x, 0)?;
        Ok((weighted_sum(&e, &self.coef), Vec::new()))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let (e, norm) = l2_normalize_forward(x, 0)?;
        let g = l2_normalize_backward(&e, norm, &cast::<T>(&self.coef));
        Ok(g.iter().map(|v| v.as_f64()).collect())
    }
}

/// The whole encoder on a batch of two spectrograms, with either the sum of
/// all embedding entries or the InfoNCE loss of the first embedding as the
/// scalar. Variables are all encoder parameters.
struct EncoderProbe {
    name: &'static str,
    config: EncoderConfig,
    params: Vec<f64>,
    input: Vec<MelSpectrogram>,
    /// Positive key followed by the negatives, unit rows.
    keys: Option<Vec<f64>>,
}

/// Real channel widths and head; a reduced time-frequency plane keeps the
/// thousands of float64 passes quick.
fn probe_config() -> EncoderConfig {
    EncoderConfig {
        n_mels: 16,
        n_frames: 24,
        ..EncoderConfig::default()
    }
}

impl EncoderProbe {
    fn new(seed: u64, with_loss: bool) -> Result<Self> {
        let config = probe_config();
        let p = ParamSet::<f32>::init(&config, rng::mix(seed, 7))?;
        let mut r = rng::seeded(seed, STREAM_GRADCHECK, 8);
        // nonzero biases so that the bias gradients are exercised off the
        // zero-init point
        let mut params: Vec<f64> = (0..p.num_scalars()).map(|i| p.flat_get(i) as f64).collect();
        let mut offset = 0;
        for (name, t) in p.iter() {
            if name.ends_with(".bias") {
                for v in &mut params[offset..offset + t.len()] {
                    *v = round32(r.gen_range(-0.05..0.05));
                }
            }
            offset += t.len();
        }
        let input = (0..2)
            .map(|_| MelSpectrogram {
                n_mels: config.n_mels,
                n_frames: config.n_frames,
                values: (0..config.n_mels * config.n_frames)
                    .map(|_| r.gen_range(-4.0f32..2.0))
                    .collect(),
            })
            .collect();
        let keys = with_loss.then(|| {
            let dim = config.embed_dim;
            let mut k = Vec::with_capacity(8 * dim);
            for _ in 0..8 {
                let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                k.extend(v.iter().map(|a| a / n));
            }
            k
        });
        Ok(Self {
            name: if with_loss {
                "encoder+infonce"
            } else {
                "encoder"
            },
            config,
            params,
            input,
            keys,
        })
    }

    fn params<T: Real>(&self, x: &[T]) -> Result<ParamSet<T>> {
        let mut p = ParamSet::<T>::zeros(&self.config)?;
        for (i, &v) in x.iter().enumerate() {
            p.flat_set(i, v);
        }
        Ok(p)
    }

    /// Scalar and its gradient with respect to the embeddings.
    fn head<T: Real>(&self, e: &Tensor<T>) -> Result<(f64, Vec<f64>)> {
        match &self.keys {
            None => Ok((
                e.data().iter().map(|v| v.as_f64()).sum(),
                vec![1.0; e.len()],
            )),
            Some(k) => {
                let dim = self.config.embed_dim;
                let (loss, g) = info_nce(e.row(0), &k[..dim], &k[dim..], crate::moco::TAU)?;
                let mut up = vec![0.0; e.len()];
                up[..dim].copy_from_slice(&g);
                Ok((loss, up))
            }
        }
    }
}

impl Probe for EncoderProbe {
    fn name(&self) -> &str {
        self.name
    }
    fn point(&self) -> Vec<f64> {
        self.params.clone()
    }
    fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, shape) in self.config.layout() {
            let n: usize = shape.iter().product();
            out.push((name, offset..offset + n));
            offset += n;
        }
        out
    }
    fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
        let p = self.params(x)?;
        let mut tape = Tape::new();
        let e = tape.forward(&p, &self.input)?;
        Ok((self.head(&e)?.0, tape.pattern()))
    }
    fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
        let p = self.params(x)?;
        let mut tape = Tape::new();
        let e = tape.forward(&p, &self.input)?;
        let (_, up) = self.head(&e)?;
        let g = tape.backward(&p, &Tensor::from_vec(e.shape(), cast(&up))?)?;
        Ok((0..g.num_scalars())
            .map(|i| g.flat_get(i).as_f64())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_wrong_gradient_is_caught() {
        struct Bad;
        impl Probe for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn point(&self) -> Vec<f64> {
                vec![0.5, -0.25]
            }
            fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
                vec![("x".into(), 0..2)]
            }
            fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
                Ok((x[0] * x[0] + x[1].sin(), Vec::new()))
            }
            fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
                // off by a factor two in the first entry
                Ok(vec![x[0].as_f64(), x[1].as_f64().cos()])
            }
        }
        let e = check(&Bad, Precision::F64, 1).unwrap();
        assert!(!e.passed());
        assert!((e.max_rel_err - 0.5).abs() < 1e-6);
    }

    #[test]
    fn stencil_is_fourth_order() {
        struct Quartic;
        impl Probe for Quartic {
            fn name(&self) -> &str {
                "quartic"
            }
            fn point(&self) -> Vec<f64> {
                vec![0.7]
            }
            fn groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
                vec![("x".into(), 0..1)]
            }
            fn value(&self, x: &[f64]) -> Result<(f64, Vec<u32>)> {
                Ok((x[0].powi(4), Vec::new()))
            }
            fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<f64>> {
                Ok(vec![4.0 * x[0].as_f64().powi(3)])
            }
        }
        // the fourth-order stencil is exact on quartics up to rounding
        assert!(check(&Quartic, Precision::F64, 1).unwrap().max_rel_err < 1e-9);
    }

    #[test]
    fn every_probe_passes() {
        let r = run(11).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.entries.len(), 16);
    }
}
