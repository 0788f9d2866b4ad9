//! Dense tensors, the convolutional encoder with its reverse pass, and the
//! SGD optimizer.
//!
//! The encoder is `[3x3 conv, ReLU, 2x2 max-pool]` per configured channel
//! count, then global average pooling, `FC -> ReLU -> FC` to 256 units and
//! L2 normalization. Everything is generic over [`Real`] so the same code
//! runs in `f32` for training and in `f64` for gradient checking.

mod encoder;
pub mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::{rng, Error, Result};

pub use encoder::{forward, Tape};

/// Floating-point element type of tensors.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` on strided matrices (`a` is m x k,
    /// `b` is k x n). Callers pass strides in elements.
    ///
    /// # Safety
    /// Every addressed element must lie inside the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view: (buffer, row stride, column stride).
pub(crate) type MatRef<'a, T> = (&'a [T], usize, usize);

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// Bounds-checked `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(
        k == 0 || last_index(m, k, a.1, a.2) < a.0.len(),
        "gemm: lhs out of bounds"
    );
    assert!(
        k == 0 || last_index(k, n, b.1, b.2) < b.0.len(),
        "gemm: rhs out of bounds"
    );
    assert!(
        last_index(m, n, rsc, csc) < c.len(),
        "gemm: output out of bounds"
    );
    // SAFETY: all accessed offsets were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Size(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}

/// Encoder architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    pub embed_dim: usize,
    pub n_mels: usize,
    pub n_frames: usize,
}

pub const EMBED_DIM: usize = 256;

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64],
            embed_dim: EMBED_DIM,
            n_mels: crate::features::N_MELS,
            n_frames: crate::features::SNIPPET_FRAMES,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config(format!(
                "conv channels must be nonempty and positive: {:?}",
                self.conv_channels
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let (h, w) = self.feature_map();
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "{}x{} input vanishes after {} pooling stages",
                self.n_mels,
                self.n_frames,
                self.conv_channels.len()
            )));
        }
        Ok(())
    }

    /// Spatial size after all pooling stages.
    pub fn feature_map(&self) -> (usize, usize) {
        self.conv_channels
            .iter()
            .fold((self.n_mels, self.n_frames), |(h, w), _| (h / 2, w / 2))
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &c) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![c, cin, 3, 3]));
            out.push((format!("conv{i}.bias"), vec![c]));
            cin = c;
        }
        out.push(("fc0.weight".into(), vec![self.embed_dim, cin]));
        out.push(("fc0.bias".into(), vec![self.embed_dim]));
        out.push(("fc1.weight".into(), vec![self.embed_dim, self.embed_dim]));
        out.push(("fc1.bias".into(), vec![self.embed_dim]));
        out
    }
}

/// Named encoder parameters laid out by an [`EncoderConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    config: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (names, tensors) = config
            .layout()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .unzip();
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if t.shape.len() < 2 {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = rng::seeded(seed, 0x1417, i as u64);
            for v in &mut t.data {
                *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    /// Builds a set from named tensors, checking them against `config`.
    pub fn from_tensors(config: &EncoderConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        for ((name, shape), (n, t)) in layout.iter().zip(&named) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "tensor {n} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub(crate) fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    #[cfg(test)]
    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Tensor name and offset of flat scalar index `i`.
    pub fn locate(&self, mut i: usize) -> Option<(usize, usize)> {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if i < tensor.len() {
                return Some((t, i));
            }
            i -= tensor.len();
        }
        None
    }

    pub fn name(&self, tensor: usize) -> &str {
        &self.names[tensor]
    }

    pub fn flat_get(&self, i: usize) -> T {
        let (t, j) = self.locate(i).expect("flat index out of range");
        self.tensors[t].data[j]
    }

    pub fn flat_set(&mut self, i: usize, v: T) {
        let (t, j) = self.locate(i).expect("flat index out of range");
        self.tensors[t].data[j] = v;
    }

    pub fn check_compatible<U>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Config(format!(
                "encoder configs differ: {:?} vs {:?}",
                self.config, other.config
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Element-wise `self = f(self, other)`.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = f(*x, y);
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .fold(0.0, |m, (x, y)| m.max((x.as_f64() - y.as_f64()).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub const SGD_MOMENTUM: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 1e-4;
pub const BASE_LR: f64 = 0.03;

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + grad + weight_decay * p`, then `p -= lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    velocity: &mut ParamSet<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    params.check_compatible(grads)?;
    params.check_compatible(velocity)?;
    let (lr, mu, wd) = (
        T::from_f64_lossy(lr),
        T::from_f64_lossy(momentum),
        T::from_f64_lossy(weight_decay),
    );
    for ((p, g), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut velocity.tensors)
    {
        for ((p, &g), v) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
            *v = mu * *v + g + wd * *p;
            *p = *p - lr * *v;
        }
    }
    Ok(())
}

/// Half-cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * lr0 * (1.0 + (core::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet<f64> {
        let cfg = EncoderConfig {
            conv_channels: vec![1],
            embed_dim: 1,
            n_mels: 2,
            n_frames: 2,
        };
        let mut p = ParamSet::zeros(&cfg).unwrap();
        for i in 0..p.num_scalars() {
            p.flat_set(i, v);
        }
        p
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let mut p = scalar_set(1.0);
        let g = scalar_set(1.0);
        let mut v = scalar_set(0.0);
        sgd_step(&mut p, &g, &mut v, 0.03, 0.9, 1e-4).unwrap();
        assert!((v.flat_get(0) - 1.0001).abs() < 1e-15);
        assert!((p.flat_get(0) - 0.969997).abs() < 1e-15);
        let (v1, p1) = (v.flat_get(0), p.flat_get(0));
        sgd_step(&mut p, &g, &mut v, 0.03, 0.9, 1e-4).unwrap();
        assert_eq!(v.flat_get(0), 0.9 * v1 + 1.0 + 1e-4 * p1);
    }

    #[test]
    fn sgd_noop_without_gradient() {
        let mut p = scalar_set(0.7);
        let before = p.clone();
        let g = scalar_set(0.0);
        let mut v = scalar_set(0.0);
        sgd_step(&mut p, &g, &mut v, 0.03, 0.9, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_rejects_mismatch() {
        let mut p = scalar_set(0.0);
        let other = ParamSet::<f64>::zeros(&EncoderConfig::default()).unwrap();
        let mut v = scalar_set(0.0);
        assert!(matches!(
            sgd_step(&mut p, &other, &mut v, 0.1, 0.9, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 1000, 0.03), 0.03);
        assert!(cosine_lr(1000, 1000, 0.03).abs() < 1e-18);
        assert!((cosine_lr(500, 1000, 0.03) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = EncoderConfig::default();
        let a = ParamSet::<f32>::init(&cfg, 3).unwrap();
        assert_eq!(a, ParamSet::init(&cfg, 3).unwrap());
        assert_ne!(a, ParamSet::init(&cfg, 4).unwrap());
        assert!(a
            .get("conv0.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&b| b == 0.0));
        let w = a.get("conv1.weight").unwrap();
        let bound = (6.0f32 / (16.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn layout_matches_default_shapes() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.feature_map(), (16, 25));
        let names: Vec<_> = cfg.layout().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 10);
        assert_eq!(cfg.layout()[6].1, vec![256, 64]);
        assert!(EncoderConfig {
            conv_channels: vec![],
            ..cfg.clone()
        }
        .validate()
        .is_err());
    }
}
