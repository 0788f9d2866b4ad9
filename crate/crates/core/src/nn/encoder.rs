use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::*;
use super::{EncoderConfig, ParamSet, Real, Tensor};
use crate::features::MelSpectrogram;
use crate::{Error, Result};

/// Intermediate values of one sample needed by the reverse pass.
#[derive(Debug, Clone)]
struct SampleRecord<T> {
    input: Vec<T>,
    pooled: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    gap: Vec<T>,
    hidden: Vec<T>,
    embedding: Vec<T>,
    norm: f64,
}

const STD_FLOOR: f64 = 1e-3;

fn check_input(config: &EncoderConfig, x: &[MelSpectrogram]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    for (i, s) in x.iter().enumerate() {
        if s.n_mels != config.n_mels
            || s.n_frames != config.n_frames
            || s.values.len() != s.n_mels * s.n_frames
        {
            return Err(Error::Config(format!(
                "batch item {i} is {}x{}, encoder expects {}x{}",
                s.n_mels, s.n_frames, config.n_mels, config.n_frames
            )));
        }
        if let Some(j) = s.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "batch item {i} has a non-finite value at {j}"
            )));
        }
    }
    Ok(())
}

/// Shift and scale applied to one spectrogram: the encoder sees every input
/// as `(x - mean) / std`. Log-Mel levels shift with gain and with the
/// additive attacks, and without BN the raw offset of about -10 makes every
/// random-init embedding nearly the same direction.
///
/// A spectrogram with no spread (digital silence sits exactly at the log
/// floor) passes through unchanged. Centering it would give an all-zero
/// input, which a zero-bias encoder maps to a zero embedding.
fn standardization(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let sd = num_traits::Float::sqrt(var);
    if sd < STD_FLOOR {
        (0.0, 1.0)
    } else {
        (mean, sd)
    }
}

fn forward_sample<T: Real>(
    p: &ParamSet<T>,
    x: &MelSpectrogram,
    row: usize,
    cols: &mut Vec<T>,
) -> Result<SampleRecord<T>> {
    let cfg = p.config();
    let (mu, sd) = standardization(&x.values);
    let input: Vec<T> = x
        .values
        .iter()
        .map(|&v| T::from_f64_lossy((v as f64 - mu) / sd))
        .collect();
    let (mut h, mut w, mut cin) = (cfg.n_mels, cfg.n_frames, 1);
    let mut pooled: Vec<Vec<T>> = Vec::with_capacity(cfg.conv_channels.len());
    let mut argmax = Vec::with_capacity(cfg.conv_channels.len());
    for (l, &cout) in cfg.conv_channels.iter().enumerate() {
        let src = if l == 0 { &input } else { &pooled[l - 1] };
        let mut act = conv3x3_forward(
            src,
            cin,
            h,
            w,
            p.tensor(2 * l).data(),
            p.tensor(2 * l + 1).data(),
            cout,
            cols,
        );
        relu_forward(&mut act);
        let (out, arg) = maxpool2x2_forward(&act, cout, h, w);
        pooled.push(out);
        argmax.push(arg);
        h /= 2;
        w /= 2;
        cin = cout;
    }
    let head = 2 * cfg.conv_channels.len();
    let gap = gap_forward(pooled.last().expect("at least one conv layer"), cin, h * w);
    let mut hidden = linear_forward(&gap, p.tensor(head).data(), p.tensor(head + 1).data());
    relu_forward(&mut hidden);
    let z = linear_forward(
        &hidden,
        p.tensor(head + 2).data(),
        p.tensor(head + 3).data(),
    );
    let (embedding, norm) = l2_normalize_forward(&z, row)?;
    Ok(SampleRecord {
        input,
        pooled,
        argmax,
        gap,
        hidden,
        embedding,
        norm,
    })
}

/// Embeds a batch of spectrograms into unit-norm rows (`batch x embed_dim`)
/// without recording anything. Parameters are not modified.
pub fn forward<T: Real>(p: &ParamSet<T>, x: &[MelSpectrogram]) -> Result<Tensor<T>> {
    check_input(p.config(), x)?;
    let dim = p.config().embed_dim;
    let mut out = Vec::with_capacity(x.len() * dim);
    let mut cols = Vec::new();
    for (i, s) in x.iter().enumerate() {
        out.extend(forward_sample(p, s, i, &mut cols)?.embedding);
    }
    Tensor::from_vec(&[x.len(), dim], out)
}

/// Records a forward pass so that [`Tape::backward`] can differentiate it.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    recorded: Option<(super::EncoderConfig, Vec<SampleRecord<T>>)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self { recorded: None }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded.is_some()
    }

    pub fn clear(&mut self) {
        self.recorded = None;
    }

    /// Same result as [`forward`], keeping what the reverse pass needs.
    pub fn forward(&mut self, p: &ParamSet<T>, x: &[MelSpectrogram]) -> Result<Tensor<T>> {
        self.recorded = None;
        check_input(p.config(), x)?;
        let dim = p.config().embed_dim;
        let mut cols = Vec::new();
        let records = x
            .iter()
            .enumerate()
            .map(|(i, s)| forward_sample(p, s, i, &mut cols))
            .collect::<Result<Vec<_>>>()?;
        let out = records
            .iter()
            .flat_map(|r| r.embedding.iter().copied())
            .collect();
        self.recorded = Some((p.config().clone(), records));
        Tensor::from_vec(&[x.len(), dim], out)
    }

    /// Which piece of the piecewise-linear network the recorded pass ran
    /// through: every pooling winner and every ReLU on/off state that the
    /// gradient depends on. Two passes with equal patterns are related by a
    /// smooth map.
    pub fn pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        if let Some((_, records)) = &self.recorded {
            for r in records {
                for (arg, pooled) in r.argmax.iter().zip(&r.pooled) {
                    out.extend(
                        arg.iter()
                            .zip(pooled)
                            .map(|(&a, &v)| if v > T::zero() { a + 1 } else { 0 }),
                    );
                }
                out.extend(r.hidden.iter().map(|&v| u32::from(v > T::zero())));
            }
        }
        out
    }

    /// Gradients of `sum(upstream * embeddings)` with respect to every
    /// parameter, for the recorded batch and the parameters it was run with.
    pub fn backward(&self, p: &ParamSet<T>, upstream: &Tensor<T>) -> Result<ParamSet<T>> {
        let (cfg, records) = self.recorded.as_ref().ok_or_else(|| {
            Error::State("backward called without a recorded forward pass".into())
        })?;
        if cfg != p.config() {
            return Err(Error::Config(
                "parameters do not match the recorded forward pass".into(),
            ));
        }
        let dim = cfg.embed_dim;
        if upstream.shape() != [records.len(), dim] {
            return Err(Error::Size(format!(
                "upstream gradient has shape {:?}, expected [{}, {dim}]",
                upstream.shape(),
                records.len()
            )));
        }
        let mut grads = p.zeros_like();
        let mut cols = Vec::new();
        let mut scratch = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            backward_sample(p, rec, upstream.row(i), &mut grads, &mut cols, &mut scratch);
        }
        Ok(grads)
    }
}

fn backward_sample<T: Real>(
    p: &ParamSet<T>,
    rec: &SampleRecord<T>,
    upstream: &[T],
    grads: &mut ParamSet<T>,
    cols: &mut Vec<T>,
    scratch: &mut Vec<T>,
) {
    let cfg = p.config().clone();
    let n_conv = cfg.conv_channels.len();
    let head = 2 * n_conv;

    let dz = l2_normalize_backward(&rec.embedding, rec.norm, upstream);
    let mut dhidden = vec![T::zero(); rec.hidden.len()];
    {
        let (gw, gb) = split_pair(grads, head + 2);
        linear_backward(
            &rec.hidden,
            p.tensor(head + 2).data(),
            &dz,
            gw,
            gb,
            Some(&mut dhidden),
        );
    }
    relu_backward(&rec.hidden, &mut dhidden);
    let mut dgap = vec![T::zero(); rec.gap.len()];
    {
        let (gw, gb) = split_pair(grads, head);
        linear_backward(
            &rec.gap,
            p.tensor(head).data(),
            &dhidden,
            gw,
            gb,
            Some(&mut dgap),
        );
    }

    // spatial size at the input of each conv layer
    let mut dims = Vec::with_capacity(n_conv);
    let (mut h, mut w) = (cfg.n_mels, cfg.n_frames);
    for _ in 0..n_conv {
        dims.push((h, w));
        h /= 2;
        w /= 2;
    }
    let mut dpooled = vec![T::zero(); rec.pooled[n_conv - 1].len()];
    gap_backward(&dgap, h * w, &mut dpooled);

    for l in (0..n_conv).rev() {
        let (h, w) = dims[l];
        let cout = cfg.conv_channels[l];
        let cin = if l == 0 { 1 } else { cfg.conv_channels[l - 1] };
        // pool and ReLU: the ReLU output at the winning position is the
        // pooled value itself
        let mut dact = vec![T::zero(); cout * h * w];
        for ((&j, &g), &v) in rec.argmax[l].iter().zip(&dpooled).zip(&rec.pooled[l]) {
            if v > T::zero() {
                dact[j as usize] = dact[j as usize] + g;
            }
        }
        let src = if l == 0 {
            &rec.input
        } else {
            &rec.pooled[l - 1]
        };
        im2col3x3(src, cin, h, w, cols);
        let mut dinput = if l > 0 {
            vec![T::zero(); cin * h * w]
        } else {
            Vec::new()
        };
        let (gw, gb) = split_pair(grads, 2 * l);
        conv3x3_backward(
            cols,
            cin,
            h,
            w,
            p.tensor(2 * l).data(),
            cout,
            &dact,
            gw,
            gb,
            if l > 0 { Some(&mut dinput) } else { None },
            scratch,
        );
        dpooled = dinput;
    }
}

/// Mutable weight and bias gradients of the layer whose weight is tensor `i`.
fn split_pair<T: Real>(grads: &mut ParamSet<T>, i: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.tensors.split_at_mut(i + 1);
    (a[i].data_mut(), b[0].data_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrogram(cfg: &EncoderConfig, seed: u32) -> MelSpectrogram {
        let values = (0..cfg.n_mels * cfg.n_frames)
            .map(|i| (i as f32 * 0.731 + seed as f32 * 1.37).sin() * 3.0)
            .collect();
        MelSpectrogram {
            n_mels: cfg.n_mels,
            n_frames: cfg.n_frames,
            values,
        }
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            conv_channels: vec![4, 6],
            embed_dim: 8,
            n_mels: 8,
            n_frames: 12,
        }
    }

    #[test]
    fn input_level_and_gain_do_not_matter() {
        // a log-domain gain is an offset, a change of log base a scale
        let cfg = small();
        let p = ParamSet::<f64>::init(&cfg, 3).unwrap();
        let x = spectrogram(&cfg, 2);
        let mut y = x.clone();
        for v in &mut y.values {
            *v = *v * 2.0 - 7.5;
        }
        let e = forward(&p, &[x, y]).unwrap();
        for (a, b) in e.row(0).iter().zip(e.row(1)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn silence_still_embeds_at_init() {
        let cfg = small();
        let p = ParamSet::<f32>::init(&cfg, 1).unwrap();
        let floor = MelSpectrogram {
            n_mels: cfg.n_mels,
            n_frames: cfg.n_frames,
            values: vec![-23.02585; cfg.n_mels * cfg.n_frames],
        };
        let e = forward(&p, &[floor]).unwrap();
        let n: f32 = e.row(0).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rows_are_unit_norm_and_pure() {
        let cfg = small();
        let p = ParamSet::<f32>::init(&cfg, 1).unwrap();
        let before = p.clone();
        let x = [
            spectrogram(&cfg, 0),
            spectrogram(&cfg, 1),
            spectrogram(&cfg, 0),
        ];
        let e = forward(&p, &x).unwrap();
        for i in 0..3 {
            let n: f64 = e
                .row(i)
                .iter()
                .map(|v| (*v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert_eq!(e.row(0), e.row(2));
        assert_eq!(p, before);
    }

    #[test]
    fn dead_head_is_an_error() {
        let cfg = small();
        let mut p = ParamSet::<f32>::init(&cfg, 1).unwrap();
        let fc1 = 2 * cfg.conv_channels.len() + 2;
        p.tensor_mut(fc1).data_mut().fill(0.0);
        let err = forward(&p, &[spectrogram(&cfg, 0)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateNorm { row: 0, .. }));
    }

    #[test]
    fn wrong_shape_is_config_error() {
        let cfg = small();
        let p = ParamSet::<f32>::init(&cfg, 1).unwrap();
        let other = EncoderConfig {
            n_frames: 10,
            ..cfg
        };
        assert!(matches!(
            forward(&p, &[spectrogram(&other, 0)]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_needs_forward() {
        let cfg = small();
        let p = ParamSet::<f64>::init(&cfg, 1).unwrap();
        let tape = Tape::new();
        let g = Tensor::zeros(&[1, cfg.embed_dim]);
        assert!(matches!(tape.backward(&p, &g), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let cfg = small();
        let p = ParamSet::<f64>::init(&cfg, 2).unwrap();
        let mut tape = Tape::new();
        tape.forward(&p, &[spectrogram(&cfg, 3)]).unwrap();
        let g = tape
            .backward(&p, &Tensor::zeros(&[1, cfg.embed_dim]))
            .unwrap();
        assert_eq!(g.max_abs_diff(&p.zeros_like()), 0.0);
    }
}
