//! Dense 1-D tensors and the numeric kernels everything else is built on.
//!
//! Storage is channel-major: all samples of channel 0, then channel 1, and so
//! on. Convolution never pads implicitly; callers apply [`pad_zeros`] first.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor data has {actual} samples, expected {channels} x {length}")]
    ShapeMismatch {
        channels: usize,
        length: usize,
        actual: usize,
    },
    #[error("tensor must have at least one channel")]
    NoChannels,
    #[error("kernel expects {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("input of length {length} is shorter than the kernel span {span}")]
    InputTooShort { length: usize, span: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("stride and dilation must be at least 1")]
    InvalidStep,
    #[error("expected a mono tensor, got {0} channels")]
    NotMono(usize),
    #[error("FFT size {0} is not a power of two")]
    FftSizeNotPowerOfTwo(usize),
}

/// Multichannel block of samples (`channels x length`).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTensor {
    channels: usize,
    length: usize,
    data: Vec<f32>,
    sample_rate: Option<u32>,
}

impl SignalTensor {
    pub fn new(channels: usize, length: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if channels == 0 {
            return Err(TensorError::NoChannels);
        }
        if data.len() != channels * length {
            return Err(TensorError::ShapeMismatch {
                channels,
                length,
                actual: data.len(),
            });
        }
        Ok(Self {
            channels,
            length,
            data,
            sample_rate: None,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        assert!(channels > 0, "tensor must have at least one channel");
        Self {
            channels,
            length,
            data: vec![0.0; channels * length],
            sample_rate: None,
        }
    }

    pub fn mono(samples: Vec<f32>) -> Self {
        Self {
            channels: 1,
            length: samples.len(),
            data: samples,
            sample_rate: None,
        }
    }

    pub fn with_sample_rate(mut self, sample_rate: Option<u32>) -> Self {
        self.sample_rate = sample_rate;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.sample_rate
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.data[c * self.length..(c + 1) * self.length]
    }

    /// Copy of samples `[start, end)` on every channel.
    pub fn slice_time(&self, start: usize, end: usize) -> SignalTensor {
        assert!(start <= end && end <= self.length, "time slice out of range");
        let mut data = Vec::with_capacity(self.channels * (end - start));
        for c in 0..self.channels {
            data.extend_from_slice(&self.channel(c)[start..end]);
        }
        SignalTensor {
            channels: self.channels,
            length: end - start,
            data,
            sample_rate: self.sample_rate,
        }
    }

    /// Concatenates along time. Channel counts must agree.
    pub fn concat_time(&self, other: &SignalTensor) -> Result<SignalTensor, TensorError> {
        if self.channels != other.channels {
            return Err(TensorError::ChannelMismatch {
                expected: self.channels,
                actual: other.channels,
            });
        }
        let length = self.length + other.length;
        let mut data = Vec::with_capacity(self.channels * length);
        for c in 0..self.channels {
            data.extend_from_slice(self.channel(c));
            data.extend_from_slice(other.channel(c));
        }
        Ok(SignalTensor {
            channels: self.channels,
            length,
            data,
            sample_rate: self.sample_rate,
        })
    }

    pub fn max_abs_diff(&self, other: &SignalTensor) -> f32 {
        assert_eq!(self.channels, other.channels);
        assert_eq!(self.length, other.length);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Convolution weights `[out][in][tap]` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    out_channels: usize,
    in_channels: usize,
    taps: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Kernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        taps: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, TensorError> {
        if out_channels == 0 || in_channels == 0 || taps == 0 {
            return Err(TensorError::InvalidKernel(format!(
                "dimensions must be positive, got {out_channels}x{in_channels}x{taps}"
            )));
        }
        if weights.len() != out_channels * in_channels * taps {
            return Err(TensorError::InvalidKernel(format!(
                "{} weights for a {out_channels}x{in_channels}x{taps} kernel",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(TensorError::InvalidKernel(format!(
                "{} biases for {out_channels} output channels",
                bias.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            taps,
            weights,
            bias,
        })
    }

    /// Single-channel identity `[1]`.
    pub fn identity() -> Self {
        Self::new(1, 1, 1, vec![1.0], vec![0.0]).unwrap()
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    pub fn weight(&self, n: usize, m: usize, k: usize) -> f32 {
        self.weights[(n * self.in_channels + m) * self.taps + k]
    }

    /// Samples covered by one application of the kernel: `(K-1)*d + 1`.
    pub fn span(&self, dilation: usize) -> usize {
        (self.taps - 1) * dilation + 1
    }
}

/// Zero padding applied before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaddingSpec {
    pub left: usize,
    pub right: usize,
}

impl PaddingSpec {
    pub const fn new(left: usize, right: usize) -> Self {
        Self { left, right }
    }

    pub fn total(&self) -> usize {
        self.left + self.right
    }
}

pub fn pad_zeros(x: &SignalTensor, p: PaddingSpec) -> SignalTensor {
    let length = x.length + p.left + p.right;
    let mut data = Vec::with_capacity(x.channels * length);
    for c in 0..x.channels {
        data.resize(data.len() + p.left, 0.0);
        data.extend_from_slice(x.channel(c));
        data.resize(data.len() + p.right, 0.0);
    }
    SignalTensor {
        channels: x.channels,
        length,
        data,
        sample_rate: x.sample_rate,
    }
}

/// Output length of an unpadded strided, dilated convolution, or `None` when
/// the input is shorter than the kernel span.
pub fn conv_output_len(input_len: usize, span: usize, stride: usize) -> Option<usize> {
    (input_len >= span).then(|| (input_len - span) / stride + 1)
}

/// Direct 1-D convolution (cross-correlation) without padding.
///
/// `y[n][i] = bias[n] + sum_m sum_k w[n][m][k] * x[m][i*stride + k*dilation]`,
/// accumulated in `f64` per output sample with a fixed summation order, so
/// every output sample is bit-identical regardless of how the input was split.
pub fn conv1d(
    x: &SignalTensor,
    k: &Kernel,
    stride: usize,
    dilation: usize,
) -> Result<SignalTensor, TensorError> {
    if stride == 0 || dilation == 0 {
        return Err(TensorError::InvalidStep);
    }
    if x.channels != k.in_channels {
        return Err(TensorError::ChannelMismatch {
            expected: k.in_channels,
            actual: x.channels,
        });
    }
    let span = k.span(dilation);
    let out_len = conv_output_len(x.length, span, stride).ok_or(TensorError::InputTooShort {
        length: x.length,
        span,
    })?;

    let mut out = vec![0.0f32; k.out_channels * out_len];
    let mut acc = vec![0.0f64; out_len];
    for n in 0..k.out_channels {
        acc.fill(k.bias[n] as f64);
        for m in 0..k.in_channels {
            let xm = x.channel(m);
            for tap in 0..k.taps {
                let w = k.weight(n, m, tap) as f64;
                let offset = tap * dilation;
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += w * xm[i * stride + offset] as f64;
                }
            }
        }
        for (o, a) in out[n * out_len..(n + 1) * out_len].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(SignalTensor {
        channels: k.out_channels,
        length: out_len,
        data: out,
        sample_rate: x.sample_rate,
    })
}

/// Inserts `factor - 1` zeros after every sample.
pub fn zero_upsample(x: &SignalTensor, factor: usize) -> SignalTensor {
    assert!(factor >= 1, "upsampling factor must be at least 1");
    if factor == 1 {
        return x.clone();
    }
    let length = x.length * factor;
    let mut data = vec![0.0; x.channels * length];
    for c in 0..x.channels {
        let dst = &mut data[c * length..(c + 1) * length];
        for (i, v) in x.channel(c).iter().enumerate() {
            dst[i * factor] = *v;
        }
    }
    SignalTensor {
        channels: x.channels,
        length,
        data,
        sample_rate: x.sample_rate,
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "activation", rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    LeakyRelu { alpha: f32 },
}

impl ActivationKind {
    #[inline]
    pub fn apply_scalar(self, v: f32) -> f32 {
        match self {
            ActivationKind::Identity => v,
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::LeakyRelu { alpha } => {
                if v >= 0.0 {
                    v
                } else {
                    alpha * v
                }
            }
        }
    }
}

pub fn activation(x: &SignalTensor, kind: ActivationKind) -> SignalTensor {
    let mut y = x.clone();
    if kind != ActivationKind::Identity {
        y.data.iter_mut().for_each(|v| *v = kind.apply_scalar(*v));
    }
    y
}

/// Magnitude spectrogram, `frames x (n_fft/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hann window, `sin(pi n / N)^2`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = (PI * i as f64 / n as f64).sin();
            s * s
        })
        .collect()
}

/// Reusable magnitude-STFT analyser for one `n_fft`.
pub struct StftAnalyzer {
    n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftAnalyzer {
    pub fn new(n_fft: usize) -> Result<Self, TensorError> {
        if !n_fft.is_power_of_two() {
            return Err(TensorError::FftSizeNotPowerOfTwo(n_fft));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            n_fft,
            window: hann(n_fft),
            fft,
        })
    }

    /// Frame `t` covers `[t*hop, t*hop + n_fft)`; samples past the end read as
    /// zero. There are `ceil(len / hop)` frames.
    pub fn magnitudes(&self, samples: &[f32], hop: usize) -> Spectrogram {
        assert!(hop >= 1, "hop must be at least 1");
        let bins = self.n_fft / 2 + 1;
        let frames = samples.len().div_ceil(hop);
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = samples.get(start + i).copied().unwrap_or(0.0) as f64;
                *slot = Complex::new(v * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            data.extend(buf[..bins].iter().map(|c| c.norm()));
        }
        Spectrogram { frames, bins, data }
    }
}

pub fn stft_mag(x: &SignalTensor, n_fft: usize, hop: usize) -> Result<Spectrogram, TensorError> {
    if x.channels != 1 {
        return Err(TensorError::NotMono(x.channels));
    }
    Ok(StftAnalyzer::new(n_fft)?.magnitudes(x.channel(0), hop))
}
