//! Fidelity metrics and deterministic cost accounting.

use thiserror::Error;

use crate::graph::{GraphError, GraphIR};
use crate::tensor::{SignalTensor, StftAnalyzer};

/// STFT sizes used by [`spectral_distance`]; each uses a hop of `n_fft / 4`.
pub const SPECTRAL_SCALES: [usize; 3] = [256, 512, 1024];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("signals differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation undefined for a zero-energy signal")]
    ZeroEnergy,
    #[error("expected a mono signal, got {0} channels")]
    NotMono(usize),
}

fn mono_pair<'a>(x: &'a SignalTensor, y: &'a SignalTensor) -> Result<(&'a [f32], &'a [f32]), MetricsError> {
    for s in [x, y] {
        if s.channels() != 1 {
            return Err(MetricsError::NotMono(s.channels()));
        }
    }
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok((x.channel(0), y.channel(0)))
}

/// Multi-scale log-magnitude distance: for each scale, the Frobenius norm of
/// `log(|X| + 1) - log(|Y| + 1)` divided by the frame count, summed over
/// [`SPECTRAL_SCALES`].
pub fn spectral_distance(x: &SignalTensor, y: &SignalTensor) -> Result<f64, MetricsError> {
    let (a, b) = mono_pair(x, y)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for n_fft in SPECTRAL_SCALES {
        let stft = StftAnalyzer::new(n_fft).expect("scales are powers of two");
        let (sa, sb) = (stft.magnitudes(a, n_fft / 4), stft.magnitudes(b, n_fft / 4));
        let sq: f64 = sa
            .data
            .iter()
            .zip(&sb.data)
            .map(|(p, q)| {
                let d = (p + 1.0).ln() - (q + 1.0).ln();
                d * d
            })
            .sum();
        total += sq.sqrt() / sa.frames as f64;
    }
    Ok(total)
}

pub fn euclidean_distance(x: &SignalTensor, y: &SignalTensor) -> Result<f64, MetricsError> {
    let (a, b) = mono_pair(x, y)?;
    Ok(a.iter()
        .zip(b)
        .map(|(p, q)| {
            let d = *p as f64 - *q as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

fn correlate(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (p, q) in a.iter().zip(b) {
        let (p, q) = (*p as f64, *q as f64);
        xy += p * q;
        xx += p * p;
        yy += q * q;
    }
    (xx > 0.0 && yy > 0.0).then(|| (xy / (xx * yy).sqrt()).clamp(-1.0, 1.0))
}

/// Normalized correlation `sum(xy) / sqrt(sum(x^2) sum(y^2))`.
pub fn correlation(x: &SignalTensor, y: &SignalTensor) -> Result<f64, MetricsError> {
    let (a, b) = mono_pair(x, y)?;
    correlate(a, b).ok_or(MetricsError::ZeroEnergy)
}

/// Lag in `[0, max_lag]` maximizing the correlation of `reference[..T-lag]`
/// with `test[lag..]`. Lags whose overlap has no energy are skipped; ties go
/// to the smaller lag.
pub fn best_lag(reference: &SignalTensor, test: &SignalTensor, max_lag: usize) -> Result<usize, MetricsError> {
    let (a, b) = mono_pair(reference, test)?;
    let t = a.len();
    let mut best: Option<(usize, f64)> = None;
    for lag in 0..=max_lag.min(t.saturating_sub(1)) {
        if let Some(c) = correlate(&a[..t - lag], &b[lag..]) {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((lag, c));
            }
        }
    }
    best.map(|(lag, _)| lag).ok_or(MetricsError::ZeroEnergy)
}

/// Delays `x` by `samples`, keeping its length.
pub fn shift(x: &SignalTensor, samples: usize) -> SignalTensor {
    let n = x.len();
    let mut out = vec![0.0f32; n];
    if samples < n {
        out[samples..].copy_from_slice(&x.channel(0)[..n - samples]);
    }
    SignalTensor::mono(out).with_sample_rate(x.sample_rate())
}

/// Drops the first `lag` samples of `test` and the last `lag` of `reference`
/// so the pair lines up.
pub fn compensate(reference: &SignalTensor, test: &SignalTensor, lag: usize) -> (SignalTensor, SignalTensor) {
    let t = reference.len().min(test.len());
    let lag = lag.min(t);
    (reference.slice_time(0, t - lag), test.slice_time(lag, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityScores {
    pub spectral: f64,
    pub euclidean: f64,
    pub correlation: f64,
}

impl FidelityScores {
    pub fn compute(x: &SignalTensor, y: &SignalTensor) -> Result<Self, MetricsError> {
        Ok(Self {
            spectral: spectral_distance(x, y)?,
            euclidean: euclidean_distance(x, y)?,
            correlation: correlation(x, y)?,
        })
    }
}

/// Exact multiply-accumulate count for one offline pass over
/// `input_samples`: sum over convolutions of `out_len * N * M * K`.
pub fn mac_count(g: &GraphIR, input_samples: usize) -> Result<u64, GraphError> {
    let topo = g.analyze()?;
    let mut total = 0u64;
    for (id, c) in g.conv_nodes() {
        let e = topo.outputs[id][0];
        // round up so partial buffers are never under-counted
        let out_len = (topo.rates.edge(e) * input_samples as u64).ceil().to_integer();
        let k = &c.kernel;
        total += out_len * (k.out_channels() * k.in_channels() * k.taps()) as u64;
    }
    Ok(total)
}
