//! Overlap-add baselines.
//!
//! The unmodified (possibly non-causal) graph is applied offline to fixed-size
//! chunks; chunk outputs are windowed and summed at a fixed hop. This removes
//! hard discontinuities at chunk edges but never reproduces the offline output
//! exactly, and every sample goes through the network `1 / (1 - overlap)`
//! times.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{receptive_field, GraphError, GraphIR, Rate};
use crate::stream::{offline_run_with, StreamError};
use crate::tensor::{hann, SignalTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlaError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("chunk of {chunk} samples is below the graph granularity {ratio}")]
    ChunkTooSmall { chunk: usize, ratio: u64 },
    #[error("invalid overlap-add config: {0}")]
    InvalidConfig(String),
    #[error("overlap-add needs an output rate equal to the input rate, got {0}")]
    UnsupportedRate(Rate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overlap {
    None,
    Quarter,
    Half,
}

impl Overlap {
    pub const ALL: [Overlap; 3] = [Overlap::None, Overlap::Quarter, Overlap::Half];

    pub fn ratio(self) -> f64 {
        match self {
            Overlap::None => 0.0,
            Overlap::Quarter => 0.25,
            Overlap::Half => 0.5,
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Overlap::None => 0,
            Overlap::Quarter => 25,
            Overlap::Half => 50,
        }
    }

    pub fn from_percent(p: u32) -> Option<Self> {
        match p {
            0 => Some(Overlap::None),
            25 => Some(Overlap::Quarter),
            50 => Some(Overlap::Half),
            _ => None,
        }
    }
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.percent())
    }
}

impl FromStr for Overlap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim_end_matches('%')
            .parse::<u32>()
            .ok()
            .and_then(Overlap::from_percent)
            .ok_or_else(|| format!("overlap must be 0, 25 or 50, got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OlaConfig {
    pub chunk: usize,
    pub overlap: Overlap,
}

impl OlaConfig {
    pub fn new(chunk: usize, overlap: Overlap) -> Self {
        Self { chunk, overlap }
    }

    /// Distance between chunk starts: `chunk * (1 - overlap)`.
    pub fn hop(&self) -> usize {
        match self.overlap {
            Overlap::None => self.chunk,
            Overlap::Quarter => self.chunk / 4 * 3,
            Overlap::Half => self.chunk / 2,
        }
    }

    pub fn window(&self) -> Vec<f64> {
        match self.overlap {
            Overlap::None => vec![1.0; self.chunk],
            Overlap::Quarter => flat_top_window(self.chunk),
            Overlap::Half => hann_window(self.chunk),
        }
    }

    /// Checks the config against a graph's buffer quantum `ratio`.
    pub fn check(&self, ratio: u64) -> Result<(), OlaError> {
        if (self.chunk as u64) < ratio || self.chunk == 0 {
            return Err(OlaError::ChunkTooSmall {
                chunk: self.chunk,
                ratio,
            });
        }
        let quantum = match self.overlap {
            Overlap::None => 1,
            Overlap::Quarter => 4,
            Overlap::Half => 2,
        };
        if !self.chunk.is_multiple_of(quantum) {
            return Err(OlaError::InvalidConfig(format!(
                "{}% overlap needs a chunk size divisible by {quantum}, got {}",
                self.overlap, self.chunk
            )));
        }
        if !(self.chunk as u64).is_multiple_of(ratio) || !(self.hop() as u64).is_multiple_of(ratio) {
            return Err(OlaError::InvalidConfig(format!(
                "chunk {} and hop {} must be multiples of the compression ratio {ratio}",
                self.chunk,
                self.hop()
            )));
        }
        Ok(())
    }

    /// Number of chunks processed for a signal of `len` samples, counting the
    /// leading chunks that straddle the start of the signal.
    pub fn chunk_count(&self, len: usize) -> usize {
        let hop = self.hop();
        (len + self.chunk - hop).div_ceil(hop)
    }

    /// Worst-case wait before an output sample is final: one full chunk.
    pub fn latency(&self) -> usize {
        self.chunk
    }
}

/// `w[n] = sin(pi n / N)^2`; shifted copies at hop `N/2` sum to one.
pub fn hann_window(n: usize) -> Vec<f64> {
    hann(n)
}

/// Flat-top window for 25% overlap: a rising half-Hann over the first `N/4`
/// samples, ones in the middle, a falling half-Hann over the last `N/4`.
/// Shifted copies at hop `3N/4` sum to one.
pub fn flat_top_window(n: usize) -> Vec<f64> {
    let q = n / 4;
    (0..n)
        .map(|i| {
            if i < q {
                (PI * i as f64 / (2 * q) as f64).sin().powi(2)
            } else if i >= n - q {
                (PI * (i - (n - q)) as f64 / (2 * q) as f64).cos().powi(2)
            } else {
                1.0
            }
        })
        .collect()
}

/// Network passes per output sample.
pub fn redundancy_factor(cfg: &OlaConfig) -> f64 {
    1.0 / (1.0 - cfg.overlap.ratio())
}

/// True when chunks are shorter than the graph's receptive field, i.e. the
/// model never sees its full context.
pub fn chunk_below_receptive_field(g: &GraphIR, chunk: usize) -> Result<bool, OlaError> {
    Ok((chunk as u64) < receptive_field(g)?.span())
}

/// Chunked overlap-add evaluation of `g` over `x`.
///
/// Chunk `i` covers `[i*hop - (N - hop), i*hop + hop)`; parts outside the
/// signal read as zeros, so every output sample is covered by a complete set
/// of overlapping windows and any signal length works. The result is trimmed
/// to `x.len()`.
pub fn ola_process(g: &GraphIR, x: &SignalTensor, cfg: &OlaConfig) -> Result<SignalTensor, OlaError> {
    let topo = g.analyze()?;
    if topo.rates.sink_rate() != Rate::from_integer(1) {
        return Err(OlaError::UnsupportedRate(topo.rates.sink_rate()));
    }
    cfg.check(topo.rates.compression_ratio())?;
    let (n, hop) = (cfg.chunk, cfg.hop());
    if x.channels() != 1 {
        return Err(StreamError::NotMono(x.channels()).into());
    }
    let window = cfg.window();
    let samples = x.channel(0);
    let lead = (n - hop) as isize;
    let mut acc = vec![0.0f64; x.len()];
    let mut chunk = vec![0.0f32; n];
    for i in 0..cfg.chunk_count(x.len()) {
        let start = (i * hop) as isize - lead;
        for (j, v) in chunk.iter_mut().enumerate() {
            let t = start + j as isize;
            *v = if t >= 0 && (t as usize) < samples.len() {
                samples[t as usize]
            } else {
                0.0
            };
        }
        let y = offline_run_with(g, &topo, &SignalTensor::mono(chunk.clone()))?;
        for (j, (v, w)) in y.data().iter().zip(&window).enumerate() {
            let t = start + j as isize;
            if t >= 0 && (t as usize) < acc.len() {
                acc[t as usize] += *v as f64 * w;
            }
        }
    }
    Ok(SignalTensor::mono(acc.into_iter().map(|v| v as f32).collect())
        .with_sample_rate(x.sample_rate()))
}
