//! Benchmark harness comparing streaming, overlap-add and offline execution.
//!
//! Deterministic columns (MAC rate, state bytes, latency) are exact; the
//! real-time factor is wall-clock and machine dependent.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::causal::{causalize, CausalizeError};
use crate::graph::{GraphError, GraphIR};
use crate::metrics::mac_count;
use crate::ola::{ola_process, OlaConfig, OlaError, Overlap};
use crate::stream::{expected_state_bytes, offline_run, StreamError, StreamState};
use crate::tensor::SignalTensor;

pub const MIN_TRIALS: usize = 10;

pub const CSV_HEADER: &str = "method,buffer,macs_per_sec,rtf_mean,rtf_std,state_bytes,latency_samples";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Causalize(#[from] CausalizeError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Ola(#[from] OlaError),
    #[error("at least {MIN_TRIALS} trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("duration of {samples} samples is not a multiple of buffer size {buffer}")]
    DurationNotMultiple { samples: usize, buffer: usize },
    #[error("buffer size must be positive")]
    EmptyBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Stream,
    Ola(Overlap),
    Offline,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Stream,
        Method::Ola(Overlap::None),
        Method::Ola(Overlap::Quarter),
        Method::Ola(Overlap::Half),
        Method::Offline,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Stream => f.write_str("stream"),
            Method::Ola(o) => write!(f, "ola{o}"),
            Method::Offline => f.write_str("offline"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stream" => Ok(Method::Stream),
            "offline" => Ok(Method::Offline),
            _ => s
                .strip_prefix("ola")
                .and_then(|p| p.parse::<Overlap>().ok())
                .map(Method::Ola)
                .ok_or_else(|| {
                    format!("unknown method {s:?}; expected stream, ola0, ola25, ola50 or offline")
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub buffer_sizes: Vec<usize>,
    pub duration_s: f64,
    pub trials: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            buffer_sizes: vec![2048],
            duration_s: 1.0,
            trials: MIN_TRIALS,
            sample_rate: 44_100,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn total_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Smallest duration not below `duration_s` that holds a whole number of
    /// every buffer size.
    pub fn whole_buffer_duration(&self) -> f64 {
        let quantum = self
            .buffer_sizes
            .iter()
            .filter(|&&b| b > 0)
            .fold(1usize, |acc, &b| acc.lcm(&b));
        let total = self.total_samples().max(1).div_ceil(quantum) * quantum;
        total as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    /// Buffer size for streaming, chunk size for overlap-add, whole signal
    /// for offline.
    pub buffer: usize,
    /// Steady-state multiply-accumulates per second of output.
    pub macs_per_sec: f64,
    pub rtf_mean: f64,
    pub rtf_std: f64,
    pub state_bytes: usize,
    pub latency_samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub sample_rate: u32,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: Method, buffer: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.buffer == buffer)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method, r.buffer, r.macs_per_sec, r.rtf_mean, r.rtf_std, r.state_bytes, r.latency_samples
            )
            .unwrap();
        }
        out
    }

    /// One `method,buffer,metric,value` line per measurement.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("method,buffer,metric,value\n");
        for r in &self.rows {
            let metrics: [(&str, f64); 5] = [
                ("macs_per_sec", r.macs_per_sec),
                ("rtf_mean", r.rtf_mean),
                ("rtf_std", r.rtf_std),
                ("state_bytes", r.state_bytes as f64),
                ("latency_samples", r.latency_samples as f64),
            ];
            for (name, v) in metrics {
                writeln!(out, "{},{},{name},{v}", r.method, r.buffer).unwrap();
            }
        }
        out
    }
}

pub fn white_noise(seed: u64, n: usize) -> SignalTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SignalTensor::mono((0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn time_trials<F>(trials: usize, duration_s: f64, mut run: F) -> Result<(f64, f64), BenchError>
where
    F: FnMut() -> Result<(), BenchError>,
{
    let mut rtf = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = Instant::now();
        run()?;
        rtf.push(t0.elapsed().as_secs_f64() / duration_s);
    }
    Ok(mean_std(&rtf))
}

/// Runs every requested method on seeded white noise.
///
/// Streaming runs the causalized graph (a no-op for causal graphs);
/// overlap-add and offline run `g` unchanged. Streaming latency is the
/// causal delay plus one buffer; overlap-add latency is one chunk.
pub fn bench(g: &GraphIR, cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.trials < MIN_TRIALS {
        return Err(BenchError::TooFewTrials(cfg.trials));
    }
    let total = cfg.total_samples();
    for &b in &cfg.buffer_sizes {
        if b == 0 {
            return Err(BenchError::EmptyBuffer);
        }
        if !total.is_multiple_of(b) {
            return Err(BenchError::DurationNotMultiple {
                samples: total,
                buffer: b,
            });
        }
    }
    let sr = cfg.sample_rate as f64;
    let x = white_noise(cfg.seed, total).with_sample_rate(Some(cfg.sample_rate));
    let causal = causalize(g)?;
    let stream_graph = &causal.graph;
    let causal_delay = causal.report.total_samples();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        match method {
            Method::Stream => {
                let state_bytes = expected_state_bytes(stream_graph)?;
                for &b in &cfg.buffer_sizes {
                    let mut state = StreamState::new(stream_graph)?;
                    let buffers: Vec<SignalTensor> =
                        (0..total / b).map(|i| x.slice_time(i * b, (i + 1) * b)).collect();
                    let (rtf_mean, rtf_std) = time_trials(cfg.trials, cfg.duration_s, || {
                        state.reset();
                        for buf in &buffers {
                            state.process_buffer(stream_graph, buf)?;
                        }
                        Ok(())
                    })?;
                    rows.push(BenchRow {
                        method,
                        buffer: b,
                        macs_per_sec: mac_count(stream_graph, b)? as f64 * sr / b as f64,
                        rtf_mean,
                        rtf_std,
                        state_bytes,
                        latency_samples: causal_delay + b as u64,
                    });
                }
            }
            Method::Ola(overlap) => {
                for &n in &cfg.buffer_sizes {
                    let ola = OlaConfig::new(n, overlap);
                    let hop = ola.hop();
                    let (rtf_mean, rtf_std) = time_trials(cfg.trials, cfg.duration_s, || {
                        ola_process(g, &x, &ola)?;
                        Ok(())
                    })?;
                    rows.push(BenchRow {
                        method,
                        buffer: n,
                        macs_per_sec: mac_count(g, n)? as f64 * sr / hop as f64,
                        rtf_mean,
                        rtf_std,
                        state_bytes: 2 * (n - hop) * std::mem::size_of::<f32>(),
                        latency_samples: ola.latency() as u64,
                    });
                }
            }
            Method::Offline => {
                let (rtf_mean, rtf_std) = time_trials(cfg.trials, cfg.duration_s, || {
                    offline_run(g, &x)?;
                    Ok(())
                })?;
                rows.push(BenchRow {
                    method,
                    buffer: total,
                    macs_per_sec: mac_count(g, total)? as f64 * sr / total as f64,
                    rtf_mean,
                    rtf_std,
                    state_bytes: 0,
                    latency_samples: total as u64,
                });
            }
        }
    }
    Ok(BenchReport {
        sample_rate: cfg.sample_rate,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_synthetic_rave, PaddingMode, SynthConfig};

    fn model(padding: PaddingMode) -> GraphIR {
        make_synthetic_rave(&SynthConfig {
            padding,
            base_channels: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn cfg(duration_s: f64) -> BenchConfig {
        BenchConfig {
            buffer_sizes: vec![128, 256],
            duration_s,
            sample_rate: 1024,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>(), Ok(m));
        }
        assert!("ola10".parse::<Method>().is_err());
    }

    #[test]
    fn redundancy_shows_in_mac_rate() {
        let report = bench(&model(PaddingMode::Centered), &cfg(1.0)).unwrap();
        for b in [128, 256] {
            let s = report.row(Method::Stream, b).unwrap().macs_per_sec;
            let half = report.row(Method::Ola(Overlap::Half), b).unwrap().macs_per_sec;
            let quarter = report.row(Method::Ola(Overlap::Quarter), b).unwrap().macs_per_sec;
            let none = report.row(Method::Ola(Overlap::None), b).unwrap().macs_per_sec;
            assert!((half / s - 2.0).abs() < 1e-9);
            assert!((quarter / s - 4.0 / 3.0).abs() < 1e-9);
            assert_eq!(none, s);
        }
    }

    #[test]
    fn deterministic_columns_ignore_duration() {
        let g = model(PaddingMode::Causal);
        let short = bench(&g, &cfg(1.0)).unwrap();
        let long = bench(&g, &cfg(4.0)).unwrap();
        for (a, b) in short.rows.iter().zip(&long.rows) {
            if a.method == Method::Offline {
                continue;
            }
            assert_eq!(
                (a.macs_per_sec, a.state_bytes, a.latency_samples),
                (b.macs_per_sec, b.state_bytes, b.latency_samples)
            );
        }
        assert_eq!(
            short.row(Method::Stream, 128).unwrap().state_bytes,
            expected_state_bytes(&g).unwrap()
        );
    }

    #[test]
    fn csv_layout() {
        let report = bench(&model(PaddingMode::Causal), &cfg(0.5)).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), report.rows.len());
        let long = report.to_long_csv();
        assert_eq!(long.lines().count(), 1 + 5 * report.rows.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("stream,128,"));
    }

    #[test]
    fn duration_rounds_to_whole_buffers() {
        let c = BenchConfig {
            buffer_sizes: vec![2048, 3072],
            duration_s: 1.0,
            sample_rate: 44_100,
            ..BenchConfig::default()
        };
        let d = c.whole_buffer_duration();
        let total = (d * 44_100.0).round() as usize;
        assert_eq!(total, 6144 * 8);
        assert_eq!(cfg(1.0).whole_buffer_duration(), 1.0);
    }

    #[test]
    fn argument_errors() {
        let g = model(PaddingMode::Causal);
        let mut c = cfg(1.0);
        c.trials = 3;
        assert_eq!(bench(&g, &c), Err(BenchError::TooFewTrials(3)));
        let mut c = cfg(1.0);
        c.buffer_sizes = vec![1000];
        assert_eq!(
            bench(&g, &c),
            Err(BenchError::DurationNotMultiple {
                samples: 1024,
                buffer: 1000
            })
        );
    }
}
