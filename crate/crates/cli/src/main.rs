//! `streamconv` command-line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on model or data errors.

use std::fmt;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use streamconv_core::metrics::compensate;
use streamconv_core::{
    bench, best_lag, causalize, correlation, euclidean_distance, latency_of,
    load_model, make_synthetic_rave, offline_run, ola_process, read_wav, save_model,
    spectral_distance, write_wav, BenchConfig, Method, Model, OlaConfig, Overlap, PaddingMode,
    SignalTensor, StreamState, SynthConfig,
};

const SEED_ENV: &str = "STREAMCONV_SEED";

#[derive(Debug, Parser)]
#[command(name = "streamconv", version, about = "Streaming inference for 1-D convolutional audio models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded encoder/decoder model with random weights.
    SynthModel {
        #[arg(long, value_delimiter = ',', default_value = "4,4,2")]
        strides: Vec<NonZeroUsize>,
        #[arg(long, default_value_t = NonZeroUsize::new(8).unwrap())]
        channels: NonZeroUsize,
        #[arg(long, default_value_t = NonZeroUsize::new(3).unwrap())]
        kernel: NonZeroUsize,
        #[arg(long, default_value_t = 1)]
        residual_blocks: usize,
        #[arg(long, value_enum, default_value_t = Padding::Centered)]
        padding: Padding,
        /// Overridden by STREAMCONV_SEED when set.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 44_100)]
        sample_rate: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rewrite a model so it never reads future samples.
    Causalize {
        model: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Print the latency introduced by the rewrite.
        #[arg(long)]
        report: bool,
    },
    /// Print the input-to-output latency of a causal model.
    Latency { model: PathBuf },
    /// Process a mono WAV file.
    Run {
        #[arg(long, value_enum, default_value_t = Mode::Offline)]
        mode: Mode,
        /// Buffer size for --mode stream (defaults to the compression ratio).
        #[arg(long)]
        buffer: Option<NonZeroUsize>,
        /// Overlap percentage for --mode ola: 0, 25 or 50.
        #[arg(long, default_value = "50")]
        overlap: Overlap,
        /// Chunk size for --mode ola.
        #[arg(long, default_value_t = NonZeroUsize::new(2048).unwrap())]
        chunk: NonZeroUsize,
        model: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Fidelity scores between two mono WAV files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Largest lag searched when estimating the delay of b against a.
        #[arg(long, default_value_t = 0)]
        max_lag: usize,
        /// Align b to a by the estimated lag before scoring.
        #[arg(long)]
        compensate: bool,
    },
    /// Benchmark streaming, overlap-add and offline execution on white noise.
    Bench {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2048")]
        buffer_sizes: Vec<NonZeroUsize>,
        #[arg(long, default_value_t = 1.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "stream,ola0,ola25,ola50")]
        methods: Vec<Method>,
        /// Overridden by STREAMCONV_SEED when set.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the report as method,buffer,metric,value rows.
        #[arg(long)]
        long_output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Padding {
    Centered,
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Offline,
    Stream,
    Ola,
}

/// A problem with the command line rather than with the data.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn load(path: &Path) -> Result<Model> {
    load_model(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn save(model: &Model, path: &Path) -> Result<()> {
    save_model(model, path).with_context(|| format!("cannot write model {}", path.display()))
}

fn read(path: &Path) -> Result<SignalTensor> {
    read_wav(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, x: &SignalTensor) -> Result<()> {
    write_wav(path, x).with_context(|| format!("cannot write {}", path.display()))
}

fn print_latency(model: &Model, samples: streamconv_core::Rate) {
    println!("latency_samples: {samples}");
    if let Some(sr) = model.sample_rate {
        let ms = *samples.numer() as f64 / *samples.denom() as f64 * 1000.0 / sr as f64;
        println!("latency_ms: {ms:.3}");
    }
}

fn run_stream(model: &Model, x: &SignalTensor, buffer: Option<NonZeroUsize>, path: &Path) -> Result<SignalTensor> {
    let g = &model.graph;
    let mut state = StreamState::new(g).with_context(|| {
        format!(
            "{} cannot be streamed; run `streamconv causalize` on it first",
            path.display()
        )
    })?;
    let r = state.ratio() as usize;
    let b = buffer.map_or(r, NonZeroUsize::get);
    if !b.is_multiple_of(r) {
        return Err(usage(format!(
            "--buffer {b} must be a multiple of the model's compression ratio {r}"
        )));
    }
    if !x.len().is_multiple_of(b) {
        bail!(
            "input has {} samples, leaving a trailing partial buffer of {} (--buffer {b}); pad or trim the input",
            x.len(),
            x.len() % b
        );
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() / b {
        let y = state.process_buffer(g, &x.slice_time(i * b, (i + 1) * b))?;
        out.extend_from_slice(y.data());
    }
    Ok(SignalTensor::mono(out))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthModel {
            strides,
            channels,
            kernel,
            residual_blocks,
            padding,
            seed: flag_seed,
            sample_rate,
            output,
        } => {
            let cfg = SynthConfig {
                strides: strides.into_iter().map(NonZeroUsize::get).collect(),
                base_channels: channels.get(),
                kernel_size: kernel.get(),
                residual_blocks,
                padding: match padding {
                    Padding::Centered => PaddingMode::Centered,
                    Padding::Causal => PaddingMode::Causal,
                },
                seed: seed(flag_seed)?,
            };
            let g = make_synthetic_rave(&cfg).map_err(|e| usage(e.to_string()))?;
            save(&Model::new(g, Some(sample_rate)), &output)?;
        }
        Command::Causalize {
            model,
            output,
            report,
        } => {
            let m = load(&model)?;
            let c = causalize(&m.graph).with_context(|| format!("cannot causalize {}", model.display()))?;
            let out = Model::new(c.graph, m.sample_rate);
            save(&out, &output)?;
            if report {
                print_latency(&out, c.report.total_latency);
                println!("inserted_delays: {}", c.report.inserted.len());
            }
        }
        Command::Latency { model } => {
            let m = load(&model)?;
            let lat = latency_of(&m.graph).with_context(|| {
                format!("{} is not causal; run `streamconv causalize` first", model.display())
            })?;
            print_latency(&m, lat);
        }
        Command::Run {
            mode,
            buffer,
            overlap,
            chunk,
            model,
            input,
            output,
        } => {
            if buffer.is_some() && mode != Mode::Stream {
                return Err(usage("--buffer only applies to --mode stream"));
            }
            let m = load(&model)?;
            let x = read(&input)?;
            let sr = x.sample_rate();
            let y = match mode {
                Mode::Offline => offline_run(&m.graph, &x)
                    .with_context(|| format!("cannot run {} on {}", model.display(), input.display()))?,
                Mode::Stream => run_stream(&m, &x, buffer, &model)
                    .with_context(|| format!("cannot stream {} through {}", input.display(), model.display()))?,
                Mode::Ola => ola_process(&m.graph, &x, &OlaConfig::new(chunk.get(), overlap))
                    .with_context(|| format!("overlap-add of {} failed", input.display()))?,
            };
            write(&output, &y.with_sample_rate(sr))?;
        }
        Command::Compare {
            a,
            b,
            max_lag,
            compensate: align,
        } => {
            let (x, y) = (read(&a)?, read(&b)?);
            if x.len() != y.len() {
                bail!(
                    "{} has {} samples but {} has {}",
                    a.display(),
                    x.len(),
                    b.display(),
                    y.len()
                );
            }
            let lag = best_lag(&x, &y, max_lag).context("cannot estimate the lag")?;
            let (x, y) = if align { compensate(&x, &y, lag) } else { (x, y) };
            println!("L_s: {}", spectral_distance(&x, &y)?);
            println!("L_w: {}", euclidean_distance(&x, &y)?);
            println!(
                "L_c: {}",
                correlation(&x, &y).context("correlation needs two signals with energy")?
            );
            println!("lag: {lag}");
        }
        Command::Bench {
            model,
            buffer_sizes,
            duration_s,
            trials,
            methods,
            seed: flag_seed,
            output,
            long_output,
        } => {
            if !duration_s.is_finite() || duration_s <= 0.0 {
                return Err(usage(format!("--duration-s must be positive, got {duration_s}")));
            }
            let m = load(&model)?;
            let mut cfg = BenchConfig {
                methods,
                buffer_sizes: buffer_sizes.into_iter().map(NonZeroUsize::get).collect(),
                duration_s,
                trials,
                sample_rate: m.sample_rate.unwrap_or(44_100),
                seed: seed(flag_seed)?,
            };
            let whole = cfg.whole_buffer_duration();
            if whole != duration_s {
                eprintln!("note: --duration-s {duration_s} rounded to {whole} s to hold whole buffers");
                cfg.duration_s = whole;
            }
            let report = bench(&m.graph, &cfg).with_context(|| format!("benchmark of {} failed", model.display()))?;
            fs::write(&output, report.to_csv()).with_context(|| format!("cannot write {}", output.display()))?;
            if let Some(path) = long_output {
                fs::write(&path, report.to_long_csv()).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Usage>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
