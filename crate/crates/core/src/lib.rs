//! Streaming inference for 1-D convolutional audio models.
//!
//! Non-causal models trained with centered padding are rewritten into causal
//! ones ([`causal::causalize`]), then executed buffer by buffer with cached
//! padding ([`stream::StreamState`]) so that the concatenated output matches
//! offline processing exactly, up to a known latency. Overlap-add baselines,
//! fidelity metrics and a benchmark harness are included for comparison.

pub mod bench;
pub mod causal;
pub mod graph;
pub mod metrics;
pub mod model_io;
pub mod ola;
pub mod stream;
pub mod synth;
pub mod tensor;

pub use bench::{bench, BenchConfig, BenchError, BenchReport, BenchRow, Method};

pub use causal::{
    branch_alignment, causalize, delay_for_stride, latency_of, AlignmentKind, Causalized,
    CausalizeError, DelayLedger, LatencyReport,
};
pub use graph::{
    compression_ratio, receptive_field, validate, ConvNode, DelayRole, Edge, GraphError, GraphIR,
    NodeId, NodeKind, Rate, RateMap, ReceptiveField,
};
pub use metrics::{
    best_lag, correlation, euclidean_distance, mac_count, spectral_distance, FidelityScores,
    MetricsError,
};
pub use model_io::{load_model, read_wav, save_model, write_wav, Model, ModelIoError, WavError};
pub use ola::{hann_window, ola_process, redundancy_factor, OlaConfig, OlaError, Overlap};
pub use stream::{
    expected_state_bytes, init_state, offline_run, stream_run, StreamError, StreamState,
};
pub use synth::{make_synthetic_rave, PaddingMode, SynthConfig, SynthError};
pub use tensor::{
    ActivationKind, Kernel, PaddingSpec, SignalTensor, Spectrogram, TensorError,
};
