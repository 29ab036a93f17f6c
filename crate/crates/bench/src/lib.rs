//! Shared fixtures for the criterion benches under `benches/`.

use streamconv_core::bench::white_noise;
use streamconv_core::{causalize, make_synthetic_rave, GraphIR, SignalTensor, SynthConfig};

/// Default synthetic model and its causal rewrite.
pub fn rave_pair() -> (GraphIR, GraphIR) {
    let g = make_synthetic_rave(&SynthConfig::default()).expect("default config is valid");
    let causal = causalize(&g).expect("synthetic models are valid").graph;
    (g, causal)
}

pub fn noise(len: usize) -> SignalTensor {
    white_noise(0, len)
}
