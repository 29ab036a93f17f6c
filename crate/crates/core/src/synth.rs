//! Deterministic model generators.
//!
//! [`make_synthetic_rave`] builds an encoder/decoder network shaped like a
//! RAVE-style autoencoder (strided encoder, upsampling residual decoder) with
//! seeded random weights. [`random_graph`] produces varied valid graphs for
//! property testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{ConvNode, DelayRole, GraphIR, NodeId, NodeKind, Rate};
use crate::tensor::{ActivationKind, Kernel, PaddingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaddingMode {
    #[default]
    Centered,
    Causal,
}

impl PaddingMode {
    /// Padding for a kernel covering `span` samples.
    pub fn padding(self, span: usize) -> PaddingSpec {
        let total = span - 1;
        match self {
            PaddingMode::Centered => PaddingSpec::new(total.div_ceil(2), total / 2),
            PaddingMode::Causal => PaddingSpec::new(total, 0),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid synthetic model config: {0}")]
pub struct SynthError(String);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Encoder strides; their product is the compression ratio.
    pub strides: Vec<usize>,
    pub base_channels: usize,
    /// Kernel size of the latent, residual and output convolutions. Strided
    /// and upsampling layers use `2 * stride + 1` taps.
    pub kernel_size: usize,
    pub residual_blocks: usize,
    pub padding: PaddingMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            strides: vec![4, 4, 2],
            base_channels: 8,
            kernel_size: 3,
            residual_blocks: 1,
            padding: PaddingMode::Centered,
            seed: 0,
        }
    }
}

struct Builder {
    g: GraphIR,
    rng: ChaCha8Rng,
    padding: PaddingMode,
}

impl Builder {
    fn kernel(&mut self, out: usize, inp: usize, taps: usize) -> Kernel {
        let fan_in = (inp * taps) as f32;
        let w_lim = (3.0 / fan_in).sqrt();
        let b_lim = 1.0 / fan_in;
        let weights = (0..out * inp * taps)
            .map(|_| self.rng.random_range(-w_lim..=w_lim))
            .collect();
        let bias = (0..out).map(|_| self.rng.random_range(-b_lim..=b_lim)).collect();
        Kernel::new(out, inp, taps, weights, bias).expect("dimensions are positive")
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        from: NodeId,
        out: usize,
        inp: usize,
        taps: usize,
        stride: usize,
        dilation: usize,
    ) -> NodeId {
        let kernel = self.kernel(out, inp, taps);
        let padding = self.padding.padding(kernel.span(dilation));
        self.g
            .then(from, NodeKind::Conv(ConvNode::new(kernel, stride, dilation, padding)))
    }
}

/// Encoder/decoder network with residual decoder blocks.
///
/// ```text
/// source -> [conv(stride s_i) -> tanh]*  -> latent conv
///        -> [upsample(s) -> conv -> tanh -> residual*]* -> conv -> tanh -> sink
/// residual: fanout -> (conv(dilated) -> leaky_relu -> conv 1x1, identity) -> sum
/// ```
pub fn make_synthetic_rave(cfg: &SynthConfig) -> Result<GraphIR, SynthError> {
    if cfg.strides.is_empty() || cfg.strides.contains(&0) {
        return Err(SynthError(format!(
            "strides must be non-empty and positive, got {:?}",
            cfg.strides
        )));
    }
    if cfg.base_channels == 0 || cfg.kernel_size == 0 {
        return Err(SynthError(
            "base_channels and kernel_size must be positive".into(),
        ));
    }
    let mut b = Builder {
        g: GraphIR::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        padding: cfg.padding,
    };
    let stage_taps = |s: usize| if s > 1 { 2 * s + 1 } else { cfg.kernel_size };
    let enc_channels: Vec<usize> = (0..cfg.strides.len())
        .map(|i| cfg.base_channels << i.min(4))
        .collect();

    let mut prev = b.g.add_node(NodeKind::Source);
    let mut ch = 1;
    for (&s, &out) in cfg.strides.iter().zip(&enc_channels) {
        prev = b.conv(prev, out, ch, stage_taps(s), s, 1);
        prev = b.g.then(prev, NodeKind::Activation(ActivationKind::Tanh));
        ch = out;
    }
    prev = b.conv(prev, ch, ch, cfg.kernel_size, 1, 1);

    let n = cfg.strides.len();
    for (j, &s) in cfg.strides.iter().rev().enumerate() {
        let out = if j + 1 < n {
            enc_channels[n - 2 - j]
        } else {
            cfg.base_channels
        };
        if s > 1 {
            prev = b.g.then(prev, NodeKind::ZeroUpsample { factor: s });
        }
        prev = b.conv(prev, out, ch, stage_taps(s), 1, 1);
        prev = b.g.then(prev, NodeKind::Activation(ActivationKind::Tanh));
        ch = out;
        for r in 0..cfg.residual_blocks {
            let fan = b.g.then(prev, NodeKind::Fanout { arity: 2 });
            let body = b.conv(fan, ch, ch, cfg.kernel_size, 1, 3usize.pow(r as u32 % 4));
            let body = b
                .g
                .then(body, NodeKind::Activation(ActivationKind::LeakyRelu { alpha: 0.2 }));
            let body = b.conv(body, ch, ch, 1, 1, 1);
            let sum = b.g.add_node(NodeKind::Sum { arity: 2 });
            b.g.connect(body, sum, 0);
            b.g.connect(fan, sum, 1);
            prev = sum;
        }
    }
    prev = b.conv(prev, 1, ch, cfg.kernel_size, 1, 1);
    prev = b.g.then(prev, NodeKind::Activation(ActivationKind::Tanh));
    b.g.then(prev, NodeKind::Sink);
    Ok(b.g)
}

/// Knobs for [`random_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomGraphConfig {
    pub max_blocks: usize,
    pub strides: Vec<usize>,
    pub max_kernel: usize,
    pub max_dilation: usize,
    pub max_channels: usize,
    /// Upper bound on the compression ratio.
    pub max_ratio: u64,
    pub residual: bool,
    pub upsampling: bool,
    pub nonlinear: bool,
    pub bias: bool,
    /// Build every convolution causal instead of splitting padding randomly.
    pub causal: bool,
}

impl Default for RandomGraphConfig {
    fn default() -> Self {
        Self {
            max_blocks: 6,
            strides: vec![1, 2, 4],
            max_kernel: 8,
            max_dilation: 3,
            max_channels: 4,
            max_ratio: 16,
            residual: true,
            upsampling: true,
            nonlinear: true,
            bias: true,
            causal: false,
        }
    }
}

struct RandomBuilder<'a> {
    g: GraphIR,
    rng: ChaCha8Rng,
    cfg: &'a RandomGraphConfig,
    ch: usize,
    /// Current rate is `1 / down`.
    down: u64,
    /// Largest denominator seen on any edge.
    ratio: u64,
}

impl RandomBuilder<'_> {
    fn conv(&mut self, from: NodeId, out: usize, stride: usize, dilation: usize) -> NodeId {
        let taps = self.rng.random_range(1..=self.cfg.max_kernel);
        self.conv_taps(from, out, taps, stride, dilation)
    }

    fn conv_taps(
        &mut self,
        from: NodeId,
        out: usize,
        taps: usize,
        stride: usize,
        dilation: usize,
    ) -> NodeId {
        let inp = self.ch;
        let lim = 1.0 / ((inp * taps) as f32).sqrt();
        let weights = (0..out * inp * taps)
            .map(|_| self.rng.random_range(-lim..=lim))
            .collect();
        let bias = (0..out)
            .map(|_| {
                if self.cfg.bias {
                    self.rng.random_range(-0.1..=0.1)
                } else {
                    0.0
                }
            })
            .collect();
        let kernel = Kernel::new(out, inp, taps, weights, bias).unwrap();
        let span = kernel.span(dilation);
        let padding = if self.cfg.causal {
            PaddingSpec::new(span - 1, 0)
        } else {
            let left = self.rng.random_range(0..span);
            PaddingSpec::new(left, span - 1 - left)
        };
        self.ch = out;
        self.g
            .then(from, NodeKind::Conv(ConvNode::new(kernel, stride, dilation, padding)))
    }

    fn channels(&mut self) -> usize {
        self.rng.random_range(1..=self.cfg.max_channels)
    }

    fn activation(&mut self) -> NodeKind {
        if !self.cfg.nonlinear {
            return NodeKind::Activation(ActivationKind::Identity);
        }
        NodeKind::Activation(match self.rng.random_range(0..3) {
            0 => ActivationKind::Tanh,
            1 => ActivationKind::LeakyRelu { alpha: 0.2 },
            _ => ActivationKind::Identity,
        })
    }

    fn dilation(&mut self) -> usize {
        self.rng.random_range(1..=self.cfg.max_dilation)
    }

    fn block(&mut self, prev: NodeId) -> NodeId {
        let strides: Vec<usize> = self
            .cfg
            .strides
            .iter()
            .copied()
            .filter(|&s| s > 1 && self.down * s as u64 <= self.cfg.max_ratio)
            .collect();
        loop {
            match self.rng.random_range(0..8) {
                0 if !strides.is_empty() => {
                    let s = strides[self.rng.random_range(0..strides.len())];
                    let out = self.channels();
                    self.down *= s as u64;
                    self.ratio = self.ratio.max(self.down);
                    return self.conv(prev, out, s, 1);
                }
                1 => {
                    let (out, d) = (self.channels(), self.dilation());
                    return self.conv(prev, out, 1, d);
                }
                2 => {
                    let act = self.activation();
                    return self.g.then(prev, act);
                }
                3 if self.cfg.residual => {
                    let fan = self.g.then(prev, NodeKind::Fanout { arity: 2 });
                    let ch = self.ch;
                    let d = self.dilation();
                    let body = self.conv(fan, ch, 1, d);
                    let act = self.activation();
                    let body = self.g.then(body, act);
                    let body = self.conv_taps(body, ch, 1, 1, 1);
                    let skip = match self.rng.random_range(0..3) {
                        0 => fan,
                        1 => {
                            self.ch = ch;
                            self.conv_taps(fan, ch, 1, 1, 1)
                        }
                        _ => {
                            let samples = self.rng.random_range(0..=3);
                            self.g.then(
                                fan,
                                NodeKind::Delay {
                                    samples,
                                    role: DelayRole::Model,
                                },
                            )
                        }
                    };
                    return self.join(body, skip);
                }
                4 if self.cfg.residual
                    && self.cfg.upsampling
                    && self.down * 2 <= self.cfg.max_ratio =>
                {
                    // branch that dips to half rate and comes back
                    let fan = self.g.then(prev, NodeKind::Fanout { arity: 2 });
                    let ch = self.ch;
                    let body = self.conv(fan, ch, 2, 1);
                    self.ratio = self.ratio.max(self.down * 2);
                    let body = self.g.then(body, NodeKind::ZeroUpsample { factor: 2 });
                    let body = self.conv(body, ch, 1, 1);
                    return self.join(body, fan);
                }
                5 if self.cfg.upsampling && self.down > 1 => {
                    let f = if self.down.is_multiple_of(4) && self.rng.random_bool(0.5) {
                        4
                    } else {
                        2
                    };
                    self.down /= f;
                    let up = self.g.then(prev, NodeKind::ZeroUpsample { factor: f as usize });
                    let out = self.channels();
                    return self.conv(up, out, 1, 1);
                }
                6 => {
                    let samples = self.rng.random_range(0..=3);
                    return self.g.then(
                        prev,
                        NodeKind::Delay {
                            samples,
                            role: DelayRole::Model,
                        },
                    );
                }
                7 if self.cfg.upsampling => {
                    // transposed conv followed by a strided conv, above input rate
                    let up = self.g.then(prev, NodeKind::ZeroUpsample { factor: 2 });
                    let out = self.channels();
                    let mid = self.conv(up, out, 1, 1);
                    let out = self.channels();
                    return self.conv(mid, out, 2, 1);
                }
                _ => continue,
            }
        }
    }

    fn join(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sum = self.g.add_node(NodeKind::Sum { arity: 2 });
        self.g.connect(a, sum, 0);
        self.g.connect(b, sum, 1);
        sum
    }
}

/// Random valid graph that starts and ends at the input rate.
pub fn random_graph(seed: u64, cfg: &RandomGraphConfig) -> GraphIR {
    let mut b = RandomBuilder {
        g: GraphIR::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        cfg,
        ch: 1,
        down: 1,
        ratio: 1,
    };
    let src = b.g.add_node(NodeKind::Source);
    let out = b.channels();
    let mut prev = b.conv(src, out, 1, 1);
    let blocks = b.rng.random_range(1..=cfg.max_blocks.max(1));
    for _ in 0..blocks {
        prev = b.block(prev);
    }
    while b.down > 1 {
        let f = if b.down.is_multiple_of(4) { 4 } else { 2 };
        b.down /= f;
        let up = b.g.then(prev, NodeKind::ZeroUpsample { factor: f as usize });
        let out = b.channels();
        prev = b.conv(up, out, 1, 1);
    }
    prev = b.conv(prev, 1, 1, 1);
    b.g.then(prev, NodeKind::Sink);
    debug_assert_eq!(
        b.g.analyze().map(|t| t.rates.sink_rate()),
        Ok(Rate::from_integer(1))
    );
    b.g
}
