//! Offline and buffer-by-buffer execution of a [`GraphIR`].
//!
//! Offline execution pads every convolution with zeros on both sides. The
//! streaming runtime only supports causal graphs: each convolution keeps the
//! trailing `left` samples of its input and prepends them to the next buffer
//! instead of zeros (cached padding), and each delay node is a ring buffer.
//! Caches start at zero, so the first buffer sees exactly the zero padding the
//! offline run sees and the two agree from sample 0.

use thiserror::Error;

use crate::graph::{GraphError, GraphIR, NodeId, NodeKind, Topology};
use crate::tensor::{
    activation, conv1d, pad_zeros, zero_upsample, PaddingSpec, SignalTensor, TensorError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node {node} reads future samples; causalize the graph before streaming")]
    NotCausal { node: NodeId },
    #[error("buffer of {length} samples is not a positive multiple of the compression ratio {ratio}")]
    BufferNotMultipleOfRatio { length: usize, ratio: u64 },
    #[error("input of {length} samples is not a multiple of the compression ratio {ratio}")]
    LengthNotMultipleOfRatio { length: usize, ratio: u64 },
    #[error("expected a mono signal, got {0} channels")]
    NotMono(usize),
    #[error("stream state was initialised for a different graph")]
    GraphMismatch,
}

/// Runs `eval` on every node in topological order and returns the tensor
/// reaching the sink.
fn run_nodes<F>(
    g: &GraphIR,
    topo: &Topology,
    input: SignalTensor,
    mut eval: F,
) -> Result<SignalTensor, StreamError>
where
    F: FnMut(NodeId, &NodeKind, Vec<SignalTensor>) -> Result<SignalTensor, StreamError>,
{
    let mut edges: Vec<Option<SignalTensor>> = vec![None; g.edges().len()];
    let mut input = Some(input);
    for &id in &topo.order {
        let kind = g.node(id);
        let inputs: Vec<SignalTensor> = topo.inputs[id]
            .iter()
            .map(|&e| edges[e].take().expect("edge evaluated before its consumer"))
            .collect();
        let out = match kind {
            NodeKind::Source => input.take().expect("single source"),
            NodeKind::Sink => return Ok(inputs.into_iter().next().unwrap()),
            _ => eval(id, kind, inputs)?,
        };
        if let Some((last, rest)) = topo.outputs[id].split_last() {
            for &e in rest {
                edges[e] = Some(out.clone());
            }
            edges[*last] = Some(out);
        }
    }
    unreachable!("validated graph always reaches its sink")
}

fn sum_inputs(inputs: Vec<SignalTensor>) -> SignalTensor {
    let mut iter = inputs.into_iter();
    let first = iter.next().unwrap();
    let (channels, len) = (first.channels(), first.len());
    let mut acc = first.into_data();
    for t in iter {
        for (a, b) in acc.iter_mut().zip(t.data()) {
            *a += *b;
        }
    }
    SignalTensor::new(channels, len, acc).unwrap()
}

fn delay_offline(x: &SignalTensor, samples: usize) -> SignalTensor {
    let shifted = pad_zeros(x, PaddingSpec::new(samples, 0));
    shifted.slice_time(0, x.len())
}

fn stateless(kind: &NodeKind, inputs: Vec<SignalTensor>) -> SignalTensor {
    match kind {
        NodeKind::ZeroUpsample { factor } => zero_upsample(&inputs[0], *factor),
        NodeKind::Activation(a) => activation(&inputs[0], *a),
        NodeKind::Sum { .. } => sum_inputs(inputs),
        NodeKind::Fanout { .. } => inputs.into_iter().next().unwrap(),
        other => unreachable!("{} is not stateless", other.name()),
    }
}

fn check_mono(x: &SignalTensor) -> Result<(), StreamError> {
    if x.channels() != 1 {
        return Err(StreamError::NotMono(x.channels()));
    }
    Ok(())
}

/// Whole-signal evaluation with every node's declared zero padding.
///
/// The input length must be a multiple of the compression ratio so that
/// every intermediate tensor has an integral length.
pub fn offline_run(g: &GraphIR, x: &SignalTensor) -> Result<SignalTensor, StreamError> {
    let topo = g.analyze()?;
    offline_run_with(g, &topo, x)
}

pub(crate) fn offline_run_with(
    g: &GraphIR,
    topo: &Topology,
    x: &SignalTensor,
) -> Result<SignalTensor, StreamError> {
    check_mono(x)?;
    let ratio = topo.rates.compression_ratio();
    if !(x.len() as u64).is_multiple_of(ratio) {
        return Err(StreamError::LengthNotMultipleOfRatio {
            length: x.len(),
            ratio,
        });
    }
    let sample_rate = x.sample_rate();
    let out = run_nodes(g, topo, x.clone(), |_, kind, inputs| {
        Ok(match kind {
            NodeKind::Conv(c) => {
                let x = &inputs[0];
                if x.is_empty() {
                    SignalTensor::zeros(c.kernel.out_channels(), 0)
                } else {
                    conv1d(&pad_zeros(x, c.padding), &c.kernel, c.stride, c.dilation)?
                }
            }
            NodeKind::Delay { samples, .. } => delay_offline(&inputs[0], *samples),
            other => stateless(other, inputs),
        })
    })?;
    Ok(out.with_sample_rate(sample_rate))
}

/// Fixed-size FIFO delay over all channels of an edge.
#[derive(Debug, Clone)]
struct DelayLine {
    channels: usize,
    len: usize,
    buf: Vec<f32>,
    pos: usize,
}

impl DelayLine {
    fn new(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            buf: vec![0.0; channels * len],
            pos: 0,
        }
    }

    fn process(&mut self, x: &SignalTensor) -> SignalTensor {
        if self.len == 0 {
            return x.clone();
        }
        let n = x.len();
        let mut out = SignalTensor::zeros(self.channels, n);
        for c in 0..self.channels {
            let ring = &mut self.buf[c * self.len..(c + 1) * self.len];
            let (src, dst) = (x.channel(c), out.channel_mut(c));
            let mut pos = self.pos;
            for (o, v) in dst.iter_mut().zip(src) {
                *o = ring[pos];
                ring[pos] = *v;
                pos += 1;
                if pos == self.len {
                    pos = 0;
                }
            }
        }
        self.pos = (self.pos + n) % self.len;
        out
    }

    fn reset(&mut self) {
        self.buf.fill(0.0);
        self.pos = 0;
    }

    fn bytes(&self) -> usize {
        self.buf.len() * std::mem::size_of::<f32>()
    }
}

#[derive(Debug, Clone)]
enum NodeState {
    Stateless,
    Conv { cache: SignalTensor },
    Delay(DelayLine),
}

/// Per-node caches for buffer-by-buffer execution of one causal graph.
#[derive(Debug, Clone)]
pub struct StreamState {
    topo: Topology,
    nodes: Vec<NodeState>,
    ratio: u64,
    consumed: u64,
    n_edges: usize,
}

impl StreamState {
    pub fn new(g: &GraphIR) -> Result<Self, StreamError> {
        let topo = g.analyze()?;
        if let Some(node) = g.first_noncausal_node() {
            return Err(StreamError::NotCausal { node });
        }
        let nodes = g
            .nodes()
            .iter()
            .enumerate()
            .map(|(id, kind)| {
                let channels = topo.inputs[id].first().map(|&e| topo.edge_channels[e]);
                match kind {
                    NodeKind::Conv(c) => NodeState::Conv {
                        cache: SignalTensor::zeros(c.kernel.in_channels(), c.padding.left),
                    },
                    NodeKind::Delay { samples, .. } => {
                        NodeState::Delay(DelayLine::new(channels.unwrap(), *samples))
                    }
                    _ => NodeState::Stateless,
                }
            })
            .collect();
        Ok(Self {
            ratio: topo.rates.compression_ratio(),
            topo,
            nodes,
            consumed: 0,
            n_edges: g.edges().len(),
        })
    }

    /// Buffer length quantum.
    pub fn ratio(&self) -> u64 {
        self.ratio
    }

    /// Input samples consumed since construction or the last reset.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Bytes held in convolution caches and delay lines.
    pub fn state_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                NodeState::Stateless => 0,
                NodeState::Conv { cache } => std::mem::size_of_val(cache.data()),
                NodeState::Delay(d) => d.bytes(),
            })
            .sum()
    }

    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            match n {
                NodeState::Stateless => {}
                NodeState::Conv { cache } => {
                    *cache = SignalTensor::zeros(cache.channels(), cache.len());
                }
                NodeState::Delay(d) => d.reset(),
            }
        }
        self.consumed = 0;
    }

    /// Processes one mono buffer and returns the matching output block.
    pub fn process_buffer(
        &mut self,
        g: &GraphIR,
        buf: &SignalTensor,
    ) -> Result<SignalTensor, StreamError> {
        if g.nodes().len() != self.nodes.len() || g.edges().len() != self.n_edges {
            return Err(StreamError::GraphMismatch);
        }
        check_mono(buf)?;
        if buf.is_empty() || !(buf.len() as u64).is_multiple_of(self.ratio) {
            return Err(StreamError::BufferNotMultipleOfRatio {
                length: buf.len(),
                ratio: self.ratio,
            });
        }
        let sample_rate = buf.sample_rate();
        let nodes = &mut self.nodes;
        let out = run_nodes(g, &self.topo, buf.clone(), |id, kind, inputs| {
            Ok(match (kind, &mut nodes[id]) {
                (NodeKind::Conv(c), NodeState::Conv { cache }) => {
                    let x = &inputs[0];
                    assert_eq!(
                        x.len() % c.stride,
                        0,
                        "buffer quantum must make every strided input divisible"
                    );
                    let joined = cache.concat_time(x)?;
                    let y = conv1d(&joined, &c.kernel, c.stride, c.dilation)?;
                    *cache = joined.slice_time(joined.len() - cache.len(), joined.len());
                    y
                }
                (NodeKind::Delay { .. }, NodeState::Delay(line)) => line.process(&inputs[0]),
                (other, _) => stateless(other, inputs),
            })
        })?;
        self.consumed += buf.len() as u64;
        Ok(out.with_sample_rate(sample_rate))
    }
}

pub fn init_state(g: &GraphIR) -> Result<StreamState, StreamError> {
    StreamState::new(g)
}

/// Closed-form cache size: sum over convolutions of `left * in_channels` and
/// over delays of `samples * channels`, times four bytes.
pub fn expected_state_bytes(g: &GraphIR) -> Result<usize, StreamError> {
    let topo = g.analyze()?;
    Ok(g.nodes()
        .iter()
        .enumerate()
        .map(|(id, kind)| match kind {
            NodeKind::Conv(c) => c.padding.left * c.kernel.in_channels() * 4,
            NodeKind::Delay { samples, .. } => {
                samples * topo.edge_channels[topo.inputs[id][0]] * 4
            }
            _ => 0,
        })
        .sum())
}

/// Streams `x` through `g` in consecutive buffers of the given sizes
/// (cycled) and concatenates the outputs.
pub fn stream_run(
    g: &GraphIR,
    x: &SignalTensor,
    buffer_sizes: &[usize],
) -> Result<SignalTensor, StreamError> {
    assert!(!buffer_sizes.is_empty(), "need at least one buffer size");
    let mut state = StreamState::new(g)?;
    let mut out = Vec::new();
    let mut pos = 0;
    for &size in buffer_sizes.iter().cycle() {
        if pos >= x.len() {
            break;
        }
        let end = (pos + size).min(x.len());
        let y = state.process_buffer(g, &x.slice_time(pos, end))?;
        out.extend_from_slice(y.data());
        pos = end;
    }
    Ok(SignalTensor::mono(out).with_sample_rate(x.sample_rate()))
}
