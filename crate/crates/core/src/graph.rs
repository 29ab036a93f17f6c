//! Graph description of a 1-D convolutional model and its static analyses.
//!
//! A [`GraphIR`] is a single-input/single-output DAG. Node ids are dense
//! indices assigned at insertion; the input port on each edge orders the
//! operands of a [`NodeKind::Sum`].

use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::{Dfs, Reversed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ActivationKind, Kernel, PaddingSpec};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Sample rate of an edge relative to the graph input.
pub type Rate = Ratio<u64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNode {
    pub kernel: Kernel,
    pub stride: usize,
    pub dilation: usize,
    pub padding: PaddingSpec,
    /// Right padding already moved to the left side by causal
    /// reconfiguration. Zero for convolutions that were built causal.
    pub moved_right: usize,
}

impl ConvNode {
    pub fn new(kernel: Kernel, stride: usize, dilation: usize, padding: PaddingSpec) -> Self {
        Self {
            kernel,
            stride,
            dilation,
            padding,
            moved_right: 0,
        }
    }

    pub fn span(&self) -> usize {
        self.kernel.span(self.dilation)
    }

    /// Look-ahead this layer had before any rewrite (`R` in the delay ledger).
    pub fn original_right(&self) -> usize {
        self.padding.right + self.moved_right
    }
}

/// Why a delay node exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRole {
    /// Part of the model itself.
    Model,
    /// Inserted by causal reconfiguration to realign strides or branches.
    Alignment,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Source,
    Sink,
    Conv(ConvNode),
    ZeroUpsample { factor: usize },
    Activation(ActivationKind),
    Delay { samples: usize, role: DelayRole },
    Sum { arity: usize },
    Fanout { arity: usize },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Source => "source",
            NodeKind::Sink => "sink",
            NodeKind::Conv(_) => "conv",
            NodeKind::ZeroUpsample { .. } => "zero_upsample",
            NodeKind::Activation(_) => "activation",
            NodeKind::Delay { .. } => "delay",
            NodeKind::Sum { .. } => "sum",
            NodeKind::Fanout { .. } => "fanout",
        }
    }

    fn expected_inputs(&self) -> usize {
        match self {
            NodeKind::Source => 0,
            NodeKind::Sum { arity } => *arity,
            _ => 1,
        }
    }

    fn expected_outputs(&self) -> usize {
        match self {
            NodeKind::Sink => 0,
            NodeKind::Fanout { arity } => *arity,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub port: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs exactly one source and one sink, found {sources} source(s) and {sinks} sink(s)")]
    SourceSinkCount { sources: usize, sinks: usize },
    #[error("edge {edge} references unknown node {node}")]
    UnknownNode { edge: EdgeId, node: NodeId },
    #[error("node {node} is invalid: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("node {node} has wrong connections: {reason}")]
    PortMismatch { node: NodeId, reason: String },
    #[error("cycle detected through node {node}")]
    CycleDetected { node: NodeId },
    #[error("node {node} is not on a path from source to sink")]
    DanglingNode { node: NodeId },
    #[error("channel mismatch at node {node}: expected {expected}, got {actual}")]
    ChannelMismatch {
        node: NodeId,
        expected: usize,
        actual: usize,
    },
    #[error("sum node {node} receives inputs at different rates: {rates}")]
    RateMismatchAtSum { node: NodeId, rates: String },
    #[error("conv node {node} pads {total} samples but its span {span} needs {}", span - 1)]
    PaddingNotLengthPreserving {
        node: NodeId,
        span: usize,
        total: usize,
    },
}

impl GraphError {
    /// The node the error is about, when there is one.
    pub fn node(&self) -> Option<NodeId> {
        match self {
            GraphError::SourceSinkCount { .. } => None,
            GraphError::UnknownNode { node, .. }
            | GraphError::InvalidNode { node, .. }
            | GraphError::PortMismatch { node, .. }
            | GraphError::CycleDetected { node }
            | GraphError::DanglingNode { node }
            | GraphError::ChannelMismatch { node, .. }
            | GraphError::RateMismatchAtSum { node, .. }
            | GraphError::PaddingNotLengthPreserving { node, .. } => Some(*node),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphIR {
    nodes: Vec<NodeKind>,
    edges: Vec<Edge>,
}

impl GraphIR {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, kind: NodeKind) -> NodeId {
        self.nodes.push(kind);
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, from: NodeId, to: NodeId, port: usize) -> EdgeId {
        self.edges.push(Edge { from, to, port });
        self.edges.len() - 1
    }

    /// Appends `kind` and wires `from -> new` on port 0.
    pub fn then(&mut self, from: NodeId, kind: NodeKind) -> NodeId {
        let id = self.add_node(kind);
        self.connect(from, id, 0);
        id
    }

    /// `Source -> layers... -> Sink`.
    pub fn chain(layers: impl IntoIterator<Item = NodeKind>) -> Self {
        let mut g = Self::new();
        let mut prev = g.add_node(NodeKind::Source);
        for layer in layers {
            prev = g.then(prev, layer);
        }
        g.then(prev, NodeKind::Sink);
        g
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn conv_nodes(&self) -> impl Iterator<Item = (NodeId, &ConvNode)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            NodeKind::Conv(c) => Some((i, c)),
            _ => None,
        })
    }

    /// True when no convolution reads future samples (all right pads zero),
    /// which is what cached-padding execution requires.
    pub fn is_causal(&self) -> bool {
        self.conv_nodes().all(|(_, c)| c.padding.right == 0)
    }

    /// First convolution that still has right padding.
    pub fn first_noncausal_node(&self) -> Option<NodeId> {
        self.conv_nodes()
            .find(|(_, c)| c.padding.right > 0)
            .map(|(id, _)| id)
    }

    pub fn analyze(&self) -> Result<Topology, GraphError> {
        Topology::build(self)
    }
}

/// Per-edge rate relative to the source.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    edge_rates: Vec<Rate>,
    sink_rate: Rate,
}

impl RateMap {
    pub fn edge(&self, e: EdgeId) -> Rate {
        self.edge_rates[e]
    }

    pub fn edges(&self) -> &[Rate] {
        &self.edge_rates
    }

    /// Output samples per input sample.
    pub fn sink_rate(&self) -> Rate {
        self.sink_rate
    }

    /// Smallest input length that makes every edge length an integer: the
    /// least common multiple of all rate denominators.
    pub fn compression_ratio(&self) -> u64 {
        self.edge_rates.iter().fold(1, |acc, r| acc.lcm(r.denom()))
    }
}

/// Everything execution needs to know about a validated graph.
#[derive(Debug, Clone)]
pub struct Topology {
    pub order: Vec<NodeId>,
    /// Incoming edges per node, sorted by port.
    pub inputs: Vec<Vec<EdgeId>>,
    pub outputs: Vec<Vec<EdgeId>>,
    pub edge_channels: Vec<usize>,
    pub rates: RateMap,
    pub source: NodeId,
    pub sink: NodeId,
}

impl Topology {
    fn build(g: &GraphIR) -> Result<Self, GraphError> {
        let n = g.nodes.len();
        let sources: Vec<_> = (0..n).filter(|&i| g.nodes[i] == NodeKind::Source).collect();
        let sinks: Vec<_> = (0..n).filter(|&i| g.nodes[i] == NodeKind::Sink).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(GraphError::SourceSinkCount {
                sources: sources.len(),
                sinks: sinks.len(),
            });
        }
        let (source, sink) = (sources[0], sinks[0]);

        for (id, kind) in g.nodes.iter().enumerate() {
            check_node(id, kind)?;
        }

        let mut inputs = vec![Vec::new(); n];
        let mut outputs = vec![Vec::new(); n];
        for (e, edge) in g.edges.iter().enumerate() {
            for node in [edge.from, edge.to] {
                if node >= n {
                    return Err(GraphError::UnknownNode { edge: e, node });
                }
            }
            outputs[edge.from].push(e);
            inputs[edge.to].push(e);
        }
        for id in 0..n {
            inputs[id].sort_by_key(|&e| g.edges[e].port);
            let kind = &g.nodes[id];
            if inputs[id].is_empty() && kind.expected_inputs() > 0 {
                return Err(GraphError::DanglingNode { node: id });
            }
            let ports: Vec<usize> = inputs[id].iter().map(|&e| g.edges[e].port).collect();
            let expected: Vec<usize> = (0..kind.expected_inputs()).collect();
            if ports != expected {
                return Err(GraphError::PortMismatch {
                    node: id,
                    reason: format!(
                        "{} expects input ports {expected:?}, got {ports:?}",
                        kind.name()
                    ),
                });
            }
            if outputs[id].len() != kind.expected_outputs() {
                if outputs[id].is_empty() {
                    return Err(GraphError::DanglingNode { node: id });
                }
                return Err(GraphError::PortMismatch {
                    node: id,
                    reason: format!(
                        "{} expects {} output(s), got {}",
                        kind.name(),
                        kind.expected_outputs(),
                        outputs[id].len()
                    ),
                });
            }
        }

        let mut pg = DiGraph::<(), ()>::with_capacity(n, g.edges.len());
        for _ in 0..n {
            pg.add_node(());
        }
        for edge in &g.edges {
            pg.add_edge(NodeIndex::new(edge.from), NodeIndex::new(edge.to), ());
        }
        let order: Vec<NodeId> = toposort(&pg, None)
            .map_err(|c| GraphError::CycleDetected {
                node: c.node_id().index(),
            })?
            .into_iter()
            .map(|ix| ix.index())
            .collect();

        let mut from_source = vec![false; n];
        let mut dfs = Dfs::new(&pg, NodeIndex::new(source));
        while let Some(ix) = dfs.next(&pg) {
            from_source[ix.index()] = true;
        }
        let mut to_sink = vec![false; n];
        let rev = Reversed(&pg);
        let mut dfs = Dfs::new(rev, NodeIndex::new(sink));
        while let Some(ix) = dfs.next(rev) {
            to_sink[ix.index()] = true;
        }
        if let Some(node) = (0..n).find(|&i| !from_source[i] || !to_sink[i]) {
            return Err(GraphError::DanglingNode { node });
        }

        let mut edge_channels = vec![0usize; g.edges.len()];
        let mut edge_rates = vec![Rate::from_integer(1); g.edges.len()];
        let mut sink_rate = Rate::from_integer(1);
        for &id in &order {
            let in_ch: Vec<usize> = inputs[id].iter().map(|&e| edge_channels[e]).collect();
            let in_rate: Vec<Rate> = inputs[id].iter().map(|&e| edge_rates[e]).collect();
            let (ch, rate) = match &g.nodes[id] {
                NodeKind::Source => (1, Rate::from_integer(1)),
                NodeKind::Sink => {
                    if in_ch[0] != 1 {
                        return Err(GraphError::ChannelMismatch {
                            node: id,
                            expected: 1,
                            actual: in_ch[0],
                        });
                    }
                    sink_rate = in_rate[0];
                    continue;
                }
                NodeKind::Conv(c) => {
                    if in_ch[0] != c.kernel.in_channels() {
                        return Err(GraphError::ChannelMismatch {
                            node: id,
                            expected: c.kernel.in_channels(),
                            actual: in_ch[0],
                        });
                    }
                    (
                        c.kernel.out_channels(),
                        in_rate[0] / Rate::from_integer(c.stride as u64),
                    )
                }
                NodeKind::ZeroUpsample { factor } => {
                    (in_ch[0], in_rate[0] * Rate::from_integer(*factor as u64))
                }
                NodeKind::Sum { .. } => {
                    if let Some(&bad) = in_ch.iter().find(|&&c| c != in_ch[0]) {
                        return Err(GraphError::ChannelMismatch {
                            node: id,
                            expected: in_ch[0],
                            actual: bad,
                        });
                    }
                    if in_rate.iter().any(|r| *r != in_rate[0]) {
                        let rates: Vec<String> = in_rate.iter().map(|r| r.to_string()).collect();
                        return Err(GraphError::RateMismatchAtSum {
                            node: id,
                            rates: rates.join(", "),
                        });
                    }
                    (in_ch[0], in_rate[0])
                }
                NodeKind::Activation(_) | NodeKind::Delay { .. } | NodeKind::Fanout { .. } => {
                    (in_ch[0], in_rate[0])
                }
            };
            for &e in &outputs[id] {
                edge_channels[e] = ch;
                edge_rates[e] = rate;
            }
        }

        Ok(Topology {
            order,
            inputs,
            outputs,
            edge_channels,
            rates: RateMap {
                edge_rates,
                sink_rate,
            },
            source,
            sink,
        })
    }

    /// Length of edge `e` for an input of `input_len` samples, if integral.
    pub fn edge_len(&self, e: EdgeId, input_len: usize) -> Option<usize> {
        let len = self.rates.edge(e) * Rate::from_integer(input_len as u64);
        len.is_integer().then(|| len.to_integer() as usize)
    }
}

fn check_node(id: NodeId, kind: &NodeKind) -> Result<(), GraphError> {
    let invalid = |reason: String| Err(GraphError::InvalidNode { node: id, reason });
    match kind {
        NodeKind::Conv(c) => {
            if c.stride == 0 || c.dilation == 0 {
                return invalid(format!(
                    "stride {} and dilation {} must be at least 1",
                    c.stride, c.dilation
                ));
            }
            let span = c.span();
            if c.padding.total() != span - 1 {
                return Err(GraphError::PaddingNotLengthPreserving {
                    node: id,
                    span,
                    total: c.padding.total(),
                });
            }
            if c.moved_right > c.padding.left {
                return invalid(format!(
                    "moved right padding {} exceeds left padding {}",
                    c.moved_right, c.padding.left
                ));
            }
        }
        NodeKind::ZeroUpsample { factor } if *factor == 0 => {
            return invalid("upsampling factor must be at least 1".into());
        }
        NodeKind::Sum { arity } | NodeKind::Fanout { arity } if *arity < 2 => {
            return invalid(format!("{} arity must be at least 2, got {arity}", kind.name()));
        }
        NodeKind::Activation(ActivationKind::LeakyRelu { alpha }) if !alpha.is_finite() => {
            return invalid("leaky relu slope must be finite".into());
        }
        _ => {}
    }
    Ok(())
}

pub fn validate(g: &GraphIR) -> Result<RateMap, GraphError> {
    Ok(g.analyze()?.rates)
}

/// Buffer-size quantum `r`: the input length granularity at which every
/// internal tensor has an integral length.
pub fn compression_ratio(g: &GraphIR) -> Result<u64, GraphError> {
    Ok(validate(g)?.compression_ratio())
}

/// Input-sample window that influences one output sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub past: u64,
    pub future: u64,
    /// Exact extents in input samples; fractional when an upsampled region
    /// pads at a rate above the input rate.
    pub exact_past: Ratio<i64>,
    pub exact_future: Ratio<i64>,
}

impl ReceptiveField {
    pub fn span(&self) -> u64 {
        self.past + self.future + 1
    }
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "past {} / future {}", self.past, self.future)
    }
}

/// Interval propagation from source to sink.
///
/// An output sample at time `t` (input-rate samples) depends on inputs in
/// `[t - past, t + future]`. A convolution at rate `rho` with padding `(L, R)`
/// adds `L / rho` of past and `R / rho` of future; a delay of `d` shifts the
/// window by `d / rho`; sums take the union of their operands.
pub fn receptive_field(g: &GraphIR) -> Result<ReceptiveField, GraphError> {
    let topo = g.analyze()?;
    let to_i = |r: Rate| Ratio::new(*r.numer() as i64, *r.denom() as i64);
    let zero = Ratio::from_integer(0i64);
    let mut ext = vec![(zero, zero); g.edges.len()];
    let mut result = (zero, zero);
    for &id in &topo.order {
        let ins: Vec<(Ratio<i64>, Ratio<i64>)> = topo.inputs[id].iter().map(|&e| ext[e]).collect();
        let in_rate = topo.inputs[id].first().map(|&e| to_i(topo.rates.edge(e)));
        let out = match g.node(id) {
            NodeKind::Source => (zero, zero),
            NodeKind::Sink => {
                result = ins[0];
                continue;
            }
            NodeKind::Conv(c) => {
                let rho = in_rate.unwrap();
                (
                    ins[0].0 + Ratio::from_integer(c.padding.left as i64) / rho,
                    ins[0].1 + Ratio::from_integer(c.padding.right as i64) / rho,
                )
            }
            NodeKind::Delay { samples, .. } => {
                let shift = Ratio::from_integer(*samples as i64) / in_rate.unwrap();
                (ins[0].0 + shift, ins[0].1 - shift)
            }
            NodeKind::Sum { .. } => ins
                .iter()
                .fold(ins[0], |acc, x| (acc.0.max(x.0), acc.1.max(x.1))),
            _ => ins[0],
        };
        for &e in &topo.outputs[id] {
            ext[e] = out;
        }
    }
    let clamp = |r: Ratio<i64>| r.max(zero);
    let (past, future) = (clamp(result.0), clamp(result.1));
    Ok(ReceptiveField {
        past: past.floor().to_integer() as u64,
        future: future.floor().to_integer() as u64,
        exact_past: past,
        exact_future: future,
    })
}
