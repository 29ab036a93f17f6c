//! Post-training causal reconfiguration.
//!
//! Every convolution's right padding is moved to its left side, which delays
//! that layer's output. The pass tracks the cumulated delay on every edge (in
//! the edge's own sample rate) and inserts compensating delay nodes so that
//! strided convolutions keep sampling the same phase and parallel branches
//! stay aligned at every sum. The rewritten graph computes exactly the
//! original model, shifted in time by the reported latency.

use thiserror::Error;

use crate::graph::{DelayRole, EdgeId, GraphError, GraphIR, NodeId, NodeKind, Rate};
use crate::tensor::PaddingSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalizeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node} still reads future samples (non-zero right padding)")]
    NotCausal { node: NodeId },
    #[error("cumulated delay at node {node} is not a multiple of its stride")]
    InternalNonIntegerDelay { node: NodeId },
}

/// Extra input delay that makes `right + cumulated + extra` a multiple of
/// `stride`. Always in `[0, stride)`.
pub fn delay_for_stride(stride: u64, right: u64, cumulated: u64) -> u64 {
    assert!(stride >= 1, "stride must be at least 1");
    (stride - (right + cumulated) % stride) % stride
}

/// Delays that bring every branch up to the slowest one.
pub fn branch_alignment(branch_delays: &[u64]) -> Vec<u64> {
    let max = branch_delays.iter().copied().max().unwrap_or(0);
    branch_delays.iter().map(|d| max - d).collect()
}

/// Cumulated delay per edge of the rewritten graph, in native-rate samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayLedger {
    edge_delays: Vec<u64>,
}

impl DelayLedger {
    pub fn edge(&self, e: EdgeId) -> u64 {
        self.edge_delays[e]
    }

    pub fn edges(&self) -> &[u64] {
        &self.edge_delays
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentKind {
    /// In front of a strided convolution.
    Stride,
    /// On a sum operand.
    Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertedDelay {
    pub node: NodeId,
    pub samples: u64,
    pub rate: Rate,
    pub kind: AlignmentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    /// Input-to-output delay in input samples.
    pub total_latency: Rate,
    /// Cumulated delay at the sink, in output samples.
    pub sink_delay: u64,
    pub sink_rate: Rate,
    pub inserted: Vec<InsertedDelay>,
}

impl LatencyReport {
    /// Latency rounded up to whole input samples.
    pub fn total_samples(&self) -> u64 {
        self.total_latency.ceil().to_integer()
    }

    pub fn millis(&self, sample_rate: u32) -> f64 {
        *self.total_latency.numer() as f64 / *self.total_latency.denom() as f64 * 1000.0
            / sample_rate as f64
    }
}

#[derive(Debug, Clone)]
pub struct Causalized {
    pub graph: GraphIR,
    pub ledger: DelayLedger,
    pub report: LatencyReport,
}

/// Rewrites `g` into a graph that never reads future samples.
///
/// Node ids of `g` are preserved; inserted delay nodes are appended after
/// them. Delays already tagged [`DelayRole::Alignment`] and right padding
/// already moved by an earlier pass are accounted for, so running the pass
/// twice changes nothing.
pub fn causalize(g: &GraphIR) -> Result<Causalized, CausalizeError> {
    let topo = g.analyze()?;
    let n_edges = g.edges().len();
    // cumulated delay leaving the tail of each original edge
    let mut tail = vec![0u64; n_edges];
    let mut insert = vec![(0u64, AlignmentKind::Stride); n_edges];
    let mut sink_delay = 0;

    for &id in &topo.order {
        let ins = &topo.inputs[id];
        let out = match g.node(id) {
            NodeKind::Source => 0,
            NodeKind::Sink => {
                sink_delay = tail[ins[0]];
                continue;
            }
            NodeKind::Conv(c) => {
                let e = ins[0];
                let stride = c.stride as u64;
                let right = c.original_right() as u64;
                let extra = if stride > 1 {
                    delay_for_stride(stride, right, tail[e])
                } else {
                    0
                };
                insert[e] = (extra, AlignmentKind::Stride);
                let total = tail[e] + extra + right;
                if !total.is_multiple_of(stride) {
                    return Err(CausalizeError::InternalNonIntegerDelay { node: id });
                }
                total / stride
            }
            NodeKind::Sum { .. } => {
                let delays: Vec<u64> = ins.iter().map(|&e| tail[e]).collect();
                for (&e, a) in ins.iter().zip(branch_alignment(&delays)) {
                    insert[e] = (a, AlignmentKind::Branch);
                }
                delays.into_iter().max().unwrap_or(0)
            }
            NodeKind::ZeroUpsample { factor } => tail[ins[0]] * *factor as u64,
            NodeKind::Delay {
                samples,
                role: DelayRole::Alignment,
            } => tail[ins[0]] + *samples as u64,
            NodeKind::Delay { .. } | NodeKind::Activation(_) | NodeKind::Fanout { .. } => {
                tail[ins[0]]
            }
        };
        for &e in &topo.outputs[id] {
            tail[e] = out;
        }
    }

    let mut graph = GraphIR::new();
    for kind in g.nodes() {
        let kind = match kind {
            NodeKind::Conv(c) => {
                let mut c = c.clone();
                c.moved_right += c.padding.right;
                c.padding = PaddingSpec::new(c.padding.total(), 0);
                NodeKind::Conv(c)
            }
            other => other.clone(),
        };
        graph.add_node(kind);
    }
    let mut edge_delays = Vec::with_capacity(n_edges);
    let mut inserted = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        let (extra, kind) = insert[e];
        if extra == 0 {
            graph.connect(edge.from, edge.to, edge.port);
            edge_delays.push(tail[e]);
            continue;
        }
        let delay = graph.add_node(NodeKind::Delay {
            samples: extra as usize,
            role: DelayRole::Alignment,
        });
        graph.connect(edge.from, delay, 0);
        edge_delays.push(tail[e]);
        graph.connect(delay, edge.to, edge.port);
        edge_delays.push(tail[e] + extra);
        inserted.push(InsertedDelay {
            node: delay,
            samples: extra,
            rate: topo.rates.edge(e),
            kind,
        });
    }
    debug_assert!(graph.analyze().is_ok());

    let sink_rate = topo.rates.sink_rate();
    Ok(Causalized {
        graph,
        ledger: DelayLedger { edge_delays },
        report: LatencyReport {
            total_latency: Rate::from_integer(sink_delay) / sink_rate,
            sink_delay,
            sink_rate,
            inserted,
        },
    })
}

/// Input-to-output delay of a causal graph, in input samples.
///
/// For a graph produced by [`causalize`] this is the latency that pass
/// reported. For a graph built causal from the start it is whatever stride
/// alignment residue remains, usually zero. Buffering adds up to one buffer
/// on top of this when streaming.
pub fn latency_of(g: &GraphIR) -> Result<Rate, CausalizeError> {
    g.analyze()?;
    if let Some(node) = g.first_noncausal_node() {
        return Err(CausalizeError::NotCausal { node });
    }
    Ok(causalize(g)?.report.total_latency)
}
