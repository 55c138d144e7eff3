//! Sensor network topology and the synchronous consensus engine.
//!
//! A network is an undirected connected graph of sensing nodes. Each
//! filtering step every node broadcasts one message to its one-hop
//! neighbors per consensus iteration and fuses what it received; the engine
//! records accuracy, mixture size and communication cost per node per
//! iteration.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter::{estimate, position_of, SensorKind};
use crate::fusion::{
    cardinality_consensus_step, ccf_step, cgma_step, cgmm_step, flood_mean, gci_fuse,
    message_cost, metropolis_weights, FloodEntry, FusionWeights, TgmMessage,
};
use crate::gaussian::{select_tgm, GaussianMixture, MergeScheme, ReductionConfig, TgmRule};
use crate::metrics::{network_ospa, ospa, OspaConfig};

/// Axis-aligned rectangular deployment region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::Domain(format!(
                "degenerate region [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector2<f64> {
        Vector2::new(
            rng.gen_range(self.x_min..self.x_max),
            rng.gen_range(self.y_min..self.y_max),
        )
    }
}

/// One sensing node of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeInfo {
    pub id: usize,
    pub position: Vector2<f64>,
    pub kind: SensorKind,
}

/// Undirected connected communication graph over the sensing nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<NodeInfo>,
    adjacency: Vec<Vec<usize>>,
    diameter: usize,
}

impl NetworkGraph {
    /// Builds a graph from nodes labeled `0..n` and undirected edges.
    ///
    /// Rejects self-loops, out-of-range endpoints, mislabeled nodes and
    /// disconnected graphs.
    pub fn new(nodes: Vec<NodeInfo>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Domain("a network needs at least one node".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Domain(format!(
                    "node at index {i} carries id {}; ids must be 0..n in order",
                    node.id
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Domain(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Domain(format!("edge ({a}, {b}) outside the {n}-node graph")));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let graph = Self { nodes, adjacency, diameter: 0 };
        let ecc0 = graph.eccentricity(0).ok_or(Error::DisconnectedGraph)?;
        let mut diameter = ecc0;
        for start in 1..n {
            diameter = diameter.max(graph.eccentricity(start).expect("graph is connected"));
        }
        Ok(Self { diameter, ..graph })
    }

    /// Longest shortest-path distance from `start`, or `None` when some
    /// node is unreachable.
    fn eccentricity(&self, start: usize) -> Option<usize> {
        let n = self.nodes.len();
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut reached = 1;
        let mut farthest = 0;
        while let Some(a) = queue.pop_front() {
            for &b in &self.adjacency[a] {
                if dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    farthest = farthest.max(dist[b]);
                    reached += 1;
                    queue.push_back(b);
                }
            }
        }
        (reached == n).then_some(farthest)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &NodeInfo {
        &self.nodes[id]
    }

    /// Neighbor ids of `id` in ascending order.
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    pub fn degree(&self, id: usize) -> usize {
        self.adjacency[id].len()
    }

    /// Longest shortest-path distance between any two nodes.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Undirected edge list with each pair reported once as `(low, high)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

const MAX_TOPOLOGY_ATTEMPTS: usize = 10_000;

/// Samples a random geometric sensor network: `n` nodes uniform over
/// `region`, an edge between every pair within `comm_radius`, the first
/// half (rounded up) direct position sensors and the rest range-bearing.
///
/// Resamples until the graph is connected and, when `target_diameter` is
/// given, has exactly that diameter; gives up after a fixed attempt budget.
pub fn generate_network(
    n: usize,
    comm_radius: f64,
    region: &Region,
    target_diameter: Option<usize>,
    seed: u64,
) -> Result<NetworkGraph> {
    if n == 0 {
        return Err(Error::Domain("a network needs at least one node".into()));
    }
    if !(comm_radius > 0.0) || !comm_radius.is_finite() {
        return Err(Error::Domain(format!(
            "communication radius must be finite and positive, got {comm_radius}"
        )));
    }
    let linear_count = n.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_TOPOLOGY_ATTEMPTS {
        let nodes: Vec<NodeInfo> = (0..n)
            .map(|id| NodeInfo {
                id,
                position: region.sample(&mut rng),
                kind: if id < linear_count { SensorKind::Linear } else { SensorKind::RangeBearing },
            })
            .collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if (nodes[a].position - nodes[b].position).norm() <= comm_radius {
                    edges.push((a, b));
                }
            }
        }
        match NetworkGraph::new(nodes, &edges) {
            Ok(graph) => {
                if target_diameter.is_none_or(|d| graph.diameter() == d) {
                    return Ok(graph);
                }
            }
            Err(Error::DisconnectedGraph) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::InfeasibleTopology { attempts: MAX_TOPOLOGY_ATTEMPTS })
}

/// Which fusion rule nodes run after the local filter update.
#[derive(Debug, Clone, PartialEq)]
pub enum ConsensusProtocol {
    /// Local filtering only; no communication.
    None,
    /// Pool transmitted mixtures, reduce, rescale to the consensus count.
    Cgmm { tgm: TgmRule, reduction: ReductionConfig, scheme: MergeScheme },
    /// Associate transmitted components against the host mixture and
    /// average matched groups; `gate` is in standard-deviation units.
    Cgma { tgm: TgmRule, gate: f64 },
    /// Componentwise generalized covariance intersection over components
    /// heavier than `share_threshold`.
    Gci { share_threshold: f64, reduction: ReductionConfig, scheme: MergeScheme },
    /// Cardinality-only weighted averaging.
    Cca,
    /// Cardinality-only flooding.
    Ccf,
}

impl ConsensusProtocol {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Cgmm { .. } => "cgmm",
            Self::Cgma { .. } => "cgma",
            Self::Gci { .. } => "gci",
            Self::Cca => "cca",
            Self::Ccf => "ccf",
        }
    }
}

/// Per-node consensus state: the posterior mixture, the current expected
/// count estimate, and the flooding table (used by the flooding baseline
/// only).
#[derive(Debug, Clone)]
pub struct NodeState {
    pub mixture: GaussianMixture,
    pub cardinality: f64,
    pub flood: BTreeMap<usize, FloodEntry>,
}

impl NodeState {
    /// Wraps a posterior mixture; the count estimate is its weight sum.
    pub fn from_mixture(mixture: GaussianMixture) -> Self {
        let cardinality = mixture.weight_sum();
        Self { mixture, cardinality, flood: BTreeMap::new() }
    }
}

/// Per-node outcome of one consensus iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRound {
    pub node: usize,
    /// Distance between the node's extracted states and the ground truth.
    pub ospa: f64,
    /// Node's expected target count after this iteration.
    pub cardinality: f64,
    /// Mixture size after this iteration.
    pub gm_size: usize,
    /// Tuples this node transmitted during this iteration, summed over its
    /// outgoing links.
    pub tuples_sent: usize,
    /// Wall-clock seconds the node spent fusing received messages.
    pub fusion_seconds: f64,
}

/// Network-wide outcome of one consensus iteration. Iteration zero records
/// the purely local state before any communication.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub step: usize,
    pub iteration: usize,
    pub nodes: Vec<NodeRound>,
}

impl RoundReport {
    /// Mean over nodes of the per-node distance to truth.
    pub fn network_ospa(&self) -> f64 {
        network_ospa(&self.nodes.iter().map(|n| n.ospa).collect::<Vec<_>>())
    }

    pub fn mean_cardinality(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.nodes.iter().map(|n| n.cardinality).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn total_tuples(&self) -> usize {
        self.nodes.iter().map(|n| n.tuples_sent).sum()
    }

    pub fn total_fusion_seconds(&self) -> f64 {
        self.nodes.iter().map(|n| n.fusion_seconds).sum()
    }
}

/// Ground truth and scoring configuration for one filtering step.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    /// True target positions at this step, each `[px, py]`.
    pub truth_positions: &'a [DVector<f64>],
    pub ospa: &'a OspaConfig,
    pub step: usize,
}

/// One directed message delivery, for replaying the cost accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageLogEntry {
    pub step: usize,
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    pub gc_count: usize,
    pub dim: usize,
    pub has_cardinality: bool,
    pub flood_entries: usize,
}

fn eval_node(id: usize, state: &NodeState, eval: &EvalContext) -> Result<NodeRound> {
    let est = estimate(&state.mixture);
    let positions: Vec<DVector<f64>> = est.states.iter().map(position_of).collect();
    let dist = ospa(&positions, eval.truth_positions, eval.ospa)?;
    Ok(NodeRound {
        node: id,
        ospa: dist,
        cardinality: state.cardinality,
        gm_size: state.mixture.len(),
        tuples_sent: 0,
        fusion_seconds: 0.0,
    })
}

/// Rescales a mixture so its weight sum becomes `target`; an empty mixture
/// passes through unchanged.
fn rescale_to(mixture: &GaussianMixture, target: f64) -> Result<GaussianMixture> {
    let total = mixture.weight_sum();
    if total <= 0.0 {
        return Ok(mixture.clone());
    }
    mixture.scaled_weights(target / total)
}

/// Runs `t_max` synchronous consensus iterations of `protocol` over the
/// network, mutating `states` in place.
///
/// Every iteration all nodes first broadcast their message, then all nodes
/// fuse what they received; results only take effect after the whole round,
/// so the outcome is independent of node processing order. The returned
/// reports cover iteration `0` (the local state before communication)
/// through iteration `t_max`. When `log` is given, every directed delivery
/// is appended to it.
pub fn run_consensus(
    graph: &NetworkGraph,
    states: &mut [NodeState],
    protocol: &ConsensusProtocol,
    t_max: usize,
    eval: &EvalContext,
    mut log: Option<&mut Vec<MessageLogEntry>>,
) -> Result<Vec<RoundReport>> {
    let n = graph.len();
    if states.len() != n {
        return Err(Error::Domain(format!(
            "{} node states for a {n}-node network",
            states.len()
        )));
    }
    if let ConsensusProtocol::Ccf = protocol {
        for (id, state) in states.iter_mut().enumerate() {
            state.flood = BTreeMap::from([(id, FloodEntry { value: state.cardinality, age: 0 })]);
        }
    }
    let weights: Vec<FusionWeights> =
        (0..n).map(|a| metropolis_weights(graph, a)).collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(t_max + 1);
    let mut first = Vec::with_capacity(n);
    for (id, state) in states.iter().enumerate() {
        first.push(eval_node(id, state, eval)?);
    }
    reports.push(RoundReport { step: eval.step, iteration: 0, nodes: first });

    let rounds = match protocol {
        ConsensusProtocol::None => 0,
        _ => t_max,
    };
    for iteration in 1..=rounds {
        // Broadcast phase: every node prepares one message from its
        // current state. For association-based fusion the sender's own
        // transmitted indices are kept alongside.
        let mut messages = Vec::with_capacity(n);
        let mut own_indices: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (id, state) in states.iter().enumerate() {
            let msg = match protocol {
                ConsensusProtocol::None => unreachable!("no rounds run without a protocol"),
                ConsensusProtocol::Cgmm { tgm, .. } => {
                    let selection = select_tgm(&state.mixture, tgm)?;
                    TgmMessage {
                        origin: id,
                        components: selection.selected,
                        cardinality: Some(state.cardinality),
                        flood_table: None,
                    }
                }
                ConsensusProtocol::Cgma { tgm, .. } => {
                    let selection = select_tgm(&state.mixture, tgm)?;
                    own_indices[id] = selection.selected_indices;
                    TgmMessage {
                        origin: id,
                        components: selection.selected,
                        cardinality: Some(state.cardinality),
                        flood_table: None,
                    }
                }
                ConsensusProtocol::Gci { share_threshold, .. } => {
                    let shared: Vec<_> = state
                        .mixture
                        .components()
                        .iter()
                        .filter(|c| c.weight() > *share_threshold)
                        .cloned()
                        .collect();
                    TgmMessage {
                        origin: id,
                        components: GaussianMixture::new(state.mixture.dim(), shared)?,
                        cardinality: None,
                        flood_table: None,
                    }
                }
                ConsensusProtocol::Cca => TgmMessage {
                    origin: id,
                    components: GaussianMixture::empty(state.mixture.dim()),
                    cardinality: Some(state.cardinality),
                    flood_table: None,
                },
                ConsensusProtocol::Ccf => TgmMessage {
                    origin: id,
                    components: GaussianMixture::empty(state.mixture.dim()),
                    cardinality: None,
                    flood_table: Some(state.flood.clone()),
                },
            };
            messages.push(msg);
        }

        let costs: Vec<usize> = messages.iter().map(message_cost).collect();
        if let Some(sink) = log.as_mut() {
            for (from, msg) in messages.iter().enumerate() {
                for &to in graph.neighbors(from) {
                    sink.push(MessageLogEntry {
                        step: eval.step,
                        iteration,
                        from,
                        to,
                        gc_count: msg.components.len(),
                        dim: msg.components.dim(),
                        has_cardinality: msg.cardinality.is_some(),
                        flood_entries: msg.flood_table.as_ref().map_or(0, BTreeMap::len),
                    });
                }
            }
        }

        // Fusion phase: every node consumes its neighbors' messages against
        // the pre-round states collected above.
        let mut next = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (id, state) in states.iter().enumerate() {
            let received: Vec<TgmMessage> =
                graph.neighbors(id).iter().map(|&b| messages[b].clone()).collect();
            let started = Instant::now();
            let fused = match protocol {
                ConsensusProtocol::None => unreachable!("no rounds run without a protocol"),
                ConsensusProtocol::Cgmm { reduction, scheme, .. } => {
                    let step = cgmm_step(&state.mixture, &received, &weights[id], reduction, *scheme)?;
                    NodeState { mixture: step.mixture, cardinality: step.cardinality, flood: BTreeMap::new() }
                }
                ConsensusProtocol::Cgma { gate, .. } => {
                    let step =
                        cgma_step(&state.mixture, &own_indices[id], &received, &weights[id], *gate)?;
                    NodeState { mixture: step.mixture, cardinality: step.cardinality, flood: BTreeMap::new() }
                }
                ConsensusProtocol::Gci { share_threshold, reduction, scheme } => {
                    let mixture = gci_fuse(
                        &state.mixture,
                        &received,
                        &weights[id],
                        *share_threshold,
                        reduction,
                        *scheme,
                    )?;
                    let cardinality = mixture.weight_sum();
                    NodeState { mixture, cardinality, flood: BTreeMap::new() }
                }
                ConsensusProtocol::Cca => {
                    let mut values = BTreeMap::new();
                    for msg in &received {
                        let w = msg.cardinality.ok_or_else(|| {
                            Error::Config(format!("message from node {} carries no cardinality", msg.origin))
                        })?;
                        values.insert(msg.origin, w);
                    }
                    let cardinality = cardinality_consensus_step(state.cardinality, &values, &weights[id]);
                    NodeState {
                        mixture: rescale_to(&state.mixture, cardinality)?,
                        cardinality,
                        flood: BTreeMap::new(),
                    }
                }
                ConsensusProtocol::Ccf => {
                    let tables: Vec<&BTreeMap<usize, FloodEntry>> = received
                        .iter()
                        .map(|m| {
                            m.flood_table.as_ref().ok_or_else(|| {
                                Error::Config(format!(
                                    "message from node {} carries no flooding table",
                                    m.origin
                                ))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let flood = ccf_step(&state.flood, &tables);
                    let cardinality = flood_mean(&flood);
                    NodeState { mixture: rescale_to(&state.mixture, cardinality)?, cardinality, flood }
                }
            };
            let fusion_seconds = started.elapsed().as_secs_f64();
            let mut row = eval_node(id, &fused, eval)?;
            row.tuples_sent = costs[id] * graph.degree(id);
            row.fusion_seconds = fusion_seconds;
            rows.push(row);
            next.push(fused);
        }
        for (slot, state) in states.iter_mut().zip(next) {
            *slot = state;
        }
        reports.push(RoundReport { step: eval.step, iteration, nodes: rows });
    }
    Ok(reports)
}
