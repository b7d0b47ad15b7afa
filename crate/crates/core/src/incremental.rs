//! Incremental attack-graph maintenance: subgraph extraction over the prior
//! knowledge domain, a replay buffer of attack edges, edge reinforcement,
//! protected cycle removal, the graph Laplacian and the stopping test.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discovery::{find_cycle, Block, CausalGraph};
use crate::stream::PriorKnowledge;
use crate::trigger::{js_divergence, EdgeWeightHistogram};
use crate::{Error, Result};

fn block_of(lag: usize) -> Block {
    if lag == 0 {
        Block::Intra
    } else {
        Block::Lag(lag)
    }
}

fn lag_of(block: Block) -> usize {
    match block {
        Block::Intra => 0,
        Block::Lag(l) => l,
    }
}

fn block_mut(graph: &mut CausalGraph, lag: usize) -> &mut DMatrix<f64> {
    if lag == 0 {
        &mut graph.intra
    } else {
        &mut graph.lags[lag - 1]
    }
}

/// Result of restricting a graph to the prior-knowledge domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub graph: CausalGraph,
    /// No edge survived the filter.
    pub empty: bool,
}

/// Keep exactly the edges whose endpoints both lie in attack ∪ impact nodes.
pub fn extract_attack_subgraph(graph: &CausalGraph, prior: &PriorKnowledge) -> Subgraph {
    let domain = prior.domain_indices(&graph.node_ids);
    let mut out = graph.clone();
    out.diagnostics = None;
    let m = graph.node_count();
    for mat in std::iter::once(&mut out.intra).chain(out.lags.iter_mut()) {
        for i in 0..m {
            for j in 0..m {
                if !(domain.contains(&i) && domain.contains(&j)) {
                    mat[(i, j)] = 0.0;
                }
            }
        }
    }
    let empty = out.edge_count() == 0;
    Subgraph { graph: out, empty }
}

/// Zero every edge touching a domain node.
pub fn exclude_domain(graph: &CausalGraph, prior: &PriorKnowledge) -> CausalGraph {
    let domain = prior.domain_indices(&graph.node_ids);
    let mut out = graph.clone();
    out.diagnostics = None;
    let m = graph.node_count();
    for mat in std::iter::once(&mut out.intra).chain(out.lags.iter_mut()) {
        for i in 0..m {
            for j in 0..m {
                if domain.contains(&i) || domain.contains(&j) {
                    mat[(i, j)] = 0.0;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub source: String,
    pub target: String,
    /// 0 for the intra-window block.
    #[serde(default)]
    pub lag: usize,
    pub weight: f64,
}

type BufferKey = (String, String, usize);

/// Persistent store of attack-domain edges, one entry per directed pair and
/// block. The latest weight wins; over capacity the smallest `|w|` goes first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    entries: BTreeMap<BufferKey, f64>,
    capacity: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct BufferSnapshot {
    capacity: Option<usize>,
    entries: Vec<BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::invalid("buffer capacity must be positive"));
        }
        Ok(ReplayBuffer {
            entries: BTreeMap::new(),
            capacity,
        })
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &str, target: &str, lag: usize) -> Option<f64> {
        self.entries.get(&(source.to_string(), target.to_string(), lag)).copied()
    }

    /// Entries in key order.
    pub fn entries(&self) -> Vec<BufferEntry> {
        self.entries
            .iter()
            .map(|((s, t, l), &w)| BufferEntry {
                source: s.clone(),
                target: t.clone(),
                lag: *l,
                weight: w,
            })
            .collect()
    }

    /// Insert or overwrite one entry, then enforce capacity. Returns evicted entries.
    pub fn upsert(&mut self, entry: BufferEntry) -> Result<Vec<BufferEntry>> {
        if !entry.weight.is_finite() {
            return Err(Error::invalid("non-finite buffer weight"));
        }
        self.entries.insert((entry.source, entry.target, entry.lag), entry.weight);
        Ok(self.enforce_capacity())
    }

    pub fn remove(&mut self, source: &str, target: &str, lag: usize) -> Option<f64> {
        self.entries.remove(&(source.to_string(), target.to_string(), lag))
    }

    fn enforce_capacity(&mut self) -> Vec<BufferEntry> {
        let mut evicted = Vec::new();
        let Some(cap) = self.capacity else { return evicted };
        while self.entries.len() > cap {
            // Smallest magnitude; ties go to the first key.
            let key = self
                .entries
                .iter()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, _)| k.clone())
                .expect("non-empty");
            let w = self.entries.remove(&key).expect("present");
            evicted.push(BufferEntry {
                source: key.0,
                target: key.1,
                lag: key.2,
                weight: w,
            });
        }
        evicted
    }

    /// Every id must be an attack or impact node.
    pub fn validate(&self, prior: &PriorKnowledge) -> Result<()> {
        for (s, t, _) in self.entries.keys() {
            for id in [s, t] {
                if !prior.attack_nodes.contains(id) && !prior.impact_nodes.contains(id) {
                    return Err(Error::invalid(format!("buffered node `{id}` outside the prior domain")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BufferSnapshot {
            capacity: self.capacity,
            entries: self.entries(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: BufferSnapshot = serde_json::from_str(text)?;
        let mut buf = ReplayBuffer::new(snap.capacity)?;
        for e in snap.entries {
            if !e.weight.is_finite() {
                return Err(Error::invalid("non-finite buffer weight"));
            }
            buf.entries.insert((e.source, e.target, e.lag), e.weight);
        }
        if snap.capacity.is_some_and(|c| buf.entries.len() > c) {
            return Err(Error::invalid("buffer snapshot exceeds its capacity"));
        }
        Ok(buf)
    }
}

/// Upsert every edge of `subgraph`. Returns evicted entries.
pub fn buffer_update(buffer: &mut ReplayBuffer, subgraph: &CausalGraph) -> Result<Vec<BufferEntry>> {
    let mut evicted = Vec::new();
    for e in subgraph.edges() {
        evicted.extend(buffer.upsert(BufferEntry {
            source: subgraph.node_ids[e.source].clone(),
            target: subgraph.node_ids[e.target].clone(),
            lag: lag_of(e.block),
            weight: e.weight,
        })?);
        // Entries evicted earlier in this update may have been reinserted.
        evicted.retain(|x| buffer.get(&x.source, &x.target, x.lag).is_none());
    }
    Ok(evicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforcementStats {
    pub reinforced: usize,
    pub inserted: usize,
}

/// Apply the buffer to `next`: a buffered edge already present becomes
/// `max(|current|, |buffered|) * omega` (sign of the buffered weight); an
/// absent one is inserted with its buffered weight. With `reinforce = false`
/// present edges are left alone. Magnitudes are capped at `weight_cap`.
pub fn causal_edge_reinforcement(
    next: &CausalGraph,
    buffer: &ReplayBuffer,
    omega: f64,
    weight_cap: f64,
    reinforce: bool,
) -> Result<(CausalGraph, ReinforcementStats)> {
    if !(omega > 1.0) {
        return Err(Error::invalid(format!("reinforcement factor must exceed 1, got {omega}")));
    }
    if !(weight_cap > 0.0) {
        return Err(Error::invalid("weight cap must be positive"));
    }
    let mut out = next.clone();
    let mut stats = ReinforcementStats {
        reinforced: 0,
        inserted: 0,
    };
    for e in buffer.entries() {
        let (Some(i), Some(j)) = (next.node_index(&e.source), next.node_index(&e.target)) else {
            return Err(Error::invalid(format!(
                "buffered edge {} -> {} touches a node outside the graph",
                e.source, e.target
            )));
        };
        if e.lag > next.max_lag() || (e.lag == 0 && i == j) {
            return Err(Error::invalid(format!("buffered edge {} -> {} does not fit the graph", e.source, e.target)));
        }
        let mat = block_mut(&mut out, e.lag);
        let current = mat[(i, j)];
        if current != 0.0 {
            if reinforce {
                let mag = (current.abs().max(e.weight.abs()) * omega).min(weight_cap);
                mat[(i, j)] = mag.copysign(e.weight);
                stats.reinforced += 1;
            }
        } else {
            mat[(i, j)] = e.weight.abs().min(weight_cap).copysign(e.weight);
            stats.inserted += 1;
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    /// The whole cycle was made of edges of this edge's rank or higher.
    pub forced: bool,
}

/// Break every intra cycle. On each detected cycle the edge with the lowest
/// `rank`, then the smallest `|w|`, then the smallest `(source, target)` is
/// removed. `forced` marks removals where no lower-ranked edge was on the cycle
/// and the rank is above zero.
pub fn remove_cycles_ranked(graph: &mut CausalGraph, rank: impl Fn(usize, usize) -> u8) -> Vec<RemovedEdge> {
    let mut removed = Vec::new();
    while let Some(cycle) = find_cycle(&graph.intra) {
        let &(s, t) = cycle
            .iter()
            .min_by(|a, b| {
                rank(a.0, a.1)
                    .cmp(&rank(b.0, b.1))
                    .then(graph.intra[**a].abs().total_cmp(&graph.intra[**b].abs()))
                    .then(a.cmp(b))
            })
            .expect("cycle has edges");
        removed.push(RemovedEdge {
            source: s,
            target: t,
            weight: graph.intra[(s, t)],
            forced: rank(s, t) > 0,
        });
        graph.intra[(s, t)] = 0.0;
    }
    removed
}

/// Cycle removal that spares edges leaving a protected node unless a cycle
/// consists solely of them.
pub fn remove_cycles_protected(graph: &mut CausalGraph, protected: &BTreeSet<usize>) -> Vec<RemovedEdge> {
    remove_cycles_ranked(graph, |s, _| u8::from(protected.contains(&s)))
}

/// Symmetrized adjacency, degree and Laplacians of the intra block.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianView {
    pub adjacency: DMatrix<f64>,
    pub degree: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub normalized: DMatrix<f64>,
}

/// `Â = (|W| + |W|ᵀ) / 2`, `D = diag(Â 1)`, `L = D - Â`,
/// `L_norm = D^{-1/2} L D^{-1/2}` with isolated nodes left at zero.
///
/// Magnitudes are used so that degrees stay non-negative with signed weights.
pub fn laplacian(graph: &CausalGraph) -> Result<LaplacianView> {
    graph.check_finite()?;
    let w = graph.intra.abs();
    let adjacency = (&w + w.transpose()) * 0.5;
    let m = adjacency.nrows();
    let deg: Vec<f64> = (0..m).map(|i| adjacency.row(i).sum()).collect();
    let degree = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(deg.clone()));
    let laplacian = &degree - &adjacency;
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let normalized = DMatrix::from_fn(m, m, |i, j| inv_sqrt[i] * inv_sqrt[j] * laplacian[(i, j)]);
    Ok(LaplacianView {
        adjacency,
        degree,
        laplacian,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingScore {
    /// `1 - d`.
    pub similarity: f64,
    pub divergence: f64,
    /// `d < tau`.
    pub converged: bool,
    /// The printed criterion `similarity < tau`, kept for auditing.
    pub literal_criterion: bool,
}

/// Weighted out-degree (sum of `|w|` over all blocks) of every domain node.
pub fn domain_out_degrees(subgraph: &CausalGraph, prior: &PriorKnowledge) -> Vec<f64> {
    let domain = prior.domain_indices(&subgraph.node_ids);
    let mut deg: BTreeMap<usize, f64> = domain.iter().map(|&i| (i, 0.0)).collect();
    for e in subgraph.edges() {
        if let Some(d) = deg.get_mut(&e.source) {
            *d += e.weight.abs();
        }
    }
    deg.into_values().collect()
}

/// Jensen-Shannon comparison of the domain out-degree histograms of two subgraphs.
pub fn stopping_score(
    previous: &CausalGraph,
    current: &CausalGraph,
    prior: &PriorKnowledge,
    bins: usize,
    range: (f64, f64),
    tau: f64,
) -> Result<StoppingScore> {
    previous.same_nodes(current)?;
    let p = EdgeWeightHistogram::from_values(domain_out_degrees(previous, prior), bins, range.0, range.1)?;
    let q = EdgeWeightHistogram::from_values(domain_out_degrees(current, prior), bins, range.0, range.1)?;
    let d = js_divergence(&p, &q)?;
    Ok(StoppingScore {
        similarity: 1.0 - d,
        divergence: d,
        converged: d < tau,
        literal_criterion: 1.0 - d < tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementalConfig {
    /// Reinforcement factor ω.
    pub omega: f64,
    /// Convergence threshold on the out-degree divergence.
    pub stop_threshold: f64,
    /// Magnitude cap applied during reinforcement.
    pub weight_cap: f64,
    /// `None` for an unbounded buffer.
    pub buffer_capacity: Option<usize>,
    /// Histogram bins for the stopping test.
    pub bins: usize,
    /// Ablation switch: keep no buffer at all.
    pub use_buffer: bool,
    /// Ablation switch: reinsert buffered edges without multiplying by ω.
    pub reinforce: bool,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        IncrementalConfig {
            omega: 2.0,
            stop_threshold: 0.1,
            weight_cap: 2.0,
            buffer_capacity: None,
            bins: 20,
            use_buffer: true,
            reinforce: true,
        }
    }
}

impl IncrementalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 1.0) {
            return Err(Error::Config(format!("omega must exceed 1, got {}", self.omega)));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config(format!("stop_threshold must be in (0, 1), got {}", self.stop_threshold)));
        }
        if !(self.weight_cap > 0.0) {
            return Err(Error::Config("weight_cap must be positive".into()));
        }
        if self.buffer_capacity == Some(0) {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Normal,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: Status,
    pub stopping: Option<StoppingScore>,
    pub converged: bool,
    pub subgraph_edges: usize,
    pub attack_edges: usize,
    pub normal_edges: usize,
    pub buffer_len: usize,
    pub reinforced: usize,
    pub inserted: usize,
    pub cycle_edges_removed: usize,
    pub forced_removals: usize,
    pub evicted: usize,
}

/// Attack and normal graphs with the replay buffer that links attack windows.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState {
    pub attack_graph: CausalGraph,
    pub normal_graph: CausalGraph,
    pub buffer: ReplayBuffer,
    pub config: IncrementalConfig,
    pub converged: bool,
    /// Domain subgraph of the previous attack-path window graph.
    pub previous_subgraph: Option<CausalGraph>,
}

impl IncrementalState {
    pub fn new(node_ids: Vec<String>, max_lag: usize, edge_threshold: f64, config: IncrementalConfig) -> Result<Self> {
        config.validate()?;
        let empty = CausalGraph::empty(node_ids, max_lag, edge_threshold);
        Ok(IncrementalState {
            attack_graph: empty.clone(),
            normal_graph: empty,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            converged: false,
            previous_subgraph: None,
        })
    }

    /// Forget the previous subgraph so the next attack step starts a fresh
    /// convergence run. The buffer is kept.
    pub fn begin_episode(&mut self) {
        self.previous_subgraph = None;
        self.converged = false;
    }

    /// Fold one window graph into the state.
    ///
    /// Attack path: reinforce the new graph with the buffer, break cycles
    /// (ordinary edges first, then buffered ones, then edges leaving attack
    /// nodes), refresh the buffer from the result and compare the raw domain
    /// subgraph with the previous one. Normal path: the normal graph becomes
    /// the window graph with every domain-incident edge removed.
    pub fn step(&mut self, window_graph: &CausalGraph, prior: &PriorKnowledge, status: Status) -> Result<StepDiagnostics> {
        window_graph.same_nodes(&self.attack_graph)?;
        window_graph.check_finite()?;
        if window_graph.max_lag() != self.attack_graph.max_lag() {
            return Err(Error::Shape {
                expected: format!("max lag {}", self.attack_graph.max_lag()),
                got: format!("max lag {}", window_graph.max_lag()),
            });
        }
        let mut diag = StepDiagnostics {
            status,
            stopping: None,
            converged: self.converged,
            subgraph_edges: 0,
            attack_edges: 0,
            normal_edges: 0,
            buffer_len: 0,
            reinforced: 0,
            inserted: 0,
            cycle_edges_removed: 0,
            forced_removals: 0,
            evicted: 0,
        };
        match status {
            Status::Normal => {
                let mut g = exclude_domain(window_graph, prior);
                let removed = remove_cycles_protected(&mut g, &BTreeSet::new());
                diag.cycle_edges_removed = removed.len();
                self.normal_graph = g;
            }
            Status::Attack => self.attack_step(window_graph, prior, &mut diag)?,
        }
        diag.attack_edges = self.attack_graph.edge_count();
        diag.normal_edges = self.normal_graph.edge_count();
        diag.buffer_len = self.buffer.len();
        diag.converged = self.converged;
        Ok(diag)
    }

    fn attack_step(&mut self, window_graph: &CausalGraph, prior: &PriorKnowledge, diag: &mut StepDiagnostics) -> Result<()> {
        let cfg = &self.config;
        let raw = extract_attack_subgraph(window_graph, prior);
        diag.subgraph_edges = raw.graph.edge_count();

        let mut graph = if cfg.use_buffer {
            let (g, stats) = causal_edge_reinforcement(window_graph, &self.buffer, cfg.omega, cfg.weight_cap, cfg.reinforce)?;
            diag.reinforced = stats.reinforced;
            diag.inserted = stats.inserted;
            g
        } else {
            window_graph.clone()
        };
        graph.diagnostics = None;

        let attack = prior.attack_indices(&graph.node_ids);
        let ids = graph.node_ids.clone();
        let buffered = |s: usize, t: usize| self.buffer.get(&ids[s], &ids[t], 0).is_some();
        let removed = remove_cycles_ranked(&mut graph, |s, t| {
            let pinned = u8::from(buffered(s, t));
            if attack.contains(&s) {
                2 + pinned
            } else {
                pinned
            }
        });
        diag.cycle_edges_removed = removed.len();
        diag.forced_removals = removed.iter().filter(|r| r.forced).count();

        if cfg.use_buffer {
            // A buffered edge that had to go to restore acyclicity is forgotten.
            for r in &removed {
                self.buffer.remove(&ids[r.source], &ids[r.target], 0);
            }
            let sub = extract_attack_subgraph(&graph, prior);
            diag.evicted = buffer_update(&mut self.buffer, &sub.graph)?.len();
        }
        self.attack_graph = graph;

        if let Some(prev) = &self.previous_subgraph {
            let score = stopping_score(prev, &raw.graph, prior, cfg.bins, (0.0, cfg.weight_cap), cfg.stop_threshold)?;
            self.converged = score.converged;
            diag.stopping = Some(score);
        } else {
            self.converged = false;
        }
        self.previous_subgraph = Some(raw.graph);
        Ok(())
    }
}

/// Buffered entries resolved to `(source, target, block, weight)` against `graph`'s node order.
pub fn resolve_entries(buffer: &ReplayBuffer, graph: &CausalGraph) -> Vec<(usize, usize, Block, f64)> {
    buffer
        .entries()
        .into_iter()
        .filter_map(|e| Some((graph.node_index(&e.source)?, graph.node_index(&e.target)?, block_of(e.lag), e.weight)))
        .collect()
}
