use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which adjacency block an edge lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Intra,
    /// Lag order, starting at 1.
    Lag(usize),
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Intra => write!(f, "intra"),
            Block::Lag(l) => write!(f, "lag-{l}"),
        }
    }
}

impl std::str::FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "intra" {
            return Ok(Block::Intra);
        }
        s.strip_prefix("lag-")
            .and_then(|l| l.parse::<usize>().ok())
            .filter(|&l| l >= 1)
            .map(Block::Lag)
            .ok_or_else(|| Error::invalid(format!("unknown edge block `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub block: Block,
    pub weight: f64,
}

/// Fit diagnostics carried with a discovered graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Acyclicity surrogate of the returned intra block.
    pub acyclicity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Penalized objective at the returned weights.
    pub objective: f64,
    pub converged: bool,
    /// Edges removed after thresholding to break residual cycles.
    pub cycle_edges_removed: usize,
}

/// Weighted temporal DAG: an intra-window block `A_X` (`intra[(i, j)]` is the
/// weight of `i -> j`) plus one `M x M` block per lag.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    pub node_ids: Vec<String>,
    pub intra: DMatrix<f64>,
    pub lags: Vec<DMatrix<f64>>,
    pub edge_threshold: f64,
    pub diagnostics: Option<FitDiagnostics>,
}

impl CausalGraph {
    pub fn empty(node_ids: Vec<String>, max_lag: usize, edge_threshold: f64) -> Self {
        let m = node_ids.len();
        CausalGraph {
            node_ids,
            intra: DMatrix::zeros(m, m),
            lags: vec![DMatrix::zeros(m, m); max_lag],
            edge_threshold,
            diagnostics: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn block(&self, block: Block) -> &DMatrix<f64> {
        match block {
            Block::Intra => &self.intra,
            Block::Lag(l) => &self.lags[l - 1],
        }
    }

    fn blocks(&self) -> impl Iterator<Item = (Block, &DMatrix<f64>)> {
        std::iter::once((Block::Intra, &self.intra))
            .chain(self.lags.iter().enumerate().map(|(l, m)| (Block::Lag(l + 1), m)))
    }

    /// All nonzero entries, intra block first, row-major within a block.
    pub fn edges(&self) -> Vec<Edge> {
        let m = self.node_count();
        let mut out = Vec::new();
        for (block, mat) in self.blocks() {
            for i in 0..m {
                for j in 0..m {
                    let w = mat[(i, j)];
                    if w != 0.0 {
                        out.push(Edge {
                            source: i,
                            target: j,
                            block,
                            weight: w,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.blocks().map(|(_, m)| m.iter().filter(|&&w| w != 0.0).count()).sum()
    }

    pub fn intra_edge_count(&self) -> usize {
        self.intra.iter().filter(|&&w| w != 0.0).count()
    }

    /// Zero every entry with `|w| < edge_threshold` and the intra diagonal.
    pub fn apply_threshold(&mut self) {
        let t = self.edge_threshold;
        let m = self.node_count();
        for i in 0..m {
            self.intra[(i, i)] = 0.0;
        }
        self.intra.iter_mut().chain(self.lags.iter_mut().flat_map(|l| l.iter_mut())).for_each(|w| {
            if w.abs() < t {
                *w = 0.0;
            }
        });
    }

    pub fn is_acyclic(&self) -> bool {
        topological_order(&self.intra).is_some()
    }

    /// First directed cycle of the intra block found by depth-first search in
    /// ascending node order, as a list of `(source, target)` edges.
    pub fn find_cycle(&self) -> Option<Vec<(usize, usize)>> {
        find_cycle(&self.intra)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.blocks().any(|(_, m)| m.iter().any(|w| !w.is_finite())) {
            return Err(Error::invalid("graph contains non-finite weights"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<GraphJson>(text)?.try_into()
    }

    /// Same node set (by identifier and order).
    pub fn same_nodes(&self, other: &CausalGraph) -> Result<()> {
        if self.node_ids != other.node_ids {
            return Err(Error::NodeMismatch(format!(
                "{:?} vs {:?}",
                self.node_ids, other.node_ids
            )));
        }
        Ok(())
    }

    /// Node indices with an intra edge touching them.
    pub fn touched_nodes(&self) -> BTreeSet<usize> {
        self.edges()
            .into_iter()
            .filter(|e| e.block == Block::Intra)
            .flat_map(|e| [e.source, e.target])
            .collect()
    }
}

/// Kahn ordering of the nonzero pattern of a square matrix; `None` if cyclic.
pub fn topological_order(adj: &DMatrix<f64>) -> Option<Vec<usize>> {
    let m = adj.nrows();
    let mut indeg: Vec<usize> = (0..m)
        .map(|j| (0..m).filter(|&i| adj[(i, j)] != 0.0).count())
        .collect();
    let mut ready: BTreeSet<usize> = (0..m).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for v in 0..m {
            if adj[(u, v)] != 0.0 {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
    }
    (order.len() == m).then_some(order)
}

pub fn find_cycle(adj: &DMatrix<f64>) -> Option<Vec<(usize, usize)>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnStack,
        Done,
    }
    let m = adj.nrows();
    let mut mark = vec![Mark::New; m];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..m {
        if mark[root] != Mark::New {
            continue;
        }
        mark[root] = Mark::OnStack;
        stack.push((root, 0));
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < m {
                let v = *next;
                *next += 1;
                if adj[(u, v)] == 0.0 {
                    continue;
                }
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::OnStack;
                        stack.push((v, 0));
                    }
                    Mark::OnStack => {
                        let start = stack.iter().position(|&(n, _)| n == v).unwrap();
                        let nodes: Vec<usize> = stack[start..].iter().map(|&(n, _)| n).collect();
                        let mut cycle: Vec<(usize, usize)> = nodes.windows(2).map(|w| (w[0], w[1])).collect();
                        cycle.push((u, v));
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    source: String,
    target: String,
    block: String,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    node_ids: Vec<String>,
    max_lag: usize,
    edge_threshold: f64,
    edges: Vec<EdgeJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<FitDiagnostics>,
}

impl From<&CausalGraph> for GraphJson {
    fn from(g: &CausalGraph) -> Self {
        GraphJson {
            node_ids: g.node_ids.clone(),
            max_lag: g.max_lag(),
            edge_threshold: g.edge_threshold,
            edges: g
                .edges()
                .into_iter()
                .map(|e| EdgeJson {
                    source: g.node_ids[e.source].clone(),
                    target: g.node_ids[e.target].clone(),
                    block: e.block.to_string(),
                    weight: e.weight,
                })
                .collect(),
            diagnostics: g.diagnostics.clone(),
        }
    }
}

impl TryFrom<GraphJson> for CausalGraph {
    type Error = Error;

    fn try_from(j: GraphJson) -> Result<Self> {
        let mut g = CausalGraph::empty(j.node_ids, j.max_lag, j.edge_threshold);
        g.diagnostics = j.diagnostics;
        for e in j.edges {
            let lookup = |id: &str| {
                g.node_index(id)
                    .ok_or_else(|| Error::NodeMismatch(format!("edge endpoint `{id}` not a node")))
            };
            let (s, t) = (lookup(&e.source)?, lookup(&e.target)?);
            let block: Block = e.block.parse()?;
            let mat = match block {
                Block::Intra => &mut g.intra,
                Block::Lag(l) if l <= g.lags.len() => &mut g.lags[l - 1],
                Block::Lag(l) => return Err(Error::invalid(format!("lag {l} exceeds max_lag"))),
            };
            mat[(s, t)] = e.weight;
        }
        g.check_finite()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn cycle_detection() {
        let mut g = CausalGraph::empty(ids(3), 0, 0.1);
        g.intra[(0, 1)] = 1.0;
        g.intra[(1, 2)] = 1.0;
        assert!(g.is_acyclic());
        assert!(g.find_cycle().is_none());
        g.intra[(2, 0)] = 1.0;
        assert!(!g.is_acyclic());
        assert_eq!(g.find_cycle().unwrap(), vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn threshold_zeroes_small_and_diagonal() {
        let mut g = CausalGraph::empty(ids(2), 1, 0.1);
        g.intra[(0, 1)] = 0.05;
        g.intra[(1, 1)] = 0.5;
        g.lags[0][(0, 0)] = -0.3;
        g.apply_threshold();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].block, Block::Lag(1));
    }

    #[test]
    fn json_round_trip_exact() {
        let mut g = CausalGraph::empty(ids(3), 2, 0.1);
        g.intra[(0, 2)] = 0.123_456_789_012_345_68;
        g.lags[1][(2, 1)] = -1.0 / 3.0;
        g.diagnostics = Some(FitDiagnostics {
            acyclicity: 1.0e-17,
            outer_iterations: 3,
            inner_iterations: 40,
            objective: 0.7,
            converged: true,
            cycle_edges_removed: 0,
        });
        let back = CausalGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn json_rejects_unknown_node() {
        let text = r#"{"node_ids":["a"],"max_lag":0,"edge_threshold":0.1,
            "edges":[{"source":"a","target":"b","block":"intra","weight":1.0}]}"#;
        assert!(CausalGraph::from_json(text).is_err());
    }
}
