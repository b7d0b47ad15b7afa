//! Early-symptom trigger: compare consecutive window graphs through the
//! Jensen-Shannon divergence of their edge-weight histograms.

use serde::{Deserialize, Serialize};

use crate::discovery::CausalGraph;
use crate::{Error, Result};

/// Laplace-smoothed histogram over fixed bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightHistogram {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Number of values binned (before smoothing).
    pub count: usize,
}

impl EdgeWeightHistogram {
    /// Bin `values` into `bins` equal-width bins over `[lo, hi]`, clamping
    /// out-of-range values to the end bins, then add one to every bin count
    /// and normalize.
    pub fn from_values(values: impl IntoIterator<Item = f64>, bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
        }
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![1.0; bins];
        let mut count = 0;
        for v in values {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite histogram value"));
            }
            let idx = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[idx] += 1.0;
            count += 1;
        }
        let total = (count + bins) as f64;
        Ok(EdgeWeightHistogram {
            bin_edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            probabilities: counts.into_iter().map(|c| c / total).collect(),
            count,
        })
    }

    /// Wrap explicit probabilities. They must be non-negative and sum to 1.
    pub fn from_probabilities(bin_edges: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if bin_edges.len() != probabilities.len() + 1 || probabilities.len() < 2 {
            return Err(Error::invalid("need B+1 edges for B >= 2 probabilities"));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("probabilities must be non-negative"));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(EdgeWeightHistogram {
            bin_edges,
            probabilities,
            count: 0,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.probabilities.len()
    }

    /// True when nothing was binned and the histogram is smoothing only.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Histogram of absolute weights of every edge (intra and lagged) of `graph`.
pub fn edge_weight_histogram(graph: &CausalGraph, bins: usize, range: (f64, f64)) -> Result<EdgeWeightHistogram> {
    EdgeWeightHistogram::from_values(graph.edges().into_iter().map(|e| e.weight.abs()), bins, range.0, range.1)
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn js_divergence(p: &EdgeWeightHistogram, q: &EdgeWeightHistogram) -> Result<f64> {
    if p.bin_edges != q.bin_edges {
        return Err(Error::BinMismatch);
    }
    let m: Vec<f64> = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    let js = 0.5 * kl2(&p.probabilities, &m) + 0.5 * kl2(&q.probabilities, &m);
    Ok(js.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Fire when similarity drops below this.
    pub similarity_threshold: f64,
    pub bins: usize,
    /// Upper end of the histogram range; the lower end is 0.
    pub weight_max: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            similarity_threshold: 0.9,
            bins: 20,
            weight_max: 2.0,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(Error::Config("similarity_threshold must lie in (0, 1)".into()));
        }
        if self.bins < 2 || !(self.weight_max > 0.0) {
            return Err(Error::Config("trigger needs >= 2 bins and a positive weight_max".into()));
        }
        Ok(())
    }

    pub fn histogram(&self, graph: &CausalGraph) -> Result<EdgeWeightHistogram> {
        edge_weight_histogram(graph, self.bins, (0.0, self.weight_max))
    }
}

/// `1 - JS` of the two graphs' edge-weight histograms.
pub fn similarity(a: &CausalGraph, b: &CausalGraph, config: &TriggerConfig) -> Result<f64> {
    a.same_nodes(b)?;
    Ok(1.0 - js_divergence(&config.histogram(a)?, &config.histogram(b)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerDecision {
    NoTrigger,
    Triggered { window: usize },
}

/// One trigger evaluation, as written to the pipeline log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub window: usize,
    /// `None` for the first graph, which has no predecessor.
    pub similarity: Option<f64>,
    pub threshold: f64,
    pub fired: bool,
}

#[derive(Debug, Clone)]
pub struct TriggerState {
    pub config: TriggerConfig,
    pub last_graph: Option<CausalGraph>,
    pub fired_at: Option<usize>,
}

impl TriggerState {
    pub fn new(config: TriggerConfig) -> Result<Self> {
        config.validate()?;
        Ok(TriggerState {
            config,
            last_graph: None,
            fired_at: None,
        })
    }

    /// Compare `graph` with the last recorded one. Fires when the similarity
    /// is below the threshold; the reference graph is only replaced when the
    /// trigger does not fire.
    pub fn check(&mut self, window: usize, graph: &CausalGraph) -> Result<(TriggerDecision, TriggerEvent)> {
        let threshold = self.config.similarity_threshold;
        let Some(last) = &self.last_graph else {
            self.last_graph = Some(graph.clone());
            let event = TriggerEvent {
                window,
                similarity: None,
                threshold,
                fired: false,
            };
            return Ok((TriggerDecision::NoTrigger, event));
        };
        let sim = similarity(last, graph, &self.config)?;
        let fired = sim < threshold;
        if fired {
            self.fired_at = Some(window);
        } else {
            self.last_graph = Some(graph.clone());
        }
        let event = TriggerEvent {
            window,
            similarity: Some(sim),
            threshold,
            fired,
        };
        let decision = if fired {
            TriggerDecision::Triggered { window }
        } else {
            TriggerDecision::NoTrigger
        };
        Ok((decision, event))
    }

    /// Return to detection with `graph` as the new normal reference.
    pub fn reset(&mut self, graph: Option<CausalGraph>) {
        self.last_graph = graph;
        self.fired_at = None;
    }
}
