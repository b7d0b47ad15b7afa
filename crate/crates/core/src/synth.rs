//! Synthetic CPS-like streams drawn from a linear temporal SEM, with scripted
//! attack episodes and ground-truth graphs.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::discovery::{acyclicity_value, topological_order, CausalGraph};
use crate::stream::{segment, PriorKnowledge, Series, SeriesSchema, WindowedStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Drop every intra parent of each attacked node and drive it from
    /// `source` with the given weight instead.
    EdgeRewire { source: usize, weight: f64 },
    /// Add `delta` to the structural equation of each attacked node.
    MeanShift { delta: f64 },
    /// Scale every incoming (intra and lagged) weight of each attacked node.
    WeightScale { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEpisode {
    pub start_window: usize,
    /// Inclusive.
    pub end_window: usize,
    pub nodes: Vec<usize>,
    pub perturbation: Perturbation,
}

impl AttackEpisode {
    pub fn covers(&self, window: usize) -> bool {
        (self.start_window..=self.end_window).contains(&window)
    }
}

/// Weighted edge `source -> target`; `lag == 0` is contemporaneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemEdge {
    pub source: usize,
    pub target: usize,
    #[serde(default)]
    pub lag: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub feature_count: usize,
    pub lag_order: usize,
    pub edges: Vec<SemEdge>,
    pub noise_scale: f64,
    #[serde(default)]
    pub episodes: Vec<AttackEpisode>,
    pub seed: u64,
}

/// Coefficients of one regime of the SEM.
#[derive(Debug, Clone)]
struct Regime {
    intra: DMatrix<f64>,
    lags: Vec<DMatrix<f64>>,
    shift: DVector<f64>,
    order: Vec<usize>,
}

impl ScenarioSpec {
    pub fn node_ids(&self) -> Vec<String> {
        SeriesSchema::numbered(self.feature_count).feature_names
    }

    pub fn true_intra(&self) -> DMatrix<f64> {
        let m = self.feature_count;
        let mut a = DMatrix::zeros(m, m);
        for e in self.edges.iter().filter(|e| e.lag == 0) {
            a[(e.source, e.target)] = e.weight;
        }
        a
    }

    pub fn true_lags(&self) -> Vec<DMatrix<f64>> {
        let m = self.feature_count;
        let mut lags = vec![DMatrix::zeros(m, m); self.lag_order];
        for e in self.edges.iter().filter(|e| e.lag > 0) {
            lags[e.lag - 1][(e.source, e.target)] = e.weight;
        }
        lags
    }

    /// Ground-truth graph of the unperturbed system.
    pub fn true_graph(&self, edge_threshold: f64) -> CausalGraph {
        CausalGraph {
            node_ids: self.node_ids(),
            intra: self.true_intra(),
            lags: self.true_lags(),
            edge_threshold,
            diagnostics: None,
        }
    }

    fn base_regime(&self) -> Regime {
        let intra = self.true_intra();
        Regime {
            order: topological_order(&intra).unwrap_or_default(),
            intra,
            lags: self.true_lags(),
            shift: DVector::zeros(self.feature_count),
        }
    }

    fn regime_for(&self, episode: Option<&AttackEpisode>) -> Regime {
        let mut r = self.base_regime();
        let Some(ep) = episode else { return r };
        for &a in &ep.nodes {
            match ep.perturbation {
                Perturbation::EdgeRewire { source, weight } => {
                    r.intra.column_mut(a).fill(0.0);
                    r.intra[(source, a)] = weight;
                }
                Perturbation::MeanShift { delta } => r.shift[a] += delta,
                Perturbation::WeightScale { gamma } => {
                    r.intra.column_mut(a).scale_mut(gamma);
                    for l in r.lags.iter_mut() {
                        l.column_mut(a).scale_mut(gamma);
                    }
                }
            }
        }
        r.order = topological_order(&r.intra).unwrap_or_default();
        r
    }

    /// Check structure, episodes and stability of every regime.
    pub fn validate(&self, n_windows: usize) -> Result<()> {
        let m = self.feature_count;
        if m == 0 {
            return Err(Error::invalid("scenario needs at least one feature"));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::invalid("noise_scale must be positive"));
        }
        for e in &self.edges {
            if e.source >= m || e.target >= m || e.lag > self.lag_order || !e.weight.is_finite() {
                return Err(Error::invalid(format!("bad SEM edge {e:?}")));
            }
            if e.lag == 0 && e.source == e.target {
                return Err(Error::invalid("contemporaneous self-loop"));
            }
        }
        let intra = self.true_intra();
        if acyclicity_value(&intra) != 0.0 || topological_order(&intra).is_none() {
            return Err(Error::invalid("contemporaneous graph is cyclic"));
        }
        let mut episodes: Vec<&AttackEpisode> = self.episodes.iter().collect();
        episodes.sort_by_key(|e| e.start_window);
        for pair in episodes.windows(2) {
            if pair[1].start_window <= pair[0].end_window {
                return Err(Error::invalid("attack episodes overlap"));
            }
        }
        for ep in &episodes {
            if ep.start_window > ep.end_window || ep.end_window >= n_windows {
                return Err(Error::invalid(format!(
                    "episode {}..={} outside stream of {n_windows} windows",
                    ep.start_window, ep.end_window
                )));
            }
            if ep.nodes.is_empty() || ep.nodes.iter().any(|&a| a >= m) {
                return Err(Error::invalid("episode nodes out of range"));
            }
            if let Perturbation::EdgeRewire { source, .. } = ep.perturbation {
                if source >= m || ep.nodes.contains(&source) {
                    return Err(Error::invalid("rewire source must be a distinct valid node"));
                }
            }
            let r = self.regime_for(Some(ep));
            if r.order.len() != m {
                return Err(Error::invalid("perturbed contemporaneous graph is cyclic"));
            }
            check_stable(&r)?;
        }
        check_stable(&self.base_regime())
    }

    /// Attacked nodes (plus rewire sources) and their direct descendants.
    pub fn prior_knowledge(&self) -> PriorKnowledge {
        let ids = self.node_ids();
        let mut attack = BTreeSet::new();
        let mut impact = BTreeSet::new();
        let base_intra = self.true_intra();
        let base_lags = self.true_lags();
        for ep in &self.episodes {
            let r = self.regime_for(Some(ep));
            for &a in &ep.nodes {
                attack.insert(a);
                for j in 0..self.feature_count {
                    let child = base_intra[(a, j)] != 0.0
                        || r.intra[(a, j)] != 0.0
                        || base_lags.iter().chain(&r.lags).any(|l| l[(a, j)] != 0.0);
                    if child && j != a {
                        impact.insert(j);
                    }
                }
            }
            if let Perturbation::EdgeRewire { source, .. } = ep.perturbation {
                attack.insert(source);
            }
        }
        let impact: BTreeSet<usize> = impact.difference(&attack).copied().collect();
        PriorKnowledge::new(
            attack.iter().map(|&i| ids[i].clone()),
            impact.iter().map(|&i| ids[i].clone()),
        )
    }

    fn episode_at(&self, window: usize) -> Option<&AttackEpisode> {
        self.episodes.iter().find(|e| e.covers(window))
    }

    /// Default 8-node, lag-1 scenario with three attack episodes over 60 windows.
    pub fn default_scenario(seed: u64) -> Self {
        ScenarioSpec {
            feature_count: 8,
            lag_order: 1,
            edges: default_edges(),
            noise_scale: 1.0,
            episodes: vec![
                AttackEpisode {
                    start_window: 8,
                    end_window: 13,
                    nodes: vec![3],
                    perturbation: Perturbation::EdgeRewire { source: 6, weight: 1.5 },
                },
                AttackEpisode {
                    start_window: 20,
                    end_window: 25,
                    nodes: vec![3],
                    perturbation: Perturbation::WeightScale { gamma: 2.0 },
                },
                AttackEpisode {
                    start_window: 40,
                    end_window: 45,
                    nodes: vec![3],
                    perturbation: Perturbation::EdgeRewire { source: 6, weight: 1.5 },
                },
            ],
            seed,
        }
    }
}

fn default_edges() -> Vec<SemEdge> {
    let e = |source, target, lag, weight| SemEdge {
        source,
        target,
        lag,
        weight,
    };
    vec![
        e(0, 1, 0, 0.8),
        e(1, 2, 0, -0.7),
        e(1, 3, 0, 0.9),
        e(2, 4, 0, 0.8),
        e(3, 5, 0, 0.8),
        e(4, 5, 0, -0.6),
        e(6, 7, 0, 0.9),
        e(5, 7, 0, 0.5),
        e(0, 0, 1, 0.5),
        e(3, 3, 1, 0.4),
        e(6, 6, 1, 0.6),
        e(2, 2, 1, 0.3),
    ]
}

/// Spectral radius of the reduced-form VAR companion matrix.
fn spectral_radius(r: &Regime) -> Result<f64> {
    let m = r.intra.nrows();
    let p = r.lags.len();
    if p == 0 {
        return Ok(0.0);
    }
    let inv = (DMatrix::identity(m, m) - r.intra.transpose())
        .try_inverse()
        .ok_or_else(|| Error::invalid("I - A_X is singular"))?;
    let mut comp = DMatrix::zeros(m * p, m * p);
    for (l, a) in r.lags.iter().enumerate() {
        comp.view_mut((0, l * m), (m, m)).copy_from(&(&inv * a.transpose()));
    }
    for l in 1..p {
        comp.view_mut((l * m, (l - 1) * m), (m, m)).fill_with_identity();
    }
    Ok(comp
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn check_stable(r: &Regime) -> Result<()> {
    let rho = spectral_radius(r)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    Ok(())
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    /// Raw samples with per-row labels.
    pub series: Series,
    pub stream: WindowedStream,
    /// Graph of the regime active in each window.
    pub truth: Vec<CausalGraph>,
    pub prior: PriorKnowledge,
}

/// Draw `n_windows * k` samples. Rows inside an attack episode are labeled 1.
pub fn generate(spec: &ScenarioSpec, n_windows: usize, k: usize) -> Result<Generated> {
    spec.validate(n_windows)?;
    let m = spec.feature_count;
    let p = spec.lag_order;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = spec.base_regime();
    let regimes: Vec<Regime> = spec.episodes.iter().map(|e| spec.regime_for(Some(e))).collect();
    let regime_at = |w: usize| -> &Regime {
        spec.episodes
            .iter()
            .position(|e| e.covers(w))
            .map_or(&base, |i| &regimes[i])
    };

    let burn_in = 200 * (p + 1);
    let total = n_windows * k;
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(m); p];
    let mut rows = Vec::with_capacity(total * m);
    let mut labels = Vec::with_capacity(total);
    for step in 0..burn_in + total {
        let (regime, label) = if step < burn_in {
            (&base, 0u8)
        } else {
            let w = (step - burn_in) / k;
            (regime_at(w), u8::from(spec.episode_at(w).is_some()))
        };
        let noise: Vec<f64> = (0..m)
            .map(|_| spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut x = DVector::zeros(m);
        for &j in &regime.order {
            let mut v = regime.shift[j] + noise[j];
            for i in 0..m {
                v += regime.intra[(i, j)] * x[i];
            }
            for (l, a) in regime.lags.iter().enumerate() {
                let past = &history[history.len() - 1 - l];
                for i in 0..m {
                    v += a[(i, j)] * past[i];
                }
            }
            x[j] = v;
        }
        if step >= burn_in {
            rows.extend(x.iter().copied());
            labels.push(label);
        }
        if p > 0 {
            history.remove(0);
            history.push(x);
        }
    }

    let schema = SeriesSchema::numbered(m);
    let series = Series::new(schema, DMatrix::from_row_slice(total, m, &rows), Some(labels))?;
    let stream = segment(&series, k, None)?;
    let truth = (0..n_windows)
        .map(|w| {
            let r = regime_at(w);
            CausalGraph {
                node_ids: spec.node_ids(),
                intra: r.intra.clone(),
                lags: r.lags.clone(),
                edge_threshold: 0.0,
                diagnostics: None,
            }
        })
        .collect();
    Ok(Generated {
        series,
        stream,
        truth,
        prior: spec.prior_knowledge(),
    })
}

/// Random acyclic SEM: a random node order, each forward pair connected with
/// probability `density`, weights `±U[lo, hi]`; one self-lag per node plus
/// sparse cross-lags with weights `±U[0.2, 0.4]`. Resamples until stable.
pub fn random_scenario(m: usize, p: usize, density: f64, weight_range: (f64, f64), seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    loop {
        let mut order: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut edges = Vec::new();
        let signed = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            let w = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                w
            } else {
                -w
            }
        };
        for a in 0..m {
            for b in a + 1..m {
                if rng.random_bool(density) {
                    let w = signed(&mut rng, weight_range.0, weight_range.1);
                    edges.push(SemEdge {
                        source: order[a],
                        target: order[b],
                        lag: 0,
                        weight: w,
                    });
                }
            }
        }
        for l in 1..=p {
            for i in 0..m {
                if l == 1 {
                    let w = rng.random_range(0.3..0.5);
                    edges.push(SemEdge { source: i, target: i, lag: 1, weight: w });
                }
                for j in 0..m {
                    if i != j && rng.random_bool(density / (2.0 * l as f64)) {
                        let w = signed(&mut rng, 0.3, 0.5);
                        edges.push(SemEdge { source: i, target: j, lag: l, weight: w });
                    }
                }
            }
        }
        let spec = ScenarioSpec {
            feature_count: m,
            lag_order: p,
            edges,
            noise_scale: 1.0,
            episodes: Vec::new(),
            seed,
        };
        if spec.validate(1).is_ok() && spectral_radius(&spec.base_regime()).is_ok_and(|r| r < 0.9) {
            return spec;
        }
    }
}
