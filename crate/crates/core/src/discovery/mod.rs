//! Per-window temporal structure learning.
//!
//! Solves the lagged linear structural equation problem
//!
//! ```text
//! min  1/(2n) ||X - X·W - T·A||_F^2 + λ_W ||W||_1 + λ_A ||A||_1   s.t.  h(W) = 0
//! ```
//!
//! with `h(W) = tr(exp(W∘W)) - M` under an augmented Lagrangian. Each inner
//! problem splits the weights into positive and negative parts so the L1 terms
//! become linear, and is solved with bound-constrained L-BFGS. Only the Gram
//! matrices of `[X | T]` enter the objective, so inner iterations cost nothing
//! in the number of rows.

mod graph;
pub mod lbfgs;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use graph::{find_cycle, topological_order, Block, CausalGraph, Edge, FitDiagnostics};

use crate::{Error, Result};

/// Autoregressive order used when stacking a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec(pub usize);

impl LagSpec {
    /// Validate `p` against a window of `k` rows (`k - p >= 2`).
    pub fn for_window(p: usize, k: usize) -> Result<Self> {
        if k < p + 2 {
            return Err(Error::invalid(format!(
                "max lag {p} too large for window of {k} rows"
            )));
        }
        Ok(LagSpec(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub lambda_intra: f64,
    pub lambda_lag: f64,
    pub edge_threshold: f64,
    pub max_outer_iterations: usize,
    pub acyclicity_tolerance: f64,
    pub max_lag: usize,
    /// Intra edges `(source, target)` that may not appear.
    pub forbidden_intra: Vec<(usize, usize)>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            lambda_intra: 0.1,
            lambda_lag: 0.1,
            edge_threshold: 0.1,
            max_outer_iterations: 100,
            acyclicity_tolerance: 1e-8,
            max_lag: 1,
            forbidden_intra: Vec::new(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_intra >= 0.0 && self.lambda_lag >= 0.0 && self.edge_threshold >= 0.0) {
            return Err(Error::Config("penalties and threshold must be non-negative".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::Config("max_outer_iterations must be positive".into()));
        }
        if !(self.acyclicity_tolerance > 0.0 && self.acyclicity_tolerance <= 1e-6) {
            return Err(Error::Config("acyclicity_tolerance must lie in (0, 1e-6]".into()));
        }
        Ok(())
    }
}

/// Split a `k x M` window into the current block `X` (rows `p..k`) and the
/// lagged block `T` whose row `r` is `[w[r+p-1], w[r+p-2], ..., w[r]]`.
pub fn stack_lags(window: &DMatrix<f64>, lag: LagSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (k, m) = window.shape();
    let p = lag.0;
    if k < p + 2 {
        return Err(Error::invalid(format!(
            "max lag {p} too large for window of {k} rows"
        )));
    }
    let n = k - p;
    let x = window.rows(p, n).into_owned();
    let mut t = DMatrix::zeros(n, p * m);
    for l in 1..=p {
        t.view_mut((0, (l - 1) * m), (n, m))
            .copy_from(&window.rows(p - l, n));
    }
    Ok((x, t))
}

/// `tr(exp(A∘A)) - M`; zero exactly when the weighted digraph is acyclic.
pub fn acyclicity_value(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "acyclicity_value needs a square matrix");
    let e = a.component_mul(a).exp();
    (e.trace() - a.nrows() as f64).max(0.0)
}

/// Value and gradient of the acyclicity surrogate.
pub fn acyclicity_with_gradient(a: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let e = a.component_mul(a).exp();
    let h = e.trace() - a.nrows() as f64;
    let grad = e.transpose().component_mul(a) * 2.0;
    (h, grad)
}

/// Sufficient statistics of `[X | T]`.
struct Moments {
    d: usize,
    q: usize,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    xx: f64,
}

impl Moments {
    fn new(x: &DMatrix<f64>, t: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let d = x.ncols();
        let mut z = DMatrix::zeros(x.nrows(), d + t.ncols());
        z.columns_mut(0, d).copy_from(x);
        if t.ncols() > 0 {
            z.columns_mut(d, t.ncols()).copy_from(t);
        }
        let zt = z.transpose();
        Moments {
            d,
            q: z.ncols(),
            gram: &zt * &z / n,
            cross: &zt * x / n,
            xx: x.norm_squared() / n,
        }
    }

    /// Least-squares loss and its gradient with respect to the stacked `[W; A]`.
    fn loss(&self, b: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let gb = &self.gram * b;
        let loss = 0.5 * (self.xx - 2.0 * b.dot(&self.cross) + b.dot(&gb));
        (loss, gb - &self.cross)
    }
}

fn unpack(vars: &[f64], q: usize, d: usize) -> DMatrix<f64> {
    let half = q * d;
    DMatrix::from_fn(q, d, |r, c| vars[r * d + c] - vars[half + r * d + c])
}

fn l1(b: &DMatrix<f64>, d: usize, lambda_intra: f64, lambda_lag: f64) -> f64 {
    let mut s = 0.0;
    for r in 0..b.nrows() {
        let lam = if r < d { lambda_intra } else { lambda_lag };
        s += lam * b.row(r).iter().map(|v| v.abs()).sum::<f64>();
    }
    s
}

/// Penalized objective `ℓ + λ_W|W|_1 + λ_A|A|_1` of a graph's weights on `(X, T)`.
pub fn penalized_objective(
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    graph: &CausalGraph,
    config: &DiscoveryConfig,
) -> f64 {
    let mom = Moments::new(x, t);
    let b = stacked_weights(graph);
    mom.loss(&b).0 + l1(&b, mom.d, config.lambda_intra, config.lambda_lag)
}

fn stacked_weights(graph: &CausalGraph) -> DMatrix<f64> {
    let d = graph.node_count();
    let mut b = DMatrix::zeros(d * (1 + graph.max_lag()), d);
    b.rows_mut(0, d).copy_from(&graph.intra);
    for (l, a) in graph.lags.iter().enumerate() {
        b.rows_mut(d * (l + 1), d).copy_from(a);
    }
    b
}

/// Fit a temporal causal graph to the stacked blocks of one window.
pub fn fit(
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    node_ids: &[String],
    config: &DiscoveryConfig,
) -> Result<CausalGraph> {
    config.validate()?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::invalid("need at least 2 rows to fit"));
    }
    if node_ids.len() != d {
        return Err(Error::Shape {
            expected: format!("{d} node ids"),
            got: format!("{}", node_ids.len()),
        });
    }
    if t.nrows() != n || !t.ncols().is_multiple_of(d) {
        return Err(Error::Shape {
            expected: format!("{n} x (p*{d}) lag block"),
            got: format!("{} x {}", t.nrows(), t.ncols()),
        });
    }
    if x.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite values in window"));
    }
    let p = t.ncols() / d;
    let mom = Moments::new(x, t);
    let q = mom.q;
    let half = q * d;

    let lower = vec![0.0; 2 * half];
    let mut upper = vec![f64::INFINITY; 2 * half];
    let mut pin = |r: usize, c: usize| {
        upper[r * d + c] = 0.0;
        upper[half + r * d + c] = 0.0;
    };
    for i in 0..d {
        pin(i, i);
    }
    for &(i, j) in &config.forbidden_intra {
        if i < d && j < d {
            pin(i, j);
        }
    }

    let (lam_w, lam_a) = (config.lambda_intra, config.lambda_lag);
    let objective = |vars: &[f64], grad: &mut [f64], rho: f64, alpha: f64| -> f64 {
        let b = unpack(vars, q, d);
        let (loss, mut gl) = mom.loss(&b);
        let w = b.rows(0, d).into_owned();
        let (h, gh) = acyclicity_with_gradient(&w);
        let coef = rho * h + alpha;
        gl.rows_mut(0, d).zip_apply(&gh, |g, v| *g += coef * v);
        let mut reg = 0.0;
        for r in 0..q {
            let lam = if r < d { lam_w } else { lam_a };
            for c in 0..d {
                let idx = r * d + c;
                reg += lam * (vars[idx] + vars[half + idx]);
                grad[idx] = gl[(r, c)] + lam;
                grad[half + idx] = -gl[(r, c)] + lam;
            }
        }
        loss + 0.5 * rho * h * h + alpha * h + reg
    };

    let opts = lbfgs::LbfgsOptions::default();
    let rho_max = 1e16;
    let (mut rho, mut alpha, mut h) = (1.0, 0.0, f64::INFINITY);
    let mut vars = vec![0.0; 2 * half];
    let mut outer = 0;
    let mut inner = 0;
    while outer < config.max_outer_iterations {
        outer += 1;
        let mut candidate;
        let mut h_new;
        loop {
            let res = lbfgs::minimize(
                |v, g| objective(v, g, rho, alpha),
                vars.clone(),
                &lower,
                &upper,
                &opts,
            );
            inner += res.iterations;
            candidate = res.x;
            h_new = acyclicity_value(&unpack(&candidate, q, d).rows(0, d).into_owned());
            if h_new > 0.25 * h && rho < rho_max {
                rho *= 10.0;
            } else {
                break;
            }
        }
        vars = candidate;
        h = h_new;
        alpha += rho * h;
        if h <= config.acyclicity_tolerance || rho >= rho_max {
            break;
        }
    }
    let converged = h <= config.acyclicity_tolerance;

    let b = unpack(&vars, q, d);
    let mut graph = CausalGraph::empty(node_ids.to_vec(), p, config.edge_threshold);
    graph.intra.copy_from(&b.rows(0, d));
    for l in 0..p {
        graph.lags[l].copy_from(&b.rows(d * (l + 1), d));
    }
    graph.apply_threshold();

    let mut removed = 0;
    while let Some(cycle) = graph.find_cycle() {
        let &(i, j) = cycle
            .iter()
            .min_by(|a, b| graph.intra[**a].abs().total_cmp(&graph.intra[**b].abs()))
            .expect("cycle has edges");
        graph.intra[(i, j)] = 0.0;
        removed += 1;
    }

    let b = stacked_weights(&graph);
    graph.diagnostics = Some(FitDiagnostics {
        acyclicity: acyclicity_value(&graph.intra),
        outer_iterations: outer,
        inner_iterations: inner,
        objective: mom.loss(&b).0 + l1(&b, d, lam_w, lam_a),
        converged,
        cycle_edges_removed: removed,
    });
    Ok(graph)
}

/// [`stack_lags`] followed by [`fit`] with `config.max_lag`.
pub fn fit_window(window: &DMatrix<f64>, node_ids: &[String], config: &DiscoveryConfig) -> Result<CausalGraph> {
    let lag = LagSpec::for_window(config.max_lag, window.nrows())?;
    let (x, t) = stack_lags(window, lag)?;
    fit(&x, &t, node_ids, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_one_stacking() {
        let w = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let (x, t) = stack_lags(&w, LagSpec(1)).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(t.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn lag_zero_is_identity() {
        let w = DMatrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64);
        let (x, t) = stack_lags(&w, LagSpec(0)).unwrap();
        assert_eq!(x, w);
        assert_eq!(t.ncols(), 0);
    }

    #[test]
    fn lag_two_shapes_and_order() {
        let w = DMatrix::from_fn(5, 2, |r, c| (10 * r + c) as f64);
        let (x, t) = stack_lags(&w, LagSpec(2)).unwrap();
        assert_eq!(x.shape(), (3, 2));
        assert_eq!(t.shape(), (3, 4));
        // row 0 of T = [w[1], w[0]]
        assert_eq!(t.row(0).iter().copied().collect::<Vec<_>>(), vec![10.0, 11.0, 0.0, 1.0]);
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![20.0, 21.0]);
    }

    #[test]
    fn lag_too_large() {
        let w = DMatrix::<f64>::zeros(3, 2);
        assert!(stack_lags(&w, LagSpec(2)).is_err());
        assert!(LagSpec::for_window(2, 3).is_err());
    }

    #[test]
    fn acyclicity_examples() {
        assert_eq!(acyclicity_value(&DMatrix::zeros(3, 3)), 0.0);
        let two_cycle = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let expect = 2.0 * 1f64.cosh() - 2.0;
        assert!((acyclicity_value(&two_cycle) - expect).abs() < 1e-12);
        let upper = DMatrix::from_fn(5, 5, |i, j| if j > i { 0.7 + 0.1 * (i + j) as f64 } else { 0.0 });
        assert!(acyclicity_value(&upper) < 1e-10);
    }

    #[test]
    fn acyclicity_gradient_matches_finite_differences() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, -0.2, 0.3, 0.0, 0.5, 0.1, -0.6, 0.0]);
        let (_, g) = acyclicity_with_gradient(&a);
        let step = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut ap = a.clone();
                ap[(i, j)] += step;
                let mut am = a.clone();
                am[(i, j)] -= step;
                let fd = (acyclicity_with_gradient(&ap).0 - acyclicity_with_gradient(&am).0) / (2.0 * step);
                assert!((fd - g[(i, j)]).abs() < 1e-7, "({i},{j}) {fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let t = DMatrix::zeros(1, 0);
        assert!(fit(&x, &t, &ids, &DiscoveryConfig::default()).is_err());
        let mut x = DMatrix::from_element(4, 2, 1.0);
        x[(2, 1)] = f64::NAN;
        let t = DMatrix::zeros(4, 0);
        assert!(fit(&x, &t, &ids, &DiscoveryConfig::default()).is_err());
    }
}
