//! Limited-memory BFGS with box constraints, by gradient projection.
//!
//! Variables sitting on a bound with the gradient pushing outward are frozen
//! for the iteration; the two-loop recursion runs on the remaining free set and
//! the step is projected back onto the box during a backtracking search.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub pg_tolerance: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 2000,
            pg_tolerance: 1e-7,
            f_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| ((xi - gi).clamp(lo, hi) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimize `f` over the box `[lower, upper]`. `f` writes the gradient into its
/// second argument and returns the objective.
pub fn minimize<F>(
    mut f: F,
    x0: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    let mut x = x0;
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut free = vec![true; n];
    let mut alpha = vec![0.0; opts.memory];

    for iter in 0..opts.max_iterations {
        if projected_gradient_norm(&x, &g, lower, upper) < opts.pg_tolerance {
            return LbfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }

        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }

        // Two-loop recursion on the free subspace.
        for i in 0..n {
            dir[i] = if free[i] { g[i] } else { 0.0 };
        }
        for (j, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[j] = a;
            for i in 0..n {
                if free[i] {
                    dir[i] -= a * y[i];
                }
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (j, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for i in 0..n {
                if free[i] {
                    dir[i] += s[i] * (alpha[j] - b);
                }
            }
        }
        for i in 0..n {
            dir[i] = if free[i] { -dir[i] } else { 0.0 };
        }

        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            for i in 0..n {
                dir[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                return LbfgsResult {
                    x,
                    value: fx,
                    iterations: iter,
                    converged: true,
                };
            }
        }

        let mut step = if history.is_empty() {
            let gmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            (1.0 / gmax).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        let mut fx_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            project(&mut x_new, lower, upper);
            let decrease: f64 = g.iter().zip(x_new.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            fx_new = f(&x_new, &mut g_new);
            if fx_new.is_finite() && fx_new <= fx + 1e-4 * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }

        if !accepted {
            if history.is_empty() {
                return LbfgsResult {
                    x,
                    value: fx,
                    iterations: iter,
                    converged: true,
                };
            }
            history.clear();
            continue;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - fx_new) / fx.abs().max(fx_new.abs()).max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = fx_new;
        if rel <= opts.f_tolerance {
            return LbfgsResult {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    LbfgsResult {
        x,
        value: fx,
        iterations: opts.max_iterations,
        converged: false,
    }
}
