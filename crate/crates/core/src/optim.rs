//! Limited-memory BFGS for smooth unconstrained problems.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm is at most this.
    pub grad_tol: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 5000,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: `-H g` from the stored curvature pairs.
fn direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `f`, which returns the value and writes the gradient.
///
/// Steps are accepted by the Armijo condition, or near the optimum where
/// function values stop resolving, by the approximate Wolfe test on
/// directional derivatives.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, params: &LbfgsParams) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for iter in 0..params.max_iter {
        let gn = norm(&g);
        if gn <= params.grad_tol {
            return Ok(Minimum { x, value: fx, grad_norm: gn, iterations: iter });
        }
        let mut d = direction(&g, &pairs);
        let mut gd = dot(&g, &d);
        if gd >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            gd = -gn * gn;
        }
        let mut step = if pairs.is_empty() { (1.0 / gn).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..80 {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() {
                let gd_new = dot(&g_new, &d);
                let armijo = f_new <= fx + 1e-4 * step * gd;
                let approx_wolfe = f_new <= fx + 1e-10 * fx.abs().max(1.0) && gd_new >= 0.9 * gd && gd_new <= -0.8 * gd;
                if armijo || approx_wolfe {
                    let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
                        if pairs.len() == params.memory {
                            pairs.pop_front();
                        }
                        pairs.push_back((s, y, 1.0 / sy));
                    }
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    fx = f_new;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if pairs.is_empty() {
                return Err(Error::NotConverged { iterations: iter, grad_norm: gn });
            }
            pairs.clear();
        }
    }
    let gn = norm(&g);
    if gn <= params.grad_tol {
        Ok(Minimum { x, value: fx, grad_norm: gn, iterations: params.max_iter })
    } else {
        Err(Error::NotConverged { iterations: params.max_iter, grad_norm: gn })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let m = minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 20.0 * (x[1] + 1.0);
                (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2)
            },
            vec![0.0, 0.0],
            &LbfgsParams::default(),
        )
        .unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-6 && (m.x[1] + 1.0).abs() < 1e-6);
        assert!(m.grad_norm <= 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsParams::default(),
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn reports_non_convergence() {
        let r = minimize(
            |x, g| {
                g[0] = 1.0;
                x[0]
            },
            vec![0.0],
            &LbfgsParams { max_iter: 5, ..Default::default() },
        );
        assert!(matches!(r, Err(Error::NotConverged { .. })));
    }
}
