//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
    pub converged: bool,
    /// Set when the line search could not make progress before convergence.
    pub stalled: bool,
}

pub struct Lbfgs {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub memory: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Lbfgs {
    /// Minimizes `f`, which returns the objective and its gradient.
    pub fn minimize<F>(&self, f: F, x0: Vec<f64>) -> (Vec<f64>, OptimizerReport)
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>),
    {
        let mut x = x0;
        let (mut fx, mut g) = f(&x);
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(self.memory);
        let mut report = OptimizerReport {
            iterations: 0,
            gradient_norm: norm(&g),
            objective: fx,
            converged: false,
            stalled: false,
        };
        while report.iterations < self.max_iterations {
            let gnorm = norm(&g);
            report.gradient_norm = gnorm;
            if gnorm <= self.tolerance {
                report.converged = true;
                break;
            }
            let mut d = two_loop(&g, &history);
            let mut gd = dot(&g, &d);
            // Not a descent direction, or NaN.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(gd < 0.0) {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                gd = -gnorm * gnorm;
            }
            let mut step = if history.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
            // Slack for objective values that agree to rounding error.
            let slack = 4.0 * f64::EPSILON * fx.abs().max(1.0);
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                let (f_new, g_new) = f(&x_new);
                if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * gd + slack {
                    accepted = Some((x_new, f_new, g_new));
                    break;
                }
                step *= 0.5;
            }
            report.iterations += 1;
            let Some((x_new, f_new, g_new)) = accepted else {
                report.stalled = true;
                break;
            };
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                if history.len() == self.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
            x = x_new;
            fx = f_new;
            g = g_new;
        }
        report.gradient_norm = norm(&g);
        report.converged = report.gradient_norm <= self.tolerance;
        report.objective = fx;
        (x, report)
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
