//! BFGS ascent with Armijo backtracking inside a box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient infinity norm fell below `tol_g`.
    Gradient,
    /// Relative change of the objective fell below `tol_f`.
    FunctionChange,
    MaxIterations,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations)
    }
}

#[derive(Clone, Debug)]
pub struct BfgsSettings {
    pub tol_g: f64,
    pub tol_f: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct BfgsOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub iterations: usize,
    pub reason: StopReason,
    /// Objective after each accepted step, starting with the initial point.
    pub history: Vec<T>,
}

const ARMIJO_C1: f64 = 1e-4;

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn clamp<T: Scalar>(v: T, bound: T) -> T {
    v.max(-bound).min(bound)
}

/// Maximizes `objective`, which returns the value and its gradient.
///
/// Steps are projected onto `[-bound, bound]` in every coordinate. If the
/// quasi-Newton direction fails the line search the inverse Hessian
/// approximation is reset and steepest ascent is tried once before giving up
/// with [`Error::OptimizerStall`].
pub fn maximize_bfgs<T, F>(x0: &[T], mut objective: F, settings: &BfgsSettings) -> Result<BfgsOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let n = x0.len();
    let bound = T::lit(settings.bound);
    let tol_g = T::lit(settings.tol_g);
    let tol_f = T::lit(settings.tol_f);
    let c1 = T::lit(ARMIJO_C1);

    let mut x: Vec<T> = x0.iter().map(|v| clamp(*v, bound)).collect();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization(format!("{f}")));
    }
    let mut history = vec![f];
    if n == 0 || inf_norm(&g) < tol_g {
        return Ok(BfgsOutcome {
            x,
            value: f,
            gradient: g,
            iterations: 0,
            reason: StopReason::Gradient,
            history,
        });
    }

    let mut h = Matrix::identity(n);
    let mut fresh = true;
    for iter in 1..=settings.max_iter {
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = h.matvec(&g);
            if !(dot(&g, &d) > T::zero()) || d.iter().any(|v| !v.is_finite()) {
                h = Matrix::identity(n);
                fresh = true;
                d = g.clone();
            }
            if fresh {
                // Keep the first steepest-ascent step at unit length.
                let norm = inf_norm(&d);
                if norm > T::one() {
                    d.iter_mut().for_each(|v| *v = *v / norm);
                }
            }
            let mut alpha = T::one();
            for _ in 0..=settings.max_backtracks {
                let trial: Vec<T> = x.iter().zip(&d).map(|(xi, di)| clamp(*xi + alpha * *di, bound)).collect();
                let step: Vec<T> = trial.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                if let Ok((ft, gt)) = objective(&trial) {
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft >= f + c1 * dot(&g, &step) {
                        accepted = Some((trial, step, ft, gt));
                        break;
                    }
                }
                alpha = alpha * T::lit(0.5);
            }
            if accepted.is_some() || (attempt == 0 && fresh) {
                break;
            }
            h = Matrix::identity(n);
            fresh = true;
        }
        let Some((x_new, s, f_new, g_new)) = accepted else {
            return Err(Error::OptimizerStall {
                iterations: iter - 1,
                best_ll: f.as_f64(),
                best_point: x.iter().map(|v| v.as_f64()).collect(),
            });
        };

        // Curvature pair for the minimization of -f.
        let y: Vec<T> = g.iter().zip(&g_new).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        let ss = dot(&s, &s);
        if sy > T::lit(1e-12) * (ss * yy).sqrt() {
            if fresh {
                h = Matrix::identity(n);
                let scale = sy / yy;
                for i in 0..n {
                    h[(i, i)] = scale;
                }
                fresh = false;
            }
            let hy = h.matvec(&y);
            let yhy = dot(&y, &hy);
            let rho = T::one() / sy;
            let coef = (T::one() + rho * yhy) * rho;
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] = h[(i, j)] - rho * (hy[i] * s[j] + s[i] * hy[j]) + coef * s[i] * s[j];
                }
            }
        }

        let rel_change = (f_new - f).abs() / f.abs().max(T::one());
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);

        let reason = if inf_norm(&g) < tol_g {
            Some(StopReason::Gradient)
        } else if rel_change < tol_f {
            Some(StopReason::FunctionChange)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(BfgsOutcome {
                x,
                value: f,
                gradient: g,
                iterations: iter,
                reason,
                history,
            });
        }
    }
    Ok(BfgsOutcome {
        x,
        value: f,
        gradient: g,
        iterations: settings.max_iter,
        reason: StopReason::MaxIterations,
        history,
    })
}
