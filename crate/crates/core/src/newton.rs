//! Damped Newton method for square nonlinear systems.
//!
//! Steps come from a dense LU factorization with partial pivoting. When the
//! factorization fails or yields a non-finite step the system is regularized
//! as `J + νI` with `ν` doubling from `tikhonov_nu0`. Step lengths are chosen
//! by Armijo backtracking on `½‖Ψ‖²`. If that search fails or makes no
//! progress, a Levenberg–Marquardt step and then the steepest-descent step
//! are tried from the same iterate.

use std::fmt::Display;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iters: usize,
    pub residual_tol: f64,
    pub stagnation_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub tikhonov_nu0: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 500,
            residual_tol: 1e-7,
            stagnation_tol: 1e-9,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            min_step: 1e-12,
            tikhonov_nu0: 1e-8,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("residual_tol", self.residual_tol),
            ("stagnation_tol", self.stagnation_tol),
            ("armijo_c", self.armijo_c),
            ("min_step", self.min_step),
            ("tikhonov_nu0", self.tikhonov_nu0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(format!("backtrack_factor must lie in (0,1), got {}", self.backtrack_factor));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Stagnated,
    MaxIters,
    StepTooSmall,
    EvalFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub final_residual_norm: f64,
    /// `‖Ψ‖₂` at the start and after every accepted step.
    pub residual_history: Vec<f64>,
    pub termination: Termination,
    /// Message of the last evaluation error, if any occurred.
    pub last_error: Option<String>,
}

fn newton_step(jac: &DMatrix<f64>, rhs: &DVector<f64>, nu0: f64) -> Option<DVector<f64>> {
    let finite = |d: &DVector<f64>| d.iter().all(|v| v.is_finite());
    if let Some(d) = jac.clone().lu().solve(rhs) {
        if finite(&d) {
            return Some(d);
        }
    }
    let mut nu = nu0;
    for _ in 0..80 {
        let mut reg = jac.clone();
        for k in 0..reg.nrows() {
            reg[(k, k)] += nu;
        }
        if let Some(d) = reg.lu().solve(rhs) {
            if finite(&d) {
                return Some(d);
            }
        }
        nu *= 2.0;
    }
    None
}

/// `(JᵀJ + νI)Δ = −Jᵀr` with `ν = ‖r‖`.
fn lm_step(jac: &DMatrix<f64>, grad: &DVector<f64>, norm: f64) -> Option<DVector<f64>> {
    let mut a = jac.tr_mul(jac);
    let nu = norm.max(1e-12);
    for k in 0..a.nrows() {
        a[(k, k)] += nu;
    }
    let d = a.cholesky()?.solve(&(-grad));
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Solves `Ψ(z) = 0` from `z0`.
///
/// `residual` and `jacobian` may fail (e.g. on a domain error); a failing
/// trial point is treated as a rejected step.
pub fn solve<E, R, J>(
    mut residual: R,
    mut jacobian: J,
    z0: &[f64],
    opts: &NewtonOptions,
) -> (Vec<f64>, NewtonStats)
where
    E: Display,
    R: FnMut(&[f64]) -> Result<DVector<f64>, E>,
    J: FnMut(&[f64]) -> Result<DMatrix<f64>, E>,
{
    let mut z = z0.to_vec();
    let mut stats = NewtonStats {
        iterations: 0,
        final_residual_norm: f64::INFINITY,
        residual_history: Vec::new(),
        termination: Termination::MaxIters,
        last_error: None,
    };
    let finish = |mut stats: NewtonStats, z: Vec<f64>, term: Termination| {
        stats.termination = term;
        stats.final_residual_norm = *stats.residual_history.last().unwrap_or(&f64::INFINITY);
        if stats.residual_history.is_empty() {
            stats.residual_history.push(f64::INFINITY);
        }
        (z, stats)
    };

    let mut r = match residual(&z) {
        Ok(r) if r.iter().all(|v| v.is_finite()) => r,
        Ok(_) => {
            stats.last_error = Some("non-finite residual at the starting point".into());
            return finish(stats, z, Termination::EvalFailure);
        }
        Err(e) => {
            stats.last_error = Some(e.to_string());
            return finish(stats, z, Termination::EvalFailure);
        }
    };
    let mut norm = r.norm();
    stats.residual_history.push(norm);

    while stats.iterations < opts.max_iters {
        if norm < opts.residual_tol {
            return finish(stats, z, Termination::Converged);
        }
        let jac = match jacobian(&z) {
            Ok(j) => j,
            Err(e) => {
                stats.last_error = Some(e.to_string());
                return finish(stats, z, Termination::EvalFailure);
            }
        };
        let grad = jac.tr_mul(&r);
        let merit = 0.5 * norm * norm;
        let mut any_finite = false;
        let mut accepted = None;
        // Newton first; near-singular Jacobians give huge steps that the line
        // search cuts to nothing, so a Levenberg–Marquardt step and then steepest
        // descent are tried before giving up on this iterate.
        for kind in 0..3 {
            let dir = match kind {
                0 => newton_step(&jac, &(-&r), opts.tikhonov_nu0),
                1 => lm_step(&jac, &grad, norm),
                _ => Some(-grad.clone()),
            };
            let Some(dir) = dir else { continue };
            let slope = grad.dot(&dir);
            if !(slope < 0.0) {
                continue;
            }
            let mut step = 1.0;
            let found = loop {
                let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                match residual(&trial) {
                    Ok(rt) if rt.iter().all(|v| v.is_finite()) => {
                        any_finite = true;
                        let tn = rt.norm();
                        if 0.5 * tn * tn <= merit + opts.armijo_c * step * slope {
                            break Some((trial, rt, tn));
                        }
                    }
                    Ok(_) => stats.last_error = Some("non-finite residual at trial point".into()),
                    Err(e) => stats.last_error = Some(e.to_string()),
                }
                step *= opts.backtrack_factor;
                if step < opts.min_step {
                    break None;
                }
            };
            if let Some(c) = found {
                let stalls = (norm - c.2).abs() < opts.stagnation_tol && c.2 >= opts.residual_tol;
                let better = accepted.as_ref().is_none_or(|a: &(Vec<f64>, DVector<f64>, f64)| c.2 < a.2);
                if better {
                    accepted = Some(c);
                }
                if !stalls {
                    break;
                }
            }
        }
        if grad.iter().all(|v| *v == 0.0) && accepted.is_none() {
            return finish(stats, z, Termination::Stagnated);
        }
        let Some((zn, rn, nn)) = accepted else {
            let term = if any_finite {
                Termination::StepTooSmall
            } else {
                Termination::EvalFailure
            };
            return finish(stats, z, term);
        };
        let prev = norm;
        z = zn;
        r = rn;
        norm = nn;
        stats.iterations += 1;
        stats.residual_history.push(norm);
        if norm < opts.residual_tol {
            return finish(stats, z, Termination::Converged);
        }
        if (prev - norm).abs() < opts.stagnation_tol {
            return finish(stats, z, Termination::Stagnated);
        }
    }
    let term = if norm < opts.residual_tol {
        Termination::Converged
    } else {
        Termination::MaxIters
    };
    finish(stats, z, term)
}
