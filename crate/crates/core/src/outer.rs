//! The outer relaxation loop: solve `Ψ^{ε,t_k} = 0`, shrink `t`, warm start.
//!
//! Stage `k` uses `t_k = t0·θ_red^k`. A run is converged once the solution of
//! the previous stage already satisfies `‖Ψ^{ε,t_k}‖ < residual_tol` at the
//! new parameter, i.e. further reduction of `t` no longer moves the point.
//! A stage stagnates when its final `‖Ψ‖` moves by less than
//! `stagnation_tol` against the previous stage; two such stages in a row end
//! the run as stagnated. An evaluation failure ends it as failed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbsys::{FbSystem, Iterate, IterateLayout};
use crate::newton::{self, NewtonOptions, Termination};
use crate::problem::ProblemSpec;
use crate::relax::Scheme;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OuterError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("start iterate has length {got}, expected {expected} for scheme {scheme}")]
    Layout {
        got: usize,
        expected: usize,
        scheme: Scheme,
    },
}

/// Optional `ε_k = max(min, factor·t_k)`; off by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub min: f64,
    pub factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub scheme: Scheme,
    pub t0: f64,
    pub t_reduction: f64,
    pub epsilon: f64,
    pub outer_cap: usize,
    pub newton: NewtonOptions,
    pub seed: u64,
    pub eps_schedule: Option<EpsSchedule>,
}

impl SolveOptions {
    pub fn new(scheme: Scheme) -> Self {
        SolveOptions {
            scheme,
            t0: 1e-3,
            t_reduction: 0.05,
            epsilon: 1e-3,
            outer_cap: 50,
            newton: NewtonOptions::default(),
            seed: 0,
            eps_schedule: None,
        }
    }

    pub fn validate(&self) -> Result<(), OuterError> {
        let bad = |m: String| Err(OuterError::Options(m));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if !(self.t_reduction > 0.0 && self.t_reduction < 1.0) {
            return bad(format!("t reduction factor must lie in (0,1), got {}", self.t_reduction));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if self.outer_cap == 0 {
            return bad("outer cap must be at least 1".into());
        }
        if let Some(s) = self.eps_schedule {
            if !(s.min >= 0.0 && s.factor > 0.0) {
                return bad("epsilon schedule needs min >= 0 and factor > 0".into());
            }
        }
        self.newton.validate().map_err(OuterError::Options)
    }

    /// `t_k = t0·θ_red^k`.
    pub fn t_at(&self, k: usize) -> f64 {
        self.t0 * self.t_reduction.powi(k as i32)
    }

    pub fn eps_at(&self, k: usize) -> f64 {
        match self.eps_schedule {
            None => self.epsilon,
            Some(s) => s.min.max(s.factor * self.t_at(k)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterTermination {
    Converged,
    Stagnated,
    MaxOuter,
    EvalFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub t: f64,
    pub eps: f64,
    /// `‖Ψ‖` of the warm start at this stage's `(ε, t)`.
    pub initial_residual_norm: f64,
    pub final_residual_norm: f64,
    pub inner_iterations: usize,
    pub inner_termination: Termination,
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub final_iterate: Iterate,
    pub outer_iterations: usize,
    pub total_inner_iterations: usize,
    pub wall_time: f64,
    pub final_residual_norm: f64,
    pub final_t: f64,
    pub final_eps: f64,
    pub stages: Vec<StageRecord>,
    pub termination: OuterTermination,
    pub diagnostics: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == OuterTermination::Converged
    }

    /// Ended by one of the two stopping tests rather than by the stage cap
    /// or an evaluation failure.
    pub fn stopped(&self) -> bool {
        matches!(self.termination, OuterTermination::Converged | OuterTermination::Stagnated)
    }
}

/// Start iterate: `(x0, y0)` uniform in the start box, all multipliers and
/// `u` equal to one.
pub fn default_start(spec: &ProblemSpec, scheme: Scheme, seed: u64) -> Iterate {
    let layout = IterateLayout::new(spec, scheme);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![1.0; layout.len()];
    for (k, [lo, hi]) in spec.start_box.x.iter().chain(&spec.start_box.y).enumerate() {
        data[k] = if lo < hi { rng.random_range(*lo..=*hi) } else { *lo };
    }
    Iterate { layout, data }
}

/// Runs the relaxation loop from `start`.
pub fn run(
    spec: &ProblemSpec,
    start: &Iterate,
    opts: &SolveOptions,
) -> Result<SolveReport, OuterError> {
    opts.validate()?;
    let scheme = opts.scheme;
    let layout = IterateLayout::new(spec, scheme);
    if start.data.len() != layout.len() || start.layout != layout {
        return Err(OuterError::Layout {
            got: start.data.len(),
            expected: layout.len(),
            scheme,
        });
    }
    let clock = Instant::now();
    let mut z = start.data.clone();
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut termination = OuterTermination::MaxOuter;
    let mut diagnostics = None;
    let mut stagnated_run = 0;

    for k in 0..opts.outer_cap {
        let (t, eps) = (opts.t_at(k), opts.eps_at(k));
        let sys = FbSystem::new(spec, scheme, t, eps).map_err(|e| OuterError::Options(e.to_string()))?;
        let initial = sys.residual(&z).map(|r| r.norm());
        if k > 0 {
            if let Ok(r0) = initial {
                if r0 < opts.newton.residual_tol {
                    stages.push(StageRecord {
                        k,
                        t,
                        eps,
                        initial_residual_norm: r0,
                        final_residual_norm: r0,
                        inner_iterations: 0,
                        inner_termination: Termination::Converged,
                        residual_history: vec![r0],
                    });
                    termination = OuterTermination::Converged;
                    break;
                }
            }
        }
        let (zn, st) = newton::solve(|v: &[f64]| sys.residual(v), |v: &[f64]| sys.jacobian(v), &z, &opts.newton);
        stages.push(StageRecord {
            k,
            t,
            eps,
            initial_residual_norm: initial.unwrap_or(f64::INFINITY),
            final_residual_norm: st.final_residual_norm,
            inner_iterations: st.iterations,
            inner_termination: st.termination,
            residual_history: st.residual_history.clone(),
        });
        if st.termination == Termination::EvalFailure {
            termination = OuterTermination::EvalFailure;
            diagnostics = Some(format!(
                "stage {k} (t = {t:e}): evaluation failed: {}",
                st.last_error.unwrap_or_else(|| "unknown error".into())
            ));
            break;
        }
        z = zn;
        let moved = match stages.len() {
            n if n >= 2 => (stages[n - 2].final_residual_norm - st.final_residual_norm).abs(),
            _ => f64::INFINITY,
        };
        if moved < opts.newton.stagnation_tol {
            stagnated_run += 1;
            if stagnated_run >= 2 {
                termination = OuterTermination::Stagnated;
                break;
            }
        } else {
            stagnated_run = 0;
        }
    }

    let last = stages.last().expect("at least one stage runs");
    Ok(SolveReport {
        problem: spec.name.clone(),
        scheme,
        seed: opts.seed,
        final_iterate: Iterate { layout, data: z },
        outer_iterations: stages.len(),
        total_inner_iterations: stages.iter().map(|s| s.inner_iterations).sum(),
        wall_time: clock.elapsed().as_secs_f64(),
        final_residual_norm: last.final_residual_norm,
        final_t: last.t,
        final_eps: last.eps,
        termination,
        diagnostics,
        stages,
    })
}

/// `default_start` followed by `run`.
pub fn solve(spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport, OuterError> {
    let start = default_start(spec, opts.scheme, opts.seed);
    run(spec, &start, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ex_linear, ex_toy};

    #[test]
    fn default_start_toy() {
        let spec = ex_toy();
        let z = default_start(&spec, Scheme::S, 7);
        assert!((0.0..=1.0).contains(&z.x()[0]));
        assert!((0.0..=1.0).contains(&z.y()[0]));
        assert_eq!(z.u(), &[1.0, 1.0]);
        assert_eq!(z.alpha(), &[1.0, 1.0]);
        assert_eq!(z.beta(), &[1.0]);
        assert_eq!(z.delta(), &[1.0, 1.0]);
        assert_eq!(z, default_start(&spec, Scheme::S, 7));
        let other = default_start(&spec, Scheme::S, 8);
        assert_ne!((z.x()[0], z.y()[0]), (other.x()[0], other.y()[0]));
    }

    #[test]
    fn linear_scholtes_from_nearby_start() {
        let spec = ex_linear();
        let opts = SolveOptions::new(Scheme::S);
        let mut start = default_start(&spec, Scheme::S, 0);
        start.data[0] = 0.5;
        start.data[1] = 1.0;
        start.data[2] = 0.5;
        let rep = run(&spec, &start, &opts).unwrap();
        // α₁ = ε/x blows up as x → 0, so the run ends on the stagnation test
        assert!(rep.stopped(), "{rep:?}");
        assert!(rep.outer_iterations <= 10);
        let z = &rep.final_iterate;
        assert!(crate::relax::member_d(&spec, z.x(), z.y(), z.u(), 1e-4), "{:?}", z.data);
        assert!(z.x()[0].abs() < 1e-4 && (z.y()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn outer_cap_one() {
        let spec = ex_toy();
        let opts = SolveOptions {
            outer_cap: 1,
            ..SolveOptions::new(Scheme::KS)
        };
        let rep = solve(&spec, &opts).unwrap();
        assert_eq!(rep.outer_iterations, 1);
        assert_eq!(rep.termination, OuterTermination::MaxOuter);
    }

    #[test]
    fn t_sequence_is_geometric_and_warm_started() {
        let spec = ex_toy();
        let opts = SolveOptions::new(Scheme::S);
        let rep = solve(&spec, &opts).unwrap();
        for (k, s) in rep.stages.iter().enumerate() {
            assert_eq!(s.k, k);
            assert_eq!(s.t, 1e-3 * 0.05f64.powi(k as i32));
        }
        for w in rep.stages.windows(2) {
            assert!(w[1].t < w[0].t && w[1].t > 0.0);
        }
        // warm start: stage k+1 starts where stage k ended
        let mut z = default_start(&spec, Scheme::S, 0).data;
        for s in &rep.stages {
            let sys = FbSystem::new(&spec, Scheme::S, s.t, s.eps).unwrap();
            let r0 = sys.residual(&z).unwrap().norm();
            assert_eq!(r0, s.initial_residual_norm);
            let (zn, _) = newton::solve(|v: &[f64]| sys.residual(v), |v: &[f64]| sys.jacobian(v), &z, &opts.newton);
            if s.inner_iterations > 0 {
                z = zn;
            }
        }
    }

    #[test]
    fn invalid_options() {
        let spec = ex_toy();
        let mut o = SolveOptions::new(Scheme::S);
        o.t_reduction = 1.5;
        assert!(solve(&spec, &o).is_err());
        let o = SolveOptions::new(Scheme::S);
        let wrong = default_start(&spec, Scheme::LF, 0);
        assert!(matches!(run(&spec, &wrong, &o), Err(OuterError::Layout { .. })));
    }

    #[test]
    fn eps_schedule() {
        let mut o = SolveOptions::new(Scheme::S);
        assert_eq!(o.eps_at(3), 1e-3);
        o.eps_schedule = Some(EpsSchedule { min: 1e-8, factor: 1.0 });
        assert_eq!(o.eps_at(0), 1e-3);
        assert_eq!(o.eps_at(10), 1e-8);
    }
}
