//! Fixtures shared by the criterion benches.

use pessirelax::bench::RunRecord;
use pessirelax::outer::default_start;
use pessirelax::problem::{ex_linear, ex_toy};
use pessirelax::setlab::{sample, GridBox};
use pessirelax::verify::Flavor;
use pessirelax::{Predicate, ProblemSpec, SampledSet, Scheme};

pub fn problems() -> [ProblemSpec; 2] {
    [ex_toy(), ex_linear()]
}

/// A start iterate with strictly positive multipliers, away from kinks.
pub fn point(spec: &ProblemSpec, scheme: Scheme, seed: u64) -> Vec<f64> {
    let mut z = default_start(spec, scheme, seed).data;
    for (k, v) in z.iter_mut().enumerate() {
        *v += 0.01 * k as f64;
    }
    z
}

/// `D(x)` and `D^t_R(x)` for the linear problem at `x = 0.5`.
pub fn set_pair(scheme: Scheme, t: f64, step: f64) -> (SampledSet, SampledSet) {
    let spec = ex_linear();
    let grid = GridBox { y: vec![[-2.0, 2.0]], u: vec![[-1.0, 1.0]] };
    let d = sample(&spec, Predicate::D, &[0.5], &grid, step, 1e-9).unwrap();
    let dt = sample(&spec, Predicate::Dt { scheme, t }, &[0.5], &grid, step, 1e-9).unwrap();
    (d, dt)
}

/// Synthetic records: every scheme on `instances` seeds, with a
/// deterministic spread of timings and a few failures.
pub fn records(instances: u64) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for (s, &scheme) in Scheme::ALL.iter().enumerate() {
        for seed in 0..instances {
            let h = (seed * 31 + s as u64 * 17) % 97;
            out.push(RunRecord {
                problem: format!("p{}", seed % 7),
                scheme,
                seed,
                outer_iters: 3 + (h % 8) as usize,
                inner_iters: 10 + h as usize,
                wall_time_s: 1e-3 * (1.0 + h as f64),
                final_residual: 1e-9,
                feasible: !h.is_multiple_of(11),
                flavor: Flavor::C,
                accuracy: Some(1e-6),
                eoc: Some(1.0),
                termination: None,
                note: None,
            });
        }
    }
    out
}
