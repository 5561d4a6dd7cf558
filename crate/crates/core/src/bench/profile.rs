//! Dolan–Moré performance profiles over (problem, seed) instances.
//!
//! For a measure `t_{s,i}` the ratio is `r_{s,i} = t_{s,i} / min_{s'} t_{s',i}`
//! over solvers that solved instance `i`; a solver that did not solve `i`
//! (or has no record for it) gets `r = +∞`. `ρ_s(T)` is the fraction of
//! instances with `r_{s,i} ≤ T`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BenchError, RunRecord};
use crate::fmt_f64;

pub const T_MAX: f64 = 100.0;
pub const T_GRID_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Time,
    OuterIters,
    InnerIters,
}

impl Measure {
    fn of(self, r: &RunRecord) -> f64 {
        match self {
            Measure::Time => r.wall_time_s,
            Measure::OuterIters => r.outer_iters as f64,
            Measure::InnerIters => r.inner_iters as f64,
        }
    }
}

impl FromStr for Measure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "time" => Ok(Measure::Time),
            "outer_iters" | "outer" => Ok(Measure::OuterIters),
            "inner_iters" | "inner" => Ok(Measure::InnerIters),
            _ => Err(format!("unknown measure `{s}` (expected time, outer_iters or inner_iters)")),
        }
    }
}

/// `ρ_s` sampled on the `T` grid. `ratios` holds `r_{s,i}` per instance when
/// the curve was computed from records; it is empty for curves read from CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    pub points: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<f64>,
}

impl ProfileCurve {
    /// Exact `ρ_s(T)` from the ratios.
    pub fn rho(&self, t: f64) -> f64 {
        rho(&self.ratios, t)
    }
}

fn rho(ratios: &[f64], t: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|&&r| r <= t).count() as f64 / ratios.len() as f64
}

/// `T_k = T_MAX^{k/(n−1)}`, so the grid starts at 1 and ends at `T_MAX`.
pub fn t_grid() -> Vec<f64> {
    (0..T_GRID_LEN)
        .map(|k| T_MAX.powf(k as f64 / (T_GRID_LEN - 1) as f64))
        .collect()
}

/// Ratio of `v` against the instance best. A best of zero makes every other
/// nonzero value infinitely worse.
fn ratio(v: f64, best: f64) -> f64 {
    if v == best {
        1.0
    } else if best > 0.0 {
        v / best
    } else {
        f64::INFINITY
    }
}

/// One curve per scheme present in `records`, in scheme order.
pub fn perf_profile(records: &[RunRecord], measure: Measure) -> Result<Vec<ProfileCurve>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let solvers: BTreeSet<_> = records.iter().map(|r| r.scheme).collect();
    let mut instances: BTreeMap<(&str, u64), BTreeMap<_, f64>> = BTreeMap::new();
    for r in records {
        let slot = instances.entry((r.problem.as_str(), r.seed)).or_default();
        if r.solved() {
            slot.insert(r.scheme, measure.of(r));
        }
    }
    if instances.values().all(BTreeMap::is_empty) {
        return Err(BenchError::NothingSolved);
    }
    let grid = t_grid();
    Ok(solvers
        .into_iter()
        .map(|s| {
            let ratios: Vec<f64> = instances
                .values()
                .map(|vals| {
                    let best = vals.values().copied().fold(f64::INFINITY, f64::min);
                    vals.get(&s).map_or(f64::INFINITY, |&v| ratio(v, best))
                })
                .collect();
            let points = grid.iter().map(|&t| (t, rho(&ratios, t))).collect();
            ProfileCurve {
                solver: s.tag().to_string(),
                points,
                ratios,
            }
        })
        .collect())
}

pub fn write_profile_csv<W: Write>(curves: &[ProfileCurve], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["solver", "T", "rho"])?;
    for c in curves {
        for (t, r) in &c.points {
            w.write_record([c.solver.clone(), fmt_f64(*t), fmt_f64(*r)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile_csv<R: Read>(input: R) -> Result<Vec<ProfileCurve>, BenchError> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(["solver", "T", "rho"]) {
        return Err(BenchError::Parse {
            line: 1,
            msg: "expected header `solver,T,rho`".into(),
        });
    }
    let mut curves: Vec<ProfileCurve> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize| {
            rec.get(k).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| BenchError::Parse {
                line,
                msg: format!("bad number `{}`", rec.get(k).unwrap_or("")),
            })
        };
        let (t, r) = (num(1)?, num(2)?);
        let solver = rec.get(0).unwrap_or("");
        match curves.last_mut() {
            Some(c) if c.solver == solver => c.points.push((t, r)),
            _ => curves.push(ProfileCurve {
                solver: solver.to_string(),
                points: vec![(t, r)],
                ratios: Vec::new(),
            }),
        }
    }
    Ok(curves)
}
