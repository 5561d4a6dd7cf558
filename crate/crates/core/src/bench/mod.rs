//! Multi-start experiments: one record per (problem, scheme, seed), CSV and
//! JSON export, and per-scheme summary tables.

pub mod profile;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::outer::{self, OuterTermination, SolveOptions, SolveReport};
use crate::problem::ProblemSpec;
use crate::relax::Scheme;
use crate::fmt_f64;
use crate::verify::{assess, Assessment, Flavor, VerifyOptions};

pub use profile::{perf_profile, read_profile_csv, write_profile_csv, Measure, ProfileCurve, T_GRID_LEN, T_MAX};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("seed {0} appears more than once")]
    DuplicateSeed(u64),
    #[error("no records")]
    Empty,
    #[error("no instance was solved by any scheme")]
    NothingSolved,
    #[error("could not build a thread pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub wall_time_s: f64,
    pub final_residual: f64,
    pub feasible: bool,
    pub flavor: Flavor,
    pub accuracy: Option<f64>,
    pub eoc: Option<f64>,
    /// Not part of the CSV export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<OuterTermination>,
    /// Solver diagnostics or the reason a run could not start. Not part of
    /// the CSV export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RunRecord {
    pub fn from_report(rep: &SolveReport, a: &Assessment) -> Self {
        RunRecord {
            problem: rep.problem.clone(),
            scheme: rep.scheme,
            seed: rep.seed,
            outer_iters: rep.outer_iterations,
            inner_iters: rep.total_inner_iterations,
            wall_time_s: rep.wall_time,
            final_residual: rep.final_residual_norm,
            feasible: a.feasibility.feasible,
            flavor: a.flavor,
            accuracy: a.accuracy,
            eoc: a.eoc.value(),
            termination: Some(rep.termination),
            note: rep.diagnostics.clone(),
        }
    }

    /// Solved instances for profiles and feasibility percentages.
    pub fn solved(&self) -> bool {
        self.feasible
    }

    /// Record identity without timing, for determinism checks.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteOptions {
    /// Scheme and seed are overwritten per run.
    pub solve: SolveOptions,
    pub verify: VerifyOptions,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            solve: SolveOptions::new(Scheme::S),
            verify: VerifyOptions::default(),
            jobs: None,
        }
    }
}

/// Solves and assesses one instance. Failures become records, never errors.
pub fn run_one(spec: &ProblemSpec, scheme: Scheme, seed: u64, opts: &SuiteOptions) -> RunRecord {
    let solve_opts = SolveOptions {
        scheme,
        seed,
        ..opts.solve
    };
    match outer::solve(spec, &solve_opts) {
        Ok(rep) => RunRecord::from_report(&rep, &assess(spec, &rep, &opts.verify)),
        Err(e) => RunRecord {
            problem: spec.name.clone(),
            scheme,
            seed,
            outer_iters: 0,
            inner_iters: 0,
            wall_time_s: 0.0,
            final_residual: f64::INFINITY,
            feasible: false,
            flavor: Flavor::None,
            accuracy: None,
            eoc: None,
            termination: None,
            note: Some(e.to_string()),
        },
    }
}

/// Every (problem, scheme, seed) combination, in that nesting order.
pub fn run_suite(problems: &[ProblemSpec], schemes: &[Scheme], seeds: &[u64], opts: &SuiteOptions) -> Result<Vec<RunRecord>, BenchError> {
    let mut seen = HashSet::new();
    if let Some(&s) = seeds.iter().find(|&&s| !seen.insert(s)) {
        return Err(BenchError::DuplicateSeed(s));
    }
    let tasks: Vec<(&ProblemSpec, Scheme, u64)> = problems
        .iter()
        .flat_map(|p| schemes.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (p, s, seed))))
        .collect();
    let go = || -> Vec<RunRecord> { tasks.par_iter().map(|&(p, s, seed)| run_one(p, s, seed, opts)).collect() };
    match opts.jobs {
        None => Ok(go()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BenchError::Pool(e.to_string()))?;
            Ok(pool.install(go))
        }
    }
}

pub const RECORD_HEADER: [&str; 11] = [
    "problem",
    "scheme",
    "seed",
    "outer_iters",
    "inner_iters",
    "wall_time_s",
    "final_residual",
    "feasible",
    "flavor",
    "accuracy",
    "eoc",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.problem.clone(),
            r.scheme.tag().to_string(),
            r.seed.to_string(),
            r.outer_iters.to_string(),
            r.inner_iters.to_string(),
            fmt_f64(r.wall_time_s),
            fmt_f64(r.final_residual),
            r.feasible.to_string(),
            r.flavor.to_string(),
            opt(r.accuracy),
            opt(r.eoc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_flavor(s: &str) -> Option<Flavor> {
    match s {
        "none" => Some(Flavor::None),
        "C" => Some(Flavor::C),
        "M" => Some(Flavor::M),
        "S" => Some(Flavor::S),
        _ => None,
    }
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RunRecord>, BenchError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(BenchError::Parse {
            line: 1,
            msg: format!("expected header `{}`", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str, v: &str| BenchError::Parse {
            line,
            msg: format!("bad {col} `{v}`"),
        };
        fn num<T: FromStr>(v: &str) -> Option<T> {
            v.parse().ok()
        }
        let field = |k: usize| rec.get(k).unwrap_or("");
        let opt_num = |k: usize| -> Result<Option<f64>, BenchError> {
            match field(k) {
                "" => Ok(None),
                v => num(v).map(Some).ok_or_else(|| bad(RECORD_HEADER[k], v)),
            }
        };
        out.push(RunRecord {
            problem: field(0).to_string(),
            scheme: num(field(1)).ok_or_else(|| bad("scheme", field(1)))?,
            seed: num(field(2)).ok_or_else(|| bad("seed", field(2)))?,
            outer_iters: num(field(3)).ok_or_else(|| bad("outer_iters", field(3)))?,
            inner_iters: num(field(4)).ok_or_else(|| bad("inner_iters", field(4)))?,
            wall_time_s: num(field(5)).ok_or_else(|| bad("wall_time_s", field(5)))?,
            final_residual: num(field(6)).ok_or_else(|| bad("final_residual", field(6)))?,
            feasible: num(field(7)).ok_or_else(|| bad("feasible", field(7)))?,
            flavor: parse_flavor(field(8)).ok_or_else(|| bad("flavor", field(8)))?,
            accuracy: opt_num(9)?,
            eoc: opt_num(10)?,
            termination: None,
            note: None,
        });
    }
    Ok(out)
}

pub fn write_records_json<W: Write>(records: &[RunRecord], mut out: W) -> Result<(), BenchError> {
    serde_json::to_writer_pretty(&mut out, records)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_records_json<R: Read>(input: R) -> Result<Vec<RunRecord>, BenchError> {
    Ok(serde_json::from_reader(input)?)
}

/// Aggregates of one scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub runs: usize,
    pub avg_outer: f64,
    pub avg_time: f64,
    pub avg_inner: f64,
    /// Mean over records with a reference value; `None` prints as n/a.
    pub avg_accuracy: Option<f64>,
    /// Records with at least a C-stationarity certificate.
    pub c_stationary: usize,
    pub feasibility_pct: f64,
    pub eoc_le_1: usize,
    pub eoc_gt_1: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "Scheme",
    "Average outer iter",
    "Average time",
    "Average inner iter",
    "Average accuracy",
    "C-stationarity",
    "Feasibility (%)",
    "EOC ≤ 1",
    "EOC > 1",
];

/// Sum in sorted order so the result does not depend on record order.
fn mean(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per scheme present, in scheme order.
pub fn summary_table(records: &[RunRecord]) -> Result<SummaryTable, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut by: BTreeMap<Scheme, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.scheme).or_default().push(r);
    }
    let rows = by
        .into_iter()
        .map(|(scheme, rs)| {
            let n = rs.len();
            let col = |f: &dyn Fn(&RunRecord) -> f64| mean(rs.iter().map(|r| f(r)).collect()).unwrap_or(f64::NAN);
            SummaryRow {
                scheme,
                runs: n,
                avg_outer: col(&|r| r.outer_iters as f64),
                avg_time: col(&|r| r.wall_time_s),
                avg_inner: col(&|r| r.inner_iters as f64),
                avg_accuracy: mean(rs.iter().filter_map(|r| r.accuracy).collect()),
                c_stationary: rs.iter().filter(|r| r.flavor >= Flavor::C).count(),
                feasibility_pct: 100.0 * rs.iter().filter(|r| r.feasible).count() as f64 / n as f64,
                eoc_le_1: rs.iter().filter(|r| r.eoc.is_some_and(|e| e <= 1.0)).count(),
                eoc_gt_1: rs.iter().filter(|r| r.eoc.is_some_and(|e| e > 1.0)).count(),
            }
        })
        .collect();
    Ok(SummaryTable { rows })
}

impl SummaryTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", SUMMARY_COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(SUMMARY_COLUMNS.len()));
        for r in &self.rows {
            let acc = r.avg_accuracy.map_or_else(|| "n/a".to_string(), fmt_f64);
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.scheme.label(),
                fmt_f64(r.avg_outer),
                fmt_f64(r.avg_time),
                fmt_f64(r.avg_inner),
                acc,
                r.c_stationary,
                fmt_f64(r.feasibility_pct),
                r.eoc_le_1,
                r.eoc_gt_1
            );
        }
        s
    }

    /// Same table without the timing column, for byte-for-byte comparisons.
    pub fn to_markdown_untimed(&self) -> String {
        let mut t = self.clone();
        for r in &mut t.rows {
            r.avg_time = 0.0;
        }
        t.to_markdown()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ex_linear, ex_toy};
    use proptest::prelude::*;

    pub(crate) fn rec(scheme: Scheme, seed: u64, feasible: bool) -> RunRecord {
        RunRecord {
            problem: "p".into(),
            scheme,
            seed,
            outer_iters: 3,
            inner_iters: 10,
            wall_time_s: 0.5,
            final_residual: 1e-7,
            feasible,
            flavor: Flavor::None,
            accuracy: None,
            eoc: None,
            termination: None,
            note: None,
        }
    }

    #[test]
    fn suite_cardinality_and_determinism() {
        let probs = [ex_toy(), ex_linear()];
        let schemes = [Scheme::S, Scheme::KS];
        let seeds = [0, 1, 2];
        let opts = SuiteOptions {
            jobs: Some(2),
            ..Default::default()
        };
        let a = run_suite(&probs, &schemes, &seeds, &opts).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!((a[0].problem.as_str(), a[0].scheme, a[0].seed), ("ex_toy", Scheme::S, 0));
        assert_eq!((a[11].problem.as_str(), a[11].scheme, a[11].seed), ("ex_linear", Scheme::KS, 2));
        assert!(a.iter().all(|r| r.flavor == Flavor::None || r.feasible));
        let b = run_suite(&probs, &schemes, &seeds, &SuiteOptions { jobs: Some(1), ..opts }).unwrap();
        let strip = |v: &[RunRecord]| v.iter().map(RunRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let e = run_suite(&[ex_toy()], &[Scheme::S], &[1, 2, 1], &SuiteOptions::default());
        assert!(matches!(e, Err(BenchError::DuplicateSeed(1))));
    }

    #[test]
    fn failed_run_becomes_record() {
        let mut opts = SuiteOptions::default();
        opts.solve.t0 = -1.0;
        let r = run_one(&ex_toy(), Scheme::S, 0, &opts);
        assert!(!r.feasible);
        assert_eq!(r.flavor, Flavor::None);
        assert!(r.note.unwrap().contains("t0"));
        // a capped run is recorded with its termination
        let mut opts = SuiteOptions::default();
        opts.solve.outer_cap = 1;
        opts.solve.newton.max_iters = 1;
        let r = run_one(&ex_toy(), Scheme::S, 0, &opts);
        assert_eq!(r.termination, Some(OuterTermination::MaxOuter));
    }

    #[test]
    fn csv_round_trip() {
        let mut a = rec(Scheme::LF, 4, true);
        a.accuracy = Some(0.1 + 0.2);
        a.eoc = Some(1.0 / 3.0);
        a.flavor = Flavor::M;
        a.problem = "with,comma".into();
        let mut b = rec(Scheme::KDB, 5, false);
        b.final_residual = f64::INFINITY;
        let mut buf = Vec::new();
        write_records_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("problem,scheme,seed,outer_iters,inner_iters,wall_time_s,final_residual,feasible,flavor,accuracy,eoc\n"));
        assert!(text.contains("0.30000000000000004"));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn json_round_trip() {
        let mut a = rec(Scheme::SU, 9, true);
        a.termination = Some(OuterTermination::Stagnated);
        a.note = Some("x".into());
        let mut buf = Vec::new();
        write_records_json(&[a.clone()], &mut buf).unwrap();
        assert_eq!(read_records_json(&buf[..]).unwrap(), vec![a]);
    }

    #[test]
    fn bad_csv_reported() {
        let text = "problem,scheme,seed,outer_iters,inner_iters,wall_time_s,final_residual,feasible,flavor,accuracy,eoc\np,zz,1,1,1,1,1,true,C,,\n";
        assert!(matches!(read_records_csv(text.as_bytes()), Err(BenchError::Parse { line: 2, .. })));
        assert!(matches!(read_records_csv("a,b\n".as_bytes()), Err(BenchError::Parse { line: 1, .. })));
    }

    #[test]
    fn summary_examples() {
        let mut rs: Vec<RunRecord> = (0..3).map(|s| rec(Scheme::S, s, true)).collect();
        rs[0].eoc = Some(0.9);
        rs[1].eoc = Some(1.0);
        rs[2].eoc = Some(1.3);
        rs[2].flavor = Flavor::S;
        let t = summary_table(&rs).unwrap();
        let r = &t.rows[0];
        assert_eq!(r.feasibility_pct, 100.0);
        assert_eq!((r.eoc_le_1, r.eoc_gt_1), (2, 1));
        assert_eq!(r.c_stationary, 1);
        assert_eq!(r.avg_accuracy, None);
        let md = t.to_markdown();
        assert!(md.starts_with("| Scheme | Average outer iter | Average time | Average inner iter | Average accuracy | C-stationarity | Feasibility (%) | EOC ≤ 1 | EOC > 1 |\n"));
        assert!(md.contains("| Scholtes | 3 | 0.5 | 10 | n/a | 1 | 100 | 2 | 1 |"));
        assert!(matches!(summary_table(&[]), Err(BenchError::Empty)));
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(
            vals in proptest::collection::vec((0usize..5, 0.0f64..10.0, any::<bool>(), proptest::option::of(0.0f64..2.0)), 1..30),
            rot in 0usize..30,
        ) {
            let rs: Vec<RunRecord> = vals.iter().enumerate().map(|(k, &(s, t, f, e))| {
                let mut r = rec(Scheme::ALL[s], k as u64, f);
                r.wall_time_s = t;
                r.accuracy = e;
                r.eoc = e;
                r
            }).collect();
            let mut shuffled = rs.clone();
            shuffled.reverse();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            prop_assert_eq!(summary_table(&rs).unwrap(), summary_table(&shuffled).unwrap());
        }
    }
}
