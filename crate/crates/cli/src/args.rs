use std::ops::Range;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pessirelax::{Measure, Scheme};

#[derive(Parser, Debug)]
#[command(name = "pessirelax", version, about = "Relaxation solvers for pessimistic bilevel programs")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one or more problems from seeded random starts.
    Solve(SolveArgs),
    /// Run every (problem, scheme, seed) combination and summarize.
    Bench(BenchArgs),
    /// Performance profiles from a records file.
    Profile(ProfileArgs),
    /// Validate problem files and compare derivatives with finite differences.
    Check(CheckArgs),
    /// Grid-sample D(x) or a relaxed set D^t_R(x).
    Sample(SampleArgs),
    /// List the known problems.
    Problems(ProblemsArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProblemSel {
    /// Problem name or path to a problem file; repeatable.
    #[arg(long = "problem", value_name = "NAME")]
    pub problem: Vec<String>,
    /// Directory of problem files to load; repeatable.
    #[arg(long = "problem-dir", value_name = "DIR")]
    pub problem_dir: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// s, lf, kdb, su, ks or all.
    #[arg(long, value_parser = parse_schemes)]
    pub scheme: Option<SchemeSel>,
    /// Initial relaxation parameter.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Reduction factor of the relaxation parameter per stage.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Smoothing parameter of the Fischer–Burmeister function.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Residual tolerance of the inner Newton solves.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Maximum number of relaxation stages.
    #[arg(long = "outer-cap")]
    pub outer_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSel(pub Vec<Scheme>);

fn parse_schemes(s: &str) -> Result<SchemeSel, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(SchemeSel(Scheme::ALL.to_vec()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()
        .map(SchemeSel)
}

/// `N`, `N..M` (half-open) or `N..=M`.
pub fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let num = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("bad seed `{v}`: {e}"));
    let r = if let Some((a, b)) = s.split_once("..=") {
        num(a)?..num(b)?.checked_add(1).ok_or("seed range overflows")?
    } else if let Some((a, b)) = s.split_once("..") {
        num(a)?..num(b)?
    } else {
        let a = num(s)?;
        a..a + 1
    };
    if r.is_empty() {
        return Err(format!("seed range `{s}` is empty"));
    }
    Ok(r)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problems: ProblemSel,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Seed of the random start.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range `N..M` (half-open) or `N..=M`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Range<u64>>,
    /// Write run records here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problems: ProblemSel,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range `N..M` (half-open) or `N..=M`; default `0..10`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Range<u64>>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write run records here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write the Markdown summary table here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Records written by `bench` or `solve` (CSV, or JSON by extension).
    #[arg(long)]
    pub records: PathBuf,
    /// time, outer_iters or inner_iters.
    #[arg(long, default_value = "time", value_parser = |s: &str| s.parse::<Measure>())]
    pub measure: Measure,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub problems: ProblemSel,
    /// Random points per problem.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetKind {
    D,
    S,
    Lf,
    Kdb,
    Su,
    Ks,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub problems: ProblemSel,
    /// Upper-level point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x: Vec<f64>,
    /// `d` for D(x), otherwise the relaxation scheme.
    #[arg(long = "set", value_enum, default_value = "d")]
    pub set: SetKind,
    /// Relaxation parameter for relaxed sets.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, default_value_t = 1e-2)]
    pub step: f64,
    /// Membership tolerance.
    #[arg(long = "member-tol", default_value_t = 1e-9)]
    pub member_tol: f64,
    /// `lo:hi` per lower-level variable; default is the start box.
    #[arg(long = "y-box", value_parser = parse_interval, allow_hyphen_values = true)]
    pub y_box: Vec<[f64; 2]>,
    /// `lo:hi` for every gridded multiplier.
    #[arg(long = "u-box", value_parser = parse_interval, allow_hyphen_values = true, default_value = "-1:1")]
    pub u_box: [f64; 2],
    /// Also report excesses against D(x) for relaxed sets.
    #[arg(long)]
    pub compare: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ProblemsArgs {
    #[arg(long = "problem-dir", value_name = "DIR")]
    pub problem_dir: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad bound `{v}`: {e}"));
    Ok([p(a)?, p(b)?])
}
