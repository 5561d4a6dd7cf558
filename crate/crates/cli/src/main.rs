mod args;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use args::{BenchArgs, CheckArgs, Cli, Command, Format, ProblemSel, ProblemsArgs, ProfileArgs, SampleArgs, SetKind, SolveArgs, SolverArgs};
use pessirelax::bench::{read_records_csv, read_records_json, write_profile_csv, write_records_csv, write_records_json};
use pessirelax::expr::check_derivatives;
use pessirelax::setlab::{self, GridBox, Predicate};
use pessirelax::verify::Eoc;
use pessirelax::{
    assess, fmt_f64, outer, perf_profile, run_suite, summary_table, FbSystem, ProblemSpec, Registry, RunRecord, Scheme, SolveOptions, SuiteOptions,
    VerifyOptions,
};

/// Run-time outcome other than success.
enum Failure {
    /// Bad input: unknown problem, unreadable file, invalid value.
    Input(anyhow::Error),
    /// The computation ran but did not meet its goal.
    Unmet(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        // only bench fans out; everything else stays on one thread
        Command::Bench(a) => cmd_bench(a),
        other => match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| dispatch(other)),
            Err(e) => Err(Failure::Input(anyhow!(e))),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unmet(msg)) => {
            eprintln!("pessirelax: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("pessirelax: error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Check(a) => cmd_check(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Problems(a) => cmd_problems(a),
    }
}

fn registry(dirs: &[std::path::PathBuf]) -> Result<(Registry, Vec<String>)> {
    let mut reg = Registry::from_env()?;
    let mut found = Vec::new();
    for d in dirs {
        found.extend(reg.load_dir(d).with_context(|| format!("loading {}", d.display()))?);
    }
    Ok((reg, found))
}

/// Named or file-given problems; with none given, the ones found in
/// `--problem-dir`, else every known problem when `all_if_none`.
fn select(sel: &ProblemSel, all_if_none: bool) -> Result<Vec<ProblemSpec>> {
    let (mut reg, found) = registry(&sel.problem_dir)?;
    let mut names = Vec::new();
    for p in &sel.problem {
        if reg.get(p).is_err() && Path::new(p).is_file() {
            let spec = ProblemSpec::load(p)?;
            names.push(spec.name.clone());
            reg.insert(spec)?;
        } else {
            names.push(p.clone());
        }
    }
    if names.is_empty() {
        names = if !found.is_empty() {
            found
        } else if all_if_none {
            reg.names().map(str::to_string).collect()
        } else {
            bail!("no problem given; use --problem NAME or --problem-dir DIR");
        };
    }
    names.iter().map(|n| Ok(reg.get(n)?.clone())).collect()
}

fn solve_options(a: &SolverArgs) -> Result<SolveOptions> {
    let mut o = SolveOptions::new(Scheme::S);
    if let Some(v) = a.t0 {
        o.t0 = v;
    }
    if let Some(v) = a.theta {
        o.t_reduction = v;
    }
    if let Some(v) = a.epsilon {
        o.epsilon = v;
    }
    if let Some(v) = a.tol {
        o.newton.residual_tol = v;
    }
    if let Some(v) = a.outer_cap {
        o.outer_cap = v;
    }
    o.validate()?;
    Ok(o)
}

fn write_out(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_records(path: &Path, format: Format, records: &[RunRecord]) -> Result<()> {
    write_out(path, |w| {
        match format {
            Format::Csv => write_records_csv(records, w)?,
            Format::Json => write_records_json(records, w)?,
        }
        Ok(())
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_out(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt_f64)
}

fn seeds_of(seed: Option<u64>, seeds: &Option<std::ops::Range<u64>>, default: std::ops::Range<u64>) -> Vec<u64> {
    match (seed, seeds) {
        (Some(s), _) => vec![s],
        (None, Some(r)) => r.clone().collect(),
        (None, None) => default.collect(),
    }
}

fn cmd_solve(a: SolveArgs) -> Outcome {
    let problems = select(&a.problems, false)?;
    let base = solve_options(&a.solver)?;
    let schemes = a.solver.scheme.clone().map_or(vec![Scheme::S], |s| s.0);
    let seeds = seeds_of(a.seed, &a.seeds, 0..1);
    let verify = VerifyOptions::default();
    let mut records = Vec::new();
    let mut unmet = 0;
    let mut out = String::new();
    for spec in &problems {
        for &scheme in &schemes {
            for &seed in &seeds {
                let opts = SolveOptions { scheme, seed, ..base };
                let rep = outer::solve(spec, &opts).map_err(|e| Failure::Input(e.into()))?;
                let asm = assess(spec, &rep, &verify);
                let z = &rep.final_iterate;
                let _ = writeln!(out, "problem {}, scheme {}, seed {}", spec.name, scheme.label(), seed);
                let _ = writeln!(
                    out,
                    "  termination: {:?} after {} outer / {} inner iterations",
                    rep.termination, rep.outer_iterations, rep.total_inner_iterations
                );
                let _ = writeln!(out, "  final t = {}, eps = {}, |Psi| = {}", fmt_f64(rep.final_t), fmt_f64(rep.final_eps), fmt_f64(rep.final_residual_norm));
                let _ = writeln!(out, "  x = {}, y = {}, u = {}", fmt_vec(z.x()), fmt_vec(z.y()), fmt_vec(z.u()));
                let _ = writeln!(
                    out,
                    "  F = {}, feasible: {} (max violation {}), stationarity: {}",
                    fmt_opt(asm.upper_objective),
                    asm.feasibility.feasible,
                    fmt_f64(asm.feasibility.max_violation),
                    asm.flavor
                );
                let eoc = match &asm.eoc {
                    Eoc::Value(v) => fmt_f64(*v),
                    Eoc::Undefined(why) => format!("undefined ({why})"),
                };
                let _ = writeln!(out, "  accuracy: {}, EOC: {}", fmt_opt(asm.accuracy), eoc);
                if let Some(d) = &rep.diagnostics {
                    let _ = writeln!(out, "  note: {d}");
                }
                if !rep.stopped() {
                    unmet += 1;
                }
                records.push(RunRecord::from_report(&rep, &asm));
            }
        }
    }
    print!("{out}");
    if let Some(p) = &a.out {
        write_records(p, a.format, &records)?;
    }
    if unmet > 0 {
        return Err(Failure::Unmet(format!("{unmet} of {} runs hit the stage cap or failed", records.len())));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let problems = select(&a.problems, true)?;
    let solve = solve_options(&a.solver)?;
    let schemes = a.solver.scheme.clone().map_or(Scheme::ALL.to_vec(), |s| s.0);
    let seeds = seeds_of(a.seed, &a.seeds, 0..10);
    if a.jobs == Some(0) {
        return Err(Failure::Input(anyhow!("--jobs must be at least 1")));
    }
    let opts = SuiteOptions {
        solve,
        verify: VerifyOptions::default(),
        jobs: a.jobs,
    };
    let records = run_suite(&problems, &schemes, &seeds, &opts).map_err(anyhow::Error::from)?;
    let table = summary_table(&records).map_err(anyhow::Error::from)?;
    let md = table.to_markdown();
    print!("{md}");
    if let Some(p) = &a.out {
        write_records(p, a.format, &records)?;
    }
    if let Some(p) = &a.summary {
        std::fs::write(p, &md).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Outcome {
    let f = File::open(&a.records).with_context(|| format!("opening {}", a.records.display()))?;
    let is_json = a.records.extension().is_some_and(|e| e == "json");
    let records = if is_json { read_records_json(f) } else { read_records_csv(f) }
        .with_context(|| format!("reading {}", a.records.display()))?;
    let curves = perf_profile(&records, a.measure).map_err(anyhow::Error::from)?;
    let marks = [1.0, 2.0, 10.0, 100.0];
    let head: Vec<String> = marks.iter().map(|t| format!("rho({t})")).collect();
    println!("solver {}", head.join(" "));
    for c in &curves {
        let vals: Vec<String> = marks.iter().map(|&t| fmt_f64(c.rho(t))).collect();
        println!("{} {}", c.solver, vals.join(" "));
    }
    if let Some(p) = &a.out {
        match a.format {
            Format::Csv => write_out(p, |w| Ok(write_profile_csv(&curves, w)?))?,
            Format::Json => write_json(p, &curves)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckReport {
    problem: String,
    points: usize,
    function_error: f64,
    jacobian_points: usize,
    jacobian_error: f64,
    ok: bool,
}

fn draw_box<R: Rng>(rng: &mut R, b: &[[f64; 2]]) -> Vec<f64> {
    b.iter()
        .map(|&[lo, hi]| if lo < hi { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

fn check_problem(spec: &ProblemSpec, points: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fun: f64 = 0.0;
    let exprs: Vec<_> = std::iter::once(&spec.upper_obj)
        .chain(&spec.upper_cons)
        .chain(std::iter::once(&spec.lower_obj))
        .chain(&spec.lower_cons)
        .collect();
    for _ in 0..points {
        let x = draw_box(&mut rng, &spec.start_box.x);
        let y = draw_box(&mut rng, &spec.start_box.y);
        for e in &exprs {
            fun = fun.max(check_derivatives(e, &x, &y, 1e-5));
        }
    }
    let mut jac: f64 = 0.0;
    let mut used = 0;
    for k in 0..points {
        let scheme = Scheme::ALL[k % Scheme::ALL.len()];
        let Ok(sys) = FbSystem::new(spec, scheme, 0.2, 1e-2) else { continue };
        let mut z: Vec<f64> = (0..sys.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = draw_box(&mut rng, &spec.start_box.x);
        let y = draw_box(&mut rng, &spec.start_box.y);
        z[sys.layout.x()].copy_from_slice(&x);
        z[sys.layout.y()].copy_from_slice(&y);
        if !sys.branch_distance(&z).is_ok_and(|d| d > 1e-3) {
            continue;
        }
        used += 1;
        jac = jac.max(sys.jacobian_fd_error(&z).unwrap_or(f64::INFINITY));
    }
    CheckReport {
        problem: spec.name.clone(),
        points,
        function_error: fun,
        jacobian_points: used,
        jacobian_error: jac,
        ok: false,
    }
}

fn cmd_check(a: CheckArgs) -> Outcome {
    let problems = select(&a.problems, true)?;
    let mut reports = Vec::new();
    for spec in &problems {
        let mut r = check_problem(spec, a.points, a.seed);
        r.ok = r.function_error < a.tol && r.jacobian_error < a.tol;
        println!(
            "{}: derivative error {} over {} points, Jacobian error {} over {} iterates: {}",
            r.problem,
            fmt_f64(r.function_error),
            r.points,
            fmt_f64(r.jacobian_error),
            r.jacobian_points,
            if r.ok { "ok" } else { "FAILED" }
        );
        reports.push(r);
    }
    if let Some(p) = &a.out {
        match a.format {
            Format::Json => write_json(p, &reports)?,
            Format::Csv => write_out(p, |w| {
                let mut c = csv_writer(w);
                c.write_record(["problem", "points", "function_error", "jacobian_points", "jacobian_error", "ok"])?;
                for r in &reports {
                    c.write_record([
                        r.problem.clone(),
                        r.points.to_string(),
                        fmt_f64(r.function_error),
                        r.jacobian_points.to_string(),
                        fmt_f64(r.jacobian_error),
                        r.ok.to_string(),
                    ])?;
                }
                c.flush()?;
                Ok(())
            })?,
        }
    }
    let bad = reports.iter().filter(|r| !r.ok).count();
    if bad > 0 {
        return Err(Failure::Unmet(format!("{bad} problem(s) exceed the derivative tolerance {}", a.tol)));
    }
    Ok(())
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(w)
}

fn cmd_sample(a: SampleArgs) -> Outcome {
    let problems = select(&a.problems, false)?;
    let [spec] = problems.as_slice() else {
        return Err(Failure::Input(anyhow!("sample takes exactly one problem")));
    };
    if a.x.len() != spec.n {
        return Err(Failure::Input(anyhow!("--x has {} entries, {} expects {}", a.x.len(), spec.name, spec.n)));
    }
    let scheme = match a.set {
        SetKind::D => None,
        SetKind::S => Some(Scheme::S),
        SetKind::Lf => Some(Scheme::LF),
        SetKind::Kdb => Some(Scheme::KDB),
        SetKind::Su => Some(Scheme::SU),
        SetKind::Ks => Some(Scheme::KS),
    };
    let pred = match (scheme, a.t) {
        (None, _) => Predicate::D,
        (Some(scheme), Some(t)) => Predicate::Dt { scheme, t },
        (Some(_), None) => return Err(Failure::Input(anyhow!("relaxed sets need --t"))),
    };
    let mut grid = GridBox::from_spec(spec, a.u_box);
    if !a.y_box.is_empty() {
        grid.y = a.y_box.clone();
    }
    let set = setlab::sample(spec, pred, &a.x, &grid, a.step, a.member_tol).map_err(anyhow::Error::from)?;
    let psi = setlab::psi_of_set(spec, &set).map_err(anyhow::Error::from)?;
    println!("{pred} at x = {}: {} grid points (step {})", fmt_vec(&a.x), set.len(), fmt_f64(a.step));
    match psi.value {
        Some(v) => println!(
            "max F over sample: {} (lower bound{})",
            fmt_f64(v),
            if psi.box_truncated { "; maximizer on the box boundary" } else { "" }
        ),
        None => println!("max F over sample: none (empty sample)"),
    }
    if a.compare && pred != Predicate::D {
        let d = setlab::sample(spec, Predicate::D, &a.x, &grid, a.step, a.member_tol).map_err(anyhow::Error::from)?;
        println!("e(D, {pred}) = {}", fmt_f64(setlab::excess(&d, &set)));
        println!("e({pred}, D) = {}", fmt_f64(setlab::excess(&set, &d)));
    }
    if let Some(p) = &a.out {
        match a.format {
            Format::Csv => write_out(p, |w| Ok(set.write_csv(w)?))?,
            Format::Json => write_json(p, &set)?,
        }
    }
    Ok(())
}

fn cmd_problems(a: ProblemsArgs) -> Outcome {
    let (reg, _) = registry(&a.problem_dir)?;
    match a.format {
        Some(Format::Json) => {
            let names: Vec<&str> = reg.names().collect();
            serde_json::to_writer_pretty(io::stdout().lock(), &names).map_err(anyhow::Error::from)?;
            println!();
        }
        Some(Format::Csv) => {
            println!("name,n,m,p,q");
            for s in reg.iter() {
                println!("{},{},{},{},{}", s.name, s.n, s.m, s.p, s.q);
            }
        }
        None => {
            for s in reg.iter() {
                print!("{}", s.describe());
            }
        }
    }
    Ok(())
}
