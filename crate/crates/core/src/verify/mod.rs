//! Checks run on a computed point: feasibility for the KKT set `D(x)`,
//! C/M/S-stationarity certificates, upper/lower regularity, EOC and accuracy.
//!
//! Multipliers of the relaxed system are mapped to limiting ones by reading
//! off the coefficients of `∇g_i` and `∇L` in the stationarity blocks of
//! `Ψ`: `β̃ = −β` and `γ̃_i = −Σ_r λ_{r,i} ∂φ_r/∂g` (zero on `η`). When these
//! do not certify the point, a least-squares fit of the stationarity
//! equations over the admissible supports is tried.

pub mod lp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, JetOrder};
use crate::fbsys::Iterate;
use crate::outer::SolveReport;
use crate::problem::{lagrangian_from_jets, ProblemSpec};
use crate::relax::{local_rows, IndexPartition};

pub use lp::LpError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("multiplier vector {name} has length {got}, expected {expected}")]
    Length {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("regularity LP failed: {0}")]
    Lp(#[from] LpError),
    #[error("relaxation parameter must be positive, got t = {0}")]
    NonPositiveT(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Feasibility tolerance for `D(x)` and `G(x) ≤ 0`.
    pub feas_tol: f64,
    /// Tolerance on stationarity residuals and sign conditions.
    pub tol: f64,
    /// Tolerance used to build `η`, `θ`, `ν` and the active upper constraints.
    /// Solver outputs are smoothed with `u_i·(−g_i) ≈ ε/λ`, so this matches
    /// the feasibility tolerance rather than the stricter default of
    /// [`index_sets`](crate::relax::index_sets).
    pub activity_tol: f64,
    /// A relaxed multiplier above this counts as active when looking for
    /// conflicting supports.
    pub support_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            feas_tol: 1e-4,
            tol: 1e-5,
            activity_tol: 1e-4,
            support_tol: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<String>,
    /// Largest violation over all checked conditions (0 when feasible by a margin).
    pub max_violation: f64,
    pub tol: f64,
}

/// Checks `u ≥ 0`, `g ≤ 0`, `L = 0`, `u∘g = 0` and `G ≤ 0` within `tol`.
pub fn feasibility(spec: &ProblemSpec, x: &[f64], y: &[f64], u: &[f64], tol: f64) -> Feasibility {
    let mut out = Feasibility {
        feasible: true,
        violations: Vec::new(),
        max_violation: 0.0,
        tol,
    };
    let mut note = |amount: f64, msg: String| {
        let amount = if amount.is_nan() { f64::INFINITY } else { amount };
        out.max_violation = out.max_violation.max(amount);
        if amount > tol {
            out.feasible = false;
            out.violations.push(msg);
        }
    };
    let jets = match spec.jets(x, y, JetOrder::Two) {
        Ok(j) => j,
        Err(e) => {
            note(f64::INFINITY, format!("evaluation failed: {e}"));
            return out;
        }
    };
    let lag = lagrangian_from_jets(spec, &jets, u);
    for (l, v) in lag.value.iter().enumerate() {
        note(v.abs(), format!("|L_{}| = {v:e}", l + 1));
    }
    for (i, gi) in jets.lower_cons.iter().enumerate() {
        let (ui, g) = (u[i], gi.value);
        note(-ui, format!("u_{} < 0 ({ui:e})", i + 1));
        note(g, format!("g_{} > 0 ({g:e})", i + 1));
        note((ui * g).abs(), format!("|u_{0} g_{0}| = {1:e}", i + 1, (ui * g).abs()));
    }
    for (j, gj) in jets.upper_cons.iter().enumerate() {
        note(gj.value, format!("G_{} > 0 ({:e})", j + 1, gj.value));
    }
    out
}

/// Candidate limiting multipliers read off a relaxed iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedMultipliers {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Indices where more than one relaxed family carries a multiplier above
    /// `support_tol`.
    pub ambiguous: Vec<usize>,
}

/// Maps the relaxed multipliers `(α, β, γ, μ, δ)` of `z` at parameter `t`
/// to `(α, β̃, γ̃)`.
pub fn map_multipliers(
    spec: &ProblemSpec,
    z: &Iterate,
    t: f64,
    opts: &VerifyOptions,
) -> Result<MappedMultipliers, VerifyError> {
    if !(t > 0.0) {
        return Err(VerifyError::NonPositiveT(t));
    }
    let scheme = z.layout.scheme;
    let g = spec.lower_cons_values(z.x(), z.y())?;
    let u = z.u();
    let mut gamma = vec![0.0; spec.q];
    let mut ambiguous = Vec::new();
    for i in 0..spec.q {
        let in_eta = u[i].abs() <= opts.activity_tol && g[i] < -opts.activity_tol;
        let rows = local_rows(scheme, t, u[i], g[i]);
        let mut active = 0;
        let mut c = 0.0;
        for (r, row) in rows.iter().enumerate() {
            let lam = z.family(r)[i];
            if lam.abs() > opts.support_tol {
                active += 1;
            }
            c += lam * row.dg;
        }
        if active > 1 {
            ambiguous.push(i);
        }
        if !in_eta {
            gamma[i] = -c;
        }
    }
    Ok(MappedMultipliers {
        alpha: z.alpha().to_vec(),
        beta: z.beta().iter().map(|b| -b).collect(),
        gamma,
        ambiguous,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flavor {
    #[serde(rename = "none")]
    None,
    C,
    M,
    S,
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::None => "none",
            Flavor::C => "C",
            Flavor::M => "M",
            Flavor::S => "S",
        })
    }
}

/// Sign data for one biactive index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSign {
    pub index: usize,
    pub gamma: f64,
    /// `∇_y g_i · β`.
    pub grad_g_beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierSource {
    Given,
    Mapped,
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub feasible: bool,
    pub partition: Option<IndexPartition>,
    /// `‖∇_x F + ∇G^⊤α + ∇_x L^⊤β + ∇_x g^⊤γ‖₂`.
    pub res_x: f64,
    /// `‖∇_y F + ∇_y L^⊤β + ∇_y g^⊤γ‖₂`.
    pub res_y: f64,
    /// Largest violation of `α ≥ 0`, `G ≤ 0`, `α∘G = 0`.
    pub res_upper: f64,
    /// `‖∇_y g_ν β‖₂`.
    pub res_nu: f64,
    /// `‖γ_η‖₂`.
    pub res_eta: f64,
    pub theta: Vec<ThetaSign>,
    pub flavor: Flavor,
    pub source: MultiplierSource,
    pub tol: f64,
    pub activity_tol: f64,
    pub feas_tol: f64,
}

impl StationarityCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

fn check_len(name: &'static str, v: &[f64], expected: usize) -> Result<(), VerifyError> {
    if v.len() != expected {
        return Err(VerifyError::Length {
            name,
            got: v.len(),
            expected,
        });
    }
    Ok(())
}

/// Derivative data needed by the stationarity conditions at one point.
struct Derivs {
    fx: DVector<f64>,
    fy: DVector<f64>,
    /// `∇G_j` as columns, `n × p`.
    gx_upper: DMatrix<f64>,
    g_upper: Vec<f64>,
    /// `∇_x L_l` as columns, `n × m`.
    lx: DMatrix<f64>,
    /// `∇_y L_l` as columns, `m × m`.
    ly: DMatrix<f64>,
    /// `∇_x g_i` as columns, `n × q`.
    gx: DMatrix<f64>,
    /// `∇_y g_i` as columns, `m × q`.
    gy: DMatrix<f64>,
    g: Vec<f64>,
}

impl Derivs {
    fn at(spec: &ProblemSpec, x: &[f64], y: &[f64], u: &[f64]) -> Result<Self, VerifyError> {
        let (n, m, p, q) = (spec.n, spec.m, spec.p, spec.q);
        let jets = spec.jets(x, y, JetOrder::Two)?;
        let lag = lagrangian_from_jets(spec, &jets, u);
        Ok(Derivs {
            fx: DVector::from_fn(n, |a, _| jets.upper.grad(a)),
            fy: DVector::from_fn(m, |b, _| jets.upper.grad(n + b)),
            gx_upper: DMatrix::from_fn(n, p, |a, j| jets.upper_cons[j].grad(a)),
            g_upper: jets.upper_cons.iter().map(|j| j.value).collect(),
            lx: lag.dx.transpose(),
            ly: lag.dy.transpose(),
            gx: DMatrix::from_fn(n, q, |a, i| jets.lower_cons[i].grad(a)),
            gy: DMatrix::from_fn(m, q, |b, i| jets.lower_cons[i].grad(n + b)),
            g: jets.lower_cons.iter().map(|j| j.value).collect(),
        })
    }
}

/// Evaluates the C-, M- and S-stationarity conditions for given multipliers.
#[allow(clippy::too_many_arguments)]
pub fn check_c(
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    alpha: &[f64],
    beta: &[f64],
    gamma: &[f64],
    opts: &VerifyOptions,
) -> Result<StationarityCertificate, VerifyError> {
    check_len("x", x, spec.n)?;
    check_len("y", y, spec.m)?;
    check_len("u", u, spec.q)?;
    check_len("alpha", alpha, spec.p)?;
    check_len("beta", beta, spec.m)?;
    check_len("gamma", gamma, spec.q)?;
    let d = Derivs::at(spec, x, y, u)?;
    Ok(certify_with(spec, x, y, u, alpha, beta, gamma, &d, opts, MultiplierSource::Given))
}

#[allow(clippy::too_many_arguments)]
fn certify_with(
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    alpha: &[f64],
    beta: &[f64],
    gamma: &[f64],
    d: &Derivs,
    opts: &VerifyOptions,
    source: MultiplierSource,
) -> StationarityCertificate {
    let feasible = feasibility(spec, x, y, u, opts.feas_tol).feasible;
    let partition = IndexPartition::from_values(u, &d.g, opts.activity_tol).ok();
    let (al, be, ga) = (
        DVector::from_column_slice(alpha),
        DVector::from_column_slice(beta),
        DVector::from_column_slice(gamma),
    );
    let res_x = (&d.fx + &d.gx_upper * &al + &d.lx * &be + &d.gx * &ga).norm();
    let res_y = (&d.fy + &d.ly * &be + &d.gy * &ga).norm();
    let mut res_upper: f64 = 0.0;
    for (a, gv) in alpha.iter().zip(&d.g_upper) {
        res_upper = res_upper.max(-a).max(*gv).max((a * gv).abs());
    }
    let gyb = d.gy.tr_mul(&be);
    let (mut res_nu, mut res_eta, mut theta) = (0.0, 0.0, Vec::new());
    if let Some(part) = &partition {
        res_nu = part.nu.iter().map(|&i| gyb[i] * gyb[i]).sum::<f64>().sqrt();
        res_eta = part.eta.iter().map(|&i| gamma[i] * gamma[i]).sum::<f64>().sqrt();
        theta = part
            .theta
            .iter()
            .map(|&i| ThetaSign {
                index: i,
                gamma: gamma[i],
                grad_g_beta: gyb[i],
            })
            .collect();
    }
    let tol = opts.tol;
    let base = feasible
        && partition.is_some()
        && [res_x, res_y, res_upper, res_nu, res_eta].iter().all(|r| *r <= tol);
    let c = base && theta.iter().all(|s| s.gamma * s.grad_g_beta >= -tol);
    let m = c
        && theta
            .iter()
            .all(|s| (s.gamma <= tol && s.grad_g_beta <= tol) || (s.gamma * s.grad_g_beta).abs() <= tol);
    let s = m && theta.iter().all(|s| s.gamma <= tol && s.grad_g_beta <= tol);
    let flavor = match (c, m, s) {
        (_, _, true) => Flavor::S,
        (_, true, _) => Flavor::M,
        (true, _, _) => Flavor::C,
        _ => Flavor::None,
    };
    StationarityCertificate {
        x: x.to_vec(),
        y: y.to_vec(),
        u: u.to_vec(),
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        gamma: gamma.to_vec(),
        feasible,
        partition,
        res_x,
        res_y,
        res_upper,
        res_nu,
        res_eta,
        theta,
        flavor,
        source,
        tol,
        activity_tol: opts.activity_tol,
        feas_tol: opts.feas_tol,
    }
}

/// Least-squares multipliers for the stationarity equations.
///
/// `α` is restricted to active upper constraints, `γ_η = 0`, and
/// `∇_y g_ν β = 0` is added as equations. Components of `α` that come out
/// negative are dropped and the fit repeated.
fn least_squares_multipliers(spec: &ProblemSpec, u: &[f64], d: &Derivs, opts: &VerifyOptions) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, m, p, q) = (spec.n, spec.m, spec.p, spec.q);
    let mut act: Vec<usize> = (0..p).filter(|&j| d.g_upper[j] >= -opts.activity_tol).collect();
    let part = IndexPartition::from_values(u, &d.g, opts.activity_tol).ok();
    let eta: Vec<usize> = match &part {
        Some(pt) => pt.eta.clone(),
        None => (0..q).filter(|&i| u[i].abs() <= opts.activity_tol && d.g[i] < -opts.activity_tol).collect(),
    };
    let nu: Vec<usize> = part.as_ref().map(|pt| pt.nu.clone()).unwrap_or_default();
    let free_g: Vec<usize> = (0..q).filter(|i| !eta.contains(i)).collect();
    loop {
        let cols = act.len() + m + free_g.len();
        let rows = n + m + nu.len();
        let mut a = DMatrix::zeros(rows, cols);
        let mut rhs = DVector::zeros(rows);
        for r in 0..n {
            rhs[r] = -d.fx[r];
        }
        for r in 0..m {
            rhs[n + r] = -d.fy[r];
        }
        for (c, &j) in act.iter().enumerate() {
            for r in 0..n {
                a[(r, c)] = d.gx_upper[(r, j)];
            }
        }
        for l in 0..m {
            let c = act.len() + l;
            for r in 0..n {
                a[(r, c)] = d.lx[(r, l)];
            }
            for r in 0..m {
                a[(n + r, c)] = d.ly[(r, l)];
            }
            for (k, &i) in nu.iter().enumerate() {
                a[(n + m + k, c)] = d.gy[(l, i)];
            }
        }
        for (k, &i) in free_g.iter().enumerate() {
            let c = act.len() + m + k;
            for r in 0..n {
                a[(r, c)] = d.gx[(r, i)];
            }
            for r in 0..m {
                a[(n + r, c)] = d.gy[(r, i)];
            }
        }
        let w = if cols == 0 {
            DVector::zeros(0)
        } else {
            a.svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(cols))
        };
        if let Some(k) = (0..act.len()).find(|&k| w[k] < -opts.tol) {
            act.remove(k);
            continue;
        }
        let mut alpha = vec![0.0; p];
        for (k, &j) in act.iter().enumerate() {
            alpha[j] = w[k].max(0.0);
        }
        let beta = (0..m).map(|l| w[act.len() + l]).collect();
        let mut gamma = vec![0.0; q];
        for (k, &i) in free_g.iter().enumerate() {
            gamma[i] = w[act.len() + m + k];
        }
        return (alpha, beta, gamma);
    }
}

/// Certificate for the final iterate of a relaxed run at parameter `t`.
///
/// Mapped multipliers are tried first; if they do not reach flavor C, a
/// least-squares fit is tried and the better certificate is returned.
pub fn certify(spec: &ProblemSpec, z: &Iterate, t: f64, opts: &VerifyOptions) -> Result<StationarityCertificate, VerifyError> {
    let mapped = map_multipliers(spec, z, t, opts)?;
    let (x, y, u) = (z.x(), z.y(), z.u());
    let d = Derivs::at(spec, x, y, u)?;
    let first = certify_with(spec, x, y, u, &mapped.alpha, &mapped.beta, &mapped.gamma, &d, opts, MultiplierSource::Mapped);
    if first.flavor != Flavor::None || !first.feasible {
        return Ok(first);
    }
    let (a, b, g) = least_squares_multipliers(spec, u, &d, opts);
    let second = certify_with(spec, x, y, u, &a, &b, &g, &d, opts, MultiplierSource::LeastSquares);
    Ok(if second.flavor > first.flavor { second } else { first })
}

/// Membership of `(β, γ)` in the C-multiplier set `Λ^ec(x, y, u, v)`, with
/// `v` of length `n + m`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_ec_member(
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    v: &[f64],
    beta: &[f64],
    gamma: &[f64],
    opts: &VerifyOptions,
) -> Result<bool, VerifyError> {
    check_len("v", v, spec.n + spec.m)?;
    check_len("beta", beta, spec.m)?;
    check_len("gamma", gamma, spec.q)?;
    let d = Derivs::at(spec, x, y, u)?;
    let Ok(part) = IndexPartition::from_values(u, &d.g, opts.activity_tol) else {
        return Ok(false);
    };
    let (be, ga) = (DVector::from_column_slice(beta), DVector::from_column_slice(gamma));
    let gyb = d.gy.tr_mul(&be);
    let tol = opts.tol;
    if part.nu.iter().any(|&i| gyb[i].abs() > tol) || part.eta.iter().any(|&i| gamma[i].abs() > tol) {
        return Ok(false);
    }
    if part.theta.iter().any(|&i| gamma[i] * gyb[i] < -tol) {
        return Ok(false);
    }
    let rx = DVector::from_column_slice(&v[..spec.n]) + &d.lx * &be + &d.gx * &ga;
    let ry = DVector::from_column_slice(&v[spec.n..]) + &d.ly * &be + &d.gy * &ga;
    Ok(rx.amax() <= tol && ry.amax() <= tol)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Upper,
    Lower,
}

/// Whether the only nonnegative combination of active constraint gradients
/// that vanishes is the trivial one (`∇G` for the upper level, `∇_y g` for
/// the lower level).
pub fn check_regularity(spec: &ProblemSpec, x: &[f64], y: &[f64], level: Level, activity_tol: f64) -> Result<bool, VerifyError> {
    let d = Derivs::at(spec, x, y, &vec![0.0; spec.q])?;
    let cols: Vec<DVector<f64>> = match level {
        Level::Upper => (0..spec.p)
            .filter(|&j| d.g_upper[j] >= -activity_tol)
            .map(|j| d.gx_upper.column(j).into_owned())
            .collect(),
        Level::Lower => (0..spec.q)
            .filter(|&i| d.g[i] >= -activity_tol)
            .map(|i| d.gy.column(i).into_owned())
            .collect(),
    };
    positively_independent(&cols)
}

/// Decides whether `Σ a_k c_k = 0, a ≥ 0` forces `a = 0` by maximizing
/// `Σ a_k` over `0 ≤ a ≤ 1`.
pub fn positively_independent(cols: &[DVector<f64>]) -> Result<bool, VerifyError> {
    let k = cols.len();
    if k == 0 {
        return Ok(true);
    }
    let dim = cols[0].len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in 0..dim {
        let row: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        a.push(row.iter().map(|v| -v).collect());
        a.push(row);
        b.push(0.0);
        b.push(0.0);
    }
    for j in 0..k {
        let mut row = vec![0.0; k];
        row[j] = 1.0;
        a.push(row);
        b.push(1.0);
    }
    let sol = lp::maximize(&vec![1.0; k], &a, &b)?;
    Ok(sol.value <= 1e-9)
}

/// Result of the EOC computation; degenerate histories are never numeric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eoc {
    Value(f64),
    Undefined(String),
}

impl Eoc {
    pub fn value(&self) -> Option<f64> {
        match self {
            Eoc::Value(v) => Some(*v),
            Eoc::Undefined(_) => None,
        }
    }
}

/// `max(log r_{K-1}/log r_{K-2}, log r_K/log r_{K-1})` over the last three
/// residual norms.
pub fn eoc(history: &[f64]) -> Eoc {
    if history.len() < 3 {
        return Eoc::Undefined(format!("need at least 3 residual norms, got {}", history.len()));
    }
    let last = &history[history.len() - 3..];
    for &r in last {
        if !(r > 0.0 && r.is_finite()) {
            return Eoc::Undefined(format!("residual norm {r} has no finite positive logarithm"));
        }
        if r == 1.0 {
            return Eoc::Undefined("residual norm equal to 1 (zero logarithm)".into());
        }
    }
    let l: Vec<f64> = last.iter().map(|r| r.log10()).collect();
    let e = (l[1] / l[0]).max(l[2] / l[1]);
    if e.is_finite() {
        Eoc::Value(e)
    } else {
        Eoc::Undefined("non-finite ratio".into())
    }
}

/// EOC of a run: taken over the residual history of the last stage with at
/// least three entries.
pub fn run_eoc(report: &SolveReport) -> Eoc {
    match report.stages.iter().rev().find(|s| s.residual_history.len() >= 3) {
        Some(s) => eoc(&s.residual_history),
        None => Eoc::Undefined("no stage with at least 3 residual norms".into()),
    }
}

/// `|F_pes − F(x*, y*)|`, or `None` without a reference value.
pub fn accuracy(f_value: f64, known_f_pes: Option<f64>) -> Option<f64> {
    known_f_pes.map(|r| (r - f_value).abs())
}

/// Everything the benchmark records about one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub feasibility: Feasibility,
    pub certificate: Option<StationarityCertificate>,
    pub flavor: Flavor,
    pub upper_objective: Option<f64>,
    pub accuracy: Option<f64>,
    pub eoc: Eoc,
}

pub fn assess(spec: &ProblemSpec, report: &SolveReport, opts: &VerifyOptions) -> Assessment {
    let z = &report.final_iterate;
    let feas = feasibility(spec, z.x(), z.y(), z.u(), opts.feas_tol);
    let certificate = if feas.feasible {
        certify(spec, z, report.final_t, opts).ok()
    } else {
        None
    };
    let upper_objective = spec.upper_obj.eval(z.x(), z.y()).ok();
    let known = spec.known.as_ref().and_then(|k| k.f_pes);
    Assessment {
        flavor: certificate.as_ref().map_or(Flavor::None, |c| c.flavor),
        accuracy: upper_objective.and_then(|f| accuracy(f, known)),
        eoc: run_eoc(report),
        feasibility: feas,
        certificate,
        upper_objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsys::IterateLayout;
    use crate::outer::{solve, SolveOptions};
    use crate::problem::{ex_linear, ex_toy};
    use crate::relax::Scheme;
    use proptest::prelude::*;

    fn spec(f_upper: &str, g_upper: &str, f_lower: &str, g_lower: &str) -> ProblemSpec {
        let text = format!(
            "name = \"t\"\nn = 1\nm = 1\np = 1\nq = 1\nF = \"{f_upper}\"\nG = [\"{g_upper}\"]\nf = \"{f_lower}\"\ng = [\"{g_lower}\"]\n[start_box]\nx = [[0.0, 1.0]]\ny = [[0.0, 1.0]]\n"
        );
        ProblemSpec::from_toml_str(&text, "test").unwrap()
    }

    #[test]
    fn feasibility_examples() {
        let s = ex_linear();
        assert!(feasibility(&s, &[0.5], &[1.0], &[0.5], 1e-4).feasible);
        // u = -0.01 at the point x = -0.01 keeps L = 0 but breaks u >= 0 and G <= 0
        let v = feasibility(&s, &[-0.01], &[1.0], &[-0.01], 1e-4);
        assert!(!v.feasible);
        assert!(v.violations.iter().any(|m| m.starts_with("u_1 < 0")), "{v:?}");
        let v = feasibility(&s, &[-1e-5], &[1.0], &[-1e-5], 1e-4);
        assert!(v.feasible, "{v:?}");
        assert!(!feasibility(&s, &[0.5], &[0.9], &[0.5], 1e-4).feasible);
    }

    fn iterate(spec: &ProblemSpec, scheme: Scheme, x: f64, y: f64, u: &[f64], fams: &[&[f64]], beta: f64) -> Iterate {
        let layout = IterateLayout::new(spec, scheme);
        let mut data = vec![0.0; layout.len()];
        data[layout.x()].copy_from_slice(&[x]);
        data[layout.y()].copy_from_slice(&[y]);
        data[layout.u()].copy_from_slice(u);
        data[layout.beta()].copy_from_slice(&[beta]);
        for (r, f) in fams.iter().enumerate() {
            data[layout.family(r)].copy_from_slice(f);
        }
        Iterate::new(layout, data).unwrap()
    }

    #[test]
    fn mapping_zero_multipliers() {
        let s = ex_linear();
        for scheme in Scheme::ALL {
            let fams = vec![&[0.0][..]; scheme.families()];
            let z = iterate(&s, scheme, 0.5, 1.0, &[0.5], &fams, 0.7);
            let m = map_multipliers(&s, &z, 0.1, &VerifyOptions::default()).unwrap();
            assert_eq!(m.gamma, vec![0.0]);
            assert_eq!(m.beta, vec![-0.7]);
            assert!(m.ambiguous.is_empty());
        }
    }

    #[test]
    fn mapping_scholtes_product_row() {
        // only the product row -u g - t carries a multiplier: γ̃ = δ u
        let s = ex_linear();
        let z = iterate(&s, Scheme::S, 0.5, 1.0, &[0.5], &[&[0.0], &[0.0], &[2.0]], 0.0);
        let m = map_multipliers(&s, &z, 0.01, &VerifyOptions::default()).unwrap();
        assert!((m.gamma[0] - 2.0 * 0.5).abs() < 1e-15);
        // the g row alone: γ̃ = -γ
        let z = iterate(&s, Scheme::S, 0.5, 1.0, &[0.5], &[&[3.0], &[0.0], &[0.0]], 0.0);
        let m = map_multipliers(&s, &z, 0.01, &VerifyOptions::default()).unwrap();
        assert_eq!(m.gamma[0], -3.0);
    }

    #[test]
    fn mapping_ks_outer_branch() {
        // u - g >= 2t: contribution of δ is δ (u - t)
        let s = ex_linear();
        let (t, u, delta) = (0.1, 0.5, 1.5);
        let z = iterate(&s, Scheme::KS, 0.5, 0.8, &[u], &[&[0.0], &[0.0], &[delta]], 0.0);
        let m = map_multipliers(&s, &z, t, &VerifyOptions::default()).unwrap();
        assert!((m.gamma[0] - delta * (u - t)).abs() < 1e-14);
    }

    #[test]
    fn mapping_lf_rows() {
        let s = ex_linear();
        let (t, u) = (0.1, 0.5);
        let z = iterate(&s, Scheme::LF, 0.5, 1.0, &[u], &[&[2.0], &[0.0]], 0.0);
        let m = map_multipliers(&s, &z, t, &VerifyOptions::default()).unwrap();
        assert!((m.gamma[0] - 2.0 * u).abs() < 1e-14);
        let z = iterate(&s, Scheme::LF, 0.5, 1.0, &[u], &[&[0.0], &[2.0]], 0.0);
        let m = map_multipliers(&s, &z, t, &VerifyOptions::default()).unwrap();
        assert!((m.gamma[0] + (u + t) * 2.0).abs() < 1e-14);
        let z = iterate(&s, Scheme::LF, 0.5, 1.0, &[u], &[&[2.0], &[2.0]], 0.0);
        let m = map_multipliers(&s, &z, t, &VerifyOptions::default()).unwrap();
        assert_eq!(m.ambiguous, vec![0]);
    }

    #[test]
    fn mapping_zeroes_eta() {
        let s = ex_linear();
        let z = iterate(&s, Scheme::S, 0.0, 0.3, &[0.0], &[&[1.0], &[1.0], &[1.0]], 0.0);
        let m = map_multipliers(&s, &z, 0.01, &VerifyOptions::default()).unwrap();
        assert_eq!(m.gamma, vec![0.0]);
    }

    proptest! {
        #[test]
        fn mapping_is_scale_consistent(
            scheme in prop::sample::select(Scheme::ALL.to_vec()),
            lam in prop::collection::vec(0.0f64..3.0, 3),
            c in 0.1f64..10.0,
            y in -2.0f64..1.0,
            x in 0.0f64..1.0,
        ) {
            let s = ex_linear();
            let k = scheme.families();
            let fams: Vec<&[f64]> = (0..k).map(|r| std::slice::from_ref(&lam[r])).collect();
            let scaled: Vec<f64> = lam.iter().map(|v| c * v).collect();
            let fams_c: Vec<&[f64]> = (0..k).map(|r| std::slice::from_ref(&scaled[r])).collect();
            let opts = VerifyOptions { support_tol: 0.0, ..Default::default() };
            let a = map_multipliers(&s, &iterate(&s, scheme, x, y, &[x], &fams, 1.0), 0.05, &opts).unwrap();
            let b = map_multipliers(&s, &iterate(&s, scheme, x, y, &[x], &fams_c, 1.0), 0.05, &opts).unwrap();
            prop_assert!((b.gamma[0] - c * a.gamma[0]).abs() <= 1e-12 * (1.0 + b.gamma[0].abs()));
            prop_assert_eq!(a.ambiguous, b.ambiguous);
        }
    }

    /// Problem with a biactive index at the origin where `(β, γ)` can be
    /// chosen freely: `F = β x + -(β+γ) y`, `f = y²/2 - x y`, `g = y`.
    fn theta_case(gamma: f64, beta: f64) -> StationarityCertificate {
        let s = spec(
            &format!("({beta})*x1 + ({})*y1", -(beta + gamma)),
            "x1 - 1",
            "0.5*y1^2 - x1*y1",
            "y1",
        );
        check_c(&s, &[0.0], &[0.0], &[0.0], &[0.0], &[beta], &[gamma], &VerifyOptions::default()).unwrap()
    }

    #[test]
    fn theta_sign_conditions() {
        let c = theta_case(1.0, -1.0);
        assert!(c.res_x < 1e-12 && c.res_y < 1e-12, "{c:?}");
        assert_eq!(c.partition.as_ref().unwrap().theta, vec![0]);
        assert_eq!(c.flavor, Flavor::None);
        assert_eq!(theta_case(1.0, 1.0).flavor, Flavor::C);
        assert_eq!(theta_case(-1.0, -1.0).flavor, Flavor::S);
        assert_eq!(theta_case(0.0, 1.0).flavor, Flavor::M);
        assert_eq!(theta_case(0.0, -1.0).flavor, Flavor::S);
    }

    #[test]
    fn vacuous_theta_with_zero_multipliers() {
        // no active constraint; (0.5, 0.5) is an unconstrained stationary point of F on D
        let s = spec("(x1 - 0.5)^2 + (y1 - 0.5)^2", "x1 - 2", "(y1 - x1)^2", "y1 - 3");
        let c = check_c(&s, &[0.5], &[0.5], &[0.0], &[0.0], &[0.0], &[0.0], &VerifyOptions::default()).unwrap();
        assert!(c.theta.is_empty());
        // with θ = ∅ the M and S sign conditions hold too, so the strongest flavor is reported
        assert!(c.flavor >= Flavor::C);
        assert_eq!(c.flavor, Flavor::S);
        let bad = check_c(&s, &[0.4], &[0.4], &[0.0], &[0.0], &[0.0], &[0.0], &VerifyOptions::default()).unwrap();
        assert_eq!(bad.flavor, Flavor::None);
        let json = c.to_json();
        let back: StationarityCertificate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(json.contains("\"flavor\": \"S\""));
    }

    #[test]
    fn certificate_flavors_nest() {
        for g in [-2.0, -1.0, -1e-7, 0.0, 1e-7, 1.0, 2.0] {
            for b in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                let c = theta_case(g, b);
                let t = &c.theta[0];
                let tol = c.tol;
                let c_ok = t.gamma * t.grad_g_beta >= -tol;
                let m_ok = (t.gamma <= tol && t.grad_g_beta <= tol) || (t.gamma * t.grad_g_beta).abs() <= tol;
                let s_ok = t.gamma <= tol && t.grad_g_beta <= tol;
                if c.flavor >= Flavor::S {
                    assert!(s_ok);
                }
                if c.flavor >= Flavor::M {
                    assert!(m_ok);
                }
                if c.flavor >= Flavor::C {
                    assert!(c_ok);
                }
                if c_ok && !m_ok {
                    assert_eq!(c.flavor, Flavor::C);
                }
            }
        }
    }

    #[test]
    fn lambda_ec_examples() {
        let s = ex_toy();
        let o = VerifyOptions::default();
        // x = 0.5, y = 0, u = (0.5, 0): g_1 = -y = 0 with u_1 > 0 (ν), g_2 = -1 (η)
        let (x, y, u) = ([0.5], [0.0], [0.5, 0.0]);
        assert!(lambda_ec_member(&s, &x, &y, &u, &[0.0, 0.0], &[0.0], &[0.0, 0.0], &o).unwrap());
        assert!(!lambda_ec_member(&s, &x, &y, &u, &[0.0, 0.0], &[0.0], &[0.0, 0.3], &o).unwrap());
        // v + ∇L^⊤β + ∇g^⊤γ = 0: ∇_x L = 1, ∇_y L = 0, ∇g_1 = (0, -1), so v = (-β, γ_1)
        assert!(lambda_ec_member(&s, &x, &y, &u, &[0.0, 0.7], &[0.0], &[0.7, 0.0], &o).unwrap());
        // β ≠ 0 violates ∇_y g_ν β = 0 since ∇_y g_1 = -1
        assert!(!lambda_ec_member(&s, &x, &y, &u, &[-0.2, 0.7], &[0.2], &[0.7, 0.0], &o).unwrap());
    }

    #[test]
    fn lambda_ec_constructed_solution() {
        // θ = ∅: pick β, solve the linear equation for γ_ν and v numerically
        let s = spec("x1", "x1 - 5", "(y1 - x1)^2 + y1", "y1 - 1");
        // at x = 2, y = 1: L = 2(y - x) + 1 + u = 0 ⇒ u = 1 (ν)
        let (x, y, u) = ([2.0], [1.0], [1.0]);
        let o = VerifyOptions::default();
        let d = Derivs::at(&s, &x, &y, &u).unwrap();
        // ∇_y g β = 0 forces β = 0; choose γ = 0.4 and v = -(∇g^⊤γ)
        let gamma = 0.4;
        let v = [-(d.gx[(0, 0)] * gamma), -(d.gy[(0, 0)] * gamma)];
        assert!(lambda_ec_member(&s, &x, &y, &u, &v, &[0.0], &[gamma], &o).unwrap());
        assert!(!lambda_ec_member(&s, &x, &y, &u, &[0.0, 0.0], &[0.0], &[gamma], &o).unwrap());
    }

    #[test]
    fn regularity_examples() {
        let toy = ex_toy();
        assert!(check_regularity(&toy, &[0.0], &[0.5], Level::Upper, 1e-6).unwrap());
        assert!(check_regularity(&toy, &[0.5], &[0.5], Level::Upper, 1e-6).unwrap());
        assert!(check_regularity(&toy, &[0.5], &[0.0], Level::Lower, 1e-6).unwrap());
        let two = ProblemSpec::from_toml_str(
            "name = \"two\"\nn = 1\nm = 1\np = 2\nq = 2\nF = \"x1\"\nG = [\"x1 - 1\", \"1 - x1\"]\nf = \"y1^2\"\ng = [\"y1\", \"-y1\"]\n[start_box]\nx = [[0.0, 1.0]]\ny = [[0.0, 1.0]]\n",
            "two",
        )
        .unwrap();
        assert!(!check_regularity(&two, &[1.0], &[0.0], Level::Upper, 1e-6).unwrap());
        assert!(!check_regularity(&two, &[1.0], &[0.0], Level::Lower, 1e-6).unwrap());
        assert!(check_regularity(&two, &[1.0], &[0.5], Level::Lower, 1e-6).unwrap());
    }

    fn brute_force_dependent(cols: &[Vec<i32>]) -> bool {
        let k = cols.len();
        let dim = cols[0].len();
        let mut a = vec![0i32; k];
        loop {
            let mut j = 0;
            while j < k {
                a[j] += 1;
                if a[j] <= 8 {
                    break;
                }
                a[j] = 0;
                j += 1;
            }
            if j == k {
                return false;
            }
            if (0..dim).all(|r| (0..k).map(|c| a[c] * cols[c][r]).sum::<i32>() == 0) {
                return true;
            }
        }
    }

    proptest! {
        #[test]
        fn regularity_matches_brute_force(
            dim in 1usize..3,
            k in 1usize..4,
            entries in prop::collection::vec(-2i32..=2, 9),
        ) {
            let cols: Vec<Vec<i32>> = (0..k).map(|c| (0..dim).map(|r| entries[c * 3 + r]).collect()).collect();
            let dv: Vec<DVector<f64>> = cols.iter().map(|c| DVector::from_iterator(dim, c.iter().map(|&v| v as f64))).collect();
            prop_assert_eq!(positively_independent(&dv).unwrap(), !brute_force_dependent(&cols));
        }
    }

    #[test]
    fn eoc_examples() {
        assert_eq!(eoc(&[1e-2, 1e-4, 1e-8]), Eoc::Value(2.0));
        assert_eq!(eoc(&[1e-1, 1e-2, 1e-3]).value(), Some(2.0));
        assert!(matches!(eoc(&[1.0, 1e-2, 1e-3]), Eoc::Undefined(_)));
        assert!(matches!(eoc(&[1e-1, 0.0, 1e-3]), Eoc::Undefined(_)));
        assert!(matches!(eoc(&[1e-1, 1e-2]), Eoc::Undefined(_)));
        // only the last three entries count
        assert_eq!(eoc(&[5.0, 1.0, 1e-2, 1e-4, 1e-8]), Eoc::Value(2.0));
    }

    proptest! {
        #[test]
        fn eoc_recovers_exponent_ratio(a in 0.5f64..3.0, r in 1.1f64..3.0) {
            let h: Vec<f64> = (0..3).map(|k| 10f64.powf(-a * r.powi(k))).collect();
            let e = eoc(&h).value().unwrap();
            prop_assert!((e - r).abs() < 1e-12, "{} vs {}", e, r);
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(1.5, Some(1.5)), Some(0.0));
        assert_eq!(accuracy(1.0, Some(1.5)), Some(0.5));
        assert_eq!(accuracy(1.0, None), None);
        // ex_linear: ψ_p(x) = x + 1 is attained at (x, 1)
        let s = ex_linear();
        for x in [0.0, 0.25, 0.5, 1.0] {
            let f = s.upper_obj.eval(&[x], &[1.0]).unwrap();
            assert_eq!(accuracy(f, Some(x + 1.0)), Some(0.0));
        }
    }

    #[test]
    fn scholtes_toy_run_is_certified() {
        let s = ex_toy();
        let mut opts = SolveOptions::new(Scheme::S);
        opts.seed = 0;
        let rep = solve(&s, &opts).unwrap();
        let a = assess(&s, &rep, &VerifyOptions::default());
        assert!(a.feasibility.feasible, "{a:?}");
        assert!(a.flavor >= Flavor::C, "{:?}", a.certificate);
    }
}
