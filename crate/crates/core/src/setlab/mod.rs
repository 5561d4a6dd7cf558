//! Grid sampling of `D(x)` and `D^t_R(x)` in `(y, u)` space, excess and
//! Hausdorff distances, sampled value functions, and closed forms for the two
//! built-in examples.
//!
//! `L(x, y, u) = ∇_y f + Σ u_i ∇_y g_i` is affine in `u`, so only `y` and the
//! `q − rank` "free" multipliers are gridded; the remaining ones are solved
//! from `L = 0` at every grid value of `y`.

pub mod oracle;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{eval_jet, ExprError, JetOrder, VarRef};
use crate::fmt_f64;
use crate::problem::ProblemSpec;
use crate::relax::{local_rows, Scheme};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetlabError {
    #[error("grid step must be positive and finite, got {0}")]
    Step(f64),
    #[error("box for {coord} is [{lo}, {hi}], expected finite lo <= hi")]
    Box { coord: String, lo: f64, hi: f64 },
    #[error("box has {got} {what} intervals, expected {expected}")]
    BoxShape {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("grid would have {0} points; refine the box or enlarge the step")]
    TooLarge(u128),
    #[error("relaxation parameter must be positive, got t = {0}")]
    NonPositiveT(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Upper bound on the number of grid points visited by one call.
pub const MAX_GRID_POINTS: u128 = 50_000_000;

/// Membership predicate defining a sampled set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// The KKT set `D(x)`.
    D,
    /// The relaxed set `D^t_R(x)`.
    Dt { scheme: Scheme, t: f64 },
}

impl Predicate {
    fn validate(&self) -> Result<(), SetlabError> {
        match *self {
            Predicate::Dt { t, .. } if !(t > 0.0) => Err(SetlabError::NonPositiveT(t)),
            _ => Ok(()),
        }
    }

    /// Membership given `g(x, y)`, `u` and the residual `‖L‖∞`.
    pub fn admits(&self, g: &[f64], u: &[f64], l_res: f64, tol: f64) -> bool {
        if !(l_res <= tol) {
            return false;
        }
        match *self {
            Predicate::D => u
                .iter()
                .zip(g)
                .all(|(&ui, &gi)| ui >= -tol && gi <= tol && (ui * gi).abs() <= tol),
            Predicate::Dt { scheme, t } => u
                .iter()
                .zip(g)
                .all(|(&ui, &gi)| local_rows(scheme, t, ui, gi).iter().all(|r| r.value <= tol)),
        }
    }
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Predicate::D => f.write_str("D"),
            Predicate::Dt { scheme, t } => write!(f, "D^{t}_{}", scheme.tag().to_uppercase()),
        }
    }
}

/// Intervals for the gridded coordinates. `u` has one entry per lower-level
/// constraint; entries of multipliers solved from `L = 0` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub y: Vec<[f64; 2]>,
    pub u: Vec<[f64; 2]>,
}

impl GridBox {
    /// `y` from the problem's start box, every `u_i` in `u_range`.
    pub fn from_spec(spec: &ProblemSpec, u_range: [f64; 2]) -> Self {
        GridBox {
            y: spec.start_box.y.clone(),
            u: vec![u_range; spec.q],
        }
    }

    fn validate(&self, spec: &ProblemSpec) -> Result<(), SetlabError> {
        if self.y.len() != spec.m {
            return Err(SetlabError::BoxShape {
                what: "y",
                got: self.y.len(),
                expected: spec.m,
            });
        }
        if self.u.len() != spec.q {
            return Err(SetlabError::BoxShape {
                what: "u",
                got: self.u.len(),
                expected: spec.q,
            });
        }
        let named = self
            .y
            .iter()
            .enumerate()
            .map(|(k, b)| (format!("y{}", k + 1), b))
            .chain(self.u.iter().enumerate().map(|(k, b)| (format!("u{}", k + 1), b)));
        for (coord, &[lo, hi]) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SetlabError::Box { coord, lo, hi });
            }
        }
        Ok(())
    }
}

/// One gridded axis: `lo + k·(hi − lo)/n` for `k = 0..=n`.
#[derive(Clone, Copy, Debug)]
struct Axis {
    lo: f64,
    hi: f64,
    n: usize,
    step: f64,
}

impl Axis {
    fn new([lo, hi]: [f64; 2], step: f64) -> Self {
        // a step that divides the interval up to rounding still reaches `hi`
        let n = ((hi - lo) / step * (1.0 + 1e-12)).floor() as usize;
        Axis { lo, hi, n, step }
    }

    fn at(&self, k: usize) -> f64 {
        if self.n == 0 {
            self.lo
        } else if k == self.n && ((self.hi - self.lo) - self.n as f64 * self.step).abs() < 1e-9 * self.step {
            self.hi
        } else {
            self.lo + k as f64 * self.step
        }
    }
}

/// Grid points passing a membership predicate at a fixed `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSet {
    /// Each point is `(y_1..y_m, u_1..u_q)`.
    pub points: Vec<Vec<f64>>,
    pub m: usize,
    pub q: usize,
    pub x: Vec<f64>,
    pub predicate: Predicate,
    pub grid: GridBox,
    pub step: f64,
    pub tol: f64,
    /// Multipliers that were gridded; the others were solved from `L = 0`.
    pub free_u: Vec<usize>,
}

impl SampledSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn empty(m: usize, q: usize) -> Self {
        SampledSet {
            points: Vec::new(),
            m,
            q,
            x: Vec::new(),
            predicate: Predicate::D,
            grid: GridBox { y: Vec::new(), u: Vec::new() },
            step: 1.0,
            tol: 0.0,
            free_u: Vec::new(),
        }
    }

    /// CSV with header `y1..ym,u1..uq`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.m)
            .map(|k| format!("y{k}"))
            .chain((1..=self.q).map(|k| format!("u{k}")))
            .collect();
        w.write_record(&header)?;
        for p in &self.points {
            w.write_record(p.iter().map(|&v| fmt_f64(v)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads points written by [`write_csv`](Self::write_csv); only
    /// `points`, `m` and `q` are restored.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let m = headers.iter().filter(|h| h.starts_with('y')).count();
        let q = headers.iter().filter(|h| h.starts_with('u')).count();
        let mut set = SampledSet::empty(m, q);
        for rec in r.records() {
            let rec = rec?;
            let p: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
            let p = p.map_err(|e| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            set.points.push(p);
        }
        Ok(set)
    }
}

/// Chooses which multipliers are solved from `L = 0`: a maximal set of
/// linearly independent columns of `∂L/∂u`, scanned in index order.
fn dependent_columns(du: &DMatrix<f64>) -> Vec<usize> {
    let rank_of = |cols: &[usize]| {
        if cols.is_empty() {
            return 0;
        }
        let sub = DMatrix::from_fn(du.nrows(), cols.len(), |r, c| du[(r, cols[c])]);
        sub.svd(false, false).rank(1e-10)
    };
    let mut dep = Vec::new();
    for i in 0..du.ncols() {
        dep.push(i);
        if rank_of(&dep) < dep.len() {
            dep.pop();
        }
    }
    dep
}

type LagrangianParts = (DVector<f64>, DMatrix<f64>, Vec<f64>);

/// `∇_y f` and `∂L/∂u` (`m × q`) at `(x, y)`, plus `g(x, y)`.
fn lagrangian_parts(spec: &ProblemSpec, x: &[f64], y: &[f64]) -> Result<LagrangianParts, ExprError> {
    let wrt: Vec<VarRef> = (0..spec.m).map(VarRef::y).collect();
    let f = eval_jet(&spec.lower_obj, x, y, JetOrder::One, &wrt)?;
    let l0 = DVector::from_fn(spec.m, |l, _| f.grad(l));
    let mut du = DMatrix::zeros(spec.m, spec.q);
    let mut g = Vec::with_capacity(spec.q);
    for (i, gi) in spec.lower_cons.iter().enumerate() {
        let j = eval_jet(gi, x, y, JetOrder::One, &wrt)?;
        for l in 0..spec.m {
            du[(l, i)] = j.grad(l);
        }
        g.push(j.value);
    }
    Ok((l0, du, g))
}

fn mixed_index(mut k: usize, axes: &[Axis]) -> Vec<usize> {
    axes.iter()
        .map(|a| {
            let len = a.n + 1;
            let i = k % len;
            k /= len;
            i
        })
        .collect()
}

fn grid_len(axes: &[Axis]) -> u128 {
    axes.iter().map(|a| a.n as u128 + 1).product()
}

/// All grid points of `box` (with `L = 0` imposed) that satisfy `pred` at `x`.
///
/// Points are ordered with `y` varying slowest; the order does not depend
/// on the number of worker threads.
pub fn sample(spec: &ProblemSpec, pred: Predicate, x: &[f64], grid: &GridBox, step: f64, tol: f64) -> Result<SampledSet, SetlabError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SetlabError::Step(step));
    }
    pred.validate()?;
    grid.validate(spec)?;
    let (m, q) = (spec.m, spec.q);
    let y_axes: Vec<Axis> = grid.y.iter().map(|&b| Axis::new(b, step)).collect();
    let center: Vec<f64> = grid.y.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
    let (_, du_ref, _) = lagrangian_parts(spec, x, &center)?;
    let dep = dependent_columns(&du_ref);
    let free: Vec<usize> = (0..q).filter(|i| !dep.contains(i)).collect();
    let u_axes: Vec<Axis> = free.iter().map(|&i| Axis::new(grid.u[i], step)).collect();
    let total = grid_len(&y_axes) * grid_len(&u_axes);
    if total > MAX_GRID_POINTS {
        return Err(SetlabError::TooLarge(total));
    }
    let ny = grid_len(&y_axes) as usize;
    let nu = grid_len(&u_axes) as usize;

    let chunks: Vec<Result<Vec<Vec<f64>>, ExprError>> = (0..ny)
        .into_par_iter()
        .map(|ky| {
            let iy = mixed_index(ky, &y_axes);
            let y: Vec<f64> = iy.iter().zip(&y_axes).map(|(&k, a)| a.at(k)).collect();
            let (l0, du, g) = lagrangian_parts(spec, x, &y)?;
            let dep_mat = DMatrix::from_fn(m, dep.len(), |r, c| du[(r, dep[c])]);
            let svd = dep_mat.clone().svd(true, true);
            let mut found = Vec::new();
            let mut u = vec![0.0; q];
            for ku in 0..nu {
                let iu = mixed_index(ku, &u_axes);
                let mut rhs = -l0.clone();
                for (c, &i) in free.iter().enumerate() {
                    u[i] = u_axes[c].at(iu[c]);
                    for r in 0..m {
                        rhs[r] -= du[(r, i)] * u[i];
                    }
                }
                if !dep.is_empty() {
                    let Ok(sol) = svd.solve(&rhs, 1e-12) else { continue };
                    for (c, &i) in dep.iter().enumerate() {
                        u[i] = sol[c];
                    }
                }
                let mut l_res: f64 = 0.0;
                for r in 0..m {
                    let mut v = l0[r];
                    for i in 0..q {
                        v += du[(r, i)] * u[i];
                    }
                    l_res = l_res.max(v.abs());
                }
                if pred.admits(&g, &u, l_res, tol) {
                    let mut p = y.clone();
                    p.extend_from_slice(&u);
                    found.push(p);
                }
            }
            Ok(found)
        })
        .collect();
    let mut points = Vec::new();
    for c in chunks {
        points.extend(c?);
    }
    Ok(SampledSet {
        points,
        m,
        q,
        x: x.to_vec(),
        predicate: pred,
        grid: grid.clone(),
        step,
        tol,
        free_u: free,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `e(A, B) = sup_{a∈A} inf_{b∈B} ‖a − b‖`, with `e(∅, B) = 0` and
/// `e(A, ∅) = +∞` for nonempty `A`.
pub fn excess(a: &SampledSet, b: &SampledSet) -> f64 {
    excess_points(&a.points, &b.points)
}

pub fn excess_points(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    a.par_iter()
        .map(|p| b.iter().map(|r| dist2(p, r)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// `d_H(A, B) = max(e(A, B), e(B, A))`.
pub fn hausdorff(a: &SampledSet, b: &SampledSet) -> f64 {
    excess(a, b).max(excess(b, a))
}

/// Sampled value of `max F(x, y)` over a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiApprox {
    /// `None` when no grid point passed the predicate.
    pub value: Option<f64>,
    pub argmax: Option<Vec<f64>>,
    /// The maximizer sits on the boundary of the sampling box, so the true
    /// supremum may lie outside it.
    pub box_truncated: bool,
    pub points: usize,
}

impl PsiApprox {
    /// Sampling only ever sees part of the set, so the value is a lower
    /// bound of the true maximum.
    pub fn is_lower_bound(&self) -> bool {
        self.value.is_some()
    }
}

/// Maximizes the upper-level objective over the members of a sample.
pub fn psi_of_set(spec: &ProblemSpec, set: &SampledSet) -> Result<PsiApprox, SetlabError> {
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for p in &set.points {
        let v = spec.upper_obj.eval(&set.x, &p[..set.m])?;
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, p));
        }
    }
    let box_truncated = match best {
        Some((_, p)) => {
            let near = |v: f64, [lo, hi]: [f64; 2]| (v - lo).abs() <= 0.5 * set.step || (hi - v).abs() <= 0.5 * set.step;
            set.grid.y.iter().enumerate().any(|(k, &b)| near(p[k], b))
                || set.free_u.iter().any(|&i| near(p[set.m + i], set.grid.u[i]))
        }
        None => false,
    };
    Ok(PsiApprox {
        value: best.map(|b| b.0),
        argmax: best.map(|b| b.1.clone()),
        box_truncated,
        points: set.len(),
    })
}

/// `ψ_p(x)` (with `Predicate::D`) or `ψ^t_R(x)` approximated on a grid.
pub fn psi_approx(spec: &ProblemSpec, pred: Predicate, x: &[f64], grid: &GridBox, step: f64, tol: f64) -> Result<PsiApprox, SetlabError> {
    let set = sample(spec, pred, x, grid, step, tol)?;
    psi_of_set(spec, &set)
}
