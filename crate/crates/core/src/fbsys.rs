//! The smoothed stationarity system `Ψ^{ε,t}_R(ζ) = 0` and its Jacobian.
//!
//! Iterate layout: `ζ = (x[n], y[m], u[q], α[p], β[m], γ[q], μ[q], δ[q])`,
//! with `μ` absent for LF. Residual blocks, in order:
//!
//! 1. `∇_x F + ∇G^T α − ∇_x L^T β − ∇_x Φ`
//! 2. `∇_y F − ∇_y L^T β − ∇_y Φ`
//! 3. `−∇_y g_i β − ∂Φ/∂u_i` for each `i`
//! 4. `L(x, y, u)`
//! 5. `θ^ε(α_j, −G_j(x))`
//! 6. `θ^ε(λ_{r,i}, −φ_{r,i})` for each multiplier family `r` present
//!
//! where `Φ = Σ_i Σ_r λ_{r,i} φ_{r,i}` and `θ^ε` is the smoothed
//! Fischer–Burmeister function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, JetOrder};
use crate::problem::{PointJets, ProblemSpec};
use crate::relax::{local_rows, Family, RowJet, Scheme};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FbError {
    #[error("relaxation parameter must be positive, got t = {0}")]
    NonPositiveT(f64),
    #[error("smoothing parameter must be nonnegative, got ε = {0}")]
    NegativeEpsilon(f64),
    #[error("iterate has length {got}, layout expects {expected}")]
    Length { got: usize, expected: usize },
    #[error("iterate contains a non-finite entry at position {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Smoothed Fischer–Burmeister function `sqrt(a² + b² + 2ε) − (a + b)`.
pub fn fb(a: f64, b: f64, eps: f64) -> f64 {
    (a * a + b * b + 2.0 * eps).sqrt() - (a + b)
}

/// Partials `(∂θ/∂a, ∂θ/∂b)`. At the kink `a = b = ε = 0` an element of the
/// generalized Jacobian is returned.
pub fn fb_grad(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let s = (a * a + b * b + 2.0 * eps).sqrt();
    if s == 0.0 {
        let c = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
        (c, c)
    } else {
        (a / s - 1.0, b / s - 1.0)
    }
}

/// Offsets of the segments of `ζ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterateLayout {
    pub scheme: Scheme,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

impl IterateLayout {
    pub fn new(spec: &ProblemSpec, scheme: Scheme) -> Self {
        IterateLayout {
            scheme,
            n: spec.n,
            m: spec.m,
            p: spec.p,
            q: spec.q,
        }
    }

    pub fn x(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    pub fn y(&self) -> std::ops::Range<usize> {
        let s = self.n;
        s..s + self.m
    }
    pub fn u(&self) -> std::ops::Range<usize> {
        let s = self.n + self.m;
        s..s + self.q
    }
    pub fn alpha(&self) -> std::ops::Range<usize> {
        let s = self.u().end;
        s..s + self.p
    }
    pub fn beta(&self) -> std::ops::Range<usize> {
        let s = self.alpha().end;
        s..s + self.m
    }
    /// Segment of the `r`-th multiplier family in row order.
    pub fn family(&self, r: usize) -> std::ops::Range<usize> {
        let s = self.beta().end + r * self.q;
        s..s + self.q
    }
    pub fn family_of(&self, fam: Family) -> Option<std::ops::Range<usize>> {
        let r = self.scheme.family_list().iter().position(|&f| f == fam)?;
        Some(self.family(r))
    }
    pub fn gamma(&self) -> std::ops::Range<usize> {
        self.family(0)
    }
    /// Empty for LF.
    pub fn mu(&self) -> std::ops::Range<usize> {
        self.family_of(Family::Mu).unwrap_or_else(|| {
            let s = self.family(1).start;
            s..s
        })
    }
    pub fn delta(&self) -> std::ops::Range<usize> {
        self.family_of(Family::Delta).expect("every scheme has δ")
    }
    pub fn len(&self) -> usize {
        self.n + 2 * self.m + self.q + self.p + self.scheme.families() * self.q
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A point `ζ` together with its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub layout: IterateLayout,
    pub data: Vec<f64>,
}

impl Iterate {
    pub fn new(layout: IterateLayout, data: Vec<f64>) -> Result<Self, FbError> {
        if data.len() != layout.len() {
            return Err(FbError::Length {
                got: data.len(),
                expected: layout.len(),
            });
        }
        Ok(Iterate { layout, data })
    }

    pub fn x(&self) -> &[f64] {
        &self.data[self.layout.x()]
    }
    pub fn y(&self) -> &[f64] {
        &self.data[self.layout.y()]
    }
    pub fn u(&self) -> &[f64] {
        &self.data[self.layout.u()]
    }
    pub fn alpha(&self) -> &[f64] {
        &self.data[self.layout.alpha()]
    }
    pub fn beta(&self) -> &[f64] {
        &self.data[self.layout.beta()]
    }
    pub fn gamma(&self) -> &[f64] {
        &self.data[self.layout.gamma()]
    }
    pub fn mu(&self) -> &[f64] {
        &self.data[self.layout.mu()]
    }
    pub fn delta(&self) -> &[f64] {
        &self.data[self.layout.delta()]
    }
    pub fn family(&self, r: usize) -> &[f64] {
        &self.data[self.layout.family(r)]
    }
}

/// `Φ^t_{i,R}` with its partials.
#[derive(Clone, Debug, PartialEq)]
pub struct BigPhi {
    /// `Φ_i`, length `q`.
    pub value: Vec<f64>,
    /// `∂Φ_i/∂λ_{r,i} = φ_{r,i}`, indexed `[r][i]`.
    pub d_lambda: Vec<Vec<f64>>,
    /// `∇_{(x,y)} Φ_i`, indexed `[i][a]`.
    pub dz: Vec<Vec<f64>>,
    /// `∂Φ_i/∂u_i`.
    pub du: Vec<f64>,
}

/// Multiplier-weighted aggregate of the relaxed rows. `lambdas[r]` is the
/// `r`-th family segment (`γ, μ, δ`, or `γ, δ` for LF).
pub fn big_phi(
    scheme: Scheme,
    t: f64,
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    lambdas: &[&[f64]],
) -> Result<BigPhi, FbError> {
    if !(t > 0.0) {
        return Err(FbError::NonPositiveT(t));
    }
    assert_eq!(lambdas.len(), scheme.families(), "one multiplier segment per family");
    let jets = spec.jets(x, y, JetOrder::One)?;
    let k = spec.nvars();
    let mut out = BigPhi {
        value: vec![0.0; spec.q],
        d_lambda: vec![vec![0.0; spec.q]; scheme.families()],
        dz: vec![vec![0.0; k]; spec.q],
        du: vec![0.0; spec.q],
    };
    for (i, gi) in jets.lower_cons.iter().enumerate() {
        let rows = local_rows(scheme, t, u[i], gi.value);
        let mut c = 0.0;
        for (r, row) in rows.iter().enumerate() {
            let lam = lambdas[r][i];
            out.value[i] += lam * row.value;
            out.d_lambda[r][i] = row.value;
            out.du[i] += lam * row.du;
            c += lam * row.dg;
        }
        for a in 0..k {
            out.dz[i][a] = c * gi.grad(a);
        }
    }
    Ok(out)
}

/// The system `Ψ^{ε,t}_R` for one problem and parameter pair.
#[derive(Clone, Copy, Debug)]
pub struct FbSystem<'a> {
    pub spec: &'a ProblemSpec,
    pub scheme: Scheme,
    pub t: f64,
    pub eps: f64,
    pub layout: IterateLayout,
}

/// Per-index data shared by residual and Jacobian.
struct IndexTerms {
    rows: Vec<RowJet>,
    /// Σ λ φ_g, Σ λ φ_u, Σ λ φ_gg, Σ λ φ_ug, Σ λ φ_uu.
    c: f64,
    d: f64,
    cgg: f64,
    cug: f64,
    cuu: f64,
}

impl<'a> FbSystem<'a> {
    pub fn new(spec: &'a ProblemSpec, scheme: Scheme, t: f64, eps: f64) -> Result<Self, FbError> {
        if !(t > 0.0) {
            return Err(FbError::NonPositiveT(t));
        }
        if !(eps >= 0.0) {
            return Err(FbError::NegativeEpsilon(eps));
        }
        Ok(FbSystem {
            spec,
            scheme,
            t,
            eps,
            layout: IterateLayout::new(spec, scheme),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    fn check(&self, z: &[f64]) -> Result<(), FbError> {
        if z.len() != self.dim() {
            return Err(FbError::Length {
                got: z.len(),
                expected: self.dim(),
            });
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(FbError::NonFinite(k));
        }
        Ok(())
    }

    fn jets(&self, z: &[f64], order: JetOrder) -> Result<PointJets, FbError> {
        let l = &self.layout;
        Ok(self.spec.jets(&z[l.x()], &z[l.y()], order)?)
    }

    fn index_terms(&self, z: &[f64], jets: &PointJets) -> Vec<IndexTerms> {
        let l = &self.layout;
        let u = &z[l.u()];
        (0..l.q)
            .map(|i| {
                let rows = local_rows(self.scheme, self.t, u[i], jets.lower_cons[i].value);
                let mut it = IndexTerms {
                    rows,
                    c: 0.0,
                    d: 0.0,
                    cgg: 0.0,
                    cug: 0.0,
                    cuu: 0.0,
                };
                for (r, row) in it.rows.iter().enumerate() {
                    let lam = z[l.family(r)][i];
                    it.c += lam * row.dg;
                    it.d += lam * row.du;
                    it.cgg += lam * row.dgg;
                    it.cug += lam * row.dug;
                    it.cuu += lam * row.duu;
                }
                it
            })
            .collect()
    }

    /// `Ψ^{ε,t}_R(ζ)`.
    pub fn residual(&self, z: &[f64]) -> Result<DVector<f64>, FbError> {
        self.check(z)?;
        let jets = self.jets(z, JetOrder::Two)?;
        let terms = self.index_terms(z, &jets);
        let l = &self.layout;
        let (n, m, q) = (l.n, l.m, l.q);
        let k = n + m;
        let (u, alpha, beta) = (&z[l.u()], &z[l.alpha()], &z[l.beta()]);
        let mut psi = DVector::zeros(self.dim());

        // blocks 1 and 2
        for a in 0..k {
            let mut v = jets.upper.grad(a);
            if a < n {
                for (j, gj) in jets.upper_cons.iter().enumerate() {
                    v += alpha[j] * gj.grad(a);
                }
            }
            for (lidx, &b) in beta.iter().enumerate() {
                v -= b * self.dl(&jets, u, lidx, a);
            }
            for (i, gi) in jets.lower_cons.iter().enumerate() {
                v -= terms[i].c * gi.grad(a);
            }
            psi[a] = v;
        }
        // block 3
        for (i, gi) in jets.lower_cons.iter().enumerate() {
            let mut v = -terms[i].d;
            for (lidx, &b) in beta.iter().enumerate() {
                v -= gi.grad(n + lidx) * b;
            }
            psi[k + i] = v;
        }
        // block 4
        let off4 = k + q;
        for lidx in 0..m {
            let mut v = jets.lower.grad(n + lidx);
            for (i, gi) in jets.lower_cons.iter().enumerate() {
                v += u[i] * gi.grad(n + lidx);
            }
            psi[off4 + lidx] = v;
        }
        // block 5
        let off5 = off4 + m;
        for (j, gj) in jets.upper_cons.iter().enumerate() {
            psi[off5 + j] = fb(alpha[j], -gj.value, self.eps);
        }
        // block 6
        let off6 = off5 + l.p;
        for (i, it) in terms.iter().enumerate() {
            for (r, row) in it.rows.iter().enumerate() {
                psi[off6 + r * q + i] = fb(z[l.family(r)][i], -row.value, self.eps);
            }
        }
        if let Some(bad) = psi.iter().position(|v| !v.is_finite()) {
            return Err(FbError::NonFinite(bad));
        }
        Ok(psi)
    }

    /// `∂L_l/∂z_a = ∂²f/∂z_a∂y_l + Σ u_i ∂²g_i/∂z_a∂y_l`.
    fn dl(&self, jets: &PointJets, u: &[f64], lidx: usize, a: usize) -> f64 {
        let yl = self.layout.n + lidx;
        let mut v = jets.lower.hess(a, yl);
        for (i, gi) in jets.lower_cons.iter().enumerate() {
            v += u[i] * gi.hess(a, yl);
        }
        v
    }

    /// Analytic Jacobian of [`residual`](Self::residual).
    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, FbError> {
        self.check(z)?;
        let jets = self.jets(z, JetOrder::Three)?;
        let terms = self.index_terms(z, &jets);
        let l = &self.layout;
        let (n, m, p, q) = (l.n, l.m, l.p, l.q);
        let k = n + m;
        let (u, alpha, beta) = (&z[l.u()], &z[l.alpha()], &z[l.beta()]);
        let dim = self.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        let cu = l.u().start;
        let ca = l.alpha().start;
        let cb = l.beta().start;
        let fam = self.scheme.families();

        // blocks 1 and 2
        for a in 0..k {
            for b in 0..k {
                let mut v = jets.upper.hess(a, b);
                if a < n && b < n {
                    for (j, gj) in jets.upper_cons.iter().enumerate() {
                        v += alpha[j] * gj.hess(a, b);
                    }
                }
                for (lidx, &bl) in beta.iter().enumerate() {
                    let yl = n + lidx;
                    let mut t3 = jets.lower.third(a, yl, b);
                    for (i, gi) in jets.lower_cons.iter().enumerate() {
                        t3 += u[i] * gi.third(a, yl, b);
                    }
                    v -= bl * t3;
                }
                for (i, gi) in jets.lower_cons.iter().enumerate() {
                    v -= terms[i].cgg * gi.grad(a) * gi.grad(b) + terms[i].c * gi.hess(a, b);
                }
                jac[(a, b)] = v;
            }
            for (i, gi) in jets.lower_cons.iter().enumerate() {
                let mut v = -terms[i].cug * gi.grad(a);
                for (lidx, &bl) in beta.iter().enumerate() {
                    v -= bl * gi.hess(a, n + lidx);
                }
                jac[(a, cu + i)] = v;
                for (r, row) in terms[i].rows.iter().enumerate() {
                    jac[(a, l.family(r).start + i)] = -row.dg * gi.grad(a);
                }
            }
            if a < n {
                for (j, gj) in jets.upper_cons.iter().enumerate() {
                    jac[(a, ca + j)] = gj.grad(a);
                }
            }
            for lidx in 0..m {
                jac[(a, cb + lidx)] = -self.dl(&jets, u, lidx, a);
            }
        }
        // block 3
        for (i, gi) in jets.lower_cons.iter().enumerate() {
            let row = k + i;
            for b in 0..k {
                let mut v = -terms[i].cug * gi.grad(b);
                for (lidx, &bl) in beta.iter().enumerate() {
                    v -= bl * gi.hess(n + lidx, b);
                }
                jac[(row, b)] = v;
            }
            jac[(row, cu + i)] = -terms[i].cuu;
            for lidx in 0..m {
                jac[(row, cb + lidx)] = -gi.grad(n + lidx);
            }
            for (r, rj) in terms[i].rows.iter().enumerate() {
                jac[(row, l.family(r).start + i)] = -rj.du;
            }
        }
        // block 4
        let off4 = k + q;
        for lidx in 0..m {
            for b in 0..k {
                jac[(off4 + lidx, b)] = self.dl(&jets, u, lidx, b);
            }
            for (i, gi) in jets.lower_cons.iter().enumerate() {
                jac[(off4 + lidx, cu + i)] = gi.grad(n + lidx);
            }
        }
        // block 5
        let off5 = off4 + m;
        for (j, gj) in jets.upper_cons.iter().enumerate() {
            let (da, db) = fb_grad(alpha[j], -gj.value, self.eps);
            jac[(off5 + j, ca + j)] = da;
            for b in 0..n {
                jac[(off5 + j, b)] = -db * gj.grad(b);
            }
        }
        // block 6
        let off6 = off5 + p;
        for (i, gi) in jets.lower_cons.iter().enumerate() {
            for r in 0..fam {
                let row = &terms[i].rows[r];
                let lam_col = l.family(r).start + i;
                let (da, db) = fb_grad(z[lam_col], -row.value, self.eps);
                let rr = off6 + r * q + i;
                jac[(rr, lam_col)] = da;
                jac[(rr, cu + i)] = -db * row.du;
                for b in 0..k {
                    jac[(rr, b)] = -db * row.dg * gi.grad(b);
                }
            }
        }
        if let Some(bad) = jac.iter().position(|v| !v.is_finite()) {
            return Err(FbError::NonFinite(bad));
        }
        Ok(jac)
    }

    /// Distance of `z` to the nearest kink of a piecewise relaxation row,
    /// `+∞` for schemes without kinks.
    pub fn branch_distance(&self, z: &[f64]) -> Result<f64, FbError> {
        self.check(z)?;
        let l = &self.layout;
        let g = self.spec.lower_cons_values(&z[l.x()], &z[l.y()])?;
        let u = &z[l.u()];
        let t = self.t;
        Ok((0..l.q)
            .map(|i| match self.scheme {
                Scheme::SU => ((u[i] + g[i]).abs() - t).abs(),
                Scheme::KS => (u[i] - g[i] - 2.0 * t).abs(),
                _ => f64::INFINITY,
            })
            .fold(f64::INFINITY, f64::min))
    }

    /// Largest entrywise gap `|J − J_fd| / max(|J|, 1)` between the analytic
    /// Jacobian and central differences of the residual.
    pub fn jacobian_fd_error(&self, z: &[f64]) -> Result<f64, FbError> {
        let jac = self.jacobian(z)?;
        let mut worst: f64 = 0.0;
        for c in 0..z.len() {
            let h = 1e-6 * z[c].abs().max(1.0);
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[c] += h;
            zm[c] -= h;
            let rp = self.residual(&zp)?;
            let rm = self.residual(&zm)?;
            for r in 0..z.len() {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                worst = worst.max((jac[(r, c)] - fd).abs() / jac[(r, c)].abs().max(1.0));
            }
        }
        Ok(worst)
    }
}
