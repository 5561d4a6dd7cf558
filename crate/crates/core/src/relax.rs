//! The five relaxation schemes, membership in `D(x)` and `D^t_R(x)`, and
//! index-set classification.
//!
//! Every relaxed row depends on the pair `(u_i, g_i(x, y))` only, so the
//! schemes are written as scalar functions of `(u, g)` with first and second
//! partials. Gradients with respect to `(x, y)` follow by the chain rule
//! through `∇g_i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{eval_jet, ExprError, JetOrder};
use crate::problem::{lagrangian, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxError {
    #[error("relaxation parameter must be positive, got t = {0}")]
    NonPositiveT(f64),
    #[error("index {index} out of range (q = {q})")]
    Index { index: usize, q: usize },
    #[error("complementarity violated at index {index}: u = {u}, g = {g}")]
    Complementarity { index: usize, u: f64, g: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Relaxation scheme tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Scholtes.
    #[serde(rename = "s")]
    S,
    /// Lin–Fukushima.
    #[serde(rename = "lf")]
    LF,
    /// Kadrani–Dussault–Benchakroun.
    #[serde(rename = "kdb")]
    KDB,
    /// Steffensen–Ulbrich.
    #[serde(rename = "su")]
    SU,
    /// Kanzow–Schwartz.
    #[serde(rename = "ks")]
    KS,
}

/// Multiplier family attached to a relaxed row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Gamma,
    Mu,
    Delta,
}

const THREE: [Family; 3] = [Family::Gamma, Family::Mu, Family::Delta];
const TWO: [Family; 2] = [Family::Gamma, Family::Delta];

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::S, Scheme::LF, Scheme::KDB, Scheme::SU, Scheme::KS];

    /// Number of relaxed rows per lower-level constraint.
    pub fn families(self) -> usize {
        self.family_list().len()
    }

    /// Multiplier family of each row, in row order.
    pub fn family_list(self) -> &'static [Family] {
        match self {
            Scheme::LF => &TWO,
            _ => &THREE,
        }
    }

    pub fn has_mu(self) -> bool {
        self != Scheme::LF
    }

    /// Lowercase command-line tag.
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::S => "s",
            Scheme::LF => "lf",
            Scheme::KDB => "kdb",
            Scheme::SU => "su",
            Scheme::KS => "ks",
        }
    }

    /// Column label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Scheme::S => "Scholtes",
            Scheme::LF => "LF",
            Scheme::KDB => "KDB",
            Scheme::SU => "SU",
            Scheme::KS => "KS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "scholtes" => Ok(Scheme::S),
            "lf" => Ok(Scheme::LF),
            "kdb" => Ok(Scheme::KDB),
            "su" => Ok(Scheme::SU),
            "ks" => Ok(Scheme::KS),
            _ => Err(format!("unknown scheme `{s}` (expected s, lf, kdb, su or ks)")),
        }
    }
}

/// Value and partials of one relaxed row as a function of `(u, g)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RowJet {
    pub value: f64,
    pub du: f64,
    pub dg: f64,
    pub duu: f64,
    pub dug: f64,
    pub dgg: f64,
}

impl RowJet {
    fn linear(value: f64, du: f64, dg: f64) -> Self {
        RowJet {
            value,
            du,
            dg,
            ..Default::default()
        }
    }
}

/// The SU regularization function and its first two derivatives.
pub fn su_theta(z: f64) -> (f64, f64, f64) {
    let z2 = z * z;
    (
        (-z2 * z2 + 6.0 * z2 + 3.0) / 8.0,
        (-z2 * z + 3.0 * z) / 2.0,
        (3.0 - 3.0 * z2) / 2.0,
    )
}

fn su_row(t: f64, u: f64, g: f64) -> RowJet {
    let s = u + g;
    if s >= t {
        RowJet::linear(-2.0 * g, 0.0, -2.0)
    } else if s <= -t {
        RowJet::linear(2.0 * u, 2.0, 0.0)
    } else {
        let (th, d1, d2) = su_theta(s / t);
        let c = -d2 / t;
        RowJet {
            value: u - g - t * th,
            du: 1.0 - d1,
            dg: -1.0 - d1,
            duu: c,
            dug: c,
            dgg: c,
        }
    }
}

fn ks_row(t: f64, u: f64, g: f64) -> RowJet {
    let (a, b) = (u - t, -g - t);
    if u - g >= 2.0 * t {
        RowJet {
            value: a * b,
            du: b,
            dg: -a,
            dug: -1.0,
            ..Default::default()
        }
    } else {
        RowJet {
            value: -0.5 * (a * a + b * b),
            du: -a,
            dg: b,
            duu: -1.0,
            dgg: -1.0,
            ..Default::default()
        }
    }
}

/// All relaxed rows of `scheme` for one index, as functions of `(u, g)`.
///
/// The result has `scheme.families()` entries in the order of
/// [`Scheme::family_list`].
pub fn local_rows(scheme: Scheme, t: f64, u: f64, g: f64) -> Vec<RowJet> {
    match scheme {
        Scheme::S => vec![
            RowJet::linear(g, 0.0, 1.0),
            RowJet::linear(-u, -1.0, 0.0),
            RowJet {
                value: -u * g - t,
                du: -g,
                dg: -u,
                dug: -1.0,
                ..Default::default()
            },
        ],
        Scheme::LF => vec![
            RowJet {
                value: -(u * g + t * t),
                du: -g,
                dg: -u,
                dug: -1.0,
                ..Default::default()
            },
            RowJet {
                value: -(u + t) * (-g + t) + t * t,
                du: g - t,
                dg: u + t,
                dug: 1.0,
                ..Default::default()
            },
        ],
        Scheme::KDB => vec![
            RowJet::linear(g - t, 0.0, 1.0),
            RowJet::linear(-u - t, -1.0, 0.0),
            RowJet {
                value: -(u - t) * (g + t),
                du: -(g + t),
                dg: -(u - t),
                dug: -1.0,
                ..Default::default()
            },
        ],
        Scheme::SU => vec![
            RowJet::linear(g, 0.0, 1.0),
            RowJet::linear(-u, -1.0, 0.0),
            su_row(t, u, g),
        ],
        Scheme::KS => vec![
            RowJet::linear(g, 0.0, 1.0),
            RowJet::linear(-u, -1.0, 0.0),
            ks_row(t, u, g),
        ],
    }
}

fn check_args(spec: &ProblemSpec, t: f64, i: usize) -> Result<(), RelaxError> {
    if !(t > 0.0) {
        return Err(RelaxError::NonPositiveT(t));
    }
    if i >= spec.q {
        return Err(RelaxError::Index { index: i, q: spec.q });
    }
    Ok(())
}

/// Relaxed rows `φ^t_{i,R}(x, y, u)` for the 0-based constraint index `i`.
pub fn phi(
    scheme: Scheme,
    t: f64,
    i: usize,
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
) -> Result<Vec<f64>, RelaxError> {
    check_args(spec, t, i)?;
    let g = spec.lower_cons[i].eval(x, y)?;
    Ok(local_rows(scheme, t, u[i], g).iter().map(|r| r.value).collect())
}

/// Gradient of one relaxed row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGrad {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Partial with respect to `u_i` (the row does not depend on other `u`).
    pub du: f64,
}

/// Gradients of every relaxed row for index `i`.
pub fn phi_grad(
    scheme: Scheme,
    t: f64,
    i: usize,
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
) -> Result<Vec<RowGrad>, RelaxError> {
    check_args(spec, t, i)?;
    let jet = eval_jet(&spec.lower_cons[i], x, y, JetOrder::One, &spec.all_vars())?;
    let n = spec.n;
    Ok(local_rows(scheme, t, u[i], jet.value)
        .iter()
        .map(|r| RowGrad {
            dx: (0..n).map(|a| r.dg * jet.grad(a)).collect(),
            dy: (0..spec.m).map(|b| r.dg * jet.grad(n + b)).collect(),
            du: r.du,
        })
        .collect())
}

/// `(x, y, u) ∈ D(x)`: KKT conditions of the lower level within `tol`.
pub fn member_d(spec: &ProblemSpec, x: &[f64], y: &[f64], u: &[f64], tol: f64) -> bool {
    let Ok(l) = lagrangian(spec, x, y, u) else {
        return false;
    };
    let Ok(g) = spec.lower_cons_values(x, y) else {
        return false;
    };
    l.value.iter().all(|v| v.abs() <= tol)
        && u.iter().zip(&g).all(|(&ui, &gi)| ui >= -tol && gi <= tol && (ui * gi).abs() <= tol)
}

/// `(x, y, u) ∈ D^t_R(x)`: `L = 0` and every relaxed row `<= 0`, within `tol`.
pub fn member_dt(
    scheme: Scheme,
    t: f64,
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    tol: f64,
) -> bool {
    if !(t > 0.0) {
        return false;
    }
    let Ok(l) = lagrangian(spec, x, y, u) else {
        return false;
    };
    let Ok(g) = spec.lower_cons_values(x, y) else {
        return false;
    };
    l.value.iter().all(|v| v.abs() <= tol)
        && (0..spec.q).all(|i| local_rows(scheme, t, u[i], g[i]).iter().all(|r| r.value <= tol))
}

/// Biactive/strongly-active classification of the lower-level constraints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexPartition {
    /// `u_i = 0`, `g_i < 0`.
    pub eta: Vec<usize>,
    /// `u_i = 0`, `g_i = 0`.
    pub theta: Vec<usize>,
    /// `u_i > 0`, `g_i = 0`.
    pub nu: Vec<usize>,
    pub tol: f64,
}

impl IndexPartition {
    /// Classifies precomputed `(u_i, g_i)` pairs.
    ///
    /// A pair with `u_i > tol` and `g_i < -tol` whose product is still within
    /// `tol` goes to whichever side it is closer to.
    pub fn from_values(u: &[f64], g: &[f64], tol: f64) -> Result<Self, RelaxError> {
        let mut part = IndexPartition {
            tol,
            ..Default::default()
        };
        for (i, (&ui, &gi)) in u.iter().zip(g).enumerate() {
            let bad = || RelaxError::Complementarity { index: i, u: ui, g: gi };
            if ui < -tol || gi > tol || (ui * gi).abs() > tol {
                return Err(bad());
            }
            if ui <= tol {
                if gi < -tol {
                    part.eta.push(i);
                } else {
                    part.theta.push(i);
                }
            } else if gi >= -tol || ui >= gi.abs() {
                part.nu.push(i);
            } else {
                part.eta.push(i);
            }
        }
        Ok(part)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.eta.contains(&i) || self.theta.contains(&i) || self.nu.contains(&i)
    }
}

/// Index sets `η`, `θ`, `ν` at `(x, y, u)`.
pub fn index_sets(
    spec: &ProblemSpec,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    tol: f64,
) -> Result<IndexPartition, RelaxError> {
    let g = spec.lower_cons_values(x, y)?;
    IndexPartition::from_values(u, &g, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ex_linear, ex_toy};
    use proptest::prelude::*;

    #[test]
    fn families_match_rows() {
        for s in Scheme::ALL {
            assert_eq!(local_rows(s, 0.1, 0.3, -0.2).len(), s.families());
            assert_eq!(s.tag().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!(Scheme::LF.families(), 2);
        assert!(!Scheme::LF.has_mu());
        assert!("xx".parse::<Scheme>().is_err());
    }

    #[test]
    fn scholtes_boundary_example() {
        let r = local_rows(Scheme::S, 0.5, 1.0, -0.5);
        let v: Vec<f64> = r.iter().map(|r| r.value).collect();
        assert_eq!(v, vec![-0.5, -1.0, 0.0]);
    }

    #[test]
    fn ks_outer_branch_example() {
        let r = local_rows(Scheme::KS, 1.0, 2.0, -2.0);
        assert_eq!(r[2].value, 1.0);
        assert_eq!(r[2].du, 2.0 - 1.0);
    }

    #[test]
    fn kdb_example_membership() {
        // ex_toy, x = 0.75, t = 0.25, (y, u1) = (0, 0.75); L = 0 gives u2 = u1 - x
        let s = ex_toy();
        let (x, t) = (0.75, 0.25);
        assert!(member_dt(Scheme::KDB, t, &s, &[x], &[0.0], &[0.75, 0.0], 1e-12));
        for (y, u1) in [(0.1, 0.6), (-0.25, 1.0), (0.25, 0.5)] {
            let inside = (x - t..=x + t).contains(&u1) && (-t..=t).contains(&y);
            assert_eq!(
                member_dt(Scheme::KDB, t, &s, &[x], &[y], &[u1, u1 - x], 1e-12),
                inside,
                "{y} {u1}"
            );
        }
    }

    #[test]
    fn ks_du_on_outer_branch() {
        let s = ex_linear();
        // g = y - 1 = -2, u = 2, t = 0.5: u - g = 4 >= 1
        let gr = phi_grad(Scheme::KS, 0.5, 0, &s, &[0.3], &[-1.0], &[2.0]).unwrap();
        assert_eq!(gr[2].du, 2.0 - 0.5);
    }

    #[test]
    fn scholtes_row3_gradient() {
        let s = ex_linear();
        let (x, y, u) = (0.3, 0.4, 0.7);
        let gr = phi_grad(Scheme::S, 0.1, 0, &s, &[x], &[y], &[u]).unwrap();
        assert_eq!(gr[2].du, -(y - 1.0));
        assert_eq!(gr[2].dy, vec![-u]);
        assert_eq!(gr[2].dx, vec![0.0]);
    }

    #[test]
    fn su_outer_branch_gradient() {
        let s = ex_linear();
        // u + g = 2 + (-0.5) >= t
        let gr = phi_grad(Scheme::SU, 0.5, 0, &s, &[0.3], &[0.5], &[2.0]).unwrap();
        assert_eq!(gr[2].du, 0.0);
        assert_eq!(gr[2].dy, vec![-2.0]);
    }

    #[test]
    fn su_theta_properties() {
        let (v, d1, d2) = su_theta(1.0);
        assert_eq!((v, d1, d2), (1.0, 1.0, 0.0));
        let (v, d1, d2) = su_theta(-1.0);
        assert_eq!((v, d1, d2), (1.0, -1.0, 0.0));
        for k in -9..=9 {
            assert!(su_theta(k as f64 / 10.0).2 > 0.0);
        }
    }

    #[test]
    fn rejects_nonpositive_t() {
        let s = ex_toy();
        assert!(matches!(
            phi(Scheme::S, 0.0, 0, &s, &[0.0], &[0.0], &[0.0, 0.0]),
            Err(RelaxError::NonPositiveT(_))
        ));
        assert!(phi_grad(Scheme::KS, -1.0, 0, &s, &[0.0], &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn member_d_examples() {
        let s = ex_linear();
        assert!(member_d(&s, &[0.5], &[1.0], &[0.5], 1e-12));
        assert!(member_d(&s, &[0.0], &[0.3], &[0.0], 1e-12));
        assert!(!member_d(&s, &[0.5], &[0.9], &[0.5], 1e-6));
    }

    #[test]
    fn toy_kdb_examples() {
        let s = ex_toy();
        // L = x - u1 + u2 = 0 at x = 0 forces u2 = u1
        assert!(member_dt(Scheme::KDB, 0.5, &s, &[0.0], &[0.5], &[0.2, 0.2], 1e-12));
        // (y, u) = (0, 0, 0) ∈ D(0) but not in D^{1/2}_KDB(0)
        assert!(member_d(&s, &[0.0], &[0.0], &[0.0, 0.0], 1e-12));
        assert!(!member_dt(Scheme::KDB, 0.5, &s, &[0.0], &[0.0], &[0.0, 0.0], 1e-12));
    }

    #[test]
    fn index_set_examples() {
        let s = ex_linear();
        let p = index_sets(&s, &[0.5], &[1.0], &[0.5], 1e-6).unwrap();
        assert_eq!((p.nu.clone(), p.eta.len(), p.theta.len()), (vec![0], 0, 0));
        let p = index_sets(&s, &[0.0], &[0.3], &[0.0], 1e-6).unwrap();
        assert_eq!(p.eta, vec![0]);
        let p = IndexPartition::from_values(&[0.0], &[0.0], 1e-6).unwrap();
        assert_eq!(p.theta, vec![0]);
        assert!(matches!(
            IndexPartition::from_values(&[0.5], &[-0.5], 1e-6),
            Err(RelaxError::Complementarity { index: 0, .. })
        ));
    }

    fn fd_check(scheme: Scheme, t: f64, u: f64, g: f64) {
        let h = 1e-6;
        let r = local_rows(scheme, t, u, g);
        let up = local_rows(scheme, t, u + h, g);
        let um = local_rows(scheme, t, u - h, g);
        let gp = local_rows(scheme, t, u, g + h);
        let gm = local_rows(scheme, t, u, g - h);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(1.0);
        for k in 0..r.len() {
            assert!(close(r[k].du, (up[k].value - um[k].value) / (2.0 * h)), "{scheme} du row {k}");
            assert!(close(r[k].dg, (gp[k].value - gm[k].value) / (2.0 * h)), "{scheme} dg row {k}");
            assert!(close(r[k].duu, (up[k].du - um[k].du) / (2.0 * h)), "{scheme} duu row {k}");
            assert!(close(r[k].dug, (gp[k].du - gm[k].du) / (2.0 * h)), "{scheme} dug row {k}");
            assert!(close(r[k].dgg, (gp[k].dg - gm[k].dg) / (2.0 * h)), "{scheme} dgg row {k}");
        }
    }

    fn away_from_branches(scheme: Scheme, t: f64, u: f64, g: f64) -> bool {
        let margin = 1e-3;
        match scheme {
            Scheme::SU => ((u + g).abs() - t).abs() > margin,
            Scheme::KS => (u - g - 2.0 * t).abs() > margin,
            _ => true,
        }
    }

    proptest! {
        #[test]
        fn row_partials_match_fd(
            k in 0usize..5,
            t in 0.01f64..1.0,
            u in -2.0f64..2.0,
            g in -2.0f64..2.0,
        ) {
            let scheme = Scheme::ALL[k];
            prop_assume!(away_from_branches(scheme, t, u, g));
            fd_check(scheme, t, u, g);
        }

        #[test]
        fn phi_grad_matches_fd_of_phi(
            k in 0usize..5,
            t in 0.01f64..1.0,
            x in 0.0f64..1.0,
            y in -1.0f64..2.0,
            u in 0.0f64..2.0,
        ) {
            let scheme = Scheme::ALL[k];
            let s = ex_linear();
            prop_assume!(away_from_branches(scheme, t, u, y - 1.0));
            let h = 1e-6;
            let gr = phi_grad(scheme, t, 0, &s, &[x], &[y], &[u]).unwrap();
            let yp = phi(scheme, t, 0, &s, &[x], &[y + h], &[u]).unwrap();
            let ym = phi(scheme, t, 0, &s, &[x], &[y - h], &[u]).unwrap();
            for r in 0..gr.len() {
                let fd = (yp[r] - ym[r]) / (2.0 * h);
                prop_assert!((gr[r].dy[0] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }

        #[test]
        fn partition_is_disjoint_and_covering(
            x in prop::sample::select(vec![0.0, 0.5, 1.0]),
            y in prop::sample::select(vec![0.0, 0.5, 1.0]),
            u1 in prop::sample::select(vec![0.0, 0.5, 1.0]),
            u2 in prop::sample::select(vec![0.0, 0.5, 1.0]),
        ) {
            let s = ex_toy();
            let u = [u1, u2];
            let tol = 1e-6;
            if member_d(&s, &[x], &[y], &u, tol) {
                let p = index_sets(&s, &[x], &[y], &u, tol).unwrap();
                let mut all: Vec<usize> = p.eta.iter().chain(&p.theta).chain(&p.nu).copied().collect();
                all.sort();
                prop_assert_eq!(all, vec![0, 1]);
            }
        }
    }
}
