//! Closed forms of `D(x)` and `D^t_KDB(x)` for `ex_toy` and `ex_linear`.
//!
//! Each set is a finite union of pieces. A piece is a box in `(y, s)` with
//! `u = offset + slope·s`, which covers every case below because `L = 0`
//! leaves at most one free multiplier.

use rand::Rng;
use thiserror::Error;

use super::Predicate;
use crate::relax::Scheme;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no closed form for {predicate} on `{problem}`")]
    Unsupported { problem: String, predicate: String },
    #[error("closed form for {predicate} on `{problem}` needs {requirement}")]
    OutOfRange {
        problem: String,
        predicate: String,
        requirement: &'static str,
    },
}

/// Interval with optionally open ends; `lo` may be `-∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Span {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Span { lo, hi, lo_open: false, hi_open: false }
    }

    pub fn point(v: f64) -> Self {
        Span::closed(v, v)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    /// Closed ends are widened by `tol`; open ends are not.
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        let above = if self.lo_open { v > self.lo } else { v >= self.lo - tol };
        let below = if self.hi_open { v < self.hi } else { v <= self.hi + tol };
        above && below
    }

    fn draw<R: Rng>(&self, rng: &mut R, reach: f64) -> f64 {
        let lo = self.lo.max(-reach.max(-self.hi));
        let hi = self.hi.min(reach.max(self.lo + reach));
        if lo == hi {
            return lo;
        }
        loop {
            let v = rng.random_range(lo..=hi);
            if (!self.lo_open || v > self.lo) && (!self.hi_open || v < self.hi) {
                return v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub y: Vec<Span>,
    pub s: Span,
    pub u_offset: Vec<f64>,
    pub u_slope: Vec<f64>,
}

impl Piece {
    fn is_empty(&self) -> bool {
        self.s.is_empty() || self.y.iter().any(Span::is_empty)
    }

    fn contains(&self, y: &[f64], u: &[f64], tol: f64) -> bool {
        if !self.y.iter().zip(y).all(|(sp, &v)| sp.contains(v, tol)) {
            return false;
        }
        // recover s from the first multiplier that depends on it
        let s = match self.u_slope.iter().position(|&b| b != 0.0) {
            Some(k) => (u[k] - self.u_offset[k]) / self.u_slope[k],
            None => self.s.lo,
        };
        self.s.contains(s, tol)
            && u.iter()
                .enumerate()
                .all(|(k, &uk)| (uk - (self.u_offset[k] + self.u_slope[k] * s)).abs() <= tol)
    }
}

/// A set in `(y, u)` space known in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSet {
    pub pieces: Vec<Piece>,
}

impl OracleSet {
    pub fn is_empty(&self) -> bool {
        self.pieces.iter().all(Piece::is_empty)
    }

    pub fn contains(&self, y: &[f64], u: &[f64], tol: f64) -> bool {
        self.pieces.iter().any(|p| !p.is_empty() && p.contains(y, u, tol))
    }

    /// A uniformly chosen member of a uniformly chosen piece. Unbounded
    /// ends are cut at `±reach`.
    pub fn draw<R: Rng>(&self, rng: &mut R, reach: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let live: Vec<&Piece> = self.pieces.iter().filter(|p| !p.is_empty()).collect();
        if live.is_empty() {
            return None;
        }
        let p = live[rng.random_range(0..live.len())];
        let y = p.y.iter().map(|sp| sp.draw(rng, reach)).collect();
        let s = p.s.draw(rng, reach);
        let u = p.u_offset.iter().zip(&p.u_slope).map(|(a, b)| a + b * s).collect();
        Some((y, u))
    }

    /// `sup y_1` over the set, `-∞` when empty.
    pub fn sup_y1(&self) -> f64 {
        self.pieces
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| p.y[0].hi)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn out_of_range(problem: &str, pred: Predicate, requirement: &'static str) -> OracleError {
    OracleError::OutOfRange {
        problem: problem.to_string(),
        predicate: pred.to_string(),
        requirement,
    }
}

/// Closed form of `pred` at `x` for the built-in examples.
pub fn oracle_set(problem: &str, pred: Predicate, x: f64) -> Result<OracleSet, OracleError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(out_of_range(problem, pred, "0 <= x <= 1"));
    }
    let pieces = match (problem, pred) {
        // L = x − u1 + u2, so u2 = u1 − x
        ("ex_toy", Predicate::D) if x > 0.0 => vec![Piece {
            y: vec![Span::point(0.0)],
            s: Span::point(x),
            u_offset: vec![0.0, -x],
            u_slope: vec![1.0, 1.0],
        }],
        ("ex_toy", Predicate::D) => vec![Piece {
            y: vec![Span::closed(0.0, 1.0)],
            s: Span::point(0.0),
            u_offset: vec![0.0, 0.0],
            u_slope: vec![1.0, 1.0],
        }],
        ("ex_toy", Predicate::Dt { scheme: Scheme::KDB, t }) if x > 0.0 => {
            if !(t > 0.0 && t < x / 2.0) {
                return Err(out_of_range(problem, pred, "0 < t < x/2 when x > 0"));
            }
            vec![Piece {
                y: vec![Span::closed(-t, t)],
                s: Span::closed(x - t, x + t),
                u_offset: vec![0.0, -x],
                u_slope: vec![1.0, 1.0],
            }]
        }
        ("ex_toy", Predicate::Dt { scheme: Scheme::KDB, t }) => {
            if !(t > 0.0 && t <= 0.5) {
                return Err(out_of_range(problem, pred, "0 < t <= 1/2 when x = 0"));
            }
            let piece = |y: Span, s: Span| Piece {
                y: vec![y],
                s,
                u_offset: vec![0.0, 0.0],
                u_slope: vec![1.0, 1.0],
            };
            vec![
                piece(Span::closed(t, 1.0 - t), Span { lo: -t, hi: t, lo_open: false, hi_open: true }),
                piece(Span::closed(-t, 1.0 + t), Span::point(t)),
                // nonempty only for t = 1/2, where it is {1/2} × ]1/2, ∞[
                piece(
                    Span::closed(1.0 - t, t),
                    Span { lo: t, hi: f64::INFINITY, lo_open: true, hi_open: false },
                ),
            ]
        }
        // L = −x + u1, so u1 = x
        ("ex_linear", Predicate::D) if x > 0.0 => vec![Piece {
            y: vec![Span::point(1.0)],
            s: Span::point(x),
            u_offset: vec![0.0],
            u_slope: vec![1.0],
        }],
        ("ex_linear", Predicate::D) => vec![Piece {
            y: vec![Span::closed(f64::NEG_INFINITY, 1.0)],
            s: Span::point(0.0),
            u_offset: vec![0.0],
            u_slope: vec![1.0],
        }],
        ("ex_linear", Predicate::Dt { scheme: Scheme::KDB, t }) if x > 0.0 => {
            if !(t > 0.0 && t < x) {
                return Err(out_of_range(problem, pred, "0 < t < x when x > 0"));
            }
            vec![Piece {
                y: vec![Span::closed(1.0 - t, 1.0 + t)],
                s: Span::point(x),
                u_offset: vec![0.0],
                u_slope: vec![1.0],
            }]
        }
        ("ex_linear", Predicate::Dt { scheme: Scheme::KDB, t }) => {
            if !(t > 0.0) {
                return Err(out_of_range(problem, pred, "t > 0"));
            }
            vec![Piece {
                y: vec![Span::closed(f64::NEG_INFINITY, 1.0 - t)],
                s: Span::point(0.0),
                u_offset: vec![0.0],
                u_slope: vec![1.0],
            }]
        }
        _ => {
            return Err(OracleError::Unsupported {
                problem: problem.to_string(),
                predicate: pred.to_string(),
            })
        }
    };
    Ok(OracleSet { pieces })
}

/// `ψ(x) = max F(x, y)` over the closed-form set. `F = y1` on `ex_toy` and
/// `F = x1 + y1` on `ex_linear`.
pub fn psi_oracle(problem: &str, pred: Predicate, x: f64) -> Result<f64, OracleError> {
    let set = oracle_set(problem, pred, x)?;
    let sup = set.sup_y1();
    Ok(if problem == "ex_linear" { x + sup } else { sup })
}
