//! Bilevel problem data, problem files and the built-in examples.
//!
//! A problem is
//!
//! ```text
//! min_x max_{y in S(x)} F(x, y)   s.t.  G(x) <= 0,
//! S(x) = argmin_y { f(x, y) : g(x, y) <= 0 }.
//! ```
//!
//! Interval constraints are written as two inequality rows.

mod registry;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, eval_jet, Expr, ExprError, Group, Jet3, JetOrder, VarRef};

pub use registry::{Registry, PROBLEM_PATH_ENV};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("problem `{0}` is defined twice with different contents")]
    Duplicate(String),
    #[error("unknown problem `{0}`")]
    Unknown(String),
}

/// Reference objective values used only by the accuracy metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Known {
    #[serde(rename = "F_pes", default, skip_serializing_if = "Option::is_none")]
    pub f_pes: Option<f64>,
    #[serde(rename = "F_opt", default, skip_serializing_if = "Option::is_none")]
    pub f_opt: Option<f64>,
}

/// Intervals `[lo, hi]` for random starts and sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartBox {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    /// Upper-level objective `F(x, y)`.
    pub upper_obj: Expr,
    /// Upper-level constraints `G(x) <= 0`.
    pub upper_cons: Vec<Expr>,
    /// Lower-level objective `f(x, y)`.
    pub lower_obj: Expr,
    /// Lower-level constraints `g(x, y) <= 0`.
    pub lower_cons: Vec<Expr>,
    pub start_box: StartBox,
    pub known: Option<Known>,
    pub source: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    source: String,
    n: usize,
    m: usize,
    p: usize,
    q: usize,
    #[serde(rename = "F")]
    upper_obj: String,
    #[serde(rename = "G", default)]
    upper_cons: Vec<String>,
    f: String,
    #[serde(default)]
    g: Vec<String>,
    start_box: StartBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    known: Option<Known>,
}

/// Derivative data of all problem functions at one point.
///
/// `upper`, `lower` and `lower_cons` are taken with respect to the stacked
/// `(x, y)`; `upper_cons` with respect to `x` only.
#[derive(Clone, Debug)]
pub struct PointJets {
    pub upper: Jet3,
    pub upper_cons: Vec<Jet3>,
    pub lower: Jet3,
    pub lower_cons: Vec<Jet3>,
}

/// `L(x,y,u) = ∇_y f + Σ u_i ∇_y g_i` and its partial Jacobians.
#[derive(Clone, Debug)]
pub struct Lagrangian {
    pub value: Vec<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

fn line_of_key(text: &str, key: &str) -> usize {
    for (k, line) in text.lines().enumerate() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix(key) {
            let rest = rest.trim_start();
            if rest.starts_with('=') {
                return k + 1;
            }
        }
    }
    1
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ProblemSpec {
    /// Reads and validates a problem file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProblemError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            file: file.clone(),
            source,
        })?;
        Self::from_toml_str(&text, &file)
    }

    /// Parses problem-file text; `file` is used only in error messages.
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self, ProblemError> {
        let raw: ProblemFile = toml::from_str(text).map_err(|e| ProblemError::Format {
            file: file.to_string(),
            line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        let fail = |key: &str, message: String| ProblemError::Format {
            file: file.to_string(),
            line: line_of_key(text, key),
            message,
        };
        let (n, m) = (raw.n, raw.m);
        if raw.upper_cons.len() != raw.p {
            return Err(fail(
                "G",
                format!("dimension mismatch: p = {} but G has {} entries", raw.p, raw.upper_cons.len()),
            ));
        }
        if raw.g.len() != raw.q {
            return Err(fail(
                "g",
                format!("dimension mismatch: q = {} but g has {} entries", raw.q, raw.g.len()),
            ));
        }
        let parse_one = |key: &str, s: &str| {
            expr::parse(s, n, m).map_err(|e| fail(key, format!("in `{s}`: {e}")))
        };
        let upper_obj = parse_one("F", &raw.upper_obj)?;
        let upper_cons = raw
            .upper_cons
            .iter()
            .map(|s| parse_one("G", s))
            .collect::<Result<Vec<_>, _>>()?;
        let lower_obj = parse_one("f", &raw.f)?;
        let lower_cons = raw
            .g
            .iter()
            .map(|s| parse_one("g", s))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = ProblemSpec {
            name: raw.name,
            n,
            m,
            p: raw.p,
            q: raw.q,
            upper_obj,
            upper_cons,
            lower_obj,
            lower_cons,
            start_box: raw.start_box,
            known: raw.known,
            source: raw.source,
        };
        spec.validate().map_err(|(key, msg)| fail(key, msg))?;
        Ok(spec)
    }

    /// Checks the structural invariants; returns the offending key on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.name.trim().is_empty() {
            return Err(("name", "empty problem name".into()));
        }
        if self.upper_cons.len() != self.p {
            return Err(("G", format!("dimension mismatch: p = {} but G has {} entries", self.p, self.upper_cons.len())));
        }
        if self.lower_cons.len() != self.q {
            return Err(("g", format!("dimension mismatch: q = {} but g has {} entries", self.q, self.lower_cons.len())));
        }
        if self.m == 0 {
            return Err(("m", "the lower level needs at least one variable".into()));
        }
        let dims = |key: &'static str, e: &Expr| {
            e.check_dims(self.n, self.m).map_err(|err| (key, err.to_string()))
        };
        dims("F", &self.upper_obj)?;
        dims("f", &self.lower_obj)?;
        for e in &self.upper_cons {
            dims("G", e)?;
            if e.uses_group(Group::Y) {
                return Err(("G", format!("upper-level constraint `{e}` may depend on x only")));
            }
        }
        for e in &self.lower_cons {
            dims("g", e)?;
        }
        for (key, boxes, len) in [("x", &self.start_box.x, self.n), ("y", &self.start_box.y, self.m)] {
            if boxes.len() != len {
                return Err((
                    "start_box",
                    format!("dimension mismatch: start_box.{key} has {} intervals, expected {len}", boxes.len()),
                ));
            }
            for [lo, hi] in boxes {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(("start_box", format!("start_box.{key} interval [{lo}, {hi}] must be finite and nonempty")));
                }
            }
        }
        if let Some(k) = &self.known {
            for (key, v) in [("F_pes", k.f_pes), ("F_opt", k.f_opt)] {
                if v.is_some_and(|v| !v.is_finite()) {
                    return Err((key, format!("known.{key} must be finite")));
                }
            }
        }
        Ok(())
    }

    /// Renders the problem in the file format; `from_toml_str` reads it back
    /// to an equal value.
    pub fn to_toml_string(&self) -> String {
        let raw = ProblemFile {
            name: self.name.clone(),
            source: self.source.clone(),
            n: self.n,
            m: self.m,
            p: self.p,
            q: self.q,
            upper_obj: self.upper_obj.to_string(),
            upper_cons: self.upper_cons.iter().map(|e| e.to_string()).collect(),
            f: self.lower_obj.to_string(),
            g: self.lower_cons.iter().map(|e| e.to_string()).collect(),
            start_box: self.start_box.clone(),
            known: self.known.clone(),
        };
        toml::to_string(&raw).expect("problem file serialization cannot fail")
    }

    /// Number of stacked `(x, y)` variables.
    pub fn nvars(&self) -> usize {
        self.n + self.m
    }

    /// `x1..xn, y1..ym` as variable references.
    pub fn all_vars(&self) -> Vec<VarRef> {
        (0..self.n)
            .map(VarRef::x)
            .chain((0..self.m).map(VarRef::y))
            .collect()
    }

    pub fn x_vars(&self) -> Vec<VarRef> {
        (0..self.n).map(VarRef::x).collect()
    }

    /// Derivatives of every function at `(x, y)`. `lower_order` controls how
    /// far `f` and `g` are differentiated; `F` and `G` always get order two.
    pub fn jets(&self, x: &[f64], y: &[f64], lower_order: JetOrder) -> Result<PointJets, ExprError> {
        let all = self.all_vars();
        let xs = self.x_vars();
        Ok(PointJets {
            upper: eval_jet(&self.upper_obj, x, y, JetOrder::Two, &all)?,
            upper_cons: self
                .upper_cons
                .iter()
                .map(|e| eval_jet(e, x, y, JetOrder::Two, &xs))
                .collect::<Result<_, _>>()?,
            lower: eval_jet(&self.lower_obj, x, y, lower_order, &all)?,
            lower_cons: self
                .lower_cons
                .iter()
                .map(|e| eval_jet(e, x, y, lower_order, &all))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Values `g(x, y)`.
    pub fn lower_cons_values(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.lower_cons.iter().map(|e| e.eval(x, y)).collect()
    }

    /// Values `G(x)`.
    pub fn upper_cons_values(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let y = vec![0.0; self.m];
        self.upper_cons.iter().map(|e| e.eval(x, &y)).collect()
    }

    /// Short human-readable summary, one line per function.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} (n={}, m={}, p={}, q={})", self.name, self.n, self.m, self.p, self.q);
        let _ = writeln!(s, "  F = {}", self.upper_obj);
        for e in &self.upper_cons {
            let _ = writeln!(s, "  G: {e} <= 0");
        }
        let _ = writeln!(s, "  f = {}", self.lower_obj);
        for e in &self.lower_cons {
            let _ = writeln!(s, "  g: {e} <= 0");
        }
        s
    }
}

/// Evaluates the lower-level Lagrangian gradient and its partials.
pub fn lagrangian(spec: &ProblemSpec, x: &[f64], y: &[f64], u: &[f64]) -> Result<Lagrangian, ExprError> {
    assert_eq!(u.len(), spec.q, "u must have length q");
    let jets = spec.jets(x, y, JetOrder::Two)?;
    Ok(lagrangian_from_jets(spec, &jets, u))
}

/// Same as [`lagrangian`] but from precomputed jets (order ≥ 2).
pub fn lagrangian_from_jets(spec: &ProblemSpec, jets: &PointJets, u: &[f64]) -> Lagrangian {
    let (n, m, q) = (spec.n, spec.m, spec.q);
    let mut value = vec![0.0; m];
    let mut dx = DMatrix::zeros(m, n);
    let mut dy = DMatrix::zeros(m, m);
    let mut du = DMatrix::zeros(m, q);
    for l in 0..m {
        value[l] = jets.lower.grad(n + l);
        for a in 0..n {
            dx[(l, a)] = jets.lower.hess(n + l, a);
        }
        for b in 0..m {
            dy[(l, b)] = jets.lower.hess(n + l, n + b);
        }
        for (i, gi) in jets.lower_cons.iter().enumerate() {
            value[l] += u[i] * gi.grad(n + l);
            for a in 0..n {
                dx[(l, a)] += u[i] * gi.hess(n + l, a);
            }
            for b in 0..m {
                dy[(l, b)] += u[i] * gi.hess(n + l, n + b);
            }
            du[(l, i)] = gi.grad(n + l);
        }
    }
    Lagrangian { value, dx, dy, du }
}

pub(crate) const EX_TOY: &str = r#"name = "ex_toy"
source = "built-in toy example: F = y over X = [0,1], lower level min x*y over [0,1]"
n = 1
m = 1
p = 2
q = 2
F = "y1"
G = ["-x1", "x1 - 1"]
f = "x1*y1"
g = ["-y1", "y1 - 1"]

[start_box]
x = [[0.0, 1.0]]
y = [[0.0, 1.0]]

[known]
F_pes = 0.0
F_opt = 0.0
"#;

pub(crate) const EX_LINEAR: &str = r#"name = "ex_linear"
source = "built-in linear example: F = x + y over X = [0,1], lower level min -x*y over y <= 1; start box for y truncated to [-10, 1]"
n = 1
m = 1
p = 2
q = 1
F = "x1 + y1"
G = ["-x1", "x1 - 1"]
f = "-x1*y1"
g = ["y1 - 1"]

[start_box]
x = [[0.0, 1.0]]
y = [[-10.0, 1.0]]

[known]
F_pes = 1.0
"#;

/// The built-in toy example (`X = Y = [0,1]`, `F = y`, `f = xy`).
pub fn ex_toy() -> ProblemSpec {
    ProblemSpec::from_toml_str(EX_TOY, "<builtin ex_toy>").expect("built-in problem is valid")
}

/// The built-in linear example (`F = x + y`, `f = -xy`, `y <= 1`).
pub fn ex_linear() -> ProblemSpec {
    ProblemSpec::from_toml_str(EX_LINEAR, "<builtin ex_linear>").expect("built-in problem is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_dimensions() {
        let s = ex_toy();
        assert_eq!((s.n, s.m, s.p, s.q), (1, 1, 2, 2));
        assert_eq!(s.upper_obj, expr::parse("y1", 1, 1).unwrap());
        assert_eq!(s.lower_obj, expr::parse("x1*y1", 1, 1).unwrap());
    }

    #[test]
    fn linear_dimensions() {
        let s = ex_linear();
        assert_eq!((s.n, s.m, s.p, s.q), (1, 1, 2, 1));
        assert_eq!(s.lower_cons[0], expr::parse("y1-1", 1, 1).unwrap());
    }

    #[test]
    fn too_many_g_entries() {
        let text = EX_TOY.replace(r#"g = ["-y1", "y1 - 1"]"#, r#"g = ["-y1", "y1 - 1", "y1"]"#);
        match ProblemSpec::from_toml_str(&text, "bad.toml") {
            Err(ProblemError::Format { line, message, file }) => {
                assert_eq!(file, "bad.toml");
                assert_eq!(line, 10);
                assert!(message.contains("dimension mismatch"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_key_and_bad_expression() {
        let text = EX_TOY.replace("f = \"x1*y1\"\n", "");
        let err = ProblemSpec::from_toml_str(&text, "m.toml").unwrap_err();
        assert!(err.to_string().contains("missing field `f`"), "{err}");

        let text = EX_TOY.replace("F = \"y1\"", "F = \"y2\"");
        let err = ProblemSpec::from_toml_str(&text, "r.toml").unwrap_err();
        assert!(err.to_string().starts_with("r.toml:7:"), "{err}");
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn upper_constraints_must_not_use_y() {
        let text = EX_TOY.replace(r#"G = ["-x1", "x1 - 1"]"#, r#"G = ["-x1", "x1 - y1"]"#);
        let err = ProblemSpec::from_toml_str(&text, "g.toml").unwrap_err();
        assert!(err.to_string().contains("x only"), "{err}");
    }

    #[test]
    fn bad_start_box() {
        let text = EX_TOY.replace("y = [[0.0, 1.0]]", "y = [[1.0, 0.0]]");
        assert!(ProblemSpec::from_toml_str(&text, "b.toml").is_err());
        let text = EX_TOY.replace("y = [[0.0, 1.0]]", "y = []");
        assert!(ProblemSpec::from_toml_str(&text, "b.toml").is_err());
    }

    #[test]
    fn print_load_roundtrip() {
        for s in [ex_toy(), ex_linear()] {
            let text = s.to_toml_string();
            let back = ProblemSpec::from_toml_str(&text, "rt").unwrap();
            assert_eq!(back, s, "{text}");
        }
    }

    #[test]
    fn toy_lagrangian_is_x_minus_u1_plus_u2() {
        let s = ex_toy();
        for (x, y, u1, u2) in [(0.3, 0.5, 0.2, 0.9), (1.0, 0.0, 0.0, 0.0)] {
            let l = lagrangian(&s, &[x], &[y], &[u1, u2]).unwrap();
            assert!((l.value[0] - (x - u1 + u2)).abs() < 1e-15);
            assert_eq!(l.dx[(0, 0)], 1.0);
            assert_eq!(l.dy[(0, 0)], 0.0);
            assert_eq!(l.du[(0, 0)], -1.0);
            assert_eq!(l.du[(0, 1)], 1.0);
        }
    }

    #[test]
    fn linear_lagrangian_forces_u_equal_x() {
        let s = ex_linear();
        let l = lagrangian(&s, &[0.4], &[1.0], &[0.4]).unwrap();
        assert_eq!(l.value[0], 0.0);
        let l = lagrangian(&s, &[0.4], &[1.0], &[0.0]).unwrap();
        assert_eq!(l.value[0], -0.4);
    }

    #[test]
    fn zero_multipliers_give_gradient_of_f() {
        let s = ex_linear();
        let l = lagrangian(&s, &[0.7], &[0.2], &[0.0]).unwrap();
        assert_eq!(l.value[0], -0.7);
    }
}
