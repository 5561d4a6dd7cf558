//! Expression trees for problem functions.
//!
//! Problem files describe `F`, `G`, `f` and `g` as infix strings over the
//! variables `x1..xn` and `y1..ym`. This module parses them into an [`Expr`]
//! and evaluates values and derivatives up to third order with nested
//! forward-mode dual numbers (see [`jet`]).
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom { "^" integer } ;
//! atom    = number | variable | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" | "log" | "sqrt" ;
//! variable= ("x" | "y") integer ;          (* 1-based index *)
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`. Exponents are
//! nonnegative integer literals.

mod dual;
mod jet;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dual::{Dual, Real};
pub use jet::{check_derivatives, eval_jet, Jet3, JetOrder};
pub use parse::parse;

/// Which argument block a variable belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    X,
    Y,
}

/// A variable reference with a 0-based index inside its group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarRef {
    pub group: Group,
    pub index: usize,
}

impl VarRef {
    pub fn x(index: usize) -> Self {
        VarRef { group: Group::X, index }
    }

    pub fn y(index: usize) -> Self {
        VarRef { group: Group::Y, index }
    }

    /// Position in the stacked `(x, y)` vector.
    pub fn slot(&self, n: usize) -> usize {
        match self.group {
            Group::X => self.index,
            Group::Y => n + self.index,
        }
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.group {
            Group::X => write!(f, "x{}", self.index + 1),
            Group::Y => write!(f, "y{}", self.index + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    fn name(&self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(&self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Abstract syntax tree of a scalar expression in `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(VarRef),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown identifier `{name}` at column {column}")]
    UnknownIdentifier { name: String, column: usize },
    #[error("variable `{name}` at column {column} is out of range (declared {declared})")]
    IndexOutOfRange {
        name: String,
        column: usize,
        declared: usize,
    },
    #[error("domain error in `{op}`: non-finite or invalid intermediate value")]
    Domain { op: &'static str },
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(v: VarRef) -> Self {
        Expr::Var(v)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn pow(base: Expr, exp: u32) -> Self {
        Expr::Pow(Box::new(base), exp)
    }

    /// Visits every variable reference in the tree.
    pub fn for_each_var(&self, visit: &mut impl FnMut(VarRef)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => visit(*v),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.for_each_var(visit),
            Expr::Binary(_, a, b) => {
                a.for_each_var(visit);
                b.for_each_var(visit);
            }
        }
    }

    pub fn uses_group(&self, group: Group) -> bool {
        let mut found = false;
        self.for_each_var(&mut |v| found |= v.group == group);
        found
    }

    /// Checks every variable index against the dimensions `(n, m)`.
    pub fn check_dims(&self, n: usize, m: usize) -> Result<(), ExprError> {
        let mut err = None;
        self.for_each_var(&mut |v| {
            let declared = match v.group {
                Group::X => n,
                Group::Y => m,
            };
            if v.index >= declared && err.is_none() {
                err = Some(ExprError::IndexOutOfRange {
                    name: v.to_string(),
                    column: 0,
                    declared,
                });
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Generic evaluation; `vars` holds the stacked `(x, y)` values.
    pub fn eval_with<T: Real>(&self, n: usize, vars: &[T]) -> Result<T, ExprError> {
        let out = match self {
            Expr::Const(c) => return Ok(T::constant(*c)),
            Expr::Var(v) => return Ok(vars[v.slot(n)].clone()),
            Expr::Unary(op, a) => {
                let a = a.eval_with(n, vars)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => {
                        if a.re() <= 0.0 {
                            return Err(ExprError::Domain { op: "log" });
                        }
                        a.ln()
                    }
                    UnaryOp::Sqrt => {
                        if a.re() < 0.0 {
                            return Err(ExprError::Domain { op: "sqrt" });
                        }
                        a.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval_with(n, vars)?;
                let b = b.eval_with(n, vars)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b.re() == 0.0 {
                            return Err(ExprError::Domain { op: "/" });
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(a, k) => a.eval_with(n, vars)?.powi(*k),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(ExprError::Domain { op: self.op_name() })
        }
    }

    /// Plain value at `(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, ExprError> {
        let mut vars = Vec::with_capacity(x.len() + y.len());
        vars.extend_from_slice(x);
        vars.extend_from_slice(y);
        self.eval_with(x.len(), &vars)
    }

    fn op_name(&self) -> &'static str {
        match self {
            Expr::Const(_) => "const",
            Expr::Var(_) => "var",
            Expr::Unary(op, _) => op.name(),
            Expr::Binary(op, _, _) => match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            },
            Expr::Pow(_, _) => "^",
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // the parser only produces nonnegative literals; negative ones
            // come back as a negation node
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, k) => write!(f, "{a}^{k}"),
        }
    }
}
