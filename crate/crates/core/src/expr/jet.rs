//! Value plus mixed partials up to third order.

use serde::{Deserialize, Serialize};

use super::{Dual, Expr, ExprError, Real, VarRef};

type D1 = Dual<f64>;
type D2 = Dual<D1>;
type D3 = Dual<D2>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JetOrder {
    One = 1,
    Two = 2,
    Three = 3,
}

/// Derivatives of one expression with respect to `wrt`, stored densely.
///
/// Partials beyond the requested order are left at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet3 {
    pub value: f64,
    pub wrt: Vec<VarRef>,
    pub order: JetOrder,
    grad: Vec<f64>,
    hess: Vec<f64>,
    third: Vec<f64>,
}

impl Jet3 {
    pub fn len(&self) -> usize {
        self.wrt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrt.is_empty()
    }

    pub fn grad(&self, a: usize) -> f64 {
        self.grad[a]
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn hess(&self, a: usize, b: usize) -> f64 {
        let k = self.len();
        self.hess[a * k + b]
    }

    pub fn third(&self, a: usize, b: usize, c: usize) -> f64 {
        let k = self.len();
        self.third[(a * k + b) * k + c]
    }

    fn set_hess(&mut self, a: usize, b: usize, v: f64) {
        let k = self.len();
        self.hess[a * k + b] = v;
        self.hess[b * k + a] = v;
    }

    fn set_third(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let k = self.len();
        for (i, j, l) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
            self.third[(i * k + j) * k + l] = v;
        }
    }
}

fn flag(slot: usize, dir: usize) -> f64 {
    if slot == dir {
        1.0
    } else {
        0.0
    }
}

fn seed1(v: f64, slot: usize, c: usize) -> D1 {
    Dual::new(v, flag(slot, c))
}

fn seed2(v: f64, slot: usize, b: usize, c: usize) -> D2 {
    Dual::new(seed1(v, slot, c), Dual::new(flag(slot, b), 0.0))
}

fn seed3(v: f64, slot: usize, a: usize, b: usize, c: usize) -> D3 {
    Dual::new(
        seed2(v, slot, b, c),
        Dual::new(Dual::new(flag(slot, a), 0.0), D1::constant(0.0)),
    )
}

fn stacked(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + y.len());
    v.extend_from_slice(x);
    v.extend_from_slice(y);
    v
}

/// Third mixed partial along the stacked slots `(a, b, c)`, evaluated
/// directly for that ordering (no symmetry fill).
pub(crate) fn directional3(
    expr: &Expr,
    n: usize,
    vals: &[f64],
    a: usize,
    b: usize,
    c: usize,
) -> Result<D3, ExprError> {
    let vars: Vec<D3> = vals
        .iter()
        .enumerate()
        .map(|(s, &v)| seed3(v, s, a, b, c))
        .collect();
    expr.eval_with(n, &vars)
}

/// Evaluates `expr` and its partials with respect to `wrt` at `(x, y)`.
pub fn eval_jet(
    expr: &Expr,
    x: &[f64],
    y: &[f64],
    order: JetOrder,
    wrt: &[VarRef],
) -> Result<Jet3, ExprError> {
    let n = x.len();
    let vals = stacked(x, y);
    let k = wrt.len();
    let slots: Vec<usize> = wrt.iter().map(|v| v.slot(n)).collect();
    let mut jet = Jet3 {
        value: expr.eval_with(n, &vals)?,
        wrt: wrt.to_vec(),
        order,
        grad: vec![0.0; k],
        hess: vec![0.0; k * k],
        third: vec![0.0; k * k * k],
    };
    match order {
        JetOrder::One => {
            for (a, &sa) in slots.iter().enumerate() {
                let vars: Vec<D1> = vals
                    .iter()
                    .enumerate()
                    .map(|(s, &v)| seed1(v, s, sa))
                    .collect();
                jet.grad[a] = expr.eval_with(n, &vars)?.eps;
            }
        }
        JetOrder::Two => {
            for a in 0..k {
                for b in a..k {
                    let vars: Vec<D2> = vals
                        .iter()
                        .enumerate()
                        .map(|(s, &v)| seed2(v, s, slots[a], slots[b]))
                        .collect();
                    let r = expr.eval_with(n, &vars)?;
                    if a == b {
                        jet.grad[a] = r.re.eps;
                    }
                    jet.set_hess(a, b, r.eps.eps);
                }
            }
        }
        JetOrder::Three => {
            for a in 0..k {
                for b in a..k {
                    for c in b..k {
                        let r = directional3(expr, n, &vals, slots[a], slots[b], slots[c])?;
                        if a == b && b == c {
                            jet.grad[a] = r.re.re.eps;
                        }
                        if b == c {
                            jet.set_hess(a, b, r.eps.re.eps);
                        }
                        jet.set_third(a, b, c, r.eps.eps.eps);
                    }
                }
            }
        }
    }
    Ok(jet)
}

/// Largest relative gap between AD and central differences over first and
/// second partials with respect to every variable.
///
/// First partials are compared with differences of values, second partials
/// with differences of the AD gradient. A domain error anywhere yields
/// `f64::INFINITY`.
pub fn check_derivatives(expr: &Expr, x: &[f64], y: &[f64], h: f64) -> f64 {
    let n = x.len();
    let wrt: Vec<VarRef> = (0..x.len())
        .map(VarRef::x)
        .chain((0..y.len()).map(VarRef::y))
        .collect();
    let base = stacked(x, y);
    let split = |v: &[f64]| (v[..n].to_vec(), v[n..].to_vec());
    let run = || -> Result<f64, ExprError> {
        let jet = eval_jet(expr, x, y, JetOrder::Two, &wrt)?;
        let mut worst: f64 = 0.0;
        let rel = |ad: f64, fd: f64| (ad - fd).abs() / ad.abs().max(1.0);
        for a in 0..wrt.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[a] += h;
            minus[a] -= h;
            let (xp, yp) = split(&plus);
            let (xm, ym) = split(&minus);
            let fd = (expr.eval(&xp, &yp)? - expr.eval(&xm, &ym)?) / (2.0 * h);
            worst = worst.max(rel(jet.grad(a), fd));
            let gp = eval_jet(expr, &xp, &yp, JetOrder::One, &wrt)?;
            let gm = eval_jet(expr, &xm, &ym, JetOrder::One, &wrt)?;
            for b in 0..wrt.len() {
                let fd2 = (gp.grad(b) - gm.grad(b)) / (2.0 * h);
                worst = worst.max(rel(jet.hess(a, b), fd2));
            }
        }
        Ok(worst)
    };
    run().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use proptest::prelude::*;

    fn all_vars(n: usize, m: usize) -> Vec<VarRef> {
        (0..n).map(VarRef::x).chain((0..m).map(VarRef::y)).collect()
    }

    #[test]
    fn product_jet() {
        let e = parse("x1*y1", 1, 1).unwrap();
        let j = eval_jet(&e, &[2.0], &[3.0], JetOrder::Two, &all_vars(1, 1)).unwrap();
        assert_eq!(j.value, 6.0);
        assert_eq!(j.grad(0), 3.0);
        assert_eq!(j.grad(1), 2.0);
        assert_eq!(j.hess(0, 1), 1.0);
        assert_eq!(j.hess(0, 0), 0.0);
    }

    #[test]
    fn cube_third_derivative() {
        let e = parse("y1^3", 0, 1).unwrap();
        let j = eval_jet(&e, &[], &[2.0], JetOrder::Three, &[VarRef::y(0)]).unwrap();
        assert_eq!(j.third(0, 0, 0), 6.0);
        assert_eq!(j.hess(0, 0), 12.0);
        assert_eq!(j.grad(0), 12.0);
    }

    #[test]
    fn lower_objective_of_linear_example() {
        let e = parse("-x1*y1", 1, 1).unwrap();
        for x in [-2.0, 0.0, 0.7] {
            let j = eval_jet(&e, &[x], &[0.3], JetOrder::One, &[VarRef::y(0)]).unwrap();
            assert_eq!(j.grad(0), -x);
        }
    }

    #[test]
    fn orders_agree_on_shared_partials() {
        let e = parse("sin(x1*y1) + exp(y2)*x1^2 - log(1 + y1^2)", 1, 2).unwrap();
        let w = all_vars(1, 2);
        let (x, y) = ([0.4], [1.1, -0.3]);
        let j1 = eval_jet(&e, &x, &y, JetOrder::One, &w).unwrap();
        let j2 = eval_jet(&e, &x, &y, JetOrder::Two, &w).unwrap();
        let j3 = eval_jet(&e, &x, &y, JetOrder::Three, &w).unwrap();
        for a in 0..3 {
            assert!((j1.grad(a) - j2.grad(a)).abs() < 1e-14);
            assert!((j1.grad(a) - j3.grad(a)).abs() < 1e-14);
            for b in 0..3 {
                assert!((j2.hess(a, b) - j3.hess(a, b)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn wrt_subset_only() {
        let e = parse("x1*y1 + y2^2", 1, 2).unwrap();
        let j = eval_jet(&e, &[2.0], &[3.0, 4.0], JetOrder::Two, &[VarRef::y(1)]).unwrap();
        assert_eq!(j.len(), 1);
        assert_eq!(j.grad(0), 8.0);
        assert_eq!(j.hess(0, 0), 2.0);
    }

    #[test]
    fn third_partials_match_fd_of_hessian() {
        let e = parse("x1^2*y1^3 + sin(x1)*cos(y1)", 1, 1).unwrap();
        let w = all_vars(1, 1);
        let (x, y) = (0.7, -0.4);
        let j = eval_jet(&e, &[x], &[y], JetOrder::Three, &w).unwrap();
        let h = 1e-5;
        for c in 0..2 {
            let (mut xp, mut yp, mut xm, mut ym) = (x, y, x, y);
            if c == 0 {
                xp += h;
                xm -= h;
            } else {
                yp += h;
                ym -= h;
            }
            let hp = eval_jet(&e, &[xp], &[yp], JetOrder::Two, &w).unwrap();
            let hm = eval_jet(&e, &[xm], &[ym], JetOrder::Two, &w).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    let fd = (hp.hess(a, b) - hm.hess(a, b)) / (2.0 * h);
                    assert!((fd - j.third(a, b, c)).abs() < 1e-6, "{a}{b}{c}");
                }
            }
        }
    }

    #[test]
    fn polynomial_partials_are_exact() {
        // 2 x1^3 y1 - 5 y1^2 + x1
        let e = parse("2*x1^3*y1 - 5*y1^2 + x1", 1, 1).unwrap();
        let j = eval_jet(&e, &[1.5], &[-2.0], JetOrder::Three, &all_vars(1, 1)).unwrap();
        assert_eq!(j.grad(0), 6.0 * 2.25 * -2.0 + 1.0);
        assert_eq!(j.grad(1), 2.0 * 3.375 + 20.0);
        assert_eq!(j.hess(0, 0), 12.0 * 1.5 * -2.0);
        assert_eq!(j.hess(0, 1), 6.0 * 2.25);
        assert_eq!(j.hess(1, 1), -10.0);
        assert_eq!(j.third(0, 0, 0), -24.0);
        assert_eq!(j.third(0, 0, 1), 18.0);
        assert_eq!(j.third(1, 0, 0), 18.0);
        assert_eq!(j.third(0, 1, 1), 0.0);
    }

    #[test]
    fn check_derivatives_examples() {
        let e = parse("x1*y1", 1, 1).unwrap();
        assert!(check_derivatives(&e, &[2.0], &[3.0], 1e-5) < 1e-8);
        let e = parse("exp(x1)", 1, 0).unwrap();
        assert!(check_derivatives(&e, &[1.0], &[], 1e-5) < 1e-8);
        let e = parse("y1^4", 0, 1).unwrap();
        assert!(check_derivatives(&e, &[], &[1.5], 1e-4) < 1e-6);
    }

    #[test]
    fn domain_error_propagates_from_jet() {
        let e = parse("sqrt(x1)", 1, 0).unwrap();
        assert!(eval_jet(&e, &[0.0], &[], JetOrder::One, &[VarRef::x(0)]).is_err());
        assert_eq!(check_derivatives(&e, &[-1.0], &[], 1e-5), f64::INFINITY);
    }

    #[test]
    fn direct_orderings_agree() {
        let e = parse("x1^2*y1*sin(y2) + exp(x1*y2)", 1, 2).unwrap();
        let vals = [0.3, -1.2, 0.8];
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (1, 0, 2), (2, 1, 0)] {
            let r = directional3(&e, 1, &vals, a, b, c).unwrap();
            let s = directional3(&e, 1, &vals, 0, 1, 2).unwrap();
            let (u, v) = (r.eps.eps.eps, s.eps.eps.eps);
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }

    fn smooth_expr(depth: u32) -> impl Strategy<Value = String> {
        // no log/sqrt/div so every point is interior to the domain
        let leaf = prop_oneof![
            (1u32..4).prop_map(|k| format!("{k}")),
            Just("x1".to_string()),
            Just("y1".to_string()),
            Just("y2".to_string()),
        ];
        leaf.prop_recursive(depth, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*"]))
                    .prop_map(|(a, b, op)| format!("({a}) {op} ({b})")),
                (inner.clone(), 1u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
                (inner, prop::sample::select(vec!["sin", "cos"]))
                    .prop_map(|(a, f)| format!("{f}({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn ad_matches_finite_differences(
            s in smooth_expr(3),
            x in -1.0f64..1.0,
            y1 in -1.0f64..1.0,
            y2 in -1.0f64..1.0,
        ) {
            let e = parse(&s, 1, 2).unwrap();
            let v = e.eval(&[x], &[y1, y2]).unwrap();
            prop_assume!(v.abs() <= 1e3);
            let err = check_derivatives(&e, &[x], &[y1, y2], 1e-5);
            prop_assert!(err < 1e-6, "{s} err {err}");
        }

        #[test]
        fn directional_third_partials_are_symmetric(
            s in smooth_expr(3),
            x in -1.0f64..1.0,
            y1 in -1.0f64..1.0,
            y2 in -1.0f64..1.0,
        ) {
            let e = parse(&s, 1, 2).unwrap();
            let vals = [x, y1, y2];
            let base = directional3(&e, 1, &vals, 0, 1, 2).unwrap();
            for (a, b, c) in [(2, 1, 0), (1, 0, 2), (0, 2, 1)] {
                let r = directional3(&e, 1, &vals, a, b, c).unwrap();
                let (u, w) = (r.eps.eps.eps, base.eps.eps.eps);
                prop_assert!((u - w).abs() <= 1e-12 * u.abs().max(w.abs()).max(1.0));
            }
            // ∂²/∂x1∂y2 read from two different seedings
            let r = directional3(&e, 1, &vals, 2, 0, 1).unwrap();
            let (p, q) = (r.eps.eps.re, base.eps.re.eps);
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(q.abs()).max(1.0));
        }
    }
}
