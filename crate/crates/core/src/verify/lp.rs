//! Dense tableau simplex for `max cᵀx, Ax ≤ b, x ≥ 0` with `b ≥ 0`.
//!
//! The slack basis is feasible, so no first phase is needed. Bland's rule
//! picks both the entering and the leaving variable, which rules out cycling
//! on the heavily degenerate problems built by the regularity check.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("right-hand side must be nonnegative (row {0})")]
    NegativeRhs(usize),
    #[error("constraint matrix has inconsistent shape")]
    Shape,
    #[error("objective is unbounded")]
    Unbounded,
    #[error("simplex did not terminate after {0} pivots")]
    IterationLimit(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-12;

/// `a` is row-major, one `Vec` per constraint.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpError> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(LpError::Shape);
    }
    if let Some(k) = b.iter().position(|&v| !(v >= 0.0)) {
        return Err(LpError::NegativeRhs(k));
    }
    let width = n + m + 1;
    // rows 0..m constraints, row m the reduced costs (stored as -c)
    let mut tab = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        tab[i][..n].copy_from_slice(&a[i]);
        tab[i][n + i] = 1.0;
        tab[i][width - 1] = b[i];
    }
    for j in 0..n {
        tab[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let limit = 50 * (n + m + 1).pow(2);
    let mut pivots = 0;
    while let Some(enter) = (0..n + m).find(|&j| tab[m][j] < -PIVOT_TOL) {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = tab[i][enter];
            if aij > PIVOT_TOL {
                let ratio = tab[i][width - 1] / aij;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - PIVOT_TOL || (ratio <= r + PIVOT_TOL && basis[i] < basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return Err(LpError::Unbounded);
        };
        let p = tab[row][enter];
        for v in tab[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = tab[row].clone();
        for (i, r) in tab.iter_mut().enumerate() {
            if i != row {
                let f = r[enter];
                if f != 0.0 {
                    for (v, pv) in r.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        basis[row] = enter;
        pivots += 1;
        if pivots > limit {
            return Err(LpError::IterationLimit(pivots));
        }
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab[i][width - 1];
        }
    }
    Ok(LpSolution {
        value: tab[m][width - 1],
        x,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let s = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        )
        .unwrap();
        assert!((s.value - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_and_bad_rhs() {
        assert_eq!(maximize(&[1.0], &[vec![-1.0]], &[1.0]), Err(LpError::Unbounded));
        assert_eq!(maximize(&[1.0], &[vec![1.0]], &[-1.0]), Err(LpError::NegativeRhs(0)));
        assert_eq!(maximize(&[1.0, 2.0], &[vec![1.0]], &[1.0]), Err(LpError::Shape));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule
        let c = [0.75, -20.0, 0.5, -6.0];
        let a = vec![
            vec![0.25, -8.0, -1.0, 9.0],
            vec![0.5, -12.0, -0.5, 3.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        let s = maximize(&c, &a, &[0.0, 0.0, 1.0]).unwrap();
        assert!((s.value - 1.25).abs() < 1e-10, "{s:?}");
    }
}
