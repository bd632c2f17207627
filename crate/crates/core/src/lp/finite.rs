//! General finite LPs (row senses, variable bounds) reduced to standard form.

use crate::error::{Error, Result};
use crate::lp::simplex::{Simplex, SimplexStatus, SparseColumn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpRow {
    pub coefs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// `sense c.x` subject to `rows` and `lower <= x <= upper` (infinite bounds allowed).
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteLp {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    /// Sensitivity of the optimal value to each row's right-hand side.
    pub row_duals: Vec<f64>,
}

impl FiniteLp {
    /// `n` variables with bounds `[0, inf)` and no rows.
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        FiniteLp { sense, objective, rows: Vec::new(), lower: vec![0.0; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> &mut Self {
        self.rows.push(LpRow { coefs, kind, rhs });
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::contract("bounds must match the number of variables"));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(Error::contract(format!("bad bounds on variable {j}")));
            }
        }
        for row in &self.rows {
            if row.coefs.iter().any(|&(j, v)| j >= n || !v.is_finite()) || !row.rhs.is_finite() {
                return Err(Error::contract("malformed row"));
            }
        }
        Ok(())
    }

    /// Row activity `a_i . x`.
    pub fn activity(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].coefs.iter().map(|&(j, v)| v * x[j]).sum()
    }
}

#[derive(Clone, Copy)]
enum VarMap {
    /// `x = l + x'`
    Shift(f64, usize),
    /// `x = u - x'`
    Mirror(f64, usize),
    /// `x = x+ - x-`
    Split(usize, usize),
}

pub fn solve_finite_lp(lp: &FiniteLp) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    // standard-form rows: user rows first, then upper-bound rows of boxed variables
    let boxed: Vec<usize> = (0..n).filter(|&j| lp.lower[j].is_finite() && lp.upper[j].is_finite()).collect();
    let m = lp.rows.len() + boxed.len();
    let mut rhs: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
    rhs.extend(boxed.iter().map(|&j| lp.upper[j] - lp.lower[j]));

    // per-variable column entries, gathered row by row
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, v) in &row.coefs {
            entries[j].push((i, v));
        }
    }
    for (k, &j) in boxed.iter().enumerate() {
        entries[j].push((lp.rows.len() + k, 1.0));
    }

    let mut cols: Vec<(SparseColumn, f64)> = Vec::new();
    let mut maps = Vec::with_capacity(n);
    for j in 0..n {
        let c = sign * lp.objective[j];
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l.is_finite() {
            // shift the user rows; the bound row's own entry stays as is
            for &(i, v) in &entries[j] {
                if i < lp.rows.len() {
                    rhs[i] -= v * l;
                }
            }
            maps.push(VarMap::Shift(l, cols.len()));
            cols.push((SparseColumn::new(entries[j].iter().copied()), c));
        } else if u.is_finite() {
            for &(i, v) in &entries[j] {
                rhs[i] -= v * u;
            }
            maps.push(VarMap::Mirror(u, cols.len()));
            cols.push((SparseColumn::new(entries[j].iter().map(|&(i, v)| (i, -v))), -c));
        } else {
            maps.push(VarMap::Split(cols.len(), cols.len() + 1));
            cols.push((SparseColumn::new(entries[j].iter().copied()), c));
            cols.push((SparseColumn::new(entries[j].iter().map(|&(i, v)| (i, -v))), -c));
        }
    }
    for (i, row) in lp.rows.iter().enumerate() {
        match row.kind {
            RowKind::Le => cols.push((SparseColumn::new([(i, 1.0)]), 0.0)),
            RowKind::Ge => cols.push((SparseColumn::new([(i, -1.0)]), 0.0)),
            RowKind::Eq => {}
        }
    }
    for k in 0..boxed.len() {
        cols.push((SparseColumn::new([(lp.rows.len() + k, 1.0)]), 0.0));
    }

    let mut sx = Simplex::new(rhs);
    for (col, c) in cols {
        sx.add_column(col, c);
    }
    debug_assert_eq!(sx.rows(), m);
    let status = match sx.solve()? {
        SimplexStatus::Optimal => LpStatus::Optimal,
        SimplexStatus::Infeasible => LpStatus::Infeasible,
        SimplexStatus::Unbounded => LpStatus::Unbounded,
    };
    if status != LpStatus::Optimal {
        let value = match (status, lp.sense) {
            (LpStatus::Unbounded, Sense::Maximize) => f64::INFINITY,
            (LpStatus::Unbounded, Sense::Minimize) => f64::NEG_INFINITY,
            _ => f64::NAN,
        };
        return Ok(LpSolution { status, x: Vec::new(), value, row_duals: Vec::new() });
    }
    let xs = sx.primal();
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift(l, k) => l + xs[k],
            VarMap::Mirror(u, k) => u - xs[k],
            VarMap::Split(p, q) => xs[p] - xs[q],
        })
        .collect();
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let pi = sx.duals();
    let row_duals = pi[..lp.rows.len()].iter().map(|p| sign * p).collect();
    Ok(LpSolution { status, x, value, row_duals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_variable() {
        let mut lp = FiniteLp::new(Sense::Maximize, vec![1.0]);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, 1.0);
        let s = solve_finite_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_variables() {
        let mut lp = FiniteLp::new(Sense::Maximize, vec![1.0, 1.0]);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, 1.0).add_row(vec![(1, 1.0)], RowKind::Le, 2.0);
        let s = solve_finite_lp(&lp).unwrap();
        assert!((s.value - 3.0).abs() < 1e-12);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
        assert!((s.row_duals[0] - 1.0).abs() < 1e-12 && (s.row_duals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_and_boxed_variables() {
        // min x + 2y, x free, y in [-1, 3], x + y >= 1, x - y = 0.5
        let mut lp = FiniteLp::new(Sense::Minimize, vec![1.0, 2.0]);
        lp.lower = vec![f64::NEG_INFINITY, -1.0];
        lp.upper = vec![f64::INFINITY, 3.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Ge, 1.0).add_row(vec![(0, 1.0), (1, -1.0)], RowKind::Eq, 0.5);
        let s = solve_finite_lp(&lp).unwrap();
        assert!((s.x[0] - 0.75).abs() < 1e-12 && (s.x[1] - 0.25).abs() < 1e-12, "{:?}", s.x);
        assert!((s.value - 1.25).abs() < 1e-12);
    }

    #[test]
    fn upper_bounded_only() {
        // max x with x <= 2 bound and no lower bound
        let mut lp = FiniteLp::new(Sense::Maximize, vec![1.0]);
        lp.lower = vec![f64::NEG_INFINITY];
        lp.upper = vec![2.0];
        lp.add_row(vec![(0, 1.0)], RowKind::Ge, -5.0);
        let s = solve_finite_lp(&lp).unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn status_flags() {
        let mut lp = FiniteLp::new(Sense::Maximize, vec![1.0]);
        lp.add_row(vec![(0, 1.0)], RowKind::Ge, 1.0);
        assert_eq!(solve_finite_lp(&lp).unwrap().status, LpStatus::Unbounded);
        let mut lp = FiniteLp::new(Sense::Maximize, vec![1.0]);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, -1.0);
        assert_eq!(solve_finite_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    /// Brute force: every vertex is the solution of n active constraints
    /// chosen among the rows and the bounds `0 <= x_j <= 5`.
    fn vertex_oracle(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
        let n = c.len();
        let mut cons: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            cons.push((e.clone(), 0.0));
            e[j] = 1.0;
            cons.push((e, 5.0));
        }
        let mut best = f64::NEG_INFINITY;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            if let Some(x) = solve_square(&idx.iter().map(|&i| cons[i].clone()).collect::<Vec<_>>()) {
                if cons.iter().all(|(row, rhs)| row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9) {
                    best = best.max(c.iter().zip(&x).map(|(p, q)| p * q).sum());
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < cons.len() - n + i {
                    idx[i] += 1;
                    for k in i + 1..n {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn solve_square(rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
        let n = rows.len();
        let mut a: Vec<Vec<f64>> = rows.iter().map(|(r, b)| r.iter().copied().chain([*b]).collect()).collect();
        for col in 0..n {
            let p = (col..n).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())?;
            if a[p][col].abs() < 1e-10 {
                return None;
            }
            a.swap(p, col);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    for k in col..=n {
                        a[i][k] -= f * a[col][k];
                    }
                }
            }
        }
        Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        for seed in 0..100u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let n = rng.gen_range(1..=5);
            let rows = rng.gen_range(1..=8);
            let a: Vec<Vec<f64>> = (0..rows).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.1..2.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lp = FiniteLp::new(Sense::Maximize, c.clone());
            lp.upper = vec![5.0; n];
            for (row, &rhs) in a.iter().zip(&b) {
                lp.add_row(row.iter().copied().enumerate().collect(), RowKind::Le, rhs);
            }
            let s = solve_finite_lp(&lp).unwrap();
            assert_eq!(s.status, LpStatus::Optimal);
            let oracle = vertex_oracle(&a, &b, &c);
            assert!((s.value - oracle).abs() <= 1e-7, "seed {seed}: {} vs {}", s.value, oracle);
            // feasibility and complementary slackness
            for i in 0..rows {
                let slack = b[i] - lp.activity(i, &s.x);
                assert!(slack >= -1e-9);
                assert!(s.row_duals[i] >= -1e-9);
                assert!((s.row_duals[i] * slack).abs() <= 1e-8);
            }
        }
    }
}
