//! Revised simplex on `min c.x  s.t.  A x = b, x >= 0` with sparse columns
//! and an explicit dense basis inverse stored by columns.
//!
//! Columns can be appended after a solve; the previous optimal basis stays
//! primal feasible, so the next solve continues from it in phase 2.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseColumn {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseColumn {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let (idx, val) = entries.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        SparseColumn { idx, val }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
/// Pivot candidates must exceed this fraction of `max |w|`.
const PIVOT_TOL_REL: f64 = 1e-7;
/// Basic values below `-PRIMAL_TOL` are repaired by dual simplex steps.
const PRIMAL_TOL: f64 = 1e-11;
/// Refactorizations spent re-checking a candidate optimum per solve.
const MAX_CONFIRMATIONS: usize = 3;
const HARRIS_DELTA: f64 = 1e-10;
const REFACTOR_EVERY: usize = 400;
/// Updates tolerated at the start of a re-solve before refactorizing.
const RESOLVE_REFACTOR: usize = 100;
const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct Simplex {
    m: usize,
    b: Vec<f64>,
    /// `-1` for rows negated to make `b >= 0`.
    row_sign: Vec<f64>,
    cols: Vec<SparseColumn>,
    cost: Vec<f64>,
    artificial: Vec<bool>,
    basis: Vec<usize>,
    position: Vec<usize>,
    /// `B^-1` column-major: entry `(i, k)` at `k * m + i`.
    binv: Vec<f64>,
    xb: Vec<f64>,
    initialized: bool,
    updates: usize,
    opt_tol: f64,
    /// Total pivots across all solves.
    pub iterations: usize,
    /// Pivot budget per solve.
    pub max_iterations: usize,
}

impl Simplex {
    pub fn new(b: Vec<f64>) -> Self {
        let m = b.len();
        let row_sign: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let b = b.iter().zip(&row_sign).map(|(v, s)| v * s).collect();
        Simplex {
            m,
            b,
            row_sign,
            cols: Vec::new(),
            cost: Vec::new(),
            artificial: Vec::new(),
            basis: vec![NONE; m],
            position: Vec::new(),
            binv: Vec::new(),
            xb: vec![0.0; m],
            initialized: false,
            updates: 0,
            opt_tol: 1e-9,
            iterations: 0,
            max_iterations: 200_000,
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn columns(&self) -> usize {
        self.cols.iter().zip(&self.artificial).filter(|(_, a)| !**a).count()
    }

    /// Appends a structural column and returns its index.
    pub fn add_column(&mut self, col: SparseColumn, cost: f64) -> usize {
        let signed = SparseColumn {
            val: col.idx.iter().zip(&col.val).map(|(&i, v)| v * self.row_sign[i]).collect(),
            idx: col.idx,
        };
        self.cols.push(signed);
        self.cost.push(cost);
        self.artificial.push(false);
        self.position.push(NONE);
        self.cols.len() - 1
    }

    fn push_artificial(&mut self, row: usize) -> usize {
        self.cols.push(SparseColumn { idx: vec![row], val: vec![1.0] });
        self.cost.push(0.0);
        self.artificial.push(true);
        self.position.push(NONE);
        self.cols.len() - 1
    }

    /// Crash basis: a positive unit column per row where one exists, an artificial otherwise.
    fn crash(&mut self) {
        let m = self.m;
        self.binv = vec![0.0; m * m];
        let mut taken = vec![false; m];
        for j in 0..self.cols.len() {
            let c = &self.cols[j];
            if c.idx.len() == 1 && c.val[0] > 0.0 && !taken[c.idx[0]] {
                let r = c.idx[0];
                taken[r] = true;
                self.basis[r] = j;
                self.position[j] = r;
                self.binv[r * m + r] = 1.0 / c.val[0];
                self.xb[r] = self.b[r] / c.val[0];
            }
        }
        for r in 0..m {
            if !taken[r] {
                let j = self.push_artificial(r);
                self.basis[r] = j;
                self.position[j] = r;
                self.binv[r * m + r] = 1.0;
                self.xb[r] = self.b[r];
            }
        }
        self.initialized = true;
        self.updates = 0;
    }

    pub fn solve(&mut self) -> Result<SimplexStatus> {
        if !self.initialized {
            self.crash();
        } else if self.updates >= RESOLVE_REFACTOR {
            self.refactor()?;
        }
        if self.basis.iter().any(|&j| self.artificial[j]) {
            let phase1: Vec<f64> = self.artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            let status = self.iterate(&phase1, true)?;
            debug_assert_eq!(status, SimplexStatus::Optimal);
            let infeas: f64 = (0..self.m).filter(|&r| self.artificial[self.basis[r]]).map(|r| self.xb[r]).sum();
            let scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-9 * scale {
                return Ok(SimplexStatus::Infeasible);
            }
        }
        let cost = self.cost.clone();
        self.iterate(&cost, false)
    }

    fn iterate(&mut self, cost: &[f64], phase1: bool) -> Result<SimplexStatus> {
        let m = self.m;
        let n = self.cols.len();
        let bland_after = 10 * (m + n);
        let mut local = 0usize;
        let mut pi = vec![0.0; m];
        let mut w = vec![0.0; m];
        let mut pi_fresh = false;
        let mut confirmations = 0;
        loop {
            if local >= self.max_iterations {
                return Err(Error::Lp(format!("simplex exceeded {} pivots", self.max_iterations)));
            }
            let bland = local >= bland_after;
            if !pi_fresh {
                self.multipliers(cost, &mut pi);
                pi_fresh = true;
            }
            // pricing
            let mut enter = NONE;
            let mut enter_d = 0.0;
            let mut best = 0.0;
            for j in 0..n {
                if self.position[j] != NONE || (!phase1 && self.artificial[j]) {
                    continue;
                }
                let c = &self.cols[j];
                let d = cost[j] - c.idx.iter().zip(&c.val).map(|(&i, v)| pi[i] * v).sum::<f64>();
                let scale = 1.0 + cost[j].abs();
                if d < -self.opt_tol * scale {
                    if bland {
                        enter = j;
                        enter_d = d;
                        break;
                    }
                    let score = d / scale;
                    if score < best {
                        best = score;
                        enter = j;
                        enter_d = d;
                    }
                }
            }
            let mut dual_leave = NONE;
            if enter == NONE {
                match self.dual_step(cost, &pi, phase1) {
                    Some((r, q, d)) => {
                        dual_leave = r;
                        enter = q;
                        enter_d = d;
                    }
                    None if self.updates > 0 && confirmations < MAX_CONFIRMATIONS => {
                        // confirm on a fresh factorization
                        confirmations += 1;
                        self.refactor()?;
                        pi_fresh = false;
                        continue;
                    }
                    None => return Ok(SimplexStatus::Optimal),
                }
            }
            // w = B^-1 a_q
            w.iter_mut().for_each(|x| *x = 0.0);
            let col = &self.cols[enter];
            for (&i, &v) in col.idx.iter().zip(&col.val) {
                for (x, b) in w.iter_mut().zip(&self.binv[i * m..(i + 1) * m]) {
                    *x += b * v;
                }
            }
            let leave = match (dual_leave != NONE).then_some(dual_leave).or_else(|| self.ratio_test(&w, bland, phase1)) {
                Some(r) => r,
                None => {
                    if phase1 {
                        return Err(Error::Lp("phase 1 reported unbounded".into()));
                    }
                    return Ok(SimplexStatus::Unbounded);
                }
            };
            self.pivot(leave, enter, &w);
            // pi += d_q * (row `leave` of the new B^-1)
            for (k, p) in pi.iter_mut().enumerate() {
                *p += enter_d * self.binv[k * m + leave];
            }
            local += 1;
            self.iterations += 1;
            if self.updates >= REFACTOR_EVERY {
                self.refactor()?;
                pi_fresh = false;
            }
        }
    }

    /// `pi = c_B^T B^-1`.
    fn multipliers(&self, cost: &[f64], pi: &mut [f64]) {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        for (k, p) in pi.iter_mut().enumerate() {
            *p = self.binv[k * m..(k + 1) * m].iter().zip(&cb).map(|(a, c)| a * c).sum();
        }
    }

    fn ratio_test(&self, w: &[f64], bland: bool, phase1: bool) -> Option<usize> {
        let m = self.m;
        let wmax = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = PIVOT_TOL.max(PIVOT_TOL_REL * wmax);
        // basic artificials are pinned at zero in phase 2
        if !phase1 {
            if let Some(r) = (0..m).find(|&r| self.artificial[self.basis[r]] && w[r].abs() > tol) {
                return Some(r);
            }
        }
        if bland {
            let mut best: Option<(f64, usize)> = None;
            for r in 0..m {
                if w[r] > tol {
                    let ratio = self.xb[r].max(0.0) / w[r];
                    let better = match best {
                        None => true,
                        Some((b, br)) => ratio < b - 1e-15 || (ratio <= b + 1e-15 && self.basis[r] < self.basis[br]),
                    };
                    if better {
                        best = Some((ratio, r));
                    }
                }
            }
            return best.map(|(_, r)| r);
        }
        // Harris two-pass
        let mut theta_max = f64::INFINITY;
        for r in 0..m {
            if w[r] > tol {
                theta_max = theta_max.min((self.xb[r].max(0.0) + HARRIS_DELTA) / w[r]);
            }
        }
        if !theta_max.is_finite() {
            return None;
        }
        let mut leave = None;
        let mut best_w = 0.0;
        for r in 0..m {
            if w[r] > tol && self.xb[r].max(0.0) / w[r] <= theta_max && w[r] > best_w {
                best_w = w[r];
                leave = Some(r);
            }
        }
        leave
    }

    /// Dual ratio test for the most negative basic value: `(leave, enter, d_enter)`.
    /// `None` when `x_B` is feasible or no column can repair it.
    fn dual_step(&self, cost: &[f64], pi: &[f64], phase1: bool) -> Option<(usize, usize, f64)> {
        if phase1 {
            return None;
        }
        let m = self.m;
        let (r, &xr) = self.xb.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
        if xr >= -PRIMAL_TOL {
            return None;
        }
        // row r of B^-1
        let rho: Vec<f64> = (0..m).map(|k| self.binv[k * m + r]).collect();
        let mut best: Option<(f64, usize, f64)> = None;
        for (j, c) in self.cols.iter().enumerate() {
            if self.position[j] != NONE || self.artificial[j] {
                continue;
            }
            let alpha: f64 = c.idx.iter().zip(&c.val).map(|(&i, v)| rho[i] * v).sum();
            if alpha < -PIVOT_TOL {
                let d = cost[j] - c.idx.iter().zip(&c.val).map(|(&i, v)| pi[i] * v).sum::<f64>();
                let ratio = d.max(0.0) / -alpha;
                if best.is_none_or(|(b, _, _)| ratio < b) {
                    best = Some((ratio, j, d));
                }
            }
        }
        best.map(|(_, j, d)| (r, j, d))
    }

    fn pivot(&mut self, r: usize, q: usize, w: &[f64]) {
        let m = self.m;
        let theta = if self.xb[r] < 0.0 && w[r] < 0.0 { self.xb[r] / w[r] } else { self.xb[r].max(0.0) / w[r] };
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * w[i];
                if self.xb[i] < 0.0 && self.xb[i] > -1e-11 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[r] = theta;
        let inv = 1.0 / w[r];
        for col in self.binv.chunks_mut(m) {
            let p = col[r] * inv;
            if p != 0.0 {
                for (a, wi) in col.iter_mut().zip(w) {
                    *a -= wi * p;
                }
                col[r] = p;
            }
        }
        let old = self.basis[r];
        self.position[old] = NONE;
        self.basis[r] = q;
        self.position[q] = r;
        self.updates += 1;
    }

    /// Recomputes `B^-1` and `x_B` from scratch (Gauss-Jordan, partial pivoting).
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (r, &j) in self.basis.iter().enumerate() {
            let c = &self.cols[j];
            for (&i, &v) in c.idx.iter().zip(&c.val) {
                a[i * m + r] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&x, &y| a[x * m + col].abs().partial_cmp(&a[y * m + col].abs()).unwrap())
                .unwrap();
            let pv = a[piv * m + col];
            if pv.abs() < 1e-13 {
                return Err(Error::Lp("singular basis during refactorization".into()));
            }
            if piv != col {
                for k in 0..m {
                    a.swap(piv * m + k, col * m + k);
                    inv.swap(piv * m + k, col * m + k);
                }
            }
            let s = 1.0 / pv;
            for k in col..m {
                a[col * m + k] *= s;
            }
            for k in 0..m {
                inv[col * m + k] *= s;
            }
            let prow_a = a[col * m..(col + 1) * m].to_vec();
            let prow_inv = inv[col * m..(col + 1) * m].to_vec();
            let nz: Vec<usize> = (0..m).filter(|&k| prow_inv[k] != 0.0).collect();
            for i in 0..m {
                if i == col {
                    continue;
                }
                let f = a[i * m + col];
                if f != 0.0 {
                    for k in col..m {
                        a[i * m + k] -= f * prow_a[k];
                    }
                    for &k in &nz {
                        inv[i * m + k] -= f * prow_inv[k];
                    }
                }
            }
        }
        // store transposed
        for i in 0..m {
            for k in 0..m {
                a[k * m + i] = inv[i * m + k];
            }
        }
        self.binv = a;
        self.xb.iter_mut().for_each(|x| *x = 0.0);
        for (k, &bk) in self.b.iter().enumerate() {
            if bk != 0.0 {
                for (x, v) in self.xb.iter_mut().zip(&self.binv[k * m..(k + 1) * m]) {
                    *x += v * bk;
                }
            }
        }
        for x in self.xb.iter_mut() {
            if *x < 0.0 && *x > -1e-9 {
                *x = 0.0;
            }
        }
        self.updates = 0;
        Ok(())
    }

    /// Value of every structural column (zero when nonbasic).
    pub fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols.len()];
        for (r, &j) in self.basis.iter().enumerate() {
            if j != NONE {
                x[j] = self.xb[r];
            }
        }
        x.into_iter().zip(&self.artificial).filter(|(_, a)| !**a).map(|(v, _)| v).collect()
    }

    /// Simplex multipliers in the caller's row orientation: `pi.A_j <= c_j` at optimality.
    pub fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let cost: Vec<f64> = self.cost.iter().zip(&self.artificial).map(|(&c, &a)| if a { 0.0 } else { c }).collect();
        let mut pi = vec![0.0; m];
        self.multipliers(&cost, &mut pi);
        pi.iter().zip(&self.row_sign).map(|(p, s)| p * s).collect()
    }

    pub fn objective(&self) -> f64 {
        (0..self.m)
            .map(|r| {
                let j = self.basis[r];
                if self.artificial[j] {
                    0.0
                } else {
                    self.cost[j] * self.xb[r]
                }
            })
            .sum()
    }
}
