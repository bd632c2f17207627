//! Monomial test-function bases on the observable (`psi_i`) and on the state (`phi_j`).
//!
//! Both are stored in affinely normalized coordinates `(x - center) / scale`.
//! Up to additive constants, which never enter the dual constraints, they
//! span the same spaces as the raw monomials (`center = 0`, `scale = 1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `psi_i(z) = ((z - center) / scale)^i`, `i = 1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasisZ {
    pub n: usize,
    pub center: f64,
    pub scale: f64,
}

impl MonomialBasisZ {
    pub fn new(n: usize, center: f64, scale: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("the observable basis needs N >= 1"));
        }
        if !(scale > 0.0) || !center.is_finite() {
            return Err(Error::contract("basis scale must be positive"));
        }
        Ok(MonomialBasisZ { n, center, scale })
    }

    /// Raw monomials `z^i`.
    pub fn raw(n: usize) -> Result<Self> {
        Self::new(n, 0.0, 1.0)
    }

    /// Normalized to map `[lo, hi]` onto `[-1, 1]`.
    pub fn for_interval(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(n, 0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    pub fn values(&self, z: f64) -> Vec<f64> {
        let x = (z - self.center) / self.scale;
        let mut out = Vec::with_capacity(self.n);
        let mut p = 1.0;
        for _ in 0..self.n {
            p *= x;
            out.push(p);
        }
        out
    }

    pub fn derivatives(&self, z: f64) -> Vec<f64> {
        let x = (z - self.center) / self.scale;
        let mut out = Vec::with_capacity(self.n);
        let mut p = 1.0;
        for i in 1..=self.n {
            out.push(i as f64 * p / self.scale);
            p *= x;
        }
        out
    }

    pub fn eval(&self, coef: &[f64], z: f64) -> f64 {
        self.values(z).iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    pub fn eval_derivative(&self, coef: &[f64], z: f64) -> f64 {
        self.derivatives(z).iter().zip(coef).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegreeBound {
    /// Each exponent at most `degree` (for `m = 2`, degree 5: 35 monomials).
    #[default]
    MaxDegree,
    /// Exponents summing to at most `degree` (for `m = 2`, degree 5: 20 monomials).
    TotalDegree,
}

impl DegreeBound {
    pub fn tag(self) -> &'static str {
        match self {
            DegreeBound::MaxDegree => "max_degree",
            DegreeBound::TotalDegree => "total_degree",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "max_degree" => Some(DegreeBound::MaxDegree),
            "total_degree" => Some(DegreeBound::TotalDegree),
            _ => None,
        }
    }
}

/// `phi_j(y) = prod_l ((y_l - center_l) / scale_l)^{e_jl}` over non-constant exponent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasisY {
    pub bound: DegreeBound,
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl MonomialBasisY {
    pub fn new(bound: DegreeBound, degree: usize, center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let m = center.len();
        if m == 0 || scale.len() != m {
            return Err(Error::contract("state basis needs matching center and scale"));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::contract("basis scale must be positive"));
        }
        let mut exponents = Vec::new();
        let mut e = vec![0u32; m];
        loop {
            let total: u32 = e.iter().sum();
            let keep = total > 0
                && match bound {
                    DegreeBound::MaxDegree => true,
                    DegreeBound::TotalDegree => total as usize <= degree,
                };
            if keep {
                exponents.push(e.clone());
            }
            // odometer over 0..=degree in every coordinate, last coordinate fastest
            let mut i = m;
            loop {
                if i == 0 {
                    exponents.sort_by_key(|x| (x.iter().sum::<u32>(), std::cmp::Reverse(x.clone())));
                    return Ok(MonomialBasisY { bound, degree, exponents, center, scale });
                }
                i -= 1;
                if (e[i] as usize) < degree {
                    e[i] += 1;
                    break;
                }
                e[i] = 0;
            }
        }
    }

    /// Empty basis (`M = 0`): no state test functions.
    pub fn empty(m: usize) -> Self {
        MonomialBasisY {
            bound: DegreeBound::TotalDegree,
            degree: 0,
            exponents: Vec::new(),
            center: vec![0.0; m],
            scale: vec![1.0; m],
        }
    }

    /// Normalized to the bounding box of `points`.
    pub fn fitted(bound: DegreeBound, degree: usize, points: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        for p in points {
            if lo.is_empty() {
                lo = p.clone();
                hi = p;
                continue;
            }
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if lo.is_empty() {
            return Err(Error::EmptySamples);
        }
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let scale = lo.iter().zip(&hi).map(|(a, b)| (0.5 * (b - a)).max(1e-9)).collect();
        Self::new(bound, degree, center, scale)
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `grad phi_j(y) . v` for every `j`, written into `out`.
    pub fn grad_dot_into(&self, y: &[f64], v: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let deg = self.exponents.iter().flatten().copied().max().unwrap_or(0) as usize;
        // powers[l][p] = w_l^p
        let mut powers = vec![vec![1.0; deg + 1]; m];
        for l in 0..m {
            let w = (y[l] - self.center[l]) / self.scale[l];
            for p in 1..=deg {
                powers[l][p] = powers[l][p - 1] * w;
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            let mut acc = 0.0;
            for l in 0..m {
                if e[l] == 0 || v[l] == 0.0 {
                    continue;
                }
                let mut term = e[l] as f64 * powers[l][e[l] as usize - 1] / self.scale[l] * v[l];
                for (q, &eq) in e.iter().enumerate() {
                    if q != l {
                        term *= powers[q][eq as usize];
                    }
                }
                acc += term;
            }
            *o = acc;
        }
    }

    pub fn grad_dot(&self, y: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.grad_dot_into(y, v, &mut out);
        out
    }

    pub fn values(&self, y: &[f64]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .map(|(l, &p)| ((y[l] - self.center[l]) / self.scale[l]).powi(p as i32))
                    .product()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes() {
        let c = vec![0.0, 0.0];
        let s = vec![1.0, 1.0];
        assert_eq!(MonomialBasisY::new(DegreeBound::MaxDegree, 5, c.clone(), s.clone()).unwrap().len(), 35);
        assert_eq!(MonomialBasisY::new(DegreeBound::TotalDegree, 5, c.clone(), s.clone()).unwrap().len(), 20);
        assert_eq!(MonomialBasisY::new(DegreeBound::TotalDegree, 1, c, s).unwrap().len(), 2);
        assert!(MonomialBasisZ::new(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn raw_z_basis() {
        let b = MonomialBasisZ::raw(3).unwrap();
        assert_eq!(b.values(2.0), vec![2.0, 4.0, 8.0]);
        assert_eq!(b.derivatives(2.0), vec![1.0, 4.0, 12.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = MonomialBasisY::new(DegreeBound::MaxDegree, 3, vec![1.0, 1.5], vec![0.7, 1.2]).unwrap();
        let y = [1.3, 0.4];
        let v = [0.3, -1.1];
        let g = b.grad_dot(&y, &v);
        let h = 1e-6;
        let yp = [y[0] + h * v[0], y[1] + h * v[1]];
        let ym = [y[0] - h * v[0], y[1] - h * v[1]];
        let (fp, fm) = (b.values(&yp), b.values(&ym));
        for j in 0..b.len() {
            let fd = (fp[j] - fm[j]) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7, "{j}: {fd} {}", g[j]);
        }
    }

    #[test]
    fn z_derivative_matches_finite_difference() {
        let b = MonomialBasisZ::for_interval(10, -3.0, -2.05).unwrap();
        let coef: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 3.0).collect();
        let z = -2.6;
        let h = 1e-6;
        let fd = (b.eval(&coef, z + h) - b.eval(&coef, z - h)) / (2.0 * h);
        assert!((fd - b.eval_derivative(&coef, z)).abs() < 1e-6);
    }
}
