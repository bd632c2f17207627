//! Builtin control systems with a slow observable.
//!
//! A model provides the fast field `f(u, y)`, the perturbation `g(u, y)`,
//! the constant-of-motion map `F(y)` with its Jacobian, the observable drift
//! `h = F'(y) g(u, y)` and the running cost `r(u, y)`. The set of models is
//! closed: each one is analytic, so Jacobians and the control structure
//! used by the closed-form minimizers are exact.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `z0 = F(y0)` when building a [`ProblemSpec`].
pub const Z0_CONSISTENCY_TOL: f64 = 1e-9;

/// How far `z0` may sit outside the observable box `Z` and still be accepted.
pub const Z0_BOX_SLACK: f64 = 1e-3;

/// Running-cost target level of the Lotka-Volterra example.
pub const LV_TARGET_LEVEL: f64 = -2.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `f = (u y2, -u y1)`, `F = y1^2 + y2^2`, `U = [-1, 1]`.
    RotationExample1,
    /// Lotka-Volterra reduced flow with a harvesting control on `y1`, `U = [0, 1]`.
    LotkaVolterraExample2,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::RotationExample1 => "rotation_example1",
            ModelKind::LotkaVolterraExample2 => "lotka_volterra_example2",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "rotation_example1" => Some(ModelKind::RotationExample1),
            "lotka_volterra_example2" => Some(ModelKind::LotkaVolterraExample2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// State dimension.
    pub m: usize,
    /// Observable dimension.
    pub k: usize,
    /// Control dimension.
    pub du: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    /// Radial perturbation gain of the rotation model, `g = gain * u * y`.
    /// Ignored by the Lotka-Volterra model.
    pub perturbation_gain: f64,
}

/// Everything `eval_fields` returns for one `(u, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub observable: Vec<f64>,
    /// `k x m`, row-major.
    pub observable_jacobian: Vec<f64>,
    pub h: Vec<f64>,
    pub r: f64,
}

/// Decomposition of a single-input model as polynomials in the control:
/// `f = f0 + u f1`, `h = h0 + u h1`, `r = r2 u^2 + r1 u + r0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlAffine {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub r2: f64,
    pub r1: f64,
    pub r0: f64,
}

impl ModelSpec {
    pub fn rotation_example1() -> Self {
        ModelSpec {
            kind: ModelKind::RotationExample1,
            m: 2,
            k: 1,
            du: 1,
            u_lo: vec![-1.0],
            u_hi: vec![1.0],
            perturbation_gain: 0.0,
        }
    }

    pub fn lotka_volterra_example2() -> Self {
        ModelSpec {
            kind: ModelKind::LotkaVolterraExample2,
            m: 2,
            k: 1,
            du: 1,
            u_lo: vec![0.0],
            u_hi: vec![1.0],
            perturbation_gain: 0.0,
        }
    }

    pub fn from_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::RotationExample1 => Self::rotation_example1(),
            ModelKind::LotkaVolterraExample2 => Self::lotka_volterra_example2(),
        }
    }

    /// Replaces the control box. `lo == hi` is allowed and pins the control.
    pub fn with_control_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        self.u_lo = lo;
        self.u_hi = hi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_perturbation_gain(mut self, gain: f64) -> Self {
        self.perturbation_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < self.k || self.k == 0 || self.du == 0 {
            return Err(Error::contract(format!(
                "model dimensions must satisfy m >= k >= 1 and du >= 1 (m={}, k={}, du={})",
                self.m, self.k, self.du
            )));
        }
        if self.u_lo.len() != self.du || self.u_hi.len() != self.du {
            return Err(Error::contract("control bounds must have du entries"));
        }
        if self.u_lo.iter().zip(&self.u_hi).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::contract("control box needs u_lo <= u_hi"));
        }
        Ok(())
    }

    /// Box used for random sampling and for the Lipschitz estimate of `f`.
    pub fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ModelKind::RotationExample1 => (vec![-10.0, -10.0], vec![10.0, 10.0]),
            ModelKind::LotkaVolterraExample2 => (vec![0.05, 0.05], vec![10.0, 10.0]),
        }
    }

    /// True when the reduced field does not depend on the control.
    pub fn reduced_is_uncontrolled(&self) -> bool {
        matches!(self.kind, ModelKind::LotkaVolterraExample2)
    }

    /// Control used to run the uncontrolled reduced flow (orbits, level-set sampling).
    pub fn reduced_control(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::RotationExample1 => vec![1.0],
            ModelKind::LotkaVolterraExample2 => self.u_lo.clone(),
        }
    }

    /// Admissible observable values, as an open interval.
    pub fn observable_range(&self) -> (f64, f64) {
        match self.kind {
            ModelKind::RotationExample1 => (0.0, f64::INFINITY),
            ModelKind::LotkaVolterraExample2 => (f64::NEG_INFINITY, -2.0),
        }
    }

    pub fn check_state(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::contract(format!("state has {} entries, expected {}", y.len(), self.m)));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite state"));
        }
        if self.kind == ModelKind::LotkaVolterraExample2 && y.iter().any(|&v| v <= 0.0) {
            return Err(Error::domain(format!("Lotka-Volterra state must be positive, got {y:?}")));
        }
        Ok(())
    }

    pub fn check_control(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.du {
            return Err(Error::contract(format!("control has {} entries, expected {}", u.len(), self.du)));
        }
        for ((&v, &lo), &hi) in u.iter().zip(&self.u_lo).zip(&self.u_hi) {
            if !(v >= lo - 1e-12 && v <= hi + 1e-12) {
                return Err(Error::contract(format!("control {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Tensor grid with `n` equispaced points per control dimension (a single
    /// point on degenerate axes).
    pub fn control_grid(&self, n: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .u_lo
            .iter()
            .zip(&self.u_hi)
            .map(|(&lo, &hi)| {
                if lo == hi || n < 2 {
                    vec![lo]
                } else {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            })
            .collect();
        let mut grid = vec![Vec::new()];
        for axis in &axes {
            grid = grid
                .into_iter()
                .flat_map(|p: Vec<f64>| axis.iter().map(move |&v| p.iter().copied().chain([v]).collect()))
                .collect();
        }
        grid
    }

    pub fn clamp_control(&self, u: &mut [f64]) {
        for ((v, &lo), &hi) in u.iter_mut().zip(&self.u_lo).zip(&self.u_hi) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Fast field `f(u, y)`. No domain checks.
    #[inline]
    pub fn f_into(&self, u: &[f64], y: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::RotationExample1 => {
                out[0] = u[0] * y[1];
                out[1] = -u[0] * y[0];
            }
            ModelKind::LotkaVolterraExample2 => {
                out[0] = -y[0] + y[0] * y[1];
                out[1] = y[1] - y[0] * y[1];
            }
        }
    }

    /// Perturbation field `g(u, y)`.
    #[inline]
    pub fn g_into(&self, u: &[f64], y: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::RotationExample1 => {
                out[0] = self.perturbation_gain * u[0] * y[0];
                out[1] = self.perturbation_gain * u[0] * y[1];
            }
            ModelKind::LotkaVolterraExample2 => {
                out[0] = -u[0] * y[0];
                out[1] = 0.0;
            }
        }
    }

    /// Scalar observable for `k = 1` models.
    #[inline]
    pub fn observable1(&self, y: &[f64]) -> f64 {
        match self.kind {
            ModelKind::RotationExample1 => y[0] * y[0] + y[1] * y[1],
            ModelKind::LotkaVolterraExample2 => y[1].ln() - y[1] + y[0].ln() - y[0],
        }
    }

    pub fn observable(&self, y: &[f64]) -> Vec<f64> {
        vec![self.observable1(y)]
    }

    /// `F'(y)`, `k x m` row-major.
    pub fn observable_jacobian(&self, y: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::RotationExample1 => vec![2.0 * y[0], 2.0 * y[1]],
            ModelKind::LotkaVolterraExample2 => vec![1.0 / y[0] - 1.0, 1.0 / y[1] - 1.0],
        }
    }

    /// Running cost `r(u, y)`.
    #[inline]
    pub fn cost(&self, u: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            ModelKind::RotationExample1 => u[0] * u[0],
            ModelKind::LotkaVolterraExample2 => {
                let d = self.observable1(y) - LV_TARGET_LEVEL;
                u[0] * u[0] + d * d
            }
        }
    }

    /// Observable drift `h(u, y) = F'(y) g(u, y)`, computed from its definition.
    pub fn drift(&self, u: &[f64], y: &[f64]) -> Vec<f64> {
        let jac = self.observable_jacobian(y);
        let mut g = vec![0.0; self.m];
        self.g_into(u, y, &mut g);
        (0..self.k)
            .map(|i| (0..self.m).map(|j| jac[i * self.m + j] * g[j]).sum())
            .collect()
    }

    /// Jacobian of `f` with respect to `y`, `m x m` row-major.
    pub fn f_jacobian(&self, u: &[f64], y: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::RotationExample1 => vec![0.0, u[0], -u[0], 0.0],
            ModelKind::LotkaVolterraExample2 => {
                vec![-1.0 + y[1], y[0], -y[1], 1.0 - y[0]]
            }
        }
    }

    /// Polynomial-in-control decomposition at `y` (both builtin models are
    /// control-affine in `f`, `h` and quadratic in `r`).
    pub fn control_affine(&self, y: &[f64]) -> Option<ControlAffine> {
        if self.du != 1 {
            return None;
        }
        let zero = [0.0];
        let one = [1.0];
        let mut f0 = vec![0.0; self.m];
        let mut f1 = vec![0.0; self.m];
        self.f_into(&zero, y, &mut f0);
        self.f_into(&one, y, &mut f1);
        for (a, b) in f1.iter_mut().zip(&f0) {
            *a -= b;
        }
        let h0 = self.drift(&zero, y);
        let mut h1 = self.drift(&one, y);
        for (a, b) in h1.iter_mut().zip(&h0) {
            *a -= b;
        }
        let r0 = match self.kind {
            ModelKind::RotationExample1 => 0.0,
            ModelKind::LotkaVolterraExample2 => {
                let d = self.observable1(y) - LV_TARGET_LEVEL;
                d * d
            }
        };
        Some(ControlAffine { f0, f1, h0, h1, r2: 1.0, r1: 0.0, r0 })
    }

    /// Upper bound on the Lipschitz constant of `f` over the state box:
    /// the largest spectral norm of `df/dy` on a 101 x 101 grid of the box,
    /// at every vertex of the control box.
    pub fn lipschitz_f(&self) -> f64 {
        let (lo, hi) = self.state_box();
        let n = 101;
        let corners = control_corners(&self.u_lo, &self.u_hi);
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
                ];
                for u in &corners {
                    best = best.max(spectral_norm(&self.f_jacobian(u, &y), self.m));
                }
            }
        }
        best
    }
}

/// All vertices of a control box.
pub fn control_corners(lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let du = lo.len();
    (0..1usize << du)
        .map(|mask| (0..du).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect())
        .collect()
}

/// Largest singular value of an `m x m` row-major matrix.
pub fn spectral_norm(a: &[f64], m: usize) -> f64 {
    // power iteration on A^T A
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut sigma2 = 0.0;
    for _ in 0..200 {
        let av: Vec<f64> = (0..m).map(|i| (0..m).map(|j| a[i * m + j] * v[j]).sum()).collect();
        let atav: Vec<f64> = (0..m).map(|j| (0..m).map(|i| a[i * m + j] * av[i]).sum()).collect();
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = atav.iter().map(|x| x / norm).collect();
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        sigma2 = norm;
        if diff < 1e-14 {
            break;
        }
    }
    sigma2.sqrt()
}

/// Evaluates every field of `model` at `(u, y)` with domain and box checks.
pub fn eval_fields(model: &ModelSpec, u: &[f64], y: &[f64]) -> Result<FieldEval> {
    model.check_state(y)?;
    model.check_control(u)?;
    let mut f = vec![0.0; model.m];
    let mut g = vec![0.0; model.m];
    model.f_into(u, y, &mut f);
    model.g_into(u, y, &mut g);
    let observable_jacobian = model.observable_jacobian(y);
    let h = (0..model.k)
        .map(|i| (0..model.m).map(|j| observable_jacobian[i * model.m + j] * g[j]).sum())
        .collect();
    Ok(FieldEval {
        f,
        g,
        observable: model.observable(y),
        observable_jacobian,
        h,
        r: model.cost(u, y),
    })
}

/// Max of `|F'(y) f(u, y)|` over seeded uniform samples of the state and control boxes.
pub fn check_constant_of_motion(model: &ModelSpec, sample_count: usize, seed: u64) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::EmptySamples);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let (lo, hi) = model.state_box();
    let mut worst: f64 = 0.0;
    for _ in 0..sample_count {
        let y: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
        let u: Vec<f64> = model
            .u_lo
            .iter()
            .zip(&model.u_hi)
            .map(|(&a, &b)| if a == b { a } else { rng.gen_range(a..=b) })
            .collect();
        let ev = eval_fields(model, &u, &y)?;
        for i in 0..model.k {
            let dot: f64 = (0..model.m).map(|j| ev.observable_jacobian[i * model.m + j] * ev.f[j]).sum();
            worst = worst.max(dot.abs());
        }
    }
    Ok(worst)
}

/// Problem data: model plus the perturbation size, discount and initial point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub model: ModelSpec,
    pub epsilon: f64,
    pub discount: f64,
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    /// Observable level at which closed-loop runs switch the control off.
    pub stop_level: Option<f64>,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: ModelSpec,
        epsilon: f64,
        discount: f64,
        y0: Vec<f64>,
        z0: Option<Vec<f64>>,
        z_lo: Vec<f64>,
        z_hi: Vec<f64>,
        stop_level: Option<f64>,
    ) -> Result<Self> {
        model.validate()?;
        let invalid = |field: &str, message: String| Error::Validation { field: field.into(), message };
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(discount > 0.0) {
            return Err(invalid("discount", format!("must be positive, got {discount}")));
        }
        if y0.len() != model.m {
            return Err(invalid("y0", format!("expected {} entries", model.m)));
        }
        model
            .check_state(&y0)
            .map_err(|e| invalid("y0", e.to_string()))?;
        let f_y0 = model.observable(&y0);
        let z0 = match z0 {
            Some(z0) => {
                if z0.len() != model.k {
                    return Err(invalid("z0", format!("expected {} entries", model.k)));
                }
                for (a, b) in z0.iter().zip(&f_y0) {
                    if (a - b).abs() > Z0_CONSISTENCY_TOL {
                        return Err(invalid("z0", format!("z0 = {a} but F(y0) = {b}")));
                    }
                }
                z0
            }
            None => f_y0,
        };
        if z_lo.len() != model.k || z_hi.len() != model.k {
            return Err(invalid("z_lo", format!("observable bounds need {} entries", model.k)));
        }
        for i in 0..model.k {
            if !(z_lo[i] < z_hi[i]) {
                return Err(invalid("z_lo", format!("need z_lo < z_hi, got [{}, {}]", z_lo[i], z_hi[i])));
            }
            if z0[i] < z_lo[i] - Z0_BOX_SLACK || z0[i] > z_hi[i] + Z0_BOX_SLACK {
                return Err(invalid("z0", format!("z0 = {} outside [{}, {}]", z0[i], z_lo[i], z_hi[i])));
            }
        }
        Ok(ProblemSpec { model, epsilon, discount, y0, z0, z_lo, z_hi, stop_level })
    }

    /// The Lotka-Volterra problem with `C = 0.1`, `y0 = (0.8916, 3.1370)` and `Z = [-3, -2.05]`.
    pub fn example2(epsilon: f64) -> Self {
        Self::new(
            ModelSpec::lotka_volterra_example2(),
            epsilon,
            0.1,
            vec![0.8916, 3.1370],
            None,
            vec![-3.0],
            vec![-2.05],
            Some(-2.05),
        )
        .expect("builtin example is valid")
    }

    /// Smallest interval containing both `Z` and `z0` (first observable component).
    pub fn observable_hull(&self) -> (f64, f64) {
        (self.z_lo[0].min(self.z0[0]), self.z_hi[0].max(self.z0[0]))
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let mut p = self.clone();
        p.epsilon = epsilon;
        p
    }
}
