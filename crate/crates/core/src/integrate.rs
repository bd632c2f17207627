//! Fixed-step RK4 for the reduced flow (fast time) and the perturbed flow
//! (slow time), discounted cost quadrature and event refinement on a cubic
//! Hermite dense output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::write_row;
use crate::models::{ModelSpec, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    /// Base step in fast time. The perturbed integrator uses `epsilon * dt` in slow time.
    pub dt: f64,
    pub method: Method,
    pub event_refine_tol: f64,
    /// Keep every `record_stride`-th step in the trajectory (the last one is always kept).
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 1e-3, method: Method::Rk4, event_refine_tol: 1e-10, record_stride: 1 }
    }
}

impl IntegratorConfig {
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::contract(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.event_refine_tol > 0.0) {
            return Err(Error::contract("event_refine_tol must be positive"));
        }
        if self.record_stride == 0 {
            return Err(Error::contract("record_stride must be at least 1"));
        }
        Ok(())
    }
}

/// Sampled solution. `controls[i]` is applied on `[times[i], times[i+1])`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub observables: Vec<Vec<f64>>,
    /// Accumulated cost up to `times[i]` (discounted for perturbed runs).
    pub running_cost: Vec<f64>,
    /// `r(controls[i], states[i])`.
    pub stage_cost: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub(crate) fn push(&mut self, model: &ModelSpec, t: f64, y: &[f64], u: &[f64], cost: f64) {
        self.times.push(t);
        self.states.push(y.to_vec());
        self.controls.push(u.to_vec());
        self.observables.push(model.observable(y));
        self.running_cost.push(cost);
        self.stage_cost.push(model.cost(u, y));
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    /// Header `t,y1..ym,u1..udu,z1..zk,cost`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let m = self.states.first().map_or(0, |s| s.len());
        let du = self.controls.first().map_or(0, |s| s.len());
        let k = self.observables.first().map_or(0, |s| s.len());
        let mut head = vec!["t".to_string()];
        head.extend((1..=m).map(|i| format!("y{i}")));
        head.extend((1..=du).map(|i| format!("u{i}")));
        head.extend((1..=k).map(|i| format!("z{i}")));
        head.push("cost".into());
        writeln!(w, "{}", head.join(","))?;
        for i in 0..self.len() {
            let row = std::iter::once(self.times[i])
                .chain(self.states[i].iter().copied())
                .chain(self.controls[i].iter().copied())
                .chain(self.observables[i].iter().copied())
                .chain(std::iter::once(self.running_cost[i]));
            write_row(w, row)?;
        }
        Ok(())
    }
}

/// Classic RK4 step for an autonomous field with the control held fixed.
#[inline]
pub fn rk4_step(mut field: impl FnMut(&[f64], &mut [f64]), y: &mut [f64], h: f64, work: &mut Rk4Work) {
    let m = y.len();
    work.resize(m);
    let Rk4Work { k1, k2, k3, k4, tmp } = work;
    field(y, k1);
    for i in 0..m {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    field(tmp, k2);
    for i in 0..m {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    field(tmp, k3);
    for i in 0..m {
        tmp[i] = y[i] + h * k3[i];
    }
    field(tmp, k4);
    for i in 0..m {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Scratch buffers for [`rk4_step`].
#[derive(Clone, Debug, Default)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn resize(&mut self, m: usize) {
        if self.k1.len() != m {
            for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
                v.resize(m, 0.0);
            }
        }
    }
}

pub(crate) fn step_count(t_end: f64, h: f64) -> usize {
    ((t_end / h) - 1e-9).ceil().max(1.0) as usize
}

pub(crate) fn domain_exit(model: &ModelSpec, y: &[f64], t_last: f64) -> Result<()> {
    model.check_state(y).map_err(|e| Error::Integration { t_last, reason: e.to_string() })
}

/// Integrates `dy/dtau = f(u(tau, y), y)` on `[0, t_end]`. The control is
/// sampled at the start of each step and held over it. `running_cost` is the
/// undiscounted trapezoid integral of `r`.
pub fn integrate_reduced(
    model: &ModelSpec,
    mut control: impl FnMut(f64, &[f64], &mut [f64]),
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    model.check_state(y0)?;
    if !(t_end > 0.0) {
        return Err(Error::contract(format!("t_end must be positive, got {t_end}")));
    }
    let steps = step_count(t_end, cfg.dt);
    let mut traj = Trajectory::default();
    let mut y = y0.to_vec();
    let mut u = vec![0.0; model.du];
    let mut work = Rk4Work::default();
    let mut cost = 0.0;
    let mut t = 0.0;
    for i in 0..steps {
        control(t, &y, &mut u);
        model.check_control(&u)?;
        if i % cfg.record_stride == 0 {
            traj.push(model, t, &y, &u, cost);
        }
        let t_next = if i + 1 == steps { t_end } else { (i + 1) as f64 * cfg.dt };
        let h = t_next - t;
        let r0 = model.cost(&u, &y);
        rk4_step(|y, out| model.f_into(&u, y, out), &mut y, h, &mut work);
        domain_exit(model, &y, t)?;
        cost += 0.5 * h * (r0 + model.cost(&u, &y));
        t = t_next;
    }
    traj.push(model, t, &y, &u, cost);
    Ok(traj)
}

/// Per-step control law of the perturbed integrator: `(t, y, out)`.
pub trait StepPolicy {
    fn control(&mut self, t: f64, y: &[f64], u: &mut [f64]);
}

impl<F: FnMut(f64, &[f64], &mut [f64])> StepPolicy for F {
    fn control(&mut self, t: f64, y: &[f64], u: &mut [f64]) {
        self(t, y, u)
    }
}

/// Integrates `dy/dt = f(u, y) / epsilon + g(u, y)` in slow time on `[0, t_end]`
/// with internal step `epsilon * cfg.dt`. `running_cost` is the trapezoid
/// integral of `exp(-C t) r(u, y)`.
pub fn integrate_perturbed(
    problem: &ProblemSpec,
    mut policy: impl StepPolicy,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let model = &problem.model;
    model.check_state(&problem.y0)?;
    if !(t_end > 0.0) {
        return Err(Error::contract(format!("t_end must be positive, got {t_end}")));
    }
    let eps = problem.epsilon;
    let c = problem.discount;
    let h_base = eps * cfg.dt;
    let steps = step_count(t_end, h_base);
    let mut traj = Trajectory::default();
    let mut y = problem.y0.clone();
    let mut u = vec![0.0; model.du];
    let mut work = Rk4Work::default();
    let mut fbuf = vec![0.0; model.m];
    let mut cost = 0.0;
    let mut t = 0.0;
    for i in 0..steps {
        policy.control(t, &y, &mut u);
        model.check_control(&u)?;
        if i % cfg.record_stride == 0 {
            traj.push(model, t, &y, &u, cost);
        }
        let t_next = if i + 1 == steps { t_end } else { (i + 1) as f64 * h_base };
        let h = t_next - t;
        let r0 = model.cost(&u, &y);
        rk4_step(
            |y, out| {
                model.f_into(&u, y, out);
                model.g_into(&u, y, &mut fbuf);
                for (o, g) in out.iter_mut().zip(&fbuf) {
                    *o = *o / eps + g;
                }
            },
            &mut y,
            h,
            &mut work,
        );
        domain_exit(model, &y, t)?;
        cost += 0.5 * h * ((-c * t).exp() * r0 + (-c * t_next).exp() * model.cost(&u, &y));
        t = t_next;
    }
    traj.push(model, t, &y, &u, cost);
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscountedCost {
    pub value: f64,
    /// `(2 / C) * M_r * exp(-C t_final)`, a bound on the neglected tail.
    pub tail_bound: f64,
}

/// Trapezoid quadrature of `exp(-C t) * stage_cost` over the samples of `traj`.
pub fn discounted_cost(traj: &Trajectory, discount: f64, r_bound: f64) -> Result<DiscountedCost> {
    if traj.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(discount > 0.0) {
        return Err(Error::contract("discount must be positive"));
    }
    let w = |i: usize| (-discount * traj.times[i]).exp() * traj.stage_cost[i];
    let value = (1..traj.len())
        .map(|i| 0.5 * (traj.times[i] - traj.times[i - 1]) * (w(i - 1) + w(i)))
        .sum();
    let t_final = *traj.times.last().unwrap();
    Ok(DiscountedCost { value, tail_bound: 2.0 / discount * r_bound * (-discount * t_final).exp() })
}

/// A step endpoint with its derivative, for Hermite interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSample {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Cubic Hermite interpolant between two samples.
pub fn hermite(a: &DenseSample, b: &DenseSample, t: f64) -> Vec<f64> {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..a.y.len())
        .map(|i| h00 * a.y[i] + h10 * h * a.dy[i] + h01 * b.y[i] + h11 * h * b.dy[i])
        .collect()
}

/// Locates a zero of `event` between two bracketing samples by bisection on
/// the Hermite interpolant. Returns `(t, y(t))`.
pub fn refine_event_crossing(
    a: &DenseSample,
    b: &DenseSample,
    event: impl Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    let ea = event(&a.y);
    let eb = event(&b.y);
    if ea == 0.0 {
        return Ok((a.t, a.y.clone()));
    }
    if eb == 0.0 {
        return Ok((b.t, b.y.clone()));
    }
    if ea.signum() == eb.signum() {
        return Err(Error::contract(format!("event does not change sign on [{}, {}]", a.t, b.t)));
    }
    let (mut lo, mut hi) = (a.t, b.t);
    let mut e_lo = ea;
    let mut mid = 0.5 * (lo + hi);
    let mut y = hermite(a, b, mid);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        y = hermite(a, b, mid);
        let e = event(&y);
        if e.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if e.signum() == e_lo.signum() {
            lo = mid;
            e_lo = e;
        } else {
            hi = mid;
        }
    }
    Ok((mid, y))
}
