//! Feedback synthesis from a dual certificate and evaluation of the
//! resulting control family on the averaged system.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::write_row;
use crate::lp::{hamiltonian_argmin, DualSolution};
use crate::measures::{mean_functionals, occupational_from_policy};
use crate::models::ModelSpec;
use crate::orbits::PeriodicOrbit;

/// Closed-loop control law: a control for every `(y, z)`.
pub trait Policy: Sync {
    fn control_into(&self, y: &[f64], z: f64, u: &mut [f64]);

    fn control(&self, y: &[f64], z: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        self.control_into(y, z, &mut u);
        u
    }

    fn dim(&self) -> usize;
}

/// Same control everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn control_into(&self, _: &[f64], _: f64, u: &mut [f64]) {
        u.copy_from_slice(&self.0);
    }

    fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Pointwise minimizer of `r(u,y) + zeta'(z) h(u,y) + grad eta_z(y) . f(u,y)`
/// with `zeta`, `eta` taken from a certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy {
    pub dual: DualSolution,
    pub model: ModelSpec,
    pub control_grid: Vec<Vec<f64>>,
}

impl FeedbackPolicy {
    pub fn new(model: ModelSpec, dual: DualSolution) -> Self {
        let control_grid = model.control_grid(33);
        FeedbackPolicy { dual, model, control_grid }
    }
}

impl Policy for FeedbackPolicy {
    fn control_into(&self, y: &[f64], z: f64, u: &mut [f64]) {
        let (lo, hi) = self.dual.grid_hull();
        let z = z.clamp(lo, hi);
        let zeta_p = self.dual.zeta_prime(z);
        let node = self.dual.nearest_node(z);
        let best = hamiltonian_argmin(&self.model, y, zeta_p, |v| self.dual.eta_grad_dot(node, y, v), &self.control_grid);
        u.copy_from_slice(&best);
        self.model.clamp_control(u);
    }

    fn dim(&self) -> usize {
        self.model.du
    }
}

pub fn feedback_u(policy: &FeedbackPolicy, y: &[f64], z: f64) -> Vec<f64> {
    policy.control(y, z)
}

/// Averaged drift and cost of a control family, tabulated on the orbit levels.
#[derive(Clone, Debug, PartialEq)]
pub struct AcgTables {
    pub z_grid: Vec<f64>,
    pub h_star: Vec<f64>,
    pub r_star: Vec<f64>,
    pub periods: Vec<f64>,
}

impl AcgTables {
    fn locate(&self, z: f64) -> (usize, f64) {
        let g = &self.z_grid;
        if g.len() == 1 || z <= g[0] {
            return (0, 0.0);
        }
        let last = g.len() - 1;
        if z >= g[last] {
            return (last - 1, 1.0);
        }
        let i = g.partition_point(|&x| x <= z).saturating_sub(1).min(last - 1);
        (i, (z - g[i]) / (g[i + 1] - g[i]))
    }

    fn interp(&self, table: &[f64], z: f64) -> f64 {
        if table.len() == 1 {
            return table[0];
        }
        let (i, s) = self.locate(z);
        table[i] + s * (table[i + 1] - table[i])
    }

    /// Piecewise-linear `h*`, constant beyond the grid ends.
    pub fn h_at(&self, z: f64) -> f64 {
        self.interp(&self.h_star, z)
    }

    pub fn r_at(&self, z: f64) -> f64 {
        self.interp(&self.r_star, z)
    }

    /// Header `z,T_z,h_star,r_star`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "z,T_z,h_star,r_star")?;
        for i in 0..self.z_grid.len() {
            write_row(w, [self.z_grid[i], self.periods[i], self.h_star[i], self.r_star[i]])?;
        }
        Ok(())
    }
}

/// Occupational measure of `policy` on every orbit, reduced to its mean drift and cost.
pub fn tabulate_acg(model: &ModelSpec, policy: &dyn Policy, orbits: &[PeriodicOrbit]) -> Result<AcgTables> {
    if orbits.is_empty() {
        return Err(Error::EmptySamples);
    }
    if model.k != 1 {
        return Err(Error::contract("tables are tabulated for a scalar observable"));
    }
    let rows: Vec<(f64, f64, f64, f64)> = orbits
        .par_iter()
        .map(|o| {
            let mu = occupational_from_policy(model, o, |y, z| policy.control(y, z[0]))?;
            let mf = mean_functionals(model, &mu);
            Ok((o.level[0], mf.h_bar[0], mf.r_bar, o.period))
        })
        .collect::<Result<_>>()?;
    if rows.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::contract("orbit levels must be strictly ascending"));
    }
    Ok(AcgTables {
        z_grid: rows.iter().map(|r| r.0).collect(),
        h_star: rows.iter().map(|r| r.1).collect(),
        r_star: rows.iter().map(|r| r.2).collect(),
        periods: rows.iter().map(|r| r.3).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragedConfig {
    pub dt: f64,
    /// Stop once the discounted tail `max|r*| e^{-Ct} / C` is below this.
    pub tail_tol: f64,
    /// Integrate at least this far even if the tail is already small.
    pub min_horizon: f64,
    pub max_horizon: f64,
}

impl Default for AveragedConfig {
    fn default() -> Self {
        AveragedConfig { dt: 0.01, tail_tol: 1e-4, min_horizon: 0.0, max_horizon: 1e4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragedTrajectory {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub r_star: Vec<f64>,
    pub running_cost: Vec<f64>,
    /// Discounted cost of the run, `R~`.
    pub r_tilde: f64,
    pub tail_bound: f64,
    /// True when `z` was held at the end of the grid.
    pub saturated: bool,
}

impl AveragedTrajectory {
    /// Linear interpolation of `z(t)`; constant after the last sample.
    pub fn z_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.z[0];
        }
        if t >= self.times[n - 1] {
            return self.z[n - 1];
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let s = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.z[i] + s * (self.z[i + 1] - self.z[i])
    }

    /// Header `t,z,r_star,cost`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,z,r_star,cost")?;
        for i in 0..self.times.len() {
            write_row(w, [self.times[i], self.z[i], self.r_star[i], self.running_cost[i]])?;
        }
        Ok(())
    }
}

/// RK4 on `z' = h*(z)` with cost `exp(-C t) r*(z)`, saturating at the grid ends.
pub fn integrate_averaged(tables: &AcgTables, z0: f64, discount: f64, cfg: &AveragedConfig) -> Result<AveragedTrajectory> {
    if !(discount > 0.0) || !(cfg.dt > 0.0) {
        return Err(Error::contract("discount and dt must be positive"));
    }
    let lo = tables.z_grid[0];
    let hi = *tables.z_grid.last().unwrap();
    if z0 < lo - 1e-12 || z0 > hi + 1e-12 {
        return Err(Error::contract(format!("z0 = {z0} outside the table range [{lo}, {hi}]")));
    }
    let r_max = tables.r_star.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let drift = |z: f64| {
        let h = tables.h_at(z);
        if (z >= hi && h > 0.0) || (z <= lo && h < 0.0) {
            0.0
        } else {
            h
        }
    };
    let rhs = |t: f64, z: f64| (drift(z), (-discount * t).exp() * tables.r_at(z.clamp(lo, hi)));
    let mut z = z0.clamp(lo, hi);
    let mut cost = 0.0;
    let mut t = 0.0;
    let mut saturated = false;
    let mut out = AveragedTrajectory {
        times: vec![0.0],
        z: vec![z],
        r_star: vec![tables.r_at(z)],
        running_cost: vec![0.0],
        r_tilde: 0.0,
        tail_bound: 0.0,
        saturated: false,
    };
    let mut step = 0usize;
    loop {
        let tail = r_max * (-discount * t).exp() / discount;
        if (t >= cfg.min_horizon && tail <= cfg.tail_tol) || t >= cfg.max_horizon {
            out.tail_bound = tail;
            break;
        }
        let h = cfg.dt;
        let (k1, c1) = rhs(t, z);
        let (k2, c2) = rhs(t + 0.5 * h, z + 0.5 * h * k1);
        let (k3, c3) = rhs(t + 0.5 * h, z + 0.5 * h * k2);
        let (k4, c4) = rhs(t + h, z + h * k3);
        let next = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        cost += h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
        z = next.clamp(lo, hi);
        if z != next || ((z >= hi || z <= lo) && tables.h_at(z) != drift(z)) {
            saturated = true;
        }
        step += 1;
        t = step as f64 * h;
        out.times.push(t);
        out.z.push(z);
        out.r_star.push(tables.r_at(z));
        out.running_cost.push(cost);
    }
    out.r_tilde = cost;
    out.saturated = saturated;
    Ok(out)
}

/// `R~ - a / C`.
pub fn optimality_gap(r_tilde: f64, a: f64, discount: f64) -> f64 {
    r_tilde - a / discount
}
