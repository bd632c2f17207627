//! Periodic orbits of the uncontrolled reduced flow and the invariant
//! measures they generate.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::{num, write_row};
use crate::integrate::{refine_event_crossing, rk4_step, DenseSample, IntegratorConfig, Rk4Work};
use crate::models::{ModelKind, ModelSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitConfig {
    pub integrator: IntegratorConfig,
    pub nodes: usize,
    /// Give up if the flow has not returned to the section by this fast time.
    pub tau_max: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig { integrator: IntegratorConfig::default(), nodes: 256, tau_max: 200.0 }
    }
}

/// One period of the reduced flow, sampled at `nodes.len()` equal time steps.
/// Equal weights on the nodes give the invariant measure of the level set.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    pub level: Vec<f64>,
    pub period: f64,
    pub nodes: Vec<Vec<f64>>,
    pub closure_error: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Follows the reduced flow from `y0` until it comes back to the section
/// `(y - y0) . f(y0) = 0` in the starting direction, then resamples one period.
pub fn orbit_from_point(model: &ModelSpec, y0: &[f64], cfg: &OrbitConfig) -> Result<PeriodicOrbit> {
    cfg.integrator.validate()?;
    if cfg.nodes < 64 {
        return Err(Error::contract(format!("an orbit needs at least 64 nodes, got {}", cfg.nodes)));
    }
    model.check_state(y0)?;
    let u = model.reduced_control();
    let field = |y: &[f64], out: &mut [f64]| model.f_into(&u, y, out);
    let mut f0 = vec![0.0; model.m];
    field(y0, &mut f0);
    if norm(&f0) <= 1e-8 {
        return Err(Error::DegenerateOrbit(format!("{y0:?} is an equilibrium of the reduced flow")));
    }
    let section = |y: &[f64]| y.iter().zip(y0).zip(&f0).map(|((a, b), c)| (a - b) * c).sum::<f64>();

    let dt = cfg.integrator.dt;
    let mut work = Rk4Work::default();
    let mut prev = DenseSample { t: 0.0, y: y0.to_vec(), dy: f0.clone() };
    let mut s_prev = 0.0;
    let mut farthest: f64 = 0.0;
    let mut step = 0usize;
    let period = loop {
        step += 1;
        let t = step as f64 * dt;
        if t > cfg.tau_max {
            return Err(Error::NoPeriodicOrbit { tau_max: cfg.tau_max });
        }
        let mut y = prev.y.clone();
        rk4_step(field, &mut y, dt, &mut work);
        model
            .check_state(&y)
            .map_err(|e| Error::Integration { t_last: prev.t, reason: e.to_string() })?;
        let mut dy = vec![0.0; model.m];
        field(&y, &mut dy);
        let s = section(&y);
        let d = dist(&y, y0);
        farthest = farthest.max(d);
        let next = DenseSample { t, y, dy };
        // upward crossing near the seed; the far-side crossing runs downward
        if s_prev < 0.0 && s >= 0.0 && d < 0.5 * farthest {
            let (tc, _) = refine_event_crossing(&prev, &next, section, cfg.integrator.event_refine_tol)?;
            break tc;
        }
        s_prev = s;
        prev = next;
    };
    sample_period(model, y0, period, cfg)
}

fn sample_period(model: &ModelSpec, y0: &[f64], period: f64, cfg: &OrbitConfig) -> Result<PeriodicOrbit> {
    let n = cfg.nodes;
    let u = model.reduced_control();
    let sub = ((period / (n as f64 * cfg.integrator.dt)).ceil() as usize).max(1);
    let h = period / (n * sub) as f64;
    let mut work = Rk4Work::default();
    let mut y = y0.to_vec();
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        nodes.push(y.clone());
        for _ in 0..sub {
            rk4_step(|y, out| model.f_into(&u, y, out), &mut y, h, &mut work);
        }
    }
    let closure_error = dist(&y, y0);
    if closure_error > 1e-6 {
        return Err(Error::DegenerateOrbit(format!("orbit does not close: error {closure_error:e}")));
    }
    Ok(PeriodicOrbit { level: model.observable(y0), period, nodes, closure_error })
}

/// A point on the level set `F = z` along a fixed ray: `(1, s)` with `s > 1`
/// for Lotka-Volterra, `(sqrt z, 0)` for the rotation model.
pub fn seed_point_for_level(model: &ModelSpec, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != model.k {
        return Err(Error::contract(format!("level has {} entries, expected {}", z.len(), model.k)));
    }
    let z = z[0];
    let (lo, hi) = model.observable_range();
    if !(z > lo && z < hi) {
        return Err(Error::domain(format!("level {z} outside the admissible range ({lo}, {hi})")));
    }
    match model.kind {
        ModelKind::RotationExample1 => Ok(vec![z.sqrt(), 0.0]),
        ModelKind::LotkaVolterraExample2 => {
            // ln s - s - 1 is strictly decreasing on s > 1, from -2 down to -inf
            let phi = |s: f64| s.ln() - s - 1.0;
            let mut a = 1.0;
            let mut b = 2.0;
            while phi(b) > z {
                a = b;
                b *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if phi(mid) > z {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let s = if (phi(a) - z).abs() < (phi(b) - z).abs() { a } else { b };
            Ok(vec![1.0, s])
        }
    }
}

pub fn orbit_for_level(model: &ModelSpec, z: &[f64], cfg: &OrbitConfig) -> Result<PeriodicOrbit> {
    let seed = seed_point_for_level(model, z)?;
    let mut orbit = orbit_from_point(model, &seed, cfg)?;
    orbit.level = z.to_vec();
    Ok(orbit)
}

/// Orbits for every level of a scalar grid, computed in parallel.
pub fn orbits_for_grid(model: &ModelSpec, z_grid: &[f64], cfg: &OrbitConfig) -> Result<Vec<PeriodicOrbit>> {
    z_grid.par_iter().map(|&z| orbit_for_level(model, &[z], cfg)).collect()
}

/// Doubles the node count until every probe average moves by at most `tol`
/// (or `max_nodes` is reached). Returns the finer of the last two orbits.
/// Scalar function of the state, averaged along an orbit.
pub type Probe<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

pub fn orbit_for_level_refined(
    model: &ModelSpec,
    z: &[f64],
    cfg: &OrbitConfig,
    probes: &[Probe],
    tol: f64,
    max_nodes: usize,
) -> Result<PeriodicOrbit> {
    let mut cfg = cfg.clone();
    let mut orbit = orbit_for_level(model, z, &cfg)?;
    while cfg.nodes * 2 <= max_nodes {
        cfg.nodes *= 2;
        let finer = orbit_for_level(model, z, &cfg)?;
        let stable = probes
            .iter()
            .all(|q| (orbit_average(&orbit, q) - orbit_average(&finer, q)).abs() <= tol);
        orbit = finer;
        if stable {
            break;
        }
    }
    Ok(orbit)
}

/// Time average of `q` over one period (plain node mean).
pub fn orbit_average(orbit: &PeriodicOrbit, q: impl Fn(&[f64]) -> f64) -> f64 {
    orbit.nodes.iter().map(|y| q(y)).sum::<f64>() / orbit.nodes.len() as f64
}

pub fn orbit_average_vec(orbit: &PeriodicOrbit, q: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for y in &orbit.nodes {
        let v = q(y);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(&v) {
            *a += b;
        }
    }
    let n = orbit.nodes.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

impl PeriodicOrbit {
    /// `z,T_z` line, then one `y1..ym` row per node.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let zs: Vec<String> = (1..=self.level.len()).map(|i| format!("z{i}")).collect();
        writeln!(w, "{},T_z", zs.join(","))?;
        let vals: Vec<String> = self.level.iter().map(|&v| num(v)).collect();
        writeln!(w, "{},{}", vals.join(","), num(self.period))?;
        let m = self.nodes.first().map_or(0, |n| n.len());
        let ys: Vec<String> = (1..=m).map(|i| format!("y{i}")).collect();
        writeln!(w, "{}", ys.join(","))?;
        for y in &self.nodes {
            write_row(w, y.iter().copied())?;
        }
        Ok(())
    }
}
