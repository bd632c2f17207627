//! Closed-loop and piecewise-frozen evaluation of a control law on the
//! perturbed system `dy/dt = f / eps + g`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::write_row;
use crate::integrate::{domain_exit, rk4_step, IntegratorConfig, Rk4Work, Trajectory};
use crate::models::{ModelSpec, ProblemSpec};
use crate::synthesis::{AveragedTrajectory, Policy};

/// Switch to `fallback` the first time `F(y)` reaches `level`.
#[derive(Clone, Debug, PartialEq)]
pub struct StopRule {
    pub level: f64,
    pub fallback: Vec<f64>,
}

impl StopRule {
    /// Stop at `level` and apply the zero control afterwards.
    pub fn zero(model: &ModelSpec, level: f64) -> Self {
        let mut fallback = vec![0.0; model.du];
        model.clamp_control(&mut fallback);
        StopRule { level, fallback }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub epsilon: f64,
    /// Discounted cost over the simulated horizon.
    pub cost: f64,
    /// `max r * exp(-C T) / C` over the recorded stage costs.
    pub tail_bound: f64,
    pub trajectory: Trajectory,
    pub sup_observable_gap: Option<f64>,
    pub switch_time: Option<f64>,
}

fn rhs(model: &ModelSpec, eps: f64, u: &[f64], y: &[f64], out: &mut [f64], buf: &mut [f64]) {
    model.f_into(u, y, out);
    model.g_into(u, y, buf);
    for (o, g) in out.iter_mut().zip(buf.iter()) {
        *o = *o / eps + g;
    }
}

/// Shared stepping state for both evaluation modes.
struct Runner<'a> {
    model: &'a ModelSpec,
    eps: f64,
    discount: f64,
    y: Vec<f64>,
    t: f64,
    cost: f64,
    work: Rk4Work,
    buf: Vec<f64>,
    r_max: f64,
    gap: Option<f64>,
}

impl<'a> Runner<'a> {
    fn new(problem: &'a ProblemSpec, track_gap: bool) -> Self {
        Runner {
            model: &problem.model,
            eps: problem.epsilon,
            discount: problem.discount,
            y: problem.y0.clone(),
            t: 0.0,
            cost: 0.0,
            work: Rk4Work::default(),
            buf: vec![0.0; problem.model.m],
            r_max: 0.0,
            gap: track_gap.then_some(0.0),
        }
    }

    fn trial(&mut self, u: &[f64], h: f64) -> Vec<f64> {
        let (model, eps) = (self.model, self.eps);
        let mut y = self.y.clone();
        let buf = &mut self.buf;
        rk4_step(|y, out| rhs(model, eps, u, y, out, buf), &mut y, h, &mut self.work);
        y
    }

    /// Accepts `y_next` as the state after a step of length `h` under `u`.
    fn accept(&mut self, u: &[f64], h: f64, y_next: Vec<f64>) -> Result<()> {
        domain_exit(self.model, &y_next, self.t)?;
        let c = self.discount;
        let r0 = self.model.cost(u, &self.y);
        let r1 = self.model.cost(u, &y_next);
        self.r_max = self.r_max.max(r0.abs()).max(r1.abs());
        self.cost += 0.5 * h * ((-c * self.t).exp() * r0 + (-c * (self.t + h)).exp() * r1);
        self.t += h;
        self.y = y_next;
        Ok(())
    }

    fn observe_gap(&mut self, averaged: Option<&AveragedTrajectory>) {
        if let (Some(g), Some(avg)) = (self.gap.as_mut(), averaged) {
            *g = g.max((self.model.observable1(&self.y) - avg.z_at(self.t)).abs());
        }
    }

    /// Step of at most `h` under `u`, cut short where `F` first reaches the stop level.
    /// Returns true when the stop rule fired during this step.
    fn step_with_stop(&mut self, u: &[f64], h: f64, stop: Option<(&StopRule, f64)>, tol: f64) -> Result<bool> {
        let y_full = self.trial(u, h);
        let Some((rule, side)) = stop else {
            self.accept(u, h, y_full)?;
            return Ok(false);
        };
        let phi_full = self.model.observable1(&y_full) - rule.level;
        if phi_full * side > 0.0 {
            self.accept(u, h, y_full)?;
            return Ok(false);
        }
        // first crossing inside the step: start from linear interpolation, then bracket
        let phi0 = self.model.observable1(&self.y) - rule.level;
        let (mut a, mut fa, mut b, mut fb) = (0.0, phi0, h, phi_full);
        let mut s = h * phi0 / (phi0 - phi_full);
        let mut y_s = y_full;
        for _ in 0..100 {
            y_s = self.trial(u, s);
            let fs = self.model.observable1(&y_s) - rule.level;
            if fs.abs() <= tol || b - a <= 1e-15 * h {
                break;
            }
            if fs * fa > 0.0 {
                (a, fa) = (s, fs);
            } else {
                (b, fb) = (s, fs);
            }
            let secant = a - fa * (b - a) / (fb - fa);
            s = if secant > a && secant < b { secant } else { 0.5 * (a + b) };
            if (s - a).min(b - s) < 1e-3 * (b - a) {
                s = 0.5 * (a + b);
            }
        }
        self.accept(u, s, y_s)?;
        Ok(true)
    }

    fn tail_bound(&self) -> f64 {
        self.r_max * (-self.discount * self.t).exp() / self.discount
    }
}

fn check_inputs(problem: &ProblemSpec, t_end: f64, cfg: &IntegratorConfig, averaged: Option<&AveragedTrajectory>) -> Result<()> {
    cfg.validate()?;
    problem.model.check_state(&problem.y0)?;
    if !(problem.epsilon > 0.0) {
        return Err(Error::contract("epsilon must be positive"));
    }
    if !(t_end > 0.0) {
        return Err(Error::contract(format!("horizon must be positive, got {t_end}")));
    }
    if problem.model.k != 1 {
        return Err(Error::contract("evaluation requires a scalar observable"));
    }
    if let Some(avg) = averaged {
        if avg.times.last().copied().unwrap_or(0.0) < t_end * (1.0 - 1e-12) {
            return Err(Error::contract("averaged trajectory does not cover the horizon"));
        }
    }
    Ok(())
}

/// Side of the stop level the run starts on; `None` means the rule fires at `t = 0`.
fn start_side(model: &ModelSpec, y0: &[f64], stop: Option<&StopRule>) -> Option<Option<f64>> {
    stop.map(|rule| {
        let d = model.observable1(y0) - rule.level;
        (d != 0.0).then(|| d.signum())
    })
}

/// Integrates the perturbed system with `u = policy(y, F(y))` recomputed every step.
pub fn simulate_closed_loop(
    problem: &ProblemSpec,
    policy: &dyn Policy,
    t_end: f64,
    stop: Option<&StopRule>,
    averaged: Option<&AveragedTrajectory>,
    cfg: &IntegratorConfig,
) -> Result<EvaluationReport> {
    check_inputs(problem, t_end, cfg, averaged)?;
    let model = &problem.model;
    let h_base = problem.epsilon * cfg.dt;
    let mut run = Runner::new(problem, averaged.is_some());
    let mut traj = Trajectory::default();
    let mut u = vec![0.0; model.du];
    let mut switch_time = None;
    let mut side = start_side(model, &problem.y0, stop);
    if let Some(None) = side {
        switch_time = Some(0.0);
    }
    let mut i = 0usize;
    let mut recorded_at = usize::MAX;
    while run.t < t_end {
        match (switch_time, stop) {
            (Some(_), Some(rule)) => u.copy_from_slice(&rule.fallback),
            _ => policy.control_into(&run.y, model.observable1(&run.y), &mut u),
        }
        model.check_control(&u)?;
        if i.is_multiple_of(cfg.record_stride) && recorded_at != i {
            traj.push(model, run.t, &run.y, &u, run.cost);
            recorded_at = i;
        }
        run.observe_gap(averaged);
        let t_next = ((i + 1) as f64 * h_base).min(t_end);
        let t_next = if t_end - t_next < 1e-9 * h_base { t_end } else { t_next };
        let active = match (switch_time, stop, side) {
            (None, Some(rule), Some(Some(s))) => Some((rule, s)),
            _ => None,
        };
        if run.step_with_stop(&u, t_next - run.t, active, cfg.event_refine_tol)? {
            switch_time = Some(run.t);
            side = None;
            if let Some(rule) = stop {
                traj.push(model, run.t, &run.y, &rule.fallback, run.cost);
            }
            if t_next - run.t > 1e-12 * h_base {
                continue;
            }
            run.t = t_next;
        }
        i += 1;
    }
    match (switch_time, stop) {
        (Some(_), Some(rule)) => u.copy_from_slice(&rule.fallback),
        _ => policy.control_into(&run.y, model.observable1(&run.y), &mut u),
    }
    model.clamp_control(&mut u);
    traj.push(model, run.t, &run.y, &u, run.cost);
    run.observe_gap(averaged);
    Ok(EvaluationReport {
        epsilon: problem.epsilon,
        cost: run.cost,
        tail_bound: run.tail_bound(),
        trajectory: traj,
        sup_observable_gap: run.gap,
        switch_time,
    })
}

/// Time step of the frozen schedule, `(eps / 2 L_f) ln(1 / eps)`.
pub fn frozen_block_length(epsilon: f64, lipschitz: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::contract(format!("frozen schedule needs 0 < eps < 1, got {epsilon}")));
    }
    if !(lipschitz > 0.0) {
        return Err(Error::contract("Lipschitz constant must be positive"));
    }
    Ok(epsilon / (2.0 * lipschitz) * (1.0 / epsilon).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDrift {
    pub t_start: f64,
    pub z_frozen: f64,
    /// Max over the block of `|y_eps(t) - y_ref(t / eps)|`.
    pub max_drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenReport {
    pub report: EvaluationReport,
    pub block_length: f64,
    pub lipschitz: f64,
    pub blocks: Vec<BlockDrift>,
    /// `eps^{1/4}`.
    pub drift_bound: f64,
}

impl FrozenReport {
    pub fn max_drift(&self) -> f64 {
        self.blocks.iter().fold(0.0, |a, b| a.max(b.max_drift))
    }

    /// Header `t_start,z_frozen,max_drift`.
    pub fn write_blocks_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t_start,z_frozen,max_drift")?;
        for b in &self.blocks {
            write_row(w, [b.t_start, b.z_frozen, b.max_drift])?;
        }
        Ok(())
    }
}

/// Piecewise-frozen schedule: on each block the observable is frozen at its
/// value at the block start and the control is read off a reference reduced
/// trajectory started from the same state, applied open loop.
pub fn simulate_frozen(
    problem: &ProblemSpec,
    policy: &dyn Policy,
    t_end: f64,
    stop: Option<&StopRule>,
    cfg: &IntegratorConfig,
) -> Result<FrozenReport> {
    check_inputs(problem, t_end, cfg, None)?;
    let model = &problem.model;
    let eps = problem.epsilon;
    let lipschitz = model.lipschitz_f();
    let delta = frozen_block_length(eps, lipschitz)?;
    let h_base = eps * cfg.dt;
    let mut run = Runner::new(problem, false);
    let mut traj = Trajectory::default();
    let mut blocks = Vec::new();
    let mut u = vec![0.0; model.du];
    let mut ref_work = Rk4Work::default();
    let mut switch_time = None;
    let mut side = start_side(model, &problem.y0, stop);
    if let Some(None) = side {
        switch_time = Some(0.0);
    }
    let mut step_index = 0usize;
    let mut l = 0usize;
    while run.t < t_end {
        let t_block_end = ((l + 1) as f64 * delta).min(t_end);
        let z_l = model.observable1(&run.y);
        let mut y_ref = run.y.clone();
        let mut block = BlockDrift { t_start: run.t, z_frozen: z_l, max_drift: 0.0 };
        let n = (((t_block_end - run.t) / h_base) - 1e-9).ceil().max(1.0) as usize;
        let h = (t_block_end - run.t) / n as f64;
        let mut j = 0;
        while j < n {
            let stopped = switch_time.is_some();
            match (stopped, stop) {
                (true, Some(rule)) => u.copy_from_slice(&rule.fallback),
                _ => policy.control_into(&y_ref, z_l, &mut u),
            }
            model.check_control(&u)?;
            if step_index.is_multiple_of(cfg.record_stride) {
                traj.push(model, run.t, &run.y, &u, run.cost);
            }
            let active = match (switch_time, stop, side) {
                (None, Some(rule), Some(Some(s))) => Some((rule, s)),
                _ => None,
            };
            let t_before = run.t;
            let fired = run.step_with_stop(&u, h, active, cfg.event_refine_tol)?;
            let taken = run.t - t_before;
            rk4_step(|y, out| {
                model.f_into(&u, y, out);
                out.iter_mut().for_each(|o| *o /= eps);
            }, &mut y_ref, taken, &mut ref_work);
            let d: f64 = run.y.iter().zip(&y_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            block.max_drift = block.max_drift.max(d);
            if fired {
                switch_time = Some(run.t);
                side = None;
                if let Some(rule) = stop {
                    traj.push(model, run.t, &run.y, &rule.fallback, run.cost);
                }
                let rest = h - taken;
                if rest > 1e-12 * h {
                    u.copy_from_slice(&stop.unwrap().fallback);
                    run.step_with_stop(&u, rest, None, cfg.event_refine_tol)?;
                    rk4_step(|y, out| {
                        model.f_into(&u, y, out);
                        out.iter_mut().for_each(|o| *o /= eps);
                    }, &mut y_ref, rest, &mut ref_work);
                    let d: f64 = run.y.iter().zip(&y_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    block.max_drift = block.max_drift.max(d);
                }
            }
            step_index += 1;
            j += 1;
        }
        run.t = t_block_end;
        blocks.push(block);
        l += 1;
    }
    if let Some(rule) = stop.filter(|_| switch_time.is_some()) {
        u.copy_from_slice(&rule.fallback);
    }
    traj.push(model, run.t, &run.y, &u, run.cost);
    Ok(FrozenReport {
        report: EvaluationReport {
            epsilon: eps,
            cost: run.cost,
            tail_bound: run.tail_bound(),
            trajectory: traj,
            sup_observable_gap: None,
            switch_time,
        },
        block_length: delta,
        lipschitz,
        blocks,
        drift_bound: eps.powf(0.25),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub sup_observable_gap: f64,
    pub cost: f64,
    /// `|cost(eps) - R~|`.
    pub cost_gap: f64,
    pub switch_time: Option<f64>,
}

/// Header `eps,sup_gap,cost,cost_gap,switch_time` (empty when the rule never fired).
pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "eps,sup_gap,cost,cost_gap,switch_time")?;
    for r in rows {
        let sw = r.switch_time.map(crate::fmt::num).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            crate::fmt::num(r.epsilon),
            crate::fmt::num(r.sup_observable_gap),
            crate::fmt::num(r.cost),
            crate::fmt::num(r.cost_gap),
            sw
        )?;
    }
    Ok(())
}

/// Closed-loop runs for each `eps` compared against the averaged trajectory.
pub fn averaging_experiment(
    problem: &ProblemSpec,
    policy: &dyn Policy,
    averaged: &AveragedTrajectory,
    eps_list: &[f64],
    t_end: f64,
    stop: Option<&StopRule>,
    cfg: &IntegratorConfig,
) -> Result<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return Err(Error::EmptySamples);
    }
    if eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::contract("eps_list must be strictly descending"));
    }
    eps_list
        .par_iter()
        .map(|&eps| {
            let p = problem.with_epsilon(eps);
            let rep = simulate_closed_loop(&p, policy, t_end, stop, Some(averaged), &cfg.clone().with_stride(usize::MAX))?;
            Ok(SweepRow {
                epsilon: eps,
                sup_observable_gap: rep.sup_observable_gap.unwrap_or(0.0),
                cost: rep.cost,
                cost_gap: (rep.cost - averaged.r_tilde).abs(),
                switch_time: rep.switch_time,
            })
        })
        .collect()
}
