//! Constraint exchange for the joint dual LP
//!
//! ```text
//! maximize t  over (t, lambda, omega_1..omega_K)
//! s.t.  r(u,y) + zeta'(z) h(u,y) + grad eta_k(y) . f(u,y) + C (zeta(z0) - zeta(z)) >= t
//!       for every grid level z_k, every y on the orbit of z_k and every u in U,
//! ```
//! with `zeta = sum lambda_i psi_i` and `eta_k = sum omega_kj phi_j`.
//!
//! The working LP is solved through its own LP dual (one column per cut), so
//! new cuts are new columns and the last basis is a feasible warm start.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::num;
use crate::lp::basis::{DegreeBound, MonomialBasisY, MonomialBasisZ};
use crate::lp::simplex::{Simplex, SimplexStatus, SparseColumn};
use crate::models::{ControlAffine, ModelSpec, ProblemSpec};
use crate::orbits::PeriodicOrbit;

/// Level tolerance for states entering a constraint row.
pub const ROW_LEVEL_TOL: f64 = 1e-6;

/// Linear form `constant + lambda . lambda_coef + omega . omega_coef + t_coef * t >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub lambda: Vec<f64>,
    pub omega: Vec<f64>,
    pub t: f64,
    pub constant: f64,
}

impl ConstraintRow {
    pub fn residual(&self, t: f64, lambda: &[f64], omega: &[f64]) -> f64 {
        self.constant
            + self.t * t
            + self.lambda.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>()
            + self.omega.iter().zip(omega).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn constraint_row(
    model: &ModelSpec,
    basis_z: &MonomialBasisZ,
    basis_y: &MonomialBasisY,
    z: f64,
    u: &[f64],
    y: &[f64],
    z0: f64,
    discount: f64,
) -> Result<ConstraintRow> {
    let fz = model.observable1(y);
    if (fz - z).abs() > ROW_LEVEL_TOL {
        return Err(Error::contract(format!("state {y:?} has F = {fz}, not on level {z}")));
    }
    let h = model.drift(u, y)[0];
    let dpsi = basis_z.derivatives(z);
    let psi = basis_z.values(z);
    let psi0 = basis_z.values(z0);
    let lambda = (0..basis_z.n).map(|i| dpsi[i] * h + discount * (psi0[i] - psi[i])).collect();
    let mut f = vec![0.0; model.m];
    model.f_into(u, y, &mut f);
    let omega = basis_y.grad_dot(y, &f);
    Ok(ConstraintRow { lambda, omega, t: -1.0, constant: model.cost(u, y) })
}

/// Certificate of the joint dual LP.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub basis_z: MonomialBasisZ,
    pub basis_y: MonomialBasisY,
    pub lambda: Vec<f64>,
    pub z_grid: Vec<f64>,
    /// One coefficient vector per grid node.
    pub omega: Vec<Vec<f64>>,
    /// Optimal `t` of the last working LP, `a_{M,N}`.
    pub value: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub z0: f64,
    pub discount: f64,
    /// LP value after each exchange round.
    pub value_history: Vec<f64>,
}

impl DualSolution {
    pub fn zeta(&self, z: f64) -> f64 {
        self.basis_z.eval(&self.lambda, z)
    }

    pub fn zeta_prime(&self, z: f64) -> f64 {
        self.basis_z.eval_derivative(&self.lambda, z)
    }

    /// Index of the grid node closest to `z` (first one on ties).
    pub fn nearest_node(&self, z: f64) -> usize {
        let mut best = 0;
        for (i, g) in self.z_grid.iter().enumerate() {
            if (g - z).abs() < (self.z_grid[best] - z).abs() {
                best = i;
            }
        }
        best
    }

    /// `grad eta_k(y) . v` for grid node `k`.
    pub fn eta_grad_dot(&self, node: usize, y: &[f64], v: &[f64]) -> f64 {
        if self.basis_y.is_empty() {
            return 0.0;
        }
        self.basis_y.grad_dot(y, v).iter().zip(&self.omega[node]).map(|(a, b)| a * b).sum()
    }

    pub fn grid_hull(&self) -> (f64, f64) {
        (self.z_grid[0], *self.z_grid.last().unwrap())
    }

    /// Line-oriented text form; floats use 17 significant digits so a reload is bit-exact.
    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ");
        writeln!(w, "slowctl-dual 1")?;
        writeln!(w, "basis_z {} {} {}", self.basis_z.n, num(self.basis_z.center), num(self.basis_z.scale))?;
        writeln!(
            w,
            "basis_y {} {} {} {} {}",
            self.basis_y.bound.tag(),
            self.basis_y.degree,
            self.basis_y.dim(),
            list(&self.basis_y.center),
            list(&self.basis_y.scale)
        )?;
        writeln!(w, "z0 {}", num(self.z0))?;
        writeln!(w, "discount {}", num(self.discount))?;
        writeln!(w, "value {}", num(self.value))?;
        writeln!(w, "max_violation {}", num(self.max_violation))?;
        writeln!(w, "iterations {}", self.iterations)?;
        writeln!(w, "converged {}", self.converged)?;
        writeln!(w, "lambda {} {}", self.lambda.len(), list(&self.lambda))?;
        writeln!(w, "z_grid {} {}", self.z_grid.len(), list(&self.z_grid))?;
        writeln!(w, "omega {} {}", self.omega.len(), self.basis_y.len())?;
        for row in &self.omega {
            writeln!(w, "{}", list(row))?;
        }
        writeln!(w, "value_history {} {}", self.value_history.len(), list(&self.value_history))?;
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut p = TextReader { lines: &lines, pos: 0 };
        let header = p.fields("slowctl-dual")?;
        if header != ["1"] {
            return Err(p.err("unsupported certificate version"));
        }
        let bz = p.fields("basis_z")?;
        let basis_z = MonomialBasisZ::new(p.usize(&bz, 0)?, p.f64(&bz, 1)?, p.f64(&bz, 2)?)
            .map_err(|e| p.err(&e.to_string()))?;
        let by = p.fields("basis_y")?;
        let bound = DegreeBound::from_tag(by.first().map(String::as_str).unwrap_or(""))
            .ok_or_else(|| p.err("unknown degree bound"))?;
        let degree = p.usize(&by, 1)?;
        let dim = p.usize(&by, 2)?;
        if by.len() != 3 + 2 * dim {
            return Err(p.err("basis_y has the wrong number of fields"));
        }
        let center = (0..dim).map(|i| p.f64(&by, 3 + i)).collect::<Result<Vec<_>>>()?;
        let scale = (0..dim).map(|i| p.f64(&by, 3 + dim + i)).collect::<Result<Vec<_>>>()?;
        let basis_y = if degree == 0 {
            MonomialBasisY { center, scale, ..MonomialBasisY::empty(dim) }
        } else {
            MonomialBasisY::new(bound, degree, center, scale).map_err(|e| p.err(&e.to_string()))?
        };
        let z0 = p.scalar("z0")?;
        let discount = p.scalar("discount")?;
        let value = p.scalar("value")?;
        let max_violation = p.scalar("max_violation")?;
        let it = p.fields("iterations")?;
        let iterations = p.usize(&it, 0)?;
        let conv = p.fields("converged")?;
        let converged = match conv.first().map(String::as_str) {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(p.err("converged must be true or false")),
        };
        let lambda = p.list("lambda")?;
        let z_grid = p.list("z_grid")?;
        let om = p.fields("omega")?;
        let (rows, cols) = (p.usize(&om, 0)?, p.usize(&om, 1)?);
        if cols != basis_y.len() || rows != z_grid.len() {
            return Err(p.err("omega shape does not match the basis and grid"));
        }
        let mut omega = Vec::with_capacity(rows);
        for _ in 0..rows {
            let f = p.raw_fields()?;
            if f.len() != cols {
                return Err(p.err("omega row has the wrong length"));
            }
            omega.push((0..cols).map(|i| p.f64(&f, i)).collect::<Result<Vec<_>>>()?);
        }
        let value_history = p.list("value_history")?;
        if lambda.len() != basis_z.n {
            return Err(Error::Parse { line: 0, message: "lambda length does not match basis_z".into() });
        }
        Ok(DualSolution {
            basis_z,
            basis_y,
            lambda,
            z_grid,
            omega,
            value,
            max_violation,
            iterations,
            converged,
            z0,
            discount,
            value_history,
        })
    }
}

struct TextReader<'a> {
    lines: &'a [String],
    pos: usize,
}

impl TextReader<'_> {
    fn err(&self, message: &str) -> Error {
        Error::Parse { line: self.pos.max(1), message: message.to_string() }
    }

    fn raw_fields(&mut self) -> Result<Vec<String>> {
        while self.pos < self.lines.len() && self.lines[self.pos].trim().is_empty() {
            self.pos += 1;
        }
        if self.pos >= self.lines.len() {
            self.pos += 1;
            return Err(self.err("unexpected end of file"));
        }
        let f = self.lines[self.pos].split_whitespace().map(str::to_string).collect();
        self.pos += 1;
        Ok(f)
    }

    fn fields(&mut self, key: &str) -> Result<Vec<String>> {
        let mut f = self.raw_fields()?;
        if f.first().map(String::as_str) != Some(key) {
            return Err(self.err(&format!("expected `{key}`")));
        }
        f.remove(0);
        Ok(f)
    }

    fn f64(&self, f: &[String], i: usize) -> Result<f64> {
        f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| self.err("expected a number"))
    }

    fn usize(&self, f: &[String], i: usize) -> Result<usize> {
        f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| self.err("expected an integer"))
    }

    fn scalar(&mut self, key: &str) -> Result<f64> {
        let f = self.fields(key)?;
        self.f64(&f, 0)
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>> {
        let f = self.fields(key)?;
        let n = self.usize(&f, 0)?;
        if f.len() != n + 1 {
            return Err(self.err(&format!("`{key}` declares {n} entries but has {}", f.len() - 1)));
        }
        (1..=n).map(|i| self.f64(&f, i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeConfig {
    pub tol: f64,
    pub max_iterations: usize,
    /// Most violated local minima added per level and round.
    pub cuts_per_level: usize,
    /// Box `|x| <= variable_box` on every variable except `t`.
    pub variable_box: f64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig { tol: 1e-6, max_iterations: 500, cuts_per_level: 4, variable_box: 1e4 }
    }
}

/// Minimizer over the control box of `r(u,y) + zeta_p h(u,y) + grad eta(y) . f(u,y)`.
///
/// `eta_dot(v)` must return `grad eta(y) . v`. For control-affine models the
/// minimizer is in closed form; otherwise `control_grid` is scanned and the
/// best point refined by golden-section search along each coordinate.
/// Ties go to the control of smallest magnitude.
pub fn hamiltonian_argmin(
    model: &ModelSpec,
    y: &[f64],
    zeta_p: f64,
    eta_dot: impl Fn(&[f64]) -> f64,
    control_grid: &[Vec<f64>],
) -> Vec<f64> {
    if let Some(ca) = model.control_affine(y) {
        return vec![affine_argmin(model, &ca, zeta_p, eta_dot(&ca.f1))];
    }
    let value = |u: &[f64]| {
        let mut f = vec![0.0; model.m];
        model.f_into(u, y, &mut f);
        model.cost(u, y) + zeta_p * model.drift(u, y)[0] + eta_dot(&f)
    };
    let mag = |u: &[f64]| u.iter().map(|x| x * x).sum::<f64>();
    let mut best = control_grid[0].clone();
    let mut best_v = value(&best);
    for u in &control_grid[1..] {
        let v = value(u);
        if v < best_v - 1e-14 || (v <= best_v + 1e-14 && mag(u) < mag(&best)) {
            best = u.clone();
            best_v = v;
        }
    }
    // golden-section refinement per coordinate on the neighbouring grid cell
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let cells = (control_grid.len() as f64).powf(1.0 / model.du as f64).round().max(2.0) - 1.0;
    for d in 0..model.du {
        let width = (model.u_hi[d] - model.u_lo[d]) / cells;
        let (mut a, mut b) = ((best[d] - width).max(model.u_lo[d]), (best[d] + width).min(model.u_hi[d]));
        let base = best.clone();
        let at = |x: f64| {
            let mut u = base.clone();
            u[d] = x;
            value(&u)
        };
        for _ in 0..60 {
            let c = b - gr * (b - a);
            let e = a + gr * (b - a);
            if at(c) < at(e) {
                b = e;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        if at(x) < best_v - 1e-14 {
            best[d] = x;
            best_v = at(x);
        }
    }
    best
}

fn affine_argmin(model: &ModelSpec, ca: &ControlAffine, zeta_p: f64, eta_f1: f64) -> f64 {
    let (lo, hi) = (model.u_lo[0], model.u_hi[0]);
    let beta = ca.r1 + zeta_p * ca.h1[0] + eta_f1;
    let alpha = ca.r2;
    if alpha > 0.0 {
        return (-beta / (2.0 * alpha)).clamp(lo, hi);
    }
    let q = |u: f64| alpha * u * u + beta * u;
    let (vl, vh) = (q(lo), q(hi));
    if vl < vh {
        lo
    } else if vh < vl {
        hi
    } else if lo.abs() <= hi.abs() {
        lo
    } else {
        hi
    }
}

/// Precomputed per-node quantities for violation scans.
struct NodeData {
    y: Vec<f64>,
    ca: ControlAffine,
    /// `grad phi(y) . f0` and `grad phi(y) . f1`.
    g0: Vec<f64>,
    g1: Vec<f64>,
}

struct Level {
    z: f64,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    nodes: Vec<NodeData>,
}

struct Cut {
    level: usize,
    u: Vec<f64>,
    y: Vec<f64>,
}

struct Layout {
    n: usize,
    m: usize,
}

impl Layout {
    fn vars(&self, levels: usize) -> usize {
        1 + self.n + levels * self.m
    }
    fn omega(&self, k: usize) -> usize {
        1 + self.n + k * self.m
    }
}

/// Runs the exchange loop; returns the certificate or an
/// [`Error::ExchangeNotConverged`] carrying the last one.
#[allow(clippy::too_many_arguments)]
pub fn solve_dual_exchange(
    problem: &ProblemSpec,
    basis_z: &MonomialBasisZ,
    basis_y: &MonomialBasisY,
    z_grid: &[f64],
    control_grid: &[Vec<f64>],
    orbits: &[PeriodicOrbit],
    cfg: &ExchangeConfig,
) -> Result<DualSolution> {
    let model = &problem.model;
    if z_grid.is_empty() {
        return Err(Error::contract("empty z grid"));
    }
    if orbits.len() != z_grid.len() {
        return Err(Error::contract("one orbit per grid level is required"));
    }
    if z_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("z grid must be strictly ascending"));
    }
    let z0 = problem.z0[0];
    let (hull_lo, hull_hi) = problem.observable_hull();
    if z_grid[0] < hull_lo - 1e-12 || *z_grid.last().unwrap() > hull_hi + 1e-12 {
        return Err(Error::contract("z grid leaves the observable box"));
    }
    if z0 < z_grid[0] - 1e-12 || z0 > *z_grid.last().unwrap() + 1e-12 {
        return Err(Error::contract("z grid must cover z0"));
    }
    if control_grid.is_empty() {
        return Err(Error::contract("empty control grid"));
    }
    if !model.u_lo.iter().zip(&model.u_hi).all(|(a, b)| a == b) && control_grid.len() < 2 {
        return Err(Error::contract("control grid must cover the control box"));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::contract("tolerance must be positive"));
    }
    for (o, &z) in orbits.iter().zip(z_grid) {
        if (o.level[0] - z).abs() > ROW_LEVEL_TOL {
            return Err(Error::contract(format!("orbit level {} does not match grid level {z}", o.level[0])));
        }
    }
    let c = problem.discount;
    let psi0 = basis_z.values(z0);
    let lay = Layout { n: basis_z.n, m: basis_y.len() };
    let k_levels = z_grid.len();
    let nvar = lay.vars(k_levels);

    let levels: Vec<Level> = z_grid
        .par_iter()
        .zip(orbits.par_iter())
        .map(|(&z, orbit)| {
            let nodes = orbit
                .nodes
                .iter()
                .map(|y| {
                    let ca = model.control_affine(y).unwrap_or_else(|| ControlAffine {
                        f0: vec![0.0; model.m],
                        f1: vec![0.0; model.m],
                        h0: vec![0.0; model.k],
                        h1: vec![0.0; model.k],
                        r2: 0.0,
                        r1: 0.0,
                        r0: 0.0,
                    });
                    let g0 = basis_y.grad_dot(y, &ca.f0);
                    let g1 = basis_y.grad_dot(y, &ca.f1);
                    NodeData { y: y.clone(), ca, g0, g1 }
                })
                .collect();
            Level { z, psi: basis_z.values(z), dpsi: basis_z.derivatives(z), nodes }
        })
        .collect();
    let affine = model.control_affine(&orbits[0].nodes[0]).is_some();

    // dual standard form: row 0 <-> t, row v <-> x_v
    let mut b = vec![0.0; nvar];
    b[0] = 1.0;
    let mut lp = Simplex::new(b);
    for v in 1..nvar {
        lp.add_column(SparseColumn::new([(v, 1.0)]), cfg.variable_box);
        lp.add_column(SparseColumn::new([(v, -1.0)]), cfg.variable_box);
    }

    let add_cut = |lp: &mut Simplex, cut: &Cut| -> Result<()> {
        let lv = &levels[cut.level];
        let row = constraint_row(model, basis_z, basis_y, lv.z, &cut.u, &cut.y, z0, c)?;
        let mut entries = Vec::with_capacity(1 + lay.n + lay.m);
        entries.push((0, 1.0));
        entries.extend(row.lambda.iter().enumerate().map(|(i, a)| (1 + i, -a)));
        let base = lay.omega(cut.level);
        entries.extend(row.omega.iter().enumerate().map(|(j, a)| (base + j, -a)));
        lp.add_column(SparseColumn::new(entries), row.constant);
        Ok(())
    };

    // initial working set: extreme-y1 nodes at the control-box corners
    let corners = crate::models::control_corners(&model.u_lo, &model.u_hi);
    for (k, lv) in levels.iter().enumerate() {
        let by_y1 = |a: &&NodeData, b: &&NodeData| a.y[0].partial_cmp(&b.y[0]).unwrap();
        let hi = lv.nodes.iter().max_by(by_y1).unwrap();
        let lo = lv.nodes.iter().min_by(by_y1).unwrap();
        for node in [hi, lo] {
            for u in &corners {
                add_cut(&mut lp, &Cut { level: k, u: u.clone(), y: node.y.clone() })?;
            }
        }
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        match lp.solve()? {
            SimplexStatus::Optimal => {}
            s => return Err(Error::Lp(format!("working LP is {s:?}"))),
        }
        let pi = lp.duals();
        let t = pi[0];
        let lambda = pi[1..=lay.n].to_vec();
        let omega: Vec<Vec<f64>> = (0..k_levels).map(|k| pi[lay.omega(k)..lay.omega(k) + lay.m].to_vec()).collect();
        history.push(t);

        // violation scan over every level and orbit node
        let scans: Vec<Vec<(f64, Cut)>> = levels
            .par_iter()
            .enumerate()
            .map(|(k, lv)| {
                let zeta_p: f64 = lv.dpsi.iter().zip(&lambda).map(|(a, b)| a * b).sum();
                let shift: f64 = (0..lay.n).map(|i| c * (psi0[i] - lv.psi[i]) * lambda[i]).sum();
                let om = &omega[k];
                let dot = |g: &[f64]| g.iter().zip(om).map(|(a, b)| a * b).sum::<f64>();
                let res: Vec<(f64, Vec<f64>)> = lv
                    .nodes
                    .iter()
                    .map(|nd| {
                        let u = if affine {
                            vec![affine_argmin(model, &nd.ca, zeta_p, dot(&nd.g1))]
                        } else {
                            let eta = |v: &[f64]| dot(&basis_y.grad_dot(&nd.y, v));
                            hamiltonian_argmin(model, &nd.y, zeta_p, eta, control_grid)
                        };
                        let mut f = vec![0.0; model.m];
                        model.f_into(&u, &nd.y, &mut f);
                        let eta_f = if affine {
                            dot(&nd.g0) + u[0] * dot(&nd.g1)
                        } else {
                            dot(&basis_y.grad_dot(&nd.y, &f))
                        };
                        let r = model.cost(&u, &nd.y) + zeta_p * model.drift(&u, &nd.y)[0] + eta_f + shift - t;
                        (r, u)
                    })
                    .collect();
                let n = res.len();
                let mut minima: Vec<(f64, Cut)> = (0..n)
                    .filter(|&i| {
                        let r = res[i].0;
                        r < -cfg.tol && r <= res[(i + n - 1) % n].0 && r < res[(i + 1) % n].0
                    })
                    .map(|i| (res[i].0, Cut { level: k, u: res[i].1.clone(), y: lv.nodes[i].y.clone() }))
                    .collect();
                if minima.is_empty() {
                    // a flat violated stretch has no strict minimum; take its worst node
                    if let Some(i) = (0..n).filter(|&i| res[i].0 < -cfg.tol).min_by(|&a, &b| res[a].0.partial_cmp(&res[b].0).unwrap()) {
                        minima.push((res[i].0, Cut { level: k, u: res[i].1.clone(), y: lv.nodes[i].y.clone() }));
                    }
                }
                minima.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                minima.truncate(cfg.cuts_per_level);
                minima
            })
            .collect();
        let max_violation = scans.iter().flatten().map(|(r, _)| -r).fold(0.0f64, f64::max);
        let solution = DualSolution {
            basis_z: basis_z.clone(),
            basis_y: basis_y.clone(),
            lambda,
            z_grid: z_grid.to_vec(),
            omega,
            value: t,
            max_violation,
            iterations,
            converged: max_violation <= cfg.tol,
            z0,
            discount: c,
            value_history: history.clone(),
        };
        if solution.converged {
            return Ok(solution);
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::ExchangeNotConverged { iterations, max_violation, best: Box::new(solution) });
        }
        for (_, cut) in scans.iter().flatten() {
            add_cut(&mut lp, cut)?;
        }
    }
}

/// `zeta` and `zeta'` on a grid, with the flag `zeta' < 0` everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateDiagnostics {
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    pub dzeta: Vec<f64>,
    pub monotone: bool,
}

pub fn certificate_diagnostics(dual: &DualSolution, z_grid: &[f64]) -> CertificateDiagnostics {
    let zeta: Vec<f64> = z_grid.iter().map(|&z| dual.zeta(z)).collect();
    let dzeta: Vec<f64> = z_grid.iter().map(|&z| dual.zeta_prime(z)).collect();
    let monotone = !dzeta.is_empty() && dzeta.iter().all(|&d| d < 0.0);
    CertificateDiagnostics { z: z_grid.to_vec(), zeta, dzeta, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{orbits_for_grid, OrbitConfig};

    fn lv() -> ModelSpec {
        ModelSpec::lotka_volterra_example2()
    }

    #[test]
    fn row_at_zero_control() {
        let m = lv();
        let bz = MonomialBasisZ::raw(1).unwrap();
        let by = MonomialBasisY::empty(2);
        let z = -2.5;
        let y = crate::orbits::seed_point_for_level(&m, &[z]).unwrap();
        let row = constraint_row(&m, &bz, &by, z, &[0.0], &y, -3.0, 0.1).unwrap();
        assert!((row.constant - (z + 2.05f64).powi(2)).abs() < 1e-9);
        assert!((row.lambda[0] - 0.1 * (-3.0 - z)).abs() < 1e-12);
        assert_eq!(row.t, -1.0);
        assert!(row.omega.is_empty());
    }

    #[test]
    fn row_at_unit_control() {
        let m = lv();
        let bz = MonomialBasisZ::raw(1).unwrap();
        let by = MonomialBasisY::empty(2);
        // y = (2, y2) with y2 > 1 on some level
        let y = [2.0, 2.5];
        let z = m.observable1(&y);
        let row = constraint_row(&m, &bz, &by, z, &[1.0], &y, -3.0, 0.1).unwrap();
        assert!((row.lambda[0] - (1.0 + 0.1 * (-3.0 - z))).abs() < 1e-12);
    }

    #[test]
    fn row_rejects_off_level_state() {
        let m = lv();
        let bz = MonomialBasisZ::raw(1).unwrap();
        let by = MonomialBasisY::empty(2);
        assert!(matches!(
            constraint_row(&m, &bz, &by, -2.5, &[0.0], &[1.0, 2.0], -3.0, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_test_function_is_excluded() {
        let by = MonomialBasisY::new(DegreeBound::TotalDegree, 2, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(by.exponents.iter().all(|e| e.iter().sum::<u32>() >= 1));
        // a state gradient of zero field gives a zero row block
        assert!(by.grad_dot(&[0.3, 0.2], &[0.0, 0.0]).iter().all(|&v| v == 0.0));
    }

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn scalar_problem_matches_parameter_scan() {
        // u pinned to 0: rows reduce to (z + 2.05)^2 + lambda C (z0 - z) >= t
        let model = lv().with_control_box(vec![0.0], vec![0.0]).unwrap();
        let p = ProblemSpec::new(model.clone(), 0.1, 0.1, vec![0.8916, 3.1370], None, vec![-3.0], vec![-2.05], None)
            .unwrap();
        let (lo, hi) = p.observable_hull();
        let zg = grid(20, lo, hi);
        let cfg = OrbitConfig { nodes: 64, ..Default::default() };
        let orbits = orbits_for_grid(&model, &zg, &cfg).unwrap();
        let bz = MonomialBasisZ::raw(1).unwrap();
        let by = MonomialBasisY::empty(2);
        let sol = solve_dual_exchange(&p, &bz, &by, &zg, &[vec![0.0]], &orbits, &ExchangeConfig::default()).unwrap();
        assert!(sol.converged);
        let z0 = p.z0[0];
        let scan = (-100_000..=100_000)
            .map(|i| {
                let l = i as f64 * 1e-3;
                zg.iter().map(|&z| (z + 2.05).powi(2) + l * 0.1 * (z0 - z)).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.value - scan).abs() < 1e-6, "{} vs {scan}", sol.value);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let p = ProblemSpec::example2(0.1);
        let bz = MonomialBasisZ::raw(1).unwrap();
        let by = MonomialBasisY::empty(2);
        let r = solve_dual_exchange(&p, &bz, &by, &[], &[vec![0.0]], &[], &ExchangeConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    fn toy_dual(lambda: Vec<f64>) -> DualSolution {
        DualSolution {
            basis_z: MonomialBasisZ::raw(lambda.len()).unwrap(),
            basis_y: MonomialBasisY::empty(2),
            lambda,
            z_grid: grid(5, -3.0, -2.05),
            omega: vec![Vec::new(); 5],
            value: 0.0,
            max_violation: 0.0,
            iterations: 1,
            converged: true,
            z0: -3.0,
            discount: 0.1,
            value_history: vec![0.0],
        }
    }

    #[test]
    fn diagnostics_flags() {
        let mut l = vec![0.0; 10];
        l[0] = -1.0;
        let d = certificate_diagnostics(&toy_dual(l), &grid(5, -3.0, -2.05));
        assert!(d.dzeta.iter().all(|&v| (v + 1.0).abs() < 1e-15));
        assert!(d.monotone);
        let d = certificate_diagnostics(&toy_dual(vec![0.0; 10]), &grid(5, -3.0, -2.05));
        assert!(d.dzeta.iter().all(|&v| v == 0.0));
        assert!(!d.monotone);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut d = toy_dual(vec![0.1, -1.0 / 3.0, std::f64::consts::E]);
        d.basis_y = MonomialBasisY::new(DegreeBound::TotalDegree, 2, vec![1.1, 1.7], vec![0.9, 1.3]).unwrap();
        d.omega = (0..5).map(|k| (0..5).map(|j| (k * 5 + j) as f64 / 7.0).collect()).collect();
        d.value = 0.1400123456789;
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        let back = DualSolution::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn truncated_text_reports_line() {
        let mut buf = Vec::new();
        toy_dual(vec![1.0]).write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        match DualSolution::read_text(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert!(line >= 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn closed_form_matches_grid_search() {
        let m = lv();
        let y = [1.8, 0.7];
        let grid: Vec<Vec<f64>> = (0..=2000).map(|i| vec![i as f64 / 2000.0]).collect();
        for zp in [-3.0, -0.5, 0.0, 0.4] {
            let u = hamiltonian_argmin(&m, &y, zp, |_| 0.0, &grid)[0];
            let val = |u: f64| m.cost(&[u], &y) + zp * m.drift(&[u], &y)[0];
            let best = grid.iter().map(|g| val(g[0])).fold(f64::INFINITY, f64::min);
            assert!(val(u) <= best + 1e-12);
        }
    }
}
