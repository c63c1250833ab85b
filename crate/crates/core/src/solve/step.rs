//! One convex improvement step around a feasible point of the storage or
//! barrier inequalities. The zero step is always feasible, and the step is
//! accepted only if the exactly recomputed objective improves.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::conic::{AffineExpr, ConicBackend, ConicProgram, PsdBlock, SolveStatus};
use crate::certify::{BarrierProblem, BarrierVars, StorageProblem, StorageVars};
use crate::cpa::{simplex_gradient, CpaError};
use crate::mesh::Triangulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Maximize the storage margin `b1`.
    MaxB1,
    /// Minimize the squared gain bound.
    MinGamma,
    /// Maximize the barrier margin `b2`.
    MaxB2,
    /// Maximize the admissible input amplitude.
    MaxUhat,
}

impl Objective {
    pub fn tag(self) -> &'static str {
        match self {
            Objective::MaxB1 => "-b1",
            Objective::MinGamma => "gamma",
            Objective::MaxB2 => "-b2",
            Objective::MaxUhat => "-uhat",
        }
    }

    pub fn is_margin(self) -> bool {
        matches!(self, Objective::MaxB1 | Objective::MaxB2)
    }
}

/// Safeguards shared by every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSettings {
    /// Lower bound kept on a positive margin while optimizing gain or input size.
    pub b_floor: f64,
    pub b_cap: f64,
    pub gamma_min: f64,
    pub uhat_cap: f64,
    pub w_floor: f64,
    /// Use `||G G^T||_inf / 2` alone as the coupling weight, omitting the
    /// interpolation remainder (does not imply the vertex inequalities).
    pub literal_coupling: bool,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings {
            b_floor: 1e-4,
            b_cap: 1e3,
            gamma_min: 1e-6,
            uhat_cap: 1e3,
            w_floor: 1e-6,
            literal_coupling: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult<V> {
    pub vars: V,
    pub status: SolveStatus,
    pub accepted: bool,
}

pub fn storage_objective(vars: &StorageVars, obj: Objective) -> f64 {
    match obj {
        Objective::MinGamma => vars.gamma,
        _ => -vars.b1,
    }
}

pub fn barrier_objective(vars: &BarrierVars, obj: Objective) -> f64 {
    match obj {
        Objective::MaxUhat => -vars.uhat,
        _ => -vars.b2,
    }
}

/// Variables for the vertex perturbations and the gradient perturbation of each simplex.
struct VertexVars {
    index: HashMap<usize, usize>,
}

impl VertexVars {
    fn new(p: &mut ConicProgram, vertices: &BTreeSet<usize>) -> Self {
        let index = vertices.iter().map(|&v| (v, p.add_var())).collect();
        VertexVars { index }
    }

    /// Components of `X_i^{-1} (dV_j - dV_0)_j` as affine expressions.
    fn gradient(&self, mesh: &Triangulation, i: usize) -> Result<Vec<AffineExpr>, CpaError> {
        let s = mesh.simplex(i);
        let inv = s.x_inv.as_ref().ok_or(CpaError::Degenerate(i))?;
        let n = mesh.dim();
        Ok((0..n)
            .map(|k| {
                let mut e = AffineExpr::default();
                let mut total = 0.0;
                for j in 1..=n {
                    let c = inv[(k, j - 1)];
                    e = e.term(self.index[&s.vertices[j]], c);
                    total += c;
                }
                e.term(self.index[&s.vertices[0]], -total)
            })
            .collect())
    }
}

fn dot_expr(f: &[f64], g: &[AffineExpr]) -> AffineExpr {
    f.iter().zip(g).fold(AffineExpr::default(), |acc, (c, e)| acc.add(e, *c))
}

/// Adds `|g + dg| <= l + dl` componentwise; returns the `dl` variables.
fn gradient_bounds(
    p: &mut ConicProgram,
    g: &[f64],
    dg: &[AffineExpr],
    l: &[f64],
    trust: f64,
) -> Vec<usize> {
    let dl: Vec<usize> = p.add_vars(g.len()).collect();
    for k in 0..g.len() {
        let slack = AffineExpr::var(dl[k]).plus_const(l[k]);
        p.ge(slack.clone().add(&dg[k], -1.0).plus_const(-g[k]));
        p.ge(slack.add(&dg[k], 1.0).plus_const(g[k]));
        p.bound(dl[k], -trust.max(l[k]), trust);
    }
    dl
}

/// `[[top, k s], [k s, -gamma]]` with `k = sqrt(e)`. For `gamma > 0` it is
/// negative semidefinite iff `top + e s^2 / gamma <= 0`.
pub fn coupling_block(top: AffineExpr, s: &AffineExpr, e: f64, gamma: &AffineExpr) -> PsdBlock {
    let off = s.scaled(e.sqrt());
    let corner = gamma.scaled(-1.0);
    PsdBlock::new(2, |r, c| match (r, c) {
        (0, 0) => top.clone(),
        (1, 0) => off.clone(),
        _ => corner.clone(),
    })
}

/// `[[top, s, q], [s, -2, 0], [q, 0, -2]]`, negative semidefinite iff
/// `top + (s^2 + q^2) / 2 <= 0`. Since `s q <= (s^2 + q^2) / 2`, this
/// implies `top + s q <= 0`.
pub fn cross_term_block(top: AffineExpr, s: &AffineExpr, q: &AffineExpr) -> PsdBlock {
    PsdBlock::new(3, |r, c| match (r, c) {
        (0, 0) => top.clone(),
        (1, 0) => s.clone(),
        (2, 0) => q.clone(),
        (1, 1) | (2, 2) => AffineExpr::constant(-2.0),
        _ => AffineExpr::constant(0.0),
    })
}

pub fn step_hj(
    problem: &StorageProblem,
    vars: &StorageVars,
    obj: Objective,
    trust: f64,
    settings: &StepSettings,
    backend: &dyn ConicBackend,
) -> Result<StepResult<StorageVars>, CpaError> {
    let mesh = &problem.mesh;
    let n = mesh.dim();
    let mut p = ConicProgram::new();
    let vertices = problem.region.vertices(mesh);
    let dv = VertexVars::new(&mut p, &vertices);
    for &v in &vertices {
        let var = dv.index[&v];
        p.bound(var, -trust, trust);
        p.ge(AffineExpr::var(var).plus_const(vars.values[v]));
    }
    let db = p.add_var();
    let dgamma = p.add_var();
    let b_scale = trust * vars.b1.abs().max(1.0);
    p.bound(db, -b_scale, b_scale);
    p.le(AffineExpr::var(db).plus_const(vars.b1 - settings.b_cap));
    if !obj.is_margin() {
        p.ge(AffineExpr::var(db).plus_const(vars.b1 - settings.b_floor.min(vars.b1)));
    }
    p.bound(
        dgamma,
        settings.gamma_min.min(vars.gamma) - vars.gamma,
        trust * vars.gamma.max(1.0),
    );

    for &i in problem.region.ids() {
        let g = simplex_gradient(mesh, i, &vars.values)?;
        let dg = dv.gradient(mesh, i)?;
        let dl = gradient_bounds(&mut p, g.as_slice(), &dg, &vars.l[i], trust);
        let sum_l: f64 = vars.l[i].iter().sum();
        let sum_dl = dl.iter().fold(AffineExpr::default(), |e, &v| e.term(v, 1.0));
        let b = problem.bounds.get(i);
        for j in 0..=n {
            if !problem.is_active(i, j) {
                continue;
            }
            let v = mesh.simplex(i).vertices[j];
            let f = &problem.data.f[v];
            let c = b.c[j];
            let fg: f64 = f.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            // phi + b1 + db
            let top = dot_expr(f, &dg)
                .add(&sum_dl, b.beta_f * c)
                .plus_const(fg + sum_l * b.beta_f * c + 0.5 * problem.data.hh[v] + 0.5 * b.beta_hh * c)
                .plus_const(vars.b1)
                .term(db, 1.0);
            let e = if settings.literal_coupling {
                problem.data.gbar[v] / 2.0
            } else {
                (problem.data.gbar[v] + b.beta_gbar * c) / 2.0
            };
            let s = sum_dl.clone().plus_const(sum_l);
            let gamma = AffineExpr::constant(vars.gamma).term(dgamma, 1.0);
            p.nsd(coupling_block(top, &s, e, &gamma));
        }
    }
    p.minimize(match obj {
        Objective::MinGamma => AffineExpr::var(dgamma),
        _ => AffineExpr::var(db).scaled(-1.0),
    });

    let sol = backend.solve(&p);
    if sol.status != SolveStatus::Optimal {
        return Ok(StepResult {
            vars: vars.clone(),
            status: sol.status,
            accepted: false,
        });
    }
    let mut values = vars.values.clone();
    for (&v, &var) in &dv.index {
        values[v] = (values[v] + sol.x[var]).max(0.0);
    }
    let gamma = (vars.gamma + sol.x[dgamma]).max(settings.gamma_min.min(vars.gamma));
    let next = problem.tighten(values, gamma)?;
    let improved = storage_objective(&next, obj) < storage_objective(vars, obj);
    let keeps_margin = obj.is_margin() || next.b1 > 0.0;
    let accepted = improved && keeps_margin && next.b1.is_finite();
    Ok(StepResult {
        vars: if accepted { next } else { vars.clone() },
        status: sol.status,
        accepted,
    })
}

pub fn step_barrier(
    problem: &BarrierProblem,
    vars: &BarrierVars,
    obj: Objective,
    trust: f64,
    settings: &StepSettings,
    backend: &dyn ConicBackend,
) -> Result<StepResult<BarrierVars>, CpaError> {
    let mesh = &problem.mesh;
    let n = mesh.dim();
    let mut p = ConicProgram::new();
    let vertices = problem.region.vertices(mesh);
    let dw = VertexVars::new(&mut p, &vertices);
    for &v in &vertices {
        let var = dw.index[&v];
        p.bound(var, -trust, trust);
        let floor = settings.w_floor.min(vars.values[v]);
        p.ge(AffineExpr::var(var).plus_const(vars.values[v] - floor));
    }
    let db = p.add_var();
    let du = p.add_var();
    let b_scale = trust * vars.b2.abs().max(1.0);
    p.bound(db, -b_scale, b_scale);
    p.le(AffineExpr::var(db).plus_const(vars.b2 - settings.b_cap));
    if !obj.is_margin() {
        p.ge(AffineExpr::var(db).plus_const(vars.b2 - settings.b_floor.min(vars.b2)));
    }
    let u_scale = trust * vars.uhat.max(1e-3);
    p.bound(du, -u_scale.min(vars.uhat - vars.uhat * 1e-3), u_scale);
    p.le(AffineExpr::var(du).plus_const(vars.uhat - settings.uhat_cap.max(vars.uhat)));

    // keep the inner set strictly below every outer boundary value when it already is
    let level_ok = problem.level(&vars.values).is_ok();
    if level_ok {
        let t = p.add_var();
        let keep = 1.0 - crate::cpa::LEVEL_MARGIN;
        for v in problem.inner.vertices(mesh) {
            p.ge(AffineExpr::var(t).plus_const(-vars.values[v]).term(dw.index[&v], -1.0));
        }
        for v in problem.region.boundary_vertices(mesh) {
            p.ge(AffineExpr::constant(keep * vars.values[v]).term(dw.index[&v], keep).term(t, -1.0));
        }
    }

    let shell: BTreeSet<usize> = problem.shell().into_iter().collect();
    for &i in problem.region.ids() {
        let g = simplex_gradient(mesh, i, &vars.values)?;
        let dg = dw.gradient(mesh, i)?;
        let dl = gradient_bounds(&mut p, g.as_slice(), &dg, &vars.l[i], trust);
        if !shell.contains(&i) {
            continue;
        }
        let sum_l: f64 = vars.l[i].iter().sum();
        let sum_dl = dl.iter().fold(AffineExpr::default(), |e, &v| e.term(v, 1.0));
        let b = problem.bounds.get(i);
        for j in 0..=n {
            let v = mesh.simplex(i).vertices[j];
            let f = &problem.data.f[v];
            let rate = b.beta_f * b.c[j] + b.ghat * vars.uhat;
            let fg: f64 = f.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let top = dot_expr(f, &dg)
                .add(&sum_dl, rate)
                .term(du, sum_l * b.ghat)
                .plus_const(fg + sum_l * rate + vars.b2)
                .term(db, 1.0);
            p.nsd(cross_term_block(top, &sum_dl, &AffineExpr::var(du).scaled(b.ghat)));
        }
    }
    p.minimize(match obj {
        Objective::MaxUhat => AffineExpr::var(du).scaled(-1.0),
        _ => AffineExpr::var(db).scaled(-1.0),
    });

    let sol = backend.solve(&p);
    if sol.status != SolveStatus::Optimal {
        return Ok(StepResult {
            vars: vars.clone(),
            status: sol.status,
            accepted: false,
        });
    }
    let mut values = vars.values.clone();
    for (&v, &var) in &dw.index {
        values[v] += sol.x[var];
    }
    let uhat = vars.uhat + sol.x[du];
    let valid = uhat > 0.0 && values.iter().all(|&w| w > 0.0);
    if !valid {
        return Ok(StepResult {
            vars: vars.clone(),
            status: sol.status,
            accepted: false,
        });
    }
    let next = problem.tighten(values, uhat)?;
    let improved = barrier_objective(&next, obj) < barrier_objective(vars, obj);
    let keeps_margin = obj.is_margin() || next.b2 > 0.0;
    let keeps_level = !level_ok || problem.level(&next.values).is_ok();
    let accepted = improved && keeps_margin && keeps_level;
    Ok(StepResult {
        vars: if accepted { next } else { vars.clone() },
        status: sol.status,
        accepted,
    })
}
