//! Repeated steps with trust-region control and stagnation detection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::conic::{ConicBackend, SolveStatus};
use super::step::{
    barrier_objective, step_barrier, step_hj, storage_objective, Objective, StepResult, StepSettings,
};
use crate::certify::{BarrierProblem, BarrierVars, StorageProblem, StorageVars};
use crate::cpa::CpaError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseLimits {
    pub max_iter: usize,
    /// Consecutive steps with small relative improvement that end a phase.
    pub stall_steps: usize,
    pub rel_tol: f64,
    pub trust_init: f64,
    pub trust_max: f64,
    pub trust_min: f64,
}

impl Default for PhaseLimits {
    fn default() -> Self {
        PhaseLimits {
            max_iter: 50,
            stall_steps: 3,
            rel_tol: 1e-3,
            trust_init: 10.0,
            trust_max: 100.0,
            trust_min: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseEnd {
    MarginReached,
    Stagnated,
    Budget,
    SolverFailure,
}

/// One row of the iteration trace. `margin` is `b1` or `b2`; `scalar` is
/// `gamma` or `uhat`, depending on the phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub phase: String,
    pub objective_tag: String,
    #[serde(rename = "J")]
    pub j: f64,
    pub margin: f64,
    pub scalar: f64,
    pub solver_status: String,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// The pieces of a problem the phase loop needs.
pub trait Stepper {
    type Vars: Clone;
    fn objective(&self, vars: &Self::Vars, obj: Objective) -> f64;
    fn margin(&self, vars: &Self::Vars) -> f64;
    fn scalar(&self, vars: &Self::Vars) -> f64;
    fn step(
        &self,
        vars: &Self::Vars,
        obj: Objective,
        trust: f64,
        settings: &StepSettings,
        backend: &dyn ConicBackend,
    ) -> Result<StepResult<Self::Vars>, CpaError>;
}

impl Stepper for StorageProblem {
    type Vars = StorageVars;
    fn objective(&self, vars: &StorageVars, obj: Objective) -> f64 {
        storage_objective(vars, obj)
    }
    fn margin(&self, vars: &StorageVars) -> f64 {
        vars.b1
    }
    fn scalar(&self, vars: &StorageVars) -> f64 {
        vars.gamma
    }
    fn step(
        &self,
        vars: &StorageVars,
        obj: Objective,
        trust: f64,
        settings: &StepSettings,
        backend: &dyn ConicBackend,
    ) -> Result<StepResult<StorageVars>, CpaError> {
        step_hj(self, vars, obj, trust, settings, backend)
    }
}

impl Stepper for BarrierProblem {
    type Vars = BarrierVars;
    fn objective(&self, vars: &BarrierVars, obj: Objective) -> f64 {
        barrier_objective(vars, obj)
    }
    fn margin(&self, vars: &BarrierVars) -> f64 {
        vars.b2
    }
    fn scalar(&self, vars: &BarrierVars) -> f64 {
        vars.uhat
    }
    fn step(
        &self,
        vars: &BarrierVars,
        obj: Objective,
        trust: f64,
        settings: &StepSettings,
        backend: &dyn ConicBackend,
    ) -> Result<StepResult<BarrierVars>, CpaError> {
        step_barrier(self, vars, obj, trust, settings, backend)
    }
}

/// Runs steps until the margin turns positive (margin objectives), the
/// objective stagnates, or the budget is spent. Appends to `history`,
/// starting with a record of the initial point.
pub fn run_phase<P: Stepper>(
    problem: &P,
    mut vars: P::Vars,
    obj: Objective,
    phase: &str,
    limits: &PhaseLimits,
    settings: &StepSettings,
    backend: &dyn ConicBackend,
    history: &mut Vec<HistoryRecord>,
) -> Result<(P::Vars, PhaseEnd), CpaError> {
    let record = |iter: usize, vars: &P::Vars, status: &str, wall_ms: f64| HistoryRecord {
        iter,
        phase: phase.to_string(),
        objective_tag: obj.tag().to_string(),
        j: problem.objective(vars, obj),
        margin: problem.margin(vars),
        scalar: problem.scalar(vars),
        solver_status: status.to_string(),
        wall_ms,
    };
    history.push(record(0, &vars, "start", 0.0));
    let mut trust = limits.trust_init;
    let mut stall = 0;
    for iter in 1..=limits.max_iter {
        if obj.is_margin() && problem.margin(&vars) > 0.0 {
            return Ok((vars, PhaseEnd::MarginReached));
        }
        let start = Instant::now();
        let before = problem.objective(&vars, obj);
        let res = problem.step(&vars, obj, trust, settings, backend)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let status = match (res.status, res.accepted) {
            (SolveStatus::Optimal, true) => "accepted",
            (SolveStatus::Optimal, false) => "rejected",
            (s, _) => s.as_str(),
        };
        if res.status == SolveStatus::Optimal {
            if res.accepted {
                let after = problem.objective(&res.vars, obj);
                let rel = (before - after) / before.abs().max(1e-9);
                stall = if rel < limits.rel_tol { stall + 1 } else { 0 };
                vars = res.vars;
                trust = (2.0 * trust).min(limits.trust_max);
            } else {
                stall += 1;
                trust *= 0.5;
            }
        } else {
            trust *= 0.5;
        }
        history.push(record(iter, &vars, status, wall_ms));
        if trust < limits.trust_min {
            return Ok((vars, PhaseEnd::SolverFailure));
        }
        if stall >= limits.stall_steps {
            let end = if obj.is_margin() && problem.margin(&vars) > 0.0 {
                PhaseEnd::MarginReached
            } else {
                PhaseEnd::Stagnated
            };
            return Ok((vars, end));
        }
    }
    let end = if obj.is_margin() && problem.margin(&vars) > 0.0 {
        PhaseEnd::MarginReached
    } else {
        PhaseEnd::Budget
    };
    Ok((vars, end))
}
