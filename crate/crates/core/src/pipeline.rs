//! The full analysis: storage margin, gain minimization, barrier margin,
//! input-amplitude maximization, invariant level, and the containment check.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsError, MeshBounds, NormKind};
use crate::certify::{
    max_feasible_subtriangulation, origin_star, BarrierProblem, BarrierVars, PairValue, StorageProblem,
    StorageVars, VertexData,
};
use crate::cpa::{CpaError, CpaFunction};
use crate::expr::{EvalError, SystemModel};
use crate::mesh::{split_lines, tensor_triangulate, uniform_lines, MeshError, Region, Triangulation};
use crate::solve::init::{init_barrier_direct, init_barrier_lqr, init_storage_direct, init_storage_kyp, BARRIER_OFFSET};
use crate::solve::{
    run_phase, BarrierInit, ConicBackend, HistoryRecord, InitBranch, Objective, PhaseLimits, StepSettings,
    StorageInit,
};

/// An axis-aligned box with a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    #[serde(rename = "box")]
    pub extents: Vec<[f64; 2]>,
    pub grid: Vec<usize>,
    /// Sub-box, on grid lines, in which the grid spacing is halved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_box: Option<Vec<[f64; 2]>>,
    /// Cells per half-width of a fan around the origin (0 for none), counted
    /// after halving.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fan: usize,
}

fn is_zero(k: &usize) -> bool {
    *k == 0
}

impl GridBox {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.extents.iter().map(|e| (e[0], e[1])).collect()
    }

    pub fn triangulate(&self) -> Result<Triangulation, MeshError> {
        let mut lines = uniform_lines(&self.pairs(), &self.grid)?;
        if let Some(fine) = &self.fine_box {
            let within: Vec<(f64, f64)> = fine.iter().map(|e| (e[0], e[1])).collect();
            lines = split_lines(&lines, &within);
        }
        tensor_triangulate(&lines, self.fan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageConfig {
    #[serde(flatten)]
    pub domain: GridBox,
    #[serde(default = "default_storage_init")]
    pub init: StorageInit,
    /// Starting gain for the direct initialization.
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    #[serde(flatten)]
    pub domain: GridBox,
    /// Inner set; its faces must lie on grid lines.
    pub inner: Vec<[f64; 2]>,
    #[serde(default = "default_barrier_init")]
    pub init: BarrierInit,
    /// Starting input amplitude for the direct initialization.
    #[serde(default = "default_uhat0")]
    pub uhat0: f64,
}

fn default_storage_init() -> StorageInit {
    StorageInit::Kyp
}
fn default_barrier_init() -> BarrierInit {
    BarrierInit::Lqr
}
fn default_gamma0() -> f64 {
    1.0
}
fn default_uhat0() -> f64 {
    1e-5
}
fn default_refinements() -> usize {
    2
}
fn default_check_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub storage: StorageConfig,
    pub barrier: BarrierConfig,
    #[serde(default)]
    pub norm_kind: NormKind,
    #[serde(default)]
    pub limits: PhaseLimits,
    #[serde(default)]
    pub step: StepSettings,
    /// Uniform refinements allowed when a margin stays nonpositive.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    #[serde(default = "default_check_tol")]
    pub check_tol: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

impl AnalysisConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: AnalysisConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The committed pendulum reference configuration.
    pub fn pendulum_reference() -> Self {
        Self::from_toml_str(include_str!("../fixtures/pendulum_reference.toml")).expect("fixture parses")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.storage.domain.extents.len();
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, d) in [("storage", &self.storage.domain), ("barrier", &self.barrier.domain)] {
            if d.extents.len() != n || d.grid.len() != n {
                return bad(format!("{name}: box and grid must both have {n} entries"));
            }
            if d.extents.iter().any(|e| !(e[0] < 0.0 && e[1] > 0.0)) {
                return bad(format!("{name}: every box must contain the origin in its interior"));
            }
        }
        if self.barrier.inner.len() != n {
            return bad(format!("barrier.inner must have {n} entries"));
        }
        for (k, e) in self.barrier.inner.iter().enumerate() {
            let outer = self.barrier.domain.extents[k];
            if !(e[0] < 0.0 && e[1] > 0.0 && e[0] > outer[0] && e[1] < outer[1]) {
                return bad("barrier.inner must contain the origin and lie inside the barrier box".into());
            }
        }
        if !(self.storage.gamma0 > 0.0) || !(self.barrier.uhat0 > 0.0) {
            return bad("gamma0 and uhat0 must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundsError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Cpa(#[from] CpaError),
    #[error("storage phase infeasible: {0}")]
    StorageInfeasible(String),
    #[error("barrier phase infeasible: {0}")]
    BarrierInfeasible(String),
    #[error("invariant set not inside the storage domain: vertex {witness:?}; enlarge the storage domain")]
    NotContained { witness: Vec<f64> },
}

impl PipelineError {
    /// Whether the failure is an infeasibility rather than an input problem.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            PipelineError::StorageInfeasible(_) | PipelineError::BarrierInfeasible(_) | PipelineError::NotContained { .. }
        )
    }
}

/// Storage function and gain on (a sub-region of) a triangulation.
#[derive(Debug, Clone)]
pub struct StorageStage {
    pub problem: StorageProblem,
    pub vars: StorageVars,
    pub init: InitBranch,
}

/// Barrier function, input amplitude and invariant level.
#[derive(Debug, Clone)]
pub struct BarrierStage {
    pub problem: BarrierProblem,
    pub vars: BarrierVars,
    pub level: f64,
    pub init: InitBranch,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub storage: StorageStage,
    pub barrier: BarrierStage,
    pub history: Vec<HistoryRecord>,
    /// Simplexes of the barrier mesh meeting the invariant set.
    pub invariant_simplexes: Region,
    pub diagnostics: Vec<String>,
}

fn storage_problem(sys: &Arc<SystemModel>, mesh: Arc<Triangulation>, norm: NormKind) -> Result<StorageProblem, PipelineError> {
    let bounds = Arc::new(MeshBounds::compute(sys, &mesh, norm)?);
    let data = Arc::new(VertexData::compute(sys, &mesh)?);
    let region = Region::all(&mesh);
    Ok(StorageProblem::new(sys.clone(), mesh, region, bounds, data))
}

fn barrier_problem(
    sys: &Arc<SystemModel>,
    mesh: Arc<Triangulation>,
    inner: &[(f64, f64)],
    norm: NormKind,
) -> Result<BarrierProblem, PipelineError> {
    let bounds = Arc::new(MeshBounds::compute(sys, &mesh, norm)?);
    let data = Arc::new(VertexData::compute(sys, &mesh)?);
    let inner = Region::from_box(&mesh, inner)?;
    Ok(BarrierProblem {
        sys: sys.clone(),
        region: Region::all(&mesh),
        mesh,
        inner,
        bounds,
        data,
    })
}

/// Vertex values on `fine` interpolated from a CPA function on a coarser mesh.
fn interpolate(coarse: &Arc<Triangulation>, values: &[f64], fine: &Triangulation) -> Result<Vec<f64>, CpaError> {
    let f = CpaFunction::new(coarse.clone(), values.to_vec())?;
    fine.vertices().iter().map(|x| f.evaluate(x)).collect()
}

/// Carries a storage state to a refined mesh: values by interpolation,
/// `l` and `b1` recomputed exactly on the fine mesh.
pub fn refine_and_warmstart_storage(
    coarse: &StorageProblem,
    vars: &StorageVars,
    fine: &StorageProblem,
) -> Result<StorageVars, CpaError> {
    let values = interpolate(&coarse.mesh, &vars.values, &fine.mesh)?;
    fine.tighten(values, vars.gamma)
}

/// Barrier counterpart of [`refine_and_warmstart_storage`].
pub fn refine_and_warmstart_barrier(
    coarse: &BarrierProblem,
    vars: &BarrierVars,
    fine: &BarrierProblem,
) -> Result<BarrierVars, CpaError> {
    let values = interpolate(&coarse.mesh, &vars.values, &fine.mesh)?;
    fine.tighten(values, vars.uhat)
}

/// Restricted region on which every pair value is negative, if it differs from `all`.
fn sub_region(values: &[PairValue], mesh: &Triangulation, seed: &Region) -> Option<Region> {
    let all = Region::all(mesh);
    let sub = max_feasible_subtriangulation(values, mesh, &all, seed).ok()?;
    (!sub.is_empty() && sub != all && seed.is_subset(&sub)).then_some(sub)
}

/// Simplexes with the largest pair values, for diagnostics.
fn worst_pairs(values: &[PairValue], k: usize) -> String {
    let mut v: Vec<&PairValue> = values.iter().collect();
    v.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.simplex.cmp(&b.simplex)));
    v.iter()
        .take(k)
        .map(|p| format!("simplex {} vertex {} value {:.4e}", p.simplex, p.vertex, p.value))
        .collect::<Vec<_>>()
        .join("; ")
}

fn tag_round(history: &mut [HistoryRecord], round: usize) {
    if round > 0 {
        for r in history {
            r.phase = format!("{}-r{round}", r.phase);
        }
    }
}

pub fn run_storage(
    sys: &Arc<SystemModel>,
    cfg: &AnalysisConfig,
    backend: &dyn ConicBackend,
    history: &mut Vec<HistoryRecord>,
    diagnostics: &mut Vec<String>,
) -> Result<StorageStage, PipelineError> {
    let mut mesh = Arc::new(cfg.storage.domain.triangulate()?);
    let mut previous: Option<(StorageProblem, StorageVars)> = None;
    let mut last_failure = String::new();
    for round in 0..=cfg.refinements {
        let mut problem = storage_problem(sys, mesh.clone(), cfg.norm_kind)?;
        let (vars, init) = match &previous {
            None => match cfg.storage.init {
                StorageInit::Direct => (
                    init_storage_direct(&problem, cfg.storage.gamma0, |x| x.iter().map(|c| c * c).sum())?,
                    InitBranch::Direct,
                ),
                StorageInit::Kyp => {
                    let out = init_storage_kyp(&problem, backend)?;
                    if let Some(d) = out.diagnostic {
                        diagnostics.push(format!("storage initialization fell back to the direct start: {d}"));
                    }
                    (out.vars, out.branch)
                }
            },
            Some((coarse, vars)) => (refine_and_warmstart_storage(coarse, vars, &problem)?, InitBranch::Direct),
        };
        let start = history.len();
        let (mut vars, _) = run_phase(
            &problem,
            vars,
            Objective::MaxB1,
            "storage-margin",
            &cfg.limits,
            &cfg.step,
            backend,
            history,
        )?;
        tag_round(&mut history[start..], round);
        if !(vars.b1 > 0.0) {
            let h = problem.assemble_h(&vars.values, &vars.l, vars.gamma)?;
            if let Some(sub) = sub_region(&h, &problem.mesh, &origin_star(&problem.mesh)) {
                diagnostics.push(format!(
                    "storage inequalities hold on a sub-triangulation of {} of {} simplexes",
                    sub.len(),
                    problem.mesh.num_simplices()
                ));
                problem.region = sub;
                vars = problem.tighten(vars.values, vars.gamma)?;
            } else {
                last_failure = format!("b1 = {:.4e}; worst pairs: {}", vars.b1, worst_pairs(&h, 5));
            }
        }
        if vars.b1 > 0.0 {
            let start = history.len();
            let (vars, _) = run_phase(
                &problem,
                vars,
                Objective::MinGamma,
                "storage-gain",
                &cfg.limits,
                &cfg.step,
                backend,
                history,
            )?;
            tag_round(&mut history[start..], round);
            return Ok(StorageStage { problem, vars, init });
        }
        if round < cfg.refinements {
            diagnostics.push(format!("storage margin stayed nonpositive; refining (round {})", round + 1));
            mesh = Arc::new(mesh.refine_all()?);
            previous = Some((problem, vars));
        }
    }
    Err(PipelineError::StorageInfeasible(last_failure))
}

pub fn run_barrier(
    sys: &Arc<SystemModel>,
    cfg: &AnalysisConfig,
    backend: &dyn ConicBackend,
    history: &mut Vec<HistoryRecord>,
    diagnostics: &mut Vec<String>,
) -> Result<BarrierStage, PipelineError> {
    let inner: Vec<(f64, f64)> = cfg.barrier.inner.iter().map(|e| (e[0], e[1])).collect();
    let mut mesh = Arc::new(cfg.barrier.domain.triangulate()?);
    let mut previous: Option<(BarrierProblem, BarrierVars)> = None;
    let mut last_failure = String::new();
    for round in 0..=cfg.refinements {
        let mut problem = barrier_problem(sys, mesh.clone(), &inner, cfg.norm_kind)?;
        let (vars, init) = match &previous {
            None => match cfg.barrier.init {
                BarrierInit::Direct => (
                    init_barrier_direct(&problem, cfg.barrier.uhat0, |x| {
                        BARRIER_OFFSET + x.iter().map(|c| c * c).sum::<f64>()
                    })?,
                    InitBranch::Direct,
                ),
                BarrierInit::Lqr => {
                    let out = init_barrier_lqr(&problem)?;
                    if let Some(d) = out.diagnostic {
                        diagnostics.push(format!("barrier initialization fell back to the direct start: {d}"));
                    }
                    (out.vars, out.branch)
                }
            },
            Some((coarse, vars)) => (refine_and_warmstart_barrier(coarse, vars, &problem)?, InitBranch::Direct),
        };
        let start = history.len();
        let (mut vars, _) = run_phase(
            &problem,
            vars,
            Objective::MaxB2,
            "barrier-margin",
            &cfg.limits,
            &cfg.step,
            backend,
            history,
        )?;
        tag_round(&mut history[start..], round);
        if !(vars.b2 > 0.0) {
            let d = problem.assemble_dplus(&vars.values, &vars.l, vars.uhat)?;
            match sub_region(&d, &problem.mesh, &problem.inner) {
                Some(sub) if problem.level_in(&sub, &vars.values).is_ok() => {
                    diagnostics.push(format!(
                        "barrier inequalities hold on a sub-triangulation of {} of {} simplexes",
                        sub.len(),
                        problem.mesh.num_simplices()
                    ));
                    problem.region = sub;
                    vars = problem.tighten(vars.values, vars.uhat)?;
                }
                _ => last_failure = format!("b2 = {:.4e}; worst pairs: {}", vars.b2, worst_pairs(&d, 5)),
            }
        }
        if vars.b2 > 0.0 {
            match problem.level(&vars.values) {
                Ok(_) => {
                    let start = history.len();
                    let (vars, _) = run_phase(
                        &problem,
                        vars,
                        Objective::MaxUhat,
                        "barrier-input",
                        &cfg.limits,
                        &cfg.step,
                        backend,
                        history,
                    )?;
                    tag_round(&mut history[start..], round);
                    let level = problem.level(&vars.values)?;
                    return Ok(BarrierStage {
                        problem,
                        vars,
                        level,
                        init,
                    });
                }
                Err(e) => last_failure = format!("no invariant level: {e}"),
            }
        }
        if round < cfg.refinements {
            diagnostics.push(format!("barrier margin stayed nonpositive; refining (round {})", round + 1));
            mesh = Arc::new(mesh.refine_all()?);
            previous = Some((problem, vars));
        }
    }
    Err(PipelineError::BarrierInfeasible(last_failure))
}

/// Simplexes of the barrier region meeting `{W <= level}`.
pub fn invariant_simplexes(problem: &BarrierProblem, values: &[f64], level: f64) -> Region {
    Region::new(problem.region.ids().iter().copied().filter(|&i| {
        problem.mesh.simplex(i).vertices.iter().any(|&v| values[v] <= level)
    }))
}

/// Checks that every vertex of every simplex meeting the invariant set lies in
/// the storage region; returns the first offending vertex.
pub fn check_containment(storage: &StorageProblem, barrier: &BarrierProblem, set: &Region) -> Result<(), Vec<f64>> {
    for v in set.vertices(&barrier.mesh) {
        let x = barrier.mesh.vertex(v);
        let inside = storage
            .mesh
            .simplices_containing(x)
            .iter()
            .any(|&i| storage.region.contains(i));
        if !inside {
            return Err(x.to_vec());
        }
    }
    Ok(())
}

/// Runs the whole analysis.
pub fn analyze(sys: &Arc<SystemModel>, cfg: &AnalysisConfig, backend: &dyn ConicBackend) -> Result<Analysis, PipelineError> {
    cfg.validate()?;
    if cfg.storage.domain.extents.len() != sys.n {
        return Err(ConfigError::Invalid(format!("system has {} states, config boxes have {}", sys.n, cfg.storage.domain.extents.len())).into());
    }
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    let storage = run_storage(sys, cfg, backend, &mut history, &mut diagnostics)?;
    let barrier = run_barrier(sys, cfg, backend, &mut history, &mut diagnostics)?;
    let invariant = invariant_simplexes(&barrier.problem, &barrier.vars.values, barrier.level);
    check_containment(&storage.problem, &barrier.problem, &invariant)
        .map_err(|witness| PipelineError::NotContained { witness })?;
    Ok(Analysis {
        storage,
        barrier,
        history,
        invariant_simplexes: invariant,
        diagnostics,
    })
}
