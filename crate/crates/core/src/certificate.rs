//! The combined certificate: storage function, gain, barrier function, input
//! amplitude and invariant level, with everything needed to re-check them
//! without a solver.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsError, MeshBounds, NormKind};
use crate::certify::{BarrierProblem, BarrierVars, StorageProblem, StorageVars, VertexData};
use crate::expr::{EvalError, SystemError, SystemFile, SystemModel};
use crate::mesh::{MeshError, Region, Triangulation};
use crate::pipeline::{Analysis, AnalysisConfig};
use crate::solve::HistoryRecord;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Simplex sets the certificate refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    /// Simplexes of `mesh` on which the storage inequalities hold.
    pub storage: Region,
    /// Simplexes of `mesh_hat` on which the barrier inequalities hold.
    pub barrier: Region,
    /// Simplexes of `mesh_hat` meeting `{W <= level_c}`.
    pub invariant: Region,
}

/// Field order is the serialized order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub system_hash: String,
    pub norm_kind: NormKind,
    pub mesh: Triangulation,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    pub gamma: f64,
    pub b1: f64,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    #[serde(rename = "Lhat")]
    pub lhat: Vec<Vec<f64>>,
    pub uhat: f64,
    pub b2: f64,
    pub level_c: f64,
    /// Inner set, as simplex ids of `mesh_hat`.
    #[serde(rename = "A1_simplexes")]
    pub a1_simplexes: Region,
    pub bounds: MeshBounds,
    pub history: Vec<HistoryRecord>,
    pub mesh_hat: Triangulation,
    pub regions: Regions,
    pub bounds_hat: MeshBounds,
    pub system: SystemFile,
    pub config: AnalysisConfig,
    pub tool_version: String,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CertificateError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("certificate parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("certificate is inconsistent: {0}")]
    Inconsistent(String),
}

/// Solver-free problems and variables reconstructed from a certificate.
#[derive(Debug, Clone)]
pub struct Rebuilt {
    pub sys: Arc<SystemModel>,
    pub storage: StorageProblem,
    pub storage_vars: StorageVars,
    pub barrier: BarrierProblem,
    pub barrier_vars: BarrierVars,
    /// Whether the stored bound snapshots equal the recomputed ones.
    pub bounds_match: bool,
}

impl Certificate {
    pub fn from_analysis(sys: &SystemModel, cfg: &AnalysisConfig, analysis: &Analysis) -> Self {
        let st = &analysis.storage;
        let ba = &analysis.barrier;
        Certificate {
            system_hash: sys.hash(),
            norm_kind: cfg.norm_kind,
            mesh: (*st.problem.mesh).clone(),
            v: st.vars.values.clone(),
            l: st.vars.l.clone(),
            gamma: st.vars.gamma,
            b1: st.vars.b1,
            w: ba.vars.values.clone(),
            lhat: ba.vars.l.clone(),
            uhat: ba.vars.uhat,
            b2: ba.vars.b2,
            level_c: ba.level,
            a1_simplexes: ba.problem.inner.clone(),
            bounds: (*st.problem.bounds).clone(),
            history: analysis.history.clone(),
            mesh_hat: (*ba.problem.mesh).clone(),
            regions: Regions {
                storage: st.problem.region.clone(),
                barrier: ba.problem.region.clone(),
                invariant: analysis.invariant_simplexes.clone(),
            },
            bounds_hat: (*ba.problem.bounds).clone(),
            system: sys.source().clone(),
            config: cfg.clone(),
            tool_version: TOOL_VERSION.to_string(),
            diagnostics: analysis.diagnostics.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificate serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CertificateError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CertificateError> {
        let text = std::fs::read_to_string(path).map_err(|source| CertificateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn sqrt_gamma(&self) -> f64 {
        self.gamma.sqrt()
    }

    /// Rebuilds both problems from the embedded system, recomputing the
    /// bounds rather than trusting the stored snapshots.
    pub fn rebuild(&self) -> Result<Rebuilt, CertificateError> {
        let sys = Arc::new(SystemModel::from_file(&self.system)?);
        if sys.hash() != self.system_hash {
            return Err(CertificateError::Inconsistent(
                "system hash does not match the embedded system".into(),
            ));
        }
        let shape = |name: &str, mesh: &Triangulation, values: usize, l: &[Vec<f64>]| {
            if mesh.dim() != sys.n {
                return Err(CertificateError::Inconsistent(format!(
                    "{name} has dimension {}, system has {} states",
                    mesh.dim(),
                    sys.n
                )));
            }
            if values != mesh.num_vertices() || l.len() != mesh.num_simplices() {
                return Err(CertificateError::Inconsistent(format!(
                    "{name} has {} vertices and {} simplexes, certificate has {values} values and {} gradient bounds",
                    mesh.num_vertices(),
                    mesh.num_simplices(),
                    l.len()
                )));
            }
            if l.iter().any(|li| li.len() != sys.n) {
                return Err(CertificateError::Inconsistent(format!("{name} gradient bounds have the wrong length")));
            }
            Ok(())
        };
        shape("mesh", &self.mesh, self.v.len(), &self.l)?;
        shape("mesh_hat", &self.mesh_hat, self.w.len(), &self.lhat)?;
        let in_range = |r: &Region, mesh: &Triangulation| r.ids().iter().all(|&i| i < mesh.num_simplices());
        if !in_range(&self.regions.storage, &self.mesh)
            || !in_range(&self.regions.barrier, &self.mesh_hat)
            || !in_range(&self.regions.invariant, &self.mesh_hat)
            || !in_range(&self.a1_simplexes, &self.mesh_hat)
        {
            return Err(CertificateError::Inconsistent("region refers to a missing simplex".into()));
        }

        let mesh = Arc::new(self.mesh.clone());
        let bounds = MeshBounds::compute(&sys, &mesh, self.norm_kind)?;
        let mesh_hat = Arc::new(self.mesh_hat.clone());
        let bounds_hat = MeshBounds::compute(&sys, &mesh_hat, self.norm_kind)?;
        let bounds_match = bounds == self.bounds && bounds_hat == self.bounds_hat;

        let storage = StorageProblem::new(
            sys.clone(),
            mesh.clone(),
            self.regions.storage.clone(),
            Arc::new(bounds),
            Arc::new(VertexData::compute(&sys, &mesh)?),
        );
        let barrier = BarrierProblem {
            sys: sys.clone(),
            mesh: mesh_hat.clone(),
            region: self.regions.barrier.clone(),
            inner: self.a1_simplexes.clone(),
            bounds: Arc::new(bounds_hat),
            data: Arc::new(VertexData::compute(&sys, &mesh_hat)?),
        };
        Ok(Rebuilt {
            sys,
            storage,
            storage_vars: StorageVars {
                values: self.v.clone(),
                l: self.l.clone(),
                gamma: self.gamma,
                b1: self.b1,
            },
            barrier,
            barrier_vars: BarrierVars {
                values: self.w.clone(),
                l: self.lhat.clone(),
                uhat: self.uhat,
                b2: self.b2,
            },
            bounds_match,
        })
    }
}
