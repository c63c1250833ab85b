//! Starting points for the storage and barrier iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::conic::{AffineExpr, ConicBackend, ConicProgram, PsdBlock, SolveStatus};
use crate::certify::{BarrierProblem, BarrierVars, StorageProblem, StorageVars};
use crate::cpa::CpaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageInit {
    /// `V = |x|^2` with a given `gamma`.
    Direct,
    /// Quadratic storage from the linearization (bounded-real or Lyapunov).
    Kyp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierInit {
    /// `W = eps + |x|^2` with a given `uhat`.
    Direct,
    /// `W = eps + x^T P x` from the linearization's Lyapunov equation.
    Lqr,
}

/// Which construction produced the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitBranch {
    Direct,
    BoundedReal,
    Lyapunov,
    Fallback,
}

#[derive(Debug, Clone)]
pub struct Initialized<V> {
    pub vars: V,
    pub branch: InitBranch,
    pub diagnostic: Option<String>,
}

pub const GAMMA_MIN: f64 = 1e-6;
/// Constant added to quadratic barrier profiles so `W(0) > 0`.
pub const BARRIER_OFFSET: f64 = 0.01;
/// Input amplitude the linearization-based barrier starts from.
pub const LQR_UHAT: f64 = 1e-5;

fn quadratic(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x);
    x.dot(&(p * &x))
}

fn sample(problem_mesh: &crate::mesh::Triangulation, profile: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    problem_mesh.vertices().iter().map(|v| profile(v)).collect()
}

pub fn init_storage_direct(
    problem: &StorageProblem,
    gamma0: f64,
    profile: impl Fn(&[f64]) -> f64,
) -> Result<StorageVars, CpaError> {
    let values = sample(&problem.mesh, |x| profile(x).max(0.0));
    problem.tighten(values, gamma0)
}

/// Quadratic storage `V = x^T P x / 2` from the linearization. With an input
/// channel, `P` and `gamma` solve the bounded-real inequality; without one,
/// `P` solves `A^T P + P A = -I` and `gamma = 1`. Falls back to the direct
/// start when neither exists.
pub fn init_storage_kyp(
    problem: &StorageProblem,
    backend: &dyn ConicBackend,
) -> Result<Initialized<StorageVars>, CpaError> {
    let lin = problem.sys.linearization();
    let has_input = lin.b.iter().any(|&v| v != 0.0);
    let found = if has_input {
        bounded_real(&lin.a, &lin.b, &lin.c, backend).map(|(p, g)| (p, g, InitBranch::BoundedReal))
    } else {
        lyapunov(&lin.a).map(|p| (p, 1.0, InitBranch::Lyapunov))
    };
    match found {
        Ok((p, gamma, branch)) => {
            let values = sample(&problem.mesh, |x| (0.5 * quadratic(&p, x)).max(0.0));
            Ok(Initialized {
                vars: problem.tighten(values, gamma)?,
                branch,
                diagnostic: None,
            })
        }
        Err(reason) => Ok(Initialized {
            vars: init_storage_direct(problem, 1.0, |x| x.iter().map(|c| c * c).sum())?,
            branch: InitBranch::Fallback,
            diagnostic: Some(reason),
        }),
    }
}

pub fn init_barrier_direct(
    problem: &BarrierProblem,
    uhat0: f64,
    profile: impl Fn(&[f64]) -> f64,
) -> Result<BarrierVars, CpaError> {
    let values = sample(&problem.mesh, profile);
    problem.tighten(values, uhat0)
}

/// `W = 0.01 + x^T P x` with `A^T P + P A = -I`, starting from a tiny input
/// amplitude. Falls back to the direct start when `A` is not Hurwitz.
pub fn init_barrier_lqr(problem: &BarrierProblem) -> Result<Initialized<BarrierVars>, CpaError> {
    let lin = problem.sys.linearization();
    match lyapunov(&lin.a) {
        Ok(p) => {
            let values = sample(&problem.mesh, |x| BARRIER_OFFSET + quadratic(&p, x));
            Ok(Initialized {
                vars: problem.tighten(values, LQR_UHAT)?,
                branch: InitBranch::Lyapunov,
                diagnostic: None,
            })
        }
        Err(reason) => Ok(Initialized {
            vars: init_barrier_direct(problem, LQR_UHAT, |x| {
                BARRIER_OFFSET + x.iter().map(|c| c * c).sum::<f64>()
            })?,
            branch: InitBranch::Fallback,
            diagnostic: Some(reason),
        }),
    }
}

/// Solves `A^T P + P A = -I` and requires `P` positive definite.
pub fn lyapunov(a: &DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    let op = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, (-&eye).iter().copied());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| "Lyapunov equation is singular (eigenvalues of A sum to zero)".to_string())?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let min_eig = p.symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(format!(
            "linearization is not Hurwitz: Lyapunov solution has eigenvalue {min_eig:.3e}"
        ));
    }
    Ok(p)
}

/// Minimizes `gamma` subject to
/// `[[A^T P + P A + C^T C, P B], [B^T P, -gamma I]] <= 0` and `P >= 0`.
pub fn bounded_real(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    backend: &dyn ConicBackend,
) -> Result<(DMatrix<f64>, f64), String> {
    let n = a.nrows();
    let m = b.ncols();
    let mut prog = ConicProgram::new();
    let mut pv = vec![vec![0usize; n]; n];
    for r in 0..n {
        for s in 0..=r {
            let v = prog.add_var();
            pv[r][s] = v;
            pv[s][r] = v;
        }
    }
    let gamma = prog.add_var();
    let ctc = c.transpose() * c;
    // (A^T P + P A)_{rs} = sum_k A_{kr} P_{ks} + P_{rk} A_{ks}
    let top = |r: usize, s: usize| {
        let mut e = AffineExpr::constant(ctc[(r, s)]);
        for k in 0..n {
            e = e.term(pv[k][s], a[(k, r)]).term(pv[r][k], a[(k, s)]);
        }
        e
    };
    let pb = |r: usize, k: usize| {
        (0..n).fold(AffineExpr::default(), |e, t| e.term(pv[r][t], b[(t, k)]))
    };
    prog.nsd(PsdBlock::new(n + m, |r, s| match (r < n, s < n) {
        (true, true) => top(r, s),
        (false, true) => pb(s, r - n),
        (true, false) => pb(r, s - n),
        (false, false) if r == s => AffineExpr::var(gamma).scaled(-1.0),
        _ => AffineExpr::constant(0.0),
    }));
    prog.psd(PsdBlock::new(n, |r, s| AffineExpr::var(pv[r][s])));
    prog.minimize(AffineExpr::var(gamma));
    let sol = backend.solve(&prog);
    if sol.status != SolveStatus::Optimal {
        return Err(format!("bounded-real inequality: solver status {}", sol.status.as_str()));
    }
    let p = DMatrix::from_fn(n, n, |r, s| sol.x[pv[r][s]]);
    Ok((p, sol.x[gamma].max(GAMMA_MIN)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::ClarabelBackend;

    #[test]
    fn lyapunov_of_damped_oscillator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let p = lyapunov(&a).unwrap();
        let res = a.transpose() * &p + &p * &a + DMatrix::identity(2, 2);
        assert!(res.amax() < 1e-12);
        assert!(p.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn lyapunov_of_minus_identity_is_half() {
        let p = lyapunov(&(-DMatrix::<f64>::identity(3, 3))).unwrap();
        assert!((p - DMatrix::identity(3, 3) * 0.5).amax() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(lyapunov(&a).is_err());
    }

    /// Peak of `|C (jw I - A)^{-1} B|_2` over a frequency grid.
    fn hinf_sweep(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        use nalgebra::Complex;
        let n = a.nrows();
        let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
        let (ac, bc, cc) = (to_c(a), to_c(b), to_c(c));
        let mut peak = 0.0f64;
        for k in 0..=4000 {
            let w = 10f64.powf(-3.0 + 6.0 * k as f64 / 4000.0);
            let m = DMatrix::<Complex<f64>>::identity(n, n) * Complex::new(0.0, w) - &ac;
            let t = &cc * m.try_inverse().unwrap() * &bc;
            peak = peak.max(t.singular_values().max());
        }
        peak
    }

    #[test]
    fn bounded_real_matches_frequency_sweep() {
        let be = ClarabelBackend::default();
        let a = -DMatrix::<f64>::identity(2, 2);
        let eye = DMatrix::<f64>::identity(2, 2);
        let (_, g) = bounded_real(&a, &eye, &eye, &be).unwrap();
        let peak = hinf_sweep(&a, &eye, &eye);
        assert!((g - peak * peak).abs() < 1e-4, "{g} vs {}", peak * peak);

        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (p, g) = bounded_real(&a, &b, &c, &be).unwrap();
        let peak = hinf_sweep(&a, &b, &c);
        assert!((g.sqrt() - peak).abs() / peak < 1e-3, "{} vs {peak}", g.sqrt());
        assert!(p.symmetric_eigenvalues().min() > -1e-7);
    }

    #[test]
    fn bounded_real_zero_output_clamps() {
        let be = ClarabelBackend::default();
        let a = -DMatrix::<f64>::identity(1, 1);
        let b = DMatrix::identity(1, 1);
        let c = DMatrix::zeros(1, 1);
        let (_, g) = bounded_real(&a, &b, &c, &be).unwrap();
        assert!(g >= GAMMA_MIN && g < 1e-4);
    }
}
