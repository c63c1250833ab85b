//! Adapter for the Clarabel interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::conic::{AffineExpr, ConicBackend, ConicProgram, Solution, SolveStatus};

#[derive(Debug, Clone, Copy)]
pub struct ClarabelBackend {
    /// Lower 2x2 blocks to second-order cones instead of semidefinite cones.
    pub lower_small_blocks: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        ClarabelBackend {
            lower_small_blocks: true,
        }
    }
}

/// Rows of `A x + s = b` accumulated as triplets.
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Adds the row `s = e(x)`, i.e. `-a^T x + s = c`.
    fn push(&mut self, e: &AffineExpr, scale: f64) {
        let row = self.b.len();
        for &(var, coeff) in &e.compact().terms {
            self.i.push(row);
            self.j.push(var);
            self.v.push(-coeff * scale);
        }
        self.b.push(e.constant * scale);
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        if self.lower_small_blocks {
            "clarabel"
        } else {
            "clarabel-psd"
        }
    }

    fn solve(&self, program: &ConicProgram) -> Solution {
        let n = program.num_vars;
        let mut rows = Rows {
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();
        if !program.equalities.is_empty() {
            for e in &program.equalities {
                rows.push(e, 1.0);
            }
            cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
        }
        let mut nonneg = 0;
        for e in &program.inequalities {
            rows.push(e, 1.0);
            nonneg += 1;
        }
        for block in program.psd.iter().filter(|b| b.size == 1) {
            rows.push(&block.entries[0], 1.0);
            nonneg += 1;
        }
        if nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg));
        }
        for block in program.psd.iter().filter(|b| b.size > 1) {
            if block.size == 2 && self.lower_small_blocks {
                // [[a, b], [b, c]] >= 0  <=>  a + c >= ||(a - c, 2 b)||
                let a = block.entry(0, 0);
                let b = block.entry(1, 0);
                let c = block.entry(1, 1);
                rows.push(&a.clone().add(c, 1.0), 1.0);
                rows.push(&a.clone().add(c, -1.0), 1.0);
                rows.push(b, 2.0);
                cones.push(SupportedConeT::SecondOrderConeT(3));
            } else {
                // upper triangle by columns, off-diagonal scaled by sqrt(2)
                for col in 0..block.size {
                    for row in 0..=col {
                        let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                        rows.push(block.entry(row, col), scale);
                    }
                }
                cones.push(SupportedConeT::PSDTriangleConeT(block.size));
            }
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for (var, coeff) in program.objective.compact().terms {
            q[var] += coeff;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(200)
            .build()
            .expect("static solver settings are valid");
        let failed = Solution {
            status: SolveStatus::NumericalFailure,
            x: vec![0.0; n],
            objective: f64::NAN,
        };
        let Ok(mut solver) = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings) else {
            return failed;
        };
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        let x = solver.solution.x.clone();
        let objective = program.objective.eval(&x);
        Solution { status, x, objective }
    }
}
