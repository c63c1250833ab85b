//! Solver-neutral conic programs: scalar variables, affine constraints, small
//! semidefinite blocks and a linear objective.

use serde::Serialize;

/// `constant + sum coeff * x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize) -> Self {
        AffineExpr {
            constant: 0.0,
            terms: vec![(i, 1.0)],
        }
    }

    pub fn term(mut self, var: usize, coeff: f64) -> Self {
        if coeff != 0.0 {
            self.terms.push((var, coeff));
        }
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add(mut self, other: &AffineExpr, scale: f64) -> Self {
        self.constant += scale * other.constant;
        for &(v, c) in &other.terms {
            if c * scale != 0.0 {
                self.terms.push((v, c * scale));
            }
        }
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        AffineExpr::default().add(self, s)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(&self) -> AffineExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        AffineExpr {
            constant: self.constant,
            terms: out,
        }
    }
}

/// A symmetric block constrained positive semidefinite. Entries are stored as
/// the lower triangle row by row: (0,0), (1,0), (1,1), (2,0), ...
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub size: usize,
    pub entries: Vec<AffineExpr>,
}

impl PsdBlock {
    pub fn new(size: usize, mut entry: impl FnMut(usize, usize) -> AffineExpr) -> Self {
        let mut entries = Vec::with_capacity(size * (size + 1) / 2);
        for r in 0..size {
            for c in 0..=r {
                entries.push(entry(r, c));
            }
        }
        PsdBlock { size, entries }
    }

    pub fn entry(&self, r: usize, c: usize) -> &AffineExpr {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        &self.entries[r * (r + 1) / 2 + c]
    }

    pub fn negated(&self) -> PsdBlock {
        PsdBlock {
            size: self.size,
            entries: self.entries.iter().map(|e| e.scaled(-1.0)).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.size, self.size, |r, c| self.entry(r, c).eval(x))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Minimized; the constant part is ignored by solvers.
    pub objective: AffineExpr,
    /// Each expression must vanish.
    pub equalities: Vec<AffineExpr>,
    /// Each expression must be nonnegative.
    pub inequalities: Vec<AffineExpr>,
    pub psd: Vec<PsdBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_vars(&mut self, k: usize) -> std::ops::Range<usize> {
        let start = self.num_vars;
        self.num_vars += k;
        start..self.num_vars
    }

    pub fn minimize(&mut self, e: AffineExpr) {
        self.objective = e;
    }

    pub fn eq(&mut self, e: AffineExpr) {
        self.equalities.push(e);
    }

    /// `e >= 0`.
    pub fn ge(&mut self, e: AffineExpr) {
        self.inequalities.push(e);
    }

    /// `e <= 0`.
    pub fn le(&mut self, e: AffineExpr) {
        self.inequalities.push(e.scaled(-1.0));
    }

    /// `lo <= x[var] <= hi`.
    pub fn bound(&mut self, var: usize, lo: f64, hi: f64) {
        self.ge(AffineExpr::var(var).plus_const(-lo));
        self.ge(AffineExpr::constant(hi).term(var, -1.0));
    }

    /// `block >= 0` in the semidefinite order.
    pub fn psd(&mut self, block: PsdBlock) {
        self.psd.push(block);
    }

    /// `block <= 0` in the semidefinite order.
    pub fn nsd(&mut self, block: PsdBlock) {
        self.psd.push(block.negated());
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for e in &self.equalities {
            worst = worst.max(e.eval(x).abs());
        }
        for e in &self.inequalities {
            worst = worst.max(-e.eval(x));
        }
        for b in &self.psd {
            let m = b.eval(x);
            let min_eig = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max(-min_eig);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// A conic solver behind the program format above.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram) -> Solution;
}
