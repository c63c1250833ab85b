//! Control-affine systems `x' = f(x) + G(x) u`, `y = h(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{add, mul, parse, EvalError, Expr, Interval, IntervalError, ParseError};

/// Tolerance for the load-time equilibrium checks `f(0) = 0`, `h(0) = 0`, `gbar(0) = 0`.
const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("failed to read system file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("expression `{key}`: {source}")]
    Parse {
        key: String,
        #[source]
        source: ParseError,
    },
    #[error("expression `{key}` references x{index} but n = {n}")]
    VariableOutOfRange { key: String, index: usize, n: usize },
    #[error("{what} does not vanish at the origin (|value| = {value:e})")]
    NotAnEquilibrium { what: String, value: f64 },
    #[error("evaluating {what}: {source}")]
    Eval {
        what: String,
        #[source]
        source: EvalError,
    },
    #[error("unknown built-in system `{0}`")]
    UnknownBuiltin(String),
}

/// On-disk description: expressions as text, plus an optional linearization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub f: Vec<String>,
    /// Row-major `n x m`.
    #[serde(rename = "G")]
    pub g: Vec<String>,
    pub h: Vec<String>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
}

const PENDULUM: &str = include_str!("../../fixtures/pendulum.toml");
const ZERO: &str = include_str!("../../fixtures/zero.toml");

impl SystemFile {
    pub fn builtin(name: &str) -> Result<Self, SystemError> {
        match name {
            "pendulum" => Self::from_toml_str(PENDULUM),
            "zero" => Self::from_toml_str(ZERO),
            other => Err(SystemError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["pendulum", "zero"]
    }

    /// Reads the key/value layout `n, m, q, f1..fn, G, h1..hq, [A, B, C]`.
    pub fn from_toml_str(text: &str) -> Result<Self, SystemError> {
        let table: toml::Table = toml::from_str(text)?;
        let dim = |key: &str| -> Result<usize, SystemError> {
            let v = table
                .get(key)
                .ok_or_else(|| SystemError::MissingKey(key.to_string()))?;
            v.as_integer()
                .filter(|k| *k >= 1)
                .map(|k| k as usize)
                .ok_or_else(|| SystemError::BadValue {
                    key: key.to_string(),
                    message: "expected a positive integer".into(),
                })
        };
        let (n, m, q) = (dim("n")?, dim("m")?, dim("q")?);
        let text_of = |key: &str, v: &toml::Value| -> Result<String, SystemError> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(x) => Ok(x.to_string()),
                _ => Err(SystemError::BadValue {
                    key: key.to_string(),
                    message: "expected an expression string".into(),
                }),
            }
        };
        let scalar = |key: String| -> Result<String, SystemError> {
            let v = table
                .get(&key)
                .ok_or_else(|| SystemError::MissingKey(key.clone()))?;
            text_of(&key, v)
        };
        let f = (1..=n).map(|i| scalar(format!("f{i}"))).collect::<Result<_, _>>()?;
        let h = (1..=q).map(|i| scalar(format!("h{i}"))).collect::<Result<_, _>>()?;
        let g = match table.get("G") {
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| text_of("G", v))
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => {
                return Err(SystemError::BadValue {
                    key: "G".into(),
                    message: "expected a list of expressions".into(),
                })
            }
            None => return Err(SystemError::MissingKey("G".into())),
        };
        if g.len() != n * m {
            return Err(SystemError::BadValue {
                key: "G".into(),
                message: format!("expected {} entries, found {}", n * m, g.len()),
            });
        }
        let reals = |key: &str, len: usize| -> Result<Option<Vec<f64>>, SystemError> {
            let Some(v) = table.get(key) else {
                return Ok(None);
            };
            let bad = |message: String| SystemError::BadValue {
                key: key.to_string(),
                message,
            };
            let items = v.as_array().ok_or_else(|| bad("expected a list of reals".into()))?;
            let vals = items
                .iter()
                .map(|x| {
                    x.as_float()
                        .or_else(|| x.as_integer().map(|i| i as f64))
                        .ok_or_else(|| bad("expected a real".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != len {
                return Err(bad(format!("expected {len} entries, found {}", vals.len())));
            }
            Ok(Some(vals))
        };
        Ok(SystemFile {
            n,
            m,
            q,
            f,
            g,
            h,
            a: reals("A", n * n)?,
            b: reals("B", n * m)?,
            c: reals("C", q * n)?,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = format!("n = {}\nm = {}\nq = {}\n", self.n, self.m, self.q);
        for (i, e) in self.f.iter().enumerate() {
            out += &format!("f{} = {:?}\n", i + 1, e);
        }
        out += &format!("G = {:?}\n", self.g);
        for (i, e) in self.h.iter().enumerate() {
            out += &format!("h{} = {:?}\n", i + 1, e);
        }
        for (key, vals) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            if let Some(v) = vals {
                let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                out += &format!("{key} = [{}]\n", items.join(", "));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// A parsed and checked system with its symbolic second derivatives.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub f: Vec<Expr>,
    /// `g[p][k]` is the entry in row `p`, column `k`.
    pub g: Vec<Vec<Expr>>,
    pub h: Vec<Expr>,
    /// `h^T h`.
    pub hh: Expr,
    /// Entries of `G G^T`, `n x n`.
    pub ggt: Vec<Vec<Expr>>,
    /// Upper-triangular second partials of each `f_p`, indexed like `hessian_pairs`.
    pub hess_f: Vec<Vec<Expr>>,
    pub hess_hh: Vec<Expr>,
    /// Second partials of each `(G G^T)_{pr}`.
    pub hess_ggt: Vec<Vec<Vec<Expr>>>,
    linearization: Linearization,
    source: SystemFile,
}

/// `(q, r)` with `q <= r`, the order used by the Hessian tables.
pub fn hessian_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|q| (q..n).map(move |r| (q, r))).collect()
}

fn hessian(e: &Expr, n: usize) -> Vec<Expr> {
    let first: Vec<Expr> = (0..n).map(|q| e.differentiate(q)).collect();
    hessian_pairs(n)
        .into_iter()
        .map(|(q, r)| first[q].differentiate(r))
        .collect()
}

impl SystemModel {
    pub fn from_file(src: &SystemFile) -> Result<Self, SystemError> {
        let (n, m, q) = (src.n, src.m, src.q);
        let parse_key = |key: String, text: &str| -> Result<Expr, SystemError> {
            let e = parse(text).map_err(|source| SystemError::Parse {
                key: key.clone(),
                source,
            })?;
            if let Some(idx) = e.max_var().filter(|i| *i >= n) {
                return Err(SystemError::VariableOutOfRange {
                    key,
                    index: idx + 1,
                    n,
                });
            }
            Ok(e)
        };
        let f = src
            .f
            .iter()
            .enumerate()
            .map(|(i, t)| parse_key(format!("f{}", i + 1), t))
            .collect::<Result<Vec<_>, _>>()?;
        let h = src
            .h
            .iter()
            .enumerate()
            .map(|(i, t)| parse_key(format!("h{}", i + 1), t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut g = vec![Vec::with_capacity(m); n];
        for (idx, t) in src.g.iter().enumerate() {
            let (p, k) = (idx / m, idx % m);
            g[p].push(parse_key(format!("G[{}][{}]", p + 1, k + 1), t)?);
        }

        let hh = h
            .iter()
            .fold(Expr::Const(0.0), |acc, e| add(acc, mul(e.clone(), e.clone())));
        let ggt: Vec<Vec<Expr>> = (0..n)
            .map(|p| {
                (0..n)
                    .map(|r| {
                        (0..m).fold(Expr::Const(0.0), |acc, k| {
                            add(acc, mul(g[p][k].clone(), g[r][k].clone()))
                        })
                    })
                    .collect()
            })
            .collect();
        let hess_f = f.iter().map(|e| hessian(e, n)).collect();
        let hess_hh = hessian(&hh, n);
        let hess_ggt = ggt
            .iter()
            .map(|row| row.iter().map(|e| hessian(e, n)).collect())
            .collect();

        let mut model = SystemModel {
            n,
            m,
            q,
            f,
            g,
            h,
            hh,
            ggt,
            hess_f,
            hess_hh,
            hess_ggt,
            linearization: Linearization {
                a: DMatrix::zeros(n, n),
                b: DMatrix::zeros(n, m),
                c: DMatrix::zeros(q, n),
            },
            source: src.clone(),
        };
        model.check_equilibrium()?;
        model.linearization = match (&src.a, &src.b, &src.c) {
            (Some(a), Some(b), Some(c)) => Linearization {
                a: DMatrix::from_row_slice(n, n, a),
                b: DMatrix::from_row_slice(n, m, b),
                c: DMatrix::from_row_slice(q, n, c),
            },
            _ => model.jacobian_linearization()?,
        };
        Ok(model)
    }

    pub fn builtin(name: &str) -> Result<Self, SystemError> {
        Self::from_file(&SystemFile::builtin(name)?)
    }

    fn check_equilibrium(&self) -> Result<(), SystemError> {
        let zero = vec![0.0; self.n];
        let fx = self.eval_f(&zero).map_err(|source| SystemError::Eval {
            what: "f(0)".into(),
            source,
        })?;
        let hx = self.eval_h(&zero).map_err(|source| SystemError::Eval {
            what: "h(0)".into(),
            source,
        })?;
        let gbar = self.gbar(&zero).map_err(|source| SystemError::Eval {
            what: "G(0)".into(),
            source,
        })?;
        for (what, value) in [
            ("f(0)", fx.amax()),
            ("h(0)", hx.amax()),
            ("||G(0) G(0)^T||_inf", gbar),
        ] {
            if value > ORIGIN_TOL {
                return Err(SystemError::NotAnEquilibrium {
                    what: what.into(),
                    value,
                });
            }
        }
        Ok(())
    }

    fn jacobian_linearization(&self) -> Result<Linearization, SystemError> {
        let zero = vec![0.0; self.n];
        let jac = |exprs: &[Expr], what: &str| -> Result<DMatrix<f64>, SystemError> {
            let mut out = DMatrix::zeros(exprs.len(), self.n);
            for (p, e) in exprs.iter().enumerate() {
                for r in 0..self.n {
                    out[(p, r)] =
                        e.differentiate(r)
                            .eval(&zero)
                            .map_err(|source| SystemError::Eval {
                                what: format!("d{what}{}/dx{}", p + 1, r + 1),
                                source,
                            })?;
                }
            }
            Ok(out)
        };
        Ok(Linearization {
            a: jac(&self.f, "f")?,
            b: self.eval_g(&zero).map_err(|source| SystemError::Eval {
                what: "G(0)".into(),
                source,
            })?,
            c: jac(&self.h, "h")?,
        })
    }

    pub fn source(&self) -> &SystemFile {
        &self.source
    }

    pub fn linearization(&self) -> &Linearization {
        &self.linearization
    }

    /// SHA-256 of the canonical printed form.
    pub fn hash(&self) -> String {
        let mut canon = format!("n={};m={};q={}\n", self.n, self.m, self.q);
        for e in &self.f {
            canon += &format!("f:{e}\n");
        }
        for row in &self.g {
            for e in row {
                canon += &format!("G:{e}\n");
            }
        }
        for e in &self.h {
            canon += &format!("h:{e}\n");
        }
        for mat in [&self.linearization.a, &self.linearization.b, &self.linearization.c] {
            let vals: Vec<String> = mat.transpose().iter().map(|x| format!("{x:?}")).collect();
            canon += &format!("L:{}\n", vals.join(","));
        }
        Sha256::digest(canon.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        let vals = self.f.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    pub fn eval_g(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.n, self.m);
        for (p, row) in self.g.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                out[(p, k)] = e.eval(x)?;
            }
        }
        Ok(out)
    }

    pub fn eval_h(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        let vals = self.h.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// `||G(x) G(x)^T||_inf`, the maximum absolute row sum.
    pub fn gbar(&self, x: &[f64]) -> Result<f64, EvalError> {
        let g = self.eval_g(x)?;
        Ok(inf_norm(&(&g * g.transpose())))
    }

    /// Interval enclosures of the Hessian entries of each `f_p`.
    pub fn hessian_f_intervals(&self, boxx: &[Interval]) -> Result<Vec<Vec<Interval>>, IntervalError> {
        self.hess_f
            .iter()
            .map(|row| row.iter().map(|e| e.interval_eval(boxx)).collect())
            .collect()
    }

    /// Interval enclosures of every entry of `G` over a box.
    pub fn g_intervals(&self, boxx: &[Interval]) -> Result<Vec<Vec<Interval>>, IntervalError> {
        self.g
            .iter()
            .map(|row| row.iter().map(|e| e.interval_eval(boxx)).collect())
            .collect()
    }
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl SystemFile {
    /// Parses either a built-in name or the contents of a system file.
    pub fn load(name_or_text: &str) -> Result<Self, SystemError> {
        if SystemFile::builtin_names().contains(&name_or_text) {
            Self::builtin(name_or_text)
        } else {
            Self::from_toml_str(name_or_text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_loads() {
        let sys = SystemModel::builtin("pendulum").unwrap();
        assert_eq!((sys.n, sys.m, sys.q), (2, 1, 1));
        let x = [0.5, 0.2];
        let f = sys.eval_f(&x).unwrap();
        assert!((f[1] - (-(0.5f64).sin() - 0.2)).abs() < 1e-15);
        assert!((sys.gbar(&x).unwrap() - 0.04).abs() < 1e-15);
        let lin = sys.linearization();
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]));
        assert_eq!(lin.b, DMatrix::zeros(2, 1));
    }

    #[test]
    fn jacobian_matches_closed_form() {
        let mut file = SystemFile::builtin("pendulum").unwrap();
        let closed = SystemModel::from_file(&file).unwrap().linearization().clone();
        file.a = None;
        file.b = None;
        file.c = None;
        let symbolic = SystemModel::from_file(&file).unwrap().linearization().clone();
        assert_eq!(closed, symbolic);
    }

    #[test]
    fn rejects_non_equilibria() {
        let mut file = SystemFile::builtin("pendulum").unwrap();
        file.f[0] = "x2 + 0.1".into();
        assert!(matches!(
            SystemModel::from_file(&file),
            Err(SystemError::NotAnEquilibrium { .. })
        ));
        let mut file = SystemFile::builtin("pendulum").unwrap();
        file.g = vec!["0".into(), "1".into()];
        assert!(matches!(
            SystemModel::from_file(&file),
            Err(SystemError::NotAnEquilibrium { .. })
        ));
        let mut file = SystemFile::builtin("pendulum").unwrap();
        file.h[0] = "cos(x1)".into();
        assert!(matches!(
            SystemModel::from_file(&file),
            Err(SystemError::NotAnEquilibrium { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_variables() {
        let mut file = SystemFile::builtin("pendulum").unwrap();
        file.h[0] = "x3".into();
        assert!(matches!(
            SystemModel::from_file(&file),
            Err(SystemError::VariableOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let file = SystemFile::builtin("pendulum").unwrap();
        let again = SystemFile::from_toml_str(&file.to_toml_string()).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn missing_keys_are_reported() {
        let err = SystemFile::from_toml_str("n = 1\nm = 1\nq = 1\nG = [\"0\"]\nh1 = \"x1\"").unwrap_err();
        assert!(matches!(err, SystemError::MissingKey(k) if k == "f1"));
    }
}
