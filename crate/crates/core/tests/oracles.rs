//! Randomized checks of the semidefinite blocks, the interpolation-error
//! constants and CPA interpolation against independent oracles.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpagain::bounds::{cij, NormKind};
use cpagain::cpa::CpaFunction;
use cpagain::mesh::{kuhn_triangulate, Triangulation};
use cpagain::solve::{coupling_block, cross_term_block, AffineExpr};

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn coupling_block_sign_matches_scalar_form(
        top in -5.0..5.0f64,
        s in -5.0..5.0f64,
        e in 0.0..3.0f64,
        gamma in 1e-3..10.0f64,
    ) {
        let scalar = top + e * s * s / gamma;
        prop_assume!(scalar.abs() > 1e-9 * (1.0 + top.abs() + e * s * s / gamma));
        let block = coupling_block(AffineExpr::constant(top), &AffineExpr::constant(s), e, &AffineExpr::constant(gamma));
        let m = block.eval(&[]);
        prop_assert_eq!(max_eigenvalue(&m) <= 0.0, scalar <= 0.0);
    }

    #[test]
    fn cross_term_block_sign_matches_scalar_form(
        top in -5.0..5.0f64,
        s in -3.0..3.0f64,
        q in -3.0..3.0f64,
    ) {
        let scalar = top + 0.5 * (s * s + q * q);
        prop_assume!(scalar.abs() > 1e-9 * (1.0 + top.abs() + s * s + q * q));
        let block = cross_term_block(AffineExpr::constant(top), &AffineExpr::constant(s), &AffineExpr::constant(q));
        let nsd = max_eigenvalue(&block.eval(&[])) <= 0.0;
        prop_assert_eq!(nsd, scalar <= 0.0);
        if nsd {
            prop_assert!(top + s * q <= 1e-12);
        }
    }

    #[test]
    fn blocks_are_affine_in_the_variables(
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        x in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let top = AffineExpr::constant(a).term(0, 1.0);
        let s = AffineExpr::constant(b).term(1, -2.0);
        let gamma = AffineExpr::constant(1.5).term(0, 0.25);
        let m = coupling_block(top, &s, 0.7, &gamma).eval(&x);
        let k = 0.7f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[
            a + x[0], k * (b - 2.0 * x[1]),
            k * (b - 2.0 * x[1]), -(1.5 + 0.25 * x[0]),
        ]);
        prop_assert!((m - expect).amax() < 1e-12);
    }
}

/// A random nondegenerate simplex in `n` dimensions.
fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Triangulation {
    loop {
        let vertices: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let edges = DMatrix::from_fn(n, n, |r, c| vertices[c + 1][r] - vertices[0][r]);
        if edges.determinant().abs() < 1e-2 {
            continue;
        }
        let simplex = vec![(0..=n).collect()];
        return Triangulation::from_parts(vertices, simplex, BTreeMap::new(), None).unwrap();
    }
}

/// Uniform barycentric weights.
fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

#[test]
fn interpolation_error_bound_on_quadratic_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut violations = 0;
    for trial in 0..1000 {
        let n = 2 + trial % 2;
        let mesh = random_simplex(&mut rng, n);
        // field component p: x^T H_p x / 2 + b_p . x
        let hess: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0));
                (&a + a.transpose()) * 0.5
            })
            .collect();
        let lin: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let beta = hess.iter().map(|h| h.amax()).fold(0.0, f64::max);
        let field = |x: &DVector<f64>| -> DVector<f64> {
            DVector::from_fn(n, |p, _| 0.5 * x.dot(&(&hess[p] * x)) + lin[p].dot(x))
        };
        let c = cij(&mesh, 0, NormKind::L2);
        let lambda = random_weights(&mut rng, n + 1);
        let verts: Vec<DVector<f64>> = mesh.simplex(0).vertices.iter().map(|&v| DVector::from_column_slice(mesh.vertex(v))).collect();
        let x = verts.iter().zip(&lambda).fold(DVector::zeros(n), |acc, (v, l)| acc + v * *l);
        let interp = verts.iter().zip(&lambda).fold(DVector::zeros(n), |acc, (v, l)| acc + field(v) * *l);
        let err = (field(&x) - interp).amax();
        let bound: f64 = beta * lambda.iter().zip(&c).map(|(l, cj)| l * cj).sum::<f64>();
        if err > bound + 1e-9 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

/// Kuhn mesh on a random box around the origin.
fn random_mesh(rng: &mut ChaCha8Rng) -> Arc<Triangulation> {
    let n = rng.gen_range(2..=3);
    let extents: Vec<(f64, f64)> = (0..n)
        .map(|_| (-rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)))
        .collect();
    let grid: Vec<usize> = (0..n).map(|_| if n == 2 { rng.gen_range(2..9) } else { rng.gen_range(2..5) }).collect();
    // grids with the origin on a line: snap by rescaling the lower side
    let extents: Vec<(f64, f64)> = extents
        .iter()
        .zip(&grid)
        .map(|(&(lo, hi), &k)| {
            let h = (hi - lo) / k as f64;
            let below = (-lo / h).round().clamp(1.0, k as f64 - 1.0);
            (-below * h, (k as f64 - below) * h)
        })
        .collect();
    Arc::new(kuhn_triangulate(&extents, &grid).unwrap())
}

fn random_point(rng: &mut ChaCha8Rng, mesh: &Triangulation) -> Vec<f64> {
    let (lo, hi) = mesh.bounds();
    lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect()
}

#[test]
fn cpa_interpolation_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mesh = random_mesh(&mut rng);
        let n = mesh.dim();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a0 = rng.gen_range(-1.0..1.0);
        let affine = CpaFunction::from_fn(mesh.clone(), |x| a0 + x.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>()).unwrap();
        let values: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let general = CpaFunction::new(mesh.clone(), values.clone()).unwrap();
        for (v, x) in mesh.vertices().iter().enumerate() {
            assert!((general.evaluate(x).unwrap() - values[v]).abs() < 1e-9);
        }
        for _ in 0..1000 {
            let x = random_point(&mut rng, &mesh);
            let exact = a0 + x.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
            assert!((affine.evaluate(&x).unwrap() - exact).abs() < 1e-9);

            let i = mesh.locate(&x).unwrap();
            let lambda = mesh.barycentric(i, &x).unwrap();
            assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(lambda.iter().all(|&l| l >= -1e-9));
            let s = mesh.simplex(i);
            for d in 0..n {
                let back: f64 = s.vertices.iter().zip(&lambda).map(|(&v, l)| l * mesh.vertex(v)[d]).sum();
                assert!((back - x[d]).abs() < 1e-9);
            }
            let by_weights: f64 = s.vertices.iter().zip(&lambda).map(|(&v, l)| l * values[v]).sum();
            assert!((general.evaluate(&x).unwrap() - by_weights).abs() < 1e-9);
        }
    }
}
