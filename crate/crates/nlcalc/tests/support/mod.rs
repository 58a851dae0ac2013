//! Shared test support: a brute-force reference evaluator for the
//! nonlocal operators and random field generators.
//!
//! The reference path is deliberately independent of the production
//! quadrature: radial integrals use geometrically graded panels in `r`
//! (no variable substitution) with fixed-order Gauss-Legendre per panel,
//! and the angular sets are built locally. Grading makes the integrable
//! `r^(sigma-1)` singularities harmless: the skipped innermost sliver is
//! at radius `delta * 0.75^560 ~ 1e-70 delta`.

// each test binary uses a different subset of these helpers
#![allow(dead_code)]

use nlcalc::fields::{AnalyticField, FieldEval};
use nlcalc::kernel::Kernel;
use nlcalc::operators::OperatorKind;
use nlcalc::quadrature::gauss_legendre;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const GRADE: f64 = 0.75;
const PANELS: i32 = 560;
const PANEL_ORDER: usize = 16;

/// Integrates a vector-valued radial profile over (0, delta] with
/// geometric grading toward the singular endpoint.
pub fn graded_radial<F>(mut f: F, m: usize, delta: f64) -> Vec<f64>
where
    F: FnMut(f64, &mut [f64]),
{
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for k in 0..PANELS {
        let b = delta * GRADE.powi(k);
        let a = b * GRADE;
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for i in 0..PANEL_ORDER {
            let r = mid + half * gx[i];
            let w = half * gw[i];
            f(r, &mut buf);
            for (acc_j, v) in acc.iter_mut().zip(&buf) {
                *acc_j += w * v;
            }
        }
    }
    acc
}

/// Scalar wrapper around [`graded_radial`].
pub fn graded_radial_scalar<F: FnMut(f64) -> f64>(mut f: F, delta: f64) -> f64 {
    graded_radial(|r, out| out[0] = f(r), 1, delta)[0]
}

fn directions(n: usize) -> Vec<([f64; 3], f64)> {
    match n {
        1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
        2 => {
            let s = 4096;
            (0..s)
                .map(|j| {
                    let phi = 2.0 * PI * j as f64 / s as f64;
                    ([phi.cos(), phi.sin(), 0.0], 2.0 * PI / s as f64)
                })
                .collect()
        }
        3 => {
            let (mu, wmu) = gauss_legendre(64);
            let nphi = 128;
            let mut dirs = vec![];
            for i in 0..64 {
                let st = (1.0 - mu[i] * mu[i]).sqrt();
                for j in 0..nphi {
                    let phi = 2.0 * PI * j as f64 / nphi as f64;
                    dirs.push((
                        [st * phi.cos(), st * phi.sin(), mu[i]],
                        wmu[i] * 2.0 * PI / nphi as f64,
                    ));
                }
            }
            dirs
        }
        _ => unreachable!(),
    }
}

/// Brute-force reference value of a nonlocal operator at a point.
pub fn oracle_operator<F: FieldEval + ?Sized>(
    field: &F,
    kind: OperatorKind,
    n: usize,
    p: f64,
    delta: f64,
    x: &[f64],
) -> Vec<f64> {
    let kernel = Kernel::new(n, p, delta).unwrap();
    let m_in = kind.input_components(n);
    let m_out = kind.output_components(n);
    assert_eq!(field.dim(), n);
    assert_eq!(field.components(), m_in);

    let mut ux = vec![0.0; m_in];
    field.eval_into(x, &mut ux);

    let mut out = vec![0.0; m_out];
    let mut y = [0.0; 3];
    let mut uy = vec![0.0; m_in];
    for (d, aw) in directions(n) {
        let contrib = graded_radial(
            |r, seg: &mut [f64]| {
                for k in 0..n {
                    y[k] = x[k] + r * d[k];
                }
                field.eval_into(&y[..n], &mut uy);
                let w = kernel.omega0 * r.powf(-p) * r.powi(n as i32 - 1);
                match kind {
                    OperatorKind::Divergence => {
                        let mut dot = 0.0;
                        for k in 0..n {
                            dot += (uy[k] - ux[k]) * d[k];
                        }
                        seg[0] = w * dot;
                    }
                    OperatorKind::Gradient => {
                        let du = uy[0] - ux[0];
                        for k in 0..n {
                            seg[k] = w * du * d[k];
                        }
                    }
                    OperatorKind::Curl => {
                        let du = [uy[0] - ux[0], uy[1] - ux[1], uy[2] - ux[2]];
                        seg[0] = w * (d[1] * du[2] - d[2] * du[1]);
                        seg[1] = w * (d[2] * du[0] - d[0] * du[2]);
                        seg[2] = w * (d[0] * du[1] - d[1] * du[0]);
                    }
                }
            },
            m_out,
            delta,
        );
        for (o, c) in out.iter_mut().zip(&contrib) {
            *o += aw * c;
        }
    }
    out
}

/// Random polynomial field of total degree <= 2 with coefficients in
/// [-1, 1].
pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize, m: usize) -> AnalyticField {
    let q: Vec<f64> = (0..m * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    AnalyticField::quadratic(n, m, q, b, c).unwrap()
}

/// Random point with coordinates in [-half, half].
pub fn random_point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half..half)).collect()
}
