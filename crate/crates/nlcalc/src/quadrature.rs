//! Quadrature over the horizon ball for kernel-weighted integrands.
//!
//! The radial direction is handled by a power substitution `r = u^E`
//! chosen so that the kernel singularity `r^-p` is absorbed analytically:
//! the transformed radial weight is `E u^(E(n-p)-1)`, which is bounded
//! whenever `E (n-p) >= 1`. When `p` is rational with a small denominator
//! `D`, we take `E = D`, which makes every moment integrand
//! `r^(n-1-p+s)` (kernel-weighted) and `r^(n-1+s)` (plain Lebesgue) a
//! polynomial in `u`, so a Gauss-Legendre rule of modest order integrates
//! them exactly. For `n - p = 1/k` this coincides with the substitution
//! `u = r^(n-p)`, which is also the fallback for unrecognizably
//! irrational `p`.
//!
//! Rules carry plain Lebesgue weights; the kernel is supplied by the
//! integrand. Nodes come in antipodal pairs stored adjacently, so odd
//! integrands cancel pairwise with no accumulated roundoff.

use crate::error::{Error, Result};
use crate::kernel::{norm, unit_ball_volume, Kernel};
use std::f64::consts::PI;

/// Nodes (ascending) and weights of the `m`-point Gauss-Legendre rule on
/// [-1, 1], computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        // Tricomi-style initial guess, then Newton with one polish step.
        let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        loop {
            let (p, dp) = legendre_with_derivative(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (p, dp) = legendre_with_derivative(m, x);
        x -= p / dp;
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // mirror for exact symmetry
        nodes[i] = -x.abs();
        nodes[m - 1 - i] = x.abs();
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Smallest `d <= max_den` with `d * x` within `tol` of an integer.
pub(crate) fn rational_denominator(x: f64, max_den: usize, tol: f64) -> Option<usize> {
    (1..=max_den).find(|&d| {
        let y = x * d as f64;
        (y - y.round()).abs() < tol
    })
}

/// Quadrature rule over the ball of radius `delta`, tailored to
/// integrands with an `|x|^-p` singularity at the origin.
#[derive(Debug, Clone)]
pub struct BallQuadratureRule {
    /// Dimension the rule was built for.
    pub n: usize,
    /// Kernel exponent the radial map absorbs.
    pub p: f64,
    /// Ball radius.
    pub delta: f64,
    /// Number of radial Gauss-Legendre points.
    pub radial_order: usize,
    /// Angular order parameter (see [`build_rule`]).
    pub angular_order: usize,
    /// Quadrature nodes; antipodal pairs are adjacent. Coordinates beyond
    /// `n` are zero.
    pub nodes: Vec<[f64; 3]>,
    /// Plain Lebesgue weights (kernel not folded in).
    pub weights: Vec<f64>,
}

/// Builds the product rule: power-map radial Gauss-Legendre of order `m`
/// times an antipodally symmetric angular set of order `s`.
///
/// Angular sets: `n = 1` uses the two directions +-1; `n = 2` uses `s`
/// equispaced angles (rounded up to even so the set is closed under
/// negation); `n = 3` uses Gauss-Legendre of order `s` in cos(theta)
/// (rounded up to even) times `2s` equispaced azimuths.
pub fn build_rule(
    n: usize,
    p: f64,
    delta: f64,
    radial_order: usize,
    angular_order: usize,
) -> Result<BallQuadratureRule> {
    let kernel = Kernel::new(n, p, delta)?; // validates (n, p, delta)
    let _ = kernel;
    if radial_order < 1 || angular_order < 1 {
        return Err(Error::InvalidQuadratureOrder {
            radial: radial_order,
            angular: angular_order,
        });
    }

    // Radial map r = u^E with Lebesgue weight E u^(En-1) du on [0, delta^(1/E)].
    let exponent = radial_map_exponent(n, p);
    let u_max = delta.powf(1.0 / exponent);
    let (gx, gw) = gauss_legendre(radial_order);
    let mut radial = Vec::with_capacity(radial_order);
    for i in 0..radial_order {
        let u = 0.5 * (gx[i] + 1.0) * u_max;
        let v = 0.5 * gw[i] * u_max;
        let r = u.powf(exponent);
        let w = v * exponent * u.powf(exponent * n as f64 - 1.0);
        radial.push((r, w));
    }

    // Half set of directions with angular weights; the mirrored half is
    // emitted alongside each node.
    let dirs = half_directions(n, angular_order);

    let mut nodes = Vec::with_capacity(2 * radial.len() * dirs.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for &(d, aw) in &dirs {
        for &(r, rw) in &radial {
            let node = [r * d[0], r * d[1], r * d[2]];
            let w = rw * aw;
            nodes.push(node);
            weights.push(w);
            nodes.push([-node[0], -node[1], -node[2]]);
            weights.push(w);
        }
    }

    Ok(BallQuadratureRule {
        n,
        p,
        delta,
        radial_order,
        angular_order,
        nodes,
        weights,
    })
}

/// Exponent E of the radial map r = u^E.
fn radial_map_exponent(n: usize, p: f64) -> f64 {
    match rational_denominator(p, 64, 1e-9) {
        Some(d) => d as f64,
        // u = r^(n-p): absorbs the singularity exactly, accuracy degrades
        // gracefully for irrational p.
        None => 1.0 / (n as f64 - p),
    }
}

pub(crate) fn half_directions(n: usize, s: usize) -> Vec<([f64; 3], f64)> {
    match n {
        1 => vec![([1.0, 0.0, 0.0], 1.0)],
        2 => {
            let s_eff = (s + s % 2).max(2);
            let half = s_eff / 2;
            let w = 2.0 * PI / s_eff as f64;
            (0..half)
                .map(|j| {
                    let phi = 2.0 * PI * j as f64 / s_eff as f64;
                    ([phi.cos(), phi.sin(), 0.0], w)
                })
                .collect()
        }
        3 => {
            let s_eff = (s + s % 2).max(2);
            let (mu, mw) = gauss_legendre(s_eff);
            let n_phi = 2 * s_eff;
            let wphi = 2.0 * PI / n_phi as f64;
            let mut dirs = Vec::with_capacity(s_eff / 2 * n_phi);
            for i in 0..s_eff {
                if mu[i] <= 0.0 {
                    continue; // mirrored half covers these
                }
                let sin_theta = (1.0 - mu[i] * mu[i]).sqrt();
                for j in 0..n_phi {
                    let phi = 2.0 * PI * j as f64 / n_phi as f64;
                    dirs.push((
                        [sin_theta * phi.cos(), sin_theta * phi.sin(), mu[i]],
                        mw[i] * wphi,
                    ));
                }
            }
            dirs
        }
        _ => unreachable!("dimension validated at construction"),
    }
}

impl BallQuadratureRule {
    /// Applies the rule: sum of `weight * f(node)`. Non-finite integrand
    /// values are an error.
    pub fn integrate<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut acc = 0.0;
        for (node, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(&node[..self.n]);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("integrand at node {:?}", &node[..self.n]),
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    pub(crate) fn check_kernel(&self, kernel: &Kernel) -> Result<()> {
        if kernel.n != self.n || kernel.p != self.p || kernel.delta != self.delta {
            return Err(Error::RuleKernelMismatch {
                rule_n: self.n,
                rule_p: self.p,
                rule_delta: self.delta,
                n: kernel.n,
                p: kernel.p,
                delta: kernel.delta,
            });
        }
        Ok(())
    }

    /// Numeric moment `integral of x^alpha omega(x) x_j/|x|` over the
    /// ball. `alpha` is a multi-index with |alpha| <= 3 and `j` is a
    /// zero-based component index.
    pub fn moment(&self, kernel: &Kernel, alpha: [u8; 3], j: usize) -> Result<f64> {
        self.check_kernel(kernel)?;
        let total: u8 = alpha.iter().sum();
        if total > 3 {
            return Err(Error::InvalidParameter(format!(
                "moment multi-index {alpha:?} has order {total} > 3"
            )));
        }
        if j >= self.n {
            return Err(Error::InvalidParameter(format!(
                "component index {j} out of range for n = {}",
                self.n
            )));
        }
        self.integrate(|x| {
            let r = norm(x);
            let mut v = kernel.eval_radius(r) * x[j] / r;
            for (k, &a) in alpha.iter().enumerate().take(self.n) {
                v *= x[k].powi(a as i32);
            }
            v
        })
    }

    /// Sum of the Lebesgue weights; equals the ball volume up to roundoff.
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Convenience wrapper matching the ball volume `alpha_n delta^n`.
pub fn ball_volume(n: usize, delta: f64) -> Result<f64> {
    Ok(unit_ball_volume(n)? * delta.powi(n as i32))
}
