//! Power-law influence function with second-moment normalization.
//!
//! The kernel is `omega(x) = omega0 / |x|^p` inside the ball of radius
//! `delta` and zero outside. The constant `omega0` is fixed by the
//! second-moment condition `integral of x_j omega(x) x_j/|x| over the
//! ball = 1`, which makes the nonlocal operators reproduce first
//! derivatives exactly on linear fields.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Volume of the unit ball in dimension `n` (supported: 1, 2, 3).
pub fn unit_ball_volume(n: usize) -> Result<f64> {
    match n {
        1 => Ok(2.0),
        2 => Ok(PI),
        3 => Ok(4.0 * PI / 3.0),
        other => Err(Error::InvalidDimension(other)),
    }
}

/// Radial power-law kernel on the `delta`-ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// Spatial dimension (1, 2, or 3).
    pub n: usize,
    /// Singularity exponent, 0 < p < n.
    pub p: f64,
    /// Horizon (interaction radius), delta > 0.
    pub delta: f64,
    /// Normalization constant, (n - p + 1) / (alpha_n delta^(n-p+1)).
    pub omega0: f64,
    /// Unit-ball volume in dimension `n`.
    pub alpha_n: f64,
}

impl Kernel {
    /// Builds a kernel with the second-moment normalization.
    pub fn new(n: usize, p: f64, delta: f64) -> Result<Self> {
        let alpha_n = unit_ball_volume(n)?;
        if !p.is_finite() || p <= 0.0 || p >= n as f64 {
            return Err(Error::InvalidExponent { p, n });
        }
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidHorizon(delta));
        }
        let np1 = n as f64 - p + 1.0;
        let omega0 = np1 / (alpha_n * delta.powf(np1));
        Ok(Kernel {
            n,
            p,
            delta,
            omega0,
            alpha_n,
        })
    }

    /// Kernel value at radius `r > 0`. Zero at or beyond the horizon.
    ///
    /// This is the hot path used by quadrature rules, whose nodes never
    /// sit at the origin.
    #[inline]
    pub fn eval_radius(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0);
        if r >= self.delta {
            0.0
        } else {
            self.omega0 * r.powf(-self.p)
        }
    }

    /// Kernel value at a point. Evaluation exactly at the origin is an
    /// error rather than +inf.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::KernelSingularity);
        }
        Ok(self.eval_radius(r))
    }

    /// Closed-form L^a norm of the kernel over the delta-ball,
    /// `(omega0^a n alpha_n delta^(n - a p) / (n - a p))^(1/a)`.
    ///
    /// Requires 1 <= a < n/p; at a = n/p the norm diverges.
    pub fn la_norm_exact(&self, a: f64) -> Result<f64> {
        let n = self.n as f64;
        let limit = n / self.p;
        if !a.is_finite() || a < 1.0 || a >= limit {
            return Err(Error::DivergentNorm { a, limit });
        }
        let e = n - a * self.p;
        Ok((self.omega0.powf(a) * n * self.alpha_n * self.delta.powf(e) / e).powf(1.0 / a))
    }

    /// Closed form of the second moment `integral x_j omega(x) x_j/|x|`,
    /// `omega0 alpha_n delta^(n-p+1) / (n-p+1)`. Equals 1 for kernels
    /// built by [`Kernel::new`]; linear in `omega0` otherwise.
    pub fn second_moment_exact(&self) -> f64 {
        let np1 = self.n as f64 - self.p + 1.0;
        self.omega0 * self.alpha_n * self.delta.powf(np1) / np1
    }
}

/// Euclidean norm of a coordinate slice.
#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn omega0_direct_substitution() {
        let k = Kernel::new(1, 0.5, 1.0).unwrap();
        assert_relative_eq!(k.omega0, 0.75, max_relative = 1e-15);

        let k = Kernel::new(2, 1.0, 0.5).unwrap();
        assert_relative_eq!(k.omega0, 8.0 / PI, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            Kernel::new(1, 1.5, 1.0),
            Err(Error::InvalidExponent { .. })
        ));
        assert!(matches!(
            Kernel::new(1, 1.0, 1.0),
            Err(Error::InvalidExponent { .. })
        ));
        assert!(matches!(
            Kernel::new(2, -0.5, 1.0),
            Err(Error::InvalidExponent { .. })
        ));
        assert!(matches!(
            Kernel::new(2, 1.0, 0.0),
            Err(Error::InvalidHorizon(_))
        ));
        assert!(matches!(
            Kernel::new(2, 1.0, -2.0),
            Err(Error::InvalidHorizon(_))
        ));
        assert!(matches!(Kernel::new(4, 1.0, 1.0), Err(Error::InvalidDimension(4))));
    }

    #[test]
    fn eval_inside_outside_origin() {
        let k = Kernel::new(1, 0.5, 1.0).unwrap();
        assert_relative_eq!(k.eval(&[0.25]).unwrap(), 1.5, max_relative = 1e-15);

        let k2 = Kernel::new(2, 1.0, 0.5).unwrap();
        // outside the horizon
        assert_eq!(k2.eval(&[0.6, 0.0]).unwrap(), 0.0);
        assert_eq!(k2.eval(&[0.5, 0.0]).unwrap(), 0.0);
        // |x| = 0.1
        assert_relative_eq!(
            k2.eval(&[0.1, 0.0]).unwrap(),
            (8.0 / PI) / 0.1,
            max_relative = 1e-14
        );
        assert!(matches!(
            k2.eval(&[0.0, 0.0]),
            Err(Error::KernelSingularity)
        ));
    }

    #[test]
    fn radial_symmetry() {
        let k = Kernel::new(2, 0.75, 0.3).unwrap();
        let r = 0.21f64;
        let a = k.eval(&[r, 0.0]).unwrap();
        let b = k.eval(&[r / 2f64.sqrt(), r / 2f64.sqrt()]).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn la_norm_closed_forms() {
        let k = Kernel::new(1, 0.5, 1.0).unwrap();
        assert_relative_eq!(k.la_norm_exact(1.0).unwrap(), 3.0, max_relative = 1e-14);

        let k = Kernel::new(2, 1.0, 0.5).unwrap();
        assert_relative_eq!(k.la_norm_exact(1.0).unwrap(), 8.0, max_relative = 1e-14);
        // a = n/p = 2 diverges
        assert!(matches!(
            k.la_norm_exact(2.0),
            Err(Error::DivergentNorm { .. })
        ));
        assert!(matches!(
            k.la_norm_exact(0.5),
            Err(Error::DivergentNorm { .. })
        ));
    }

    #[test]
    fn second_moment_is_one_by_construction() {
        for (n, p, delta) in [
            (1, 0.5, 1.0),
            (1, 0.5, 2.0),
            (1, 0.9, 0.05),
            (2, 1.0, 0.5),
            (2, 0.3, 3.0),
            (3, 1.5, 0.1),
            (3, 2.5, 7.0),
        ] {
            let k = Kernel::new(n, p, delta).unwrap();
            assert_relative_eq!(k.second_moment_exact(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn second_moment_linear_in_omega0() {
        let mut k = Kernel::new(1, 0.5, 2.0).unwrap();
        k.omega0 *= 2.0;
        assert_relative_eq!(k.second_moment_exact(), 2.0, max_relative = 1e-14);
    }

    proptest! {
        // omega0(delta) * delta^(n-p+1) is constant in delta for fixed (n, p).
        #[test]
        fn scaling_law(n in 1usize..=3, pfrac in 0.05f64..0.95, d1 in 0.01f64..10.0, d2 in 0.01f64..10.0) {
            let p = pfrac * n as f64;
            let k1 = Kernel::new(n, p, d1).unwrap();
            let k2 = Kernel::new(n, p, d2).unwrap();
            let np1 = n as f64 - p + 1.0;
            let c1 = k1.omega0 * d1.powf(np1);
            let c2 = k2.omega0 * d2.powf(np1);
            prop_assert!((c1 - c2).abs() <= 1e-12 * c1.abs().max(c2.abs()));
        }

        // compact support
        #[test]
        fn support_is_the_ball(r in 1.0f64..100.0) {
            let k = Kernel::new(2, 1.0, 1.0).unwrap();
            prop_assert_eq!(k.eval(&[r, 0.0]).unwrap(), 0.0);
        }
    }
}
