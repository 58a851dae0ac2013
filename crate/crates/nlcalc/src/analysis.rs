//! Convergence studies and supporting analysis tools.
//!
//! A delta sweep evaluates a nonlocal operator on a fixed grid for a
//! decreasing ladder of horizons, measures the L^q distance to the exact
//! local operator, fits the observed order as the log-log slope, and
//! compares every row against the closed-form bound
//! `c0 delta^2 ||u||_{W^{3,q}}` with
//! `c0 = n (n - p + 1) alpha_n / (12 (n - p))`.
//!
//! The grid-based Hardy-Littlewood maximal function takes the sup over a
//! finite radius ladder of discrete ball averages; the finite ladder
//! under-approximates the true sup, which only makes the L^b bound check
//! conservative.

use crate::error::{Error, Result};
use crate::fields::{
    local_curl, local_divergence, local_gradient, sample_to_grid, sobolev_norms, AnalyticField,
    BoxDomain, FieldEval, FnField, GridFunction, Lq,
};
use crate::kernel::{unit_ball_volume, Kernel};
use crate::operators::{EvalPath, NonlocalOperatorSpec, OperatorKind};
use crate::quadrature::build_rule;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sobolev-norm convention recorded in every report.
pub const SOBOLEV_CONVENTION: &str =
    "W^{3,q} = (sum over |alpha| <= 3 and components of ||d^alpha u_i||_q^q)^(1/q) over the support box; q = inf takes the max over the same set";

/// Rows below this error are treated as exact (quadrature roundoff) and
/// excluded from rate fits.
pub const EXACTNESS_THRESHOLD: f64 = 1e-12;

/// Closed-form convergence constant `n (n - p + 1) alpha_n / (12 (n - p))`.
pub fn c0_constant(n: usize, p: f64) -> Result<f64> {
    let alpha_n = unit_ball_volume(n)?;
    if !p.is_finite() || p <= 0.0 || p >= n as f64 {
        return Err(Error::InvalidExponent { p, n });
    }
    let nf = n as f64;
    Ok(nf * (nf - p + 1.0) * alpha_n / (12.0 * (nf - p)))
}

/// L^q norm of a grid function over its valid region (vector values by
/// Euclidean magnitude per point). Finite q uses the vertex Riemann sum
/// with cell volume `prod h_k`; q = inf is the max.
pub fn lq_norm(g: &GridFunction, q: Lq) -> f64 {
    let cell: f64 = (0..g.n).map(|k| g.spacing(k)).product();
    let mut acc = 0.0f64;
    let mut sup = 0.0f64;
    for flat in 0..g.num_points() {
        if !g.is_valid(flat) {
            continue;
        }
        let mag = crate::kernel::norm(g.value(flat));
        sup = sup.max(mag);
        if let Lq::Finite(qv) = q {
            acc += mag.powf(qv) * cell;
        }
    }
    match q {
        Lq::Finite(qv) => acc.powf(1.0 / qv),
        Lq::Infinity => sup,
    }
}

/// L^q distance between two grid functions on the shared valid region.
pub fn lq_error(a: &GridFunction, b: &GridFunction, q: Lq) -> Result<f64> {
    if a.n != b.n || a.m != b.m || a.res != b.res || a.domain != b.domain {
        return Err(Error::GridMismatch(
            "lq_error needs identical box, resolution, and shape".into(),
        ));
    }
    let margin = a.margin.max(b.margin);
    let diff = GridFunction {
        domain: a.domain,
        res: a.res,
        n: a.n,
        m: a.m,
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x - y)
            .collect(),
        margin,
    };
    Ok(lq_norm(&diff, q))
}

/// Least-squares fit of `log error = log C + order * log delta`.
/// Returns `(order, log C)`; rows with error below
/// [`EXACTNESS_THRESHOLD`] are excluded.
pub fn rate_fit(rows: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(d, e)| *d > 0.0 && *e >= EXACTNESS_THRESHOLD)
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 2 usable rows, got {}",
            pts.len()
        )));
    }
    let nf = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let denom = nf * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::InvalidParameter(
            "rate fit is degenerate: all deltas equal".into(),
        ));
    }
    let order = (nf * sxy - sx * sy) / denom;
    let log_c = (sy - order * sx) / nf;
    Ok((order, log_c))
}

/// Grid metadata carried by reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureMeta {
    pub radial_order: usize,
    pub angular_order: usize,
}

/// One horizon in a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub error: f64,
    pub sobolev_norm: f64,
    /// c0 delta^2 ||u||_{W^{3,q}}
    pub bound: f64,
    pub ratio: f64,
}

/// Result of a delta sweep for one L^q exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub field: String,
    pub operator: String,
    pub n: usize,
    pub p: f64,
    pub q: Lq,
    pub rows: Vec<SweepRow>,
    /// Log-log slope, absent when the rows are exact.
    pub fitted_order: Option<f64>,
    /// Natural log of the fitted constant.
    pub fitted_log_constant: Option<f64>,
    /// True when every row sits at quadrature-roundoff level.
    pub exact: bool,
    pub c0: f64,
    pub all_rows_within_bound: bool,
    pub convention: String,
    pub quadrature: QuadratureMeta,
    pub grid: GridMeta,
}

pub const CSV_HEADER: &str = "delta,q,error,sobolev_norm,bound,ratio";

impl ConvergenceReport {
    /// CSV rows (no header) with round-trip-safe floats.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.delta, self.q, r.error, r.sobolev_norm, r.bound, r.ratio
            ));
        }
        out
    }
}

/// Header plus the concatenated rows of several reports.
pub fn reports_to_csv(reports: &[ConvergenceReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Configuration of a delta sweep.
pub struct SweepConfig<'a> {
    pub field: &'a AnalyticField,
    pub kind: OperatorKind,
    /// Kernel exponent p (the kernel itself is rebuilt per delta so the
    /// normalization holds at every horizon).
    pub p: f64,
    pub qs: Vec<Lq>,
    /// Strictly decreasing horizons, at least 3.
    pub deltas: Vec<f64>,
    pub eval_box: BoxDomain,
    pub resolution: usize,
    pub radial_order: usize,
    pub angular_order: usize,
}

/// Runs a sweep and produces one report per requested q.
pub fn convergence_sweep(cfg: &SweepConfig) -> Result<Vec<ConvergenceReport>> {
    let field = cfg.field;
    let n = field.n;
    if cfg.deltas.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "sweep needs at least 3 horizons, got {}",
            cfg.deltas.len()
        )));
    }
    if !cfg.deltas.windows(2).all(|w| w[0] > w[1]) || cfg.deltas.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidParameter(
            "sweep horizons must be positive and strictly decreasing".into(),
        ));
    }
    if cfg.eval_box.n != n {
        return Err(Error::GridMismatch(format!(
            "evaluation box dimension {} vs field dimension {n}",
            cfg.eval_box.n
        )));
    }
    let dmax = cfg.deltas[0];
    if !field.support_box.contains_padded(&cfg.eval_box, dmax) {
        return Err(Error::InvalidParameter(format!(
            "evaluation box must sit inside the field support box with {dmax} of padding"
        )));
    }
    if field.m != cfg.kind.input_components(n) {
        return Err(Error::FieldShapeMismatch {
            op: cfg.kind.name().into(),
            m: field.m,
            n,
            need: format!("{} component(s)", cfg.kind.input_components(n)),
        });
    }
    if cfg.qs.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one q".into()));
    }

    // exact local operator on the evaluation grid (horizon independent)
    let exact = sample_local_operator(field, cfg.kind, cfg.eval_box, cfg.resolution)?;

    // W^{3,q} norms, one pass over the support box
    let norms = sobolev_norms(field, &cfg.qs, 3)?;
    let c0 = c0_constant(n, cfg.p)?;

    // per-horizon errors
    let mut errors: Vec<Vec<f64>> = Vec::with_capacity(cfg.deltas.len());
    for &delta in &cfg.deltas {
        let kernel = Kernel::new(n, cfg.p, delta)?;
        let rule = build_rule(n, cfg.p, delta, cfg.radial_order, cfg.angular_order)?;
        let spec = NonlocalOperatorSpec::new(cfg.kind, kernel, rule, EvalPath::Direct)?;
        let nonlocal = spec.eval_on_grid(field, cfg.eval_box, cfg.resolution)?;
        let per_q: Result<Vec<f64>> = cfg
            .qs
            .iter()
            .map(|&q| lq_error(&nonlocal, &exact, q))
            .collect();
        errors.push(per_q?);
    }

    let grid = GridMeta {
        lo: cfg.eval_box.lo[..n].to_vec(),
        hi: cfg.eval_box.hi[..n].to_vec(),
        resolution: cfg.resolution,
    };
    let quadrature = QuadratureMeta {
        radial_order: cfg.radial_order,
        angular_order: cfg.angular_order,
    };

    let mut reports = Vec::with_capacity(cfg.qs.len());
    for (qi, &q) in cfg.qs.iter().enumerate() {
        let sob = norms[qi];
        let rows: Vec<SweepRow> = cfg
            .deltas
            .iter()
            .enumerate()
            .map(|(di, &delta)| {
                let error = errors[di][qi];
                let bound = c0 * delta * delta * sob;
                SweepRow {
                    delta,
                    error,
                    sobolev_norm: sob,
                    bound,
                    ratio: error / bound,
                }
            })
            .collect();
        let fit_rows: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.error)).collect();
        let usable = fit_rows
            .iter()
            .filter(|(_, e)| *e >= EXACTNESS_THRESHOLD)
            .count();
        let (fitted_order, fitted_log_constant, exact_flag) = if usable < 2 {
            (None, None, true)
        } else {
            let (o, c) = rate_fit(&fit_rows)?;
            (Some(o), Some(c), false)
        };
        let all_rows_within_bound = rows.iter().all(|r| r.ratio <= 1.0);
        reports.push(ConvergenceReport {
            field: field.name.clone(),
            operator: cfg.kind.name().into(),
            n,
            p: cfg.p,
            q,
            rows,
            fitted_order,
            fitted_log_constant,
            exact: exact_flag,
            c0,
            all_rows_within_bound,
            convention: SOBOLEV_CONVENTION.into(),
            quadrature: quadrature.clone(),
            grid: grid.clone(),
        });
    }
    Ok(reports)
}

/// Samples the classical operator of an analytic field on a grid.
pub fn sample_local_operator(
    field: &AnalyticField,
    kind: OperatorKind,
    domain: BoxDomain,
    resolution: usize,
) -> Result<GridFunction> {
    let n = field.n;
    if field.m != kind.input_components(n) || (kind == OperatorKind::Curl && n != 3) {
        return Err(Error::FieldShapeMismatch {
            op: kind.name().into(),
            m: field.m,
            n,
            need: format!("{} component(s)", kind.input_components(n)),
        });
    }
    match kind {
        OperatorKind::Divergence => sample_to_grid(
            &FnField {
                n,
                m: 1,
                f: |x: &[f64], out: &mut [f64]| {
                    out[0] = local_divergence(field, x).expect("shape checked");
                },
            },
            domain,
            resolution,
        ),
        OperatorKind::Gradient => sample_to_grid(
            &FnField {
                n,
                m: n,
                f: |x: &[f64], out: &mut [f64]| {
                    let g = local_gradient(field, x).expect("shape checked");
                    out.copy_from_slice(&g[..n]);
                },
            },
            domain,
            resolution,
        ),
        OperatorKind::Curl => sample_to_grid(
            &FnField {
                n,
                m: 3,
                f: |x: &[f64], out: &mut [f64]| {
                    let c = local_curl(field, x).expect("shape checked");
                    out.copy_from_slice(&c);
                },
            },
            domain,
            resolution,
        ),
    }
}

/// Ascending geometric radius ladder ending at `r_max`.
pub fn geometric_radii(r_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    let mut radii: Vec<f64> = (0..count)
        .map(|k| r_max / ratio.powi((count - 1 - k) as i32))
        .collect();
    radii.dedup();
    radii
}

/// Discrete Hardy-Littlewood maximal function: at each grid point, the
/// max over the radius ladder of the average of the grid values over the
/// lattice ball of that radius, clipped to the grid (both the sum and
/// the ball measure), so constants are reproduced exactly everywhere.
pub fn maximal_function(g: &GridFunction, radii: &[f64]) -> Result<GridFunction> {
    if g.m != 1 {
        return Err(Error::GridMismatch(
            "maximal function expects a scalar grid of |f| values".into(),
        ));
    }
    if radii.is_empty() {
        return Err(Error::InvalidParameter("radius ladder is empty".into()));
    }
    let half_width = (0..g.n).map(|k| g.domain.width(k)).fold(f64::MAX, f64::min) / 2.0;
    for &r in radii {
        if !(r > 0.0 && r <= half_width) {
            return Err(Error::InvalidParameter(format!(
                "radii must lie in (0, half box width = {half_width}], got {r}"
            )));
        }
    }
    let n = g.n;
    let res = g.res;
    let h: Vec<f64> = (0..n).map(|k| g.spacing(k)).collect();
    let row_len = res[n - 1];
    let n_rows: usize = res[..n - 1].iter().product::<usize>().max(1);

    // prefix sums along the last (contiguous) axis
    let mut prefix = vec![0.0f64; n_rows * (row_len + 1)];
    for row in 0..n_rows {
        let src = &g.values[row * row_len..(row + 1) * row_len];
        let dst = &mut prefix[row * (row_len + 1)..(row + 1) * (row_len + 1)];
        for i in 0..row_len {
            dst[i + 1] = dst[i] + src[i];
        }
    }

    // per-radius plans: transverse row offsets with segment half-widths
    struct Plan {
        segs: Vec<([i64; 2], i64)>, // (row offsets along axes 0..n-1, half width)
    }
    let hrow = h[n - 1];
    let plans: Vec<Plan> = radii
        .iter()
        .map(|&r| {
            let mut segs = vec![];
            let bound = |k: usize| (r / h[k]).floor() as i64;
            let mut push = |d: [i64; 2], t2: f64| {
                if t2 >= 0.0 {
                    let w = (t2.sqrt() / hrow).floor() as i64;
                    segs.push((d, w));
                }
            };
            match n {
                1 => push([0, 0], r * r),
                2 => {
                    for d0 in -bound(0)..=bound(0) {
                        let y = d0 as f64 * h[0];
                        push([d0, 0], r * r - y * y);
                    }
                }
                _ => {
                    for d0 in -bound(0)..=bound(0) {
                        for d1 in -bound(1)..=bound(1) {
                            let y0 = d0 as f64 * h[0];
                            let y1 = d1 as f64 * h[1];
                            push([d0, d1], r * r - y0 * y0 - y1 * y1);
                        }
                    }
                }
            }
            Plan { segs }
        })
        .collect();

    let row_index = |i0: i64, i1: i64| -> Option<usize> {
        match n {
            1 => Some(0),
            2 => (i0 >= 0 && (i0 as usize) < res[0]).then_some(i0 as usize),
            _ => (i0 >= 0 && (i0 as usize) < res[0] && i1 >= 0 && (i1 as usize) < res[1])
                .then_some(i0 as usize * res[1] + i1 as usize),
        }
    };

    let values: Vec<f64> = (0..n_rows)
        .into_par_iter()
        .flat_map_iter(|row| {
            let (i0, i1) = match n {
                1 => (0i64, 0i64),
                2 => (row as i64, 0),
                _ => ((row / res[1]) as i64, (row % res[1]) as i64),
            };
            let mut out = vec![0.0f64; row_len];
            for (i2, o) in out.iter_mut().enumerate() {
                let mut best = 0.0f64;
                for plan in &plans {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for &(d, w) in &plan.segs {
                        let Some(r_idx) = row_index(i0 + d[0], i1 + d[1]) else {
                            continue;
                        };
                        let lo = (i2 as i64 - w).max(0) as usize;
                        let hi = ((i2 as i64 + w + 1).min(row_len as i64)) as usize;
                        if lo < hi {
                            let p = &prefix[r_idx * (row_len + 1)..];
                            sum += p[hi] - p[lo];
                            count += hi - lo;
                        }
                    }
                    if count > 0 {
                        best = best.max(sum / count as f64);
                    }
                }
                *o = best;
            }
            out
        })
        .collect();

    Ok(GridFunction {
        domain: g.domain,
        res: g.res,
        n,
        m: 1,
        values,
        margin: 0,
    })
}

/// L^b bound data for the maximal function of a field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximalReport {
    pub b: f64,
    pub norm_f: f64,
    pub norm_mf: f64,
    /// `||Mf||_b / ||f||_b`; absent for the zero field.
    pub ratio: Option<f64>,
    pub grid: GridMeta,
    pub radii: Vec<f64>,
}

/// Samples |f|, computes Mf, and reports the L^b norm ratio. Requires
/// b > 1 (the maximal inequality fails at b = 1).
pub fn maximal_bound_check(
    f: &AnalyticField,
    b: f64,
    domain: BoxDomain,
    resolution: usize,
    radii: &[f64],
) -> Result<MaximalReport> {
    if !(b.is_finite() && b > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "maximal bound check requires b > 1, got {b}"
        )));
    }
    if f.m != 1 {
        return Err(Error::FieldShapeMismatch {
            op: "maximal".into(),
            m: f.m,
            n: f.n,
            need: "m = 1".into(),
        });
    }
    let absf = FnField {
        n: f.n,
        m: 1,
        f: |x: &[f64], out: &mut [f64]| {
            let mut v = [0.0f64];
            f.eval_into(x, &mut v);
            out[0] = v[0].abs();
        },
    };
    let g = sample_to_grid(&absf, domain, resolution)?;
    let mf = maximal_function(&g, radii)?;

    if mf.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "maximal function".into(),
        });
    }
    // Mf dominates the smallest-ball average pointwise by construction;
    // verify against an independent single-radius pass.
    let rmin = radii.iter().cloned().fold(f64::MAX, f64::min);
    let smallest = maximal_function(&g, &[rmin])?;
    for (a, b) in mf.values.iter().zip(&smallest.values) {
        if *a < *b - 1e-12 {
            return Err(Error::Internal(
                "maximal function fell below the smallest-ball average".into(),
            ));
        }
    }

    let q = Lq::Finite(b);
    let norm_f = lq_norm(&g, q);
    let norm_mf = lq_norm(&mf, q);
    let ratio = (norm_f > 0.0).then(|| norm_mf / norm_f);
    Ok(MaximalReport {
        b,
        norm_f,
        norm_mf,
        ratio,
        grid: GridMeta {
            lo: domain.lo[..f.n].to_vec(),
            hi: domain.hi[..f.n].to_vec(),
            resolution,
        },
        radii: radii.to_vec(),
    })
}
