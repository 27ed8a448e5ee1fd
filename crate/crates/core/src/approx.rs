//! Approximate derivatives of grid fields and the weak differentiability quotient.
//!
//! The approximate derivative at `y` is estimated by a trimmed least-squares
//! affine fit over balls `B_r(y)`. Trimming discards at most a fixed fraction of
//! the worst-fitting cells, a finite stand-in for a bad set of vanishing
//! density. A radius passes when the kept residuals are small compared with the
//! fitted slope; the estimate is accepted at the smallest radius that passes
//! together with the next one and whose linear map agrees with it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unit_ball_volume, Point, MAX_DIM};
use crate::grid::{Grid, GridField};
use crate::norms::{weak_lp_seminorm_cells, Heights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    /// Radii in units of the grid spacing, increasing.
    pub radii_cells: Vec<f64>,
    /// Largest fraction of cells that trimming may discard.
    pub trim: f64,
    /// Largest accepted `residual / |L|`.
    pub threshold: f64,
    /// Relative agreement required between consecutive radii.
    pub stability: f64,
    /// Slopes below `flat_tol * scale / r` count as zero.
    pub flat_tol: f64,
}

impl Default for ApproxParams {
    fn default() -> Self {
        ApproxParams {
            radii_cells: vec![4.0, 8.0, 16.0, 32.0],
            trim: 0.05,
            threshold: 0.25,
            stability: 0.01,
            flat_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxDerivative {
    pub point: Point,
    /// Row-major `rows x dim`; one row per component of the field.
    pub linear_map: Vec<f64>,
    pub rows: usize,
    /// Fitted value at `point`.
    pub value: Vec<f64>,
    pub good_fraction: f64,
    /// Largest kept residual divided by the radius.
    pub residual: f64,
    pub radius: f64,
    pub valid: bool,
}

impl ApproxDerivative {
    pub fn dim(&self) -> usize {
        self.point.dim()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.linear_map[row * self.dim() + col]
    }

    /// Trace of a square linear map.
    pub fn trace(&self) -> Option<f64> {
        (self.rows == self.dim()).then(|| (0..self.rows).map(|i| self.entry(i, i)).sum())
    }

    pub fn frobenius(&self) -> f64 {
        self.linear_map.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Only residuals above this multiple of the median are trimmed, so smooth
/// fields keep their symmetric fits.
const OUTLIER_FACTOR: f64 = 10.0;

struct Fit {
    value: Vec<f64>,
    slope: Vec<f64>,
    good_fraction: f64,
    residual: f64,
    scale: f64,
}

/// Cells whose centers lie in the open ball `B_r(y)`.
fn ball_cells(grid: &Grid, y: &Point, r: f64) -> Vec<usize> {
    let dim = grid.dim();
    let lo = grid.bounds().lo();
    let mut range = [(0usize, 0usize); MAX_DIM];
    for a in 0..dim {
        let h = grid.spacing(a);
        let n = grid.cells()[a] as i64;
        let i0 = (((y.get(a) - r - lo.get(a)) / h).floor() as i64 - 1).clamp(0, n - 1);
        let i1 = (((y.get(a) + r - lo.get(a)) / h).ceil() as i64 + 1).clamp(0, n - 1);
        range[a] = (i0 as usize, i1 as usize);
    }
    let r2 = r * r;
    let mut out = Vec::new();
    let (k0, k1) = if dim == 3 { range[2] } else { (0, 0) };
    let (j0, j1) = if dim >= 2 { range[1] } else { (0, 0) };
    for k in k0..=k1 {
        for j in j0..=j1 {
            for i in range[0].0..=range[0].1 {
                let idx = [i, j, k];
                let c = grid.center_of(&idx[..dim]);
                if c.sub(y).norm2() < r2 {
                    out.push(grid.flat(&idx[..dim]));
                }
            }
        }
    }
    out
}

/// Solves the symmetric system `a x = b` for several right-hand sides in place.
fn solve(mut a: Vec<f64>, n: usize, b: &mut [Vec<f64>]) -> Option<()> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            for rhs in b.iter_mut() {
                rhs.swap(piv, col);
            }
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for rhs in b.iter_mut() {
                rhs[row] -= f * rhs[col];
            }
        }
    }
    for rhs in b.iter_mut() {
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in row + 1..n {
                s -= a[row * n + k] * rhs[k];
            }
            rhs[row] = s / a[row * n + row];
        }
    }
    Some(())
}

/// Least-squares affine fit of the listed cells; offsets are scaled by `r`.
fn affine_fit(field: &GridField, y: &Point, r: f64, cells: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = y.dim();
    let m = field.components();
    let n = dim + 1;
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![vec![0.0; n]; m];
    let grid = field.grid();
    let mut row = [0.0; MAX_DIM + 1];
    for &c in cells {
        let x = grid.center(c);
        row[0] = 1.0;
        for a in 0..dim {
            row[a + 1] = (x.get(a) - y.get(a)) / r;
        }
        for i in 0..n {
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
        let v = field.vector(c);
        for (comp, rhs) in atb.iter_mut().enumerate() {
            for i in 0..n {
                rhs[i] += row[i] * v[comp];
            }
        }
    }
    solve(ata, n, &mut atb)?;
    let value = atb.iter().map(|c| c[0]).collect();
    let slope = atb
        .iter()
        .flat_map(|c| c[1..].iter().map(|s| s / r).collect::<Vec<_>>())
        .collect();
    Some((value, slope))
}

fn residuals(field: &GridField, y: &Point, cells: &[usize], value: &[f64], slope: &[f64]) -> Vec<f64> {
    let dim = y.dim();
    let grid = field.grid();
    cells
        .iter()
        .map(|&c| {
            let x = grid.center(c);
            let v = field.vector(c);
            let mut s = 0.0;
            for (comp, vc) in v.iter().enumerate() {
                let mut t = value[comp];
                for a in 0..dim {
                    t += slope[comp * dim + a] * (x.get(a) - y.get(a));
                }
                s += (vc - t) * (vc - t);
            }
            s.sqrt()
        })
        .collect()
}

fn trimmed_fit(field: &GridField, y: &Point, r: f64, trim: f64) -> Option<Fit> {
    let mut cells = ball_cells(field.grid(), y, r);
    let total = cells.len();
    if total < y.dim() + 2 || cells.iter().any(|&c| field.vector(c).iter().any(|v| !v.is_finite())) {
        return None;
    }
    let scale = cells
        .iter()
        .flat_map(|&c| field.vector(c).iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let (mut value, mut slope) = affine_fit(field, y, r, &cells)?;
    let res = residuals(field, y, &cells, &value, &slope);
    let mut sorted = res.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max_drop = (trim * total as f64).floor() as usize;
    let cut = sorted[total - 1 - max_drop.min(total - 1)].max(OUTLIER_FACTOR * median).max(1e-12 * scale);
    let keep: Vec<usize> = cells
        .iter()
        .zip(&res)
        .filter(|(_, &e)| e <= cut)
        .map(|(&c, _)| c)
        .collect();
    if keep.len() < total && keep.len() >= y.dim() + 2 {
        cells = keep;
        (value, slope) = affine_fit(field, y, r, &cells)?;
    }
    let kept = residuals(field, y, &cells, &value, &slope);
    let worst = kept.iter().copied().fold(0.0, f64::max);
    Some(Fit {
        value,
        slope,
        good_fraction: cells.len() as f64 / total as f64,
        residual: worst / r,
        scale,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Approximate derivative of `v` at `y`.
///
/// Returns `valid = false`, carrying the fit at the largest radius, when no
/// radius passes; errors only when `y` is too close to the grid boundary.
pub fn approx_derivative(v: &GridField, y: &Point, params: &ApproxParams) -> Result<ApproxDerivative> {
    let grid = v.grid();
    if y.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: y.dim(),
        });
    }
    if params.radii_cells.is_empty() {
        return Err(Error::EmptySchedule);
    }
    if !(params.trim >= 0.0 && params.trim < 1.0) {
        return Err(Error::InvalidParameter(format!("trim must lie in [0, 1) (got {})", params.trim)));
    }
    let h = grid
        .cubic_spacing()
        .ok_or_else(|| Error::Precondition("approximate derivatives need a cubic grid".into()))?;
    let radii: Vec<f64> = params.radii_cells.iter().map(|c| c * h).collect();
    let rmax = radii.iter().copied().fold(0.0, f64::max);
    let b = grid.bounds();
    for a in 0..grid.dim() {
        if y.get(a) - rmax < b.lo().get(a) || y.get(a) + rmax > b.hi().get(a) {
            return Err(Error::Precondition(format!(
                "point must be interior to the grid by at least {rmax}"
            )));
        }
    }

    let passes = |f: &Fit, r: f64| -> bool {
        let floor = params.flat_tol * f.scale / r;
        f.residual <= params.threshold * norm(&f.slope).max(floor) || f.residual * r <= 1e-12 * f.scale
    };
    let mut prev: Option<(Fit, f64, bool)> = None;
    let mut last: Option<(Fit, f64)> = None;
    for &r in &radii {
        let fit = trimmed_fit(v, y, r, params.trim);
        let Some(fit) = fit else {
            prev = None;
            continue;
        };
        let ok = passes(&fit, r);
        if let Some((pf, pr, pok)) = prev.take() {
            let diff: Vec<f64> = pf.slope.iter().zip(&fit.slope).map(|(a, b)| a - b).collect();
            let tol = params.stability * norm(&pf.slope).max(norm(&fit.slope)) + params.flat_tol * fit.scale / r;
            if pok && ok && norm(&diff) <= tol {
                return Ok(build(y, v.components(), pf, pr, true));
            }
            last = Some((pf, pr));
        }
        prev = Some((fit, r, ok));
    }
    let (fit, r) = match (prev, last) {
        (Some((f, r, _)), _) => (f, r),
        (None, Some(l)) => l,
        (None, None) => {
            return Ok(ApproxDerivative {
                point: *y,
                linear_map: vec![f64::NAN; v.components() * y.dim()],
                rows: v.components(),
                value: vec![f64::NAN; v.components()],
                good_fraction: 0.0,
                residual: f64::INFINITY,
                radius: rmax,
                valid: false,
            })
        }
    };
    Ok(build(y, v.components(), fit, r, false))
}

fn build(y: &Point, rows: usize, f: Fit, r: f64, valid: bool) -> ApproxDerivative {
    ApproxDerivative {
        point: *y,
        linear_map: f.slope,
        rows,
        value: f.value,
        good_fraction: f.good_fraction,
        residual: f.residual,
        radius: r,
        valid,
    }
}

/// `d_N = |B_1|^{(N-1)/N}`, so that `||1||` in weak `L^{N/(N-1)}(B_r)` is `d_N r^{N-1}`.
pub fn weak_unit_norm_constant(dim: usize) -> f64 {
    unit_ball_volume(dim).powf((dim as f64 - 1.0) / dim as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientPoint {
    pub r: f64,
    pub q: f64,
}

/// `q(r) = r^{-1} ||v - T||_{L^p_w(B_r(y))} / (d_N r^{N-1})` with `p = N/(N-1)`
/// and `T(x) = value + L (x - y)`, for any affine map.
pub fn taylor_quotient(v: &GridField, y: &Point, value: f64, linear: &[f64], radii: &[f64]) -> Result<Vec<QuotientPoint>> {
    let grid = v.grid();
    let dim = grid.dim();
    if v.components() != 1 || linear.len() != dim {
        return Err(Error::Precondition("the quotient needs a scalar field and a 1 x N map".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidParameter("the quotient needs N >= 2".into()));
    }
    if radii.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let p = dim as f64 / (dim as f64 - 1.0);
    let dn = weak_unit_norm_constant(dim);
    radii
        .iter()
        .map(|&r| {
            let cells = ball_cells(grid, y, r);
            let vals: Vec<f64> = cells
                .iter()
                .map(|&c| {
                    let x = grid.center(c);
                    let t: f64 = value + (0..dim).map(|a| linear[a] * (x.get(a) - y.get(a))).sum::<f64>();
                    v.get(c) - t
                })
                .collect();
            let s = weak_lp_seminorm_cells(&vals, grid.cell_volume(), p, &Heights::Exact)?.seminorm;
            Ok(QuotientPoint {
                r,
                q: s / (r * dn * r.powi(dim as i32 - 1)),
            })
        })
        .collect()
}

/// The quotient for a valid approximate derivative; `v(y)` is taken from the
/// grid when `y` is a cell center.
pub fn weak_diff_quotient(v: &GridField, y: &Point, t: &ApproxDerivative, radii: &[f64]) -> Result<Vec<QuotientPoint>> {
    if !t.valid {
        return Err(Error::Precondition("the approximate derivative is not valid at this point".into()));
    }
    let grid = v.grid();
    let value = match grid.locate_flat(y) {
        Some(c) if grid.center(c).sub(y).norm() <= 1e-12 * grid.bounds().diameter() => v.get(c),
        _ => t.value[0],
    };
    taylor_quotient(v, y, value, &t.linear_map, radii)
}

/// CSV lines `r,q` for the plot emitter.
pub fn quotient_csv(curve: &[QuotientPoint]) -> String {
    let mut s = String::from("r,q\n");
    for p in curve {
        s.push_str(&format!("{},{}\n", p.r, p.q));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::kernels::Kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::uniform(Aabb::cube(2, -1.0, 2.0).unwrap(), n).unwrap()
    }

    fn pt(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn linear_field_is_exact() {
        let v = GridField::from_fn(grid(128), |p| 3.0 * p.get(0) - 2.0 * p.get(1) + 1.0);
        let d = approx_derivative(&v, &pt(&[0.1, 0.2]), &ApproxParams::default()).unwrap();
        assert!(d.valid);
        assert!((d.entry(0, 0) - 3.0).abs() < 1e-10 && (d.entry(0, 1) + 2.0).abs() < 1e-10);
        assert!(d.residual < 1e-10);
        assert_eq!(d.good_fraction, 1.0);
        assert_eq!(d.radius, 4.0 * v.grid().spacing(0));
    }

    #[test]
    fn kink_has_no_derivative() {
        let v = GridField::from_fn(grid(128), |p| p.norm());
        let d = approx_derivative(&v, &pt(&[0.0, 0.0]), &ApproxParams::default()).unwrap();
        assert!(!d.valid);
    }

    #[test]
    fn flat_region_gives_zero_map() {
        let v = GridField::from_fn(grid(128), |p| (p.norm() - 0.5).max(0.0).powi(2));
        let d = approx_derivative(&v, &pt(&[0.05, 0.0]), &ApproxParams::default()).unwrap();
        assert!(d.valid);
        assert!(d.frobenius() < 1e-6);
    }

    #[test]
    fn boundary_points_are_refused() {
        let v = GridField::zeros(grid(64));
        assert!(approx_derivative(&v, &pt(&[0.9, 0.0]), &ApproxParams::default()).is_err());
    }

    #[test]
    fn hessian_of_quadratic_via_gradient() {
        let v = GridField::from_fn(grid(64), |p| {
            let (x, y) = (p.get(0), p.get(1));
            0.5 * (2.0 * x * x + 2.0 * x * y + 5.0 * y * y)
        });
        let params = ApproxParams {
            radii_cells: vec![2.0, 3.0, 4.0],
            ..ApproxParams::default()
        };
        let d = approx_derivative(&v.gradient(), &pt(&[0.1, -0.2]), &params).unwrap();
        assert!(d.valid);
        assert_eq!(d.rows, 2);
        assert!((d.trace().unwrap() - 7.0).abs() < 1e-9);
        assert!((d.entry(0, 1) - 1.0).abs() < 1e-9 && (d.entry(1, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn riesz_gradient_within_two_percent() {
        let g = grid(256);
        let k = Kernel::riesz(2).unwrap();
        let v = GridField::from_fn(g.clone(), |p| k.eval(p));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut done = 0;
        while done < 20 {
            let c = rng.gen_range(0..g.len());
            let y = g.center(c);
            if !(0.3..0.7).contains(&y.norm()) {
                continue;
            }
            let d = approx_derivative(&v, &y, &ApproxParams::default()).unwrap();
            assert!(d.valid, "{y:?} {d:?}");
            let exact = k.grad(&y);
            let err = ((d.entry(0, 0) - exact[0]).powi(2) + (d.entry(0, 1) - exact[1]).powi(2)).sqrt();
            assert!(err <= 0.02 * (exact[0].hypot(exact[1])), "{y:?} {err}");
            done += 1;
        }
    }

    #[test]
    fn second_order_convergence_on_smooth_fields() {
        let y = pt(&[0.125, -0.25]);
        let errs: Vec<f64> = [128usize, 256, 512]
            .iter()
            .map(|&n| {
                let v = GridField::from_fn(grid(n), |p| (2.0 * p.get(0)).sin() * (1.5 * p.get(1)).cos());
                let d = approx_derivative(&v, &y, &ApproxParams::default()).unwrap();
                let gx = 2.0 * (0.25f64).cos() * (-0.375f64).cos();
                let gy = -1.5 * (0.25f64).sin() * (-0.375f64).sin();
                (d.entry(0, 0) - gx).hypot(d.entry(0, 1) - gy)
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0] / 3.0, "{errs:?}");
        }
    }

    #[test]
    fn quotient_vanishes_for_linear_fields() {
        let v = GridField::from_fn(grid(128), |p| p.get(0) - 4.0 * p.get(1));
        let y = v.grid().center(v.grid().flat(&[64, 64]));
        let d = approx_derivative(&v, &y, &ApproxParams::default()).unwrap();
        let h = v.grid().spacing(0);
        let q = weak_diff_quotient(&v, &y, &d, &[16.0 * h, 4.0 * h, h * 2.0]).unwrap();
        assert!(q.iter().all(|p| p.q < 1e-9), "{q:?}");
    }

    #[test]
    fn quotient_decays_away_from_an_atom_and_not_at_it() {
        let g = grid(256);
        let h = g.spacing(0);
        let k = Kernel::riesz(2).unwrap();
        let a = pt(&[-0.5 + 0.25 * h, 0.3 + 0.25 * h]);
        let v = GridField::from_fn(g.clone(), |p| k.eval(&p.sub(&a)));
        let radii: Vec<f64> = [32.0, 16.0, 8.0, 4.0, 2.0].iter().map(|c| c * h).collect();

        let y = g.center(g.flat(&[160, 100]));
        let d = approx_derivative(&v, &y, &ApproxParams::default()).unwrap();
        let q = weak_diff_quotient(&v, &y, &d, &radii).unwrap();
        assert!(q.windows(2).all(|w| w[1].q < w[0].q), "{q:?}");
        let slope = (q[0].q / q[4].q).ln() / (q[0].r / q[4].r).ln();
        assert!(slope >= 0.9, "{slope}");

        let at = g.center(g.locate_flat(&a).unwrap());
        let bad = approx_derivative(&v, &at, &ApproxParams::default()).unwrap();
        assert!(!bad.valid);
        assert!(weak_diff_quotient(&v, &at, &bad, &radii).is_err());
        let q = taylor_quotient(&v, &at, v.get(g.locate_flat(&a).unwrap()), &bad.linear_map, &radii).unwrap();
        assert!(q.last().unwrap().q >= q[0].q, "{q:?}");
    }

    #[test]
    fn unit_norm_constant() {
        assert!((weak_unit_norm_constant(2) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        let b3 = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((weak_unit_norm_constant(3) - b3.powf(2.0 / 3.0)).abs() < 1e-15);
    }
}
