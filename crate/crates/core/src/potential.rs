//! Fundamental solutions, the Dirichlet problem `-Δu = μ` on a box, and the
//! checks of `(Δu)_a = Tr(ap D²u)` and of its vanishing on level sets.
//!
//! The Poisson layer works on node grids: the cell centers of the returned
//! field sit at `lo + k h`, `k = 0..=n`, so the outermost centers lie on the
//! box boundary, where `u = 0`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{approx_derivative, ApproxParams};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point, MAX_DIM};
use crate::grid::{Grid, GridField};
use crate::kernels::{convolve, Convolution, Kernel};
use crate::measure::{Atom, SignedMeasure};
use crate::norms::{weak_lp_seminorm, Heights};

pub fn fundamental_solution(dim: usize, x: &Point) -> Result<f64> {
    if x.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.dim() });
    }
    if x.norm() == 0.0 {
        return Err(Error::Domain("the fundamental solution is singular at 0".into()));
    }
    Ok(Kernel::fundamental(dim)?.eval(x))
}

/// `E * μ` at the given points, masked within `eps_cut` of an atom.
pub fn newtonian_potential(mu: &SignedMeasure, points: &[Point], eps_cut: f64) -> Result<Convolution> {
    convolve(&Kernel::fundamental(mu.dim())?, mu, points, eps_cut)
}

/// Grid whose cell centers are the nodes `lo + k h`, `k = 0..=n`, of `bounds`.
pub fn node_grid(bounds: &Aabb, n: usize) -> Result<Grid> {
    if n < 2 {
        return Err(Error::InvalidParameter("a node grid needs at least 2 intervals".into()));
    }
    let dim = bounds.lo().dim();
    let mut lo = [0.0; MAX_DIM];
    let mut hi = [0.0; MAX_DIM];
    for a in 0..dim {
        let h = bounds.extent(a) / n as f64;
        lo[a] = bounds.lo().get(a) - 0.5 * h;
        hi[a] = bounds.hi().get(a) + 0.5 * h;
    }
    Grid::new(Aabb::from_slices(&lo[..dim], &hi[..dim])?, &vec![n + 1; dim])
}

fn is_boundary(grid: &Grid, idx: &[usize]) -> bool {
    idx.iter().zip(grid.cells()).any(|(&i, &n)| i == 0 || i + 1 == n)
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonSolution {
    #[serde(skip)]
    pub u: GridField,
    #[serde(skip)]
    pub mu: SignedMeasure,
    /// The discretized load: atoms as `w / h^N` at their nearest node.
    #[serde(skip)]
    pub load: GridField,
    pub bounds: Aabb,
    pub resolution: usize,
    pub dirichlet_zero: bool,
    /// `sum |-Δ_h u - load| h^N` over interior nodes.
    pub residual: f64,
    pub iterations: usize,
}

/// Discretizes `μ` on the node grid: atoms to their nearest node, densities by
/// lookup in their own grid.
pub fn discretize_load(mu: &SignedMeasure, grid: &Grid) -> Result<GridField> {
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let mut load = vec![0.0; grid.len()];
    for a in mu.atoms() {
        let idx = grid.nearest(&a.x);
        let b = grid.bounds();
        let inside = (0..dim).all(|k| b.lo().get(k) <= a.x.get(k) && a.x.get(k) <= b.hi().get(k));
        if !inside || is_boundary(grid, &idx[..dim]) {
            return Err(Error::Precondition(format!("atom at {:?} lies on or outside the boundary", a.x)));
        }
        load[grid.flat(&idx[..dim])] += a.w / vol;
    }
    if let Some(f) = mu.density() {
        let same = f.grid() == grid;
        let negligible = 1e-9 * f.sup_norm();
        for (i, l) in load.iter_mut().enumerate() {
            let v = if same {
                f.get(i)
            } else {
                f.grid().locate_flat(&grid.center(i)).map_or(0.0, |c| f.get(c))
            };
            if is_boundary(grid, &grid.multi(i)[..dim]) {
                if v.abs() > negligible {
                    return Err(Error::Precondition("the density must vanish on the boundary".into()));
                }
                continue;
            }
            *l += v;
        }
    }
    GridField::from_values(grid.clone(), load)
}

/// `-Δ_h w` on interior nodes, zero on the boundary.
fn neg_laplacian(grid: &Grid, interior: &[bool], w: &[f64], out: &mut [f64]) {
    let dim = grid.dim();
    let n = grid.cells();
    let mut stride = [1usize; MAX_DIM];
    for a in 1..dim {
        stride[a] = stride[a - 1] * n[a - 1];
    }
    let inv: Vec<f64> = (0..dim).map(|a| 1.0 / grid.spacing(a).powi(2)).collect();
    for i in 0..w.len() {
        if !interior[i] {
            out[i] = 0.0;
            continue;
        }
        let mut s = 0.0;
        for a in 0..dim {
            s += (2.0 * w[i] - w[i - stride[a]] - w[i + stride[a]]) * inv[a];
        }
        out[i] = s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `-Δ_h u = μ` with `u = 0` on the boundary nodes.
///
/// Conjugate gradients with a Jacobi preconditioner, stopped when the discrete
/// `L^1` residual falls below `tol` times the `L^1` norm of the load.
pub fn solve_dirichlet(mu: &SignedMeasure, bounds: &Aabb, n: usize, tol: f64) -> Result<PoissonSolution> {
    if mu.dim() != bounds.lo().dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.lo().dim(),
            got: mu.dim(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let grid = node_grid(bounds, n)?;
    let load = discretize_load(mu, &grid)?;
    let (u, iterations, residual) = cg_solve(&grid, load.values(), tol, 20 * n * n)?;
    Ok(PoissonSolution {
        u: GridField::from_values(grid, u)?,
        mu: mu.clone(),
        load,
        bounds: *bounds,
        resolution: n,
        dirichlet_zero: true,
        residual,
        iterations,
    })
}

fn cg_solve(grid: &Grid, b: &[f64], tol: f64, cap: usize) -> Result<(Vec<f64>, usize, f64)> {
    let dim = grid.dim();
    let len = grid.len();
    let vol = grid.cell_volume();
    let interior: Vec<bool> = (0..len).map(|i| !is_boundary(grid, &grid.multi(i)[..dim])).collect();
    let diag: f64 = (0..dim).map(|a| 2.0 / grid.spacing(a).powi(2)).sum();
    let l1 = |r: &[f64]| -> f64 { r.iter().zip(&interior).filter(|(_, &i)| i).map(|(v, _)| v.abs()).sum::<f64>() * vol };

    let mut x = vec![0.0; len];
    let mut r: Vec<f64> = b.iter().zip(&interior).map(|(v, &i)| if i { *v } else { 0.0 }).collect();
    let target = tol * l1(&r);
    if target == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut z: Vec<f64> = r.iter().map(|v| v / diag).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    for it in 1..=cap {
        neg_laplacian(grid, &interior, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if l1(&r) <= target {
            // report the true residual, not the recurrence
            let mut ax = vec![0.0; len];
            neg_laplacian(grid, &interior, &x, &mut ax);
            let true_r: Vec<f64> = ax.iter().zip(b).map(|(a, v)| a - v).collect();
            return Ok((x, it, l1(&true_r)));
        }
        for i in 0..len {
            z[i] = r[i] / diag;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual: l1(&r),
    })
}

/// Weak norms of the solution divided by the total variation of the load:
/// `u` in weak `L^{N/(N-2)}` (N = 3) and `∇u` in weak `L^{N/(N-1)}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub mass: f64,
    pub u_ratio: Option<f64>,
    pub grad_ratio: f64,
}

pub fn regularity_report(sol: &PoissonSolution) -> Result<RegularityReport> {
    let dim = sol.u.grid().dim();
    let mass = sol.load.l1_norm();
    if mass == 0.0 {
        return Ok(RegularityReport {
            mass,
            u_ratio: None,
            grad_ratio: 0.0,
        });
    }
    let u_ratio = if dim >= 3 {
        let p = dim as f64 / (dim as f64 - 2.0);
        Some(weak_lp_seminorm(&sol.u, p, &Heights::Exact)?.seminorm / mass)
    } else {
        None
    };
    let p = dim as f64 / (dim as f64 - 1.0);
    let g = weak_lp_seminorm(&sol.u.gradient().magnitude(), p, &Heights::Exact)?.seminorm;
    Ok(RegularityReport {
        mass,
        u_ratio,
        grad_ratio: g / mass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct HessianParams {
    pub approx: ApproxParams,
    /// Points whose neighborhoods are masked (atoms).
    pub exclude: Vec<Point>,
    /// Exclusion radius in grid spacings.
    pub exclusion_cells: f64,
    /// Lower bound on the exclusion radius in absolute units.
    #[serde(default)]
    pub exclusion_min: f64,
}

impl Default for HessianParams {
    fn default() -> Self {
        HessianParams {
            approx: ApproxParams {
                radii_cells: vec![2.0, 3.0, 4.0],
                stability: 0.05,
                threshold: 0.5,
                ..ApproxParams::default()
            },
            exclude: Vec::new(),
            exclusion_cells: 5.0,
            exclusion_min: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceField {
    pub trace: GridField,
    /// Cells far enough from the grid boundary for every fitting radius.
    pub region: Vec<bool>,
    /// Region cells away from excluded points with a valid derivative.
    pub valid: Vec<bool>,
}

impl TraceField {
    pub fn excluded_fraction(&self) -> f64 {
        let region = self.region.iter().filter(|&&r| r).count();
        let valid = self.valid.iter().filter(|&&v| v).count();
        if region == 0 {
            return 1.0;
        }
        (region - valid) as f64 / region as f64
    }
}

/// Trace of the approximate derivative of the central-difference gradient.
pub fn trace_ap_hessian(u: &GridField, params: &HessianParams) -> Result<TraceField> {
    let grid = u.grid();
    let dim = grid.dim();
    let h = grid
        .cubic_spacing()
        .ok_or_else(|| Error::Precondition("the Hessian trace needs a cubic grid".into()))?;
    let grad = u.gradient();
    let rmax = params.approx.radii_cells.iter().copied().fold(0.0, f64::max) * h;
    let b = *grid.bounds();
    let cut = (params.exclusion_cells * h).max(params.exclusion_min);
    let out: Vec<(f64, bool, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let y = grid.center(i);
            let inside = (0..dim).all(|a| y.get(a) - rmax >= b.lo().get(a) && y.get(a) + rmax <= b.hi().get(a));
            if !inside {
                return (f64::NAN, false, false);
            }
            if params.exclude.iter().any(|e| e.sub(&y).norm() < cut) {
                return (f64::NAN, true, false);
            }
            match approx_derivative(&grad, &y, &params.approx) {
                Ok(d) if d.valid => (d.trace().unwrap_or(f64::NAN), true, true),
                _ => (f64::NAN, true, false),
            }
        })
        .collect();
    Ok(TraceField {
        trace: GridField::from_values(grid.clone(), out.iter().map(|o| o.0).collect())?,
        region: out.iter().map(|o| o.1).collect(),
        valid: out.iter().map(|o| o.2).collect(),
    })
}

pub type Density = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// A measure `f dx + Σ w_k δ_{a_k}` with `f` given as a function, so that it
/// can be sampled at every resolution.
#[derive(Clone)]
pub struct IdentityFixture {
    pub name: String,
    pub dim: usize,
    pub atoms: Vec<Atom>,
    pub density: Option<Density>,
}

impl std::fmt::Debug for IdentityFixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdentityFixture")
            .field("name", &self.name)
            .field("atoms", &self.atoms)
            .field("density", &self.density.is_some())
            .finish()
    }
}

impl IdentityFixture {
    pub fn measure_on(&self, grid: &Grid) -> Result<SignedMeasure> {
        let density = self.density.as_ref().map(|f| GridField::from_fn(grid.clone(), |p| f(p)));
        SignedMeasure::new(self.dim, self.atoms.clone(), density)
    }

    fn density_at(&self, p: &Point) -> f64 {
        self.density.as_ref().map_or(0.0, |f| f(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolutionError {
    pub n: usize,
    pub h: f64,
    /// `sum |Tr + f| h^N` over compared cells.
    pub l1_error: f64,
    /// `l1_error` divided by the compared volume.
    pub mean_error: f64,
    /// The same split by whether `f` vanishes at the cell.
    pub l1_on_support: f64,
    pub l1_off_support: f64,
    pub compared_cells: usize,
    pub excluded_fraction: f64,
    pub solver_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub fixture: String,
    /// Error at the finest resolution.
    pub l1_error: f64,
    /// Largest excluded fraction over the resolutions.
    pub excluded_fraction: f64,
    pub resolutions: Vec<ResolutionError>,
    /// `-d log(l1_error) / d log(1/h)` fitted over the resolutions; positive when errors decrease.
    pub convergence_slope: f64,
    pub mean_slope: f64,
    pub on_support_slope: f64,
    pub off_support_slope: f64,
}

/// Least-squares slope of `log y` against `log x`, over points with `y > 0`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Solves `-Δu = μ` at each resolution and compares `Tr(ap D²u)` with `-f`
/// on cells at least `exclusion_cells` spacings from every atom.
pub fn verify_identity_main(
    fixture: &IdentityFixture,
    bounds: &Aabb,
    resolutions: &[usize],
    params: &HessianParams,
    tol: f64,
) -> Result<IdentityReport> {
    if resolutions.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let mut rows: Vec<ResolutionError> = resolutions
        .par_iter()
        .map(|&n| -> Result<ResolutionError> {
            let grid = node_grid(bounds, n)?;
            let mu = fixture.measure_on(&grid)?;
            let sol = solve_dirichlet(&mu, bounds, n, tol)?;
            let mut hp = params.clone();
            hp.exclude.extend(fixture.atoms.iter().map(|a| a.x));
            let tr = trace_ap_hessian(&sol.u, &hp)?;
            let vol = grid.cell_volume();
            let (mut on, mut off, mut count) = (0.0, 0.0, 0usize);
            for i in 0..grid.len() {
                if !tr.valid[i] {
                    continue;
                }
                let f = fixture.density_at(&grid.center(i));
                let e = (tr.trace.get(i) + f).abs() * vol;
                if f != 0.0 {
                    on += e;
                } else {
                    off += e;
                }
                count += 1;
            }
            let l1 = on + off;
            Ok(ResolutionError {
                n,
                h: grid.spacing(0),
                l1_error: l1,
                mean_error: if count > 0 { l1 / (count as f64 * vol) } else { f64::NAN },
                l1_on_support: on,
                l1_off_support: off,
                compared_cells: count,
                excluded_fraction: tr.excluded_fraction(),
                solver_residual: sol.residual,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.n);
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let slope = |f: fn(&ResolutionError) -> f64| loglog_slope(&hs, &rows.iter().map(f).collect::<Vec<_>>());
    Ok(IdentityReport {
        fixture: fixture.name.clone(),
        l1_error: rows.last().map_or(f64::NAN, |r| r.l1_error),
        excluded_fraction: rows.iter().map(|r| r.excluded_fraction).fold(0.0, f64::max),
        convergence_slope: slope(|r| r.l1_error),
        mean_slope: slope(|r| r.mean_error),
        on_support_slope: slope(|r| r.l1_on_support),
        off_support_slope: slope(|r| r.l1_off_support),
        resolutions: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LevelMode {
    Value { alpha: f64 },
    Gradient { e: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelBand {
    pub delta: f64,
    pub cells: usize,
    /// Mean of `|f_a|` over the band; `None` for an empty band.
    pub mean_abs: Option<f64>,
}

/// Band means of `|f_a|` over `{|u - α| < δ}` or `{|∇u - e| < δ}`.
pub fn level_set_test(u: &GridField, f_ac: &GridField, mode: &LevelMode, deltas: &[f64]) -> Result<Vec<LevelBand>> {
    if u.grid() != f_ac.grid() {
        return Err(Error::Precondition("u and its Laplacian density must share a grid".into()));
    }
    if deltas.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let dim = u.grid().dim();
    let dist: Vec<f64> = match mode {
        LevelMode::Value { alpha } => u.values().iter().map(|v| (v - alpha).abs()).collect(),
        LevelMode::Gradient { e } => {
            if e.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.len() });
            }
            let g = u.gradient();
            (0..u.grid().len())
                .map(|i| g.vector(i).iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect()
        }
    };
    Ok(deltas
        .iter()
        .map(|&delta| {
            let mut sum = 0.0;
            let mut cells = 0;
            for (i, d) in dist.iter().enumerate() {
                if *d < delta {
                    sum += f_ac.get(i).abs();
                    cells += 1;
                }
            }
            LevelBand {
                delta,
                cells,
                mean_abs: (cells > 0).then(|| sum / cells as f64),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegligibilityTable {
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `fractions[i][j]`: fraction of cells with `|u - alphas[i]| < deltas[j]`.
    pub fractions: Vec<Vec<f64>>,
    /// Log-log slope of the fraction against `δ`, per level.
    pub slopes: Vec<f64>,
    pub min_laplacian: f64,
}

/// Level-band fractions of a function with `Δu >= θ_min` on interior cells.
pub fn subharmonic_negligibility(u: &GridField, theta_min: f64, alphas: &[f64], deltas: &[f64]) -> Result<NegligibilityTable> {
    if !(theta_min > 0.0) {
        return Err(Error::InvalidParameter("theta_min must be positive".into()));
    }
    if alphas.is_empty() || deltas.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let grid = u.grid();
    let dim = grid.dim();
    let lap = u.laplacian();
    let min_lap = (0..grid.len())
        .filter(|&i| !is_boundary(grid, &grid.multi(i)[..dim]))
        .map(|i| lap.get(i))
        .fold(f64::INFINITY, f64::min);
    if !(min_lap >= theta_min * (1.0 - 1e-9)) {
        return Err(Error::Hypothesis(format!(
            "discrete Laplacian reaches {min_lap}, below the required {theta_min}"
        )));
    }
    let total = grid.len() as f64;
    let fractions: Vec<Vec<f64>> = alphas
        .iter()
        .map(|a| {
            deltas
                .iter()
                .map(|d| u.values().iter().filter(|v| (*v - a).abs() < *d).count() as f64 / total)
                .collect()
        })
        .collect();
    let slopes = fractions.iter().map(|f| loglog_slope(deltas, f)).collect();
    Ok(NegligibilityTable {
        alphas: alphas.to_vec(),
        deltas: deltas.to_vec(),
        fractions,
        slopes,
        min_laplacian: min_lap,
    })
}
