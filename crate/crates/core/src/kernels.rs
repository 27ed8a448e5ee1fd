//! Singular kernels `K` with `|K(x)| <= A/|x|^{N-1}`, `|D^2 K(x)| <= B/|x|^{N+1}`
//! and their convolution with measures.
//!
//! Density parts are integrated by cell-midpoint quadrature, except on the
//! cell containing the evaluation point and its neighbours, where each cell
//! is split into `8^N` subcells.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::StencilConvolver;
use crate::geometry::{unit_sphere_area, Point, MAX_DIM};
use crate::grid::{Grid, GridField};
use crate::measure::SignedMeasure;

const SUBCELLS: usize = 8;
/// Partial sums of `|K| d|mu|` above this are treated as divergent.
pub const OVERFLOW_GUARD: f64 = 1e150;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// `1/|x|^{N-1}`.
    Riesz,
    /// Fundamental solution `E` of `-Laplace`.
    Fundamental,
    /// Component `axis` of `grad E`.
    FundamentalGrad(usize),
    /// `1/|x|^p`, declared with the Riesz constants whatever `p` is.
    Power(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    dim: usize,
}

impl Kernel {
    pub fn new(kind: KernelKind, dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim} is not supported")));
        }
        match kind {
            KernelKind::Fundamental | KernelKind::FundamentalGrad(_) if dim < 2 => {
                return Err(Error::InvalidParameter("the fundamental solution needs N >= 2".into()))
            }
            KernelKind::FundamentalGrad(a) if a >= dim => {
                return Err(Error::InvalidParameter(format!("axis {a} out of range for N = {dim}")))
            }
            KernelKind::Power(p) if !(p.is_finite() && p > 0.0) => {
                return Err(Error::InvalidParameter(format!("exponent must be positive (got {p})")))
            }
            _ => {}
        }
        Ok(Kernel { kind, dim })
    }

    pub fn riesz(dim: usize) -> Result<Self> {
        Kernel::new(KernelKind::Riesz, dim)
    }

    pub fn fundamental(dim: usize) -> Result<Self> {
        Kernel::new(KernelKind::Fundamental, dim)
    }

    pub fn fundamental_grad(dim: usize, axis: usize) -> Result<Self> {
        Kernel::new(KernelKind::FundamentalGrad(axis), dim)
    }

    pub fn power(dim: usize, exponent: f64) -> Result<Self> {
        Kernel::new(KernelKind::Power(exponent), dim)
    }

    /// Parses `riesz`, `E`, `gradE` (axis 0) or `gradE<axis>`.
    pub fn from_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "riesz" => Kernel::riesz(dim),
            "E" => Kernel::fundamental(dim),
            "gradE" => Kernel::fundamental_grad(dim, 0),
            _ => match name.strip_prefix("gradE").and_then(|s| s.parse::<usize>().ok()) {
                Some(axis) => Kernel::fundamental_grad(dim, axis),
                None => Err(Error::InvalidParameter(format!("unknown kernel `{name}`"))),
            },
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> String {
        match self.kind {
            KernelKind::Riesz => "riesz".into(),
            KernelKind::Fundamental => "E".into(),
            KernelKind::FundamentalGrad(a) => format!("gradE{a}"),
            KernelKind::Power(p) => format!("power({p})"),
        }
    }

    /// Key under which dipole constants are calibrated.
    pub fn family(&self) -> &'static str {
        match self.kind {
            KernelKind::Riesz => "riesz",
            KernelKind::Fundamental => "E",
            KernelKind::FundamentalGrad(_) => "gradE",
            KernelKind::Power(_) => "power",
        }
    }

    /// Declared `(A, B)`, or `None` when the kernel has no such bounds
    /// (`E` decays like `|x|^{2-N}`, not `|x|^{1-N}`).
    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        let n = self.dim as f64;
        let riesz = (1.0, (n - 1.0) * (n * n + n - 1.0).sqrt());
        match self.kind {
            KernelKind::Riesz | KernelKind::Power(_) => Some(riesz),
            KernelKind::Fundamental => None,
            KernelKind::FundamentalGrad(_) => {
                let s = unit_sphere_area(self.dim);
                Some((1.0 / s, (n * (2.0 + n.sqrt()) + n * (n + 2.0)) / s))
            }
        }
    }

    #[inline]
    pub(crate) fn eval_arr(&self, x: [f64; MAX_DIM]) -> f64 {
        let r2: f64 = x[..self.dim].iter().map(|v| v * v).sum();
        let n = self.dim as i32;
        match self.kind {
            KernelKind::Riesz => match self.dim {
                1 => 1.0,
                2 => 1.0 / r2.sqrt(),
                _ => 1.0 / r2,
            },
            KernelKind::Fundamental => {
                if self.dim == 2 {
                    -0.25 * r2.ln() / std::f64::consts::PI
                } else {
                    let s = unit_sphere_area(self.dim);
                    1.0 / ((n as f64 - 2.0) * s * r2.sqrt().powi(n - 2))
                }
            }
            KernelKind::FundamentalGrad(a) => -x[a] / (unit_sphere_area(self.dim) * r2.sqrt().powi(n)),
            KernelKind::Power(p) => r2.powf(-0.5 * p),
        }
    }

    #[inline]
    pub(crate) fn grad_arr(&self, x: [f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let r2: f64 = x[..self.dim].iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        let n = self.dim as i32;
        let mut g = [0.0; MAX_DIM];
        match self.kind {
            KernelKind::Riesz => {
                let c = -(n as f64 - 1.0) / r.powi(n + 1);
                for a in 0..self.dim {
                    g[a] = c * x[a];
                }
            }
            KernelKind::Fundamental => {
                let c = -1.0 / (unit_sphere_area(self.dim) * r.powi(n));
                for a in 0..self.dim {
                    g[a] = c * x[a];
                }
            }
            KernelKind::FundamentalGrad(i) => {
                let s = unit_sphere_area(self.dim);
                let rn = r.powi(n);
                for a in 0..self.dim {
                    let delta = if a == i { 1.0 } else { 0.0 };
                    g[a] = -(delta / rn - n as f64 * x[i] * x[a] / (rn * r2)) / s;
                }
            }
            KernelKind::Power(p) => {
                let c = -p * r2.powf(-0.5 * p - 1.0);
                for a in 0..self.dim {
                    g[a] = c * x[a];
                }
            }
        }
        g
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.eval_arr(x.array())
    }

    pub fn grad(&self, x: &Point) -> Vec<f64> {
        self.grad_arr(x.array())[..self.dim].to_vec()
    }

    /// `D^2 K(x)` by fourth-order central differences with step `1e-3 |x|`.
    pub fn hessian_fd(&self, x: &Point) -> [[f64; MAX_DIM]; MAX_DIM] {
        let base = x.array();
        let h = 1e-3 * x.norm();
        let f = |d: &[(usize, f64)]| {
            let mut y = base;
            for &(a, s) in d {
                y[a] += s;
            }
            self.eval_arr(y)
        };
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        let f0 = self.eval_arr(base);
        for i in 0..self.dim {
            hess[i][i] = (-f(&[(i, 2.0 * h)]) + 16.0 * f(&[(i, h)]) - 30.0 * f0 + 16.0 * f(&[(i, -h)])
                - f(&[(i, -2.0 * h)]))
                / (12.0 * h * h);
            for j in 0..i {
                let mixed = |s: f64| {
                    (f(&[(i, s), (j, s)]) - f(&[(i, s), (j, -s)]) - f(&[(i, -s), (j, s)]) + f(&[(i, -s), (j, -s)]))
                        / (4.0 * s * s)
                };
                let v = (4.0 * mixed(h) - mixed(2.0 * h)) / 3.0;
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        hess
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsFit {
    /// `max |K(x)| |x|^{N-1}` over the samples.
    pub a_fit: f64,
    /// `max |D^2 K(x)| |x|^{N+1}` (Frobenius norm) over the samples.
    pub b_fit: f64,
    pub declared: Option<(f64, f64)>,
    pub pass: bool,
}

/// Compares sampled growth constants with the declared ones (1% slack).
pub fn kernel_bounds_check(k: &Kernel, samples: &[Point]) -> Result<BoundsFit> {
    let n = k.dim() as i32;
    let mut a_fit = 0.0f64;
    let mut b_fit = 0.0f64;
    for x in samples {
        if x.dim() != k.dim() {
            return Err(Error::DimensionMismatch {
                expected: k.dim(),
                got: x.dim(),
            });
        }
        let r = x.norm();
        if r == 0.0 {
            return Err(Error::Domain("kernel sample at the origin".into()));
        }
        a_fit = a_fit.max(k.eval(x).abs() * r.powi(n - 1));
        let h = k.hessian_fd(x);
        let frob = h.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        b_fit = b_fit.max(frob * r.powi(n + 1));
    }
    let declared = k.declared_bounds();
    let pass = match declared {
        Some((a, b)) => a_fit <= a * 1.01 && b_fit <= b * 1.01 && a_fit.is_finite() && b_fit.is_finite(),
        None => false,
    };
    Ok(BoundsFit {
        a_fit,
        b_fit,
        declared,
        pass,
    })
}

/// Values of `K * mu` at points together with the domain mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Convolution {
    pub values: Vec<f64>,
    /// `false` where an atom lies within `eps_cut` or `|K| * |mu|` overflows.
    pub mask: Vec<bool>,
}

impl Convolution {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Subcell midpoints relative to a cell center.
fn subcell_offsets(grid: &Grid) -> Vec<[f64; MAX_DIM]> {
    let dim = grid.dim();
    let total = SUBCELLS.pow(dim as u32);
    (0..total)
        .map(|mut t| {
            let mut o = [0.0; MAX_DIM];
            for (a, oa) in o.iter_mut().enumerate().take(dim) {
                let k = t % SUBCELLS;
                t /= SUBCELLS;
                *oa = ((k as f64 + 0.5) / SUBCELLS as f64 - 0.5) * grid.spacing(a);
            }
            o
        })
        .collect()
}

/// Mean of `k(x - c - s)` over the subcell midpoints `s` (exact hits skipped).
fn near_cell_average(
    dim: usize,
    k: &impl Fn([f64; MAX_DIM]) -> f64,
    x: [f64; MAX_DIM],
    c: [f64; MAX_DIM],
    subs: &[[f64; MAX_DIM]],
) -> f64 {
    let mut s = 0.0;
    for o in subs {
        let mut d = [0.0; MAX_DIM];
        let mut zero = true;
        for a in 0..dim {
            d[a] = x[a] - c[a] - o[a];
            zero &= d[a] == 0.0;
        }
        if !zero {
            s += k(d);
        }
    }
    s / subs.len() as f64
}

/// Direct evaluation of `K * mu` at arbitrary points.
pub fn convolve(k: &Kernel, mu: &SignedMeasure, points: &[Point], eps_cut: f64) -> Result<Convolution> {
    if !(eps_cut > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff must be positive (got {eps_cut})")));
    }
    if mu.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            got: mu.dim(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.dim() != k.dim()) {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            got: p.dim(),
        });
    }
    let dim = k.dim();
    let atoms: Vec<([f64; MAX_DIM], f64)> = mu.atoms().iter().map(|a| (a.x.array(), a.w)).collect();
    let (cells, h, subs) = match mu.density() {
        Some(f) => {
            let g = f.grid();
            let vol = g.cell_volume();
            let cells: Vec<([f64; MAX_DIM], f64)> = (0..g.len())
                .filter(|&i| f.get(i) != 0.0)
                .map(|i| (g.center(i).array(), f.get(i) * vol))
                .collect();
            let h: Vec<f64> = (0..dim).map(|a| g.spacing(a)).collect();
            (cells, h, subcell_offsets(g))
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };

    let results: Vec<(f64, bool)> = points
        .par_iter()
        .map(|p| {
            let x = p.array();
            let mut val = 0.0;
            let mut abs = 0.0;
            let mut ok = true;
            for (a, w) in &atoms {
                let mut d = [0.0; MAX_DIM];
                let mut r2 = 0.0;
                for i in 0..dim {
                    d[i] = x[i] - a[i];
                    r2 += d[i] * d[i];
                }
                if r2.sqrt() < eps_cut {
                    ok = false;
                }
                if r2 == 0.0 {
                    val = f64::NAN;
                    continue;
                }
                let kv = w * k.eval_arr(d);
                val += kv;
                abs += kv.abs();
            }
            for (c, m) in &cells {
                let mut near = true;
                let mut d = [0.0; MAX_DIM];
                for i in 0..dim {
                    d[i] = x[i] - c[i];
                    near &= d[i].abs() < 1.5 * h[i];
                }
                let kv = if near {
                    near_cell_average(dim, &|d| k.eval_arr(d), x, *c, &subs)
                } else {
                    k.eval_arr(d)
                };
                val += m * kv;
                abs += (m * kv).abs();
            }
            ok &= abs < OVERFLOW_GUARD && val.is_finite();
            (val, ok)
        })
        .collect();
    let (values, mask) = results.into_iter().unzip();
    Ok(Convolution { values, mask })
}

/// `K * (f dx)` at every cell center of the density's grid, by FFT with the
/// same near-field rule as [`convolve`].
pub fn convolve_density(k: &Kernel, f: &GridField) -> Result<GridField> {
    let grid = f.grid();
    if grid.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            got: grid.dim(),
        });
    }
    GridField::from_values(grid.clone(), grid_convolution(grid, f.values(), |d| k.eval_arr(d)))
}

/// `sum_j f_j |cell| k(x_i - c_j)` at every cell center, with subcell
/// quadrature on the cell itself and its neighbours.
pub(crate) fn grid_convolution(grid: &Grid, values: &[f64], k: impl Fn([f64; MAX_DIM]) -> f64) -> Vec<f64> {
    let dim = grid.dim();
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
    let vol = grid.cell_volume();
    let subs = subcell_offsets(grid);
    let conv = StencilConvolver::new(grid.cells(), |o| {
        let mut d = [0.0; MAX_DIM];
        for a in 0..dim {
            d[a] = o[a] as f64 * h[a];
        }
        if (0..dim).all(|a| o[a].abs() <= 1) {
            vol * near_cell_average(dim, &k, d, [0.0; MAX_DIM], &subs)
        } else {
            vol * k(d)
        }
    });
    conv.apply(values)
}

/// `K * mu` at every cell center of `grid`: atoms exactly, the density by
/// FFT when it lives on `grid` and directly otherwise.
pub fn convolve_on_grid(k: &Kernel, mu: &SignedMeasure, grid: &Grid, eps_cut: f64) -> Result<Convolution> {
    match mu.density() {
        Some(f) if f.grid() == grid => {
            let atoms = SignedMeasure::new(mu.dim(), mu.atoms().to_vec(), None)?;
            let mut out = convolve(k, &atoms, &grid.centers(), eps_cut)?;
            let d = convolve_density(k, f)?;
            for (i, v) in out.values.iter_mut().enumerate() {
                *v += d.get(i);
                out.mask[i] &= v.is_finite();
            }
            Ok(out)
        }
        _ => convolve(k, mu, &grid.centers(), eps_cut),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pt(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    fn random_points(dim: usize, n: usize, seed: u64, scale: f64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
                pt(&c)
            })
            .collect()
    }

    #[test]
    fn riesz_a_fit_is_one() {
        let k = Kernel::riesz(2).unwrap();
        let fit = kernel_bounds_check(&k, &random_points(2, 200, 1, 5.0)).unwrap();
        assert!((fit.a_fit - 1.0).abs() < 1e-12);
        assert!((fit.b_fit - 5f64.sqrt()).abs() < 1e-4);
        assert!(fit.pass);
    }

    #[test]
    fn grad_e_declared_a_is_inverse_sphere_area() {
        let k = Kernel::fundamental_grad(3, 0).unwrap();
        assert!((k.declared_bounds().unwrap().0 - 1.0 / (4.0 * PI)).abs() < 1e-15);
        // along the axis the bound is attained
        let fit = kernel_bounds_check(&k, &[pt(&[2.0, 0.0, 0.0]), pt(&[0.3, -0.2, 0.1])]).unwrap();
        assert!((fit.a_fit - 1.0 / (4.0 * PI)).abs() < 1e-12);
        assert!(fit.pass);
    }

    #[test]
    fn mislabeled_power_kernel_fails() {
        let k = Kernel::power(2, 2.0).unwrap();
        let samples: Vec<Point> = (1..12).map(|j| pt(&[10f64.powi(-j), 0.0])).collect();
        let fit = kernel_bounds_check(&k, &samples).unwrap();
        assert!(fit.a_fit > 1e10);
        assert!(!fit.pass);
    }

    #[test]
    fn sample_at_origin_is_rejected() {
        let k = Kernel::riesz(2).unwrap();
        assert!(kernel_bounds_check(&k, &[Point::origin(2)]).is_err());
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let kernels = [
            Kernel::riesz(2).unwrap(),
            Kernel::riesz(3).unwrap(),
            Kernel::fundamental(2).unwrap(),
            Kernel::fundamental(3).unwrap(),
            Kernel::fundamental_grad(3, 1).unwrap(),
            Kernel::fundamental_grad(2, 0).unwrap(),
        ];
        for k in kernels {
            for x in random_points(k.dim(), 20, 3, 2.0) {
                let g = k.grad(&x);
                let h = 1e-6;
                for a in 0..k.dim() {
                    let mut p = x.array();
                    let mut m = x.array();
                    p[a] += h;
                    m[a] -= h;
                    let fd = (k.eval_arr(p) - k.eval_arr(m)) / (2.0 * h);
                    assert!((fd - g[a]).abs() < 1e-5 * (1.0 + g[a].abs()), "{} {a}", k.name());
                }
            }
        }
    }

    #[test]
    fn dirac_potentials_match_closed_forms() {
        let e3 = Kernel::fundamental(3).unwrap();
        let c = convolve(&e3, &SignedMeasure::dirac(Point::origin(3), 1.0), &[pt(&[0.0, 2.0, 0.0])], 1e-3).unwrap();
        assert!((c.values[0] - 1.0 / (8.0 * PI)).abs() < 1e-15);
        assert!(c.mask[0]);
        let e2 = Kernel::fundamental(2).unwrap();
        let c = convolve(&e2, &SignedMeasure::dirac(Point::origin(2), 1.0), &[pt(&[0.6, 0.8])], 1e-3).unwrap();
        assert!(c.values[0].abs() < 1e-15);
    }

    #[test]
    fn zero_measure_gives_zero_everywhere() {
        let k = Kernel::riesz(2).unwrap();
        let c = convolve(&k, &SignedMeasure::zero(2), &random_points(2, 30, 5, 1.0), 0.1).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert_eq!(c.valid_count(), 30);
    }

    #[test]
    fn atoms_within_cutoff_are_masked() {
        let k = Kernel::riesz(2).unwrap();
        let mu = SignedMeasure::dirac(Point::origin(2), 1.0);
        let c = convolve(&k, &mu, &[pt(&[0.01, 0.0]), Point::origin(2), pt(&[0.5, 0.0])], 0.05).unwrap();
        assert_eq!(c.mask, vec![false, false, true]);
        assert!((c.values[2] - 2.0).abs() < 1e-15);
        assert!(convolve(&k, &mu, &[], 0.0).is_err());
    }

    #[test]
    fn fft_density_convolution_matches_direct() {
        for dim in [2, 3] {
            let n = if dim == 2 { 12 } else { 6 };
            let g = Grid::uniform(Aabb::cube(dim, -1.0, 2.0).unwrap(), n).unwrap();
            let f = GridField::from_fn(g.clone(), |p| (3.0 * p.get(0)).sin() + p.get(dim - 1).powi(2));
            let k = Kernel::riesz(dim).unwrap();
            let fast = convolve_density(&k, &f).unwrap();
            let mu = SignedMeasure::from_density(f).unwrap();
            let slow = convolve(&k, &mu, &g.centers(), 1e-3).unwrap();
            for i in 0..g.len() {
                assert!((fast.get(i) - slow.values[i]).abs() < 1e-10 * (1.0 + slow.values[i].abs()));
            }
        }
    }

    #[test]
    fn quadrature_of_uniform_disk_potential_converges() {
        // Newtonian potential of the indicator of the unit ball (N = 3) at the
        // center is 1/2; the midpoint rule with near-field subcells gets close.
        let g = Grid::uniform(Aabb::cube(3, -1.0, 2.0).unwrap(), 24).unwrap();
        let f = GridField::from_fn(g.clone(), |p| if p.norm() < 1.0 { 1.0 } else { 0.0 });
        let k = Kernel::fundamental(3).unwrap();
        let mu = SignedMeasure::from_density(f).unwrap();
        let c = convolve(&k, &mu, &[pt(&[1e-3, 0.0, 0.0])], 1e-6).unwrap();
        assert!((c.values[0] - 0.5).abs() < 0.02, "{}", c.values[0]);
    }

    #[test]
    fn grid_convolution_combines_atoms_and_density() {
        let g = Grid::uniform(Aabb::cube(2, -1.0, 2.0).unwrap(), 8).unwrap();
        let f = GridField::constant(g.clone(), 0.5);
        let mu = SignedMeasure::new(2, vec![crate::measure::Atom { x: pt(&[0.1, 0.1]), w: 2.0 }], Some(f.clone()))
            .unwrap();
        let k = Kernel::riesz(2).unwrap();
        let a = convolve_on_grid(&k, &mu, &g, 0.05).unwrap();
        let b = convolve(&k, &mu, &g.centers(), 0.05).unwrap();
        for i in 0..g.len() {
            assert!((a.values[i] - b.values[i]).abs() < 1e-10);
            assert_eq!(a.mask[i], b.mask[i]);
        }
    }

    #[test]
    fn names_round_trip() {
        for name in ["riesz", "E", "gradE", "gradE2"] {
            let k = Kernel::from_name(name, 3).unwrap();
            assert_eq!(Kernel::from_name(&k.name(), 3).unwrap(), k);
        }
        assert!(Kernel::from_name("gradE3", 3).is_err());
        assert!(Kernel::from_name("nope", 2).is_err());
    }
}
