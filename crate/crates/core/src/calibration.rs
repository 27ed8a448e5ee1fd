//! Frozen constants for estimates whose constants exist but are not given
//! explicitly.
//!
//! Dipole constants come from the representation
//! `K * nu(x) = int (K(x - z) - K(x - zbar)) dnu(z)` valid when `nu(Q) = 0`:
//! any bound on `|K(x - z) - K(x - zbar)|` over `z` in `Q` bounds
//! `|K * nu(x)| / ||nu||`. The sup is taken numerically over a fixed family of
//! points `z` (5 scales, 3 aspect configurations and their cube symmetries)
//! and over max-norm shells around `Q`, then multiplied by [`SAFETY`].
//! Everything is scale invariant, so `Q` is the unit cube at the origin.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MAX_DIM;
use crate::kernels::{Kernel, KernelKind};

pub const SAFETY: f64 = 1.25;
pub const CALIBRATION_THETAS: [f64; 3] = [1.5, 2.0, 3.0];
pub const CALIBRATION_VERSION: u32 = 1;
/// Environment variable naming an alternative calibration file.
pub const CALIBRATION_ENV: &str = "CZKIT_CALIB";

const SCALES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
const SHELLS: [f64; 16] = [
    1.0, 1.02, 1.05, 1.1, 1.2, 1.35, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0, 20.0, 50.0,
];
const EMBEDDED: &str = include_str!("../data/calibration.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleConstants {
    pub family: String,
    pub dim: usize,
    pub theta: f64,
    /// `C''`: `|K * nu(x)| <= C'' l ||nu|| / |x - zbar|^N` outside `theta Q`.
    pub c_far: f64,
    /// `|grad K * nu(w)| <= c_grad l ||nu|| / |w - zbar|^{N+1}` outside `((theta+1)/2) Q`.
    pub c_grad: f64,
    /// `C''' = c_grad / (1 - eps)^{N+1}`.
    pub c_close: f64,
    /// `eps = (theta - 1) / (2 theta sqrt N)`.
    pub eps: f64,
    /// `C' = max(C''', C'' / eps)`.
    pub c_prime: f64,
}

/// A constant fitted on a fixture suite, kept as a regression bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    pub name: String,
    pub dim: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub safety: f64,
    pub dipole: Vec<DipoleConstants>,
    pub fitted: Vec<FittedConstant>,
}

impl Calibration {
    pub fn embedded() -> Result<Self> {
        Calibration::parse(EMBEDDED)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let c: Calibration = serde_json::from_str(s)?;
        if c.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!(
                "calibration version {} (expected {CALIBRATION_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Calibration::parse(&s)
    }

    /// The file named by `CZKIT_CALIB`, or the committed constants.
    pub fn load() -> Result<Self> {
        match std::env::var_os(CALIBRATION_ENV) {
            Some(p) => Calibration::from_path(Path::new(&p)),
            None => Calibration::embedded(),
        }
    }

    /// Process-wide calibration, loaded on first use.
    pub fn global() -> Result<&'static Calibration> {
        static CELL: OnceLock<std::result::Result<Calibration, String>> = OnceLock::new();
        CELL.get_or_init(|| Calibration::load().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Format(e.clone()))
    }

    pub fn dipole(&self, family: &str, dim: usize, theta: f64) -> Option<&DipoleConstants> {
        self.dipole
            .iter()
            .find(|d| d.family == family && d.dim == dim && (d.theta - theta).abs() < 1e-12)
    }

    pub fn fitted(&self, name: &str, dim: usize) -> Option<f64> {
        self.fitted.iter().find(|f| f.name == name && f.dim == dim).map(|f| f.value)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes") + "\n"
    }
}

/// Dipole constants for `k` at `theta`: the frozen entry when there is one,
/// otherwise computed with the same procedure.
pub fn dipole_constants(k: &Kernel, theta: f64) -> Result<DipoleConstants> {
    if let Some(d) = Calibration::global()?.dipole(k.family(), k.dim(), theta) {
        return Ok(d.clone());
    }
    calibrate_dipole(k, theta)
}

/// Runs the calibration sweep for one kernel family, dimension and `theta`.
/// Components of `grad E` share one entry (maximum over the axes).
pub fn calibrate_dipole(k: &Kernel, theta: f64) -> Result<DipoleConstants> {
    if !(theta > 1.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must exceed 1 (got {theta})")));
    }
    if k.declared_bounds().is_none() {
        return Err(Error::Hypothesis(format!(
            "kernel {} does not satisfy the growth bounds",
            k.name()
        )));
    }
    let dim = k.dim();
    let kernels: Vec<Kernel> = match k.kind() {
        KernelKind::FundamentalGrad(_) => (0..dim).map(|a| Kernel::fundamental_grad(dim, a)).collect::<Result<_>>()?,
        _ => vec![*k],
    };
    let zs = dipole_family(dim);
    let n = dim as i32;
    let m = match dim {
        1 => 1,
        2 => 129,
        _ => 33,
    };

    let mut c_far = 0.0f64;
    for &s in &SHELLS {
        for x in shell_points(dim, 0.5 * theta * s, m) {
            let rn = norm(&x, dim).powi(n);
            for k in &kernels {
                let k0 = k.eval_arr(x);
                for z in &zs {
                    let v = (k.eval_arr(sub(&x, z, dim)) - k0).abs() * rn;
                    c_far = c_far.max(v);
                }
            }
        }
    }

    let mut c_grad = 0.0f64;
    for &s in &SHELLS {
        for w in shell_points(dim, 0.25 * (theta + 1.0) * s, m) {
            let rn1 = norm(&w, dim).powi(n + 1);
            for k in &kernels {
                let g0 = k.grad_arr(w);
                for z in &zs {
                    let g = k.grad_arr(sub(&w, z, dim));
                    let d: f64 = (0..dim).map(|a| (g[a] - g0[a]).powi(2)).sum::<f64>().sqrt();
                    c_grad = c_grad.max(d * rn1);
                }
            }
        }
    }

    let c_far = SAFETY * c_far;
    let c_grad = SAFETY * c_grad;
    let eps = (theta - 1.0) / (2.0 * theta * (dim as f64).sqrt());
    let c_close = c_grad / (1.0 - eps).powi(n + 1);
    Ok(DipoleConstants {
        family: k.family().to_string(),
        dim,
        theta,
        c_far,
        c_grad,
        c_close,
        eps,
        c_prime: c_close.max(c_far / eps),
    })
}

/// Dipole constants for every frozen (family, N, theta).
pub fn calibrate_dipoles() -> Result<Vec<DipoleConstants>> {
    let mut out = Vec::new();
    for dim in [2, 3] {
        for k in [Kernel::riesz(dim)?, Kernel::fundamental_grad(dim, 0)?] {
            for theta in CALIBRATION_THETAS {
                out.push(calibrate_dipole(&k, theta)?);
            }
        }
    }
    Ok(out)
}

/// Name of the fitted bound on `|{I_t > t}| t / ||mu||` for the composite coefficient.
pub const COMPOSITE_WEAK_LEVEL: &str = "composite_weak_level";
/// Name of the fitted bound on `int_F I / |mu|(F^c)` for the Marcinkiewicz integral.
pub const MARCINKIEWICZ: &str = "marcinkiewicz";
/// Heights `2^k`, `k = 0..8`, of the composite sweep.
pub const COMPOSITE_HEIGHTS: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
const MARCINKIEWICZ_FIXTURES: u64 = 20;

/// Largest `|{I_t > t}| t / ||mu||` over the composite scenarios and heights.
pub fn measure_composite_weak_level(dim: usize) -> Result<f64> {
    let k = Kernel::riesz(dim)?;
    let mut worst = 0.0f64;
    for sc in crate::fixtures::composite_scenarios(dim)? {
        let params = crate::cz::CzParams {
            cells: sc.grid.cells()[0],
            ..Default::default()
        };
        for t in COMPOSITE_HEIGHTS {
            let c = crate::coefficient::composite_coefficient(&k, &sc.mu, t, &sc.bounds, &params)?;
            worst = worst.max(c.weak_level_ratio());
        }
    }
    Ok(worst)
}

/// Largest Marcinkiewicz ratio over seeded random measures and closed sets.
pub fn measure_marcinkiewicz(dim: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let n = if dim == 2 { 32 } else { 12 };
    let grid = crate::grid::Grid::uniform(crate::geometry::Aabb::cube(dim, 0.0, 1.0)?, n)?;
    let mut worst = 0.0f64;
    for i in 0..MARCINKIEWICZ_FIXTURES {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + i);
        let mu = crate::fixtures::random_measure(&grid, &mut rng);
        let f = crate::fixtures::random_closed_set(&grid, &mut rng);
        worst = worst.max(crate::maximal::marcinkiewicz_total(&mu, &f)?.ratio);
    }
    Ok(worst)
}

/// Seed of the Marcinkiewicz calibration suite.
pub const MARCINKIEWICZ_SEED: u64 = 4200;

/// The full calibration: dipole constants and the fitted regression bounds.
pub fn calibrate_all() -> Result<Calibration> {
    let mut fitted = Vec::new();
    for dim in [2, 3] {
        fitted.push(FittedConstant {
            name: COMPOSITE_WEAK_LEVEL.into(),
            dim,
            value: measure_composite_weak_level(dim)?,
        });
        fitted.push(FittedConstant {
            name: MARCINKIEWICZ.into(),
            dim,
            value: measure_marcinkiewicz(dim, MARCINKIEWICZ_SEED)?,
        });
    }
    Ok(Calibration {
        version: CALIBRATION_VERSION,
        safety: SAFETY,
        dipole: calibrate_dipoles()?,
        fitted,
    })
}

fn norm(x: &[f64; MAX_DIM], dim: usize) -> f64 {
    x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sub(x: &[f64; MAX_DIM], z: &[f64; MAX_DIM], dim: usize) -> [f64; MAX_DIM] {
    let mut d = [0.0; MAX_DIM];
    for a in 0..dim {
        d[a] = x[a] - z[a];
    }
    d
}

/// Points `z` of the unit cube: each base configuration at each scale,
/// under all axis permutations and sign changes.
fn dipole_family(dim: usize) -> Vec<[f64; MAX_DIM]> {
    let bases: Vec<[f64; MAX_DIM]> = match dim {
        1 => vec![[0.5, 0.0, 0.0]],
        2 => vec![[0.5, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.25, 0.0]],
        _ => vec![[0.5, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.5, 0.5]],
    };
    let perms = permutations(dim);
    let mut out: Vec<[f64; MAX_DIM]> = Vec::new();
    for b in &bases {
        for p in &perms {
            for signs in 0..(1u32 << dim) {
                let mut v = [0.0; MAX_DIM];
                for a in 0..dim {
                    let s = if signs >> a & 1 == 1 { -1.0 } else { 1.0 };
                    v[a] = s * b[p[a]];
                }
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
    }
    let mut zs = Vec::new();
    for v in &out {
        for &s in &SCALES {
            let mut z = [0.0; MAX_DIM];
            for a in 0..dim {
                z[a] = s * v[a];
            }
            zs.push(z);
        }
    }
    zs
}

fn permutations(dim: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ],
    }
}

/// `m^{N-1}` points on each face of `{|x|_inf = rho}`.
fn shell_points(dim: usize, rho: f64, m: usize) -> Vec<[f64; MAX_DIM]> {
    let mut out = Vec::new();
    let coord = |k: usize| if m == 1 { 0.0 } else { -rho + 2.0 * rho * k as f64 / (m - 1) as f64 };
    let count = m.pow(dim as u32 - 1);
    for axis in 0..dim {
        for sign in [-1.0, 1.0] {
            for mut t in 0..count {
                let mut x = [0.0; MAX_DIM];
                for (a, xa) in x.iter_mut().enumerate().take(dim) {
                    if a == axis {
                        *xa = sign * rho;
                    } else {
                        *xa = coord(t % m);
                        t /= m;
                    }
                }
                out.push(x);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_file_parses_and_covers_the_sweep() {
        let c = Calibration::embedded().unwrap();
        assert_eq!(c.version, CALIBRATION_VERSION);
        for dim in [2, 3] {
            for fam in ["riesz", "gradE"] {
                for theta in CALIBRATION_THETAS {
                    assert!(c.dipole(fam, dim, theta).is_some(), "{fam} {dim} {theta}");
                }
            }
        }
    }

    #[test]
    fn frozen_dipole_constants_reproduce() {
        let frozen = Calibration::embedded().unwrap();
        for d in calibrate_dipoles().unwrap() {
            let f = frozen.dipole(&d.family, d.dim, d.theta).unwrap();
            assert!((f.c_prime - d.c_prime).abs() <= 1e-9 * d.c_prime, "{d:?} vs {f:?}");
            assert!((f.c_far - d.c_far).abs() <= 1e-9 * d.c_far);
        }
    }

    #[test]
    fn constants_follow_the_proof_relations() {
        let d = calibrate_dipole(&Kernel::riesz(2).unwrap(), 2.0).unwrap();
        assert!((d.eps - 1.0 / (4.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((d.c_close - d.c_grad / (1.0 - d.eps).powi(3)).abs() < 1e-12 * d.c_close);
        assert_eq!(d.c_prime, d.c_close.max(d.c_far / d.eps));
        // dipole of two unit-separated points: |K*nu| ~ |x|^{-2}, so C'' is at least 1/2
        assert!(d.c_far > 0.5);
    }

    #[test]
    fn kernels_without_bounds_are_refused() {
        assert!(calibrate_dipole(&Kernel::fundamental(3).unwrap(), 2.0).is_err());
        assert!(calibrate_dipole(&Kernel::riesz(2).unwrap(), 1.0).is_err());
    }

    #[test]
    fn family_has_five_scales_per_direction() {
        // 2-D: 4 axis directions, 4 diagonals, 8 knight-like points
        assert_eq!(dipole_family(2).len(), 16 * 5);
        assert_eq!(dipole_family(3).len(), (6 + 12 + 8) * 5);
        assert_eq!(shell_points(2, 1.0, 5).len(), 4 * 5);
    }
}
