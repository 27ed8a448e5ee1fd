//! Coefficients `I` for which `|K*mu(x) - K*mu(y)| <= (I(x) + I(y)) |x - y|`.
//!
//! * dipole: `I(y) = C' l ||nu|| / |y - zbar|^{N+1}` outside `theta Q` for a
//!   mean-zero `nu` supported in `Q`;
//! * composite: `J + sum_n I_n` on `F` and `+inf` off `F`, where `J = 2^N M|grad(K*g)|`
//!   and `I_n` are the dipole coefficients (`theta = 2`) of the bad parts of a
//!   Calderon-Zygmund decomposition at height `t`;
//! * lp: `2^N M|grad(K*mu)| + R*|mu|` with `R = chi_{B_1} / |xi|^{N-1}`;
//! * uniformized: `H = sup_n 2^{n+2} chi_{I_{2^n} > 2^n}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{dipole_constants, DipoleConstants};
use crate::cz::{cz_decompose, CzDecomposition, CzParams};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Cube, Point, MAX_DIM};
use crate::grid::{Grid, GridField};
use crate::kernels::{convolve_density, grid_convolution, Kernel};
use crate::lipschitz::sobolev_coefficient;
use crate::maximal::{superlevel_volume, RadiiSchedule};
use crate::measure::SignedMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Construction {
    Dipole { theta: f64 },
    Composite { t: f64 },
    Lp { p: f64 },
    Uniformized,
}

/// Nonnegative coefficient on a grid; `+inf` marks points where no claim is made.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub values: GridField,
    pub construction: Construction,
    pub height: Option<f64>,
    pub fitted_constant: f64,
}

impl CoefficientField {
    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.values.get(cell)
    }

    /// `|{I > t}|` on the grid.
    pub fn superlevel_volume(&self, t: f64) -> f64 {
        superlevel_volume(&self.values, t)
    }

    /// Infinite values are written as `null`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "construction": self.construction,
            "height": self.height,
            "fitted_constant": self.fitted_constant,
            "field": self.values.to_json(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let construction: Construction = serde_json::from_value(v["construction"].clone())?;
        let height = v["height"].as_f64();
        let fitted_constant = v["fitted_constant"]
            .as_f64()
            .ok_or_else(|| Error::Format("missing fitted_constant".into()))?;
        let field = &v["field"];
        let raw = field["values"]
            .as_array()
            .ok_or_else(|| Error::Format("missing field values".into()))?;
        let vals: Vec<f64> = raw.iter().map(|x| x.as_f64().unwrap_or(f64::INFINITY)).collect();
        let mut stripped = field.clone();
        stripped["values"] = serde_json::json!(vec![0.0; vals.len()]);
        let shape = GridField::from_json(&stripped)?;
        Ok(CoefficientField {
            values: GridField::with_components(shape.grid().clone(), shape.components(), vals)?,
            construction,
            height,
            fitted_constant,
        })
    }
}

/// `int_{|y - zbar|_inf >= theta l / 2} |y - zbar|^{-N-1} dy`.
pub fn exterior_integral(dim: usize, theta: f64, side: f64) -> f64 {
    // polar coordinates in the max norm: (2 / (theta l)) * int over the cube
    // surface {|w|_inf = 1} of |w|^{-N-1}
    let surface = match dim {
        1 => 2.0,
        2 => 4.0 * 2f64.sqrt(),
        _ => {
            // inner integral over s in closed form, outer by Simpson's rule
            let inner = |t: f64| {
                let c2 = 1.0 + t * t;
                let c = c2.sqrt();
                2.0 * (1.0 / (2.0 * c2 * (c2 + 1.0)) + (1.0 / c).atan() / (2.0 * c2 * c))
            };
            let n = 20_000;
            let h = 2.0 / n as f64;
            let mut s = inner(-1.0) + inner(1.0);
            for k in 1..n {
                let t = -1.0 + k as f64 * h;
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * inner(t);
            }
            6.0 * s * h / 3.0
        }
    };
    2.0 / (theta * side) * surface
}

/// The explicit dipole coefficient of a mean-zero measure supported in `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DipoleCoefficient {
    pub cube: Cube,
    pub theta: f64,
    /// `||nu||`.
    pub mass: f64,
    pub constants: DipoleConstants,
}

impl DipoleCoefficient {
    pub fn new(k: &Kernel, nu: &SignedMeasure, q: &Cube, theta: f64) -> Result<Self> {
        check_dipole(nu, q, theta)?;
        Ok(DipoleCoefficient {
            cube: *q,
            theta,
            mass: nu.total_variation(),
            constants: dipole_constants(k, theta)?,
        })
    }

    /// `C' l ||nu|| / |y - zbar|^{N+1}`, or `+inf` inside `theta Q`.
    pub fn value(&self, y: &Point) -> f64 {
        if !self.cube.outside_dilate(y, self.theta) {
            return f64::INFINITY;
        }
        dipole_formula(&self.constants, &self.cube, self.mass, y)
    }

    /// `C' l ||nu|| * int_{outside theta Q} |y - zbar|^{-N-1} dy`.
    pub fn l1_bound(&self) -> f64 {
        self.constants.c_prime
            * self.cube.side()
            * self.mass
            * exterior_integral(self.cube.center().dim(), self.theta, self.cube.side())
    }

    pub fn field(&self, grid: &Grid) -> Result<CoefficientField> {
        if grid.dim() != self.cube.center().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.cube.center().dim(),
                got: grid.dim(),
            });
        }
        let values = (0..grid.len()).into_par_iter().map(|i| self.value(&grid.center(i))).collect();
        Ok(CoefficientField {
            values: GridField::from_values(grid.clone(), values)?,
            construction: Construction::Dipole { theta: self.theta },
            height: None,
            fitted_constant: self.constants.c_prime,
        })
    }
}

fn dipole_formula(c: &DipoleConstants, q: &Cube, mass: f64, y: &Point) -> f64 {
    if mass == 0.0 {
        return 0.0;
    }
    let n = q.center().dim() as i32;
    c.c_prime * q.side() * mass / y.sub(q.center()).norm().powi(n + 1)
}

/// `theta > 1`, `nu(Q) = 0` exactly and `supp nu` inside the closed cube.
fn check_dipole(nu: &SignedMeasure, q: &Cube, theta: f64) -> Result<()> {
    if !(theta > 1.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must exceed 1 (got {theta})")));
    }
    let dim = q.center().dim();
    if nu.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: nu.dim(),
        });
    }
    let half = 0.5 * q.side() * (1.0 + 1e-12);
    let inside = |x: &Point, pad: f64| x.sub(q.center()).norm_max() + pad <= half;
    if nu.atoms().iter().any(|a| !inside(&a.x, 0.0)) {
        return Err(Error::Precondition("an atom lies outside the cube".into()));
    }
    if let Some(f) = nu.density() {
        let g = f.grid();
        let pad = 0.5 * (0..dim).map(|a| g.spacing(a)).fold(0.0, f64::max);
        if (0..g.len()).any(|i| f.get(i) != 0.0 && !inside(&g.center(i), pad)) {
            return Err(Error::Precondition("the density is not supported in the cube".into()));
        }
    }
    let m = nu.total_mass();
    if m != 0.0 {
        return Err(Error::Precondition(format!("the measure has mass {m:e}, not zero")));
    }
    Ok(())
}

/// `C'' l ||nu|| / |x - zbar|^N` for `x` outside `theta Q`.
pub fn far_estimate_bound(k: &Kernel, nu: &SignedMeasure, q: &Cube, theta: f64, x: &Point) -> Result<f64> {
    check_dipole(nu, q, theta)?;
    if !q.outside_dilate(x, theta) {
        return Err(Error::Domain("the point lies inside the dilated cube".into()));
    }
    let c = dipole_constants(k, theta)?;
    let n = q.center().dim() as i32;
    Ok(c.c_far * q.side() * nu.total_variation() / x.sub(q.center()).norm().powi(n))
}

/// Grid field of the dipole coefficient (`+inf` inside `theta Q`).
pub fn dipole_coefficient(k: &Kernel, nu: &SignedMeasure, q: &Cube, theta: f64, grid: &Grid) -> Result<CoefficientField> {
    DipoleCoefficient::new(k, nu, q, theta)?.field(grid)
}

#[derive(Clone, Debug)]
pub struct CompositeCoefficient {
    pub coefficient: CoefficientField,
    pub decomposition: CzDecomposition,
    /// `2^N M|grad(K*g)|` on the whole grid.
    pub j: GridField,
    pub constants: DipoleConstants,
}

impl CompositeCoefficient {
    /// `|{I > t}| t / ||mu||`.
    pub fn weak_level_ratio(&self) -> f64 {
        let d = &self.decomposition;
        if d.source_mass == 0.0 {
            return 0.0;
        }
        self.coefficient.superlevel_volume(d.t) * d.t / d.source_mass
    }
}

/// The coefficient of the singular-integral estimate at height `t`.
pub fn composite_coefficient(
    k: &Kernel,
    mu: &SignedMeasure,
    t: f64,
    bounds: &Aabb,
    params: &CzParams,
) -> Result<CompositeCoefficient> {
    let d = cz_decompose(mu, t, bounds, params)?;
    let grid = d.grid.clone();
    let dim = grid.dim();
    let constants = dipole_constants(k, 2.0)?;

    let vg = convolve_density(k, &d.g)?;
    let schedule = params.schedule.clone().unwrap_or_else(|| RadiiSchedule::default_for(&grid));
    let j = sobolev_coefficient(&vg, Some(&schedule))?;

    let parts: Vec<(Cube, f64)> = d
        .bad_parts
        .iter()
        .map(|b| (b.cube.to_cube(d.cover.base_scale), b.total_variation()))
        .filter(|(_, m)| *m > 0.0)
        .collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !d.f_set.cell_in_set(i) {
                return f64::INFINITY;
            }
            let y = grid.center(i);
            let mut s = j.get(i);
            for (q, m) in &parts {
                s += dipole_formula(&constants, q, *m, &y);
            }
            s
        })
        .collect();
    debug_assert!(dim <= MAX_DIM);
    Ok(CompositeCoefficient {
        coefficient: CoefficientField {
            values: GridField::from_values(grid, values)?,
            construction: Construction::Composite { t },
            height: Some(t),
            fitted_constant: constants.c_prime,
        },
        decomposition: d,
        j,
        constants,
    })
}

#[derive(Clone, Debug)]
pub struct LpCoefficient {
    pub coefficient: CoefficientField,
    /// `2^N M|grad(K*mu)|`.
    pub maximal_term: GridField,
    /// `R * |mu|`.
    pub r_term: GridField,
    /// `||I||_p / ||mu||_p`.
    pub ratio: f64,
}

/// The `L^p` coefficient of an absolutely continuous measure, on its grid.
pub fn lp_coefficient(k: &Kernel, mu: &SignedMeasure, p: f64) -> Result<LpCoefficient> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must lie in (1, inf) (got {p})")));
    }
    if !mu.atoms().is_empty() {
        return Err(Error::Precondition("the measure must not have atoms".into()));
    }
    let f = mu
        .density()
        .ok_or_else(|| Error::Precondition("the measure needs a density grid".into()))?;
    let grid = f.grid().clone();
    let dim = grid.dim();
    let v = convolve_density(k, f)?;
    let maximal_term = sobolev_coefficient(&v, None)?;
    let absf: Vec<f64> = f.values().iter().map(|x| x.abs()).collect();
    let r = grid_convolution(&grid, &absf, |d| {
        let r2: f64 = d[..dim].iter().map(|x| x * x).sum();
        if r2 < 1.0 {
            r2.sqrt().powi(1 - dim as i32)
        } else {
            0.0
        }
    });
    let r_term = GridField::from_values(grid.clone(), r.into_iter().map(|x| x.max(0.0)).collect())?;
    let values: Vec<f64> = maximal_term.values().iter().zip(r_term.values()).map(|(a, b)| a + b).collect();
    let field = GridField::from_values(grid, values)?;
    let norm_mu = f.lp_norm(p);
    let ratio = if norm_mu > 0.0 { field.lp_norm(p) / norm_mu } else { 0.0 };
    Ok(LpCoefficient {
        coefficient: CoefficientField {
            values: field,
            construction: Construction::Lp { p },
            height: None,
            fitted_constant: ratio,
        },
        maximal_term,
        r_term,
        ratio,
    })
}

/// `H = max_n 2^{n+2} chi_{I_{2^n} > 2^n}` over a family indexed by
/// consecutive dyadic heights, each with `|{I_t > t}| <= A'/t`.
pub fn uniformize(family: &[(f64, CoefficientField)], a_prime: f64) -> Result<CoefficientField> {
    if family.is_empty() {
        return Err(Error::InvalidParameter("empty family".into()));
    }
    if !(a_prime > 0.0 && a_prime.is_finite()) {
        return Err(Error::InvalidParameter(format!("A' must be positive (got {a_prime})")));
    }
    let mut members: Vec<(i32, &CoefficientField)> = Vec::with_capacity(family.len());
    for (t, c) in family {
        let n = t.log2().round() as i32;
        if !(*t > 0.0) || 2f64.powi(n) != *t {
            return Err(Error::InvalidParameter(format!("height {t} is not a power of two")));
        }
        if c.grid() != family[0].1.grid() {
            return Err(Error::Precondition("family members live on different grids".into()));
        }
        let vol = c.superlevel_volume(*t);
        if vol > a_prime / t * (1.0 + 1e-12) {
            return Err(Error::Hypothesis(format!(
                "|{{I_t > t}}| = {vol} exceeds A'/t = {} at t = {t}",
                a_prime / t
            )));
        }
        members.push((n, c));
    }
    members.sort_by_key(|m| m.0);
    if members.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(Error::InvalidParameter("heights must be consecutive powers of two".into()));
    }
    let grid = members[0].1.grid().clone();
    let values = (0..grid.len())
        .map(|i| {
            members
                .iter()
                .filter(|(n, c)| c.get(i) > 2f64.powi(*n))
                .map(|(n, _)| 2f64.powi(n + 2))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(CoefficientField {
        values: GridField::from_values(grid, values)?,
        construction: Construction::Uniformized,
        height: None,
        fitted_constant: a_prime,
    })
}

/// `||grad(K*g)||_{L^2(box)} / ||g||_{L^2}` with central differences on the grid of `g`.
pub fn l2_gradient_check(k: &Kernel, g: &GridField) -> Result<f64> {
    let norm_g = g.lp_norm(2.0);
    if norm_g == 0.0 {
        return Err(Error::InvalidParameter("the density is zero".into()));
    }
    let v = convolve_density(k, g)?;
    Ok(v.gradient().magnitude().lp_norm(2.0) / norm_g)
}
