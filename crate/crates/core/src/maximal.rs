//! Centered Hardy-Littlewood maximal function of a measure, its level sets,
//! and the Marcinkiewicz integral.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed::ClosedSet;
use crate::error::{Error, Result};
use crate::fft::StencilConvolver;
use crate::geometry::{unit_ball_volume, Point};
use crate::grid::{neumaier_sum, Grid, GridField};
use crate::measure::SignedMeasure;

/// Radii over which the supremum is taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RadiiSchedule {
    /// `min * 2^k` up to the first radius reaching `max`.
    Dyadic { min: f64, max: f64 },
    /// `min * ratio^k` up to the first radius reaching `max`.
    Geometric { min: f64, max: f64, ratio: f64 },
    Explicit { radii: Vec<f64> },
}

impl RadiiSchedule {
    /// Dyadic radii from half the finest spacing to the box diameter.
    pub fn default_for(grid: &Grid) -> Self {
        let h = (0..grid.dim()).map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
        RadiiSchedule::Dyadic {
            min: 0.5 * h,
            max: grid.bounds().diameter(),
        }
    }

    pub fn radii(&self) -> Result<Vec<f64>> {
        let geometric = |min: f64, max: f64, ratio: f64| -> Result<Vec<f64>> {
            if !(min > 0.0 && max >= min && ratio > 1.0 && max.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "bad radii schedule: min {min}, max {max}, ratio {ratio}"
                )));
            }
            let mut out = vec![min];
            while *out.last().unwrap() < max {
                let r = out.last().unwrap() * ratio;
                out.push(r);
            }
            Ok(out)
        };
        let r = match self {
            RadiiSchedule::Dyadic { min, max } => geometric(*min, *max, 2.0)?,
            RadiiSchedule::Geometric { min, max, ratio } => geometric(*min, *max, *ratio)?,
            RadiiSchedule::Explicit { radii } => radii.clone(),
        };
        if r.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) || r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("radii must be positive and strictly increasing".into()));
        }
        Ok(r)
    }

    /// Largest ratio between consecutive radii.
    pub fn max_ratio(&self) -> Result<f64> {
        let r = self.radii()?;
        Ok(r.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaximalField {
    pub field: GridField,
    pub radii: Vec<f64>,
}

impl MaximalField {
    pub fn values(&self) -> &[f64] {
        self.field.values()
    }
}

/// `M mu(x) = max_k |mu|(B_{r_k}(x)) / |B_{r_k}(x)|` at every cell center.
///
/// Balls are open. Atoms are counted analytically against `omega_N r^N`.
/// Density is counted by cell centers and normalized by the volume of the
/// same lattice ball (number of lattice points times the cell volume), so a
/// constant density `c` has maximal function exactly `c` away from the box
/// boundary. The value at a point carrying an atom is `+inf`.
/// A density, when present, must live on `grid`.
pub fn maximal_function(mu: &SignedMeasure, grid: &Grid, schedule: &RadiiSchedule) -> Result<MaximalField> {
    let radii = schedule.radii()?;
    if mu.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: mu.dim(),
        });
    }
    if let Some(f) = mu.density() {
        if f.grid() != grid {
            return Err(Error::Precondition(
                "the density must be sampled on the evaluation grid".into(),
            ));
        }
    }
    let dim = grid.dim();
    let omega = unit_ball_volume(dim);
    let ball_vol: Vec<f64> = radii.iter().map(|r| omega * r.powi(dim as i32)).collect();
    let dens = density_ball_averages(mu, grid, &radii);

    let atoms: Vec<(Point, f64)> = mu.atoms().iter().map(|a| (a.x, a.w.abs())).collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.center(i);
            let mut acc = vec![0.0; radii.len()];
            for (a, w) in &atoms {
                let d = x.sub(a).norm();
                if d == 0.0 {
                    return f64::INFINITY;
                }
                let k = radii.partition_point(|&r| r <= d);
                if k < radii.len() {
                    acc[k] += w;
                }
            }
            let mut run = 0.0;
            let mut best = 0.0f64;
            for k in 0..radii.len() {
                run += acc[k];
                let mut v = run / ball_vol[k];
                if let Some(d) = &dens {
                    v += d[k][i];
                }
                best = best.max(v);
            }
            best
        })
        .collect();
    Ok(MaximalField {
        field: GridField::from_values(grid.clone(), values)?,
        radii,
    })
}

/// Per radius, the lattice-ball average of `|f|` at every cell.
fn density_ball_averages(mu: &SignedMeasure, grid: &Grid, radii: &[f64]) -> Option<Vec<Vec<f64>>> {
    let f = mu.density()?;
    let absf: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let dim = grid.dim();
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
    let dims = grid.cells().to_vec();
    let sq = |o: [i64; 3]| -> f64 { (0..dim).map(|a| (o[a] as f64 * h[a]).powi(2)).sum() };

    // radii that select the same in-grid offsets share one convolution
    let full_r2: f64 = (0..dim).map(|a| ((dims[a] - 1) as f64 * h[a]).powi(2)).sum();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(radii.len());
    let mut last: Option<(usize, bool, Vec<f64>)> = None;
    for &r in radii {
        let count = lattice_ball_count(&h, r);
        let r2 = r * r;
        let full = r2 > full_r2;
        let sums = match &last {
            Some((c, _, s)) if *c == count => s.clone(),
            Some((_, true, s)) => s.clone(),
            _ => StencilConvolver::new(&dims, |o| if sq(o) < r2 { 1.0 } else { 0.0 }).apply(&absf),
        };
        let norm = 1.0 / count as f64;
        out.push(sums.iter().map(|s| (s * norm).max(0.0)).collect());
        last = Some((count, full, sums));
    }
    Some(out)
}

/// Number of lattice points `o` with `|o h| < r` (open ball, infinite lattice).
fn lattice_ball_count(h: &[f64], r: f64) -> usize {
    let dim = h.len();
    let reach: Vec<i64> = (0..3).map(|a| if a < dim { (r / h[a]).floor() as i64 } else { 0 }).collect();
    let r2 = r * r;
    let mut count = 0;
    for o2 in -reach[2]..=reach[2] {
        for o1 in -reach[1]..=reach[1] {
            for o0 in -reach[0]..=reach[0] {
                let o = [o0, o1, o2];
                let d2: f64 = (0..dim).map(|a| (o[a] as f64 * h[a]).powi(2)).sum();
                if d2 < r2 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Lebesgue measure of `{f > t}`, counted cell by cell.
pub fn superlevel_volume(f: &GridField, t: f64) -> f64 {
    let n = f.values().iter().filter(|&&v| v > t).count();
    n as f64 * f.grid().cell_volume()
}

/// `|{M mu > t}|` on the grid.
pub fn superlevel_measure(m: &MaximalField, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("height must be positive (got {t})")));
    }
    Ok(superlevel_volume(&m.field, t))
}

/// `int_{R^N \ F} d(z, F) / |y - z|^{N+1} d|mu|(z)` for `y` in `F`.
pub fn marcinkiewicz_integral(mu: &SignedMeasure, f: &ClosedSet, y: &Point) -> Result<f64> {
    if !f.contains(y) {
        return Err(Error::Domain("the evaluation point must lie in the closed set".into()));
    }
    let p = (mu.dim() + 1) as i32;
    let atoms = mu
        .atoms()
        .iter()
        .filter(|a| !f.contains(&a.x))
        .map(|a| a.w.abs() * f.distance(&a.x) / y.sub(&a.x).norm().powi(p));
    let cells: Vec<f64> = match mu.density() {
        None => Vec::new(),
        Some(dens) => {
            let g = dens.grid();
            let vol = g.cell_volume();
            let same = g == f.grid();
            (0..g.len())
                .filter_map(|i| {
                    let v = dens.get(i);
                    if v == 0.0 {
                        return None;
                    }
                    let z = g.center(i);
                    let (outside, d) = if same {
                        (!f.cell_in_set(i), f.cell_distance(i))
                    } else {
                        (!f.contains(&z), f.distance(&z))
                    };
                    outside.then(|| v.abs() * vol * d / y.sub(&z).norm().powi(p))
                })
                .collect()
        }
    };
    Ok(neumaier_sum(atoms.chain(cells)))
}

/// `int_F I(y) dy` against `|mu|(F^c)`; their ratio is bounded by a constant
/// depending only on `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarcinkiewiczTotal {
    pub integral: f64,
    pub outside_variation: f64,
    pub ratio: f64,
}

/// Sums the Marcinkiewicz integral over the cells of `F`.
pub fn marcinkiewicz_total(mu: &SignedMeasure, f: &ClosedSet) -> Result<MarcinkiewiczTotal> {
    let grid = f.grid();
    let vol = grid.cell_volume();
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| f.cell_in_set(i)).collect();
    let parts: Vec<f64> = cells
        .par_iter()
        .map(|&i| marcinkiewicz_integral(mu, f, &grid.center(i)).map(|v| v * vol))
        .collect::<Result<_>>()?;
    let integral = neumaier_sum(parts);
    let atoms = mu.atoms().iter().filter(|a| !f.contains(&a.x)).map(|a| a.w.abs());
    let dens: Vec<f64> = match mu.density() {
        None => Vec::new(),
        Some(d) => {
            let g = d.grid();
            let same = g == grid;
            (0..g.len())
                .filter(|&i| if same { !f.cell_in_set(i) } else { !f.contains(&g.center(i)) })
                .map(|i| d.get(i).abs() * g.cell_volume())
                .collect()
        }
    };
    let outside_variation = neumaier_sum(atoms.chain(dens));
    let ratio = if outside_variation > 0.0 {
        integral / outside_variation
    } else {
        0.0
    };
    Ok(MarcinkiewiczTotal {
        integral,
        outside_variation,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::measure::Atom;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn p(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn schedules() {
        let r = RadiiSchedule::Dyadic { min: 0.5, max: 3.0 }.radii().unwrap();
        assert_eq!(r, vec![0.5, 1.0, 2.0, 4.0]);
        assert_eq!(
            RadiiSchedule::Explicit { radii: vec![] }.radii(),
            Err(Error::EmptySchedule)
        );
        assert!(RadiiSchedule::Explicit { radii: vec![1.0, 0.5] }.radii().is_err());
    }

    #[test]
    fn lattice_count_small_radii() {
        assert_eq!(lattice_ball_count(&[1.0, 1.0], 0.5), 1);
        assert_eq!(lattice_ball_count(&[1.0, 1.0], 1.0), 1);
        assert_eq!(lattice_ball_count(&[1.0, 1.0], 1.01), 5);
        assert_eq!(lattice_ball_count(&[1.0, 1.0, 1.0], 1.5), 19);
    }

    #[test]
    fn dirac_closed_form() {
        // |mu|(B_r(x)) = 1 iff r > |x|, so M delta_0(x) = 1 / (pi |x|^2) in the dense limit
        let g = Grid::uniform(Aabb::cube(2, -2.0, 4.0).unwrap(), 4).unwrap();
        let mu = SignedMeasure::dirac(p(&[0.0, 0.0]), 1.0);
        let sched = RadiiSchedule::Geometric { min: 0.01, max: 6.0, ratio: 1.001 };
        let m = maximal_function(&mu, &g, &sched).unwrap();
        for i in 0..g.len() {
            let x = g.center(i);
            let exact = 1.0 / (PI * x.norm2());
            let v = m.field.get(i);
            assert!(v <= exact && v >= exact / 1.001f64.powi(2) * (1.0 - 1e-12), "{v} vs {exact}");
        }
        // |x| = 1 exactly
        let g1 = Grid::new(Aabb::from_slices(&[0.5, -0.5], &[1.5, 0.5]).unwrap(), &[1, 1]).unwrap();
        let m1 = maximal_function(&mu, &g1, &sched).unwrap();
        assert!((m1.field.get(0) - 1.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn constant_density_gives_constant() {
        let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 64).unwrap();
        let mu = SignedMeasure::from_density(GridField::constant(g.clone(), 2.5)).unwrap();
        let sched = RadiiSchedule::Dyadic { min: 1.0 / 128.0, max: 0.2 };
        let m = maximal_function(&mu, &g, &sched).unwrap();
        let mid = g.flat(&[32, 32]);
        assert!((m.field.get(mid) - 2.5).abs() < 1e-12);
        assert!(m.values().iter().all(|&v| v <= 2.5 + 1e-12));
    }

    #[test]
    fn zero_measure() {
        let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 8).unwrap();
        let m = maximal_function(&SignedMeasure::zero(2), &g, &RadiiSchedule::default_for(&g)).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        assert_eq!(superlevel_measure(&m, 0.1).unwrap(), 0.0);
        assert!(superlevel_measure(&m, 0.0).is_err());
    }

    #[test]
    fn constant_field_superlevel() {
        let g = Grid::uniform(Aabb::cube(2, 0.0, 2.0).unwrap(), 8).unwrap();
        let mu = SignedMeasure::from_density(GridField::constant(g.clone(), 1.0)).unwrap();
        let m = maximal_function(&mu, &g, &RadiiSchedule::default_for(&g)).unwrap();
        assert!((superlevel_measure(&m, 0.5).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_superlevel_is_one_over_t() {
        let g = Grid::uniform(Aabb::cube(2, -1.0, 2.0).unwrap(), 256).unwrap();
        let mu = SignedMeasure::dirac(p(&[0.0, 0.0]), 1.0);
        let sched = RadiiSchedule::Geometric { min: 1.0 / 512.0, max: 3.0, ratio: 1.005 };
        let m = maximal_function(&mu, &g, &sched).unwrap();
        for &t in &[2.0, 5.0, 20.0] {
            let s = superlevel_measure(&m, t).unwrap();
            assert!((s * t - 1.0).abs() < 0.05, "t={t}: {}", s * t);
        }
    }

    #[test]
    fn atom_location_is_infinite() {
        let g = Grid::uniform(Aabb::cube(1, 0.0, 1.0).unwrap(), 2).unwrap();
        let mu = SignedMeasure::dirac(p(&[0.25]), 1.0);
        let m = maximal_function(&mu, &g, &RadiiSchedule::default_for(&g)).unwrap();
        assert!(m.field.get(0).is_infinite());
        assert!(m.field.get(1).is_finite());
    }

    #[test]
    fn marcinkiewicz_examples() {
        let g = Grid::uniform(Aabb::cube(2, -0.5, 4.0).unwrap(), 4).unwrap();
        let f = ClosedSet::from_predicate(g.clone(), |z| z.get(1) == 0.0 && z.get(0) <= 1.0);
        let y = p(&[0.0, 0.0]);
        let one = SignedMeasure::dirac(p(&[2.0, 0.0]), 1.0);
        assert!((marcinkiewicz_integral(&one, &f, &y).unwrap() - 0.125).abs() < 1e-15);

        let inside = SignedMeasure::dirac(p(&[1.0, 0.0]), 3.0);
        assert_eq!(marcinkiewicz_integral(&inside, &f, &y).unwrap(), 0.0);

        let other = SignedMeasure::dirac(p(&[0.0, 2.0]), -2.0);
        let both = one.add(&other).unwrap();
        let sum = marcinkiewicz_integral(&one, &f, &y).unwrap() + marcinkiewicz_integral(&other, &f, &y).unwrap();
        assert!((marcinkiewicz_integral(&both, &f, &y).unwrap() - sum).abs() < 1e-15);

        assert!(matches!(
            marcinkiewicz_integral(&one, &f, &p(&[3.0, 3.0])),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_under_domination(
            atoms in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..2.0), 1..4),
            vals in prop::collection::vec(0.0f64..1.0, 256),
            extra in prop::collection::vec(0.0f64..1.0, 256),
        ) {
            let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 16).unwrap();
            let a: Vec<Atom> = atoms.iter().map(|&(x, y, w)| Atom { x: p(&[x, y]), w }).collect();
            let mut a2 = a.clone();
            for at in a2.iter_mut() { at.w *= 1.5; }
            let big: Vec<f64> = vals.iter().zip(&extra).map(|(v, e)| v + e).collect();
            let m1 = SignedMeasure::new(2, a, Some(GridField::from_values(g.clone(), vals).unwrap())).unwrap();
            let m2 = SignedMeasure::new(2, a2, Some(GridField::from_values(g.clone(), big).unwrap())).unwrap();
            let s = RadiiSchedule::default_for(&g);
            let f1 = maximal_function(&m1, &g, &s).unwrap();
            let f2 = maximal_function(&m2, &g, &s).unwrap();
            for (x, y) in f1.values().iter().zip(f2.values()) {
                prop_assert!(*x <= *y * (1.0 + 1e-12) + 1e-12);
                prop_assert!(*x >= 0.0);
            }
        }

        #[test]
        fn weak_maximal_inequality(
            atoms in prop::collection::vec((0.1f64..0.9, 0.1f64..0.9, -1.0f64..1.0), 0..5),
            vals in prop::collection::vec(-1.0f64..1.0, 1024),
            t in 0.5f64..50.0,
        ) {
            let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 32).unwrap();
            let a: Vec<Atom> = atoms.iter().map(|&(x, y, w)| Atom { x: p(&[x, y]), w }).collect();
            let mu = SignedMeasure::new(2, a, Some(GridField::from_values(g.clone(), vals).unwrap())).unwrap();
            let m = maximal_function(&mu, &g, &RadiiSchedule::default_for(&g)).unwrap();
            let s = superlevel_measure(&m, t).unwrap();
            prop_assert!(s * t <= 25.0 * mu.total_variation() * 1.05);
        }
    }
}
