//! Lipschitz-type estimates with a variable coefficient,
//! `|v(x) - v(y)| <= (I(x) + I(y)) |x - y|`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::maximal::{maximal_function, RadiiSchedule};
use crate::measure::SignedMeasure;

/// Relative slack allowed before a pair counts as a violation.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `|v(x) - v(y)| / ((I(x) + I(y)) |x - y|)`.
    pub worst_ratio: f64,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Records one pair; pairs with a non-finite value or coefficient are skipped.
    pub fn record(&mut self, vx: f64, vy: f64, ix: f64, iy: f64, dist: f64) {
        if !(vx.is_finite() && vy.is_finite()) || !(ix + iy).is_finite() {
            return;
        }
        self.checked += 1;
        let lhs = (vx - vy).abs();
        let rhs = (ix + iy) * dist;
        let ratio = if lhs == 0.0 {
            0.0
        } else if rhs == 0.0 {
            f64::INFINITY
        } else {
            lhs / rhs
        };
        self.worst_ratio = self.worst_ratio.max(ratio);
        if lhs > rhs * (1.0 + LIPSCHITZ_SLACK) {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &LipschitzReport) {
        self.checked += other.checked;
        self.violations += other.violations;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
    }
}

/// Checks the estimate for `v` and the coefficient `coeff` on pairs of cells.
pub fn check_lipschitz_coeff(v: &GridField, coeff: &GridField, pairs: &[(usize, usize)]) -> Result<LipschitzReport> {
    if v.grid() != coeff.grid() || v.components() != 1 || coeff.components() != 1 {
        return Err(Error::Precondition(
            "value and coefficient must be scalar fields on one grid".into(),
        ));
    }
    let g = v.grid();
    let mut r = LipschitzReport::default();
    for &(a, b) in pairs {
        let d = g.center(a).sub(&g.center(b)).norm();
        r.record(v.get(a), v.get(b), coeff.get(a), coeff.get(b), d);
    }
    Ok(r)
}

/// `2^N M|grad v|` with central-difference gradients.
pub fn sobolev_coefficient(v: &GridField, schedule: Option<&RadiiSchedule>) -> Result<GridField> {
    let grid = v.grid().clone();
    let grad = v.gradient().magnitude();
    let sched = schedule.cloned().unwrap_or_else(|| RadiiSchedule::default_for(&grid));
    let m = maximal_function(&SignedMeasure::from_density(grad)?, &grid, &sched)?;
    Ok(m.field.scaled(2f64.powi(grid.dim() as i32)))
}

/// Checks `|v(x) - v(y)| <= 2^N (M|grad v|(x) + M|grad v|(y)) |x - y|`.
pub fn maximal_sobolev_check(v: &GridField, pairs: &[(usize, usize)]) -> Result<LipschitzReport> {
    let coeff = sobolev_coefficient(v, None)?;
    check_lipschitz_coeff(v, &coeff, pairs)
}

/// Random pairs of distinct eligible cells: half uniform, half within a few
/// cells of each other.
pub fn sample_cell_pairs(
    grid: &crate::grid::Grid,
    eligible: &[usize],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    if eligible.len() < 2 {
        return Vec::new();
    }
    let dim = grid.dim();
    let mut ok = vec![false; grid.len()];
    for &c in eligible {
        ok[c] = true;
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let a = eligible[rng.gen_range(0..eligible.len())];
        let b = if out.len() % 2 == 0 {
            eligible[rng.gen_range(0..eligible.len())]
        } else {
            let idx = grid.multi(a);
            let mut j = [0usize; 3];
            let mut inside = true;
            for ax in 0..dim {
                let t = idx[ax] as i64 + rng.gen_range(-3i64..=3);
                inside &= t >= 0 && t < grid.cells()[ax] as i64;
                j[ax] = t.max(0) as usize;
            }
            if !inside {
                continue;
            }
            grid.flat(&j[..dim])
        };
        if a != b && ok[b] {
            out.push((a, b));
        }
    }
    out
}

/// Parallel evaluation of a report over arbitrary point pairs.
pub fn lipschitz_over<T: Sync>(items: &[T], f: impl Fn(&T) -> (f64, f64, f64, f64, f64) + Sync) -> LipschitzReport {
    items
        .par_iter()
        .map(|it| {
            let (vx, vy, ix, iy, d) = f(it);
            let mut r = LipschitzReport::default();
            r.record(vx, vy, ix, iy, d);
            r
        })
        .reduce(LipschitzReport::default, |mut a, b| {
            a.merge(&b);
            a
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::grid::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::uniform(Aabb::cube(2, -1.0, 2.0).unwrap(), n).unwrap()
    }

    fn all_pairs(g: &Grid, count: usize, seed: u64) -> Vec<(usize, usize)> {
        let cells: Vec<usize> = (0..g.len()).collect();
        sample_cell_pairs(g, &cells, count, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn linear_field_with_its_slope() {
        let g = grid(32);
        let v = GridField::from_fn(g.clone(), |p| 3.0 * p.get(0) + 4.0 * p.get(1));
        let i = GridField::constant(g.clone(), 5.0);
        let r = check_lipschitz_coeff(&v, &i, &all_pairs(&g, 1000, 1)).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.worst_ratio <= 0.5 + 1e-12);
        assert_eq!(r.checked, 1000);
    }

    #[test]
    fn zero_coefficient_is_caught() {
        let g = grid(16);
        let v = GridField::from_fn(g.clone(), |p| p.get(0));
        let i = GridField::zeros(g.clone());
        let r = check_lipschitz_coeff(&v, &i, &all_pairs(&g, 200, 2)).unwrap();
        assert!(r.violations > 0);
        assert!(r.worst_ratio.is_infinite());
    }

    #[test]
    fn infinite_coefficients_are_skipped() {
        let g = grid(8);
        let v = GridField::from_fn(g.clone(), |p| p.get(0));
        let i = GridField::constant(g.clone(), f64::INFINITY);
        let r = check_lipschitz_coeff(&v, &i, &all_pairs(&g, 50, 3)).unwrap();
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn maximal_sobolev_holds_for_smooth_fields() {
        let g = grid(128);
        let bump = GridField::from_fn(g.clone(), |p| (-4.0 * p.norm2()).exp());
        let trig = GridField::from_fn(g.clone(), |p| {
            (3.0 * p.get(0)).sin() * (2.0 * p.get(1)).cos() + 0.3 * (5.0 * p.get(1) + 1.0).sin()
        });
        let lin = GridField::from_fn(g.clone(), |p| 2.0 * p.get(0) - p.get(1));
        let pairs = all_pairs(&g, 2000, 4);
        for v in [bump, trig, lin] {
            let r = maximal_sobolev_check(&v, &pairs).unwrap();
            assert_eq!(r.violations, 0, "{r:?}");
        }
    }

    #[test]
    fn local_pairs_are_close() {
        let g = grid(64);
        let cells: Vec<usize> = (0..g.len()).collect();
        let pairs = sample_cell_pairs(&g, &cells, 100, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(pairs.len(), 100);
        let h = g.spacing(0);
        let close = pairs
            .iter()
            .filter(|(a, b)| g.center(*a).sub(&g.center(*b)).norm_max() <= 3.0 * h + 1e-12)
            .count();
        assert!(close >= 50);
    }
}
