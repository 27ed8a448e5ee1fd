//! Seeded fixtures shared by the calibration sweep, the acceptance suite and
//! the command line.

use rand::Rng;

use crate::closed::ClosedSet;
use crate::error::Result;
use crate::geometry::{Aabb, Cube, Point, MAX_DIM};
use crate::grid::{Grid, GridField};
use crate::measure::{Atom, SignedMeasure};
use crate::potential::{node_grid, IdentityFixture};
use std::sync::Arc;

fn random_point(b: &Aabb, margin: f64, rng: &mut impl Rng) -> Point {
    let dim = b.lo().dim();
    let mut c = [0.0; MAX_DIM];
    for (a, ca) in c.iter_mut().enumerate().take(dim) {
        let (lo, hi) = (b.lo().get(a), b.hi().get(a));
        let m = margin * (hi - lo);
        *ca = rng.gen_range(lo + m..hi - m);
    }
    Point::new(&c[..dim]).expect("finite coordinates")
}

/// A nonempty union of random boxes, balls and isolated cells.
pub fn random_closed_set(grid: &Grid, rng: &mut impl Rng) -> ClosedSet {
    let b = grid.bounds();
    let diam = b.diameter();
    let mut mask = vec![false; grid.len()];
    let shapes = rng.gen_range(1..=4);
    for _ in 0..shapes {
        let kind = rng.gen_range(0..3);
        let c = random_point(b, 0.0, rng);
        let r = rng.gen_range(0.02..0.25) * diam;
        for (i, m) in mask.iter_mut().enumerate() {
            let x = grid.center(i);
            let d = x.sub(&c);
            let hit = match kind {
                0 => d.norm_max() <= r,
                1 => d.norm() <= r,
                _ => false,
            };
            *m |= hit;
        }
        if kind == 2 {
            for _ in 0..rng.gen_range(1..6) {
                let p = random_point(b, 0.0, rng);
                if let Some(c) = grid.locate_flat(&p) {
                    mask[c] = true;
                }
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        mask[rng.gen_range(0..grid.len())] = true;
    }
    ClosedSet::new(grid.clone(), mask).expect("mask matches the grid")
}

/// Gaussian bump `w exp(-|x - c|^2 / s^2)` sampled at cell centers.
pub fn bump(grid: &Grid, c: &Point, s: f64, w: f64) -> GridField {
    GridField::from_fn(grid.clone(), |x| w * (-x.sub(c).norm2() / (s * s)).exp())
}

/// Up to four atoms and up to three bumps, with random signs; never zero.
pub fn random_measure(grid: &Grid, rng: &mut impl Rng) -> SignedMeasure {
    let b = grid.bounds();
    let dim = grid.dim();
    let diam = b.diameter();
    loop {
        let atoms: Vec<Atom> = (0..rng.gen_range(0..=4))
            .map(|_| Atom {
                x: random_point(b, 0.1, rng),
                w: rng.gen_range(0.2..1.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 },
            })
            .collect();
        let density = if rng.gen_bool(0.6) || atoms.is_empty() {
            let mut f = vec![0.0; grid.len()];
            for _ in 0..rng.gen_range(1..=3) {
                let c = random_point(b, 0.2, rng);
                let s = rng.gen_range(0.03..0.15) * diam;
                let w = rng.gen_range(0.5..4.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
                for (v, x) in f.iter_mut().zip(bump(grid, &c, s, w).values()) {
                    *v += x;
                }
            }
            Some(GridField::from_values(grid.clone(), f).expect("sized to the grid"))
        } else {
            None
        };
        let mu = SignedMeasure::new(dim, atoms, density).expect("valid fixture");
        if mu.total_variation() > 0.0 {
            return mu;
        }
    }
}

/// A named measure on a box, with the grid its density lives on.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub mu: SignedMeasure,
    pub bounds: Aabb,
    pub grid: Grid,
}

fn pt(c: &[f64]) -> Point {
    Point::new(c).expect("finite coordinates")
}

/// Measures for the composite coefficient: a Dirac, three atoms, a bump and a
/// bump with an atom, on `[-1, 1]^N`.
pub fn composite_scenarios(dim: usize) -> Result<Vec<Scenario>> {
    let bounds = Aabb::cube(dim, -1.0, 2.0)?;
    let cells = if dim == 2 { 64 } else { 32 };
    let grid = Grid::uniform(bounds, cells)?;
    let p = |c: [f64; 3]| pt(&c[..dim]);
    let three = vec![
        Atom { x: p([0.31, 0.12, -0.07]), w: 1.0 },
        Atom { x: p([-0.42, 0.27, 0.18]), w: -0.5 },
        Atom { x: p([0.05, -0.48, 0.33]), w: 0.7 },
    ];
    let b = bump(&grid, &p([0.2, -0.1, 0.05]), 0.15, 3.0);
    let out = vec![
        ("dirac", SignedMeasure::new(dim, vec![Atom { x: p([0.11, 0.05, -0.03]), w: 1.0 }], None)?),
        ("three_atoms", SignedMeasure::new(dim, three, None)?),
        ("bump", SignedMeasure::new(dim, Vec::new(), Some(b.clone()))?),
        (
            "mixed",
            SignedMeasure::new(dim, vec![Atom { x: p([-0.5, 0.4, 0.2]), w: 0.8 }], Some(b))?,
        ),
    ];
    Ok(out
        .into_iter()
        .map(|(n, mu)| Scenario {
            name: n.to_string(),
            mu,
            bounds,
            grid: grid.clone(),
        })
        .collect())
}

/// The three-atom measure used by the differentiability quotient.
pub fn three_atoms(dim: usize) -> Result<SignedMeasure> {
    let p = |c: [f64; 3]| pt(&c[..dim]);
    SignedMeasure::new(
        dim,
        vec![
            Atom { x: p([0.3, 0.2, 0.1]), w: 1.0 },
            Atom { x: p([-0.35, 0.1, -0.2]), w: 0.6 },
            Atom { x: p([0.05, -0.4, 0.25]), w: -0.8 },
        ],
        None,
    )
}

/// A dipole: a measure on a cube with zero total mass.
#[derive(Clone, Debug)]
pub struct DipoleFixture {
    pub name: String,
    pub nu: SignedMeasure,
    pub cube: Cube,
}

/// Atomic and absolutely continuous dipoles in `Q = [-1/2, 1/2)^N`.
pub fn dipole_fixtures(dim: usize) -> Result<Vec<DipoleFixture>> {
    let cube = Cube::new(Point::origin(dim), 1.0)?;
    let p = |c: [f64; 3]| pt(&c[..dim]);
    let atomic = SignedMeasure::new(
        dim,
        vec![Atom { x: p([0.3, -0.2, 0.1]), w: 1.0 }, Atom { x: p([-0.25, 0.35, -0.3]), w: -1.0 }],
        None,
    )?;
    let grid = Grid::uniform(Aabb::cube(dim, -0.5, 1.0)?, if dim == 2 { 32 } else { 16 })?;
    // odd in the first coordinate, so the mass cancels cell by cell
    let odd = GridField::from_fn(grid, |x| x.get(0) * (1.0 - 4.0 * x.norm2()).max(0.0));
    let dens = SignedMeasure::new(dim, Vec::new(), Some(odd))?;
    Ok(vec![
        DipoleFixture {
            name: "atoms".into(),
            nu: atomic,
            cube,
        },
        DipoleFixture {
            name: "density".into(),
            nu: dens,
            cube,
        },
    ])
}

/// Densities for the `L^2` gradient estimate, on `[-1, 1]^2` at `n` cells per axis.
pub fn l2_densities(n: usize) -> Result<Vec<(String, GridField)>> {
    let grid = Grid::uniform(Aabb::cube(2, -1.0, 2.0)?, n)?;
    let gauss = bump(&grid, &pt(&[0.1, -0.05]), 0.2, 1.0);
    let smooth_step = GridField::from_fn(grid, |x| {
        let r = x.sub(&pt(&[-0.1, 0.1])).norm_max();
        (1.0 - (r / 0.35).powi(4)).max(0.0).powi(2)
    });
    Ok(vec![("gauss".into(), gauss), ("plateau".into(), smooth_step)])
}

/// Fixtures for the Laplacian identity on the unit square: a Dirac at the
/// center, a smooth density vanishing on the boundary, and a compact bump
/// together with an atom.
pub fn identity_fixtures() -> Vec<IdentityFixture> {
    use std::f64::consts::PI;
    vec![
        IdentityFixture {
            name: "dirac".into(),
            dim: 2,
            atoms: vec![Atom { x: pt(&[0.5, 0.5]), w: 1.0 }],
            density: None,
        },
        IdentityFixture {
            name: "smooth".into(),
            dim: 2,
            atoms: Vec::new(),
            density: Some(Arc::new(|p: &Point| 2.0 * PI * PI * (PI * p.get(0)).sin() * (PI * p.get(1)).sin())),
        },
        IdentityFixture {
            name: "mixed".into(),
            dim: 2,
            atoms: vec![Atom { x: pt(&[0.75, 0.75]), w: 1.0 }],
            density: Some(Arc::new(|p: &Point| {
                let r2 = (p.get(0) - 0.3).powi(2) + (p.get(1) - 0.3).powi(2);
                if r2 < 0.04 {
                    50.0 * (1.0 - r2 / 0.04).powi(3)
                } else {
                    0.0
                }
            })),
        },
    ]
}

/// `u = (|x| - 0.3)_+^3` on `[-1, 1]^2`, flat on a disc, with its Laplacian.
pub fn plateau(n: usize) -> Result<(GridField, GridField)> {
    let g = node_grid(&Aabb::cube(2, -1.0, 2.0)?, n)?;
    let u = GridField::from_fn(g.clone(), |p| (p.norm() - 0.3).max(0.0).powi(3));
    let lap = GridField::from_fn(g, |p| {
        let s = (p.norm() - 0.3).max(0.0);
        if s == 0.0 {
            0.0
        } else {
            6.0 * s + 3.0 * s * s / p.norm()
        }
    });
    Ok((u, lap))
}

/// Functions with `Δu >= 1` on `[-1, 1]^2`.
pub fn subharmonic_fixtures(n: usize) -> Result<Vec<(String, GridField)>> {
    let g = node_grid(&Aabb::cube(2, -1.0, 2.0)?, n)?;
    Ok(vec![
        ("paraboloid".into(), GridField::from_fn(g.clone(), |p| p.norm2() / 4.0)),
        (
            "tilted".into(),
            GridField::from_fn(g, |p| (p.get(0).powi(2) + 2.0 * p.get(1).powi(2)) / 6.0 + 0.2 * p.get(0)),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_fixtures_are_seeded_and_valid() {
        let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 32).unwrap();
        let a = random_measure(&g, &mut ChaCha8Rng::seed_from_u64(5));
        let b = random_measure(&g, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.total_variation() > 0.0);
        let f = random_closed_set(&g, &mut ChaCha8Rng::seed_from_u64(6));
        assert!(f.count() > 0);
    }

    #[test]
    fn dipoles_have_zero_mass() {
        for dim in [2, 3] {
            for d in dipole_fixtures(dim).unwrap() {
                assert_eq!(d.nu.total_mass(), 0.0, "{}", d.name);
                assert!(d.nu.total_variation() > 0.0);
            }
        }
    }
}
