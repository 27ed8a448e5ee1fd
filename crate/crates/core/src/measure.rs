//! Finite signed measures represented as weighted atoms plus a
//! cell-constant density on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cube, Point, Region};
use crate::grid::{neumaier_sum, GridField, GridFieldFile};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub x: Point,
    pub w: f64,
}

/// `mu = sum_k w_k delta_{x_k} + f dx` with `f` constant on each grid cell.
///
/// Atoms are kept sorted by location; coincident atoms are merged and zero
/// weights dropped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    density: Option<GridField>,
}

fn cmp_points(a: &Point, b: &Point) -> std::cmp::Ordering {
    for (x, y) in a.coords().iter().zip(b.coords()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

impl SignedMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>, density: Option<GridField>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        for a in &atoms {
            if a.x.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.x.dim(),
                });
            }
            if !a.w.is_finite() {
                return Err(Error::InvalidParameter("atom weights must be finite".into()));
            }
        }
        if let Some(d) = &density {
            if d.grid().dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: d.grid().dim(),
                });
            }
            if d.components() != 1 {
                return Err(Error::InvalidParameter("density must be scalar".into()));
            }
            if d.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("density values must be finite".into()));
            }
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| cmp_points(&a.x, &b.x));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.x == a.x => last.w += a.w,
                _ => merged.push(a),
            }
        }
        merged.retain(|a| a.w != 0.0);
        Ok(SignedMeasure {
            dim,
            atoms: merged,
            density,
        })
    }

    pub fn zero(dim: usize) -> Self {
        SignedMeasure {
            dim,
            atoms: Vec::new(),
            density: None,
        }
    }

    pub fn dirac(x: Point, w: f64) -> Self {
        SignedMeasure::new(x.dim(), vec![Atom { x, w }], None).expect("valid dirac")
    }

    pub fn from_atoms(dim: usize, atoms: &[(Point, f64)]) -> Result<Self> {
        SignedMeasure::new(dim, atoms.iter().map(|&(x, w)| Atom { x, w }).collect(), None)
    }

    pub fn from_density(f: GridField) -> Result<Self> {
        SignedMeasure::new(f.grid().dim(), Vec::new(), Some(f))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&GridField> {
        self.density.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
            && self
                .density
                .as_ref()
                .is_none_or(|d| d.values().iter().all(|&v| v == 0.0))
    }

    /// `|mu|(R^N)`.
    pub fn total_variation(&self) -> f64 {
        let a = neumaier_sum(self.atoms.iter().map(|a| a.w.abs()));
        let d = self.density.as_ref().map_or(0.0, |f| f.l1_norm());
        a + d
    }

    /// Signed total mass `mu(R^N)`.
    pub fn total_mass(&self) -> f64 {
        let a = neumaier_sum(self.atoms.iter().map(|a| a.w));
        let d = self.density.as_ref().map_or(0.0, |f| f.integral());
        a + d
    }

    /// `mu(S)`; density cells count by center membership.
    pub fn mass_in(&self, s: &dyn Region) -> f64 {
        let atoms = self.atoms.iter().filter(|a| s.contains(&a.x)).map(|a| a.w);
        let cells = self.density.iter().flat_map(|f| {
            let g = f.grid();
            let vol = g.cell_volume();
            (0..g.len()).filter(move |&i| s.contains(&g.center(i))).map(move |i| f.get(i) * vol)
        });
        neumaier_sum(atoms.chain(cells))
    }

    /// `|mu|(S)`.
    pub fn variation_in(&self, s: &dyn Region) -> f64 {
        self.abs().mass_in(s)
    }

    /// Splits into `(mu restricted to S, mu restricted to the complement)`.
    /// The two parts add back to `mu` atom by atom and cell by cell.
    pub fn partition(&self, s: &dyn Region) -> (SignedMeasure, SignedMeasure) {
        let (inside, outside): (Vec<Atom>, Vec<Atom>) =
            self.atoms.iter().partition(|a| s.contains(&a.x));
        let (din, dout) = match &self.density {
            None => (None, None),
            Some(f) => {
                let g = f.grid();
                let mut vin = vec![0.0; g.len()];
                let mut vout = vec![0.0; g.len()];
                for i in 0..g.len() {
                    if s.contains(&g.center(i)) {
                        vin[i] = f.get(i);
                    } else {
                        vout[i] = f.get(i);
                    }
                }
                (
                    Some(GridField::from_values(g.clone(), vin).expect("same layout")),
                    Some(GridField::from_values(g.clone(), vout).expect("same layout")),
                )
            }
        };
        (
            SignedMeasure {
                dim: self.dim,
                atoms: inside,
                density: din,
            },
            SignedMeasure {
                dim: self.dim,
                atoms: outside,
                density: dout,
            },
        )
    }

    pub fn restrict(&self, s: &dyn Region) -> SignedMeasure {
        self.partition(s).0
    }

    pub fn restrict_complement(&self, s: &dyn Region) -> SignedMeasure {
        self.partition(s).1
    }

    /// Lebesgue decomposition `(mu_a, mu_s)`: the density part and the atoms.
    pub fn ac_singular_split(&self) -> (SignedMeasure, SignedMeasure) {
        (
            SignedMeasure {
                dim: self.dim,
                atoms: Vec::new(),
                density: self.density.clone(),
            },
            SignedMeasure {
                dim: self.dim,
                atoms: self.atoms.clone(),
                density: None,
            },
        )
    }

    /// `mu(Q) / |Q|`.
    pub fn signed_average_on(&self, q: &Cube) -> Result<f64> {
        let v = q.volume();
        if v <= 0.0 {
            return Err(Error::ZeroVolume);
        }
        Ok(self.mass_in(q) / v)
    }

    /// `|mu|` as a measure.
    pub fn abs(&self) -> SignedMeasure {
        SignedMeasure {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom { x: a.x, w: a.w.abs() })
                .collect(),
            density: self.density.as_ref().map(|f| f.map(f64::abs)),
        }
    }

    pub fn scaled(&self, s: f64) -> SignedMeasure {
        if s == 0.0 {
            return SignedMeasure::zero(self.dim);
        }
        SignedMeasure {
            dim: self.dim,
            atoms: self.atoms.iter().map(|a| Atom { x: a.x, w: a.w * s }).collect(),
            density: self.density.as_ref().map(|f| f.scaled(s)),
        }
    }

    /// Sum of two measures; densities must share a grid.
    pub fn add(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(f), None) | (None, Some(f)) => Some(f.clone()),
            (Some(f), Some(g)) => {
                if f.grid() != g.grid() {
                    return Err(Error::InvalidParameter("densities live on different grids".into()));
                }
                let v = f.values().iter().zip(g.values()).map(|(a, b)| a + b).collect();
                Some(GridField::from_values(f.grid().clone(), v)?)
            }
        };
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        SignedMeasure::new(self.dim, atoms, density)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f = MeasureFile {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomFile {
                    x: a.x.coords().to_vec(),
                    w: a.w,
                })
                .collect(),
            density: self.density.as_ref().map(|d| {
                serde_json::from_value(d.to_json()).expect("grid field roundtrip")
            }),
        };
        serde_json::to_value(f).expect("measure serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: MeasureFile = serde_json::from_value(v.clone())?;
        let atoms = f
            .atoms
            .into_iter()
            .map(|a| Ok(Atom { x: Point::new(&a.x)?, w: a.w }))
            .collect::<Result<Vec<_>>>()?;
        let density = f.density.map(GridFieldFile::into_field).transpose()?;
        SignedMeasure::new(f.dim, atoms, density)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        SignedMeasure::from_json(&v)
    }
}

#[derive(Serialize, Deserialize)]
struct AtomFile {
    x: Vec<f64>,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    #[serde(default)]
    atoms: Vec<AtomFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<GridFieldFile>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, DyadicCube};
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    fn unit_density(n: usize, c: f64) -> GridField {
        GridField::constant(Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), n).unwrap(), c)
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(SignedMeasure::dirac(p(&[0.0, 0.0]), 1.0).total_variation(), 1.0);
        let m = SignedMeasure::from_atoms(2, &[(p(&[0.0, 0.0]), 1.0), (p(&[1.0, 0.0]), -1.0)]).unwrap();
        assert_eq!(m.total_variation(), 2.0);
        let m = SignedMeasure::from_density(unit_density(8, 3.0)).unwrap();
        assert!((m.total_variation() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn atoms_are_merged_and_zeros_dropped() {
        let m = SignedMeasure::from_atoms(
            1,
            &[(p(&[0.5]), 1.0), (p(&[0.5]), 2.0), (p(&[0.1]), 0.0), (p(&[-1.0]), 1.0), (p(&[-1.0]), -1.0)],
        )
        .unwrap();
        assert_eq!(m.atoms().len(), 1);
        assert_eq!(m.atoms()[0].w, 3.0);
    }

    #[test]
    fn restrict_examples() {
        let d = SignedMeasure::dirac(p(&[0.0, 0.0]), 1.0);
        let q = Cube::new(p(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(d.restrict(&q), d);
        let far = Cube::new(p(&[5.0, 0.0]), 1.0).unwrap();
        assert!(d.restrict(&far).is_zero());

        // cell-count oracle: 16 x 16 cells, half of them have centers with x < 0.5
        let m = SignedMeasure::from_density(unit_density(16, 1.0)).unwrap();
        let half = Aabb::from_slices(&[0.0, 0.0], &[0.5, 1.0]).unwrap();
        let r = m.restrict(&half);
        let count = (0..16).filter(|i| (*i as f64 + 0.5) / 16.0 < 0.5).count() * 16;
        assert!((r.total_variation() - count as f64 / 256.0).abs() < 1e-15);
        assert!((r.total_variation() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn restrict_to_dyadic_cube_is_half_closed() {
        let q = DyadicCube::new(2, 1, &[0, 0]).unwrap().to_box(1.0);
        let m = SignedMeasure::from_atoms(2, &[(p(&[0.0, 0.0]), 1.0), (p(&[0.5, 0.25]), 1.0)]).unwrap();
        let r = m.restrict(&q);
        assert_eq!(r.atoms().len(), 1);
        assert_eq!(r.atoms()[0].x, p(&[0.0, 0.0]));
    }

    #[test]
    fn ac_singular_split_examples() {
        let f = unit_density(4, 2.0);
        let m = SignedMeasure::new(2, vec![Atom { x: p(&[0.0, 0.0]), w: 1.0 }], Some(f.clone())).unwrap();
        let (a, s) = m.ac_singular_split();
        assert!(a.atoms().is_empty());
        assert_eq!(a.density(), Some(&f));
        assert!(s.density().is_none());
        assert_eq!(s.atoms().len(), 1);
        assert_eq!(a.add(&s).unwrap(), m);

        let pure = SignedMeasure::from_density(f).unwrap();
        let (a, s) = pure.ac_singular_split();
        assert_eq!(a, pure);
        assert!(s.is_zero());

        let atoms = SignedMeasure::dirac(p(&[0.0, 0.0]), 2.0);
        let (a, s) = atoms.ac_singular_split();
        assert!(a.is_zero());
        assert_eq!(s, atoms);
    }

    #[test]
    fn signed_average_examples() {
        let m = SignedMeasure::dirac(p(&[0.0, 0.0]), 3.0);
        let q = Cube::new(p(&[0.1, 0.0]), 0.5).unwrap();
        assert_eq!(m.signed_average_on(&q).unwrap(), 3.0 / 0.25);
        assert_eq!(SignedMeasure::zero(2).signed_average_on(&q).unwrap(), 0.0);

        // cell-sum oracle: cube aligned with the 16x16 lattice
        let c = SignedMeasure::from_density(unit_density(16, 1.7)).unwrap();
        let q = Cube::new(p(&[0.5, 0.5]), 0.5).unwrap();
        assert!((c.signed_average_on(&q).unwrap() - 1.7).abs() < 1e-13);
    }

    #[test]
    fn json_roundtrip_and_missing_sections() {
        let m = SignedMeasure::new(
            2,
            vec![Atom { x: p(&[0.2, 0.3]), w: -1.5 }],
            Some(unit_density(2, 0.5)),
        )
        .unwrap();
        let back = SignedMeasure::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let empty = SignedMeasure::from_json_str(r#"{"dim": 3}"#).unwrap();
        assert!(empty.is_zero());
        assert!(SignedMeasure::from_json_str(r#"{"atoms": []}"#).is_err());
    }

    fn arb_measure() -> impl Strategy<Value = SignedMeasure> {
        (
            prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -2.0f64..2.0), 0..6),
            prop::collection::vec(-1.0f64..1.0, 64),
        )
            .prop_map(|(atoms, vals)| {
                let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 8).unwrap();
                SignedMeasure::new(
                    2,
                    atoms.into_iter().map(|(a, b, w)| Atom { x: p(&[a, b]), w }).collect(),
                    Some(GridField::from_values(g, vals).unwrap()),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn partition_is_exact(m in arb_measure(), cx in 0.0f64..1.0, cy in 0.0f64..1.0, s in 0.05f64..1.0) {
            let q = Cube::new(p(&[cx, cy]), s).unwrap();
            let (a, b) = m.partition(&q);
            prop_assert_eq!(a.add(&b).unwrap(), m.clone());
            let tv = a.total_variation() + b.total_variation();
            prop_assert!((tv - m.total_variation()).abs() <= 1e-12 * (1.0 + m.total_variation()));
        }

        #[test]
        fn split_recombines(m in arb_measure()) {
            let (a, s) = m.ac_singular_split();
            prop_assert_eq!(a.add(&s).unwrap(), m);
        }

        #[test]
        fn disjoint_cubes_masses_bounded(m in arb_measure(), level in 1i32..4) {
            let n = 1i64 << level;
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let q = DyadicCube::new(2, level, &[i, j]).unwrap().to_box(1.0);
                    sum += m.mass_in(&q).abs();
                }
            }
            prop_assert!(sum <= m.total_variation() * (1.0 + 1e-12) + 1e-12);
        }
    }
}
