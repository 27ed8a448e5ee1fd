//! Points, boxes and cubes in dimension 1 to 3.
//!
//! Every cube is axis-aligned and *half-closed*: a product of intervals
//! `[a_i, b_i)`. Membership tests follow that convention everywhere, so a
//! family of same-level dyadic cubes is disjoint by construction.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// A point of R^N, N in {1, 2, 3}. Stored inline so it is `Copy`.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    dim: u8,
    c: [f64; MAX_DIM],
}

impl std::fmt::Debug for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl serde::Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        let dim = coords.len();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidParameter(format!(
                "point dimension must be 1, 2 or 3 (got {dim})"
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("point coordinates must be finite".into()));
        }
        let mut c = [0.0; MAX_DIM];
        c[..dim].copy_from_slice(coords);
        Ok(Point { dim: dim as u8, c })
    }

    /// Unchecked constructor for internal loops; `dim` must be 1..=3.
    #[inline]
    pub(crate) fn from_array(dim: usize, c: [f64; MAX_DIM]) -> Self {
        debug_assert!((1..=MAX_DIM).contains(&dim));
        Point { dim: dim as u8, c }
    }

    pub fn origin(dim: usize) -> Self {
        Point::from_array(dim, [0.0; MAX_DIM])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn array(&self) -> [f64; MAX_DIM] {
        self.c
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn sub(&self, other: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (i, ci) in c.iter_mut().enumerate().take(self.dim()) {
            *ci = self.c[i] - other.c[i];
        }
        Point::from_array(self.dim(), c)
    }

    pub fn add(&self, other: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (i, ci) in c.iter_mut().enumerate().take(self.dim()) {
            *ci = self.c[i] + other.c[i];
        }
        Point::from_array(self.dim(), c)
    }

    pub fn scale(&self, s: f64) -> Point {
        let mut c = self.c;
        for ci in c.iter_mut() {
            *ci *= s;
        }
        Point::from_array(self.dim(), c)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn norm2(&self) -> f64 {
        self.coords().iter().map(|v| v * v).sum()
    }

    pub fn norm_max(&self) -> f64 {
        self.coords().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_dim(&self, other: &Point) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Volume `omega_N` of the unit ball.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => panic!("dimension {dim} unsupported"),
    }
}

/// Area `sigma_N = N omega_N` of the unit sphere.
pub fn unit_sphere_area(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}

/// Euclidean distance.
pub fn dist(x: &Point, y: &Point) -> Result<f64> {
    x.check_dim(y)?;
    Ok(x.sub(y).norm())
}

/// Max-norm distance `max_i |x_i - y_i|`.
pub fn dist_max(x: &Point, y: &Point) -> Result<f64> {
    x.check_dim(y)?;
    Ok(x.sub(y).norm_max())
}

/// Anything with a half-closed membership test.
pub trait Region {
    fn dim(&self) -> usize;
    fn contains(&self, x: &Point) -> bool;
}

/// Axis-aligned box `[lo, hi)`; the computational domain.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Aabb {
    lo: Point,
    hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        lo.check_dim(&hi)?;
        if lo.coords().iter().zip(hi.coords()).any(|(a, b)| a >= b) {
            return Err(Error::InvalidParameter("box requires lo < hi componentwise".into()));
        }
        Ok(Aabb { lo, hi })
    }

    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Aabb::new(Point::new(lo)?, Point::new(hi)?)
    }

    /// The cube `[lo, lo + side)^N`.
    pub fn cube(dim: usize, lo: f64, side: f64) -> Result<Self> {
        let l = vec![lo; dim];
        let h = vec![lo + side; dim];
        Aabb::from_slices(&l, &h)
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi.get(axis) - self.lo.get(axis)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.extent(i)).product()
    }

    pub fn diameter(&self) -> f64 {
        self.hi.sub(&self.lo).norm()
    }

    pub fn center(&self) -> Point {
        self.lo.add(&self.hi).scale(0.5)
    }
}

impl Region for Aabb {
    fn dim(&self) -> usize {
        self.lo.dim()
    }

    fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim()
            && (0..self.dim()).all(|i| self.lo.get(i) <= x.get(i) && x.get(i) < self.hi.get(i))
    }
}

/// A cube given by center and side length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    center: Point,
    side: f64,
}

impl Cube {
    pub fn new(center: Point, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidParameter(format!("cube side must be positive (got {side})")));
        }
        Ok(Cube { center, side })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.center.dim() as i32)
    }

    pub fn diameter(&self) -> f64 {
        self.side * (self.center.dim() as f64).sqrt()
    }

    /// Same center, side multiplied by `theta`.
    pub fn rescale(&self, theta: f64) -> Result<Cube> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("rescale factor must be positive (got {theta})")));
        }
        Cube::new(self.center, self.side * theta)
    }

    /// True iff `x` lies outside the open cube `theta Q`, i.e.
    /// `|x - center|_inf >= theta * side / 2`.
    pub fn outside_dilate(&self, x: &Point, theta: f64) -> bool {
        x.sub(&self.center).norm_max() >= 0.5 * theta * self.side
    }

    pub fn as_box(&self) -> Aabb {
        let h = 0.5 * self.side;
        let mut lo = self.center.array();
        let mut hi = self.center.array();
        for i in 0..self.center.dim() {
            lo[i] -= h;
            hi[i] += h;
        }
        let d = self.center.dim();
        Aabb {
            lo: Point::from_array(d, lo),
            hi: Point::from_array(d, hi),
        }
    }
}

impl Region for Cube {
    fn dim(&self) -> usize {
        self.center.dim()
    }

    fn contains(&self, x: &Point) -> bool {
        self.as_box().contains(x)
    }
}

/// Euclidean distance from `x` to the closed cube `Q`.
pub fn dist_point_to_cube(x: &Point, q: &Cube) -> Result<f64> {
    x.check_dim(q.center())?;
    let h = 0.5 * q.side();
    let d2: f64 = (0..x.dim())
        .map(|i| {
            let e = ((x.get(i) - q.center().get(i)).abs() - h).max(0.0);
            e * e
        })
        .sum();
    Ok(d2.sqrt())
}

/// A dyadic cube of side `base_scale * 2^-level` anchored at the origin:
/// `prod_i [k_i s, (k_i + 1) s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: i32,
    pub corner_index: [i64; MAX_DIM],
    dim: u8,
}

impl DyadicCube {
    pub fn new(dim: usize, level: i32, corner: &[i64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || corner.len() != dim {
            return Err(Error::InvalidParameter("dyadic cube needs 1..=3 corner indices".into()));
        }
        let mut corner_index = [0; MAX_DIM];
        corner_index[..dim].copy_from_slice(corner);
        Ok(DyadicCube {
            level,
            corner_index,
            dim: dim as u8,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn corner(&self) -> &[i64] {
        &self.corner_index[..self.dim()]
    }

    pub fn side(&self, base_scale: f64) -> f64 {
        base_scale * (-(self.level as f64)).exp2()
    }

    pub fn parent(&self) -> DyadicCube {
        let mut c = self.corner_index;
        for v in c.iter_mut().take(self.dim()) {
            *v = v.div_euclid(2);
        }
        DyadicCube {
            level: self.level - 1,
            corner_index: c,
            dim: self.dim,
        }
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.dim();
        (0..1usize << d)
            .map(|bits| {
                let mut c = self.corner_index;
                for (i, v) in c.iter_mut().enumerate().take(d) {
                    *v = 2 * *v + ((bits >> i) & 1) as i64;
                }
                DyadicCube {
                    level: self.level + 1,
                    corner_index: c,
                    dim: self.dim,
                }
            })
            .collect()
    }

    pub fn to_cube(&self, base_scale: f64) -> Cube {
        let s = self.side(base_scale);
        let mut c = [0.0; MAX_DIM];
        for (i, ci) in c.iter_mut().enumerate().take(self.dim()) {
            *ci = (self.corner_index[i] as f64 + 0.5) * s;
        }
        Cube {
            center: Point::from_array(self.dim(), c),
            side: s,
        }
    }

    /// The cube as a half-closed box, corners computed from integer indices.
    pub fn to_box(&self, base_scale: f64) -> Aabb {
        let s = self.side(base_scale);
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for i in 0..self.dim() {
            lo[i] = self.corner_index[i] as f64 * s;
            hi[i] = (self.corner_index[i] + 1) as f64 * s;
        }
        Aabb {
            lo: Point::from_array(self.dim(), lo),
            hi: Point::from_array(self.dim(), hi),
        }
    }

    /// Half-closed membership with the given base scale.
    pub fn contains(&self, base_scale: f64, x: &Point) -> bool {
        if x.dim() != self.dim() {
            return false;
        }
        let s = self.side(base_scale);
        (0..self.dim()).all(|i| {
            let a = self.corner_index[i] as f64 * s;
            a <= x.get(i) && x.get(i) < a + s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn rescale_examples() {
        let q = Cube::new(p(&[0.0, 0.0]), 1.0).unwrap();
        let r = q.rescale(2.0).unwrap();
        assert_eq!(r.center(), &p(&[0.0, 0.0]));
        assert_eq!(r.side(), 2.0);

        let q = Cube::new(p(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(q.rescale(1.0).unwrap(), q);

        let q = Cube::new(p(&[3.0, -1.0]), 2.0).unwrap();
        let r = q.rescale(1.5).unwrap();
        assert_eq!(r.center(), &p(&[3.0, -1.0]));
        assert_eq!(r.side(), 3.0);

        assert!(q.rescale(0.0).is_err());
        assert!(q.rescale(-2.0).is_err());
    }

    #[test]
    fn dist_max_examples() {
        assert_eq!(dist_max(&p(&[0.0, 0.0]), &p(&[3.0, 4.0])).unwrap(), 4.0);
        let x = p(&[0.3, -7.0]);
        assert_eq!(dist_max(&x, &x).unwrap(), 0.0);
        assert_eq!(dist_max(&p(&[1.0, -2.0, 0.0]), &p(&[0.0, 0.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(
            dist_max(&p(&[0.0]), &p(&[0.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dist_to_cube_examples() {
        let q = Cube::new(p(&[0.0, 0.0]), 2.0).unwrap();
        assert_eq!(dist_point_to_cube(&p(&[2.0, 0.0]), &q).unwrap(), 1.0);
        assert_eq!(dist_point_to_cube(&p(&[0.0, 0.0]), &q).unwrap(), 0.0);
        assert!((dist_point_to_cube(&p(&[2.0, 2.0]), &q).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn half_closed_membership() {
        let q = DyadicCube::new(2, 1, &[1, 0]).unwrap();
        // side 0.5, [0.5, 1) x [0, 0.5)
        assert!(q.contains(1.0, &p(&[0.5, 0.0])));
        assert!(!q.contains(1.0, &p(&[1.0, 0.5])));
        assert!(q.contains(1.0, &p(&[0.75, 0.25])));

        let c = Cube::new(p(&[0.0, 0.0]), 2.0).unwrap();
        assert!(c.contains(&p(&[-1.0, -1.0])));
        assert!(!c.contains(&p(&[1.0, 1.0])));
    }

    #[test]
    fn parent_is_union_of_children() {
        let q = DyadicCube::new(3, 2, &[-1, 0, 3]).unwrap();
        for ch in q.children() {
            assert_eq!(ch.parent(), q);
        }
        assert_eq!(q.children().len(), 8);
    }

    #[test]
    fn same_level_cubes_are_disjoint_on_lattice() {
        // exhaustive: every lattice point (including faces) lies in exactly one level-2 cube
        let cubes: Vec<_> = (-4..4)
            .flat_map(|i| (-4..4).map(move |j| DyadicCube::new(2, 2, &[i, j]).unwrap()))
            .collect();
        for a in -16..16 {
            for b in -16..16 {
                let x = p(&[a as f64 / 16.0, b as f64 / 16.0]);
                let hits = cubes.iter().filter(|q| q.contains(1.0, &x)).count();
                assert_eq!(hits, 1, "{x:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn norm_equivalence(a in prop::collection::vec(-10.0f64..10.0, 3), b in prop::collection::vec(-10.0f64..10.0, 3)) {
            let x = p(&a);
            let y = p(&b);
            let m = dist_max(&x, &y).unwrap();
            let e = dist(&x, &y).unwrap();
            prop_assert!(m <= e + 1e-12);
            prop_assert!(e <= 3f64.sqrt() * m + 1e-12);
        }

        #[test]
        fn zero_distance_iff_in_closure(a in prop::collection::vec(-3.0f64..3.0, 2), side in 0.1f64..4.0) {
            let q = Cube::new(p(&[0.2, -0.4]), side).unwrap();
            let x = p(&a);
            let d = dist_point_to_cube(&x, &q).unwrap();
            let in_closure = (0..2).all(|i| (x.get(i) - q.center().get(i)).abs() <= side / 2.0);
            prop_assert_eq!(d == 0.0, in_closure);
        }
    }
}
