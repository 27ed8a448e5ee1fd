//! Closed sets resolved on a grid.
//!
//! A [`ClosedSet`] is a mask of grid cells. As a point set it is the finite
//! set of centers of the marked cells; membership of an arbitrary point is
//! decided by the cell that contains it.

use crate::edt::squared_distance_transform;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::grid::Grid;

#[derive(Clone, Debug)]
pub struct ClosedSet {
    grid: Grid,
    mask: Vec<bool>,
    sqdist: Vec<f64>,
    marked: Vec<Point>,
}

impl ClosedSet {
    pub fn new(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "mask has {} entries for {} cells",
                mask.len(),
                grid.len()
            )));
        }
        let sqdist = squared_distance_transform(&grid, &mask);
        let marked = (0..grid.len()).filter(|&i| mask[i]).map(|i| grid.center(i)).collect();
        Ok(ClosedSet {
            grid,
            mask,
            sqdist,
            marked,
        })
    }

    /// Marks every cell whose center satisfies `pred`.
    pub fn from_predicate(grid: Grid, pred: impl Fn(&Point) -> bool) -> Self {
        let mask = (0..grid.len()).map(|i| pred(&grid.center(i))).collect();
        ClosedSet::new(grid, mask).expect("mask matches grid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_empty(&self) -> bool {
        self.marked.is_empty()
    }

    pub fn count(&self) -> usize {
        self.marked.len()
    }

    pub fn cell_in_set(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    /// Membership at cell resolution; points outside the grid are not in F.
    pub fn contains(&self, x: &Point) -> bool {
        self.grid.locate_flat(x).is_some_and(|c| self.mask[c])
    }

    /// Distance from a cell center to F.
    pub fn cell_distance(&self, cell: usize) -> f64 {
        self.sqdist[cell].sqrt()
    }

    pub fn cell_sq_distances(&self) -> &[f64] {
        &self.sqdist
    }

    /// Distance from an arbitrary point to F (exact, by enumeration).
    pub fn distance(&self, x: &Point) -> f64 {
        self.marked
            .iter()
            .map(|c| x.sub(c).norm2())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;

    #[test]
    fn distances_and_membership() {
        let g = Grid::uniform(Aabb::cube(2, -0.5, 4.0).unwrap(), 4).unwrap();
        let f = ClosedSet::from_predicate(g, |p| p.get(1) == 0.0 && p.get(0) <= 1.0);
        assert_eq!(f.count(), 2);
        let a = Point::new(&[2.0, 0.0]).unwrap();
        assert_eq!(f.distance(&a), 1.0);
        assert!(f.contains(&Point::new(&[0.2, -0.1]).unwrap()));
        assert!(!f.contains(&a));
        let cell = f.grid().locate_flat(&a).unwrap();
        assert_eq!(f.cell_distance(cell), 1.0);
    }
}
