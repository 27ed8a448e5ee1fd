//! Uniform cell-centered grids and the fields that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point, Region, MAX_DIM};

/// Layout of a uniform box grid. Cell `(i_0, .., i_{N-1})` has center
/// `lo + (i + 1/2) h`; the flat index runs fastest along axis 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    bounds: Aabb,
    cells: [usize; MAX_DIM],
    dim: usize,
}

impl Grid {
    pub fn new(bounds: Aabb, cells: &[usize]) -> Result<Self> {
        let dim = bounds.dim();
        if cells.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: cells.len(),
            });
        }
        if cells.contains(&0) {
            return Err(Error::InvalidParameter("grid needs at least one cell per axis".into()));
        }
        let mut c = [1; MAX_DIM];
        c[..dim].copy_from_slice(cells);
        Ok(Grid {
            bounds,
            cells: c,
            dim,
        })
    }

    /// `n` cells per axis on the box.
    pub fn uniform(bounds: Aabb, n: usize) -> Result<Self> {
        Grid::new(bounds, &vec![n; bounds.dim()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.bounds.extent(axis) / self.cells[axis] as f64
    }

    /// Common spacing when cells are cubes; `None` otherwise.
    pub fn cubic_spacing(&self) -> Option<f64> {
        let h = self.spacing(0);
        let ok = (1..self.dim).all(|a| ((self.spacing(a) - h) / h).abs() < 1e-12);
        ok.then_some(h)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for a in (0..self.dim).rev() {
            f = f * self.cells[a] + idx[a];
        }
        f
    }

    #[inline]
    pub fn multi(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for (a, ma) in m.iter_mut().enumerate().take(self.dim) {
            *ma = flat % self.cells[a];
            flat /= self.cells[a];
        }
        m
    }

    #[inline]
    pub fn center(&self, flat: usize) -> Point {
        self.center_of(&self.multi(flat))
    }

    #[inline]
    pub fn center_of(&self, idx: &[usize]) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (a, ca) in c.iter_mut().enumerate().take(self.dim) {
            *ca = self.bounds.lo().get(a) + (idx[a] as f64 + 0.5) * self.spacing(a);
        }
        Point::from_array(self.dim, c)
    }

    /// Cell containing `x` under the half-closed convention.
    pub fn locate(&self, x: &Point) -> Option<[usize; MAX_DIM]> {
        if !self.bounds.contains(x) {
            return None;
        }
        let mut m = [0; MAX_DIM];
        for (a, ma) in m.iter_mut().enumerate().take(self.dim) {
            let t = ((x.get(a) - self.bounds.lo().get(a)) / self.spacing(a)).floor();
            *ma = (t.max(0.0) as usize).min(self.cells[a] - 1);
        }
        Some(m)
    }

    pub fn locate_flat(&self, x: &Point) -> Option<usize> {
        self.locate(x).map(|m| self.flat(&m))
    }

    /// Nearest cell center, clamped to the grid.
    pub fn nearest(&self, x: &Point) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for (a, ma) in m.iter_mut().enumerate().take(self.dim) {
            let t = ((x.get(a) - self.bounds.lo().get(a)) / self.spacing(a) - 0.5).round();
            *ma = (t.max(0.0) as usize).min(self.cells[a] - 1);
        }
        m
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    pub(crate) fn to_file(&self) -> GridFile {
        GridFile {
            bounds: BoxFile {
                lo: self.bounds.lo().coords().to_vec(),
                hi: self.bounds.hi().coords().to_vec(),
            },
            cells: self.cells().to_vec(),
        }
    }
}

/// Scalar (one component) or vector (N components) samples per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        GridField {
            grid,
            components: 1,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        GridField {
            grid,
            components: 1,
            values: vec![c; n],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        GridField::with_components(grid, 1, values)
    }

    pub fn with_components(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.len() * components {
            return Err(Error::InvalidParameter(format!(
                "field needs {} values, got {}",
                grid.len() * components,
                values.len()
            )));
        }
        Ok(GridField {
            grid,
            components,
            values,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        GridField {
            grid,
            components: 1,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, cell: usize) -> f64 {
        self.values[cell * self.components]
    }

    pub fn vector(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.components..(cell + 1) * self.components]
    }

    /// Pointwise Euclidean norm of a vector field.
    pub fn magnitude(&self) -> GridField {
        let vals = (0..self.grid.len())
            .map(|c| self.vector(c).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        GridField {
            grid: self.grid.clone(),
            components: 1,
            values: vals,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            components: self.components,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> GridField {
        self.map(|v| v * s)
    }

    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume() * neumaier_sum(self.values.iter().map(|v| v.abs()))
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        (self.grid.cell_volume() * neumaier_sum(self.values.iter().map(|v| v.abs().powf(p))))
            .powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * neumaier_sum(self.values.iter().copied())
    }

    /// Central-difference gradient of a scalar field; one-sided at the box faces.
    pub fn gradient(&self) -> GridField {
        let dim = self.grid.dim();
        let mut out = vec![0.0; self.grid.len() * dim];
        for c in 0..self.grid.len() {
            let idx = self.grid.multi(c);
            for a in 0..dim {
                let n = self.grid.cells()[a];
                let h = self.grid.spacing(a);
                let mut lo = idx;
                let mut hi = idx;
                if idx[a] > 0 {
                    lo[a] -= 1;
                }
                if idx[a] + 1 < n {
                    hi[a] += 1;
                }
                let steps = (hi[a] - lo[a]) as f64;
                if steps > 0.0 {
                    let d = self.get(self.grid.flat(&hi[..dim])) - self.get(self.grid.flat(&lo[..dim]));
                    out[c * dim + a] = d / (steps * h);
                }
            }
        }
        GridField {
            grid: self.grid.clone(),
            components: dim,
            values: out,
        }
    }

    /// Standard `2N+1`-point discrete Laplacian; zero on boundary cells.
    pub fn laplacian(&self) -> GridField {
        let dim = self.grid.dim();
        let mut out = vec![0.0; self.grid.len()];
        for (c, o) in out.iter_mut().enumerate() {
            let idx = self.grid.multi(c);
            if (0..dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.grid.cells()[a]) {
                continue;
            }
            let v = self.get(c);
            let mut s = 0.0;
            for a in 0..dim {
                let h = self.grid.spacing(a);
                let mut lo = idx;
                let mut hi = idx;
                lo[a] -= 1;
                hi[a] += 1;
                s += (self.get(self.grid.flat(&lo[..dim])) - 2.0 * v + self.get(self.grid.flat(&hi[..dim]))) / (h * h);
            }
            *o = s;
        }
        GridField {
            grid: self.grid.clone(),
            components: 1,
            values: out,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f = GridFieldFile {
            grid: self.grid.to_file(),
            components: Some(self.components),
            values: self.values.clone(),
        };
        serde_json::to_value(f).expect("grid field serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: GridFieldFile = serde_json::from_value(v.clone())?;
        f.into_field()
    }
}

/// Compensated (Neumaier) summation; deterministic for a fixed input order.
pub fn neumaier_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct BoxFile {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxFile {
    pub fn to_aabb(&self) -> Result<Aabb> {
        Aabb::from_slices(&self.lo, &self.hi)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct GridFile {
    #[serde(rename = "box")]
    pub bounds: BoxFile,
    pub cells: Vec<usize>,
}

impl GridFile {
    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(self.bounds.to_aabb()?, &self.cells)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct GridFieldFile {
    #[serde(flatten)]
    pub grid: GridFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    pub values: Vec<f64>,
}

impl GridFieldFile {
    pub fn into_field(self) -> Result<GridField> {
        let g = self.grid.to_grid()?;
        GridField::with_components(g, self.components.unwrap_or(1), self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn flat_multi_roundtrip() {
        let g = Grid::new(Aabb::from_slices(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap(), &[3, 4, 5]).unwrap();
        for f in 0..g.len() {
            assert_eq!(g.flat(&g.multi(f)), f);
        }
        assert_eq!(g.len(), 60);
    }

    #[test]
    fn locate_is_half_closed() {
        let g = unit_grid(4);
        let x = Point::new(&[0.25, 0.5]).unwrap();
        assert_eq!(&g.locate(&x).unwrap()[..2], &[1, 2]);
        assert!(g.locate(&Point::new(&[1.0, 0.5]).unwrap()).is_none());
        assert_eq!(&g.locate(&Point::new(&[0.0, 0.0]).unwrap()).unwrap()[..2], &[0, 0]);
    }

    #[test]
    fn gradient_and_laplacian_are_exact_on_quadratics() {
        let g = unit_grid(16);
        let f = GridField::from_fn(g, |p| 3.0 * p.get(0) - 2.0 * p.get(1));
        let d = f.gradient();
        assert_eq!(d.components(), 2);
        for c in 0..d.grid().len() {
            assert!((d.vector(c)[0] - 3.0).abs() < 1e-9);
            assert!((d.vector(c)[1] + 2.0).abs() < 1e-9);
        }
        let q = GridField::from_fn(unit_grid(16), |p| p.get(0).powi(2) + 2.0 * p.get(1).powi(2));
        let l = q.laplacian();
        let interior = q.grid().flat(&[5, 7]);
        assert!((l.get(interior) - 6.0).abs() < 1e-8);
        assert_eq!(l.get(0), 0.0);
    }

    #[test]
    fn field_norms() {
        let g = unit_grid(10);
        let f = GridField::constant(g, -3.0);
        assert!((f.l1_norm() - 3.0).abs() < 1e-12);
        assert!((f.integral() + 3.0).abs() < 1e-12);
        assert_eq!(f.sup_norm(), 3.0);
        assert!((f.lp_norm(2.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let g = unit_grid(3);
        let f = GridField::from_fn(g, |p| p.get(0) + 10.0 * p.get(1));
        let back = GridField::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }
}
