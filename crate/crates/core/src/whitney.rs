//! Whitney covering of the complement of a grid-resolved closed set by
//! half-closed dyadic cubes.
//!
//! Cubes are anchored at the origin with base scale `h 2^L`, so a level-`L`
//! cube is exactly one grid cell. Distances to `F` are measured between cell
//! centers: `d(Q, F)` is the least distance from a cell center in `Q` to a
//! center of a cell of `F`. A cube is *eligible* when it lies in the box,
//! contains no cell of `F` and `diam Q <= d(Q, F)`. The cover consists of the
//! maximal eligible cubes; cells of the complement that no eligible cube
//! reaches are taken as single-cell cubes.
//!
//! With this rule every cube satisfies `d(Q, F) < 4 diam Q`, and single-cell
//! cubes satisfy `d(Q, F) >= h >= diam Q / sqrt(N)`.

use serde::{Deserialize, Serialize};

use crate::closed::ClosedSet;
use crate::error::{Error, Result};
use crate::geometry::{DyadicCube, MAX_DIM};
use crate::grid::Grid;

/// Lower ratio constant `c_1` in `c_1 diam Q <= d(Q, F)`.
pub const WHITNEY_C1: f64 = 0.5;

/// Upper ratio constant `c_2 = 4 sqrt(N)` in `d(Q, F) <= c_2 diam Q`.
pub fn whitney_c2(dim: usize) -> f64 {
    4.0 * (dim as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct WhitneyCover {
    pub cubes: Vec<DyadicCube>,
    /// `d(Q, F)` for each cube, same order as `cubes`.
    pub distances: Vec<f64>,
    pub base_scale: f64,
    /// Level at which a cube is a single grid cell.
    pub cell_level: i32,
    grid: Grid,
    offset: [i64; MAX_DIM],
}

/// Lattice geometry shared by the cover and its verifier.
#[derive(Clone, Copy, Debug)]
struct Frame {
    dim: usize,
    n: [i64; MAX_DIM],
    offset: [i64; MAX_DIM],
    h: f64,
    cell_level: i32,
}

impl Frame {
    fn new(grid: &Grid) -> Result<Self> {
        let h = grid
            .cubic_spacing()
            .ok_or_else(|| Error::Precondition("Whitney covers need cubic cells".into()))?;
        let dim = grid.dim();
        let mut n = [1; MAX_DIM];
        let mut offset = [0; MAX_DIM];
        for a in 0..dim {
            n[a] = grid.cells()[a] as i64;
            let o = grid.bounds().lo().get(a) / h;
            if (o - o.round()).abs() > 1e-9 * (1.0 + o.abs()) {
                return Err(Error::Precondition(
                    "the box corner must lie on the lattice h Z^N".into(),
                ));
            }
            offset[a] = o.round() as i64;
        }
        let maxn = n[..dim].iter().copied().max().unwrap_or(1) as u64;
        let cell_level = (64 - (maxn.max(1) - 1).leading_zeros()) as i32 + 1;
        Ok(Frame {
            dim,
            n,
            offset,
            h,
            cell_level,
        })
    }

    fn base_scale(&self) -> f64 {
        self.h * (self.cell_level as f64).exp2()
    }

    /// Cells per side of a level-`k` cube.
    fn span(&self, level: i32) -> i64 {
        1i64 << (self.cell_level - level)
    }

    /// Grid-relative cell range `[lo, hi)` per axis.
    fn cell_range(&self, q: &DyadicCube) -> ([i64; MAX_DIM], [i64; MAX_DIM]) {
        let s = self.span(q.level);
        let mut lo = [0; MAX_DIM];
        let mut hi = [1; MAX_DIM];
        for a in 0..self.dim {
            lo[a] = q.corner_index[a] * s - self.offset[a];
            hi[a] = lo[a] + s;
        }
        (lo, hi)
    }

    fn inside(&self, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM]) -> bool {
        (0..self.dim).all(|a| lo[a] >= 0 && hi[a] <= self.n[a])
    }

    fn meets(&self, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM]) -> bool {
        (0..self.dim).all(|a| lo[a] < self.n[a] && hi[a] > 0)
    }

    fn flat(&self, i: [i64; MAX_DIM]) -> usize {
        (i[0] + self.n[0] * (i[1] + self.n[1] * i[2])) as usize
    }

    fn for_cells(&self, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM], mut f: impl FnMut(usize)) {
        for i2 in lo[2]..hi[2] {
            for i1 in lo[1]..hi[1] {
                for i0 in lo[0]..hi[0] {
                    f(self.flat([i0, i1, i2]));
                }
            }
        }
    }
}

/// Minimum squared distance and F-count over the cells of a cube.
fn scan(frame: &Frame, f: &ClosedSet, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM]) -> (f64, usize) {
    let sq = f.cell_sq_distances();
    let mut best = f64::INFINITY;
    let mut in_f = 0;
    frame.for_cells(lo, hi, |c| {
        best = best.min(sq[c]);
        if f.cell_in_set(c) {
            in_f += 1;
        }
    });
    (best, in_f)
}

/// Whitney cover of the cells outside `F`. `max_depth` bounds the number of
/// levels below the coarsest one; the cell level is reached when
/// `max_depth >= cell_level`.
pub fn whitney_cover(f: &ClosedSet, max_depth: u32) -> Result<WhitneyCover> {
    if max_depth < 1 {
        return Err(Error::InvalidParameter("max_depth must be at least 1".into()));
    }
    if f.is_empty() {
        return Err(Error::UnboundedCover);
    }
    let grid = f.grid();
    let frame = Frame::new(grid)?;
    let dim = frame.dim;
    let sqrt_n = (dim as f64).sqrt();

    // level-0 cubes meeting the box
    let s0 = frame.span(0);
    let mut stack: Vec<DyadicCube> = Vec::new();
    let mut ranges = [(0i64, 0i64); MAX_DIM];
    for a in 0..dim {
        let lo = frame.offset[a];
        let hi = frame.offset[a] + frame.n[a] - 1;
        ranges[a] = (lo.div_euclid(s0), hi.div_euclid(s0));
    }
    for k2 in ranges[2].0..=ranges[2].1 {
        for k1 in ranges[1].0..=ranges[1].1 {
            for k0 in ranges[0].0..=ranges[0].1 {
                let c = [k0, k1, k2];
                stack.push(DyadicCube::new(dim, 0, &c[..dim])?);
            }
        }
    }

    let mut selected: Vec<(DyadicCube, f64)> = Vec::new();
    let mut uncovered: Vec<usize> = Vec::new();
    while let Some(q) = stack.pop() {
        let (lo, hi) = frame.cell_range(&q);
        if !frame.meets(&lo, &hi) {
            continue;
        }
        let at_cells = q.level == frame.cell_level;
        if frame.inside(&lo, &hi) {
            let (d2, in_f) = scan(&frame, f, &lo, &hi);
            let d = d2.sqrt();
            let diam = frame.span(q.level) as f64 * frame.h * sqrt_n;
            if in_f == 0 && (diam <= d || at_cells) {
                selected.push((q, d));
                continue;
            }
            if at_cells {
                continue;
            }
            if q.level as u32 >= max_depth {
                frame.for_cells(&lo, &hi, |c| {
                    if !f.cell_in_set(c) {
                        uncovered.push(c);
                    }
                });
                continue;
            }
        }
        stack.extend(q.children());
    }
    if !uncovered.is_empty() {
        uncovered.sort_unstable();
        let first = grid.multi(uncovered[0])[..dim].to_vec();
        return Err(Error::ResolutionExceeded {
            uncovered: uncovered.len(),
            first,
        });
    }
    selected.sort_by_key(|a| a.0);
    Ok(WhitneyCover {
        cubes: selected.iter().map(|s| s.0).collect(),
        distances: selected.iter().map(|s| s.1).collect(),
        base_scale: frame.base_scale(),
        cell_level: frame.cell_level,
        grid: grid.clone(),
        offset: frame.offset,
    })
}

impl WhitneyCover {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn diameter(&self, i: usize) -> f64 {
        self.cubes[i].side(self.base_scale) * (self.grid.dim() as f64).sqrt()
    }

    /// Flat grid indices of the cells of cube `i`, in index order.
    pub fn cells_of(&self, i: usize) -> Vec<usize> {
        let frame = self.frame();
        let (lo, hi) = frame.cell_range(&self.cubes[i]);
        let mut out = Vec::new();
        frame.for_cells(&lo, &hi, |c| out.push(c));
        out.sort_unstable();
        out
    }

    /// For every grid cell, the index of the cube containing it.
    pub fn owner_map(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.grid.len()];
        for i in 0..self.cubes.len() {
            for c in self.cells_of(i) {
                owner[c] = Some(i);
            }
        }
        owner
    }

    /// Upper estimate of the smallest `alpha` with `alpha Q` meeting `F`,
    /// over all cubes: `max_Q (1 + 2 d(Q, F) / side Q)`.
    pub fn achieved_alpha(&self) -> f64 {
        (0..self.cubes.len())
            .map(|i| 1.0 + 2.0 * self.distances[i] / self.cubes[i].side(self.base_scale))
            .fold(0.0, f64::max)
    }

    fn frame(&self) -> Frame {
        let mut n = [1; MAX_DIM];
        for (a, na) in n.iter_mut().enumerate().take(self.grid.dim()) {
            *na = self.grid.cells()[a] as i64;
        }
        Frame {
            dim: self.grid.dim(),
            n,
            offset: self.offset,
            h: self.base_scale / (self.cell_level as f64).exp2(),
            cell_level: self.cell_level,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let list: Vec<CubeFile> = self
            .cubes
            .iter()
            .map(|q| CubeFile {
                level: q.level,
                corner_index: q.corner().to_vec(),
            })
            .collect();
        serde_json::to_value(list).expect("cover serializes")
    }

    /// Reads a cube list written by [`WhitneyCover::to_json`] for the cover
    /// of `f`. Distances are recomputed.
    pub fn from_json(v: &serde_json::Value, f: &ClosedSet) -> Result<Self> {
        let list: Vec<CubeFile> = serde_json::from_value(v.clone())?;
        let frame = Frame::new(f.grid())?;
        let mut cubes = Vec::with_capacity(list.len());
        let mut distances = Vec::with_capacity(list.len());
        for c in list {
            let q = DyadicCube::new(frame.dim, c.level, &c.corner_index)?;
            let (lo, hi) = frame.cell_range(&q);
            if !frame.inside(&lo, &hi) {
                return Err(Error::Format("cube outside the grid".into()));
            }
            distances.push(scan(&frame, f, &lo, &hi).0.sqrt());
            cubes.push(q);
        }
        Ok(WhitneyCover {
            cubes,
            distances,
            base_scale: frame.base_scale(),
            cell_level: frame.cell_level,
            grid: f.grid().clone(),
            offset: frame.offset,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CubeFile {
    level: i32,
    corner_index: Vec<i64>,
}

/// Outcome of checking a cover against the Whitney invariants.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyReport {
    pub cubes: usize,
    /// Cells claimed by more than one cube.
    pub overlaps: usize,
    /// Cells of the complement of `F` claimed by no cube.
    pub uncovered: usize,
    /// Cells of `F` claimed by a cube.
    pub covers_f: usize,
    pub outside_box: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub ratio_violations: usize,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
}

impl WhitneyReport {
    pub fn passed(&self) -> bool {
        self.overlaps == 0
            && self.uncovered == 0
            && self.covers_f == 0
            && self.outside_box == 0
            && self.ratio_violations == 0
    }
}

/// Checks disjointness and coverage cell by cell (integer arithmetic) and
/// the ratio `d(Q, F) / diam Q` of every cube against `[c_1, c_2]`.
pub fn verify_whitney(cover: &WhitneyCover, f: &ClosedSet) -> Result<WhitneyReport> {
    let frame = Frame::new(f.grid())?;
    let dim = frame.dim;
    let c2 = whitney_c2(dim);
    let mut claims = vec![0u32; f.grid().len()];
    let mut outside_box = 0;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut ratio_violations = 0;
    for q in &cover.cubes {
        let (lo, hi) = frame.cell_range(q);
        if !frame.inside(&lo, &hi) {
            outside_box += 1;
            continue;
        }
        let (d2, _) = scan(&frame, f, &lo, &hi);
        frame.for_cells(&lo, &hi, |c| claims[c] += 1);
        let diam = frame.span(q.level) as f64 * frame.h * (dim as f64).sqrt();
        let r = d2.sqrt() / diam;
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
        if r < WHITNEY_C1 || r > c2 {
            ratio_violations += 1;
        }
    }
    let mut overlaps = 0;
    let mut uncovered = 0;
    let mut covers_f = 0;
    for (c, &k) in claims.iter().enumerate() {
        if k > 1 {
            overlaps += 1;
        }
        if f.cell_in_set(c) {
            if k > 0 {
                covers_f += 1;
            }
        } else if k == 0 {
            uncovered += 1;
        }
    }
    Ok(WhitneyReport {
        cubes: cover.cubes.len(),
        overlaps,
        uncovered,
        covers_f,
        outside_box,
        min_ratio: if cover.cubes.is_empty() { 0.0 } else { min_ratio },
        max_ratio,
        ratio_violations,
        c1: WHITNEY_C1,
        c2,
        alpha: cover.achieved_alpha(),
    })
}
