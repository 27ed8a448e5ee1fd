//! Exact Euclidean distance transform on a cell lattice
//! (separable lower-envelope-of-parabolas algorithm).

use crate::grid::Grid;

/// Squared distance from every cell center to the nearest marked cell
/// center; `+inf` everywhere if no cell is marked.
pub fn squared_distance_transform(grid: &Grid, marked: &[bool]) -> Vec<f64> {
    let dims = grid.cells();
    let mut f: Vec<f64> = marked.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    let mut stride = 1;
    for (a, &n) in dims.iter().enumerate() {
        let h = grid.spacing(a);
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut v = vec![0usize; n];
        let mut z = vec![0.0; n + 1];
        for start in 0..f.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = f[start + t * stride];
            }
            transform_1d(&line, h, &mut out, &mut v, &mut z);
            for (t, o) in out.iter().enumerate() {
                f[start + t * stride] = *o;
            }
        }
        stride *= n;
    }
    f
}

/// `out[q] = min_p (h (q - p))^2 + f[p]`.
fn transform_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let h2 = h * h;
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] / h2 + (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let fp = f[p] / h2 + (p * p) as f64;
            let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as f64 - p as f64;
        *o = h2 * d * d + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use proptest::prelude::*;

    fn brute(grid: &Grid, marked: &[bool]) -> Vec<f64> {
        (0..grid.len())
            .map(|i| {
                let x = grid.center(i);
                (0..grid.len())
                    .filter(|&j| marked[j])
                    .map(|j| x.sub(&grid.center(j)).norm2())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn empty_mask_is_infinite() {
        let g = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 4).unwrap();
        assert!(squared_distance_transform(&g, &[false; 16]).iter().all(|v| v.is_infinite()));
    }

    proptest! {
        #[test]
        fn matches_brute_force(bits in prop::collection::vec(prop::bool::weighted(0.1), 6 * 5 * 4)) {
            let g = Grid::new(Aabb::from_slices(&[0.0, 0.0, 0.0], &[1.2, 0.5, 2.0]).unwrap(), &[6, 5, 4]).unwrap();
            let fast = squared_distance_transform(&g, &bits);
            let slow = brute(&g, &bits);
            for (a, b) in fast.iter().zip(&slow) {
                if b.is_infinite() {
                    prop_assert!(a.is_infinite());
                } else {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
                }
            }
        }
    }
}
