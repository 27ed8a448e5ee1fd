//! Weak-`L^p` quasinorms and the equivalent norm for `p > 1`.
//!
//! Level sets are measured cell by cell. A height `t` is evaluated as
//! `t |{|f| >= t}|^{1/p}`, the left limit of `t |{|f| > t}|^{1/p}`; the sup over
//! all `t > 0` is therefore attained at one of the field's values, which is what
//! [`Heights::Exact`] enumerates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Heights {
    /// 64 geometric heights spanning `[min |f| > 0, max |f|]`.
    Auto,
    Geometric { min: f64, max: f64, count: usize },
    Explicit { heights: Vec<f64> },
    /// Every distinct value of `|f|`: the exact supremum.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakLpReport {
    pub p: f64,
    pub seminorm: f64,
    /// Number of heights evaluated.
    pub heights: usize,
    pub argmax_height: f64,
}

/// `|f|` sorted in decreasing order.
fn sorted_abs(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn geometric(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count == 1 || min == max {
        return vec![max];
    }
    let r = (max / min).ln() / (count - 1) as f64;
    (0..count).map(|k| min * (r * k as f64).exp()).collect()
}

pub fn weak_lp_seminorm(f: &GridField, p: f64, heights: &Heights) -> Result<WeakLpReport> {
    if f.components() != 1 {
        return Err(Error::Precondition("weak norms need a scalar field".into()));
    }
    weak_lp_seminorm_cells(f.values(), f.grid().cell_volume(), p, heights)
}

/// The seminorm of a function constant on cells of volume `vol`.
pub fn weak_lp_seminorm_cells(values: &[f64], vol: f64, p: f64, heights: &Heights) -> Result<WeakLpReport> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must be at least 1 (got {p})")));
    }
    let sorted = sorted_abs(values);
    let positive: Vec<f64> = sorted.iter().copied().filter(|&v| v > 0.0).collect();
    let mut report = WeakLpReport {
        p,
        seminorm: 0.0,
        heights: 0,
        argmax_height: 0.0,
    };
    if positive.first().is_some_and(|v| v.is_infinite()) {
        report.seminorm = f64::INFINITY;
        report.argmax_height = f64::INFINITY;
        return Ok(report);
    }
    let ts: Vec<f64> = match heights {
        Heights::Auto => match (positive.last(), positive.first()) {
            (Some(&lo), Some(&hi)) => geometric(lo, hi, 64),
            _ => Vec::new(),
        },
        Heights::Geometric { min, max, count } => {
            if *count == 0 || !(*min > 0.0 && max >= min) {
                return Err(Error::EmptySchedule);
            }
            geometric(*min, *max, *count)
        }
        Heights::Explicit { heights } => {
            if heights.is_empty() {
                return Err(Error::EmptySchedule);
            }
            if heights.iter().any(|&t| !(t > 0.0)) {
                return Err(Error::InvalidParameter("heights must be positive".into()));
            }
            heights.clone()
        }
        Heights::Exact => {
            let mut d = positive.clone();
            d.dedup();
            d
        }
    };
    for &t in &ts {
        // sorted decreasingly: count of |f| >= t
        let count = sorted.partition_point(|&v| v >= t);
        let val = t * (count as f64 * vol).powf(1.0 / p);
        report.heights += 1;
        if val > report.seminorm {
            report.seminorm = val;
            report.argmax_height = t;
        }
    }
    Ok(report)
}

/// Trial sets for the norm: all superlevel sets of `|f|` and random boxes of cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSets {
    pub random_boxes: usize,
    pub seed: u64,
}

impl Default for TrialSets {
    fn default() -> Self {
        TrialSets {
            random_boxes: 256,
            seed: 0,
        }
    }
}

/// `sup_A |A|^{-(p-1)/p} int_A |f|` over the trial family.
///
/// For a fixed `|A|` the superlevel set maximizes `int_A |f|`, so the
/// superlevel part already gives the exact supremum over unions of cells.
pub fn weak_lp_norm(f: &GridField, p: f64, trials: &TrialSets) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must exceed 1 (got {p})")));
    }
    if f.components() != 1 {
        return Err(Error::Precondition("weak norms need a scalar field".into()));
    }
    let vol = f.grid().cell_volume();
    let expo = 1.0 / p - 1.0;
    let sorted = sorted_abs(f.values());
    let mut best = 0.0f64;
    let mut acc = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        if *v == 0.0 {
            break;
        }
        acc += v * vol;
        let area = (k + 1) as f64 * vol;
        best = best.max(area.powf(expo) * acc);
    }

    let grid = f.grid();
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(trials.seed);
    for _ in 0..trials.random_boxes {
        let mut lo = [0usize; 3];
        let mut hi = [1usize; 3];
        for a in 0..dim {
            let n = grid.cells()[a];
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            lo[a] = i.min(j);
            hi[a] = i.max(j) + 1;
        }
        let mut s = 0.0;
        let mut count = 0usize;
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let idx = [i, j, k];
                    s += f.get(grid.flat(&idx[..dim])).abs();
                    count += 1;
                }
            }
        }
        let area = count as f64 * vol;
        best = best.max(area.powf(expo) * s * vol);
    }
    Ok(best)
}
