//! One driver per subcommand. Each returns a [`Report`]; `passed` is false
//! exactly when an asserted check fails.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use czkit::acceptance;
use czkit::approx::{approx_derivative, quotient_csv, weak_diff_quotient, ApproxParams};
use czkit::calibration::calibrate_all;
use czkit::closed::ClosedSet;
use czkit::coefficient::{composite_coefficient, lp_coefficient, uniformize, DipoleCoefficient};
use czkit::cz::{cz_decompose, verify_cz, CzParams};
use czkit::fixtures;
use czkit::geometry::{Cube, Point};
use czkit::grid::{Grid, GridField};
use czkit::kernels::{convolve, convolve_density, convolve_on_grid, Kernel};
use czkit::lipschitz::{check_lipschitz_coeff, sample_cell_pairs};
use czkit::maximal::{maximal_function, superlevel_measure, RadiiSchedule};
use czkit::norms::{weak_lp_norm, weak_lp_seminorm, Heights, TrialSets};
use czkit::potential::{
    discretize_load, level_set_test, node_grid, regularity_report, solve_dirichlet, subharmonic_negligibility,
    verify_identity_main, HessianParams, IdentityFixture, LevelMode,
};
use czkit::whitney::{verify_whitney, whitney_cover};
use czkit::SignedMeasure;

use crate::{CliError, CoeffKind, Command, Inputs, Report};

pub fn dispatch(cmd: &Command, inp: &Inputs) -> Result<Report, CliError> {
    match cmd {
        Command::Czd => czd(inp),
        Command::Convolve => convolve_cmd(inp),
        Command::Coeff {
            kind,
            center,
            side,
            p,
            heights,
            pairs,
        } => match kind {
            CoeffKind::Dipole => coeff_dipole(inp, center, *side, *pairs),
            CoeffKind::Composite => coeff_composite(inp, *pairs),
            CoeffKind::Lp => coeff_lp(inp, p.unwrap_or(2.0), *pairs),
            CoeffKind::Uniformize => coeff_uniformize(inp, heights),
        },
        Command::Norms { field, p, point } => norms(inp, field.as_deref(), *p, point),
        Command::Whitney { field } => whitney(inp, field.as_deref()),
        Command::Maximal { heights } => maximal(inp, heights),
        Command::Poisson { tol } => poisson(inp, *tol),
        Command::VerifyMain { scenario } => verify_main(inp, scenario.as_deref()),
        Command::LevelSet {
            scenario,
            alpha,
            gradient,
            deltas,
            min_drop,
        } => level_set(inp, scenario.as_deref(), *alpha, gradient, deltas, *min_drop),
        Command::FrankLieb {
            scenario,
            theta_min,
            alphas,
            deltas,
        } => frank_lieb(inp, scenario.as_deref(), *theta_min, alphas, deltas),
        Command::Calibrate => calibrate(),
        Command::Acceptance { criterion } => run_acceptance(criterion),
    }
}

fn rng(inp: &Inputs) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(inp.seed())
}

/// The working grid, or the density grid when the measure has one.
fn working_grid(inp: &Inputs, mu: Option<&SignedMeasure>) -> Result<Grid, CliError> {
    if let Some(f) = mu.and_then(|m| m.density()) {
        if inp.common.res.is_empty() && inp.common.bounds.is_empty() {
            return Ok(f.grid().clone());
        }
    }
    let dim = inp.dim(mu);
    Ok(Grid::uniform(inp.bounds(dim, mu)?, inp.cells())?)
}

fn point(coords: &[f64], dim: usize) -> Result<Point, CliError> {
    if coords.len() != dim {
        return Err(CliError::Parse(format!("expected {dim} coordinates, got {}", coords.len())));
    }
    Ok(Point::new(coords)?)
}

fn field_from_file(path: &std::path::Path) -> Result<GridField, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(GridField::from_json(&v)?)
}

/// `K * mu` on the grid, `NaN` where it is masked.
fn potential_field(k: &Kernel, mu: &SignedMeasure, grid: &Grid) -> Result<GridField, CliError> {
    let c = convolve_on_grid(k, mu, grid, grid.spacing(0) / 2.0)?;
    let vals = c.values.iter().zip(&c.mask).map(|(v, ok)| if *ok { *v } else { f64::NAN }).collect();
    Ok(GridField::from_values(grid.clone(), vals)?)
}

fn czd(inp: &Inputs) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let t = inp.height()?;
    let bounds = inp.bounds(mu.dim(), Some(&mu))?;
    let params = CzParams {
        cells: inp.cells(),
        ..CzParams::default()
    };
    let d = cz_decompose(&mu, t, &bounds, &params)?;
    let r = verify_cz(&d);
    Ok(Report::new(r.passed, json!({ "decomposition": d.to_json(), "verify": r })))
}

fn convolve_cmd(inp: &Inputs) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let k = inp.kernel(mu.dim())?;
    let grid = working_grid(inp, Some(&mu))?;
    let f = potential_field(&k, &mu, &grid)?;
    let valid = f.values().iter().filter(|v| v.is_finite()).count();
    Ok(Report::new(
        true,
        json!({ "kernel": k.name(), "valid_cells": valid, "field": f.to_json() }),
    ))
}

fn coeff_dipole(inp: &Inputs, center: &[f64], side: Option<f64>, pairs: usize) -> Result<Report, CliError> {
    let nu = inp.require_measure()?;
    let dim = nu.dim();
    let k = inp.kernel(dim)?;
    let theta = inp.theta();
    let c = if center.is_empty() { Point::origin(dim) } else { point(center, dim)? };
    let q = Cube::new(c, side.unwrap_or(1.0))?;
    let dc = DipoleCoefficient::new(&k, &nu, &q, theta)?;
    let grid = if inp.common.bounds.is_empty() && inp.config.as_ref().and_then(|c| c.bounds.as_ref()).is_none() {
        let reach = 4.0 * theta * q.side();
        let lo: Vec<f64> = (0..dim).map(|a| q.center().get(a) - reach).collect();
        let hi: Vec<f64> = (0..dim).map(|a| q.center().get(a) + reach).collect();
        Grid::uniform(czkit::Aabb::from_slices(&lo, &hi)?, inp.cells())?
    } else {
        Grid::uniform(inp.bounds(dim, None)?, inp.cells())?
    };
    let field = dc.field(&grid)?;
    let outside: Vec<usize> = (0..grid.len()).filter(|&i| field.get(i).is_finite()).collect();
    let cells = sample_cell_pairs(&grid, &outside, pairs, &mut rng(inp));
    let v = convolve(&k, &nu, &grid.centers(), 1e-12)?;
    let vf = GridField::from_values(grid.clone(), v.values)?;
    let lip = check_lipschitz_coeff(&vf, &field.values, &cells)?;
    Ok(Report::new(
        lip.passed(),
        json!({
            "kernel": k.name(),
            "theta": theta,
            "constants": dc.constants,
            "l1_bound": dc.l1_bound(),
            "lipschitz": lip,
            "coefficient": field.to_json(),
        }),
    ))
}

fn coeff_composite(inp: &Inputs, pairs: usize) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let k = inp.kernel(mu.dim())?;
    let t = inp.height()?;
    let bounds = inp.bounds(mu.dim(), Some(&mu))?;
    let params = CzParams {
        cells: inp.cells(),
        ..CzParams::default()
    };
    let c = composite_coefficient(&k, &mu, t, &bounds, &params)?;
    let grid = c.coefficient.grid().clone();
    let f_cells: Vec<usize> = (0..grid.len()).filter(|&i| c.coefficient.get(i).is_finite()).collect();
    let cells = sample_cell_pairs(&grid, &f_cells, pairs, &mut rng(inp));
    let v = potential_field(&k, &mu, &grid)?;
    let lip = check_lipschitz_coeff(&v, &c.coefficient.values, &cells)?;
    Ok(Report::new(
        lip.passed(),
        json!({
            "kernel": k.name(),
            "height": t,
            "weak_level_ratio": c.weak_level_ratio(),
            "bad_parts": c.decomposition.bad_parts.len(),
            "lipschitz": lip,
            "coefficient": c.coefficient.to_json(),
        }),
    ))
}

fn coeff_lp(inp: &Inputs, p: f64, pairs: usize) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let k = inp.kernel(mu.dim())?;
    let lp = lp_coefficient(&k, &mu, p)?;
    let f = mu.density().expect("checked by lp_coefficient");
    let grid = f.grid().clone();
    let v = convolve_density(&k, f)?;
    let all: Vec<usize> = (0..grid.len()).collect();
    let cells = sample_cell_pairs(&grid, &all, pairs, &mut rng(inp));
    let lip = check_lipschitz_coeff(&v, &lp.coefficient.values, &cells)?;
    Ok(Report::new(
        lip.passed(),
        json!({
            "kernel": k.name(),
            "p": p,
            "ratio": lp.ratio,
            "lipschitz": lip,
            "coefficient": lp.coefficient.to_json(),
        }),
    ))
}

fn coeff_uniformize(inp: &Inputs, heights: &[f64]) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let k = inp.kernel(mu.dim())?;
    let bounds = inp.bounds(mu.dim(), Some(&mu))?;
    let params = CzParams {
        cells: inp.cells(),
        ..CzParams::default()
    };
    let ts = inp.list(heights, |c| &c.heights, &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
    let family = ts
        .iter()
        .map(|&t| Ok((t, composite_coefficient(&k, &mu, t, &bounds, &params)?.coefficient)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let a_prime = family
        .iter()
        .map(|(t, c)| c.superlevel_volume(*t) * t)
        .fold(0.0, f64::max);
    if a_prime == 0.0 {
        return Err(CliError::Parse("every superlevel set is empty; nothing to uniformize".into()));
    }
    let h = uniformize(&family, a_prime)?;
    let s = weak_lp_seminorm(&h.values, 1.0, &Heights::Exact)?.seminorm;
    Ok(Report::new(
        s <= 8.0 * a_prime,
        json!({
            "heights": ts,
            "a_prime": a_prime,
            "seminorm": s,
            "bound": 8.0 * a_prime,
            "coefficient": h.to_json(),
        }),
    ))
}

fn norms(inp: &Inputs, field: Option<&std::path::Path>, p: Option<f64>, at: &[f64]) -> Result<Report, CliError> {
    let mu = if field.is_none() { Some(inp.require_measure()?) } else { None };
    let f = match field {
        Some(path) => field_from_file(path)?,
        None => {
            let mu = mu.as_ref().expect("measure loaded");
            potential_field(&inp.kernel(mu.dim())?, mu, &working_grid(inp, Some(mu))?)?
        }
    };
    let dim = f.grid().dim();
    let p = p.unwrap_or(if dim > 1 { dim as f64 / (dim as f64 - 1.0) } else { 2.0 });
    let finite = f.map(|v| if v.is_finite() { v } else { 0.0 });
    let semi = weak_lp_seminorm(&finite, p, &Heights::Exact)?;
    let norm = if p > 1.0 {
        Some(weak_lp_norm(&finite, p, &TrialSets {
            seed: inp.seed(),
            ..TrialSets::default()
        })?)
    } else {
        None
    };
    let mut body = json!({ "p": p, "seminorm": semi, "norm": norm });
    let mut report_curve = None;
    let mut passed = true;
    if !at.is_empty() {
        let y = point(at, dim)?;
        let params = ApproxParams::default();
        let t = approx_derivative(&f, &y, &params)?;
        let h = f.grid().spacing(0);
        let radii: Vec<f64> = [32.0, 16.0, 8.0, 4.0, 2.0].iter().map(|c| c * h).collect();
        if t.valid {
            let q = weak_diff_quotient(&f, &y, &t, &radii)?;
            report_curve = Some(quotient_csv(&q));
            body["quotient"] = json!(q);
        } else {
            passed = false;
        }
        body["derivative"] = json!(t);
    }
    let mut r = Report::new(passed, body);
    if let Some(csv) = report_curve {
        r = r.with_curve(csv, "differentiability quotient", true);
    }
    Ok(r)
}

fn whitney(inp: &Inputs, field: Option<&std::path::Path>) -> Result<Report, CliError> {
    let mu = inp.measure()?;
    let set = match (field, &mu) {
        (Some(path), _) => {
            let f = field_from_file(path)?;
            let mask = f.values().iter().map(|v| *v != 0.0).collect();
            ClosedSet::new(f.grid().clone(), mask)?
        }
        (None, Some(mu)) => {
            let t = inp.height()?;
            let grid = working_grid(inp, Some(mu))?;
            let m = maximal_function(mu, &grid, &RadiiSchedule::default_for(&grid))?;
            let mask = m.values().iter().map(|v| *v <= t).collect();
            ClosedSet::new(grid, mask)?
        }
        (None, None) => {
            let dim = inp.dim(None);
            let grid = Grid::uniform(inp.bounds(dim, None)?, inp.cells())?;
            fixtures::random_closed_set(&grid, &mut rng(inp))
        }
    };
    let cover = whitney_cover(&set, 64)?;
    let r = verify_whitney(&cover, &set)?;
    Ok(Report::new(r.passed(), json!({ "verify": r, "cover": cover.to_json() })))
}

fn maximal(inp: &Inputs, heights: &[f64]) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let grid = working_grid(inp, Some(&mu))?;
    let sched = match &inp.config {
        Some(c) if !c.radii.is_empty() => RadiiSchedule::Explicit { radii: c.radii.clone() },
        _ => RadiiSchedule::default_for(&grid),
    };
    let m = maximal_function(&mu, &grid, &sched)?;
    let norm = mu.total_variation();
    let default: Vec<f64> = (0..8).map(|k| norm * 2f64.powi(k)).collect();
    let mut ts = inp.list(heights, |c| &c.heights, &default);
    if let Some(t) = inp.common.height {
        ts = vec![t];
    }
    let bound = 5f64.powi(grid.dim() as i32);
    let mut csv = String::from("t,ratio\n");
    let mut rows = Vec::new();
    let mut passed = true;
    for &t in &ts {
        let vol = superlevel_measure(&m, t)?;
        let ratio = if norm > 0.0 { vol * t / norm } else { 0.0 };
        passed &= ratio <= 1.05 * bound;
        csv.push_str(&format!("{t},{ratio}\n"));
        rows.push(json!({ "t": t, "volume": vol, "ratio": ratio }));
    }
    Ok(Report::new(
        passed,
        json!({ "weak_bound": bound, "superlevel": rows, "radii": m.radii, "field": m.field.to_json() }),
    )
    .with_curve(csv, "|{M mu > t}| t / ||mu||", false))
}

fn poisson(inp: &Inputs, tol: f64) -> Result<Report, CliError> {
    let mu = inp.require_measure()?;
    let dim = mu.dim();
    let bounds = match (&inp.common.bounds, &inp.config) {
        (b, c) if b.is_empty() && c.as_ref().and_then(|c| c.bounds.as_ref()).is_none() => {
            czkit::Aabb::cube(dim, 0.0, 1.0)?
        }
        _ => inp.bounds(dim, None)?,
    };
    let mut rows = Vec::new();
    let mut csv = String::from("n,residual\n");
    for n in inp.resolutions(&[32, 64]) {
        let sol = solve_dirichlet(&mu, &bounds, n, tol)?;
        let reg = regularity_report(&sol)?;
        csv.push_str(&format!("{n},{}\n", sol.residual));
        rows.push(json!({ "solution": sol, "regularity": reg }));
    }
    Ok(Report::new(true, json!({ "resolutions": rows })).with_curve(csv, "Poisson residual", false))
}

/// A measure file as an identity fixture; the density is looked up cell by cell.
fn fixture_from_measure(mu: &SignedMeasure) -> IdentityFixture {
    let density = mu.density().cloned().map(|f| {
        let d: Arc<dyn Fn(&Point) -> f64 + Send + Sync> =
            Arc::new(move |p: &Point| f.grid().locate_flat(p).map_or(0.0, |c| f.get(c)));
        d
    });
    IdentityFixture {
        name: "measure".into(),
        dim: mu.dim(),
        atoms: mu.atoms().to_vec(),
        density,
    }
}

fn verify_main(inp: &Inputs, scenario: Option<&str>) -> Result<Report, CliError> {
    let fixture = match inp.measure()? {
        Some(mu) => fixture_from_measure(&mu),
        None => {
            let name = scenario
                .map(str::to_string)
                .or(inp.config.as_ref().map(|c| c.scenario.clone()))
                .unwrap_or_else(|| "dirac".into());
            fixtures::identity_fixtures()
                .into_iter()
                .find(|f| f.name == name)
                .ok_or_else(|| CliError::Parse(format!("unknown scenario `{name}` (dirac, smooth, mixed)")))?
        }
    };
    let bounds = match (&inp.common.bounds, &inp.config) {
        (b, c) if b.is_empty() && c.as_ref().and_then(|c| c.bounds.as_ref()).is_none() => {
            czkit::Aabb::cube(fixture.dim, 0.0, 1.0)?
        }
        _ => inp.bounds(fixture.dim, None)?,
    };
    let params = HessianParams {
        exclusion_min: inp.config.as_ref().and_then(|c| c.exclusion_min).unwrap_or(0.0),
        ..HessianParams::default()
    };
    let res = inp.resolutions(&acceptance::IDENTITY_RESOLUTIONS);
    let r = verify_identity_main(&fixture, &bounds, &res, &params, 1e-10)?;
    let passed = match (fixture.atoms.is_empty(), fixture.density.is_some()) {
        (false, true) => r.on_support_slope > 0.5 && r.off_support_slope > 0.5,
        (false, false) => r.mean_slope > 0.5,
        _ => r.convergence_slope > 0.5,
    };
    let mut csv = String::from("h,l1_error,mean_error\n");
    for row in &r.resolutions {
        csv.push_str(&format!("{},{},{}\n", row.h, row.l1_error, row.mean_error));
    }
    Ok(Report::new(passed, r).with_curve(csv, "identity error against h", true))
}

/// `u` and the density of the absolutely continuous part of `Δu`.
fn level_fields(inp: &Inputs, scenario: Option<&str>) -> Result<(GridField, GridField), CliError> {
    match inp.measure()? {
        Some(mu) => {
            let bounds = inp.bounds(mu.dim(), None)?;
            let n = inp.cells();
            let sol = solve_dirichlet(&mu, &bounds, n, 1e-10)?;
            let (ac, _) = mu.ac_singular_split();
            let grid = node_grid(&bounds, n)?;
            // -Δu = mu, so (Δu)_a = -f
            let f = discretize_load(&ac, &grid)?.scaled(-1.0);
            Ok((sol.u, f))
        }
        None => match scenario.unwrap_or("plateau") {
            "plateau" => Ok(fixtures::plateau(inp.cells().max(2))?),
            s => Err(CliError::Parse(format!("unknown scenario `{s}` (plateau, or give a measure)"))),
        },
    }
}

fn level_set(
    inp: &Inputs,
    scenario: Option<&str>,
    alpha: Option<f64>,
    gradient: &[f64],
    deltas: &[f64],
    min_drop: Option<f64>,
) -> Result<Report, CliError> {
    let (u, f) = level_fields(inp, scenario)?;
    let mode = if gradient.is_empty() {
        LevelMode::Value {
            alpha: alpha.or(inp.config.as_ref().and_then(|c| c.alphas.first().copied())).unwrap_or(0.0),
        }
    } else {
        LevelMode::Gradient { e: gradient.to_vec() }
    };
    let ds = inp.list(deltas, |c| &c.deltas, &[1e-1, 1e-2, 1e-3, 1e-4]);
    let bands = level_set_test(&u, &f, &mode, &ds)?;
    let mut csv = String::from("delta,mean_abs\n");
    for b in &bands {
        csv.push_str(&format!(
            "{},{}\n",
            b.delta,
            b.mean_abs.map_or("".to_string(), |m| m.to_string())
        ));
    }
    let means: Vec<f64> = bands.iter().filter_map(|b| b.mean_abs).collect();
    let drop = match (means.first(), means.last()) {
        (Some(a), Some(b)) if *b > 0.0 => a / b,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => f64::NAN,
    };
    let passed = min_drop.is_none_or(|m| drop >= m);
    let loglog = means.iter().all(|m| *m > 0.0) && means.len() == bands.len();
    Ok(Report::new(passed, json!({ "mode": mode, "bands": bands, "drop": drop }))
        .with_curve(csv, "band mean of |(Δu)_a|", loglog))
}

fn frank_lieb(
    inp: &Inputs,
    scenario: Option<&str>,
    theta_min: f64,
    alphas: &[f64],
    deltas: &[f64],
) -> Result<Report, CliError> {
    let n = inp.cells().max(2);
    let u = match inp.measure()? {
        Some(_) => level_fields(inp, None)?.0,
        None => {
            let name = scenario.unwrap_or("paraboloid");
            if name == "kink" {
                let g = node_grid(&czkit::Aabb::cube(2, -1.0, 2.0)?, n)?;
                GridField::from_fn(g, |p| p.get(0).max(0.0))
            } else {
                fixtures::subharmonic_fixtures(n)?
                    .into_iter()
                    .find(|(s, _)| s == name)
                    .map(|(_, u)| u)
                    .ok_or_else(|| {
                        CliError::Parse(format!("unknown scenario `{name}` (paraboloid, tilted, kink)"))
                    })?
            }
        }
    };
    let al = inp.list(alphas, |c| &c.alphas, &[0.05, 0.1]);
    let ds = inp.list(deltas, |c| &c.deltas, &[0.02, 0.01, 0.005, 0.0025]);
    let t = subharmonic_negligibility(&u, theta_min, &al, &ds)?;
    let passed = t.slopes.iter().all(|s| (s - 1.0).abs() <= 0.2);
    let mut csv = String::from("delta");
    for a in &al {
        csv.push_str(&format!(",alpha={a}"));
    }
    csv.push('\n');
    for (j, d) in ds.iter().enumerate() {
        csv.push_str(&d.to_string());
        for row in &t.fractions {
            csv.push_str(&format!(",{}", row[j]));
        }
        csv.push('\n');
    }
    let loglog = t.fractions.iter().flatten().all(|f| *f > 0.0);
    Ok(Report::new(passed, t).with_curve(csv, "level-band fractions", loglog))
}

fn calibrate() -> Result<Report, CliError> {
    let c = calibrate_all()?;
    Ok(Report::new(true, c))
}

fn run_acceptance(ids: &[u8]) -> Result<Report, CliError> {
    let ids: Vec<u8> = if ids.is_empty() { (1..=acceptance::CRITERIA).collect() } else { ids.to_vec() };
    let outcomes = ids.iter().map(|&i| acceptance::run(i)).collect::<czkit::Result<Vec<_>>>()?;
    let passed = outcomes.iter().all(|o| o.passed);
    let mut r = Report::new(passed, &outcomes);
    r.lines = outcomes.iter().map(|o| o.line()).collect();
    Ok(r)
}
