use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use czkit::cz::{cz_decompose, verify_cz, CzParams};
use czkit::maximal::{maximal_function, superlevel_measure, RadiiSchedule};
use czkit::whitney::{verify_whitney, whitney_cover};
use czkit::{fixtures, Aabb, Error, Grid, Point, SignedMeasure};

fn random_measure(seed: u64) -> (SignedMeasure, Aabb, Grid) {
    let bounds = Aabb::cube(2, 0.0, 1.0).unwrap();
    let grid = Grid::uniform(bounds, 32).unwrap();
    let mu = fixtures::random_measure(&grid, &mut ChaCha8Rng::seed_from_u64(seed));
    (mu, bounds, grid)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decompositions_of_random_measures_verify(seed in 0u64..10_000, k in 1u32..5) {
        let (mu, bounds, _) = random_measure(seed);
        let t = mu.total_variation() * 2f64.powi(k as i32);
        let d = cz_decompose(&mu, t, &bounds, &CzParams { cells: 32, ..CzParams::default() }).unwrap();
        let r = verify_cz(&d);
        prop_assert!(r.passed, "{r:?}");
        // the averages over the cubes carry the removed mass back into g
        let kept: f64 = d.g.values().iter().sum::<f64>() * d.grid.cell_volume();
        prop_assert!((kept - mu.total_mass()).abs() <= 1e-9 * mu.total_variation().max(1.0));
    }

    #[test]
    fn measures_survive_a_json_round_trip(seed in 0u64..10_000) {
        let (mu, _, _) = random_measure(seed);
        let back = SignedMeasure::from_json(&mu.to_json()).unwrap();
        prop_assert_eq!(back.atoms().len(), mu.atoms().len());
        prop_assert!((back.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_variation().max(1.0));
    }

    #[test]
    fn maximal_superlevel_sets_obey_the_weak_bound(seed in 0u64..10_000, k in 0u32..6) {
        let (mu, _, grid) = random_measure(seed);
        let m = maximal_function(&mu, &grid, &RadiiSchedule::default_for(&grid)).unwrap();
        let t = mu.total_variation() * 2f64.powi(k as i32);
        prop_assert!(superlevel_measure(&m, t).unwrap() * t <= 25.0 * mu.total_variation());
    }

    #[test]
    fn random_whitney_covers_verify(seed in 0u64..10_000) {
        let grid = Grid::uniform(Aabb::cube(2, 0.0, 1.0).unwrap(), 32).unwrap();
        let f = fixtures::random_closed_set(&grid, &mut ChaCha8Rng::seed_from_u64(seed));
        let cover = whitney_cover(&f, 16).unwrap();
        let r = verify_whitney(&cover, &f).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn an_empty_good_set_is_an_unbounded_cover() {
    let mu = SignedMeasure::dirac(Point::new(&[0.3, 0.6]).unwrap(), 1.0);
    let bounds = Aabb::cube(2, 0.0, 1.0).unwrap();
    let e = cz_decompose(&mu, 1e-6, &bounds, &CzParams::default()).unwrap_err();
    assert_eq!(e, Error::UnboundedCover);
}

#[test]
fn zero_measure_has_no_bad_part() {
    let bounds = Aabb::cube(2, 0.0, 1.0).unwrap();
    let d = cz_decompose(&SignedMeasure::zero(2), 1.0, &bounds, &CzParams::default()).unwrap();
    assert!(d.bad_parts.is_empty());
    assert!(d.g.values().iter().all(|&v| v == 0.0));
}
