use proptest::prelude::*;
use safenav::cbf::evaluate_h;
use safenav::observation::{Costmap, CostmapParams};
use safenav::sim::Action;
use safenav::CbfParams;

const GRID: usize = 48;
const CELL: f64 = 0.1;

/// Robot-frame center of a grid cell: x ahead, y left, robot at the center.
fn center(row: usize, col: usize) -> (f64, f64) {
    let half = GRID as f64 / 2.0;
    ((half - row as f64 - 0.5) * CELL, (half - col as f64 - 0.5) * CELL)
}

/// `min(r - v * (x / r) * dt - r_min, r_max)`, or `None` beyond `r_max`.
fn reference_h(row: usize, col: usize, v: f64, p: &CbfParams<f64>) -> Option<f64> {
    let (x, y) = center(row, col);
    let r = (x * x + y * y).sqrt();
    (r <= p.r_max).then(|| (r - v * (x / r) * p.delta_t - p.r_min).min(p.r_max))
}

fn single_cell(row: usize, col: usize) -> Costmap<f64> {
    let mut m = Costmap::empty(&CostmapParams::default());
    m.set(row, col, true);
    m
}

fn params(delta_t: f64, r_min: f64, r_max: f64) -> CbfParams<f64> {
    CbfParams {
        r_min,
        r_max,
        delta_t,
        ..CbfParams::default()
    }
}

/// Evaluated barrier of the only occupied cell, `None` if it is out of range.
fn library_h(row: usize, col: usize, v: f64, p: &CbfParams<f64>) -> Option<f64> {
    let field = evaluate_h(&single_cell(row, col), Action::new(v, 0.0), p);
    let idx = row * GRID + col;
    field.occupied[idx].then(|| field.h[idx])
}

#[test]
fn hand_computed_table() {
    // (row, col, v, delta_t, r_min, r_max, h); h worked out by hand from the
    // cell centers, `None` where the cell lies beyond r_max.
    let table: [(usize, usize, f64, f64, f64, f64, Option<f64>); 12] = [
        // x = 1.35, y = -0.05, r = 1.350926
        (10, 24, 0.0, 0.5, 0.35, 2.0, Some(1.000_925_608_610_629_5)),
        (10, 24, 0.6, 0.5, 0.35, 2.0, Some(0.701_131_158_480_599_6)),
        // x = 0.35, y = 0.35, r = 0.494975
        (20, 20, 1.0, 0.5, 0.35, 2.0, Some(-0.208_578_643_762_690_47)),
        // behind the robot: x = -0.65, y = -0.05
        (30, 24, 1.0, 0.5, 0.35, 2.0, Some(0.800_447_483_271_055_6)),
        // x = y = 2.35, r = 3.32 > r_max
        (0, 0, 0.5, 0.5, 0.35, 2.0, None),
        // x = 1.95, y = -0.05
        (4, 24, 0.0, 0.5, 0.35, 2.0, Some(1.600_640_920_313_116_2)),
        // x = 0.95, y = -0.05, longer horizon, other radii
        (14, 24, 1.0, 1.0, 0.2, 5.0, Some(-0.247_302_949_810_487_34)),
        // x = y = 0.05, inside r_min
        (23, 23, 0.3, 0.5, 0.35, 2.0, Some(-0.385_355_339_059_327_34)),
        // x = -0.05, y = 1.35: nearly abeam, tiny receding component
        (24, 10, 0.8, 0.5, 0.35, 2.0, Some(1.015_730_272_814_581_6)),
        // x = 1.85, y = -0.65
        (5, 30, 1.0, 0.25, 0.5, 3.0, Some(1.225_002_120_199_975)),
        // receding at 1 m/s lifts h past r_max: clipped
        (4, 24, -1.0, 0.5, 0.35, 2.0, Some(2.0)),
        // x = 0.35, y = -0.05 with r_max 0.4
        (20, 24, 0.0, 0.5, 0.35, 0.4, Some(0.003_553_390_593_273_808_6)),
    ];
    for (row, col, v, dt, r_min, r_max, expect) in table {
        let p = params(dt, r_min, r_max);
        let got = library_h(row, col, v, &p);
        let reference = reference_h(row, col, v, &p);
        match (got, expect, reference) {
            (Some(g), Some(e), Some(r)) => {
                assert!((g - e).abs() <= 1e-9, "cell ({row},{col}) v {v}: {g} vs hand {e}");
                assert!((g - r).abs() <= 1e-9, "cell ({row},{col}) v {v}: {g} vs reference {r}");
            }
            (None, None, None) => {
                let field = evaluate_h(&single_cell(row, col), Action::new(v, 0.0), &p);
                assert_eq!(field.h[row * GRID + col], r_max, "out-of-range cells read as free");
            }
            other => panic!("cell ({row},{col}) v {v}: range disagreement {other:?}"),
        }
    }
}

#[test]
fn empty_map_has_no_barrier_cells() {
    let p = CbfParams::default();
    let field = evaluate_h(&Costmap::empty(&CostmapParams::default()), Action::new(0.7, 0.1), &p);
    assert!(field.min_h().is_none());
    assert!(field.h.iter().all(|&h| h == p.r_max));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// h strictly decreases as the approach speed toward the cell grows.
    /// r_max is large enough that the cap never binds.
    #[test]
    fn h_decreases_with_approach_speed(
        row in 0usize..GRID,
        col in 0usize..GRID,
        v1 in -1.0f64..1.0,
        v2 in -1.0f64..1.0,
        delta_t in 0.05f64..1.5,
        r_min in 0.0f64..0.6,
    ) {
        let (x, y) = center(row, col);
        prop_assume!(x.abs() > 1e-9);
        let p = params(delta_t, r_min, 100.0);
        let r = (x * x + y * y).sqrt();
        let (u1, u2) = (v1 * x / r, v2 * x / r);
        prop_assume!((u1 - u2).abs() > 1e-9);
        let h1 = library_h(row, col, v1, &p).unwrap();
        let h2 = library_h(row, col, v2, &p).unwrap();
        if u1 < u2 {
            prop_assert!(h1 > h2, "approach {u1} -> h {h1}, approach {u2} -> h {h2}");
        } else {
            prop_assert!(h2 > h1, "approach {u2} -> h {h2}, approach {u1} -> h {h1}");
        }
    }
}
