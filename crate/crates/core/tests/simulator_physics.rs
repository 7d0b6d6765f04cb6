use std::sync::OnceLock;

use reactor_grid::dataset::Dataset;
use reactor_grid::domain::{Grid, ReactorParams, States};
use reactor_grid::simulator::*;

struct Cycle {
    sol: FineSolution,
    coarse: States,
}

fn canonical() -> &'static Cycle {
    static CELL: OnceLock<Cycle> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ReactorParams::canonical();
        let g = Grid::synthetic(&p);
        let sol = simulate_cycle(&g, &p, &Scenario::training(1)).unwrap();
        let coarse = downsample(&sol, g.n_t, g.n_z).unwrap();
        Cycle { sol, coarse }
    })
}

#[test]
fn activity_starts_fresh_and_never_recovers() {
    let c = canonical();
    for th in [&c.sol.theta, &c.coarse.theta] {
        for z in 0..th.n_z {
            assert_eq!(th.get(0, z), 1.0);
            let s = th.series(z);
            assert!(s.windows(2).all(|w| w[1] <= w[0]), "level {z}");
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn concentrations_stay_non_negative() {
    let c = canonical();
    assert!(c.sol.xa.values.iter().all(|&v| v >= 0.0));
    assert!(c.sol.xp.values.iter().all(|&v| v >= 0.0));
    assert!(c.sol.cfl <= 0.8 + 1e-12);
}

#[test]
fn cycle_ends_within_the_horizon() {
    let c = canonical();
    let end = c.sol.cycle_end.expect("outlet activity should fall below the stop level");
    assert!(end > 46 && end < 93, "{end}");
}

/// Level of the steepest temperature rise between neighbouring levels.
fn front(t: &reactor_grid::domain::StateField, j: usize) -> usize {
    (0..t.n_z - 1)
        .max_by(|&a, &b| {
            let da = t.get(j, a + 1) - t.get(j, a);
            let db = t.get(j, b + 1) - t.get(j, b);
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .unwrap()
}

#[test]
fn reaction_front_moves_downstream() {
    let c = canonical();
    let end = c.sol.cycle_end.unwrap();
    let fronts: Vec<usize> = (0..end).map(|j| front(&c.coarse.t, j)).collect();
    assert!(fronts.windows(2).all(|w| w[1] >= w[0]), "{fronts:?}");
    assert!(fronts[end - 1] > fronts[0] + 20, "{fronts:?}");
}

#[test]
fn zero_rates_reach_the_inlet_state() {
    let p = ReactorParams::canonical();
    let mut g = Grid::synthetic(&p);
    g.n_t = 10;
    for v in [&mut g.inlet_xa, &mut g.inlet_xp, &mut g.inlet_t, &mut g.velocity] {
        v.truncate(10);
    }
    // Dead catalyst zeroes every rate.
    g.theta0 = vec![0.0; g.n_z];
    let opts = SolverOptions {
        walk: InletWalk { step: 0.0, ..InletWalk::default() },
        ..SolverOptions::default()
    };
    let sol = simulate_cycle_with(&g, &p, &Scenario::training(3), &opts).unwrap();
    let last = sol.t.n_t - 1;
    for z in 0..sol.t.n_z {
        assert!((sol.xa.get(last, z) - g.inlet_xa[0]).abs() <= 1e-8);
        assert!((sol.xp.get(last, z) - g.inlet_xp[0]).abs() <= 1e-8);
        assert!((sol.t.get(last, z) - g.inlet_t[0]).abs() <= 1e-8);
    }
}

#[test]
fn seeded_runs_are_bit_identical() {
    let p = ReactorParams::canonical();
    let g = Grid::synthetic(&p);
    let sc = Scenario::training(1);
    let again = simulate_cycle(&g, &p, &sc).unwrap();
    assert_eq!(again, canonical().sol);
    let a = Dataset::from_solution(&again, &g, &p, &sc).unwrap();
    assert_eq!(a.to_csv().unwrap(), Dataset::from_solution(&canonical().sol, &g, &p, &sc).unwrap().to_csv().unwrap());
}

#[test]
fn test_scenarios_scale_the_training_inlets() {
    let p = ReactorParams::canonical();
    let g = Grid::synthetic(&p);
    let set = Scenario::standard_set(1, 2);
    let walk = InletWalk::default();
    let base = scenario_inlets(&g, &set[0], &walk);
    let t2 = scenario_inlets(&g, &set[2], &walk);
    let t4 = scenario_inlets(&g, &set[4], &walk);
    for j in 0..g.n_t {
        assert!((t2[j].t - 1.07 * base[j].t).abs() < 1e-12);
        assert_eq!(t2[j].xa, base[j].xa);
        assert!((t4[j].xp - 0.85 * base[j].xp).abs() < 1e-12);
        assert_eq!(t4[j].t, base[j].t);
    }
}

#[test]
fn refinement_consistency() {
    let p = ReactorParams::canonical();
    let g = Grid::synthetic(&p);
    let fine = simulate_cycle_with(
        &g,
        &p,
        &Scenario::training(1),
        &SolverOptions { refinement: 20, ..SolverOptions::default() },
    )
    .unwrap();
    let fine = downsample(&fine, g.n_t, g.n_z).unwrap();
    let base = &canonical().coarse;
    for (a, b) in [(&fine.xa, &base.xa), (&fine.xp, &base.xp), (&fine.t, &base.t), (&fine.theta, &base.theta)] {
        let diff: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum();
        let norm: f64 = b.values.iter().map(|y| y * y).sum();
        let rel = (diff / norm).sqrt();
        assert!(rel <= 0.05, "{:?}: {rel}", a.kind);
    }
}
