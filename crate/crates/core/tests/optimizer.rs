//! Design-problem solver checked against grids, re-evaluation and itself.

use ncdr_core::design::{grid_search, Design, DesignProblem, GridSpec, Normalization, ParamBound, ParamId};
use ncdr_core::fixtures;
use ncdr_core::optimizer::{run_starts, solve, solve_from, SolverOptions};

fn k4_problem() -> DesignProblem {
    let (m, a, e) = fixtures::five_mass_nominal();
    let params = vec![ParamBound {
        param: ParamId::Stiffness(4),
        lower: 500.0,
        upper: 1500.0,
    }];
    DesignProblem::new(Design::new(m, a, e), params, 0.5, -0.2, 0.01, vec![], Normalization::Nominal).unwrap()
}

#[test]
fn one_dimensional_solve_matches_dense_grid() {
    let p = k4_problem();
    let step = 4.0;
    let grid = grid_search(&p, &GridSpec { steps: vec![step] }).unwrap();
    let r = solve(&p, 3, 11, &SolverOptions::default()).unwrap();
    let k4 = r.best.theta[0];
    assert!(r.best.is_feasible());
    assert!(r.best.objective.j <= grid.best.objective.j + 1e-9, "{} vs {}", r.best.objective.j, grid.best.objective.j);
    assert!((k4 - grid.best.theta[0]).abs() <= step, "{k4} vs {}", grid.best.theta[0]);
}

#[test]
fn restart_from_solution_is_stationary() {
    let p = k4_problem();
    let opts = SolverOptions::default();
    let first = solve(&p, 1, 5, &opts).unwrap();
    let again = solve_from(&p, &[first.best.theta.clone()], &opts).unwrap();
    assert!(again.best.objective.j <= first.best.objective.j);
    assert!(first.best.objective.j - again.best.objective.j < 1e-6);
    assert!((again.best.theta[0] - first.best.theta[0]).abs() < 1e-3 * first.best.theta[0]);
}

#[test]
fn result_reproduces_on_fresh_evaluation() {
    let p = fixtures::five_mass_problem();
    let opts = SolverOptions {
        max_iter: 15,
        ..SolverOptions::default()
    };
    let r = solve(&p, 2, 3, &opts).unwrap();
    let fresh = p.evaluate(&r.best.theta).unwrap();
    assert!((fresh.objective.j - r.best.objective.j).abs() <= 1e-8);
    assert!((fresh.alpha - r.best.alpha).abs() <= 1e-8);
    for (a, b) in fresh.slacks.linear.iter().zip(&r.best.slacks.linear) {
        assert!((a - b).abs() <= 1e-8);
    }
    assert!((fresh.slacks.w_a - r.best.slacks.w_a).abs() <= 1e-8);
    assert!(r.best.slacks.max() <= 1e-8);
}

#[test]
fn iterates_never_leave_the_box() {
    let p = fixtures::five_mass_problem();
    let opts = SolverOptions {
        max_iter: 25,
        ..SolverOptions::default()
    };
    let reports = run_starts(&p, &ncdr_core::optimizer::random_starts(&p, 3, 9), &opts).unwrap();
    let (lo, hi) = (p.lower(), p.upper());
    for r in &reports {
        for e in r.best.iter().chain(r.last.iter()) {
            for (j, v) in e.theta.iter().enumerate() {
                assert!(lo[j] <= *v && *v <= hi[j], "start {} theta[{j}] = {v}", r.index);
            }
        }
    }
}

#[test]
fn identical_seed_gives_identical_result() {
    let p = fixtures::five_mass_problem();
    let opts = SolverOptions {
        max_iter: 10,
        ..SolverOptions::default()
    };
    let a = serde_json::to_string(&solve(&p, 3, 42, &opts).unwrap()).unwrap();
    let b = serde_json::to_string(&solve(&p, 3, 42, &opts).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn experimental_grid_minimizer() {
    let p = fixtures::experimental_problem();
    let g = grid_search(
        &p,
        &GridSpec {
            steps: vec![fixtures::EXPERIMENTAL_GRID_STEP; 2],
        },
    )
    .unwrap();
    assert_eq!(g.points.len(), 17 * 21);
    let best = &g.best.theta;
    // the table reports (0.520, 0.705); the fraction row caps m_a at 0.5408 on m3 = 0.705
    assert!((best[1] - 0.705).abs() < 1e-12, "{best:?}");
    assert!(g.best.slacks.linear.iter().all(|s| *s <= 0.0));
    let at_table = p.evaluate(&[0.52, 0.705]).unwrap();
    assert!(at_table.is_feasible());
    assert!(g.best.objective.j <= at_table.objective.j);
}
