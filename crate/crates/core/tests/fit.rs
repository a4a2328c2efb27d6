use hybrid_htf::fit::{fit_objective, fit_parameters, FitContext, DEFAULT_MAX_ITERATIONS};
use hybrid_htf::hss::{theoretical_htf, uniform_grid, HarmonicTransferSet};
use hybrid_htf::model::SwitchedLinearization;

const DUTY: f64 = 0.5125;
const T_HAT: f64 = 0.498;

// A moderate truncation keeps the many objective evaluations cheap.
fn ctx() -> FitContext {
    FitContext {
        m: 1.0,
        duty: DUTY,
        t_hat: T_HAT,
        period: 1.0,
        n_h: 6,
    }
}

fn target(k: f64, c: f64) -> HarmonicTransferSet {
    let lin = SwitchedLinearization::from_parts(1.0, k, c, DUTY, T_HAT, 1.0);
    theoretical_htf(&lin, 6, &uniform_grid(7.0, 60), 3).unwrap()
}

#[test]
fn recovers_parameters_of_a_theoretical_target() {
    let tgt = target(200.0, 2.0);
    assert!(fit_objective(200.0, 2.0, &tgt, &ctx()).unwrap() < 1e-15);
    for init in [(150.0, 1.0), (260.0, 4.0)] {
        let fit = fit_parameters(&tgt, init, &ctx(), DEFAULT_MAX_ITERATIONS).unwrap();
        assert!(fit.converged, "{init:?}: {fit:?}");
        assert!((fit.k_hat / 200.0 - 1.0).abs() < 1e-3, "{init:?}: k_hat = {}", fit.k_hat);
        assert!((fit.c_hat / 2.0 - 1.0).abs() < 1e-3, "{init:?}: c_hat = {}", fit.c_hat);
    }
}

#[test]
fn history_is_monotone() {
    let tgt = target(180.0, 1.5);
    let fit = fit_parameters(&tgt, (150.0, 1.0), &ctx(), DEFAULT_MAX_ITERATIONS).unwrap();
    assert_eq!(fit.history.len(), fit.iterations);
    for w in fit.history.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert_eq!(*fit.history.last().unwrap(), fit.objective);
}

#[test]
fn optimum_beats_every_neighbouring_probe() {
    // A target the model cannot match exactly: theory with a perturbed
    // switching phase.
    let lin = SwitchedLinearization::from_parts(1.0, 205.0, 2.5, DUTY, T_HAT + 0.03, 1.0);
    let tgt = theoretical_htf(&lin, 6, &uniform_grid(7.0, 60), 3).unwrap();
    let fit = fit_parameters(&tgt, (150.0, 1.0), &ctx(), DEFAULT_MAX_ITERATIONS).unwrap();
    assert!(fit.converged);
    assert!(fit.objective > 0.0);
    for (dk, dc) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
        let k = fit.k_hat * (1.0 + 0.01 * dk as f64);
        let c = fit.c_hat * (1.0 + 0.01 * dc as f64);
        let probe = fit_objective(k, c, &tgt, &ctx()).unwrap();
        assert!(probe >= fit.objective, "({dk}, {dc}): {probe:e} < {:e}", fit.objective);
    }
}

#[test]
fn objective_has_a_single_basin_on_a_coarse_grid() {
    let tgt = target(200.0, 2.0);
    let ks: Vec<f64> = (0..21).map(|i| 150.0 + 5.0 * i as f64).collect();
    let cs: Vec<f64> = (0..21).map(|j| 0.5 + 0.175 * j as f64).collect();
    let values: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| cs.iter().map(|&c| fit_objective(k, c, &tgt, &ctx()).unwrap()).collect())
        .collect();
    let mut minima = Vec::new();
    for i in 0..21 {
        for j in 0..21 {
            let v = values[i][j];
            let lower_neighbour = (-1i32..=1).any(|di| {
                (-1i32..=1).any(|dj| {
                    let (a, b) = (i as i32 + di, j as i32 + dj);
                    (di, dj) != (0, 0) && (0..21).contains(&a) && (0..21).contains(&b) && values[a as usize][b as usize] < v
                })
            });
            if !lower_neighbour {
                minima.push((ks[i], cs[j]));
            }
        }
    }
    assert_eq!(minima.len(), 1, "{minima:?}");
    let (k, c) = minima[0];
    assert!((k - 200.0).abs() <= 5.0 && (c - 2.0).abs() <= 0.175, "{minima:?}");
}

#[test]
fn infeasible_parameters_are_infinite() {
    let tgt = target(200.0, 2.0);
    assert_eq!(fit_objective(-1.0, 2.0, &tgt, &ctx()).unwrap(), f64::INFINITY);
    assert_eq!(fit_objective(200.0, -0.1, &tgt, &ctx()).unwrap(), f64::INFINITY);
    assert!(fit_objective(200.0, 0.0, &tgt, &ctx()).unwrap().is_finite());
    assert!(fit_parameters(&tgt, (0.0, 1.0), &ctx(), 10).is_err());
}

#[test]
fn target_without_side_harmonics_is_rejected() {
    let tgt = target(200.0, 2.0).restrict([0]);
    assert!(fit_objective(200.0, 2.0, &tgt, &ctx()).is_err());
}
