//! Recovery of stiffness and damping by matching theoretical HTFs to a target
//! set with a Nelder-Mead simplex.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hss::{self, HarmonicTransferSet};
use crate::model::SwitchedLinearization;

/// Harmonics compared by the objective.
pub const FIT_HARMONICS: [i32; 3] = [-1, 0, 1];
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
/// Relative simplex diameter at convergence.
pub const X_TOLERANCE: f64 = 1e-4;
/// Spread of simplex objective values at convergence.
pub const F_TOLERANCE: f64 = 1e-8;

/// Everything held fixed while fitting `(k, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitContext {
    pub m: f64,
    pub duty: f64,
    pub t_hat: f64,
    pub period: f64,
    /// Truncation order of the theoretical model.
    pub n_h: usize,
}

impl FitContext {
    pub fn from_linearization(lin: &SwitchedLinearization, m: f64, n_h: usize) -> Self {
        FitContext {
            m,
            duty: lin.duty,
            t_hat: lin.t_hat,
            period: lin.period,
            n_h,
        }
    }

    fn linearization(&self, k: f64, c: f64) -> SwitchedLinearization {
        SwitchedLinearization::from_parts(self.m, k, c, self.duty, self.t_hat, self.period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub k_hat: f64,
    pub c_hat: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective after each iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes") + "\n"
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// RMS of `|G_n^theory - G_n^target|` over `n = -1, 0, 1` and the target
/// grid. Grid points where the theory is singular are dropped with a
/// warning. Returns `+inf` outside `k > 0, c >= 0`.
pub fn fit_objective(k: f64, c: f64, target: &HarmonicTransferSet, ctx: &FitContext) -> Result<f64> {
    if !(k > 0.0) || !(c >= 0.0) || !k.is_finite() || !c.is_finite() {
        return Ok(f64::INFINITY);
    }
    for n in FIT_HARMONICS {
        if target.get(n).is_none() {
            return Err(Error::InvalidInput(format!("target lacks harmonic {n}")));
        }
    }
    let lin = ctx.linearization(k, c);
    let n_keep = 1.min(ctx.n_h);
    let mut keep: Vec<usize> = (0..target.omega_grid.len()).collect();
    let theory = loop {
        let grid: Vec<f64> = keep.iter().map(|&i| target.omega_grid[i]).collect();
        if grid.is_empty() {
            return Err(Error::NoData("every target frequency is singular".into()));
        }
        match hss::theoretical_htf(&lin, ctx.n_h, &grid, n_keep) {
            Ok(set) => break set,
            Err(Error::SingularFrequency { omega }) => {
                log::warn!("fit objective at k = {k}, c = {c}: excluding singular frequencies {omega:?}");
                keep.retain(|&i| !omega.contains(&target.omega_grid[i]));
            }
            Err(e) => return Err(e),
        }
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in FIT_HARMONICS {
        let tgt = target.get(n).expect("checked above");
        let th = theory.get(n).unwrap_or(&[]);
        for (j, &i) in keep.iter().enumerate() {
            let model = th.get(j).copied().unwrap_or_default();
            sum += (model - tgt[i]).norm_sqr();
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Derivative-free simplex minimization of [`fit_objective`] from `init`.
pub fn fit_parameters(
    target: &HarmonicTransferSet,
    init: (f64, f64),
    ctx: &FitContext,
    max_iterations: usize,
) -> Result<FitResult> {
    let (k0, c0) = init;
    if !(k0 > 0.0) || !(c0 > 0.0) || !k0.is_finite() || !c0.is_finite() {
        return Err(Error::InvalidInput(format!("initial guess must be positive, got ({k0}, {c0})")));
    }
    let f = |p: [f64; 2]| fit_objective(p[0], p[1], target, ctx);
    let mut simplex = [[k0, c0], [k0 * 1.05, c0], [k0, c0 * 1.05]];
    let mut values = [f(simplex[0])?, f(simplex[1])?, f(simplex[2])?];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        order(&mut simplex, &mut values);
        if simplex_converged(&simplex, &values) {
            converged = true;
            break;
        }
        if iterations == max_iterations {
            break;
        }
        iterations += 1;

        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let toward = |t: f64| -> [f64; 2] {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let reflected = toward(-1.0);
        let fr = f(reflected)?;
        if fr < values[0] {
            let expanded = toward(-2.0);
            let fe = f(expanded)?;
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let p = toward(-0.5);
                (p, f(p)?)
            } else {
                let p = toward(0.5);
                (p, f(p)?)
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    values[i] = f(simplex[i])?;
                }
            }
        }
        history.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    order(&mut simplex, &mut values);
    if !converged {
        log::warn!("simplex fit stopped after {iterations} iterations without converging");
    }
    Ok(FitResult {
        k_hat: simplex[0][0],
        c_hat: simplex[0][1],
        objective: values[0],
        iterations,
        converged,
        history,
    })
}

fn order(simplex: &mut [[f64; 2]; 3], values: &mut [f64; 3]) {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    *simplex = idx.map(|i| simplex[i]);
    *values = idx.map(|i| values[i]);
}

fn simplex_converged(simplex: &[[f64; 2]; 3], values: &[f64; 3]) -> bool {
    let best = simplex[0];
    let diameter = simplex[1..]
        .iter()
        .flat_map(|p| (0..2).map(move |d| (p[d] - best[d]).abs() / best[d].abs().max(1e-12)))
        .fold(0.0, f64::max);
    diameter < X_TOLERANCE && (values[2] - values[0]).abs() < F_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> FitContext {
        FitContext {
            m: 1.0,
            duty: 0.5125,
            t_hat: 0.498,
            period: 1.0,
            n_h: 6,
        }
    }

    fn target(k: f64, c: f64) -> HarmonicTransferSet {
        let lin = ctx().linearization(k, c);
        hss::theoretical_htf(&lin, 6, &hss::uniform_grid(7.0, 60), 1).unwrap()
    }

    #[test]
    fn self_match_is_zero() {
        let t = target(200.0, 2.0);
        assert!(fit_objective(200.0, 2.0, &t, &ctx()).unwrap() < 1e-15);
        assert!(fit_objective(201.0, 2.0, &t, &ctx()).unwrap() > 1e-6);
    }

    #[test]
    fn infeasible_is_infinite() {
        let t = target(200.0, 2.0);
        assert_eq!(fit_objective(-1.0, 2.0, &t, &ctx()).unwrap(), f64::INFINITY);
        assert_eq!(fit_objective(200.0, -0.1, &t, &ctx()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn missing_harmonic_rejected() {
        let t = target(200.0, 2.0).restrict([0]);
        assert!(fit_objective(200.0, 2.0, &t, &ctx()).is_err());
    }

    #[test]
    fn iteration_cap_reported() {
        let t = target(200.0, 2.0);
        let r = fit_parameters(&t, (150.0, 1.0), &ctx(), 3).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn json_fields() {
        let r = FitResult {
            k_hat: 200.0,
            c_hat: 2.0,
            objective: 0.0,
            iterations: 10,
            converged: true,
            history: vec![1.0],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        for k in ["k_hat", "c_hat", "objective", "iterations", "converged"] {
            assert!(v.get(k).is_some());
        }
    }
}
