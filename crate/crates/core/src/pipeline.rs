//! End-to-end stages driven by a [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::estimate::{self, EstimateResult, EstimationProblem};
use crate::excite::{self, ExperimentRecord};
use crate::fit::{self, FitContext, FitResult};
use crate::hss::{self, HarmonicTransferSet};
use crate::model::{self, HybridModel, SwitchedLinearization};
use crate::sim::{self, LimitCycle};

/// Settled orbit and its linearization.
#[derive(Debug, Clone)]
pub struct Nominal {
    pub model: HybridModel,
    pub cycle: LimitCycle,
    pub lin: SwitchedLinearization,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleSummary {
    pub period: f64,
    pub t_hat: f64,
    pub t_off: f64,
    pub duty: f64,
    pub residual: [f64; 2],
    pub crossings: usize,
    pub amplitude: f64,
}

impl CycleSummary {
    pub fn of(cycle: &LimitCycle) -> Self {
        CycleSummary {
            period: cycle.period,
            t_hat: cycle.t_hat,
            t_off: cycle.t_off,
            duty: cycle.duty,
            residual: cycle.residual,
            crossings: cycle.crossings.len(),
            amplitude: cycle.amplitude(),
        }
    }
}

pub fn settle(cfg: &RunConfig) -> Result<Nominal> {
    let model = cfg.hybrid_model()?;
    let cycle = sim::settle_limit_cycle(&model, cfg.sim.n_cycles, cfg.sim.dt, cfg.sim.periodicity_tolerance)?;
    let lin = model::linearize(&model, &cycle)?;
    Ok(Nominal { model, cycle, lin })
}

pub fn experiments(cfg: &RunConfig, nominal: &Nominal) -> Result<Vec<ExperimentRecord>> {
    excite::run_experiments(&nominal.model, &nominal.cycle, &cfg.chirp_plan(), cfg.chirp.record_start)
}

pub fn estimate(cfg: &RunConfig, records: &[ExperimentRecord]) -> Result<EstimateResult> {
    let spectra = estimate::spectra_of_records(records)?;
    let problem = EstimationProblem::new(
        spectra,
        cfg.estimate.n_harmonics,
        2.0 * std::f64::consts::PI / cfg.model.period(),
        cfg.estimate.alpha,
        cfg.estimate.band_rad_s(),
    )?;
    estimate::estimate_htf(&problem)
}

pub fn fit(cfg: &RunConfig, nominal: &Nominal, target: &HarmonicTransferSet) -> Result<FitResult> {
    let ctx = FitContext::from_linearization(&nominal.lin, cfg.model.m, cfg.fit.n_h);
    fit::fit_parameters(
        target,
        (cfg.fit.init_k, cfg.fit.init_c),
        &ctx,
        cfg.fit.max_iterations,
    )
}

/// Outputs of the identification pipeline.
#[derive(Debug, Clone)]
pub struct Identification {
    pub nominal: Nominal,
    pub records: Vec<ExperimentRecord>,
    pub estimate: EstimateResult,
    /// Theory at the configured order on the estimation grid.
    pub theory: HarmonicTransferSet,
    pub fit: FitResult,
}

pub fn identify(cfg: &RunConfig) -> Result<Identification> {
    let nominal = settle(cfg)?;
    let records = experiments(cfg, &nominal)?;
    identify_records(cfg, nominal, records)
}

/// Identification from already simulated (or loaded) records.
pub fn identify_records(
    cfg: &RunConfig,
    nominal: Nominal,
    records: Vec<ExperimentRecord>,
) -> Result<Identification> {
    let estimate = estimate(cfg, &records)?;
    let keep = cfg.estimate.n_harmonics.min(cfg.theory.n_h);
    let theory = hss::theoretical_htf(&nominal.lin, cfg.theory.n_h, &estimate.htf.omega_grid, keep)?;
    let fit = fit(cfg, &nominal, &estimate.htf)?;
    Ok(Identification {
        nominal,
        records,
        estimate,
        theory,
        fit,
    })
}

/// Magnitude and phase mismatch of `candidate` against `reference` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointDiff {
    pub omega: f64,
    pub n: i32,
    pub candidate_mag: f64,
    pub reference_mag: f64,
    /// `| |G_c| - |G_r| | / |G_r|`.
    pub rel_mag: f64,
    /// Absolute phase difference (deg), wrapped to `[0, 180]`.
    pub phase_deg: f64,
}

pub fn point_diff(omega: f64, n: i32, candidate: Complex64, reference: Complex64) -> PointDiff {
    let (cm, rm) = (candidate.norm(), reference.norm());
    let phase = if cm > 0.0 && rm > 0.0 {
        (candidate / reference).arg().to_degrees().abs()
    } else {
        0.0
    };
    PointDiff {
        omega,
        n,
        candidate_mag: cm,
        reference_mag: rm,
        rel_mag: if rm > 0.0 { (cm - rm).abs() / rm } else { cm },
        phase_deg: phase,
    }
}

/// Pointwise differences over harmonics present in both sets. Grids must
/// agree.
pub fn diff_sets(candidate: &HarmonicTransferSet, reference: &HarmonicTransferSet) -> Result<Vec<PointDiff>> {
    same_grid(candidate, reference)?;
    let mut out = Vec::new();
    for (n, cv) in &candidate.harmonics {
        let Some(rv) = reference.get(*n) else { continue };
        for ((w, c), r) in candidate.omega_grid.iter().zip(cv).zip(rv) {
            out.push(point_diff(*w, *n, *c, *r));
        }
    }
    Ok(out)
}

fn same_grid(a: &HarmonicTransferSet, b: &HarmonicTransferSet) -> Result<()> {
    let ok = a.omega_grid.len() == b.omega_grid.len()
        && a
            .omega_grid
            .iter()
            .zip(&b.omega_grid)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
    if ok {
        Ok(())
    } else {
        Err(crate::Error::InvalidInput("HTF sets are on different frequency grids".into()))
    }
}

pub fn diff_table_csv(diffs: &[PointDiff]) -> String {
    let mut out = String::from("omega_rad_s,n,candidate_mag,reference_mag,rel_mag_err,phase_err_deg\n");
    for d in diffs {
        let _ = writeln!(
            out,
            "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            d.omega, d.n, d.candidate_mag, d.reference_mag, d.rel_mag, d.phase_deg
        );
    }
    out
}

/// Worst relative-magnitude and phase errors per harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicSummary {
    pub max_rel_mag: f64,
    pub max_phase_deg: f64,
    pub points: usize,
    pub failing: usize,
}

pub fn summarize(
    diffs: &[PointDiff],
    rel_tol: f64,
    phase_tol_deg: f64,
    include: impl Fn(&PointDiff) -> bool,
) -> BTreeMap<i32, HarmonicSummary> {
    let mut out: BTreeMap<i32, HarmonicSummary> = BTreeMap::new();
    for d in diffs.iter().filter(|d| include(d)) {
        let s = out.entry(d.n).or_insert(HarmonicSummary {
            max_rel_mag: 0.0,
            max_phase_deg: 0.0,
            points: 0,
            failing: 0,
        });
        s.max_rel_mag = s.max_rel_mag.max(d.rel_mag);
        s.max_phase_deg = s.max_phase_deg.max(d.phase_deg);
        s.points += 1;
        if d.rel_mag > rel_tol || d.phase_deg > phase_tol_deg {
            s.failing += 1;
        }
    }
    out
}

/// Largest `|a_n - b_n| / max |b_n|` over the harmonics in `ns`.
pub fn max_norm_relative_diff(a: &HarmonicTransferSet, b: &HarmonicTransferSet, ns: &[i32]) -> Result<f64> {
    same_grid(a, b)?;
    let mut worst: f64 = 0.0;
    for &n in ns {
        let (Some(av), Some(bv)) = (a.get(n), b.get(n)) else { continue };
        let scale = bv.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        let d = av.iter().zip(bv).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        worst = worst.max(d / scale);
    }
    Ok(worst)
}
