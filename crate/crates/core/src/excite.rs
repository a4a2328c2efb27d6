//! Phase-shifted chirp excitation and experiment records in error coordinates.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HybridModel, State};
use crate::sim::{self, LimitCycle, Trajectory};

/// Shooting stops once the periodicity defect falls below this.
const SHOOTING_TOLERANCE: f64 = 1e-13;
const SHOOTING_MAX_ITERATIONS: usize = 8;
const SHOOTING_STEP: f64 = 1e-7;
/// Records whose error exceeds this fraction of the cycle amplitude are
/// flagged as leaving the linear regime.
pub const PERTURBATION_WARNING_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpPlan {
    /// Force amplitude.
    pub amplitude: f64,
    /// Start frequency (Hz).
    pub f_lo: f64,
    /// End frequency (Hz).
    pub f_hi: f64,
    /// Length of each record (s).
    pub segment_duration: f64,
    pub n_segments: usize,
    /// Clock period of the system (s).
    pub period: f64,
    pub dt: f64,
}

impl Default for ChirpPlan {
    fn default() -> Self {
        ChirpPlan {
            amplitude: 0.004,
            f_lo: 0.0,
            f_hi: 7.0,
            segment_duration: 30.0,
            n_segments: 9,
            period: 1.0,
            dt: sim::DEFAULT_DT,
        }
    }
}

impl ChirpPlan {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.amplitude, self.f_lo, self.f_hi, self.segment_duration, self.period, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("chirp plan values must be finite".into()));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidInput(format!(
                "chirp amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if !(0.0 <= self.f_lo && self.f_lo < self.f_hi) {
            return Err(Error::InvalidInput(format!(
                "chirp band must satisfy 0 <= f_lo < f_hi, got [{}, {}]",
                self.f_lo, self.f_hi
            )));
        }
        if !(self.dt > 0.0) || !(self.segment_duration > 0.0) || !(self.period > 0.0) {
            return Err(Error::InvalidInput(
                "dt, segment duration and period must be positive".into(),
            ));
        }
        if self.n_segments == 0 {
            return Err(Error::InvalidInput("n_segments must be at least 1".into()));
        }
        let nyquist = 0.5 / self.dt;
        if self.f_hi >= nyquist {
            return Err(Error::Aliasing {
                f_hi: self.f_hi,
                nyquist,
            });
        }
        self.samples_per_record()?;
        Ok(())
    }

    pub fn samples_per_record(&self) -> Result<usize> {
        let n = (self.segment_duration / self.dt).round();
        if n < 1.0 || (n * self.dt - self.segment_duration).abs() > 1e-9 * self.segment_duration.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "dt = {} does not divide the segment duration {}",
                self.dt, self.segment_duration
            )));
        }
        Ok(n as usize)
    }

    /// Clock phase at which record `k` starts.
    pub fn clock_offset(&self, k: usize) -> f64 {
        k as f64 * self.period / self.n_segments as f64
    }

    pub fn clock_offsets(&self) -> Vec<f64> {
        (0..self.n_segments).map(|k| self.clock_offset(k)).collect()
    }

    /// Chirp value at local time `tau` since the record start.
    #[inline]
    pub fn chirp(&self, tau: f64) -> f64 {
        let sweep = PI * (self.f_hi - self.f_lo) / self.segment_duration;
        self.amplitude * (sweep * tau * tau + 2.0 * PI * self.f_lo * tau).sin()
    }

    /// Instantaneous frequency (Hz) at local time `tau`.
    pub fn instantaneous_freq(&self, tau: f64) -> f64 {
        self.f_lo + (self.f_hi - self.f_lo) * tau / self.segment_duration
    }
}

/// Samples of chirp `phase_index` on its local grid `i * dt`,
/// `i < segment_duration / dt`. The record begins at clock phase
/// `phase_index * T / n_segments`.
pub fn gen_chirp(plan: &ChirpPlan, phase_index: usize) -> Result<Vec<f64>> {
    plan.validate()?;
    if phase_index >= plan.n_segments {
        return Err(Error::InvalidInput(format!(
            "phase index {phase_index} out of range for {} segments",
            plan.n_segments
        )));
    }
    let n = plan.samples_per_record()?;
    Ok((0..n).map(|i| plan.chirp(i as f64 * plan.dt)).collect())
}

/// How each record's initial condition is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStart {
    /// Start on the nominal orbit; the record contains the start-up transient.
    OnCycle,
    /// Start on the orbit displaced so the forced response is periodic over
    /// the record, making its DFT free of transient leakage.
    #[default]
    SteadyState,
}

/// One experiment in error coordinates: `x`, `xdot` of `error` hold
/// `xi_1`, `xi_2`, and `u` holds the chirp.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub index: usize,
    /// Clock phase of the first sample (s).
    pub clock_offset: f64,
    pub error: Trajectory,
    /// `max |xi_1|`.
    pub max_deviation: f64,
    /// The deviation exceeds the linear-regime warning ratio.
    pub large_perturbation: bool,
    /// Remaining periodicity defect of the initial condition search.
    pub shooting_residual: f64,
}

impl ExperimentRecord {
    pub fn input(&self) -> Vec<f64> {
        self.error.inputs()
    }

    pub fn output(&self) -> Vec<f64> {
        self.error.positions()
    }
}

fn forced_run(model: &HybridModel, plan: &ChirpPlan, start: State, offset: f64) -> Result<Trajectory> {
    let p = *plan;
    sim::integrate(
        model,
        start,
        offset,
        move |t| p.chirp(t - offset),
        plan.segment_duration,
        plan.dt,
    )
}

/// Newton iteration for `z` such that the forced run from `base + z` ends at
/// `base + z` after the record length.
fn steady_state_start(
    model: &HybridModel,
    plan: &ChirpPlan,
    base: State,
    offset: f64,
) -> Result<(State, f64)> {
    let defect = |z: &State| -> Result<State> {
        let run = forced_run(model, plan, base + z, offset)?;
        Ok(run.last_state() - base - z)
    };
    let mut z = State::zeros();
    let mut f = defect(&z)?;
    for _ in 0..SHOOTING_MAX_ITERATIONS {
        if f.amax() < SHOOTING_TOLERANCE {
            break;
        }
        let mut jac = nalgebra::Matrix2::zeros();
        for j in 0..2 {
            let mut zp = z;
            zp[j] += SHOOTING_STEP;
            let fp = defect(&zp)?;
            jac.set_column(j, &((fp - f) / SHOOTING_STEP));
        }
        let Some(step) = jac.lu().solve(&(-f)) else {
            break;
        };
        let z_next = z + step;
        let f_next = defect(&z_next)?;
        if f_next.amax() >= f.amax() {
            break;
        }
        z = z_next;
        f = f_next;
    }
    Ok((z, f.amax()))
}

fn run_one(
    model: &HybridModel,
    cycle: &LimitCycle,
    plan: &ChirpPlan,
    index: usize,
    start: RecordStart,
) -> Result<ExperimentRecord> {
    let n = plan.samples_per_record()?;
    let offset = plan.clock_offset(index);
    let local = cycle.rephased(model, offset)?;
    let base = local.samples[0];
    let (z, shooting_residual) = match start {
        RecordStart::OnCycle => (State::zeros(), 0.0),
        RecordStart::SteadyState => steady_state_start(model, plan, base, offset)?,
    };
    let mut run = forced_run(model, plan, base + z, offset)?;
    run.samples.truncate(n);
    let error = sim::error_trajectory(&run, &local)?;
    let max_deviation = error.samples.iter().map(|s| s.x.abs()).fold(0.0, f64::max);
    let amplitude = cycle.amplitude();
    let large_perturbation = max_deviation > PERTURBATION_WARNING_RATIO * amplitude;
    if large_perturbation {
        log::warn!(
            "record {index}: max |xi_1| = {max_deviation:.3e} exceeds {:.0}% of the cycle amplitude {amplitude:.3e}; linearization suspect",
            100.0 * PERTURBATION_WARNING_RATIO
        );
    }
    Ok(ExperimentRecord {
        index,
        clock_offset: offset,
        error,
        max_deviation,
        large_perturbation,
        shooting_residual,
    })
}

/// Simulates every phase-shifted chirp and returns the records ordered by
/// phase index.
pub fn run_experiments(
    model: &HybridModel,
    cycle: &LimitCycle,
    plan: &ChirpPlan,
    start: RecordStart,
) -> Result<Vec<ExperimentRecord>> {
    plan.validate()?;
    if (plan.dt - cycle.dt).abs() > 1e-12 * cycle.dt {
        return Err(Error::ResamplingRequired(format!(
            "plan dt {} differs from cycle dt {}",
            plan.dt, cycle.dt
        )));
    }
    if (plan.period - cycle.period).abs() > 1e-12 * cycle.period {
        return Err(Error::InvalidInput(format!(
            "plan period {} differs from the cycle period {}",
            plan.period, cycle.period
        )));
    }
    if start == RecordStart::SteadyState {
        let cycles = plan.segment_duration / plan.period;
        if (cycles - cycles.round()).abs() > 1e-9 * cycles.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "steady-state records need a whole number of periods, got {cycles}"
            )));
        }
    }
    (0..plan.n_segments)
        .into_par_iter()
        .map(|k| run_one(model, cycle, plan, k, start))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanFile {
    plan: ChirpPlan,
    clock_offsets: Vec<f64>,
    record_start: RecordStart,
}

/// Writes `rec_<k>.csv` per record plus `plan.json`.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    plan: &ChirpPlan,
    start: RecordStart,
    records: &[ExperimentRecord],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in records {
        rec.error.write_csv(dir.join(format!("rec_{}.csv", rec.index)))?;
    }
    let file = PlanFile {
        plan: *plan,
        clock_offsets: records.iter().map(|r| r.clock_offset).collect(),
        record_start: start,
    };
    let path = dir.join("plan.json");
    let text = serde_json::to_string_pretty(&file).expect("plan serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<(ChirpPlan, Vec<ExperimentRecord>)> {
    let dir = dir.as_ref();
    let path = dir.join("plan.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    file.plan.validate()?;
    let records = file
        .clock_offsets
        .iter()
        .enumerate()
        .map(|(k, &offset)| {
            let error = Trajectory::read_csv(dir.join(format!("rec_{k}.csv")))?;
            let max_deviation = error.samples.iter().map(|s| s.x.abs()).fold(0.0, f64::max);
            Ok(ExperimentRecord {
                index: k,
                clock_offset: offset,
                error,
                max_deviation,
                large_perturbation: false,
                shooting_residual: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((file.plan, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_chirp_formula() {
        let plan = ChirpPlan::default();
        let u = gen_chirp(&plan, 0).unwrap();
        assert_eq!(u.len(), 30_000);
        for i in [0usize, 1, 777, 12_345, 29_999] {
            let t = i as f64 * 1e-3;
            assert_relative_eq!(u[i], 0.004 * (7.0 * PI * t * t / 30.0).sin(), epsilon = 1e-15);
        }
        assert_eq!(plan.instantaneous_freq(0.0), 0.0);
        assert_relative_eq!(plan.instantaneous_freq(30.0), 7.0);
    }

    #[test]
    fn offsets_are_uniform() {
        let plan = ChirpPlan::default();
        let offs = plan.clock_offsets();
        assert_eq!(offs.len(), 9);
        for (k, o) in offs.iter().enumerate() {
            assert_relative_eq!(*o, k as f64 / 9.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn coarse_sampling_aliases() {
        let plan = ChirpPlan {
            dt: 0.1,
            ..ChirpPlan::default()
        };
        assert!(matches!(gen_chirp(&plan, 0), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn phase_index_checked() {
        assert!(gen_chirp(&ChirpPlan::default(), 9).is_err());
    }
}
