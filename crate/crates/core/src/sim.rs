//! Fixed-step RK4 integration of the hybrid oscillator with bisection-located
//! chart switches, limit-cycle extraction and error-coordinate trajectories.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Chart, ChartPolicy, HybridModel, State};

/// Bracket width at which a switch time is considered located (s).
pub const EVENT_TOLERANCE: f64 = 1e-10;
/// Iteration cap for event bisection.
pub const EVENT_MAX_ITERATIONS: usize = 100;
/// Default absolute periodicity tolerance per state component.
pub const DEFAULT_PERIODICITY_TOLERANCE: f64 = 1e-6;
/// Default sampling interval (s).
pub const DEFAULT_DT: f64 = 1e-3;

const MAX_EVENTS_PER_STEP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub xdot: f64,
    pub u: f64,
    pub chart: Chart,
}

impl Sample {
    pub fn state(&self) -> State {
        State::new(self.x, self.xdot)
    }
}

/// A located chart transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub to: Chart,
}

/// Uniformly sampled time series of state, input and active chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub samples: Vec<Sample>,
    /// Switch instants found during integration (empty for loaded files).
    pub events: Vec<SwitchEvent>,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, samples: Vec<Sample>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("trajectory has no samples".into()));
        }
        if samples
            .iter()
            .any(|s| !(s.x.is_finite() && s.xdot.is_finite() && s.u.is_finite()))
        {
            return Err(Error::InvalidInput("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory {
            dt,
            t0,
            samples,
            events: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn positions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    pub fn inputs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.u).collect()
    }

    pub fn last_state(&self) -> State {
        self.samples[self.samples.len() - 1].state()
    }

    /// CSV with header `t,x,xdot,u,chart`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 96);
        out.push_str("t,x,xdot,u,chart\n");
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.time(i),
                s.x,
                s.xdot,
                s.u,
                s.chart.flag()
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        if header != "t,x,xdot,u,chart" {
            return Err(Error::InvalidInput(format!("unexpected trajectory header '{header}'")));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::InvalidInput(format!("line {}: expected 5 fields", lineno + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 2)))
            };
            let flag: u8 = fields[4]
                .trim()
                .parse()
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 2)))?;
            let chart = Chart::from_flag(flag)
                .ok_or_else(|| Error::InvalidInput(format!("line {}: chart must be 0 or 1", lineno + 2)))?;
            times.push(num(fields[0])?);
            samples.push(Sample {
                x: num(fields[1])?,
                xdot: num(fields[2])?,
                u: num(fields[3])?,
                chart,
            });
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("trajectory needs at least two samples".into()));
        }
        let t0 = times[0];
        let dt = (times[times.len() - 1] - t0) / (times.len() - 1) as f64;
        check_uniform(&times, t0, dt)?;
        Trajectory::new(dt, t0, samples)
    }
}

pub(crate) fn check_uniform(times: &[f64], t0: f64, dt: f64) -> Result<()> {
    let scale = dt.abs().max(1e-300);
    for (i, &t) in times.iter().enumerate() {
        if ((t - t0) - i as f64 * dt).abs() > 1e-6 * scale + 1e-12 * t.abs() {
            return Err(Error::InvalidInput(format!(
                "non-uniform sampling at sample {i} (t = {t})"
            )));
        }
    }
    Ok(())
}

#[inline]
fn rk4<F: Fn(f64) -> f64>(
    model: &HybridModel,
    chart: Chart,
    s: &State,
    t: f64,
    h: f64,
    input: &F,
) -> State {
    let half = 0.5 * h;
    let u0 = input(t);
    let uh = input(t + half);
    let u1 = input(t + h);
    let k1 = model.flow(chart, s, t, u0);
    let k2 = model.flow(chart, &(s + k1 * half), t + half, uh);
    let k3 = model.flow(chart, &(s + k2 * half), t + half, uh);
    let k4 = model.flow(chart, &(s + k3 * h), t + h, u1);
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Advances `state` from `t` by `h`, splitting the step at every chart
/// switch. Returns the new state; located switches are appended to `events`.
pub(crate) fn advance<F: Fn(f64) -> f64>(
    model: &HybridModel,
    state: State,
    t: f64,
    h: f64,
    input: &F,
    events: &mut Vec<SwitchEvent>,
) -> Result<State> {
    let switching = model.policy == ChartPolicy::Threshold;
    let mut s = state;
    let mut tt = t;
    let mut remaining = h;
    for _ in 0..MAX_EVENTS_PER_STEP {
        let chart = model.chart_for(&s);
        let cand = rk4(model, chart, &s, tt, remaining, input);
        if !(cand[0].is_finite() && cand[1].is_finite()) {
            return Err(Error::Divergence { t: tt + remaining });
        }
        if !switching || model.chart_for(&cand) == chart {
            return Ok(cand);
        }
        let (mut lo, mut hi) = (0.0, remaining);
        let mut iterations = 0;
        while hi - lo > EVENT_TOLERANCE {
            if iterations == EVENT_MAX_ITERATIONS {
                return Err(Error::EventLocalization { t: tt + hi, iterations });
            }
            let mid = 0.5 * (lo + hi);
            let sm = rk4(model, chart, &s, tt, mid, input);
            if model.chart_for(&sm) != chart {
                hi = mid;
            } else {
                lo = mid;
            }
            iterations += 1;
        }
        s = rk4(model, chart, &s, tt, hi, input);
        tt += hi;
        remaining -= hi;
        events.push(SwitchEvent {
            t: tt,
            to: model.chart_for(&s),
        });
        if remaining <= 0.0 {
            return Ok(s);
        }
    }
    Err(Error::EventLocalization {
        t: tt,
        iterations: MAX_EVENTS_PER_STEP,
    })
}

fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    let n = (duration / dt).round();
    if (n * dt - duration).abs() > 1e-9 * duration.max(1.0) || n < 1.0 {
        return Err(Error::InvalidInput(format!(
            "dt = {dt} does not divide duration = {duration}"
        )));
    }
    Ok(n as usize)
}

/// Integrates the model over `[t0, t0 + duration]` with input force `input`
/// (a function of absolute clock time). The result holds `duration / dt + 1`
/// samples on the uniform grid.
pub fn integrate<F: Fn(f64) -> f64>(
    model: &HybridModel,
    x_init: State,
    t0: f64,
    input: F,
    duration: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = step_count(duration, dt)?;
    if !(x_init[0].is_finite() && x_init[1].is_finite()) {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    let mut samples = Vec::with_capacity(n + 1);
    let mut events = Vec::new();
    let mut s = x_init;
    samples.push(Sample {
        x: s[0],
        xdot: s[1],
        u: input(t0),
        chart: model.chart_for(&s),
    });
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        s = advance(model, s, t, dt, &input, &mut events)?;
        let tn = t0 + (i + 1) as f64 * dt;
        samples.push(Sample {
            x: s[0],
            xdot: s[1],
            u: input(tn),
            chart: model.chart_for(&s),
        });
    }
    Ok(Trajectory {
        dt,
        t0,
        samples,
        events,
    })
}

/// One period of the settled orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycle {
    pub period: f64,
    pub dt: f64,
    /// Clock phase of `samples[0]`.
    pub phase0: f64,
    /// States at clock phases `phase0 + i * dt`, `i < period / dt`.
    pub samples: Vec<State>,
    /// Switches within one period, as clock phases in `[0, period)`.
    pub crossings: Vec<SwitchEvent>,
    /// Clock phase at which the damper engages.
    pub t_hat: f64,
    /// Clock phase at which the damper disengages.
    pub t_off: f64,
    /// Fraction of the period with the damper engaged.
    pub duty: f64,
    /// Max |state(t + T) - state(t)| per component.
    pub residual: [f64; 2],
}

impl LimitCycle {
    pub fn samples_per_period(&self) -> usize {
        self.samples.len()
    }

    /// Half the peak-to-peak excursion of `x`.
    pub fn amplitude(&self) -> f64 {
        let (lo, hi) = self
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[0]), hi.max(s[0])));
        0.5 * (hi - lo)
    }

    fn wrap(&self, phase: f64) -> f64 {
        phase.rem_euclid(self.period)
    }

    /// Orbit state at an arbitrary clock phase, propagated from the nearest
    /// earlier sample.
    pub fn state_at_phase(&self, model: &HybridModel, phase: f64) -> Result<State> {
        let rel = (phase - self.phase0).rem_euclid(self.period);
        let n = self.samples.len();
        let mut i = (rel / self.dt).floor() as usize;
        let mut frac = rel - i as f64 * self.dt;
        if i >= n {
            i = n - 1;
            frac = rel - i as f64 * self.dt;
        }
        if frac <= 1e-12 * self.dt {
            return Ok(self.samples[i]);
        }
        let t = self.phase0 + i as f64 * self.dt;
        let mut events = Vec::new();
        advance(model, self.samples[i], t, frac, &|_| 0.0, &mut events)
    }

    /// The same orbit resampled at clock phases `phase0 + i * dt`.
    pub fn rephased(&self, model: &HybridModel, phase0: f64) -> Result<LimitCycle> {
        let phase0 = self.wrap(phase0);
        let start = self.state_at_phase(model, phase0)?;
        let n = self.samples.len();
        let traj = integrate(model, start, phase0, |_| 0.0, n as f64 * self.dt, self.dt)?;
        let end = traj.last_state();
        let drift = [(end[0] - start[0]).abs(), (end[1] - start[1]).abs()];
        let mut out = self.clone();
        out.phase0 = phase0;
        out.samples = traj.samples[..n].iter().map(Sample::state).collect();
        out.residual = [self.residual[0].max(drift[0]), self.residual[1].max(drift[1])];
        Ok(out)
    }

    /// One period as a trajectory starting at clock time `phase0`.
    pub fn to_trajectory(&self, model: &HybridModel) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                x: s[0],
                xdot: s[1],
                u: 0.0,
                chart: model.chart_for(s),
            })
            .collect();
        Trajectory {
            dt: self.dt,
            t0: self.phase0,
            samples,
            events: Vec::new(),
        }
    }
}

/// State at rest (`xdot = 0`) on the forced response of the undamped linear
/// oscillator; the exact orbit when `c = 0`.
pub fn rest_start(model: &HybridModel) -> State {
    let p = &model.params;
    let w = 2.0 * std::f64::consts::PI * p.forcing_freq;
    let denom = p.k - p.m * w * w;
    let offset = if denom.abs() > 1e-9 * p.k {
        p.forcing_amplitude / denom
    } else {
        0.0
    };
    State::new(p.rest_position() + offset, 0.0)
}

/// Integrates `n_cycles` forcing periods from rest without input and returns
/// the last one as the numerical limit cycle.
pub fn settle_limit_cycle(
    model: &HybridModel,
    n_cycles: usize,
    dt: f64,
    tolerance: f64,
) -> Result<LimitCycle> {
    settle_limit_cycle_from(model, rest_start(model), n_cycles, dt, tolerance)
}

/// As [`settle_limit_cycle`], starting from `x_init` at clock time 0.
pub fn settle_limit_cycle_from(
    model: &HybridModel,
    x_init: State,
    n_cycles: usize,
    dt: f64,
    tolerance: f64,
) -> Result<LimitCycle> {
    if n_cycles < 2 {
        return Err(Error::InvalidInput(format!("n_cycles must be at least 2, got {n_cycles}")));
    }
    let period = model.params.period();
    let n = step_count(period, dt)?;
    let traj = integrate(model, x_init, 0.0, |_| 0.0, n_cycles as f64 * period, dt)?;
    let last = (n_cycles - 1) * n;
    let prev = (n_cycles - 2) * n;
    let mut residual = [0.0f64; 2];
    for i in 0..=n {
        let a = traj.samples[last + i].state();
        let b = traj.samples[prev + i].state();
        residual[0] = residual[0].max((a[0] - b[0]).abs());
        residual[1] = residual[1].max((a[1] - b[1]).abs());
    }
    if residual[0] > tolerance || residual[1] > tolerance || residual.iter().any(|r| !r.is_finite()) {
        return Err(Error::NotSettled {
            x: residual[0],
            xdot: residual[1],
            tolerance,
        });
    }
    let t_start = last as f64 * dt;
    let t_end = t_start + period;
    let crossings: Vec<SwitchEvent> = traj
        .events
        .iter()
        .filter(|e| e.t >= t_start && e.t < t_end)
        .map(|e| SwitchEvent {
            t: (e.t - t_start).rem_euclid(period),
            to: e.to,
        })
        .collect();
    let (t_hat, t_off, duty) = switching_geometry(model, &crossings, period)?;
    Ok(LimitCycle {
        period,
        dt,
        phase0: 0.0,
        samples: traj.samples[last..last + n].iter().map(Sample::state).collect(),
        crossings,
        t_hat,
        t_off,
        duty,
        residual,
    })
}

fn switching_geometry(
    model: &HybridModel,
    crossings: &[SwitchEvent],
    period: f64,
) -> Result<(f64, f64, f64)> {
    match model.policy {
        ChartPolicy::Fixed(Chart::Lossy) => Ok((0.0, 0.0, 1.0)),
        ChartPolicy::Fixed(Chart::Lossless) => Ok((0.0, 0.0, 0.0)),
        ChartPolicy::Threshold => {
            let on: Vec<_> = crossings.iter().filter(|e| e.to == Chart::Lossy).collect();
            let off: Vec<_> = crossings.iter().filter(|e| e.to == Chart::Lossless).collect();
            if crossings.len() != 2 || on.len() != 1 || off.len() != 1 {
                return Err(Error::AmbiguousSwitching {
                    crossings: crossings.len(),
                });
            }
            let t_hat = on[0].t;
            let t_off = off[0].t;
            let duty = (t_off - t_hat).rem_euclid(period) / period;
            Ok((t_hat, t_off, duty))
        }
    }
}

/// Deviation of `traj` from the periodic orbit, `xi(t) = q(t) - qbar(t mod T)`.
pub fn error_trajectory(traj: &Trajectory, cycle: &LimitCycle) -> Result<Trajectory> {
    if (traj.dt - cycle.dt).abs() > 1e-12 * cycle.dt {
        return Err(Error::ResamplingRequired(format!(
            "trajectory dt {} differs from cycle dt {}",
            traj.dt, cycle.dt
        )));
    }
    let n = cycle.samples.len();
    let offset = (traj.t0 - cycle.phase0).rem_euclid(cycle.period) / cycle.dt;
    let shift = offset.round();
    if (offset - shift).abs() > 1e-6 && (offset - shift).abs() < n as f64 - 1e-6 {
        return Err(Error::ResamplingRequired(format!(
            "trajectory start {} is not on the cycle's phase grid (offset {offset} samples)",
            traj.t0
        )));
    }
    let shift = shift as usize % n;
    let samples = traj
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let bar = cycle.samples[(shift + i) % n];
            Sample {
                x: s.x - bar[0],
                xdot: s.xdot - bar[1],
                u: s.u,
                chart: s.chart,
            }
        })
        .collect();
    Ok(Trajectory {
        dt: traj.dt,
        t0: traj.t0,
        samples,
        events: traj.events.clone(),
    })
}
