//! The clock-driven hybrid spring-mass-damper and its switched linearization.
//!
//! The oscillator has two charts sharing the state `(x, xdot)`: a lossy chart
//! with the damper engaged while the mass moves upward (`xdot > 0`) and a
//! lossless chart otherwise. Transitions are identity maps, so the state is
//! continuous across every switch.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::LimitCycle;

/// Oscillator state `(x, xdot)`.
pub type State = Vector2<f64>;

/// Physical parameters. Serialized with exactly the keys
/// `m, k, c, g, x0, forcing_amplitude, forcing_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Mass (kg).
    pub m: f64,
    /// Spring stiffness (N/m).
    pub k: f64,
    /// Damping coefficient of the lossy chart (N s/m).
    pub c: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Spring rest position (m).
    pub x0: f64,
    /// Amplitude of the clock forcing `F(t) = a cos(2 pi f t)`.
    pub forcing_amplitude: f64,
    /// Forcing frequency (Hz); its inverse is the clock period.
    pub forcing_freq: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            m: 1.0,
            k: 200.0,
            c: 2.0,
            g: 9.81,
            x0: 0.2,
            forcing_amplitude: 1.0,
            forcing_freq: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m,
            self.k,
            self.c,
            self.g,
            self.x0,
            self.forcing_amplitude,
            self.forcing_freq,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model parameters must be finite".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::InvalidInput(format!("mass must be positive, got {}", self.m)));
        }
        if self.k <= 0.0 {
            return Err(Error::InvalidInput(format!("stiffness must be positive, got {}", self.k)));
        }
        if self.c < 0.0 {
            return Err(Error::InvalidInput(format!("damping must be non-negative, got {}", self.c)));
        }
        if self.forcing_freq <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "forcing frequency must be positive, got {}",
                self.forcing_freq
            )));
        }
        Ok(())
    }

    /// Clock period `1 / forcing_freq` (s).
    pub fn period(&self) -> f64 {
        1.0 / self.forcing_freq
    }

    /// Static equilibrium of the lossless chart without forcing.
    pub fn rest_position(&self) -> f64 {
        self.x0 - self.m * self.g / self.k
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: ModelParams = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        params.validate()?;
        Ok(params)
    }
}

/// One of the two smooth flows of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// Damper engaged (upward motion).
    Lossy,
    /// Damper disengaged.
    Lossless,
}

impl Chart {
    pub fn other(self) -> Chart {
        match self {
            Chart::Lossy => Chart::Lossless,
            Chart::Lossless => Chart::Lossy,
        }
    }

    /// CSV flag: 1 when the damper is on.
    pub fn flag(self) -> u8 {
        match self {
            Chart::Lossy => 1,
            Chart::Lossless => 0,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Chart> {
        match flag {
            1 => Some(Chart::Lossy),
            0 => Some(Chart::Lossless),
            _ => None,
        }
    }
}

/// How the active chart is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartPolicy {
    /// Chart follows the sign of the threshold function `xdot`.
    #[default]
    Threshold,
    /// A single chart is used for all time (no switching).
    Fixed(Chart),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridModel {
    pub params: ModelParams,
    pub policy: ChartPolicy,
}

impl HybridModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(HybridModel {
            params,
            policy: ChartPolicy::Threshold,
        })
    }

    pub fn with_policy(mut self, policy: ChartPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Threshold function whose zero crossings trigger chart transitions.
    #[inline]
    pub fn threshold(&self, state: &State) -> f64 {
        state[1]
    }

    /// Chart active at `state`. A threshold of exactly zero selects the
    /// lossless chart.
    #[inline]
    pub fn chart_for(&self, state: &State) -> Chart {
        match self.policy {
            ChartPolicy::Fixed(chart) => chart,
            ChartPolicy::Threshold => {
                if self.threshold(state) > 0.0 {
                    Chart::Lossy
                } else {
                    Chart::Lossless
                }
            }
        }
    }

    #[inline]
    pub fn forcing(&self, t: f64) -> f64 {
        self.params.forcing_amplitude * (2.0 * PI * self.params.forcing_freq * t).cos()
    }

    /// Vector field of a given chart, without input validation.
    #[inline]
    pub(crate) fn flow(&self, chart: Chart, state: &State, t: f64, u: f64) -> State {
        let p = &self.params;
        let (x, xdot) = (state[0], state[1]);
        let mut force = -p.m * p.g - p.k * (x - p.x0) + self.forcing(t) + u;
        if chart == Chart::Lossy {
            force -= p.c * xdot;
        }
        State::new(xdot, force / p.m)
    }

    /// Time derivative of the state, using the chart selected by the
    /// threshold at `state`.
    pub fn eval_chart(&self, state: &State, t: f64, u: f64) -> Result<State> {
        if !state[0].is_finite() || !state[1].is_finite() || !t.is_finite() || !u.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite arguments: state = ({}, {}), t = {t}, u = {u}",
                state[0], state[1]
            )));
        }
        Ok(self.flow(self.chart_for(state), state, t, u))
    }
}

/// Piecewise-LTI dynamics in error coordinates, with the damper switching
/// treated as a strictly time-periodic square wave.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedLinearization {
    pub a_on: Matrix2<f64>,
    pub a_off: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    /// Fraction of the period with the damper engaged.
    pub duty: f64,
    /// Clock phase (s) at which the damper engages.
    pub t_hat: f64,
    pub period: f64,
}

impl SwitchedLinearization {
    /// Linearization of a spring-damper with given `(m, k, c)` and fixed
    /// switching geometry.
    pub fn from_parts(m: f64, k: f64, c: f64, duty: f64, t_hat: f64, period: f64) -> Self {
        SwitchedLinearization {
            a_on: Matrix2::new(0.0, 1.0, -k / m, -c / m),
            a_off: Matrix2::new(0.0, 1.0, -k / m, 0.0),
            b: Vector2::new(0.0, 1.0 / m),
            c: RowVector2::new(1.0, 0.0),
            d: 0.0,
            duty,
            t_hat,
            period,
        }
    }

    /// Same switching geometry, different stiffness and damping.
    pub fn with_stiffness_damping(&self, m: f64, k: f64, c: f64) -> Self {
        Self::from_parts(m, k, c, self.duty, self.t_hat, self.period)
    }

    /// True when both charts coincide or the damper never switches.
    pub fn is_lti(&self) -> bool {
        self.a_on == self.a_off || self.duty <= 0.0 || self.duty >= 1.0
    }
}

/// Linearizes the hybrid model about a settled limit cycle. Gravity, rest
/// length and forcing cancel in error coordinates, so only `(m, k, c)` and
/// the switching geometry of the cycle enter.
pub fn linearize(model: &HybridModel, cycle: &LimitCycle) -> Result<SwitchedLinearization> {
    let p = &model.params;
    let (duty, t_hat) = match model.policy {
        ChartPolicy::Fixed(Chart::Lossy) => (1.0, 0.0),
        ChartPolicy::Fixed(Chart::Lossless) => (0.0, 0.0),
        ChartPolicy::Threshold => {
            let crossings = cycle.crossings.len();
            if crossings != 2 {
                return Err(Error::AmbiguousSwitching { crossings });
            }
            (cycle.duty, cycle.t_hat)
        }
    };
    Ok(SwitchedLinearization::from_parts(
        p.m,
        p.k,
        p.c,
        duty,
        t_hat,
        cycle.period,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper() -> HybridModel {
        HybridModel::new(ModelParams::default()).unwrap()
    }

    #[test]
    fn lossy_branch_includes_damping() {
        let d = paper().eval_chart(&State::new(0.2, 1.0), 0.0, 0.0).unwrap();
        assert_relative_eq!(d[0], 1.0);
        assert_relative_eq!(d[1], -10.81, epsilon = 1e-12);
    }

    #[test]
    fn lossless_branch_drops_damping() {
        let d = paper().eval_chart(&State::new(0.2, -1.0), 0.0, 0.0).unwrap();
        assert_relative_eq!(d[1], -8.81, epsilon = 1e-12);
    }

    #[test]
    fn lossless_equilibrium() {
        let params = ModelParams {
            forcing_amplitude: 0.0,
            ..ModelParams::default()
        };
        let model = HybridModel::new(params).unwrap();
        let s = State::new(params.rest_position(), 0.0);
        assert_eq!(model.chart_for(&s), Chart::Lossless);
        let d = model.eval_chart(&s, 0.3, 0.0).unwrap();
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn input_adds_to_force() {
        let m = HybridModel::new(ModelParams { m: 2.0, ..ModelParams::default() }).unwrap();
        let s = State::new(0.1, -0.5);
        let a = m.eval_chart(&s, 0.1, 0.0).unwrap();
        let b = m.eval_chart(&s, 0.1, 0.3).unwrap();
        assert_relative_eq!(b[1] - a[1], 0.15, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let m = paper();
        assert!(matches!(
            m.eval_chart(&State::new(f64::NAN, 0.0), 0.0, 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(m.eval_chart(&State::new(0.0, 0.0), 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn params_validation() {
        for bad in [
            ModelParams { m: 0.0, ..Default::default() },
            ModelParams { k: -1.0, ..Default::default() },
            ModelParams { c: -0.1, ..Default::default() },
            ModelParams { forcing_freq: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn params_json_keys() {
        let text = r#"{"m":1,"k":200,"c":2,"g":9.81,"x0":0.2,"forcing_amplitude":1,"forcing_freq":1}"#;
        let p: ModelParams = serde_json::from_str(text).unwrap();
        assert_eq!(p, ModelParams::default());
        let extra = r#"{"m":1,"k":200,"c":2,"g":9.81,"x0":0.2,"forcing_amplitude":1,"forcing_freq":1,"q":0}"#;
        assert!(serde_json::from_str::<ModelParams>(extra).is_err());
    }

    #[test]
    fn linearization_matrices() {
        let lin = SwitchedLinearization::from_parts(1.0, 200.0, 2.0, 0.5, 0.25, 1.0);
        assert_eq!(lin.a_on, Matrix2::new(0.0, 1.0, -200.0, -2.0));
        assert_eq!(lin.a_off, Matrix2::new(0.0, 1.0, -200.0, 0.0));
        let diff = lin.a_on - lin.a_off;
        assert_eq!(diff, Matrix2::new(0.0, 0.0, 0.0, -2.0));
        assert!(!lin.is_lti());
        assert!(SwitchedLinearization::from_parts(1.0, 200.0, 0.0, 0.5, 0.25, 1.0).is_lti());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chart_follows_velocity_sign(x in -1.0f64..1.0, v in -5.0f64..5.0, t in 0.0f64..3.0) {
                let model = paper();
                let s = State::new(x, v);
                let d = model.eval_chart(&s, t, 0.0).unwrap();
                let undamped = model.flow(Chart::Lossless, &s, t, 0.0);
                if v > 0.0 {
                    prop_assert!((d[1] - (undamped[1] - 2.0 * v)).abs() < 1e-9);
                } else {
                    prop_assert_eq!(d, undamped);
                }
            }
        }
    }
}
