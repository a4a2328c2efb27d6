//! Run configuration covering every stage of the pipeline.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::DEFAULT_ALPHA;
use crate::excite::{ChirpPlan, RecordStart};
use crate::fit::DEFAULT_MAX_ITERATIONS;
use crate::hss::{DEFAULT_NH, DEFAULT_NKEEP};
use crate::model::{HybridModel, ModelParams};
use crate::sim::{DEFAULT_DT, DEFAULT_PERIODICITY_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub dt: f64,
    pub n_cycles: usize,
    pub periodicity_tolerance: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: DEFAULT_DT,
            n_cycles: 30,
            periodicity_tolerance: DEFAULT_PERIODICITY_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChirpSettings {
    pub amplitude: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub segment_duration: f64,
    pub n_segments: usize,
    pub record_start: RecordStart,
}

impl Default for ChirpSettings {
    fn default() -> Self {
        let plan = ChirpPlan::default();
        ChirpSettings {
            amplitude: plan.amplitude,
            f_lo: plan.f_lo,
            f_hi: plan.f_hi,
            segment_duration: plan.segment_duration,
            n_segments: plan.n_segments,
            record_start: RecordStart::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    pub n_harmonics: usize,
    pub alpha: f64,
    /// Excitation band `(lo, hi]` in Hz.
    pub band_hz: [f64; 2],
}

impl Default for EstimateSettings {
    fn default() -> Self {
        EstimateSettings {
            n_harmonics: 3,
            alpha: DEFAULT_ALPHA,
            band_hz: [0.0, 7.0],
        }
    }
}

impl EstimateSettings {
    pub fn band_rad_s(&self) -> (f64, f64) {
        (2.0 * PI * self.band_hz[0], 2.0 * PI * self.band_hz[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySettings {
    pub n_h: usize,
    pub n_keep: usize,
    pub grid_points: usize,
    pub f_max_hz: f64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        TheorySettings {
            n_h: DEFAULT_NH,
            n_keep: DEFAULT_NKEEP,
            grid_points: 600,
            f_max_hz: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub init_k: f64,
    pub init_c: f64,
    pub max_iterations: usize,
    /// Truncation order of the theory matched during the fit.
    pub n_h: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            init_k: 150.0,
            init_c: 1.0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            n_h: DEFAULT_NH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub sim: SimSettings,
    pub chirp: ChirpSettings,
    pub estimate: EstimateSettings,
    pub theory: TheorySettings,
    pub fit: FitSettings,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams::default(),
            sim: SimSettings::default(),
            chirp: ChirpSettings::default(),
            estimate: EstimateSettings::default(),
            theory: TheorySettings::default(),
            fit: FitSettings::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a full run configuration or a bare model-parameter object.
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        match serde_json::from_str::<RunConfig>(text) {
            Ok(cfg) => Ok(cfg),
            Err(full) => match serde_json::from_str::<ModelParams>(text) {
                Ok(model) => Ok(RunConfig {
                    model,
                    ..RunConfig::default()
                }),
                Err(_) => Err(full),
            },
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.sim.dt > 0.0) || !self.sim.dt.is_finite() {
            return bad(format!("sim.dt must be positive, got {}", self.sim.dt));
        }
        if self.sim.n_cycles < 2 {
            return bad(format!("sim.n_cycles must be at least 2, got {}", self.sim.n_cycles));
        }
        if !(self.sim.periodicity_tolerance > 0.0) {
            return bad("sim.periodicity_tolerance must be positive".into());
        }
        if !(self.estimate.alpha >= 0.0) || !self.estimate.alpha.is_finite() {
            return bad(format!("estimate.alpha must be non-negative, got {}", self.estimate.alpha));
        }
        let [lo, hi] = self.estimate.band_hz;
        if !(0.0 <= lo && lo < hi) {
            return bad(format!("estimate.band_hz must satisfy 0 <= lo < hi, got [{lo}, {hi}]"));
        }
        if self.theory.n_keep > self.theory.n_h {
            return bad(format!(
                "theory.n_keep = {} exceeds theory.n_h = {}",
                self.theory.n_keep, self.theory.n_h
            ));
        }
        if self.theory.grid_points == 0 || !(self.theory.f_max_hz > 0.0) {
            return bad("theory grid must have points and a positive upper frequency".into());
        }
        if !(self.fit.init_k > 0.0) || !(self.fit.init_c > 0.0) {
            return bad("fit initial guess must be positive".into());
        }
        self.chirp_plan().validate()?;
        Ok(())
    }

    pub fn hybrid_model(&self) -> Result<HybridModel> {
        HybridModel::new(self.model)
    }

    pub fn chirp_plan(&self) -> ChirpPlan {
        ChirpPlan {
            amplitude: self.chirp.amplitude,
            f_lo: self.chirp.f_lo,
            f_hi: self.chirp.f_hi,
            segment_duration: self.chirp.segment_duration,
            n_segments: self.chirp.n_segments,
            period: self.model.period(),
            dt: self.sim.dt,
        }
    }

    pub fn theory_grid(&self) -> Vec<f64> {
        crate::hss::uniform_grid(self.theory.f_max_hz, self.theory.grid_points)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join("resolved_config.json");
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }
}
