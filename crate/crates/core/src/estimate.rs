//! Empirical harmonic transfer functions from phase-shifted input/output
//! records: spectra, modulated-input regressor and the curvature-regularized
//! least-squares solve.
//!
//! Internally the unknowns are indexed by output bin `m`: record `r` obeys
//! `Y_r(m) = sum_n H_n(m) U_r(m - n P)` with `P` the pump frequency in bins.
//! Results are reported by input frequency, `G_n(k) = H_n(k + n P)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::banded::{condition_estimate, BandedHermitian};
use crate::error::{Error, Result};
use crate::excite::ExperimentRecord;
use crate::hss::HarmonicTransferSet;
use crate::sim::Trajectory;

/// Normal matrices with a larger condition estimate are rejected.
pub const MAX_CONDITION: f64 = 1e14;
/// Input bins weaker than this fraction of the band median are excluded.
pub const EXCITATION_FLOOR: f64 = 1e-3;
/// Default curvature weight, relative to the median data weight per bin.
pub const DEFAULT_ALPHA: f64 = 1e-2;
const CONDITION_ITERATIONS: usize = 60;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One-sided DFT of a record's input and output, normalized by the sample
/// count and referred to the system clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    /// Bin frequencies `b * bin_spacing`, `b = 0..=len / 2` (rad/s).
    pub freq_grid: Vec<f64>,
    pub u: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// Clock time of the first sample (s).
    pub clock_phase: f64,
    /// `2 pi / record_duration` (rad/s).
    pub bin_spacing: f64,
    /// Number of time samples.
    pub len: usize,
}

impl SpectrumRecord {
    fn at(values: &[Complex64], bin: i64) -> Complex64 {
        let idx = bin.unsigned_abs() as usize;
        match values.get(idx) {
            Some(v) if bin >= 0 => *v,
            Some(v) => v.conj(),
            None => ZERO,
        }
    }

    /// Input spectrum at a signed bin (negative bins by conjugate symmetry).
    pub fn input_at(&self, bin: i64) -> Complex64 {
        Self::at(&self.u, bin)
    }

    pub fn output_at(&self, bin: i64) -> Complex64 {
        Self::at(&self.y, bin)
    }
}

fn dft(signal: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.truncate(n / 2 + 1);
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Spectra of uniformly sampled `u`, `y` starting at clock time `clock_phase`.
pub fn spectra_of(u: &[f64], y: &[f64], dt: f64, clock_phase: f64) -> Result<SpectrumRecord> {
    if u.len() != y.len() || u.is_empty() {
        return Err(Error::InvalidInput(format!(
            "input and output must be non-empty and equally long ({} vs {})",
            u.len(),
            y.len()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() || !clock_phase.is_finite() {
        return Err(Error::InvalidInput(format!("invalid sampling dt = {dt}")));
    }
    if u.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("record contains non-finite values".into()));
    }
    let n = u.len();
    let mut planner = FftPlanner::new();
    let mut uf = dft(u, &mut planner);
    let mut yf = dft(y, &mut planner);
    let bin_spacing = 2.0 * PI / (n as f64 * dt);
    for (b, (cu, cy)) in uf.iter_mut().zip(yf.iter_mut()).enumerate() {
        let rot = Complex64::from_polar(1.0, -(b as f64) * bin_spacing * clock_phase);
        *cu *= rot;
        *cy *= rot;
    }
    Ok(SpectrumRecord {
        freq_grid: (0..uf.len()).map(|b| b as f64 * bin_spacing).collect(),
        u: uf,
        y: yf,
        clock_phase,
        bin_spacing,
        len: n,
    })
}

/// Spectra of a trajectory's `u` and `x` columns.
pub fn spectra(record: &Trajectory) -> Result<SpectrumRecord> {
    spectra_of(&record.inputs(), &record.positions(), record.dt, record.t0)
}

/// Spectra of all experiment records, in order.
pub fn spectra_of_records(records: &[ExperimentRecord]) -> Result<Vec<SpectrumRecord>> {
    records.par_iter().map(|r| spectra(&r.error)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    /// Harmonics estimated each side.
    pub n_harmonics: usize,
    /// Pump frequency `2 pi / T` (rad/s).
    pub pump: f64,
    /// Curvature weight relative to the median per-bin data weight.
    pub alpha: f64,
    /// Excitation band `(lo, hi]` (rad/s).
    pub band: (f64, f64),
    pub records: Vec<SpectrumRecord>,
}

/// Bin bookkeeping shared by the regressor, the solve and the cost.
#[derive(Debug, Clone, Copy)]
struct Layout {
    nh: i64,
    /// Pump frequency in bins.
    pump_bins: i64,
    k_lo: i64,
    k_hi: i64,
    /// Output bins span `-m_max..=m_max`.
    m_max: i64,
    threshold: f64,
}

impl Layout {
    fn unknowns_per_bin(&self) -> usize {
        (2 * self.nh + 1) as usize
    }

    fn bins(&self) -> usize {
        (2 * self.m_max + 1) as usize
    }

    fn index(&self, m: i64, n: i64) -> usize {
        ((m + self.m_max) as usize) * self.unknowns_per_bin() + (n + self.nh) as usize
    }

    fn in_band(&self, bin: i64) -> bool {
        let a = bin.abs();
        a >= self.k_lo && a <= self.k_hi
    }
}

impl EstimationProblem {
    pub fn new(
        records: Vec<SpectrumRecord>,
        n_harmonics: usize,
        pump: f64,
        alpha: f64,
        band: (f64, f64),
    ) -> Result<Self> {
        let problem = EstimationProblem {
            n_harmonics,
            pump,
            alpha,
            band,
            records,
        };
        problem.layout()?;
        Ok(problem)
    }

    fn layout(&self) -> Result<Layout> {
        let needed = 2 * self.n_harmonics + 1;
        if self.records.len() < needed {
            return Err(Error::InvalidInput(format!(
                "{} records cannot resolve {needed} harmonics",
                self.records.len()
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.pump > 0.0) || !self.pump.is_finite() {
            return Err(Error::InvalidInput(format!("pump frequency must be positive, got {}", self.pump)));
        }
        let (lo, hi) = self.band;
        if !(0.0 <= lo && lo < hi) || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("invalid band ({lo}, {hi}]")));
        }
        let first = &self.records[0];
        for r in &self.records[1..] {
            if r.len != first.len || (r.bin_spacing - first.bin_spacing).abs() > 1e-12 * first.bin_spacing {
                return Err(Error::InvalidInput("records must share length and sampling".into()));
            }
        }
        let dw = first.bin_spacing;
        let p = self.pump / dw;
        let pump_bins = p.round();
        if (p - pump_bins).abs() > 1e-6 || pump_bins < 1.0 {
            return Err(Error::ResamplingRequired(format!(
                "pump frequency is {p} bins; record length must be a whole number of periods"
            )));
        }
        let pump_bins = pump_bins as i64;
        let k_lo = ((lo / dw + 1e-9).floor() as i64 + 1).max(1);
        let k_hi = (hi / dw + 1e-9).floor() as i64;
        if k_hi < k_lo {
            return Err(Error::NoData(format!("band ({lo}, {hi}] rad/s contains no frequency bins")));
        }
        let nh = self.n_harmonics as i64;
        let nyquist_bin = (first.len / 2) as i64;
        if k_hi + nh * pump_bins >= nyquist_bin {
            return Err(Error::InvalidInput(format!(
                "band edge plus {nh} pump shifts exceeds the Nyquist frequency of the records"
            )));
        }
        let mut mags: Vec<f64> = self
            .records
            .iter()
            .flat_map(|r| (k_lo..=k_hi).map(move |b| r.input_at(b).norm()))
            .collect();
        let median = median(&mut mags);
        if !(median > 0.0) {
            return Err(Error::NoData("input spectra vanish across the band".into()));
        }
        Ok(Layout {
            nh,
            pump_bins,
            k_lo,
            k_hi,
            m_max: k_hi + nh * pump_bins,
            threshold: EXCITATION_FLOOR * median,
        })
    }

    fn masked_input(&self, layout: &Layout, record: usize, bin: i64) -> Complex64 {
        if !layout.in_band(bin) {
            return ZERO;
        }
        let u = self.records[record].input_at(bin);
        if u.norm() < layout.threshold {
            ZERO
        } else {
            u
        }
    }

    fn regressor_at(&self, layout: &Layout, m: i64) -> (DMatrix<Complex64>, DVector<Complex64>) {
        let nu = layout.unknowns_per_bin();
        let rows = self.records.len();
        let u = DMatrix::from_fn(rows, nu, |r, j| {
            let n = j as i64 - layout.nh;
            self.masked_input(layout, r, m - n * layout.pump_bins)
        });
        let y = DVector::from_fn(rows, |r, _| self.records[r].output_at(m));
        (u, y)
    }

    /// Data weight: median over output bins of the mean diagonal of `U^H U`.
    fn data_weight(&self, layout: &Layout) -> f64 {
        let mut traces: Vec<f64> = (-layout.m_max..=layout.m_max)
            .map(|m| {
                let (u, _) = self.regressor_at(layout, m);
                u.iter().map(|z| z.norm_sqr()).sum::<f64>() / layout.unknowns_per_bin() as f64
            })
            .collect();
        median(&mut traces)
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Stacked regressor at one output frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    /// Row `r`, column `n + N`: `U_r(w - n w_p)`.
    pub matrix: DMatrix<Complex64>,
    /// `Y_r(w)`.
    pub output: DVector<Complex64>,
    /// Columns zeroed because the shifted input is outside the excited band.
    pub low_excitation: Vec<bool>,
}

/// Regressor at output frequency `omega`, looked up on the nearest bin.
pub fn build_regressor(problem: &EstimationProblem, omega: f64) -> Result<Regressor> {
    let layout = problem.layout()?;
    let dw = problem.records[0].bin_spacing;
    let m = (omega / dw).round() as i64;
    if (omega / dw - m as f64).abs() > 0.5 + 1e-12 {
        return Err(Error::InvalidInput(format!("omega = {omega} is not on the bin grid")));
    }
    let (matrix, output) = problem.regressor_at(&layout, m);
    let low_excitation = matrix.column_iter().map(|c| c.iter().all(|z| *z == ZERO)).collect();
    Ok(Regressor {
        matrix,
        output,
        low_excitation,
    })
}

/// `(n_points - 2) x n_points` second-difference operator.
pub fn second_difference(n_points: usize) -> Result<DMatrix<f64>> {
    if n_points < 3 {
        return Err(Error::InvalidInput(format!(
            "second difference needs at least 3 points, got {n_points}"
        )));
    }
    let mut d = DMatrix::zeros(n_points - 2, n_points);
    for r in 0..n_points - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    Ok(d)
}

/// `sum |x[i] - 2 x[i+1] + x[i+2]|^2`.
pub fn curvature_penalty(values: &[Complex64]) -> f64 {
    values
        .windows(3)
        .map(|w| (w[0] - w[1] * 2.0 + w[2]).norm_sqr())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub alpha: f64,
    /// Scale applied to `alpha` (median per-bin data weight).
    pub data_weight: f64,
    pub condition: f64,
    /// `||Y - U H|| / ||Y||`.
    pub relative_residual: f64,
    /// Regularized cost at the solution.
    pub cost: f64,
    pub unknowns: usize,
    pub low_excitation_unknowns: usize,
    pub bandwidth: usize,
    pub records: usize,
    pub n_harmonics: usize,
    pub bins: usize,
}

impl EstimateDiagnostics {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("diagnostics serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// Estimates on the excited input bins, `n` in `[-N, N]`.
    pub htf: HarmonicTransferSet,
    /// Per harmonic and grid point: the estimate is supported by data.
    pub excited: BTreeMap<i32, Vec<bool>>,
    pub diagnostics: EstimateDiagnostics,
    layout: Layout,
    unknowns: Vec<Complex64>,
}

impl EstimateResult {
    /// `G_n` at a signed input bin, including bins outside the reported band.
    pub fn value(&self, n: i32, input_bin: i64) -> Complex64 {
        let n = n as i64;
        let m = input_bin + n * self.layout.pump_bins;
        if n.abs() > self.layout.nh || m.abs() > self.layout.m_max {
            return ZERO;
        }
        self.unknowns[self.layout.index(m, n)]
    }
}

fn data_misfit(
    problem: &EstimationProblem,
    layout: &Layout,
    h: &dyn Fn(i64, i64) -> Complex64,
) -> (f64, f64) {
    let nu = layout.unknowns_per_bin();
    let mut misfit = 0.0;
    let mut energy = 0.0;
    for m in -layout.m_max..=layout.m_max {
        let (u, y) = problem.regressor_at(layout, m);
        let hv = DVector::from_fn(nu, |j, _| h(m, j as i64 - layout.nh));
        let r = &y - &u * hv;
        misfit += r.norm_squared();
        energy += y.norm_squared();
    }
    (misfit, energy)
}

fn penalty_of(layout: &Layout, h: &dyn Fn(i64, i64) -> Complex64) -> f64 {
    (-layout.nh..=layout.nh)
        .map(|n| {
            let series: Vec<Complex64> = (-layout.m_max..=layout.m_max).map(|m| h(m, n)).collect();
            curvature_penalty(&series)
        })
        .sum()
}

/// Regularized cost `||Y - U G||^2 + alpha w ||D2 G||^2` of a candidate HTF
/// given as `g(n, input_bin)` over signed bins.
pub fn cost(problem: &EstimationProblem, g: impl Fn(i32, i64) -> Complex64) -> Result<f64> {
    let layout = problem.layout()?;
    let h = |m: i64, n: i64| g(n as i32, m - n * layout.pump_bins);
    let (misfit, _) = data_misfit(problem, &layout, &h);
    let weight = problem.data_weight(&layout);
    Ok(misfit + problem.alpha * weight * penalty_of(&layout, &h))
}

/// Solves the curvature-regularized normal equations jointly over all bins
/// and harmonics.
pub fn estimate_htf(problem: &EstimationProblem) -> Result<EstimateResult> {
    let layout = problem.layout()?;
    let nu = layout.unknowns_per_bin();
    let nb = layout.bins();
    let dim = nb * nu;
    let bw = 2 * nu;
    let mut normal = BandedHermitian::zeros(dim, bw);
    let mut rhs = vec![ZERO; dim];
    let mut column_energy = vec![0.0; dim];

    let blocks: Vec<(DMatrix<Complex64>, DVector<Complex64>)> = (-layout.m_max..=layout.m_max)
        .into_par_iter()
        .map(|m| {
            let (u, y) = problem.regressor_at(&layout, m);
            let uh = u.adjoint();
            (&uh * &u, &uh * &y)
        })
        .collect();
    let mut traces = Vec::with_capacity(nb);
    for (b, (gram, proj)) in blocks.iter().enumerate() {
        let base = b * nu;
        for i in 0..nu {
            for j in 0..=i {
                normal.add(base + i, base + j, gram[(i, j)]);
            }
            rhs[base + i] = proj[i];
            column_energy[base + i] = gram[(i, i)].re;
        }
        traces.push(gram.diagonal().iter().map(|z| z.re).sum::<f64>() / nu as f64);
    }
    let weight = median(&mut traces);
    if !(weight > 0.0) {
        return Err(Error::NoData("regressor carries no excitation".into()));
    }

    if problem.alpha > 0.0 && nb >= 3 {
        let scale = problem.alpha * weight;
        let stencil = [1.0, -2.0, 1.0];
        for row in 0..nb - 2 {
            for p in 0..3 {
                for q in 0..=p {
                    let v = Complex64::new(scale * stencil[p] * stencil[q], 0.0);
                    for j in 0..nu {
                        normal.add((row + p) * nu + j, (row + q) * nu + j, v);
                    }
                }
            }
        }
    } else {
        for (i, &e) in column_energy.iter().enumerate() {
            if e == 0.0 {
                normal.pin(i, weight);
                rhs[i] = ZERO;
            }
        }
    }

    let chol = normal.cholesky().ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let condition = condition_estimate(&normal, &chol, CONDITION_ITERATIONS);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let unknowns = chol.solve(&rhs);

    let h = |m: i64, n: i64| unknowns[layout.index(m, n)];
    let (misfit, energy) = data_misfit(problem, &layout, &h);
    let penalty = penalty_of(&layout, &h);
    let low = column_energy.iter().filter(|&&e| e == 0.0).count();

    let dw = problem.records[0].bin_spacing;
    let grid: Vec<f64> = (layout.k_lo..=layout.k_hi).map(|k| k as f64 * dw).collect();
    let mut harmonics = BTreeMap::new();
    let mut excited = BTreeMap::new();
    for n in -layout.nh..=layout.nh {
        let idx: Vec<usize> = (layout.k_lo..=layout.k_hi)
            .map(|k| layout.index(k + n * layout.pump_bins, n))
            .collect();
        harmonics.insert(n as i32, idx.iter().map(|&i| unknowns[i]).collect());
        excited.insert(n as i32, idx.iter().map(|&i| column_energy[i] > 0.0).collect());
    }
    let htf = HarmonicTransferSet::new(grid, harmonics, problem.n_harmonics)?;
    let diagnostics = EstimateDiagnostics {
        alpha: problem.alpha,
        data_weight: weight,
        condition,
        relative_residual: if energy > 0.0 { (misfit / energy).sqrt() } else { 0.0 },
        cost: misfit + problem.alpha * weight * penalty,
        unknowns: dim,
        low_excitation_unknowns: low,
        bandwidth: bw,
        records: problem.records.len(),
        n_harmonics: problem.n_harmonics,
        bins: (layout.k_hi - layout.k_lo + 1) as usize,
    };
    Ok(EstimateResult {
        htf,
        excited,
        diagnostics,
        layout,
        unknowns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sinusoid_on_bin() {
        let n = 1000;
        let dt = 1e-3;
        let u: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 * dt).cos()).collect();
        let s = spectra_of(&u, &u, dt, 0.0).unwrap();
        assert_relative_eq!(s.bin_spacing, 2.0 * PI);
        assert_relative_eq!(s.u[5].re, 0.5, epsilon = 1e-12);
        let peak = 0.5;
        for (b, z) in s.u.iter().enumerate() {
            if b != 5 {
                assert!(z.norm() < 1e-12 * peak, "bin {b}: {z}");
            }
        }
        assert_eq!(s.input_at(-5), s.u[5].conj());
    }

    #[test]
    fn clock_phase_rotates_bins() {
        let n = 1000;
        let dt = 1e-3;
        let u: Vec<f64> = (0..n).map(|i| (2.0 * PI * 3.0 * i as f64 * dt).sin()).collect();
        let a = spectra_of(&u, &u, dt, 0.0).unwrap();
        let b = spectra_of(&u, &u, dt, 0.25).unwrap();
        let rot = Complex64::from_polar(1.0, -3.0 * 2.0 * PI * 0.25);
        assert!((b.u[3] - a.u[3] * rot).norm() < 1e-14);
    }

    #[test]
    fn stencil() {
        let d = second_difference(3).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        assert_eq!((&d * v)[0], 1.0);
        assert!(second_difference(2).is_err());
        let ramp = DVector::from_fn(10, |i, _| 3.0 - 0.5 * i as f64);
        assert!((second_difference(10).unwrap() * ramp).amax() < 1e-15);
    }

    #[test]
    fn too_few_records() {
        let u = vec![1.0; 64];
        let rec = spectra_of(&u, &u, 1.0 / 64.0, 0.0).unwrap();
        let e = EstimationProblem::new(vec![rec; 2], 1, 2.0 * PI, 0.0, (0.0, 10.0));
        assert!(matches!(e, Err(Error::InvalidInput(_))));
    }
}
