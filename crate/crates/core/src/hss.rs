//! Harmonic state space of the switched linearization and evaluation of its
//! harmonic transfer functions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SwitchedLinearization;

/// Default truncation order for theoretical HTFs.
pub const DEFAULT_NH: usize = 10;
/// Default number of harmonics kept each side in comparisons.
pub const DEFAULT_NKEEP: usize = 3;
/// Solves with a 1-norm condition estimate above this are reported.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e12;
/// Relative nudge applied to a grid point whose solve fails.
const SINGULAR_NUDGE: f64 = 1e-9;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// `points` frequencies uniformly spaced in `(0, f_max_hz]`, in rad/s.
pub fn uniform_grid(f_max_hz: f64, points: usize) -> Vec<f64> {
    (1..=points)
        .map(|i| 2.0 * PI * f_max_hz * i as f64 / points as f64)
        .collect()
}

/// The 600-point grid over `(0, 7]` Hz.
pub fn default_grid() -> Vec<f64> {
    uniform_grid(7.0, 600)
}

/// Fourier coefficients of the damper flag `s(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareWaveSeries {
    pub n_h: usize,
    /// `coeffs[n + n_h]` is `s_n`.
    pub coeffs: Vec<Complex64>,
    /// True when the flag is constant (duty 0 or 1).
    pub degenerate: bool,
}

impl SquareWaveSeries {
    pub fn get(&self, n: i64) -> Complex64 {
        if n.unsigned_abs() as usize > self.n_h {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[(n + self.n_h as i64) as usize]
    }
}

/// Coefficients of a unit square wave that is high for `duty * period`
/// seconds starting at clock phase `t_start`.
pub fn square_wave_coeffs(duty: f64, t_start: f64, period: f64, n_h: usize) -> Result<SquareWaveSeries> {
    if !(0.0..=1.0).contains(&duty) || !duty.is_finite() {
        return Err(Error::InvalidInput(format!("duty must lie in [0, 1], got {duty}")));
    }
    if !(period > 0.0) || !period.is_finite() || !t_start.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid switching geometry: t_start = {t_start}, period = {period}"
        )));
    }
    let degenerate = duty == 0.0 || duty == 1.0;
    let pump = 2.0 * PI / period;
    let coeffs = (-(n_h as i64)..=n_h as i64)
        .map(|n| {
            if n == 0 {
                Complex64::new(duty, 0.0)
            } else if degenerate {
                Complex64::new(0.0, 0.0)
            } else {
                let nf = n as f64;
                let shape = (Complex64::new(1.0, 0.0) - (-J * 2.0 * PI * nf * duty).exp()) / (J * 2.0 * PI * nf);
                shape * (-J * nf * pump * t_start).exp()
            }
        })
        .collect();
    Ok(SquareWaveSeries {
        n_h,
        coeffs,
        degenerate,
    })
}

/// Fourier coefficients of the periodic system matrices. `A` coefficients
/// are kept up to order `2 n_h`, which the Toeplitz lifting of order `n_h`
/// needs; `B`, `C`, `D` are constant for this model.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMatrixSeries {
    pub n_h: usize,
    pub period: f64,
    pub pump: f64,
    /// `a_coeffs[n + 2 n_h]` is `A_n`.
    pub a_coeffs: Vec<Matrix2<Complex64>>,
    pub b0: nalgebra::Vector2<f64>,
    pub c0: nalgebra::RowVector2<f64>,
    pub d0: f64,
    pub lti: bool,
}

impl FourierMatrixSeries {
    pub fn a(&self, n: i64) -> Matrix2<Complex64> {
        let max = 2 * self.n_h as i64;
        if n.abs() > max {
            return Matrix2::zeros();
        }
        self.a_coeffs[(n + max) as usize]
    }
}

pub fn fourier_series(lin: &SwitchedLinearization, n_h: usize) -> Result<FourierMatrixSeries> {
    let s = square_wave_coeffs(lin.duty, lin.t_hat, lin.period, 2 * n_h)?;
    let a_off = lin.a_off.map(|v| Complex64::new(v, 0.0));
    let delta = (lin.a_on - lin.a_off).map(|v| Complex64::new(v, 0.0));
    let lti = s.degenerate || lin.a_on == lin.a_off;
    let a_coeffs = (-(2 * n_h as i64)..=2 * n_h as i64)
        .map(|n| {
            let sn = s.get(n);
            if n == 0 {
                a_off + delta * sn
            } else {
                delta * sn
            }
        })
        .collect();
    Ok(FourierMatrixSeries {
        n_h,
        period: lin.period,
        pump: 2.0 * PI / lin.period,
        a_coeffs,
        b0: lin.b,
        c0: lin.c,
        d0: lin.d,
        lti,
    })
}

/// Harmonic state space truncated to harmonics `-n_h..=n_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedHSS {
    pub n_h: usize,
    pub pump: f64,
    /// Block Toeplitz, block `(r, c)` equal to `A_{r-c}`.
    pub a: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub c: DMatrix<Complex64>,
    pub d: DMatrix<Complex64>,
    /// Diagonal of the modulation matrix, `j n w_p` repeated per state.
    pub modulation: DVector<Complex64>,
}

impl TruncatedHSS {
    pub fn harmonics(&self) -> usize {
        2 * self.n_h + 1
    }

    pub fn modulation_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&self.modulation)
    }
}

pub fn build_hss(series: &FourierMatrixSeries) -> TruncatedHSS {
    let h = 2 * series.n_h + 1;
    let nh = series.n_h as i64;
    let mut a = DMatrix::zeros(2 * h, 2 * h);
    let mut b = DMatrix::zeros(2 * h, h);
    let mut c = DMatrix::zeros(h, 2 * h);
    let mut d = DMatrix::zeros(h, h);
    let mut modulation = DVector::zeros(2 * h);
    for r in 0..h {
        for col in 0..h {
            let block = series.a(r as i64 - col as i64);
            a.fixed_view_mut::<2, 2>(2 * r, 2 * col).copy_from(&block);
        }
        b[(2 * r, r)] = series.b0[0].into();
        b[(2 * r + 1, r)] = series.b0[1].into();
        c[(r, 2 * r)] = series.c0[0].into();
        c[(r, 2 * r + 1)] = series.c0[1].into();
        d[(r, r)] = series.d0.into();
        let w = J * ((r as i64 - nh) as f64 * series.pump);
        modulation[2 * r] = w;
        modulation[2 * r + 1] = w;
    }
    TruncatedHSS {
        n_h: series.n_h,
        pump: series.pump,
        a,
        b,
        c,
        d,
        modulation,
    }
}

/// Grid point whose solve needed attention.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWarning {
    pub index: usize,
    pub omega: f64,
    /// 1-norm condition estimate of the solve.
    pub condition: f64,
    /// The point was nudged off an exact singularity.
    pub perturbed: bool,
}

/// Harmonic transfer functions `G_n(jw)` on a frequency grid. `G_n` maps an
/// input at `w` to the output at `w + n w_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicTransferSet {
    pub omega_grid: Vec<f64>,
    pub harmonics: BTreeMap<i32, Vec<Complex64>>,
    pub n_h_kept: usize,
    pub warnings: Vec<GridWarning>,
}

impl HarmonicTransferSet {
    pub fn new(
        omega_grid: Vec<f64>,
        harmonics: BTreeMap<i32, Vec<Complex64>>,
        n_h_kept: usize,
    ) -> Result<Self> {
        validate_grid(&omega_grid)?;
        for (n, values) in &harmonics {
            if values.len() != omega_grid.len() {
                return Err(Error::InvalidInput(format!(
                    "harmonic {n} has {} values for a grid of {}",
                    values.len(),
                    omega_grid.len()
                )));
            }
            if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidInput(format!("harmonic {n} contains non-finite values")));
            }
        }
        Ok(HarmonicTransferSet {
            omega_grid,
            harmonics,
            n_h_kept,
            warnings: Vec::new(),
        })
    }

    pub fn get(&self, n: i32) -> Option<&[Complex64]> {
        self.harmonics.get(&n).map(Vec::as_slice)
    }

    pub fn max_abs(&self, n: i32) -> f64 {
        self.get(n)
            .map(|v| v.iter().map(|z| z.norm()).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }

    /// Copy holding only the harmonics in `ns`.
    pub fn restrict(&self, ns: impl IntoIterator<Item = i32>) -> HarmonicTransferSet {
        let harmonics: BTreeMap<_, _> = ns
            .into_iter()
            .filter_map(|n| self.harmonics.get(&n).map(|v| (n, v.clone())))
            .collect();
        let n_h_kept = harmonics.keys().map(|n| n.unsigned_abs() as usize).max().unwrap_or(0);
        HarmonicTransferSet {
            omega_grid: self.omega_grid.clone(),
            harmonics,
            n_h_kept,
            warnings: self.warnings.clone(),
        }
    }

    /// CSV with header `omega_rad_s,n,re,im`, grid-point major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_rad_s,n,re,im\n");
        for (i, w) in self.omega_grid.iter().enumerate() {
            for (n, values) in &self.harmonics {
                let z = values[i];
                let _ = writeln!(out, "{w:.16e},{n},{:.16e},{:.16e}", z.re, z.im);
            }
        }
        out
    }

    /// Plot data: magnitude, magnitude in dB and phase in degrees.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("omega_rad_s,n,mag,mag_db,phase_deg\n");
        for (n, values) in &self.harmonics {
            for (w, z) in self.omega_grid.iter().zip(values) {
                let mag = z.norm();
                let _ = writeln!(
                    out,
                    "{w:.16e},{n},{mag:.16e},{:.16e},{:.16e}",
                    20.0 * mag.log10(),
                    z.arg().to_degrees()
                );
            }
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
        if header != "omega_rad_s,n,re,im" {
            return Err(Error::InvalidInput(format!("unexpected HTF header '{header}'")));
        }
        let mut grid: Vec<f64> = Vec::new();
        let mut harmonics: BTreeMap<i32, Vec<Complex64>> = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::InvalidInput(format!("line {}: {what}", lineno + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let w: f64 = f[0].trim().parse().map_err(|_| bad("bad omega"))?;
            let n: i32 = f[1].trim().parse().map_err(|_| bad("bad harmonic index"))?;
            let re: f64 = f[2].trim().parse().map_err(|_| bad("bad real part"))?;
            let im: f64 = f[3].trim().parse().map_err(|_| bad("bad imaginary part"))?;
            if grid.last() != Some(&w) {
                grid.push(w);
            }
            let col = harmonics.entry(n).or_default();
            if col.len() + 1 != grid.len() {
                return Err(bad("rows must be grouped by grid point with one row per harmonic"));
            }
            col.push(Complex64::new(re, im));
        }
        if grid.is_empty() {
            return Err(Error::InvalidInput("HTF file has no rows".into()));
        }
        let n_h_kept = harmonics.keys().map(|n| n.unsigned_abs() as usize).max().unwrap_or(0);
        HarmonicTransferSet::new(grid, harmonics, n_h_kept)
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("frequency grid is empty".into()));
    }
    if grid.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidInput("frequency grid contains non-finite values".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequency grid must be strictly increasing".into()));
    }
    Ok(())
}

fn norm1(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

struct PointSolve {
    response: Vec<Complex64>,
    condition: f64,
    perturbed: bool,
}

fn solve_point(hss: &TruncatedHSS, omega: f64, n_keep: usize) -> Option<PointSolve> {
    let dim = hss.a.nrows();
    let h = hss.harmonics();
    let centre = hss.n_h;
    let rhs = hss.b.column(centre).into_owned();
    let attempt = |w: f64| -> Option<(DVector<Complex64>, f64)> {
        let mut m = -&hss.a;
        for i in 0..dim {
            m[(i, i)] += J * w + hss.modulation[i];
        }
        let lu = m.clone().lu();
        let inv = lu.try_inverse()?;
        let x = &inv * &rhs;
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return None;
        }
        Some((x, norm1(&m) * norm1(&inv)))
    };
    let (x, condition, perturbed) = match attempt(omega) {
        Some((x, cond)) => (x, cond, false),
        None => {
            let nudge = if omega == 0.0 { SINGULAR_NUDGE } else { omega * SINGULAR_NUDGE };
            let (x, cond) = attempt(omega + nudge)?;
            (x, cond, true)
        }
    };
    let y = &hss.c * &x;
    let response = (0..h)
        .filter(|&r| (r as i64 - centre as i64).unsigned_abs() as usize <= n_keep)
        .map(|r| y[r] + hss.d[(r, centre)])
        .collect();
    Some(PointSolve {
        response,
        condition,
        perturbed,
    })
}

/// Solves `[jw I - (A - N)] X = B e_0` at every grid point and returns the
/// output harmonics `|n| <= n_keep` of the central input column.
pub fn eval_htf(hss: &TruncatedHSS, omega_grid: &[f64], n_keep: usize) -> Result<HarmonicTransferSet> {
    if n_keep > hss.n_h {
        return Err(Error::InvalidInput(format!(
            "n_keep = {n_keep} exceeds truncation order {}",
            hss.n_h
        )));
    }
    validate_grid(omega_grid)?;
    let solved: Vec<Option<PointSolve>> = omega_grid
        .par_iter()
        .map(|&w| solve_point(hss, w, n_keep))
        .collect();
    let singular: Vec<f64> = omega_grid
        .iter()
        .zip(&solved)
        .filter(|(_, s)| s.is_none())
        .map(|(&w, _)| w)
        .collect();
    if !singular.is_empty() {
        return Err(Error::SingularFrequency { omega: singular });
    }
    let keep = n_keep as i32;
    let mut harmonics: BTreeMap<i32, Vec<Complex64>> =
        (-keep..=keep).map(|n| (n, Vec::with_capacity(omega_grid.len()))).collect();
    let mut warnings = Vec::new();
    for (i, point) in solved.into_iter().enumerate() {
        let point = point.expect("singular points handled above");
        for (n, z) in (-keep..=keep).zip(point.response) {
            harmonics.get_mut(&n).expect("all harmonics allocated").push(z);
        }
        if point.perturbed || point.condition > NEAR_SINGULAR_CONDITION {
            log::warn!(
                "near-singular harmonic solve at omega = {} rad/s (condition {:.3e}{})",
                omega_grid[i],
                point.condition,
                if point.perturbed { ", point nudged" } else { "" }
            );
            warnings.push(GridWarning {
                index: i,
                omega: omega_grid[i],
                condition: point.condition,
                perturbed: point.perturbed,
            });
        }
    }
    let mut set = HarmonicTransferSet::new(omega_grid.to_vec(), harmonics, n_keep)?;
    set.warnings = warnings;
    Ok(set)
}

/// Theoretical HTFs of a linearization: Fourier series, lifting and solve.
pub fn theoretical_htf(
    lin: &SwitchedLinearization,
    n_h: usize,
    omega_grid: &[f64],
    n_keep: usize,
) -> Result<HarmonicTransferSet> {
    let series = fourier_series(lin, n_h)?;
    eval_htf(&build_hss(&series), omega_grid, n_keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper_lin() -> SwitchedLinearization {
        SwitchedLinearization::from_parts(1.0, 200.0, 2.0, 0.5125, 0.498, 1.0)
    }

    #[test]
    fn constant_flag() {
        let s = square_wave_coeffs(1.0, 0.3, 1.0, 4).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.get(0), Complex64::new(1.0, 0.0));
        assert!((1..=4).all(|n| s.get(n) == Complex64::new(0.0, 0.0) && s.get(-n) == s.get(n)));
        assert!(square_wave_coeffs(1.2, 0.0, 1.0, 2).is_err());
    }

    #[test]
    fn symmetric_square_wave() {
        let s = square_wave_coeffs(0.5, 0.0, 1.0, 3).unwrap();
        assert_relative_eq!(s.get(0).re, 0.5);
        assert_relative_eq!(s.get(1).re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.get(1).im, -1.0 / PI, epsilon = 1e-15);
        assert!(s.get(2).norm() < 1e-15);
    }

    #[test]
    fn average_damping_entry() {
        let series = fourier_series(&paper_lin(), 3).unwrap();
        assert_relative_eq!(series.a(0)[(1, 1)].re, -2.0 * 0.5125, epsilon = 1e-14);
        assert_eq!(series.a(0)[(1, 0)], Complex64::new(-200.0, 0.0));
        for n in 1..=6 {
            let (p, m) = (series.a(n), series.a(-n));
            assert!((p - m.map(|z| z.conj())).norm() < 1e-14);
            assert_eq!(p[(1, 0)], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn zero_order_is_averaged_system() {
        let series = fourier_series(&paper_lin(), 0).unwrap();
        let hss = build_hss(&series);
        assert_eq!(hss.a.shape(), (2, 2));
        assert!(hss.modulation.iter().all(|z| z.norm() == 0.0));
        assert_eq!(hss.a.fixed_view::<2, 2>(0, 0).into_owned(), series.a(0));
    }

    #[test]
    fn n_keep_bounded_by_order() {
        let hss = build_hss(&fourier_series(&paper_lin(), 2).unwrap());
        assert!(eval_htf(&hss, &[1.0], 3).is_err());
        assert!(eval_htf(&hss, &[2.0, 1.0], 1).is_err());
    }

    #[test]
    fn exact_pole_is_nudged() {
        // Undamped oscillator with sqrt(k) = 10 evaluated on its pole.
        let lin = SwitchedLinearization::from_parts(1.0, 100.0, 0.0, 0.5, 0.0, 1.0);
        let set = theoretical_htf(&lin, 0, &[10.0], 0).unwrap();
        assert!(set.get(0).unwrap()[0].norm() > 1e3);
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let grid = uniform_grid(7.0, 20);
        let set = theoretical_htf(&paper_lin(), 4, &grid, 2).unwrap();
        let back = HarmonicTransferSet::parse_csv(&set.to_csv()).unwrap();
        assert_eq!(back.omega_grid, set.omega_grid);
        assert_eq!(back.harmonics, set.harmonics);
        assert_eq!(back.n_h_kept, 2);
        assert!(set.to_plot_csv().starts_with("omega_rad_s,n,mag,mag_db,phase_deg\n"));
    }

    #[test]
    fn grid_must_increase() {
        let mut h = BTreeMap::new();
        h.insert(0, vec![Complex64::new(1.0, 0.0); 2]);
        assert!(HarmonicTransferSet::new(vec![1.0, 1.0], h, 0).is_err());
    }
}
