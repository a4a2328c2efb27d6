use hybrid_htf::excite::{self, gen_chirp, run_experiments, ChirpPlan, RecordStart};
use hybrid_htf::model::{HybridModel, ModelParams};
use hybrid_htf::sim::{settle_limit_cycle, LimitCycle};
use hybrid_htf::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rustfft::FftPlanner;

fn nominal() -> (HybridModel, LimitCycle) {
    let model = HybridModel::new(ModelParams::default()).unwrap();
    let cycle = settle_limit_cycle(&model, 30, 1e-3, 1e-6).unwrap();
    (model, cycle)
}

fn short_plan(amplitude: f64) -> ChirpPlan {
    ChirpPlan {
        amplitude,
        segment_duration: 10.0,
        n_segments: 3,
        ..ChirpPlan::default()
    }
}

fn magnitude_spectrum(signal: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().take(signal.len() / 2 + 1).map(|z| z.norm() / signal.len() as f64).collect()
}

#[test]
fn chirp_energy_stays_in_band() {
    let plan = ChirpPlan::default();
    let u = gen_chirp(&plan, 0).unwrap();
    assert_eq!(u.len(), 30_000);
    assert!(u.iter().all(|v| v.abs() <= plan.amplitude));
    let spec = magnitude_spectrum(&u);
    let df = 1.0 / plan.segment_duration;
    let in_band: Vec<f64> = spec.iter().enumerate().filter(|(b, _)| {
        let f = *b as f64 * df;
        f > 0.2 && f < 6.8
    }).map(|(_, m)| *m).collect();
    let floor = in_band.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(floor > 0.0);
    // Truncating the sweep leaves a sinc-like skirt above f_hi; it carries a
    // negligible share of the energy.
    let energy = |keep: &dyn Fn(f64) -> bool| -> f64 {
        spec.iter().enumerate().filter(|(b, _)| keep(*b as f64 * df)).map(|(_, m)| m * m).sum()
    };
    let share = energy(&|f| f > 8.0) / energy(&|_| true);
    assert!(share < 1e-3, "energy share above 8 Hz: {share:e}");
}

#[test]
fn every_phase_index_shares_the_local_chirp() {
    let plan = ChirpPlan::default();
    let first = gen_chirp(&plan, 0).unwrap();
    for k in 1..plan.n_segments {
        assert_eq!(gen_chirp(&plan, k).unwrap(), first);
    }
    assert!(gen_chirp(&plan, plan.n_segments).is_err());
}

#[test]
fn offsets_tile_the_period() {
    let plan = ChirpPlan::default();
    let offsets = plan.clock_offsets();
    assert_eq!(offsets.len(), 9);
    assert_eq!(offsets[0], 0.0);
    for w in offsets.windows(2) {
        assert!((w[1] - w[0] - plan.period / 9.0).abs() < 1e-15);
    }
    assert!(offsets.last().unwrap() < &plan.period);
}

#[test]
fn aliasing_band_rejected() {
    let plan = ChirpPlan {
        dt: 0.1,
        ..ChirpPlan::default()
    };
    assert!(matches!(plan.validate(), Err(Error::Aliasing { .. })));
}

#[test]
fn records_carry_clock_offsets_and_start_on_their_phase() {
    let (model, cycle) = nominal();
    let plan = short_plan(0.004);
    let records = run_experiments(&model, &cycle, &plan, RecordStart::SteadyState).unwrap();
    assert_eq!(records.len(), 3);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.index, k);
        assert!((r.clock_offset - k as f64 / 3.0).abs() < 1e-15);
        assert_eq!(r.error.t0, r.clock_offset);
        assert_eq!(r.input().len(), 10_000);
        assert!(r.shooting_residual < 1e-9, "record {k}: {:e}", r.shooting_residual);
        assert!(!r.large_perturbation);
    }
}

#[test]
fn zero_amplitude_leaves_the_orbit_untouched() {
    let (model, cycle) = nominal();
    for start in [RecordStart::SteadyState, RecordStart::OnCycle] {
        let records = run_experiments(&model, &cycle, &short_plan(0.0), start).unwrap();
        for r in &records {
            assert!(r.max_deviation < 1e-9, "{start:?}: {:e}", r.max_deviation);
        }
    }
}

#[test]
fn response_scales_linearly_with_small_amplitude() {
    let (model, cycle) = nominal();
    let a = run_experiments(&model, &cycle, &short_plan(0.002), RecordStart::SteadyState).unwrap();
    let b = run_experiments(&model, &cycle, &short_plan(0.004), RecordStart::SteadyState).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        let worst = ra
            .output()
            .iter()
            .zip(rb.output())
            .map(|(x, y)| (2.0 * x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05 * rb.max_deviation, "record {}: {worst:e} vs {:e}", ra.index, rb.max_deviation);
    }
}

#[test]
fn steady_state_needs_whole_periods() {
    let (model, cycle) = nominal();
    let plan = ChirpPlan {
        segment_duration: 10.5,
        ..short_plan(0.004)
    };
    assert!(run_experiments(&model, &cycle, &plan, RecordStart::SteadyState).is_err());
    assert!(run_experiments(&model, &cycle, &plan, RecordStart::OnCycle).is_ok());
}

#[test]
fn bundle_round_trip() {
    let (model, cycle) = nominal();
    let plan = short_plan(0.004);
    let records = run_experiments(&model, &cycle, &plan, RecordStart::OnCycle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    excite::write_bundle(dir.path(), &plan, RecordStart::OnCycle, &records).unwrap();
    let (read_plan, read) = excite::read_bundle(dir.path()).unwrap();
    assert_eq!(read_plan, plan);
    assert_eq!(read.len(), records.len());
    for (a, b) in read.iter().zip(&records) {
        assert_eq!(a.clock_offset, b.clock_offset);
        assert_eq!(a.error.samples, b.error.samples);
        assert_eq!(a.error.t0, b.error.t0);
        // The step is recovered from the time column, so only to rounding.
        assert!((a.error.dt - b.error.dt).abs() < 1e-15);
        assert_eq!(a.max_deviation, b.max_deviation);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instantaneous_frequency_sweeps_linearly(f_lo in 0.0f64..3.0, span in 0.5f64..4.0, tau in 0.0f64..30.0) {
        let plan = ChirpPlan { f_lo, f_hi: f_lo + span, ..ChirpPlan::default() };
        // Numerical derivative of the phase against the closed form.
        let h = 1e-6;
        let phase = |t: f64| std::f64::consts::PI * span / plan.segment_duration * t * t + 2.0 * std::f64::consts::PI * f_lo * t;
        let numeric = (phase(tau + h) - phase(tau - h)) / (2.0 * h) / (2.0 * std::f64::consts::PI);
        prop_assert!((numeric - plan.instantaneous_freq(tau)).abs() < 1e-6);
        prop_assert!((plan.chirp(tau) - plan.amplitude * phase(tau).sin()).abs() < 1e-15);
    }
}
