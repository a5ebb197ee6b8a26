//! Wall-clock scaling benchmark.

use std::time::Instant;

use tgsim_core::analysis::{scaling_report, AnalysisError, MetricsReport};
use tgsim_core::sim::{run, RolloutConfig, SimError};
use tgsim_core::{ScenarioError, ScenarioSpec};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

/// Steps needed for every scheduled departure plus `tail` steps to clear.
pub fn covering_horizon(spec: &ScenarioSpec, tail: u64) -> u64 {
    let d = &spec.demand;
    if d.count == 0 {
        tail
    } else {
        d.depart_step(d.count - 1) + tail
    }
}

/// Shortest timed sample. Rollouts faster than this are repeated within a
/// sample and the mean per run is recorded, so timer and scheduler noise
/// stay small next to the measured time.
const MIN_SAMPLE_S: f64 = 0.05;

/// Runs the rollout at each demand multiplier (count scaled, headway
/// divided, so the departure window stays fixed) and records the median
/// per-run wall time of `repetitions` samples after one warm-up run. Only
/// the simulation is timed.
pub fn scaling_benchmark(
    spec: &ScenarioSpec,
    cfg: &RolloutConfig,
    scales: &[f64],
    repetitions: usize,
) -> Result<MetricsReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    if scales.len() < 2 {
        return Err(AnalysisError::TooFewScales(scales.len()).into());
    }
    if !scales.is_sorted_by(|a, b| a < b) || scales[0] <= 0.0 {
        return Err(AnalysisError::UnsortedScales.into());
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &m in scales {
        let scaled = spec.with_demand_scale(m)?;
        // warm-up, kept out of the samples, sizes the inner loop
        let t0 = Instant::now();
        std::hint::black_box(run(&scaled, cfg)?);
        let warm = t0.elapsed().as_secs_f64();
        let inner = (MIN_SAMPLE_S / warm.max(1e-6)).ceil().clamp(1.0, 1000.0) as usize;
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            for _ in 0..inner {
                std::hint::black_box(run(&scaled, cfg)?);
            }
            times.push(t0.elapsed().as_secs_f64() / inner as f64);
        }
        times.sort_by(f64::total_cmp);
        rows.push((m, scaled.demand.count, times[times.len() / 2]));
    }
    Ok(scaling_report(&rows)?)
}
