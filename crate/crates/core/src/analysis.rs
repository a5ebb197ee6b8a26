//! Evaluation metrics: speed-deviation histograms, trace errors, DCI
//! comparisons and runtime scaling fits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math::{abs, floor, sqrt};
use crate::sim::{TrajectoryLog, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    InvalidHistogram,
    NoLeaderRows,
    EmptyIntersection,
    TooFewRuns(usize),
    TooFewScales(usize),
    UnsortedScales,
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::InvalidHistogram => write!(f, "histogram bin width and range must be positive"),
            AnalysisError::NoLeaderRows => write!(f, "trajectory has no rows with a vehicle leader"),
            AnalysisError::EmptyIntersection => write!(f, "trajectories share no (step, vehicle) rows"),
            AnalysisError::TooFewRuns(n) => write!(f, "need at least 2 runs to compare, got {n}"),
            AnalysisError::TooFewScales(n) => write!(f, "need at least 2 scales, got {n}"),
            AnalysisError::UnsortedScales => write!(f, "scales must be strictly ascending"),
        }
    }
}

impl core::error::Error for AnalysisError {}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HistogramSpec {
    pub bin_width: f64,
    pub range: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { bin_width: 0.5, range: 5.0 }
    }
}

/// Normalized histogram with bins centered on multiples of the bin width.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub samples: usize,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn modal_bin(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.mass.iter().enumerate() {
            if *m > self.mass[best] {
                best = i;
            }
        }
        best
    }

    pub fn modal_center(&self) -> f64 {
        self.centers()[self.modal_bin()]
    }
}

pub fn histogram(samples: &[f64], spec: HistogramSpec) -> Result<Histogram, AnalysisError> {
    let w = spec.bin_width;
    if !(w > 0.0 && spec.range > 0.0 && w.is_finite() && spec.range.is_finite()) {
        return Err(AnalysisError::InvalidHistogram);
    }
    let side = floor(spec.range / w + 1e-9) as i64;
    let nbins = (2 * side + 1) as usize;
    let edges = (0..=nbins).map(|i| (i as i64 - side) as f64 * w - 0.5 * w).collect();
    let mut counts = alloc::vec![0usize; nbins];
    for x in samples {
        let k = (floor(x / w + 0.5) as i64).clamp(-side, side);
        counts[(k + side) as usize] += 1;
    }
    let n = samples.len();
    let mass = counts.iter().map(|c| if n == 0 { 0.0 } else { *c as f64 / n as f64 }).collect();
    Ok(Histogram { edges, mass, samples: n })
}

/// `v_leader − v_follower` for every row whose leader is a vehicle.
pub fn speed_deviations(log: &TrajectoryLog) -> Vec<f64> {
    let speed: BTreeMap<(u64, VehicleId), f64> =
        log.rows.iter().map(|r| ((r.step, r.vehicle_id), r.speed_mps)).collect();
    log.rows
        .iter()
        .filter_map(|r| {
            let l = r.leader_id?;
            speed.get(&(r.step, l)).map(|vl| vl - r.speed_mps)
        })
        .collect()
}

pub fn speed_deviation_histogram(log: &TrajectoryLog, spec: HistogramSpec) -> Result<Histogram, AnalysisError> {
    let dv = speed_deviations(log);
    if dv.is_empty() {
        // still validate the spec first so a bad spec is reported as such
        histogram(&dv, spec)?;
        return Err(AnalysisError::NoLeaderRows);
    }
    histogram(&dv, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "lowercase"))]
pub enum TraceField {
    Speed,
    Accel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceError {
    pub rmse: f64,
    pub matched: usize,
    /// mean of the field in `ref` over the matched rows
    pub ref_mean: f64,
}

/// Root mean squared difference of `field` over rows present in both logs.
pub fn trace_rmse(reference: &TrajectoryLog, cmp: &TrajectoryLog, field: TraceField) -> Result<TraceError, AnalysisError> {
    let pick = |r: &crate::sim::TrajectoryRow| match field {
        TraceField::Speed => r.speed_mps,
        TraceField::Accel => r.accel_mps2,
    };
    let mut a: Vec<((u64, VehicleId), f64)> = reference.rows.iter().map(|r| ((r.step, r.vehicle_id), pick(r))).collect();
    let mut b: Vec<((u64, VehicleId), f64)> = cmp.rows.iter().map(|r| ((r.step, r.vehicle_id), pick(r))).collect();
    a.sort_by_key(|x| x.0);
    b.sort_by_key(|x| x.0);
    let (mut i, mut j) = (0, 0);
    let (mut sq, mut sum_ref, mut n) = (0.0, 0.0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                let d = a[i].1 - b[j].1;
                sq += d * d;
                sum_ref += a[i].1;
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if n == 0 {
        return Err(AnalysisError::EmptyIntersection);
    }
    Ok(TraceError { rmse: sqrt(sq / n as f64), matched: n, ref_mean: sum_ref / n as f64 })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScalingRow {
    pub multiplier: f64,
    pub agents: usize,
    pub wall_s: f64,
    pub pct_agents: f64,
    pub pct_runtime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricsReport {
    pub metrics: Vec<Metric>,
    pub histogram: Option<Histogram>,
    pub scaling: Vec<ScalingRow>,
    pub fit: Option<LinearFit>,
}

impl MetricsReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric { name: name.into(), value });
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.metrics.is_empty() {
            let w = self.metrics.iter().map(|m| m.name.len()).max().unwrap_or(0);
            for m in &self.metrics {
                writeln!(f, "{:<w$}  {:>14.6}", m.name, m.value)?;
            }
        }
        if let Some(h) = &self.histogram {
            writeln!(f)?;
            writeln!(f, "{:>8}  {:>8}  (n = {})", "dv_mps", "mass", h.samples)?;
            for (c, m) in h.centers().iter().zip(&h.mass) {
                writeln!(f, "{c:>8.2}  {m:>8.4}")?;
            }
        }
        if !self.scaling.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:>6}  {:>8}  {:>10}  {:>9}  {:>10}", "scale", "agents", "wall_s", "%agents", "%runtime")?;
            for r in &self.scaling {
                writeln!(
                    f,
                    "{:>6.2}  {:>8}  {:>10.4}  {:>9.1}  {:>10.1}",
                    r.multiplier, r.agents, r.wall_s, r.pct_agents, r.pct_runtime
                )?;
            }
        }
        if let Some(fit) = &self.fit {
            writeln!(f)?;
            writeln!(
                f,
                "runtime = {:.6e} * agents + {:.6e}   R^2 = {:.4}",
                fit.slope, fit.intercept, fit.r2
            )?;
        }
        Ok(())
    }
}

/// Speed RMSE of each run against `reference`. `dci_ordering_ok` is 1 when
/// the error does not decrease as the interval grows.
pub fn dci_report(reference: &TrajectoryLog, runs: &[(u32, TrajectoryLog)]) -> Result<MetricsReport, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns(runs.len()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (dci, log) in runs {
        rows.push((*dci, trace_rmse(reference, log, TraceField::Speed)?.rmse));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ordered = rows.windows(2).all(|w| w[0].1 <= w[1].1);
    let mut report = MetricsReport::default();
    for (dci, rmse) in &rows {
        report.push(format!("speed_rmse_dci{dci}"), *rmse);
    }
    report.push("dci_ordering_ok", if ordered { 1.0 } else { 0.0 });
    Ok(report)
}

/// Ordinary least squares `y = slope·x + intercept` with R² clamped to [0, 1].
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| {
        let r = b - slope * a - intercept;
        r * r
    })
    .sum();
    let r2: f64 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res <= 1e-30 { 1.0 } else { 0.0 };
    LinearFit { slope, intercept, r2: r2.clamp(0.0, 1.0) }
}

/// Builds the scaling table from `(multiplier, agents, wall seconds)`
/// measurements; percentages are relative to the first row.
pub fn scaling_report(measurements: &[(f64, usize, f64)]) -> Result<MetricsReport, AnalysisError> {
    if measurements.len() < 2 {
        return Err(AnalysisError::TooFewScales(measurements.len()));
    }
    if measurements.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(AnalysisError::UnsortedScales);
    }
    let (_, a0, t0) = measurements[0];
    let scaling: Vec<ScalingRow> = measurements
        .iter()
        .map(|&(multiplier, agents, wall_s)| ScalingRow {
            multiplier,
            agents,
            wall_s,
            pct_agents: 100.0 * (agents as f64 - a0 as f64) / a0.max(1) as f64,
            pct_runtime: if t0 > 0.0 { 100.0 * (wall_s - t0) / t0 } else { 0.0 },
        })
        .collect();
    let xs: Vec<f64> = scaling.iter().map(|r| r.agents as f64).collect();
    let ys: Vec<f64> = scaling.iter().map(|r| r.wall_s).collect();
    let fit = linear_fit(&xs, &ys);
    let mut report = MetricsReport { scaling, fit: Some(fit), ..Default::default() };
    report.push("fit_r2", fit.r2);
    Ok(report)
}

/// Fidelity summary of `cmp` against `reference`: speed and acceleration
/// RMSE, matched rows, mean |Δv| to the leader, violations, and the
/// speed-deviation histogram of `cmp`.
pub fn compare_logs(
    reference: &TrajectoryLog,
    cmp: &TrajectoryLog,
    spec: HistogramSpec,
) -> Result<MetricsReport, AnalysisError> {
    let speed = trace_rmse(reference, cmp, TraceField::Speed)?;
    let accel = trace_rmse(reference, cmp, TraceField::Accel)?;
    let dv = speed_deviations(cmp);
    let mut report = MetricsReport::default();
    report.push("speed_rmse_mps", speed.rmse);
    report.push("accel_rmse_mps2", accel.rmse);
    report.push("matched_rows", speed.matched as f64);
    report.push("ref_mean_speed_mps", speed.ref_mean);
    if speed.ref_mean > 0.0 {
        report.push("speed_rmse_rel", speed.rmse / speed.ref_mean);
    }
    if !dv.is_empty() {
        report.push("mean_abs_dv_mps", dv.iter().map(|x| abs(*x)).sum::<f64>() / dv.len() as f64);
        report.push("within_1mps", dv.iter().filter(|x| abs(**x) <= 1.0).count() as f64 / dv.len() as f64);
    }
    report.push("violations", cmp.violations as f64);
    report.histogram = Some(speed_deviation_histogram(cmp, spec)?);
    Ok(report)
}
