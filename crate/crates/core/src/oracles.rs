//! Rule-based car-following laws and fixed-time signal evaluation.
//!
//! These are the ground-truth generators for training data and the
//! baselines the learned backend is compared against. All functions are
//! pure. Red lights are not modelled here; the rollout engine turns a red
//! signal into a virtual stopped leader at the stop line.
//!
//! Default parameter values are reconstructions: they follow the common
//! textbook IDM values and SUMO's Krauss defaults.

use alloc::vec::Vec;
use core::fmt;

use crate::math::{floor, pow, sqrt};
use crate::scenario::SignalProgramSpec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct IdmParams {
    /// desired speed, m/s
    pub v0: f64,
    /// time headway, s
    pub t: f64,
    /// maximum acceleration, m/s²
    pub a: f64,
    /// comfortable deceleration, m/s²
    pub b: f64,
    pub delta: f64,
    /// minimum standstill gap, m
    pub s0: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v0: 15.0, t: 1.5, a: 1.0, b: 1.5, delta: 4.0, s0: 2.0 }
    }
}

/// Krauss safe-speed model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct KraussParams {
    /// acceleration, m/s²
    pub a: f64,
    /// deceleration, m/s²
    pub b: f64,
    /// reaction time, s
    pub tau: f64,
    /// driver imperfection in [0, 1]
    pub sigma: f64,
    pub v_max: f64,
    /// Standstill clearance. Not used by [`krauss_next_speed`]; the rollout
    /// subtracts it from the bumper gap before calling it.
    pub min_gap: f64,
}

impl Default for KraussParams {
    fn default() -> Self {
        Self { a: 2.6, b: 4.5, tau: 1.0, sigma: 0.0, v_max: 15.0, min_gap: 2.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    NonPositiveGap(f64),
    NegativeSpeed(f64),
    EmptyProgram,
    NegativeTime(f64),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::NonPositiveGap(s) => write!(f, "IDM gap must be positive, got {s}"),
            OracleError::NegativeSpeed(v) => write!(f, "speed must be non-negative, got {v}"),
            OracleError::EmptyProgram => write!(f, "signal program has no phases"),
            OracleError::NegativeTime(t) => write!(f, "signal time must be non-negative, got {t}"),
        }
    }
}

impl core::error::Error for OracleError {}

impl IdmParams {
    pub fn is_valid(&self) -> bool {
        [self.v0, self.t, self.a, self.b, self.delta, self.s0]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        self.s0 + v * self.t + v * dv / (2.0 * sqrt(self.a * self.b))
    }

    /// Steady-state gap at speed `v` behind a leader at the same speed.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        (self.s0 + v * self.t) / sqrt(1.0 - pow(v / self.v0, self.delta))
    }
}

impl KraussParams {
    pub fn is_valid(&self) -> bool {
        [self.a, self.b, self.tau, self.v_max].iter().all(|x| x.is_finite() && *x > 0.0)
            && (0.0..=1.0).contains(&self.sigma)
            && self.min_gap.is_finite()
            && self.min_gap >= 0.0
    }
}

/// IDM acceleration. `dv` is follower speed minus leader speed.
///
/// The interaction term is not clipped, so emergency braking may exceed `b`.
pub fn idm_accel(v: f64, dv: f64, s: f64, p: &IdmParams) -> Result<f64, OracleError> {
    if !(s > 0.0) {
        return Err(OracleError::NonPositiveGap(s));
    }
    if v < 0.0 {
        return Err(OracleError::NegativeSpeed(v));
    }
    let ratio = p.desired_gap(v, dv) / s;
    Ok(p.a * (1.0 - pow(v / p.v0, p.delta) - ratio * ratio))
}

/// Krauss next speed. `noise` is a uniform draw in [0, 1]; it only matters
/// when `sigma > 0`.
pub fn krauss_next_speed(v_f: f64, v_l: f64, gap: f64, p: &KraussParams, dt: f64, noise: f64) -> f64 {
    let gap = gap.max(0.0);
    let v_f = v_f.max(0.0);
    let v_l = v_l.max(0.0);
    let v_safe = v_l + (gap - v_l * p.tau) / ((v_l + v_f) / (2.0 * p.b) + p.tau);
    let v_des = p.v_max.min(v_f + p.a * dt).min(v_safe);
    (v_des - p.sigma * p.a * dt * noise).max(0.0).min(p.v_max)
}

/// Active phase of a fixed-time program at time `t` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub index: usize,
    /// connection indices with right of way
    pub green: Vec<usize>,
    pub time_in_phase: f64,
}

pub fn signal_phase(program: &SignalProgramSpec, t: f64) -> Result<PhaseState, OracleError> {
    if program.phases.is_empty() {
        return Err(OracleError::EmptyProgram);
    }
    if !(t >= 0.0) {
        return Err(OracleError::NegativeTime(t));
    }
    let cycle = program.cycle();
    let mut rem = t - floor(t / cycle) * cycle;
    // floating wrap can land exactly on the cycle length
    if rem >= cycle {
        rem -= cycle;
    }
    let last = program.phases.len() - 1;
    for (index, phase) in program.phases.iter().enumerate() {
        if rem < phase.duration || index == last {
            return Ok(PhaseState { index, green: phase.green.clone(), time_in_phase: rem });
        }
        rem -= phase.duration;
    }
    unreachable!("loop returns on the last phase")
}
