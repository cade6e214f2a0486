//! Inter-spike bounds and perfect-recovery conditions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::MismatchBounds;
use crate::error::{ensure, Result, TemError};
use crate::numerics::bisect_boundary;
use crate::signal::recovery_nyquist;

/// Bracket width for [`max_nonsampling`].
pub const NONSAMPLING_TOL: f64 = 1e-10;

/// Accuracy of [`tune_kappa_sup`] on the condition value.
pub const TUNING_TOL: f64 = 1e-7;

fn check_amplitude(b: f64, c: f64, delta: f64) -> Result<()> {
    ensure(c >= 0.0 && c.is_finite(), || {
        format!("amplitude bound must be >= 0, got {c}")
    })?;
    ensure(delta > 0.0, || {
        format!("threshold must be positive, got {delta}")
    })?;
    if !(b > c) {
        return Err(TemError::InvalidArgument(format!(
            "bias {b} must exceed the amplitude bound {c}"
        )));
    }
    Ok(())
}

/// `T_min = sigma_inf delta/(b+c) + dis_inf`, `T_max = sigma_sup delta/(b-c) + dis_sup`.
pub fn interval_bounds(bounds: &MismatchBounds, b: f64, c: f64, delta: f64) -> Result<(f64, f64)> {
    calibrated_bounds(
        bounds,
        b,
        c,
        delta,
        bounds.delta_dis_inf,
        bounds.delta_dis_sup,
    )
}

/// Bounds with the discharge range replaced by the non-sampling range.
pub fn calibrated_bounds(
    bounds: &MismatchBounds,
    b: f64,
    c: f64,
    delta: f64,
    nonsampling_inf: f64,
    nonsampling_sup: f64,
) -> Result<(f64, f64)> {
    bounds.validate()?;
    check_amplitude(b, c, delta)?;
    ensure(
        0.0 <= nonsampling_inf && nonsampling_inf <= nonsampling_sup,
        || format!("non-sampling range [{nonsampling_inf}, {nonsampling_sup}]"),
    )?;
    Ok((
        bounds.sigma_inf() * delta / (b + c) + nonsampling_inf,
        bounds.sigma_sup() * delta / (b - c) + nonsampling_sup,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub t_min: f64,
    pub t_max: f64,
    /// `dis_sup` for the uncalibrated condition, `T_ns_sup` for the calibrated one.
    pub nonsampling_sup: f64,
    pub nyquist: f64,
    pub r: f64,
    pub epsilon: f64,
    /// `r + epsilon (1 + r)`.
    pub condition: f64,
    pub margin: f64,
    pub feasible: bool,
}

pub fn recovery_margin(
    t_min: f64,
    t_max: f64,
    nonsampling_sup: f64,
    omega_m: f64,
) -> Result<RecoveryReport> {
    ensure(t_min > 0.0 && t_max >= t_min, || {
        format!("need 0 < T_min <= T_max, got {t_min}, {t_max}")
    })?;
    ensure(nonsampling_sup >= 0.0, || {
        format!("non-sampling bound must be >= 0, got {nonsampling_sup}")
    })?;
    ensure(omega_m > 0.0, || {
        format!("omega_M must be positive, got {omega_m}")
    })?;
    let nyquist = recovery_nyquist(omega_m);
    let r = t_max / nyquist;
    let epsilon = (nonsampling_sup / t_min).sqrt();
    let condition = r + epsilon * (1.0 + r);
    let margin = 1.0 - condition;
    Ok(RecoveryReport {
        t_min,
        t_max,
        nonsampling_sup,
        nyquist,
        r,
        epsilon,
        condition,
        margin,
        feasible: margin > 0.0,
    })
}

/// The discharge-only condition.
pub fn uncalibrated_report(
    bounds: &MismatchBounds,
    b: f64,
    c: f64,
    delta: f64,
    omega_m: f64,
) -> Result<RecoveryReport> {
    let (t_min, t_max) = interval_bounds(bounds, b, c, delta)?;
    recovery_margin(t_min, t_max, bounds.delta_dis_sup, omega_m)
}

/// The condition with calibration intervals, `T_ns in [dis_inf, nonsampling_sup]`.
pub fn calibrated_report(
    bounds: &MismatchBounds,
    b: f64,
    c: f64,
    delta: f64,
    omega_m: f64,
    nonsampling_sup: f64,
) -> Result<RecoveryReport> {
    let (t_min, t_max) =
        calibrated_bounds(bounds, b, c, delta, bounds.delta_dis_inf, nonsampling_sup)?;
    recovery_margin(t_min, t_max, nonsampling_sup, omega_m)
}

/// Largest non-sampling duration for which the calibrated condition still holds.
///
/// Bisects the strictly decreasing margin on `[dis_sup, pi/omega_M]` until the bracket is
/// narrower than [`NONSAMPLING_TOL`] and returns its midpoint.
pub fn max_nonsampling(
    omega_m: f64,
    bounds: &MismatchBounds,
    b: f64,
    c: f64,
    delta: f64,
) -> Result<f64> {
    let lo = bounds.delta_dis_sup;
    let base = calibrated_report(bounds, b, c, delta, omega_m, lo)?;
    if base.margin < 0.0 {
        return Err(TemError::NoHeadroom {
            margin: base.margin,
        });
    }
    if base.margin == 0.0 {
        return Ok(lo);
    }
    let hi = recovery_nyquist(omega_m);
    let margin = |ns: f64| {
        calibrated_report(bounds, b, c, delta, omega_m, ns)
            .map(|r| r.margin)
            .unwrap_or(f64::NEG_INFINITY)
    };
    debug_assert!(margin(hi) <= 0.0);
    Ok(bisect_boundary(
        |ns| margin(ns) > 0.0,
        lo,
        hi,
        NONSAMPLING_TOL,
    ))
}

/// Everything except `kappa_sup` needed to evaluate the uncalibrated condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningSpec {
    /// `kappa_inf / kappa_sup`.
    pub kappa_ratio: f64,
    pub gamma_inf: f64,
    pub gamma_sup: f64,
    pub delta_dis_inf: f64,
    pub delta_dis_sup: f64,
    pub bias: f64,
    pub amplitude_bound: f64,
    pub threshold: f64,
    pub omega_m: f64,
}

impl TuningSpec {
    pub fn bounds(&self, kappa_sup: f64) -> MismatchBounds {
        MismatchBounds {
            kappa_inf: self.kappa_ratio * kappa_sup,
            kappa_sup,
            gamma_inf: self.gamma_inf,
            gamma_sup: self.gamma_sup,
            delta_dis_inf: self.delta_dis_inf,
            delta_dis_sup: self.delta_dis_sup,
        }
    }

    pub fn condition(&self, kappa_sup: f64) -> Result<f64> {
        Ok(uncalibrated_report(
            &self.bounds(kappa_sup),
            self.bias,
            self.amplitude_bound,
            self.threshold,
            self.omega_m,
        )?
        .condition)
    }

    /// Above this `kappa_sup` the sampling term alone gives `r >= 1`.
    fn kappa_ceiling(&self) -> f64 {
        recovery_nyquist(self.omega_m) * (self.bias - self.amplitude_bound) * self.gamma_inf
            / self.threshold
    }
}

/// Picks `kappa_sup` so that `r + epsilon (1 + r)` equals `target`.
///
/// The condition is not monotone in `kappa_sup`: as it shrinks, `T_min` approaches
/// `dis_inf` and `epsilon` tends to `sqrt(dis_sup / dis_inf) >= 1`. The search first
/// locates the minimum and then solves on the rising branch, which is the one with
/// sparse firing.
pub fn tune_kappa_sup(target: f64, spec: &TuningSpec) -> Result<f64> {
    ensure(target > 0.0 && target.is_finite(), || {
        format!("target must be positive, got {target}")
    })?;
    ensure(spec.kappa_ratio > 0.0 && spec.kappa_ratio <= 1.0, || {
        format!("kappa ratio must lie in (0, 1], got {}", spec.kappa_ratio)
    })?;
    check_amplitude(spec.bias, spec.amplitude_bound, spec.threshold)?;
    let ceiling = spec.kappa_ceiling();
    let f = |k: f64| spec.condition(k).unwrap_or(f64::INFINITY);

    // Coarse log grid, then golden section around the best node.
    const NODES: usize = 241;
    let lo_exp = -12.0_f64;
    let node = |i: usize| ceiling * 10f64.powf(lo_exp * (1.0 - i as f64 / (NODES - 1) as f64));
    let best = (0..NODES)
        .min_by(|&i, &j| f(node(i)).total_cmp(&f(node(j))))
        .expect("grid is non-empty");
    let (mut a, mut b) = (
        node(best.saturating_sub(1)),
        node((best + 1).min(NODES - 1)),
    );
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b {
            break;
        }
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if f(x1) < f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let k_min = 0.5 * (a + b);
    let f_min = f(k_min);
    if f_min >= target {
        return Err(TemError::Tuning(format!(
            "the condition never drops below {f_min:.6}, target {target} is unattainable"
        )));
    }
    if f(ceiling) < target {
        return Err(TemError::Tuning(format!(
            "target {target} lies above the attainable range"
        )));
    }
    let (mut lo, mut hi) = (k_min, ceiling);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v - target).abs() <= TUNING_TOL || mid == lo || mid == hi {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(TemError::Tuning("bisection did not converge".into()))
}

impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>16.6e} s", "T_min", self.t_min)?;
        writeln!(f, "{:<18}{:>16.6e} s", "T_max", self.t_max)?;
        writeln!(
            f,
            "{:<18}{:>16.6e} s",
            "non-sampling sup", self.nonsampling_sup
        )?;
        writeln!(f, "{:<18}{:>16.6e} s", "T_nyq (pi/omega)", self.nyquist)?;
        writeln!(f, "{:<18}{:>16.6}", "r", self.r)?;
        writeln!(f, "{:<18}{:>16.6}", "epsilon", self.epsilon)?;
        writeln!(f, "{:<18}{:>16.6}", "r + eps(1+r)", self.condition)?;
        writeln!(f, "{:<18}{:>16.6}", "margin", self.margin)?;
        write!(f, "{:<18}{:>16}", "feasible", self.feasible)
    }
}
