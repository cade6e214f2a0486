//! Reference-injection calibration: planning, simulation and the 2x2 estimator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, fmt_opt, write_rows};
use crate::encoder::{InjectionSchedule, MismatchBounds, MismatchSchedule, SpikeTrain};
use crate::error::{ensure, Result, TemError};
use crate::reconstruction::IntervalParams;

/// Fraction of the admissible `delta_cali / (V + b)` actually used.
pub const THRESHOLD_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub k: usize,
    /// First reference level `V`; the second is `alpha V`.
    pub level: f64,
    pub alpha: f64,
    pub bias: f64,
    pub thresholds: [f64; 2],
    /// `delta_cali / (V + b)` for both injections.
    pub lambdas: [f64; 2],
    pub nonsampling_sup: f64,
    /// Right-hand side of the admissibility inequality, `(T_ns_sup - 2 dis_sup) / sigma_sup`.
    pub lambda_cap: f64,
}

impl CalibrationPlan {
    pub fn levels(&self) -> [f64; 2] {
        [self.level, self.alpha * self.level]
    }

    pub fn injections(&self) -> InjectionSchedule {
        InjectionSchedule {
            k: self.k,
            levels: self.levels(),
            thresholds: self.thresholds,
        }
    }

    /// Longest possible `T_v + dis_sup` under the given bounds.
    pub fn worst_case_duration(&self, bounds: &MismatchBounds) -> f64 {
        let lam = self.lambdas[0].max(self.lambdas[1]);
        lam * bounds.sigma_sup() + 2.0 * bounds.delta_dis_sup
    }
}

fn lambda(threshold: f64, level: f64, bias: f64) -> f64 {
    threshold / (level + bias)
}

/// Chooses one threshold shared by both injections, as large as the admissibility
/// inequality allows for both levels after the safety factor.
///
/// Using each level's own largest threshold would give the two injections the same
/// `lambda` and make the estimator singular.
pub fn plan_calibration(
    bounds: &MismatchBounds,
    bias: f64,
    nonsampling_sup: f64,
    k: usize,
    level: f64,
    alpha: f64,
) -> Result<CalibrationPlan> {
    bounds.validate()?;
    ensure(k >= 1, || "injection gap k must be at least 1".into())?;
    if alpha == 1.0 {
        return Err(TemError::IllConditioned {
            lambda_first: f64::NAN,
            lambda_second: f64::NAN,
        });
    }
    let levels = [level, alpha * level];
    for v in levels {
        ensure(v + bias > 0.0, || {
            format!("reference level {v} + bias {bias} must be positive")
        })?;
    }
    if !(nonsampling_sup > 2.0 * bounds.delta_dis_sup) {
        return Err(TemError::InfeasibleCalibration(format!(
            "T_ns_sup = {nonsampling_sup:e} s leaves no room beyond twice the discharge bound {:e} s",
            bounds.delta_dis_sup
        )));
    }
    let cap = (nonsampling_sup - 2.0 * bounds.delta_dis_sup) / bounds.sigma_sup();
    let threshold = THRESHOLD_SAFETY * cap * (levels[0] + bias).min(levels[1] + bias);
    let lambdas = [
        lambda(threshold, levels[0], bias),
        lambda(threshold, levels[1], bias),
    ];
    check_conditioning(lambdas)?;
    Ok(CalibrationPlan {
        k,
        level,
        alpha,
        bias,
        thresholds: [threshold, threshold],
        lambdas,
        nonsampling_sup,
        lambda_cap: cap,
    })
}

fn check_conditioning(l: [f64; 2]) -> Result<()> {
    if (l[0] - l[1]).abs() < 1e3 * f64::EPSILON * l[0].abs().max(l[1].abs()) {
        return Err(TemError::IllConditioned {
            lambda_first: l[0],
            lambda_second: l[1],
        });
    }
    Ok(())
}

/// `T_v = threshold sigma / (level + b) + dis` for a constant injected level.
pub fn simulate_injection(
    bias: f64,
    sigma: f64,
    delta_dis: f64,
    level: f64,
    threshold: f64,
) -> Result<f64> {
    ensure(level + bias > 0.0, || {
        format!("invalid level: {level} + {bias} <= 0")
    })?;
    Ok(threshold / (level + bias) * sigma + delta_dis)
}

/// Solves `T_v = lambda sigma + dis` for the two injections.
pub fn estimate_from_lambdas(t_v: [f64; 2], lambdas: [f64; 2]) -> Result<(f64, f64)> {
    check_conditioning(lambdas)?;
    let sigma_hat = (t_v[0] - t_v[1]) / (lambdas[0] - lambdas[1]);
    let delta_dis_hat = t_v[0] - lambdas[0] * sigma_hat;
    if !(sigma_hat > 0.0) || !(delta_dis_hat >= 0.0) {
        return Err(TemError::ImplausibleEstimate {
            sigma_hat,
            delta_dis_hat,
        });
    }
    Ok((sigma_hat, delta_dis_hat))
}

pub fn estimate_params(t_v: [f64; 2], plan: &CalibrationPlan) -> Result<(f64, f64)> {
    estimate_from_lambdas(t_v, plan.lambdas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    Ok,
    /// Implausible estimate replaced by the nearest point of the bounds box.
    Clamped,
    /// No complete injection pair in the segment; estimates copied from a neighbour.
    Carried,
}

impl EstimateFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateFlag::Ok => "ok",
            EstimateFlag::Clamped => "clamped",
            EstimateFlag::Carried => "carried",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub segment: usize,
    pub t_v: Option<[f64; 2]>,
    pub sigma_hat: f64,
    pub delta_dis_hat: f64,
    pub sigma_true: f64,
    pub delta_dis_true: f64,
    pub flag: EstimateFlag,
    /// Segment span the estimates apply to.
    pub span: (f64, f64),
}

/// Per-segment estimates from the injections recorded in `train`.
pub fn calibrate_train(
    train: &SpikeTrain,
    plan: &CalibrationPlan,
    schedule: &MismatchSchedule,
) -> Result<Vec<CalibrationRecord>> {
    let bounds = schedule.bounds();
    let n = schedule.segments().len();
    let mut measured: Vec<[Option<f64>; 2]> = vec![[None, None]; n];
    for iv in &train.intervals {
        if let Some(inj) = iv.injection {
            measured[iv.segment][inj.slot] = Some(inj.t_v);
        }
    }
    let mut estimates: Vec<Option<(f64, f64, EstimateFlag)>> = measured
        .iter()
        .map(|m| match (m[0], m[1]) {
            (Some(a), Some(b)) => Some(match estimate_params([a, b], plan) {
                Ok((s, d)) => Ok((s, d, EstimateFlag::Ok)),
                Err(TemError::ImplausibleEstimate {
                    sigma_hat,
                    delta_dis_hat,
                }) => Ok((
                    clamp_or(sigma_hat, bounds.sigma_inf(), bounds.sigma_sup()),
                    clamp_or(delta_dis_hat, bounds.delta_dis_inf, bounds.delta_dis_sup),
                    EstimateFlag::Clamped,
                )),
                Err(e) => Err(e),
            }),
            _ => None,
        })
        .map(|o| o.transpose())
        .collect::<Result<_>>()?;

    let Some(first) = estimates.iter().position(Option::is_some) else {
        return Err(TemError::InfeasibleCalibration(
            "no segment holds a complete injection pair".into(),
        ));
    };
    let mut last = estimates[first].expect("present");
    for e in estimates.iter_mut() {
        match e {
            Some(v) => last = *v,
            None => *e = Some((last.0, last.1, EstimateFlag::Carried)),
        }
    }

    Ok((0..n)
        .map(|s| {
            let (sigma_hat, delta_dis_hat, flag) = estimates[s].expect("filled");
            let seg = schedule.segments()[s];
            let t_v = match measured[s] {
                [Some(a), Some(b)] => Some([a, b]),
                _ => None,
            };
            CalibrationRecord {
                segment: s,
                t_v,
                sigma_hat,
                delta_dis_hat,
                sigma_true: seg.sigma(),
                delta_dis_true: seg.delta_dis,
                flag,
                span: (
                    schedule.segment_start(s),
                    schedule.segment_start(s) + schedule.segment_length(),
                ),
            }
        })
        .collect())
}

/// Interval parameters built from the per-segment estimates.
///
/// The discharge estimate comes from the segment of the firing and the scaling estimate
/// from the segment where integration resumes, mirroring the encoder. Calibration
/// intervals add the measured `T_v` and the discharge estimate after the calibration firing.
pub fn estimated_params(
    train: &SpikeTrain,
    records: &[CalibrationRecord],
    schedule: &MismatchSchedule,
) -> Result<IntervalParams> {
    if records.len() != schedule.segments().len() {
        return Err(TemError::LengthMismatch {
            what: "calibration records vs segments",
            left: records.len(),
            right: schedule.segments().len(),
        });
    }
    let seg_of = |t: f64, fallback: usize| schedule.segment_index(t).unwrap_or(fallback);
    let mut sigma = Vec::with_capacity(train.intervals.len());
    let mut nonsampling = Vec::with_capacity(train.intervals.len());
    for iv in &train.intervals {
        let dis = records[iv.segment].delta_dis_hat;
        let (ns, resume_from) = match iv.injection {
            Some(inj) => {
                let after = records[seg_of(inj.fire_time, iv.segment)].delta_dis_hat;
                (inj.t_v + after, inj.fire_time + after)
            }
            None => (dis, iv.start + dis),
        };
        sigma.push(records[seg_of(resume_from, iv.segment)].sigma_hat);
        nonsampling.push(ns);
    }
    Ok(IntervalParams { sigma, nonsampling })
}

fn clamp_or(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        lo
    } else {
        v.clamp(lo, hi)
    }
}

pub fn write_calibration_csv(records: &[CalibrationRecord], path: &Path) -> Result<()> {
    let header = [
        "segment_index",
        "T_v1",
        "T_v2",
        "sigma_hat",
        "delta_dis_hat",
        "sigma_true",
        "delta_dis_true",
        "flag",
    ];
    let rows = records.iter().map(|r| {
        vec![
            r.segment.to_string(),
            fmt_opt(r.t_v.map(|t| t[0])),
            fmt_opt(r.t_v.map(|t| t[1])),
            fmt_f64(r.sigma_hat),
            fmt_f64(r.delta_dis_hat),
            fmt_f64(r.sigma_true),
            fmt_f64(r.delta_dis_true),
            r.flag.as_str().to_string(),
        ]
    });
    write_rows(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> MismatchBounds {
        MismatchBounds {
            kappa_inf: 0.00229,
            kappa_sup: 0.002361,
            gamma_inf: 0.98,
            gamma_sup: 1.002,
            delta_dis_inf: 2.85e-6,
            delta_dis_sup: 3e-6,
        }
    }

    #[test]
    fn injection_closed_form() {
        let t = simulate_injection(2.0, 0.0023, 0.0, 0.5, 1.0).unwrap();
        assert!((t - 0.0023 / 2.5).abs() < 1e-18);
        let t = simulate_injection(1.5, 0.0023, 3e-6, 1.0, 1.0).unwrap();
        assert!((t - (0.00092 + 3e-6)).abs() < 1e-18);
        assert_eq!(
            simulate_injection(1.0, 0.0023, 3e-6, 0.2, 0.0).unwrap(),
            3e-6
        );
        assert!(simulate_injection(1.0, 0.0023, 3e-6, -1.0, 1.0).is_err());
        // level + b = sigma * threshold gives one second.
        let t = simulate_injection(0.0, 0.5, 0.0, 0.5 * 4.0, 4.0).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn plan_respects_admissible_lambda() {
        let b = 1.48094;
        let plan = plan_calibration(&bounds(), b, 26e-6, 2, 0.5, -1.0).unwrap();
        let cap = 20e-6 / bounds().sigma_sup();
        assert!((plan.lambda_cap - cap).abs() < 1e-15 * cap);
        for (i, v) in plan.levels().iter().enumerate() {
            let lam = plan.thresholds[i] / (v + b);
            assert!(lam < cap);
            assert_eq!(lam, plan.lambdas[i]);
        }
        assert!((plan.lambdas[1] - THRESHOLD_SAFETY * cap).abs() < 1e-14 * cap);
        assert!(plan.worst_case_duration(&bounds()) < 26e-6);
    }

    #[test]
    fn plan_rejects_boundary_and_singular_inputs() {
        assert!(matches!(
            plan_calibration(&bounds(), 1.5, 6e-6, 2, 0.5, -1.0),
            Err(TemError::InfeasibleCalibration(_))
        ));
        assert!(matches!(
            plan_calibration(&bounds(), 1.5, 26e-6, 2, 0.5, 1.0),
            Err(TemError::IllConditioned { .. })
        ));
        assert!(plan_calibration(&bounds(), 1.5, 26e-6, 2, 0.0, -1.0).is_err());
    }

    #[test]
    fn estimator_round_trip() {
        let plan = plan_calibration(&bounds(), 1.48094, 26e-6, 2, 0.5, -1.0).unwrap();
        let (sigma, dis) = (0.00231, 2.9e-6);
        let tv = [0, 1].map(|i| {
            simulate_injection(plan.bias, sigma, dis, plan.levels()[i], plan.thresholds[i]).unwrap()
        });
        let (s, d) = estimate_params(tv, &plan).unwrap();
        assert!(((s - sigma) / sigma).abs() < 1e-12);
        assert!(((d - dis) / dis).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_rejected() {
        assert!(matches!(
            estimate_from_lambdas([1e-5, 1e-5], [0.004, 0.004]),
            Err(TemError::IllConditioned { .. })
        ));
    }

    #[test]
    fn implausible_estimates_carry_values() {
        let err = estimate_from_lambdas([1e-5, 2e-5], [0.004, 0.002]).unwrap_err();
        match err {
            TemError::ImplausibleEstimate { sigma_hat, .. } => assert!(sigma_hat < 0.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn drift_between_injections_biases_estimate() {
        let plan = plan_calibration(&bounds(), 1.48094, 26e-6, 2, 0.5, -1.0).unwrap();
        let (sigma, dis) = (0.00231, 2.9e-6);
        let drift = 1.03;
        let t1 = plan.lambdas[0] * sigma + dis;
        let t2 = plan.lambdas[1] * sigma * drift + dis;
        let (s, d) = estimate_from_lambdas([t1, t2], plan.lambdas).unwrap_or_else(|e| match e {
            TemError::ImplausibleEstimate {
                sigma_hat,
                delta_dis_hat,
            } => (sigma_hat, delta_dis_hat),
            e => panic!("{e}"),
        });
        // Closed form of the biased solution.
        let l = plan.lambdas;
        let want_s = (t1 - t2) / (l[0] - l[1]);
        assert!((s - want_s).abs() < 1e-15);
        let bias = s - sigma;
        let expected = -0.03 * sigma * l[1] / (l[0] - l[1]);
        assert!((bias - expected).abs() < 1e-12 * sigma);
        assert!((d - (t1 - l[0] * s)).abs() < 1e-18);
    }
}
