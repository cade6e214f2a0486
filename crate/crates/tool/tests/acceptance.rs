//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tem_core::calibration::{calibrate_train, estimate_params, plan_calibration};
use tem_core::encoder::{
    constant_crossing, encode, EncoderConfig, MismatchBounds, MismatchSchedule, Segment, SpikeTrain,
};
use tem_core::feasibility::{calibrated_bounds, interval_bounds, max_nonsampling};
use tem_core::harness::{run_experiment, ExperimentConfig, Mode, SignalSetup};
use tem_core::reconstruction::{
    measurements, nmse, reconstruct_neumann, reconstruct_pinv, Centering, FrameOperator, Grid,
    MeasurementSet, NeumannOptions,
};
use tem_core::signal::{BandlimitedSignal, SincKernel};

const ZERO_SIGNAL_TOL: f64 = 1e-10;
const T_TRANSFORM_REL_TOL: f64 = 1e-9;
const ORACLE_TOL: f64 = 1e-7;
const ORACLE_STEPS_PER_NYQUIST: f64 = 1e4;
const ESTIMATOR_REL_TOL: f64 = 1e-10;
const RANDOM_DRAWS: usize = 1000;
const SCAL_MAX_DB: f64 = -80.0;
const GENIE_MAX_DB: f64 = -80.0;
const IDEAL_MAX_DB: f64 = -80.0;
const BLIND_MIN_DB: f64 = -30.0;
const GAP_MIN_DB: f64 = 50.0;
const CROSS_METHOD_MAX_DB: f64 = -70.0;
const CONTRACTION_SLACK: f64 = 0.05;
const ADJOINT_TOL: f64 = 1e-8;
const ADJOINT_PAIRS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Check {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let checks = [
        Check {
            id: 1,
            name: "zero-signal closed form",
            limit: secs(1),
            run: zero_signal,
        },
        Check {
            id: 2,
            name: "t-transform identity",
            limit: secs(60),
            run: t_transform,
        },
        Check {
            id: 3,
            name: "interval bound containment",
            limit: secs(120),
            run: bound_containment,
        },
        Check {
            id: 4,
            name: "encoder vs brute-force integrator",
            limit: secs(300),
            run: encoder_oracle,
        },
        Check {
            id: 5,
            name: "estimator exactness",
            limit: secs(10),
            run: estimator_exactness,
        },
        Check {
            id: 6,
            name: "calibration fits non-sampling budget",
            limit: secs(10),
            run: calibration_budget,
        },
        Check {
            id: 7,
            name: "batch NMSE reproduction",
            limit: secs(1800),
            run: nmse_reproduction,
        },
        Check {
            id: 8,
            name: "Neumann vs pseudoinverse",
            limit: secs(600),
            run: cross_method,
        },
        Check {
            id: 9,
            name: "iteration contraction factor",
            limit: secs(600),
            run: contraction,
        },
        Check {
            id: 10,
            name: "frame operator adjoint",
            limit: secs(600),
            run: adjoint,
        },
        Check {
            id: 11,
            name: "experiment determinism",
            limit: secs(1800),
            run: determinism,
        },
    ];
    let mut failed = 0;
    for c in &checks {
        let t0 = Instant::now();
        let out = (c.run)();
        let took = t0.elapsed();
        let in_time = took <= c.limit;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let time_note = if in_time {
            String::new()
        } else {
            format!(" over {:.0} s limit", c.limit.as_secs_f64())
        };
        println!(
            "criterion {:>2} {} {:<38} {} [{:.2} s{}]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            out.detail,
            took.as_secs_f64(),
            time_note
        );
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn config() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn setup(index: usize) -> SignalSetup {
    SignalSetup::prepare(&config(), index).expect("signal setup")
}

fn truth_measurements(s: &SignalSetup, train: &SpikeTrain) -> MeasurementSet {
    let params = tem_core::reconstruction::IntervalParams::truth(train);
    measurements(
        train,
        &params,
        s.encoder.bias,
        s.encoder.threshold,
        Centering::SpikeMidpoint,
    )
    .expect("measurements")
}

fn zero_signal() -> Outcome {
    let signal = BandlimitedSignal::new(200.0 * PI, vec![0.0; 25]).unwrap();
    let seg = Segment {
        kappa: 0.0023,
        xi: 1.002,
        delta_dis: 2.9e-6,
    };
    let w = signal.window();
    let schedule = MismatchSchedule::constant(w.0, w.1, 0.04, seg).unwrap();
    let b = 0.9;
    let cfg = EncoderConfig::new(b, 1.0, 0.5).unwrap();
    let train = encode(&signal, &cfg, &schedule, w, None).unwrap();
    let expected = seg.sigma() / b + seg.delta_dis;
    let worst = train
        .intervals
        .iter()
        .map(|iv| (iv.duration() - expected).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: !train.intervals.is_empty() && worst <= ZERO_SIGNAL_TOL,
        detail: format!(
            "{} intervals, max |T - T*| = {worst:.2e} s",
            train.intervals.len()
        ),
    }
}

fn t_transform() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..20 {
        let s = setup(i);
        let scale = s.bounds.sigma_inf() * s.encoder.threshold;
        for train in [s.encode_clean().unwrap(), s.encode_field().unwrap()] {
            let ms = truth_measurements(&s, &train);
            for n in 0..ms.len() {
                let q = s.signal.integrate(ms.a[n], ms.b[n], 1e-14).unwrap();
                worst = worst.max((q - ms.p[n]).abs() / scale);
                count += 1;
            }
        }
    }
    Outcome {
        pass: worst <= T_TRANSFORM_REL_TOL,
        detail: format!("{count} intervals, max error {worst:.2e} sigma delta"),
    }
}

fn bound_containment() -> Outcome {
    let mut violations = 0;
    let mut count = 0;
    for i in 0..50 {
        let s = setup(i);
        let (b, c, d) = (
            s.encoder.bias,
            s.encoder.amplitude_bound,
            s.encoder.threshold,
        );
        let (lo, hi) = interval_bounds(&s.bounds, b, c, d).unwrap();
        let clean = s.encode_clean().unwrap();
        for iv in &clean.intervals {
            count += 1;
            if !(lo <= iv.duration() && iv.duration() <= hi) {
                violations += 1;
            }
        }
        let (lo, hi) = calibrated_bounds(
            &s.bounds,
            b,
            c,
            d,
            s.bounds.delta_dis_inf,
            s.nonsampling_sup,
        )
        .unwrap();
        let field = s.encode_field().unwrap();
        for iv in &field.intervals {
            count += 1;
            if !(lo <= iv.duration() && iv.duration() <= hi) {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in {count} intervals"),
    }
}

/// Fixed-step trapezoid from each resume time, crossing interpolated inside the last step.
fn brute_force(s: &SignalSetup, h: f64) -> Vec<f64> {
    let sched = &s.schedule;
    let seg_of = |t: f64| {
        let i = ((t - sched.origin()) / sched.segment_length()).floor() as usize;
        sched.segments()[i.min(sched.segments().len() - 1)]
    };
    let b = s.encoder.bias;
    let f = |t: f64| s.signal.eval(t) + b;
    let (w0, w1) = s.window;
    let mut out = vec![w0];
    let mut t = w0;
    'outer: loop {
        let resume = t + seg_of(t).delta_dis;
        let target = seg_of(resume).sigma() * s.encoder.threshold;
        let (mut acc, mut x, mut fx) = (0.0, resume, f(resume));
        loop {
            if x > w1 {
                break 'outer;
            }
            let fy = f(x + h);
            let inc = 0.5 * h * (fx + fy);
            if acc + inc >= target {
                let end = x + h * (target - acc) / inc;
                if end > w1 {
                    break 'outer;
                }
                out.push(end);
                t = end;
                break;
            }
            acc += inc;
            x += h;
            fx = fy;
        }
    }
    out
}

fn encoder_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    for i in 0..5 {
        let s = setup(i);
        let h = s.signal.recovery_nyquist() / ORACLE_STEPS_PER_NYQUIST;
        let got = s.encode_clean().unwrap().firing_times();
        let want = brute_force(&s, h);
        if got.len() != want.len() {
            mismatched += 1;
        }
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        pass: mismatched == 0 && worst <= ORACLE_TOL,
        detail: format!("max |dt| = {worst:.2e} s, {mismatched} count mismatches"),
    }
}

fn estimator_exactness() -> Outcome {
    let s = setup(0);
    let plan = s.plan;
    let bd = s.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_DRAWS {
        let kappa = rng.random_range(bd.kappa_inf..=bd.kappa_sup);
        let xi = rng.random_range(bd.gamma_inf..=bd.gamma_sup);
        let dis = rng.random_range(bd.delta_dis_inf..=bd.delta_dis_sup);
        let sigma = kappa / xi;
        let t_v = [0, 1].map(|i| {
            dis + constant_crossing(plan.levels()[i], plan.bias, sigma, plan.thresholds[i]).unwrap()
        });
        let (s_hat, d_hat) = estimate_params(t_v, &plan).unwrap();
        worst = worst
            .max((s_hat - sigma).abs() / sigma)
            .max((d_hat - dis).abs() / dis);
    }
    Outcome {
        pass: worst <= ESTIMATOR_REL_TOL,
        detail: format!("{RANDOM_DRAWS} draws, max relative error {worst:.2e}"),
    }
}

fn calibration_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let omega = 200.0 * PI;
    let (mut plans, mut violations, mut attempts) = (0, 0, 0);
    let mut tightest = f64::INFINITY;
    while plans < RANDOM_DRAWS && attempts < 100 * RANDOM_DRAWS {
        attempts += 1;
        let c = rng.random_range(0.5..5.0);
        let b = c * rng.random_range(1.05..2.0);
        let kappa_sup = rng.random_range(1e-3..5e-3) * b;
        let dis_sup = rng.random_range(1e-6..5e-6);
        let bounds = MismatchBounds {
            kappa_inf: kappa_sup * rng.random_range(0.9..1.0),
            kappa_sup,
            gamma_inf: rng.random_range(0.95..1.0),
            gamma_sup: rng.random_range(1.0..1.05),
            delta_dis_inf: dis_sup * rng.random_range(0.9..1.0),
            delta_dis_sup: dis_sup,
        };
        let Ok(ns_max) = max_nonsampling(omega, &bounds, b, c, 1.0) else {
            continue;
        };
        let ns_sup = rng.random_range(2.0 * dis_sup..=ns_max.max(2.0 * dis_sup));
        let level = c * rng.random_range(0.05..0.95);
        let alpha = rng.random_range(-1.0..0.9);
        let k = rng.random_range(1..5);
        let Ok(plan) = plan_calibration(&bounds, b, ns_sup, k, level, alpha) else {
            continue;
        };
        plans += 1;
        let sigma = rng.random_range(bounds.kappa_inf..=bounds.kappa_sup)
            / rng.random_range(bounds.gamma_inf..=bounds.gamma_sup);
        let dis = rng.random_range(bounds.delta_dis_inf..=bounds.delta_dis_sup);
        for i in 0..2 {
            let t_v =
                dis + constant_crossing(plan.levels()[i], b, sigma, plan.thresholds[i]).unwrap();
            let slack = ns_sup - (t_v + bounds.delta_dis_sup);
            tightest = tightest.min(slack / ns_sup);
            if slack <= 0.0 {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: plans == RANDOM_DRAWS && violations == 0,
        detail: format!(
            "{plans} plans, {violations} violations, min relative slack {tightest:.3e}"
        ),
    }
}

fn nmse_reproduction() -> Outcome {
    let cfg = ExperimentConfig {
        num_signals: 20,
        ..config()
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: e.to_string(),
            }
        }
    };
    let m = |mode| report.mean(mode).unwrap_or(f64::NAN);
    let (ideal, blind, scal, genie) = (
        m(Mode::Ideal),
        m(Mode::Blind),
        m(Mode::Scal),
        m(Mode::Genie),
    );
    let gap = blind - scal;
    let pass = report.failures == 0
        && scal <= SCAL_MAX_DB
        && genie <= GENIE_MAX_DB
        && ideal <= IDEAL_MAX_DB
        && blind >= BLIND_MIN_DB
        && gap >= GAP_MIN_DB;
    Outcome {
        pass,
        detail: format!(
            "mean dB: ideal {ideal:.2}, blind {blind:.2}, scal {scal:.2}, genie {genie:.2}; gap {gap:.2}; failures {}",
            report.failures
        ),
    }
}

struct Prepared {
    s: SignalSetup,
    ms: MeasurementSet,
    kernel: SincKernel,
    grid: Grid,
    window: (f64, f64),
}

fn prepared(index: usize, mode: Mode, ppn: usize) -> Prepared {
    let s = setup(index);
    let clean = s.encode_clean().unwrap();
    let field = s.encode_field().unwrap();
    let records = calibrate_train(&field, &s.plan, &s.schedule).unwrap();
    let train = match mode {
        Mode::Ideal | Mode::Blind => &clean,
        Mode::Scal | Mode::Genie => &field,
    };
    let params = s.mode_params(mode, &clean, &field, &records).unwrap();
    let ms = measurements(
        train,
        &params,
        s.encoder.bias,
        s.encoder.threshold,
        Centering::SpikeMidpoint,
    )
    .unwrap();
    let nyq = s.signal.recovery_nyquist();
    let end = train.intervals.last().unwrap().end;
    let grid = Grid::new(s.window.0, end, nyq / ppn as f64).unwrap();
    let window = (grid.point(0) + 2.0 * nyq, grid.end() - 2.0 * nyq);
    let kernel = SincKernel::new(s.signal.omega_m()).unwrap();
    Prepared {
        s,
        ms,
        kernel,
        grid,
        window,
    }
}

fn cross_method() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut notes = Vec::new();
    for i in 0..5 {
        let p = prepared(i, Mode::Scal, 16);
        let a = reconstruct_neumann(
            &p.ms,
            &p.kernel,
            &p.grid,
            p.window,
            NeumannOptions::default(),
        );
        let b = reconstruct_pinv(&p.ms, &p.kernel, &p.grid, None);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let idx = p.grid.window_indices(p.window.0, p.window.1);
                let db = nmse(&a.samples, &b.samples, &idx).unwrap();
                worst = worst.max(db);
                notes.push(format!("{db:.1}"));
            }
            (a, b) => {
                worst = f64::INFINITY;
                notes.push(format!("{:?}/{:?}", a.err(), b.err()));
            }
        }
    }
    Outcome {
        pass: worst <= CROSS_METHOD_MAX_DB,
        detail: format!("cross-NMSE dB per config [{}]", notes.join(", ")),
    }
}

/// Per-step factor `|x_{l+1} - x_l| / |x_l - x_{l-1}|` over the first 31 plain
/// iterations, against `r + eps (1 + r)` plus slack. Also reports `|x - A x| / |x|`
/// on the interior window for reference.
fn contraction() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for i in 0..5 {
        let p = prepared(i, Mode::Ideal, 16);
        let bound = p.s.uncalibrated.condition + CONTRACTION_SLACK;
        let opts = NeumannOptions {
            max_iters: 31,
            stop_tol: 0.0,
            plain_iters: 31,
        };
        let r = reconstruct_neumann(&p.ms, &p.kernel, &p.grid, p.window, opts).unwrap();
        let ratios = r.increment_ratios();
        let factor = ratios.iter().copied().fold(0.0, f64::max);
        let first_over = ratios.iter().position(|&q| q > bound).map_or(0, |k| k + 1);

        let x0 = reconstruct_neumann(
            &p.ms,
            &p.kernel,
            &p.grid,
            p.window,
            NeumannOptions {
                max_iters: 0,
                ..opts
            },
        )
        .unwrap();
        let idx = p.grid.window_indices(p.window.0, p.window.1);
        let truth: Vec<f64> = x0.times.iter().map(|&t| p.s.signal.eval(t)).collect();
        let first_step = 10f64.powf(nmse(&truth, &x0.samples, &idx).unwrap() / 20.0);

        pass &= factor <= bound;
        notes.push(format!(
            "#{i}: factor {factor:.3} vs {bound:.3} (exceeded at step {first_over}), |x-Ax|/|x| {first_step:.4}"
        ));
    }
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn adjoint() -> Outcome {
    let p = prepared(0, Mode::Ideal, 8);
    let op = FrameOperator::new(&p.ms, p.kernel, p.grid.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..ADJOINT_PAIRS {
        let x: Vec<f64> = (0..p.grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..p.grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lhs = op.inner(&op.apply(&x), &y);
        let rhs = op.inner(&x, &op.adjoint(&y));
        let scale = op.inner(&x, &x).sqrt() * op.inner(&y, &y).sqrt();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Outcome {
        pass: worst <= ADJOINT_TOL,
        detail: format!("{ADJOINT_PAIRS} pairs, max relative gap {worst:.2e}"),
    }
}

fn run_cli(out: &Path, threads: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_tem"))
        .args(["--seed", "7", "--out"])
        .arg(out)
        .args(["experiment", "--num-signals", "4"])
        .env("TEM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "exit {:?}: {}",
            status.status.code(),
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let a = run_cli(&out, "1");
    let b = run_cli(&out, "3");
    match (a, b) {
        (Ok(a), Ok(b)) => Outcome {
            pass: a == b,
            detail: format!("summary.json {} bytes, identical: {}", a.len(), a == b),
        },
        (a, b) => Outcome {
            pass: false,
            detail: format!("{:?} {:?}", a.err(), b.err()),
        },
    }
}
