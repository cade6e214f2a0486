//! Batch evaluation of the four samplers on random signals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_train, estimated_params, plan_calibration, CalibrationPlan, CalibrationRecord,
    EstimateFlag,
};
use crate::csvio::{fmt_f64, fmt_opt, write_rows};
use crate::encoder::{
    encode, EncoderConfig, MismatchBounds, MismatchSchedule, Segment, SpikeTrain,
};
use crate::error::{Result, TemError};
use crate::feasibility::{
    calibrated_report, max_nonsampling, tune_kappa_sup, uncalibrated_report, RecoveryReport,
    TuningSpec,
};
use crate::reconstruction::{
    measurements, nmse, reconstruct_neumann, Centering, Grid, IntervalParams, NeumannOptions,
    ReconstructionResult,
};
use crate::signal::{BandlimitedSignal, CoeffDistribution, SincKernel, RNG_ALGORITHM};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "TEM_THREADS";

/// Gain for segments whose peak of `x + b` falls in the low, middle and high third of
/// `[b - c, b + c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiRule {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for XiRule {
    fn default() -> Self {
        Self {
            low: 1.0,
            mid: 0.98,
            high: 1.002,
        }
    }
}

impl XiRule {
    pub fn pick(&self, peak: f64, bias: f64, c: f64) -> f64 {
        if c <= 0.0 {
            return self.low;
        }
        let q = (peak - (bias - c)) / (2.0 * c);
        if q < 1.0 / 3.0 {
            self.low
        } else if q < 2.0 / 3.0 {
            self.mid
        } else {
            self.high
        }
    }

    fn range(&self) -> (f64, f64) {
        let v = [self.low, self.mid, self.high];
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub k: usize,
    /// First reference level as a fraction of `c`.
    pub level_fraction: f64,
    pub alpha: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            k: 2,
            level_fraction: 0.5,
            alpha: -1.0,
        }
    }
}

/// Values pinned by hand instead of derived per signal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Rescale each signal so its amplitude bound equals this value.
    pub amplitude: Option<f64>,
    pub bias: Option<f64>,
    pub kappa_range: Option<[f64; 2]>,
    pub nonsampling_sup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub num_signals: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub omega_m: f64,
    pub threshold: f64,
    pub bias_multiplier: f64,
    pub segment_length: f64,
    pub xi_levels: XiRule,
    pub delta_dis_range: [f64; 2],
    /// Relative width of the kappa range, `1 - kappa_inf / kappa_sup`.
    pub kappa_variation: f64,
    /// Target value of `r + eps (1 + r)` when tuning `kappa_sup`.
    pub condition_target: f64,
    pub calibration: CalibrationSettings,
    pub seed: u64,
    pub points_per_nyquist: usize,
    pub neumann: NeumannOptions,
    pub centering: Centering,
    /// Hold every segment at the calculated parameters.
    pub zero_drift: bool,
    pub overrides: Overrides,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            num_signals: 50,
            m: 12,
            omega_m: 200.0 * PI,
            threshold: 1.0,
            bias_multiplier: 1.3,
            segment_length: 0.04,
            xi_levels: XiRule::default(),
            delta_dis_range: [2.85e-6, 3e-6],
            kappa_variation: 0.03,
            condition_target: 0.8,
            calibration: CalibrationSettings::default(),
            seed: 0,
            points_per_nyquist: 32,
            neumann: NeumannOptions::default(),
            centering: Centering::SpikeMidpoint,
            zero_drift: false,
            overrides: Overrides::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Single-signal setup with the hand-picked values of the worked example figure.
    pub fn fig3() -> Self {
        let bias = 1.48094;
        Self {
            num_signals: 1,
            overrides: Overrides {
                amplitude: Some(bias / 1.3),
                bias: Some(bias),
                kappa_range: Some([0.00229, 0.002361]),
                nonsampling_sup: Some(26e-6),
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TemError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| TemError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TemError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.m < 1 || !(self.omega_m > 0.0) || !(self.threshold > 0.0) {
            return bad("M, omega_m and threshold must be positive".into());
        }
        if !(self.bias_multiplier > 1.0) {
            return bad(format!(
                "bias_multiplier must exceed 1, got {}",
                self.bias_multiplier
            ));
        }
        if !(self.segment_length > 0.0) {
            return bad("segment_length must be positive".into());
        }
        let [d0, d1] = self.delta_dis_range;
        if !(0.0 <= d0 && d0 <= d1) {
            return bad(format!("delta_dis_range [{d0}, {d1}] is empty"));
        }
        let (g0, _) = self.xi_levels.range();
        if !(g0 > 0.0) {
            return bad("xi levels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.kappa_variation) {
            return bad(format!(
                "kappa_variation must lie in [0, 1), got {}",
                self.kappa_variation
            ));
        }
        if !(self.condition_target > 0.0 && self.condition_target < 1.0) {
            return bad(format!(
                "condition_target must lie in (0, 1), got {}",
                self.condition_target
            ));
        }
        if self.calibration.k < 1 || self.calibration.alpha == 1.0 {
            return bad("calibration needs k >= 1 and alpha != 1".into());
        }
        if self.points_per_nyquist < 8 {
            return bad("points_per_nyquist must be at least 8".into());
        }
        if let Some([k0, k1]) = self.overrides.kappa_range {
            if !(0.0 < k0 && k0 <= k1) {
                return bad(format!("kappa_range [{k0}, {k1}] is empty"));
            }
        }
        Ok(())
    }

    fn rng(&self, index: usize, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * index as u64 + purpose);
        rng
    }

    /// Coefficient stream of signal `index`.
    pub fn signal(&self, index: usize) -> Result<BandlimitedSignal> {
        let mut rng = self.rng(index, 0);
        let s = BandlimitedSignal::generate(
            self.m,
            self.omega_m,
            CoeffDistribution::StandardNormal,
            &mut rng,
        )?;
        match self.overrides.amplitude {
            Some(a) if s.amplitude_bound() > 0.0 => s.scaled(a / s.amplitude_bound()),
            _ => Ok(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ideal,
    Blind,
    Scal,
    Genie,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ideal, Mode::Blind, Mode::Scal, Mode::Genie];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Ideal => "ideal",
            Mode::Blind => "blind",
            Mode::Scal => "scal",
            Mode::Genie => "genie",
        }
    }
}

/// Everything fixed for one signal before encoding.
#[derive(Debug, Clone)]
pub struct SignalSetup {
    pub index: usize,
    pub signal: BandlimitedSignal,
    pub encoder: EncoderConfig,
    pub bounds: MismatchBounds,
    pub schedule: MismatchSchedule,
    pub nonsampling_sup: f64,
    pub plan: CalibrationPlan,
    pub uncalibrated: RecoveryReport,
    pub calibrated: RecoveryReport,
    pub window: (f64, f64),
}

impl SignalSetup {
    pub fn prepare(cfg: &ExperimentConfig, index: usize) -> Result<Self> {
        let signal = cfg.signal(index)?;
        Self::with_signal(cfg, index, signal)
    }

    pub fn with_signal(
        cfg: &ExperimentConfig,
        index: usize,
        signal: BandlimitedSignal,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = signal.amplitude_bound();
        if c <= 0.0 {
            return Err(TemError::InvalidArgument(
                "signal is identically zero".into(),
            ));
        }
        let bias = cfg.overrides.bias.unwrap_or(cfg.bias_multiplier * c);
        let encoder = EncoderConfig::new(bias, cfg.threshold, c)?;
        let (gamma_inf, gamma_sup) = cfg.xi_levels.range();
        let [dis_inf, dis_sup] = cfg.delta_dis_range;
        let [kappa_inf, kappa_sup] = match cfg.overrides.kappa_range {
            Some(r) => r,
            None => {
                let spec = TuningSpec {
                    kappa_ratio: 1.0 - cfg.kappa_variation,
                    gamma_inf,
                    gamma_sup,
                    delta_dis_inf: dis_inf,
                    delta_dis_sup: dis_sup,
                    bias,
                    amplitude_bound: c,
                    threshold: cfg.threshold,
                    omega_m: cfg.omega_m,
                };
                let k = tune_kappa_sup(cfg.condition_target, &spec)?;
                [spec.kappa_ratio * k, k]
            }
        };
        let bounds = MismatchBounds {
            kappa_inf,
            kappa_sup,
            gamma_inf,
            gamma_sup,
            delta_dis_inf: dis_inf,
            delta_dis_sup: dis_sup,
        };
        let window = signal.window();
        let n_seg = ((window.1 - window.0) / cfg.segment_length - 1e-9)
            .ceil()
            .max(1.0) as usize;
        let mut rng = cfg.rng(index, 1);
        let segments = (0..n_seg)
            .map(|s| {
                let lo = window.0 + s as f64 * cfg.segment_length;
                let peak = signal.max_on(lo, (lo + cfg.segment_length).min(window.1)) + bias;
                if cfg.zero_drift {
                    Segment {
                        kappa: kappa_sup,
                        xi: 1.0_f64.clamp(gamma_inf, gamma_sup),
                        delta_dis: dis_sup,
                    }
                } else {
                    Segment {
                        kappa: uniform(&mut rng, kappa_inf, kappa_sup),
                        xi: cfg.xi_levels.pick(peak, bias, c),
                        delta_dis: uniform(&mut rng, dis_inf, dis_sup),
                    }
                }
            })
            .collect();
        let schedule = MismatchSchedule::new(window.0, cfg.segment_length, segments, bounds)?;
        let uncalibrated = uncalibrated_report(&bounds, bias, c, cfg.threshold, cfg.omega_m)?;
        let nonsampling_sup = match cfg.overrides.nonsampling_sup {
            Some(v) => v,
            None => max_nonsampling(cfg.omega_m, &bounds, bias, c, cfg.threshold)?,
        };
        let plan = plan_calibration(
            &bounds,
            bias,
            nonsampling_sup,
            cfg.calibration.k,
            cfg.calibration.level_fraction * c,
            cfg.calibration.alpha,
        )?;
        let calibrated = calibrated_report(
            &bounds,
            bias,
            c,
            cfg.threshold,
            cfg.omega_m,
            nonsampling_sup,
        )?;
        Ok(Self {
            index,
            signal,
            encoder,
            bounds,
            schedule,
            nonsampling_sup,
            plan,
            uncalibrated,
            calibrated,
            window,
        })
    }

    /// Train without injections, used by the ideal and blind samplers.
    pub fn encode_clean(&self) -> Result<SpikeTrain> {
        encode(
            &self.signal,
            &self.encoder,
            &self.schedule,
            self.window,
            None,
        )
    }

    /// Train with reference injections, used by the calibrating samplers.
    pub fn encode_field(&self) -> Result<SpikeTrain> {
        encode(
            &self.signal,
            &self.encoder,
            &self.schedule,
            self.window,
            Some(&self.plan.injections()),
        )
    }

    /// Interval parameters each sampler would use.
    pub fn mode_params(
        &self,
        mode: Mode,
        clean: &SpikeTrain,
        field: &SpikeTrain,
        records: &[CalibrationRecord],
    ) -> Result<IntervalParams> {
        match mode {
            Mode::Ideal => Ok(IntervalParams::truth(clean)),
            Mode::Genie => Ok(IntervalParams::truth(field)),
            Mode::Blind => {
                let first = self.schedule.segments()[0];
                Ok(IntervalParams::constant(
                    clean,
                    first.kappa,
                    first.delta_dis,
                ))
            }
            Mode::Scal => estimated_params(field, records, &self.schedule),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Outcome of one sampler on one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub nmse_db: Option<f64>,
    pub iterations: Option<usize>,
    pub measurements: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub kappa_true: f64,
    pub xi_true: f64,
    pub sigma_true: f64,
    pub delta_dis_true: f64,
    pub sigma_hat: f64,
    pub delta_dis_hat: f64,
    pub sigma_error: f64,
    pub delta_dis_error: f64,
    pub flag: EstimateFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub amplitude_bound: f64,
    pub bias: f64,
    pub bounds: MismatchBounds,
    pub nonsampling_sup: f64,
    pub plan: CalibrationPlan,
    pub uncalibrated: RecoveryReport,
    pub calibrated: RecoveryReport,
    pub clean_intervals: usize,
    pub field_intervals: usize,
    pub calibration_firings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub index: usize,
    pub setup: Option<SetupSummary>,
    pub modes: BTreeMap<Mode, ModeReport>,
    pub segments: Vec<SegmentReport>,
    pub failure: Option<String>,
}

impl SignalReport {
    pub fn nmse(&self, mode: Mode) -> Option<f64> {
        self.modes.get(&mode).and_then(|m| m.nmse_db)
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && Mode::ALL.iter().all(|m| self.nmse(*m).is_some())
    }
}

/// Samples of the first signal, kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTrace {
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub estimates: BTreeMap<Mode, Vec<f64>>,
    pub segments: Vec<SegmentReport>,
}

/// Everything produced for one signal.
pub struct SignalRun {
    pub report: SignalReport,
    pub trace: Option<ExampleTrace>,
}

/// Encodes, calibrates and reconstructs one signal with all four samplers.
pub fn run_signal(cfg: &ExperimentConfig, index: usize) -> SignalRun {
    match SignalSetup::prepare(cfg, index) {
        Ok(setup) => run_setup(cfg, &setup),
        Err(e) => SignalRun {
            report: SignalReport {
                index,
                setup: None,
                modes: BTreeMap::new(),
                segments: Vec::new(),
                failure: Some(e.to_string()),
            },
            trace: None,
        },
    }
}

pub fn run_setup(cfg: &ExperimentConfig, setup: &SignalSetup) -> SignalRun {
    let fail = |e: TemError| SignalRun {
        report: SignalReport {
            index: setup.index,
            setup: None,
            modes: BTreeMap::new(),
            segments: Vec::new(),
            failure: Some(e.to_string()),
        },
        trace: None,
    };
    let clean = match setup.encode_clean() {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let field = match setup.encode_field() {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let records = match calibrate_train(&field, &setup.plan, &setup.schedule) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let segments: Vec<SegmentReport> = records
        .iter()
        .map(|r| {
            let seg = setup.schedule.segments()[r.segment];
            SegmentReport {
                segment: r.segment,
                kappa_true: seg.kappa,
                xi_true: seg.xi,
                sigma_true: r.sigma_true,
                delta_dis_true: r.delta_dis_true,
                sigma_hat: r.sigma_hat,
                delta_dis_hat: r.delta_dis_hat,
                sigma_error: r.sigma_hat - r.sigma_true,
                delta_dis_error: r.delta_dis_hat - r.delta_dis_true,
                flag: r.flag,
            }
        })
        .collect();

    let nyquist = setup.signal.recovery_nyquist();
    let start = setup.window.0;
    let end = last_firing(&clean).min(last_firing(&field));
    let kernel = SincKernel::new(cfg.omega_m).expect("validated omega");
    let grid = match Grid::new(start, end, nyquist / cfg.points_per_nyquist as f64) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let times = grid.points();
    let truth: Vec<f64> = times.iter().map(|&t| setup.signal.eval(t)).collect();
    let interior = grid.window_indices(start + 2.0 * nyquist, end - 2.0 * nyquist);

    let mut modes = BTreeMap::new();
    let mut estimates = BTreeMap::new();
    for mode in Mode::ALL {
        let train = match mode {
            Mode::Ideal | Mode::Blind => &clean,
            Mode::Scal | Mode::Genie => &field,
        };
        let result = setup
            .mode_params(mode, &clean, &field, &records)
            .and_then(|p| measurements(train, &p, setup.encoder.bias, cfg.threshold, cfg.centering))
            .and_then(|ms| {
                let window = (grid.point(0) + 2.0 * nyquist, grid.end() - 2.0 * nyquist);
                reconstruct_neumann(&ms, &kernel, &grid, window, cfg.neumann).map(|r| (ms.len(), r))
            })
            .and_then(|(count, r): (usize, ReconstructionResult)| {
                let db = nmse(&truth, &r.samples, &interior)?;
                Ok((count, r, db))
            });
        let report = match result {
            Ok((count, r, db)) => {
                let iterations = r.iterations;
                estimates.insert(mode, r.samples);
                ModeReport {
                    nmse_db: Some(db),
                    iterations: Some(iterations),
                    measurements: Some(count),
                    error: None,
                }
            }
            Err(e) => ModeReport {
                nmse_db: None,
                iterations: None,
                measurements: None,
                error: Some(e.to_string()),
            },
        };
        modes.insert(mode, report);
    }

    let summary = SetupSummary {
        amplitude_bound: setup.encoder.amplitude_bound,
        bias: setup.encoder.bias,
        bounds: setup.bounds,
        nonsampling_sup: setup.nonsampling_sup,
        plan: setup.plan,
        uncalibrated: setup.uncalibrated,
        calibrated: setup.calibrated,
        clean_intervals: clean.intervals.len(),
        field_intervals: field.intervals.len(),
        calibration_firings: field.calibration_count(),
    };
    SignalRun {
        report: SignalReport {
            index: setup.index,
            setup: Some(summary),
            modes,
            segments: segments.clone(),
            failure: None,
        },
        trace: Some(ExampleTrace {
            times,
            truth,
            estimates,
            segments,
        }),
    }
}

fn last_firing(train: &SpikeTrain) -> f64 {
    train.intervals.last().map_or(train.window.0, |iv| iv.end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub count: usize,
    pub mean_nmse_db: Option<f64>,
    /// Largest (least negative) NMSE.
    pub worst_nmse_db: Option<f64>,
    pub best_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rng: String,
    pub signals: Vec<SignalReport>,
    pub aggregates: BTreeMap<Mode, ModeAggregate>,
    /// `mean(blind) - mean(scal)` in dB.
    pub improvement_db: Option<f64>,
    pub failures: usize,
    #[serde(skip)]
    pub runtime_secs: f64,
    #[serde(skip)]
    pub example: Option<ExampleTrace>,
}

impl ExperimentReport {
    pub fn from_runs(config: ExperimentConfig, runs: Vec<SignalRun>, runtime_secs: f64) -> Self {
        let mut example = None;
        let mut signals = Vec::with_capacity(runs.len());
        for run in runs {
            if example.is_none() && run.report.index == 0 {
                example = run.trace;
            }
            signals.push(run.report);
        }
        let aggregates: BTreeMap<Mode, ModeAggregate> = Mode::ALL
            .iter()
            .map(|&m| {
                let v: Vec<f64> = signals.iter().filter_map(|s| s.nmse(m)).collect();
                let agg = ModeAggregate {
                    count: v.len(),
                    mean_nmse_db: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
                    worst_nmse_db: v.iter().copied().reduce(f64::max),
                    best_nmse_db: v.iter().copied().reduce(f64::min),
                };
                (m, agg)
            })
            .collect();
        let improvement_db = match (
            aggregates[&Mode::Blind].mean_nmse_db,
            aggregates[&Mode::Scal].mean_nmse_db,
        ) {
            (Some(b), Some(s)) => Some(b - s),
            _ => None,
        };
        let failures = signals.iter().filter(|s| !s.is_complete()).count();
        Self {
            config,
            rng: RNG_ALGORITHM.to_string(),
            signals,
            aggregates,
            improvement_db,
            failures,
            runtime_secs,
            example,
        }
    }

    pub fn mean(&self, mode: Mode) -> Option<f64> {
        self.aggregates.get(&mode).and_then(|a| a.mean_nmse_db)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8}{:>8}{:>14}{:>14}{:>14}\n",
            "mode", "count", "mean [dB]", "worst [dB]", "best [dB]"
        );
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        for (m, a) in &self.aggregates {
            out += &format!(
                "{:<8}{:>8}{:>14}{:>14}{:>14}\n",
                m.as_str(),
                a.count,
                cell(a.mean_nmse_db),
                cell(a.worst_nmse_db),
                cell(a.best_nmse_db)
            );
        }
        out += &format!(
            "improvement blind -> scal: {} dB\n",
            cell(self.improvement_db)
        );
        out += &format!("signals with failures: {}\n", self.failures);
        out
    }
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs every signal of the batch on a worker pool; per-signal failures are recorded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| TemError::Config(format!("worker pool: {e}")))?;
    let runs: Vec<SignalRun> = pool.install(|| {
        (0..cfg.num_signals)
            .into_par_iter()
            .map(|i| run_signal(cfg, i))
            .collect()
    });
    Ok(ExperimentReport::from_runs(
        cfg.clone(),
        runs,
        started.elapsed().as_secs_f64(),
    ))
}

/// Writes `fig3a.csv` .. `fig3d.csv` for the first signal and `summary.json`.
pub fn emit_plotdata(report: &ExperimentReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| TemError::io(outdir, e))?;
    let ex = report.example.as_ref();
    let mut written = Vec::new();

    let path = outdir.join("fig3a.csv");
    let mut header = vec!["t", "x"];
    header.extend(Mode::ALL.iter().map(Mode::as_str));
    let rows: Vec<Vec<String>> = ex
        .map(|ex| {
            (0..ex.times.len())
                .map(|j| {
                    let mut row = vec![fmt_f64(ex.times[j]), fmt_f64(ex.truth[j])];
                    row.extend(
                        Mode::ALL
                            .iter()
                            .map(|m| fmt_opt(ex.estimates.get(m).map(|v| v[j]))),
                    );
                    row
                })
                .collect()
        })
        .unwrap_or_default();
    write_rows(&path, &header, rows)?;
    written.push(path);

    let segs: &[SegmentReport] = ex.map_or(&[], |e| &e.segments);
    let path = outdir.join("fig3b.csv");
    write_rows(
        &path,
        &["segment", "delta_dis_true", "delta_dis_est"],
        segs.iter().map(|s| {
            vec![
                s.segment.to_string(),
                fmt_f64(s.delta_dis_true),
                fmt_f64(s.delta_dis_hat),
            ]
        }),
    )?;
    written.push(path);

    let path = outdir.join("fig3c.csv");
    write_rows(
        &path,
        &["segment", "kappa_true", "sigma_true", "sigma_est"],
        segs.iter().map(|s| {
            vec![
                s.segment.to_string(),
                fmt_f64(s.kappa_true),
                fmt_f64(s.sigma_true),
                fmt_f64(s.sigma_hat),
            ]
        }),
    )?;
    written.push(path);

    let path = outdir.join("fig3d.csv");
    write_rows(
        &path,
        &["segment", "xi_true"],
        segs.iter()
            .map(|s| vec![s.segment.to_string(), fmt_f64(s.xi_true)]),
    )?;
    written.push(path);

    let path = outdir.join("summary.json");
    std::fs::write(&path, report.summary_json()?).map_err(|e| TemError::io(&path, e))?;
    written.push(path);
    Ok(written)
}
