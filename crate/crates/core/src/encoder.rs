//! Practical integrate-and-fire encoder with piecewise-constant device mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, write_rows};
use crate::error::{ensure, Result, TemError};
use crate::numerics::{brent, BrentOptions};
use crate::signal::BandlimitedSignal;

/// Relative accuracy of every threshold crossing, `|F| <= tol * sigma * delta`.
pub const CROSSING_TOL: f64 = 1e-13;

/// Global bounds on the mismatch parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchBounds {
    pub kappa_inf: f64,
    pub kappa_sup: f64,
    pub gamma_inf: f64,
    pub gamma_sup: f64,
    pub delta_dis_inf: f64,
    pub delta_dis_sup: f64,
}

impl MismatchBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        ensure(ok(self.kappa_inf, self.kappa_sup), || {
            format!("kappa bounds [{}, {}]", self.kappa_inf, self.kappa_sup)
        })?;
        ensure(ok(self.gamma_inf, self.gamma_sup), || {
            format!("gamma bounds [{}, {}]", self.gamma_inf, self.gamma_sup)
        })?;
        ensure(
            self.delta_dis_inf >= 0.0 && self.delta_dis_inf <= self.delta_dis_sup,
            || {
                format!(
                    "discharge bounds [{}, {}]",
                    self.delta_dis_inf, self.delta_dis_sup
                )
            },
        )
    }

    pub fn sigma_inf(&self) -> f64 {
        self.kappa_inf / self.gamma_sup
    }

    pub fn sigma_sup(&self) -> f64 {
        self.kappa_sup / self.gamma_inf
    }

    pub fn contains(&self, seg: &Segment) -> bool {
        (self.kappa_inf..=self.kappa_sup).contains(&seg.kappa)
            && (self.gamma_inf..=self.gamma_sup).contains(&seg.xi)
            && (self.delta_dis_inf..=self.delta_dis_sup).contains(&seg.delta_dis)
    }
}

/// True parameters of one wall-clock segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kappa: f64,
    pub xi: f64,
    pub delta_dis: f64,
}

impl Segment {
    pub fn sigma(&self) -> f64 {
        self.kappa / self.xi
    }
}

/// Segment parameters over half-open segments `[origin + i L, origin + (i+1) L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchSchedule {
    origin: f64,
    segment_length: f64,
    segments: Vec<Segment>,
    bounds: MismatchBounds,
}

impl MismatchSchedule {
    pub fn new(
        origin: f64,
        segment_length: f64,
        segments: Vec<Segment>,
        bounds: MismatchBounds,
    ) -> Result<Self> {
        bounds.validate()?;
        ensure(segment_length > 0.0 && segment_length.is_finite(), || {
            format!("segment length must be positive, got {segment_length}")
        })?;
        ensure(!segments.is_empty(), || {
            "schedule needs at least one segment".into()
        })?;
        for (i, s) in segments.iter().enumerate() {
            ensure(bounds.contains(s), || {
                format!("segment {i} {s:?} violates the bounds")
            })?;
        }
        Ok(Self {
            origin,
            segment_length,
            segments,
            bounds,
        })
    }

    /// The same parameters on every segment covering `[origin, end)`.
    pub fn constant(origin: f64, end: f64, segment_length: f64, seg: Segment) -> Result<Self> {
        let n = ((end - origin) / segment_length).ceil().max(1.0) as usize;
        let bounds = MismatchBounds {
            kappa_inf: seg.kappa,
            kappa_sup: seg.kappa,
            gamma_inf: seg.xi,
            gamma_sup: seg.xi,
            delta_dis_inf: seg.delta_dis,
            delta_dis_sup: seg.delta_dis,
        };
        Self::new(origin, segment_length, vec![seg; n], bounds)
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn segment_length(&self) -> f64 {
        self.segment_length
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn bounds(&self) -> &MismatchBounds {
        &self.bounds
    }

    pub fn coverage(&self) -> (f64, f64) {
        (
            self.origin,
            self.origin + self.segment_length * self.segments.len() as f64,
        )
    }

    pub fn segment_start(&self, i: usize) -> f64 {
        self.origin + self.segment_length * i as f64
    }

    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let (start, end) = self.coverage();
        if !(t >= start && t < end) {
            return Err(TemError::OutOfRange { t, start, end });
        }
        let mut i = ((t - self.origin) / self.segment_length).floor() as usize;
        // Division can land one segment off right at an edge.
        while i > 0 && t < self.segment_start(i) {
            i -= 1;
        }
        while i + 1 < self.segments.len() && t >= self.segment_start(i + 1) {
            i += 1;
        }
        Ok(i.min(self.segments.len() - 1))
    }

    pub fn segment_at(&self, t: f64) -> Result<&Segment> {
        Ok(&self.segments[self.segment_index(t)?])
    }

    pub fn sigma_of(&self, t: f64) -> Result<f64> {
        Ok(self.segment_at(t)?.sigma())
    }

    pub fn delta_dis_of(&self, t: f64) -> Result<f64> {
        Ok(self.segment_at(t)?.delta_dis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub bias: f64,
    pub threshold: f64,
    pub amplitude_bound: f64,
}

impl EncoderConfig {
    pub fn new(bias: f64, threshold: f64, amplitude_bound: f64) -> Result<Self> {
        let cfg = Self {
            bias,
            threshold,
            amplitude_bound,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(TemError::Config(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.amplitude_bound >= 0.0 && self.bias > self.amplitude_bound) {
            return Err(TemError::Config(format!(
                "bias {} must exceed the amplitude bound {}",
                self.bias, self.amplitude_bound
            )));
        }
        Ok(())
    }
}

/// Reference injections at in-segment signal firings `1` and `1 + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionSchedule {
    pub k: usize,
    pub levels: [f64; 2],
    pub thresholds: [f64; 2],
}

impl InjectionSchedule {
    /// Which injection, if any, follows the firing with this in-segment index.
    pub fn slot(&self, firing_in_segment: usize) -> Option<usize> {
        if firing_in_segment == 1 {
            Some(0)
        } else if firing_in_segment == 1 + self.k {
            Some(1)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SignalFiring,
    CalibrationFiring,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::SignalFiring => "signal",
            EventKind::CalibrationFiring => "calibration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// A reference injection that replaced the signal right after a firing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    /// 0 for the first level, 1 for the second.
    pub slot: usize,
    pub level: f64,
    pub threshold: f64,
    pub fire_time: f64,
    /// `fire_time - start`, the measured calibration interval.
    pub t_v: f64,
    pub sigma: f64,
    pub delta_dis: f64,
}

/// One inter-spike interval `[start, end]` between consecutive signal firings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    /// Time from `start` until signal integration resumes.
    pub nonsampling: f64,
    /// Scaling factor in effect while the signal was integrated.
    pub sigma: f64,
    /// Discharge right after `start`.
    pub delta_dis: f64,
    pub segment: usize,
    pub firing_in_segment: usize,
    pub injection: Option<Injection>,
}

impl Interval {
    pub fn sample_start(&self) -> f64 {
        self.start + self.nonsampling
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub events: Vec<Event>,
    pub intervals: Vec<Interval>,
    /// The window ended during an integration and the partial interval was dropped.
    pub truncated: bool,
    pub window: (f64, f64),
}

impl SpikeTrain {
    /// Signal firing times `t_0 < t_1 < ...`.
    pub fn firing_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.intervals.iter().map(|iv| iv.start).collect();
        if let Some(last) = self.intervals.last() {
            t.push(last.end);
        }
        t
    }

    pub fn calibration_count(&self) -> usize {
        self.intervals
            .iter()
            .filter(|iv| iv.injection.is_some())
            .count()
    }

    pub fn write_csv(&self, path: &Path, mode: CsvMode) -> Result<()> {
        let mut header = vec!["index", "t_n", "event_kind", "T_ns"];
        if mode == CsvMode::Genie {
            header.extend(["sigma_true", "delta_dis_true"]);
        }
        let mut rows = Vec::with_capacity(self.events.len());
        let mut index = 0usize;
        let mut push = |t: f64, kind: EventKind, ns: Option<f64>, truth: Option<(f64, f64)>| {
            let mut row = vec![
                index.to_string(),
                fmt_f64(t),
                kind.as_str().to_string(),
                ns.map(fmt_f64).unwrap_or_default(),
            ];
            if mode == CsvMode::Genie {
                let (s, d) = truth
                    .map(|(s, d)| (fmt_f64(s), fmt_f64(d)))
                    .unwrap_or_default();
                row.push(s);
                row.push(d);
            }
            rows.push(row);
            index += 1;
        };
        for iv in &self.intervals {
            push(
                iv.start,
                EventKind::SignalFiring,
                Some(iv.nonsampling),
                Some((iv.sigma, iv.delta_dis)),
            );
            if let Some(inj) = iv.injection {
                push(
                    inj.fire_time,
                    EventKind::CalibrationFiring,
                    None,
                    Some((inj.sigma, inj.delta_dis)),
                );
            }
        }
        if let Some(last) = self.intervals.last() {
            push(last.end, EventKind::SignalFiring, None, None);
        }
        write_rows(path, &header, rows)
    }
}

/// Whether true parameters are written next to the firing times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvMode {
    Genie,
    Field,
}

/// Solves `int_start^end drive = target` for `end`, given `drive >= floor > 0`.
fn solve_crossing<F>(cumulative: F, start: f64, target: f64, floor: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if target == 0.0 {
        return Ok(start);
    }
    let f = |e: f64| cumulative(e) - target;
    let mut span = 2.0 * target / floor;
    let mut hi = start + span;
    let mut tries = 0;
    while f(hi) < 0.0 {
        tries += 1;
        if tries > 60 {
            return Err(TemError::RootFinding(format!(
                "threshold never reached after t = {start}"
            )));
        }
        span *= 2.0;
        hi = start + span;
    }
    brent(
        f,
        start,
        hi,
        BrentOptions {
            ftol: CROSSING_TOL * target,
            xtol: 0.0,
            max_iter: 200,
        },
    )
}

/// Time to integrate a constant `level + b` up to `sigma * threshold` via the root finder.
pub fn constant_crossing(level: f64, bias: f64, sigma: f64, threshold: f64) -> Result<f64> {
    let drive = level + bias;
    ensure(drive > 0.0, || {
        format!("level + bias must be positive, got {drive}")
    })?;
    solve_crossing(|e| drive * e, 0.0, sigma * threshold, drive)
}

/// Encodes `signal` over `window`, optionally injecting references after selected firings.
///
/// `t_0 = window.0` is treated as a firing. Each interval discharges for the segment's
/// `delta_dis`, then integrates `(x + b) / sigma` up to the threshold, with `sigma`
/// taken from the segment in which integration starts.
pub fn encode(
    signal: &BandlimitedSignal,
    config: &EncoderConfig,
    schedule: &MismatchSchedule,
    window: (f64, f64),
    injections: Option<&InjectionSchedule>,
) -> Result<SpikeTrain> {
    config.validate()?;
    if config.amplitude_bound < signal.amplitude_bound() {
        return Err(TemError::Config(format!(
            "configured amplitude bound {} is below the signal's {}",
            config.amplitude_bound,
            signal.amplitude_bound()
        )));
    }
    let (t_start, t_end) = window;
    ensure(t_start < t_end, || {
        format!("empty window [{t_start}, {t_end}]")
    })?;
    let (sw0, sw1) = signal.window();
    let slack = 1e-12 * (sw1 - sw0);
    ensure(t_start >= sw0 - slack && t_end <= sw1 + slack, || {
        format!("window [{t_start}, {t_end}] leaves the signal window [{sw0}, {sw1}]")
    })?;
    let (c0, c1) = schedule.coverage();
    ensure(t_start >= c0 && t_end <= c1, || {
        format!("schedule covers [{c0}, {c1}), window is [{t_start}, {t_end}]")
    })?;

    let b = config.bias;
    let floor = b - config.amplitude_bound;
    let mut counts = vec![0usize; schedule.segments().len()];
    let mut events = vec![Event {
        t: t_start,
        kind: EventKind::SignalFiring,
    }];
    let mut intervals = Vec::new();
    let mut t = t_start;
    let mut seg = schedule.segment_index(t)?;
    let mut firing_in_segment = 0;
    counts[seg] = 1;
    let mut truncated = false;

    loop {
        let delta_dis = schedule.segments()[seg].delta_dis;
        let mut resume = t + delta_dis;
        let mut injection = None;
        if let Some(inj) = injections.and_then(|s| s.slot(firing_in_segment).map(|p| (s, p))) {
            let (plan, slot) = inj;
            if resume >= t_end {
                truncated = true;
                break;
            }
            let level = plan.levels[slot];
            let threshold = plan.thresholds[slot];
            let sigma_c = schedule.sigma_of(resume)?;
            let fire = resume + constant_crossing(level, b, sigma_c, threshold)?;
            if fire >= t_end {
                truncated = true;
                break;
            }
            let delta_after = schedule.delta_dis_of(fire)?;
            injection = Some(Injection {
                slot,
                level,
                threshold,
                fire_time: fire,
                t_v: fire - t,
                sigma: sigma_c,
                delta_dis,
            });
            resume = fire + delta_after;
        }
        if resume >= t_end {
            truncated = true;
            break;
        }
        let sigma = schedule.sigma_of(resume)?;
        let x_resume = signal.antiderivative(resume);
        let end = solve_crossing(
            |e| signal.antiderivative(e) - x_resume + b * (e - resume),
            resume,
            sigma * config.threshold,
            floor,
        )?;
        if end > t_end {
            truncated = true;
            break;
        }
        if end <= t {
            return Err(TemError::RootFinding(format!(
                "non-increasing firing at t = {t}"
            )));
        }
        if let Some(inj) = &injection {
            events.push(Event {
                t: inj.fire_time,
                kind: EventKind::CalibrationFiring,
            });
        }
        events.push(Event {
            t: end,
            kind: EventKind::SignalFiring,
        });
        intervals.push(Interval {
            start: t,
            end,
            nonsampling: resume - t,
            sigma,
            delta_dis,
            segment: seg,
            firing_in_segment,
            injection,
        });
        t = end;
        if t >= c1 {
            break;
        }
        seg = schedule.segment_index(t)?;
        firing_in_segment = counts[seg];
        counts[seg] += 1;
    }

    Ok(SpikeTrain {
        events,
        intervals,
        truncated,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bounds() -> MismatchBounds {
        MismatchBounds {
            kappa_inf: 0.0022,
            kappa_sup: 0.0024,
            gamma_inf: 0.98,
            gamma_sup: 1.002,
            delta_dis_inf: 2.85e-6,
            delta_dis_sup: 3e-6,
        }
    }

    #[test]
    fn sigma_lookup() {
        let seg = |xi| Segment {
            kappa: 0.0023,
            xi,
            delta_dis: 3e-6,
        };
        let s = MismatchSchedule::new(0.0, 0.04, vec![seg(1.0), seg(0.98)], bounds()).unwrap();
        assert_eq!(s.sigma_of(0.01).unwrap(), 0.0023);
        assert_eq!(s.sigma_of(0.05).unwrap(), 0.0023 / 0.98);
        // Half-open segments: the edge belongs to the later one.
        assert_eq!(s.sigma_of(0.04).unwrap(), 0.0023 / 0.98);
        assert!(matches!(s.sigma_of(0.08), Err(TemError::OutOfRange { .. })));
        assert!(s.sigma_of(-1e-9).is_err());
    }

    #[test]
    fn segment_edges_with_negative_origin() {
        let seg = Segment {
            kappa: 0.0023,
            xi: 1.0,
            delta_dis: 3e-6,
        };
        let s = MismatchSchedule::new(-0.04, 0.04, vec![seg; 8], bounds()).unwrap();
        for i in 0..8 {
            assert_eq!(s.segment_index(s.segment_start(i)).unwrap(), i);
        }
    }

    #[test]
    fn schedule_rejects_out_of_bounds_segment() {
        let seg = Segment {
            kappa: 0.003,
            xi: 1.0,
            delta_dis: 3e-6,
        };
        assert!(MismatchSchedule::new(0.0, 0.04, vec![seg], bounds()).is_err());
    }

    #[test]
    fn config_requires_bias_above_bound() {
        assert!(matches!(
            EncoderConfig::new(1.0, 1.0, 1.0),
            Err(TemError::Config(_))
        ));
        assert!(EncoderConfig::new(1.3, 0.0, 1.0).is_err());
        assert!(EncoderConfig::new(1.3, 1.0, 1.0).is_ok());
    }

    #[test]
    fn constant_crossing_matches_closed_form() {
        let t = constant_crossing(1.0, 1.5, 0.0023, 1.0).unwrap();
        assert!((t - 0.0023 / 2.5).abs() < 1e-15);
        assert_eq!(constant_crossing(1.0, 1.5, 0.0023, 0.0).unwrap(), 0.0);
        assert!(constant_crossing(-2.0, 1.5, 0.0023, 1.0).is_err());
    }

    #[test]
    fn injections_land_on_first_and_third_firing() {
        let signal = BandlimitedSignal::new(200.0 * PI, vec![0.0; 25]).unwrap();
        let seg = Segment {
            kappa: 0.0023,
            xi: 1.0,
            delta_dis: 3e-6,
        };
        let sched = MismatchSchedule::constant(-0.04, 0.28, 0.04, seg).unwrap();
        let cfg = EncoderConfig::new(1.0, 1.0, 0.0).unwrap();
        let inj = InjectionSchedule {
            k: 2,
            levels: [0.5, -0.5],
            thresholds: [0.01, 0.01],
        };
        let train = encode(&signal, &cfg, &sched, (-0.04, 0.28), Some(&inj)).unwrap();
        let per_seg: Vec<Vec<usize>> = (0..8)
            .map(|s| {
                train
                    .intervals
                    .iter()
                    .filter(|iv| iv.segment == s && iv.injection.is_some())
                    .map(|iv| iv.firing_in_segment)
                    .collect()
            })
            .collect();
        for s in per_seg {
            assert_eq!(s, vec![1, 3]);
        }
        let cal = train
            .events
            .iter()
            .filter(|e| e.kind == EventKind::CalibrationFiring)
            .count();
        assert_eq!(cal, train.calibration_count());
        for w in train.events.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }
}
