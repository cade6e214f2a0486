#![allow(dead_code)]

use tem_core::calibration::{calibrate_train, CalibrationRecord};
use tem_core::encoder::{MismatchSchedule, SpikeTrain};
use tem_core::harness::{ExperimentConfig, Mode, SignalSetup};
use tem_core::reconstruction::{measurements, Grid, MeasurementSet};
use tem_core::signal::{BandlimitedSignal, SincKernel};

pub struct Encoded {
    pub setup: SignalSetup,
    pub clean: SpikeTrain,
    pub field: SpikeTrain,
    pub records: Vec<CalibrationRecord>,
}

pub fn encoded(cfg: &ExperimentConfig, index: usize) -> Encoded {
    let setup = SignalSetup::prepare(cfg, index).unwrap();
    let clean = setup.encode_clean().unwrap();
    let field = setup.encode_field().unwrap();
    let records = calibrate_train(&field, &setup.plan, &setup.schedule).unwrap();
    Encoded {
        setup,
        clean,
        field,
        records,
    }
}

impl Encoded {
    pub fn train(&self, mode: Mode) -> &SpikeTrain {
        match mode {
            Mode::Ideal | Mode::Blind => &self.clean,
            Mode::Scal | Mode::Genie => &self.field,
        }
    }

    pub fn measurements(&self, mode: Mode) -> MeasurementSet {
        let params = self
            .setup
            .mode_params(mode, &self.clean, &self.field, &self.records)
            .unwrap();
        measurements(
            self.train(mode),
            &params,
            self.setup.encoder.bias,
            self.setup.encoder.threshold,
            Default::default(),
        )
        .unwrap()
    }

    pub fn kernel(&self) -> SincKernel {
        SincKernel::new(self.setup.signal.omega_m()).unwrap()
    }

    /// Grid over the train with `ppn` points per recovery Nyquist period.
    pub fn grid(&self, mode: Mode, ppn: usize) -> Grid {
        let nyq = self.setup.signal.recovery_nyquist();
        let train = self.train(mode);
        let end = train.intervals.last().unwrap().end;
        Grid::new(self.setup.window.0, end, nyq / ppn as f64).unwrap()
    }

    /// `[t_0 + 2T, t_N - 2T]` of the grid.
    pub fn interior(&self, grid: &Grid) -> (f64, f64) {
        let nyq = self.setup.signal.recovery_nyquist();
        (grid.point(0) + 2.0 * nyq, grid.end() - 2.0 * nyq)
    }
}

/// Fixed-step trapezoidal integrate-and-fire without injections.
///
/// Steps of `h` from each resume time; the crossing is located by linear interpolation of
/// the running integral inside the last step.
pub fn brute_force_firings(
    signal: &BandlimitedSignal,
    schedule: &MismatchSchedule,
    bias: f64,
    threshold: f64,
    window: (f64, f64),
    h: f64,
) -> Vec<f64> {
    let seg_of = |t: f64| {
        let i = ((t - schedule.origin()) / schedule.segment_length()).floor() as usize;
        schedule.segments()[i.min(schedule.segments().len() - 1)]
    };
    let f = |t: f64| signal.eval(t) + bias;
    let mut firings = vec![window.0];
    let mut t = window.0;
    'outer: loop {
        let resume = t + seg_of(t).delta_dis;
        if resume >= window.1 {
            break;
        }
        let target = seg_of(resume).sigma() * threshold;
        let mut acc = 0.0;
        let mut s = resume;
        let mut fs = f(s);
        loop {
            let fe = f(s + h);
            let inc = 0.5 * h * (fs + fe);
            if acc + inc >= target {
                let end = s + h * (target - acc) / inc;
                if end > window.1 {
                    break 'outer;
                }
                firings.push(end);
                t = end;
                break;
            }
            acc += inc;
            s += h;
            fs = fe;
            if s > window.1 {
                break 'outer;
            }
        }
    }
    firings
}
