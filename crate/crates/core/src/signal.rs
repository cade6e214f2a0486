//! Finite sinc-sum bandlimited signals and the reconstruction kernel.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result, TemError};
use crate::numerics::{adaptive_simpson, SIMPSON_MAX_DEPTH};
use crate::special::{si, sinc};

/// Name recorded in signal files for the coefficient generator.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng/rand_chacha-0.9";

/// Grid density used for the amplitude bound.
pub const BOUND_POINTS_PER_PULSE: usize = 64;

/// Padding on each side of the pulse support, in pulse spacings.
pub const WINDOW_PADDING: f64 = 4.0;

/// Spacing of the sinc pulses, `2 pi / omega_M`.
pub fn pulse_spacing(omega_m: f64) -> f64 {
    2.0 * PI / omega_m
}

/// Nyquist interval used by the recovery conditions, `pi / omega_M`.
pub fn recovery_nyquist(omega_m: f64) -> f64 {
    PI / omega_m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffDistribution {
    #[default]
    StandardNormal,
    Uniform {
        low: f64,
        high: f64,
    },
}

impl CoeffDistribution {
    fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        match *self {
            CoeffDistribution::StandardNormal => {
                let d = Normal::new(0.0, 1.0).expect("unit normal");
                Ok((0..n).map(|_| d.sample(rng)).collect())
            }
            CoeffDistribution::Uniform { low, high } => {
                let d = Uniform::new(low, high)
                    .map_err(|e| TemError::InvalidArgument(format!("uniform coefficients: {e}")))?;
                Ok((0..n).map(|_| d.sample(rng)).collect())
            }
        }
    }
}

/// `x(t) = sum_m c_m sinc((t - m T) / T)` with `T = 2 pi / omega_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedSignal {
    omega_m: f64,
    coeffs: Vec<f64>,
    spacing: f64,
    amplitude_bound: f64,
}

impl BandlimitedSignal {
    /// Builds a signal from `2M+1` coefficients and computes its grid amplitude bound.
    pub fn new(omega_m: f64, coeffs: Vec<f64>) -> Result<Self> {
        ensure(omega_m.is_finite() && omega_m > 0.0, || {
            format!("omega_M must be positive, got {omega_m}")
        })?;
        ensure(coeffs.len() >= 3 && coeffs.len() % 2 == 1, || {
            format!("need 2M+1 coefficients with M >= 1, got {}", coeffs.len())
        })?;
        ensure(coeffs.iter().all(|c| c.is_finite()), || {
            "coefficients must be finite".to_string()
        })?;
        let mut s = Self {
            omega_m,
            spacing: pulse_spacing(omega_m),
            coeffs,
            amplitude_bound: 0.0,
        };
        s.amplitude_bound = s.grid_max(BOUND_POINTS_PER_PULSE);
        Ok(s)
    }

    pub fn generate<R: Rng + ?Sized>(
        m: usize,
        omega_m: f64,
        dist: CoeffDistribution,
        rng: &mut R,
    ) -> Result<Self> {
        ensure(m >= 1, || "M must be at least 1".to_string())?;
        let coeffs = dist.sample_n(rng, 2 * m + 1)?;
        Self::new(omega_m, coeffs)
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    pub fn m(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn pulse_spacing(&self) -> f64 {
        self.spacing
    }

    pub fn recovery_nyquist(&self) -> f64 {
        recovery_nyquist(self.omega_m)
    }

    /// Grid maximum of `|x|` over the evaluation window.
    pub fn amplitude_bound(&self) -> f64 {
        self.amplitude_bound
    }

    /// `sqrt(E omega_M / pi)`, valid for the whole real line.
    pub fn analytic_bound(&self) -> f64 {
        (self.energy() * self.omega_m / PI).sqrt()
    }

    /// `int x^2 dt`; the shifted pulses are orthogonal with norm `T`.
    pub fn energy(&self) -> f64 {
        self.spacing * self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }

    /// `[-4T, (2M+4)T]`.
    pub fn window(&self) -> (f64, f64) {
        let t = self.spacing;
        (
            -WINDOW_PADDING * t,
            (2 * self.m()) as f64 * t + WINDOW_PADDING * t,
        )
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ensure(factor.is_finite(), || {
            "scale factor must be finite".to_string()
        })?;
        let coeffs = self.coeffs.iter().map(|c| c * factor).collect();
        let mut s = self.clone();
        s.coeffs = coeffs;
        s.amplitude_bound = self.amplitude_bound * factor.abs();
        Ok(s)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = t / self.spacing;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * sinc(u - m as f64))
            .sum()
    }

    /// Antiderivative `X(t) = sum_m c_m (T/pi) Si(pi (t - mT)/T)`, with `X(mT) - X(-inf)` offsets dropped.
    pub fn antiderivative(&self, t: f64) -> f64 {
        let u = t / self.spacing;
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * si(PI * (u - m as f64)))
            .sum();
        s * self.spacing / PI
    }

    /// Closed-form `int_a^b x(s) ds` through the sine integral.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let ua = a / self.spacing;
        let ub = b / self.spacing;
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let mf = m as f64;
                c * (si(PI * (ub - mf)) - si(PI * (ua - mf)))
            })
            .sum();
        s * self.spacing / PI
    }

    /// Adaptive Simpson `int_a^b x(s) ds`, split into panels no longer than `T/2`.
    pub fn integrate(&self, a: f64, b: f64, tol: f64) -> Result<f64> {
        ensure(a <= b, || format!("integrate needs a <= b (a={a}, b={b})"))?;
        ensure(tol > 0.0, || {
            format!("tolerance must be positive, got {tol}")
        })?;
        if a == b {
            return Ok(0.0);
        }
        let chunks = ((b - a) / (0.5 * self.spacing)).ceil().max(1.0) as usize;
        let h = (b - a) / chunks as f64;
        let mut total = 0.0;
        for k in 0..chunks {
            let lo = a + h * k as f64;
            let hi = if k + 1 == chunks { b } else { lo + h };
            total += adaptive_simpson(|t| self.eval(t), lo, hi, tol, SIMPSON_MAX_DEPTH)?;
        }
        Ok(total)
    }

    fn grid_max(&self, per_pulse: usize) -> f64 {
        let (lo, hi) = self.window();
        let n = ((hi - lo) / self.spacing * per_pulse as f64).round() as usize;
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| self.eval(lo + h * i as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Largest value of `x` on `[start, end)`, sampled at the bound density.
    pub fn max_on(&self, start: f64, end: f64) -> f64 {
        let n = (((end - start) / self.spacing) * BOUND_POINTS_PER_PULSE as f64)
            .ceil()
            .max(1.0) as usize;
        let h = (end - start) / n as f64;
        (0..n)
            .map(|i| self.eval(start + h * i as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `g(t) = sin(Omega t) / (pi t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SincKernel {
    omega: f64,
}

impl SincKernel {
    pub fn new(omega: f64) -> Result<Self> {
        ensure(omega.is_finite() && omega > 0.0, || {
            format!("kernel band must be positive, got {omega}")
        })?;
        Ok(Self { omega })
    }

    pub fn band(&self) -> f64 {
        self.omega
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.omega / PI * sinc(self.omega * t / PI)
    }

    /// `int_a^b g(s - center) ds`.
    pub fn interval_integral(&self, a: f64, b: f64, center: f64) -> f64 {
        (si(self.omega * (b - center)) - si(self.omega * (a - center))) / PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFile {
    pub omega_m: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub coeffs: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub stream: Option<u64>,
    pub rng: String,
    #[serde(default)]
    pub distribution: CoeffDistribution,
}

impl SignalFile {
    pub fn from_signal(signal: &BandlimitedSignal, seed: Option<u64>, stream: Option<u64>) -> Self {
        Self {
            omega_m: signal.omega_m(),
            m: signal.m(),
            coeffs: signal.coeffs().to_vec(),
            seed,
            stream,
            rng: RNG_ALGORITHM.to_string(),
            distribution: CoeffDistribution::StandardNormal,
        }
    }

    pub fn to_signal(&self) -> Result<BandlimitedSignal> {
        if self.coeffs.len() != 2 * self.m + 1 {
            return Err(TemError::LengthMismatch {
                what: "signal coefficients vs 2M+1",
                left: self.coeffs.len(),
                right: 2 * self.m + 1,
            });
        }
        BandlimitedSignal::new(self.omega_m, self.coeffs.clone())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TemError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| TemError::io(path, e))
    }
}
