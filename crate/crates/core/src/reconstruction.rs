//! t-transform measurements and frame-operator reconstruction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, write_rows};
use crate::encoder::SpikeTrain;
use crate::error::{ensure, Result, TemError};
use crate::numerics::GaussLegendre;
use crate::signal::SincKernel;

/// Reported NMSE when the estimate is exact.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Consecutive residual increases that count as divergence.
pub const DIVERGENCE_STREAK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// `(t_n + t_{n+1}) / 2`.
    #[default]
    SpikeMidpoint,
    /// Midpoint of the sampled part `[t_n + T_ns, t_{n+1}]`.
    SampledMidpoint,
}

/// Per-interval parameters used to turn spike times into integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    pub sigma: Vec<f64>,
    pub nonsampling: Vec<f64>,
}

impl IntervalParams {
    /// The encoder's true values.
    pub fn truth(train: &SpikeTrain) -> Self {
        Self {
            sigma: train.intervals.iter().map(|iv| iv.sigma).collect(),
            nonsampling: train.intervals.iter().map(|iv| iv.nonsampling).collect(),
        }
    }

    /// One `(sigma, T_ns)` pair for every interval.
    pub fn constant(train: &SpikeTrain, sigma: f64, nonsampling: f64) -> Self {
        let n = train.intervals.len();
        Self {
            sigma: vec![sigma; n],
            nonsampling: vec![nonsampling; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub p: Vec<f64>,
    /// Sampled intervals `[a_n, b_n]`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
    /// First and last firing of the train.
    pub span: (f64, f64),
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// `P_n = sigma_n delta - b (t_{n+1} - t_n - T_ns_n)` from spike times and supplied parameters.
pub fn measurements(
    train: &SpikeTrain,
    params: &IntervalParams,
    bias: f64,
    delta: f64,
    centering: Centering,
) -> Result<MeasurementSet> {
    let n = train.intervals.len();
    for (what, len) in [
        ("sigma per interval", params.sigma.len()),
        ("non-sampling per interval", params.nonsampling.len()),
    ] {
        if len != n {
            return Err(TemError::LengthMismatch {
                what,
                left: len,
                right: n,
            });
        }
    }
    ensure(n > 0, || "spike train has no complete interval".into())?;
    let mut ms = MeasurementSet {
        p: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        span: (train.intervals[0].start, train.intervals[n - 1].end),
    };
    for (i, iv) in train.intervals.iter().enumerate() {
        let a = iv.start + params.nonsampling[i];
        ensure(a < iv.end, || {
            format!("interval {i}: sampled part [{a}, {}] is empty", iv.end)
        })?;
        let p = params.sigma[i] * delta - bias * (iv.end - a);
        ensure(p.is_finite(), || {
            format!("interval {i}: non-finite measurement")
        })?;
        ms.p.push(p);
        ms.a.push(a);
        ms.b.push(iv.end);
        ms.theta.push(match centering {
            Centering::SpikeMidpoint => 0.5 * (iv.start + iv.end),
            Centering::SampledMidpoint => 0.5 * (a + iv.end),
        });
    }
    Ok(ms)
}

/// Uniform grid with the quadrature weights of its piecewise-cubic interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    start: f64,
    step: f64,
    len: usize,
}

impl Grid {
    /// Covers `[start, end]` with a step no larger than `max_step`.
    pub fn new(start: f64, end: f64, max_step: f64) -> Result<Self> {
        ensure(end > start && max_step > 0.0, || {
            format!("bad grid [{start}, {end}] with step {max_step}")
        })?;
        let cells = ((end - start) / max_step).ceil().max(3.0) as usize;
        Ok(Self {
            start,
            step: (end - start) / cells as f64,
            len: cells + 1,
        })
    }

    /// Grid over the train span at `points_per_nyquist` points per recovery Nyquist interval.
    pub fn for_measurements(
        ms: &MeasurementSet,
        nyquist: f64,
        points_per_nyquist: usize,
    ) -> Result<Self> {
        Self::new(ms.span.0, ms.span.1, nyquist / points_per_nyquist as f64)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn point(&self, j: usize) -> f64 {
        self.start + self.step * j as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.point(j)).collect()
    }

    pub fn end(&self) -> f64 {
        self.point(self.len - 1)
    }

    /// Indices of the points inside `[lo, hi]`.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.len)
            .filter(|&j| {
                let t = self.point(j);
                t >= lo && t <= hi
            })
            .collect()
    }

    /// Weights `q` with `sum_j q_j f_j = int_a^b I[f]`, `I` the piecewise-cubic
    /// interpolant; returned as `(first index, weights)`.
    pub fn interval_weights(&self, a: f64, b: f64) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = (self.start, self.end());
        let slack = 1e-9 * self.step;
        ensure(a >= lo - slack && b <= hi + slack && a <= b, || {
            format!("[{a}, {b}] is not inside the grid [{lo}, {hi}]")
        })?;
        let a = a.clamp(lo, hi);
        let b = b.clamp(lo, hi);
        let last_cell = self.len - 2;
        let cell_of = |t: f64| (((t - lo) / self.step).floor() as usize).min(last_cell);
        let (c0, c1) = (cell_of(a), cell_of(b));
        let first = c0.saturating_sub(1).min(self.len - 4);
        let last = (c1 + 2).min(self.len - 1).max(first + 3);
        let mut w = vec![0.0; last - first + 1];
        let gl = [-(1.0 / 3f64).sqrt(), (1.0 / 3f64).sqrt()];
        for cell in c0..=c1 {
            let t_lo = a.max(self.point(cell));
            let t_hi = b.min(self.point(cell + 1));
            if t_hi <= t_lo {
                continue;
            }
            let s0 = cell.saturating_sub(1).min(self.len - 4);
            let u_lo = (t_lo - self.point(s0)) / self.step;
            let u_hi = (t_hi - self.point(s0)) / self.step;
            let half = 0.5 * (u_hi - u_lo);
            let mid = 0.5 * (u_hi + u_lo);
            for k in 0..4 {
                let integral: f64 = gl
                    .iter()
                    .map(|&x| lagrange_cubic(k, mid + half * x))
                    .sum::<f64>()
                    * half;
                w[s0 + k - first] += self.step * integral;
            }
        }
        Ok((first, w))
    }

    /// Weights of the whole grid.
    pub fn weights(&self) -> Vec<f64> {
        let (first, w) = self
            .interval_weights(self.start, self.end())
            .expect("grid covers itself");
        debug_assert_eq!(first, 0);
        w
    }
}

/// Lagrange basis on nodes `0, 1, 2, 3`.
fn lagrange_cubic(k: usize, u: f64) -> f64 {
    let mut v = 1.0;
    for m in 0..4 {
        if m != k {
            v *= (u - m as f64) / (k as f64 - m as f64);
        }
    }
    v
}

/// `sum_n P_n g(t - theta_n)` at the given times.
pub fn apply_a(ms: &MeasurementSet, kernel: &SincKernel, times: &[f64]) -> Vec<f64> {
    synthesize(&ms.p, &ms.theta, kernel, times)
}

/// `sum_m d_m g(t - c_m)`.
pub fn synthesize(coeffs: &[f64], centers: &[f64], kernel: &SincKernel, times: &[f64]) -> Vec<f64> {
    times
        .par_iter()
        .map(|&t| {
            coeffs
                .iter()
                .zip(centers)
                .map(|(d, c)| d * kernel.eval(t - c))
                .sum()
        })
        .collect()
}

/// `G[n, m] = int_{a_n}^{b_n} g(s - theta_m) ds` through the sine integral.
pub fn gram_matrix(ms: &MeasurementSet, kernel: &SincKernel) -> DMatrix<f64> {
    let n = ms.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|m| kernel.interval_integral(ms.a[i], ms.b[i], ms.theta[m]))
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, m| rows[i][m])
}

/// Same matrix by composite Gauss–Legendre quadrature.
pub fn gram_matrix_quadrature(
    ms: &MeasurementSet,
    kernel: &SincKernel,
    order: usize,
    panels: usize,
) -> DMatrix<f64> {
    let gl = GaussLegendre::new(order);
    let n = ms.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|m| {
                    let c = ms.theta[m];
                    gl.integrate_composite(|s| kernel.eval(s - c), ms.a[i], ms.b[i], panels)
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, m| rows[i][m])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neumann,
    Pseudoinverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub times: Vec<f64>,
    pub samples: Vec<f64>,
    /// `x_hat = sum_m coefficients[m] g(t - centers[m])`.
    pub coefficients: Vec<f64>,
    pub centers: Vec<f64>,
    pub iterations: usize,
    /// Windowed L2 change per step; one entry per plain iteration, then one per doubling.
    pub residual_history: Vec<f64>,
    /// How many leading entries of `residual_history` are plain iterations.
    pub plain_steps: usize,
    /// Norm over the whole line of the single-step change `x_{L+1} - x_L`, at the same
    /// steps as `residual_history`.
    pub space_residuals: Vec<f64>,
    pub method: Method,
}

impl ReconstructionResult {
    /// `|x_{l+1} - x_l| / |x_l - x_{l-1}|` over the plain iterations, in the norm of
    /// the whole line.
    pub fn increment_ratios(&self) -> Vec<f64> {
        self.space_residuals[..self.plain_steps]
            .windows(2)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn eval(&self, kernel: &SincKernel, times: &[f64]) -> Vec<f64> {
        synthesize(&self.coefficients, &self.centers, kernel, times)
    }

    pub fn write_csv(&self, truth: &[f64], path: &Path) -> Result<()> {
        if truth.len() != self.samples.len() {
            return Err(TemError::LengthMismatch {
                what: "reference vs reconstruction samples",
                left: truth.len(),
                right: self.samples.len(),
            });
        }
        let rows = (0..self.times.len()).map(|j| {
            vec![
                fmt_f64(self.times[j]),
                fmt_f64(truth[j]),
                fmt_f64(self.samples[j]),
            ]
        });
        write_rows(path, &["t", "x_true", "x_hat"], rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeumannOptions {
    pub max_iters: usize,
    pub stop_tol: f64,
    /// Iterations run one at a time before switching to repeated squaring.
    pub plain_iters: usize,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            max_iters: 1 << 20,
            stop_tol: 1e-12,
            plain_iters: 31,
        }
    }
}

/// Interior-window L2 norm of `sum_m d_m g(t - theta_m)`.
struct WindowNorm {
    eval: DMatrix<f64>,
    scale: f64,
}

impl WindowNorm {
    fn new(ms: &MeasurementSet, kernel: &SincKernel, grid: &Grid, window: (f64, f64)) -> Self {
        let idx = grid.window_indices(window.0, window.1);
        let idx = if idx.is_empty() {
            (0..grid.len()).collect()
        } else {
            idx
        };
        let times: Vec<f64> = idx.iter().map(|&j| grid.point(j)).collect();
        let rows: Vec<Vec<f64>> = times
            .par_iter()
            .map(|&t| ms.theta.iter().map(|&c| kernel.eval(t - c)).collect())
            .collect();
        let eval = DMatrix::from_fn(times.len(), ms.len(), |i, m| rows[i][m]);
        Self {
            eval,
            scale: grid.step().sqrt(),
        }
    }

    fn norm(&self, d: &DVector<f64>) -> f64 {
        (&self.eval * d).norm() * self.scale
    }
}

/// L2 norm over the whole line of `sum_m d_m g(t - theta_m)`, through the reproducing
/// kernel `<g(. - a), g(. - b)> = g(a - b)`.
struct SpaceNorm {
    gram: DMatrix<f64>,
}

impl SpaceNorm {
    fn new(ms: &MeasurementSet, kernel: &SincKernel) -> Self {
        let n = ms.len();
        Self {
            gram: DMatrix::from_fn(n, n, |i, j| kernel.eval(ms.theta[i] - ms.theta[j])),
        }
    }

    fn norm(&self, d: &DVector<f64>) -> f64 {
        d.dot(&(&self.gram * d)).max(0.0).sqrt()
    }
}

/// Neumann series `x_{l+1} = x_0 + (I - A) x_l` with `x_0 = A x`.
///
/// Every iterate stays in the span of `g(t - theta_m)`, so the recursion runs on the
/// coefficient vector, `d_{l+1} = P + (I - G) d_l`, with interval integrals of the
/// iterate taken exactly through the sine integral. After `plain_iters` single steps
/// the partial sums are extended by repeated squaring, `S_{2L} = S_L + B^L S_L` with
/// `B = I - G`, which reaches the same limit in logarithmically many products.
///
/// The stopping rule uses the interior-window change. Divergence is declared when the
/// single-step change, measured over the whole line, grows `DIVERGENCE_STREAK` times
/// in a row. The windowed norm alone is not used for this: slowly decaying edge modes
/// can make it rise for a while although every step shrinks on the whole line.
pub fn reconstruct_neumann(
    ms: &MeasurementSet,
    kernel: &SincKernel,
    grid: &Grid,
    window: (f64, f64),
    opts: NeumannOptions,
) -> Result<ReconstructionResult> {
    ensure(!ms.is_empty(), || "no measurements".into())?;
    ensure(opts.stop_tol >= 0.0, || {
        "stop tolerance must be >= 0".into()
    })?;
    let n = ms.len();
    let g = gram_matrix(ms, kernel);
    let norm = WindowNorm::new(ms, kernel, grid, window);
    let space = SpaceNorm::new(ms, kernel);
    let p = DVector::from_column_slice(&ms.p);
    let b_mat = DMatrix::identity(n, n) - &g;

    let mut history = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();
    let mut d = p.clone();
    let mut iterations = 0;
    let mut streak = 0;
    let mut done = false;
    let mut track = |change: f64,
                     residual: f64,
                     size: f64,
                     history: &mut Vec<f64>,
                     residuals: &mut Vec<f64>|
     -> Result<bool> {
        if !change.is_finite() || !residual.is_finite() {
            return Err(TemError::Diverged {
                iterations: history.len(),
            });
        }
        if let Some(&prev) = residuals.last() {
            streak = if residual > prev { streak + 1 } else { 0 };
        }
        history.push(change);
        residuals.push(residual);
        if streak >= DIVERGENCE_STREAK {
            return Err(TemError::Diverged {
                iterations: history.len(),
            });
        }
        Ok(change <= opts.stop_tol * size)
    };

    if p.iter().all(|&v| v == 0.0) {
        done = true;
        iterations = 1;
        history.push(0.0);
        residuals.push(0.0);
    }
    let plain = opts.plain_iters.min(opts.max_iters);
    while !done && iterations < plain {
        let next = &p + &b_mat * &d;
        let step = &next - &d;
        d = next;
        iterations += 1;
        done = track(
            norm.norm(&step),
            space.norm(&step),
            norm.norm(&d),
            &mut history,
            &mut residuals,
        )?;
    }
    let plain_steps = history.len();

    if !done && iterations < opts.max_iters {
        // d holds S_L with L = iterations + 1 terms.
        let mut terms = iterations + 1;
        let mut power = matrix_power(&b_mat, terms);
        loop {
            let step = &power * &d;
            let single = &power * &p;
            d += &step;
            terms *= 2;
            iterations = terms - 1;
            let stop = track(
                norm.norm(&step),
                space.norm(&single),
                norm.norm(&d),
                &mut history,
                &mut residuals,
            )?;
            if stop || iterations >= opts.max_iters {
                break;
            }
            power = &power * &power;
        }
    }

    let times = grid.points();
    let coefficients: Vec<f64> = d.iter().copied().collect();
    let samples = synthesize(&coefficients, &ms.theta, kernel, &times);
    Ok(ReconstructionResult {
        times,
        samples,
        coefficients,
        centers: ms.theta.clone(),
        iterations,
        residual_history: history,
        plain_steps,
        space_residuals: residuals,
        method: Method::Neumann,
    })
}

fn matrix_power(m: &DMatrix<f64>, mut e: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Default ridge, `1e-10 trace(G^T G) / N`.
pub fn default_ridge(gtg: &DMatrix<f64>) -> f64 {
    1e-10 * gtg.trace() / gtg.nrows() as f64
}

/// Least-squares fit `x_hat = sum_m c_m g(t - theta_m)` to the measurements.
///
/// `G` is assembled by Gauss–Legendre quadrature, independently of the sine-integral
/// path used by [`reconstruct_neumann`]. `ridge = None` selects [`default_ridge`].
pub fn reconstruct_pinv(
    ms: &MeasurementSet,
    kernel: &SincKernel,
    grid: &Grid,
    ridge: Option<f64>,
) -> Result<ReconstructionResult> {
    ensure(ms.len() >= 2, || {
        "pseudoinverse needs at least two measurements".into()
    })?;
    let g = gram_matrix_quadrature(ms, kernel, 16, 2);
    let coefficients = solve_normal_equations(&g, &ms.p, ridge)?;
    let times = grid.points();
    let samples = synthesize(&coefficients, &ms.theta, kernel, &times);
    Ok(ReconstructionResult {
        times,
        samples,
        coefficients,
        centers: ms.theta.clone(),
        iterations: 0,
        residual_history: Vec::new(),
        plain_steps: 0,
        space_residuals: Vec::new(),
        method: Method::Pseudoinverse,
    })
}

/// Solves `(G^T G + ridge I) c = G^T P` by Cholesky.
pub fn solve_normal_equations(g: &DMatrix<f64>, p: &[f64], ridge: Option<f64>) -> Result<Vec<f64>> {
    let n = g.ncols();
    let gt = g.transpose();
    let mut gtg = &gt * g;
    let ridge = ridge.unwrap_or_else(|| default_ridge(&gtg));
    ensure(ridge >= 0.0, || format!("ridge must be >= 0, got {ridge}"))?;
    for i in 0..n {
        gtg[(i, i)] += ridge;
    }
    let rhs = &gt * DVector::from_column_slice(p);
    let chol = gtg.clone().cholesky().ok_or_else(|| {
        TemError::Solver("normal matrix is not positive definite; use a positive ridge".into())
    })?;
    if ridge == 0.0 {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        if (lo / hi).powi(2) < 1e3 * f64::EPSILON {
            return Err(TemError::Solver(format!(
                "normal matrix is ill-conditioned (pivot ratio {:.3e}); use a positive ridge",
                (lo / hi).powi(2)
            )));
        }
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// `10 log10(sum (x - x_hat)^2 / sum x^2)` over the selected indices, floored at
/// [`NMSE_FLOOR_DB`].
pub fn nmse(reference: &[f64], estimate: &[f64], indices: &[usize]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(TemError::LengthMismatch {
            what: "reference vs estimate",
            left: reference.len(),
            right: estimate.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &j in indices {
        let e = reference[j] - estimate[j];
        num += e * e;
        den += reference[j] * reference[j];
    }
    if den == 0.0 {
        return Err(TemError::UndefinedNmse);
    }
    if num == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (num / den).log10()).max(NMSE_FLOOR_DB))
}

/// `[t_0 + 2 T, t_N - 2 T]`.
pub fn interior_window(ms: &MeasurementSet, nyquist: f64) -> (f64, f64) {
    (ms.span.0 + 2.0 * nyquist, ms.span.1 - 2.0 * nyquist)
}

/// Discrete frame operator acting on grid functions.
///
/// With `P_h f(t) = sum_i w_i g(t - t_i) f_i` and `Q_n` the interpolatory weights of
/// `int_{a_n}^{b_n}`, it applies `A f = sum_n (Q_n P_h f) g(t - theta_n)` and
/// `A* f = sum_n (P_h f)(theta_n) sum_j q_nj g(t - t_j)`, which are adjoint in the
/// weighted inner product `<f, h>_W = sum_j w_j f_j h_j`.
pub struct FrameOperator {
    kernel: SincKernel,
    grid: Grid,
    weights: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
    theta: Vec<f64>,
    /// `g(k h)` for `k = 0..len`.
    lag: Vec<f64>,
}

impl FrameOperator {
    pub fn new(ms: &MeasurementSet, kernel: SincKernel, grid: Grid) -> Result<Self> {
        let rows = (0..ms.len())
            .map(|n| grid.interval_weights(ms.a[n], ms.b[n]))
            .collect::<Result<Vec<_>>>()?;
        let lag = (0..grid.len())
            .map(|k| kernel.eval(grid.step() * k as f64))
            .collect();
        Ok(Self {
            kernel,
            weights: grid.weights(),
            grid,
            rows,
            theta: ms.theta.clone(),
            lag,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inner(&self, f: &[f64], h: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(h))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        (0..self.grid.len())
            .into_par_iter()
            .map(|j| {
                wf.iter()
                    .enumerate()
                    .map(|(i, v)| v * self.lag[j.abs_diff(i)])
                    .sum()
            })
            .collect()
    }

    fn project_at(&self, f: &[f64], t: f64) -> f64 {
        (0..self.grid.len())
            .map(|i| self.weights[i] * f[i] * self.kernel.eval(t - self.grid.point(i)))
            .sum()
    }

    /// `Q_n f` for every interval.
    pub fn measure(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(first, w)| w.iter().enumerate().map(|(k, q)| q * f[first + k]).sum())
            .collect()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let pn = self.measure(&self.project(f));
        let times = self.grid.points();
        synthesize(&pn, &self.theta, &self.kernel, &times)
    }

    pub fn adjoint(&self, f: &[f64]) -> Vec<f64> {
        let at_theta: Vec<f64> = self
            .theta
            .par_iter()
            .map(|&t| self.project_at(f, t))
            .collect();
        let mut spread = vec![0.0; self.grid.len()];
        for (n, (first, w)) in self.rows.iter().enumerate() {
            for (k, q) in w.iter().enumerate() {
                spread[first + k] += at_theta[n] * q;
            }
        }
        (0..self.grid.len())
            .into_par_iter()
            .map(|j| {
                spread
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s * self.lag[j.abs_diff(i)])
                    .sum()
            })
            .collect()
    }
}
