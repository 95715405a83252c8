//! Per-iteration measurements and convergence diagnostics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{self, DesignContext};
use crate::didgd::{self, DidgdOptions, NetworkState, StepSchedule};
use crate::io::fmt_f64;
use crate::mixing::MixingMatrix;
use crate::problems::Problem;
use crate::{Error, Result};

/// One row of a metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Step size `γ_k` in force at this iteration.
    pub gamma: f64,
    /// Spectral gap used in the Lyapunov value.
    pub rho: f64,
    /// `(1/n) Σ_i ‖∇F(θ_i)‖²`.
    pub stationarity: f64,
    /// `(1/n²) Σ_ij ‖θ_i − θ_j‖²`.
    pub disagreement: f64,
    /// `‖Θ − 1πᵀΘ‖²_F`.
    pub weighted_consensus_error: f64,
    /// `F(θ̂)` with `θ̂ = Θᵀπ`.
    pub f_at_avg: f64,
    pub lyapunov: f64,
    /// Design function at the matrix in use, i.e. `J̄(Ā)`.
    pub j_value: f64,
    /// `‖∇F(θ̂)‖²`.
    pub grad_f_at_avg: f64,
    /// `‖Y − 1πᵀ‖₂`.
    pub y_deviation: f64,
    pub spectral_gap_k: Option<f64>,
}

pub const CSV_HEADER: &str = "k,gamma,rho,stationarity,disagreement,weighted_consensus_error,f_at_avg,\
lyapunov,j_value,grad_f_at_avg,y_deviation,spectral_gap_k";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        let mut s = self.k.to_string();
        for v in [
            self.gamma,
            self.rho,
            self.stationarity,
            self.disagreement,
            self.weighted_consensus_error,
            self.f_at_avg,
            self.lyapunov,
            self.j_value,
            self.grad_f_at_avg,
            self.y_deviation,
        ] {
            let _ = write!(s, ",{}", fmt_f64(v));
        }
        s.push(',');
        if let Some(g) = self.spectral_gap_k {
            s.push_str(&fmt_f64(g));
        }
        s
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != 12 {
            return Err(Error::Parse(format!("expected 12 fields, got {}", cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("field {i} {:?}: {e}", cells[i])))
        };
        Ok(Self {
            k: cells[0]
                .parse()
                .map_err(|e| Error::Parse(format!("iteration {:?}: {e}", cells[0])))?,
            gamma: num(1)?,
            rho: num(2)?,
            stationarity: num(3)?,
            disagreement: num(4)?,
            weighted_consensus_error: num(5)?,
            f_at_avg: num(6)?,
            lyapunov: num(7)?,
            j_value: num(8)?,
            grad_f_at_avg: num(9)?,
            y_deviation: num(10)?,
            spectral_gap_k: if cells[11].is_empty() { None } else { Some(num(11)?) },
        })
    }
}

/// Writes a header line followed by one row per record.
pub fn records_to_csv(records: &[IterationRecord]) -> String {
    let mut s = String::with_capacity(64 + records.len() * 256);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(IterationRecord::parse_csv_row)
        .collect()
}

/// Sink for records emitted during a run.
pub trait Recorder {
    fn record(&mut self, rec: &IterationRecord);
}

impl Recorder for Vec<IterationRecord> {
    fn record(&mut self, rec: &IterationRecord) {
        self.push(rec.clone());
    }
}

/// Adapts a closure into a [`Recorder`].
pub struct Callback<F>(pub F);

impl<F: FnMut(&IterationRecord)> Recorder for Callback<F> {
    fn record(&mut self, rec: &IterationRecord) {
        (self.0)(rec)
    }
}

/// Discards everything.
pub struct Discard;

impl Recorder for Discard {
    fn record(&mut self, _: &IterationRecord) {}
}

/// Coefficient `c` in `L_k = F(θ̂) + c·γL²/(nρ)·‖Θ − 1θ̂ᵀ‖²_F`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovCoefficient {
    #[default]
    Three,
    TenThirds,
}

impl LyapunovCoefficient {
    pub fn value(self) -> f64 {
        match self {
            LyapunovCoefficient::Three => 3.0,
            LyapunovCoefficient::TenThirds => 10.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    pub smoothness: f64,
    pub rho: f64,
    pub gamma: f64,
    pub coefficient: LyapunovCoefficient,
}

pub fn stationarity<P: Problem + ?Sized>(problem: &P, theta: &DMatrix<f64>) -> f64 {
    let (n, d) = theta.shape();
    let mut g = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = theta.row(i).iter().copied().collect();
        problem.global_grad(&row, &mut g);
        total += g.iter().map(|x| x * x).sum::<f64>();
    }
    total / n as f64
}

/// `(1/n²) Σ_ij ‖θ_i − θ_j‖²`, computed as `(2/n) Σ_i ‖θ_i − θ̄‖²`.
pub fn disagreement(theta: &DMatrix<f64>) -> f64 {
    let n = theta.nrows();
    if n == 0 {
        return 0.0;
    }
    let mean = theta.row_mean();
    let mut s = 0.0;
    for i in 0..n {
        s += (theta.row(i) - &mean).norm_squared();
    }
    2.0 * s / n as f64
}

/// `‖Θ − 1πᵀΘ‖²_F`.
pub fn weighted_consensus_error(theta: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    let avg = theta.tr_mul(pi).transpose();
    (0..theta.nrows()).map(|i| (theta.row(i) - &avg).norm_squared()).sum()
}

/// `‖Y − 1πᵀ‖₂`.
pub fn y_deviation(y: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    let n = y.nrows();
    let dev = DMatrix::from_fn(n, n, |i, j| y[(i, j)] - pi[j]);
    dev.singular_values().max()
}

/// All record fields for `state`, with `a` the matrix used at this
/// iteration and `pi` its Perron vector.
pub fn compute_record<P: Problem + ?Sized>(
    state: &NetworkState,
    problem: &P,
    a: &DMatrix<f64>,
    pi: &DVector<f64>,
    lyap: &LyapunovConfig,
    spectral_gap_k: Option<f64>,
) -> IterationRecord {
    let n = state.n();
    let avg: Vec<f64> = state.theta.tr_mul(pi).iter().copied().collect();
    let f_at_avg = problem.global_value(&avg);
    let mut g = vec![0.0; avg.len()];
    problem.global_grad(&avg, &mut g);
    let grad_f_at_avg = g.iter().map(|x| x * x).sum();
    let wce = weighted_consensus_error(&state.theta, pi);
    let lyapunov = f_at_avg
        + lyap.coefficient.value() * lyap.gamma * lyap.smoothness.powi(2) / (n as f64 * lyap.rho) * wce;
    let j_value = DesignContext::new(&state.theta, &state.grads, state.y_diag(), pi, lyap.gamma, 0.0, a)
        .and_then(|ctx| design::design_j(a, &ctx))
        .unwrap_or(f64::NAN);
    IterationRecord {
        k: state.iteration,
        gamma: lyap.gamma,
        rho: lyap.rho,
        stationarity: stationarity(problem, &state.theta),
        disagreement: disagreement(&state.theta),
        weighted_consensus_error: wce,
        f_at_avg,
        lyapunov,
        j_value,
        grad_f_at_avg,
        y_deviation: y_deviation(&state.y, pi),
        spectral_gap_k,
    }
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope; `None` with fewer than 3 points.
    pub slope_stderr: Option<f64>,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let m = xs.len();
    if m != ys.len() {
        return Err(Error::DimensionMismatch {
            what: "fit samples",
            expected: m,
            got: ys.len(),
        });
    }
    if m < 2 {
        return Err(Error::InsufficientPoints(format!("{m} point(s), need at least 2")));
    }
    let mf = m as f64;
    let mx = xs.iter().sum::<f64>() / mf;
    let my = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = (m > 2).then(|| (sse / (mf - 2.0) / sxx).sqrt());
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        slope_stderr,
    })
}

/// Geometric decay `v_k ≈ C λ^k` fitted on `log v_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub lambda: f64,
    pub r2: f64,
}

pub fn fit_decay(ks: &[usize], values: &[f64]) -> Result<DecayFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ks
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(&k, &v)| (k as f64, v.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys)?;
    Ok(DecayFit {
        c: fit.intercept.exp(),
        lambda: fit.slope.exp(),
        r2: fit.r2,
    })
}

/// `Y⁰ = I, Y^{k+1} = A Y^k` for `k < steps`.
pub fn y_trajectory(a: &DMatrix<f64>, steps: usize) -> Vec<DMatrix<f64>> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(DMatrix::identity(n, n));
    for k in 0..steps {
        let next = a * &out[k];
        out.push(next);
    }
    out
}

/// `‖Ỹ⁻¹‖²_F = Σ_i 1/Y_ii²`.
pub fn inv_diag_norm_sq(y: &DMatrix<f64>) -> f64 {
    y.diagonal().iter().map(|v| 1.0 / (v * v)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    /// `Σ_i (1 − π_i)² + (n − 1)π_i²`.
    pub c_pi1: f64,
    /// `Σ_i 1/π_i²`.
    pub c_pi2: f64,
    pub rho: f64,
    pub smoothness: f64,
    /// Smallest `C₀` with `‖Ỹ_k⁻¹‖²_F ≤ C_π2 + C₀ λ̂^k` along the trajectory.
    pub c0: f64,
    /// Decay fit of `‖Y^k − 1πᵀ‖₂`.
    pub decay: Option<DecayFit>,
    /// `nρ / (2L √(C_π1 (C_π2 + C₀)))`.
    pub gamma_cap: f64,
    /// False when the decay fit is missing or has `R² < 0.9`.
    pub reliable: bool,
}

pub fn c_pi1(pi: &DVector<f64>) -> f64 {
    let n = pi.len() as f64;
    pi.iter().map(|p| (1.0 - p).powi(2) + (n - 1.0) * p * p).sum()
}

pub fn c_pi2(pi: &DVector<f64>) -> f64 {
    pi.iter().map(|p| 1.0 / (p * p)).sum()
}

/// Closed-form constants plus fits along `ys` (a trajectory `Y⁰, Y¹, …`).
/// Decay is fitted over `k ≥ min(10, len/10)` while the deviation is above
/// the roundoff floor `1e-13`.
pub fn theorem_constants(pi: &DVector<f64>, rho: f64, smoothness: f64, ys: &[DMatrix<f64>]) -> TheoremConstants {
    let n = pi.len();
    let c1 = c_pi1(pi);
    let c2 = c_pi2(pi);
    let start = 10.min(ys.len() / 10);
    let (ks, devs): (Vec<usize>, Vec<f64>) = ys
        .iter()
        .enumerate()
        .skip(start)
        .map(|(k, y)| (k, y_deviation(y, pi)))
        .filter(|(_, v)| *v > 1e-13)
        .unzip();
    let decay = fit_decay(&ks, &devs).ok();
    let c0 = match decay {
        Some(f) if f.lambda > 0.0 && f.lambda < 1.0 => ys
            .iter()
            .enumerate()
            .map(|(k, y)| (inv_diag_norm_sq(y) - c2) / f.lambda.powi(k as i32))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max),
        _ => 0.0,
    };
    let gamma_cap = if c1 > 0.0 {
        n as f64 * rho / (2.0 * smoothness * (c1 * (c2 + c0)).sqrt())
    } else {
        f64::INFINITY
    };
    TheoremConstants {
        c_pi1: c1,
        c_pi2: c2,
        rho,
        smoothness,
        c0,
        decay,
        gamma_cap,
        reliable: decay.is_some_and(|f| f.r2 >= 0.9),
    }
}

/// One point of a rate study; `None` marks a diverged run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub horizon: usize,
    pub min_stationarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub fit: LinearFit,
    /// `slope ± 2·stderr` when the standard error is defined.
    pub band: Option<(f64, f64)>,
    pub excluded: Vec<usize>,
}

/// Log–log slope of minimum stationarity against horizon.
pub fn rate_check(samples: &[RateSample]) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for s in samples {
        match s.min_stationarity {
            Some(v) if v > 0.0 && v.is_finite() => {
                xs.push((s.horizon as f64).ln());
                ys.push(v.ln());
            }
            _ => excluded.push(s.horizon),
        }
    }
    let fit = linear_fit(&xs, &ys)?;
    let band = fit.slope_stderr.map(|e| (fit.slope - 2.0 * e, fit.slope + 2.0 * e));
    Ok(RateFit { fit, band, excluded })
}

/// Runs Di-DGD with `γ = scale / T^(1/3)` for every `T` in `grid` and
/// collects the minimum recorded stationarity of each run.
pub fn rate_samples<P: Problem + ?Sized>(
    problem: &P,
    a: &MixingMatrix,
    scale: f64,
    grid: &[usize],
    opts: &DidgdOptions,
) -> Vec<RateSample> {
    grid.iter()
        .map(|&horizon| {
            let mut min = f64::INFINITY;
            let mut rec = Callback(|r: &IterationRecord| min = min.min(r.stationarity));
            let schedule = StepSchedule::HorizonScaled { scale, horizon };
            let ok = didgd::run_didgd(problem, a, &schedule, horizon, opts, &mut rec).is_ok();
            RateSample {
                horizon,
                min_stationarity: ok.then_some(min),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    /// Smallest `c` making the residual `≤ c γ³` on the calibration prefix.
    pub fitted_c: f64,
    /// Share of checked steps satisfying the bound.
    pub fraction: f64,
    pub calibration: usize,
    pub checked: usize,
    /// Per-step residuals, in order.
    pub residuals: Vec<f64>,
}

/// Residual of the one-step Lyapunov inequality for consecutive records:
///
/// ```text
/// L_{k+1} − L_k + (γ/4)‖∇F(θ̂^k)‖² + 3γL²(2−ρ)/(nρ)·E_k − 3γL²/(nρ)·E_{k+1}
/// ```
///
/// with `E` the weighted consensus error.
pub fn descent_residual(cur: &IterationRecord, next: &IterationRecord, n: usize, smoothness: f64) -> f64 {
    let g = cur.gamma;
    let rho = cur.rho;
    let base = 3.0 * g * smoothness * smoothness / (n as f64 * rho);
    next.lyapunov - cur.lyapunov + 0.25 * g * cur.grad_f_at_avg + base * (2.0 - rho) * cur.weighted_consensus_error
        - base * next.weighted_consensus_error
}

/// Fits `c` on the first `calibration_share` of the consecutive steps and
/// reports how often the remaining steps satisfy `residual ≤ c γ³`.
/// Records that are not one iteration apart are skipped.
pub fn descent_check(
    records: &[IterationRecord],
    n: usize,
    smoothness: f64,
    calibration_share: f64,
) -> DescentReport {
    let steps: Vec<(f64, f64)> = records
        .windows(2)
        .filter(|w| w[1].k == w[0].k + 1)
        .map(|w| (descent_residual(&w[0], &w[1], n, smoothness), w[0].gamma.powi(3)))
        .collect();
    let calibration = ((steps.len() as f64 * calibration_share).ceil() as usize).min(steps.len());
    let fitted_c = steps[..calibration]
        .iter()
        .map(|(r, g3)| r / g3)
        .fold(0.0, f64::max);
    let rest = &steps[calibration..];
    let ok = rest.iter().filter(|(r, g3)| *r <= fitted_c * g3).count();
    DescentReport {
        fitted_c,
        fraction: if rest.is_empty() { 1.0 } else { ok as f64 / rest.len() as f64 },
        calibration,
        checked: rest.len(),
        residuals: steps.iter().map(|(r, _)| *r).collect(),
    }
}
