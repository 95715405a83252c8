//! Directed decentralized gradient descent (Di-DGD).
//!
//! One synchronous round maps `(Θ, Y)` at iteration `k` to `k + 1`:
//!
//! ```text
//! θ_i ← Σ_j A_ij θ_j − γ_k / (n y_ii) ∇f_i(θ_i)
//! y_i ← Σ_j A_ij y_j
//! ```
//!
//! `Y` starts at the identity, so `y_ii` estimates the Perron weight `π_i`
//! and the rescaling undoes the bias of row-stochastic averaging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::metrics::{self, LyapunovConfig, Recorder};
use crate::mixing::MixingMatrix;
use crate::problems::Problem;
use crate::rng::{stream_rng, Domain, Gaussian};
use crate::spectral::{self, GapConfig};
use crate::{Error, Result};

/// `‖Θ‖_F` above which a run is aborted as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Dynamic-consensus trackers: `z_i` follows `Θᵀπ`, `q_i` follows `∇Fᵀπ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub z: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Full algorithm state at one iteration. Row `i` of each block belongs to
/// agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub theta: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `∇f_i(θ_i)` at the current iterate, cached for tracker increments.
    pub grads: DMatrix<f64>,
    pub iteration: usize,
    pub trackers: Option<TrackerState>,
    /// Current design variable `Ā` (D³GD only).
    pub abar: Option<DMatrix<f64>>,
}

impl NetworkState {
    pub fn n(&self) -> usize {
        self.theta.nrows()
    }

    pub fn dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn theta_row(&self, i: usize) -> Vec<f64> {
        self.theta.row(i).iter().copied().collect()
    }

    pub fn y_diag(&self) -> DVector<f64> {
        self.y.diagonal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitRule {
    Zeros,
    /// Independent `N(0, scale²)` coordinates; agent `i` uses its own stream.
    Gaussian { scale: f64, seed: u64 },
    /// Every agent starts at the same point.
    Consensus { point: Vec<f64> },
}

impl Default for InitRule {
    fn default() -> Self {
        InitRule::Gaussian {
            scale: 0.1,
            seed: 0,
        }
    }
}

/// Evaluates `∇f_i(θ_i)` for every agent.
pub fn gradient_stack<P: Problem + ?Sized>(problem: &P, theta: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = theta.shape();
    let mut out = DMatrix::zeros(n, d);
    let mut row = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..n {
        for (r, v) in row.iter_mut().zip(theta.row(i).iter()) {
            *r = *v;
        }
        problem.local_grad(i, &row, &mut g);
        for (j, v) in g.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    out
}

/// `Y⁰ = I`, `Θ⁰` per `rule`, `k = 0`.
pub fn didgd_init<P: Problem + ?Sized>(problem: &P, rule: &InitRule) -> Result<NetworkState> {
    let (n, d) = (problem.num_agents(), problem.dim());
    let theta = match rule {
        InitRule::Zeros => DMatrix::zeros(n, d),
        InitRule::Gaussian { scale, seed } => {
            let mut theta = DMatrix::zeros(n, d);
            for i in 0..n {
                let mut g = Gaussian::new(stream_rng(*seed, Domain::Init, 1 + i as u64));
                for j in 0..d {
                    theta[(i, j)] = scale * g.sample();
                }
            }
            theta
        }
        InitRule::Consensus { point } => {
            if point.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "initial point",
                    expected: d,
                    got: point.len(),
                });
            }
            DMatrix::from_fn(n, d, |_, j| point[j])
        }
    };
    let grads = gradient_stack(problem, &theta);
    Ok(NetworkState {
        theta,
        y: DMatrix::identity(n, n),
        grads,
        iteration: 0,
        trackers: None,
        abar: None,
    })
}

/// One synchronous Di-DGD round. All reads come from `state` (iteration
/// `k`); the returned state is iteration `k + 1` with fresh cached
/// gradients. Trackers and `Ā` are carried over untouched.
pub fn didgd_step<P: Problem + ?Sized>(
    state: &NetworkState,
    a: &DMatrix<f64>,
    gamma: f64,
    problem: &P,
) -> Result<NetworkState> {
    let n = state.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "mixing matrix side",
            expected: n,
            got: a.nrows(),
        });
    }
    let mut theta = a * &state.theta;
    for i in 0..n {
        let yii = state.y[(i, i)];
        if !(yii > 0.0) {
            return Err(Error::NonPositiveDiagonal {
                iteration: state.iteration,
                agent: i,
                value: yii,
            });
        }
        let scale = gamma / (n as f64 * yii);
        let mut row = theta.row_mut(i);
        row -= state.grads.row(i) * scale;
    }
    let y = a * &state.y;
    let grads = gradient_stack(problem, &theta);
    Ok(NetworkState {
        theta,
        y,
        grads,
        iteration: state.iteration + 1,
        trackers: state.trackers.clone(),
        abar: state.abar.clone(),
    })
}

/// `θ̂ = Θᵀπ`.
pub fn weighted_average(state: &NetworkState, pi: &DVector<f64>) -> Result<DVector<f64>> {
    if pi.len() != state.n() {
        return Err(Error::DimensionMismatch {
            what: "Perron vector length",
            expected: state.n(),
            got: pi.len(),
        });
    }
    Ok(state.theta.tr_mul(pi))
}

/// Step size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { value: f64 },
    /// `initial / (k + 1)^exponent`.
    Polynomial { initial: f64, exponent: f64 },
    /// Run-constant `scale / T^(1/3)`.
    HorizonScaled { scale: f64, horizon: usize },
}

impl StepSchedule {
    pub fn constant(value: f64) -> Self {
        StepSchedule::Constant { value }
    }

    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::Polynomial { initial, exponent } => initial / ((k + 1) as f64).powf(exponent),
            StepSchedule::HorizonScaled { scale, horizon } => scale / (horizon.max(1) as f64).cbrt(),
        }
    }

    /// Positive and nonincreasing. `allow_zero` admits the constant 0.
    pub fn validate(&self, name: &'static str, allow_zero: bool) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { value } => value > 0.0 || (allow_zero && value == 0.0),
            StepSchedule::Polynomial { initial, exponent } => initial > 0.0 && exponent >= 0.0,
            StepSchedule::HorizonScaled { scale, .. } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(name, format!("invalid schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DidgdOptions {
    pub init: InitRule,
    pub record_stride: usize,
    /// Smoothness constant used in the Lyapunov value; falls back to the
    /// problem's exact constant, then to 1.
    pub smoothness: Option<f64>,
    pub lyapunov: metrics::LyapunovCoefficient,
    pub gap: GapConfig,
}

impl Default for DidgdOptions {
    fn default() -> Self {
        Self {
            init: InitRule::default(),
            record_stride: 1,
            smoothness: None,
            lyapunov: Default::default(),
            gap: GapConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_state: NetworkState,
    pub pi: DVector<f64>,
    pub rho: f64,
}

pub(crate) fn check_divergence(state: &NetworkState) -> Result<()> {
    let norm = state.theta.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Diverged {
            iteration: state.iteration,
            norm,
        });
    }
    Ok(())
}

pub(crate) fn should_record(k: usize, total: usize, stride: usize) -> bool {
    k == total || k % stride.max(1) == 0
}

/// Runs `iterations` Di-DGD rounds with fixed `A`, recording metrics every
/// `record_stride` iterations and at the end.
pub fn run_didgd<P: Problem + ?Sized, R: Recorder + ?Sized>(
    problem: &P,
    a: &MixingMatrix,
    schedule: &StepSchedule,
    iterations: usize,
    opts: &DidgdOptions,
    recorder: &mut R,
) -> Result<Trajectory> {
    schedule.validate("gamma", false)?;
    if a.n() != problem.num_agents() {
        return Err(Error::DimensionMismatch {
            what: "agents",
            expected: problem.num_agents(),
            got: a.n(),
        });
    }
    let pi = spectral::perron_of(a)?.pi;
    let rho = spectral::spectral_gap(a.weights(), &pi, &opts.gap);
    let smoothness = opts.smoothness.or_else(|| problem.smoothness()).unwrap_or(1.0);
    let mut state = didgd_init(problem, &opts.init)?;
    for k in 0..=iterations {
        if should_record(k, iterations, opts.record_stride) {
            let gamma = schedule.at(k);
            let lyap = LyapunovConfig {
                smoothness,
                rho,
                gamma,
                coefficient: opts.lyapunov,
            };
            let spectral_gap = (k == 0).then_some(rho);
            recorder.record(&metrics::compute_record(
                &state,
                problem,
                a.weights(),
                &pi,
                &lyap,
                spectral_gap,
            ));
        }
        if k == iterations {
            break;
        }
        state = didgd_step(&state, a.weights(), schedule.at(k), problem)?;
        check_divergence(&state)?;
    }
    Ok(Trajectory {
        final_state: state,
        pi,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::IterationRecord;
    use crate::graph::DirectedGraph;
    use crate::problems::QuadraticProblem;
    use std::sync::Arc;

    struct NoGrad(usize, usize);
    impl Problem for NoGrad {
        fn num_agents(&self) -> usize {
            self.0
        }
        fn dim(&self) -> usize {
            self.1
        }
        fn local_value(&self, _: usize, _: &[f64]) -> f64 {
            0.0
        }
        fn local_grad(&self, _: usize, _: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    #[test]
    fn init_rules() {
        let p = QuadraticProblem::random(3, 2, 0, 2.0).unwrap();
        let s = didgd_init(&p, &InitRule::Zeros).unwrap();
        assert!(s.theta.iter().all(|&v| v == 0.0));
        assert_eq!(s.y, DMatrix::identity(3, 3));
        assert_eq!(s.iteration, 0);
        let r = InitRule::Gaussian { scale: 0.1, seed: 5 };
        assert_eq!(didgd_init(&p, &r).unwrap(), didgd_init(&p, &r).unwrap());
        assert!(didgd_init(&p, &InitRule::Consensus { point: vec![1.0] }).is_err());
    }

    #[test]
    fn single_agent_is_gradient_descent() {
        let p = QuadraticProblem::random(1, 3, 4, 3.0).unwrap();
        let a = DMatrix::from_element(1, 1, 1.0);
        let s = didgd_init(&p, &InitRule::Gaussian { scale: 1.0, seed: 2 }).unwrap();
        let next = didgd_step(&s, &a, 0.1, &p).unwrap();
        let theta = s.theta_row(0);
        let mut g = vec![0.0; 3];
        p.local_grad(0, &theta, &mut g);
        for j in 0..3 {
            assert!((next.theta[(0, j)] - (theta[j] - 0.1 * g[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_pure_consensus() {
        let p = NoGrad(3, 2);
        let a = crate::mixing::uniform_in_weights(Arc::new(DirectedGraph::ring(3).unwrap())).unwrap();
        let mut s = didgd_init(&p, &InitRule::Gaussian { scale: 1.0, seed: 1 }).unwrap();
        let mut prev = metrics::disagreement(&s.theta);
        for _ in 0..20 {
            let next = didgd_step(&s, a.weights(), 0.3, &p).unwrap();
            assert!((&next.theta - a.weights() * &s.theta).amax() < 1e-15);
            let d = metrics::disagreement(&next.theta);
            assert!(d <= prev + 1e-15);
            prev = d;
            s = next;
        }
    }

    #[test]
    fn two_agent_step_by_hand() {
        // f_i(θ) = ½ q_i (θ − b_i)², scalar; A = [[1/2, 1/2], [1/4, 3/4]].
        let p = QuadraticProblem::new(
            vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        )
        .unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
        let s = didgd_init(&p, &InitRule::Consensus { point: vec![0.0] }).unwrap();
        let mut s = s;
        s.theta = DMatrix::from_row_slice(2, 1, &[3.0, -2.0]);
        s.grads = gradient_stack(&p, &s.theta);
        let next = didgd_step(&s, &a, 0.1, &p).unwrap();
        // Agent 0: 0.5*3 + 0.5*(−2) − 0.1/(2*1) * 2*(3−1) = 0.5 − 0.2 = 0.3
        // Agent 1: 0.25*3 + 0.75*(−2) − 0.1/(2*1) * 1*(−2+1) = −0.75 + 0.05 = −0.7
        assert!((next.theta[(0, 0)] - 0.3).abs() < 1e-12);
        assert!((next.theta[(1, 0)] + 0.7).abs() < 1e-12);
        assert_eq!(next.y, a);
        // Second step uses y_00 = 1/2, y_11 = 3/4.
        let next2 = didgd_step(&next, &a, 0.1, &p).unwrap();
        let t0 = 0.5 * 0.3 + 0.5 * -0.7 - 0.1 / (2.0 * 0.5) * 2.0 * (0.3 - 1.0);
        let t1 = 0.25 * 0.3 + 0.75 * -0.7 - 0.1 / (2.0 * 0.75) * (-0.7 + 1.0);
        assert!((next2.theta[(0, 0)] - t0).abs() < 1e-12);
        assert!((next2.theta[(1, 0)] - t1).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_diagonal_is_fatal() {
        let p = NoGrad(2, 1);
        let mut s = didgd_init(&p, &InitRule::Zeros).unwrap();
        s.y[(1, 1)] = 0.0;
        s.iteration = 7;
        let a = DMatrix::from_element(2, 2, 0.5);
        match didgd_step(&s, &a, 0.1, &p) {
            Err(Error::NonPositiveDiagonal { iteration: 7, agent: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weighted_average_examples() {
        let p = NoGrad(2, 1);
        let mut s = didgd_init(&p, &InitRule::Zeros).unwrap();
        s.theta = DMatrix::from_row_slice(2, 1, &[0.0, 3.0]);
        let pi = DVector::from_vec(vec![1.0 / 3.0, 2.0 / 3.0]);
        assert!((weighted_average(&s, &pi).unwrap()[0] - 2.0).abs() < 1e-15);
        let uniform = DVector::from_element(2, 0.5);
        assert_eq!(weighted_average(&s, &uniform).unwrap()[0], 1.5);
        assert!(weighted_average(&s, &DVector::from_element(3, 1.0 / 3.0)).is_err());
        s.theta = DMatrix::from_row_slice(2, 1, &[4.0, 4.0]);
        assert_eq!(weighted_average(&s, &pi).unwrap()[0], 4.0);
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::constant(0.1).at(50), 0.1);
        let p = StepSchedule::Polynomial { initial: 1.0, exponent: 0.5 };
        assert_eq!(p.at(3), 0.5);
        let h = StepSchedule::HorizonScaled { scale: 1.0, horizon: 1000 };
        assert!((h.at(0) - 0.1).abs() < 1e-15 && h.at(0) == h.at(999));
        assert!(StepSchedule::constant(0.0).validate("eta", true).is_ok());
        assert!(StepSchedule::constant(0.0).validate("gamma", false).is_err());
    }

    #[test]
    fn zero_iterations_record_initial_metrics_only() {
        let p = QuadraticProblem::random(3, 2, 0, 2.0).unwrap();
        let a = crate::mixing::uniform_in_weights(Arc::new(DirectedGraph::ring(3).unwrap())).unwrap();
        let mut recs: Vec<IterationRecord> = Vec::new();
        run_didgd(&p, &a, &StepSchedule::constant(0.1), 0, &DidgdOptions::default(), &mut recs).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].k, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let p = QuadraticProblem::random(3, 2, 0, 2.0).unwrap();
        let a = crate::mixing::uniform_in_weights(Arc::new(DirectedGraph::ring(3).unwrap())).unwrap();
        let mut recs: Vec<IterationRecord> = Vec::new();
        let err = run_didgd(&p, &a, &StepSchedule::constant(50.0), 500, &DidgdOptions::default(), &mut recs)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert!(!recs.is_empty());
    }
}
