//! The D³GD loop: Di-DGD with per-iteration refinement of the mixing
//! weights.
//!
//! Each iteration `k`:
//! 1. `A^k = (1 − δ)Ā^k + δA⁰`;
//! 2. one Di-DGD round with `A^k`;
//! 3. every active agent computes its row gradient from iteration-`k`
//!    quantities;
//! 4. projected step on each active row of `Ā`;
//! 5. trackers `z`, `q` absorb the increments of `Θ` and `∇F`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::design::{self, AgentView, DesignContext, GradientForm, ViewSource};
use crate::didgd::{self, InitRule, NetworkState, StepSchedule, TrackerState};
use crate::metrics::{self, LyapunovCoefficient, LyapunovConfig, Recorder};
use crate::mixing::{self, MixingMatrix};
use crate::problems::Problem;
use crate::rng::{stream_rng, Domain};
use crate::spectral::{self, GapConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed `A⁰` throughout.
    Didgd,
    /// Row gradients from global quantities.
    D3gdCentral,
    /// Row gradients from trackers and one-hop data only.
    #[default]
    D3gdDecentralized,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Didgd => "didgd",
            Mode::D3gdCentral => "d3gd_central",
            Mode::D3gdDecentralized => "d3gd_decentralized",
        }
    }
}

/// Which rows of `Ā` are updated at iteration `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ActiveSet {
    #[default]
    All,
    /// `m` consecutive agents (cyclically) starting at `k·m mod n`.
    RoundRobin { m: usize },
    /// `m` agents drawn uniformly without replacement.
    Random { m: usize, seed: u64 },
}

impl ActiveSet {
    /// Sorted active rows at iteration `k`.
    pub fn rows(&self, k: usize, n: usize) -> Vec<usize> {
        match *self {
            ActiveSet::All => (0..n).collect(),
            ActiveSet::RoundRobin { m } => {
                let m = m.min(n);
                let start = (k * m) % n;
                let mut v: Vec<usize> = (0..m).map(|t| (start + t) % n).collect();
                v.sort_unstable();
                v
            }
            ActiveSet::Random { m, seed } => {
                let mut rng = stream_rng(seed, Domain::ActiveSet, k as u64);
                let mut v = sample(&mut rng, n, m.min(n)).into_vec();
                v.sort_unstable();
                v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ActiveSet::RoundRobin { m: 0 } | ActiveSet::Random { m: 0, .. } => {
                Err(Error::param("active_set", "must select at least one row"))
            }
            _ => Ok(()),
        }
    }
}

/// Where the decentralized row gradient takes its tracker inputs from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerSource {
    /// The running `z`, `q` recursions.
    #[default]
    Dynamic,
    /// `z_i = Θᵀπ`, `q_i = y_ii(Ỹ⁻¹∇F)ᵀπ`, for equivalence testing.
    ExactTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub delta: f64,
    pub gamma: StepSchedule,
    pub eta: StepSchedule,
    pub active_set: ActiveSet,
    pub init: InitRule,
    pub record_stride: usize,
    /// Iterations at which `A^k` is saved; `0` and the final iteration are
    /// always included.
    pub snapshots: Vec<usize>,
    pub gradient_form: GradientForm,
    /// Halve `η` until the row objective decreases (central mode only).
    pub backtracking: bool,
    /// Warm-started power steps per iteration for `π_k`.
    pub pi_refresh_steps: usize,
    pub tracker_source: TrackerSource,
    pub lyapunov: LyapunovCoefficient,
    /// Smoothness constant for the Lyapunov value; problem's own if absent.
    pub smoothness: Option<f64>,
    pub gap_window: usize,
    pub gap_starts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            iterations: 2000,
            delta: 0.2,
            gamma: StepSchedule::constant(0.1),
            eta: StepSchedule::constant(1.0),
            active_set: ActiveSet::All,
            init: InitRule::default(),
            record_stride: 1,
            snapshots: Vec::new(),
            gradient_form: GradientForm::ChainRule,
            backtracking: false,
            pi_refresh_steps: 5,
            tracker_source: TrackerSource::Dynamic,
            lyapunov: LyapunovCoefficient::Three,
            smoothness: None,
            gap_window: 200,
            gap_starts: 8,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", format!("{} outside (0, 1)", self.delta)));
        }
        self.gamma.validate("gamma", false)?;
        self.eta.validate("eta", true)?;
        self.active_set.validate()?;
        if self.record_stride == 0 {
            return Err(Error::param("record_stride", "must be positive"));
        }
        if let Some(l) = self.smoothness {
            if !(l > 0.0) {
                return Err(Error::param("smoothness", "must be positive"));
            }
        }
        Ok(())
    }

    fn gap_config(&self) -> GapConfig {
        GapConfig {
            window: self.gap_window,
            starts: self.gap_starts,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub weights: MixingMatrix,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_state: NetworkState,
    /// `A^T`.
    pub final_weights: MixingMatrix,
    pub snapshots: Vec<Snapshot>,
}

/// `Z' = AZ + Θ⁺ − Θ`, `Q' = AQ + ∇F⁺ − ∇F`.
pub fn tracker_step(
    trackers: &TrackerState,
    a: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    theta_next: &DMatrix<f64>,
    grads: &DMatrix<f64>,
    grads_next: &DMatrix<f64>,
) -> Result<TrackerState> {
    let n = a.nrows();
    for (what, m) in [
        ("tracker z rows", &trackers.z),
        ("tracker q rows", &trackers.q),
        ("parameter rows", theta),
        ("next parameter rows", theta_next),
        ("gradient rows", grads),
        ("next gradient rows", grads_next),
    ] {
        if m.nrows() != n {
            return Err(Error::DimensionMismatch { what, expected: n, got: m.nrows() });
        }
    }
    Ok(TrackerState {
        z: a * &trackers.z + theta_next - theta,
        q: a * &trackers.q + grads_next - grads,
    })
}

/// Data sources an agent touches during one iteration of `mode`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessReport {
    pub mode: Mode,
    /// Rows of other agents the update reads, by quantity.
    pub neighbor_reads: Vec<String>,
    /// Network-wide quantities the update reads.
    pub global_reads: Vec<String>,
    pub one_hop_only: bool,
}

/// What each mode's per-agent update reads. The decentralized row gradient
/// takes an [`AgentView`] only, so its report mirrors that type's fields.
pub fn information_audit(mode: Mode) -> AccessReport {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    match mode {
        Mode::Didgd => AccessReport {
            mode,
            neighbor_reads: s(&["theta_j", "y_j"]),
            global_reads: vec![],
            one_hop_only: true,
        },
        Mode::D3gdCentral => AccessReport {
            mode,
            neighbor_reads: s(&["theta_j", "y_j"]),
            global_reads: s(&["Theta", "grad_F", "Y_diag", "pi"]),
            one_hop_only: false,
        },
        Mode::D3gdDecentralized => AccessReport {
            mode,
            neighbor_reads: s(&["theta_j", "y_j", "z_j", "q_j"]),
            global_reads: vec![],
            one_hop_only: true,
        },
    }
}

struct Observer {
    smoothness: f64,
    coefficient: LyapunovCoefficient,
    gap: GapConfig,
    rho: f64,
}

impl Observer {
    fn record<P: Problem + ?Sized, R: Recorder + ?Sized>(
        &mut self,
        state: &NetworkState,
        problem: &P,
        a: &DMatrix<f64>,
        pi: &DVector<f64>,
        gamma: f64,
        refresh_gap: bool,
        recorder: &mut R,
    ) {
        let gap = if refresh_gap {
            self.rho = spectral::spectral_gap(a, pi, &self.gap);
            Some(self.rho)
        } else {
            None
        };
        let lyap = LyapunovConfig {
            smoothness: self.smoothness,
            rho: self.rho,
            gamma,
            coefficient: self.coefficient,
        };
        recorder.record(&metrics::compute_record(state, problem, a, pi, &lyap, gap));
    }
}

/// Runs `config.iterations` iterations from `a0`. Records go to
/// `recorder`; snapshots of `A^k` are returned.
pub fn run_d3gd<P: Problem + ?Sized, R: Recorder + ?Sized>(
    problem: &P,
    a0: &MixingMatrix,
    config: &RunConfig,
    recorder: &mut R,
) -> Result<RunOutput> {
    config.validate()?;
    let n = a0.n();
    if n != problem.num_agents() {
        return Err(Error::DimensionMismatch {
            what: "agents",
            expected: problem.num_agents(),
            got: n,
        });
    }
    let graph = a0.graph().clone();
    let a0w = a0.weights();
    let t_max = config.iterations;
    let adaptive = config.mode != Mode::Didgd;

    let mut state = didgd::didgd_init(problem, &config.init)?;
    if adaptive {
        state.trackers = Some(TrackerState {
            z: state.theta.clone(),
            q: state.grads.clone(),
        });
        state.abar = Some(a0w.clone());
    }
    let mut pi_k = spectral::perron_of(a0)?.pi;
    let mut observer = Observer {
        smoothness: config.smoothness.or_else(|| problem.smoothness()).unwrap_or(1.0),
        coefficient: config.lyapunov,
        gap: config.gap_config(),
        rho: 1.0,
    };
    let mut snapshots = Vec::new();
    let wants_snapshot = |k: usize| k == 0 || k == t_max || config.snapshots.contains(&k);

    for k in 0..=t_max {
        let a_k = match &state.abar {
            Some(abar) if adaptive => design::mix_weights(abar, a0w, config.delta),
            _ => a0w.clone(),
        };
        if adaptive && k > 0 {
            pi_k = spectral::perron_refresh(&a_k, &pi_k, config.pi_refresh_steps);
        }
        let snap = wants_snapshot(k);
        if snap {
            snapshots.push(Snapshot {
                iteration: k,
                weights: MixingMatrix::new(graph.clone(), a_k.clone())?,
            });
        }
        if didgd::should_record(k, t_max, config.record_stride) || snap {
            let pi_obs = if adaptive {
                spectral::perron_vector(&a_k, spectral::DEFAULT_PERRON_TOL, spectral::default_max_iter(n))?.pi
            } else {
                pi_k.clone()
            };
            let refresh = k == 0 || (adaptive && snap);
            observer.record(&state, problem, &a_k, &pi_obs, config.gamma.at(k), refresh, recorder);
        }
        if k == t_max {
            return Ok(RunOutput {
                final_weights: MixingMatrix::new(graph.clone(), a_k)?,
                final_state: state,
                snapshots,
            });
        }

        let gamma = config.gamma.at(k);
        let mut next = didgd::didgd_step(&state, &a_k, gamma, problem)?;
        didgd::check_divergence(&next)?;

        if adaptive {
            let eta = config.eta.at(k);
            let abar = state.abar.as_ref().expect("adaptive state carries a design variable");
            let trackers = state.trackers.as_ref().expect("adaptive state carries trackers");
            let ctx = DesignContext::new(&state.theta, &state.grads, state.y_diag(), &pi_k, gamma, config.delta, a0w)?;
            let mut new_abar = abar.clone();
            let rows = config.active_set.rows(k, n);
            let updated: Vec<(usize, Vec<f64>)> = match config.mode {
                Mode::D3gdCentral => rows
                    .iter()
                    .map(|&i| {
                        let support = graph.in_neighbors(i);
                        design::row_update(i, abar, support, &ctx, eta, config.gradient_form, config.backtracking)
                            .map(|r| (i, r))
                    })
                    .collect::<Result<_>>()?,
                _ => {
                    let (z, q) = match config.tracker_source {
                        TrackerSource::Dynamic => (trackers.z.clone(), trackers.q.clone()),
                        TrackerSource::ExactTargets => {
                            let d = state.dim();
                            (
                                DMatrix::from_fn(n, d, |_, t| ctx.theta_pi()[t]),
                                DMatrix::from_fn(n, d, |i, t| ctx.q_target(i)[t]),
                            )
                        }
                    };
                    let src = ViewSource {
                        graph: &graph,
                        theta: &state.theta,
                        y: &state.y,
                        z: &z,
                        q: &q,
                        grads: &state.grads,
                        abar,
                        a0: a0w,
                    };
                    rows.iter()
                        .map(|&i| {
                            let view = AgentView::gather(i, &src, gamma, eta, config.delta);
                            let g = design::decentralized_row_gradient(&view, config.gradient_form)?;
                            let row: Vec<f64> = abar.row(i).iter().copied().collect();
                            design::projected_step(&row, &view.support, &g, eta).map(|r| (i, r))
                        })
                        .collect::<Result<_>>()?
                }
            };
            for (i, row) in updated {
                for (j, v) in row.into_iter().enumerate() {
                    new_abar[(i, j)] = v;
                }
            }
            mixing::check_feasible(&graph, &new_abar)?;
            let trackers = tracker_step(trackers, &a_k, &state.theta, &next.theta, &state.grads, &next.grads)?;
            next.trackers = Some(trackers);
            next.abar = Some(new_abar);
        }
        state = next;
    }
    unreachable!("loop returns at k = iterations")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::didgd::DidgdOptions;
    use crate::graph::{generate_er_digraph, DirectedGraph};
    use crate::metrics::IterationRecord;
    use crate::mixing::{metropolis_weights, uniform_in_weights};
    use crate::problems::QuadraticProblem;
    use std::sync::Arc;

    fn setup(n: usize, seed: u64) -> (QuadraticProblem, MixingMatrix) {
        let p = QuadraticProblem::random(n, 3, seed, 5.0).unwrap();
        let g = Arc::new(generate_er_digraph(n, 0.4, seed).unwrap());
        (p, metropolis_weights(g).unwrap())
    }

    fn cfg(mode: Mode, iterations: usize) -> RunConfig {
        RunConfig {
            mode,
            iterations,
            gamma: StepSchedule::constant(0.02),
            init: InitRule::Gaussian { scale: 1.0, seed: 4 },
            gap_window: 20,
            gap_starts: 2,
            ..Default::default()
        }
    }

    #[test]
    fn tracker_converges_to_weighted_average_for_frozen_signal() {
        let a = uniform_in_weights(Arc::new(generate_er_digraph(5, 0.4, 2).unwrap())).unwrap();
        let pi = spectral::perron_of(&a).unwrap().pi;
        let theta = DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64);
        let grads = DMatrix::from_fn(5, 2, |i, j| (i as f64 - j as f64).sin());
        let mut tr = TrackerState { z: theta.clone(), q: grads.clone() };
        for _ in 0..500 {
            tr = tracker_step(&tr, a.weights(), &theta, &theta, &grads, &grads).unwrap();
        }
        let target = theta.tr_mul(&pi);
        for i in 0..5 {
            assert!((tr.z.row(i).transpose() - &target).norm() < 1e-8);
        }
    }

    #[test]
    fn tracker_single_agent_follows_signal() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let mut tr = TrackerState {
            z: DMatrix::from_element(1, 1, 2.0),
            q: DMatrix::from_element(1, 1, -1.0),
        };
        let mut th = 2.0;
        let mut g = -1.0;
        for k in 0..10 {
            let th2 = (k as f64).cos();
            let g2 = (k as f64).sin();
            tr = tracker_step(
                &tr,
                &a,
                &DMatrix::from_element(1, 1, th),
                &DMatrix::from_element(1, 1, th2),
                &DMatrix::from_element(1, 1, g),
                &DMatrix::from_element(1, 1, g2),
            )
            .unwrap();
            th = th2;
            g = g2;
            assert!((tr.z[(0, 0)] - th).abs() < 1e-14 && (tr.q[(0, 0)] - g).abs() < 1e-14);
        }
    }

    #[test]
    fn tracker_consensus_is_stationary() {
        let a = uniform_in_weights(Arc::new(DirectedGraph::ring(4).unwrap())).unwrap();
        let z = DMatrix::from_fn(4, 2, |_, j| j as f64 + 0.5);
        let zero = DMatrix::zeros(4, 2);
        let tr = TrackerState { z: z.clone(), q: z.clone() };
        let out = tracker_step(&tr, a.weights(), &zero, &zero, &zero, &zero).unwrap();
        assert_eq!(out.z, z);
        assert_eq!(out.q, z);
    }

    fn thetas(p: &QuadraticProblem, a: &MixingMatrix, c: &RunConfig) -> (Vec<IterationRecord>, RunOutput) {
        let mut recs = Vec::new();
        let out = run_d3gd(p, a, c, &mut recs).unwrap();
        (recs, out)
    }

    #[test]
    fn didgd_mode_matches_didgd_driver() {
        let (p, a) = setup(6, 1);
        let c = cfg(Mode::Didgd, 60);
        let (recs, out) = thetas(&p, &a, &c);
        let opts = DidgdOptions {
            init: c.init.clone(),
            record_stride: 1,
            smoothness: None,
            lyapunov: c.lyapunov,
            gap: c.gap_config(),
        };
        let mut r2: Vec<IterationRecord> = Vec::new();
        let traj = didgd::run_didgd(&p, &a, &c.gamma, 60, &opts, &mut r2).unwrap();
        assert_eq!(out.final_state.theta, traj.final_state.theta);
        assert_eq!(recs.len(), r2.len());
    }

    #[test]
    fn delta_near_one_collapses_to_didgd() {
        let (p, a) = setup(6, 2);
        let mut c = cfg(Mode::D3gdCentral, 100);
        c.delta = 1.0 - 1e-9;
        let (_, out) = thetas(&p, &a, &c);
        let (_, base) = thetas(&p, &a, &cfg(Mode::Didgd, 100));
        assert!((&out.final_state.theta - &base.final_state.theta).amax() < 1e-6);
    }

    #[test]
    fn zero_eta_is_exactly_didgd() {
        let (p, a) = setup(6, 3);
        for mode in [Mode::D3gdCentral, Mode::D3gdDecentralized] {
            let mut c = cfg(mode, 80);
            c.eta = StepSchedule::constant(0.0);
            let (_, out) = thetas(&p, &a, &c);
            let (_, base) = thetas(&p, &a, &cfg(Mode::Didgd, 80));
            assert_eq!(out.final_state.theta, base.final_state.theta);
            assert_eq!(out.final_state.abar.unwrap(), *a.weights());
        }
    }

    #[test]
    fn exact_targets_make_modes_agree() {
        let (p, a) = setup(5, 4);
        let central = cfg(Mode::D3gdCentral, 50);
        let mut dec = cfg(Mode::D3gdDecentralized, 50);
        dec.tracker_source = TrackerSource::ExactTargets;
        let (rc, oc) = thetas(&p, &a, &central);
        let (rd, od) = thetas(&p, &a, &dec);
        assert!((&oc.final_state.theta - &od.final_state.theta).amax() < 1e-10);
        assert!((oc.final_weights.weights() - od.final_weights.weights()).amax() < 1e-10);
        for (x, y) in rc.iter().zip(&rd) {
            assert!((x.stationarity - y.stationarity).abs() < 1e-10);
        }
    }

    #[test]
    fn weights_stay_feasible_and_supported() {
        let (p, a) = setup(7, 5);
        for mode in [Mode::D3gdCentral, Mode::D3gdDecentralized] {
            let mut c = cfg(mode, 40);
            c.snapshots = (0..=40).collect();
            let (_, out) = thetas(&p, &a, &c);
            assert_eq!(out.snapshots.len(), 41);
            for s in &out.snapshots {
                mixing::check_feasible(a.graph(), s.weights.weights()).unwrap();
                for i in 0..7 {
                    assert!(s.weights.weights()[(i, i)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (p, a) = setup(6, 6);
        let mut c = cfg(Mode::D3gdDecentralized, 30);
        c.active_set = ActiveSet::Random { m: 3, seed: 9 };
        let (r1, o1) = thetas(&p, &a, &c);
        let (r2, o2) = thetas(&p, &a, &c);
        assert_eq!(r1, r2);
        assert_eq!(o1.final_weights, o2.final_weights);
    }

    #[test]
    fn inactive_rows_are_untouched() {
        let (p, a) = setup(6, 7);
        let mut c = cfg(Mode::D3gdCentral, 1);
        c.active_set = ActiveSet::RoundRobin { m: 2 };
        let (_, out) = thetas(&p, &a, &c);
        let abar = out.final_state.abar.unwrap();
        for i in 2..6 {
            assert_eq!(abar.row(i), a.weights().row(i));
        }
    }

    #[test]
    fn active_set_policies() {
        assert_eq!(ActiveSet::All.rows(3, 4), vec![0, 1, 2, 3]);
        assert_eq!(ActiveSet::RoundRobin { m: 3 }.rows(1, 5), vec![0, 3, 4]);
        let r = ActiveSet::Random { m: 2, seed: 1 };
        assert_eq!(r.rows(7, 10), r.rows(7, 10));
        assert_eq!(r.rows(7, 10).len(), 2);
        assert!(ActiveSet::Random { m: 0, seed: 0 }.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        c.delta = 1.0;
        assert!(c.validate().is_err());
        c.delta = 0.2;
        c.record_stride = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn audit_reports() {
        assert!(information_audit(Mode::Didgd).one_hop_only);
        assert!(!information_audit(Mode::D3gdCentral).one_hop_only);
        let d = information_audit(Mode::D3gdDecentralized);
        assert!(d.one_hop_only && d.global_reads.is_empty());
    }

    #[test]
    fn zero_iterations_records_initial_state() {
        let (p, a) = setup(4, 8);
        let (recs, out) = thetas(&p, &a, &cfg(Mode::D3gdCentral, 0));
        assert_eq!(recs.len(), 1);
        assert_eq!(out.snapshots.len(), 1);
        assert_eq!(out.final_weights, a);
    }
}
