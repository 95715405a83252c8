//! Local objective families `f_i` with exact gradients.
//!
//! The global objective is the plain mean `F = (1/n) Σ f_i`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::rng::{stream_rng, Domain, Gaussian};
use crate::{Error, Result};

pub trait Problem: Send + Sync {
    fn num_agents(&self) -> usize;

    /// Flat parameter dimension.
    fn dim(&self) -> usize;

    fn local_value(&self, agent: usize, theta: &[f64]) -> f64;

    /// Writes `∇f_agent(theta)` into `out` (overwriting it).
    fn local_grad(&self, agent: usize, theta: &[f64], out: &mut [f64]);

    /// Exact smoothness constant when it is known in closed form.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    fn global_value(&self, theta: &[f64]) -> f64 {
        let n = self.num_agents();
        (0..n).map(|i| self.local_value(i, theta)).sum::<f64>() / n as f64
    }

    fn global_grad(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.num_agents();
        out.fill(0.0);
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            self.local_grad(i, theta, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi;
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
    }
}

impl<P: Problem + ?Sized> Problem for Arc<P> {
    fn num_agents(&self) -> usize {
        (**self).num_agents()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn local_value(&self, agent: usize, theta: &[f64]) -> f64 {
        (**self).local_value(agent, theta)
    }
    fn local_grad(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        (**self).local_grad(agent, theta, out)
    }
    fn smoothness(&self) -> Option<f64> {
        (**self).smoothness()
    }
}

// ---------------------------------------------------------------------------
// Sigmoid-loss K-class classifier
// ---------------------------------------------------------------------------

/// Sign convention of the per-class sigmoid term.
///
/// `Verbatim` evaluates `1 / (1 + exp(-y z))` exactly as the loss is usually
/// written for this experiment, which rewards *negative* margins on the
/// true class. `Corrected` uses `1 / (1 + exp(+y z))`, which penalizes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    #[default]
    Verbatim,
    Corrected,
}

impl SignMode {
    fn sign(self) -> f64 {
        match self {
            SignMode::Verbatim => 1.0,
            SignMode::Corrected => -1.0,
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    pub agents: usize,
    pub features: usize,
    pub classes: usize,
}

impl ProblemDims {
    pub fn new(agents: usize, features: usize, classes: usize) -> Result<Self> {
        if agents == 0 || features == 0 || classes == 0 {
            return Err(Error::param("dims", "agents, features and classes must be positive"));
        }
        Ok(Self {
            agents,
            features,
            classes,
        })
    }

    /// `θ = (θ^(1), ..., θ^(K))` stacked, each block of length `d`.
    pub fn flat(&self) -> usize {
        self.features * self.classes
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_theta(ds: &SyntheticDataset, agent: usize, theta: &[f64]) -> Result<()> {
    let flat = ds.dim() * ds.classes();
    if theta.len() != flat {
        return Err(Error::DimensionMismatch {
            what: "parameter length",
            expected: flat,
            got: theta.len(),
        });
    }
    if agent >= ds.num_agents() {
        return Err(Error::DimensionMismatch {
            what: "agent index bound",
            expected: ds.num_agents(),
            got: agent,
        });
    }
    Ok(())
}

/// `(1/M) Σ_m Σ_k σ(± y_mk x_mᵀθ^(k)) + (λ/2) ‖θ‖²` for one agent.
pub fn sigmoid_loss_value(
    theta: &[f64],
    agent: usize,
    ds: &SyntheticDataset,
    lambda: f64,
    mode: SignMode,
) -> Result<f64> {
    check_theta(ds, agent, theta)?;
    Ok(sigmoid_value_unchecked(theta, agent, ds, lambda, mode))
}

pub fn sigmoid_loss_grad(
    theta: &[f64],
    agent: usize,
    ds: &SyntheticDataset,
    lambda: f64,
    mode: SignMode,
) -> Result<Vec<f64>> {
    check_theta(ds, agent, theta)?;
    let mut out = vec![0.0; theta.len()];
    sigmoid_grad_unchecked(theta, agent, ds, lambda, mode, &mut out);
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid_value_unchecked(
    theta: &[f64],
    agent: usize,
    ds: &SyntheticDataset,
    lambda: f64,
    mode: SignMode,
) -> f64 {
    let (d, k) = (ds.dim(), ds.classes());
    let data = &ds.agents[agent];
    let reg = 0.5 * lambda * dot(theta, theta);
    if data.is_empty() {
        return reg;
    }
    let s = mode.sign();
    // Classes with y_mk = 0 contribute σ(0) = 1/2 each.
    let off_class = 0.5 * (k - 1) as f64;
    let mut total = 0.0;
    for m in 0..data.len() {
        let c = data.labels[m];
        let z = dot(data.sample(m, d), &theta[c * d..(c + 1) * d]);
        total += sigmoid(s * z) + off_class;
    }
    total / data.len() as f64 + reg
}

fn sigmoid_grad_unchecked(
    theta: &[f64],
    agent: usize,
    ds: &SyntheticDataset,
    lambda: f64,
    mode: SignMode,
    out: &mut [f64],
) {
    let d = ds.dim();
    let data = &ds.agents[agent];
    for (o, t) in out.iter_mut().zip(theta) {
        *o = lambda * t;
    }
    if data.is_empty() {
        return;
    }
    let s = mode.sign();
    let inv_m = 1.0 / data.len() as f64;
    for m in 0..data.len() {
        let c = data.labels[m];
        let x = data.sample(m, d);
        let block = c * d..(c + 1) * d;
        let z = dot(x, &theta[block.clone()]);
        let sz = sigmoid(z);
        // d/dθ σ(s z) = s σ'(z) x, and σ'(z) is even in z.
        let coef = s * sz * (1.0 - sz) * inv_m;
        for (o, xi) in out[block].iter_mut().zip(x) {
            *o += coef * xi;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SigmoidClassifier {
    pub dataset: Arc<SyntheticDataset>,
    pub lambda: f64,
    pub mode: SignMode,
    dims: ProblemDims,
}

impl SigmoidClassifier {
    pub fn new(dataset: Arc<SyntheticDataset>, lambda: f64, mode: SignMode) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::param("lambda", "must be nonnegative"));
        }
        let dims = ProblemDims::new(dataset.num_agents(), dataset.dim(), dataset.classes())?;
        Ok(Self {
            dataset,
            lambda,
            mode,
            dims,
        })
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }
}

impl Problem for SigmoidClassifier {
    fn num_agents(&self) -> usize {
        self.dims.agents
    }

    fn dim(&self) -> usize {
        self.dims.flat()
    }

    fn local_value(&self, agent: usize, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim());
        sigmoid_value_unchecked(theta, agent, &self.dataset, self.lambda, self.mode)
    }

    fn local_grad(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.dim());
        sigmoid_grad_unchecked(theta, agent, &self.dataset, self.lambda, self.mode, out)
    }
}

// ---------------------------------------------------------------------------
// Quadratics
// ---------------------------------------------------------------------------

/// `f_i(θ) = ½ (θ − b_i)ᵀ Q_i (θ − b_i)` with `Q_i` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    qs: Vec<DMatrix<f64>>,
    bs: Vec<DVector<f64>>,
    smoothness: f64,
}

impl QuadraticProblem {
    pub fn new(qs: Vec<DMatrix<f64>>, bs: Vec<DVector<f64>>) -> Result<Self> {
        if qs.is_empty() || qs.len() != bs.len() {
            return Err(Error::param("quadratic", "need one (Q, b) pair per agent"));
        }
        let d = bs[0].len();
        for (q, b) in qs.iter().zip(&bs) {
            if q.nrows() != d || q.ncols() != d || b.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "quadratic block",
                    expected: d,
                    got: b.len().max(q.nrows()),
                });
            }
        }
        let smoothness = qs
            .iter()
            .map(|q| q.clone().symmetric_eigenvalues().max())
            .fold(0.0, f64::max);
        Ok(Self { qs, bs, smoothness })
    }

    /// Random instance: `Q_i = U diag(λ) Uᵀ` with a Haar-like orthogonal `U`
    /// and eigenvalues uniform in `[1, condition]`; `b_i ~ N(0, I)`.
    pub fn random(n: usize, d: usize, seed: u64, condition: f64) -> Result<Self> {
        if !(condition >= 1.0) {
            return Err(Error::param("condition", "must be at least 1"));
        }
        if n == 0 || d == 0 {
            return Err(Error::param("dims", "n and d must be positive"));
        }
        let mut qs = Vec::with_capacity(n);
        let mut bs = Vec::with_capacity(n);
        for i in 0..n {
            let mut g = Gaussian::new(stream_rng(seed, Domain::Problem, 1 + i as u64));
            let raw = DMatrix::from_fn(d, d, |_, _| g.sample());
            let u = raw.qr().q();
            let eig = DVector::from_fn(d, |_, _| 1.0 + (condition - 1.0) * g.rng_mut().random::<f64>());
            let q = &u * DMatrix::from_diagonal(&eig) * u.transpose();
            qs.push((&q + q.transpose()) * 0.5);
            bs.push(DVector::from_fn(d, |_, _| g.sample()));
        }
        Self::new(qs, bs)
    }

    /// Identical identity-Hessian agents sharing the minimizer `b`.
    pub fn homogeneous(n: usize, b: &[f64]) -> Result<Self> {
        let d = b.len();
        Self::new(
            vec![DMatrix::identity(d, d); n],
            vec![DVector::from_column_slice(b); n],
        )
    }

    /// Closed-form minimizer of `F`: `(Σ Q_i)⁻¹ Σ Q_i b_i`.
    pub fn minimizer(&self) -> DVector<f64> {
        let d = self.bs[0].len();
        let mut h = DMatrix::zeros(d, d);
        let mut r = DVector::zeros(d);
        for (q, b) in self.qs.iter().zip(&self.bs) {
            h += q;
            r += q * b;
        }
        h.cholesky()
            .expect("sum of SPD matrices is SPD")
            .solve(&r)
    }

    pub fn hessians(&self) -> &[DMatrix<f64>] {
        &self.qs
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.bs
    }
}

impl Problem for QuadraticProblem {
    fn num_agents(&self) -> usize {
        self.qs.len()
    }

    fn dim(&self) -> usize {
        self.bs[0].len()
    }

    fn local_value(&self, agent: usize, theta: &[f64]) -> f64 {
        let r = DVector::from_column_slice(theta) - &self.bs[agent];
        0.5 * r.dot(&(&self.qs[agent] * &r))
    }

    fn local_grad(&self, agent: usize, theta: &[f64], out: &mut [f64]) {
        let r = DVector::from_column_slice(theta) - &self.bs[agent];
        let g = &self.qs[agent] * r;
        out.copy_from_slice(g.as_slice());
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }
}

// ---------------------------------------------------------------------------
// Constant estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub samples: usize,
    pub radius: f64,
    /// Ball center; the origin when absent.
    pub center: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            radius: 1.0,
            center: None,
            seed: 0,
        }
    }
}

/// Monte-Carlo estimates of the smoothness, gradient-bound and
/// heterogeneity constants. Each is a maximum over sampled points, hence a
/// lower bound on the true constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l_hat: f64,
    pub g_hat: f64,
    pub varsigma_hat: f64,
    pub samples: usize,
    pub radius: f64,
    pub lower_bounds: bool,
}

fn sample_ball<R: Rng>(g: &mut Gaussian<R>, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let mut dir: Vec<f64> = (0..d).map(|_| g.sample()).collect();
    let norm = dot(&dir, &dir).sqrt().max(f64::MIN_POSITIVE);
    let r = radius * g.rng_mut().random::<f64>().powf(1.0 / d as f64);
    for (v, c) in dir.iter_mut().zip(center) {
        *v = c + r * *v / norm;
    }
    dir
}

pub fn estimate_constants<P: Problem + ?Sized>(problem: &P, cfg: &SamplingConfig) -> ProblemConstants {
    let (n, d) = (problem.num_agents(), problem.dim());
    let center = cfg.center.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut g = Gaussian::new(stream_rng(cfg.seed, Domain::Sampling, 0));
    let (mut l_hat, mut g_hat, mut s_hat) = (0.0_f64, 0.0_f64, 0.0_f64);
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut big = vec![0.0; d];
    for _ in 0..cfg.samples {
        let t1 = sample_ball(&mut g, &center, cfg.radius);
        let t2 = sample_ball(&mut g, &center, cfg.radius);
        let dt: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a - b).collect();
        let dist = norm(&dt);
        problem.global_grad(&t1, &mut big);
        for i in 0..n {
            problem.local_grad(i, &t1, &mut g1);
            problem.local_grad(i, &t2, &mut g2);
            g_hat = g_hat.max(norm(&g1)).max(norm(&g2));
            if dist > 0.0 {
                let diff: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
                l_hat = l_hat.max(norm(&diff) / dist);
            }
            let het: Vec<f64> = big.iter().zip(&g1).map(|(a, b)| a - b).collect();
            s_hat = s_hat.max(norm(&het));
        }
    }
    ProblemConstants {
        l_hat,
        g_hat,
        varsigma_hat: s_hat,
        samples: cfg.samples,
        radius: cfg.radius,
        lower_bounds: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    fn small_dataset() -> Arc<SyntheticDataset> {
        Arc::new(generate_dataset(&[0.3, 1.0, 5.0], 4, 30, 3, 17).unwrap())
    }

    fn fd_grad<P: Problem>(p: &P, i: usize, theta: &[f64], h: f64) -> Vec<f64> {
        let mut t = theta.to_vec();
        (0..theta.len())
            .map(|j| {
                t[j] = theta[j] + h;
                let fp = p.local_value(i, &t);
                t[j] = theta[j] - h;
                let fm = p.local_value(i, &t);
                t[j] = theta[j];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn sigmoid_at_zero_is_half_k() {
        let ds = small_dataset();
        let theta = vec![0.0; 12];
        for i in 0..3 {
            assert_eq!(sigmoid_loss_value(&theta, i, &ds, 0.0, SignMode::Verbatim).unwrap(), 2.0);
        }
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        // σ'(0) = 1/4, so block k is ±(1/4M) Σ_{m in class k} x_m.
        let ds = small_dataset();
        let (d, k) = (3, 4);
        let theta = vec![0.0; d * k];
        for mode in [SignMode::Verbatim, SignMode::Corrected] {
            let g = sigmoid_loss_grad(&theta, 1, &ds, 0.0, mode).unwrap();
            let a = &ds.agents[1];
            let mut expect = vec![0.0; d * k];
            for m in 0..a.len() {
                for j in 0..d {
                    expect[a.labels[m] * d + j] += mode.sign() * 0.25 * a.sample(m, d)[j] / a.len() as f64;
                }
            }
            for (x, y) in g.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sigmoid_dimension_mismatch() {
        let ds = small_dataset();
        assert!(matches!(
            sigmoid_loss_value(&[0.0; 5], 0, &ds, 0.0, SignMode::Verbatim),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(sigmoid_loss_grad(&[0.0; 12], 7, &ds, 0.0, SignMode::Verbatim).is_err());
    }

    #[test]
    fn sigmoid_value_bounds() {
        let ds = small_dataset();
        let p = SigmoidClassifier::new(ds, 1e-2, SignMode::Verbatim).unwrap();
        let mut g = Gaussian::new(stream_rng(3, Domain::Sampling, 9));
        for _ in 0..50 {
            let theta: Vec<f64> = (0..12).map(|_| 3.0 * g.sample()).collect();
            let reg = 0.5e-2 * dot(&theta, &theta);
            for i in 0..3 {
                let v = p.local_value(i, &theta) - reg;
                assert!((0.0..=4.0).contains(&v));
            }
        }
    }

    #[test]
    fn sigmoid_grad_matches_finite_differences() {
        let p = SigmoidClassifier::new(small_dataset(), DEFAULT_LAMBDA, SignMode::Verbatim).unwrap();
        let mut g = Gaussian::new(stream_rng(4, Domain::Sampling, 2));
        let mut grad = vec![0.0; 12];
        for _ in 0..10 {
            let theta: Vec<f64> = (0..12).map(|_| g.sample()).collect();
            for i in 0..3 {
                p.local_grad(i, &theta, &mut grad);
                let fd = fd_grad(&p, i, &theta, 1e-6);
                let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
                assert!(num / den < 1e-5, "rel err {}", num / den);
            }
        }
    }

    #[test]
    fn quadratic_identity_gradient() {
        let p = QuadraticProblem::homogeneous(1, &[0.0, 0.0, 0.0]).unwrap();
        let mut g = vec![0.0; 3];
        p.local_grad(0, &[1.0, -2.0, 0.5], &mut g);
        assert_eq!(g, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn homogeneous_minimizer_is_b() {
        let b = [0.3, -1.2];
        let p = QuadraticProblem::homogeneous(4, &b).unwrap();
        let x = p.minimizer();
        assert!((x[0] - b[0]).abs() < 1e-15 && (x[1] - b[1]).abs() < 1e-15);
    }

    #[test]
    fn quadratic_minimizer_solves_normal_equations() {
        let p = QuadraticProblem::random(2, 2, 7, 10.0).unwrap();
        let x = p.minimizer();
        // Independent route: LU solve of the stacked 2x2 system.
        let h = &p.hessians()[0] + &p.hessians()[1];
        let r = &p.hessians()[0] * &p.centers()[0] + &p.hessians()[1] * &p.centers()[1];
        let x_lu = h.lu().solve(&r).unwrap();
        assert!((&x - &x_lu).amax() < 1e-10);
        let mut g = vec![0.0; 2];
        p.global_grad(x.as_slice(), &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn quadratic_eigenvalues_in_range() {
        let p = QuadraticProblem::random(3, 4, 2, 5.0).unwrap();
        for q in p.hessians() {
            let e = q.clone().symmetric_eigenvalues();
            assert!(e.min() >= 1.0 - 1e-10 && e.max() <= 5.0 + 1e-10);
        }
        assert!(p.smoothness().unwrap() <= 5.0 + 1e-10);
    }

    #[test]
    fn mean_of_local_gradients_is_global_gradient() {
        let p = SigmoidClassifier::new(small_dataset(), 0.1, SignMode::Corrected).unwrap();
        let theta: Vec<f64> = (0..12).map(|j| 0.1 * j as f64 - 0.4).collect();
        let mut big = vec![0.0; 12];
        p.global_grad(&theta, &mut big);
        let mut acc = vec![0.0; 12];
        let mut g = vec![0.0; 12];
        for i in 0..3 {
            p.local_grad(i, &theta, &mut g);
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b / 3.0;
            }
        }
        for (a, b) in acc.iter().zip(&big) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_for_identity_quadratic() {
        let p = QuadraticProblem::homogeneous(3, &[1.0, 2.0]).unwrap();
        let c = estimate_constants(&p, &SamplingConfig::default());
        assert!(c.l_hat <= 1.0 + 1e-12 && c.l_hat > 1.0 - 1e-12);
        assert!(c.varsigma_hat < 1e-12);
        assert!(c.lower_bounds);
    }

    struct Flat;
    impl Problem for Flat {
        fn num_agents(&self) -> usize {
            2
        }
        fn dim(&self) -> usize {
            3
        }
        fn local_value(&self, _: usize, _: &[f64]) -> f64 {
            4.0
        }
        fn local_grad(&self, _: usize, _: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    #[test]
    fn constant_objective_has_zero_gradient_bound() {
        let c = estimate_constants(&Flat, &SamplingConfig::default());
        assert_eq!((c.g_hat, c.l_hat, c.varsigma_hat), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constants_dominate_samples() {
        let p = QuadraticProblem::random(4, 3, 1, 8.0).unwrap();
        let c = estimate_constants(&p, &SamplingConfig::default());
        assert!(c.l_hat <= p.smoothness().unwrap() + 1e-9);
        let mut g = vec![0.0; 3];
        p.local_grad(0, &[0.0; 3], &mut g);
        // The origin is inside the sampling ball but not necessarily sampled;
        // the estimate is still a lower bound on the true constant.
        assert!(c.g_hat > 0.0 && c.varsigma_hat > 0.0);
    }
}
