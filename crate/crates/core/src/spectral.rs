//! Perron vector and spectral gap of row-stochastic matrices.
//!
//! For an irreducible aperiodic row-stochastic `A` the powers `A^k` converge
//! to `1 πᵀ`, where `π` is the positive left eigenvector with `πᵀ1 = 1`.
//! The speed is governed by the spectral radius `r` of `B = A − 1πᵀ`; we
//! report the gap `ρ = 1 − r`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mixing::MixingMatrix;
use crate::rng::{stream_rng, Domain};
use crate::{Error, Result};

pub const DEFAULT_PERRON_TOL: f64 = 1e-12;

/// Iteration cap `100 n ln n + 1000`.
pub fn default_max_iter(n: usize) -> usize {
    let nf = n.max(1) as f64;
    (100.0 * nf * nf.ln()).ceil() as usize + 1000
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronVector {
    pub pi: DVector<f64>,
    /// `‖πᵀA − πᵀ‖∞` at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration on `Aᵀ` with sum normalization, started from the
/// uniform vector. Stops once successive iterates are within `tol` in the
/// max-norm.
pub fn perron_vector(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<PerronVector> {
    let n = a.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let mut next = a.tr_mul(&pi);
        let s = next.sum();
        next /= s;
        last_change = (&next - &pi).amax();
        pi = next;
        if last_change < tol {
            let residual = left_residual(a, &pi);
            if pi.iter().any(|&p| p <= 0.0) {
                return Err(Error::InvalidWeights(
                    "Perron vector has a nonpositive entry; matrix is reducible".into(),
                ));
            }
            return Ok(PerronVector {
                pi,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: last_change,
    })
}

pub fn perron_of(a: &MixingMatrix) -> Result<PerronVector> {
    perron_vector(a.weights(), DEFAULT_PERRON_TOL, default_max_iter(a.n()))
}

/// A few warm-started power steps, for tracking a slowly drifting `π`.
pub fn perron_refresh(a: &DMatrix<f64>, pi: &DVector<f64>, steps: usize) -> DVector<f64> {
    let mut pi = pi.clone();
    for _ in 0..steps {
        pi = a.tr_mul(&pi);
        let s = pi.sum();
        pi /= s;
    }
    pi
}

/// `‖πᵀA − πᵀ‖∞`.
pub fn left_residual(a: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    (a.tr_mul(pi) - pi).amax()
}

/// How the spectral radius of the deflated matrix was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapMethod {
    /// Geometric growth rate of `‖Bᵏv‖` over `k = m..2m`, maximized over
    /// random unit starts.
    NormGrowth { window: usize, starts: usize },
    /// `n = 1`: the deflated matrix is the empty map.
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapConfig {
    pub window: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            window: 200,
            starts: 8,
            seed: 0,
        }
    }
}

/// Spectral radius of `B = A − 1πᵀ` by norm-growth estimation.
///
/// Plain power iteration oscillates when the dominant eigenvalues of `B`
/// are a complex-conjugate pair; the averaged growth rate of the norm over
/// a window of `m` steps does not.
pub fn deflated_radius(a: &DMatrix<f64>, pi: &DVector<f64>, cfg: &GapConfig) -> f64 {
    let n = a.nrows();
    let m = cfg.window.max(1);
    let mut best = 0.0_f64;
    for s in 0..cfg.starts.max(1) {
        let mut rng = stream_rng(cfg.seed, Domain::Spectral, s as u64);
        let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        let mut log_growth = 0.0;
        let mut vanished = false;
        for k in 0..2 * m {
            let proj = pi.dot(&v);
            let mut w = a * &v;
            w.add_scalar_mut(-proj);
            let nw = w.norm();
            if nw == 0.0 || !nw.is_finite() {
                vanished = true;
                break;
            }
            if k >= m {
                log_growth += nw.ln();
            }
            v = w / nw;
        }
        if !vanished {
            best = best.max((log_growth / m as f64).exp());
        }
    }
    best
}

/// Returns `ρ = 1 − r` clamped to `(0, 1]`; `ρ = 1` for a single agent.
pub fn spectral_gap(a: &DMatrix<f64>, pi: &DVector<f64>, cfg: &GapConfig) -> f64 {
    if a.nrows() <= 1 {
        return 1.0;
    }
    let r = deflated_radius(a, pi, cfg);
    (1.0 - r).clamp(f64::EPSILON, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub perron: DVector<f64>,
    pub spectral_gap: f64,
    pub residual: f64,
    pub gap_method: GapMethod,
}

pub fn spectral_report(a: &MixingMatrix, cfg: &GapConfig) -> Result<SpectralReport> {
    let p = perron_of(a)?;
    let gap_method = if a.n() <= 1 {
        GapMethod::Trivial
    } else {
        GapMethod::NormGrowth {
            window: cfg.window,
            starts: cfg.starts,
        }
    };
    Ok(SpectralReport {
        spectral_gap: spectral_gap(a.weights(), &p.pi, cfg),
        perron: p.pi,
        residual: p.residual,
        gap_method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_er_digraph, DirectedGraph};
    use crate::mixing::{metropolis_weights, uniform_in_weights};
    use std::sync::Arc;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn perron_of_two_by_two() {
        // πᵀA = πᵀ: π0/2 + π1/4 = π0, π0 + π1 = 1  =>  π = (1/3, 2/3).
        let a = m(&[&[0.5, 0.5], &[0.25, 0.75]]);
        let p = perron_vector(&a, 1e-14, 10_000).unwrap();
        assert!((p.pi[0] - 1.0 / 3.0).abs() < 1e-13);
        assert!((p.pi[1] - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn perron_of_doubly_stochastic_is_uniform() {
        let g = Arc::new(DirectedGraph::new(5, (0..5).flat_map(|i| [(i, (i + 1) % 5), ((i + 1) % 5, i)])).unwrap());
        let a = metropolis_weights(g).unwrap();
        let p = perron_of(&a).unwrap();
        for v in p.pi.iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let ring = uniform_in_weights(Arc::new(DirectedGraph::ring(7).unwrap())).unwrap();
        let p = perron_of(&ring).unwrap();
        for v in p.pi.iter() {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perron_non_convergence_is_reported() {
        // Slowly mixing matrix, tiny budget.
        let a = m(&[&[0.999, 0.001], &[0.002, 0.998]]);
        let err = perron_vector(&a, 1e-15, 3).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn gap_of_rank_one_matrix_is_one() {
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let a = DMatrix::from_fn(3, 3, |_, j| pi[j]);
        assert_eq!(spectral_gap(&a, &pi, &GapConfig::default()), 1.0);
    }

    #[test]
    fn gap_of_averaging_pair_is_one() {
        let a = DMatrix::from_element(2, 2, 0.5);
        let pi = DVector::from_element(2, 0.5);
        assert_eq!(spectral_gap(&a, &pi, &GapConfig::default()), 1.0);
    }

    #[test]
    fn gap_of_lazy_pair() {
        // Eigenvalues 1 and 0.8, so ρ = 0.2.
        let a = m(&[&[0.9, 0.1], &[0.1, 0.9]]);
        let pi = DVector::from_element(2, 0.5);
        let rho = spectral_gap(&a, &pi, &GapConfig::default());
        assert!((rho - 0.2).abs() < 1e-10, "{rho}");
    }

    #[test]
    fn gap_single_agent_is_one() {
        let a = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(spectral_gap(&a, &DVector::from_element(1, 1.0), &GapConfig::default()), 1.0);
    }

    #[test]
    fn gap_matches_complex_eigenvalues() {
        // Directed rings have complex spectra; compare the norm-growth
        // estimate against the moduli from a Schur decomposition.
        for (n, seed) in [(6, 0), (9, 1), (12, 2)] {
            let g = Arc::new(generate_er_digraph(n, 0.2, seed).unwrap());
            let a = uniform_in_weights(g).unwrap();
            let pi = perron_of(&a).unwrap().pi;
            let b = a.weights() - DMatrix::from_fn(n, n, |_, j| pi[j]);
            let r_exact = b
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let r_est = deflated_radius(a.weights(), &pi, &GapConfig::default());
            assert!((r_est - r_exact).abs() < 0.02, "n={n}: {r_est} vs {r_exact}");
        }
    }

    #[test]
    fn report_fields_are_consistent() {
        let g = Arc::new(generate_er_digraph(10, 0.3, 4).unwrap());
        let a = metropolis_weights(g).unwrap();
        let r = spectral_report(&a, &GapConfig::default()).unwrap();
        assert!((r.perron.sum() - 1.0).abs() < 1e-12);
        assert!(r.perron.iter().all(|&p| p > 0.0));
        assert!(r.residual < 1e-11);
        assert!(r.spectral_gap > 0.0 && r.spectral_gap <= 1.0);
    }
}
