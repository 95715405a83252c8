//! Weight design: the consensus-error design function, its per-row
//! gradients and the projected row update.
//!
//! With `π` frozen at the Perron vector of the current matrix,
//!
//! ```text
//! J(A)  = ‖(A − 1πᵀ)Θ‖²_F − (2γ/n)·⟨(A − 1πᵀ)Θ, (I − 1πᵀ)Ỹ⁻¹∇F⟩
//! J̄(Ā) = J((1 − δ)Ā + δA⁰)
//! ```
//!
//! where `Ỹ = diag(Y)`. `J` is a convex quadratic in `A` and separates over
//! rows, so each agent can update its own row independently.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::graph::DirectedGraph;
use crate::mixing::MixingMatrix;
use crate::{Error, Result};

/// Which form of the per-row gradient to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    /// True derivative of `J̄`: both terms carry the `(1 − δ)` factor.
    #[default]
    ChainRule,
    /// First term without the `(1 − δ)` factor.
    AsPrinted,
}

impl GradientForm {
    fn first_term_factor(self, delta: f64) -> f64 {
        match self {
            GradientForm::ChainRule => 1.0 - delta,
            GradientForm::AsPrinted => 1.0,
        }
    }
}

/// Frozen per-iteration data for the design problem.
#[derive(Debug, Clone)]
pub struct DesignContext<'a> {
    pub theta: &'a DMatrix<f64>,
    pub grads: &'a DMatrix<f64>,
    pub ydiag: DVector<f64>,
    pub pi: &'a DVector<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub a0: &'a DMatrix<f64>,
    /// `Θᵀπ`.
    theta_pi: DVector<f64>,
    /// `Ỹ⁻¹∇F`.
    scaled_grads: DMatrix<f64>,
    /// `(Ỹ⁻¹∇F)ᵀπ`.
    scaled_pi: DVector<f64>,
}

impl<'a> DesignContext<'a> {
    pub fn new(
        theta: &'a DMatrix<f64>,
        grads: &'a DMatrix<f64>,
        ydiag: DVector<f64>,
        pi: &'a DVector<f64>,
        gamma: f64,
        delta: f64,
        a0: &'a DMatrix<f64>,
    ) -> Result<Self> {
        let n = theta.nrows();
        let check = |what: &'static str, got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected: n, got })
            }
        };
        check("gradient rows", grads.nrows())?;
        check("Y diagonal length", ydiag.len())?;
        check("Perron vector length", pi.len())?;
        check("initial matrix rows", a0.nrows())?;
        check("initial matrix columns", a0.ncols())?;
        if grads.ncols() != theta.ncols() {
            return Err(Error::DimensionMismatch {
                what: "gradient columns",
                expected: theta.ncols(),
                got: grads.ncols(),
            });
        }
        if let Some((i, &v)) = ydiag.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveDiagonal {
                iteration: 0,
                agent: i,
                value: v,
            });
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::param("delta", format!("{delta} outside [0, 1]")));
        }
        let mut scaled_grads = grads.clone();
        for i in 0..n {
            let mut row = scaled_grads.row_mut(i);
            row /= ydiag[i];
        }
        Ok(Self {
            theta_pi: theta.tr_mul(pi),
            scaled_pi: scaled_grads.tr_mul(pi),
            scaled_grads,
            theta,
            grads,
            ydiag,
            pi,
            gamma,
            delta,
            a0,
        })
    }

    pub fn n(&self) -> usize {
        self.theta.nrows()
    }

    /// `Θᵀπ`, the target of the `z` tracker.
    pub fn theta_pi(&self) -> &DVector<f64> {
        &self.theta_pi
    }

    /// `Y_ii·(∇F)ᵀỸ⁻¹π`: the value of `q_i` that makes the decentralized
    /// gradient coincide with the exact one.
    pub fn q_target(&self, i: usize) -> DVector<f64> {
        &self.scaled_pi * self.ydiag[i]
    }

    /// `(A − 1πᵀ)Θ` row `i` given row `a_i` of `A`.
    fn residual_row(&self, a_i: &[f64]) -> DVector<f64> {
        let mut r = -self.theta_pi.clone();
        for (j, &w) in a_i.iter().enumerate() {
            if w != 0.0 {
                r += self.theta.row(j).transpose() * w;
            }
        }
        r
    }

    /// Row `i` of `(I − 1πᵀ)Ỹ⁻¹∇F`.
    fn weighted_grad_row(&self, i: usize) -> DVector<f64> {
        self.scaled_grads.row(i).transpose() - &self.scaled_pi
    }

    /// Row `i`'s contribution to `J(A)` given row `a_i`.
    pub fn j_row(&self, i: usize, a_i: &[f64]) -> f64 {
        let r = self.residual_row(a_i);
        let w = self.weighted_grad_row(i);
        r.norm_squared() - 2.0 * self.gamma / self.n() as f64 * r.dot(&w)
    }

    /// Row `i`'s contribution to `J̄(Ā)` given row `ā_i`.
    pub fn jbar_row(&self, i: usize, abar_i: &[f64]) -> f64 {
        self.j_row(i, &self.mix_row(i, abar_i))
    }

    fn mix_row(&self, i: usize, abar_i: &[f64]) -> Vec<f64> {
        abar_i
            .iter()
            .enumerate()
            .map(|(j, &b)| mix_entry(self.a0[(i, j)], b, self.delta))
            .collect()
    }
}

fn mix_entry(a0: f64, abar: f64, delta: f64) -> f64 {
    a0 + (1.0 - delta) * (abar - a0)
}

fn check_square(a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "matrix side",
            expected: n,
            got: if a.nrows() != n { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

fn row_of(a: &DMatrix<f64>, i: usize) -> Vec<f64> {
    a.row(i).iter().copied().collect()
}

/// `J(A)`.
pub fn design_j(a: &DMatrix<f64>, ctx: &DesignContext<'_>) -> Result<f64> {
    check_square(a, ctx.n())?;
    Ok((0..ctx.n()).map(|i| ctx.j_row(i, &row_of(a, i))).sum())
}

/// `J̄(Ā) = J((1 − δ)Ā + δA⁰)`.
pub fn design_jbar(abar: &DMatrix<f64>, ctx: &DesignContext<'_>) -> Result<f64> {
    check_square(abar, ctx.n())?;
    Ok((0..ctx.n()).map(|i| ctx.jbar_row(i, &row_of(abar, i))).sum())
}

/// Exact gradient of `J̄` with respect to row `i` of `Ā`, restricted to
/// `support` (the in-neighbors of `i`). Entry `k` corresponds to
/// `support[k]`.
pub fn grad_row_jbar(
    i: usize,
    abar_row: &[f64],
    support: &[usize],
    ctx: &DesignContext<'_>,
    form: GradientForm,
) -> Result<Vec<f64>> {
    let n = ctx.n();
    if abar_row.len() != n {
        return Err(Error::DimensionMismatch {
            what: "row length",
            expected: n,
            got: abar_row.len(),
        });
    }
    let r = ctx.residual_row(&ctx.mix_row(i, abar_row));
    let w = ctx.weighted_grad_row(i);
    let c1 = 2.0 * form.first_term_factor(ctx.delta);
    let c2 = 2.0 * ctx.gamma * (1.0 - ctx.delta) / n as f64;
    let v = r * c1 - w * c2;
    Ok(support.iter().map(|&j| ctx.theta.row(j).dot(&v.transpose())).collect())
}

/// Everything agent `i` may read when updating its row in the
/// decentralized mode: its own state and the parameters of its
/// in-neighbors. No global quantity is reachable from here.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub agent: usize,
    pub n: usize,
    pub gamma: f64,
    pub eta: f64,
    pub delta: f64,
    pub y_ii: f64,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub grad: Vec<f64>,
    /// In-neighbors of the agent, itself included, ascending.
    pub support: Vec<usize>,
    /// `ā_i` on `support`.
    pub abar: Vec<f64>,
    /// `a⁰_i` on `support`.
    pub a0: Vec<f64>,
    /// `θ_j` for `j` in `support`.
    pub neighbor_theta: Vec<Vec<f64>>,
}

/// Global arrays from which agent views are cut.
pub struct ViewSource<'a> {
    pub graph: &'a DirectedGraph,
    pub theta: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub z: &'a DMatrix<f64>,
    pub q: &'a DMatrix<f64>,
    pub grads: &'a DMatrix<f64>,
    pub abar: &'a DMatrix<f64>,
    pub a0: &'a DMatrix<f64>,
}

impl AgentView {
    /// The message exchange: agent `i` receives `θ_j` from each in-neighbor
    /// and reads its own rows.
    pub fn gather(i: usize, src: &ViewSource<'_>, gamma: f64, eta: f64, delta: f64) -> Self {
        let support = src.graph.in_neighbors(i).to_vec();
        let row = |m: &DMatrix<f64>, r: usize| m.row(r).iter().copied().collect::<Vec<f64>>();
        Self {
            agent: i,
            n: src.graph.n(),
            gamma,
            eta,
            delta,
            y_ii: src.y[(i, i)],
            z: row(src.z, i),
            q: row(src.q, i),
            grad: row(src.grads, i),
            abar: support.iter().map(|&j| src.abar[(i, j)]).collect(),
            a0: support.iter().map(|&j| src.a0[(i, j)]).collect(),
            neighbor_theta: support.iter().map(|&j| row(src.theta, j)).collect(),
            support,
        }
    }
}

/// Tracker-based row gradient, on the view's support:
///
/// ```text
/// [g_i]_j = 2c·θ_jᵀ(Σ_l A_il θ_l − z_i) − (2γ(1 − δ)/(n y_ii))·θ_jᵀ(∇f_i − q_i)
/// ```
///
/// with `A_i = (1 − δ)ā_i + δa⁰_i` and `c` set by `form`.
pub fn decentralized_row_gradient(view: &AgentView, form: GradientForm) -> Result<Vec<f64>> {
    if !(view.y_ii > 0.0) {
        return Err(Error::NonPositiveDiagonal {
            iteration: 0,
            agent: view.agent,
            value: view.y_ii,
        });
    }
    let dim = view.z.len();
    let mut mixed = vec![0.0; dim];
    for ((&b, &a0), th) in view.abar.iter().zip(&view.a0).zip(&view.neighbor_theta) {
        let w = mix_entry(a0, b, view.delta);
        for (m, t) in mixed.iter_mut().zip(th) {
            *m += w * t;
        }
    }
    let c1 = 2.0 * form.first_term_factor(view.delta);
    let c2 = 2.0 * view.gamma * (1.0 - view.delta) / (view.n as f64 * view.y_ii);
    let v: Vec<f64> = (0..dim)
        .map(|t| c1 * (mixed[t] - view.z[t]) - c2 * (view.grad[t] - view.q[t]))
        .collect();
    Ok(view
        .neighbor_theta
        .iter()
        .map(|th| th.iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect())
}

/// Euclidean projection of `v` onto `{a ≥ 0, Σ_{support} a = 1, a = 0 off
/// support}`. Sort-based; ties broken by value, then index.
pub fn project_row_simplex(v: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut out = vec![0.0; v.len()];
    let vals: Vec<f64> = support.iter().map(|&j| v[j]).collect();
    let sum: f64 = vals.iter().sum();
    let m = vals.len();
    if vals.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * m as f64 {
        for (&j, &x) in support.iter().zip(&vals) {
            out[j] = x;
        }
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(support[a].cmp(&support[b])));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        cumsum += vals[idx];
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if vals[idx] - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for (&j, &x) in support.iter().zip(&vals) {
        out[j] = (x - tau).max(0.0);
    }
    Ok(out)
}

/// Projected gradient step on one row, given the gradient on `support`.
pub fn projected_step(row: &[f64], support: &[usize], grad: &[f64], eta: f64) -> Result<Vec<f64>> {
    if eta == 0.0 {
        return Ok(row.to_vec());
    }
    let mut v = row.to_vec();
    for (&j, g) in support.iter().zip(grad) {
        v[j] -= eta * g;
    }
    project_row_simplex(&v, support)
}

/// Exact-mode row update. With `backtracking`, `η` is halved (at most 20
/// times) until the row's share of `J̄` decreases; if it never does the
/// row is kept.
pub fn row_update(
    i: usize,
    abar: &DMatrix<f64>,
    support: &[usize],
    ctx: &DesignContext<'_>,
    eta: f64,
    form: GradientForm,
    backtracking: bool,
) -> Result<Vec<f64>> {
    let row = row_of(abar, i);
    if eta == 0.0 {
        return Ok(row);
    }
    let grad = grad_row_jbar(i, &row, support, ctx, form)?;
    if !backtracking {
        return projected_step(&row, support, &grad, eta);
    }
    let current = ctx.jbar_row(i, &row);
    let mut step = eta;
    for _ in 0..=20 {
        let cand = projected_step(&row, support, &grad, step)?;
        if ctx.jbar_row(i, &cand) < current {
            return Ok(cand);
        }
        step *= 0.5;
    }
    Ok(row)
}

/// `(1 − δ)Ā + δA⁰` as raw weights, computed as `A⁰ + (1 − δ)(Ā − A⁰)` so
/// that `δ = 1` and `Ā = A⁰` both give `A⁰` bit for bit.
pub fn mix_weights(abar: &DMatrix<f64>, a0: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    a0.zip_map(abar, |x, b| mix_entry(x, b, delta))
}

/// Validated `(1 − δ)Ā + δA⁰`.
pub fn mix_conservative(abar: &DMatrix<f64>, a0: &MixingMatrix, delta: f64) -> Result<MixingMatrix> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::param("delta", format!("{delta} outside [0, 1]")));
    }
    crate::mixing::check_feasible(a0.graph(), abar)?;
    MixingMatrix::new(a0.graph().clone(), mix_weights(abar, a0.weights(), delta))
}
