//! Deep matrix factorization and completion: masked objective, recovery error,
//! and the compressed network trained on its `2r̂`-dimensional invariant block.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{chain_gradients, Correlation, end_to_end, gd_step, Activation, Network, Objective, TrainConfig, DIVERGENCE_LOSS};
use crate::parsimony::invariant_subspace;
use crate::tensor::{self, Matrix, Seed, SparseMatrix};

/// Rank-`r` matrix `ABᵀ` with Gaussian factors, rescaled to `‖Φ‖_F = scale·d`.
pub fn generate_lowrank(d: usize, r: usize, seed: Seed, scale: f64) -> Result<Matrix> {
    if r == 0 || r > d {
        return Err(Error::arg(format!("rank must lie in 1..={d}, got {r}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::arg(format!("scale must be positive, got {scale}")));
    }
    let mut rng = seed.rng();
    let a = tensor::gaussian(d, r, &mut rng);
    let b = tensor::gaussian(d, r, &mut rng);
    let phi = a * b.transpose();
    let norm = phi.norm();
    Ok(phi * (scale * d as f64 / norm))
}

/// Binary `d × d` mask with exactly `⌊fraction·d²⌋` ones placed uniformly
/// without replacement.
pub fn sample_mask(d: usize, fraction: f64, seed: Seed) -> Result<Matrix> {
    if d == 0 || !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!(
            "need d > 0 and fraction in (0, 1], got {d}, {fraction}"
        )));
    }
    let total = d * d;
    let count = (fraction * total as f64).floor() as usize;
    let mut omega = Matrix::zeros(d, d);
    for k in index::sample(&mut seed.rng(), total, count).into_iter() {
        omega[(k / d, k % d)] = 1.0;
    }
    Ok(omega)
}

#[derive(Debug, Clone)]
pub struct CompletionProblem {
    phi: Matrix,
    omega: Matrix,
    r_true: usize,
    observed_fraction: f64,
    support: Vec<(usize, usize)>,
}

impl CompletionProblem {
    pub fn new(phi: Matrix, omega: Matrix) -> Result<Self> {
        if phi.shape() != omega.shape() || phi.is_empty() {
            return Err(Error::arg("target and mask must share a nonempty shape"));
        }
        if omega.iter().any(|&w| w != 0.0 && w != 1.0) {
            return Err(Error::arg("mask entries must be 0 or 1"));
        }
        tensor::ensure_finite(&phi, "target")?;
        let r_true = tensor::svd(&phi)?.rank();
        let observed_fraction = omega.sum() / omega.len() as f64;
        Ok(CompletionProblem {
            support: SparseMatrix::support(&omega),
            phi,
            omega,
            r_true,
            observed_fraction,
        })
    }

    pub fn generate(d: usize, r: usize, fraction: f64, scale: f64, seed: Seed) -> Result<Self> {
        let phi = generate_lowrank(d, r, seed.derive(0), scale)?;
        let omega = sample_mask(d, fraction, seed.derive(1))?;
        CompletionProblem::new(phi, omega)
    }

    /// Ground-truth matrix `Φ`.
    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    /// Observation mask `Ω`.
    pub fn omega(&self) -> &Matrix {
        &self.omega
    }

    pub fn r_true(&self) -> usize {
        self.r_true
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed_fraction
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn fully_observed(&self) -> bool {
        self.omega.iter().all(|&w| w == 1.0)
    }

    /// `Ω ⊙ Φ`.
    pub fn observed(&self) -> Matrix {
        self.omega.component_mul(&self.phi)
    }

    pub fn objective(&self) -> Objective {
        Objective::masked(self.omega.clone(), self.phi.clone())
    }
}

/// Anything with an end-to-end matrix.
pub trait EndToEnd {
    fn end_to_end_matrix(&self) -> Result<Matrix>;
}

impl EndToEnd for Network {
    fn end_to_end_matrix(&self) -> Result<Matrix> {
        end_to_end(self)
    }
}

impl EndToEnd for Matrix {
    fn end_to_end_matrix(&self) -> Result<Matrix> {
        Ok(self.clone())
    }
}

/// `½‖Ω ⊙ (W_{L:1} − Φ)‖_F²`.
pub fn mc_loss<T: EndToEnd + ?Sized>(model: &T, prob: &CompletionProblem) -> Result<f64> {
    let e = model.end_to_end_matrix()?;
    if e.shape() != prob.phi.shape() {
        return Err(Error::arg(format!(
            "end-to-end matrix is {:?}, problem is {:?}",
            e.shape(),
            prob.phi.shape()
        )));
    }
    Ok(0.5 * prob.omega.component_mul(&(e - &prob.phi)).norm_squared())
}

/// Relative Frobenius error on the unobserved entries. Zero for a fully
/// observed problem (see [`CompletionProblem::fully_observed`]).
pub fn recovery_error(w_end: &Matrix, prob: &CompletionProblem) -> Result<f64> {
    if w_end.shape() != prob.phi.shape() {
        return Err(Error::arg("end-to-end matrix does not match the problem"));
    }
    if prob.fully_observed() {
        return Ok(0.0);
    }
    let hidden = prob.omega.map(|w| 1.0 - w);
    let denom = hidden.component_mul(&prob.phi).norm();
    if denom == 0.0 {
        return Err(Error::DegenerateData("target vanishes on the unobserved entries".into()));
    }
    Ok(hidden.component_mul(&(w_end - &prob.phi)).norm() / denom)
}

/// `U_out · W̃_{L:1} · V_inᵀ` with trainable inner `2r̂ × 2r̂` layers and boundary
/// factors updated at the discounted rate `γη`.
#[derive(Debug, Clone)]
pub struct CompressedNetwork {
    pub u_out: Matrix,
    pub v_in: Matrix,
    pub inner: Network,
    pub gamma: f64,
    pub r_hat: usize,
}

impl CompressedNetwork {
    pub fn param_count(&self) -> usize {
        self.inner.param_count() + self.u_out.len() + self.v_in.len()
    }

    /// Orthonormality residuals `‖UᵀU − I‖_F` of the two factors.
    pub fn factor_drift(&self) -> (f64, f64) {
        (
            tensor::orthonormality_residual(&self.u_out),
            tensor::orthonormality_residual(&self.v_in),
        )
    }
}

pub fn compressed_end_to_end(cn: &CompressedNetwork) -> Matrix {
    let inner = cn.inner.product(cn.inner.depth(), 1).unwrap();
    &cn.u_out * (inner * cn.v_in.transpose())
}

impl EndToEnd for CompressedNetwork {
    fn end_to_end_matrix(&self) -> Result<Matrix> {
        Ok(compressed_end_to_end(self))
    }
}

/// Builds the compressed network from an ε-orthogonal square initialization,
/// taking the factors from the invariant basis of the observed matrix.
pub fn build_compressed(net0: &Network, observed: &Matrix, r_hat: usize, gamma: f64) -> Result<CompressedNetwork> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("gamma must be nonnegative, got {gamma}")));
    }
    let basis = invariant_subspace(net0, observed, r_hat)?;
    let k = basis.inner_dim();
    let inner = Network::new(
        vec![Matrix::identity(k, k) * basis.eps; net0.depth()],
        Activation::Linear,
    )?;
    Ok(CompressedNetwork {
        u_out: basis.u1(net0.depth()),
        v_in: basis.v1(1),
        inner,
        gamma,
        r_hat,
    })
}

/// Masked loss at `cn` and the simultaneous update of inner weights and factors.
pub fn compressed_loss_and_step(cn: &CompressedNetwork, prob: &CompletionProblem, eta: f64) -> Result<(f64, CompressedNetwork)> {
    if !(eta > 0.0) {
        return Err(Error::arg(format!("eta must be positive, got {eta}")));
    }
    let d = prob.dim();
    if cn.u_out.nrows() != d || cn.v_in.nrows() != d {
        return Err(Error::arg("compressed factors do not match the problem"));
    }
    let depth = cn.inner.depth();
    let inner = cn.inner.product(depth, 1).unwrap();
    // residual only on observed entries: w_ij = U_i · (W̃ Vᵀ)_j
    let ut = cn.u_out.transpose();
    let right = &inner * cn.v_in.transpose();
    let r = SparseMatrix {
        nrows: d,
        ncols: d,
        entries: prob
            .support
            .iter()
            .map(|&(i, j)| (i, j, ut.column(i).dot(&right.column(j)) - prob.phi[(i, j)]))
            .collect(),
    };
    let loss = 0.5 * r.norm_squared();
    let rv = r.mul_dense(&cn.v_in);
    let gamma_inner = cn.u_out.tr_mul(&rv);
    let grads = chain_gradients(cn.inner.layers(), Correlation::Dense(&gamma_inner));
    let cfg = TrainConfig {
        eta,
        ..TrainConfig::default()
    };
    let (next_inner, _) = gd_step(&cn.inner, &grads, &cfg, None)?;
    let mut next = CompressedNetwork {
        inner: next_inner,
        ..cn.clone()
    };
    if cn.gamma > 0.0 {
        let step = cn.gamma * eta;
        next.u_out -= rv * inner.transpose() * step;
        next.v_in -= r.tr_mul_dense(&cn.u_out) * inner * step;
    }
    let finite = next.u_out.iter().chain(next.v_in.iter()).all(|x| x.is_finite())
        && next.inner.layers().iter().all(|w| w.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(Error::Divergence { iteration: 0, loss });
    }
    Ok((loss, next))
}

pub fn compressed_gd_step(cn: &CompressedNetwork, prob: &CompletionProblem, eta: f64) -> Result<CompressedNetwork> {
    compressed_loss_and_step(cn, prob, eta).map(|(_, next)| next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionRow {
    pub iter: usize,
    pub mc_loss: f64,
    pub recovery_error: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct CompletionRun {
    pub rows: Vec<CompletionRow>,
    pub converged_at: Option<usize>,
    pub iterations: usize,
    pub wall_time_seconds: f64,
    pub final_loss: f64,
    pub final_recovery_error: f64,
    pub final_end_to_end: Matrix,
    /// End-to-end matrices at the logged rows, when requested.
    pub iterates: Vec<(usize, Matrix)>,
}

impl CompletionRun {
    pub fn to_csv(&self) -> String {
        use crate::tensor::io::fmt_f64;
        let mut out = String::from("iter,mc_loss,recovery_error,wall_time\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iter,
                fmt_f64(r.mc_loss),
                fmt_f64(r.recovery_error),
                fmt_f64(r.wall_time)
            ));
        }
        out
    }
}

/// Stopping and logging controls shared by the original and compressed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionSchedule {
    pub eta: f64,
    pub max_iters: usize,
    pub loss_tol: f64,
    /// Row spacing of the emitted trace.
    pub log_every: usize,
    /// Keep the end-to-end matrix at every logged row.
    #[serde(default)]
    pub keep_iterates: bool,
}

/// Generic driver: `step` returns the loss at the current iterate and advances
/// it; `current` yields the present end-to-end matrix.
fn drive<S>(
    mut state: S,
    prob: &CompletionProblem,
    sched: &CompletionSchedule,
    mut step: impl FnMut(&S) -> Result<(f64, S)>,
    current: impl Fn(&S) -> Matrix,
) -> Result<CompletionRun> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut iterates = Vec::new();
    let mut converged_at = None;
    let mut final_loss = f64::NAN;
    let mut iterations = 0;
    for t in 0..=sched.max_iters {
        let (loss, next) = step(&state).map_err(|e| match e {
            Error::Divergence { loss, .. } => Error::Divergence { iteration: t, loss },
            other => other,
        })?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { iteration: t, loss });
        }
        final_loss = loss;
        iterations = t;
        let done = loss <= sched.loss_tol || t == sched.max_iters;
        if t % sched.log_every.max(1) == 0 || done {
            let e = current(&state);
            rows.push(CompletionRow {
                iter: t,
                mc_loss: loss,
                recovery_error: recovery_error(&e, prob)?,
                wall_time: start.elapsed().as_secs_f64(),
            });
            if sched.keep_iterates {
                iterates.push((t, e));
            }
        }
        if done {
            if loss <= sched.loss_tol {
                converged_at = Some(t);
            }
            break;
        }
        state = next;
    }
    let wall_time_seconds = start.elapsed().as_secs_f64();
    let final_end_to_end = current(&state);
    Ok(CompletionRun {
        final_recovery_error: recovery_error(&final_end_to_end, prob)?,
        rows,
        converged_at,
        iterations,
        wall_time_seconds,
        final_loss,
        final_end_to_end,
        iterates,
    })
}

/// Plain GD on the full network under the masked loss.
pub fn train_original(net: &Network, prob: &CompletionProblem, sched: &CompletionSchedule) -> Result<CompletionRun> {
    let objective = prob.objective();
    let cfg = TrainConfig {
        eta: sched.eta,
        ..TrainConfig::default()
    };
    drive(
        net.clone(),
        prob,
        sched,
        |n| {
            let (loss, grads) = objective.loss_and_gradient(n)?;
            Ok((loss, gd_step(n, &grads, &cfg, None)?.0))
        },
        |n| end_to_end(n).expect("linear network"),
    )
}

pub fn train_compressed(cn: &CompressedNetwork, prob: &CompletionProblem, sched: &CompletionSchedule) -> Result<CompletionRun> {
    drive(
        cn.clone(),
        prob,
        sched,
        |c| compressed_loss_and_step(c, prob, sched.eta),
        compressed_end_to_end,
    )
}
