//! ADMM solver for the regularized finite-sample dual
//!
//! ```text
//! min_{λ ≥ 0}  (1/N) Σ_i D_f^conj(−G_iᵀλ, p_i) + (ζ/2) [ (1/N) Σ_i ‖G_iᵀλ‖² + ‖λ‖² ]
//! ```
//!
//! The problem is split as `v_i = −G_iᵀλ`. Each outer iteration performs a
//! data-parallel `v`-update per sample, a small nonnegative QP in `λ`, and a
//! data-parallel scaled-dual update. Sample reductions are accumulated over
//! fixed-size chunks in sample order, so results do not depend on the number
//! of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::constraints::ConstraintSet;
use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

/// Samples per reduction chunk. Fixed so that summation order is independent
/// of the thread count.
const CHUNK: usize = 256;

const QP_STEP_TOL: f64 = 1e-10;
const QP_KKT_TOL: f64 = 1e-9;
const QP_MAX_SWEEPS: usize = 20_000;
const QP_POLISH_EVERY: usize = 25;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub divergence: DivergenceKind,
    /// ADMM penalty.
    pub rho: f64,
    /// Strong-convexity regularizer of the dual.
    pub zeta: f64,
    pub max_outer_iters: usize,
    /// Stop once the RMS primal residual `‖(v_i + G_iᵀλ)_i‖/√N` is below this.
    pub residual_tol: f64,
    pub worker_count: usize,
    /// Recorded for reproducibility; the solver itself is deterministic.
    pub seed: u64,
}

impl SolverConfig {
    /// Defaults for `n` samples: `ρ = 2`, `ζ = 1/√n`,
    /// `max(500, ⌈10 log n⌉)` iterations, residual tolerance `1e-6`.
    pub fn defaults_for(n: usize, divergence: DivergenceKind) -> Self {
        Self {
            divergence,
            rho: 2.0,
            zeta: default_zeta(n),
            max_outer_iters: default_max_iters(n),
            residual_tol: 1e-6,
            worker_count: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "zeta must be positive, got {}",
                self.zeta
            )));
        }
        if matches!(self.divergence, DivergenceKind::Kl) && self.rho + self.zeta <= 0.5 {
            return Err(Error::InvalidArgument(format!(
                "KL fixed point needs rho + zeta > 1/2, got {}",
                self.rho + self.zeta
            )));
        }
        if self.worker_count == 0 {
            return Err(Error::InvalidArgument("worker_count must be at least 1".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("max_outer_iters must be at least 1".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidArgument("residual_tol must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_zeta(n: usize) -> f64 {
    1.0 / (n.max(1) as f64).sqrt()
}

pub fn default_max_iters(n: usize) -> usize {
    500.max((10.0 * (n.max(1) as f64).ln()).ceil() as usize)
}

/// Fitted dual vector with convergence history.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// RMS primal residual after each iteration.
    pub primal_residuals: Vec<f64>,
    /// `‖λ^{(t+1)} − λ^{(t)}‖₂` for each iteration.
    pub lambda_steps: Vec<f64>,
}

/// `Q = (ζ/2) I + (ρ/2N) Σ_i G_i G_iᵀ`.
pub fn precompute_q(cs: &ConstraintSet, rho: f64, zeta: f64) -> DMatrix<f64> {
    let (n, k, c) = (cs.n(), cs.k(), cs.classes());
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![0.0; k * k];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let g = cs.g(i);
                for r in 0..k {
                    let gr = &g[r * c..(r + 1) * c];
                    if gr.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    for s in r..k {
                        let gs = &g[s * c..(s + 1) * c];
                        acc[r * k + s] += gr.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0; k * k];
    for p in &partials {
        for (s, x) in sum.iter_mut().zip(p) {
            *s += x;
        }
    }
    let scale = rho / (2.0 * n.max(1) as f64);
    DMatrix::from_fn(k, k, |r, s| {
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
        let base = sum[lo * k + hi] * scale;
        if r == s {
            base + 0.5 * zeta
        } else {
            base
        }
    })
}

/// Largest KKT violation of `ℓ` for `min ℓᵀQℓ + qᵀℓ` over `ℓ ≥ 0`.
pub fn qp_kkt_residual(q_mat: &DMatrix<f64>, q: &[f64], l: &[f64]) -> f64 {
    let k = q.len();
    let mut worst: f64 = 0.0;
    for r in 0..k {
        let g = 2.0 * (0..k).map(|s| q_mat[(r, s)] * l[s]).sum::<f64>() + q[r];
        let viol = if l[r] > 0.0 { g.abs() } else { (-g).max(0.0) };
        worst = worst.max(viol);
    }
    worst
}

/// Minimizes `ℓᵀQℓ + qᵀℓ` over `ℓ ≥ 0` for symmetric positive-definite `Q`.
///
/// Cyclic coordinate descent with exact clipped coordinate steps, warm
/// started from `warm`. Periodically the free set of the current iterate is
/// solved exactly by Cholesky; the polished point is kept when it satisfies
/// the KKT conditions.
pub fn lambda_qp_solve(q_mat: &DMatrix<f64>, q: &[f64], warm: &[f64]) -> Result<Vec<f64>> {
    let k = q.len();
    if q_mat.nrows() != k || q_mat.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "QP matrix",
            expected: k,
            found: q_mat.nrows(),
        });
    }
    if warm.len() != k {
        return Err(Error::DimensionMismatch {
            what: "QP warm start",
            expected: k,
            found: warm.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    for r in 0..k {
        if !(q_mat[(r, r)] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "QP matrix diagonal entry {r} is not positive"
            )));
        }
    }
    let mut l: Vec<f64> = warm.iter().map(|&x| x.max(0.0)).collect();
    // grad = 2Qℓ + q
    let mut grad: Vec<f64> = (0..k)
        .map(|r| 2.0 * (0..k).map(|s| q_mat[(r, s)] * l[s]).sum::<f64>() + q[r])
        .collect();
    for sweep in 1..=QP_MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for r in 0..k {
            let next = (l[r] - grad[r] / (2.0 * q_mat[(r, r)])).max(0.0);
            let delta = next - l[r];
            if delta != 0.0 {
                l[r] = next;
                let col = q_mat.column(r);
                for s in 0..k {
                    grad[s] += 2.0 * col[s] * delta;
                }
                max_step = max_step.max(delta.abs());
            }
        }
        let settled = max_step <= QP_STEP_TOL;
        if settled || sweep % QP_POLISH_EVERY == 0 {
            if let Some(polished) = polish(q_mat, q, &l) {
                if qp_kkt_residual(q_mat, q, &polished) <= QP_KKT_TOL {
                    return Ok(polished);
                }
            }
            if settled && qp_kkt_residual(q_mat, q, &l) <= QP_KKT_TOL {
                return Ok(l);
            }
            if settled {
                // refresh the running gradient to shed accumulated round-off
                for r in 0..k {
                    grad[r] = 2.0 * (0..k).map(|s| q_mat[(r, s)] * l[s]).sum::<f64>() + q[r];
                }
            }
        }
    }
    Err(Error::Convergence {
        what: "lambda QP",
        iterations: QP_MAX_SWEEPS,
        residual: qp_kkt_residual(q_mat, q, &l),
    })
}

/// Solves `2 Q_FF ℓ_F = −q_F` on the free set of `l`.
fn polish(q_mat: &DMatrix<f64>, q: &[f64], l: &[f64]) -> Option<Vec<f64>> {
    let free: Vec<usize> = (0..l.len()).filter(|&r| l[r] > 0.0).collect();
    let mut out = vec![0.0; l.len()];
    if free.is_empty() {
        return Some(out);
    }
    let m = free.len();
    let sub = DMatrix::from_fn(m, m, |a, b| 2.0 * q_mat[(free[a], free[b])]);
    let rhs = DVector::from_iterator(m, free.iter().map(|&r| -q[r]));
    let sol = sub.cholesky()?.solve(&rhs);
    for (j, &r) in free.iter().enumerate() {
        if !(sol[j] > 0.0) {
            return None;
        }
        out[r] = sol[j];
    }
    Some(out)
}

#[inline]
fn g_transpose_times(g: &[f64], k: usize, c: usize, lambda: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for r in 0..k {
        let l = lambda[r];
        if l == 0.0 {
            continue;
        }
        let row = &g[r * c..(r + 1) * c];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x * l;
        }
    }
}

#[inline]
fn g_times_add(g: &[f64], k: usize, c: usize, x: &[f64], acc: &mut [f64]) {
    for r in 0..k {
        let row = &g[r * c..(r + 1) * c];
        acc[r] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn check_problem(scores: &ScoreMatrix, cs: &ConstraintSet) -> Result<()> {
    if scores.n() != cs.n() {
        return Err(Error::DimensionMismatch {
            what: "scores vs constraint samples",
            expected: cs.n(),
            found: scores.n(),
        });
    }
    if scores.classes() != cs.classes() {
        return Err(Error::DimensionMismatch {
            what: "scores vs constraint classes",
            expected: cs.classes(),
            found: scores.classes(),
        });
    }
    if scores.n() == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(())
}

/// Runs ADMM on the regularized dual and returns the fitted `λ`.
///
/// Per iteration, for every sample `i`:
///
/// ```text
/// a_i ← w_i + ρ G_iᵀλ
/// v_i ← argmin_v D_f^conj(v, p_i) + ((ρ+ζ)/2)‖v‖² + a_iᵀv
/// ```
///
/// then `q ← (1/N) Σ_i G_i (w_i + ρ v_i)`, `λ ← argmin_{ℓ≥0} ℓᵀQℓ + qᵀℓ`, and
/// `w_i ← w_i + ρ (v_i + G_iᵀλ)`. Starts from `λ = 0`, `w = 0`, `v = 0`;
/// inner solvers are warm-started from the previous iterate.
pub fn admm_fit(scores: &ScoreMatrix, cs: &ConstraintSet, cfg: &SolverConfig) -> Result<DualSolution> {
    cfg.validate()?;
    check_problem(scores, cs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| admm_loop(scores, cs, cfg))
}

fn admm_loop(scores: &ScoreMatrix, cs: &ConstraintSet, cfg: &SolverConfig) -> Result<DualSolution> {
    let (n, k, c) = (cs.n(), cs.k(), cs.classes());
    let rho = cfg.rho;
    let xi = 0.5 * (cfg.rho + cfg.zeta);
    let q_mat = precompute_q(cs, rho, cfg.zeta);
    let kind = &cfg.divergence;

    let mut lambda = vec![0.0; k];
    let mut v = vec![0.0; n * c];
    let mut w = vec![0.0; n * c];
    let mut warm_z = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut steps = Vec::new();

    for iter in 0..cfg.max_outer_iters {
        // v-update and the λ-QP linear term.
        let lam = &lambda;
        let partials: Vec<Vec<f64>> = v
            .par_chunks_mut(CHUNK * c)
            .zip(w.par_chunks(CHUNK * c))
            .zip(warm_z.par_chunks_mut(CHUNK))
            .enumerate()
            .map(|(chunk, ((v_chunk, w_chunk), z_chunk))| -> Result<Vec<f64>> {
                let mut acc = vec![0.0; k];
                let mut a = vec![0.0; c];
                let mut tmp = vec![0.0; c];
                let mut scratch = Vec::with_capacity(3 * c);
                for (j, z) in z_chunk.iter_mut().enumerate() {
                    let i = chunk * CHUNK + j;
                    let g = cs.g(i);
                    let vi = &mut v_chunk[j * c..(j + 1) * c];
                    let wi = &w_chunk[j * c..(j + 1) * c];
                    g_transpose_times(g, k, c, lam, &mut tmp);
                    for t in 0..c {
                        a[t] = wi[t] + rho * tmp[t];
                    }
                    kind.v_update_in_place(scores.row(i), &a, xi, vi, z, &mut scratch)
                        .map_err(|e| Error::InnerSolver {
                            iteration: iter,
                            sample: i,
                            source: Box::new(e),
                        })?;
                    for t in 0..c {
                        tmp[t] = wi[t] + rho * vi[t];
                    }
                    g_times_add(g, k, c, &tmp, &mut acc);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut q = vec![0.0; k];
        for p in &partials {
            for (s, x) in q.iter_mut().zip(p) {
                *s += x;
            }
        }
        q.iter_mut().for_each(|x| *x /= n as f64);

        let next = lambda_qp_solve(&q_mat, &q, &lambda).map_err(|e| match e {
            Error::Convergence { .. } => Error::InnerSolver {
                iteration: iter,
                sample: usize::MAX,
                source: Box::new(e),
            },
            other => other,
        })?;
        let step = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        lambda = next;

        // Scaled dual update and primal residual.
        let lam = &lambda;
        let res_parts: Vec<f64> = w
            .par_chunks_mut(CHUNK * c)
            .zip(v.par_chunks(CHUNK * c))
            .enumerate()
            .map(|(chunk, (w_chunk, v_chunk))| {
                let mut tmp = vec![0.0; c];
                let mut acc = 0.0;
                for j in 0..w_chunk.len() / c {
                    let i = chunk * CHUNK + j;
                    g_transpose_times(cs.g(i), k, c, lam, &mut tmp);
                    for t in 0..c {
                        let r = v_chunk[j * c + t] + tmp[t];
                        w_chunk[j * c + t] += rho * r;
                        acc += r * r;
                    }
                }
                acc
            })
            .collect();
        let residual = (res_parts.iter().sum::<f64>() / n as f64).sqrt();
        if !residual.is_finite() || !step.is_finite() {
            return Err(Error::NumericBlowup { iteration: iter });
        }
        residuals.push(residual);
        steps.push(step);
        if residual <= cfg.residual_tol {
            return Ok(DualSolution {
                lambda,
                iterations: iter + 1,
                converged: true,
                primal_residuals: residuals,
                lambda_steps: steps,
            });
        }
    }
    Ok(DualSolution {
        lambda,
        iterations: cfg.max_outer_iters,
        converged: false,
        primal_residuals: residuals,
        lambda_steps: steps,
    })
}

/// Regularized dual objective at `λ`:
/// `(1/N) Σ_i D_f^conj(−G_iᵀλ, p_i) + (ζ/2)[(1/N) Σ_i ‖G_iᵀλ‖² + ‖λ‖²]`.
pub fn dual_objective(
    scores: &ScoreMatrix,
    cs: &ConstraintSet,
    lambda: &[f64],
    kind: &DivergenceKind,
    zeta: f64,
) -> Result<f64> {
    check_problem(scores, cs)?;
    let (n, k, c) = (cs.n(), cs.k(), cs.classes());
    let mut tmp = vec![0.0; c];
    let mut conj = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        g_transpose_times(cs.g(i), k, c, lambda, &mut tmp);
        quad += tmp.iter().map(|x| x * x).sum::<f64>();
        tmp.iter_mut().for_each(|x| *x = -*x);
        conj += kind.conj(&tmp, scores.row(i))?;
    }
    let nf = n as f64;
    let l2: f64 = lambda.iter().map(|x| x * x).sum();
    Ok(conj / nf + 0.5 * zeta * (quad / nf + l2))
}

/// Bound on `‖λ‖₁` from a strictly feasible classifier, evaluated at the
/// uniform classifier: `D_f(u ‖ h^base) / min_k(−μ_k(u))`.
pub fn lambda_max_bound(scores: &ScoreMatrix, cs: &ConstraintSet, kind: &DivergenceKind) -> Result<f64> {
    check_problem(scores, cs)?;
    let (n, c) = (scores.n(), scores.classes());
    let uniform = ScoreMatrix::from_rows(&vec![vec![1.0 / c as f64; c]; n])?;
    let mu = cs.empirical_values(&uniform)?;
    let slack = mu.iter().map(|m| -m).fold(f64::INFINITY, f64::min);
    if !(slack > 0.0) {
        return Err(Error::Infeasible(format!(
            "uniform classifier is not strictly feasible (min slack {slack:e})"
        )));
    }
    let u = vec![1.0 / c as f64; c];
    let div: f64 = (0..n).map(|i| kind.divergence(&u, scores.row(i))).sum::<f64>() / n as f64;
    Ok(div / slack)
}
