//! Elimination of the local variables of a batch whose terminal cost-to-go
//! is not yet known.
//!
//! A batch is first solved for the preliminary terminal `P̂ = 0, Ψ̂ = 0,
//! ĉ = 0`. Its remaining freedom, driven by the unknown terminal data, is then
//! captured by a single-stage problem
//!
//! ```text
//! min ½x₀ᵀQ̂_x x₀ + l̂_xᵀx₀ + ½ŵᵀQ̂_w ŵ + ĉ + (terminal cost at x_N)
//! s.t. x_N = Â x₀ + B̂ ŵ + â
//! ```
//!
//! with `Q̂_w = B̂ = S Q̄⁻¹ Sᵀ`, so the reduced input always has dimension `n_x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};
use crate::linalg::{block_diag, symmetrize, vstack, GSolveMode};
use crate::problem::{Solution, Stage};
use crate::riccati::{backward_stage, factor_stage, solve_stages, BackwardPass, CostToGo, Factorization, RiccatiSolve};
use crate::scalar::Scalar;

/// One stage of the master problem produced by reducing a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedStage<T: Scalar> {
    pub a_hat: DMatrix<T>,
    pub b_hat: DMatrix<T>,
    pub offset_hat: DVector<T>,
    pub q_x: DMatrix<T>,
    pub q_w: DMatrix<T>,
    pub l_x: DVector<T>,
    pub c: T,
}

impl<T: Scalar> ReducedStage<T> {
    /// The master-problem stage: block-diagonal weight, no input linear term.
    pub fn to_stage(&self) -> Stage<T> {
        Stage {
            q: block_diag(&self.q_x, &self.q_w),
            l: vstack(&self.l_x, &DVector::zeros(self.b_hat.ncols())),
            c: self.c,
            a: self.a_hat.clone(),
            b: self.b_hat.clone(),
            offset: self.offset_hat.clone(),
        }
    }
}

/// Preliminary (`P̂ = 0`) Riccati data of a batch plus the sensitivity
/// matrices `V̄_t`, kept for expansion once the terminal data arrives.
#[derive(Debug, Clone)]
pub struct BatchCache<T: Scalar> {
    /// `P_{0,t}`, `G_{0,t+1}` factors and `K_{0,t+1}`.
    pub factorization: Factorization<T>,
    /// `Ψ_{0,t}`, `k_{0,t+1}`, `c̄_{0,t}`.
    pub backward: BackwardPass<T>,
    /// `V̄_0 … V̄_N`.
    pub v_bar: Vec<DMatrix<T>>,
    pub mode: GSolveMode,
    pub stage_iterations: usize,
}

/// Reduces a batch with strict (Cholesky) solves of `G`.
pub fn reduce_subproblem<T: Scalar>(batch: &[Stage<T>]) -> Result<(ReducedStage<T>, BatchCache<T>)> {
    reduce_stages(batch, GSolveMode::Strict)
}

/// Reduction of a batch in a single backward sweep.
pub fn reduce_stages<T: Scalar>(batch: &[Stage<T>], mode: GSolveMode) -> Result<(ReducedStage<T>, BatchCache<T>)> {
    let n = batch.len();
    if n == 0 {
        return Err(dim_err("batch", "a batch needs at least one stage"));
    }
    let nx = batch[n - 1].n_x();
    if let Some((t, _)) = batch.iter().enumerate().find(|(_, s)| s.n_x() != nx) {
        return Err(dim_err(format!("t={t}"), "state dimension differs within the batch"));
    }

    let mut p = vec![DMatrix::zeros(0, 0); n + 1];
    let mut psi = vec![DVector::zeros(0); n + 1];
    let mut c_bar = vec![T::zero(); n + 1];
    let mut v_bar = vec![DMatrix::zeros(0, 0); n + 1];
    let mut k = vec![DVector::zeros(0); n];
    let mut factors = Vec::with_capacity(n);
    p[n] = DMatrix::zeros(nx, nx);
    psi[n] = DVector::zeros(nx);
    v_bar[n] = DMatrix::identity(nx, nx);
    let mut v = DVector::zeros(nx);
    let mut q_w = DMatrix::zeros(nx, nx);

    for t in (0..n).rev() {
        let s = &batch[t];
        let (sf, pt) = factor_stage(s, &p[t + 1], mode, t)?;
        let (kt, psit, ct) = backward_stage(s, &sf, &p[t + 1], &psi[t + 1], c_bar[t + 1])?;
        let bt_v = s.b.transpose() * &v_bar[t + 1];
        let l = sf.g_factor.solve(&(-&bt_v))?;
        let closed_loop = &s.a + &s.b * &sf.k;
        v += v_bar[t + 1].transpose() * (&s.offset + &s.b * &kt);
        q_w += l.transpose() * &sf.g * &l;
        v_bar[t] = closed_loop.transpose() * &v_bar[t + 1];
        p[t] = pt;
        psi[t] = psit;
        c_bar[t] = ct;
        k[t] = kt;
        factors.push(sf);
    }
    factors.reverse();

    let q_w = symmetrize(&q_w);
    let reduced = ReducedStage {
        a_hat: v_bar[0].transpose(),
        b_hat: q_w.clone(),
        offset_hat: v,
        q_x: p[0].clone(),
        q_w,
        l_x: -&psi[0],
        c: c_bar[0],
    };
    let cache = BatchCache {
        factorization: Factorization { p, stages: factors, stage_iterations: n },
        backward: BackwardPass { psi, k, c_bar, stage_iterations: n },
        v_bar,
        mode,
        stage_iterations: n,
    };
    Ok((reduced, cache))
}

/// Solves a batch once its initial state and terminal cost-to-go are known,
/// by re-running the full Riccati recursion on the slice.
pub fn expand_subproblem<T: Scalar>(
    batch: &[Stage<T>],
    x_hat: &DVector<T>,
    terminal: &CostToGo<T>,
    mode: GSolveMode,
) -> Result<RiccatiSolve<T>> {
    solve_stages(batch, x_hat, terminal, mode)
}

/// Solves a batch from the cached preliminary policy.
///
/// Given the master solution's `x̂` and reduced input `ŵ` for this batch and the
/// dual `λ` at the batch end, the inputs are `w_t = k_{0,t+1} + K_{0,t+1}x_t + w̄_t`
/// with `w̄_t = G_{0,t+1}⁻¹ B_tᵀ V̄_{t+1} ŵ`, and the duals follow from the adjoint
/// recursion `λ_t = Q_x x_t + Q_xw w_t + l_x + A_tᵀλ_{t+1}`. No refactorization
/// is performed. The returned `cost` covers only the batch's own stages.
pub fn expand_with_policy<T: Scalar>(
    batch: &[Stage<T>],
    cache: &BatchCache<T>,
    x_hat: &DVector<T>,
    w_hat: &DVector<T>,
    lambda_end: &DVector<T>,
) -> Result<Solution<T>> {
    let n = batch.len();
    if cache.v_bar.len() != n + 1 {
        return Err(dim_err("cache", "batch cache does not match the batch"));
    }
    let f = &cache.factorization;
    let mut x = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n);
    x.push(x_hat.clone());
    let mut cost = T::zero();
    for (t, s) in batch.iter().enumerate() {
        let drive = s.b.transpose() * (&cache.v_bar[t + 1] * w_hat);
        let w_bar = f.stages[t].g_factor.solve_vec(&drive)?;
        let wt = &cache.backward.k[t] + &f.stages[t].k * &x[t] + w_bar;
        cost += s.cost(&x[t], &wt);
        x.push(s.step(&x[t], &wt));
        w.push(wt);
    }
    let mut lambda = vec![DVector::zeros(0); n + 1];
    lambda[n] = lambda_end.clone();
    for t in (0..n).rev() {
        let s = &batch[t];
        lambda[t] = s.q_x() * &x[t] + s.q_xw() * &w[t] + s.l_x() + s.a.transpose() * &lambda[t + 1];
    }
    Ok(Solution { x, w, lambda, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_stages;

    fn scalar_stage(a: f64, b: f64, qx: f64, qw: f64) -> Stage<f64> {
        Stage {
            q: DMatrix::from_row_slice(2, 2, &[qx, 0.0, 0.0, qw]),
            l: DVector::zeros(2),
            c: 0.0,
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            offset: DVector::zeros(1),
        }
    }

    #[test]
    fn single_stage_batch_matches_hand_evaluation() {
        let s = scalar_stage(0.7, 2.0, 3.0, 4.0);
        let (r, cache) = reduce_subproblem(std::slice::from_ref(&s)).unwrap();
        assert_eq!(cache.factorization.stages[0].k[(0, 0)], 0.0);
        assert!((r.a_hat[(0, 0)] - 0.7).abs() < 1e-15);
        assert!((r.b_hat[(0, 0)] - 1.0).abs() < 1e-15); // B Q_w⁻¹ Bᵀ = 4/4
        assert_eq!(r.q_w, r.b_hat);
        assert_eq!(r.offset_hat[0], 0.0);
        assert_eq!(r.q_x[(0, 0)], 3.0);
        assert_eq!(r.l_x[0], 0.0);
        assert_eq!(r.c, 0.0);
    }

    #[test]
    fn zero_dynamics_batch_reduces_to_zero() {
        let batch = vec![scalar_stage(0.0, 0.0, 1.0, 1.0); 3];
        let (r, _) = reduce_subproblem(&batch).unwrap();
        assert_eq!(r.a_hat[(0, 0)], 0.0);
        assert_eq!(r.b_hat[(0, 0)], 0.0);
        assert_eq!(r.offset_hat[0], 0.0);
    }

    #[test]
    fn preliminary_policy_is_recovered_with_zero_terminal() {
        let batch = vec![scalar_stage(1.1, 0.5, 1.0, 2.0), scalar_stage(0.9, 1.5, 0.5, 1.0)];
        let (_, cache) = reduce_subproblem(&batch).unwrap();
        let x0 = DVector::from_element(1, 2.0);
        let r = expand_subproblem(&batch, &x0, &CostToGo::zeros(1), GSolveMode::Strict).unwrap();
        for t in 0..2 {
            let w0 = &cache.backward.k[t] + &cache.factorization.stages[t].k * &r.solution.x[t];
            assert!((&r.solution.w[t] - w0).norm() < 1e-14);
        }
    }

    #[test]
    fn cost_identity_of_preliminary_pass() {
        let batch = vec![scalar_stage(1.1, 0.5, 1.0, 2.0), scalar_stage(0.9, 1.5, 0.5, 1.0)];
        let (r, _) = reduce_subproblem(&batch).unwrap();
        let direct =
            solve_stages(&batch, &DVector::from_element(1, 1.0), &CostToGo::zeros(1), GSolveMode::Strict).unwrap();
        assert!((direct.factorization.p[0][(0, 0)] - r.q_x[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(reduce_subproblem::<f64>(&[]).is_err());
    }
}
