//! Independent reference solvers used for validation.
//!
//! Neither routine exploits the stage structure the Riccati solvers rely on:
//! the KKT oracle assembles and factors the full system, and the smoother
//! works in covariance form on the estimation problem directly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{dim_err, Result, SolveError};
use crate::linalg::symmetrize;
use crate::problem::{eval_objective, MheProblem, Solution, UftocProblem};
use crate::scalar::Scalar;

/// States, inputs and duals.
type Trajectories<T> = (Vec<DVector<T>>, Vec<DVector<T>>, Vec<DVector<T>>);

/// The assembled KKT system `K z = r` with `z = (x_0…x_N, w_0…w_{N−1}, λ_0…λ_N)`.
#[derive(Debug, Clone)]
pub struct DenseKkt<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
    /// Offsets of `x_t`, `w_t`, `λ_t` in `z`.
    pub x_index: Vec<usize>,
    pub w_index: Vec<usize>,
    pub lambda_index: Vec<usize>,
}

impl<T: Scalar> DenseKkt<T> {
    pub fn assemble(p: &UftocProblem<T>) -> Result<Self> {
        p.check_dims()?;
        let n = p.horizon();
        let nx = p.n_x();
        let x_index: Vec<usize> = (0..=n).map(|t| t * nx).collect();
        let mut w_index = Vec::with_capacity(n);
        let mut off = (n + 1) * nx;
        for s in &p.stages {
            w_index.push(off);
            off += s.n_w();
        }
        let lambda_index: Vec<usize> = (0..=n).map(|t| off + t * nx).collect();
        let dim = off + (n + 1) * nx;

        let mut k = DMatrix::zeros(dim, dim);
        let mut r = DVector::zeros(dim);
        let eye = DMatrix::<T>::identity(nx, nx);
        let neg_eye = -&eye;
        let put = |k: &mut DMatrix<T>, row: usize, col: usize, block: &DMatrix<T>| {
            k.view_mut((row, col), block.shape()).copy_from(block);
            k.view_mut((col, row), (block.ncols(), block.nrows())).copy_from(&block.transpose());
        };

        // λ_0 row: −x_0 = −x̄_0
        put(&mut k, lambda_index[0], x_index[0], &neg_eye);
        r.rows_mut(lambda_index[0], nx).copy_from(&(-&p.x0));
        for (t, s) in p.stages.iter().enumerate() {
            let (xi, wi, li) = (x_index[t], w_index[t], lambda_index[t + 1]);
            put(&mut k, xi, xi, &s.q_x().clone_owned());
            put(&mut k, xi, wi, &s.q_xw().clone_owned());
            put(&mut k, wi, wi, &s.q_w().clone_owned());
            r.rows_mut(xi, nx).copy_from(&(-s.l_x()));
            r.rows_mut(wi, s.n_w()).copy_from(&(-s.l_w()));
            // λ_{t+1} row: A x_t + B w_t − x_{t+1} = −a_t
            put(&mut k, li, xi, &s.a);
            put(&mut k, li, wi, &s.b);
            put(&mut k, li, x_index[t + 1], &neg_eye);
            r.rows_mut(li, nx).copy_from(&(-&s.offset));
        }
        // λ_t enters the x_t row with −I; covered by the constraint blocks above.
        put(&mut k, x_index[n], x_index[n], &p.terminal.q);
        r.rows_mut(x_index[n], nx).copy_from(&(-&p.terminal.l));
        Ok(DenseKkt { matrix: k, rhs: r, x_index, w_index, lambda_index })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Packs a primal-dual point into `z`.
    pub fn pack(&self, s: &Solution<T>) -> DVector<T> {
        let mut z = DVector::zeros(self.dim());
        for (t, x) in s.x.iter().enumerate() {
            z.rows_mut(self.x_index[t], x.len()).copy_from(x);
        }
        for (t, w) in s.w.iter().enumerate() {
            z.rows_mut(self.w_index[t], w.len()).copy_from(w);
        }
        for (t, l) in s.lambda.iter().enumerate() {
            z.rows_mut(self.lambda_index[t], l.len()).copy_from(l);
        }
        z
    }

    fn unpack(&self, p: &UftocProblem<T>, z: &DVector<T>) -> Trajectories<T> {
        let nx = p.n_x();
        let x = self.x_index.iter().map(|&i| z.rows(i, nx).into_owned()).collect();
        let w = self.w_index.iter().zip(&p.stages).map(|(&i, s)| z.rows(i, s.n_w()).into_owned()).collect();
        let l = self.lambda_index.iter().map(|&i| z.rows(i, nx).into_owned()).collect();
        (x, w, l)
    }
}

/// Solves the full KKT system with a pivoted LU factorization.
pub fn dense_kkt_solve<T: Scalar>(p: &UftocProblem<T>) -> Result<Solution<T>> {
    let kkt = DenseKkt::assemble(p)?;
    debug_assert!(kkt.matrix.iter().all(|v| v.is_finite()));
    let z = kkt.matrix.clone().lu().solve(&kkt.rhs).ok_or(SolveError::SingularKkt)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::SingularKkt);
    }
    let (x, w, lambda) = kkt.unpack(p, &z);
    let cost = eval_objective(p, &x, &w)?;
    Ok(Solution { x, w, lambda, cost })
}

/// Kalman filter followed by a Rauch–Tung–Striebel backward sweep.
///
/// Returns the smoothed states `x̂_0 … x̂_{N_mhe+1}`; the last one is the
/// prediction from `x̂_{N_mhe}`, which has no measurement of its own.
pub fn rts_smooth<T: Scalar>(m: &MheProblem<T>) -> Result<Vec<DVector<T>>> {
    let report = m.validate();
    if let Some(issue) = report.errors().next() {
        if issue.message.contains("dimension") {
            return Err(dim_err(issue.location.to_string(), issue.message.clone()));
        }
    }
    if let Some(k) = m.stages.iter().position(|s| s.q_wv.iter().any(|v| *v != T::zero())) {
        return Err(SolveError::UnsupportedCrossCovariance { stage: k });
    }
    let n = m.stages.len();
    let nx = m.n_x();
    let mut x_pred = Vec::with_capacity(n + 1);
    let mut p_pred = Vec::with_capacity(n + 1);
    let mut x_filt = Vec::with_capacity(n);
    let mut p_filt = Vec::with_capacity(n);
    x_pred.push(m.x0_prior.clone());
    p_pred.push(symmetrize(&m.p0_prior));
    let eye = DMatrix::<T>::identity(nx, nx);

    for (k, s) in m.stages.iter().enumerate() {
        let (xp, pp) = (&x_pred[k], &p_pred[k]);
        let innovation = &s.y - &s.d - &s.v_nom - &s.c * xp;
        let s_cov = symmetrize(&(&s.c * pp * s.c.transpose() + &s.q_v));
        let chol = Cholesky::new(s_cov)
            .ok_or_else(|| SolveError::NotPositiveDefinite { what: format!("innovation covariance at k={k}") })?;
        // K = P Cᵀ S⁻¹
        let gain = chol.solve(&(&s.c * pp)).transpose();
        let xf = xp + &gain * innovation;
        let i_kc = &eye - &gain * &s.c;
        let pf = symmetrize(&(&i_kc * pp * i_kc.transpose() + &gain * &s.q_v * gain.transpose()));
        x_pred.push(&s.a * &xf + &s.b * &s.w_nom + &s.offset);
        p_pred.push(symmetrize(&(&s.a * &pf * s.a.transpose() + &s.b * &s.q_w * s.b.transpose())));
        x_filt.push(xf);
        p_filt.push(pf);
    }

    let mut smoothed = vec![DVector::zeros(nx); n + 1];
    smoothed[n] = x_pred[n].clone();
    for k in (0..n).rev() {
        let s = &m.stages[k];
        let chol = Cholesky::new(p_pred[k + 1].clone())
            .ok_or_else(|| SolveError::NotPositiveDefinite { what: format!("predicted covariance at k={}", k + 1) })?;
        // J = P_f Aᵀ P_pred⁻¹
        let gain = chol.solve(&(&s.a * &p_filt[k])).transpose();
        smoothed[k] = &x_filt[k] + gain * (&smoothed[k + 1] - &x_pred[k + 1]);
    }
    Ok(smoothed)
}
