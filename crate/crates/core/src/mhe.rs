//! Conversion of a moving horizon estimation problem into the equivalent
//! finite horizon QP, and recovery of the estimates from its solution.
//!
//! The measurement noise is eliminated through `v_k = y_k − C_k x_k − d_k`,
//! the prior is turned into a stage by introducing `x_{−1} = x̃₀` and
//! `w_{−1} = x₀ − x̃₀`, and time is shifted by one (`t = k + 1`), so the QP
//! has horizon `N = N_mhe + 2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result, SolveError};
use crate::linalg::{block_diag, spd_inverse, vstack};
use crate::problem::{MheProblem, Solution, Stage, Terminal, UftocProblem};
use crate::scalar::Scalar;

/// Blocks of the inverse joint noise weight together with the adjusted measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseWeights<T: Scalar> {
    /// `n_w × n_w`.
    pub w: DMatrix<T>,
    /// `n_w × n_y`.
    pub s: DMatrix<T>,
    /// `n_y × n_y`.
    pub v: DMatrix<T>,
    /// `ỹ = y − d − ṽ`.
    pub y_tilde: DVector<T>,
}

/// Inverts `[[Q_w, Q_wv], [Q_wvᵀ, Q_v]]` and returns its blocks `(W, S, V)`.
pub fn invert_noise_weight<T: Scalar>(
    q_w: &DMatrix<T>,
    q_wv: &DMatrix<T>,
    q_v: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
    let (nw, ny) = (q_w.nrows(), q_v.nrows());
    if q_w.shape() != (nw, nw) || q_v.shape() != (ny, ny) || q_wv.shape() != (nw, ny) {
        return Err(dim_err("noise weight", "inconsistent block shapes"));
    }
    let mut joint = DMatrix::zeros(nw + ny, nw + ny);
    joint.view_mut((0, 0), (nw, nw)).copy_from(q_w);
    joint.view_mut((0, nw), (nw, ny)).copy_from(q_wv);
    joint.view_mut((nw, 0), (ny, nw)).copy_from(&q_wv.transpose());
    joint.view_mut((nw, nw), (ny, ny)).copy_from(q_v);
    let inv = spd_inverse(&joint, "joint noise weight")?;
    Ok((
        inv.view((0, 0), (nw, nw)).into_owned(),
        inv.view((0, nw), (nw, ny)).into_owned(),
        inv.view((nw, nw), (ny, ny)).into_owned(),
    ))
}

/// Noise weights of every stage.
pub fn noise_weights<T: Scalar>(m: &MheProblem<T>) -> Result<Vec<NoiseWeights<T>>> {
    m.stages
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (w, sm, v) = invert_noise_weight(&s.q_w, &s.q_wv, &s.q_v).map_err(|e| match e {
                SolveError::NotPositiveDefinite { .. } => {
                    SolveError::NotPositiveDefinite { what: format!("joint noise weight at k={k}") }
                }
                other => other,
            })?;
            Ok(NoiseWeights { w, s: sm, v, y_tilde: &s.y - &s.d - &s.v_nom })
        })
        .collect()
}

fn check_mhe<T: Scalar>(m: &MheProblem<T>) -> Result<()> {
    let report = m.validate();
    if let Some(issue) = report.errors().find(|i| i.message.contains("dimension")) {
        return Err(dim_err(issue.location.to_string(), issue.message.clone()));
    }
    if m.stages.is_empty() {
        return Err(dim_err("stages", "at least one stage is required"));
    }
    Ok(())
}

/// Builds the finite horizon QP equivalent to `m`.
pub fn mhe_to_uftoc<T: Scalar>(m: &MheProblem<T>) -> Result<UftocProblem<T>> {
    check_mhe(m)?;
    let nx = m.n_x();
    let p0_inv = spd_inverse(&m.p0_prior, "prior covariance")?;
    let weights = noise_weights(m)?;

    let mut stages = Vec::with_capacity(m.stages.len() + 1);
    stages.push(Stage {
        q: block_diag(&DMatrix::zeros(nx, nx), &p0_inv),
        l: DVector::zeros(2 * nx),
        c: T::zero(),
        a: DMatrix::identity(nx, nx),
        b: DMatrix::identity(nx, nx),
        offset: DVector::zeros(nx),
    });
    let half = T::lit(0.5);
    for (s, nw) in m.stages.iter().zip(&weights) {
        let ct = s.c.transpose();
        let q_x = &ct * &nw.v * &s.c;
        let q_xw = -(&ct * nw.s.transpose());
        let n_w = nw.w.nrows();
        let mut q = DMatrix::zeros(nx + n_w, nx + n_w);
        q.view_mut((0, 0), (nx, nx)).copy_from(&q_x);
        q.view_mut((0, nx), (nx, n_w)).copy_from(&q_xw);
        q.view_mut((nx, 0), (n_w, nx)).copy_from(&q_xw.transpose());
        q.view_mut((nx, nx), (n_w, n_w)).copy_from(&nw.w);
        let yt = &nw.y_tilde;
        let l_x = &ct * (nw.s.transpose() * &s.w_nom - &nw.v * yt);
        let l_w = &nw.s * yt - &nw.w * &s.w_nom;
        let c = half * s.w_nom.dot(&(&nw.w * &s.w_nom)) - s.w_nom.dot(&(&nw.s * yt)) + half * yt.dot(&(&nw.v * yt));
        stages.push(Stage {
            q: (&q + q.transpose()) * half,
            l: vstack(&l_x, &l_w),
            c,
            a: s.a.clone(),
            b: s.b.clone(),
            offset: s.offset.clone(),
        });
    }
    Ok(UftocProblem { x0: m.x0_prior.clone(), stages, terminal: Terminal::zeros(nx) })
}

/// Estimates recovered from the QP solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MheEstimate<T: Scalar> {
    /// `x̂_0 … x̂_{N_mhe+1}`.
    pub x: Vec<DVector<T>>,
    /// `ŵ_0 … ŵ_{N_mhe}`.
    pub w: Vec<DVector<T>>,
    /// `v̂_0 … v̂_{N_mhe}`, from the measurement equation.
    pub v: Vec<DVector<T>>,
    /// `x̂_0 − x̃_0`.
    pub w_prior: DVector<T>,
}

pub fn extract_mhe_solution<T: Scalar>(s: &Solution<T>, m: &MheProblem<T>) -> Result<MheEstimate<T>> {
    let n = m.stages.len();
    if s.x.len() != n + 2 || s.w.len() != n + 1 {
        return Err(dim_err(
            "solution",
            format!("expected {} states and {} inputs for N_mhe={}", n + 2, n + 1, m.horizon()),
        ));
    }
    let x: Vec<DVector<T>> = s.x[1..].to_vec();
    let w = s.w[1..].to_vec();
    let v = m.stages.iter().zip(&x).map(|(st, xk)| &st.y - &st.c * xk - &st.d).collect();
    Ok(MheEstimate { x, w, v, w_prior: s.w[0].clone() })
}

/// Objective of the estimation problem at `(x̂_0, ŵ, v̂)`; feasibility is not checked.
pub fn mhe_objective<T: Scalar>(m: &MheProblem<T>, x0: &DVector<T>, w: &[DVector<T>], v: &[DVector<T>]) -> Result<T> {
    if w.len() != m.stages.len() || v.len() != m.stages.len() {
        return Err(dim_err("mhe trajectory", "one w and v per stage required"));
    }
    let half = T::lit(0.5);
    let p0_inv = spd_inverse(&m.p0_prior, "prior covariance")?;
    let dx = x0 - &m.x0_prior;
    let mut total = half * dx.dot(&(p0_inv * &dx));
    for (k, s) in m.stages.iter().enumerate() {
        let e = vstack(&(&w[k] - &s.w_nom), &(&v[k] - &s.v_nom));
        let inv = spd_inverse(&s.joint_weight(), "joint noise weight")?;
        total += half * e.dot(&(inv * &e));
    }
    Ok(total)
}
