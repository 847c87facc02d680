//! Serial Riccati recursion: factorization, backward sweep and forward sweep.
//!
//! The sweeps run on stage slices with an explicit cost-to-go
//! `½xᵀP̂x − Ψ̂ᵀx + ĉ` at the end of the slice, so the tree solver can reuse
//! them on sub-horizons without copying stage data.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};
use crate::linalg::{symmetrize, GSolveMode, SymFactor};
use crate::problem::{Solution, Stage, UftocProblem};
use crate::scalar::Scalar;

/// Quadratic cost-to-go `½xᵀPx − Ψᵀx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGo<T: Scalar> {
    pub p: DMatrix<T>,
    pub psi: DVector<T>,
    pub c: T,
}

impl<T: Scalar> CostToGo<T> {
    pub fn zeros(n_x: usize) -> Self {
        CostToGo { p: DMatrix::zeros(n_x, n_x), psi: DVector::zeros(n_x), c: T::zero() }
    }

    /// The terminal cost of `p` expressed as a cost-to-go.
    pub fn terminal_of(p: &UftocProblem<T>) -> Self {
        CostToGo { p: p.terminal.q.clone(), psi: -&p.terminal.l, c: p.terminal.c }
    }

    pub fn eval(&self, x: &DVector<T>) -> T {
        T::lit(0.5) * x.dot(&(&self.p * x)) - self.psi.dot(x) + self.c
    }
}

/// Per-stage output of the factorization for `G_{t+1}`, `K_{t+1}`, `H_{t+1}`, `F_{t+1}`.
#[derive(Debug, Clone)]
pub struct StageFactor<T: Scalar> {
    pub g: DMatrix<T>,
    pub g_factor: SymFactor<T>,
    pub k: DMatrix<T>,
    pub h: DMatrix<T>,
    pub f: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct Factorization<T: Scalar> {
    /// `P_0 … P_N`.
    pub p: Vec<DMatrix<T>>,
    /// Entry `t` holds the factors indexed `t+1`.
    pub stages: Vec<StageFactor<T>>,
    pub stage_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct BackwardPass<T: Scalar> {
    /// `Ψ_0 … Ψ_N`.
    pub psi: Vec<DVector<T>>,
    /// Entry `t` holds `k_{t+1}`.
    pub k: Vec<DVector<T>>,
    /// `c̄_0 … c̄_N`.
    pub c_bar: Vec<T>,
    pub stage_iterations: usize,
}

impl<T: Scalar> BackwardPass<T> {
    /// `½xᵀP₀x − Ψ₀ᵀx + c̄₀`.
    pub fn cost_at(&self, f: &Factorization<T>, x0: &DVector<T>) -> T {
        T::lit(0.5) * x0.dot(&(&f.p[0] * x0)) - self.psi[0].dot(x0) + self.c_bar[0]
    }
}

/// One iteration of the factorization: returns the factors and `P_t`.
pub(crate) fn factor_stage<T: Scalar>(
    stage: &Stage<T>,
    p_next: &DMatrix<T>,
    mode: GSolveMode,
    t: usize,
) -> Result<(StageFactor<T>, DMatrix<T>)> {
    let at_p = stage.a.transpose() * p_next;
    let f = stage.q_x() + &at_p * &stage.a;
    let g = symmetrize(&(stage.q_w() + stage.b.transpose() * p_next * &stage.b));
    let h = stage.q_xw() + &at_p * &stage.b;
    let g_factor = SymFactor::new(&g, mode, t)?;
    let k = g_factor.solve(&(-h.transpose()))?;
    let p = symmetrize(&(&f - k.transpose() * &g * &k));
    Ok((StageFactor { g, g_factor, k, h, f }, p))
}

/// One iteration of the backward sweep: returns `k_{t+1}`, `Ψ_t`, `c̄_t`.
pub(crate) fn backward_stage<T: Scalar>(
    stage: &Stage<T>,
    sf: &StageFactor<T>,
    p_next: &DMatrix<T>,
    psi_next: &DVector<T>,
    c_next: T,
) -> Result<(DVector<T>, DVector<T>, T)> {
    let p_a = p_next * &stage.offset;
    let rhs = stage.b.transpose() * (psi_next - &p_a) - stage.l_w();
    let k = sf.g_factor.solve_vec(&rhs)?;
    let psi = stage.a.transpose() * (psi_next - &p_a) - &sf.h * &k - stage.l_x();
    let half = T::lit(0.5);
    let c =
        c_next + half * stage.offset.dot(&p_a) - psi_next.dot(&stage.offset) - half * k.dot(&(&sf.g * &k)) + stage.c;
    Ok((k, psi, c))
}

fn check_terminal<T: Scalar>(stages: &[Stage<T>], n_x: usize) -> Result<()> {
    if let Some((t, _)) = stages.iter().enumerate().find(|(_, s)| s.n_x() != n_x) {
        return Err(dim_err(format!("t={t}"), "state dimension differs from terminal data"));
    }
    Ok(())
}

/// Riccati factorization over a stage slice ending in `P_N = p_n`.
pub fn factorize_stages<T: Scalar>(
    stages: &[Stage<T>],
    p_n: &DMatrix<T>,
    mode: GSolveMode,
) -> Result<Factorization<T>> {
    check_terminal(stages, p_n.nrows())?;
    let n = stages.len();
    let mut p = vec![DMatrix::zeros(0, 0); n + 1];
    let mut factors = Vec::with_capacity(n);
    p[n] = symmetrize(p_n);
    let mut iterations = 0;
    for t in (0..n).rev() {
        let (sf, pt) = factor_stage(&stages[t], &p[t + 1], mode, t)?;
        p[t] = pt;
        factors.push(sf);
        iterations += 1;
    }
    factors.reverse();
    Ok(Factorization { p, stages: factors, stage_iterations: iterations })
}

/// Backward sweep over a slice with terminal `Ψ_N = psi_n`, `c̄_N = c_n`.
pub fn backward_stages<T: Scalar>(
    stages: &[Stage<T>],
    f: &Factorization<T>,
    psi_n: &DVector<T>,
    c_n: T,
) -> Result<BackwardPass<T>> {
    let n = stages.len();
    if f.stages.len() != n {
        return Err(dim_err("factorization", "factorization does not match the stage slice"));
    }
    let mut psi = vec![DVector::zeros(0); n + 1];
    let mut k = vec![DVector::zeros(0); n];
    let mut c_bar = vec![T::zero(); n + 1];
    psi[n] = psi_n.clone();
    c_bar[n] = c_n;
    let mut iterations = 0;
    for t in (0..n).rev() {
        let (kt, psit, ct) = backward_stage(&stages[t], &f.stages[t], &f.p[t + 1], &psi[t + 1], c_bar[t + 1])?;
        k[t] = kt;
        psi[t] = psit;
        c_bar[t] = ct;
        iterations += 1;
    }
    Ok(BackwardPass { psi, k, c_bar, stage_iterations: iterations })
}

/// Forward sweep from `x0`; `cost` is filled through the cost-to-go at `x0`.
pub fn forward_stages<T: Scalar>(
    stages: &[Stage<T>],
    f: &Factorization<T>,
    b: &BackwardPass<T>,
    x0: &DVector<T>,
) -> Result<(Solution<T>, usize)> {
    let n = stages.len();
    if x0.len() != f.p[0].nrows() {
        return Err(dim_err("x0", "initial state length does not match the factorization"));
    }
    let mut x = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n + 1);
    x.push(x0.clone());
    let mut iterations = 0;
    for (t, stage) in stages.iter().enumerate() {
        let wt = &b.k[t] + &f.stages[t].k * &x[t];
        let next = stage.step(&x[t], &wt);
        lambda.push(&f.p[t] * &x[t] - &b.psi[t]);
        w.push(wt);
        x.push(next);
        iterations += 1;
    }
    lambda.push(&f.p[n] * &x[n] - &b.psi[n]);
    let cost = b.cost_at(f, x0);
    Ok((Solution { x, w, lambda, cost }, iterations))
}

/// Everything produced by a full Riccati solve of a stage slice.
#[derive(Debug, Clone)]
pub struct RiccatiSolve<T: Scalar> {
    pub solution: Solution<T>,
    pub factorization: Factorization<T>,
    pub backward: BackwardPass<T>,
    /// Stage iterations of the forward sweep; equals the slice length.
    pub stage_iterations: usize,
}

/// Factorize, backward and forward sweep over a slice ending in `terminal`.
pub fn solve_stages<T: Scalar>(
    stages: &[Stage<T>],
    x0: &DVector<T>,
    terminal: &CostToGo<T>,
    mode: GSolveMode,
) -> Result<RiccatiSolve<T>> {
    let factorization = factorize_stages(stages, &terminal.p, mode)?;
    let backward = backward_stages(stages, &factorization, &terminal.psi, terminal.c)?;
    let (solution, stage_iterations) = forward_stages(stages, &factorization, &backward, x0)?;
    Ok(RiccatiSolve { solution, factorization, backward, stage_iterations })
}

/// Riccati factorization of `p`; `terminal_override` replaces `Q_{x,N}`.
pub fn factorize<T: Scalar>(p: &UftocProblem<T>, terminal_override: Option<&DMatrix<T>>) -> Result<Factorization<T>> {
    p.check_dims()?;
    factorize_stages(&p.stages, terminal_override.unwrap_or(&p.terminal.q), GSolveMode::Strict)
}

/// Backward sweep of `p`; `terminal_override` replaces `(Ψ_N, c̄_N)`.
pub fn backward<T: Scalar>(
    p: &UftocProblem<T>,
    f: &Factorization<T>,
    terminal_override: Option<(&DVector<T>, T)>,
) -> Result<BackwardPass<T>> {
    p.check_dims()?;
    match terminal_override {
        Some((psi, c)) => backward_stages(&p.stages, f, psi, c),
        None => backward_stages(&p.stages, f, &(-&p.terminal.l), p.terminal.c),
    }
}

pub fn forward<T: Scalar>(
    p: &UftocProblem<T>,
    f: &Factorization<T>,
    b: &BackwardPass<T>,
    x0: &DVector<T>,
) -> Result<Solution<T>> {
    p.check_dims()?;
    forward_stages(&p.stages, f, b, x0).map(|(s, _)| s)
}

/// Serial Riccati solve of `p`.
pub fn solve_serial<T: Scalar>(p: &UftocProblem<T>) -> Result<Solution<T>> {
    solve_serial_detailed(p, GSolveMode::Strict).map(|r| r.solution)
}

/// Serial solve returning the factorization and backward sweep as well.
pub fn solve_serial_detailed<T: Scalar>(p: &UftocProblem<T>, mode: GSolveMode) -> Result<RiccatiSolve<T>> {
    p.check_dims()?;
    solve_stages(&p.stages, &p.x0, &CostToGo::terminal_of(p), mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::scalar_problem;
    use crate::problem::{kkt_residual, Terminal};
    use crate::SolveError;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-14
    }

    #[test]
    fn one_step_scalar_factorization() {
        let p = scalar_problem(1.0);
        let f = factorize(&p, None).unwrap();
        let s = &f.stages[0];
        assert!(approx(s.f[(0, 0)], 2.0));
        assert!(approx(s.g[(0, 0)], 2.0));
        assert!(approx(s.h[(0, 0)], 1.0));
        assert!(approx(s.k[(0, 0)], -0.5));
        assert!(approx(f.p[0][(0, 0)], 1.5));
        assert_eq!(f.stage_iterations, 1);
    }

    #[test]
    fn one_step_scalar_backward_with_offset() {
        let mut p = scalar_problem(1.0);
        p.stages[0].offset[0] = 1.0;
        let f = factorize(&p, None).unwrap();
        let b = backward(&p, &f, None).unwrap();
        assert!(approx(b.k[0][0], -0.5));
        assert!(approx(b.psi[0][0], -0.5));
        assert!(approx(b.c_bar[0], 0.25));
        assert_eq!(b.psi[1][0], 0.0);
    }

    #[test]
    fn zero_dynamics_collapse_to_stage_weights() {
        let mut p = scalar_problem(1.0);
        p.stages.push(p.stages[0].clone());
        for s in &mut p.stages {
            s.a[(0, 0)] = 0.0;
            s.q[(0, 0)] = 3.0;
        }
        let f = factorize(&p, None).unwrap();
        for t in 0..2 {
            assert!(approx(f.p[t][(0, 0)], 3.0));
        }
    }

    #[test]
    fn singular_g_is_reported_with_stage() {
        let mut p = scalar_problem(0.0);
        p.stages[0].b[(0, 0)] = 0.0;
        assert_eq!(factorize(&p, None).unwrap_err(), SolveError::IndefiniteG { stage: 0 });
    }

    #[test]
    fn zero_data_gives_rollout_and_duals_from_p() {
        let mut p = scalar_problem(1.0);
        p.x0[0] = 2.0;
        p.stages.push(p.stages[0].clone());
        let r = solve_serial_detailed(&p, GSolveMode::Strict).unwrap();
        for t in 0..=2 {
            let lam = &r.factorization.p[t] * &r.solution.x[t];
            assert!((&r.solution.lambda[t] - lam).norm() < 1e-14);
            assert_eq!(r.backward.psi[t][0], 0.0);
        }
        assert_eq!(r.stage_iterations, 2);
        assert_eq!(r.backward.stage_iterations, 2);
    }

    #[test]
    fn one_step_closed_form() {
        let mut p = scalar_problem(1.0);
        p.x0[0] = 1.0;
        let s = solve_serial(&p).unwrap();
        // min ½ + ½w² + ½(1+w)²  ⇒  w = −½, x₁ = ½, cost = ½ + ⅛ + ⅛
        assert!(approx(s.w[0][0], -0.5));
        assert!(approx(s.x[1][0], 0.5));
        assert!(approx(s.cost, 0.75));
        assert!(approx(s.lambda[0][0], 1.5));
        assert!(approx(s.lambda[1][0], 0.5));
        let r = kkt_residual(&p, &s).unwrap();
        assert!(r.stationarity < 1e-14 && r.primal < 1e-14);
    }

    #[test]
    fn terminal_override_is_used() {
        let p = scalar_problem(1.0);
        let f = factorize(&p, Some(&DMatrix::from_element(1, 1, 0.0))).unwrap();
        assert!(approx(f.p[0][(0, 0)], 1.0));
    }

    #[test]
    fn mismatched_terminal_is_rejected() {
        let mut p = scalar_problem(1.0);
        p.terminal = Terminal::zeros(2);
        assert!(solve_serial(&p).is_err());
    }
}
