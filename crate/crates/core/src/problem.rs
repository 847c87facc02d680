//! Problem and solution types, validation, objective and KKT residual.
//!
//! Dual sign convention: the multipliers are those of the Lagrangian
//!
//! ```text
//! L = J − λ₀ᵀ(x₀ − x̄₀) − Σ_t λ_{t+1}ᵀ(x_{t+1} − A_t x_t − B_t w_t − a_t)
//! ```
//!
//! which is the convention under which the Riccati duals `λ_t = P_t x_t − Ψ_t`
//! satisfy stationarity.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};

use crate::error::{dim_err, Result};
use crate::linalg::{asymmetry, inf_norm, min_eigenvalue};
use crate::scalar::Scalar;

/// One stage `t` of the equality-constrained finite horizon QP.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T: Scalar> {
    /// Joint weight `[[Q_x, Q_xw], [Q_xwᵀ, Q_w]]`, size `(n_x + n_w)²`.
    pub q: DMatrix<T>,
    /// Linear weight `[l_x; l_w]`.
    pub l: DVector<T>,
    pub c: T,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// Affine term of the dynamics.
    pub offset: DVector<T>,
}

impl<T: Scalar> Stage<T> {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }

    pub fn q_x(&self) -> DMatrixView<'_, T> {
        let nx = self.n_x();
        self.q.view((0, 0), (nx, nx))
    }

    pub fn q_xw(&self) -> DMatrixView<'_, T> {
        let (nx, nw) = (self.n_x(), self.n_w());
        self.q.view((0, nx), (nx, nw))
    }

    pub fn q_w(&self) -> DMatrixView<'_, T> {
        let (nx, nw) = (self.n_x(), self.n_w());
        self.q.view((nx, nx), (nw, nw))
    }

    pub fn l_x(&self) -> DVectorView<'_, T> {
        self.l.rows(0, self.n_x())
    }

    pub fn l_w(&self) -> DVectorView<'_, T> {
        self.l.rows(self.n_x(), self.n_w())
    }

    /// `½[x;w]ᵀQ[x;w] + lᵀ[x;w] + c`.
    pub fn cost(&self, x: &DVector<T>, w: &DVector<T>) -> T {
        let half = T::lit(0.5);
        let qx = self.q_x() * x + self.q_xw() * w;
        let qw = self.q_xw().transpose() * x + self.q_w() * w;
        half * (x.dot(&qx) + w.dot(&qw)) + self.l_x().dot(x) + self.l_w().dot(w) + self.c
    }

    /// `A x + B w + a`.
    pub fn step(&self, x: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * w + &self.offset
    }
}

/// Terminal cost `½xᵀQx + lᵀx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal<T: Scalar> {
    pub q: DMatrix<T>,
    pub l: DVector<T>,
    pub c: T,
}

impl<T: Scalar> Terminal<T> {
    pub fn zeros(n_x: usize) -> Self {
        Terminal { q: DMatrix::zeros(n_x, n_x), l: DVector::zeros(n_x), c: T::zero() }
    }

    pub fn cost(&self, x: &DVector<T>) -> T {
        T::lit(0.5) * x.dot(&(&self.q * x)) + self.l.dot(x) + self.c
    }
}

/// Unconstrained finite-time optimal control problem: quadratic stage and
/// terminal costs, linear dynamics, fixed initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct UftocProblem<T: Scalar> {
    pub x0: DVector<T>,
    pub stages: Vec<Stage<T>>,
    pub terminal: Terminal<T>,
}

impl<T: Scalar> UftocProblem<T> {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn n_x(&self) -> usize {
        self.x0.len()
    }

    /// Hard dimension check used by the solvers before they index anything.
    pub fn check_dims(&self) -> Result<()> {
        let report = self.validate_shapes();
        match report.issues.into_iter().find(|i| i.severity == Severity::Error) {
            Some(issue) => Err(dim_err(issue.location.to_string(), issue.message)),
            None => Ok(()),
        }
    }

    fn validate_shapes(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let nx = self.n_x();
        if self.stages.is_empty() {
            report.error(Location::problem("N"), "horizon must be at least 1");
        }
        for (t, s) in self.stages.iter().enumerate() {
            let nw = s.b.ncols();
            let mut bad = Vec::new();
            if s.a.shape() != (nx, nx) {
                bad.push(format!("A is {:?}, expected {:?}", s.a.shape(), (nx, nx)));
            }
            if s.b.nrows() != nx {
                bad.push(format!("B has {} rows, expected {}", s.b.nrows(), nx));
            }
            if s.q.shape() != (nx + nw, nx + nw) {
                bad.push(format!("Q is {:?}, expected {:?}", s.q.shape(), (nx + nw, nx + nw)));
            }
            if s.l.len() != nx + nw {
                bad.push(format!("l has length {}, expected {}", s.l.len(), nx + nw));
            }
            if s.offset.len() != nx {
                bad.push(format!("a has length {}, expected {}", s.offset.len(), nx));
            }
            if !bad.is_empty() {
                report.error(Location::stage(t, "shape"), format!("dimension mismatch at t={t}: {}", bad.join("; ")));
            }
        }
        if self.terminal.q.shape() != (nx, nx) || self.terminal.l.len() != nx {
            report.error(Location::terminal("shape"), "dimension mismatch at terminal stage");
        }
        report
    }
}

/// Result of a solve: trajectories, duals of the dynamics and the optimal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T: Scalar> {
    /// `x_0 … x_N`.
    pub x: Vec<DVector<T>>,
    /// `w_0 … w_{N−1}`.
    pub w: Vec<DVector<T>>,
    /// `λ_0 … λ_N`; `λ_0` belongs to the initial-state constraint.
    pub lambda: Vec<DVector<T>>,
    pub cost: T,
}

/// One stage of the moving horizon estimation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MheStage<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    /// Affine term of the dynamics.
    pub offset: DVector<T>,
    /// Affine term of the measurement equation.
    pub d: DVector<T>,
    pub y: DVector<T>,
    /// Nominal process noise.
    pub w_nom: DVector<T>,
    /// Nominal measurement noise.
    pub v_nom: DVector<T>,
    pub q_w: DMatrix<T>,
    pub q_wv: DMatrix<T>,
    pub q_v: DMatrix<T>,
}

impl<T: Scalar> MheStage<T> {
    /// The joint noise weight `[[Q_w, Q_wv], [Q_wvᵀ, Q_v]]`.
    pub fn joint_weight(&self) -> DMatrix<T> {
        let (nw, ny) = (self.q_w.nrows(), self.q_v.nrows());
        let mut m = DMatrix::zeros(nw + ny, nw + ny);
        m.view_mut((0, 0), (nw, nw)).copy_from(&self.q_w);
        m.view_mut((0, nw), (nw, ny)).copy_from(&self.q_wv);
        m.view_mut((nw, 0), (ny, nw)).copy_from(&self.q_wv.transpose());
        m.view_mut((nw, nw), (ny, ny)).copy_from(&self.q_v);
        m
    }
}

/// Moving horizon estimation problem over stages `k = 0 … N_mhe`.
#[derive(Debug, Clone, PartialEq)]
pub struct MheProblem<T: Scalar> {
    pub x0_prior: DVector<T>,
    pub p0_prior: DMatrix<T>,
    pub stages: Vec<MheStage<T>>,
}

impl<T: Scalar> MheProblem<T> {
    /// `N_mhe`; there are `N_mhe + 1` stages.
    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    pub fn n_x(&self) -> usize {
        self.x0_prior.len()
    }

    pub fn has_cross_covariance(&self) -> bool {
        self.stages.iter().any(|s| s.q_wv.iter().any(|v| *v != T::zero()))
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let nx = self.n_x();
        if self.stages.is_empty() {
            report.error(Location::problem("stages"), "at least one stage is required");
            return report;
        }
        let nw = self.stages[0].b.ncols();
        let ny = self.stages[0].c.nrows();
        if self.p0_prior.shape() != (nx, nx) {
            report.error(Location::problem("P0_prior"), "dimension mismatch in prior covariance");
        } else {
            check_spd(&mut report, &self.p0_prior, Location::problem("P0_prior"), "prior covariance");
        }
        for (k, s) in self.stages.iter().enumerate() {
            let shapes = [
                ("A", s.a.shape(), (nx, nx)),
                ("B", s.b.shape(), (nx, nw)),
                ("C", s.c.shape(), (ny, nx)),
                ("Qw", s.q_w.shape(), (nw, nw)),
                ("Qwv", s.q_wv.shape(), (nw, ny)),
                ("Qv", s.q_v.shape(), (ny, ny)),
            ];
            let vecs = [
                ("a", s.offset.len(), nx),
                ("d", s.d.len(), ny),
                ("y", s.y.len(), ny),
                ("w_nom", s.w_nom.len(), nw),
                ("v_nom", s.v_nom.len(), ny),
            ];
            let mut ok = true;
            for (name, got, want) in shapes {
                if got != want {
                    ok = false;
                    report.error(
                        Location::stage(k, name),
                        format!("dimension mismatch at k={k}: {name} is {got:?}, expected {want:?}"),
                    );
                }
            }
            for (name, got, want) in vecs {
                if got != want {
                    ok = false;
                    report.error(
                        Location::stage(k, name),
                        format!("dimension mismatch at k={k}: {name} has length {got}, expected {want}"),
                    );
                }
            }
            if ok {
                check_spd(&mut report, &s.joint_weight(), Location::stage(k, "joint weight"), "joint noise weight");
            }
        }
        report
    }
}

fn check_spd<T: Scalar>(report: &mut ValidationReport, m: &DMatrix<T>, loc: Location, what: &str) {
    if asymmetry(m) > T::rel_tol(SYMMETRY_TOL, 16.0) {
        report.error(loc.clone(), format!("asymmetric {what} at {loc}"));
    }
    if min_eigenvalue(m) <= T::zero() {
        report.error(loc.clone(), format!("{what} is not positive definite at {loc}"));
    }
}

/// Either kind of problem a file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem<T: Scalar> {
    Uftoc(UftocProblem<T>),
    Mhe(MheProblem<T>),
}

/// Relative asymmetry accepted without complaint.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// PSD threshold relative to the Frobenius norm.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub stage: Option<usize>,
    pub terminal: bool,
    pub field: String,
}

impl Location {
    pub fn stage(t: usize, field: &str) -> Self {
        Location { stage: Some(t), terminal: false, field: field.to_string() }
    }

    pub fn terminal(field: &str) -> Self {
        Location { stage: None, terminal: true, field: field.to_string() }
    }

    pub fn problem(field: &str) -> Self {
        Location { stage: None, terminal: false, field: field.to_string() }
    }
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.stage, self.terminal) {
            (Some(t), _) => write!(f, "t={t} ({})", self.field),
            (None, true) => write!(f, "terminal ({})", self.field),
            (None, false) => write!(f, "{}", self.field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        !self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    fn error(&mut self, location: Location, message: impl Into<String>) {
        self.issues.push(Issue { severity: Severity::Error, location, message: message.into() });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

/// Checks shapes, symmetry and positive semidefiniteness of every weight.
pub fn validate_uftoc<T: Scalar>(p: &UftocProblem<T>) -> ValidationReport {
    let mut report = p.validate_shapes();
    if !report.ok() {
        return report;
    }
    let sym_tol = T::rel_tol(SYMMETRY_TOL, 16.0);
    let psd_tol = T::rel_tol(PSD_TOL, 16.0);
    let mut check = |m: &DMatrix<T>, loc: Location, label: String| {
        if asymmetry(m) > sym_tol {
            report.error(loc.clone(), format!("asymmetric {label}"));
        }
        if min_eigenvalue(m) < -psd_tol * m.norm() {
            report.error(loc, format!("non-PSD {label}"));
        }
    };
    for (t, s) in p.stages.iter().enumerate() {
        check(&s.q, Location::stage(t, "Q"), format!("stage weight at t={t}"));
    }
    check(&p.terminal.q, Location::terminal("Q"), "terminal weight".to_string());
    report
}

fn check_trajectory<T: Scalar>(p: &UftocProblem<T>, x: &[DVector<T>], w: &[DVector<T>]) -> Result<()> {
    p.check_dims()?;
    let n = p.horizon();
    if x.len() != n + 1 || w.len() != n {
        return Err(dim_err(
            "trajectory",
            format!("expected {} states and {} inputs, got {} and {}", n + 1, n, x.len(), w.len()),
        ));
    }
    for (t, xt) in x.iter().enumerate() {
        if xt.len() != p.n_x() {
            return Err(dim_err(format!("x[{t}]"), format!("length {} != n_x {}", xt.len(), p.n_x())));
        }
    }
    for (t, (wt, s)) in w.iter().zip(&p.stages).enumerate() {
        if wt.len() != s.n_w() {
            return Err(dim_err(format!("w[{t}]"), format!("length {} != n_w {}", wt.len(), s.n_w())));
        }
    }
    Ok(())
}

/// Objective value of a trajectory; feasibility is not checked.
pub fn eval_objective<T: Scalar>(p: &UftocProblem<T>, x: &[DVector<T>], w: &[DVector<T>]) -> Result<T> {
    check_trajectory(p, x, w)?;
    let stages = p.stages.iter().zip(x.iter().zip(w)).fold(T::zero(), |acc, (s, (xt, wt))| acc + s.cost(xt, wt));
    Ok(stages + p.terminal.cost(&x[p.horizon()]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual<T> {
    /// ∞-norm of the Lagrangian gradient with respect to all states and inputs.
    pub stationarity: T,
    /// ∞-norm of the initial-state and dynamics constraint violations.
    pub primal: T,
}

/// Stationarity and feasibility residuals of a primal-dual point.
pub fn kkt_residual<T: Scalar>(p: &UftocProblem<T>, s: &Solution<T>) -> Result<KktResidual<T>> {
    check_trajectory(p, &s.x, &s.w)?;
    let n = p.horizon();
    if s.lambda.len() != n + 1 || s.lambda.iter().any(|l| l.len() != p.n_x()) {
        return Err(dim_err("lambda", format!("expected {} duals of length {}", n + 1, p.n_x())));
    }
    let mut primal = inf_norm(&(&s.x[0] - &p.x0));
    let mut stationarity = T::zero();
    for (t, st) in p.stages.iter().enumerate() {
        let (x, w) = (&s.x[t], &s.w[t]);
        primal = primal.max(inf_norm(&(&s.x[t + 1] - st.step(x, w))));
        let gx = st.q_x() * x + st.q_xw() * w + st.l_x() - &s.lambda[t] + st.a.transpose() * &s.lambda[t + 1];
        let gw = st.q_xw().transpose() * x + st.q_w() * w + st.l_w() + st.b.transpose() * &s.lambda[t + 1];
        stationarity = stationarity.max(inf_norm(&gx)).max(inf_norm(&gw));
    }
    let gn = &p.terminal.q * &s.x[n] + &p.terminal.l - &s.lambda[n];
    stationarity = stationarity.max(inf_norm(&gn));
    Ok(KktResidual { stationarity, primal })
}

/// Residual bounds every solver in the crate must meet:
/// `(stationarity, primal)` = `1e−8·(1 + max‖l‖)`, `1e−8·(1 + ‖x̄₀‖ + max‖a‖)`.
pub fn residual_bounds<T: Scalar>(p: &UftocProblem<T>) -> KktResidual<T> {
    let max_l = p.stages.iter().map(|s| inf_norm(&s.l)).fold(inf_norm(&p.terminal.l), |m, v| m.max(v));
    let max_a = p.stages.iter().map(|s| inf_norm(&s.offset)).fold(T::zero(), |m, v| m.max(v));
    let tol = T::rel_tol(1e-8, 1e3);
    KktResidual { stationarity: tol * (T::one() + max_l), primal: tol * (T::one() + inf_norm(&p.x0) + max_a) }
}

/// Largest per-entry relative difference `‖a_t − b_t‖_∞ / max(1, ‖a_t‖_∞, ‖b_t‖_∞)`
/// over a trajectory; infinite when the lengths differ.
pub fn max_rel_diff<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            if u.len() != v.len() {
                return f64::INFINITY;
            }
            let scale = T::one().max(inf_norm(u)).max(inf_norm(v));
            (inf_norm(&(u - v)) / scale).as_f64()
        })
        .fold(0.0, f64::max)
}

/// Relative difference of two scalars with the same floor of one.
pub fn rel_diff<T: Scalar>(a: T, b: T) -> f64 {
    ((a - b).abs() / T::one().max(a.abs()).max(b.abs())).as_f64()
}

/// Largest relative deviation between two solutions over `x`, `w`, `λ` and the cost.
pub fn solution_deviation<T: Scalar>(a: &Solution<T>, b: &Solution<T>) -> f64 {
    max_rel_diff(&a.x, &b.x)
        .max(max_rel_diff(&a.w, &b.w))
        .max(max_rel_diff(&a.lambda, &b.lambda))
        .max(rel_diff(a.cost, b.cost))
}
