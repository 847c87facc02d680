//! Helpers and brute-force references shared by the integration tests.
#![allow(dead_code)]

use mhe_riccati::generate::{generate_uftoc, Gen};
use mhe_riccati::linalg::GSolveMode;
use mhe_riccati::problem::{eval_objective, rel_diff};
use mhe_riccati::riccati::{solve_serial_detailed, solve_stages};
use mhe_riccati::{CostToGo, MheProblem, Stage, UftocProblem};
use nalgebra::{DMatrix, DVector};

/// `½x̄ᵀP₀x̄ − Ψ₀ᵀx̄ + c̄₀` from the serial recursion, compared to the objective
/// evaluated at `(x, w)`.
pub fn cost_identity_gap(p: &UftocProblem<f64>, x: &[DVector<f64>], w: &[DVector<f64>]) -> f64 {
    let r = solve_serial_detailed(p, GSolveMode::Strict).expect("serial solve");
    let x0 = &p.x0;
    let identity = 0.5 * x0.dot(&(&r.factorization.p[0] * x0)) - r.backward.psi[0].dot(x0) + r.backward.c_bar[0];
    rel_diff(identity, eval_objective(p, x, w).expect("objective"))
}

/// UFTOC instance with a stage-varying input dimension.
pub fn mixed_input_problem(n_x: usize, horizon: usize, seed: u64) -> UftocProblem<f64> {
    let mut p = generate_uftoc(n_x, n_x, horizon, seed);
    let mut g = Gen::new(seed ^ 0x5eed);
    for s in &mut p.stages {
        let nw = g.index(1, n_x);
        let keep: Vec<usize> = (0..n_x + nw).collect();
        s.q = s.q.select_rows(&keep).select_columns(&keep);
        s.l = s.l.rows(0, n_x + nw).into_owned();
        s.b = s.b.columns(0, nw).into_owned();
    }
    p
}

/// Random PSD cost-to-go of random rank.
pub fn random_terminal(g: &mut Gen, n: usize) -> CostToGo<f64> {
    let rank = g.index(0, n);
    let m = g.matrix(n, rank);
    CostToGo { p: &m * m.transpose(), psi: g.vector(n), c: g.normal() }
}

/// Definitional reduction data of a batch, built from explicit products and
/// sums over the preliminary (`P̂ = 0`) policy.
pub struct DefinitionalReduction {
    pub a_hat: DMatrix<f64>,
    pub offset_hat: DVector<f64>,
    /// Maps the stacked free inputs `w̄` to `x_N`.
    pub s: DMatrix<f64>,
    /// `blockdiag(G_{0,1}, …, G_{0,N})`.
    pub q_bar: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

pub fn definitional_reduction(batch: &[Stage<f64>]) -> DefinitionalReduction {
    let n = batch.len();
    let nx = batch[0].n_x();
    let pre = solve_stages(batch, &DVector::zeros(nx), &CostToGo::zeros(nx), GSolveMode::Strict).unwrap();
    let phi: Vec<DMatrix<f64>> = (0..n).map(|t| &batch[t].a + &batch[t].b * &pre.factorization.stages[t].k).collect();
    // prod(from, to) = Φ_{to-1} ⋯ Φ_from
    let prod = |from: usize| {
        let mut m = DMatrix::<f64>::identity(nx, nx);
        for f in &phi[from..] {
            m = f * m;
        }
        m
    };
    let a_hat = prod(0);
    let mut offset_hat = DVector::zeros(nx);
    for (tau, st) in batch.iter().enumerate() {
        offset_hat += prod(tau + 1) * (&st.offset + &st.b * &pre.backward.k[tau]);
    }
    let total: usize = batch.iter().map(|s| s.n_w()).sum();
    let mut s = DMatrix::zeros(nx, total);
    let mut q_bar = DMatrix::zeros(total, total);
    let mut col = 0;
    for (t, st) in batch.iter().enumerate() {
        let nw = st.n_w();
        s.view_mut((0, col), (nx, nw)).copy_from(&(prod(t + 1) * &st.b));
        q_bar.view_mut((col, col), (nw, nw)).copy_from(&pre.factorization.stages[t].g);
        col += nw;
    }
    let q_inv = q_bar.clone().try_inverse().expect("G blocks are positive definite");
    let b_hat = &s * q_inv * s.transpose();
    DefinitionalReduction { a_hat, offset_hat, s, q_bar, b_hat }
}

/// Orthonormal basis of the range of `m`.
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cols: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1e-300)).collect();
    u.select_columns(&cols)
}

/// State and input trajectories of an MHE problem from its own KKT system,
/// assembled directly from the estimation objective with `v_k` eliminated.
pub fn dense_mhe(m: &MheProblem<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = m.stages.len();
    let nx = m.n_x();
    let nws: Vec<usize> = m.stages.iter().map(|s| s.b.ncols()).collect();
    let nw_total: usize = nws.iter().sum();
    let nz = (n + 1) * nx + nw_total;
    let ncon = n * nx;
    let xi = |k: usize| k * nx;
    let mut wi = Vec::with_capacity(n);
    let mut off = (n + 1) * nx;
    for &nw in &nws {
        wi.push(off);
        off += nw;
    }

    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    let p0_inv = m.p0_prior.clone().try_inverse().unwrap();
    h.view_mut((0, 0), (nx, nx)).copy_from(&p0_inv);
    g.rows_mut(0, nx).copy_from(&(-&p0_inv * &m.x0_prior));

    for (k, st) in m.stages.iter().enumerate() {
        let (nw, ny) = (nws[k], st.c.nrows());
        let mut joint = DMatrix::zeros(nw + ny, nw + ny);
        joint.view_mut((0, 0), (nw, nw)).copy_from(&st.q_w);
        joint.view_mut((0, nw), (nw, ny)).copy_from(&st.q_wv);
        joint.view_mut((nw, 0), (ny, nw)).copy_from(&st.q_wv.transpose());
        joint.view_mut((nw, nw), (ny, ny)).copy_from(&st.q_v);
        let jinv = joint.try_inverse().unwrap();
        // residual r = [w − w̃; y − C x − d − ṽ] = M z_k + r0, z_k = (x_k, w_k)
        let mut mk = DMatrix::zeros(nw + ny, nx + nw);
        mk.view_mut((0, nx), (nw, nw)).fill_with_identity();
        mk.view_mut((nw, 0), (ny, nx)).copy_from(&(-&st.c));
        let mut r0 = DVector::zeros(nw + ny);
        r0.rows_mut(0, nw).copy_from(&(-&st.w_nom));
        r0.rows_mut(nw, ny).copy_from(&(&st.y - &st.d - &st.v_nom));
        let hk = mk.transpose() * &jinv * &mk;
        let gk = mk.transpose() * &jinv * &r0;
        let idx: Vec<usize> = (0..nx).map(|i| xi(k) + i).chain((0..nw).map(|i| wi[k] + i)).collect();
        for (a, &ia) in idx.iter().enumerate() {
            g[ia] += gk[a];
            for (b, &ib) in idx.iter().enumerate() {
                h[(ia, ib)] += hk[(a, b)];
            }
        }
    }

    // x_{k+1} − A_k x_k − B_k w_k = a_k
    let mut e = DMatrix::zeros(ncon, nz);
    let mut f = DVector::zeros(ncon);
    for (k, st) in m.stages.iter().enumerate() {
        let r = k * nx;
        e.view_mut((r, xi(k + 1)), (nx, nx)).fill_with_identity();
        e.view_mut((r, xi(k)), (nx, nx)).copy_from(&(-&st.a));
        e.view_mut((r, wi[k]), (nx, nws[k])).copy_from(&(-&st.b));
        f.rows_mut(r, nx).copy_from(&st.offset);
    }
    let dim = nz + ncon;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
    kkt.view_mut((nz, 0), (ncon, nz)).copy_from(&e);
    kkt.view_mut((0, nz), (nz, ncon)).copy_from(&e.transpose());
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nz).copy_from(&(-g));
    rhs.rows_mut(nz, ncon).copy_from(&f);
    let z = kkt.lu().solve(&rhs).expect("MHE KKT system is nonsingular");
    let x = (0..=n).map(|k| z.rows(xi(k), nx).into_owned()).collect();
    let w = (0..n).map(|k| z.rows(wi[k], nws[k]).into_owned()).collect();
    (x, w)
}
