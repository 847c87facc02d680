//! Seeded random problem instances.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::problem::{MheProblem, MheStage, Problem, Stage, Terminal, UftocProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Uftoc,
    Mhe,
}

/// What to generate. `horizon` is `N` for UFTOC instances and `N_mhe` for MHE ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: ProblemKind,
    pub n_x: usize,
    pub n_w: usize,
    pub n_y: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Nonzero cross-covariance between process and measurement noise.
    #[serde(default)]
    pub cross_covariance: bool,
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
}

fn default_radius() -> f64 {
    0.95
}

impl GenSpec {
    pub fn new(kind: ProblemKind, n_x: usize, n_w: usize, n_y: usize, horizon: usize, seed: u64) -> Self {
        GenSpec { kind, n_x, n_w, n_y, horizon, seed, cross_covariance: false, spectral_radius: default_radius() }
    }
}

pub fn generate_problem(spec: &GenSpec) -> Problem<f64> {
    let mut g = Gen::new(spec.seed);
    match spec.kind {
        ProblemKind::Uftoc => Problem::Uftoc(g.uftoc(spec)),
        ProblemKind::Mhe => Problem::Mhe(g.mhe(spec)),
    }
}

pub fn generate_uftoc(n_x: usize, n_w: usize, horizon: usize, seed: u64) -> UftocProblem<f64> {
    Gen::new(seed).uftoc(&GenSpec::new(ProblemKind::Uftoc, n_x, n_w, 0, horizon, seed))
}

pub fn generate_mhe(n_x: usize, n_w: usize, n_y: usize, horizon: usize, seed: u64, cross: bool) -> MheProblem<f64> {
    let mut spec = GenSpec::new(ProblemKind::Mhe, n_x, n_w, n_y, horizon, seed);
    spec.cross_covariance = cross;
    Gen::new(seed).mhe(&spec)
}

/// Random matrices and vectors from one seeded stream.
pub struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    pub fn index(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        self.rng.random_range(lo..=hi_inclusive)
    }

    pub fn matrix(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.normal())
    }

    pub fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    /// `M Mᵀ / n + shift·I`.
    pub fn spd(&mut self, n: usize, shift: f64) -> DMatrix<f64> {
        let m = self.matrix(n, n);
        let scale = 1.0 / n.max(1) as f64;
        (&m * m.transpose()) * scale + DMatrix::identity(n, n) * shift
    }

    /// Random square matrix rescaled to the given spectral radius.
    pub fn stable(&mut self, n: usize, radius: f64) -> DMatrix<f64> {
        let a = self.matrix(n, n);
        let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if rho > 1e-12 {
            a * (radius / rho)
        } else {
            a
        }
    }

    pub fn uftoc(&mut self, spec: &GenSpec) -> UftocProblem<f64> {
        let (nx, nw) = (spec.n_x, spec.n_w);
        let stages = (0..spec.horizon)
            .map(|_| Stage {
                q: self.spd(nx + nw, 0.1),
                l: self.vector(nx + nw),
                c: self.normal(),
                a: self.stable(nx, spec.spectral_radius),
                b: self.matrix(nx, nw),
                offset: self.vector(nx),
            })
            .collect();
        let terminal = Terminal { q: self.spd(nx, 0.0), l: self.vector(nx), c: self.normal() };
        UftocProblem { x0: self.vector(nx), stages, terminal }
    }

    /// Model, noise weights and measurements of a noisy rollout.
    pub fn mhe(&mut self, spec: &GenSpec) -> MheProblem<f64> {
        let (nx, nw, ny) = (spec.n_x, spec.n_w, spec.n_y);
        let x0_prior = self.vector(nx);
        let p0_prior = self.spd(nx, 0.1);
        let mut x = &x0_prior + self.correlated(&p0_prior);
        let mut stages = Vec::with_capacity(spec.horizon + 1);
        for _ in 0..=spec.horizon {
            let mut joint = self.spd(nw + ny, 0.1);
            if !spec.cross_covariance {
                joint.view_mut((0, nw), (nw, ny)).fill(0.0);
                joint.view_mut((nw, 0), (ny, nw)).fill(0.0);
            }
            let a = self.stable(nx, spec.spectral_radius);
            let b = self.matrix(nx, nw);
            let c = self.matrix(ny, nx);
            let offset = self.vector(nx) * 0.1;
            let d = self.vector(ny) * 0.1;
            let w_nom = self.vector(nw) * 0.1;
            let v_nom = self.vector(ny) * 0.1;
            let noise = self.correlated(&joint);
            let w = &w_nom + noise.rows(0, nw);
            let v = &v_nom + noise.rows(nw, ny);
            let y = &c * &x + v + &d;
            let next = &a * &x + &b * &w + &offset;
            stages.push(MheStage {
                q_w: joint.view((0, 0), (nw, nw)).into_owned(),
                q_wv: joint.view((0, nw), (nw, ny)).into_owned(),
                q_v: joint.view((nw, nw), (ny, ny)).into_owned(),
                a,
                b,
                c,
                offset,
                d,
                y,
                w_nom,
                v_nom,
            });
            x = next;
        }
        MheProblem { x0_prior, p0_prior, stages }
    }

    /// A zero-mean sample with covariance `cov`.
    fn correlated(&mut self, cov: &DMatrix<f64>) -> DVector<f64> {
        let l = Cholesky::new(cov.clone()).expect("generated covariance is SPD").l();
        l * self.vector(cov.nrows())
    }
}
