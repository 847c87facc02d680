//! Scaling benchmark producing one CSV row per (method, N, seed).

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::generate::{Gen, GenSpec, ProblemKind};
use crate::io::FileError;
use crate::mhe::{extract_mhe_solution, mhe_to_uftoc};
use crate::oracles::{dense_kkt_solve, rts_smooth};
use crate::problem::{kkt_residual, residual_bounds, Solution, UftocProblem};
use crate::riccati::solve_serial;
use crate::tree::{TreeOptions, TreeSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Serial,
    Parallel,
    Dense,
    Rts,
}

/// Benchmark configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_x: usize,
    pub n_w: usize,
    pub n_y: usize,
    /// QP horizons `N`; each instance is an MHE problem with `N_mhe = N − 2`.
    #[serde(rename = "N_list")]
    pub horizons: Vec<usize>,
    #[serde(rename = "N_s", default = "default_batch_len")]
    pub batch_len: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Dense KKT solves are skipped above this horizon.
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
    #[serde(default)]
    pub cross_covariance: bool,
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
}

fn default_radius() -> f64 {
    0.95
}

fn default_batch_len() -> usize {
    2
}
fn default_workers() -> usize {
    1
}
fn default_repetitions() -> usize {
    3
}
fn default_dense_cap() -> usize {
    200
}

/// Row of the benchmark CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub n_x: usize,
    pub n_w: usize,
    pub n_y: usize,
    #[serde(rename = "N_s")]
    pub batch_len: usize,
    pub workers: usize,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
    pub critical_path: Option<usize>,
    pub messages: Option<usize>,
    pub max_residual: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Solved, but the residual is outside the accepted bounds.
    Failed,
    /// The method returned an error.
    Error,
    Skipped,
}

pub const CSV_HEADER: &str =
    "method,N,n_x,n_w,n_y,N_s,workers,seed,wall_time_s,critical_path,messages,max_residual,status";

/// Median wall time of `reps` runs after one warm-up run, and the last result.
fn timed<R>(reps: usize, mut f: impl FnMut() -> R) -> (f64, R) {
    let _ = f();
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let r = f();
        times.push(t.elapsed().as_secs_f64());
        last = Some(r);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    (times[times.len() / 2], last.expect("at least one repetition"))
}

fn residual_status(p: &UftocProblem<f64>, s: &Solution<f64>) -> (Option<f64>, Status) {
    match kkt_residual(p, s) {
        Ok(r) => {
            let bounds = residual_bounds(p);
            let ok = r.stationarity <= bounds.stationarity && r.primal <= bounds.primal;
            (Some(r.stationarity.max(r.primal)), if ok { Status::Ok } else { Status::Failed })
        }
        Err(_) => (None, Status::Error),
    }
}

/// Accepted relative deviation of smoothed states from the QP estimates.
pub const RTS_TOL: f64 = 1e-7;

pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRecord>, crate::SolveError> {
    let solver =
        TreeSolver::new(TreeOptions { batch_len: config.batch_len, workers: config.workers, ..Default::default() })?;
    let mut rows = Vec::new();
    for &n in &config.horizons {
        for &seed in &config.seeds {
            let row = |method, status| BenchRecord {
                method,
                horizon: n,
                n_x: config.n_x,
                n_w: config.n_w,
                n_y: config.n_y,
                batch_len: config.batch_len,
                workers: if method == Method::Parallel { config.workers } else { 1 },
                seed,
                wall_time_s: None,
                critical_path: None,
                messages: None,
                max_residual: None,
                status,
            };
            if n < 2 {
                rows.extend(config.methods.iter().map(|&m| row(m, Status::Error)));
                continue;
            }
            let mut spec = GenSpec::new(ProblemKind::Mhe, config.n_x, config.n_w, config.n_y, n - 2, seed);
            spec.cross_covariance = config.cross_covariance;
            spec.spectral_radius = config.spectral_radius;
            let mhe = Gen::new(seed).mhe(&spec);
            let p = match mhe_to_uftoc(&mhe) {
                Ok(p) => p,
                Err(_) => {
                    rows.extend(config.methods.iter().map(|&m| row(m, Status::Error)));
                    continue;
                }
            };
            let reference = solve_serial(&p).ok().and_then(|s| extract_mhe_solution(&s, &mhe).ok());
            for &method in &config.methods {
                let mut r = row(method, Status::Ok);
                match method {
                    Method::Serial => {
                        let (t, out) = timed(config.repetitions, || solve_serial(&p));
                        r.wall_time_s = Some(t);
                        r.critical_path = Some(p.horizon());
                        r.messages = Some(0);
                        match out {
                            Ok(s) => (r.max_residual, r.status) = residual_status(&p, &s),
                            Err(_) => r.status = Status::Error,
                        }
                    }
                    Method::Parallel => {
                        let (t, out) = timed(config.repetitions, || solver.solve(&p));
                        r.wall_time_s = Some(t);
                        match out {
                            Ok((s, stats)) => {
                                r.critical_path = Some(stats.critical_path);
                                r.messages = Some(stats.messages());
                                (r.max_residual, r.status) = residual_status(&p, &s);
                            }
                            Err(_) => r.status = Status::Error,
                        }
                    }
                    Method::Dense if n > config.dense_cap => r.status = Status::Skipped,
                    Method::Dense => {
                        let (t, out) = timed(config.repetitions, || dense_kkt_solve(&p));
                        r.wall_time_s = Some(t);
                        match out {
                            Ok(s) => (r.max_residual, r.status) = residual_status(&p, &s),
                            Err(_) => r.status = Status::Error,
                        }
                    }
                    Method::Rts if mhe.has_cross_covariance() => r.status = Status::Skipped,
                    Method::Rts => {
                        let (t, out) = timed(config.repetitions, || rts_smooth(&mhe));
                        r.wall_time_s = Some(t);
                        match (out, &reference) {
                            (Ok(states), Some(est)) => {
                                let dev = crate::problem::max_rel_diff(&states, &est.x);
                                r.max_residual = Some(dev);
                                r.status = if dev <= RTS_TOL { Status::Ok } else { Status::Failed };
                            }
                            _ => r.status = Status::Error,
                        }
                    }
                }
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRecord], path: &Path) -> Result<(), FileError> {
    let text = csv_string(rows)?;
    crate::io::write_text(path, &text)
}

pub fn csv_string(rows: &[BenchRecord]) -> Result<String, FileError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| FileError::Schema { field: "csv".into(), message: e.to_string() })?;
    }
    let body = w.into_inner().map_err(|e| FileError::Schema { field: "csv".into(), message: e.to_string() })?;
    Ok(format!("{CSV_HEADER}\n{}", String::from_utf8(body).expect("csv writes UTF-8")))
}

pub fn read_csv(text: &str) -> Result<Vec<BenchRecord>, FileError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.deserialize()
        .collect::<Result<Vec<BenchRecord>, _>>()
        .map_err(|e| FileError::Schema { field: "csv".into(), message: e.to_string() })
}
