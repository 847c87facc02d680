use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mhe_riccati::bench::{run_bench, write_csv, BenchConfig, Status};
use mhe_riccati::generate::{generate_problem, GenSpec, ProblemKind};
use mhe_riccati::io::{load_problem_with_warnings, save_problem, SolutionFile};
use mhe_riccati::problem::{max_rel_diff, solution_deviation};
use mhe_riccati::{
    dense_kkt_solve, extract_mhe_solution, mhe_to_uftoc, rts_smooth, solve_serial, MheProblem, Problem, Solution,
    TreeOptions, TreeSolver, UftocProblem,
};

/// Validation passes when every method agrees with the serial solve to this relative deviation.
const VALIDATE_TOL: f64 = 1e-7;
/// Largest horizon for which `validate` includes the dense KKT solve.
const VALIDATE_DENSE_CAP: usize = 200;

#[derive(Parser)]
#[command(name = "mhe-riccati", version, about = "Serial and tree-parallel Riccati solvers for MHE Newton steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random problem file.
    Gen {
        #[arg(long, value_enum, default_value = "mhe")]
        kind: Kind,
        #[arg(long, default_value_t = 4)]
        nx: usize,
        #[arg(long, default_value_t = 4)]
        nw: usize,
        #[arg(long, default_value_t = 4)]
        ny: usize,
        /// `N` for uftoc, `N_mhe` for mhe.
        #[arg(long, default_value_t = 32)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Correlated process and measurement noise (mhe only).
        #[arg(long)]
        cross: bool,
        #[arg(long, default_value_t = 0.95)]
        spectral_radius: f64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Solve a problem file with one method.
    Solve {
        #[arg(long, value_enum, default_value = "serial")]
        method: Method,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Batch length of the tree solver.
        #[arg(long, default_value_t = 2)]
        ns: usize,
        #[arg(long, env = "MHE_RICCATI_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Solve with every applicable method and report the largest deviation from the serial solve.
    Validate {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        ns: usize,
        #[arg(long, env = "MHE_RICCATI_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Run a scaling benchmark and write CSV.
    Bench {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uftoc,
    Mhe,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Serial,
    Parallel,
    Dense,
    Rts,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Serial => "serial",
            Method::Parallel => "parallel",
            Method::Dense => "dense",
            Method::Rts => "rts",
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &PathBuf) -> anyhow::Result<Problem<f64>> {
    let (p, warnings) = load_problem_with_warnings(path).with_context(|| format!("reading {}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(p)
}

fn as_uftoc(p: &Problem<f64>) -> anyhow::Result<UftocProblem<f64>> {
    Ok(match p {
        Problem::Uftoc(u) => u.clone(),
        Problem::Mhe(m) => mhe_to_uftoc(m)?,
    })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Gen { kind, nx, nw, ny, horizon, seed, cross, spectral_radius, output } => {
            let kind = match kind {
                Kind::Uftoc => ProblemKind::Uftoc,
                Kind::Mhe => ProblemKind::Mhe,
            };
            if nx == 0 || nw == 0 || (kind == ProblemKind::Mhe && ny == 0) {
                bail!("dimensions must be positive");
            }
            let mut spec = GenSpec::new(kind, nx, nw, ny, horizon, seed);
            spec.cross_covariance = cross;
            spec.spectral_radius = spectral_radius;
            save_problem(&generate_problem(&spec), &output)?;
        }
        Command::Solve { method, input, output, ns, workers } => {
            let problem = load(&input)?;
            let mut file = SolutionFile::new(method.name());
            if method == Method::Rts {
                let Problem::Mhe(m) = &problem else { bail!("rts needs an mhe problem") };
                file = file.with_states(&rts_smooth(m)?);
            } else {
                let qp = as_uftoc(&problem)?;
                let s = match method {
                    Method::Serial => solve_serial(&qp)?,
                    Method::Dense => dense_kkt_solve(&qp)?,
                    _ => {
                        let solver = TreeSolver::new(TreeOptions { batch_len: ns, workers, ..Default::default() })?;
                        let (s, stats) = solver.solve(&qp)?;
                        file.stats = Some(stats);
                        s
                    }
                };
                if let Problem::Mhe(m) = &problem {
                    file = file.with_estimate(&extract_mhe_solution(&s, m)?);
                }
                file = file.with_solution(&s);
            }
            file.save(&output)?;
        }
        Command::Validate { input, ns, workers } => return validate(&load(&input)?, ns, workers),
        Command::Bench { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: BenchConfig = serde_json::from_str(&text).context("parsing bench config")?;
            if cfg.repetitions < 3 {
                bail!("repetitions must be at least 3");
            }
            let rows = run_bench(&cfg)?;
            write_csv(&rows, &out)?;
            let bad = rows.iter().filter(|r| matches!(r.status, Status::Failed | Status::Error)).count();
            eprintln!("{} rows written to {} ({bad} failed)", rows.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(problem: &Problem<f64>, ns: usize, workers: usize) -> anyhow::Result<ExitCode> {
    let qp = as_uftoc(problem)?;
    let reference: Solution<f64> = solve_serial(&qp).context("serial solve")?;
    let mut worst = 0.0_f64;
    let mut report = |name: &str, dev: anyhow::Result<f64>| match dev {
        Ok(d) => {
            println!("{name:<9} max relative deviation {d:.3e}");
            worst = worst.max(d);
        }
        Err(e) => {
            println!("{name:<9} error: {e:#}");
            worst = f64::INFINITY;
        }
    };

    let solver = TreeSolver::new(TreeOptions { batch_len: ns, workers, ..Default::default() })?;
    report("parallel", solver.solve(&qp).map(|(s, _)| solution_deviation(&s, &reference)).map_err(Into::into));
    if qp.horizon() <= VALIDATE_DENSE_CAP {
        report("dense", dense_kkt_solve(&qp).map(|s| solution_deviation(&s, &reference)).map_err(Into::into));
    } else {
        println!("dense     skipped (N > {VALIDATE_DENSE_CAP})");
    }
    if let Problem::Mhe(m) = problem {
        rts_check(m, &reference, &mut report);
    }

    println!("max deviation {worst:.3e} (tolerance {VALIDATE_TOL:.0e})");
    Ok(if worst <= VALIDATE_TOL { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn rts_check(m: &MheProblem<f64>, reference: &Solution<f64>, report: &mut impl FnMut(&str, anyhow::Result<f64>)) {
    if m.has_cross_covariance() {
        println!("rts       skipped (correlated noise)");
        return;
    }
    let dev = (|| {
        let est = extract_mhe_solution(reference, m)?;
        Ok(max_rel_diff(&rts_smooth(m)?, &est.x))
    })();
    report("rts", dev);
}
