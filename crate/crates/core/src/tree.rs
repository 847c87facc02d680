//! Tree-parallel Riccati solver.
//!
//! The horizon is split into batches that are reduced independently into
//! stages of a shorter master problem; this repeats level by level until the
//! horizon is at most the batch length. The top problem is solved serially
//! and its solution is pushed back down, each level solving its batches
//! independently from data sent by the parent. Levels are separated by a
//! barrier; batches within a level run on a worker pool.

use std::ops::Range;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolveError};
use crate::linalg::GSolveMode;
use crate::problem::{Solution, Stage, UftocProblem};
use crate::reduction::{expand_subproblem, expand_with_policy, reduce_stages, BatchCache, ReducedStage};
use crate::riccati::{solve_stages, CostToGo, RiccatiSolve};
use crate::scalar::Scalar;

/// One reduction level: how the level's horizon is split into batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanLevel {
    /// Horizon of the problem at this level.
    pub horizon: usize,
    /// Batch ranges in this level's stage indices.
    pub batches: Vec<Range<usize>>,
    /// The same batches in original time indices.
    pub spans: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreePlan {
    pub horizon: usize,
    pub batch_len: usize,
    /// Reduction levels, bottom first. Empty when the problem is solved directly.
    pub levels: Vec<PlanLevel>,
    pub top_horizon: usize,
}

impl TreePlan {
    /// Number of reduction levels `m`.
    pub fn reduction_levels(&self) -> usize {
        self.levels.len()
    }

    /// Upward phases, the top solve and downward phases.
    pub fn sequential_depth(&self) -> usize {
        2 * self.levels.len() + 1
    }

    /// Batch at level `level + 1` (or the top problem, index 0) that owns batch `batch`.
    pub fn parent_of(&self, level: usize, batch: usize) -> usize {
        match self.levels.get(level + 1) {
            Some(next) => next.batches.iter().position(|r| r.contains(&batch)).expect("plan tiles every level"),
            None => 0,
        }
    }

    /// Batches at `level − 1` whose reduced stages form batch `batch` of `level`.
    pub fn children_of(&self, level: usize, batch: usize) -> Range<usize> {
        assert!(level > 0, "level-0 batches have no children");
        self.levels[level].batches[batch].clone()
    }

    /// Messages sent to parents during the upward pass.
    pub fn upward_messages(&self) -> usize {
        self.levels.iter().map(|l| l.batches.len()).sum()
    }
}

/// Splits `[0, horizon)` into batches of `batch_len` stages, the last batch
/// absorbing the remainder, and repeats on the number of batches until the
/// horizon is at most `batch_len`.
pub fn plan_tree(horizon: usize, batch_len: usize) -> Result<TreePlan> {
    if horizon == 0 {
        return Err(SolveError::InvalidHorizon(horizon));
    }
    if batch_len < 2 {
        return Err(SolveError::InvalidBatchLength(batch_len));
    }
    let mut spans: Vec<Range<usize>> = (0..horizon).map(|t| t..t + 1).collect();
    let mut h = horizon;
    let mut levels = Vec::new();
    while h > batch_len {
        let count = h / batch_len;
        let batches: Vec<Range<usize>> = (0..count)
            .map(|j| {
                let start = j * batch_len;
                let end = if j + 1 == count { h } else { start + batch_len };
                start..end
            })
            .collect();
        let level_spans: Vec<Range<usize>> =
            batches.iter().map(|r| spans[r.start].start..spans[r.end - 1].end).collect();
        levels.push(PlanLevel { horizon: h, batches, spans: level_spans.clone() });
        spans = level_spans;
        h = count;
    }
    Ok(TreePlan { horizon, batch_len, levels, top_horizon: h })
}

/// How level solutions are expanded in the downward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExpansionMode {
    /// Re-run the full Riccati recursion on each batch with the parent's
    /// `(x̂, P̂, Ψ̂, ĉ)`.
    #[default]
    Rerun,
    /// Roll out the cached preliminary policy using the parent's `(x̂, ŵ, λ̂)`.
    CachedPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub batch_len: usize,
    pub workers: usize,
    pub expansion: ExpansionMode,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { batch_len: 2, workers: 1, expansion: ExpansionMode::Rerun }
    }
}

/// Instrumentation of one tree solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub reduction_levels: usize,
    pub top_horizon: usize,
    /// Longest batch per reduction level, bottom first.
    pub max_batch_len: Vec<usize>,
    /// `2m + 1`.
    pub sequential_depth: usize,
    pub messages_up: usize,
    pub messages_down: usize,
    /// Stage iterations on the critical path: for every phase, the largest
    /// number of stage iterations performed by one task.
    pub critical_path: usize,
    pub upward_wall_time_s: Vec<f64>,
    pub top_wall_time_s: f64,
    pub downward_wall_time_s: Vec<f64>,
    pub workers: usize,
}

impl TreeStats {
    pub fn messages(&self) -> usize {
        self.messages_up + self.messages_down
    }
}

/// Reduced stages and caches of one level.
#[derive(Debug, Clone)]
pub struct LevelReduction<T: Scalar> {
    pub reduced: Vec<ReducedStage<T>>,
    pub caches: Vec<BatchCache<T>>,
    /// The master problem assembled from `reduced`.
    pub master: UftocProblem<T>,
}

#[derive(Debug, Clone)]
pub struct UpwardPass<T: Scalar> {
    pub levels: Vec<LevelReduction<T>>,
    stats: PhaseStats,
}

#[derive(Debug, Clone, Default)]
struct PhaseStats {
    critical: usize,
    wall: Vec<f64>,
    messages: usize,
}

/// What a parent sends to one child batch.
#[derive(Debug, Clone)]
struct ParentMessage<T: Scalar> {
    x_hat: DVector<T>,
    x_next: DVector<T>,
    terminal: Option<CostToGo<T>>,
    w_hat: Option<DVector<T>>,
    lambda_end: Option<DVector<T>>,
}

/// Solution of a level problem, stitched from its batches.
struct LevelSolution<T: Scalar> {
    x: Vec<DVector<T>>,
    w: Vec<DVector<T>>,
    lambda: Vec<DVector<T>>,
    cost_to_go: Option<Vec<CostToGo<T>>>,
    cost: T,
}

impl<T: Scalar> LevelSolution<T> {
    fn from_single(r: RiccatiSolve<T>) -> Self {
        let ctg = collect_cost_to_go(&r);
        LevelSolution {
            cost: r.solution.cost,
            x: r.solution.x,
            w: r.solution.w,
            lambda: r.solution.lambda,
            cost_to_go: Some(ctg),
        }
    }

    fn message(&self, i: usize, mode: ExpansionMode) -> ParentMessage<T> {
        let x_hat = self.x[i].clone();
        let x_next = self.x[i + 1].clone();
        match mode {
            ExpansionMode::Rerun => ParentMessage {
                x_hat,
                x_next,
                terminal: Some(self.cost_to_go.as_ref().expect("rerun mode keeps cost-to-go")[i + 1].clone()),
                w_hat: None,
                lambda_end: None,
            },
            ExpansionMode::CachedPolicy => ParentMessage {
                x_hat,
                x_next,
                terminal: None,
                w_hat: Some(self.w[i].clone()),
                lambda_end: Some(self.lambda[i + 1].clone()),
            },
        }
    }
}

fn collect_cost_to_go<T: Scalar>(r: &RiccatiSolve<T>) -> Vec<CostToGo<T>> {
    r.factorization
        .p
        .iter()
        .zip(&r.backward.psi)
        .zip(&r.backward.c_bar)
        .map(|((p, psi), c)| CostToGo { p: p.clone(), psi: psi.clone(), c: *c })
        .collect()
}

/// Relative boundary gap tolerated between a batch's end state and the parent's state.
pub const BOUNDARY_TOL: f64 = 1e-6;

fn level_mode(level: usize) -> GSolveMode {
    if level == 0 {
        GSolveMode::Strict
    } else {
        GSolveMode::PseudoInverse
    }
}

/// Tree solver bound to a worker pool.
pub struct TreeSolver {
    options: TreeOptions,
    pool: rayon::ThreadPool,
}

impl TreeSolver {
    pub fn new(options: TreeOptions) -> Result<Self> {
        if options.workers == 0 {
            return Err(SolveError::InvalidWorkerCount);
        }
        if options.batch_len < 2 {
            return Err(SolveError::InvalidBatchLength(options.batch_len));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .thread_name(|i| format!("riccati-tree-{i}"))
            .build()
            .map_err(|e| SolveError::WorkerPool(e.to_string()))?;
        Ok(TreeSolver { options, pool })
    }

    pub fn options(&self) -> &TreeOptions {
        &self.options
    }

    fn map_batches<I, O, F>(&self, items: &[I], f: F) -> Result<Vec<O>>
    where
        I: Sync,
        O: Send,
        F: Fn(usize, &I) -> Result<O> + Sync + Send,
    {
        self.pool.install(|| items.par_iter().enumerate().map(|(i, it)| f(i, it)).collect())
    }

    /// Reduces every level of `plan`, bottom first.
    pub fn upward_pass<T: Scalar>(&self, p: &UftocProblem<T>, plan: &TreePlan) -> Result<UpwardPass<T>> {
        p.check_dims()?;
        let mut levels: Vec<LevelReduction<T>> = Vec::with_capacity(plan.levels.len());
        let mut stats = PhaseStats::default();
        for (k, level) in plan.levels.iter().enumerate() {
            let started = Instant::now();
            let stages: &[Stage<T>] = if k == 0 { &p.stages } else { &levels[k - 1].master.stages };
            let mode = level_mode(k);
            let out = self.map_batches(&level.batches, |_, r| reduce_stages(&stages[r.clone()], mode))?;
            stats.critical += out.iter().map(|(_, c)| c.stage_iterations).max().unwrap_or(0);
            stats.messages += out.len();
            let (reduced, caches): (Vec<_>, Vec<_>) = out.into_iter().unzip();
            let master = UftocProblem {
                x0: p.x0.clone(),
                stages: reduced.iter().map(ReducedStage::to_stage).collect(),
                terminal: p.terminal.clone(),
            };
            levels.push(LevelReduction { reduced, caches, master });
            stats.wall.push(started.elapsed().as_secs_f64());
        }
        Ok(UpwardPass { levels, stats })
    }

    /// Solves the top problem and propagates the solution down to level 0.
    pub fn downward_pass<T: Scalar>(
        &self,
        p: &UftocProblem<T>,
        plan: &TreePlan,
        up: &UpwardPass<T>,
    ) -> Result<(Solution<T>, TreeStats)> {
        let m = plan.levels.len();
        if up.levels.len() != m {
            return Err(crate::error::dim_err("upward pass", "does not match the tree plan"));
        }
        let mode = self.options.expansion;
        let top_problem = if m == 0 { p } else { &up.levels[m - 1].master };
        let started = Instant::now();
        let top =
            solve_stages(&top_problem.stages, &top_problem.x0, &CostToGo::terminal_of(top_problem), level_mode(m))?;
        let top_wall = started.elapsed().as_secs_f64();
        let mut critical = up.stats.critical + top.stage_iterations;
        let top_cost = top.solution.cost;
        let mut current = LevelSolution::from_single(top);

        let mut down_wall = Vec::with_capacity(m);
        let mut messages_down = 0;
        for k in (0..m).rev() {
            let started = Instant::now();
            let level = &plan.levels[k];
            let stages: &[Stage<T>] = if k == 0 { &p.stages } else { &up.levels[k - 1].master.stages };
            let messages: Vec<ParentMessage<T>> = (0..level.batches.len()).map(|i| current.message(i, mode)).collect();
            messages_down += messages.len();
            let caches = &up.levels[k].caches;
            let solves = self.map_batches(&level.batches, |i, r| {
                let batch = &stages[r.clone()];
                let msg = &messages[i];
                let (solution, ctg) = match mode {
                    ExpansionMode::Rerun => {
                        let terminal = msg.terminal.as_ref().expect("rerun message carries terminal data");
                        let solved = expand_subproblem(batch, &msg.x_hat, terminal, level_mode(k))?;
                        let ctg = collect_cost_to_go(&solved);
                        (solved.solution, Some(ctg))
                    }
                    ExpansionMode::CachedPolicy => {
                        let w_hat = msg.w_hat.as_ref().expect("policy message carries w_hat");
                        let lam = msg.lambda_end.as_ref().expect("policy message carries lambda");
                        (expand_with_policy(batch, &caches[i], &msg.x_hat, w_hat, lam)?, None)
                    }
                };
                let end = solution.x.last().expect("non-empty trajectory");
                let gap = (end - &msg.x_next).amax();
                let scale = T::one() + msg.x_next.amax();
                if gap > T::rel_tol(BOUNDARY_TOL, 1e4) * scale {
                    return Err(SolveError::BoundaryMismatch { batch: i, gap: gap.as_f64() });
                }
                Ok((solution, ctg))
            })?;
            critical += level.batches.iter().map(|r| r.len()).max().unwrap_or(0);
            current = stitch(level, solves, current.cost);
            down_wall.push(started.elapsed().as_secs_f64());
        }

        let cost = match mode {
            ExpansionMode::Rerun if m > 0 => current.cost,
            _ => top_cost,
        };
        let stats = TreeStats {
            reduction_levels: m,
            top_horizon: plan.top_horizon,
            max_batch_len: plan.levels.iter().map(|l| l.batches.iter().map(|r| r.len()).max().unwrap_or(0)).collect(),
            sequential_depth: plan.sequential_depth(),
            messages_up: up.stats.messages,
            messages_down,
            critical_path: critical,
            upward_wall_time_s: up.stats.wall.clone(),
            top_wall_time_s: top_wall,
            downward_wall_time_s: down_wall,
            workers: self.options.workers,
        };
        Ok((Solution { x: current.x, w: current.w, lambda: current.lambda, cost }, stats))
    }

    pub fn solve<T: Scalar>(&self, p: &UftocProblem<T>) -> Result<(Solution<T>, TreeStats)> {
        p.check_dims()?;
        let plan = plan_tree(p.horizon(), self.options.batch_len)?;
        let up = self.upward_pass(p, &plan)?;
        self.downward_pass(p, &plan, &up)
    }
}

type BatchSolve<T> = (Solution<T>, Option<Vec<CostToGo<T>>>);

/// Concatenates batch solutions; every batch contributes its own states
/// except the last one, which is the next batch's (parent-provided) start.
fn stitch<T: Scalar>(level: &PlanLevel, solves: Vec<BatchSolve<T>>, parent_cost: T) -> LevelSolution<T> {
    let h = level.horizon;
    let mut x = Vec::with_capacity(h + 1);
    let mut w = Vec::with_capacity(h);
    let mut lambda = Vec::with_capacity(h + 1);
    let mut ctg: Option<Vec<CostToGo<T>>> = Some(Vec::with_capacity(h + 1));
    let count = solves.len();
    let mut cost = parent_cost;
    for (i, (s, c)) in solves.into_iter().enumerate() {
        let last = i + 1 == count;
        let keep = if last { s.x.len() } else { s.x.len() - 1 };
        if i == 0 {
            cost = s.cost;
        }
        x.extend(s.x.into_iter().take(keep));
        lambda.extend(s.lambda.into_iter().take(keep));
        w.extend(s.w);
        match (ctg.as_mut(), c) {
            (Some(acc), Some(c)) => acc.extend(c.into_iter().take(keep)),
            _ => ctg = None,
        }
    }
    LevelSolution { x, w, lambda, cost_to_go: ctg, cost }
}

/// Convenience wrapper building a [`TreeSolver`] for one solve.
pub fn solve_parallel<T: Scalar>(
    p: &UftocProblem<T>,
    batch_len: usize,
    workers: usize,
) -> Result<(Solution<T>, TreeStats)> {
    TreeSolver::new(TreeOptions { batch_len, workers, expansion: ExpansionMode::Rerun })?.solve(p)
}
