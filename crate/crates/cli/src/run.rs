use std::time::Instant;

use anyhow::{bail, Result};
use mdts_core::baselines::{base_sample, best_of_n, fk_steer, FkParams};
use mdts_core::search::{treasure_search, LevelWidth};
use mdts_core::verify::dist_n;
use mdts_core::{NfeLedger, Sequence};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::task::Task;

/// One finished run. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub nfe_per_step: f64,
    pub nfe_total: u64,
    pub seed: u64,
    pub final_reward: f64,
    pub dist1: Option<f64>,
    pub dist2: Option<f64>,
    pub dist3: Option<f64>,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: usize,
    pub method: String,
    pub nfe_per_step: f64,
    pub nfe_total: u64,
    pub seed: u64,
    pub final_reward: f64,
    pub dist1: Option<f64>,
    pub dist2: Option<f64>,
    pub dist3: Option<f64>,
    pub runtime_ms: u64,
}

impl SweepRow {
    fn new(axis: SweepAxis, value: usize, r: ResultRow) -> Self {
        SweepRow {
            axis: axis.name().to_string(),
            value,
            method: r.method,
            nfe_per_step: r.nfe_per_step,
            nfe_total: r.nfe_total,
            seed: r.seed,
            final_reward: r.final_reward,
            dist1: r.dist1,
            dist2: r.dist2,
            dist3: r.dist3,
            runtime_ms: r.runtime_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seed: u64,
    /// Masked positions left in the parents expanded at this step.
    pub step: usize,
    pub parents: usize,
    pub pool: usize,
    pub pool_max: f64,
    pub pool_mean: f64,
}

fn diversity(seq: &Sequence, n: usize) -> Option<f64> {
    (seq.len() >= n).then(|| dist_n(std::slice::from_ref(seq), n).ok()).flatten()
}

fn execute(task: &Task, cfg: &RunConfig, seed: u64) -> Result<(Sequence, f64, NfeLedger)> {
    let (den, rew, sched, len) = (&*task.denoiser, &*task.reward, &task.sched, task.len);
    Ok(match cfg.method {
        Method::Base => {
            let o = base_sample(len, den, sched, rew, seed)?;
            (o.best, o.best_score, o.ledger)
        }
        Method::Bon => {
            let o = best_of_n(cfg.bon.n, len, den, sched, rew, seed)?;
            (o.best, o.best_score, o.ledger)
        }
        Method::Fk => {
            let params = FkParams {
                particles: cfg.fk.particles,
                lambda: cfg.fk.lambda,
                ess_frac: cfg.fk.ess_frac,
            };
            let o = fk_steer(&params, len, den, sched, rew, seed)?.outcome;
            (o.best, o.best_score, o.ledger)
        }
        Method::Treasure => {
            let o = treasure_search(len, den, sched, rew, &cfg.treasure.search_config(), seed)?;
            (o.best, o.best_score, o.ledger)
        }
    })
}

pub fn run_one(task: &Task, cfg: &RunConfig, seed: u64) -> Result<ResultRow> {
    let start = Instant::now();
    let (best, reward, ledger) = execute(task, cfg, seed)?;
    let runtime_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
    Ok(ResultRow {
        method: cfg.method.name().to_string(),
        nfe_per_step: ledger.evals() as f64 / task.len as f64,
        nfe_total: ledger.evals(),
        seed,
        final_reward: reward,
        dist1: diversity(&best, 1),
        dist2: diversity(&best, 2),
        dist3: diversity(&best, 3),
        runtime_ms,
    })
}

/// Runs every seed in parallel. Results come back in seed-list order; the
/// first failure ends the list, with the rows before it kept.
pub fn run_all(task: &Task, cfg: &RunConfig) -> (Vec<ResultRow>, Option<anyhow::Error>) {
    let results: Vec<Result<ResultRow>> = cfg.seeds.par_iter().map(|&s| run_one(task, cfg, s)).collect();
    split_at_failure(results)
}

pub fn split_at_failure<T>(results: Vec<Result<T>>) -> (Vec<T>, Option<anyhow::Error>) {
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => return (rows, Some(e)),
        }
    }
    (rows, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    #[value(name = "tree_width")]
    TreeWidth,
    #[value(name = "beam_width")]
    BeamWidth,
    #[value(name = "groups")]
    Groups,
    #[value(name = "N")]
    N,
    #[value(name = "particles")]
    Particles,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TreeWidth => "tree_width",
            SweepAxis::BeamWidth => "beam_width",
            SweepAxis::Groups => "groups",
            SweepAxis::N => "N",
            SweepAxis::Particles => "particles",
        }
    }

    fn method(self) -> Method {
        match self {
            SweepAxis::TreeWidth | SweepAxis::BeamWidth | SweepAxis::Groups => Method::Treasure,
            SweepAxis::N => Method::Bon,
            SweepAxis::Particles => Method::Fk,
        }
    }

    fn apply(self, cfg: &mut RunConfig, v: usize) {
        match self {
            SweepAxis::TreeWidth => cfg.treasure.tree_width = LevelWidth::Constant(v),
            SweepAxis::BeamWidth => cfg.treasure.beam_width = LevelWidth::Constant(v),
            SweepAxis::Groups => cfg.treasure.groups = v,
            SweepAxis::N => cfg.bon.n = v,
            SweepAxis::Particles => cfg.fk.particles = v,
        }
    }
}

/// Cross product of `values` and seeds, value-major. Seeds are shared
/// across values, so rows with the same seed are coupled runs.
pub fn sweep(task: &Task, cfg: &RunConfig, axis: SweepAxis, values: &[usize]) -> Result<(Vec<SweepRow>, Option<anyhow::Error>)> {
    if cfg.method != axis.method() {
        bail!(
            "sweep axis {} is not valid for method {}; it needs method = {}",
            axis.name(),
            cfg.method.name(),
            axis.method().name()
        );
    }
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    if let Some(v) = values.iter().find(|&&v| v == 0) {
        bail!("sweep value {v} for {} must be at least 1", axis.name());
    }
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            axis.apply(&mut c, v);
            c
        })
        .collect();
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<SweepRow>> = jobs
        .par_iter()
        .map(|&(i, s)| run_one(task, &configs[i], s).map(|r| SweepRow::new(axis, values[i], r)))
        .collect();
    Ok(split_at_failure(results))
}

/// Per-level pool statistics of a tree-search run, one group per seed.
pub fn trajectory(task: &Task, cfg: &RunConfig) -> Result<(Vec<TrajectoryRow>, Option<anyhow::Error>)> {
    if cfg.method != Method::Treasure {
        bail!("method: trajectory needs method = treasure, got {}", cfg.method.name());
    }
    let search = cfg.treasure.search_config();
    let results: Vec<Result<Vec<TrajectoryRow>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = treasure_search(task.len, &*task.denoiser, &task.sched, &*task.reward, &search, seed)?;
            Ok(out
                .trajectory
                .iter()
                .map(|s| TrajectoryRow {
                    seed,
                    step: s.level,
                    parents: s.parents,
                    pool: s.pool,
                    pool_max: s.pool_max,
                    pool_mean: s.pool_mean,
                })
                .collect())
        })
        .collect();
    let (groups, err) = split_at_failure(results);
    Ok((groups.into_iter().flatten().collect(), err))
}
