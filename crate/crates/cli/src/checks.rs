use anyhow::Result;
use mdts_core::search::LevelWidth;
use mdts_core::verify::{self, TestReport};

use crate::config::{RewardKind, RunConfig};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    Thm1,
    Thm2,
    Thm3,
    Fhs,
    Variance,
    All,
}

impl Check {
    fn expand(self) -> Vec<Check> {
        match self {
            Check::All => vec![Check::Thm1, Check::Fhs, Check::Thm2, Check::Thm3, Check::Variance],
            c => vec![c],
        }
    }
}

/// Sample sizes for the checks; `quick` divides them by ten.
struct Budget {
    scale: usize,
}

impl Budget {
    fn n(&self, full: usize) -> usize {
        (full / self.scale).max(1)
    }
}

fn doubled(w: &LevelWidth) -> LevelWidth {
    match w {
        LevelWidth::Constant(m) => LevelWidth::Constant(2 * m),
        LevelWidth::PerLevel(v) => LevelWidth::PerLevel(v.iter().map(|m| 2 * m).collect()),
    }
}

/// Runs the selected checks in a fixed order and returns one report each.
pub fn run_checks(check: Check, task: &Task, cfg: &RunConfig, seed: u64, quick: bool) -> Result<Vec<TestReport>> {
    let budget = Budget { scale: if quick { 10 } else { 1 } };
    let mut out = Vec::new();
    for c in check.expand() {
        match c {
            Check::Thm1 => {
                for (n, h, b) in [(5, 0.01, 3), (10, 0.01, 4), (10, 0.05, 4)] {
                    out.push(verify::check_expected_evals(n, h, b, budget.n(50_000), 0.03, seed)?);
                }
            }
            Check::Fhs => {
                for n in [1, 3, 8] {
                    out.extend(verify::check_fhs_equivalence(n, 1e-3, budget.n(20_000), 1e-3, seed)?);
                    // A coarse grid must be told apart from FHS.
                    let mut control = verify::check_fhs_equivalence(n, 0.5, budget.n(20_000), 1e-3, seed)?.swap_remove(0);
                    control.name = control.name.replacen("fhs_equiv_", "fhs_control_", 1);
                    control.rule = "p <= threshold".into();
                    control.pass = !control.pass;
                    out.push(control);
                }
            }
            Check::Thm2 => {
                out.push(verify::check_resub_gap(budget.n(500), 6, 5, seed)?);
                out.push(verify::check_brute_force_mc(20, budget.n(1_000_000), 6, 5, 4.0, seed)?);
                if cfg.reward.kind != RewardKind::TargetMatch {
                    let vocab = task.vocab();
                    let real = vocab.real_tokens() as f64;
                    let len = (1..=task.len.min(6)).rev().find(|&l| real.powi(l as i32) <= 1e5).unwrap_or(1);
                    let mut r = verify::check_resub_gap_for(&*task.reward, vocab, len, budget.n(200), seed)?;
                    r.name = format!("{}_configured_reward", r.name);
                    out.push(r);
                }
            }
            Check::Thm3 => {
                let base = cfg.treasure.search_config();
                let m = &cfg.treasure.tree_width;
                out.push(verify::check_monotonicity(
                    task.len,
                    &*task.denoiser,
                    &task.sched,
                    &*task.reward,
                    &base,
                    m,
                    &doubled(m),
                    budget.n(200),
                    seed,
                )?);
            }
            Check::Variance => {
                out.push(verify::check_variance(
                    &*task.denoiser,
                    &task.sched,
                    &*task.reward,
                    task.len,
                    10,
                    budget.n(1000),
                    seed,
                )?);
            }
            Check::All => unreachable!("expanded above"),
        }
    }
    Ok(out)
}
