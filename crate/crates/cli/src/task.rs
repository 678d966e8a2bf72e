use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mdts_bridge::{BridgeClient, RemoteDenoiser, RemoteReward};
use mdts_core::mdlm::{PlantedDenoiser, RandomTableDenoiser};
use mdts_core::rewards::{LexiconReward, TargetMatchReward};
use mdts_core::rng::Stream;
use mdts_core::{Denoiser, NoiseSchedule, Reward, Sequence, TokenId, Vocab};

use crate::config::{RewardKind, RunConfig, ScheduleName, TaskKind};

/// Stream label for drawing the planted target.
const TARGET_LABEL: u64 = 0x7461_7267;

/// A built task: everything a method needs besides its own parameters.
pub struct Task {
    pub len: usize,
    pub sched: NoiseSchedule,
    pub denoiser: Box<dyn Denoiser>,
    pub reward: Box<dyn Reward>,
}

impl Task {
    pub fn vocab(&self) -> Vocab {
        self.denoiser.vocab()
    }
}

fn target(cfg: &RunConfig, vocab: &Vocab) -> Result<Sequence> {
    let len = cfg.task.len;
    if cfg.reward.target.is_empty() {
        let mut rng = Stream::new(cfg.task.target_seed, TARGET_LABEL);
        return Ok(Sequence::from(
            (0..len).map(|_| rng.index(vocab.real_tokens()) as TokenId).collect::<Vec<_>>(),
        ));
    }
    if cfg.reward.target.len() != len {
        bail!("reward.target: has {} tokens but task.len is {len}", cfg.reward.target.len());
    }
    if let Some(t) = cfg.reward.target.iter().find(|&&t| t >= vocab.mask_id()) {
        bail!("reward.target: token {t} is the mask or out of range for vocab {}", vocab.size());
    }
    Ok(Sequence::from(cfg.reward.target.clone()))
}

pub fn build(cfg: &RunConfig) -> Result<Task> {
    let sched = match cfg.task.schedule {
        ScheduleName::Linear => NoiseSchedule::Linear,
        ScheduleName::Geometric => NoiseSchedule::geometric(cfg.task.sigma_min, cfg.task.sigma_max).context("task.sigma_min")?,
    };
    let needs_bridge = cfg.task.kind == TaskKind::Bridge || cfg.reward.kind == RewardKind::Bridge;
    let client = if needs_bridge {
        let c = BridgeClient::connect(cfg.bridge.clone())
            .context("bridge.endpoint")?;
        Some(Arc::new(c))
    } else {
        None
    };

    let vocab = match (&client, cfg.task.kind) {
        (Some(c), TaskKind::Bridge) => c.info().vocab,
        _ => Vocab::new(cfg.task.vocab).context("task.vocab")?,
    };
    if let Some(c) = &client {
        if c.info().vocab != vocab {
            bail!("bridge.endpoint: server vocabulary {} does not match task.vocab {}", c.info().vocab.size(), vocab.size());
        }
    }

    let target = target(cfg, &vocab)?;
    let denoiser: Box<dyn Denoiser> = match cfg.task.kind {
        TaskKind::Planted => Box::new(PlantedDenoiser::new(target.clone(), cfg.task.eps0, vocab).context("task.eps0")?),
        TaskKind::RandomTable => {
            Box::new(RandomTableDenoiser::new(cfg.task.table_seed, cfg.task.concentration, vocab).context("task.concentration")?)
        }
        TaskKind::Bridge => Box::new(RemoteDenoiser::new(Arc::clone(client.as_ref().expect("bridge client")))),
    };
    let reward: Box<dyn Reward> = match cfg.reward.kind {
        RewardKind::TargetMatch => Box::new(TargetMatchReward::new(target)),
        RewardKind::Lexicon => {
            if cfg.reward.weights.len() != vocab.size() {
                bail!(
                    "reward.weights: need {} weights (one per token, mask last), got {}",
                    vocab.size(),
                    cfg.reward.weights.len()
                );
            }
            Box::new(LexiconReward::new(cfg.reward.weights.clone()).context("reward.weights")?)
        }
        RewardKind::Bridge => Box::new(RemoteReward::new(client.expect("bridge client"))),
    };
    Ok(Task {
        len: cfg.task.len,
        sched,
        denoiser,
        reward,
    })
}
