use std::sync::Arc;

use mdts_core::mdlm::enforce_denoiser_constraints;
use mdts_core::rewards::MaskPolicy;
use mdts_core::{Denoiser, Error, ProbMatrix, Reward, Result, Sequence, Vocab};

use crate::client::{BridgeClient, BridgeConfig};

/// A denoiser served over the bridge. Replies are validated by the client
/// and then constraint-enforced locally, so downstream code sees the same
/// guarantees as from an in-process denoiser.
#[derive(Debug, Clone)]
pub struct RemoteDenoiser {
    client: Arc<BridgeClient>,
}

impl RemoteDenoiser {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        RemoteDenoiser { client }
    }

    pub fn client(&self) -> &Arc<BridgeClient> {
        &self.client
    }
}

impl Denoiser for RemoteDenoiser {
    fn vocab(&self) -> Vocab {
        self.client.info().vocab
    }

    fn eval(&self, z: &Sequence, t: f64) -> Result<ProbMatrix> {
        let vocab = self.vocab();
        let probs = self.client.denoise(z.tokens(), t)?;
        let mu = ProbMatrix::from_rows(z.len(), vocab.size(), probs)?;
        // Leave conforming replies alone so remote and local runs agree bitwise.
        if mu.check_constraints(z, &vocab).is_ok() {
            return Ok(mu);
        }
        enforce_denoiser_constraints(mu, z, &vocab)
    }
}

/// A reward served over the bridge.
#[derive(Debug, Clone)]
pub struct RemoteReward {
    client: Arc<BridgeClient>,
}

impl RemoteReward {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        RemoteReward { client }
    }
}

impl Reward for RemoteReward {
    fn score(&self, x: &Sequence) -> Result<f64> {
        Ok(self.client.score(x.tokens())?)
    }

    fn lipschitz_beta(&self) -> Option<f64> {
        self.client.info().beta
    }

    fn mask_policy(&self) -> MaskPolicy {
        self.client.info().mask_policy
    }
}

/// Connects, handshakes, and wraps the server as a denoiser.
pub fn remote_denoiser(cfg: BridgeConfig) -> Result<RemoteDenoiser> {
    let client = BridgeClient::connect(cfg).map_err(Error::from)?;
    Ok(RemoteDenoiser::new(Arc::new(client)))
}

/// Connects, handshakes, and wraps the server as a reward.
pub fn remote_reward(cfg: BridgeConfig) -> Result<RemoteReward> {
    let client = BridgeClient::connect(cfg).map_err(Error::from)?;
    Ok(RemoteReward::new(Arc::new(client)))
}
