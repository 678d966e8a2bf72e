use thiserror::Error;

const SHOWN: usize = 240;

fn clip(payload: &str) -> String {
    let payload = payload.trim_end();
    match payload.char_indices().nth(SHOWN) {
        Some((cut, _)) => format!("{}... ({} bytes)", &payload[..cut], payload.len()),
        None => payload.to_string(),
    }
}

/// Bridge failures. Variants that stem from a specific message keep the
/// raw line in `payload`; `Display` shows a clipped copy.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot reach bridge at {endpoint}")]
    Connect {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bridge i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("no reply within {timeout_ms} ms to request {}", clip(.payload))]
    Timeout { timeout_ms: u64, payload: String },

    #[error("server closed the connection while waiting for a reply to {}", clip(.payload))]
    Disconnected { payload: String },

    #[error("protocol version mismatch: client {expected}, server {found:?}; reply {}", clip(.payload))]
    VersionMismatch {
        expected: String,
        found: Option<String>,
        payload: String,
    },

    #[error("vocabulary mismatch: {reason}; reply {}", clip(.payload))]
    VocabMismatch { reason: String, payload: String },

    #[error("malformed reply ({reason}): {}", clip(.payload))]
    Malformed { reason: String, payload: String },

    #[error("reply row {row} sums to {sum}; reply {}", clip(.payload))]
    RowSum { row: usize, sum: f64, payload: String },

    #[error("reply id {found} does not match request id {expected}; reply {}", clip(.payload))]
    IdMismatch {
        expected: u64,
        found: u64,
        payload: String,
    },

    #[error("server reported an error: {message}; reply {}", clip(.payload))]
    Server { message: String, payload: String },
}

impl BridgeError {
    /// Recovers a bridge error wrapped as an engine backend error.
    pub fn from_core(err: &mdts_core::Error) -> Option<&BridgeError> {
        match err {
            mdts_core::Error::Backend(inner) => inner.downcast_ref(),
            _ => None,
        }
    }
}

impl From<BridgeError> for mdts_core::Error {
    fn from(e: BridgeError) -> Self {
        mdts_core::Error::Backend(Box::new(e))
    }
}
