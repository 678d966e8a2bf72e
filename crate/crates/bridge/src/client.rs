use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use mdts_core::rewards::MaskPolicy;
use mdts_core::Vocab;
use serde::{Deserialize, Serialize};

use crate::error::BridgeError;
use crate::protocol::{encode, Reply, Request, PROTOCOL_VERSION};

/// Environment variable consulted for the endpoint when none is given.
pub const ENDPOINT_ENV: &str = "MDTS_BRIDGE_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// `host:port` of the server.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Must equal the server's handshake version exactly.
    pub version: String,
    /// Idle connections kept for reuse.
    pub pool_size: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            endpoint: "127.0.0.1:7878".to_string(),
            timeout_ms: 30_000,
            version: PROTOCOL_VERSION.to_string(),
            pool_size: 8,
        }
    }
}

impl BridgeConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        BridgeConfig {
            endpoint: endpoint.into(),
            ..BridgeConfig::default()
        }
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout_ms = ms;
        self
    }

    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }

    fn timeout(&self) -> Option<Duration> {
        (self.timeout_ms > 0).then(|| Duration::from_millis(self.timeout_ms))
    }
}

/// What the server announced in its handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerInfo {
    pub version: String,
    pub vocab: Vocab,
    pub beta: Option<f64>,
    pub mask_policy: MaskPolicy,
}

impl ServerInfo {
    fn from_hello(reply: &Reply, line: &str, expected: &str) -> Result<Self, BridgeError> {
        if reply.version.as_deref() != Some(expected) {
            return Err(BridgeError::VersionMismatch {
                expected: expected.to_string(),
                found: reply.version.clone(),
                payload: line.to_string(),
            });
        }
        let vocab_err = |reason: String| BridgeError::VocabMismatch {
            reason,
            payload: line.to_string(),
        };
        let size = reply
            .vocab
            .ok_or_else(|| vocab_err("handshake has no vocabulary size".into()))?;
        let vocab = Vocab::new(size).map_err(|e| vocab_err(e.to_string()))?;
        match reply.mask_id {
            Some(id) if id == vocab.mask_id() => {}
            other => {
                return Err(vocab_err(format!(
                    "mask id must be the last token {}, server sent {other:?}",
                    vocab.mask_id()
                )))
            }
        }
        if let Some(b) = reply.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(BridgeError::Malformed {
                    reason: format!("Lipschitz constant {b} is not a nonnegative number"),
                    payload: line.to_string(),
                });
            }
        }
        let mask_policy = match reply.mask_policy.as_deref() {
            None | Some("mismatch") => MaskPolicy::Mismatch,
            Some("zero_weight") => MaskPolicy::ZeroWeight,
            Some(other) => {
                return Err(BridgeError::Malformed {
                    reason: format!("unknown mask policy {other:?}"),
                    payload: line.to_string(),
                })
            }
        };
        Ok(ServerInfo {
            version: expected.to_string(),
            vocab,
            beta: reply.beta,
            mask_policy,
        })
    }
}

/// One socket with one request in flight at a time.
struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    last_id: u64,
    timeout_ms: u64,
}

impl Connection {
    fn open(cfg: &BridgeConfig) -> Result<Self, BridgeError> {
        let connect_err = |source| BridgeError::Connect {
            endpoint: cfg.endpoint.clone(),
            source,
        };
        let addr = cfg
            .endpoint
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(std::io::Error::new(ErrorKind::NotFound, "endpoint resolves to no address")))?;
        let stream = match cfg.timeout() {
            Some(t) => TcpStream::connect_timeout(&addr, t),
            None => TcpStream::connect(addr),
        }
        .map_err(connect_err)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(cfg.timeout())?;
        stream.set_write_timeout(cfg.timeout())?;
        Ok(Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            last_id: 0,
            timeout_ms: cfg.timeout_ms,
        })
    }

    /// Sends one request and returns the parsed reply with its raw line.
    fn call(&mut self, make: impl FnOnce(u64) -> Request) -> Result<(Reply, String), BridgeError> {
        self.last_id += 1;
        let req = make(self.last_id);
        let out = encode(&req);
        self.writer.write_all(out.as_bytes()).map_err(|e| self.io_error(e, &out))?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => return Err(BridgeError::Disconnected { payload: out }),
            Ok(_) => {}
            Err(e) => return Err(self.io_error(e, &out)),
        }
        let reply: Reply = serde_json::from_str(line.trim_end()).map_err(|e| BridgeError::Malformed {
            reason: e.to_string(),
            payload: line.clone(),
        })?;
        if reply.id != req.id {
            return Err(BridgeError::IdMismatch {
                expected: req.id,
                found: reply.id,
                payload: line,
            });
        }
        if let Some(message) = reply.error.clone() {
            return Err(BridgeError::Server { message, payload: line });
        }
        Ok((reply, line))
    }

    fn io_error(&self, e: std::io::Error, request: &str) -> BridgeError {
        match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => BridgeError::Timeout {
                timeout_ms: self.timeout_ms,
                payload: request.to_string(),
            },
            _ => BridgeError::Io(e),
        }
    }

    fn handshake(&mut self, expected: &str) -> Result<ServerInfo, BridgeError> {
        let (reply, line) = self.call(Request::hello)?;
        ServerInfo::from_hello(&reply, &line, expected)
    }
}

/// Connection pool to a bridge server. Safe to share across threads; each
/// caller borrows an idle connection or opens a fresh one. A connection
/// that fails is dropped rather than returned. Requests are never retried.
pub struct BridgeClient {
    cfg: BridgeConfig,
    info: ServerInfo,
    idle: Mutex<Vec<Connection>>,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("cfg", &self.cfg)
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl BridgeClient {
    /// Opens the first connection and performs the handshake.
    pub fn connect(cfg: BridgeConfig) -> Result<Self, BridgeError> {
        let mut conn = Connection::open(&cfg)?;
        let info = conn.handshake(&cfg.version)?;
        Ok(BridgeClient {
            cfg,
            info,
            idle: Mutex::new(vec![conn]),
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    fn checkout(&self) -> Result<Connection, BridgeError> {
        if let Some(c) = self.idle.lock().expect("pool lock").pop() {
            return Ok(c);
        }
        let mut conn = Connection::open(&self.cfg)?;
        let info = conn.handshake(&self.cfg.version)?;
        if info != self.info {
            return Err(BridgeError::VocabMismatch {
                reason: format!("new connection announced {info:?}, expected {:?}", self.info),
                payload: String::new(),
            });
        }
        Ok(conn)
    }

    fn request(&self, make: impl FnOnce(u64) -> Request) -> Result<(Reply, String), BridgeError> {
        let mut conn = self.checkout()?;
        let out = conn.call(make)?;
        let mut idle = self.idle.lock().expect("pool lock");
        if idle.len() < self.cfg.pool_size {
            idle.push(conn);
        }
        Ok(out)
    }

    /// Raw `denoise` call: returns the row-major probabilities as sent,
    /// after shape and row-sum validation.
    pub fn denoise(&self, seq: &[u32], t: f64) -> Result<Vec<f64>, BridgeError> {
        let (reply, line) = self.request(|id| Request::denoise(id, seq.to_vec(), t))?;
        let Some(probs) = reply.probs else {
            return Err(BridgeError::Malformed {
                reason: "denoise reply has no probs".into(),
                payload: line,
            });
        };
        let v = self.info.vocab.size();
        if probs.len() != seq.len() * v {
            return Err(BridgeError::Malformed {
                reason: format!("expected {}x{} probabilities, got {}", seq.len(), v, probs.len()),
                payload: line,
            });
        }
        for (row, chunk) in probs.chunks(v.max(1)).enumerate() {
            if let Some(p) = chunk.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(BridgeError::Malformed {
                    reason: format!("row {row} holds invalid probability {p}"),
                    payload: line,
                });
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(BridgeError::RowSum { row, sum, payload: line });
            }
        }
        Ok(probs)
    }

    pub fn score(&self, seq: &[u32]) -> Result<f64, BridgeError> {
        let (reply, line) = self.request(|id| Request::reward(id, seq.to_vec()))?;
        match reply.score {
            Some(s) if s.is_finite() => Ok(s),
            Some(s) => Err(BridgeError::Malformed {
                reason: format!("score {s} is not finite"),
                payload: line,
            }),
            None => Err(BridgeError::Malformed {
                reason: "reward reply has no score".into(),
                payload: line,
            }),
        }
    }

    /// Number of idle pooled connections.
    pub fn idle_connections(&self) -> usize {
        self.idle.lock().expect("pool lock").len()
    }
}

