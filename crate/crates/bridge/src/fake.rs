//! In-process bridge server for tests and offline runs.
//!
//! A [`FakeServer`] listens on an ephemeral loopback port and answers each
//! connection on its own thread. Replies come from a [`Backend`]; a [`Fault`]
//! can corrupt them to exercise client-side validation.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use mdts_core::rewards::MaskPolicy;
use mdts_core::{Denoiser, Reward, Sequence};

use crate::client::BridgeConfig;
use crate::protocol::{encode, MessageKind, Reply, Request, PROTOCOL_VERSION};

/// What a fake server computes. Errors become `error` replies.
pub trait Backend: Send + Sync + 'static {
    fn vocab_size(&self) -> usize;

    fn beta(&self) -> Option<f64> {
        None
    }

    fn mask_policy(&self) -> MaskPolicy {
        MaskPolicy::Mismatch
    }

    fn denoise(&self, seq: &[u32], t: f64) -> Result<Vec<f64>, String>;

    fn score(&self, seq: &[u32]) -> Result<f64, String>;
}

/// Uniform rows over the whole vocabulary, mask included, and a reward
/// equal to the sequence length. Nothing is constraint-enforced.
#[derive(Debug, Clone, Copy)]
pub struct UniformEcho {
    pub vocab: usize,
}

impl Backend for UniformEcho {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn denoise(&self, seq: &[u32], _t: f64) -> Result<Vec<f64>, String> {
        Ok(vec![1.0 / self.vocab as f64; seq.len() * self.vocab])
    }

    fn score(&self, seq: &[u32]) -> Result<f64, String> {
        Ok(seq.len() as f64)
    }
}

/// Serves an in-process denoiser and reward, so the remote path can be
/// compared with the local one bit for bit.
#[derive(Debug, Clone)]
pub struct LocalBackend<D, R> {
    pub denoiser: D,
    pub reward: R,
}

impl<D: Denoiser + 'static, R: Reward + 'static> Backend for LocalBackend<D, R> {
    fn vocab_size(&self) -> usize {
        self.denoiser.vocab().size()
    }

    fn beta(&self) -> Option<f64> {
        self.reward.lipschitz_beta()
    }

    fn mask_policy(&self) -> MaskPolicy {
        self.reward.mask_policy()
    }

    fn denoise(&self, seq: &[u32], t: f64) -> Result<Vec<f64>, String> {
        let z = Sequence::new(seq.to_vec(), &self.denoiser.vocab()).map_err(|e| e.to_string())?;
        let mu = self.denoiser.eval(&z, t).map_err(|e| e.to_string())?;
        Ok(mu.as_slice().to_vec())
    }

    fn score(&self, seq: &[u32]) -> Result<f64, String> {
        let x = Sequence::from(seq.to_vec());
        self.reward.score(&x).map_err(|e| e.to_string())
    }
}

/// Deliberate misbehaviour. Everything except `Version` leaves the
/// handshake intact and hits `denoise` and `reward` replies only.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    None,
    /// Handshake announces this version instead.
    Version(String),
    /// Multiplies every probability by the factor.
    ScaleRows(f64),
    /// Adds the offset to the reply id.
    ShiftId(u64),
    /// Sleeps before replying.
    Delay(Duration),
    /// Sends a line that is not JSON.
    Garbage,
    /// Closes the connection without replying.
    Hangup,
}

#[derive(Debug, Clone, Default)]
pub struct ServerStats {
    pub connections: u64,
    pub hellos: u64,
    /// `denoise` and `reward` requests received.
    pub calls: u64,
}

#[derive(Default)]
struct Shared {
    connections: AtomicU64,
    hellos: AtomicU64,
    calls: AtomicU64,
    recorded: Option<Mutex<Vec<Request>>>,
}

pub struct FakeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for FakeServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FakeServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl FakeServer {
    pub fn spawn(backend: impl Backend) -> std::io::Result<Self> {
        Self::start(Arc::new(backend), Fault::None, false)
    }

    pub fn with_fault(backend: impl Backend, fault: Fault) -> std::io::Result<Self> {
        Self::start(Arc::new(backend), fault, false)
    }

    /// Keeps a copy of every non-hello request, see [`FakeServer::recorded`].
    pub fn recording(backend: impl Backend) -> std::io::Result<Self> {
        Self::start(Arc::new(backend), Fault::None, true)
    }

    fn start(backend: Arc<dyn Backend>, fault: Fault, record: bool) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            recorded: record.then(|| Mutex::new(Vec::new())),
            ..Shared::default()
        });
        let fault = Arc::new(fault);
        let accept = {
            let stop = Arc::clone(&stop);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    shared.connections.fetch_add(1, Ordering::SeqCst);
                    let (backend, fault, shared) = (Arc::clone(&backend), Arc::clone(&fault), Arc::clone(&shared));
                    std::thread::spawn(move || {
                        let _ = serve(stream, &*backend, &fault, &shared);
                    });
                }
            })
        };
        Ok(FakeServer {
            addr,
            stop,
            shared,
            accept: Some(accept),
        })
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Client configuration pointing at this server with a short timeout.
    pub fn config(&self) -> BridgeConfig {
        BridgeConfig::new(self.endpoint()).with_timeout_ms(5_000)
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            connections: self.shared.connections.load(Ordering::SeqCst),
            hellos: self.shared.hellos.load(Ordering::SeqCst),
            calls: self.shared.calls.load(Ordering::SeqCst),
        }
    }

    pub fn recorded(&self) -> Vec<Request> {
        self.shared
            .recorded
            .as_ref()
            .map(|r| r.lock().expect("record lock").clone())
            .unwrap_or_default()
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, backend: &dyn Backend, fault: &Fault, shared: &Shared) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let req: Request = match serde_json::from_str(line.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                let reply = Reply {
                    error: Some(format!("bad request: {e}")),
                    ..Reply::default()
                };
                writer.write_all(encode(&reply).as_bytes())?;
                continue;
            }
        };
        let out = match req.kind {
            MessageKind::Hello => {
                shared.hellos.fetch_add(1, Ordering::SeqCst);
                let version = match fault {
                    Fault::Version(v) => v.clone(),
                    _ => PROTOCOL_VERSION.to_string(),
                };
                let v = backend.vocab_size();
                encode(&Reply {
                    id: req.id,
                    version: Some(version),
                    vocab: Some(v),
                    mask_id: Some(v.saturating_sub(1) as u32),
                    beta: backend.beta(),
                    mask_policy: Some(
                        match backend.mask_policy() {
                            MaskPolicy::Mismatch => "mismatch",
                            MaskPolicy::ZeroWeight => "zero_weight",
                        }
                        .to_string(),
                    ),
                    ..Reply::default()
                })
            }
            MessageKind::Denoise | MessageKind::Reward => {
                shared.calls.fetch_add(1, Ordering::SeqCst);
                if let Some(rec) = &shared.recorded {
                    rec.lock().expect("record lock").push(req.clone());
                }
                let mut reply = Reply {
                    id: req.id,
                    ..Reply::default()
                };
                let result = if req.kind == MessageKind::Denoise {
                    backend.denoise(&req.seq, req.t).map(|p| reply.probs = Some(p))
                } else {
                    backend.score(&req.seq).map(|s| reply.score = Some(s))
                };
                if let Err(e) = result {
                    reply.error = Some(e);
                }
                match fault {
                    Fault::ScaleRows(f) => {
                        if let Some(p) = reply.probs.as_mut() {
                            p.iter_mut().for_each(|x| *x *= f);
                        }
                    }
                    Fault::ShiftId(d) => reply.id = reply.id.wrapping_add(*d),
                    Fault::Delay(d) => std::thread::sleep(*d),
                    Fault::Garbage => {
                        writer.write_all(b"<html>not json</html>\n")?;
                        continue;
                    }
                    Fault::Hangup => return Ok(()),
                    Fault::None | Fault::Version(_) => {}
                }
                encode(&reply)
            }
        };
        writer.write_all(out.as_bytes())?;
    }
}
