//! Wire messages.
//!
//! Every message is one JSON object on one line. Requests always carry all
//! four fields; `seq` is empty and `t` is zero where they have no meaning.
//!
//! ```text
//! -> {"type":"denoise","seq":[3,15,15],"t":0.5,"id":7}
//! <- {"id":7,"probs":[...]}
//! ```

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: &str = "mdts-bridge/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Hello,
    Denoise,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(rename = "type")]
    pub kind: MessageKind,
    pub seq: Vec<u32>,
    pub t: f64,
    pub id: u64,
}

impl Request {
    pub fn hello(id: u64) -> Self {
        Request {
            kind: MessageKind::Hello,
            seq: Vec::new(),
            t: 0.0,
            id,
        }
    }

    pub fn denoise(id: u64, seq: Vec<u32>, t: f64) -> Self {
        Request {
            kind: MessageKind::Denoise,
            seq,
            t,
            id,
        }
    }

    pub fn reward(id: u64, seq: Vec<u32>) -> Self {
        Request {
            kind: MessageKind::Reward,
            seq,
            t: 0.0,
            id,
        }
    }
}

/// A reply. Which payload field is set depends on the request kind; the
/// handshake fields are only sent in answer to `hello`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<u32>,
    /// Hamming-Lipschitz constant of the served reward, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `"mismatch"` or `"zero_weight"`; absent means mismatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Serializes a message as a single line, newline included.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("wire messages always serialize");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn request_layout() {
        let line = encode(&Request::denoise(7, vec![3, 15], 0.5));
        assert_eq!(line, "{\"type\":\"denoise\",\"seq\":[3,15],\"t\":0.5,\"id\":7}\n");
        let line = encode(&Request::hello(1));
        assert_eq!(line, "{\"type\":\"hello\",\"seq\":[],\"t\":0.0,\"id\":1}\n");
    }

    #[test]
    fn sparse_reply_layout() {
        let r = Reply {
            id: 2,
            score: Some(4.0),
            ..Reply::default()
        };
        assert_eq!(encode(&r), "{\"id\":2,\"score\":4.0}\n");
        let back: Reply = serde_json::from_str("{\"id\":2,\"score\":4.0,\"extra\":1}").unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn request_round_trip(seq in prop::collection::vec(any::<u32>(), 0..64), t in 0.0f64..=1.0, id in any::<u64>()) {
            let req = Request::denoise(id, seq, t);
            let line = encode(&req);
            prop_assert_eq!(line.matches('\n').count(), 1);
            let back: Request = serde_json::from_str(line.trim_end()).unwrap();
            prop_assert_eq!(back.t.to_bits(), req.t.to_bits());
            prop_assert_eq!(back, req);
        }

        #[test]
        fn probs_round_trip(probs in prop::collection::vec(0.0f64..1.0, 1..200)) {
            let r = Reply { id: 1, probs: Some(probs.clone()), ..Reply::default() };
            let back: Reply = serde_json::from_str(encode(&r).trim_end()).unwrap();
            let bits: Vec<u64> = back.probs.unwrap().iter().map(|p| p.to_bits()).collect();
            prop_assert_eq!(bits, probs.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        }
    }
}
