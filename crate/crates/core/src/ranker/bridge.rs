//! Client side of the external ranker protocol.
//!
//! One JSON object per line over the child's stdin/stdout. Every request
//! carries a fresh `id` (starting at 1 with the handshake) that the response
//! must echo:
//!
//! ```text
//! -> {"id":1,"op":"hello"}                                  <- {"id":1,"name":"...","embed_dim":null}
//! -> {"id":2,"op":"score","context":"...","candidates":[..]} <- {"id":2,"scores":[..]}
//! -> {"id":3,"op":"embed","texts":[..]}                     <- {"id":3,"vectors":[[..],..]}
//! ```
//!
//! A response of the form `{"id":..,"error":"..."}` is reported as a protocol
//! error. After a timeout or transport failure the handle is poisoned and
//! every later call returns `BridgeDown`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Ranker, RankerError, RankerScores};
use crate::corpus::Candidate;

pub const DEFAULT_BRIDGE_TIMEOUT: Duration = Duration::from_secs(30);

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    poisoned: Option<String>,
}

impl Channel {
    fn request(&mut self, mut msg: Value, timeout: Duration) -> Result<Value, RankerError> {
        if let Some(reason) = &self.poisoned {
            return Err(RankerError::BridgeDown(reason.clone()));
        }
        let id = self.next_id;
        self.next_id += 1;
        msg["id"] = json!(id);
        let result = self.exchange(&msg, id, timeout);
        if let Err(RankerError::BridgeDown(r)) = &result {
            self.poisoned = Some(r.clone());
        } else if let Err(RankerError::Timeout(_)) = &result {
            self.poisoned = Some("previous request timed out".into());
        }
        result
    }

    fn exchange(&mut self, msg: &Value, id: u64, timeout: Duration) -> Result<Value, RankerError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| RankerError::BridgeDown("stdin closed".into()))?;
        let mut line = serde_json::to_string(msg).expect("request serializes");
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| RankerError::BridgeDown(e.to_string()))?;
        let reply = match self.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(RankerError::BridgeDown(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(RankerError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(RankerError::BridgeDown("bridge closed its output".into()))
            }
        };
        let v: Value = serde_json::from_str(&reply)
            .map_err(|e| RankerError::Protocol(format!("invalid json {reply:?}: {e}")))?;
        if v.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(RankerError::Protocol(format!(
                "response id {} does not match request id {id}",
                v.get("id").unwrap_or(&Value::Null)
            )));
        }
        if let Some(err) = v.get("error") {
            return Err(RankerError::Protocol(format!("bridge error: {err}")));
        }
        Ok(v)
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Deserialize)]
struct Hello {
    name: String,
    embed_dim: Option<u32>,
}

/// A single external ranker subprocess. Requests are serialized.
pub struct BridgeRanker {
    channel: Mutex<Channel>,
    timeout: Duration,
    name: String,
    embed_dim: Option<u32>,
}

impl std::fmt::Debug for BridgeRanker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeRanker")
            .field("name", &self.name)
            .field("embed_dim", &self.embed_dim)
            .finish()
    }
}

impl BridgeRanker {
    /// Spawns `command[0]` with the remaining arguments and performs the
    /// handshake.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, RankerError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| RankerError::BridgeDown("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| RankerError::BridgeDown(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            poisoned: None,
        };
        let reply = channel.request(json!({"op": "hello"}), timeout)?;
        let hello: Hello = serde_json::from_value(reply)
            .map_err(|e| RankerError::Protocol(format!("bad hello response: {e}")))?;
        Ok(BridgeRanker {
            channel: Mutex::new(channel),
            timeout,
            name: hello.name,
            embed_dim: hello.embed_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn embed_dim(&self) -> Option<u32> {
        self.embed_dim
    }

    /// Raw scores in candidate order.
    pub fn score_texts(&self, context: &str, candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        let reply = self.channel.lock().expect("bridge lock").request(
            json!({"op": "score", "context": context, "candidates": candidates}),
            self.timeout,
        )?;
        let scores: Vec<f64> = reply
            .get("scores")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| RankerError::Protocol("score response lacks a numeric scores array".into()))?;
        if scores.len() != candidates.len() {
            return Err(RankerError::Protocol(format!(
                "expected {} scores, got {}",
                candidates.len(),
                scores.len()
            )));
        }
        Ok(scores)
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RankerError> {
        let reply = self
            .channel
            .lock()
            .expect("bridge lock")
            .request(json!({"op": "embed", "texts": texts}), self.timeout)?;
        let vectors: Vec<Vec<f64>> = reply
            .get("vectors")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| RankerError::Protocol("embed response lacks a vectors array".into()))?;
        if vectors.len() != texts.len() {
            return Err(RankerError::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }
}

impl Ranker for BridgeRanker {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        if candidates.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
        let raw = self.score_texts(context, &texts)?;
        let ids: Vec<_> = candidates.iter().map(|c| c.id).collect();
        RankerScores::from_parts(&ids, &raw)
    }
}

/// Round-robin over several bridge processes so parallel episodes do not
/// queue on one subprocess.
#[derive(Debug)]
pub struct BridgePool {
    members: Vec<BridgeRanker>,
    next: AtomicUsize,
}

impl BridgePool {
    pub fn spawn(command: &[String], size: usize, timeout: Duration) -> Result<Self, RankerError> {
        let members = (0..size.max(1))
            .map(|_| BridgeRanker::spawn(command, timeout))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BridgePool {
            members,
            next: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Ranker for BridgePool {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.members.len();
        self.members[i].score(context, candidates)
    }
}
