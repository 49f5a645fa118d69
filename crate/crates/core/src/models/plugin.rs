//! External models behind a child process.
//!
//! The child reads one JSON object per line on stdin and answers each request
//! with exactly one JSON object per line on stdout, in order:
//!
//! ```text
//! → {"op":"hello","version":1}
//! ← {"name":"...","role":"generator"|"retriever","caps":["..."]}
//! → {"op":"generate","passage":"...","top_k":50,"seed":7}   ← {"question":"...","loglik":-3.2}
//! → {"op":"score_qg","passage":"...","question":"..."}      ← {"loglik":-3.2}
//! → {"op":"encode","kind":"q"|"p","text":"..."}            ← {"vec":[0.1, ...]}
//! → {"op":"train","pairs_path":"...","negatives_path":"..."} ← {"ok":true}
//! any request                                                ← {"error":"..."}
//! ```
//!
//! For `train`, `pairs_path` is JSON Lines of `{"question","passage"}` and
//! `negatives_path` is JSON Lines of `{"question","negatives":[passage text]}`
//! aligned line by line with the pairs file. Generators advertise `train` in
//! `caps` to accept fine-tuning; their negatives file is empty.
//!
//! Ranking for plugin retrievers happens on this side, from the returned
//! encodings, so the ordering and tie-break contract matches the native models.

use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    dot, rank_hits, DecodeConfig, Generated, Generator, Hit, RetrievalExample, Retriever, TextPair,
};
use crate::corpus::Passage;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("failed to spawn plugin {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("plugin did not answer {op:?} within {timeout:?}")]
    Timeout { op: String, timeout: Duration },
    #[error("plugin protocol violation at byte {offset}: {reason}; payload: {payload:?}")]
    Protocol {
        offset: usize,
        reason: String,
        payload: String,
    },
    #[error("plugin error: {0}")]
    Remote(String),
    #[error("plugin closed its output")]
    Closed,
    #[error("plugin io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Retriever,
}

#[derive(Clone, Debug)]
pub struct PluginOptions {
    pub handshake_timeout: Duration,
    /// Per-request deadline after the handshake; `None` waits indefinitely.
    pub request_timeout: Option<Duration>,
}

impl Default for PluginOptions {
    fn default() -> Self {
        PluginOptions {
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            request_timeout: None,
        }
    }
}

#[derive(Deserialize)]
struct Hello {
    name: String,
    role: Role,
    #[serde(default)]
    caps: Vec<String>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

/// A live child process. Requests are serialized through a mutex.
pub struct PluginHandle {
    command: String,
    name: String,
    role: Role,
    caps: Vec<String>,
    options: PluginOptions,
    channel: Mutex<Channel>,
}

impl std::fmt::Debug for PluginHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginHandle")
            .field("command", &self.command)
            .field("name", &self.name)
            .field("role", &self.role)
            .field("caps", &self.caps)
            .finish()
    }
}

impl Drop for PluginHandle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

fn violation(offset: usize, reason: impl Into<String>, payload: &str) -> PluginError {
    PluginError::Protocol {
        offset,
        reason: reason.into(),
        payload: payload.to_string(),
    }
}

/// Byte offset of a serde_json error within a single-line payload.
fn error_offset(line: &str, err: &serde_json::Error) -> usize {
    let col = err.column().saturating_sub(1);
    col.min(line.len())
}

fn parse_response(line: &str) -> std::result::Result<Value, PluginError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| violation(error_offset(line, &e), format!("invalid JSON: {e}"), line))?;
    if !value.is_object() {
        return Err(violation(0, "response is not a JSON object", line));
    }
    if let Some(msg) = value.get("error") {
        return Err(PluginError::Remote(
            msg.as_str()
                .map(str::to_string)
                .unwrap_or_else(|| msg.to_string()),
        ));
    }
    Ok(value)
}

impl PluginHandle {
    /// Spawns `command` through `sh -c`, performs the handshake and checks the
    /// advertised role.
    pub fn attach(command: &str, role: Role, options: PluginOptions) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| PluginError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut handle = PluginHandle {
            command: command.to_string(),
            name: String::new(),
            role,
            caps: Vec::new(),
            options,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
            }),
        };
        let hello = json!({"op": "hello", "version": PROTOCOL_VERSION});
        let timeout = handle.options.handshake_timeout;
        let (reply, raw) = handle.exchange(&hello, Some(timeout))?;
        let hello: Hello = serde_json::from_value(reply)
            .map_err(|e| violation(0, format!("bad handshake: {e}"), &raw))?;
        if hello.role != role {
            return Err(violation(
                0,
                format!("plugin announced role {:?}, expected {role:?}", hello.role),
                &raw,
            )
            .into());
        }
        handle.name = hello.name;
        handle.caps = hello.caps;
        Ok(handle)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn capabilities(&self) -> &[String] {
        &self.caps
    }

    pub fn has_cap(&self, cap: &str) -> bool {
        self.caps.iter().any(|c| c == cap)
    }

    fn exchange(&self, request: &Value, timeout: Option<Duration>) -> Result<(Value, String)> {
        let op = request
            .get("op")
            .and_then(Value::as_str)
            .unwrap_or("?")
            .to_string();
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        ch.stdin
            .write_all(line.as_bytes())
            .and_then(|_| ch.stdin.flush())
            .map_err(PluginError::Io)?;
        let received = match timeout {
            Some(t) => ch.lines.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => PluginError::Timeout { op, timeout: t },
                RecvTimeoutError::Disconnected => PluginError::Closed,
            })?,
            None => ch.lines.recv().map_err(|_| PluginError::Closed)?,
        };
        let raw = received.map_err(PluginError::Io)?;
        let value = parse_response(&raw)?;
        Ok((value, raw))
    }

    /// Sends one request and returns the decoded response object.
    pub fn request(&self, request: &Value) -> Result<Value> {
        Ok(self.exchange(request, self.options.request_timeout)?.0)
    }

    fn field<'a>(value: &'a Value, key: &str) -> Result<&'a Value> {
        value.get(key).ok_or_else(|| {
            violation(0, format!("missing field {key:?}"), &value.to_string()).into()
        })
    }

    fn number(value: &Value, key: &str) -> Result<f64> {
        Self::field(value, key)?.as_f64().ok_or_else(|| {
            violation(
                0,
                format!("field {key:?} is not a number"),
                &value.to_string(),
            )
            .into()
        })
    }

    /// Retrievers get one negatives line per pair; generators an empty file.
    fn train_files(&self, pairs: &[(String, String, Vec<String>)]) -> Result<()> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let dir: PathBuf = std::env::temp_dir().join(format!(
            "dualtrain-plugin-{}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let pairs_path = dir.join("pairs.jsonl");
        let negatives_path = dir.join("negatives.jsonl");
        let mut p_out = String::new();
        let mut n_out = String::new();
        for (q, p, negs) in pairs {
            p_out.push_str(&json!({"question": q, "passage": p}).to_string());
            p_out.push('\n');
            if self.role == Role::Retriever {
                n_out.push_str(&json!({"question": q, "negatives": negs}).to_string());
                n_out.push('\n');
            }
        }
        std::fs::write(&pairs_path, p_out).map_err(|e| Error::io(&pairs_path, e))?;
        std::fs::write(&negatives_path, n_out).map_err(|e| Error::io(&negatives_path, e))?;
        let reply = self.request(&json!({
            "op": "train",
            "pairs_path": pairs_path.to_string_lossy(),
            "negatives_path": negatives_path.to_string_lossy(),
        }));
        let _ = std::fs::remove_dir_all(&dir);
        let reply = reply?;
        if Self::field(&reply, "ok")?.as_bool() != Some(true) {
            return Err(violation(0, "train did not return ok=true", &reply.to_string()).into());
        }
        Ok(())
    }
}

/// Attaches with default options.
pub fn attach(command: &str, role: Role) -> Result<PluginHandle> {
    PluginHandle::attach(command, role, PluginOptions::default())
}

/// Generator proxied to a child process.
#[derive(Debug, Clone)]
pub struct PluginGenerator {
    handle: Arc<PluginHandle>,
}

impl PluginGenerator {
    pub fn new(handle: PluginHandle) -> Result<Self> {
        if handle.role() != Role::Generator {
            return Err(Error::Unsupported("plugin is not a generator".into()));
        }
        Ok(PluginGenerator {
            handle: Arc::new(handle),
        })
    }

    pub fn handle(&self) -> &PluginHandle {
        &self.handle
    }

    fn fit(&self, pairs: &[TextPair]) -> Result<()> {
        if !self.handle.has_cap("train") {
            return Err(Error::Unsupported(format!(
                "plugin {} does not advertise the train capability",
                self.handle.name()
            )));
        }
        let rows: Vec<_> = pairs
            .iter()
            .map(|p| (p.question.clone(), p.passage.clone(), Vec::new()))
            .collect();
        self.handle.train_files(&rows)
    }
}

impl Generator for PluginGenerator {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn train(&mut self, pairs: &[TextPair]) -> Result<()> {
        self.fit(pairs)
    }

    fn fine_tune(&mut self, pairs: &[TextPair]) -> Result<()> {
        self.fit(pairs)
    }

    fn generate(&self, passage: &str, decode: &DecodeConfig) -> Result<Generated> {
        decode.validate()?;
        let reply = self.handle.request(&json!({
            "op": "generate",
            "passage": passage,
            "top_k": decode.top_k,
            "seed": decode.seed,
        }))?;
        let question = PluginHandle::field(&reply, "question")?
            .as_str()
            .ok_or_else(|| violation(0, "field \"question\" is not a string", &reply.to_string()))?
            .to_string();
        let loglik = PluginHandle::number(&reply, "loglik")?;
        Ok(Generated { question, loglik })
    }

    fn score(&self, passage: &str, question: &str) -> Result<f64> {
        let reply = self.handle.request(&json!({
            "op": "score_qg",
            "passage": passage,
            "question": question,
        }))?;
        PluginHandle::number(&reply, "loglik")
    }

    fn snapshot(&self) -> Result<Box<dyn Generator>> {
        Err(Error::Unsupported(
            "plugin generators keep their parameters in the child process and cannot be snapshotted".into(),
        ))
    }
}

/// Retriever proxied to a child process through its `encode` op.
#[derive(Debug, Clone)]
pub struct PluginRetriever {
    handle: Arc<PluginHandle>,
    pool: Option<(Vec<String>, Vec<String>, Vec<Vec<f64>>)>,
}

impl PluginRetriever {
    pub fn new(handle: PluginHandle) -> Result<Self> {
        if handle.role() != Role::Retriever {
            return Err(Error::Unsupported("plugin is not a retriever".into()));
        }
        Ok(PluginRetriever {
            handle: Arc::new(handle),
            pool: None,
        })
    }

    pub fn handle(&self) -> &PluginHandle {
        &self.handle
    }

    pub fn encode(&self, kind: &str, text: &str) -> Result<Vec<f64>> {
        let reply = self
            .handle
            .request(&json!({"op": "encode", "kind": kind, "text": text}))?;
        let vec = PluginHandle::field(&reply, "vec")?
            .as_array()
            .ok_or_else(|| violation(0, "field \"vec\" is not an array", &reply.to_string()))?;
        vec.iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| {
                    violation(0, "non-numeric vector component", &reply.to_string()).into()
                })
            })
            .collect()
    }

    fn fit(&mut self, examples: &[RetrievalExample]) -> Result<()> {
        let rows: Vec<_> = examples
            .iter()
            .map(|e| (e.question.clone(), e.positive.clone(), e.negatives.clone()))
            .collect();
        self.handle.train_files(&rows)?;
        if let Some((ids, texts, _)) = self.pool.take() {
            let vecs = texts
                .iter()
                .map(|t| self.encode("p", t))
                .collect::<Result<Vec<_>>>()?;
            self.pool = Some((ids, texts, vecs));
        }
        Ok(())
    }
}

impl Retriever for PluginRetriever {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn train(&mut self, examples: &[RetrievalExample]) -> Result<()> {
        self.fit(examples)
    }

    fn fine_tune(&mut self, examples: &[RetrievalExample]) -> Result<()> {
        self.fit(examples)
    }

    fn index(&mut self, passages: &[Passage]) -> Result<()> {
        let vecs = passages
            .iter()
            .map(|p| self.encode("p", &p.text))
            .collect::<Result<Vec<_>>>()?;
        self.pool = Some((
            passages.iter().map(|p| p.id.clone()).collect(),
            passages.iter().map(|p| p.text.clone()).collect(),
            vecs,
        ));
        Ok(())
    }

    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<Hit>> {
        let (ids, _, vecs) = self.pool.as_ref().ok_or(Error::IndexNotBuilt)?;
        let q = self.encode("q", question)?;
        let hits = ids
            .iter()
            .zip(vecs)
            .map(|(id, v)| Hit {
                passage_id: id.clone(),
                similarity: dot(&q, v),
            })
            .collect();
        Ok(rank_hits(hits, k))
    }

    fn score(&self, question: &str, passage: &str) -> Result<f64> {
        Ok(dot(
            &self.encode("q", question)?,
            &self.encode("p", passage)?,
        ))
    }

    fn snapshot(&self) -> Result<Box<dyn Retriever>> {
        Err(Error::Unsupported(
            "plugin retrievers keep their parameters in the child process and cannot be snapshotted".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_json_reports_offset() {
        let err = parse_response("{\"loglik\": oops}").unwrap_err();
        match err {
            PluginError::Protocol {
                offset, payload, ..
            } => {
                assert_eq!(offset, 11);
                assert_eq!(payload, "{\"loglik\": oops}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_object_is_remote_error() {
        assert!(matches!(
            parse_response("{\"error\":\"boom\"}"),
            Err(PluginError::Remote(m)) if m == "boom"
        ));
        assert!(matches!(
            parse_response("[1]"),
            Err(PluginError::Protocol { .. })
        ));
    }

    #[test]
    fn spawn_of_missing_program_fails_cleanly() {
        // `sh` itself spawns; the missing program makes it exit before replying.
        let err = PluginHandle::attach(
            "/definitely/not/a/program",
            Role::Generator,
            PluginOptions {
                handshake_timeout: Duration::from_secs(5),
                request_timeout: None,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Plugin(PluginError::Closed) | Error::Plugin(PluginError::Io(_))
        ));
    }
}
