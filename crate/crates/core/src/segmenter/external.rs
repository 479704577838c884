//! Out-of-process segmenters over JSON lines on stdin/stdout.
//!
//! ```text
//! -> {"type":"hello","version":1}
//! <- {"type":"ready","name":"...","capabilities":["bbox","mask","prior"]}
//! -> {"type":"segment","case_id":..,"inputs":{..},"prompts":{..},"out_dir":..}
//! <- {"type":"result","case_id":..,"mask":<path>,"confidence":..}
//!    | {"type":"error","case_id":..,"message":..}
//! -> {"type":"bye"}
//! ```
//!
//! Volumes travel as file paths. Stderr is collected and attached to
//! failures. A handle serves one request at a time.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Inputs, SegmentationRequest, SegmentationResult, Segmenter};
use crate::bbox::BBox3;
use crate::error::{Error, Result};
use crate::nifti::read_mask;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Bbox,
    Mask,
    Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePrompts {
    pub bbox: Option<[usize; 6]>,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
    },
    Ready {
        name: String,
        capabilities: Vec<Capability>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u32>,
    },
    Segment {
        case_id: String,
        inputs: Inputs,
        prompts: WirePrompts,
        out_dir: PathBuf,
    },
    Result {
        case_id: String,
        mask: PathBuf,
        confidence: f64,
    },
    Error {
        #[serde(default)]
        case_id: Option<String>,
        message: String,
    },
    Bye,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Message> {
        serde_json::from_str(line.trim_end()).map_err(|e| {
            Error::ProtocolViolation(format!("unparseable message {:?}: {e}", truncate(line)))
        })
    }

    pub fn segment(req: &SegmentationRequest) -> Message {
        Message::Segment {
            case_id: req.case_id.clone(),
            inputs: req.inputs.clone(),
            prompts: WirePrompts {
                bbox: req.prompts.bbox.map(|b| b.to_array()),
                mask: req.prompts.mask.clone(),
            },
            out_dir: req.out_dir.clone(),
        }
    }
}

impl WirePrompts {
    pub fn bbox(&self) -> Result<Option<BBox3>> {
        self.bbox.map(BBox3::from_array).transpose()
    }
}

fn truncate(s: &str) -> String {
    let s = s.trim_end();
    if s.chars().count() > 200 {
        format!("{}...", s.chars().take(200).collect::<String>())
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalConfig {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            handshake_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(300),
        }
    }
}

enum Line {
    Text(String),
    Eof,
    Failed(std::io::Error),
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<Line>,
    stderr_thread: Option<JoinHandle<()>>,
    alive: bool,
}

/// Handle to a running adapter process.
pub struct ExternalSegmenter {
    command: String,
    name: String,
    capabilities: Vec<Capability>,
    config: ExternalConfig,
    stderr: Arc<Mutex<String>>,
    channel: Mutex<Channel>,
}

enum Received {
    Message(Message),
    Timeout,
    Closed,
}

impl Channel {
    fn send(&mut self, msg: &Message) -> std::io::Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "stdin closed"))?;
        stdin.write_all(msg.to_line().as_bytes())?;
        stdin.flush()
    }

    fn recv(&mut self, timeout: Duration) -> Result<Received> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Line::Text(t)) if t.trim().is_empty() => continue,
                Ok(Line::Text(t)) => return Message::from_line(&t).map(Received::Message),
                Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => return Ok(Received::Closed),
                Ok(Line::Failed(e)) => {
                    return Err(Error::ProtocolViolation(format!(
                        "unreadable adapter output: {e}"
                    )))
                }
                Err(RecvTimeoutError::Timeout) => return Ok(Received::Timeout),
            }
        }
    }

    /// Wait for the child to exit and for its stderr to drain.
    fn reap(&mut self, grace: Duration) -> Option<std::process::ExitStatus> {
        self.stdin = None;
        let deadline = Instant::now() + grace;
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    break self.child.wait().ok();
                }
            }
        };
        if let Some(h) = self.stderr_thread.take() {
            let _ = h.join();
        }
        self.alive = false;
        status
    }
}

impl ExternalSegmenter {
    /// Start `command` through `sh -c` and complete the handshake.
    pub fn spawn(command: &str, config: &ExternalConfig) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {command}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::SpawnFailure {
                command: command.to_string(),
                reason: e.to_string(),
            })?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                let msg = match reader.read_line(&mut buf) {
                    Ok(0) => Line::Eof,
                    Ok(_) => Line::Text(buf),
                    Err(e) => Line::Failed(e),
                };
                let done = !matches!(msg, Line::Text(_));
                if tx.send(msg).is_err() || done {
                    break;
                }
            }
        });

        let stderr = Arc::new(Mutex::new(String::new()));
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        let stderr_thread = thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock()
                    .unwrap()
                    .push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });

        let stdin = child.stdin.take();
        let mut channel = Channel {
            child,
            stdin,
            lines,
            stderr_thread: Some(stderr_thread),
            alive: true,
        };
        let stderr_text = |s: &Arc<Mutex<String>>| s.lock().unwrap().clone();

        let early_exit = |channel: &mut Channel, stderr: &Arc<Mutex<String>>| {
            let status = channel.reap(Duration::from_secs(2));
            let text = stderr_text(stderr);
            match status.and_then(|s| s.code()) {
                Some(126) | Some(127) => Error::SpawnFailure {
                    command: command.to_string(),
                    reason: text.trim().to_string(),
                },
                _ => Error::BackendFailure {
                    message: format!("adapter exited during the handshake ({status:?})"),
                    stderr: text,
                },
            }
        };

        if channel
            .send(&Message::Hello {
                version: PROTOCOL_VERSION,
            })
            .is_err()
        {
            return Err(early_exit(&mut channel, &stderr));
        }
        let reply = match channel.recv(config.handshake_timeout) {
            Ok(r) => r,
            Err(e) => {
                channel.reap(Duration::ZERO);
                return Err(e);
            }
        };
        let (name, capabilities) = match reply {
            Received::Message(Message::Ready {
                name,
                capabilities,
                version,
            }) => {
                if let Some(v) = version.filter(|&v| v != PROTOCOL_VERSION) {
                    channel.reap(Duration::ZERO);
                    return Err(Error::VersionMismatch(format!(
                        "gateway speaks version {PROTOCOL_VERSION}, adapter `{name}` answered version {v}"
                    )));
                }
                (name, capabilities)
            }
            Received::Message(Message::Error { message, .. }) => {
                channel.reap(Duration::from_secs(2));
                return Err(Error::VersionMismatch(format!(
                    "adapter rejected version {PROTOCOL_VERSION}: {message}"
                )));
            }
            Received::Message(other) => {
                channel.reap(Duration::ZERO);
                return Err(Error::ProtocolViolation(format!(
                    "expected a ready message, got {other:?}"
                )));
            }
            Received::Timeout => {
                channel.reap(Duration::ZERO);
                return Err(Error::HandshakeTimeout(config.handshake_timeout));
            }
            Received::Closed => return Err(early_exit(&mut channel, &stderr)),
        };

        Ok(ExternalSegmenter {
            command: command.to_string(),
            name,
            capabilities,
            config: config.clone(),
            stderr,
            channel: Mutex::new(channel),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn capabilities(&self) -> &[Capability] {
        &self.capabilities
    }

    /// Everything the adapter has written to stderr so far.
    pub fn stderr(&self) -> String {
        self.stderr.lock().unwrap().clone()
    }

    fn failure(&self, message: String) -> Error {
        Error::BackendFailure {
            message,
            stderr: self.stderr(),
        }
    }
}

impl Segmenter for ExternalSegmenter {
    fn name(&self) -> &str {
        &self.name
    }

    fn segment(&self, req: &SegmentationRequest) -> Result<SegmentationResult> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if !ch.alive {
            return Err(self.failure("adapter is no longer running".into()));
        }
        std::fs::create_dir_all(&req.out_dir).map_err(|e| Error::io_at(&req.out_dir, e))?;
        if let Err(e) = ch.send(&Message::segment(req)) {
            let status = ch.reap(Duration::from_secs(2));
            return Err(self.failure(format!(
                "cannot write request ({e}); adapter status {status:?}"
            )));
        }
        let reply = match ch.recv(self.config.request_timeout) {
            Ok(r) => r,
            Err(e) => {
                ch.reap(Duration::ZERO);
                return Err(e);
            }
        };
        match reply {
            Received::Message(Message::Result {
                case_id,
                mask,
                confidence,
            }) => {
                if case_id != req.case_id {
                    return Err(Error::ProtocolViolation(format!(
                        "result for case `{case_id}` answers request `{}`",
                        req.case_id
                    )));
                }
                let mask = read_mask(&mask).map_err(|e| match e {
                    Error::NonBinaryMask { .. }
                    | Error::MalformedHeader(_)
                    | Error::UnsupportedDatatype(_) => {
                        Error::ProtocolViolation(format!("result mask {}: {e}", mask.display()))
                    }
                    other => other,
                })?;
                Ok(SegmentationResult {
                    case_id,
                    mask,
                    confidence,
                })
            }
            Received::Message(Message::Error { message, .. }) => Err(self.failure(message)),
            Received::Message(other) => {
                ch.reap(Duration::ZERO);
                Err(Error::ProtocolViolation(format!(
                    "expected a result message, got {other:?}"
                )))
            }
            Received::Timeout => {
                ch.reap(Duration::ZERO);
                Err(self.failure(format!(
                    "no answer within {:?} for case {}",
                    self.config.request_timeout, req.case_id
                )))
            }
            Received::Closed => {
                let status = ch.reap(Duration::from_secs(2));
                Err(self.failure(format!(
                    "adapter exited while handling case {} ({status:?})",
                    req.case_id
                )))
            }
        }
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        if ch.alive {
            let _ = ch.send(&Message::Bye);
            ch.reap(Duration::from_secs(2));
        }
    }
}
