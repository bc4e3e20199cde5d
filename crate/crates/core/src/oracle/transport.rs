use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OracleError, OracleRequest, OracleResponse};

/// Moves one request line to the oracle and returns one response line.
/// Lines exclude the trailing newline.
pub trait Transport: Send {
    fn exchange(&mut self, id: u64, line: &str, timeout: Duration) -> Result<String, OracleError>;
}

impl Transport for Box<dyn Transport> {
    fn exchange(&mut self, id: u64, line: &str, timeout: Duration) -> Result<String, OracleError> {
        (**self).exchange(id, line, timeout)
    }
}

/// Where to find an oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `stdio:<program> [args...]`, split on whitespace.
    Stdio(Vec<String>),
    /// `replay:<transcript.jsonl>`
    Replay(PathBuf),
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err("stdio endpoint needs a command".into());
            }
            Ok(Endpoint::Stdio(argv))
        } else if let Some(path) = s.strip_prefix("replay:") {
            Ok(Endpoint::Replay(PathBuf::from(path)))
        } else {
            Err(format!("unknown endpoint {s:?}; expected tcp://host:port, stdio:<cmd>, or replay:<file>"))
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
            Endpoint::Replay(p) => write!(f, "replay:{}", p.display()),
        }
    }
}

impl Endpoint {
    pub fn open(&self, timeout: Duration) -> Result<Box<dyn Transport>, OracleError> {
        Ok(match self {
            Endpoint::Tcp(addr) => Box::new(TcpTransport::connect(addr, timeout)?),
            Endpoint::Stdio(argv) => Box::new(StdioTransport::spawn(argv)?),
            Endpoint::Replay(path) => Box::new(ReplayTransport::load(path)?),
        })
    }
}

fn trim_newline(mut s: String) -> String {
    while s.ends_with('\n') || s.ends_with('\r') {
        s.pop();
    }
    s
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, OracleError> {
        let connect_err = |message: String| OracleError::Connect {
            endpoint: format!("tcp://{addr}"),
            message,
        };
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| connect_err(e.to_string()))?
            .next()
            .ok_or_else(|| connect_err("no address".into()))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(|e| connect_err(e.to_string()))?;
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, id: u64, line: &str, timeout: Duration) -> Result<String, OracleError> {
        self.writer.set_write_timeout(Some(timeout))?;
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut buf = String::new();
        match self.reader.read_line(&mut buf) {
            Ok(0) => Err(OracleError::Closed),
            Ok(_) => Ok(trim_newline(buf)),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                Err(OracleError::Timeout {
                    id,
                    secs: timeout.as_secs_f64(),
                })
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Child process speaking the protocol on its stdin/stdout. A reader thread
/// forwards stdout lines so reads can time out.
pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl StdioTransport {
    pub fn spawn(argv: &[String]) -> Result<Self, OracleError> {
        let connect_err = |message: String| OracleError::Connect {
            endpoint: format!("stdio:{}", argv.join(" ")),
            message,
        };
        let (program, args) = argv.split_first().ok_or_else(|| connect_err("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| connect_err(e.to_string()))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(StdioTransport { child, stdin, lines: rx })
    }
}

impl Transport for StdioTransport {
    fn exchange(&mut self, id: u64, line: &str, timeout: Duration) -> Result<String, OracleError> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => Ok(trim_newline(l)),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(OracleError::Timeout {
                id,
                secs: timeout.as_secs_f64(),
            }),
            Err(RecvTimeoutError::Disconnected) => Err(OracleError::Closed),
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Any `FnMut(line) -> line` handler, e.g. [`super::StubOracle`].
pub struct InProcess<F>(pub F);

impl<F: FnMut(&str) -> String + Send> Transport for InProcess<F> {
    fn exchange(&mut self, _id: u64, line: &str, _timeout: Duration) -> Result<String, OracleError> {
        Ok((self.0)(line))
    }
}

/// SHA-256 (hex) of the request's canonical JSON with the `id` removed.
/// Canonical JSON has sorted object keys and no whitespace.
pub fn request_key(request_line: &str) -> Result<String, OracleError> {
    let mut v: serde_json::Value =
        serde_json::from_str(request_line).map_err(|e| OracleError::Malformed(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("id");
    }
    let canonical = serde_json::to_string(&v).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: OracleRequest,
    pub response: OracleResponse,
}

/// Forwards to `inner` and appends every exchange to a transcript.
pub struct RecordingTransport<T> {
    inner: T,
    out: BufWriter<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn create(inner: T, path: &Path) -> Result<Self, OracleError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingTransport {
            inner,
            out: BufWriter::new(file),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn exchange(&mut self, id: u64, line: &str, timeout: Duration) -> Result<String, OracleError> {
        let reply = self.inner.exchange(id, line, timeout)?;
        let entry = TranscriptEntry {
            key: request_key(line)?,
            request: serde_json::from_str(line).map_err(|e| OracleError::Malformed(e.to_string()))?,
            response: serde_json::from_str(&reply).map_err(|e| OracleError::Malformed(e.to_string()))?,
        };
        serde_json::to_writer(&mut self.out, &entry).expect("entry serializes");
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(reply)
    }
}

/// Answers from a transcript. Repeated identical requests are served their
/// recorded responses in order; the last one repeats once exhausted. The
/// response id is rewritten to the current request id.
pub struct ReplayTransport {
    entries: HashMap<String, VecDeque<OracleResponse>>,
}

impl ReplayTransport {
    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let file = File::open(path).map_err(|e| OracleError::Connect {
            endpoint: format!("replay:{}", path.display()),
            message: e.to_string(),
        })?;
        let mut entries: HashMap<String, VecDeque<OracleResponse>> = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|err| OracleError::Malformed(format!("transcript line {}: {err}", n + 1)))?;
            entries.entry(e.key).or_default().push_back(e.response);
        }
        Ok(ReplayTransport { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn exchange(&mut self, id: u64, line: &str, _timeout: Duration) -> Result<String, OracleError> {
        let key = request_key(line)?;
        let queue = self
            .entries
            .get_mut(&key)
            .ok_or_else(|| OracleError::TranscriptMiss { key: key.clone() })?;
        let mut response = if queue.len() > 1 {
            queue.pop_front().expect("non-empty")
        } else {
            queue.front().cloned().ok_or(OracleError::TranscriptMiss { key })?
        };
        response.id = id;
        Ok(serde_json::to_string(&response).expect("response serializes"))
    }
}
