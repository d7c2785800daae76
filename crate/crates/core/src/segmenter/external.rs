//! A segmenter served by a child process over the `axiseg-seg/1` protocol.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{
    parse_line, read_f32s, read_line, write_f32s, write_json_line, Hello, HelloReply,
    RequestHeader, ResponseHeader, PROTO,
};
use super::{SliceInput, SliceSegmenter};
use crate::error::{Error, Result};
use crate::slicer::Axis;
use crate::volume::{ClassMap, ProbMap};

/// Bytes of backend stderr kept for diagnostics.
const STDERR_TAIL: usize = 4096;

/// How long a backend gets to exit after its input is closed.
const EXIT_GRACE: Duration = Duration::from_secs(5);

/// Placeholder in the command line replaced by the axis name.
pub const AXIS_PLACEHOLDER: &str = "{axis}";

/// Environment variable telling the backend which axis it serves.
pub const AXIS_ENV: &str = "AXISEG_AXIS";

pub struct ExternalSegmenter {
    classes: ClassMap,
    command: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    stderr: Arc<Mutex<VecDeque<u8>>>,
    stderr_thread: Option<JoinHandle<()>>,
    next_id: u64,
    failed: bool,
}

impl std::fmt::Debug for ExternalSegmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSegmenter")
            .field("command", &self.command)
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .finish()
    }
}

enum Failure {
    Protocol(String),
    Backend(String),
}

/// Splits a shell-style command line and substitutes the axis placeholder.
pub fn command_args(command: &str, axis: Axis) -> Result<Vec<String>> {
    let args = shell_words::split(command)
        .map_err(|e| Error::Config(format!("cannot parse backend command {command:?}: {e}")))?;
    if args.is_empty() {
        return Err(Error::Config("backend command is empty".to_string()));
    }
    Ok(args
        .into_iter()
        .map(|a| a.replace(AXIS_PLACEHOLDER, axis.name()))
        .collect())
}

impl ExternalSegmenter {
    /// Spawns the backend and performs the handshake.
    pub fn spawn(command: &str, axis: Axis, classes: ClassMap) -> Result<Self> {
        let args = command_args(command, axis)?;
        debug!("spawning {axis} backend: {args:?}");
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .env(AXIS_ENV, axis.name())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend {
                message: format!("cannot start backend {:?}: {e}", args[0]),
                stderr_tail: String::new(),
            })?;

        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let mut stderr_pipe = child.stderr.take().expect("stderr piped");
        let stderr = Arc::new(Mutex::new(VecDeque::with_capacity(STDERR_TAIL)));
        let sink = Arc::clone(&stderr);
        let stderr_thread = std::thread::spawn(move || {
            let mut buf = [0u8; 1024];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut tail = sink.lock().unwrap_or_else(|p| p.into_inner());
                tail.extend(&buf[..n]);
                let excess = tail.len().saturating_sub(STDERR_TAIL);
                tail.drain(..excess);
            }
        });

        let mut seg = ExternalSegmenter {
            classes,
            command: command.to_string(),
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
            stderr,
            stderr_thread: Some(stderr_thread),
            next_id: 0,
            failed: false,
        };
        if let Err(f) = seg.handshake() {
            return Err(seg.fail(f));
        }
        Ok(seg)
    }

    fn handshake(&mut self) -> std::result::Result<(), Failure> {
        let c = self.classes.count();
        let stdin = self.stdin.as_mut().expect("open until shutdown");
        write_json_line(stdin, &Hello { proto: PROTO.to_string(), classes: c })
            .and_then(|_| stdin.flush())
            .map_err(|e| Failure::Backend(format!("sending handshake: {e}")))?;
        let line = read_line(&mut self.stdout)
            .map_err(|e| Failure::Backend(format!("reading handshake reply: {e}")))?
            .ok_or_else(|| Failure::Backend("backend closed its output before the handshake".into()))?;
        let reply: HelloReply =
            parse_line(&line, "handshake reply").map_err(|e| Failure::Protocol(e.to_string()))?;
        if !reply.ok {
            return Err(Failure::Protocol(format!(
                "backend refused handshake: {}",
                reply.error.unwrap_or_else(|| "no reason given".into())
            )));
        }
        if reply.classes != c {
            return Err(Failure::Protocol(format!(
                "handshake class mismatch: asked for {c}, backend answered {}",
                reply.classes
            )));
        }
        Ok(())
    }

    fn exchange(&mut self, input: SliceInput<'_>) -> std::result::Result<ProbMap, Failure> {
        let id = self.next_id;
        self.next_id += 1;
        let (h, w) = (input.image.h(), input.image.w());
        let stdin = self.stdin.as_mut().expect("open until shutdown");
        write_json_line(stdin, &RequestHeader { id, h, w })
            .and_then(|_| write_f32s(stdin, input.image.data()))
            .and_then(|_| stdin.flush())
            .map_err(|e| Failure::Backend(format!("sending request {id}: {e}")))?;

        let line = read_line(&mut self.stdout)
            .map_err(|e| Failure::Backend(format!("reading response {id}: {e}")))?
            .ok_or_else(|| Failure::Backend(format!("backend closed its output before response {id}")))?;
        let head: ResponseHeader =
            parse_line(&line, "response").map_err(|e| Failure::Protocol(e.to_string()))?;
        if head.id != id {
            return Err(Failure::Protocol(format!(
                "frame id mismatch: expected {id}, got {}",
                head.id
            )));
        }
        let c = self.classes.count();
        let data = read_f32s(&mut self.stdout, c * h * w).map_err(|e| {
            Failure::Backend(format!("short read on response {id} ({} values expected): {e}", c * h * w))
        })?;
        ProbMap::new(c, h, w, data).map_err(|e| Failure::Protocol(e.to_string()))
    }

    /// Stops the child (closing its input, then killing it if it lingers) and
    /// returns what it wrote to stderr.
    fn stop(&mut self) -> String {
        drop(self.stdin.take());
        let deadline = Instant::now() + EXIT_GRACE;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => {
                    if !status.success() {
                        debug!("backend {:?} exited with {status}", self.command);
                    }
                    break;
                }
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    warn!("backend {:?} did not exit; killing it", self.command);
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break;
                }
            }
        }
        if let Some(t) = self.stderr_thread.take() {
            let _ = t.join();
        }
        let tail = self.stderr.lock().unwrap_or_else(|p| p.into_inner());
        let bytes: Vec<u8> = tail.iter().copied().collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn fail(&mut self, failure: Failure) -> Error {
        self.failed = true;
        let stderr_tail = self.stop();
        match failure {
            Failure::Protocol(message) => Error::Protocol { message, stderr_tail },
            Failure::Backend(message) => Error::Backend { message, stderr_tail },
        }
    }
}

impl SliceSegmenter for ExternalSegmenter {
    fn classes(&self) -> &ClassMap {
        &self.classes
    }

    fn segment(&mut self, input: SliceInput<'_>) -> Result<ProbMap> {
        if self.failed {
            return Err(Error::Backend {
                message: "backend already failed".to_string(),
                stderr_tail: String::new(),
            });
        }
        match self.exchange(input) {
            Ok(map) => Ok(map),
            Err(f) => Err(self.fail(f)),
        }
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        if !self.failed {
            self.stop();
        }
    }
}
