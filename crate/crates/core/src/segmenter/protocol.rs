//! Framing for the `axiseg-seg/1` segmenter protocol.
//!
//! All messages travel over the backend's standard streams. Control messages
//! are single JSON lines; payloads are raw little-endian `f32`.
//!
//! ```text
//! parent -> child  {"proto":"axiseg-seg/1","classes":C}\n
//! child  -> parent {"ok":true,"classes":C}\n
//! parent -> child  {"id":n,"h":H,"w":W}\n  + H*W f32, row-major
//! child  -> parent {"id":n}\n              + C*H*W f32, channel-major
//! ```
//!
//! The parent closes the child's stdin to shut it down; the child exits 0.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid2, ProbMap};

pub const PROTO: &str = "axiseg-seg/1";

/// Longest control line accepted, to bound memory on a garbage stream.
pub const MAX_LINE: usize = 4096;

/// Largest in-plane pixel count accepted in a request.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub proto: String,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloReply {
    pub ok: bool,
    #[serde(default)]
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub id: u64,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub id: u64,
}

pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line)
}

/// Reads one newline-terminated line without the terminator. `Ok(None)` on a
/// clean EOF before any byte.
pub fn read_line<R: BufRead>(r: &mut R) -> io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = r.by_ref().take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        let msg = if buf.len() > MAX_LINE {
            "control line too long"
        } else {
            "stream ended inside a control line"
        };
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, msg));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "control line is not UTF-8"))
}

pub fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)
}

pub fn read_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn protocol(message: impl Into<String>) -> Error {
    Error::Protocol {
        message: message.into(),
        stderr_tail: String::new(),
    }
}

fn backend(context: &str, e: io::Error) -> Error {
    Error::Backend {
        message: format!("{context}: {e}"),
        stderr_tail: String::new(),
    }
}

/// Parses a JSON control line into `T`, reporting the raw line on failure.
pub fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, what: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| protocol(format!("bad {what} line {line:?}: {e}")))
}

/// Server side: answers the handshake. `supported` is the class count the
/// backend can produce; `None` adopts whatever the parent asks for. Returns
/// the agreed class count.
pub fn accept_handshake<R: BufRead, W: Write>(
    input: &mut R,
    output: &mut W,
    supported: Option<usize>,
) -> Result<usize> {
    let line = read_line(input)
        .map_err(|e| backend("reading handshake", e))?
        .ok_or_else(|| protocol("input closed before handshake"))?;
    let hello: Hello = parse_line(&line, "handshake")?;
    let refusal = if hello.proto != PROTO {
        Some(format!("unsupported protocol {:?}, expected {PROTO:?}", hello.proto))
    } else if hello.classes < 2 {
        Some(format!("class count {} is below 2", hello.classes))
    } else {
        match supported {
            Some(c) if c != hello.classes => {
                Some(format!("backend serves {c} classes, parent asked for {}", hello.classes))
            }
            _ => None,
        }
    };
    let reply = HelloReply {
        ok: refusal.is_none(),
        classes: supported.unwrap_or(hello.classes),
        error: refusal.clone(),
    };
    write_json_line(output, &reply).map_err(|e| backend("writing handshake", e))?;
    output.flush().map_err(|e| backend("writing handshake", e))?;
    match refusal {
        Some(msg) => Err(protocol(msg)),
        None => Ok(hello.classes),
    }
}

/// Server side: reads the next request. `Ok(None)` when the parent has closed
/// the stream.
pub fn read_request<R: BufRead>(input: &mut R) -> Result<Option<(u64, Grid2<f32>)>> {
    let Some(line) = read_line(input).map_err(|e| backend("reading request", e))? else {
        return Ok(None);
    };
    let head: RequestHeader = parse_line(&line, "request")?;
    if head.h == 0 || head.w == 0 || head.h.saturating_mul(head.w) > MAX_PIXELS {
        return Err(protocol(format!("request size {}x{} not accepted", head.h, head.w)));
    }
    let data = read_f32s(input, head.h * head.w).map_err(|e| backend("reading request payload", e))?;
    Ok(Some((head.id, Grid2::new(head.h, head.w, data)?)))
}

pub fn write_response<W: Write>(output: &mut W, id: u64, map: &ProbMap) -> Result<()> {
    write_json_line(output, &ResponseHeader { id })
        .and_then(|_| write_f32s(output, map.data()))
        .and_then(|_| output.flush())
        .map_err(|e| backend("writing response", e))
}

/// Runs a complete backend session: handshake, then one response per request
/// until the input closes. `respond` receives the request id, the image and
/// the agreed class count.
pub fn serve<R, W, F>(input: &mut R, output: &mut W, supported: Option<usize>, mut respond: F) -> Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(u64, &Grid2<f32>, usize) -> Result<ProbMap>,
{
    let classes = accept_handshake(input, output, supported)?;
    while let Some((id, image)) = read_request(input)? {
        let map = respond(id, &image, classes)?;
        write_response(output, id, &map)?;
    }
    Ok(())
}
