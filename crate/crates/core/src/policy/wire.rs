//! Newline-delimited JSON policy protocol over TCP.
//!
//! Request: `{"id", "images": {"tactile_left", "tactile_right", "vision"},
//! "instruction", "shape"}` with base64 PNG images. Response:
//! `{"id", "action": {"x", "y", "rz"}}`. Any failure is answered with
//! `{"id", "error"}` and the connection is closed. One request is in flight
//! per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ActContext, Policy};
use crate::episode::Action;
use crate::error::{Error, Result};
use crate::geometry::ShapeKind;
use crate::raster::RgbImage;
use crate::sensors::{Observation, TactileMontage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireImages {
    pub tactile_left: String,
    pub tactile_right: String,
    pub vision: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub images: WireImages,
    pub instruction: String,
    pub shape: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub id: Option<u64>,
    pub error: String,
}

/// A decoded request as handed to a serving handler.
#[derive(Clone, Debug)]
pub struct Query {
    pub id: u64,
    pub observation: Observation,
    pub instruction: String,
    pub shape: ShapeKind,
}

pub type Handler = dyn Fn(&Query) -> Result<Action> + Send + Sync;

fn png_b64(img: &RgbImage) -> Result<String> {
    Ok(B64.encode(img.encode_png()?))
}

fn decode_b64_png(name: &str, s: &str) -> Result<RgbImage> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Protocol(format!("{name}: invalid base64: {e}")))?;
    RgbImage::decode_png(&bytes).map_err(|e| Error::Protocol(format!("{name}: {e}")))
}

pub fn encode_request(id: u64, obs: &Observation, instruction: &str, shape: ShapeKind) -> Result<WireRequest> {
    Ok(WireRequest {
        id,
        images: WireImages {
            tactile_left: png_b64(&obs.tactile_left.image)?,
            tactile_right: png_b64(&obs.tactile_right.image)?,
            vision: png_b64(&obs.vision)?,
        },
        instruction: instruction.to_string(),
        shape: shape.name().to_string(),
    })
}

pub fn decode_request(req: &WireRequest) -> Result<Query> {
    let shape = ShapeKind::parse(&req.shape)
        .ok_or_else(|| Error::Protocol(format!("unknown shape {:?}", req.shape)))?;
    Ok(Query {
        id: req.id,
        observation: Observation {
            tactile_left: TactileMontage {
                image: decode_b64_png("tactile_left", &req.images.tactile_left)?,
            },
            tactile_right: TactileMontage {
                image: decode_b64_png("tactile_right", &req.images.tactile_right)?,
            },
            vision: decode_b64_png("vision", &req.images.vision)?,
        },
        instruction: req.instruction.clone(),
        shape,
    })
}

/// One JSON object followed by `\n`.
pub fn to_line<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)? + "\n")
}

/// Answers one request line. `Err` carries the error frame to send before
/// closing the connection.
pub fn answer_line(line: &str, handler: &Handler) -> std::result::Result<WireResponse, WireError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| WireError {
        id: None,
        error: format!("malformed JSON: {e}"),
    })?;
    let id = value.get("id").and_then(serde_json::Value::as_u64);
    let fail = |e: String| WireError { id, error: e };
    let req: WireRequest =
        serde_json::from_value(value).map_err(|e| fail(format!("invalid request: {e}")))?;
    let query = decode_request(&req).map_err(|e| fail(e.to_string()))?;
    let action = handler(&query).map_err(|e| fail(e.to_string()))?;
    if !action.is_finite() {
        return Err(fail("policy produced a non-finite action".into()));
    }
    Ok(WireResponse {
        id: req.id,
        action: action.clamped(),
    })
}

fn handle_connection(stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match answer_line(&line, handler) {
            Ok(resp) => {
                let out = to_line(&resp).map_err(std::io::Error::other)?;
                writer.write_all(out.as_bytes())?;
            }
            Err(frame) => {
                let out = to_line(&frame).map_err(std::io::Error::other)?;
                writer.write_all(out.as_bytes())?;
                writer.flush()?;
                return Ok(());
            }
        }
        writer.flush()?;
    }
    Ok(())
}

/// Serves connections until the listener fails, one thread per connection.
pub fn serve(listener: TcpListener, handler: Arc<Handler>) -> Result<()> {
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let h = Arc::clone(&handler);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, h.as_ref()) {
                log::warn!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// A policy answered by a remote server. Idle connections are pooled so
/// parallel episodes each hold their own.
pub struct RemotePolicy {
    addr: String,
    timeout: Duration,
    pool: Mutex<Vec<Conn>>,
    next_id: AtomicU64,
}

impl RemotePolicy {
    pub fn new(addr: &str) -> Self {
        Self {
            addr: addr.to_string(),
            timeout: Duration::from_secs(30),
            pool: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn connect(&self) -> Result<Conn> {
        let transport = |e: std::io::Error| Error::Transport(format!("{}: {e}", self.addr));
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(transport)?
            .next()
            .ok_or_else(|| Error::Transport(format!("{}: no address", self.addr)))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(transport)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let writer = stream.try_clone().map_err(transport)?;
        Ok(Conn {
            reader: BufReader::new(stream),
            writer,
        })
    }

    /// Sends one request and waits for its answer.
    pub fn query(&self, obs: &Observation, instruction: &str, shape: ShapeKind) -> Result<Action> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = to_line(&encode_request(id, obs, instruction, shape)?)?;
        let pooled = self.pool.lock().expect("pool lock").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => self.connect()?,
        };
        let transport = |e: std::io::Error| Error::Transport(e.to_string());
        conn.writer.write_all(line.as_bytes()).map_err(transport)?;
        conn.writer.flush().map_err(transport)?;
        let mut reply = String::new();
        let n = conn.reader.read_line(&mut reply).map_err(transport)?;
        if n == 0 {
            return Err(Error::Transport("connection closed by server".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if value.get("error").is_some() {
            let frame: WireError = serde_json::from_value(value)?;
            return Err(Error::Transport(format!("server error: {}", frame.error)));
        }
        let resp: WireResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("invalid response: {e}")))?;
        if resp.id != id {
            return Err(Error::Protocol(format!("response id {} for request {id}", resp.id)));
        }
        self.pool.lock().expect("pool lock").push(conn);
        Ok(resp.action.clamped())
    }
}

impl Policy for RemotePolicy {
    fn act(&self, ctx: &ActContext) -> Result<Action> {
        self.query(ctx.observation, ctx.instruction, ctx.shape)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.addr)
    }
}
