//! Binary frame protocol for out-of-process noise predictors.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EPS1"
//!      4     2  version (u16, = 1)
//!      6     1  kind (0 handshake, 1 request, 2 response, 3 error)
//!      7     4  t  (u32)
//!     11     4  H  (u32)
//!     15     4  W  (u32)
//!     19     4  C  (u32)
//!     23  4HWC  payload, f32, row-major, channel-last
//! ```
//!
//! Integers and floats are little-endian. A handshake carries
//! `[T, beta_start, beta_end]` as a 1×3×1 payload with `t = T` and is
//! acknowledged by an identical frame. An error frame is 1×W×1 whose payload
//! bytes are a UTF-8 message padded with NUL to a multiple of four.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use thiserror::Error;

use crate::diffusion::{Denoiser, DenoiserError, ScheduleConfig};

pub const MAGIC: [u8; 4] = *b"EPS1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 23;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 30;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Handshake = 0,
    Request = 1,
    Response = 2,
    Error = 3,
}

impl TryFrom<u8> for FrameKind {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            0 => Ok(Self::Handshake),
            1 => Ok(Self::Request),
            2 => Ok(Self::Response),
            3 => Ok(Self::Error),
            other => Err(WireError::BadKind(other)),
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u16),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("unexpected frame kind {got:?}, expected {expected:?}")]
    UnexpectedKind { expected: FrameKind, got: FrameKind },
    #[error("dimension mismatch: got t={got:?}, expected {expected:?} (t, H, W, C)")]
    DimMismatch { expected: (u32, u32, u32, u32), got: (u32, u32, u32, u32) },
    #[error("server error: {0}")]
    Server(String),
    #[error("short read: needed {needed} bytes, got {got}")]
    ShortRead { needed: usize, got: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("payload of {0} bytes exceeds the frame size limit")]
    TooLarge(u128),
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("handshake rejected: {0}")]
    Handshake(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Closed,
    #[error("invalid endpoint {0:?}")]
    Endpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireError {
    /// Whether a fresh connection might succeed where this one failed.
    pub fn is_connection_loss(&self) -> bool {
        matches!(self, Self::Closed | Self::ShortRead { .. } | Self::Io(_))
    }
}

impl From<WireError> for DenoiserError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::NonFinite => DenoiserError::NonFinite,
            other => DenoiserError::Other(Box::new(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsFrame {
    pub kind: FrameKind,
    pub t: u32,
    pub h: u32,
    pub w: u32,
    pub c: u32,
    pub payload: Vec<f32>,
}

impl EpsFrame {
    pub fn dims(&self) -> (u32, u32, u32, u32) {
        (self.t, self.h, self.w, self.c)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.payload.len()
    }

    pub fn error(message: &str) -> Self {
        let mut bytes = message.as_bytes().to_vec();
        bytes.resize(bytes.len().div_ceil(4).max(1) * 4, 0);
        let payload: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Self { kind: FrameKind::Error, t: 0, h: 1, w: payload.len() as u32, c: 1, payload }
    }

    /// Message of an error frame, NUL padding removed.
    pub fn message(&self) -> String {
        let bytes: Vec<u8> = self.payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        let end = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        String::from_utf8_lossy(&bytes[..end]).into_owned()
    }

    pub fn handshake(config: &ScheduleConfig) -> Self {
        Self {
            kind: FrameKind::Handshake,
            t: config.train_steps as u32,
            h: 1,
            w: 3,
            c: 1,
            payload: vec![config.train_steps as f32, config.beta_start as f32, config.beta_end as f32],
        }
    }
}

fn payload_len(h: u32, w: u32, c: u32) -> Result<usize, WireError> {
    let bytes = 4u128 * h as u128 * w as u128 * c as u128;
    if bytes > MAX_PAYLOAD_BYTES as u128 {
        return Err(WireError::TooLarge(bytes));
    }
    Ok(bytes as usize)
}

pub fn encode_frame(frame: &EpsFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(frame.kind as u8);
    for v in [frame.t, frame.h, frame.w, frame.c] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &frame.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Header {
    kind: FrameKind,
    t: u32,
    h: u32,
    w: u32,
    c: u32,
}

fn parse_header(b: &[u8; HEADER_LEN]) -> Result<Header, WireError> {
    let magic = [b[0], b[1], b[2], b[3]];
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([b[4], b[5]]);
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    let kind = FrameKind::try_from(b[6])?;
    let u = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    Ok(Header { kind, t: u(7), h: u(11), w: u(15), c: u(19) })
}

fn parse_payload(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<EpsFrame, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::ShortRead { needed: HEADER_LEN, got: bytes.len() });
    }
    let hdr = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    let len = payload_len(hdr.h, hdr.w, hdr.c)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < len {
        return Err(WireError::ShortRead { needed: HEADER_LEN + len, got: bytes.len() });
    }
    if body.len() > len {
        return Err(WireError::TrailingBytes(body.len() - len));
    }
    Ok(EpsFrame { kind: hdr.kind, t: hdr.t, h: hdr.h, w: hdr.w, c: hdr.c, payload: parse_payload(body) })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, io::Error> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads one frame from a stream. End of stream before the first byte is
/// [`WireError::Closed`]; end of stream inside a frame is a short read.
pub fn read_frame<R: Read>(r: &mut R) -> Result<EpsFrame, WireError> {
    let mut head = [0u8; HEADER_LEN];
    let got = read_full(r, &mut head)?;
    if got == 0 {
        return Err(WireError::Closed);
    }
    if got < HEADER_LEN {
        return Err(WireError::ShortRead { needed: HEADER_LEN, got });
    }
    let hdr = parse_header(&head)?;
    let len = payload_len(hdr.h, hdr.w, hdr.c)?;
    let mut body = vec![0u8; len];
    let got = read_full(r, &mut body)?;
    if got < len {
        return Err(WireError::ShortRead { needed: HEADER_LEN + len, got: HEADER_LEN + got });
    }
    Ok(EpsFrame { kind: hdr.kind, t: hdr.t, h: hdr.h, w: hdr.w, c: hdr.c, payload: parse_payload(&body) })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &EpsFrame) -> Result<(), WireError> {
    w.write_all(&encode_frame(frame))?;
    w.flush()?;
    Ok(())
}

/// Request frame for a single-channel image. Values are narrowed to `f32`.
pub fn request_frame(y_t: &Array2<f64>, t: usize) -> Result<EpsFrame, WireError> {
    let (h, w) = y_t.dim();
    let payload: Vec<f32> = y_t.iter().map(|&v| v as f32).collect();
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(WireError::NonFinite);
    }
    Ok(EpsFrame { kind: FrameKind::Request, t: t as u32, h: h as u32, w: w as u32, c: 1, payload })
}

pub fn encode_request(y_t: &Array2<f64>, t: usize) -> Result<Vec<u8>, WireError> {
    Ok(encode_frame(&request_frame(y_t, t)?))
}

/// Checks a response frame against the outstanding request and widens it.
pub fn response_grid(frame: EpsFrame, t: usize, shape: (usize, usize)) -> Result<Array2<f64>, WireError> {
    match frame.kind {
        FrameKind::Response => {}
        FrameKind::Error => return Err(WireError::Server(frame.message())),
        got => return Err(WireError::UnexpectedKind { expected: FrameKind::Response, got }),
    }
    let expected = (t as u32, shape.0 as u32, shape.1 as u32, 1);
    if frame.dims() != expected {
        return Err(WireError::DimMismatch { expected, got: frame.dims() });
    }
    if frame.payload.iter().any(|v| !v.is_finite()) {
        return Err(WireError::NonFinite);
    }
    let data = frame.payload.into_iter().map(f64::from).collect();
    Ok(Array2::from_shape_vec(shape, data).expect("payload length checked by dims"))
}

pub fn decode_response(bytes: &[u8], t: usize, shape: (usize, usize)) -> Result<Array2<f64>, WireError> {
    response_grid(decode_frame(bytes)?, t, shape)
}

/// Where a remote predictor lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port` or `host:port`.
    Tcp(String),
    /// `cmd:program arg...`, spoken to over the child's stdin/stdout.
    Command(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, WireError> {
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(WireError::Endpoint(s.to_owned()));
            }
            return Ok(Self::Command(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        match addr.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Self::Tcp(addr.to_owned())),
            _ => Err(WireError::Endpoint(s.to_owned())),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Tcp(a) => write!(f, "tcp://{a}"),
            Self::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

enum Transport {
    Tcp(TcpStream),
    Child(Child),
}

struct Connection {
    writer: BufWriter<Box<dyn Write + Send>>,
    frames: Receiver<Result<EpsFrame, WireError>>,
    transport: Transport,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, WireError> {
        let (reader, writer, transport): (Box<dyn Read + Send>, Box<dyn Write + Send>, Transport) = match endpoint {
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
                let stream = TcpStream::connect(&addrs[..])?;
                stream.set_nodelay(true)?;
                (Box::new(stream.try_clone()?), Box::new(stream.try_clone()?), Transport::Tcp(stream))
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdout), Box::new(stdin), Transport::Child(child))
            }
        };
        let (tx, frames) = mpsc::channel();
        thread::Builder::new().name("eps-reader".into()).spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let frame = read_frame(&mut reader);
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        })?;
        Ok(Self { writer: BufWriter::new(writer), frames, transport })
    }

    fn round_trip(&mut self, frame: &EpsFrame, timeout: Duration) -> Result<EpsFrame, WireError> {
        write_frame(&mut self.writer, frame)?;
        match self.frames.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => Err(WireError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        }
    }

    fn handshake(&mut self, schedule: &ScheduleConfig, timeout: Duration) -> Result<(), WireError> {
        let hello = EpsFrame::handshake(schedule);
        let reply = self.round_trip(&hello, timeout)?;
        match reply.kind {
            FrameKind::Error => Err(WireError::Handshake(reply.message())),
            _ if reply == hello => Ok(()),
            _ => Err(WireError::Handshake("acknowledgement does not echo the handshake".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        match &mut self.transport {
            Transport::Tcp(s) => {
                let _ = s.shutdown(Shutdown::Both);
            }
            Transport::Child(child) => {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// [`Denoiser`] backed by a frame-protocol server. One request is in flight
/// at a time; a lost connection is reopened once per request.
pub struct RemoteDenoiser {
    endpoint: Endpoint,
    schedule: ScheduleConfig,
    timeout: Duration,
    conn: Option<Connection>,
}

impl std::fmt::Debug for RemoteDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteDenoiser")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .field("connected", &self.conn.is_some())
            .finish()
    }
}

impl RemoteDenoiser {
    /// Connects and performs the schedule handshake.
    pub fn connect(endpoint: Endpoint, schedule: ScheduleConfig, timeout: Duration) -> Result<Self, WireError> {
        let mut d = Self { endpoint, schedule, timeout, conn: None };
        d.reconnect()?;
        Ok(d)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn reconnect(&mut self) -> Result<(), WireError> {
        self.conn = None;
        let mut conn = Connection::open(&self.endpoint)?;
        conn.handshake(&self.schedule, self.timeout)?;
        self.conn = Some(conn);
        Ok(())
    }

    fn attempt(&mut self, frame: &EpsFrame) -> Result<EpsFrame, WireError> {
        if self.conn.is_none() {
            self.reconnect()?;
        }
        let conn = self.conn.as_mut().expect("connected");
        let reply = conn.round_trip(frame, self.timeout);
        if reply.is_err() {
            // The stream position is unknown after any failure.
            self.conn = None;
        }
        reply
    }

    pub fn predict(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, WireError> {
        let frame = request_frame(y_t, t)?;
        let reply = match self.attempt(&frame) {
            Err(e) if e.is_connection_loss() => self.attempt(&frame)?,
            other => other?,
        };
        response_grid(reply, t, y_t.dim())
    }
}

impl Denoiser for RemoteDenoiser {
    fn predict_eps(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, DenoiserError> {
        Ok(self.predict(y_t, t)?)
    }
}

/// Reply policy of the loopback [`StubServer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// All-zero response.
    Zero,
    /// Request payload echoed back.
    Identity,
}

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub mode: StubMode,
    pub schedule: ScheduleConfig,
    /// Stop serving for good after this many responses.
    pub die_after: Option<usize>,
    /// Delay before each response.
    pub delay: Duration,
}

impl StubConfig {
    pub fn new(mode: StubMode) -> Self {
        Self { mode, schedule: ScheduleConfig::default(), die_after: None, delay: Duration::ZERO }
    }
}

struct StubState {
    config: StubConfig,
    served: AtomicUsize,
    dead: AtomicBool,
}

impl StubState {
    fn reply(&self, frame: &EpsFrame) -> EpsFrame {
        match frame.kind {
            FrameKind::Handshake => {
                if *frame == EpsFrame::handshake(&self.config.schedule) {
                    frame.clone()
                } else {
                    EpsFrame::error("schedule mismatch")
                }
            }
            FrameKind::Request => {
                let payload = match self.config.mode {
                    StubMode::Zero => vec![0.0; frame.payload.len()],
                    StubMode::Identity => frame.payload.clone(),
                };
                EpsFrame { kind: FrameKind::Response, payload, ..frame.clone() }
            }
            _ => EpsFrame::error("unexpected frame kind"),
        }
    }

    fn serve<R: Read, W: Write>(&self, reader: R, writer: W) -> Result<(), WireError> {
        let mut reader = BufReader::new(reader);
        let mut writer = BufWriter::new(writer);
        loop {
            if self.dead.load(Ordering::SeqCst) {
                return Ok(());
            }
            let frame = match read_frame(&mut reader) {
                Ok(f) => f,
                Err(WireError::Closed) => return Ok(()),
                Err(e) => {
                    let _ = write_frame(&mut writer, &EpsFrame::error(&e.to_string()));
                    return Err(e);
                }
            };
            let is_request = frame.kind == FrameKind::Request;
            if is_request {
                if let Some(limit) = self.config.die_after {
                    if self.served.load(Ordering::SeqCst) >= limit {
                        self.dead.store(true, Ordering::SeqCst);
                        return Ok(());
                    }
                }
                if !self.config.delay.is_zero() {
                    thread::sleep(self.config.delay);
                }
            }
            let reply = self.reply(&frame);
            write_frame(&mut writer, &reply)?;
            if reply.kind == FrameKind::Error {
                return Ok(());
            }
            if is_request {
                self.served.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}

/// Serves one client over an arbitrary byte stream (for example stdio)
/// until it disconnects.
pub fn serve_stream<R: Read, W: Write>(config: StubConfig, reader: R, writer: W) -> Result<(), WireError> {
    let state = StubState { config, served: AtomicUsize::new(0), dead: AtomicBool::new(false) };
    state.serve(reader, writer)
}

/// Loopback TCP server answering handshakes and requests per [`StubMode`].
pub struct StubServer {
    addr: std::net::SocketAddr,
    state: Arc<StubState>,
}

impl StubServer {
    pub fn spawn(config: StubConfig) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind<A: ToSocketAddrs>(addr: A, config: StubConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(StubState { config, served: AtomicUsize::new(0), dead: AtomicBool::new(false) });
        let shared = Arc::clone(&state);
        thread::Builder::new().name("eps-stub".into()).spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                if shared.dead.load(Ordering::SeqCst) {
                    drop(stream);
                    continue;
                }
                let state = Arc::clone(&shared);
                thread::spawn(move || {
                    let Ok(reader) = stream.try_clone() else { return };
                    let _ = state.serve(reader, &stream);
                    let _ = stream.shutdown(Shutdown::Both);
                });
            }
        })?;
        Ok(Self { addr, state })
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Tcp(self.addr.to_string())
    }

    pub fn served(&self) -> usize {
        self.state.served.load(Ordering::SeqCst)
    }

    pub fn kill(&self) {
        self.state.dead.store(true, Ordering::SeqCst);
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.kill();
        // Wake the accept loop so it observes the flag.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(100));
    }
}
