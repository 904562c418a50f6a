//! Length-prefixed TCP push/serve of `.nqt` models.
//!
//! Frame: `"NQTX" | opcode u8 | len u64 LE | payload`. Every push is a
//! single frame answered by one `ACK` (payload: bytes of that frame
//! received, u64 LE) or one `ERROR` (payload: UTF-8 reason).
//!
//! - `full`: `FULL_MODEL` carrying the file as is.
//! - `part`: `HIGH_PAYLOAD` carrying the file minus every layer's low length
//!   and low words.
//! - `low-delta`: `LOW_PAYLOAD` carrying exactly those removed fields.
//!
//! so a `part` push followed by a `low-delta` push moves the file plus one
//! extra frame header. A `MANIFEST` frame with an empty payload asks the
//! server to list what it holds; the reply is a `MANIFEST` frame with JSON.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{self, NestedModel, PartBitModel};

pub const FRAME_MAGIC: [u8; 4] = *b"NQTX";
pub const HEADER_LEN: u64 = 13;
/// Frames larger than this are refused before any allocation.
pub const MAX_PAYLOAD: u64 = 1 << 32;

const IO_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    Manifest = 0x01,
    HighPayload = 0x02,
    LowPayload = 0x03,
    FullModel = 0x04,
    Ack = 0x05,
    Error = 0x06,
}

impl TryFrom<u8> for Opcode {
    type Error = Error;
    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            0x01 => Opcode::Manifest,
            0x02 => Opcode::HighPayload,
            0x03 => Opcode::LowPayload,
            0x04 => Opcode::FullModel,
            0x05 => Opcode::Ack,
            0x06 => Opcode::Error,
            other => return Err(Error::Protocol(format!("unknown opcode 0x{other:02x}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        Self { opcode, payload }
    }

    /// Header plus payload.
    pub fn wire_len(&self) -> u64 {
        HEADER_LEN + self.payload.len() as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len() as usize);
        out.extend_from_slice(&FRAME_MAGIC);
        out.push(self.opcode as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<u64> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(self.wire_len())
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream before any byte.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>> {
        let mut header = [0u8; HEADER_LEN as usize];
        let mut got = 0;
        while got < header.len() {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(Error::Truncated {
                        expected: HEADER_LEN,
                        actual: got as u64,
                    })
                }
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if header[..4] != FRAME_MAGIC {
            return Err(Error::Protocol(format!("bad frame magic {:?}", &header[..4])));
        }
        let opcode = Opcode::try_from(header[4])?;
        let len = u64::from_le_bytes(header[5..].try_into().expect("8 bytes"));
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("frame payload of {len} bytes exceeds the limit")));
        }
        let mut payload = Vec::new();
        (&mut *r).take(len).read_to_end(&mut payload)?;
        if payload.len() as u64 != len {
            return Err(Error::Truncated {
                expected: HEADER_LEN + len,
                actual: HEADER_LEN + payload.len() as u64,
            });
        }
        Ok(Some(Frame { opcode, payload }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum What {
    Full,
    Part,
    LowDelta,
}

impl FromStr for What {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(What::Full),
            "part" => Ok(What::Part),
            "low-delta" | "low_delta" => Ok(What::LowDelta),
            other => Err(Error::Protocol(format!("unknown push selection `{other}`"))),
        }
    }
}

/// The frame a push of `what` sends for the model image `bytes`.
pub fn frame_for(bytes: &[u8], what: What) -> Result<Frame> {
    Ok(match what {
        What::Full => {
            store::part_bit_from_bytes(bytes)?;
            Frame::new(Opcode::FullModel, bytes.to_vec())
        }
        What::Part => {
            let part = store::part_bit_from_bytes(bytes)?;
            if !part.manifest.is_nested() {
                return Err(Error::InvalidModel("a standalone model has no part-bit section".into()));
            }
            Frame::new(Opcode::HighPayload, store::split_low_stream(bytes)?.0)
        }
        What::LowDelta => {
            let part = store::part_bit_from_bytes(bytes)?;
            if !part.has_low_sections() {
                return Err(Error::LowSectionMissing);
            }
            Frame::new(Opcode::LowPayload, store::split_low_stream(bytes)?.1)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PushReport {
    pub what: What,
    pub bytes_sent: u64,
    /// Count the receiver reported in its ACK.
    pub bytes_acked: u64,
}

fn connect(endpoint: impl ToSocketAddrs) -> Result<TcpStream> {
    let stream = TcpStream::connect(endpoint)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    Ok(stream)
}

fn exchange(stream: &mut TcpStream, frame: &Frame) -> Result<(u64, Frame)> {
    let sent = frame.write_to(&mut BufWriter::new(&mut *stream))?;
    let reply = Frame::read_from(stream)?
        .ok_or_else(|| Error::Protocol("connection closed before a reply".into()))?;
    if reply.opcode == Opcode::Error {
        return Err(Error::Remote(String::from_utf8_lossy(&reply.payload).into_owned()));
    }
    Ok((sent, reply))
}

/// Sends the selected part of a model file and waits for the receiver's ACK.
pub fn push(model_path: impl AsRef<Path>, endpoint: impl ToSocketAddrs, what: What) -> Result<PushReport> {
    let bytes = fs::read(model_path)?;
    let frame = frame_for(&bytes, what)?;
    let mut stream = connect(endpoint)?;
    let (sent, reply) = exchange(&mut stream, &frame)?;
    let _ = stream.shutdown(Shutdown::Both);
    let acked = match (reply.opcode, reply.payload.as_slice()) {
        (Opcode::Ack, p) if p.len() == 8 => u64::from_le_bytes(p.try_into().expect("8 bytes")),
        (op, _) => return Err(Error::Protocol(format!("expected ACK, got {op:?}"))),
    };
    if acked != sent {
        return Err(Error::Protocol(format!("sent {sent} bytes but receiver counted {acked}")));
    }
    log::info!("pushed {what:?}: {sent} bytes");
    Ok(PushReport {
        what,
        bytes_sent: sent,
        bytes_acked: acked,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct HeldModel {
    pub file: String,
    pub name: String,
    pub n: u8,
    pub h: u8,
    pub part_only: bool,
}

/// Asks a server what models it holds.
pub fn list_remote(endpoint: impl ToSocketAddrs) -> Result<Vec<HeldModel>> {
    let mut stream = connect(endpoint)?;
    let (_, reply) = exchange(&mut stream, &Frame::new(Opcode::Manifest, Vec::new()))?;
    if reply.opcode != Opcode::Manifest {
        return Err(Error::Protocol(format!("expected MANIFEST, got {:?}", reply.opcode)));
    }
    serde_json::from_slice(&reply.payload).map_err(|e| Error::Protocol(e.to_string()))
}

/// Stops a running [`Server`] from another thread.
#[derive(Debug, Clone)]
pub struct ShutdownHandle {
    flag: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.flag.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
    }
}

pub struct Server {
    listener: TcpListener,
    store_dir: PathBuf,
    flag: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(endpoint: impl ToSocketAddrs, store_dir: impl AsRef<Path>) -> Result<Self> {
        let store_dir = store_dir.as_ref().to_path_buf();
        fs::create_dir_all(&store_dir)?;
        Ok(Self {
            listener: TcpListener::bind(endpoint)?,
            store_dir,
            flag: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn shutdown_handle(&self) -> Result<ShutdownHandle> {
        Ok(ShutdownHandle {
            flag: self.flag.clone(),
            addr: self.local_addr()?,
        })
    }

    /// Accepts connections until shut down, one thread per connection.
    pub fn run(self) -> Result<()> {
        log::info!("serving on {} into {}", self.local_addr()?, self.store_dir.display());
        let mut workers = Vec::new();
        for conn in self.listener.incoming() {
            if self.flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let dir = self.store_dir.clone();
            workers.push(thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = session(stream, &dir) {
                    log::warn!("session with {peer:?} ended: {e}");
                }
            }));
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }
}

/// Binds and serves until the process is stopped.
pub fn serve(endpoint: impl ToSocketAddrs, store_dir: impl AsRef<Path>) -> Result<()> {
    Server::bind(endpoint, store_dir)?.run()
}

fn session(stream: TcpStream, dir: &Path) -> Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => {
                // malformed or cut-off frame: report and drop the session
                let _ = Frame::new(Opcode::Error, e.to_string().into_bytes()).write_to(&mut writer);
                return Err(e);
            }
        };
        let received = frame.wire_len();
        let reply = match handle(&frame, dir) {
            Ok(Some(reply)) => reply,
            Ok(None) => Frame::new(Opcode::Ack, received.to_le_bytes().to_vec()),
            Err(e) => {
                log::warn!("rejected {:?} frame: {e}", frame.opcode);
                Frame::new(Opcode::Error, e.to_string().into_bytes())
            }
        };
        reply.write_to(&mut writer)?;
    }
}

/// Applies one frame to the store; `Some` replaces the default ACK.
fn handle(frame: &Frame, dir: &Path) -> Result<Option<Frame>> {
    match frame.opcode {
        Opcode::FullModel => {
            let part = store::part_bit_from_bytes(&frame.payload)?;
            if part.has_low_sections() || !part.manifest.is_nested() {
                NestedModel::from_bytes(&frame.payload)?;
                persist(dir, &full_file(&part.manifest.name), &frame.payload)?;
            } else {
                persist(dir, &part_file(&part.manifest.name), &frame.payload)?;
            }
            Ok(None)
        }
        Opcode::HighPayload => {
            let part = store::part_bit_from_stream(&frame.payload)?;
            if !part.manifest.is_nested() {
                return Err(Error::InvalidModel("part payload of a standalone model".into()));
            }
            persist(dir, &part_file(&part.manifest.name), &part.to_bytes())?;
            Ok(None)
        }
        Opcode::LowPayload => {
            let (held, model) = upgrade_held(dir, &frame.payload)?;
            persist(dir, &full_file(&model.manifest.name), &model.to_bytes())?;
            // only after the full file is in place
            if let Err(e) = fs::remove_file(&held) {
                log::warn!("could not remove {}: {e}", held.display());
            }
            Ok(None)
        }
        Opcode::Manifest => {
            let held = list_store(dir)?;
            let json = serde_json::to_vec(&held).map_err(|e| Error::Protocol(e.to_string()))?;
            Ok(Some(Frame::new(Opcode::Manifest, json)))
        }
        op => Err(Error::Protocol(format!("{op:?} is a reply opcode"))),
    }
}

fn safe_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "model".into()
    } else {
        cleaned
    }
}

fn full_file(name: &str) -> String {
    format!("{}.nqt", safe_name(name))
}

fn part_file(name: &str) -> String {
    format!("{}.part.nqt", safe_name(name))
}

/// Joins a low stream with the one held part-only model it fits.
fn upgrade_held(dir: &Path, low: &[u8]) -> Result<(PathBuf, NestedModel)> {
    let mut matches: Vec<(PathBuf, NestedModel)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.to_string_lossy().ends_with(".part.nqt") {
            continue;
        }
        let part: PartBitModel = match store::load_part_bit(&path) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}", path.display());
                continue;
            }
        };
        if let Ok(m) = part.lows_from_stream(low).and_then(|lows| part.with_low(lows)) {
            matches.push((path, m));
        }
    }
    match matches.len() {
        0 => Err(Error::InvalidModel(
            "no held part-bit model matches this low payload".into(),
        )),
        1 => Ok(matches.pop().expect("one match")),
        _ => Err(Error::InvalidModel(format!(
            "low payload fits {} held part-bit models: {:?}",
            matches.len(),
            matches.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>()
        ))),
    }
}

fn list_store(dir: &Path) -> Result<Vec<HeldModel>> {
    let mut held = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for path in entries {
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        if !file.ends_with(".nqt") || file.starts_with('.') {
            continue;
        }
        if let Ok(p) = store::load_part_bit(&path) {
            held.push(HeldModel {
                file,
                part_only: p.manifest.is_nested() && !p.has_low_sections(),
                name: p.manifest.name,
                n: p.manifest.n,
                h: p.manifest.h,
            });
        }
    }
    Ok(held)
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write-then-rename so readers never see a partial file.
fn persist(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(
        ".{file}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(file))?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(Opcode::LowPayload, vec![1, 2, 3]);
        let bytes = f.encode();
        assert_eq!(&bytes[..4], b"NQTX");
        assert_eq!(bytes[4], 0x03);
        assert_eq!(&bytes[5..13], &3u64.to_le_bytes());
        assert_eq!(bytes.len() as u64, f.wire_len());
        assert_eq!(Frame::read_from(&mut Cursor::new(bytes)).unwrap(), Some(f));
        assert_eq!(Frame::read_from(&mut Cursor::new(Vec::new())).unwrap(), None);
    }

    #[test]
    fn malformed_frames() {
        let mut bad = Frame::new(Opcode::Ack, vec![0; 8]).encode();
        bad[4] = 0x09;
        assert!(matches!(Frame::read_from(&mut Cursor::new(bad)), Err(Error::Protocol(_))));
        let mut bad = Frame::new(Opcode::Ack, vec![0; 8]).encode();
        bad[0] = b'X';
        assert!(matches!(Frame::read_from(&mut Cursor::new(bad)), Err(Error::Protocol(_))));
        let short = Frame::new(Opcode::FullModel, vec![7; 20]).encode();
        assert!(matches!(
            Frame::read_from(&mut Cursor::new(&short[..25])),
            Err(Error::Truncated { expected: 33, actual: 25 })
        ));
        assert!(matches!(
            Frame::read_from(&mut Cursor::new(&short[..5])),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn names_are_sanitized() {
        assert_eq!(full_file("../etc/passwd"), "___etc_passwd.nqt");
        assert_eq!(part_file(""), "model.part.nqt");
    }

    #[test]
    fn what_parses() {
        assert_eq!("low-delta".parse::<What>().unwrap(), What::LowDelta);
        assert!("all".parse::<What>().is_err());
    }
}
