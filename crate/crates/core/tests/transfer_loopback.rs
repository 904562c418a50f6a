use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use nestquant::error::Error;
use nestquant::nesting::{nest_model, NestConfig};
use nestquant::rounding::RoundingStrategy;
use nestquant::store;
use nestquant::synth;
use nestquant::transfer::{self, Frame, Opcode, Server, ShutdownHandle, What};

struct Running {
    handle: ShutdownHandle,
    thread: Option<JoinHandle<()>>,
    addr: SocketAddr,
}

impl Running {
    fn start(dir: &Path) -> Self {
        let server = Server::bind("127.0.0.1:0", dir).unwrap();
        let addr = server.local_addr().unwrap();
        let handle = server.shutdown_handle().unwrap();
        let thread = std::thread::spawn(move || server.run().unwrap());
        Self {
            handle,
            thread: Some(thread),
            addr,
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.handle.shutdown();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn model(dir: &Path, n: u8, h: u8) -> PathBuf {
    let fp = synth::gaussian_model(
        &[
            ("conv.weight".into(), vec![32, 16, 3, 3]),
            ("fc.weight".into(), vec![10, 96]),
        ],
        5,
    );
    let cfg = if h == n {
        NestConfig::standalone(n)
    } else {
        NestConfig::new(n, h, RoundingStrategy::ADAPTIVE)
    };
    let m = nest_model(&fp, "net", &cfg).unwrap();
    let path = dir.join(format!("net_{n}_{h}.nqt"));
    store::save(&m, &path).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn part_then_low_rebuilds_the_file() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let path = model(src.path(), 8, 5);
    let server = Running::start(dst.path());

    let part = transfer::push(&path, server.addr, What::Part).unwrap();
    assert_eq!(part.bytes_sent, part.bytes_acked);
    let held = transfer::list_remote(server.addr).unwrap();
    assert_eq!(held.len(), 1);
    assert!(held[0].part_only);
    assert_eq!((held[0].n, held[0].h), (8, 5));

    // the part-only file is a usable part-bit model on its own
    let part_only = store::load_part_bit(dst.path().join("net.part.nqt")).unwrap();
    assert!(!part_only.has_low_sections());

    let low = transfer::push(&path, server.addr, What::LowDelta).unwrap();
    assert_eq!(low.bytes_sent, low.bytes_acked);
    assert_eq!(listing(dst.path()), ["net.nqt"]);
    assert_eq!(std::fs::read(dst.path().join("net.nqt")).unwrap(), std::fs::read(&path).unwrap());
    let loaded = store::load(dst.path().join("net.nqt")).unwrap();
    assert_eq!(loaded, store::load(&path).unwrap());
}

#[test]
fn part_share_of_traffic_tracks_bitwidths() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let server = Running::start(dst.path());
    for (n, h) in [(8u8, 4u8), (8, 6), (6, 3)] {
        let path = model(src.path(), n, h);
        let full = transfer::push(&path, server.addr, What::Full).unwrap();
        let part = transfer::push(&path, server.addr, What::Part).unwrap();
        let ratio = part.bytes_sent as f64 / full.bytes_sent as f64;
        let ideal = h as f64 / (n + 1) as f64;
        assert!((ratio - ideal).abs() < 0.05, "INT({n}|{h}): {ratio} vs {ideal}");
    }
}

#[test]
fn low_delta_without_held_part_is_refused() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let path = model(src.path(), 8, 4);
    let server = Running::start(dst.path());
    let err = transfer::push(&path, server.addr, What::LowDelta).unwrap_err();
    assert!(matches!(err, Error::Remote(_)), "{err}");
    assert!(listing(dst.path()).is_empty());
}

#[test]
fn standalone_models_have_no_part_push() {
    let src = tempfile::tempdir().unwrap();
    let path = model(src.path(), 8, 8);
    let dst = tempfile::tempdir().unwrap();
    let server = Running::start(dst.path());
    assert!(transfer::push(&path, server.addr, What::Part).is_err());
    transfer::push(&path, server.addr, What::Full).unwrap();
    assert_eq!(listing(dst.path()), ["net.nqt"]);
}

#[test]
fn interrupted_push_leaves_directory_unchanged() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let path = model(src.path(), 8, 4);
    let bytes = std::fs::read(&path).unwrap();
    let server = Running::start(dst.path());
    transfer::push(&path, server.addr, What::Part).unwrap();
    let before = listing(dst.path());
    let held_before = std::fs::read(dst.path().join("net.part.nqt")).unwrap();

    // send a header promising the whole file, then half of it, then vanish
    let frame = Frame::new(Opcode::FullModel, bytes.clone()).encode();
    let mut s = TcpStream::connect(server.addr).unwrap();
    s.write_all(&frame[..frame.len() / 2]).unwrap();
    drop(s);

    // a garbage frame gets an error reply and no file either
    let mut s = TcpStream::connect(server.addr).unwrap();
    s.write_all(b"JUNKJUNKJUNKJUNK").unwrap();
    s.shutdown(std::net::Shutdown::Write).unwrap();
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).unwrap();
    let reply = Frame::read_from(&mut reply.as_slice()).unwrap();
    assert!(reply.is_none_or(|f| f.opcode == Opcode::Error));

    // the server is still alive and nothing changed
    assert_eq!(transfer::list_remote(server.addr).unwrap().len(), 1);
    assert_eq!(listing(dst.path()), before);
    assert_eq!(std::fs::read(dst.path().join("net.part.nqt")).unwrap(), held_before);
}

#[test]
fn name_is_sanitized_on_the_server() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let fp = synth::gaussian_model(&[("w".into(), vec![4, 4])], 1);
    let m = nest_model(&fp, "../../escape", &NestConfig::new(8, 4, RoundingStrategy::Rtn)).unwrap();
    let path = src.path().join("m.nqt");
    store::save(&m, &path).unwrap();
    let server = Running::start(dst.path());
    transfer::push(&path, server.addr, What::Full).unwrap();
    let files = listing(dst.path());
    assert_eq!(files.len(), 1);
    assert!(!files[0].contains('/') && files[0].ends_with(".nqt"), "{files:?}");
}
