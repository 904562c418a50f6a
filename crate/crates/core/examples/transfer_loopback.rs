//! Serves a directory on loopback and pushes a nested model in two halves.
//!
//! cargo run --example transfer_loopback

use nestquant::store::save;
use nestquant::transfer::{list_remote, push, Server, What};
use nestquant::{nest_model, synth, NestConfig, RoundingStrategy};

fn main() -> nestquant::Result<()> {
    let root = std::env::temp_dir().join(format!("nestquant-transfer-{}", std::process::id()));
    let recv = root.join("recv");
    std::fs::create_dir_all(&recv)?;

    let fp = synth::gaussian_model(&[("conv.weight".into(), vec![64, 32, 3, 3]), ("fc.weight".into(), vec![10, 256])], 1);
    let model = root.join("model.nqt");
    save(&nest_model(&fp, "demo", &NestConfig::new(8, 4, RoundingStrategy::ADAPTIVE))?, &model)?;

    let server = Server::bind("127.0.0.1:0", &recv)?;
    let addr = server.local_addr()?;
    let stop = server.shutdown_handle()?;
    let worker = std::thread::spawn(move || server.run());

    let part = push(&model, addr, What::Part)?;
    println!("part:      {} bytes, held {:?}", part.bytes_sent, list_remote(addr)?);
    let low = push(&model, addr, What::LowDelta)?;
    println!("low-delta: {} bytes, held {:?}", low.bytes_sent, list_remote(addr)?);
    let same = std::fs::read(recv.join("demo.nqt"))? == std::fs::read(&model)?;
    println!("received file identical: {same}");

    stop.shutdown();
    worker.join().expect("server thread")?;
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
