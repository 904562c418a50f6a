//! Nests a synthetic ResNet-18 body, saves it, then switches between the
//! part-bit and full-bit weights while accounting paged bytes.
//!
//! cargo run --release --example nest_and_switch -- [h]

use nestquant::store::{save, size_report};
use nestquant::switch::{diverse_switch_baseline, Direction};
use nestquant::{nest_model, synth, NestConfig, RoundingStrategy, SwitchState};

fn main() -> nestquant::Result<()> {
    let h: u8 = std::env::args().nth(1).map(|s| s.parse().expect("h")).unwrap_or(4);
    let fp = synth::resnet18_body(42);
    let dir = std::env::temp_dir().join(format!("nestquant-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let mut cfg = NestConfig::new(8, h, RoundingStrategy::ADAPTIVE);
    cfg.jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let nested = nest_model(&fp, "resnet18-body", &cfg)?;
    let r = size_report(&nested);
    let path = dir.join("nested.nqt");
    save(&nested, &path)?;
    println!("{} params, INT(8|{h}) file {} bytes", fp.param_count(), std::fs::metadata(&path)?.len());
    println!("report: {}", serde_json::to_string(&r).expect("json"));

    let mut state = SwitchState::launch_part_bit(&path)?;
    println!("launch part-bit: {} bytes resident", state.launch_bytes());
    let up = state.upgrade()?.clone();
    let down = state.downgrade()?.clone();
    println!("upgrade   in {:>9} out {:>9}", up.bytes_paged_in, up.bytes_paged_out);
    println!("downgrade in {:>9} out {:>9}", down.bytes_paged_in, down.bytes_paged_out);

    let int8 = dir.join("int8.nqt");
    let inth = dir.join("inth.nqt");
    save(&nest_model(&fp, "int8", &NestConfig::standalone(8))?, &int8)?;
    save(&nest_model(&fp, "inth", &NestConfig::standalone(h))?, &inth)?;
    let diverse = diverse_switch_baseline(&int8, &inth, Direction::Upgrade)?;
    println!(
        "separate INT8/INT{h} upgrade moves {} bytes, nested moves {}",
        diverse.total(),
        up.total()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
