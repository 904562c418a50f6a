//! Trains the bundled reference network and tabulates part-bit accuracy
//! for every nested bitwidth and rounding strategy.
//!
//! cargo run --release --example refnet_accuracy -- [seed] [config.toml]

use nestquant::refnet::{train_reference, EvalMode, RefConfig};
use nestquant::{nest_model, NestConfig, RoundingStrategy};

fn main() -> nestquant::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(7);
    let cfg = match args.next() {
        Some(path) => RefConfig::load(path)?,
        None => RefConfig::builtin(),
    };
    let (mut net, data) = train_reference(&cfg, seed)?;
    let fp = net.evaluate(&data.test, EvalMode::Fp32, 8)?;
    println!("fp32      {:.4}", fp);

    let n = 8;
    let full = nest_model(&net.params, "ref", &NestConfig::standalone(n))?;
    net.overlay_nested(&full)?;
    println!("INT{n} full {:.4}", net.evaluate(&data.test, EvalMode::FullBit, 8)?);

    print!("{:>10}", "h");
    for s in RoundingStrategy::ALL {
        print!("{:>10}", s.name());
    }
    println!();
    for h in (3..n).rev() {
        print!("{h:>10}");
        for s in RoundingStrategy::ALL {
            let m = nest_model(&net.params, "ref", &NestConfig::new(n, h, s))?;
            net.overlay_nested(&m)?;
            print!("{:>10.4}", net.evaluate(&data.test, EvalMode::PartBit, 8)?);
        }
        println!();
    }
    Ok(())
}
