//! Suggests a nested bitwidth from the FP32 model size.
//!
//! cargo run --example advise -- 97.8

use nestquant::advise_nested_bits;

fn main() -> nestquant::Result<()> {
    let sizes: Vec<f64> = match std::env::args().nth(1) {
        Some(s) => vec![s.parse().expect("size in MB")],
        None => vec![16.3, 44.7, 97.8, 170.5, 330.3, 1161.0],
    };
    for mb in sizes {
        println!("{mb:>8.1} MB -> INT(8|{})", advise_nested_bits(mb, 8)?);
    }
    Ok(())
}
