//! Packs signed k-bit integers into 64-bit words and back.
//!
//! cargo run --example pack

use nestquant::packed::{capacity, signed_range};
use nestquant::PackedTensor;

fn main() -> nestquant::Result<()> {
    let values: Vec<i32> = (-8..8).collect();
    for bits in [4u8, 5, 8] {
        let (lo, hi) = signed_range(bits);
        let fitting: Vec<i32> = values.iter().map(|&v| v.clamp(lo as i32, hi as i32)).collect();
        let p = PackedTensor::pack(&fitting, bits, &[4, 4])?;
        println!(
            "{bits}-bit: {} values per word, {} words, {} bytes",
            capacity(bits)?,
            p.words().len(),
            p.byte_size()
        );
        println!("  first word 0x{:016x}", p.words()[0]);
        assert_eq!(p.unpack()?, fitting);
    }
    Ok(())
}
