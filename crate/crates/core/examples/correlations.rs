//! Correlation between full-bit weights and their high and low parts.
//!
//! cargo run --release --example correlations

use nestquant::quantizer::{dequantize, QuantizedTensor};
use nestquant::refnet::correlations;
use nestquant::{nest_model, synth, NestConfig, RoundingStrategy};

fn main() -> nestquant::Result<()> {
    let fp = synth::gaussian_model(&[("w".into(), vec![128, 128, 3, 3])], 12);
    for s in [RoundingStrategy::ADAPTIVE, RoundingStrategy::BitShift] {
        println!("{}", s.name());
        for h in 3..8 {
            let m = nest_model(&fp, "w", &NestConfig::new(8, h, s))?;
            let layer = &m.layers[0];
            let full = dequantize(&layer.full_quantized()?);
            let high = dequantize(&layer.part_quantized()?);
            let low = dequantize(&QuantizedTensor::per_tensor(layer.low_ints()?.expect("nested"), layer.scale));
            let ch = correlations(&full, &high)?;
            let cl = correlations(&full, &low)?;
            println!(
                "  h={h} high p/s/k {:.3}/{:.3}/{:.3}  low p/s/k {:+.3}/{:+.3}/{:+.3}",
                ch.pearson, ch.spearman, ch.kendall, cl.pearson, cl.spearman, cl.kendall
            );
        }
    }
    Ok(())
}
