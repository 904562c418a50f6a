//! Exhaustive decompose/recompose errors over every signed INT8 value.
//!
//! cargo run --example census

use nestquant::{error_census, RoundingStrategy};

fn main() -> nestquant::Result<()> {
    println!("{:<10} {:>2} {:>8} {:>10}", "strategy", "h", "nonzero", "range");
    for s in [
        RoundingStrategy::BitShift,
        RoundingStrategy::Rtn,
        RoundingStrategy::Up,
        RoundingStrategy::Down,
    ] {
        for h in (3..=7).rev() {
            let c = error_census(8, h, s)?;
            let range = format!("[{}, {}]", c.error_min, c.error_max);
            println!("{:<10} {h:>2} {:>8} {range:>10}", s.name(), c.nonzero_count);
        }
    }
    // with the extra low bit nothing is lost
    let c = nestquant::nesting::error_census_with(8, 4, RoundingStrategy::Rtn, true)?;
    println!("compensated rtn (8|4): {} non-zero", c.nonzero_count);
    Ok(())
}
