//! Storage and switching arithmetic for nested vs separate models.
//!
//! cargo run --example resource_report

use nestquant::resource::{ideal_storage_reduction, memory_usage_estimate, nest_page_costs, percent, to_f64};

fn main() -> nestquant::Result<()> {
    let disk = 13_000_000;
    println!("(n|h)  storage saved  page-in high  page-in low");
    for (n, h) in [(8, 4), (8, 5), (8, 6), (8, 7), (6, 4), (6, 5)] {
        let (high, low) = nest_page_costs(disk, n, h)?;
        println!(
            "({n}|{h})  {:>12.1}%  {:>10.2} MB  {:>9.2} MB",
            percent(ideal_storage_reduction(n, h)?, 1),
            to_f64(high) / 1e6,
            to_f64(low) / 1e6
        );
    }
    for k in [4, 6, 8] {
        println!("INT{k} memory from 46.8 MB at INT8: {:.1} MB", to_f64(memory_usage_estimate(46_800_000, k)?) / 1e6);
    }
    Ok(())
}
