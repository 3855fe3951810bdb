//! Runs the alignment ablation (three seeds, with and without the alignment
//! term) from a run config and prints the table.
//!
//! cargo run --release --example ablation -- [config.json] [out_dir]

use std::path::PathBuf;

use vlalign::train::{run_ablation, RunConfig};
use vlalign::world::generate_dataset;

fn main() -> vlalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => RunConfig::load(&PathBuf::from(path))?,
        None => RunConfig {
            epochs: 4,
            ..RunConfig::default()
        },
    };
    let out_dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vlalign-ablation"));
    let dataset = generate_dataset(&config.world)?;
    let report = run_ablation(&config, &dataset, &[0, 1, 2], &out_dir)?;
    print!("{}", report.table());
    println!("wrote {}", out_dir.join("ablation.json").display());
    Ok(())
}
