//! Generates the default synthetic dataset and prints its summary.
//!
//! cargo run --example generate_world -- [out.jsonl]

use std::path::PathBuf;

use vlalign::world::{generate_dataset, write_dataset, WorldConfig};

fn main() -> vlalign::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vlalign-world.jsonl"));
    let dataset = generate_dataset(&WorldConfig::default())?;
    write_dataset(&out, &dataset)?;
    println!("{}", serde_json::to_string_pretty(&dataset.summary())?);

    let r = &dataset.records[0];
    println!("{}", r.words.join(" "));
    for s in &r.spans {
        println!("  [{}, {}) -> object {}", s.start, s.end, s.object);
    }
    println!("wrote {}", out.display());
    Ok(())
}
