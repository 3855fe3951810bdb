//! Trains the toy model on a freshly generated world and prints the final
//! evaluation.
//!
//! cargo run --release --example train_toy -- [epochs] [max_train_examples]

use std::time::Instant;

use vlalign::train::{train_on, RunConfig};
use vlalign::world::{generate_dataset, WorldConfig};

fn main() -> vlalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let cap = args.next().and_then(|a| a.parse().ok());
    let dataset = generate_dataset(&WorldConfig::default())?;
    let config = RunConfig {
        epochs,
        max_train_examples: cap,
        output_dir: std::env::temp_dir().join("vlalign-train-toy"),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let outcome = train_on(&config, &dataset)?;
    eprintln!("{} steps in {:.1}s", outcome.steps, start.elapsed().as_secs_f64());
    println!("{}", serde_json::to_string_pretty(&outcome.final_eval)?);
    Ok(())
}
