//! Trains one seed with and without the alignment term and prints the
//! evaluation metrics side by side.
//!
//! cargo run --example compare_alignment -- [seed] [epochs] [batch_size] [learning_rate]

use std::time::Instant;

use vlalign::train::{train_on, RunConfig};
use vlalign::world::{generate_dataset, WorldConfig};

fn main() -> vlalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let defaults = RunConfig::default();
    let batch_size = args.next().and_then(|a| a.parse().ok()).unwrap_or(defaults.batch_size);
    let learning_rate = args.next().and_then(|a| a.parse().ok()).unwrap_or(defaults.learning_rate);
    let dataset = generate_dataset(&WorldConfig::default())?;
    for align in [true, false] {
        let config = RunConfig {
            seed,
            epochs,
            align,
            batch_size,
            learning_rate,
            eval_each_epoch: false,
            output_dir: std::env::temp_dir().join(format!("vlalign-compare-{align}")),
            ..RunConfig::default()
        };
        let start = Instant::now();
        let outcome = train_on(&config, &dataset)?;
        let m = outcome.final_eval.expect("default world has an eval split");
        println!(
            "align={align:<5} qa={:.4} match={:.4} pair={:.4} recall@1={:.4} mass={:.4} kl={:.4} ({:.0}s)",
            m.qa_accuracy.unwrap_or(f64::NAN),
            m.matching_accuracy.unwrap_or(f64::NAN),
            m.pair_accuracy.unwrap_or(f64::NAN),
            m.alignment_recall_at_1.unwrap_or(f64::NAN),
            m.attention_mass.unwrap_or(f64::NAN),
            m.mean_alignment_kl.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
