//! Trains a toy model briefly, then writes the summed word-from-object
//! attention of every inter-modality layer for one example as CSV plus a JSON
//! sidecar.
//!
//! cargo run --release --example export_attention -- [out_dir]

use std::path::PathBuf;

use vlalign::train::{export_attention, read_matrix_csv, train_on, RunConfig};
use vlalign::world::{generate_dataset, WorldConfig};

fn main() -> vlalign::Result<()> {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vlalign-attention"));
    let dataset = generate_dataset(&WorldConfig {
        scenes: 60,
        train_utterances: 200,
        eval_utterances: 40,
        ..WorldConfig::default()
    })?;
    let config = RunConfig {
        epochs: 3,
        output_dir: out_dir.join("run"),
        ..RunConfig::default()
    };
    let outcome = train_on(&config, &dataset)?;
    let record = dataset
        .records
        .iter()
        .find(|r| r.is_annotated() && r.answer.is_some())
        .expect("world has an annotated question");
    for layer in 0..outcome.model.config.cross_layers {
        for path in export_attention(&outcome.model, &outcome.store, &dataset, record.id, layer, true, &out_dir)? {
            let m = read_matrix_csv(&path)?;
            println!("layer {layer}: {} x {} -> {}", m.rows(), m.cols(), path.display());
            for (i, word) in record.words.iter().enumerate() {
                let row = m.row(i);
                let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(j, _)| j);
                println!("  {word:>10} -> object {best} ({:.3})", row[best]);
            }
        }
    }
    Ok(())
}
