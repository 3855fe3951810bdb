//! Trains with and without the alignment term, then reports word-to-object
//! attention recall and mass at every inter-modality layer.
//!
//! cargo run --example probe_layers -- [seed] [epochs] [batch_size] [learning_rate] [align_weight] [init_std]

use vlalign::train::{evaluate, train_on, Evaluator, RunConfig};
use vlalign::world::{generate_dataset, Split, WorldConfig};

fn main() -> vlalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let defaults = RunConfig::default();
    let batch_size = args.next().and_then(|a| a.parse().ok()).unwrap_or(defaults.batch_size);
    let learning_rate = args.next().and_then(|a| a.parse().ok()).unwrap_or(defaults.learning_rate);
    let align_weight = args.next().and_then(|a| a.parse().ok()).unwrap_or(1.0);
    let init_std = args.next().and_then(|a| a.parse().ok());
    let dataset = generate_dataset(&WorldConfig::default())?;
    let vocab = dataset.vocab();
    let table = dataset.embedding_table()?;
    let eval: Vec<_> = dataset.split(Split::Eval).collect();
    for align in [true, false] {
        let mut config = RunConfig {
            seed,
            epochs,
            align,
            batch_size,
            learning_rate,
            init_std,
            eval_each_epoch: false,
            output_dir: std::env::temp_dir().join(format!("vlalign-probe-{align}")),
            ..RunConfig::default()
        };
        config.loss_weights.align = align_weight;
        let outcome = train_on(&config, &dataset)?;
        for layer in 0..outcome.model.config.cross_layers {
            let ev = Evaluator {
                model: &outcome.model,
                store: &outcome.store,
                vocab,
                table: &table,
                top_k: config.top_k,
                attention_layer: layer,
            };
            let m = evaluate(&ev, &eval, Split::Eval)?;
            println!(
                "align={align:<5} layer={layer} qa={:.4} match={:.4} recall@1={:.4} mass={:.4} kl={:.4}",
                m.qa_accuracy.unwrap_or(f64::NAN),
                m.matching_accuracy.unwrap_or(f64::NAN),
                m.alignment_recall_at_1.unwrap_or(f64::NAN),
                m.attention_mass.unwrap_or(f64::NAN),
                m.mean_alignment_kl.unwrap_or(f64::NAN),
            );
        }
    }
    Ok(())
}
