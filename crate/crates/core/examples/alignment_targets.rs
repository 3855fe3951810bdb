//! Builds the soft word-to-detection targets for one grounded utterance and
//! prints them next to the detector output.
//!
//! cargo run --example alignment_targets -- [example_id]

use vlalign::targets::iou;
use vlalign::world::{generate_dataset, WorldConfig};

fn main() -> vlalign::Result<()> {
    let dataset = generate_dataset(&WorldConfig {
        scenes: 40,
        train_utterances: 100,
        eval_utterances: 20,
        ..WorldConfig::default()
    })?;
    let wanted: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let record = dataset
        .records
        .iter()
        .find(|r| wanted.map_or(r.is_annotated(), |id| r.id == id))
        .expect("example exists");
    let vocab = dataset.vocab();
    let table = dataset.embedding_table()?;
    let target = record.alignment_target(vocab, &table, record.words.len())?;
    let dets = &record.detections[0];

    println!("{}", record.words.join(" "));
    for (j, d) in dets.iter().enumerate() {
        println!(
            "  det {j}: {} {} ({:.2}, {:.2}, {:.2}, {:.2})",
            vocab.attribute_names[d.attribute],
            vocab.class_names[d.class],
            d.bbox.x_min,
            d.bbox.y_min,
            d.bbox.x_max,
            d.bbox.y_max
        );
    }
    for span in &record.spans {
        let b = span.grounded().bbox;
        let overlaps: Vec<String> = dets
            .iter()
            .map(|d| iou(&b, &d.bbox).map(|v| format!("{v:.2}")))
            .collect::<vlalign::Result<_>>()?;
        println!("span {:?} pointer IoU per detection [{}]", &record.words[span.start..span.end], overlaps.join(", "));
    }
    for i in 0..target.rows() {
        if !target.valid[i] {
            continue;
        }
        let row: Vec<String> = target.row(i).iter().map(|v| format!("{v:.3}")).collect();
        println!("{:>10} -> [{}] argmax {}", record.words[i], row.join(" "), target.argmax(i));
    }
    Ok(())
}
