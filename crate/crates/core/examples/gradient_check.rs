//! Checks the analytic gradient of the complete training loss of one example
//! against central finite differences, for every parameter tensor of a small
//! model.
//!
//! cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vlalign::numeric::{grad_check, GradCheckConfig};
use vlalign::train::{example_loss, model_config_for, RunConfig, ScenePool, StepContext};
use vlalign::world::{generate_dataset, Split, UtteranceKind, WorldConfig};
use vlalign::Model;

fn main() -> vlalign::Result<()> {
    let dataset = generate_dataset(&WorldConfig {
        scenes: 30,
        train_utterances: 80,
        eval_utterances: 10,
        ..WorldConfig::default()
    })?;
    // A pair statement with a grounded span switches on every term.
    let record = dataset
        .records
        .iter()
        .find(|r| r.split == Split::Train && r.kind == UtteranceKind::PairStatement && r.is_annotated())
        .expect("world has an annotated pair statement");
    let config = RunConfig {
        vqa_start_epoch: Some(0),
        p_corrupt: 0.0,
        ..RunConfig::default()
    };
    let (model, mut store) = Model::build(&model_config_for(&config, &dataset)?, 0)?;
    // At the 0.02-std initialization many gradients are so small that the
    // finite differences are mostly rounding noise; check at a generic point.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    for id in store.ids().collect::<Vec<_>>() {
        let offset = if store.name(id).ends_with(".gain") { 1.0 } else { 0.0 };
        let values: Vec<f64> = (0..store.get(id).len()).map(|_| offset + normal.sample(&mut rng)).collect();
        store.set_values(id, &values)?;
    }
    let table = dataset.embedding_table()?;
    let pool = ScenePool::from_records(dataset.split(Split::Train));
    let ctx = StepContext {
        model: &model,
        vocab: dataset.vocab(),
        table: &table,
        pool: &pool,
        config: &config,
        epoch: 0,
    };
    let check = GradCheckConfig {
        max_entries_per_param: Some(3),
        ..GradCheckConfig::default()
    };
    let report = grad_check(
        &mut store,
        &[],
        |g| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            Ok(example_loss(g, &ctx, record, &mut rng)?.total)
        },
        &check,
    )?;
    for p in &report.params {
        println!("{:<48} {:>3} entries  max rel err {:.2e}", p.name, p.checked, p.max_rel_err);
    }
    println!("worst {:.2e} over {} tensors", report.max_rel_err(), report.params.len());
    Ok(())
}
