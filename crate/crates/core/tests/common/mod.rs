//! Fixtures shared by the integration tests.

#![allow(dead_code)]

pub mod ops;
pub mod full_size;
pub mod trials;

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlalign::numeric::{Graph, ParamStore, Var};
use vlalign::train::{example_loss, model_config_for, RunConfig, ScenePool, StepContext};
use vlalign::world::{generate_dataset, Dataset, Split, UtteranceKind, WorldConfig};
use vlalign::Model;

/// Default world shrunk to a few seconds of generation.
pub fn small_world() -> WorldConfig {
    WorldConfig {
        scenes: 60,
        train_utterances: 200,
        eval_utterances: 60,
        ..WorldConfig::default()
    }
}

pub fn small_dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| generate_dataset(&small_world()).expect("small world generates"))
}

/// Index of an annotated pair-statement train record, which activates every loss term.
pub fn full_record(dataset: &Dataset) -> usize {
    dataset
        .records
        .iter()
        .position(|r| {
            r.split == Split::Train && r.kind == UtteranceKind::PairStatement && r.is_annotated()
        })
        .expect("small world has an annotated pair statement")
}

pub fn answer_record(dataset: &Dataset) -> usize {
    dataset
        .records
        .iter()
        .position(|r| r.split == Split::Train && r.answer.is_some() && r.is_annotated())
        .expect("small world has an annotated question")
}

/// Toy model for `dataset` with all loss terms active from epoch 0.
pub fn toy_setup(dataset: &Dataset, seed: u64) -> (Model, ParamStore, RunConfig) {
    let config = RunConfig {
        vqa_start_epoch: Some(0),
        p_corrupt: 0.0,
        ..RunConfig::default()
    };
    let mc = model_config_for(&config, dataset).unwrap();
    let (model, store) = Model::build(&mc, seed).unwrap();
    (model, store, config)
}

/// Moves every parameter to a generic point: weights and biases drawn from
/// N(0, std), layer-norm gains from 1 + N(0, std). Away from the all-zero
/// biases of the initialization no layer norm sees a near-constant input.
pub fn randomize(store: &mut ParamStore, std: f64, seed: u64) {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let gain = store.name(id).ends_with(".gain");
        let values: Vec<f64> = (0..store.get(id).len())
            .map(|_| normal.sample(&mut rng) + if gain { 1.0 } else { 0.0 })
            .collect();
        store.set_values(id, &values).unwrap();
    }
}

/// Deterministic total loss of one record: the masking/corruption RNG is
/// re-seeded on every call.
pub fn record_loss<'g>(
    g: &mut Graph<'g>,
    model: &Model,
    config: &RunConfig,
    dataset: &Dataset,
    index: usize,
    seed: u64,
) -> vlalign::Result<Var> {
    let table = dataset.embedding_table()?;
    let pool = ScenePool::from_records(dataset.split(Split::Train));
    let ctx = StepContext {
        model,
        vocab: dataset.vocab(),
        table: &table,
        pool: &pool,
        config,
        epoch: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(example_loss(g, &ctx, &dataset.records[index], &mut rng)?.total)
}

/// Finite-difference check of the complete total loss (every term active) of
/// one toy-model example, four entries per parameter tensor.
pub fn full_loss_check() -> vlalign::Result<vlalign::numeric::GradCheckReport> {
    use vlalign::numeric::{grad_check, GradCheckConfig};
    let dataset = small_dataset();
    let index = full_record(dataset);
    let (model, mut store, config) = toy_setup(dataset, 3);
    randomize(&mut store, 0.1, 5);
    let check = GradCheckConfig {
        max_entries_per_param: Some(4),
        ..GradCheckConfig::default()
    };
    grad_check(
        &mut store,
        &[],
        |g| record_loss(g, &model, &config, dataset, index, 11),
        &check,
    )
}
