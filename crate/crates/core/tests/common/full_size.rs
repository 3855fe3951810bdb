//! One forward and backward pass at full model size.

use vlalign::numeric::Graph;
use vlalign::train::{model_config_for, RunConfig};
use vlalign::world::{generate_dataset, Dataset, WorldConfig};
use vlalign::Model;

/// Tiny world with 36 detector rows per image and a 20-token budget.
pub fn full_size_world() -> Dataset {
    generate_dataset(&WorldConfig {
        scenes: 8,
        train_utterances: 12,
        eval_utterances: 4,
        detections_per_scene: 36,
        max_tokens: 20,
        ..WorldConfig::default()
    })
    .expect("full-size world generates")
}

pub struct SmokeReport {
    pub parameters: usize,
    pub loss: f64,
    pub gradients: usize,
}

/// Builds the full-size model, runs the total loss of one example that
/// activates every term, and backpropagates it.
pub fn full_size_step() -> vlalign::Result<SmokeReport> {
    let dataset = full_size_world();
    let config = RunConfig {
        vqa_start_epoch: Some(0),
        p_corrupt: 0.0,
        ..RunConfig::full_size()
    };
    let mc = model_config_for(&config, &dataset)?;
    assert_eq!(
        (mc.d_model, mc.heads, mc.lang_layers, mc.vision_layers, mc.cross_layers, mc.max_tokens, mc.objects),
        (768, 12, 9, 5, 5, 20, 36)
    );
    let (model, store) = Model::build(&mc, 0)?;
    let index = super::full_record(&dataset);
    let mut g = Graph::new(&store);
    let loss = super::record_loss(&mut g, &model, &config, &dataset, index, 0)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    for (id, grad) in grads.params() {
        assert_eq!(grad.len(), store.get(*id).len());
    }
    Ok(SmokeReport {
        parameters: store.num_scalars(),
        loss: value,
        gradients: grads.params().len(),
    })
}
