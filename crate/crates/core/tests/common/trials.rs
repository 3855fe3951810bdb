//! Seeded single-trial checks for the distribution and IoU invariants.
//! The property tests drive them through proptest; the acceptance binary
//! runs them 10,000 times each.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlalign::encoder::{ModelConfig, ObjectInput, TaskSizes, TokenSequence};
use vlalign::numeric::{Graph, ParamStore, Tensor};
use vlalign::targets::{build_soft_targets, iou, BBox, DetectionLabel, EmbeddingTable, GroundedSpan};
use vlalign::world::Vocabulary;
use vlalign::Model;

pub const ROW_TOLERANCE: f64 = 1e-9;

fn check_row(what: &str, row: &[f64]) -> Result<(), String> {
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE || row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(format!("{what}: row {row:?} sums to {s}"));
    }
    Ok(())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, spread: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-spread..spread)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Multi-head attention with random shapes, magnitudes, and key masks.
pub fn attention_rows(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = *[1, 2, 3, 4].choose(&mut rng).unwrap();
    let d = heads * rng.gen_range(1..=4);
    let m = rng.gen_range(1..=6);
    let n = rng.gen_range(1..=8);
    let spread = [0.1, 1.0, 10.0, 50.0][rng.gen_range(0..4)];
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let keep = rng.gen_range(0..n);
    mask[keep] = true;

    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let q = g.input(random_matrix(&mut rng, m, d, spread)).unwrap();
    let k = g.input(random_matrix(&mut rng, n, d, spread)).unwrap();
    let v = g.input(random_matrix(&mut rng, n, d, spread)).unwrap();
    let out = g.attention(q, k, v, heads, &mask).map_err(|e| e.to_string())?;
    for map in g.attention_maps(out).unwrap() {
        for i in 0..m {
            let row = &map[i * n..(i + 1) * n];
            check_row("attention", row)?;
            if row.iter().zip(&mask).any(|(&a, &keep)| !keep && a != 0.0) {
                return Err(format!("attention: masked key has mass in {row:?}"));
            }
        }
    }
    Ok(())
}

/// Small randomized model whose decoder scores are far from uniform.
pub fn alignment_fixture() -> (Model, ParamStore) {
    let mut c = ModelConfig::toy(TaskSizes {
        vocab_size: 30,
        class_count: 6,
        attribute_count: 7,
        answer_count: 5,
        feature_dim: 8,
    });
    c.d_model = 16;
    c.lang_layers = 1;
    c.vision_layers = 1;
    c.cross_layers = 1;
    c.max_tokens = 8;
    let (model, mut store) = Model::build(&c, 3).unwrap();
    super::randomize(&mut store, 0.5, 4);
    (model, store)
}

/// Alignment-decoder rows with k = 3: at most k nonzero entries summing to 1.
pub fn alignment_rows(model: &Model, store: &ParamStore, seed: u64) -> Result<(), String> {
    const K: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &model.config;
    let objects: Vec<ObjectInput> = (0..c.objects)
        .map(|_| ObjectInput {
            features: (0..c.feature_dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            bbox: random_box(&mut rng, 64),
        })
        .collect();
    let len = rng.gen_range(1..=c.max_tokens);
    let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(3..c.vocab_size)).collect();
    ids[0] = 0;
    let tokens = TokenSequence::new(&ids, c.max_tokens).map_err(|e| e.to_string())?;
    let mut g = Graph::new(store);
    let out = model.encode(&mut g, &objects, &tokens).map_err(|e| e.to_string())?;
    let pred = model.decoder.forward(&mut g, &out, K).map_err(|e| e.to_string())?;
    let probs = pred.matrix(&g);
    for i in 0..probs.rows() {
        let row = probs.row(i);
        check_row("alignment", row)?;
        let support = row.iter().filter(|&&v| v != 0.0).count();
        if support > K {
            return Err(format!("alignment: support {support} > {K} in {row:?}"));
        }
    }
    Ok(())
}

/// Box with integer corners on a `grid`×`grid` lattice, scaled to [0, 1].
fn random_box(rng: &mut ChaCha8Rng, grid: u32) -> BBox {
    let (x0, x1) = grid_interval(rng, grid);
    let (y0, y1) = grid_interval(rng, grid);
    let g = grid as f64;
    BBox::new(x0 as f64 / g, y0 as f64 / g, x1 as f64 / g, y1 as f64 / g).unwrap()
}

fn grid_interval(rng: &mut ChaCha8Rng, grid: u32) -> (u32, u32) {
    let a = rng.gen_range(0..grid);
    let b = rng.gen_range(a + 1..=grid);
    (a, b)
}

/// Soft targets over random sentences, spans, and detections: valid rows
/// sum to 1, invalid rows are zero.
pub fn soft_target_rows(vocab: &Vocabulary, table: &EmbeddingTable, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(2..=12);
    let mut words: Vec<String> = (0..len)
        .map(|_| vocab.tokens[rng.gen_range(3..vocab.tokens.len())].clone())
        .collect();
    words[0] = "[CLS]".into();
    let mut spans = Vec::new();
    let mut start = 1;
    while start < len {
        let end = rng.gen_range(start + 1..=len.min(start + 3));
        if rng.gen_bool(0.6) {
            spans.push(GroundedSpan {
                start,
                end,
                bbox: random_box(&mut rng, 32),
            });
        }
        start = end;
    }
    let n_det = rng.gen_range(1..=8);
    let dets: Vec<DetectionLabel<'_>> = (0..n_det)
        .map(|_| DetectionLabel {
            bbox: random_box(&mut rng, 32),
            class_name: vocab.class_names.choose(&mut rng).unwrap(),
            attribute_name: vocab.attribute_names.choose(&mut rng).unwrap(),
        })
        .collect();
    let target =
        build_soft_targets(&words, 12, &spans, &dets, table).map_err(|e| e.to_string())?;
    for i in 0..target.rows() {
        let row = target.row(i);
        if target.valid[i] {
            check_row("soft target", row)?;
        } else if row.iter().any(|&v| v != 0.0) {
            return Err(format!("soft target: invalid row {i} is {row:?}"));
        }
    }
    Ok(())
}

/// IoU by counting unit cells covered by integer boxes.
pub fn raster_iou(a: [u32; 4], b: [u32; 4]) -> f64 {
    let covers = |r: [u32; 4], x: u32, y: u32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let hi = a[2].max(a[3]).max(b[2]).max(b[3]);
    let (mut inter, mut union) = (0u32, 0u32);
    for x in 0..hi {
        for y in 0..hi {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += (ia && ib) as u32;
            union += (ia || ib) as u32;
        }
    }
    inter as f64 / union as f64
}

/// Absolute difference between [`iou`] on a scaled box pair and the raster count.
pub fn iou_vs_raster(a: [u32; 4], b: [u32; 4], grid: u32) -> f64 {
    let g = grid as f64;
    let to_box = |r: [u32; 4]| {
        BBox::new(r[0] as f64 / g, r[1] as f64 / g, r[2] as f64 / g, r[3] as f64 / g).unwrap()
    };
    (iou(&to_box(a), &to_box(b)).unwrap() - raster_iou(a, b)).abs()
}

pub fn random_grid_pair(seed: u64, grid: u32) -> ([u32; 4], [u32; 4]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corners = || {
        let (x0, x1) = grid_interval(&mut rng, grid);
        let (y0, y1) = grid_interval(&mut rng, grid);
        [x0, y0, x1, y1]
    };
    (corners(), corners())
}
