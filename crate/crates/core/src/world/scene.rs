use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Vocabulary, WorldConfig};
use crate::error::{Error, Result};
use crate::targets::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub attribute: usize,
    pub bbox: BBox,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn count_class(&self, class: usize) -> usize {
        self.objects.iter().filter(|o| o.class == class).count()
    }

    pub fn count_attribute(&self, attribute: usize) -> usize {
        self.objects
            .iter()
            .filter(|o| o.attribute == attribute)
            .count()
    }

    pub fn contains(&self, class: usize, attribute: usize) -> bool {
        self.objects
            .iter()
            .any(|o| o.class == class && o.attribute == attribute)
    }
}

/// Noise-free features: class one-hot, attribute one-hot, the seven box
/// features, zeros to `dim`.
pub fn latent_features(
    class: usize,
    attribute: usize,
    bbox: &BBox,
    vocab: &Vocabulary,
    dim: usize,
) -> Vec<f64> {
    let (nc, na) = (vocab.class_names.len(), vocab.attribute_names.len());
    let mut f = vec![0.0; dim];
    f[class] = 1.0;
    f[nc + attribute] = 1.0;
    f[nc + na..nc + na + 7].copy_from_slice(&bbox.features7());
    f
}

pub(crate) fn add_noise<R: Rng + ?Sized>(features: &mut [f64], std: f64, rng: &mut R) {
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        features.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}

/// Box with side lengths in `[min_size, max_size]`, fully inside the unit square.
pub(crate) fn random_box<R: Rng + ?Sized>(rng: &mut R, min_size: f64, max_size: f64) -> BBox {
    let w = rng.gen_range(min_size..=max_size);
    let h = rng.gen_range(min_size..=max_size);
    let x = rng.gen_range(0.0..=1.0 - w);
    let y = rng.gen_range(0.0..=1.0 - h);
    BBox::normalized(x, y, x + w, y + h).expect("sizes are positive and inside the unit square")
}

/// Places `min_objects..=max_objects` attributed objects by rejection
/// sampling so that no two ground-truth boxes overlap by more than the
/// configured IoU.
pub fn generate_scene(
    id: usize,
    seed: u64,
    config: &WorldConfig,
    vocab: &Vocabulary,
) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let classes = vocab.object_classes();
    let attributes = vocab.object_attributes();
    for _ in 0..count {
        let class = rng.gen_range(classes.clone());
        let attribute = rng.gen_range(attributes.clone());
        let mut placed = None;
        for _ in 0..config.max_placement_attempts {
            let candidate = random_box(&mut rng, config.min_box_size, config.max_box_size);
            let mut fits = true;
            for o in &objects {
                if iou(&candidate, &o.bbox)? > config.max_ground_truth_iou {
                    fits = false;
                    break;
                }
            }
            if fits {
                placed = Some(candidate);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| {
            Error::Generation(format!(
                "scene {id}: no placement within {} attempts",
                config.max_placement_attempts
            ))
        })?;
        let mut features = latent_features(class, attribute, &bbox, vocab, config.feature_dim);
        add_noise(&mut features, config.feature_noise, &mut rng);
        objects.push(SceneObject {
            class,
            attribute,
            bbox,
            features,
        });
    }
    Ok(Scene { id, seed, objects })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let (c, v) = (WorldConfig::default(), Vocabulary::standard());
        assert_eq!(
            generate_scene(0, 5, &c, &v).unwrap(),
            generate_scene(0, 5, &c, &v).unwrap()
        );
        assert_ne!(
            generate_scene(0, 5, &c, &v).unwrap(),
            generate_scene(0, 6, &c, &v).unwrap()
        );
    }

    #[test]
    fn impossible_placement_is_error() {
        let config = WorldConfig {
            min_objects: 5,
            max_objects: 5,
            min_box_size: 0.9,
            max_box_size: 0.95,
            max_ground_truth_iou: 0.0,
            max_placement_attempts: 10,
            ..WorldConfig::default()
        };
        let err = generate_scene(0, 1, &config, &Vocabulary::standard()).unwrap_err();
        assert_eq!(err.kind(), "generation");
    }

    #[test]
    fn latent_layout() {
        let v = Vocabulary::standard();
        let b = BBox::normalized(0.0, 0.0, 0.5, 0.5).unwrap();
        let f = latent_features(2, 3, &b, &v, 32);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[6 + 3], 1.0);
        assert_eq!(f[13..20], b.features7());
        assert!(f[20..].iter().all(|&x| x == 0.0));
    }
}
