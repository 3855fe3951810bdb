use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{add_noise, latent_features, random_box};
use super::{DetectorNoise, Scene, Vocabulary, BACKGROUND_CLASS, NO_ATTRIBUTE};
use crate::error::Result;
use crate::targets::BBox;

/// Jitter never shrinks a side below this.
const MIN_SIDE: f64 = 0.01;
const JITTER_RETRIES: usize = 100;
const BACKGROUND_MIN_SIZE: f64 = 0.05;
const BACKGROUND_MAX_SIZE: f64 = 0.2;

/// One row of detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub attribute: usize,
    pub features: Vec<f64>,
    /// Index of the scene object this row came from; `None` for background.
    pub source: Option<usize>,
}

/// Standard normal scaled by `sigma`, redrawn until within `±2·sigma`.
pub fn truncated_jitter<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return sigma * z;
        }
    }
}

/// Jitters each coordinate independently, clamps to the unit square, and
/// redraws boxes thinner than the minimum side. Falls back to the input box.
pub fn jitter_box<R: Rng + ?Sized>(bbox: &BBox, sigma: f64, rng: &mut R) -> BBox {
    if sigma == 0.0 {
        return *bbox;
    }
    for _ in 0..JITTER_RETRIES {
        let mut c = [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max];
        for v in c.iter_mut() {
            *v = (*v + truncated_jitter(rng, sigma)).clamp(0.0, 1.0);
        }
        if c[2] - c[0] >= MIN_SIDE && c[3] - c[1] >= MIN_SIDE {
            return BBox::normalized(c[0], c[1], c[2], c[3]).expect("checked side lengths");
        }
    }
    *bbox
}

fn confuse<R: Rng + ?Sized>(id: usize, partners: &[usize], p: f64, rng: &mut R) -> usize {
    let others: Vec<usize> = partners.iter().copied().filter(|&x| x != id).collect();
    if rng.gen::<f64>() < p && !others.is_empty() {
        others[rng.gen_range(0..others.len())]
    } else {
        id
    }
}

/// Noisy detector: per object one drop draw, box jitter, class and attribute
/// confusion within their groups. Kept rows carry the object's latent
/// features; the rest is background. Rows are shuffled.
pub fn simulate_detector(
    scene: &Scene,
    noise: &DetectorNoise,
    slots: usize,
    feature_noise: f64,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<Detection>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(slots);
    for (index, obj) in scene.objects.iter().enumerate() {
        if rng.gen::<f64>() < noise.drop {
            continue;
        }
        let bbox = jitter_box(&obj.bbox, noise.jitter_sigma, &mut rng);
        let class = confuse(
            obj.class,
            vocab.class_partners(obj.class),
            noise.class_confusion,
            &mut rng,
        );
        let attribute = confuse(
            obj.attribute,
            vocab.attribute_partners(obj.attribute),
            noise.attribute_confusion,
            &mut rng,
        );
        rows.push(Detection {
            bbox,
            class,
            attribute,
            features: obj.features.clone(),
            source: Some(index),
        });
    }
    rows.truncate(slots);
    let dim = scene.objects.first().map_or(0, |o| o.features.len());
    while rows.len() < slots {
        let bbox = random_box(&mut rng, BACKGROUND_MIN_SIZE, BACKGROUND_MAX_SIZE);
        let mut features = latent_features(BACKGROUND_CLASS, NO_ATTRIBUTE, &bbox, vocab, dim);
        add_noise(&mut features, feature_noise, &mut rng);
        rows.push(Detection {
            bbox,
            class: BACKGROUND_CLASS,
            attribute: NO_ATTRIBUTE,
            features,
            source: None,
        });
    }
    rows.shuffle(&mut rng);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scene, WorldConfig};

    fn scene() -> (Scene, Vocabulary) {
        let v = Vocabulary::standard();
        (
            generate_scene(0, 3, &WorldConfig::default(), &v).unwrap(),
            v,
        )
    }

    #[test]
    fn zero_noise_is_ground_truth() {
        let (s, v) = scene();
        let dets = simulate_detector(&s, &DetectorNoise::none(), 6, 0.05, &v, 1).unwrap();
        assert_eq!(dets.len(), 6);
        for d in dets.iter().filter(|d| d.source.is_some()) {
            let o = &s.objects[d.source.unwrap()];
            assert_eq!(
                (d.bbox, d.class, d.attribute, &d.features),
                (o.bbox, o.class, o.attribute, &o.features)
            );
        }
        assert_eq!(
            dets.iter().filter(|d| d.source.is_some()).count(),
            s.objects.len()
        );
    }

    #[test]
    fn drop_everything() {
        let (s, v) = scene();
        let noise = DetectorNoise {
            drop: 1.0,
            ..DetectorNoise::none()
        };
        let dets = simulate_detector(&s, &noise, 6, 0.05, &v, 1).unwrap();
        assert!(dets
            .iter()
            .all(|d| d.class == BACKGROUND_CLASS && d.source.is_none()));
    }

    #[test]
    fn confusion_stays_in_group() {
        let (s, v) = scene();
        let noise = DetectorNoise {
            class_confusion: 1.0,
            attribute_confusion: 1.0,
            ..DetectorNoise::none()
        };
        for seed in 0..20 {
            for d in simulate_detector(&s, &noise, 6, 0.05, &v, seed).unwrap() {
                if let Some(i) = d.source {
                    let o = &s.objects[i];
                    let partners = v.class_partners(o.class);
                    assert!(
                        d.class == o.class && partners.is_empty()
                            || partners.contains(&d.class) && d.class != o.class
                    );
                }
            }
        }
    }

    #[test]
    fn jitter_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(truncated_jitter(&mut rng, 0.05).abs() <= 0.1);
        }
    }
}
