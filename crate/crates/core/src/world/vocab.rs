use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{CLS_ID, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::targets::EmbeddingTable;

pub const CLS_TOKEN: &str = "[CLS]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const PAD_TOKEN: &str = "[PAD]";

/// Class 0 is the detector's background label; attribute 0 is "none".
pub const BACKGROUND_CLASS: usize = 0;
pub const NO_ATTRIBUTE: usize = 0;

const FUNCTION_WORDS: [&str; 18] = [
    "the", "and", "what", "color", "shape", "is", "left", "right", "of", "there", "a", "how",
    "many", "are", "in", "both", "images", "thing",
];

/// Closed token vocabulary plus the class, attribute, and answer label sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    pub class_names: Vec<String>,
    pub attribute_names: Vec<String>,
    pub answer_names: Vec<String>,
    /// Surface words per class, canonical name first. Background has only its name.
    pub class_synonyms: Vec<Vec<String>>,
    pub attribute_synonyms: Vec<Vec<String>>,
    /// Groups of class ids the detector may confuse with each other.
    pub class_confusion: Vec<Vec<usize>>,
    pub attribute_confusion: Vec<Vec<usize>>,
    #[serde(skip)]
    token_index: HashMap<String, usize>,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Vocabulary {
    pub fn standard() -> Self {
        let class_synonyms = vec![
            strings(&["background"]),
            strings(&["square", "block"]),
            strings(&["rectangle", "slab"]),
            strings(&["circle", "disc", "ring"]),
            strings(&["oval", "ellipse"]),
            strings(&["triangle", "wedge"]),
        ];
        let attribute_synonyms = vec![
            strings(&["none"]),
            strings(&["red", "crimson", "scarlet"]),
            strings(&["orange", "amber"]),
            strings(&["blue", "azure", "navy"]),
            strings(&["purple", "violet"]),
            strings(&["green", "emerald", "lime"]),
            strings(&["yellow", "golden"]),
        ];
        let class_names: Vec<String> = class_synonyms.iter().map(|c| c[0].clone()).collect();
        let attribute_names: Vec<String> =
            attribute_synonyms.iter().map(|c| c[0].clone()).collect();
        let mut answer_names: Vec<String> = attribute_names[1..].to_vec();
        answer_names.extend(class_names[1..].iter().cloned());
        answer_names.extend(strings(&["yes", "no", "0", "1", "2", "3", "4"]));

        let mut tokens = strings(&[CLS_TOKEN, MASK_TOKEN, PAD_TOKEN]);
        tokens.extend(strings(&FUNCTION_WORDS));
        for cluster in class_synonyms[1..].iter().chain(&attribute_synonyms[1..]) {
            tokens.extend(cluster.iter().cloned());
        }
        let vocab = Vocabulary {
            tokens,
            class_names,
            attribute_names,
            answer_names,
            class_synonyms,
            attribute_synonyms,
            class_confusion: vec![vec![1, 2], vec![3, 4]],
            attribute_confusion: vec![vec![1, 2], vec![3, 4], vec![5, 6]],
            token_index: HashMap::new(),
        };
        vocab.rebuilt().expect("standard vocabulary is well formed")
    }

    /// Restores lookup tables after deserialization and checks the special ids.
    pub fn rebuilt(mut self) -> Result<Self> {
        self.token_index.clear();
        for (i, t) in self.tokens.iter().enumerate() {
            if self.token_index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("duplicate token `{t}`"),
                ));
            }
        }
        for (id, name) in [
            (CLS_ID, CLS_TOKEN),
            (MASK_ID, MASK_TOKEN),
            (PAD_ID, PAD_TOKEN),
        ] {
            if self.tokens.get(id).map(String::as_str) != Some(name) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("token {id} must be {name}"),
                ));
            }
        }
        if self.class_synonyms.len() != self.class_names.len()
            || self.attribute_synonyms.len() != self.attribute_names.len()
        {
            return Err(Error::invalid(
                "vocabulary",
                "one synonym list per class and attribute",
            ));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_id(&self, word: &str) -> Result<usize> {
        self.token_index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownName(word.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.token_id(w)).collect()
    }

    pub fn answer_id(&self, name: &str) -> Result<usize> {
        self.answer_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn attribute_id(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|c| c == name)
    }

    /// Class whose synonym list contains `word` (background excluded).
    pub fn class_of_word(&self, word: &str) -> Option<usize> {
        (1..self.class_synonyms.len()).find(|&c| self.class_synonyms[c].iter().any(|w| w == word))
    }

    pub fn attribute_of_word(&self, word: &str) -> Option<usize> {
        (1..self.attribute_synonyms.len())
            .find(|&a| self.attribute_synonyms[a].iter().any(|w| w == word))
    }

    /// Foreground classes and attributes that can appear in scenes.
    pub fn object_classes(&self) -> std::ops::Range<usize> {
        1..self.class_names.len()
    }

    pub fn object_attributes(&self) -> std::ops::Range<usize> {
        1..self.attribute_names.len()
    }

    pub fn class_partners(&self, class: usize) -> &[usize] {
        group_of(&self.class_confusion, class)
    }

    pub fn attribute_partners(&self, attribute: usize) -> &[usize] {
        group_of(&self.attribute_confusion, attribute)
    }

    /// Every embedding-table word grouped by meaning. Function words and the
    /// background/none labels form singleton clusters.
    pub fn semantic_clusters(&self) -> Vec<Vec<String>> {
        let mut clusters: Vec<Vec<String>> = self.class_synonyms.clone();
        clusters.extend(self.attribute_synonyms.iter().cloned());
        for t in &self.tokens {
            if t.starts_with('[') || clusters.iter().any(|c| c.contains(t)) {
                continue;
            }
            clusters.push(vec![t.clone()]);
        }
        clusters
    }
}

fn group_of(groups: &[Vec<usize>], id: usize) -> &[usize] {
    groups
        .iter()
        .find(|g| g.contains(&id))
        .map_or(&[], |g| g.as_slice())
}

/// Minimum cosine between words of one cluster and maximum across clusters.
pub const WITHIN_CLUSTER_MIN_COSINE: f64 = 0.8;
pub const CROSS_CLUSTER_MAX_COSINE: f64 = 0.3;

/// Default width of the word vectors.
pub const EMBEDDING_DIM: usize = 64;

/// Spread of cluster members around their centroid.
const MEMBER_SPREAD: f64 = 0.25;

/// Word vectors with orthonormal cluster centroids and members scattered
/// closely around them.
pub fn build_embedding_table(vocab: &Vocabulary, seed: u64, dim: usize) -> Result<EmbeddingTable> {
    let clusters = vocab.semantic_clusters();
    if clusters.len() > dim {
        return Err(Error::invalid(
            "build_embedding_table",
            format!(
                "{} clusters cannot be orthogonal in {dim} dimensions",
                clusters.len()
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(clusters.len());
    while centroids.len() < clusters.len() {
        let mut v: Vec<f64> = (0..dim)
            .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
            .collect();
        for c in &centroids {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            centroids.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = MEMBER_SPREAD / (dim as f64).sqrt();
    let mut entries = Vec::new();
    for (cluster, centroid) in clusters.iter().zip(&centroids) {
        for word in cluster {
            let v: Vec<f64> = centroid
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + scale * z
                })
                .collect();
            entries.push((word.clone(), v));
        }
    }
    let table = EmbeddingTable::new(entries)?;
    for (i, a) in clusters.iter().enumerate() {
        for (j, b) in clusters.iter().enumerate().skip(i) {
            for wa in a {
                for wb in b {
                    let cos = table.cosine(wa, wb)?;
                    let ok = if i == j {
                        cos >= WITHIN_CLUSTER_MIN_COSINE
                    } else {
                        cos <= CROSS_CLUSTER_MAX_COSINE
                    };
                    if !ok {
                        return Err(Error::Generation(format!(
                            "embedding table seed {seed}: cosine({wa}, {wb}) = {cos:.3} violates cluster bounds"
                        )));
                    }
                }
            }
        }
    }
    Ok(table)
}
