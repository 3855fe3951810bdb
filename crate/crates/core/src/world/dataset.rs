use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_embedding_table, generate_scene, generate_utterance, simulate_detector, Detection,
    PointerSpan, Scene, UtteranceKind, Vocabulary, WorldConfig,
};
use crate::encoder::{ObjectInput, TokenSequence};
use crate::error::{Error, Result};
use crate::targets::{
    build_soft_targets, AlignmentTarget, DetectionLabel, EmbeddingTable, GroundedSpan,
};

pub const DATASET_VERSION: u32 = 1;

/// Draws spent looking for a second scene with the wanted pair label.
const PAIR_SEARCH: usize = 200;

const STREAM_SCENE: u64 = 1;
const STREAM_DETECTOR: u64 = 2;
const STREAM_UTTERANCE: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of a generation stream.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::invalid(
                "split",
                format!("`{other}` is not train or eval"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: usize,
    pub split: Split,
    pub kind: UtteranceKind,
    pub words: Vec<String>,
    pub token_ids: Vec<usize>,
    pub spans: Vec<PointerSpan>,
    pub answer: Option<usize>,
    pub pair_label: Option<bool>,
    /// Whether the sentence describes `scenes[0]`.
    pub matched: bool,
    pub scene_ids: Vec<usize>,
    pub scenes: Vec<Scene>,
    /// Detector rows for each entry of `scenes`.
    pub detections: Vec<Vec<Detection>>,
}

/// Encoder inputs for a list of detector rows.
pub fn object_inputs(detections: &[Detection]) -> Vec<ObjectInput> {
    detections
        .iter()
        .map(|d| ObjectInput {
            features: d.features.clone(),
            bbox: d.bbox,
        })
        .collect()
}

/// Predicted (class, attribute) label per detector row.
pub fn detection_classes(detections: &[Detection]) -> Vec<(usize, usize)> {
    detections.iter().map(|d| (d.class, d.attribute)).collect()
}

pub fn detection_labels<'v>(
    detections: &[Detection],
    vocab: &'v Vocabulary,
) -> Vec<DetectionLabel<'v>> {
    detections
        .iter()
        .map(|d| DetectionLabel {
            bbox: d.bbox,
            class_name: &vocab.class_names[d.class],
            attribute_name: &vocab.attribute_names[d.attribute],
        })
        .collect()
}

impl UtteranceRecord {
    pub fn grounded_spans(&self) -> Vec<GroundedSpan> {
        self.spans.iter().map(PointerSpan::grounded).collect()
    }

    pub fn is_annotated(&self) -> bool {
        !self.spans.is_empty()
    }

    pub fn tokens(&self, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::new(&self.token_ids, max_len)
    }

    /// Soft word × detection targets against the detections of `scenes[0]`.
    pub fn alignment_target(
        &self,
        vocab: &Vocabulary,
        table: &EmbeddingTable,
        rows: usize,
    ) -> Result<AlignmentTarget> {
        let labels = detection_labels(&self.detections[0], vocab);
        build_soft_targets(&self.words, rows, &self.grounded_spans(), &labels, table)
    }
}

/// Line 1 of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub world_config: WorldConfig,
    pub vocab: Vocabulary,
    pub embedding_seed: u64,
    pub embedding_dim: usize,
}

impl DatasetHeader {
    pub fn new(world_config: WorldConfig, vocab: Vocabulary) -> Self {
        DatasetHeader {
            format_version: DATASET_VERSION,
            embedding_seed: world_config.embedding_seed,
            embedding_dim: world_config.embedding_dim,
            world_config,
            vocab,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<UtteranceRecord>,
}

/// Counts printed after generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub utterances: usize,
    pub train: usize,
    pub eval: usize,
    pub captions: usize,
    pub questions: usize,
    pub pair_statements: usize,
    pub span_coverage: f64,
}

impl Dataset {
    pub fn vocab(&self) -> &Vocabulary {
        &self.header.vocab
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        build_embedding_table(
            &self.header.vocab,
            self.header.embedding_seed,
            self.header.embedding_dim,
        )
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Fraction of records carrying at least one pointer span.
    pub fn span_coverage(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.is_annotated()).count() as f64 / self.records.len() as f64
    }

    pub fn summary(&self) -> DatasetSummary {
        let count = |k| self.records.iter().filter(|r| r.kind == k).count();
        let mut scenes: Vec<usize> = self
            .records
            .iter()
            .flat_map(|r| r.scene_ids.iter().copied())
            .collect();
        scenes.sort_unstable();
        scenes.dedup();
        DatasetSummary {
            scenes: scenes.len(),
            utterances: self.records.len(),
            train: self.split(Split::Train).count(),
            eval: self.split(Split::Eval).count(),
            captions: count(UtteranceKind::Caption),
            questions: count(UtteranceKind::Question),
            pair_statements: count(UtteranceKind::PairStatement),
            span_coverage: self.span_coverage(),
        }
    }
}

fn choose_kind<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> UtteranceKind {
    let m = &config.kind_mix;
    let u = rng.gen::<f64>() * (m.caption + m.question + m.pair);
    if u < m.caption {
        UtteranceKind::Caption
    } else if u < m.caption + m.question || m.pair == 0.0 {
        UtteranceKind::Question
    } else {
        UtteranceKind::PairStatement
    }
}

/// Generates every scene, its detections, and all utterance records. Each
/// item draws from its own seed, so the output depends only on the config.
pub fn generate_dataset(config: &WorldConfig) -> Result<Dataset> {
    let vocab = Vocabulary::standard();
    config.validate(vocab.class_names.len(), vocab.attribute_names.len())?;
    build_embedding_table(&vocab, config.embedding_seed, config.embedding_dim)?;
    let mut scenes = Vec::with_capacity(config.scenes);
    let mut detections = Vec::with_capacity(config.scenes);
    for i in 0..config.scenes {
        let scene = generate_scene(
            i,
            derive_seed(config.seed, STREAM_SCENE, i as u64),
            config,
            &vocab,
        )?;
        detections.push(simulate_detector(
            &scene,
            &config.detector,
            config.detections_per_scene,
            config.feature_noise,
            &vocab,
            derive_seed(config.seed, STREAM_DETECTOR, i as u64),
        )?);
        scenes.push(scene);
    }
    let train_scenes = config.train_scenes();
    let total = config.train_utterances + config.eval_utterances;
    let mut records = Vec::with_capacity(total);
    for id in 0..total {
        let (split, pool) = if id < config.train_utterances {
            (Split::Train, 0..train_scenes)
        } else {
            (Split::Eval, train_scenes..config.scenes)
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_UTTERANCE, id as u64));
        let a = rng.gen_range(pool.clone());
        let annotated = rng.gen::<f64>() < config.annotation_rate;
        let kind = choose_kind(config, &mut rng);
        let (utterance, scene_ids) = if kind == UtteranceKind::PairStatement {
            let wanted = rng.gen_bool(0.5);
            let mut found = None;
            for _ in 0..PAIR_SEARCH {
                let mut b = rng.gen_range(pool.clone());
                if b == a {
                    b = if b + 1 < pool.end { b + 1 } else { pool.start };
                }
                let u = generate_utterance(
                    &[&scenes[a], &scenes[b]],
                    kind,
                    rng.gen(),
                    &vocab,
                    annotated,
                )?;
                let hit = u.pair_label == Some(wanted);
                found = Some((u, vec![a, b]));
                if hit {
                    break;
                }
            }
            found.expect("search runs at least once")
        } else {
            (
                generate_utterance(&[&scenes[a]], kind, rng.gen(), &vocab, annotated)?,
                vec![a],
            )
        };
        if utterance.words.len() > config.max_tokens {
            return Err(Error::Generation(format!(
                "utterance {id} has {} tokens, budget {}",
                utterance.words.len(),
                config.max_tokens
            )));
        }
        records.push(UtteranceRecord {
            id,
            split,
            kind,
            token_ids: vocab.encode(&utterance.words)?,
            words: utterance.words,
            spans: utterance.spans,
            answer: utterance.answer,
            pair_label: utterance.pair_label,
            matched: true,
            scenes: scene_ids.iter().map(|&s| scenes[s].clone()).collect(),
            detections: scene_ids.iter().map(|&s| detections[s].clone()).collect(),
            scene_ids,
        });
    }
    Ok(Dataset {
        header: DatasetHeader::new(config.clone(), vocab),
        records,
    })
}

/// Writes the header line followed by one JSON record per line.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write_line = |value: String| -> Result<()> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&dataset.header)?)?;
    for r in &dataset.records {
        write_line(serde_json::to_string(r)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, detail: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.to_string(),
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| parse_error(path, 1, e))?;
    let found = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_error(path, 1, "header lacks format_version"))?;
    if found != u64::from(DATASET_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: DATASET_VERSION,
        });
    }
    let mut header: DatasetHeader =
        serde_json::from_value(raw).map_err(|e| parse_error(path, 1, e))?;
    header.vocab = header
        .vocab
        .rebuilt()
        .map_err(|e| parse_error(path, 1, e))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let record: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, number, e))?;
        records.push(record);
    }
    Ok(Dataset { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            scenes: 40,
            train_utterances: 60,
            eval_utterances: 20,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(
            derive_seed(1, STREAM_SCENE, 0),
            derive_seed(1, STREAM_DETECTOR, 0)
        );
        assert_ne!(
            derive_seed(1, STREAM_SCENE, 0),
            derive_seed(1, STREAM_SCENE, 1)
        );
        assert_eq!(derive_seed(9, 3, 4), derive_seed(9, 3, 4));
    }

    #[test]
    fn splits_use_disjoint_scenes() {
        let d = generate_dataset(&small()).unwrap();
        let train = small().train_scenes();
        assert!(d
            .split(Split::Train)
            .all(|r| r.scene_ids.iter().all(|&s| s < train)));
        assert!(d
            .split(Split::Eval)
            .all(|r| r.scene_ids.iter().all(|&s| s >= train)));
    }

    #[test]
    fn header_only_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let d = generate_dataset(&WorldConfig {
            train_utterances: 0,
            eval_utterances: 0,
            scenes: 10,
            ..WorldConfig::default()
        })
        .unwrap();
        write_dataset(&path, &d).unwrap();
        let back = read_dataset(&path).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back, d);
    }

    #[test]
    fn invalid_config_names_field() {
        let err = generate_dataset(&WorldConfig {
            annotation_rate: 1.5,
            ..small()
        })
        .unwrap_err();
        assert!(err.to_string().contains("annotation_rate"));
    }
}
