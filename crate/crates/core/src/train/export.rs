use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::TraceKind;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{Graph, ParamStore, Tensor};
use crate::objectives::answer_logits;
use crate::targets::BBox;
use crate::world::{object_inputs, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub index: usize,
    pub class: String,
    pub attribute: String,
    pub bbox: BBox,
    /// Scene object the detection came from, if any.
    pub source: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedAnswer {
    /// Language token whose output feeds the answer head.
    pub token: String,
    pub answer_id: usize,
    pub answer: String,
}

/// JSON sidecar describing one exported CSV matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSidecar {
    pub csv: String,
    pub example_id: usize,
    pub kind: TraceKind,
    pub layer: usize,
    pub heads: usize,
    /// `None` for the sum over heads.
    pub head: Option<usize>,
    /// Row labels.
    pub tokens: Vec<String>,
    /// Column labels.
    pub objects: Vec<ObjectDescriptor>,
    pub predicted_answer: PredictedAnswer,
    pub true_answer: Option<String>,
}

/// Rows are tokens, columns are objects; values use the shortest
/// round-trip decimal form.
pub fn write_matrix_csv(path: &Path, matrix: &Tensor) -> Result<()> {
    let mut text = String::new();
    for i in 0..matrix.rows() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (i, line) in text.lines().enumerate() {
        let values = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        if *cols.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "ragged row".to_string(),
            });
        }
        data.extend(values);
        rows += 1;
    }
    Tensor::matrix(rows, cols.unwrap_or(0), data)
}

/// Writes the word-from-object attention of one inter-modality layer for one
/// example: a single summed matrix, or one matrix per head. Returns the CSV paths.
pub fn export_attention(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    example_id: usize,
    layer: usize,
    sum_heads: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let layers = model.config.cross_layers;
    if layer >= layers {
        return Err(Error::invalid(
            "export_attention",
            format!("layer {layer} out of range, valid layers are 0..={}", layers - 1),
        ));
    }
    let record = dataset
        .records
        .iter()
        .find(|r| r.id == example_id)
        .ok_or_else(|| Error::invalid("export_attention", format!("no example with id {example_id}")))?;
    let vocab = dataset.vocab();
    let detections = &record.detections[0];
    let mut g = Graph::new(store);
    let tokens = record.tokens(model.config.max_tokens)?;
    let out = model.encode(&mut g, &object_inputs(detections), &tokens)?;
    let trace = out
        .trace(&g, TraceKind::WordsFromObjects, layer)
        .ok_or_else(|| Error::invalid("export_attention", "missing trace"))?;
    let logits = answer_logits(&mut g, &out, &model.heads)?;
    let answer_id = crate::numeric::functional::top_k_indices(g.value(logits).data(), 1)[0];
    let predicted_answer = PredictedAnswer {
        token: record.words[0].clone(),
        answer_id,
        answer: vocab.answer_names[answer_id].clone(),
    };
    let objects: Vec<ObjectDescriptor> = detections
        .iter()
        .enumerate()
        .map(|(index, d)| ObjectDescriptor {
            index,
            class: vocab.class_names[d.class].clone(),
            attribute: vocab.attribute_names[d.attribute].clone(),
            bbox: d.bbox,
            source: d.source,
        })
        .collect();
    let real = record.words.len();
    let keep_rows = |m: &Tensor| -> Result<Tensor> {
        Tensor::matrix(real, m.cols(), m.data()[..real * m.cols()].to_vec())
    };
    let matrices: Vec<(Option<usize>, Tensor)> = if sum_heads {
        vec![(None, keep_rows(&trace.summed())?)]
    } else {
        trace
            .heads
            .iter()
            .enumerate()
            .map(|(h, m)| Ok((Some(h), keep_rows(m)?)))
            .collect::<Result<_>>()?
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(matrices.len());
    for (head, matrix) in matrices {
        let stem = match head {
            Some(h) => format!("attention-ex{example_id}-layer{layer}-head{h}"),
            None => format!("attention-ex{example_id}-layer{layer}-sum"),
        };
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write_matrix_csv(&csv_path, &matrix)?;
        let sidecar = AttentionSidecar {
            csv: format!("{stem}.csv"),
            example_id,
            kind: TraceKind::WordsFromObjects,
            layer,
            heads: trace.heads.len(),
            head,
            tokens: record.words.clone(),
            objects: objects.clone(),
            predicted_answer: predicted_answer.clone(),
            true_answer: record.answer.map(|a| vocab.answer_names[a].clone()),
        };
        let json_path = out_dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json_path, e))?;
        written.push(csv_path);
    }
    Ok(written)
}
