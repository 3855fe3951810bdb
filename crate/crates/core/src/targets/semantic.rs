use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the class similarity in the semantic criterion; the attribute
/// similarity takes the remaining quarter.
pub const CLASS_WEIGHT: f64 = 0.75;
pub const ATTRIBUTE_WEIGHT: f64 = 0.25;

/// Unit-length word vectors for a closed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Builds a table, normalizing every vector to unit length.
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (name, v) in entries {
            if v.len() != dim || dim == 0 {
                return Err(Error::shape(
                    "embedding_table",
                    format!("`{name}` has width {}", v.len()),
                ));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::invalid(
                    "embedding_table",
                    format!("`{name}` has zero norm"),
                ));
            }
            names.push(name);
            vectors.push(v.iter().map(|x| x / norm).collect());
        }
        let mut table = EmbeddingTable {
            names,
            vectors,
            index: HashMap::new(),
        };
        table.reindex()?;
        Ok(table)
    }

    fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (i, n) in self.names.iter().enumerate() {
            if self.index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(
                    "embedding_table",
                    format!("duplicate name `{n}`"),
                ));
            }
        }
        Ok(())
    }

    /// Restores the name index after deserialization.
    pub fn rebuilt(mut self) -> Result<Self> {
        self.reindex()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&i| self.vectors[i].as_slice())
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
    }
}

/// 0.75·cos(word, class) + 0.25·cos(word, attribute), each cosine clamped at 0.
pub fn semantic_score(
    word: &str,
    class_name: &str,
    attribute_name: &str,
    table: &EmbeddingTable,
) -> Result<f64> {
    let class_sim = table.cosine(word, class_name)?.max(0.0);
    let attr_sim = table.cosine(word, attribute_name)?.max(0.0);
    Ok(CLASS_WEIGHT * class_sim + ATTRIBUTE_WEIGHT * attr_sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(vec![
            ("square".into(), vec![1.0, 0.0, 0.0]),
            ("red".into(), vec![0.0, 2.0, 0.0]),
            ("the".into(), vec![0.0, 0.0, 1.0]),
            ("anti".into(), vec![-1.0, 0.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn eq16_coefficients() {
        let t = table();
        assert_eq!(semantic_score("square", "square", "red", &t).unwrap(), 0.75);
        assert_eq!(semantic_score("red", "square", "red", &t).unwrap(), 0.25);
        assert_eq!(semantic_score("the", "square", "red", &t).unwrap(), 0.0);
    }

    #[test]
    fn negative_cosines_are_clamped() {
        let t = table();
        assert_eq!(semantic_score("anti", "square", "red", &t).unwrap(), 0.0);
    }

    #[test]
    fn unknown_names_fail() {
        let t = table();
        assert!(matches!(
            semantic_score("circle", "square", "red", &t),
            Err(Error::UnknownName(n)) if n == "circle"
        ));
    }

    #[test]
    fn vectors_are_unit_length() {
        let t = table();
        assert!((t.cosine("red", "red").unwrap() - 1.0).abs() < 1e-15);
    }
}
