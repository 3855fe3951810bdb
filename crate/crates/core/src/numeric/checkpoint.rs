use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON checkpoint: parameter name → shape + flat values, optimizer state, and
/// an opaque metadata blob (the model configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub metadata: serde_json::Value,
    pub params: BTreeMap<String, TensorRecord>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn capture(
        store: &ParamStore,
        adam: Option<&AdamState>,
        metadata: serde_json::Value,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            metadata,
            params,
            adam: adam.cloned(),
        }
    }

    /// Copies stored values into `store`; names and shapes must match exactly.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let record = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if record.shape != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?} in checkpoint, {:?} in model",
                    record.shape,
                    store.get(id).shape()
                )));
            }
            store.set_values(id, &record.data)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ck.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{LrSchedule, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_value_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add_normal("a.weight", vec![4, 3], 0.02, &mut rng)
            .unwrap();
        s.add(
            "a.bias",
            Tensor::vector(vec![1.0 / 3.0, -2e-300, 7.1e12]).unwrap(),
        )
        .unwrap();
        let adam = AdamState::new(
            &s,
            1e-3,
            LrSchedule {
                warmup_steps: 2,
                total_steps: Some(9),
            },
        );
        let ck = Checkpoint::capture(&s, Some(&adam), serde_json::json!({"d": 4}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);

        let mut other = s.clone();
        other
            .set_values(other.id("a.bias").unwrap(), &[0.0, 0.0, 0.0])
            .unwrap();
        back.restore(&mut other).unwrap();
        for ((_, _, x), (_, _, y)) in s.iter().zip(other.iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let ck = Checkpoint::capture(&s, None, serde_json::Value::Null);
        let mut t = ParamStore::new();
        t.add("w", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!(matches!(ck.restore(&mut t), Err(Error::Checkpoint(_))));
    }
}
