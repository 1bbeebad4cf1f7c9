//! JSON checkpoint documents.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "module_kind": "path_decoder",
//!   "hyperparameters": { ... },
//!   "params": [ { "name": "enc.query.weight", "shape": [64, 64], "values": [ ... ] } ]
//! }
//! ```
//!
//! Values are written with the shortest decimal form that parses back to the
//! same `f64`, so save/load is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::Mat;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub module_kind: String,
    pub hyperparameters: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_store(
        module_kind: &str,
        hyperparameters: serde_json::Value,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let m = store.get(id);
                ParamRecord {
                    name: store.name(id).to_string(),
                    shape: [m.nrows(), m.ncols()],
                    values: m.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            module_kind: module_kind.to_string(),
            hyperparameters,
            params,
        }
    }

    /// Fails unless the document is for `module_kind` at the current schema.
    pub fn expect_kind(&self, module_kind: &str) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.module_kind != module_kind {
            return Err(NnError::Checkpoint(format!(
                "expected module_kind {module_kind:?}, found {:?}",
                self.module_kind
            )));
        }
        Ok(())
    }

    /// Copies every stored parameter into `store`. Names and shapes must
    /// match exactly and every parameter of `store` must be covered.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for rec in &self.params {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", rec.name)))?;
            let target = store.get_mut(id);
            if [target.nrows(), target.ncols()] != rec.shape
                || rec.values.len() != rec.shape[0] * rec.shape[1]
            {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for {}: stored {:?}, expected {:?}",
                    rec.name,
                    rec.shape,
                    [target.nrows(), target.ncols()]
                )));
            }
            *target = Mat::from_shape_vec((rec.shape[0], rec.shape[1]), rec.values.clone())
                .expect("length checked");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_lossless(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.add("w", Mat::from_shape_vec((1, n), values.clone()).unwrap());
            let ck = Checkpoint::from_store("test", serde_json::json!({"n": n}), &store);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            prop_assert_eq!(&back, &ck);
            let mut fresh = ParamStore::new();
            fresh.add("w", Mat::zeros((1, n)));
            back.restore_into(&mut fresh).unwrap();
            for (a, b) in fresh.get(fresh.find("w").unwrap()).iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_wrong_kind_and_shape() {
        let mut store = ParamStore::new();
        store.add("w", Mat::zeros((2, 2)));
        let ck = Checkpoint::from_store("translit", serde_json::Value::Null, &store);
        assert!(ck.expect_kind("correct").is_err());
        let mut other = ParamStore::new();
        other.add("w", Mat::zeros((2, 3)));
        assert!(ck.restore_into(&mut other).is_err());
    }
}
