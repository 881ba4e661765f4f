//! Model checkpoint container: named parameter arrays with shapes, the full
//! model config, and a format version. JSON on disk; save→load→save is
//! byte-identical because parameter order and float formatting are fixed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Plain-data snapshot of a model. `Send`, unlike [`Model`], so it also
/// carries parameters to worker threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        let params = model
            .params
            .named()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                shape: t.shape(),
                values: t.values(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            params,
        }
    }

    /// Rebuild a model; every expected parameter must be present with the
    /// right shape.
    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: "<checkpoint>".into(),
                found: self.format_version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let model = Model::new(self.config.clone(), 0)?;
        let mut by_name: BTreeMap<String, NamedArray> =
            self.params.into_iter().map(|a| (a.name.clone(), a)).collect();
        for (name, tensor) in model.params.named() {
            let arr = by_name.remove(&name).ok_or_else(|| Error::Contract(format!(
                "checkpoint is missing parameter '{name}'"
            )))?;
            if arr.shape != tensor.shape() {
                return Err(Error::shape(
                    "checkpoint-load",
                    format!("'{name}' has shape {:?}, expected {:?}", arr.shape, tensor.shape()),
                ));
            }
            tensor.set_values(&arr.values)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Contract(format!(
                "checkpoint has unexpected parameter '{extra}'"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)
            .map_err(|e| Error::Contract(format!("checkpoint serialize: {e}")))?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.display().to_string(),
                found: ckpt.format_version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        Ok(ckpt)
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Model> {
        Checkpoint::load(path)?.into_model()
    }

    /// Independent copy with fresh parameter storage.
    pub fn deep_clone(&self) -> Model {
        Checkpoint::from_model(self)
            .into_model()
            .expect("checkpoint of a valid model rebuilds")
    }
}

/// Outcome of importing a (possibly differently configured) checkpoint.
#[derive(Debug, Clone)]
pub struct ImportReport {
    /// Parameters copied over by name.
    pub loaded: Vec<String>,
    /// Parameters of this model absent from the checkpoint (kept at their
    /// fresh initialization), e.g. the segmental attention set when
    /// importing a global soft baseline.
    pub fresh: Vec<String>,
    /// Checkpoint parameters this model has no slot for.
    pub skipped: Vec<String>,
}

impl Model {
    /// Copy matching parameters from `ckpt` into this model. Names present
    /// in both must agree in shape; everything else is reported.
    pub fn import_params(&self, ckpt: &Checkpoint) -> Result<ImportReport> {
        let mut by_name: BTreeMap<&str, &NamedArray> =
            ckpt.params.iter().map(|a| (a.name.as_str(), a)).collect();
        let mut report = ImportReport {
            loaded: Vec::new(),
            fresh: Vec::new(),
            skipped: Vec::new(),
        };
        for (name, tensor) in self.params.named() {
            match by_name.remove(name.as_str()) {
                Some(arr) => {
                    if arr.shape != tensor.shape() {
                        return Err(Error::shape(
                            "import",
                            format!("'{name}' has shape {:?}, expected {:?}", arr.shape, tensor.shape()),
                        ));
                    }
                    tensor.set_values(&arr.values)?;
                    report.loaded.push(name);
                }
                None => report.fresh.push(name),
            }
        }
        report.skipped = by_name.keys().map(|s| s.to_string()).collect();
        Ok(report)
    }
}

/// Parameter snapshot as plain vectors (for import/regression tooling).
pub fn flatten_params(model: &Model) -> Vec<(String, Vec<f64>)> {
    model
        .params
        .named()
        .into_iter()
        .map(|(n, t): (String, Tensor)| (n, t.values()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Variant;
    use crate::nnet::EncoderConfig;

    fn small_model(variant: Variant) -> Model {
        let cfg = ModelConfig {
            vocab_size: 3,
            feat_dim: 2,
            encoder: EncoderConfig {
                num_layers: 1,
                hidden_per_direction: 2,
                pool_factors: vec![2],
            },
            dec_hidden: 3,
            embed_dim: 2,
            att_dim: 2,
            variant,
            dropout: 0.0,
            segmental_feedback: false,
        };
        Model::new(cfg, 42).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::global_soft(), Variant::hard(), Variant::segmental()] {
            let model = small_model(variant);
            let p1 = dir.path().join("a.ckpt");
            let p2 = dir.path().join("b.ckpt");
            model.save(&p1).unwrap();
            let reloaded = Model::load(&p1).unwrap();
            reloaded.save(&p2).unwrap();
            let b1 = std::fs::read(&p1).unwrap();
            let b2 = std::fs::read(&p2).unwrap();
            assert_eq!(b1, b2, "round trip changed bytes for {variant:?}");
        }
    }

    #[test]
    fn load_restores_values() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model(Variant::hard());
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        for ((n1, t1), (n2, t2)) in model.params.named().iter().zip(loaded.params.named().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.values(), t2.values(), "{n1}");
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model(Variant::hard());
        let mut ckpt = Checkpoint::from_model(&model);
        ckpt.format_version = 99;
        let path = dir.path().join("bad.ckpt");
        let json = serde_json::to_string(&ckpt).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn deep_clone_has_fresh_storage() {
        let model = small_model(Variant::hard());
        let clone = model.deep_clone();
        let (_, t) = &model.params.named()[0];
        let (_, u) = &clone.params.named()[0];
        assert!(!t.same_storage(u));
        assert_eq!(t.values(), u.values());
    }
}
