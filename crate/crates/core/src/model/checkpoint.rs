//! Checkpoints: one DTEN file per parameter tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{tensor_read, tensor_write};
use crate::model::net::{ModelShape, ToyModel, PARAM_NAMES};
use crate::tensor::DenseTensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub shape: ModelShape,
    pub params: Vec<ParamEntry>,
}

pub fn save(model: &ToyModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    for ((name, dims), values) in PARAM_NAMES.iter().zip(model.param_dims()).zip(model.params()) {
        let file = format!("{name}.dten");
        tensor_write(&DenseTensor::from_f64(dims.clone(), values)?, dir.join(&file))?;
        params.push(ParamEntry {
            name: name.to_string(),
            file,
            dims,
        });
    }
    let manifest = Manifest {
        format: "dten-per-parameter/1".into(),
        shape: model.shape,
        params,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<ToyModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut model = ToyModel::zeros(manifest.shape)?;
    let expected = model.param_dims();
    for ((slot, name), dims) in model.params_mut().into_iter().zip(PARAM_NAMES).zip(expected) {
        let entry = manifest
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing {name}")))?;
        let t = tensor_read(dir.join(&entry.file))?;
        if t.dims() != dims.as_slice() {
            return Err(Error::Validation(format!(
                "{name} has dims {:?}, expected {dims:?}",
                t.dims()
            )));
        }
        *slot = t.to_f64();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_at_storage_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        let m = ToyModel::init(ModelShape::new(3, 8, 4), &mut rng).unwrap();
        save(&m, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.shape, m.shape);
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // Saving the loaded model again is byte-identical.
        let dir2 = tempfile::tempdir().unwrap();
        save(&back, dir2.path()).unwrap();
        for name in PARAM_NAMES {
            let f = format!("{name}.dten");
            assert_eq!(
                fs::read(dir.path().join(&f)).unwrap(),
                fs::read(dir2.path().join(&f)).unwrap()
            );
        }
    }
}
