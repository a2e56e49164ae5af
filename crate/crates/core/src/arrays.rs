//! Container of named arrays plus a string metadata record, stored as safetensors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: ArrayData::F32(data),
        }
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: ArrayData::F64(data),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            ArrayData::F32(v) => v.clone(),
            ArrayData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match &self.data {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayFile {
    pub arrays: Vec<NamedArray>,
    pub metadata: BTreeMap<String, String>,
}

impl ArrayFile {
    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("array {name:?} missing from container")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = self
            .arrays
            .iter()
            .map(|a| {
                let dtype = match a.data {
                    ArrayData::F32(_) => Dtype::F32,
                    ArrayData::F64(_) => Dtype::F64,
                };
                (a.name.clone(), a.shape.clone(), dtype, a.bytes())
            })
            .collect();
        let views = raw
            .iter()
            .map(|(name, shape, dtype, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes).map(|v| (name.as_str(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        Ok(safetensors::serialize(views, Some(meta))?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes)?;
        let metadata = header.metadata().clone().unwrap_or_default().into_iter().collect();
        let st = SafeTensors::deserialize(bytes)?;
        let mut names: Vec<String> = st.names().into_iter().map(str::to_string).collect();
        names.sort();
        let mut arrays = Vec::with_capacity(names.len());
        for name in names {
            let t = st.tensor(&name)?;
            let data = match t.dtype() {
                Dtype::F32 => ArrayData::F32(
                    t.data()
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    t.data()
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => return Err(Error::Format(format!("array {name:?} has unsupported dtype {other:?}"))),
            };
            arrays.push(NamedArray {
                name,
                shape: t.shape().to_vec(),
                data,
            });
        }
        Ok(Self { arrays, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_precision() {
        let mut f = ArrayFile::default();
        f.arrays
            .push(NamedArray::f32("a", vec![2, 2], vec![1.0, -2.5, 3.0, 0.1]));
        f.arrays.push(NamedArray::f64("b", vec![3], vec![1e-300, 2.0, -0.0]));
        f.metadata.insert("version".into(), "1".into());
        let g = ArrayFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(f, g);
        assert!(g.get("missing").is_err());
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(
            ArrayFile::from_bytes(b"not a container"),
            Err(Error::Format(_))
        ));
    }
}
