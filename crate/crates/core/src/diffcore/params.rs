use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geodata::Dtype;

/// Ordered collection of named tensors; order is the on-disk order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Describes the contents of `params.bin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub param_dtype: Dtype,
    pub params: Vec<ParamSpec>,
}

pub const PARAMS_FILE: &str = "params.bin";

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
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

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.iter()
            .map(|(n, t)| ParamSpec {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    /// Writes `params.bin` into `dir` and returns its manifest.
    pub fn save(&self, dir: &Path, dtype: Dtype) -> Result<ParamManifest> {
        let flat: Vec<f64> = self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        let path = dir.join(PARAMS_FILE);
        fs::write(&path, dtype.encode(&flat)).map_err(|e| Error::io(&path, e))?;
        Ok(ParamManifest {
            param_dtype: dtype,
            params: self.specs(),
        })
    }

    pub fn load(dir: &Path, manifest: &ParamManifest) -> Result<ParamSet> {
        let path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let total: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        let want = total * manifest.param_dtype.width();
        if bytes.len() != want {
            return Err(Error::format(&path, format!("expected {want} bytes, found {}", bytes.len())));
        }
        let flat = manifest.param_dtype.decode(&bytes);
        let mut set = ParamSet::new();
        let mut at = 0;
        for p in &manifest.params {
            let n: usize = p.shape.iter().product();
            set.push(p.name.clone(), Tensor::new(&p.shape, flat[at..at + n].to_vec())?)?;
            at += n;
        }
        Ok(set)
    }
}
