use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};

/// Dense row-major float64 tensor of rank 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return config_err(format!("tensor rank must be 1 or 2, got shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return config_err(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value {v}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)`; rank-1 tensors are treated as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked on construction"),
        }
    }

    pub fn to_array(&self) -> Array2<f64> {
        let (r, c) = self.dims2();
        Array2::from_shape_vec((r, c), self.data.clone()).expect("shape checked")
    }

    /// Overwrites values from a matrix of the same element count.
    pub fn assign(&mut self, values: &Array2<f64>) -> Result<()> {
        if values.len() != self.data.len() || values.dim() != self.dims2() {
            return config_err(format!(
                "cannot assign {:?} into tensor of shape {:?}",
                values.dim(),
                self.shape
            ));
        }
        for (dst, src) in self.data.iter_mut().zip(values.iter()) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameter tensors in a deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name == "meta" {
            return config_err("parameter name `meta` is reserved");
        }
        if self.entries.contains_key(&name) {
            return config_err(format!("duplicate parameter name `{name}`"));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Copies every entry of `other` into `self` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (k, t) in other.iter() {
            self.insert(format!("{prefix}{k}"), t.clone())?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect();
        ParamSet { entries }
    }

    pub fn to_json(&self) -> Map<String, Value> {
        let mut out = Map::new();
        for (name, t) in &self.entries {
            let mut obj = Map::new();
            obj.insert("shape".into(), Value::from(t.shape.clone()));
            obj.insert("data".into(), Value::from(t.data.clone()));
            out.insert(name.clone(), Value::Object(obj));
        }
        out
    }

    pub fn from_json(obj: &Map<String, Value>) -> Result<Self> {
        let mut set = ParamSet::new();
        for (name, v) in obj {
            if name == "meta" {
                continue;
            }
            let shape: Vec<usize> = serde_json::from_value(
                v.get("shape")
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("`{name}` lacks shape")))?,
            )?;
            let data: Vec<f64> = serde_json::from_value(
                v.get("data")
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("`{name}` lacks data")))?,
            )?;
            set.insert(name.clone(), Tensor::new(shape, data)?)?;
        }
        Ok(set)
    }
}

/// A parameter set plus free-form metadata, serialised as one JSON document.
///
/// Keys are emitted in sorted order and floats in shortest round-trip form, so
/// write → read → write is byte-identical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Map<String, Value>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Self { meta: Map::new(), params }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json_string(&self) -> String {
        let mut root = self.params.to_json();
        root.insert("meta".into(), Value::Object(self.meta.clone()));
        let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("finite values");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("checkpoint root must be an object".into()))?;
        let meta = match obj.get("meta") {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return config_err("checkpoint `meta` must be an object"),
            None => Map::new(),
        };
        Ok(Self { meta, params: ParamSet::from_json(obj)? })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn digest(&self) -> String {
        hex_digest(self.to_json_string().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes_and_duplicates() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![2])).is_err());
        assert!(p.insert("meta", Tensor::zeros(vec![2])).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_roundtrip_is_byte_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 1..40),
            tiny in proptest::collection::vec(-1e-300f64..1e-300, 1..5),
        ) {
            let mut p = ParamSet::new();
            p.insert("b.w", Tensor::vector(vals.clone())).unwrap();
            p.insert("a.t", Tensor::vector(tiny)).unwrap();
            let ck = Checkpoint::new(p).with_meta("seed", 7u64).with_meta("form", "linear");
            let s1 = ck.to_json_string();
            let back = Checkpoint::from_json_str(&s1).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.to_json_string(), s1);
        }
    }
}
