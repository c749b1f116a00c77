//! Single-file tensor container for model weights.
//!
//! Layout: 8-byte little-endian header length, a JSON header mapping
//! tensor name to `{dtype, shape, byte_range}`, then the raw payload of
//! little-endian f32 data. Writing is canonical (names sorted, ranges
//! packed in name order), so read→write round trips are byte-identical
//! for files produced by this writer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    /// Half-open `[start, end)` byte offsets into the payload.
    byte_range: [u64; 2],
}

/// A named f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let elems: usize = shape.iter().product();
        if elems != data.len() {
            return Err(Error::Container(format!(
                "shape {shape:?} holds {elems} elements but {} were provided",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// In-memory view of a container file: tensor name → tensor, kept sorted.
#[derive(Debug, Clone, Default)]
pub struct TensorContainer {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(Error::Container(format!("duplicate tensor {name:?}")));
        }
        self.tensors.insert(name.to_string(), Tensor::new(shape, data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Fetch a tensor and check its shape against the manifest-derived
    /// expectation. Missing tensors are an error, never guessed at.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))?;
        if t.shape != shape {
            return Err(Error::Container(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = BTreeMap::new();
        let mut payload = Vec::new();
        for (name, tensor) in &self.tensors {
            let start = payload.len() as u64;
            for v in &tensor.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            header.insert(
                name.clone(),
                HeaderEntry {
                    dtype: "f32".to_string(),
                    shape: tensor.shape.clone(),
                    byte_range: [start, payload.len() as u64],
                },
            );
        }
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Container("file shorter than the 8-byte header length".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let rest = &bytes[8..];
        if header_len > rest.len() {
            return Err(Error::Container(format!(
                "declared header length {header_len} exceeds remaining {} bytes",
                rest.len()
            )));
        }
        let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::Container(format!("malformed header: {e}")))?;
        let payload = &rest[header_len..];

        // Validate ranges: in-bounds, non-overlapping, and exactly covering
        // the payload.
        let mut ranges: Vec<(&str, u64, u64)> = header
            .iter()
            .map(|(n, e)| (n.as_str(), e.byte_range[0], e.byte_range[1]))
            .collect();
        ranges.sort_by_key(|&(_, s, _)| s);
        let mut covered = 0u64;
        let mut prev_end = 0u64;
        for &(name, start, end) in &ranges {
            if end < start {
                return Err(Error::Container(format!("tensor {name:?} has inverted byte range")));
            }
            if start < prev_end {
                return Err(Error::Container(format!(
                    "tensor {name:?} byte range overlaps its predecessor"
                )));
            }
            if end > payload.len() as u64 {
                return Err(Error::Container("payload shorter than declared ranges".into()));
            }
            covered += end - start;
            prev_end = end;
        }
        if covered != payload.len() as u64 {
            return Err(Error::Container(format!(
                "declared ranges cover {covered} bytes but payload holds {}",
                payload.len()
            )));
        }

        let mut tensors = BTreeMap::new();
        for (name, entry) in header {
            if entry.dtype != "f32" {
                return Err(Error::Container(format!(
                    "tensor {name:?} has unsupported dtype {:?}",
                    entry.dtype
                )));
            }
            let elems: usize = entry.shape.iter().product();
            let [start, end] = entry.byte_range;
            let len = (end - start) as usize;
            if elems * 4 != len {
                return Err(Error::Container(format!(
                    "tensor {name:?}: shape {:?} needs {} bytes, range holds {len}",
                    entry.shape,
                    elems * 4
                )));
            }
            let data: Vec<f32> = payload[start as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor { shape: entry.shape, data });
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert("b.weight", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        c.insert("a.bias", vec![3], vec![-1.0, 0.5, 0.25]).unwrap();
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let again = TensorContainer::from_bytes(&bytes).unwrap().to_bytes();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_payload_reports_short_payload() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = TensorContainer::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload shorter than declared ranges"), "{err}");
    }

    #[test]
    fn overlapping_ranges_rejected() {
        // Hand-build a header with two tensors sharing bytes.
        let payload: Vec<u8> = [1.0f32, 2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let header = r#"{"x":{"dtype":"f32","shape":[1],"byte_range":[0,4]},"y":{"dtype":"f32","shape":[1],"byte_range":[2,6]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&payload);
        let err = TensorContainer::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn shape_element_count_must_match_range() {
        let payload: Vec<u8> = [1.0f32, 2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let header = r#"{"x":{"dtype":"f32","shape":[3],"byte_range":[0,8]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&payload);
        let err = TensorContainer::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("needs 12 bytes"), "{err}");
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let c = sample();
        assert!(c.require("nope", &[1]).is_err());
        assert!(c.require("a.bias", &[4]).is_err());
        assert!(c.require("a.bias", &[3]).is_ok());
    }

    proptest! {
        #[test]
        fn arbitrary_containers_round_trip(
            data in proptest::collection::vec(-1e6f32..1e6, 1..64),
        ) {
            let mut c = TensorContainer::new();
            let n = data.len();
            c.insert("t", vec![n], data).unwrap();
            let bytes = c.to_bytes();
            let back = TensorContainer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
