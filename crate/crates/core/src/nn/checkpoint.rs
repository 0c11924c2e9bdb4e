//! Binary checkpoint container.
//!
//! Layout: `b"RBCK"`, format version (`u32` LE), then a sequence of named
//! tensors until end of file. Each tensor is a `u16` name length, the UTF-8
//! name, a `u8` rank, `u32` dimensions and little-endian `f32` values.
//! Model metadata (merge mode, trainable flags) and free text are stored as
//! `meta.*` tensors.

use std::io;
use std::path::Path;

use thiserror::Error;

use super::{Extractor, Linear, Merge, Model, Tensor, Trainable};

pub const MAGIC: &[u8; 4] = b"RBCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing tensor '{0}'")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Ordered list of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    /// Inserts or replaces `name`.
    pub fn put(&mut self, name: &str, tensor: Tensor<f32>) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name.to_string(), tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    /// Stores text as a rank-1 tensor of byte values.
    pub fn put_text(&mut self, name: &str, text: &str) {
        let data: Vec<f32> = if text.is_empty() { vec![-1.0] } else { text.bytes().map(f32::from).collect() };
        self.put(name, Tensor::new(vec![data.len()], data).expect("non-empty"));
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let t = self.require(name)?;
        if t.data() == [-1.0] {
            return Ok(String::new());
        }
        let bytes = t
            .data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(CheckpointError::Malformed(format!("'{name}' is not a text tensor")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| CheckpointError::Malformed(format!("'{name}' is not UTF-8")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).expect("tensor name fits in u16");
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.shape().len()).expect("rank fits in u8"));
            for &d in t.shape() {
                out.extend_from_slice(&u32::try_from(d).expect("dim fits in u32").to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut ck = Checkpoint::new();
        while r.pos < bytes.len() {
            let len = usize::from(u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")));
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = usize::from(r.take(1)?[0]);
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()));
            let n = n.ok_or(CheckpointError::Truncated)?;
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            if ck.get(&name).is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate tensor '{name}'")));
            }
            ck.entries.push((name, tensor));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Serializes a model's parameters plus `meta.merge`, `meta.dual` and
    /// `meta.trainable` (original, augmented, head as 0/1).
    pub fn from_model(model: &Model<f32>) -> Self {
        let mut ck = Checkpoint::new();
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let merge = match model.merge {
            Merge::Concat => 0.0,
            Merge::Sum => 1.0,
        };
        ck.put("meta.dual", Tensor::new(vec![1], vec![flag(model.is_dual())]).expect("shape"));
        ck.put("meta.merge", Tensor::new(vec![1], vec![merge]).expect("shape"));
        let t = model.trainable;
        ck.put(
            "meta.trainable",
            Tensor::new(vec![3], vec![flag(t.original), flag(t.augmented), flag(t.head)]).expect("shape"),
        );
        for (name, tensor) in model.tensors() {
            ck.put(&name, tensor.clone());
        }
        ck
    }

    pub fn to_model(&self) -> Result<Model<f32>> {
        let scalar = |name: &str| -> Result<f32> {
            let t = self.require(name)?;
            match t.data() {
                [v] => Ok(*v),
                _ => Err(CheckpointError::Malformed(format!("'{name}' must hold one value"))),
            }
        };
        let flag = |v: f32, name: &str| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(CheckpointError::Malformed(format!("'{name}' must be 0 or 1"))),
        };
        let dual = flag(scalar("meta.dual")?, "meta.dual")?;
        let merge = match scalar("meta.merge")? {
            0.0 => Merge::Concat,
            1.0 => Merge::Sum,
            v => return Err(CheckpointError::Malformed(format!("unknown merge code {v}"))),
        };
        let tr = self.require("meta.trainable")?.data();
        if tr.len() != 3 {
            return Err(CheckpointError::Malformed("'meta.trainable' must hold three flags".into()));
        }
        let trainable = Trainable {
            original: flag(tr[0], "meta.trainable")?,
            augmented: flag(tr[1], "meta.trainable")?,
            head: flag(tr[2], "meta.trainable")?,
        };
        let head_w = self.require("head.weight")?;
        if head_w.shape().len() != 2 {
            return Err(CheckpointError::Malformed("head.weight must be rank 2".into()));
        }
        let mut model = Model {
            original: Extractor::zeros(),
            augmented: dual.then(Extractor::zeros),
            merge,
            head: Linear::zeros(head_w.shape()[1], head_w.shape()[0]),
            trainable,
        };
        for (name, slot) in model.tensors_mut() {
            let t = self.require(&name)?;
            if t.shape() != slot.shape() {
                return Err(CheckpointError::Malformed(format!(
                    "'{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        model.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.put("ab", Tensor::new(vec![2], vec![1.0, -2.5]).unwrap());
        let bytes = ck.to_bytes();
        let mut expected = b"RBCK".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn model_roundtrip_is_exact() {
        let mut rng = rng_from_seed(9);
        for merge in [Merge::Concat, Merge::Sum] {
            let mut m = Model::<f32>::dual(5, merge, &mut rng).unwrap();
            m.trainable = Trainable { original: false, augmented: true, head: false };
            let bytes = Checkpoint::from_model(&m).to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap().to_model().unwrap();
            assert_eq!(back, m);
            assert_eq!(Checkpoint::from_model(&back).to_bytes(), bytes);
        }
        let single = Model::<f32>::single(3, &mut rng).unwrap();
        let back = Checkpoint::from_model(&single).to_model().unwrap();
        assert_eq!(back, single);
    }

    #[test]
    fn text_roundtrip() {
        let mut ck = Checkpoint::new();
        ck.put_text("meta.note", "method=bilateral sigma_s=3");
        ck.put_text("meta.empty", "");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.text("meta.note").unwrap(), "method=bilateral sigma_s=3");
        assert_eq!(back.text("meta.empty").unwrap(), "");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::<f32>::single(2, &mut rng_from_seed(1)).unwrap();
        let bytes = Checkpoint::from_model(&m).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"RBCX\x01\0\0\0"), Err(CheckpointError::Magic)));
        assert!(matches!(Checkpoint::from_bytes(b"RB"), Err(CheckpointError::Magic)));
        assert!(matches!(Checkpoint::from_bytes(b"RBCK\x02\0\0\0"), Err(CheckpointError::Version(2))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.put("head.bias", Tensor::zeros(&[7]));
        assert!(ck.to_model().is_err());
        let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.put("meta.merge", Tensor::new(vec![1], vec![3.0]).unwrap());
        assert!(ck.to_model().is_err());
    }
}
