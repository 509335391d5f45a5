//! Named parameter collections and their binary persistence.
//!
//! File layout (all integers unsigned 32-bit little-endian):
//!
//! ```text
//! magic (4 bytes) | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | values (f32 LE)
//! ```
//!
//! Weights use the magic `BPW1`, optimizer state `BPO1`.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BPW1";
pub const OPTIM_MAGIC: &[u8; 4] = b"BPO1";

/// Ordered set of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<f32>>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> usize {
        self.names.push(name.into());
        self.tensors.push(Arc::new(tensor));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<f32> {
        &self.tensors[i]
    }

    /// Mutable access; clones the tensor first if a graph still shares it.
    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<f32> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a differentiable leaf on `graph`.
    pub fn register(&self, graph: &mut Graph<f32>) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.leaf(Arc::clone(t))).collect()
    }

    /// Registers every tensor as a constant on `graph`.
    pub fn register_constant(&self, graph: &mut Graph<f32>) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.constant(Arc::clone(t))).collect()
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        self.check_layout(other)?;
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    /// Fails unless `other` has the same names and shapes in the same order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(TensorError::Format(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.len() {
            if self.names[i] != other.names[i] || self.get(i).shape() != other.get(i).shape() {
                return Err(TensorError::Format(format!(
                    "tensor {i}: expected {} {:?}, found {} {:?}",
                    self.names[i],
                    self.get(i).shape(),
                    other.names[i],
                    other.get(i).shape()
                )));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
        w.write_all(magic)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, magic: &[u8; 4]) -> Result<ParamSet> {
        let mut m = [0u8; 4];
        r.read_exact(&mut m)?;
        if &m != magic {
            return Err(TensorError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let count = read_u32(r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| TensorError::Format(format!("tensor name is not UTF-8: {e}")))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            set.push(name, Tensor::new(&shape, data)?);
        }
        Ok(set)
    }

    pub fn save(&self, path: &std::path::Path, magic: &[u8; 4]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w, magic)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, magic: &[u8; 4]) -> Result<ParamSet> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r, magic)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
