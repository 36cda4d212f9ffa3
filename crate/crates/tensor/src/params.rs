//! Named parameter storage and the flat binary checkpoint format.
//!
//! Layout (little-endian): magic `TPK1`, `u32` count, then per parameter a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32` dims and the
//! `f32` data. Parameters appear in registration order.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TPK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Register a parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(TensorError::Checkpoint(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on `g` as a leaf; index the result by `ParamId.0`.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Gradients of bound parameters after a backward pass (zeros if unreached).
    pub fn collect_grads(&self, g: &Graph<T>, vars: &[Var]) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .zip(vars)
            .map(|(t, &v)| match g.grad(v) {
                Some(d) => d.to_vec(),
                None => vec![T::zero(); t.numel()],
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrite values from decoded checkpoint entries; names, order and
    /// shapes must match exactly.
    pub fn load_entries(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                entries.len(),
                self.len()
            )));
        }
        for ((name, t), (own_name, own)) in entries.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != own_name || t.shape() != own.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter {name}{:?} does not match {own_name}{:?}",
                    t.shape(),
                    own.shape()
                )));
            }
        }
        for (own, (_, t)) in self.tensors.iter_mut().zip(entries) {
            *own = t.cast();
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let entries: Vec<(String, Tensor<f32>)> = self
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast()))
            .collect();
        encode_checkpoint(&entries)
    }
}

pub fn encode_checkpoint(entries: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(too_large)?.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(too_large)?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(too_large)?);
        for &d in t.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(too_large)?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_large<E>(_: E) -> TensorError {
    TensorError::Checkpoint("value too large for checkpoint field".into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(TensorError::Checkpoint("truncated checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint. Never allocates more than the input can back.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| TensorError::Checkpoint("dims overflow".into()))?;
            dims.push(d);
        }
        let bytes_needed = numel
            .checked_mul(4)
            .ok_or_else(|| TensorError::Checkpoint("dims overflow".into()))?;
        let raw = r.take(bytes_needed)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data)
            .map_err(|e| TensorError::Checkpoint(format!("parameter {name}: {e}")))?;
        entries.push((name, t));
    }
    if !r.buf.is_empty() {
        return Err(TensorError::Checkpoint(format!(
            "{} trailing bytes",
            r.buf.len()
        )));
    }
    Ok(entries)
}
