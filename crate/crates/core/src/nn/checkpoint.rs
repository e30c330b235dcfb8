//! Checkpoint container.
//!
//! ```text
//! magic "LCCK", format_version u32
//! config_hash [u8; 32], meta str (JSON), step u64, tensor count u32
//! per tensor: name str, rows u32, cols u32, values, first moments, second moments
//! checksum [u8; 32]
//! ```

use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use super::NnError;
use crate::binio::{read_file, write_file, BinReader, BinWriter};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"LCCK";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// Free-form JSON describing the producer (stage, lineage hashes).
    pub meta: String,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.store;
        let mut w = BinWriter::new(MAGIC, CHECKPOINT_FORMAT_VERSION);
        w.put_bytes(&self.config_hash);
        w.put_str(&self.meta);
        w.put_u64(s.step);
        w.put_u32(s.len() as u32);
        for id in s.ids() {
            let t = s.get(id);
            w.put_str(s.name(id));
            w.put_u32(t.rows as u32);
            w.put_u32(t.cols as u32);
            w.put_f64s(&t.data);
            w.put_f64s(&s.m[id.0].data);
            w.put_f64s(&s.v[id.0].data);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, NnError> {
        let mut r = BinReader::open(data, MAGIC, CHECKPOINT_FORMAT_VERSION)?;
        let config_hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
        let meta = r.str()?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows * cols;
            let id = store.add(&name, Tensor::new(rows, cols, r.f64s(len)?)?)?;
            store.m[id.0] = Tensor::new(rows, cols, r.f64s(len)?)?;
            store.v[id.0] = Tensor::new(rows, cols, r.f64s(len)?)?;
        }
        r.expect_end()?;
        store.step = step;
        store.version = 0;
        Ok(Self { config_hash, meta, store })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        Ok(write_file(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl ParamStore {
    /// Replaces values and optimizer state with those of `other`, which must hold the same
    /// parameter names and shapes in the same order.
    pub fn load_state(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if self.names() != other.names() {
            return Err(NnError::Shape("checkpoint parameter names do not match the model".into()));
        }
        for id in self.ids() {
            if self.get(id).shape() != other.get(id).shape() {
                return Err(NnError::Shape(format!("checkpoint shape mismatch for {}", self.name(id))));
            }
        }
        self.values = other.values.clone();
        self.m = other.m.clone();
        self.v = other.v.clone();
        self.step = other.step;
        self.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binio::FormatError;

    #[test]
    fn round_trip_and_corruption() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(2, 2, vec![1.0, -2.0, 3.5, 1e-300]).unwrap()).unwrap();
        s.add("b", Tensor::row(vec![0.25])).unwrap();
        s.step = 7;
        let ck = Checkpoint { config_hash: [3; 32], meta: "{}".into(), store: s };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(back.store.values_equal(&ck.store));
        assert_eq!(back.store.step(), 7);
        assert_eq!(back.config_hash, [3; 32]);
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(NnError::Format(FormatError::Checksum))));
    }
}
