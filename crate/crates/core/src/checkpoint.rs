//! Binary checkpoint container for named tensors.
//!
//! Layout (all integers little-endian):
//! `"RCFK"` magic, u32 format version, u32 entry count, then per entry
//! `{u32 name length, UTF-8 name, u8 dtype tag (0=f32, 1=f64), u8 rank,
//! u64 dims..., raw little-endian row-major payload}`, and a trailing CRC32
//! of every preceding byte. Round trips are bit-exact on any host.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RCFK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Scalar>(ps: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
    for (_, e) in ps.iter() {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE.tag());
        let shape = e.tensor.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in e.tensor.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save<T: Scalar>(path: &Path, ps: &ParamSet<T>) -> Result<()> {
    fs::write(path, encode(ps))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < MAGIC.len() + 4 + 4 + 4 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Format(format!(
            "checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint entry name is not UTF-8".into()))?;
        let tag = r.u8()?;
        let dtype =
            Dtype::from_tag(tag).ok_or_else(|| Error::Format(format!("bad dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "entry '{name}' has dtype {dtype}, expected {}",
                T::DTYPE
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * T::DTYPE.byte_width())?;
        let data: Vec<T> = payload
            .chunks_exact(T::DTYPE.byte_width())
            .map(T::read_le)
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(entries)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode(&bytes)
}

/// Loads a checkpoint into an existing parameter set. The entry names and
/// shapes must match the set exactly; anything else is a shape conflict.
pub fn load_into<T: Scalar>(path: &Path, ps: &mut ParamSet<T>) -> Result<()> {
    let entries = load::<T>(path)?;
    if entries.len() != ps.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} entries, model expects {}",
            entries.len(),
            ps.len()
        )));
    }
    for (name, tensor) in entries {
        let id = ps
            .id_of(&name)
            .ok_or_else(|| Error::Format(format!("unexpected checkpoint entry '{name}'")))?;
        let target = ps.get_mut(id);
        if target.tensor.shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "shape conflict for '{name}': checkpoint {:?}, model {:?}",
                tensor.shape(),
                target.tensor.shape()
            )));
        }
        target.tensor.data_mut().copy_from_slice(tensor.data());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.register(
            "a.weight",
            Tensor::from_f64(&[2, 3], &[1.5, -2.25, 0.0, 3.75, 1e-7, -0.5]).unwrap(),
            true,
            true,
        )
        .unwrap();
        ps.register("a.bias", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap(), true, false)
            .unwrap();
        ps
    }

    #[test]
    fn roundtrip_bitwise() {
        let ps = fixture();
        let bytes = encode(&ps);
        let entries = decode::<f32>(&bytes).unwrap();
        assert_eq!(entries.len(), 2);
        let mut ps2 = fixture();
        // Smudge then reload to prove load_into restores exactly.
        let id = ps2.id_of("a.weight").unwrap();
        ps2.get_mut(id).tensor.data_mut()[0] = 99.0;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &ps).unwrap();
        load_into(&p, &mut ps2).unwrap();
        assert!(ps.state_eq(&ps2));
    }

    #[test]
    fn corrupted_byte_fails_crc() {
        let ps = fixture();
        let mut bytes = encode(&ps);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode::<f32>(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(m) if m.contains("CRC")));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let ps = fixture();
        let bytes = encode(&ps);
        let err = decode::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(m) if m.contains("dtype")));
    }

    #[test]
    fn shape_conflict_detected() {
        let ps = fixture();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &ps).unwrap();
        let mut other = ParamSet::<f32>::new();
        other
            .register("a.weight", Tensor::zeros(&[3, 2]), true, true)
            .unwrap();
        other
            .register("a.bias", Tensor::zeros(&[3]), true, false)
            .unwrap();
        let err = load_into(&p, &mut other).unwrap_err();
        assert!(matches!(err, Error::Format(m) if m.contains("shape conflict")));
    }
}
