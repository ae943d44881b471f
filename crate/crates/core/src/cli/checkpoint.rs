//! Named-tensor checkpoint files.
//!
//! Layout, little-endian: `b"TKC1"`, `u32` version, `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u8` dtype (0 = f64), `u32` rank,
//! `u64` dims, row-major payload. A trailing `u32` CRC-32 covers every byte
//! after the version field.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{bail, Result};
use crate::grvq::Codebooks;
use crate::interpreting::{InterpreterConfig, TransducerModel};
use crate::numerics::{ParamStore, Tensor};
use crate::speaking::{SpeakingConfig, SpeakingModel};

pub const MAGIC: &[u8; 4] = b"TKC1";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;
const MAX_RANK: u32 = 8;

pub fn encode_tensors(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut names = BTreeSet::new();
    let mut body = Vec::new();
    body.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        if !names.insert(name.as_str()) {
            bail!(Contract, "duplicate tensor name {name}");
        }
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(DTYPE_F64);
        body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let crc = crc32fast::hash(&body);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            bail!(Format, "checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        bail!(Format, "not a checkpoint file (bad magic)");
    }
    if bytes.len() < 8 {
        bail!(Format, "checkpoint truncated");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(crate::Error::Version(version));
    }
    // walk the structure first so truncation reads as a format error, not a CRC mismatch
    let rest = &bytes[8..];
    let mut r = Reader { bytes: rest, pos: 0 };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut names = BTreeSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| crate::Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        if !names.insert(name.clone()) {
            bail!(Format, "duplicate tensor name {name}");
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            bail!(Format, "unsupported dtype code {dtype}");
        }
        let rank = r.u32()?;
        if rank > MAX_RANK {
            bail!(Format, "tensor rank {rank} too large");
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u64()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| crate::Error::Format("tensor size overflows".into()))?;
            shape.push(d);
        }
        let bytes = numel
            .checked_mul(8)
            .ok_or_else(|| crate::Error::Format("tensor size overflows".into()))?;
        let data = r
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    let body = &rest[..r.pos];
    let stored = r.u32()?;
    if r.pos != rest.len() {
        bail!(Format, "{} trailing bytes after the checksum", rest.len() - r.pos);
    }
    if crc32fast::hash(body) != stored {
        bail!(Corruption, "checkpoint CRC mismatch");
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_tensors(entries)?)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&fs::read(path)?)
}

/// Models and codebooks stored together in one file.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub interpreter: Option<TransducerModel>,
    pub speaker: Option<SpeakingModel>,
    pub codebooks: Option<Codebooks>,
}

fn push_store(out: &mut Vec<(String, Tensor)>, prefix: &str, config: Vec<f64>, store: &ParamStore) {
    out.push((format!("{prefix}/config"), Tensor::vector(config)));
    for (name, t) in store.iter() {
        out.push((format!("{prefix}/{name}"), t.clone()));
    }
}

fn load_store(entries: &[(String, Tensor)], prefix: &str, store: &mut ParamStore) -> Result<()> {
    let p = format!("{prefix}/");
    let config = format!("{prefix}/config");
    let own: Vec<(&str, &Tensor)> = entries
        .iter()
        .filter(|(n, _)| n.starts_with(&p) && *n != config)
        .map(|(n, t)| (&n[p.len()..], t))
        .collect();
    store.load_from(own)
}

fn find<'a>(entries: &'a [(String, Tensor)], name: &str) -> Option<&'a Tensor> {
    entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(m) = &self.interpreter {
            push_store(&mut out, "interpreter", m.config().to_values(), m.store());
        }
        if let Some(m) = &self.speaker {
            push_store(&mut out, "speaker", m.config().to_values(), m.store());
        }
        if let Some(c) = &self.codebooks {
            let meta = [c.groups, c.depths, c.codebook_size, c.feat_dim]
                .iter()
                .map(|&v| v as f64)
                .chain([(c.seed & 0xffff_ffff) as f64, (c.seed >> 32) as f64])
                .collect();
            out.push(("codebooks/meta".into(), Tensor::vector(meta)));
            for (i, table) in c.tables.iter().enumerate() {
                out.push((format!("codebooks/{i}"), Tensor::vector(table.clone())));
            }
        }
        out
    }

    pub fn from_tensors(entries: &[(String, Tensor)]) -> Result<Self> {
        let mut ck = Checkpoint::default();
        if let Some(cfg) = find(entries, "interpreter/config") {
            let mut m = TransducerModel::new(InterpreterConfig::from_values(cfg.data())?, 0)?;
            load_store(entries, "interpreter", m.store_mut())?;
            ck.interpreter = Some(m);
        }
        if let Some(cfg) = find(entries, "speaker/config") {
            let mut m = SpeakingModel::new(SpeakingConfig::from_values(cfg.data())?, 0)?;
            load_store(entries, "speaker", m.store_mut())?;
            ck.speaker = Some(m);
        }
        if let Some(meta) = find(entries, "codebooks/meta") {
            let v = meta.data();
            if v.len() != 6 {
                bail!(Format, "codebook metadata has {} fields", v.len());
            }
            let (groups, depths) = (v[0] as usize, v[1] as usize);
            let mut tables = Vec::with_capacity(groups * depths);
            for i in 0..groups * depths {
                let t = find(entries, &format!("codebooks/{i}"))
                    .ok_or_else(|| crate::Error::Format(format!("missing codebook table {i}")))?;
                tables.push(t.data().to_vec());
            }
            ck.codebooks = Some(Codebooks {
                groups,
                depths,
                codebook_size: v[2] as usize,
                feat_dim: v[3] as usize,
                seed: v[4] as u64 | (v[5] as u64) << 32,
                tables,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_tensors(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&read_tensors(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            (
                "a".into(),
                Tensor::new(vec![2, 3], vec![1.0, -2.5, f64::MIN_POSITIVE, 0.1, 1e300, -0.0]).unwrap(),
            ),
            ("b/c".into(), Tensor::vector(vec![std::f64::consts::PI])),
        ]
    }

    #[test]
    fn round_trip_bits() {
        let bytes = encode_tensors(&sample()).unwrap();
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in sample().iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let a: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn damage_is_detected() {
        let bytes = encode_tensors(&sample()).unwrap();
        let mut flipped = bytes.clone();
        // inside the payload of the first tensor
        flipped[8 + 4 + 4 + 1 + 1 + 4 + 16 + 3] ^= 0x40;
        assert!(matches!(decode_tensors(&flipped), Err(crate::Error::Corruption(_))));
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(decode_tensors(&bytes[..cut]), Err(crate::Error::Format(_))));
        }
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_tensors(&magic), Err(crate::Error::Format(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_tensors(&version), Err(crate::Error::Version(9))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::vector(vec![1.0]);
        assert!(encode_tensors(&[("x".into(), t.clone()), ("x".into(), t)]).is_err());
    }
}
