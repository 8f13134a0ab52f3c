//! Binary checkpoint layout, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SCGANCKP"
//! version    u32      1
//! hash_len   u32      then hash_len bytes of UTF-8 config hash (may be empty)
//! iteration  u64
//! seed       u64
//! n_counters u32      then per counter: u32 name_len, name, u64 value
//! n_records  u32      then per record:  u32 name_len, name, u32 ndim,
//!                                       ndim x u32 dims, prod(dims) x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCGANCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: String,
    pub iteration: u64,
    pub seed: u64,
    pub counters: Vec<(String, u64)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash)?;
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_len(&mut out, self.counters.len())?;
        for (name, v) in &self.counters {
            put_str(&mut out, name)?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_len(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_str(&mut out, name)?;
            put_len(&mut out, t.rank())?;
            for &d in t.dims() {
                put_len(&mut out, d)?;
            }
            let data: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            out.reserve(data.len() * 4);
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash = r.string()?;
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let n_counters = r.u32()? as usize;
        let mut counters = Vec::with_capacity(n_counters.min(1024));
        for _ in 0..n_counters {
            let name = r.string()?;
            counters.push((name, r.u64()?));
        }
        let n_records = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_records.min(4096));
        for _ in 0..n_records {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("record {name} too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::from_vec(data, dims, device)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config_hash,
            iteration,
            seed,
            counters,
            tensors,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, device: &Device) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let dev = Device::Cpu;
        Checkpoint {
            config_hash: "abc123".into(),
            iteration: 42,
            seed: u64::MAX,
            counters: vec![("adam.g.t".into(), 7)],
            tensors: vec![
                ("g.head.weight".into(), Tensor::new(&[[1.5f32, -2.0], [0.0, 3.25]], &dev).unwrap()),
                ("scalar".into(), Tensor::new(&[f32::MIN_POSITIVE], &dev).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let d = Checkpoint::from_bytes(&bytes, &Device::Cpu).unwrap();
        assert_eq!(d.config_hash, "abc123");
        assert_eq!(d.iteration, 42);
        assert_eq!(d.seed, u64::MAX);
        assert_eq!(d.counter("adam.g.t"), Some(7));
        assert_eq!(d.tensor("g.head.weight").unwrap().dims(), &[2, 2]);
        assert_eq!(d.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &6u32.to_le_bytes());
        assert_eq!(&bytes[16..22], b"abc123");
        assert_eq!(&bytes[22..30], &42u64.to_le_bytes());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], &Device::Cpu).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, &Device::Cpu).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, &Device::Cpu).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        sample().write(&p).unwrap();
        let d = Checkpoint::read(&p, &Device::Cpu).unwrap();
        assert_eq!(d.iteration, 42);
    }

    proptest! {
        #[test]
        fn arbitrary_floats_survive(values in proptest::collection::vec(any::<f32>(), 1..64)) {
            let n = values.len();
            let c = Checkpoint {
                config_hash: String::new(),
                iteration: 0,
                seed: 0,
                counters: vec![],
                tensors: vec![("t".into(), Tensor::from_vec(values.clone(), n, &Device::Cpu).unwrap())],
            };
            let d = Checkpoint::from_bytes(&c.to_bytes().unwrap(), &Device::Cpu).unwrap();
            let back: Vec<f32> = d.tensors[0].1.to_vec1().unwrap();
            let a: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
