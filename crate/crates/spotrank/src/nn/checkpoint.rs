//! Versioned binary checkpoint container.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  b"SPOTCKPT"
//! version          u32      currently 1
//! rng_seed         u64
//! config_hash      u32 length + UTF-8 bytes
//! meta_count       u32
//!   per entry:     u32 key length + bytes, u32 value length + bytes
//! step             u64      optimizer step count
//! tensor_count     u32
//!   per tensor:    u32 name length + bytes,
//!                  u32 rows, u32 cols,
//!                  rows*cols f64 parameter values,
//!                  rows*cols f64 Adam first moment,
//!                  rows*cols f64 Adam second moment
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPOTCKPT";
const VERSION: u32 = 1;

/// A complete training snapshot: parameters with optimizer state, the run
/// seed, a hash of the config that produced it, and free-form metadata
/// (alphabet, loss mode, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub rng_seed: u64,
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        write_string(&mut w, &self.config_hash)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_string(&mut w, k)?;
            write_string(&mut w, v)?;
        }
        w.write_all(&self.params.step().to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        let (first, second) = self.params.optimizer_state();
        for (idx, id) in self.params.ids().enumerate() {
            let value = self.params.get(id);
            write_string(&mut w, self.params.name(id))?;
            w.write_all(&(value.rows() as u32).to_le_bytes())?;
            w.write_all(&(value.cols() as u32).to_le_bytes())?;
            write_f64s(&mut w, value.data())?;
            write_f64s(&mut w, first[idx].data())?;
            write_f64s(&mut w, second[idx].data())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let malformed = |reason: &str| Error::MalformedFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(malformed("bad magic"));
        }
        if read_u32(&mut r)? != VERSION {
            return Err(malformed("unsupported version"));
        }
        let rng_seed = read_u64(&mut r)?;
        let config_hash = read_string(&mut r)?;
        let meta_count = read_u32(&mut r)? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..meta_count {
            let k = read_string(&mut r)?;
            let v = read_string(&mut r)?;
            meta.insert(k, v);
        }
        let step = read_u64(&mut r)?;
        let tensor_count = read_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(tensor_count);
        let mut values = Vec::with_capacity(tensor_count);
        let mut first = Vec::with_capacity(tensor_count);
        let mut second = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name = read_string(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| malformed("tensor too large"))?;
            values.push(Tensor::from_vec(rows, cols, read_f64s(&mut r, n)?));
            first.push(Tensor::from_vec(rows, cols, read_f64s(&mut r, n)?));
            second.push(Tensor::from_vec(rows, cols, read_f64s(&mut r, n)?));
            names.push(name);
        }
        // A trailing byte means the writer and reader disagree on layout.
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(malformed("trailing bytes"));
        }
        Ok(Checkpoint {
            rng_seed,
            config_hash,
            meta,
            params: ModelParams::restore_state(names, values, first, second, step),
        })
    }
}

/// FNV-1a 64-bit hash; used for config and dataset fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::MalformedFile {
        path: "<checkpoint>".into(),
        reason: "invalid UTF-8 string".into(),
    })
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ModelParams::new();
        params.register("enc.w", 3, 4, 4, &mut rng);
        params.register("enc.b", 1, 3, 4, &mut rng);

        let mut meta = BTreeMap::new();
        meta.insert("alphabet".to_string(), "abc".to_string());
        meta.insert("mode".to_string(), "join".to_string());
        let ckpt = Checkpoint {
            rng_seed: 42,
            config_hash: "deadbeef".into(),
            meta,
            params,
        };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(loaded.rng_seed, 42);
        assert_eq!(loaded.config_hash, "deadbeef");
        assert_eq!(loaded.meta["alphabet"], "abc");
        assert_eq!(loaded.params.len(), 2);
        let id = loaded.params.id("enc.w").unwrap();
        let orig = ckpt.params.id("enc.w").unwrap();
        assert_eq!(loaded.params.get(id), ckpt.params.get(orig));
        assert_eq!(loaded.params.step(), 0);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_ne!(fnv1a64(b"ab"), fnv1a64(b"ba"));
    }
}
