//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `TTAGCKPT`, format version, dims (embed, hidden, tags), the init
//! seed, the tag inventory strings, then a name -> tensor map with explicit
//! shapes and raw f64 payloads. Save/load round-trips are bit-exact and the
//! byte stream is a deterministic function of the model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelDims, ModelParams, TensorView, TensorViewMut};

const MAGIC: &[u8; 8] = b"TTAGCKPT";
const VERSION: u32 = 1;

/// A loaded checkpoint: parameters plus the metadata needed to use them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub tags: Vec<String>,
}

pub fn save(path: &Path, params: &ModelParams, seed: u64, tags: &[String]) -> Result<()> {
    if tags.len() != params.dims.tags {
        return Err(Error::Config(format!(
            "checkpoint: {} tag strings for a {}-tag model",
            tags.len(),
            params.dims.tags
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for dim in [params.dims.embed, params.dims.hidden, params.dims.tags] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    w.write_all(&seed.to_le_bytes())?;
    for tag in tags {
        write_str(&mut w, tag)?;
    }
    let entries = params.tensor_entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, view) in entries {
        write_str(&mut w, &name)?;
        match view {
            TensorView::Mat(m) => {
                write_shape(&mut w, &[m.nrows(), m.ncols()])?;
                for &v in m.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorView::Vec(v) => {
                write_shape(&mut w, &[v.len()])?;
                for &x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorView::Scalar(s) => {
                write_shape(&mut w, &[])?;
                w.write_all(&s.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Config("checkpoint: file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Config("checkpoint: bad magic, not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Config(format!(
            "checkpoint: unsupported format version {version} (expected {VERSION})"
        )));
    }
    let embed = read_u64(&mut r)? as usize;
    let hidden = read_u64(&mut r)? as usize;
    let tags_len = read_u64(&mut r)? as usize;
    let dims = ModelDims { embed, hidden, tags: tags_len };
    dims.validate()?;
    let seed = read_u64(&mut r)?;
    let tags: Vec<String> = (0..tags_len).map(|_| read_str(&mut r)).collect::<Result<_>>()?;

    let mut params = ModelParams::zeros(dims);
    let count = read_u32(&mut r)? as usize;
    let mut stored: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
        std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(read_f64(&mut r)?);
        }
        stored.insert(name, (shape, data));
    }

    for (name, view) in params.tensor_entries_mut() {
        let (shape, data) = stored
            .remove(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint: missing tensor `{name}`")))?;
        let expect: Vec<usize> = match &view {
            TensorViewMut::Mat(m) => vec![m.nrows(), m.ncols()],
            TensorViewMut::Vec(v) => vec![v.len()],
            TensorViewMut::Scalar(_) => vec![],
        };
        if shape != expect {
            return Err(Error::Config(format!(
                "checkpoint: tensor `{name}` has shape {shape:?}, expected {expect:?}"
            )));
        }
        match view {
            TensorViewMut::Mat(m) => {
                for (slot, v) in m.iter_mut().zip(data) {
                    *slot = v;
                }
            }
            TensorViewMut::Vec(vec) => {
                for (slot, v) in vec.iter_mut().zip(data) {
                    *slot = v;
                }
            }
            TensorViewMut::Scalar(s) => *s = data[0],
        }
    }
    if !stored.is_empty() {
        let extra: Vec<_> = stored.keys().cloned().collect();
        return Err(Error::Config(format!("checkpoint: unknown tensors {extra:?}")));
    }
    Ok(Checkpoint { params, seed, tags })
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Config("checkpoint: unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Config("checkpoint: invalid utf-8".into()))
}

fn truncated(_: std::io::Error) -> Error {
    Error::Config("checkpoint: truncated file".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tests::{dims, random_params};

    #[test]
    fn roundtrip_is_bit_exact_and_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let d = dims(5, 3, 4);
        let params = random_params(71, d);
        let tags: Vec<String> = ["B-NP", "I-NP", "B-VP", "O"].map(String::from).to_vec();

        let p1 = tmp.path().join("a.ckpt");
        let p2 = tmp.path().join("b.ckpt");
        save(&p1, &params, 99, &tags).unwrap();
        save(&p2, &params, 99, &tags).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.tags, tags);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let tmp = tempfile::tempdir().unwrap();
        let bad = tmp.path().join("bad.ckpt");
        std::fs::write(&bad, b"not a checkpoint at all").unwrap();
        assert!(matches!(load(&bad), Err(Error::Config(_))));

        let d = dims(3, 2, 2);
        let params = random_params(72, d);
        let good = tmp.path().join("good.ckpt");
        save(&good, &params, 1, &["A".into(), "B".into()]).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = tmp.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&cut), Err(Error::Config(_))));
    }

    #[test]
    fn tag_count_must_match_dims() {
        let tmp = tempfile::tempdir().unwrap();
        let d = dims(3, 2, 2);
        let params = random_params(73, d);
        let path = tmp.path().join("x.ckpt");
        assert!(save(&path, &params, 1, &["A".into()]).is_err());
    }
}
