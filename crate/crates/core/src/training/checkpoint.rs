//! `AUXCNN01` checkpoint files: magic, a `name f32 d0xd1..` manifest closed by
//! a blank line, then little-endian `f32` data in manifest order.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"AUXCNN01";

/// One stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Writes every tensor of `store`, buffers included.
pub fn save_checkpoint<T: Scalar>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    let mut manifest = String::new();
    for id in store.ids() {
        let shape: Vec<String> = store.value(id).shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "{} f32 {}", store.info(id).name, shape.join("x"));
    }
    manifest.push('\n');
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(manifest.as_bytes())?;
    for id in store.ids() {
        for &v in store.value(id).data() {
            write(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<StoredTensor>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, not an AUXCNN01 checkpoint"));
    }
    let mut entries = Vec::new();
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "manifest is not terminated by a blank line"));
        }
        let line = line.trim_end_matches('\n');
        if line.is_empty() {
            break;
        }
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 3 || parts[1] != "f32" {
            return Err(Error::format(path, format!("bad manifest line {line:?}")));
        }
        let shape = parts[2]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, format!("bad shape in {line:?}")))?;
        entries.push((parts[0].to_string(), shape));
    }
    let mut out = Vec::with_capacity(entries.len());
    for (name, shape) in entries {
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format(path, format!("data for {name} is truncated")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(StoredTensor { name, shape, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}

fn to_tensor<T: Scalar>(t: &StoredTensor) -> Result<Tensor<T>> {
    Tensor::new(t.shape.clone(), t.data.iter().map(|&v| T::lit(f64::from(v))).collect())
}

/// Loads a checkpoint into `store`, which must hold exactly the same names and shapes.
pub fn load_checkpoint<T: Scalar>(store: &mut ParameterStore<T>, path: &Path) -> Result<()> {
    let stored = read_checkpoint(path)?;
    if stored.len() != store.len() {
        return Err(Error::shape(
            "load_checkpoint",
            format!("checkpoint has {} tensors, model has {}", stored.len(), store.len()),
        ));
    }
    let mut values = Vec::with_capacity(stored.len());
    for t in &stored {
        let id = store
            .lookup(&t.name)
            .ok_or_else(|| Error::shape("load_checkpoint", format!("model has no tensor {}", t.name)))?;
        if store.value(id).shape() != t.shape.as_slice() {
            return Err(Error::shape(
                "load_checkpoint",
                format!("{}: checkpoint {:?} vs model {:?}", t.name, t.shape, store.value(id).shape()),
            ));
        }
        values.push((id, to_tensor(t)?));
    }
    for (id, v) in values {
        store.set_value(id, v)?;
    }
    Ok(())
}

/// Overwrites the tensors of `store` that have a same-named, same-shaped
/// counterpart in the checkpoint; returns how many were copied.
pub fn load_matching<T: Scalar>(store: &mut ParameterStore<T>, path: &Path) -> Result<usize> {
    let mut copied = 0;
    for t in read_checkpoint(path)? {
        if let Some(id) = store.lookup(&t.name) {
            if store.value(id).shape() == t.shape.as_slice() {
                store.set_value(id, to_tensor(&t)?)?;
                copied += 1;
            }
        }
    }
    Ok(copied)
}
