//! Versioned weight container: magic "MATADV-W1", then per-parameter records
//! of (name, shape, little-endian f32 values). Loading matches records to a
//! model's parameter list by name and validates shapes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 9] = b"MATADV-W1";

/// Anything whose parameters can be enumerated by stable names.
pub trait ParamSet {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

pub fn save_weights(path: &Path, model: &impl ParamSet) -> Result<()> {
    let params = model.named_params();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&mut w, MAGIC)?;
    put(&mut w, &(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in &params {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::WeightFormat {
                path: path.to_path_buf(),
                msg: format!("parameter name too long: {name}"),
            });
        }
        put(&mut w, &(name_bytes.len() as u16).to_le_bytes())?;
        put(&mut w, name_bytes)?;
        put(&mut w, &(tensor.rows() as u32).to_le_bytes())?;
        put(&mut w, &(tensor.cols() as u32).to_le_bytes())?;
        for &v in tensor.data() {
            put(&mut w, &(v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a weight file into `model`. Every model parameter must appear in
/// the file with a matching shape, and the file may not carry extras.
pub fn load_weights(path: &Path, model: &mut impl ParamSet) -> Result<()> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let bad = |msg: String| Error::WeightFormat {
        path: path.to_path_buf(),
        msg,
    };
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad("bad magic; not a MATADV-W1 file".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut records: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|e| Error::io(path, e))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad("parameter name is not utf-8".into()))?;
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(bad(format!("implausible shape {rows}x{cols} for {name}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut f32buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut f32buf).map_err(|e| Error::io(path, e))?;
            data.push(f32::from_le_bytes(f32buf) as f64);
        }
        if records
            .insert(name.clone(), Tensor::new(rows, cols, data)?)
            .is_some()
        {
            return Err(bad(format!("duplicate parameter {name}")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last record".into()));
    }
    let mut params = model.named_params_mut();
    for (name, tensor) in &mut params {
        let rec = records.remove(name).ok_or_else(|| {
            Error::WeightFormat {
                path: path.to_path_buf(),
                msg: format!("missing parameter {name}"),
            }
        })?;
        if rec.shape() != tensor.shape() {
            return Err(bad(format!(
                "shape mismatch for {name}: file {:?}, model {:?}",
                rec.shape(),
                tensor.shape()
            )));
        }
        let keep_grad = tensor.requires_grad;
        **tensor = if keep_grad { rec.with_grad() } else { rec };
    }
    if let Some(extra) = records.keys().next() {
        return Err(bad(format!("unknown parameter {extra}")));
    }
    Ok(())
}
