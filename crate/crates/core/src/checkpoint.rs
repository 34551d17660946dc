//! Versioned binary checkpoint container: magic, format version, config
//! header (JSON), then named parameter tensors as little-endian f64 bits.
//! Write/read round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::model::{MemberConfig, MemberModel};
use crate::numerics::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SEMB";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, model: &mut MemberModel) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let cfg_json = serde_json::to_vec(&model.cfg)?;
    buf.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg_json);

    let params = model.param_values();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in &params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<MemberModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    if cur.take(4)? != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg: MemberConfig = serde_json::from_slice(cur.take(cfg_len)?)?;

    let mut model = MemberModel::seeded(cfg)?;
    let n_params = cur.u32()? as usize;
    let mut loaded: Vec<(String, Tensor)> = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Data(format!("{}: bad parameter name", path.display())))?
            .to_string();
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(cur.f64()?);
        }
        loaded.push((name, Tensor::from_vec(rows, cols, data)?));
    }

    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    model.visit_params(&mut |name, p| {
        if mismatch.is_some() {
            return;
        }
        match loaded.get(idx) {
            Some((n, t)) if n == name && t.shape() == p.value().shape() => {
                *p.value_mut() = t.clone();
            }
            Some((n, _)) => mismatch = Some(format!("expected parameter {name}, found {n}")),
            None => mismatch = Some(format!("missing parameter {name}")),
        }
        idx += 1;
    });
    if let Some(m) = mismatch {
        return Err(Error::Data(format!("{}: {m}", path.display())));
    }
    if idx != loaded.len() {
        return Err(Error::Data(format!(
            "{}: checkpoint has {} parameters, model expects {}",
            path.display(),
            loaded.len(),
            idx
        )));
    }
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!("{}: truncated checkpoint", self.path.display())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
