//! Binary checkpoint format: little-endian, magic `PDCK`, a version word,
//! the model configuration, then named parameter records (name length,
//! name bytes, rows, cols, raw f64 data).

use std::io::{Read, Write};
use std::path::Path;

use crate::denoiser::{DenoiserConfig, PoseModel};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::params::ParamStore;
use crate::skeleton::KinematicTree;

pub const MAGIC: &[u8; 4] = b"PDCK";
pub const VERSION: u32 = 1;
const CONFIG_FIELDS: u32 = 6;
const MAX_NAME_LEN: usize = 1 << 12;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a model to bytes.
pub fn encode(model: &PoseModel) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut out = Vec::with_capacity(16 + model.params.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&CONFIG_FIELDS.to_le_bytes());
    for v in [c.latent_dim, c.blocks, c.heads, c.mlp_hidden, c.group_count, c.joint_tokens] {
        put_u32(&mut out, v)?;
    }
    put_u32(&mut out, model.params.len())?;
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rows())?;
        put_u32(&mut out, t.cols())?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), msg: format!("{} (at byte {})", msg.into(), self.pos) }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], tree: &KinematicTree, path: &Path) -> Result<PoseModel> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.fail("missing PDCK magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    if r.u32()? != CONFIG_FIELDS as usize {
        return Err(r.fail("unexpected configuration block size"));
    }
    let mut f = [0usize; CONFIG_FIELDS as usize];
    for v in &mut f {
        *v = r.u32()?;
    }
    let config = DenoiserConfig {
        latent_dim: f[0],
        blocks: f[1],
        heads: f[2],
        mlp_hidden: f[3],
        group_count: f[4],
        joint_tokens: f[5],
    };
    config.validate()?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        if len > MAX_NAME_LEN {
            return Err(r.fail(format!("parameter name length {len}")));
        }
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("parameter name is not UTF-8"))?;
        if params.position(&name).is_some() {
            return Err(r.fail(format!("duplicate parameter {name}")));
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| r.fail("oversized tensor"))?;
        let data =
            r.take(n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        params.insert(name, Tensor::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    PoseModel::from_params(config, params, tree)
}

pub fn save_checkpoint(model: &PoseModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, tree: &KinematicTree) -> Result<PoseModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode(&bytes, tree, path)
}
