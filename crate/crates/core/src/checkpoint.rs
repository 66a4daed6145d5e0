//! Binary checkpoint format.
//!
//! ```text
//! "CKGR" 0x01
//! u32 N_u M_u N_i M_i d k L d_0..d_L flags      (flags: bit0 separate W2, bit1 tail attention)
//! f64 entity_u relation_u projections_u layers_u entity_i relation_i projections_i layers_i
//! u64 metadata length, then UTF-8 `key = value` lines
//! ```
//! All integers and floats are little-endian. Layer blocks are W1 then W2
//! (when separate) for each layer in order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, ModelState, SideModel};
use crate::numeric::Matrix;
use crate::propagation::{AttentionForm, LayerStack};
use crate::transr::EmbeddingTable;

pub const MAGIC: &[u8; 4] = b"CKGR";
pub const VERSION: u8 = 1;

const FLAG_SEPARATE_W2: u32 = 1;
const FLAG_TAIL_ATTENTION: u32 = 2;

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    let meta = metadata(state)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let stack = &state.user_side.stack;
    let mut header = vec![
        state.user_side.table.entity_count(),
        state.user_side.table.relation_count(),
        state.item_side.table.entity_count(),
        state.item_side.table.relation_count(),
        state.user_side.table.entity_dim(),
        state.user_side.table.relation_dim(),
        stack.layers(),
    ];
    header.extend_from_slice(stack.dims());
    for v in header {
        let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut flags = 0;
    if !stack.shared_weights() {
        flags |= FLAG_SEPARATE_W2;
    }
    if stack.attention == AttentionForm::Tail {
        flags |= FLAG_TAIL_ATTENTION;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    for block in state.blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

fn metadata(state: &ModelState) -> Result<String> {
    let mut meta = String::new();
    for (k, v) in state.hyper.to_pairs() {
        let _ = writeln!(meta, "{k} = {v}");
    }
    let _ = writeln!(meta, "epoch = {}", state.epoch);
    for (k, v) in &state.extra {
        if k.contains('=') || k.contains('\n') || v.contains('\n') || k.trim() != k || v.trim() != v {
            return Err(Error::Config(format!("metadata entry '{k}' cannot be stored")));
        }
        let _ = writeln!(meta, "config.{k} = {v}");
    }
    Ok(meta)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Checkpoint {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated while reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .filter(|&n| n <= self.bytes.len() - self.pos);
        let Some(n) = n else {
            return self.fail(format!("truncated while reading {what} ({rows}x{cols})"));
        };
        let data = self
            .take(n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not a checkpoint file");
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        r.pos -= 1;
        return r.fail(format!("unsupported version {version}"));
    }
    let n_u = r.u32("header")?;
    let m_u = r.u32("header")?;
    let n_i = r.u32("header")?;
    let m_i = r.u32("header")?;
    let d = r.u32("header")?;
    let k = r.u32("header")?;
    let layers = r.u32("header")?;
    if layers == 0 || layers > 1024 {
        r.pos -= 4;
        return r.fail(format!("implausible layer count {layers}"));
    }
    let dims = (0..=layers).map(|_| r.u32("layer dims")).collect::<Result<Vec<_>>>()?;
    if dims[0] != d {
        return r.fail(format!("first layer dim {} differs from entity dim {d}", dims[0]));
    }
    let flags = r.u32("flags")? as u32;
    if flags & !(FLAG_SEPARATE_W2 | FLAG_TAIL_ATTENTION) != 0 {
        r.pos -= 4;
        return r.fail(format!("unknown flags {flags:#x}"));
    }
    let shared = flags & FLAG_SEPARATE_W2 == 0;
    let attention = if flags & FLAG_TAIL_ATTENTION != 0 {
        AttentionForm::Tail
    } else {
        AttentionForm::Relation
    };

    let read_side = |r: &mut Reader, n: usize, m: usize| -> Result<(EmbeddingTable, Vec<Matrix>, Option<Vec<Matrix>>)> {
        let entity = r.matrix(n, d, "entity embeddings")?;
        let relation = r.matrix(m, k, "relation embeddings")?;
        let projection = (0..m).map(|_| r.matrix(k, d, "projections")).collect::<Result<Vec<_>>>()?;
        let mut w1 = Vec::with_capacity(layers);
        let mut w2 = Vec::with_capacity(layers);
        for l in 1..=layers {
            w1.push(r.matrix(dims[l], dims[l - 1], "layer weights")?);
            if !shared {
                w2.push(r.matrix(dims[l], dims[l - 1], "layer weights")?);
            }
        }
        Ok((
            EmbeddingTable {
                entity,
                relation,
                projection,
            },
            w1,
            (!shared).then_some(w2),
        ))
    };
    let user = read_side(&mut r, n_u, m_u)?;
    let item = read_side(&mut r, n_i, m_i)?;

    let len_bytes = r.take(8, "metadata length")?;
    let len = u64::from_le_bytes(len_bytes.try_into().unwrap());
    if len > (bytes.len() - r.pos) as u64 {
        return r.fail(format!("metadata length {len} exceeds the file"));
    }
    let meta_start = r.pos;
    let meta = std::str::from_utf8(r.take(len as usize, "metadata")?).map_err(|e| Error::Checkpoint {
        offset: (meta_start + e.valid_up_to()) as u64,
        message: "metadata is not UTF-8".into(),
    })?;
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let mut hyper = Hyperparams::default();
    let mut epoch = 0;
    let mut extra = BTreeMap::new();
    for line in meta.lines() {
        let bad = |m: String| Error::Checkpoint {
            offset: meta_start as u64,
            message: m,
        };
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| bad(format!("malformed metadata line '{line}'")))?;
        if let Some(rest) = key.strip_prefix("config.") {
            extra.insert(rest.to_string(), value.to_string());
        } else if key == "epoch" {
            epoch = value.parse().map_err(|_| bad(format!("bad epoch '{value}'")))?;
        } else if !hyper.set(key, value).map_err(|e| bad(e.to_string()))? {
            return Err(bad(format!("unknown metadata key '{key}'")));
        }
    }
    if hyper.stack_dims() != dims
        || hyper.relation_dim != k
        || hyper.shared_weights != shared
        || hyper.attention != attention
    {
        return Err(Error::Checkpoint {
            offset: meta_start as u64,
            message: "metadata disagrees with the binary header".into(),
        });
    }

    let side = |(table, w1, w2): (EmbeddingTable, Vec<Matrix>, Option<Vec<Matrix>>)| -> Result<SideModel> {
        let mut stack = LayerStack::zeros(dims.clone(), shared, hyper.leaky_slope, attention)?;
        stack.w1 = w1;
        stack.w2 = w2;
        stack.validate_for(&table)?;
        Ok(SideModel { table, stack })
    };
    Ok(ModelState {
        user_side: side(user)?,
        item_side: side(item)?,
        hyper,
        epoch,
        extra,
    })
}

/// Fails with [`Error::DimensionConflict`] when `state` was built with
/// different structural settings than `hyper`.
pub fn check_matches(state: &ModelState, hyper: &Hyperparams) -> Result<()> {
    let s = &state.hyper;
    let mut diffs = Vec::new();
    if s.entity_dim != hyper.entity_dim {
        diffs.push(format!("entity_dim {} vs {}", s.entity_dim, hyper.entity_dim));
    }
    if s.relation_dim != hyper.relation_dim {
        diffs.push(format!("relation_dim {} vs {}", s.relation_dim, hyper.relation_dim));
    }
    if s.layer_dims != hyper.layer_dims {
        diffs.push(format!("layer_dims {:?} vs {:?}", s.layer_dims, hyper.layer_dims));
    }
    if s.shared_weights != hyper.shared_weights {
        diffs.push("aggregator.shared_weights".into());
    }
    if s.attention != hyper.attention {
        diffs.push("attention.form".into());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::DimensionConflict(format!(
            "checkpoint differs from config: {}",
            diffs.join(", ")
        )))
    }
}
