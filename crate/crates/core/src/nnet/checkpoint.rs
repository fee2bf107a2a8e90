//! Checkpoint persistence: "HLN1" header, shape block, then row-major
//! little-endian 64-bit floats (embeddings, hidden layer, heads).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Head, HeadId, HiddenLayer, Matrix, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HLN1";
const VERSION: u32 = 1;

fn head_tag(id: HeadId) -> (u8, u16) {
    match id {
        HeadId::Mc => (0, 0),
        HeadId::SlotValue(s) => (1, s),
        HeadId::SlotClaim(s) => (2, s),
        HeadId::RmClaim(s) => (3, s),
    }
}

fn head_from_tag(tag: u8, slot: u16) -> Result<HeadId> {
    match tag {
        0 => Ok(HeadId::Mc),
        1 => Ok(HeadId::SlotValue(slot)),
        2 => Ok(HeadId::SlotClaim(slot)),
        3 => Ok(HeadId::RmClaim(slot)),
        other => Err(Error::Format {
            path: String::new(),
            reason: format!("unknown head tag {other}"),
        }),
    }
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    // shape block
    w.write_u64::<LittleEndian>(params.embeddings.rows as u64).map_err(io_err)?;
    w.write_u64::<LittleEndian>(params.dim as u64).map_err(io_err)?;
    let hidden_units = params.hidden.as_ref().map(|h| h.bias.len()).unwrap_or(0);
    w.write_u64::<LittleEndian>(hidden_units as u64).map_err(io_err)?;
    w.write_u64::<LittleEndian>(params.heads.len() as u64).map_err(io_err)?;
    for (&id, head) in &params.heads {
        let (tag, slot) = head_tag(id);
        w.write_u8(tag).map_err(io_err)?;
        w.write_u16::<LittleEndian>(slot).map_err(io_err)?;
        w.write_u64::<LittleEndian>(head.k() as u64).map_err(io_err)?;
    }
    // float block
    for &x in &params.embeddings.data {
        w.write_f64::<LittleEndian>(x).map_err(io_err)?;
    }
    if let Some(h) = &params.hidden {
        for &x in &h.weights.data {
            w.write_f64::<LittleEndian>(x).map_err(io_err)?;
        }
        for &x in &h.bias {
            w.write_f64::<LittleEndian>(x).map_err(io_err)?;
        }
    }
    for head in params.heads.values() {
        for &x in &head.weights.data {
            w.write_f64::<LittleEndian>(x).map_err(io_err)?;
        }
        for &x in &head.bias {
            w.write_f64::<LittleEndian>(x).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let fmt_err = |reason: String| Error::Format { path: path.display().to_string(), reason };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic, not a checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let num_concepts = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let dim = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let hidden_units = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let num_heads = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let rep_dim = if hidden_units > 0 { hidden_units } else { dim };

    let mut shapes = Vec::with_capacity(num_heads);
    for _ in 0..num_heads {
        let tag = r.read_u8().map_err(io_err)?;
        let slot = r.read_u16::<LittleEndian>().map_err(io_err)?;
        let k = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let id = head_from_tag(tag, slot).map_err(|_| fmt_err(format!("unknown head tag {tag}")))?;
        shapes.push((id, k));
    }

    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.read_f64::<LittleEndian>().map_err(io_err)?);
        }
        Ok(v)
    };

    let embeddings = Matrix { rows: num_concepts, cols: dim, data: read_f64s(num_concepts * dim)? };
    let hidden = if hidden_units > 0 {
        let weights =
            Matrix { rows: dim, cols: hidden_units, data: read_f64s(dim * hidden_units)? };
        let bias = read_f64s(hidden_units)?;
        Some(HiddenLayer { weights, bias })
    } else {
        None
    };
    let mut heads = BTreeMap::new();
    for (id, k) in shapes {
        let weights = Matrix { rows: rep_dim, cols: k, data: read_f64s(rep_dim * k)? };
        let bias = read_f64s(k)?;
        heads.insert(id, Head { weights, bias });
    }
    let params = ModelParams { dim, embeddings, hidden, heads };
    if params.embeddings.data.iter().any(|x| !x.is_finite()) {
        return Err(fmt_err("non-finite embedding entries".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_params, HeadSpec};
    use crate::rng::rng_from_seed;

    #[test]
    fn checkpoint_round_trips() {
        let mut rng = rng_from_seed(8);
        let mut params = init_params(
            7,
            5,
            &[
                HeadSpec { id: HeadId::Mc, k: 5 },
                HeadSpec { id: HeadId::SlotClaim(2), k: 9 },
            ],
            None,
            &mut rng,
        )
        .unwrap();
        params.heads.get_mut(&HeadId::Mc).unwrap().bias[1] = 0.75;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hln");
        save_params(&path, &params).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_round_trips_with_hidden_layer() {
        let mut rng = rng_from_seed(9);
        let params =
            init_params(3, 4, &[HeadSpec { id: HeadId::Mc, k: 4 }], Some(6), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hln");
        save_params(&path, &params).unwrap();
        assert_eq!(load_params(&path).unwrap(), params);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.hln");
        std::fs::write(&path, b"NOPE00000000").unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format { .. })));
    }
}
