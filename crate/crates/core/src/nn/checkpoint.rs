//! Binary parameter container.
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`.
//!
//! ```text
//! magic        8 bytes  "UACPCKPT"
//! version      u32      1
//! n_layers     u32      extractor layers L
//! shapes       L × (out u32, in u32)
//! num_classes  u32      K
//! feature_dim  u32      d
//! bank_rows    u32      0 when no memory bank is stored
//! [bank_dim    u32, tau f64]          only when bank_rows > 0
//! payload      f64 × …  for each extractor layer: weights (out×in, row-major), biases (out);
//!                       head weights (2K×d, row-major), head biases (2K);
//!                       bank rows (bank_rows×bank_dim, row-major) when present
//! ```
//!
//! Readers reject trailing bytes, unknown versions and inconsistent shapes.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{ClassifierHeadParams, DenseLayer, FeatureExtractorParams, Network};
use crate::memory_bank::MemoryBank;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"UACPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub bank: Option<MemoryBank>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<'a, W: Write>(w: &mut W, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn get_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(get_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn get_vector<R: Read>(r: &mut R, len: usize) -> Result<Array1<f64>> {
    (0..len)
        .map(|_| get_f64(r))
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    network: &Network,
    bank: Option<&MemoryBank>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    let layers = network.extractor.layers();
    put_u32(w, layers.len())?;
    for l in layers {
        put_u32(w, l.out_dim())?;
        put_u32(w, l.in_dim())?;
    }
    put_u32(w, network.num_classes())?;
    put_u32(w, network.head.feature_dim())?;
    match bank {
        Some(b) => {
            put_u32(w, b.len())?;
            put_u32(w, b.dim())?;
            put_f64s(w, [b.tau()].iter())?;
        }
        None => put_u32(w, 0)?,
    }
    for slice in network.param_slices() {
        put_f64s(w, slice)?;
    }
    if let Some(b) = bank {
        put_f64s(w, b.rows().iter())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let bad = |m: String| Error::InvalidInput(format!("checkpoint: {m}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_layers = get_u32(r)?;
    if n_layers == 0 {
        return Err(bad("no extractor layers".into()));
    }
    let shapes = (0..n_layers)
        .map(|_| Ok((get_u32(r)?, get_u32(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = get_u32(r)?;
    let feature_dim = get_u32(r)?;
    if shapes[n_layers - 1].0 != feature_dim {
        return Err(bad(format!(
            "last layer width {} disagrees with feature_dim {feature_dim}",
            shapes[n_layers - 1].0
        )));
    }
    let bank_rows = get_u32(r)?;
    let bank_header = if bank_rows > 0 {
        Some((get_u32(r)?, get_f64(r)?))
    } else {
        None
    };

    let mut layers = Vec::with_capacity(n_layers);
    for &(out, inp) in &shapes {
        let w = get_matrix(r, out, inp)?;
        let b = get_vector(r, out)?;
        layers.push(DenseLayer::new(w, b)?);
    }
    let extractor = FeatureExtractorParams::new(layers)?;
    let head_w = get_matrix(r, 2 * num_classes, feature_dim)?;
    let head_b = get_vector(r, 2 * num_classes)?;
    let head = ClassifierHeadParams::new(head_w, head_b)?;
    let network = Network::new(extractor, head)?;

    let bank = match bank_header {
        Some((dim, tau)) => {
            let rows = get_matrix(r, bank_rows, dim)?;
            Some(MemoryBank::new(rows, tau)?)
        }
        None => None,
    };

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { network, bank })
}
