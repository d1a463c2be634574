//! Dictionary inspection: tiled filter mosaics, raw filter dumps, and
//! ordering by code usage.

use std::io::{Read, Write};
use std::path::Path;

use crate::conv::FilterBank;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::model::ModelParams;

pub const DUMP_MAGIC: &[u8; 8] = b"CDLFILT1";

/// `(rows, cols)` of the mosaic: `cols = 2^⌈log₂(M)/2⌉`.
pub fn mosaic_grid(num_filters: usize) -> (usize, usize) {
    let bits = (num_filters.max(1) as f64).log2();
    let cols = 1usize << ((bits / 2.0).ceil() as u32);
    (num_filters.div_ceil(cols), cols)
}

/// Tiles the filters into one image, each rescaled to `[0, 1]` on its own,
/// separated by one-pixel white lines. `order` lists filter indices.
pub fn dict_mosaic(bank: &FilterBank, order: Option<&[usize]>) -> Result<Image> {
    let m = bank.num_filters();
    let default: Vec<usize> = (0..m).collect();
    let order = order.unwrap_or(&default);
    let mut seen = vec![false; m];
    if order.len() != m || !order.iter().all(|&i| i < m && !std::mem::replace(&mut seen[i], true)) {
        return Err(invalid("order must be a permutation of the filter indices"));
    }
    let (rows, cols) = mosaic_grid(m);
    let k = bank.size();
    let c = bank.channels();
    let (h, w) = (rows * (k + 1) + 1, cols * (k + 1) + 1);
    let mut out = Image::from_vec(h, w, c, vec![1.0; h * w * c])?;
    for (slot, &f) in order.iter().enumerate() {
        let filt = bank.filter(f);
        let (lo, hi) = filt.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = hi - lo;
        let (top, left) = ((slot / cols) * (k + 1) + 1, (slot % cols) * (k + 1) + 1);
        for ch in 0..c {
            let taps = bank.taps(f, ch);
            for a in 0..k {
                for b in 0..k {
                    let v = if span > 0.0 { (taps[a * k + b] - lo) / span } else { 0.5 };
                    out.set(ch, top + a, left + b, v);
                }
            }
        }
    }
    Ok(out)
}

/// Raw dump: magic, u32 M, size, C, then the weights as f64, little-endian.
pub fn write_filter_dump<W: Write>(bank: &FilterBank, mut out: W) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    for v in [bank.num_filters(), bank.size(), bank.channels()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in bank.weights() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_filter_dump<R: Read>(mut input: R) -> Result<FilterBank> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != DUMP_MAGIC {
        return Err(Error::Version("not a filter dump".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (m, k, c) = (dim(0), dim(1), dim(2));
    let body = &bytes[20..];
    if body.len() != m * k * k * c * 8 {
        return Err(Error::Corrupt(format!("filter dump holds {} bytes of weights, expected {}", body.len(), m * k * k * c * 8)));
    }
    let weights = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    FilterBank::from_vec(m, k, c, weights)
}

pub fn save_filter_dump(bank: &FilterBank, path: impl AsRef<Path>) -> Result<()> {
    write_filter_dump(bank, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_filter_dump(path: impl AsRef<Path>) -> Result<FilterBank> {
    read_filter_dump(std::fs::File::open(path)?)
}

/// Mean absolute activation of each subband of the final code, over
/// mean-subtracted `images` at noise level `sigma`.
pub fn filter_usage(theta: &ModelParams, images: &[Image], sigma: f64) -> Result<Vec<f64>> {
    let m = theta.config.subbands;
    let mut usage = vec![0.0; m];
    let mut count = 0usize;
    for img in images {
        let mut y = img.clone();
        y.subtract_mean();
        let (_, z) = theta.forward(&y, sigma)?;
        for (u, sub) in usage.iter_mut().enumerate() {
            *sub += z.subband(u).iter().map(|v| v.abs()).sum::<f64>();
        }
        count += z.subband(0).len();
    }
    if count > 0 {
        usage.iter_mut().for_each(|u| *u /= count as f64);
    }
    Ok(usage)
}

/// Filter indices from most to least used (ties keep index order).
pub fn usage_order(usage: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..usage.len()).collect();
    idx.sort_by(|&a, &b| usage[b].total_cmp(&usage[a]));
    idx
}
