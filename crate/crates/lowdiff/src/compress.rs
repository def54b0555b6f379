//! Gradient sparsification.
//!
//! A compressed gradient keeps k = max(1, floor(ratio * Ψ)) of the dense
//! entries as (index, value) pairs. The same object later doubles as a
//! differential checkpoint payload, so everything here is deterministic:
//! top-k ties break toward the lower index, random-k selection is a pure
//! function of (seed, iteration, Ψ), and accumulation never prunes exact-zero
//! sums (keeping it associative on supports).

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Bytes for one stored index (u32 on disk).
pub const INDEX_WIDTH: usize = 4;
/// Bytes for one stored value (f64 on disk).
pub const VALUE_WIDTH: usize = 8;

/// Sparse view of a dense length-Ψ gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub dense_len: usize,
    /// Kept fraction; equals `indices.len() / dense_len` after accumulation
    /// or synchronization, the requested ratio straight out of the compressor.
    pub ratio: f64,
    /// Strictly ascending, each in [0, dense_len).
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub iteration: u64,
}

impl SparseGradient {
    pub fn from_parts(
        dense_len: usize,
        indices: Vec<u32>,
        values: Vec<f64>,
        iteration: u64,
    ) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension { expected: indices.len(), got: values.len() });
        }
        if indices.is_empty() {
            return Err(Error::Domain("sparse gradient must keep at least one entry".into()));
        }
        if dense_len > u32::MAX as usize {
            return Err(Error::Domain("dense length exceeds u32 index range".into()));
        }
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Domain("indices must be strictly ascending".into()));
            }
        }
        if *indices.last().unwrap() as usize >= dense_len {
            return Err(Error::Domain("index out of dense range".into()));
        }
        let ratio = indices.len() as f64 / dense_len as f64;
        Ok(Self { dense_len, ratio, indices, values, iteration })
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Nominal payload size: k * (index width + value width).
    pub fn payload_bytes(&self) -> usize {
        self.k() * (INDEX_WIDTH + VALUE_WIDTH)
    }
}

/// Selection rule for sparsification.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressorKind {
    /// Keep the k largest-magnitude entries; ties keep the lower index.
    TopK,
    /// Keep k pseudo-random entries chosen purely from (seed, iteration, Ψ).
    RandomK(u64),
}

/// Number of kept entries for a given ratio.
pub fn kept_count(dense_len: usize, ratio: f64) -> usize {
    ((ratio * dense_len as f64).floor() as usize).clamp(1, dense_len)
}

/// Sparsify a dense gradient.
pub fn compress(
    dense: &[f64],
    ratio: f64,
    kind: &CompressorKind,
    iteration: u64,
) -> Result<SparseGradient> {
    if dense.is_empty() {
        return Err(Error::Domain("cannot compress an empty vector".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("compression ratio {ratio} outside (0, 1]")));
    }
    let k = kept_count(dense.len(), ratio);
    let mut picked: Vec<u32> = match kind {
        CompressorKind::TopK => {
            let mut order: Vec<u32> = (0..dense.len() as u32).collect();
            // larger magnitude first, lower index wins ties
            let rank = |i: u32| (dense[i as usize].abs(), std::cmp::Reverse(i));
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, |&a, &b| {
                    rank(b).partial_cmp(&rank(a)).unwrap_or(std::cmp::Ordering::Equal)
                });
                order.truncate(k);
            }
            order
        }
        CompressorKind::RandomK(seed) => {
            let mut rng = keyed_rng(&[*seed, iteration, dense.len() as u64]);
            sample(&mut rng, dense.len(), k).iter().map(|i| i as u32).collect()
        }
    };
    picked.sort_unstable();
    let values = picked.iter().map(|&i| dense[i as usize]).collect();
    let mut sg = SparseGradient::from_parts(dense.len(), picked, values, iteration)?;
    sg.ratio = ratio;
    Ok(sg)
}

/// Expand back to a dense vector, zeros off-support.
pub fn decompress(sg: &SparseGradient) -> Vec<f64> {
    let mut dense = vec![0.0; sg.dense_len];
    for (&i, &v) in sg.indices.iter().zip(&sg.values) {
        dense[i as usize] = v;
    }
    dense
}

/// Decompress into an existing buffer (cleared first).
pub fn decompress_into(sg: &SparseGradient, dense: &mut [f64]) -> Result<()> {
    if dense.len() != sg.dense_len {
        return Err(Error::Dimension { expected: sg.dense_len, got: dense.len() });
    }
    dense.fill(0.0);
    for (&i, &v) in sg.indices.iter().zip(&sg.values) {
        dense[i as usize] = v;
    }
    Ok(())
}

/// Sum two sparse gradients over the union of their supports. Exact-zero sums
/// stay in the support (no pruning), so the support of a fold is independent
/// of association order. The result carries the later iteration tag.
pub fn accumulate(a: &SparseGradient, b: &SparseGradient) -> Result<SparseGradient> {
    if a.dense_len != b.dense_len {
        return Err(Error::Dimension { expected: a.dense_len, got: b.dense_len });
    }
    let mut indices = Vec::with_capacity(a.k() + b.k());
    let mut values = Vec::with_capacity(a.k() + b.k());
    let (mut ia, mut ib) = (0, 0);
    while ia < a.k() || ib < b.k() {
        let next_a = a.indices.get(ia).copied();
        let next_b = b.indices.get(ib).copied();
        match (next_a, next_b) {
            (Some(x), Some(y)) if x == y => {
                indices.push(x);
                values.push(a.values[ia] + b.values[ib]);
                ia += 1;
                ib += 1;
            }
            (Some(x), Some(y)) if x < y => {
                indices.push(x);
                values.push(a.values[ia]);
                ia += 1;
            }
            (Some(_), Some(y)) => {
                indices.push(y);
                values.push(b.values[ib]);
                ib += 1;
            }
            (Some(x), None) => {
                indices.push(x);
                values.push(a.values[ia]);
                ia += 1;
            }
            (None, Some(y)) => {
                indices.push(y);
                values.push(b.values[ib]);
                ib += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    SparseGradient::from_parts(a.dense_len, indices, values, a.iteration.max(b.iteration))
}
