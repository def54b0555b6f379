//! Synthetic training workload and optimizer.
//!
//! The model is a layered linear least-squares problem: each layer holds an
//! independent banded system `A_l x_l = b_l`, and each simulated worker owns
//! its own system drawn from a seeded stream. Gradients are analytic, cheap,
//! and every worker's loss has a planted exact minimizer, which makes
//! bit-exact recovery checks possible in a way a real network would not.
//!
//! All arithmetic is f64 with a fixed sequential reduction order, so two runs
//! with the same seeds produce bit-identical trajectories.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::compress::SparseGradient;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Model parameters plus optimizer moments and the completed-update count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub moment1: Vec<f64>,
    pub moment2: Vec<f64>,
    pub step: u64,
}

impl ModelState {
    pub fn new(params: Vec<f64>, moment1: Vec<f64>, moment2: Vec<f64>, step: u64) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Domain("model must have at least one parameter".into()));
        }
        if moment1.len() != params.len() {
            return Err(Error::Dimension { expected: params.len(), got: moment1.len() });
        }
        if moment2.len() != params.len() {
            return Err(Error::Dimension { expected: params.len(), got: moment2.len() });
        }
        if moment2.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("moment2 must be elementwise nonnegative".into()));
        }
        Ok(Self { params, moment1, moment2, step })
    }

    /// Fresh state (all zeros, step 0) with `psi` parameters.
    pub fn zeros(psi: usize) -> Self {
        Self {
            params: vec![0.0; psi],
            moment1: vec![0.0; psi],
            moment2: vec![0.0; psi],
            step: 0,
        }
    }

    pub fn psi(&self) -> usize {
        self.params.len()
    }

    /// Flatten to a single vector `[params | moment1 | moment2]` of length 3Ψ.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.psi());
        out.extend_from_slice(&self.params);
        out.extend_from_slice(&self.moment1);
        out.extend_from_slice(&self.moment2);
        out
    }

    /// Inverse of [`ModelState::to_flat`].
    pub fn from_flat(flat: &[f64], step: u64) -> Result<Self> {
        if flat.len() % 3 != 0 || flat.is_empty() {
            return Err(Error::Dimension { expected: 3, got: flat.len() });
        }
        let psi = flat.len() / 3;
        Self::new(
            flat[..psi].to_vec(),
            flat[psi..2 * psi].to_vec(),
            flat[2 * psi..].to_vec(),
            step,
        )
    }

    /// SHA-256 of the canonical little-endian serialization. Two states with
    /// the same digest are bit-identical.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.psi() as u64).to_le_bytes());
        h.update(self.step.to_le_bytes());
        for part in [&self.params, &self.moment1, &self.moment2] {
            for v in part {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bias_correction: true,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning_rate must be positive".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Domain("beta1 must be in (0,1)".into()));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Domain("beta2 must be in (0,1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One Adam update. Returns the new state; the input is untouched.
///
/// The identical code path runs during live training, replica updates, and
/// recovery replay, which is what makes recovered states bit-equal to the
/// live trajectory.
pub fn adam_step(state: &ModelState, grad: &[f64], cfg: &AdamConfig) -> Result<ModelState> {
    if grad.len() != state.psi() {
        return Err(Error::Dimension { expected: state.psi(), got: grad.len() });
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "gradient" });
    }
    let t = state.step + 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (bc1, bc2) = if cfg.bias_correction {
        (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32))
    } else {
        (1.0, 1.0)
    };

    let mut params = state.params.clone();
    let mut m = state.moment1.clone();
    let mut v = state.moment2.clone();
    for i in 0..grad.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(ModelState { params, moment1: m, moment2: v, step: t })
}

/// Gradient of a single layer for one iteration, emitted during the backward
/// pass. Layers of one iteration concatenate (in layer order) to the dense
/// length-Ψ gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub layer_index: usize,
    pub values: Vec<f64>,
    pub iteration: u64,
}

/// One worker's banded least-squares system for one layer.
#[derive(Debug, Clone)]
struct LayerSystem {
    size: usize,
    half_band: usize,
    /// Row-major band storage: entry (i, d) is A[i][i - half_band + d];
    /// positions falling off the matrix are stored as 0.
    band: Vec<f64>,
    target: Vec<f64>,
    solution: Vec<f64>,
}

impl LayerSystem {
    fn generate(size: usize, design_seed: u64, target_seed: u64, worker: u64, layer: u64) -> Self {
        let half_band = 4.min(size - 1);
        let width = 2 * half_band + 1;
        let mut rng = keyed_rng(&[design_seed, 1, worker, layer]);
        let mut band = vec![0.0; size * width];
        for (i, row) in band.chunks_mut(width).enumerate() {
            for (d, slot) in row.iter_mut().enumerate() {
                let j = i as isize - half_band as isize + d as isize;
                if j >= 0 && (j as usize) < size {
                    *slot = rng.gen_range(-1.0..1.0);
                    if j as usize == i {
                        // diagonal boost keeps the systems well scaled
                        *slot += 3.0;
                    }
                }
            }
        }
        let mut sol_rng = keyed_rng(&[target_seed, 2, worker, layer]);
        let solution: Vec<f64> = (0..size).map(|_| sol_rng.gen_range(-1.0..1.0)).collect();
        let mut target = vec![0.0; size];
        Self::matvec_into(&band, size, half_band, &solution, &mut target);
        Self { size, half_band, band, target, solution }
    }

    fn matvec_into(band: &[f64], size: usize, half_band: usize, x: &[f64], out: &mut [f64]) {
        let width = 2 * half_band + 1;
        for i in 0..size {
            let row = &band[i * width..(i + 1) * width];
            let mut acc = 0.0;
            for (d, &a) in row.iter().enumerate() {
                let j = i as isize - half_band as isize + d as isize;
                if j >= 0 && (j as usize) < size {
                    acc += a * x[j as usize];
                }
            }
            out[i] = acc;
        }
    }

    /// Residual r = A x - b.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.size];
        Self::matvec_into(&self.band, self.size, self.half_band, x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.target) {
            *ri -= bi;
        }
        r
    }

    /// Gradient of 0.5 * ||A x - b||^2, i.e. A^T (A x - b).
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        let width = 2 * self.half_band + 1;
        let mut g = vec![0.0; self.size];
        for i in 0..self.size {
            let row = &self.band[i * width..(i + 1) * width];
            for (d, &a) in row.iter().enumerate() {
                let j = i as isize - self.half_band as isize + d as isize;
                if j >= 0 && (j as usize) < self.size {
                    g[j as usize] += a * r[i];
                }
            }
        }
        g
    }

    fn loss(&self, x: &[f64]) -> f64 {
        self.residual(x).iter().map(|r| 0.5 * r * r).sum()
    }
}

/// Deterministic multi-worker workload: per worker and layer, an independent
/// banded least-squares system with a planted exact minimizer.
#[derive(Debug, Clone)]
pub struct LayeredWorkload {
    layer_sizes: Vec<usize>,
    num_workers: usize,
    /// workers[w].[l] is worker w's system for layer l.
    workers: Vec<Vec<LayerSystem>>,
}

impl LayeredWorkload {
    pub fn new(
        layer_sizes: Vec<usize>,
        design_matrix_seed: u64,
        target_seed: u64,
        num_workers: usize,
    ) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::Domain("layer sizes must be positive".into()));
        }
        if num_workers == 0 {
            return Err(Error::Domain("at least one worker required".into()));
        }
        let workers = (0..num_workers)
            .map(|w| {
                layer_sizes
                    .iter()
                    .enumerate()
                    .map(|(l, &size)| {
                        LayerSystem::generate(size, design_matrix_seed, target_seed, w as u64, l as u64)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { layer_sizes, num_workers, workers })
    }

    /// Ψ-sized workload with `layers` near-equal layer sizes.
    pub fn with_even_layers(
        psi: usize,
        layers: usize,
        design_matrix_seed: u64,
        target_seed: u64,
        num_workers: usize,
    ) -> Result<Self> {
        if layers == 0 || psi < layers {
            return Err(Error::Domain(format!(
                "cannot split {psi} parameters into {layers} layers"
            )));
        }
        let base = psi / layers;
        let rem = psi % layers;
        let sizes = (0..layers).map(|l| base + usize::from(l < rem)).collect();
        Self::new(sizes, design_matrix_seed, target_seed, num_workers)
    }

    pub fn psi(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Offset of a layer inside the dense parameter vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes[..layer].iter().sum()
    }

    /// The exact minimizer of a worker's local loss (gradient is exactly zero
    /// there: the target was constructed as A * solution).
    pub fn planted_solution(&self, worker: usize) -> Vec<f64> {
        self.workers[worker]
            .iter()
            .flat_map(|sys| sys.solution.iter().copied())
            .collect()
    }

    /// Worker's local loss 0.5 * sum_l ||A_l x_l - b_l||^2.
    pub fn local_loss(&self, worker: usize, params: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut off = 0;
        for sys in &self.workers[worker] {
            total += sys.loss(&params[off..off + sys.size]);
            off += sys.size;
        }
        total
    }

    /// Mean of the per-worker losses, the quantity training drives down.
    pub fn global_loss(&self, params: &[f64]) -> f64 {
        (0..self.num_workers).map(|w| self.local_loss(w, params)).sum::<f64>()
            / self.num_workers as f64
    }

    /// Backward pass for one worker: layer gradients in reverse layer order
    /// (last layer first), as they become available during backpropagation.
    /// Concatenated in layer order they equal A_w^T (A_w x - b_w).
    ///
    /// The gradient does not depend on `iteration` (each worker trains on its
    /// full local data every step); the tag is carried through for bookkeeping.
    pub fn backward(
        &self,
        state: &ModelState,
        worker: usize,
        iteration: u64,
    ) -> Result<Vec<LayerGradient>> {
        if worker >= self.num_workers {
            return Err(Error::Domain(format!(
                "worker {worker} out of range (num_workers={})",
                self.num_workers
            )));
        }
        if state.psi() != self.psi() {
            return Err(Error::Dimension { expected: self.psi(), got: state.psi() });
        }
        let mut out = Vec::with_capacity(self.num_layers());
        for layer in (0..self.num_layers()).rev() {
            let off = self.layer_offset(layer);
            let sys = &self.workers[worker][layer];
            let values = sys.gradient(&state.params[off..off + sys.size]);
            out.push(LayerGradient { layer_index: layer, values, iteration });
        }
        Ok(out)
    }

    /// Reassemble a dense gradient from the layer pieces of one iteration,
    /// in any arrival order. Errors on missing, duplicate, or missized pieces.
    pub fn assemble_dense(&self, pieces: &[LayerGradient]) -> Result<Vec<f64>> {
        if pieces.len() != self.num_layers() {
            return Err(Error::Assembly(format!(
                "expected {} layer pieces, got {}",
                self.num_layers(),
                pieces.len()
            )));
        }
        let mut dense = vec![0.0; self.psi()];
        let mut seen = vec![false; self.num_layers()];
        for piece in pieces {
            let l = piece.layer_index;
            if l >= self.num_layers() {
                return Err(Error::Assembly(format!("layer index {l} out of range")));
            }
            if seen[l] {
                return Err(Error::Assembly(format!("duplicate piece for layer {l}")));
            }
            if piece.values.len() != self.layer_sizes[l] {
                return Err(Error::Assembly(format!(
                    "layer {l} piece has {} values, expected {}",
                    piece.values.len(),
                    self.layer_sizes[l]
                )));
            }
            seen[l] = true;
            let off = self.layer_offset(l);
            dense[off..off + piece.values.len()].copy_from_slice(&piece.values);
        }
        Ok(dense)
    }
}

/// Element-wise mean of per-worker sparse gradients over the union of their
/// supports (allgather-then-average semantics). Output indices ascend; values
/// at an index are summed in worker order then divided by the worker count,
/// so the result is deterministic.
pub fn sync_gradients(per_worker: &[SparseGradient]) -> Result<SparseGradient> {
    let first = per_worker
        .first()
        .ok_or_else(|| Error::Domain("sync_gradients needs at least one input".into()))?;
    for sg in per_worker {
        if sg.dense_len != first.dense_len {
            return Err(Error::Dimension { expected: first.dense_len, got: sg.dense_len });
        }
        if sg.iteration != first.iteration {
            return Err(Error::Domain(format!(
                "iteration mismatch in sync: {} vs {}",
                first.iteration, sg.iteration
            )));
        }
    }
    let mut acc: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    for sg in per_worker {
        for (&idx, &val) in sg.indices.iter().zip(&sg.values) {
            *acc.entry(idx).or_insert(0.0) += val;
        }
    }
    let n = per_worker.len() as f64;
    let (indices, values): (Vec<u32>, Vec<f64>) =
        acc.into_iter().map(|(i, v)| (i, v / n)).unzip();
    SparseGradient::from_parts(first.dense_len, indices, values, first.iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress, decompress, CompressorKind};

    fn cfg() -> AdamConfig {
        AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }
    }

    #[test]
    fn zero_gradient_leaves_fresh_params() {
        let s = ModelState::zeros(5);
        let next = adam_step(&s, &[0.0; 5], &cfg()).unwrap();
        assert_eq!(next.params, s.params);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let s = ModelState::zeros(1);
        let next = adam_step(&s, &[1.0], &cfg()).unwrap();
        let delta = next.params[0] - 0.0;
        assert!((delta + 0.1).abs() < 1e-6, "delta = {delta}");
    }

    /// Straight-line scalar re-implementation of the Adam recurrence.
    fn adam_oracle(grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
        let psi = grads[0].len();
        let mut p = vec![0.0; psi];
        let mut m = vec![0.0; psi];
        let mut v = vec![0.0; psi];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..psi {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        p
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let g1 = vec![0.5, -1.25, 2.0];
        let g2 = vec![-0.75, 0.1, 0.0];
        let c = cfg();
        let s = ModelState::zeros(3);
        let s = adam_step(&s, &g1, &c).unwrap();
        let s = adam_step(&s, &g2, &c).unwrap();
        let expect = adam_oracle(&[g1, g2], 0.1, 0.9, 0.999, 1e-8);
        assert_eq!(s.params, expect);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn adam_rejects_bad_inputs() {
        let s = ModelState::zeros(3);
        assert!(matches!(adam_step(&s, &[1.0], &cfg()), Err(Error::Dimension { .. })));
        assert!(matches!(
            adam_step(&s, &[1.0, f64::NAN, 0.0], &cfg()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn step_increments_by_one() {
        let mut s = ModelState::zeros(2);
        for expect in 1..=10 {
            s = adam_step(&s, &[0.3, -0.2], &cfg()).unwrap();
            assert_eq!(s.step, expect);
        }
    }

    #[test]
    fn gradient_zero_at_planted_solution() {
        let wl = LayeredWorkload::new(vec![3, 5], 11, 12, 3).unwrap();
        for w in 0..3 {
            let state =
                ModelState::new(wl.planted_solution(w), vec![0.0; 8], vec![0.0; 8], 0).unwrap();
            let grads = wl.backward(&state, w, 7).unwrap();
            for g in &grads {
                assert!(g.values.iter().all(|&v| v == 0.0), "layer {} not zero", g.layer_index);
            }
        }
    }

    #[test]
    fn backward_emits_reverse_layer_order() {
        let wl = LayeredWorkload::new(vec![2, 2], 1, 2, 1).unwrap();
        let grads = wl.backward(&ModelState::zeros(4), 0, 0).unwrap();
        let order: Vec<usize> = grads.iter().map(|g| g.layer_index).collect();
        assert_eq!(order, vec![1, 0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut worst: f64 = 0.0;
        for inst in 0..50 {
            let sizes = match inst % 4 {
                0 => vec![6],
                1 => vec![3, 4],
                2 => vec![2, 2, 3],
                _ => vec![5, 1],
            };
            let psi: usize = sizes.iter().sum();
            let wl = LayeredWorkload::new(sizes, 100 + inst, 200 + inst, 1).unwrap();
            let mut rng = keyed_rng(&[inst, 99]);
            let x: Vec<f64> = (0..psi).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let state = ModelState::new(x.clone(), vec![0.0; psi], vec![0.0; psi], 0).unwrap();
            let grads = wl.backward(&state, 0, 0).unwrap();
            let dense = wl.assemble_dense(&grads).unwrap();

            let eps = 1e-6;
            for i in 0..psi {
                let mut xp = x.clone();
                xp[i] += eps;
                let mut xm = x.clone();
                xm[i] -= eps;
                let fd = (wl.local_loss(0, &xp) - wl.local_loss(0, &xm)) / (2.0 * eps);
                let denom = dense[i].abs().max(1.0);
                worst = worst.max((dense[i] - fd).abs() / denom);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn reassembled_stream_reproduces_dense_gradient() {
        let wl = LayeredWorkload::new(vec![3, 2, 4], 5, 6, 2).unwrap();
        let mut rng = keyed_rng(&[42]);
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let state = ModelState::new(x, vec![0.0; 9], vec![0.0; 9], 0).unwrap();
        let stream = wl.backward(&state, 1, 3).unwrap();
        // stream arrives in reverse order; assembly must not care
        let dense = wl.assemble_dense(&stream).unwrap();
        let mut by_layer = stream.clone();
        by_layer.sort_by_key(|g| g.layer_index);
        let concat: Vec<f64> = by_layer.into_iter().flat_map(|g| g.values).collect();
        assert_eq!(dense, concat);
    }

    #[test]
    fn sync_single_worker_is_identity() {
        let sg = compress(&[3.0, -1.0, 0.5, -4.0], 0.5, &CompressorKind::TopK, 9).unwrap();
        let out = sync_gradients(std::slice::from_ref(&sg)).unwrap();
        assert_eq!(out, sg);
    }

    #[test]
    fn sync_means_with_implicit_zeros() {
        let a = SparseGradient::from_parts(4, vec![0], vec![2.0], 1).unwrap();
        let b = SparseGradient::from_parts(4, vec![3], vec![4.0], 1).unwrap();
        let out = sync_gradients(&[a, b]).unwrap();
        assert_eq!(out.indices, vec![0, 3]);
        assert_eq!(out.values, vec![1.0, 2.0]);
    }

    #[test]
    fn sync_matches_dense_average_oracle() {
        let psi = 32;
        let mut rng = keyed_rng(&[7, 7]);
        let per_worker: Vec<SparseGradient> = (0..4)
            .map(|_| {
                let dense: Vec<f64> = (0..psi).map(|_| rng.gen_range(-1.0..1.0)).collect();
                compress(&dense, 0.25, &CompressorKind::TopK, 5).unwrap()
            })
            .collect();
        let synced = sync_gradients(&per_worker).unwrap();

        // oracle: densify, average, re-sparsify by union support
        let mut avg = vec![0.0; psi];
        for sg in &per_worker {
            for (v, d) in avg.iter_mut().zip(decompress(sg)) {
                *v += d;
            }
        }
        for v in &mut avg {
            *v /= 4.0;
        }
        let mut union: Vec<u32> = per_worker.iter().flat_map(|sg| sg.indices.clone()).collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(synced.indices, union);
        for (&i, &v) in synced.indices.iter().zip(&synced.values) {
            assert!((v - avg[i as usize]).abs() < 1e-15);
        }
    }

    #[test]
    fn sync_rejects_mismatched_len() {
        let a = SparseGradient::from_parts(4, vec![0], vec![1.0], 1).unwrap();
        let b = SparseGradient::from_parts(5, vec![0], vec![1.0], 1).unwrap();
        assert!(matches!(sync_gradients(&[a, b]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn workload_is_deterministic() {
        let run = || {
            let wl = LayeredWorkload::with_even_layers(37, 4, 3, 4, 2).unwrap();
            let mut state = ModelState::zeros(37);
            for t in 1..=5 {
                let g0 = wl.assemble_dense(&wl.backward(&state, 0, t).unwrap()).unwrap();
                state = adam_step(&state, &g0, &cfg()).unwrap();
            }
            state.digest_hex()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn flat_round_trip() {
        let s = ModelState::new(vec![1.0, 2.0], vec![0.1, 0.2], vec![0.3, 0.4], 9).unwrap();
        let back = ModelState::from_flat(&s.to_flat(), 9).unwrap();
        assert_eq!(back, s);
    }
}
