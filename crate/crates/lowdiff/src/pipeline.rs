//! Training producer and checkpointing consumer.
//!
//! The training loop compresses and synchronizes gradients, hands each
//! synchronized gradient to the checkpointing thread through the bounded
//! [`ReuseQueue`], decompresses the same gradient for its own Adam update,
//! and writes a full checkpoint every `full_interval` iterations. The
//! checkpointer never reads model state: the queue is the only object the
//! two threads share, so checkpointing cannot stall an update for anything
//! except queue capacity.
//!
//! The consumer buffers dequeued gradients in host memory and flushes every
//! `batch_size` of them as one write: either a record-batched object keeping
//! the per-iteration gradients verbatim (recovery replays each Adam step and
//! is bit-exact) or a single accumulated gradient (one write, one replayed
//! step per batch; smaller but approximate on recovery).

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::compress::{accumulate, compress, decompress, CompressorKind, SparseGradient};
use crate::error::{Error, Result};
use crate::model::{adam_step, sync_gradients, AdamConfig, LayeredWorkload, ModelState};
use crate::queue::{QueueStats, ReuseQueue};
use crate::store::{write_checkpoint, CheckpointRecord, StorageBackend};

/// How the consumer turns `batch_size` buffered gradients into one write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// One batched record holding the gradients verbatim.
    RecordBatched,
    /// One batched record holding their accumulated sum.
    Accumulated,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub total_iterations: u64,
    /// Iterations between full checkpoints.
    pub full_interval: u64,
    /// Differentials merged into one write.
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub queue_capacity: usize,
    /// Sparsification ratio for the synchronized gradients.
    pub ratio: f64,
    pub compressor: CompressorKind,
    /// Write full checkpoints from a helper thread instead of stalling the
    /// training loop.
    pub async_full: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            total_iterations: 100,
            full_interval: 50,
            batch_size: 4,
            batch_mode: BatchMode::RecordBatched,
            queue_capacity: 16,
            ratio: 0.01,
            compressor: CompressorKind::TopK,
            async_full: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(Error::Domain("total_iterations must be at least 1".into()));
        }
        if self.full_interval == 0 {
            return Err(Error::Domain("full_interval must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1".into()));
        }
        if self.batch_size as u64 > self.full_interval {
            return Err(Error::Domain(format!(
                "batch_size {} exceeds full_interval {}",
                self.batch_size, self.full_interval
            )));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Domain("queue_capacity must be at least 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Domain(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        Ok(())
    }
}

/// Live counters the producer updates as it goes; lets tests observe where
/// training stands while it is blocked on the queue.
#[derive(Debug, Default)]
pub struct PipelineProgress {
    pub iterations_done: AtomicU64,
    pub enqueued: AtomicU64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub final_state: ModelState,
    /// Digest of the post-update state of iteration t at index t-1.
    pub digests: Vec<[u8; 32]>,
    pub full_ids: Vec<String>,
    pub fulls_written: u64,
    pub bytes_written: u64,
}

/// Per-worker compress + synchronize for one iteration.
fn synced_gradient(
    workload: &LayeredWorkload,
    state: &ModelState,
    cfg: &PipelineConfig,
    iteration: u64,
) -> Result<SparseGradient> {
    let per_worker: Vec<SparseGradient> = (0..workload.num_workers())
        .map(|w| {
            let layers = workload.backward(state, w, iteration)?;
            let dense = workload.assemble_dense(&layers)?;
            compress(&dense, cfg.ratio, &cfg.compressor, iteration)
        })
        .collect::<Result<_>>()?;
    sync_gradients(&per_worker)
}

/// The training process. Enqueues every synchronized gradient (blocking only
/// when the queue is full), applies the decompressed copy of that same
/// gradient, and snapshots a full checkpoint of the post-update state every
/// `full_interval` iterations. Closes the queue when the run completes.
pub fn run_training(
    workload: &LayeredWorkload,
    cfg: &PipelineConfig,
    adam: &AdamConfig,
    queue: &ReuseQueue<SparseGradient>,
    backend: &StorageBackend,
    progress: &PipelineProgress,
) -> Result<TrainOutput> {
    cfg.validate()?;
    adam.validate()?;
    let mut state = ModelState::zeros(workload.psi());
    let mut digests = Vec::with_capacity(cfg.total_iterations as usize);
    let mut full_ids = Vec::new();
    let mut bytes_written = 0u64;
    let mut async_writes: Vec<std::thread::JoinHandle<Result<(String, u64)>>> = Vec::new();

    for t in 1..=cfg.total_iterations {
        let synced = synced_gradient(workload, &state, cfg, t)?;
        let dense = decompress(&synced);
        queue.enqueue(synced)?;
        progress.enqueued.fetch_add(1, Ordering::SeqCst);
        state = adam_step(&state, &dense, adam)?;
        digests.push(state.digest());
        progress.iterations_done.store(t, Ordering::SeqCst);

        if t % cfg.full_interval == 0 {
            let rec = CheckpointRecord::full(state.clone());
            if cfg.async_full {
                let backend = backend.clone();
                async_writes.push(std::thread::spawn(move || write_checkpoint(&rec, &backend)));
            } else {
                let (id, bytes) = write_checkpoint(&rec, backend)?;
                full_ids.push(id);
                bytes_written += bytes;
            }
        }
    }
    for handle in async_writes {
        let (id, bytes) = handle.join().expect("full-checkpoint writer panicked")?;
        full_ids.push(id);
        bytes_written += bytes;
    }
    queue.close();
    Ok(TrainOutput {
        fulls_written: full_ids.len() as u64,
        final_state: state,
        digests,
        full_ids,
        bytes_written,
    })
}

#[derive(Debug, Default)]
pub struct ChainSummary {
    /// Written differential objects with their covered ranges, in order.
    pub diff_ids: Vec<(String, (u64, u64))>,
    /// Individual gradients persisted (not records).
    pub gradients_persisted: u64,
    /// Differential write operations issued.
    pub diff_writes: u64,
    pub bytes_written: u64,
}

/// The checkpointing process: drain the queue, buffer in host memory, flush
/// every `batch_size` gradients as one write, and flush the final partial
/// batch at shutdown so tail iterations stay recoverable.
pub fn run_checkpointer(
    queue: &ReuseQueue<SparseGradient>,
    cfg: &PipelineConfig,
    backend: &StorageBackend,
) -> Result<ChainSummary> {
    cfg.validate()?;
    let mut summary = ChainSummary::default();
    let mut buffer: Vec<SparseGradient> = Vec::with_capacity(cfg.batch_size);

    let flush = |buffer: &mut Vec<SparseGradient>, summary: &mut ChainSummary| -> Result<()> {
        if buffer.is_empty() {
            return Ok(());
        }
        let count = buffer.len() as u64;
        let rec = if cfg.batch_size == 1 {
            CheckpointRecord::diff(buffer.pop().unwrap())
        } else {
            match cfg.batch_mode {
                BatchMode::RecordBatched => CheckpointRecord::batched(std::mem::take(buffer))?,
                BatchMode::Accumulated => {
                    let covered =
                        (buffer.first().unwrap().iteration, buffer.last().unwrap().iteration);
                    let mut iter = buffer.drain(..);
                    let mut acc = iter.next().unwrap();
                    for sg in iter {
                        acc = accumulate(&acc, &sg)?;
                    }
                    CheckpointRecord::batched_accumulated(acc, covered)
                }
            }
        };
        let covered = rec.covered;
        let (id, bytes) = write_checkpoint(&rec, backend)?;
        summary.diff_ids.push((id, covered));
        summary.gradients_persisted += count;
        summary.diff_writes += 1;
        summary.bytes_written += bytes;
        Ok(())
    };

    while let Some(grad) = queue.dequeue() {
        buffer.push(grad);
        if buffer.len() == cfg.batch_size {
            flush(&mut buffer, &mut summary)?;
        }
    }
    flush(&mut buffer, &mut summary)?;
    Ok(summary)
}

/// Expected number of storage writes for a run: one per flushed batch plus
/// one per full checkpoint.
pub fn predicted_io_ops(n_diffs: u64, batch_size: u64, n_fulls: u64) -> u64 {
    n_diffs.div_ceil(batch_size) + n_fulls
}

#[derive(Debug)]
pub struct RunSummary {
    pub train: TrainOutput,
    pub chain: ChainSummary,
    pub queue_stats: QueueStats,
    pub train_wall: Duration,
    pub checkpoint_wall: Duration,
}

impl RunSummary {
    pub fn io_ops(&self) -> u64 {
        self.chain.diff_writes + self.train.fulls_written
    }

    /// Deterministic run manifest, one `key=value` per line. Scheduling- and
    /// wall-clock-dependent diagnostics (phase timings, queue residency
    /// high-water marks) are reported separately (see
    /// [`RunSummary::timings`]) so the manifest is byte-stable across reruns
    /// of the same config and seed.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("iterations", self.train.digests.len().to_string()),
            ("fulls_written", self.train.fulls_written.to_string()),
            ("diffs_written", self.chain.gradients_persisted.to_string()),
            ("diff_records", self.chain.diff_writes.to_string()),
            ("io_ops", self.io_ops().to_string()),
            ("bytes_written", (self.train.bytes_written + self.chain.bytes_written).to_string()),
            ("final_digest", hex::encode(self.train.final_state.digest())),
        ] {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Per-phase wall clock and queue-residency diagnostics; not part of the
    /// manifest because they depend on scheduling and vary run to run.
    pub fn timings(&self) -> String {
        format!(
            "train_wall_s={:.6}\ncheckpoint_wall_s={:.6}\nmax_queue_residency={}\nmax_queue_resident_bytes={}\n",
            self.train_wall.as_secs_f64(),
            self.checkpoint_wall.as_secs_f64(),
            self.queue_stats.max_resident,
            self.queue_stats.max_resident_bytes,
        )
    }
}

/// Run producer and consumer to completion on a fresh queue.
pub fn run_pipeline(
    workload: &LayeredWorkload,
    cfg: &PipelineConfig,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<RunSummary> {
    cfg.validate()?;
    let queue = ReuseQueue::new(cfg.queue_capacity);
    let progress = PipelineProgress::default();
    let (train_res, chain_res, train_wall, checkpoint_wall) = std::thread::scope(|s| {
        let consumer = s.spawn(|| {
            let start = Instant::now();
            let res = run_checkpointer(&queue, cfg, backend);
            if res.is_err() {
                // unblock the producer; its enqueue will fail cleanly
                queue.close();
            }
            (res, start.elapsed())
        });
        let start = Instant::now();
        let train_res = run_training(workload, cfg, adam, &queue, backend, &progress);
        let train_wall = start.elapsed();
        if train_res.is_err() {
            queue.close();
        }
        let (chain_res, checkpoint_wall) = consumer.join().expect("checkpointer panicked");
        (train_res, chain_res, train_wall, checkpoint_wall)
    });
    let chain = chain_res?;
    let train = train_res?;
    Ok(RunSummary { train, chain, queue_stats: queue.stats(), train_wall, checkpoint_wall })
}

/// Reference trajectory with identical training math but no queue and no
/// checkpoint writes. The pipeline must match this bit for bit.
pub fn run_reference(
    workload: &LayeredWorkload,
    cfg: &PipelineConfig,
    adam: &AdamConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    adam.validate()?;
    let mut state = ModelState::zeros(workload.psi());
    let mut digests = Vec::with_capacity(cfg.total_iterations as usize);
    for t in 1..=cfg.total_iterations {
        let synced = synced_gradient(workload, &state, cfg, t)?;
        let dense = decompress(&synced);
        state = adam_step(&state, &dense, adam)?;
        digests.push(state.digest());
    }
    Ok(TrainOutput {
        final_state: state,
        digests,
        full_ids: Vec::new(),
        fulls_written: 0,
        bytes_written: 0,
    })
}

/// Mean of the uncompressed per-worker gradients, the update used by the
/// baseline strategies.
fn mean_dense_gradient(
    workload: &LayeredWorkload,
    state: &ModelState,
    iteration: u64,
) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; workload.psi()];
    for w in 0..workload.num_workers() {
        let layers = workload.backward(state, w, iteration)?;
        let dense = workload.assemble_dense(&layers)?;
        for (m, g) in mean.iter_mut().zip(&dense) {
            *m += g;
        }
    }
    let n = workload.num_workers() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

#[derive(Debug)]
pub struct BaselineOutput {
    pub final_state: ModelState,
    pub digests: Vec<[u8; 32]>,
    pub fulls_written: u64,
    pub diff_writes: u64,
    pub bytes_written: u64,
}

/// Full-checkpoint-only baseline: uncompressed training, a full snapshot
/// every `full_interval` iterations, nothing else persisted.
pub fn run_full_only(
    workload: &LayeredWorkload,
    total_iterations: u64,
    full_interval: u64,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<BaselineOutput> {
    adam.validate()?;
    let mut state = ModelState::zeros(workload.psi());
    let mut out = BaselineOutput {
        final_state: ModelState::zeros(workload.psi()),
        digests: Vec::new(),
        fulls_written: 0,
        diff_writes: 0,
        bytes_written: 0,
    };
    for t in 1..=total_iterations {
        let grad = mean_dense_gradient(workload, &state, t)?;
        state = adam_step(&state, &grad, adam)?;
        out.digests.push(state.digest());
        if t % full_interval == 0 {
            let (_, bytes) = write_checkpoint(&CheckpointRecord::full(state.clone()), backend)?;
            out.fulls_written += 1;
            out.bytes_written += bytes;
        }
    }
    out.final_state = state;
    Ok(out)
}

/// Differential checkpointing the direct way: after each update, take the
/// state delta over the whole 3Ψ flat state, top-k compress it, and persist
/// that. Recovery adds the decompressed deltas back (lossy for ratio < 1).
pub fn run_naive_dc(
    workload: &LayeredWorkload,
    total_iterations: u64,
    full_interval: u64,
    ratio: f64,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<BaselineOutput> {
    adam.validate()?;
    let mut state = ModelState::zeros(workload.psi());
    let mut out = BaselineOutput {
        final_state: ModelState::zeros(workload.psi()),
        digests: Vec::new(),
        fulls_written: 0,
        diff_writes: 0,
        bytes_written: 0,
    };
    let mut prev_flat = state.to_flat();
    for t in 1..=total_iterations {
        let grad = mean_dense_gradient(workload, &state, t)?;
        state = adam_step(&state, &grad, adam)?;
        out.digests.push(state.digest());

        let flat = state.to_flat();
        let delta: Vec<f64> = flat.iter().zip(&prev_flat).map(|(a, b)| a - b).collect();
        prev_flat = flat;
        let sg = compress(&delta, ratio, &CompressorKind::TopK, t)?;
        let (_, bytes) = write_checkpoint(&CheckpointRecord::diff(sg), backend)?;
        out.diff_writes += 1;
        out.bytes_written += bytes;

        if t % full_interval == 0 {
            let (_, bytes) = write_checkpoint(&CheckpointRecord::full(state.clone()), backend)?;
            out.fulls_written += 1;
            out.bytes_written += bytes;
        }
    }
    out.final_state = state;
    Ok(out)
}
