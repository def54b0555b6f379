//! The no-compression variant: layer-wise gradient streaming into a
//! host-memory model replica.
//!
//! Training emits each layer's synchronized gradient the moment it is
//! produced (reverse layer order, as backpropagation yields them). A pool of
//! snapshot workers drains the queue into per-iteration staging buffers; when
//! an iteration's pieces are complete and it is next in order, the replica
//! applies the assembled gradient through the same Adam code path training
//! uses, so after draining iteration t, the replica state bit-equals the
//! training state at t. The replica is itself an in-memory checkpoint:
//! software failures restore from it with zero storage reads, while a
//! persister thread writes full snapshots of it to storage on a cadence for
//! hardware failures.
//!
//! There are no differential records in this mode; persisted objects are
//! ordinary full checkpoints in the shared format.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::{mpsc, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{adam_step, AdamConfig, LayerGradient, LayeredWorkload, ModelState};
use crate::pipeline::{PipelineProgress, TrainOutput};
use crate::queue::ReuseQueue;
use crate::recovery::Recovered;
use crate::store::{latest_full, read_checkpoint, write_checkpoint, CheckpointRecord,
    RecordPayload, StorageBackend};

/// Host-memory mirror of the training-side model state.
#[derive(Debug, Clone)]
pub struct CpuReplica {
    pub state: ModelState,
    pub last_applied: u64,
    /// Cleared if the updater hit an assembly error; software recovery then
    /// falls back to storage.
    pub intact: bool,
}

impl CpuReplica {
    /// Deep copy of the initial training state, optimizer moments included.
    pub fn new(initial: ModelState) -> Self {
        let last_applied = initial.step;
        Self { state: initial, last_applied, intact: true }
    }
}

/// When to persist the replica to storage.
#[derive(Debug, Clone, Copy)]
pub enum PersistPolicy {
    /// Every k drained iterations.
    EveryK(u64),
    /// Measure the first persist and pick the smallest interval whose
    /// duration it fits: interval = ceil(persist_seconds / iter_seconds).
    Adaptive { iter_seconds: f64 },
}

#[derive(Debug, Clone)]
pub struct PlusConfig {
    pub total_iterations: u64,
    pub queue_capacity: usize,
    /// Snapshot worker threads draining the queue.
    pub pool_width: usize,
    /// `None` keeps the replica memory-only.
    pub persist: Option<PersistPolicy>,
}

impl Default for PlusConfig {
    fn default() -> Self {
        Self { total_iterations: 100, queue_capacity: 64, pool_width: 2, persist: None }
    }
}

impl PlusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(Error::Domain("total_iterations must be at least 1".into()));
        }
        if self.queue_capacity == 0 || self.pool_width == 0 {
            return Err(Error::Domain("queue capacity and pool width must be positive".into()));
        }
        if let Some(PersistPolicy::EveryK(0)) = self.persist {
            return Err(Error::Domain("persist interval must be at least 1".into()));
        }
        if let Some(PersistPolicy::Adaptive { iter_seconds }) = self.persist {
            if !(iter_seconds > 0.0) {
                return Err(Error::Domain("iter_seconds must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Training side: per iteration and per layer in reverse order, synchronize
/// the layer gradient across workers and enqueue it immediately; the update
/// waits for all layers and applies the assembled full gradient.
pub fn run_training_plus(
    workload: &LayeredWorkload,
    adam: &AdamConfig,
    queue: &ReuseQueue<LayerGradient>,
    total_iterations: u64,
    progress: &PipelineProgress,
) -> Result<TrainOutput> {
    adam.validate()?;
    let psi = workload.psi();
    let layers = workload.num_layers();
    let workers = workload.num_workers();
    let mut state = ModelState::zeros(psi);
    let mut digests = Vec::with_capacity(total_iterations as usize);
    let mut dense = vec![0.0; psi];

    for t in 1..=total_iterations {
        let per_worker: Vec<Vec<LayerGradient>> = (0..workers)
            .map(|w| workload.backward(&state, w, t))
            .collect::<Result<_>>()?;
        for pos in 0..layers {
            let layer_index = per_worker[0][pos].layer_index;
            let size = per_worker[0][pos].values.len();
            let mut values = vec![0.0; size];
            for worker_grads in &per_worker {
                for (v, g) in values.iter_mut().zip(&worker_grads[pos].values) {
                    *v += g;
                }
            }
            for v in &mut values {
                *v /= workers as f64;
            }
            let off = workload.layer_offset(layer_index);
            dense[off..off + size].copy_from_slice(&values);
            queue.enqueue(LayerGradient { layer_index, values, iteration: t })?;
            progress.enqueued.fetch_add(1, Ordering::SeqCst);
        }
        state = adam_step(&state, &dense, adam)?;
        digests.push(state.digest());
        progress.iterations_done.store(t, Ordering::SeqCst);
    }
    queue.close();
    Ok(TrainOutput {
        final_state: state,
        digests,
        full_ids: Vec::new(),
        fulls_written: 0,
        bytes_written: 0,
    })
}

#[derive(Debug)]
pub struct ReplicaOutput {
    pub replica: CpuReplica,
    /// Digest of the replica after each drained iteration.
    pub digests: Vec<[u8; 32]>,
    pub persisted: Vec<(String, u64)>,
    /// Pieces left in staging at shutdown (iterations that never completed).
    pub leftover_pieces: usize,
    pub bytes_written: u64,
}

struct Staging {
    pieces: Vec<Option<Vec<f64>>>,
    filled: usize,
}

struct ReplicaInner {
    staging: BTreeMap<u64, Staging>,
    replica: CpuReplica,
    digests: Vec<[u8; 32]>,
    error: Option<Error>,
    next_persist_due: Option<u64>,
    /// Interval settled by the adaptive policy's first measured persist.
    adaptive_interval: Option<u64>,
    /// The adaptive policy's measurement write happens inline; it is
    /// reported alongside the async ones.
    persisted_inline: Vec<(String, u64)>,
    bytes_inline: u64,
}

struct IngestCtx<'a> {
    layers: usize,
    layer_sizes: &'a [usize],
    adam: &'a AdamConfig,
    persist: &'a Option<PersistPolicy>,
    persist_tx: &'a mpsc::Sender<ModelState>,
    backend: &'a StorageBackend,
}

/// The checkpointing side: drain layer gradients with `pool_width` workers,
/// barrier them per iteration, update the replica in iteration order, and
/// hand immutable snapshots to the persister thread on the policy cadence.
pub fn run_replica(
    workload: &LayeredWorkload,
    queue: &ReuseQueue<LayerGradient>,
    cfg: &PlusConfig,
    initial: ModelState,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<ReplicaOutput> {
    cfg.validate()?;
    adam.validate()?;
    let layers = workload.num_layers();
    let layer_sizes = workload.layer_sizes().to_vec();
    let first_iteration = initial.step + 1;

    let inner = Mutex::new(ReplicaInner {
        staging: BTreeMap::new(),
        replica: CpuReplica::new(initial),
        digests: Vec::new(),
        error: None,
        next_persist_due: match cfg.persist {
            Some(PersistPolicy::EveryK(k)) => Some(first_iteration - 1 + k),
            // adaptive measures at the first opportunity
            Some(PersistPolicy::Adaptive { .. }) => Some(first_iteration),
            None => None,
        },
        adaptive_interval: None,
        persisted_inline: Vec::new(),
        bytes_inline: 0,
    });
    let (persist_tx, persist_rx) = mpsc::channel::<ModelState>();

    let persister = {
        let backend = backend.clone();
        std::thread::spawn(move || -> Result<(Vec<(String, u64)>, u64)> {
            let mut persisted = Vec::new();
            let mut bytes = 0u64;
            while let Ok(snapshot) = persist_rx.recv() {
                let iteration = snapshot.step;
                let (id, n) = write_checkpoint(&CheckpointRecord::full(snapshot), &backend)?;
                persisted.push((id, iteration));
                bytes += n;
            }
            Ok((persisted, bytes))
        })
    };

    let ctx = IngestCtx {
        layers,
        layer_sizes: &layer_sizes,
        adam,
        persist: &cfg.persist,
        persist_tx: &persist_tx,
        backend,
    };
    std::thread::scope(|s| {
        for _ in 0..cfg.pool_width {
            s.spawn(|| {
                while let Some(piece) = queue.dequeue() {
                    let mut guard = inner.lock().unwrap();
                    if guard.error.is_some() {
                        return;
                    }
                    if let Err(e) = ingest_piece(&mut guard, piece, &ctx) {
                        guard.replica.intact = false;
                        guard.error = Some(e);
                        queue.close();
                        return;
                    }
                }
            });
        }
    });
    drop(persist_tx);
    let (mut persisted, bytes_async) = persister.join().expect("persister panicked")?;

    let inner = inner.into_inner().unwrap();
    if let Some(e) = inner.error {
        return Err(e);
    }
    persisted.extend(inner.persisted_inline);
    persisted.sort_by_key(|(_, it)| *it);
    let leftover_pieces = inner.staging.values().map(|s| s.filled).sum();
    Ok(ReplicaOutput {
        replica: inner.replica,
        digests: inner.digests,
        persisted,
        leftover_pieces,
        bytes_written: bytes_async + inner.bytes_inline,
    })
}

/// Stage one layer piece; when the next-in-order iteration completes, apply
/// it (and any staged successors) to the replica.
fn ingest_piece(inner: &mut ReplicaInner, piece: LayerGradient, ctx: &IngestCtx) -> Result<()> {
    let (layers, layer_sizes) = (ctx.layers, ctx.layer_sizes);
    if piece.layer_index >= layers {
        return Err(Error::Assembly(format!("layer index {} out of range", piece.layer_index)));
    }
    if piece.values.len() != layer_sizes[piece.layer_index] {
        return Err(Error::Assembly(format!(
            "layer {} piece has {} values, expected {}",
            piece.layer_index,
            piece.values.len(),
            layer_sizes[piece.layer_index]
        )));
    }
    if piece.iteration <= inner.replica.last_applied {
        return Err(Error::Assembly(format!(
            "piece for already-applied iteration {}",
            piece.iteration
        )));
    }
    let slot = inner
        .staging
        .entry(piece.iteration)
        .or_insert_with(|| Staging { pieces: vec![None; layers], filled: 0 });
    if slot.pieces[piece.layer_index].is_some() {
        return Err(Error::Assembly(format!(
            "duplicate piece for layer {} of iteration {}",
            piece.layer_index, piece.iteration
        )));
    }
    slot.pieces[piece.layer_index] = Some(piece.values);
    slot.filled += 1;

    // apply all contiguous complete iterations starting right after the
    // replica's current position
    loop {
        let next = inner.replica.last_applied + 1;
        let ready = inner.staging.get(&next).is_some_and(|s| s.filled == layers);
        if !ready {
            break;
        }
        let slot = inner.staging.remove(&next).unwrap();
        let mut dense = Vec::with_capacity(layer_sizes.iter().sum());
        for piece in slot.pieces {
            dense.extend(piece.unwrap());
        }
        inner.replica.state = adam_step(&inner.replica.state, &dense, ctx.adam)?;
        inner.replica.last_applied = next;
        inner.digests.push(inner.replica.state.digest());

        if let Some(due) = inner.next_persist_due {
            if next >= due {
                match (ctx.persist, inner.adaptive_interval) {
                    (Some(PersistPolicy::EveryK(k)), _) => {
                        inner.send_snapshot(ctx)?;
                        inner.next_persist_due = Some(due + k);
                    }
                    (Some(PersistPolicy::Adaptive { iter_seconds }), None) => {
                        // first persist runs inline to measure the device,
                        // then the cadence is fixed to cover that duration
                        let start = Instant::now();
                        let (id, bytes) = write_checkpoint(
                            &CheckpointRecord::full(inner.replica.state.clone()),
                            ctx.backend,
                        )?;
                        inner.persisted_inline.push((id, next));
                        inner.bytes_inline += bytes;
                        let k = (start.elapsed().as_secs_f64() / iter_seconds).ceil().max(1.0)
                            as u64;
                        inner.adaptive_interval = Some(k);
                        inner.next_persist_due = Some(next + k);
                    }
                    (Some(PersistPolicy::Adaptive { .. }), Some(k)) => {
                        inner.send_snapshot(ctx)?;
                        inner.next_persist_due = Some(due + k);
                    }
                    (None, _) => unreachable!("persist due set without a policy"),
                }
            }
        }
    }
    Ok(())
}

impl ReplicaInner {
    fn send_snapshot(&self, ctx: &IngestCtx) -> Result<()> {
        ctx.persist_tx
            .send(self.replica.state.clone())
            .map_err(|_| Error::Pipeline("persister gone".into()))
    }
}

/// Restore from the in-memory replica: no storage reads, the lost work is
/// whatever the queue had not yet drained.
pub fn recover_software(replica: &CpuReplica) -> Result<Recovered> {
    if !replica.intact {
        return Err(Error::Pipeline(
            "replica not intact; fall back to hardware recovery".into(),
        ));
    }
    Ok(Recovered {
        state: replica.state.clone(),
        iteration: replica.last_applied,
        merge_rounds: 0,
    })
}

/// Restore from the newest persisted replica snapshot.
pub fn recover_hardware(backend: &StorageBackend) -> Result<Recovered> {
    let (id, iteration) = latest_full(backend)?;
    match read_checkpoint(&id, backend)?.payload {
        RecordPayload::Full(state) => Ok(Recovered { state, iteration, merge_rounds: 0 }),
        _ => Err(Error::Format { path: id, reason: "expected a full checkpoint".into() }),
    }
}

#[derive(Debug)]
pub struct PlusRunSummary {
    pub train: TrainOutput,
    pub replica: ReplicaOutput,
}

/// Run the training producer and replica consumer to completion.
pub fn run_plus_pipeline(
    workload: &LayeredWorkload,
    cfg: &PlusConfig,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<PlusRunSummary> {
    cfg.validate()?;
    let queue = ReuseQueue::new(cfg.queue_capacity);
    let progress = PipelineProgress::default();
    let initial = ModelState::zeros(workload.psi());
    let (train_res, replica_res) = std::thread::scope(|s| {
        let consumer = s.spawn(|| run_replica(workload, &queue, cfg, initial, adam, backend));
        let train_res =
            run_training_plus(workload, adam, &queue, cfg.total_iterations, &progress);
        if train_res.is_err() {
            queue.close();
        }
        (train_res, consumer.join().expect("replica thread panicked"))
    });
    Ok(PlusRunSummary { train: train_res?, replica: replica_res? })
}
