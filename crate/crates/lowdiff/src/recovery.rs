//! State reconstruction from a full checkpoint plus a differential chain.
//!
//! Serial recovery loads the base, then decompresses and replays each stored
//! gradient through the same Adam code path the live run used, which makes
//! the result bit-identical to the live trajectory (for record-batched
//! chains). Parallel recovery fans the load/verify/decompress work across
//! threads and merges units pairwise in a balanced binary tree; with the
//! exact merge (ordered concatenation) the replayed result is bit-identical
//! to serial for any unit count and worker count.
//!
//! The accumulated merge variant sums gradients instead, then applies a
//! single Adam step per surviving merged unit. That collapses n steps of a
//! stateful optimizer into one, so it is kept strictly as an approximation
//! and never claimed exact.

use std::sync::Mutex;

use crate::compress::{accumulate, decompress, SparseGradient};
use crate::error::{Error, Result};
use crate::model::{adam_step, AdamConfig, ModelState};
use crate::store::{list_chain, read_checkpoint, RecordPayload, StorageBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryMode {
    Serial,
    ParallelExact,
    ParallelAccumulated,
}

/// Starting point of a recovery.
#[derive(Debug, Clone)]
pub enum RecoveryBase {
    /// A full checkpoint object in the store.
    FullRecord(String),
    /// A state known out of band, used before the first full checkpoint
    /// exists, when the run's deterministic initial state serves as base.
    State(ModelState),
}

/// One differential unit: the gradients of one diff or one batched record.
#[derive(Debug, Clone)]
pub struct DiffUnit {
    pub id: String,
    pub covered: (u64, u64),
}

#[derive(Debug, Clone)]
pub struct RecoveryPlan {
    pub base: RecoveryBase,
    /// Ordered by iteration, gap-free from the base.
    pub units: Vec<DiffUnit>,
    pub mode: RecoveryMode,
    /// Gradients beyond this iteration are not applied.
    pub target: u64,
}

impl RecoveryPlan {
    /// Build a plan from the store for recovery up to `target`. Requires a
    /// full checkpoint at or before the target.
    pub fn from_store(backend: &StorageBackend, target: u64, mode: RecoveryMode) -> Result<Self> {
        let chain = list_chain(backend, target)?;
        let units = chain
            .diffs
            .into_iter()
            .map(|l| DiffUnit { id: l.id, covered: l.covered })
            .collect();
        Ok(Self { base: RecoveryBase::FullRecord(chain.full_id), units, mode, target })
    }

    /// Like [`RecoveryPlan::from_store`], but when the store holds no full
    /// checkpoint at or before the target, fall back to the given initial
    /// state and a chain starting at iteration 1.
    pub fn from_store_or_initial(
        backend: &StorageBackend,
        target: u64,
        initial: ModelState,
        mode: RecoveryMode,
    ) -> Result<Self> {
        match Self::from_store(backend, target, mode) {
            Ok(plan) => Ok(plan),
            Err(Error::MissingFull(_)) => {
                let units: Vec<DiffUnit> = crate::store::ordered_diffs(backend, 0, target)?
                    .into_iter()
                    .map(|l| DiffUnit { id: l.id, covered: l.covered })
                    .collect();
                if units.is_empty() && target > 0 {
                    // an empty store is unrecoverable; the initial-state base
                    // only stands in before the first full checkpoint when a
                    // differential chain exists
                    return Err(Error::MissingFull(target));
                }
                Ok(Self { base: RecoveryBase::State(initial), units, mode, target })
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug)]
pub struct Recovered {
    pub state: ModelState,
    /// Iteration the returned state corresponds to.
    pub iteration: u64,
    /// Pairwise merge rounds performed (parallel modes; 0 for serial).
    pub merge_rounds: u32,
}

/// Merge rounds of a balanced pairwise tree over n units: ceil(log2 n) for
/// n > 1, zero merges on the differential side for a single unit.
pub fn merge_tree_depth(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        (n as u64).next_power_of_two().trailing_zeros()
    }
}

/// Merges that touch the base checkpoint on the critical path: the earliest
/// unit merges with the base while the rest pair up, then the folded
/// remainder merges in: two base merges for any n > 1, one for n = 1.
pub fn base_path_merges(n: usize) -> u32 {
    match n {
        0 => 0,
        1 => 1,
        _ => 2,
    }
}

fn load_base(base: &RecoveryBase, backend: &StorageBackend) -> Result<ModelState> {
    match base {
        RecoveryBase::State(state) => Ok(state.clone()),
        RecoveryBase::FullRecord(id) => match read_checkpoint(id, backend)?.payload {
            RecordPayload::Full(state) => Ok(state),
            _ => Err(Error::Format {
                path: id.clone(),
                reason: "recovery base is not a full checkpoint".into(),
            }),
        },
    }
}

fn load_unit(unit: &DiffUnit, backend: &StorageBackend) -> Result<Vec<SparseGradient>> {
    let rec = read_checkpoint(&unit.id, backend)?;
    match rec.payload {
        RecordPayload::Diff(sg) => Ok(vec![sg]),
        RecordPayload::Batched(grads) => Ok(grads),
        RecordPayload::Full(_) => Err(Error::Format {
            path: unit.id.clone(),
            reason: "differential unit is a full checkpoint".into(),
        }),
    }
}

/// Whether a unit holds one accumulated gradient standing in for a range.
fn is_accumulated(covered: (u64, u64), grads: &[SparseGradient]) -> bool {
    grads.len() as u64 != covered.1 - covered.0 + 1
}

/// Replay a unit's gradients onto the state: per-gradient Adam steps for
/// record-batched units, one step (with range bookkeeping) for accumulated
/// ones.
fn apply_unit(
    mut state: ModelState,
    covered: (u64, u64),
    grads: &[SparseGradient],
    adam: &AdamConfig,
    target: u64,
) -> Result<ModelState> {
    if is_accumulated(covered, grads) {
        debug_assert_eq!(grads.len(), 1);
        state = adam_step(&state, &decompress(&grads[0]), adam)?;
        state.step = covered.1.min(target);
        return Ok(state);
    }
    for sg in grads {
        if sg.iteration > target {
            break;
        }
        if sg.iteration <= state.step {
            // batch straddles the base checkpoint; this gradient is already
            // reflected in the state
            continue;
        }
        if sg.iteration != state.step + 1 {
            return Err(Error::ChainGap { expected: state.step + 1, found: sg.iteration });
        }
        state = adam_step(&state, &decompress(sg), adam)?;
    }
    Ok(state)
}

/// Load the base, then replay every stored gradient in iteration order.
pub fn recover_serial(
    plan: &RecoveryPlan,
    adam: &AdamConfig,
    backend: &StorageBackend,
) -> Result<Recovered> {
    let mut state = load_base(&plan.base, backend)?;
    for unit in &plan.units {
        if unit.covered.0 > plan.target {
            break;
        }
        let grads = load_unit(unit, backend)?;
        state = apply_unit(state, unit.covered, &grads, adam, plan.target)?;
    }
    Ok(Recovered { iteration: state.step, state, merge_rounds: 0 })
}

struct LoadedUnit {
    covered: (u64, u64),
    grads: Vec<SparseGradient>,
}

/// Fan out unit loading/verification/decompression across `workers` threads,
/// fold the units in a balanced pairwise tree, and apply the result to the
/// base. `ParallelExact` merges by ordered concatenation and matches serial
/// recovery bit for bit; `ParallelAccumulated` merges by gradient summation.
pub fn recover_parallel(
    plan: &RecoveryPlan,
    adam: &AdamConfig,
    backend: &StorageBackend,
    workers: usize,
) -> Result<Recovered> {
    if workers == 0 {
        return Err(Error::Domain("recovery needs at least one worker".into()));
    }
    let wanted: Vec<&DiffUnit> =
        plan.units.iter().take_while(|u| u.covered.0 <= plan.target).collect();

    // concurrent load phase; slot placement keeps the fold order fixed
    // regardless of completion order
    type LoadSlot = Mutex<Option<Result<LoadedUnit>>>;
    let slots: Vec<LoadSlot> = wanted.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for (chunk_units, chunk_slots) in wanted
            .chunks(wanted.len().div_ceil(workers).max(1))
            .zip(slots.chunks(wanted.len().div_ceil(workers).max(1)))
        {
            s.spawn(move || {
                for (unit, slot) in chunk_units.iter().zip(chunk_slots) {
                    let loaded = load_unit(unit, backend)
                        .map(|grads| LoadedUnit { covered: unit.covered, grads });
                    *slot.lock().unwrap() = Some(loaded);
                }
            });
        }
    });
    let mut units: Vec<LoadedUnit> = Vec::with_capacity(wanted.len());
    for slot in slots {
        units.push(slot.into_inner().unwrap().expect("load slot unfilled")?);
    }

    let mut state = load_base(&plan.base, backend)?;
    if units.is_empty() {
        return Ok(Recovered { iteration: state.step, state, merge_rounds: 0 });
    }

    match plan.mode {
        RecoveryMode::Serial | RecoveryMode::ParallelExact => {
            // pairwise tree: merge = ordered concatenation (associative and
            // exact), so the fold result is the serial gradient sequence
            let mut rounds = 0;
            while units.len() > 1 {
                units = merge_round(units, |mut a, b| {
                    a.grads.extend(b.grads);
                    a.covered = (a.covered.0, b.covered.1);
                    Ok(a)
                })?;
                rounds += 1;
            }
            let fused = units.pop().unwrap();
            state = apply_unit(state, fused.covered, &fused.grads, adam, plan.target)?;
            Ok(Recovered { iteration: state.step, state, merge_rounds: rounds })
        }
        RecoveryMode::ParallelAccumulated => {
            // collapse each unit to one summed gradient, then tree-fold the
            // sums; a single Adam step applies the survivor
            for unit in &mut units {
                let mut iter = unit.grads.drain(..);
                let mut acc = iter.next().expect("unit with no gradients");
                for sg in iter {
                    if sg.iteration > plan.target {
                        break;
                    }
                    acc = accumulate(&acc, &sg)?;
                }
                unit.grads = vec![acc];
            }
            let mut rounds = 0;
            while units.len() > 1 {
                units = merge_round(units, |a, b| {
                    Ok(LoadedUnit {
                        covered: (a.covered.0, b.covered.1),
                        grads: vec![accumulate(&a.grads[0], &b.grads[0])?],
                    })
                })?;
                rounds += 1;
            }
            let fused = units.pop().unwrap();
            state = adam_step(&state, &decompress(&fused.grads[0]), adam)?;
            state.step = fused.covered.1.min(plan.target);
            Ok(Recovered { iteration: state.step, state, merge_rounds: rounds })
        }
    }
}

/// One level of the balanced merge tree: adjacent pairs merge, a trailing odd
/// unit passes through.
fn merge_round(
    units: Vec<LoadedUnit>,
    merge: impl Fn(LoadedUnit, LoadedUnit) -> Result<LoadedUnit>,
) -> Result<Vec<LoadedUnit>> {
    let mut out = Vec::with_capacity(units.len().div_ceil(2));
    let mut iter = units.into_iter();
    while let Some(a) = iter.next() {
        match iter.next() {
            Some(b) => out.push(merge(a, b)?),
            None => out.push(a),
        }
    }
    Ok(out)
}

/// Recovery for state-delta chains (the direct differential baseline): add
/// each decompressed delta onto the flattened base state. Lossy whenever the
/// deltas were compressed with ratio < 1.
pub fn recover_naive_dc(backend: &StorageBackend, target: u64) -> Result<Recovered> {
    let chain = list_chain(backend, target)?;
    let base = match read_checkpoint(&chain.full_id, backend)?.payload {
        RecordPayload::Full(state) => state,
        _ => {
            return Err(Error::Format {
                path: chain.full_id.clone(),
                reason: "chain base is not a full checkpoint".into(),
            })
        }
    };
    let mut flat = base.to_flat();
    let mut iteration = base.step;
    for link in &chain.diffs {
        if link.covered.0 > target {
            break;
        }
        for sg in read_checkpoint(&link.id, backend)?.gradients().unwrap_or(&[]) {
            if sg.iteration > target {
                break;
            }
            if sg.dense_len != flat.len() {
                return Err(Error::Dimension { expected: flat.len(), got: sg.dense_len });
            }
            for (&i, &v) in sg.indices.iter().zip(&sg.values) {
                flat[i as usize] += v;
            }
            iteration = sg.iteration;
        }
    }
    let state = ModelState::from_flat(&flat, iteration)?;
    Ok(Recovered { state, iteration, merge_rounds: 0 })
}
