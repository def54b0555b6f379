//! The no-compression mode: layer gradients stream into a host-memory
//! replica that mirrors the training state bit for bit, persists itself
//! asynchronously, and absorbs software failures with zero storage reads.
//!
//! Run with: cargo run --release --example replica_pipeline

use lowdiff::model::{AdamConfig, LayeredWorkload};
use lowdiff::replica::{
    recover_hardware, recover_software, run_plus_pipeline, PersistPolicy, PlusConfig,
};
use lowdiff::store::StorageBackend;

fn main() -> lowdiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = StorageBackend::new(dir.path())?;
    let workload = LayeredWorkload::with_even_layers(4_096, 8, 51, 52, 4)?;
    let cfg = PlusConfig {
        total_iterations: 200,
        queue_capacity: 64,
        pool_width: 3,
        persist: Some(PersistPolicy::EveryK(25)),
    };

    let summary = run_plus_pipeline(&workload, &cfg, &AdamConfig::default(), &store)?;
    println!(
        "trained {} iterations; replica drained to {}",
        cfg.total_iterations, summary.replica.replica.last_applied
    );
    let in_sync = summary.replica.digests == summary.train.digests;
    println!(
        "replica digests {} training digests at every iteration",
        if in_sync { "match" } else { "DIVERGE from" }
    );
    assert!(in_sync);
    println!(
        "persisted {} full snapshots asynchronously ({} bytes)",
        summary.replica.persisted.len(),
        summary.replica.bytes_written
    );

    // software failure: the checkpointing process survives, restore from memory
    let soft = recover_software(&summary.replica.replica)?;
    println!(
        "software recovery: iteration {} straight from the replica, no storage reads",
        soft.iteration
    );

    // hardware failure: the machine is gone, reload the newest snapshot
    let hard = recover_hardware(&store)?;
    println!(
        "hardware recovery: iteration {} from the newest persisted snapshot",
        hard.iteration
    );
    assert_eq!(hard.state.digest(), summary.train.digests[hard.iteration as usize - 1]);
    Ok(())
}
