//! Parallel recovery fans checkpoint loading and decompression across
//! workers and merges units in a balanced binary tree, so the merge path
//! shrinks from n to ceil(log2 n) rounds while the result stays bit-equal to
//! serial recovery.
//!
//! Run with: cargo run --release --example parallel_recovery

use std::time::Instant;

use lowdiff::model::{AdamConfig, LayeredWorkload, ModelState};
use lowdiff::pipeline::{run_pipeline, PipelineConfig};
use lowdiff::recovery::{
    base_path_merges, merge_tree_depth, recover_parallel, recover_serial, RecoveryMode,
    RecoveryPlan,
};
use lowdiff::store::StorageBackend;

fn main() -> lowdiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = StorageBackend::new(dir.path())?;
    let workload = LayeredWorkload::with_even_layers(20_000, 8, 41, 42, 4)?;
    let cfg = PipelineConfig {
        total_iterations: 64,
        // longer than the run: the chain is 64 bare differentials
        full_interval: 100,
        batch_size: 1,
        ratio: 0.02,
        ..PipelineConfig::default()
    };
    let adam = AdamConfig::default();
    let summary = run_pipeline(&workload, &cfg, &adam, &store)?;
    println!(
        "chain: {} per-iteration differentials, no full checkpoint yet\n",
        summary.chain.diff_writes
    );

    let initial = ModelState::zeros(workload.psi());
    let start = Instant::now();
    let serial = recover_serial(
        &RecoveryPlan::from_store_or_initial(&store, 64, initial.clone(), RecoveryMode::Serial)?,
        &adam,
        &store,
    )?;
    let serial_time = start.elapsed();
    println!("serial:          {serial_time:>10.2?}   (n = 64 sequential unit merges)");

    for workers in [2, 4, 8] {
        let plan = RecoveryPlan::from_store_or_initial(
            &store,
            64,
            initial.clone(),
            RecoveryMode::ParallelExact,
        )?;
        let start = Instant::now();
        let parallel = recover_parallel(&plan, &adam, &store, workers)?;
        let elapsed = start.elapsed();
        assert_eq!(parallel.state, serial.state);
        println!(
            "parallel x{workers}:     {elapsed:>10.2?}   ({} tree rounds, bit-equal to serial)",
            parallel.merge_rounds
        );
    }

    println!();
    for n in [1usize, 5, 16, 64] {
        println!(
            "n = {n:2}: merge-tree depth {} , merges touching the base {}",
            merge_tree_depth(n),
            base_path_merges(n)
        );
    }
    Ok(())
}
