//! Batched differential writes: the checkpointer buffers gradients in host
//! memory and flushes several per storage write. This sweeps the batching
//! size and compares write counts and bytes, plus the two batch payload
//! modes.
//!
//! Run with: cargo run --release --example batched_writes

use lowdiff::model::{AdamConfig, LayeredWorkload};
use lowdiff::pipeline::{predicted_io_ops, run_pipeline, BatchMode, PipelineConfig};
use lowdiff::store::StorageBackend;

fn main() -> lowdiff::Result<()> {
    let workload = LayeredWorkload::with_even_layers(2_000, 4, 31, 32, 4)?;
    let adam = AdamConfig::default();
    let iterations = 100u64;

    println!("{:>6} {:>12} {:>10} {:>12}", "batch", "diff writes", "io ops", "diff bytes");
    for batch_size in [1usize, 4, 10, 20, 50] {
        let dir = tempfile::tempdir().expect("tempdir");
        let store = StorageBackend::new(dir.path())?;
        let cfg = PipelineConfig {
            total_iterations: iterations,
            full_interval: 50,
            batch_size,
            ratio: 0.01,
            ..PipelineConfig::default()
        };
        let summary = run_pipeline(&workload, &cfg, &adam, &store)?;
        assert_eq!(
            summary.io_ops(),
            predicted_io_ops(iterations, batch_size as u64, summary.train.fulls_written)
        );
        println!(
            "{:>6} {:>12} {:>10} {:>12}",
            batch_size,
            summary.chain.diff_writes,
            summary.io_ops(),
            summary.chain.bytes_written
        );
    }

    // record-batched keeps every gradient for exact replay; accumulated
    // merges them into one smaller payload per batch
    for mode in [BatchMode::RecordBatched, BatchMode::Accumulated] {
        let dir = tempfile::tempdir().expect("tempdir");
        let store = StorageBackend::new(dir.path())?;
        let cfg = PipelineConfig {
            total_iterations: iterations,
            full_interval: 50,
            batch_size: 10,
            batch_mode: mode,
            ratio: 0.01,
            ..PipelineConfig::default()
        };
        let summary = run_pipeline(&workload, &cfg, &adam, &store)?;
        println!(
            "{mode:?}: {} writes, {} differential bytes",
            summary.chain.diff_writes, summary.chain.bytes_written
        );
    }
    Ok(())
}
