//! End-to-end run: train with per-iteration differential checkpointing, then
//! rebuild the model state from the chain and check it against the live
//! trajectory, digest for digest.
//!
//! Run with: cargo run --release --example train_and_recover

use lowdiff::model::{AdamConfig, LayeredWorkload, ModelState};
use lowdiff::pipeline::{run_pipeline, PipelineConfig};
use lowdiff::recovery::{recover_serial, RecoveryMode, RecoveryPlan};
use lowdiff::store::StorageBackend;

fn main() -> lowdiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = StorageBackend::new(dir.path())?;
    let workload = LayeredWorkload::with_even_layers(4_000, 8, 11, 12, 4)?;
    let cfg = PipelineConfig {
        total_iterations: 120,
        full_interval: 50,
        batch_size: 4,
        ratio: 0.01,
        ..PipelineConfig::default()
    };
    let adam = AdamConfig::default();

    let summary = run_pipeline(&workload, &cfg, &adam, &store)?;
    println!("trained {} iterations", cfg.total_iterations);
    println!(
        "wrote {} fulls and {} differential records ({} gradients) in {} I/O ops",
        summary.train.fulls_written,
        summary.chain.diff_writes,
        summary.chain.gradients_persisted,
        summary.io_ops(),
    );
    println!("final loss {:.3e}", workload.global_loss(&summary.train.final_state.params));

    // recover at a few points and compare against the live digests
    for target in [40, 75, 104, 120] {
        let plan = RecoveryPlan::from_store_or_initial(
            &store,
            target,
            ModelState::zeros(workload.psi()),
            RecoveryMode::Serial,
        )?;
        let recovered = recover_serial(&plan, &adam, &store)?;
        let live = summary.train.digests[recovered.iteration as usize - 1];
        let matches = recovered.state.digest() == live;
        println!(
            "recover @{target:3} -> iteration {:3}, digest {} live trajectory",
            recovered.iteration,
            if matches { "==" } else { "!=" },
        );
        assert!(matches);
    }
    Ok(())
}
