//! The reuse queue is the only object training and checkpointing share.
//! Training never waits for a checkpoint write; the only thing that can stop
//! it is a full queue. This example stalls the consumer and watches training
//! run exactly `capacity` iterations ahead before blocking.
//!
//! Run with: cargo run --release --example backpressure

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lowdiff::model::{AdamConfig, LayeredWorkload};
use lowdiff::pipeline::{run_training, PipelineConfig, PipelineProgress};
use lowdiff::queue::ReuseQueue;
use lowdiff::store::StorageBackend;

fn main() -> lowdiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = StorageBackend::new(dir.path())?;
    let workload = LayeredWorkload::with_even_layers(800, 4, 21, 22, 2)?;
    let cfg = PipelineConfig {
        total_iterations: 1000,
        full_interval: 1000,
        queue_capacity: 8,
        ratio: 0.05,
        ..PipelineConfig::default()
    };

    let queue = Arc::new(ReuseQueue::new(cfg.queue_capacity));
    let progress = Arc::new(PipelineProgress::default());
    println!("queue capacity {}, consumer stalled...", cfg.queue_capacity);

    let producer = {
        let (queue, progress, workload, cfg, store) =
            (Arc::clone(&queue), Arc::clone(&progress), workload, cfg.clone(), store);
        std::thread::spawn(move || {
            let _ = run_training(&workload, &cfg, &AdamConfig::default(), &queue, &store, &progress);
        })
    };

    let settle = |expect: u64| {
        let deadline = Instant::now() + Duration::from_secs(5);
        while progress.iterations_done.load(Ordering::SeqCst) < expect
            && Instant::now() < deadline
        {
            std::thread::sleep(Duration::from_millis(2));
        }
        std::thread::sleep(Duration::from_millis(100));
        progress.iterations_done.load(Ordering::SeqCst)
    };

    let done = settle(cfg.queue_capacity as u64);
    println!("training completed {done} iterations, then blocked in the enqueue");
    assert_eq!(done, cfg.queue_capacity as u64);

    println!("consuming 3 gradients...");
    for _ in 0..3 {
        queue.dequeue();
    }
    let done = settle(cfg.queue_capacity as u64 + 3);
    println!("training advanced to {done} iterations, blocked again");
    assert_eq!(done, cfg.queue_capacity as u64 + 3);

    let stats = queue.stats();
    println!(
        "peak residency: {} gradients, {} payload bytes",
        stats.max_resident, stats.max_resident_bytes
    );
    queue.close();
    producer.join().expect("producer thread");
    Ok(())
}
