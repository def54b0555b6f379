//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line (run with `--nocapture` to see them all).

use std::time::Instant;

use rand::Rng;

use lowdiff::compress::{accumulate, compress, decompress, CompressorKind, SparseGradient};
use lowdiff::model::{adam_step, sync_gradients, AdamConfig, LayeredWorkload, ModelState};
use lowdiff::pipeline::{
    predicted_io_ops, run_pipeline, run_reference, run_training, BatchMode,
    PipelineConfig, PipelineProgress,
};
use lowdiff::queue::ReuseQueue;
use lowdiff::recovery::{
    base_path_merges, merge_tree_depth, recover_parallel, recover_serial, RecoveryMode,
    RecoveryPlan,
};
use lowdiff::replica::{recover_hardware, recover_software, run_plus_pipeline, PlusConfig};
use lowdiff::sim::{
    comparison_params, comparison_policies, mean_over_seeds, PolicyModel, SweepConfig,
};
use lowdiff::store::{write_checkpoint, CheckpointRecord, StorageBackend, HEADER_LEN};
use lowdiff::tuner::{
    config_table, grid_search, optimal_config, wasted_time, wasted_time_partials, SystemParams,
};

fn pass(n: u32, what: &str) {
    println!("ACCEPTANCE {n:02} PASS - {what}");
}

fn backend() -> (tempfile::TempDir, StorageBackend) {
    let dir = tempfile::tempdir().unwrap();
    let b = StorageBackend::new(dir.path()).unwrap();
    (dir, b)
}

/// Simple deterministic test rng.
fn rng(seed: u64) -> impl Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn criterion_01_bit_exact_recovery() {
    let start = Instant::now();
    let (_dir, store) = backend();
    let workload = LayeredWorkload::with_even_layers(10_000, 8, 101, 102, 4).unwrap();
    let cfg = PipelineConfig {
        total_iterations: 200,
        full_interval: 50,
        batch_size: 4,
        batch_mode: BatchMode::RecordBatched,
        ratio: 0.01,
        ..PipelineConfig::default()
    };
    let adam = AdamConfig::default();
    let summary = run_pipeline(&workload, &cfg, &adam, &store).unwrap();

    // persisted points after a failure at the end of iteration t: batches
    // flushed by t and fulls written by t
    let mut persisted_ends: Vec<u64> =
        summary.chain.diff_ids.iter().map(|(_, covered)| covered.1).collect();
    for t in (cfg.full_interval..=cfg.total_iterations).step_by(cfg.full_interval as usize) {
        persisted_ends.push(t);
    }
    persisted_ends.sort_unstable();

    let initial = ModelState::zeros(workload.psi());
    for t in 1..=200u64 {
        let last_persistable =
            persisted_ends.iter().copied().rfind(|&e| e <= t).unwrap_or(0);
        let plan = RecoveryPlan::from_store_or_initial(
            &store,
            last_persistable,
            initial.clone(),
            RecoveryMode::Serial,
        )
        .unwrap();
        let recovered = recover_serial(&plan, &adam, &store).unwrap();
        assert_eq!(recovered.iteration, last_persistable, "t={t}");
        let expect = if last_persistable == 0 {
            initial.digest()
        } else {
            summary.train.digests[last_persistable as usize - 1]
        };
        assert_eq!(recovered.state.digest(), expect, "t={t} point={last_persistable}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    pass(1, &format!("bit-exact recovery at every persistable point, {elapsed:.2?}"));
}

/// Random full state plus a chain of n single-gradient diff units.
fn synth_chain(store: &StorageBackend, psi: usize, base: u64, n: u64, seed: u64) {
    let mut r = rng(seed);
    let state = ModelState::new(
        (0..psi).map(|_| r.gen_range(-1.0..1.0)).collect(),
        (0..psi).map(|_| r.gen_range(-0.1..0.1)).collect(),
        (0..psi).map(|_| r.gen_range(0.0..0.1)).collect(),
        base,
    )
    .unwrap();
    write_checkpoint(&CheckpointRecord::full(state), store).unwrap();
    for t in base + 1..=base + n {
        let dense: Vec<f64> = (0..psi).map(|_| r.gen_range(-1.0..1.0)).collect();
        let sg = compress(&dense, 0.25, &CompressorKind::TopK, t).unwrap();
        write_checkpoint(&CheckpointRecord::diff(sg), store).unwrap();
    }
}

#[test]
fn criterion_02_parallel_equals_serial() {
    let adam = AdamConfig::default();
    let mut r = rng(2024);
    for case in 0..50 {
        let (_dir, store) = backend();
        let n = r.gen_range(1..=64u64);
        let workers = r.gen_range(1..=8usize);
        synth_chain(&store, 24, 10, n, 3000 + case);
        let target = 10 + n;
        let serial = recover_serial(
            &RecoveryPlan::from_store(&store, target, RecoveryMode::Serial).unwrap(),
            &adam,
            &store,
        )
        .unwrap();
        let plan = RecoveryPlan::from_store(&store, target, RecoveryMode::ParallelExact).unwrap();
        let parallel = recover_parallel(&plan, &adam, &store, workers).unwrap();
        assert_eq!(parallel.state, serial.state, "case {case} n={n} workers={workers}");
        assert_eq!(parallel.merge_rounds, merge_tree_depth(n as usize), "case {case}");
    }
    assert_eq!(merge_tree_depth(5), 3);
    assert_eq!(merge_tree_depth(64), 6);
    assert_eq!(merge_tree_depth(1), 0);
    assert_eq!(base_path_merges(5), 2);
    pass(2, "parallel recovery bit-equals serial on 50 random chains; tree depth = ceil(log2 n)");
}

#[test]
fn criterion_03_closed_form_vs_brute_force() {
    let mut r = rng(33);
    let mut tested = 0;
    while tested < 20 {
        let p = SystemParams {
            gpus: r.gen_range(1.0..64.0),
            mtbf_hours: r.gen_range(0.2..4.0),
            write_bandwidth: 10f64.powf(r.gen_range(11.0..13.5)),
            full_size: 10f64.powf(r.gen_range(8.0..10.0)),
            total_hours: r.gen_range(10.0..500.0),
            full_load_hours: r.gen_range(0.001..0.05),
            diff_merge_hours: 10f64.powf(r.gen_range(-4.5..-3.0)),
            iter_seconds: 1.0,
        };
        let opt = optimal_config(&p).unwrap();
        if opt.clamped {
            continue;
        }
        tested += 1;

        // both partials vanish at the stationary point
        let (df, db) = wasted_time_partials(&p, opt.f, opt.b);
        let f_scale = p.gpus * p.total_hours * p.full_size / p.write_bandwidth;
        let b_scale = p.gpus * p.total_hours / (2.0 * p.mtbf_hours);
        assert!(df.abs() / f_scale < 1e-6, "df residual {}", df.abs() / f_scale);
        assert!(db.abs() / b_scale < 1e-6, "db residual {}", db.abs() / b_scale);

        // 400x400 log grid spanning a symmetric decade around the optimum:
        // the argmin must land within one cell of the optimum's cell
        let res = 400;
        let cell = grid_search(&p, (opt.f / 10.0, opt.f * 10.0), (opt.b / 10.0, opt.b * 10.0), res)
            .unwrap();
        let center = (res - 1) as f64 / 2.0;
        assert!(
            (cell.f_index as f64 - center).abs() <= 1.5,
            "f argmin {} cells from optimum",
            (cell.f_index as f64 - center).abs()
        );
        assert!(
            (cell.b_index as f64 - center).abs() <= 1.5,
            "b argmin {} cells from optimum",
            (cell.b_index as f64 - center).abs()
        );
        assert!(cell.value >= wasted_time(&p, opt.f, opt.b).unwrap() - 1e-9);
    }
    pass(3, "grid argmin within one cell of the closed form on 20 random parameter sets");
}

#[test]
fn criterion_04_config_table_structure() {
    let p = SystemParams::table_regime();
    let table = config_table(&p, &[10, 20, 50, 100], &[1, 2, 3, 4, 5, 6]).unwrap();
    assert!(table.rows_unimodal(), "every row unimodal in batch size");
    assert!(table.min_is_interior(), "global minimum interior, at {:?}", table.min_cell);
    let (i, j) = table.min_cell;
    assert_eq!(table.rows[i][j], 1.0, "normalized minimum is exactly 1");
    assert!(table.to_csv().lines().any(|l| l.contains(",1.000")));
    pass(4, "cost table rows unimodal, interior minimum, normalized to 1.000");
}

#[test]
fn criterion_05_size_law() {
    let psi = 120_000;
    let rho = 0.01;
    let mut r = rng(55);
    let grad_dense: Vec<f64> = (0..psi).map(|_| r.gen_range(-1.0..1.0)).collect();
    let state_delta: Vec<f64> = (0..3 * psi).map(|_| r.gen_range(-1.0..1.0)).collect();

    let grad_rec =
        CheckpointRecord::diff(compress(&grad_dense, rho, &CompressorKind::TopK, 1).unwrap());
    let delta_rec =
        CheckpointRecord::diff(compress(&state_delta, rho, &CompressorKind::TopK, 1).unwrap());

    let (_dir, store) = backend();
    let (_, grad_bytes) = write_checkpoint(&grad_rec, &store).unwrap();
    let (_, delta_bytes) = write_checkpoint(&delta_rec, &store).unwrap();

    // payloads: exactly one third
    let grad_payload = grad_bytes - HEADER_LEN as u64;
    let delta_payload = delta_bytes - HEADER_LEN as u64;
    assert_eq!(3 * grad_payload, delta_payload);

    // whole files: within 1% header slack
    let ratio = grad_bytes as f64 / (delta_bytes as f64 / 3.0);
    assert!((ratio - 1.0).abs() < 0.01, "file-size ratio {ratio}");
    pass(5, "compressed gradient record is one third of a same-ratio full-state differential");
}

#[test]
fn criterion_06_batched_io_reduction() {
    let workload = LayeredWorkload::with_even_layers(600, 4, 61, 62, 2).unwrap();
    let adam = AdamConfig::default();

    let run = |batch_size: usize, mode: BatchMode| {
        let (dir, store) = backend();
        let cfg = PipelineConfig {
            total_iterations: 100,
            full_interval: 100,
            batch_size,
            batch_mode: mode,
            ratio: 0.05,
            ..PipelineConfig::default()
        };
        let s = run_pipeline(&workload, &cfg, &adam, &store).unwrap();
        (dir, store, s)
    };

    let (_d1, _s1, batched) = run(20, BatchMode::RecordBatched);
    assert_eq!(batched.chain.diff_writes, 5, "100 diffs at b=20: ceil = 5 writes");
    assert_eq!(batched.io_ops(), predicted_io_ops(100, 20, 1));

    let (_d2, _s2, unbatched) = run(1, BatchMode::RecordBatched);
    assert_eq!(unbatched.chain.diff_writes, 100);

    // accumulated payload equals the fold of the synchronized gradients
    let (_d3, store3, acc) = run(20, BatchMode::Accumulated);
    let cfg = PipelineConfig {
        total_iterations: 100,
        full_interval: 100,
        batch_size: 20,
        ratio: 0.05,
        ..PipelineConfig::default()
    };
    let mut state = ModelState::zeros(workload.psi());
    let mut synced_all: Vec<SparseGradient> = Vec::new();
    for t in 1..=100 {
        let per_worker: Vec<SparseGradient> = (0..workload.num_workers())
            .map(|w| {
                let dense = workload
                    .assemble_dense(&workload.backward(&state, w, t).unwrap())
                    .unwrap();
                compress(&dense, cfg.ratio, &cfg.compressor, t).unwrap()
            })
            .collect();
        let synced = sync_gradients(&per_worker).unwrap();
        state = adam_step(&state, &decompress(&synced), &adam).unwrap();
        synced_all.push(synced);
    }
    for (record_idx, (id, covered)) in acc.chain.diff_ids.iter().enumerate() {
        let rec = lowdiff::store::read_checkpoint(id, &store3).unwrap();
        let grads = rec.gradients().unwrap();
        assert_eq!(grads.len(), 1);
        let lo = (covered.0 - 1) as usize;
        let hi = covered.1 as usize;
        let mut fold = synced_all[lo].clone();
        for sg in &synced_all[lo + 1..hi] {
            fold = accumulate(&fold, sg).unwrap();
        }
        assert_eq!(grads[0], fold, "record {record_idx}");
    }
    pass(6, "batching cuts 100 writes to 5; accumulated payload equals the fold oracle");
}

#[test]
fn criterion_07_no_war_backpressure() {
    use std::sync::atomic::Ordering;
    use std::sync::Arc;
    use std::time::Duration;

    let workload = LayeredWorkload::with_even_layers(400, 4, 71, 72, 2).unwrap();
    let cfg = PipelineConfig {
        total_iterations: 100,
        full_interval: 100,
        queue_capacity: 16,
        batch_size: 4,
        ratio: 0.05,
        ..PipelineConfig::default()
    };
    let adam = AdamConfig::default();

    // consumer takes 5 items then stalls: training must complete exactly
    // 5 + capacity iterations and then block in the enqueue
    let queue = Arc::new(ReuseQueue::new(cfg.queue_capacity));
    let progress = Arc::new(PipelineProgress::default());
    let (_dir, store) = backend();
    let producer = {
        let (queue, progress, workload, cfg, adam, store) = (
            Arc::clone(&queue),
            Arc::clone(&progress),
            workload.clone(),
            cfg.clone(),
            adam,
            store.clone(),
        );
        std::thread::spawn(move || {
            let _ = run_training(&workload, &cfg, &adam, &queue, &store, &progress);
        })
    };
    for _ in 0..5 {
        queue.dequeue().unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    while progress.iterations_done.load(Ordering::SeqCst) < 21 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(
        progress.iterations_done.load(Ordering::SeqCst),
        21,
        "5 consumed + 16 queued, then the enqueue of iteration 22 blocks"
    );
    queue.close();
    producer.join().unwrap();

    // with a live consumer the trajectory equals the pipeline-free reference
    let (_dir2, store2) = backend();
    let summary = run_pipeline(&workload, &cfg, &adam, &store2).unwrap();
    let reference = run_reference(&workload, &cfg, &adam).unwrap();
    assert_eq!(summary.train.final_state, reference.final_state);
    assert_eq!(summary.train.digests, reference.digests);
    pass(7, "consumer stall blocks training after exactly 16 more iterations; live run bit-equals reference");
}

#[test]
fn criterion_08_replica_sync() {
    let workload = LayeredWorkload::with_even_layers(1024, 8, 81, 82, 2).unwrap();
    let adam = AdamConfig::default();
    let (_dir, store) = backend();
    let cfg = PlusConfig {
        total_iterations: 500,
        pool_width: 3,
        queue_capacity: 64,
        persist: None,
    };
    let summary = run_plus_pipeline(&workload, &cfg, &adam, &store).unwrap();
    assert_eq!(summary.replica.digests.len(), 500);
    assert_eq!(summary.replica.digests, summary.train.digests, "replica tracks training bit-for-bit");

    // shuffled within-iteration arrival changes nothing
    {
        use rand::seq::SliceRandom;
        let queue = ReuseQueue::new(1 << 14);
        let progress = PipelineProgress::default();
        lowdiff::replica::run_training_plus(&workload, &adam, &queue, 40, &progress).unwrap();
        let mut by_iter: std::collections::BTreeMap<u64, Vec<_>> = Default::default();
        while let Some(p) = queue.dequeue() {
            by_iter.entry(p.iteration).or_default().push(p);
        }
        let shuffled = ReuseQueue::new(1 << 14);
        let mut r = rng(88);
        for (_, mut pieces) in by_iter {
            pieces.shuffle(&mut r);
            for p in pieces {
                shuffled.enqueue(p).unwrap();
            }
        }
        shuffled.close();
        let out = lowdiff::replica::run_replica(
            &workload,
            &shuffled,
            &PlusConfig { total_iterations: 40, pool_width: 2, ..cfg.clone() },
            ModelState::zeros(workload.psi()),
            &adam,
            &store,
        )
        .unwrap();
        assert_eq!(out.digests.as_slice(), &summary.train.digests[..40]);
    }

    // software recovery: drained state, zero storage reads (store is empty
    // because persistence was off, and hardware recovery proves it)
    let recovered = recover_software(&summary.replica.replica).unwrap();
    assert_eq!(recovered.iteration, 500);
    assert_eq!(recovered.state.digest(), summary.train.digests[499]);
    assert!(recover_hardware(&store).is_err(), "nothing persisted, nothing to read");
    pass(8, "replica bit-equals training for 500 iterations; arrival order irrelevant; software recovery needs no storage");
}

#[test]
fn criterion_09_simulator_vs_analytic_and_ordering() {
    // simulated mean wasted time tracks the analytic expression within 15%
    let base = comparison_params();
    let opt = optimal_config(&base).unwrap();
    for mtbf in [0.5, 1.0, 2.0] {
        let policy = PolicyModel::cost_model_reference(&base, opt.f, opt.b);
        let cfg = SweepConfig { seeds: 200, software_fraction: 0.0, ..SweepConfig::default() };
        let (_, sim_wasted) = mean_over_seeds(&policy, mtbf, &cfg).unwrap();
        let matched = SystemParams { mtbf_hours: mtbf, total_hours: cfg.horizon_hours, ..base };
        let analytic = wasted_time(&matched, opt.f, opt.b).unwrap() / matched.gpus;
        let rel = (sim_wasted - analytic).abs() / analytic;
        assert!(rel < 0.15, "mtbf {mtbf}: sim {sim_wasted:.4} vs analytic {analytic:.4} ({rel:.3})");
    }

    // effective-ratio ordering under frequent failures
    let policies = comparison_policies(&base).unwrap();
    let cfg = SweepConfig { seeds: 200, ..SweepConfig::default() };
    let ratios: Vec<(String, f64)> = policies
        .iter()
        .map(|p| {
            let (ratio, _) = mean_over_seeds(p, 0.3, &cfg).unwrap();
            (p.label.clone(), ratio)
        })
        .collect();
    assert_eq!(ratios.len(), 4);
    for pair in ratios.windows(2) {
        assert!(
            pair[0].1 > pair[1].1,
            "expected {} > {} but got {:.4} vs {:.4}",
            pair[0].0,
            pair[1].0,
            pair[0].1,
            pair[1].1
        );
    }
    pass(9, "simulator within 15% of the cost model; policy ordering holds under frequent failures");
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let run_all = |root: &std::path::Path| {
        let train_out = root.join("train");
        let code = lowdiff::cli::run([
            "lowdiff", "train", "--mode", "lowdiff", "--iters", "60", "--psi", "400",
            "--out", train_out.to_str().unwrap(), "--seed", "7",
        ]);
        assert_eq!(code, 0);
        let plus_out = root.join("plus");
        let code = lowdiff::cli::run([
            "lowdiff", "train", "--mode", "plus", "--iters", "40", "--psi", "400",
            "--out", plus_out.to_str().unwrap(), "--seed", "7",
        ]);
        assert_eq!(code, 0);
        let plan_out = root.join("plan");
        let code = lowdiff::cli::run(["lowdiff", "plan", "--out", plan_out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let sim_out = root.join("sim");
        let code = lowdiff::cli::run([
            "lowdiff", "simulate", "--out", sim_out.to_str().unwrap(), "--mtbf", "0.5,1",
            "--seeds", "20",
        ]);
        assert_eq!(code, 0);
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_all(dir_a.path());
    run_all(dir_b.path());

    // compare every produced file byte for byte (timings are wall-clock
    // diagnostics and excluded by design)
    let mut compared = 0;
    for sub in ["train", "plus", "plan", "sim"] {
        let a_dir = dir_a.path().join(sub);
        let mut names: Vec<String> = std::fs::read_dir(&a_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "timings.txt")
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = std::fs::read(a_dir.join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(sub).join(&name)).unwrap();
            assert_eq!(a, b, "{sub}/{name} differs between reruns");
            compared += 1;
        }
    }
    assert!(compared > 20, "compared {compared} files");
    pass(10, &format!("{compared} manifests, CSVs, and checkpoint files byte-identical across reruns"));
}
