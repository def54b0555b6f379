//! Batch command-line front end.
//!
//! Five subcommands: `train`, `recover`, `plan`, `simulate`, `inspect`.
//! Every run is fully determined by its config file (or defaults) plus flag
//! overrides; outputs are text manifests and CSV, written under `--out` and
//! echoed to stdout. Exit codes: 0 ok, 1 usage or config error, 2 data or
//! storage error, 3 invariant violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, RunMode};
use crate::error::{Error, Result};
use crate::model::{LayeredWorkload, ModelState};
use crate::pipeline::{run_full_only, run_naive_dc, run_pipeline, BaselineOutput};
use crate::recovery::{
    recover_naive_dc, recover_parallel, recover_serial, RecoveryMode, RecoveryPlan,
};
use crate::replica::run_plus_pipeline;
use crate::sim::{
    sweep, sweep_csv, MtbfConvention, PolicyModel, SweepAxis, SweepConfig,
};
use crate::store::{RecordPayload, StorageBackend};
use crate::tuner::{config_table, optimal_config};

#[derive(Parser)]
#[command(
    name = "lowdiff",
    version,
    about = "Differential checkpointing for data-parallel training via gradient reuse"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the synthetic workload under a checkpointing strategy.
    Train(TrainArgs),
    /// Reconstruct model state from a checkpoint chain and print its digest.
    Recover(RecoverArgs),
    /// Closed-form optimal checkpoint configuration plus the cost table.
    Plan(CommonArgs),
    /// Failure-injection simulation across policies.
    Simulate(SimArgs),
    /// Human-readable dump of one .ld checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// lowdiff | plus | naive-dc | full-only.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    full_interval: Option<u64>,
    /// record | accumulate.
    #[arg(long)]
    batch_mode: Option<String>,
    #[arg(long)]
    psi: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct RecoverArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Recover the state at this iteration (default: the configured run
    /// length).
    #[arg(long)]
    at: Option<u64>,
    /// Parallel recovery with this many workers.
    #[arg(long)]
    parallel: Option<usize>,
    /// Use the accumulated (approximate) merge in parallel recovery.
    #[arg(long)]
    accumulated: bool,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated MTBF hours to sweep.
    #[arg(long)]
    mtbf: Option<String>,
    /// Comma-separated GPU counts to sweep (switches the axis to GPUs).
    #[arg(long)]
    gpus: Option<String>,
    /// Comma-separated policies
    /// (lowdiff,lowdiff-plus,gemini-like,checkfreq-like,naive-dc,full-only,cost-model).
    #[arg(long)]
    policy: Option<String>,
    /// Independent seeded traces per cell.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct InspectArgs {
    /// Path to a .ld checkpoint file.
    path: PathBuf,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/error but normalize the exit code
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Recover(args) => cmd_recover(args),
        Cmd::Plan(args) => cmd_plan(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn workload_for(cfg: &RunConfig) -> Result<LayeredWorkload> {
    LayeredWorkload::with_even_layers(
        cfg.psi,
        cfg.layers,
        cfg.design_seed(),
        cfg.target_seed(),
        cfg.workers,
    )
}

fn fresh_store(cfg: &RunConfig) -> Result<StorageBackend> {
    if cfg.out.exists() {
        let has_ckpts = std::fs::read_dir(&cfg.out)?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name().to_string_lossy().ends_with(".ld"));
        if has_ckpts {
            return Err(Error::Config(format!(
                "output directory {} already holds checkpoints; pick a fresh one",
                cfg.out.display()
            )));
        }
    }
    Ok(StorageBackend::new(&cfg.out)?.with_fsync(cfg.fsync))
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn baseline_manifest(mode: RunMode, out: &BaselineOutput) -> String {
    let mut s = format!("mode={}\n", mode.as_str());
    for (k, v) in [
        ("iterations", out.digests.len().to_string()),
        ("fulls_written", out.fulls_written.to_string()),
        ("diffs_written", out.diff_writes.to_string()),
        ("io_ops", (out.fulls_written + out.diff_writes).to_string()),
        ("bytes_written", out.bytes_written.to_string()),
        ("final_digest", hex::encode(out.final_state.digest())),
    ] {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    for (key, value) in [
        ("mode", args.mode),
        ("iterations", args.iters.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("full_interval", args.full_interval.map(|v| v.to_string())),
        ("batch_mode", args.batch_mode),
        ("psi", args.psi.map(|v| v.to_string())),
        ("ratio", args.ratio.map(|v| v.to_string())),
    ] {
        if let Some(value) = value {
            cfg.apply(key, &value)?;
        }
    }
    let workload = workload_for(&cfg)?;
    let backend = fresh_store(&cfg)?;
    let adam = cfg.adam();

    let manifest = match cfg.mode {
        RunMode::LowDiff => {
            let summary = run_pipeline(&workload, &cfg.pipeline(), &adam, &backend)?;
            write_out(&cfg.out, "timings.txt", &summary.timings())?;
            format!("mode=lowdiff\n{}", summary.manifest())
        }
        RunMode::Plus => {
            let summary = run_plus_pipeline(&workload, &cfg.plus(), &adam, &backend)?;
            let mut s = String::from("mode=plus\n");
            for (k, v) in [
                ("iterations", summary.train.digests.len().to_string()),
                ("fulls_written", summary.replica.persisted.len().to_string()),
                ("diffs_written", "0".to_string()),
                ("io_ops", summary.replica.persisted.len().to_string()),
                ("replica_last_applied", summary.replica.replica.last_applied.to_string()),
                ("bytes_written", summary.replica.bytes_written.to_string()),
                ("final_digest", hex::encode(summary.train.final_state.digest())),
            ] {
                s.push_str(&format!("{k}={v}\n"));
            }
            s
        }
        RunMode::NaiveDc => {
            let out = run_naive_dc(
                &workload,
                cfg.iterations,
                cfg.full_interval,
                cfg.ratio,
                &adam,
                &backend,
            )?;
            baseline_manifest(cfg.mode, &out)
        }
        RunMode::FullOnly => {
            let out =
                run_full_only(&workload, cfg.iterations, cfg.full_interval, &adam, &backend)?;
            baseline_manifest(cfg.mode, &out)
        }
    };
    write_out(&cfg.out, "manifest.txt", &manifest)?;
    print!("{manifest}");
    Ok(())
}

fn cmd_recover(args: RecoverArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let backend = StorageBackend::new(&cfg.out)?;
    let target = args.at.unwrap_or(cfg.iterations);

    let recovered = match cfg.mode {
        RunMode::NaiveDc => recover_naive_dc(&backend, target)?,
        _ => {
            let mode = if args.accumulated {
                RecoveryMode::ParallelAccumulated
            } else if args.parallel.is_some() {
                RecoveryMode::ParallelExact
            } else {
                RecoveryMode::Serial
            };
            let psi = crate::store::model_psi_hint(&backend)?.unwrap_or(cfg.psi);
            let plan = RecoveryPlan::from_store_or_initial(
                &backend,
                target,
                ModelState::zeros(psi),
                mode,
            )?;
            match args.parallel {
                Some(workers) => recover_parallel(&plan, &cfg.adam(), &backend, workers)?,
                None => recover_serial(&plan, &cfg.adam(), &backend)?,
            }
        }
    };
    let mut s = format!(
        "iteration={}\ndigest={}\n",
        recovered.iteration,
        hex::encode(recovered.state.digest())
    );
    if args.parallel.is_some() {
        s.push_str(&format!("merge_rounds={}\n", recovered.merge_rounds));
    }
    print!("{s}");
    Ok(())
}

fn cmd_plan(args: CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let p = cfg.system_params();
    let opt = optimal_config(&p)?;
    let (interval_iters, batch_iters) = opt.in_iterations(&p);

    // a 4x6 cost table bracketing the optimum, rows geometric in the full
    // interval and columns consecutive batch sizes
    let mut intervals: Vec<u64> =
        vec![(interval_iters / 2).max(1), interval_iters, interval_iters * 2, interval_iters * 4];
    intervals.dedup();
    let col_start = batch_iters.saturating_sub(1).max(1);
    let min_interval = *intervals.iter().min().unwrap();
    let batches: Vec<u64> = (col_start..col_start + 6).filter(|&b| b <= min_interval).collect();
    let table = config_table(&p, &intervals, &batches)?;
    let csv = table.to_csv();
    write_out(&cfg.out, "plan.csv", &csv)?;

    let mut s = String::new();
    s.push_str(&format!("f_star_per_hour={:.9}\n", opt.f));
    s.push_str(&format!("b_star_hours={:.9}\n", opt.b));
    s.push_str(&format!("full_interval_iters={interval_iters}\n"));
    s.push_str(&format!("batch_size_iters={batch_iters}\n"));
    s.push_str(&format!("clamped={}\n", opt.clamped));
    write_out(&cfg.out, "plan.txt", &s)?;
    print!("{s}{csv}");
    Ok(())
}

fn policy_by_name(name: &str, cfg: &RunConfig) -> Result<PolicyModel> {
    let p = cfg.system_params();
    let opt = optimal_config(&p)?;
    Ok(match name {
        "lowdiff" => PolicyModel::lowdiff(&p, opt.f, opt.b),
        "lowdiff-plus" => PolicyModel::lowdiff_plus(&p, cfg.persist_interval, 2),
        "gemini-like" => PolicyModel::gemini_like(&p, 4),
        "checkfreq-like" => PolicyModel::checkfreq_like(&p, 19),
        "naive-dc" => PolicyModel::naive_dc(&p, opt.f),
        "full-only" => PolicyModel::full_only(&p, 10),
        "cost-model" => PolicyModel::cost_model_reference(&p, opt.f, opt.b),
        other => return Err(Error::Config(format!("unknown policy '{other}'"))),
    })
}

fn cmd_simulate(args: SimArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(mtbf) = &args.mtbf {
        cfg.apply("mtbf_list", mtbf)?;
    }
    let gpu_axis = args.gpus.is_some();
    if let Some(gpus) = &args.gpus {
        cfg.apply("gpu_list", gpus)?;
    }
    if let Some(policy) = &args.policy {
        cfg.apply("policies", policy)?;
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }

    let policies: Vec<PolicyModel> = cfg
        .policies
        .iter()
        .map(|name| policy_by_name(name, &cfg))
        .collect::<Result<_>>()?;
    let axis: Vec<SweepAxis> = if gpu_axis {
        cfg.gpu_list.iter().map(|&n| SweepAxis::Gpus(n)).collect()
    } else {
        cfg.mtbf_list.iter().map(|&m| SweepAxis::Mtbf(m)).collect()
    };
    let sweep_cfg = SweepConfig {
        seeds: cfg.seeds,
        horizon_hours: cfg.horizon_hours,
        software_fraction: cfg.software_fraction,
        convention: if gpu_axis {
            // per-GPU failure rates are what make the GPU axis move
            MtbfConvention::PerGpu
        } else {
            cfg.mtbf_convention
        },
    };
    let rows = sweep(&policies, &cfg.system_params(), &axis, &sweep_cfg)?;
    let csv = sweep_csv(&rows);
    write_out(&cfg.out, "simulate.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&args.path)?;
    let name = args.path.display().to_string();
    let rec = crate::store::CheckpointRecord::from_bytes(&bytes, &name)?;
    let mut s = String::new();
    s.push_str(&format!("file={name}\n"));
    s.push_str(&format!("kind={}\n", rec.kind().file_tag()));
    s.push_str(&format!("iteration={}\n", rec.iteration));
    s.push_str(&format!("covered={}..{}\n", rec.covered.0, rec.covered.1));
    s.push_str(&format!("file_bytes={}\n", bytes.len()));
    match &rec.payload {
        RecordPayload::Full(state) => {
            s.push_str(&format!("psi={}\n", state.psi()));
            s.push_str(&format!("step={}\n", state.step));
            s.push_str(&format!("digest={}\n", hex::encode(state.digest())));
        }
        RecordPayload::Diff(sg) => {
            s.push_str(&format!("psi={}\n", sg.dense_len));
            s.push_str(&format!("ratio={}\n", sg.ratio));
            s.push_str(&format!("kept={}\n", sg.k()));
        }
        RecordPayload::Batched(grads) => {
            s.push_str(&format!("psi={}\n", grads[0].dense_len));
            s.push_str(&format!("gradients={}\n", grads.len()));
            for sg in grads {
                s.push_str(&format!("  iteration={} kept={} ratio={}\n", sg.iteration, sg.k(), sg.ratio));
            }
        }
    }
    print!("{s}");
    Ok(())
}
