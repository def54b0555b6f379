//! Failure-injection simulator.
//!
//! A policy model reduces a checkpointing strategy to what the cost ledger
//! can see: a steady overhead fraction while training runs, a synchronous
//! stall per full checkpoint, the granularity of persisted restore points,
//! and a recovery-time function of (full load time, per-merge time, chain
//! length). The simulator walks a failure trace over a wall-clock horizon,
//! rolling progress back to the last persisted point at each failure, and
//! reports a per-GPU time ledger: productive hours are first-time training
//! progress; everything else (steady overhead, recovery, re-training lost
//! work) is wasted. Multiply by the GPU count for aggregate GPU-hours.
//!
//! `productive + wasted = total` holds exactly; the steady/recovery/lost
//! breakdown is reported alongside and sums to wasted up to rounding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::tuner::{optimal_config, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Hardware,
    Software,
}

#[derive(Debug, Clone, Copy)]
pub struct FailureEvent {
    /// Wall-clock hours from job start.
    pub time: f64,
    pub kind: FailureKind,
}

#[derive(Debug, Clone)]
pub struct FailureTrace {
    pub events: Vec<FailureEvent>,
    pub horizon: f64,
    pub seed: u64,
}

/// Exponential inter-arrival failure schedule with the given mean, kinds
/// drawn Bernoulli(software_fraction). Pure function of the seed.
pub fn generate_trace(
    mtbf: f64,
    horizon: f64,
    software_fraction: f64,
    seed: u64,
) -> Result<FailureTrace> {
    if !(mtbf > 0.0) {
        return Err(Error::Domain(format!("mtbf must be positive, got {mtbf}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(0.0..=1.0).contains(&software_fraction) {
        return Err(Error::Domain("software_fraction must be in [0, 1]".into()));
    }
    let mut rng = keyed_rng(&[seed, 0x7472_6163]);
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        t += -mtbf * (1.0 - u).ln();
        if t >= horizon {
            break;
        }
        let kind = if rng.gen::<f64>() < software_fraction {
            FailureKind::Software
        } else {
            FailureKind::Hardware
        };
        events.push(FailureEvent { time: t, kind });
    }
    Ok(FailureTrace { events, horizon, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    LowDiff,
    LowDiffPlus,
    NaiveDC,
    FullOnly,
}

/// A checkpointing strategy as the cost ledger sees it. All times are hours.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub kind: PolicyKind,
    pub label: String,
    /// Fraction of training time spent on checkpoint work that does overlap
    /// poorly (compression stalls, transfer interference, ...).
    pub steady_overhead_frac: f64,
    /// Synchronous stall per full checkpoint.
    pub stall_per_full: f64,
    /// Hours of progress between persisted full checkpoints.
    pub full_interval: f64,
    /// Granularity of persisted differential restore points; `None` when the
    /// policy persists only fulls.
    pub diff_granularity: Option<f64>,
    /// Time to load the base checkpoint on hardware recovery.
    pub full_load: f64,
    /// Time per differential merged during recovery.
    pub diff_merge: f64,
    /// Software-failure fast path: (restore time, progress lag of the
    /// in-memory replica). `None` treats software failures like hardware.
    pub software_restore: Option<(f64, f64)>,
}

impl PolicyModel {
    /// Gradient-reuse policy at configuration (f, b): differentials persist
    /// every `b` hours with no training stall, fulls every 1/f hours with a
    /// synchronous S/W stall, recovery replays the merge chain.
    pub fn lowdiff(p: &SystemParams, f: f64, b: f64) -> Self {
        Self {
            kind: PolicyKind::LowDiff,
            label: "lowdiff".into(),
            steady_overhead_frac: 0.025,
            stall_per_full: p.full_size / p.write_bandwidth,
            full_interval: 1.0 / f,
            diff_granularity: Some(b),
            full_load: p.full_load_hours,
            diff_merge: p.diff_merge_hours,
            software_restore: None,
        }
    }

    /// Same mechanism as [`PolicyModel::lowdiff`] but with zero overlap
    /// overhead: exactly the assumptions of the analytic wasted-time
    /// expression, for validating the simulator against it.
    pub fn cost_model_reference(p: &SystemParams, f: f64, b: f64) -> Self {
        Self { steady_overhead_frac: 0.0, label: "cost-model".into(), ..Self::lowdiff(p, f, b) }
    }

    /// No-compression variant: a host-memory replica trails training by a
    /// couple of iterations, absorbs software failures without storage reads,
    /// and persists full snapshots asynchronously at a short cadence.
    pub fn lowdiff_plus(p: &SystemParams, persist_interval_iters: u64, backlog_iters: u64) -> Self {
        Self {
            kind: PolicyKind::LowDiffPlus,
            label: "lowdiff-plus".into(),
            steady_overhead_frac: 0.08,
            stall_per_full: 0.0,
            full_interval: persist_interval_iters as f64 * p.iter_hours(),
            diff_granularity: None,
            full_load: p.full_load_hours,
            diff_merge: 0.0,
            software_restore: Some((
                p.full_load_hours / 12.0,
                backlog_iters as f64 * p.iter_hours(),
            )),
        }
    }

    /// Direct differential checkpointing: per-iteration state deltas whose
    /// compression and writes sit on the training critical path, with merges
    /// over the whole 3Ψ state on recovery.
    pub fn naive_dc(p: &SystemParams, f: f64) -> Self {
        Self {
            kind: PolicyKind::NaiveDC,
            label: "naive-dc".into(),
            steady_overhead_frac: 0.25,
            stall_per_full: p.full_size / p.write_bandwidth,
            full_interval: 1.0 / f,
            diff_granularity: Some(p.iter_hours()),
            full_load: p.full_load_hours,
            diff_merge: 3.0 * p.diff_merge_hours,
            software_restore: None,
        }
    }

    /// Host-memory full-checkpoint baseline: short cadence, fast restore from
    /// memory, but checkpoint traffic that interferes with training.
    pub fn gemini_like(p: &SystemParams, interval_iters: u64) -> Self {
        Self {
            kind: PolicyKind::FullOnly,
            label: "gemini-like".into(),
            steady_overhead_frac: 0.11,
            stall_per_full: 0.0,
            full_interval: interval_iters as f64 * p.iter_hours(),
            diff_granularity: None,
            full_load: p.full_load_hours / 4.0,
            diff_merge: 0.0,
            software_restore: None,
        }
    }

    /// Pipelined snapshot/persist full-checkpoint baseline: low overhead but
    /// a coarse cadence and storage-speed recovery.
    pub fn checkfreq_like(p: &SystemParams, interval_iters: u64) -> Self {
        Self {
            kind: PolicyKind::FullOnly,
            label: "checkfreq-like".into(),
            steady_overhead_frac: 0.035,
            stall_per_full: 0.0,
            full_interval: interval_iters as f64 * p.iter_hours(),
            diff_granularity: None,
            full_load: p.full_load_hours,
            diff_merge: 0.0,
            software_restore: None,
        }
    }

    /// Synchronous save of the full state at a fixed cadence, nothing else.
    pub fn full_only(p: &SystemParams, interval_iters: u64) -> Self {
        Self {
            kind: PolicyKind::FullOnly,
            label: "full-only".into(),
            steady_overhead_frac: 0.0,
            stall_per_full: p.full_size / p.write_bandwidth,
            full_interval: interval_iters as f64 * p.iter_hours(),
            diff_granularity: None,
            full_load: p.full_load_hours,
            diff_merge: 0.0,
            software_restore: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steady_overhead_frac < 0.0
            || self.stall_per_full < 0.0
            || self.full_load < 0.0
            || self.diff_merge < 0.0
        {
            return Err(Error::Domain("policy overheads must be nonnegative".into()));
        }
        if !(self.full_interval > 0.0) {
            return Err(Error::Domain("full_interval must be positive".into()));
        }
        if let Some(g) = self.diff_granularity {
            if !(g > 0.0) {
                return Err(Error::Domain("diff granularity must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FailureCost {
    pub time: f64,
    pub kind: FailureKind,
    pub recovery_hours: f64,
    pub lost_work_hours: f64,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub total_hours: f64,
    pub productive_hours: f64,
    /// total - productive, exactly.
    pub wasted_hours: f64,
    /// Breakdown of the waste; sums to `wasted_hours` up to rounding.
    pub steady_hours: f64,
    pub recovery_hours: f64,
    pub lost_work_hours: f64,
    pub failures: u64,
    pub per_failure: Vec<FailureCost>,
}

impl SimReport {
    pub fn effective_ratio(&self) -> f64 {
        self.productive_hours / self.total_hours
    }
}

struct Ledger {
    wall: f64,
    progress: f64,
    high_water: f64,
    productive: f64,
    steady: f64,
    lost: f64,
}

impl Ledger {
    /// Advance training for `dt` wall hours: progress accrues at the rate
    /// left over by overhead; progress below the high-water mark is
    /// re-training of lost work, not productive time.
    fn advance(&mut self, dt: f64, overhead_frac: f64) {
        if dt <= 0.0 {
            return;
        }
        let gain = dt / (1.0 + overhead_frac);
        self.steady += dt - gain;
        let re = (self.high_water - self.progress).clamp(0.0, gain);
        self.lost += re;
        self.productive += gain - re;
        self.progress += gain;
        self.high_water = self.high_water.max(self.progress);
        self.wall += dt;
    }
}

/// Run one failure trace against a policy. Returns the per-GPU time ledger.
pub fn simulate(policy: &PolicyModel, trace: &FailureTrace) -> Result<SimReport> {
    policy.validate()?;
    // fold the synchronous per-full stall into an effective overhead rate:
    // one stall per full_interval hours of progress
    let overhead = policy.steady_overhead_frac + policy.stall_per_full / policy.full_interval;
    let mut ledger = Ledger {
        wall: 0.0,
        progress: 0.0,
        high_water: 0.0,
        productive: 0.0,
        steady: 0.0,
        lost: 0.0,
    };
    let mut recovery_total = 0.0;
    let mut per_failure = Vec::with_capacity(trace.events.len());

    for event in &trace.events {
        if event.time >= trace.horizon || event.time < ledger.wall {
            // a failure landing inside a recovery window restarts recovery;
            // modeling that adds nothing here, so it is absorbed
            continue;
        }
        ledger.advance(event.time - ledger.wall, overhead);

        let (recovery_time, rollback_to) = match (event.kind, policy.software_restore) {
            (FailureKind::Software, Some((restore, backlog))) => {
                (restore, (ledger.progress - backlog).max(0.0))
            }
            _ => {
                let last_full =
                    (ledger.progress / policy.full_interval).floor() * policy.full_interval;
                let (restore_point, merges) = match policy.diff_granularity {
                    Some(g) => {
                        let point = (ledger.progress / g).floor() * g;
                        (point, ((point - last_full) / g).round())
                    }
                    None => (last_full, 0.0),
                };
                (policy.full_load + policy.diff_merge * merges, restore_point)
            }
        };
        let in_horizon = recovery_time.min(trace.horizon - ledger.wall);
        recovery_total += in_horizon;
        per_failure.push(FailureCost {
            time: event.time,
            kind: event.kind,
            recovery_hours: recovery_time,
            lost_work_hours: ledger.progress - rollback_to,
        });
        ledger.wall += in_horizon;
        ledger.progress = rollback_to;
    }
    ledger.advance(trace.horizon - ledger.wall, overhead);

    Ok(SimReport {
        total_hours: trace.horizon,
        productive_hours: ledger.productive,
        wasted_hours: trace.horizon - ledger.productive,
        steady_hours: ledger.steady,
        recovery_hours: recovery_total,
        lost_work_hours: ledger.lost,
        failures: per_failure.len() as u64,
        per_failure,
    })
}

/// How a per-device failure rate maps to the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtbfConvention {
    /// The given MTBF already describes the whole cluster.
    PerCluster,
    /// The given MTBF is per GPU; the cluster fails N times as often.
    PerGpu,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub seeds: u64,
    pub horizon_hours: f64,
    pub software_fraction: f64,
    pub convention: MtbfConvention,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: 200,
            horizon_hours: 50.0,
            software_fraction: 0.5,
            convention: MtbfConvention::PerCluster,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SweepAxis {
    Mtbf(f64),
    Gpus(f64),
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub policy: String,
    pub mtbf_hours: f64,
    pub gpus: f64,
    pub mean_effective_ratio: f64,
    pub mean_wasted_hours: f64,
}

/// Mean report for one policy at one cluster MTBF, averaged over seeded
/// traces. Seeds fan out across threads; the mean is accumulated in seed
/// order so the result is deterministic.
pub fn mean_over_seeds(
    policy: &PolicyModel,
    cluster_mtbf: f64,
    cfg: &SweepConfig,
) -> Result<(f64, f64)> {
    let reports: Vec<Result<SimReport>> = {
        let mut slots: Vec<Option<Result<SimReport>>> = (0..cfg.seeds).map(|_| None).collect();
        let chunk = (cfg.seeds as usize).div_ceil(std::thread::available_parallelism().map_or(4, |p| p.get()));
        std::thread::scope(|s| {
            for (chunk_idx, chunk_slots) in slots.chunks_mut(chunk.max(1)).enumerate() {
                let base = chunk_idx * chunk.max(1);
                s.spawn(move || {
                    for (off, slot) in chunk_slots.iter_mut().enumerate() {
                        let seed = (base + off) as u64;
                        let res = generate_trace(cluster_mtbf, cfg.horizon_hours, cfg.software_fraction, seed)
                            .and_then(|trace| simulate(policy, &trace));
                        *slot = Some(res);
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("seed slot unfilled")).collect()
    };
    let mut ratio_sum = 0.0;
    let mut wasted_sum = 0.0;
    for report in reports {
        let report = report?;
        ratio_sum += report.effective_ratio();
        wasted_sum += report.wasted_hours;
    }
    let n = cfg.seeds as f64;
    Ok((ratio_sum / n, wasted_sum / n))
}

/// Run every policy across the axis and tabulate mean effective ratios.
pub fn sweep(
    policies: &[PolicyModel],
    base_params: &SystemParams,
    axis: &[SweepAxis],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for point in axis {
        let (mtbf, gpus) = match *point {
            SweepAxis::Mtbf(m) => (m, base_params.gpus),
            SweepAxis::Gpus(n) => (base_params.mtbf_hours, n),
        };
        let cluster_mtbf = match cfg.convention {
            MtbfConvention::PerCluster => mtbf,
            MtbfConvention::PerGpu => mtbf / gpus,
        };
        for policy in policies {
            let (ratio, wasted) = mean_over_seeds(policy, cluster_mtbf, cfg)?;
            rows.push(SweepRow {
                policy: policy.label.clone(),
                mtbf_hours: mtbf,
                gpus,
                mean_effective_ratio: ratio,
                mean_wasted_hours: wasted,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("policy,mtbf_hours,gpus,effective_ratio,wasted_hours\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.policy, r.mtbf_hours, r.gpus, r.mean_effective_ratio, r.mean_wasted_hours
        ));
    }
    out
}

/// The cluster and policy configuration used for the frequent-failure
/// comparison experiments: a ten-second-iteration job with storage loads
/// around a minute.
pub fn comparison_params() -> SystemParams {
    SystemParams {
        gpus: 8.0,
        mtbf_hours: 0.3,
        write_bandwidth: 3.6e12,
        full_size: 1.4e9,
        total_hours: 50.0,
        full_load_hours: 1.0 / 60.0,
        diff_merge_hours: 5e-4,
        iter_seconds: 10.0,
    }
}

/// The four policies compared in the failure-rate experiments, most to least
/// expected effective ratio.
pub fn comparison_policies(p: &SystemParams) -> Result<Vec<PolicyModel>> {
    let opt = optimal_config(p)?;
    Ok(vec![
        PolicyModel::lowdiff(p, opt.f, opt.b),
        PolicyModel::lowdiff_plus(p, 3, 2),
        PolicyModel::gemini_like(p, 4),
        PolicyModel::checkfreq_like(p, 19),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuner::wasted_time;

    #[test]
    fn trace_statistics_and_determinism() {
        let trace = generate_trace(1.0, 1000.0, 0.5, 7).unwrap();
        let n = trace.events.len() as f64;
        assert!((n - 1000.0).abs() < 3.0 * 1000f64.sqrt(), "count {n}");
        for pair in trace.events.windows(2) {
            assert!(pair[0].time < pair[1].time);
        }
        assert!(trace.events.iter().all(|e| e.time < 1000.0));

        let again = generate_trace(1.0, 1000.0, 0.5, 7).unwrap();
        assert_eq!(trace.events.len(), again.events.len());
        assert!(trace
            .events
            .iter()
            .zip(&again.events)
            .all(|(a, b)| a.time == b.time && a.kind == b.kind));

        let hw_only = generate_trace(0.5, 100.0, 0.0, 3).unwrap();
        assert!(hw_only.events.iter().all(|e| e.kind == FailureKind::Hardware));
    }

    #[test]
    fn empty_trace_wastes_only_steady_overhead() {
        let p = comparison_params();
        let policy = PolicyModel::lowdiff(&p, 10.0, 0.01);
        let trace = FailureTrace { events: vec![], horizon: 20.0, seed: 0 };
        let report = simulate(&policy, &trace).unwrap();
        assert_eq!(report.failures, 0);
        assert_eq!(report.recovery_hours, 0.0);
        assert_eq!(report.lost_work_hours, 0.0);
        let overhead = policy.steady_overhead_frac + policy.stall_per_full / policy.full_interval;
        let expect_ratio = 1.0 / (1.0 + overhead);
        assert!((report.effective_ratio() - expect_ratio).abs() < 1e-12);
    }

    #[test]
    fn ledger_conserves_time() {
        let p = comparison_params();
        let policy = PolicyModel::lowdiff(&p, 10.0, 0.01);
        let trace = generate_trace(0.4, 30.0, 0.5, 11).unwrap();
        let report = simulate(&policy, &trace).unwrap();
        assert_eq!(report.productive_hours + report.wasted_hours, report.total_hours);
        let parts = report.steady_hours + report.recovery_hours + report.lost_work_hours;
        assert!((parts - report.wasted_hours).abs() < 1e-9, "breakdown sums to waste");
        assert!(report.effective_ratio() > 0.0 && report.effective_ratio() < 1.0);
    }

    #[test]
    fn finer_diffs_lose_less_work_than_coarse_fulls() {
        let p = comparison_params();
        let fine = PolicyModel::lowdiff(&p, 36.0, p.iter_hours());
        let coarse = PolicyModel::full_only(&p, 10);
        let trace = generate_trace(0.5, 40.0, 0.0, 5).unwrap();
        let a = simulate(&fine, &trace).unwrap();
        let b = simulate(&coarse, &trace).unwrap();
        let mean = |r: &SimReport| {
            r.per_failure.iter().map(|f| f.lost_work_hours).sum::<f64>() / r.failures as f64
        };
        assert!(mean(&a) <= mean(&b), "{} vs {}", mean(&a), mean(&b));
    }

    #[test]
    fn simulation_tracks_analytic_model() {
        let p = comparison_params();
        let opt = optimal_config(&p).unwrap();
        let policy = PolicyModel::cost_model_reference(&p, opt.f, opt.b);
        let cfg = SweepConfig { seeds: 50, software_fraction: 0.0, ..SweepConfig::default() };
        let (_, mean_wasted) = mean_over_seeds(&policy, 1.0, &cfg).unwrap();
        let adjusted = SystemParams { mtbf_hours: 1.0, total_hours: cfg.horizon_hours, ..p };
        let analytic = wasted_time(&adjusted, opt.f, opt.b).unwrap() / adjusted.gpus;
        let rel = (mean_wasted - analytic).abs() / analytic;
        assert!(rel < 0.15, "sim {mean_wasted} vs analytic {analytic} (rel {rel:.3})");
    }

    #[test]
    fn more_gpus_lower_the_effective_ratio() {
        let p = comparison_params();
        let policy = PolicyModel::lowdiff(&p, optimal_config(&p).unwrap().f, 0.01);
        let cfg = SweepConfig { seeds: 40, convention: MtbfConvention::PerGpu, ..SweepConfig::default() };
        let axis = [SweepAxis::Gpus(8.0), SweepAxis::Gpus(16.0), SweepAxis::Gpus(32.0)];
        let base = SystemParams { mtbf_hours: 8.0, ..p };
        let rows = sweep(std::slice::from_ref(&policy), &base, &axis, &cfg).unwrap();
        assert!(rows[0].mean_effective_ratio > rows[1].mean_effective_ratio);
        assert!(rows[1].mean_effective_ratio > rows[2].mean_effective_ratio);
    }

    #[test]
    fn software_fast_path_beats_hardware_recovery() {
        let p = comparison_params();
        let policy = PolicyModel::lowdiff_plus(&p, 3, 2);
        let sw = simulate(&policy, &generate_trace(0.3, 30.0, 1.0, 2).unwrap()).unwrap();
        let hw = simulate(&policy, &generate_trace(0.3, 30.0, 0.0, 2).unwrap()).unwrap();
        assert!(sw.recovery_hours < hw.recovery_hours);
        assert!(sw.wasted_hours < hw.wasted_hours);
    }
}
