//! Failure-injection comparison: effective training time ratio of four
//! checkpointing policies as failures become more frequent, and the
//! simulator's agreement with the analytic wasted-time model.
//!
//! Run with: cargo run --release --example failure_sweep

use lowdiff::sim::{
    comparison_params, comparison_policies, mean_over_seeds, sweep, sweep_csv, PolicyModel,
    SweepAxis, SweepConfig,
};
use lowdiff::tuner::{optimal_config, wasted_time, SystemParams};

fn main() -> lowdiff::Result<()> {
    let p = comparison_params();
    let policies = comparison_policies(&p)?;
    let cfg = SweepConfig { seeds: 100, ..SweepConfig::default() };

    let axis: Vec<SweepAxis> =
        [0.1, 0.3, 0.5, 1.0, 2.0, 5.0].iter().map(|&m| SweepAxis::Mtbf(m)).collect();
    let rows = sweep(&policies, &p, &axis, &cfg)?;
    print!("{}", sweep_csv(&rows));

    // cross-check the simulator against the closed-form expectation
    println!("\nsimulated vs analytic wasted hours (cost-model policy):");
    let opt = optimal_config(&p)?;
    let reference = PolicyModel::cost_model_reference(&p, opt.f, opt.b);
    let quiet = SweepConfig { seeds: 100, software_fraction: 0.0, ..SweepConfig::default() };
    for mtbf in [0.5, 1.0, 2.0] {
        let (_, sim) = mean_over_seeds(&reference, mtbf, &quiet)?;
        let matched = SystemParams { mtbf_hours: mtbf, total_hours: quiet.horizon_hours, ..p };
        let analytic = wasted_time(&matched, opt.f, opt.b)? / matched.gpus;
        println!(
            "  mtbf {mtbf:3.1} h: simulated {sim:7.4}, analytic {analytic:7.4}, rel err {:5.1}%",
            100.0 * (sim - analytic).abs() / analytic
        );
    }
    Ok(())
}
