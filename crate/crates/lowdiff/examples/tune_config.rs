//! Checkpoint configuration tuning: the closed-form optimum of the
//! wasted-time model, cross-checked against brute-force grid search, plus the
//! normalized cost table and stepwise runtime adaptation.
//!
//! Run with: cargo run --release --example tune_config

use lowdiff::tuner::{
    adapt, config_table, grid_search, optimal_config, wasted_time, SystemParams,
};

fn main() -> lowdiff::Result<()> {
    let p = SystemParams::table_regime();
    let opt = optimal_config(&p)?;
    let (interval, batch) = opt.in_iterations(&p);
    println!("closed form: f* = {:.3}/h, b* = {:.6} h", opt.f, opt.b);
    println!("in iterations: full checkpoint every {interval}, batch {batch} differentials");
    println!("wasted time at the optimum: {:.4} GPU-hours", wasted_time(&p, opt.f, opt.b)?);

    let cell = grid_search(&p, (opt.f / 10.0, opt.f * 10.0), (opt.b / 10.0, opt.b * 10.0), 400)?;
    println!(
        "grid search (400x400 log grid): f = {:.3}/h, b = {:.6} h, value {:.4}",
        cell.f, cell.b, cell.value
    );

    println!("\nnormalized wasted time (rows: full interval, cols: batch size):");
    print!("{}", config_table(&p, &[10, 20, 50, 100], &[1, 2, 3, 4, 5, 6])?.to_csv());

    // the failure rate doubles: step toward the new optimum
    let shifted = SystemParams { mtbf_hours: p.mtbf_hours / 2.0, ..p };
    let new_opt = optimal_config(&shifted)?;
    println!(
        "\nMTBF halved: target moves to f* = {:.3}/h, b* = {:.6} h",
        new_opt.f, new_opt.b
    );
    let mut cur = (opt.f, opt.b);
    for step in 1..=4 {
        cur = adapt(cur, &shifted)?;
        println!("  adapt step {step}: f = {:.3}/h, b = {:.6} h", cur.0, cur.1);
    }
    Ok(())
}
