//! Wasted-time cost model and checkpoint configuration tuning.
//!
//! Wasted time for a job is recovery overhead plus steady-state checkpointing
//! overhead, as a function of the full-checkpoint frequency `f` (checkpoints
//! per hour) and the differential batching size `b` (expressed in hours of
//! training; the CLI converts iteration counts through the iteration
//! duration):
//!
//! ```text
//! wasted(f, b) = (N*T/M) * (b/2 + R_F + (R_D/2) * (1/(f*b) - 1))
//!              + N*T*S*f / W
//! ```
//!
//! Setting both partials to zero gives the closed-form optimum
//!
//! ```text
//! f* = cbrt(R_D * W^2 / (4 S^2 M^2)),   b* = cbrt(2 S R_D M / W)
//! ```
//!
//! which the module cross-checks against stationarity at the solution and,
//! in tests, against exhaustive grid search. The merge-count term requires
//! f*b <= 1 (at least one batch per full interval); when the closed form
//! lands outside, the constrained optimum on that boundary is reported.

use crate::error::{Error, Result};

/// Cluster and job constants for the cost model. Bandwidth is bytes/hour and
/// all times are hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// GPU count N.
    pub gpus: f64,
    /// Mean time between failures M.
    pub mtbf_hours: f64,
    /// Checkpoint write bandwidth W.
    pub write_bandwidth: f64,
    /// Full checkpoint size S in bytes.
    pub full_size: f64,
    /// Total job runtime T.
    pub total_hours: f64,
    /// Time to load a full checkpoint R_F.
    pub full_load_hours: f64,
    /// Time to merge one differential into the state R_D.
    pub diff_merge_hours: f64,
    /// Seconds per training iteration, for converting iteration-space
    /// configuration to hours.
    pub iter_seconds: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            gpus: 8.0,
            mtbf_hours: 1.0,
            write_bandwidth: 3.6e12, // ~1 GB/s
            full_size: 1.4e9,
            total_hours: 100.0,
            full_load_hours: 0.01,
            diff_merge_hours: 5e-4,
            iter_seconds: 1.0,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gpus", self.gpus),
            ("mtbf_hours", self.mtbf_hours),
            ("write_bandwidth", self.write_bandwidth),
            ("full_size", self.full_size),
            ("total_hours", self.total_hours),
            ("full_load_hours", self.full_load_hours),
            ("diff_merge_hours", self.diff_merge_hours),
            ("iter_seconds", self.iter_seconds),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Parameters whose iteration-scale configuration table has its optimum
    /// in the interior, around a 20-iteration full interval with 2-iteration
    /// batches.
    pub fn table_regime() -> Self {
        Self {
            gpus: 8.0,
            mtbf_hours: 1.0,
            write_bandwidth: 9.072e14,
            full_size: 1.4e9,
            total_hours: 100.0,
            full_load_hours: 0.005,
            diff_merge_hours: 5.556e-5,
            iter_seconds: 1.0,
        }
    }

    pub fn iter_hours(&self) -> f64 {
        self.iter_seconds / 3600.0
    }

    /// Full-checkpoint frequency (per hour) for a checkpoint interval given
    /// in iterations.
    pub fn freq_for_interval(&self, interval_iters: u64) -> f64 {
        1.0 / (interval_iters as f64 * self.iter_hours())
    }

    /// Batch duration in hours for a batching size given in iterations.
    pub fn batch_hours(&self, batch_iters: u64) -> f64 {
        batch_iters as f64 * self.iter_hours()
    }
}

/// Expected wasted GPU-hours for the whole job at configuration (f, b).
pub fn wasted_time(p: &SystemParams, f: f64, b: f64) -> Result<f64> {
    p.validate()?;
    if !(f > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!("f and b must be positive, got f={f} b={b}")));
    }
    if f * b > 1.0 {
        return Err(Error::Domain(format!(
            "f*b = {} exceeds 1: fewer than one batch per full interval",
            f * b
        )));
    }
    let recovery =
        p.gpus * p.total_hours / p.mtbf_hours
            * (b / 2.0 + p.full_load_hours + p.diff_merge_hours / 2.0 * (1.0 / (f * b) - 1.0));
    let steady = p.gpus * p.total_hours * p.full_size * f / p.write_bandwidth;
    Ok(recovery + steady)
}

/// Analytic partial derivatives of [`wasted_time`] with respect to f and b.
pub fn wasted_time_partials(p: &SystemParams, f: f64, b: f64) -> (f64, f64) {
    let nt = p.gpus * p.total_hours;
    let df = nt * p.full_size / p.write_bandwidth
        - nt * p.diff_merge_hours / (2.0 * f * f * p.mtbf_hours * b);
    let db = nt / p.mtbf_hours * (0.5 - p.diff_merge_hours / (2.0 * b * b * f));
    (df, db)
}

#[derive(Debug, Clone, Copy)]
pub struct OptimalConfig {
    /// Recommended frequency (per hour), clamped to the feasible region.
    pub f: f64,
    /// Recommended batch duration (hours), clamped to the feasible region.
    pub b: f64,
    /// Unconstrained stationary point of the cost surface.
    pub unconstrained: (f64, f64),
    /// True when the stationary point violated f*b <= 1 and the boundary
    /// optimum is reported instead.
    pub clamped: bool,
}

impl OptimalConfig {
    /// Whole-iteration view of the optimum: floor or ceiling of each
    /// continuous coordinate, whichever costs less.
    pub fn in_iterations(&self, p: &SystemParams) -> (u64, u64) {
        let pick = |cont: f64, eval: &dyn Fn(u64) -> f64| -> u64 {
            let lo = cont.floor().max(1.0) as u64;
            if eval(lo + 1) < eval(lo) {
                lo + 1
            } else {
                lo
            }
        };
        let interval = pick(1.0 / (self.f * p.iter_hours()), &|i| {
            wasted_time(p, p.freq_for_interval(i), self.b).unwrap_or(f64::INFINITY)
        });
        let batch = pick(self.b / p.iter_hours(), &|bi| {
            wasted_time(p, self.f, p.batch_hours(bi)).unwrap_or(f64::INFINITY)
        });
        (interval, batch.min(interval))
    }
}

/// Closed-form minimizer of the wasted-time surface, verified for
/// stationarity before being returned.
pub fn optimal_config(p: &SystemParams) -> Result<OptimalConfig> {
    p.validate()?;
    let f_star = (p.diff_merge_hours * p.write_bandwidth * p.write_bandwidth
        / (4.0 * p.full_size * p.full_size * p.mtbf_hours * p.mtbf_hours))
        .cbrt();
    let b_star =
        (2.0 * p.full_size * p.diff_merge_hours * p.mtbf_hours / p.write_bandwidth).cbrt();

    // first-order conditions: b^2 f = R_D and f^2 b = R_D W / (2 S M)
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    let cond1 = rel(b_star * b_star * f_star, p.diff_merge_hours);
    let cond2 = rel(
        f_star * f_star * b_star,
        p.diff_merge_hours * p.write_bandwidth / (2.0 * p.full_size * p.mtbf_hours),
    );
    if cond1 > 1e-9 || cond2 > 1e-9 {
        return Err(Error::Domain(format!(
            "stationarity check failed: residuals {cond1:.3e}, {cond2:.3e}"
        )));
    }

    if f_star * b_star > 1.0 {
        // boundary f*b = 1: the merge term vanishes and the remaining
        // tradeoff b/2 vs S*f/W has its own closed form
        let f_c = (p.write_bandwidth / (2.0 * p.full_size * p.mtbf_hours)).sqrt();
        Ok(OptimalConfig {
            f: f_c,
            b: 1.0 / f_c,
            unconstrained: (f_star, b_star),
            clamped: true,
        })
    } else {
        Ok(OptimalConfig { f: f_star, b: b_star, unconstrained: (f_star, b_star), clamped: false })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridCell {
    pub f: f64,
    pub b: f64,
    pub value: f64,
    pub f_index: usize,
    pub b_index: usize,
}

/// Exhaustive argmin of [`wasted_time`] over a log-spaced grid. Cells
/// violating f*b <= 1 are excluded.
pub fn grid_search(
    p: &SystemParams,
    f_range: (f64, f64),
    b_range: (f64, f64),
    resolution: usize,
) -> Result<GridCell> {
    p.validate()?;
    if resolution == 0 {
        return Err(Error::Domain("grid resolution must be at least 1".into()));
    }
    for (name, (lo, hi)) in [("f", f_range), ("b", b_range)] {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Domain(format!("invalid {name} range [{lo}, {hi}]")));
        }
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if resolution == 1 {
            return vec![lo];
        }
        let step = (hi / lo).ln() / (resolution - 1) as f64;
        (0..resolution).map(|i| lo * (step * i as f64).exp()).collect()
    };
    let fs = axis(f_range);
    let bs = axis(b_range);
    let mut best: Option<GridCell> = None;
    for (fi, &f) in fs.iter().enumerate() {
        for (bi, &b) in bs.iter().enumerate() {
            if f * b > 1.0 {
                continue;
            }
            let value = wasted_time(p, f, b)?;
            if best.map_or(true, |c| value < c.value) {
                best = Some(GridCell { f, b, value, f_index: fi, b_index: bi });
            }
        }
    }
    best.ok_or_else(|| Error::Domain("no feasible cell in grid".into()))
}

/// Wasted time tabulated over full-checkpoint intervals (rows, iterations)
/// and batching sizes (columns, iterations), normalized so the best cell
/// reads 1.000.
#[derive(Debug, Clone)]
pub struct ConfigTable {
    pub intervals: Vec<u64>,
    pub batch_sizes: Vec<u64>,
    /// Normalized wasted time, rows[i][j] for intervals[i] x batch_sizes[j].
    pub rows: Vec<Vec<f64>>,
    pub min_cell: (usize, usize),
}

pub fn config_table(
    p: &SystemParams,
    intervals: &[u64],
    batch_sizes: &[u64],
) -> Result<ConfigTable> {
    if intervals.is_empty() || batch_sizes.is_empty() {
        return Err(Error::Domain("config table needs at least one row and column".into()));
    }
    let mut raw = Vec::with_capacity(intervals.len());
    let mut min = f64::INFINITY;
    let mut min_cell = (0, 0);
    for (i, &interval) in intervals.iter().enumerate() {
        let f = p.freq_for_interval(interval);
        let mut row = Vec::with_capacity(batch_sizes.len());
        for (j, &bs) in batch_sizes.iter().enumerate() {
            let value = wasted_time(p, f, p.batch_hours(bs))?;
            if value < min {
                min = value;
                min_cell = (i, j);
            }
            row.push(value);
        }
        raw.push(row);
    }
    let rows = raw
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / min).collect())
        .collect();
    Ok(ConfigTable {
        intervals: intervals.to_vec(),
        batch_sizes: batch_sizes.to_vec(),
        rows,
        min_cell,
    })
}

impl ConfigTable {
    /// CSV with one row per interval; values carry three decimals so the
    /// minimum reads exactly 1.000.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fcf_interval");
        for bs in &self.batch_sizes {
            out.push_str(&format!(",bs_{bs}"));
        }
        out.push('\n');
        for (interval, row) in self.intervals.iter().zip(&self.rows) {
            out.push_str(&interval.to_string());
            for v in row {
                out.push_str(&format!(",{v:.3}"));
            }
            out.push('\n');
        }
        out
    }

    /// True when every row decreases to a single minimum and increases after.
    pub fn rows_unimodal(&self) -> bool {
        self.rows.iter().all(|row| {
            let arg = row
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            row.windows(2).enumerate().all(|(i, w)| if i < arg { w[0] > w[1] } else { w[0] < w[1] })
        })
    }

    /// True when the best cell avoids the edges of the table.
    pub fn min_is_interior(&self) -> bool {
        let (i, j) = self.min_cell;
        i > 0 && i + 1 < self.intervals.len() && j > 0 && j + 1 < self.batch_sizes.len()
    }
}

/// Step factor for runtime adaptation.
const ADAPT_STEP: f64 = 1.25;

/// Move the running configuration one bounded multiplicative step toward the
/// optimum recomputed from the observed parameters. Within one step of the
/// optimum the target is adopted exactly, so the operation is idempotent once
/// converged.
pub fn adapt(current: (f64, f64), observed: &SystemParams) -> Result<(f64, f64)> {
    let opt = optimal_config(observed)?;
    let step_toward = |cur: f64, target: f64| -> f64 {
        let ratio = (target / cur).clamp(1.0 / ADAPT_STEP, ADAPT_STEP);
        cur * ratio
    };
    Ok((step_toward(current.0, opt.f), step_toward(current.1, opt.b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use rand::Rng;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    /// Straight-line re-evaluation of the wasted-time expression.
    fn wasted_oracle(p: &SystemParams, f: f64, b: f64) -> f64 {
        let failures = p.total_hours / p.mtbf_hours;
        let merges = 0.5 * (1.0 / f * (1.0 / b) - 1.0);
        let recovery_per_failure = p.full_load_hours + p.diff_merge_hours * merges + b / 2.0;
        let recovery = p.gpus * failures * recovery_per_failure;
        let steady = p.gpus * p.full_size / p.write_bandwidth * f * p.total_hours;
        recovery + steady
    }

    #[test]
    fn formula_matches_straight_line_oracle() {
        let p = params();
        for (f, b) in [(2.0, 0.01), (9.0, 0.007), (0.5, 0.2), (100.0, 0.002)] {
            let got = wasted_time(&p, f, b).unwrap();
            let want = wasted_oracle(&p, f, b);
            assert!((got - want).abs() / want < 1e-12, "f={f} b={b}: {got} vs {want}");
        }
    }

    #[test]
    fn monotone_in_b_when_merges_free() {
        let p = SystemParams { diff_merge_hours: f64::MIN_POSITIVE, ..params() };
        let f = 1.0;
        let mut last = 0.0;
        for i in 1..=20 {
            let b = i as f64 * 0.01;
            let w = wasted_time(&p, f, b).unwrap();
            assert!(w > last, "b={b}");
            last = w;
        }
    }

    #[test]
    fn gpu_count_scales_globally_and_leaves_argmin_fixed() {
        let p = params();
        let doubled = SystemParams { gpus: 2.0 * p.gpus, ..p };
        for (f, b) in [(2.0, 0.01), (9.0, 0.007)] {
            let w1 = wasted_time(&p, f, b).unwrap();
            let w2 = wasted_time(&doubled, f, b).unwrap();
            assert!((w2 - 2.0 * w1).abs() / w2 < 1e-12);
        }
        let g1 = grid_search(&p, (0.5, 50.0), (1e-3, 0.1), 64).unwrap();
        let g2 = grid_search(&doubled, (0.5, 50.0), (1e-3, 0.1), 64).unwrap();
        assert_eq!((g1.f_index, g1.b_index), (g2.f_index, g2.b_index));
    }

    #[test]
    fn domain_violations_error() {
        let p = params();
        assert!(wasted_time(&p, 0.0, 0.1).is_err());
        assert!(wasted_time(&p, 1.0, -0.1).is_err());
        assert!(wasted_time(&p, 40.0, 0.5).is_err()); // f*b > 1
        assert!(SystemParams { gpus: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn first_order_conditions_hold_at_optimum() {
        let p = params();
        let opt = optimal_config(&p).unwrap();
        assert!(!opt.clamped);
        let (f, b) = (opt.f, opt.b);
        let c1 = b * b * f;
        assert!((c1 - p.diff_merge_hours).abs() / p.diff_merge_hours < 1e-12);
        let rhs = p.diff_merge_hours * p.write_bandwidth / (2.0 * p.full_size * p.mtbf_hours);
        assert!((f * f * b - rhs).abs() / rhs < 1e-12);

        let (df, db) = wasted_time_partials(&p, f, b);
        let scale = p.gpus * p.total_hours * p.full_size / p.write_bandwidth;
        assert!(df.abs() / scale < 1e-9, "df={df}");
        assert!(db.abs() / (p.gpus * p.total_hours / p.mtbf_hours) < 1e-9, "db={db}");
    }

    #[test]
    fn grid_argmin_lands_next_to_closed_form() {
        for case in 0..5u64 {
            let mut rng = keyed_rng(&[case, 1000]);
            let p = SystemParams {
                gpus: rng.gen_range(1.0..64.0),
                mtbf_hours: rng.gen_range(0.2..4.0),
                write_bandwidth: 10f64.powf(rng.gen_range(11.0..13.0)),
                full_size: 10f64.powf(rng.gen_range(8.0..10.0)),
                total_hours: rng.gen_range(10.0..500.0),
                full_load_hours: rng.gen_range(0.001..0.05),
                diff_merge_hours: 10f64.powf(rng.gen_range(-4.5..-3.0)),
                iter_seconds: 1.0,
            };
            let opt = optimal_config(&p).unwrap();
            if opt.clamped {
                continue;
            }
            let res = 200;
            let cell = grid_search(&p, (opt.f / 10.0, opt.f * 10.0), (opt.b / 10.0, opt.b * 10.0), res)
                .unwrap();
            // the optimum sits at the center of a 10x..10x log range: index
            // (res-1)/2 up to one cell of slack
            let center = (res - 1) as f64 / 2.0;
            assert!((cell.f_index as f64 - center).abs() <= 1.0, "case {case}: {}", cell.f_index);
            assert!((cell.b_index as f64 - center).abs() <= 1.0, "case {case}: {}", cell.b_index);
        }
    }

    #[test]
    fn scaling_m_w_s_by_two() {
        let p = params();
        let scaled = SystemParams {
            mtbf_hours: 2.0 * p.mtbf_hours,
            write_bandwidth: 2.0 * p.write_bandwidth,
            full_size: 2.0 * p.full_size,
            ..p
        };
        let a = optimal_config(&p).unwrap();
        let b = optimal_config(&scaled).unwrap();
        assert!((b.f / a.f - 0.25f64.cbrt()).abs() < 1e-12);
        assert!((b.b / a.b - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_returns_its_cell() {
        let p = params();
        let cell = grid_search(&p, (2.0, 2.0), (0.01, 0.01), 1).unwrap();
        assert_eq!((cell.f, cell.b), (2.0, 0.01));
        assert_eq!(cell.value, wasted_time(&p, 2.0, 0.01).unwrap());
    }

    #[test]
    fn clamped_optimum_sits_on_the_boundary() {
        // huge merge cost pushes the stationary point past f*b = 1
        let p = SystemParams { diff_merge_hours: 50.0, full_load_hours: 1.0, ..params() };
        let opt = optimal_config(&p).unwrap();
        assert!(opt.clamped);
        assert!((opt.f * opt.b - 1.0).abs() < 1e-12);
        assert!(opt.unconstrained.0 * opt.unconstrained.1 > 1.0);
    }

    #[test]
    fn table_rows_unimodal_with_interior_minimum() {
        let p = SystemParams::table_regime();
        let table = config_table(&p, &[10, 20, 50, 100], &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(table.rows_unimodal());
        assert!(table.min_is_interior(), "min at {:?}", table.min_cell);
        let (i, j) = table.min_cell;
        assert_eq!(table.rows[i][j], 1.0);
        assert!(table.to_csv().contains("1.000"));
    }

    #[test]
    fn adapt_is_idempotent_at_optimum_and_tracks_changes() {
        let p = params();
        let opt = optimal_config(&p).unwrap();
        let same = adapt((opt.f, opt.b), &p).unwrap();
        assert_eq!(same, (opt.f, opt.b));

        // halved MTBF shrinks the b target by 2^(1/3)
        let shifted = SystemParams { mtbf_hours: p.mtbf_hours / 2.0, ..p };
        let new_opt = optimal_config(&shifted).unwrap();
        assert!((new_opt.b / opt.b - 0.5f64.cbrt()).abs() < 1e-12);
        let mut cur = (opt.f, opt.b);
        let mut dist = (cur.1 / new_opt.b).ln().abs();
        for _ in 0..20 {
            cur = adapt(cur, &shifted).unwrap();
            let next = (cur.1 / new_opt.b).ln().abs();
            assert!(next <= dist + 1e-12);
            dist = next;
        }
        assert!(dist < 1e-9, "converged to the new target");

        // doubled bandwidth grows the f target by 2^(2/3)
        let faster = SystemParams { write_bandwidth: 2.0 * p.write_bandwidth, ..p };
        let f_opt = optimal_config(&faster).unwrap();
        assert!((f_opt.f / opt.f - 4f64.cbrt()).abs() < 1e-12);
    }
}
