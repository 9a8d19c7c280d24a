//! Per-level moments of the coupled difference: the raw variance decays
//! like m^-level while the rescaled second moment stays bounded.
//!
//! ```sh
//! cargo run --release --example level_decay
//! ```

use ais_mlmc::importance::level_scale;
use ais_mlmc::mlmc::level_statistics;
use ais_mlmc::oracle::BsParams;

fn main() {
    let params = BsParams::benchmark();
    let model = params.dynamics();
    let payoff = params.call_payoff();
    let m = 4usize;

    println!("level   Var[diff]   log_m Var   scaled 2nd moment");
    let mut prev: Option<f64> = None;
    for ell in 1..=6u32 {
        let stats = level_statistics(&model, &payoff, &[0.0], m, ell, 40_000, 31).unwrap();
        let r = level_scale(m, ell, params.horizon).unwrap().value;
        let unscaled = stats.variance / (r * r);
        let log_m = unscaled.ln() / (m as f64).ln();
        let drop = prev.map(|p| format!("  (step {:+.3})", log_m - p)).unwrap_or_default();
        println!(
            "{:5} {:11.4} {:11.4} {:15.1}{drop}",
            ell, unscaled, log_m, stats.second_moment
        );
        prev = Some(log_m);
    }
    println!("\nlog_m variance should fall by about 1 per level (order-1 coupling),");
    println!("while the rescaled second moment converges to the limit objective at zero tilt");
}
