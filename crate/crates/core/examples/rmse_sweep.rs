//! RMSE against cost for the standard and adaptive estimators over a range
//! of level counts, writing the replication rows to CSV.
//!
//! ```sh
//! cargo run --release --example rmse_sweep
//! ```

use ais_mlmc::bench::{run_rmse_sweep, write_csv_file, Method, RunConfig};
use std::path::Path;

fn main() {
    let levels = [2u32, 3, 4];
    let mut all_rows = Vec::new();
    for method in [Method::Standard, Method::Ais] {
        let mut config = RunConfig::benchmark_default();
        config.method = method;
        config.repetitions = 30;
        config.seed = 99;
        let outcome = run_rmse_sweep(&config, &levels).unwrap();
        println!("method {method}");
        println!("   L      n        RMSE   euler_steps");
        for s in &outcome.summaries {
            println!(
                "{:4} {:6} {:11.5} {:13}",
                s.levels, s.finest_steps, s.rmse, s.total_euler_steps
            );
        }
        println!();
        all_rows.extend(outcome.rows);
    }
    let out = Path::new("rmse_sweep.csv");
    write_csv_file(&all_rows, out).unwrap();
    println!("wrote {} rows to {}", all_rows.len(), out.display());
}
