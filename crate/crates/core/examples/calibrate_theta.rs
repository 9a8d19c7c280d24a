//! Watch the tilt recursion converge at one level and compare its Polyak
//! average against the oracle grid minimizer.
//!
//! ```sh
//! cargo run --release --example calibrate_theta
//! ```

use ais_mlmc::bench::{run_calibration, RunConfig};

fn main() {
    let mut config = RunConfig::benchmark_default();
    config.stop_iters = 10_000;
    config.seed = 3;
    let level = 3;

    let run = run_calibration(&config, level, 200_000).unwrap();
    println!("level {level}: tilt recursion over {} updates", config.stop_iters);
    println!("\n   iter      theta    average");
    for p in run
        .trajectory
        .iter()
        .filter(|p| p.iter % 1000 == 0 || p.iter == 1 || p.iter == 10)
    {
        println!("{:7} {:10.4} {:10.4}", p.iter, p.theta[0], p.theta_avg[0]);
    }
    println!("\nfinal average    {:8.4}", run.theta_final[0]);
    println!("oracle minimizer {:8.4}", run.oracle_theta[0]);
    println!("distance         {:8.4}", run.distance);
    println!("oracle objective {:8.2}", run.oracle_value);
}
