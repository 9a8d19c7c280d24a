//! Variance and cost of the standard multilevel estimator against the
//! adaptive importance-sampling one, over repeated runs.
//!
//! ```sh
//! cargo run --release --example standard_vs_adaptive
//! ```

use ais_mlmc::bench::rep_seed;
use ais_mlmc::mlmc::{
    ais_mlmc_estimate, complexity_model, mlmc_estimate, plan_levels, unit_weights, SaConfig,
};
use ais_mlmc::oracle::{bs_exact_call, BsParams};

fn main() {
    let params = BsParams::benchmark();
    let model = params.dynamics();
    let payoff = params.call_payoff();
    let exact = bs_exact_call(&params);
    let reps = 100u64;

    println!("   L      n   method        mean     variance       RMSE  euler_steps  cost ratio");
    for levels in [2u32, 3, 4] {
        let plan = plan_levels(4, levels, 1.0, params.horizon, &unit_weights(levels)).unwrap();
        let cm = complexity_model(&plan, 1000);

        let mut variances = [0.0f64; 2];
        for (which, label) in ["standard", "adaptive"].iter().enumerate() {
            let estimates: Vec<f64> = (1..=reps)
                .map(|rep| {
                    let seed = rep_seed(10 + which as u64, levels, rep);
                    if which == 0 {
                        mlmc_estimate(&model, &payoff, &plan, seed).unwrap().estimate
                    } else {
                        let sa = SaConfig::default_adaptive(1);
                        ais_mlmc_estimate(&model, &payoff, &plan, &sa, seed)
                            .unwrap()
                            .estimate
                    }
                })
                .collect();
            let mean = estimates.iter().sum::<f64>() / reps as f64;
            let var = estimates
                .iter()
                .map(|e| (e - mean) * (e - mean))
                .sum::<f64>()
                / (reps as f64 - 1.0);
            let rmse = (estimates
                .iter()
                .map(|e| (e - exact) * (e - exact))
                .sum::<f64>()
                / reps as f64)
                .sqrt();
            variances[which] = var;
            let steps = if which == 0 {
                cm.steps_standard
            } else {
                cm.steps_ais
            };
            println!(
                "{:4} {:6}   {:8} {:10.4} {:12.5} {:10.4} {:12} {:11.3}",
                levels,
                plan.finest_steps,
                label,
                mean,
                var,
                rmse,
                steps,
                cm.ratio()
            );
        }
        println!(
            "     variance ratio adaptive/standard: {:.3}\n",
            variances[1] / variances[0]
        );
    }
}
