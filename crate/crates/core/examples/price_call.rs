//! Price a European call with the adaptive estimator and compare against
//! the closed form.
//!
//! ```sh
//! cargo run --release --example price_call
//! ```

use ais_mlmc::mlmc::{ais_mlmc_estimate, plan_levels, unit_weights, SaConfig};
use ais_mlmc::oracle::{bs_exact_call, BsParams};

fn main() {
    let params = BsParams::benchmark(); // s0 130, K 100, r ln(1.1), sigma 0.6, T 1
    let model = params.dynamics();
    let payoff = params.call_payoff();
    let exact = bs_exact_call(&params);

    let plan = plan_levels(4, 4, 1.0, params.horizon, &unit_weights(4)).unwrap();
    println!("refinement 4, levels 4, finest step count {}", plan.finest_steps);
    println!("per-level sample sizes {:?}", plan.sample_sizes);

    let sa = SaConfig::default_adaptive(model_noise_dim(&model));
    let report = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 7).unwrap();

    println!("\nestimate      {:12.6}", report.estimate);
    println!("closed form   {exact:12.6}");
    println!("abs error     {:12.6}", (report.estimate - exact).abs());
    println!("euler steps   {:12}", report.euler_steps_total);
    println!("wall seconds  {:12.3}", report.wall_seconds);
    println!("\nlevel    N          mean       variance   tilt");
    for l in &report.per_level {
        println!(
            "{:5} {:8} {:+12.5} {:12.4} {:8.3}",
            l.level, l.samples, l.sample_mean, l.sample_variance, l.theta_final[0]
        );
    }
}

fn model_noise_dim(model: &impl ais_mlmc::sde::SdeModel) -> usize {
    model.dim_noise()
}
