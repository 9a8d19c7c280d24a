//! Level plans and their step-count model for a few configurations.
//!
//! ```sh
//! cargo run --release --example plan_table
//! ```

use ais_mlmc::mlmc::{complexity_model, plan_levels, unit_weights};

fn main() {
    for (m, levels, alpha, stop) in [
        (4usize, 2u32, 1.0f64, 0u64),
        (4, 4, 1.0, 1000),
        (2, 6, 1.0, 1000),
        (2, 4, 0.5, 15000),
    ] {
        let plan = plan_levels(m, levels, alpha, 1.0, &unit_weights(levels)).unwrap();
        println!(
            "m {m}  L {levels}  n {}  alpha {alpha}  adaptation stops after {stop}",
            plan.finest_steps
        );
        println!("  level        N_l   steps/sample");
        for ell in 0..=levels {
            println!(
                "  {:5} {:10} {:14}",
                ell,
                plan.sample_sizes[ell as usize],
                plan.steps_per_sample(ell)
            );
        }
        let c = complexity_model(&plan, stop);
        println!(
            "  standard {} steps, adaptive {} steps, ratio {:.4}\n",
            c.steps_standard,
            c.steps_ais,
            c.ratio()
        );
    }
}
