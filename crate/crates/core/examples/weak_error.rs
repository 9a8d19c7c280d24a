//! Fit the weak-error order of the Euler scheme against the closed-form
//! price.
//!
//! ```sh
//! cargo run --release --example weak_error
//! ```

use ais_mlmc::oracle::{bs_exact_call, weak_error_fit, BsParams};

fn main() {
    let params = BsParams::benchmark();
    let model = params.dynamics();
    let payoff = params.call_payoff();
    let exact = bs_exact_call(&params);

    // n = 32 would need ~1e7 samples before its ~0.17 bias clears the
    // 3-standard-error resolution gate; stay at n <= 16 for a quick demo
    let fit = weak_error_fit(&model, &payoff, exact, &[4, 8, 16], 4_000_000, 41).unwrap();
    println!("      n        bias   std error   n * bias");
    for ((n, bias), se) in fit
        .step_counts
        .iter()
        .zip(&fit.biases)
        .zip(&fit.std_errors)
    {
        println!("{:7} {:+11.5} {:11.5} {:10.3}", n, bias, se, *n as f64 * bias);
    }
    println!("\nfitted slope     {:8.4}  (order-1 scheme: about -1)", fit.slope);
    println!("bias constant    {:8.4}  (n * bias at large n)", fit.c_psi);
}
