//! Estimate the per-level variance objectives and the limiting one on a
//! tilt grid, and print their minimizers side by side.
//!
//! ```sh
//! cargo run --release --example variance_surfaces
//! ```

use ais_mlmc::oracle::{
    grid_argmin, level_variance_surface, uniform_grid, variance_surface, BsParams,
};

fn main() {
    let params = BsParams::benchmark();
    let model = params.dynamics();
    let payoff = params.call_payoff();
    let payoff_gradient = params.call_payoff_gradient();
    let grid = uniform_grid(-2.0, 3.0, 0.05).unwrap();
    let samples = 100_000;

    println!("level   theta*   v(theta*)     v(0)   reduction");
    for ell in [0u32, 1, 2, 3, 4] {
        let surface =
            level_variance_surface(&model, &payoff, 4, ell, &grid, samples, 21).unwrap();
        let (theta, value) = grid_argmin(&surface).unwrap();
        let at_zero = surface
            .thetas
            .iter()
            .position(|t| t[0] == 0.0)
            .map(|i| surface.values[i])
            .unwrap();
        println!(
            "{:5} {:8.2} {:11.2} {:8.2} {:10.3}",
            ell,
            theta[0],
            value,
            at_zero,
            value / at_zero
        );
    }

    let limit = variance_surface(&model, &payoff_gradient, &grid, samples, 256, 22).unwrap();
    let (theta, value) = grid_argmin(&limit).unwrap();
    let at_zero = limit
        .thetas
        .iter()
        .position(|t| t[0] == 0.0)
        .map(|i| limit.values[i])
        .unwrap();
    println!(
        "limit {:8.2} {:11.2} {:8.2} {:10.3}",
        theta[0],
        value,
        at_zero,
        value / at_zero
    );
    println!("\nthe limit row is the variance constant of the adaptive CLT;");
    println!("per-level minimizers drift toward the limit minimizer as the level grows");
}
