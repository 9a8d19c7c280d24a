//! Monte Carlo validation of the simulation and adaptation layers against
//! closed forms and independent estimates.

use ais_mlmc::importance::{girsanov_weight, grad_level0_variance, grad_level_variance, level_scale};
use ais_mlmc::mlmc::{ais_mlmc_estimate, mlmc_estimate, plan_levels, unit_weights, SaConfig};
use ais_mlmc::oracle::{grid_argmin, level_variance_surface, uniform_grid, BsParams};
use ais_mlmc::rng::{stream, Domain};
use ais_mlmc::sde::{coarsen, euler_pair, euler_terminal, generate_brownian_grid, BlackScholes};

fn benchmark_model() -> BlackScholes {
    BsParams::benchmark().dynamics()
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    sxy / sxx
}

#[test]
fn brownian_endpoint_variance_matches_horizon() {
    let n_grids = 1_000_000u64;
    let horizon = 1.0;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..n_grids {
        let mut rng = stream(101, Domain::Paths, 0, i);
        let g = generate_brownian_grid(4, 1, horizon, &mut rng).unwrap();
        let w = g.endpoint_sum()[0];
        sum += w;
        sumsq += w * w;
    }
    let mean = sum / n_grids as f64;
    let var = sumsq / n_grids as f64 - mean * mean;
    assert!(
        (0.995..=1.005).contains(&(var / horizon)),
        "Var(W_T)/T = {}",
        var / horizon
    );
}

#[test]
fn strong_error_rate_against_exact_solution() {
    // E |X_T - X_T^n|^2 ~ K / n for geometric Brownian motion, whose exact
    // terminal value on the same path is s0 exp((r - s^2/2) T + s W_T).
    let model = benchmark_model();
    let (r, sig, s0) = (model.rate, model.volatility, model.spot);
    let steps = [4usize, 8, 16, 32, 64, 128, 256];
    let samples = 100_000u64;
    let mut sq_err = vec![0.0; steps.len()];
    for i in 0..samples {
        let mut rng = stream(55, Domain::Paths, 1, i);
        let fine = generate_brownian_grid(256, 1, 1.0, &mut rng).unwrap();
        let w = fine.endpoint_sum()[0];
        let exact = s0 * ((r - 0.5 * sig * sig) + sig * w).exp();
        for (k, &n) in steps.iter().enumerate() {
            let grid = coarsen(&fine, 256 / n).unwrap();
            let x = euler_terminal(&model, &[0.0], &grid).unwrap()[0];
            sq_err[k] += (x - exact) * (x - exact);
        }
    }
    let xs: Vec<f64> = steps.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = sq_err
        .iter()
        .map(|s| (s / samples as f64).ln())
        .collect();
    let slope = regression_slope(&xs, &ys);
    assert!(
        (-1.3..=-0.7).contains(&slope),
        "strong error slope {slope}"
    );
}

#[test]
fn coupled_pair_gap_decays_at_the_refinement_rate() {
    // E |fine - coarse|^2 ~ m^{-l}
    let model = benchmark_model();
    let m = 2usize;
    let levels = [1u32, 2, 3, 4, 5, 6];
    let samples = 100_000u64;
    let mut gaps = Vec::new();
    for &ell in &levels {
        let n = m.pow(ell);
        let mut acc = 0.0;
        for i in 0..samples {
            let mut rng = stream(56, Domain::Paths, ell as u64, i);
            let grid = generate_brownian_grid(n, 1, 1.0, &mut rng).unwrap();
            let pair = euler_pair(&model, &[0.0], &grid, m).unwrap();
            let d = pair.fine_value[0] - pair.coarse_value[0];
            acc += d * d;
        }
        gaps.push((acc / samples as f64).ln());
    }
    let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let slope = regression_slope(&xs, &gaps);
    let target = -(m as f64).ln();
    assert!(
        (slope - target).abs() <= 0.3,
        "pair gap slope {slope}, expected about {target}"
    );
}

#[test]
fn girsanov_weight_has_unit_mean() {
    let theta = [0.5];
    let horizon = 1.0;
    let n = 1_000_000u64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..n {
        let mut rng = stream(57, Domain::Paths, 0, i);
        let g = generate_brownian_grid(1, 1, horizon, &mut rng).unwrap();
        let w = girsanov_weight(&theta, g.endpoint_sum(), horizon);
        sum += w;
        sumsq += w * w;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - 1.0).abs() <= 3.0 * se,
        "E[weight] = {mean} (se {se})"
    );
}

#[test]
fn reweighted_level_mean_matches_plain_level_mean() {
    // Tilted paths with the weight attached estimate the same level
    // difference as plain paths.
    let model = benchmark_model();
    let payoff = BsParams::benchmark().call_payoff();
    let theta = [0.5];
    let (m, ell) = (4usize, 2u32);
    let samples = 100_000u64;
    let n = m.pow(ell);

    let run = |tilt: &[f64], key: u64| -> (f64, f64) {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..samples {
            let mut rng = stream(key, Domain::Paths, ell as u64, i);
            let grid = generate_brownian_grid(n, 1, 1.0, &mut rng).unwrap();
            let pair = euler_pair(&model, tilt, &grid, m).unwrap();
            let weight = girsanov_weight(tilt, grid.endpoint_sum(), 1.0);
            let term = (payoff(&pair.fine_value) - payoff(&pair.coarse_value)) * weight;
            sum += term;
            sumsq += term * term;
        }
        let mean = sum / samples as f64;
        let var = sumsq / samples as f64 - mean * mean;
        (mean, (var / samples as f64).sqrt())
    };

    let (mean_tilted, se_t) = run(&theta, 58);
    let (mean_plain, se_p) = run(&[0.0], 59);
    let gap = (mean_tilted - mean_plain).abs();
    let se = (se_t * se_t + se_p * se_p).sqrt();
    assert!(gap <= 3.0 * se, "gap {gap}, combined se {se}");
}

#[test]
fn gradient_matches_finite_differences_on_frozen_samples() {
    // On a frozen sample set the average gradient integrand is the exact
    // derivative of the frozen objective; central differences must agree.
    let model = benchmark_model();
    let payoff = BsParams::benchmark().call_payoff();
    let (m, ell) = (4usize, 2u32);
    let scale = level_scale(m, ell, 1.0).unwrap();
    let samples = 2000u64;
    let mut diffs = Vec::new();
    let mut ws = Vec::new();
    for i in 0..samples {
        let mut rng = stream(60, Domain::Paths, ell as u64, i);
        let grid = generate_brownian_grid(m.pow(ell), 1, 1.0, &mut rng).unwrap();
        let pair = euler_pair(&model, &[0.0], &grid, m).unwrap();
        diffs.push(payoff(&pair.fine_value) - payoff(&pair.coarse_value));
        ws.push(grid.endpoint_sum()[0]);
    }
    let objective = |theta: f64| -> f64 {
        diffs
            .iter()
            .zip(&ws)
            .map(|(d, w)| {
                let s = scale.value * d;
                s * s * (-theta * w + 0.5 * theta * theta).exp()
            })
            .sum::<f64>()
            / samples as f64
    };
    let theta = 0.5;
    let grad_avg = diffs
        .iter()
        .zip(&ws)
        .map(|(d, w)| {
            grad_level_variance(&[theta], *d, 0.0, &[*w], &scale).unwrap()[0]
        })
        .sum::<f64>()
        / samples as f64;
    let h = 1e-3;
    let fd = (objective(theta + h) - objective(theta - h)) / (2.0 * h);
    let rel = ((grad_avg - fd) / fd).abs();
    assert!(rel <= 1e-5, "gradient {grad_avg} vs fd {fd}, rel {rel}");
}

#[test]
fn level0_gradient_vanishes_at_the_oracle_minimizer() {
    let p = BsParams::benchmark();
    let model = p.dynamics();
    let payoff = p.call_payoff();
    // staged grid argmin of the level-0 objective: the gradient residual at
    // the reference point scales with the curvature, so the grid needs to be
    // much finer than the coarse search spacing
    let mut t_star = vec![0.0];
    let mut half = 2.0;
    for (spacing, samples) in [(0.05, 200_000u64), (0.002, 400_000), (0.0002, 2_000_000)] {
        let grid = uniform_grid(t_star[0] - half, t_star[0] + half, spacing).unwrap();
        let s = level_variance_surface(&model, &payoff, 4, 0, &grid, samples, 61).unwrap();
        t_star = grid_argmin(&s).unwrap().0;
        half = spacing;
    }

    let samples = 1_000_000u64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..samples {
        let mut rng = stream(62, Domain::Paths, 0, i);
        let grid = generate_brownian_grid(1, 1, 1.0, &mut rng).unwrap();
        let x = euler_terminal(&model, &[0.0], &grid).unwrap();
        let g = grad_level0_variance(&t_star, payoff(&x), grid.endpoint_sum(), 1.0).unwrap()[0];
        sum += g;
        sumsq += g * g;
    }
    let mean = sum / samples as f64;
    let var = sumsq / samples as f64 - mean * mean;
    let se = (var / samples as f64).sqrt();
    assert!(
        mean.abs() <= 3.0 * se,
        "grad at minimizer {mean} (se {se}, theta* {})",
        t_star[0]
    );
}

#[test]
fn adaptive_estimator_reduces_toward_oracle_minimizer() {
    // cheap guard; the acceptance suite runs the full criterion
    let p = BsParams::benchmark();
    let model = p.dynamics();
    let payoff = p.call_payoff();
    let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
    let sa = SaConfig {
        stop_iters: 1500,
        ..SaConfig::default_adaptive(1)
    };
    let report = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 404).unwrap();
    // level 0 and 1 have windows >= 384: their tilts should have moved well
    // into the positive half toward theta* ~ 0.8-0.9
    for l in &report.per_level[..2] {
        assert!(
            l.theta_final[0] > 0.3 && l.theta_final[0] < 1.5,
            "level {} theta {}",
            l.level,
            l.theta_final[0]
        );
    }
}

#[test]
fn second_moment_of_scaled_difference_is_bounded_across_levels() {
    // uniform-integrability flavored check
    let p = BsParams::benchmark();
    let model = p.dynamics();
    let payoff = p.call_payoff();
    let mut moments = Vec::new();
    for ell in 1..=6u32 {
        let s =
            ais_mlmc::mlmc::level_statistics(&model, &payoff, &[0.0], 4, ell, 20_000, 63).unwrap();
        moments.push(s.second_moment);
    }
    let max = moments.iter().cloned().fold(f64::MIN, f64::max);
    let min = moments.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min <= 3.0,
        "scaled second moments spread too far: {moments:?}"
    );
}

#[test]
fn level_statistics_agrees_with_oracle_surface_at_zero_tilt() {
    let p = BsParams::benchmark();
    let model = p.dynamics();
    let payoff = p.call_payoff();
    let (m, ell) = (4usize, 2u32);
    let stats =
        ais_mlmc::mlmc::level_statistics(&model, &payoff, &[0.0], m, ell, 200_000, 64).unwrap();
    let grid = vec![vec![0.0]];
    let surface = level_variance_surface(&model, &payoff, m, ell, &grid, 200_000, 65).unwrap();
    // at zero tilt both routes average iid copies of the same integrand, so
    // their standard errors coincide with the surface's
    let gap = (stats.second_moment - surface.values[0]).abs();
    let se = surface.std_errors[0] * std::f64::consts::SQRT_2;
    assert!(
        gap <= 3.0 * se,
        "second moment {} vs surface {} (se {se})",
        stats.second_moment,
        surface.values[0]
    );
}

#[test]
fn standard_estimator_hits_the_benchmark_price() {
    let p = BsParams::benchmark();
    let model = p.dynamics();
    let payoff = p.call_payoff();
    let plan = plan_levels(4, 4, 1.0, 1.0, &unit_weights(4)).unwrap();
    let reps = 50u64;
    let estimates: Vec<f64> = (1..=reps)
        .map(|rep| {
            mlmc_estimate(&model, &payoff, &plan, 7_000_000 + rep)
                .unwrap()
                .estimate
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let sd = (estimates
        .iter()
        .map(|e| (e - mean) * (e - mean))
        .sum::<f64>()
        / (reps as f64 - 1.0))
        .sqrt();
    let gap = (mean - 49.898585).abs();
    let tol = 3.0 * sd / (reps as f64).sqrt();
    assert!(gap <= tol, "mean {mean} vs benchmark, gap {gap} > {tol}");
}

#[test]
fn disabled_adaptation_is_bitwise_standard_across_configs() {
    let model = benchmark_model();
    let payoff = BsParams::benchmark().call_payoff();
    for (m, levels, seed) in [(2usize, 4u32, 1u64), (3, 2, 2), (4, 2, 3)] {
        let plan = plan_levels(m, levels, 1.0, 1.0, &unit_weights(levels)).unwrap();
        let sa = SaConfig {
            stop_iters: 0,
            ..SaConfig::default_adaptive(1)
        };
        let a = mlmc_estimate(&model, &payoff, &plan, seed).unwrap();
        let b = ais_mlmc_estimate(&model, &payoff, &plan, &sa, seed).unwrap();
        assert!(a.numeric_eq(&b), "mismatch at m={m} L={levels}");
    }
}

#[test]
fn reports_do_not_depend_on_the_thread_count() {
    let model = benchmark_model();
    let payoff = BsParams::benchmark().call_payoff();
    let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
    let sa = SaConfig {
        stop_iters: 100,
        ..SaConfig::default_adaptive(1)
    };
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| ais_mlmc_estimate(&model, &payoff, &plan, &sa, 44).unwrap())
    };
    let one = run_with(1);
    let four = run_with(4);
    assert!(one.numeric_eq(&four));
}

#[test]
fn multi_noise_models_run_end_to_end() {
    // two independent geometric components, basket call payoff
    struct TwoAsset;
    impl ais_mlmc::sde::SdeModel for TwoAsset {
        fn dim_state(&self) -> usize {
            2
        }
        fn dim_noise(&self) -> usize {
            2
        }
        fn initial_state(&self) -> &[f64] {
            &[100.0, 120.0]
        }
        fn horizon(&self) -> f64 {
            1.0
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 0.05 * x[0];
            out[1] = 0.05 * x[1];
        }
        fn diffusion_col(&self, j: usize, x: &[f64], out: &mut [f64]) {
            out[0] = if j == 0 { 0.3 * x[0] } else { 0.0 };
            out[1] = if j == 1 { 0.4 * x[1] } else { 0.0 };
        }
    }
    let payoff = |x: &[f64]| (0.5 * (x[0] + x[1]) - 100.0).max(0.0);
    let plan = plan_levels(2, 3, 1.0, 1.0, &unit_weights(3)).unwrap();
    let sa = SaConfig {
        stop_iters: 60,
        ..SaConfig::default_adaptive(2)
    };
    let report = ais_mlmc_estimate(&TwoAsset, &payoff, &plan, &sa, 5).unwrap();
    assert!(report.estimate.is_finite());
    assert!(report.estimate > 5.0 && report.estimate < 60.0);
    for l in &report.per_level {
        assert_eq!(l.theta_final.len(), 2);
    }
    // zero-tilt reduction holds in two dimensions as well
    let std = mlmc_estimate(&TwoAsset, &payoff, &plan, 5).unwrap();
    let off = ais_mlmc_estimate(
        &TwoAsset,
        &payoff,
        &plan,
        &SaConfig {
            stop_iters: 0,
            ..SaConfig::default_adaptive(2)
        },
        5,
    )
    .unwrap();
    assert!(std.numeric_eq(&off));
}
