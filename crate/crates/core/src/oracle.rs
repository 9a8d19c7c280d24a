//! Independent ground truths for validation: the closed-form Black-Scholes
//! price, the coupled simulation of the discretization-error limit process,
//! variance surfaces with their grid minimizers, and weak-error rate fits.
//!
//! Everything here is deliberately a *separate route* to quantities the
//! estimator modules also produce, so the two sides can be checked against
//! each other.

use crate::error::{Error, Result};
use crate::importance::level_scale;
use crate::rng::{stream, Domain};
use crate::sde::{
    coarsen, euler_terminal_into, generate_brownian_grid, BlackScholes, DifferentiableSde,
    EulerScratch, SdeModel,
};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const PAR_CHUNK: u64 = 4096;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes call instance: spot, strike, rate, volatility, horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    pub s0: f64,
    pub strike: f64,
    pub rate: f64,
    pub sigma: f64,
    pub horizon: f64,
}

impl BsParams {
    pub fn new(s0: f64, strike: f64, rate: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if !(s0 > 0.0 && strike > 0.0 && sigma > 0.0 && horizon > 0.0) {
            return Err(Error::invalid(
                "Black-Scholes parameters require s0, strike, sigma, horizon > 0",
            ));
        }
        Ok(Self {
            s0,
            strike,
            rate,
            sigma,
            horizon,
        })
    }

    /// The benchmark instance used throughout: s0 = 130, K = 100,
    /// r = ln(1.1), sigma = 0.6, T = 1.
    pub fn benchmark() -> Self {
        Self {
            s0: 130.0,
            strike: 100.0,
            rate: 1.1f64.ln(),
            sigma: 0.6,
            horizon: 1.0,
        }
    }

    pub fn dynamics(&self) -> BlackScholes {
        BlackScholes::new(self.s0, self.rate, self.sigma, self.horizon)
            .expect("validated parameters")
    }

    /// Discounted call payoff `e^{-rT} (x - K)_+`.
    pub fn call_payoff(&self) -> impl Fn(&[f64]) -> f64 + Sync + 'static {
        let strike = self.strike;
        let disc = (-self.rate * self.horizon).exp();
        move |x: &[f64]| disc * (x[0] - strike).max(0.0)
    }

    /// Almost-everywhere gradient of the discounted call payoff: the kink at
    /// the strike carries no mass under the terminal law.
    pub fn call_payoff_gradient(&self) -> impl Fn(&[f64]) -> Vec<f64> + Sync + 'static {
        let strike = self.strike;
        let disc = (-self.rate * self.horizon).exp();
        move |x: &[f64]| vec![if x[0] > strike { disc } else { 0.0 }]
    }
}

/// Closed-form discounted call price `e^{-rT} E (S_T - K)_+`.
pub fn bs_exact_call(p: &BsParams) -> f64 {
    let sqrt_t = p.horizon.sqrt();
    let d1 = ((p.s0 / p.strike).ln() + (p.rate + 0.5 * p.sigma * p.sigma) * p.horizon)
        / (p.sigma * sqrt_t);
    let d2 = d1 - p.sigma * sqrt_t;
    p.s0 * normal_cdf(d1) - p.strike * (-p.rate * p.horizon).exp() * normal_cdf(d2)
}

/// One draw of the coupled Euler scheme for the state together with the
/// rescaled-discretization-error limit process: the error companion solves a
/// linear SDE driven by the state's Jacobians, the shared Brownian motion,
/// and an independent auxiliary noise with one component per `(column,
/// column)` pair, and starts at zero.
pub fn simulate_limit_pair<M, R1, R2>(
    model: &M,
    n: usize,
    w_stream: &mut R1,
    aux_stream: &mut R2,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    M: DifferentiableSde,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    let d = model.dim_state();
    let q = model.dim_noise();
    let horizon = model.horizon();
    let dt = horizon / n as f64;
    let sqrt_dt = dt.sqrt();
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;

    let mut x = model.initial_state().to_vec();
    let mut u = vec![0.0; d];
    let mut x_next = vec![0.0; d];
    let mut u_next = vec![0.0; d];
    let mut w_total = vec![0.0; q];
    let mut drift = vec![0.0; d];
    let mut col = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut dw = vec![0.0; q];
    // sigma columns evaluated at the current state, retained for the source term
    let mut cols = vec![0.0; q * d];

    for step in 0..n {
        for (d, total) in dw.iter_mut().zip(w_total.iter_mut()) {
            let z: f64 = w_stream.sample(StandardNormal);
            *d = z * sqrt_dt;
            *total += *d;
        }
        for (j, chunk) in cols.chunks_exact_mut(d).enumerate() {
            model.diffusion_col(j, &x, &mut col);
            chunk.copy_from_slice(&col);
        }

        // state: plain Euler step
        model.drift(&x, &mut drift);
        for i in 0..d {
            x_next[i] = x[i] + drift[i] * dt;
        }
        for j in 0..q {
            for i in 0..d {
                x_next[i] += cols[j * d + i] * dw[j];
            }
        }

        // companion: drift Jacobian times u
        model.drift_jacobian(&x, &mut jac);
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += jac[i * d + k] * u[k];
            }
            u_next[i] = u[i] + acc * dt;
        }
        // diffusion Jacobians: transport of u plus the auxiliary source
        for (j, &dw_j) in dw.iter().enumerate() {
            model.diffusion_col_jacobian(j, &x, &mut jac);
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += jac[i * d + k] * u[k];
                }
                u_next[i] += acc * dw_j;
            }
            for l in 0..q {
                let z: f64 = aux_stream.sample(StandardNormal);
                let dwt = z * sqrt_dt;
                for i in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += jac[i * d + k] * cols[l * d + k];
                    }
                    u_next[i] -= inv_sqrt2 * acc * dwt;
                }
            }
        }

        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut u, &mut u_next);
        if !x.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalOverflow {
                step,
                context: "coupled limit pair left the finite range",
            });
        }
    }
    Ok((x, u, w_total))
}

/// Estimated variance objective on a grid of tilt values.
#[derive(Debug, Clone)]
pub struct VarianceSurface {
    /// Grid points, strictly increasing lexicographically.
    pub thetas: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub samples_per_point: u64,
    /// `None` tags the limit objective, `Some(l)` a per-level one.
    pub level: Option<u32>,
}

/// 1-d grid `lo, lo + spacing, ...` capped at `hi` (inclusive within one
/// spacing's rounding).
pub fn uniform_grid(lo: f64, hi: f64, spacing: f64) -> Result<Vec<Vec<f64>>> {
    if !(spacing > 0.0) || !(hi > lo) {
        return Err(Error::invalid("grid needs hi > lo and positive spacing"));
    }
    let count = ((hi - lo) / spacing).round() as usize;
    Ok((0..=count).map(|k| vec![lo + k as f64 * spacing]).collect())
}

fn validate_grid(grid: &[Vec<f64>]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("theta grid must be non-empty"));
    }
    let dim = grid[0].len();
    if dim == 0 || grid.iter().any(|g| g.len() != dim) {
        return Err(Error::invalid("theta grid points must share one dimension"));
    }
    for w in grid.windows(2) {
        if w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid(
                "theta grid must be strictly increasing lexicographically",
            ));
        }
    }
    Ok(())
}

#[inline]
fn reweight_exponent(theta: &[f64], w: &[f64], horizon: f64) -> f64 {
    let dot: f64 = theta.iter().zip(w).map(|(t, x)| t * x).sum();
    let nsq: f64 = theta.iter().map(|t| t * t).sum();
    -dot + 0.5 * nsq * horizon
}

/// Evaluate `mean(base_i * exp(-theta . w_i + |theta|^2 T / 2))` over the
/// frozen sample set for every grid point, with per-point standard errors.
fn surface_from_samples(
    grid: &[Vec<f64>],
    base: &[f64],
    w: &[f64],
    dim_noise: usize,
    horizon: f64,
    level: Option<u32>,
) -> VarianceSurface {
    let samples = base.len();
    let values_errors: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|theta| {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for i in 0..samples {
                let wi = &w[i * dim_noise..(i + 1) * dim_noise];
                let y = base[i] * reweight_exponent(theta, wi, horizon).exp();
                sum += y;
                sumsq += y * y;
            }
            let mean = sum / samples as f64;
            let var = (sumsq / samples as f64 - mean * mean).max(0.0);
            (mean, (var / samples as f64).sqrt())
        })
        .collect();
    VarianceSurface {
        thetas: grid.to_vec(),
        values: values_errors.iter().map(|v| v.0).collect(),
        std_errors: values_errors.iter().map(|v| v.1).collect(),
        samples_per_point: samples as u64,
        level,
    }
}

/// Limit variance objective on a theta grid: common random numbers across
/// grid points, with the squared projected error `(grad psi(X_T) . U_T)^2`
/// as the base integrand.
pub fn variance_surface<M, G>(
    model: &M,
    payoff_gradient: &G,
    grid: &[Vec<f64>],
    samples: u64,
    n: usize,
    seed: u64,
) -> Result<VarianceSurface>
where
    M: DifferentiableSde,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    validate_grid(grid)?;
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let q = model.dim_noise();
    let horizon = model.horizon();

    let chunk_starts: Vec<u64> = (0..samples).step_by(PAR_CHUNK as usize).collect();
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + PAR_CHUNK).min(samples);
            let mut base = Vec::with_capacity((end - start) as usize);
            let mut ws = Vec::with_capacity((end - start) as usize * q);
            for i in start..end {
                let mut w_rng = stream(seed, Domain::LimitPaths, 0, i);
                let mut aux_rng = stream(seed, Domain::LimitAux, 0, i);
                let (x, u, w) = simulate_limit_pair(model, n, &mut w_rng, &mut aux_rng)?;
                let g = payoff_gradient(&x);
                let dot: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
                base.push(dot * dot);
                ws.extend_from_slice(&w);
            }
            Ok((base, ws))
        })
        .collect();

    let mut base = Vec::with_capacity(samples as usize);
    let mut ws = Vec::with_capacity(samples as usize * q);
    for c in chunks {
        let (b, w) = c?;
        base.extend_from_slice(&b);
        ws.extend_from_slice(&w);
    }
    Ok(surface_from_samples(grid, &base, &ws, q, horizon, None))
}

/// Per-level variance objective on a theta grid, from untilted coupled pairs
/// and exponential reweighting: the base integrand is the squared scaled
/// level difference (level 0: the squared payoff of the one-step scheme).
pub fn level_variance_surface<M, F>(
    model: &M,
    payoff: &F,
    m: usize,
    ell: u32,
    grid: &[Vec<f64>],
    samples: u64,
    seed: u64,
) -> Result<VarianceSurface>
where
    M: SdeModel,
    F: Fn(&[f64]) -> f64 + Sync,
{
    validate_grid(grid)?;
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let q = model.dim_noise();
    let horizon = model.horizon();
    let fine_steps = (m as u64)
        .checked_pow(ell)
        .ok_or_else(|| Error::invalid("m^ell overflows"))? as usize;
    let scale = if ell >= 1 {
        Some(level_scale(m, ell, horizon)?)
    } else {
        None
    };
    let theta_zero = vec![0.0; q];

    let chunk_starts: Vec<u64> = (0..samples).step_by(PAR_CHUNK as usize).collect();
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + PAR_CHUNK).min(samples);
            let mut base = Vec::with_capacity((end - start) as usize);
            let mut ws = Vec::with_capacity((end - start) as usize * q);
            let mut scratch = EulerScratch::new();
            let mut terminal = vec![0.0; model.dim_state()];
            for i in start..end {
                let mut rng = stream(seed, Domain::Oracle, ell as u64, i);
                let grid_w = generate_brownian_grid(fine_steps, q, horizon, &mut rng)?;
                euler_terminal_into(model, &theta_zero, &grid_w, &mut scratch, &mut terminal, None)?;
                let psi_fine = payoff(&terminal);
                let b = match &scale {
                    Some(s) => {
                        let coarse = coarsen(&grid_w, m)?;
                        euler_terminal_into(
                            model,
                            &theta_zero,
                            &coarse,
                            &mut scratch,
                            &mut terminal,
                            None,
                        )?;
                        let d = s.value * (psi_fine - payoff(&terminal));
                        d * d
                    }
                    None => psi_fine * psi_fine,
                };
                base.push(b);
                ws.extend_from_slice(grid_w.endpoint_sum());
            }
            Ok((base, ws))
        })
        .collect();

    let mut base = Vec::with_capacity(samples as usize);
    let mut ws = Vec::with_capacity(samples as usize * q);
    for c in chunks {
        let (b, w) = c?;
        base.extend_from_slice(&b);
        ws.extend_from_slice(&w);
    }
    Ok(surface_from_samples(grid, &base, &ws, q, horizon, Some(ell)))
}

/// Grid point of minimal value; ties go to the lexicographically smallest
/// point (the scan order, since the grid is sorted).
pub fn grid_argmin(surface: &VarianceSurface) -> Result<(Vec<f64>, f64)> {
    if surface.thetas.is_empty() {
        return Err(Error::invalid("empty surface"));
    }
    let mut best = 0usize;
    for (i, v) in surface.values.iter().enumerate() {
        if *v < surface.values[best] {
            best = i;
        }
    }
    Ok((surface.thetas[best].clone(), surface.values[best]))
}

/// Bias measurements and the fitted weak-error rate.
#[derive(Debug, Clone)]
pub struct WeakErrorFit {
    pub step_counts: Vec<u64>,
    pub biases: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Least-squares slope of `log |bias|` against `log n`.
    pub slope: f64,
    pub intercept: f64,
    /// `sign(bias) * exp(intercept)`: the bias constant under the fitted
    /// order `alpha = -slope`.
    pub c_psi: f64,
}

/// Monte Carlo biases of the Euler scheme against a known exact value, with
/// a log-log rate fit. Step counts must each divide the largest so that all
/// of them can be driven by a common set of fine Brownian grids.
pub fn weak_error_fit<M, F>(
    model: &M,
    payoff: &F,
    exact_value: f64,
    step_counts: &[u64],
    samples: u64,
    seed: u64,
) -> Result<WeakErrorFit>
where
    M: SdeModel,
    F: Fn(&[f64]) -> f64 + Sync,
{
    if step_counts.len() < 3 {
        return Err(Error::invalid("need at least three step counts"));
    }
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if counts.len() != step_counts.len() {
        return Err(Error::invalid("step counts must be distinct"));
    }
    if counts[0] == 0 {
        return Err(Error::invalid("step counts must be positive"));
    }
    let n_max = *counts.last().unwrap();
    if counts.iter().any(|n| !n_max.is_multiple_of(*n)) {
        return Err(Error::invalid(
            "every step count must divide the largest one",
        ));
    }
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let q = model.dim_noise();
    let horizon = model.horizon();
    let theta_zero = vec![0.0; q];
    let k = counts.len();

    let chunk_starts: Vec<u64> = (0..samples).step_by(PAR_CHUNK as usize).collect();
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + PAR_CHUNK).min(samples);
            let mut sums = vec![0.0; k];
            let mut sumsqs = vec![0.0; k];
            let mut scratch = EulerScratch::new();
            let mut terminal = vec![0.0; model.dim_state()];
            for i in start..end {
                let mut rng = stream(seed, Domain::WeakError, 0, i);
                let fine = generate_brownian_grid(n_max as usize, q, horizon, &mut rng)?;
                for (ci, &n) in counts.iter().enumerate() {
                    let grid_n = coarsen(&fine, (n_max / n) as usize)?;
                    euler_terminal_into(
                        model,
                        &theta_zero,
                        &grid_n,
                        &mut scratch,
                        &mut terminal,
                        None,
                    )?;
                    let p = payoff(&terminal);
                    sums[ci] += p;
                    sumsqs[ci] += p * p;
                }
            }
            Ok((sums, sumsqs))
        })
        .collect();

    let mut sums = vec![0.0; k];
    let mut sumsqs = vec![0.0; k];
    for p in partials {
        let (s, sq) = p?;
        for i in 0..k {
            sums[i] += s[i];
            sumsqs[i] += sq[i];
        }
    }

    let nf = samples as f64;
    let mut biases = Vec::with_capacity(k);
    let mut std_errors = Vec::with_capacity(k);
    for i in 0..k {
        let mean = sums[i] / nf;
        let var = (sumsqs[i] / nf - mean * mean).max(0.0);
        let se = (var / nf).sqrt();
        let bias = mean - exact_value;
        if bias.abs() <= 3.0 * se {
            return Err(Error::InsufficientResolution(format!(
                "bias at n = {} is {bias:.3e}, within 3 standard errors ({se:.3e}) of zero",
                counts[i]
            )));
        }
        biases.push(bias);
        std_errors.push(se);
    }

    // least squares of log|bias| on log n
    let xs: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = biases.iter().map(|b| b.abs().ln()).collect();
    let xbar = xs.iter().sum::<f64>() / k as f64;
    let ybar = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let c_psi = biases.last().unwrap().signum() * intercept.exp();

    Ok(WeakErrorFit {
        step_counts: counts,
        biases,
        std_errors,
        slope,
        intercept,
        c_psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn benchmark_price_matches_reference_values() {
        let p = BsParams::benchmark();
        let price = bs_exact_call(&p);
        // 30-digit arbitrary-precision evaluation of the closed form
        assert_relative_eq!(price, 49.898574250155994, epsilon = 1e-9);
        // commonly quoted benchmark, printed to fewer correct digits
        assert_relative_eq!(price, 49.898585, epsilon = 2e-5);
    }

    #[test]
    fn tiny_volatility_limit_is_the_forward_payoff() {
        let p = BsParams::new(130.0, 100.0, 1.1f64.ln(), 1e-9, 1.0).unwrap();
        // s0 e^{rT} > K, so the call is worth s0 - K e^{-rT}
        let expected = 130.0 - 100.0 * (-p.rate).exp();
        assert_relative_eq!(bs_exact_call(&p), expected, epsilon = 1e-9);
    }

    #[test]
    fn vanishing_strike_gives_the_spot() {
        let p = BsParams::new(130.0, 1e-12, 1.1f64.ln(), 0.6, 1.0).unwrap();
        assert_relative_eq!(bs_exact_call(&p), 130.0, epsilon = 1e-6);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(-8.0), 6.22096057427178e-16, max_relative = 1e-9);
    }

    #[test]
    fn additive_noise_gives_zero_companion() {
        // b(x) = -x, sigma = const: the diffusion Jacobian vanishes, so the
        // companion has no source and stays at zero.
        struct Ou;
        impl SdeModel for Ou {
            fn dim_state(&self) -> usize {
                1
            }
            fn dim_noise(&self) -> usize {
                1
            }
            fn initial_state(&self) -> &[f64] {
                &[1.0]
            }
            fn horizon(&self) -> f64 {
                1.0
            }
            fn drift(&self, x: &[f64], out: &mut [f64]) {
                out[0] = -x[0];
            }
            fn diffusion_col(&self, _j: usize, _x: &[f64], out: &mut [f64]) {
                out[0] = 0.7;
            }
        }
        impl DifferentiableSde for Ou {
            fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
                out[0] = -1.0;
            }
            fn diffusion_col_jacobian(&self, _j: usize, _x: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
        }
        let mut w = stream(1, Domain::LimitPaths, 0, 0);
        let mut aux = stream(1, Domain::LimitAux, 0, 0);
        let (_, u, _) = simulate_limit_pair(&Ou, 32, &mut w, &mut aux).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn one_step_companion_hand_value() {
        let model = BsParams::benchmark().dynamics();
        let mut w = stream(2, Domain::LimitPaths, 0, 5);
        let mut aux = stream(2, Domain::LimitAux, 0, 5);
        let (x, u, wt) = simulate_limit_pair(&model, 1, &mut w, &mut aux).unwrap();
        // replay the single step by hand
        let mut w2 = stream(2, Domain::LimitPaths, 0, 5);
        let mut aux2 = stream(2, Domain::LimitAux, 0, 5);
        let dw: f64 = w2.sample::<f64, _>(StandardNormal) * 1.0;
        let dwt: f64 = aux2.sample::<f64, _>(StandardNormal) * 1.0;
        assert_relative_eq!(wt[0], dw, epsilon = 1e-15);
        let sig = 0.6;
        let expected_u = -(1.0 / std::f64::consts::SQRT_2) * sig * (sig * 130.0) * dwt;
        assert_relative_eq!(u[0], expected_u, epsilon = 1e-12);
        let expected_x = 130.0 + model.rate * 130.0 + sig * 130.0 * dw;
        assert_relative_eq!(x[0], expected_x, epsilon = 1e-12);
    }

    #[test]
    fn zero_gradient_gives_zero_surface() {
        let model = BsParams::benchmark().dynamics();
        let grad = |_: &[f64]| vec![0.0];
        let grid = uniform_grid(-1.0, 1.0, 0.5).unwrap();
        let s = variance_surface(&model, &grad, &grid, 64, 8, 3).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_payoff_level_surface_vanishes() {
        let model = BsParams::benchmark().dynamics();
        let payoff = |_: &[f64]| 4.5;
        let grid = uniform_grid(-1.0, 1.0, 0.5).unwrap();
        let s = level_variance_surface(&model, &payoff, 4, 2, &grid, 64, 3).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn surfaces_under_common_randomness_are_discretely_convex() {
        let p = BsParams::benchmark();
        let model = p.dynamics();
        let payoff = p.call_payoff();
        let grid = uniform_grid(-1.0, 1.5, 0.05).unwrap();
        let s = level_variance_surface(&model, &payoff, 4, 1, &grid, 4000, 17).unwrap();
        let scale = s.values.iter().cloned().fold(0.0, f64::max);
        for w in s.values.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12 * scale);
        }
    }

    #[test]
    fn grid_argmin_picks_smallest_on_ties() {
        let s = VarianceSurface {
            thetas: vec![vec![-1.0], vec![0.0], vec![1.0]],
            values: vec![3.0, 1.0, 2.0],
            std_errors: vec![0.0; 3],
            samples_per_point: 1,
            level: None,
        };
        let (t, v) = grid_argmin(&s).unwrap();
        assert_eq!(t, vec![0.0]);
        assert_eq!(v, 1.0);

        let tie = VarianceSurface {
            thetas: vec![vec![-1.0], vec![0.0], vec![1.0]],
            values: vec![2.0, 5.0, 2.0],
            std_errors: vec![0.0; 3],
            samples_per_point: 1,
            level: None,
        };
        assert_eq!(grid_argmin(&tie).unwrap().0, vec![-1.0]);
    }

    #[test]
    fn singleton_grid_argmin() {
        let s = VarianceSurface {
            thetas: vec![vec![0.25]],
            values: vec![9.0],
            std_errors: vec![0.0],
            samples_per_point: 1,
            level: Some(1),
        };
        assert_eq!(grid_argmin(&s).unwrap().0, vec![0.25]);
    }

    #[test]
    fn grid_must_be_sorted() {
        let model = BsParams::benchmark().dynamics();
        let grad = |_: &[f64]| vec![0.0];
        let bad = vec![vec![0.5], vec![0.0]];
        assert!(variance_surface(&model, &grad, &bad, 16, 4, 1).is_err());
    }

    #[test]
    fn deterministic_drift_bias_has_unit_slope() {
        // sigma -> 0 turns the scheme into the compounding recursion whose
        // bias against the exact exponential decays like 1/n.
        let model = BlackScholes::new(100.0, 0.1, 1e-12, 1.0).unwrap();
        let payoff = |x: &[f64]| x[0];
        let exact = 100.0 * 0.1f64.exp();
        let fit = weak_error_fit(&model, &payoff, exact, &[4, 8, 16, 32], 50, 7).unwrap();
        assert!(fit.slope > -1.1 && fit.slope < -0.9, "slope {}", fit.slope);
        assert!(fit.c_psi < 0.0); // compounding from below
    }

    #[test]
    fn weak_error_fit_validates_input() {
        let model = BsParams::benchmark().dynamics();
        let payoff = |x: &[f64]| x[0];
        assert!(weak_error_fit(&model, &payoff, 1.0, &[4, 8], 100, 1).is_err());
        assert!(weak_error_fit(&model, &payoff, 1.0, &[4, 8, 12], 100, 1).is_err());
        assert!(weak_error_fit(&model, &payoff, 1.0, &[4, 8, 8], 100, 1).is_err());
    }

    #[test]
    fn indistinguishable_bias_is_reported() {
        // exact value equal to the scheme's own mean at huge noise and tiny
        // samples: the bias cannot clear 3 standard errors
        let p = BsParams::benchmark();
        let model = p.dynamics();
        let payoff = p.call_payoff();
        let fit = weak_error_fit(&model, &payoff, 49.0, &[2, 4, 8], 40, 11);
        assert!(matches!(fit, Err(Error::InsufficientResolution(_))));
    }
}
