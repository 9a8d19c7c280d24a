//! SDE models and Euler simulation of terminal values.
//!
//! Paths are driven by [`BrownianGrid`]s that can be coarsened by an integer
//! factor, so a fine and a coarse discretization of the same trajectory share
//! one Brownian path. The stepping scheme is the explicit left-endpoint Euler
//! rule; an optional drift tilt `theta` adds `sum_j theta_j sigma_j(x)` to the
//! drift, which is the importance-sampling change of drift. `theta = 0`
//! reproduces the plain scheme bit for bit.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Time-homogeneous diffusion `dX = b(X) dt + sum_j sigma_j(X) dW^j`.
///
/// Implementations write into caller-provided buffers so the stepping loop
/// stays allocation-free.
pub trait SdeModel: Sync {
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;
    fn initial_state(&self) -> &[f64];
    fn horizon(&self) -> f64;
    /// Drift `b(x)`; `out` has length `dim_state`.
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Diffusion column `sigma_j(x)`; `out` has length `dim_state`.
    fn diffusion_col(&self, j: usize, x: &[f64], out: &mut [f64]);
}

/// Extension with first derivatives, needed only by the validation oracle's
/// coupled error-process simulation.
pub trait DifferentiableSde: SdeModel {
    /// Jacobian of the drift, row-major `d x d`.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian of `sigma_j`, row-major `d x d`.
    fn diffusion_col_jacobian(&self, j: usize, x: &[f64], out: &mut [f64]);
}

/// Geometric Brownian motion `dS = r S dt + sigma S dW` (one-dimensional).
#[derive(Debug, Clone)]
pub struct BlackScholes {
    pub spot: f64,
    pub rate: f64,
    pub volatility: f64,
    pub horizon: f64,
    x0: [f64; 1],
}

impl BlackScholes {
    pub fn new(spot: f64, rate: f64, volatility: f64, horizon: f64) -> Result<Self> {
        if !(spot > 0.0) || !(volatility > 0.0) || !(horizon > 0.0) {
            return Err(Error::invalid(
                "Black-Scholes requires spot > 0, volatility > 0, horizon > 0",
            ));
        }
        Ok(Self {
            spot,
            rate,
            volatility,
            horizon,
            x0: [spot],
        })
    }
}

impl SdeModel for BlackScholes {
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.rate * x[0];
    }
    fn diffusion_col(&self, _j: usize, x: &[f64], out: &mut [f64]) {
        out[0] = self.volatility * x[0];
    }
}

impl DifferentiableSde for BlackScholes {
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = self.rate;
    }
    fn diffusion_col_jacobian(&self, _j: usize, _x: &[f64], out: &mut [f64]) {
        out[0] = self.volatility;
    }
}

/// Brownian increments on a uniform grid.
///
/// `endpoint_sum` is accumulated component-wise, left to right over the
/// steps, at generation time. [`coarsen`] copies it unchanged from its input
/// rather than re-summing, so a fine grid and every coarsening of it carry
/// the identical terminal value.
#[derive(Debug, Clone)]
pub struct BrownianGrid {
    steps: usize,
    dim: usize,
    dt: f64,
    /// Row-major `steps x dim`.
    increments: Vec<f64>,
    endpoint_sum: Vec<f64>,
}

impl BrownianGrid {
    /// Build a grid from raw increments (mainly for tests and fixtures).
    pub fn from_increments(increments: Vec<f64>, dim: usize, horizon: f64) -> Result<Self> {
        if dim == 0 || increments.is_empty() || !increments.len().is_multiple_of(dim) {
            return Err(Error::invalid("increment array must be a steps x dim grid"));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let steps = increments.len() / dim;
        let mut endpoint_sum = vec![0.0; dim];
        for k in 0..steps {
            for j in 0..dim {
                endpoint_sum[j] += increments[k * dim + j];
            }
        }
        Ok(Self {
            steps,
            dim,
            dt: horizon / steps as f64,
            increments,
            endpoint_sum,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
    /// Increment of component `j` over step `k`.
    pub fn increment(&self, k: usize, j: usize) -> f64 {
        self.increments[k * self.dim + j]
    }
    /// Increments of step `k`, one value per noise component.
    pub fn step_increments(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }
    /// Terminal Brownian value `W_T`, one component per noise dimension.
    pub fn endpoint_sum(&self) -> &[f64] {
        &self.endpoint_sum
    }
}

/// Draw an `n`-step grid of independent `N(0, T/n)` increments.
pub fn generate_brownian_grid<R: Rng + ?Sized>(
    n: usize,
    q: usize,
    horizon: f64,
    stream: &mut R,
) -> Result<BrownianGrid> {
    if n == 0 || q == 0 {
        return Err(Error::invalid("grid needs at least one step and one noise dim"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let dt = horizon / n as f64;
    let scale = dt.sqrt();
    let mut increments = Vec::with_capacity(n * q);
    let mut endpoint_sum = vec![0.0; q];
    for _ in 0..n {
        for total in endpoint_sum.iter_mut() {
            let z: f64 = stream.sample(StandardNormal);
            let dw = z * scale;
            increments.push(dw);
            *total += dw;
        }
    }
    Ok(BrownianGrid {
        steps: n,
        dim: q,
        dt,
        increments,
        endpoint_sum,
    })
}

/// Merge every `m` consecutive steps into one. The coarse increment over a
/// block is the sum of the fine increments in it; the endpoint is carried
/// over unchanged.
pub fn coarsen(grid: &BrownianGrid, m: usize) -> Result<BrownianGrid> {
    if m == 0 {
        return Err(Error::invalid("refinement factor must be at least 1"));
    }
    if !grid.steps.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "cannot coarsen {} steps by factor {m}",
            grid.steps
        )));
    }
    if m == 1 {
        return Ok(grid.clone());
    }
    let q = grid.dim;
    let coarse_steps = grid.steps / m;
    let mut increments = vec![0.0; coarse_steps * q];
    for block in 0..coarse_steps {
        for fine in 0..m {
            let k = block * m + fine;
            for j in 0..q {
                increments[block * q + j] += grid.increments[k * q + j];
            }
        }
    }
    Ok(BrownianGrid {
        steps: coarse_steps,
        dim: q,
        dt: grid.dt * m as f64,
        increments,
        endpoint_sum: grid.endpoint_sum.clone(),
    })
}

/// Terminal values of a coupled fine/coarse pair built on one Brownian path.
#[derive(Debug, Clone)]
pub struct TerminalPair {
    pub fine_value: Vec<f64>,
    pub coarse_value: Vec<f64>,
    pub level: u32,
    pub refinement: usize,
}

/// Scratch buffers for the stepping loop; reuse across calls to avoid
/// per-path allocation in the estimator loops.
#[derive(Debug, Default, Clone)]
pub struct EulerScratch {
    state: Vec<f64>,
    next: Vec<f64>,
    drift: Vec<f64>,
    column: Vec<f64>,
}

impl EulerScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, d: usize) {
        self.state.resize(d, 0.0);
        self.next.resize(d, 0.0);
        self.drift.resize(d, 0.0);
        self.column.resize(d, 0.0);
    }
}

fn check_tilt<M: SdeModel>(model: &M, theta: &[f64], grid: &BrownianGrid) -> Result<bool> {
    if grid.dim != model.dim_noise() {
        return Err(Error::invalid(format!(
            "grid noise dim {} does not match model noise dim {}",
            grid.dim,
            model.dim_noise()
        )));
    }
    if theta.len() != model.dim_noise() {
        return Err(Error::invalid(format!(
            "tilt has dim {}, model noise dim is {}",
            theta.len(),
            model.dim_noise()
        )));
    }
    Ok(theta.iter().all(|&t| t == 0.0))
}

/// Observer for the debug path-recording hook: `(step_index, state)`.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// Run the tilted Euler scheme to the terminal time, writing the result into
/// `out` (length `dim_state`). `on_step` observes `(step_index, state)` after
/// every step; it is the debug hook for path recording.
pub fn euler_terminal_into<M: SdeModel>(
    model: &M,
    theta: &[f64],
    grid: &BrownianGrid,
    scratch: &mut EulerScratch,
    out: &mut [f64],
    mut on_step: Option<StepObserver<'_>>,
) -> Result<()> {
    let untilted = check_tilt(model, theta, grid)?;
    let d = model.dim_state();
    let q = model.dim_noise();
    scratch.resize(d);
    scratch.state.copy_from_slice(model.initial_state());
    let dt = grid.dt;

    for k in 0..grid.steps {
        model.drift(&scratch.state, &mut scratch.drift);
        for i in 0..d {
            scratch.next[i] = scratch.state[i] + scratch.drift[i] * dt;
        }
        let dw = grid.step_increments(k);
        for j in 0..q {
            model.diffusion_col(j, &scratch.state, &mut scratch.column);
            // The tilt theta_j sigma_j(x) dt folds into the same column:
            // sigma_j(x) (dW_j + theta_j dt).
            let factor = if untilted { dw[j] } else { dw[j] + theta[j] * dt };
            for i in 0..d {
                scratch.next[i] += scratch.column[i] * factor;
            }
        }
        std::mem::swap(&mut scratch.state, &mut scratch.next);
        if !scratch.state.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalOverflow {
                step: k,
                context: "Euler state left the finite range",
            });
        }
        if let Some(f) = on_step.as_deref_mut() {
            f(k, &scratch.state);
        }
    }
    out.copy_from_slice(&scratch.state);
    Ok(())
}

/// Terminal value of the (optionally tilted) Euler scheme on `grid`.
pub fn euler_terminal<M: SdeModel>(
    model: &M,
    theta: &[f64],
    grid: &BrownianGrid,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.dim_state()];
    let mut scratch = EulerScratch::new();
    euler_terminal_into(model, theta, grid, &mut scratch, &mut out, None)?;
    Ok(out)
}

/// Terminal value plus the full path, for debugging and tests.
pub fn euler_terminal_recorded<M: SdeModel>(
    model: &M,
    theta: &[f64],
    grid: &BrownianGrid,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut out = vec![0.0; model.dim_state()];
    let mut scratch = EulerScratch::new();
    let mut path = Vec::with_capacity(grid.steps);
    euler_terminal_into(
        model,
        theta,
        grid,
        &mut scratch,
        &mut out,
        Some(&mut |_, s: &[f64]| path.push(s.to_vec())),
    )?;
    Ok((out, path))
}

/// Coupled fine/coarse terminal values on one Brownian path. `fine_grid`
/// must have `m^level` steps for some `level >= 1`.
pub fn euler_pair<M: SdeModel>(
    model: &M,
    theta: &[f64],
    fine_grid: &BrownianGrid,
    m: usize,
) -> Result<TerminalPair> {
    if m < 2 {
        return Err(Error::invalid("refinement factor must be at least 2"));
    }
    let level = level_of(fine_grid.steps, m).ok_or_else(|| {
        Error::invalid(format!(
            "fine grid has {} steps, not a positive power of {m}",
            fine_grid.steps
        ))
    })?;
    let fine_value = euler_terminal(model, theta, fine_grid)?;
    let coarse_grid = coarsen(fine_grid, m)?;
    let coarse_value = euler_terminal(model, theta, &coarse_grid)?;
    Ok(TerminalPair {
        fine_value,
        coarse_value,
        level,
        refinement: m,
    })
}

/// `log_m(steps)` when `steps` is an exact positive power of `m`.
pub(crate) fn level_of(steps: usize, m: usize) -> Option<u32> {
    if m < 2 || steps < m {
        return None;
    }
    let mut level = 0u32;
    let mut value = 1usize;
    while value < steps {
        value = value.checked_mul(m)?;
        level += 1;
    }
    (value == steps).then_some(level)
}
