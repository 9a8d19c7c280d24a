//! Level planning, the multilevel Euler estimator, and its adaptive
//! importance-sampling variant.
//!
//! The estimator sums a coarse-level empirical mean and telescoping
//! corrections between consecutive discretization levels. Each level owns an
//! independent substream family keyed by `(seed, level, iterate)`, so the
//! result is reproducible bit for bit regardless of thread scheduling, and
//! the adaptive estimator with the tilt disabled (`stop_iters = 0`,
//! `theta0 = 0`) coincides bitwise with the standard one.
//!
//! Inside a level the tilt parameter is learned online: iterate `i` prices
//! with the current (averaged) tilt, then updates the tilt from the same
//! Brownian path's untilted fine/coarse pair. After `stop_iters` updates the
//! tilt freezes and the remaining samples run embarrassingly parallel.

use crate::error::{Error, Result};
use crate::importance::{
    girsanov_weight, grad_level0_variance, grad_level_variance, level_scale, LevelScale,
};
use crate::rng::{stream, Domain};
use crate::robbins_monro::{CompactBox, ExpandingCompacts, GainSchedule, ThetaState};
use crate::sde::{coarsen, euler_terminal_into, generate_brownian_grid, EulerScratch, SdeModel};
use rayon::prelude::*;
use std::time::Instant;

/// Below this many update opportunities a level is left untilted: a handful
/// of noisy steps cannot help and an unlucky one can hurt.
pub const ADAPT_MIN_WINDOW: u64 = 8;

const PAR_CHUNK: u64 = 4096;

/// Refinement `m`, level count `L`, and the per-level sample sizes
/// `N_l = ceil(n^{2 alpha} (m-1) T / (m^l a_l) * sum_{l'=1..L} a_l')`
/// with `n = m^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    pub refinement: usize,
    pub levels: u32,
    pub finest_steps: u64,
    pub alpha: f64,
    pub horizon: f64,
    pub weights: Vec<f64>,
    pub sample_sizes: Vec<u64>,
}

/// `ceil` with a snap to the nearest integer when the floating-point value
/// is within rounding slack of it, so exact-arithmetic cases stay exact.
fn snap_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Sample sizes for a level structure (weights `a_0 .. a_L`, all positive).
pub fn plan_levels(
    m: usize,
    levels: u32,
    alpha: f64,
    horizon: f64,
    weights: &[f64],
) -> Result<LevelPlan> {
    if m < 2 {
        return Err(Error::invalid("refinement factor must be at least 2"));
    }
    if levels < 1 {
        return Err(Error::invalid("need at least one correction level"));
    }
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::invalid("weak-error order alpha must lie in [1/2, 1]"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    if weights.len() != levels as usize + 1 {
        return Err(Error::invalid(format!(
            "need {} level weights, got {}",
            levels + 1,
            weights.len()
        )));
    }
    if !weights.iter().all(|a| *a > 0.0 && a.is_finite()) {
        return Err(Error::invalid("level weights must be positive and finite"));
    }
    let finest_steps = (m as u64)
        .checked_pow(levels)
        .ok_or_else(|| Error::invalid("m^L overflows a 64-bit integer"))?;

    let n = finest_steps as f64;
    let two_alpha = 2.0 * alpha;
    let n_pow = if two_alpha.fract() == 0.0 {
        n.powi(two_alpha as i32)
    } else {
        n.powf(two_alpha)
    };
    let tail_weight: f64 = weights[1..].iter().sum();
    let mut sample_sizes = Vec::with_capacity(levels as usize + 1);
    for (ell, &a) in weights.iter().enumerate() {
        let m_pow = (m as f64).powi(ell as i32);
        let raw = n_pow * (m as f64 - 1.0) * horizon / (m_pow * a) * tail_weight;
        let snapped = snap_ceil(raw);
        if !snapped.is_finite() || !(1.0..=9.0e15).contains(&snapped) {
            return Err(Error::invalid(format!(
                "sample size at level {ell} out of range: {raw}"
            )));
        }
        sample_sizes.push(snapped as u64);
    }
    Ok(LevelPlan {
        refinement: m,
        levels,
        finest_steps,
        alpha,
        horizon,
        weights: weights.to_vec(),
        sample_sizes,
    })
}

/// Convenience: the flat weights `a_l = 1` that minimize the cost model.
pub fn unit_weights(levels: u32) -> Vec<f64> {
    vec![1.0; levels as usize + 1]
}

impl LevelPlan {
    /// Euler steps consumed by one coupled sample of level `ell`
    /// (`m^ell + m^{ell-1}` for a correction level, 1 for level 0).
    pub fn steps_per_sample(&self, ell: u32) -> u64 {
        let m = self.refinement as u64;
        if ell == 0 {
            1
        } else {
            m.pow(ell) + m.pow(ell - 1)
        }
    }
}

/// How the gain scale is chosen per level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainScaling {
    /// Use the schedule's `gamma0` as given.
    Manual,
    /// Divide `gamma0` by the mean gradient magnitude measured over the
    /// first `pilot` samples of the level (during which the tilt is held at
    /// its start value). Makes the step size problem- and level-scale free.
    Auto { pilot: u64 },
}

/// Which recursion confines the iterates.
#[derive(Debug, Clone, PartialEq)]
pub enum SaAlgorithm {
    /// Projection onto a fixed box.
    Projected,
    /// Chen-style expanding truncations.
    Chen(ExpandingCompacts),
}

/// Stochastic-approximation policy used inside the adaptive estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    pub gain: GainSchedule,
    pub gain_scaling: GainScaling,
    pub bounds: CompactBox,
    pub theta0: Vec<f64>,
    /// Updates stop after this many iterates; `0` disables adaptation and
    /// reduces the estimator to plain MLMC.
    pub stop_iters: u64,
    pub averaging: bool,
    pub algorithm: SaAlgorithm,
    /// Seed each correction level's recursion with the previous level's
    /// final tilt (clamped into the constraint sets) instead of restarting
    /// at `theta0`. Levels then run in ascending order rather than in
    /// parallel. Off by default: each level restarts independently.
    pub warm_start: bool,
}

impl SaConfig {
    /// Default adaptive policy: auto-scaled gains `~ 1/(i + 256)^{3/4}`,
    /// box `[-10, 10]^q`, zero start, stop after 1000 iterates, averaging on.
    pub fn default_adaptive(dim_noise: usize) -> Self {
        Self {
            gain: GainSchedule::new(1.0, 0.75, 256).expect("valid default schedule"),
            gain_scaling: GainScaling::Auto { pilot: 64 },
            bounds: CompactBox::symmetric(10.0, dim_noise).expect("valid default box"),
            theta0: vec![0.0; dim_noise],
            stop_iters: 1000,
            averaging: true,
            algorithm: SaAlgorithm::Projected,
            warm_start: false,
        }
    }

    /// Adaptation switched off entirely.
    pub fn disabled(dim_noise: usize) -> Self {
        Self {
            stop_iters: 0,
            ..Self::default_adaptive(dim_noise)
        }
    }

    fn validate(&self, dim_noise: usize) -> Result<()> {
        if self.theta0.len() != dim_noise {
            return Err(Error::invalid("theta0 dimension does not match the model"));
        }
        if self.bounds.dim() != dim_noise {
            return Err(Error::invalid("box dimension does not match the model"));
        }
        if !self.bounds.contains(&self.theta0) {
            return Err(Error::invalid("theta0 must lie in the projection box"));
        }
        if let SaAlgorithm::Chen(c) = &self.algorithm {
            if !c.contains(0, &self.theta0) {
                return Err(Error::invalid("theta0 must lie in the initial compact"));
            }
        }
        Ok(())
    }
}

/// Per-level summary of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: u32,
    pub samples: u64,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub theta_final: Vec<f64>,
    pub overflow_count: u64,
}

/// Output of one estimator run. `estimate` is the sum of the per-level
/// sample means exactly as accumulated, and `euler_steps_total` matches the
/// closed-form prediction of [`complexity_model`] for the same plan.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub per_level: Vec<LevelReport>,
    pub euler_steps_total: u64,
    pub wall_seconds: f64,
    pub seed: u64,
}

impl EstimatorReport {
    /// Everything except the wall clock, for bitwise comparisons.
    pub fn numeric_eq(&self, other: &Self) -> bool {
        self.estimate.to_bits() == other.estimate.to_bits()
            && self.euler_steps_total == other.euler_steps_total
            && self.seed == other.seed
            && self.per_level.len() == other.per_level.len()
            && self
                .per_level
                .iter()
                .zip(&other.per_level)
                .all(|(a, b)| {
                    a.level == b.level
                        && a.samples == b.samples
                        && a.sample_mean.to_bits() == b.sample_mean.to_bits()
                        && a.sample_variance.to_bits() == b.sample_variance.to_bits()
                        && a.overflow_count == b.overflow_count
                        && a.theta_final.len() == b.theta_final.len()
                        && a.theta_final
                            .iter()
                            .zip(&b.theta_final)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}

/// Effective number of update opportunities at a level.
pub fn adaptation_window(samples: u64, stop_iters: u64) -> u64 {
    let w = samples.min(stop_iters);
    if w >= ADAPT_MIN_WINDOW {
        w
    } else {
        0
    }
}

/// The per-level adaptation state machine: a pilot phase that measures the
/// gradient scale (under auto scaling), then projected or truncated updates.
/// Both the estimator and the standalone calibration runs drive this, so
/// they stay in lockstep by construction.
pub struct LevelAdapter<'a> {
    sa: &'a SaConfig,
    state: ThetaState,
    schedule: GainSchedule,
    pilot_len: u64,
    pilot_sum: f64,
    pilot_count: u64,
    offered: u64,
}

impl<'a> LevelAdapter<'a> {
    pub fn new(sa: &'a SaConfig, window: u64) -> Self {
        let pilot_len = match (window, sa.gain_scaling) {
            (0, _) | (_, GainScaling::Manual) => 0,
            (w, GainScaling::Auto { pilot }) => pilot.min(w / 4).max(1),
        };
        Self {
            sa,
            state: ThetaState::new(sa.theta0.clone()),
            schedule: sa.gain,
            pilot_len,
            pilot_sum: 0.0,
            pilot_count: 0,
            offered: 0,
        }
    }

    /// Raw current iterate: the evaluation point for gradient samples.
    pub fn theta_raw(&self) -> &[f64] {
        self.state.theta()
    }

    /// The tilt the estimator prices with right now.
    pub fn theta_for_estimator(&self) -> Vec<f64> {
        if self.sa.averaging {
            self.state.polyak_average()
        } else {
            self.state.theta().to_vec()
        }
    }

    pub fn polyak_average(&self) -> Vec<f64> {
        self.state.polyak_average()
    }

    pub fn updates_taken(&self) -> u64 {
        self.state.iter()
    }

    /// Consume one iterate's gradient sample (`None` when the sample
    /// overflowed; the update is skipped but the iterate still counts).
    pub fn advance(&mut self, grad: Option<&[f64]>) -> Result<()> {
        self.offered += 1;
        if self.pilot_len > 0 && self.offered <= self.pilot_len {
            if let Some(g) = grad {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm.is_finite() {
                    self.pilot_sum += norm;
                    self.pilot_count += 1;
                }
            }
            if self.offered == self.pilot_len {
                let mean = if self.pilot_count > 0 {
                    self.pilot_sum / self.pilot_count as f64
                } else {
                    0.0
                };
                if mean > 0.0 && mean.is_finite() {
                    self.schedule = self.schedule.scaled(1.0 / mean)?;
                }
            }
            return Ok(());
        }
        if let Some(g) = grad {
            let gain = self.schedule.at(self.state.iter() + 1);
            let outcome = match &self.sa.algorithm {
                SaAlgorithm::Projected => self.state.projected_step(g, gain, &self.sa.bounds),
                SaAlgorithm::Chen(compacts) => {
                    self.state.truncated_step(g, gain, compacts, &self.sa.theta0)
                }
            };
            match outcome {
                Ok(()) | Err(Error::NumericalOverflow { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

/// Deterministic step-count model.
///
/// `steps_standard` charges one coupled pair per iterate. The adaptive
/// estimator additionally simulates the untilted pair for every iterate in
/// the adaptation window (the update integrand needs it), so its cost is
/// `steps_standard + sum_l window_l * cost_l`; after the window only the
/// tilted pair is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityModel {
    pub steps_standard: u64,
    pub steps_ais: u64,
}

impl ComplexityModel {
    pub fn ratio(&self) -> f64 {
        self.steps_ais as f64 / self.steps_standard as f64
    }
}

pub fn complexity_model(plan: &LevelPlan, stop_iters: u64) -> ComplexityModel {
    let mut standard = 0u64;
    let mut extra = 0u64;
    for ell in 0..=plan.levels {
        let cost = plan.steps_per_sample(ell);
        let n = plan.sample_sizes[ell as usize];
        standard += n * cost;
        extra += adaptation_window(n, stop_iters) * cost;
    }
    ComplexityModel {
        steps_standard: standard,
        steps_ais: standard + extra,
    }
}

struct LevelOutcome {
    report: LevelReport,
    euler_steps: u64,
}

struct Accum {
    sum: f64,
    sumsq: f64,
    kept: u64,
    overflow: u64,
}

impl Accum {
    fn new() -> Self {
        Self {
            sum: 0.0,
            sumsq: 0.0,
            kept: 0,
            overflow: 0,
        }
    }
    fn add(&mut self, term: f64) {
        if term.is_finite() {
            self.sum += term;
            self.sumsq += term * term;
            self.kept += 1;
        } else {
            self.overflow += 1;
        }
    }
    fn merge(&mut self, other: &Accum) {
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self.kept += other.kept;
        self.overflow += other.overflow;
    }
}

/// One coupled sample: terminal payoffs of the (optionally tilted) Euler
/// pair on a fresh keyed grid, plus the Brownian endpoint.
struct SampleCtx<'a, M: SdeModel> {
    model: &'a M,
    level: u32,
    horizon: f64,
}

impl<'a, M: SdeModel> SampleCtx<'a, M> {
    /// Simulate the pair under tilt `theta`; returns `(psi_fine, psi_coarse,
    /// w_endpoint)` with `psi_coarse = 0` at level 0. `Err` means the path
    /// overflowed.
    #[allow(clippy::too_many_arguments)]
    fn simulate<F: Fn(&[f64]) -> f64>(
        &self,
        payoff: &F,
        theta: &[f64],
        grid: &crate::sde::BrownianGrid,
        coarse: Option<&crate::sde::BrownianGrid>,
        scratch: &mut EulerScratch,
        out: &mut [f64],
    ) -> Result<(f64, f64)> {
        euler_terminal_into(self.model, theta, grid, scratch, out, None)?;
        let psi_fine = payoff(out);
        let psi_coarse = if let Some(cg) = coarse {
            euler_terminal_into(self.model, theta, cg, scratch, out, None)?;
            payoff(out)
        } else {
            0.0
        };
        Ok((psi_fine, psi_coarse))
    }

    fn term(&self, psi_fine: f64, psi_coarse: f64, theta: &[f64], w: &[f64]) -> f64 {
        let weight = girsanov_weight(theta, w, self.horizon);
        if self.level == 0 {
            psi_fine * weight
        } else {
            (psi_fine - psi_coarse) * weight
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_level<M: SdeModel, F: Fn(&[f64]) -> f64 + Sync>(
    model: &M,
    payoff: &F,
    plan: &LevelPlan,
    level: u32,
    sa: &SaConfig,
    seed: u64,
) -> Result<LevelOutcome> {
    let m = plan.refinement;
    let q = model.dim_noise();
    let horizon = plan.horizon;
    let n_samples = plan.sample_sizes[level as usize];
    let fine_steps = (m as u64).pow(level) as usize;
    let ctx = SampleCtx {
        model,
        level,
        horizon,
    };
    let scale: Option<LevelScale> = if level >= 1 {
        Some(level_scale(m, level, horizon)?)
    } else {
        None
    };

    let window = adaptation_window(n_samples, sa.stop_iters);

    let mut acc = Accum::new();
    let mut steps: u64 = 0;
    let mut adapter = LevelAdapter::new(sa, window);
    let mut scratch = EulerScratch::new();
    let mut terminal = vec![0.0; model.dim_state()];
    let theta_zero = vec![0.0; q];

    // Sequential phase: price with the current tilt, then update it from the
    // untilted pair of the same Brownian path.
    for i in 1..=window {
        let mut rng = stream(seed, Domain::Paths, level as u64, i);
        let grid = generate_brownian_grid(fine_steps, q, horizon, &mut rng)?;
        let coarse = if level >= 1 {
            Some(coarsen(&grid, m)?)
        } else {
            None
        };
        let theta_used = adapter.theta_for_estimator();

        match ctx.simulate(
            payoff,
            &theta_used,
            &grid,
            coarse.as_ref(),
            &mut scratch,
            &mut terminal,
        ) {
            Ok((pf, pc)) => acc.add(ctx.term(pf, pc, &theta_used, grid.endpoint_sum())),
            Err(Error::NumericalOverflow { .. }) => acc.overflow += 1,
            Err(e) => return Err(e),
        }
        steps += plan.steps_per_sample(level);

        // Untilted pair for the gradient sample.
        let untilted = ctx.simulate(
            payoff,
            &theta_zero,
            &grid,
            coarse.as_ref(),
            &mut scratch,
            &mut terminal,
        );
        steps += plan.steps_per_sample(level);
        let grad = match untilted {
            Ok((pf, pc)) => {
                let g = match &scale {
                    Some(s) => {
                        grad_level_variance(adapter.theta_raw(), pf, pc, grid.endpoint_sum(), s)
                    }
                    None => {
                        grad_level0_variance(adapter.theta_raw(), pf, grid.endpoint_sum(), horizon)
                    }
                };
                match g {
                    Ok(g) => Some(g),
                    Err(Error::NumericalOverflow { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::NumericalOverflow { .. }) => None,
            Err(e) => return Err(e),
        };
        adapter.advance(grad.as_deref())?;
    }

    let theta_frozen = if window > 0 {
        adapter.theta_for_estimator()
    } else {
        sa.theta0.clone()
    };

    // Frozen phase: embarrassingly parallel over fixed chunks, merged in
    // chunk order so the result is independent of the thread count.
    if n_samples > window {
        let first = window + 1;
        let chunk_starts: Vec<u64> = (first..=n_samples).step_by(PAR_CHUNK as usize).collect();
        let partials: Vec<Result<(Accum, u64)>> = chunk_starts
            .par_iter()
            .map(|&start| {
                let end = (start + PAR_CHUNK - 1).min(n_samples);
                let mut acc = Accum::new();
                let mut steps = 0u64;
                let mut scratch = EulerScratch::new();
                let mut terminal = vec![0.0; model.dim_state()];
                for i in start..=end {
                    let mut rng = stream(seed, Domain::Paths, level as u64, i);
                    let grid = generate_brownian_grid(fine_steps, q, horizon, &mut rng)?;
                    let coarse = if level >= 1 {
                        Some(coarsen(&grid, m)?)
                    } else {
                        None
                    };
                    match ctx.simulate(
                        payoff,
                        &theta_frozen,
                        &grid,
                        coarse.as_ref(),
                        &mut scratch,
                        &mut terminal,
                    ) {
                        Ok((pf, pc)) => {
                            acc.add(ctx.term(pf, pc, &theta_frozen, grid.endpoint_sum()))
                        }
                        Err(Error::NumericalOverflow { .. }) => acc.overflow += 1,
                        Err(e) => return Err(e),
                    }
                    steps += plan.steps_per_sample(level);
                }
                Ok((acc, steps))
            })
            .collect();
        for partial in partials {
            let (chunk_acc, chunk_steps) = partial?;
            acc.merge(&chunk_acc);
            steps += chunk_steps;
        }
    }

    let mean = if acc.kept > 0 {
        acc.sum / acc.kept as f64
    } else {
        0.0
    };
    let variance = if acc.kept > 1 {
        ((acc.sumsq - acc.sum * acc.sum / acc.kept as f64) / (acc.kept as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };

    Ok(LevelOutcome {
        report: LevelReport {
            level,
            samples: n_samples,
            sample_mean: mean,
            sample_variance: variance,
            theta_final: theta_frozen,
            overflow_count: acc.overflow,
        },
        euler_steps: steps,
    })
}

fn run_estimator<M: SdeModel, F: Fn(&[f64]) -> f64 + Sync>(
    model: &M,
    payoff: &F,
    plan: &LevelPlan,
    sa: &SaConfig,
    seed: u64,
) -> Result<EstimatorReport> {
    sa.validate(model.dim_noise())?;
    if plan.horizon != model.horizon() {
        return Err(Error::invalid(format!(
            "plan horizon {} does not match model horizon {}",
            plan.horizon,
            model.horizon()
        )));
    }
    let started = Instant::now();
    let mut per_level = Vec::with_capacity(plan.levels as usize + 1);
    let mut euler_steps_total = 0u64;
    let mut estimate = 0.0f64;
    if sa.warm_start {
        // each level seeds the next one's recursion, so they run in order
        let mut sa_level = sa.clone();
        for level in 0..=plan.levels {
            let LevelOutcome {
                report,
                euler_steps,
            } = run_level(model, payoff, plan, level, &sa_level, seed)?;
            let mut next_start = crate::robbins_monro::project(&sa.bounds, &report.theta_final);
            if let SaAlgorithm::Chen(compacts) = &sa.algorithm {
                let h = compacts.half_width(0);
                for t in next_start.iter_mut() {
                    *t = t.clamp(-h, h);
                }
            }
            sa_level.theta0 = next_start;
            estimate += report.sample_mean;
            euler_steps_total += euler_steps;
            per_level.push(report);
        }
    } else {
        let outcomes: Vec<Result<LevelOutcome>> = (0..=plan.levels)
            .into_par_iter()
            .map(|level| run_level(model, payoff, plan, level, sa, seed))
            .collect();
        for outcome in outcomes {
            let LevelOutcome {
                report,
                euler_steps,
            } = outcome?;
            estimate += report.sample_mean;
            euler_steps_total += euler_steps;
            per_level.push(report);
        }
    }
    let report = EstimatorReport {
        estimate,
        per_level,
        euler_steps_total,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    };

    let total: u64 = report.per_level.iter().map(|l| l.samples).sum();
    let overflowed: u64 = report.per_level.iter().map(|l| l.overflow_count).sum();
    if overflowed as f64 > 1e-3 * total as f64 {
        return Err(Error::EstimationDegraded {
            overflowed,
            total,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Standard multilevel Euler estimator (all paths untilted).
pub fn mlmc_estimate<M: SdeModel, F: Fn(&[f64]) -> f64 + Sync>(
    model: &M,
    payoff: &F,
    plan: &LevelPlan,
    seed: u64,
) -> Result<EstimatorReport> {
    let sa = SaConfig::disabled(model.dim_noise());
    run_estimator(model, payoff, plan, &sa, seed)
}

/// Adaptive importance-sampling multilevel estimator. With `stop_iters = 0`
/// and `theta0 = 0` this is bitwise identical to [`mlmc_estimate`] under the
/// same seed.
pub fn ais_mlmc_estimate<M: SdeModel, F: Fn(&[f64]) -> f64 + Sync>(
    model: &M,
    payoff: &F,
    plan: &LevelPlan,
    sa: &SaConfig,
    seed: u64,
) -> Result<EstimatorReport> {
    run_estimator(model, payoff, plan, sa, seed)
}

/// Empirical mean/variance diagnostics of the scaled reweighted level
/// difference `r_l (psi(fine) - psi(coarse)) exp(-theta.W - |theta|^2 T/2)`
/// under drift tilt `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStatistics {
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    pub samples: u64,
    pub overflow_count: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn level_statistics<M: SdeModel, F: Fn(&[f64]) -> f64 + Sync>(
    model: &M,
    payoff: &F,
    theta: &[f64],
    m: usize,
    ell: u32,
    samples: u64,
    seed: u64,
) -> Result<LevelStatistics> {
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if ell < 1 {
        return Err(Error::invalid("level statistics are defined for ell >= 1"));
    }
    let horizon = model.horizon();
    let q = model.dim_noise();
    let scale = level_scale(m, ell, horizon)?;
    let fine_steps = (m as u64).pow(ell) as usize;

    let chunk_starts: Vec<u64> = (1..=samples).step_by(PAR_CHUNK as usize).collect();
    let partials: Vec<Result<Accum>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + PAR_CHUNK - 1).min(samples);
            let mut acc = Accum::new();
            let mut scratch = EulerScratch::new();
            let mut terminal = vec![0.0; model.dim_state()];
            for i in start..=end {
                let mut rng = stream(seed, Domain::LevelStats, ell as u64, i);
                let grid = generate_brownian_grid(fine_steps, q, horizon, &mut rng)?;
                let coarse = coarsen(&grid, m)?;
                let fine_ok = euler_terminal_into(
                    model, theta, &grid, &mut scratch, &mut terminal, None,
                );
                let psi_fine = match fine_ok {
                    Ok(()) => payoff(&terminal),
                    Err(Error::NumericalOverflow { .. }) => {
                        acc.overflow += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                match euler_terminal_into(model, theta, &coarse, &mut scratch, &mut terminal, None)
                {
                    Ok(()) => {}
                    Err(Error::NumericalOverflow { .. }) => {
                        acc.overflow += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
                let psi_coarse = payoff(&terminal);
                let weight = girsanov_weight(theta, grid.endpoint_sum(), horizon);
                acc.add(scale.value * (psi_fine - psi_coarse) * weight);
            }
            Ok(acc)
        })
        .collect();

    let mut acc = Accum::new();
    for p in partials {
        acc.merge(&p?);
    }
    if acc.kept < 2 {
        return Err(Error::invalid("all samples overflowed"));
    }
    let kept = acc.kept as f64;
    let mean = acc.sum / kept;
    let second_moment = acc.sumsq / kept;
    let variance = ((acc.sumsq - acc.sum * acc.sum / kept) / (kept - 1.0)).max(0.0);
    Ok(LevelStatistics {
        mean,
        variance,
        second_moment,
        samples: acc.kept,
        overflow_count: acc.overflow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::BlackScholes;
    use approx::assert_relative_eq;

    fn bench_model() -> BlackScholes {
        BlackScholes::new(130.0, 1.1f64.ln(), 0.6, 1.0).unwrap()
    }

    fn call(strike: f64, rate: f64, horizon: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        let disc = (-rate * horizon).exp();
        move |x: &[f64]| disc * (x[0] - strike).max(0.0)
    }

    #[test]
    fn plan_matches_hand_arithmetic() {
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        assert_eq!(plan.finest_steps, 16);
        assert_eq!(plan.sample_sizes, vec![1536, 384, 96]);

        let plan = plan_levels(2, 1, 0.5, 1.0, &unit_weights(1)).unwrap();
        assert_eq!(plan.sample_sizes, vec![2, 1]);
    }

    #[test]
    fn plan_sizes_non_increasing_with_unit_weights() {
        for (m, levels) in [(2usize, 6u32), (3, 4), (4, 5), (5, 3)] {
            let plan = plan_levels(m, levels, 1.0, 1.0, &unit_weights(levels)).unwrap();
            for w in plan.sample_sizes.windows(2) {
                assert!(w[0] >= w[1], "plan {:?}", plan.sample_sizes);
            }
        }
    }

    #[test]
    fn plan_rejects_bad_arguments() {
        assert!(plan_levels(1, 2, 1.0, 1.0, &unit_weights(2)).is_err());
        assert!(plan_levels(4, 0, 1.0, 1.0, &[1.0]).is_err());
        assert!(plan_levels(4, 2, 0.4, 1.0, &unit_weights(2)).is_err());
        assert!(plan_levels(4, 2, 1.0, 1.0, &[1.0, 1.0]).is_err());
        assert!(plan_levels(4, 2, 1.0, 1.0, &[1.0, -1.0, 1.0]).is_err());
        assert!(plan_levels(2, 63, 1.0, 1.0, &unit_weights(63)).is_err());
    }

    #[test]
    fn complexity_hand_value() {
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        let c = complexity_model(&plan, 0);
        assert_eq!(c.steps_standard, 1536 + 384 * 5 + 96 * 20);
        assert_eq!(c.steps_standard, 5376);
        assert_eq!(c.steps_ais, c.steps_standard);

        let c = complexity_model(&plan, 1000);
        // windows: min(1536,1000)=1000, min(384,1000)=384, min(96,1000)=96
        assert_eq!(c.steps_ais, 5376 + 1000 + 384 * 5 + 96 * 20);
    }

    #[test]
    fn constant_payoff_is_exact() {
        let model = bench_model();
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        let payoff = |_: &[f64]| 7.0;
        let report = mlmc_estimate(&model, &payoff, &plan, 99).unwrap();
        assert_eq!(report.estimate, 7.0);
        for l in &report.per_level[1..] {
            assert_eq!(l.sample_mean, 0.0);
            assert_eq!(l.sample_variance, 0.0);
        }
        // theta frozen at zero keeps it exact for the adaptive estimator too
        let sa = SaConfig {
            stop_iters: 0,
            ..SaConfig::default_adaptive(1)
        };
        let r2 = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 99).unwrap();
        assert_eq!(r2.estimate, 7.0);
    }

    #[test]
    fn two_sample_estimate_is_the_hand_computed_sum() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        let mut plan = plan_levels(4, 1, 1.0, 1.0, &unit_weights(1)).unwrap();
        plan.sample_sizes = vec![1, 1];
        let seed = 1234;
        let report = mlmc_estimate(&model, &payoff, &plan, seed).unwrap();

        // rebuild both terms by hand from the same substreams
        let mut rng0 = stream(seed, Domain::Paths, 0, 1);
        let g0 = generate_brownian_grid(1, 1, 1.0, &mut rng0).unwrap();
        let x0 = crate::sde::euler_terminal(&model, &[0.0], &g0).unwrap();
        let mut rng1 = stream(seed, Domain::Paths, 1, 1);
        let g1 = generate_brownian_grid(4, 1, 1.0, &mut rng1).unwrap();
        let pair = crate::sde::euler_pair(&model, &[0.0], &g1, 4).unwrap();
        let expected = payoff(&x0) + (payoff(&pair.fine_value) - payoff(&pair.coarse_value));
        assert_eq!(report.estimate, expected);
    }

    #[test]
    fn telescoping_sum_matches_estimate_bitwise() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        let report = mlmc_estimate(&model, &payoff, &plan, 5).unwrap();
        let mut total = 0.0;
        for l in &report.per_level {
            total += l.sample_mean;
        }
        assert_eq!(report.estimate.to_bits(), total.to_bits());
    }

    #[test]
    fn disabled_adaptation_is_bitwise_standard() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        let sa = SaConfig {
            stop_iters: 0,
            ..SaConfig::default_adaptive(1)
        };
        let a = mlmc_estimate(&model, &payoff, &plan, 42).unwrap();
        let b = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 42).unwrap();
        assert!(a.numeric_eq(&b));
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    }

    #[test]
    fn estimator_reproduces_bitwise_across_runs() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        let plan = plan_levels(2, 3, 1.0, 1.0, &unit_weights(3)).unwrap();
        let sa = SaConfig {
            stop_iters: 50,
            ..SaConfig::default_adaptive(1)
        };
        let a = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 7).unwrap();
        let b = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 7).unwrap();
        assert!(a.numeric_eq(&b));
    }

    #[test]
    fn counters_match_complexity_model() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        for (m, levels, stop) in [(2usize, 3u32, 0u64), (2, 4, 37), (4, 2, 1000), (3, 2, 5)] {
            let plan = plan_levels(m, levels, 1.0, 1.0, &unit_weights(levels)).unwrap();
            let cm = complexity_model(&plan, stop);
            let std = mlmc_estimate(&model, &payoff, &plan, 3).unwrap();
            assert_eq!(std.euler_steps_total, cm.steps_standard);
            let sa = SaConfig {
                stop_iters: stop,
                ..SaConfig::default_adaptive(1)
            };
            let ais = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 3).unwrap();
            assert_eq!(ais.euler_steps_total, cm.steps_ais);
        }
    }

    #[test]
    fn level_statistics_constant_payoff_vanishes() {
        let model = bench_model();
        let payoff = |_: &[f64]| 3.25;
        let s = level_statistics(&model, &payoff, &[0.4], 4, 2, 100, 9).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);
    }

    #[test]
    fn level_statistics_validates_input() {
        let model = bench_model();
        let payoff = |_: &[f64]| 1.0;
        assert!(level_statistics(&model, &payoff, &[0.0], 4, 0, 100, 9).is_err());
        assert!(level_statistics(&model, &payoff, &[0.0], 4, 1, 1, 9).is_err());
    }

    #[test]
    fn warm_start_seeds_levels_in_order() {
        let model = bench_model();
        let payoff = call(100.0, model.rate, 1.0);
        let plan = plan_levels(4, 2, 1.0, 1.0, &unit_weights(2)).unwrap();
        let sa = SaConfig {
            stop_iters: 400,
            warm_start: true,
            ..SaConfig::default_adaptive(1)
        };
        let warm = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 21).unwrap();
        let cold = ais_mlmc_estimate(
            &model,
            &payoff,
            &plan,
            &SaConfig {
                warm_start: false,
                ..sa.clone()
            },
            21,
        )
        .unwrap();
        // identical cost accounting, different recursions past level 0
        assert_eq!(warm.euler_steps_total, cold.euler_steps_total);
        assert_eq!(
            warm.per_level[0].sample_mean.to_bits(),
            cold.per_level[0].sample_mean.to_bits()
        );
        assert_ne!(
            warm.per_level[1].theta_final[0].to_bits(),
            cold.per_level[1].theta_final[0].to_bits()
        );
        // warm start replays bitwise
        let again = ais_mlmc_estimate(&model, &payoff, &plan, &sa, 21).unwrap();
        assert!(warm.numeric_eq(&again));
    }

    #[test]
    fn adapter_with_zero_gradients_stays_at_start() {
        let sa = SaConfig::default_adaptive(1);
        let mut adapter = LevelAdapter::new(&sa, 100);
        let zeros = vec![0.0];
        for _ in 0..100 {
            adapter.advance(Some(&zeros)).unwrap();
            assert_eq!(adapter.theta_raw(), &[0.0]);
            assert_eq!(adapter.polyak_average(), vec![0.0]);
        }
    }

    #[test]
    fn snap_ceil_handles_near_integers() {
        assert_eq!(snap_ceil(383.99999999999), 384.0);
        assert_eq!(snap_ceil(384.00000000001), 384.0);
        assert_eq!(snap_ceil(384.2), 385.0);
        assert_relative_eq!(snap_ceil(0.1), 1.0);
    }
}
