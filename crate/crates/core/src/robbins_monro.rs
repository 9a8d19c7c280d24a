//! Projected Robbins-Monro recursion with online Polyak-Ruppert averaging,
//! plus the expanding-truncation (Chen) variant.
//!
//! A [`ThetaState`] is a sequential object: steps must be applied in order by
//! one worker, because each iterate depends on the previous one. Distinct
//! states (one per level) can advance concurrently.

use crate::error::{Error, Result};

/// Step sizes `gamma_k = gamma0 / (k + i0 - 1)^rho` for the k-th update,
/// `k = 1, 2, ...`. With `gamma0 = 1, i0 = 1, rho = 1` the update leaving the
/// i-th iterate (0-based) uses `1 / (i + 1)`.
///
/// `rho` is confined to `(1/2, 1]`, which makes the sequence square-summable
/// but not summable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    gamma0: f64,
    rho: f64,
    offset: u64,
}

impl GainSchedule {
    pub fn new(gamma0: f64, rho: f64, offset: u64) -> Result<Self> {
        if !(gamma0 > 0.0) {
            return Err(Error::invalid("gamma0 must be positive"));
        }
        if !(rho > 0.5 && rho <= 1.0) {
            return Err(Error::invalid(format!(
                "rho = {rho} outside (1/2, 1]: gain sequence would not be admissible"
            )));
        }
        if offset < 1 {
            return Err(Error::invalid("gain offset must be at least 1"));
        }
        Ok(Self {
            gamma0,
            rho,
            offset,
        })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Gain of update `k` (1-based).
    pub fn at(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        self.gamma0 / ((k + self.offset - 1) as f64).powf(self.rho)
    }

    /// Same schedule with a rescaled `gamma0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.gamma0 * factor, self.rho, self.offset)
    }
}

impl Default for GainSchedule {
    /// `1 / (i + 1)` in terms of the 0-based iterate index.
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            rho: 1.0,
            offset: 1,
        }
    }
}

/// Axis-aligned box `[lo_j, hi_j]` with `lo_j < 0 < hi_j`: the projection
/// set, which must contain the origin in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CompactBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid("box bounds must be non-empty and equal length"));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < &0.0 && &0.0 < h) {
                return Err(Error::invalid(
                    "every box interval must contain 0 in its interior",
                ));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `[-half_width, half_width]^dim`.
    pub fn symmetric(half_width: f64, dim: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::invalid("box half-width must be positive"));
        }
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .enumerate()
                .all(|(j, &t)| self.lo[j] <= t && t <= self.hi[j])
    }
}

/// Euclidean projection onto a box: the componentwise clamp.
pub fn project(bounds: &CompactBox, theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| t.clamp(bounds.lo[j], bounds.hi[j]))
        .collect()
}

/// Increasing family of symmetric boxes `[-k0 g^i, k0 g^i]^dim` covering all
/// of space, used by the expanding-truncation variant. `expands_on_reset`
/// selects whether a truncation enlarges the active set (the standard
/// construction) or leaves it fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandingCompacts {
    pub k0: f64,
    pub growth: f64,
    pub expands_on_reset: bool,
}

impl ExpandingCompacts {
    pub fn new(k0: f64, growth: f64, expands_on_reset: bool) -> Result<Self> {
        if !(k0 > 0.0) || !(growth > 1.0) {
            return Err(Error::invalid(
                "expanding compacts need k0 > 0 and growth > 1",
            ));
        }
        Ok(Self {
            k0,
            growth,
            expands_on_reset,
        })
    }

    pub fn half_width(&self, index: u32) -> f64 {
        self.k0 * self.growth.powi(index as i32)
    }

    pub fn contains(&self, index: u32, theta: &[f64]) -> bool {
        let h = self.half_width(index);
        theta.iter().all(|&t| -h <= t && t <= h)
    }
}

impl Default for ExpandingCompacts {
    fn default() -> Self {
        Self {
            k0: 1.0,
            growth: 2.0,
            expands_on_reset: true,
        }
    }
}

/// Current iterate, its running mean, and the step counter of one recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState {
    theta: Vec<f64>,
    /// Componentwise sum of all iterates produced so far (including the
    /// initial one), so the average is exact as accumulated.
    theta_sum: Vec<f64>,
    iter: u64,
    trunc_index: u32,
}

impl ThetaState {
    pub fn new(theta0: Vec<f64>) -> Self {
        let theta_sum = theta0.clone();
        Self {
            theta: theta0,
            theta_sum,
            iter: 0,
            trunc_index: 0,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn iter(&self) -> u64 {
        self.iter
    }
    pub fn trunc_index(&self) -> u32 {
        self.trunc_index
    }

    /// Arithmetic mean of the iterates `theta_0 .. theta_iter`.
    pub fn polyak_average(&self) -> Vec<f64> {
        let count = (self.iter + 1) as f64;
        self.theta_sum.iter().map(|s| s / count).collect()
    }

    fn check_grad(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(Error::invalid("gradient dimension mismatch"));
        }
        if grad.iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalOverflow {
                step: self.iter as usize,
                context: "non-finite gradient sample",
            })
        }
    }

    fn commit(&mut self, theta: Vec<f64>) {
        for (s, t) in self.theta_sum.iter_mut().zip(&theta) {
            *s += t;
        }
        self.theta = theta;
        self.iter += 1;
    }

    /// Projected update `theta <- clamp(theta - gain * grad)`. On a
    /// non-finite gradient the state is left unchanged.
    pub fn projected_step(
        &mut self,
        grad: &[f64],
        gain: f64,
        bounds: &CompactBox,
    ) -> Result<()> {
        if !(gain > 0.0) {
            return Err(Error::invalid("gain must be positive"));
        }
        self.check_grad(grad)?;
        let candidate: Vec<f64> = self
            .theta
            .iter()
            .zip(grad)
            .map(|(&t, &g)| t - gain * g)
            .collect();
        self.commit(project(bounds, &candidate));
        Ok(())
    }

    /// Expanding-truncation update: accept the candidate while it stays in
    /// the active compact, otherwise restart from `theta0` (enlarging the
    /// active compact when the family says so).
    pub fn truncated_step(
        &mut self,
        grad: &[f64],
        gain: f64,
        compacts: &ExpandingCompacts,
        theta0: &[f64],
    ) -> Result<()> {
        if !(gain > 0.0) {
            return Err(Error::invalid("gain must be positive"));
        }
        self.check_grad(grad)?;
        let candidate: Vec<f64> = self
            .theta
            .iter()
            .zip(grad)
            .map(|(&t, &g)| t - gain * g)
            .collect();
        if candidate.iter().all(|c| c.is_finite())
            && compacts.contains(self.trunc_index, &candidate)
        {
            self.commit(candidate);
        } else {
            if compacts.expands_on_reset {
                self.trunc_index += 1;
            }
            self.commit(theta0.to_vec());
        }
        Ok(())
    }
}
