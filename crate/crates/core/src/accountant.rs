//! Zero-concentrated DP accounting.
//!
//! Every randomized step of the pipeline is either a Gaussian mechanism or
//! an exponential mechanism, both of which have a closed-form zCDP cost.
//! Costs compose additively; the per-cluster costs additionally compose
//! through overlapping parallel composition, where a record that sits in at
//! most `L` clusters pays `L` times the per-cluster cost.
//!
//! The full budget is
//!
//! ```text
//! rho = K / (2 sigma_h^2) + L * (eps_theta^2 / 8 + 1 / (2 sigma_mu^2) + (T / 2) (c / tau)^2)
//! ```
//!
//! and is converted to `(epsilon, delta)`-DP with
//! `epsilon = rho + sqrt(4 rho ln(1/delta))`.

use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A zCDP cost `rho >= 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZcdpCost(f64);

impl ZcdpCost {
    pub const ZERO: ZcdpCost = ZcdpCost(0.0);

    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::Parameter(format!(
                "zCDP rho must be finite and nonnegative, got {rho}"
            )));
        }
        Ok(ZcdpCost(rho))
    }

    pub fn rho(self) -> f64 {
        self.0
    }
}

impl Add for ZcdpCost {
    type Output = ZcdpCost;

    fn add(self, rhs: ZcdpCost) -> ZcdpCost {
        ZcdpCost(self.0 + rhs.0)
    }
}

impl Sum for ZcdpCost {
    fn sum<I: Iterator<Item = ZcdpCost>>(iter: I) -> ZcdpCost {
        iter.fold(ZcdpCost::ZERO, Add::add)
    }
}

/// A target `(epsilon, delta)`-DP guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpTarget {
    epsilon: f64,
    delta: f64,
}

impl DpTarget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        check_delta(delta)?;
        Ok(DpTarget { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Cost of the Gaussian mechanism: `sensitivity^2 / (2 sigma^2)`.
pub fn gaussian_rho(l2_sensitivity: f64, sigma: f64) -> Result<ZcdpCost> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "Gaussian sigma must be positive, got {sigma}"
        )));
    }
    if !(l2_sensitivity.is_finite() && l2_sensitivity >= 0.0) {
        return Err(Error::Parameter(format!(
            "L2 sensitivity must be nonnegative, got {l2_sensitivity}"
        )));
    }
    ZcdpCost::new(l2_sensitivity * l2_sensitivity / (2.0 * sigma * sigma))
}

/// Noise scale that makes the Gaussian mechanism cost exactly `rho`.
pub fn gaussian_sigma_for(l2_sensitivity: f64, rho: f64) -> Result<f64> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Parameter(format!(
            "rho must be positive to calibrate Gaussian noise, got {rho}"
        )));
    }
    Ok(l2_sensitivity / (2.0 * rho).sqrt())
}

/// Cost of the exponential mechanism with parameter `epsilon`: `epsilon^2 / 8`.
pub fn exponential_rho(epsilon: f64) -> Result<ZcdpCost> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Parameter(format!(
            "exponential mechanism epsilon must be nonnegative, got {epsilon}"
        )));
    }
    ZcdpCost::new(epsilon * epsilon / 8.0)
}

pub fn compose_sequential(costs: impl IntoIterator<Item = ZcdpCost>) -> ZcdpCost {
    costs.into_iter().sum()
}

/// Overlapping parallel composition: each record appears in at most `overlap`
/// of the parallel branches, each of which costs at most `per_branch`.
pub fn compose_overlapping_parallel(per_branch: ZcdpCost, overlap: u32) -> ZcdpCost {
    ZcdpCost(per_branch.0 * f64::from(overlap))
}

/// Converts `rho`-zCDP to `(epsilon, delta)`-DP.
pub fn zcdp_to_dp(cost: ZcdpCost, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let rho = cost.0;
    Ok(rho + (4.0 * rho * (1.0 / delta).ln()).sqrt())
}

/// The largest `rho` whose conversion at `target.delta` yields `target.epsilon`.
pub fn dp_to_zcdp(target: DpTarget) -> ZcdpCost {
    let log_inv_delta = (1.0 / target.delta).ln();
    let root = (target.epsilon + log_inv_delta).sqrt() - log_inv_delta.sqrt();
    ZcdpCost(root * root)
}

/// Per-token cost of sampling from `softmax(z / tau)` where every record moves
/// `z` by at most `clip` in sup-norm. This is an exponential mechanism with
/// `epsilon = 2 c / tau`, i.e. `(c / tau)^2 / 2`.
pub fn token_rho(clip: f64, tau: f64) -> f64 {
    let ratio = clip / tau;
    0.5 * ratio * ratio
}

/// The static cost breakdown of one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub rho_hist: f64,
    pub eps_theta: f64,
    pub rho_mu: f64,
    pub rho_pred: f64,
    pub overlap: u32,
    pub tokens: u32,
}

impl PrivacyLedger {
    /// Cost of retrieval inside one cluster: threshold selection plus the
    /// noisy embedding sum.
    pub fn rho_retrieval(&self) -> f64 {
        self.eps_theta * self.eps_theta / 8.0 + self.rho_mu
    }

    pub fn per_cluster(&self) -> ZcdpCost {
        ZcdpCost(self.rho_retrieval() + self.rho_pred)
    }

    pub fn total(&self) -> ZcdpCost {
        compose_sequential([
            ZcdpCost(self.rho_hist),
            compose_overlapping_parallel(self.per_cluster(), self.overlap),
        ])
    }

    pub fn total_rho(&self) -> f64 {
        self.total().rho()
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        zcdp_to_dp(self.total(), delta)
    }

    /// Sets the prediction term from a clip bound and temperature over
    /// `tokens` sampled tokens.
    pub fn with_prediction(mut self, clip: f64, tau: f64, tokens: u32) -> Self {
        self.tokens = tokens;
        self.rho_pred = f64::from(tokens) * token_rho(clip, tau);
        self
    }

    /// zCDP left for private prediction once every other term is paid for.
    pub fn residual(&self, target: DpTarget) -> f64 {
        dp_to_zcdp(target).rho() - self.rho_hist - f64::from(self.overlap) * self.rho_retrieval()
    }
}

/// Solves for the sampling temperature that spends exactly the residual
/// budget: `tau = c * sqrt(T * L / (2 rho_res))`.
///
/// The prediction term already present in `base` is ignored.
pub fn solve_temperature(
    base: &PrivacyLedger,
    target: DpTarget,
    clip: f64,
    tokens: u32,
) -> Result<f64> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(Error::Parameter(format!(
            "clip bound must be positive, got {clip}"
        )));
    }
    if tokens == 0 {
        return Err(Error::Parameter("token budget T must be at least 1".into()));
    }
    if base.overlap == 0 {
        return Err(Error::Parameter(
            "overlap L must be at least 1 to solve for a temperature".into(),
        ));
    }
    let residual = base.residual(target);
    if residual <= 0.0 {
        return Err(Error::InfeasibleBudget {
            shortfall: -residual,
        });
    }
    Ok(clip * (f64::from(tokens) * f64::from(base.overlap) / (2.0 * residual)).sqrt())
}
