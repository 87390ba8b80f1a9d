//! Closed-form references: the two-asset incomplete market with log
//! utility and the classical Merton problem.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::market::{MarketParams, PathArray, PathGrid};
use crate::quadrature::normal_expectation;

/// Pathwise closed forms for the two-asset example.
#[derive(Debug, Clone)]
pub struct Example1Paths {
    /// `X*_t = x Z^β_t`.
    pub wealth: PathArray,
    /// Shares in the first asset, `θ̂^β_t`.
    pub theta_beta: PathArray,
    /// Large-β limit `θ̂^∞_t`.
    pub theta_infinity: PathArray,
}

/// First-asset share count at the robust optimum,
/// `θ̂^β_t = x e^{−β θ₁² T / (2(1+β)²)} (β/(1+β)) b₁ Z^β_t / (σ₁² S¹_t)`,
/// with `Z^β = E(β/(1+β) θ₁ W̃¹)` and `W̃¹_t = W¹_t + θ₁ t`.
pub fn example1_closed_form(params: &MarketParams, grid: &PathGrid, x: f64) -> Result<Example1Paths> {
    if params.dim != 2 || grid.dim != 2 {
        return Err(invalid("market", "the closed form needs exactly two assets"));
    }
    if params.drift.values.len() != 1 || params.has_discounting() || params.alpha != 0.0 {
        return Err(invalid("market", "the closed form needs constant drift, δ ≡ 0 and α = 0"));
    }
    if params.sigma(0, 1) != 0.0 || params.sigma(1, 0) != 0.0 {
        return Err(invalid("market.sigma", "the closed form needs a diagonal volatility"));
    }
    if !(x > 0.0) {
        return Err(invalid("market.x0", "initial wealth must be positive"));
    }
    let beta = params.beta;
    let b1 = params.drift.values[0][0];
    let s1 = params.sigma(0, 0);
    let theta = b1 / s1;
    let q = if beta.is_infinite() { 1.0 } else { beta / (1.0 + beta) };
    let level = if beta.is_infinite() {
        1.0
    } else {
        (-beta / (1.0 + beta).powi(2) * theta * theta * params.horizon / 2.0).exp()
    };
    let cols = grid.steps + 1;
    let w = |m: usize, n: usize| grid.brownian(m, n)[0];
    let z_beta = PathArray::from_fn(grid.paths, cols, |m, n| {
        let t = grid.time(n);
        let wt = w(m, n) + theta * t;
        (q * theta * wt - 0.5 * q * q * theta * theta * t).exp()
    });
    let wealth = z_beta.map(|z| x * z);
    let theta_beta = PathArray::from_fn(grid.paths, cols, |m, n| {
        x * level * q * b1 * z_beta.at(m, n) / (s1 * s1 * grid.price(m, n)[0])
    });
    let theta_infinity = PathArray::from_fn(grid.paths, cols, |m, n| {
        let t = grid.time(n);
        let z_tilde = (-theta * w(m, n) - 0.5 * theta * theta * t).exp();
        x * b1 / (s1 * s1 * z_tilde * grid.price(m, n)[0])
    });
    Ok(Example1Paths {
        wealth,
        theta_beta,
        theta_infinity,
    })
}

/// Log-utility Merton benchmark.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MertonReference {
    pub value: f64,
    pub proportion: f64,
}

/// Proportion `b/σ²` and value `E[log(x / Z̃_T)]` by Gauss–Hermite quadrature.
pub fn merton_log_reference(x: f64, b: f64, sigma: f64, horizon: f64) -> Result<MertonReference> {
    if !(x > 0.0 && sigma > 0.0 && horizon >= 0.0) {
        return Err(invalid("market", "need x > 0, σ > 0 and T ≥ 0"));
    }
    let theta = b / sigma;
    let value = normal_expectation(32, |g| {
        x.ln() + theta * horizon.sqrt() * g + 0.5 * theta * theta * horizon
    });
    Ok(MertonReference {
        value,
        proportion: b / (sigma * sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate_paths;

    fn example_market(beta: f64) -> MarketParams {
        MarketParams::new(vec![0.1, 0.05], vec![vec![0.2, 0.0], vec![0.0, 0.3]], beta, 1.0).unwrap()
    }

    #[test]
    fn initial_values() {
        let p = example_market(1.0);
        let g = simulate_paths(&p, 4, 8, 3).unwrap();
        let e = example1_closed_form(&p, &g, 1.0).unwrap();
        let pinned = (-(1.0f64 / 4.0) * 0.01 / (2.0 * 0.04)).exp() * 0.5 * (0.1 / 0.04);
        for m in 0..8 {
            assert_eq!(e.wealth.at(m, 0), 1.0);
            assert!((e.theta_beta.at(m, 0) - pinned).abs() < 1e-14);
            assert!((e.theta_infinity.at(m, 0) - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let p = MarketParams::new(vec![0.1], vec![vec![0.2]], 1.0, 1.0).unwrap();
        let g = simulate_paths(&p, 2, 2, 1).unwrap();
        assert!(example1_closed_form(&p, &g, 1.0).is_err());
    }

    #[test]
    fn merton_values() {
        let r = merton_log_reference(1.0, 0.0, 0.2, 1.0).unwrap();
        assert_eq!(r.proportion, 0.0);
        assert!(r.value.abs() < 1e-14);
        let r = merton_log_reference(1.0, 0.1, 0.2, 1.0).unwrap();
        assert!((r.proportion - 2.5).abs() < 1e-14);
        assert!((r.value - 0.125).abs() < 1e-12);
        let r = merton_log_reference(2.0, 0.1, 0.2, 1.0).unwrap();
        assert!((r.value - (2f64.ln() + 0.125)).abs() < 1e-12);
    }
}
