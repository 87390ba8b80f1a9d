//! Least-squares Monte Carlo for the entropic BSDE
//!
//! `dY = (δY − αU(c) + |Z|²/(2β)) dt + Z'dW`, `Y_T = ᾱ Ū(ξ)`,
//!
//! through its exponential recursive form
//! `Y_t = −β log E[exp((1/β)∫_t^T (δY − αU(c)) ds − (1/β) ᾱ Ū(ξ)) | F_t]`.
//! Without discounting a single backward pass suffices; otherwise the
//! recursion is iterated to its fixed point. Conditional expectations are
//! polynomial regressions on the time-`t` state (log prices plus optional
//! extra state variables).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::market::{discount_factor, MarketParams, PathArray, PathGrid};
use crate::regression::{Projection, StateMatrix};
use crate::stats::{self, Estimate};
use crate::utility::Utility;

/// Utilities, consumption and terminal wealth defining the reward.
#[derive(Debug, Clone)]
pub struct RewardSpec {
    pub running: Utility,
    pub terminal: Utility,
    /// Consumption rate `c_{t_n}` (`paths × steps`); required when `α > 0`.
    pub consumption: Option<PathArray>,
    /// Terminal wealth `ξ` per path.
    pub terminal_wealth: Vec<f64>,
}

impl RewardSpec {
    pub fn terminal_only(terminal: Utility, terminal_wealth: Vec<f64>) -> Self {
        Self {
            running: Utility::Log,
            terminal,
            consumption: None,
            terminal_wealth,
        }
    }

    /// Running rewards `α U(c_n) Δ` (`paths × steps`), or zeros when `α = 0`.
    fn running_rewards(&self, grid: &PathGrid, alpha: f64) -> Result<PathArray> {
        if alpha == 0.0 {
            return Ok(PathArray::filled(grid.paths, grid.steps, 0.0));
        }
        let c = self
            .consumption
            .as_ref()
            .ok_or_else(|| invalid("reward.consumption", "α > 0 requires a consumption process"))?;
        if c.paths != grid.paths || c.cols != grid.steps {
            return Err(Error::DimensionMismatch {
                expected: grid.paths * grid.steps,
                got: c.data.len(),
            });
        }
        let out = c.map(|v| alpha * self.running.value(v) * grid.dt);
        if let Some(i) = out.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Utility(format!(
                "running utility {} not finite at c = {} (path {}, step {})",
                self.running.name(),
                c.data[i],
                i / c.cols,
                i % c.cols
            )));
        }
        Ok(out)
    }

    fn terminal_rewards(&self, grid: &PathGrid, alpha_bar: f64) -> Result<Vec<f64>> {
        if self.terminal_wealth.len() != grid.paths {
            return Err(Error::DimensionMismatch {
                expected: grid.paths,
                got: self.terminal_wealth.len(),
            });
        }
        let out: Vec<f64> = self
            .terminal_wealth
            .par_iter()
            .map(|x| if alpha_bar == 0.0 { 0.0 } else { alpha_bar * self.terminal.value(*x) })
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Utility(format!(
                "terminal utility {} not finite at ξ = {} (path {i})",
                self.terminal.name(),
                self.terminal_wealth[i]
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BsdeConfig {
    pub basis_degree: usize,
    pub ridge: f64,
    pub tol_picard: f64,
    pub max_iters: usize,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            basis_degree: 3,
            ridge: 1e-8,
            tol_picard: 1e-6,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// `Y` on the grid (`paths × (steps + 1)`).
    pub y: PathArray,
    /// `Z^Y` (`paths × steps × dim`).
    pub z: Vec<f64>,
    pub dim: usize,
    pub basis: String,
    pub picard_iters: usize,
    pub residual: f64,
    pub y0: Estimate,
}

impl BsdeSolution {
    pub fn z_at(&self, path: usize, step: usize) -> &[f64] {
        let steps = self.y.cols - 1;
        let o = (path * steps + step) * self.dim;
        &self.z[o..o + self.dim]
    }
}

/// Regression state at step `n`: log prices followed by extra variables.
fn state_at(grid: &PathGrid, extra: &[PathArray], n: usize) -> StateMatrix {
    let d = grid.dim;
    StateMatrix::from_fn(grid.paths, d + extra.len(), |m, row| {
        for (r, s) in row.iter_mut().zip(grid.price(m, n)) {
            *r = s.ln();
        }
        for (k, e) in extra.iter().enumerate() {
            row[d + k] = e.at(m, n);
        }
    })
}

pub(crate) fn projections(
    grid: &PathGrid,
    extra: &[PathArray],
    cfg: &BsdeConfig,
) -> Result<Vec<Projection>> {
    (0..grid.steps)
        .map(|n| Projection::new(&state_at(grid, extra, n), cfg.basis_degree, cfg.ridge, n))
        .collect()
}

pub fn solve_entropic_bsde(
    grid: &PathGrid,
    spec: &RewardSpec,
    params: &MarketParams,
    cfg: &BsdeConfig,
) -> Result<BsdeSolution> {
    solve_entropic_bsde_with_state(grid, spec, params, cfg, &[])
}

/// As [`solve_entropic_bsde`], with additional per-path state variables
/// (`paths × (steps + 1)` each) appended to the regression basis.
pub fn solve_entropic_bsde_with_state(
    grid: &PathGrid,
    spec: &RewardSpec,
    params: &MarketParams,
    cfg: &BsdeConfig,
    extra: &[PathArray],
) -> Result<BsdeSolution> {
    if cfg.basis_degree == 0 && grid.steps > 1 {
        return Err(invalid("bsde.basis_degree", "degree must be at least 1"));
    }
    if params.alpha > 0.0 {
        spec.running.check_shape()?;
    }
    if params.alpha_bar > 0.0 {
        spec.terminal.check_shape()?;
    }
    let running = spec.running_rewards(grid, params.alpha)?;
    let terminal = spec.terminal_rewards(grid, params.alpha_bar)?;
    let proj = projections(grid, extra, cfg)?;
    let basis = format!("poly(degree={}) in log S{}", cfg.basis_degree,
        if extra.is_empty() { String::new() } else { format!(" + {} extra", extra.len()) });

    let rates: Vec<f64> = (0..grid.steps).map(|n| *params.discount.at(grid.time(n))).collect();
    let mut pass = backward_pass(grid, params.beta, &rates, &running, &terminal, &proj, None);
    let mut iters = 0;
    let mut residual = 0.0;
    if params.has_discounting() {
        let mut history = Vec::new();
        loop {
            iters += 1;
            let next = backward_pass(grid, params.beta, &rates, &running, &terminal, &proj, Some(&pass.y));
            residual = next
                .y
                .data
                .par_iter()
                .zip(&pass.y.data)
                .map(|(a, b)| (a - b).abs())
                .reduce(|| 0.0, f64::max);
            history.push(residual);
            pass = next;
            if residual < cfg.tol_picard {
                break;
            }
            if iters >= cfg.max_iters || !residual.is_finite() {
                return Err(Error::PicardDivergence { iters, history });
            }
        }
    }
    let z = extract_z(grid, &pass.y, &proj);
    Ok(BsdeSolution {
        y: pass.y,
        z,
        dim: grid.dim,
        basis,
        picard_iters: iters,
        residual,
        y0: pass.y0,
    })
}

struct Pass {
    y: PathArray,
    y0: Estimate,
}

/// One sweep of the recursive relation. With `previous = None` the
/// discount term is dropped (exact when `δ ≡ 0`).
fn backward_pass(
    grid: &PathGrid,
    beta: f64,
    rates: &[f64],
    running: &PathArray,
    terminal: &[f64],
    proj: &[Projection],
    previous: Option<&PathArray>,
) -> Pass {
    let (m_paths, steps, dt) = (grid.paths, grid.steps, grid.dt);
    let cols = steps + 1;
    let mut y = PathArray::filled(m_paths, cols, 0.0);
    // exponent L_n = (1/β) Σ_{k ≥ n} (δ_k Y_k Δ − α U(c_k) Δ) − (1/β) ᾱ Ū(ξ)
    let mut expo: Vec<f64> = terminal.iter().map(|g| -g / beta).collect();
    for (m, g) in terminal.iter().enumerate() {
        y.data[m * cols + steps] = *g;
    }
    let mut y0 = Estimate { mean: 0.0, se: 0.0 };
    for n in (0..steps).rev() {
        expo.par_iter_mut().enumerate().for_each(|(m, l)| {
            let disc = previous.map_or(0.0, |p| rates[n] * p.at(m, n) * dt);
            *l += (disc - running.at(m, n)) / beta;
        });
        let shift = expo.par_iter().copied().reduce(|| f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = expo.par_iter().map(|l| (l - shift).exp()).collect();
        if n == 0 {
            let e = stats::estimate(&weights);
            let value = -beta * (shift + e.mean.ln());
            y0 = Estimate {
                mean: value,
                se: beta * e.se / e.mean,
            };
            for m in 0..m_paths {
                y.data[m * cols] = value;
            }
        } else {
            let fit = proj[n].project_clamped(&weights);
            for (m, f) in fit.iter().enumerate() {
                y.data[m * cols + n] = -beta * (shift + f.ln());
            }
        }
    }
    Pass { y, y0 }
}

/// `Z_n = E[(Y_{n+1} − Y_n) ΔW_n | F_n] / Δ` by regression.
fn extract_z(grid: &PathGrid, y: &PathArray, proj: &[Projection]) -> Vec<f64> {
    let (m_paths, steps, d) = (grid.paths, grid.steps, grid.dim);
    let mut z = vec![0.0; m_paths * steps * d];
    for n in 0..steps {
        for j in 0..d {
            let target: Vec<f64> = (0..m_paths)
                .into_par_iter()
                .map(|m| (y.at(m, n + 1) - y.at(m, n)) * grid.dw(m, n)[j])
                .collect();
            let fit = proj[n].project(&target);
            for (m, f) in fit.iter().enumerate() {
                z[(m * steps + n) * d + j] = f / grid.dt;
            }
        }
    }
    z
}

/// `Y_0 = −β log mean(exp(−(1/β)(α Σ U(c)Δ + ᾱ Ū(ξ))))` with a delta-method
/// standard error. Only valid without discounting.
pub fn evaluate_y0_direct(grid: &PathGrid, spec: &RewardSpec, params: &MarketParams) -> Result<Estimate> {
    if params.has_discounting() {
        return Err(invalid("market.delta", "the direct estimator requires δ ≡ 0"));
    }
    let running = spec.running_rewards(grid, params.alpha)?;
    let terminal = spec.terminal_rewards(grid, params.alpha_bar)?;
    let beta = params.beta;
    let expo: Vec<f64> = (0..grid.paths)
        .into_par_iter()
        .map(|m| -(running.row(m).iter().sum::<f64>() + terminal[m]) / beta)
        .collect();
    let shift = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = stats::estimate_fn(grid.paths, |m| (expo[m] - shift).exp());
    Ok(Estimate {
        mean: -beta * (shift + e.mean.ln()),
        se: beta * e.se / e.mean,
    })
}

/// Worst-case density `Z* = E(−(1/β) ∫ Z^Y' dW)` on the grid.
pub fn worst_case_density(solution: &BsdeSolution, params: &MarketParams, grid: &PathGrid) -> PathArray {
    let cols = grid.steps + 1;
    let beta = params.beta;
    let mut data = vec![0.0; grid.paths * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(m, out)| {
        let mut log_z = 0.0;
        out[0] = 1.0;
        for n in 0..grid.steps {
            let zy = solution.z_at(m, n);
            let lin: f64 = zy.iter().zip(grid.dw(m, n)).map(|(a, b)| a * b).sum();
            let sq: f64 = zy.iter().map(|a| a * a).sum();
            log_z += -lin / beta - 0.5 * sq * grid.dt / (beta * beta);
            out[n + 1] = log_z.exp();
        }
    });
    PathArray {
        paths: grid.paths,
        cols,
        data,
    }
}

/// The same density from the value process:
/// `Z*_t = exp((1/β)∫_0^t (δY − αU(c)) ds − (1/β)(Y_t − Y_0))`.
pub fn worst_case_density_from_values(
    solution: &BsdeSolution,
    spec: &RewardSpec,
    params: &MarketParams,
    grid: &PathGrid,
) -> Result<PathArray> {
    let running = spec.running_rewards(grid, params.alpha)?;
    let cols = grid.steps + 1;
    let beta = params.beta;
    let y = &solution.y;
    let mut data = vec![0.0; grid.paths * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(m, out)| {
        let mut integral = 0.0;
        let y0 = y.at(m, 0);
        out[0] = 1.0;
        for n in 0..grid.steps {
            integral += params.discount.at(grid.time(n)) * y.at(m, n) * grid.dt - running.at(m, n);
            out[n + 1] = ((integral - (y.at(m, n + 1) - y0)) / beta).exp();
        }
    });
    Ok(PathArray {
        paths: grid.paths,
        cols,
        data,
    })
}

/// Sample estimate of `E[(Z*_T)^p]`.
pub fn moment_check_zstar(terminal_density: &[f64], p: f64) -> Result<Estimate> {
    if !(p >= 1.0) {
        return Err(invalid("p", "moment order must be at least 1"));
    }
    Ok(stats::estimate_fn(terminal_density.len(), |i| terminal_density[i].powf(p)))
}

/// Robust value recomputed from its variational form at a given measure:
/// `E_Q[α ∫ S^δ U(c) dt + ᾱ S^δ_T Ū(ξ)] + β E_Q[R^δ_{0,T}]`, with `Q` given
/// by its density process.
pub fn penalized_value_under(
    density: &PathArray,
    spec: &RewardSpec,
    params: &MarketParams,
    grid: &PathGrid,
) -> Result<Estimate> {
    let running = spec.running_rewards(grid, params.alpha)?;
    let terminal = spec.terminal_rewards(grid, params.alpha_bar)?;
    let disc = discount_factor(params, grid);
    let penalty = crate::market::relative_entropy_penalty(density, params, grid, 0)?;
    let steps = grid.steps;
    Ok(stats::estimate_fn(grid.paths, |m| {
        let zt = density.at(m, steps);
        let run: f64 = (0..steps).map(|n| disc[n] * running.at(m, n)).sum();
        zt * (run + disc[steps] * terminal[m] + params.beta * penalty[m])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_paths, PiecewiseConstant};

    fn unit_vol(beta: f64) -> MarketParams {
        MarketParams::new(vec![0.0], vec![vec![1.0]], beta, 1.0).unwrap()
    }

    /// ξ = exp(W_T): log ξ ~ N(0, 1) exactly on the grid.
    fn lognormal_terminal(grid: &PathGrid) -> Vec<f64> {
        (0..grid.paths).map(|m| grid.brownian(m, grid.steps)[0].exp()).collect()
    }

    #[test]
    fn deterministic_terminal_gives_constant_value() {
        let p = unit_vol(2.0);
        let g = simulate_paths(&p, 10, 2_000, 1).unwrap();
        let spec = RewardSpec::terminal_only(Utility::Log, vec![3.0; g.paths]);
        let sol = solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).unwrap();
        for v in &sol.y.data {
            assert!((v - 3f64.ln()).abs() < 1e-12);
        }
        assert!(sol.z.iter().all(|v| v.abs() < 1e-9));
        let direct = evaluate_y0_direct(&g, &spec, &p).unwrap();
        assert!((direct.mean - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_terminal_value() {
        let beta = 2.0;
        let p = unit_vol(beta);
        let g = simulate_paths(&p, 20, 100_000, 3).unwrap();
        let spec = RewardSpec::terminal_only(Utility::Log, lognormal_terminal(&g));
        let sol = solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).unwrap();
        assert!(sol.y0.within(-1.0 / (2.0 * beta), 3.0), "{:?}", sol.y0);
        // Terminal condition is exact.
        for m in 0..g.paths {
            assert_eq!(sol.y.at(m, g.steps), spec.terminal_wealth[m].ln());
        }
        // Y_t = W_t − (T − t)/(2β) and Z ≡ 1, up to polynomial tail error.
        let n = 10;
        let errs: Vec<f64> = (0..g.paths)
            .map(|m| (sol.y.at(m, n) - (g.brownian(m, n)[0] - 0.5 / (2.0 * beta))).powi(2))
            .collect();
        let rms = stats::mean(&errs).sqrt();
        assert!(rms < 0.02, "rms error {rms}");
        let zmean = stats::mean(&sol.z);
        assert!((zmean - 1.0).abs() < 0.02, "{zmean}");
    }

    #[test]
    fn large_beta_approaches_expectation() {
        let p = MarketParams::new(vec![0.1], vec![vec![0.3]], 1e6, 1.0).unwrap();
        let g = simulate_paths(&p, 5, 50_000, 4).unwrap();
        let xi: Vec<f64> = (0..g.paths).map(|m| g.price(m, 5)[0]).collect();
        let spec = RewardSpec::terminal_only(Utility::Log, xi.clone());
        let direct = evaluate_y0_direct(&g, &spec, &p).unwrap();
        let plain = stats::estimate_fn(g.paths, |m| xi[m].ln());
        assert!((direct.mean - plain.mean).abs() <= 3.0 * plain.se, "{direct:?} {plain:?}");
    }

    #[test]
    fn direct_evaluator_rejects_discounting() {
        let p = unit_vol(1.0).with_discount(PiecewiseConstant::constant(0.1)).unwrap();
        let g = simulate_paths(&p, 2, 10, 1).unwrap();
        let spec = RewardSpec::terminal_only(Utility::Log, vec![1.0; 10]);
        assert!(evaluate_y0_direct(&g, &spec, &p).is_err());
    }

    #[test]
    fn log_of_nonpositive_terminal_is_an_error() {
        let p = unit_vol(1.0);
        let g = simulate_paths(&p, 2, 10, 1).unwrap();
        let mut xi = vec![1.0; 10];
        xi[3] = 0.0;
        let spec = RewardSpec::terminal_only(Utility::Log, xi);
        assert!(matches!(
            solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()),
            Err(Error::Utility(_))
        ));
    }

    #[test]
    fn consumption_required_when_alpha_positive() {
        let p = unit_vol(1.0).with_weights(1.0, 1.0).unwrap();
        let g = simulate_paths(&p, 2, 10, 1).unwrap();
        let spec = RewardSpec::terminal_only(Utility::Log, vec![1.0; 10]);
        assert!(solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).is_err());
    }

    #[test]
    fn worst_case_density_examples() {
        let p = unit_vol(2.0);
        let g = simulate_paths(&p, 10, 50_000, 8).unwrap();
        let spec = RewardSpec::terminal_only(Utility::Log, vec![2.0; g.paths]);
        let sol = solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).unwrap();
        let zs = worst_case_density(&sol, &p, &g);
        assert!(zs.data.iter().all(|v| (v - 1.0).abs() < 1e-9));

        let spec = RewardSpec::terminal_only(Utility::Log, lognormal_terminal(&g));
        let sol = solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).unwrap();
        let zs = worst_case_density(&sol, &p, &g);
        let e = moment_check_zstar(&zs.last_column(), 1.0).unwrap();
        assert!(e.within(1.0, 3.0), "{e:?}");
        let m2 = moment_check_zstar(&zs.last_column(), 2.0).unwrap();
        // Z*_T = exp(−W_T/2 − 1/8): E[Z*²] = exp(1/4).
        assert!(m2.mean.is_finite() && (m2.mean - 0.25f64.exp()).abs() < 5.0 * m2.se + 0.02);

        let alt = worst_case_density_from_values(&sol, &spec, &p, &g).unwrap();
        let gap = (0..g.paths)
            .map(|m| (alt.at(m, 10).ln() - zs.at(m, 10).ln()).abs())
            .sum::<f64>()
            / g.paths as f64;
        assert!(gap < 0.02, "mean log gap {gap}");
        assert!(moment_check_zstar(&zs.last_column(), 0.5).is_err());
    }

    #[test]
    fn unit_density_has_unit_moments() {
        let e = moment_check_zstar(&[1.0; 16], 3.0).unwrap();
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn picard_with_discounting_converges() {
        let p = MarketParams::new(vec![0.05], vec![vec![0.3]], 1.0, 1.0)
            .unwrap()
            .with_discount(PiecewiseConstant::constant(0.2))
            .unwrap();
        let g = simulate_paths(&p, 10, 5_000, 2).unwrap();
        let xi: Vec<f64> = (0..g.paths).map(|m| g.price(m, 10)[0]).collect();
        let spec = RewardSpec::terminal_only(Utility::Log, xi);
        let sol = solve_entropic_bsde(&g, &spec, &p, &BsdeConfig::default()).unwrap();
        assert!(sol.picard_iters > 0 && sol.residual < 1e-6);

        let tight = BsdeConfig { max_iters: 1, tol_picard: 1e-300, ..BsdeConfig::default() };
        assert!(matches!(
            solve_entropic_bsde(&g, &spec, &p, &tight),
            Err(Error::PicardDivergence { .. })
        ));
    }
}
