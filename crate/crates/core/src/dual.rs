//! Dual side of the robust problem: the budget functional over a family of
//! dual kernels, the shadow price `λ*`, optimal controls from the maximum
//! principle, the forward-backward fixed point and the replicating
//! portfolio.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::{self, BsdeConfig, BsdeSolution, RewardSpec};
use crate::constraint::{ConstraintKind, ConstraintSet};
use crate::error::{invalid, Error, Result};
use crate::market::{
    discount_factor, girsanov_density, upper_variation, KernelProcess, MarketParams, PathArray,
    PathGrid, PiecewiseConstant, Portfolio,
};
use crate::stats::{self, Estimate};
use crate::utility::Utility;

#[derive(Debug, Clone, Serialize)]
pub struct DualConfig {
    pub tol_budget: f64,
    pub tol_fp: f64,
    pub damping: f64,
    pub max_outer: usize,
    pub max_bisection: usize,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            tol_budget: 1e-3,
            tol_fp: 1e-3,
            damping: 0.5,
            max_outer: 30,
            max_bisection: 200,
        }
    }
}

/// A dual kernel with its density and upper variation evaluated on the grid.
#[derive(Debug, Clone)]
pub struct PreparedKernel {
    pub kernel: KernelProcess,
    pub density: PathArray,
    pub variation: PathArray,
}

impl PreparedKernel {
    fn terminal_density(&self, m: usize) -> f64 {
        self.density.at(m, self.density.cols - 1)
    }

    fn terminal_variation(&self, m: usize) -> f64 {
        self.variation.at(m, self.variation.cols - 1)
    }
}

pub fn prepare_family(
    family: &[KernelProcess],
    k: &ConstraintSet,
    grid: &PathGrid,
    params: &MarketParams,
) -> Result<Vec<PreparedKernel>> {
    if family.is_empty() {
        return Err(Error::EmptyKernelFamily);
    }
    family
        .iter()
        .map(|nu| {
            nu.validate(k)?;
            Ok(PreparedKernel {
                kernel: nu.clone(),
                density: girsanov_density(grid, params, nu)?,
                variation: upper_variation(k, nu, grid)?,
            })
        })
        .collect()
}

/// Budget functional estimate: the largest importance-sampled expectation
/// over the family.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetEstimate {
    pub value: f64,
    pub se: f64,
    pub argmax: usize,
    pub per_kernel: Vec<Estimate>,
}

/// `sup_ν E_P[Z^ν_T (ξ + Σ c Δ − A_T(ν))]` over the family.
pub fn budget_value(
    consumption: Option<&PathArray>,
    terminal: &[f64],
    k: &ConstraintSet,
    family: &[KernelProcess],
    grid: &PathGrid,
    params: &MarketParams,
) -> Result<BudgetEstimate> {
    let prepared = prepare_family(family, k, grid, params)?;
    budget_value_prepared(consumption, terminal, &prepared, grid)
}

pub fn budget_value_prepared(
    consumption: Option<&PathArray>,
    terminal: &[f64],
    prepared: &[PreparedKernel],
    grid: &PathGrid,
) -> Result<BudgetEstimate> {
    if prepared.is_empty() {
        return Err(Error::EmptyKernelFamily);
    }
    if terminal.len() != grid.paths {
        return Err(Error::DimensionMismatch {
            expected: grid.paths,
            got: terminal.len(),
        });
    }
    let outflow: Vec<f64> = (0..grid.paths)
        .into_par_iter()
        .map(|m| {
            let run = consumption.map_or(0.0, |c| c.row(m).iter().sum::<f64>() * grid.dt);
            terminal[m] + run
        })
        .collect();
    let per_kernel: Vec<Estimate> = prepared
        .iter()
        .map(|pk| {
            stats::estimate_fn(grid.paths, |m| {
                pk.terminal_density(m) * (outflow[m] - pk.terminal_variation(m))
            })
        })
        .collect();
    let (argmax, best) = per_kernel
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, e)| if e.mean > acc.1 { (i, e.mean) } else { acc });
    Ok(BudgetEstimate {
        value: best,
        se: per_kernel[argmax].se,
        argmax,
        per_kernel,
    })
}

/// Optimal consumption and terminal wealth.
#[derive(Debug, Clone)]
pub struct Controls {
    pub consumption: Option<PathArray>,
    pub terminal: Vec<f64>,
}

/// Which first-order conditions to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlRequest {
    pub consumption: bool,
    pub terminal: bool,
}

impl ControlRequest {
    pub fn from_params(params: &MarketParams) -> Self {
        Self {
            consumption: params.alpha > 0.0,
            terminal: params.alpha_bar > 0.0,
        }
    }
}

/// `c*_t = I_1(λ/α · S^δ_t Z̃_t / Z*_t)`, `ξ* = I_2(λ/ᾱ · S^δ_T Z̃_T / Z*_T)`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_controls(
    lambda: f64,
    zstar: &PathArray,
    ztilde: &PathArray,
    discount: &[f64],
    running: &Utility,
    terminal: &Utility,
    params: &MarketParams,
    request: ControlRequest,
) -> Result<Controls> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "shadow price must be positive"));
    }
    if zstar.cols != ztilde.cols || zstar.paths != ztilde.paths || discount.len() != zstar.cols {
        return Err(Error::DimensionMismatch {
            expected: zstar.data.len(),
            got: ztilde.data.len(),
        });
    }
    if let Some(i) = zstar
        .data
        .iter()
        .chain(&ztilde.data)
        .position(|v| !(*v > 0.0))
    {
        let cols = zstar.cols;
        let i = i % zstar.data.len();
        return Err(Error::NonPositiveDensity {
            path: i / cols,
            step: i % cols,
            value: f64::NAN,
        });
    }
    let steps = zstar.cols - 1;
    let consumption = if request.consumption {
        if params.alpha == 0.0 {
            return Err(invalid("market.alpha", "consumption requested with α = 0"));
        }
        let scale = lambda / params.alpha;
        Some(PathArray::from_fn(zstar.paths, steps, |m, n| {
            running.inverse_derivative(scale * discount[n] * ztilde.at(m, n) / zstar.at(m, n))
        }))
    } else {
        None
    };
    let terminal_wealth = if request.terminal {
        if params.alpha_bar == 0.0 {
            return Err(invalid("market.alpha_bar", "terminal wealth requested with ᾱ = 0"));
        }
        let scale = lambda / params.alpha_bar;
        (0..zstar.paths)
            .into_par_iter()
            .map(|m| terminal.inverse_derivative(scale * discount[steps] * ztilde.at(m, steps) / zstar.at(m, steps)))
            .collect()
    } else {
        vec![0.0; zstar.paths]
    };
    Ok(Controls {
        consumption,
        terminal: terminal_wealth,
    })
}

/// Largest relative residual of the terminal first-order condition
/// `ᾱ Z*_T S^δ_T Ū'(ξ*) = λ Z̃*_T`.
pub fn max_principle_residual(
    lambda: f64,
    controls: &Controls,
    zstar: &PathArray,
    ztilde: &PathArray,
    discount: &[f64],
    running: &Utility,
    terminal: &Utility,
    params: &MarketParams,
) -> f64 {
    let steps = zstar.cols - 1;
    let mut worst: f64 = 0.0;
    if params.alpha_bar > 0.0 {
        for m in 0..zstar.paths {
            let lhs = params.alpha_bar * zstar.at(m, steps) * discount[steps]
                * terminal.derivative(controls.terminal[m]);
            let rhs = lambda * ztilde.at(m, steps);
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
    }
    if let Some(c) = &controls.consumption {
        for m in 0..zstar.paths {
            for n in 0..steps {
                let lhs = params.alpha * zstar.at(m, n) * discount[n] * running.derivative(c.at(m, n));
                let rhs = lambda * ztilde.at(m, n);
                worst = worst.max((lhs - rhs).abs() / rhs);
            }
        }
    }
    worst
}

/// Shadow price with its controls and the bisection trace
/// `(λ, budget(λ))`.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub lambda: f64,
    pub controls: Controls,
    pub budget: BudgetEstimate,
    pub trace: Vec<(f64, f64)>,
}

pub struct CalibrationInput<'a> {
    pub wealth: f64,
    pub prepared: &'a [PreparedKernel],
    pub zstar: &'a PathArray,
    pub ztilde: &'a PathArray,
    pub discount: &'a [f64],
    pub running: &'a Utility,
    pub terminal: &'a Utility,
    pub params: &'a MarketParams,
    pub grid: &'a PathGrid,
}

/// `v(0, 0) = sup_ν E[−Z^ν_T A_T(ν)]`: the smallest fundable wealth.
pub fn minimal_wealth(prepared: &[PreparedKernel], grid: &PathGrid) -> Result<f64> {
    Ok(budget_value_prepared(None, &vec![0.0; grid.paths], prepared, grid)?.value)
}

/// Bisection on `log λ` until the budget binds to `tol_budget` (relative).
pub fn calibrate_lambda(input: &CalibrationInput<'_>, cfg: &DualConfig) -> Result<Calibration> {
    let x = input.wealth;
    let request = ControlRequest::from_params(input.params);
    if !request.consumption && !request.terminal {
        return Err(invalid("market.alpha", "α and ᾱ are both zero: nothing to optimize"));
    }
    let v00 = minimal_wealth(input.prepared, input.grid)?;
    if !(x > v00) {
        return Err(invalid("wealth", format!("initial wealth {x} must exceed v(0,0) = {v00}")));
    }
    let mut trace = Vec::new();
    let mut eval = |lambda: f64| -> Result<(Controls, BudgetEstimate)> {
        let controls = optimal_controls(
            lambda,
            input.zstar,
            input.ztilde,
            input.discount,
            input.running,
            input.terminal,
            input.params,
            request,
        )?;
        let b = budget_value_prepared(controls.consumption.as_ref(), &controls.terminal, input.prepared, input.grid)?;
        trace.push((lambda, b.value));
        Ok((controls, b))
    };
    let close = |v: f64| ((v - x) / x.abs().max(1e-300)).abs() <= cfg.tol_budget;

    let guess = 1.0 / (x - v00);
    let (mut c, mut b) = eval(guess)?;
    if close(b.value) {
        return Ok(Calibration { lambda: guess, controls: c, budget: b, trace });
    }
    // Budget is decreasing in λ: expand geometrically to bracket x.
    let (mut lo, mut hi) = (guess, guess);
    let mut expansions = 0;
    if b.value > x {
        loop {
            lo = hi;
            hi *= 2.0;
            (c, b) = eval(hi)?;
            if close(b.value) {
                return Ok(Calibration { lambda: hi, controls: c, budget: b, trace });
            }
            if b.value < x {
                break;
            }
            expansions += 1;
            if expansions > cfg.max_bisection {
                return Err(Error::BracketingFailed { budget: x, curve: trace });
            }
        }
    } else {
        loop {
            hi = lo;
            lo /= 2.0;
            (c, b) = eval(lo)?;
            if close(b.value) {
                return Ok(Calibration { lambda: lo, controls: c, budget: b, trace });
            }
            if b.value > x {
                break;
            }
            expansions += 1;
            if expansions > cfg.max_bisection {
                return Err(Error::BracketingFailed { budget: x, curve: trace });
            }
        }
    }
    for _ in 0..cfg.max_bisection {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        (c, b) = eval(mid)?;
        if close(b.value) {
            return Ok(Calibration { lambda: mid, controls: c, budget: b, trace });
        }
        if b.value > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BracketingFailed { budget: x, curve: trace })
}

/// Value of the linearized objective `E[Z*_T ᾱ S^δ_T Ū(ξ) + Σ Z*_n α S^δ_n U(c_n) Δ]`.
fn linearized_objective(
    controls: &Controls,
    zstar: &PathArray,
    discount: &[f64],
    running: &Utility,
    terminal: &Utility,
    params: &MarketParams,
    grid: &PathGrid,
) -> f64 {
    let steps = grid.steps;
    stats::par_sum(grid.paths, |m| {
        let mut v = 0.0;
        if params.alpha_bar > 0.0 {
            v += zstar.at(m, steps) * params.alpha_bar * discount[steps] * terminal.value(controls.terminal[m]);
        }
        if let Some(c) = &controls.consumption {
            for n in 0..steps {
                v += zstar.at(m, n) * params.alpha * discount[n] * running.value(c.at(m, n)) * grid.dt;
            }
        }
        v
    }) / grid.paths as f64
}

/// Picks the budget-binding dual kernel: for each family member, the
/// single-constraint relaxation is solved at its own shadow price and the
/// kernel with the smallest relaxed value (the dual minimizer) wins.
pub fn select_dual_kernel(
    input: &CalibrationInput<'_>,
    cfg: &DualConfig,
) -> Result<(usize, Vec<f64>)> {
    let mut values = Vec::with_capacity(input.prepared.len());
    for pk in input.prepared {
        let single = std::slice::from_ref(pk);
        let sub = CalibrationInput {
            prepared: single,
            ztilde: &pk.density,
            ..*input
        };
        let cal = calibrate_lambda(&sub, cfg)?;
        values.push(linearized_objective(
            &cal.controls,
            input.zstar,
            input.discount,
            input.running,
            input.terminal,
            input.params,
            input.grid,
        ));
    }
    let best = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc })
        .0;
    Ok((best, values))
}

/// Calibrated dual quantities.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: f64,
    pub kernel: KernelProcess,
    pub kernel_index: usize,
    pub ztilde: PathArray,
    pub budget_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Replication {
    /// Holdings after projection onto `K`.
    pub holdings: Portfolio,
    /// Wealth process `X_t = E_{P̃}[ξ + ∫_t^T c − (A_T − A_t) | F_t]`.
    pub wealth: PathArray,
    /// Root-mean-square distance of the unprojected holdings from `K`.
    pub violation_rms: f64,
    /// Same, relative to the RMS norm of the unprojected holdings.
    pub violation_relative: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub dual: DualState,
    pub consumption: Option<PathArray>,
    pub terminal: Vec<f64>,
    pub replication: Option<Replication>,
    pub y0: Estimate,
    /// Worst-case density the controls were built from.
    pub zstar: PathArray,
    /// BSDE solved at the returned controls.
    pub bsde: BsdeSolution,
    pub budget: BudgetEstimate,
    pub kernel_objectives: Vec<f64>,
    pub iterations: usize,
    pub y0_trace: Vec<f64>,
    pub degenerate: bool,
}

pub struct RobustProblem<'a> {
    pub wealth: f64,
    pub params: &'a MarketParams,
    pub grid: &'a PathGrid,
    pub constraint: &'a ConstraintSet,
    pub running: Utility,
    pub terminal: Utility,
    pub family: Vec<KernelProcess>,
}

fn damp(prev: &PathArray, fresh: &PathArray, rho: f64) -> PathArray {
    let mut out = PathArray::from_fn(prev.paths, prev.cols, |m, n| {
        ((1.0 - rho) * prev.at(m, n).ln() + rho * fresh.at(m, n).ln()).exp()
    });
    for n in 0..out.cols {
        let mean = stats::mean(&out.column(n));
        for m in 0..out.paths {
            out.data[m * out.cols + n] /= mean;
        }
    }
    out
}

fn extra_state(pk: &PreparedKernel) -> Vec<PathArray> {
    if pk.kernel.is_deterministic_constant() {
        Vec::new()
    } else {
        vec![pk.density.map(f64::ln)]
    }
}

/// Forward-backward fixed point: entropic BSDE → worst-case density →
/// dual kernel → shadow price → controls, with geometric damping of the
/// worst-case density between sweeps.
pub fn solve_robust_problem(
    problem: &RobustProblem<'_>,
    dual_cfg: &DualConfig,
    bsde_cfg: &BsdeConfig,
) -> Result<RobustSolution> {
    let RobustProblem { wealth, params, grid, constraint, .. } = *problem;
    if !problem.family.contains(&KernelProcess::Zero) {
        return Err(invalid("dual.kernel_grid", "the kernel family must contain the zero kernel"));
    }
    if !(dual_cfg.damping > 0.0 && dual_cfg.damping <= 1.0) {
        return Err(invalid("dual.damping", "damping must lie in (0, 1]"));
    }
    let prepared = prepare_family(&problem.family, constraint, grid, params)?;
    let discount = discount_factor(params, grid);
    let v00 = minimal_wealth(&prepared, grid)?;
    let request = ControlRequest::from_params(params);
    let cols = grid.steps + 1;

    if wealth < v00 - 1e-12 {
        return Err(invalid("wealth", format!("initial wealth {wealth} is below v(0,0) = {v00}")));
    }
    if wealth - v00 <= 1e-12 * wealth.abs().max(1.0) {
        return Ok(degenerate_solution(problem, &prepared, request, v00));
    }

    let mut zstar = PathArray::filled(grid.paths, cols, 1.0);
    let mut trace: Vec<f64> = Vec::new();
    for iter in 1..=dual_cfg.max_outer {
        let input = CalibrationInput {
            wealth,
            prepared: &prepared,
            zstar: &zstar,
            ztilde: &prepared[0].density,
            discount: &discount,
            running: &problem.running,
            terminal: &problem.terminal,
            params,
            grid,
        };
        let (idx, objectives) = select_dual_kernel(&input, dual_cfg)?;
        let chosen = &prepared[idx];
        let input = CalibrationInput { ztilde: &chosen.density, ..input };
        let cal = calibrate_lambda(&input, dual_cfg)?;
        let spec = RewardSpec {
            running: problem.running.clone(),
            terminal: problem.terminal.clone(),
            consumption: cal.controls.consumption.clone(),
            terminal_wealth: cal.controls.terminal.clone(),
        };
        let extra = extra_state(chosen);
        let sol = bsde::solve_entropic_bsde_with_state(grid, &spec, params, bsde_cfg, &extra)?;
        let y0 = sol.y0.mean;
        let converged = trace.last().is_some_and(|p| (y0 - p).abs() < dual_cfg.tol_fp);
        trace.push(y0);
        if converged {
            let replication = replicating_portfolio(
                &cal.controls,
                chosen,
                grid,
                constraint,
                bsde_cfg,
            )?;
            return Ok(RobustSolution {
                dual: DualState {
                    lambda: cal.lambda,
                    kernel: chosen.kernel.clone(),
                    kernel_index: idx,
                    ztilde: chosen.density.clone(),
                    budget_gap: (cal.budget.value - wealth) / wealth,
                },
                consumption: cal.controls.consumption,
                terminal: cal.controls.terminal,
                replication: Some(replication),
                y0: sol.y0,
                zstar,
                bsde: sol,
                budget: cal.budget,
                kernel_objectives: objectives,
                iterations: iter,
                y0_trace: trace,
                degenerate: false,
            });
        }
        let fresh = bsde::worst_case_density(&sol, params, grid);
        zstar = damp(&zstar, &fresh, dual_cfg.damping);
    }
    Err(Error::FixedPointDivergence {
        iters: dual_cfg.max_outer,
        trace,
    })
}

fn degenerate_solution(
    problem: &RobustProblem<'_>,
    prepared: &[PreparedKernel],
    request: ControlRequest,
    v00: f64,
) -> RobustSolution {
    let grid = problem.grid;
    let params = problem.params;
    let cols = grid.steps + 1;
    let limit = |u: &Utility| {
        let v = u.value(0.0);
        if v.is_nan() { u.value(f64::MIN_POSITIVE) } else { v }
    };
    let horizon_value = if request.terminal { params.alpha_bar * limit(&problem.terminal) } else { 0.0 }
        + if request.consumption { params.alpha * params.horizon * limit(&problem.running) } else { 0.0 };
    let y = PathArray::filled(grid.paths, cols, horizon_value);
    RobustSolution {
        dual: DualState {
            lambda: f64::INFINITY,
            kernel: KernelProcess::Zero,
            kernel_index: 0,
            ztilde: prepared[0].density.clone(),
            budget_gap: 0.0,
        },
        consumption: request.consumption.then(|| PathArray::filled(grid.paths, grid.steps, 0.0)),
        terminal: vec![0.0; grid.paths],
        replication: None,
        y0: Estimate { mean: horizon_value, se: 0.0 },
        zstar: PathArray::filled(grid.paths, cols, 1.0),
        bsde: BsdeSolution {
            y,
            z: vec![0.0; grid.paths * grid.steps * grid.dim],
            dim: grid.dim,
            basis: "none".into(),
            picard_iters: 0,
            residual: 0.0,
            y0: Estimate { mean: horizon_value, se: 0.0 },
        },
        budget: BudgetEstimate {
            value: v00,
            se: 0.0,
            argmax: 0,
            per_kernel: Vec::new(),
        },
        kernel_objectives: Vec::new(),
        iterations: 0,
        y0_trace: Vec::new(),
        degenerate: true,
    }
}

/// One undamped application of the fixed-point map at a returned solution:
/// the worst-case density of the final BSDE drives new controls at the same
/// kernel, and the BSDE is solved again. Returns `|ΔY_0|`.
pub fn self_consistency_gap(
    problem: &RobustProblem<'_>,
    solution: &RobustSolution,
    dual_cfg: &DualConfig,
    bsde_cfg: &BsdeConfig,
) -> Result<f64> {
    let RobustProblem { wealth, params, grid, constraint, .. } = *problem;
    let prepared = prepare_family(&problem.family, constraint, grid, params)?;
    let discount = discount_factor(params, grid);
    let fresh = bsde::worst_case_density(&solution.bsde, params, grid);
    let chosen = &prepared[solution.dual.kernel_index];
    let input = CalibrationInput {
        wealth,
        prepared: &prepared,
        zstar: &fresh,
        ztilde: &chosen.density,
        discount: &discount,
        running: &problem.running,
        terminal: &problem.terminal,
        params,
        grid,
    };
    let cal = calibrate_lambda(&input, dual_cfg)?;
    let spec = RewardSpec {
        running: problem.running.clone(),
        terminal: problem.terminal.clone(),
        consumption: cal.controls.consumption,
        terminal_wealth: cal.controls.terminal,
    };
    let sol = bsde::solve_entropic_bsde_with_state(grid, &spec, params, bsde_cfg, &extra_state(chosen))?;
    Ok((sol.y0.mean - solution.y0.mean).abs())
}

/// Replicating portfolio by regression of the `P̃*`-martingale increments on
/// the asset returns, `H_n = Cov_n(R)^{-1} Cov_n(R, ΔX)`, then projected onto
/// `K`.
pub fn replicating_portfolio(
    controls: &Controls,
    kernel: &PreparedKernel,
    grid: &PathGrid,
    constraint: &ConstraintSet,
    bsde_cfg: &BsdeConfig,
) -> Result<Replication> {
    let (m_paths, steps, d) = (grid.paths, grid.steps, grid.dim);
    let cols = steps + 1;
    let ztilde = &kernel.density;
    let extra = extra_state(kernel);
    let proj = bsde::projections(grid, &extra, bsde_cfg)?;

    // Remaining outflow from each grid time.
    let mut remaining = PathArray::filled(m_paths, cols, 0.0);
    remaining.data.par_chunks_mut(cols).enumerate().for_each(|(m, row)| {
        let a_t = kernel.variation.at(m, steps);
        row[steps] = controls.terminal[m];
        for n in (0..steps).rev() {
            let c = controls.consumption.as_ref().map_or(0.0, |c| c.at(m, n) * grid.dt);
            row[n] = row[n + 1] + c;
        }
        for (n, r) in row.iter_mut().enumerate() {
            *r -= a_t - kernel.variation.at(m, n);
        }
    });
    let mut wealth = PathArray::filled(m_paths, cols, 0.0);
    for n in 0..=steps {
        let target: Vec<f64> = (0..m_paths)
            .into_par_iter()
            .map(|m| ztilde.at(m, steps) * remaining.at(m, n))
            .collect();
        let fit = if n == steps {
            target
        } else if n == 0 {
            vec![stats::mean(&target); m_paths]
        } else {
            proj[n].project(&target)
        };
        for m in 0..m_paths {
            wealth.data[m * cols + n] = fit[m] / ztilde.at(m, n);
        }
    }

    let mut raw = Portfolio::zeros(m_paths, steps, d);
    for n in 0..steps {
        let ret = |m: usize, i: usize| grid.price(m, n + 1)[i] / grid.price(m, n)[i] - 1.0;
        let dx: Vec<f64> = (0..m_paths).map(|m| wealth.at(m, n + 1) - wealth.at(m, n)).collect();
        let cond = |target: Vec<f64>| -> Vec<f64> {
            if n == 0 {
                vec![stats::mean(&target); m_paths]
            } else {
                proj[n].project(&target)
            }
        };
        let e_dx = cond(dx.clone());
        let e_r: Vec<Vec<f64>> = (0..d).map(|i| cond((0..m_paths).map(|m| ret(m, i)).collect())).collect();
        let e_rx: Vec<Vec<f64>> = (0..d)
            .map(|i| cond((0..m_paths).map(|m| ret(m, i) * dx[m]).collect()))
            .collect();
        let mut e_rr = vec![vec![Vec::new(); d]; d];
        for i in 0..d {
            for j in i..d {
                e_rr[i][j] = cond((0..m_paths).map(|m| (ret(m, i) - e_r[i][m]) * (ret(m, j) - e_r[j][m])).collect());
            }
        }
        // Regression can leave the conditional covariance indefinite on
        // outlying paths; those fall back to the cross-sectional one.
        let pooled = DMatrix::from_fn(d, d, |i, j| {
            let ri: Vec<f64> = (0..m_paths).map(|m| ret(m, i)).collect();
            let rj: Vec<f64> = (0..m_paths).map(|m| ret(m, j)).collect();
            let (mi, mj) = (stats::mean(&ri), stats::mean(&rj));
            stats::mean(&ri.iter().zip(&rj).map(|(a, b)| (a - mi) * (b - mj)).collect::<Vec<_>>())
        });
        let pooled_chol = pooled.clone().cholesky();
        for m in 0..m_paths {
            let cov = DMatrix::from_fn(d, d, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                e_rr[a][b][m]
            });
            let rhs = DVector::from_fn(d, |i, _| e_rx[i][m] - e_r[i][m] * e_dx[m]);
            let h = cov
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| pooled_chol.as_ref().map(|c| c.solve(&rhs)))
                .ok_or_else(|| Error::RankDeficient {
                    step: n,
                    basis: "asset-return covariance".into(),
                })?;
            raw.at_mut(m, n).copy_from_slice(h.as_slice());
        }
    }

    let mut holdings = raw.clone();
    let mut sq_dist = 0.0;
    let mut sq_norm = 0.0;
    let mut max_violation: f64 = 0.0;
    for m in 0..m_paths {
        for n in 0..steps {
            let h = raw.at(m, n);
            let p = constraint.project(h)?;
            let dist2: f64 = h.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            sq_dist += dist2;
            sq_norm += h.iter().map(|a| a * a).sum::<f64>();
            max_violation = max_violation.max(dist2.sqrt());
            holdings.at_mut(m, n).copy_from_slice(&p);
        }
    }
    let count = (m_paths * steps) as f64;
    Ok(Replication {
        holdings,
        wealth,
        violation_rms: (sq_dist / count).sqrt(),
        violation_relative: if sq_norm > 0.0 { (sq_dist / sq_norm).sqrt() } else { 0.0 },
        max_violation,
    })
}

/// Closed-form dual kernel for constraints of the form "coordinates in `P`
/// are pinned at zero, the rest are free": `ν` vanishes on free coordinates
/// and minimizes `|θ + σ^{-1}ν|` on the pinned ones, so `δ(ν) = 0`.
pub fn subspace_minimal_kernel(k: &ConstraintSet, params: &MarketParams) -> Option<KernelProcess> {
    let ConstraintKind::Box { lower, upper } = &k.kind else {
        return None;
    };
    let mut pinned = Vec::new();
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        match (*lo == 0.0 && *hi == 0.0, lo.is_infinite() && hi.is_infinite()) {
            (true, _) => pinned.push(i),
            (_, true) => {}
            _ => return None,
        }
    }
    if pinned.is_empty() {
        return None;
    }
    let d = params.dim;
    // Columns of σ^{-1} for the pinned coordinates.
    let a = DMatrix::from_fn(d, pinned.len(), |i, j| params.sigma_inv(i, pinned[j]));
    let values: Vec<Vec<f64>> = params
        .drift
        .values
        .iter()
        .map(|b| {
            let theta = DVector::from_vec(params.solve_sigma(b));
            let ata = a.transpose() * &a;
            let rhs = -(a.transpose() * theta);
            let v = ata.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(pinned.len()));
            let mut nu = vec![0.0; d];
            for (j, i) in pinned.iter().enumerate() {
                nu[*i] = v[j];
            }
            nu
        })
        .collect();
    Some(KernelProcess::PiecewiseConstant(PiecewiseConstant {
        starts: params.drift.starts.clone(),
        values,
    }))
}

/// `{0} ∪ {constant kernels from the grid} ∪ {closed form}`.
pub fn kernel_family(
    k: &ConstraintSet,
    params: &MarketParams,
    grid_values: &[Vec<f64>],
    include_closed_form: bool,
) -> Result<Vec<KernelProcess>> {
    let mut family = vec![KernelProcess::Zero];
    for v in grid_values {
        let nu = KernelProcess::constant(v.clone());
        nu.validate(k)?;
        if !family.contains(&nu) {
            family.push(nu);
        }
    }
    if include_closed_form {
        if let Some(nu) = subspace_minimal_kernel(k, params) {
            if !family.contains(&nu) {
                family.push(nu);
            }
        }
    }
    Ok(family)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityEntry {
    pub gamma: f64,
    pub terminal_moment: f64,
    pub running_moment: f64,
    pub flagged: bool,
    pub reason: Option<String>,
}

/// Exponential-moment diagnostics `E[exp(γ|Ū(ξ)|)]` and
/// `E[Σ exp(γ|U(c)|) Δ]`.
pub fn admissibility_check(
    consumption: Option<&PathArray>,
    terminal: &[f64],
    running_u: &Utility,
    terminal_u: &Utility,
    dt: f64,
    gammas: &[f64],
) -> Vec<AdmissibilityEntry> {
    gammas
        .iter()
        .map(|&gamma| {
            let term: Vec<f64> = terminal.iter().map(|x| (gamma * terminal_u.value(*x).abs()).exp()).collect();
            let run: Vec<f64> = consumption.map_or_else(Vec::new, |c| {
                (0..c.paths)
                    .map(|m| c.row(m).iter().map(|v| (gamma * running_u.value(*v).abs()).exp() * dt).sum())
                    .collect()
            });
            let mut reason = None;
            let check = |xs: &[f64], label: &str, reason: &mut Option<String>| -> f64 {
                if xs.is_empty() {
                    return 0.0;
                }
                let total = stats::pairwise_sum(xs);
                if !total.is_finite() {
                    *reason = Some(format!("{label} moment is not finite"));
                    return total / xs.len() as f64;
                }
                let mut sorted = xs.to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let top = (xs.len() / 1000).max(1);
                let share = stats::pairwise_sum(&sorted[..top]) / total;
                if xs.len() >= 1000 && share > 0.5 {
                    *reason = Some(format!("{label} moment dominated by {top} paths ({:.1}%)", 100.0 * share));
                }
                total / xs.len() as f64
            };
            let terminal_moment = check(&term, "terminal", &mut reason);
            let running_moment = check(&run, "running", &mut reason);
            AdmissibilityEntry {
                gamma,
                terminal_moment,
                running_moment,
                flagged: reason.is_some(),
                reason,
            }
        })
        .collect()
}
