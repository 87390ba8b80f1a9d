//! Scenario files, the run modes behind the command line, and their
//! artifacts.

pub mod benchmark;
pub mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::bsde::{self, BsdeConfig, RewardSpec};
use crate::constraint::{ConstraintKind, ConstraintSet};
use crate::dual::{self, DualConfig, RobustProblem};
use crate::error::{Error, Result};
use crate::hjb::{self, HjbConfig, HjbMarket, Scheme};
use crate::market::{self, KernelProcess, MarketParams, PathArray, PathGrid, PiecewiseConstant};
use crate::reference;
use crate::stats;
use crate::utility::Utility;

pub use config::Config;
use output::{csv_header, fmt17, write_file, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_BENCHMARK: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    SolveBsde,
    Optimize,
    Hjb,
    Benchmark,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "solve-bsde" => Ok(Mode::SolveBsde),
            "optimize" => Ok(Mode::Optimize),
            "hjb" => Ok(Mode::Hjb),
            "benchmark" => Ok(Mode::Benchmark),
            _ => Err(format!(
                "unknown mode `{s}`; expected simulate, solve-bsde, optimize, hjb or benchmark"
            )),
        }
    }
}

/// How `ξ` is generated in `solve-bsde` mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalChoice {
    /// `ξ = x0`.
    Wealth,
    /// `ξ = x0 · S¹_T`.
    Price,
    /// `ξ = exp(W¹_T)`.
    Lognormal,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub output: PathBuf,
    pub market: MarketParams,
    pub x0: f64,
    pub constraint: ConstraintSet,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub bsde: BsdeConfig,
    pub running: Utility,
    pub terminal: Utility,
    pub consumption_rate: f64,
    pub terminal_choice: TerminalChoice,
    pub dual: DualConfig,
    pub kernel_grid: Vec<Vec<f64>>,
    pub include_closed_form: bool,
    pub hjb: HjbConfig,
    pub eta: f64,
    pub eta_bar: f64,
    pub gamma: Vec<f64>,
    pub resolved: BTreeMap<String, String>,
}

fn as_config(cfg: &Config, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } if config::KEYS.iter().any(|(k, _)| *k == name) => {
            cfg.fail(name, reason)
        }
        Error::Config { .. } => e,
        other => cfg.fail("name", other.to_string()),
    }
}

fn utility(cfg: &Config, key: &str) -> Result<Utility> {
    match cfg.str(key).as_str() {
        "log" => Ok(Utility::Log),
        "power" => {
            let e = cfg.f64("reward.power_exponent")?;
            Utility::power(e).map_err(|err| cfg.fail("reward.power_exponent", err.to_string()))
        }
        other => Err(cfg.fail(key, format!("unknown utility `{other}`; expected log or power"))),
    }
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mode = cfg.str("mode").parse::<Mode>().map_err(|m| cfg.fail("mode", m))?;
        let b = cfg.vec("market.b")?;
        let d = b.len();
        if d == 0 {
            return Err(cfg.fail("market.b", "need at least one drift entry"));
        }
        let raw_sigma = cfg.matrix("market.sigma")?;
        let sigma = match (raw_sigma.len(), raw_sigma.first().map_or(0, Vec::len)) {
            (r, _) if r == d && raw_sigma.iter().all(|row| row.len() == d) => raw_sigma,
            (1, c) if c == d => (0..d)
                .map(|i| (0..d).map(|j| if i == j { raw_sigma[0][i] } else { 0.0 }).collect())
                .collect(),
            (1, 1) => (0..d)
                .map(|i| (0..d).map(|j| if i == j { raw_sigma[0][0] } else { 0.0 }).collect())
                .collect(),
            _ => return Err(cfg.fail("market.sigma", format!("expected a {d}×{d} matrix, a diagonal or a scalar"))),
        };
        let (starts, rates) = cfg.piecewise("market.delta")?;
        let discount = PiecewiseConstant::new(starts, rates).map_err(|e| as_config(cfg, e))?;
        let market = MarketParams::build(
            PiecewiseConstant::constant(b),
            sigma,
            discount,
            cfg.f64("market.beta")?,
            cfg.f64("market.alpha")?,
            cfg.f64("market.alpha_bar")?,
            cfg.f64("market.T")?,
            d,
        )
        .map_err(|e| as_config(cfg, e))?;
        let x0 = cfg.f64("market.x0")?;
        if !(x0.is_finite() && x0 >= 0.0) {
            return Err(cfg.fail("market.x0", "initial wealth must be finite and nonnegative"));
        }

        let constraint = match cfg.str("constraint.kind").as_str() {
            "full" => ConstraintSet::full_space(d),
            "cone" => ConstraintSet::cone(d),
            "box" => {
                let lower = cfg.vec("constraint.lower")?;
                let upper = cfg.vec("constraint.upper")?;
                if lower.len() != d || upper.len() != d {
                    return Err(cfg.fail("constraint.lower", format!("box bounds need {d} entries each")));
                }
                ConstraintSet::boxed(lower, upper)
            }
            "polytope" => ConstraintSet::polytope(cfg.matrix("constraint.vertices")?),
            other => {
                return Err(cfg.fail(
                    "constraint.kind",
                    format!("unknown constraint `{other}`; expected full, cone, box or polytope"),
                ))
            }
        }
        .map_err(|e| cfg.fail("constraint.kind", e.to_string()))?;

        let steps = cfg.usize("grid.steps")?;
        let paths = cfg.usize("grid.paths")?;
        if steps == 0 {
            return Err(cfg.fail("grid.steps", "need at least one step"));
        }
        if paths == 0 {
            return Err(cfg.fail("grid.paths", "need at least one path"));
        }
        let bsde = BsdeConfig {
            basis_degree: cfg.usize("bsde.basis_degree")?,
            ridge: cfg.f64("bsde.ridge")?,
            tol_picard: cfg.f64("bsde.tol_picard")?,
            max_iters: cfg.usize("bsde.max_iters")?,
        };
        let terminal_choice = match cfg.str("reward.terminal").as_str() {
            "wealth" => TerminalChoice::Wealth,
            "price" => TerminalChoice::Price,
            "lognormal" => TerminalChoice::Lognormal,
            other => {
                return Err(cfg.fail(
                    "reward.terminal",
                    format!("unknown terminal `{other}`; expected wealth, price or lognormal"),
                ))
            }
        };
        let dual = DualConfig {
            tol_budget: cfg.f64("dual.tol_budget")?,
            tol_fp: cfg.f64("dual.tol_fp")?,
            damping: cfg.f64("dual.damping")?,
            max_outer: cfg.usize("dual.max_outer")?,
            ..DualConfig::default()
        };
        if !(dual.damping > 0.0 && dual.damping <= 1.0) {
            return Err(cfg.fail("dual.damping", "damping must lie in (0, 1]"));
        }
        let kernel_grid = cfg.matrix("dual.kernel_grid")?;
        if let Some(row) = kernel_grid.iter().find(|r| r.len() != d) {
            return Err(cfg.fail("dual.kernel_grid", format!("kernel {row:?} does not have {d} entries")));
        }
        let scheme = match cfg.str("hjb.scheme").as_str() {
            "implicit" => Scheme::Implicit,
            "explicit" => Scheme::Explicit,
            other => return Err(cfg.fail("hjb.scheme", format!("unknown scheme `{other}`"))),
        };
        let hjb = HjbConfig {
            z_min: cfg.f64("hjb.z_min")?,
            z_max: cfg.f64("hjb.z_max")?,
            nz: cfg.usize("hjb.nz")?,
            nt: cfg.usize("hjb.nt")?,
            a_lo: cfg.f64("hjb.a_lo")?,
            a_hi: cfg.f64("hjb.a_hi")?,
            scheme,
            na: cfg.usize("hjb.na")?,
            a_cap: cfg.f64("hjb.a_cap")?,
            force_zero: cfg.bool("hjb.force_zero")?,
        };
        Ok(Self {
            name: cfg.str("name"),
            mode,
            output: PathBuf::from(cfg.str("output")),
            market,
            x0,
            constraint,
            steps,
            paths,
            seed: cfg.u64("grid.seed")?,
            bsde,
            running: utility(cfg, "reward.U")?,
            terminal: utility(cfg, "reward.Ubar")?,
            consumption_rate: cfg.f64("reward.consumption")?,
            terminal_choice,
            dual,
            kernel_grid,
            include_closed_form: cfg.bool("dual.include_closed_form")?,
            hjb,
            eta: cfg.f64("diag.eta")?,
            eta_bar: cfg.f64("diag.eta_bar")?,
            gamma: cfg.vec("diag.gamma")?,
            resolved: cfg.resolved(),
        })
    }

    /// Header block embedded in every artifact.
    fn provenance(&self) -> Value {
        json!({ "name": self.name, "seed": self.seed, "config": self.resolved })
    }

    fn simulate(&self) -> Result<PathGrid> {
        market::simulate_paths(&self.market, self.steps, self.paths, self.seed)
    }
}

/// Result of one invocation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub message: String,
    pub output: Option<PathBuf>,
}

/// Built-in scenarios addressable by name.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "default" => Some("name = default\nmode = benchmark\ngrid.paths = 100000\n"),
        "gbm_1d" => Some("name = gbm_1d\nmode = simulate\nmarket.b = 0.1\nmarket.sigma = 0.2\ngrid.steps = 20\ngrid.paths = 1000\n"),
        "example1" => Some(
            "name = example1\nmode = optimize\nmarket.b = 0.1, 0.05\nmarket.sigma = 0.2, 0; 0, 0.3\n\
             market.beta = 1\nconstraint.kind = box\nconstraint.lower = -inf, 0\nconstraint.upper = inf, 0\n\
             grid.steps = 10\ngrid.paths = 100000\n",
        ),
        "merton" => Some(
            "name = merton\nmode = optimize\nmarket.b = 0.1\nmarket.sigma = 0.2\nmarket.beta = 10000\n\
             grid.steps = 10\ngrid.paths = 20000\n",
        ),
        "hjb_box" => Some("name = hjb_box\nmode = hjb\nmarket.b = 0.1\nmarket.sigma = 0.2\nhjb.a_lo = -0.05\nhjb.a_hi = 0.05\n"),
        _ => None,
    }
}

/// Runs the mode selected by `mode` in `cfg` and writes its artifacts.
pub fn run(cfg: &Config) -> RunOutcome {
    let start = Instant::now();
    let scenario = match Scenario::from_config(cfg) {
        Ok(s) => s,
        Err(e) => {
            // Still leave a summary behind when the output directory is usable.
            let out = PathBuf::from(cfg.str("output"));
            let summary = json!({
                "provenance": { "name": cfg.str("name"), "seed": cfg.str("grid.seed"), "config": cfg.resolved() },
                "mode": cfg.str("mode"),
                "status": "error",
                "exit_code": EXIT_CONFIG,
                "message": e.to_string(),
                "runtime_seconds": start.elapsed().as_secs_f64(),
                "results": Value::Null,
            });
            let written = std::fs::create_dir_all(&out).is_ok() && write_json(&out.join("summary.json"), &summary).is_ok();
            return RunOutcome {
                exit_code: EXIT_CONFIG,
                message: e.to_string(),
                output: written.then_some(out),
            };
        }
    };
    let out = scenario.output.clone();
    if let Err(e) = std::fs::create_dir_all(&out) {
        return RunOutcome {
            exit_code: EXIT_CONFIG,
            message: format!("cannot create output directory {}: {e}", out.display()),
            output: None,
        };
    }
    let result = match scenario.mode {
        Mode::Simulate => run_simulate(&scenario, &out),
        Mode::SolveBsde => run_solve_bsde(&scenario, &out),
        Mode::Optimize => run_optimize(&scenario, &out),
        Mode::Hjb => run_hjb(&scenario, &out),
        Mode::Benchmark => run_benchmark(&scenario, &out),
    };
    let (exit_code, status, results, message) = match result {
        Ok((results, failed)) if failed => (EXIT_BENCHMARK, "benchmark-failed", results, "benchmark checks failed".to_string()),
        Ok((results, _)) => (EXIT_OK, "ok", results, "ok".to_string()),
        Err(e) => {
            let code = if matches!(e, Error::Config { .. }) { EXIT_CONFIG } else { EXIT_SOLVER };
            (code, "error", Value::Null, e.to_string())
        }
    };
    let summary = json!({
        "provenance": scenario.provenance(),
        "mode": scenario.mode,
        "status": status,
        "exit_code": exit_code,
        "message": message,
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "results": results,
    });
    if let Err(e) = write_json(&out.join("summary.json"), &summary) {
        return RunOutcome {
            exit_code: EXIT_SOLVER,
            message: e.to_string(),
            output: Some(out),
        };
    }
    RunOutcome {
        exit_code,
        message,
        output: Some(out),
    }
}

type ModeResult = Result<(Value, bool)>;

fn first_kernel(s: &Scenario) -> KernelProcess {
    s.kernel_grid
        .first()
        .map_or(KernelProcess::Zero, |v| KernelProcess::constant(v.clone()))
}

fn run_simulate(s: &Scenario, out: &Path) -> ModeResult {
    let grid = s.simulate()?;
    let nu = first_kernel(s);
    nu.validate(&s.constraint)?;
    let z = market::girsanov_density(&grid, &s.market, &nu)?;
    let a = market::upper_variation(&s.constraint, &nu, &grid)?;
    // Log-optimal proportions `(σσ')^{-1} b`, holdings projected onto K.
    let theta = s.market.theta_at(0.0);
    let d = s.market.dim;
    let pi: Vec<f64> = (0..d)
        .map(|i| (0..d).map(|j| s.market.sigma_inv(j, i) * theta[j]).sum())
        .collect();
    let cols = grid.steps + 1;
    let mut wealth = PathArray::filled(grid.paths, cols, s.x0);
    for m in 0..grid.paths {
        for n in 0..grid.steps {
            let x = wealth.at(m, n);
            let h = s.constraint.project(&pi.iter().map(|p| p * x).collect::<Vec<_>>())?;
            let (s0, s1) = (grid.price(m, n), grid.price(m, n + 1));
            let gain: f64 = (0..d).map(|i| h[i] * (s1[i] - s0[i]) / s0[i]).sum();
            wealth.data[m * cols + n + 1] = x + gain;
        }
    }
    let mut columns = vec!["path".to_string(), "t".to_string()];
    columns.extend((1..=d).map(|i| format!("S_{i}")));
    columns.extend(["Z_nu".to_string(), "A_nu".to_string(), "X".to_string()]);
    let mut text = csv_header(&s.provenance(), &columns);
    for m in 0..grid.paths {
        for n in 0..cols {
            let mut row = vec![m.to_string(), fmt17(grid.time(n))];
            row.extend(grid.price(m, n).iter().map(|v| fmt17(*v)));
            row.extend([fmt17(z.at(m, n)), fmt17(a.at(m, n)), fmt17(wealth.at(m, n))]);
            text.push_str(&row.join(","));
            text.push('\n');
        }
    }
    write_file(&out.join("paths.csv"), &text)?;
    let zt = z.last_column();
    Ok((
        json!({
            "paths": grid.paths,
            "steps": grid.steps,
            "kernel": nu,
            "density_terminal_mean": stats::estimate(&zt),
            "mean_terminal_prices": (0..d).map(|i| stats::mean(&(0..grid.paths).map(|m| grid.price(m, grid.steps)[i]).collect::<Vec<_>>())).collect::<Vec<_>>(),
            "mean_terminal_wealth": stats::mean(&wealth.last_column()),
        }),
        false,
    ))
}

fn terminal_wealth(s: &Scenario, grid: &PathGrid) -> Vec<f64> {
    (0..grid.paths)
        .map(|m| match s.terminal_choice {
            TerminalChoice::Wealth => s.x0,
            TerminalChoice::Price => s.x0 * grid.price(m, grid.steps)[0],
            TerminalChoice::Lognormal => grid.brownian(m, grid.steps)[0].exp(),
        })
        .collect()
}

fn run_solve_bsde(s: &Scenario, out: &Path) -> ModeResult {
    let grid = s.simulate()?;
    let consumption = (s.market.alpha > 0.0).then(|| PathArray::filled(grid.paths, grid.steps, s.consumption_rate));
    let spec = RewardSpec {
        running: s.running.clone(),
        terminal: s.terminal.clone(),
        consumption,
        terminal_wealth: terminal_wealth(s, &grid),
    };
    let sol = bsde::solve_entropic_bsde(&grid, &spec, &s.market, &s.bsde)?;
    let zstar = bsde::worst_case_density(&sol, &s.market, &grid);
    let d = grid.dim;
    let mut columns = vec!["t".to_string(), "Y".to_string()];
    columns.extend((1..=d).map(|i| format!("Z_{i}")));
    columns.push("Zstar".to_string());
    let mut text = csv_header(&s.provenance(), &columns);
    for n in 0..=grid.steps {
        let mut row = vec![fmt17(grid.time(n)), fmt17(stats::mean(&sol.y.column(n)))];
        for i in 0..d {
            let z = if n < grid.steps {
                stats::mean(&(0..grid.paths).map(|m| sol.z_at(m, n)[i]).collect::<Vec<_>>())
            } else {
                f64::NAN
            };
            row.push(fmt17(z));
        }
        row.push(fmt17(stats::mean(&zstar.column(n))));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(&out.join("bsde.csv"), &text)?;
    let direct = if s.market.has_discounting() {
        None
    } else {
        Some(bsde::evaluate_y0_direct(&grid, &spec, &s.market)?)
    };
    let zt = zstar.last_column();
    Ok((
        json!({
            "y0": sol.y0,
            "y0_direct": direct,
            "picard_iterations": sol.picard_iters,
            "picard_residual": sol.residual,
            "basis": sol.basis,
            "zstar_terminal_mean": stats::estimate(&zt),
            "zstar_second_moment": bsde::moment_check_zstar(&zt, 2.0)?,
        }),
        false,
    ))
}

/// Closed-form comparison for the two-asset example, when the scenario has
/// its shape.
fn example1_comparison(s: &Scenario, sol: &dual::RobustSolution, grid: &PathGrid) -> Option<Value> {
    let shaped = s.market.dim == 2
        && matches!(s.terminal, Utility::Log)
        && s.market.alpha == 0.0
        && !s.market.has_discounting()
        && matches!(&s.constraint.kind, ConstraintKind::Box { lower, upper }
            if lower[0] == f64::NEG_INFINITY && upper[0] == f64::INFINITY && lower[1] == 0.0 && upper[1] == 0.0);
    if !shaped {
        return None;
    }
    let closed = reference::example1_closed_form(&s.market, grid, s.x0).ok()?;
    let rep = sol.replication.as_ref()?;
    let pipeline = stats::mean(&(0..grid.paths).map(|m| rep.holdings.at(m, 0)[0] / grid.price(m, 0)[0]).collect::<Vec<_>>());
    Some(json!({
        "theta_hat_0": pipeline,
        "theta_beta_0": closed.theta_beta.at(0, 0),
        "theta_infinity_0": closed.theta_infinity.at(0, 0),
        "relative_gap": (pipeline - closed.theta_beta.at(0, 0)) / closed.theta_beta.at(0, 0),
    }))
}

fn run_optimize(s: &Scenario, out: &Path) -> ModeResult {
    let grid = s.simulate()?;
    let family = dual::kernel_family(&s.constraint, &s.market, &s.kernel_grid, s.include_closed_form)?;
    let problem = RobustProblem {
        wealth: s.x0,
        params: &s.market,
        grid: &grid,
        constraint: &s.constraint,
        running: s.running.clone(),
        terminal: s.terminal.clone(),
        family,
    };
    let sol = dual::solve_robust_problem(&problem, &s.dual, &s.bsde)?;
    let gap = if sol.degenerate {
        0.0
    } else {
        dual::self_consistency_gap(&problem, &sol, &s.dual, &s.bsde)?
    };
    let admissibility = dual::admissibility_check(
        sol.consumption.as_ref(),
        &sol.terminal,
        &s.running,
        &s.terminal,
        grid.dt,
        &s.gamma,
    );
    let zt = sol.bsde.y.cols - 1;
    let moments = market::density_moments(&sol.dual.ztilde.column(zt), s.eta, s.eta_bar).ok();
    let d = grid.dim;
    let mut columns = vec!["t".to_string(), "X".to_string()];
    columns.extend((1..=d).map(|i| format!("H_{i}")));
    columns.push("c".to_string());
    let mut text = csv_header(&s.provenance(), &columns);
    for n in 0..=grid.steps {
        let x = sol.replication.as_ref().map_or(f64::NAN, |r| stats::mean(&r.wealth.column(n)));
        let mut row = vec![fmt17(grid.time(n)), fmt17(x)];
        for i in 0..d {
            let h = match (&sol.replication, n < grid.steps) {
                (Some(r), true) => stats::mean(&(0..grid.paths).map(|m| r.holdings.at(m, n)[i]).collect::<Vec<_>>()),
                _ => f64::NAN,
            };
            row.push(fmt17(h));
        }
        let c = match (&sol.consumption, n < grid.steps) {
            (Some(c), true) => stats::mean(&c.column(n)),
            _ => f64::NAN,
        };
        row.push(fmt17(c));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(&out.join("solution.csv"), &text)?;
    let holdings0: Option<Vec<f64>> = sol.replication.as_ref().map(|r| r.holdings.at(0, 0).to_vec());
    let merton = (d == 1 && matches!(s.terminal, Utility::Log))
        .then(|| reference::merton_log_reference(s.x0, s.market.drift.values[0][0], s.market.sigma(0, 0), s.market.horizon).ok())
        .flatten();
    let solution = json!({
        "provenance": s.provenance(),
        "lambda": sol.dual.lambda,
        "kernel": sol.dual.kernel,
        "kernel_objectives": sol.kernel_objectives,
        "y0": sol.y0,
        "budget": sol.budget,
        "budget_gap": sol.dual.budget_gap,
        "iterations": sol.iterations,
        "y0_trace": sol.y0_trace,
        "self_consistency_gap": gap,
        "degenerate": sol.degenerate,
        "holdings_t0": holdings0,
        "violation_rms": sol.replication.as_ref().map(|r| r.violation_rms),
        "violation_relative": sol.replication.as_ref().map(|r| r.violation_relative),
        "admissibility": admissibility,
        "density_moments": moments,
        "example1": example1_comparison(s, &sol, &grid),
        "merton": merton,
    });
    write_json(&out.join("solution.json"), &solution)?;
    Ok((
        json!({
            "lambda": sol.dual.lambda,
            "y0": sol.y0,
            "iterations": sol.iterations,
            "self_consistency_gap": gap,
            "budget_gap": sol.dual.budget_gap,
        }),
        false,
    ))
}

fn hjb_market(s: &Scenario) -> Result<HjbMarket> {
    if s.market.dim != 1 {
        return Err(Error::Config {
            key: "market.b".into(),
            location: "hjb mode".into(),
            message: "the HJB solver needs a single asset".into(),
        });
    }
    Ok(HjbMarket {
        b: s.market.drift.values[0][0],
        sigma: s.market.sigma(0, 0),
        beta: s.market.beta,
        horizon: s.market.horizon,
    })
}

fn run_hjb(s: &Scenario, out: &Path) -> ModeResult {
    let m = hjb_market(s)?;
    let surface = hjb::solve_hjb_config(&s.hjb, &m)?;
    let mut text = csv_header(&s.provenance(), &["t", "z", "v", "a_star"].map(String::from));
    for (n, t) in surface.times.iter().enumerate() {
        for (j, z) in surface.z.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                fmt17(*t),
                fmt17(*z),
                fmt17(surface.v[n][j]),
                fmt17(surface.a_star[n][j])
            ));
        }
    }
    write_file(&out.join("hjb_surface.csv"), &text)?;
    let j = surface
        .z
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ln().abs().total_cmp(&b.1.ln().abs()))
        .map_or(0, |p| p.0);
    Ok((
        json!({
            "nz": surface.z.len(),
            "nt": surface.times.len() - 1,
            "z_nearest_one": surface.z[j],
            "v0_at_z_nearest_one": surface.v[0][j],
            "convexity_warnings": surface.warnings,
        }),
        false,
    ))
}

fn run_benchmark(s: &Scenario, out: &Path) -> ModeResult {
    let settings = benchmark::BenchmarkSettings::from_scenario(s);
    let (report, timings) = benchmark::run_suite(&settings, &s.resolved);
    write_file(&out.join("benchmark_report.json"), &report.to_json())?;
    let failed = report.failed > 0;
    Ok((
        json!({
            "passed": report.passed,
            "failed": report.failed,
            "runtime_seconds": timings,
        }),
        failed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in ["default", "gbm_1d", "example1", "merton", "hjb_box"] {
            let cfg = Config::parse(builtin(name).unwrap()).unwrap();
            Scenario::from_config(&cfg).unwrap();
        }
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = Config::parse("market.beta = -1").unwrap();
        let err = Scenario::from_config(&cfg).unwrap_err();
        assert!(err.to_string().contains("market.beta"), "{err}");
        let cfg = Config::parse("mode = fly").unwrap();
        assert!(Scenario::from_config(&cfg).is_err());
        let cfg = Config::parse("constraint.kind = box\nconstraint.lower = 0").unwrap();
        assert!(Scenario::from_config(&cfg).is_err());
    }

    #[test]
    fn sigma_shorthands() {
        let cfg = Config::parse("market.b = 0.1, 0.05\nmarket.sigma = 0.2, 0.3").unwrap();
        let s = Scenario::from_config(&cfg).unwrap();
        assert_eq!(s.market.sigma, vec![0.2, 0.0, 0.0, 0.3]);
    }
}
