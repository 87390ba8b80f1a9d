//! Acceptance gate. Every criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustopt::bsde::{self, BsdeConfig, RewardSpec};
use robustopt::dual;
use robustopt::hjb::{self, HjbConfig, HjbMarket};
use robustopt::market::simulate_paths;
use robustopt::scenario::benchmark::{self, OptimizeRun};
use robustopt::scenario::{self, config::Config};
use robustopt::{ConstraintSet, MarketParams, Utility};

const SEED: u64 = 20240611;
const PATHS: usize = 100_000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `E[f(G)]`, `G ~ N(0,1)`, by composite Simpson on [−12, 12].
fn simpson_normal(f: impl Fn(f64) -> f64) -> f64 {
    let n: usize = 4000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let g = |x: f64| f(x) * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = g(a) + g(b);
    for i in 1..n {
        let w = if !i.is_multiple_of(2) { 4.0 } else { 2.0 };
        s += w * g(a + i as f64 * h);
    }
    s * h / 3.0
}

fn criterion_1() -> Outcome {
    let beta = 2.0;
    let params = MarketParams::new(vec![0.0], vec![vec![1.0]], beta, 1.0).unwrap();
    let grid = simulate_paths(&params, 20, PATHS, SEED).unwrap();
    let xi: Vec<f64> = (0..grid.paths).map(|m| grid.brownian(m, grid.steps)[0].exp()).collect();
    let spec = RewardSpec::terminal_only(Utility::Log, xi);
    let sol = bsde::solve_entropic_bsde(&grid, &spec, &params, &BsdeConfig::default()).unwrap();
    let direct = bsde::evaluate_y0_direct(&grid, &spec, &params).unwrap();
    // −β log E[e^{−G/β}] with G ~ N(0,1).
    let oracle = -beta * (1.0 / (2.0 * beta * beta));
    let within = (sol.y0.mean - oracle).abs() <= 3.0 * sol.y0.se;
    let combined = 3.0 * (sol.y0.se.powi(2) + direct.se.powi(2)).sqrt();
    let agree = (sol.y0.mean - direct.mean).abs() <= combined;
    outcome(
        within && agree,
        format!(
            "Y0 = {:.5} ± {:.5} vs {oracle}; direct {:.5} ± {:.5}",
            sol.y0.mean, sol.y0.se, direct.mean, direct.se
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut ok = 0;
    for i in 0..100u64 {
        let (y1, y2) = benchmark::comparison_pair(SEED.wrapping_mul(7919).wrapping_add(i), 4000).unwrap();
        if y1.mean <= y2.mean + 3.0 * (y1.se.powi(2) + y2.se.powi(2)).sqrt() {
            ok += 1;
        }
    }
    outcome(ok == 100, format!("{ok}/100 ordered"))
}

fn criterion_3() -> Outcome {
    let params = MarketParams::new(vec![0.0], vec![vec![1.0]], 2.0, 1.0).unwrap();
    let grid = simulate_paths(&params, 20, PATHS, SEED).unwrap();
    let xi: Vec<f64> = (0..grid.paths).map(|m| grid.brownian(m, grid.steps)[0].exp()).collect();
    let spec = RewardSpec::terminal_only(Utility::Log, xi);
    let sol = bsde::solve_entropic_bsde(&grid, &spec, &params, &BsdeConfig::default()).unwrap();
    let z = bsde::worst_case_density(&sol, &params, &grid).last_column();
    let (m, se) = mean_se(&z);
    let second = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    let lib = bsde::moment_check_zstar(&z, 2.0).unwrap();
    let passed = (m - 1.0).abs() <= 3.0 * se && second.is_finite() && lib.mean.is_finite();
    outcome(passed, format!("E[Z*_T] = {m:.5} ± {se:.5}; E[(Z*_T)^2] = {second:.4}"))
}

/// Recursion `Y_n (1 + δΔ) = −β log E_n[exp(−(α U(c_n) Δ + Y_{n+1})/β)]`,
/// `Y_N = ᾱ Ū(ξ)`, on the full binomial tree with
/// `c = 0.2 + 0.1 S`, `ξ = S_N` and log utilities.
fn tree_oracle(b: f64, sigma: f64, beta: f64, alpha: f64, delta: f64, steps: usize, horizon: f64) -> f64 {
    let h = (horizon / steps as f64).sqrt();
    fn rec(n: usize, s: f64, ctx: &(f64, f64, f64, f64, f64, usize, f64)) -> f64 {
        let (b, sigma, beta, alpha, delta, steps, h) = *ctx;
        let dt = h * h;
        if n == steps {
            return s.ln();
        }
        let c = 0.2 + 0.1 * s;
        let mut acc = 0.0;
        for dw in [h, -h] {
            let s_next = s * ((b - 0.5 * sigma * sigma) * dt + sigma * dw).exp();
            let y = rec(n + 1, s_next, ctx);
            acc += 0.5 * (-(alpha * c.ln() * dt + y) / beta).exp();
        }
        -beta * acc.ln() / (1.0 + delta * dt)
    }
    rec(0, 1.0, &(b, sigma, beta, alpha, delta, steps, h))
}

fn criterion_4() -> Outcome {
    let params = benchmark::tree_params().unwrap();
    let grid = benchmark::tree_grid(&params).unwrap();
    let spec = benchmark::tree_spec(&grid);
    let sol = bsde::solve_entropic_bsde(&grid, &spec, &params, &benchmark::tree_config()).unwrap();
    let oracle = tree_oracle(0.05, 0.3, 1.5, 0.5, 0.1, 2, 1.0);
    let err = (sol.y0.mean - oracle).abs();
    outcome(err <= 1e-8, format!("Y0 = {:.12} vs enumeration {oracle:.12} (error {err:.2e})", sol.y0.mean))
}

struct Runs {
    merton: OptimizeRun,
    robust: OptimizeRun,
    limit: OptimizeRun,
}

fn criterion_5(runs: &Runs) -> Outcome {
    let run = &runs.merton;
    let lambda_x = run.solution.dual.lambda * run.wealth;
    let merton = 0.1 / (0.2 * 0.2);
    let props: Vec<f64> = (1..run.grid.steps).map(|n| benchmark::mean_proportion(run, n)).collect();
    let worst = props.iter().map(|p| (p - merton).abs() / merton).fold(0.0, f64::max);
    outcome(
        (lambda_x - 1.0).abs() <= 0.01 && worst <= 0.10,
        format!("λ*·x = {lambda_x:.5}; worst proportion gap {worst:.4} vs b/σ² = {merton:.4}"),
    )
}

fn criterion_6(runs: &Runs) -> Outcome {
    let (beta, x, b1, s1, t) = (1.0f64, 1.0, 0.1, 0.2, 1.0);
    let theta = b1 / s1;
    let q = beta / (1.0 + beta);
    let pinned = x * (-beta * theta * theta * t / (2.0 * (1.0 + beta).powi(2))).exp() * q * b1 / (s1 * s1);
    let lib = robustopt::reference::example1_closed_form(&runs.robust.params, &runs.robust.grid, x).unwrap();
    let consistent = (lib.theta_beta.at(0, 0) - pinned).abs() < 1e-12;
    let theta0 = benchmark::initial_shares(&runs.robust, 0);
    let rel = (theta0 - pinned).abs() / pinned;
    let limit_ref = x * b1 / (s1 * s1);
    let theta_inf = benchmark::initial_shares(&runs.limit, 0);
    let rel_inf = (theta_inf - limit_ref).abs() / limit_ref;
    let h2 = [&runs.robust, &runs.limit]
        .iter()
        .map(|r| {
            let rep = r.solution.replication.as_ref().unwrap();
            (0..r.grid.paths)
                .flat_map(|m| (0..r.grid.steps).map(move |n| (m, n)))
                .map(|(m, n)| rep.holdings.at(m, n)[1].abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    outcome(
        consistent && rel <= 0.05 && rel_inf <= 0.05 && h2 == 0.0,
        format!("θ̂_0 = {theta0:.4} vs {pinned:.4} (gap {rel:.4}); β = 1e4: {theta_inf:.4} vs {limit_ref:.4} (gap {rel_inf:.4}); max |H²| = {h2}"),
    )
}

fn criterion_7(runs: &Runs) -> Outcome {
    let mut gaps = Vec::new();
    for run in [&runs.merton, &runs.robust] {
        let family = dual::kernel_family(&run.constraint, &run.params, &[], true).unwrap();
        let b = dual::budget_value(
            run.solution.consumption.as_ref(),
            &run.solution.terminal,
            &run.constraint,
            &family,
            &run.grid,
            &run.params,
        )
        .unwrap();
        gaps.push((b.value - run.wealth).abs() / run.wealth);
    }
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    outcome(worst <= 0.02, format!("relative budget gaps {}", sci(&gaps)))
}

fn criterion_8(runs: &Runs) -> Outcome {
    let gaps = [runs.merton.self_consistency, runs.robust.self_consistency];
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    outcome(worst < 1e-3, format!("|ΔY0| = {}", sci(&gaps)))
}

fn criterion_9() -> Outcome {
    let market = HjbMarket {
        b: 0.1,
        sigma: 0.2,
        beta: 1.0,
        horizon: 1.0,
    };
    let cfg = HjbConfig {
        nz: 200,
        nt: 200,
        force_zero: true,
        ..HjbConfig::default()
    };
    let surface = hjb::solve_hjb_config(&cfg, &market).unwrap();
    let theta = market.b / market.sigma;
    let beta = market.beta;
    // Ũ(y) = −β^{−β/(1+β)} (1+β) y^{1/(1+β)}.
    let conj = |y: f64| -beta.powf(-beta / (1.0 + beta)) * (1.0 + beta) * y.powf(1.0 / (1.0 + beta));
    let mut worst: f64 = 0.0;
    for (j, z) in surface.z.iter().enumerate() {
        if z.ln().abs() <= 2.0 {
            let oracle = simpson_normal(|g| conj(z * (-theta * g - 0.5 * theta * theta).exp()));
            worst = worst.max((surface.v[0][j] - oracle).abs());
        }
    }
    let base = HjbConfig {
        nz: 51,
        nt: 50,
        force_zero: true,
        ..HjbConfig::default()
    };
    let rows = hjb::hjb_convergence_study(&base, &market, 3, 2.0).unwrap();
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.difference).collect();
    let order = (diffs[diffs.len() - 2] / diffs[diffs.len() - 1]).log2();
    outcome(
        worst <= 1e-2 && order >= 0.9,
        format!("max interior error {worst:.2e}; self-convergence order {order:.3} from {}", sci(&diffs)),
    )
}

/// `sup_{y ∈ K ∩ [−r, r]²} (−y'x)` over an `n × n` grid including the corners.
fn brute_support(lower: [f64; 2], upper: [f64; 2], r: f64, x: [f64; 2]) -> f64 {
    let n = 201;
    let lo = [lower[0].max(-r), lower[1].max(-r)];
    let hi = [upper[0].min(r), upper[1].min(r)];
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            let y0 = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
            let y1 = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
            best = best.max(-(y0 * x[0] + y1 * x[1]));
        }
    }
    best
}

fn criterion_10() -> Outcome {
    let inf = f64::INFINITY;
    let cases: Vec<(ConstraintSet, [f64; 2], [f64; 2])> = vec![
        (ConstraintSet::full_space(2).unwrap(), [-inf, -inf], [inf, inf]),
        (ConstraintSet::cone(2).unwrap(), [0.0, 0.0], [inf, inf]),
        (ConstraintSet::boxed(vec![-1.0, -0.5], vec![2.0, 0.5]).unwrap(), [-1.0, -0.5], [2.0, 0.5]),
        (ConstraintSet::boxed(vec![-inf, 0.0], vec![inf, 0.0]).unwrap(), [-inf, 0.0], [inf, 0.0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut x: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        match rng.random_range(0..4) {
            0 => x[0] = 0.0,
            1 => x = [x[0].abs(), x[1].abs()],
            _ => {}
        }
        for (k, lo, hi) in &cases {
            let closed = k.support_value(&x).unwrap();
            if closed.is_finite() {
                worst = worst.max((closed.to_f64() - brute_support(*lo, *hi, 10.0, x)).abs());
            } else if !(brute_support(*lo, *hi, 1e4, x) >= 5.0 * brute_support(*lo, *hi, 1e3, x)) {
                mismatches += 1;
            }
        }
    }
    // Barrier cones: {0}, the orthant, the whole plane, {x₁ = 0}.
    let membership: [(usize, [f64; 2], bool); 8] = [
        (0, [0.0, 0.0], true),
        (0, [0.0, 1e-9], false),
        (1, [0.0, 2.0], true),
        (1, [1.0, -1e-9], false),
        (2, [-5.0, 7.0], true),
        (3, [0.0, -4.0], true),
        (3, [0.0, 4.0], true),
        (3, [1e-9, 0.0], false),
    ];
    for (i, x, expected) in membership {
        if cases[i].0.in_barrier_cone(&x).unwrap() != expected {
            mismatches += 1;
        }
    }
    outcome(worst <= 1e-2 && mismatches == 0, format!("max |closed − brute| = {worst:.2e}; mismatches {mismatches}"))
}

fn benchmark_report_bytes(dir: &Path) -> Vec<u8> {
    let mut cfg = Config::parse(scenario::builtin("default").unwrap()).unwrap();
    cfg.set("grid.paths", "20000").unwrap();
    cfg.set("output", dir.to_str().unwrap()).unwrap();
    let run = scenario::run(&cfg);
    assert!(run.exit_code == scenario::EXIT_OK || run.exit_code == scenario::EXIT_BENCHMARK, "{}", run.message);
    std::fs::read(dir.join("benchmark_report.json")).unwrap()
}

fn criterion_11() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-reproducibility");
    let first = benchmark_report_bytes(&dir);
    let second = benchmark_report_bytes(&dir);
    outcome(first == second && !first.is_empty(), format!("{} bytes, identical: {}", first.len(), first == second))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, f: &dyn Fn() -> Outcome| {
        let start = std::time::Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.passed { "PASS" } else { "FAIL" };
        if !result.passed {
            failures += 1;
        }
        println!("{tag} criterion {id:>2} ({:.1}s): {}", start.elapsed().as_secs_f64(), result.detail);
    };
    report(1, &criterion_1);
    report(2, &criterion_2);
    report(3, &criterion_3);
    report(4, &criterion_4);
    let runs = catch_unwind(|| Runs {
        merton: benchmark::merton_run(SEED, PATHS / 5).unwrap(),
        robust: benchmark::example1_run(1.0, SEED, PATHS).unwrap(),
        limit: benchmark::example1_run(1e4, SEED, PATHS).unwrap(),
    });
    match &runs {
        Ok(runs) => {
            report(5, &|| criterion_5(runs));
            report(6, &|| criterion_6(runs));
            report(7, &|| criterion_7(runs));
            report(8, &|| criterion_8(runs));
        }
        Err(_) => {
            for id in 5..=8 {
                report(id, &|| outcome(false, "optimizer runs failed".into()));
            }
        }
    }
    report(9, &criterion_9);
    report(10, &criterion_10);
    report(11, &criterion_11);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
