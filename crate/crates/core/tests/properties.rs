use proptest::prelude::*;
use robustopt::bsde::{self, BsdeConfig, RewardSpec};
use robustopt::dual::{self, ControlRequest};
use robustopt::hjb::{self, HjbConfig, HjbMarket};
use robustopt::market::{discount_factor, simulate_paths};
use robustopt::{ConstraintSet, KernelProcess, MarketParams, PathArray, Utility};

fn utility(power: Option<f64>) -> Utility {
    match power {
        Some(p) => Utility::power(p).unwrap(),
        None => Utility::Log,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn budget_decreases_in_shadow_price(
        b in -0.05..0.2f64,
        sigma in 0.1..0.4f64,
        power in prop::option::of(0.2..0.8f64),
        seed in 0u64..1000,
    ) {
        let params = MarketParams::new(vec![b], vec![vec![sigma]], 2.0, 1.0).unwrap();
        let grid = simulate_paths(&params, 4, 2000, seed).unwrap();
        let k = ConstraintSet::full_space(1).unwrap();
        let family = [KernelProcess::Zero];
        let prepared = dual::prepare_family(&family, &k, &grid, &params).unwrap();
        let ones = PathArray::filled(grid.paths, grid.steps + 1, 1.0);
        let disc = discount_factor(&params, &grid);
        let u = utility(power);
        let mut last = f64::INFINITY;
        for lambda in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let c = dual::optimal_controls(
                lambda, &ones, &prepared[0].density, &disc, &u, &u, &params, ControlRequest::from_params(&params),
            ).unwrap();
            let v = dual::budget_value(None, &c.terminal, &k, &family, &grid, &params).unwrap().value;
            prop_assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn dominated_rewards_have_ordered_values(
        beta in 0.5..5.0f64,
        shift in 0.05..1.0f64,
        power in prop::option::of(0.2..0.8f64),
        seed in 0u64..1000,
    ) {
        let params = MarketParams::new(vec![0.05], vec![vec![0.25]], beta, 1.0).unwrap();
        let grid = simulate_paths(&params, 5, 3000, seed).unwrap();
        let low: Vec<f64> = (0..grid.paths).map(|m| grid.price(m, grid.steps)[0]).collect();
        let high: Vec<f64> = low.iter().map(|x| x + shift).collect();
        let u = utility(power);
        let cfg = BsdeConfig::default();
        let y1 = bsde::solve_entropic_bsde(&grid, &RewardSpec::terminal_only(u.clone(), low), &params, &cfg).unwrap().y0;
        let y2 = bsde::solve_entropic_bsde(&grid, &RewardSpec::terminal_only(u, high), &params, &cfg).unwrap().y0;
        prop_assert!(y1.mean <= y2.mean + 3.0 * (y1.se.powi(2) + y2.se.powi(2)).sqrt());
    }

    #[test]
    fn wider_box_raises_the_dual_value(
        lo in 0.01..0.2f64,
        hi in 0.01..0.2f64,
        widen in 1.5..4.0f64,
    ) {
        let market = HjbMarket { b: 0.1, sigma: 0.2, beta: 1.0, horizon: 1.0 };
        let small = HjbConfig { nz: 41, nt: 40, a_lo: -lo, a_hi: hi, ..HjbConfig::default() };
        let large = HjbConfig { a_lo: -lo * widen, a_hi: hi * widen, ..small.clone() };
        let vs = hjb::solve_hjb_config(&small, &market).unwrap();
        let vl = hjb::solve_hjb_config(&large, &market).unwrap();
        for (a, b) in vs.initial().iter().zip(vl.initial()) {
            prop_assert!(*b >= a - 1e-10);
        }
    }

    #[test]
    fn dual_value_is_convex_in_z(b in 0.0..0.2f64, sigma in 0.1..0.4f64, beta in 0.5..3.0f64) {
        let market = HjbMarket { b, sigma, beta, horizon: 1.0 };
        let cfg = HjbConfig { nz: 61, nt: 60, ..HjbConfig::default() };
        let s = hjb::solve_hjb_config(&cfg, &market).unwrap();
        prop_assert!(hjb::convexity_warnings(&s.z, &s.v, &s.times, 1e-9).is_empty());
        prop_assert!(s.warnings.is_empty());
    }

    #[test]
    fn projected_holdings_lie_in_the_constraint(seed in 0u64..1000, cap in 0.5..1.5f64) {
        let params = MarketParams::new(vec![0.1], vec![vec![0.2]], 1.0, 1.0).unwrap();
        let k = ConstraintSet::boxed(vec![0.0], vec![cap]).unwrap();
        let grid = simulate_paths(&params, 4, 2000, seed).unwrap();
        let problem = dual::RobustProblem {
            wealth: 1.0,
            params: &params,
            grid: &grid,
            constraint: &k,
            running: Utility::Log,
            terminal: Utility::Log,
            family: dual::kernel_family(&k, &params, &[vec![-0.05], vec![-0.02], vec![0.02]], true).unwrap(),
        };
        let sol = dual::solve_robust_problem(&problem, &dual::DualConfig::default(), &BsdeConfig::default()).unwrap();
        let rep = sol.replication.unwrap();
        for m in 0..grid.paths {
            for n in 0..grid.steps {
                let h = rep.holdings.at(m, n)[0];
                prop_assert!(h >= -1e-12 && h <= cap + 1e-12, "H = {h} outside [0, {cap}]");
            }
        }
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), paths in 1usize..50) {
        let params = MarketParams::new(vec![0.1, 0.0], vec![vec![0.2, 0.0], vec![0.1, 0.3]], 1.0, 1.0).unwrap();
        let a = simulate_paths(&params, 3, paths, seed).unwrap();
        let b = simulate_paths(&params, 3, paths, seed).unwrap();
        let c = simulate_paths(&params, 3, paths, seed.wrapping_add(1)).unwrap();
        for m in 0..paths {
            prop_assert_eq!(a.price(m, 3), b.price(m, 3));
            prop_assert_ne!(a.price(m, 3), c.price(m, 3));
        }
    }
}
