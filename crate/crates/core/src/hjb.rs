//! Finite differences for the dual HJB equation of the rectangular
//! constraint example, solved backward in `u = log z`:
//!
//! `v_t + inf_a [½((b+a)/σ)² z² v_zz + z δ(a)] = 0`, `v(T, z) = Ũ^rm(z)`,
//!
//! with `δ(a) = a_hi a⁻ − a_lo a⁺` and `z² v_zz = v_uu − v_u`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// `Ũ^rm(y) = sup_{z>0}(−z^{−1/β} − z y)`, closed form from the first-order
/// condition `z = (βy)^{−β/(1+β)}`.
pub fn robust_log_conjugate(beta: f64, y: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid("market.beta", "β must be positive"));
    }
    if !(y > 0.0 && y.is_finite()) {
        return Err(invalid("y", format!("conjugate is infinite at y = {y}")));
    }
    let p = 1.0 / (1.0 + beta);
    Ok(-beta.powf(-beta * p) * (beta + 1.0) * y.powf(p))
}

/// Terminal values `Ũ^rm(z_j)` on a grid of positive points.
pub fn fenchel_legendre_transform(beta: f64, z: &[f64]) -> Result<Vec<f64>> {
    z.iter().map(|y| robust_log_conjugate(beta, *y)).collect()
}

/// Direct maximization of `−x^{−1/β} − x y` over a log-spaced grid followed
/// by golden-section refinement.
pub fn fenchel_legendre_grid_search(beta: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(invalid("y", format!("conjugate is infinite at y = {y}")));
    }
    let f = |lx: f64| {
        let x = lx.exp();
        -x.powf(-1.0 / beta) - x * y
    };
    let (lo, hi, n) = (-40.0, 40.0, 8001);
    let h = (hi - lo) / (n - 1) as f64;
    let best = (0..n)
        .map(|i| lo + i as f64 * h)
        .fold((lo, f64::NEG_INFINITY), |acc, lx| {
            let v = f(lx);
            if v > acc.1 {
                (lx, v)
            } else {
                acc
            }
        })
        .0;
    let (mut a, mut b) = (best - h, best + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(f(0.5 * (a + b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    pub nt: usize,
    pub a_lo: f64,
    pub a_hi: f64,
    pub scheme: Scheme,
    /// Points in the uniform part of the control grid.
    pub na: usize,
    /// Hard cap on |a|.
    pub a_cap: f64,
    pub force_zero: bool,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            z_min: (-5f64).exp(),
            z_max: 5f64.exp(),
            nz: 200,
            nt: 200,
            a_lo: -0.1,
            a_hi: 0.1,
            scheme: Scheme::Implicit,
            na: 41,
            a_cap: 10.0,
            force_zero: false,
        }
    }
}

/// Scalar market for the HJB example.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HjbMarket {
    pub b: f64,
    pub sigma: f64,
    pub beta: f64,
    pub horizon: f64,
}

/// Log-spaced z nodes, uniform time nodes and the truncated control grid.
#[derive(Debug, Clone, Serialize)]
pub struct Grid1D {
    pub z: Vec<f64>,
    pub times: Vec<f64>,
    pub a_min: f64,
    pub a_max: f64,
    pub controls: Vec<f64>,
}

impl Grid1D {
    pub fn new(cfg: &HjbConfig, market: &HjbMarket) -> Result<Self> {
        if !(cfg.z_min > 0.0 && cfg.z_max > cfg.z_min && cfg.z_max.is_finite()) {
            return Err(invalid("hjb.z_min", "need 0 < z_min < z_max < ∞"));
        }
        if cfg.nz < 3 || cfg.nt < 1 {
            return Err(invalid("hjb.nz", "need nz ≥ 3 and nt ≥ 1"));
        }
        if !(market.horizon > 0.0) {
            return Err(invalid("market.T", "horizon must be positive"));
        }
        if !(cfg.a_lo <= 0.0 && cfg.a_hi >= 0.0) || cfg.a_lo.is_nan() || cfg.a_hi.is_nan() {
            return Err(invalid("hjb.a_lo", "box must satisfy a_lo ≤ 0 ≤ a_hi"));
        }
        let (u0, u1) = (cfg.z_min.ln(), cfg.z_max.ln());
        let h = (u1 - u0) / (cfg.nz - 1) as f64;
        let z = (0..cfg.nz).map(|j| (u0 + j as f64 * h).exp()).collect();
        let dt = market.horizon / cfg.nt as f64;
        let times = (0..=cfg.nt).map(|n| n as f64 * dt).collect();
        let cap = cfg.a_cap.abs();
        let a_min = (cfg.a_lo - 2.0 * market.b.abs()).max(-cap);
        let a_max = (cfg.a_hi + 2.0 * market.b.abs()).min(cap);
        let mut controls = if cfg.force_zero {
            vec![0.0]
        } else {
            let na = cfg.na.max(2);
            let mut c: Vec<f64> = (0..na)
                .map(|i| a_min + (a_max - a_min) * i as f64 / (na - 1) as f64)
                .collect();
            c.extend([-market.b, 0.0, cfg.a_lo, cfg.a_hi]);
            c
        };
        controls.retain(|a| a.is_finite() && *a >= a_min - 1e-15 && *a <= a_max + 1e-15);
        controls.sort_by(f64::total_cmp);
        controls.dedup();
        Ok(Self {
            z,
            times,
            a_min,
            a_max,
            controls,
        })
    }

    pub fn log_step(&self) -> f64 {
        (self.z[self.z.len() - 1] / self.z[0]).ln() / (self.z.len() - 1) as f64
    }
}

/// `v(t_i, z_j)` and the minimizing control `a*(t_i, z_j)`.
#[derive(Debug, Clone, Serialize)]
pub struct DualValueSurface {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub a_star: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl DualValueSurface {
    pub fn initial(&self) -> &[f64] {
        &self.v[0]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.v[self.v.len() - 1]
    }
}

fn support_box(a: f64, a_lo: f64, a_hi: f64) -> f64 {
    if a < 0.0 {
        a_hi * -a
    } else if a > 0.0 {
        -a_lo * a
    } else {
        0.0
    }
}

struct Hamiltonian<'a> {
    market: &'a HjbMarket,
    a_lo: f64,
    a_hi: f64,
    a_min: f64,
    a_max: f64,
    controls: &'a [f64],
    force_zero: bool,
}

impl Hamiltonian<'_> {
    fn cost(&self, a: f64, curvature: f64, z: f64) -> f64 {
        let s = (self.market.b + a) / self.market.sigma;
        let pen = support_box(a, self.a_lo, self.a_hi);
        if pen.is_infinite() {
            return f64::INFINITY;
        }
        0.5 * s * s * curvature + z * pen
    }

    /// Minimizer of `½((b+a)/σ)² K + z δ(a)` over the control set.
    fn argmin(&self, curvature: f64, z: f64) -> f64 {
        if self.force_zero {
            return 0.0;
        }
        let mut best = (0.0, self.cost(0.0, curvature, z));
        let mut consider = |a: f64| {
            if a.is_finite() && a >= self.a_min && a <= self.a_max {
                let c = self.cost(a, curvature, z);
                if c < best.1 {
                    best = (a, c);
                }
            }
        };
        for &a in self.controls {
            consider(a);
        }
        if curvature > 0.0 {
            let s2 = self.market.sigma * self.market.sigma;
            let b = self.market.b;
            let pos = -b + z * self.a_lo * s2 / curvature;
            if pos > 0.0 {
                consider(pos);
            }
            let neg = -b + z * self.a_hi * s2 / curvature;
            if neg < 0.0 {
                consider(neg);
            }
            consider(pos.clamp(self.a_min, self.a_max));
            consider(neg.clamp(self.a_min, self.a_max));
        }
        best.0
    }
}

fn second_log_operator(v: &[f64], j: usize, h: f64) -> f64 {
    (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h) - (v[j + 1] - v[j - 1]) / (2.0 * h)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = upper[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / d;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Backward time stepping. Controls are frozen from the later slice; the
/// diffusion is implicit by default. Curvature vanishes at both ends of the
/// grid.
pub fn solve_hjb(grid: &Grid1D, market: &HjbMarket, cfg: &HjbConfig) -> Result<DualValueSurface> {
    if !(market.sigma > 0.0) {
        return Err(invalid("market.sigma", "σ must be positive"));
    }
    let nz = grid.z.len();
    let nt = grid.times.len() - 1;
    let h = grid.log_step();
    if h > 2.0 {
        return Err(invalid("hjb.nz", "log step above 2 breaks monotonicity of the stencil"));
    }
    let dt = market.horizon / nt as f64;
    let ham = Hamiltonian {
        market,
        a_lo: cfg.a_lo,
        a_hi: cfg.a_hi,
        a_min: grid.a_min,
        a_max: grid.a_max,
        controls: &grid.controls,
        force_zero: cfg.force_zero,
    };
    if cfg.scheme == Scheme::Explicit {
        let worst = grid
            .controls
            .iter()
            .chain(std::iter::once(&0.0))
            .map(|a| 0.5 * ((market.b + a) / market.sigma).powi(2))
            .fold(0.0, f64::max);
        let ratio = dt * worst * 2.0 / (h * h);
        if ratio > 1.0 {
            return Err(Error::CflViolation { ratio });
        }
    }

    let terminal = fenchel_legendre_transform(market.beta, &grid.z)?;
    let mut v = vec![Vec::new(); nt + 1];
    let mut a_star = vec![vec![0.0; nz]; nt + 1];
    v[nt] = terminal;
    let controls_for = |slice: &[f64]| -> Vec<f64> {
        (0..nz)
            .into_par_iter()
            .map(|j| {
                let k = if j == 0 || j == nz - 1 { 0.0 } else { second_log_operator(slice, j, h) };
                ham.argmin(k, grid.z[j])
            })
            .collect()
    };
    a_star[nt] = controls_for(&v[nt]);
    for n in (0..nt).rev() {
        let next = &v[n + 1];
        let a = controls_for(next);
        let diff: Vec<f64> = a.iter().map(|a| 0.5 * ((market.b + a) / market.sigma).powi(2)).collect();
        let source: Vec<f64> = (0..nz)
            .map(|j| grid.z[j] * support_box(a[j], cfg.a_lo, cfg.a_hi))
            .collect();
        let (lo_c, up_c) = (1.0 / (h * h) + 0.5 / h, 1.0 / (h * h) - 0.5 / h);
        let slice = match cfg.scheme {
            Scheme::Explicit => (0..nz)
                .map(|j| {
                    let op = if j == 0 || j == nz - 1 { 0.0 } else { diff[j] * second_log_operator(next, j, h) };
                    next[j] + dt * (op + source[j])
                })
                .collect(),
            Scheme::Implicit => {
                let mut lower = vec![0.0; nz];
                let mut diag = vec![1.0; nz];
                let mut upper = vec![0.0; nz];
                let mut rhs: Vec<f64> = (0..nz).map(|j| next[j] + dt * source[j]).collect();
                for j in 1..nz - 1 {
                    lower[j] = -dt * diff[j] * lo_c;
                    upper[j] = -dt * diff[j] * up_c;
                    diag[j] = 1.0 + dt * diff[j] * (lo_c + up_c);
                }
                thomas(&lower, &diag, &upper, &mut rhs);
                rhs
            }
        };
        v[n] = slice;
        a_star[n] = a;
    }
    if let Some(bad) = v.iter().flatten().position(|x| !x.is_finite()) {
        return Err(invalid("hjb", format!("non-finite value at node {}", bad)));
    }
    let warnings = convexity_warnings(&grid.z, &v, &grid.times, 1e-8);
    Ok(DualValueSurface {
        times: grid.times.clone(),
        z: grid.z.clone(),
        v,
        a_star,
        warnings,
    })
}

pub fn solve_hjb_config(cfg: &HjbConfig, market: &HjbMarket) -> Result<DualValueSurface> {
    let grid = Grid1D::new(cfg, market)?;
    solve_hjb(&grid, market, cfg)
}

/// Second divided differences in z below `−tol · scale`.
pub fn convexity_warnings(z: &[f64], v: &[Vec<f64>], times: &[f64], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    for (n, slice) in v.iter().enumerate() {
        let scale = slice.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for j in 1..z.len() - 1 {
            let left = (slice[j] - slice[j - 1]) / (z[j] - z[j - 1]);
            let right = (slice[j + 1] - slice[j]) / (z[j + 1] - z[j]);
            let dd = 2.0 * (right - left) / (z[j + 1] - z[j - 1]);
            if dd * (z[j + 1] - z[j - 1]).powi(2) < -tol * scale {
                out.push(format!("non-convex slice at t = {}, z = {}", times[n], z[j]));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub nz: usize,
    pub nt: usize,
    /// Sup-norm difference to the previous level on shared interior nodes.
    pub difference: Option<f64>,
    pub order: Option<f64>,
}

/// Sup-norm difference of `v(0, ·)` between a coarse surface and a finer
/// one whose z nodes contain the coarse nodes, over `|log z| ≤ interior`.
pub fn surface_difference(coarse: &DualValueSurface, fine: &DualValueSurface, interior: f64) -> Result<f64> {
    let nc = coarse.z.len();
    let nf = fine.z.len();
    if (nf - 1) % (nc - 1) != 0 {
        return Err(invalid("hjb.nz", "refinement must nest the coarse nodes"));
    }
    let stride = (nf - 1) / (nc - 1);
    let mut worst: f64 = 0.0;
    for j in 0..nc {
        if coarse.z[j].ln().abs() <= interior + 1e-12 {
            worst = worst.max((coarse.v[0][j] - fine.v[0][j * stride]).abs());
        }
    }
    Ok(worst)
}

/// Self-convergence under `nz → 2nz − 1`, `nt → 2nt`.
pub fn hjb_convergence_study(
    base: &HjbConfig,
    market: &HjbMarket,
    levels: usize,
    interior: f64,
) -> Result<Vec<ConvergenceRow>> {
    if levels < 3 {
        return Err(invalid("levels", "need at least three refinement levels"));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut prev: Option<DualValueSurface> = None;
    let mut cfg = base.clone();
    for _ in 0..levels {
        let surface = solve_hjb_config(&cfg, market)?;
        let difference = match &prev {
            Some(p) => Some(surface_difference(p, &surface, interior)?),
            None => None,
        };
        let order = match (rows.last().and_then(|r| r.difference), difference) {
            (Some(d1), Some(d2)) if d2 > 0.0 => Some((d1 / d2).log2()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            nz: cfg.nz,
            nt: cfg.nt,
            difference,
            order,
        });
        prev = Some(surface);
        cfg.nz = 2 * cfg.nz - 1;
        cfg.nt *= 2;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> HjbMarket {
        HjbMarket {
            b: 0.1,
            sigma: 0.2,
            beta: 1.0,
            horizon: 1.0,
        }
    }

    #[test]
    fn conjugate_beta_one() {
        for y in [0.01, 0.5, 1.0, 4.0, 100.0] {
            let v = robust_log_conjugate(1.0, y).unwrap();
            assert!((v + 2.0 * f64::sqrt(y)).abs() < 1e-12);
        }
        assert!(robust_log_conjugate(1.0, 0.0).is_err());
        assert!(robust_log_conjugate(1.0, -1.0).is_err());
    }

    #[test]
    fn conjugate_matches_grid_search() {
        for beta in [0.3, 1.0, 2.5, 10.0] {
            for y in [0.05, 0.3, 1.0, 3.0, 20.0] {
                let closed = robust_log_conjugate(beta, y).unwrap();
                let grid = fenchel_legendre_grid_search(beta, y).unwrap();
                assert!((closed - grid).abs() < 1e-6 * (1.0 + closed.abs()), "β={beta} y={y}");
            }
        }
    }

    #[test]
    fn conjugate_decreases_to_minus_infinity() {
        for beta in [0.5, 1.0, 4.0] {
            let vals: Vec<f64> = (0..40).map(|k| robust_log_conjugate(beta, 10f64.powf(k as f64 / 4.0)).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]));
            assert!(*vals.last().unwrap() < -100.0);
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        let cfg = HjbConfig { nz: 41, nt: 10, ..HjbConfig::default() };
        let s = solve_hjb_config(&cfg, &market()).unwrap();
        let exact = fenchel_legendre_transform(1.0, &s.z).unwrap();
        assert_eq!(s.terminal(), exact.as_slice());
    }

    #[test]
    fn forced_zero_matches_power_closed_form() {
        let m = market();
        let cfg = HjbConfig { nz: 101, nt: 100, force_zero: true, ..HjbConfig::default() };
        let s = solve_hjb_config(&cfg, &m).unwrap();
        let theta = m.b / m.sigma;
        let p = 0.5;
        let factor = (0.5 * p * (p - 1.0) * theta * theta).exp();
        for (z, v) in s.z.iter().zip(s.initial()) {
            if z.ln().abs() <= 2.0 {
                let exact = robust_log_conjugate(1.0, *z).unwrap() * factor;
                assert!((v - exact).abs() < 1e-2, "z={z} v={v} exact={exact}");
            }
        }
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn explicit_cfl_is_enforced() {
        let cfg = HjbConfig { nz: 401, nt: 2, scheme: Scheme::Explicit, ..HjbConfig::default() };
        assert!(matches!(solve_hjb_config(&cfg, &market()), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn explicit_and_implicit_agree() {
        let m = market();
        let imp = HjbConfig { nz: 41, nt: 400, ..HjbConfig::default() };
        let exp = HjbConfig { scheme: Scheme::Explicit, ..imp.clone() };
        let a = solve_hjb_config(&imp, &m).unwrap();
        let b = solve_hjb_config(&exp, &m).unwrap();
        let d = surface_difference(&a, &b, 2.0).unwrap();
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn zero_box_leaves_terminal_value() {
        let cfg = HjbConfig { nz: 41, nt: 20, a_lo: 0.0, a_hi: 0.0, ..HjbConfig::default() };
        let s = solve_hjb_config(&cfg, &market()).unwrap();
        for (a, b) in s.initial().iter().zip(s.terminal()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_box_equals_forced_zero() {
        let m = market();
        let forced = HjbConfig { nz: 81, nt: 40, force_zero: true, ..HjbConfig::default() };
        let wide = HjbConfig { force_zero: false, a_lo: -1e6, a_hi: 1e6, a_cap: 1e7, ..forced.clone() };
        let a = solve_hjb_config(&forced, &m).unwrap();
        let b = solve_hjb_config(&wide, &m).unwrap();
        assert!(surface_difference(&a, &b, 5.0).unwrap() < 1e-9);
    }

    #[test]
    fn larger_box_raises_value() {
        let m = market();
        let small = HjbConfig { nz: 81, nt: 40, a_lo: -0.02, a_hi: 0.02, ..HjbConfig::default() };
        let big = HjbConfig { a_lo: -0.2, a_hi: 0.2, ..small.clone() };
        let s = solve_hjb_config(&small, &m).unwrap();
        let b = solve_hjb_config(&big, &m).unwrap();
        for (x, y) in s.initial().iter().zip(b.initial()) {
            assert!(*y >= x - 1e-10);
        }
    }

    #[test]
    fn identical_grids_have_zero_difference() {
        let cfg = HjbConfig { nz: 21, nt: 10, ..HjbConfig::default() };
        let s = solve_hjb_config(&cfg, &market()).unwrap();
        assert_eq!(surface_difference(&s, &s, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn coarse_study_is_finite() {
        let cfg = HjbConfig { nz: 10, nt: 10, force_zero: true, ..HjbConfig::default() };
        let rows = hjb_convergence_study(&cfg, &market(), 3, 2.0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().filter_map(|r| r.difference).all(f64::is_finite));
    }

    #[test]
    fn invalid_grids_rejected() {
        let m = market();
        assert!(Grid1D::new(&HjbConfig { z_min: 0.0, ..HjbConfig::default() }, &m).is_err());
        assert!(Grid1D::new(&HjbConfig { a_lo: 0.1, ..HjbConfig::default() }, &m).is_err());
        assert!(hjb_convergence_study(&HjbConfig::default(), &m, 2, 2.0).is_err());
    }
}
